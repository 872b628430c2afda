//! Class hierarchy: level map, children map and ancestor/LCA/height queries.
//!
//! Classes are identified by their full path (`"1/2/5"`). Every distinct path
//! prefix becomes a class, and ids are assigned in component-wise
//! lexicographic order of the paths, so parents always precede their
//! children. Top-level classes hang off an implicit virtual root at level 0
//! that is never scored.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

/// Index of a scored class, `0..C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassId(pub usize);

impl ClassId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A node of the hierarchy: either a class or the virtual root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Node {
    Root,
    Class(ClassId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    names: Vec<String>,
    separator: char,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    level: Vec<usize>,
    height: Vec<usize>,
    by_level: Vec<Vec<usize>>,
}

impl Taxonomy {
    /// Builds a taxonomy from separator-delimited paths. Missing intermediate
    /// prefixes are created.
    pub fn parse_hierarchy<S: AsRef<str>>(paths: &[S], separator: char) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::EmptyHierarchy);
        }
        let mut explicit = BTreeSet::new();
        let mut all: BTreeSet<Vec<String>> = BTreeSet::new();
        for raw in paths {
            let raw = raw.as_ref();
            let parts = split_path(raw, separator)?;
            if !explicit.insert(parts.clone()) {
                return Err(Error::DuplicatePath(raw.to_string()));
            }
            for k in 1..=parts.len() {
                all.insert(parts[..k].to_vec());
            }
        }

        let ordered: Vec<Vec<String>> = all.into_iter().collect();
        let index_of = |p: &[String]| {
            ordered
                .binary_search_by(|q| q.as_slice().cmp(p))
                .expect("prefix closure contains every parent")
        };

        let count = ordered.len();
        let mut parent = vec![None; count];
        let mut children = vec![Vec::new(); count];
        let mut level = vec![0; count];
        for (id, parts) in ordered.iter().enumerate() {
            level[id] = parts.len();
            if parts.len() > 1 {
                let p = index_of(&parts[..parts.len() - 1]);
                parent[id] = Some(p);
                children[p].push(id);
            }
        }

        let names = ordered
            .iter()
            .map(|parts| parts.join(&separator.to_string()))
            .collect();
        Ok(Self::assemble(names, separator, parent, children, level))
    }

    /// Reads a hierarchy file: one path per line, `#` comments and blank
    /// lines ignored, `/` separator.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| Error::data(path, e.to_string()))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect();
        Self::parse_hierarchy(&lines, '/')
    }

    fn assemble(
        names: Vec<String>,
        separator: char,
        parent: Vec<Option<usize>>,
        children: Vec<Vec<usize>>,
        level: Vec<usize>,
    ) -> Self {
        let count = names.len();
        // Children always carry larger ids than their parent, so a reverse
        // sweep visits every subtree before its root.
        let mut height = vec![0; count];
        for id in (0..count).rev() {
            height[id] = children[id]
                .iter()
                .map(|&c| height[c] + 1)
                .max()
                .unwrap_or(0);
        }
        let max_level = level.iter().copied().max().unwrap_or(0);
        let mut by_level = vec![Vec::new(); max_level];
        for (id, &l) in level.iter().enumerate() {
            by_level[l - 1].push(id);
        }
        Self {
            names,
            separator,
            parent,
            children,
            level,
            height,
            by_level,
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn separator(&self) -> char {
        self.separator
    }

    pub fn class_ids(&self) -> impl Iterator<Item = ClassId> {
        (0..self.len()).map(ClassId)
    }

    pub fn check(&self, c: ClassId) -> Result<usize> {
        if c.0 < self.len() {
            Ok(c.0)
        } else {
            Err(Error::InvalidClass {
                id: c.0,
                count: self.len(),
            })
        }
    }

    pub fn name(&self, c: ClassId) -> Result<&str> {
        Ok(&self.names[self.check(c)?])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Looks a class up by its full path.
    pub fn find(&self, path: &str) -> Option<ClassId> {
        self.names.iter().position(|n| n == path).map(ClassId)
    }

    pub fn parent(&self, c: ClassId) -> Result<Option<ClassId>> {
        Ok(self.parent[self.check(c)?].map(ClassId))
    }

    pub fn children(&self, c: ClassId) -> Result<Vec<ClassId>> {
        Ok(self.children[self.check(c)?]
            .iter()
            .copied()
            .map(ClassId)
            .collect())
    }

    /// Depth of the class; top-level classes are at level 1.
    pub fn level(&self, c: ClassId) -> Result<usize> {
        Ok(self.level[self.check(c)?])
    }

    /// Level of every class, indexed by class id.
    pub fn levels(&self) -> &[usize] {
        &self.level
    }

    pub fn max_level(&self) -> usize {
        self.by_level.len()
    }

    pub fn is_leaf(&self, c: ClassId) -> Result<bool> {
        Ok(self.children[self.check(c)?].is_empty())
    }

    pub fn leaves(&self) -> Vec<ClassId> {
        (0..self.len())
            .filter(|&i| self.children[i].is_empty())
            .map(ClassId)
            .collect()
    }

    pub fn top_level(&self) -> &[usize] {
        &self.by_level[0]
    }

    /// Strict ancestors, nearest first, excluding the virtual root.
    pub fn ancestors(&self, c: ClassId) -> Result<Vec<ClassId>> {
        let mut out = Vec::new();
        let mut cur = self.parent[self.check(c)?];
        while let Some(p) = cur {
            out.push(ClassId(p));
            cur = self.parent[p];
        }
        Ok(out)
    }

    pub(crate) fn parent_index(&self, c: usize) -> Option<usize> {
        self.parent[c]
    }

    /// Class ids bucketed by level; bucket `k` holds level `k + 1`.
    pub fn levels_index(&self) -> &[Vec<usize>] {
        &self.by_level
    }

    /// Deepest node that is an ancestor-or-self of both classes.
    pub fn lca(&self, a: ClassId, b: ClassId) -> Result<Node> {
        let mut a = Some(self.check(a)?);
        let mut b = Some(self.check(b)?);
        let level = |n: Option<usize>| n.map_or(0, |i| self.level[i]);
        while level(a) > level(b) {
            a = a.and_then(|i| self.parent[i]);
        }
        while level(b) > level(a) {
            b = b.and_then(|i| self.parent[i]);
        }
        while a != b {
            a = a.and_then(|i| self.parent[i]);
            b = b.and_then(|i| self.parent[i]);
        }
        Ok(a.map_or(Node::Root, |i| Node::Class(ClassId(i))))
    }

    /// Edges on the longest downward path from `v` to a leaf of its subtree.
    pub fn node_height(&self, v: Node) -> Result<usize> {
        match v {
            Node::Root => Ok(self.max_level()),
            Node::Class(c) => Ok(self.height[self.check(c)?]),
        }
    }

    /// The class paths in id order; parsing them reproduces this taxonomy.
    pub fn to_paths(&self) -> Vec<String> {
        self.names.clone()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for n in &self.names {
            s.push_str(n);
            s.push('\n');
        }
        s
    }
}

fn split_path(raw: &str, separator: char) -> Result<Vec<String>> {
    if raw.is_empty() {
        return Err(Error::Parse("empty class path".into()));
    }
    let parts: Vec<String> = raw.split(separator).map(str::to_string).collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Parse(format!(
            "empty component in class path `{raw}`"
        )));
    }
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tax(paths: &[&str]) -> Taxonomy {
        Taxonomy::parse_hierarchy(paths, '/').unwrap()
    }

    fn id(t: &Taxonomy, p: &str) -> ClassId {
        t.find(p).unwrap()
    }

    #[test]
    fn parse_levels_and_parents() {
        let t = tax(&["1", "1/2", "1/3"]);
        assert_eq!(t.len(), 3);
        assert_eq!(t.level(id(&t, "1")).unwrap(), 1);
        assert_eq!(t.level(id(&t, "1/2")).unwrap(), 2);
        assert_eq!(t.parent(id(&t, "1/2")).unwrap(), Some(id(&t, "1")));
    }

    #[test]
    fn missing_prefix_is_created() {
        let t = tax(&["a/b"]);
        assert_eq!(t.names(), &["a".to_string(), "a/b".to_string()]);
        assert_eq!(t.level(id(&t, "a")).unwrap(), 1);
    }

    #[test]
    fn duplicate_and_empty_rejected() {
        let err = Taxonomy::parse_hierarchy(&["x", "x"], '/').unwrap_err();
        assert!(matches!(err, Error::DuplicatePath(ref p) if p == "x"));
        let empty: [&str; 0] = [];
        assert!(matches!(
            Taxonomy::parse_hierarchy(&empty, '/'),
            Err(Error::EmptyHierarchy)
        ));
        assert!(Taxonomy::parse_hierarchy(&["a//b"], '/').is_err());
    }

    #[test]
    fn lca_cases() {
        let t = tax(&["1/2", "1/3", "4"]);
        let (a, b, c) = (id(&t, "1/2"), id(&t, "1/3"), id(&t, "4"));
        assert_eq!(t.lca(a, b).unwrap(), Node::Class(id(&t, "1")));
        assert_eq!(t.lca(a, a).unwrap(), Node::Class(a));
        assert_eq!(t.lca(a, c).unwrap(), Node::Root);
        assert!(t.lca(a, ClassId(17)).is_err());
    }

    #[test]
    fn heights() {
        let t = tax(&["1/2/3/4", "1/5", "6"]);
        assert_eq!(t.node_height(Node::Class(id(&t, "1/2/3/4"))).unwrap(), 0);
        assert_eq!(t.node_height(Node::Class(id(&t, "1/2/3"))).unwrap(), 1);
        assert_eq!(t.node_height(Node::Class(id(&t, "1"))).unwrap(), 3);
        assert_eq!(t.node_height(Node::Root).unwrap(), 4);
        assert!(t.node_height(Node::Class(ClassId(99))).is_err());
    }

    #[test]
    fn ancestors_nearest_first() {
        let t = tax(&["1/2/5"]);
        assert_eq!(
            t.ancestors(id(&t, "1/2/5")).unwrap(),
            vec![id(&t, "1/2"), id(&t, "1")]
        );
        assert!(t.ancestors(id(&t, "1")).unwrap().is_empty());
        assert!(t.ancestors(ClassId(3)).is_err());
    }

    #[test]
    fn levels_buckets() {
        let t = tax(&["1", "1/2", "3"]);
        assert_eq!(
            t.levels_index(),
            &[vec![id(&t, "1").0, id(&t, "3").0], vec![id(&t, "1/2").0]]
        );
        let single = tax(&["only"]);
        assert_eq!(single.levels_index(), &[vec![0]]);
    }

    #[test]
    fn text_file_comments() {
        let t = Taxonomy::from_text("# header\n1\n\n1/2\n  3  \n").unwrap();
        assert_eq!(t.len(), 3);
    }
}
