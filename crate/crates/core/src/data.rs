//! Datasets: ARFF (hierarchical multi-label dialect) and native text
//! formats, deterministic splits, standardization and a synthetic
//! hierarchical generator.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::LabelMatrix;
use crate::taxonomy::{ClassId, Taxonomy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Valid,
    Test,
}

impl SplitTag {
    pub const ALL: [SplitTag; 3] = [SplitTag::Train, SplitTag::Valid, SplitTag::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Valid => "valid",
            SplitTag::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitTag::Train),
            "valid" | "validation" => Ok(SplitTag::Valid),
            "test" => Ok(SplitTag::Test),
            other => Err(Error::InvalidArgument(format!(
                "unknown split `{other}` (expected train, valid or test)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub features: Array2<f64>,
    pub labels: LabelMatrix,
    pub taxonomy: Taxonomy,
    pub split: Option<Vec<SplitTag>>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Array2<f64>,
        labels: LabelMatrix,
        taxonomy: Taxonomy,
    ) -> Result<Self> {
        let (n, d) = features.dim();
        if n == 0 || d == 0 {
            return Err(Error::InvalidArgument(format!(
                "dataset needs at least one example and one feature (got {n}x{d})"
            )));
        }
        if labels.n_examples() != n {
            return Err(Error::Shape(format!(
                "{n} feature rows but {} label rows",
                labels.n_examples()
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite feature at row {}, column {}",
                pos / d,
                pos % d
            )));
        }
        labels.validate(&taxonomy)?;
        Ok(Self {
            name: name.into(),
            features,
            labels,
            taxonomy,
            split: None,
        })
    }

    pub fn n_examples(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.taxonomy.len()
    }

    /// Row indices carrying the given tag.
    pub fn indices(&self, tag: SplitTag) -> Result<Vec<usize>> {
        let tags = self.split.as_ref().ok_or_else(|| {
            Error::InvalidArgument(format!(
                "dataset `{}` has no split assigned; cannot select the {} split",
                self.name,
                tag.as_str()
            ))
        })?;
        Ok(tags
            .iter()
            .enumerate()
            .filter(|(_, &t)| t == tag)
            .map(|(i, _)| i)
            .collect())
    }

    /// Features and labels of the given rows.
    pub fn subset(&self, rows: &[usize]) -> (Array2<f64>, LabelMatrix) {
        (
            self.features.select(Axis(0), rows),
            self.labels.select_rows(rows),
        )
    }

    /// Most specific positive classes of an example.
    pub fn leaf_labels(&self, i: usize) -> Vec<ClassId> {
        let row = self.labels.row(i);
        self.labels
            .positives(i)
            .filter(|&c| {
                self.taxonomy
                    .children(ClassId(c))
                    .map(|ch| ch.iter().all(|k| row[k.0] != 1))
                    .unwrap_or(true)
            })
            .map(ClassId)
            .collect()
    }
}

// ---------------------------------------------------------------------------
// ARFF
// ---------------------------------------------------------------------------

enum Attribute {
    Numeric,
    Hierarchical(Vec<String>),
}

fn strip_keyword<'a>(line: &'a str, keyword: &str) -> Option<&'a str> {
    let head = line.get(..keyword.len())?;
    if head.eq_ignore_ascii_case(keyword) {
        let rest = &line[keyword.len()..];
        if rest.is_empty() || rest.starts_with(char::is_whitespace) {
            return Some(rest.trim_start());
        }
    }
    None
}

/// Splits `name rest` where the name may be quoted.
fn split_name(s: &str) -> Result<(&str, &str)> {
    let s = s.trim_start();
    match s.chars().next() {
        Some(q @ ('\'' | '"')) => {
            let end = s[1..]
                .find(q)
                .ok_or_else(|| Error::Parse(format!("unterminated quote in `{s}`")))?;
            Ok((&s[1..1 + end], s[end + 2..].trim_start()))
        }
        Some(_) => {
            let end = s.find(char::is_whitespace).unwrap_or(s.len());
            Ok((&s[..end], s[end..].trim_start()))
        }
        None => Err(Error::Parse("missing attribute name".into())),
    }
}

fn parse_attribute(rest: &str) -> Result<(String, Attribute)> {
    let (name, ty) = split_name(rest)?;
    let lower = ty.to_ascii_lowercase();
    if lower == "numeric" || lower == "real" || lower == "integer" {
        return Ok((name.to_string(), Attribute::Numeric));
    }
    if let Some(domain) = strip_keyword(ty, "hierarchical") {
        let paths: Vec<String> = domain
            .split(',')
            .map(|p| p.trim().to_string())
            .filter(|p| !p.is_empty())
            .collect();
        if paths.is_empty() {
            return Err(Error::Parse(format!(
                "hierarchical attribute `{name}` has an empty domain"
            )));
        }
        return Ok((name.to_string(), Attribute::Hierarchical(paths)));
    }
    Err(Error::Parse(format!(
        "attribute `{name}` has unsupported type `{ty}` (only numeric and hierarchical are accepted)"
    )))
}

/// Parses the hierarchical multi-label ARFF dialect: numeric attributes plus
/// exactly one `hierarchical` class attribute whose values are `@`-separated
/// label paths.
pub fn parse_arff_hmc(text: &str) -> Result<Dataset> {
    let mut name = String::from("arff");
    let mut attributes: Vec<(String, Attribute)> = Vec::new();
    let mut lines = text.lines().enumerate();
    let mut in_data = false;
    for (_, raw) in lines.by_ref() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        if let Some(rest) = strip_keyword(line, "@relation") {
            name = split_name(rest)?.0.to_string();
        } else if let Some(rest) = strip_keyword(line, "@attribute") {
            attributes.push(parse_attribute(rest)?);
        } else if strip_keyword(line, "@data").is_some() {
            in_data = true;
            break;
        } else {
            return Err(Error::Parse(format!("unexpected header line `{line}`")));
        }
    }
    if !in_data {
        return Err(Error::Parse("missing @data section".into()));
    }
    let class_positions: Vec<usize> = attributes
        .iter()
        .enumerate()
        .filter(|(_, (_, a))| matches!(a, Attribute::Hierarchical(_)))
        .map(|(i, _)| i)
        .collect();
    let class_pos = match class_positions.as_slice() {
        [p] => *p,
        [] => return Err(Error::Parse("missing hierarchical class attribute".into())),
        _ => {
            return Err(Error::Parse(
                "more than one hierarchical class attribute".into(),
            ))
        }
    };
    let taxonomy = match &attributes[class_pos].1 {
        Attribute::Hierarchical(paths) => Taxonomy::parse_hierarchy(paths, '/')?,
        Attribute::Numeric => unreachable!(),
    };
    let n_features = attributes.len() - 1;

    let mut feats: Vec<f64> = Vec::new();
    let mut sets: Vec<Vec<ClassId>> = Vec::new();
    let mut row = 0usize;
    for (lineno, raw) in lines {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        row += 1;
        if line.starts_with('{') {
            return Err(Error::Parse(format!(
                "line {}: sparse rows are not supported",
                lineno + 1
            )));
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != attributes.len() {
            return Err(Error::Parse(format!(
                "data row {row} (line {}): expected {} fields, found {}",
                lineno + 1,
                attributes.len(),
                fields.len()
            )));
        }
        for (k, f) in fields.iter().enumerate() {
            if k == class_pos {
                continue;
            }
            let v: f64 = f.parse().map_err(|_| {
                Error::Parse(format!(
                    "data row {row}: non-numeric value `{f}` for attribute `{}`",
                    attributes[k].0
                ))
            })?;
            feats.push(v);
        }
        let mut set = Vec::new();
        for path in fields[class_pos].split('@').map(str::trim) {
            let c = taxonomy.find(path).ok_or_else(|| {
                Error::Parse(format!("data row {row}: unknown label path `{path}`"))
            })?;
            set.push(c);
        }
        sets.push(set);
    }
    if sets.is_empty() {
        return Err(Error::Parse("no data rows".into()));
    }
    let features = Array2::from_shape_vec((sets.len(), n_features), feats)
        .expect("every row contributed n_features values");
    let labels = LabelMatrix::from_positive_sets(&sets, &taxonomy)?;
    Dataset::new(name, features, labels, taxonomy)
}

pub fn read_arff_hmc(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_arff_hmc(&text).map_err(|e| Error::data(path, e.to_string()))
}

// ---------------------------------------------------------------------------
// Native format
// ---------------------------------------------------------------------------

pub const FEATURES_FILE: &str = "features.csv";
pub const LABELS_FILE: &str = "labels.txt";
pub const HIERARCHY_FILE: &str = "hierarchy.txt";

fn parse_features_csv(text: &str) -> Result<Array2<f64>> {
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let before = values.len();
        for f in line.split(',') {
            let v: f64 = f.trim().parse().map_err(|_| {
                Error::Parse(format!(
                    "line {}: non-numeric feature `{}`",
                    lineno + 1,
                    f.trim()
                ))
            })?;
            values.push(v);
        }
        let w = values.len() - before;
        match width {
            None => width = Some(w),
            Some(expected) if expected != w => {
                return Err(Error::Parse(format!(
                    "line {}: expected {expected} columns, found {w}",
                    lineno + 1
                )))
            }
            _ => {}
        }
        rows += 1;
    }
    let width = width.ok_or_else(|| Error::Parse("features file is empty".into()))?;
    Ok(Array2::from_shape_vec((rows, width), values).expect("rectangular"))
}

fn parse_label_lines(text: &str, tax: &Taxonomy) -> Result<Vec<Vec<ClassId>>> {
    text.lines()
        .enumerate()
        .map(|(lineno, line)| {
            let line = line.trim();
            if line.is_empty() {
                return Err(Error::Labels(format!(
                    "line {}: example has no positive label",
                    lineno + 1
                )));
            }
            line.split(';')
                .map(|p| {
                    let p = p.trim();
                    tax.find(p).ok_or_else(|| {
                        Error::Parse(format!("line {}: unknown label path `{p}`", lineno + 1))
                    })
                })
                .collect()
        })
        .collect()
}

/// Assembles a dataset from the three native files.
pub fn parse_native(
    features_csv: impl AsRef<Path>,
    labels_file: impl AsRef<Path>,
    hierarchy_file: impl AsRef<Path>,
) -> Result<Dataset> {
    let (fp, lp) = (features_csv.as_ref(), labels_file.as_ref());
    let taxonomy = Taxonomy::from_file(hierarchy_file)?;
    let ftext = std::fs::read_to_string(fp).map_err(|e| Error::io(fp, e))?;
    let features = parse_features_csv(&ftext).map_err(|e| Error::data(fp, e.to_string()))?;
    let ltext = std::fs::read_to_string(lp).map_err(|e| Error::io(lp, e))?;
    let sets = parse_label_lines(&ltext, &taxonomy).map_err(|e| Error::data(lp, e.to_string()))?;
    if sets.len() != features.nrows() {
        return Err(Error::data(
            lp,
            format!(
                "{} label lines but {} feature rows",
                sets.len(),
                features.nrows()
            ),
        ));
    }
    let labels = LabelMatrix::from_positive_sets(&sets, &taxonomy)?;
    let name = fp
        .parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "native".into());
    Dataset::new(name, features, labels, taxonomy)
}

/// Reads `features.csv`, `labels.txt` and `hierarchy.txt` from a directory.
pub fn read_native_dir(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    parse_native(
        dir.join(FEATURES_FILE),
        dir.join(LABELS_FILE),
        dir.join(HIERARCHY_FILE),
    )
}

/// Writes the native triple; features use the shortest round-trip decimal
/// form, labels list the most specific positives.
pub fn emit_native(d: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut features = String::new();
    for row in d.features.outer_iter() {
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                features.push(',');
            }
            write!(features, "{v:?}").expect("write to string");
        }
        features.push('\n');
    }
    let mut labels = String::new();
    for i in 0..d.n_examples() {
        let names: Vec<&str> = d
            .leaf_labels(i)
            .into_iter()
            .map(|c| d.taxonomy.names()[c.0].as_str())
            .collect();
        labels.push_str(&names.join(";"));
        labels.push('\n');
    }
    for (file, body) in [
        (FEATURES_FILE, features),
        (LABELS_FILE, labels),
        (HIERARCHY_FILE, d.taxonomy.to_text()),
    ] {
        let p = dir.join(file);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Splits and standardization
// ---------------------------------------------------------------------------

pub const DEFAULT_SPLIT_RATIOS: [f64; 3] = [0.6, 0.2, 0.2];

/// Largest-remainder apportionment of `n` into the ratios.
fn apportion(n: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts = [0usize; 3];
    for k in 0..3 {
        // Guard against 0.6 * 10 = 6.000000000000001 style rounding.
        counts[k] = (exact[k] + 1e-9).floor() as usize;
    }
    let mut left = n.saturating_sub(counts.iter().sum());
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - counts[a] as f64;
        let fb = exact[b] - counts[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[k] += 1;
        left -= 1;
    }
    counts
}

/// Seeded train/valid/test assignment, stratified by top-level class.
pub fn split(d: &Dataset, ratios: [f64; 3], seed: u64) -> Result<Dataset> {
    if ratios.iter().any(|&r| r.is_nan() || r <= 0.0)
        || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::InvalidArgument(format!(
            "split ratios must be positive and sum to 1, got {ratios:?}"
        )));
    }
    let n = d.n_examples();
    let targets = apportion(n, &ratios);
    if let Some(k) = targets.iter().position(|&t| t == 0) {
        return Err(Error::InvalidArgument(format!(
            "{} split would receive no examples ({n} examples, ratios {ratios:?})",
            SplitTag::ALL[k].as_str()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let top = d.taxonomy.top_level();
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let row = d.labels.row(i);
        let g = top
            .iter()
            .copied()
            .find(|&c| row[c] == 1)
            .unwrap_or(usize::MAX);
        groups.entry(g).or_default().push(i);
    }
    // Spread every group evenly over the ordering, then deal the ordering
    // out so each split sees every group in proportion.
    let mut keyed: Vec<(f64, usize, usize)> = Vec::with_capacity(n);
    for (gid, (_, members)) in groups.iter_mut().enumerate() {
        members.shuffle(&mut rng);
        let g = members.len() as f64;
        for (r, &i) in members.iter().enumerate() {
            keyed.push(((r as f64 + 0.5) / g, gid, i));
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut tags = vec![SplitTag::Train; n];
    let mut assigned = [0usize; 3];
    for (p, &(_, _, i)) in keyed.iter().enumerate() {
        let progress = (p + 1) as f64 / n as f64;
        let k = (0..3)
            .filter(|&k| assigned[k] < targets[k])
            .max_by(|&a, &b| {
                let da = targets[a] as f64 * progress - assigned[a] as f64;
                let db = targets[b] as f64 * progress - assigned[b] as f64;
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("capacity remains while examples remain");
        assigned[k] += 1;
        tags[i] = SplitTag::ALL[k];
    }
    let mut out = d.clone();
    out.split = Some(tags);
    Ok(out)
}

/// Per-feature affine standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalization {
    pub fn apply(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.mean.len() {
            return Err(Error::Shape(format!(
                "normalization expects {} features, got {}",
                self.mean.len(),
                features.ncols()
            )));
        }
        let mean = Array1::from(self.mean.clone());
        let scale = Array1::from(self.scale.clone());
        Ok((features - &mean) / &scale)
    }
}

/// Standardizes with statistics from the train split (all rows when no
/// split is assigned). Zero-variance features pass through unchanged.
pub fn normalize(d: &Dataset) -> Result<(Dataset, Normalization)> {
    let rows: Vec<usize> = match &d.split {
        Some(_) => d.indices(SplitTag::Train)?,
        None => (0..d.n_examples()).collect(),
    };
    let dim = d.n_features();
    let mut mean = vec![0.0; dim];
    let mut scale = vec![1.0; dim];
    let n = rows.len() as f64;
    for k in 0..dim {
        let col = d.features.column(k);
        let m = rows.iter().map(|&i| col[i]).sum::<f64>() / n;
        let var = rows.iter().map(|&i| (col[i] - m).powi(2)).sum::<f64>() / n;
        if var > 0.0 {
            mean[k] = m;
            scale[k] = var.sqrt();
        }
    }
    let norm = Normalization { mean, scale };
    let mut out = d.clone();
    out.features = norm.apply(&d.features)?;
    Ok((out, norm))
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub levels: usize,
    pub branching: usize,
    pub examples_per_leaf: usize,
    pub feature_dim: usize,
    pub cluster_separation: f64,
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            branching: 3,
            examples_per_leaf: 150,
            feature_dim: 16,
            cluster_separation: 2.0,
            label_noise: 0.05,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.levels < 2 {
            return bad(format!(
                "levels must be >= 2 (the virtual root counts as one), got {}",
                self.levels
            ));
        }
        if self.branching < 2 {
            return bad(format!("branching must be >= 2, got {}", self.branching));
        }
        if self.examples_per_leaf == 0 || self.feature_dim == 0 {
            return bad("examples_per_leaf and feature_dim must be positive".into());
        }
        if !self.cluster_separation.is_finite() || self.cluster_separation <= 0.0 {
            return bad(format!(
                "cluster_separation must be positive, got {}",
                self.cluster_separation
            ));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return bad(format!(
                "label_noise must lie in [0, 0.5), got {}",
                self.label_noise
            ));
        }
        let classes: f64 = (1..self.levels)
            .map(|l| (self.branching as f64).powi(l as i32))
            .sum();
        if classes > 100_000.0 {
            return bad(format!("hierarchy would have {classes} classes"));
        }
        Ok(())
    }
}

fn unit_vector<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Complete `branching`-ary tree with `levels` levels, the virtual root
/// included. Every node carries a random offset of length
/// `separation * 2^(levels - 1 - level)`; a leaf's
/// cluster center is the sum of offsets along its root path, so siblings
/// share their parents' offsets and coarse classes are further apart than
/// fine ones. Examples are the center plus unit Gaussian noise; with
/// probability `label_noise` the label is moved to a sibling leaf.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut paths = Vec::new();
    let mut frontier = vec![String::new()];
    for _ in 1..cfg.levels {
        let mut next = Vec::new();
        for prefix in &frontier {
            for b in 1..=cfg.branching {
                let p = if prefix.is_empty() {
                    format!("{b}")
                } else {
                    format!("{prefix}/{b}")
                };
                next.push(p);
            }
        }
        paths.extend(next.iter().cloned());
        frontier = next;
    }
    let taxonomy = Taxonomy::parse_hierarchy(&paths, '/')?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let dim = cfg.feature_dim;
    let offsets: Vec<Vec<f64>> = taxonomy
        .class_ids()
        .map(|c| {
            let level = taxonomy.level(c).expect("valid id");
            let len = cfg.cluster_separation * 2f64.powi((cfg.levels - 1 - level) as i32);
            unit_vector(&mut rng, dim)
                .into_iter()
                .map(|x| x * len)
                .collect()
        })
        .collect();

    let leaves = taxonomy.leaves();
    let n = leaves.len() * cfg.examples_per_leaf;
    let mut features = Array2::zeros((n, dim));
    let mut sets = Vec::with_capacity(n);
    let mut row = 0;
    for &leaf in &leaves {
        let mut center = offsets[leaf.0].clone();
        for a in taxonomy.ancestors(leaf)? {
            for (c, o) in center.iter_mut().zip(&offsets[a.0]) {
                *c += o;
            }
        }
        let peers = match taxonomy.parent(leaf)? {
            Some(parent) => taxonomy.children(parent)?,
            None => taxonomy.top_level().iter().map(|&j| ClassId(j)).collect(),
        };
        let siblings: Vec<ClassId> = peers.into_iter().filter(|&s| s != leaf).collect();
        for _ in 0..cfg.examples_per_leaf {
            for k in 0..dim {
                let noise: f64 = StandardNormal.sample(&mut rng);
                features[[row, k]] = center[k] + noise;
            }
            let flip = rng.random::<f64>() < cfg.label_noise;
            let label = if flip {
                siblings[rng.random_range(0..siblings.len())]
            } else {
                leaf
            };
            sets.push(vec![label]);
            row += 1;
        }
    }
    let labels = LabelMatrix::from_positive_sets(&sets, &taxonomy)?;
    Dataset::new("synthetic", features, labels, taxonomy)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = "\
% comment
@RELATION 'toy'
@ATTRIBUTE f1 numeric
@ATTRIBUTE f2 NUMERIC
@ATTRIBUTE class hierarchical 1,1/2,3
@DATA
0.5,1.0,1/2
0.1,0.2,3
0.3,0.4,1@3
1.5,2.5,1
";

    #[test]
    fn arff_fixture() {
        let d = parse_arff_hmc(FIXTURE).unwrap();
        assert_eq!(d.name, "toy");
        assert_eq!(d.n_examples(), 4);
        assert_eq!(d.n_features(), 2);
        assert!(d.split.is_none());
        let t = &d.taxonomy;
        let row = d.labels.row(0);
        assert_eq!(row[t.find("1").unwrap().0], 1);
        assert_eq!(row[t.find("1/2").unwrap().0], 1);
        assert_eq!(row[t.find("3").unwrap().0], -1);
        assert_eq!(d.labels.positives(2).count(), 2);
    }

    #[test]
    fn arff_errors() {
        let unknown = FIXTURE.replace("0.1,0.2,3", "0.1,0.2,1/9");
        let err = parse_arff_hmc(&unknown).unwrap_err().to_string();
        assert!(err.contains("1/9") && err.contains("row 2"), "{err}");

        let text = FIXTURE.replace("0.1,0.2,3", "abc,0.2,3");
        assert!(parse_arff_hmc(&text)
            .unwrap_err()
            .to_string()
            .contains("non-numeric"));

        let text = FIXTURE.replace("@ATTRIBUTE class hierarchical 1,1/2,3\n", "");
        assert!(parse_arff_hmc(&text).is_err());

        let text = FIXTURE.replace("f2 NUMERIC", "f2 string");
        assert!(parse_arff_hmc(&text)
            .unwrap_err()
            .to_string()
            .contains("unsupported"));
    }

    #[test]
    fn apportion_exact() {
        assert_eq!(apportion(10, &[0.6, 0.2, 0.2]), [6, 2, 2]);
        assert_eq!(apportion(7, &[0.6, 0.2, 0.2]).iter().sum::<usize>(), 7);
    }

    fn small() -> Dataset {
        synth_generate(&SynthConfig {
            examples_per_leaf: 15,
            feature_dim: 4,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn split_counts_and_determinism() {
        let d = synth_generate(&SynthConfig {
            levels: 3,
            branching: 2,
            examples_per_leaf: 3,
            feature_dim: 2,
            ..SynthConfig::default()
        })
        .unwrap();
        // 4 leaves x 3 = 12 examples; take 10 of them.
        let rows: Vec<usize> = (0..10).collect();
        let (f, l) = d.subset(&rows);
        let d10 = Dataset::new("ten", f, l, d.taxonomy.clone()).unwrap();
        let s = split(&d10, [0.6, 0.2, 0.2], 3).unwrap();
        let counts: Vec<usize> = SplitTag::ALL
            .iter()
            .map(|&t| s.indices(t).unwrap().len())
            .collect();
        assert_eq!(counts, vec![6, 2, 2]);
        assert_eq!(s.split, split(&d10, [0.6, 0.2, 0.2], 3).unwrap().split);
        assert!(split(&d10, [0.6, 0.2, 0.1], 3).is_err());
        assert!(split(&d10, [0.98, 0.01, 0.01], 3).is_err());
    }

    #[test]
    fn split_is_stratified() {
        let s = split(&small(), [0.6, 0.2, 0.2], 9).unwrap();
        for &top in s.taxonomy.top_level() {
            let in_test = s
                .indices(SplitTag::Test)
                .unwrap()
                .into_iter()
                .filter(|&i| s.labels.row(i)[top] == 1)
                .count();
            // 45 examples per top-level class, 20% of them is 9.
            assert!((8..=10).contains(&in_test), "{in_test}");
        }
    }

    #[test]
    fn normalize_uses_train_only() {
        let mut d = split(&small(), [0.6, 0.2, 0.2], 2).unwrap();
        d.features.column_mut(1).fill(3.5);
        let (n, stats) = normalize(&d).unwrap();
        assert!(n.features.column(1).iter().all(|&v| v == 3.5));
        assert_eq!(stats.scale[1], 1.0);
        let train = n.indices(SplitTag::Train).unwrap();
        for k in (0..n.n_features()).filter(|&k| k != 1) {
            let m: f64 =
                train.iter().map(|&i| n.features[[i, k]]).sum::<f64>() / train.len() as f64;
            assert!(m.abs() < 1e-12);
        }
        let valid = n.indices(SplitTag::Valid).unwrap();
        let vm: f64 = valid.iter().map(|&i| n.features[[i, 0]]).sum::<f64>() / valid.len() as f64;
        assert!(vm.abs() > 1e-6);
    }

    #[test]
    fn synth_shape_and_determinism() {
        let cfg = SynthConfig {
            levels: 3,
            branching: 2,
            examples_per_leaf: 4,
            feature_dim: 3,
            ..SynthConfig::default()
        };
        let d = synth_generate(&cfg).unwrap();
        assert_eq!(d.n_classes(), 6);
        assert_eq!(d.taxonomy.leaves().len(), 4);
        assert_eq!(d.n_examples(), 16);
        assert_eq!(d, synth_generate(&cfg).unwrap());
        let bad = SynthConfig {
            label_noise: 0.6,
            ..cfg.clone()
        };
        assert!(synth_generate(&bad).is_err());
        let bad = SynthConfig { levels: 1, ..cfg };
        assert!(synth_generate(&bad).is_err());
    }

    #[test]
    fn native_round_trip() {
        let d = small();
        let dir = tempfile::tempdir().unwrap();
        emit_native(&d, dir.path()).unwrap();
        let back = read_native_dir(dir.path()).unwrap();
        assert_eq!(back.features, d.features);
        assert_eq!(back.labels, d.labels);
        assert_eq!(back.taxonomy, d.taxonomy);
    }

    #[test]
    fn native_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path();
        std::fs::write(p.join(HIERARCHY_FILE), "a\na/b\nc\n").unwrap();
        std::fs::write(p.join(FEATURES_FILE), "1,2\n3,4\n5,6\n").unwrap();
        std::fs::write(p.join(LABELS_FILE), "a/b\nc\na;c\n").unwrap();
        assert_eq!(read_native_dir(p).unwrap().n_examples(), 3);

        std::fs::write(p.join(LABELS_FILE), "a/b\nc\n").unwrap();
        assert!(read_native_dir(p)
            .unwrap_err()
            .to_string()
            .contains("2 label lines"));

        std::fs::write(p.join(LABELS_FILE), "a/b\n\nc\n").unwrap();
        assert!(read_native_dir(p).is_err());

        std::fs::write(p.join(LABELS_FILE), "a/b\nz\nc\n").unwrap();
        assert!(read_native_dir(p).unwrap_err().to_string().contains("`z`"));
    }
}
