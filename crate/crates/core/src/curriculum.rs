//! Class-based curriculum selection over hierarchically constrained losses.
//!
//! The curriculum objective of a selection `s` is
//! `max(sum_j s_j * L[j], C - |s| + E)` where `L[j]` is the total constrained
//! loss of class `j` and `E` the total constrained 0-1 loss. The curriculum
//! loss is its minimum over `s`. Because the first term only depends on which
//! classes are picked through their sum, an optimal `s` always selects the
//! `K` classes with the smallest `L`, so the minimum is found by scanning
//! prefix lengths after one sort.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{
    hier_transform, hier_transform_backward, zero_one_loss, BaseLoss, GradRouting, Scope,
};
use crate::matrix::{check_same_shape, LabelMatrix, LossSurface, ScoreMatrix};
use crate::taxonomy::Taxonomy;

/// Largest class count the exhaustive oracle accepts.
pub const BRUTE_FORCE_MAX_CLASSES: usize = 20;

/// Binary class-inclusion vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionVector(Vec<bool>);

impl SelectionVector {
    pub fn all(c: usize) -> Self {
        Self(vec![true; c])
    }

    pub fn none(c: usize) -> Self {
        Self(vec![false; c])
    }

    pub fn from_bools(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn is_selected(&self, j: usize) -> bool {
        self.0[j]
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn selected(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(j, _)| j)
    }

    pub fn as_weights(&self) -> Vec<f64> {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassLossAggregate {
    /// Column sums of the constrained loss surface.
    pub per_class: Vec<f64>,
    /// Total constrained 0-1 loss.
    pub e_h_total: f64,
}

impl ClassLossAggregate {
    pub fn new(per_class: Vec<f64>, e_h_total: f64) -> Self {
        Self {
            per_class,
            e_h_total,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.per_class.len()
    }

    /// Divides the class losses by the example count.
    pub fn per_example_mean(mut self, n: usize) -> Self {
        let n = n.max(1) as f64;
        for v in &mut self.per_class {
            *v /= n;
        }
        self
    }
}

/// Column sums of `lh` and the full sum of `e_h`, in row order.
pub fn aggregate_class_losses(lh: &LossSurface, e_h: &LossSurface) -> Result<ClassLossAggregate> {
    check_same_shape(
        "constrained loss vs constrained 0-1 loss",
        lh.shape(),
        e_h.shape(),
    )?;
    let (n, c) = lh.shape();
    let mut per_class = vec![0.0; c];
    let values = lh.values();
    for i in 0..n {
        for (j, acc) in per_class.iter_mut().enumerate() {
            *acc += values[[i, j]];
        }
    }
    let mut e_h_total = 0.0;
    for row in e_h.values().outer_iter() {
        for &v in row {
            e_h_total += v;
        }
    }
    Ok(ClassLossAggregate {
        per_class,
        e_h_total,
    })
}

pub fn curriculum_objective(
    s: &SelectionVector,
    agg: &ClassLossAggregate,
    c: usize,
) -> Result<f64> {
    if s.len() != agg.n_classes() || c != s.len() {
        return Err(Error::Shape(format!(
            "selection has {} entries, aggregate {}, class count {c}",
            s.len(),
            agg.n_classes()
        )));
    }
    let selected: f64 = s.selected().map(|j| agg.per_class[j]).sum();
    let penalty = (c - s.count()) as f64 + agg.e_h_total;
    Ok(selected.max(penalty))
}

/// Exhaustive minimum over all `2^C` selections. Ties prefer more selected
/// classes, then the lexicographically smallest vector.
pub fn brute_force_select(agg: &ClassLossAggregate, c: usize) -> Result<(SelectionVector, f64)> {
    if c > BRUTE_FORCE_MAX_CLASSES {
        return Err(Error::InvalidArgument(format!(
            "exhaustive selection supports at most {BRUTE_FORCE_MAX_CLASSES} classes, got {c}"
        )));
    }
    if agg.n_classes() != c {
        return Err(Error::Shape(format!(
            "aggregate has {} classes, expected {c}",
            agg.n_classes()
        )));
    }
    // Bit (c - 1 - j) of the mask holds s_j, so integer order on masks is
    // lexicographic order on vectors.
    let decode =
        |mask: u32| -> Vec<bool> { (0..c).map(|j| mask >> (c - 1 - j) & 1 == 1).collect() };
    let mut best: Option<(f64, usize, u32)> = None;
    for mask in 0..(1u32 << c) {
        let s = SelectionVector(decode(mask));
        let value = curriculum_objective(&s, agg, c)?;
        let size = mask.count_ones() as usize;
        let better = match best {
            None => true,
            Some((bv, bs, _)) => value < bv || (value == bv && size > bs),
        };
        if better {
            best = Some((value, size, mask));
        }
    }
    let (value, _, mask) = best.expect("at least one selection");
    Ok((SelectionVector(decode(mask)), value))
}

/// How the selection vector is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionRule {
    /// Prefix length minimizing the curriculum objective.
    #[default]
    OptimalPrefix,
    /// Smallest `K` with `prefix(K) > thresh + 1 - K`; selects the `K - 1`
    /// classes ranked before it.
    PaperThreshold { thresh: Option<f64> },
}

/// Classes in ascending order of aggregated loss, ties by class id.
pub fn sorted_by_loss(agg: &ClassLossAggregate) -> Vec<usize> {
    let mut order: Vec<usize> = (0..agg.n_classes()).collect();
    order.sort_by(|&a, &b| {
        agg.per_class[a]
            .total_cmp(&agg.per_class[b])
            .then(a.cmp(&b))
    });
    order
}

/// Result of the prefix scan.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixChoice {
    pub selection: SelectionVector,
    pub k: usize,
    pub objective: f64,
}

/// Scans every prefix length and keeps the minimizing one (largest `K` on
/// ties).
pub fn optimal_prefix(agg: &ClassLossAggregate) -> PrefixChoice {
    let c = agg.n_classes();
    let order = sorted_by_loss(agg);
    let mut prefix = 0.0;
    let mut best_k = 0;
    let mut best = (c as f64 + agg.e_h_total).max(0.0);
    for (k, &j) in order.iter().enumerate() {
        prefix += agg.per_class[j];
        let kk = k + 1;
        let value = prefix.max((c - kk) as f64 + agg.e_h_total);
        if value <= best {
            best = value;
            best_k = kk;
        }
    }
    let mut bits = vec![false; c];
    for &j in &order[..best_k] {
        bits[j] = true;
    }
    PrefixChoice {
        selection: SelectionVector(bits),
        k: best_k,
        objective: best,
    }
}

fn paper_threshold(agg: &ClassLossAggregate, thresh: f64) -> SelectionVector {
    let c = agg.n_classes();
    let order = sorted_by_loss(agg);
    let mut prefix = 0.0;
    let mut k = c + 1;
    for (idx, &j) in order.iter().enumerate() {
        prefix += agg.per_class[j];
        let kk = idx + 1;
        if prefix > thresh + 1.0 - kk as f64 {
            k = kk;
            break;
        }
    }
    let mut bits = vec![false; c];
    // 1-based rank r is selected when r < K.
    for &j in order.iter().take(k - 1) {
        bits[j] = true;
    }
    SelectionVector(bits)
}

pub fn select_classes(
    agg: &ClassLossAggregate,
    c: usize,
    rule: SelectionRule,
) -> Result<SelectionVector> {
    if agg.n_classes() != c {
        return Err(Error::Shape(format!(
            "aggregate has {} classes, expected {c}",
            agg.n_classes()
        )));
    }
    match rule {
        SelectionRule::OptimalPrefix => Ok(optimal_prefix(agg).selection),
        SelectionRule::PaperThreshold { thresh: Some(t) } => Ok(paper_threshold(agg, t)),
        SelectionRule::PaperThreshold { thresh: None } => Err(Error::InvalidArgument(
            "the paper-threshold selection rule needs an explicit thresh; pass one or use optimal-prefix"
                .to_string(),
        )),
    }
}

/// Settings of the combined curriculum pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HclConfig {
    /// Hierarchical transform scope; `None` leaves losses untransformed.
    pub transform: Option<Scope>,
    /// Run class selection; when false every class is selected.
    pub curriculum: bool,
    pub rule: SelectionRule,
    pub decision_threshold: f64,
    /// Divide class losses by the example count before selection.
    pub normalize_class_losses: bool,
}

impl Default for HclConfig {
    fn default() -> Self {
        Self {
            transform: Some(Scope::AllShallower),
            curriculum: true,
            rule: SelectionRule::OptimalPrefix,
            decision_threshold: crate::losses::DEFAULT_DECISION_THRESHOLD,
            normalize_class_losses: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HclOutput {
    /// Curriculum objective of the chosen selection.
    pub objective: f64,
    /// `sum_j s_j * L[j]`, the differentiated branch.
    pub selected_loss: f64,
    pub selection: SelectionVector,
    /// d(selected_loss) / d(base loss element).
    pub weights: Array2<f64>,
    pub aggregate: ClassLossAggregate,
    pub routing: GradRouting,
    pub constrained: LossSurface,
    pub base_total: f64,
    pub zero_one_total: f64,
}

fn maybe_transform(
    surface: LossSurface,
    tax: &Taxonomy,
    scope: Option<Scope>,
) -> Result<(LossSurface, GradRouting)> {
    match scope {
        Some(scope) => hier_transform(&surface, tax, scope),
        None => {
            let (n, c) = surface.shape();
            if c != tax.len() {
                return Err(Error::Shape(format!(
                    "loss surface has {c} columns, taxonomy has {} classes",
                    tax.len()
                )));
            }
            Ok((surface, GradRouting::identity(n, c)))
        }
    }
}

/// Full pipeline on a set of examples. When `selection` is given it is used
/// as-is instead of being recomputed.
pub fn hcl_loss_with(
    y: &LabelMatrix,
    scores: &ScoreMatrix,
    base: BaseLoss,
    tax: &Taxonomy,
    cfg: &HclConfig,
    selection: Option<&SelectionVector>,
) -> Result<HclOutput> {
    let c = tax.len();
    let base_surface = base.surface(y, scores)?;
    let base_total = base_surface.total();
    let (constrained, routing) = maybe_transform(base_surface, tax, cfg.transform)?;
    let zero_one = zero_one_loss(y, scores, cfg.decision_threshold)?;
    let zero_one_total = zero_one.total();
    let (e_h, _) = maybe_transform(zero_one, tax, cfg.transform)?;
    let mut aggregate = aggregate_class_losses(&constrained, &e_h)?;
    if cfg.normalize_class_losses {
        aggregate = aggregate.per_example_mean(y.n_examples());
    }

    let selection = match selection {
        Some(s) => {
            if s.len() != c {
                return Err(Error::Shape(format!(
                    "selection has {} entries, taxonomy {c}",
                    s.len()
                )));
            }
            s.clone()
        }
        None if cfg.curriculum => select_classes(&aggregate, c, cfg.rule)?,
        None => SelectionVector::all(c),
    };
    let objective = curriculum_objective(&selection, &aggregate, c)?;
    let selected_loss: f64 = selection.selected().map(|j| aggregate.per_class[j]).sum();

    let n = y.n_examples();
    let scale = if cfg.normalize_class_losses {
        1.0 / n.max(1) as f64
    } else {
        1.0
    };
    let w = selection.as_weights();
    let upstream = Array2::from_shape_fn((n, c), |(_, j)| w[j] * scale);
    let weights = hier_transform_backward(&routing, &upstream)?;

    Ok(HclOutput {
        objective,
        selected_loss,
        selection,
        weights,
        aggregate,
        routing,
        constrained,
        base_total,
        zero_one_total,
    })
}

/// Full pipeline with selection recomputed from the given examples.
pub fn hcl_loss(
    y: &LabelMatrix,
    scores: &ScoreMatrix,
    base: BaseLoss,
    tax: &Taxonomy,
    cfg: &HclConfig,
) -> Result<HclOutput> {
    hcl_loss_with(y, scores, base, tax, cfg, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn agg(l: &[f64], e: f64) -> ClassLossAggregate {
        ClassLossAggregate::new(l.to_vec(), e)
    }

    #[test]
    fn aggregate_sums() {
        let z = LossSurface::new(Array2::zeros((2, 3))).unwrap();
        let a = aggregate_class_losses(&z, &z).unwrap();
        assert_eq!(a.per_class, vec![0.0; 3]);
        assert_eq!(a.e_h_total, 0.0);

        let lh = LossSurface::new(array![[0.2, 0.0], [0.3, 0.0]]).unwrap();
        let eh = LossSurface::new(array![[1.0, 1.0], [1.0, 0.0]]).unwrap();
        let a = aggregate_class_losses(&lh, &eh).unwrap();
        assert!((a.per_class[0] - 0.5).abs() < 1e-15);
        assert_eq!(a.e_h_total, 3.0);

        let bad = LossSurface::new(Array2::zeros((3, 2))).unwrap();
        assert!(aggregate_class_losses(&lh, &bad).is_err());
    }

    #[test]
    fn objective_cases() {
        let a = agg(&[0.1, 0.4, 2.0], 1.0);
        let all = curriculum_objective(&SelectionVector::all(3), &a, 3).unwrap();
        assert!((all - 2.5).abs() < 1e-12);
        let none = curriculum_objective(&SelectionVector::none(3), &a, 3).unwrap();
        assert_eq!(none, 4.0);
        let s = SelectionVector::from_bools(vec![true, true, false]);
        assert_eq!(curriculum_objective(&s, &a, 3).unwrap(), 2.0);
        assert!(curriculum_objective(&s, &a, 4).is_err());
    }

    #[test]
    fn brute_force_cases() {
        let (s, v) = brute_force_select(&agg(&[0.0; 4], 0.0), 4).unwrap();
        assert_eq!(s, SelectionVector::all(4));
        assert_eq!(v, 0.0);

        let (s, v) = brute_force_select(&agg(&[5.0], 0.0), 1).unwrap();
        assert_eq!(s, SelectionVector::none(1));
        assert_eq!(v, 1.0);

        // Hand enumeration of all eight subsets: 000->4, 100/010/001->3,
        // 110->2, 101->2.1, 011->2.4, 111->2.5.
        let (s, v) = brute_force_select(&agg(&[0.1, 0.4, 2.0], 1.0), 3).unwrap();
        assert_eq!(s.bits(), &[true, true, false]);
        assert_eq!(v, 2.0);

        assert!(brute_force_select(&agg(&[0.0; 21], 0.0), 21).is_err());
    }

    #[test]
    fn optimal_prefix_matches_fixture() {
        let a = agg(&[0.1, 0.4, 2.0], 1.0);
        let p = optimal_prefix(&a);
        assert_eq!(p.k, 2);
        assert_eq!(p.objective, 2.0);
        assert_eq!(
            select_classes(&a, 3, SelectionRule::OptimalPrefix).unwrap(),
            brute_force_select(&a, 3).unwrap().0
        );
        let zero = agg(&[0.0; 5], 0.0);
        assert_eq!(
            select_classes(&zero, 5, SelectionRule::OptimalPrefix).unwrap(),
            SelectionVector::all(5)
        );
    }

    #[test]
    fn prefix_is_sorted_by_loss() {
        let a = agg(&[3.0, 0.5, 1.0, 0.5], 2.0);
        assert_eq!(sorted_by_loss(&a), vec![1, 3, 2, 0]);
        let p = optimal_prefix(&a);
        let order = sorted_by_loss(&a);
        let expected: Vec<usize> = {
            let mut v = order[..p.k].to_vec();
            v.sort();
            v
        };
        assert_eq!(p.selection.selected().collect::<Vec<_>>(), expected);
    }

    #[test]
    fn paper_threshold_literal() {
        let a = agg(&[0.1, 0.4, 2.0], 1.0);
        // thresh = 2: prefix(1)=0.1 > 2? no; prefix(2)=0.5 > 1? no;
        // prefix(3)=2.5 > 0? yes -> K=3, select ranks 1..2.
        let s = select_classes(&a, 3, SelectionRule::PaperThreshold { thresh: Some(2.0) }).unwrap();
        assert_eq!(s.bits(), &[true, true, false]);
        // Condition never met: everything selected.
        let s = select_classes(
            &a,
            3,
            SelectionRule::PaperThreshold {
                thresh: Some(100.0),
            },
        )
        .unwrap();
        assert_eq!(s, SelectionVector::all(3));
        let err = select_classes(&a, 3, SelectionRule::PaperThreshold { thresh: None });
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }
}
