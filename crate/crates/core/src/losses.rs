//! Per-element base losses and the hierarchical constraint transform.
//!
//! The transform replaces every loss element `(i, j)` by the maximum of the
//! element itself and the elements of example `i` at classes in the scope of
//! `j`. With [`Scope::AllShallower`] the scope is every class whose level is
//! strictly smaller than `j`'s; the result then increases monotonically with
//! level inside every example, and it is the smallest such surface that
//! dominates the input.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{check_same_shape, LabelMatrix, LossSurface, ScoreMatrix};
use crate::taxonomy::Taxonomy;

/// Clamp applied to scores before taking logarithms.
pub const SCORE_EPS: f64 = 1e-7;

pub const DEFAULT_DECISION_THRESHOLD: f64 = 0.5;
pub const DEFAULT_FOCAL_GAMMA: f64 = 2.0;

/// Which classes feed the max of a transformed element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    /// Every class at a strictly smaller level.
    #[default]
    AllShallower,
    /// Strict ancestors only.
    AncestorsOnly,
}

impl std::str::FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all-shallower" => Ok(Scope::AllShallower),
            "ancestors-only" => Ok(Scope::AncestorsOnly),
            other => Err(Error::InvalidArgument(format!(
                "unknown transform scope `{other}` (expected all-shallower or ancestors-only)"
            ))),
        }
    }
}

impl std::fmt::Display for Scope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scope::AllShallower => "all-shallower",
            Scope::AncestorsOnly => "ancestors-only",
        })
    }
}

/// For every transformed element, the class whose base element realized the
/// max.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GradRouting(Array2<usize>);

impl GradRouting {
    pub fn identity(n: usize, c: usize) -> Self {
        Self(Array2::from_shape_fn((n, c), |(_, j)| j))
    }

    pub fn values(&self) -> &Array2<usize> {
        &self.0
    }
}

/// Differentiable base losses on post-sigmoid scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BaseLoss {
    Bce,
    Focal { gamma: f64 },
}

impl BaseLoss {
    pub fn surface(&self, y: &LabelMatrix, s: &ScoreMatrix) -> Result<LossSurface> {
        match *self {
            BaseLoss::Bce => bce_loss(y, s),
            BaseLoss::Focal { gamma } => focal_loss(y, s, gamma),
        }
    }

    /// Derivative of every loss element with respect to its own score.
    pub fn grad(&self, y: &LabelMatrix, s: &ScoreMatrix) -> Result<Array2<f64>> {
        match *self {
            BaseLoss::Bce => bce_grad(y, s),
            BaseLoss::Focal { gamma } => focal_grad(y, s, gamma),
        }
    }
}

fn check_ys(y: &LabelMatrix, s: &ScoreMatrix) -> Result<()> {
    check_same_shape("labels vs scores", y.values().dim(), s.values().dim())
}

/// 1 where the thresholded prediction disagrees with the label. A score
/// exactly at the threshold predicts -1.
pub fn zero_one_loss(
    y: &LabelMatrix,
    s: &ScoreMatrix,
    decision_threshold: f64,
) -> Result<LossSurface> {
    check_ys(y, s)?;
    if !(decision_threshold > 0.0 && decision_threshold < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "decision threshold {decision_threshold} outside (0, 1)"
        )));
    }
    let out = Zip::from(y.values())
        .and(s.values())
        .map_collect(|&label, &score| {
            let predicted = if score > decision_threshold { 1 } else { -1 };
            if predicted == label {
                0.0
            } else {
                1.0
            }
        });
    Ok(LossSurface::from_raw(out))
}

#[inline]
fn p_true(label: i8, score: f64) -> f64 {
    let s = score.clamp(SCORE_EPS, 1.0 - SCORE_EPS);
    if label == 1 {
        s
    } else {
        1.0 - s
    }
}

/// d p_t / d score, zero where the clamp is engaged.
#[inline]
fn p_true_slope(label: i8, score: f64) -> f64 {
    if !(SCORE_EPS..=1.0 - SCORE_EPS).contains(&score) {
        0.0
    } else if label == 1 {
        1.0
    } else {
        -1.0
    }
}

pub fn bce_loss(y: &LabelMatrix, s: &ScoreMatrix) -> Result<LossSurface> {
    check_ys(y, s)?;
    let out = Zip::from(y.values())
        .and(s.values())
        .map_collect(|&label, &score| -p_true(label, score).ln());
    Ok(LossSurface::from_raw(out))
}

pub fn bce_grad(y: &LabelMatrix, s: &ScoreMatrix) -> Result<Array2<f64>> {
    check_ys(y, s)?;
    Ok(Zip::from(y.values())
        .and(s.values())
        .map_collect(|&label, &score| -p_true_slope(label, score) / p_true(label, score)))
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !gamma.is_finite() || gamma < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "focal gamma must be finite and >= 0, got {gamma}"
        )));
    }
    Ok(())
}

/// `(1 - p_t)^gamma * -ln(p_t)`; equals [`bce_loss`] at `gamma = 0`.
pub fn focal_loss(y: &LabelMatrix, s: &ScoreMatrix, gamma: f64) -> Result<LossSurface> {
    check_ys(y, s)?;
    check_gamma(gamma)?;
    let out = Zip::from(y.values())
        .and(s.values())
        .map_collect(|&label, &score| {
            let p = p_true(label, score);
            (1.0 - p).powf(gamma) * -p.ln()
        });
    Ok(LossSurface::from_raw(out))
}

pub fn focal_grad(y: &LabelMatrix, s: &ScoreMatrix, gamma: f64) -> Result<Array2<f64>> {
    check_ys(y, s)?;
    check_gamma(gamma)?;
    Ok(Zip::from(y.values())
        .and(s.values())
        .map_collect(|&label, &score| {
            let slope = p_true_slope(label, score);
            if slope == 0.0 {
                return 0.0;
            }
            let p = p_true(label, score);
            let q = 1.0 - p;
            let modulating = if gamma == 0.0 {
                0.0
            } else {
                gamma * q.powf(gamma - 1.0) * p.ln()
            };
            let d_dp = modulating - q.powf(gamma) / p;
            d_dp * slope
        }))
}

/// Running maximum with ties resolved to the smallest class id.
#[derive(Clone, Copy)]
struct Best {
    value: f64,
    class: usize,
}

impl Best {
    const NONE: Best = Best {
        value: f64::NEG_INFINITY,
        class: usize::MAX,
    };

    #[inline]
    fn offer(&mut self, value: f64, class: usize) {
        if value > self.value || (value == self.value && class < self.class) {
            *self = Best { value, class };
        }
    }
}

/// Hierarchical constraint transform. Returns the transformed surface and
/// the argmax routing for the backward pass; ties go to the class itself,
/// then to the smallest class id.
pub fn hier_transform(
    base: &LossSurface,
    tax: &Taxonomy,
    scope: Scope,
) -> Result<(LossSurface, GradRouting)> {
    let (n, c) = base.shape();
    if c != tax.len() {
        return Err(Error::Shape(format!(
            "loss surface has {c} columns, taxonomy has {} classes",
            tax.len()
        )));
    }
    let values = base.values();
    let mut out = Array2::zeros((n, c));
    let mut route = Array2::zeros((n, c));
    let buckets = tax.levels_index();
    let mut inherited = vec![Best::NONE; c];

    for i in 0..n {
        let row = values.row(i);
        match scope {
            Scope::AllShallower => {
                let mut shallower = Best::NONE;
                for bucket in buckets {
                    for &j in bucket {
                        inherited[j] = shallower;
                    }
                    for &j in bucket {
                        shallower.offer(row[j], j);
                    }
                }
            }
            Scope::AncestorsOnly => {
                // Parents precede children in id order.
                for j in 0..c {
                    inherited[j] = match tax.parent_index(j) {
                        None => Best::NONE,
                        Some(p) => {
                            let mut b = inherited[p];
                            b.offer(row[p], p);
                            b
                        }
                    };
                }
            }
        }
        for j in 0..c {
            let own = row[j];
            let from = inherited[j];
            if own >= from.value {
                out[[i, j]] = own;
                route[[i, j]] = j;
            } else {
                out[[i, j]] = from.value;
                route[[i, j]] = from.class;
            }
        }
    }
    Ok((LossSurface::from_raw(out), GradRouting(route)))
}

/// Routes the gradient of every transformed element onto the base element
/// that realized its max.
pub fn hier_transform_backward(
    routing: &GradRouting,
    upstream: &Array2<f64>,
) -> Result<Array2<f64>> {
    check_same_shape("routing vs upstream", routing.0.dim(), upstream.dim())?;
    let (n, c) = upstream.dim();
    let mut out = Array2::zeros((n, c));
    for i in 0..n {
        for j in 0..c {
            out[[i, routing.0[[i, j]]]] += upstream[[i, j]];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tax(paths: &[&str]) -> Taxonomy {
        Taxonomy::parse_hierarchy(paths, '/').unwrap()
    }

    fn labels(v: Array2<i8>) -> LabelMatrix {
        LabelMatrix::from_signs(v).unwrap()
    }

    fn scores(v: Array2<f64>) -> ScoreMatrix {
        ScoreMatrix::new(v).unwrap()
    }

    #[test]
    fn zero_one_cases() {
        let y = labels(array![[1, 1, -1]]);
        let s = scores(array![[0.7, 0.5, 0.3]]);
        let e = zero_one_loss(&y, &s, 0.5).unwrap();
        assert_eq!(e.values(), &array![[0.0, 1.0, 0.0]]);
        assert!(zero_one_loss(&y, &s, 1.0).is_err());
        let bad = scores(array![[0.1, 0.2]]);
        assert!(matches!(zero_one_loss(&y, &bad, 0.5), Err(Error::Shape(_))));
    }

    #[test]
    fn bce_cases() {
        let y = labels(array![[1, -1, 1]]);
        let s = scores(array![[0.5, 0.5, 1.0]]);
        let l = bce_loss(&y, &s).unwrap();
        assert!((l.values()[[0, 0]] - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((l.values()[[0, 1]] - std::f64::consts::LN_2).abs() < 1e-12);
        let clamped = l.values()[[0, 2]];
        assert!(clamped.is_finite());
        assert!((clamped - 1e-7).abs() < 1e-12);
    }

    #[test]
    fn focal_cases() {
        let y = labels(array![[1, 1, -1]]);
        let s = scores(array![[0.5, 0.9, 0.35]]);
        let f = focal_loss(&y, &s, 2.0).unwrap();
        assert!((f.values()[[0, 0]] - 0.173287).abs() < 1e-6);
        assert!((f.values()[[0, 1]] - 0.00105361).abs() < 1e-8);
        assert_eq!(focal_loss(&y, &s, 0.0).unwrap(), bce_loss(&y, &s).unwrap());
        assert!(focal_loss(&y, &s, -0.5).is_err());
    }

    fn brute_force(base: &Array2<f64>, t: &Taxonomy, scope: Scope) -> Array2<f64> {
        let (n, c) = base.dim();
        Array2::from_shape_fn((n, c), |(i, j)| {
            let mut m = base[[i, j]];
            for k in 0..c {
                let in_scope = match scope {
                    Scope::AllShallower => t.levels()[k] < t.levels()[j],
                    Scope::AncestorsOnly => t
                        .ancestors(crate::ClassId(j))
                        .unwrap()
                        .contains(&crate::ClassId(k)),
                };
                if in_scope {
                    m = m.max(base[[i, k]]);
                }
            }
            m
        })
    }

    #[test]
    fn transform_two_classes() {
        let t = tax(&["A", "A/B"]);
        let base = LossSurface::new(array![[0.2, 0.1]]).unwrap();
        let (out, route) = hier_transform(&base, &t, Scope::AllShallower).unwrap();
        assert_eq!(out.values(), &array![[0.2, 0.2]]);
        assert_eq!(route.values(), &array![[0, 0]]);
    }

    #[test]
    fn transform_scopes_differ_on_non_ancestor() {
        // A, B top-level; C child of A. Ids: A=0, A/C=1, B=2.
        let t = tax(&["A", "B", "A/C"]);
        let (a, b, c) = (
            t.find("A").unwrap().0,
            t.find("B").unwrap().0,
            t.find("A/C").unwrap().0,
        );
        let mut v = Array2::zeros((1, 3));
        v[[0, a]] = 0.3;
        v[[0, b]] = 0.9;
        v[[0, c]] = 0.1;
        let base = LossSurface::new(v.clone()).unwrap();
        let (all, route) = hier_transform(&base, &t, Scope::AllShallower).unwrap();
        assert_eq!(all.values()[[0, c]], 0.9);
        assert_eq!(route.values()[[0, c]], b);
        let (anc, route) = hier_transform(&base, &t, Scope::AncestorsOnly).unwrap();
        assert_eq!(anc.values()[[0, c]], 0.3);
        assert_eq!(route.values()[[0, c]], a);
        for scope in [Scope::AllShallower, Scope::AncestorsOnly] {
            let (out, _) = hier_transform(&base, &t, scope).unwrap();
            assert_eq!(out.values(), &brute_force(&v, &t, scope));
        }
    }

    #[test]
    fn transform_identity_on_monotone_input() {
        let t = tax(&["A/B/C", "D/E"]);
        let mut v = Array2::zeros((2, t.len()));
        for j in 0..t.len() {
            v[[0, j]] = t.levels()[j] as f64;
            v[[1, j]] = 0.5 * t.levels()[j] as f64;
        }
        let base = LossSurface::new(v.clone()).unwrap();
        let (out, route) = hier_transform(&base, &t, Scope::AllShallower).unwrap();
        assert_eq!(out.values(), &v);
        assert_eq!(route, GradRouting::identity(2, t.len()));
    }

    #[test]
    fn ties_prefer_self_then_smallest_id() {
        let t = tax(&["A", "B", "A/C"]);
        let c = t.find("A/C").unwrap().0;
        let base = LossSurface::new(Array2::from_elem((1, 3), 0.4)).unwrap();
        let (_, route) = hier_transform(&base, &t, Scope::AllShallower).unwrap();
        assert_eq!(route.values()[[0, c]], c);

        let mut v = Array2::from_elem((1, 3), 0.4);
        v[[0, c]] = 0.1;
        let base = LossSurface::new(v).unwrap();
        let (_, route) = hier_transform(&base, &t, Scope::AllShallower).unwrap();
        assert_eq!(route.values()[[0, c]], t.find("A").unwrap().0);
    }

    #[test]
    fn transform_rejects_wrong_width() {
        let t = tax(&["A", "B"]);
        let base = LossSurface::new(Array2::zeros((1, 3))).unwrap();
        assert!(hier_transform(&base, &t, Scope::AllShallower).is_err());
    }

    #[test]
    fn backward_routing() {
        let id = GradRouting::identity(2, 3);
        let up = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        assert_eq!(hier_transform_backward(&id, &up).unwrap(), up);

        let t = tax(&["A", "A/B"]);
        let base = LossSurface::new(array![[0.2, 0.1]]).unwrap();
        let (_, route) = hier_transform(&base, &t, Scope::AllShallower).unwrap();
        let g = hier_transform_backward(&route, &array![[0.0, 1.0]]).unwrap();
        assert_eq!(g, array![[1.0, 0.0]]);
        assert!(hier_transform_backward(&route, &array![[1.0]]).is_err());
    }

    #[test]
    fn scope_parses() {
        assert_eq!(
            "all-shallower".parse::<Scope>().unwrap(),
            Scope::AllShallower
        );
        assert_eq!(
            "ancestors-only".parse::<Scope>().unwrap(),
            Scope::AncestorsOnly
        );
        assert!("parents".parse::<Scope>().is_err());
    }
}
