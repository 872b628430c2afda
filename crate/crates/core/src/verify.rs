//! Randomized property suite over the transform, the curriculum objective,
//! class selection and the analytic gradients.

use std::f64::consts::LN_2;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::curriculum::{
    aggregate_class_losses, brute_force_select, curriculum_objective, optimal_prefix,
    select_classes, ClassLossAggregate, SelectionRule, SelectionVector,
};
use crate::error::{Error, Result};
use crate::losses::{
    bce_grad, bce_loss, focal_grad, focal_loss, hier_transform, zero_one_loss, GradRouting, Scope,
    DEFAULT_DECISION_THRESHOLD, SCORE_EPS,
};
use crate::matrix::{LabelMatrix, LossSurface, ScoreMatrix};
use crate::metrics::{evaluate, RankScope};
use crate::nn::{backward, forward, init_params, MlpParams};
use crate::taxonomy::{ClassId, Taxonomy};
use crate::train::{score_gradient, LossMode, TrainConfig};

/// Signature shared by the real transform and injected faulty ones.
pub type TransformFn = fn(&LossSurface, &Taxonomy, Scope) -> Result<(LossSurface, GradRouting)>;

pub const MAX_CLASSES: usize = 30;
pub const MAX_DEPTH: usize = 5;
pub const MAX_EXAMPLES: usize = 50;
pub const ORACLE_MAX_CLASSES: usize = 12;
pub const GRADIENT_INSTANCES: usize = 20;
pub const FD_STEP: f64 = 1e-5;
pub const GRADIENT_TOLERANCE: f64 = 1e-4;
pub const BOUND_TOLERANCE: f64 = 1e-9;
pub const ORACLE_TOLERANCE: f64 = 1e-9;
/// Entries whose analytic and numeric gradients are both below this are
/// excluded from the relative error.
pub const GRADIENT_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy)]
pub struct VerifyConfig {
    pub trials: usize,
    pub seed: u64,
    pub transform: TransformFn,
}

impl VerifyConfig {
    pub fn new(trials: usize, seed: u64) -> Self {
        Self {
            trials,
            seed,
            transform: hier_transform,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PropertyResult {
    pub name: String,
    pub trials: usize,
    pub failures: usize,
    /// Smallest failing instance found.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<Value>,
    /// Property-specific measurements.
    #[serde(skip_serializing_if = "Value::is_null")]
    pub stats: Value,
    pub seconds: f64,
}

impl PropertyResult {
    pub fn holds(&self) -> bool {
        self.failures == 0 && self.trials > 0
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub trials: usize,
    pub all_hold: bool,
    pub properties: Vec<PropertyResult>,
    pub notes: Vec<String>,
}

impl VerifyReport {
    pub fn get(&self, name: &str) -> Option<&PropertyResult> {
        self.properties.iter().find(|p| p.name == name)
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for p in &self.properties {
            out.push_str(&format!(
                "{:<28} {:>6} trials {:>4} failures  {}\n",
                p.name,
                p.trials,
                p.failures,
                if p.holds() { "ok" } else { "VIOLATED" }
            ));
        }
        out.push_str(if self.all_hold {
            "all properties hold\n"
        } else {
            "property violations found\n"
        });
        out
    }
}

/// Keeps the failing instance with the smallest size.
struct Tracker {
    name: &'static str,
    trials: usize,
    failures: usize,
    best: Option<(usize, Value)>,
    start: Instant,
}

impl Tracker {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            trials: 0,
            failures: 0,
            best: None,
            start: Instant::now(),
        }
    }

    fn record(&mut self, failure: Option<(usize, Value)>) {
        self.trials += 1;
        if let Some((size, v)) = failure {
            self.failures += 1;
            if self.best.as_ref().is_none_or(|(s, _)| size < *s) {
                self.best = Some((size, v));
            }
        }
    }

    fn finish(self, stats: Value) -> PropertyResult {
        PropertyResult {
            name: self.name.to_string(),
            trials: self.trials,
            failures: self.failures,
            counterexample: self.best.map(|(_, v)| v),
            stats,
            seconds: self.start.elapsed().as_secs_f64(),
        }
    }
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

/// Random forest with at most `max_classes` nodes and depth `max_depth`.
pub fn random_taxonomy<R: Rng>(rng: &mut R, max_classes: usize, max_depth: usize) -> Taxonomy {
    let target = rng.random_range(1..=max_classes.max(1));
    let mut paths: Vec<String> = Vec::with_capacity(target);
    let mut depth: Vec<usize> = Vec::with_capacity(target);
    let mut counter = 0usize;
    let mut fresh = || {
        counter += 1;
        counter.to_string()
    };
    let top = rng.random_range(1..=target.min(4));
    for _ in 0..top {
        paths.push(fresh());
        depth.push(1);
    }
    while paths.len() < target {
        let open: Vec<usize> = (0..paths.len()).filter(|&i| depth[i] < max_depth).collect();
        let parent = if open.is_empty() || rng.random_bool(0.15) {
            None
        } else {
            Some(open[rng.random_range(0..open.len())])
        };
        match parent {
            Some(p) => {
                let path = format!("{}/{}", paths[p], fresh());
                paths.push(path);
                depth.push(depth[p] + 1);
            }
            None => {
                paths.push(fresh());
                depth.push(1);
            }
        }
    }
    Taxonomy::parse_hierarchy(&paths, '/').expect("generated paths are valid")
}

/// Nonnegative values; a share of instances uses small integers so ties
/// are frequent.
fn random_surface<R: Rng>(rng: &mut R, n: usize, c: usize) -> LossSurface {
    let integral = rng.random_bool(0.3);
    let v = Array2::from_shape_fn((n, c), |_| {
        if integral {
            rng.random_range(0..4) as f64
        } else {
            rng.random_range(0.0..3.0)
        }
    });
    LossSurface::new(v).expect("finite nonnegative")
}

/// Hierarchy-consistent labels: every example gets a random nonempty set
/// of classes closed under ancestors.
fn random_labels<R: Rng>(rng: &mut R, n: usize, tax: &Taxonomy) -> LabelMatrix {
    let c = tax.len();
    let sets: Vec<Vec<ClassId>> = (0..n)
        .map(|_| {
            let k = rng.random_range(1..=2.min(c));
            (0..k).map(|_| ClassId(rng.random_range(0..c))).collect()
        })
        .collect();
    LabelMatrix::from_positive_sets(&sets, tax).expect("nonempty sets")
}

fn random_scores<R: Rng>(rng: &mut R, n: usize, c: usize) -> ScoreMatrix {
    ScoreMatrix::new(Array2::from_shape_fn((n, c), |_| {
        rng.random_range(0.01..0.99)
    }))
    .expect("scores in range")
}

/// A surface satisfying the all-shallower constraint that dominates `base`:
/// running level maxima plus nonnegative noise.
pub fn random_dominating<R: Rng>(rng: &mut R, base: &LossSurface, tax: &Taxonomy) -> Array2<f64> {
    let (n, c) = base.shape();
    let mut g = Array2::zeros((n, c));
    for i in 0..n {
        let mut shallower = f64::NEG_INFINITY;
        for bucket in tax.levels_index() {
            let mut level_max = f64::NEG_INFINITY;
            for &j in bucket {
                let noise = if rng.random_bool(0.3) {
                    0.0
                } else {
                    rng.random_range(0.0..1.0)
                };
                let v = base.values()[[i, j]].max(shallower) + noise;
                g[[i, j]] = v;
                level_max = level_max.max(v);
            }
            shallower = shallower.max(level_max);
        }
    }
    g
}

fn instance_json(tax: &Taxonomy, rows: &[Vec<f64>]) -> Value {
    json!({ "hierarchy": tax.to_paths(), "base": rows })
}

fn row_vec(a: &Array2<f64>, i: usize) -> Vec<f64> {
    a.row(i).to_vec()
}

// ---------------------------------------------------------------------------
// Constraint checks
// ---------------------------------------------------------------------------

/// First violation of the all-shallower constraint in row `i`, as
/// (deeper class, shallower class).
fn all_shallower_violation(t: &Array2<f64>, tax: &Taxonomy, i: usize) -> Option<(usize, usize)> {
    let mut max_above: Option<usize> = None;
    for bucket in tax.levels_index() {
        if let Some(k) = max_above {
            for &j in bucket {
                if t[[i, j]] < t[[i, k]] {
                    return Some((j, k));
                }
            }
        }
        for &j in bucket {
            if max_above.is_none_or(|k| t[[i, j]] > t[[i, k]]) {
                max_above = Some(j);
            }
        }
    }
    None
}

fn ancestor_violation(t: &Array2<f64>, tax: &Taxonomy, i: usize) -> Option<(usize, usize)> {
    for j in 0..tax.len() {
        if let Some(p) = tax.parent_index(j) {
            if t[[i, j]] < t[[i, p]] {
                return Some((j, p));
            }
        }
    }
    None
}

/// Whether `g` satisfies the all-shallower constraint in every row.
pub fn satisfies_constraint(g: &Array2<f64>, tax: &Taxonomy) -> bool {
    (0..g.nrows()).all(|i| all_shallower_violation(g, tax, i).is_none())
}

fn first_exceeding(a: &Array2<f64>, b: &Array2<f64>) -> Option<(usize, usize)> {
    a.indexed_iter()
        .find(|&((i, j), &v)| v > b[[i, j]])
        .map(|(ix, _)| ix)
}

// ---------------------------------------------------------------------------
// Suite
// ---------------------------------------------------------------------------

pub fn run_suite(cfg: &VerifyConfig) -> Result<VerifyReport> {
    if cfg.trials == 0 {
        return Err(Error::InvalidArgument("trials must be positive".into()));
    }
    let mut properties = Vec::new();
    properties.extend(transform_properties(cfg)?);
    properties.push(curriculum_bound(cfg)?);
    properties.extend(selection_properties(cfg)?);
    properties.push(gradient_base(cfg.seed, false)?);
    properties.push(gradient_base(cfg.seed, true)?);
    properties.push(gradient_pipeline(cfg.seed)?);
    properties.push(metric_fixtures()?);
    let all_hold = properties.iter().all(PropertyResult::holds);
    Ok(VerifyReport {
        seed: cfg.seed,
        trials: cfg.trials,
        all_hold,
        properties,
        notes: vec![
            "HierDist is 0 whenever the top-ranked class is a positive, including internal nodes"
                .into(),
            "selection-oracle stats compare the literal `thresh + 1 - K` rule, which selects ranks below K, to the exhaustive optimum"
                .into(),
            "the upper curriculum bound is exercised with base losses that dominate the 0-1 loss".into(),
        ],
    })
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Constraint satisfaction, lower bound, tightness, idempotence and 0-1
/// closure on shared random instances.
pub fn transform_properties(cfg: &VerifyConfig) -> Result<Vec<PropertyResult>> {
    let mut rng = rng_for(cfg.seed, 1);
    let transform = cfg.transform;
    let mut sat_all = Tracker::new("constraint-all-shallower");
    let mut sat_anc = Tracker::new("constraint-ancestors-only");
    let mut lower = Tracker::new("lower-bound");
    let mut tight = Tracker::new("tightness");
    let mut idem = Tracker::new("idempotence");
    let mut binary = Tracker::new("zero-one-closure");
    let mut dominating_checked = 0usize;

    for _ in 0..cfg.trials {
        let tax = random_taxonomy(&mut rng, MAX_CLASSES, MAX_DEPTH);
        let c = tax.len();
        let n = rng.random_range(1..=MAX_EXAMPLES);
        let base = random_surface(&mut rng, n, c);
        let b = base.values();

        let (t_all, _) = transform(&base, &tax, Scope::AllShallower)?;
        let (t_anc, _) = transform(&base, &tax, Scope::AncestorsOnly)?;
        let (ta, tn) = (t_all.values(), t_anc.values());

        let fail = (0..n).find_map(|i| all_shallower_violation(ta, &tax, i).map(|v| (i, v)));
        sat_all.record(fail.map(|(i, (deep, shallow))| {
            (
                c,
                json!({
                    "instance": instance_json(&tax, &[row_vec(b, i)]),
                    "transformed": row_vec(ta, i),
                    "deeper_class": tax.names()[deep],
                    "shallower_class": tax.names()[shallow],
                }),
            )
        }));

        let fail = (0..n).find_map(|i| ancestor_violation(tn, &tax, i).map(|v| (i, v)));
        sat_anc.record(fail.map(|(i, (child, parent))| {
            (
                c,
                json!({
                    "instance": instance_json(&tax, &[row_vec(b, i)]),
                    "transformed": row_vec(tn, i),
                    "class": tax.names()[child],
                    "parent": tax.names()[parent],
                }),
            )
        }));

        let fail = first_exceeding(b, ta)
            .map(|ix| (ix, "all-shallower"))
            .or_else(|| first_exceeding(b, tn).map(|ix| (ix, "ancestors-only")));
        lower.record(fail.map(|((i, j), scope)| {
            (
                c,
                json!({
                    "instance": instance_json(&tax, &[row_vec(b, i)]),
                    "scope": scope,
                    "class": tax.names()[j],
                }),
            )
        }));

        let mut tight_fail = None;
        for _ in 0..2 {
            let g = random_dominating(&mut rng, &base, &tax);
            debug_assert!(satisfies_constraint(&g, &tax));
            dominating_checked += 1;
            if let Some((i, j)) = first_exceeding(ta, &g) {
                tight_fail = Some((
                    c,
                    json!({
                        "instance": instance_json(&tax, &[row_vec(b, i)]),
                        "transformed": row_vec(ta, i),
                        "dominating": row_vec(&g, i),
                        "class": tax.names()[j],
                    }),
                ));
                break;
            }
        }
        tight.record(tight_fail);

        let (twice, _) = transform(&t_all, &tax, Scope::AllShallower)?;
        let fail = (twice.values() != ta).then(|| (c, instance_json(&tax, &[row_vec(b, 0)])));
        idem.record(fail);

        let y = random_labels(&mut rng, n, &tax);
        let s = random_scores(&mut rng, n, c);
        let e = zero_one_loss(&y, &s, DEFAULT_DECISION_THRESHOLD)?;
        let (e_h, _) = transform(&e, &tax, Scope::AllShallower)?;
        let bad = e_h.values().iter().any(|&v| v != 0.0 && v != 1.0);
        binary.record(bad.then(|| (c, json!({ "hierarchy": tax.to_paths() }))));
    }
    Ok(vec![
        sat_all.finish(Value::Null),
        sat_anc.finish(Value::Null),
        lower.finish(Value::Null),
        tight.finish(json!({ "dominating_surfaces": dominating_checked })),
        idem.finish(Value::Null),
        binary.finish(Value::Null),
    ])
}

/// Objective of the chosen selection with losses built from the given
/// transform.
fn curriculum_value(
    transform: TransformFn,
    base: &LossSurface,
    e: &LossSurface,
    tax: &Taxonomy,
) -> Result<(f64, f64, LossSurface)> {
    let (lh, _) = transform(base, tax, Scope::AllShallower)?;
    let (e_h, _) = transform(e, tax, Scope::AllShallower)?;
    let agg = aggregate_class_losses(&lh, &e_h)?;
    let choice = optimal_prefix(&agg);
    Ok((choice.objective, lh.total(), lh))
}

/// `e <= l_hc <= l_h <= g` with base losses dominating the 0-1 loss.
pub fn curriculum_bound(cfg: &VerifyConfig) -> Result<PropertyResult> {
    let mut rng = rng_for(cfg.seed, 2);
    let mut tr = Tracker::new("curriculum-bound");
    let mut min_gap_lower = f64::INFINITY;
    for trial in 0..cfg.trials {
        let tax = random_taxonomy(&mut rng, MAX_CLASSES, MAX_DEPTH);
        let c = tax.len();
        let n = rng.random_range(1..=MAX_EXAMPLES);
        let y = random_labels(&mut rng, n, &tax);
        let s = random_scores(&mut rng, n, c);
        let e = zero_one_loss(&y, &s, DEFAULT_DECISION_THRESHOLD)?;
        // Alternate between base-2 cross-entropy and a noisy 0-1 loss.
        let base = if trial % 2 == 0 {
            LossSurface::new(bce_loss(&y, &s)?.into_inner() / LN_2)?
        } else {
            let noise = Array2::from_shape_fn((n, c), |_| {
                if rng.random_bool(0.5) {
                    0.0
                } else {
                    rng.random_range(0.0..2.0)
                }
            });
            LossSurface::new(e.values() + &noise)?
        };
        let (l_hc, l_h, lh_surface) = curriculum_value(cfg.transform, &base, &e, &tax)?;
        let g = random_dominating(&mut rng, &base, &tax).sum();
        let e_total = e.total();
        min_gap_lower = min_gap_lower.min(l_hc - e_total);
        let ok = e_total <= l_hc + BOUND_TOLERANCE
            && l_hc <= l_h + BOUND_TOLERANCE
            && l_h <= g + BOUND_TOLERANCE;
        tr.record((!ok).then(|| {
            (
                n * c,
                json!({
                    "hierarchy": tax.to_paths(),
                    "labels": y.values().outer_iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
                    "scores": s.values().outer_iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
                    "zero_one_total": e_total,
                    "curriculum_objective": l_hc,
                    "transformed_total": lh_surface.total(),
                    "dominating_total": g,
                }),
            )
        }));
    }
    Ok(tr.finish(json!({ "tolerance": BOUND_TOLERANCE, "min_lower_gap": min_gap_lower })))
}

fn random_aggregate<R: Rng>(rng: &mut R, c: usize) -> ClassLossAggregate {
    let integral = rng.random_bool(0.3);
    let per_class = (0..c)
        .map(|_| {
            if integral {
                rng.random_range(0..5) as f64
            } else {
                rng.random_range(0.0..4.0)
            }
        })
        .collect();
    let e = if integral {
        rng.random_range(0..=c) as f64
    } else {
        rng.random_range(0.0..c as f64 + 1.0)
    };
    ClassLossAggregate::new(per_class, e)
}

/// Optimal-prefix against the exhaustive minimum, the literal rule's
/// disagreement rates, and monotonicity of K in the 0-1 total.
pub fn selection_properties(cfg: &VerifyConfig) -> Result<Vec<PropertyResult>> {
    let mut rng = rng_for(cfg.seed, 3);
    let mut oracle = Tracker::new("selection-oracle");
    let mut mono = Tracker::new("selection-monotone-k");
    let mut literal = [0usize; 2];
    for _ in 0..cfg.trials {
        let c = rng.random_range(1..=ORACLE_MAX_CLASSES);
        let agg = random_aggregate(&mut rng, c);
        let (best_s, best) = brute_force_select(&agg, c)?;
        let choice = optimal_prefix(&agg);
        oracle.record(
            ((choice.objective - best).abs() > ORACLE_TOLERANCE).then(|| {
                (
                    c,
                    json!({
                        "class_losses": agg.per_class,
                        "e_h_total": agg.e_h_total,
                        "prefix_objective": choice.objective,
                        "oracle_objective": best,
                        "oracle_selection": best_s.bits(),
                    }),
                )
            }),
        );
        for (slot, thresh) in [agg.e_h_total, agg.e_h_total + c as f64 - 1.0]
            .into_iter()
            .enumerate()
        {
            let rule = SelectionRule::PaperThreshold {
                thresh: Some(thresh),
            };
            let s = select_classes(&agg, c, rule)?;
            if curriculum_objective(&s, &agg, c)? > best + ORACLE_TOLERANCE {
                literal[slot] += 1;
            }
        }

        let mut es: Vec<f64> = (0..4)
            .map(|_| rng.random_range(0.0..c as f64 + 2.0))
            .collect();
        es.sort_by(f64::total_cmp);
        let ks: Vec<usize> = es
            .iter()
            .map(|&e| optimal_prefix(&ClassLossAggregate::new(agg.per_class.clone(), e)).k)
            .collect();
        let bad = ks.windows(2).any(|w| w[1] < w[0]);
        mono.record(bad.then(|| {
            (
                c,
                json!({ "class_losses": agg.per_class, "e_h_totals": es, "k": ks }),
            )
        }));
    }
    let n = cfg.trials as f64;
    let stats = json!({
        "tolerance": ORACLE_TOLERANCE,
        "literal_rule": {
            "thresh=e_h_total": { "disagreements": literal[0], "rate": literal[0] as f64 / n },
            "thresh=e_h_total+C-1": { "disagreements": literal[1], "rate": literal[1] as f64 / n },
        },
    });
    Ok(vec![oracle.finish(stats), mono.finish(Value::Null)])
}

// ---------------------------------------------------------------------------
// Gradients
// ---------------------------------------------------------------------------

fn rel_error(a: f64, n: f64) -> Option<f64> {
    let scale = a.abs().max(n.abs());
    (scale >= GRADIENT_FLOOR).then(|| (a - n).abs() / scale)
}

/// Elementwise base-loss gradients against central differences.
pub fn gradient_base(seed: u64, focal: bool) -> Result<PropertyResult> {
    let gamma = 2.0;
    let name = if focal {
        "gradient-focal"
    } else {
        "gradient-bce"
    };
    let mut tr = Tracker::new(name);
    let mut rng = rng_for(seed, if focal { 5 } else { 4 });
    let mut worst = 0.0f64;
    let loss = |y: &LabelMatrix, s: &ScoreMatrix| -> Result<f64> {
        Ok(if focal {
            focal_loss(y, s, gamma)?.total()
        } else {
            bce_loss(y, s)?.total()
        })
    };
    for _ in 0..GRADIENT_INSTANCES {
        let (n, c) = (rng.random_range(1..=6), rng.random_range(1..=8));
        let y = LabelMatrix::from_signs(Array2::from_shape_fn((n, c), |_| {
            if rng.random_bool(0.5) {
                1
            } else {
                -1
            }
        }))?;
        let s = ScoreMatrix::new(Array2::from_shape_fn((n, c), |_| {
            rng.random_range(0.05..0.95)
        }))?;
        let analytic = if focal {
            focal_grad(&y, &s, gamma)?
        } else {
            bce_grad(&y, &s)?
        };
        let mut inst_worst = 0.0f64;
        for i in 0..n {
            for j in 0..c {
                let mut plus = s.values().clone();
                plus[[i, j]] += FD_STEP;
                let mut minus = s.values().clone();
                minus[[i, j]] -= FD_STEP;
                let num = (loss(&y, &ScoreMatrix::new(plus)?)?
                    - loss(&y, &ScoreMatrix::new(minus)?)?)
                    / (2.0 * FD_STEP);
                if let Some(r) = rel_error(analytic[[i, j]], num) {
                    inst_worst = inst_worst.max(r);
                }
            }
        }
        worst = worst.max(inst_worst);
        tr.record((inst_worst >= GRADIENT_TOLERANCE).then(|| {
            (
                n * c,
                json!({ "max_rel_error": inst_worst, "scores": s.values().iter().collect::<Vec<_>>() }),
            )
        }));
    }
    Ok(tr.finish(
        json!({ "max_rel_error": worst, "tolerance": GRADIENT_TOLERANCE, "step": FD_STEP }),
    ))
}

/// Margin below which a relu input or a competing max is treated as a tie.
const TIE_MARGIN: f64 = 1e-3;

fn pipeline_is_tie_free(p: &MlpParams, x: &Array2<f64>, y: &LabelMatrix) -> Result<bool> {
    let (scores, cache) = forward(p, x.view(), None)?;
    for k in 0..p.layers.len() - 1 {
        if cache.pre_activation(k).iter().any(|z| z.abs() < TIE_MARGIN) {
            return Ok(false);
        }
    }
    if scores
        .values()
        .iter()
        .any(|&s| !(10.0 * SCORE_EPS..=1.0 - 10.0 * SCORE_EPS).contains(&s))
    {
        return Ok(false);
    }
    // Distinct base losses within each row keep every max unique.
    let base = bce_loss(y, &scores)?;
    for row in base.values().outer_iter() {
        let mut v = row.to_vec();
        v.sort_by(f64::total_cmp);
        if v.windows(2).any(|w| w[1] - w[0] < TIE_MARGIN) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// The full training loss (transform plus frozen selection) through the
/// network against central differences on every parameter.
pub fn gradient_pipeline(seed: u64) -> Result<PropertyResult> {
    let mut tr = Tracker::new("gradient-pipeline");
    let mut rng = rng_for(seed, 6);
    let mut worst = 0.0f64;
    let mut redraws = 0usize;
    let cfg = TrainConfig {
        loss_mode: LossMode::Hcl,
        ..TrainConfig::default()
    };
    let mut found = 0;
    while found < GRADIENT_INSTANCES {
        let tax = random_taxonomy(&mut rng, 8, 3);
        let c = tax.len();
        let (n, d) = (rng.random_range(2..=5), rng.random_range(2..=4));
        let hidden: Vec<usize> = (0..rng.random_range(1..=2))
            .map(|_| rng.random_range(3..=6))
            .collect();
        let params = init_params(d, &hidden, c, rng.random())?;
        let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
        let y = random_labels(&mut rng, n, &tax);
        if !pipeline_is_tie_free(&params, &x, &y)? {
            redraws += 1;
            if redraws > 100_000 {
                return Err(Error::InvalidArgument(
                    "could not draw tie-free gradient instances".into(),
                ));
            }
            continue;
        }
        found += 1;
        let mut bits: Vec<bool> = (0..c).map(|_| rng.random_bool(0.7)).collect();
        if !bits.iter().any(|&b| b) {
            bits[0] = true;
        }
        let sel = SelectionVector::from_bools(bits);

        let loss_at = |p: &MlpParams| -> Result<f64> {
            let (scores, _) = forward(p, x.view(), None)?;
            Ok(score_gradient(&y, &scores, &tax, &cfg, &sel)?.0)
        };
        let (scores, cache) = forward(&params, x.view(), None)?;
        let (_, d_scores) = score_gradient(&y, &scores, &tax, &cfg, &sel)?;
        let analytic = backward(&params, &cache, &d_scores)?.flatten();

        let n_params = params.n_params();
        let mut inst_worst = 0.0f64;
        for (k, &a) in analytic.iter().enumerate() {
            let shifted = |delta: f64| {
                let mut p = params.clone();
                let mut idx = 0;
                p.for_each_mut(|v| {
                    if idx == k {
                        *v += delta;
                    }
                    idx += 1;
                });
                p
            };
            let num =
                (loss_at(&shifted(FD_STEP))? - loss_at(&shifted(-FD_STEP))?) / (2.0 * FD_STEP);
            if let Some(r) = rel_error(a, num) {
                inst_worst = inst_worst.max(r);
            }
        }
        worst = worst.max(inst_worst);
        tr.record((inst_worst >= GRADIENT_TOLERANCE).then(|| {
            (
                n_params,
                json!({
                    "hierarchy": tax.to_paths(),
                    "hidden": hidden,
                    "max_rel_error": inst_worst,
                }),
            )
        }));
    }
    Ok(tr.finish(json!({
        "max_rel_error": worst,
        "tolerance": GRADIENT_TOLERANCE,
        "step": FD_STEP,
        "redraws": redraws,
    })))
}

// ---------------------------------------------------------------------------
// Metric fixtures
// ---------------------------------------------------------------------------

/// Hand-derived metric values on fixed inputs.
pub fn metric_fixtures() -> Result<PropertyResult> {
    let mut tr = Tracker::new("metric-fixtures");
    let mut check = |label: &str, got: f64, want: f64| {
        tr.record(
            (got != want).then(|| (0, json!({ "fixture": label, "got": got, "want": want }))),
        );
    };

    let t = Taxonomy::parse_hierarchy(&["A", "A/B", "A/C"], '/')?;
    let id = |p: &str| t.find(p).expect("fixture path").0;
    let y = LabelMatrix::from_positive_sets(&[vec![ClassId(id("A/B"))]], &t)?;
    let mut s = Array2::from_elem((1, 3), 0.1);
    s[[0, id("A/C")]] = 0.9;
    let r = evaluate(&y, &ScoreMatrix::new(s)?, &t, RankScope::AllClasses, false)?;
    check("sibling top-1 hier_dist", r.hier_dist, 1.0);
    check("sibling top-1 hit_at_1", r.hit_at_1, 0.0);
    let mut s = Array2::from_elem((1, 3), 0.1);
    s[[0, id("A")]] = 0.9;
    let r = evaluate(&y, &ScoreMatrix::new(s)?, &t, RankScope::AllClasses, false)?;
    check("positive top-1 hier_dist", r.hier_dist, 0.0);

    let t = Taxonomy::parse_hierarchy(&["1/2/3/4", "5"], '/')?;
    let y = LabelMatrix::from_positive_sets(&[vec![t.find("1/2/3/4").expect("path")]], &t)?;
    let mut s = Array2::from_elem((1, t.len()), 0.1);
    s[[0, t.find("5").expect("path").0]] = 0.9;
    let r = evaluate(&y, &ScoreMatrix::new(s)?, &t, RankScope::AllClasses, false)?;
    check("disjoint subtree hier_dist", r.hier_dist, 4.0);

    let flat = Taxonomy::parse_hierarchy(&["a", "b", "c"], '/')?;
    let y = LabelMatrix::from_signs(ndarray::array![[1, -1, -1], [-1, 1, -1]])?;
    let s = ScoreMatrix::new(ndarray::array![[0.9, 0.1, 0.2], [0.9, 0.5, 0.1]])?;
    let r = evaluate(&y, &s, &flat, RankScope::AllClasses, false)?;
    check("two-example hit_at_1", r.hit_at_1, 0.5);
    check("two-example mrr", r.mrr, 0.75);

    let flat4 = Taxonomy::parse_hierarchy(&["a", "b", "c", "d"], '/')?;
    let y = LabelMatrix::from_signs(ndarray::array![[-1, -1, -1, 1]])?;
    let s = ScoreMatrix::new(ndarray::array![[0.9, 0.8, 0.7, 0.6]])?;
    let r = evaluate(&y, &s, &flat4, RankScope::AllClasses, false)?;
    check("fourth-rank mrr", r.mrr, 0.25);

    Ok(tr.finish(Value::Null))
}

/// A transform that leaves the deepest level untouched.
pub fn faulty_transform(
    base: &LossSurface,
    tax: &Taxonomy,
    scope: Scope,
) -> Result<(LossSurface, GradRouting)> {
    let (out, routing) = hier_transform(base, tax, scope)?;
    let mut v = out.into_inner();
    if tax.max_level() >= 2 {
        if let Some(deepest) = tax.levels_index().last() {
            for &j in deepest {
                v.column_mut(j).assign(&base.values().column(j));
            }
        }
    }
    Ok((LossSurface::new(v)?, routing))
}
