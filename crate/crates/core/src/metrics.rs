//! Ranking metrics: Hit@1, MRR and the LCA-height hierarchical distance.

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{check_same_shape, LabelMatrix, ScoreMatrix};
use crate::taxonomy::{ClassId, Node, Taxonomy};

/// Which classes take part in the ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankScope {
    #[default]
    AllClasses,
    LeavesOnly,
}

/// Class ids by descending score, ties by ascending id.
pub fn rank_classes(scores: ArrayView1<'_, f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleEval {
    pub top1: usize,
    /// 1-based rank of the highest-ranked positive.
    pub first_positive_rank: usize,
    pub hier_dist: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_examples: usize,
    pub hit_at_1: f64,
    pub mrr: f64,
    pub hier_dist: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_example: Option<Vec<ExampleEval>>,
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

impl EvalReport {
    /// JSON object with percentage-scaled Hit@1 and MRR and raw HierDist,
    /// each rounded to two decimals.
    pub fn to_table_json(&self) -> serde_json::Value {
        serde_json::json!({
            "n_examples": self.n_examples,
            "hit_at_1": round2(self.hit_at_1 * 100.0),
            "mrr": round2(self.mrr * 100.0),
            "hier_dist": round2(self.hier_dist),
        })
    }
}

struct Ranked {
    order: Vec<usize>,
}

fn ranked_row(scores: ArrayView1<'_, f64>, tax: Option<&Taxonomy>, scope: RankScope) -> Ranked {
    let mut order = rank_classes(scores);
    if let (RankScope::LeavesOnly, Some(t)) = (scope, tax) {
        order.retain(|&c| t.is_leaf(ClassId(c)).unwrap_or(false));
    }
    Ranked { order }
}

fn check_inputs(y: &LabelMatrix, scores: &ScoreMatrix) -> Result<()> {
    check_same_shape("labels vs scores", y.values().dim(), scores.values().dim())?;
    if y.n_examples() == 0 {
        return Err(Error::InvalidArgument("no examples to evaluate".into()));
    }
    Ok(())
}

fn first_positive_rank(y: &LabelMatrix, i: usize, order: &[usize]) -> Result<usize> {
    let row = y.row(i);
    if !row.iter().any(|&v| v == 1) {
        return Err(Error::Labels(format!("example {i} has no positive class")));
    }
    // Under leaves-only ranking an example may have no ranked positive; it
    // then ranks just past the list.
    Ok(order
        .iter()
        .position(|&c| row[c] == 1)
        .map_or(order.len() + 1, |p| p + 1))
}

/// Distance for one example: 0 when the top class is positive, otherwise the
/// minimum LCA height between it and any positive.
pub fn example_hier_dist(tax: &Taxonomy, y: &LabelMatrix, i: usize, top1: usize) -> Result<usize> {
    let row = y.row(i);
    if row[top1] == 1 {
        return Ok(0);
    }
    let mut best = None;
    for c in y.positives(i) {
        let h = tax.node_height(tax.lca(ClassId(c), ClassId(top1))?)?;
        best = Some(best.map_or(h, |b: usize| b.min(h)));
    }
    best.ok_or_else(|| Error::Labels(format!("example {i} has no positive class")))
}

pub fn hit_at_1(y: &LabelMatrix, scores: &ScoreMatrix) -> Result<f64> {
    check_inputs(y, scores)?;
    let mut hits = 0usize;
    for i in 0..y.n_examples() {
        let r = ranked_row(scores.values().row(i), None, RankScope::AllClasses);
        if first_positive_rank(y, i, &r.order)? == 1 {
            hits += 1;
        }
    }
    Ok(hits as f64 / y.n_examples() as f64)
}

pub fn mrr(y: &LabelMatrix, scores: &ScoreMatrix) -> Result<f64> {
    check_inputs(y, scores)?;
    let mut total = 0.0;
    for i in 0..y.n_examples() {
        let r = ranked_row(scores.values().row(i), None, RankScope::AllClasses);
        total += 1.0 / first_positive_rank(y, i, &r.order)? as f64;
    }
    Ok(total / y.n_examples() as f64)
}

pub fn hier_dist(y: &LabelMatrix, scores: &ScoreMatrix, tax: &Taxonomy) -> Result<f64> {
    Ok(evaluate(y, scores, tax, RankScope::AllClasses, false)?.hier_dist)
}

/// All three metrics in one pass.
pub fn evaluate(
    y: &LabelMatrix,
    scores: &ScoreMatrix,
    tax: &Taxonomy,
    scope: RankScope,
    keep_per_example: bool,
) -> Result<EvalReport> {
    check_inputs(y, scores)?;
    if y.n_classes() != tax.len() {
        return Err(Error::Shape(format!(
            "scores have {} classes, taxonomy {}",
            y.n_classes(),
            tax.len()
        )));
    }
    let n = y.n_examples();
    let mut per_example = Vec::with_capacity(n);
    let (mut hits, mut rr, mut dist) = (0usize, 0.0, 0usize);
    for i in 0..n {
        let r = ranked_row(scores.values().row(i), Some(tax), scope);
        let top1 = *r
            .order
            .first()
            .ok_or_else(|| Error::InvalidArgument("no classes to rank".into()))?;
        let rank = first_positive_rank(y, i, &r.order)?;
        let d = example_hier_dist(tax, y, i, top1)?;
        if rank == 1 {
            hits += 1;
        }
        rr += 1.0 / rank as f64;
        dist += d;
        per_example.push(ExampleEval {
            top1,
            first_positive_rank: rank,
            hier_dist: d,
        });
    }
    Ok(EvalReport {
        n_examples: n,
        hit_at_1: hits as f64 / n as f64,
        mrr: rr / n as f64,
        hier_dist: dist as f64 / n as f64,
        per_example: keep_per_example.then_some(per_example),
    })
}

/// Node reached by the LCA query, exposed for reports.
pub fn lca_node(tax: &Taxonomy, a: usize, b: usize) -> Result<Node> {
    tax.lca(ClassId(a), ClassId(b))
}
