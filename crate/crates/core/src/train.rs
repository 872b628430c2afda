//! Mini-batch training of the MLP under the supported loss modes.

use std::fmt;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curriculum::{hcl_loss_with, HclConfig, SelectionRule, SelectionVector};
use crate::data::{Dataset, SplitTag};
use crate::error::{Error, Result};
use crate::losses::{BaseLoss, Scope, DEFAULT_DECISION_THRESHOLD, DEFAULT_FOCAL_GAMMA};
use crate::matrix::{LabelMatrix, ScoreMatrix};
use crate::metrics::{evaluate, EvalReport, RankScope};
use crate::nn::{
    backward, dropout_masks, forward, init_params, predict, MlpParams, Optimizer, OptimizerKind,
};
use crate::taxonomy::Taxonomy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    /// Plain binary cross-entropy.
    Ce,
    /// Focal loss.
    Focal,
    /// Constrained base loss, every class selected.
    HclHier,
    /// Curriculum selection on the untransformed base loss.
    HclCl,
    /// Constrained base loss with curriculum selection.
    Hcl,
}

impl LossMode {
    pub const ABLATION: [LossMode; 4] = [
        LossMode::Ce,
        LossMode::HclHier,
        LossMode::HclCl,
        LossMode::Hcl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::Ce => "ce",
            LossMode::Focal => "focal",
            LossMode::HclHier => "hcl-hier",
            LossMode::HclCl => "hcl-cl",
            LossMode::Hcl => "hcl",
        }
    }

    /// Row label used in result tables.
    pub fn display_name(self) -> &'static str {
        match self {
            LossMode::Ce => "CrossEntropy",
            LossMode::Focal => "FocalLoss",
            LossMode::HclHier => "HCL-Hier",
            LossMode::HclCl => "HCL-CL",
            LossMode::Hcl => "HCL",
        }
    }

    pub fn uses_curriculum(self) -> bool {
        matches!(self, LossMode::HclCl | LossMode::Hcl)
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce" => Ok(LossMode::Ce),
            "focal" => Ok(LossMode::Focal),
            "hcl-hier" => Ok(LossMode::HclHier),
            "hcl-cl" => Ok(LossMode::HclCl),
            "hcl" => Ok(LossMode::Hcl),
            other => Err(Error::InvalidArgument(format!(
                "unknown loss mode `{other}` (expected ce, focal, hcl-hier, hcl-cl or hcl)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Width of every hidden layer.
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub loss_mode: LossMode,
    /// Base loss under the hierarchical modes.
    pub base_loss: BaseLoss,
    pub focal_gamma: f64,
    pub transform_scope: Scope,
    pub decision_threshold: f64,
    pub selection_rule: SelectionRule,
    pub normalize_class_losses: bool,
    pub rank_scope: RankScope,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_width: 800,
            hidden_layers: 1,
            dropout_rate: 0.25,
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 64,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            loss_mode: LossMode::Hcl,
            base_loss: BaseLoss::Bce,
            focal_gamma: DEFAULT_FOCAL_GAMMA,
            transform_scope: Scope::AllShallower,
            decision_threshold: DEFAULT_DECISION_THRESHOLD,
            selection_rule: SelectionRule::OptimalPrefix,
            normalize_class_losses: false,
            rank_scope: RankScope::AllClasses,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.hidden_width == 0 {
            return bad("hidden_width must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return bad(format!("learning_rate {} must be >= 0", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.decision_threshold > 0.0 && self.decision_threshold < 1.0) {
            return bad(format!(
                "decision_threshold {} outside (0, 1)",
                self.decision_threshold
            ));
        }
        if self.focal_gamma.is_nan() || self.focal_gamma < 0.0 {
            return bad(format!("focal_gamma {} must be >= 0", self.focal_gamma));
        }
        if let SelectionRule::PaperThreshold { thresh: None } = self.selection_rule {
            return bad("paper-threshold selection needs a thresh value".into());
        }
        Ok(())
    }

    pub fn hidden(&self) -> Vec<usize> {
        vec![self.hidden_width; self.hidden_layers]
    }

    /// Loss whose derivative drives the updates in this mode.
    pub fn effective_base(&self) -> BaseLoss {
        match self.loss_mode {
            LossMode::Ce => BaseLoss::Bce,
            LossMode::Focal => BaseLoss::Focal {
                gamma: self.focal_gamma,
            },
            _ => self.base_loss,
        }
    }

    /// Curriculum pipeline settings for this mode.
    pub fn hcl_config(&self) -> HclConfig {
        let transform = match self.loss_mode {
            LossMode::HclHier | LossMode::Hcl => Some(self.transform_scope),
            _ => None,
        };
        HclConfig {
            transform,
            curriculum: self.loss_mode.uses_curriculum(),
            rule: self.selection_rule,
            decision_threshold: self.decision_threshold,
            normalize_class_losses: self.normalize_class_losses,
        }
    }
}

/// One row of the per-epoch log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Per-example training objective after the epoch.
    pub loss: f64,
    pub hit1: f64,
    pub mrr: f64,
    pub hierdist: f64,
    /// Number of classes selected during the epoch.
    pub selected_classes: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub initial: MlpParams,
    pub params: MlpParams,
    pub log: Vec<EpochRecord>,
    /// Selection used in each epoch.
    pub selections: Vec<SelectionVector>,
}

/// Objective of the full set under the configured mode, with the selection
/// the curriculum would use next.
pub struct SetObjective {
    pub per_example: f64,
    pub selection: SelectionVector,
}

pub fn set_objective(
    params: &MlpParams,
    x: &Array2<f64>,
    y: &LabelMatrix,
    tax: &Taxonomy,
    cfg: &TrainConfig,
) -> Result<SetObjective> {
    let scores = predict(params, x.view())?;
    objective_from_scores(&scores, y, tax, cfg)
}

fn objective_from_scores(
    scores: &ScoreMatrix,
    y: &LabelMatrix,
    tax: &Taxonomy,
    cfg: &TrainConfig,
) -> Result<SetObjective> {
    let n = y.n_examples().max(1) as f64;
    let out = hcl_loss_with(
        y,
        scores,
        cfg.effective_base(),
        tax,
        &cfg.hcl_config(),
        None,
    )?;
    let total = match cfg.loss_mode {
        LossMode::Ce | LossMode::Focal => out.base_total,
        LossMode::HclHier => out.constrained.total(),
        LossMode::HclCl | LossMode::Hcl => out.objective,
    };
    Ok(SetObjective {
        per_example: total / n,
        selection: out.selection,
    })
}

/// Gradient of the batch loss with respect to the scores. The batch loss is
/// the selected, routed base loss averaged over the batch.
pub fn score_gradient(
    y: &LabelMatrix,
    scores: &ScoreMatrix,
    tax: &Taxonomy,
    cfg: &TrainConfig,
    selection: &SelectionVector,
) -> Result<(f64, Array2<f64>)> {
    let base = cfg.effective_base();
    let b = y.n_examples() as f64;
    let out = hcl_loss_with(y, scores, base, tax, &cfg.hcl_config(), Some(selection))?;
    let mut grad = base.grad(y, scores)?;
    grad *= &out.weights;
    grad /= b;
    Ok((out.selected_loss / b, grad))
}

pub fn evaluate_split(
    params: &MlpParams,
    data: &Dataset,
    tag: SplitTag,
    scope: RankScope,
) -> Result<EvalReport> {
    let rows = data.indices(tag)?;
    if rows.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} split is empty",
            tag.as_str()
        )));
    }
    let (x, y) = data.subset(&rows);
    let scores = predict(params, x.view())?;
    evaluate(&y, &scores, &data.taxonomy, scope, false)
}

/// Trains on the train split and logs validation metrics after every epoch.
pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_rows = data.indices(SplitTag::Train)?;
    if train_rows.is_empty() {
        return Err(Error::InvalidArgument("train split is empty".into()));
    }
    let valid_rows = data.indices(SplitTag::Valid)?;
    let eval_rows = if valid_rows.is_empty() {
        train_rows.clone()
    } else {
        valid_rows
    };
    let (x_train, y_train) = data.subset(&train_rows);
    let (x_eval, y_eval) = data.subset(&eval_rows);
    let tax = &data.taxonomy;
    let c = tax.len();

    let hidden = cfg.hidden();
    let initial = init_params(data.n_features(), &hidden, c, cfg.seed)?;
    let mut params = initial.clone();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5DEE_CE66_D1CE_4E5B);

    let mut selection = if cfg.loss_mode.uses_curriculum() {
        set_objective(&params, &x_train, &y_train, tax, cfg)?.selection
    } else {
        SelectionVector::all(c)
    };

    let mut order: Vec<usize> = (0..train_rows.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut selections = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let xb = x_train.select(Axis(0), batch);
            let yb = y_train.select_rows(batch);
            let masks = (cfg.dropout_rate > 0.0)
                .then(|| dropout_masks(&mut rng, batch.len(), &hidden, cfg.dropout_rate));
            let (scores, cache) = forward(&params, xb.view(), masks.as_deref())?;
            let (batch_loss, d_scores) = score_gradient(&yb, &scores, tax, cfg, &selection)?;
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    message: format!("batch loss is {batch_loss}"),
                });
            }
            let grads = backward(&params, &cache, &d_scores)?;
            opt.step(&mut params, &grads);
            if !params.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    message: "parameters became non-finite".into(),
                });
            }
        }

        let after = set_objective(&params, &x_train, &y_train, tax, cfg)?;
        if !after.per_example.is_finite() {
            return Err(Error::Diverged {
                epoch,
                message: format!("training objective is {}", after.per_example),
            });
        }
        let scores = predict(&params, x_eval.view())?;
        let report = evaluate(&y_eval, &scores, tax, cfg.rank_scope, false)?;
        log.push(EpochRecord {
            epoch,
            loss: after.per_example,
            hit1: report.hit_at_1,
            mrr: report.mrr,
            hierdist: report.hier_dist,
            selected_classes: selection.count(),
        });
        selections.push(selection.clone());
        if cfg.loss_mode.uses_curriculum() {
            selection = after.selection;
        }
    }
    Ok(TrainOutcome {
        initial,
        params,
        log,
        selections,
    })
}
