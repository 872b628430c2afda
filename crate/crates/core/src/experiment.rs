//! Runs persisted to disk: dataset preparation, training, reports and the
//! ablation grid.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{DataSource, RunConfig};
use crate::data::{self, Dataset, Normalization, SplitTag};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport, RankScope};
use crate::nn::{predict, Checkpoint};
use crate::train::{evaluate_split, train, EpochRecord, LossMode, TrainOutcome};

pub const CONFIG_FILE: &str = "config.resolved";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const RUN_FILE: &str = "run.json";

/// Environment variable overriding the run-output root.
pub const RUN_DIR_ENV: &str = "HCL_RUN_DIR";

/// Loads the configured dataset without splitting it.
pub fn load_raw(cfg: &RunConfig) -> Result<Dataset> {
    let mut d = match &cfg.data {
        DataSource::Synth(s) => data::synth_generate(s)?,
        DataSource::Native(dir) => {
            for f in [data::FEATURES_FILE, data::LABELS_FILE, data::HIERARCHY_FILE] {
                let p = dir.join(f);
                if !p.exists() {
                    return Err(Error::io(
                        p,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
                    ));
                }
            }
            data::read_native_dir(dir)?
        }
        DataSource::Arff(p) => data::read_arff_hmc(p)?,
    };
    d.name = cfg.dataset_name();
    Ok(d)
}

/// Loads, splits and (optionally) standardizes the configured dataset.
pub fn prepare_dataset(cfg: &RunConfig) -> Result<(Dataset, Option<Normalization>)> {
    let raw = load_raw(cfg)?;
    let d = data::split(&raw, cfg.split_ratios, cfg.split_seed)?;
    if cfg.normalize {
        let (d, n) = data::normalize(&d)?;
        Ok((d, Some(n)))
    } else {
        Ok((d, None))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: String,
    pub dataset: String,
    pub loss: LossMode,
    pub seed: u64,
    pub log: Vec<EpochRecord>,
    pub reports: BTreeMap<String, EvalReport>,
    /// Selected class names per epoch.
    pub selection_history: Vec<Vec<String>>,
    pub duration_secs: f64,
}

pub struct RunArtifacts {
    pub record: RunRecord,
    pub outcome: TrainOutcome,
    pub checkpoint: Checkpoint,
}

/// Trains per the configuration and evaluates every split.
pub fn run(cfg: &RunConfig) -> Result<RunArtifacts> {
    let start = Instant::now();
    let (data, norm) = prepare_dataset(cfg)?;
    let outcome = train(&data, &cfg.train)?;
    let mut reports = BTreeMap::new();
    for tag in SplitTag::ALL {
        if data.indices(tag)?.is_empty() {
            continue;
        }
        let r = evaluate_split(&outcome.params, &data, tag, cfg.train.rank_scope)?;
        reports.insert(tag.as_str().to_string(), r);
    }
    let names = data.taxonomy.names();
    let selection_history = outcome
        .selections
        .iter()
        .map(|s| s.selected().map(|j| names[j].clone()).collect())
        .collect();
    let checkpoint = Checkpoint {
        params: outcome.params.clone(),
        feature_mean: norm.as_ref().map(|n| n.mean.clone()),
        feature_scale: norm.as_ref().map(|n| n.scale.clone()),
    };
    let record = RunRecord {
        config: cfg.to_text(),
        dataset: data.name.clone(),
        loss: cfg.train.loss_mode,
        seed: cfg.train.seed,
        log: outcome.log.clone(),
        reports,
        selection_history,
        duration_secs: start.elapsed().as_secs_f64(),
    };
    Ok(RunArtifacts {
        record,
        outcome,
        checkpoint,
    })
}

/// One JSON object per epoch.
pub fn metrics_jsonl(log: &[EpochRecord]) -> String {
    let mut out = String::new();
    for r in log {
        out.push_str(&serde_json::to_string(r).expect("plain struct"));
        out.push('\n');
    }
    out
}

/// Report object for one split: table-formatted metrics plus raw values.
pub fn split_report_json(dataset: &str, split: &str, r: &EvalReport) -> Value {
    let mut v = r.to_table_json();
    v["dataset"] = json!(dataset);
    v["split"] = json!(split);
    v["raw"] = json!({
        "hit_at_1": r.hit_at_1,
        "mrr": r.mrr,
        "hier_dist": r.hier_dist,
    });
    v
}

fn write_file(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn to_pretty(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// Writes config, checkpoint, metrics log, report and run record.
pub fn write_run(artifacts: &RunArtifacts, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let rec = &artifacts.record;
    write_file(&dir.join(CONFIG_FILE), &rec.config)?;
    artifacts.checkpoint.write(dir.join(CHECKPOINT_FILE))?;
    write_file(&dir.join(METRICS_FILE), metrics_jsonl(&rec.log))?;
    let splits: serde_json::Map<String, Value> = rec
        .reports
        .iter()
        .map(|(k, r)| (k.clone(), split_report_json(&rec.dataset, k, r)))
        .collect();
    let report = json!({
        "dataset": rec.dataset,
        "loss": rec.loss,
        "seed": rec.seed,
        "splits": splits,
    });
    write_file(&dir.join(REPORT_FILE), to_pretty(&report))?;
    write_file(&dir.join(RUN_FILE), to_pretty(rec))?;
    Ok(())
}

/// Default run directory: `<root>/<dataset>-<loss>-s<seed>`.
pub fn default_run_dir(root: &Path, cfg: &RunConfig) -> PathBuf {
    root.join(format!(
        "{}-{}-s{}",
        cfg.dataset_name(),
        cfg.train.loss_mode,
        cfg.train.seed
    ))
}

/// Where evaluation data comes from.
pub enum EvalData {
    /// Re-prepare the configured dataset, reusing its split.
    Config(RunConfig),
    /// A dataset used as-is; only the whole set can be evaluated.
    Untagged(Dataset),
}

/// Evaluates a checkpoint. `split = None` evaluates every example.
pub fn eval_checkpoint(
    ck: &Checkpoint,
    source: EvalData,
    split: Option<SplitTag>,
    scope: RankScope,
) -> Result<EvalReport> {
    let (data, already_normalized) = match source {
        EvalData::Config(cfg) => {
            let (mut d, norm) = prepare_dataset(&cfg)?;
            if norm.is_none() {
                apply_checkpoint_norm(ck, &mut d)?;
            }
            (d, true)
        }
        EvalData::Untagged(d) => (d, false),
    };
    let mut data = data;
    check_dims(ck, &data)?;
    if !already_normalized {
        apply_checkpoint_norm(ck, &mut data)?;
    }
    let rows: Vec<usize> = match split {
        Some(tag) => data.indices(tag)?,
        None => (0..data.n_examples()).collect(),
    };
    if rows.is_empty() {
        return Err(Error::InvalidArgument("selected split is empty".into()));
    }
    let (x, y) = data.subset(&rows);
    let scores = predict(&ck.params, x.view())?;
    evaluate(&y, &scores, &data.taxonomy, scope, false)
}

fn apply_checkpoint_norm(ck: &Checkpoint, d: &mut Dataset) -> Result<()> {
    if let (Some(mean), Some(scale)) = (&ck.feature_mean, &ck.feature_scale) {
        let n = Normalization {
            mean: mean.clone(),
            scale: scale.clone(),
        };
        d.features = n.apply(&d.features)?;
    }
    Ok(())
}

pub fn check_dims(ck: &Checkpoint, d: &Dataset) -> Result<()> {
    let (cd, cc) = (ck.params.input_dim(), ck.params.output_dim());
    if cd != d.n_features() || cc != d.n_classes() {
        return Err(Error::Shape(format!(
            "checkpoint expects D={cd}, C={cc}; dataset `{}` has D={}, C={}",
            d.name,
            d.n_features(),
            d.n_classes()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub method: String,
    pub loss: LossMode,
    /// Seed-averaged test-split metrics as fractions.
    pub hit_at_1: f64,
    pub mrr: f64,
    pub hier_dist: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationDataset {
    pub name: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub datasets: Vec<AblationDataset>,
}

/// Runs every arm over the seeds with shared data and splits, averaging
/// test-split metrics.
pub fn ablate(cfg: &RunConfig, arms: &[LossMode], seeds: &[u64]) -> Result<AblationDataset> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "ablation needs at least one seed".into(),
        ));
    }
    let (data, _) = prepare_dataset(cfg)?;
    let mut rows = Vec::with_capacity(arms.len());
    for &arm in arms {
        let (mut h, mut m, mut d) = (0.0, 0.0, 0.0);
        for &seed in seeds {
            let mut tc = cfg.train.clone();
            tc.loss_mode = arm;
            tc.seed = seed;
            let out = train(&data, &tc)?;
            let r = evaluate_split(&out.params, &data, SplitTag::Test, tc.rank_scope)?;
            h += r.hit_at_1;
            m += r.mrr;
            d += r.hier_dist;
        }
        let k = seeds.len() as f64;
        rows.push(AblationRow {
            method: arm.display_name().to_string(),
            loss: arm,
            hit_at_1: h / k,
            mrr: m / k,
            hier_dist: d / k,
        });
    }
    Ok(AblationDataset {
        name: data.name.clone(),
        seeds: seeds.to_vec(),
        rows,
    })
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

impl AblationTable {
    /// JSON with percentage Hit@1/MRR and raw HierDist, two decimals.
    pub fn to_json(&self) -> Value {
        json!({
            "datasets": self.datasets.iter().map(|d| json!({
                "name": d.name,
                "seeds": d.seeds,
                "rows": d.rows.iter().map(|r| json!({
                    "method": r.method,
                    "loss": r.loss,
                    "hit_at_1": round2(r.hit_at_1 * 100.0),
                    "mrr": round2(r.mrr * 100.0),
                    "hier_dist": round2(r.hier_dist),
                })).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
        })
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Methods |");
        for d in &self.datasets {
            out.push_str(&format!(" {0} Hit@1 | {0} MRR | {0} HierDist |", d.name));
        }
        out.push_str("\n|---|");
        for _ in &self.datasets {
            out.push_str("---|---|---|");
        }
        out.push('\n');
        let n_rows = self.datasets.first().map_or(0, |d| d.rows.len());
        for i in 0..n_rows {
            out.push_str(&format!("| {} |", self.datasets[0].rows[i].method));
            for d in &self.datasets {
                let r = &d.rows[i];
                out.push_str(&format!(
                    " {:.2} | {:.2} | {:.2} |",
                    r.hit_at_1 * 100.0,
                    r.mrr * 100.0,
                    r.hier_dist
                ));
            }
            out.push('\n');
        }
        out
    }
}
