use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use hcl_core::config::RunConfig;
use hcl_core::data::{self, SynthConfig};
use hcl_core::experiment::{self, AblationTable, EvalData};
use hcl_core::verify::{self, VerifyConfig};
use hcl_core::{Checkpoint, LossMode, RankScope, SplitTag};

/// Hierarchical multi-label classification with a class-based curriculum
/// loss.
#[derive(Parser)]
#[command(name = "hcl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write a run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Run the CE / HCL-Hier / HCL-CL / HCL grid and print a table.
    Ablate(AblateArgs),
    /// Run the randomized property suite.
    Verify(VerifyArgs),
    /// Write a synthetic dataset in the native on-disk format.
    Synth(SynthArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set epochs=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        cfg.apply_overrides(&self.overrides)?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Loss mode: ce, focal, hcl-hier, hcl-cl or hcl.
    #[arg(long)]
    loss: Option<LossMode>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory; defaults to `<root>/<dataset>-<loss>-s<seed>` under
    /// `$HCL_RUN_DIR` or `runs`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Configuration whose dataset and split are reproduced.
    #[arg(long, conflicts_with_all = ["data", "arff"])]
    config: Option<PathBuf>,
    /// Native-format dataset directory, evaluated without a split.
    #[arg(long, conflicts_with = "arff")]
    data: Option<PathBuf>,
    /// ARFF file, evaluated without a split.
    #[arg(long)]
    arff: Option<PathBuf>,
    /// train, valid, test or all.
    #[arg(long, default_value = "test")]
    split: String,
    /// Rank over all classes or leaves only.
    #[arg(long, default_value = "all")]
    rank: String,
    /// Report path; defaults to `eval-<split>.json` next to the checkpoint.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// One configuration per dataset.
    #[arg(long, required = true)]
    config: Vec<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Comma-separated training seeds.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    /// Directory for ablation.json and ablation.md.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the full JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace the transform with one that skips the deepest level.
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    levels: usize,
    #[arg(long, default_value_t = 3)]
    branching: usize,
    #[arg(long, default_value_t = 150)]
    examples_per_leaf: usize,
    #[arg(long, default_value_t = 16)]
    feature_dim: usize,
    #[arg(long, default_value_t = 2.0)]
    separation: f64,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Failure that maps to exit code 1 rather than 2.
#[derive(Debug)]
struct PropertyFailure(String);

impl std::fmt::Display for PropertyFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for PropertyFailure {}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut body = serde_json::to_string_pretty(v)?;
    body.push('\n');
    std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn run_root() -> PathBuf {
    std::env::var_os(experiment::RUN_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = args.config.load()?;
    if let Some(l) = args.loss {
        cfg.train.loss_mode = l;
    }
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    let dir = args
        .out
        .unwrap_or_else(|| experiment::default_run_dir(&run_root(), &cfg));
    let artifacts = experiment::run(&cfg)?;
    experiment::write_run(&artifacts, &dir)?;
    let rec = &artifacts.record;
    if let Some(last) = rec.log.last() {
        eprintln!(
            "epoch {} loss {:.6} hit@1 {:.4} mrr {:.4} hierdist {:.4}",
            last.epoch, last.loss, last.hit1, last.mrr, last.hierdist
        );
    }
    if let Some(test) = rec.reports.get(SplitTag::Test.as_str()) {
        println!(
            "{}",
            experiment::split_report_json(&rec.dataset, SplitTag::Test.as_str(), test)
        );
    }
    eprintln!("run written to {}", dir.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let ck = Checkpoint::read(&args.checkpoint)?;
    let split = match args.split.as_str() {
        "all" => None,
        s => Some(s.parse::<SplitTag>()?),
    };
    let scope = match args.rank.as_str() {
        "all" => RankScope::AllClasses,
        "leaves" => RankScope::LeavesOnly,
        other => bail!("unknown rank scope `{other}`; expected all or leaves"),
    };
    let (source, dataset) = match (&args.config, &args.data, &args.arff) {
        (Some(c), _, _) => {
            let cfg = RunConfig::from_file(c)?;
            let name = cfg.dataset_name();
            (EvalData::Config(cfg), name)
        }
        (None, Some(dir), _) => (EvalData::Untagged(data::read_native_dir(dir)?), stem(dir)),
        (None, None, Some(f)) => (EvalData::Untagged(data::read_arff_hmc(f)?), stem(f)),
        (None, None, None) => bail!("one of --config, --data or --arff is required"),
    };
    let report = experiment::eval_checkpoint(&ck, source, split, scope)?;
    let split_name = split.map_or("all", SplitTag::as_str);
    let v = experiment::split_report_json(&dataset, split_name, &report);
    let out = args.out.unwrap_or_else(|| {
        args.checkpoint
            .parent()
            .unwrap_or(Path::new("."))
            .join(format!("eval-{split_name}.json"))
    });
    write_json(&out, &v)?;
    println!("{v}");
    Ok(())
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let mut datasets = Vec::new();
    for path in &args.config {
        let mut cfg = RunConfig::from_file(path)?;
        cfg.apply_overrides(&args.overrides)?;
        eprintln!(
            "ablating {} over seeds {:?}",
            cfg.dataset_name(),
            args.seeds
        );
        datasets.push(experiment::ablate(&cfg, &LossMode::ABLATION, &args.seeds)?);
    }
    let table = AblationTable { datasets };
    let md = table.to_markdown();
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_json(&dir.join("ablation.json"), &table.to_json())?;
        std::fs::write(dir.join("ablation.md"), &md)
            .with_context(|| format!("writing {}", dir.display()))?;
    }
    print!("{md}");
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> Result<()> {
    if args.trials == 0 {
        bail!("--trials must be at least 1");
    }
    let mut cfg = VerifyConfig::new(args.trials, args.seed);
    if args.inject_fault {
        cfg.transform = verify::faulty_transform;
    }
    let report = verify::run_suite(&cfg)?;
    let v = serde_json::to_value(&report)?;
    if let Some(p) = &args.out {
        write_json(p, &v)?;
    }
    print!("{}", report.summary());
    if !report.all_hold {
        for p in report.properties.iter().filter(|p| !p.holds()) {
            if let Some(cx) = &p.counterexample {
                println!("counterexample for {}: {}", p.name, cx);
            }
        }
        return Err(PropertyFailure("property violations found".into()).into());
    }
    if let Some(stats) = report.get("selection-oracle").map(|p| &p.stats) {
        println!("literal rule vs oracle: {}", stats["literal_rule"]);
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        levels: args.levels,
        branching: args.branching,
        examples_per_leaf: args.examples_per_leaf,
        feature_dim: args.feature_dim,
        cluster_separation: args.separation,
        label_noise: args.noise,
        seed: args.seed,
    };
    let d = data::synth_generate(&cfg)?;
    data::emit_native(&d, &args.out)?;
    println!(
        "{}",
        json!({
            "out": args.out.display().to_string(),
            "examples": d.n_examples(),
            "features": d.n_features(),
            "classes": d.n_classes(),
        })
    );
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<PropertyFailure>().is_some() {
        return 1;
    }
    match err.downcast_ref::<hcl_core::Error>() {
        Some(hcl_core::Error::Diverged { .. }) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
