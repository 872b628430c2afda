//! One line per acceptance criterion; the test fails if any criterion does.

use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use hcl_core::config::{DataSource, RunConfig};
use hcl_core::experiment;
use hcl_core::verify::{self, PropertyResult, VerifyConfig};
use hcl_core::{LossMode, SplitTag, SynthConfig};

const SEED: u64 = 20_240_601;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(out: &mut Vec<Outcome>, name: &'static str, pass: bool, detail: String) {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    out.push(Outcome { name, pass, detail });
}

fn holds(props: &[PropertyResult], name: &str, min_trials: usize) -> (bool, String) {
    let p = props
        .iter()
        .find(|p| p.name == name)
        .expect("property exists");
    let ok = p.failures == 0 && p.trials >= min_trials;
    (
        ok,
        format!("{name} {}/{} ok", p.trials - p.failures, p.trials),
    )
}

fn constraint_and_sandwich(out: &mut Vec<Outcome>) {
    let start = Instant::now();
    let props = verify::transform_properties(&VerifyConfig::new(500, SEED)).unwrap();
    let elapsed = start.elapsed();
    let (a, da) = holds(&props, "constraint-all-shallower", 500);
    let (b, db) = holds(&props, "constraint-ancestors-only", 500);
    report(
        out,
        "constraint satisfaction (C<=30, N<=50, depth<=5, exact)",
        a && b && elapsed < Duration::from_secs(10),
        format!("{da}; {db}; {:.2}s < 10s", elapsed.as_secs_f64()),
    );
    let (l, dl) = holds(&props, "lower-bound", 500);
    let (t, dt) = holds(&props, "tightness", 500);
    let tight = props.iter().find(|p| p.name == "tightness").unwrap();
    let n_g = tight.stats["dominating_surfaces"].as_u64().unwrap_or(0);
    report(
        out,
        "base <= transformed <= g for dominating constrained g (exact)",
        l && t && n_g >= 100,
        format!("{dl}; {dt}; {n_g} dominating surfaces (>= 100)"),
    );
}

fn curriculum_bound(out: &mut Vec<Outcome>) {
    let p = verify::curriculum_bound(&VerifyConfig::new(500, SEED)).unwrap();
    report(
        out,
        "0-1 total <= curriculum objective <= transformed total (tol 1e-9)",
        p.failures == 0 && p.trials >= 500,
        format!("{}/{} instances", p.trials - p.failures, p.trials),
    );
}

fn selection_oracle(out: &mut Vec<Outcome>) {
    let start = Instant::now();
    let props = verify::selection_properties(&VerifyConfig::new(500, SEED)).unwrap();
    let elapsed = start.elapsed();
    let (ok, d) = holds(&props, "selection-oracle", 200);
    let lit = &props[0].stats["literal_rule"];
    report(
        out,
        "optimal-prefix equals exhaustive minimum (C<=12, tol 1e-9)",
        ok && elapsed < Duration::from_secs(30),
        format!(
            "{d}; {:.2}s < 30s; literal rule disagreement rate {} (thresh=E), {} (thresh=E+C-1)",
            elapsed.as_secs_f64(),
            lit["thresh=e_h_total"]["rate"],
            lit["thresh=e_h_total+C-1"]["rate"],
        ),
    );
}

fn gradients(out: &mut Vec<Outcome>) {
    let props = [
        verify::gradient_base(SEED, false).unwrap(),
        verify::gradient_base(SEED, true).unwrap(),
        verify::gradient_pipeline(SEED).unwrap(),
    ];
    let ok = props.iter().all(|p| p.failures == 0 && p.trials >= 20);
    let detail = props
        .iter()
        .map(|p| {
            format!(
                "{} max rel {:.1e}",
                p.name,
                p.stats["max_rel_error"].as_f64().unwrap()
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    report(
        out,
        "gradients match central differences (step 1e-5, rel < 1e-4, 20 instances)",
        ok,
        detail,
    );
}

fn metric_fixtures(out: &mut Vec<Outcome>) {
    let p = verify::metric_fixtures().unwrap();
    report(
        out,
        "metric fixtures reproduce exactly",
        p.failures == 0,
        format!("{}/{} fixtures", p.trials - p.failures, p.trials),
    );
}

fn desk_config() -> RunConfig {
    let mut cfg = RunConfig {
        data: DataSource::Synth(SynthConfig {
            levels: 3,
            branching: 3,
            examples_per_leaf: 150,
            cluster_separation: 2.0,
            label_noise: 0.05,
            seed: 1,
            ..SynthConfig::default()
        }),
        ..RunConfig::default()
    };
    cfg.train.loss_mode = LossMode::Hcl;
    cfg.train.epochs = 100;
    cfg
}

fn desk_training(out: &mut Vec<Outcome>) {
    let start = Instant::now();
    let run = experiment::run(&desk_config()).unwrap();
    let elapsed = start.elapsed();
    let test = &run.record.reports[SplitTag::Test.as_str()];
    report(
        out,
        "desk-scale hcl training reaches test Hit@1 >= 0.90 in 100 epochs under 5 min",
        test.hit_at_1 >= 0.90 && elapsed < Duration::from_secs(300),
        format!("Hit@1 {:.4}; {:.1}s", test.hit_at_1, elapsed.as_secs_f64()),
    );
}

fn directional_ablation(out: &mut Vec<Outcome>) {
    let mut cfg = desk_config();
    if let DataSource::Synth(s) = &mut cfg.data {
        s.label_noise = 0.15;
    }
    let seeds: Vec<u64> = (0..5).collect();
    let table = experiment::ablate(&cfg, &LossMode::ABLATION, &seeds).unwrap();
    let hd = |m: LossMode| table.rows.iter().find(|r| r.loss == m).unwrap().hier_dist;
    let (ce, hier, cl, hcl) = (
        hd(LossMode::Ce),
        hd(LossMode::HclHier),
        hd(LossMode::HclCl),
        hd(LossMode::Hcl),
    );
    let ok = hcl <= ce && hcl <= hier.min(cl) + 0.02;
    report(
        out,
        "directional ablation: HierDist(hcl) <= ce and <= min(hier, cl) + 0.02 (noise 0.15, 5 seeds)",
        ok,
        format!("ce {ce:.4}, hcl-hier {hier:.4}, hcl-cl {cl:.4}, hcl {hcl:.4}"),
    );
}

fn arff_datasets(out: &mut Vec<Outcome>) {
    let sets = [
        ("HCL_DIATOMS_ARFF", "diatoms"),
        ("HCL_IMCLEF_ARFF", "imclef"),
    ];
    let present: Vec<(PathBuf, &str)> = sets
        .iter()
        .filter_map(|(var, name)| std::env::var_os(var).map(|p| (PathBuf::from(p), *name)))
        .filter(|(p, _)| p.exists())
        .collect();
    if present.is_empty() {
        println!("SKIP real datasets: set HCL_DIATOMS_ARFF / HCL_IMCLEF_ARFF to run");
        return;
    }
    for (path, name) in present {
        let cfg = RunConfig {
            name: Some(name.to_string()),
            data: DataSource::Arff(path),
            ..RunConfig::default()
        };
        let t = experiment::ablate(&cfg, &[LossMode::Ce, LossMode::Hcl], &[0, 1, 2]).unwrap();
        let (ce, hcl) = (t.rows[0].hier_dist, t.rows[1].hier_dist);
        report(
            out,
            "real dataset: 3-seed HierDist(hcl) < HierDist(ce)",
            hcl < ce,
            format!("{name}: ce {ce:.4}, hcl {hcl:.4}"),
        );
    }
}

fn determinism(out: &mut Vec<Outcome>) {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, desk_config().to_text()).unwrap();
    let logs: Vec<Vec<u8>> = ["a", "b"]
        .iter()
        .map(|d| {
            let dir = tmp.path().join(d);
            let o = Command::new(env!("CARGO_BIN_EXE_hcl"))
                .args(["train", "--config", cfg.to_str().unwrap(), "--seed", "7"])
                .args(["--out", dir.to_str().unwrap()])
                .output()
                .unwrap();
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            std::fs::read(dir.join(experiment::METRICS_FILE)).unwrap()
        })
        .collect();
    report(
        out,
        "two train runs with the same config and seed give byte-identical metrics logs",
        !logs[0].is_empty() && logs[0] == logs[1],
        format!("{} bytes each", logs[0].len()),
    );
}

#[test]
fn acceptance() {
    let mut out = Vec::new();
    constraint_and_sandwich(&mut out);
    curriculum_bound(&mut out);
    selection_oracle(&mut out);
    gradients(&mut out);
    metric_fixtures(&mut out);
    desk_training(&mut out);
    directional_ablation(&mut out);
    arff_datasets(&mut out);
    determinism(&mut out);
    let failed: Vec<String> = out
        .iter()
        .filter(|o| !o.pass)
        .map(|o| format!("{} ({})", o.name, o.detail))
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:#?}");
}
