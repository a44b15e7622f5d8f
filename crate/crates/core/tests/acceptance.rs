//! Acceptance run: one PASS/FAIL line per criterion at its tolerance.
//! A failing criterion is reported, never turned into a panic.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::{
    conditional_flow_recovery, gradient_check, identity_suite, oracle_sampling, score_symmetry, structured_operators, toy_groups,
    translation_reduction, Outcome, TOY_BAND, TOY_TABLE,
};
use lie_diffuse::cli::config::Overrides;
use lie_diffuse::cli::{cmd_eval, cmd_generate, cmd_sample, cmd_train, EvalArgs, GenerateArgs, SampleArgs, TrainArgs};
use lie_diffuse::model::LossKind;
use lie_diffuse::pipeline::{run_bridge, run_toy, BridgeSetup, ToyOutcome, ToySetup};
use lie_diffuse::schedule::{make_schedule, ScheduleKind};
use lie_diffuse::verify::{check_forward_equivalence, check_so2_closed_form, Coupling};
use lie_diffuse::{make_group, GroupId, GroupParams, Result};

const SEED: u64 = 0;
const LOSS_WINDOW: usize = 500;
const TOY_TIME_LIMIT_S: f64 = 600.0;

fn guarded(f: impl FnOnce() -> Result<Outcome>) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(o)) => o,
        Ok(Err(e)) => Outcome::failed(format!("error: {e}")),
        Err(_) => Outcome::failed("panicked"),
    }
}

fn line(label: &str, title: &str, o: &Outcome, secs: f64) {
    let status = if o.pass { "PASS" } else { "FAIL" };
    println!("{label:<12} {status} | {title} | value {:.4e} tol {:.1e} | {secs:.1}s | {}", o.value, o.tolerance, o.detail);
}

fn timed(label: &str, title: &str, f: impl FnOnce() -> Result<Outcome>) -> Outcome {
    let start = Instant::now();
    let o = guarded(f);
    line(label, title, &o, start.elapsed().as_secs_f64());
    o
}

fn forward_equivalence() -> Result<Outcome> {
    let start = Instant::now();
    let sched = make_schedule(ScheduleKind::Cosine, 100)?;
    let t = sched.steps;
    let times = [t / 4 - 1, t / 2 - 1, t - 1];
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    let mut all = true;
    for id in [GroupId::Translation { n: 2 }, GroupId::So2Dilation, GroupId::So3Dilation] {
        let g = make_group(id, GroupParams::default())?;
        for r in check_forward_equivalence(&g, &sched, &times, 4096, 1000, Coupling::CommonNoise, SEED, 0.05)? {
            worst = worst.max(r.max_error);
            all &= r.passed;
            parts.push(format!("{} {} {:.4}", r.group_id, r.check_id.trim_start_matches("forward_equivalence"), r.max_error));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = all && secs <= 300.0;
    Ok(Outcome { pass, value: worst, tolerance: 0.05, detail: format!("sliced W2 per time: {}; runtime {secs:.0}s (limit 300s)", parts.join(", ")) })
}

fn closed_form() -> Result<Outcome> {
    let recs = check_so2_closed_form(4096, Coupling::CommonNoise, SEED, 1e-6, 0.05)?;
    let pass = recs.iter().all(|r| r.passed);
    let detail = recs.iter().map(|r| format!("{} {:.3e} (tol {:.0e})", r.check_id, r.max_error, r.tolerance)).collect::<Vec<_>>().join(", ");
    let worst = recs.iter().map(|r| r.max_error / r.tolerance).fold(0.0, f64::max);
    Ok(Outcome { pass, value: worst, tolerance: 1.0, detail: format!("error/tolerance max over: {detail}") })
}

fn oracle() -> Result<Outcome> {
    let so2 = oracle_sampling(GroupId::So2Dilation, &[0.3, 1.0], &[0.2, 0.3], 2048, SEED)?;
    let so3 = oracle_sampling(GroupId::So3Dilation, &[0.2, 1.0, 1.3], &[0.2, 0.3, 0.2], 2048, SEED)?;
    Ok(Outcome { pass: so2.pass && so3.pass, value: so2.value.max(so3.value), tolerance: 0.1, detail: format!("{}; {}", so2.detail, so3.detail) })
}

struct ToyRow {
    dataset: String,
    group: String,
    reference: f64,
    outcome: std::result::Result<ToyOutcome, String>,
}

fn toy_runs() -> Vec<ToyRow> {
    let mut rows = Vec::new();
    for (d, so, tr) in TOY_TABLE {
        let (gso, gt) = toy_groups(d);
        for (gid, reference) in [(gso, so), (gt, tr)] {
            let setup = ToySetup::new(d, gid.clone(), SEED);
            let outcome = match catch_unwind(AssertUnwindSafe(|| run_toy(&setup))) {
                Ok(Ok(o)) => Ok(o),
                Ok(Err(e)) => Err(e.to_string()),
                Err(_) => Err("panicked".into()),
            };
            let row = ToyRow { dataset: d.to_string(), group: make_group(gid, GroupParams::default()).map(|g| g.id.to_string()).unwrap_or_default(), reference, outcome };
            match &row.outcome {
                Ok(o) => println!(
                    "  toy {:<10} {:<9} normalized W2 {:.3} (table {:.2}, band ±{TOY_BAND}) dropped {} loss {:.3} -> {:.3} train {:.0}s",
                    row.dataset,
                    row.group,
                    o.w2.normalized_w2,
                    reference,
                    o.dropped,
                    o.report.head_mean(LOSS_WINDOW),
                    o.report.tail_mean(LOSS_WINDOW),
                    o.report.wall_time_s
                ),
                Err(e) => println!("  toy {:<10} {:<9} error: {e}", row.dataset, row.group),
            }
            rows.push(row);
        }
    }
    rows
}

fn toy_table(rows: &[ToyRow]) -> Outcome {
    let mut in_band = 0;
    let mut slow = 0;
    for r in rows {
        if let Ok(o) = &r.outcome {
            if (o.w2.normalized_w2 - r.reference).abs() <= TOY_BAND {
                in_band += 1;
            }
            if o.report.wall_time_s > TOY_TIME_LIMIT_S {
                slow += 1;
            }
        }
    }
    let need = (rows.len() * 5).div_ceil(6);
    Outcome {
        pass: in_band >= need && slow == 0,
        value: in_band as f64,
        tolerance: need as f64,
        detail: format!("{in_band}/{} runs within ±{TOY_BAND} of the table (need {need}, i.e. 5 of every 6); {slow} runs over {TOY_TIME_LIMIT_S:.0}s", rows.len()),
    }
}

fn loss_decrease(rows: &[ToyRow]) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for r in rows {
        match &r.outcome {
            Ok(o) => {
                let ratio = o.report.tail_mean(LOSS_WINDOW) / o.report.head_mean(LOSS_WINDOW);
                worst = worst.max(ratio);
                parts.push(format!("{}/{} {ratio:.2}", r.dataset, r.group));
            }
            Err(_) => worst = f64::INFINITY,
        }
    }
    Outcome::new(worst, 0.5, format!("trailing/first 500-step mean loss: {}", parts.join(", ")))
}

fn structured() -> Result<Outcome> {
    let (rate, bond, dist) = structured_operators(50, SEED)?;
    let pass = rate <= 1e-3 && bond <= 1e-6 && dist <= 1e-9;
    Ok(Outcome { pass, value: rate, tolerance: 1e-3, detail: format!("|dγ/dτ − 1| {rate:.2e} (tol 1e-3), bond drift {bond:.2e} (tol 1e-6), SE(3) distance drift {dist:.2e} (tol 1e-9)") })
}

fn flow_matching(score_run: Option<f64>) -> Result<Outcome> {
    let recovery = conditional_flow_recovery(10, SEED)?;
    let Some(score_w2) = score_run else {
        return Ok(Outcome::failed(format!("{}; score-matching reference run unavailable", recovery.detail)));
    };
    let mut setup = ToySetup::new(lie_diffuse::data::DatasetName::Mog2d, GroupId::So2Dilation, SEED);
    setup.train.loss_kind = LossKind::FlowMatching;
    let cfm = run_toy(&setup)?;
    let gap = (cfm.w2.normalized_w2 - score_w2).abs();
    Ok(Outcome {
        pass: recovery.pass && gap <= 0.15,
        value: gap,
        tolerance: 0.15,
        detail: format!("{}; CFM mog2d normalized W2 {:.3} vs score {:.3} (gap tol 0.15), dropped {}", recovery.detail, cfm.w2.normalized_w2, score_w2, cfm.dropped),
    })
}

fn bridge() -> Result<Outcome> {
    let out = run_bridge(&BridgeSetup::new(SEED))?;
    let pass = out.mean_abs_angle <= 0.1 && out.max_radius_error <= 1e-6;
    Ok(Outcome {
        pass,
        value: out.mean_abs_angle,
        tolerance: 0.1,
        detail: format!("mean |terminal angle| {:.4} rad (tol 0.1), max radius change {:.2e} (tol 1e-6), dropped {}", out.mean_abs_angle, out.max_radius_error, out.dropped),
    })
}

/// Default-configuration toy run through the command-line entry points.
fn cli_end_to_end() -> Result<Outcome> {
    let dir = std::env::temp_dir().join(format!("lie-diffuse-acceptance-{}", std::process::id()));
    let run = Overrides { seed: Some(SEED), output_dir: Some(dir.clone()), ..Default::default() };
    let ck = cmd_train(&TrainArgs { run: run.clone() })?;
    let samples = cmd_sample(&SampleArgs { checkpoint: ck, seed: SEED + 3, out: dir.join("samples.csv"), ..Default::default() })?;
    let target = cmd_generate(&GenerateArgs { run: Overrides { seed: Some(SEED + 1), ..run }, out: Some(dir.join("target.csv")) })?;
    let r = cmd_eval(&EvalArgs { samples, target, group: Some("so2".into()), seed: SEED, out: dir.join("eval.json"), ..Default::default() })?;
    let _ = std::fs::remove_dir_all(&dir);
    Ok(Outcome::new(r.normalized_w2, 0.49, format!("train/sample/generate/eval on mog2d under SO(2)xR+: normalized W2 {:.3} ({} samples)", r.normalized_w2, r.n_samples)))
}

fn main() {
    // `cargo test` passes harness flags; only run when not listing tests.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let start = Instant::now();
    println!("acceptance run, seed {SEED}");
    let mut results = Vec::new();
    results.push(timed("criterion 1", "identity suite", || identity_suite(1000, SEED)));
    results.push(timed("criterion 2", "forward closed form vs Euler-Maruyama", forward_equivalence));
    results.push(timed("criterion 3", "plane dilation closed form", closed_form));
    results.push(timed("criterion 4", "oracle-score sampling", oracle));
    results.push(timed("criterion 5", "translation reduction", || translation_reduction(1000, SEED)));

    let toy_start = Instant::now();
    let rows = toy_runs();
    let toy = toy_table(&rows);
    line("criterion 6", "trained toys vs table", &toy, toy_start.elapsed().as_secs_f64());
    results.push(toy.clone());

    results.push(timed("criterion 7", "structured operators", structured));
    let score_mog = rows.iter().find(|r| r.dataset == "mog2d" && r.group.starts_with("SO(2)")).and_then(|r| r.outcome.as_ref().ok()).map(|o| o.w2.normalized_w2);
    results.push(timed("criterion 8", "flow matching", || flow_matching(score_mog)));
    results.push(timed("criterion 9", "angular bridge", bridge));
    results.push(timed("criterion 10", "parameter gradients", || gradient_check(SEED)));

    line("extra", "loss decrease on toy runs", &loss_decrease(&rows), 0.0);
    timed("extra", "score symmetry on radial data", || score_symmetry(lie_diffuse::constants::TRAIN_STEPS, SEED));
    timed("extra", "command-line toy run", cli_end_to_end);

    let passed = results.iter().filter(|o| o.pass).count();
    println!("acceptance: {passed}/{} criteria pass ({:.0}s)", results.len(), start.elapsed().as_secs_f64());
}
