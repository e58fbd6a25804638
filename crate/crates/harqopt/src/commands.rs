//! The five workflows. Each returns CSV tables; the caller writes them.

use log::{debug, info, warn};
use rayon::prelude::*;

use harq_core::feedback_model::error_rates_for;
use harq_core::harq_analysis::{
    duplicated_ack_performance, evaluate, AnalysisOptions, HarqPolicy, OutageFormula, PerformanceBreakdown,
};
use harq_core::mc_simulator::{Estimate, SimulationEstimate, SimulationSetup, StopCondition, Tally};
use harq_core::mi_model::{round_mi_grid, DownlinkSpec, FailureModel, DEFAULT_CONVOLUTION_BINS};
use harq_core::numerics::{convolve_capped, PdfGrid};
use harq_core::optimizer::{
    alternating_optimize, best_fixed_alpha, default_start, linspace, min_outage_at_alpha, optimize_duplicated_ack,
    scan_fixed_alpha, FixedAlphaPoint, RateGrid, Solution,
};

use crate::config::{InitStrategy, RunConfig, SimStop, SweepKind};
use crate::error::{AppError, Context};
use crate::output::{Row, Table};

fn header_row(cfg: &RunConfig) -> Row {
    let mut r = Row::new();
    r.real("snr_d_db", cfg.snr_d_db).real("snr_u_db", cfg.snr_u_db);
    r
}

/// Policy and breakdown columns; NaN cells when `point` is `None`.
pub fn breakdown_row(cfg: &RunConfig, point: Option<(&HarqPolicy, &PerformanceBreakdown)>) -> Row {
    let m = cfg.m_max;
    let nan = |n: usize| vec![f64::NAN; n];
    let mut r = Row::new();
    match point {
        Some((p, b)) => {
            let stage: Vec<f64> = b.p_out_stage.iter().map(|s| s.unwrap_or(f64::NAN)).collect();
            r.reals("rho", p.rhos())
                .reals("alpha", p.alphas())
                .reals("p_fail", &b.p_fail)
                .reals("p_occur", &b.p_occur)
                .reals("p_out_stage", &stage)
                .real("p_out_unreliable", b.p_out_unreliable)
                .real("p_out_reliable", b.p_out_reliable)
                .real("expected_symbols", b.expected_symbols)
                .real("throughput", b.throughput);
        }
        None => {
            r.reals("rho", &nan(m))
                .reals("alpha", &nan(m - 1))
                .reals("p_fail", &nan(m))
                .reals("p_occur", &nan(m))
                .reals("p_out_stage", &nan(m))
                .real("p_out_unreliable", f64::NAN)
                .real("p_out_reliable", f64::NAN)
                .real("expected_symbols", f64::NAN)
                .real("throughput", f64::NAN);
        }
    }
    r
}

fn capacity(cfg: &RunConfig) -> Result<f64, AppError> {
    Ok(cfg.downlink()?.mean_mi)
}

pub fn analyze_row(cfg: &RunConfig) -> Result<Row, AppError> {
    let policy = cfg.policy()?;
    let dl = cfg.downlink()?;
    let rates = error_rates_for(&cfg.feedback()?.with_alphas(policy.alphas().to_vec()).context("alphas")?);
    let b = evaluate(&policy, &dl, &rates, cfg.analysis).context("analysis")?;
    let mut r = header_row(cfg);
    r.extend(breakdown_row(cfg, Some((&policy, &b))));
    r.real("ergodic_capacity", dl.mean_mi);
    Ok(r)
}

pub fn analyze(cfg: &RunConfig) -> Result<Table, AppError> {
    Ok(Table::from_rows(vec![analyze_row(cfg)?]))
}

/// Rate optimization at each common threshold, one task per threshold.
pub fn par_scan(cfg: &RunConfig, alphas: &[f64]) -> Result<Vec<FixedAlphaPoint>, AppError> {
    let dl = cfg.downlink()?;
    let fb = cfg.feedback()?;
    let geometry = cfg.geometry()?;
    alphas
        .par_iter()
        .map(|&a| {
            scan_fixed_alpha(&dl, &fb, &geometry, cfg.m_max, &[a], &cfg.optimizer)
                .map(|mut v| v.remove(0))
                .context(format!("rate search at alpha = {a}"))
        })
        .collect()
}

/// Result of the optimize workflow at one operating point.
#[derive(Debug, Clone)]
pub struct Optimized {
    pub solution: Solution,
    pub start: HarqPolicy,
    /// Throughput of the starting policy when it meets the outage limit.
    pub start_throughput: Option<f64>,
}

/// Alternating optimization from the configured start. With the scan start,
/// `scan` may carry an already computed threshold scan.
pub fn optimize_point(cfg: &RunConfig, scan: Option<&[FixedAlphaPoint]>) -> Result<Optimized, AppError> {
    let dl = cfg.downlink()?;
    let fb = cfg.feedback()?;
    let geometry = cfg.geometry()?;
    let m = cfg.m_max;
    let uniform = || default_start(&geometry, m, &cfg.optimizer).context("starting policy");
    let (start, start_throughput) = match (cfg.init, m) {
        (InitStrategy::Scan { points }, 2..) => {
            let owned;
            let scan = match scan {
                Some(s) => s,
                None => {
                    owned = par_scan(cfg, &linspace(cfg.optimizer.alpha_lo, cfg.optimizer.alpha_hi, points))?;
                    &owned
                }
            };
            match best_fixed_alpha(scan) {
                Some((p, b)) => (p.clone(), Some(b.throughput)),
                None => {
                    warn!("no common threshold is feasible at snr_u_db = {}; starting from the uniform policy", cfg.snr_u_db);
                    (uniform()?, None)
                }
            }
        }
        _ => (uniform()?, None),
    };
    debug!("start rhos {:?} alphas {:?}", start.rhos(), start.alphas());
    let solution = alternating_optimize(&dl, &fb, &start, &cfg.optimizer).context("optimize")?;
    info!(
        "snr_u_db = {}: throughput {:.6} after {} iterations",
        cfg.snr_u_db, solution.breakdown.throughput, solution.iterations
    );
    Ok(Optimized {
        solution,
        start,
        start_throughput,
    })
}

fn solution_row(cfg: &RunConfig, o: Option<&Optimized>) -> Row {
    let mut r = header_row(cfg);
    r.text("feasible", o.is_some_and(|o| o.solution.feasible));
    r.extend(breakdown_row(cfg, o.map(|o| (&o.solution.policy, &o.solution.breakdown))));
    r.real("lambda_star", o.map_or(f64::NAN, |o| o.solution.lambda_star))
        .text("iterations", o.map_or(0, |o| o.solution.iterations))
        .text("converged", o.is_some_and(|o| o.solution.converged))
        .real("start_throughput", o.and_then(|o| o.start_throughput).unwrap_or(f64::NAN));
    r
}

/// Solution table and per-iteration trace.
pub fn optimize(cfg: &RunConfig) -> Result<(Table, Table), AppError> {
    let o = optimize_point(cfg, None)?;
    let trace = o
        .solution
        .trace
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut r = Row::new();
            r.text("iteration", i + 1).real("throughput", v);
            r
        })
        .collect();
    Ok((Table::from_rows(vec![solution_row(cfg, Some(&o))]), Table::from_rows(trace)))
}

/// Monte Carlo of `policy`, batches spread over the worker pool.
pub fn simulate_policy(cfg: &RunConfig, policy: &HarqPolicy, stop: StopCondition) -> Result<SimulationEstimate, AppError> {
    let setup = SimulationSetup::new(policy, &cfg.downlink()?, &cfg.feedback()?, cfg.mc.feedback_mode, stop)
        .context("simulation setup")?;
    let n = cfg.mc.n_episodes;
    let seed = cfg.mc.seed;
    let tallies: Vec<Tally> = (0..SimulationSetup::batches(n))
        .into_par_iter()
        .map(|b| setup.run_batch(seed, b, n))
        .collect();
    let mut total = Tally::new(policy.m_max());
    for t in &tallies {
        total.merge(t);
    }
    Ok(total.estimate(policy.rhos(), policy.n_b(), seed))
}

fn stop_condition(cfg: &RunConfig) -> StopCondition {
    match cfg.mc.stop {
        SimStop::FirstAck => StopCondition::FirstAck,
        SimStop::DuplicatedAck => StopCondition::DuplicatedAck(cfg.dup_ack),
    }
}

fn estimate_row(e: &SimulationEstimate) -> Row {
    let values = |v: &[Estimate]| v.iter().map(|e| e.value).collect::<Vec<_>>();
    let errors = |v: &[Estimate]| v.iter().map(|e| e.stderr).collect::<Vec<_>>();
    let mut r = Row::new();
    r.text("n_episodes", e.n_episodes)
        .text("seed", e.seed)
        .real("throughput", e.throughput.value)
        .real("throughput_se", e.throughput.stderr)
        .real("p_out", e.p_out.value)
        .real("p_out_se", e.p_out.stderr)
        .real("p_premature_stop", e.p_premature_stop.value)
        .real("mean_symbols", e.mean_symbols)
        .reals("p_occur", &values(&e.p_occur))
        .reals("p_occur_se", &errors(&e.p_occur))
        .reals("p_fail", &values(&e.p_fail))
        .reals("p_fail_se", &errors(&e.p_fail));
    r
}

pub fn simulate_row(cfg: &RunConfig) -> Result<Row, AppError> {
    let policy = cfg.policy()?;
    let e = simulate_policy(cfg, &policy, stop_condition(cfg))?;
    let mut r = header_row(cfg);
    r.reals("rho", policy.rhos()).reals("alpha", policy.alphas()).extend(estimate_row(&e));
    Ok(r)
}

pub fn simulate(cfg: &RunConfig) -> Result<Table, AppError> {
    Ok(Table::from_rows(vec![simulate_row(cfg)?]))
}

/// One analytic-vs-simulation comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub quantity: &'static str,
    pub index: usize,
    pub analytic: f64,
    pub simulated: Estimate,
    pub z: f64,
    /// The same quantity under the optimizer's model (Gaussian failure,
    /// configured outage formula).
    pub optimizer_model: f64,
}

/// Compares the exact analysis (convolution failure probabilities, exact
/// outage) and the optimizer's model against Monte Carlo.
pub fn compare(cfg: &RunConfig) -> Result<Vec<Comparison>, AppError> {
    let policy = cfg.policy()?;
    let dl = cfg.downlink()?;
    let fb = cfg.feedback()?;
    let bins = match cfg.analysis.failure {
        FailureModel::Convolution { bins } => bins,
        FailureModel::Gaussian => DEFAULT_CONVOLUTION_BINS,
    };
    let exact = AnalysisOptions {
        failure: FailureModel::Convolution { bins },
        outage: OutageFormula::Exact,
    };
    let model = AnalysisOptions {
        failure: FailureModel::Gaussian,
        outage: cfg.analysis.outage,
    };
    let stop = stop_condition(cfg);
    let (a, g, rates) = match stop {
        StopCondition::FirstAck => {
            let rates = error_rates_for(&fb.with_alphas(policy.alphas().to_vec()).context("alphas")?);
            (
                evaluate(&policy, &dl, &rates, exact).context("exact analysis")?,
                evaluate(&policy, &dl, &rates, model).context("analysis")?,
                rates,
            )
        }
        StopCondition::DuplicatedAck(mode) => (
            duplicated_ack_performance(&policy, &dl, &fb, mode, exact).context("exact analysis")?,
            duplicated_ack_performance(&policy, &dl, &fb, mode, model).context("analysis")?,
            error_rates_for(&fb.with_alphas(vec![0.0; cfg.m_max - 1]).context("alphas")?),
        ),
    };
    let e = simulate_policy(cfg, &policy, stop)?;
    let n = e.n_episodes;
    let mut out = Vec::new();
    let mut push = |quantity, index, analytic: f64, simulated: Estimate, optimizer_model| {
        let z = simulated.z_score_binomial(analytic, n);
        out.push(Comparison {
            quantity,
            index,
            analytic,
            simulated,
            z,
            optimizer_model,
        });
    };
    push("throughput", 0, a.throughput, e.throughput, g.throughput);
    push("p_out", 0, a.p_out_unreliable, e.p_out, g.p_out_unreliable);
    for k in 0..cfg.m_max {
        push("p_occur", k + 1, a.p_occur[k], e.p_occur[k], g.p_occur[k]);
    }
    for k in 0..cfg.m_max {
        push("p_fail", k + 1, a.p_fail[k], e.p_fail[k], g.p_fail[k]);
    }
    if matches!(stop, StopCondition::FirstAck) {
        for k in 0..cfg.m_max - 1 {
            if e.p_nack_error[k].value.is_finite() {
                push("p_nack_error", k + 1, rates.p_nack[k], e.p_nack_error[k], rates.p_nack[k]);
            }
            if e.p_ack_error[k].value.is_finite() {
                push("p_ack_error", k + 1, rates.p_ack[k], e.p_ack_error[k], rates.p_ack[k]);
            }
        }
    }
    Ok(out)
}

/// Validation table; the second element is the tripwire error when any
/// |z| exceeds the limit.
pub fn validate(cfg: &RunConfig) -> Result<(Table, Option<AppError>), AppError> {
    let rows = compare(cfg)?;
    let limit = cfg.z_limit;
    let bad: Vec<&Comparison> = rows.iter().filter(|c| !(c.z.abs() <= limit)).collect();
    let tripwire = (!bad.is_empty()).then(|| AppError::Tripwire {
        failures: bad.len(),
        limit,
        max_z: bad.iter().map(|c| c.z.abs()).fold(0.0, f64::max),
    });
    let mut table_rows: Vec<Row> = rows
        .iter()
        .map(|c| {
            let mut r = Row::new();
            r.text("quantity", c.quantity)
                .text("index", c.index)
                .real("analytic", c.analytic)
                .real("monte_carlo", c.simulated.value)
                .real("stderr", c.simulated.stderr)
                .real("z", c.z)
                .real("optimizer_model", c.optimizer_model);
            r
        })
        .collect();
    // Gaussian approximation error on this policy's rates.
    for c in rows.iter().filter(|c| c.quantity == "p_fail") {
        let mut r = Row::new();
        r.text("quantity", "p_fail_gaussian_gap")
            .text("index", c.index)
            .real("analytic", (c.optimizer_model - c.analytic).abs())
            .real("monte_carlo", f64::NAN)
            .real("stderr", f64::NAN)
            .real("z", f64::NAN)
            .real("optimizer_model", f64::NAN);
        table_rows.push(r);
    }
    Ok((Table::from_rows(table_rows), tripwire))
}

/// Largest `|gaussian - exact|` failure probability after `k` rounds, for
/// `k = 1..=m`, over every rate multiset whose unit counts are multiples of
/// `stride` (rounds in ascending order, total within the unit budget).
pub fn gaussian_gap(dl: &DownlinkSpec, grid: &RateGrid, m: usize, stride: usize, bins: usize) -> Result<Vec<f64>, AppError> {
    let levels: Vec<usize> = (grid.min_units..=grid.max_units).filter(|u| u % stride == 0).collect();
    let round_grids: Vec<PdfGrid> = levels
        .iter()
        .map(|&u| round_mi_grid(u as f64 * grid.unit_rho, dl, bins))
        .collect::<Result<_, _>>()
        .context("round MI grid")?;
    struct Walk<'a> {
        dl: &'a DownlinkSpec,
        grid: &'a RateGrid,
        levels: &'a [usize],
        round_grids: &'a [PdfGrid],
        m: usize,
        bins: usize,
        gaps: Vec<f64>,
    }
    impl Walk<'_> {
        fn visit(&mut self, depth: usize, from: usize, s1: usize, s2: usize, acc: Option<&PdfGrid>, g_prev: f64, c_prev: f64) -> Result<(), AppError> {
            for li in from..self.levels.len() {
                let u = self.levels[li];
                if s1 + u > self.grid.units_total {
                    break;
                }
                let next = match acc {
                    None => self.round_grids[li].clone(),
                    Some(a) => convolve_capped(a, &self.round_grids[li], self.bins).context("convolution")?,
                };
                let (t1, t2) = (s1 + u, s2 + u * u);
                let unit = self.grid.unit_rho;
                let g = self.dl.gaussian_fail(t1 as f64 * unit, t2 as f64 * unit * unit).min(g_prev);
                let c = next.smoothed_cdf(1.0).clamp(0.0, c_prev);
                self.gaps[depth] = self.gaps[depth].max((g - c).abs());
                if depth + 1 < self.m {
                    self.visit(depth + 1, li, t1, t2, Some(&next), g, c)?;
                }
            }
            Ok(())
        }
    }
    let mut w = Walk {
        dl,
        grid,
        levels: &levels,
        round_grids: &round_grids,
        m,
        bins,
        gaps: vec![0.0; m],
    };
    w.visit(0, 0, 0, 0, None, 1.0, 1.0)?;
    Ok(w.gaps)
}

fn fig3_row(cfg: &RunConfig) -> Result<Row, AppError> {
    let dl = cfg.downlink()?;
    let fb = cfg.feedback()?;
    let grid = cfg.grid()?;
    let mut r = header_row(cfg);
    for &a in &cfg.sweep.alphas {
        let best = min_outage_at_alpha(&dl, &fb, &grid, cfg.m_max, a, cfg.analysis.outage).context("minimum outage")?;
        r.real(format!("min_outage_alpha_{a}"), best.outage);
    }
    Ok(r)
}

/// `Ok(None)` for infeasible operating points.
fn feasible<T>(r: Result<T, AppError>) -> Result<Option<T>, AppError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(AppError::Core { source, context }) if source.is_infeasible() => {
            warn!("{context}: {source}");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

fn fig4_row(cfg: &RunConfig) -> Result<Row, AppError> {
    let opt = feasible(optimize_point(cfg, None))?;
    let dup = feasible(
        optimize_duplicated_ack(
            &cfg.downlink()?,
            &cfg.feedback()?,
            &cfg.geometry()?,
            cfg.m_max,
            cfg.dup_ack,
            &cfg.optimizer,
        )
        .context("duplicated-ACK rates"),
    )?;
    let eta = opt.as_ref().map_or(f64::NAN, |o| o.solution.breakdown.throughput);
    let dup_eta = dup.as_ref().map_or(f64::NAN, |d| d.2.throughput);
    let mut r = header_row(cfg);
    r.real("asymmetric_throughput", eta)
        .real("asymmetric_outage", opt.as_ref().map_or(f64::NAN, |o| o.solution.breakdown.p_out_unreliable))
        .real("dup_ack_throughput", dup_eta)
        .real("dup_ack_outage", dup.as_ref().map_or(f64::NAN, |d| d.2.p_out_unreliable))
        .real("gain", eta - dup_eta)
        .real("ergodic_capacity", capacity(cfg)?);
    Ok(r)
}

fn fig5_row(cfg: &RunConfig) -> Result<Row, AppError> {
    let alphas = linspace(cfg.optimizer.alpha_lo, cfg.optimizer.alpha_hi, cfg.sweep.scan_points);
    let scan = par_scan(cfg, &alphas)?;
    let fixed = scan
        .iter()
        .filter_map(|p| p.result.as_ref().map(|(_, b)| (p.alpha, b.throughput)))
        .fold(None, |best: Option<(f64, f64)>, x| match best {
            Some(b) if b.1 >= x.1 => Some(b),
            _ => Some(x),
        });
    let mut scan_cfg = cfg.clone();
    scan_cfg.init = InitStrategy::Scan {
        points: cfg.sweep.scan_points,
    };
    let var = feasible(optimize_point(&scan_cfg, Some(&scan)))?;
    let fixed_eta = fixed.map_or(f64::NAN, |f| f.1);
    let var_eta = var.as_ref().map_or(f64::NAN, |o| o.solution.breakdown.throughput);
    let mut r = header_row(cfg);
    r.real("best_fixed_alpha", fixed.map_or(f64::NAN, |f| f.0))
        .real("fixed_throughput", fixed_eta)
        .real("variable_throughput", var_eta)
        .real("gain", var_eta - fixed_eta);
    match &var {
        Some(o) => r.reals("variable_alpha", o.solution.policy.alphas()),
        None => r.reals("variable_alpha", &vec![f64::NAN; cfg.m_max - 1]),
    };
    Ok(r)
}

fn gap_row(cfg: &RunConfig) -> Result<Row, AppError> {
    let bins = match cfg.analysis.failure {
        FailureModel::Convolution { bins } => bins,
        FailureModel::Gaussian => DEFAULT_CONVOLUTION_BINS,
    };
    let gaps = gaussian_gap(&cfg.downlink()?, &cfg.grid()?, cfg.m_max, cfg.sweep.gap_stride, bins)?;
    let mut r = Row::new();
    r.real("snr_d_db", cfg.snr_d_db).reals("max_gap", &gaps);
    Ok(r)
}

fn sweep_row(cfg: &RunConfig) -> Result<Row, AppError> {
    match cfg.sweep.kind {
        SweepKind::Analyze => analyze_row(cfg),
        SweepKind::Simulate => simulate_row(cfg),
        SweepKind::Optimize => Ok(solution_row(cfg, feasible(optimize_point(cfg, None))?.as_ref())),
        SweepKind::Fig3 => fig3_row(cfg),
        SweepKind::Fig4 => fig4_row(cfg),
        SweepKind::Fig5 => fig5_row(cfg),
        SweepKind::Gap => gap_row(cfg),
    }
}

/// One row per sweep value, in sweep order.
pub fn sweep(cfg: &RunConfig) -> Result<Table, AppError> {
    if cfg.sweep.values.is_empty() {
        return Err(AppError::field("sweep.values", "required by sweep"));
    }
    let axis = cfg.sweep.axis;
    if axis == crate::config::SweepAxis::Alpha && cfg.m_max < 2 {
        return Err(AppError::field("sweep.axis", "alpha needs m_max >= 2"));
    }
    let rows: Vec<Row> = cfg
        .sweep
        .values
        .par_iter()
        .map(|&v| {
            let point = cfg.at(axis, v);
            point.validate()?;
            sweep_row(&point)
        })
        .collect::<Result<_, _>>()?;
    Ok(Table::from_rows(rows))
}
