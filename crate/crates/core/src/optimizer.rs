//! Rate and threshold optimization under an outage constraint.
//!
//! The rate subproblem minimizes the Lagrangian `sum_i rho_i P_i + lambda P_out`
//! over allocations of mother-code units by a depth-first dynamic program
//! over rate prefixes; `lambda` is tuned by bisection until the outage meets
//! `epsilon`. Thresholds are improved by projected gradient ascent on the
//! throughput, and the two steps alternate.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::feedback_model::{error_rates_for, FeedbackErrorRates, FeedbackSpec};
use crate::harq_analysis::{
    breakdown_from_parts, duplicated_ack_from_parts, occurrence_probabilities, outage_with,
    repeated_slot_rates, CodeGeometry, DupAckMode, ExtraRoundAck, HarqPolicy, OutageFormula,
    PerformanceBreakdown, SingleFeedback, StopRule,
};
use crate::mi_model::{p_fail_gaussian, DownlinkSpec, RateVector};
use crate::{Error, Result};

/// Tuning of every optimization step.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    /// Outage limit.
    pub epsilon: f64,
    /// Number of mother-code units the codeword is split into.
    pub units_total: usize,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    /// Bisection stops when the bracket is narrower than this fraction of its
    /// upper end.
    pub lambda_tol: f64,
    /// How many times `lambda_hi` may be doubled while still infeasible.
    pub lambda_doublings: u32,
    /// Initial step length of the threshold ascent, in threshold units.
    pub pgd_step: f64,
    pub pgd_tol: f64,
    pub pgd_max_iters: usize,
    /// Finite-difference step for threshold gradients.
    pub pgd_fd_step: f64,
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub alt_max_iters: usize,
    pub alt_tol: f64,
    /// Units per round of the default starting point; `None` means
    /// `units_total / (2 M)`.
    pub init_units: Option<usize>,
    pub init_alpha: f64,
    pub outage_formula: OutageFormula,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            epsilon: 0.01,
            units_total: 64,
            lambda_lo: 0.0,
            lambda_hi: 1e6,
            lambda_tol: 1e-6,
            lambda_doublings: 20,
            pgd_step: 0.25,
            pgd_tol: 1e-6,
            pgd_max_iters: 200,
            pgd_fd_step: 1e-4,
            alpha_lo: 0.0,
            alpha_hi: 3.0,
            alt_max_iters: 50,
            alt_tol: 1e-7,
            init_units: None,
            init_alpha: 0.5,
            outage_formula: OutageFormula::Published,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self, m_max: usize) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::invalid("epsilon", format!("must lie in (0, 1), got {}", self.epsilon)));
        }
        if self.units_total < m_max {
            return Err(Error::invalid(
                "units_total",
                format!("{} units cannot cover {m_max} rounds", self.units_total),
            ));
        }
        if !(self.lambda_lo >= 0.0 && self.lambda_lo < self.lambda_hi && self.lambda_hi.is_finite()) {
            return Err(Error::invalid(
                "optimizer.lambda",
                format!("need 0 <= lambda_lo < lambda_hi, got [{}, {}]", self.lambda_lo, self.lambda_hi),
            ));
        }
        if !(self.lambda_tol > 0.0) {
            return Err(Error::invalid("optimizer.lambda_tol", "must be positive"));
        }
        if !(self.alpha_lo <= self.alpha_hi && self.alpha_lo.is_finite() && self.alpha_hi.is_finite()) {
            return Err(Error::invalid(
                "optimizer.alpha_box",
                format!("need alpha_lo <= alpha_hi, got [{}, {}]", self.alpha_lo, self.alpha_hi),
            ));
        }
        if !(self.pgd_step > 0.0 && self.pgd_tol > 0.0 && self.pgd_fd_step > 0.0) {
            return Err(Error::invalid("optimizer.pgd", "step sizes and tolerance must be positive"));
        }
        if !(self.alt_tol >= 0.0) {
            return Err(Error::invalid("optimizer.alt_tol", "must be non-negative"));
        }
        Ok(())
    }
}

/// Discrete rate lattice: every round sends a whole number of units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateGrid {
    /// Rate of one unit, `N_m / (units_total N_b)`.
    pub unit_rho: f64,
    pub min_units: usize,
    pub max_units: usize,
    pub units_total: usize,
}

impl RateGrid {
    /// Lattice of `geometry` split into `units_total` units.
    pub fn new(geometry: &CodeGeometry, units_total: usize) -> Result<Self> {
        if units_total == 0 {
            return Err(Error::invalid("units_total", "must be positive"));
        }
        let unit_rho = geometry.total_rho() / units_total as f64;
        let min_units = libm::ceil(geometry.rho_min / unit_rho - 1e-9).max(1.0) as usize;
        let max_units = (libm::floor(geometry.rho_max / unit_rho + 1e-9) as usize).min(units_total);
        Self::from_units(unit_rho, min_units, max_units, units_total)
    }

    pub fn from_units(unit_rho: f64, min_units: usize, max_units: usize, units_total: usize) -> Result<Self> {
        if !(unit_rho > 0.0 && unit_rho.is_finite()) {
            return Err(Error::invalid("rate grid", format!("unit rate must be positive, got {unit_rho}")));
        }
        if min_units == 0 || min_units > max_units || max_units > units_total {
            return Err(Error::invalid(
                "rate grid",
                format!("need 1 <= min_units <= max_units <= units_total, got {min_units}, {max_units}, {units_total}"),
            ));
        }
        Ok(RateGrid {
            unit_rho,
            min_units,
            max_units,
            units_total,
        })
    }

    pub fn rhos_of(&self, units: &[usize]) -> Vec<f64> {
        units.iter().map(|&u| u as f64 * self.unit_rho).collect()
    }

    /// Nearest admissible unit count for a rate.
    pub fn units_of(&self, rho: f64) -> usize {
        (libm::round(rho / self.unit_rho) as usize).clamp(self.min_units, self.max_units)
    }

    /// Number of allocations of `m` rounds.
    pub fn count_allocations(&self, m: usize) -> u64 {
        // ways[s] = allocations of the rounds so far using exactly s units.
        let mut ways = vec![0u64; self.units_total + 1];
        ways[0] = 1;
        for _ in 0..m {
            let mut next = vec![0u64; self.units_total + 1];
            for (s, &w) in ways.iter().enumerate() {
                if w == 0 {
                    continue;
                }
                for u in self.min_units..=self.max_units {
                    if s + u > self.units_total {
                        break;
                    }
                    next[s + u] = next[s + u].saturating_add(w);
                }
            }
            ways = next;
        }
        ways.iter().fold(0u64, |a, &w| a.saturating_add(w))
    }

    fn check_rounds(&self, m: usize) -> Result<()> {
        if m == 0 || m * self.min_units > self.units_total {
            return Err(Error::EmptyGrid {
                rounds: m,
                min_units: self.min_units,
                units_total: self.units_total,
            });
        }
        Ok(())
    }
}

/// Gaussian `P_{k,f}` for every reachable pair `(sum units, sum units^2)`.
#[derive(Debug, Clone)]
pub struct FailureTable {
    rows: Vec<Vec<f64>>,
}

impl FailureTable {
    pub fn new(dl: &DownlinkSpec, grid: &RateGrid) -> Self {
        let u = grid.unit_rho;
        let cap = grid.units_total * grid.units_total;
        let rows = (0..=grid.units_total)
            .map(|s1| {
                if s1 == 0 {
                    return vec![1.0];
                }
                let hi = (s1 * s1).min(cap);
                (s1..=hi)
                    .map(|s2| dl.gaussian_fail(s1 as f64 * u, s2 as f64 * u * u))
                    .collect()
            })
            .collect();
        FailureTable { rows }
    }

    #[inline]
    pub fn get(&self, sum_units: usize, sum_sq_units: usize) -> f64 {
        if sum_units == 0 {
            1.0
        } else {
            self.rows[sum_units][sum_sq_units - sum_units]
        }
    }
}

/// A rate allocation and its Lagrangian.
#[derive(Debug, Clone, PartialEq)]
pub struct RateAllocation {
    pub units: Vec<usize>,
    pub rhos: Vec<f64>,
    /// `cost + lambda * outage`.
    pub value: f64,
    /// `sum_i rho_i P_i`.
    pub cost: f64,
    pub outage: f64,
}

#[derive(Debug, Clone, Copy)]
struct Incumbent {
    value: f64,
    total_units: usize,
}

#[inline]
fn tie_tolerance(best: f64) -> f64 {
    1e-12 * best.abs().max(1.0)
}

impl Incumbent {
    /// True if a leaf with `value` and `total_units` replaces the incumbent.
    /// Leaves are scanned in lexicographic order, so on a tie the earlier
    /// (lexicographically smaller) one is kept unless the new one uses fewer
    /// units.
    #[inline]
    fn beaten_by(&self, value: f64, total_units: usize) -> bool {
        let tol = tie_tolerance(self.value);
        value < self.value - tol || (value <= self.value + tol && total_units < self.total_units)
    }
}

struct Search<'a, R: StopRule> {
    lambda: f64,
    table: &'a FailureTable,
    rule: &'a R,
    grid: &'a RateGrid,
    m: usize,
    units: Vec<usize>,
    best: Option<(Incumbent, Vec<usize>, f64, f64)>,
}

impl<R: StopRule> Search<'_, R> {
    fn visit(&mut self, depth: usize, state: &R::State, s1: usize, s2: usize, cost: f64, p_prev: f64) {
        let g = self.grid;
        let remaining = self.m - depth - 1;
        let budget = g.units_total - s1 - remaining * g.min_units;
        let hi = g.max_units.min(budget);
        let occ = self.rule.occurrence(state);
        let last = remaining == 0;
        for u in g.min_units..=hi {
            let rho = u as f64 * g.unit_rho;
            let cost_next = cost + rho * occ;
            let (n1, n2) = (s1 + u, s2 + u * u);
            let p_now = self.table.get(n1, n2).min(p_prev);
            let next = self.rule.advance(state, depth, p_prev, p_now, last);
            self.units[depth] = u;
            if last {
                let outage = self.rule.outage(&next);
                let value = cost_next + self.lambda * outage;
                let replace = match &self.best {
                    None => true,
                    Some((inc, ..)) => inc.beaten_by(value, n1),
                };
                if replace {
                    self.best = Some((
                        Incumbent {
                            value,
                            total_units: n1,
                        },
                        self.units.clone(),
                        cost_next,
                        outage,
                    ));
                }
                continue;
            }
            if let Some((inc, ..)) = &self.best {
                let floor = cost_next
                    + g.min_units as f64 * g.unit_rho * self.rule.occurrence(&next)
                    + self.lambda * self.rule.outage_floor(&next);
                if floor * (1.0 - 1e-12) > inc.value + tie_tolerance(inc.value) {
                    continue;
                }
            }
            self.visit(depth + 1, &next, n1, n2, cost_next, p_now);
        }
    }
}

/// Minimizes `cost + lambda * outage` for an arbitrary stop rule.
///
/// The search walks rate prefixes depth first in lexicographic order and
/// prunes a prefix when its accumulated cost, the cheapest possible next
/// round and the outage already committed exceed the incumbent.
pub fn search_rates<R: StopRule>(
    lambda: f64,
    table: &FailureTable,
    rule: &R,
    grid: &RateGrid,
    m: usize,
) -> Result<RateAllocation> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid("lambda", format!("must be finite and >= 0, got {lambda}")));
    }
    grid.check_rounds(m)?;
    let mut search = Search {
        lambda,
        table,
        rule,
        grid,
        m,
        units: vec![0; m],
        best: None,
    };
    search.visit(0, &rule.start(), 0, 0, 0.0, 1.0);
    let (inc, units, cost, outage) = search.best.ok_or(Error::EmptyGrid {
        rounds: m,
        min_units: grid.min_units,
        units_total: grid.units_total,
    })?;
    Ok(RateAllocation {
        rhos: grid.rhos_of(&units),
        units,
        value: inc.value,
        cost,
        outage,
    })
}

/// Rate allocation minimizing the Lagrangian with single-bit feedback.
pub fn dp_rate_allocation(
    lambda: f64,
    dl: &DownlinkSpec,
    rates: &FeedbackErrorRates,
    grid: &RateGrid,
    m: usize,
    formula: OutageFormula,
) -> Result<RateAllocation> {
    check_rates_len(rates, m)?;
    let table = FailureTable::new(dl, grid);
    let rule = SingleFeedback {
        rates: rates.clone(),
        formula,
    };
    search_rates(lambda, &table, &rule, grid, m)
}

fn check_rates_len(rates: &FeedbackErrorRates, m: usize) -> Result<()> {
    if m == 0 || rates.len() + 1 < m {
        return Err(Error::invalid(
            "feedback error rates",
            format!("{m} rounds need {} feedback slots, got {}", m.saturating_sub(1), rates.len()),
        ));
    }
    Ok(())
}

/// Largest number of allocations the exhaustive search accepts.
pub const BRUTE_FORCE_LIMIT: u64 = 10_000_000;

/// Exhaustive counterpart of [`dp_rate_allocation`], evaluating every
/// allocation with the closed forms of [`crate::harq_analysis`] and the same
/// scan order and tie rule.
pub fn brute_force_rate_allocation(
    lambda: f64,
    dl: &DownlinkSpec,
    rates: &FeedbackErrorRates,
    grid: &RateGrid,
    m: usize,
    formula: OutageFormula,
) -> Result<RateAllocation> {
    check_rates_len(rates, m)?;
    grid.check_rounds(m)?;
    let candidates = grid.count_allocations(m);
    if candidates > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge {
            candidates,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let mut best: Option<(Incumbent, RateAllocation)> = None;
    let mut units = vec![grid.min_units; m];
    loop {
        let total: usize = units.iter().sum();
        if total <= grid.units_total {
            let rhos = grid.rhos_of(&units);
            let p_fail = p_fail_gaussian(&RateVector::new(rhos.clone())?, dl);
            let occ = occurrence_probabilities(&p_fail, &rates.p_nack, &rates.p_ack)?;
            let outage = outage_with(formula, &p_fail, &rates.p_nack)?;
            let cost: f64 = rhos.iter().zip(&occ).map(|(r, p)| r * p).sum();
            let value = cost + lambda * outage;
            let replace = match &best {
                None => true,
                Some((inc, _)) => inc.beaten_by(value, total),
            };
            if replace {
                best = Some((
                    Incumbent {
                        value,
                        total_units: total,
                    },
                    RateAllocation {
                        units: units.clone(),
                        rhos,
                        value,
                        cost,
                        outage,
                    },
                ));
            }
        }
        // Odometer in lexicographic order, last round fastest.
        let mut k = m;
        loop {
            if k == 0 {
                return best.map(|(_, a)| a).ok_or(Error::EmptyGrid {
                    rounds: m,
                    min_units: grid.min_units,
                    units_total: grid.units_total,
                });
            }
            k -= 1;
            if units[k] < grid.max_units {
                units[k] += 1;
                for later in units.iter_mut().skip(k + 1) {
                    *later = grid.min_units;
                }
                break;
            }
        }
    }
}

/// One evaluation of the rate subproblem during the multiplier search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaProbe {
    pub lambda: f64,
    pub outage: f64,
    pub cost: f64,
}

/// Result of the multiplier search.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSolution {
    pub allocation: RateAllocation,
    pub lambda: f64,
    /// Every probed multiplier in probing order.
    pub probes: Vec<LambdaProbe>,
}

/// Multiplier large enough that the search minimizes outage first.
const OUTAGE_FIRST_LAMBDA: f64 = 1e12;

/// Smallest outage over the rate grid (ties broken by cost).
pub fn min_outage<R: StopRule>(table: &FailureTable, rule: &R, grid: &RateGrid, m: usize) -> Result<RateAllocation> {
    search_rates(OUTAGE_FIRST_LAMBDA, table, rule, grid, m)
}

/// Bisection on `lambda` for an arbitrary stop rule. The returned allocation
/// always meets `epsilon`.
pub fn solve_lambda_with<R: StopRule>(
    table: &FailureTable,
    rule: &R,
    grid: &RateGrid,
    m: usize,
    config: &OptimizerConfig,
) -> Result<LambdaSolution> {
    config.validate(m)?;
    let eps = config.epsilon;
    let mut probes = Vec::new();
    let probe = |lambda: f64, probes: &mut Vec<LambdaProbe>| -> Result<RateAllocation> {
        let a = search_rates(lambda, table, rule, grid, m)?;
        probes.push(LambdaProbe {
            lambda,
            outage: a.outage,
            cost: a.cost,
        });
        Ok(a)
    };
    let low = probe(config.lambda_lo, &mut probes)?;
    if low.outage <= eps {
        return Ok(LambdaSolution {
            allocation: low,
            lambda: config.lambda_lo,
            probes,
        });
    }
    let mut lo = config.lambda_lo;
    let mut hi = config.lambda_hi;
    let mut feasible = probe(hi, &mut probes)?;
    let mut doublings = 0;
    while feasible.outage > eps {
        if doublings == config.lambda_doublings {
            let floor = min_outage(table, rule, grid, m)?;
            if floor.outage <= eps {
                // Reachable only beyond the doubled bracket; take the
                // outage-first allocation.
                return Ok(LambdaSolution {
                    allocation: floor,
                    lambda: OUTAGE_FIRST_LAMBDA,
                    probes,
                });
            }
            return Err(Error::Infeasible {
                min_outage: floor.outage,
                epsilon: eps,
            });
        }
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        feasible = probe(hi, &mut probes)?;
    }
    while hi - lo > config.lambda_tol * hi.max(1e-300) && feasible.outage < eps * (1.0 - 1e-3) {
        let mid = 0.5 * (lo + hi);
        let a = probe(mid, &mut probes)?;
        if a.outage <= eps {
            hi = mid;
            feasible = a;
        } else {
            lo = mid;
        }
    }
    Ok(LambdaSolution {
        allocation: feasible,
        lambda: hi,
        probes,
    })
}

/// Multiplier search with single-bit feedback at the thresholds `alphas`.
pub fn solve_lambda(
    alphas: &[f64],
    dl: &DownlinkSpec,
    fb: &FeedbackSpec,
    grid: &RateGrid,
    config: &OptimizerConfig,
) -> Result<LambdaSolution> {
    let m = alphas.len() + 1;
    let rates = error_rates_for(&fb.with_alphas(alphas.to_vec())?);
    let table = FailureTable::new(dl, grid);
    let rule = SingleFeedback {
        rates,
        formula: config.outage_formula,
    };
    solve_lambda_with(&table, &rule, grid, m, config)
}

/// Throughput and outage of fixed rates as a function of the thresholds.
struct ThresholdObjective<'a> {
    rhos: &'a [f64],
    n_b: u32,
    p_fail: Vec<f64>,
    fb: &'a FeedbackSpec,
    formula: OutageFormula,
}

impl ThresholdObjective<'_> {
    fn eval(&self, alphas: &[f64]) -> Result<PerformanceBreakdown> {
        let rates = error_rates_for(&self.fb.with_alphas(alphas.to_vec())?);
        breakdown_from_parts(self.rhos, self.n_b, &self.p_fail, &rates, self.formula)
    }

    fn outage(&self, alphas: &[f64]) -> Result<f64> {
        Ok(self.eval(alphas)?.p_out_unreliable)
    }
}

/// Outcome of the threshold optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSolution {
    pub alphas: Vec<f64>,
    pub throughput: f64,
    pub outage: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Smallest `t` in `[0, 1]` with `feasible(t)`, given that `feasible(1)` holds
/// and feasibility is monotone in `t`.
fn bisect_feasible<F: FnMut(f64) -> Result<bool>>(mut feasible: F) -> Result<f64> {
    if feasible(0.0)? {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
}

fn norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

/// Maximizes throughput over the thresholds for fixed rates subject to the
/// outage limit, by projected gradient ascent in the box
/// `[alpha_lo, alpha_hi]`.
///
/// The start is the better of `warm` (if feasible) and the best common
/// threshold. Gradients are central differences. When the outage constraint
/// is active the ascent direction is projected on its tangent plane; an
/// infeasible trial point is pulled back toward the upper box corner until
/// feasible. A trial is accepted only if it raises throughput, otherwise the
/// step is halved.
pub fn optimize_thresholds_pgd(
    rhos: &[f64],
    n_b: u32,
    dl: &DownlinkSpec,
    fb: &FeedbackSpec,
    config: &OptimizerConfig,
    warm: Option<&[f64]>,
) -> Result<ThresholdSolution> {
    let m = rhos.len();
    config.validate(m)?;
    let slots = m - 1;
    let obj = ThresholdObjective {
        rhos,
        n_b,
        p_fail: p_fail_gaussian(&RateVector::new(rhos.to_vec())?, dl),
        fb,
        formula: config.outage_formula,
    };
    let eps = config.epsilon;
    let (lo_b, hi_b) = (config.alpha_lo, config.alpha_hi);
    let corner = vec![hi_b; slots];
    let corner_outage = obj.outage(&corner)?;
    if corner_outage > eps {
        return Err(Error::Infeasible {
            min_outage: corner_outage,
            epsilon: eps,
        });
    }
    if slots == 0 {
        let b = obj.eval(&[])?;
        return Ok(ThresholdSolution {
            alphas: vec![],
            throughput: b.throughput,
            outage: b.p_out_unreliable,
            iterations: 0,
            converged: true,
        });
    }

    let (mut x, mut eta) = best_uniform(&obj, lo_b, hi_b, slots, eps)?;
    if let Some(w) = warm {
        if w.len() == slots {
            let w: Vec<f64> = w.iter().map(|a| a.clamp(lo_b, hi_b)).collect();
            let b = obj.eval(&w)?;
            if b.p_out_unreliable <= eps && b.throughput > eta {
                x = w;
                eta = b.throughput;
            }
        }
    }

    let restore = |y: Vec<f64>| -> Result<Vec<f64>> {
        if obj.outage(&y)? <= eps {
            return Ok(y);
        }
        let t = bisect_feasible(|t| Ok(obj.outage(&lerp(&y, &corner, t))? <= eps))?;
        Ok(lerp(&y, &corner, t))
    };

    let h = config.pgd_fd_step;
    let mut step = config.pgd_step;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.pgd_max_iters {
        iterations += 1;
        let mut grad = vec![0.0; slots];
        let mut grad_out = vec![0.0; slots];
        for i in 0..slots {
            let mut up = x.clone();
            let mut down = x.clone();
            up[i] = (x[i] + h).min(hi_b);
            down[i] = (x[i] - h).max(lo_b);
            let width = up[i] - down[i];
            if width <= 0.0 {
                continue;
            }
            let (bu, bd) = (obj.eval(&up)?, obj.eval(&down)?);
            grad[i] = (bu.throughput - bd.throughput) / width;
            grad_out[i] = (bu.p_out_unreliable - bd.p_out_unreliable) / width;
        }
        let active = obj.outage(&x)? >= eps * (1.0 - 1e-6);
        let mut dir = grad.clone();
        if active {
            let along: f64 = dir.iter().zip(&grad_out).map(|(a, b)| a * b).sum();
            let gg: f64 = grad_out.iter().map(|v| v * v).sum();
            if along > 0.0 && gg > 0.0 {
                for (d, g) in dir.iter_mut().zip(&grad_out) {
                    *d -= along / gg * g;
                }
            }
        }
        for i in 0..slots {
            if (x[i] <= lo_b && dir[i] < 0.0) || (x[i] >= hi_b && dir[i] > 0.0) {
                dir[i] = 0.0;
            }
        }
        let len = norm(&dir);
        if !(len > 0.0) {
            converged = true;
            break;
        }
        let mut accepted = None;
        let mut t = step;
        for _ in 0..=30 {
            let trial: Vec<f64> = x
                .iter()
                .zip(&dir)
                .map(|(xi, di)| (xi + t * di / len).clamp(lo_b, hi_b))
                .collect();
            let trial = restore(trial)?;
            let b = obj.eval(&trial)?;
            if b.p_out_unreliable <= eps && b.throughput > eta {
                accepted = Some((trial, b.throughput));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            None => {
                converged = true;
                break;
            }
            Some((next, value)) => {
                let moved = norm(&lerp(&x, &next, 1.0).iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>());
                x = next;
                eta = value;
                step = (2.0 * t).min(config.pgd_step);
                if moved < config.pgd_tol {
                    converged = true;
                    break;
                }
            }
        }
    }
    let b = obj.eval(&x)?;
    Ok(ThresholdSolution {
        alphas: x,
        throughput: b.throughput,
        outage: b.p_out_unreliable,
        iterations,
        converged,
    })
}

/// Best common threshold: the smallest feasible one, refined by a
/// golden-section search on the feasible interval.
fn best_uniform(obj: &ThresholdObjective<'_>, lo: f64, hi: f64, slots: usize, eps: f64) -> Result<(Vec<f64>, f64)> {
    let at = |a: f64| vec![a; slots];
    let t = bisect_feasible(|t| Ok(obj.outage(&at(lo + t * (hi - lo)))? <= eps))?;
    let a_min = lo + t * (hi - lo);
    let eta_of = |a: f64| -> Result<f64> {
        let b = obj.eval(&at(a))?;
        Ok(if b.p_out_unreliable <= eps { b.throughput } else { f64::NEG_INFINITY })
    };
    let mut best = (a_min, eta_of(a_min)?);
    const INV_PHI: f64 = 0.618_033_988_749_895;
    let (mut a, mut b) = (a_min, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (eta_of(c)?, eta_of(d)?);
    for _ in 0..60 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = eta_of(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = eta_of(d)?;
        }
    }
    for (p, v) in [(c, fc), (d, fd)] {
        if v > best.1 {
            best = (p, v);
        }
    }
    Ok((at(best.0), best.1))
}

/// Result of the alternating optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub policy: HarqPolicy,
    pub lambda_star: f64,
    pub breakdown: PerformanceBreakdown,
    pub iterations: usize,
    pub converged: bool,
    pub feasible: bool,
    /// Throughput after each outer iteration.
    pub trace: Vec<f64>,
}

/// The default starting point: `units_total / (2 M)` units per round (or
/// `config.init_units`) and every threshold at `config.init_alpha`.
pub fn default_start(geometry: &CodeGeometry, m: usize, config: &OptimizerConfig) -> Result<HarqPolicy> {
    let grid = RateGrid::new(geometry, config.units_total)?;
    let units = config
        .init_units
        .unwrap_or(config.units_total / (2 * m))
        .clamp(grid.min_units, grid.max_units);
    HarqPolicy::new(
        vec![units as f64 * grid.unit_rho; m],
        vec![config.init_alpha; m - 1],
        *geometry,
    )
}

fn feasible_eta(b: &PerformanceBreakdown, eps: f64) -> Option<f64> {
    (b.p_out_unreliable <= eps).then_some(b.throughput)
}

/// Alternates the rate step (multiplier search) and the threshold step
/// (projected gradient) from `start` until throughput stops improving.
///
/// Either step is kept only if it raises throughput, so the trace is
/// non-decreasing. If the rate step is infeasible at the starting thresholds,
/// the common threshold is raised to the smallest value at which some rate
/// allocation meets the outage limit.
pub fn alternating_optimize(
    dl: &DownlinkSpec,
    fb: &FeedbackSpec,
    start: &HarqPolicy,
    config: &OptimizerConfig,
) -> Result<Solution> {
    let m = start.m_max();
    config.validate(m)?;
    let geometry = *start.geometry();
    let grid = RateGrid::new(&geometry, config.units_total)?;
    let table = FailureTable::new(dl, &grid);
    let eps = config.epsilon;
    let evaluate = |p: &HarqPolicy| -> Result<PerformanceBreakdown> {
        let rates = error_rates_for(&fb.with_alphas(p.alphas().to_vec())?);
        let p_fail = p_fail_gaussian(&RateVector::new(p.rhos().to_vec())?, dl);
        breakdown_from_parts(p.rhos(), p.n_b(), &p_fail, &rates, config.outage_formula)
    };
    let rate_step = |alphas: &[f64]| -> Result<LambdaSolution> {
        let rule = SingleFeedback {
            rates: error_rates_for(&fb.with_alphas(alphas.to_vec())?),
            formula: config.outage_formula,
        };
        solve_lambda_with(&table, &rule, &grid, m, config)
    };

    let mut policy = start.clone();
    let mut breakdown = evaluate(&policy)?;
    let mut objective = feasible_eta(&breakdown, eps);
    let mut lambda_star = f64::NAN;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=config.alt_max_iters {
        iterations = it;
        let wrap = |e: Error| Error::AtIteration {
            iteration: it,
            source: alloc::boxed::Box::new(e),
        };
        let lambda_sol = match rate_step(policy.alphas()) {
            Ok(s) => s,
            Err(e) if it == 1 && e.is_infeasible() && m > 1 => {
                let raised = raise_common_threshold(dl, fb, &grid, &table, m, config, policy.alphas()).map_err(wrap)?;
                policy = policy.with_alphas(raised).map_err(wrap)?;
                rate_step(policy.alphas()).map_err(wrap)?
            }
            Err(e) => return Err(wrap(e)),
        };
        if lambda_sol.allocation.rhos == policy.rhos() {
            lambda_star = lambda_sol.lambda;
        }
        let candidate = policy.with_rhos(lambda_sol.allocation.rhos.clone()).map_err(wrap)?;
        let cb = evaluate(&candidate).map_err(wrap)?;
        if let Some(v) = feasible_eta(&cb, eps) {
            if objective.is_none_or(|o| v > o) {
                policy = candidate;
                breakdown = cb;
                objective = Some(v);
                lambda_star = lambda_sol.lambda;
            }
        }

        if m > 1 {
            match optimize_thresholds_pgd(policy.rhos(), policy.n_b(), dl, fb, config, Some(policy.alphas())) {
                Ok(ts) => {
                    let candidate = policy.with_alphas(ts.alphas).map_err(wrap)?;
                    let cb = evaluate(&candidate).map_err(wrap)?;
                    if let Some(v) = feasible_eta(&cb, eps) {
                        if objective.is_none_or(|o| v > o) {
                            policy = candidate;
                            breakdown = cb;
                            objective = Some(v);
                        }
                    }
                }
                Err(e) if e.is_infeasible() && objective.is_some() => {}
                Err(e) => return Err(wrap(e)),
            }
        }

        let Some(current) = objective else {
            return Err(wrap(Error::Infeasible {
                min_outage: breakdown.p_out_unreliable,
                epsilon: eps,
            }));
        };
        let previous = trace.last().copied();
        trace.push(current);
        let reference = previous.or(if it == 1 { feasible_eta(&evaluate(start).map_err(wrap)?, eps) } else { None });
        if let Some(prev) = reference {
            if current - prev < config.alt_tol {
                converged = true;
                break;
            }
        }
    }
    let feasible = breakdown.p_out_unreliable <= eps;
    Ok(Solution {
        policy,
        lambda_star,
        breakdown,
        iterations,
        converged,
        feasible,
        trace,
    })
}

/// Smallest common threshold above the current ones at which the rate grid
/// contains an allocation meeting the outage limit.
fn raise_common_threshold(
    _dl: &DownlinkSpec,
    fb: &FeedbackSpec,
    grid: &RateGrid,
    table: &FailureTable,
    m: usize,
    config: &OptimizerConfig,
    current: &[f64],
) -> Result<Vec<f64>> {
    let from = current.iter().copied().fold(config.alpha_lo, f64::max).min(config.alpha_hi);
    let min_out = |a: f64| -> Result<f64> {
        let rule = SingleFeedback {
            rates: error_rates_for(&fb.with_alphas(vec![a; m - 1])?),
            formula: config.outage_formula,
        };
        Ok(min_outage(table, &rule, grid, m)?.outage)
    };
    let top = min_out(config.alpha_hi)?;
    if top > config.epsilon {
        return Err(Error::Infeasible {
            min_outage: top,
            epsilon: config.epsilon,
        });
    }
    let (mut lo, mut hi) = (from, config.alpha_hi);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if min_out(mid)? <= config.epsilon {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(vec![hi; m - 1])
}

/// Duplicated-ACK baseline with rates optimized for the outage limit.
/// Detection is symmetric (all thresholds 0).
pub fn optimize_duplicated_ack(
    dl: &DownlinkSpec,
    fb: &FeedbackSpec,
    geometry: &CodeGeometry,
    m: usize,
    mode: DupAckMode,
    config: &OptimizerConfig,
) -> Result<(HarqPolicy, LambdaSolution, PerformanceBreakdown)> {
    config.validate(m)?;
    let grid = RateGrid::new(geometry, config.units_total)?;
    let table = FailureTable::new(dl, &grid);
    let rates = error_rates_for(&fb.with_alphas(vec![0.0; m - 1])?);
    let sol = match mode {
        DupAckMode::ExtraRound => solve_lambda_with(&table, &ExtraRoundAck { rates: rates.clone() }, &grid, m, config)?,
        DupAckMode::RepeatedSlot => {
            let rule = SingleFeedback {
                rates: repeated_slot_rates(&rates),
                formula: config.outage_formula,
            };
            solve_lambda_with(&table, &rule, &grid, m, config)?
        }
    };
    let policy = HarqPolicy::new(sol.allocation.rhos.clone(), vec![0.0; m - 1], *geometry)?;
    let p_fail = p_fail_gaussian(&RateVector::new(policy.rhos().to_vec())?, dl);
    let b = duplicated_ack_from_parts(policy.rhos(), policy.n_b(), &p_fail, &rates, mode, config.outage_formula)?;
    Ok((policy, sol, b))
}

/// Optimized rates at one common threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedAlphaPoint {
    pub alpha: f64,
    /// `None` when no allocation meets the outage limit.
    pub result: Option<(HarqPolicy, PerformanceBreakdown)>,
}

/// Rate optimization at each common threshold of `alphas`.
pub fn scan_fixed_alpha(
    dl: &DownlinkSpec,
    fb: &FeedbackSpec,
    geometry: &CodeGeometry,
    m: usize,
    alphas: &[f64],
    config: &OptimizerConfig,
) -> Result<Vec<FixedAlphaPoint>> {
    config.validate(m)?;
    let grid = RateGrid::new(geometry, config.units_total)?;
    let table = FailureTable::new(dl, &grid);
    alphas
        .iter()
        .map(|&alpha| {
            let rates = error_rates_for(&fb.with_alphas(vec![alpha; m - 1])?);
            let rule = SingleFeedback {
                rates: rates.clone(),
                formula: config.outage_formula,
            };
            match solve_lambda_with(&table, &rule, &grid, m, config) {
                Ok(sol) => {
                    let policy = HarqPolicy::new(sol.allocation.rhos.clone(), vec![alpha; m - 1], *geometry)?;
                    let p_fail = p_fail_gaussian(&RateVector::new(policy.rhos().to_vec())?, dl);
                    let b = breakdown_from_parts(policy.rhos(), policy.n_b(), &p_fail, &rates, config.outage_formula)?;
                    Ok(FixedAlphaPoint {
                        alpha,
                        result: Some((policy, b)),
                    })
                }
                Err(e) if e.is_infeasible() => Ok(FixedAlphaPoint { alpha, result: None }),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// The best feasible point of [`scan_fixed_alpha`] over `points` common
/// thresholds spanning the threshold box, as a starting policy.
pub fn scanned_start(
    dl: &DownlinkSpec,
    fb: &FeedbackSpec,
    geometry: &CodeGeometry,
    m: usize,
    points: usize,
    config: &OptimizerConfig,
) -> Result<HarqPolicy> {
    let alphas = linspace(config.alpha_lo, config.alpha_hi, points);
    let scan = scan_fixed_alpha(dl, fb, geometry, m, &alphas, config)?;
    if let Some((p, _)) = best_fixed_alpha(&scan) {
        return Ok(p.clone());
    }
    let grid = RateGrid::new(geometry, config.units_total)?;
    let floor = min_outage_at_alpha(dl, fb, &grid, m, config.alpha_hi, config.outage_formula)?;
    Err(Error::Infeasible {
        min_outage: floor.outage,
        epsilon: config.epsilon,
    })
}

/// Highest-throughput feasible point of a threshold scan.
pub fn best_fixed_alpha(scan: &[FixedAlphaPoint]) -> Option<(&HarqPolicy, &PerformanceBreakdown)> {
    scan.iter()
        .filter_map(|p| p.result.as_ref())
        .fold(None, |best: Option<&(HarqPolicy, PerformanceBreakdown)>, r| match best {
            Some(b) if b.1.throughput >= r.1.throughput => Some(b),
            _ => Some(r),
        })
        .map(|(p, b)| (p, b))
}

/// Smallest outage over the rate grid at a common threshold.
pub fn min_outage_at_alpha(
    dl: &DownlinkSpec,
    fb: &FeedbackSpec,
    grid: &RateGrid,
    m: usize,
    alpha: f64,
    formula: OutageFormula,
) -> Result<RateAllocation> {
    let table = FailureTable::new(dl, grid);
    let rule = SingleFeedback {
        rates: error_rates_for(&fb.with_alphas(vec![alpha; m.saturating_sub(1)])?),
        formula,
    };
    min_outage(&table, &rule, grid, m)
}

/// `n` evenly spaced points over `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}
