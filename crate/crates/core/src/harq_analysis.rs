//! Closed-form performance of an IR-HARQ policy with unreliable feedback.
//!
//! Indexing: round `k` (1-based in the docs) is slot `k - 1` of every vector.
//! `p_fail[k - 1]` is `P_{k,f}`, the probability that decoding still fails
//! after `k` rounds; `P_{0,f} = 1`. Feedback slot `i` (after round `i`,
//! `i < M`) has error rates `p_nack[i - 1]` and `p_ack[i - 1]`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::check_probability;
use crate::feedback_model::{error_rates_for, FeedbackErrorRates, FeedbackSpec};
use crate::mi_model::{DownlinkSpec, FailureModel};
use crate::{Error, Result};

/// Which expression is used for the unreliable-feedback outage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutageFormula {
    /// `1 - (1 - sum_i P_{N,i} P_{i,f} prod_{j<i}(1 - P_{N,j})) (1 - P_{M,f})`.
    ///
    /// Counts the reliable outage `P_{M,f}` without discounting the episodes
    /// that already stopped early, so it sits slightly above the exact value.
    #[default]
    Published,
    /// Premature-stop mass plus `P_{M,f} prod_{j<M}(1 - P_{N,j})`.
    Exact,
}

/// How the duplicated-ACK baseline is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DupAckMode {
    /// The transmitter stops only after ACK is detected after two consecutive
    /// rounds. The round sent after the first ACK costs downlink symbols.
    #[default]
    ExtraRound,
    /// Each feedback slot is repeated; the transmitter stops when both copies
    /// read ACK. Effective rates `P_N^2` and `1 - (1 - P_A)^2`, no extra
    /// downlink symbols.
    RepeatedSlot,
}

/// Block geometry and per-round rate bounds shared by every policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodeGeometry {
    /// Information bits per block, `N_b`.
    pub n_b: u32,
    /// Mother codeword length, `N_m`.
    pub n_m: u32,
    pub rho_min: f64,
    pub rho_max: f64,
}

impl CodeGeometry {
    pub fn new(n_b: u32, n_m: u32, rho_min: f64, rho_max: f64) -> Result<Self> {
        if n_b == 0 {
            return Err(Error::invalid("n_b", "must be positive"));
        }
        if n_m < n_b {
            return Err(Error::invalid("n_m", format!("{n_m} is below n_b = {n_b}")));
        }
        if !(rho_min > 0.0 && rho_min <= rho_max && rho_max.is_finite()) {
            return Err(Error::invalid(
                "rho bounds",
                format!("need 0 < rho_min <= rho_max, got [{rho_min}, {rho_max}]"),
            ));
        }
        Ok(CodeGeometry {
            n_b,
            n_m,
            rho_min,
            rho_max,
        })
    }

    /// Largest admissible `sum rho`, `N_m / N_b`.
    pub fn total_rho(&self) -> f64 {
        self.n_m as f64 / self.n_b as f64
    }
}

/// Rates of every round plus the detection threshold of every feedback slot.
#[derive(Debug, Clone, PartialEq)]
pub struct HarqPolicy {
    rhos: Vec<f64>,
    alphas: Vec<f64>,
    geometry: CodeGeometry,
}

const RATE_SLACK: f64 = 1e-9;

impl HarqPolicy {
    pub fn new(rhos: Vec<f64>, alphas: Vec<f64>, geometry: CodeGeometry) -> Result<Self> {
        if rhos.is_empty() {
            return Err(Error::invalid("rhos", "need at least one round"));
        }
        if alphas.len() + 1 != rhos.len() {
            return Err(Error::invalid(
                "alphas",
                format!("{} rounds need {} thresholds, got {}", rhos.len(), rhos.len() - 1, alphas.len()),
            ));
        }
        let lo = geometry.rho_min * (1.0 - RATE_SLACK);
        let hi = geometry.rho_max * (1.0 + RATE_SLACK);
        for (k, &r) in rhos.iter().enumerate() {
            if !(r >= lo && r <= hi) {
                return Err(Error::invalid(
                    "rhos",
                    format!(
                        "round {} rate {r} outside [{}, {}]",
                        k + 1,
                        geometry.rho_min,
                        geometry.rho_max
                    ),
                ));
            }
        }
        let total: f64 = rhos.iter().sum();
        if total > geometry.total_rho() * (1.0 + RATE_SLACK) {
            return Err(Error::invalid(
                "rhos",
                format!("sum {total} exceeds N_m/N_b = {}", geometry.total_rho()),
            ));
        }
        if let Some(a) = alphas.iter().find(|a| !a.is_finite()) {
            return Err(Error::invalid("alphas", format!("thresholds must be finite, got {a}")));
        }
        Ok(HarqPolicy {
            rhos,
            alphas,
            geometry,
        })
    }

    pub fn rhos(&self) -> &[f64] {
        &self.rhos
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn geometry(&self) -> &CodeGeometry {
        &self.geometry
    }

    /// Maximum number of rounds `M`.
    pub fn m_max(&self) -> usize {
        self.rhos.len()
    }

    pub fn n_b(&self) -> u32 {
        self.geometry.n_b
    }

    pub fn with_alphas(&self, alphas: Vec<f64>) -> Result<Self> {
        Self::new(self.rhos.clone(), alphas, self.geometry)
    }

    pub fn with_rhos(&self, rhos: Vec<f64>) -> Result<Self> {
        Self::new(rhos, self.alphas.clone(), self.geometry)
    }
}

/// Full analytic evaluation of a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceBreakdown {
    /// `P_{k,f}`, k = 1..M.
    pub p_fail: Vec<f64>,
    /// `P_i`, probability that round i is transmitted.
    pub p_occur: Vec<f64>,
    /// Per-stage outage used by the stage-wise recursion. `None` where the
    /// stage is unreachable or the protocol has no such decomposition. The
    /// middle stages divide a cumulative quantity by `P_k` and can exceed 1.
    pub p_out_stage: Vec<Option<f64>>,
    pub p_out_unreliable: f64,
    /// `P_{M,f}`, the outage with error-free feedback.
    pub p_out_reliable: f64,
    /// Expected downlink symbols per block.
    pub expected_symbols: f64,
    /// Delivered information bits per downlink channel use.
    pub throughput: f64,
}

fn check_lengths(p_fail: &[f64], p_nack: &[f64], p_ack: Option<&[f64]>) -> Result<()> {
    let m = p_fail.len();
    if m == 0 {
        return Err(Error::invalid("p_fail", "empty"));
    }
    let need = m - 1;
    if p_nack.len() < need || p_ack.is_some_and(|a| a.len() < need) {
        return Err(Error::invalid(
            "feedback error rates",
            format!("{m} rounds need {need} feedback slots"),
        ));
    }
    Ok(())
}

#[inline]
fn fail_before(p_fail: &[f64], k: usize) -> f64 {
    // P_{k,f} with P_{0,f} = 1.
    if k == 0 {
        1.0
    } else {
        p_fail[k - 1]
    }
}

#[inline]
fn nack_err(p_nack: &[f64], k: usize) -> f64 {
    // P_{N,k} with P_{N,0} = 0.
    if k == 0 {
        0.0
    } else {
        p_nack[k - 1]
    }
}

/// `P_i` for i = 1..M, term by term:
///
/// `P_i = P_{i-1,f} prod_{j=1}^{i-1}(1 - P_{N,j})
///      + sum_{j=1}^{i-1} (P_{i-j-1,f} - P_{i-j,f}) prod_{k=0}^{i-j-1}(1 - P_{N,k}) prod_{k=i-j}^{i-1} P_{A,k}`.
pub fn occurrence_probabilities(p_fail: &[f64], p_nack: &[f64], p_ack: &[f64]) -> Result<Vec<f64>> {
    check_lengths(p_fail, p_nack, Some(p_ack))?;
    let m = p_fail.len();
    let mut out = Vec::with_capacity(m);
    out.push(1.0);
    for i in 2..=m {
        let mut still_failing = fail_before(p_fail, i - 1);
        for j in 1..i {
            still_failing *= 1.0 - p_nack[j - 1];
        }
        let mut decoded_earlier = 0.0;
        for j in 1..i {
            let first_success = fail_before(p_fail, i - j - 1) - fail_before(p_fail, i - j);
            let mut correct_nacks = 1.0;
            for k in 0..i - j {
                correct_nacks *= 1.0 - nack_err(p_nack, k);
            }
            let mut flipped_acks = 1.0;
            for k in i - j..i {
                flipped_acks *= p_ack[k - 1];
            }
            decoded_earlier += first_success * correct_nacks * flipped_acks;
        }
        out.push(check_probability("P_i", still_failing + decoded_earlier)?);
    }
    Ok(out)
}

/// Probability mass of premature stops: `sum_{i=1}^{M-1} P_{N,i} P_{i,f} prod_{j<i}(1 - P_{N,j})`.
fn premature_stop_mass(p_fail: &[f64], p_nack: &[f64]) -> f64 {
    let m = p_fail.len();
    let mut total = 0.0;
    let mut kept = 1.0;
    for i in 1..m {
        total += p_nack[i - 1] * p_fail[i - 1] * kept;
        kept *= 1.0 - p_nack[i - 1];
    }
    total
}

/// Outage with the published expression (see [`OutageFormula::Published`]).
pub fn outage_published(p_fail: &[f64], p_nack: &[f64]) -> Result<f64> {
    check_lengths(p_fail, p_nack, None)?;
    let early = premature_stop_mass(p_fail, p_nack);
    let last = p_fail[p_fail.len() - 1];
    check_probability("P_out", 1.0 - (1.0 - early) * (1.0 - last))
}

/// Exact outage of the single-feedback protocol.
pub fn outage_exact(p_fail: &[f64], p_nack: &[f64]) -> Result<f64> {
    check_lengths(p_fail, p_nack, None)?;
    let m = p_fail.len();
    let early = premature_stop_mass(p_fail, p_nack);
    let kept: f64 = p_nack[..m - 1].iter().map(|p| 1.0 - p).product();
    check_probability("P_out", early + p_fail[m - 1] * kept)
}

/// Outage with the chosen expression.
pub fn outage_with(formula: OutageFormula, p_fail: &[f64], p_nack: &[f64]) -> Result<f64> {
    match formula {
        OutageFormula::Published => outage_published(p_fail, p_nack),
        OutageFormula::Exact => outage_exact(p_fail, p_nack),
    }
}

/// Stage outage for round `k` (1-based):
/// `P_{N,1} P_{1,f}` for `k = 1 < M`, the cumulative premature-stop mass up to
/// `k` divided by `P_k` for middle rounds, and `P_{M,f} / P_M` for `k = M`.
pub fn stage_outage_at(k: usize, p_fail: &[f64], p_nack: &[f64], p_occur: &[f64]) -> Result<f64> {
    let m = p_fail.len();
    check_lengths(p_fail, p_nack, None)?;
    if k == 0 || k > m || p_occur.len() != m {
        return Err(Error::invalid("stage", format!("round {k} of {m}")));
    }
    if k == m {
        if p_occur[k - 1] <= 0.0 {
            return Err(Error::DegenerateState { round: k });
        }
        return Ok(p_fail[m - 1] / p_occur[m - 1]);
    }
    if k == 1 {
        return Ok(p_nack[0] * p_fail[0]);
    }
    if p_occur[k - 1] <= 0.0 {
        return Err(Error::DegenerateState { round: k });
    }
    Ok(premature_stop_mass(&p_fail[..=k], p_nack) / p_occur[k - 1])
}

/// Expected symbols `sum_i rho_i N_b P_i`.
pub fn expected_symbols(policy: &HarqPolicy, p_occur: &[f64]) -> Result<f64> {
    symbols_of(policy.rhos(), policy.n_b(), p_occur)
}

fn symbols_of(rhos: &[f64], n_b: u32, p_occur: &[f64]) -> Result<f64> {
    if rhos.len() != p_occur.len() {
        return Err(Error::invalid(
            "p_occur",
            format!("{} rounds but {} occurrence probabilities", rhos.len(), p_occur.len()),
        ));
    }
    Ok(rhos
        .iter()
        .zip(p_occur)
        .map(|(r, p)| r * n_b as f64 * p)
        .sum())
}

/// Assembles a [`PerformanceBreakdown`] from failure probabilities and
/// feedback error rates. Every probability is range-checked.
pub fn breakdown_from_parts(
    rhos: &[f64],
    n_b: u32,
    p_fail: &[f64],
    rates: &FeedbackErrorRates,
    formula: OutageFormula,
) -> Result<PerformanceBreakdown> {
    if rhos.len() != p_fail.len() {
        return Err(Error::invalid("p_fail", "length differs from the number of rounds"));
    }
    for &p in p_fail {
        check_probability("P_{k,f}", p)?;
    }
    let p_occur = occurrence_probabilities(p_fail, &rates.p_nack, &rates.p_ack)?;
    let p_out_unreliable = outage_with(formula, p_fail, &rates.p_nack)?;
    let p_out_stage = (1..=rhos.len())
        .map(|k| stage_outage_at(k, p_fail, &rates.p_nack, &p_occur).ok())
        .collect();
    let expected_symbols = symbols_of(rhos, n_b, &p_occur)?;
    let throughput = n_b as f64 / expected_symbols * (1.0 - p_out_unreliable);
    Ok(PerformanceBreakdown {
        p_fail: p_fail.to_vec(),
        p_occur,
        p_out_stage,
        p_out_unreliable,
        p_out_reliable: p_fail[p_fail.len() - 1],
        expected_symbols,
        throughput,
    })
}

/// How a policy is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AnalysisOptions {
    pub failure: FailureModel,
    pub outage: OutageFormula,
}

/// Evaluates `policy` against explicit feedback error rates.
pub fn evaluate(
    policy: &HarqPolicy,
    dl: &DownlinkSpec,
    rates: &FeedbackErrorRates,
    options: AnalysisOptions,
) -> Result<PerformanceBreakdown> {
    let p_fail = options.failure.p_fail(policy.rhos(), dl)?;
    breakdown_from_parts(policy.rhos(), policy.n_b(), &p_fail, rates, options.outage)
}

/// Throughput with error-free feedback, `(1 - P_{M,f}) / sum_i rho_i P_{i-1,f}`.
pub fn reliable_throughput(policy: &HarqPolicy, dl: &DownlinkSpec) -> Result<f64> {
    let p_fail = FailureModel::Gaussian.p_fail(policy.rhos(), dl)?;
    let cost: f64 = policy
        .rhos()
        .iter()
        .enumerate()
        .map(|(i, r)| r * fail_before(&p_fail, i))
        .sum();
    Ok((1.0 - p_fail[p_fail.len() - 1]) / cost)
}

/// `P_out` with the published expression and Gaussian failure probabilities.
pub fn unreliable_outage(policy: &HarqPolicy, dl: &DownlinkSpec, rates: &FeedbackErrorRates) -> Result<f64> {
    let p_fail = FailureModel::Gaussian.p_fail(policy.rhos(), dl)?;
    outage_published(&p_fail, &rates.p_nack)
}

/// `P_1..P_M` with Gaussian failure probabilities.
pub fn transmission_probabilities(
    policy: &HarqPolicy,
    dl: &DownlinkSpec,
    rates: &FeedbackErrorRates,
) -> Result<Vec<f64>> {
    let p_fail = FailureModel::Gaussian.p_fail(policy.rhos(), dl)?;
    occurrence_probabilities(&p_fail, &rates.p_nack, &rates.p_ack)
}

/// Stage outages of every round; fails on an unreachable round.
pub fn stage_outage(
    policy: &HarqPolicy,
    dl: &DownlinkSpec,
    rates: &FeedbackErrorRates,
    p_occur: &[f64],
) -> Result<Vec<f64>> {
    let p_fail = FailureModel::Gaussian.p_fail(policy.rhos(), dl)?;
    (1..=policy.m_max())
        .map(|k| stage_outage_at(k, &p_fail, &rates.p_nack, p_occur))
        .collect()
}

/// Full breakdown with the policy's own thresholds on uplink `fb`.
///
/// The thresholds in `fb` are ignored; those of `policy` are used.
pub fn unreliable_throughput(
    policy: &HarqPolicy,
    dl: &DownlinkSpec,
    fb: &FeedbackSpec,
) -> Result<PerformanceBreakdown> {
    let rates = policy_rates(policy, fb)?;
    evaluate(policy, dl, &rates, AnalysisOptions::default())
}

/// Error rates of `policy`'s thresholds on the uplink of `fb`.
pub fn policy_rates(policy: &HarqPolicy, fb: &FeedbackSpec) -> Result<FeedbackErrorRates> {
    Ok(error_rates_for(&fb.with_alphas(policy.alphas().to_vec())?))
}

/// Effective per-slot error rates when every feedback slot is sent twice and
/// the transmitter stops only if both copies read ACK.
pub fn repeated_slot_rates(rates: &FeedbackErrorRates) -> FeedbackErrorRates {
    FeedbackErrorRates {
        p_nack: rates.p_nack.iter().map(|p| p * p).collect(),
        p_ack: rates.p_ack.iter().map(|p| 1.0 - (1.0 - p) * (1.0 - p)).collect(),
    }
}

/// Largest `M` accepted by the path enumeration of the duplicated-ACK baseline.
pub const MAX_ENUMERATED_ROUNDS: usize = 16;

/// Duplicated-ACK baseline with symmetric detection (all thresholds 0).
pub fn duplicated_ack_performance(
    policy: &HarqPolicy,
    dl: &DownlinkSpec,
    fb: &FeedbackSpec,
    mode: DupAckMode,
    options: AnalysisOptions,
) -> Result<PerformanceBreakdown> {
    let symmetric = fb.with_alphas(vec![0.0; policy.m_max() - 1])?;
    let rates = error_rates_for(&symmetric);
    let p_fail = options.failure.p_fail(policy.rhos(), dl)?;
    duplicated_ack_from_parts(policy.rhos(), policy.n_b(), &p_fail, &rates, mode, options.outage)
}

/// [`duplicated_ack_performance`] from failure probabilities and per-slot
/// rates of a single feedback copy.
pub fn duplicated_ack_from_parts(
    rhos: &[f64],
    n_b: u32,
    p_fail: &[f64],
    rates: &FeedbackErrorRates,
    mode: DupAckMode,
    formula: OutageFormula,
) -> Result<PerformanceBreakdown> {
    match mode {
        DupAckMode::RepeatedSlot => {
            breakdown_from_parts(rhos, n_b, p_fail, &repeated_slot_rates(rates), formula)
        }
        DupAckMode::ExtraRound => extra_round_by_paths(rhos, n_b, p_fail, rates),
    }
}

/// Sums over the first decoding round and every sequence of detected
/// feedback bits.
fn extra_round_by_paths(
    rhos: &[f64],
    n_b: u32,
    p_fail: &[f64],
    rates: &FeedbackErrorRates,
) -> Result<PerformanceBreakdown> {
    let m = p_fail.len();
    check_lengths(p_fail, &rates.p_nack, Some(&rates.p_ack))?;
    if rhos.len() != m {
        return Err(Error::invalid("p_fail", "length differs from the number of rounds"));
    }
    if m > MAX_ENUMERATED_ROUNDS {
        return Err(Error::invalid(
            "m_max",
            format!("duplicated-ACK enumeration supports at most {MAX_ENUMERATED_ROUNDS} rounds"),
        ));
    }
    for &p in p_fail {
        check_probability("P_{k,f}", p)?;
    }
    let slots = m - 1;
    let mut p_occur = vec![0.0; m];
    let mut outage = 0.0;
    // `first_ok` = first round after which decoding succeeds, m + 1 = never.
    for first_ok in 1..=m + 1 {
        let weight = if first_ok == m + 1 {
            p_fail[m - 1]
        } else {
            fail_before(p_fail, first_ok - 1) - p_fail[first_ok - 1]
        };
        if weight <= 0.0 {
            continue;
        }
        for bits in 0u32..(1u32 << slots) {
            let mut prob = weight;
            let mut used = m;
            for slot in 1..=slots {
                let ack_seen = bits >> (slot - 1) & 1 == 1;
                let ack_sent = slot >= first_ok;
                let p_seen_ack = if ack_sent {
                    1.0 - rates.p_ack[slot - 1]
                } else {
                    rates.p_nack[slot - 1]
                };
                prob *= if ack_seen { p_seen_ack } else { 1.0 - p_seen_ack };
                let prev_seen = slot >= 2 && bits >> (slot - 2) & 1 == 1;
                if ack_seen && prev_seen && used == m {
                    used = slot;
                }
            }
            for occ in p_occur.iter_mut().take(used) {
                *occ += prob;
            }
            if first_ok > used {
                outage += prob;
            }
        }
    }
    for p in p_occur.iter_mut() {
        *p = check_probability("P_i", *p)?;
    }
    let p_out_unreliable = check_probability("P_out", outage)?;
    let expected_symbols = symbols_of(rhos, n_b, &p_occur)?;
    let throughput = n_b as f64 / expected_symbols * (1.0 - p_out_unreliable);
    Ok(PerformanceBreakdown {
        p_fail: p_fail.to_vec(),
        p_occur,
        p_out_stage: vec![None; m],
        p_out_unreliable,
        p_out_reliable: p_fail[m - 1],
        expected_symbols,
        throughput,
    })
}

/// Forward recursion over the protocol state, one round at a time.
///
/// This is what the rate optimizer walks along a partial rate allocation. It
/// reproduces the closed forms of this module exactly (up to rounding).
pub trait StopRule {
    type State: Copy;

    /// State before round 1.
    fn start(&self) -> Self::State;

    /// Probability that the next round is transmitted.
    fn occurrence(&self, state: &Self::State) -> f64;

    /// Applies round `round` (0-based): decoding with failure probabilities
    /// `p_prev = P_{k-1,f}` and `p_now = P_{k,f}`, then feedback unless the
    /// round is the last one.
    fn advance(&self, state: &Self::State, round: usize, p_prev: f64, p_now: f64, last: bool) -> Self::State;

    /// Lower bound on the final outage given the rounds applied so far.
    fn outage_floor(&self, state: &Self::State) -> f64;

    /// Outage after the last round has been applied.
    fn outage(&self, state: &Self::State) -> f64;
}

#[inline]
fn hazard(p_prev: f64, p_now: f64) -> f64 {
    if p_prev > 0.0 {
        (p_now / p_prev).min(1.0)
    } else {
        0.0
    }
}

/// One feedback bit per round, threshold detection.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleFeedback {
    pub rates: FeedbackErrorRates,
    pub formula: OutageFormula,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleState {
    /// Not decoded and still transmitting.
    failing: f64,
    /// Decoded and still transmitting (an ACK was misread).
    decoded: f64,
    /// Stopped early on a misread NACK.
    stopped_failing: f64,
    last_fail: f64,
}

impl StopRule for SingleFeedback {
    type State = SingleState;

    fn start(&self) -> SingleState {
        SingleState {
            failing: 1.0,
            decoded: 0.0,
            stopped_failing: 0.0,
            last_fail: 1.0,
        }
    }

    #[inline]
    fn occurrence(&self, s: &SingleState) -> f64 {
        s.failing + s.decoded
    }

    #[inline]
    fn advance(&self, s: &SingleState, round: usize, p_prev: f64, p_now: f64, last: bool) -> SingleState {
        let h = hazard(p_prev, p_now);
        let failing = s.failing * h;
        let decoded = s.decoded + s.failing * (1.0 - h);
        if last {
            return SingleState {
                failing,
                decoded,
                stopped_failing: s.stopped_failing,
                last_fail: p_now,
            };
        }
        let pn = self.rates.p_nack[round];
        SingleState {
            failing: failing * (1.0 - pn),
            decoded: decoded * self.rates.p_ack[round],
            stopped_failing: s.stopped_failing + failing * pn,
            last_fail: p_now,
        }
    }

    #[inline]
    fn outage_floor(&self, s: &SingleState) -> f64 {
        s.stopped_failing
    }

    #[inline]
    fn outage(&self, s: &SingleState) -> f64 {
        match self.formula {
            OutageFormula::Published => 1.0 - (1.0 - s.stopped_failing) * (1.0 - s.last_fail),
            OutageFormula::Exact => s.stopped_failing + s.failing,
        }
    }
}

/// Duplicated-ACK baseline in [`DupAckMode::ExtraRound`] form.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtraRoundAck {
    pub rates: FeedbackErrorRates,
}

/// Masses indexed by `[decoded][previous detection was ACK]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtraRoundState {
    mass: [[f64; 2]; 2],
    stopped_failing: f64,
}

impl StopRule for ExtraRoundAck {
    type State = ExtraRoundState;

    fn start(&self) -> ExtraRoundState {
        ExtraRoundState {
            mass: [[1.0, 0.0], [0.0, 0.0]],
            stopped_failing: 0.0,
        }
    }

    #[inline]
    fn occurrence(&self, s: &ExtraRoundState) -> f64 {
        s.mass[0][0] + s.mass[0][1] + s.mass[1][0] + s.mass[1][1]
    }

    fn advance(&self, s: &ExtraRoundState, round: usize, p_prev: f64, p_now: f64, last: bool) -> ExtraRoundState {
        let h = hazard(p_prev, p_now);
        let mut m = [[0.0; 2]; 2];
        for flag in 0..2 {
            m[0][flag] = s.mass[0][flag] * h;
            m[1][flag] = s.mass[1][flag] + s.mass[0][flag] * (1.0 - h);
        }
        if last {
            return ExtraRoundState {
                mass: m,
                stopped_failing: s.stopped_failing,
            };
        }
        let pn = self.rates.p_nack[round];
        let pa = self.rates.p_ack[round];
        let mut next = [[0.0; 2]; 2];
        let mut stopped_failing = s.stopped_failing;
        // Not decoded: ACK is seen with probability pn.
        next[0][0] = (m[0][0] + m[0][1]) * (1.0 - pn);
        next[0][1] = m[0][0] * pn;
        stopped_failing += m[0][1] * pn;
        // Decoded: ACK is seen with probability 1 - pa.
        next[1][0] = (m[1][0] + m[1][1]) * pa;
        next[1][1] = m[1][0] * (1.0 - pa);
        ExtraRoundState {
            mass: next,
            stopped_failing,
        }
    }

    #[inline]
    fn outage_floor(&self, s: &ExtraRoundState) -> f64 {
        s.stopped_failing
    }

    #[inline]
    fn outage(&self, s: &ExtraRoundState) -> f64 {
        s.stopped_failing + s.mass[0][0] + s.mass[0][1]
    }
}

/// Walks `rule` over a full rate vector and returns `(P_1..P_M, P_out)`.
pub fn run_stop_rule<R: StopRule>(rule: &R, p_fail: &[f64]) -> (Vec<f64>, f64) {
    let m = p_fail.len();
    let mut state = rule.start();
    let mut occ = Vec::with_capacity(m);
    let mut prev = 1.0;
    for (k, &p) in p_fail.iter().enumerate() {
        occ.push(rule.occurrence(&state));
        state = rule.advance(&state, k, prev, p, k + 1 == m);
        prev = p;
    }
    (occ, rule.outage(&state))
}
