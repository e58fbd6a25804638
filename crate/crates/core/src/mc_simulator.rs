//! Episode-level Monte Carlo of the HARQ protocol.
//!
//! One episode delivers one block: per-round exponential power gains, MI
//! accumulation, the decoder's ACK/NACK, its (mis)detection at the
//! transmitter and the stop decision. Episodes are grouped in fixed-size
//! batches; batch `b` draws from ChaCha8 seeded with the run seed on stream
//! `b`, so results do not depend on how batches are spread over workers.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::feedback_model::{error_rates_for, simulate_detection, FeedbackErrorRates, FeedbackSpec};
use crate::harq_analysis::{DupAckMode, HarqPolicy};
use crate::mi_model::DownlinkSpec;
use crate::{Error, Result};

/// Episodes per random-stream batch.
pub const BATCH_EPISODES: u64 = 16_384;
/// Smallest episode count the estimators accept.
pub const MIN_EPISODES: u64 = 10_000;

/// How feedback errors are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeedbackMode {
    /// Bernoulli flips with the analytic `P_N` / `P_A`.
    #[default]
    AnalyticFlip,
    /// Sequence transmission through AWGN and threshold detection.
    SymbolLevel,
}

/// When the transmitter stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StopCondition {
    /// On the first detected ACK.
    #[default]
    FirstAck,
    /// Duplicated-ACK baseline.
    DuplicatedAck(DupAckMode),
}

/// One feedback observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeedbackEvent {
    pub round: usize,
    pub sent_ack: bool,
    pub detected_ack: bool,
}

/// Result of one episode.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeOutcome {
    pub rounds_used: usize,
    /// Decoded when the transmitter stopped.
    pub delivered: bool,
    pub outage: bool,
    pub symbols_spent: f64,
    pub feedback_events: Vec<FeedbackEvent>,
    /// Whether decoding fails after `k + 1` rounds, evaluated on all `M`
    /// drawn gains whether or not the rounds were sent.
    pub failed_after: Vec<bool>,
}

/// Supplies channel gains and feedback detections to an episode.
pub trait EpisodeDriver {
    /// Power gain of round `round` (0-based).
    fn gain(&mut self, round: usize) -> f64;

    /// Detected bit for a feedback slot after round `round`.
    fn detect(&mut self, round: usize, sent_ack: bool) -> bool;
}

/// Random gains and feedback for one stream.
pub struct RandomDriver<'a, R: Rng> {
    pub rng: &'a mut R,
    pub mode: FeedbackMode,
    pub rates: &'a FeedbackErrorRates,
    pub alphas: &'a [f64],
    pub snr_u_linear: f64,
}

impl<R: Rng> EpisodeDriver for RandomDriver<'_, R> {
    fn gain(&mut self, _round: usize) -> f64 {
        self.rng.sample(Exp1)
    }

    fn detect(&mut self, round: usize, sent_ack: bool) -> bool {
        match self.mode {
            FeedbackMode::AnalyticFlip => {
                let u: f64 = self.rng.random();
                if sent_ack {
                    u >= self.rates.p_ack[round]
                } else {
                    u < self.rates.p_nack[round]
                }
            }
            FeedbackMode::SymbolLevel => {
                simulate_detection(sent_ack, self.alphas[round], self.snr_u_linear, self.rng)
            }
        }
    }
}

/// Runs one episode. All `M` gains are drawn before any feedback.
pub fn run_episode_with<D: EpisodeDriver>(
    rhos: &[f64],
    n_b: u32,
    dl: &DownlinkSpec,
    stop: StopCondition,
    driver: &mut D,
) -> EpisodeOutcome {
    let mut out = EpisodeOutcome::default();
    run_episode_into(rhos, n_b, dl, stop, driver, &mut out);
    out
}

fn run_episode_into<D: EpisodeDriver>(
    rhos: &[f64],
    n_b: u32,
    dl: &DownlinkSpec,
    stop: StopCondition,
    driver: &mut D,
    out: &mut EpisodeOutcome,
) {
    let m = rhos.len();
    out.feedback_events.clear();
    out.failed_after.clear();
    let mut mi = 0.0;
    for (k, &rho) in rhos.iter().enumerate() {
        let g = driver.gain(k);
        mi += rho * libm::log2(1.0 + g * dl.snr_linear);
        out.failed_after.push(mi < 1.0);
    }
    let mut used = m;
    let mut prev_seen_ack = false;
    for k in 0..m - 1 {
        let sent_ack = !out.failed_after[k];
        let stops = match stop {
            StopCondition::FirstAck => {
                let seen = driver.detect(k, sent_ack);
                out.feedback_events.push(FeedbackEvent {
                    round: k,
                    sent_ack,
                    detected_ack: seen,
                });
                seen
            }
            StopCondition::DuplicatedAck(DupAckMode::RepeatedSlot) => {
                let first = driver.detect(k, sent_ack);
                let second = driver.detect(k, sent_ack);
                for seen in [first, second] {
                    out.feedback_events.push(FeedbackEvent {
                        round: k,
                        sent_ack,
                        detected_ack: seen,
                    });
                }
                first && second
            }
            StopCondition::DuplicatedAck(DupAckMode::ExtraRound) => {
                let seen = driver.detect(k, sent_ack);
                out.feedback_events.push(FeedbackEvent {
                    round: k,
                    sent_ack,
                    detected_ack: seen,
                });
                let stops = seen && prev_seen_ack;
                prev_seen_ack = seen;
                stops
            }
        };
        if stops {
            used = k + 1;
            break;
        }
    }
    out.rounds_used = used;
    out.delivered = !out.failed_after[used - 1];
    out.outage = !out.delivered;
    out.symbols_spent = rhos[..used].iter().map(|r| r * n_b as f64).sum();
}

/// One episode with random gains and feedback.
pub fn run_episode<R: Rng>(
    policy: &HarqPolicy,
    dl: &DownlinkSpec,
    fb: &FeedbackSpec,
    rng: &mut R,
    mode: FeedbackMode,
    stop: StopCondition,
) -> Result<EpisodeOutcome> {
    let rates = error_rates_for(&fb.with_alphas(policy.alphas().to_vec())?);
    let mut driver = RandomDriver {
        rng,
        mode,
        rates: &rates,
        alphas: policy.alphas(),
        snr_u_linear: fb.snr_linear,
    };
    Ok(run_episode_with(policy.rhos(), policy.n_b(), dl, stop, &mut driver))
}

/// Integer counts of a set of episodes. Merging is exact, so any split into
/// batches gives the same totals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tally {
    pub episodes: u64,
    pub outages: u64,
    /// Episodes in which round `k + 1` was sent.
    pub reached: Vec<u64>,
    /// Episodes whose decoder fails after `k + 1` rounds (forced continuation).
    pub failed: Vec<u64>,
    /// `by_length[k][d]`: episodes that used `k + 1` rounds and were
    /// delivered (`d = 1`) or not.
    pub by_length: Vec<[u64; 2]>,
    /// Episodes stopped before round `M` while the decoder had failed.
    pub premature_stops: u64,
    /// Per feedback slot: NACKs sent, NACKs read as ACK, ACKs sent, ACKs read as NACK.
    pub nack_sent: Vec<u64>,
    pub nack_flipped: Vec<u64>,
    pub ack_sent: Vec<u64>,
    pub ack_flipped: Vec<u64>,
}

impl Tally {
    pub fn new(m: usize) -> Self {
        let slots = m.saturating_sub(1);
        Tally {
            episodes: 0,
            outages: 0,
            reached: vec![0; m],
            failed: vec![0; m],
            by_length: vec![[0; 2]; m],
            premature_stops: 0,
            nack_sent: vec![0; slots],
            nack_flipped: vec![0; slots],
            ack_sent: vec![0; slots],
            ack_flipped: vec![0; slots],
        }
    }

    pub fn record(&mut self, e: &EpisodeOutcome) {
        let m = self.reached.len();
        self.episodes += 1;
        self.outages += e.outage as u64;
        for r in self.reached.iter_mut().take(e.rounds_used) {
            *r += 1;
        }
        for (c, &f) in self.failed.iter_mut().zip(&e.failed_after) {
            *c += f as u64;
        }
        self.by_length[e.rounds_used - 1][e.delivered as usize] += 1;
        if e.outage && e.rounds_used < m {
            self.premature_stops += 1;
        }
        for ev in &e.feedback_events {
            if ev.sent_ack {
                self.ack_sent[ev.round] += 1;
                self.ack_flipped[ev.round] += !ev.detected_ack as u64;
            } else {
                self.nack_sent[ev.round] += 1;
                self.nack_flipped[ev.round] += ev.detected_ack as u64;
            }
        }
    }

    pub fn merge(&mut self, other: &Tally) {
        fn add(a: &mut [u64], b: &[u64]) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.episodes += other.episodes;
        self.outages += other.outages;
        self.premature_stops += other.premature_stops;
        add(&mut self.reached, &other.reached);
        add(&mut self.failed, &other.failed);
        add(&mut self.nack_sent, &other.nack_sent);
        add(&mut self.nack_flipped, &other.nack_flipped);
        add(&mut self.ack_sent, &other.ack_sent);
        add(&mut self.ack_flipped, &other.ack_flipped);
        for (x, y) in self.by_length.iter_mut().zip(&other.by_length) {
            x[0] += y[0];
            x[1] += y[1];
        }
    }

    /// Point estimates and standard errors for a policy with rates `rhos`.
    pub fn estimate(&self, rhos: &[f64], n_b: u32, seed: u64) -> SimulationEstimate {
        let n = self.episodes as f64;
        let prop = |count: u64| Estimate::proportion(count, self.episodes);
        // Per episode: x = delivered, y = rounds cost sum rho. Throughput is
        // the ratio of means; its standard error by the delta method.
        let mut prefix = 0.0;
        let (mut sx, mut sy, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0);
        for (k, counts) in self.by_length.iter().enumerate() {
            prefix += rhos[k];
            let (c0, c1) = (counts[0] as f64, counts[1] as f64);
            let c = c0 + c1;
            sx += c1;
            sy += c * prefix;
            syy += c * prefix * prefix;
            sxy += c1 * prefix;
        }
        let (mx, my) = (sx / n, sy / n);
        let ratio = mx / my;
        // Var(x - R y) with x^2 = x.
        let var_lin = (sx - 2.0 * ratio * sxy + ratio * ratio * syy) / n - (mx - ratio * my).powi(2);
        let throughput = Estimate {
            value: ratio,
            stderr: libm::sqrt((var_lin.max(0.0)) / n) / my,
        };
        let mean_symbols = my * n_b as f64;
        debug_assert!({
            let from_occurrence: f64 = rhos
                .iter()
                .zip(&self.reached)
                .map(|(r, &c)| r * n_b as f64 * c as f64 / n)
                .sum();
            (from_occurrence - mean_symbols).abs() <= 1e-9 * mean_symbols.max(1.0)
        });
        SimulationEstimate {
            n_episodes: self.episodes,
            seed,
            throughput,
            p_out: prop(self.outages),
            p_occur: self.reached.iter().map(|&c| prop(c)).collect(),
            p_fail: self.failed.iter().map(|&c| prop(c)).collect(),
            p_premature_stop: prop(self.premature_stops),
            mean_symbols,
            p_nack_error: self
                .nack_flipped
                .iter()
                .zip(&self.nack_sent)
                .map(|(&f, &s)| Estimate::proportion(f, s))
                .collect(),
            p_ack_error: self
                .ack_flipped
                .iter()
                .zip(&self.ack_sent)
                .map(|(&f, &s)| Estimate::proportion(f, s))
                .collect(),
        }
    }
}

/// A point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    /// Binomial proportion; NaN when `trials` is zero.
    pub fn proportion(successes: u64, trials: u64) -> Self {
        if trials == 0 {
            return Estimate {
                value: f64::NAN,
                stderr: f64::NAN,
            };
        }
        let p = successes as f64 / trials as f64;
        Estimate {
            value: p,
            stderr: libm::sqrt(p * (1.0 - p) / trials as f64),
        }
    }

    /// `(analytic - value) / stderr`; 0 when both agree exactly.
    pub fn z_score(&self, analytic: f64) -> f64 {
        let d = analytic - self.value;
        if d == 0.0 {
            0.0
        } else {
            d / self.stderr
        }
    }

    /// [`Self::z_score`] for a proportion from `trials` trials. A frequency of
    /// exactly 0 or 1 has no sample spread, so the analytic binomial spread
    /// is used instead.
    pub fn z_score_binomial(&self, analytic: f64, trials: u64) -> f64 {
        if self.stderr > 0.0 {
            return self.z_score(analytic);
        }
        Estimate {
            value: self.value,
            stderr: libm::sqrt((analytic * (1.0 - analytic)).max(0.0) / trials as f64),
        }
        .z_score(analytic)
    }
}

/// Monte Carlo estimates of a policy's performance.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationEstimate {
    pub n_episodes: u64,
    pub seed: u64,
    pub throughput: Estimate,
    pub p_out: Estimate,
    pub p_occur: Vec<Estimate>,
    pub p_fail: Vec<Estimate>,
    pub p_premature_stop: Estimate,
    pub mean_symbols: f64,
    /// Empirical NACK-to-ACK rate per slot.
    pub p_nack_error: Vec<Estimate>,
    /// Empirical ACK-to-NACK rate per slot.
    pub p_ack_error: Vec<Estimate>,
}

/// Everything an episode batch needs.
#[derive(Debug, Clone)]
pub struct SimulationSetup {
    pub rhos: Vec<f64>,
    pub alphas: Vec<f64>,
    pub n_b: u32,
    pub dl: DownlinkSpec,
    pub snr_u_linear: f64,
    pub rates: FeedbackErrorRates,
    pub mode: FeedbackMode,
    pub stop: StopCondition,
}

impl SimulationSetup {
    pub fn new(
        policy: &HarqPolicy,
        dl: &DownlinkSpec,
        fb: &FeedbackSpec,
        mode: FeedbackMode,
        stop: StopCondition,
    ) -> Result<Self> {
        let alphas = match stop {
            StopCondition::FirstAck => policy.alphas().to_vec(),
            StopCondition::DuplicatedAck(_) => vec![0.0; policy.m_max() - 1],
        };
        let rates = error_rates_for(&fb.with_alphas(alphas.clone())?);
        Ok(SimulationSetup {
            rhos: policy.rhos().to_vec(),
            alphas,
            n_b: policy.n_b(),
            dl: *dl,
            snr_u_linear: fb.snr_linear,
            rates,
            mode,
            stop,
        })
    }

    /// Number of batches for `n` episodes.
    pub fn batches(n: u64) -> u64 {
        n.div_ceil(BATCH_EPISODES)
    }

    /// Runs batch `batch` of a run of `n` episodes.
    pub fn run_batch(&self, seed: u64, batch: u64, n: u64) -> Tally {
        let start = batch * BATCH_EPISODES;
        let count = BATCH_EPISODES.min(n.saturating_sub(start));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(batch);
        let mut driver = RandomDriver {
            rng: &mut rng,
            mode: self.mode,
            rates: &self.rates,
            alphas: &self.alphas,
            snr_u_linear: self.snr_u_linear,
        };
        let mut tally = Tally::new(self.rhos.len());
        let mut episode = EpisodeOutcome::default();
        for _ in 0..count {
            run_episode_into(&self.rhos, self.n_b, &self.dl, self.stop, &mut driver, &mut episode);
            tally.record(&episode);
        }
        tally
    }

    /// Runs all batches in order.
    pub fn run(&self, seed: u64, n: u64) -> Result<SimulationEstimate> {
        check_episodes(n)?;
        let mut tally = Tally::new(self.rhos.len());
        for b in 0..Self::batches(n) {
            tally.merge(&self.run_batch(seed, b, n));
        }
        Ok(tally.estimate(&self.rhos, self.n_b, seed))
    }
}

pub fn check_episodes(n: u64) -> Result<()> {
    if n < MIN_EPISODES {
        return Err(Error::invalid(
            "mc.n_episodes",
            format!("need at least {MIN_EPISODES} episodes, got {n}"),
        ));
    }
    Ok(())
}

/// Estimates the performance of `policy` from `n` episodes.
pub fn estimate_performance(
    policy: &HarqPolicy,
    dl: &DownlinkSpec,
    fb: &FeedbackSpec,
    n: u64,
    seed: u64,
    mode: FeedbackMode,
) -> Result<SimulationEstimate> {
    SimulationSetup::new(policy, dl, fb, mode, StopCondition::FirstAck)?.run(seed, n)
}

/// Estimates the duplicated-ACK baseline (thresholds forced to 0).
pub fn estimate_duplicated_ack(
    policy: &HarqPolicy,
    dl: &DownlinkSpec,
    fb: &FeedbackSpec,
    n: u64,
    seed: u64,
    dup: DupAckMode,
    mode: FeedbackMode,
) -> Result<SimulationEstimate> {
    SimulationSetup::new(policy, dl, fb, mode, StopCondition::DuplicatedAck(dup))?.run(seed, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harq_analysis::{
        duplicated_ack_performance, reliable_throughput, unreliable_throughput, AnalysisOptions, CodeGeometry,
    };

    struct Forced {
        gains: Vec<f64>,
        /// `true` inverts the sent bit.
        flips: Vec<bool>,
    }

    impl EpisodeDriver for Forced {
        fn gain(&mut self, round: usize) -> f64 {
            self.gains[round]
        }

        fn detect(&mut self, round: usize, sent_ack: bool) -> bool {
            sent_ack ^ self.flips[round]
        }
    }

    fn policy(rhos: &[f64], alphas: &[f64]) -> HarqPolicy {
        HarqPolicy::new(rhos.to_vec(), alphas.to_vec(), CodeGeometry::new(1024, 4096, 0.0625, 4.0).unwrap()).unwrap()
    }

    fn dl3() -> DownlinkSpec {
        DownlinkSpec::new(3.0).unwrap()
    }

    #[test]
    fn strong_first_round_stops_at_once() {
        let mut d = Forced {
            gains: vec![1e6, 0.0, 0.0, 0.0],
            flips: vec![false; 3],
        };
        let e = run_episode_with(&[0.5, 0.25, 0.25, 0.25], 1024, &dl3(), StopCondition::FirstAck, &mut d);
        assert_eq!(e.rounds_used, 1);
        assert!(e.delivered && !e.outage);
        assert_eq!(e.symbols_spent, 512.0);
    }

    #[test]
    fn dead_channel_uses_every_round() {
        let mut d = Forced {
            gains: vec![0.0; 4],
            flips: vec![false; 3],
        };
        let e = run_episode_with(&[0.5, 0.25, 0.25, 0.25], 1024, &dl3(), StopCondition::FirstAck, &mut d);
        assert_eq!(e.rounds_used, 4);
        assert!(e.outage);
        assert_eq!(e.failed_after, vec![true; 4]);
    }

    #[test]
    fn misread_nack_stops_early() {
        let mut d = Forced {
            gains: vec![0.0; 4],
            flips: vec![true, false, false],
        };
        let e = run_episode_with(&[0.5, 0.25, 0.25, 0.25], 1024, &dl3(), StopCondition::FirstAck, &mut d);
        assert_eq!(e.rounds_used, 1);
        assert!(e.outage);
        assert_eq!(
            e.feedback_events,
            vec![FeedbackEvent {
                round: 0,
                sent_ack: false,
                detected_ack: true
            }]
        );
    }

    #[test]
    fn misread_ack_costs_a_round_but_no_outage() {
        let mut d = Forced {
            gains: vec![1e6, 0.0, 0.0, 0.0],
            flips: vec![true, false, false],
        };
        let e = run_episode_with(&[0.5, 0.25, 0.25, 0.25], 1024, &dl3(), StopCondition::FirstAck, &mut d);
        assert_eq!(e.rounds_used, 2);
        assert!(e.delivered);
        assert_eq!(e.symbols_spent, 768.0);
    }

    #[test]
    fn duplicated_ack_stop_rules() {
        let rhos = [0.5, 0.25, 0.25, 0.25];
        let mut d = Forced {
            gains: vec![1e6, 0.0, 0.0, 0.0],
            flips: vec![false; 3],
        };
        let extra = run_episode_with(&rhos, 1024, &dl3(), StopCondition::DuplicatedAck(DupAckMode::ExtraRound), &mut d);
        assert_eq!(extra.rounds_used, 2);
        let rep = run_episode_with(&rhos, 1024, &dl3(), StopCondition::DuplicatedAck(DupAckMode::RepeatedSlot), &mut d);
        assert_eq!(rep.rounds_used, 1);
        assert_eq!(rep.feedback_events.len(), 2);
        // One misread NACK is not enough to stop either variant.
        let mut d = Forced {
            gains: vec![0.0; 4],
            flips: vec![true, false, false],
        };
        let extra = run_episode_with(&rhos, 1024, &dl3(), StopCondition::DuplicatedAck(DupAckMode::ExtraRound), &mut d);
        assert_eq!(extra.rounds_used, 4);
    }

    #[test]
    fn perfect_feedback_duplicated_slot_matches_single() {
        let rhos = [0.5, 0.25, 0.25, 0.25];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let gains: Vec<f64> = (0..4).map(|_| rng.sample(Exp1)).collect();
            let run = |stop| {
                let mut d = Forced {
                    gains: gains.clone(),
                    flips: vec![false; 3],
                };
                run_episode_with(&rhos, 1024, &dl3(), stop, &mut d)
            };
            let a = run(StopCondition::FirstAck);
            let b = run(StopCondition::DuplicatedAck(DupAckMode::RepeatedSlot));
            assert_eq!((a.rounds_used, a.delivered, a.symbols_spent), (b.rounds_used, b.delivered, b.symbols_spent));
        }
    }

    #[test]
    fn squared_flip_premature_stops() {
        let p = policy(&[0.0625, 0.0625, 0.0625], &[0.0; 2]);
        let dead = DownlinkSpec::new(-40.0).unwrap();
        let fb = FeedbackSpec::new(0.0, vec![]).unwrap();
        for (mode, seed) in [(DupAckMode::RepeatedSlot, 31), (DupAckMode::ExtraRound, 32)] {
            let mut setup = SimulationSetup::new(
                &p,
                &dead,
                &fb,
                FeedbackMode::AnalyticFlip,
                StopCondition::DuplicatedAck(mode),
            )
            .unwrap();
            setup.rates = FeedbackErrorRates::new(vec![0.1; 2], vec![0.1; 2]).unwrap();
            let e = setup.run(seed, 400_000).unwrap();
            // Repeated slots can stop after either of two slots, consecutive
            // ACKs only after the second.
            let target = match mode {
                DupAckMode::RepeatedSlot => 1.0 - 0.99f64 * 0.99,
                DupAckMode::ExtraRound => 0.01,
            };
            assert!(within(&e.p_premature_stop, target, 3.0), "{mode:?}: {:?}", e.p_premature_stop);
        }
    }

    #[test]
    fn deterministic_and_batch_independent() {
        let p = policy(&[0.75, 0.25, 0.25, 0.25], &[0.5; 3]);
        let fb = FeedbackSpec::new(-10.0, vec![]).unwrap();
        let a = estimate_performance(&p, &dl3(), &fb, 40_000, 9, FeedbackMode::AnalyticFlip).unwrap();
        let b = estimate_performance(&p, &dl3(), &fb, 40_000, 9, FeedbackMode::AnalyticFlip).unwrap();
        assert_eq!(a, b);
        let setup = SimulationSetup::new(&p, &dl3(), &fb, FeedbackMode::AnalyticFlip, StopCondition::FirstAck).unwrap();
        let mut reversed = Tally::new(4);
        for batch in (0..SimulationSetup::batches(40_000)).rev() {
            reversed.merge(&setup.run_batch(9, batch, 40_000));
        }
        assert_eq!(reversed.estimate(p.rhos(), 1024, 9), a);
        assert!(estimate_performance(&p, &dl3(), &fb, 100, 9, FeedbackMode::AnalyticFlip).is_err());
    }

    #[test]
    fn degenerate_frequency_uses_analytic_spread() {
        let e = Estimate::proportion(1000, 1000);
        assert!(e.z_score(1.0 - 1e-12).is_infinite());
        assert!(e.z_score_binomial(1.0 - 1e-12, 1000).abs() < 1e-3);
        assert!(e.z_score_binomial(0.9, 1000).abs() > 5.0);
        assert_eq!(e.z_score_binomial(1.0, 1000), 0.0);
    }

    #[test]
    fn perfect_channels_both_ways() {
        let p = policy(&[0.5, 0.25, 0.25, 0.25], &[0.0; 3]);
        let dl = DownlinkSpec::new(80.0).unwrap();
        let fb = FeedbackSpec::new(80.0, vec![]).unwrap();
        let e = estimate_performance(&p, &dl, &fb, 20_000, 1, FeedbackMode::AnalyticFlip).unwrap();
        assert_eq!(e.p_out.value, 0.0);
        assert!((e.throughput.value - 2.0).abs() < 1e-12);
    }

    fn within(est: &Estimate, analytic: f64, k: f64) -> bool {
        (est.value - analytic).abs() <= k * est.stderr
    }

    #[test]
    fn reliable_feedback_matches_analysis() {
        let p = policy(&[0.75, 0.25, 0.25, 0.25], &[0.0; 3]);
        let fb = FeedbackSpec::new(80.0, vec![]).unwrap();
        let e = estimate_performance(&p, &dl3(), &fb, 1_000_000, 3, FeedbackMode::AnalyticFlip).unwrap();
        // The Gaussian failure model is an approximation; compare against
        // the convolution route, which is exact up to discretization.
        let exact = crate::harq_analysis::evaluate(
            &p,
            &dl3(),
            &error_rates_for(&fb.with_alphas(vec![0.0; 3]).unwrap()),
            AnalysisOptions {
                failure: crate::mi_model::FailureModel::Convolution { bins: 4096 },
                ..AnalysisOptions::default()
            },
        )
        .unwrap();
        assert!(within(&e.throughput, exact.throughput, 3.0), "{:?} vs {}", e.throughput, exact.throughput);
        for k in 0..4 {
            assert!(within(&e.p_fail[k], exact.p_fail[k], 3.0));
        }
        let g = reliable_throughput(&p, &dl3()).unwrap();
        assert!((g - exact.throughput).abs() < 0.05);
    }

    #[test]
    fn symbol_level_and_flip_modes_agree() {
        let p = policy(&[0.75, 0.25, 0.25, 0.25], &[0.5; 3]);
        let fb = FeedbackSpec::new(-10.0, vec![]).unwrap();
        let a = estimate_performance(&p, &dl3(), &fb, 200_000, 5, FeedbackMode::AnalyticFlip).unwrap();
        let b = estimate_performance(&p, &dl3(), &fb, 200_000, 6, FeedbackMode::SymbolLevel).unwrap();
        let z = |x: &Estimate, y: &Estimate| (x.value - y.value).abs() / libm::sqrt(x.stderr.powi(2) + y.stderr.powi(2));
        assert!(z(&a.p_out, &b.p_out) < 3.0);
        assert!(z(&a.throughput, &b.throughput) < 3.0);
        for k in 0..3 {
            assert!(z(&a.p_nack_error[k], &b.p_nack_error[k]) < 3.0);
        }
    }

    #[test]
    fn duplicated_ack_matches_analysis() {
        let p = policy(&[0.75, 0.5, 0.5, 0.5], &[0.0; 3]);
        let fb = FeedbackSpec::new(-5.0, vec![]).unwrap();
        let opts = AnalysisOptions {
            failure: crate::mi_model::FailureModel::Convolution { bins: 4096 },
            outage: crate::harq_analysis::OutageFormula::Exact,
        };
        for (seed, mode) in [(21, DupAckMode::ExtraRound), (22, DupAckMode::RepeatedSlot)] {
            let e = estimate_duplicated_ack(&p, &dl3(), &fb, 400_000, seed, mode, FeedbackMode::AnalyticFlip).unwrap();
            let a = duplicated_ack_performance(&p, &dl3(), &fb, mode, opts).unwrap();
            assert!(within(&e.p_out, a.p_out_unreliable, 3.5), "{mode:?}");
            assert!(within(&e.throughput, a.throughput, 3.5), "{mode:?}");
            for k in 0..4 {
                assert!(within(&e.p_occur[k], a.p_occur[k], 3.5), "{mode:?} round {k}");
            }
        }
        let single = unreliable_throughput(&p, &dl3(), &fb).unwrap();
        assert!(single.p_out_unreliable > 0.0);
    }
}
