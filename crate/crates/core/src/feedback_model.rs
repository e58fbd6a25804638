//! One-bit HARQ feedback over PUCCH format 0 with asymmetric detection.
//!
//! ACK and NACK are two phase rotations of one length-12 base sequence that
//! coincide on six subcarriers and are antipodal on the other six. Coherent
//! detection projects the received sequence on `s_ack - s_nack`, which yields a
//! statistic normalized to `+1` (ACK) and `-1` (NACK) with Gaussian noise of
//! variance `1/(12 snr)`. The transmitter declares ACK when the statistic is
//! at least `alpha`: `alpha > 0` enlarges the NACK region.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::check_probability;
use crate::numerics::erfc_finite;
use crate::{db_to_linear, Error, Result};

/// Subcarriers per PUCCH format 0 symbol.
pub const SEQUENCE_LEN: usize = 12;
/// Positions where the ACK and NACK sequences are antipodal.
pub const ANTIPODAL_POSITIONS: usize = 6;

/// Uplink SNR plus the per-round detection thresholds `alpha_1..alpha_{M-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackSpec {
    pub snr_db: f64,
    pub snr_linear: f64,
    pub alphas: Vec<f64>,
}

impl FeedbackSpec {
    pub fn new(snr_db: f64, alphas: Vec<f64>) -> Result<Self> {
        if !snr_db.is_finite() {
            return Err(Error::invalid("snr_u_db", format!("must be finite, got {snr_db}")));
        }
        let snr_linear = db_to_linear(snr_db);
        if !(snr_linear > 0.0) {
            return Err(Error::invalid("snr_u_db", format!("{snr_db} dB underflows")));
        }
        if let Some(a) = alphas.iter().find(|a| !a.is_finite()) {
            return Err(Error::invalid("alphas", format!("thresholds must be finite, got {a}")));
        }
        Ok(FeedbackSpec {
            snr_db,
            snr_linear,
            alphas,
        })
    }

    /// Same link with different thresholds.
    pub fn with_alphas(&self, alphas: Vec<f64>) -> Result<Self> {
        Self::new(self.snr_db, alphas)
    }
}

/// Per-round conditional error probabilities of the feedback link.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackErrorRates {
    /// `P_{N,i}`: NACK sent, ACK detected.
    pub p_nack: Vec<f64>,
    /// `P_{A,i}`: ACK sent, NACK detected.
    pub p_ack: Vec<f64>,
}

impl FeedbackErrorRates {
    pub fn new(p_nack: Vec<f64>, p_ack: Vec<f64>) -> Result<Self> {
        if p_nack.len() != p_ack.len() {
            return Err(Error::invalid(
                "feedback error rates",
                format!("length mismatch {} vs {}", p_nack.len(), p_ack.len()),
            ));
        }
        for &p in &p_nack {
            check_probability("P_N", p)?;
        }
        for &p in &p_ack {
            check_probability("P_A", p)?;
        }
        Ok(FeedbackErrorRates { p_nack, p_ack })
    }

    /// Error-free feedback for `rounds` feedback slots.
    pub fn perfect(rounds: usize) -> Self {
        FeedbackErrorRates {
            p_nack: alloc::vec![0.0; rounds],
            p_ack: alloc::vec![0.0; rounds],
        }
    }

    pub fn len(&self) -> usize {
        self.p_nack.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_nack.is_empty()
    }
}

fn check_snr(function: &'static str, snr_linear: f64) -> Result<()> {
    if snr_linear > 0.0 && snr_linear.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(function, format!("SNR must be finite and > 0, got {snr_linear}")))
    }
}

/// NACK-to-ACK probability `erfc((1 + alpha) sqrt(6 snr)) / 2`.
pub fn nack_error_rate(alpha: f64, snr_linear: f64) -> Result<f64> {
    check_snr("nack_error_rate", snr_linear)?;
    if alpha.is_nan() {
        return Err(Error::domain("nack_error_rate", "alpha is NaN"));
    }
    Ok(nack_error_rate_unchecked(alpha, snr_linear))
}

/// ACK-to-NACK probability `erfc((1 - alpha) sqrt(6 snr)) / 2`.
pub fn ack_error_rate(alpha: f64, snr_linear: f64) -> Result<f64> {
    check_snr("ack_error_rate", snr_linear)?;
    if alpha.is_nan() {
        return Err(Error::domain("ack_error_rate", "alpha is NaN"));
    }
    Ok(ack_error_rate_unchecked(alpha, snr_linear))
}

#[inline]
pub(crate) fn nack_error_rate_unchecked(alpha: f64, snr_linear: f64) -> f64 {
    let arg = (1.0 + alpha) * libm::sqrt(6.0 * snr_linear);
    if arg.is_infinite() {
        return if arg > 0.0 { 0.0 } else { 1.0 };
    }
    0.5 * erfc_finite(arg)
}

#[inline]
pub(crate) fn ack_error_rate_unchecked(alpha: f64, snr_linear: f64) -> f64 {
    nack_error_rate_unchecked(-alpha, snr_linear)
}

/// Error rates of every feedback slot of `spec`.
pub fn error_rates_for(spec: &FeedbackSpec) -> FeedbackErrorRates {
    let p_nack = spec
        .alphas
        .iter()
        .map(|&a| nack_error_rate_unchecked(a, spec.snr_linear))
        .collect();
    let p_ack = spec
        .alphas
        .iter()
        .map(|&a| ack_error_rate_unchecked(a, spec.snr_linear))
        .collect();
    FeedbackErrorRates { p_nack, p_ack }
}

/// The ACK and NACK sequences.
///
/// The base is a unit-modulus chirp; NACK is the base rotated by
/// `e^{j pi n}`, i.e. a cyclic shift of half the sequence length, which
/// flips the sign of every odd subcarrier.
pub fn build_sequences() -> ([Complex64; SEQUENCE_LEN], [Complex64; SEQUENCE_LEN]) {
    let mut ack = [Complex64::new(0.0, 0.0); SEQUENCE_LEN];
    let mut nack = ack;
    for n in 0..SEQUENCE_LEN {
        let phase = PI * (n * n) as f64 / SEQUENCE_LEN as f64;
        let base = Complex64::new(libm::cos(phase), libm::sin(phase));
        ack[n] = base;
        nack[n] = if n % 2 == 1 { -base } else { base };
    }
    (ack, nack)
}

/// Coherent asymmetric detector with the noise supplied by the caller.
///
/// `noise[j]` is the complex noise on subcarrier `j` (unit variance per
/// subcarrier for the physical model). Returns `true` when ACK is declared.
pub fn detect_with_noise(
    sent_ack: bool,
    alpha: f64,
    snr_linear: f64,
    noise: &[Complex64; SEQUENCE_LEN],
) -> bool {
    let (ack, nack) = build_sequences();
    let amp = libm::sqrt(snr_linear);
    let mut corr = 0.0;
    for j in 0..SEQUENCE_LEN {
        let sent = if sent_ack { ack[j] } else { nack[j] };
        let y = sent * amp + noise[j];
        let d = ack[j] - nack[j];
        corr += (y * d.conj()).re;
    }
    let statistic = corr / (2.0 * ANTIPODAL_POSITIONS as f64 * amp);
    statistic >= alpha
}

/// One feedback transmission through complex AWGN followed by
/// [`detect_with_noise`].
pub fn simulate_detection<R: Rng + ?Sized>(
    sent_ack: bool,
    alpha: f64,
    snr_linear: f64,
    rng: &mut R,
) -> bool {
    let mut noise = [Complex64::new(0.0, 0.0); SEQUENCE_LEN];
    let scale = core::f64::consts::FRAC_1_SQRT_2;
    for z in noise.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *z = Complex64::new(re * scale, im * scale);
    }
    detect_with_noise(sent_ack, alpha, snr_linear, &noise)
}
