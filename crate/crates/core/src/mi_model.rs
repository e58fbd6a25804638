//! Mutual-information statistics of Rayleigh block fading and the
//! decoding-failure probabilities of incremental redundancy.
//!
//! Round `l` contributes `I_l = rho_l * log2(1 + g_l * snr)` bits per
//! information bit, with `g_l` i.i.d. unit-mean exponential. Decoding after
//! `k` rounds fails when `sum_{l<=k} I_l < 1`.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::LOG2_E;

use crate::numerics::{self, PdfGrid};
use crate::{db_to_linear, Error, Result};

/// Tolerance handed to the Rayleigh quadrature for the MI variance.
const VARIANCE_TOLERANCE: f64 = 1e-12;

/// Downlink channel: average SNR and the first two moments of per-symbol MI.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DownlinkSpec {
    pub snr_db: f64,
    pub snr_linear: f64,
    /// Ergodic capacity `E[log2(1 + g snr)]`, bits per channel use.
    pub mean_mi: f64,
    /// `Var[log2(1 + g snr)]`.
    pub var_mi: f64,
}

impl DownlinkSpec {
    /// Derives the MI moments for an SNR given in dB.
    ///
    /// The mean uses the closed form `log2(e) e^{1/snr} E1(1/snr)`; the
    /// variance is `E[(C - mean)^2]` by quadrature against the exponential
    /// density, normalized by the mean so that it keeps relative accuracy at
    /// very low SNR.
    pub fn new(snr_db: f64) -> Result<Self> {
        if !snr_db.is_finite() {
            return Err(Error::invalid("snr_d_db", format!("must be finite, got {snr_db}")));
        }
        let snr_linear = db_to_linear(snr_db);
        if !(snr_linear > 0.0) {
            return Err(Error::invalid("snr_d_db", format!("{snr_db} dB underflows")));
        }
        let mean_mi = LOG2_E * numerics::exp_integral_e1_scaled(1.0 / snr_linear)?;
        let normalized = numerics::expect_rayleigh(
            |g| {
                let c = libm::log1p(g * snr_linear) * LOG2_E;
                let r = c / mean_mi - 1.0;
                r * r
            },
            VARIANCE_TOLERANCE,
        )?;
        let var_mi = normalized * mean_mi * mean_mi;
        if !(mean_mi > 0.0 && var_mi > 0.0) {
            return Err(Error::invalid(
                "snr_d_db",
                format!("degenerate MI moments at {snr_db} dB"),
            ));
        }
        Ok(DownlinkSpec {
            snr_db,
            snr_linear,
            mean_mi,
            var_mi,
        })
    }

    pub fn std_mi(&self) -> f64 {
        libm::sqrt(self.var_mi)
    }

    /// Gaussian-approximate failure probability from the prefix sums
    /// `sum rho` and `sum rho^2`.
    #[inline]
    pub fn gaussian_fail(&self, sum_rho: f64, sum_rho_sq: f64) -> f64 {
        let arg = (sum_rho * self.mean_mi - 1.0) / (libm::sqrt(sum_rho_sq) * self.std_mi());
        numerics::q_finite(arg)
    }

    /// CDF of one round's normalized MI: `P(rho log2(1 + g snr) < x)`.
    pub fn round_mi_cdf(&self, rho: f64, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let threshold = libm::expm1(x / rho * core::f64::consts::LN_2) / self.snr_linear;
        -libm::expm1(-threshold)
    }
}

/// Free-function form of [`DownlinkSpec::new`].
pub fn make_downlink_spec(snr_db: f64) -> Result<DownlinkSpec> {
    DownlinkSpec::new(snr_db)
}

/// Normalized rates `rho_l = N_l / N_b` for a prefix of rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct RateVector(Vec<f64>);

impl RateVector {
    pub fn new(rhos: Vec<f64>) -> Result<Self> {
        if rhos.is_empty() {
            return Err(Error::invalid("rhos", "rate vector is empty"));
        }
        if let Some(bad) = rhos.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
            return Err(Error::invalid("rhos", format!("rates must be finite and > 0, got {bad}")));
        }
        Ok(RateVector(rhos))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl core::ops::Deref for RateVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Normalized MI of one round at fading power `g`.
pub fn mi_of_gain(g: f64, rho: f64, spec: &DownlinkSpec) -> Result<f64> {
    if !(g >= 0.0) {
        return Err(Error::domain("mi_of_gain", format!("gain must be >= 0, got {g}")));
    }
    if !(rho > 0.0) {
        return Err(Error::domain("mi_of_gain", format!("rate must be > 0, got {rho}")));
    }
    Ok(rho * libm::log1p(g * spec.snr_linear) * LOG2_E)
}

/// `P_{k,f}` for every prefix under the Gaussian approximation of the
/// accumulated MI.
///
/// Failure after `k` rounds implies failure after `k - 1`, but the Gaussian
/// tail can rise slightly when a large round follows a long prefix. The
/// output is therefore the running minimum of the raw approximation.
pub fn p_fail_gaussian(rates: &RateVector, spec: &DownlinkSpec) -> Vec<f64> {
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut prev = 1.0_f64;
    rates
        .iter()
        .map(|&r| {
            sum += r;
            sum_sq += r * r;
            prev = prev.min(spec.gaussian_fail(sum, sum_sq));
            prev
        })
        .collect()
}

/// Default discretization of [`p_fail_convolution`].
pub const DEFAULT_CONVOLUTION_BINS: usize = 4096;
/// Smallest bin count [`p_fail_convolution`] accepts.
pub const MIN_CONVOLUTION_BINS: usize = 256;
/// Upper end of the MI grid. Every per-round MI is non-negative, so mass that
/// lies above any cap beyond 1 stays above 1 after further convolution;
/// truncating there is exact for `P(Z < 1)`.
pub const CONVOLUTION_SPAN: f64 = 1.25;

/// `P_{k,f}` for every prefix by numerically convolving the exact per-round
/// MI distributions.
///
/// Each round's MI is binned on `[0, CONVOLUTION_SPAN)` with `bins` bins
/// (mass from the exact CDF, placed at the bin center, overflow in the top
/// bin). The failure probability reads the convolved grid with each point
/// spread over its bin, which makes the discretization error second order
/// in the bin width.
pub fn p_fail_convolution(rates: &RateVector, spec: &DownlinkSpec, bins: usize) -> Result<Vec<f64>> {
    if bins < MIN_CONVOLUTION_BINS {
        return Err(Error::Grid(format!(
            "need at least {MIN_CONVOLUTION_BINS} bins, got {bins}"
        )));
    }
    let step = CONVOLUTION_SPAN / bins as f64;
    let mut out = Vec::with_capacity(rates.len());
    let mut acc: Option<PdfGrid> = None;
    for &rho in rates.iter() {
        let grid = round_grid(rho, spec, step, bins)?;
        let next = match acc {
            None => grid,
            Some(prev) => numerics::convolve_capped(&prev, &grid, bins)?,
        };
        let prev = out.last().copied().unwrap_or(1.0);
        out.push(next.smoothed_cdf(1.0).clamp(0.0, prev));
        acc = Some(next);
    }
    Ok(out)
}

/// Discretized distribution of one round's MI `rho * log2(1 + g SNR)` on the
/// grid used by [`p_fail_convolution`] with `bins` bins. Convolving these
/// with `numerics::convolve_capped(.., bins)` and reading `smoothed_cdf(1.0)`
/// reproduces that function step by step.
pub fn round_mi_grid(rho: f64, spec: &DownlinkSpec, bins: usize) -> Result<PdfGrid> {
    if bins < MIN_CONVOLUTION_BINS {
        return Err(Error::Grid(format!(
            "need at least {MIN_CONVOLUTION_BINS} bins, got {bins}"
        )));
    }
    round_grid(rho, spec, CONVOLUTION_SPAN / bins as f64, bins)
}

fn round_grid(rho: f64, spec: &DownlinkSpec, step: f64, bins: usize) -> Result<PdfGrid> {
    let mut masses = Vec::with_capacity(bins);
    let mut prev = 0.0;
    for j in 1..=bins {
        let cdf = spec.round_mi_cdf(rho, j as f64 * step);
        masses.push((cdf - prev).max(0.0));
        prev = cdf;
    }
    if let Some(last) = masses.last_mut() {
        *last += (1.0 - prev).max(0.0);
    }
    PdfGrid::new(0.5 * step, step, masses)
}

/// How `P_{k,f}` is computed when evaluating a policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FailureModel {
    /// Gaussian approximation of the accumulated MI (what the optimizer uses).
    #[default]
    Gaussian,
    /// Exact per-round distributions convolved on a grid.
    Convolution { bins: usize },
}

impl FailureModel {
    pub fn p_fail(&self, rhos: &[f64], spec: &DownlinkSpec) -> Result<Vec<f64>> {
        let rates = RateVector::new(rhos.to_vec())?;
        match *self {
            FailureModel::Gaussian => Ok(p_fail_gaussian(&rates, spec)),
            FailureModel::Convolution { bins } => p_fail_convolution(&rates, spec, bins),
        }
    }
}
