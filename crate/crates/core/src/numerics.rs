//! Special functions and numerical kernels.
//!
//! Everything here is pure and allocation-light. The functions that take user
//! input return [`Result`]; hot paths inside the crate use the `*_finite`
//! variants, which assume the caller already validated the argument.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_2_SQRT_PI, SQRT_2};

use crate::{Error, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

/// Complementary error function, absolute error below `1e-15` everywhere.
pub fn erfc(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::domain("erfc", format!("non-finite argument {x}")));
    }
    Ok(erfc_finite(x))
}

/// [`erfc`] without the finiteness check.
///
/// Three regimes: Maclaurin series of erf below 0.5, the positive-term series
/// `erf(x) = 2/sqrt(pi) e^{-x^2} sum 2^n x^{2n+1} / (2n+1)!!` up to 2.5, and the
/// Laplace continued fraction above (which keeps relative accuracy in the tail).
pub fn erfc_finite(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc_finite(-x);
    }
    if x < 0.5 {
        1.0 - erf_maclaurin(x)
    } else if x < 2.5 {
        1.0 - erf_positive_series(x)
    } else if x < 27.3 {
        erfc_continued_fraction(x)
    } else {
        0.0
    }
}

fn erf_maclaurin(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    for k in 1..60 {
        let n = k as f64;
        term *= -x2 / n;
        let contrib = term / (2.0 * n + 1.0);
        sum += contrib;
        if libm::fabs(contrib) <= 1e-17 * libm::fabs(sum) {
            break;
        }
    }
    FRAC_2_SQRT_PI * sum
}

fn erf_positive_series(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut odd = 1.0;
    for _ in 0..200 {
        odd += 2.0;
        term *= 2.0 * x2 / odd;
        sum += term;
        if term <= 1e-17 * sum {
            break;
        }
    }
    FRAC_2_SQRT_PI * libm::exp(-x2) * sum
}

fn erfc_continued_fraction(x: f64) -> f64 {
    // erfc(x) = e^{-x^2}/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
    // evaluated with the modified Lentz algorithm.
    const TINY: f64 = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for n in 1..500 {
        let a = n as f64 * 0.5;
        d = x + a * d;
        if d == 0.0 {
            d = TINY;
        }
        c = x + a / c;
        if c == 0.0 {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if libm::fabs(delta - 1.0) < 1e-16 {
            break;
        }
    }
    FRAC_1_SQRT_PI * libm::exp(-x * x) / f
}

/// Upper tail of the standard normal distribution, `Q(x) = erfc(x/sqrt 2)/2`.
pub fn q_function(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::domain("q_function", format!("non-finite argument {x}")));
    }
    Ok(q_finite(x))
}

/// [`q_function`] without the finiteness check.
#[inline]
pub fn q_finite(x: f64) -> f64 {
    0.5 * erfc_finite(x / SQRT_2)
}

/// Exponential integral `E1(x) = int_x^inf e^{-t}/t dt` for `x > 0`.
pub fn exp_integral_e1(x: f64) -> Result<f64> {
    check_e1_arg("exp_integral_e1", x)?;
    if x <= 1.0 {
        Ok(e1_series(x))
    } else {
        Ok(libm::exp(-x) * e1_scaled_continued_fraction(x))
    }
}

/// `e^x E1(x)`, which stays finite where `e^x` alone would overflow.
pub fn exp_integral_e1_scaled(x: f64) -> Result<f64> {
    check_e1_arg("exp_integral_e1_scaled", x)?;
    if x <= 1.0 {
        Ok(libm::exp(x) * e1_series(x))
    } else {
        Ok(e1_scaled_continued_fraction(x))
    }
}

fn check_e1_arg(function: &'static str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(function, format!("argument must be finite and > 0, got {x}")))
    }
}

fn e1_series(x: f64) -> f64 {
    // E1(x) = -gamma - ln x - sum_{k>=1} (-x)^k / (k k!)
    let mut sum = 0.0;
    let mut fact_term = 1.0;
    for k in 1..200 {
        let kf = k as f64;
        fact_term *= -x / kf;
        let contrib = fact_term / kf;
        sum += contrib;
        if libm::fabs(contrib) < 1e-17 * libm::fabs(sum).max(1e-300) {
            break;
        }
    }
    -EULER_GAMMA - libm::log(x) - sum
}

fn e1_scaled_continued_fraction(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..1000 {
        let an = -((i * i) as f64);
        b += 2.0;
        d = 1.0 / (an * d + b);
        c = b + an / c;
        let delta = c * d;
        h *= delta;
        if libm::fabs(delta - 1.0) < 1e-16 {
            break;
        }
    }
    h
}

/// Subinterval budget of [`expect_rayleigh`].
pub const DEFAULT_QUADRATURE_BUDGET: usize = 200;

/// `int_0^inf f(g) e^{-g} dg`, the expectation of `f` under a unit-mean
/// exponential gain (Rayleigh fading power).
///
/// Uses globally adaptive 7/15-point Gauss-Kronrod on `t in [0, 1)` with
/// `g = t/(1-t)`. The interval with the largest error estimate is bisected
/// until the summed estimate drops to `tolerance`; at most
/// [`DEFAULT_QUADRATURE_BUDGET`] subintervals (15 nodes each) are used.
pub fn expect_rayleigh<F: Fn(f64) -> f64>(f: F, tolerance: f64) -> Result<f64> {
    expect_rayleigh_with_budget(f, tolerance, DEFAULT_QUADRATURE_BUDGET)
}

/// [`expect_rayleigh`] with an explicit subinterval budget.
pub fn expect_rayleigh_with_budget<F: Fn(f64) -> f64>(
    f: F,
    tolerance: f64,
    max_intervals: usize,
) -> Result<f64> {
    if !(tolerance > 0.0) {
        return Err(Error::domain("expect_rayleigh", "tolerance must be > 0"));
    }
    let integrand = |t: f64| {
        let one_minus = 1.0 - t;
        let g = t / one_minus;
        let w = libm::exp(-g) / (one_minus * one_minus);
        if w == 0.0 {
            0.0
        } else {
            f(g) * w
        }
    };

    let mut intervals: Vec<Segment> = vec![Segment::new(&integrand, 0.0, 1.0)];
    loop {
        let (total, err) = intervals
            .iter()
            .fold((0.0, 0.0), |(s, e), seg| (s + seg.value, e + seg.error));
        if !total.is_finite() {
            return Err(Error::domain("expect_rayleigh", "integrand is not finite"));
        }
        if err <= tolerance {
            return Ok(total);
        }
        if intervals.len() >= max_intervals.max(1) {
            return Err(Error::Convergence {
                estimate: total,
                error: err,
                intervals: intervals.len(),
            });
        }
        let worst = intervals
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.error.total_cmp(&b.1.error))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let seg = intervals.swap_remove(worst);
        let mid = 0.5 * (seg.lo + seg.hi);
        intervals.push(Segment::new(&integrand, seg.lo, mid));
        intervals.push(Segment::new(&integrand, mid, seg.hi));
    }
}

struct Segment {
    lo: f64,
    hi: f64,
    value: f64,
    error: f64,
}

// 15-point Kronrod abscissae/weights and the embedded 7-point Gauss weights.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

impl Segment {
    fn new<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> Self {
        let center = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        let fc = f(center);
        let mut kronrod = fc * WGK[7];
        let mut gauss = fc * WG[3];
        for j in 0..7 {
            let dx = half * XGK[j];
            let pair = f(center - dx) + f(center + dx);
            kronrod += WGK[j] * pair;
            if j % 2 == 1 {
                gauss += WG[j / 2] * pair;
            }
        }
        Segment {
            lo,
            hi,
            value: kronrod * half,
            error: libm::fabs((kronrod - gauss) * half),
        }
    }
}

/// A discretized probability distribution: `masses[j]` is the probability
/// attached to the point `lower + j * step`.
#[derive(Debug, Clone, PartialEq)]
pub struct PdfGrid {
    lower: f64,
    step: f64,
    masses: Vec<f64>,
}

impl PdfGrid {
    /// Builds a grid and rescales the masses to total 1.
    pub fn new(lower: f64, step: f64, masses: Vec<f64>) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() || !lower.is_finite() {
            return Err(Error::Grid(format!(
                "need finite lower and step > 0, got lower={lower}, step={step}"
            )));
        }
        if masses.is_empty() {
            return Err(Error::Grid("grid has no bins".into()));
        }
        if masses.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::Grid("masses must be finite and non-negative".into()));
        }
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Grid("masses sum to zero".into()));
        }
        let masses = masses.into_iter().map(|m| m / total).collect();
        Ok(PdfGrid { lower, step, masses })
    }

    /// Point mass at `at`.
    pub fn delta(at: f64, step: f64) -> Result<Self> {
        Self::new(at, step, vec![1.0])
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Location of bin `j`.
    pub fn point(&self, j: usize) -> f64 {
        self.lower + j as f64 * self.step
    }

    /// `P(X < x)` treating each point mass as spread uniformly over
    /// `[point - step/2, point + step/2)`.
    pub fn smoothed_cdf(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for (j, &m) in self.masses.iter().enumerate() {
            let left = self.point(j) - 0.5 * self.step;
            let frac = ((x - left) / self.step).clamp(0.0, 1.0);
            if frac == 0.0 {
                break;
            }
            acc += m * frac;
        }
        acc
    }

    /// Total variation distance to another grid on the same lattice.
    pub fn total_variation(&self, other: &PdfGrid) -> Result<f64> {
        check_same_step(self, other)?;
        let shift = libm::round((other.lower - self.lower) / self.step);
        if libm::fabs(other.lower - self.lower - shift * self.step) > 1e-9 * self.step {
            return Err(Error::Grid("grids are not on a common lattice".into()));
        }
        let offset = shift as i64;
        let start = 0i64.min(offset);
        let end = (self.len() as i64).max(offset + other.len() as i64);
        let mut tv = 0.0;
        for idx in start..end {
            let a = usize::try_from(idx).ok().and_then(|i| self.masses.get(i)).copied();
            let b = usize::try_from(idx - offset)
                .ok()
                .and_then(|i| other.masses.get(i))
                .copied();
            tv += libm::fabs(a.unwrap_or(0.0) - b.unwrap_or(0.0));
        }
        Ok(0.5 * tv)
    }
}

fn check_same_step(a: &PdfGrid, b: &PdfGrid) -> Result<()> {
    if libm::fabs(a.step - b.step) > 1e-12 * a.step.max(b.step) {
        return Err(Error::Grid(format!(
            "step mismatch: {} vs {}",
            a.step, b.step
        )));
    }
    Ok(())
}

/// Distribution of the sum of two independent grid variables.
pub fn convolve(a: &PdfGrid, b: &PdfGrid) -> Result<PdfGrid> {
    convolve_capped(a, b, usize::MAX)
}

/// [`convolve`] keeping at most `max_bins` bins; the mass that would land
/// beyond the last kept bin is added to it.
pub fn convolve_capped(a: &PdfGrid, b: &PdfGrid, max_bins: usize) -> Result<PdfGrid> {
    check_same_step(a, b)?;
    if max_bins == 0 {
        return Err(Error::Grid("max_bins must be positive".into()));
    }
    let full = a.len() + b.len() - 1;
    let len = full.min(max_bins);
    let mut out = vec![0.0; len];
    for (i, &ma) in a.masses.iter().enumerate() {
        if i >= len {
            break;
        }
        if ma == 0.0 {
            continue;
        }
        let upto = (len - i).min(b.len());
        for (o, &mb) in out[i..i + upto].iter_mut().zip(&b.masses[..upto]) {
            *o += ma * mb;
        }
    }
    if len < full {
        let kept: f64 = out.iter().sum();
        let total = a.total_mass() * b.total_mass();
        out[len - 1] += (total - kept).max(0.0);
    }
    Ok(PdfGrid {
        lower: a.lower + b.lower,
        step: a.step,
        masses: out,
    })
}
