//! Exact and approximate Poisson binomial distribution.
//!
//! The Poisson binomial is the distribution of the number of successes among
//! independent Bernoulli trials with heterogeneous probabilities. The exact
//! PMF is computed from the characteristic function evaluated at the n+1
//! complex roots of unity ([`pmf_dft`]); a subset-enumeration oracle
//! ([`pmf_enumerate`]) exists for cross-checking at small n. For large trial
//! counts the distribution is approximately normal with mean `Σ p_i` and variance
//! `Σ p_i (1 - p_i)`; [`loglik_normal`] evaluates that approximation and
//! [`lyapunov_ratio`] quantifies how trustworthy it is.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest trial count accepted by [`pmf_enumerate`]. `C(20, 10)` subset
/// products is the most the oracle is allowed to cost.
pub const ENUMERATION_CAP: usize = 20;

/// Value returned by [`loglik_exact`] when the PMF underflows to zero.
pub const LOGLIK_UNDERFLOW_SENTINEL: f64 = -1e30;

/// Per-individual Bernoulli success probabilities for one group.
///
/// Invariants: non-empty, every entry finite and in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SuccessProbVector(Vec<f64>);

impl SuccessProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidProbability(
                "probability vector must be non-empty".into(),
            ));
        }
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidProbability(format!(
                    "entry {i} is {p}, expected a value in [0, 1]"
                )));
            }
        }
        Ok(Self(probs))
    }

    /// Constructs without scanning. Callers must guarantee the invariants;
    /// used where the entries were just produced by a clamped sigmoid.
    pub(crate) fn from_clamped(probs: Vec<f64>) -> Self {
        debug_assert!(!probs.is_empty());
        debug_assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));
        Self(probs)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    /// The complementary vector `1 - p`, entry by entry.
    pub fn complement(&self) -> Self {
        Self(self.0.iter().map(|p| 1.0 - p).collect())
    }
}

/// Mean and variance of a Poisson binomial distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoibinMoments {
    /// `Σ p_i`
    pub mean: f64,
    /// `Σ p_i (1 - p_i)`
    pub variance: f64,
}

/// Exact log-likelihood with an underflow flag. When the PMF underflows to
/// zero the value is [`LOGLIK_UNDERFLOW_SENTINEL`] rather than `-inf`, so
/// exact-loss curves stay plottable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactLogLik {
    pub value: f64,
    pub underflow: bool,
}

fn check_count(k: u64, n: usize) -> Result<usize> {
    if k > n as u64 {
        Err(Error::CountOutOfRange { k, n })
    } else {
        Ok(k as usize)
    }
}

/// Brute-force PMF: sums the product `Π_{i∈A} p_i Π_{j∉A} (1-p_j)` over every
/// k-subset A. This is the test oracle, not a production path; `n` is capped
/// at [`ENUMERATION_CAP`].
pub fn pmf_enumerate(p: &SuccessProbVector, k: u64) -> Result<f64> {
    let n = p.len();
    if n > ENUMERATION_CAP {
        return Err(Error::EnumerationCap {
            n,
            cap: ENUMERATION_CAP,
        });
    }
    let k = check_count(k, n)?;
    let probs = p.as_slice();

    if k == 0 {
        return Ok(probs.iter().map(|p| 1.0 - p).product());
    }

    let mut total = 0.0;
    // Gosper's hack: iterate every n-bit mask with exactly k bits set.
    let mut mask: u64 = (1u64 << k) - 1;
    let limit: u64 = 1u64 << n;
    while mask < limit {
        let mut prod = 1.0;
        for (i, &pi) in probs.iter().enumerate() {
            prod *= if mask & (1 << i) != 0 { pi } else { 1.0 - pi };
        }
        total += prod;

        let c = mask & mask.wrapping_neg();
        let r = mask + c;
        mask = (((r ^ mask) >> 2) / c) | r;
    }
    Ok(total)
}

/// The characteristic function `Π_j (1 - p_j + p_j ω^l)` for
/// `l = 0..=m/2`, where `ω = exp(2πi/m)` and `m = n + 1`. The remaining
/// values are conjugates and never stored.
fn char_spectrum(probs: &[f64], roots: &[Complex64]) -> Vec<Complex64> {
    let m = roots.len();
    (0..=m / 2)
        .map(|l| {
            let w = roots[l];
            let mut z = Complex64::new(1.0, 0.0);
            for &p in probs {
                z *= Complex64::new(1.0 - p + p * w.re, p * w.im);
            }
            if z.re.is_finite() && z.im.is_finite() {
                z
            } else {
                // Fallback: accumulate in log-magnitude/phase form. The
                // factors all have modulus <= 1 so this should be unreachable,
                // but it keeps extreme inputs from poisoning the spectrum.
                let (mut log_mag, mut phase) = (0.0f64, 0.0f64);
                for &p in probs {
                    let f = Complex64::new(1.0 - p + p * w.re, p * w.im);
                    log_mag += f.norm().ln();
                    phase += f.arg();
                }
                Complex64::from_polar(log_mag.exp(), phase)
            }
        })
        .collect()
}

fn roots_of_unity(m: usize) -> Vec<Complex64> {
    (0..m)
        .map(|j| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * j as f64 / m as f64))
        .collect()
}

/// Combines the half-spectrum into the PMF value at `k` using conjugate
/// symmetry: `m * pmf(k) = x_0 + 2 Σ Re(ω^{-lk} x_l) (+ middle term)`.
fn pmf_from_spectrum(spectrum: &[Complex64], roots: &[Complex64], k: usize) -> f64 {
    let m = roots.len();
    let mut acc = spectrum[0].re;
    let upper = (m - 1) / 2;
    for l in 1..=upper {
        // ω^{-lk} = conj(ω^{lk}); reduce the exponent mod m before indexing.
        let w = roots[(l * k) % m].conj();
        acc += 2.0 * (spectrum[l] * w).re;
    }
    if m % 2 == 0 {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        acc += sign * spectrum[m / 2].re;
    }
    (acc / m as f64).clamp(0.0, 1.0)
}

/// Exact PMF at `k` via the discrete Fourier transform of the characteristic
/// function. Runs in O(n²); never enumerates subsets. Tiny negative roundoff
/// is clamped to `[0, 1]`.
pub fn pmf_dft(p: &SuccessProbVector, k: u64) -> Result<f64> {
    let n = p.len();
    let k = check_count(k, n)?;
    let roots = roots_of_unity(n + 1);
    let spectrum = char_spectrum(p.as_slice(), &roots);
    Ok(pmf_from_spectrum(&spectrum, &roots, k))
}

/// Exact PMF at every `k = 0..=n`. Shares one spectrum computation across
/// all k, so the whole vector costs the same O(n²) as a single query.
pub fn pmf_all(p: &SuccessProbVector) -> Vec<f64> {
    let n = p.len();
    let roots = roots_of_unity(n + 1);
    let spectrum = char_spectrum(p.as_slice(), &roots);
    (0..=n)
        .map(|k| pmf_from_spectrum(&spectrum, &roots, k))
        .collect()
}

/// CDF at `k`: the PMF summed over `0..=k`, clamped to `[0, 1]`.
pub fn cdf_dft(p: &SuccessProbVector, k: u64) -> Result<f64> {
    let k = check_count(k, p.len())?;
    let pmf = pmf_all(p);
    Ok(pmf[..=k].iter().sum::<f64>().clamp(0.0, 1.0))
}

/// Exact log-likelihood `log pmf(D)`. A PMF of exactly zero (underflow, or a
/// genuinely impossible count) yields the sentinel value with the flag set.
pub fn loglik_exact(p: &SuccessProbVector, d: u64) -> Result<ExactLogLik> {
    let pmf = pmf_dft(p, d)?;
    if pmf > 0.0 {
        Ok(ExactLogLik {
            value: pmf.ln(),
            underflow: false,
        })
    } else {
        Ok(ExactLogLik {
            value: LOGLIK_UNDERFLOW_SENTINEL,
            underflow: true,
        })
    }
}

/// Mean `Σ p_i` and variance `Σ p_i (1 - p_i)`.
pub fn moments(p: &SuccessProbVector) -> PoibinMoments {
    let mut mean = 0.0;
    let mut variance = 0.0;
    for &pi in p.iter() {
        mean += pi;
        variance += pi * (1.0 - pi);
    }
    PoibinMoments { mean, variance }
}

/// Normal-approximation log-likelihood `-log φ - (D - μ)² / (2 φ²)`.
///
/// The additive constant `-½ log 2π` is dropped everywhere, so exact and
/// approximate log-likelihoods differ by that constant per group.
pub fn loglik_normal(p: &SuccessProbVector, d: u64) -> Result<f64> {
    let m = moments(p);
    loglik_normal_from_moments(m, d as f64)
}

/// Same as [`loglik_normal`] with moments already in hand.
pub fn loglik_normal_from_moments(m: PoibinMoments, d: f64) -> Result<f64> {
    if m.variance <= 0.0 {
        return Err(Error::DegenerateVariance);
    }
    let resid = d - m.mean;
    Ok(-0.5 * m.variance.ln() - resid * resid / (2.0 * m.variance))
}

/// Fourth-moment ratio `Σ p(1-p)(3p² - 3p + 1) / (Σ p(1-p))²`.
///
/// Small values certify the CLT: the closer to zero, the more trustworthy
/// the normal approximation. Equals `1/n` when every entry is ½.
pub fn lyapunov_ratio(p: &SuccessProbVector) -> Result<f64> {
    let mut numer = 0.0;
    let mut var = 0.0;
    for &pi in p.iter() {
        let q = pi * (1.0 - pi);
        numer += q * (3.0 * pi * pi - 3.0 * pi + 1.0);
        var += q;
    }
    if var <= 0.0 {
        return Err(Error::DegenerateVariance);
    }
    Ok(numer / (var * var))
}

/// Normal density with the Poisson binomial mean/variance, evaluated at `x`.
/// This is the density the PMF converges to; exposed for diagnostics.
pub fn normal_density(m: PoibinMoments, x: f64) -> Result<f64> {
    if m.variance <= 0.0 {
        return Err(Error::DegenerateVariance);
    }
    let resid = x - m.mean;
    let norm = (2.0 * std::f64::consts::PI * m.variance).sqrt();
    Ok((-resid * resid / (2.0 * m.variance)).exp() / norm)
}
