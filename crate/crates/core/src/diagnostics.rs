//! Empirical checks of the quantitative claims: gradient-norm concentration,
//! membership in the low-gradient set `Ω`, proposal overlap, rejection
//! probability, chi-squared tails, and the infinite-product inequality.
//!
//! Every Monte Carlo estimate carries a standard error, and claim checks
//! allow `3·SE` of slack.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use libm::erfc;

use crate::error::{Error, Result};
use crate::hmc::{clamped_log_ratio, StepWorkspace};
use crate::scalar::{dist, norm, Scalar};
use crate::target::TargetDensity;

/// Standard normal CDF, `Φ(x) = ½·erfc(−x/√2)`.
///
/// `libm::erfc` is the fdlibm algorithm, good to about one ulp.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// 99% critical value of the one-sample Kolmogorov statistic, `1.63/√n`.
pub fn kolmogorov_critical_99(n: usize) -> f64 {
    1.63 / (n as f64).sqrt()
}

fn sorted(samples: &[f64]) -> Vec<f64> {
    let mut s = samples.to_vec();
    s.sort_unstable_by(f64::total_cmp);
    s
}

/// `sup_x |F_n(x) − F(x)|` for the empirical CDF `F_n` of `samples`.
///
/// Both one-sided limits are checked at every jump of `F_n`, evaluating `F`
/// just below each sample for the left limit, so step-function `cdf`s are
/// handled exactly. Input order does not matter; empty input yields NaN.
pub fn ks_distance<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let s = sorted(samples);
    let n = s.len() as f64;
    let mut d = 0.0f64;
    let mut i = 0;
    while i < s.len() {
        let x = s[i];
        let mut j = i;
        while j + 1 < s.len() && s[j + 1] == x {
            j += 1;
        }
        let below = i as f64 / n;
        let at = (j + 1) as f64 / n;
        d = d.max((cdf(x) - at).abs()).max((cdf(x.next_down()) - below).abs());
        i = j + 1;
    }
    d
}

/// [`ks_distance`] for a continuous `cdf`: one evaluation per sample, using
/// `max_i max(i/n − F(x_(i)), F(x_(i)) − (i−1)/n)`.
pub fn ks_distance_continuous<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let s = sorted(samples);
    let n = s.len() as f64;
    s.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let fx = cdf(x);
        d.max((i + 1) as f64 / n - fx).max(fx - i as f64 / n)
    })
}

/// Two-sample Kolmogorov–Smirnov statistic `sup_x |F_a(x) − F_b(x)|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::NAN;
    }
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] == x {
            i += 1;
        }
        while j < b.len() && b[j] == x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// KS distance of one linear projection of the samples to its exact law.
#[derive(Clone, Debug, Serialize)]
pub struct ProjectionKs {
    pub label: String,
    pub distance: f64,
}

/// KS distances on every coordinate plus `n_random` random unit directions,
/// against the exact Gaussian marginals. `None` for non-Gaussian targets.
pub fn projected_ks<T: Scalar, R: Rng + ?Sized>(
    target: &TargetDensity<T>,
    samples: &[Vec<T>],
    n_random: usize,
    rng: &mut R,
) -> Option<Vec<ProjectionKs>> {
    let marginals = target.gaussian_marginals()?;
    let d = target.dim();
    let mut out: Vec<ProjectionKs> = (0..d)
        .map(|i| {
            let (m, s) = marginals[i];
            let xs: Vec<f64> = samples.iter().map(|x| x[i].as_f64()).collect();
            ProjectionKs {
                label: format!("x_{i}"),
                distance: ks_distance_continuous(&xs, |t| normal_cdf((t - m) / s)),
            }
        })
        .collect();
    for r in 0..n_random {
        let mut u: Vec<f64> = (0..d).map(|_| f64::standard_normal(rng)).collect();
        let len = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        u.iter_mut().for_each(|v| *v /= len);
        let mean: f64 = u.iter().zip(&marginals).map(|(ui, (m, _))| ui * m).sum();
        let sd = u.iter().zip(&marginals).map(|(ui, (_, s))| ui * ui * s * s).sum::<f64>().sqrt();
        let xs: Vec<f64> = samples
            .iter()
            .map(|x| x.iter().zip(&u).map(|(xi, ui)| xi.as_f64() * ui).sum())
            .collect();
        out.push(ProjectionKs {
            label: format!("random_{r}"),
            distance: ks_distance_continuous(&xs, |t| normal_cdf((t - mean) / sd)),
        });
    }
    Some(out)
}

/// Radius of `Ω = {x : ‖∇f(x)‖ ≤ 5·√L·d·max(1, log(κ/ε))}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OmegaThreshold {
    pub value: f64,
}

impl OmegaThreshold {
    pub fn new(smoothness: f64, dim: usize, kappa: f64, eps: f64) -> Result<Self> {
        if !(smoothness > 0.0 && dim > 0 && kappa >= 1.0 && eps > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "Omega threshold needs L > 0, d >= 1, kappa >= 1, eps > 0; got ({smoothness}, {dim}, {kappa}, {eps})"
            )));
        }
        Ok(Self {
            value: 5.0 * smoothness.sqrt() * dim as f64 * clamped_log_ratio(kappa, eps),
        })
    }

    pub fn for_target<T: Scalar>(target: &TargetDensity<T>, eps: f64) -> Result<Self> {
        Self::new(
            target.smoothness().as_f64(),
            target.dim(),
            target.condition_number().as_f64(),
            eps,
        )
    }
}

pub fn omega_indicator<T: Scalar>(target: &TargetDensity<T>, thr: &OmegaThreshold, x: &[T]) -> bool {
    norm(&target.grad(x)).as_f64() <= thr.value
}

/// Fraction of samples inside `Ω`.
pub fn omega_fraction<T: Scalar>(target: &TargetDensity<T>, thr: &OmegaThreshold, samples: &[Vec<T>]) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    samples.iter().filter(|x| omega_indicator(target, thr, x)).count() as f64 / samples.len() as f64
}

/// Exact total variation between the one-step proposals from `x` and `y`.
///
/// Both are `N(· − (η²/2)∇f(·), η²I)`, so the distance is `2Φ(r/2η) − 1` with
/// `r` the distance between the means.
pub fn proposal_overlap_tv<T: Scalar>(target: &TargetDensity<T>, eta: T, x: &[T], y: &[T]) -> f64 {
    let half_sq = T::lit(0.5) * eta * eta;
    let gx = target.grad(x);
    let gy = target.grad(y);
    let mx: Vec<T> = x.iter().zip(&gx).map(|(&xi, &gi)| xi - half_sq * gi).collect();
    let my: Vec<T> = y.iter().zip(&gy).map(|(&yi, &gi)| yi - half_sq * gi).collect();
    let r = dist(&mx, &my).as_f64();
    (2.0 * normal_cdf(r / (2.0 * eta.as_f64())) - 1.0).max(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub standard_error: f64,
    pub n: usize,
}

impl MonteCarloEstimate {
    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Self {
        let (mut n, mut mean, mut m2) = (0usize, 0.0f64, 0.0f64);
        for v in values {
            n += 1;
            let delta = v - mean;
            mean += delta / n as f64;
            m2 += delta * (v - mean);
        }
        let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
        Self {
            mean,
            standard_error: (var / n.max(1) as f64).sqrt(),
            n,
        }
    }

    /// Binomial proportion `k / n` with its standard error.
    pub fn proportion(k: usize, n: usize) -> Self {
        let p = k as f64 / n as f64;
        Self {
            mean: p,
            standard_error: (p * (1.0 - p) / n as f64).sqrt(),
            n,
        }
    }
}

/// Monte Carlo estimate of `1 − E_v[min(1, exp(−ΔH))]`, the probability that
/// one HMC step from `x` stays put.
pub fn rejection_probability<T: Scalar, R: Rng + ?Sized>(
    target: &TargetDensity<T>,
    eta: T,
    x: &[T],
    n_mc: usize,
    rng: &mut R,
) -> Result<MonteCarloEstimate> {
    if n_mc == 0 {
        return Err(Error::InvalidArgument("n_mc must be at least 1".into()));
    }
    let mut ws = StepWorkspace::new(target, x)?;
    let mut v = vec![T::zero(); target.dim()];
    let values = (0..n_mc).map(|_| {
        for vi in v.iter_mut() {
            *vi = T::standard_normal(rng);
        }
        let dh = ws.proposal_delta_h(target, eta, &v).as_f64();
        if dh.is_nan() {
            1.0
        } else {
            1.0 - (-dh).min(0.0).exp()
        }
    });
    Ok(MonteCarloEstimate::from_values(values.collect::<Vec<_>>()))
}

/// Laurent–Massart upper tail: `P[χ²_d ≥ d + 2√(dt) + 2t] ≤ e^{−t}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChiSquaredTail {
    pub threshold: f64,
    pub bound: f64,
}

pub fn chi_sq_tail_bound(dim: usize, t: f64) -> Result<ChiSquaredTail> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!("t must be positive, got {t}")));
    }
    let d = dim as f64;
    Ok(ChiSquaredTail {
        threshold: d + 2.0 * (d * t).sqrt() + 2.0 * t,
        bound: (-t).exp(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProductBound {
    pub partial_product: f64,
    pub bound: f64,
    pub holds: bool,
}

/// `∏_{k<K} (1 − C/4^k)^{−2^k}` against `(1 + √C)/(1 − √C)`, summed in log space.
pub fn product_bound_check(c: f64, k_terms: usize) -> Result<ProductBound> {
    if !(0.0..1.0).contains(&c) {
        return Err(Error::InvalidArgument(format!("C must lie in [0, 1), got {c}")));
    }
    let log_partial: f64 = (0..k_terms)
        .map(|k| {
            let k = k as i32;
            -(2f64.powi(k)) * (-c / 4f64.powi(k)).ln_1p()
        })
        .sum();
    let root = c.sqrt();
    let partial_product = log_partial.exp();
    let bound = (1.0 + root) / (1.0 - root);
    Ok(ProductBound {
        partial_product,
        bound,
        holds: partial_product <= bound,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TailFraction {
    pub c: f64,
    /// `√(Ld) + c·√L·log d`
    pub threshold: f64,
    pub exceedances: usize,
    pub fraction: f64,
    pub standard_error: f64,
    /// `3·d^{−c}`
    pub bound: f64,
    /// `d^{−c²}`, reported for Gaussian targets only.
    pub gaussian_bound: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EmpiricalSummary {
    pub n_samples: usize,
    pub mean_grad_norm: f64,
    pub mean_grad_norm_se: f64,
    /// `√(Ld)`
    pub mean_bound: f64,
    pub tail_fractions: Vec<TailFraction>,
    pub accept_rate: Option<f64>,
    pub mean_delta_h: Option<f64>,
    pub ks_per_coordinate: Vec<f64>,
    pub omega_fraction: Option<f64>,
}

/// Gradient-norm concentration over `samples`.
#[derive(Clone, Debug, Serialize)]
pub struct GradNormStats {
    pub mean: MonteCarloEstimate,
    /// `√(Ld)`
    pub mean_bound: f64,
    pub tail_fractions: Vec<TailFraction>,
}

/// Mean of `‖∇f‖` and its exceedance fractions at each `c`.
pub fn grad_norm_stats<T: Scalar>(
    target: &TargetDensity<T>,
    samples: &[Vec<T>],
    c_values: &[f64],
) -> Result<GradNormStats> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let l = target.smoothness().as_f64();
    let d = target.dim() as f64;
    let norms: Vec<f64> = samples.par_iter().map(|x| norm(&target.grad(x)).as_f64()).collect();
    let gaussian = target.quadratic_diagonal().is_some();
    let tail_fractions = c_values
        .iter()
        .map(|&c| {
            let threshold = (l * d).sqrt() + c * l.sqrt() * d.ln();
            let exceedances = norms.iter().filter(|&&g| g >= threshold).count();
            let p = MonteCarloEstimate::proportion(exceedances, norms.len());
            TailFraction {
                c,
                threshold,
                exceedances,
                fraction: p.mean,
                standard_error: p.standard_error,
                bound: 3.0 * d.powf(-c),
                gaussian_bound: gaussian.then(|| d.powf(-c * c)),
            }
        })
        .collect();
    Ok(GradNormStats {
        mean: MonteCarloEstimate::from_values(norms.iter().copied()),
        mean_bound: (l * d).sqrt(),
        tail_fractions,
    })
}

/// [`grad_norm_stats`] plus per-coordinate KS distances when the target is
/// Gaussian.
pub fn grad_concentration_report<T: Scalar>(
    target: &TargetDensity<T>,
    samples: &[Vec<T>],
    c_values: &[f64],
) -> Result<EmpiricalSummary> {
    let stats = grad_norm_stats(target, samples, c_values)?;
    let ks_per_coordinate = match target.gaussian_marginals() {
        Some(marginals) => marginals
            .par_iter()
            .enumerate()
            .map(|(i, &(m, s))| {
                let xs: Vec<f64> = samples.iter().map(|x| x[i].as_f64()).collect();
                ks_distance_continuous(&xs, |t| normal_cdf((t - m) / s))
            })
            .collect(),
        None => Vec::new(),
    };
    Ok(EmpiricalSummary {
        n_samples: samples.len(),
        mean_grad_norm: stats.mean.mean,
        mean_grad_norm_se: stats.mean.standard_error,
        mean_bound: stats.mean_bound,
        tail_fractions: stats.tail_fractions,
        accept_rate: None,
        mean_delta_h: None,
        ks_per_coordinate,
        omega_fraction: None,
    })
}

/// One pass/fail record in the claims report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClaimReport {
    pub claim_id: String,
    pub paper_anchor: String,
    pub statistic: f64,
    pub bound: f64,
    pub standard_error: f64,
    pub pass: bool,
}

impl ClaimReport {
    /// Passes when `statistic ≤ bound + 3·SE`.
    pub fn upper(id: &str, anchor: &str, statistic: f64, bound: f64, standard_error: f64) -> Self {
        Self {
            claim_id: id.into(),
            paper_anchor: anchor.into(),
            statistic,
            bound,
            standard_error,
            pass: statistic <= bound + 3.0 * standard_error,
        }
    }

    /// Passes when `statistic ≥ bound − 3·SE`.
    pub fn lower(id: &str, anchor: &str, statistic: f64, bound: f64, standard_error: f64) -> Self {
        Self {
            pass: statistic >= bound - 3.0 * standard_error,
            ..Self::upper(id, anchor, statistic, bound, standard_error)
        }
    }

    pub fn within(id: &str, anchor: &str, statistic: f64, lo: f64, hi: f64) -> Self {
        Self {
            claim_id: id.into(),
            paper_anchor: anchor.into(),
            statistic,
            bound: hi,
            standard_error: 0.0,
            pass: (lo..=hi).contains(&statistic),
        }
    }
}
