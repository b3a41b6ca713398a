//! Sampling runs: warm start, single and replicated chains, the averaged
//! sampler (run a uniformly random number of steps), and the boosted sampler
//! that repeats the averaged sampler `⌈log(1/ε)⌉` times.
//!
//! Chain `i` of a run seeded with `s` always draws from stream `(s, i)`.
//! Within a stream the order is: warm-start draws (if any), then the averaged
//! sampler's step count `j` (if any), then per-step randomness.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmc::{clamped_log_ratio, default_step_size_for, StepWorkspace};
use crate::rng::{stream_rng, ChainRng};
use crate::scalar::{norm, Scalar};
use crate::target::TargetDensity;

/// Stored iterates are auto-thinned beyond this many scalars per chain.
pub const MAX_STORED_SCALARS: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HmcConfig {
    pub eta: f64,
    pub eps: f64,
    /// Inner iteration budget.
    pub k: usize,
    pub outer_rounds: usize,
    pub seed: u64,
    pub n_chains: usize,
    pub record_every: usize,
}

impl HmcConfig {
    /// Default step size, iteration budget with constant `budget_const`, and
    /// `⌈log(1/ε)⌉` boosting rounds.
    pub fn for_target<T: Scalar>(target: &TargetDensity<T>, eps: f64, budget_const: f64, seed: u64) -> Result<Self> {
        let policy = default_step_size_for(target, eps)?;
        let budget = iteration_budget(target.condition_number().as_f64(), target.dim(), eps, budget_const)?;
        Ok(Self {
            eta: policy.eta,
            eps,
            k: budget.inner,
            outer_rounds: budget.rounds,
            seed,
            n_chains: 1,
            record_every: 1,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::InvalidArgument(format!("step size must be positive, got {}", self.eta)));
        }
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return Err(Error::InvalidArgument(format!("eps must lie in (0, 1], got {}", self.eps)));
        }
        if self.n_chains == 0 {
            return Err(Error::InvalidArgument("n_chains must be at least 1".into()));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidArgument("record_every must be at least 1".into()));
        }
        Ok(())
    }

    /// Thinning actually applied to a `dim`-dimensional chain.
    pub fn effective_record_every(&self, dim: usize) -> usize {
        let stored = (self.k + 1).saturating_mul(dim);
        self.record_every.max(stored.div_ceil(MAX_STORED_SCALARS))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainResult<T> {
    pub chain: usize,
    pub seed: u64,
    /// Iterate `i·record_every` is stored at `samples[i]`; `samples[0] = x₀`.
    pub samples: Vec<Vec<T>>,
    pub record_every: usize,
    pub accept_flags: Vec<bool>,
    pub delta_h: Vec<T>,
    /// `‖∇f‖` at the iterate reached after each step.
    pub grad_norms: Vec<T>,
    /// Steps whose proposal or `ΔH` was not finite (all rejected).
    pub invalid_steps: usize,
    pub final_x: Vec<T>,
}

impl<T: Scalar> ChainResult<T> {
    pub fn steps(&self) -> usize {
        self.accept_flags.len()
    }

    pub fn accept_rate(&self) -> f64 {
        if self.accept_flags.is_empty() {
            return 1.0;
        }
        self.accept_flags.iter().filter(|&&a| a).count() as f64 / self.accept_flags.len() as f64
    }

    pub fn mean_grad_norm(&self) -> f64 {
        if self.grad_norms.is_empty() {
            return f64::NAN;
        }
        self.grad_norms.iter().map(|g| g.as_f64()).sum::<f64>() / self.grad_norms.len() as f64
    }

    /// Iteration index of `samples[i]`.
    pub fn sample_iter(&self, i: usize) -> usize {
        i * self.record_every
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WarmnessReport {
    /// `log β = (d/2)·ln κ`
    pub log_beta: f64,
    pub eps: f64,
    /// `log(β/ε)`
    pub log_beta_over_eps: f64,
}

/// `π₀ = N(x*, L⁻¹I)`.
pub fn warm_start<T: Scalar, R: Rng + ?Sized>(target: &TargetDensity<T>, rng: &mut R) -> Vec<T> {
    let scale = T::one() / target.smoothness().sqrt();
    target
        .minimizer()
        .iter()
        .map(|&m| m + scale * T::standard_normal(rng))
        .collect()
}

/// Warmness of [`warm_start`] with respect to `π*`: `β = κ^{d/2}`.
pub fn log_warmness<T: Scalar>(target: &TargetDensity<T>, eps: f64) -> WarmnessReport {
    let log_beta = 0.5 * target.dim() as f64 * target.condition_number().as_f64().ln();
    WarmnessReport {
        log_beta,
        eps,
        log_beta_over_eps: log_beta - eps.ln(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct IterationBudget {
    pub inner: usize,
    pub rounds: usize,
}

/// `inner = ⌈C·κ·d·ℓ·max(1, log(d·ℓ))⌉` with `ℓ = max(1, log(κ/ε))`, and
/// `rounds = ⌈max(1, log(1/ε))⌉`.
pub fn iteration_budget(kappa: f64, dim: usize, eps: f64, budget_const: f64) -> Result<IterationBudget> {
    if !(kappa.is_finite() && kappa >= 1.0) {
        return Err(Error::InvalidArgument(format!("kappa must be >= 1, got {kappa}")));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::InvalidArgument(format!("eps must lie in (0, 1], got {eps}")));
    }
    if !(budget_const.is_finite() && budget_const > 0.0) {
        return Err(Error::InvalidArgument(format!("budget constant must be positive, got {budget_const}")));
    }
    if dim == 0 {
        return Err(Error::InvalidArgument("dimension must be at least 1".into()));
    }
    let d = dim as f64;
    let ell = clamped_log_ratio(kappa, eps);
    let inner = budget_const * kappa * d * ell * (d * ell).ln().max(1.0);
    let rounds = (1.0 / eps).ln().max(1.0);
    Ok(IterationBudget {
        inner: inner.ceil() as usize,
        rounds: rounds.ceil() as usize,
    })
}

fn run_from<T: Scalar>(
    target: &TargetDensity<T>,
    cfg: &HmcConfig,
    x0: &[T],
    chain: usize,
    rng: &mut ChainRng,
) -> Result<ChainResult<T>> {
    cfg.validate()?;
    let eta = T::lit(cfg.eta);
    let stride = cfg.effective_record_every(target.dim());
    let mut ws = StepWorkspace::new(target, x0).map_err(|e| e.at_iteration(0))?;
    let mut samples = Vec::with_capacity(cfg.k / stride + 1);
    samples.push(x0.to_vec());
    let mut accept_flags = Vec::with_capacity(cfg.k);
    let mut delta_h = Vec::with_capacity(cfg.k);
    let mut grad_norms = Vec::with_capacity(cfg.k);
    let mut invalid_steps = 0;
    for it in 1..=cfg.k {
        let rec = ws.step(target, eta, rng);
        accept_flags.push(rec.accepted);
        delta_h.push(rec.delta_h);
        grad_norms.push(norm(&ws.grad_x));
        invalid_steps += usize::from(rec.invalid);
        if it % stride == 0 {
            samples.push(ws.x.clone());
        }
    }
    Ok(ChainResult {
        chain,
        seed: cfg.seed,
        samples,
        record_every: stride,
        accept_flags,
        delta_h,
        grad_norms,
        invalid_steps,
        final_x: ws.x,
    })
}

/// `cfg.k` HMC steps from `x0` on stream `(cfg.seed, 0)`.
pub fn run_chain<T: Scalar>(target: &TargetDensity<T>, cfg: &HmcConfig, x0: &[T]) -> Result<ChainResult<T>> {
    let mut rng = stream_rng(cfg.seed, 0);
    run_from(target, cfg, x0, 0, &mut rng)
}

/// `cfg.n_chains` independent chains, each from its own warm start.
pub fn run_chains<T: Scalar>(target: &TargetDensity<T>, cfg: &HmcConfig) -> Result<Vec<ChainResult<T>>> {
    cfg.validate()?;
    (0..cfg.n_chains)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(cfg.seed, i as u64);
            let x0 = warm_start(target, &mut rng);
            run_from(target, cfg, &x0, i, &mut rng)
        })
        .collect()
}

/// Runs `j ∼ Uniform{0, …, k−1}` steps from `x0` and returns the endpoint.
///
/// The output law is the running average of the first `k` iterate laws.
pub fn averaged_sample<T: Scalar, R: Rng + ?Sized>(
    target: &TargetDensity<T>,
    cfg: &HmcConfig,
    x0: &[T],
    rng: &mut R,
) -> Result<Vec<T>> {
    if cfg.k == 0 {
        return Err(Error::InvalidArgument("averaged sampling needs k >= 1".into()));
    }
    let j = rng.random_range(0..cfg.k);
    let eta = T::lit(cfg.eta);
    let mut ws = StepWorkspace::new(target, x0)?;
    for _ in 0..j {
        ws.step(target, eta, rng);
    }
    Ok(ws.x)
}

/// Warm start followed by `cfg.outer_rounds` averaged-sampler rounds, each
/// restarting from the previous round's output.
pub fn boosted_sample<T: Scalar, R: Rng + ?Sized>(
    target: &TargetDensity<T>,
    cfg: &HmcConfig,
    rng: &mut R,
) -> Result<Vec<T>> {
    let mut rounds = boosted_rounds(target, cfg, rng)?;
    Ok(rounds.pop().expect("at least the warm start"))
}

/// Like [`boosted_sample`] but returns the warm start and every round's output.
pub fn boosted_rounds<T: Scalar, R: Rng + ?Sized>(
    target: &TargetDensity<T>,
    cfg: &HmcConfig,
    rng: &mut R,
) -> Result<Vec<Vec<T>>> {
    if cfg.outer_rounds == 0 {
        return Err(Error::InvalidArgument("boosting needs at least one round".into()));
    }
    let mut out = Vec::with_capacity(cfg.outer_rounds + 1);
    out.push(warm_start(target, rng));
    for _ in 0..cfg.outer_rounds {
        let next = averaged_sample(target, cfg, out.last().unwrap(), rng)?;
        out.push(next);
    }
    Ok(out)
}

/// `n` independent replicates of `draw`, replicate `i` on stream `(seed, i)`.
pub fn replicate<U, F>(n: usize, seed: u64, draw: F) -> Result<Vec<U>>
where
    U: Send,
    F: Fn(usize, &mut ChainRng) -> Result<U> + Sync,
{
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            draw(i, &mut rng)
        })
        .collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Serialization(e.to_string())
}

/// Writes chains as CSV with header `chain,iter,accept,delta_H,x_0,…,x_{d−1}`.
///
/// Row `iter = 0` is the start point and leaves `accept` and `delta_H` empty.
/// An optional provenance string is written first as a `#` comment line.
pub fn write_chains_csv<T: Scalar, W: Write>(
    mut out: W,
    chains: &[ChainResult<T>],
    provenance: Option<&str>,
) -> Result<()> {
    if let Some(p) = provenance {
        writeln!(out, "# {p}").map_err(|e| Error::Serialization(e.to_string()))?;
    }
    let dim = chains.first().map_or(0, |c| c.final_x.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["chain".to_string(), "iter".into(), "accept".into(), "delta_H".into()];
    header.extend((0..dim).map(|i| format!("x_{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for c in chains {
        for (i, x) in c.samples.iter().enumerate() {
            let iter = c.sample_iter(i);
            let mut row = vec![c.chain.to_string(), iter.to_string()];
            if iter == 0 {
                row.extend([String::new(), String::new()]);
            } else {
                row.push(u8::from(c.accept_flags[iter - 1]).to_string());
                row.push(c.delta_h[iter - 1].to_string());
            }
            row.extend(x.iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::Serialization(e.to_string()))
}
