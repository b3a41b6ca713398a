//! The two desk-scale experiments on the hard quadratic instance
//! `f(x) = ½·xᵀDx`, `D = diag(κ, …, κ, 1)`.
//!
//! * [`lower_bound_experiment`]: with `η = c·κ^{−1/2}`, one HMC step from a
//!   stationary point is accepted with probability `exp(−Ω(c⁶d))`.
//! * [`scaling_study`]: iterations until the chain's running-average law is
//!   close to `π*`, as a function of `κ` and `d`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{normal_cdf, MonteCarloEstimate};
use crate::error::{Error, Result};
use crate::hmc::{default_step_size_for, hmc_transition, StepWorkspace};
use crate::report::{Cell, ColumnKind, Table};
use crate::rng::{derive_seed, stream_rng};
use crate::sampler::{iteration_budget, warm_start};
use crate::scalar::Scalar;
use crate::target::{make_target, TargetDensity, TargetSpec};

/// Least-squares slope of `log y` against `log x`.
pub fn fit_loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidArgument("slope fit needs at least two (x, y) pairs".into()));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument("slope fit needs positive finite values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("slope fit needs at least two distinct x values".into()));
    }
    Ok(sxy / sxx)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundRunSpec {
    pub kappa: f64,
    pub dim: usize,
    /// Step sizes are `η = c·κ^{−1/2}`.
    pub c_values: Vec<f64>,
    pub n_draws: usize,
    pub seed: u64,
}

impl LowerBoundRunSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa.is_finite() && self.kappa >= 1.0) {
            return Err(Error::InvalidArgument(format!("kappa must be >= 1, got {}", self.kappa)));
        }
        if self.dim == 0 || self.n_draws == 0 {
            return Err(Error::InvalidArgument("dim and n_draws must be at least 1".into()));
        }
        if self.c_values.is_empty()
            || self.c_values.iter().any(|&c| !(c > 0.0 && c.is_finite()))
            || self.c_values.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::InvalidArgument(format!(
                "c values must be positive and strictly ascending, got {:?}",
                self.c_values
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LowerBoundRow {
    pub c: f64,
    pub eta: f64,
    /// Mean of `min(0, −ΔH)`.
    pub mean_log_accept: f64,
    pub mean_log_accept_se: f64,
    pub accept_rate: f64,
    pub accept_rate_se: f64,
    pub mean_delta_h: f64,
    pub n_draws: usize,
    /// Worst relative gap between the generic and the closed-form `ΔH`.
    pub max_identity_rel_err: f64,
    /// Whether `η²κ ≥ 20`, where the lower bound on `ΔH` is claimed.
    pub hambound_checked: bool,
    pub hambound_violations: usize,
    pub invalid_draws: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LowerBoundResult {
    pub spec: LowerBoundRunSpec,
    pub rows: Vec<LowerBoundRow>,
}

/// `ΔH = (η²/8)·(x̃ᵀD²x̃ − xᵀD²x)` for one leapfrog step on `½xᵀDx`.
pub fn quadratic_delta_h(diag: &[f64], eta: f64, x: &[f64], x_new: &[f64]) -> f64 {
    let q = |y: &[f64]| -> f64 { y.iter().zip(diag).map(|(yi, li)| (li * yi) * (li * yi)).sum() };
    eta * eta / 8.0 * (q(x_new) - q(x))
}

/// Lower bound on `ΔH` for the hard instance, valid when `η²κ ≥ 20`:
/// `(η⁶κ⁴/128)‖x̂‖² − (η⁴κ²/4)‖v‖² + (η²/8)(η⁴/8 − η² − 1)·x_d²`,
/// with `x̂` the first `d − 1` coordinates.
pub fn hard_instance_delta_h_bound(kappa: f64, eta: f64, x: &[f64], v: &[f64]) -> f64 {
    let (last, head) = x.split_last().expect("nonempty x");
    let e2 = eta * eta;
    let xh: f64 = head.iter().map(|t| t * t).sum();
    let vv: f64 = v.iter().map(|t| t * t).sum();
    e2.powi(3) * kappa.powi(4) / 128.0 * xh - e2 * e2 * kappa * kappa / 4.0 * vv
        + e2 / 8.0 * (e2 * e2 / 8.0 - e2 - 1.0) * last * last
}

fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn lower_bound_row(spec: &LowerBoundRunSpec, target: &TargetDensity<f64>, idx: usize) -> Result<LowerBoundRow> {
    let c = spec.c_values[idx];
    let kappa = spec.kappa;
    let eta = c / kappa.sqrt();
    let diag = target.quadratic_diagonal().expect("hard instance is quadratic").to_vec();
    let sd: Vec<f64> = diag.iter().map(|l| 1.0 / l.sqrt()).collect();
    let hambound_checked = eta * eta * kappa >= 20.0;
    let mut rng = stream_rng(derive_seed(spec.seed, idx as u64), 0);

    let mut log_acc = Vec::with_capacity(spec.n_draws);
    let mut dh = Vec::with_capacity(spec.n_draws);
    let (mut accepted, mut violations, mut invalid) = (0usize, 0usize, 0usize);
    let mut max_gap = 0.0f64;
    let mut x = vec![0.0; spec.dim];
    let mut v = vec![0.0; spec.dim];
    for _ in 0..spec.n_draws {
        for (xi, s) in x.iter_mut().zip(&sd) {
            *xi = s * f64::standard_normal(&mut rng);
        }
        for vi in v.iter_mut() {
            *vi = f64::standard_normal(&mut rng);
        }
        let log_u = f64::unit_uniform(&mut rng).ln();
        let out = hmc_transition(target, eta, &x, &v, log_u)?;
        if out.invalid {
            invalid += 1;
        }
        accepted += usize::from(out.accepted);
        let closed = quadratic_delta_h(&diag, eta, &x, &out.proposal.x);
        max_gap = max_gap.max(relative_gap(out.delta_h, closed));
        if hambound_checked {
            let bound = hard_instance_delta_h_bound(kappa, eta, &x, &v);
            // rounding slack on the scale of the terms being compared
            let slack = 1e-9 * out.delta_h.abs().max(bound.abs()).max(1.0);
            if out.delta_h < bound - slack {
                violations += 1;
            }
        }
        log_acc.push((-out.delta_h).min(0.0));
        dh.push(out.delta_h);
    }
    let la = MonteCarloEstimate::from_values(log_acc);
    let acc = MonteCarloEstimate::proportion(accepted, spec.n_draws);
    Ok(LowerBoundRow {
        c,
        eta,
        mean_log_accept: la.mean,
        mean_log_accept_se: la.standard_error,
        accept_rate: acc.mean,
        accept_rate_se: acc.standard_error,
        mean_delta_h: MonteCarloEstimate::from_values(dh).mean,
        n_draws: spec.n_draws,
        max_identity_rel_err: max_gap,
        hambound_checked,
        hambound_violations: violations,
        invalid_draws: invalid,
    })
}

/// For each `c`: draw `x ∼ π*` exactly, `v ∼ N(0, I)`, take one HMC step with
/// `η = c/√κ`, and record the log acceptance probability and the decision.
///
/// Each `c` uses its own stream, so rows do not depend on the other values.
pub fn lower_bound_experiment(spec: &LowerBoundRunSpec) -> Result<LowerBoundResult> {
    spec.validate()?;
    let target: TargetDensity<f64> = make_target(&TargetSpec::hard_instance(spec.kappa, spec.dim))?;
    let rows = (0..spec.c_values.len())
        .into_par_iter()
        .map(|i| lower_bound_row(spec, &target, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(LowerBoundResult { spec: spec.clone(), rows })
}

impl LowerBoundResult {
    /// Columns `c,eta,mean_log_accept,accept_rate,n_draws`.
    pub fn table(&self) -> Table {
        let mut t = Table::new(
            "lower_bound",
            &[
                ("c", ColumnKind::Float),
                ("eta", ColumnKind::Float),
                ("mean_log_accept", ColumnKind::Float),
                ("accept_rate", ColumnKind::Float),
                ("n_draws", ColumnKind::Int),
            ],
        );
        for r in &self.rows {
            t.push(vec![
                r.c.into(),
                r.eta.into(),
                r.mean_log_accept.into(),
                r.accept_rate.into(),
                r.n_draws.into(),
            ])
            .expect("row matches layout");
        }
        t
    }

    /// Fitted exponent of `−E[log accept]` in `c`.
    pub fn collapse_exponent(&self) -> Result<f64> {
        let cs: Vec<f64> = self.rows.iter().map(|r| r.c).collect();
        let ys: Vec<f64> = self.rows.iter().map(|r| -r.mean_log_accept).collect();
        fit_loglog_slope(&cs, &ys)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRunSpec {
    pub kappas: Vec<f64>,
    pub dims: Vec<usize>,
    pub eps: f64,
    pub ks_threshold: f64,
    pub max_iters: usize,
    pub n_chains: usize,
    /// Constant in the reported iteration budget.
    pub budget_const: f64,
    pub seed: u64,
}

impl ScalingRunSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kappas.is_empty() || self.dims.is_empty() {
            return Err(Error::InvalidArgument("scaling grid is empty".into()));
        }
        if self.kappas.iter().any(|&k| !(k.is_finite() && k >= 1.0)) || self.dims.contains(&0) {
            return Err(Error::InvalidArgument("grid needs kappa >= 1 and dim >= 1".into()));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) || !(self.ks_threshold > 0.0 && self.ks_threshold < 1.0) {
            return Err(Error::InvalidArgument("eps and ks_threshold must lie in (0, 1)".into()));
        }
        if self.max_iters == 0 || self.n_chains == 0 {
            return Err(Error::InvalidArgument("max_iters and n_chains must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingRow {
    pub kappa: f64,
    pub dim: usize,
    pub eta: f64,
    /// First checkpoint where the running-average law passed, if any.
    pub k_hat: Option<usize>,
    pub accept_rate: f64,
    /// Worst per-coordinate KS distance at `k_hat`, or at `max_iters`.
    pub final_ks: f64,
    pub budget_inner: usize,
}

impl ScalingRow {
    pub fn resolved(&self) -> bool {
        self.k_hat.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingResult {
    pub spec: ScalingRunSpec,
    pub rows: Vec<ScalingRow>,
}

// Histogram of standardized coordinates: `BINS` cells over [−Z_MAX, Z_MAX)
// plus an underflow and an overflow cell.
const BINS: usize = 4096;
const Z_MAX: f64 = 8.0;
const CELLS: usize = BINS + 2;

fn bin_of(z: f64) -> usize {
    let t = (z + Z_MAX) * (BINS as f64 / (2.0 * Z_MAX));
    if t < 0.0 {
        0
    } else if t >= BINS as f64 {
        CELLS - 1
    } else {
        t as usize + 1
    }
}

struct ChainBlock {
    chains: Vec<(StepWorkspace<f64>, crate::rng::ChainRng)>,
    hist: Vec<u64>,
    accepted: u64,
    steps: u64,
}

impl ChainBlock {
    fn record(&mut self, x: &[f64], center: &[f64], inv_sd: &[f64]) {
        for (i, ((xi, m), s)) in x.iter().zip(center).zip(inv_sd).enumerate() {
            self.hist[i * CELLS + bin_of((xi - m) * s)] += 1;
        }
    }

    fn advance(&mut self, target: &TargetDensity<f64>, eta: f64, n: usize, center: &[f64], inv_sd: &[f64]) {
        let mut chains = std::mem::take(&mut self.chains);
        for (ws, rng) in chains.iter_mut() {
            for _ in 0..n {
                let rec = ws.step(target, eta, rng);
                self.accepted += u64::from(rec.accepted);
                self.steps += 1;
                self.record(&ws.x, center, inv_sd);
            }
        }
        self.chains = chains;
    }
}

/// Largest per-coordinate distance between the pooled histogram CDF and `Φ`,
/// evaluated at every bin edge.
fn binned_ks(hist: &[u64], dim: usize, edge_cdf: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..dim {
        let h = &hist[i * CELLS..(i + 1) * CELLS];
        let n = h.iter().sum::<u64>() as f64;
        let mut below = h[0];
        for (j, &phi) in edge_cdf.iter().enumerate() {
            worst = worst.max((below as f64 / n - phi).abs());
            below += h[j + 1];
        }
    }
    worst
}

fn next_checkpoint(k: usize) -> usize {
    if k < 64 {
        k + 1
    } else {
        (k as f64 * 1.02).ceil() as usize
    }
}

fn cell_seed(seed: u64, kappa: f64, dim: usize) -> u64 {
    derive_seed(derive_seed(seed, kappa.to_bits()), dim as u64)
}

/// One grid cell: `n_chains` warm-started chains, checked at geometrically
/// spaced checkpoints `k` against `π*` through the pooled law of all iterates
/// `x_0, …, x_{k−1}` of all chains, which is the law of the averaged sampler.
pub fn scaling_cell(spec: &ScalingRunSpec, kappa: f64, dim: usize) -> Result<ScalingRow> {
    let target: TargetDensity<f64> = make_target(&TargetSpec::hard_instance(kappa, dim))?;
    let eta = default_step_size_for(&target, spec.eps)?.eta;
    let budget = iteration_budget(kappa, dim, spec.eps, spec.budget_const)?;
    let marginals = target.gaussian_marginals().expect("hard instance is Gaussian");
    let center: Vec<f64> = marginals.iter().map(|m| m.0).collect();
    let inv_sd: Vec<f64> = marginals.iter().map(|m| 1.0 / m.1).collect();
    let edge_cdf: Vec<f64> = (0..=BINS)
        .map(|j| normal_cdf(-Z_MAX + 2.0 * Z_MAX * j as f64 / BINS as f64))
        .collect();

    // Chains are grouped in blocks for parallelism; counts are exact integers,
    // so the result does not depend on how chains are grouped.
    let seed = cell_seed(spec.seed, kappa, dim);
    let n_blocks = rayon::current_num_threads().clamp(1, spec.n_chains);
    let per_block = spec.n_chains.div_ceil(n_blocks);
    let mut blocks = Vec::with_capacity(n_blocks);
    for b in 0..n_blocks {
        let mut block = ChainBlock {
            chains: Vec::new(),
            hist: vec![0; dim * CELLS],
            accepted: 0,
            steps: 0,
        };
        for i in b * per_block..((b + 1) * per_block).min(spec.n_chains) {
            let mut rng = stream_rng(seed, i as u64);
            let x0 = warm_start(&target, &mut rng);
            block.record(&x0, &center, &inv_sd);
            block.chains.push((StepWorkspace::new(&target, &x0)?, rng));
        }
        blocks.push(block);
    }

    let mut k = 1;
    let mut total = vec![0u64; dim * CELLS];
    loop {
        total.iter_mut().for_each(|t| *t = 0);
        for b in &blocks {
            total.iter_mut().zip(&b.hist).for_each(|(t, h)| *t += h);
        }
        let ks = binned_ks(&total, dim, &edge_cdf);
        let passed = ks <= spec.ks_threshold;
        if passed || k >= spec.max_iters {
            let accepted: u64 = blocks.iter().map(|b| b.accepted).sum();
            let steps: u64 = blocks.iter().map(|b| b.steps).sum();
            return Ok(ScalingRow {
                kappa,
                dim,
                eta,
                k_hat: passed.then_some(k),
                accept_rate: if steps == 0 { 1.0 } else { accepted as f64 / steps as f64 },
                final_ks: ks,
                budget_inner: budget.inner,
            });
        }
        let next = next_checkpoint(k).min(spec.max_iters);
        blocks
            .par_iter_mut()
            .for_each(|b| b.advance(&target, eta, next - k, &center, &inv_sd));
        k = next;
    }
}

/// Every `(κ, d)` cell of the grid, in `κ`-major order. Cell seeds depend only
/// on `(seed, κ, d)`, so a cell gives the same row in any grid containing it.
pub fn scaling_study(spec: &ScalingRunSpec) -> Result<ScalingResult> {
    spec.validate()?;
    let mut rows = Vec::with_capacity(spec.kappas.len() * spec.dims.len());
    for &kappa in &spec.kappas {
        for &dim in &spec.dims {
            rows.push(scaling_cell(spec, kappa, dim)?);
        }
    }
    Ok(ScalingResult { spec: spec.clone(), rows })
}

impl ScalingResult {
    /// Columns `kappa,dim,eta,k_hat,accept_rate,resolved`; `k_hat` is empty
    /// for unresolved rows.
    pub fn table(&self) -> Table {
        let mut t = Table::new(
            "scaling",
            &[
                ("kappa", ColumnKind::Float),
                ("dim", ColumnKind::Int),
                ("eta", ColumnKind::Float),
                ("k_hat", ColumnKind::Int),
                ("accept_rate", ColumnKind::Float),
                ("resolved", ColumnKind::Bool),
            ],
        );
        for r in &self.rows {
            t.push(vec![
                r.kappa.into(),
                r.dim.into(),
                r.eta.into(),
                Cell::from(r.k_hat),
                r.accept_rate.into(),
                r.resolved().into(),
            ])
            .expect("row matches layout");
        }
        t
    }

    /// Log-log slope of `k̂` against `κ` (`by_kappa`) or `d`; errors if any row
    /// is unresolved.
    pub fn slope(&self, by_kappa: bool) -> Result<f64> {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for r in &self.rows {
            let k = r.k_hat.ok_or_else(|| {
                Error::InvalidArgument(format!("cell kappa={} dim={} did not resolve", r.kappa, r.dim))
            })?;
            xs.push(if by_kappa { r.kappa } else { r.dim as f64 });
            ys.push(k as f64);
        }
        fit_loglog_slope(&xs, &ys)
    }
}
