//! One-step Metropolized HMC, the leapfrog integrator, the equivalent MALA
//! step, and the default step-size rule.
//!
//! Random draws are taken in a fixed order so that seeded runs replay
//! bitwise: `hmc_step` draws the velocity (one normal per coordinate) and then
//! one uniform; `mala_step` draws its proposal noise and then one uniform.
//! With the same stream and `h = η²/2` the two samplers see identical inputs.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::scalar::{all_finite, norm_sq, Scalar};
use crate::target::TargetDensity;

/// Position and velocity.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseState<T> {
    pub x: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> PhaseState<T> {
    pub fn new(x: Vec<T>, v: Vec<T>) -> Self {
        Self { x, v }
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.x) && all_finite(&self.v)
    }

    fn check(&self, dim: usize) -> Result<()> {
        if self.x.len() != dim || self.v.len() != dim {
            return Err(Error::state(format!(
                "phase state lengths ({}, {}) do not match dimension {dim}",
                self.x.len(),
                self.v.len()
            )));
        }
        if !self.is_finite() {
            return Err(Error::state("phase state is not finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct StepOutcome<T> {
    /// `(x̃, ṽ)` for HMC. For MALA, `x̃` and the driving noise `(x̃ − x + h∇f(x))/√(2h)`.
    pub proposal: PhaseState<T>,
    pub accepted: bool,
    /// `H(x̃, ṽ) − H(x, v)`, or minus the MALA log acceptance ratio.
    pub delta_h: T,
    pub next_x: Vec<T>,
    pub log_u: T,
    /// Set when the proposal or `ΔH` was not finite; such steps are rejected.
    pub invalid: bool,
}

impl<T: Scalar> StepOutcome<T> {
    /// `min(0, −ΔH)`; `−∞` for invalid steps.
    pub fn log_accept_prob(&self) -> T {
        if self.invalid {
            T::neg_infinity()
        } else {
            T::zero().min(-self.delta_h)
        }
    }
}

/// `log u ≤ min(0, −ΔH)`, with NaN treated as rejection.
pub fn metropolis_accept<T: Scalar>(delta_h: T, log_u: T) -> bool {
    !delta_h.is_nan() && log_u <= T::zero().min(-delta_h)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSizeDerivation {
    Explicit,
    PaperRule,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepSizePolicy {
    pub eta: f64,
    pub derivation: StepSizeDerivation,
    /// `max(1, log(κ/ε))` under the default rule; 0 for explicit step sizes.
    pub log_term: f64,
}

impl StepSizePolicy {
    pub fn explicit(eta: f64) -> Result<Self> {
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::InvalidArgument(format!("step size must be positive, got {eta}")));
        }
        Ok(Self {
            eta,
            derivation: StepSizeDerivation::Explicit,
            log_term: 0.0,
        })
    }
}

/// `max(1, ln(κ/ε))`, shared by the step size, the `Ω` threshold, and the iteration budget.
pub fn clamped_log_ratio(kappa: f64, eps: f64) -> f64 {
    (kappa / eps).ln().max(1.0)
}

/// `η² = 1 / (20·L·d·max(1, log(κ/ε)))`.
pub fn default_step_size(smoothness: f64, dim: usize, kappa: f64, eps: f64) -> Result<StepSizePolicy> {
    if !(smoothness.is_finite() && smoothness > 0.0) {
        return Err(Error::InvalidArgument(format!("L must be positive, got {smoothness}")));
    }
    if dim == 0 {
        return Err(Error::InvalidArgument("dimension must be at least 1".into()));
    }
    if !(kappa.is_finite() && kappa >= 1.0) {
        return Err(Error::InvalidArgument(format!("kappa must be >= 1, got {kappa}")));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::InvalidArgument(format!("eps must lie in (0, 1], got {eps}")));
    }
    let log_term = clamped_log_ratio(kappa, eps);
    let eta_sq = 1.0 / (20.0 * smoothness * dim as f64 * log_term);
    Ok(StepSizePolicy {
        eta: eta_sq.sqrt(),
        derivation: StepSizeDerivation::PaperRule,
        log_term,
    })
}

/// Default step size for a given target.
pub fn default_step_size_for<T: Scalar>(target: &TargetDensity<T>, eps: f64) -> Result<StepSizePolicy> {
    default_step_size(
        target.smoothness().as_f64(),
        target.dim(),
        target.condition_number().as_f64(),
        eps,
    )
}

/// `H(x, v) = f(x) + ½‖v‖²`
pub fn hamiltonian<T: Scalar>(target: &TargetDensity<T>, s: &PhaseState<T>) -> Result<T> {
    s.check(target.dim())?;
    let h = raw_hamiltonian(target, &s.x, &s.v);
    if !h.is_finite() {
        return Err(Error::state("Hamiltonian is not finite"));
    }
    Ok(h)
}

fn raw_hamiltonian<T: Scalar>(target: &TargetDensity<T>, x: &[T], v: &[T]) -> T {
    target.eval(x) + T::lit(0.5) * norm_sq(v)
}

/// Half kick, drift, half kick, given `∇f(x)`; writes `∇f(x̃)` into `grad_out`.
fn leapfrog_with_grad<T: Scalar>(
    target: &TargetDensity<T>,
    eta: T,
    x: &[T],
    v: &[T],
    grad_x: &[T],
    x_out: &mut [T],
    v_out: &mut [T],
    grad_out: &mut [T],
) {
    let half = T::lit(0.5) * eta;
    for (((vo, xo), (&vi, &xi)), &gi) in v_out.iter_mut().zip(x_out.iter_mut()).zip(v.iter().zip(x)).zip(grad_x) {
        let v_mid = vi - half * gi;
        *vo = v_mid;
        *xo = xi + eta * v_mid;
    }
    target.grad_into(x_out, grad_out);
    for (vo, &gi) in v_out.iter_mut().zip(grad_out.iter()) {
        *vo = *vo - half * gi;
    }
}

/// One leapfrog step: `v′ = v − (η/2)∇f(x)`, `x̃ = x + ηv′`, `ṽ = v′ − (η/2)∇f(x̃)`.
///
/// Evaluates the gradient exactly twice.
pub fn leapfrog<T: Scalar>(target: &TargetDensity<T>, eta: T, s: &PhaseState<T>) -> Result<PhaseState<T>> {
    if !(eta > T::zero()) {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {eta}")));
    }
    s.check(target.dim())?;
    let d = target.dim();
    let grad_x = target.grad(&s.x);
    let mut out = PhaseState::new(vec![T::zero(); d], vec![T::zero(); d]);
    let mut grad_new = vec![T::zero(); d];
    leapfrog_with_grad(target, eta, &s.x, &s.v, &grad_x, &mut out.x, &mut out.v, &mut grad_new);
    if !out.is_finite() || !all_finite(&grad_x) {
        return Err(Error::state("leapfrog produced a non-finite state"));
    }
    Ok(out)
}

/// Reusable buffers for repeated HMC steps from the same chain.
///
/// Caches `f` and `∇f` at the current point so a step costs one fresh
/// gradient evaluation.
#[derive(Clone, Debug)]
pub(crate) struct StepWorkspace<T> {
    pub x: Vec<T>,
    pub f_x: T,
    pub grad_x: Vec<T>,
    v: Vec<T>,
    x_new: Vec<T>,
    v_new: Vec<T>,
    grad_new: Vec<T>,
}

/// What one cached step did.
#[derive(Clone, Copy, Debug)]
pub(crate) struct StepRecord<T> {
    pub accepted: bool,
    pub delta_h: T,
    pub invalid: bool,
}

impl<T: Scalar> StepWorkspace<T> {
    pub fn new(target: &TargetDensity<T>, x0: &[T]) -> Result<Self> {
        let d = target.dim();
        if x0.len() != d {
            return Err(Error::state(format!("start has length {}, target dimension is {d}", x0.len())));
        }
        if !all_finite(x0) {
            return Err(Error::state("start point is not finite"));
        }
        let grad_x = target.grad(x0);
        let f_x = target.eval(x0);
        if !f_x.is_finite() || !all_finite(&grad_x) {
            return Err(Error::state("potential is not finite at the start point"));
        }
        Ok(Self {
            x: x0.to_vec(),
            f_x,
            grad_x,
            v: vec![T::zero(); d],
            x_new: vec![T::zero(); d],
            v_new: vec![T::zero(); d],
            grad_new: vec![T::zero(); d],
        })
    }

    /// One Metropolized HMC step in place; same draw order as [`hmc_step`].
    pub fn step<R: Rng + ?Sized>(&mut self, target: &TargetDensity<T>, eta: T, rng: &mut R) -> StepRecord<T> {
        for vi in self.v.iter_mut() {
            *vi = T::standard_normal(rng);
        }
        let log_u = T::unit_uniform(rng).ln();
        self.transition(target, eta, log_u)
    }

    /// `ΔH` for velocity `v` from the current point, without moving.
    pub fn proposal_delta_h(&mut self, target: &TargetDensity<T>, eta: T, v: &[T]) -> T {
        self.v.copy_from_slice(v);
        leapfrog_with_grad(
            target,
            eta,
            &self.x,
            &self.v,
            &self.grad_x,
            &mut self.x_new,
            &mut self.v_new,
            &mut self.grad_new,
        );
        let half = T::lit(0.5);
        (target.eval(&self.x_new) + half * norm_sq(&self.v_new)) - (self.f_x + half * norm_sq(&self.v))
    }

    fn transition(&mut self, target: &TargetDensity<T>, eta: T, log_u: T) -> StepRecord<T> {
        leapfrog_with_grad(
            target,
            eta,
            &self.x,
            &self.v,
            &self.grad_x,
            &mut self.x_new,
            &mut self.v_new,
            &mut self.grad_new,
        );
        let f_new = target.eval(&self.x_new);
        let half = T::lit(0.5);
        let delta_h = (f_new + half * norm_sq(&self.v_new)) - (self.f_x + half * norm_sq(&self.v));
        let invalid = delta_h.is_nan() || !all_finite(&self.x_new) || !all_finite(&self.grad_new);
        let accepted = !invalid && metropolis_accept(delta_h, log_u);
        if accepted {
            std::mem::swap(&mut self.x, &mut self.x_new);
            std::mem::swap(&mut self.grad_x, &mut self.grad_new);
            self.f_x = f_new;
        }
        StepRecord {
            accepted,
            delta_h,
            invalid,
        }
    }

    fn outcome(&self, record: StepRecord<T>, x_prev: &[T], log_u: T) -> StepOutcome<T> {
        // after an accept the proposal lives in `x` and the old point was swapped out
        let proposal_x = if record.accepted { self.x.clone() } else { self.x_new.clone() };
        StepOutcome {
            proposal: PhaseState::new(proposal_x, self.v_new.clone()),
            accepted: record.accepted,
            delta_h: record.delta_h,
            next_x: if record.accepted { self.x.clone() } else { x_prev.to_vec() },
            log_u,
            invalid: record.invalid,
        }
    }
}

/// One step of Metropolized HMC: draw `v ∼ N(0, I)`, take one leapfrog step,
/// and accept with probability `min(1, exp(−ΔH))`.
pub fn hmc_step<T: Scalar, R: Rng + ?Sized>(
    target: &TargetDensity<T>,
    eta: T,
    x: &[T],
    rng: &mut R,
) -> Result<StepOutcome<T>> {
    let v: Vec<T> = (0..target.dim()).map(|_| T::standard_normal(rng)).collect();
    let log_u = T::unit_uniform(rng).ln();
    hmc_transition(target, eta, x, &v, log_u)
}

/// The deterministic part of [`hmc_step`] for a given velocity and `log u`.
pub fn hmc_transition<T: Scalar>(
    target: &TargetDensity<T>,
    eta: T,
    x: &[T],
    v: &[T],
    log_u: T,
) -> Result<StepOutcome<T>> {
    if !(eta > T::zero()) {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {eta}")));
    }
    if v.len() != target.dim() {
        return Err(Error::state("velocity length does not match dimension"));
    }
    let mut ws = StepWorkspace::new(target, x)?;
    ws.v.copy_from_slice(v);
    let record = ws.transition(target, eta, log_u);
    Ok(ws.outcome(record, x, log_u))
}

/// MALA log acceptance ratio for a move `x → x̃` with step `h`:
/// `[−f(x̃) − ‖x − x̃ + h∇f(x̃)‖²/4h] − [−f(x) − ‖x̃ − x + h∇f(x)‖²/4h]`.
pub fn mala_log_ratio<T: Scalar>(target: &TargetDensity<T>, h: T, x: &[T], x_new: &[T]) -> T {
    let grad_x = target.grad(x);
    let grad_new = target.grad(x_new);
    mala_log_ratio_with_grads(target, h, x, x_new, &grad_x, &grad_new)
}

fn mala_log_ratio_with_grads<T: Scalar>(
    target: &TargetDensity<T>,
    h: T,
    x: &[T],
    x_new: &[T],
    grad_x: &[T],
    grad_new: &[T],
) -> T {
    let mut back = T::zero();
    let mut forward = T::zero();
    for i in 0..x.len() {
        let b = x[i] - x_new[i] + h * grad_new[i];
        let f = x_new[i] - x[i] + h * grad_x[i];
        back = back + b * b;
        forward = forward + f * f;
    }
    let four_h = T::lit(4.0) * h;
    (target.eval(x) - target.eval(x_new)) + (forward - back) / four_h
}

/// One MALA step: `x̃ ∼ N(x − h∇f(x), 2hI)` with the Metropolis–Hastings
/// correction, compared in log space.
pub fn mala_step<T: Scalar, R: Rng + ?Sized>(
    target: &TargetDensity<T>,
    h: T,
    x: &[T],
    rng: &mut R,
) -> Result<StepOutcome<T>> {
    if !(h > T::zero()) {
        return Err(Error::InvalidArgument(format!("MALA step must be positive, got {h}")));
    }
    let d = target.dim();
    if x.len() != d || !all_finite(x) {
        return Err(Error::state("MALA start point is not a finite vector of the target dimension"));
    }
    let noise: Vec<T> = (0..d).map(|_| T::standard_normal(rng)).collect();
    let log_u = T::unit_uniform(rng).ln();

    let grad_x = target.grad(x);
    let scale = (T::lit(2.0) * h).sqrt();
    let x_new: Vec<T> = (0..d).map(|i| x[i] - h * grad_x[i] + scale * noise[i]).collect();
    let grad_new = target.grad(&x_new);
    let log_ratio = mala_log_ratio_with_grads(target, h, x, &x_new, &grad_x, &grad_new);
    let delta_h = -log_ratio;
    let invalid = delta_h.is_nan() || !all_finite(&x_new);
    let accepted = !invalid && metropolis_accept(delta_h, log_u);
    Ok(StepOutcome {
        next_x: if accepted { x_new.clone() } else { x.to_vec() },
        proposal: PhaseState::new(x_new, noise),
        accepted,
        delta_h,
        log_u,
        invalid,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct EquivalenceReport {
    pub n_trials: usize,
    pub eta: f64,
    pub h: f64,
    /// Largest `|(−ΔH) − MALA log ratio|` over the trials.
    pub max_discrepancy: f64,
    pub tolerance: f64,
    pub equivalent: bool,
}

/// Tolerance for the coupled comparison: 1e-10 in `f64`, scaled by machine epsilon otherwise.
pub fn equivalence_tolerance<T: Scalar>() -> f64 {
    T::epsilon().as_f64() * (1e-10 / f64::EPSILON)
}

/// Compares HMC's `−ΔH` with the MALA log ratio at `h = η²/2` on coupled proposals.
pub fn check_equivalence<T: Scalar>(
    target: &TargetDensity<T>,
    eta: T,
    n_trials: usize,
    seed: u64,
) -> Result<EquivalenceReport> {
    check_equivalence_at(target, eta, T::lit(0.5) * eta * eta, n_trials, seed)
}

/// [`check_equivalence`] with an arbitrary MALA step `h`.
///
/// Each trial draws `x = x* + z/√μ` and `v ∼ N(0, I)`, forms the HMC proposal,
/// and evaluates the MALA ratio for the same move.
pub fn check_equivalence_at<T: Scalar>(
    target: &TargetDensity<T>,
    eta: T,
    h: T,
    n_trials: usize,
    seed: u64,
) -> Result<EquivalenceReport> {
    if n_trials == 0 {
        return Err(Error::InvalidArgument("n_trials must be at least 1".into()));
    }
    if !(h > T::zero()) {
        return Err(Error::InvalidArgument(format!("MALA step must be positive, got {h}")));
    }
    let mut rng = stream_rng(seed, 0);
    let spread = T::one() / target.strong_convexity().sqrt();
    let mut max_discrepancy = 0.0f64;
    for _ in 0..n_trials {
        let x: Vec<T> = target
            .minimizer()
            .iter()
            .map(|&m| m + spread * T::standard_normal(&mut rng))
            .collect();
        let v: Vec<T> = (0..target.dim()).map(|_| T::standard_normal(&mut rng)).collect();
        let s = PhaseState::new(x, v);
        let proposal = leapfrog(target, eta, &s)?;
        let delta_h = hamiltonian(target, &proposal)? - hamiltonian(target, &s)?;
        let mala = mala_log_ratio(target, h, &s.x, &proposal.x);
        let gap = (mala + delta_h).abs().as_f64();
        if gap.is_nan() {
            return Err(Error::state("non-finite acceptance ratio in equivalence trial"));
        }
        max_discrepancy = max_discrepancy.max(gap);
    }
    let tolerance = equivalence_tolerance::<T>();
    Ok(EquivalenceReport {
        n_trials,
        eta: eta.as_f64(),
        h: h.as_f64(),
        max_discrepancy,
        tolerance,
        equivalent: max_discrepancy <= tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::target::{make_target, TargetSpec};
    use approx::assert_relative_eq;

    fn iso1() -> TargetDensity<f64> {
        make_target(&TargetSpec::gaussian_iso(1)).unwrap()
    }

    /// `f ≡ 0`: a degenerate quadratic with zero curvature, built directly.
    fn flat(dim: usize) -> TargetDensity<f64> {
        use crate::target::DiagonalQuadratic;
        use std::sync::Arc;
        let base: TargetDensity<f64> = make_target(&TargetSpec::gaussian_iso(dim)).unwrap();
        let p = Arc::new(DiagonalQuadratic::new(vec![0.0; dim], vec![0.0; dim]));
        TargetDensity::from_potential(p, 1.0, 1.0, &vec![0.0; dim], 1.0)
            .unwrap()
            .with_constants(base.smoothness(), base.strong_convexity())
    }

    #[test]
    fn hamiltonian_values() {
        let t = iso1();
        assert_eq!(hamiltonian(&t, &PhaseState::new(vec![0.0], vec![0.0])).unwrap(), 0.0);
        assert_eq!(hamiltonian(&t, &PhaseState::new(vec![1.0], vec![2.0])).unwrap(), 2.5);
        let a = hamiltonian(&t, &PhaseState::new(vec![0.3], vec![-1.7])).unwrap();
        let b = hamiltonian(&t, &PhaseState::new(vec![0.3], vec![1.7])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hamiltonian_rejects_non_finite() {
        let t = iso1();
        assert!(hamiltonian(&t, &PhaseState::new(vec![f64::NAN], vec![0.0])).is_err());
        assert!(hamiltonian(&t, &PhaseState::new(vec![1e200], vec![0.0])).is_err());
    }

    #[test]
    fn leapfrog_hand_values() {
        let out = leapfrog(&iso1(), 0.5, &PhaseState::new(vec![1.0], vec![0.0])).unwrap();
        assert_eq!(out.x, vec![0.875]);
        assert_eq!(out.v, vec![-0.46875]);
    }

    #[test]
    fn leapfrog_free_motion() {
        let t = flat(2);
        let out = leapfrog(&t, 0.25, &PhaseState::new(vec![1.0, -1.0], vec![2.0, 4.0])).unwrap();
        assert_eq!(out.x, vec![1.5, 0.0]);
        assert_eq!(out.v, vec![2.0, 4.0]);
    }

    #[test]
    fn leapfrog_rejects_bad_inputs() {
        let t = iso1();
        let s = PhaseState::new(vec![1.0], vec![0.0]);
        assert!(matches!(leapfrog(&t, 0.0, &s), Err(Error::InvalidArgument(_))));
        assert!(leapfrog(&t, 1e200, &PhaseState::new(vec![1e200], vec![1e200])).is_err());
    }

    #[test]
    fn leapfrog_reverses() {
        let t: TargetDensity<f64> =
            make_target(&TargetSpec::quartic_mix(vec![1.0, 3.0, 0.5], 0.7).with_shift(vec![0.2, 0.0, -1.0])).unwrap();
        let s = PhaseState::new(vec![0.4, -0.3, 1.2], vec![0.9, 0.1, -0.5]);
        let fwd = leapfrog(&t, 0.3, &PhaseState::new(s.x.clone(), s.v.iter().map(|v| -v).collect())).unwrap();
        let back = leapfrog(&t, 0.3, &PhaseState::new(fwd.x.clone(), fwd.v.iter().map(|v| -v).collect())).unwrap();
        for (a, b) in back.x.iter().zip(&s.x).chain(back.v.iter().zip(&s.v)) {
            assert_relative_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn flat_potential_always_accepts() {
        let t = flat(3);
        let mut rng = stream_rng(5, 0);
        let mut x = vec![0.0; 3];
        for _ in 0..200 {
            let out = hmc_step(&t, 0.7, &x, &mut rng).unwrap();
            assert_eq!(out.delta_h, 0.0);
            assert!(out.accepted);
            x = out.next_x;
        }
    }

    #[test]
    fn forced_velocity_quadratic_delta_h() {
        let out = hmc_transition(&iso1(), 0.5, &[1.0], &[0.0], -1e-300).unwrap();
        // (η²/8)(x̃² − x²) = (0.25/8)(0.765625 − 1)
        assert_relative_eq!(out.delta_h, -0.00732421875, max_relative = 1e-12);
        assert!(out.accepted);
        assert_eq!(out.next_x, vec![0.875]);
        assert_eq!(out.log_accept_prob(), 0.0);
    }

    #[test]
    fn rejection_keeps_position() {
        // big step on a stiff target: ΔH ≫ 0, and log u = 0 rejects anything with ΔH > 0
        let t: TargetDensity<f64> = make_target(&TargetSpec::gaussian_diag(vec![100.0])).unwrap();
        let out = hmc_transition(&t, 0.5, &[1.0], &[0.0], 0.0).unwrap();
        assert!(out.delta_h > 0.0);
        assert!(!out.accepted);
        assert_eq!(out.next_x, vec![1.0]);
        assert_eq!(out.proposal.x.len(), 1);
        assert_ne!(out.proposal.x, vec![1.0]);
    }

    #[test]
    fn overflow_is_flagged_and_rejected() {
        let t: TargetDensity<f64> = make_target(&TargetSpec::gaussian_diag(vec![1.0])).unwrap();
        let out = hmc_transition(&t, 1e160, &[1.0], &[1e160], f64::NEG_INFINITY).unwrap();
        assert!(out.invalid);
        assert!(!out.accepted);
        assert_eq!(out.next_x, vec![1.0]);
        assert_eq!(out.log_accept_prob(), f64::NEG_INFINITY);
    }

    #[test]
    fn nan_delta_h_rejects() {
        assert!(!metropolis_accept(f64::NAN, f64::NEG_INFINITY));
        assert!(metropolis_accept(0.0, 0.0));
        assert!(!metropolis_accept(1.0, -0.5));
        assert!(metropolis_accept(1.0, -1.5));
    }

    #[test]
    fn hmc_step_replays_bitwise() {
        let t: TargetDensity<f64> = make_target(&TargetSpec::gaussian_diag(vec![1.0, 9.0])).unwrap();
        let run = |seed| {
            let mut rng = stream_rng(seed, 3);
            let mut x = vec![0.5, -0.5];
            let mut trace = Vec::new();
            for _ in 0..50 {
                let o = hmc_step(&t, 0.2, &x, &mut rng).unwrap();
                trace.push((o.accepted, o.delta_h.to_bits()));
                x = o.next_x;
            }
            (trace, x)
        };
        assert_eq!(run(11), run(11));
    }

    #[test]
    fn workspace_matches_reference_step() {
        let t: TargetDensity<f64> =
            make_target(&TargetSpec::quartic_mix(vec![1.0, 4.0], 0.5).with_shift(vec![1.0, 0.0])).unwrap();
        let mut a = stream_rng(9, 0);
        let mut b = stream_rng(9, 0);
        let mut ws = StepWorkspace::new(&t, &[0.0, 0.0]).unwrap();
        let mut x = vec![0.0, 0.0];
        for _ in 0..100 {
            let rec = ws.step(&t, 0.6, &mut a);
            let out = hmc_step(&t, 0.6, &x, &mut b).unwrap();
            assert_eq!(rec.accepted, out.accepted);
            assert_eq!(rec.delta_h.to_bits(), out.delta_h.to_bits());
            x = out.next_x;
            assert_eq!(ws.x, x);
        }
    }

    #[test]
    fn mala_flat_always_accepts() {
        let t = flat(2);
        let mut rng = stream_rng(1, 0);
        let mut x = vec![0.0, 0.0];
        for _ in 0..100 {
            let out = mala_step(&t, 0.3, &x, &mut rng).unwrap();
            assert_eq!(out.delta_h, 0.0);
            assert!(out.accepted);
            x = out.next_x;
        }
    }

    #[test]
    fn mala_ratio_matches_hamiltonian_change() {
        let t: TargetDensity<f64> =
            make_target(&TargetSpec::quartic_mix(vec![2.0, 1.0, 5.0], 0.3).with_shift(vec![0.0, 1.0, -1.0])).unwrap();
        let eta = 0.4;
        let x = vec![0.3, 0.2, -0.7];
        let v = vec![1.1, -0.4, 0.3];
        let s = PhaseState::new(x.clone(), v);
        let prop = leapfrog(&t, eta, &s).unwrap();
        let dh = hamiltonian(&t, &prop).unwrap() - hamiltonian(&t, &s).unwrap();
        let mala = mala_log_ratio(&t, eta * eta / 2.0, &x, &prop.x);
        assert!((mala + dh).abs() < 1e-13);
        // the implied MALA noise is the HMC velocity
        let g = t.grad(&x);
        let h = eta * eta / 2.0;
        for i in 0..3 {
            let implied = (prop.x[i] - x[i] + h * g[i]) / (2.0 * h).sqrt();
            assert_relative_eq!(implied, s.v[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn coupled_steps_make_identical_decisions() {
        let t: TargetDensity<f64> = make_target(&TargetSpec::gaussian_diag(vec![1.0, 4.0, 16.0])).unwrap();
        let eta = 0.45;
        let mut a = stream_rng(21, 0);
        let mut b = stream_rng(21, 0);
        let mut x = vec![0.5, 0.1, -0.2];
        let mut rejections = 0;
        for _ in 0..2000 {
            let hmc = hmc_step(&t, eta, &x, &mut a).unwrap();
            let mala = mala_step(&t, eta * eta / 2.0, &x, &mut b).unwrap();
            assert_eq!(hmc.accepted, mala.accepted);
            assert!((hmc.delta_h - mala.delta_h).abs() < 1e-12);
            rejections += usize::from(!hmc.accepted);
            x = hmc.next_x;
        }
        assert!(rejections > 0, "test should exercise rejections");
    }

    #[test]
    fn equivalence_report_on_three_kinds() {
        for spec in [
            TargetSpec::gaussian_diag((0..8).map(|i| 10f64.powf(i as f64 / 7.0)).collect()),
            TargetSpec::quartic_mix(vec![1.0, 2.0, 3.0, 4.0], 1.0),
            TargetSpec::hard_instance(100.0, 6),
        ] {
            let t: TargetDensity<f64> = make_target(&spec).unwrap();
            let eta = default_step_size_for(&t, 0.1).unwrap().eta;
            let r = check_equivalence(&t, eta, 1000, 7).unwrap();
            assert!(r.equivalent, "{spec:?}: {r:?}");
            assert!(r.max_discrepancy <= 1e-10);
        }
    }

    #[test]
    fn mismatched_h_is_flagged() {
        let t: TargetDensity<f64> =
            make_target(&TargetSpec::gaussian_diag((0..8).map(|i| 10f64.powf(i as f64 / 7.0)).collect())).unwrap();
        let eta = 0.2;
        let r = check_equivalence_at(&t, eta, eta * eta, 1000, 7).unwrap();
        assert!(r.max_discrepancy > 1e-3, "{r:?}");
        assert!(!r.equivalent);
    }

    #[test]
    fn equivalence_needs_trials() {
        assert!(check_equivalence(&iso1(), 0.1, 0, 0).is_err());
    }

    #[test]
    fn step_size_rule() {
        let p = default_step_size(1.0, 5, std::f64::consts::E, 1.0).unwrap();
        assert_relative_eq!(p.eta * p.eta, 0.01, max_relative = 1e-14);
        assert_relative_eq!(p.eta, 0.1, max_relative = 1e-14);
        assert_eq!(p.derivation, StepSizeDerivation::PaperRule);

        let clamp = default_step_size(1.0, 1, 1.0, 1.0).unwrap();
        assert_eq!(clamp.log_term, 1.0);
        assert_relative_eq!(clamp.eta * clamp.eta, 0.05, max_relative = 1e-14);

        let a = default_step_size(3.0, 7, 40.0, 0.01).unwrap();
        let b = default_step_size(6.0, 7, 40.0, 0.01).unwrap();
        assert_relative_eq!(b.eta * b.eta, a.eta * a.eta / 2.0, max_relative = 1e-14);
    }

    #[test]
    fn step_size_rejects_bad_arguments() {
        assert!(default_step_size(1.0, 4, 10.0, 1.5).is_err());
        assert!(default_step_size(1.0, 4, 10.0, 0.0).is_err());
        assert!(default_step_size(1.0, 4, 0.9, 0.1).is_err());
        assert!(default_step_size(0.0, 4, 10.0, 0.1).is_err());
        assert!(default_step_size(1.0, 0, 10.0, 0.1).is_err());
        assert!(StepSizePolicy::explicit(-1.0).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let t: TargetDensity<f32> = make_target(&TargetSpec::gaussian_iso(1)).unwrap();
        let out = leapfrog(&t, 0.5f32, &PhaseState::new(vec![1.0], vec![0.0])).unwrap();
        assert_eq!(out.x, vec![0.875f32]);
        let r = check_equivalence(&t, 0.1f32, 100, 0).unwrap();
        assert!(r.equivalent, "{r:?}");
    }
}
