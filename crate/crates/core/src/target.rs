//! Target densities `exp(-f)` with known smoothness and strong-convexity constants.
//!
//! Every target is normalized so that `f(x*) = 0`. The built-in families are
//! diagonal quadratics (isotropic, arbitrary diagonal, and the ill-conditioned
//! "hard" instance) plus a non-quadratic log-cosh blend whose Hessian spectrum
//! is known in closed form.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::scalar::{dist, dot, norm, Scalar};

/// A convex potential `f` on `R^d` with an analytic gradient.
pub trait Potential<T: Scalar>: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn value(&self, x: &[T]) -> T;

    /// Writes `∇f(x)` into `out`.
    fn gradient(&self, x: &[T], out: &mut [T]);

    /// Diagonal of `D` when `f(x) = ½(x − b)ᵀD(x − b)` exactly.
    fn quadratic_diagonal(&self) -> Option<&[T]> {
        None
    }
}

/// `½ (x − b)ᵀ D (x − b)` with `D` diagonal.
#[derive(Clone, Debug)]
pub struct DiagonalQuadratic<T> {
    diag: Vec<T>,
    center: Vec<T>,
}

impl<T: Scalar> DiagonalQuadratic<T> {
    pub fn new(diag: Vec<T>, center: Vec<T>) -> Self {
        assert_eq!(diag.len(), center.len());
        Self { diag, center }
    }
}

impl<T: Scalar> Potential<T> for DiagonalQuadratic<T> {
    fn dim(&self) -> usize {
        self.diag.len()
    }

    fn value(&self, x: &[T]) -> T {
        let half = T::lit(0.5);
        x.iter()
            .zip(&self.center)
            .zip(&self.diag)
            .fold(T::zero(), |acc, ((&xi, &bi), &li)| {
                let y = xi - bi;
                acc + half * li * y * y
            })
    }

    fn gradient(&self, x: &[T], out: &mut [T]) {
        for (((o, &xi), &bi), &li) in out.iter_mut().zip(x).zip(&self.center).zip(&self.diag) {
            *o = li * (xi - bi);
        }
    }

    fn quadratic_diagonal(&self) -> Option<&[T]> {
        Some(&self.diag)
    }
}

/// Quadratic plus log-cosh blend, with `y = x − b` and `u = 1/√d`:
///
/// `f(y) = ½ yᵀDy + w Σᵢ log cosh(yᵢ) + w log cosh(uᵀy)`
///
/// `log cosh` is convex with second derivative `sech² ∈ (0, 1]`, so the Hessian is
/// `D + w·diag(sech²(yᵢ)) + w·sech²(uᵀy)·uuᵀ`. Both additions are PSD with
/// spectral norm at most `w`, which certifies the spectrum inside
/// `[min λ, max λ + 2w]`. The upper end is attained at `y = 0` when `D` is
/// isotropic; the lower end is the infimum as `‖y‖ → ∞`.
#[derive(Clone, Debug)]
pub struct LogCoshMix<T> {
    diag: Vec<T>,
    center: Vec<T>,
    weight: T,
}

impl<T: Scalar> LogCoshMix<T> {
    pub fn new(diag: Vec<T>, center: Vec<T>, weight: T) -> Self {
        assert_eq!(diag.len(), center.len());
        Self {
            diag,
            center,
            weight,
        }
    }

    fn coupling(&self) -> T {
        T::one() / T::from_usize(self.diag.len()).unwrap().sqrt()
    }
}

fn log_cosh<T: Scalar>(t: T) -> T {
    let a = t.abs();
    a + (T::lit(-2.0) * a).exp().ln_1p() - T::lit(std::f64::consts::LN_2)
}

impl<T: Scalar> Potential<T> for LogCoshMix<T> {
    fn dim(&self) -> usize {
        self.diag.len()
    }

    fn value(&self, x: &[T]) -> T {
        let half = T::lit(0.5);
        let u = self.coupling();
        let mut quad = T::zero();
        let mut sep = T::zero();
        let mut proj = T::zero();
        for ((&xi, &bi), &li) in x.iter().zip(&self.center).zip(&self.diag) {
            let y = xi - bi;
            quad = quad + half * li * y * y;
            sep = sep + log_cosh(y);
            proj = proj + u * y;
        }
        quad + self.weight * (sep + log_cosh(proj))
    }

    fn gradient(&self, x: &[T], out: &mut [T]) {
        let u = self.coupling();
        let proj = x
            .iter()
            .zip(&self.center)
            .fold(T::zero(), |acc, (&xi, &bi)| acc + u * (xi - bi));
        let coupled = self.weight * proj.tanh() * u;
        for (((o, &xi), &bi), &li) in out.iter_mut().zip(x).zip(&self.center).zip(&self.diag) {
            let y = xi - bi;
            *o = li * y + self.weight * y.tanh() + coupled;
        }
    }
}

/// Which benchmark family to build, with its family-specific parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetKind {
    /// `f = ½‖x‖²`.
    GaussianIso { dim: usize },
    /// `f = ½ xᵀ diag(λ) x`.
    GaussianDiag { eigenvalues: Vec<f64> },
    /// `λᵢ = κ` for `i < d`, `λ_d = 1`.
    HardInstance { kappa: f64, dim: usize },
    /// Diagonal quadratic blended with log-cosh terms of the given weight.
    QuarticMix { eigenvalues: Vec<f64>, weight: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    #[serde(flatten)]
    pub kind: TargetKind,
    /// Translates the minimizer to `b`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<Vec<f64>>,
}

impl TargetSpec {
    pub fn new(kind: TargetKind) -> Self {
        Self { kind, shift: None }
    }

    pub fn gaussian_iso(dim: usize) -> Self {
        Self::new(TargetKind::GaussianIso { dim })
    }

    pub fn gaussian_diag(eigenvalues: Vec<f64>) -> Self {
        Self::new(TargetKind::GaussianDiag { eigenvalues })
    }

    pub fn hard_instance(kappa: f64, dim: usize) -> Self {
        Self::new(TargetKind::HardInstance { kappa, dim })
    }

    pub fn quartic_mix(eigenvalues: Vec<f64>, weight: f64) -> Self {
        Self::new(TargetKind::QuarticMix {
            eigenvalues,
            weight,
        })
    }

    pub fn with_shift(mut self, shift: Vec<f64>) -> Self {
        self.shift = Some(shift);
        self
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            TargetKind::GaussianIso { .. } => "gaussian_iso",
            TargetKind::GaussianDiag { .. } => "gaussian_diag",
            TargetKind::HardInstance { .. } => "hard_instance",
            TargetKind::QuarticMix { .. } => "quartic_mix",
        }
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            TargetKind::GaussianIso { dim } | TargetKind::HardInstance { dim, .. } => *dim,
            TargetKind::GaussianDiag { eigenvalues } | TargetKind::QuarticMix { eigenvalues, .. } => {
                eigenvalues.len()
            }
        }
    }

    /// Eigenvalues of the quadratic part.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let eigs = match &self.kind {
            TargetKind::GaussianIso { dim } => vec![1.0; *dim],
            TargetKind::GaussianDiag { eigenvalues } | TargetKind::QuarticMix { eigenvalues, .. } => {
                eigenvalues.clone()
            }
            TargetKind::HardInstance { kappa, dim } => {
                if !(kappa.is_finite() && *kappa >= 1.0) {
                    return Err(Error::InvalidSpec(format!("kappa must be >= 1, got {kappa}")));
                }
                let mut eigs = vec![*kappa; *dim];
                if let Some(last) = eigs.last_mut() {
                    *last = 1.0;
                }
                eigs
            }
        };
        if eigs.is_empty() {
            return Err(Error::InvalidSpec("dimension must be at least 1".into()));
        }
        if let Some(bad) = eigs.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::InvalidSpec(format!(
                "eigenvalues must be finite and positive, got {bad}"
            )));
        }
        Ok(eigs)
    }
}

/// A density `exp(−f)` with smoothness `L`, strong convexity `μ`, and minimizer `x*`.
///
/// Evaluation is pure and reentrant; clones share the underlying potential.
#[derive(Clone)]
pub struct TargetDensity<T: Scalar> {
    potential: Arc<dyn Potential<T>>,
    smoothness: T,
    strong_convexity: T,
    minimizer: Vec<T>,
    offset: T,
}

impl<T: Scalar> fmt::Debug for TargetDensity<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TargetDensity")
            .field("dim", &self.dim())
            .field("smoothness", &self.smoothness)
            .field("strong_convexity", &self.strong_convexity)
            .field("potential", &self.potential)
            .finish()
    }
}

impl<T: Scalar> TargetDensity<T> {
    /// Wraps an arbitrary potential; the minimizer is located with accelerated
    /// gradient descent from `start` and `f` is shifted so that `f(x*) = 0`.
    pub fn from_potential(
        potential: Arc<dyn Potential<T>>,
        smoothness: T,
        strong_convexity: T,
        start: &[T],
        tol: T,
    ) -> Result<Self> {
        check_constants(smoothness, strong_convexity)?;
        if start.len() != potential.dim() {
            return Err(Error::InvalidArgument(format!(
                "start has length {}, potential has dimension {}",
                start.len(),
                potential.dim()
            )));
        }
        let provisional = Self {
            potential,
            smoothness,
            strong_convexity,
            minimizer: start.to_vec(),
            offset: T::zero(),
        };
        let minimizer = find_minimizer(&provisional, start, tol)?;
        let offset = provisional.potential.value(&minimizer);
        Ok(Self {
            minimizer,
            offset,
            ..provisional
        })
    }

    fn with_known_minimizer(
        potential: Arc<dyn Potential<T>>,
        smoothness: T,
        strong_convexity: T,
        minimizer: Vec<T>,
    ) -> Self {
        let offset = potential.value(&minimizer);
        Self {
            potential,
            smoothness,
            strong_convexity,
            minimizer,
            offset,
        }
    }

    /// Same potential, different claimed constants. Nothing is checked; this
    /// exists to build deliberately wrong targets for validation self-tests.
    pub fn with_constants(&self, smoothness: T, strong_convexity: T) -> Self {
        Self {
            smoothness,
            strong_convexity,
            ..self.clone()
        }
    }

    pub fn dim(&self) -> usize {
        self.minimizer.len()
    }

    /// `L`
    pub fn smoothness(&self) -> T {
        self.smoothness
    }

    /// `μ`
    pub fn strong_convexity(&self) -> T {
        self.strong_convexity
    }

    /// `κ = L / μ`
    pub fn condition_number(&self) -> T {
        self.smoothness / self.strong_convexity
    }

    pub fn minimizer(&self) -> &[T] {
        &self.minimizer
    }

    /// `f(x)`, normalized so `f(x*) = 0`.
    pub fn eval(&self, x: &[T]) -> T {
        self.potential.value(x) - self.offset
    }

    pub fn grad_into(&self, x: &[T], out: &mut [T]) {
        self.potential.gradient(x, out);
    }

    pub fn grad(&self, x: &[T]) -> Vec<T> {
        let mut g = vec![T::zero(); x.len()];
        self.potential.gradient(x, &mut g);
        g
    }

    /// Diagonal Hessian `D` for exactly quadratic targets.
    pub fn quadratic_diagonal(&self) -> Option<&[T]> {
        self.potential.quadratic_diagonal()
    }

    /// Per-coordinate `(mean, standard deviation)` of `π*` for Gaussian targets.
    pub fn gaussian_marginals(&self) -> Option<Vec<(f64, f64)>> {
        let diag = self.quadratic_diagonal()?;
        Some(
            self.minimizer
                .iter()
                .zip(diag)
                .map(|(&m, &l)| (m.as_f64(), 1.0 / l.as_f64().sqrt()))
                .collect(),
        )
    }

    /// An exact draw from `π*`; only available for Gaussian targets.
    pub fn sample_exact<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Vec<T>> {
        let diag = self.quadratic_diagonal()?;
        Some(
            self.minimizer
                .iter()
                .zip(diag)
                .map(|(&m, &l)| m + T::standard_normal(rng) / l.sqrt())
                .collect(),
        )
    }
}

fn check_constants<T: Scalar>(smoothness: T, strong_convexity: T) -> Result<()> {
    if !(strong_convexity.is_finite() && strong_convexity > T::zero()) {
        return Err(Error::InvalidSpec(format!(
            "strong convexity must be positive, got {strong_convexity}"
        )));
    }
    if !(smoothness.is_finite() && smoothness >= strong_convexity) {
        return Err(Error::InvalidSpec(format!(
            "smoothness {smoothness} must be finite and at least strong convexity {strong_convexity}"
        )));
    }
    Ok(())
}

/// Builds the target described by `spec`.
pub fn make_target<T: Scalar>(spec: &TargetSpec) -> Result<TargetDensity<T>> {
    let eigs = spec.eigenvalues()?;
    let dim = eigs.len();
    let shift = match &spec.shift {
        None => vec![0.0; dim],
        Some(b) if b.len() != dim => {
            return Err(Error::InvalidSpec(format!(
                "shift has length {}, target dimension is {dim}",
                b.len()
            )))
        }
        Some(b) if b.iter().any(|v| !v.is_finite()) => {
            return Err(Error::InvalidSpec("shift must be finite".into()))
        }
        Some(b) => b.clone(),
    };
    let lmax = eigs.iter().cloned().fold(f64::MIN, f64::max);
    let lmin = eigs.iter().cloned().fold(f64::MAX, f64::min);
    let diag: Vec<T> = eigs.iter().map(|&l| T::lit(l)).collect();
    let center: Vec<T> = shift.iter().map(|&b| T::lit(b)).collect();

    let target = match &spec.kind {
        TargetKind::QuarticMix { weight, .. } => {
            if !(weight.is_finite() && *weight >= 0.0) {
                return Err(Error::InvalidSpec(format!(
                    "blend weight must be finite and nonnegative, got {weight}"
                )));
            }
            let potential = LogCoshMix::new(diag, center.clone(), T::lit(*weight));
            TargetDensity::with_known_minimizer(
                Arc::new(potential),
                T::lit(lmax + 2.0 * weight),
                T::lit(lmin),
                center,
            )
        }
        _ => TargetDensity::with_known_minimizer(
            Arc::new(DiagonalQuadratic::new(diag, center.clone())),
            T::lit(lmax),
            T::lit(lmin),
            center,
        ),
    };
    Ok(target)
}

/// Nesterov accelerated gradient descent with step `1/L` and momentum
/// `(√κ − 1)/(√κ + 1)`, stopping once `‖∇f‖ ≤ tol`.
///
/// Ignores the target's stored minimizer.
pub fn find_minimizer<T: Scalar>(target: &TargetDensity<T>, start: &[T], tol: T) -> Result<Vec<T>> {
    if !(tol > T::zero()) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let d = target.dim();
    if start.len() != d {
        return Err(Error::InvalidArgument(format!(
            "start has length {}, target dimension is {d}",
            start.len()
        )));
    }
    let kappa = target.condition_number().as_f64();
    let sqrt_kappa = kappa.sqrt();
    let momentum = T::lit((sqrt_kappa - 1.0) / (sqrt_kappa + 1.0));
    let step = T::one() / target.smoothness();
    let cap = 10_000 * (sqrt_kappa * (1.0 / tol.as_f64()).ln().max(1.0)).ceil() as usize;

    let mut x = start.to_vec();
    let mut y = start.to_vec();
    let mut g = vec![T::zero(); d];
    target.grad_into(&x, &mut g);
    if norm(&g) <= tol {
        return Ok(x);
    }
    let mut x_next = vec![T::zero(); d];
    for _ in 0..cap {
        target.grad_into(&y, &mut g);
        for ((xn, &yi), &gi) in x_next.iter_mut().zip(&y).zip(&g) {
            *xn = yi - step * gi;
        }
        for ((yi, &xn), &xi) in y.iter_mut().zip(&x_next).zip(&x) {
            *yi = xn + momentum * (xn - xi);
        }
        std::mem::swap(&mut x, &mut x_next);
        target.grad_into(&x, &mut g);
        let gn = norm(&g);
        if !gn.is_finite() {
            return Err(Error::state("gradient became non-finite during minimization"));
        }
        if gn <= tol {
            return Ok(x);
        }
    }
    target.grad_into(&x, &mut g);
    Err(Error::Convergence {
        iterations: cap,
        grad_norm: norm(&g).as_f64(),
    })
}

/// Outcome of one invariant check over all probes.
#[derive(Clone, Debug, Serialize)]
pub struct CheckSummary {
    pub name: &'static str,
    /// Largest normalized violation seen; negative values are slack.
    pub max_violation: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// The pair that produced `max_violation`, reported when the check fails.
    pub offending_pair: Option<(Vec<f64>, Vec<f64>)>,
}

impl CheckSummary {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            max_violation: f64::NEG_INFINITY,
            tolerance,
            passed: true,
            offending_pair: None,
        }
    }

    fn observe<T: Scalar>(&mut self, violation: f64, x: &[T], y: &[T]) {
        if violation > self.max_violation || violation.is_nan() {
            self.max_violation = violation;
            if !(violation <= self.tolerance) {
                self.passed = false;
                self.offending_pair = Some((
                    x.iter().map(|v| v.as_f64()).collect(),
                    y.iter().map(|v| v.as_f64()).collect(),
                ));
            }
        }
    }

    /// Distance to the failure boundary; `≥ 0` while the check holds.
    pub fn margin(&self) -> f64 {
        self.tolerance - self.max_violation
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub n_probes: usize,
    pub gradient: CheckSummary,
    pub smoothness: CheckSummary,
    pub strong_convexity: CheckSummary,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks().iter().all(|c| c.passed)
    }

    pub fn checks(&self) -> [&CheckSummary; 3] {
        [&self.gradient, &self.smoothness, &self.strong_convexity]
    }
}

fn probe_point<T: Scalar, R: Rng + ?Sized>(target: &TargetDensity<T>, radius: f64, rng: &mut R) -> Vec<T> {
    let d = target.dim();
    let dir: Vec<f64> = (0..d).map(|_| f64::standard_normal(rng)).collect();
    let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
    target
        .minimizer()
        .iter()
        .zip(&dir)
        .map(|(&m, &u)| m + T::lit(r * u / len))
        .collect()
}

fn finite_difference_gradient<T: Scalar>(target: &TargetDensity<T>, x: &[T]) -> Vec<T> {
    let step = T::epsilon().cbrt();
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = step * x[i].abs().max(T::one());
            probe[i] = x[i] + h;
            let up = target.eval(&probe);
            let h_up = probe[i] - x[i];
            probe[i] = x[i] - h;
            let down = target.eval(&probe);
            let h_down = x[i] - probe[i];
            probe[i] = x[i];
            (up - down) / (h_up + h_down)
        })
        .collect()
}

/// Checks the gradient against central finite differences and the two-point
/// smoothness and strong-convexity inequalities on `n_probes` random pairs
/// drawn uniformly from the ball of radius `10/√μ` around `x*`.
pub fn validate_target<T: Scalar>(
    target: &TargetDensity<T>,
    n_probes: usize,
    seed: u64,
) -> Result<ValidationReport> {
    if n_probes == 0 {
        return Err(Error::InvalidArgument("n_probes must be at least 1".into()));
    }
    let eps = T::epsilon().as_f64();
    let radius = 10.0 / target.strong_convexity().as_f64().sqrt();
    let big_l = target.smoothness().as_f64();
    let mu = target.strong_convexity().as_f64();
    let mut rng = stream_rng(seed, 0);

    let mut gradient = CheckSummary::new("gradient_finite_difference", 1e-5f64.max(100.0 * eps.powf(2.0 / 3.0)));
    let mut smoothness = CheckSummary::new("smoothness", 1e4 * eps);
    let mut convexity = CheckSummary::new("strong_convexity", 1e4 * eps);

    for _ in 0..n_probes {
        let x = probe_point(target, radius, &mut rng);
        let y = probe_point(target, radius, &mut rng);
        let gx = target.grad(&x);
        let gy = target.grad(&y);

        let fd = finite_difference_gradient(target, &x);
        let scale = norm(&gx).as_f64().max(big_l.sqrt());
        gradient.observe(dist(&gx, &fd).as_f64() / scale, &x, &y);

        let step = dist(&x, &y).as_f64();
        if step > 0.0 {
            let excess = dist(&gx, &gy).as_f64() - big_l * step;
            smoothness.observe(excess / (big_l * step), &x, &y);
        }

        for (a, b, ga) in [(&x, &y, &gx), (&y, &x, &gy)] {
            let fa = target.eval(a).as_f64();
            let fb = target.eval(b).as_f64();
            let delta: Vec<T> = b.iter().zip(a.iter()).map(|(&bi, &ai)| bi - ai).collect();
            let linear = dot(ga, &delta).as_f64();
            let quad = 0.5 * mu * norm(&delta).as_f64().powi(2);
            let gap = fb - fa - linear;
            let scale = fa.abs() + fb.abs() + linear.abs() + quad;
            if scale > 0.0 {
                convexity.observe((quad - gap) / scale, a, b);
            }
        }
    }

    Ok(ValidationReport {
        n_probes,
        gradient,
        smoothness,
        strong_convexity: convexity,
    })
}
