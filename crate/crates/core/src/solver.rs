//! Tikhonov functional `J_α(u) = ‖A_k[u] − g^δ‖² + α‖u‖²` and its minimization
//! by damped Gauss–Newton with an inner conjugate-gradient solve.
//!
//! The Gauss–Newton system `(J_u* J_u + αI) h = −(J_u*(A_k[u] − g^δ) + αu)`,
//! with `J_u = dA_k(u) = 2B_k[u, ·]`, is a Toeplitz system for the trivial
//! kernel; every operator application goes through the FFT paths of
//! [`crate::forward`].

use std::fmt::Write as _;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::forward::{autoconvolve, derivative_adjoint, derivative_apply, Kernel};
use crate::signal::{dft, fft_correlate, gaussian_direction, idft, Domain, GridSignal};

/// Backtracking parameters: steps `initial, initial·factor, …` down to `min_step`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineSearch {
    pub initial: f64,
    pub factor: f64,
    pub min_step: f64,
}

impl Default for LineSearch {
    fn default() -> Self {
        Self {
            initial: 1.0,
            factor: 0.5,
            min_step: 2f64.powi(-20),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preconditioner {
    Identity,
    /// Optimal circulant approximation of the Toeplitz normal matrix (trivial kernel only).
    Circulant,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TikhonovConfig {
    pub alpha: f64,
    /// Must be set to run with `alpha == 0`.
    pub allow_unregularized: bool,
    pub outer_max: usize,
    /// Stop when `‖∇J_α‖ ≤ outer_tol · (1 + ‖g^δ‖)`.
    pub outer_tol: f64,
    pub cg_max: usize,
    pub cg_tol: f64,
    pub line_search: LineSearch,
    pub preconditioner: Preconditioner,
    pub start: GridSignal,
}

impl TikhonovConfig {
    pub fn new(alpha: f64, start: GridSignal) -> Self {
        Self {
            alpha,
            allow_unregularized: false,
            outer_max: 200,
            outer_tol: 1e-10,
            cg_max: 2000,
            cg_tol: 1e-10,
            line_search: LineSearch::default(),
            preconditioner: Preconditioner::Identity,
            start,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "alpha must be finite and nonnegative, got {}",
                self.alpha
            )));
        }
        if self.alpha == 0.0 && !self.allow_unregularized {
            return Err(Error::InvalidArgument(
                "alpha = 0 requires an explicit request for the unregularized problem".into(),
            ));
        }
        if !(self.outer_tol > 0.0) || !(self.cg_tol > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        let ls = self.line_search;
        if !(ls.initial > 0.0) || !(ls.factor > 0.0 && ls.factor < 1.0) || !(ls.min_step > 0.0) {
            return Err(Error::InvalidArgument("invalid line-search parameters".into()));
        }
        if self.start.domain() != Domain::Unit {
            return Err(Error::GridMismatch("start value must live on [0,1]".into()));
        }
        Ok(())
    }
}

/// Why the outer iteration stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    LineSearchStalled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub minimizer: GridSignal,
    pub objective: f64,
    /// `‖A_k[u*] − g^δ‖`.
    pub residual_norm: f64,
    pub outer_iterations: usize,
    pub cg_iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    pub termination: Termination,
}

impl SolveReport {
    pub const CSV_HEADER: &'static str =
        "objective,residual_norm,outer_iterations,cg_iterations,converged,gradient_norm";

    pub fn csv_row(&self) -> String {
        let mut row = String::new();
        let _ = write!(
            row,
            "{:e},{:e},{},{},{},{:e}",
            self.objective,
            self.residual_norm,
            self.outer_iterations,
            self.cg_iterations,
            self.converged,
            self.gradient_norm
        );
        row
    }
}

fn check_data(u: &GridSignal, data: &GridSignal) -> Result<()> {
    if u.domain() != Domain::Unit || data.domain() != Domain::Double || u.resolution() != data.resolution() {
        return Err(Error::GridMismatch(format!(
            "u needs N on [0,1] and data N on [0,2]; got N = {} on [0,{}] and N = {} on [0,{}]",
            u.resolution(),
            u.domain().length(),
            data.resolution(),
            data.domain().length()
        )));
    }
    Ok(())
}

/// `‖A_k[u] − g^δ‖² + α‖u‖²`.
pub fn tikhonov_value(u: &GridSignal, data: &GridSignal, alpha: f64, kernel: &Kernel) -> Result<f64> {
    check_data(u, data)?;
    let residual = &autoconvolve(u, kernel)? - data;
    Ok(residual.norm_sqr() + alpha * u.norm_sqr())
}

/// Real gradient `2 dA_k(u)*[A_k[u] − g^δ] + 2αu`.
pub fn tikhonov_gradient(u: &GridSignal, data: &GridSignal, alpha: f64, kernel: &Kernel) -> Result<GridSignal> {
    check_data(u, data)?;
    let residual = &autoconvolve(u, kernel)? - data;
    let mut grad = derivative_adjoint(u, &residual, kernel)?.scale_real(2.0);
    grad.axpy(2.0 * alpha, u);
    Ok(grad)
}

/// Result of a conjugate-gradient solve.
#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub solution: GridSignal,
    pub iterations: usize,
    pub residual_norm: f64,
    pub converged: bool,
}

struct CgRun {
    outcome: CgOutcome,
    /// `(iteration, curvature)` when `⟨p, Ap⟩ ≤ 0` stopped the iteration.
    breakdown: Option<(usize, f64)>,
}

fn cg_core<A, M>(apply: A, precondition: M, rhs: &GridSignal, tol: f64, max_iter: usize) -> Result<CgRun>
where
    A: Fn(&GridSignal) -> Result<GridSignal>,
    M: Fn(&GridSignal) -> Result<GridSignal>,
{
    let mut x = GridSignal::zeros(rhs.resolution(), rhs.domain());
    let rhs_norm = rhs.norm();
    if rhs_norm == 0.0 {
        return Ok(CgRun {
            outcome: CgOutcome {
                solution: x,
                iterations: 0,
                residual_norm: 0.0,
                converged: true,
            },
            breakdown: None,
        });
    }
    let target = tol * rhs_norm;
    let mut r = rhs.clone();
    let mut z = precondition(&r)?;
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    let mut r_norm = rhs_norm;
    for it in 1..=max_iter {
        let ap = apply(&p)?;
        let curvature = p.dot(&ap);
        if !(curvature > 0.0) {
            return Ok(CgRun {
                outcome: CgOutcome {
                    solution: x,
                    iterations: it - 1,
                    residual_norm: r_norm,
                    converged: false,
                },
                breakdown: Some((it, curvature)),
            });
        }
        let step = rz / curvature;
        x.axpy(step, &p);
        r.axpy(-step, &ap);
        r_norm = r.norm();
        if r_norm <= target {
            return Ok(CgRun {
                outcome: CgOutcome {
                    solution: x,
                    iterations: it,
                    residual_norm: r_norm,
                    converged: true,
                },
                breakdown: None,
            });
        }
        z = precondition(&r)?;
        let rz_next = r.dot(&z);
        let beta = rz_next / rz;
        rz = rz_next;
        p = &z + &p.scale_real(beta);
    }
    Ok(CgRun {
        outcome: CgOutcome {
            solution: x,
            iterations: max_iter,
            residual_norm: r_norm,
            converged: false,
        },
        breakdown: None,
    })
}

/// Conjugate gradients for an operator that is self-adjoint and positive
/// definite in the real inner product. Stops at `‖r‖ ≤ tol·‖rhs‖` or after
/// `max_iter` iterations; nonpositive curvature is reported as an error.
pub fn cg_solve<A>(apply: A, rhs: &GridSignal, tol: f64, max_iter: usize) -> Result<CgOutcome>
where
    A: Fn(&GridSignal) -> Result<GridSignal>,
{
    pcg_solve(apply, |r: &GridSignal| Ok(r.clone()), rhs, tol, max_iter)
}

/// Preconditioned variant of [`cg_solve`]; `precondition` approximates the inverse operator.
pub fn pcg_solve<A, M>(apply: A, precondition: M, rhs: &GridSignal, tol: f64, max_iter: usize) -> Result<CgOutcome>
where
    A: Fn(&GridSignal) -> Result<GridSignal>,
    M: Fn(&GridSignal) -> Result<GridSignal>,
{
    let run = cg_core(apply, precondition, rhs, tol, max_iter)?;
    match run.breakdown {
        Some((iteration, curvature)) => Err(Error::InvalidArgument(format!(
            "operator is not positive definite: curvature {curvature:e} at CG iteration {iteration}"
        ))),
        None => Ok(run.outcome),
    }
}

/// Inverse of `scale·C + shift·I`, where `C` is T. Chan's optimal circulant
/// approximation of the Hermitian Toeplitz matrix `T_{jk} = Σ_m conj(u_m) u_{m+j−k}`.
struct CirculantInverse {
    inverse_spectrum: Vec<f64>,
    resolution: usize,
}

impl CirculantInverse {
    fn new(u: &GridSignal, scale: f64, shift: f64) -> Self {
        let s = u.samples();
        let n = s.len();
        let conj: Vec<Complex64> = s.iter().map(|z| z.conj()).collect();
        // acf[d] = Σ_m conj(u_m) u_{m+d} for d = 0..n-1
        let mut padded = s.to_vec();
        padded.extend(std::iter::repeat(Complex64::new(0.0, 0.0)).take(n - 1));
        let acf = fft_correlate(&padded, &conj);
        let nf = n as f64;
        let column: Vec<Complex64> = (0..n)
            .map(|d| {
                let forward = acf[d] * ((nf - d as f64) / nf);
                // T_{d-n} = conj(T_{n-d})
                let wrapped = if d == 0 { Complex64::new(0.0, 0.0) } else { acf[n - d].conj() * (d as f64 / nf) };
                forward + wrapped
            })
            .collect();
        let spectrum = dft(&column);
        let inverse_spectrum = spectrum
            .iter()
            .map(|z| 1.0 / (scale * z.re.max(0.0) + shift))
            .collect();
        Self {
            inverse_spectrum,
            resolution: u.resolution(),
        }
    }

    fn apply(&self, r: &GridSignal) -> GridSignal {
        let mut f = dft(r.samples());
        for (z, w) in f.iter_mut().zip(&self.inverse_spectrum) {
            *z *= *w;
        }
        GridSignal::from_parts(idft(&f), self.resolution, Domain::Unit)
    }
}

/// Change of `J_α` along `u + s·h` as a quartic in `s`, evaluated without cancellation.
struct StepModel {
    coefficients: [f64; 4],
}

impl StepModel {
    fn new(u: &GridSignal, h: &GridSignal, residual: &GridSignal, alpha: f64, kernel: &Kernel) -> Result<Self> {
        let b = derivative_apply(u, h, kernel)?;
        let a = autoconvolve(h, kernel)?;
        Ok(Self {
            coefficients: [
                2.0 * residual.dot(&b) + 2.0 * alpha * u.dot(h),
                b.norm_sqr() + 2.0 * residual.dot(&a) + alpha * h.norm_sqr(),
                2.0 * a.dot(&b),
                a.norm_sqr(),
            ],
        })
    }

    fn change(&self, s: f64) -> f64 {
        let [c1, c2, c3, c4] = self.coefficients;
        s * (c1 + s * (c2 + s * (c3 + s * c4)))
    }
}

/// Damped Gauss–Newton for `min J_α`. The objective never increases across
/// accepted steps.
pub fn gauss_newton_solve(data: &GridSignal, kernel: &Kernel, config: &TikhonovConfig) -> Result<SolveReport> {
    config.validate()?;
    check_data(&config.start, data)?;
    kernel.check_resolution(data.resolution())?;
    let alpha = config.alpha;
    let tol = config.outer_tol * (1.0 + data.norm());

    let mut u = config.start.clone();
    let mut cg_total = 0;
    let mut outer = 0;
    let mut termination = Termination::MaxIterations;
    let mut gradient_norm;

    loop {
        let residual = &autoconvolve(&u, kernel)? - data;
        // ½∇J_α
        let mut half_grad = derivative_adjoint(&u, &residual, kernel)?;
        half_grad.axpy(alpha, &u);
        gradient_norm = 2.0 * half_grad.norm();
        if gradient_norm <= tol {
            termination = Termination::Converged;
            break;
        }
        if outer == config.outer_max {
            break;
        }
        outer += 1;

        let rhs = -&half_grad;
        let current = u.clone();
        let normal = |h: &GridSignal| -> Result<GridSignal> {
            let jh = derivative_apply(&current, h, kernel)?;
            let mut out = derivative_adjoint(&current, &jh, kernel)?;
            out.axpy(alpha, h);
            Ok(out)
        };
        let run = match (config.preconditioner, kernel) {
            (Preconditioner::Circulant, Kernel::Trivial) => {
                let n = u.resolution() as f64;
                let inverse = CirculantInverse::new(&u, 4.0 / (n * n), alpha.max(f64::MIN_POSITIVE));
                cg_core(normal, |r: &GridSignal| Ok(inverse.apply(r)), &rhs, config.cg_tol, config.cg_max)?
            }
            _ => cg_core(normal, |r: &GridSignal| Ok(r.clone()), &rhs, config.cg_tol, config.cg_max)?,
        };
        cg_total += run.outcome.iterations;
        let mut step = run.outcome.solution;
        if step.norm() == 0.0 {
            // CG broke down before its first update; fall back to steepest descent.
            step = rhs;
        }

        let model = StepModel::new(&u, &step, &residual, alpha, kernel)?;
        let mut s = config.line_search.initial;
        let accepted = loop {
            let change = model.change(s);
            if change <= 0.0 {
                break Some(s);
            }
            s *= config.line_search.factor;
            if s < config.line_search.min_step {
                break None;
            }
        };
        match accepted {
            Some(s) => {
                debug_assert!(model.change(s) <= 0.0);
                u.axpy(s, &step);
            }
            None => {
                termination = Termination::LineSearchStalled;
                break;
            }
        }
    }

    let residual_norm = (&autoconvolve(&u, kernel)? - data).norm();
    let objective = residual_norm * residual_norm + alpha * u.norm_sqr();
    Ok(SolveReport {
        minimizer: u,
        objective,
        residual_norm,
        outer_iterations: outer,
        cg_iterations: cg_total,
        converged: termination == Termination::Converged,
        gradient_norm,
        termination,
    })
}

/// `u† + radius·‖u†‖·w` with a unit circular Gaussian direction `w` drawn from `seed`.
pub fn random_start(u_true: &GridSignal, radius: f64, seed: u64) -> Result<GridSignal> {
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(Error::InvalidArgument(format!("radius must be nonnegative, got {radius}")));
    }
    if radius == 0.0 {
        return Ok(u_true.clone());
    }
    let w = gaussian_direction(u_true.resolution(), u_true.domain(), seed);
    let mut out = u_true.clone();
    out.axpy(radius * u_true.norm(), &w);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_signal(n: usize, domain: Domain, rng: &mut ChaCha8Rng) -> GridSignal {
        let samples = (0..domain.samples(n))
            .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        GridSignal::new(samples, n, domain).unwrap()
    }

    fn stack(u: &GridSignal) -> DVector<f64> {
        let s = u.samples();
        DVector::from_iterator(2 * s.len(), s.iter().map(|z| z.re).chain(s.iter().map(|z| z.im)))
    }

    fn unstack(x: &DVector<f64>, n: usize) -> GridSignal {
        let side = n + 1;
        GridSignal::new((0..side).map(|j| c(x[j], x[side + j])).collect(), n, Domain::Unit).unwrap()
    }

    #[test]
    fn value_at_zero_and_at_exact_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 16;
        let g = random_signal(n, Domain::Double, &mut rng);
        let zero = GridSignal::zeros(n, Domain::Unit);
        assert!((tikhonov_value(&zero, &g, 0.3, &Kernel::Trivial).unwrap() - g.norm_sqr()).abs() < 1e-15);

        let u = random_signal(n, Domain::Unit, &mut rng);
        let exact = autoconvolve(&u, &Kernel::Trivial).unwrap();
        assert!(tikhonov_value(&u, &exact, 0.0, &Kernel::Trivial).unwrap() <= 1e-20);
    }

    #[test]
    fn value_matches_direct_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 16;
        let u = random_signal(n, Domain::Unit, &mut rng);
        let g = random_signal(n, Domain::Double, &mut rng);
        let alpha = 0.37;
        let us = u.samples();
        let mut fit = 0.0;
        for t in 0..=2 * n {
            let mut acc = c(0.0, 0.0);
            for s in 0..=n {
                if t >= s && t - s <= n {
                    acc += us[s] * us[t - s];
                }
            }
            fit += (acc / n as f64 - g.samples()[t]).norm_sqr() / n as f64;
        }
        let penalty: f64 = us.iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64;
        let expected = fit + alpha * penalty;
        let got = tikhonov_value(&u, &g, alpha, &Kernel::Trivial).unwrap();
        assert!((got - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn gradient_vanishes_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 12;
        let g = random_signal(n, Domain::Double, &mut rng);
        let grad = tikhonov_gradient(&GridSignal::zeros(n, Domain::Unit), &g, 0.5, &Kernel::Trivial).unwrap();
        assert_eq!(grad.norm(), 0.0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 16;
        let eps = 1e-5;
        for _ in 0..20 {
            let u = random_signal(n, Domain::Unit, &mut rng);
            let h = random_signal(n, Domain::Unit, &mut rng);
            let g = random_signal(n, Domain::Double, &mut rng);
            let alpha = rng.random_range(0.0..1.0);
            let plus = tikhonov_value(&(&u + &(&h * eps)), &g, alpha, &Kernel::Trivial).unwrap();
            let minus = tikhonov_value(&(&u - &(&h * eps)), &g, alpha, &Kernel::Trivial).unwrap();
            let fd = (plus - minus) / (2.0 * eps);
            let analytic = tikhonov_gradient(&u, &g, alpha, &Kernel::Trivial).unwrap().inner_real(&h).unwrap();
            assert!((fd - analytic).abs() <= 1e-6 * analytic.abs().max(1.0), "{fd} vs {analytic}");
        }
    }

    #[test]
    fn cg_trivial_cases() {
        let n = 8;
        let zero = GridSignal::zeros(n, Domain::Unit);
        let out = cg_solve(|x: &GridSignal| Ok(x.scale_real(3.0)), &zero, 1e-10, 10).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.solution.norm(), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = random_signal(n, Domain::Unit, &mut rng);
        let out = cg_solve(|x: &GridSignal| Ok(x.clone()), &b, 1e-10, 10).unwrap();
        assert_eq!(out.iterations, 1);
        assert!(out.solution.max_abs_diff(&b) < 1e-15);
    }

    #[test]
    fn cg_matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 16;
        let dim = 2 * (n + 1);
        let a = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
        let spd = &a * a.transpose() + DMatrix::identity(dim, dim) * 0.5;
        let b = random_signal(n, Domain::Unit, &mut rng);
        let expected = unstack(&spd.clone().lu().solve(&stack(&b)).unwrap(), n);
        let op = |x: &GridSignal| Ok(unstack(&(&spd * stack(x)), n));
        let out = cg_solve(op, &b, 1e-12, 500).unwrap();
        assert!(out.converged);
        assert!((&out.solution - &expected).norm() <= 1e-8 * expected.norm());
    }

    #[test]
    fn cg_rejects_indefinite_operator() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b = random_signal(4, Domain::Unit, &mut rng);
        assert!(cg_solve(|x: &GridSignal| Ok(-x), &b, 1e-10, 10).is_err());
    }

    #[test]
    fn normal_operator_is_self_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 16;
        let u = random_signal(n, Domain::Unit, &mut rng);
        let alpha = 0.1;
        let normal = |h: &GridSignal| {
            let jh = derivative_apply(&u, h, &Kernel::Trivial).unwrap();
            let mut out = derivative_adjoint(&u, &jh, &Kernel::Trivial).unwrap();
            out.axpy(alpha, h);
            out
        };
        for _ in 0..10 {
            let h1 = random_signal(n, Domain::Unit, &mut rng);
            let h2 = random_signal(n, Domain::Unit, &mut rng);
            let a = normal(&h1).inner_real(&h2).unwrap();
            let b = h1.inner_real(&normal(&h2)).unwrap();
            assert!((a - b).abs() <= 1e-10 * h1.norm() * h2.norm() * (1.0 + u.norm_sqr()));
        }
    }

    #[test]
    fn circulant_preconditioner_is_a_positive_approximate_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 32;
        let u = random_signal(n, Domain::Unit, &mut rng);
        let scale = 4.0 / (n * n) as f64;
        let inverse = CirculantInverse::new(&u, scale, 1e-3);
        for _ in 0..5 {
            let r = random_signal(n, Domain::Unit, &mut rng);
            assert!(inverse.apply(&r).inner_real(&r).unwrap() > 0.0);
        }
        // Exact for constant signals on the circulant's own structure: the Toeplitz
        // and circulant diagonals agree, so the trace of C equals the trace of T.
        let acf0: f64 = u.samples().iter().map(|z| z.norm_sqr()).sum();
        let trace: f64 = inverse.inverse_spectrum.iter().map(|w| (1.0 / w - 1e-3) / scale).sum();
        assert!((trace - acf0 * (n + 1) as f64).abs() <= 1e-9 * trace);
    }

    #[test]
    fn exact_start_is_accepted_immediately() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 32;
        let u = random_signal(n, Domain::Unit, &mut rng);
        let g = autoconvolve(&u, &Kernel::Trivial).unwrap();
        for start in [u.clone(), -&u] {
            let mut config = TikhonovConfig::new(0.0, start.clone());
            config.allow_unregularized = true;
            let report = gauss_newton_solve(&g, &Kernel::Trivial, &config).unwrap();
            assert!(report.converged);
            assert_eq!(report.outer_iterations, 0);
            assert_eq!(report.minimizer, start);
        }
    }

    #[test]
    fn zero_alpha_needs_explicit_request() {
        let n = 4;
        let g = GridSignal::zeros(n, Domain::Double);
        let config = TikhonovConfig::new(0.0, GridSignal::zeros(n, Domain::Unit));
        assert!(gauss_newton_solve(&g, &Kernel::Trivial, &config).is_err());
        let config = TikhonovConfig::new(-1.0, GridSignal::zeros(n, Domain::Unit));
        assert!(gauss_newton_solve(&g, &Kernel::Trivial, &config).is_err());
    }

    #[test]
    fn solver_descends_and_converges_on_noisy_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 64;
        let u_true = GridSignal::from_fn(n, Domain::Unit, |t| c((3.0 * t).sin() + 1.0, (2.0 * t).cos())).unwrap();
        let g = &autoconvolve(&u_true, &Kernel::Trivial).unwrap() + &random_signal(n, Domain::Double, &mut rng).scale_real(0.01);
        let start = random_start(&u_true, 0.3, 4).unwrap();
        let config = TikhonovConfig::new(1e-3, start.clone());
        let report = gauss_newton_solve(&g, &Kernel::Trivial, &config).unwrap();
        assert!(report.converged, "{:?}", report.termination);
        let initial = tikhonov_value(&start, &g, 1e-3, &Kernel::Trivial).unwrap();
        assert!(report.objective <= initial);
        let grad = tikhonov_gradient(&report.minimizer, &g, 1e-3, &Kernel::Trivial).unwrap();
        assert!(grad.norm() <= config.outer_tol * (1.0 + g.norm()));
        let recomputed = tikhonov_value(&report.minimizer, &g, 1e-3, &Kernel::Trivial).unwrap();
        assert!((recomputed - report.objective).abs() <= 1e-12 * recomputed);
    }

    #[test]
    fn tiny_instance_beats_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 2;
        let alpha = 1e-3;
        let u_true = random_signal(n, Domain::Unit, &mut rng);
        let g = autoconvolve(&u_true, &Kernel::Trivial).unwrap();
        let config = TikhonovConfig::new(alpha, random_start(&u_true, 0.1, 1).unwrap());
        let report = gauss_newton_solve(&g, &Kernel::Trivial, &config).unwrap();
        assert!(report.converged);

        let base: Vec<f64> = u_true.samples().iter().flat_map(|z| [z.re, z.im]).collect();
        let offsets: Vec<f64> = (-4..=4).map(|i| 0.05 * i as f64).collect();
        let mut best = f64::INFINITY;
        let mut idx = [0usize; 6];
        loop {
            let p: Vec<Complex64> = (0..3)
                .map(|j| c(base[2 * j] + offsets[idx[2 * j]], base[2 * j + 1] + offsets[idx[2 * j + 1]]))
                .collect();
            let v = GridSignal::new(p, n, Domain::Unit).unwrap();
            best = best.min(tikhonov_value(&v, &g, alpha, &Kernel::Trivial).unwrap());
            let mut k = 0;
            while k < 6 {
                idx[k] += 1;
                if idx[k] < offsets.len() {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == 6 {
                break;
            }
        }
        assert!(report.objective <= best + 1e-14, "{} vs grid {}", report.objective, best);
    }

    #[test]
    fn circulant_preconditioning_reaches_the_same_minimizer() {
        let n = 64;
        let u_true = GridSignal::from_fn(n, Domain::Unit, |t| c(1.0 + t, 0.5 * (4.0 * t).sin())).unwrap();
        let g = autoconvolve(&u_true, &Kernel::Trivial).unwrap();
        let start = random_start(&u_true, 0.2, 9).unwrap();
        let mut config = TikhonovConfig::new(1e-4, start);
        let plain = gauss_newton_solve(&g, &Kernel::Trivial, &config).unwrap();
        config.preconditioner = Preconditioner::Circulant;
        let pre = gauss_newton_solve(&g, &Kernel::Trivial, &config).unwrap();
        assert!(plain.converged && pre.converged);
        assert!((&plain.minimizer - &pre.minimizer).norm() <= 1e-6 * plain.minimizer.norm());
    }

    #[test]
    fn random_start_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let u = random_signal(20, Domain::Unit, &mut rng);
        assert_eq!(random_start(&u, 0.0, 3).unwrap(), u);
        let a = random_start(&u, 0.5, 1).unwrap();
        assert!(((&a - &u).norm() - 0.5 * u.norm()).abs() <= 1e-12);
        assert_eq!(a, random_start(&u, 0.5, 1).unwrap());
        assert_ne!(a, random_start(&u, 0.5, 2).unwrap());
        assert!(random_start(&u, -0.1, 1).is_err());
    }

    #[test]
    fn report_row_has_header_arity() {
        let n = 8;
        let u = GridSignal::constant(c(1.0, 0.0), n, Domain::Unit);
        let g = autoconvolve(&u, &Kernel::Trivial).unwrap();
        let report = gauss_newton_solve(&g, &Kernel::Trivial, &TikhonovConfig::new(1e-6, u)).unwrap();
        assert_eq!(
            report.csv_row().split(',').count(),
            SolveReport::CSV_HEADER.split(',').count()
        );
    }
}
