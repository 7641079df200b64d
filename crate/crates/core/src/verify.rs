//! Built-in invariant suites, runnable from the command line as a release gate.
//! Every check reports its worst measured deviation against a fixed tolerance.

use std::fmt;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diagnostics::{bregman_distance, bregman_lower_bound};
use crate::error::{Error, Result};
use crate::forward::{self, autoconvolve, derivative_apply, g_adjoint, g_apply, outer, Kernel, SampledKernel, TwoVarFunction};
use crate::signal::{add_noise, fft_convolve, Domain, GridSignal, NoiseSpec};
use crate::solver::{cg_solve, gauss_newton_solve, tikhonov_gradient, tikhonov_value, TikhonovConfig};
use crate::spectral::{builtin_min_resolution, builtin_source, construct_source, PhiOperator, SourceCertificate, SourceOptions};
use crate::subdiff::{
    convexify_1d, hilbert_norm_subgradient, norm_power, sample_nsd, sample_points, subgradient_holds, sum_rule_counterexample,
    RealVec,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Suite {
    Signal,
    Forward,
    Spectral,
    Solver,
    Diagnostics,
    Subdiff,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Signal,
        Suite::Forward,
        Suite::Spectral,
        Suite::Solver,
        Suite::Diagnostics,
        Suite::Subdiff,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Signal => "signal",
            Suite::Forward => "forward",
            Suite::Spectral => "spectral",
            Suite::Solver => "solver",
            Suite::Diagnostics => "diagnostics",
            Suite::Subdiff => "subdiff",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        // the forward suite houses the adjoint checks
        if s == "adjoint" {
            return Ok(Suite::Forward);
        }
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown suite '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub worst: f64,
    pub tolerance: f64,
}

impl Check {
    fn new(name: impl Into<String>, worst: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            worst,
            tolerance,
        }
    }

    /// Boolean properties: 0 when they hold, 1 otherwise.
    fn flag(name: impl Into<String>, holds: bool) -> Self {
        Self::new(name, if holds { 0.0 } else { 1.0 }, 0.0)
    }

    pub fn passed(&self) -> bool {
        self.worst <= self.tolerance
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "[{}] {}", if self.passed() { "PASS" } else { "FAIL" }, self.suite.name())?;
        for c in &self.checks {
            writeln!(
                f,
                "  {:<4} {:<48} worst {:.3e} (tol {:.1e})",
                if c.passed() { "ok" } else { "FAIL" },
                c.name,
                c.worst,
                c.tolerance
            )?;
        }
        Ok(())
    }
}

pub type AdjointFn = fn(&GridSignal, &GridSignal, &Kernel) -> Result<GridSignal>;

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub resolutions: Vec<usize>,
    pub dims: Vec<usize>,
    pub seed: u64,
    /// The derivative adjoint under test; swapped out for mutation checks.
    pub derivative_adjoint: AdjointFn,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            resolutions: vec![16, 64],
            dims: vec![1, 2, 4],
            seed: 0x7e51,
            derivative_adjoint: forward::derivative_adjoint,
        }
    }
}

pub fn run_suite(suite: Suite, opts: &VerifyOptions) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ suite as u64);
    let checks = match suite {
        Suite::Signal => signal_suite(opts, &mut rng)?,
        Suite::Forward => forward_suite(opts, &mut rng)?,
        Suite::Spectral => spectral_suite(opts)?,
        Suite::Solver => solver_suite(opts, &mut rng)?,
        Suite::Diagnostics => diagnostics_suite(opts, &mut rng)?,
        Suite::Subdiff => subdiff_suite(opts)?,
    };
    Ok(SuiteReport { suite, checks })
}

pub fn run_all(opts: &VerifyOptions) -> Result<Vec<SuiteReport>> {
    Suite::ALL.iter().map(|&s| run_suite(s, opts)).collect()
}

fn random_samples(len: usize, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    (0..len)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect()
}

fn random_signal(n: usize, domain: Domain, rng: &mut ChaCha8Rng) -> Result<GridSignal> {
    GridSignal::new(random_samples(domain.samples(n), rng), n, domain)
}

fn random_kernel(n: usize, rng: &mut ChaCha8Rng) -> Result<Kernel> {
    let strip = random_samples((n + 1) * (n + 1), rng);
    Ok(Kernel::Sampled(SampledKernel::from_strip(n, strip)?))
}

fn signal_suite(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    let mut parallelogram: f64 = 0.0;
    let mut symmetry: f64 = 0.0;
    let mut noise: f64 = 0.0;
    for &n in &opts.resolutions {
        for _ in 0..50 {
            let u = random_signal(n, Domain::Unit, rng)?;
            let v = random_signal(n, Domain::Unit, rng)?;
            let lhs = (&u + &v).norm_sqr() + (&u - &v).norm_sqr();
            let rhs = 2.0 * (u.norm_sqr() + v.norm_sqr());
            parallelogram = parallelogram.max((lhs - rhs).abs() / rhs);
            symmetry = symmetry.max((u.inner_real(&v)? - v.inner_real(&u)?).abs());
            let delta = rng.random_range(1e-4..1.0);
            let g = add_noise(&v, NoiseSpec::new(delta, rng.random())?)?;
            noise = noise.max(((&g - &v).norm() - delta).abs() / delta);
        }
    }
    let mut convolution: f64 = 0.0;
    for la in 1..=64 {
        let lb = rng.random_range(1..=64);
        let a = random_samples(la, rng);
        let b = random_samples(lb, rng);
        let fast = fft_convolve(&a, &b);
        let mut scale: f64 = 0.0;
        let mut err: f64 = 0.0;
        for (k, &got) in fast.iter().enumerate() {
            let direct: Complex64 = (0..la).filter(|&i| k >= i && k - i < lb).map(|i| a[i] * b[k - i]).sum();
            scale = scale.max(direct.norm());
            err = err.max((got - direct).norm());
        }
        convolution = convolution.max(err / scale.max(1.0));
    }
    Ok(vec![
        Check::new("parallelogram law (relative)", parallelogram, 1e-10),
        Check::new("inner product symmetry", symmetry, 0.0),
        Check::new("noise norm (relative)", noise, 1e-12),
        Check::new("fft convolution vs direct sum", convolution, 1e-10),
    ])
}

fn forward_suite(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    let mut g_adj: f64 = 0.0;
    let mut d_adj: f64 = 0.0;
    let mut factor: f64 = 0.0;
    let mut triangle: f64 = 0.0;
    for &n in &opts.resolutions {
        for trial in 0..50 {
            let kernel = if trial % 2 == 0 { Kernel::Trivial } else { random_kernel(n, rng)? };
            let phi = random_signal(n, Domain::Double, rng)?;
            let w = TwoVarFunction::new(random_samples((n + 1) * (n + 1), rng), n)?;
            let lhs = phi.inner_real(&g_apply(&w, &kernel)?)?;
            let rhs = g_adjoint(&phi, &kernel)?.inner_real(&w)?;
            g_adj = g_adj.max((lhs - rhs).abs() / (phi.norm() * w.norm()));

            let u = random_signal(n, Domain::Unit, rng)?;
            let h = random_signal(n, Domain::Unit, rng)?;
            let r = random_signal(n, Domain::Double, rng)?;
            let lhs = derivative_apply(&u, &h, &kernel)?.inner_real(&r)?;
            let rhs = h.inner_real(&(opts.derivative_adjoint)(&u, &r, &kernel)?)?;
            d_adj = d_adj.max((lhs - rhs).abs() / (u.norm() * h.norm() * r.norm()));

            let direct = autoconvolve(&u, &kernel)?;
            let lifted = g_apply(&outer(&u)?, &kernel)?;
            factor = factor.max((&direct - &lifted).norm() / direct.norm().max(f64::MIN_POSITIVE));
        }
        let one = GridSignal::constant(Complex64::new(1.0, 0.0), n, Domain::Unit);
        let conv = autoconvolve(&one, &Kernel::Trivial)?;
        let err = (0..conv.len())
            .map(|j| {
                let t = conv.point(j);
                (conv.samples()[j] - Complex64::new(t.min(2.0 - t), 0.0)).norm() * n as f64 / 2.0
            })
            .fold(0.0, f64::max);
        triangle = triangle.max(err);
    }
    Ok(vec![
        Check::new("G adjoint identity (relative)", g_adj, 1e-10),
        Check::new("derivative adjoint identity (relative)", d_adj, 1e-10),
        Check::new("factorization A = G(u ⊗ u)", factor, 1e-12),
        Check::new("indicator autoconvolution, error in units of 2/N", triangle, 1.0),
    ])
}

fn certificates(n: usize) -> Result<Vec<(String, SourceCertificate)>> {
    let mut out = Vec::new();
    for which in 1..=3u8 {
        if n >= builtin_min_resolution(which)? {
            let cert = construct_source(&builtin_source(which, n)?, &Kernel::Trivial, SourceOptions::default())?;
            out.push((format!("phi{which}"), cert));
        }
    }
    let constant = GridSignal::constant(Complex64::new(2.0, 0.0), n, Domain::Double);
    out.push((
        "const".into(),
        construct_source(&constant, &Kernel::Trivial, SourceOptions::default())?,
    ));
    Ok(out)
}

fn spectral_suite(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let mut pairing: f64 = 0.0;
    let mut eigen: f64 = 0.0;
    let mut norm: f64 = 0.0;
    let mut power_vs_dense: f64 = 0.0;
    for &n in &opts.resolutions {
        for (_, cert) in certificates(n)? {
            eigen = eigen.max(cert.eigen_residual()?);
            let op: PhiOperator = cert.phi_operator();
            let ev = op.dense_eigenvalues()?;
            let top = ev[0];
            norm = norm.max((top - 1.0).abs());
            let m = ev.len();
            for i in 0..m {
                pairing = pairing.max((ev[i] + ev[m - 1 - i]).abs() / top);
            }
            power_vs_dense = power_vs_dense.max((cert.lambda2 - ev[1].max(0.0)).abs());
        }
    }
    Ok(vec![
        Check::new("spectrum symmetric about zero (relative)", pairing, 1e-9),
        Check::new("eigen-condition Φ[u†] = u† (relative)", eigen, 1e-8),
        Check::new("operator norm equals one", norm, 1e-6),
        Check::new("second eigenvalue vs dense oracle", power_vs_dense, 1e-6),
    ])
}

fn solver_suite(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    let n = opts.resolutions.first().copied().unwrap_or(16);
    let kernel = Kernel::Trivial;
    let eps = 1e-5;
    let mut gradient: f64 = 0.0;
    for _ in 0..20 {
        let u = random_signal(n, Domain::Unit, rng)?;
        let h = random_signal(n, Domain::Unit, rng)?;
        let g = random_signal(n, Domain::Double, rng)?;
        let alpha = rng.random_range(0.0..1.0);
        let plus = tikhonov_value(&(&u + &(&h * eps)), &g, alpha, &kernel)?;
        let minus = tikhonov_value(&(&u - &(&h * eps)), &g, alpha, &kernel)?;
        let fd = (plus - minus) / (2.0 * eps);
        let analytic = tikhonov_gradient(&u, &g, alpha, &kernel)?.inner_real(&h)?;
        gradient = gradient.max((fd - analytic).abs() / analytic.abs().max(1.0));
    }

    let u = random_signal(n, Domain::Unit, rng)?;
    let alpha = 0.1;
    let normal = |h: &GridSignal| -> Result<GridSignal> {
        let jh = derivative_apply(&u, h, &kernel)?;
        let mut out = (opts.derivative_adjoint)(&u, &jh, &kernel)?;
        out.axpy(alpha, h);
        Ok(out)
    };
    let mut self_adjoint: f64 = 0.0;
    for _ in 0..10 {
        let h1 = random_signal(n, Domain::Unit, rng)?;
        let h2 = random_signal(n, Domain::Unit, rng)?;
        let a = normal(&h1)?.inner_real(&h2)?;
        let b = h1.inner_real(&normal(&h2)?)?;
        self_adjoint = self_adjoint.max((a - b).abs() / (h1.norm() * h2.norm() * (1.0 + u.norm_sqr())));
    }
    let rhs = random_signal(n, Domain::Unit, rng)?;
    let cg = cg_solve(normal, &rhs, 1e-10, 2000)?;
    let cg_residual = (&normal(&cg.solution)? - &rhs).norm() / rhs.norm();

    let g = autoconvolve(&u, &kernel)?;
    let mut exact = TikhonovConfig::new(0.0, -&u);
    exact.allow_unregularized = true;
    let stay = gauss_newton_solve(&g, &kernel, &exact)?;
    let noisy = add_noise(&g, NoiseSpec::new(0.01 * g.norm(), 3)?)?;
    let start = &u + &random_signal(n, Domain::Unit, rng)?.scale_real(0.1);
    let config = TikhonovConfig::new(1e-3, start.clone());
    let run = gauss_newton_solve(&noisy, &kernel, &config)?;
    let increase = (run.objective - tikhonov_value(&start, &noisy, 1e-3, &kernel)?).max(0.0);

    Ok(vec![
        Check::new("gradient vs central differences (relative)", gradient, 1e-6),
        Check::new("normal operator self-adjoint", self_adjoint, 1e-10),
        Check::new("CG residual (relative)", cg_residual, 1e-9),
        Check::new("exact data at −u† is stationary", (&stay.minimizer - &-&u).norm() + stay.residual_norm, 0.0),
        Check::new("monotone descent (objective increase)", increase, 0.0),
        Check::flag("noisy solve converges", run.converged),
    ])
}

fn diagnostics_suite(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    let mut trivial: f64 = 0.0;
    let mut lower: f64 = 0.0;
    let mut nonneg: f64 = 0.0;
    let mut equality: f64 = 0.0;
    let i = Complex64::new(0.0, 1.0);
    for &n in &opts.resolutions {
        for (name, cert) in certificates(n)? {
            let u = &cert.u_true;
            let s = u.norm_sqr();
            trivial = trivial
                .max(bregman_distance(u, &cert)?.abs() / s)
                .max(bregman_distance(&-u, &cert)?.abs() / s)
                .max((bregman_distance(&u.scale(i), &cert)? - 2.0 * s).abs() / s);
            for _ in 0..200 {
                let mut v = u + &random_signal(n, Domain::Unit, rng)?.scale_real(rng.random_range(0.0..3.0));
                let scale = 1.0 + v.norm_sqr();
                let d = bregman_distance(&v, &cert)?;
                let lb = bregman_lower_bound(&v, &cert)?;
                lower = lower.max((lb - d) / scale);
                nonneg = nonneg.max(-d / v.norm_sqr());
                if name == "const" {
                    let iu = u.scale(i);
                    let along = iu.inner_real(&v)? / iu.norm_sqr();
                    v.axpy(-along, &iu);
                    let gap = bregman_distance(&v, &cert)? - bregman_lower_bound(&v, &cert)?;
                    equality = equality.max(gap.abs() / (1.0 + v.norm_sqr()));
                }
            }
        }
    }
    Ok(vec![
        Check::new("Bregman values at ±u†, iu† (relative)", trivial, 1e-9),
        Check::new("Bregman nonnegative (relative)", nonneg, 1e-10),
        Check::new("lower bound inequality violation", lower, 1e-9),
        Check::new("rank-one certificate equality", equality, 1e-9),
    ])
}

fn subdiff_suite(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let mut worst_sq: f64 = 0.0;
    let mut worst_p: f64 = 0.0;
    let mut worst_sum: f64 = 0.0;
    for &d in &opts.dims {
        for trial in 0..10u64 {
            let seed = opts.seed ^ (d as u64) << 32 ^ trial;
            let u = sample_points(d, 1, 2.0, seed)?.remove(0);
            let points = sample_points(d, 1000, 3.0, seed.wrapping_add(1))?;
            let t = sample_nsd(d, 0.5 * trial as f64, seed ^ 0x55);
            let sg = hilbert_norm_subgradient(&u, &t, 2.0)?;
            let check = subgradient_holds(norm_power(2.0), &sg, &u, &points)?;
            worst_sq = worst_sq.max(-check.worst_slack);

            let p = 1.5;
            let sp = hilbert_norm_subgradient(&u, &t, p)?;
            let check = subgradient_holds(norm_power(p), &sp, &u, &points)?;
            worst_p = worst_p.max(-check.worst_slack);

            let sum = sg.sum(&sp)?;
            let check = subgradient_holds(|v: &RealVec| v.dot(v) + v.norm().powf(p), &sum, &u, &points)?;
            worst_sum = worst_sum.max(-check.worst_slack);
        }
    }
    let evidence = sum_rule_counterexample()?;
    let m = 16i32;
    let grid: Vec<f64> = (0..=m).map(|i| -1.0 + 2.0 * i as f64 / m as f64).collect();
    let diagonal: Vec<(f64, f64)> = grid.iter().map(|&t| (t, t * t)).collect();
    let conv = convexify_1d(f64::abs, &grid, &diagonal)?;
    let diag_err = grid
        .iter()
        .zip(&conv)
        .map(|(t, c)| (c - t.abs()).abs())
        .fold(0.0, f64::max);
    Ok(vec![
        Check::new("squared norm subgradients, worst violation", worst_sq, 1e-10),
        Check::new("p = 1.5 norm subgradients, worst violation", worst_p, 1e-10),
        Check::new("sum rule inclusion, worst violation", worst_sum, 1e-10),
        Check::flag("failing sum rule counterexample", evidence.confirms_counterexample()),
        Check::new("convexification restricted to the diagonal", diag_err, 1e-10),
    ])
}
