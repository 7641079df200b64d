//! The conjugating integral operator `Φ[u](t) = ∫ conj(k(s, s+t)) φ(s+t) conj(u(s)) ds`,
//! its leading spectrum, and source-condition certificates built from it.
//!
//! `Φ` is real-linear and complex-antilinear. Its spectrum is symmetric: an
//! eigenpair `(λ, v)` comes with `(-λ, iv)`. The power iteration therefore runs
//! on the complex-linear square `Φ∘Φ`, whose dominant eigenspace is
//! `E1 ⊕ iE1`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::forward::{autoconvolve, conjugating_correlation, Kernel};
use crate::signal::{gaussian_direction, Domain, GridSignal};

/// Largest resolution accepted by [`PhiOperator::to_dense_real`].
pub const DENSE_CAP: usize = 512;

/// Spectral gap below which a certificate is rejected as degenerate.
pub const DEGENERACY_GAP: f64 = 1e-8;

/// Source-condition operator built from a source element on `[0, 2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhiOperator {
    source: GridSignal,
    kernel: Kernel,
}

impl PhiOperator {
    pub fn new(source: GridSignal, kernel: Kernel) -> Result<Self> {
        if source.domain() != Domain::Double {
            return Err(Error::GridMismatch("source element must live on [0,2]".into()));
        }
        kernel.check_resolution(source.resolution())?;
        Ok(Self { source, kernel })
    }

    pub fn source(&self) -> &GridSignal {
        &self.source
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn resolution(&self) -> usize {
        self.source.resolution()
    }

    /// The operator built from `a·φ`, i.e. `a·Φ`.
    pub fn scaled(&self, a: f64) -> PhiOperator {
        PhiOperator {
            source: self.source.scale_real(a),
            kernel: self.kernel.clone(),
        }
    }

    /// `Φ[u](n/N) = (1/N) Σ_{k=0}^{N} conj(k(k/N, (n+k)/N)) φ((n+k)/N) conj(u(k/N))`.
    pub fn apply(&self, u: &GridSignal) -> Result<GridSignal> {
        if u.domain() != Domain::Unit || u.resolution() != self.resolution() {
            return Err(Error::GridMismatch(format!(
                "Φ acts on [0,1] signals with N = {}, got N = {} on [0,{}]",
                self.resolution(),
                u.resolution(),
                u.domain().length()
            )));
        }
        Ok(conjugating_correlation(&self.source, u, &self.kernel))
    }

    /// `Φ∘Φ`, which is complex-linear.
    pub fn apply_squared(&self, u: &GridSignal) -> Result<GridSignal> {
        self.apply(&self.apply(u)?)
    }

    /// Real matrix of `Φ` acting on stacked coordinates `(re_0..re_N, im_0..im_N)`.
    pub fn to_dense_real(&self) -> Result<DMatrix<f64>> {
        self.to_dense_real_capped(DENSE_CAP)
    }

    pub fn to_dense_real_capped(&self, cap: usize) -> Result<DMatrix<f64>> {
        let n = self.resolution();
        if n > cap {
            return Err(Error::DenseTooLarge { resolution: n, cap });
        }
        let side = n + 1;
        let inv = 1.0 / n as f64;
        let phi = self.source.samples();
        let mut m = DMatrix::zeros(2 * side, 2 * side);
        for out in 0..side {
            for k in 0..side {
                let omega = self.kernel.value(k, k + out, n).conj() * phi[k + out] * inv;
                m[(out, k)] = omega.re;
                m[(out, side + k)] = omega.im;
                m[(side + out, k)] = omega.im;
                m[(side + out, side + k)] = -omega.re;
            }
        }
        Ok(m)
    }

    /// Eigenvalues of the dense real representation, sorted descending.
    pub fn dense_eigenvalues(&self) -> Result<Vec<f64>> {
        let m = self.to_dense_real()?;
        let eig = SymmetricEigen::new(m);
        let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        values.sort_by(|a, b| b.total_cmp(a));
        Ok(values)
    }
}

/// Packs a `[0,1]` signal into stacked real coordinates.
pub fn to_real_coordinates(u: &GridSignal) -> Vec<f64> {
    let s = u.samples();
    s.iter().map(|z| z.re).chain(s.iter().map(|z| z.im)).collect()
}

pub fn from_real_coordinates(x: &[f64], resolution: usize) -> Result<GridSignal> {
    let side = resolution + 1;
    if x.len() != 2 * side {
        return Err(Error::InvalidSignal(format!(
            "expected {} real coordinates, got {}",
            2 * side,
            x.len()
        )));
    }
    let samples = (0..side).map(|j| Complex64::new(x[j], x[side + j])).collect();
    GridSignal::new(samples, resolution, Domain::Unit)
}

/// Settings for the power iterations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerOptions {
    pub seed: u64,
    pub max_iter: usize,
    /// Relative residual `‖Φ²v − ρv‖ / ρ` at which the iteration stops.
    pub tol: f64,
}

impl Default for PowerOptions {
    fn default() -> Self {
        Self {
            seed: 0x5eed,
            max_iter: 10_000,
            tol: 1e-12,
        }
    }
}

/// Outcome of a power iteration on `Φ∘Φ`.
#[derive(Clone, Debug)]
pub struct PowerIteration {
    /// Square root of the Rayleigh quotient of `Φ∘Φ`.
    pub lambda: f64,
    /// Unit-norm iterate.
    pub vector: GridSignal,
    pub iterations: usize,
    /// Final relative residual `‖Φ²v − λ²v‖ / λ²`.
    pub residual: f64,
    pub converged: bool,
}

fn deflate(v: &mut GridSignal, basis: &[GridSignal]) {
    for b in basis {
        let c = v.dot(b);
        v.axpy(-c, b);
    }
}

fn power_core(
    op: &PhiOperator,
    basis: &[GridSignal],
    opts: PowerOptions,
    zero_floor: f64,
) -> Result<PowerIteration> {
    let n = op.resolution();
    let mut v = gaussian_direction(n, Domain::Unit, opts.seed);
    deflate(&mut v, basis);
    let norm = v.norm();
    if norm == 0.0 {
        return Err(Error::InvalidArgument("deflated start vector vanished".into()));
    }
    v = v.scale_real(1.0 / norm);

    let mut rho = 0.0;
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let mut w = op.apply_squared(&v)?;
        deflate(&mut w, basis);
        let w_norm = w.norm();
        if w_norm <= zero_floor {
            return Ok(PowerIteration {
                lambda: 0.0,
                vector: v,
                iterations: it,
                residual: 0.0,
                converged: true,
            });
        }
        rho = w.dot(&v);
        let mut r = w.clone();
        r.axpy(-rho, &v);
        residual = r.norm() / rho.abs().max(f64::MIN_POSITIVE);
        v = w.scale_real(1.0 / w_norm);
        if residual <= opts.tol {
            return Ok(PowerIteration {
                lambda: rho.max(0.0).sqrt(),
                vector: v,
                iterations: it,
                residual,
                converged: true,
            });
        }
    }
    Ok(PowerIteration {
        lambda: rho.max(0.0).sqrt(),
        vector: v,
        iterations: opts.max_iter,
        residual,
        converged: false,
    })
}

/// Power iteration on `Φ∘Φ`. Returns `λ1 = ‖Φ‖` and a unit vector in `E1 ⊕ iE1`.
pub fn power_iterate(op: &PhiOperator, opts: PowerOptions) -> Result<PowerIteration> {
    if op.source().norm() == 0.0 {
        return Err(Error::ZeroSource);
    }
    power_core(op, &[], opts, 0.0)
}

/// `½(v + Φv)`: the `E1` component of `v ∈ E1 ⊕ iE1` for an operator rescaled to `‖Φ‖ = 1`.
pub fn project_e1(v: &GridSignal, op: &PhiOperator) -> Result<GridSignal> {
    Ok((v + &op.apply(v)?).scale_real(0.5))
}

/// `½(v − Φv)`: the `iE1` component.
pub fn project_ie1(v: &GridSignal, op: &PhiOperator) -> Result<GridSignal> {
    Ok((v - &op.apply(v)?).scale_real(0.5))
}

/// Second-largest positive eigenvalue of `Φ`.
#[derive(Clone, Debug)]
pub struct SecondEigenvalue {
    pub lambda: f64,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Deflated power iteration on `Φ∘Φ` over the real orthogonal complement of
/// `span{v1, i·v1}`.
pub fn second_eigenvalue(op: &PhiOperator, v1: &GridSignal, opts: PowerOptions) -> Result<SecondEigenvalue> {
    let norm = v1.norm();
    if norm == 0.0 {
        return Err(Error::InvalidArgument("dominant eigenvector must be nonzero".into()));
    }
    let e = v1.scale_real(1.0 / norm);
    let ie = e.scale(Complex64::new(0.0, 1.0));
    let top = op.apply(&e)?.norm_sqr();
    // Below this level the deflated image is rounding noise of the dominant part.
    let floor = 1e-13 * top;
    let run = power_core(op, &[e, ie], opts, floor)?;
    Ok(SecondEigenvalue {
        lambda: run.lambda,
        iterations: run.iterations,
        residual: run.residual,
        converged: run.converged,
    })
}

/// Settings for [`construct_source`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SourceOptions {
    pub power: PowerOptions,
    /// Settings for the deflated iteration that estimates `λ2`.
    pub second: PowerOptions,
    /// Allowed `‖Φ[u†] − u†‖ / ‖u†‖`.
    pub eigen_tol: f64,
    /// Allowed deviation of `‖Φ‖` from one after rescaling.
    pub norm_tol: f64,
}

impl Default for SourceOptions {
    fn default() -> Self {
        Self {
            power: PowerOptions::default(),
            second: PowerOptions {
                seed: 0x2ec0d,
                max_iter: 20_000,
                tol: 1e-10,
            },
            eigen_tol: 1e-8,
            norm_tol: 1e-6,
        }
    }
}

/// A rescaled source element together with the solution it certifies.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceCertificate {
    pub phi_rescaled: GridSignal,
    /// Largest eigenvalue of the operator built from the raw source element.
    pub lambda1_original: f64,
    pub lambda2: f64,
    /// Unit-norm eigenfunction at eigenvalue one.
    pub u_true: GridSignal,
    pub g_true: GridSignal,
    pub kernel: Kernel,
}

impl SourceCertificate {
    pub fn resolution(&self) -> usize {
        self.u_true.resolution()
    }

    pub fn phi_operator(&self) -> PhiOperator {
        PhiOperator {
            source: self.phi_rescaled.clone(),
            kernel: self.kernel.clone(),
        }
    }

    /// `‖Φ[u†] − u†‖ / ‖u†‖`.
    pub fn eigen_residual(&self) -> Result<f64> {
        let image = self.phi_operator().apply(&self.u_true)?;
        Ok((&image - &self.u_true).norm() / self.u_true.norm())
    }

    /// The same certificate for `c·u†`, `c > 0`. `Φ` is real-linear, so the
    /// eigen- and norm conditions are unchanged; `g†` scales by `c²`.
    pub fn with_solution_scale(&self, c: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::InvalidArgument(format!("solution scale must be positive, got {c}")));
        }
        Ok(Self {
            u_true: self.u_true.scale_real(c),
            g_true: self.g_true.scale_real(c * c),
            ..self.clone()
        })
    }

    /// Orthogonal projection onto the ray `E1 = span_R{u†}`.
    pub fn project_ray(&self, v: &GridSignal) -> Result<GridSignal> {
        let c = self.u_true.inner_real(v)? / self.u_true.norm_sqr();
        Ok(self.u_true.scale_real(c))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("# source certificate\n");
        let _ = writeln!(out, "lambda1={:e}", self.lambda1_original);
        let _ = writeln!(out, "lambda2={:e}", self.lambda2);
        let _ = writeln!(out, "N={}", self.resolution());
        let _ = writeln!(out, "kernel={}", self.kernel.kind());
        for (name, signal) in [
            ("phi_rescaled", &self.phi_rescaled),
            ("u_true", &self.u_true),
            ("g_true", &self.g_true),
        ] {
            let _ = writeln!(out, "[{name}]");
            out.push_str(&signal.to_csv());
        }
        if let Kernel::Sampled(_) = self.kernel {
            out.push_str("[kernel]\n");
            out.push_str(&self.kernel.to_csv());
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut header: Vec<(String, String)> = Vec::new();
        let mut sections: Vec<(String, String)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                sections.push((name.to_string(), String::new()));
                continue;
            }
            match sections.last_mut() {
                Some((_, body)) => {
                    body.push_str(raw);
                    body.push('\n');
                }
                None => {
                    if line.is_empty() || line.starts_with('#') {
                        continue;
                    }
                    let (k, v) = line
                        .split_once('=')
                        .ok_or_else(|| Error::parse(lineno + 1, "expected key=value"))?;
                    header.push((k.trim().to_string(), v.trim().to_string()));
                }
            }
        }
        let key = |name: &str| -> Result<&str> {
            header
                .iter()
                .find(|(k, _)| k == name)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::parse(0, format!("missing header key `{name}`")))
        };
        let section = |name: &str| -> Result<&str> {
            sections
                .iter()
                .find(|(k, _)| k == name)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::parse(0, format!("missing section [{name}]")))
        };
        let float = |name: &str| -> Result<f64> {
            key(name)?
                .parse::<f64>()
                .map_err(|e| Error::parse(0, format!("bad `{name}`: {e}")))
        };
        let lambda1_original = float("lambda1")?;
        let lambda2 = float("lambda2")?;
        let n: usize = key("N")?
            .parse()
            .map_err(|e| Error::parse(0, format!("bad `N`: {e}")))?;
        let kernel = match key("kernel")? {
            "trivial" => Kernel::Trivial,
            "sampled" => Kernel::from_csv(section("kernel")?)?,
            other => return Err(Error::parse(0, format!("unknown kernel kind `{other}`"))),
        };
        let phi_rescaled = GridSignal::from_csv(section("phi_rescaled")?)?;
        let u_true = GridSignal::from_csv(section("u_true")?)?;
        let g_true = GridSignal::from_csv(section("g_true")?)?;
        if u_true.resolution() != n || phi_rescaled.resolution() != n || g_true.resolution() != n {
            return Err(Error::parse(0, "section resolutions disagree with `N`"));
        }
        if u_true.domain() != Domain::Unit
            || phi_rescaled.domain() != Domain::Double
            || g_true.domain() != Domain::Double
        {
            return Err(Error::parse(0, "section domains are inconsistent"));
        }
        kernel.check_resolution(n)?;
        Ok(Self {
            phi_rescaled,
            lambda1_original,
            lambda2,
            u_true,
            g_true,
            kernel,
        })
    }
}

/// Rescales `φ_raw` by its leading eigenvalue and extracts the unit-norm
/// eigenfunction at eigenvalue one.
pub fn construct_source(phi_raw: &GridSignal, kernel: &Kernel, opts: SourceOptions) -> Result<SourceCertificate> {
    let op = PhiOperator::new(phi_raw.clone(), kernel.clone())?;
    let top = power_iterate(&op, opts.power)?;
    if !top.converged {
        return Err(Error::NonConvergence {
            iterations: top.iterations,
            residual: top.residual,
        });
    }
    let lambda1 = top.lambda;
    let rescaled = op.scaled(1.0 / lambda1);

    let p = project_e1(&top.vector, &rescaled)?;
    let q = project_ie1(&top.vector, &rescaled)?;
    // Whichever component is larger carries less relative error; -i maps iE1 onto E1.
    let mut u = if p.norm() >= q.norm() {
        p
    } else {
        q.scale(Complex64::new(0.0, -1.0))
    };
    let norm = u.norm();
    if norm == 0.0 {
        return Err(Error::DegenerateCertificate("projection onto E1 vanished".into()));
    }
    u = u.scale_real(1.0 / norm);
    if let Some(peak) = u
        .samples()
        .iter()
        .copied()
        .max_by(|a, b| a.norm_sqr().total_cmp(&b.norm_sqr()))
    {
        if peak.re < 0.0 {
            u = -&u;
        }
    }

    let image = rescaled.apply(&u)?;
    let eigen_residual = (&image - &u).norm();
    if eigen_residual > opts.eigen_tol {
        return Err(Error::DegenerateCertificate(format!(
            "eigen-condition residual {eigen_residual:e} exceeds {:e}",
            opts.eigen_tol
        )));
    }

    let check = power_iterate(
        &rescaled,
        PowerOptions {
            seed: opts.power.seed.wrapping_add(0x9e37_79b9),
            ..opts.power
        },
    )?;
    if (check.lambda - 1.0).abs() > opts.norm_tol {
        return Err(Error::DegenerateCertificate(format!(
            "rescaled operator norm {} differs from one",
            check.lambda
        )));
    }

    let second = second_eigenvalue(&rescaled, &u, opts.second)?;
    if second.lambda >= 1.0 - DEGENERACY_GAP {
        return Err(Error::DegenerateCertificate(format!(
            "second eigenvalue {} leaves no gap below one (eigenvalue one is not simple)",
            second.lambda
        )));
    }

    let g_true = autoconvolve(&u, kernel)?;
    Ok(SourceCertificate {
        phi_rescaled: rescaled.source,
        lambda1_original: lambda1,
        lambda2: second.lambda,
        u_true: u,
        g_true,
        kernel: kernel.clone(),
    })
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.sin() / x
    }
}

fn indicator(t: f64, lo: f64, hi: f64) -> f64 {
    if (lo..=hi).contains(&t) {
        1.0
    } else {
        0.0
    }
}

fn gauss(t: f64, center: f64, width: f64) -> f64 {
    let z = (t - center) / width;
    (-z * z).exp()
}

/// Modulus of the built-in source element `which ∈ {1, 2, 3}` at `t`.
pub fn builtin_magnitude(which: u8, t: f64) -> Result<f64> {
    Ok(match which {
        1 => {
            2.7 * gauss(t, 0.27, 0.025)
                + 4.0 * gauss(t, 1.56, 0.024)
                + 4.0 * gauss(t, 0.346, 0.022)
                + 2.0 * gauss(t, 1.146, 0.024)
        }
        2 => 2.95 * indicator(t, 0.415, 0.459) + 6.0 * indicator(t, 0.92, 0.95),
        3 => {
            0.645 * sinc(9.855 * (t - 1.2))
                + 0.434 * sinc(15.243 * (t - 0.42))
                + 6.234 * sinc(0.143 * (t - 0.85))
        }
        other => return Err(Error::InvalidArgument(format!("no built-in source element {other}"))),
    })
}

/// Phase of the built-in source element `which ∈ {1, 2, 3}` at `t`.
pub fn builtin_phase(which: u8, t: f64) -> Result<f64> {
    Ok(match which {
        1 => 5.0 * (7.867 * t).cos() - 2.3 * (25.786 * t).sin(),
        2 => 2.0 * (0.867 * t).cos() - 1.3 * (25.786 * t).sin(),
        3 => 1.2 * (2.867 * t).cos() - 2.3 * (4.786 * (t - 0.78)).sin() + (0.643 * t).exp(),
        other => return Err(Error::InvalidArgument(format!("no built-in source element {other}"))),
    })
}

/// Samples `|φ^(j)| e^{i arg φ^(j)}` on the `[0, 2]` grid.
pub fn builtin_source(which: u8, resolution: usize) -> Result<GridSignal> {
    builtin_magnitude(which, 0.0)?;
    GridSignal::from_fn(resolution, Domain::Double, |t| {
        let m = builtin_magnitude(which, t).unwrap_or(0.0);
        let a = builtin_phase(which, t).unwrap_or(0.0);
        Complex64::from_polar(m, a)
    })
}

/// Smallest resolution that puts at least two samples across the narrowest
/// feature of the built-in source element.
pub fn builtin_min_resolution(which: u8) -> Result<usize> {
    let width: f64 = match which {
        1 => 0.022,
        2 => 0.03,
        3 => std::f64::consts::PI / 15.243,
        other => return Err(Error::InvalidArgument(format!("no built-in source element {other}"))),
    };
    Ok((2.0 / width).ceil() as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::SampledKernel;
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

    #[test]
    fn constant_source_action() {
        let n = 10;
        let op = PhiOperator::new(GridSignal::constant(c(3.0, 0.0), n, Domain::Double), Kernel::Trivial).unwrap();
        let out = op.apply(&GridSignal::constant(c(1.0, 0.0), n, Domain::Unit)).unwrap();
        let expected = 3.0 * (n as f64 + 1.0) / n as f64;
        assert!(out.samples().iter().all(|z| (z - c(expected, 0.0)).norm() < 1e-13));
    }

    #[test]
    fn two_point_grid_example() {
        let phi = GridSignal::new((1..=5).map(|v| c(v as f64, 0.0)).collect(), 2, Domain::Double).unwrap();
        let op = PhiOperator::new(phi, Kernel::Trivial).unwrap();
        let out = op.apply(&GridSignal::constant(c(1.0, 0.0), 2, Domain::Unit)).unwrap();
        for (z, e) in out.samples().iter().zip([3.0, 4.5, 6.0]) {
            assert!((z - c(e, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn operator_is_conjugate_homogeneous_and_self_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 24;
        let kernel = Kernel::Sampled(
            SampledKernel::from_fn(n, |s, t| c(1.0 + s * t, 0.3 * (s - t).sin())).unwrap(),
        );
        for kernel in [Kernel::Trivial, kernel] {
            let op = PhiOperator::new(random_signal(n, Domain::Double, &mut rng), kernel).unwrap();
            let u = random_signal(n, Domain::Unit, &mut rng);
            let v = random_signal(n, Domain::Unit, &mut rng);
            let i = c(0.0, 1.0);
            let lhs = op.apply(&u.scale(i)).unwrap();
            let rhs = op.apply(&u).unwrap().scale(-i);
            assert!(lhs.max_abs_diff(&rhs) <= 1e-12);
            let a = op.apply(&u).unwrap().inner_real(&v).unwrap();
            let b = op.apply(&v).unwrap().inner_real(&u).unwrap();
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn dense_matrix_matches_operator() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 16;
        let op = PhiOperator::new(random_signal(n, Domain::Double, &mut rng), Kernel::Trivial).unwrap();
        let m = op.to_dense_real().unwrap();
        assert!((&m - m.transpose()).amax() <= 1e-10);
        for _ in 0..20 {
            let u = random_signal(n, Domain::Unit, &mut rng);
            let x = nalgebra::DVector::from_vec(to_real_coordinates(&u));
            let y = from_real_coordinates((&m * x).as_slice(), n).unwrap();
            assert!(y.max_abs_diff(&op.apply(&u).unwrap()) <= 1e-12);
        }
        let zero = PhiOperator::new(GridSignal::zeros(n, Domain::Double), Kernel::Trivial).unwrap();
        assert_eq!(zero.to_dense_real().unwrap().amax(), 0.0);
    }

    #[test]
    fn dense_matrix_is_refused_above_cap() {
        let op = PhiOperator::new(GridSignal::zeros(DENSE_CAP + 1, Domain::Double), Kernel::Trivial).unwrap();
        assert!(matches!(op.to_dense_real(), Err(Error::DenseTooLarge { .. })));
    }

    #[test]
    fn dense_spectrum_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let op = PhiOperator::new(random_signal(20, Domain::Double, &mut rng), Kernel::Trivial).unwrap();
        let ev = op.dense_eigenvalues().unwrap();
        let top = ev[0].abs();
        for (a, b) in ev.iter().zip(ev.iter().rev()) {
            assert!((a + b).abs() <= 1e-9 * top);
        }
    }

    #[test]
    fn power_iteration_on_rank_one_operator() {
        let n = 32;
        let op = PhiOperator::new(GridSignal::constant(c(2.0, 0.0), n, Domain::Double), Kernel::Trivial).unwrap();
        let run = power_iterate(&op, PowerOptions::default()).unwrap();
        assert!(run.converged);
        let expected = 2.0 * (n as f64 + 1.0) / n as f64;
        assert!((run.lambda - expected).abs() <= 1e-10);
        // The dominant space of Φ² is spanned by the constants and i·constants.
        let mean: Complex64 = run.vector.samples().iter().sum::<Complex64>() / (n as f64 + 1.0);
        assert!(run.vector.samples().iter().all(|z| (z - mean).norm() < 1e-10));

        let rescaled = op.scaled(1.0 / run.lambda);
        let second = second_eigenvalue(&rescaled, &run.vector, PowerOptions::default()).unwrap();
        assert!(second.lambda.abs() <= 1e-10);
    }

    #[test]
    fn power_iteration_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in [16, 32, 64] {
            let op = PhiOperator::new(random_signal(n, Domain::Double, &mut rng), Kernel::Trivial).unwrap();
            let ev = op.dense_eigenvalues().unwrap();
            let run = power_iterate(&op, PowerOptions { max_iter: 200_000, ..PowerOptions::default() }).unwrap();
            assert!(run.converged, "N = {n}: residual {}", run.residual);
            assert!((run.lambda - ev[0]).abs() <= 1e-8 * ev[0]);
        }
    }

    #[test]
    fn zero_source_is_rejected() {
        let op = PhiOperator::new(GridSignal::zeros(8, Domain::Double), Kernel::Trivial).unwrap();
        assert!(matches!(power_iterate(&op, PowerOptions::default()), Err(Error::ZeroSource)));
        let phi = GridSignal::zeros(8, Domain::Double);
        assert!(construct_source(&phi, &Kernel::Trivial, SourceOptions::default()).is_err());
    }

    #[test]
    fn non_convergence_is_flagged() {
        let op = PhiOperator::new(builtin_source(3, 64).unwrap(), Kernel::Trivial).unwrap();
        let run = power_iterate(&op, PowerOptions { max_iter: 2, ..PowerOptions::default() }).unwrap();
        assert!(!run.converged);
        assert_eq!(run.iterations, 2);
    }

    #[test]
    fn projections_split_the_dominant_space() {
        let n = 64;
        let cert = construct_source(&builtin_source(3, n).unwrap(), &Kernel::Trivial, SourceOptions::default()).unwrap();
        let op = cert.phi_operator();
        let u = &cert.u_true;
        let iu = u.scale(c(0.0, 1.0));
        assert!(project_e1(u, &op).unwrap().max_abs_diff(u) <= 1e-10);
        assert!(project_e1(&iu, &op).unwrap().norm() <= 1e-10);
        let v = &u.scale_real(0.8) + &iu.scale_real(-1.3);
        let p = project_e1(&v, &op).unwrap();
        let q = project_ie1(&v, &op).unwrap();
        assert!(p.max_abs_diff(&u.scale_real(0.8)) <= 1e-10);
        assert!((&p + &q).max_abs_diff(&v) <= 1e-10);
    }

    #[test]
    fn rank_one_certificate_is_closed_form() {
        let n = 64;
        let phi = GridSignal::constant(c(2.0, 0.0), n, Domain::Double);
        let cert = construct_source(&phi, &Kernel::Trivial, SourceOptions::default()).unwrap();
        let nf = n as f64;
        assert!((cert.lambda1_original - 2.0 * (nf + 1.0) / nf).abs() <= 1e-10);
        assert!(cert.lambda2.abs() <= 1e-10);
        let level = (nf / (nf + 1.0)).sqrt();
        assert!(cert.u_true.samples().iter().all(|z| (z - c(level, 0.0)).norm() <= 1e-10));
        assert!(cert
            .phi_rescaled
            .samples()
            .iter()
            .all(|z| (z - c(nf / (nf + 1.0), 0.0)).norm() <= 1e-12));
        let g = autoconvolve(&cert.u_true, &Kernel::Trivial).unwrap();
        assert!(g.max_abs_diff(&cert.g_true) <= 1e-12);
    }

    #[test]
    fn certificate_is_idempotent_under_reconstruction() {
        let n = 64;
        let cert = construct_source(&builtin_source(3, n).unwrap(), &Kernel::Trivial, SourceOptions::default()).unwrap();
        let again = construct_source(&cert.phi_rescaled, &Kernel::Trivial, SourceOptions::default()).unwrap();
        assert!((again.lambda1_original - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn second_eigenvalue_matches_dense_oracle() {
        let n = 64;
        let cert = construct_source(&builtin_source(3, n).unwrap(), &Kernel::Trivial, SourceOptions::default()).unwrap();
        let ev = cert.phi_operator().dense_eigenvalues().unwrap();
        assert!((ev[0] - 1.0).abs() <= 1e-9);
        // ev[1] is the next eigenvalue strictly below one (E1 is simple).
        assert!((cert.lambda2 - ev[1]).abs() <= 1e-6 * ev[1], "{} vs {}", cert.lambda2, ev[1]);
        assert!(cert.lambda2 <= 1.0);
    }

    #[test]
    fn certificate_text_round_trip() {
        let n = 32;
        let cert = construct_source(&builtin_source(3, n).unwrap(), &Kernel::Trivial, SourceOptions::default()).unwrap();
        let back = SourceCertificate::from_text(&cert.to_text()).unwrap();
        assert_eq!(back, cert);

        let kernel = Kernel::Sampled(SampledKernel::from_fn(n, |s, t| c(1.0 + 0.2 * s * t, 0.0)).unwrap());
        let cert = construct_source(&builtin_source(3, n).unwrap(), &kernel, SourceOptions::default()).unwrap();
        assert_eq!(SourceCertificate::from_text(&cert.to_text()).unwrap(), cert);
    }

    #[test]
    fn builtin_formula_spot_values() {
        assert!((builtin_magnitude(2, 0.43).unwrap() - 2.95).abs() < 1e-15);
        assert_eq!(builtin_magnitude(2, 0.5).unwrap(), 0.0);
        assert!((builtin_magnitude(2, 0.93).unwrap() - 6.0).abs() < 1e-15);
        // The 0.346-centred bump still contributes about 2.6e-5 at t = 0.27.
        let m = builtin_magnitude(1, 0.27).unwrap();
        let tails = 4.0 * gauss(0.27, 1.56, 0.024) + 4.0 * gauss(0.27, 0.346, 0.022) + 2.0 * gauss(0.27, 1.146, 0.024);
        assert!((m - 2.7 - tails).abs() < 1e-15);
        assert!((m - 2.7).abs() < 1e-4);
        assert!((builtin_magnitude(3, 0.85).unwrap()
            - (0.645 * sinc(9.855 * -0.35) + 0.434 * sinc(15.243 * 0.43) + 6.234))
            .abs()
            < 1e-14);
        assert!(builtin_magnitude(4, 0.0).is_err());
        assert!(builtin_source(0, 16).is_err());
        let phi = builtin_source(1, 100).unwrap();
        assert_eq!(phi.len(), 201);
        let z = phi.samples()[27];
        assert!((z.norm() - builtin_magnitude(1, 0.27).unwrap()).abs() < 1e-12);
        assert!((z.arg() - builtin_phase(1, 0.27).unwrap().sin().atan2(builtin_phase(1, 0.27).unwrap().cos())).abs() < 1e-12);
    }

    #[test]
    fn sinc_is_continuous_at_zero() {
        assert_eq!(sinc(0.0), 1.0);
        assert!((sinc(1e-9) - 1.0).abs() < 1e-15);
    }
}
