//! Error measures for reconstructions against a source certificate: the
//! dilinear Bregman distance, its theoretical bounds, ray distances and
//! log-log rate fits.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::signal::GridSignal;
use crate::spectral::SourceCertificate;

/// Measured quantities of one regularized reconstruction.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRecord {
    pub delta: f64,
    pub alpha: f64,
    pub noise_seed: u64,
    pub start_seed: u64,
    pub discrepancy: f64,
    pub bregman: f64,
    pub ray_dist_sq: f64,
    pub within_ray_sq: f64,
    pub discrepancy_bound: f64,
    pub bregman_bound: f64,
    pub bregman_lower: f64,
    pub converged: bool,
}

impl ExperimentRecord {
    pub const CSV_HEADER: &'static str = "delta,alpha,noise_seed,start_seed,discrepancy,bregman,ray_dist_sq,within_ray_sq,discrepancy_bound,bregman_bound,bregman_lower,converged";

    pub fn csv_row(&self) -> String {
        let mut row = String::new();
        let _ = write!(
            row,
            "{:e},{:e},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}",
            self.delta,
            self.alpha,
            self.noise_seed,
            self.start_seed,
            self.discrepancy,
            self.bregman,
            self.ray_dist_sq,
            self.within_ray_sq,
            self.discrepancy_bound,
            self.bregman_bound,
            self.bregman_lower,
            self.converged
        );
        row
    }

    /// Whether the measured discrepancy and Bregman distance respect their bounds,
    /// with relative slack `rel_tol`.
    pub fn within_bounds(&self, rel_tol: f64) -> bool {
        self.discrepancy <= self.discrepancy_bound * (1.0 + rel_tol)
            && self.bregman <= self.bregman_bound * (1.0 + rel_tol)
    }
}

/// Bregman distance `‖v‖² − ⟨Φ[v], v⟩` of the certificate's subgradient at `u†`.
pub fn bregman_distance(v: &GridSignal, cert: &SourceCertificate) -> Result<f64> {
    cert.u_true.check_grid(v)?;
    let image = cert.phi_operator().apply(v)?;
    Ok(v.norm_sqr() - image.dot(v))
}

/// `(1 − λ2)·‖P_{E1⊥}(v − u†)‖²`.
pub fn bregman_lower_bound(v: &GridSignal, cert: &SourceCertificate) -> Result<f64> {
    cert.u_true.check_grid(v)?;
    Ok((1.0 - cert.lambda2) * ray_distance_sq(&(v - &cert.u_true), cert)?)
}

/// Upper bounds `(bregman, discrepancy) = ((δ/√α + √α‖φ‖/2)², δ + α‖φ‖)`.
pub fn rate_bounds(delta: f64, alpha: f64, cert: &SourceCertificate) -> Result<(f64, f64)> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::InvalidArgument(format!("delta must be nonnegative, got {delta}")));
    }
    Ok(bounds_for_norm(delta, alpha, cert.phi_rescaled.norm()))
}

fn bounds_for_norm(delta: f64, alpha: f64, phi_norm: f64) -> (f64, f64) {
    let root = alpha.sqrt();
    let bregman = (delta / root + root * phi_norm / 2.0).powi(2);
    (bregman, delta + alpha * phi_norm)
}

/// `‖v − P_{E1}(v)‖²`: distance to the solution ray.
pub fn ray_distance_sq(v: &GridSignal, cert: &SourceCertificate) -> Result<f64> {
    let along = cert.project_ray(v)?;
    Ok((v - &along).norm_sqr())
}

/// `‖P_{E1}(v − u†)‖²`: error component along the ray.
pub fn within_ray_error_sq(v: &GridSignal, cert: &SourceCertificate) -> Result<f64> {
    cert.u_true.check_grid(v)?;
    Ok(cert.project_ray(&(v - &cert.u_true))?.norm_sqr())
}

/// Least-squares line through `(log δ, log value)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the fit in log space.
    pub residual: f64,
}

pub fn fit_rate(pairs: &[(f64, f64)]) -> Result<RateFit> {
    if pairs.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "rate fit needs at least 3 pairs, got {}",
            pairs.len()
        )));
    }
    if let Some(&(d, v)) = pairs.iter().find(|(d, v)| !(*d > 0.0 && *v > 0.0 && d.is_finite() && v.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "rate fit needs positive finite entries, got ({d}, {v})"
        )));
    }
    let m = pairs.len() as f64;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("rate fit needs at least two distinct deltas".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Ok(RateFit {
        slope,
        intercept,
        residual: (sse / m).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{autoconvolve, Kernel};
    use crate::signal::{Domain, NoiseSpec};
    use crate::spectral::{builtin_source, construct_source, SourceOptions};
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::OnceLock;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn cert3_64() -> &'static SourceCertificate {
        static CERT: OnceLock<SourceCertificate> = OnceLock::new();
        CERT.get_or_init(|| {
            construct_source(&builtin_source(3, 64).unwrap(), &Kernel::Trivial, SourceOptions::default()).unwrap()
        })
    }

    fn constant_cert(n: usize) -> SourceCertificate {
        let phi = GridSignal::constant(c(2.0, 0.0), n, Domain::Double);
        construct_source(&phi, &Kernel::Trivial, SourceOptions::default()).unwrap()
    }

    fn random_signal(n: usize, rng: &mut ChaCha8Rng) -> GridSignal {
        let samples = (0..=n)
            .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        GridSignal::new(samples, n, Domain::Unit).unwrap()
    }

    #[test]
    fn bregman_trivial_values() {
        let cert = cert3_64();
        let u = &cert.u_true;
        let scale = u.norm_sqr();
        assert!(bregman_distance(u, cert).unwrap().abs() <= 1e-10 * scale);
        assert!(bregman_distance(&-u, cert).unwrap().abs() <= 1e-10 * scale);
        let iu = u.scale(c(0.0, 1.0));
        assert!((bregman_distance(&iu, cert).unwrap() - 2.0 * scale).abs() <= 1e-9 * scale);
    }

    #[test]
    fn bregman_matches_four_term_definition() {
        // Δ(v) = ‖v‖² − ‖u†‖² − ⟨φ, A[v] − A[u†]⟩, where ⟨φ, A[v]⟩ = ⟨Φ[v], v⟩.
        let n = 32;
        let cert = construct_source(&builtin_source(3, n).unwrap(), &Kernel::Trivial, SourceOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let v = random_signal(n, &mut rng);
            let av = autoconvolve(&v, &Kernel::Trivial).unwrap();
            let au = autoconvolve(&cert.u_true, &Kernel::Trivial).unwrap();
            let four_term = v.norm_sqr() - cert.u_true.norm_sqr() - cert.phi_rescaled.inner_real(&(&av - &au)).unwrap();
            let operator_form = bregman_distance(&v, &cert).unwrap();
            assert!((four_term - operator_form).abs() <= 1e-10 * (1.0 + v.norm_sqr()), "{four_term} vs {operator_form}");
        }
    }

    #[test]
    fn lower_bound_trivial_values() {
        let cert = cert3_64();
        let u = &cert.u_true;
        assert_eq!(bregman_lower_bound(u, cert).unwrap(), 0.0);
        assert!(bregman_lower_bound(&u.scale_real(1.7), cert).unwrap() <= 1e-24);
        assert!(bregman_lower_bound(&u.scale_real(-0.3), cert).unwrap() <= 1e-24);
    }

    #[test]
    fn lower_bound_holds_on_random_signals() {
        let cert = cert3_64();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let v = &cert.u_true + &random_signal(64, &mut rng).scale_real(rng.random_range(0.0..3.0));
            let d = bregman_distance(&v, cert).unwrap();
            let lower = bregman_lower_bound(&v, cert).unwrap();
            assert!(d >= lower - 1e-9 * (1.0 + v.norm_sqr()), "{d} < {lower}");
        }
    }

    #[test]
    fn rank_one_certificate_gives_equality() {
        let n = 32;
        let cert = constant_cert(n);
        assert_eq!(cert.lambda2, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let iu = cert.u_true.scale(c(0.0, 1.0));
        for _ in 0..50 {
            let mut v = random_signal(n, &mut rng);
            // drop the iE1 component
            let along = iu.dot(&v) / iu.norm_sqr();
            v.axpy(-along, &iu);
            let d = bregman_distance(&v, &cert).unwrap();
            let lower = bregman_lower_bound(&v, &cert).unwrap();
            assert!((d - lower).abs() <= 1e-9 * (1.0 + v.norm_sqr()), "{d} vs {lower}");
        }
    }

    #[test]
    fn corollary_bound_values() {
        let cert = cert3_64();
        let norm = cert.phi_rescaled.norm();
        let (b, d) = rate_bounds(0.0, 0.3, cert).unwrap();
        assert!((b - 0.3 * norm * norm / 4.0).abs() <= 1e-15);
        assert!((d - 0.3 * norm).abs() <= 1e-15);

        let delta = 0.01;
        let (b, d) = bounds_for_norm(delta, delta, 2.0);
        assert!((b - 4.0 * delta).abs() <= 1e-15);
        assert!((d - 3.0 * delta).abs() <= 1e-15);

        assert!(rate_bounds(0.1, 0.0, cert).is_err());
        assert!(rate_bounds(0.1, -1.0, cert).is_err());
    }

    #[test]
    fn ray_distance_values() {
        let cert = cert3_64();
        let u = &cert.u_true;
        let iu = u.scale(c(0.0, 1.0));
        let scale = u.norm_sqr();
        assert!(ray_distance_sq(&u.scale_real(-2.5), cert).unwrap() <= 1e-24 * scale);
        assert!((ray_distance_sq(&iu, cert).unwrap() - scale).abs() <= 1e-12 * scale);
        assert!((ray_distance_sq(&(u + &iu), cert).unwrap() - scale).abs() <= 1e-12 * scale);

        assert_eq!(within_ray_error_sq(u, cert).unwrap(), 0.0);
        assert!((within_ray_error_sq(&-u, cert).unwrap() - 4.0 * scale).abs() <= 1e-12 * scale);
        assert!(within_ray_error_sq(&(u + &iu), cert).unwrap() <= 1e-24 * scale);
    }

    #[test]
    fn bounds_hold_for_a_regularized_reconstruction() {
        use crate::solver::{gauss_newton_solve, random_start, TikhonovConfig};
        let cert = constant_cert(64).with_solution_scale(20.0).unwrap();
        let delta = 0.05 * cert.u_true.norm();
        let alpha = 100.0 * delta;
        let g = crate::signal::add_noise(&cert.g_true, NoiseSpec::new(delta, 4).unwrap()).unwrap();
        let start = random_start(&cert.u_true, 0.3, 5).unwrap();
        let report = gauss_newton_solve(&g, &Kernel::Trivial, &TikhonovConfig::new(alpha, start)).unwrap();
        assert!(report.converged);
        let (bregman_bound, discrepancy_bound) = rate_bounds(delta, alpha, &cert).unwrap();
        assert!(report.residual_norm <= discrepancy_bound);
        assert!(bregman_distance(&report.minimizer, &cert).unwrap() <= bregman_bound);
    }

    #[test]
    fn fit_rate_exact_lines() {
        let deltas = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1];
        let line: Vec<_> = deltas.iter().map(|&d| (d, 3.0 * d)).collect();
        let fit = fit_rate(&line).unwrap();
        assert!((fit.slope - 1.0).abs() <= 1e-12);
        assert!((fit.intercept - 3f64.ln()).abs() <= 1e-12);
        assert!(fit.residual <= 1e-12);
        let square: Vec<_> = deltas.iter().map(|&d| (d, d * d)).collect();
        assert!((fit_rate(&square).unwrap().slope - 2.0).abs() <= 1e-12);
        let flat: Vec<_> = deltas.iter().map(|&d| (d, 0.7)).collect();
        assert!(fit_rate(&flat).unwrap().slope.abs() <= 1e-12);
    }

    #[test]
    fn fit_rate_rejects_bad_input() {
        assert!(fit_rate(&[(1.0, 1.0), (2.0, 2.0)]).is_err());
        assert!(fit_rate(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]).is_err());
        assert!(fit_rate(&[(-1.0, 1.0), (2.0, 1.0), (3.0, 1.0)]).is_err());
        assert!(fit_rate(&[(1.0, 1.0), (1.0, 2.0), (1.0, 3.0)]).is_err());
    }

    #[test]
    fn record_row_matches_header() {
        let r = ExperimentRecord {
            delta: 1e-3,
            alpha: 0.1,
            noise_seed: 1,
            start_seed: 2,
            discrepancy: 0.5,
            bregman: 0.25,
            ray_dist_sq: 0.1,
            within_ray_sq: 0.01,
            discrepancy_bound: 1.0,
            bregman_bound: 1.0,
            bregman_lower: 0.0,
            converged: true,
        };
        assert_eq!(r.csv_row().split(',').count(), ExperimentRecord::CSV_HEADER.split(',').count());
        assert!(r.within_bounds(0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn bregman_is_nonnegative(seed in any::<u64>(), amp in 0.01f64..10.0) {
            let cert = cert3_64();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = random_signal(64, &mut rng).scale_real(amp);
            prop_assert!(bregman_distance(&v, cert).unwrap() >= -1e-10 * v.norm_sqr());
        }

        #[test]
        fn rate_fit_is_scale_invariant(
            values in proptest::collection::vec(0.01f64..100.0, 3..10),
            factor in 1e-3f64..1e3,
        ) {
            let pairs: Vec<_> = values.iter().enumerate().map(|(i, &v)| (1e-3 * 2f64.powi(i as i32), v)).collect();
            let scaled: Vec<_> = pairs.iter().map(|&(d, v)| (d, v * factor)).collect();
            let a = fit_rate(&pairs).unwrap().slope;
            let b = fit_rate(&scaled).unwrap().slope;
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }
}
