//! Noise-level sweeps: for each `(level, restart)` cell, perturb the exact
//! data, solve the Tikhonov problem from a random start and measure the
//! reconstruction against the certificate.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::diagnostics::{
    bregman_distance, bregman_lower_bound, rate_bounds, fit_rate, ray_distance_sq, within_ray_error_sq,
    ExperimentRecord, RateFit,
};
use crate::error::{Error, Result};
use crate::forward::autoconvolve;
use crate::signal::{add_noise, NoiseSpec};
use crate::solver::{gauss_newton_solve, random_start, Preconditioner, TikhonovConfig};
use crate::spectral::SourceCertificate;

/// How `u†` is scaled before the sweep. A certificate stays valid under
/// `u† ↦ c·u†`, but the regularization strength `α = c_α·δ` is not scale-free:
/// with `‖u†‖ = 1` and `δ_rel ≳ 1e−2` the minimizer collapses to 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SolutionScale {
    AsCertified,
    /// Rescale so that `‖u†‖` equals the value.
    Norm(f64),
    /// Rescale so that `‖g†‖ = ratio·‖u†‖`.
    DataRatio(f64),
}

impl SolutionScale {
    pub fn factor(self, cert: &SourceCertificate) -> Result<f64> {
        let u = cert.u_true.norm();
        let g = cert.g_true.norm();
        let c = match self {
            SolutionScale::AsCertified => 1.0,
            SolutionScale::Norm(target) => target / u,
            // ‖g(c u)‖ = c² ‖g‖ and ‖c u‖ = c ‖u‖
            SolutionScale::DataRatio(ratio) => ratio * u / g,
        };
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::InvalidArgument(format!("invalid solution scale {self:?}")));
        }
        Ok(c)
    }

    pub fn apply(self, cert: &SourceCertificate) -> Result<SourceCertificate> {
        match self {
            SolutionScale::AsCertified => Ok(cert.clone()),
            _ => cert.with_solution_scale(self.factor(cert)?),
        }
    }
}

/// Geometric sequence of relative noise levels `δ/‖u†‖`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseLevels {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl NoiseLevels {
    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.min > 0.0) || !self.max.is_finite() || self.count == 0 {
            return Err(Error::InvalidArgument(format!(
                "noise levels need 0 < min and at least one level, got {self:?}"
            )));
        }
        if self.count == 1 {
            return Ok(vec![self.min]);
        }
        if !(self.max > self.min) {
            return Err(Error::InvalidArgument(format!(
                "noise levels must increase, got min {} and max {}",
                self.min, self.max
            )));
        }
        let ratio = (self.max / self.min).ln() / (self.count - 1) as f64;
        Ok((0..self.count)
            .map(|i| if i + 1 == self.count { self.max } else { self.min * (ratio * i as f64).exp() })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentPlan {
    pub levels: NoiseLevels,
    /// `α = alpha_factor · δ`.
    pub alpha_factor: f64,
    pub restarts: usize,
    pub radius: f64,
    pub master_seed: u64,
    /// 0 lets the thread pool decide.
    pub workers: usize,
    pub solution_scale: SolutionScale,
    pub preconditioner: Preconditioner,
    pub outer_max: usize,
    pub cg_max: usize,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            levels: NoiseLevels {
                min: 1e-3,
                max: 1e-1,
                count: 8,
            },
            alpha_factor: 100.0,
            restarts: 25,
            radius: 0.5,
            master_seed: 0,
            workers: 0,
            solution_scale: SolutionScale::DataRatio(100.0),
            preconditioner: Preconditioner::Identity,
            outer_max: 200,
            cg_max: 2000,
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        self.levels.values()?;
        if self.restarts == 0 {
            return Err(Error::InvalidArgument("restarts must be at least 1".into()));
        }
        if !(self.alpha_factor > 0.0) || !self.alpha_factor.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "alpha factor must be positive, got {}",
                self.alpha_factor
            )));
        }
        if !(self.radius >= 0.0) || !self.radius.is_finite() {
            return Err(Error::InvalidArgument(format!("radius must be nonnegative, got {}", self.radius)));
        }
        Ok(())
    }
}

const NOISE_TAG: u64 = 0x6e6f697365;
const START_TAG: u64 = 0x7374617274;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn cell_seed(master: u64, level: usize, restart: usize, tag: u64) -> u64 {
    [tag, level as u64, restart as u64]
        .iter()
        .fold(splitmix(master), |h, &x| splitmix(h ^ x))
}

/// Noise seed of cell `(level, restart)`; independent of the number of levels.
pub fn noise_seed(master: u64, level: usize, restart: usize) -> u64 {
    cell_seed(master, level, restart, NOISE_TAG)
}

pub fn start_seed(master: u64, level: usize, restart: usize) -> u64 {
    cell_seed(master, level, restart, START_TAG)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub level: usize,
    pub restart: usize,
    pub outcome: std::result::Result<ExperimentRecord, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlopeRow {
    pub quantity: &'static str,
    /// `None` when the fit is impossible (fewer than 3 levels with converged runs, or zero medians).
    pub fit: Option<RateFit>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    /// Ordered by `(level, restart)`.
    pub cells: Vec<CellResult>,
    pub summary: Vec<SlopeRow>,
    /// Scale factor applied to `u†`.
    pub solution_scale: f64,
}

pub const SUMMARY_QUANTITIES: [&str; 4] = ["discrepancy", "bregman", "ray_dist_sq", "within_ray_sq"];

impl ExperimentResult {
    pub fn records(&self) -> impl Iterator<Item = &ExperimentRecord> {
        self.cells.iter().filter_map(|c| c.outcome.as_ref().ok())
    }

    pub fn slope(&self, quantity: &str) -> Option<f64> {
        self.summary
            .iter()
            .find(|row| row.quantity == quantity)
            .and_then(|row| row.fit)
            .map(|fit| fit.slope)
    }

    /// Fraction of cells that failed or did not converge.
    pub fn nonconverged_fraction(&self) -> f64 {
        let bad = self
            .cells
            .iter()
            .filter(|c| !matches!(&c.outcome, Ok(r) if r.converged))
            .count();
        bad as f64 / self.cells.len().max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(ExperimentRecord::CSV_HEADER);
        out.push('\n');
        for cell in &self.cells {
            match &cell.outcome {
                Ok(record) => {
                    out.push_str(&record.csv_row());
                    out.push('\n');
                }
                Err(msg) => {
                    let _ = writeln!(out, "# failed level={} restart={}: {}", cell.level, cell.restart, msg);
                }
            }
        }
        out.push_str("# summary\n");
        out.push_str("quantity,slope,intercept,residual\n");
        for row in &self.summary {
            match row.fit {
                Some(fit) => {
                    let _ = writeln!(out, "{},{:e},{:e},{:e}", row.quantity, fit.slope, fit.intercept, fit.residual);
                }
                None => {
                    let _ = writeln!(out, "{},NaN,NaN,NaN", row.quantity);
                }
            }
        }
        out
    }
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len();
    Some(if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    })
}

fn run_cell(cert: &SourceCertificate, plan: &ExperimentPlan, level: usize, restart: usize, delta_rel: f64) -> Result<ExperimentRecord> {
    let delta = delta_rel * cert.u_true.norm();
    let alpha = plan.alpha_factor * delta;
    let noise = noise_seed(plan.master_seed, level, restart);
    let start = start_seed(plan.master_seed, level, restart);
    let data = add_noise(&cert.g_true, NoiseSpec::new(delta, noise)?)?;
    let mut config = TikhonovConfig::new(alpha, random_start(&cert.u_true, plan.radius, start)?);
    config.preconditioner = plan.preconditioner;
    config.outer_max = plan.outer_max;
    config.cg_max = plan.cg_max;
    let report = gauss_newton_solve(&data, &cert.kernel, &config)?;
    let u = &report.minimizer;
    let (bregman_bound, discrepancy_bound) = rate_bounds(delta, alpha, cert)?;
    Ok(ExperimentRecord {
        delta,
        alpha,
        noise_seed: noise,
        start_seed: start,
        discrepancy: (&autoconvolve(u, &cert.kernel)? - &data).norm(),
        bregman: bregman_distance(u, cert)?,
        ray_dist_sq: ray_distance_sq(u, cert)?,
        within_ray_sq: within_ray_error_sq(u, cert)?,
        discrepancy_bound,
        bregman_bound,
        bregman_lower: bregman_lower_bound(u, cert)?,
        converged: report.converged,
    })
}

fn summarize(cells: &[CellResult], deltas: &[f64]) -> Vec<SlopeRow> {
    let pick: [fn(&ExperimentRecord) -> f64; 4] = [|r| r.discrepancy, |r| r.bregman, |r| r.ray_dist_sq, |r| r.within_ray_sq];
    SUMMARY_QUANTITIES
        .iter()
        .zip(pick)
        .map(|(&quantity, get)| {
            let pairs: Vec<(f64, f64)> = (0..deltas.len())
                .filter_map(|level| {
                    let mut level_values: Vec<f64> = cells
                        .iter()
                        .filter(|c| c.level == level)
                        .filter_map(|c| c.outcome.as_ref().ok())
                        .filter(|r| r.converged)
                        .map(get)
                        .collect();
                    let delta = cells
                        .iter()
                        .filter(|c| c.level == level)
                        .find_map(|c| c.outcome.as_ref().ok().map(|r| r.delta))?;
                    median(&mut level_values).map(|m| (delta, m))
                })
                .collect();
            SlopeRow {
                quantity,
                fit: fit_rate(&pairs).ok(),
            }
        })
        .collect()
}

/// Runs every cell of the plan against the certificate (rescaled per
/// `plan.solution_scale`). Output is independent of the worker count.
pub fn run_experiment(cert: &SourceCertificate, plan: &ExperimentPlan) -> Result<ExperimentResult> {
    plan.validate()?;
    let scale = plan.solution_scale.factor(cert)?;
    let cert = plan.solution_scale.apply(cert)?;
    let deltas = plan.levels.values()?;
    let jobs: Vec<(usize, usize)> = (0..deltas.len())
        .flat_map(|i| (0..plan.restarts).map(move |j| (i, j)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build worker pool: {e}")))?;
    let mut cells: Vec<CellResult> = pool.install(|| {
        jobs.par_iter()
            .map(|&(level, restart)| CellResult {
                level,
                restart,
                outcome: run_cell(&cert, plan, level, restart, deltas[level]).map_err(|e| e.to_string()),
            })
            .collect()
    });
    cells.sort_by_key(|c| (c.level, c.restart));
    let summary = summarize(&cells, &deltas);
    Ok(ExperimentResult {
        cells,
        summary,
        solution_scale: scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::Kernel;
    use crate::spectral::{builtin_source, construct_source, SourceOptions};
    use num_complex::Complex64;

    fn small_cert() -> SourceCertificate {
        construct_source(&builtin_source(3, 64).unwrap(), &Kernel::Trivial, SourceOptions::default()).unwrap()
    }

    fn small_plan() -> ExperimentPlan {
        ExperimentPlan {
            levels: NoiseLevels {
                min: 1e-3,
                max: 1e-1,
                count: 3,
            },
            restarts: 2,
            master_seed: 7,
            ..ExperimentPlan::default()
        }
    }

    #[test]
    fn geometric_levels() {
        let v = NoiseLevels { min: 1e-3, max: 1e-1, count: 3 }.values().unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v[0], 1e-3);
        assert_eq!(v[2], 1e-1);
        assert!((v[1] - 1e-2).abs() <= 1e-15);
        assert!(NoiseLevels { min: 1e-1, max: 1e-3, count: 3 }.values().is_err());
        assert!(NoiseLevels { min: 0.0, max: 1e-3, count: 3 }.values().is_err());
        assert!(NoiseLevels { min: 1e-3, max: 1e-1, count: 0 }.values().is_err());
    }

    #[test]
    fn seeds_are_stable_and_distinct() {
        assert_eq!(noise_seed(1, 2, 3), noise_seed(1, 2, 3));
        assert_ne!(noise_seed(1, 2, 3), start_seed(1, 2, 3));
        assert_ne!(noise_seed(1, 2, 3), noise_seed(1, 3, 2));
        assert_ne!(noise_seed(1, 2, 3), noise_seed(2, 2, 3));
    }

    #[test]
    fn solution_scale_factors() {
        let cert = small_cert();
        let scaled = SolutionScale::DataRatio(100.0).apply(&cert).unwrap();
        assert!((scaled.g_true.norm() / scaled.u_true.norm() - 100.0).abs() <= 1e-9);
        assert!(scaled.eigen_residual().unwrap() <= 1e-8);
        let scaled = SolutionScale::Norm(3.0).apply(&cert).unwrap();
        assert!((scaled.u_true.norm() - 3.0).abs() <= 1e-12);
        assert_eq!(SolutionScale::AsCertified.apply(&cert).unwrap(), cert);
        assert!(SolutionScale::Norm(-1.0).factor(&cert).is_err());
    }

    #[test]
    fn counting_contract() {
        let result = run_experiment(&small_cert(), &small_plan()).unwrap();
        assert_eq!(result.cells.len(), 6);
        let csv = result.to_csv();
        let body: Vec<&str> = csv.lines().collect();
        let summary_at = body.iter().position(|l| *l == "# summary").unwrap();
        assert_eq!(summary_at, 1 + 6);
        assert_eq!(body.len() - summary_at - 2, 4);
        for cell in &result.cells {
            let record = cell.outcome.as_ref().unwrap();
            assert!(record.converged);
            assert!(record.discrepancy <= record.discrepancy_bound);
            assert!(record.bregman <= record.bregman_bound);
            assert!(record.bregman >= record.bregman_lower - 1e-9 * (1.0 + record.bregman));
        }
    }

    #[test]
    fn independent_of_worker_count_and_repeatable() {
        let cert = small_cert();
        let mut plan = small_plan();
        plan.workers = 1;
        let a = run_experiment(&cert, &plan).unwrap().to_csv();
        plan.workers = 3;
        let b = run_experiment(&cert, &plan).unwrap().to_csv();
        let c = run_experiment(&cert, &plan).unwrap().to_csv();
        assert_eq!(a, b);
        assert_eq!(b, c);
        plan.master_seed += 1;
        assert_ne!(run_experiment(&cert, &plan).unwrap().to_csv(), a);
    }

    #[test]
    fn adding_levels_keeps_existing_cells() {
        let cert = small_cert();
        let mut plan = small_plan();
        plan.levels.count = 1;
        let one = run_experiment(&cert, &plan).unwrap();
        plan.levels.count = 2;
        plan.levels.max = 1e-2;
        let two = run_experiment(&cert, &plan).unwrap();
        assert_eq!(one.cells[0], two.cells[0]);
        assert_eq!(one.cells[1], two.cells[1]);
    }

    #[test]
    fn failed_cells_are_recorded() {
        let mut cert = small_cert();
        // kernel for a different resolution: every solve errors out
        cert.kernel = Kernel::Sampled(
            crate::forward::SampledKernel::from_fn(8, |_, _| Complex64::new(1.0, 0.0)).unwrap(),
        );
        let mut plan = small_plan();
        plan.solution_scale = SolutionScale::AsCertified;
        let result = run_experiment(&cert, &plan).unwrap();
        assert!(result.cells.iter().all(|c| c.outcome.is_err()));
        assert_eq!(result.nonconverged_fraction(), 1.0);
        assert!(result.to_csv().contains("# failed level=0 restart=0"));
        assert!(result.summary.iter().all(|row| row.fit.is_none()));
    }

    #[test]
    fn plan_validation() {
        let cert = small_cert();
        let mut plan = small_plan();
        plan.restarts = 0;
        assert!(run_experiment(&cert, &plan).is_err());
        let mut plan = small_plan();
        plan.alpha_factor = 0.0;
        assert!(run_experiment(&cert, &plan).is_err());
    }
}
