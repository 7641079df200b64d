//! Complex signals sampled on the uniform grids of `[0, 1]` and `[0, 2]`.
//!
//! A signal with resolution `N` on `[0, L]` carries `L·N + 1` samples at the
//! points `j/N`. The space is treated as a real Hilbert space with the inner
//! product `Re[(1/N) Σ_j u_j conj(v_j)]`: every grid point gets the same weight
//! `1/N`, endpoints included.

use std::cell::RefCell;
use std::fmt::Write as _;
use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Length of the interval a signal lives on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    /// `[0, 1]`
    Unit,
    /// `[0, 2]`
    Double,
}

impl Domain {
    pub fn length(self) -> usize {
        match self {
            Domain::Unit => 1,
            Domain::Double => 2,
        }
    }

    pub fn from_length(length: usize) -> Result<Self> {
        match length {
            1 => Ok(Domain::Unit),
            2 => Ok(Domain::Double),
            other => Err(Error::InvalidSignal(format!(
                "domain length must be 1 or 2, got {other}"
            ))),
        }
    }

    /// Number of grid points for resolution `n`.
    pub fn samples(self, n: usize) -> usize {
        self.length() * n + 1
    }
}

/// A complex signal on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSignal {
    samples: Vec<Complex64>,
    resolution: usize,
    domain: Domain,
}

impl GridSignal {
    pub fn new(samples: Vec<Complex64>, resolution: usize, domain: Domain) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::InvalidSignal("resolution must be positive".into()));
        }
        let expected = domain.samples(resolution);
        if samples.len() != expected {
            return Err(Error::InvalidSignal(format!(
                "expected {expected} samples for N = {resolution} on [0,{}], got {}",
                domain.length(),
                samples.len()
            )));
        }
        if let Some(j) = samples.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidSignal(format!("sample {j} is not finite")));
        }
        Ok(Self {
            samples,
            resolution,
            domain,
        })
    }

    /// Builds a signal from trusted samples produced inside the crate.
    pub(crate) fn from_parts(samples: Vec<Complex64>, resolution: usize, domain: Domain) -> Self {
        debug_assert_eq!(samples.len(), domain.samples(resolution));
        Self {
            samples,
            resolution,
            domain,
        }
    }

    pub fn zeros(resolution: usize, domain: Domain) -> Self {
        assert!(resolution > 0, "resolution must be positive");
        Self::from_parts(
            vec![Complex64::new(0.0, 0.0); domain.samples(resolution)],
            resolution,
            domain,
        )
    }

    pub fn constant(value: Complex64, resolution: usize, domain: Domain) -> Self {
        assert!(resolution > 0, "resolution must be positive");
        Self::from_parts(vec![value; domain.samples(resolution)], resolution, domain)
    }

    /// Samples `f` at the grid points `j/N`.
    pub fn from_fn(resolution: usize, domain: Domain, f: impl Fn(f64) -> Complex64) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::InvalidSignal("resolution must be positive".into()));
        }
        let n = resolution as f64;
        let samples = (0..domain.samples(resolution))
            .map(|j| f(j as f64 / n))
            .collect();
        Self::new(samples, resolution, domain)
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Grid point of sample `j`.
    pub fn point(&self, j: usize) -> f64 {
        j as f64 / self.resolution as f64
    }

    pub fn same_grid(&self, other: &GridSignal) -> bool {
        self.resolution == other.resolution && self.domain == other.domain
    }

    pub fn check_grid(&self, other: &GridSignal) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "N = {} on [0,{}] vs N = {} on [0,{}]",
                self.resolution,
                self.domain.length(),
                other.resolution,
                other.domain.length()
            )))
        }
    }

    /// `Re[(1/N) Σ u_j conj(v_j)]`.
    pub fn inner_real(&self, other: &GridSignal) -> Result<f64> {
        self.check_grid(other)?;
        Ok(self.dot(other))
    }

    pub(crate) fn dot(&self, other: &GridSignal) -> f64 {
        let sum: f64 = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum();
        sum / self.resolution as f64
    }

    pub fn norm_sqr(&self) -> f64 {
        self.samples.iter().map(|z| z.norm_sqr()).sum::<f64>() / self.resolution as f64
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn scale(&self, c: Complex64) -> GridSignal {
        self.map(|z| z * c)
    }

    pub fn scale_real(&self, a: f64) -> GridSignal {
        self.map(|z| z * a)
    }

    pub fn conj(&self) -> GridSignal {
        self.map(|z| z.conj())
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> GridSignal {
        Self::from_parts(
            self.samples.iter().map(|&z| f(z)).collect(),
            self.resolution,
            self.domain,
        )
    }

    /// `self += a·x` with a real coefficient.
    pub fn axpy(&mut self, a: f64, x: &GridSignal) {
        assert!(self.same_grid(x), "axpy on mismatched grids");
        for (y, &xi) in self.samples.iter_mut().zip(&x.samples) {
            *y += xi * a;
        }
    }

    pub fn max_abs_diff(&self, other: &GridSignal) -> f64 {
        assert!(self.same_grid(other), "comparison of mismatched grids");
        self.samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Writes the signal in the `index,re,im` CSV format with its `# N= L=` header.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.samples.len() * 32);
        let _ = writeln!(out, "# N={} L={}", self.resolution, self.domain.length());
        out.push_str("index,re,im\n");
        for (j, z) in self.samples.iter().enumerate() {
            let _ = writeln!(out, "{j},{:e},{:e}", z.re, z.im);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut resolution = None;
        let mut length = None;
        let mut samples = Vec::new();
        let mut saw_header = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let lineno = lineno + 1;
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                for token in comment.split_whitespace() {
                    if let Some(v) = token.strip_prefix("N=") {
                        resolution = Some(
                            v.parse::<usize>()
                                .map_err(|e| Error::parse(lineno, format!("bad N: {e}")))?,
                        );
                    } else if let Some(v) = token.strip_prefix("L=") {
                        length = Some(
                            v.parse::<usize>()
                                .map_err(|e| Error::parse(lineno, format!("bad L: {e}")))?,
                        );
                    }
                }
                continue;
            }
            if !saw_header {
                if line != "index,re,im" {
                    return Err(Error::parse(lineno, "expected header `index,re,im`"));
                }
                saw_header = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(Error::parse(lineno, "expected 3 fields"));
            }
            let index: usize = fields[0]
                .trim()
                .parse()
                .map_err(|e| Error::parse(lineno, format!("bad index: {e}")))?;
            if index != samples.len() {
                return Err(Error::parse(
                    lineno,
                    format!("index {index} out of order (expected {})", samples.len()),
                ));
            }
            let re: f64 = fields[1]
                .trim()
                .parse()
                .map_err(|e| Error::parse(lineno, format!("bad re: {e}")))?;
            let im: f64 = fields[2]
                .trim()
                .parse()
                .map_err(|e| Error::parse(lineno, format!("bad im: {e}")))?;
            samples.push(Complex64::new(re, im));
        }
        let resolution = resolution.ok_or_else(|| Error::parse(0, "missing `# N=` header"))?;
        let domain = Domain::from_length(length.ok_or_else(|| Error::parse(0, "missing `L=` header"))?)?;
        Self::new(samples, resolution, domain)
    }
}

impl Add<&GridSignal> for &GridSignal {
    type Output = GridSignal;

    fn add(self, rhs: &GridSignal) -> GridSignal {
        assert!(self.same_grid(rhs), "addition of mismatched grids");
        GridSignal::from_parts(
            self.samples.iter().zip(&rhs.samples).map(|(a, b)| a + b).collect(),
            self.resolution,
            self.domain,
        )
    }
}

impl Sub<&GridSignal> for &GridSignal {
    type Output = GridSignal;

    fn sub(self, rhs: &GridSignal) -> GridSignal {
        assert!(self.same_grid(rhs), "subtraction of mismatched grids");
        GridSignal::from_parts(
            self.samples.iter().zip(&rhs.samples).map(|(a, b)| a - b).collect(),
            self.resolution,
            self.domain,
        )
    }
}

impl Neg for &GridSignal {
    type Output = GridSignal;

    fn neg(self) -> GridSignal {
        self.map(|z| -z)
    }
}

impl Mul<f64> for &GridSignal {
    type Output = GridSignal;

    fn mul(self, rhs: f64) -> GridSignal {
        self.scale_real(rhs)
    }
}

impl Mul<Complex64> for &GridSignal {
    type Output = GridSignal;

    fn mul(self, rhs: Complex64) -> GridSignal {
        self.scale(rhs)
    }
}

/// Noise level and seed for [`add_noise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub level: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(level: f64, seed: u64) -> Result<Self> {
        if !(level >= 0.0) || !level.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise level must be finite and nonnegative, got {level}"
            )));
        }
        Ok(Self { level, seed })
    }
}

/// Draws i.i.d. circular complex Gaussian samples rescaled so that the
/// perturbation has norm exactly `spec.level`.
pub fn add_noise(g: &GridSignal, spec: NoiseSpec) -> Result<GridSignal> {
    if !(spec.level >= 0.0) || !spec.level.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise level must be finite and nonnegative, got {}",
            spec.level
        )));
    }
    if spec.level == 0.0 {
        return Ok(g.clone());
    }
    let noise = gaussian_direction(g.resolution(), g.domain(), spec.seed);
    let mut out = g.clone();
    out.axpy(spec.level, &noise);
    Ok(out)
}

/// A unit-norm circular complex Gaussian direction, deterministic in `seed`.
pub(crate) fn gaussian_direction(resolution: usize, domain: Domain, seed: u64) -> GridSignal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    loop {
        let samples: Vec<Complex64> = (0..domain.samples(resolution))
            .map(|_| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(re * scale, im * scale)
            })
            .collect();
        let w = GridSignal::from_parts(samples, resolution, domain);
        let norm = w.norm();
        if norm > 0.0 {
            return w.scale_real(1.0 / norm);
        }
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    PLANNER.with(|planner| {
        let mut planner = planner.borrow_mut();
        let plan = if inverse {
            planner.plan_fft_inverse(buf.len())
        } else {
            planner.plan_fft_forward(buf.len())
        };
        plan.process(buf);
    });
}

/// Forward DFT `X_m = Σ_j x_j e^{-2πi jm/n}` of arbitrary length.
pub fn dft(data: &[Complex64]) -> Vec<Complex64> {
    let mut buf = data.to_vec();
    if !buf.is_empty() {
        fft_in_place(&mut buf, false);
    }
    buf
}

/// Inverse DFT including the `1/n` normalization.
pub fn idft(data: &[Complex64]) -> Vec<Complex64> {
    let mut buf = data.to_vec();
    if !buf.is_empty() {
        fft_in_place(&mut buf, true);
        let inv = 1.0 / buf.len() as f64;
        for z in &mut buf {
            *z *= inv;
        }
    }
    buf
}

/// Full linear convolution `c_n = Σ_k a_k b_{n-k}` of length `a.len() + b.len() - 1`.
///
/// Both inputs are zero-padded to the next power of two covering the output.
pub fn fft_convolve(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    let size = out_len.next_power_of_two();
    let mut fa = vec![Complex64::new(0.0, 0.0); size];
    let mut fb = vec![Complex64::new(0.0, 0.0); size];
    fa[..a.len()].copy_from_slice(a);
    fb[..b.len()].copy_from_slice(b);
    fft_in_place(&mut fa, false);
    fft_in_place(&mut fb, false);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    fft_in_place(&mut fa, true);
    let inv = 1.0 / size as f64;
    fa.truncate(out_len);
    for z in &mut fa {
        *z *= inv;
    }
    fa
}

/// Sliding correlation `c_n = Σ_k long_{n+k} short_k` for `n = 0..=long.len()-short.len()`.
pub fn fft_correlate(long: &[Complex64], short: &[Complex64]) -> Vec<Complex64> {
    assert!(
        !short.is_empty() && long.len() >= short.len(),
        "correlation needs a nonempty window no longer than the signal"
    );
    let reversed: Vec<Complex64> = short.iter().rev().copied().collect();
    let full = fft_convolve(long, &reversed);
    let lags = long.len() - short.len() + 1;
    full[short.len() - 1..short.len() - 1 + lags].to_vec()
}


#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;

    fn signal_strategy() -> impl Strategy<Value = (GridSignal, GridSignal)> {
        (1usize..24).prop_flat_map(|n| {
            let len = n + 1;
            let samples = proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), len);
            (samples.clone(), samples).prop_map(move |(a, b)| {
                let make = |v: Vec<(f64, f64)>| {
                    GridSignal::new(
                        v.into_iter().map(|(re, im)| Complex64::new(re, im)).collect(),
                        n,
                        Domain::Unit,
                    )
                    .unwrap()
                };
                (make(a), make(b))
            })
        })
    }

    proptest! {
        #[test]
        fn inner_product_is_symmetric((u, v) in signal_strategy()) {
            prop_assert_eq!(u.inner_real(&v).unwrap(), v.inner_real(&u).unwrap());
        }

        #[test]
        fn parallelogram_law((u, v) in signal_strategy()) {
            let lhs = (&u + &v).norm_sqr() + (&u - &v).norm_sqr();
            let rhs = 2.0 * u.norm_sqr() + 2.0 * v.norm_sqr();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.max(1e-300));
        }
    }
}
