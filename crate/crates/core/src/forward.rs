//! Kernel-based autoconvolution and its factorization through the quadratic
//! lifting `u ↦ u ⊗ u`.
//!
//! The discretization follows the grid sums
//! `A_k[u](n/N) = (1/N) Σ_{k=0}^{N} k(k/N, n/N) u(k/N) u((n-k)/N)` for
//! `n = 0..=2N`, with `u` extended by zero outside `0..=N`.

use std::fmt::Write as _;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::signal::{fft_convolve, fft_correlate, Domain, GridSignal};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Kernel sampled on the strip `{(s, t) : 0 ≤ s ≤ 1, s ≤ t ≤ s + 1}`.
///
/// Stored in strip coordinates `(s, d) = (s, t - s)`, both in `0..=N`. The
/// symmetry `k(s, t) = k(t - s, t)` becomes `m[s][d] = m[d][s]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledKernel {
    resolution: usize,
    strip: Vec<Complex64>,
}

impl SampledKernel {
    /// Builds a kernel from strip values in `(s, d)` row-major order, symmetrizing
    /// with `(k(s,t) + k(t-s,t)) / 2`.
    pub fn from_strip(resolution: usize, strip: Vec<Complex64>) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::InvalidKernel("resolution must be positive".into()));
        }
        let side = resolution + 1;
        if strip.len() != side * side {
            return Err(Error::InvalidKernel(format!(
                "expected {} strip samples, got {}",
                side * side,
                strip.len()
            )));
        }
        if strip.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidKernel("kernel samples must be finite".into()));
        }
        let mut sym = strip.clone();
        for s in 0..side {
            for d in 0..side {
                sym[s * side + d] = (strip[s * side + d] + strip[d * side + s]) * 0.5;
            }
        }
        Ok(Self {
            resolution,
            strip: sym,
        })
    }

    /// Samples `f(s, t)` on the strip grid.
    pub fn from_fn(resolution: usize, f: impl Fn(f64, f64) -> Complex64) -> Result<Self> {
        let side = resolution + 1;
        let n = resolution as f64;
        let mut strip = Vec::with_capacity(side * side);
        for s in 0..side {
            for d in 0..side {
                strip.push(f(s as f64 / n, (s + d) as f64 / n));
            }
        }
        Self::from_strip(resolution, strip)
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// `k(s_index/N, t_index/N)`; zero off the strip.
    pub fn get(&self, s_index: usize, t_index: usize) -> Complex64 {
        let side = self.resolution + 1;
        if s_index >= side || t_index < s_index || t_index - s_index >= side {
            return ZERO;
        }
        self.strip[s_index * side + (t_index - s_index)]
    }

    /// Strip value at `(s, d)`, i.e. `k(s/N, (s+d)/N)`.
    #[inline]
    pub(crate) fn at(&self, s: usize, d: usize) -> Complex64 {
        self.strip[s * (self.resolution + 1) + d]
    }

    pub fn sup_norm(&self) -> f64 {
        self.strip.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Autoconvolution kernel.
#[derive(Clone, Debug, PartialEq)]
pub enum Kernel {
    /// `k ≡ 1`
    Trivial,
    Sampled(SampledKernel),
}

impl Kernel {
    pub fn is_trivial(&self) -> bool {
        matches!(self, Kernel::Trivial)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Kernel::Trivial => "trivial",
            Kernel::Sampled(_) => "sampled",
        }
    }

    /// Kernel value at grid indices `(s_index, t_index)`.
    pub fn value(&self, s_index: usize, t_index: usize, resolution: usize) -> Complex64 {
        match self {
            Kernel::Trivial => {
                if s_index <= resolution && t_index >= s_index && t_index - s_index <= resolution {
                    Complex64::new(1.0, 0.0)
                } else {
                    ZERO
                }
            }
            Kernel::Sampled(k) => k.get(s_index, t_index),
        }
    }

    pub fn check_resolution(&self, resolution: usize) -> Result<()> {
        match self {
            Kernel::Sampled(k) if k.resolution != resolution => Err(Error::GridMismatch(format!(
                "kernel resolution {} vs signal resolution {resolution}",
                k.resolution
            ))),
            _ => Ok(()),
        }
    }

    /// Kernel file body: `# kind=trivial`, or `# N=.. kind=sampled` plus
    /// `s_index,t_index,re,im` rows for the nonzero strip samples.
    pub fn to_csv(&self) -> String {
        match self {
            Kernel::Trivial => "# kind=trivial\n".to_string(),
            Kernel::Sampled(k) => {
                let mut out = String::new();
                let _ = writeln!(out, "# N={} kind=sampled", k.resolution);
                out.push_str("s_index,t_index,re,im\n");
                let side = k.resolution + 1;
                for s in 0..side {
                    for d in 0..side {
                        let z = k.at(s, d);
                        if z != ZERO {
                            let _ = writeln!(out, "{s},{},{:e},{:e}", s + d, z.re, z.im);
                        }
                    }
                }
                out
            }
        }
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut resolution = None;
        let mut kind = None;
        let mut entries = Vec::new();
        let mut saw_header = false;
        for (lineno, raw) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let line = raw.trim();
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
                    } else if let Some(v) = token.strip_prefix("kind=") {
                        kind = Some(v.to_string());
                    }
                }
                continue;
            }
            if !saw_header {
                if line != "s_index,t_index,re,im" {
                    return Err(Error::parse(lineno, "expected header `s_index,t_index,re,im`"));
                }
                saw_header = true;
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 4 {
                return Err(Error::parse(lineno, "expected 4 fields"));
            }
            let s: usize = f[0].parse().map_err(|e| Error::parse(lineno, format!("{e}")))?;
            let t: usize = f[1].parse().map_err(|e| Error::parse(lineno, format!("{e}")))?;
            let re: f64 = f[2].parse().map_err(|e| Error::parse(lineno, format!("{e}")))?;
            let im: f64 = f[3].parse().map_err(|e| Error::parse(lineno, format!("{e}")))?;
            entries.push((lineno, s, t, Complex64::new(re, im)));
        }
        match kind.as_deref() {
            Some("trivial") => Ok(Kernel::Trivial),
            Some("sampled") => {
                let n = resolution.ok_or_else(|| Error::parse(0, "sampled kernel needs `N=`"))?;
                let side = n + 1;
                let mut strip = vec![ZERO; side * side];
                for (lineno, s, t, z) in entries {
                    if s >= side || t < s || t - s >= side {
                        return Err(Error::parse(lineno, "sample lies outside the support strip"));
                    }
                    strip[s * side + (t - s)] = z;
                }
                Ok(Kernel::Sampled(SampledKernel::from_strip(n, strip)?))
            }
            Some(other) => Err(Error::parse(0, format!("unknown kernel kind `{other}`"))),
            None => Err(Error::parse(0, "missing `kind=` header")),
        }
    }
}

/// Complex function sampled on the `(N+1) × (N+1)` grid of `[0,1]²`, row-major in `s`.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoVarFunction {
    values: Vec<Complex64>,
    resolution: usize,
    symmetric: bool,
}

impl TwoVarFunction {
    pub fn new(values: Vec<Complex64>, resolution: usize) -> Result<Self> {
        let side = resolution + 1;
        if resolution == 0 || values.len() != side * side {
            return Err(Error::InvalidSignal(format!(
                "expected {} samples for a two-variable function at N = {resolution}",
                side * side
            )));
        }
        if values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidSignal("samples must be finite".into()));
        }
        let symmetric = (0..side).all(|s| (0..s).all(|t| values[s * side + t] == values[t * side + s]));
        Ok(Self {
            values,
            resolution,
            symmetric,
        })
    }

    pub fn zeros(resolution: usize) -> Self {
        let side = resolution + 1;
        Self {
            values: vec![ZERO; side * side],
            resolution,
            symmetric: true,
        }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn get(&self, s: usize, t: usize) -> Complex64 {
        self.values[s * (self.resolution + 1) + t]
    }

    /// `Re[(1/N²) Σ_{s,t} w(s,t) conj(v(s,t))]`.
    pub fn inner_real(&self, other: &TwoVarFunction) -> Result<f64> {
        if self.resolution != other.resolution {
            return Err(Error::GridMismatch(format!(
                "two-variable grids N = {} vs N = {}",
                self.resolution, other.resolution
            )));
        }
        let n = self.resolution as f64;
        let sum: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum();
        Ok(sum / (n * n))
    }

    pub fn norm(&self) -> f64 {
        let n = self.resolution as f64;
        (self.values.iter().map(|z| z.norm_sqr()).sum::<f64>() / (n * n)).sqrt()
    }
}

fn require_unit(u: &GridSignal, what: &str) -> Result<()> {
    if u.domain() != Domain::Unit {
        return Err(Error::GridMismatch(format!("{what} must live on [0,1]")));
    }
    Ok(())
}

fn require_double(u: &GridSignal, what: &str) -> Result<()> {
    if u.domain() != Domain::Double {
        return Err(Error::GridMismatch(format!("{what} must live on [0,2]")));
    }
    Ok(())
}

/// `B_k[u, v](n/N) = (1/N) Σ_k k(k/N, n/N) u_k v_{n-k}`.
pub fn bilinear_apply(u: &GridSignal, v: &GridSignal, kernel: &Kernel) -> Result<GridSignal> {
    require_unit(u, "u")?;
    u.check_grid(v)?;
    let n = u.resolution();
    kernel.check_resolution(n)?;
    let scale = 1.0 / n as f64;
    let samples = match kernel {
        Kernel::Trivial => fft_convolve(u.samples(), v.samples())
            .into_iter()
            .map(|z| z * scale)
            .collect(),
        Kernel::Sampled(k) => {
            let (us, vs) = (u.samples(), v.samples());
            (0..=2 * n)
                .map(|t| {
                    let lo = t.saturating_sub(n);
                    let hi = t.min(n);
                    let mut acc = ZERO;
                    for s in lo..=hi {
                        acc += k.at(s, t - s) * us[s] * vs[t - s];
                    }
                    acc * scale
                })
                .collect()
        }
    };
    Ok(GridSignal::from_parts(samples, n, Domain::Double))
}

/// `A_k[u] = B_k[u, u]`, mapping `[0,1]` signals to `[0,2]` signals.
pub fn autoconvolve(u: &GridSignal, kernel: &Kernel) -> Result<GridSignal> {
    bilinear_apply(u, u, kernel)
}

/// `⊙[u](s, t) = u(s) u(t)`.
pub fn outer(u: &GridSignal) -> Result<TwoVarFunction> {
    require_unit(u, "u")?;
    let us = u.samples();
    let mut values = Vec::with_capacity(us.len() * us.len());
    for a in us {
        for b in us {
            values.push(a * b);
        }
    }
    Ok(TwoVarFunction {
        values,
        resolution: u.resolution(),
        symmetric: true,
    })
}

/// `G_k[w](n/N) = (1/N) Σ_k k(k/N, n/N) w(k/N, (n-k)/N)`.
pub fn g_apply(w: &TwoVarFunction, kernel: &Kernel) -> Result<GridSignal> {
    let n = w.resolution;
    kernel.check_resolution(n)?;
    let scale = 1.0 / n as f64;
    let samples = (0..=2 * n)
        .map(|t| {
            let lo = t.saturating_sub(n);
            let hi = t.min(n);
            let mut acc = ZERO;
            for s in lo..=hi {
                acc += kernel.value(s, t, n) * w.get(s, t - s);
            }
            acc * scale
        })
        .collect();
    Ok(GridSignal::from_parts(samples, n, Domain::Double))
}

/// `G_k*[φ](s, t) = conj(k(s, s+t)) φ(s+t)`.
pub fn g_adjoint(phi: &GridSignal, kernel: &Kernel) -> Result<TwoVarFunction> {
    require_double(phi, "φ")?;
    let n = phi.resolution();
    kernel.check_resolution(n)?;
    let side = n + 1;
    let ps = phi.samples();
    let mut values = Vec::with_capacity(side * side);
    for s in 0..side {
        for t in 0..side {
            values.push(kernel.value(s, s + t, n).conj() * ps[s + t]);
        }
    }
    TwoVarFunction::new(values, n)
}

/// Fréchet derivative of the autoconvolution, `dA_k(u)[h] = 2 B_k[u, h]`.
pub fn derivative_apply(u: &GridSignal, h: &GridSignal, kernel: &Kernel) -> Result<GridSignal> {
    Ok(bilinear_apply(u, h, kernel)?.scale_real(2.0))
}

/// Real adjoint of `h ↦ 2 B_k[u, h]`:
/// `(2/N) Σ_k conj(k(k/N, (k+m)/N)) r_{k+m} conj(u_k)` for `m = 0..=N`.
pub fn derivative_adjoint(u: &GridSignal, r: &GridSignal, kernel: &Kernel) -> Result<GridSignal> {
    require_unit(u, "u")?;
    require_double(r, "r")?;
    if u.resolution() != r.resolution() {
        return Err(Error::GridMismatch(format!(
            "u has N = {}, r has N = {}",
            u.resolution(),
            r.resolution()
        )));
    }
    kernel.check_resolution(u.resolution())?;
    Ok(conjugating_correlation(r, u, kernel).scale_real(2.0))
}

/// `(1/N) Σ_{k=0}^{N} conj(k(k/N, (n+k)/N)) φ_{n+k} conj(u_k)` for `n = 0..=N`.
///
/// Shared by the derivative adjoint and the source-condition operator; the
/// caller has already checked the grids.
pub(crate) fn conjugating_correlation(phi: &GridSignal, u: &GridSignal, kernel: &Kernel) -> GridSignal {
    let n = u.resolution();
    let scale = 1.0 / n as f64;
    let ps = phi.samples();
    let us = u.samples();
    let samples = match kernel {
        Kernel::Trivial => {
            let conj_u: Vec<Complex64> = us.iter().map(|z| z.conj()).collect();
            fft_correlate(ps, &conj_u).into_iter().map(|z| z * scale).collect()
        }
        Kernel::Sampled(k) => (0..=n)
            .map(|m| {
                let mut acc = ZERO;
                for (s, uk) in us.iter().enumerate() {
                    acc += k.at(s, m).conj() * ps[s + m] * uk.conj();
                }
                acc * scale
            })
            .collect(),
    };
    GridSignal::from_parts(samples, n, Domain::Unit)
}
