//! Finite-dimensional dilinear subgradients on `ℝ^d`, `d ≤ 8`.
//!
//! A pair `(ξ, Ξ)` of a vector and a symmetric matrix is a dilinear
//! subgradient of `F` at `u` if
//! `F(v) ≥ F(u) + ⟨ξ, v − u⟩ + ⟨Ξ, v vᵀ − u uᵀ⟩` for all `v`. The universal
//! quantifier is checked on finite test sets and the worst slack reported.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 8;

/// Eigenvalue threshold for negative semi-definiteness.
pub const NSD_TOL: f64 = 1e-12;

/// Relative slack allowed in the subgradient inequality.
pub const SLACK_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct RealVec(DVector<f64>);

impl RealVec {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() || coords.len() > MAX_DIM {
            return Err(Error::InvalidArgument(format!(
                "dimension must be in 1..={MAX_DIM}, got {}",
                coords.len()
            )));
        }
        if coords.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("vector entries must be finite".into()));
        }
        Ok(Self(DVector::from_vec(coords)))
    }

    pub fn zeros(d: usize) -> Result<Self> {
        Self::new(vec![0.0; d])
    }

    pub fn scalar(t: f64) -> Result<Self> {
        Self::new(vec![t])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn coords(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn dot(&self, other: &RealVec) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    fn from_vector(v: DVector<f64>) -> Self {
        Self(v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Rejects matrices that are not exactly symmetric.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 || m.nrows() > MAX_DIM {
            return Err(Error::InvalidArgument(format!(
                "expected a square matrix of size 1..={MAX_DIM}, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("matrix entries must be finite".into()));
        }
        if m != m.transpose() {
            return Err(Error::InvalidArgument("matrix is not symmetric".into()));
        }
        Ok(Self(m))
    }

    /// `(m + mᵀ)/2`.
    pub fn symmetrize(m: DMatrix<f64>) -> Result<Self> {
        let t = m.transpose();
        Self::new((m + t) * 0.5)
    }

    pub fn zeros(d: usize) -> Self {
        Self(DMatrix::zeros(d, d))
    }

    pub fn identity(d: usize) -> Self {
        Self(DMatrix::identity(d, d))
    }

    pub fn scalar(a: f64) -> Self {
        Self(DMatrix::from_element(1, 1, a))
    }

    /// The lifted point `u ⊗ u = u uᵀ`.
    pub fn outer(u: &RealVec) -> Self {
        Self(&u.0 * u.0.transpose())
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn apply(&self, u: &RealVec) -> RealVec {
        RealVec::from_vector(&self.0 * &u.0)
    }

    /// Frobenius pairing `Σ_ij A_ij B_ij`.
    pub fn inner(&self, other: &SymMatrix) -> f64 {
        self.0.dot(&other.0)
    }

    /// `⟨A, v vᵀ⟩ = vᵀ A v`.
    pub fn quadratic(&self, v: &RealVec) -> f64 {
        v.0.dot(&(&self.0 * &v.0))
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.0.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        Self(&self.0 + &other.0)
    }

    pub fn scale(&self, a: f64) -> SymMatrix {
        Self(&self.0 * a)
    }
}

/// Dual element `(ξ, Ξ)` pairing with `(v, v ⊗ v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DilinearSubgradient {
    pub xi: RealVec,
    pub big_xi: SymMatrix,
}

impl DilinearSubgradient {
    pub fn new(xi: RealVec, big_xi: SymMatrix) -> Result<Self> {
        if xi.dim() != big_xi.dim() {
            return Err(Error::InvalidArgument(format!(
                "vector has dimension {}, matrix has size {}",
                xi.dim(),
                big_xi.dim()
            )));
        }
        Ok(Self { xi, big_xi })
    }

    pub fn zero(d: usize) -> Result<Self> {
        Self::new(RealVec::zeros(d)?, SymMatrix::zeros(d))
    }

    /// Component-wise sum; the candidate for the sum rule.
    pub fn sum(&self, other: &DilinearSubgradient) -> Result<Self> {
        Self::new(
            RealVec::from_vector(&self.xi.0 + &other.xi.0),
            self.big_xi.add(&other.big_xi),
        )
    }

    pub fn dim(&self) -> usize {
        self.xi.dim()
    }

    /// The dilinear minorant anchored at `u`, evaluated at `v`.
    pub fn minorant(&self, f_u: f64, u: &RealVec, v: &RealVec) -> f64 {
        let dv = RealVec::from_vector(&v.0 - &u.0);
        f_u + self.xi.dot(&dv) + self.big_xi.quadratic(v) - self.big_xi.quadratic(u)
    }
}

/// Outcome of a finite subgradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct SubgradientCheck {
    pub holds: bool,
    /// Minimum of `F(v) − minorant(v)` over the test set (`+∞` if every `F(v)` is infinite).
    pub worst_slack: f64,
    pub worst_point: Option<RealVec>,
}

fn check_dims(sg: &DilinearSubgradient, u: &RealVec) -> Result<()> {
    if sg.dim() != u.dim() {
        return Err(Error::InvalidArgument(format!(
            "subgradient has dimension {}, point has {}",
            sg.dim(),
            u.dim()
        )));
    }
    Ok(())
}

/// Checks the dilinear subgradient inequality at every test point.
pub fn subgradient_holds<F>(f: F, sg: &DilinearSubgradient, u: &RealVec, test_points: &[RealVec]) -> Result<SubgradientCheck>
where
    F: Fn(&RealVec) -> f64,
{
    check_dims(sg, u)?;
    let f_u = f(u);
    if !f_u.is_finite() {
        return Err(Error::InvalidArgument(format!("F(u) must be finite, got {f_u}")));
    }
    let mut holds = true;
    let mut worst_slack = f64::INFINITY;
    let mut worst_point = None;
    for v in test_points {
        check_dims(sg, v)?;
        let f_v = f(v);
        if f_v == f64::INFINITY {
            continue;
        }
        let minorant = sg.minorant(f_u, u, v);
        let slack = f_v - minorant;
        let scale = 1.0 + f_v.abs().max(minorant.abs());
        if !(slack >= -SLACK_TOL * scale) {
            holds = false;
        }
        if slack < worst_slack || slack.is_nan() {
            worst_slack = slack;
            worst_point = Some(v.clone());
        }
    }
    Ok(SubgradientCheck {
        holds,
        worst_slack,
        worst_point,
    })
}

fn require_nsd(t: &SymMatrix) -> Result<()> {
    let top = t.max_eigenvalue();
    if top > NSD_TOL {
        return Err(Error::NotNegativeSemidefinite(top));
    }
    Ok(())
}

/// Subgradient of `‖·‖^p` at `u` generated by a negative semi-definite `T`:
/// `(−2Tu, Id + T)` for `p = 2` and `((p‖u‖^{p−2} Id − 2T)u, T)` for `p ∈ (1, 2)`.
pub fn hilbert_norm_subgradient(u: &RealVec, t: &SymMatrix, p: f64) -> Result<DilinearSubgradient> {
    if t.dim() != u.dim() {
        return Err(Error::InvalidArgument(format!(
            "T has size {}, u has dimension {}",
            t.dim(),
            u.dim()
        )));
    }
    require_nsd(t)?;
    let tu = t.apply(u).0;
    if p == 2.0 {
        return DilinearSubgradient::new(
            RealVec::from_vector(tu * -2.0),
            SymMatrix::identity(u.dim()).add(t),
        );
    }
    if !(p > 1.0 && p < 2.0) {
        return Err(Error::InvalidArgument(format!("p must be 2 or lie in (1, 2), got {p}")));
    }
    let norm = u.norm();
    // The derivative p‖u‖^{p−2}u extends continuously by 0 at u = 0.
    let gradient = if norm == 0.0 {
        DVector::zeros(u.dim())
    } else {
        &u.0 * (p * norm.powf(p - 2.0))
    };
    DilinearSubgradient::new(RealVec::from_vector(gradient - tu * 2.0), t.clone())
}

/// `F(v) − F(u) − ⟨ξ, v − u⟩ − ⟨Ξ, v vᵀ − u uᵀ⟩`.
pub fn dilinear_bregman<F>(f: F, sg: &DilinearSubgradient, v: &RealVec, u: &RealVec) -> Result<f64>
where
    F: Fn(&RealVec) -> f64,
{
    check_dims(sg, u)?;
    check_dims(sg, v)?;
    let f_u = f(u);
    Ok(f(v) - sg.minorant(f_u, u, v))
}

/// Whether `(0, 0)` is a dilinear subgradient at `u_star` over `grid`, i.e.
/// whether `u_star` minimizes `F` over the grid.
pub fn fermat_check<F>(f: F, u_star: &RealVec, grid: &[RealVec]) -> Result<bool>
where
    F: Fn(&RealVec) -> f64,
{
    let zero = DilinearSubgradient::zero(u_star.dim())?;
    Ok(subgradient_holds(f, &zero, u_star, grid)?.holds)
}

/// `count` points with i.i.d. normal coordinates scaled by `radius`.
pub fn sample_points(d: usize, count: usize, radius: f64, seed: u64) -> Result<Vec<RealVec>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let coords: Vec<f64> = (0..d).map(|_| radius * rng.sample::<f64, _>(StandardNormal)).collect();
            RealVec::new(coords)
        })
        .collect()
}

/// Random negative semi-definite matrix `−B Bᵀ · scale`.
pub fn sample_nsd(d: usize, scale: f64, seed: u64) -> SymMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let m = &b * b.transpose() * -scale;
    let t = m.transpose();
    SymMatrix((&m + t) * 0.5)
}

/// Feasibility tolerance for the convex weights.
const WEIGHT_TOL: f64 = 1e-12;

/// Convex hull value of the lifted functional `F_⊗(t, t²) = F(t)` in one
/// dimension: for each query `(v, w)`, the infimum of `Σ α_n F(t_n)` over
/// weights on at most three breakpoints with `Σ α_n (t_n, t_n²) = (v, w)`.
/// Infeasible queries give `+∞`.
pub fn convexify_1d<F>(f: F, breakpoints: &[f64], queries: &[(f64, f64)]) -> Result<Vec<f64>>
where
    F: Fn(f64) -> f64,
{
    let mut ts: Vec<f64> = breakpoints.to_vec();
    if ts.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidArgument("breakpoints must be finite".into()));
    }
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    if ts.is_empty() {
        return Err(Error::InvalidArgument("convexification needs at least one breakpoint".into()));
    }
    let values: Vec<f64> = ts.iter().map(|&t| f(t)).collect();
    let m = ts.len();
    let mut out = Vec::with_capacity(queries.len());
    for &(v, w) in queries {
        let mut best = f64::INFINITY;
        // single points and segments are the degenerate cases of the triple search
        for i in 0..m {
            if (ts[i] - v).abs() <= WEIGHT_TOL && (ts[i] * ts[i] - w).abs() <= WEIGHT_TOL {
                best = best.min(values[i]);
            }
        }
        if m == 2 {
            if let Some(a) = segment_weight(ts[0], ts[1], v, w) {
                best = best.min(a * values[0] + (1.0 - a) * values[1]);
            }
        }
        for i in 0..m {
            for j in i + 1..m {
                for k in j + 1..m {
                    if let Some([a, b, c]) = triple_weights(ts[i], ts[j], ts[k], v, w) {
                        best = best.min(a * values[i] + b * values[j] + c * values[k]);
                    }
                }
            }
        }
        out.push(best);
    }
    Ok(out)
}

/// Weights on `(x_n, x_n²)` reproducing `(v, w)`; Lagrange form of the
/// Vandermonde solve. `None` when any weight is negative.
fn triple_weights(x0: f64, x1: f64, x2: f64, v: f64, w: f64) -> Option<[f64; 3]> {
    // α_n = (w − v(x_a + x_b) + x_a x_b) / ((x_n − x_a)(x_n − x_b))
    let weight = |xn: f64, xa: f64, xb: f64| (w - v * (xa + xb) + xa * xb) / ((xn - xa) * (xn - xb));
    let a = [weight(x0, x1, x2), weight(x1, x0, x2), weight(x2, x0, x1)];
    a.iter().all(|&x| x >= -WEIGHT_TOL).then_some(a)
}

fn segment_weight(x0: f64, x1: f64, v: f64, w: f64) -> Option<f64> {
    let a = (x1 - v) / (x1 - x0);
    let on_chord = (a * x0 * x0 + (1.0 - a) * x1 * x1 - w).abs() <= WEIGHT_TOL * (1.0 + w.abs());
    (a >= -WEIGHT_TOL && a <= 1.0 + WEIGHT_TOL && on_chord).then_some(a)
}

/// Evidence that the sum rule fails for `F = |·|` and `G = χ_{[−1,1]}` at 0.
#[derive(Clone, Debug, PartialEq)]
pub struct SumRuleEvidence {
    /// Worst slack over the family `t ↦ c₂t² + c₁t`, `c₂ ≤ 0`, `c₁ ∈ [−1,1]`, for `F` at 0.
    pub abs_family_worst_slack: f64,
    pub abs_family_holds: bool,
    /// `(0, 1)` for `F + G` at 0.
    pub parabola_for_sum: SubgradientCheck,
    /// `(0, 1)` for `F` alone at 0, with the witness `t = 2`.
    pub parabola_for_abs: SubgradientCheck,
    pub slack_at_two: f64,
}

impl SumRuleEvidence {
    pub fn confirms_counterexample(&self) -> bool {
        self.abs_family_holds && self.parabola_for_sum.holds && !self.parabola_for_abs.holds && self.slack_at_two < 0.0
    }
}

pub fn abs_value(v: &RealVec) -> f64 {
    v.coords()[0].abs()
}

pub fn abs_plus_interval_indicator(v: &RealVec) -> f64 {
    let t = v.coords()[0];
    if t.abs() <= 1.0 {
        t.abs()
    } else {
        f64::INFINITY
    }
}

pub fn sum_rule_counterexample() -> Result<SumRuleEvidence> {
    let zero = RealVec::scalar(0.0)?;
    let grid: Vec<RealVec> = (-300..=300)
        .map(|i| RealVec::scalar(i as f64 / 100.0))
        .collect::<Result<_>>()?;

    let mut worst = f64::INFINITY;
    let mut holds = true;
    for i in -10..=10 {
        let c1 = i as f64 / 10.0;
        for c2 in [0.0, -0.01, -0.1, -0.5, -1.0, -10.0] {
            let sg = DilinearSubgradient::new(RealVec::scalar(c1)?, SymMatrix::scalar(c2))?;
            let check = subgradient_holds(abs_value, &sg, &zero, &grid)?;
            holds &= check.holds;
            worst = worst.min(check.worst_slack);
        }
    }

    let parabola = DilinearSubgradient::new(RealVec::scalar(0.0)?, SymMatrix::scalar(1.0))?;
    let parabola_for_sum = subgradient_holds(abs_plus_interval_indicator, &parabola, &zero, &grid)?;
    let parabola_for_abs = subgradient_holds(abs_value, &parabola, &zero, &grid)?;
    let two = RealVec::scalar(2.0)?;
    let slack_at_two = abs_value(&two) - parabola.minorant(0.0, &zero, &two);

    Ok(SumRuleEvidence {
        abs_family_worst_slack: worst,
        abs_family_holds: holds,
        parabola_for_sum,
        parabola_for_abs,
        slack_at_two,
    })
}

/// `‖v‖^p`.
pub fn norm_power(p: f64) -> impl Fn(&RealVec) -> f64 {
    move |v: &RealVec| v.norm().powf(p)
}
