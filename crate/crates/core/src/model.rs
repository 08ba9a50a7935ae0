//! Affine LPV models, parameter boxes and parameter-space projections.
//!
//! A model is stored as the coefficient blocks `X_0 .. X_ℓ` of each system
//! matrix, so that `X(θ) = X_0 + Σ θ_i X_i`. The weight row `[1, θ]` is never
//! materialised as a Kronecker product; evaluation folds it into a weighted
//! block sum.

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, from_rows, to_rows};

/// Tolerance used when checking that a parameter vector lies inside its box.
pub const BOX_TOLERANCE: f64 = 1e-9;
/// Largest parameter count for which vertices are enumerated.
pub const MAX_VERTEX_PARAMS: usize = 24;
/// Interior samples checked by the stability guard on top of the vertices.
pub const STABILITY_SAMPLES: usize = 50;

const ORTHONORMAL_TOLERANCE: f64 = 1e-12;
const TRANSFORM_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TimeKind {
    Continuous,
    Discrete { step: f64 },
}

impl TimeKind {
    pub fn is_discrete(&self) -> bool {
        matches!(self, TimeKind::Discrete { .. })
    }
}

/// Axis-aligned parameter box, optionally with bounds on the parameter rates.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
    rates: Option<(Vec<f64>, Vec<f64>)>,
}

impl ParameterBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension(format!(
                "box bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(Error::Config(format!(
                    "parameter {i} has invalid interval [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self {
            lower,
            upper,
            rates: None,
        })
    }

    /// The unit box `[0, 1]^ℓ`.
    pub fn unit(n_params: usize) -> Self {
        Self {
            lower: vec![0.0; n_params],
            upper: vec![1.0; n_params],
            rates: None,
        }
    }

    pub fn with_rates(mut self, rate_lower: Vec<f64>, rate_upper: Vec<f64>) -> Result<Self> {
        let l = self.n_params();
        if rate_lower.len() != l || rate_upper.len() != l {
            return Err(Error::Dimension("rate bounds must have one entry per parameter".into()));
        }
        if rate_lower.iter().zip(&rate_upper).any(|(lo, hi)| lo > hi) {
            return Err(Error::Config("rate lower bound exceeds upper bound".into()));
        }
        self.rates = Some((rate_lower, rate_upper));
        Ok(self)
    }

    pub fn without_rates(mut self) -> Self {
        self.rates = None;
        self
    }

    pub fn n_params(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn rates(&self) -> Option<(&[f64], &[f64])> {
        self.rates.as_ref().map(|(l, u)| (l.as_slice(), u.as_slice()))
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    pub fn is_unit(&self) -> bool {
        self.lower.iter().all(|&v| v == 0.0) && self.upper.iter().all(|&v| v == 1.0)
    }

    /// Checks membership with [`BOX_TOLERANCE`], naming the first violating coordinate.
    pub fn check(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(Error::Dimension(format!(
                "parameter vector has {} entries, box has {}",
                theta.len(),
                self.n_params()
            )));
        }
        for (index, &value) in theta.iter().enumerate() {
            let (lower, upper) = (self.lower[index], self.upper[index]);
            if !(value >= lower - BOX_TOLERANCE && value <= upper + BOX_TOLERANCE) {
                return Err(Error::Domain {
                    index,
                    value,
                    lower,
                    upper,
                });
            }
        }
        Ok(())
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        self.check(theta).is_ok()
    }

    /// All `2^ℓ` corners in lexicographic order (first coordinate most significant).
    pub fn vertices(&self) -> Result<Vec<Vec<f64>>> {
        corners(&self.lower, &self.upper)
    }

    /// Latin-hypercube samples, deterministic for a fixed seed.
    pub fn sample(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let l = self.n_params();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = vec![vec![0.0; l]; count];
        for i in 0..l {
            let mut strata: Vec<usize> = (0..count).collect();
            strata.shuffle(&mut rng);
            let width = self.upper[i] - self.lower[i];
            for (point, &stratum) in points.iter_mut().zip(&strata) {
                let u: f64 = rng.random();
                point[i] = self.lower[i] + width * (stratum as f64 + u) / count as f64;
            }
        }
        points
    }

    /// Distinct corners of the rate box (a single zero corner when rates are absent).
    pub fn rate_corners(&self) -> Result<Vec<Vec<f64>>> {
        match &self.rates {
            None => Ok(vec![vec![0.0; self.n_params()]]),
            Some((lo, hi)) => {
                let mut out = corners(lo, hi)?;
                out.dedup();
                Ok(out)
            }
        }
    }
}

fn corners(lower: &[f64], upper: &[f64]) -> Result<Vec<Vec<f64>>> {
    let l = lower.len();
    if l > MAX_VERTEX_PARAMS {
        return Err(Error::Capacity {
            n_params: l,
            limit: MAX_VERTEX_PARAMS,
        });
    }
    let mut out: Vec<Vec<f64>> = (0..1usize << l)
        .map(|j| {
            (0..l)
                .map(|i| {
                    if (j >> (l - 1 - i)) & 1 == 1 {
                        upper[i]
                    } else {
                        lower[i]
                    }
                })
                .collect()
        })
        .collect();
    // Degenerate intervals produce repeated corners; keep the first of each.
    let mut seen = Vec::with_capacity(out.len());
    out.retain(|v| {
        if seen.contains(v) {
            false
        } else {
            seen.push(v.clone());
            true
        }
    });
    Ok(out)
}

/// A linear time-invariant realization, typically an LPV model frozen at one θ.
#[derive(Clone, Debug, PartialEq)]
pub struct LtiRealization {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub time: TimeKind,
}

impl LtiRealization {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        time: TimeKind,
    ) -> Result<Self> {
        let n = a.nrows();
        let (m, q) = (b.ncols(), c.nrows());
        if a.ncols() != n || b.nrows() != n || c.ncols() != n || d.shape() != (q, m) {
            return Err(Error::Dimension(format!(
                "inconsistent realization shapes A {:?}, B {:?}, C {:?}, D {:?}",
                a.shape(),
                b.shape(),
                c.shape(),
                d.shape()
            )));
        }
        Ok(Self { a, b, c, d, time })
    }

    pub fn continuous(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self> {
        Self::new(a, b, c, d, TimeKind::Continuous)
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    /// Spectral abscissa (continuous) or spectral radius minus one (discrete);
    /// negative means stable.
    pub fn stability_margin(&self) -> Result<f64> {
        if self.n_states() == 0 {
            return Ok(f64::NEG_INFINITY);
        }
        match self.time {
            TimeKind::Continuous => linalg::spectral_abscissa(&self.a),
            TimeKind::Discrete { .. } => Ok(linalg::spectral_radius(&self.a)? - 1.0),
        }
    }

    pub fn ensure_stable(&self) -> Result<()> {
        let margin = self.stability_margin()?;
        if margin < 0.0 {
            Ok(())
        } else {
            Err(Error::Unstable(match self.time {
                TimeKind::Continuous => format!("spectral abscissa {margin:.3e} is not negative"),
                TimeKind::Discrete { .. } => {
                    format!("spectral radius {:.6} is not below one", margin + 1.0)
                }
            }))
        }
    }

    /// Difference `Σ − Σ_other` with block-diagonal dynamics.
    pub fn difference(&self, other: &Self) -> Result<Self> {
        if other.n_inputs() != self.n_inputs() || other.n_outputs() != self.n_outputs() {
            return Err(Error::Dimension("difference of incompatible realizations".into()));
        }
        let (n1, n2) = (self.n_states(), other.n_states());
        let (m, q) = (self.n_inputs(), self.n_outputs());
        let mut a = DMatrix::zeros(n1 + n2, n1 + n2);
        a.view_mut((0, 0), (n1, n1)).copy_from(&self.a);
        a.view_mut((n1, n1), (n2, n2)).copy_from(&other.a);
        let mut b = DMatrix::zeros(n1 + n2, m);
        b.view_mut((0, 0), (n1, m)).copy_from(&self.b);
        b.view_mut((n1, 0), (n2, m)).copy_from(&other.b);
        let mut c = DMatrix::zeros(q, n1 + n2);
        c.view_mut((0, 0), (q, n1)).copy_from(&self.c);
        c.view_mut((0, n1), (q, n2)).copy_from(&(-&other.c));
        Self::new(a, b, c, &self.d - &other.d, self.time)
    }

    /// The dual realization `(Aᵀ, Cᵀ, Bᵀ, Dᵀ)`.
    pub fn dual(&self) -> Self {
        Self {
            a: self.a.transpose(),
            b: self.c.transpose(),
            c: self.b.transpose(),
            d: self.d.transpose(),
            time: self.time,
        }
    }
}

/// Column-stacked coefficient matrices, `X^θ = [X_0; X_1; …; X_ℓ]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedMatrices {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

/// Orthonormal-column parameter projection `T_r ∈ R^{(ℓ+1)×n_r}`.
///
/// The projection acts in a parameter chart centred at `center`; the default
/// chart (centre zero) is the model's own `[1, θ]` coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterProjection {
    t_r: DMatrix<f64>,
    center: Vec<f64>,
}

impl ParameterProjection {
    pub fn new(t_r: DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = t_r.shape();
        if rows == 0 {
            return Err(Error::Dimension("projection needs at least the constant row".into()));
        }
        if cols == 0 || cols > rows {
            return Err(Error::Dimension(format!(
                "projection must have between 1 and {rows} columns, got {cols}"
            )));
        }
        let deviation = linalg::orthonormality_defect(&t_r);
        if deviation > ORTHONORMAL_TOLERANCE {
            return Err(Error::NotOrthonormal { deviation });
        }
        Ok(Self {
            t_r,
            center: vec![0.0; rows - 1],
        })
    }

    /// Orthonormalises the columns of `raw` and wraps the result.
    pub fn from_span(raw: &DMatrix<f64>) -> Result<Self> {
        Self::new(linalg::orthonormalize(raw))
    }

    pub fn identity(n_params: usize) -> Self {
        Self {
            t_r: DMatrix::identity(n_params + 1, n_params + 1),
            center: vec![0.0; n_params],
        }
    }

    /// Keeps only the constant direction `e_0`.
    pub fn constant_only(n_params: usize) -> Self {
        Self::axes(n_params, &[0]).expect("axis 0 always exists")
    }

    /// Projection onto a set of coordinate axes of the `(ℓ+1)`-chart.
    pub fn axes(n_params: usize, axes: &[usize]) -> Result<Self> {
        let mut t = DMatrix::zeros(n_params + 1, axes.len());
        for (col, &axis) in axes.iter().enumerate() {
            if axis > n_params {
                return Err(Error::Dimension(format!("axis {axis} exceeds {n_params}")));
            }
            t[(axis, col)] = 1.0;
        }
        Self::new(t)
    }

    pub fn with_center(mut self, center: Vec<f64>) -> Result<Self> {
        if center.len() != self.n_params() {
            return Err(Error::Dimension("projection chart centre has wrong length".into()));
        }
        self.center = center;
        Ok(self)
    }

    pub fn t_r(&self) -> &DMatrix<f64> {
        &self.t_r
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn n_r(&self) -> usize {
        self.t_r.ncols()
    }

    pub fn n_params(&self) -> usize {
        self.t_r.nrows() - 1
    }

    /// `T_r T_rᵀ`.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.t_r * self.t_r.transpose()
    }

    /// Matrix `M` acting on coefficient blocks, `X'_j = Σ_i M_ji X_i`,
    /// that realises the projection in the original chart.
    pub fn block_map(&self) -> DMatrix<f64> {
        let shift = chart_shift(&self.center);
        let unshift = chart_shift(&self.center.iter().map(|c| -c).collect::<Vec<_>>());
        unshift * self.projector() * shift
    }
}

/// Block map that re-expresses coefficients in the chart `θ' = θ − c`.
pub fn chart_shift(center: &[f64]) -> DMatrix<f64> {
    let k = center.len() + 1;
    let mut m = DMatrix::identity(k, k);
    for (i, &c) in center.iter().enumerate() {
        m[(0, i + 1)] = c;
    }
    m
}

/// Result of the pointwise stability guard.
#[derive(Clone, Debug)]
pub struct StabilityReport {
    pub stable: bool,
    /// Spectral abscissa (continuous) or radius minus one (discrete) at the worst point.
    pub worst_margin: f64,
    pub worst_theta: Vec<f64>,
    pub points_checked: usize,
}

/// Affine LPV model `X(θ) = X_0 + Σ θ_i X_i` for `X ∈ {A, B, C, D}`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineLpvModel {
    a: Vec<DMatrix<f64>>,
    b: Vec<DMatrix<f64>>,
    c: Vec<DMatrix<f64>>,
    d: Vec<DMatrix<f64>>,
    theta_box: ParameterBox,
    time: TimeKind,
    original_box: Option<ParameterBox>,
}

impl AffineLpvModel {
    pub fn new(
        a: Vec<DMatrix<f64>>,
        b: Vec<DMatrix<f64>>,
        c: Vec<DMatrix<f64>>,
        d: Vec<DMatrix<f64>>,
        theta_box: ParameterBox,
        time: TimeKind,
    ) -> Result<Self> {
        let k = theta_box.n_params() + 1;
        for (name, blocks) in [("A", &a), ("B", &b), ("C", &c), ("D", &d)] {
            if blocks.len() != k {
                return Err(Error::Dimension(format!(
                    "{name} has {} blocks, expected {k}",
                    blocks.len()
                )));
            }
        }
        let n = a[0].nrows();
        let m = b[0].ncols();
        let q = c[0].nrows();
        for j in 0..k {
            if a[j].shape() != (n, n)
                || b[j].shape() != (n, m)
                || c[j].shape() != (q, n)
                || d[j].shape() != (q, m)
            {
                return Err(Error::Dimension(format!(
                    "coefficient block {j} does not match (n, m, q) = ({n}, {m}, {q})"
                )));
            }
        }
        if let TimeKind::Discrete { step } = time {
            if !(step > 0.0) {
                return Err(Error::Config("discrete step must be positive".into()));
            }
        }
        Ok(Self {
            a,
            b,
            c,
            d,
            theta_box,
            time,
            original_box: None,
        })
    }

    /// Parameter-independent model with an empty parameter vector.
    pub fn from_lti(sys: &LtiRealization) -> Self {
        Self {
            a: vec![sys.a.clone()],
            b: vec![sys.b.clone()],
            c: vec![sys.c.clone()],
            d: vec![sys.d.clone()],
            theta_box: ParameterBox::unit(0),
            time: sys.time,
            original_box: None,
        }
    }

    pub fn n_states(&self) -> usize {
        self.a[0].nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b[0].ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c[0].nrows()
    }

    pub fn n_params(&self) -> usize {
        self.theta_box.n_params()
    }

    pub fn a_blocks(&self) -> &[DMatrix<f64>] {
        &self.a
    }

    pub fn b_blocks(&self) -> &[DMatrix<f64>] {
        &self.b
    }

    pub fn c_blocks(&self) -> &[DMatrix<f64>] {
        &self.c
    }

    pub fn d_blocks(&self) -> &[DMatrix<f64>] {
        &self.d
    }

    pub fn theta_box(&self) -> &ParameterBox {
        &self.theta_box
    }

    /// Box of the model before normalisation, when it was rescaled on load.
    pub fn original_box(&self) -> Option<&ParameterBox> {
        self.original_box.as_ref()
    }

    pub fn time(&self) -> TimeKind {
        self.time
    }

    pub fn with_box(mut self, theta_box: ParameterBox) -> Result<Self> {
        if theta_box.n_params() != self.n_params() {
            return Err(Error::Dimension("replacement box has wrong dimension".into()));
        }
        self.theta_box = theta_box;
        Ok(self)
    }

    /// Realization at `θ`, which must lie in the parameter box.
    pub fn evaluate_at(&self, theta: &[f64]) -> Result<LtiRealization> {
        self.theta_box.check(theta)?;
        Ok(self.evaluate_unchecked(theta))
    }

    pub(crate) fn evaluate_unchecked(&self, theta: &[f64]) -> LtiRealization {
        let mut weights = Vec::with_capacity(theta.len() + 1);
        weights.push(1.0);
        weights.extend_from_slice(theta);
        self.combine(&weights)
    }

    /// Realization for an arbitrary weight row `w ∈ R^{ℓ+1}`: `X = Σ_j w_j X_j`.
    /// This is how transformed models are evaluated at `θ̃ = [1, θ] T`.
    pub fn evaluate_linear(&self, weights: &[f64]) -> Result<LtiRealization> {
        if weights.len() != self.n_params() + 1 {
            return Err(Error::Dimension(format!(
                "weight row has {} entries, expected {}",
                weights.len(),
                self.n_params() + 1
            )));
        }
        Ok(self.combine(weights))
    }

    fn combine(&self, w: &[f64]) -> LtiRealization {
        LtiRealization {
            a: weighted_sum(&self.a, w),
            b: weighted_sum(&self.b, w),
            c: weighted_sum(&self.c, w),
            d: weighted_sum(&self.d, w),
            time: self.time,
        }
    }

    pub fn stacked(&self) -> StackedMatrices {
        StackedMatrices {
            a: stack(&self.a),
            b: stack(&self.b),
            c: stack(&self.c),
            d: stack(&self.d),
        }
    }

    pub fn from_stacked(
        stacked: &StackedMatrices,
        theta_box: ParameterBox,
        time: TimeKind,
    ) -> Result<Self> {
        let k = theta_box.n_params() + 1;
        let n = stacked.a.ncols();
        let q = stacked.c.nrows() / k.max(1);
        let split = |m: &DMatrix<f64>, rows: usize| -> Result<Vec<DMatrix<f64>>> {
            if m.nrows() != rows * k {
                return Err(Error::Dimension("stacked matrix height is not a block multiple".into()));
            }
            Ok((0..k).map(|j| m.rows(j * rows, rows).clone_owned()).collect())
        };
        Self::new(
            split(&stacked.a, n)?,
            split(&stacked.b, n)?,
            split(&stacked.c, q)?,
            split(&stacked.d, q)?,
            theta_box,
            time,
        )
    }

    /// New model with blocks `X'_j = Σ_i M_ji X_i`.
    pub fn mix_blocks(&self, m: &DMatrix<f64>) -> Result<Self> {
        let k = self.n_params() + 1;
        if m.shape() != (k, k) {
            return Err(Error::Dimension(format!(
                "block map is {:?}, expected {k}x{k}",
                m.shape()
            )));
        }
        let mix = |blocks: &[DMatrix<f64>]| -> Vec<DMatrix<f64>> {
            (0..k)
                .map(|j| {
                    let row: Vec<f64> = (0..k).map(|i| m[(j, i)]).collect();
                    weighted_sum(blocks, &row)
                })
                .collect()
        };
        Ok(Self {
            a: mix(&self.a),
            b: mix(&self.b),
            c: mix(&self.c),
            d: mix(&self.d),
            theta_box: self.theta_box.clone(),
            time: self.time,
            original_box: self.original_box.clone(),
        })
    }

    /// Applies an orthonormal `T`: the returned stacks are `(Tᵀ ⊗ I)·X^θ`, and
    /// `evaluate_linear([1, θ] T)` reproduces the original `X(θ)`.
    pub fn apply_transformation(&self, t: &DMatrix<f64>) -> Result<Self> {
        let k = self.n_params() + 1;
        if t.shape() != (k, k) {
            return Err(Error::Dimension(format!(
                "transformation is {:?}, expected {k}x{k}",
                t.shape()
            )));
        }
        let identity = DMatrix::identity(k, k);
        let deviation = (t * t.transpose() - &identity)
            .norm()
            .max((t.transpose() * t - &identity).norm());
        if deviation > TRANSFORM_TOLERANCE {
            return Err(Error::NotOrthonormal { deviation });
        }
        if *t == identity {
            return Ok(self.clone());
        }
        self.mix_blocks(&t.transpose())
    }

    /// Reduced-parameter model, expressed as an affine model in the original θ.
    pub fn apply_projection(&self, proj: &ParameterProjection) -> Result<Self> {
        if proj.n_params() != self.n_params() {
            return Err(Error::Dimension(format!(
                "projection is for {} parameters, model has {}",
                proj.n_params(),
                self.n_params()
            )));
        }
        self.mix_blocks(&proj.block_map())
    }

    /// Difference system `Σ(θ) − Σ_other(θ)` with block-diagonal dynamics.
    pub fn difference(&self, other: &Self) -> Result<Self> {
        if other.n_params() != self.n_params()
            || other.n_inputs() != self.n_inputs()
            || other.n_outputs() != self.n_outputs()
        {
            return Err(Error::Dimension("difference of incompatible models".into()));
        }
        let (n1, n2) = (self.n_states(), other.n_states());
        let (m, q) = (self.n_inputs(), self.n_outputs());
        let k = self.n_params() + 1;
        let mut a = Vec::with_capacity(k);
        let mut b = Vec::with_capacity(k);
        let mut c = Vec::with_capacity(k);
        let mut d = Vec::with_capacity(k);
        for j in 0..k {
            let mut aj = DMatrix::zeros(n1 + n2, n1 + n2);
            aj.view_mut((0, 0), (n1, n1)).copy_from(&self.a[j]);
            aj.view_mut((n1, n1), (n2, n2)).copy_from(&other.a[j]);
            let mut bj = DMatrix::zeros(n1 + n2, m);
            bj.view_mut((0, 0), (n1, m)).copy_from(&self.b[j]);
            bj.view_mut((n1, 0), (n2, m)).copy_from(&other.b[j]);
            let mut cj = DMatrix::zeros(q, n1 + n2);
            cj.view_mut((0, 0), (q, n1)).copy_from(&self.c[j]);
            cj.view_mut((0, n1), (q, n2)).copy_from(&(-&other.c[j]));
            a.push(aj);
            b.push(bj);
            c.push(cj);
            d.push(&self.d[j] - &other.d[j]);
        }
        let mut out = Self::new(a, b, c, d, self.theta_box.clone(), self.time)?;
        out.original_box = self.original_box.clone();
        Ok(out)
    }

    /// Error system `Σ(θ) − Σ(θ̃_r)` for a parameter projection.
    pub fn error_system(&self, proj: &ParameterProjection) -> Result<Self> {
        self.difference(&self.apply_projection(proj)?)
    }

    /// Rescales the parameter box to `[0, 1]^ℓ`, folding offsets into block 0.
    /// The previous box is retained as [`Self::original_box`].
    pub fn normalized(&self) -> Self {
        if self.theta_box.is_unit() {
            return self.clone();
        }
        let l = self.n_params();
        let lo = self.theta_box.lower();
        let hi = self.theta_box.upper();
        // θ_i = lo_i + (hi_i − lo_i) s_i
        let mut map = DMatrix::zeros(l + 1, l + 1);
        map[(0, 0)] = 1.0;
        for i in 0..l {
            map[(0, i + 1)] = lo[i];
            map[(i + 1, i + 1)] = hi[i] - lo[i];
        }
        let mut out = self.mix_blocks(&map).expect("square map of matching size");
        let mut unit = ParameterBox::unit(l);
        if let Some((rl, ru)) = self.theta_box.rates() {
            let scale = |v: &[f64]| -> Vec<f64> {
                v.iter()
                    .enumerate()
                    .map(|(i, r)| {
                        let w = hi[i] - lo[i];
                        if w > 0.0 {
                            r / w
                        } else {
                            0.0
                        }
                    })
                    .collect()
            };
            unit = unit
                .with_rates(scale(rl), scale(ru))
                .expect("scaled rates keep their order");
        }
        out.theta_box = unit;
        out.original_box = Some(self.original_box.clone().unwrap_or_else(|| self.theta_box.clone()));
        out
    }

    /// Dual model `(Aᵀ, Cᵀ, Bᵀ, Dᵀ)` block by block.
    pub fn dual(&self) -> Self {
        let tr = |v: &[DMatrix<f64>]| v.iter().map(|m| m.transpose()).collect::<Vec<_>>();
        Self {
            a: tr(&self.a),
            b: tr(&self.c),
            c: tr(&self.b),
            d: tr(&self.d),
            theta_box: self.theta_box.clone(),
            time: self.time,
            original_box: self.original_box.clone(),
        }
    }

    /// True when every block of parameter `i` (1-based) is zero.
    pub fn parameter_is_inert(&self, i: usize) -> bool {
        [&self.a, &self.b, &self.c, &self.d]
            .iter()
            .all(|blocks| blocks[i].iter().all(|&v| v == 0.0))
    }

    /// Pointwise stability at all vertices plus seeded interior samples.
    pub fn check_stability(&self, interior_samples: usize, seed: u64) -> Result<StabilityReport> {
        let mut points = self.theta_box.vertices()?;
        points.extend(self.theta_box.sample(interior_samples, seed));
        let mut worst = (f64::NEG_INFINITY, Vec::new());
        for theta in &points {
            let margin = self.evaluate_unchecked(theta).stability_margin()?;
            if margin > worst.0 {
                worst = (margin, theta.clone());
            }
        }
        Ok(StabilityReport {
            stable: worst.0 < 0.0,
            worst_margin: worst.0,
            worst_theta: worst.1,
            points_checked: points.len(),
        })
    }

    /// Stability guard with the default sample budget; errors when any point is unstable.
    pub fn ensure_stable(&self) -> Result<StabilityReport> {
        let report = self.check_stability(STABILITY_SAMPLES, 0)?;
        if report.stable {
            Ok(report)
        } else {
            Err(Error::Unstable(format!(
                "margin {:.3e} at θ = {:?}",
                report.worst_margin, report.worst_theta
            )))
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile::from(self))?)
    }

    /// Parses a model and normalises its box to `[0, 1]^ℓ`.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        Ok(file.into_model()?.normalized())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn weighted_sum(blocks: &[DMatrix<f64>], w: &[f64]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(blocks[0].nrows(), blocks[0].ncols());
    for (block, &wj) in blocks.iter().zip(w) {
        if wj != 0.0 {
            out.zip_apply(block, |o, x| *o += wj * x);
        }
    }
    out
}

fn stack(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks[0].nrows();
    let mut out = DMatrix::zeros(rows * blocks.len(), blocks[0].ncols());
    for (j, block) in blocks.iter().enumerate() {
        out.rows_mut(j * rows, rows).copy_from(block);
    }
    out
}

#[derive(Serialize, Deserialize)]
struct BoxFile {
    lower: Vec<f64>,
    upper: Vec<f64>,
    rate_lower: Option<Vec<f64>>,
    rate_upper: Option<Vec<f64>>,
}

impl From<&ParameterBox> for BoxFile {
    fn from(b: &ParameterBox) -> Self {
        Self {
            lower: b.lower.clone(),
            upper: b.upper.clone(),
            rate_lower: b.rates.as_ref().map(|r| r.0.clone()),
            rate_upper: b.rates.as_ref().map(|r| r.1.clone()),
        }
    }
}

impl BoxFile {
    fn into_box(self) -> Result<ParameterBox> {
        let b = ParameterBox::new(self.lower, self.upper)?;
        match (self.rate_lower, self.rate_upper) {
            (None, None) => Ok(b),
            (Some(lo), Some(hi)) => b.with_rates(lo, hi),
            _ => Err(Error::Config("rate bounds must be given together".into())),
        }
    }
}

type Matrix = Vec<Vec<f64>>;

/// On-disk model layout; matrices are row-major.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    n: usize,
    m: usize,
    q: usize,
    l: usize,
    time: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    step: Option<f64>,
    #[serde(rename = "A")]
    a: Vec<Matrix>,
    #[serde(rename = "B")]
    b: Vec<Matrix>,
    #[serde(rename = "C")]
    c: Vec<Matrix>,
    #[serde(rename = "D")]
    d: Vec<Matrix>,
    theta: BoxFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    original_theta: Option<BoxFile>,
}

impl From<&AffineLpvModel> for ModelFile {
    fn from(model: &AffineLpvModel) -> Self {
        let rows = |v: &[DMatrix<f64>]| v.iter().map(to_rows).collect::<Vec<_>>();
        let (time, step) = match model.time {
            TimeKind::Continuous => ("continuous".to_string(), None),
            TimeKind::Discrete { step } => ("discrete".to_string(), Some(step)),
        };
        Self {
            n: model.n_states(),
            m: model.n_inputs(),
            q: model.n_outputs(),
            l: model.n_params(),
            time,
            step,
            a: rows(&model.a),
            b: rows(&model.b),
            c: rows(&model.c),
            d: rows(&model.d),
            theta: BoxFile::from(&model.theta_box),
            original_theta: model.original_box.as_ref().map(BoxFile::from),
        }
    }
}

impl ModelFile {
    fn into_model(self) -> Result<AffineLpvModel> {
        let time = match (self.time.as_str(), self.step) {
            ("continuous", _) => TimeKind::Continuous,
            ("discrete", Some(step)) => TimeKind::Discrete { step },
            ("discrete", None) => {
                return Err(Error::Config("discrete model needs a \"step\"".into()))
            }
            (other, _) => return Err(Error::Config(format!("unknown time kind {other:?}"))),
        };
        let parse = |v: &[Matrix], rows: usize, cols: usize, name: &str| -> Result<Vec<DMatrix<f64>>> {
            v.iter()
                .map(|m| {
                    let mat = from_rows(m, Some(cols))?;
                    if mat.shape() != (rows, cols) && !(rows == 0 || cols == 0) {
                        return Err(Error::Dimension(format!(
                            "{name} block is {:?}, expected ({rows}, {cols})",
                            mat.shape()
                        )));
                    }
                    Ok(if rows == 0 || cols == 0 {
                        DMatrix::zeros(rows, cols)
                    } else {
                        mat
                    })
                })
                .collect()
        };
        let theta_box = self.theta.into_box()?;
        if theta_box.n_params() != self.l {
            return Err(Error::Dimension("\"l\" disagrees with the parameter box".into()));
        }
        let mut model = AffineLpvModel::new(
            parse(&self.a, self.n, self.n, "A")?,
            parse(&self.b, self.n, self.m, "B")?,
            parse(&self.c, self.q, self.n, "C")?,
            parse(&self.d, self.q, self.m, "D")?,
            theta_box,
            time,
        )?;
        model.original_box = self.original_theta.map(BoxFile::into_box).transpose()?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> AffineLpvModel {
        let a0 = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
        let a1 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        AffineLpvModel::new(
            vec![a0, a1],
            vec![DMatrix::from_element(2, 1, 1.0), DMatrix::zeros(2, 1)],
            vec![DMatrix::from_element(1, 2, 1.0), DMatrix::zeros(1, 2)],
            vec![DMatrix::zeros(1, 1), DMatrix::zeros(1, 1)],
            ParameterBox::unit(1),
            TimeKind::Continuous,
        )
        .unwrap()
    }

    #[test]
    fn evaluate_affine_sum() {
        let sys = toy().evaluate_at(&[0.5]).unwrap();
        assert_eq!(sys.a, DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -2.0]));
    }

    #[test]
    fn evaluate_at_zero_is_nominal() {
        let model = toy();
        let sys = model.evaluate_at(&[0.0]).unwrap();
        assert_eq!(sys.a, model.a_blocks()[0]);
        assert_eq!(sys.b, model.b_blocks()[0]);
    }

    #[test]
    fn out_of_box_names_coordinate() {
        match toy().evaluate_at(&[1.5]) {
            Err(Error::Domain { index, value, .. }) => {
                assert_eq!(index, 0);
                assert_eq!(value, 1.5);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(toy().evaluate_at(&[1.0 + 5e-10]).is_ok());
    }

    #[test]
    fn vertex_enumeration() {
        let v = ParameterBox::unit(2).vertices().unwrap();
        assert_eq!(v, vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]]);
        let v5 = ParameterBox::unit(5).vertices().unwrap();
        assert_eq!(v5.len(), 32);
        assert!(v5.iter().flatten().all(|&x| x == 0.0 || x == 1.0));
        assert_eq!(ParameterBox::unit(0).vertices().unwrap(), vec![Vec::<f64>::new()]);
        assert!(matches!(
            ParameterBox::unit(25).vertices(),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn latin_hypercube_sampling() {
        let b = ParameterBox::unit(1);
        let s1 = b.sample(3, 7);
        assert_eq!(s1, b.sample(3, 7));
        assert!(s1.iter().all(|p| b.contains(p)));
        let big = ParameterBox::unit(3).sample(1000, 1);
        for i in 0..3 {
            let mean: f64 = big.iter().map(|p| p[i]).sum::<f64>() / 1000.0;
            assert!((mean - 0.5).abs() < 0.1);
        }
    }

    #[test]
    fn identity_transformation_is_bitwise_noop() {
        let model = toy();
        assert_eq!(model.apply_transformation(&DMatrix::identity(2, 2)).unwrap(), model);
    }

    #[test]
    fn non_orthonormal_transformation_rejected() {
        let t = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(matches!(
            toy().apply_transformation(&t),
            Err(Error::NotOrthonormal { .. })
        ));
    }

    #[test]
    fn stacked_round_trip() {
        let model = toy();
        let back =
            AffineLpvModel::from_stacked(&model.stacked(), model.theta_box().clone(), model.time())
                .unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn constant_projection_gives_nominal_model() {
        let model = toy();
        let reduced = model.apply_projection(&ParameterProjection::constant_only(1)).unwrap();
        assert_eq!(reduced.a_blocks()[0], model.a_blocks()[0]);
        assert!(reduced.parameter_is_inert(1));
    }

    #[test]
    fn projection_too_wide_is_rejected() {
        assert!(matches!(
            ParameterProjection::new(DMatrix::identity(2, 3)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn normalization_folds_offsets() {
        let model = toy()
            .with_box(ParameterBox::new(vec![2.0], vec![4.0]).unwrap())
            .unwrap();
        let unit = model.normalized();
        assert!(unit.theta_box().is_unit());
        let a = model.evaluate_at(&[3.0]).unwrap().a;
        let b = unit.evaluate_at(&[0.5]).unwrap().a;
        assert!((a - b).norm() < 1e-15);
        assert_eq!(unit.original_box().unwrap().lower(), &[2.0]);
    }

    #[test]
    fn json_round_trip() {
        let model = toy();
        let back = AffineLpvModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn rate_bounds_must_pair() {
        let text = r#"{"n":1,"m":1,"q":1,"l":1,"time":"continuous",
            "A":[[[-1.0]],[[0.0]]],"B":[[[1.0]],[[0.0]]],"C":[[[1.0]],[[0.0]]],"D":[[[0.0]],[[0.0]]],
            "theta":{"lower":[0.0],"upper":[1.0],"rate_lower":[-1.0],"rate_upper":null}}"#;
        assert!(matches!(AffineLpvModel::from_json(text), Err(Error::Config(_))));
    }

    #[test]
    fn stability_guard() {
        assert!(toy().ensure_stable().is_ok());
        let mut bad = toy();
        bad.a[1] = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 0.0]);
        assert!(matches!(bad.ensure_stable(), Err(Error::Unstable(_))));
    }
}
