//! Parameter sensitivities of the transfer function and of sampled outputs,
//! their covariance-like matrices, and the projections derived from them.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};
use crate::model::{AffineLpvModel, LtiRealization, ParameterProjection, TimeKind};
use crate::norms::{product_grid, EvalSet};

/// Samples per slowest time constant in the default sampling step.
pub const STEPS_PER_TIME_CONSTANT: f64 = 50.0;
/// Horizon of the default `k_max`, in slowest time constants.
pub const HORIZON_TIME_CONSTANTS: f64 = 5.0;
/// Relative gap under which singular values count as tied.
pub const TIE_TOLERANCE: f64 = 1e-10;

fn evaluation_point(model: &AffineLpvModel, freq: f64) -> Complex64 {
    match model.time() {
        TimeKind::Continuous => Complex64::new(0.0, freq),
        TimeKind::Discrete { step } => Complex64::from_polar(1.0, freq * step),
    }
}

/// `H(θ, λ) = D(θ) + C(θ)(λI − A(θ))⁻¹B(θ)` with `λ = jω`, or `e^{jωh}` for
/// discrete models.
pub fn transfer_function(model: &AffineLpvModel, theta: &[f64], freq: f64) -> Result<CMatrix> {
    let sys = model.evaluate_at(theta)?;
    let lambda = evaluation_point(model, freq);
    linalg::frequency_response(&sys.a, &sys.b, &sys.c, &sys.d, lambda)
        .ok_or_else(|| Error::Singular(format!("λ = {lambda} is an eigenvalue of A(θ)")))
}

/// The `4n`-state realization of `∂H/∂θ_i`, itself affine in θ.
///
/// States are ordered `[x_C, x_A, x_B', x_B]`: the first copy feeds `C_i`, the
/// middle pair chains `A_i` between two resolvents, and the last copy is driven
/// by `B_i`.
#[derive(Clone, Debug)]
pub struct SensitivityRealization {
    param_index: usize,
    model: AffineLpvModel,
}

impl SensitivityRealization {
    /// 1-based parameter index.
    pub fn param_index(&self) -> usize {
        self.param_index
    }

    pub fn model(&self) -> &AffineLpvModel {
        &self.model
    }

    pub fn evaluate_at(&self, theta: &[f64]) -> Result<LtiRealization> {
        self.model.evaluate_at(theta)
    }

    pub fn transfer(&self, theta: &[f64], freq: f64) -> Result<CMatrix> {
        transfer_function(&self.model, theta, freq)
    }
}

struct Derivative<'a> {
    a: &'a DMatrix<f64>,
    b: &'a DMatrix<f64>,
    c: &'a DMatrix<f64>,
    d: &'a DMatrix<f64>,
}

/// Block matrices of the sensitivity realization for one coefficient set.
/// `derivative` is `None` for the blocks multiplying `θ_k`.
fn sensitivity_blocks(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    derivative: Option<&Derivative>,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (n, m, q) = (a.nrows(), b.ncols(), c.nrows());
    let mut aa = DMatrix::zeros(4 * n, 4 * n);
    for k in 0..4 {
        aa.view_mut((k * n, k * n), (n, n)).copy_from(a);
    }
    let mut bb = DMatrix::zeros(4 * n, m);
    bb.view_mut((0, 0), (n, m)).copy_from(b);
    bb.view_mut((2 * n, 0), (n, m)).copy_from(b);
    let mut cc = DMatrix::zeros(q, 4 * n);
    cc.view_mut((0, n), (q, n)).copy_from(c);
    cc.view_mut((0, 3 * n), (q, n)).copy_from(c);
    if let Some(der) = derivative {
        aa.view_mut((n, 2 * n), (n, n)).copy_from(der.a);
        bb.view_mut((3 * n, 0), (n, m)).copy_from(der.b);
        cc.view_mut((0, 0), (q, n)).copy_from(der.c);
    }
    (aa, bb, cc)
}

pub fn build_sensitivity_realization(model: &AffineLpvModel, i: usize) -> Result<SensitivityRealization> {
    let l = model.n_params();
    if i == 0 || i > l {
        return Err(Error::Dimension(format!("parameter index {i} must lie in 1..={l}")));
    }
    let (ab, bb, cb, db) = (model.a_blocks(), model.b_blocks(), model.c_blocks(), model.d_blocks());
    let der = Derivative { a: &ab[i], b: &bb[i], c: &cb[i], d: &db[i] };
    let mut a = Vec::with_capacity(l + 1);
    let mut b = Vec::with_capacity(l + 1);
    let mut c = Vec::with_capacity(l + 1);
    let mut d = Vec::with_capacity(l + 1);
    for k in 0..=l {
        let (ak, bk, ck) = sensitivity_blocks(&ab[k], &bb[k], &cb[k], (k == 0).then_some(&der));
        a.push(ak);
        b.push(bk);
        c.push(ck);
        d.push(if k == 0 { der.d.clone() } else { DMatrix::zeros(db[0].nrows(), db[0].ncols()) });
    }
    let model = AffineLpvModel::new(a, b, c, d, model.theta_box().clone(), model.time())?;
    Ok(SensitivityRealization { param_index: i, model })
}

/// `∂H/∂θ_i(θ, ω)` for every parameter, sharing one factorization of `λI − A(θ)`:
/// `D_i + C_i R B + C R A_i R B + C R B_i` with `R = (λI − A)⁻¹`.
pub fn sensitivity_responses(model: &AffineLpvModel, theta: &[f64], freq: f64) -> Result<Vec<CMatrix>> {
    let sys = model.evaluate_at(theta)?;
    sensitivity_responses_at(model, &sys, evaluation_point(model, freq))
}

fn sensitivity_responses_at(model: &AffineLpvModel, sys: &LtiRealization, lambda: Complex64) -> Result<Vec<CMatrix>> {
    let n = sys.n_states();
    let mut shifted = -linalg::to_complex(&sys.a);
    for k in 0..n {
        shifted[(k, k)] += lambda;
    }
    let lu = shifted.lu();
    let singular = || Error::Singular(format!("λ = {lambda} is an eigenvalue of A(θ)"));
    let rb = lu.solve(&linalg::to_complex(&sys.b)).ok_or_else(singular)?;
    // C R = (Rᵀ Cᵀ)ᵀ; solve with the transposed system.
    let cr = shifted_transpose_solve(&sys.a, lambda, &sys.c).ok_or_else(singular)?;
    Ok((1..=model.n_params())
        .map(|i| {
            let ai = linalg::to_complex(&model.a_blocks()[i]);
            let bi = linalg::to_complex(&model.b_blocks()[i]);
            let ci = linalg::to_complex(&model.c_blocks()[i]);
            linalg::to_complex(&model.d_blocks()[i]) + &ci * &rb + &cr * (ai * &rb) + &cr * bi
        })
        .collect())
}

/// `C (λI − A)⁻¹` through `(λI − Aᵀ) Xᵀ = Cᵀ`.
fn shifted_transpose_solve(a: &DMatrix<f64>, lambda: Complex64, c: &DMatrix<f64>) -> Option<CMatrix> {
    let n = a.nrows();
    let mut shifted = -linalg::to_complex(&a.transpose());
    for k in 0..n {
        shifted[(k, k)] += lambda;
    }
    Some(shifted.lu().solve(&linalg::to_complex(&c.transpose()))?.transpose())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKind {
    Tscm,
    Scm,
}

/// Symmetric, entrywise nonnegative `ℓ×ℓ` matrix of worst-case sensitivity cross gains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceMatrix {
    pub kind: CovarianceKind,
    pub entries: Vec<Vec<f64>>,
    /// Chart centre for derived projections (the box centre).
    pub center: Vec<f64>,
    pub evaluation_set: String,
    pub points: usize,
    /// Frequency grid (rad/s) for the transfer-function variant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequencies: Option<Vec<f64>>,
    /// Sampling step and horizon for the time-domain variant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_max: Option<usize>,
}

impl CovarianceMatrix {
    pub fn matrix(&self) -> DMatrix<f64> {
        let l = self.entries.len();
        DMatrix::from_fn(l, l, |i, j| self.entries[i][j])
    }

    pub fn n_params(&self) -> usize {
        self.entries.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cov: Self = serde_json::from_str(text)?;
        let l = cov.entries.len();
        if cov.entries.iter().any(|r| r.len() != l) || cov.center.len() != l {
            return Err(Error::Dimension("covariance entries must be square and match the centre".into()));
        }
        Ok(cov)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn symmetric_rows(l: usize, upper: &[(usize, usize, f64)]) -> Vec<Vec<f64>> {
    let mut rows = vec![vec![0.0; l]; l];
    for &(i, j, v) in upper {
        rows[i][j] = v;
        rows[j][i] = v;
    }
    rows
}

fn pairs(l: usize) -> Vec<(usize, usize)> {
    (0..l).flat_map(|i| (i..l).map(move |j| (i, j))).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TscmConfig {
    pub eval_set: EvalSet,
    /// Frequencies in rad/s; discrete models drop those above the Nyquist rate.
    pub frequencies: Vec<f64>,
}

impl Default for TscmConfig {
    fn default() -> Self {
        Self {
            eval_set: EvalSet::default(),
            frequencies: product_grid(),
        }
    }
}

/// `Π_ij = max_{θ, ω} σ_max(Ĥ_i(θ, ω)ᴴ Ĥ_j(θ, ω))`.
///
/// On the imaginary axis (or unit circle) the adjoint product system equals the
/// pointwise product of frequency responses, so the entries are computed from
/// `Ĥ_i` directly; quadratic θ-dependence is covered by evaluating at every
/// point of the evaluation set.
pub fn tscm(model: &AffineLpvModel, config: &TscmConfig) -> Result<CovarianceMatrix> {
    let l = model.n_params();
    let points = config.eval_set.points(model.theta_box())?;
    let frequencies: Vec<f64> = match model.time() {
        TimeKind::Continuous => config.frequencies.clone(),
        TimeKind::Discrete { step } => config
            .frequencies
            .iter()
            .copied()
            .filter(|w| *w * step <= std::f64::consts::PI)
            .collect(),
    };
    if frequencies.is_empty() {
        return Err(Error::Config("no frequencies to evaluate".into()));
    }
    let index = pairs(l);
    let per_point = points
        .par_iter()
        .map(|theta| {
            let sys = model.evaluate_at(theta)?;
            sys.ensure_stable()?;
            let mut best = vec![0.0f64; index.len()];
            for &w in &frequencies {
                let h = sensitivity_responses_at(model, &sys, evaluation_point(model, w))?;
                for (slot, &(i, j)) in best.iter_mut().zip(&index) {
                    let s = linalg::spectral_norm_complex(&(h[i].adjoint() * &h[j]));
                    *slot = slot.max(s);
                }
            }
            Ok(best)
        })
        .collect::<Result<Vec<_>>>()?;
    let upper: Vec<(usize, usize, f64)> = index
        .iter()
        .enumerate()
        .map(|(k, &(i, j))| (i, j, per_point.iter().map(|b| b[k]).fold(0.0, f64::max)))
        .collect();
    Ok(CovarianceMatrix {
        kind: CovarianceKind::Tscm,
        entries: symmetric_rows(l, &upper),
        center: model.theta_box().center(),
        evaluation_set: config.eval_set.describe(),
        points: points.len(),
        frequencies: Some(frequencies),
        step: None,
        k_max: None,
    })
}

/// Outputs `y(0..=K)` of a discrete realization by state recursion.
pub fn simulate_discrete(sys: &LtiRealization, x0: &DVector<f64>, inputs: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut x = x0.clone();
    inputs
        .iter()
        .map(|u| {
            let y = &sys.c * &x + &sys.d * u;
            x = &sys.a * &x + &sys.b * u;
            y
        })
        .collect()
}

/// `y(k) = C A^k x0 + Σ_{i=1}^{k} C A^{i−1} B u(k−i) + D u(k)` for `k = 0..inputs.len()`.
pub fn output_evolution(
    model: &AffineLpvModel,
    theta: &[f64],
    x0: &DVector<f64>,
    inputs: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    if !model.time().is_discrete() {
        return Err(Error::Config("output evolution needs a discrete-time model".into()));
    }
    let sys = model.evaluate_at(theta)?;
    if x0.len() != sys.n_states() || inputs.iter().any(|u| u.len() != sys.n_inputs()) {
        return Err(Error::Dimension("initial state or input length mismatch".into()));
    }
    // Markov parameters C A^{i−1} B and free responses C A^k x0.
    let kk = inputs.len();
    let mut markov = Vec::with_capacity(kk);
    let mut power_b = sys.b.clone();
    let mut free = Vec::with_capacity(kk);
    let mut ax = x0.clone();
    for _ in 0..kk {
        markov.push(&sys.c * &power_b);
        power_b = &sys.a * power_b;
        free.push(&sys.c * &ax);
        ax = &sys.a * ax;
    }
    Ok((0..kk)
        .map(|k| {
            let mut y = &free[k] + &sys.d * &inputs[k];
            for i in 1..=k {
                y += &markov[i - 1] * &inputs[k - i];
            }
            y
        })
        .collect())
}

/// Local discrete-time linearization: the realization at θ and its θ-derivatives.
#[derive(Clone, Debug)]
pub struct DiscreteSensitivity {
    pub sys: LtiRealization,
    /// `(dA, dB, dC, dD)` for each parameter.
    pub derivatives: Vec<[DMatrix<f64>; 4]>,
}

impl DiscreteSensitivity {
    /// Exact derivatives of a discrete affine model.
    pub fn from_discrete(model: &AffineLpvModel, theta: &[f64]) -> Result<Self> {
        if !model.time().is_discrete() {
            return Err(Error::Config("expected a discrete-time model".into()));
        }
        let sys = model.evaluate_at(theta)?;
        let derivatives = (1..=model.n_params())
            .map(|i| {
                [
                    model.a_blocks()[i].clone(),
                    model.b_blocks()[i].clone(),
                    model.c_blocks()[i].clone(),
                    model.d_blocks()[i].clone(),
                ]
            })
            .collect();
        Ok(Self { sys, derivatives })
    }

    /// Zero-order-hold discretization with step `h` and its exact θ-derivatives.
    ///
    /// With `M = [[A, B], [0, 0]]`, `exp(Mh)` holds `(A_d, B_d)`; the Fréchet
    /// derivative along `dM = [[A_i, B_i], [0, 0]]` is the upper-right block of
    /// `exp([[M, dM], [0, M]] h)`.
    pub fn from_continuous(model: &AffineLpvModel, theta: &[f64], h: f64) -> Result<Self> {
        if model.time().is_discrete() {
            return Err(Error::Config("expected a continuous-time model".into()));
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::Config(format!("sampling step must be positive, got {h}")));
        }
        let cont = model.evaluate_at(theta)?;
        let (n, m) = (cont.n_states(), cont.n_inputs());
        let s = n + m;
        let mut mm = DMatrix::zeros(s, s);
        mm.view_mut((0, 0), (n, n)).copy_from(&cont.a);
        mm.view_mut((0, n), (n, m)).copy_from(&cont.b);
        let e = (&mm * h).exp();
        let sys = LtiRealization::new(
            e.view((0, 0), (n, n)).clone_owned(),
            e.view((0, n), (n, m)).clone_owned(),
            cont.c.clone(),
            cont.d.clone(),
            TimeKind::Discrete { step: h },
        )?;
        let derivatives = (1..=model.n_params())
            .map(|i| {
                let mut big = DMatrix::zeros(2 * s, 2 * s);
                big.view_mut((0, 0), (s, s)).copy_from(&mm);
                big.view_mut((s, s), (s, s)).copy_from(&mm);
                big.view_mut((0, s), (n, n)).copy_from(&model.a_blocks()[i]);
                big.view_mut((0, s + n), (n, m)).copy_from(&model.b_blocks()[i]);
                let eb = (big * h).exp();
                [
                    eb.view((0, s), (n, n)).clone_owned(),
                    eb.view((0, s + n), (n, m)).clone_owned(),
                    model.c_blocks()[i].clone(),
                    model.d_blocks()[i].clone(),
                ]
            })
            .collect();
        Ok(Self { sys, derivatives })
    }

    pub fn n_params(&self) -> usize {
        self.derivatives.len()
    }

    /// Derivative Markov parameters `d(CA^{j−1}B)/dθ_i` for `j = 1..=k_max`,
    /// preceded by `dD/dθ_i`, and (when `x0_terms`) `d(CA^k)/dθ_i` for `k = 0..=k_max`.
    ///
    /// Both come from powers of the lifted matrix
    /// `[[A, 0, 0, 0], [0, A, dA, 0], [0, 0, A, 0], [0, 0, 0, A]]`, whose (2,3)
    /// block after `p` steps is `d(A^p)`.
    fn markov_derivatives(&self, i: usize, k_max: usize, x0_terms: bool) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
        let [da, db, dc, dd] = &self.derivatives[i];
        let sys = &self.sys;
        let n = sys.n_states();
        let (aa, bb, cc) = sensitivity_blocks(&sys.a, &sys.b, &sys.c, Some(&Derivative { a: da, b: db, c: dc, d: dd }));
        let mut markov = vec![dd.clone()];
        let mut state = bb;
        for _ in 1..=k_max {
            markov.push(&cc * &state);
            state = &aa * state;
        }
        let mut free = Vec::new();
        if x0_terms {
            // Injecting x0 into x_C and x_B' reads out dC A^k + C d(A^k).
            let mut state = DMatrix::zeros(4 * n, n);
            state.view_mut((0, 0), (n, n)).fill_with_identity();
            state.view_mut((2 * n, 0), (n, n)).fill_with_identity();
            for _ in 0..=k_max {
                free.push(&cc * &state);
                state = &aa * state;
            }
        }
        (markov, free)
    }

    /// `M^i` mapping `[u(0); …; u(K)]` (then `x0` when requested) to
    /// `[∂y(0)/∂θ_i; …; ∂y(K)/∂θ_i]`.
    pub fn matrix(&self, i: usize, k_max: usize, include_initial_state: bool) -> DMatrix<f64> {
        let (q, m, n) = (self.sys.n_outputs(), self.sys.n_inputs(), self.sys.n_states());
        let (markov, free) = self.markov_derivatives(i, k_max, include_initial_state);
        let cols = m * (k_max + 1) + if include_initial_state { n } else { 0 };
        let mut out = DMatrix::zeros(q * (k_max + 1), cols);
        for k in 0..=k_max {
            for t in 0..=k {
                out.view_mut((k * q, t * m), (q, m)).copy_from(&markov[k - t]);
            }
            if include_initial_state {
                out.view_mut((k * q, m * (k_max + 1)), (q, n)).copy_from(&free[k]);
            }
        }
        out
    }
}

/// Slowest time constant of `A` in the model's time unit (continuous) or in samples (discrete).
pub fn slowest_time_constant(sys: &LtiRealization) -> Result<f64> {
    let eigs = linalg::eigenvalues(&sys.a)?;
    let rate = match sys.time {
        TimeKind::Continuous => eigs.iter().map(|l| -l.re).fold(f64::INFINITY, f64::min),
        TimeKind::Discrete { .. } => eigs.iter().map(|l| -l.norm().ln()).fold(f64::INFINITY, f64::min),
    };
    if !(rate > 0.0) {
        return Err(Error::Unstable("no finite time constant for an unstable realization".into()));
    }
    Ok(1.0 / rate)
}

fn warn_short_horizon(sys: &LtiRealization, k_max: usize, samples_per_unit: f64) {
    if let Ok(tc) = slowest_time_constant(sys) {
        let tc_samples = tc * samples_per_unit;
        if (k_max as f64) < tc_samples {
            log::warn!("k_max = {k_max} is below the slowest time constant ({tc_samples:.1} samples); slow dynamics are cut off");
        }
    }
}

/// `M^i(θ)` for every parameter of a discrete model.
pub fn time_sensitivity_matrices(
    model: &AffineLpvModel,
    theta: &[f64],
    k_max: usize,
    include_initial_state: bool,
) -> Result<Vec<DMatrix<f64>>> {
    if k_max == 0 {
        return Err(Error::Config("k_max must be at least one".into()));
    }
    let local = DiscreteSensitivity::from_discrete(model, theta)?;
    warn_short_horizon(&local.sys, k_max, 1.0);
    Ok((0..local.n_params()).map(|i| local.matrix(i, k_max, include_initial_state)).collect())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScmConfig {
    /// Sampling step for continuous models; default slowest time constant / 50.
    pub step: Option<f64>,
    /// Horizon in samples; default five slowest time constants.
    pub k_max: Option<usize>,
    pub eval_set: EvalSet,
    pub include_initial_state: bool,
}

impl Default for ScmConfig {
    fn default() -> Self {
        Self {
            step: None,
            k_max: None,
            eval_set: EvalSet::VerticesAndSamples { count: 20, seed: 0 },
            include_initial_state: false,
        }
    }
}

/// Sampling step and horizon actually used by [`scm`].
pub fn scm_sampling(model: &AffineLpvModel, config: &ScmConfig) -> Result<(f64, usize)> {
    let nominal = model.evaluate_at(&model.theta_box().center())?;
    let tc = slowest_time_constant(&nominal)?;
    let step = match model.time() {
        TimeKind::Discrete { step } => step,
        TimeKind::Continuous => config.step.unwrap_or(tc / STEPS_PER_TIME_CONSTANT),
    };
    let tc_samples = match model.time() {
        TimeKind::Discrete { .. } => tc,
        TimeKind::Continuous => tc / step,
    };
    let k_max = config
        .k_max
        .unwrap_or_else(|| (HORIZON_TIME_CONSTANTS * tc_samples).ceil().max(1.0) as usize);
    if k_max == 0 {
        return Err(Error::Config("k_max must be at least one".into()));
    }
    if (k_max as f64) < tc_samples {
        log::warn!("k_max = {k_max} is below the slowest time constant ({tc_samples:.1} samples)");
    }
    Ok((step, k_max))
}

/// `σ̄_ij = max_θ σ_max(M^{jᵀ} M^i)` over the evaluation set.
pub fn scm(model: &AffineLpvModel, config: &ScmConfig) -> Result<CovarianceMatrix> {
    let l = model.n_params();
    let (step, k_max) = scm_sampling(model, config)?;
    let points = config.eval_set.points(model.theta_box())?;
    let index = pairs(l);
    let per_point = points
        .par_iter()
        .map(|theta| {
            let local = match model.time() {
                TimeKind::Discrete { .. } => DiscreteSensitivity::from_discrete(model, theta)?,
                TimeKind::Continuous => DiscreteSensitivity::from_continuous(model, theta, step)?,
            };
            let mats: Vec<DMatrix<f64>> = (0..l)
                .map(|i| local.matrix(i, k_max, config.include_initial_state))
                .collect();
            Ok(index
                .iter()
                .map(|&(i, j)| product_norm(&mats[j], &mats[i]))
                .collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let upper: Vec<(usize, usize, f64)> = index
        .iter()
        .enumerate()
        .map(|(k, &(i, j))| (i, j, per_point.iter().map(|b| b[k]).fold(0.0, f64::max)))
        .collect();
    Ok(CovarianceMatrix {
        kind: CovarianceKind::Scm,
        entries: symmetric_rows(l, &upper),
        center: model.theta_box().center(),
        evaluation_set: config.eval_set.describe(),
        points: points.len(),
        frequencies: None,
        step: Some(step),
        k_max: Some(k_max),
    })
}

/// `σ_max(Xᵀ Y)` by Lanczos on `v ↦ Yᵀ X Xᵀ Y v` with full reorthogonalization.
pub fn product_norm(x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    if x.iter().all(|&v| v == 0.0) || y.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    let dim = y.ncols();
    let apply = |v: &DVector<f64>| -> DVector<f64> {
        let w = x.transpose() * (y * v);
        y.transpose() * (x * w)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
    v /= v.norm();
    let max_steps = dim.min(80);
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(max_steps);
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut previous = 0.0;
    for step in 0..max_steps {
        basis.push(v.clone());
        let mut w = apply(&v);
        let a = v.dot(&w);
        alpha.push(a);
        for b in &basis {
            let c = b.dot(&w);
            w -= b * c;
        }
        for b in &basis {
            let c = b.dot(&w);
            w -= b * c;
        }
        let k = alpha.len();
        let t = DMatrix::from_fn(k, k, |r, c| {
            if r == c {
                alpha[r]
            } else if r + 1 == c {
                beta[r]
            } else if c + 1 == r {
                beta[c]
            } else {
                0.0
            }
        });
        let ritz = SymmetricEigen::new(t).eigenvalues.max();
        let b = w.norm();
        if b <= 1e-14 * ritz.abs().max(f64::MIN_POSITIVE)
            || (step > 2 && (ritz - previous).abs() <= 1e-13 * ritz.abs())
        {
            return ritz.max(0.0).sqrt();
        }
        previous = ritz;
        beta.push(b);
        v = w / b;
    }
    previous.max(0.0).sqrt()
}

/// Directions of the largest singular values of the covariance, lifted into the
/// `(ℓ+1)`-chart centred at `cov.center`.
///
/// Tied singular values (relative gap below [`TIE_TOLERANCE`]) share a subspace;
/// inside it the basis is built from the coordinate axes in index order, so
/// lower-indexed parameters come first. With `include_constant`, `e_0` is the
/// first column and the remaining `n_r − 1` columns are sensitivity directions.
pub fn covariance_to_projection(
    cov: &CovarianceMatrix,
    n_r: usize,
    include_constant: bool,
) -> Result<ParameterProjection> {
    let l = cov.n_params();
    let directions = if include_constant { n_r.checked_sub(1) } else { Some(n_r) };
    let directions = match directions {
        Some(d) if n_r >= 1 && d <= l => d,
        _ => {
            return Err(Error::Dimension(format!(
                "n_r = {n_r} out of range for {l} parameters (constant direction {})",
                if include_constant { "included" } else { "excluded" }
            )))
        }
    };
    let pi = cov.matrix();
    if (&pi - pi.transpose()).norm() > TIE_TOLERANCE * pi.norm().max(1.0) {
        return Err(Error::Config("covariance matrix is not symmetric".into()));
    }
    let basis = ordered_singular_basis(&pi);
    let mut t = DMatrix::zeros(l + 1, n_r);
    let mut col = 0;
    if include_constant {
        t[(0, 0)] = 1.0;
        col = 1;
    }
    for k in 0..directions {
        t.view_mut((1, col + k), (l, 1)).copy_from(&basis.column(k));
    }
    ParameterProjection::new(t)?.with_center(cov.center.clone())
}

/// Left singular vectors ordered by decreasing singular value with canonical
/// bases inside tied groups and a positive largest-magnitude entry per column.
fn ordered_singular_basis(pi: &DMatrix<f64>) -> DMatrix<f64> {
    let l = pi.nrows();
    let svd = pi.clone().svd(true, false);
    let u = svd.u.expect("requested left singular vectors");
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sv: Vec<f64> = order.iter().map(|&k| svd.singular_values[k]).collect();
    let top = sv.first().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
    let mut out = DMatrix::zeros(l, l);
    let mut start = 0;
    while start < l {
        let mut end = start + 1;
        while end < l && (sv[start] - sv[end]).abs() <= TIE_TOLERANCE * top {
            end += 1;
        }
        let group = DMatrix::from_fn(l, end - start, |r, c| u[(r, order[start + c])]);
        let projector = &group * group.transpose();
        let mut col = start;
        for axis in 0..l {
            if col == end {
                break;
            }
            let mut v = projector.column(axis).clone_owned();
            for k in start..col {
                let c = out.column(k).dot(&v);
                v -= out.column(k) * c;
            }
            let norm = v.norm();
            if norm > 1e-8 {
                out.set_column(col, &(v / norm));
                col += 1;
            }
        }
        start = end;
    }
    for k in 0..l {
        let mut col = out.column(k).clone_owned();
        let pivot = col.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if pivot < 0.0 {
            col.neg_mut();
            out.set_column(k, &col);
        }
    }
    out
}
