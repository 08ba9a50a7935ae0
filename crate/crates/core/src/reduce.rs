//! Parameter-space reduction by matching affine Gramian products.
//!
//! All projections here live in the chart centred at the box centre, so a
//! parameter dropped by a projection is frozen at the middle of its interval.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::gramians::{verify_upper_bound, AffineGramian, GramianKind};
use crate::linalg;
use crate::model::{chart_shift, AffineLpvModel, ParameterProjection};
use crate::norms::hankel_norm;

/// Interior samples used, on top of the vertices, to check Gramians before use.
pub const VERIFY_SAMPLES: usize = 16;
/// Upper limit on the number of axis-selection starts.
pub const MAX_SELECTION_STARTS: usize = 256;

/// Gramian blocks re-expressed in the centred chart plus per-vertex caches.
#[derive(Clone, Debug)]
pub struct HankelObjectiveContext {
    p: Vec<DMatrix<f64>>,
    q: Vec<DMatrix<f64>>,
    center: Vec<f64>,
    /// `[1, w − c]` for every vertex `w`.
    weights: Vec<DVector<f64>>,
    /// `f_P(w) f_Q(w)ᵀ` per vertex.
    full: Vec<DMatrix<f64>>,
    scale: f64,
}

impl HankelObjectiveContext {
    /// Checks both Gramians against exact Gramians of `model` and builds the context.
    pub fn new(model: &AffineLpvModel, p: &AffineGramian, q: &AffineGramian) -> Result<Self> {
        if p.kind != GramianKind::Reachability || q.kind != GramianKind::Observability {
            return Err(Error::Config("expected a reachability and an observability Gramian".into()));
        }
        let l = model.n_params();
        if p.n_params() != l || q.n_params() != l || p.order() != model.n_states() || q.order() != model.n_states() {
            return Err(Error::Dimension("Gramian blocks do not match the model".into()));
        }
        let mut points = model.theta_box().vertices()?;
        points.extend(model.theta_box().sample(VERIFY_SAMPLES, 0));
        for g in [p, q] {
            let report = verify_upper_bound(model, g, &points)?;
            if !report.holds() {
                return Err(Error::Numerical(format!(
                    "{:?} Gramian fails the upper bound at θ = {:?} (relative margin {:.3e})",
                    g.kind, report.worst_theta, report.worst_margin
                )));
            }
        }
        Self::unchecked(&p.blocks, &q.blocks, model.theta_box().center(), &model.theta_box().vertices()?)
    }

    /// Builds the context from raw blocks without verification.
    pub fn unchecked(
        p_blocks: &[DMatrix<f64>],
        q_blocks: &[DMatrix<f64>],
        center: Vec<f64>,
        vertices: &[Vec<f64>],
    ) -> Result<Self> {
        let k = center.len() + 1;
        if p_blocks.len() != k || q_blocks.len() != k {
            return Err(Error::Dimension(format!("expected {k} Gramian blocks")));
        }
        let shift = chart_shift(&center);
        let mix = |blocks: &[DMatrix<f64>]| -> Vec<DMatrix<f64>> {
            (0..k)
                .map(|j| {
                    let mut out = DMatrix::zeros(blocks[0].nrows(), blocks[0].ncols());
                    for (i, b) in blocks.iter().enumerate() {
                        if shift[(j, i)] != 0.0 {
                            out += b * shift[(j, i)];
                        }
                    }
                    out
                })
                .collect()
        };
        let p = mix(p_blocks);
        let q = mix(q_blocks);
        let weights: Vec<DVector<f64>> = vertices
            .iter()
            .map(|w| {
                DVector::from_iterator(k, std::iter::once(1.0).chain(w.iter().zip(&center).map(|(a, c)| a - c)))
            })
            .collect();
        let full: Vec<DMatrix<f64>> = weights
            .iter()
            .map(|u| combine(&p, u.as_slice()) * combine(&q, u.as_slice()).transpose())
            .collect();
        let scale = full.iter().map(linalg::spectral_norm).fold(0.0, f64::max);
        Ok(Self { p, q, center, weights, full, scale })
    }

    pub fn n_params(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    /// `max_w ‖f_P(w) f_Q(w)ᵀ‖₂`, the objective of the empty projection.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Worst-vertex spectral mismatch between full and projected Gramian products.
    pub fn objective(&self, t_r: &DMatrix<f64>) -> f64 {
        self.vertex_values(t_r).into_iter().fold(0.0, f64::max)
    }

    fn reduced_product(&self, t_r: &DMatrix<f64>, u: &DVector<f64>) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
        let a = t_r * (t_r.transpose() * u);
        let pr = combine(&self.p, a.as_slice());
        let qr = combine(&self.q, a.as_slice());
        (a.as_slice().to_vec(), pr, qr)
    }

    fn vertex_values(&self, t_r: &DMatrix<f64>) -> Vec<f64> {
        self.weights
            .par_iter()
            .zip(&self.full)
            .map(|(u, f)| {
                let (_, pr, qr) = self.reduced_product(t_r, u);
                linalg::spectral_norm(&(f - pr * qr.transpose()))
            })
            .collect()
    }

    /// Soft-max of the vertex mismatches at absolute temperature `tau`, its
    /// Euclidean gradient in `T_r`, and the true maximum.
    fn smoothed(&self, t_r: &DMatrix<f64>, tau: f64) -> (f64, DMatrix<f64>, f64) {
        let k = t_r.nrows();
        let parts: Vec<(f64, DVector<f64>)> = self
            .weights
            .par_iter()
            .zip(&self.full)
            .map(|(u, f)| {
                let (_, pr, qr) = self.reduced_product(t_r, u);
                let err = f - &pr * qr.transpose();
                let (sigma, x, y) = linalg::top_singular_triple(&err);
                // dσ/da_k = −xᵀ(P_k Q_rᵀ + P_r Q_kᵀ)y
                let qry = qr.transpose() * &y;
                let prx = pr.transpose() * &x;
                let g = DVector::from_fn(k, |j, _| {
                    let qky = self.q[j].transpose() * &y;
                    -(x.dot(&(&self.p[j] * &qry)) + prx.dot(&qky))
                });
                (sigma, g)
            })
            .collect();
        let max = parts.iter().map(|p| p.0).fold(0.0, f64::max);
        let exps: Vec<f64> = parts.iter().map(|p| ((p.0 - max) / tau).exp()).collect();
        let total: f64 = exps.iter().sum();
        let value = max + tau * total.ln();
        let mut grad = DMatrix::zeros(k, t_r.ncols());
        for ((_, g), (e, u)) in parts.iter().zip(exps.iter().zip(&self.weights)) {
            let w = e / total;
            // a = T Tᵀ u  ⇒  ∂(gᵀa)/∂T = g uᵀT + u gᵀT
            let tu = t_r.transpose() * u;
            let tg = t_r.transpose() * g;
            grad += (g * tu.transpose() + u * tg.transpose()) * w;
        }
        (value, grad, max)
    }

    /// Wraps `T_r` as a projection in this context's chart.
    pub fn projection(&self, t_r: DMatrix<f64>) -> Result<ParameterProjection> {
        ParameterProjection::new(t_r)?.with_center(self.center.clone())
    }
}

fn combine(blocks: &[DMatrix<f64>], weights: &[f64]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(blocks[0].nrows(), blocks[0].ncols());
    for (b, &w) in blocks.iter().zip(weights) {
        if w != 0.0 {
            out += b * w;
        }
    }
    out
}

/// Local-search settings for [`optimize_projection`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Random orthonormal starts, in addition to selection and warm starts.
    pub n_starts: usize,
    pub max_iters: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    /// Backtracking shrink factor.
    pub shrink: f64,
    pub conv_tol: f64,
    /// Initial soft-max temperature relative to the objective scale.
    pub temperature: f64,
    /// Temperature multiplier applied after each converged stage.
    pub anneal: f64,
    pub min_temperature: f64,
    /// Start from every `n_r`-subset of the chart axes.
    pub selection_starts: bool,
    /// Keep the constant direction `e_0` as the first column.
    pub keep_constant: bool,
    /// Run local search only from this many starts with the lowest initial
    /// objective; `None` refines every start.
    #[serde(default)]
    pub refine: Option<usize>,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            n_starts: 20,
            max_iters: 500,
            armijo: 1e-4,
            shrink: 0.5,
            conv_tol: 1e-8,
            temperature: 1e-3,
            anneal: 0.1,
            min_temperature: 1e-6,
            selection_starts: true,
            keep_constant: false,
            refine: None,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.armijo, self.shrink, self.conv_tol, self.temperature, self.anneal, self.min_temperature];
        if self.max_iters == 0 || positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("optimizer settings must be positive".into()));
        }
        if self.refine == Some(0) {
            return Err(Error::Config("refine must keep at least one start".into()));
        }
        if self.shrink >= 1.0 || self.anneal >= 1.0 || self.armijo >= 1.0 {
            return Err(Error::Config("shrink, anneal and armijo must lie below one".into()));
        }
        Ok(())
    }
}

/// Result of a multi-start run.
#[derive(Clone, Debug)]
pub struct OptimizedProjection {
    pub projection: ParameterProjection,
    pub objective: f64,
    /// Index of the winning start in the pool (warm, selection, random order).
    pub start_index: usize,
    pub starts: usize,
    /// Objective of every start before local search.
    pub initial_objectives: Vec<f64>,
}

/// Minimises the worst-vertex Gramian-product mismatch over `n_r`-column frames.
pub fn optimize_projection(
    ctx: &HankelObjectiveContext,
    n_r: usize,
    cfg: &OptimizerConfig,
) -> Result<OptimizedProjection> {
    optimize_projection_with(ctx, n_r, cfg, &[])
}

/// As [`optimize_projection`] with extra warm starts, placed first in the pool.
pub fn optimize_projection_with(
    ctx: &HankelObjectiveContext,
    n_r: usize,
    cfg: &OptimizerConfig,
    warm: &[DMatrix<f64>],
) -> Result<OptimizedProjection> {
    cfg.validate()?;
    let l = ctx.n_params();
    if n_r == 0 || n_r > l {
        return Err(Error::Dimension(format!("n_r = {n_r} must lie in 1..={l}")));
    }
    let k = l + 1;
    let mut pool: Vec<DMatrix<f64>> = Vec::new();
    for w in warm {
        if w.shape() != (k, n_r) {
            return Err(Error::Dimension(format!("warm start is {:?}, expected ({k}, {n_r})", w.shape())));
        }
        pool.push(conform(&linalg::orthonormalize(w), cfg.keep_constant));
    }
    if cfg.selection_starts {
        for subset in subsets(k, n_r, cfg.keep_constant).into_iter().take(MAX_SELECTION_STARTS) {
            let mut t = DMatrix::zeros(k, n_r);
            for (col, &axis) in subset.iter().enumerate() {
                t[(axis, col)] = 1.0;
            }
            pool.push(t);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.n_starts {
        pool.push(random_frame(k, n_r, cfg.keep_constant, &mut rng));
    }
    if pool.is_empty() {
        return Err(Error::Config("no starting points".into()));
    }
    let initial_objectives: Vec<f64> = pool.iter().map(|t| ctx.objective(t)).collect();
    let mut chosen: Vec<usize> = (0..pool.len()).collect();
    if let Some(keep) = cfg.refine {
        chosen.sort_by(|&a, &b| initial_objectives[a].total_cmp(&initial_objectives[b]).then(a.cmp(&b)));
        chosen.truncate(keep);
    }
    let results: Vec<(f64, DMatrix<f64>)> = (0..pool.len())
        .into_par_iter()
        .map(|i| {
            if chosen.contains(&i) {
                descend(ctx, pool[i].clone(), initial_objectives[i], cfg)
            } else {
                (initial_objectives[i], pool[i].clone())
            }
        })
        .collect();
    let (start_index, (objective, t_best)) = results
        .into_iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.0.total_cmp(&b.0).then(i.cmp(j)))
        .expect("non-empty pool");
    log::debug!("best of {} starts: #{start_index} with objective {objective:.6e}", pool.len());
    Ok(OptimizedProjection {
        projection: ctx.projection(t_best)?,
        objective,
        start_index,
        starts: pool.len(),
        initial_objectives,
    })
}

/// Runs `n_r = 1..=max_nr`, seeding each run with the previous winner padded by
/// the best of a few orthogonal extra columns.
pub fn optimize_nested(
    ctx: &HankelObjectiveContext,
    max_nr: usize,
    cfg: &OptimizerConfig,
    warm: &dyn Fn(usize) -> Vec<DMatrix<f64>>,
) -> Result<Vec<OptimizedProjection>> {
    optimize_nested_from(ctx, None, max_nr, cfg, warm)
}

/// Like [`optimize_nested`], but the chain continues from the fixed frame `base`:
/// the first run has `base.ncols() + 1` columns and is seeded by padding `base`.
pub fn optimize_nested_from(
    ctx: &HankelObjectiveContext,
    base: Option<&DMatrix<f64>>,
    max_nr: usize,
    cfg: &OptimizerConfig,
    warm: &dyn Fn(usize) -> Vec<DMatrix<f64>>,
) -> Result<Vec<OptimizedProjection>> {
    let k = ctx.n_params() + 1;
    if let Some(b) = base {
        if b.nrows() != k || b.ncols() == 0 || b.ncols() >= k {
            return Err(Error::Dimension(format!(
                "base frame is {}×{}, expected {k} rows and 1..{k} columns",
                b.nrows(),
                b.ncols()
            )));
        }
    }
    let mut prev = base.map(linalg::orthonormalize);
    let first = prev.as_ref().map_or(1, |b| b.ncols() + 1);
    let mut out: Vec<OptimizedProjection> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    for n_r in first..=max_nr {
        let mut starts = warm(n_r);
        if let Some(t) = &prev {
            starts.push(pad_best(ctx, t, &mut rng));
        }
        let run = optimize_projection_with(ctx, n_r, cfg, &starts)?;
        prev = Some(run.projection.t_r().clone());
        out.push(run);
    }
    Ok(out)
}

/// Appends the orthogonal column (axis or random) that gives the lowest objective.
fn pad_best(ctx: &HankelObjectiveContext, t: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let k = t.nrows();
    let mut candidates: Vec<DVector<f64>> = (0..k).map(|i| DVector::from_fn(k, |r, _| (r == i) as u8 as f64)).collect();
    candidates.extend((0..4).map(|_| DVector::from_fn(k, |_, _| StandardNormal.sample(rng))));
    let mut best: Option<(f64, DMatrix<f64>)> = None;
    for v in candidates {
        let residual = &v - t * (t.transpose() * &v);
        if residual.norm() < 1e-6 {
            continue;
        }
        let mut padded = t.clone().insert_column(t.ncols(), 0.0);
        padded.set_column(t.ncols(), &residual);
        let padded = linalg::orthonormalize(&padded);
        let f = ctx.objective(&padded);
        if best.as_ref().is_none_or(|(b, _)| f < *b) {
            best = Some((f, padded));
        }
    }
    best.map(|b| b.1).expect("a k×(k−1) frame always has an orthogonal axis")
}

/// Riemannian descent on the Grassmannian with annealed soft-max smoothing.
/// Returns the iterate with the lowest true objective, starting value included.
fn descend(ctx: &HankelObjectiveContext, t0: DMatrix<f64>, f0: f64, cfg: &OptimizerConfig) -> (f64, DMatrix<f64>) {
    let scale = ctx.scale().max(f64::MIN_POSITIVE);
    let mut best = (f0, t0.clone());
    if f0 <= cfg.conv_tol * scale {
        return best;
    }
    let mut t = t0;
    let mut temperature = cfg.temperature;
    let mut step = 0.1;
    let mut iters = 0;
    while iters < cfg.max_iters && temperature >= cfg.min_temperature * (1.0 - 1e-12) {
        let tau = temperature * scale;
        let (mut value, mut grad, _) = ctx.smoothed(&t, tau);
        loop {
            if iters >= cfg.max_iters {
                break;
            }
            iters += 1;
            let dir = tangent(&t, &grad, cfg.keep_constant);
            let gnorm2 = dir.norm_squared();
            if gnorm2.sqrt() <= cfg.conv_tol * scale {
                break;
            }
            let mut alpha = step / gnorm2.sqrt();
            let mut accepted = None;
            for _ in 0..40 {
                let candidate = conform(&linalg::orthonormalize(&(&t - &dir * alpha)), cfg.keep_constant);
                let (v, g, true_max) = ctx.smoothed(&candidate, tau);
                if v <= value - cfg.armijo * alpha * gnorm2 {
                    accepted = Some((candidate, v, g, true_max));
                    break;
                }
                alpha *= cfg.shrink;
            }
            let Some((candidate, v, g, true_max)) = accepted else {
                break;
            };
            step = (alpha * gnorm2.sqrt() * 2.0).min(1.0);
            let decrease = value - v;
            t = candidate;
            value = v;
            grad = g;
            if true_max < best.0 {
                best = (true_max, t.clone());
            }
            if decrease <= cfg.conv_tol * scale {
                break;
            }
        }
        temperature *= cfg.anneal;
    }
    best
}

/// Projects a Euclidean gradient onto the horizontal space at `t`.
fn tangent(t: &DMatrix<f64>, grad: &DMatrix<f64>, keep_constant: bool) -> DMatrix<f64> {
    let mut g = grad - t * (t.transpose() * grad);
    if keep_constant {
        g.column_mut(0).fill(0.0);
        g.row_mut(0).fill(0.0);
    }
    g
}

/// Restores the fixed constant column after a retraction when requested.
fn conform(t: &DMatrix<f64>, keep_constant: bool) -> DMatrix<f64> {
    if !keep_constant {
        return t.clone();
    }
    let mut out = t.clone();
    out.row_mut(0).fill(0.0);
    out.column_mut(0).fill(0.0);
    out[(0, 0)] = 1.0;
    let cols = out.ncols();
    if cols > 1 {
        let rest = linalg::orthonormalize(&out.view((1, 1), (out.nrows() - 1, cols - 1)).clone_owned());
        out.view_mut((1, 1), (out.nrows() - 1, cols - 1)).copy_from(&rest);
    }
    out
}

fn random_frame(k: usize, n_r: usize, keep_constant: bool, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let raw = DMatrix::from_fn(k, n_r, |_, _| StandardNormal.sample(rng));
    conform(&linalg::orthonormalize(&raw), keep_constant)
}

/// Lexicographic `size`-subsets of `0..k`; with `require_zero` only those containing 0.
fn subsets(k: usize, size: usize, require_zero: bool) -> Vec<Vec<usize>> {
    fn rec(start: usize, k: usize, size: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        for i in start..k {
            if k - i < size - cur.len() || out.len() >= MAX_SELECTION_STARTS {
                break;
            }
            cur.push(i);
            rec(i + 1, k, size, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if require_zero {
        let mut cur = vec![0];
        rec(1, k, size, &mut cur, &mut out);
    } else {
        rec(0, k, size, &mut Vec::new(), &mut out);
    }
    out
}

/// Per-parameter scores of the subsystem baseline.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubsystemScores {
    /// `‖Σ(c + (u_i − c_i)e_i) − Σ(c)‖_H` for each parameter, `c` the box centre.
    pub scores: Vec<f64>,
    /// Parameters (1-based) by decreasing score, ties by index.
    pub ranking: Vec<usize>,
}

pub fn subsystem_scores(model: &AffineLpvModel) -> Result<SubsystemScores> {
    let center = model.theta_box().center();
    let nominal = model.evaluate_at(&center)?;
    nominal.ensure_stable()?;
    let scores = (0..model.n_params())
        .into_par_iter()
        .map(|i| {
            if model.parameter_is_inert(i + 1) {
                return Ok(0.0);
            }
            let mut probe = center.clone();
            probe[i] = model.theta_box().upper()[i];
            let sys = model.evaluate_at(&probe)?;
            sys.ensure_stable()?;
            hankel_norm(&sys.difference(&nominal)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut ranking: Vec<usize> = (0..scores.len()).collect();
    ranking.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(SubsystemScores {
        scores,
        ranking: ranking.into_iter().map(|i| i + 1).collect(),
    })
}

/// Keeps the constant direction and the `n_r − 1` parameters with the largest
/// subsystem scores; the rest are frozen at the box centre.
pub fn subsystem_hankel_baseline(model: &AffineLpvModel, n_r: usize) -> Result<(ParameterProjection, SubsystemScores)> {
    let l = model.n_params();
    if n_r == 0 || n_r > l + 1 {
        return Err(Error::Dimension(format!("n_r = {n_r} must lie in 1..={}", l + 1)));
    }
    let scores = subsystem_scores(model)?;
    let mut kept: Vec<usize> = scores.ranking[..n_r - 1].to_vec();
    kept.push(0);
    kept.sort_unstable();
    let proj = ParameterProjection::axes(l, &kept)?.with_center(model.theta_box().center())?;
    Ok((proj, scores))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReductionMethod {
    Hankel,
    Tscm,
    Scm,
    Subsys,
}

impl ReductionMethod {
    pub const ALL: [ReductionMethod; 4] = [Self::Hankel, Self::Tscm, Self::Scm, Self::Subsys];

    pub fn name(self) -> &'static str {
        match self {
            Self::Hankel => "hankel",
            Self::Tscm => "tscm",
            Self::Scm => "scm",
            Self::Subsys => "subsys",
        }
    }
}

impl std::str::FromStr for ReductionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}' (hankel, tscm, scm, subsys)")))
    }
}

/// Serialized projection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRecord {
    pub n_r: usize,
    #[serde(rename = "T_r")]
    pub t_r: Vec<Vec<f64>>,
    pub center: Vec<f64>,
    pub method: ReductionMethod,
    pub objective: Option<f64>,
    pub seed: Option<u64>,
}

impl ProjectionRecord {
    pub fn new(proj: &ParameterProjection, method: ReductionMethod, objective: Option<f64>, seed: Option<u64>) -> Self {
        Self {
            n_r: proj.n_r(),
            t_r: linalg::to_rows(proj.t_r()),
            center: proj.center().to_vec(),
            method,
            objective,
            seed,
        }
    }

    pub fn projection(&self) -> Result<ParameterProjection> {
        let t = linalg::from_rows(&self.t_r, Some(self.n_r))?;
        ParameterProjection::new(t)?.with_center(self.center.clone())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ParameterBox, TimeKind};

    fn spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g: DMatrix<f64> = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
        &g * g.transpose() / n as f64 + DMatrix::identity(n, n)
    }

    fn toy(l: usize, seed: u64) -> HankelObjectiveContext {
        let p: Vec<_> = (0..=l).map(|i| spd(3, seed + i as u64) * if i == 0 { 2.0 } else { 0.3 }).collect();
        let q: Vec<_> = (0..=l).map(|i| spd(3, seed + 50 + i as u64) * if i == 0 { 2.0 } else { 0.3 }).collect();
        let vertices = ParameterBox::unit(l).vertices().unwrap();
        HankelObjectiveContext::unchecked(&p, &q, vec![0.5; l], &vertices).unwrap()
    }

    #[test]
    fn full_frame_has_zero_objective() {
        let ctx = toy(3, 1);
        assert!(ctx.objective(&DMatrix::identity(4, 4)) < 1e-12 * ctx.scale());
    }

    #[test]
    fn constant_direction_matches_hand_products() {
        let p = vec![DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]), DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.2])];
        let q = vec![DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]), DMatrix::from_row_slice(2, 2, &[0.4, 0.1, 0.1, 0.0])];
        let ctx = HankelObjectiveContext::unchecked(&p, &q, vec![0.5], &[vec![0.0], vec![1.0]]).unwrap();
        let e0 = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let at = |t: f64| (&p[0] + &p[1] * t) * (&q[0] + &q[1] * t);
        let frozen = at(0.5);
        let expected = linalg::spectral_norm(&(at(0.0) - &frozen)).max(linalg::spectral_norm(&(at(1.0) - &frozen)));
        assert!((ctx.objective(&e0) - expected).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let ctx = toy(2, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_frame(3, 2, false, &mut rng);
        let tau = 1e-2 * ctx.scale();
        let (_, g, _) = ctx.smoothed(&t, tau);
        let h = 1e-6;
        for r in 0..3 {
            for c in 0..2 {
                let mut tp = t.clone();
                tp[(r, c)] += h;
                let mut tm = t.clone();
                tm[(r, c)] -= h;
                let fd = (ctx.smoothed(&tp, tau).0 - ctx.smoothed(&tm, tau).0) / (2.0 * h);
                assert!((fd - g[(r, c)]).abs() < 1e-5 * (1.0 + fd.abs()), "{fd} vs {}", g[(r, c)]);
            }
        }
    }

    #[test]
    fn optimizer_beats_every_start_and_is_deterministic() {
        let ctx = toy(3, 11);
        let cfg = OptimizerConfig { n_starts: 4, max_iters: 60, ..Default::default() };
        let a = optimize_projection(&ctx, 2, &cfg).unwrap();
        let b = optimize_projection(&ctx, 2, &cfg).unwrap();
        assert_eq!(a.projection, b.projection);
        assert!(a.initial_objectives.iter().all(|&f0| a.objective <= f0));
        assert!(linalg::orthonormality_defect(a.projection.t_r()) < 1e-10);
        assert!((ctx.objective(a.projection.t_r()) - a.objective).abs() < 1e-12);
        assert!(optimize_projection(&ctx, 4, &cfg).is_err());
        assert!(optimize_projection(&ctx, 0, &cfg).is_err());
    }

    #[test]
    fn nested_chain_continues_from_base() {
        let ctx = toy(3, 7);
        let cfg = OptimizerConfig { n_starts: 2, max_iters: 40, ..Default::default() };
        let base = ParameterProjection::constant_only(3).t_r().clone();
        let runs = optimize_nested_from(&ctx, Some(&base), 3, &cfg, &|_| Vec::new()).unwrap();
        assert_eq!(runs.iter().map(|r| r.projection.n_r()).collect::<Vec<_>>(), vec![2, 3]);
        // The padded base is a start, so no single-axis extension of it can win.
        for i in 1..4 {
            let axes = ParameterProjection::axes(3, &[0, i]).unwrap();
            assert!(runs[0].objective <= ctx.objective(axes.t_r()));
        }
        assert!(optimize_nested_from(&ctx, Some(&DMatrix::identity(4, 4)), 4, &cfg, &|_| Vec::new()).is_err());
    }

    #[test]
    fn kept_constant_column_stays_fixed() {
        let ctx = toy(3, 5);
        let cfg = OptimizerConfig { n_starts: 2, max_iters: 30, keep_constant: true, ..Default::default() };
        let r = optimize_projection(&ctx, 2, &cfg).unwrap();
        let t = r.projection.t_r();
        assert!((t[(0, 0)] - 1.0).abs() < 1e-12 && t.column(0).rows(1, 3).norm() < 1e-12);
        assert!(t.row(0).columns(1, 1).norm() < 1e-12);
    }

    #[test]
    fn subsets_are_lexicographic() {
        assert_eq!(subsets(3, 2, false), vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
        assert_eq!(subsets(3, 2, true), vec![vec![0, 1], vec![0, 2]]);
    }

    #[test]
    fn inert_parameter_is_dropped_first() {
        let z = |r, c| DMatrix::zeros(r, c);
        let a = vec![DMatrix::from_row_slice(2, 2, &[-1.0, 0.3, 0.0, -2.0]), DMatrix::from_diagonal_element(2, 2, -0.5), z(2, 2)];
        let b = vec![DMatrix::from_column_slice(2, 1, &[1.0, 1.0]), z(2, 1), z(2, 1)];
        let c = vec![DMatrix::from_row_slice(1, 2, &[1.0, 0.5]), z(1, 2), z(1, 2)];
        let d = vec![z(1, 1), z(1, 1), z(1, 1)];
        let model = AffineLpvModel::new(a, b, c, d, ParameterBox::unit(2), TimeKind::Continuous).unwrap();
        let (proj, scores) = subsystem_hankel_baseline(&model, 2).unwrap();
        assert_eq!(scores.scores[1], 0.0);
        assert_eq!(scores.ranking, vec![1, 2]);
        let expected = ParameterProjection::axes(2, &[0, 1]).unwrap().with_center(vec![0.5, 0.5]).unwrap();
        assert_eq!(proj, expected);
    }

    #[test]
    fn record_round_trip() {
        let proj = ParameterProjection::axes(3, &[2]).unwrap().with_center(vec![0.5; 3]).unwrap();
        let rec = ProjectionRecord::new(&proj, ReductionMethod::Subsys, None, Some(4));
        let text = serde_json::to_string(&rec).unwrap();
        assert!(text.contains("\"T_r\"") && text.contains("\"subsys\""));
        let back: ProjectionRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(back.projection().unwrap(), proj);
    }
}
