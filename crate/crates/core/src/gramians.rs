//! Exact Gramians of frozen systems and parameter-affine upper-bound Gramians
//! obtained from vertex LMIs.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, from_rows, to_rows};
use crate::model::{AffineLpvModel, LtiRealization};
use crate::sdp::{self, SdpCone, SdpMode, SdpOptions, SdpProblem, SdpStatus, SdpTerm};

/// Default strictness margin on `P(w) ⪰ εI`.
pub const DEFAULT_EPSILON: f64 = 1e-8;
/// Relative tolerance of the Theorem-style upper-bound check.
pub const UPPER_BOUND_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GramianKind {
    #[serde(rename = "P")]
    Reachability,
    #[serde(rename = "Q")]
    Observability,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LmiObjective {
    Feasibility,
    TraceMin,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Feasible,
}

/// Exact reachability and observability Gramians of one LTI system.
#[derive(Clone, Debug)]
pub struct ExactGramians {
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    /// Set when the Lyapunov operator is close to singular.
    pub warning: Option<String>,
}

/// Solves `AP + PAᵀ + BBᵀ = 0` and `AᵀQ + QA + CᵀC = 0` (or the Stein analogues).
pub fn exact_gramians(sys: &LtiRealization) -> Result<ExactGramians> {
    sys.ensure_stable()?;
    let discrete = sys.time.is_discrete();
    let solve = |a: &DMatrix<f64>, q: &DMatrix<f64>| {
        if discrete {
            linalg::stein(a, q)
        } else {
            linalg::lyapunov(a, q)
        }
    };
    let p = solve(&sys.a, &(&sys.b * sys.b.transpose()))?;
    let q = solve(&sys.a.transpose(), &(sys.c.transpose() * &sys.c))?;
    let eigs = linalg::eigenvalues(&sys.a)?;
    let sep = linalg::lyapunov_separation(&eigs, discrete);
    let warning = (sep < 1e-10).then(|| {
        format!("Lyapunov operator is nearly singular (separation {sep:.2e})")
    });
    Ok(ExactGramians { p, q, warning })
}

/// Exact Gramian of the requested kind.
pub fn exact_gramian(sys: &LtiRealization, kind: GramianKind) -> Result<DMatrix<f64>> {
    let g = exact_gramians(sys)?;
    Ok(match kind {
        GramianKind::Reachability => g.p,
        GramianKind::Observability => g.q,
    })
}

/// Parameter-affine Gramian `f(θ) = X_0 + Σ θ_i X_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineGramian {
    pub kind: GramianKind,
    pub blocks: Vec<DMatrix<f64>>,
    pub margin: f64,
    pub epsilon: f64,
    pub objective: LmiObjective,
    pub status: SolveStatus,
    pub iterations: usize,
}

impl AffineGramian {
    pub fn n_params(&self) -> usize {
        self.blocks.len() - 1
    }

    pub fn order(&self) -> usize {
        self.blocks[0].nrows()
    }

    /// `f(θ)` without a box check; `θ` may come from any chart point.
    pub fn evaluate(&self, theta: &[f64]) -> DMatrix<f64> {
        let mut out = self.blocks[0].clone();
        for (block, &t) in self.blocks[1..].iter().zip(theta) {
            out += block * t;
        }
        out
    }

    /// `Σ_j w_j X_j` for a full weight row.
    pub fn evaluate_linear(&self, weights: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.order(), self.order());
        for (block, &w) in self.blocks.iter().zip(weights) {
            out += block * w;
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let file = GramianFile {
            kind: self.kind,
            blocks: self.blocks.iter().map(to_rows).collect(),
            margin: self.margin,
            epsilon: self.epsilon,
            objective: self.objective,
            status: self.status,
            iterations: self.iterations,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GramianFile = serde_json::from_str(text)?;
        let blocks = file
            .blocks
            .iter()
            .map(|b| from_rows(b, None))
            .collect::<Result<Vec<_>>>()?;
        let Some(first) = blocks.first() else {
            return Err(Error::Dimension("Gramian has no blocks".into()));
        };
        let n = first.nrows();
        if blocks.iter().any(|b| b.shape() != (n, n)) {
            return Err(Error::Dimension("Gramian blocks must be square of equal order".into()));
        }
        Ok(Self {
            kind: file.kind,
            blocks,
            margin: file.margin,
            epsilon: file.epsilon,
            objective: file.objective,
            status: file.status,
            iterations: file.iterations,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct GramianFile {
    kind: GramianKind,
    blocks: Vec<Vec<Vec<f64>>>,
    margin: f64,
    #[serde(default = "default_epsilon")]
    epsilon: f64,
    objective: LmiObjective,
    #[serde(default = "default_status")]
    status: SolveStatus,
    #[serde(default)]
    iterations: usize,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_status() -> SolveStatus {
    SolveStatus::Feasible
}

#[derive(Clone, Debug, PartialEq)]
pub enum LmiConstraint {
    /// `Σ r_i X_i + L_{A(w)}(f(w)) + G(w)G(w)ᵀ ⪯ −δI`.
    Lyapunov { vertex: Vec<f64>, rate: Vec<f64> },
    /// `f(w) ⪰ εI`.
    VertexPositivity { vertex: Vec<f64> },
    /// `X_i ⪰ εI` for block `i ≥ 1`.
    BlockPositivity { block: usize },
}

/// Affine matrix inequalities over the unknown blocks `X_0 .. X_ℓ`.
///
/// For reachability the data are `(A_i, B_i)`; observability uses the dual
/// data `(A_iᵀ, C_iᵀ)`, so one constraint family serves both kinds.
#[derive(Clone, Debug)]
pub struct LmiProblem {
    pub kind: GramianKind,
    pub constraints: Vec<LmiConstraint>,
    pub objective: LmiObjective,
    pub margin: f64,
    pub epsilon: f64,
    rate_bounded: bool,
    block_positivity: bool,
    convexity: bool,
    dyn_blocks: Vec<DMatrix<f64>>,
    input_blocks: Vec<DMatrix<f64>>,
}

impl LmiProblem {
    pub fn n_params(&self) -> usize {
        self.dyn_blocks.len() - 1
    }

    pub fn order(&self) -> usize {
        self.dyn_blocks[0].nrows()
    }

    /// Number of vertex-family constraints.
    pub fn constraint_count(&self) -> usize {
        self.constraints.len()
    }

    /// Number of per-coordinate convexity constraints added on top of the vertex families.
    pub fn auxiliary_count(&self) -> usize {
        if self.convexity {
            self.n_params()
        } else {
            0
        }
    }

    /// Slack `η` of the convexity constraints `L_ii ⪰ −ηI`.
    pub fn convexity_slack(&self) -> f64 {
        2.0 * self.margin / self.n_params().max(1) as f64
    }

    /// Count in the conventional accounting: `2^{ℓ+1}` for static problems,
    /// `2^{ℓ+1} + ℓ` with block positivity and `3^{ℓ+1}` without it.
    pub fn nominal_constraint_count(&self) -> usize {
        let l = self.n_params() as u32;
        match (self.rate_bounded, self.block_positivity) {
            (false, _) => 2usize.pow(l + 1),
            (true, true) => 2usize.pow(l + 1) + l as usize,
            (true, false) => 3usize.pow(l + 1),
        }
    }

    pub fn is_rate_bounded(&self) -> bool {
        self.rate_bounded
    }

    pub fn with_objective(mut self, objective: LmiObjective) -> Self {
        self.objective = objective;
        self
    }

    /// Toggles the convexity constraints. Without them the vertex LMIs do not
    /// bound the Lyapunov residual inside the box.
    pub fn with_convexity(mut self, on: bool) -> Self {
        self.convexity = on;
        self
    }

    pub fn has_convexity(&self) -> bool {
        self.convexity
    }

    pub fn with_margin(mut self, margin: f64) -> Self {
        self.margin = margin;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    fn weights(vertex: &[f64]) -> Vec<f64> {
        std::iter::once(1.0).chain(vertex.iter().copied()).collect()
    }

    fn combine(blocks: &[DMatrix<f64>], w: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(blocks[0].nrows(), blocks[0].ncols());
        for (b, &x) in blocks.iter().zip(w) {
            out += b * x;
        }
        out
    }

    /// Left-hand side `Σ r_i X_i + L_{A(w)}(f(w)) + G(w)G(w)ᵀ` of a Lyapunov constraint.
    pub fn lyapunov_residual(&self, blocks: &[DMatrix<f64>], vertex: &[f64], rate: &[f64]) -> DMatrix<f64> {
        let w = Self::weights(vertex);
        let a = Self::combine(&self.dyn_blocks, &w);
        let g = Self::combine(&self.input_blocks, &w);
        let f = Self::combine(blocks, &w);
        let af = &a * &f;
        let mut out = &af + af.transpose() + &g * g.transpose();
        for (i, &r) in rate.iter().enumerate() {
            out += &blocks[i + 1] * r;
        }
        linalg::sym(&out)
    }

    /// Quadratic coefficient `A_i X_i + X_i A_iᵀ + G_i G_iᵀ` of the residual along coordinate `i`.
    pub fn curvature(&self, blocks: &[DMatrix<f64>], i: usize) -> DMatrix<f64> {
        let ax = &self.dyn_blocks[i] * &blocks[i];
        linalg::sym(&(&ax + ax.transpose() + &self.input_blocks[i] * self.input_blocks[i].transpose()))
    }

    /// Worst constraint slack of candidate blocks: the largest
    /// `λ_max(residual) + δ` over Lyapunov constraints, `ε − λ_min` over
    /// positivity constraints and `−η − λ_min(curvature)` over convexity
    /// constraints. Non-positive means every constraint holds.
    pub fn worst_violation(&self, blocks: &[DMatrix<f64>]) -> f64 {
        let convexity = (1..=self.auxiliary_count())
            .map(|i| -self.convexity_slack() - linalg::lambda_min(&self.curvature(blocks, i)))
            .fold(f64::NEG_INFINITY, f64::max);
        self.constraints
            .iter()
            .map(|c| match c {
                LmiConstraint::Lyapunov { vertex, rate } => {
                    linalg::lambda_max(&self.lyapunov_residual(blocks, vertex, rate)) + self.margin
                }
                LmiConstraint::VertexPositivity { vertex } => {
                    self.epsilon - linalg::lambda_min(&Self::combine(blocks, &Self::weights(vertex)))
                }
                LmiConstraint::BlockPositivity { block } => {
                    self.epsilon - linalg::lambda_min(&blocks[*block])
                }
            })
            .fold(convexity, f64::max)
    }
}

fn lmi_data(model: &AffineLpvModel, kind: GramianKind) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
    if model.time().is_discrete() {
        return Err(Error::Config(
            "vertex LMIs are formulated for continuous-time models".into(),
        ));
    }
    Ok(match kind {
        GramianKind::Reachability => (model.a_blocks().to_vec(), model.b_blocks().to_vec()),
        GramianKind::Observability => (
            model.a_blocks().iter().map(|a| a.transpose()).collect(),
            model.c_blocks().iter().map(|c| c.transpose()).collect(),
        ),
    })
}

fn default_margin(model: &AffineLpvModel) -> f64 {
    let scale = linalg::spectral_norm(&model.a_blocks()[0]);
    1e-6 * if scale > 0.0 { scale } else { 1.0 }
}

/// Lyapunov inequality and positivity of `f` at every vertex (`2 · 2^ℓ`
/// constraints) plus one convexity constraint per parameter.
pub fn build_static_lmis(model: &AffineLpvModel, kind: GramianKind) -> Result<LmiProblem> {
    let (dyn_blocks, input_blocks) = lmi_data(model, kind)?;
    let vertices = model.theta_box().vertices()?;
    let zero_rate = vec![0.0; model.n_params()];
    let mut constraints: Vec<LmiConstraint> = vertices
        .iter()
        .map(|v| LmiConstraint::Lyapunov {
            vertex: v.clone(),
            rate: zero_rate.clone(),
        })
        .collect();
    constraints.extend(
        vertices
            .into_iter()
            .map(|vertex| LmiConstraint::VertexPositivity { vertex }),
    );
    Ok(LmiProblem {
        kind,
        constraints,
        objective: LmiObjective::TraceMin,
        margin: default_margin(model),
        epsilon: DEFAULT_EPSILON,
        rate_bounded: false,
        block_positivity: false,
        convexity: true,
        dyn_blocks,
        input_blocks,
    })
}

/// Rate-bounded variant. With block positivity only the upper rate corner is
/// kept; otherwise every distinct corner of the rate box is imposed.
pub fn build_rate_bounded_lmis(
    model: &AffineLpvModel,
    kind: GramianKind,
    enforce_block_positivity: bool,
) -> Result<LmiProblem> {
    let Some((_, upper)) = model.theta_box().rates() else {
        return Err(Error::Config("rate-bounded LMIs need rate bounds on the parameter box".into()));
    };
    let rates = if enforce_block_positivity {
        vec![upper.to_vec()]
    } else {
        model.theta_box().rate_corners()?
    };
    let (dyn_blocks, input_blocks) = lmi_data(model, kind)?;
    let vertices = model.theta_box().vertices()?;
    let mut constraints = Vec::new();
    for v in &vertices {
        for r in &rates {
            constraints.push(LmiConstraint::Lyapunov {
                vertex: v.clone(),
                rate: r.clone(),
            });
        }
    }
    constraints.extend(
        vertices
            .into_iter()
            .map(|vertex| LmiConstraint::VertexPositivity { vertex }),
    );
    if enforce_block_positivity {
        constraints.extend((1..=model.n_params()).map(|block| LmiConstraint::BlockPositivity { block }));
    }
    Ok(LmiProblem {
        kind,
        constraints,
        objective: LmiObjective::TraceMin,
        margin: default_margin(model),
        epsilon: DEFAULT_EPSILON,
        rate_bounded: true,
        block_positivity: enforce_block_positivity,
        convexity: true,
        dyn_blocks,
        input_blocks,
    })
}

#[derive(Clone, Debug)]
pub struct LmiSolveOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for LmiSolveOptions {
    fn default() -> Self {
        Self {
            max_iterations: 80,
            tolerance: 1e-9,
        }
    }
}

/// Solves with default options.
pub fn solve_lmi(problem: &LmiProblem) -> Result<AffineGramian> {
    solve_lmi_with(problem, &LmiSolveOptions::default())
}

/// Builds the conic program on rescaled data, solves it and maps the blocks back.
///
/// The dynamics are divided by `α = max_w ‖A(w)‖` and the unknowns by `β`, chosen
/// so the input term has unit norm. The solver works with doubled margins so
/// that its residual error cannot eat the requested strictness.
pub fn solve_lmi_with(problem: &LmiProblem, options: &LmiSolveOptions) -> Result<AffineGramian> {
    let n = problem.order();
    let l = problem.n_params();
    let k = l + 1;
    let vertex_weights: Vec<Vec<f64>> = problem
        .constraints
        .iter()
        .filter_map(|c| match c {
            LmiConstraint::Lyapunov { vertex, .. } | LmiConstraint::VertexPositivity { vertex } => {
                Some(LmiProblem::weights(vertex))
            }
            LmiConstraint::BlockPositivity { .. } => None,
        })
        .collect();
    let alpha = vertex_weights
        .iter()
        .map(|w| linalg::spectral_norm(&LmiProblem::combine(&problem.dyn_blocks, w)))
        .fold(0.0, f64::max);
    let alpha = if alpha > 0.0 { alpha } else { 1.0 };
    let gg = vertex_weights
        .iter()
        .map(|w| {
            let g = LmiProblem::combine(&problem.input_blocks, w);
            linalg::spectral_norm(&(&g * g.transpose()))
        })
        .fold(0.0, f64::max);
    let beta = if gg > 0.0 { gg / alpha } else { 1.0 };
    let margin = 2.0 * problem.margin / (alpha * beta);
    let epsilon = 2.0 * problem.epsilon / beta;
    let eye = DMatrix::<f64>::identity(n, n);
    let half = &eye * 0.5;

    let cones: Vec<SdpCone> = problem
        .constraints
        .iter()
        .map(|c| match c {
            LmiConstraint::Lyapunov { vertex, rate } => {
                let w = LmiProblem::weights(vertex);
                let a = LmiProblem::combine(&problem.dyn_blocks, &w) / alpha;
                let g = LmiProblem::combine(&problem.input_blocks, &w);
                let constant = -(&eye * margin) - (&g * g.transpose()) / (alpha * beta);
                let mut terms: Vec<SdpTerm> = w
                    .iter()
                    .enumerate()
                    .filter(|(_, &x)| x != 0.0)
                    .map(|(var, &coef)| SdpTerm { var, base: 0, coef })
                    .collect();
                terms.extend(
                    rate.iter()
                        .enumerate()
                        .filter(|(_, &r)| r != 0.0)
                        .map(|(i, &r)| SdpTerm {
                            var: i + 1,
                            base: 1,
                            coef: r / alpha,
                        }),
                );
                SdpCone {
                    constant,
                    bases: vec![a, half.clone()],
                    terms,
                }
            }
            LmiConstraint::VertexPositivity { vertex } => SdpCone {
                constant: -(&eye * epsilon),
                bases: vec![half.clone()],
                terms: LmiProblem::weights(vertex)
                    .iter()
                    .enumerate()
                    .filter(|(_, &x)| x != 0.0)
                    .map(|(var, &x)| SdpTerm { var, base: 0, coef: -x })
                    .collect(),
            },
            LmiConstraint::BlockPositivity { block } => SdpCone {
                constant: -(&eye * epsilon),
                bases: vec![half.clone()],
                terms: vec![SdpTerm {
                    var: *block,
                    base: 0,
                    coef: -1.0,
                }],
            },
        })
        .collect();
    let mut cones = cones;
    let eta = problem.convexity_slack() / (alpha * beta);
    for i in 1..=problem.auxiliary_count() {
        let g = &problem.input_blocks[i];
        let a = &problem.dyn_blocks[i] / alpha;
        let constant = (g * g.transpose()) / (alpha * beta) + &eye * eta;
        if a.iter().all(|&v| v == 0.0) {
            continue;
        }
        cones.push(SdpCone {
            constant,
            bases: vec![a],
            terms: vec![SdpTerm { var: i, base: 0, coef: -1.0 }],
        });
    }
    // Σ_w tr f(w) over the 2^ℓ vertices, normalised by 2^ℓ.
    let objective: Vec<DMatrix<f64>> = (0..k)
        .map(|b| if b == 0 { -&eye } else { -&half })
        .collect();
    let sdp_problem = SdpProblem {
        order: n,
        n_vars: k,
        objective,
        cones,
    };
    let mode = match problem.objective {
        LmiObjective::Feasibility => SdpMode::Feasibility,
        LmiObjective::TraceMin => SdpMode::Optimize,
    };
    let sol = sdp::solve(
        &sdp_problem,
        &SdpOptions {
            mode,
            max_iterations: options.max_iterations,
            tolerance: options.tolerance,
            ..SdpOptions::default()
        },
    )?;
    log::info!(
        "{:?} LMI: {:?} after {} iterations (min slack {:.2e})",
        problem.kind,
        sol.status,
        sol.iterations,
        sol.min_slack_eigenvalue
    );
    let blocks: Vec<DMatrix<f64>> = sol.variables.iter().map(|p| linalg::sym(&(p * beta))).collect();
    let status = match sol.status {
        SdpStatus::Optimal => SolveStatus::Optimal,
        SdpStatus::Feasible => SolveStatus::Feasible,
        SdpStatus::Infeasible => {
            return Err(Error::Infeasible(
                "no affine Gramian satisfies the vertex LMIs; reduce the margin, rescale the \
                 model, or check that it is quadratically stable"
                    .into(),
            ))
        }
        SdpStatus::Stalled => SolveStatus::Feasible,
    };
    let gram = AffineGramian {
        kind: problem.kind,
        blocks,
        margin: problem.margin,
        epsilon: problem.epsilon,
        objective: problem.objective,
        status,
        iterations: sol.iterations,
    };
    if sol.status == SdpStatus::Stalled {
        let violation = problem.worst_violation(&gram.blocks);
        if violation > 1e-9 * alpha * beta {
            return Err(Error::SolverStall {
                iterations: sol.iterations,
                best: Box::new(gram),
            });
        }
    }
    Ok(gram)
}

/// Solves the reachability and observability problems, concurrently when possible.
pub fn solve_pair(p: &LmiProblem, q: &LmiProblem) -> Result<(AffineGramian, AffineGramian)> {
    let (gp, gq) = rayon::join(|| solve_lmi(p), || solve_lmi(q));
    Ok((gp?, gq?))
}

/// Outcome of comparing an affine Gramian with exact Gramians at test points.
#[derive(Clone, Debug)]
pub struct UpperBoundReport {
    /// Smallest `λ_min(f(θ) − 𝒫(θ)) / λ_max(f(θ))` over the points.
    pub worst_margin: f64,
    pub worst_theta: Vec<f64>,
    pub violations: usize,
    pub points: usize,
}

impl UpperBoundReport {
    pub fn holds(&self) -> bool {
        self.violations == 0
    }
}

/// Checks `f(θ) ⪰ 𝒫(θ)` up to `UPPER_BOUND_TOLERANCE · λ_max(f(θ))`. Violations are counted, not raised.
pub fn verify_upper_bound(
    model: &AffineLpvModel,
    gram: &AffineGramian,
    samples: &[Vec<f64>],
) -> Result<UpperBoundReport> {
    use rayon::prelude::*;
    let rows = samples
        .par_iter()
        .map(|theta| {
            let sys = model.evaluate_at(theta)?;
            let exact = exact_gramian(&sys, gram.kind)?;
            let f = gram.evaluate(theta);
            let scale = linalg::lambda_max(&f).max(f64::MIN_POSITIVE);
            let gap = linalg::lambda_min(&(&f - exact));
            Ok((gap / scale, gap < -UPPER_BOUND_TOLERANCE * scale))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = UpperBoundReport {
        worst_margin: f64::INFINITY,
        worst_theta: Vec::new(),
        violations: 0,
        points: samples.len(),
    };
    for ((ratio, violated), theta) in rows.into_iter().zip(samples) {
        if ratio < report.worst_margin {
            report.worst_margin = ratio;
            report.worst_theta = theta.clone();
        }
        report.violations += violated as usize;
    }
    Ok(report)
}

/// Outcome of the Hankel-bound check `λ_max(𝒫𝒬) ≤ λ_max(f_P f_Q)`.
#[derive(Clone, Debug)]
pub struct HankelBoundReport {
    /// Largest `λ_max(𝒫𝒬) / λ_max(f_P f_Q)` over the points.
    pub worst_ratio: f64,
    pub worst_theta: Vec<f64>,
    pub violations: usize,
    pub points: usize,
}

pub fn verify_hankel_bound(
    model: &AffineLpvModel,
    gram_p: &AffineGramian,
    gram_q: &AffineGramian,
    samples: &[Vec<f64>],
) -> Result<HankelBoundReport> {
    use rayon::prelude::*;
    let rows = samples
        .par_iter()
        .map(|theta| {
            let exact = exact_gramians(&model.evaluate_at(theta)?)?;
            let lhs = linalg::lambda_max_product(&exact.p, &exact.q);
            let rhs = linalg::lambda_max_product(&gram_p.evaluate(theta), &gram_q.evaluate(theta));
            let ratio = if rhs > 0.0 { lhs / rhs } else if lhs > 0.0 { f64::INFINITY } else { 0.0 };
            Ok((ratio, lhs > (1.0 + UPPER_BOUND_TOLERANCE) * rhs))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = HankelBoundReport {
        worst_ratio: 0.0,
        worst_theta: Vec::new(),
        violations: 0,
        points: samples.len(),
    };
    for ((ratio, violated), theta) in rows.into_iter().zip(samples) {
        if ratio > report.worst_ratio || report.worst_theta.is_empty() {
            report.worst_ratio = ratio;
            report.worst_theta = theta.clone();
        }
        report.violations += violated as usize;
    }
    Ok(report)
}

/// Gramian blocks of a parameter-independent model computed exactly, packaged as an affine Gramian.
pub fn constant_gramian(sys: &LtiRealization, kind: GramianKind, n_params: usize) -> Result<AffineGramian> {
    let g = exact_gramian(sys, kind)?;
    let n = g.nrows();
    let mut blocks = vec![g];
    blocks.extend((0..n_params).map(|_| DMatrix::zeros(n, n)));
    Ok(AffineGramian {
        kind,
        blocks,
        margin: 0.0,
        epsilon: 0.0,
        objective: LmiObjective::Feasibility,
        status: SolveStatus::Feasible,
        iterations: 0,
    })
}
