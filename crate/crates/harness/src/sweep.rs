//! Reduction sweeps over methods and retained-parameter counts.
//!
//! A cell keeps `n_r` parameters, i.e. its projection has `n_r + 1` columns in
//! the centred chart. `n_r = 0` is the model frozen at the box centre and
//! `n_r = ℓ` the full model.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use lpvreduce::gramians::AffineGramian;
use lpvreduce::norms::{p_norm, EvalSet, NormKind};
use lpvreduce::reduce::{
    optimize_nested_from, subsystem_hankel_baseline, HankelObjectiveContext, OptimizerConfig, ProjectionRecord,
    ReductionMethod,
};
use lpvreduce::sensitivity::{covariance_to_projection, scm, tscm, CovarianceMatrix, ScmConfig, TscmConfig};
use lpvreduce::{AffineLpvModel, Error, ParameterProjection, Result};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::simulate::{simulate, SimulationSpec, Trace};

/// How the Gramian-product mismatch is measured; recorded in every report.
pub const OBJECTIVE_NORM: &str = "spectral norm of the Gramian-product difference, maximised over box vertices";
/// How subsystem scores are defined; recorded in every report.
pub const SUBSYSTEM_DEFINITION: &str =
    "Hankel norm of Σ(c + (u_i − c_i) e_i) − Σ(c) with c the box centre and u the upper bound";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepConfig {
    pub methods: Vec<ReductionMethod>,
    /// Retained-parameter counts, each in `0..=ℓ`.
    pub nr: Vec<usize>,
    pub seed: u64,
    pub eval_set: EvalSet,
    pub optimizer: OptimizerConfig,
    pub tscm: TscmConfig,
    pub scm: ScmConfig,
    /// Seed Hankel runs with the sensitivity projections of the same size.
    pub sensitivity_warm_starts: bool,
    pub simulation: Option<SimulationSpec>,
}

impl SweepConfig {
    pub fn new(l: usize) -> Self {
        Self {
            methods: ReductionMethod::ALL.to_vec(),
            nr: (0..=l).collect(),
            seed: 0,
            eval_set: EvalSet::default(),
            optimizer: OptimizerConfig::default(),
            tscm: TscmConfig::default(),
            scm: ScmConfig::default(),
            sensitivity_warm_starts: true,
            simulation: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub method: ReductionMethod,
    pub n_r: usize,
    pub relative_error: Option<f64>,
    pub error_norm: Option<f64>,
    pub argmax_theta: Option<Vec<f64>>,
    /// Gramian-product mismatch of the projection, when Gramians are available.
    pub objective: Option<f64>,
    pub projection: Option<ProjectionRecord>,
    /// `max_k ‖y(k) − y_r(k)‖_∞ / max_k ‖y(k)‖_∞` for the simulation experiment.
    pub simulation_error: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReductionReport {
    pub dims: [usize; 4],
    pub seed: u64,
    pub evaluation_set: String,
    pub reference_norm: f64,
    pub objective_norm: String,
    pub subsystem_definition: String,
    pub tscm: Option<CovarianceMatrix>,
    pub scm: Option<CovarianceMatrix>,
    pub simulation_theta: Option<Vec<f64>>,
    pub cells: Vec<SweepCell>,
    /// Wall-clock seconds per stage; the only non-reproducible entries.
    pub timings: BTreeMap<String, f64>,
}

impl ReductionReport {
    pub fn cell(&self, method: ReductionMethod, n_r: usize) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.method == method && c.n_r == n_r)
    }

    /// Relative errors of one method ordered by `n_r`, failed cells omitted.
    pub fn errors(&self, method: ReductionMethod) -> Vec<(usize, f64)> {
        let mut v: Vec<(usize, f64)> = self
            .cells
            .iter()
            .filter(|c| c.method == method)
            .filter_map(|c| c.relative_error.map(|e| (c.n_r, e)))
            .collect();
        v.sort_by_key(|e| e.0);
        v
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// `method,n_r,relative_error,objective,simulation_error`.
    pub fn write_error_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "method,n_r,relative_error,objective,simulation_error")?;
        let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.12e}"));
        for c in &self.cells {
            writeln!(
                out,
                "{},{},{},{},{}",
                c.method.name(),
                c.n_r,
                fmt(c.relative_error),
                fmt(c.objective),
                fmt(c.simulation_error)
            )?;
        }
        out.flush()?;
        Ok(())
    }
}

struct Planned {
    method: ReductionMethod,
    n_r: usize,
    projection: Result<(ParameterProjection, Option<f64>)>,
}

/// Runs every `(method, n_r)` cell. Failures are recorded per cell; only
/// configuration errors and a failing reference norm abort the sweep.
///
/// `csv_dir`, when given, receives one simulation CSV per cell
/// (`sim_<method>_nr<k>.csv`, with error columns) plus the reference run.
pub fn run_reduction_sweep(
    model: &AffineLpvModel,
    gramians: Option<(&AffineGramian, &AffineGramian)>,
    config: &SweepConfig,
    csv_dir: Option<&Path>,
) -> Result<ReductionReport> {
    let l = model.n_params();
    if let Some(bad) = config.nr.iter().find(|&&k| k > l) {
        return Err(Error::Dimension(format!("n_r = {bad} exceeds the {l} model parameters")));
    }
    let mut timings = BTreeMap::new();
    let wants = |m: ReductionMethod| config.methods.contains(&m);

    let clock = Instant::now();
    let reference = p_norm(model, NormKind::Hinf, &config.eval_set)?;
    if reference.value == 0.0 {
        return Err(Error::Degenerate("reference model has zero p∞,∞ norm".into()));
    }
    timings.insert("reference_norm".into(), clock.elapsed().as_secs_f64());

    let need_tscm = wants(ReductionMethod::Tscm) || (wants(ReductionMethod::Hankel) && config.sensitivity_warm_starts);
    let need_scm = wants(ReductionMethod::Scm) || (wants(ReductionMethod::Hankel) && config.sensitivity_warm_starts);
    let clock = Instant::now();
    let tscm_cov = need_tscm.then(|| tscm(model, &config.tscm));
    timings.insert("tscm".into(), clock.elapsed().as_secs_f64());
    let clock = Instant::now();
    let scm_cov = need_scm.then(|| scm(model, &config.scm));
    timings.insert("scm".into(), clock.elapsed().as_secs_f64());

    let ctx = match gramians {
        Some((p, q)) => Some(HankelObjectiveContext::new(model, p, q)),
        None => None,
    };
    let full = || -> Result<ParameterProjection> {
        ParameterProjection::identity(l).with_center(model.theta_box().center())
    };
    let nominal = || -> Result<ParameterProjection> {
        ParameterProjection::constant_only(l).with_center(model.theta_box().center())
    };
    let covariance_projection = |cov: &Option<Result<CovarianceMatrix>>, k: usize| -> Result<ParameterProjection> {
        match cov {
            Some(Ok(c)) => covariance_to_projection(c, k + 1, true),
            Some(Err(e)) => Err(Error::Numerical(format!("covariance unavailable: {e}"))),
            None => Err(Error::Config("covariance not computed".into())),
        }
    };

    let clock = Instant::now();
    let mut hankel: BTreeMap<usize, Result<(ParameterProjection, Option<f64>)>> = BTreeMap::new();
    if wants(ReductionMethod::Hankel) {
        // n_r = 0 is the nominal model for every method; the optimised chain
        // starts from it so that each level is seeded by the one below.
        let max_k = config.nr.iter().copied().filter(|&k| k > 0 && k < l).max();
        match (&ctx, max_k) {
            (Some(Ok(ctx)), Some(max_k)) => {
                let warm = |columns: usize| -> Vec<DMatrix<f64>> {
                    if !config.sensitivity_warm_starts {
                        return Vec::new();
                    }
                    [&tscm_cov, &scm_cov]
                        .into_iter()
                        .filter_map(|c| covariance_projection(c, columns - 1).ok())
                        .map(|p| p.t_r().clone())
                        .collect()
                };
                let mut cfg = config.optimizer.clone();
                cfg.seed = config.seed;
                let base = ParameterProjection::constant_only(l).t_r().clone();
                match optimize_nested_from(ctx, Some(&base), max_k + 1, &cfg, &warm) {
                    Ok(runs) => {
                        for (k, run) in (1..).zip(runs) {
                            hankel.insert(k, Ok((run.projection, Some(run.objective))));
                        }
                    }
                    Err(e) => {
                        let msg = e.to_string();
                        for k in 1..=max_k {
                            hankel.insert(k, Err(Error::Numerical(msg.clone())));
                        }
                    }
                }
            }
            (Some(Err(e)), _) => {
                let msg = e.to_string();
                for &k in &config.nr {
                    hankel.insert(k, Err(Error::Numerical(format!("Gramians rejected: {msg}"))));
                }
            }
            (None, _) => {
                for &k in &config.nr {
                    hankel.insert(k, Err(Error::Config("Hankel method needs Gramians".into())));
                }
            }
            _ => {}
        }
        if config.nr.contains(&0) {
            hankel.insert(0, nominal().map(|p| {
                let f = ctx.as_ref().and_then(|c| c.as_ref().ok()).map(|c| c.objective(p.t_r()));
                (p, f)
            }));
        }
        if config.nr.contains(&l) {
            hankel.insert(l, full().map(|p| (p, Some(0.0))));
        }
    }
    timings.insert("hankel_optimisation".into(), clock.elapsed().as_secs_f64());

    let objective_of = |p: &ParameterProjection| -> Option<f64> {
        match &ctx {
            Some(Ok(ctx)) => Some(ctx.objective(p.t_r())),
            _ => None,
        }
    };
    let mut planned = Vec::new();
    for &method in &config.methods {
        for &k in &config.nr {
            let projection = match method {
                ReductionMethod::Hankel => hankel
                    .remove(&k)
                    .unwrap_or_else(|| Err(Error::Config("no Hankel result".into()))),
                _ if k == l => full().map(|p| {
                    let f = objective_of(&p);
                    (p, f)
                }),
                ReductionMethod::Tscm => covariance_projection(&tscm_cov, k).map(|p| {
                    let f = objective_of(&p);
                    (p, f)
                }),
                ReductionMethod::Scm => covariance_projection(&scm_cov, k).map(|p| {
                    let f = objective_of(&p);
                    (p, f)
                }),
                ReductionMethod::Subsys => subsystem_hankel_baseline(model, k + 1).map(|(p, _)| {
                    let f = objective_of(&p);
                    (p, f)
                }),
            };
            planned.push(Planned { method, n_r: k, projection });
        }
    }

    let clock = Instant::now();
    let reference_trace = match &config.simulation {
        Some(spec) => Some(simulate(model, spec)?),
        None => None,
    };
    if let (Some(dir), Some(tr)) = (csv_dir, &reference_trace) {
        tr.write_csv(dir.join("sim_reference.csv"), None)?;
    }
    let cells: Vec<SweepCell> = planned
        .into_par_iter()
        .map(|p| evaluate_cell(model, p, config, reference.value, reference_trace.as_ref(), csv_dir))
        .collect();
    timings.insert("cells".into(), clock.elapsed().as_secs_f64());

    Ok(ReductionReport {
        dims: [model.n_states(), model.n_inputs(), model.n_outputs(), l],
        seed: config.seed,
        evaluation_set: config.eval_set.describe(),
        reference_norm: reference.value,
        objective_norm: OBJECTIVE_NORM.into(),
        subsystem_definition: SUBSYSTEM_DEFINITION.into(),
        tscm: tscm_cov.and_then(|c| c.ok()),
        scm: scm_cov.and_then(|c| c.ok()),
        simulation_theta: reference_trace.map(|t| t.theta),
        cells,
        timings,
    })
}

fn evaluate_cell(
    model: &AffineLpvModel,
    planned: Planned,
    config: &SweepConfig,
    reference_norm: f64,
    reference: Option<&Trace>,
    csv_dir: Option<&Path>,
) -> SweepCell {
    let mut cell = SweepCell {
        method: planned.method,
        n_r: planned.n_r,
        relative_error: None,
        error_norm: None,
        argmax_theta: None,
        objective: None,
        projection: None,
        simulation_error: None,
        failure: None,
    };
    let outcome = (|| -> Result<()> {
        let (proj, objective) = planned.projection?;
        cell.objective = objective;
        let seed = matches!(planned.method, ReductionMethod::Hankel).then_some(config.seed);
        cell.projection = Some(ProjectionRecord::new(&proj, planned.method, objective, seed));
        let reduced = model.apply_projection(&proj)?;
        let error = p_norm(&model.difference(&reduced)?, NormKind::Hinf, &config.eval_set)?;
        cell.error_norm = Some(error.value);
        cell.relative_error = Some(error.value / reference_norm);
        cell.argmax_theta = Some(error.argmax_theta);
        if let (Some(spec), Some(full)) = (&config.simulation, reference) {
            let tr = simulate(&reduced, spec)?;
            let diff = full.output_difference(&tr)?;
            let peak = |rows: &[Vec<f64>]| rows.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
            let scale = peak(&full.y);
            cell.simulation_error = Some(if scale > 0.0 { peak(&diff) / scale } else { peak(&diff) });
            if let Some(dir) = csv_dir {
                tr.write_csv(dir.join(format!("sim_{}_nr{}.csv", planned.method.name(), planned.n_r)), Some(&diff))?;
            }
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        log::warn!("{} n_r={} failed: {e}", planned.method.name(), planned.n_r);
        cell.failure = Some(e.to_string());
    }
    cell
}
