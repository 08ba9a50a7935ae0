use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use lpvreduce::gramians::{
    build_rate_bounded_lmis, build_static_lmis, solve_pair, AffineGramian, LmiObjective,
};
use lpvreduce::norms::{p_norm, relative_pinf_error, EvalSet, NormKind};
use lpvreduce::reduce::{
    optimize_projection, subsystem_hankel_baseline, HankelObjectiveContext, OptimizerConfig, ProjectionRecord,
    ReductionMethod,
};
use lpvreduce::sensitivity::{covariance_to_projection, scm, tscm, ScmConfig, TscmConfig};
use lpvreduce::{AffineLpvModel, Error, ParameterProjection};
use lpvreduce_harness::generate::{generate_random_model, generate_thermal_model, RandomModelConfig, ThermalConfig};
use lpvreduce_harness::simulate::{simulate, SimulationSpec};
use lpvreduce_harness::sweep::{run_reduction_sweep, SweepConfig};

/// Worker-count override for the thread pool.
const THREADS_VAR: &str = "LPVREDUCE_THREADS";

#[derive(Parser)]
#[command(name = "lpvreduce", version, about = "Parameter-space reduction for affine LPV models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Generator {
    Random,
    Thermal,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormChoice {
    PinfHankel,
    PinfHinf,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded example model.
    Gen {
        kind: Generator,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesise affine upper-bound Gramians; writes <out>_P.json and <out>_Q.json.
    Gramians {
        model: PathBuf,
        #[arg(long)]
        rate_bounded: bool,
        /// With --rate-bounded, require every parameter block to be positive semidefinite.
        #[arg(long)]
        block_positivity: bool,
        #[arg(long)]
        trace_min: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute a parameter projection.
    Reduce {
        model: PathBuf,
        #[arg(long)]
        method: String,
        /// Number of retained parameters (the projection gets one more column).
        #[arg(long)]
        nr: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Gramian prefix as written by `gramians` (hankel method).
        #[arg(long)]
        gramians: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parametric norm of a model, or relative error of a projection.
    Eval {
        model: PathBuf,
        #[arg(long, value_enum)]
        norm: NormChoice,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        projection: Option<PathBuf>,
    },
    /// Time simulation; writes t,u1..um,y1..yq[,e1..eq].
    Simulate {
        model: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        csv: PathBuf,
        /// Also simulate the projected model and append error columns.
        #[arg(long)]
        projection: Option<PathBuf>,
    },
    /// Sweep methods and retained-parameter counts.
    Sweep {
        model: PathBuf,
        /// Comma-separated list of hankel, tscm, scm, subsys.
        #[arg(long, default_value = "hankel,tscm,scm,subsys")]
        methods: String,
        /// Range `a..b` (inclusive) or comma list of retained-parameter counts.
        #[arg(long)]
        nr: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        gramians: Option<PathBuf>,
        /// Optional sweep configuration JSON; command-line values override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        simulation: Option<PathBuf>,
        #[arg(long)]
        csv_dir: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
    },
}

fn gramian_paths(prefix: &Path) -> (PathBuf, PathBuf) {
    let with = |suffix: &str| {
        let mut s = prefix.as_os_str().to_owned();
        s.push(suffix);
        PathBuf::from(s)
    };
    (with("_P.json"), with("_Q.json"))
}

fn load_gramians(prefix: &Path) -> anyhow::Result<(AffineGramian, AffineGramian)> {
    let (p, q) = gramian_paths(prefix);
    Ok((
        AffineGramian::load(&p).with_context(|| format!("reading {}", p.display()))?,
        AffineGramian::load(&q).with_context(|| format!("reading {}", q.display()))?,
    ))
}

fn load_model(path: &Path) -> anyhow::Result<AffineLpvModel> {
    AffineLpvModel::load(path).with_context(|| format!("reading model {}", path.display()))
}

fn parse_nr(text: &str) -> anyhow::Result<Vec<usize>> {
    if let Some((a, b)) = text.split_once("..") {
        let (a, b): (usize, usize) = (a.trim().parse()?, b.trim().trim_start_matches('=').parse()?);
        if a > b {
            bail!("empty range {text}");
        }
        return Ok((a..=b).collect());
    }
    text.split(',').map(|s| Ok(s.trim().parse()?)).collect()
}

fn projection_for(
    model: &AffineLpvModel,
    method: ReductionMethod,
    nr: usize,
    seed: u64,
    gramians: Option<&Path>,
) -> anyhow::Result<ProjectionRecord> {
    let l = model.n_params();
    if nr > l {
        bail!(Error::Dimension(format!("--nr {nr} exceeds the {l} model parameters")));
    }
    let columns = nr + 1;
    let full = || ParameterProjection::identity(l).with_center(model.theta_box().center());
    let record = match method {
        ReductionMethod::Hankel => {
            let prefix = gramians.context("the hankel method needs --gramians")?;
            let (p, q) = load_gramians(prefix)?;
            let ctx = HankelObjectiveContext::new(model, &p, &q)?;
            if columns > l {
                ProjectionRecord::new(&full()?, method, Some(0.0), Some(seed))
            } else if nr == 0 {
                let nominal = ParameterProjection::constant_only(l).with_center(model.theta_box().center())?;
                let f = ctx.objective(nominal.t_r());
                ProjectionRecord::new(&nominal, method, Some(f), Some(seed))
            } else {
                let cfg = OptimizerConfig { seed, ..Default::default() };
                let run = optimize_projection(&ctx, columns, &cfg)?;
                ProjectionRecord::new(&run.projection, method, Some(run.objective), Some(seed))
            }
        }
        ReductionMethod::Tscm => {
            let cov = tscm(model, &TscmConfig::default())?;
            ProjectionRecord::new(&covariance_to_projection(&cov, columns, true)?, method, None, None)
        }
        ReductionMethod::Scm => {
            let cov = scm(model, &ScmConfig::default())?;
            ProjectionRecord::new(&covariance_to_projection(&cov, columns, true)?, method, None, None)
        }
        ReductionMethod::Subsys => {
            let (proj, _) = subsystem_hankel_baseline(model, columns)?;
            ProjectionRecord::new(&proj, method, None, None)
        }
    };
    Ok(record)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Gen { kind, seed, out } => {
            let model = match kind {
                Generator::Random => generate_random_model(seed, &RandomModelConfig::default())?,
                Generator::Thermal => generate_thermal_model(seed, &ThermalConfig::default())?,
            };
            model.save(&out)?;
            println!("wrote {}", out.display());
        }
        Command::Gramians { model, rate_bounded, block_positivity, trace_min, out } => {
            let model = load_model(&model)?;
            let objective = if trace_min { LmiObjective::TraceMin } else { LmiObjective::Feasibility };
            let build = |kind| {
                if rate_bounded {
                    build_rate_bounded_lmis(&model, kind, block_positivity)
                } else {
                    build_static_lmis(&model, kind)
                }
                .map(|p| p.with_objective(objective))
            };
            let p = build(lpvreduce::gramians::GramianKind::Reachability)?;
            let q = build(lpvreduce::gramians::GramianKind::Observability)?;
            println!(
                "{} vertex LMIs per Gramian ({} convexity constraints)",
                p.constraint_count(),
                p.auxiliary_count()
            );
            let (gp, gq) = solve_pair(&p, &q)?;
            let (pp, qp) = gramian_paths(&out);
            gp.save(&pp)?;
            gq.save(&qp)?;
            println!("wrote {} and {}", pp.display(), qp.display());
        }
        Command::Reduce { model, method, nr, seed, gramians, out } => {
            let model = load_model(&model)?;
            let method: ReductionMethod = method.parse()?;
            let record = projection_for(&model, method, nr, seed, gramians.as_deref())?;
            record.save(&out)?;
            println!("wrote {}", out.display());
        }
        Command::Eval { model, norm, samples, seed, projection } => {
            let model = load_model(&model)?;
            let eval_set = EvalSet::VerticesAndSamples { count: samples, seed };
            let which = match norm {
                NormChoice::PinfHankel => NormKind::Hankel,
                NormChoice::PinfHinf => NormKind::Hinf,
            };
            match projection {
                None => {
                    let r = p_norm(&model, which, &eval_set)?;
                    println!("{:.12e}", r.value);
                    println!("argmax θ = {:?} over {}", r.argmax_theta, r.evaluation_set);
                }
                Some(path) => {
                    let proj = ProjectionRecord::load(&path)?.projection()?;
                    let reduced = model.apply_projection(&proj)?;
                    if which == NormKind::Hinf {
                        let r = relative_pinf_error(&model, &reduced, &eval_set)?;
                        println!("{:.12e}", r.value);
                    } else {
                        let e = p_norm(&model.difference(&reduced)?, which, &eval_set)?;
                        let f = p_norm(&model, which, &eval_set)?;
                        println!("{:.12e}", e.value / f.value);
                    }
                }
            }
        }
        Command::Simulate { model, spec, csv, projection } => {
            let model = load_model(&model)?;
            let spec: SimulationSpec = serde_json::from_str(&std::fs::read_to_string(&spec)?)?;
            let trace = simulate(&model, &spec)?;
            match projection {
                None => trace.write_csv(&csv, None)?,
                Some(path) => {
                    let proj = ProjectionRecord::load(&path)?.projection()?;
                    let reduced = simulate(&model.apply_projection(&proj)?, &spec)?;
                    trace.write_csv(&csv, Some(&trace.output_difference(&reduced)?))?;
                }
            }
            println!("wrote {}", csv.display());
        }
        Command::Sweep { model, methods, nr, seed, gramians, config, simulation, csv_dir, report } => {
            let model = load_model(&model)?;
            let mut cfg = match config {
                Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
                None => SweepConfig::new(model.n_params()),
            };
            cfg.methods = methods
                .split(',')
                .map(|m| m.trim().parse())
                .collect::<Result<Vec<ReductionMethod>, Error>>()?;
            if let Some(nr) = nr {
                cfg.nr = parse_nr(&nr)?;
            }
            cfg.seed = seed;
            if let Some(path) = simulation {
                cfg.simulation = Some(serde_json::from_str(&std::fs::read_to_string(path)?)?);
            }
            let grams = gramians.as_deref().map(load_gramians).transpose()?;
            if let Some(dir) = &csv_dir {
                std::fs::create_dir_all(dir)?;
            }
            let rep = run_reduction_sweep(&model, grams.as_ref().map(|(p, q)| (p, q)), &cfg, csv_dir.as_deref())?;
            rep.save(&report)?;
            if let Some(dir) = &csv_dir {
                rep.write_error_csv(dir.join("relative_error.csv"))?;
            }
            for c in &rep.cells {
                match (c.relative_error, &c.failure) {
                    (Some(e), _) => println!("{:<7} n_r={} relative error {e:.4e}", c.method.name(), c.n_r),
                    (None, Some(f)) => println!("{:<7} n_r={} failed: {f}", c.method.name(), c.n_r),
                    _ => {}
                }
            }
            println!("wrote {}", report.display());
        }
    }
    Ok(())
}

/// 0 success, 1 usage or I/O, 2 numerical failure, 3 infeasible LMI.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Infeasible(_)) => 3,
        Some(e) if e.is_numerical() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Ok(value) = std::env::var(THREADS_VAR) {
        match value.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("warning: could not size the thread pool: {e}");
                }
            }
            _ => eprintln!("warning: ignoring {THREADS_VAR}={value:?}"),
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
