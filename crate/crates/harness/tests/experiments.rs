use lpvreduce::gramians::{build_static_lmis, solve_pair, AffineGramian, GramianKind};
use lpvreduce::linalg;
use lpvreduce::norms::{log_grid, EvalSet};
use lpvreduce::reduce::{optimize_projection, HankelObjectiveContext, OptimizerConfig};
use lpvreduce::sensitivity::{tscm, TscmConfig};
use lpvreduce::{AffineLpvModel, ParameterProjection};
use lpvreduce_harness::generate::{
    generate_random_model, generate_thermal_model, RandomModelConfig, ThermalConfig,
};
use lpvreduce_harness::simulate::{simulate, InputSegment, SimulationSpec, ThetaSpec};
use lpvreduce_harness::sweep::{run_reduction_sweep, SweepConfig};
use nalgebra::{DMatrix, DVector, Vector3};

fn random(seed: u64, n: usize, l: usize) -> AffineLpvModel {
    generate_random_model(seed, &RandomModelConfig { n, l, ..RandomModelConfig::default() }).unwrap()
}

fn gramians(model: &AffineLpvModel) -> (AffineGramian, AffineGramian) {
    let p = build_static_lmis(model, GramianKind::Reachability).unwrap();
    let q = build_static_lmis(model, GramianKind::Observability).unwrap();
    solve_pair(&p, &q).unwrap()
}

#[test]
fn error_trace_equals_difference_of_separate_runs() {
    let model = random(11, 6, 3);
    let proj = ParameterProjection::axes(3, &[0, 2]).unwrap().with_center(vec![0.5; 3]).unwrap();
    let reduced = model.apply_projection(&proj).unwrap();
    let error = model.difference(&reduced).unwrap();
    let spec = SimulationSpec {
        segments: vec![
            InputSegment { value: vec![1.0, -0.3], duration: 3.0 },
            InputSegment { value: vec![-0.5, 0.8], duration: 2.0 },
        ],
        t_final: 10.0,
        step: 0.01,
        theta: ThetaSpec::Random { seed: 5 },
        x0: None,
    };
    let y = simulate(&model, &spec).unwrap();
    let yr = simulate(&reduced, &spec).unwrap();
    let e = simulate(&error, &spec).unwrap();
    let diff = y.output_difference(&yr).unwrap();
    let scale = y.y.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for (row, direct) in e.y.iter().zip(&diff) {
        for (a, b) in row.iter().zip(direct) {
            assert!((a - b).abs() <= 1e-9 * scale, "{a} vs {b}");
        }
    }
}

#[test]
fn thermal_steady_state_matches_algebraic_solve() {
    let model = generate_thermal_model(0, &ThermalConfig::default()).unwrap();
    let theta = vec![0.3, 0.7, 0.5, 0.1, 0.9];
    let sys = model.evaluate_at(&theta).unwrap();
    let eig = linalg::eigenvalues(&sys.a).unwrap();
    let fastest = eig.iter().map(|l| l.norm()).fold(0.0, f64::max);
    let slowest = eig.iter().map(|l| -l.re).fold(f64::INFINITY, f64::min);
    let u = DVector::from_vec(vec![50.0, 45.0]);
    let spec = SimulationSpec {
        segments: vec![InputSegment { value: vec![50.0, 45.0], duration: 40.0 / slowest }],
        t_final: 40.0 / slowest,
        step: 1.0 / fastest,
        theta: ThetaSpec::Fixed(theta),
        x0: None,
    };
    let trace = simulate(&model, &spec).unwrap();
    let x_ss = sys.a.clone().lu().solve(&(-&sys.b * &u)).unwrap();
    let y_ss = &sys.c * x_ss;
    let last = trace.y.last().unwrap();
    for (a, b) in last.iter().zip(y_ss.iter()) {
        assert!((a - b).abs() <= 1e-6 * b.abs(), "{a} vs {b}");
    }
}

#[test]
fn thermal_outputs_return_to_ambient() {
    let model = generate_thermal_model(0, &ThermalConfig::default()).unwrap();
    let theta = ThetaSpec::Random { seed: 2 };
    let sys = model.evaluate_at(&theta.resolve(&model).unwrap()).unwrap();
    let slowest = linalg::eigenvalues(&sys.a).unwrap().iter().map(|l| -l.re).fold(f64::INFINITY, f64::min);
    let spec = SimulationSpec::pulse(vec![50.0, 45.0], 250.0, 250.0 + 20.0 / slowest, 0.5, theta);
    let trace = simulate(&model, &spec).unwrap();
    let peak = trace.y.iter().flatten().fold(0.0f64, |m, v| m.max(*v));
    assert!(peak > 0.0);
    let last = trace.y.last().unwrap();
    assert!(last.iter().all(|v| v.abs() < 1e-6 * peak), "{last:?} vs peak {peak}");
}

#[test]
fn tscm_grid_agrees_with_dense_frequency_grid() {
    let model = random(4, 6, 3);
    let coarse = tscm(&model, &TscmConfig { eval_set: EvalSet::Vertices, ..TscmConfig::default() }).unwrap();
    let mut freqs = vec![0.0];
    freqs.extend(log_grid(1e-3, 1e3, 10_000));
    let dense = tscm(&model, &TscmConfig { eval_set: EvalSet::Vertices, frequencies: freqs }).unwrap();
    let (a, b) = (coarse.matrix(), dense.matrix());
    let gap = (&a - &b).abs().max() / b.abs().max();
    assert!(gap <= 0.02, "relative gap {gap}");
}

#[test]
fn optimizer_matches_a_dense_search_for_two_parameters() {
    let model = random(21, 4, 2);
    let (p, q) = gramians(&model);
    let ctx = HankelObjectiveContext::new(&model, &p, &q).unwrap();
    // Frames in R³ of one and two columns, indexed by a unit vector on the hemisphere.
    let mut best = [f64::INFINITY; 2];
    for i in 0..=180 {
        for j in 0..360 {
            let (th, ph) = (i as f64 * std::f64::consts::FRAC_PI_2 / 180.0, j as f64 * std::f64::consts::TAU / 360.0);
            let v = Vector3::new(th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos());
            let helper = if v.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
            let e1 = v.cross(&helper).normalize();
            let e2 = v.cross(&e1);
            let line = DMatrix::from_column_slice(3, 1, v.as_slice());
            let plane = DMatrix::from_columns(&[
                DVector::from_column_slice(e1.as_slice()),
                DVector::from_column_slice(e2.as_slice()),
            ]);
            best[0] = best[0].min(ctx.objective(&line));
            best[1] = best[1].min(ctx.objective(&plane));
        }
    }
    let cfg = OptimizerConfig::default();
    for (cols, grid) in [(1, best[0]), (2, best[1])] {
        let found = optimize_projection(&ctx, cols, &cfg).unwrap().objective;
        assert!(found >= 0.0);
        assert!(found <= grid * (1.0 + 1e-9) + 1e-12, "{cols} columns: {found} vs grid {grid}");
    }
}

#[test]
fn optimizer_never_loses_to_an_axis_selection() {
    let model = random(8, 5, 3);
    let (p, q) = gramians(&model);
    let ctx = HankelObjectiveContext::new(&model, &p, &q).unwrap();
    let cfg = OptimizerConfig::default();
    for cols in 1..=3usize {
        let mut best = f64::INFINITY;
        for mask in 0u32..16 {
            if mask.count_ones() as usize != cols {
                continue;
            }
            let axes: Vec<usize> = (0..4).filter(|i| mask & (1 << i) != 0).collect();
            let frame = DMatrix::from_fn(4, cols, |r, c| if r == axes[c] { 1.0 } else { 0.0 });
            best = best.min(ctx.objective(&frame));
        }
        let found = optimize_projection(&ctx, cols, &cfg).unwrap().objective;
        assert!(found <= best, "{cols} columns: {found} vs best selection {best}");
    }
}

#[test]
fn sweep_reports_are_reproducible() {
    let model = random(2, 6, 3);
    let (p, q) = gramians(&model);
    let mut config = SweepConfig::new(3);
    config.eval_set = EvalSet::VerticesAndSamples { count: 6, seed: 1 };
    config.optimizer.n_starts = 4;
    config.simulation = Some(SimulationSpec::pulse(vec![1.0, 1.0], 2.0, 5.0, 0.05, ThetaSpec::Random { seed: 3 }));
    let run = || {
        let mut report = run_reduction_sweep(&model, Some((&p, &q)), &config, None).unwrap();
        report.timings.clear();
        serde_json::to_string(&report).unwrap()
    };
    let first = run();
    assert_eq!(first, run());
    let report: serde_json::Value = serde_json::from_str(&first).unwrap();
    let mut nominal = Vec::new();
    for cell in report["cells"].as_array().unwrap() {
        assert!(cell["failure"].is_null(), "{cell}");
        match cell["n_r"].as_u64().unwrap() {
            0 => nominal.push(cell["relative_error"].as_f64().unwrap()),
            3 => assert!(cell["relative_error"].as_f64().unwrap() <= 1e-8),
            _ => {}
        }
    }
    // Every method reduces n_r = 0 to the same nominal model.
    assert_eq!(nominal.len(), 4);
    assert!(nominal.iter().all(|e| e == &nominal[0]), "{nominal:?}");
}
