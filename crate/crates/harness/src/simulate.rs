//! Fixed-step time simulation at a frozen parameter value.

use std::io::Write;
use std::path::Path;

use lpvreduce::{AffineLpvModel, Error, LtiRealization, Result, TimeKind};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// State norms beyond this multiple of the initial scale abort the run.
pub const BLOW_UP_FACTOR: f64 = 1e12;

/// Input held constant for `duration` time units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputSegment {
    pub value: Vec<f64>,
    pub duration: f64,
}

/// Parameter value for a run, in the model's box coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaSpec {
    Fixed(Vec<f64>),
    /// Uniform draw from the box.
    Random { seed: u64 },
}

impl ThetaSpec {
    pub fn resolve(&self, model: &AffineLpvModel) -> Result<Vec<f64>> {
        let bx = model.theta_box();
        let theta = match self {
            ThetaSpec::Fixed(t) => t.clone(),
            ThetaSpec::Random { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                bx.lower()
                    .iter()
                    .zip(bx.upper())
                    .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
                    .collect()
            }
        };
        bx.check(&theta)?;
        Ok(theta)
    }
}

/// Piecewise-constant input experiment. After the last segment the input is zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub segments: Vec<InputSegment>,
    pub t_final: f64,
    /// Integration step; ignored for discrete models, which use their own step.
    pub step: f64,
    pub theta: ThetaSpec,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
}

impl SimulationSpec {
    /// Constant input `value` on `[0, on_time)`, zero afterwards.
    pub fn pulse(value: Vec<f64>, on_time: f64, t_final: f64, step: f64, theta: ThetaSpec) -> Self {
        Self {
            segments: vec![InputSegment { value, duration: on_time }],
            t_final,
            step,
            theta,
            x0: None,
        }
    }

    pub fn validate(&self, model: &AffineLpvModel) -> Result<()> {
        let m = model.n_inputs();
        if self.segments.iter().any(|s| !(s.duration > 0.0) || s.value.len() != m) {
            return Err(Error::Config(format!("segments need positive durations and {m} input values")));
        }
        if !(self.t_final >= 0.0 && self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Config("t_final must be nonnegative and step positive".into()));
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != model.n_states() {
                return Err(Error::Dimension(format!("x0 has {} entries, model has {} states", x0.len(), model.n_states())));
            }
        }
        Ok(())
    }

    /// Input at time `t`; segment boundaries belong to the later segment.
    pub fn input_at(&self, t: f64, m: usize) -> DVector<f64> {
        let mut start = 0.0;
        for s in &self.segments {
            if t < start + s.duration {
                return DVector::from_column_slice(&s.value);
            }
            start += s.duration;
        }
        DVector::zeros(m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub theta: Vec<f64>,
    pub t: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
}

impl Trace {
    /// Writes `t,u1..um,y1..yq[,e1..eq]`.
    pub fn write_csv(&self, path: impl AsRef<Path>, error: Option<&[Vec<f64>]>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let m = self.u.first().map_or(0, Vec::len);
        let q = self.y.first().map_or(0, Vec::len);
        let mut header = vec!["t".to_string()];
        header.extend((1..=m).map(|i| format!("u{i}")));
        header.extend((1..=q).map(|i| format!("y{i}")));
        if error.is_some() {
            header.extend((1..=q).map(|i| format!("e{i}")));
        }
        writeln!(out, "{}", header.join(","))?;
        for k in 0..self.t.len() {
            let mut row = vec![self.t[k]];
            row.extend(&self.u[k]);
            row.extend(&self.y[k]);
            if let Some(e) = error {
                row.extend(&e[k]);
            }
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.12e}")).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        out.flush()?;
        Ok(())
    }

    /// `y − other.y` sample by sample.
    pub fn output_difference(&self, other: &Trace) -> Result<Vec<Vec<f64>>> {
        if self.t.len() != other.t.len() {
            return Err(Error::Dimension("traces have different lengths".into()));
        }
        Ok(self
            .y
            .iter()
            .zip(&other.y)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect())
    }
}

fn rk4_step(sys: &LtiRealization, x: &DVector<f64>, u0: &DVector<f64>, u_mid: &DVector<f64>, u1: &DVector<f64>, h: f64) -> DVector<f64> {
    let f = |x: &DVector<f64>, u: &DVector<f64>| &sys.a * x + &sys.b * u;
    let k1 = f(x, u0);
    let k2 = f(&(x + &k1 * (h / 2.0)), u_mid);
    let k3 = f(&(x + &k2 * (h / 2.0)), u_mid);
    let k4 = f(&(x + &k3 * h), u1);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Classic fixed-step RK4 (continuous) or the state recursion (discrete).
///
/// The input is sampled at the start, middle and end of each step, so steps
/// that straddle a segment boundary see the switch at the mid point. No error
/// control is applied; accuracy is governed by `step` alone.
pub fn simulate(model: &AffineLpvModel, spec: &SimulationSpec) -> Result<Trace> {
    spec.validate(model)?;
    let theta = spec.theta.resolve(model)?;
    let sys = model.evaluate_at(&theta)?;
    let (n, m) = (sys.n_states(), sys.n_inputs());
    let h = match model.time() {
        TimeKind::Continuous => spec.step,
        TimeKind::Discrete { step } => step,
    };
    let steps = (spec.t_final / h).round() as usize;
    let mut x = spec
        .x0
        .as_ref()
        .map_or_else(|| DVector::zeros(n), |v| DVector::from_column_slice(v));
    let input_scale = spec
        .segments
        .iter()
        .flat_map(|s| s.value.iter())
        .fold(x.norm(), |acc, v| acc.max(v.abs()))
        .max(1.0);
    let mut trace = Trace {
        theta,
        t: Vec::with_capacity(steps + 1),
        u: Vec::with_capacity(steps + 1),
        y: Vec::with_capacity(steps + 1),
    };
    for k in 0..=steps {
        let t = k as f64 * h;
        let u = spec.input_at(t, m);
        trace.t.push(t);
        trace.y.push((&sys.c * &x + &sys.d * &u).iter().copied().collect());
        trace.u.push(u.iter().copied().collect());
        if k == steps {
            break;
        }
        x = match model.time() {
            TimeKind::Continuous => {
                let u_mid = spec.input_at(t + h / 2.0, m);
                let u1 = spec.input_at(t + h, m);
                rk4_step(&sys, &x, &u, &u_mid, &u1, h)
            }
            TimeKind::Discrete { .. } => &sys.a * &x + &sys.b * &u,
        };
        if !x.iter().all(|v| v.is_finite()) || x.norm() > BLOW_UP_FACTOR * input_scale {
            return Err(Error::Numerical(format!("state diverged at t = {:.4}", t + h)));
        }
    }
    Ok(trace)
}
