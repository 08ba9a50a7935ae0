//! Seeded example models: a random affine LPV system and a thermal RC network.

use lpvreduce::{AffineLpvModel, ParameterBox, Result, TimeKind};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

/// Random model settings.
///
/// `A_0 = −(GGᵀ/n + decay·I) + skew·(K − Kᵀ)/√n` has a symmetric part below
/// `−decay·I`; each `A_i = −s_i·H_iH_iᵀ/n` is symmetric negative definite with
/// `s_i = param_scale / i`, so the symmetric part of `A(θ)` stays below
/// `−decay·I` on the whole box. `B_0` and `C_0` have unit-variance entries
/// (`C_0` scaled by `1/√n`); `B_i`, `C_i` use `input_scale·s_i` and `D` entries
/// use `feedthrough_scale` (times `s_i` for `i ≥ 1`).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RandomModelConfig {
    pub n: usize,
    pub l: usize,
    pub m: usize,
    pub q: usize,
    pub decay: f64,
    pub skew: f64,
    pub param_scale: f64,
    pub input_scale: f64,
    pub feedthrough_scale: f64,
}

impl Default for RandomModelConfig {
    fn default() -> Self {
        Self {
            n: 45,
            l: 5,
            m: 2,
            q: 2,
            decay: 0.2,
            skew: 1.0,
            param_scale: 1.0,
            input_scale: 0.5,
            feedthrough_scale: 0.1,
        }
    }
}

fn normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn generate_random_model(seed: u64, cfg: &RandomModelConfig) -> Result<AffineLpvModel> {
    let RandomModelConfig { n, l, m, q, .. } = *cfg;
    if n == 0 || m == 0 || q == 0 {
        return Err(lpvreduce::Error::Config("random model dimensions must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nf = n as f64;
    let g = normal(n, n, &mut rng);
    let k = normal(n, n, &mut rng);
    let a0 = -(&g * g.transpose() / nf + DMatrix::identity(n, n) * cfg.decay)
        + (&k - k.transpose()) * (cfg.skew / nf.sqrt());
    let mut a = vec![a0];
    let mut b = vec![normal(n, m, &mut rng)];
    let mut c = vec![normal(q, n, &mut rng) / nf.sqrt()];
    let mut d = vec![normal(q, m, &mut rng) * cfg.feedthrough_scale];
    for i in 1..=l {
        let s = cfg.param_scale / i as f64;
        let h = normal(n, n, &mut rng);
        a.push(-(&h * h.transpose()) * (s / nf));
        b.push(normal(n, m, &mut rng) * (cfg.input_scale * s));
        c.push(normal(q, n, &mut rng) * (cfg.input_scale * s / nf.sqrt()));
        d.push(normal(q, m, &mut rng) * (cfg.feedthrough_scale * s));
    }
    AffineLpvModel::new(a, b, c, d, ParameterBox::unit(l), TimeKind::Continuous)
}

/// Thermal network settings.
///
/// Nodes form `blocks` square-ish grids of `nodes_per_block` nodes chained
/// side by side. Conductances inside a block are uniform in
/// `intra_conductance`; neighbouring blocks touch through `inter_conductance`
/// links between facing nodes, and every node loses `ambient_loss` to ambient.
/// Block `b` has nominal heat capacity `c_b` per node, uniform in
/// `capacity_range`; `θ_b ∈ [0, 1]` sets its inverse capacity to
/// `(0.5 + θ_b)/c_b`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ThermalConfig {
    pub blocks: usize,
    pub nodes_per_block: usize,
    pub capacity_range: (f64, f64),
    pub intra_conductance: (f64, f64),
    pub inter_conductance: f64,
    pub ambient_loss: f64,
    pub heated_blocks: Vec<usize>,
    pub sensor_blocks: Vec<usize>,
}

impl Default for ThermalConfig {
    fn default() -> Self {
        Self {
            blocks: 5,
            nodes_per_block: 9,
            capacity_range: (50.0, 150.0),
            intra_conductance: (1.0, 5.0),
            inter_conductance: 1.0,
            ambient_loss: 0.5,
            heated_blocks: vec![0, 2],
            sensor_blocks: vec![1, 4],
        }
    }
}

/// Conductance Laplacian of the network (without the ambient loss).
pub fn thermal_laplacian(seed: u64, cfg: &ThermalConfig) -> DMatrix<f64> {
    thermal_parts(seed, cfg).0
}

fn thermal_parts(seed: u64, cfg: &ThermalConfig) -> (DMatrix<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per = cfg.nodes_per_block;
    let n = cfg.blocks * per;
    let side = (per as f64).sqrt().ceil() as usize;
    let rows = per.div_ceil(side);
    let mut lap = DMatrix::zeros(n, n);
    let connect = |lap: &mut DMatrix<f64>, i: usize, j: usize, g: f64| {
        lap[(i, i)] += g;
        lap[(j, j)] += g;
        lap[(i, j)] -= g;
        lap[(j, i)] -= g;
    };
    let intra = Uniform::new_inclusive(cfg.intra_conductance.0, cfg.intra_conductance.1)
        .expect("valid conductance range");
    let cap = Uniform::new_inclusive(cfg.capacity_range.0, cfg.capacity_range.1)
        .expect("valid capacity range");
    // Node k of a block sits at (k / side, k % side).
    for blk in 0..cfg.blocks {
        let base = blk * per;
        for k in 0..per {
            let (r, col) = (k / side, k % side);
            if col + 1 < side && k + 1 < per {
                connect(&mut lap, base + k, base + k + 1, intra.sample(&mut rng));
            }
            if r + 1 < rows && k + side < per {
                connect(&mut lap, base + k, base + k + side, intra.sample(&mut rng));
            }
        }
        if blk + 1 < cfg.blocks {
            for r in 0..rows {
                let right = r * side + side - 1;
                let left = r * side;
                if right < per {
                    connect(&mut lap, base + right, base + per + left, cfg.inter_conductance);
                }
            }
        }
    }
    let capacities = (0..cfg.blocks).map(|_| cap.sample(&mut rng)).collect();
    (lap, capacities)
}

pub fn generate_thermal_model(seed: u64, cfg: &ThermalConfig) -> Result<AffineLpvModel> {
    let per = cfg.nodes_per_block;
    if cfg.blocks == 0 || per == 0 {
        return Err(lpvreduce::Error::Config("thermal network needs blocks and nodes".into()));
    }
    if cfg.heated_blocks.iter().chain(&cfg.sensor_blocks).any(|&b| b >= cfg.blocks) {
        return Err(lpvreduce::Error::Dimension("heater or sensor block out of range".into()));
    }
    let n = cfg.blocks * per;
    let (lap, capacities) = thermal_parts(seed, cfg);
    let k = -(lap + DMatrix::identity(n, n) * cfg.ambient_loss);
    let centre = per / 2;
    let m = cfg.heated_blocks.len();
    let q = cfg.sensor_blocks.len();
    let mut heat = DMatrix::zeros(n, m);
    for (j, &b) in cfg.heated_blocks.iter().enumerate() {
        heat[(b * per + centre, j)] = 1.0;
    }
    let mut c = DMatrix::zeros(q, n);
    for (j, &b) in cfg.sensor_blocks.iter().enumerate() {
        c[(j, b * per + centre)] = 1.0;
    }
    let inverse = |blk: Option<usize>, offset: f64| {
        DMatrix::from_fn(n, n, |r, s| {
            let owner = r / per;
            if r == s && blk.is_none_or(|b| b == owner) {
                offset / capacities[owner]
            } else {
                0.0
            }
        })
    };
    let mut e = vec![inverse(None, 0.5)];
    e.extend((0..cfg.blocks).map(|b| inverse(Some(b), 1.0)));
    let a = e.iter().map(|ei| ei * &k).collect();
    let b = e.iter().map(|ei| ei * &heat).collect();
    let mut cs = vec![c];
    cs.extend((0..cfg.blocks).map(|_| DMatrix::zeros(q, n)));
    let d = vec![DMatrix::zeros(q, m); cfg.blocks + 1];
    AffineLpvModel::new(a, b, cs, d, ParameterBox::unit(cfg.blocks), TimeKind::Continuous)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_dimensions_and_determinism() {
        let cfg = RandomModelConfig::default();
        let m1 = generate_random_model(3, &cfg).unwrap();
        assert_eq!(
            (m1.n_states(), m1.n_params(), m1.n_inputs(), m1.n_outputs()),
            (45, 5, 2, 2)
        );
        assert_eq!(m1, generate_random_model(3, &cfg).unwrap());
        assert_ne!(m1, generate_random_model(4, &cfg).unwrap());
    }

    #[test]
    fn random_model_is_vertex_stable() {
        let m = generate_random_model(11, &RandomModelConfig::default()).unwrap();
        for v in m.theta_box().vertices().unwrap() {
            assert!(m.evaluate_at(&v).unwrap().stability_margin().unwrap() < 0.0);
        }
        for a in &m.a_blocks()[1..] {
            assert!(lpvreduce::linalg::lambda_max(a) < 0.0);
        }
    }

    #[test]
    fn thermal_structure() {
        let cfg = ThermalConfig::default();
        let m = generate_thermal_model(0, &cfg).unwrap();
        assert_eq!(
            (m.n_states(), m.n_params(), m.n_inputs(), m.n_outputs()),
            (45, 5, 2, 2)
        );
        let lap = thermal_laplacian(0, &cfg);
        for i in 0..45 {
            assert!(lap.row(i).sum().abs() < 1e-12);
        }
        assert!(m.ensure_stable().is_ok());
        assert!(m.c_blocks()[1..].iter().all(|c| c.iter().all(|&v| v == 0.0)));
    }
}
