use lpvreduce::linalg;
use lpvreduce::reduce::HankelObjectiveContext;
use lpvreduce::{AffineLpvModel, ParameterBox, ParameterProjection, TimeKind};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const TOL: f64 = 1e-10;

fn normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn orthonormal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    linalg::orthonormalize(&normal(rows, cols, rng))
}

fn model(n: usize, l: usize, rng: &mut ChaCha8Rng) -> AffineLpvModel {
    let k = l + 1;
    let lower: Vec<f64> = (0..l).map(|_| rng.random_range(-2.0..0.0)).collect();
    let upper: Vec<f64> = lower.iter().map(|lo| lo + rng.random_range(0.5..3.0)).collect();
    let bx = ParameterBox::new(lower, upper).unwrap();
    AffineLpvModel::new(
        (0..k).map(|_| normal(n, n, rng)).collect(),
        (0..k).map(|_| normal(n, 2, rng)).collect(),
        (0..k).map(|_| normal(2, n, rng)).collect(),
        (0..k).map(|_| normal(2, 2, rng)).collect(),
        bx,
        TimeKind::Continuous,
    )
    .unwrap()
}

fn point(bx: &ParameterBox, rng: &mut ChaCha8Rng) -> Vec<f64> {
    bx.lower().iter().zip(bx.upper()).map(|(lo, hi)| rng.random_range(*lo..=*hi)).collect()
}

fn close(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    (a - b).norm() <= TOL * (1.0 + a.norm().max(b.norm()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// `X'(w T) = X(w)` for the transformed stacks.
    #[test]
    fn transformation_preserves_the_model(seed in any::<u64>(), n in 1usize..5, l in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = model(n, l, &mut rng);
        let t = orthonormal(l + 1, l + 1, &mut rng);
        let transformed = m.apply_transformation(&t).unwrap();
        let theta = point(m.theta_box(), &mut rng);
        let w = DMatrix::from_row_slice(1, l + 1, &[&[1.0][..], &theta].concat());
        let wt = &w * &t;
        let original = m.evaluate_at(&theta).unwrap();
        let mapped = transformed.evaluate_linear(wt.as_slice()).unwrap();
        prop_assert!(close(&original.a, &mapped.a));
        prop_assert!(close(&original.b, &mapped.b));
        prop_assert!(close(&original.c, &mapped.c));
        prop_assert!(close(&original.d, &mapped.d));
    }

    /// Projecting twice equals projecting once, for any centre.
    #[test]
    fn projection_is_idempotent(seed in any::<u64>(), n in 1usize..5, l in 1usize..5, r in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = model(n, l, &mut rng).normalized();
        let cols = r.min(l + 1);
        let center = point(m.theta_box(), &mut rng);
        let proj = ParameterProjection::new(orthonormal(l + 1, cols, &mut rng)).unwrap().with_center(center).unwrap();
        let pi = proj.projector();
        prop_assert!(close(&(&pi * &pi), &pi));
        prop_assert!(close(&proj.block_map(), &(proj.block_map() * proj.block_map())));
        let once = m.apply_projection(&proj).unwrap();
        let twice = once.apply_projection(&proj).unwrap();
        for (x, y) in once.a_blocks().iter().zip(twice.a_blocks()) {
            prop_assert!(close(x, y));
        }
        for (x, y) in once.b_blocks().iter().zip(twice.b_blocks()) {
            prop_assert!(close(x, y));
        }
        for (x, y) in once.c_blocks().iter().zip(twice.c_blocks()) {
            prop_assert!(close(x, y));
        }
    }

    /// The Gramian-product objective depends on the column span only.
    #[test]
    fn objective_is_rotation_invariant(seed in any::<u64>(), n in 1usize..5, l in 1usize..4, r in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = l + 1;
        let spd = |rng: &mut ChaCha8Rng| {
            let g = normal(n, n, rng);
            &g * g.transpose() + DMatrix::identity(n, n)
        };
        let p: Vec<_> = (0..k).map(|_| spd(&mut rng)).collect();
        let q: Vec<_> = (0..k).map(|_| spd(&mut rng)).collect();
        let vertices = ParameterBox::unit(l).vertices().unwrap();
        let ctx = HankelObjectiveContext::unchecked(&p, &q, vec![0.5; l], &vertices).unwrap();
        let cols = r.min(k);
        let t = orthonormal(k, cols, &mut rng);
        let rot = orthonormal(cols, cols, &mut rng);
        let (f1, f2) = (ctx.objective(&t), ctx.objective(&(&t * rot)));
        prop_assert!((f1 - f2).abs() <= TOL * (1.0 + ctx.scale()));
        prop_assert!(f1 >= 0.0);
    }

    /// Normalising the box leaves the model unchanged at corresponding points.
    #[test]
    fn normalisation_is_a_reparameterisation(seed in any::<u64>(), n in 1usize..4, l in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = model(n, l, &mut rng);
        let unit = m.normalized();
        let s: Vec<f64> = (0..l).map(|_| rng.random::<f64>()).collect();
        let theta: Vec<f64> = (0..l)
            .map(|i| m.theta_box().lower()[i] + s[i] * (m.theta_box().upper()[i] - m.theta_box().lower()[i]))
            .collect();
        prop_assert!(close(&m.evaluate_at(&theta).unwrap().a, &unit.evaluate_at(&s).unwrap().a));
        prop_assert!(close(&m.evaluate_at(&theta).unwrap().d, &unit.evaluate_at(&s).unwrap().d));
    }

    /// JSON round trip reproduces the normalised model exactly.
    #[test]
    fn json_round_trip(seed in any::<u64>(), n in 1usize..4, l in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = model(n, l, &mut rng).normalized();
        let back = AffineLpvModel::from_json(&m.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, m);
    }
}
