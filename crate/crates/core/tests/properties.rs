mod common;

use common::{random_generator, random_linear_field, random_polynomial};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use switchavg::perturbation::{
    build_corrector, build_corrector_with, centering_residual, residual_check, SignConvention,
};
use switchavg::system::{integrate_averaged, integrate_switched};
use switchavg::{ChainAnalysis, FieldKind, GeneratorMatrix, JumpPath, TestFunction, VelocityField};

fn chain_strategy(max_n: usize) -> impl Strategy<Value = (GeneratorMatrix, u64)> {
    (2..=max_n, any::<u64>()).prop_map(|(n, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (random_generator(n, &mut rng), seed)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generator_rows_sum_to_zero((g, _) in chain_strategy(10)) {
        let q = g.matrix();
        for x in 0..g.len() {
            prop_assert!(q.row(x).iter().sum::<f64>().abs() <= 1e-12);
            for y in 0..g.len() {
                if y != x {
                    prop_assert!(q[(x, y)] >= 0.0);
                }
            }
        }
    }

    #[test]
    fn chain_analysis_identities((g, _) in chain_strategy(10)) {
        let a = ChainAnalysis::new(&g).unwrap();
        let r = a.identity_residuals(&g);
        prop_assert!(r.balance <= 1e-10);
        prop_assert!(r.normalisation <= 1e-12);
        prop_assert!(a.pi.iter().all(|&p| p > 0.0));
        prop_assert!(r.q_r0 <= 1e-8 && r.r0_q <= 1e-8);
        prop_assert!(r.pi_r0 <= 1e-8 && r.r0_pi <= 1e-8);
        prop_assert!(r.r0_row_sums <= 1e-8);
    }

    #[test]
    fn semigroup_is_stochastic((g, _) in chain_strategy(6), t in 0.0..5.0f64) {
        let p = g.transition_semigroup(t).unwrap();
        for x in 0..g.len() {
            prop_assert!((p.row(x).iter().sum::<f64>() - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn perturbation_identity_on_random_chains(
        (g, seed) in chain_strategy(8),
        eps in prop::sample::select(vec![1.0, 0.1, 1e-3]),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
        let field = random_linear_field(g.len(), &mut rng);
        let phi = TestFunction::polynomial(random_polynomial(&mut rng));
        let a = ChainAnalysis::new(&g).unwrap();
        let grid: Vec<f64> = (0..=40).map(|k| -10.0 + 0.5 * k as f64).collect();
        let r = residual_check(&phi, eps, &g, &field, &a, &grid).unwrap();
        // 1e-10 absolute, or a few ulps once the terms reach ~1e6 (eps = 1, slow chains).
        let scale = r.rows.iter().map(|x| x.lhs.abs()).fold(0.0, f64::max);
        let tol = 1e-10_f64.max(4.0 * f64::EPSILON * scale);
        prop_assert!(r.max_residual <= tol, "residual {} (scale {scale})", r.max_residual);
        prop_assert_eq!(r.fast_term_max, 0.0);
        prop_assert!(r.corrector_form_gap <= 1e-12 * r.rows.iter().map(|x| x.lhs.abs()).fold(1.0, f64::max));
    }

    #[test]
    fn sign_conventions_agree((g, seed) in chain_strategy(6)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let field = random_linear_field(g.len(), &mut rng);
        let phi = TestFunction::polynomial(random_polynomial(&mut rng));
        let a = ChainAnalysis::new(&g).unwrap();
        let std = build_corrector_with(&phi, &field, &a, SignConvention::Standard).unwrap();
        let flip = build_corrector_with(&phi, &field, &a, SignConvention::Flipped).unwrap();
        for k in 0..=20 {
            let u = -1.0 + 0.1 * k as f64;
            for x in 0..g.len() {
                prop_assert!((std.value(u, x) - flip.value(u, x)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn centred_drift_averages_to_zero((g, seed) in chain_strategy(8)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let field = random_linear_field(g.len(), &mut rng);
        let phi = TestFunction::polynomial(random_polynomial(&mut rng));
        let a = ChainAnalysis::new(&g).unwrap();
        for k in 0..=20 {
            let u = -1.0 + 0.1 * k as f64;
            prop_assert!(centering_residual(&field, a.pi.as_slice(), &phi, u).abs() <= 1e-12);
        }
    }

    #[test]
    fn corrector_solves_poisson_equation((g, seed) in chain_strategy(8)) {
        // Q phi_1 = -B_tilde phi, checked with the plain matrix product.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let field = random_linear_field(g.len(), &mut rng);
        let phi = TestFunction::polynomial(random_polynomial(&mut rng));
        let a = ChainAnalysis::new(&g).unwrap();
        let phi1 = build_corrector(&phi, &field, &a).unwrap();
        let n = g.len();
        for u in [-3.0, 0.5, 2.0] {
            let v = nalgebra::DVector::from_fn(n, |x, _| phi1.value(u, x));
            let qv = g.matrix() * v;
            let bhat: f64 = (0..n).map(|y| a.pi[y] * field.value1(u, y)).sum();
            let d = phi.first(u).unwrap();
            for x in 0..n {
                let tilde = (field.value1(u, x) - bhat) * d;
                prop_assert!((qv[x] + tilde).abs() <= 1e-9 * tilde.abs().max(1.0));
            }
        }
    }

    #[test]
    fn state_is_continuous_across_jumps(seed in any::<u64>()) {
        let g = GeneratorMatrix::new(vec![1.0, 2.0], DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        let f = VelocityField::scalar(FieldKind::BoundedTrig, &[1.0, -2.0], &[0.5, 0.1]).unwrap();
        let path = g.simulate(0, 1.0, 0.05, switchavg::StreamKey::new(seed, 0)).unwrap();
        let s = integrate_switched(&f, &path, &[0.3], 0.01).unwrap();
        // Each jump time appears once on the grid; the state there is shared by
        // the interval that ends and the one that starts.
        for t in &path.jump_times {
            let k = s.times().iter().position(|x| x == t).unwrap();
            prop_assert!(s.times()[k - 1] < *t && s.times()[k + 1] > *t);
            prop_assert!(s.regimes()[k - 1] != s.regimes()[k]);
        }
    }

    #[test]
    fn flow_property(u0 in -2.0..2.0f64, a in -1.5..1.5f64, c in -1.0..1.0f64) {
        // [0, T] in one go equals [0, T/2] then [T/2, T] with the same steps.
        let f = VelocityField::scalar(FieldKind::BoundedTrig, &[a], &[c]).unwrap();
        let whole = integrate_averaged(&f, &[1.0], &[u0], 2.0, 0.01, &[]).unwrap();
        let first = integrate_averaged(&f, &[1.0], &[u0], 1.0, 0.01, &[]).unwrap();
        let second = integrate_averaged(&f, &[1.0], first.final_value(), 1.0, 0.01, &[]).unwrap();
        prop_assert!((whole.final_value()[0] - second.final_value()[0]).abs() <= 1e-9);
    }
}

#[test]
fn rk4_is_fourth_order_on_linear_field() {
    let f = VelocityField::scalar(FieldKind::Linear, &[1.0], &[0.0]).unwrap();
    let path = JumpPath::from_jumps(2.0, 1.0, vec![], vec![0]).unwrap();
    let exact = 2.0_f64.exp();
    let err = |h: f64| (integrate_switched(&f, &path, &[1.0], h).unwrap().final_value()[0] - exact).abs();
    for h in [0.2, 0.1, 0.05] {
        let ratio = err(h) / err(h / 2.0);
        assert!((ratio - 16.0).abs() < 1.5, "h = {h}: ratio {ratio}");
    }
}

#[test]
fn single_state_switched_matches_averaged_for_catalog_fields() {
    let g = GeneratorMatrix::new(vec![0.0], DMatrix::zeros(1, 1)).unwrap();
    let a = ChainAnalysis::new(&g).unwrap();
    let fields = [
        VelocityField::scalar(FieldKind::Constant, &[], &[0.7]).unwrap(),
        VelocityField::scalar(FieldKind::Linear, &[0.5], &[-0.2]).unwrap(),
        VelocityField::scalar(FieldKind::BoundedTrig, &[1.2], &[0.3]).unwrap(),
        VelocityField::scalar(FieldKind::Logistic, &[1.5], &[2.0]).unwrap(),
    ];
    for f in &fields {
        let path = g.simulate(0, 10.0, 0.1, switchavg::StreamKey::new(0, 0)).unwrap();
        let s = integrate_switched(f, &path, &[0.5], 0.01).unwrap();
        let avg = integrate_averaged(f, a.pi.as_slice(), &[0.5], 10.0, 0.01, &[]).unwrap();
        assert_eq!(s.times().len(), avg.times().len());
        for k in 0..s.times().len() {
            assert!((s.value(k)[0] - avg.value(k)[0]).abs() <= 1e-6, "{}", f.id());
        }
    }
}
