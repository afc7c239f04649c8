use hybrid_bai::confidence::{beta_radius, beta_radius_relaxed, ConfidenceState};
use hybrid_bai::design::DesignProblem;
use hybrid_bai::harness::Environment;
use hybrid_bai::{ActionStats, GeneratorSpec};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn beta_ordering(l in 0.0..1e4f64, d in 1usize..12, delta in 0.001..0.49f64, bump in 0.0..10.0f64) {
        let b = beta_radius(l, d, 5.0, delta).unwrap();
        prop_assert!(b >= (1.0 / delta).ln() - 1e-12);
        prop_assert!(b <= beta_radius_relaxed(l, d, 5.0, delta).unwrap() + 1e-9);
        prop_assert!(beta_radius(l + bump, d, 5.0, delta).unwrap() >= b - 1e-12);
    }

    #[test]
    fn ellipsoid_points_respect_minimum(
        m in prop::collection::vec(-1.0..1.0f64, 9),
        g in prop::collection::vec(-1.0..1.0f64, 3),
        u in prop::collection::vec(-1.0..1.0f64, 3),
        beta in 0.1..10.0f64,
    ) {
        let m = DMatrix::from_vec(3, 3, m);
        let a = &m * m.transpose() + DMatrix::identity(3, 3) * 0.05;
        let center = DVector::from_vec(vec![0.2, -0.1, 0.3]);
        let st = ConfidenceState::new(center.clone(), a.clone(), beta, 1.0).unwrap();
        let g = DVector::from_vec(g);
        let min = st.min_linear_over_ellipsoid(&g).unwrap();
        // push an arbitrary direction onto the ellipsoid boundary
        let u = DVector::from_vec(u);
        prop_assume!(u.norm() > 1e-6);
        let q = (u.transpose() * &a * &u)[(0, 0)];
        let theta = &center + &u * (beta / q).sqrt();
        prop_assert!(st.contains(&(&center + &u * (0.999 * (beta / q).sqrt()))));
        prop_assert!(g.dot(&theta) >= min - 1e-9 * (1.0 + min.abs()));
    }

    #[test]
    fn design_objective_is_convex(
        seed in 0u64..50,
        w1 in prop::collection::vec(0.01..1.0f64, 6),
        w2 in prop::collection::vec(0.01..1.0f64, 6),
        lam in 0.0..1.0f64,
    ) {
        let inst = GeneratorSpec::Main { k: 3, d: 2, s: 5.0 }.build(seed).unwrap();
        let view = inst.view();
        let best = inst.best_arm_and_gaps().unwrap().index;
        let all: Vec<usize> = (0..6).collect();
        let p = DesignProblem::hybrid(view, inst.theta_star(), best, &all, None).unwrap();
        let norm = |w: Vec<f64>| { let s: f64 = w.iter().sum(); w.into_iter().map(|x| x / s).collect::<Vec<_>>() };
        let (w1, w2) = (norm(w1), norm(w2));
        let mix: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| lam * a + (1.0 - lam) * b).collect();
        let lhs = p.objective(&mix);
        let rhs = lam * p.objective(&w1) + (1.0 - lam) * p.objective(&w2);
        prop_assert!(lhs <= rhs * (1.0 + 1e-10));
    }

    #[test]
    fn loss_is_convex_along_segments(
        seed in 0u64..100,
        a in prop::collection::vec(-2.0..2.0f64, 3),
        b in prop::collection::vec(-2.0..2.0f64, 3),
        lam in 0.0..1.0f64,
    ) {
        let inst = GeneratorSpec::Main { k: 4, d: 3, s: 5.0 }.build(seed).unwrap();
        let view = inst.view();
        let mut env = Environment::new(inst.clone(), seed);
        let mut st = ActionStats::new(view.num_actions());
        for i in 0..60 {
            let act = i % view.num_actions();
            st.add(act, env.observe(view.actions()[act]));
        }
        let (a, b) = (DVector::from_vec(a), DVector::from_vec(b));
        let mid = &a * lam + &b * (1.0 - lam);
        let lhs = st.loss(view, &mid);
        let rhs = lam * st.loss(view, &a) + (1.0 - lam) * st.loss(view, &b);
        prop_assert!(lhs <= rhs + 1e-9 * (1.0 + rhs.abs()));
    }
}
