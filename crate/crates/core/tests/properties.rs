use lshmc::diagnostics::{ks_distance, normal_cdf, product_bound_check, proposal_overlap_tv};
use lshmc::experiments::quadratic_delta_h;
use lshmc::hmc::{hamiltonian, leapfrog};
use lshmc::{make_target, PhaseState, Target, TargetSpec};
use proptest::prelude::*;

fn target_strategy() -> impl Strategy<Value = Target> {
    let eig = 0.1f64..50.0;
    prop_oneof![
        (1usize..6).prop_map(TargetSpec::gaussian_iso),
        prop::collection::vec(eig.clone(), 1..6).prop_map(TargetSpec::gaussian_diag),
        (1.0f64..200.0, 1usize..6).prop_map(|(k, d)| TargetSpec::hard_instance(k, d)),
        (prop::collection::vec(eig, 1..6), 0.0f64..2.0).prop_map(|(e, w)| TargetSpec::quartic_mix(e, w)),
    ]
    .prop_map(|spec| make_target(&spec).unwrap())
}

fn with_points(n: usize) -> impl Strategy<Value = (Target, Vec<Vec<f64>>)> {
    target_strategy().prop_flat_map(move |t| {
        let d = t.dim();
        (Just(t), prop::collection::vec(prop::collection::vec(-3.0f64..3.0, d), n))
    })
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #[test]
    fn leapfrog_is_reversible((t, pts) in with_points(2), scale in 0.01f64..0.5) {
        let eta = scale / t.smoothness().sqrt();
        let s = PhaseState::new(pts[0].clone(), pts[1].clone());
        let fwd = leapfrog(&t, eta, &s).unwrap();
        let flipped = PhaseState::new(fwd.x.clone(), fwd.v.iter().map(|v| -v).collect());
        let back = leapfrog(&t, eta, &flipped).unwrap();
        for (a, b) in back.x.iter().zip(&s.x) {
            prop_assert!(rel(*a, *b) <= 1e-10);
        }
        for (a, b) in back.v.iter().zip(&s.v) {
            prop_assert!(rel(-*a, *b) <= 1e-10);
        }
    }

    #[test]
    fn hamiltonian_is_even_in_velocity((t, pts) in with_points(2)) {
        let s = PhaseState::new(pts[0].clone(), pts[1].clone());
        let m = PhaseState::new(pts[0].clone(), pts[1].iter().map(|v| -v).collect());
        prop_assert_eq!(hamiltonian(&t, &s).unwrap(), hamiltonian(&t, &m).unwrap());
    }

    #[test]
    fn quadratic_energy_error_identity(eigs in prop::collection::vec(0.1f64..100.0, 1..8), eta in 0.001f64..0.3, seed in any::<u64>()) {
        use rand::Rng;
        let t: Target = make_target(&TargetSpec::gaussian_diag(eigs.clone())).unwrap();
        let mut rng = lshmc::rng::stream_rng(seed, 0);
        let x: Vec<f64> = eigs.iter().map(|_| rng.random_range(-2.0..2.0)).collect();
        let v: Vec<f64> = eigs.iter().map(|_| rng.random_range(-2.0..2.0)).collect();
        let s = PhaseState::new(x.clone(), v);
        let p = leapfrog(&t, eta, &s).unwrap();
        let generic = hamiltonian(&t, &p).unwrap() - hamiltonian(&t, &s).unwrap();
        let closed = quadratic_delta_h(&eigs, eta, &x, &p.x);
        // ΔH is a difference of O(H) terms, so compare on the scale of H
        let scale = hamiltonian(&t, &s).unwrap().abs().max(1.0);
        prop_assert!((generic - closed).abs() <= 1e-12 * scale, "{} vs {}", generic, closed);
    }

    #[test]
    fn overlap_is_symmetric_and_bounded((t, pts) in with_points(2), eta in 0.01f64..1.0) {
        let a = proposal_overlap_tv(&t, eta, &pts[0], &pts[1]);
        let b = proposal_overlap_tv(&t, eta, &pts[1], &pts[0]);
        prop_assert_eq!(a, b);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn ks_lies_in_unit_interval(xs in prop::collection::vec(-10.0f64..10.0, 1..200)) {
        let d = ks_distance(&xs, normal_cdf);
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!(d >= 0.5 / xs.len() as f64 - 1e-15);
    }

    #[test]
    fn product_inequality_holds(c in 0.0f64..0.99, k in 0usize..80) {
        let r = product_bound_check(c, k).unwrap();
        prop_assert!(r.holds, "{:?}", r);
        prop_assert!(r.partial_product >= 1.0);
    }
}
