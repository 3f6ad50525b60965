use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sera::kernels::{mehler_closed_form, mehler_special, phi_diag, phi_n, KernelSpec};
use sera::quadrature::{solve_weights, thin_points, SampleSet, WeightsOptions};
use sera::recovery::{cluster, gamma, validate_clusters};
use sera::special::hermite_1d_all;
use sera::synthesis::{eval_blurred, gen_target, TargetSpec};
use sera::{Points, SERO_BOX_A};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn recurrence_residual(x in -30.0f64..30.0, j in 2usize..200) {
        let psi = hermite_1d_all(j, x).unwrap();
        let jf = j as f64;
        let r = x * psi[j - 1] - (jf / 2.0).sqrt() * psi[j] - ((jf - 1.0) / 2.0).sqrt() * psi[j - 2];
        prop_assert!(r.abs() <= 1e-12 * x.abs().max(1.0));
    }

    #[test]
    fn mehler_forms_agree(y in prop::collection::vec(-2.0f64..2.0, 1..4), z in prop::collection::vec(-2.0f64..2.0, 3)) {
        let q = y.len();
        let z = &z[..q];
        let a = mehler_closed_form(q, 1.0 / 3f64.sqrt(), &y, z).unwrap();
        let b = mehler_special(q, &y, z).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn kernel_is_symmetric_with_diagonal(x in -2.0f64..2.0, y in -2.0f64..2.0) {
        let spec = KernelSpec::new(3.0, 1).unwrap();
        let a = phi_n(&spec, &[x], &[y]).unwrap();
        let b = phi_n(&spec, &[y], &[x]).unwrap();
        prop_assert!((a - b).abs() <= 1e-13 * (1.0 + a.abs()));
        prop_assert_eq!(phi_diag(&spec, &[x]).unwrap(), phi_n(&spec, &[x], &[x]).unwrap());
    }

    #[test]
    fn blurred_data_superposes(
        c in prop::collection::vec(-2.0f64..2.0, 2),
        a in prop::collection::vec(0.5f64..2.0, 2),
        s in -3.0f64..3.0,
    ) {
        prop_assume!(s.abs() > 1e-3);
        let pts = Points::from_scalars(&[-1.0, -0.3, 0.0, 0.8, 2.5]);
        let one = TargetSpec::new(vec![vec![c[0]]], vec![a[0]], 0.5).unwrap();
        let two = TargetSpec::new(vec![vec![c[1]]], vec![a[1]], 0.5).unwrap();
        let both = TargetSpec::new(vec![vec![c[0]], vec![c[1]]], vec![a[0], s * a[1]], 0.5).unwrap();
        let (u, v, w) = (eval_blurred(&one, None, &pts), eval_blurred(&two, None, &pts), eval_blurred(&both, None, &pts));
        for i in 0..pts.len() {
            prop_assert!((w[i] - u[i] - s * v[i]).abs() <= 1e-12 * (1.0 + w[i].abs()));
        }
    }

    #[test]
    fn generated_targets_respect_separation(seed in any::<u64>(), count in 0usize..4, q in 1usize..3) {
        let t = gen_target(seed, count, q, 2.5, 1.5, (1.0, 2.0)).unwrap();
        prop_assert_eq!(t.count(), count);
        prop_assert!(t.separation.is_none_or(|s| s >= 1.5));
        prop_assert!(t.amplitudes.iter().all(|a| (1.0..=2.0).contains(&a.abs())));
        prop_assert!(t.centers.iter().flatten().all(|c| c.abs() <= 2.5));
    }

    #[test]
    fn clusters_are_separated_by_half_eta(
        xs in prop::collection::vec(-5.0f64..5.0, 1..60),
        eta in 0.2f64..3.0,
    ) {
        let pts = Points::from_scalars(&xs);
        let members: Vec<usize> = (0..pts.len()).collect();
        let clusters = cluster(&pts, &members, eta).unwrap();
        prop_assert_eq!(clusters.iter().map(|c| c.len()).sum::<usize>(), xs.len());
        let report = validate_clusters(&pts, &clusters, f64::INFINITY, eta);
        prop_assert!(report.too_close.is_empty());
        prop_assert!(report.min_distance().is_none_or(|d| d > eta / 2.0));
    }

    #[test]
    fn gamma_shrinks_as_mu_grows(a1 in 1.0f64..50.0, a2 in 0.01f64..1.0, m in 0.5f64..10.0, mu in 0.05f64..2.0) {
        let g1 = gamma(a1, a2, m, mu, 4);
        let g2 = gamma(a1, a2, m, 2.0 * mu, 4);
        prop_assert!(g1 >= 1.0 && g2 >= 1.0 && g2 <= g1);
    }
}

#[test]
fn thinning_ratio_on_random_sets() {
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = if seed % 2 == 0 { 1 } else { 2 };
        let n = 2.0;
        let half = 3.0 * n / SERO_BOX_A;
        let count = if q == 1 { 200 } else { 600 };
        let data: Vec<f64> = (0..count * q).map(|_| rng.gen_range(-half..=half)).collect();
        let samples = SampleSet::new(Points::new(q, data).unwrap(), SERO_BOX_A, n).unwrap();
        let t = thin_points(&samples, if q == 1 { 0.01 } else { 0.05 }).unwrap();
        assert!(t.kept.len() <= samples.len());
        worst = worst.max(t.report.ratio);
        assert!(t.report.holds, "seed {seed}: {:?}", t.report);
    }
    assert!(worst <= 4.0);
}

#[test]
fn minimum_norm_weights_are_reflection_symmetric() {
    let xs: Vec<f64> = (-12..=12).map(|i| i as f64 * 0.17).collect();
    let samples = SampleSet::new(Points::from_scalars(&xs), SERO_BOX_A, 2.0).unwrap();
    let qm = solve_weights(&samples, &WeightsOptions::default()).unwrap();
    let w = &qm.weights;
    for i in 0..w.len() {
        assert!((w[i] - w[w.len() - 1 - i]).abs() <= 1e-10 * (1.0 + w[i].abs()));
    }
}
