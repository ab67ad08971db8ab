use gaussep::engine::{decide, VerdictKind, DEFAULT_MAX_ITER};
use gaussep::gaussian::{partial_transpose, random_cm, random_separable, Purity};
use gaussep::matlin::{
    direct_sum, hermitian_reduce_psd, operator_norm, psd_check_symmetric, pseudoinverse_symmetric,
    schur_psd, trace_norm, ToleranceConfig,
};
use gaussep::ppt::ppt_check;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn tol() -> ToleranceConfig {
    ToleranceConfig::default()
}

fn randn(seed: u64, r: usize, c: usize) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn lambda_min(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

fn purity() -> impl Strategy<Value = Purity> {
    prop_oneof![Just(Purity::Pure), Just(Purity::Mixed)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pseudoinverse_reproduces_low_rank_psd(seed in any::<u64>(), d in 1usize..7, rank in 1usize..7) {
        let rank = rank.min(d);
        let g = randn(seed, d, rank);
        let m = &g * g.transpose();
        let (p, kernel) = pseudoinverse_symmetric(&m, &tol());
        prop_assert_eq!(kernel.len(), d - rank);
        prop_assert!((&m * &p * &m - &m).amax() <= 1e-8 * m.amax());
        prop_assert!(psd_check_symmetric(&p, &tol()).unwrap().is_psd);
    }

    #[test]
    fn schur_test_matches_spectrum(seed in any::<u64>(), p in 1usize..4, q in 1usize..4, shift in -1.0f64..1.0) {
        let g = randn(seed, p + q, p + q);
        let mut m = &g * g.transpose();
        let base = lambda_min(&m);
        m -= DMatrix::identity(p + q, p + q) * (base + shift);
        let direct = lambda_min(&m);
        prop_assume!(direct.abs() > 1e-8);
        let r = schur_psd(
            &m.view((0, 0), (p, p)).into_owned(),
            &m.view((p, p), (q, q)).into_owned(),
            &m.view((0, p), (p, q)).into_owned(),
            &tol(),
        ).unwrap();
        prop_assert_eq!(r.is_psd, direct > 0.0);
    }

    #[test]
    fn complex_reduction_matches_real_embedding(seed in any::<u64>(), p in 1usize..5, shift in -1.0f64..2.0) {
        let g = randn(seed, p, p);
        let k = randn(seed.wrapping_add(1), p, p);
        let a = &g * g.transpose() + DMatrix::identity(p, p) * shift;
        let c = &k - k.transpose();
        let mut real = DMatrix::zeros(2 * p, 2 * p);
        real.view_mut((0, 0), (p, p)).copy_from(&a);
        real.view_mut((p, p), (p, p)).copy_from(&a);
        real.view_mut((0, p), (p, p)).copy_from(&(-&c));
        real.view_mut((p, 0), (p, p)).copy_from(&c);
        let direct = lambda_min(&real);
        prop_assume!(direct.abs() > 1e-8);
        prop_assert_eq!(hermitian_reduce_psd(&a, &c, &tol()).unwrap().is_psd, direct > 0.0);
    }

    #[test]
    fn operator_norm_bounded_by_trace_norm(seed in any::<u64>(), r in 1usize..6, c in 1usize..6) {
        let m = randn(seed, r, c);
        prop_assert!(operator_norm(&m) <= trace_norm(&m) * (1.0 + 1e-12));
    }

    #[test]
    fn psd_noise_keeps_cm_valid(seed in any::<u64>(), n in 1usize..3, m in 1usize..3, p in purity(), scale in 0.0f64..3.0) {
        let g = random_cm(n, m, p, seed).unwrap();
        let d = g.dim();
        let r = randn(seed ^ 0x5555, d, d);
        let noisy = g.perturbed(&(&r * r.transpose()), scale).unwrap();
        prop_assert!(noisy.validate(&tol()).valid);
    }

    #[test]
    fn partial_transpose_is_an_involution(seed in any::<u64>(), n in 1usize..3, m in 1usize..3, p in purity()) {
        let g = random_cm(n, m, p, seed).unwrap();
        let back = partial_transpose(&partial_transpose(&g));
        prop_assert_eq!(back.assemble(), g.assemble());
    }

    #[test]
    fn iterates_stay_above_local_block(seed in any::<u64>(), n in 1usize..3, m in 1usize..3, noise in 0.1f64..3.0) {
        let fx = random_separable(n, m, noise, seed).unwrap();
        let v = decide(&fx.cm, &tol(), DEFAULT_MAX_ITER).unwrap();
        let floor = direct_sum(&fx.gamma_a, &fx.gamma_a);
        for step in v.trace.steps.iter().skip(1) {
            let gap = step.to_bipartite().assemble() - &floor;
            prop_assert!(lambda_min(&gap) >= -1e-9 * gap.amax().max(1.0));
        }
    }

    #[test]
    fn trace_norm_is_non_increasing(seed in any::<u64>(), n in 1usize..3, m in 1usize..3) {
        let g = random_cm(n, m, Purity::Mixed, seed).unwrap();
        let v = decide(&g, &tol(), DEFAULT_MAX_ITER).unwrap();
        let norms: Vec<f64> = v
            .trace
            .steps
            .iter()
            .take_while(|s| s.to_bipartite().validate(&tol()).valid)
            .map(|s| trace_norm(&s.a))
            .collect();
        for w in norms.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-10);
        }
        for t in &norms {
            prop_assert!(*t >= 2.0 * n as f64 - 1e-10);
        }
    }

    #[test]
    fn separable_verdict_implies_ppt(seed in any::<u64>(), n in 1usize..3, m in 1usize..3, p in purity()) {
        let g = random_cm(n, m, p, seed).unwrap();
        let g = g.shifted(0.3);
        let v = decide(&g, &tol(), DEFAULT_MAX_ITER).unwrap();
        if v.kind == VerdictKind::Separable {
            prop_assert!(ppt_check(&g, &tol()).unwrap().margin >= -1e-9);
        }
    }
}
