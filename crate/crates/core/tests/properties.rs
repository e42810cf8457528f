use crowdmeta::annotators::AnnotatorDistribution;
use crowdmeta::baselines::{dawid_skene, majority_vote};
use crowdmeta::em::{
    adapt, init_responsibilities, log_posterior, lower_bound_q, m_step, PriorHyperparams, Responsibilities,
};
use crowdmeta::math::argmax;
use crowdmeta::rng::from_seed;
use crowdmeta::verify::{posterior_trajectory, random_support};
use proptest::prelude::*;

fn task(seed: u64, k: usize, n: usize, r: usize) -> crowdmeta::em::SupportSet {
    let dist = AnnotatorDistribution::meta_training_default();
    random_support(&mut from_seed(seed), k, n, r, 3, &dist).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adapted_quantities_are_normalized(
        seed in any::<u64>(), k in 2usize..6, n in 1usize..25, r in 1usize..6, j in 1usize..6,
        b in 0.1f64..20.0, c in 0.1f64..5.0,
    ) {
        let s = task(seed, k, n, r);
        let h = PriorHyperparams::new(1.0, b, c, j).unwrap();
        let a = adapt(&s, &h).unwrap();
        prop_assert!(a.responsibilities.row_sum_error() < 1e-12);
        prop_assert!((a.class_prior.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for m in &a.confusions {
            prop_assert!(m.column_sum_error() < 1e-12);
        }
        prop_assert!(a.responsibilities.as_flat().iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn smoothing_keeps_parameters_off_zero(
        seed in any::<u64>(), k in 2usize..5, n in 1usize..20, r in 1usize..5,
        b in 0.1f64..5.0, c in 0.1f64..5.0,
    ) {
        let s = task(seed, k, n, r);
        let h = PriorHyperparams::new(1.0, b, c, 3).unwrap();
        let a = adapt(&s, &h).unwrap();
        let pi_floor = b / (k as f64 * b + n as f64);
        prop_assert!(a.class_prior.iter().all(|&p| p >= pi_floor * (1.0 - 1e-12)));
        let alpha_floor = c / (n as f64 + k as f64 * c);
        for m in &a.confusions {
            prop_assert!(m.entries().iter().all(|&x| x >= alpha_floor * (1.0 - 1e-12)));
        }
    }

    #[test]
    fn lower_bound_never_exceeds_posterior(
        seed in any::<u64>(), k in 2usize..5, n in 1usize..20, r in 1usize..5, noise in 0u64..1000,
    ) {
        let s = task(seed, k, n, r);
        let h = PriorHyperparams::default();
        let params = m_step(&init_responsibilities(&s.annotations).unwrap(), &s, &h).unwrap();
        let mut rng = from_seed(noise);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| {
            let v: Vec<f64> = (0..k).map(|_| rand::Rng::random::<f64>(&mut rng) + 1e-3).collect();
            let z: f64 = v.iter().sum();
            v.into_iter().map(|x| x / z).collect()
        }).collect();
        let q = lower_bound_q(&Responsibilities::from_rows(&rows).unwrap(), &s, &params, &h).unwrap();
        prop_assert!(q <= log_posterior(&s, &params, &h).unwrap() + 1e-9);
    }

    #[test]
    fn em_never_decreases_the_posterior(
        seed in any::<u64>(), k in 2usize..5, n in 1usize..25, r in 1usize..8, tau in 0.1f64..5.0,
    ) {
        let s = task(seed, k, n, r);
        let h = PriorHyperparams::new(tau, 1.0, 1.0, 8).unwrap();
        let t = posterior_trajectory(&s, &h).unwrap();
        for w in t.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9, "{:?}", t);
        }
    }

    #[test]
    fn huge_b_forces_uniform_prior(seed in any::<u64>(), k in 2usize..6, n in 1usize..30) {
        let s = task(seed, k, n, 3);
        let a = adapt(&s, &PriorHyperparams::new(1.0, 1e9, 1.0, 3).unwrap()).unwrap();
        for p in &a.class_prior {
            prop_assert!((p - 1.0 / k as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn majority_vote_is_argmax_of_initialization(seed in any::<u64>(), k in 2usize..6, n in 1usize..30, r in 1usize..7) {
        let s = task(seed, k, n, r);
        let mv = majority_vote(&s.annotations).unwrap();
        let init = init_responsibilities(&s.annotations).unwrap();
        let expect: Vec<usize> = init.rows().map(argmax).collect();
        prop_assert_eq!(mv.labels, expect);
    }

    #[test]
    fn adaptation_is_deterministic(seed in any::<u64>(), k in 2usize..5, n in 1usize..15) {
        let s = task(seed, k, n, 3);
        let h = PriorHyperparams::default();
        prop_assert_eq!(adapt(&s, &h).unwrap(), adapt(&s, &h).unwrap());
        prop_assert_eq!(dawid_skene(&s.annotations, &h).unwrap(), dawid_skene(&s.annotations, &h).unwrap());
    }
}
