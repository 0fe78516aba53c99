use dualfilter_core::adapted::for_each_path;
use dualfilter_core::fixed_point::{kl_divergence_bar, total_variation};
use dualfilter_core::hmm::{decompose, embed_dot, embed_token, HmmModel, ProbabilityVector};
use dualfilter_core::linalg::symmetric_eigenvalues;
use dualfilter_core::oracle::{filter_process, forward_filter, next_token_prob, ZeroPolicy};
use dualfilter_core::predictor::{build_weights, build_weights_least_squares, PathFunction};
use dualfilter_core::sample::{random_hmm, random_row};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn model_from(seed: u64, d: usize, m: usize, horizon: usize) -> HmmModel {
    random_hmm(&mut ChaCha8Rng::seed_from_u64(seed), d, m, horizon).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn risk_matrix_is_token_covariance(seed in any::<u64>(), m in 1usize..5) {
        let model = model_from(seed, 1, m, 1);
        let r = model.risk_matrix(0).unwrap();
        let row = model.emission_row(0);
        let embedded: Vec<Vec<f64>> = (0..=m).map(|z| embed_token(m, z).unwrap()).collect();
        let mean: Vec<f64> = (0..m).map(|i| (0..=m).map(|z| row[z] * embedded[z][i]).sum()).collect();
        for i in 0..m {
            for j in 0..m {
                let cov: f64 = (0..=m)
                    .map(|z| row[z] * (embedded[z][i] - mean[i]) * (embedded[z][j] - mean[j]))
                    .sum();
                prop_assert!((r[(i, j)] - cov).abs() < 1e-13);
                prop_assert_eq!(r[(i, j)], r[(j, i)]);
            }
        }
        let smallest = symmetric_eigenvalues(&r)[0];
        prop_assert!(smallest >= -1e-12, "eigenvalue {}", smallest);
    }

    #[test]
    fn gamma_is_a_variance(seed in any::<u64>(), d in 1usize..6, f in prop::collection::vec(-5.0f64..5.0, 6)) {
        let model = model_from(seed, d, 1, 1);
        let f = &f[..d];
        for (x, g) in model.gamma(f).into_iter().enumerate() {
            let row = model.transition_row(x);
            let first: f64 = row.iter().zip(f).map(|(a, v)| a * v).sum();
            let second: f64 = row.iter().zip(f).map(|(a, v)| a * v * v).sum();
            prop_assert!(g >= 0.0);
            prop_assert!((g - (second - first * first)).abs() < 1e-12);
        }
        let constant = vec![f[0]; d];
        prop_assert!(model.gamma(&constant).iter().all(|g| g.abs() < 1e-25));
    }

    #[test]
    fn filter_measures_are_probability_vectors(seed in any::<u64>(), d in 1usize..5, m in 1usize..3, horizon in 1usize..4) {
        let model = model_from(seed, d, m, horizon);
        let process = filter_process(&model, horizon);
        for (_, _, _, pi) in process.measures.nodes() {
            prop_assert!(pi.as_slice().iter().all(|p| *p >= 0.0));
            prop_assert!((pi.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let p = next_token_prob(&model, pi.as_slice());
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let mut total = 0.0;
        for p in process.probabilities.level(horizon) {
            total += p;
        }
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn filter_is_causal(seed in any::<u64>(), tail in prop::collection::vec(0usize..3, 3)) {
        let model = model_from(seed, 3, 2, 5);
        let base = [1usize, 2, 0, 0, 0];
        let mut changed = base;
        changed[2..].copy_from_slice(&tail);
        let a = forward_filter(&model, &base, ZeroPolicy::Strict).unwrap();
        let b = forward_filter(&model, &changed, ZeroPolicy::Strict).unwrap();
        prop_assert_eq!(a.pi(1), b.pi(1));
        prop_assert_eq!(a.pi(2), b.pi(2));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn decomposition_round_trip(m in 1usize..=5, raw in prop::collection::vec(-1.0e3f64..1.0e3, 6)) {
        let s = &raw[..=m];
        let split = decompose(s);
        for (z, &v) in s.iter().enumerate() {
            prop_assert!((split.reconstruct(z) - v).abs() <= 1e-12 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn decomposition_is_exact_on_representable_values(m in 1usize..=5, raw in prop::collection::vec(-1000i64..1000, 6)) {
        let s: Vec<f64> = raw[..=m].iter().map(|k| (k * (m as i64 + 1)) as f64).collect();
        let split = decompose(&s);
        for (z, &v) in s.iter().enumerate() {
            prop_assert_eq!(split.reconstruct(z), v);
        }
    }

    #[test]
    fn decomposition_is_unique(m in 1usize..=5, b in -10.0f64..10.0, w in prop::collection::vec(-10.0f64..10.0, 5)) {
        let w = &w[..m];
        let s: Vec<f64> = (0..=m).map(|z| b + embed_dot(w, z)).collect();
        let split = decompose(&s);
        prop_assert!((split.mean - b).abs() < 1e-12);
        for (t, wi) in split.tilde.iter().zip(w) {
            prop_assert!((t - wi).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn representation_round_trip(seed in any::<u64>(), m in 1usize..4, horizon in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = m + 1;
        let target = PathFunction::from_fn(a, horizon, |_| rand::Rng::gen_range(&mut rng, -3.0..3.0));
        let rep = build_weights(&target);
        let lsq = build_weights_least_squares(&target);
        prop_assert!((rep.constant - lsq.constant).abs() < 1e-10);
        for ((_, _, _, u), (_, _, _, v)) in rep.weights.nodes().zip(lsq.weights.nodes()) {
            for (x, y) in u.iter().zip(v) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }
        let mut worst: f64 = 0.0;
        for_each_path(a, horizon, |z| {
            worst = worst.max((rep.evaluate(z).unwrap() - target.get(z)).abs());
        });
        prop_assert!(worst <= 1e-12);
    }

    #[test]
    fn kl_is_nonnegative(seed in any::<u64>(), rows in 1usize..6, a in 2usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p: Vec<Vec<f64>> = (0..rows).map(|_| random_row(&mut rng, a)).collect();
        let q: Vec<Vec<f64>> = (0..rows).map(|_| random_row(&mut rng, a)).collect();
        prop_assert!(kl_divergence_bar(&p, &q).unwrap() >= 0.0);
        prop_assert_eq!(kl_divergence_bar(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn total_variation_bounds(seed in any::<u64>(), a in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_row(&mut rng, a);
        let q = random_row(&mut rng, a);
        let tv = total_variation(&p, &q);
        prop_assert!((0.0..=1.0).contains(&tv));
        prop_assert_eq!(total_variation(&p, &p), 0.0);
        prop_assert!(ProbabilityVector::new(p).is_ok());
    }
}
