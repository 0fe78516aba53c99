use dualfilter_core::fixed_point::{adapted_residual, iterate, path_residual};
use dualfilter_core::hmm::ObservationPath;
use dualfilter_core::oracle::{filter_process, forward_filter, ZeroPolicy};
use dualfilter_core::sample::{random_hmm, sample_path};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn filter_is_fixed_point_of_path_map_binary() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..40 {
        let d = rng.gen_range(2..=5);
        let horizon = rng.gen_range(1..=6);
        let model = random_hmm(&mut rng, d, 1, horizon).unwrap();
        for _ in 0..5 {
            let z = ObservationPath::new(1, sample_path(&mut rng, &model, horizon)).unwrap();
            let pi = forward_filter(&model, &z, ZeroPolicy::Strict).unwrap().into_measures().unwrap();
            let r = path_residual(&model, &pi, &z).unwrap();
            assert!(r <= 1e-10, "residual {r}");
        }
    }
}

#[test]
fn path_map_multi_token_report() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let model = random_hmm(&mut rng, 3, 2, 3).unwrap();
        let z = ObservationPath::new(2, sample_path(&mut rng, &model, 3)).unwrap();
        let pi = forward_filter(&model, &z, ZeroPolicy::Strict).unwrap().into_measures().unwrap();
        worst = worst.max(path_residual(&model, &pi, &z).unwrap());
    }
    println!("path map residual for m=2: {worst:e}");
}

#[test]
fn filter_is_fixed_point_of_adapted_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..20 {
        let d = rng.gen_range(2..=4);
        let m = rng.gen_range(1..=2);
        let horizon = rng.gen_range(1..=4);
        let model = random_hmm(&mut rng, d, m, horizon).unwrap();
        let pi = filter_process(&model, horizon);
        let r = adapted_residual(&model, &pi.measures, horizon).unwrap();
        assert!(r <= 1e-10, "residual {r}");
    }
}

#[test]
fn iteration_from_filter_stays() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let model = random_hmm(&mut rng, 3, 1, 4).unwrap();
    let z = ObservationPath::new(1, sample_path(&mut rng, &model, 4)).unwrap();
    let pi = forward_filter(&model, &z, ZeroPolicy::Strict).unwrap().into_measures().unwrap();
    let trace = iterate(&model, &z, Some(pi), 5).unwrap();
    assert!(trace.residuals.iter().all(|r| *r <= 1e-10));
    assert!(trace.kl_per_iter.iter().all(|k| k.abs() <= 1e-10));
}

fn uninformative(horizon: usize) -> dualfilter_core::hmm::HmmModel {
    dualfilter_core::hmm::HmmModel::new(
        vec![0.8, 0.2],
        vec![vec![0.7, 0.3], vec![0.4, 0.6]],
        vec![vec![0.5, 0.5], vec![0.5, 0.5]],
        horizon,
    )
    .unwrap()
}

fn chain_marginal(model: &dualfilter_core::hmm::HmmModel, t: usize) -> Vec<f64> {
    let mut p = model.mu().as_slice().to_vec();
    for _ in 0..t {
        p = model.propagate(&p);
    }
    p
}

#[test]
fn uninformative_emissions_give_chain_marginals() {
    use dualfilter_core::fixed_point::apply_n_path;
    use dualfilter_core::hmm::ProbabilityVector;
    let model = uninformative(3);
    let z = ObservationPath::new(1, vec![1, 0, 1]).unwrap();
    let rho = vec![
        ProbabilityVector::new(vec![0.9, 0.1]).unwrap(),
        ProbabilityVector::uniform(2),
        ProbabilityVector::point_mass(2, 1),
    ];
    let image = apply_n_path(&model, &rho, &z).unwrap();
    assert!(image.in_domain);
    for (t, out) in image.measures.iter().enumerate() {
        let expected = chain_marginal(&model, t + 1);
        for (a, b) in out.as_slice().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }
    let trace = iterate(&model, &z, None, 3).unwrap();
    assert!(trace.kl_per_iter.iter().all(|k| k.abs() < 1e-15));
}

#[test]
fn uninformative_adapted_map_is_deterministic() {
    use dualfilter_core::adapted::AdaptedProcess;
    use dualfilter_core::fixed_point::apply_n_adapted;
    use dualfilter_core::hmm::ProbabilityVector;
    let model = uninformative(3);
    let rho = AdaptedProcess::build(2, 4, |t, p| {
        if t == 0 {
            model.mu().clone()
        } else {
            ProbabilityVector::new(vec![0.1 + 0.2 * p[0] as f64, 0.9 - 0.2 * p[0] as f64]).unwrap()
        }
    });
    let image = apply_n_adapted(&model, &rho, 3).unwrap();
    for (t, _, _, out) in image.measures.nodes() {
        let expected = chain_marginal(&model, t);
        for (a, b) in out.as_slice().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}

#[test]
fn perturbed_filter_is_not_fixed() {
    use dualfilter_core::hmm::ProbabilityVector;
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let model = random_hmm(&mut rng, 3, 1, 4).unwrap();
    let z = ObservationPath::new(1, vec![1, 0, 0, 1]).unwrap();
    let mut pi = forward_filter(&model, &z, ZeroPolicy::Strict).unwrap().into_measures().unwrap();
    let mut moved = pi[1].as_slice().to_vec();
    let shift = moved[0].min(0.1);
    moved[0] -= shift;
    moved[1] += shift;
    pi[1] = ProbabilityVector::new(moved).unwrap();
    assert!(path_residual(&model, &pi, &z).unwrap() > 1e-6);
}

#[test]
fn path_map_is_causal() {
    use dualfilter_core::fixed_point::apply_n_path;
    use dualfilter_core::hmm::ProbabilityVector;
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let model = random_hmm(&mut rng, 4, 2, 5).unwrap();
    let rho: Vec<_> = (0..5).map(|_| ProbabilityVector::new(dualfilter_core::sample::random_row(&mut rng, 4)).unwrap()).collect();
    let a = ObservationPath::new(2, vec![2, 1, 0, 1, 2]).unwrap();
    let b = ObservationPath::new(2, vec![2, 1, 2, 0, 1]).unwrap();
    let ia = apply_n_path(&model, &rho, &a).unwrap();
    let ib = apply_n_path(&model, &rho, &b).unwrap();
    assert_eq!(ia.measures[..2], ib.measures[..2]);
}

#[test]
fn reference_iteration_trace_is_recorded() {
    let model = dualfilter_core::hmm::HmmModel::new(
        vec![0.5, 0.5],
        vec![vec![0.9, 0.1], vec![0.1, 0.9]],
        vec![vec![0.2, 0.8], vec![0.7, 0.3]],
        3,
    )
    .unwrap();
    let z = ObservationPath::new(1, vec![1, 1, 0]).unwrap();
    let trace = iterate(&model, &z, None, 20).unwrap();
    assert_eq!(trace.iterates.len(), 21);
    assert_eq!(trace.residuals.len(), 20);
    assert!(trace.residuals.iter().all(|r| *r >= 0.0));
    assert!(trace.kl_per_iter.iter().all(|k| *k >= 0.0 && k.is_finite()));
}
