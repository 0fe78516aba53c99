use dualfilter_core::attention::{
    attention_weights, embed_sequence, head_output, layer_forward, positional_encoding, run_stack,
    simplified_form, unembed, EmbeddingMatrix, Layer, LayerNorm, MiscOps, DEFAULT_ELL_MAX,
};
use dualfilter_core::fixed_point::kl_divergence_bar;
use dualfilter_core::hmm::HmmModel;
use dualfilter_core::oracle::{forward_filter, next_token_prob, ZeroPolicy};
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn random_sequence(rng: &mut ChaCha8Rng, d: usize, len: usize) -> Vec<DVector<f64>> {
    (0..len)
        .map(|_| DVector::from_fn(d, |_, _| StandardNormal.sample(&mut *rng)))
        .collect()
}

#[test]
fn simplified_form_matches_forward_pass() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for draw in 0..100 {
        let n_head = [1, 2, 4][draw % 3];
        let layer = Layer::random(&mut rng, 8, n_head, MiscOps::NONE).unwrap();
        let sigmas = random_sequence(&mut rng, 8, 6);
        let out = layer_forward(&layer, &sigmas).unwrap();
        let f = DVector::from_fn(8, |_, _| StandardNormal.sample(&mut rng));
        for t in 1..=6 {
            let direct = f.dot(&out[t - 1]);
            let simplified = simplified_form(&layer, &sigmas, t, &f).unwrap();
            assert!((direct - simplified).abs() <= 1e-12, "{direct} vs {simplified}");
        }
        assert_eq!(simplified_form(&layer, &sigmas, 3, &DVector::zeros(8)).unwrap(), 0.0);
    }
}

#[test]
fn simplified_form_rejects_misc_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let layer = Layer::random(&mut rng, 4, 2, MiscOps::ALL).unwrap();
    let sigmas = random_sequence(&mut rng, 4, 3);
    assert!(simplified_form(&layer, &sigmas, 2, &DVector::zeros(4)).is_err());
}

#[test]
fn weights_are_probabilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n_head in [1, 2, 4] {
        let layer = Layer::random(&mut rng, 8, n_head, MiscOps::NONE).unwrap();
        let sigmas = random_sequence(&mut rng, 8, 6);
        for head in &layer.heads {
            for t in 1..=6 {
                let w = attention_weights(head, &sigmas[..t]);
                assert!(w.iter().all(|v| *v >= 0.0));
                assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn future_inputs_do_not_leak() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for misc in [MiscOps::NONE, MiscOps::ALL] {
        let layer = Layer::random(&mut rng, 8, 2, misc).unwrap();
        let sigmas = random_sequence(&mut rng, 8, 6);
        let base = layer_forward(&layer, &sigmas).unwrap();
        for cut in 1..6 {
            let mut changed = sigmas.clone();
            for s in &mut changed[cut..] {
                *s = DVector::from_fn(8, |_, _| rng.gen_range(-100.0..100.0));
            }
            let out = layer_forward(&layer, &changed).unwrap();
            assert_eq!(&out[..cut], &base[..cut]);
        }
    }
}

#[test]
fn prefix_permutations_leave_head_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let layer = Layer::random(&mut rng, 8, 4, MiscOps::NONE).unwrap();
    let sigmas = random_sequence(&mut rng, 8, 6);
    for head in &layer.heads {
        let base = head_output(head, &sigmas);
        let mut permuted = sigmas.clone();
        permuted[..5].reverse();
        permuted.swap(0, 2);
        let out = head_output(head, &permuted);
        assert!((base - out).amax() <= 1e-12);
    }
}

#[test]
fn identical_inputs_give_value_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let layer = Layer::random(&mut rng, 4, 1, MiscOps::NONE).unwrap();
    let sigma = DVector::from_vec(vec![0.3, -1.0, 2.0, 0.5]);
    let out = head_output(&layer.heads[0], &vec![sigma.clone(); 4]);
    assert!((out - &layer.heads[0].w_v * &sigma).amax() <= 1e-15);
}

#[test]
fn layer_norm_standardizes_without_eps() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut norm = LayerNorm::identity(8);
    norm.eps = 0.0;
    for x in random_sequence(&mut rng, 8, 50) {
        let y = norm.normalize(&x);
        let mean = y.sum() / 8.0;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 8.0;
        assert!(mean.abs() <= 1e-9);
        assert!((var.sqrt() - 1.0).abs() <= 1e-9);
    }
}

#[test]
fn embedding_is_additive() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let emb = EmbeddingMatrix::random(&mut rng, 4, 3);
    let pe = positional_encoding(4, 5, DEFAULT_ELL_MAX).unwrap();
    let sigmas = embed_sequence(&emb, &pe, &[2, 0, 2, 1]).unwrap();
    let diff = &sigmas[2] - &sigmas[0];
    let expected = pe.values.column(2) - pe.values.column(0);
    assert!((diff - expected).amax() <= 1e-15);

    let zero = EmbeddingMatrix::new(DMatrix::zeros(4, 3)).unwrap();
    let only_pe = embed_sequence(&zero, &pe, &[1, 1]).unwrap();
    assert_eq!(only_pe[1], pe.values.column(1).into_owned());
    assert!(embed_sequence(&emb, &pe, &[3]).is_err());
}

/// With `C^xfer = ln C` and `sigma` solving `(ln C)^T sigma = ln p`, the
/// softmax un-embedding reproduces the next-token prediction `p`.
#[test]
fn unembedding_reproduces_prediction() {
    let model = HmmModel::new(
        vec![0.5, 0.5],
        vec![vec![0.9, 0.1], vec![0.1, 0.9]],
        vec![vec![0.2, 0.8], vec![0.7, 0.3]],
        3,
    )
    .unwrap();
    let pi = forward_filter(&model, &[1, 1, 0], ZeroPolicy::Strict).unwrap();
    let p = next_token_prob(&model, pi.pi(3).unwrap().as_slice());
    let log_c = Matrix2::new(0.2f64.ln(), 0.8f64.ln(), 0.7f64.ln(), 0.3f64.ln());
    let sigma = log_c
        .transpose()
        .lu()
        .solve(&Vector2::new(p[0].ln(), p[1].ln()))
        .unwrap();
    let emb = EmbeddingMatrix::new(DMatrix::from_iterator(2, 2, log_c.iter().cloned())).unwrap();
    let q = unembed(&emb, &DVector::from_column_slice(sigma.as_slice()));
    assert!((q[0] - p[0]).abs() <= 1e-12 && (q[1] - p[1]).abs() <= 1e-12);
}

#[test]
fn stacked_layers_kl_curve() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let emb = EmbeddingMatrix::random(&mut rng, 8, 3);
    let pe = positional_encoding(8, 6, DEFAULT_ELL_MAX).unwrap();
    let layer = Layer::random(&mut rng, 8, 2, MiscOps::ALL).unwrap();
    let out = run_stack(&emb, &pe, &layer, &[0, 2, 1, 1, 0, 2], 2).unwrap();
    assert_eq!(out.kl_bar.len(), 3);
    assert!(out.kl_bar.iter().all(|k| k.is_finite() && *k >= 0.0));
    assert_eq!(*out.kl_bar.last().unwrap(), 0.0);
    let again = kl_divergence_bar(&out.predictions[2], &out.predictions[0]).unwrap();
    assert_eq!(again, out.kl_bar[0]);
}
