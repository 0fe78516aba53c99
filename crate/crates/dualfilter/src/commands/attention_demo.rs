use dualfilter_core::attention::{
    attention_weights, head_output, layer_forward, positional_encoding, run_stack, simplified_form,
    EmbeddingMatrix, Layer, MiscOps, DEFAULT_ELL_MAX,
};
use dualfilter_core::sample::sample_path;
use nalgebra::DVector;
use rand::Rng;
use serde_json::json;

use super::{tokens_string, Context, Outcome};
use crate::error::{CliError, CliResult};
use crate::model_io::parse_tokens;
use crate::report::{json_num, num};

const DEFAULT_PROMPT_LENGTH: usize = 6;

/// Runs one seeded attention layer `layers` times on a prompt and checks
/// the structural properties of attention along the way.
pub fn attention_demo(ctx: &Context) -> CliResult<Outcome> {
    let cfg = &ctx.config;
    let mut rng = ctx.rng();
    let alphabet = ctx.model.as_ref().map_or(cfg.vocab, |m| m.alphabet());
    let tokens = match (&cfg.path, &ctx.model) {
        (Some(text), _) => parse_tokens(text)?,
        (None, Some(model)) => sample_path(&mut rng, model, cfg.horizon.unwrap_or(DEFAULT_PROMPT_LENGTH)),
        (None, None) => (0..cfg.horizon.unwrap_or(DEFAULT_PROMPT_LENGTH))
            .map(|_| rng.gen_range(0..alphabet))
            .collect(),
    };
    if tokens.is_empty() {
        return Err(CliError::Input("the prompt is empty".into()));
    }
    let d = cfg.embed_dim;
    let misc = if cfg.misc { MiscOps::ALL } else { MiscOps::NONE };
    let emb = EmbeddingMatrix::random(&mut rng, d, alphabet);
    let pe = positional_encoding(d, tokens.len(), DEFAULT_ELL_MAX)?;
    let layer = Layer::random(&mut rng, d, cfg.heads, misc)?;
    let out = run_stack(&emb, &pe, &layer, &tokens, cfg.layers)?;
    let tol = cfg.tol_attention;

    let mut weight_error: f64 = 0.0;
    let mut weight_min = f64::INFINITY;
    let mut permutation_error: f64 = 0.0;
    let mut causal = true;
    let mut simplified_error: f64 = 0.0;
    for (l, sigmas) in out.sigmas.iter().enumerate().take(cfg.layers) {
        for t in 1..=sigmas.len() {
            let prefix = &sigmas[..t];
            for head in &layer.heads {
                let w = attention_weights(head, prefix);
                weight_error = weight_error.max((w.iter().sum::<f64>() - 1.0).abs());
                weight_min = weight_min.min(w.iter().cloned().fold(f64::INFINITY, f64::min));
                let mut permuted = prefix.to_vec();
                permuted[..t - 1].reverse();
                let diff = (head_output(head, prefix) - head_output(head, &permuted)).amax();
                permutation_error = permutation_error.max(diff);
            }
            if !cfg.misc {
                let f = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
                let direct = f.dot(&out.sigmas[l + 1][t - 1]);
                let simplified = simplified_form(&layer, sigmas, t, &f)?;
                simplified_error = simplified_error.max((direct - simplified).abs());
            }
            if t < sigmas.len() {
                let mut changed = sigmas.clone();
                for s in &mut changed[t..] {
                    *s = DVector::from_fn(d, |_, _| rng.gen_range(-10.0..10.0));
                }
                let altered = layer_forward(&layer, &changed)?;
                causal &= altered[..t] == out.sigmas[l + 1][..t];
            }
        }
    }
    let kl_ok = out.kl_bar.iter().all(|k| k.is_finite() && *k >= 0.0);

    let sink = ctx.sink("attention-demo")?;
    let prediction_rows = out.predictions.iter().enumerate().flat_map(|(l, level)| {
        level.iter().enumerate().flat_map(move |(t, p)| {
            p.iter()
                .enumerate()
                .map(move |(z, prob)| vec![l.to_string(), (t + 1).to_string(), z.to_string(), num(*prob)])
        })
    });
    let predictions = sink.csv("predictions.csv", &["layer", "t", "z", "prob"], prediction_rows)?;
    let kl_rows = out
        .kl_bar
        .iter()
        .enumerate()
        .map(|(l, k)| vec![l.to_string(), num(*k)]);
    let kl = sink.csv("kl_bar.csv", &["layer", "kl_bar"], kl_rows)?;

    let simplified_equal = (!cfg.misc).then_some(simplified_error <= tol);
    let weights_ok = weight_error <= tol && weight_min >= 0.0;
    let permutation_ok = permutation_error <= tol;
    let check = sink.json(
        "attention_check.json",
        json!({
            "prompt": tokens_string(&tokens),
            "embed_dim": d,
            "heads": cfg.heads,
            "layers": cfg.layers,
            "misc": cfg.misc,
            "tolerance": tol,
            "weights_sum_max_error": json_num(weight_error),
            "weights_min": json_num(weight_min),
            "weights_ok": weights_ok,
            "causality_bit_exact": causal,
            "permutation_max_error": json_num(permutation_error),
            "permutation_ok": permutation_ok,
            "simplified_form_max_error": (!cfg.misc).then(|| json_num(simplified_error)),
            "simplified_form_equal": simplified_equal,
            "kl_bar_nonnegative_finite": kl_ok,
        }),
    )?;

    let mut violations = Vec::new();
    if !weights_ok {
        violations.push("attention weights are not a probability vector");
    }
    if !causal {
        violations.push("an output depends on a later position");
    }
    if !permutation_ok {
        violations.push("head output changed under a prefix permutation");
    }
    if simplified_equal == Some(false) {
        violations.push("simplified form disagrees with the forward pass");
    }
    if !kl_ok {
        violations.push("layer KL curve is negative or infinite");
    }
    if !violations.is_empty() {
        return Err(CliError::Invariant(violations.join("; ")));
    }
    Ok(Outcome {
        files: vec![predictions, kl, check],
        notes: vec![format!("prompt {}", tokens_string(&tokens))],
    })
}
