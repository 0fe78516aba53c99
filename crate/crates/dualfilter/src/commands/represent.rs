use dualfilter_core::adapted::{for_each_path, prefix_key};
use dualfilter_core::oracle::filter_process;
use dualfilter_core::predictor::{build_weights, build_weights_least_squares, conditional_target};
use serde_json::{json, Value};

use super::{Context, Outcome};
use crate::error::{CliError, CliResult};
use crate::report::json_num;

/// Path probabilities above this make the two constructions comparable.
const WELL_POSED_PATH_PROBABILITY: f64 = 1e-6;
const SUM_TOLERANCE: f64 = 1e-10;
const CONSTRUCTION_TOLERANCE: f64 = 1e-10;

/// Predictor representation of `P(Z_{T+1} = query | Z_{1:T})` for one
/// query token, or for every token when none is given.
pub fn represent(ctx: &Context) -> CliResult<Outcome> {
    let model = ctx.model()?;
    let horizon = model.horizon();
    let a = model.alphabet();
    let tol = ctx.config.tol_representation;
    let queries: Vec<usize> = match ctx.config.query {
        Some(q) => {
            model.check_token(q)?;
            vec![q]
        }
        None => (0..a).collect(),
    };
    let process = filter_process(model, horizon);
    let well_posed = process
        .probabilities
        .level(horizon)
        .iter()
        .all(|p| *p > WELL_POSED_PATH_PROBABILITY);

    let mut violations = Vec::new();
    let mut reps = Vec::new();
    let mut sums = vec![0.0; process.probabilities.level(horizon).len()];
    for &q in &queries {
        let target = conditional_target(model, q, ctx.policy())?;
        let rep = build_weights(&target);
        let lsq = build_weights_least_squares(&target);

        let mut reconstruction: f64 = 0.0;
        let mut idx = 0;
        for_each_path(a, horizon, |z| {
            let value = rep.evaluate(z).expect("full path");
            reconstruction = reconstruction.max((value - target.get(z)).abs());
            sums[idx] += value;
            idx += 1;
        });
        let mut construction: f64 = (rep.constant - lsq.constant).abs();
        for ((_, _, _, u), (_, _, _, v)) in rep.weights.nodes().zip(lsq.weights.nodes()) {
            for (x, y) in u.iter().zip(v) {
                construction = construction.max((x - y).abs());
            }
        }
        if reconstruction > tol {
            violations.push(format!("query {q}: reconstruction error {reconstruction:e}"));
        }
        if well_posed && construction > CONSTRUCTION_TOLERANCE {
            violations.push(format!("query {q}: constructions differ by {construction:e}"));
        }
        let weights: Vec<Value> = rep
            .weights
            .nodes()
            .map(|(_, _, prefix, w)| json!([prefix_key(&prefix), w]))
            .collect();
        reps.push(json!({
            "query": q,
            "constant": json_num(rep.constant),
            "weights": weights,
            "max_reconstruction_error": json_num(reconstruction),
            "least_squares_max_difference": json_num(construction),
        }));
    }

    let mut body = json!({
        "horizon": horizon,
        "all_paths_above_1e-6": well_posed,
        "representations": reps,
    });
    if queries.len() == a {
        let all_possible = (0..sums.len()).all(|i| process.is_possible(horizon, i));
        let sum_error = sums.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
        body["sum_to_one_max_error"] = json_num(sum_error);
        if all_possible && sum_error > SUM_TOLERANCE {
            violations.push(format!("represented conditionals sum to 1 only within {sum_error:e}"));
        }
    }
    let sink = ctx.sink("represent")?;
    let file = sink.json("representation.json", body)?;
    if !violations.is_empty() {
        return Err(CliError::Invariant(violations.join("; ")));
    }
    Ok(Outcome {
        files: vec![file],
        notes: vec![format!("{} representation(s) over horizon {horizon}", queries.len())],
    })
}
