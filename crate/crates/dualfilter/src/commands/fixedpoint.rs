use dualfilter_core::adapted::path_count;
use dualfilter_core::fixed_point::{adapted_residual, iterate, path_residual};
use dualfilter_core::oracle::{filter_process, forward_filter, ZeroPolicy};
use serde_json::{json, Map, Value};

use super::{tokens_string, Context, Outcome};
use crate::error::{CliError, CliResult};
use crate::report::{json_num, num};

/// Fixed-point residual of the filter under the path and/or adapted map,
/// plus an iteration trace of the path map from uniform measures.
pub fn fixedpoint(ctx: &Context) -> CliResult<Outcome> {
    let model = ctx.model()?;
    let cfg = &ctx.config;
    let tol = cfg.tol_fixed_point;
    let mut rng = ctx.rng();
    let sink = ctx.sink("fixedpoint")?;
    let mut files = Vec::new();
    let mut notes = Vec::new();
    let mut modes = Map::new();
    let mut failures = Vec::new();

    if cfg.mode.includes_path() {
        let z = ctx.observation_path(model, &mut rng)?;
        let pi = forward_filter(model, &z, ZeroPolicy::Strict)?
            .into_measures()
            .expect("strict filter is complete");
        let residual = path_residual(model, &pi, &z)?;
        let pass = residual <= tol;
        if !pass {
            failures.push(json!({
                "mode": "path",
                "residual": json_num(residual),
                "tokens": tokens_string(&z),
            }));
        }
        modes.insert(
            "path".into(),
            json!({
                "tokens": tokens_string(&z),
                "residual": json_num(residual),
                "tolerance": tol,
                "pass": pass,
            }),
        );
        notes.push(format!("path {}: residual {residual:e}", tokens_string(&z)));

        let trace = iterate(model, &z, None, cfg.iterations)?;
        for p in &trace.projections {
            notes.push(format!(
                "iteration {} time {}: output left the simplex and was clipped and renormalized",
                p.iter, p.t
            ));
        }
        let rows = (0..cfg.iterations).flat_map(|k| {
            let trace = &trace;
            (0..z.len()).map(move |t| {
                let projected = trace.projections.iter().any(|p| p.iter == k + 1 && p.t == t + 1);
                vec![
                    (k + 1).to_string(),
                    (t + 1).to_string(),
                    num(trace.residuals_by_time[k][t]),
                    num(trace.kl_per_iter[k]),
                    (!projected).to_string(),
                ]
            })
        });
        files.push(sink.csv(
            "trace.csv",
            &["iter", "t", "residual_tv", "kl_bar", "in_domain"],
            rows,
        )?);
    }

    if cfg.mode.includes_adapted() {
        let horizon = model.horizon();
        let work = path_count(model.alphabet(), horizon)
            .and_then(|n| n.checked_mul(model.d() * horizon.max(1)))
            .map_or(u128::MAX, |n| n as u128);
        if work > cfg.enum_budget as u128 {
            return Err(CliError::Input(format!(
                "adapted map needs about {work} node solves, over the budget of {}",
                cfg.enum_budget
            )));
        }
        let process = filter_process(model, horizon);
        if !ctx.config.zero_convention {
            let blocked = (1..=horizon).find(|&t| {
                (0..process.probabilities.level(t).len()).any(|i| !process.is_possible(t, i))
            });
            if let Some(t) = blocked {
                return Err(CliError::Impossible(format!(
                    "some observation prefix of length {t} has probability zero; \
                     pass --zero-convention to skip such prefixes"
                )));
            }
        }
        let residual = adapted_residual(model, &process.measures, horizon)?;
        let pass = residual <= tol;
        if !pass {
            failures.push(json!({ "mode": "adapted", "residual": json_num(residual) }));
        }
        modes.insert(
            "adapted".into(),
            json!({
                "horizon": horizon,
                "residual": json_num(residual),
                "tolerance": tol,
                "pass": pass,
            }),
        );
        notes.push(format!("adapted map over horizon {horizon}: residual {residual:e}"));
    }

    files.push(sink.json(
        "fixedpoint.json",
        json!({
            "model": { "d": model.d(), "m": model.m(), "T": model.horizon() },
            "iterations": cfg.iterations,
            "modes": Value::Object(modes),
        }),
    )?);

    if !failures.is_empty() {
        let findings = sink.json(
            "findings.json",
            json!({
                "finding": "the exact filter is not a fixed point of the map within tolerance",
                "model": { "d": model.d(), "m": model.m(), "T": model.horizon() },
                "tolerance": tol,
                "failures": failures,
            }),
        )?;
        return Err(CliError::Invariant(format!(
            "fixed-point residual above {tol:e}; details in {}",
            findings.display()
        )));
    }
    Ok(Outcome { files, notes })
}
