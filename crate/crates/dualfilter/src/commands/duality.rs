use std::collections::BTreeMap;

use dualfilter_core::adapted::{path_of_index, prefix_key};
use dualfilter_core::dual::{
    bsde_residuals, cost_of, duality_gap, estimator_path, feedback_residuals, mmse, solve_bsde,
    solve_optimal,
};
use dualfilter_core::oracle::filter_process;
use dualfilter_core::sample::{random_control, random_terminal};
use serde_json::json;

use super::{Context, Outcome};
use crate::error::{CliError, CliResult};
use crate::report::{json_num, num};

/// Both sides of the duality identity for random controls and terminal
/// functions, and the optimality of the filter feedback.
pub fn duality(ctx: &Context) -> CliResult<Outcome> {
    let model = ctx.model()?;
    let cfg = &ctx.config;
    let budget = cfg.enum_budget as u128;
    let tol = cfg.tol_duality;
    let horizon = model.horizon();
    let a = model.alphabet();
    let mut rng = ctx.rng();

    // worst residual per (check, t, prefix)
    let mut diagnostics: BTreeMap<(&'static str, usize, usize), f64> = BTreeMap::new();
    let mut record = |check: &'static str, t: usize, idx: usize, value: f64| {
        let slot = diagnostics.entry((check, t, idx)).or_insert(0.0);
        *slot = slot.max(value);
    };

    let mut draws = Vec::with_capacity(cfg.draws);
    let mut worst_gap: f64 = 0.0;
    for draw in 0..cfg.draws {
        let u = random_control(&mut rng, model, horizon, 1.0);
        let f = random_terminal(&mut rng, model, horizon, draw % 2 == 1);
        let report = duality_gap(model, &u, &f, budget)?;
        worst_gap = worst_gap.max(report.gap);
        let traj = solve_bsde(model, &u, &f)?;
        for row in bsde_residuals(model, &traj) {
            record("bsde", row.t, row.index, row.max_residual);
        }
        draws.push(json!({
            "draw": draw,
            "path_dependent_terminal": draw % 2 == 1,
            "J_T": json_num(report.j_t),
            "mse": json_num(report.mse),
            "gap": json_num(report.gap),
        }));
    }

    let process = filter_process(model, horizon);
    let f = random_terminal(&mut rng, model, horizon, false);
    let traj = solve_optimal(model, &process.measures, &f, horizon)?;
    let j_opt = cost_of(model, &traj, budget)?;
    let best = mmse(model, &f, horizon, budget)?;
    for row in feedback_residuals(model, &traj, &process.measures) {
        record("feedback", row.t, row.index, row.max_residual);
    }
    let mut estimator_worst: f64 = 0.0;
    for t in 0..=horizon {
        for idx in 0..process.measures.level(t).len() {
            if !process.is_possible(t, idx) {
                continue;
            }
            let prefix = path_of_index(a, t, idx);
            let s = estimator_path(model, &traj, &prefix, t)?;
            let err = (process.measures.at(t, idx).expect(traj.y.at(t, idx)) - s).abs();
            estimator_worst = estimator_worst.max(err);
            record("estimator", t, idx, err);
        }
    }
    let optimal_gap = (j_opt - best).abs();

    let sink = ctx.sink("duality")?;
    let report = sink.json(
        "duality.json",
        json!({
            "horizon": horizon,
            "tolerance": tol,
            "draws": draws,
            "max_gap": json_num(worst_gap),
            "optimal": {
                "J_T": json_num(j_opt),
                "mmse": json_num(best),
                "gap": json_num(optimal_gap),
                "estimator_identity_max_error": json_num(estimator_worst),
                "singular_nodes": traj.singular_nodes.len(),
            },
        }),
    )?;
    let rows = diagnostics.iter().map(|((check, t, idx), v)| {
        vec![
            check.to_string(),
            t.to_string(),
            prefix_key(&path_of_index(a, *t, *idx)),
            num(*v),
        ]
    });
    let diag = sink.csv("diagnostics.csv", &["check", "t", "prefix", "max_residual"], rows)?;

    let mut violations = Vec::new();
    if worst_gap > tol {
        violations.push(format!("duality gap {worst_gap:e}"));
    }
    if optimal_gap > tol {
        violations.push(format!("optimal cost differs from the MMSE by {optimal_gap:e}"));
    }
    if estimator_worst > tol {
        violations.push(format!("estimator identity error {estimator_worst:e}"));
    }
    if !violations.is_empty() {
        return Err(CliError::Invariant(format!(
            "{} (tolerance {tol:e})",
            violations.join("; ")
        )));
    }
    Ok(Outcome {
        files: vec![report, diag],
        notes: vec![format!(
            "{} draws: max gap {worst_gap:e}; optimal J_T - MMSE {optimal_gap:e}",
            cfg.draws
        )],
    })
}
