use dualfilter_core::oracle::{forward_filter, next_token_prob};

use super::{tokens_string, Context, Outcome};
use crate::error::CliResult;
use crate::report::num;

/// Exact filter and next-token predictions along one path.
///
/// `filter.csv` has `t, x, pi` for `t = 1..=T` with states numbered from 1.
/// `next_token.csv` has `t, z, prob` for `t = 0..=T`, the prediction of
/// `Z_{t+1}` given `z_1..z_t`.
pub fn oracle(ctx: &Context) -> CliResult<Outcome> {
    let model = ctx.model()?;
    let mut rng = ctx.rng();
    let z = ctx.observation_path(model, &mut rng)?;
    let traj = forward_filter(model, &z, ctx.policy())?;
    let d = model.d();

    let mut measures = vec![model.mu().as_slice().to_vec()];
    measures.extend((1..=z.len()).map(|t| traj.pi_or_zero(t, d)));

    let sink = ctx.sink("oracle")?;
    let filter_rows = measures.iter().enumerate().skip(1).flat_map(|(t, pi)| {
        pi.iter()
            .enumerate()
            .map(move |(x, p)| vec![t.to_string(), (x + 1).to_string(), num(*p)])
    });
    let filter = sink.csv("filter.csv", &["t", "x", "pi"], filter_rows)?;
    let next_rows = measures.iter().enumerate().flat_map(|(t, pi)| {
        next_token_prob(model, pi)
            .into_iter()
            .enumerate()
            .map(move |(zt, p)| vec![t.to_string(), zt.to_string(), num(p)])
    });
    let next = sink.csv("next_token.csv", &["t", "z", "prob"], next_rows)?;

    let undefined = traj.pis.iter().filter(|p| p.is_none()).count();
    let mut notes = vec![format!("path {}", tokens_string(&z))];
    if undefined > 0 {
        notes.push(format!(
            "{undefined} step(s) follow an impossible prefix and are written as zero"
        ));
    }
    Ok(Outcome {
        files: vec![filter, next],
        notes,
    })
}
