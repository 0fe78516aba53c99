//! Ground truth: the exact forward filter, next-token probabilities, path
//! probabilities and exhaustive expectations over joint `(X, Z)` paths.
//!
//! The filter follows the emission convention `C(x,z) = P(Z_{t+1}=z | X_t=x)`.
//! One step reweights the posterior of `X_{t-1}` by `C(., z_t)`, normalizes,
//! and pushes the result through `A` to get `pi_t`. Textbook HMMs emit
//! `Z_t` from `X_t` instead; the two conventions give different filters.

use alloc::vec;
use alloc::vec::Vec;

use crate::adapted::AdaptedProcess;
use crate::error::{Error, Result};
use crate::hmm::{HmmModel, ProbabilityVector};

/// Default number of joint-path terms an exhaustive expectation may visit.
pub const DEFAULT_ENUM_BUDGET: u128 = 10_000_000;

/// How to treat observation prefixes of probability zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZeroPolicy {
    /// Report an impossible observation.
    #[default]
    Strict,
    /// Use `0/0 = 0`: conditional quantities on such paths are zero.
    Convention,
}

/// `pi_1, ..., pi_T` along one observation path. `None` marks steps whose
/// conditioning prefix is impossible (only produced under
/// [`ZeroPolicy::Convention`]; the zero measure stands in for it).
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTrajectory {
    pub pis: Vec<Option<ProbabilityVector>>,
}

impl FilterTrajectory {
    pub fn len(&self) -> usize {
        self.pis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pis.is_empty()
    }

    /// `pi_t` for `t` in `1..=T`.
    pub fn pi(&self, t: usize) -> Option<&ProbabilityVector> {
        self.pis[t - 1].as_ref()
    }

    /// `pi_t` as a plain vector, zero where undefined.
    pub fn pi_or_zero(&self, t: usize, d: usize) -> Vec<f64> {
        self.pi(t).map_or_else(|| vec![0.0; d], |p| p.as_slice().to_vec())
    }

    /// Unwraps every step; `None` if any step was impossible.
    pub fn into_measures(self) -> Option<Vec<ProbabilityVector>> {
        self.pis.into_iter().collect()
    }
}

fn check_tokens(model: &HmmModel, z: &[usize]) -> Result<()> {
    z.iter().try_for_each(|&zt| model.check_token(zt))
}

/// One filter step from `pi_{t-1}` with observation `z_t`. Returns the new
/// measure and the normalizer `P(Z_t = z_t | z_{1:t-1})`.
pub fn filter_step(model: &HmmModel, prior: &[f64], z: usize) -> (Option<ProbabilityVector>, f64) {
    let weighted: Vec<f64> = prior
        .iter()
        .enumerate()
        .map(|(x, p)| p * model.emission(x, z))
        .collect();
    let norm: f64 = weighted.iter().sum();
    if norm > 0.0 {
        let posterior: Vec<f64> = weighted.iter().map(|w| w / norm).collect();
        (
            Some(ProbabilityVector::normalized(model.propagate(&posterior))),
            norm,
        )
    } else {
        (None, 0.0)
    }
}

/// Exact filter `pi_t(x) = P(X_t = x | z_1..z_t)` for `t = 1..=z.len()`.
pub fn forward_filter(model: &HmmModel, z: &[usize], policy: ZeroPolicy) -> Result<FilterTrajectory> {
    check_tokens(model, z)?;
    let mut pis = Vec::with_capacity(z.len());
    let mut current = model.mu().as_slice().to_vec();
    for (i, &zt) in z.iter().enumerate() {
        match filter_step(model, &current, zt) {
            (Some(pi), _) => {
                current = pi.as_slice().to_vec();
                pis.push(Some(pi));
            }
            (None, _) => match policy {
                ZeroPolicy::Strict => return Err(Error::ImpossibleObservation { t: i + 1 }),
                ZeroPolicy::Convention => {
                    pis.resize(z.len(), None);
                    break;
                }
            },
        }
    }
    Ok(FilterTrajectory { pis })
}

/// `p(z) = sum_x pi(x) C(x, z)` over all tokens.
pub fn next_token_prob(model: &HmmModel, pi: &[f64]) -> Vec<f64> {
    (0..model.alphabet())
        .map(|z| pi.iter().enumerate().map(|(x, p)| p * model.emission(x, z)).sum())
        .collect()
}

/// `p_1, ..., p_T` for a filter trajectory; zero vectors where undefined.
pub fn predictions(model: &HmmModel, traj: &FilterTrajectory) -> Vec<Vec<f64>> {
    (1..=traj.len())
        .map(|t| next_token_prob(model, &traj.pi_or_zero(t, model.d())))
        .collect()
}

/// `P(Z_{1:T} = z)` by the unnormalized forward recursion.
pub fn path_probability(model: &HmmModel, z: &[usize]) -> Result<f64> {
    check_tokens(model, z)?;
    let mut alpha = model.mu().as_slice().to_vec();
    for &zt in z {
        let weighted: Vec<f64> = alpha
            .iter()
            .enumerate()
            .map(|(x, a)| a * model.emission(x, zt))
            .collect();
        alpha = model.propagate(&weighted);
    }
    Ok(alpha.iter().sum())
}

fn checked_pow(base: usize, exp: usize) -> u128 {
    (0..exp).fold(1u128, |acc, _| acc.saturating_mul(base as u128))
}

/// Sum over all hidden paths `x_0..x_t` of `mu(x_0) prod C(x_{s-1}, z_s)
/// A(x_{s-1}, x_s)`, grouped by the final state `x_t`. This is the joint
/// `P(X_t = x, Z_{1:t} = z)`, computed without any recursion.
fn joint_by_enumeration(model: &HmmModel, z: &[usize], budget: u128) -> Result<Vec<f64>> {
    check_tokens(model, z)?;
    let d = model.d();
    let t = z.len();
    let terms = checked_pow(d, t + 1);
    if terms > budget {
        return Err(Error::BudgetExceeded { terms, budget });
    }
    let mut out = vec![0.0; d];
    let mut xs = vec![0usize; t + 1];
    loop {
        let mut p = model.mu()[xs[0]];
        for s in 1..=t {
            p *= model.emission(xs[s - 1], z[s - 1]) * model.transition(xs[s - 1], xs[s]);
        }
        out[xs[t]] += p;
        let mut k = t + 1;
        loop {
            if k == 0 {
                return Ok(out);
            }
            k -= 1;
            xs[k] += 1;
            if xs[k] < d {
                break;
            }
            xs[k] = 0;
        }
    }
}

/// `P(Z_{1:T} = z)` by summing over every hidden path.
pub fn path_probability_by_enumeration(model: &HmmModel, z: &[usize], budget: u128) -> Result<f64> {
    Ok(joint_by_enumeration(model, z, budget)?.iter().sum())
}

/// `P(X_t = . | Z_{1:t} = z)` by Bayes' rule on the enumerated joint.
/// `None` when the prefix has probability zero.
pub fn conditional_by_enumeration(
    model: &HmmModel,
    z: &[usize],
    budget: u128,
) -> Result<Option<Vec<f64>>> {
    let joint = joint_by_enumeration(model, z, budget)?;
    let total: f64 = joint.iter().sum();
    Ok((total > 0.0).then(|| joint.iter().map(|j| j / total).collect()))
}

/// `P(Z_{t+1} = . | Z_{1:t} = z)` as a ratio of enumerated path probabilities.
pub fn next_token_by_enumeration(
    model: &HmmModel,
    z: &[usize],
    budget: u128,
) -> Result<Option<Vec<f64>>> {
    let denom = path_probability_by_enumeration(model, z, budget)?;
    if denom <= 0.0 {
        return Ok(None);
    }
    let mut extended = z.to_vec();
    extended.push(0);
    let mut out = Vec::with_capacity(model.alphabet());
    for next in 0..model.alphabet() {
        *extended.last_mut().expect("non-empty") = next;
        out.push(path_probability_by_enumeration(model, &extended, budget)? / denom);
    }
    Ok(Some(out))
}

/// Number of joint paths `(x_0..x_T, z_1..z_T)` visited by
/// [`exact_expectation`].
pub fn joint_path_count(model: &HmmModel, horizon: usize) -> u128 {
    checked_pow(model.d(), horizon + 1).saturating_mul(checked_pow(model.alphabet(), horizon))
}

/// `E[h(X_{0:T}, Z_{1:T})]` by exhaustive enumeration of joint paths.
///
/// `h` receives `x_0..x_T` and `z_1..z_T` and is only called on paths of
/// positive probability. Summation order is fixed (depth-first, tokens
/// before states) so results are bit-reproducible.
pub fn exact_expectation(
    model: &HmmModel,
    horizon: usize,
    budget: u128,
    mut h: impl FnMut(&[usize], &[usize]) -> f64,
) -> Result<f64> {
    let terms = joint_path_count(model, horizon);
    if terms > budget {
        return Err(Error::BudgetExceeded { terms, budget });
    }
    let mut xs = Vec::with_capacity(horizon + 1);
    let mut zs = Vec::with_capacity(horizon);
    let mut acc = 0.0;
    for x0 in 0..model.d() {
        let p = model.mu()[x0];
        if p == 0.0 {
            continue;
        }
        xs.push(x0);
        descend(model, horizon, p, &mut xs, &mut zs, &mut h, &mut acc);
        xs.pop();
    }
    Ok(acc)
}

fn descend(
    model: &HmmModel,
    horizon: usize,
    prob: f64,
    xs: &mut Vec<usize>,
    zs: &mut Vec<usize>,
    h: &mut impl FnMut(&[usize], &[usize]) -> f64,
    acc: &mut f64,
) {
    if zs.len() == horizon {
        *acc += prob * h(xs, zs);
        return;
    }
    let x = *xs.last().expect("x_0 pushed");
    for z in 0..model.alphabet() {
        let pz = prob * model.emission(x, z);
        if pz == 0.0 {
            continue;
        }
        zs.push(z);
        for y in 0..model.d() {
            let p = pz * model.transition(x, y);
            if p == 0.0 {
                continue;
            }
            xs.push(y);
            descend(model, horizon, p, xs, zs, h, acc);
            xs.pop();
        }
        zs.pop();
    }
}

/// The filter on every observation prefix, with prefix probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterProcess {
    /// Level `t` holds `pi_t` for every prefix `z_1..z_t`; level 0 is `mu`.
    /// On impossible prefixes the parent measure is pushed through `A`
    /// without conditioning.
    pub measures: AdaptedProcess<ProbabilityVector>,
    /// `P(Z_{1:t} = z_{1:t})` per prefix.
    pub probabilities: AdaptedProcess<f64>,
}

impl FilterProcess {
    pub fn is_possible(&self, t: usize, idx: usize) -> bool {
        *self.probabilities.at(t, idx) > 0.0
    }
}

/// Runs the filter over the full prefix tree up to `horizon`.
pub fn filter_process(model: &HmmModel, horizon: usize) -> FilterProcess {
    let a = model.alphabet();
    let mut measures = vec![vec![model.mu().clone()]];
    let mut probabilities = vec![vec![1.0]];
    for t in 0..horizon {
        let mut next_m = Vec::with_capacity(measures[t].len() * a);
        let mut next_p = Vec::with_capacity(measures[t].len() * a);
        for (pi, &prob) in measures[t].iter().zip(&probabilities[t]) {
            for z in 0..a {
                let (child, norm) = filter_step(model, pi.as_slice(), z);
                let child = child.unwrap_or_else(|| {
                    ProbabilityVector::normalized(model.propagate(pi.as_slice()))
                });
                next_m.push(child);
                next_p.push(prob * norm);
            }
        }
        measures.push(next_m);
        probabilities.push(next_p);
    }
    FilterProcess {
        measures: AdaptedProcess::from_levels(a, measures).expect("levels built complete"),
        probabilities: AdaptedProcess::from_levels(a, probabilities).expect("levels built complete"),
    }
}
