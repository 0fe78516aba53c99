//! The dual control system of an HMM: a backward stochastic difference
//! equation driven by an adapted control `U`,
//!
//! ```text
//! Y_t(x) = (A Y_{t+1})(x) + c(x)^T (U_t + V_t(x)) - V_t(x)^T e(Z_{t+1}),   Y_T = F,
//! ```
//!
//! its quadratic cost `J_T(U; F)`, and the feedback law that makes the
//! estimator `mu(Y_0) - sum U_t^T e(Z_{t+1})` reproduce the filter.
//!
//! Solutions are computed on the full prefix tree. At every node the
//! successor map `z -> (A Y_{t+1})(x)` is split into mean and deviation;
//! `V_t(x)` is the deviation, which cancels the `e(Z_{t+1})` term so that
//! `Y_t` depends on the prefix only.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::adapted::{path_count, path_index, prefix_key, AdaptedProcess};
use crate::error::{Error, Result};
use crate::hmm::{decompose, embed_dot, HmmModel, ProbabilityVector};
use crate::linalg::{dot, pseudo_inverse_with_rank, solve_or_pinv};
use crate::oracle::{exact_expectation, filter_process};
use crate::predictor::AdaptedWeightProcess;

/// Terminal condition `Y_T = F`. `F` may depend on the whole token string.
#[derive(Debug, Clone, PartialEq)]
pub enum TerminalFunction {
    Deterministic(Vec<f64>),
    /// One `R^d` vector per full path, in path-index order.
    PathDependent { horizon: usize, values: Vec<Vec<f64>> },
}

impl TerminalFunction {
    /// `F` on the path with the given index at level `T`.
    pub fn at(&self, idx: usize) -> &[f64] {
        match self {
            TerminalFunction::Deterministic(f) => f,
            TerminalFunction::PathDependent { values, .. } => &values[idx],
        }
    }

    fn validate(&self, model: &HmmModel, horizon: usize) -> Result<()> {
        let d = model.d();
        let check = |f: &[f64]| {
            if f.len() != d {
                return Err(Error::Dimension {
                    what: "terminal function",
                    expected: d,
                    found: f.len(),
                });
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::NotFinite {
                    what: "terminal function",
                });
            }
            Ok(())
        };
        match self {
            TerminalFunction::Deterministic(f) => check(f),
            TerminalFunction::PathDependent { horizon: h, values } => {
                let expected = path_count(model.alphabet(), horizon).unwrap_or(usize::MAX);
                if *h != horizon || values.len() != expected {
                    return Err(Error::Incomplete {
                        what: "terminal function",
                        expected,
                        found: values.len(),
                    });
                }
                values.iter().try_for_each(|f| check(f))
            }
        }
    }
}

/// Solution `(Y, V)` of the dual system together with the control `U`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualTrajectory {
    /// Levels `0..=T`, one `R^d` vector per prefix.
    pub y: AdaptedProcess<Vec<f64>>,
    /// Levels `0..T`; `v[t][idx][x]` is `V_t(x) in R^m`.
    pub v: AdaptedProcess<Vec<Vec<f64>>>,
    /// Levels `0..T`.
    pub u: AdaptedWeightProcess,
    /// Nodes `(t, idx)` where the feedback elimination hit a singular
    /// system and fell back to the pseudo-inverse.
    pub singular_nodes: Vec<(usize, usize)>,
}

impl DualTrajectory {
    pub fn horizon(&self) -> usize {
        self.u.num_levels()
    }

    /// `Y_0`, a deterministic vector since the prefix at time 0 is empty.
    pub fn y0(&self) -> &[f64] {
        let level = self.y.level(0);
        assert_eq!(level.len(), 1, "Y_0 must be deterministic");
        &level[0]
    }
}

/// Per-model quantities reused at every node.
struct Precomputed {
    c: Vec<Vec<f64>>,
    r: Vec<DMatrix<f64>>,
}

impl Precomputed {
    fn new(model: &HmmModel) -> Self {
        let c = (0..model.d())
            .map(|x| model.obs_vector(x).expect("state in range"))
            .collect();
        let r = (0..model.d())
            .map(|x| model.risk_matrix(x).expect("state in range"))
            .collect();
        Precomputed { c, r }
    }
}

/// Splits `z -> (A Y_{t+1}(prefix, z))(x)` for every `x`. Returns the means
/// and the deviation vectors `V_t(x)`.
fn successor_split(model: &HmmModel, children: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let propagated: Vec<Vec<f64>> = children.iter().map(|y| model.apply_transition(y)).collect();
    let mut means = Vec::with_capacity(model.d());
    let mut v = Vec::with_capacity(model.d());
    let mut s = vec![0.0; children.len()];
    for x in 0..model.d() {
        for (slot, ay) in s.iter_mut().zip(&propagated) {
            *slot = ay[x];
        }
        let split = decompose(&s);
        means.push(split.mean);
        v.push(split.tilde);
    }
    (means, v)
}

fn check_control(model: &HmmModel, u: &AdaptedWeightProcess) -> Result<()> {
    if u.alphabet() != model.alphabet() {
        return Err(Error::Dimension {
            what: "control alphabet",
            expected: model.alphabet(),
            found: u.alphabet(),
        });
    }
    for (_, _, _, w) in u.nodes() {
        if w.len() != model.m() {
            return Err(Error::Dimension {
                what: "control vector",
                expected: model.m(),
                found: w.len(),
            });
        }
    }
    Ok(())
}

fn terminal_level(f: &TerminalFunction, alphabet: usize, horizon: usize) -> Vec<Vec<f64>> {
    let n = path_count(alphabet, horizon).expect("validated");
    (0..n).map(|idx| f.at(idx).to_vec()).collect()
}

fn assemble(
    alphabet: usize,
    mut y_rev: Vec<Vec<Vec<f64>>>,
    mut v_rev: Vec<Vec<Vec<Vec<f64>>>>,
    mut u_rev: Vec<Vec<Vec<f64>>>,
    singular_nodes: Vec<(usize, usize)>,
) -> DualTrajectory {
    y_rev.reverse();
    v_rev.reverse();
    u_rev.reverse();
    DualTrajectory {
        y: AdaptedProcess::from_levels(alphabet, y_rev).expect("levels built complete"),
        v: AdaptedProcess::from_levels(alphabet, v_rev).expect("levels built complete"),
        u: AdaptedProcess::from_levels(alphabet, u_rev).expect("levels built complete"),
        singular_nodes,
    }
}

/// Solves the dual system backward for a given control and terminal
/// condition. The horizon is the number of levels of `u`.
pub fn solve_bsde(model: &HmmModel, u: &AdaptedWeightProcess, f: &TerminalFunction) -> Result<DualTrajectory> {
    check_control(model, u)?;
    let horizon = u.num_levels();
    f.validate(model, horizon)?;
    let a = model.alphabet();
    let pre = Precomputed::new(model);

    let mut y_rev = vec![terminal_level(f, a, horizon)];
    let mut v_rev = Vec::with_capacity(horizon);
    let mut u_rev = Vec::with_capacity(horizon);
    for t in (0..horizon).rev() {
        let next = y_rev.last().expect("terminal level");
        let mut y_level = Vec::with_capacity(next.len() / a);
        let mut v_level = Vec::with_capacity(next.len() / a);
        for (idx, children) in next.chunks(a).enumerate() {
            let (means, v) = successor_split(model, children);
            let ut = u.at(t, idx);
            let y: Vec<f64> = (0..model.d())
                .map(|x| {
                    let uv: Vec<f64> = ut.iter().zip(&v[x]).map(|(a, b)| a + b).collect();
                    means[x] + dot(&pre.c[x], &uv)
                })
                .collect();
            y_level.push(y);
            v_level.push(v);
        }
        y_rev.push(y_level);
        v_rev.push(v_level);
        u_rev.push(u.level(t).to_vec());
    }
    Ok(assemble(a, y_rev, v_rev, u_rev, Vec::new()))
}

/// `l(y, v, u; x) = (Gamma y)(x) + (u + v(x))^T R(x) (u + v(x))`.
pub fn running_cost(model: &HmmModel, y: &[f64], v: &[Vec<f64>], u: &[f64], x: usize) -> Result<f64> {
    let r = model.risk_matrix(x)?;
    Ok(running_cost_with(model, &model.gamma(y), &r, &v[x], u, x))
}

fn running_cost_with(
    _model: &HmmModel,
    gamma_y: &[f64],
    r: &DMatrix<f64>,
    vx: &[f64],
    u: &[f64],
    x: usize,
) -> f64 {
    let w = DVector::from_iterator(u.len(), u.iter().zip(vx).map(|(a, b)| a + b));
    gamma_y[x] + w.dot(&(r * &w))
}

/// `var(Y_0(X_0)) + E sum_t l(Y_{t+1}, V_t, U_t; X_t)` for a solved
/// trajectory.
pub fn cost_of(model: &HmmModel, traj: &DualTrajectory, budget: u128) -> Result<f64> {
    let horizon = traj.horizon();
    let a = model.alphabet();
    let pre = Precomputed::new(model);
    let y0 = traj.y0();
    let mean = model.mu().expect(y0);
    let second: f64 = model
        .mu()
        .as_slice()
        .iter()
        .zip(y0)
        .map(|(p, y)| p * y * y)
        .sum();
    let variance = second - mean * mean;

    // stage_cost[t][child][x] = l(Y_{t+1}(child), V_t(parent), U_t(parent); x)
    let stage_cost: Vec<Vec<Vec<f64>>> = (0..horizon)
        .map(|t| {
            traj.y
                .level(t + 1)
                .iter()
                .enumerate()
                .map(|(child, y_next)| {
                    let parent = child / a;
                    let gamma = model.gamma(y_next);
                    let v = traj.v.at(t, parent);
                    let u = traj.u.at(t, parent);
                    (0..model.d())
                        .map(|x| running_cost_with(model, &gamma, &pre.r[x], &v[x], u, x))
                        .collect()
                })
                .collect()
        })
        .collect();

    let expected_running = exact_expectation(model, horizon, budget, |xs, zs| {
        let mut idx = 0;
        let mut total = 0.0;
        for t in 0..horizon {
            idx = idx * a + zs[t];
            total += stage_cost[t][idx][xs[t]];
        }
        total
    })?;
    Ok(variance + expected_running)
}

/// `J_T(U; F)`: solves the dual system and evaluates its cost exactly.
pub fn total_cost(
    model: &HmmModel,
    u: &AdaptedWeightProcess,
    f: &TerminalFunction,
    budget: u128,
) -> Result<f64> {
    cost_of(model, &solve_bsde(model, u, f)?, budget)
}

/// `mu(Y_0) - sum_{s<t} U_s(z_{1:s})^T e(z_{s+1})`.
pub fn estimator_path(model: &HmmModel, traj: &DualTrajectory, z: &[usize], t: usize) -> Result<f64> {
    if t > traj.horizon() || z.len() < t {
        return Err(Error::Dimension {
            what: "estimator time",
            expected: traj.horizon(),
            found: t,
        });
    }
    let mut value = model.mu().expect(traj.y0());
    for s in 0..t {
        model.check_token(z[s])?;
        value -= embed_dot(traj.u.get(&z[..s]).expect("prefix in tree"), z[s]);
    }
    Ok(value)
}

/// `S_T` on every full path.
fn terminal_estimates(model: &HmmModel, traj: &DualTrajectory) -> Vec<f64> {
    let a = model.alphabet();
    let mut current = vec![model.mu().expect(traj.y0())];
    for t in 0..traj.horizon() {
        let mut next = Vec::with_capacity(current.len() * a);
        for (idx, s) in current.iter().enumerate() {
            let w = traj.u.at(t, idx);
            for z in 0..a {
                next.push(s - embed_dot(w, z));
            }
        }
        current = next;
    }
    current
}

/// `E|F(X_T) - S_T|^2` for the estimator built from `traj`.
pub fn estimator_mse(model: &HmmModel, traj: &DualTrajectory, f: &TerminalFunction, budget: u128) -> Result<f64> {
    let horizon = traj.horizon();
    f.validate(model, horizon)?;
    let a = model.alphabet();
    let estimates = terminal_estimates(model, traj);
    exact_expectation(model, horizon, budget, |xs, zs| {
        let leaf = path_index(a, zs);
        let err = f.at(leaf)[xs[horizon]] - estimates[leaf];
        err * err
    })
}

/// `E|F(X_T) - pi_T(F)|^2`, the minimum mean squared error.
pub fn mmse(model: &HmmModel, f: &TerminalFunction, horizon: usize, budget: u128) -> Result<f64> {
    f.validate(model, horizon)?;
    let a = model.alphabet();
    let process = filter_process(model, horizon);
    let filtered: Vec<f64> = process
        .measures
        .level(horizon)
        .iter()
        .enumerate()
        .map(|(idx, pi)| pi.expect(f.at(idx)))
        .collect();
    exact_expectation(model, horizon, budget, |xs, zs| {
        let leaf = path_index(a, zs);
        let err = f.at(leaf)[xs[horizon]] - filtered[leaf];
        err * err
    })
}

/// Both sides of the duality principle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualityReport {
    pub j_t: f64,
    pub mse: f64,
    pub gap: f64,
}

/// `|J_T(U;F) - E|F(X_T) - S_T|^2|`, with both sides enumerated exactly.
pub fn duality_gap(
    model: &HmmModel,
    u: &AdaptedWeightProcess,
    f: &TerminalFunction,
    budget: u128,
) -> Result<DualityReport> {
    let traj = solve_bsde(model, u, f)?;
    let j_t = cost_of(model, &traj, budget)?;
    let mse = estimator_mse(model, &traj, f, budget)?;
    Ok(DualityReport {
        j_t,
        mse,
        gap: (j_t - mse).abs(),
    })
}

/// The pieces of the feedback law at one measure.
struct FeedbackTerms {
    risk_pinv: DMatrix<f64>,
    singular: bool,
    c_avg: Vec<f64>,
}

impl FeedbackTerms {
    fn new(pre: &Precomputed, rho: &[f64], m: usize) -> Self {
        let mut risk_avg = DMatrix::zeros(m, m);
        let mut c_avg = vec![0.0; m];
        for (x, &p) in rho.iter().enumerate() {
            risk_avg += &pre.r[x] * p;
            for (acc, c) in c_avg.iter_mut().zip(&pre.c[x]) {
                *acc += p * c;
            }
        }
        let (risk_pinv, singular) = pseudo_inverse_with_rank(&risk_avg);
        FeedbackTerms {
            risk_pinv,
            singular,
            c_avg,
        }
    }

    /// `rho((c - rho(c)) y)`
    fn centered_c(&self, pre: &Precomputed, rho: &[f64], y: &[f64]) -> DVector<f64> {
        let m = self.c_avg.len();
        let mut out = DVector::zeros(m);
        for (x, &p) in rho.iter().enumerate() {
            for i in 0..m {
                out[i] += p * (pre.c[x][i] - self.c_avg[i]) * y[x];
            }
        }
        out
    }

    /// `rho(R v)`
    fn risk_v(&self, pre: &Precomputed, rho: &[f64], v: &[Vec<f64>]) -> DVector<f64> {
        let m = self.c_avg.len();
        let mut out = DVector::zeros(m);
        for (x, &p) in rho.iter().enumerate() {
            out += (&pre.r[x] * DVector::from_column_slice(&v[x])) * p;
        }
        out
    }
}

/// Optimal feedback `phi(y, v; rho) = -rho(R)^+ (rho((c - rho(c)) y) + rho(R v))`
/// where `rho(R) = sum_x rho(x) R(x)` and `^+` is the pseudo-inverse.
///
/// With this sign the estimator built from the feedback control reproduces
/// `pi_t(Y_t)` at every time when `rho` is the exact filter.
pub fn optimal_feedback(model: &HmmModel, y: &[f64], v: &[Vec<f64>], rho: &ProbabilityVector) -> Vec<f64> {
    let pre = Precomputed::new(model);
    let terms = FeedbackTerms::new(&pre, rho.as_slice(), model.m());
    let rhs = terms.centered_c(&pre, rho.as_slice(), y) + terms.risk_v(&pre, rho.as_slice(), v);
    (-(&terms.risk_pinv * rhs)).iter().cloned().collect()
}

/// Solves the dual system with the control in feedback form
/// `U_t = phi(Y_t, V_t; rho_t)`.
///
/// `rho` must have at least `horizon` levels; level `t` is used at time `t`
/// (level 0 is the measure used at time 0, normally `mu`). Since `Y_t`
/// is affine in `U_t`, substituting it into the feedback law gives the
/// `m x m` linear system `(I + rho(R)^+ K) U_t = -rho(R)^+ b` which is
/// solved directly, falling back to the pseudo-inverse when singular.
pub fn solve_optimal(
    model: &HmmModel,
    rho: &AdaptedProcess<ProbabilityVector>,
    f: &TerminalFunction,
    horizon: usize,
) -> Result<DualTrajectory> {
    f.validate(model, horizon)?;
    let a = model.alphabet();
    if rho.alphabet() != a {
        return Err(Error::Dimension {
            what: "measure process alphabet",
            expected: a,
            found: rho.alphabet(),
        });
    }
    if rho.num_levels() < horizon {
        return Err(Error::Incomplete {
            what: "measure process",
            expected: horizon,
            found: rho.num_levels(),
        });
    }
    let d = model.d();
    let m = model.m();
    let pre = Precomputed::new(model);

    let mut y_rev = vec![terminal_level(f, a, horizon)];
    let mut v_rev = Vec::with_capacity(horizon);
    let mut u_rev = Vec::with_capacity(horizon);
    let mut singular_nodes = Vec::new();
    for t in (0..horizon).rev() {
        let next = y_rev.last().expect("terminal level");
        let nodes = next.len() / a;
        let mut y_level = Vec::with_capacity(nodes);
        let mut v_level = Vec::with_capacity(nodes);
        let mut u_level = Vec::with_capacity(nodes);
        for (idx, children) in next.chunks(a).enumerate() {
            let (means, v) = successor_split(model, children);
            let nu = rho.at(t, idx);
            if nu.len() != d {
                return Err(Error::Dimension {
                    what: "measure",
                    expected: d,
                    found: nu.len(),
                });
            }
            let nu = nu.as_slice();
            let terms = FeedbackTerms::new(&pre, nu, m);

            // rho((c - rho c) Y) = b_mean + K U + k_v with Y = mean + c^T (U + V)
            let b_mean = terms.centered_c(&pre, nu, &means);
            let mut k = DMatrix::zeros(m, m);
            let mut k_v = DVector::zeros(m);
            for (x, &p) in nu.iter().enumerate() {
                let centered = DVector::from_iterator(m, (0..m).map(|i| pre.c[x][i] - terms.c_avg[i]));
                let cx = DVector::from_column_slice(&pre.c[x]);
                k += &centered * cx.transpose() * p;
                k_v += centered * (dot(&pre.c[x], &v[x]) * p);
            }
            let rhs = b_mean + k_v + terms.risk_v(&pre, nu, &v);
            let system = DMatrix::identity(m, m) + &terms.risk_pinv * k;
            let (ut, singular) = solve_or_pinv(&system, &(-(&terms.risk_pinv * rhs)));
            if singular || terms.singular {
                singular_nodes.push((t, idx));
            }
            let ut: Vec<f64> = ut.iter().cloned().collect();
            let y: Vec<f64> = (0..d)
                .map(|x| {
                    let uv: Vec<f64> = ut.iter().zip(&v[x]).map(|(a, b)| a + b).collect();
                    means[x] + dot(&pre.c[x], &uv)
                })
                .collect();
            y_level.push(y);
            v_level.push(v);
            u_level.push(ut);
        }
        y_rev.push(y_level);
        v_rev.push(v_level);
        u_rev.push(u_level);
    }
    singular_nodes.sort_unstable();
    Ok(assemble(a, y_rev, v_rev, u_rev, singular_nodes))
}

/// One row of the diagnostics table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualRow {
    pub check: &'static str,
    pub t: usize,
    /// Index of the prefix at level `t`.
    pub index: usize,
    pub prefix: alloc::string::String,
    pub max_residual: f64,
}

/// Residual of the dual equation at every node, maximized over states and
/// successor tokens.
pub fn bsde_residuals(model: &HmmModel, traj: &DualTrajectory) -> Vec<ResidualRow> {
    let a = model.alphabet();
    let pre = Precomputed::new(model);
    let mut rows = Vec::new();
    for t in 0..traj.horizon() {
        for (idx, y) in traj.y.level(t).iter().enumerate() {
            let v = traj.v.at(t, idx);
            let u = traj.u.at(t, idx);
            let mut worst: f64 = 0.0;
            for z in 0..a {
                let ay = model.apply_transition(traj.y.at(t + 1, idx * a + z));
                for x in 0..model.d() {
                    let uv: Vec<f64> = u.iter().zip(&v[x]).map(|(a, b)| a + b).collect();
                    let rhs = ay[x] + dot(&pre.c[x], &uv) - embed_dot(&v[x], z);
                    worst = worst.max((y[x] - rhs).abs());
                }
            }
            rows.push(ResidualRow {
                check: "bsde",
                t,
                index: idx,
                prefix: prefix_key(&crate::adapted::path_of_index(a, t, idx)),
                max_residual: worst,
            });
        }
    }
    rows
}

/// `|U_t - phi(Y_t, V_t; rho_t)|_inf` at every node.
pub fn feedback_residuals(
    model: &HmmModel,
    traj: &DualTrajectory,
    rho: &AdaptedProcess<ProbabilityVector>,
) -> Vec<ResidualRow> {
    let a = model.alphabet();
    let mut rows = Vec::new();
    for t in 0..traj.horizon() {
        for (idx, y) in traj.y.level(t).iter().enumerate() {
            let phi = optimal_feedback(model, y, traj.v.at(t, idx), rho.at(t, idx));
            let worst = phi
                .iter()
                .zip(traj.u.at(t, idx))
                .map(|(p, u)| (p - u).abs())
                .fold(0.0, f64::max);
            rows.push(ResidualRow {
                check: "feedback",
                t,
                index: idx,
                prefix: prefix_key(&crate::adapted::path_of_index(a, t, idx)),
                max_residual: worst,
            });
        }
    }
    rows
}
