//! The fixed-point inference map `N` built from the dual system.
//!
//! Given candidate conditional measures `rho`, each output measure is
//! assembled basis function by basis function: the dual equation is solved
//! backward with the control in feedback form evaluated at `rho`, and the
//! resulting estimator `mu(y_0) - sum u_s` is read off. The exact filter is
//! a fixed point.
//!
//! Two versions are provided. The path version works along one observed
//! string with scalar controls. The adapted version works on the whole
//! prefix tree with `R^m` controls and reuses [`crate::dual::solve_optimal`].

use alloc::vec;
use alloc::vec::Vec;

use crate::adapted::AdaptedProcess;
use crate::dual::{estimator_path, solve_optimal, TerminalFunction};
use crate::error::{Error, Result};
use crate::hmm::{HmmModel, ObservationPath, ProbabilityVector, SignedMeasure};
use crate::linalg::dot;
use crate::oracle::{filter_process, forward_filter, next_token_prob, ZeroPolicy};

/// Below this `|1 - nu(c)^2|` the scalar feedback is zero.
pub const DEGENERATE_DENOMINATOR: f64 = 1e-12;

/// Tolerance for declaring an output measure a probability vector.
pub const DOMAIN_TOLERANCE: f64 = 1e-12;

/// `rho_1, ..., rho_T` along one observation path.
pub type MeasurePath = Vec<ProbabilityVector>;

/// `0.5 * sum |a - b|`.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

fn in_domain(entries: &[f64]) -> bool {
    let total: f64 = entries.iter().sum();
    entries.iter().all(|&p| p >= -DOMAIN_TOLERANCE) && (total - 1.0).abs() <= DOMAIN_TOLERANCE
}

/// `phi(f; nu, c) = -nu((Af)(c - nu(c))) / (1 - nu(c)^2)`, or exactly 0 when
/// the denominator is degenerate.
pub fn scalar_feedback(model: &HmmModel, f: &[f64], nu: &ProbabilityVector, c: &[f64]) -> f64 {
    let nu = nu.as_slice();
    let nu_c = dot(nu, c);
    let denominator = 1.0 - nu_c * nu_c;
    if denominator.abs() <= DEGENERATE_DENOMINATOR {
        return 0.0;
    }
    let af = model.apply_transition(f);
    let numerator: f64 = (0..nu.len()).map(|x| nu[x] * af[x] * (c[x] - nu_c)).sum();
    -numerator / denominator
}

/// Solution of the backward difference equation for one `(t, f)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct BdeSolution {
    pub y0: Vec<f64>,
    /// `u_0, ..., u_{t-1}`.
    pub controls: Vec<f64>,
}

fn check_measure_path(model: &HmmModel, rho: &[ProbabilityVector], z: &ObservationPath) -> Result<()> {
    if rho.len() != z.len() {
        return Err(Error::Dimension {
            what: "measure path",
            expected: z.len(),
            found: rho.len(),
        });
    }
    for r in rho {
        if r.len() != model.d() {
            return Err(Error::Dimension {
                what: "measure",
                expected: model.d(),
                found: r.len(),
            });
        }
    }
    z.iter().try_for_each(|&zt| model.check_token(zt))
}

/// `y_t = f`; for `s = t-1, ..., 0`:
/// `u_s = phi(y_{s+1}; nu_s, c_{s+1})`, `y_s = A y_{s+1} + c_{s+1} u_s`
/// with `nu_0 = mu`, `nu_s = rho_s` and `c_s = 2 C(., z_s) - 1`.
pub fn bde_solve(
    model: &HmmModel,
    rho: &[ProbabilityVector],
    z: &ObservationPath,
    t: usize,
    f: &[f64],
) -> Result<BdeSolution> {
    check_measure_path(model, rho, z)?;
    if t == 0 || t > z.len() {
        return Err(Error::Dimension {
            what: "bde horizon",
            expected: z.len(),
            found: t,
        });
    }
    if f.len() != model.d() {
        return Err(Error::Dimension {
            what: "terminal function",
            expected: model.d(),
            found: f.len(),
        });
    }
    let mut y = f.to_vec();
    let mut controls = vec![0.0; t];
    for s in (0..t).rev() {
        let c = model.scalar_obs(z[s])?;
        let nu = if s == 0 { model.mu() } else { &rho[s - 1] };
        let u = scalar_feedback(model, &y, nu, &c);
        let ay = model.apply_transition(&y);
        y = ay.iter().zip(&c).map(|(a, ci)| a + ci * u).collect();
        controls[s] = u;
    }
    Ok(BdeSolution { y0: y, controls })
}

/// Output of the path map.
#[derive(Debug, Clone, PartialEq)]
pub struct PathImage {
    /// `(N rho)_1, ..., (N rho)_T`.
    pub measures: Vec<SignedMeasure>,
    /// Whether every output measure is a probability vector.
    pub in_domain: bool,
}

/// `(N rho)_t(j) = mu(y_0) - sum_{s<t} u_s` with `f = 1_{x=j}`.
pub fn apply_n_path(model: &HmmModel, rho: &[ProbabilityVector], z: &ObservationPath) -> Result<PathImage> {
    check_measure_path(model, rho, z)?;
    let d = model.d();
    let mut measures = Vec::with_capacity(z.len());
    for t in 1..=z.len() {
        let mut out = vec![0.0; d];
        for (j, slot) in out.iter_mut().enumerate() {
            let mut basis = vec![0.0; d];
            basis[j] = 1.0;
            let sol = bde_solve(model, rho, z, t, &basis)?;
            *slot = model.mu().expect(&sol.y0) - sol.controls.iter().sum::<f64>();
        }
        measures.push(SignedMeasure::new(out)?);
    }
    let in_domain = measures.iter().all(|m| in_domain(m.as_slice()));
    Ok(PathImage {
        measures,
        in_domain,
    })
}

/// `max_t TV(rho_t, (N rho)_t)` along one path.
pub fn path_residual(model: &HmmModel, rho: &[ProbabilityVector], z: &ObservationPath) -> Result<f64> {
    let image = apply_n_path(model, rho, z)?;
    Ok(path_residuals(rho, &image).into_iter().fold(0.0, f64::max))
}

fn path_residuals(rho: &[ProbabilityVector], image: &PathImage) -> Vec<f64> {
    rho.iter()
        .zip(&image.measures)
        .map(|(r, n)| total_variation(r.as_slice(), n.as_slice()))
        .collect()
}

/// Output of the adapted map.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedImage {
    /// Levels `0..=T`; level 0 is `mu`.
    pub measures: AdaptedProcess<SignedMeasure>,
    pub in_domain: AdaptedProcess<bool>,
}

/// Adapted version of `N`: for every `t` and basis terminal `F = 1_{x=j}`
/// the dual system on horizon `t` is solved with feedback at `rho`, and
/// `(N rho)_t(j)` on a prefix is the estimator `mu(Y_0) - sum U_s^T e(z_{s+1})`.
///
/// `rho` needs levels `0..horizon`; level `t` is used for the control at
/// time `t`.
pub fn apply_n_adapted(
    model: &HmmModel,
    rho: &AdaptedProcess<ProbabilityVector>,
    horizon: usize,
) -> Result<AdaptedImage> {
    let d = model.d();
    let a = model.alphabet();
    let mut levels: Vec<Vec<Vec<f64>>> = vec![vec![model.mu().as_slice().to_vec()]];
    for t in 1..=horizon {
        let nodes = crate::adapted::path_count(a, t).expect("small horizon");
        let mut level = vec![vec![0.0; d]; nodes];
        for j in 0..d {
            let mut basis = vec![0.0; d];
            basis[j] = 1.0;
            let traj = solve_optimal(model, rho, &TerminalFunction::Deterministic(basis), t)?;
            for (idx, out) in level.iter_mut().enumerate() {
                let prefix = crate::adapted::path_of_index(a, t, idx);
                out[j] = estimator_path(model, &traj, &prefix, t)?;
            }
        }
        levels.push(level);
    }
    let measures = AdaptedProcess::from_levels(a, levels)?;
    let in_domain = measures.map(|_, _, v| in_domain(v));
    let measures = measures.map(|_, _, v| SignedMeasure::new(v.clone()).expect("finite"));
    Ok(AdaptedImage {
        measures,
        in_domain,
    })
}

/// `max TV(rho_t, (N rho)_t)` over `t = 1..=horizon` and every prefix of
/// positive probability.
pub fn adapted_residual(
    model: &HmmModel,
    rho: &AdaptedProcess<ProbabilityVector>,
    horizon: usize,
) -> Result<f64> {
    if rho.num_levels() < horizon + 1 {
        return Err(Error::Incomplete {
            what: "measure process",
            expected: horizon + 1,
            found: rho.num_levels(),
        });
    }
    let image = apply_n_adapted(model, rho, horizon)?;
    let possible = filter_process(model, horizon);
    let mut worst: f64 = 0.0;
    for t in 1..=horizon {
        for (idx, out) in image.measures.level(t).iter().enumerate() {
            if possible.is_possible(t, idx) {
                worst = worst.max(total_variation(rho.at(t, idx).as_slice(), out.as_slice()));
            }
        }
    }
    Ok(worst)
}

/// `(1/T) sum_t sum_z p_final ln(p_final / p_layer)`.
///
/// Rows are time steps. Terms with `p_final = 0` contribute nothing; a
/// positive `p_final` against a zero `p_layer` gives `+inf`.
pub fn kl_divergence_bar(p_final: &[Vec<f64>], p_layer: &[Vec<f64>]) -> Result<f64> {
    if p_final.len() != p_layer.len() {
        return Err(Error::Dimension {
            what: "prediction table rows",
            expected: p_final.len(),
            found: p_layer.len(),
        });
    }
    if p_final.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (pf, pl) in p_final.iter().zip(p_layer) {
        if pf.len() != pl.len() {
            return Err(Error::Dimension {
                what: "prediction table columns",
                expected: pf.len(),
                found: pl.len(),
            });
        }
        for (&p, &q) in pf.iter().zip(pl) {
            if p > 0.0 {
                if q <= 0.0 {
                    return Ok(f64::INFINITY);
                }
                total += p * libm::log(p / q);
            }
        }
    }
    Ok((total / p_final.len() as f64).max(0.0))
}

/// A clip-and-renormalize event during iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// 1-based iteration.
    pub iter: usize,
    /// 1-based time.
    pub t: usize,
}

/// History of repeated application of the path map.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    /// `K + 1` measure paths; the first is the initialization.
    pub iterates: Vec<MeasurePath>,
    /// `max_t TV` between consecutive iterates before projection.
    pub residuals: Vec<f64>,
    /// Per-iteration, per-time TV residuals.
    pub residuals_by_time: Vec<Vec<f64>>,
    /// `KL` between oracle predictions and the new iterate's predictions.
    pub kl_per_iter: Vec<f64>,
    pub in_domain: Vec<bool>,
    pub projections: Vec<Projection>,
}

/// Applies the path map `iterations` times from `rho0` (uniform measures
/// when `None`).
pub fn iterate(
    model: &HmmModel,
    z: &ObservationPath,
    rho0: Option<MeasurePath>,
    iterations: usize,
) -> Result<IterationTrace> {
    if iterations == 0 {
        return Err(Error::Config("iteration count must be at least 1".into()));
    }
    let horizon = z.len();
    let oracle = forward_filter(model, z, ZeroPolicy::Strict)?;
    let oracle_p: Vec<Vec<f64>> = (1..=horizon)
        .map(|t| next_token_prob(model, oracle.pi(t).expect("strict filter").as_slice()))
        .collect();
    let rho0 = rho0.unwrap_or_else(|| vec![ProbabilityVector::uniform(model.d()); horizon]);
    let mut trace = IterationTrace {
        iterates: vec![rho0],
        residuals: Vec::with_capacity(iterations),
        residuals_by_time: Vec::with_capacity(iterations),
        kl_per_iter: Vec::with_capacity(iterations),
        in_domain: Vec::with_capacity(iterations),
        projections: Vec::new(),
    };
    for k in 1..=iterations {
        let current = trace.iterates.last().expect("initialized");
        let image = apply_n_path(model, current, z)?;
        let by_time = path_residuals(current, &image);
        let mut next = Vec::with_capacity(horizon);
        for (t, out) in image.measures.iter().enumerate() {
            if in_domain(out.as_slice()) {
                next.push(ProbabilityVector::with_tolerance(
                    out.as_slice().to_vec(),
                    DOMAIN_TOLERANCE,
                )?);
            } else {
                trace.projections.push(Projection { iter: k, t: t + 1 });
                next.push(ProbabilityVector::project(out.as_slice()));
            }
        }
        let predicted: Vec<Vec<f64>> = next.iter().map(|r| next_token_prob(model, r.as_slice())).collect();
        trace.kl_per_iter.push(kl_divergence_bar(&oracle_p, &predicted)?);
        trace.residuals.push(by_time.iter().cloned().fold(0.0, f64::max));
        trace.residuals_by_time.push(by_time);
        trace.in_domain.push(image.in_domain);
        trace.iterates.push(next);
    }
    Ok(trace)
}
