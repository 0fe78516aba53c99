//! Nonlinear-predictor representation of any function of the observed
//! tokens:
//!
//! ```text
//! S_T = constant - sum_{t=0}^{T-1} U_t(z_1..z_t)^T e(z_{t+1})
//! ```
//!
//! The weights are built by backward induction: at each prefix the map
//! `z -> S_t(prefix, z)` is split into its mean and deviations, the mean
//! becomes `S_{t-1}(prefix)` and the negated deviations become `U_{t-1}`.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::adapted::{for_each_path, path_count, path_index, AdaptedProcess};
use crate::error::{Error, Result};
use crate::hmm::{decompose, embed_dot, embed_token, HmmModel};
use crate::oracle::{filter_process, next_token_prob, ZeroPolicy};

/// Adapted `R^m`-valued weights `U_0, ..., U_{T-1}`.
pub type AdaptedWeightProcess = AdaptedProcess<Vec<f64>>;

/// A real function on full token strings of length `horizon`, stored densely
/// in path-index order.
#[derive(Debug, Clone, PartialEq)]
pub struct PathFunction {
    alphabet: usize,
    horizon: usize,
    values: Vec<f64>,
}

impl PathFunction {
    pub fn from_fn(alphabet: usize, horizon: usize, mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut values = Vec::new();
        for_each_path(alphabet, horizon, |p| values.push(f(p)));
        PathFunction {
            alphabet,
            horizon,
            values,
        }
    }

    pub fn from_values(alphabet: usize, horizon: usize, values: Vec<f64>) -> Result<Self> {
        let expected = path_count(alphabet, horizon)
            .ok_or_else(|| Error::Config("too many paths".into()))?;
        if values.len() != expected {
            return Err(Error::Incomplete {
                what: "path function",
                expected,
                found: values.len(),
            });
        }
        Ok(PathFunction {
            alphabet,
            horizon,
            values,
        })
    }

    /// Every path of length `horizon` must be a key.
    pub fn from_map(alphabet: usize, horizon: usize, map: &BTreeMap<Vec<usize>, f64>) -> Result<Self> {
        let expected = path_count(alphabet, horizon)
            .ok_or_else(|| Error::Config("too many paths".into()))?;
        let mut values = Vec::with_capacity(expected);
        let mut missing = false;
        for_each_path(alphabet, horizon, |p| match map.get(p) {
            Some(v) => values.push(*v),
            None => missing = true,
        });
        if missing {
            return Err(Error::Incomplete {
                what: "path function",
                expected,
                found: values.len(),
            });
        }
        Ok(PathFunction {
            alphabet,
            horizon,
            values,
        })
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, path: &[usize]) -> f64 {
        self.values[path_index(self.alphabet, path)]
    }
}

/// `constant - sum_t U_t^T e(z_{t+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorRepresentation {
    pub constant: f64,
    /// Levels `0..T`; level `t` holds `U_t` per prefix `z_1..z_t`.
    pub weights: AdaptedWeightProcess,
}

impl PredictorRepresentation {
    pub fn horizon(&self) -> usize {
        self.weights.num_levels()
    }

    /// Evaluates the representation on a full path.
    pub fn evaluate(&self, z: &[usize]) -> Result<f64> {
        evaluate(self, z)
    }
}

/// Backward induction over the prefix tree.
pub fn build_weights(target: &PathFunction) -> PredictorRepresentation {
    let a = target.alphabet;
    let mut current = target.values.clone();
    let mut weights_rev: Vec<Vec<Vec<f64>>> = Vec::with_capacity(target.horizon);
    for _ in 0..target.horizon {
        let parents = current.len() / a;
        let mut means = Vec::with_capacity(parents);
        let mut level = Vec::with_capacity(parents);
        for chunk in current.chunks(a) {
            let split = decompose(chunk);
            means.push(split.mean);
            level.push(split.tilde.iter().map(|v| -v).collect());
        }
        weights_rev.push(level);
        current = means;
    }
    weights_rev.reverse();
    PredictorRepresentation {
        constant: current[0],
        weights: AdaptedProcess::from_levels(a, weights_rev).expect("levels built complete"),
    }
}

/// Second construction of the same weights: at every prefix, fits
/// `s(z) = b + w^T e(z)` by least squares on the `(m+1) x (m+1)` design
/// matrix instead of using the closed-form split. Agrees with
/// [`build_weights`] whenever the representation is unique.
pub fn build_weights_least_squares(target: &PathFunction) -> PredictorRepresentation {
    let a = target.alphabet;
    let m = a - 1;
    let design = DMatrix::from_fn(a, a, |z, k| {
        if k == 0 {
            1.0
        } else {
            embed_token(m, z).expect("token in range")[k - 1]
        }
    });
    let svd = design.svd(true, true);
    let mut current = target.values.clone();
    let mut weights_rev: Vec<Vec<Vec<f64>>> = Vec::with_capacity(target.horizon);
    for _ in 0..target.horizon {
        let mut means = Vec::new();
        let mut level = Vec::new();
        for chunk in current.chunks(a) {
            let rhs = DVector::from_column_slice(chunk);
            let theta = svd.solve(&rhs, 1e-14).expect("design matrix factorized");
            means.push(theta[0]);
            level.push(theta.iter().skip(1).map(|v| -v).collect());
        }
        weights_rev.push(level);
        current = means;
    }
    weights_rev.reverse();
    PredictorRepresentation {
        constant: current[0],
        weights: AdaptedProcess::from_levels(a, weights_rev).expect("levels built complete"),
    }
}

/// `constant - sum_{t=0}^{T-1} U_t(z_{1:t})^T e(z_{t+1})`.
pub fn evaluate(rep: &PredictorRepresentation, z: &[usize]) -> Result<f64> {
    let horizon = rep.weights.num_levels();
    if z.len() != horizon {
        return Err(Error::Dimension {
            what: "observation path",
            expected: horizon,
            found: z.len(),
        });
    }
    let a = rep.weights.alphabet();
    let mut value = rep.constant;
    for t in 0..horizon {
        if z[t] >= a {
            return Err(Error::TokenOutOfRange {
                token: z[t],
                m: a - 1,
            });
        }
        let w = rep.weights.get(&z[..t]).ok_or(Error::Incomplete {
            what: "weight process",
            expected: horizon,
            found: t,
        })?;
        value -= embed_dot(w, z[t]);
    }
    Ok(value)
}

/// The map `path -> P(Z_{T+1} = z_query | Z_{1:T} = path)`.
///
/// Impossible paths raise under [`ZeroPolicy::Strict`] and are set to zero
/// under [`ZeroPolicy::Convention`].
pub fn conditional_target(model: &HmmModel, z_query: usize, policy: ZeroPolicy) -> Result<PathFunction> {
    model.check_token(z_query)?;
    let horizon = model.horizon();
    let process = filter_process(model, horizon);
    let a = model.alphabet();
    let mut values = Vec::new();
    let mut failure = None;
    for_each_path(a, horizon, |path| {
        let idx = path_index(a, path);
        if process.is_possible(horizon, idx) {
            let pi = process.measures.at(horizon, idx);
            values.push(next_token_prob(model, pi.as_slice())[z_query]);
        } else {
            if failure.is_none() && policy == ZeroPolicy::Strict {
                let t = (1..=horizon)
                    .find(|&t| !process.is_possible(t, path_index(a, &path[..t])))
                    .unwrap_or(horizon);
                failure = Some(Error::ImpossibleObservation { t });
            }
            values.push(0.0);
        }
    });
    match failure {
        Some(err) => Err(err),
        None => PathFunction::from_values(a, horizon, values),
    }
}

/// Representation of the conditional next-token probability of `z_query`.
pub fn represent_conditional(
    model: &HmmModel,
    z_query: usize,
    policy: ZeroPolicy,
) -> Result<PredictorRepresentation> {
    Ok(build_weights(&conditional_target(model, z_query, policy)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn binary_one_step_example() {
        // s(0) = 1, s(1) = 3
        let target = PathFunction::from_values(2, 1, vec![1.0, 3.0]).unwrap();
        let rep = build_weights(&target);
        assert_eq!(rep.constant, 2.0);
        assert_eq!(rep.weights.at(0, 0), &vec![-1.0]);
        assert_eq!(rep.evaluate(&[1]).unwrap(), 3.0);
        assert_eq!(rep.evaluate(&[0]).unwrap(), 1.0);
    }

    #[test]
    fn constant_target_has_zero_weights() {
        let target = PathFunction::from_fn(3, 3, |_| 0.25);
        let rep = build_weights(&target);
        assert_eq!(rep.constant, 0.25);
        assert!(rep
            .weights
            .nodes()
            .all(|(_, _, _, w)| w.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn zero_weights_evaluate_to_constant() {
        let rep = PredictorRepresentation {
            constant: 0.7,
            weights: AdaptedProcess::build(2, 3, |_, _| vec![0.0]),
        };
        assert_eq!(rep.evaluate(&[1, 0, 1]).unwrap(), 0.7);
    }

    #[test]
    fn evaluate_rejects_bad_paths() {
        let rep = build_weights(&PathFunction::from_fn(2, 2, |p| p[0] as f64));
        assert!(matches!(rep.evaluate(&[1]), Err(Error::Dimension { .. })));
        assert!(matches!(
            rep.evaluate(&[1, 2]),
            Err(Error::TokenOutOfRange { token: 2, .. })
        ));
    }

    #[test]
    fn incomplete_map_rejected() {
        let mut map = BTreeMap::new();
        map.insert(vec![0, 0], 1.0);
        map.insert(vec![0, 1], 1.0);
        map.insert(vec![1, 0], 1.0);
        assert!(matches!(
            PathFunction::from_map(2, 2, &map),
            Err(Error::Incomplete { .. })
        ));
        map.insert(vec![1, 1], 0.0);
        assert!(PathFunction::from_map(2, 2, &map).is_ok());
    }
}
