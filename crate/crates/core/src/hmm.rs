//! Finite spaces, the hidden Markov model `HMM(mu, A, C)` and the derived
//! per-state quantities used by the dual control system.
//!
//! States are 0-indexed here (`0..d`). Tokens keep their natural labels
//! `0..=m`; token `0` is a real symbol whose embedding is `-(e(1)+...+e(m))`.
//!
//! Emission convention: `C(x, z) = P(Z_{t+1} = z | X_t = x)`, i.e. the token
//! observed at time `t+1` is emitted by the state at time `t`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Row sums of `mu`, `A` and `C` must be within this of one.
pub const STOCHASTIC_TOLERANCE: f64 = 1e-9;

/// Default tolerance for [`ProbabilityVector::new`].
pub const PROBABILITY_TOLERANCE: f64 = 1e-12;

/// Sizes of the state space, the observation alphabet and the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Spaces {
    /// `|S|`
    pub d: usize,
    /// `|O| = m + 1`
    pub m: usize,
    /// `T`
    pub horizon: usize,
}

impl Spaces {
    pub fn new(d: usize, m: usize, horizon: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("state space must have d >= 1".into()));
        }
        if m == 0 {
            return Err(Error::Config("observation space must have m >= 1".into()));
        }
        if horizon == 0 {
            return Err(Error::Config("horizon must have T >= 1".into()));
        }
        Ok(Spaces { d, m, horizon })
    }

    /// Number of tokens, `m + 1`.
    pub fn alphabet(&self) -> usize {
        self.m + 1
    }
}

/// A probability vector over a finite set.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    /// Validates with [`PROBABILITY_TOLERANCE`] and renormalizes exactly.
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(entries, PROBABILITY_TOLERANCE)
    }

    /// Entries in `[-tol, 0)` are clamped to zero; anything more negative,
    /// or a sum further than `tol` from one, is rejected.
    pub fn with_tolerance(mut entries: Vec<f64>, tol: f64) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Dimension {
                what: "probability vector",
                expected: 1,
                found: 0,
            });
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotFinite {
                what: "probability vector",
            });
        }
        for (i, v) in entries.iter_mut().enumerate() {
            if *v < -tol {
                return Err(Error::NotStochastic {
                    what: "probability vector",
                    row: 0,
                    reason: format!("entry {i} is negative ({v})"),
                });
            }
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let sum: f64 = entries.iter().sum();
        if (sum - 1.0).abs() > tol {
            return Err(Error::NotStochastic {
                what: "probability vector",
                row: 0,
                reason: format!("entries sum to {sum}"),
            });
        }
        entries.iter_mut().for_each(|v| *v /= sum);
        Ok(ProbabilityVector(entries))
    }

    pub fn uniform(n: usize) -> Self {
        ProbabilityVector(vec![1.0 / n as f64; n])
    }

    pub fn point_mass(n: usize, at: usize) -> Self {
        let mut v = vec![0.0; n];
        v[at] = 1.0;
        ProbabilityVector(v)
    }

    /// Clips negative entries to zero and renormalizes. A vector with no
    /// positive mass maps to the uniform measure.
    pub fn project(entries: &[f64]) -> Self {
        let clipped: Vec<f64> = entries
            .iter()
            .map(|&v| if v.is_finite() && v > 0.0 { v } else { 0.0 })
            .collect();
        let sum: f64 = clipped.iter().sum();
        if sum > 0.0 {
            ProbabilityVector(clipped.into_iter().map(|v| v / sum).collect())
        } else {
            Self::uniform(entries.len())
        }
    }

    /// Normalizes a nonnegative vector with positive mass.
    pub(crate) fn normalized(mut entries: Vec<f64>) -> Self {
        let sum: f64 = entries.iter().sum();
        debug_assert!(sum > 0.0);
        entries.iter_mut().for_each(|v| *v /= sum);
        ProbabilityVector(entries)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// `nu(f) = sum_x nu(x) f(x)`.
    pub fn expect(&self, f: &[f64]) -> f64 {
        crate::linalg::dot(&self.0, f)
    }
}

impl core::ops::Index<usize> for ProbabilityVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// A signed measure on `S`: any finite vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedMeasure(Vec<f64>);

impl SignedMeasure {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotFinite {
                what: "signed measure",
            });
        }
        Ok(SignedMeasure(entries))
    }

    pub fn zeros(n: usize) -> Self {
        SignedMeasure(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// `sigma(f) = sigma^T f`.
    pub fn apply(&self, f: &[f64]) -> f64 {
        crate::linalg::dot(&self.0, f)
    }
}

impl From<ProbabilityVector> for SignedMeasure {
    fn from(p: ProbabilityVector) -> Self {
        SignedMeasure(p.0)
    }
}

/// A token string `z_1..z_T` with every token in `0..=m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationPath(Vec<usize>);

impl ObservationPath {
    pub fn new(m: usize, tokens: Vec<usize>) -> Result<Self> {
        if let Some(&z) = tokens.iter().find(|&&z| z > m) {
            return Err(Error::TokenOutOfRange { token: z, m });
        }
        Ok(ObservationPath(tokens))
    }

    /// Also checks the length against the model horizon.
    pub fn for_model(model: &HmmModel, tokens: Vec<usize>) -> Result<Self> {
        if tokens.len() != model.horizon() {
            return Err(Error::Dimension {
                what: "observation path",
                expected: model.horizon(),
                found: tokens.len(),
            });
        }
        Self::new(model.m(), tokens)
    }

    pub fn tokens(&self) -> &[usize] {
        &self.0
    }
}

impl core::ops::Deref for ObservationPath {
    type Target = [usize];
    fn deref(&self) -> &[usize] {
        &self.0
    }
}

/// Embedding `e: O -> R^m`: canonical basis vectors for `1..=m`, and
/// `e(0) = -(e(1) + ... + e(m))`.
pub fn embed_token(m: usize, z: usize) -> Result<Vec<f64>> {
    if z > m {
        return Err(Error::TokenOutOfRange { token: z, m });
    }
    Ok(if z == 0 {
        vec![-1.0; m]
    } else {
        let mut v = vec![0.0; m];
        v[z - 1] = 1.0;
        v
    })
}

/// `w^T e(z)` without materializing `e(z)`. `z` must be in `0..=w.len()`.
pub fn embed_dot(w: &[f64], z: usize) -> f64 {
    if z == 0 {
        -w.iter().sum::<f64>()
    } else {
        w[z - 1]
    }
}

/// The unique split `s(z) = mean + tilde^T e(z)` of a function on `O`.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub mean: f64,
    pub tilde: Vec<f64>,
}

impl Decomposition {
    pub fn reconstruct(&self, z: usize) -> f64 {
        self.mean + embed_dot(&self.tilde, z)
    }
}

/// Splits `s`, given as the vector `(s(0), s(1), ..., s(m))`, into its mean
/// over `O` and the deviations of tokens `1..=m` from it.
pub fn decompose(s: &[f64]) -> Decomposition {
    debug_assert!(s.len() >= 2, "need at least two tokens");
    let mean = s.iter().sum::<f64>() / s.len() as f64;
    let tilde = s[1..].iter().map(|v| v - mean).collect();
    Decomposition { mean, tilde }
}

/// `HMM(mu, A, C)` on `S = {0..d}`, `O = {0..=m}` with horizon `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmModel {
    spaces: Spaces,
    mu: ProbabilityVector,
    /// `d x d`, row-major.
    transition: Vec<f64>,
    /// `d x (m+1)`, row-major.
    emission: Vec<f64>,
}

fn stochastic_rows(what: &'static str, rows: &[Vec<f64>], width: usize) -> Result<Vec<f64>> {
    let mut flat = Vec::with_capacity(rows.len() * width);
    for (r, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(Error::Dimension {
                what,
                expected: width,
                found: row.len(),
            });
        }
        if let Some((c, v)) = row.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(Error::NotStochastic {
                what,
                row: r,
                reason: format!("entry {c} is {v}"),
            });
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOLERANCE {
            return Err(Error::NotStochastic {
                what,
                row: r,
                reason: format!("row sums to {sum}"),
            });
        }
        flat.extend(row.iter().map(|v| v / sum));
    }
    Ok(flat)
}

impl HmmModel {
    /// Builds and validates a model. `transition` is `d x d`, `emission` is
    /// `d x (m+1)`; both must be row-stochastic within
    /// [`STOCHASTIC_TOLERANCE`] and are renormalized exactly.
    pub fn new(
        mu: Vec<f64>,
        transition: Vec<Vec<f64>>,
        emission: Vec<Vec<f64>>,
        horizon: usize,
    ) -> Result<Self> {
        let d = mu.len();
        if transition.len() != d {
            return Err(Error::Dimension {
                what: "transition matrix rows",
                expected: d,
                found: transition.len(),
            });
        }
        if emission.len() != d {
            return Err(Error::Dimension {
                what: "emission matrix rows",
                expected: d,
                found: emission.len(),
            });
        }
        let alphabet = emission.first().map_or(0, Vec::len);
        if alphabet < 2 {
            return Err(Error::Config(
                "emission matrix needs at least two columns (m >= 1)".into(),
            ));
        }
        let spaces = Spaces::new(d, alphabet - 1, horizon)?;
        let mu = stochastic_rows("initial distribution", core::slice::from_ref(&mu), d)?;
        let transition = stochastic_rows("transition matrix", &transition, d)?;
        let emission = stochastic_rows("emission matrix", &emission, alphabet)?;
        Ok(HmmModel {
            spaces,
            mu: ProbabilityVector(mu),
            transition,
            emission,
        })
    }

    pub fn spaces(&self) -> Spaces {
        self.spaces
    }

    pub fn d(&self) -> usize {
        self.spaces.d
    }

    pub fn m(&self) -> usize {
        self.spaces.m
    }

    pub fn alphabet(&self) -> usize {
        self.spaces.alphabet()
    }

    pub fn horizon(&self) -> usize {
        self.spaces.horizon
    }

    /// Same model with a different horizon.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        let spaces = Spaces::new(self.d(), self.m(), horizon)?;
        Ok(HmmModel {
            spaces,
            ..self.clone()
        })
    }

    pub fn mu(&self) -> &ProbabilityVector {
        &self.mu
    }

    pub fn transition(&self, x: usize, y: usize) -> f64 {
        self.transition[x * self.d() + y]
    }

    pub fn transition_row(&self, x: usize) -> &[f64] {
        let d = self.d();
        &self.transition[x * d..(x + 1) * d]
    }

    pub fn emission(&self, x: usize, z: usize) -> f64 {
        self.emission[x * self.alphabet() + z]
    }

    pub fn emission_row(&self, x: usize) -> &[f64] {
        let a = self.alphabet();
        &self.emission[x * a..(x + 1) * a]
    }

    /// `x -> C(x, z)`.
    pub fn emission_column(&self, z: usize) -> Vec<f64> {
        (0..self.d()).map(|x| self.emission(x, z)).collect()
    }

    pub fn transition_rows(&self) -> Vec<Vec<f64>> {
        (0..self.d()).map(|x| self.transition_row(x).to_vec()).collect()
    }

    pub fn emission_rows(&self) -> Vec<Vec<f64>> {
        (0..self.d()).map(|x| self.emission_row(x).to_vec()).collect()
    }

    pub fn check_state(&self, x: usize) -> Result<()> {
        if x >= self.d() {
            return Err(Error::StateOutOfRange {
                state: x,
                d: self.d(),
            });
        }
        Ok(())
    }

    pub fn check_token(&self, z: usize) -> Result<()> {
        if z > self.m() {
            return Err(Error::TokenOutOfRange {
                token: z,
                m: self.m(),
            });
        }
        Ok(())
    }

    /// `(Af)(x) = sum_y A(x, y) f(y)`.
    pub fn apply_transition(&self, f: &[f64]) -> Vec<f64> {
        (0..self.d())
            .map(|x| crate::linalg::dot(self.transition_row(x), f))
            .collect()
    }

    /// `(pA)(y) = sum_x p(x) A(x, y)`.
    pub fn propagate(&self, p: &[f64]) -> Vec<f64> {
        let d = self.d();
        let mut out = vec![0.0; d];
        for (x, &px) in p.iter().enumerate() {
            if px == 0.0 {
                continue;
            }
            for (y, o) in out.iter_mut().enumerate() {
                *o += px * self.transition[x * d + y];
            }
        }
        out
    }

    /// `c(x) = (C(x,1) - C(x,0), ..., C(x,m) - C(x,0))`.
    pub fn obs_vector(&self, x: usize) -> Result<Vec<f64>> {
        self.check_state(x)?;
        let row = self.emission_row(x);
        Ok(row[1..].iter().map(|v| v - row[0]).collect())
    }

    /// `x -> 2 C(x, z) - 1`, the scalar observation function used by the
    /// per-path backward difference equation.
    pub fn scalar_obs(&self, z: usize) -> Result<Vec<f64>> {
        self.check_token(z)?;
        Ok((0..self.d()).map(|x| 2.0 * self.emission(x, z) - 1.0).collect())
    }

    /// `(Gamma f)(x) = sum_y A(x,y) f(y)^2 - (Af)(x)^2`, the one-step
    /// conditional variance of `f`.
    pub fn gamma(&self, f: &[f64]) -> Vec<f64> {
        (0..self.d())
            .map(|x| {
                let row = self.transition_row(x);
                let mean = crate::linalg::dot(row, f);
                row.iter()
                    .zip(f)
                    .map(|(a, v)| a * (v - mean) * (v - mean))
                    .sum()
            })
            .collect()
    }

    /// `R(x) = diag(c(x)) + C(x,0)(I + 11^T) - c(x)c(x)^T`, the covariance of
    /// `e(Z_{t+1})` given `X_t = x`.
    pub fn risk_matrix(&self, x: usize) -> Result<DMatrix<f64>> {
        let c = self.obs_vector(x)?;
        let c0 = self.emission(x, 0);
        let m = self.m();
        Ok(DMatrix::from_fn(m, m, |i, j| {
            let diag = if i == j { c[i] + c0 } else { 0.0 };
            diag + c0 - c[i] * c[j]
        }))
    }
}
