//! A small decoder-only attention stack: token embedding plus sinusoidal
//! positions, causal multi-head self-attention, optional residual /
//! layer-norm / feed-forward operations, and a softmax un-embedding.
//!
//! Sequences are `Vec<DVector<f64>>` with one `R^d` column per position.
//! Position `t` (0-based here) only ever reads positions `0..=t`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub const DEFAULT_ELL_MAX: f64 = 10_000.0;
pub const DEFAULT_LAYER_NORM_EPS: f64 = 1e-5;

fn finite(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NotFinite { what })
    }
}

fn shape(m: &DMatrix<f64>, rows: usize, cols: usize, what: &'static str) -> Result<()> {
    if m.nrows() != rows {
        return Err(Error::Dimension {
            what,
            expected: rows,
            found: m.nrows(),
        });
    }
    if m.ncols() != cols {
        return Err(Error::Dimension {
            what,
            expected: cols,
            found: m.ncols(),
        });
    }
    Ok(())
}

fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    let scale = 1.0 / libm::sqrt(cols as f64);
    DMatrix::from_fn(rows, cols, |_, _| {
        let g: f64 = StandardNormal.sample(rng);
        g * scale
    })
}

/// Token embedding `C^xfer`, one `R^d` column per token.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    values: DMatrix<f64>,
}

impl EmbeddingMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        finite(&values, "embedding matrix")?;
        Ok(EmbeddingMatrix { values })
    }

    /// Seeded Gaussian entries scaled by `1/sqrt(d)`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, d: usize, alphabet: usize) -> Self {
        let mut values = gaussian_matrix(rng, d, alphabet);
        values *= libm::sqrt(alphabet as f64) / libm::sqrt(d as f64);
        EmbeddingMatrix { values }
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn d(&self) -> usize {
        self.values.nrows()
    }

    pub fn alphabet(&self) -> usize {
        self.values.ncols()
    }
}

/// Sinusoidal positions for `t = 1..=T`: row `2i-1` (1-based) is
/// `sin(ell_max^{-2i/d} t)` and row `2i` the matching cosine.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalEncoding {
    pub values: DMatrix<f64>,
    pub ell_max: f64,
}

pub fn positional_encoding(d: usize, horizon: usize, ell_max: f64) -> Result<PositionalEncoding> {
    if d == 0 || !d.is_multiple_of(2) {
        return Err(Error::Config(alloc::format!(
            "sinusoidal positional encoding needs an even embedding dimension, got {d}"
        )));
    }
    if !(ell_max.is_finite() && ell_max > 0.0) {
        return Err(Error::Config("ell_max must be positive".into()));
    }
    let mut values = DMatrix::zeros(d, horizon);
    for i in 1..=d / 2 {
        let rate = libm::pow(ell_max, -2.0 * i as f64 / d as f64);
        for t in 1..=horizon {
            let angle = rate * t as f64;
            values[(2 * i - 2, t - 1)] = libm::sin(angle);
            values[(2 * i - 1, t - 1)] = libm::cos(angle);
        }
    }
    Ok(PositionalEncoding { values, ell_max })
}

/// `sigma_t = C^xfer(:, z_t) + W_p(:, t)`.
pub fn embed_sequence(emb: &EmbeddingMatrix, pe: &PositionalEncoding, z: &[usize]) -> Result<Vec<DVector<f64>>> {
    if pe.values.nrows() != emb.d() {
        return Err(Error::Dimension {
            what: "positional encoding rows",
            expected: emb.d(),
            found: pe.values.nrows(),
        });
    }
    if z.len() > pe.values.ncols() {
        return Err(Error::Dimension {
            what: "positional encoding length",
            expected: z.len(),
            found: pe.values.ncols(),
        });
    }
    z.iter()
        .enumerate()
        .map(|(t, &zt)| {
            if zt >= emb.alphabet() {
                return Err(Error::TokenOutOfRange {
                    token: zt,
                    m: emb.alphabet() - 1,
                });
            }
            Ok(emb.values.column(zt) + pe.values.column(t))
        })
        .collect()
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| libm::exp(l - max)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// One attention head.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHead {
    pub w_q: DMatrix<f64>,
    pub w_k: DMatrix<f64>,
    pub w_v: DMatrix<f64>,
}

impl AttentionHead {
    pub fn random<R: Rng + ?Sized>(rng: &mut R, d: usize, d_head: usize) -> Self {
        AttentionHead {
            w_q: gaussian_matrix(rng, d_head, d),
            w_k: gaussian_matrix(rng, d_head, d),
            w_v: gaussian_matrix(rng, d_head, d),
        }
    }

    pub fn d_k(&self) -> usize {
        self.w_q.nrows()
    }

    pub fn d_v(&self) -> usize {
        self.w_v.nrows()
    }
}

/// `alpha(s; t) = softmax_s(q_t^T k_s / sqrt(d_K))` for `s = 1..=t`, where
/// `t = sigmas.len()` and `sigmas` is the causal prefix.
pub fn attention_weights(head: &AttentionHead, sigmas: &[DVector<f64>]) -> Vec<f64> {
    let query = &head.w_q * sigmas.last().expect("non-empty prefix");
    let scale = libm::sqrt(head.d_k() as f64);
    let logits: Vec<f64> = sigmas
        .iter()
        .map(|s| query.dot(&(&head.w_k * s)) / scale)
        .collect();
    softmax(&logits)
}

/// `o_t = W_V sum_s alpha(s; t) sigma_s`.
pub fn head_output(head: &AttentionHead, sigmas: &[DVector<f64>]) -> DVector<f64> {
    let alpha = attention_weights(head, sigmas);
    let mut mixed = DVector::zeros(sigmas[0].len());
    for (a, s) in alpha.iter().zip(sigmas) {
        mixed += s * *a;
    }
    &head.w_v * mixed
}

/// Layer normalization with gain and offset. The standard deviation is the
/// population one; `eps` is added to the variance.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: DVector<f64>,
    pub offset: DVector<f64>,
    pub eps: f64,
}

impl LayerNorm {
    pub fn identity(d: usize) -> Self {
        LayerNorm {
            gain: DVector::from_element(d, 1.0),
            offset: DVector::zeros(d),
            eps: DEFAULT_LAYER_NORM_EPS,
        }
    }

    /// `(x - mean) / sqrt(var + eps)`, before gain and offset.
    pub fn normalize(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = x.len() as f64;
        let mean = x.sum() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let denom = libm::sqrt(var + self.eps);
        x.map(|v| (v - mean) / denom)
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.normalize(x).component_mul(&self.gain) + &self.offset
    }
}

/// Nonlinearity of the feed-forward block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Gelu,
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Gelu => 0.5 * v * (1.0 + libm::erf(v / core::f64::consts::SQRT_2)),
            Activation::Relu => v.max(0.0),
            Activation::Tanh => libm::tanh(v),
        }
    }
}

/// `W_2 act(W_1 x + b_1) + b_2`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
    pub activation: Activation,
}

impl FeedForward {
    /// Hidden width `4d`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, d: usize, activation: Activation) -> Self {
        FeedForward {
            w1: gaussian_matrix(rng, 4 * d, d),
            b1: DVector::zeros(4 * d),
            w2: gaussian_matrix(rng, d, 4 * d),
            b2: DVector::zeros(d),
            activation,
        }
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let hidden = (&self.w1 * x + &self.b1).map(|v| self.activation.apply(v));
        &self.w2 * hidden + &self.b2
    }
}

/// Which operations follow the attention map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MiscOps {
    pub residual: bool,
    pub layer_norm: bool,
    pub feed_forward: bool,
}

impl MiscOps {
    pub const NONE: MiscOps = MiscOps {
        residual: false,
        layer_norm: false,
        feed_forward: false,
    };
    pub const ALL: MiscOps = MiscOps {
        residual: true,
        layer_norm: true,
        feed_forward: true,
    };

    pub fn any(self) -> bool {
        self.residual || self.layer_norm || self.feed_forward
    }
}

/// One attention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub heads: Vec<AttentionHead>,
    pub w_o: DMatrix<f64>,
    pub norm1: LayerNorm,
    pub norm2: LayerNorm,
    pub ffn: FeedForward,
    pub misc: MiscOps,
}

impl Layer {
    /// Seeded Gaussian parameters scaled by `1/sqrt(fan_in)`; norms start as
    /// the identity affine map.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, d: usize, n_head: usize, misc: MiscOps) -> Result<Self> {
        if n_head == 0 || d == 0 || !d.is_multiple_of(n_head) {
            return Err(Error::Config(alloc::format!(
                "head count {n_head} must divide embedding dimension {d}"
            )));
        }
        let d_head = d / n_head;
        let heads = (0..n_head).map(|_| AttentionHead::random(rng, d, d_head)).collect();
        let w_o = gaussian_matrix(rng, d, d);
        let ffn = FeedForward::random(rng, d, Activation::default());
        Ok(Layer {
            heads,
            w_o,
            norm1: LayerNorm::identity(d),
            norm2: LayerNorm::identity(d),
            ffn,
            misc,
        })
    }

    pub fn d(&self) -> usize {
        self.w_o.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d();
        let n_head = self.heads.len();
        if n_head == 0 || !d.is_multiple_of(n_head) {
            return Err(Error::Config(alloc::format!(
                "head count {n_head} must divide embedding dimension {d}"
            )));
        }
        let d_v = d / n_head;
        shape(&self.w_o, d, d, "output projection")?;
        for h in &self.heads {
            shape(&h.w_v, d_v, d, "value projection")?;
            shape(&h.w_k, h.d_k(), d, "key projection")?;
            shape(&h.w_q, h.w_q.nrows(), d, "query projection")?;
            finite(&h.w_q, "query projection")?;
            finite(&h.w_k, "key projection")?;
            finite(&h.w_v, "value projection")?;
        }
        finite(&self.w_o, "output projection")
    }

    /// `W_O concat(o_t^1, ..., o_t^H)` for the prefix `sigmas`.
    pub fn attend(&self, sigmas: &[DVector<f64>]) -> DVector<f64> {
        let d_v = self.d() / self.heads.len();
        let mut concat = DVector::zeros(self.d());
        for (h, head) in self.heads.iter().enumerate() {
            concat.rows_mut(h * d_v, d_v).copy_from(&head_output(head, sigmas));
        }
        &self.w_o * concat
    }

    fn position(&self, sigmas: &[DVector<f64>]) -> DVector<f64> {
        let mut out = self.attend(sigmas);
        if self.misc.residual {
            out += sigmas.last().expect("non-empty prefix");
        }
        if self.misc.layer_norm {
            out = self.norm1.apply(&out);
        }
        if self.misc.feed_forward {
            let ffn = self.ffn.apply(&out);
            out = if self.misc.residual { out + ffn } else { ffn };
        }
        if self.misc.layer_norm {
            out = self.norm2.apply(&out);
        }
        out
    }
}

/// Applies the layer at every position, each reading only its prefix.
pub fn layer_forward(layer: &Layer, sigmas: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    layer.validate()?;
    for s in sigmas {
        if s.len() != layer.d() {
            return Err(Error::Dimension {
                what: "layer input",
                expected: layer.d(),
                found: s.len(),
            });
        }
    }
    Ok((1..=sigmas.len()).map(|t| layer.position(&sigmas[..t])).collect())
}

/// `L^h = W_O[:, block h] W_V^h`.
pub fn head_maps(layer: &Layer) -> Vec<DMatrix<f64>> {
    let d_v = layer.d() / layer.heads.len();
    layer
        .heads
        .iter()
        .enumerate()
        .map(|(h, head)| layer.w_o.columns(h * d_v, d_v) * &head.w_v)
        .collect()
}

/// `sum_s sigma_s^T y_s` with `y_s = sum_h alpha(s; t, h) (L^h)^T f`, the
/// attention output at position `t` (1-based) tested against `f`.
pub fn simplified_form(layer: &Layer, sigmas: &[DVector<f64>], t: usize, f: &DVector<f64>) -> Result<f64> {
    if layer.misc.any() {
        return Err(Error::Config(
            "the simplified form describes the attention map alone; disable misc ops".into(),
        ));
    }
    layer.validate()?;
    if t == 0 || t > sigmas.len() {
        return Err(Error::Dimension {
            what: "attention position",
            expected: sigmas.len(),
            found: t,
        });
    }
    let prefix = &sigmas[..t];
    let maps = head_maps(layer);
    let pulled: Vec<DVector<f64>> = maps.iter().map(|l| l.transpose() * f).collect();
    let weights: Vec<Vec<f64>> = layer.heads.iter().map(|h| attention_weights(h, prefix)).collect();
    let mut total = 0.0;
    for (s, sigma) in prefix.iter().enumerate() {
        let mut y = DVector::zeros(layer.d());
        for (h, pulled_f) in pulled.iter().enumerate() {
            y += pulled_f * weights[h][s];
        }
        total += sigma.dot(&y);
    }
    Ok(total)
}

/// `p(z) = softmax_z(sigma^T C^xfer(:, z))`.
pub fn unembed(emb: &EmbeddingMatrix, sigma: &DVector<f64>) -> Vec<f64> {
    let logits: Vec<f64> = (0..emb.alphabet()).map(|z| emb.values.column(z).dot(sigma)).collect();
    softmax(&logits)
}

/// Outputs of repeating one layer `L` times on a prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct StackOutput {
    /// `sigmas[l][t]` after `l` layers, `l = 0..=L`.
    pub sigmas: Vec<Vec<DVector<f64>>>,
    /// `predictions[l][t][z]`.
    pub predictions: Vec<Vec<Vec<f64>>>,
    /// `KL(p^(L) || p^(l))` averaged over positions, per `l`.
    pub kl_bar: Vec<f64>,
}

/// Embeds the prompt and applies `layer` `num_layers` times, un-embedding
/// after every application.
pub fn run_stack(
    emb: &EmbeddingMatrix,
    pe: &PositionalEncoding,
    layer: &Layer,
    z: &[usize],
    num_layers: usize,
) -> Result<StackOutput> {
    let mut sigmas = vec![embed_sequence(emb, pe, z)?];
    for l in 0..num_layers {
        let next = layer_forward(layer, &sigmas[l])?;
        sigmas.push(next);
    }
    let predictions: Vec<Vec<Vec<f64>>> = sigmas
        .iter()
        .map(|level| level.iter().map(|s| unembed(emb, s)).collect())
        .collect();
    let last = predictions.last().expect("embedding level");
    let kl_bar = predictions
        .iter()
        .map(|p| crate::fixed_point::kl_divergence_bar(last, p))
        .collect::<Result<Vec<f64>>>()?;
    Ok(StackOutput {
        sigmas,
        predictions,
        kl_bar,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn positional_values() {
        let pe = positional_encoding(2, 3, DEFAULT_ELL_MAX).unwrap();
        assert!((pe.values[(0, 0)] - 9.999999983333334e-5).abs() < 1e-18);
        assert!((pe.values[(1, 0)] - (1.0 - 5e-9)).abs() < 1e-15);
        assert!(positional_encoding(3, 3, DEFAULT_ELL_MAX).is_err());
        let big = positional_encoding(16, 40, DEFAULT_ELL_MAX).unwrap();
        assert!(big.values.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn zero_query_gives_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut head = AttentionHead::random(&mut rng, 4, 2);
        head.w_q.fill(0.0);
        let sigmas: Vec<_> = (0..5).map(|_| gaussian_matrix(&mut rng, 4, 1).column(0).into_owned()).collect();
        let w = attention_weights(&head, &sigmas);
        assert!(w.iter().all(|v| (v - 0.2).abs() < 1e-15));
        assert_eq!(attention_weights(&head, &sigmas[..1]), vec![1.0]);
    }

    #[test]
    fn saturated_softmax() {
        let w = softmax(&[0.0, 50.0, 0.0]);
        assert!((w[1] - 1.0).abs() < 1e-20);
    }

    #[test]
    fn running_mean_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut layer = Layer::random(&mut rng, 4, 1, MiscOps::NONE).unwrap();
        layer.w_o = DMatrix::identity(4, 4);
        layer.heads[0].w_v = DMatrix::identity(4, 4);
        layer.heads[0].w_q.fill(0.0);
        let sigmas: Vec<_> = (0..4).map(|i| DVector::from_element(4, i as f64)).collect();
        let out = layer_forward(&layer, &sigmas).unwrap();
        for (t, o) in out.iter().enumerate() {
            let mean = (0..=t).map(|i| i as f64).sum::<f64>() / (t + 1) as f64;
            assert!(o.iter().all(|v| (v - mean).abs() < 1e-15));
        }
    }

    #[test]
    fn unembed_zero_and_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let emb = EmbeddingMatrix::random(&mut rng, 4, 3);
        let p = unembed(&emb, &DVector::zeros(4));
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        let shifted = softmax(&[1.0, 2.0, 3.0]);
        let base = softmax(&[11.0, 12.0, 13.0]);
        for (a, b) in shifted.iter().zip(&base) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn head_count_must_divide() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(Layer::random(&mut rng, 6, 4, MiscOps::NONE).is_err());
    }
}
