//! Transformer encoder with a two-class classification head.
//!
//! The architecture is the usual post-norm encoder: token plus learned
//! position embeddings, layer norm, then `num_layers` blocks of multi-head
//! self-attention and a GELU feed-forward network, each wrapped in a
//! residual connection and layer norm. The pooled representation (first
//! position or masked mean) feeds a single linear layer producing two logits.

mod archive;
mod attention;
mod model;
pub mod tensor;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use archive::{decode_archive, encode_archive, load_weights, save_weights, ArchiveError};
pub use attention::{attention_with_weights, scaled_dot_attention};
pub use model::{forward, forward_logits, loss_and_gradients, predict_proba, BatchGradients, Mode, LAYER_NORM_EPS};
pub use tensor::{Scalar, Tensor};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("token id {id} at position {position} is outside the vocabulary (size {vocab_size})")]
    TokenOutOfRange {
        id: u32,
        position: usize,
        vocab_size: usize,
    },
    #[error("every attention position is masked")]
    AllMasked,
    #[error("non-finite values in {0}")]
    NonFinite(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    ClsToken,
    MeanOverMask,
}

pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub ff_dim: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub dropout_rate: f64,
    #[serde(default)]
    pub pooling: Pooling,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
}

fn default_classes() -> usize {
    NUM_CLASSES
}

impl ModelConfig {
    /// Two layers, hidden 64, four heads, feed-forward 256.
    pub fn desk(vocab_size: usize, max_positions: usize) -> Self {
        Self {
            num_layers: 2,
            hidden_dim: 64,
            num_heads: 4,
            ff_dim: 256,
            vocab_size,
            max_positions,
            dropout_rate: 0.1,
            pooling: Pooling::ClsToken,
            num_classes: NUM_CLASSES,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: &str| Err(ModelError::Config(m.to_owned()));
        if self.num_heads == 0 || self.hidden_dim == 0 || !self.hidden_dim.is_multiple_of(self.num_heads) {
            return fail("hidden_dim must be a positive multiple of num_heads");
        }
        if self.ff_dim == 0 || self.vocab_size == 0 {
            return fail("ff_dim and vocab_size must be positive");
        }
        if self.max_positions < 2 {
            return fail("max_positions must be at least 2");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail("dropout_rate must lie in [0, 1)");
        }
        if self.num_classes != NUM_CLASSES {
            return fail("num_classes must be 2");
        }
        Ok(())
    }

    /// Every parameter tensor's name and shape, in archive order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (h, f) = (self.hidden_dim, self.ff_dim);
        let mut out = vec![
            ("embeddings.token".to_owned(), vec![self.vocab_size, h]),
            ("embeddings.position".to_owned(), vec![self.max_positions, h]),
            ("embeddings.ln.gamma".to_owned(), vec![h]),
            ("embeddings.ln.beta".to_owned(), vec![h]),
        ];
        for i in 0..self.num_layers {
            for (field, shape) in LayerParams::<f32>::field_shapes(h, f) {
                out.push((format!("layers.{i}.{field}"), shape));
            }
        }
        out.push(("classifier.weight".to_owned(), vec![h, NUM_CLASSES]));
        out.push(("classifier.bias".to_owned(), vec![NUM_CLASSES]));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub query_w: Tensor<T>,
    pub query_b: Tensor<T>,
    pub key_w: Tensor<T>,
    pub key_b: Tensor<T>,
    pub value_w: Tensor<T>,
    pub value_b: Tensor<T>,
    pub out_w: Tensor<T>,
    pub out_b: Tensor<T>,
    pub attn_ln_g: Tensor<T>,
    pub attn_ln_b: Tensor<T>,
    pub ff_in_w: Tensor<T>,
    pub ff_in_b: Tensor<T>,
    pub ff_out_w: Tensor<T>,
    pub ff_out_b: Tensor<T>,
    pub ff_ln_g: Tensor<T>,
    pub ff_ln_b: Tensor<T>,
}

const LAYER_FIELDS: [&str; 16] = [
    "attention.query.weight",
    "attention.query.bias",
    "attention.key.weight",
    "attention.key.bias",
    "attention.value.weight",
    "attention.value.bias",
    "attention.output.weight",
    "attention.output.bias",
    "attention.ln.gamma",
    "attention.ln.beta",
    "ffn.intermediate.weight",
    "ffn.intermediate.bias",
    "ffn.output.weight",
    "ffn.output.bias",
    "ffn.ln.gamma",
    "ffn.ln.beta",
];

impl<T: Scalar> LayerParams<T> {
    fn field_shapes(h: usize, f: usize) -> Vec<(&'static str, Vec<usize>)> {
        let shapes = [
            vec![h, h],
            vec![h],
            vec![h, h],
            vec![h],
            vec![h, h],
            vec![h],
            vec![h, h],
            vec![h],
            vec![h],
            vec![h],
            vec![h, f],
            vec![f],
            vec![f, h],
            vec![h],
            vec![h],
            vec![h],
        ];
        LAYER_FIELDS.into_iter().zip(shapes).collect()
    }

    fn fields(&self) -> [&Tensor<T>; 16] {
        [
            &self.query_w,
            &self.query_b,
            &self.key_w,
            &self.key_b,
            &self.value_w,
            &self.value_b,
            &self.out_w,
            &self.out_b,
            &self.attn_ln_g,
            &self.attn_ln_b,
            &self.ff_in_w,
            &self.ff_in_b,
            &self.ff_out_w,
            &self.ff_out_b,
            &self.ff_ln_g,
            &self.ff_ln_b,
        ]
    }

    fn fields_mut(&mut self) -> [&mut Tensor<T>; 16] {
        [
            &mut self.query_w,
            &mut self.query_b,
            &mut self.key_w,
            &mut self.key_b,
            &mut self.value_w,
            &mut self.value_b,
            &mut self.out_w,
            &mut self.out_b,
            &mut self.attn_ln_g,
            &mut self.attn_ln_b,
            &mut self.ff_in_w,
            &mut self.ff_in_b,
            &mut self.ff_out_w,
            &mut self.ff_out_b,
            &mut self.ff_ln_g,
            &mut self.ff_ln_b,
        ]
    }

    fn from_tensors(mut it: impl Iterator<Item = Tensor<T>>) -> Self {
        let mut next = || it.next().expect("enough layer tensors");
        Self {
            query_w: next(),
            query_b: next(),
            key_w: next(),
            key_b: next(),
            value_w: next(),
            value_b: next(),
            out_w: next(),
            out_b: next(),
            attn_ln_g: next(),
            attn_ln_b: next(),
            ff_in_w: next(),
            ff_in_b: next(),
            ff_out_w: next(),
            ff_out_b: next(),
            ff_ln_g: next(),
            ff_ln_b: next(),
        }
    }
}

/// All trainable tensors of the encoder. Gradients share this layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub token_emb: Tensor<T>,
    pub position_emb: Tensor<T>,
    pub emb_ln_g: Tensor<T>,
    pub emb_ln_b: Tensor<T>,
    pub layers: Vec<LayerParams<T>>,
    pub classifier_w: Tensor<T>,
    pub classifier_b: Tensor<T>,
}

pub type Parameters = Params<f32>;

impl<T: Scalar> Params<T> {
    /// Builds from tensors listed in [`ModelConfig::parameter_shapes`] order.
    pub fn from_ordered(config: &ModelConfig, tensors: Vec<Tensor<T>>) -> Result<Self, ModelError> {
        let shapes = config.parameter_shapes();
        if tensors.len() != shapes.len() {
            return Err(ModelError::Shape(format!(
                "expected {} tensors, got {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in shapes.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(ModelError::Shape(format!(
                    "{name}: expected {shape:?}, got {:?}",
                    t.shape()
                )));
            }
        }
        let mut it = tensors.into_iter();
        let token_emb = it.next().unwrap();
        let position_emb = it.next().unwrap();
        let emb_ln_g = it.next().unwrap();
        let emb_ln_b = it.next().unwrap();
        let layers = (0..config.num_layers)
            .map(|_| LayerParams::from_tensors(it.by_ref().take(16)))
            .collect();
        let classifier_w = it.next().unwrap();
        let classifier_b = it.next().unwrap();
        Ok(Self {
            token_emb,
            position_emb,
            emb_ln_g,
            emb_ln_b,
            layers,
            classifier_w,
            classifier_b,
        })
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        let tensors = config
            .parameter_shapes()
            .iter()
            .map(|(_, s)| Tensor::zeros(s))
            .collect();
        Self::from_ordered(config, tensors).expect("shapes come from the config")
    }

    /// Truncated normal (σ = 0.02, cut at 2σ) for matrices and embeddings,
    /// zeros for biases, ones for layer-norm gains.
    pub fn init(config: &ModelConfig, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, 0.02).expect("valid sigma");
        let tensors = config
            .parameter_shapes()
            .iter()
            .map(|(name, shape)| {
                if name.ends_with(".gamma") {
                    Tensor::filled(shape, T::one())
                } else if shape.len() == 1 {
                    Tensor::zeros(shape)
                } else {
                    let n = shape.iter().product();
                    let data = (0..n)
                        .map(|_| loop {
                            let v: f64 = normal.sample(rng);
                            if v.abs() <= 0.04 {
                                break T::from_f64(v);
                            }
                        })
                        .collect();
                    Tensor::from_vec(shape, data)
                }
            })
            .collect();
        Self::from_ordered(config, tensors).expect("shapes come from the config")
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut v = vec![&self.token_emb, &self.position_emb, &self.emb_ln_g, &self.emb_ln_b];
        for l in &self.layers {
            v.extend(l.fields());
        }
        v.push(&self.classifier_w);
        v.push(&self.classifier_b);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = vec![
            &mut self.token_emb,
            &mut self.position_emb,
            &mut self.emb_ln_g,
            &mut self.emb_ln_b,
        ];
        for l in &mut self.layers {
            v.extend(l.fields_mut());
        }
        v.push(&mut self.classifier_w);
        v.push(&mut self.classifier_b);
        v
    }

    /// Tensor names paired with tensors, in archive order.
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut names = vec![
            "embeddings.token".to_owned(),
            "embeddings.position".to_owned(),
            "embeddings.ln.gamma".to_owned(),
            "embeddings.ln.beta".to_owned(),
        ];
        for i in 0..self.layers.len() {
            names.extend(LAYER_FIELDS.iter().map(|f| format!("layers.{i}.{f}")));
        }
        names.push("classifier.weight".to_owned());
        names.push("classifier.bias".to_owned());
        names.into_iter().zip(self.tensors()).collect()
    }

    pub fn is_classifier(name: &str) -> bool {
        name.starts_with("classifier.")
    }

    pub fn check(&self, config: &ModelConfig) -> Result<(), ModelError> {
        let shapes = config.parameter_shapes();
        let tensors = self.tensors();
        if shapes.len() != tensors.len() {
            return Err(ModelError::Shape(format!(
                "config expects {} tensors, parameters hold {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in shapes.iter().zip(tensors) {
            if t.shape() != shape.as_slice() {
                return Err(ModelError::Shape(format!(
                    "{name}: config implies {shape:?}, tensor is {:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn check_finite(&self) -> Result<(), ModelError> {
        match self.named().into_iter().find(|(_, t)| !t.is_finite()) {
            Some((name, _)) => Err(ModelError::NonFinite(name)),
            None => Ok(()),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            token_emb: self.token_emb.cast(),
            position_emb: self.position_emb.cast(),
            emb_ln_g: self.emb_ln_g.cast(),
            emb_ln_b: self.emb_ln_b.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams::from_tensors(l.fields().into_iter().map(|t| t.cast())))
                .collect(),
            classifier_w: self.classifier_w.cast(),
            classifier_b: self.classifier_b.cast(),
        }
    }

    pub fn zero_all(&mut self) {
        for t in self.tensors_mut() {
            t.fill_zero();
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors().iter().map(|t| t.sum_squares()).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::desk(100, 128);
        assert!(c.validate().is_ok());
        c.num_heads = 3;
        assert!(c.validate().is_err());
        c = ModelConfig::desk(100, 1);
        assert!(c.validate().is_err());
        c = ModelConfig::desk(100, 16);
        c.dropout_rate = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn init_follows_the_recipe() {
        let cfg = ModelConfig::desk(50, 16);
        let p: Parameters = Params::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
        p.check(&cfg).unwrap();
        for (name, t) in p.named() {
            if name.ends_with("gamma") {
                assert!(t.data().iter().all(|&v| v == 1.0), "{name}");
            } else if t.shape().len() == 1 {
                assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
            } else {
                assert!(t.data().iter().all(|&v| v.abs() <= 0.04), "{name}");
                let mean_sq = t.sum_squares() / t.len() as f64;
                assert!(mean_sq > 1e-4 && mean_sq < 4e-4, "{name} {mean_sq}");
            }
        }
        assert_eq!(p.named().len(), 4 + 2 * 16 + 2);
        let total: usize = p.tensors().iter().map(|t| t.len()).sum();
        assert_eq!(total, cfg.parameter_count());
    }

    #[test]
    fn named_order_matches_config_shapes() {
        let cfg = ModelConfig::desk(10, 8);
        let p = Params::<f64>::zeros(&cfg);
        let names: Vec<String> = p.named().into_iter().map(|(n, _)| n).collect();
        let expect: Vec<String> = cfg.parameter_shapes().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, expect);
    }
}
