//! Tiny decoder-only causal transformer with an explicit backward pass.
//!
//! Pre-norm GPT layout: token + learned position embeddings, `n_layers`
//! blocks of (LayerNorm, multi-head causal attention, residual, LayerNorm,
//! GELU MLP, residual), a final LayerNorm and an untied output projection.
//!
//! All weights live in one flat buffer whose order is fixed by [`Layout`].
//! The same buffer order is used by the optimizer and the checkpoint file.

mod checkpoint;
mod forward;
mod infer;
mod kernels;

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, NumAssign};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use forward::{forward, forward_hidden, loss_and_grads, BatchGrads, Logits, TokenSeq};
pub use infer::InferenceState;

use crate::corpus::TokenId;

/// Floating-point type the model can run in.
pub trait Scalar: Float + NumAssign + Sum + Debug + Default + Send + Sync + 'static {
    fn from_f64(x: f64) -> Self;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("sequence of length {len} exceeds context length {context_len}")]
    SequenceTooLong { len: usize, context_len: usize },
    #[error("token id {id} outside vocabulary of size {vocab_size}")]
    BadToken { id: TokenId, vocab_size: usize },
    #[error("sequence {index}: inputs, targets and mask lengths differ")]
    Misaligned { index: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Single,
    Double,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub context_len: usize,
    pub vocab_size: usize,
    pub precision: Precision,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 2,
            n_heads: 4,
            d_model: 64,
            d_ff: 256,
            context_len: 160,
            vocab_size: crate::corpus::Vocab::default().size(),
            precision: Precision::Single,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fields = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("context_len", self.context_len),
            ("vocab_size", self.vocab_size),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(ModelError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Offsets of one block's tensors inside the flat buffer.
#[derive(Debug, Clone, Copy)]
pub struct BlockOffsets {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub w_qkv: usize,
    pub b_qkv: usize,
    pub w_attn_out: usize,
    pub b_attn_out: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w_fc: usize,
    pub b_fc: usize,
    pub w_proj: usize,
    pub b_proj: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Embedding,
    Matrix,
    Bias,
    NormGain,
    NormBias,
}

#[derive(Debug, Clone)]
pub struct TensorSpec {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
    pub kind: TensorKind,
}

impl TensorSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.numel()
    }
}

#[derive(Debug, Clone)]
pub struct Layout {
    pub wte: usize,
    pub wpe: usize,
    pub blocks: Vec<BlockOffsets>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub w_head: usize,
    pub b_head: usize,
    pub tensors: Vec<TensorSpec>,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (d, f, v, c) = (cfg.d_model, cfg.d_ff, cfg.vocab_size, cfg.context_len);
        let mut tensors = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>, kind: TensorKind| {
            let at = offset;
            offset += shape.iter().product::<usize>();
            tensors.push(TensorSpec {
                name,
                offset: at,
                shape,
                kind,
            });
            at
        };
        let wte = push("wte".into(), vec![v, d], TensorKind::Embedding);
        let wpe = push("wpe".into(), vec![c, d], TensorKind::Embedding);
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            blocks.push(BlockOffsets {
                ln1_g: push(format!("h{l}.ln1.g"), vec![d], TensorKind::NormGain),
                ln1_b: push(format!("h{l}.ln1.b"), vec![d], TensorKind::NormBias),
                w_qkv: push(format!("h{l}.attn.w_qkv"), vec![d, 3 * d], TensorKind::Matrix),
                b_qkv: push(format!("h{l}.attn.b_qkv"), vec![3 * d], TensorKind::Bias),
                w_attn_out: push(format!("h{l}.attn.w_out"), vec![d, d], TensorKind::Matrix),
                b_attn_out: push(format!("h{l}.attn.b_out"), vec![d], TensorKind::Bias),
                ln2_g: push(format!("h{l}.ln2.g"), vec![d], TensorKind::NormGain),
                ln2_b: push(format!("h{l}.ln2.b"), vec![d], TensorKind::NormBias),
                w_fc: push(format!("h{l}.mlp.w_fc"), vec![d, f], TensorKind::Matrix),
                b_fc: push(format!("h{l}.mlp.b_fc"), vec![f], TensorKind::Bias),
                w_proj: push(format!("h{l}.mlp.w_proj"), vec![f, d], TensorKind::Matrix),
                b_proj: push(format!("h{l}.mlp.b_proj"), vec![d], TensorKind::Bias),
            });
        }
        let lnf_g = push("lnf.g".into(), vec![d], TensorKind::NormGain);
        let lnf_b = push("lnf.b".into(), vec![d], TensorKind::NormBias);
        let w_head = push("head.w".into(), vec![d, v], TensorKind::Matrix);
        let b_head = push("head.b".into(), vec![v], TensorKind::Bias);
        Self {
            wte,
            wpe,
            blocks,
            lnf_g,
            lnf_b,
            w_head,
            b_head,
            tensors,
            total: offset,
        }
    }
}

/// All weights of the model, in one flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F: Scalar = f32> {
    pub config: ModelConfig,
    pub data: Vec<F>,
    /// Set once the supervised warmup phase has run on these weights.
    pub sft_warmed: bool,
}

const INIT_STD: f64 = 0.02;

/// Scaled-normal initialization: N(0, 0.02²) for embeddings and matrices,
/// with residual projections scaled by `1/sqrt(2 n_layers)`; zero biases and
/// unit norm gains.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams<f32>, ModelError> {
    config.validate()?;
    let layout = Layout::new(config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0f32; layout.total];
    let resid_scale = 1.0 / (2.0 * config.n_layers as f64).sqrt();
    for t in &layout.tensors {
        let slice = &mut data[t.range()];
        match t.kind {
            TensorKind::Embedding | TensorKind::Matrix => {
                let residual = t.name.ends_with("w_out") || t.name.ends_with("w_proj");
                let std = if residual { INIT_STD * resid_scale } else { INIT_STD };
                let normal = Normal::new(0.0, std).expect("positive std");
                for w in slice.iter_mut() {
                    *w = normal.sample(&mut rng) as f32;
                }
            }
            TensorKind::NormGain => slice.fill(1.0),
            TensorKind::Bias | TensorKind::NormBias => slice.fill(0.0),
        }
    }
    Ok(ModelParams {
        config: *config,
        data,
        sft_warmed: false,
    })
}

impl<F: Scalar> ModelParams<F> {
    pub fn layout(&self) -> Layout {
        Layout::new(&self.config)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<G: Scalar>(&self) -> ModelParams<G> {
        ModelParams {
            config: ModelConfig {
                precision: if std::mem::size_of::<G>() == 8 {
                    Precision::Double
                } else {
                    Precision::Single
                },
                ..self.config
            },
            data: self
                .data
                .iter()
                .map(|v| G::from_f64(v.to_f64().expect("finite")))
                .collect(),
            sft_warmed: self.sft_warmed,
        }
    }
}
