//! Desk-scale decoder-only multimodal transformer: frozen base weights,
//! low-rank adapters, a linear patch tokenizer for toy images, KV-cached
//! incremental decoding, and greedy answer generation.

pub mod cache;
pub mod core;

use crate::error::{Error, Result};
use crate::image::ToyImage;
use crate::numerics::graph::VarId;
use crate::numerics::store::{Fwd, ParamStore, NS_ADAPTER, NS_BACKBONE};
use crate::scalar::Real;
use crate::tensor::Tensor;
use crate::util;
pub use cache::KvCache;
pub use core::{AdapterConfig, CoreDims, TransformerCore};
use rand_chacha::ChaCha8Rng;
use std::cell::RefCell;

pub const EMBED_NAME: &str = "backbone.embed";
pub const PATCH_EMBED_NAME: &str = "backbone.patch.w";

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BackboneConfig {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub vocab: usize,
    pub max_positions: usize,
    /// Image side in pixels; must be divisible by `grid`.
    pub image_size: usize,
    /// Patch grid side; the image becomes `grid^2` visual tokens.
    pub grid: usize,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub lora_dropout: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            layers: 2,
            heads: 4,
            ffn: 256,
            vocab: 160,
            max_positions: 128,
            image_size: 32,
            grid: 8,
            lora_rank: 8,
            lora_alpha: 16.0,
            lora_dropout: 0.05,
        }
    }
}

impl BackboneConfig {
    pub fn dims(&self) -> CoreDims {
        CoreDims {
            hidden: self.hidden,
            layers: self.layers,
            heads: self.heads,
            ffn: self.ffn,
            max_positions: self.max_positions,
        }
    }

    pub fn adapter(&self) -> AdapterConfig {
        AdapterConfig {
            rank: self.lora_rank,
            alpha: self.lora_alpha,
            dropout: self.lora_dropout,
        }
    }

    pub fn patch_side(&self) -> usize {
        self.image_size / self.grid
    }

    pub fn visual_tokens(&self) -> usize {
        self.grid * self.grid
    }

    pub fn validate(&self) -> Result<()> {
        self.dims().validate()?;
        if self.lora_rank == 0 {
            return Err(Error::Argument("lora rank must be >= 1".into()));
        }
        if self.image_size % self.grid != 0 {
            return Err(Error::Argument(format!(
                "image size {} not divisible by grid {}",
                self.image_size, self.grid
            )));
        }
        if self.vocab == 0 || self.vocab > 256 {
            return Err(Error::Argument(format!(
                "vocab {} outside the synthetic range 1..=256",
                self.vocab
            )));
        }
        Ok(())
    }
}

/// Hidden states of the encoded prefix plus its populated cache. `z0` is
/// the final position's top-layer hidden state.
pub struct PrefixEncoding {
    pub hidden: VarId,
    pub cache: KvCache,
    pub z0: VarId,
    pub len: usize,
}

#[derive(Debug, Clone)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub core: TransformerCore,
}

impl Backbone {
    pub fn new(config: BackboneConfig) -> Result<Self> {
        config.validate()?;
        let core = TransformerCore::new(
            config.dims(),
            NS_BACKBONE.trim_end_matches('.'),
            Some((NS_ADAPTER.trim_end_matches('.'), config.adapter())),
        )?;
        Ok(Self { config, core })
    }

    /// Initializes the frozen base plus trainable zero-delta adapters.
    /// Token embeddings double as the LM head (weight-tied) and are scaled
    /// so token rows live at the same norm as layer-normalized hiddens.
    pub fn init_params<F: Real>(&self, store: &mut ParamStore<F>, seed: u64) {
        let mut rng = util::rng_from(seed, "backbone-init");
        store.insert(
            EMBED_NAME,
            Tensor::randn(vec![self.config.vocab, self.config.hidden], 1.0, &mut rng),
            false,
        );
        let px = self.config.patch_side() * self.config.patch_side();
        // E[patch pixel^2] ~ 1/3 for intensities in [0,1]; scale rows so
        // visual tokens come out near unit per-dim variance.
        let patch_std = (3.0 / px as f64).sqrt();
        store.insert(
            PATCH_EMBED_NAME,
            Tensor::randn(vec![self.config.hidden, px], patch_std, &mut rng),
            false,
        );
        self.core.init_params(store, &mut rng, false);
    }

    pub fn new_cache(&self) -> KvCache {
        self.core.new_cache()
    }

    /// Flattens the image into `grid^2` patch vectors (row-major patches,
    /// row-major pixels within a patch).
    pub fn patch_matrix<F: Real>(&self, image: &ToyImage) -> Result<Tensor<F>> {
        if image.size() != self.config.image_size {
            return Err(Error::Shape(format!(
                "image size {} != configured {}",
                image.size(),
                self.config.image_size
            )));
        }
        let g = self.config.grid;
        let s = self.config.patch_side();
        let mut data = Vec::with_capacity(g * g * s * s);
        for pr in 0..g {
            for pc in 0..g {
                for r in 0..s {
                    for c in 0..s {
                        data.push(F::from_f64(image.at(pr * s + r, pc * s + c)));
                    }
                }
            }
        }
        Ok(Tensor::matrix(g * g, s * s, data))
    }

    /// Encodes (image, question) with a full causal forward pass, returning
    /// hidden states, the populated prefix cache, and `z0`.
    pub fn encode_prefix<F: Real>(
        &self,
        fwd: &Fwd<F>,
        image: &ToyImage,
        question: &[usize],
    ) -> Result<PrefixEncoding> {
        let g = fwd.graph();
        let patches = g.constant(self.patch_matrix::<F>(image)?);
        let visual = g.matmul_nt(patches, fwd.var(PATCH_EMBED_NAME));
        let x = if question.is_empty() {
            visual
        } else {
            let q = g.embed_rows(fwd.var(EMBED_NAME), question);
            g.concat_rows(&[visual, q])
        };
        let len = self.config.visual_tokens() + question.len();
        let mut cache = self.new_cache();
        let hidden = self.core.block_forward(fwd, &mut cache, x)?;
        let z0 = g.row(hidden, len - 1);
        Ok(PrefixEncoding {
            hidden,
            cache,
            z0,
            len,
        })
    }

    /// One transformer step: attends to the cache plus itself, appends its
    /// K/V rows, returns the top hidden state.
    pub fn forward_step<F: Real>(
        &self,
        fwd: &Fwd<F>,
        cache: &mut KvCache,
        z: VarId,
    ) -> Result<VarId> {
        self.core.forward_step(fwd, cache, z)
    }

    /// LM head: logits over the vocab via the tied embedding matrix.
    /// Scaled by 1/sqrt(d) so unit-variance hiddens against unit-variance
    /// embedding rows give O(1) logits at init.
    pub fn lm_logits<F: Real>(&self, fwd: &Fwd<F>, hidden_rows: VarId) -> VarId {
        let g = fwd.graph();
        let scale = F::from_f64(1.0 / (self.config.hidden as f64).sqrt());
        g.scale(g.matmul_nt(hidden_rows, fwd.var(EMBED_NAME)), scale)
    }

    /// Greedy answer decoding. The first token's logits come straight from
    /// the LM head applied to `z_latest` (no extra forward); afterwards each
    /// accepted token is embedded and stepped through the cache until the
    /// end token or `max_len`.
    pub fn decode_answer<F: Real>(
        &self,
        fwd: &Fwd<F>,
        cache: &mut KvCache,
        z_latest: VarId,
        max_len: usize,
        end_token: usize,
    ) -> Result<Vec<usize>> {
        let g = fwd.graph();
        let mut answer = Vec::new();
        if max_len == 0 {
            return Ok(answer);
        }
        let first = self.lm_logits(fwd, g.reshape(z_latest, vec![1, self.config.hidden]));
        let mut next = argmax(g.value(first).row(0));
        loop {
            if next == end_token {
                break;
            }
            answer.push(next);
            if answer.len() >= max_len {
                break;
            }
            let x = g.embed_rows(fwd.var(EMBED_NAME), &[next]);
            let h = self.core.block_forward(fwd, cache, x)?;
            let logits = self.lm_logits(fwd, h);
            next = argmax(g.value(logits).row(0));
        }
        Ok(answer)
    }
}

/// Greedy pick; ties break toward the lowest index.
pub fn argmax<F: Real>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Standalone low-rank adapter application on plain tensors:
/// `base @ x + scaling * B @ (A @ dropout(x))`. Runs through the same graph
/// machinery the model uses so the two cannot diverge.
pub struct LoraAdapter<F: Real> {
    pub a: Tensor<F>,
    pub b: Tensor<F>,
    pub alpha: f64,
    pub dropout: f64,
}

impl<F: Real> LoraAdapter<F> {
    pub fn scaling(&self) -> f64 {
        self.alpha / self.a.rows() as f64
    }

    pub fn apply(
        &self,
        base: &Tensor<F>,
        x: &[F],
        train: bool,
        rng: Option<&RefCell<ChaCha8Rng>>,
    ) -> Result<Vec<F>> {
        if base.cols() != x.len() || self.a.cols() != x.len() || self.b.cols() != self.a.rows() {
            return Err(Error::Shape(format!(
                "lora_apply: base [{},{}], A [{},{}], B [{},{}], x {}",
                base.rows(),
                base.cols(),
                self.a.rows(),
                self.a.cols(),
                self.b.rows(),
                self.b.cols(),
                x.len()
            )));
        }
        let g = crate::numerics::graph::Graph::<F>::inference();
        let xv = g.constant(Tensor::matrix(1, x.len(), x.to_vec()));
        let base_v = g.constant(base.clone());
        let a = g.constant(self.a.clone());
        let b = g.constant(self.b.clone());
        let xin = match (train, self.dropout > 0.0, rng) {
            (true, true, Some(r)) => g.dropout(xv, self.dropout, r),
            _ => xv,
        };
        let y = g.add(
            g.matmul_nt(xv, base_v),
            g.scale(g.matmul_nt(g.matmul_nt(xin, a), b), F::from_f64(self.scaling())),
        );
        Ok(g.value(y).row(0).to_vec())
    }
}
