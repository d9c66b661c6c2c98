//! Decoder-only transformer core shared by the multimodal backbone and the
//! auxiliary text decoder: pre-norm blocks, rotary positions, multi-head
//! causal attention over a KV cache, GELU feed-forward, optional low-rank
//! adapters on every attention and feed-forward projection.

use crate::backbone::cache::KvCache;
use crate::error::{Error, Result};
use crate::numerics::graph::VarId;
use crate::numerics::kernels::LAYER_NORM_EPS;
use crate::numerics::store::{Fwd, ParamStore};
use crate::scalar::Real;
use crate::tensor::Tensor;
use rand_chacha::ChaCha8Rng;

pub const ROPE_BASE: f64 = 10_000.0;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdapterConfig {
    pub rank: usize,
    pub alpha: f64,
    pub dropout: f64,
}

impl AdapterConfig {
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

/// Dimensions of one transformer stack.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CoreDims {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub max_positions: usize,
}

impl CoreDims {
    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden % self.heads != 0 {
            return Err(Error::Argument(format!(
                "hidden {} not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        if self.head_dim() % 2 != 0 {
            return Err(Error::Argument(format!(
                "head dim {} must be even for rotary positions",
                self.head_dim()
            )));
        }
        if self.layers == 0 {
            return Err(Error::Argument("layer count must be >= 1".into()));
        }
        Ok(())
    }
}

/// One transformer stack bound to a parameter namespace. `base_ns` holds
/// the (possibly frozen) stack weights; `adapter_ns`, when present, holds
/// LoRA pairs for all six projections per layer.
#[derive(Debug, Clone)]
pub struct TransformerCore {
    pub dims: CoreDims,
    pub base_ns: String,
    pub adapter_ns: Option<String>,
    pub adapter: Option<AdapterConfig>,
}

/// The six projection sites that carry adapters.
const PROJ_SITES: [&str; 6] = ["attn.q", "attn.k", "attn.v", "attn.o", "ffn.in", "ffn.out"];

impl TransformerCore {
    pub fn new(
        dims: CoreDims,
        base_ns: &str,
        adapter: Option<(&str, AdapterConfig)>,
    ) -> Result<Self> {
        dims.validate()?;
        Ok(Self {
            dims,
            base_ns: base_ns.to_string(),
            adapter_ns: adapter.map(|(ns, _)| ns.to_string()),
            adapter: adapter.map(|(_, cfg)| cfg),
        })
    }

    fn proj_shape(&self, site: &str) -> (usize, usize) {
        let d = self.dims.hidden;
        match site {
            "ffn.in" => (self.dims.ffn, d),
            "ffn.out" => (d, self.dims.ffn),
            _ => (d, d),
        }
    }

    /// Initializes stack weights (and zero-B adapters) into the store.
    pub fn init_params<F: Real>(
        &self,
        store: &mut ParamStore<F>,
        rng: &mut ChaCha8Rng,
        base_trainable: bool,
    ) {
        let d = self.dims.hidden;
        for l in 0..self.dims.layers {
            for ln in ["ln1", "ln2"] {
                store.insert(
                    format!("{}.l{l}.{ln}.g", self.base_ns),
                    Tensor::new(vec![d], vec![F::one(); d]),
                    base_trainable,
                );
                store.insert(
                    format!("{}.l{l}.{ln}.b", self.base_ns),
                    Tensor::zeros(vec![d]),
                    base_trainable,
                );
            }
            for site in PROJ_SITES {
                let (rows, cols) = self.proj_shape(site);
                let std = 1.0 / (cols as f64).sqrt();
                store.insert(
                    format!("{}.l{l}.{site}.w", self.base_ns),
                    Tensor::randn(vec![rows, cols], std, rng),
                    base_trainable,
                );
                if let (Some(ns), Some(cfg)) = (&self.adapter_ns, &self.adapter) {
                    // B starts at zero so the adapter is an identity delta;
                    // A is small random.
                    let a_std = 1.0 / (cols as f64).sqrt();
                    store.insert(
                        format!("{ns}.l{l}.{site}.a"),
                        Tensor::randn(vec![cfg.rank, cols], a_std, rng),
                        true,
                    );
                    store.insert(
                        format!("{ns}.l{l}.{site}.b"),
                        Tensor::zeros(vec![rows, cfg.rank]),
                        true,
                    );
                }
            }
        }
        store.insert(
            format!("{}.final_ln.g", self.base_ns),
            Tensor::new(vec![d], vec![F::one(); d]),
            base_trainable,
        );
        store.insert(
            format!("{}.final_ln.b", self.base_ns),
            Tensor::zeros(vec![d]),
            base_trainable,
        );
    }

    /// Analytic count of adapter values: `rank * (d_in + d_out)` per adapted
    /// projection, summed over layers.
    pub fn adapter_value_count(&self) -> usize {
        let Some(cfg) = &self.adapter else { return 0 };
        let mut total = 0;
        for site in PROJ_SITES {
            let (rows, cols) = self.proj_shape(site);
            total += cfg.rank * (rows + cols);
        }
        total * self.dims.layers
    }

    pub fn new_cache(&self) -> KvCache {
        KvCache::new(self.dims.layers, self.dims.max_positions)
    }

    /// Projection with optional low-rank adapter:
    /// `x @ W^T + scaling * (dropout(x) @ A^T) @ B^T`.
    fn project<F: Real>(&self, fwd: &Fwd<F>, layer: usize, site: &str, x: VarId) -> VarId {
        let g = fwd.graph();
        let w = fwd.var(&format!("{}.l{layer}.{site}.w", self.base_ns));
        let mut y = g.matmul_nt(x, w);
        if let (Some(ns), Some(cfg)) = (&self.adapter_ns, &self.adapter) {
            let a = fwd.var(&format!("{ns}.l{layer}.{site}.a"));
            let b = fwd.var(&format!("{ns}.l{layer}.{site}.b"));
            let xin = if fwd.train && cfg.dropout > 0.0 {
                g.dropout(x, cfg.dropout, fwd.rng.expect("train mode carries rng"))
            } else {
                x
            };
            let delta = g.matmul_nt(g.matmul_nt(xin, a), b);
            y = g.add(y, g.scale(delta, F::from_f64(cfg.scaling())));
        }
        y
    }

    /// Runs `T` new positions through the stack, attending to everything in
    /// the cache plus the causal prefix of the new block. Appends the new
    /// K/V rows in place and returns the final-norm hidden states `[T, d]`.
    pub fn block_forward<F: Real>(
        &self,
        fwd: &Fwd<F>,
        cache: &mut KvCache,
        x: VarId,
    ) -> Result<VarId> {
        let g = fwd.graph();
        let t = g.shape(x)[0];
        let prev_len = cache.len();
        if prev_len + t > cache.max_positions() {
            return Err(Error::PositionOverflow {
                len: prev_len + t,
                max: cache.max_positions(),
            });
        }
        let start_pos = cache.next_pos();
        let eps = F::from_f64(LAYER_NORM_EPS);
        let (heads, hd) = (self.dims.heads, self.dims.head_dim());
        let inv_sqrt = F::from_f64(1.0 / (hd as f64).sqrt());

        let mut h = x;
        for l in 0..self.dims.layers {
            let ln1 = g.layer_norm_rows(
                h,
                fwd.var(&format!("{}.l{l}.ln1.g", self.base_ns)),
                fwd.var(&format!("{}.l{l}.ln1.b", self.base_ns)),
                eps,
            );
            let q = g.rope_rows(self.project(fwd, l, "attn.q", ln1), start_pos, heads, ROPE_BASE);
            let k = g.rope_rows(self.project(fwd, l, "attn.k", ln1), start_pos, heads, ROPE_BASE);
            let v = self.project(fwd, l, "attn.v", ln1);
            cache.push_layer_rows(l, k, v);
            let k_full = g.concat_rows(cache.k_parts(l));
            let v_full = g.concat_rows(cache.v_parts(l));

            let mut head_ctx = Vec::with_capacity(heads);
            for hh in 0..heads {
                let (lo, hi) = (hh * hd, (hh + 1) * hd);
                let qh = g.slice_cols(q, lo, hi);
                let kh = g.slice_cols(k_full, lo, hi);
                let vh = g.slice_cols(v_full, lo, hi);
                let scores = g.scale(g.matmul_nt(qh, kh), inv_sqrt);
                let probs = g.causal_softmax(scores, prev_len);
                head_ctx.push(g.matmul(probs, vh));
            }
            let ctx = g.concat_cols(&head_ctx);
            h = g.add(h, self.project(fwd, l, "attn.o", ctx));

            let ln2 = g.layer_norm_rows(
                h,
                fwd.var(&format!("{}.l{l}.ln2.g", self.base_ns)),
                fwd.var(&format!("{}.l{l}.ln2.b", self.base_ns)),
                eps,
            );
            let inner = g.gelu(self.project(fwd, l, "ffn.in", ln2));
            h = g.add(h, self.project(fwd, l, "ffn.out", inner));
        }
        cache.advance(t);
        Ok(g.layer_norm_rows(
            h,
            fwd.var(&format!("{}.final_ln.g", self.base_ns)),
            fwd.var(&format!("{}.final_ln.b", self.base_ns)),
            eps,
        ))
    }

    /// Single-position forward: one transformer step over the cache.
    pub fn forward_step<F: Real>(
        &self,
        fwd: &Fwd<F>,
        cache: &mut KvCache,
        z: VarId,
    ) -> Result<VarId> {
        let g = fwd.graph();
        let d = self.dims.hidden;
        let x = g.reshape(z, vec![1, d]);
        let h = self.block_forward(fwd, cache, x)?;
        Ok(g.row(h, 0))
    }
}
