//! Training-time scaffolding: the auxiliary text decoder with its input
//! projection, and the visual projector. Both live in the `scaffold.*`
//! namespace, are detached for deployment, and can be re-attached for
//! post-hoc interpretation of latent states.

use crate::backbone::core::{CoreDims, TransformerCore};
use crate::backbone::argmax;
use crate::data::vocab::EOS;
use crate::error::{Error, Result};
use crate::numerics::graph::VarId;
use crate::numerics::kernels::{self, LAYER_NORM_EPS};
use crate::numerics::store::{Fwd, ParamStore};
use crate::scalar::Real;
use crate::tensor::{cosine, Tensor};
use crate::util;

pub const PJ_IN_W: &str = "scaffold.pj_in.w";
pub const PJ_IN_B: &str = "scaffold.pj_in.b";
pub const DEC_EMBED: &str = "scaffold.dec.embed";

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TextDecoderConfig {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    /// Longest chain step (tokens) the decoder will ever see.
    pub max_chain_len: usize,
}

impl Default for TextDecoderConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            layers: 2,
            heads: 2,
            ffn: 128,
            max_chain_len: 24,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VisualProjectorConfig {
    /// Feature dimension of the frozen vision encoder.
    pub feature_dim: usize,
    /// Dropout applied after the GELU, train mode only.
    pub dropout: f64,
    /// The residual operand is the input-normalized z by default; setting
    /// this adds the raw z instead (kept for ablation).
    pub raw_residual: bool,
}

impl Default for VisualProjectorConfig {
    fn default() -> Self {
        Self {
            feature_dim: 16,
            dropout: 0.1,
            raw_residual: false,
        }
    }
}

/// Visual supervision target selection (shared anchor vs per-step
/// interpolated anchors).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisualTargetMode {
    Shared,
    PerStep,
}

#[derive(Debug, Clone)]
pub struct Scaffolding {
    pub decoder_config: TextDecoderConfig,
    pub vp_config: VisualProjectorConfig,
    /// Backbone hidden size (pj_in and VP input dimension).
    pub backbone_hidden: usize,
    pub vocab: usize,
    pub decoder: TransformerCore,
}

impl Scaffolding {
    pub fn new(
        decoder_config: TextDecoderConfig,
        vp_config: VisualProjectorConfig,
        backbone_hidden: usize,
        vocab: usize,
    ) -> Result<Self> {
        let dims = CoreDims {
            hidden: decoder_config.hidden,
            layers: decoder_config.layers,
            heads: decoder_config.heads,
            ffn: decoder_config.ffn,
            // position 0 is the projected latent; chain tokens follow
            max_positions: decoder_config.max_chain_len + 2,
        };
        let decoder = TransformerCore::new(dims, "scaffold.dec", None)?;
        Ok(Self {
            decoder_config,
            vp_config,
            backbone_hidden,
            vocab,
            decoder,
        })
    }

    /// All scaffolding parameters are trainable; none are shared with the
    /// backbone.
    pub fn init_params<F: Real>(&self, store: &mut ParamStore<F>, seed: u64) {
        let mut rng = util::rng_from(seed, "scaffold-init");
        let d = self.backbone_hidden;
        let d_dec = self.decoder_config.hidden;
        let d_v = self.vp_config.feature_dim;
        store.insert(
            PJ_IN_W,
            Tensor::randn(vec![d_dec, d], 1.0 / (d as f64).sqrt(), &mut rng),
            true,
        );
        store.insert(PJ_IN_B, Tensor::zeros(vec![d_dec]), true);
        store.insert(
            DEC_EMBED,
            Tensor::randn(vec![self.vocab, d_dec], 1.0, &mut rng),
            true,
        );
        self.decoder.init_params(store, &mut rng, true);

        store.insert(
            "scaffold.vp.ln_in.g",
            Tensor::new(vec![d], vec![F::one(); d]),
            true,
        );
        store.insert("scaffold.vp.ln_in.b", Tensor::zeros(vec![d]), true);
        store.insert(
            "scaffold.vp.w1",
            Tensor::randn(vec![d, d], 1.0 / (d as f64).sqrt(), &mut rng),
            true,
        );
        store.insert(
            "scaffold.vp.w2",
            Tensor::randn(vec![d_v, d], 1.0 / (d as f64).sqrt(), &mut rng),
            true,
        );
        store.insert(
            "scaffold.vp.ln_out.g",
            Tensor::new(vec![d_v], vec![F::one(); d_v]),
            true,
        );
        store.insert("scaffold.vp.ln_out.b", Tensor::zeros(vec![d_v]), true);
    }

    /// Affine map of a latent state into the decoder's hidden dimension,
    /// returned as a `[1, d_dec]` row.
    pub fn pj_in_project<F: Real>(&self, fwd: &Fwd<F>, z: VarId) -> VarId {
        let g = fwd.graph();
        let zr = g.reshape(z, vec![1, self.backbone_hidden]);
        let proj = g.matmul_nt(zr, fwd.var(PJ_IN_W));
        g.add_bias_rows(proj, fwd.var(PJ_IN_B))
    }

    fn decoder_logits<F: Real>(&self, fwd: &Fwd<F>, hidden: VarId) -> VarId {
        // weight-tied embedding / head, same 1/sqrt(d) logit scale as the
        // backbone head
        let g = fwd.graph();
        let scale = F::from_f64(1.0 / (self.decoder_config.hidden as f64).sqrt());
        g.scale(g.matmul_nt(hidden, fwd.var(DEC_EMBED)), scale)
    }

    /// Reasoning-chain reconstruction loss. For step `k`, the projected
    /// latent occupies position 0 of the decoder input and is predicted
    /// from, never predicted; the loss covers the step's tokens plus the
    /// end token, averaged over positions, then averaged over steps.
    pub fn semantic_loss<F: Real>(
        &self,
        fwd: &Fwd<F>,
        latents: &[VarId],
        chain: &[Vec<usize>],
    ) -> Result<VarId> {
        if latents.is_empty() {
            return Err(Error::EmptyLoss);
        }
        if latents.len() != chain.len() {
            return Err(Error::Alignment(format!(
                "trace length {} != chain length {}",
                latents.len(),
                chain.len()
            )));
        }
        let g = fwd.graph();
        let mut step_losses = Vec::with_capacity(latents.len());
        for (&z, step_tokens) in latents.iter().zip(chain) {
            let tokens: Vec<usize> = step_tokens
                .iter()
                .copied()
                .filter(|&t| t != crate::data::vocab::PAD)
                .collect();
            if tokens.len() > self.decoder_config.max_chain_len {
                return Err(Error::Argument(format!(
                    "chain step of {} tokens exceeds decoder max {}",
                    tokens.len(),
                    self.decoder_config.max_chain_len
                )));
            }
            let pj = self.pj_in_project(fwd, z);
            let input = if tokens.is_empty() {
                pj
            } else {
                let emb = g.embed_rows(fwd.var(DEC_EMBED), &tokens);
                g.concat_rows(&[pj, emb])
            };
            let mut cache = self.decoder.new_cache();
            let hidden = self.decoder.block_forward(fwd, &mut cache, input)?;
            let logits = self.decoder_logits(fwd, hidden);
            let mut targets = tokens.clone();
            targets.push(EOS);
            let mask = vec![true; targets.len()];
            step_losses.push(g.cross_entropy_rows(logits, &targets, &mask)?);
        }
        let w = F::from_f64(1.0 / step_losses.len() as f64);
        let terms: Vec<(F, VarId)> = step_losses.into_iter().map(|l| (w, l)).collect();
        Ok(g.weighted_sum(&terms))
    }

    /// Norm-stabilized residual MLP mapping a latent state into the vision
    /// encoder's feature space:
    /// `LN_out(W2 (GELU(W1 LN_in(z)) + LN_in(z)))`, dropout after GELU in
    /// train mode. The residual operand is LN_in(z) unless `raw_residual`.
    pub fn visual_project<F: Real>(&self, fwd: &Fwd<F>, z: VarId) -> VarId {
        let g = fwd.graph();
        let eps = F::from_f64(LAYER_NORM_EPS);
        let zr = g.reshape(z, vec![1, self.backbone_hidden]);
        let ln_in = g.layer_norm_rows(
            zr,
            fwd.var("scaffold.vp.ln_in.g"),
            fwd.var("scaffold.vp.ln_in.b"),
            eps,
        );
        let mut mid = g.gelu(g.matmul_nt(ln_in, fwd.var("scaffold.vp.w1")));
        if fwd.train && self.vp_config.dropout > 0.0 {
            mid = g.dropout(mid, self.vp_config.dropout, fwd.rng.expect("train rng"));
        }
        let residual = if self.vp_config.raw_residual { zr } else { ln_in };
        let summed = g.add(mid, residual);
        let out = g.matmul_nt(summed, fwd.var("scaffold.vp.w2"));
        let out = g.layer_norm_rows(
            out,
            fwd.var("scaffold.vp.ln_out.g"),
            fwd.var("scaffold.vp.ln_out.b"),
            eps,
        );
        g.row(out, 0)
    }

    /// ROI regression loss over the latent trace. Shared mode regresses
    /// every step onto the single ROI anchor; per-step mode interpolates
    /// between a global image feature and the ROI feature.
    pub fn visual_loss<F: Real>(
        &self,
        fwd: &Fwd<F>,
        latents: &[VarId],
        f_roi: &Tensor<F>,
        mode: VisualTargetMode,
        f_global: Option<&Tensor<F>>,
    ) -> Result<VarId> {
        if latents.is_empty() {
            return Err(Error::EmptyLoss);
        }
        check_unit_norm(f_roi)?;
        let g = fwd.graph();
        let k_total = latents.len();
        let targets: Vec<Tensor<F>> = match mode {
            VisualTargetMode::Shared => vec![f_roi.clone(); k_total],
            VisualTargetMode::PerStep => {
                let f_global = f_global.ok_or_else(|| {
                    Error::Argument("per_step visual target requires a global feature".into())
                })?;
                check_unit_norm(f_global)?;
                per_step_targets(f_roi, f_global, k_total)?
            }
        };
        let mut terms = Vec::with_capacity(k_total);
        let w = F::from_f64(1.0 / k_total as f64);
        for (&z, target) in latents.iter().zip(&targets) {
            let projected = self.visual_project(fwd, z);
            terms.push((w, g.l1_to_const(projected, target)?));
        }
        Ok(g.weighted_sum(&terms))
    }

    /// Greedy chain decode from a projected latent until the end token.
    pub fn decode_chain<F: Real>(&self, fwd: &Fwd<F>, z: VarId) -> Result<Vec<usize>> {
        let g = fwd.graph();
        let mut cache = self.decoder.new_cache();
        let pj = self.pj_in_project(fwd, z);
        let mut hidden = self.decoder.block_forward(fwd, &mut cache, pj)?;
        let mut out = Vec::new();
        loop {
            let logits = self.decoder_logits(fwd, hidden);
            let next = argmax(g.value(logits).row(g.shape(logits)[0] - 1));
            if next == EOS || out.len() >= self.decoder_config.max_chain_len {
                break;
            }
            out.push(next);
            let emb = g.embed_rows(fwd.var(DEC_EMBED), &[next]);
            hidden = self.decoder.block_forward(fwd, &mut cache, emb)?;
        }
        Ok(out)
    }
}

/// Interpolation weight for per-step targets. K=4 uses the published list
/// {0.0, 0.33, 0.67, 1.0}; other depths space evenly, and a single step
/// anchors fully to the ROI.
pub fn per_step_alpha(k_index: usize, k_total: usize) -> f64 {
    const K4: [f64; 4] = [0.0, 0.33, 0.67, 1.0];
    if k_total == 4 {
        K4[k_index]
    } else if k_total <= 1 {
        1.0
    } else {
        k_index as f64 / (k_total - 1) as f64
    }
}

/// Per-step visual targets: `normalize(alpha_k * f_roi + (1-alpha_k) * f_global)`.
pub fn per_step_targets<F: Real>(
    f_roi: &Tensor<F>,
    f_global: &Tensor<F>,
    k_total: usize,
) -> Result<Vec<Tensor<F>>> {
    (0..k_total)
        .map(|k| {
            let alpha = per_step_alpha(k, k_total);
            let mixed: Vec<F> = f_roi
                .data()
                .iter()
                .zip(f_global.data())
                .map(|(&r, &gl)| F::from_f64(alpha * r.as_f64() + (1.0 - alpha) * gl.as_f64()))
                .collect();
            let unit = kernels::l2_normalize(&mixed, F::from_f64(kernels::NORM_FLOOR))?;
            Ok(Tensor::vector(unit))
        })
        .collect()
}

fn check_unit_norm<F: Real>(v: &Tensor<F>) -> Result<()> {
    let norm = v.norm().as_f64();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(Error::TargetNorm(norm));
    }
    Ok(())
}

/// Decoded text plus a patch-similarity heatmap for one latent state.
#[derive(Debug, Clone)]
pub struct Interpretation {
    pub tokens: Vec<usize>,
    /// Cosine similarity between VP(z) and each patch feature, row-major.
    pub heatmap: Vec<f64>,
}

/// Post-hoc interpretation of a latent state: greedy chain decode through
/// the re-attached decoder, plus patch-level cosine similarity between the
/// projected latent and the frozen encoder's patch features.
pub fn interpret_latent<F: Real>(
    scaffold: &Scaffolding,
    store: &ParamStore<F>,
    z: &Tensor<F>,
    patch_features: &[Vec<f64>],
) -> Result<Interpretation> {
    if !store.contains(PJ_IN_W) {
        return Err(Error::Detached(
            "interpret_latent requires re-attached scaffolding".into(),
        ));
    }
    let g = crate::numerics::graph::Graph::<F>::inference();
    let binder = crate::numerics::store::Binder::new(&g, store);
    let fwd = Fwd::eval(&binder);
    let zv = g.constant(z.clone());
    let tokens = scaffold.decode_chain(&fwd, zv)?;
    let projected = g.value(scaffold.visual_project(&fwd, zv));
    let proj64: Vec<f64> = projected.data().iter().map(|v| v.as_f64()).collect();
    let mut heatmap = Vec::with_capacity(patch_features.len());
    for feat in patch_features {
        if feat.len() != proj64.len() {
            return Err(Error::Shape(format!(
                "patch feature dim {} != projector dim {}",
                feat.len(),
                proj64.len()
            )));
        }
        heatmap.push(cosine(&proj64, feat));
    }
    Ok(Interpretation { tokens, heatmap })
}
