//! The joint objective: answer cross-entropy over the latent-enriched
//! cache, plus the semantic and visual auxiliary losses, weighted and
//! combined per sample.

use crate::data::build::LoadedSample;
use crate::data::vocab::{SynthVocab, EOS};
use crate::data::QuestionType;
use crate::error::{Error, Result};
use crate::image::ToyImage;
use crate::latent::{latent_loop_fn, LatentLoopFn};
use crate::model::VitalModel;
use crate::numerics::graph::VarId;
use crate::numerics::store::Fwd;
use crate::scaffold::VisualTargetMode;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// A tokenized training sample.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub id: usize,
    pub image: ToyImage,
    pub question_tokens: Vec<usize>,
    /// Answer tokens with the end token appended.
    pub answer_tokens: Vec<usize>,
    pub chain_tokens: Vec<Vec<usize>>,
    pub f_roi: Option<Vec<f64>>,
    pub f_global: Option<Vec<f64>>,
    pub k: usize,
    pub qtype: QuestionType,
    pub question_text: String,
    pub answer_text: String,
}

impl TrainSample {
    pub fn from_loaded(sample: &LoadedSample, vocab: &SynthVocab) -> Self {
        let mut answer_tokens = vocab.tokenize(&sample.tuple.answer);
        answer_tokens.push(EOS);
        Self {
            id: sample.tuple.id,
            image: sample.image.clone(),
            question_tokens: vocab.tokenize(&sample.tuple.question),
            answer_tokens,
            chain_tokens: sample
                .tuple
                .chain
                .iter()
                .map(|s| vocab.tokenize(s))
                .collect(),
            f_roi: Some(sample.roi.feature.clone()),
            f_global: Some(sample.roi.global_feature.clone()),
            k: sample.tuple.k,
            qtype: sample.tuple.question_type,
            question_text: sample.tuple.question.clone(),
            answer_text: sample.tuple.answer.clone(),
        }
    }
}

/// Train-time binding of the loop depth to the sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthBinding {
    /// Loop depth equals the reasoning-chain length.
    Chain,
    /// Loop depth is drawn uniformly from [chain length, max] per sample
    /// per epoch. Chain supervision still covers exactly the chain steps;
    /// the shared visual anchor extends over every loop step. This
    /// decorrelates depth from question type so a fixed inference depth
    /// stays in-distribution.
    Augmented { max: usize },
}

/// Loss configuration for one evaluation of the objective.
#[derive(Debug, Clone)]
pub struct LossOverrides {
    pub lambda_text: f64,
    pub lambda_visual: f64,
    pub visual_mode: VisualTargetMode,
    /// Cap on the latent depth; the effective depth per sample is
    /// `min(loop depth, k_cap)`. Zero disables the latent loop entirely.
    pub k_cap: usize,
    /// Explicit loop depth for this evaluation (before the cap). When
    /// absent the chain length is used.
    pub loop_depth: Option<usize>,
}

impl Default for LossOverrides {
    fn default() -> Self {
        Self {
            lambda_text: 1.0,
            lambda_visual: 0.1,
            visual_mode: VisualTargetMode::Shared,
            k_cap: 4,
            loop_depth: None,
        }
    }
}

/// Scalar loss components for logging; the graph node carries the total.
#[derive(Debug, Clone, Copy)]
pub struct JointLossParts {
    pub total_var: VarId,
    pub total: f64,
    pub task: f64,
    pub text: f64,
    pub visual: f64,
    pub k_used: usize,
}

/// Builds the joint loss for one sample on the given graph:
/// prefix encoding, the latent loop at the sample's depth, answer
/// cross-entropy (first answer token predicted from the final latent
/// state), and the two auxiliary losses on the latent trace.
pub fn compute_joint_loss<F: Real>(
    model: &VitalModel,
    fwd: &Fwd<F>,
    sample: &TrainSample,
    overrides: &LossOverrides,
) -> Result<JointLossParts> {
    if sample.answer_tokens.is_empty() {
        return Err(Error::Empty("sample without answer tokens".into()));
    }
    let g = fwd.graph();
    let prefix = model
        .backbone
        .encode_prefix(fwd, &sample.image, &sample.question_tokens)?;
    let mut cache = prefix.cache.snapshot();
    let k_used = overrides
        .loop_depth
        .unwrap_or(sample.k)
        .min(overrides.k_cap);
    // chain supervision never extends past the chain itself
    let k_supervised = sample.k.min(k_used);
    let loop_fn: LatentLoopFn<F> = latent_loop_fn::<F>();
    let out = loop_fn(&model.backbone, fwd, &prefix, &mut cache, k_used)?;
    let z_last = out.vars.last().copied().unwrap_or(prefix.z0);

    // answer logits: head(z_last) for the first token, teacher-forced block
    // for the rest
    let first = model
        .backbone
        .lm_logits(fwd, g.reshape(z_last, vec![1, model.config.backbone.hidden]));
    let logits = if sample.answer_tokens.len() > 1 {
        let forced = &sample.answer_tokens[..sample.answer_tokens.len() - 1];
        let emb = g.embed_rows(fwd.var(crate::backbone::EMBED_NAME), forced);
        let hidden = model.backbone.core.block_forward(fwd, &mut cache, emb)?;
        let rest = model.backbone.lm_logits(fwd, hidden);
        g.concat_rows(&[first, rest])
    } else {
        first
    };
    let mask = vec![true; sample.answer_tokens.len()];
    let task = g.cross_entropy_rows(logits, &sample.answer_tokens, &mask)?;

    let mut terms: Vec<(F, VarId)> = vec![(F::one(), task)];
    let mut text_val = 0.0;
    let mut visual_val = 0.0;
    if k_supervised > 0 && overrides.lambda_text > 0.0 {
        let chain: Vec<Vec<usize>> = sample.chain_tokens[..k_supervised].to_vec();
        let sem = model
            .scaffold
            .semantic_loss(fwd, &out.vars[..k_supervised], &chain)?;
        text_val = g.scalar(sem).as_f64();
        terms.push((F::from_f64(overrides.lambda_text), sem));
    }
    if k_used > 0 && overrides.lambda_visual > 0.0 {
        // samples lacking an ROI feature contribute zero visual loss
        if let Some(f_roi) = &sample.f_roi {
            let f_roi_t = Tensor::vector(f_roi.iter().map(|&v| F::from_f64(v)).collect());
            let f_global_t = sample
                .f_global
                .as_ref()
                .map(|f| Tensor::vector(f.iter().map(|&v| F::from_f64(v)).collect()));
            let vis = model.scaffold.visual_loss(
                fwd,
                &out.vars,
                &f_roi_t,
                overrides.visual_mode,
                f_global_t.as_ref(),
            )?;
            visual_val = g.scalar(vis).as_f64();
            terms.push((F::from_f64(overrides.lambda_visual), vis));
        }
    }
    let total_var = g.weighted_sum(&terms);
    Ok(JointLossParts {
        total_var,
        total: g.scalar(total_var).as_f64(),
        task: g.scalar(task).as_f64(),
        text: text_val,
        visual: visual_val,
        k_used,
    })
}
