//! Closed-ended evaluation runner: greedy inference per sample, exact
//! match against the gold answer, plus token-level F1 for the open view.

use crate::data::vocab::SynthVocab;
use crate::diag::metrics::{accuracy, token_f1};
use crate::error::{Error, Result};
use crate::latent::{run_full_inference, DeployMode};
use crate::model::VitalModel;
use crate::numerics::store::ParamStore;
use crate::scalar::Real;
use crate::train::TrainSample;

#[derive(Debug, Clone)]
pub struct EvalSummary {
    /// Exact-match accuracy over closed-ended samples.
    pub closed_accuracy: f64,
    pub closed_count: usize,
    /// Exact-match accuracy over every sample.
    pub overall_accuracy: f64,
    /// Mean token-level F1 over every sample.
    pub mean_token_f1: f64,
    pub count: usize,
    pub eval_k: usize,
}

/// Evaluates the model at a fixed latent depth. Answers are decoded
/// greedily and compared after canonical normalization.
pub fn evaluate<F: Real>(
    model: &VitalModel,
    store: &ParamStore<F>,
    samples: &[TrainSample],
    vocab: &SynthVocab,
    eval_k: usize,
    max_answer_len: usize,
) -> Result<EvalSummary> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluate over empty set".into()));
    }
    let mut preds = Vec::with_capacity(samples.len());
    let mut golds = Vec::with_capacity(samples.len());
    let mut closed_preds = Vec::new();
    let mut closed_golds = Vec::new();
    let mut f1_sum = 0.0;
    for s in samples {
        let (tokens, _) = run_full_inference(
            model,
            store,
            &s.image,
            &s.question_tokens,
            eval_k,
            max_answer_len,
            DeployMode::Tolerant,
        )?;
        let pred = vocab.detokenize(&tokens);
        f1_sum += token_f1(&pred, &s.answer_text);
        if s.qtype.is_closed() {
            closed_preds.push(pred.clone());
            closed_golds.push(s.answer_text.clone());
        }
        preds.push(pred);
        golds.push(s.answer_text.clone());
    }
    let overall = accuracy(&preds, &golds)?;
    let closed = if closed_preds.is_empty() {
        f64::NAN
    } else {
        accuracy(&closed_preds, &closed_golds)?
    };
    Ok(EvalSummary {
        closed_accuracy: closed,
        closed_count: closed_preds.len(),
        overall_accuracy: overall,
        mean_token_f1: f1_sum / samples.len() as f64,
        count: samples.len(),
        eval_k,
    })
}
