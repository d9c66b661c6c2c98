//! Loss-weight sweep: trains one desk-scale model per (lambda_text,
//! lambda_visual) cell and evaluates held-out closed-ended accuracy,
//! emitting a heatmap-ready table. The published default cell (1.0, 0.1)
//! is always included.

use crate::data::vocab::SynthVocab;
use crate::diag::eval::evaluate;
use crate::error::{Error, Result};
use crate::model::VitalModel;
use crate::scalar::Real;
use crate::train::trainer::{run_curriculum, CurriculumStrategy, TrainConfig};
use crate::train::TrainSample;

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub lambda_text: f64,
    pub lambda_visual: f64,
    pub closed_accuracy: f64,
    pub overall_accuracy: f64,
    pub failed: bool,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub cells: Vec<SweepCell>,
}

impl SweepOutcome {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda_text,lambda_visual,closed_accuracy,overall_accuracy,failed\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{:.4},{:.4},{}\n",
                c.lambda_text, c.lambda_visual, c.closed_accuracy, c.overall_accuracy, c.failed
            ));
        }
        out
    }
}

fn with_default(set: &[f64], default: f64) -> Vec<f64> {
    let mut out = set.to_vec();
    if !out.iter().any(|&v| (v - default).abs() < 1e-12) {
        out.push(default);
    }
    out
}

/// Trains one model per weight pair (same seed, same schedule) and
/// evaluates each. Per-cell failures are recorded and the sweep continues.
pub fn sweep_loss_weights<F: Real>(
    lambda_text_set: &[f64],
    lambda_visual_set: &[f64],
    model: &VitalModel,
    train_data: &[TrainSample],
    eval_data: &[TrainSample],
    vocab: &SynthVocab,
    base: &TrainConfig,
    strategy: CurriculumStrategy,
    eval_k: usize,
    max_answer_len: usize,
) -> Result<SweepOutcome> {
    if lambda_text_set.is_empty() || lambda_visual_set.is_empty() {
        return Err(Error::Empty("sweep needs nonempty weight sets".into()));
    }
    let l1s = with_default(lambda_text_set, 1.0);
    let l2s = with_default(lambda_visual_set, 0.1);
    let mut cells = Vec::with_capacity(l1s.len() * l2s.len());
    for &l1 in &l1s {
        for &l2 in &l2s {
            let config = TrainConfig {
                lambda_text: l1,
                lambda_visual: l2,
                ..base.clone()
            };
            let mut store = model.init_params::<F>(config.seed);
            let trained = run_curriculum(strategy, model, &mut store, train_data, &config);
            match trained {
                Ok(_) => {
                    let summary =
                        evaluate(model, &store, eval_data, vocab, eval_k, max_answer_len)?;
                    cells.push(SweepCell {
                        lambda_text: l1,
                        lambda_visual: l2,
                        closed_accuracy: summary.closed_accuracy,
                        overall_accuracy: summary.overall_accuracy,
                        failed: false,
                    });
                }
                Err(_) => cells.push(SweepCell {
                    lambda_text: l1,
                    lambda_visual: l2,
                    closed_accuracy: f64::NAN,
                    overall_accuracy: f64::NAN,
                    failed: true,
                }),
            }
        }
    }
    Ok(SweepOutcome { cells })
}
