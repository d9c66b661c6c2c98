//! Phase trainer and curriculum schedules. Each phase filters the data by
//! reasoning depth, warm-starts from the previous phase's parameters, and
//! runs AdamW over the trainable set only.

use crate::error::{Error, Result};
use crate::model::VitalModel;
use crate::numerics::gradcheck::GradMap;
use crate::numerics::graph::Graph;
use crate::numerics::optim::{OptimConfig, OptimState};
use crate::numerics::store::{Binder, Fwd, ParamStore};
use crate::scaffold::VisualTargetMode;
use crate::scalar::Real;
use crate::train::loss::{compute_joint_loss, DepthBinding, LossOverrides, TrainSample};
use crate::util;
use rand::seq::SliceRandom;
use std::cell::RefCell;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub lambda_text: f64,
    pub lambda_visual: f64,
    pub learning_rate: f64,
    pub warmup_ratio: f64,
    pub weight_decay: f64,
    pub max_grad_norm: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub visual_mode: VisualTargetMode,
    /// Epochs per curriculum phase (desk-scale defaults; the source
    /// schedule 5/5/10 is preserved as a preset).
    pub phase_epochs: Vec<usize>,
    /// Latent depth cap applied at train time.
    pub k_cap: usize,
    /// Loop-depth binding (chain-bound by default).
    pub depth_binding: DepthBinding,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_text: 1.0,
            lambda_visual: 0.1,
            learning_rate: 3e-3,
            warmup_ratio: 0.05,
            weight_decay: 0.01,
            max_grad_norm: 1.0,
            batch_size: 8,
            seed: 0,
            visual_mode: VisualTargetMode::Shared,
            phase_epochs: vec![3, 3, 6],
            k_cap: 4,
            depth_binding: DepthBinding::Chain,
        }
    }
}

impl TrainConfig {
    pub fn overrides(&self) -> LossOverrides {
        LossOverrides {
            lambda_text: self.lambda_text,
            lambda_visual: self.lambda_visual,
            visual_mode: self.visual_mode,
            k_cap: self.k_cap,
            loop_depth: None,
        }
    }

    /// The source-scale preset: 5/5/10 epochs.
    pub fn full_scale_epochs() -> Vec<usize> {
        vec![5, 5, 10]
    }
}

/// One curriculum stage: depth filter, epoch count, warm-start provenance.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CurriculumPhase {
    pub id: usize,
    pub min_k: usize,
    pub max_k: usize,
    pub epochs: usize,
    /// Human-readable provenance of the warm start ("init" for phase 1,
    /// otherwise the previous phase).
    pub warm_start: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurriculumStrategy {
    ThreePhase,
    TwoPhase,
    FullMix,
    Reverse,
}

impl CurriculumStrategy {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "3phase" | "three_phase" => Some(Self::ThreePhase),
            "2phase" | "two_phase" => Some(Self::TwoPhase),
            "fullmix" | "full_mix" => Some(Self::FullMix),
            "reverse" => Some(Self::Reverse),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::ThreePhase => "3phase",
            Self::TwoPhase => "2phase",
            Self::FullMix => "fullmix",
            Self::Reverse => "reverse",
        }
    }

    /// The phase schedule. Depth filters are inclusive ranges; the reverse
    /// schedule mirrors the three-phase one from the deep end down.
    pub fn phases(self, epochs: &[usize]) -> Vec<CurriculumPhase> {
        let e = |i: usize| epochs.get(i).copied().unwrap_or(1);
        let total: usize = epochs.iter().sum();
        let mk = |id: usize, min_k: usize, max_k: usize, epochs: usize| CurriculumPhase {
            id,
            min_k,
            max_k,
            epochs,
            warm_start: if id == 1 {
                "init".to_string()
            } else {
                format!("phase{}", id - 1)
            },
        };
        match self {
            Self::ThreePhase => vec![
                mk(1, 1, 1, e(0)),
                mk(2, 1, 2, e(1)),
                mk(3, 1, 4, e(2)),
            ],
            Self::TwoPhase => vec![mk(1, 1, 2, e(0) + e(1)), mk(2, 1, 4, e(2))],
            Self::FullMix => vec![mk(1, 1, 4, total.max(1))],
            Self::Reverse => vec![
                mk(1, 4, 4, e(0)),
                mk(2, 3, 4, e(1)),
                mk(3, 1, 4, e(2)),
            ],
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct StepRow {
    pub step: u64,
    pub task: f64,
    pub text: f64,
    pub visual: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct PhaseLog {
    pub phase: usize,
    pub rows: Vec<StepRow>,
    pub epoch_means: Vec<f64>,
    pub samples_used: usize,
}

impl PhaseLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,task,text,visual,total\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6}\n",
                r.step, r.task, r.text, r.visual, r.total
            ));
        }
        out
    }
}

/// Runs one curriculum phase in place over `store`. Batches group samples
/// of equal depth; gradients are averaged in a fixed order; only trainable
/// parameters move. On a non-finite loss the store is rolled back to the
/// end of the last completed epoch and an error is returned.
pub fn train_phase<F: Real>(
    model: &VitalModel,
    store: &mut ParamStore<F>,
    phase: &CurriculumPhase,
    data: &[TrainSample],
    config: &TrainConfig,
) -> Result<PhaseLog> {
    let filtered: Vec<&TrainSample> = data
        .iter()
        .filter(|s| s.k >= phase.min_k && s.k <= phase.max_k)
        .collect();
    if filtered.is_empty() {
        return Err(Error::Empty(format!(
            "phase {} has no samples with K in [{}, {}]",
            phase.id, phase.min_k, phase.max_k
        )));
    }
    let steps_per_epoch = filtered.len().div_ceil(config.batch_size);
    let mut opt = OptimState::<F>::new(OptimConfig {
        learning_rate: config.learning_rate,
        weight_decay: config.weight_decay,
        max_grad_norm: config.max_grad_norm,
        warmup_ratio: config.warmup_ratio,
        total_steps: (steps_per_epoch * phase.epochs.max(1)) as u64,
        ..OptimConfig::default()
    });
    let overrides = config.overrides();
    let mut log = PhaseLog {
        phase: phase.id,
        samples_used: filtered.len(),
        ..PhaseLog::default()
    };
    let mut last_good = store.clone();
    for epoch in 0..phase.epochs {
        let mut order: Vec<usize> = (0..filtered.len()).collect();
        let mut shuffle_rng = util::rng_from_indexed(
            config.seed,
            &format!("phase{}-epoch-order", phase.id),
            epoch as u64,
        );
        order.shuffle(&mut shuffle_rng);
        // group equal-depth samples within the shuffled order
        order.sort_by_key(|&i| filtered[i].k);
        let dropout_rng = RefCell::new(util::rng_from_indexed(
            config.seed,
            &format!("phase{}-dropout", phase.id),
            epoch as u64,
        ));
        let mut depth_rng = util::rng_from_indexed(
            config.seed,
            &format!("phase{}-depth", phase.id),
            epoch as u64,
        );
        // per-sample loop depths drawn up front, in deterministic order
        let loop_depths: Vec<usize> = order
            .iter()
            .map(|&i| match config.depth_binding {
                DepthBinding::Chain => filtered[i].k,
                DepthBinding::Augmented { max } => {
                    use rand::Rng;
                    let lo = filtered[i].k;
                    depth_rng.gen_range(lo..=max.max(lo))
                }
            })
            .collect();

        let mut epoch_total = 0.0;
        let mut epoch_count = 0usize;
        let mut cursor = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let mut batch_grads: GradMap<F> = GradMap::new();
            let scale = F::from_f64(1.0 / chunk.len() as f64);
            let (mut task, mut text, mut visual, mut total) = (0.0, 0.0, 0.0, 0.0);
            for &idx in chunk {
                let sample = filtered[idx];
                let mut per_sample = overrides.clone();
                per_sample.loop_depth = Some(loop_depths[cursor]);
                cursor += 1;
                let g = Graph::<F>::new();
                let binder = Binder::new(&g, store);
                let fwd = Fwd::train(&binder, &dropout_rng);
                let parts = compute_joint_loss(model, &fwd, sample, &per_sample)?;
                if !parts.total.is_finite() {
                    *store = last_good;
                    return Err(Error::NonFinite(format!(
                        "loss diverged at phase {} epoch {epoch} sample {}",
                        phase.id, sample.id
                    )));
                }
                let grads = g.backward(parts.total_var);
                for (name, grad) in binder.trainable_grads(&grads)? {
                    let scaled = grad.scale(scale);
                    match batch_grads.get_mut(&name) {
                        Some(acc) => acc.add_assign(&scaled),
                        None => {
                            batch_grads.insert(name, scaled);
                        }
                    }
                }
                task += parts.task;
                text += parts.text;
                visual += parts.visual;
                total += parts.total;
            }
            let n = chunk.len() as f64;
            opt.adamw_step(store, &batch_grads)?;
            log.rows.push(StepRow {
                step: opt.step_count(),
                task: task / n,
                text: text / n,
                visual: visual / n,
                total: total / n,
            });
            epoch_total += total;
            epoch_count += chunk.len();
        }
        log.epoch_means.push(epoch_total / epoch_count as f64);
        last_good = store.clone();
    }
    Ok(log)
}

#[derive(Debug)]
pub struct CurriculumOutcome {
    pub phases: Vec<CurriculumPhase>,
    pub logs: Vec<PhaseLog>,
}

/// Executes the phase schedule of the chosen strategy in place. Each phase
/// continues from the parameters the previous one left behind.
pub fn run_curriculum<F: Real>(
    strategy: CurriculumStrategy,
    model: &VitalModel,
    store: &mut ParamStore<F>,
    data: &[TrainSample],
    config: &TrainConfig,
) -> Result<CurriculumOutcome> {
    let phases = strategy.phases(&config.phase_epochs);
    let mut logs = Vec::with_capacity(phases.len());
    for phase in &phases {
        logs.push(train_phase(model, store, phase, data, config)?);
    }
    Ok(CurriculumOutcome { phases, logs })
}
