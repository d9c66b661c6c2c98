//! Joint-objective training: per-sample losses over the recurrent latent
//! loop, curriculum phases with warm starts, and the loss-weight sweep.

pub mod loss;
pub mod sweep;
pub mod trainer;

pub use loss::{compute_joint_loss, DepthBinding, JointLossParts, LossOverrides, TrainSample};
pub use sweep::{sweep_loss_weights, SweepOutcome};
pub use trainer::{
    run_curriculum, train_phase, CurriculumOutcome, CurriculumPhase, CurriculumStrategy,
    PhaseLog, TrainConfig,
};
