//! Five-tuple dataset construction: synthetic images, template questions,
//! teacher-only overlays, a pluggable teacher, the six-round quality gate,
//! answer normalization, and the on-disk dataset layout.

pub mod build;
pub mod gate;
pub mod overlay;
pub mod synth;
pub mod teacher;
pub mod template;
pub mod vocab;

pub use build::{build_dataset, BuildStats, DataConfig, Dataset, FiveTuple, LoadedSample};
pub use gate::{normalize_answer, quality_gate, GateConfig, QualityReport};
pub use overlay::{render_overlay, RgbImage};
pub use teacher::{FaultClass, FaultPlan, HttpTeacher, MockTeacher, Teacher};
pub use template::{generate_question, QuestionSpec, QuestionType};
pub use vocab::SynthVocab;
