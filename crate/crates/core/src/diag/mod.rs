//! Evaluation metrics and diagnostics: exact-match accuracy, token-level
//! F1, inter-step similarity matrices, heatmap evolution, latency
//! benchmarks, and the closed-ended evaluation runner.

pub mod eval;
pub mod heatmap;
pub mod latency;
pub mod metrics;
pub mod similarity;

pub use eval::{evaluate, EvalSummary};
pub use heatmap::{heatmap_evolution, HeatmapEvolution};
pub use latency::{latency_bench, LatencyRow, LatencyTable};
pub use metrics::{accuracy, token_f1};
pub use similarity::{interstep_similarity, SimilarityMatrix};
