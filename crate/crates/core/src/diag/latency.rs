//! Latency benchmark over the inference path: median wall-clock per latent
//! depth, including the K=0 direct-answer baseline, with a least-squares
//! per-step cost estimate.

use crate::error::{Error, Result};
use crate::latent::{run_full_inference, DeployMode};
use crate::model::VitalModel;
use crate::numerics::store::ParamStore;
use crate::scalar::Real;
use crate::train::TrainSample;
use std::time::Instant;

#[derive(Debug, Clone)]
pub struct LatencyRow {
    pub k: usize,
    pub median_us: f64,
    pub repetitions: usize,
}

#[derive(Debug, Clone)]
pub struct LatencyTable {
    pub rows: Vec<LatencyRow>,
    /// Least-squares slope of median latency vs K, in microseconds.
    pub per_step_us: f64,
}

impl LatencyTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,median_us,repetitions,per_step_us\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.2},{},{:.2}\n",
                r.k, r.median_us, r.repetitions, self.per_step_us
            ));
        }
        out
    }

    pub fn median_for(&self, k: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.k == k).map(|r| r.median_us)
    }

    /// Latency increments between consecutive depths.
    pub fn step_increments(&self) -> Vec<f64> {
        let mut sorted: Vec<&LatencyRow> = self.rows.iter().collect();
        sorted.sort_by_key(|r| r.k);
        sorted
            .windows(2)
            .filter(|w| w[1].k == w[0].k + 1)
            .map(|w| w[1].median_us - w[0].median_us)
            .collect()
    }
}

/// Benchmarks full inference per depth. A fixed answer budget keeps decode
/// work constant so differences are attributable to the latent loop;
/// warmup runs are excluded; single-threaded by construction.
pub fn latency_bench<F: Real>(
    model: &VitalModel,
    store: &ParamStore<F>,
    sample: &TrainSample,
    k_values: &[usize],
    repetitions: usize,
    warmup: usize,
    answer_budget: usize,
) -> Result<LatencyTable> {
    if k_values.is_empty() || repetitions == 0 {
        return Err(Error::Argument("latency bench needs k values and reps".into()));
    }
    let mut rows = Vec::with_capacity(k_values.len());
    for &k in k_values {
        for _ in 0..warmup {
            run_full_inference(
                model,
                store,
                &sample.image,
                &sample.question_tokens,
                k,
                answer_budget,
                DeployMode::Tolerant,
            )?;
        }
        let mut times = Vec::with_capacity(repetitions);
        for _ in 0..repetitions {
            let t0 = Instant::now();
            run_full_inference(
                model,
                store,
                &sample.image,
                &sample.question_tokens,
                k,
                answer_budget,
                DeployMode::Tolerant,
            )?;
            times.push(t0.elapsed().as_secs_f64() * 1e6);
        }
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = if times.len() % 2 == 1 {
            times[times.len() / 2]
        } else {
            (times[times.len() / 2 - 1] + times[times.len() / 2]) / 2.0
        };
        rows.push(LatencyRow {
            k,
            median_us: median,
            repetitions,
        });
    }
    // least-squares slope of median vs k
    let n = rows.len() as f64;
    let mean_k: f64 = rows.iter().map(|r| r.k as f64).sum::<f64>() / n;
    let mean_t: f64 = rows.iter().map(|r| r.median_us).sum::<f64>() / n;
    let num: f64 = rows
        .iter()
        .map(|r| (r.k as f64 - mean_k) * (r.median_us - mean_t))
        .sum();
    let den: f64 = rows.iter().map(|r| (r.k as f64 - mean_k).powi(2)).sum();
    let per_step_us = if den > 0.0 { num / den } else { f64::NAN };
    Ok(LatencyTable { rows, per_step_us })
}
