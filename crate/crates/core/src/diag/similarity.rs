//! Inter-step latent similarity: the K x K matrix of pairwise cosine
//! similarities between latent states, averaged over an evaluation set.
//! Off-diagonal mass near one is the modality-collapse signature.

use crate::error::{Error, Result};
use crate::latent::{run_full_inference, DeployMode};
use crate::model::VitalModel;
use crate::numerics::store::ParamStore;
use crate::scalar::Real;
use crate::tensor::cosine;
use crate::train::TrainSample;

#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    pub k: usize,
    /// Row-major K x K, averaged elementwise over samples.
    pub values: Vec<f64>,
    pub samples_used: usize,
    /// Samples dropped for zero-norm latents.
    pub excluded: usize,
}

impl SimilarityMatrix {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.k + j]
    }

    pub fn mean_off_diagonal(&self) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..self.k {
            for j in 0..self.k {
                if i != j {
                    sum += self.at(i, j);
                    count += 1;
                }
            }
        }
        sum / count as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.k {
            let row: Vec<String> = (0..self.k).map(|j| format!("{:.6}", self.at(i, j))).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Computes the per-sample cosine matrix of the latent trace at depth `k`
/// and averages elementwise across the evaluation set.
pub fn interstep_similarity<F: Real>(
    model: &VitalModel,
    store: &ParamStore<F>,
    eval_set: &[TrainSample],
    k: usize,
) -> Result<SimilarityMatrix> {
    if k < 2 {
        return Err(Error::Argument(format!(
            "interstep similarity needs K >= 2, got {k}"
        )));
    }
    if eval_set.is_empty() {
        return Err(Error::Empty("interstep similarity over empty set".into()));
    }
    let mut acc = vec![0.0f64; k * k];
    let mut used = 0usize;
    let mut excluded = 0usize;
    'samples: for sample in eval_set {
        let (_, trace) = run_full_inference(
            model,
            store,
            &sample.image,
            &sample.question_tokens,
            k,
            0,
            DeployMode::Tolerant,
        )?;
        let states: Vec<Vec<f64>> = trace
            .states
            .iter()
            .map(|z| z.data().iter().map(|v| v.as_f64()).collect())
            .collect();
        for z in &states {
            let norm: f64 = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-12 {
                excluded += 1;
                continue 'samples;
            }
        }
        for i in 0..k {
            for j in 0..k {
                acc[i * k + j] += cosine(&states[i], &states[j]);
            }
        }
        used += 1;
    }
    if used == 0 {
        return Err(Error::Empty(
            "all samples excluded from similarity".into(),
        ));
    }
    for v in acc.iter_mut() {
        *v /= used as f64;
    }
    Ok(SimilarityMatrix {
        k,
        values: acc,
        samples_used: used,
        excluded,
    })
}

/// Matrix directly from explicit traces (diagnostic/testing entry point).
pub fn similarity_from_traces(traces: &[Vec<Vec<f64>>]) -> Result<SimilarityMatrix> {
    let k = traces
        .first()
        .map(|t| t.len())
        .ok_or_else(|| Error::Empty("no traces".into()))?;
    let mut acc = vec![0.0f64; k * k];
    for trace in traces {
        if trace.len() != k {
            return Err(Error::Shape("trace depth mismatch".into()));
        }
        for i in 0..k {
            for j in 0..k {
                acc[i * k + j] += cosine(&trace[i], &trace[j]);
            }
        }
    }
    for v in acc.iter_mut() {
        *v /= traces.len() as f64;
    }
    Ok(SimilarityMatrix {
        k,
        values: acc,
        samples_used: traces.len(),
        excluded: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn copied_states_give_an_all_ones_matrix() {
        let z = vec![0.3, -0.7, 0.2];
        let traces = vec![vec![z.clone(), z.clone(), z.clone()]];
        let m = similarity_from_traces(&traces).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((m.at(i, j) - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn orthogonal_states_give_the_identity() {
        let traces = vec![vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]];
        let m = similarity_from_traces(&traces).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((m.at(i, j) - want).abs() < 1e-12);
            }
        }
        assert_eq!(m.mean_off_diagonal(), 0.0);
    }

    #[test]
    fn single_sample_average_is_that_sample() {
        let trace = vec![vec![1.0, 1.0], vec![1.0, -1.0]];
        let m = similarity_from_traces(&[trace.clone()]).unwrap();
        let direct = cosine(&trace[0], &trace[1]);
        assert!((m.at(0, 1) - direct).abs() < 1e-12);
        // symmetry and unit diagonal
        assert_eq!(m.at(0, 1), m.at(1, 0));
        assert!((m.at(0, 0) - 1.0).abs() < 1e-6);
    }
}
