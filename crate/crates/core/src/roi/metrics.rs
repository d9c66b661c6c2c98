//! Extraction quality metrics and the (T, P) grid search.

use crate::error::{Error, Result};
use crate::image::{Mask, ToyImage};
use crate::roi::extract::{extract_roi, RoiConfig, RoiExtraction};

/// Sample-averaged extraction metrics: patch-grid coverage, mean ROI patch
/// activation norm, and the ROI-to-background activation ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiMetrics {
    pub coverage_pct: f64,
    pub intensity: f64,
    pub snr: f64,
    /// Samples excluded from the SNR mean for lack of background cells.
    pub snr_excluded: usize,
    pub samples: usize,
}

pub fn compute_metrics(extractions: &[RoiExtraction]) -> Result<RoiMetrics> {
    if extractions.is_empty() {
        return Err(Error::Empty("compute_metrics on empty sample set".into()));
    }
    let mut coverage_sum = 0.0;
    let mut intensity_sum = 0.0;
    let mut snr_sum = 0.0;
    let mut snr_count = 0usize;
    for ex in extractions {
        let cells = ex.pathway_map.grid * ex.pathway_map.grid;
        coverage_sum += ex.pooled_cells.len() as f64 / cells as f64;
        let roi_mean = mean_norm(ex, true);
        intensity_sum += roi_mean;
        let background: Vec<usize> = (0..cells)
            .filter(|&i| ex.valid_cells[i] && !ex.pooled_cells.contains(&i))
            .collect();
        if background.is_empty() {
            snr_count += 0;
        } else {
            let bg_mean: f64 = background
                .iter()
                .map(|&i| ex.pathway_map.cell_norm(i))
                .sum::<f64>()
                / background.len() as f64;
            snr_sum += roi_mean / bg_mean;
            snr_count += 1;
        }
    }
    let n = extractions.len() as f64;
    Ok(RoiMetrics {
        coverage_pct: 100.0 * coverage_sum / n,
        intensity: intensity_sum / n,
        snr: if snr_count > 0 {
            snr_sum / snr_count as f64
        } else {
            f64::NAN
        },
        snr_excluded: extractions.len() - snr_count,
        samples: extractions.len(),
    })
}

fn mean_norm(ex: &RoiExtraction, roi: bool) -> f64 {
    let cells: Vec<usize> = if roi {
        ex.pooled_cells.clone()
    } else {
        (0..ex.pathway_map.features.len()).collect()
    };
    cells
        .iter()
        .map(|&i| ex.pathway_map.cell_norm(i))
        .sum::<f64>()
        / cells.len() as f64
}

#[derive(Debug, Clone)]
pub struct GridCell {
    pub area_threshold: f64,
    pub margin: f64,
    pub metrics: RoiMetrics,
    pub errors: usize,
}

#[derive(Debug, Clone)]
pub struct GridSearchReport {
    pub cells: Vec<GridCell>,
    /// Report-only pick: highest SNR among rows with T >= 0.10, ties broken
    /// by coverage. The shipped defaults stay at T=0.20, P=0.05.
    pub selected: (f64, f64),
}

impl GridSearchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("T,P,coverage_pct,intensity,snr,snr_excluded,errors,samples\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{:.2},{:.2},{:.4},{:.6},{:.6},{},{},{}\n",
                c.area_threshold,
                c.margin,
                c.metrics.coverage_pct,
                c.metrics.intensity,
                c.metrics.snr,
                c.metrics.snr_excluded,
                c.errors,
                c.metrics.samples
            ));
        }
        out
    }
}

/// Runs extraction for every (T, P) combination over the sample set and
/// tabulates the three metrics per cell. Per-sample failures are counted,
/// never fatal.
pub fn grid_search(
    t_set: &[f64],
    p_set: &[f64],
    samples: &[(ToyImage, Mask)],
    base: &RoiConfig,
) -> Result<GridSearchReport> {
    if t_set.is_empty() || p_set.is_empty() || samples.is_empty() {
        return Err(Error::Empty("grid_search needs nonempty sets".into()));
    }
    let encoder = base.encoder();
    let mut cells = Vec::with_capacity(t_set.len() * p_set.len());
    for &t in t_set {
        for &p in p_set {
            let config = RoiConfig {
                area_threshold: t,
                margin: p,
                ..base.clone()
            };
            let mut extractions = Vec::with_capacity(samples.len());
            let mut errors = 0usize;
            for (image, mask) in samples {
                match extract_roi(image, mask, &config, &encoder) {
                    Ok(ex) => extractions.push(ex),
                    Err(_) => errors += 1,
                }
            }
            let metrics = compute_metrics(&extractions)?;
            cells.push(GridCell {
                area_threshold: t,
                margin: p,
                metrics,
                errors,
            });
        }
    }
    let selected = cells
        .iter()
        .filter(|c| c.area_threshold >= 0.10 && c.metrics.snr.is_finite())
        .max_by(|a, b| {
            a.metrics
                .snr
                .partial_cmp(&b.metrics.snr)
                .unwrap()
                .then(a.metrics.coverage_pct.partial_cmp(&b.metrics.coverage_pct).unwrap())
        })
        .map(|c| (c.area_threshold, c.margin))
        .unwrap_or((base.area_threshold, base.margin));
    Ok(GridSearchReport { cells, selected })
}
