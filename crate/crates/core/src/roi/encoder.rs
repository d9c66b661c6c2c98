//! Frozen deterministic toy vision encoder. Stands in for an external
//! pretrained encoder: every input region is resampled onto a fixed canvas,
//! split into a patch grid, and each patch is described by local statistics
//! (mean, variance, normalized position, four fixed edge/contrast filter
//! responses) pushed through a seeded random projection into feature space.
//! Bitwise reproducible for a given seed; strictly local per patch.

use crate::error::{Error, Result};
use crate::roi::resample::area_resample;
use crate::tensor::Tensor;
use crate::util;

/// Number of per-patch statistics fed to the projection.
const STAT_DIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pathway {
    Full,
    Crop,
}

impl std::fmt::Display for Pathway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Pathway::Full => write!(f, "full"),
            Pathway::Crop => write!(f, "crop"),
        }
    }
}

/// A square pixel region handed to the encoder.
#[derive(Debug, Clone)]
pub struct PixelRegion {
    pub side: usize,
    pub pixels: Vec<f64>,
}

impl PixelRegion {
    pub fn new(side: usize, pixels: Vec<f64>) -> Result<Self> {
        if side == 0 || pixels.len() != side * side {
            return Err(Error::Empty(format!(
                "region: {} pixels for side {side}",
                pixels.len()
            )));
        }
        Ok(Self { side, pixels })
    }
}

/// Grid of d_v-dimensional patch features from the frozen encoder.
#[derive(Debug, Clone)]
pub struct PatchFeatureMap {
    pub grid: usize,
    pub feature_dim: usize,
    pub features: Vec<Vec<f64>>,
    pub encoder_seed: u64,
    pub provenance: Pathway,
}

impl PatchFeatureMap {
    pub fn feature(&self, cell: usize) -> &[f64] {
        &self.features[cell]
    }

    pub fn cell_norm(&self, cell: usize) -> f64 {
        self.features[cell].iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct FrozenEncoder {
    pub seed: u64,
    pub patch_grid: usize,
    pub feature_dim: usize,
    pub canvas: usize,
    projection: Tensor<f64>,
}

impl FrozenEncoder {
    pub fn new(seed: u64, patch_grid: usize, feature_dim: usize, canvas: usize) -> Self {
        assert!(canvas % patch_grid == 0, "canvas must divide into patches");
        let mut rng = util::rng_from(seed, "frozen-encoder");
        let projection = Tensor::randn(vec![feature_dim, STAT_DIM], 1.0, &mut rng);
        Self {
            seed,
            patch_grid,
            feature_dim,
            canvas,
            projection,
        }
    }

    pub fn patch_side(&self) -> usize {
        self.canvas / self.patch_grid
    }

    pub fn encode(&self, region: &PixelRegion, provenance: Pathway) -> PatchFeatureMap {
        let canvas = area_resample(&region.pixels, region.side, self.canvas);
        let p = self.patch_grid;
        let s = self.patch_side();
        let mut features = Vec::with_capacity(p * p);
        for pr in 0..p {
            for pc in 0..p {
                let mut patch = Vec::with_capacity(s * s);
                for r in 0..s {
                    for c in 0..s {
                        patch.push(canvas[(pr * s + r) * self.canvas + pc * s + c]);
                    }
                }
                let stats = patch_stats(&patch, s, pr, pc, p);
                let feat: Vec<f64> = (0..self.feature_dim)
                    .map(|d| {
                        self.projection
                            .row(d)
                            .iter()
                            .zip(&stats)
                            .map(|(&w, &x)| w * x)
                            .sum()
                    })
                    .collect();
                features.push(feat);
            }
        }
        PatchFeatureMap {
            grid: p,
            feature_dim: self.feature_dim,
            features,
            encoder_seed: self.seed,
            provenance,
        }
    }
}

/// Patch statistics: mean, variance, normalized row/col position, and four
/// fixed filter responses (horizontal edge, vertical edge, diagonal,
/// center-surround).
fn patch_stats(patch: &[f64], side: usize, pr: usize, pc: usize, grid: usize) -> [f64; STAT_DIM] {
    let n = patch.len() as f64;
    let mean = patch.iter().sum::<f64>() / n;
    let var = patch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let row_pos = (pr as f64 + 0.5) / grid as f64;
    let col_pos = (pc as f64 + 0.5) / grid as f64;
    let mid = (side as f64 - 1.0) / 2.0;
    let (mut h_edge, mut v_edge, mut diag, mut center) = (0.0, 0.0, 0.0, 0.0);
    for r in 0..side {
        for c in 0..side {
            let v = patch[r * side + c];
            let sr = if (r as f64) < mid {
                -1.0
            } else if (r as f64) > mid {
                1.0
            } else {
                0.0
            };
            let sc = if (c as f64) < mid {
                -1.0
            } else if (c as f64) > mid {
                1.0
            } else {
                0.0
            };
            h_edge += v * sr;
            v_edge += v * sc;
            diag += v * sr * sc;
            let inner = (r as f64 - mid).abs() <= side as f64 / 4.0
                && (c as f64 - mid).abs() <= side as f64 / 4.0;
            center += if inner { v } else { -v };
        }
    }
    [
        mean,
        var,
        row_pos,
        col_pos,
        h_edge / n,
        v_edge / n,
        diag / n,
        center / n,
    ]
}
