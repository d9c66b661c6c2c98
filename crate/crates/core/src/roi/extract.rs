//! Adaptive ROI feature extraction: the full-image pathway when the mask
//! is large relative to the image, the tight-crop pathway otherwise;
//! mean pooling over mask-aligned valid patches; unit normalization;
//! top-5 patch bookkeeping.

use crate::error::{Error, Result};
use crate::image::{Mask, ToyImage};
use crate::numerics::kernels::l2_normalize;
use crate::roi::encoder::{FrozenEncoder, PatchFeatureMap, Pathway, PixelRegion};
use crate::roi::mask_ops::{downsample_mask, tight_crop};
use crate::tensor::cosine;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RoiConfig {
    pub patch_grid: usize,
    pub feature_dim: usize,
    /// Encoder input canvas side (regions are area-resampled onto it).
    pub canvas: usize,
    /// Full-image pathway when mask ratio >= this threshold.
    pub area_threshold: f64,
    /// Crop margin ratio per side.
    pub margin: f64,
    /// Mask binarization level on the patch grid.
    pub binarize: f64,
    pub encoder_seed: u64,
    /// Masks below this foreground pixel count are rejected.
    pub min_foreground: usize,
    pub norm_floor: f64,
}

impl Default for RoiConfig {
    fn default() -> Self {
        Self {
            patch_grid: 8,
            feature_dim: 16,
            canvas: 64,
            area_threshold: 0.20,
            margin: 0.05,
            binarize: 0.3,
            encoder_seed: 7_331,
            min_foreground: 4,
            norm_floor: 1e-12,
        }
    }
}

impl RoiConfig {
    pub fn encoder(&self) -> FrozenEncoder {
        FrozenEncoder::new(
            self.encoder_seed,
            self.patch_grid,
            self.feature_dim,
            self.canvas,
        )
    }
}

/// Stored supervision record: unit feature, pathway, bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiFeatureRecord {
    pub feature: Vec<f64>,
    pub pathway: Pathway,
    pub mask_area_ratio: f64,
    /// Top-5 patch cells by cosine similarity against the pooled feature,
    /// sorted descending.
    pub top_patches: Vec<(usize, f64)>,
    pub area_threshold: f64,
    pub margin: f64,
    /// Unit mean of all full-image patch features (per-step target support).
    pub global_feature: Vec<f64>,
}

/// Full extraction output, including the intermediate maps the metrics and
/// heatmap tooling consume.
#[derive(Debug, Clone)]
pub struct RoiExtraction {
    pub record: RoiFeatureRecord,
    /// Feature map of the pathway actually pooled over.
    pub pathway_map: PatchFeatureMap,
    /// Full-image feature map (always computed; feeds the global feature
    /// and patch-similarity heatmaps).
    pub full_map: PatchFeatureMap,
    /// Pooled (ROI) cells on the pathway grid.
    pub pooled_cells: Vec<usize>,
    /// Validity flags on the pathway grid (all true on the full pathway).
    pub valid_cells: Vec<bool>,
}

pub fn extract_roi(
    image: &ToyImage,
    mask: &Mask,
    config: &RoiConfig,
    encoder: &FrozenEncoder,
) -> Result<RoiExtraction> {
    if mask.size() != image.size() {
        return Err(Error::Shape(format!(
            "mask size {} != image size {}",
            mask.size(),
            image.size()
        )));
    }
    if mask.count() < config.min_foreground.max(1) {
        return Err(Error::Empty(format!(
            "mask has {} foreground pixels, minimum {}",
            mask.count(),
            config.min_foreground
        )));
    }
    let p = config.patch_grid;
    let full_region = PixelRegion::new(image.size(), image.pixels().to_vec())?;
    let full_map = encoder.encode(&full_region, Pathway::Full);

    let ratio = mask.area_ratio();
    let (pathway_map, pooled_cells, valid_cells) = if ratio >= config.area_threshold {
        let ds = downsample_mask(mask, p, config.binarize)?;
        let pooled: Vec<usize> = (0..p * p).filter(|&i| ds.cells[i]).collect();
        (full_map.clone(), pooled, vec![true; p * p])
    } else {
        let crop = tight_crop(image.pixels(), image.size(), mask, config.margin)?;
        let crop_map = encoder.encode(&crop.region, Pathway::Crop);
        let crop_mask = crop.crop_mask(mask);
        let ds = downsample_mask(&crop_mask, p, config.binarize)?;
        let valid_fracs = crop.valid_fractions(p);
        let valid: Vec<bool> = valid_fracs.iter().map(|&f| f >= config.binarize).collect();
        let mut pooled: Vec<usize> = (0..p * p)
            .filter(|&i| ds.cells[i] && valid[i])
            .collect();
        if pooled.is_empty() {
            // intersect-empty fallback: best mask coverage among valid cells
            let best = (0..p * p)
                .filter(|&i| valid[i])
                .max_by(|&a, &b| {
                    ds.fractions[a]
                        .partial_cmp(&ds.fractions[b])
                        .unwrap()
                        .then(b.cmp(&a))
                })
                .ok_or_else(|| Error::Empty("crop produced no valid patches".into()))?;
            pooled = vec![best];
        }
        (crop_map, pooled, valid)
    };

    let dim = config.feature_dim;
    let mut pooled_mean = vec![0.0f64; dim];
    for &cell in &pooled_cells {
        for (d, slot) in pooled_mean.iter_mut().enumerate() {
            *slot += pathway_map.features[cell][d];
        }
    }
    for slot in pooled_mean.iter_mut() {
        *slot /= pooled_cells.len() as f64;
    }
    let feature = l2_normalize(&pooled_mean, config.norm_floor)?;

    let mut sims: Vec<(usize, f64)> = (0..p * p)
        .filter(|&i| valid_cells[i])
        .map(|i| (i, cosine(&pathway_map.features[i], &feature)))
        .collect();
    sims.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    sims.truncate(5);

    let mut global = vec![0.0f64; dim];
    for f in &full_map.features {
        for (d, slot) in global.iter_mut().enumerate() {
            *slot += f[d];
        }
    }
    for slot in global.iter_mut() {
        *slot /= full_map.features.len() as f64;
    }
    let global_feature = l2_normalize(&global, config.norm_floor)?;

    let pathway = pathway_map.provenance;
    Ok(RoiExtraction {
        record: RoiFeatureRecord {
            feature,
            pathway,
            mask_area_ratio: ratio,
            top_patches: sims,
            area_threshold: config.area_threshold,
            margin: config.margin,
            global_feature,
        },
        pathway_map,
        full_map,
        pooled_cells,
        valid_cells,
    })
}

// ---- versioned binary record io ----------------------------------------

const RECORD_MAGIC: &[u8; 8] = b"VITLROI\x01";

impl RoiFeatureRecord {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(RECORD_MAGIC);
        out.extend_from_slice(&(self.feature.len() as u32).to_le_bytes());
        for &v in &self.feature {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(match self.pathway {
            Pathway::Full => 0,
            Pathway::Crop => 1,
        });
        out.extend_from_slice(&self.mask_area_ratio.to_le_bytes());
        out.extend_from_slice(&self.area_threshold.to_le_bytes());
        out.extend_from_slice(&self.margin.to_le_bytes());
        out.push(self.top_patches.len() as u8);
        for &(idx, sim) in &self.top_patches {
            out.extend_from_slice(&(idx as u32).to_le_bytes());
            out.extend_from_slice(&sim.to_le_bytes());
        }
        for &v in &self.global_feature {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(Error::Format("truncated roi record".into()));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        if take(&mut pos, 8)? != RECORD_MAGIC {
            return Err(Error::Format("bad roi record magic".into()));
        }
        let dim = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut feature = Vec::with_capacity(dim);
        for _ in 0..dim {
            feature.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
        }
        let pathway = match take(&mut pos, 1)?[0] {
            0 => Pathway::Full,
            1 => Pathway::Crop,
            other => return Err(Error::Format(format!("bad pathway tag {other}"))),
        };
        let mask_area_ratio = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let area_threshold = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let margin = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let count = take(&mut pos, 1)?[0] as usize;
        let mut top_patches = Vec::with_capacity(count);
        for _ in 0..count {
            let idx = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let sim = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
            top_patches.push((idx, sim));
        }
        let mut global_feature = Vec::with_capacity(dim);
        for _ in 0..dim {
            global_feature.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
        }
        Ok(Self {
            feature,
            pathway,
            mask_area_ratio,
            top_patches,
            area_threshold,
            margin,
            global_feature,
        })
    }
}
