//! Mask downsampling onto the patch grid and the tight-crop geometry.

use crate::error::{Error, Result};
use crate::image::{Mask, Rect};
use crate::roi::encoder::PixelRegion;
use crate::roi::resample::area_resample;

/// Coverage fractions plus the binarized cells. When no cell clears the
/// binarization threshold, the single max-coverage cell is marked so tiny
/// targets still yield supervision.
#[derive(Debug, Clone)]
pub struct DownsampledMask {
    pub grid: usize,
    pub fractions: Vec<f64>,
    pub cells: Vec<bool>,
    pub fallback_used: bool,
}

/// Downsamples a mask onto a `p x p` grid by exact fractional pixel-area
/// accounting, binarizing at `threshold` (boundary-inclusive).
pub fn downsample_mask(mask: &Mask, p: usize, threshold: f64) -> Result<DownsampledMask> {
    if mask.is_empty() {
        return Err(Error::Empty("downsample_mask on empty mask".into()));
    }
    let src: Vec<f64> = mask.cells().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let fractions = area_resample(&src, mask.size(), p);
    let mut cells: Vec<bool> = fractions.iter().map(|&f| f >= threshold).collect();
    let mut fallback_used = false;
    if cells.iter().all(|&c| !c) {
        let best = fractions
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap();
        cells[best] = true;
        fallback_used = true;
    }
    Ok(DownsampledMask {
        grid: p,
        fractions,
        cells,
        fallback_used,
    })
}

/// Square crop of the mask's bounding box expanded by the margin ratio,
/// clamped to the image, zero-padded to a square. The validity map marks
/// real-content pixels inside the square.
#[derive(Debug, Clone)]
pub struct TightCrop {
    /// Clamped content box in image coordinates.
    pub content: Rect,
    /// Square region side (max of content height/width).
    pub side: usize,
    pub region: PixelRegion,
    /// Real-content flags over the square, row-major.
    pub valid: Vec<bool>,
}

pub fn tight_crop(image_pixels: &[f64], image_size: usize, mask: &Mask, margin: f64) -> Result<TightCrop> {
    let bbox = mask
        .bounding_box()
        .ok_or_else(|| Error::Empty("tight_crop on empty mask".into()))?;
    let mh = (margin * bbox.height as f64).ceil() as usize;
    let mw = (margin * bbox.width as f64).ceil() as usize;
    let r0 = bbox.row.saturating_sub(mh);
    let c0 = bbox.col.saturating_sub(mw);
    let r1 = (bbox.row + bbox.height + mh).min(image_size);
    let c1 = (bbox.col + bbox.width + mw).min(image_size);
    let content = Rect {
        row: r0,
        col: c0,
        height: r1 - r0,
        width: c1 - c0,
    };
    let side = content.height.max(content.width);
    let mut pixels = vec![0.0f64; side * side];
    let mut valid = vec![false; side * side];
    for r in 0..content.height {
        for c in 0..content.width {
            pixels[r * side + c] = image_pixels[(r0 + r) * image_size + (c0 + c)];
            valid[r * side + c] = true;
        }
    }
    Ok(TightCrop {
        content,
        side,
        region: PixelRegion::new(side, pixels)?,
        valid,
    })
}

impl TightCrop {
    /// The mask restricted to the crop square, in crop coordinates.
    pub fn crop_mask(&self, mask: &Mask) -> Mask {
        let mut cells = vec![false; self.side * self.side];
        for r in 0..self.content.height {
            for c in 0..self.content.width {
                cells[r * self.side + c] =
                    mask.at(self.content.row + r, self.content.col + c);
            }
        }
        Mask::new(self.side, cells).expect("crop mask dims")
    }

    /// Validity fractions downsampled onto the patch grid.
    pub fn valid_fractions(&self, p: usize) -> Vec<f64> {
        let src: Vec<f64> = self.valid.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        area_resample(&src, self.side, p)
    }
}
