//! Teacher-only overlay rendering. The mask interior is blended as a
//! semi-transparent red layer (alpha 0.4) over the grayscale base; mask
//! pixels adjacent to non-mask pixels are drawn as a pure yellow contour.
//! The student view is never modified.

use crate::image::{Mask, ToyImage};

pub const OVERLAY_ALPHA: f64 = 0.4;

#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub size: usize,
    /// Row-major RGB triples in [0,1].
    pub pixels: Vec<[f64; 3]>,
}

/// Renders the teacher view. Pixels outside the image grid count as
/// non-mask, so mask pixels on the border are contour pixels.
pub fn render_overlay(image: &ToyImage, mask: &Mask) -> RgbImage {
    let size = image.size();
    assert_eq!(mask.size(), size, "mask must align to the image");
    let mut pixels = Vec::with_capacity(size * size);
    for r in 0..size {
        for c in 0..size {
            let v = image.at(r, c);
            let px = if mask.at(r, c) {
                if is_boundary(mask, r, c) {
                    [1.0, 1.0, 0.0]
                } else {
                    [
                        (1.0 - OVERLAY_ALPHA) * v + OVERLAY_ALPHA, // red = 255
                        (1.0 - OVERLAY_ALPHA) * v,
                        (1.0 - OVERLAY_ALPHA) * v,
                    ]
                }
            } else {
                [v, v, v]
            };
            pixels.push(px);
        }
    }
    RgbImage { size, pixels }
}

fn is_boundary(mask: &Mask, r: usize, c: usize) -> bool {
    let size = mask.size();
    let neighbors = [
        (r.wrapping_sub(1), c),
        (r + 1, c),
        (r, c.wrapping_sub(1)),
        (r, c + 1),
    ];
    neighbors
        .iter()
        .any(|&(nr, nc)| nr >= size || nc >= size || !mask.at(nr, nc))
}
