//! Synthetic image/mask generator. Each sample is a noisy grid with one
//! rectangular target whose intensity band encodes its identity, so
//! identification is inferable from pixels alone.

use crate::error::{Error, Result};
use crate::image::{Mask, Rect, TargetKind, TargetMeta, ToyImage};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// The target lexicon: name, kind, and the center of its intensity band.
/// Background sits at 0.5; bands keep clear of it.
pub const TARGET_LEXICON: &[(&str, TargetKind, f64)] = &[
    ("pancreas", TargetKind::Organ, 0.60),
    ("liver", TargetKind::Organ, 0.70),
    ("spleen", TargetKind::Organ, 0.80),
    ("kidney", TargetKind::Organ, 0.24),
    ("heart", TargetKind::Organ, 0.34),
    ("nodule", TargetKind::Lesion, 0.90),
    ("tumor", TargetKind::Lesion, 0.98),
    ("cyst", TargetKind::Lesion, 0.04),
    ("polyp", TargetKind::Lesion, 0.14),
];

pub const BACKGROUND_LEVEL: f64 = 0.5;
const BACKGROUND_NOISE: f64 = 0.03;
const TARGET_NOISE: f64 = 0.02;

pub fn band_of(name: &str) -> Option<(TargetKind, f64)> {
    TARGET_LEXICON
        .iter()
        .find(|(n, _, _)| *n == name)
        .map(|&(_, kind, band)| (kind, band))
}

pub fn names_of_kind(kind: TargetKind) -> Vec<&'static str> {
    TARGET_LEXICON
        .iter()
        .filter(|(_, k, _)| *k == kind)
        .map(|(n, _, _)| *n)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SizeClass {
    Small,
    Large,
}

/// Area boundary between small and large targets, in pixels.
pub const SIZE_BOUNDARY: usize = 100;

pub fn size_class(rect: &Rect) -> SizeClass {
    if rect.area() < SIZE_BOUNDARY {
        SizeClass::Small
    } else {
        SizeClass::Large
    }
}

pub fn size_word(rect: &Rect) -> &'static str {
    match size_class(rect) {
        SizeClass::Small => "small",
        SizeClass::Large => "large",
    }
}

pub fn polarity_word(bright: bool) -> &'static str {
    if bright {
        "bright"
    } else {
        "dark"
    }
}

/// Horizontal third of the rect center: left / center / right.
pub fn horizontal_third(rect: &Rect, image_size: usize) -> &'static str {
    let center = rect.col as f64 + rect.width as f64 / 2.0;
    let third = image_size as f64 / 3.0;
    if center < third {
        "left"
    } else if center < 2.0 * third {
        "center"
    } else {
        "right"
    }
}

/// Vertical third of the rect center: upper / middle / lower.
pub fn vertical_third(rect: &Rect, image_size: usize) -> &'static str {
    let center = rect.row as f64 + rect.height as f64 / 2.0;
    let third = image_size as f64 / 3.0;
    if center < third {
        "upper"
    } else if center < 2.0 * third {
        "middle"
    } else {
        "lower"
    }
}

/// Draws a target (name, rectangle, size mix) and renders the image/mask
/// pair. Small and large targets alternate by draw so both crop and full
/// extraction pathways occur.
pub fn generate_sample(image_size: usize, rng: &mut ChaCha8Rng) -> Result<(ToyImage, Mask)> {
    if image_size < 16 {
        return Err(Error::Argument(format!(
            "image size {image_size} too small for target synthesis"
        )));
    }
    let (name, kind, band) = TARGET_LEXICON[rng.gen_range(0..TARGET_LEXICON.len())];
    let small = rng.gen_bool(0.5);
    let (min_side, max_side) = if small {
        (4usize, 9usize)
    } else {
        (12usize, (image_size * 5 / 8).max(13))
    };
    let h = rng.gen_range(min_side..=max_side.min(image_size - 1));
    let w = rng.gen_range(min_side..=max_side.min(image_size - 1));
    let rect = Rect {
        row: rng.gen_range(0..=image_size - h),
        col: rng.gen_range(0..=image_size - w),
        height: h,
        width: w,
    };
    let bright = band > BACKGROUND_LEVEL;
    let mut pixels = Vec::with_capacity(image_size * image_size);
    for r in 0..image_size {
        for c in 0..image_size {
            let v = if rect.contains(r, c) {
                band + rng.gen_range(-TARGET_NOISE..TARGET_NOISE)
            } else {
                BACKGROUND_LEVEL + rng.gen_range(-BACKGROUND_NOISE..BACKGROUND_NOISE)
            };
            pixels.push(v.clamp(0.0, 1.0));
        }
    }
    let target = TargetMeta {
        name: name.to_string(),
        kind,
        rect,
        bright,
    };
    let image = ToyImage::new(image_size, pixels, Some(target))?;
    Ok((image, Mask::from_rect(image_size, rect)))
}
