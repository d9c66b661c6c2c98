//! Toy image and mask grids. A stand-in for real imagery: a square grid of
//! intensities in [0,1] with one rectangular target whose metadata is used
//! by the data generator and never shown to the model.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.row && r < self.row + self.height && c >= self.col && c < self.col + self.width
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Organ,
    Lesion,
}

impl std::fmt::Display for TargetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TargetKind::Organ => write!(f, "organ"),
            TargetKind::Lesion => write!(f, "lesion"),
        }
    }
}

/// Ground-truth description of the synthetic target. Drives question
/// templates and the mock teacher; the model only ever sees pixels.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TargetMeta {
    pub name: String,
    pub kind: TargetKind,
    pub rect: Rect,
    /// Bright target on dark background, or the reverse.
    pub bright: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyImage {
    size: usize,
    pixels: Vec<f64>,
    pub target: Option<TargetMeta>,
}

impl ToyImage {
    pub fn new(size: usize, pixels: Vec<f64>, target: Option<TargetMeta>) -> Result<Self> {
        if pixels.len() != size * size {
            return Err(Error::Shape(format!(
                "image: {} pixels for size {size}",
                pixels.len()
            )));
        }
        if pixels.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::Argument("image intensities outside [0,1]".into()));
        }
        Ok(Self {
            size,
            pixels,
            target,
        })
    }

    pub fn blank(size: usize) -> Self {
        Self {
            size,
            pixels: vec![0.0; size * size],
            target: None,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.pixels[r * self.size + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.pixels[r * self.size + c] = v.clamp(0.0, 1.0);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    size: usize,
    cells: Vec<bool>,
}

impl Mask {
    pub fn new(size: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != size * size {
            return Err(Error::Shape(format!(
                "mask: {} cells for size {size}",
                cells.len()
            )));
        }
        Ok(Self { size, cells })
    }

    pub fn from_rect(size: usize, rect: Rect) -> Self {
        let mut cells = vec![false; size * size];
        for r in rect.row..(rect.row + rect.height).min(size) {
            for c in rect.col..(rect.col + rect.width).min(size) {
                cells[r * size + c] = true;
            }
        }
        Self { size, cells }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn at(&self, r: usize, c: usize) -> bool {
        self.cells[r * self.size + c]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Foreground fraction of the full grid.
    pub fn area_ratio(&self) -> f64 {
        self.count() as f64 / (self.size * self.size) as f64
    }

    /// Tight bounding box of the foreground, if any.
    pub fn bounding_box(&self) -> Option<Rect> {
        let (mut rmin, mut rmax, mut cmin, mut cmax) = (usize::MAX, 0usize, usize::MAX, 0usize);
        for r in 0..self.size {
            for c in 0..self.size {
                if self.at(r, c) {
                    rmin = rmin.min(r);
                    rmax = rmax.max(r);
                    cmin = cmin.min(c);
                    cmax = cmax.max(c);
                }
            }
        }
        if rmin == usize::MAX {
            None
        } else {
            Some(Rect {
                row: rmin,
                col: cmin,
                height: rmax - rmin + 1,
                width: cmax - cmin + 1,
            })
        }
    }
}
