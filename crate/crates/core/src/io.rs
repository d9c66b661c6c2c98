//! Portable graymap / pixmap io for images, masks, and heatmaps.

use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

/// Writes intensities in [0,1] as a binary 8-bit PGM.
pub fn write_pgm(path: &Path, size: usize, pixels: &[f64]) -> Result<()> {
    if pixels.len() != size * size {
        return Err(Error::Shape(format!(
            "pgm: {} pixels for size {size}",
            pixels.len()
        )));
    }
    let mut f = std::fs::File::create(path)?;
    write!(f, "P5\n{size} {size}\n255\n")?;
    let bytes: Vec<u8> = pixels
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<(usize, Vec<f64>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let header_err = || Error::Format(format!("bad pgm header in {}", path.display()));
    let mut fields = Vec::new();
    let mut pos = 0usize;
    while fields.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| header_err())?);
    }
    if fields.len() != 4 || fields[0] != "P5" {
        return Err(header_err());
    }
    let w: usize = fields[1].parse().map_err(|_| header_err())?;
    let h: usize = fields[2].parse().map_err(|_| header_err())?;
    let maxval: f64 = fields[3].parse().map_err(|_| header_err())?;
    if w != h {
        return Err(Error::Format("pgm must be square".into()));
    }
    pos += 1; // single whitespace after maxval
    let data = &bytes[pos..];
    if data.len() < w * h {
        return Err(Error::Format("truncated pgm".into()));
    }
    Ok((w, data[..w * h].iter().map(|&b| b as f64 / maxval).collect()))
}

/// Writes RGB pixels in [0,1] as a binary 8-bit PPM.
pub fn write_ppm(path: &Path, size: usize, pixels: &[[f64; 3]]) -> Result<()> {
    if pixels.len() != size * size {
        return Err(Error::Shape(format!(
            "ppm: {} pixels for size {size}",
            pixels.len()
        )));
    }
    let mut f = std::fs::File::create(path)?;
    write!(f, "P6\n{size} {size}\n255\n")?;
    let mut bytes = Vec::with_capacity(pixels.len() * 3);
    for px in pixels {
        for &c in px {
            bytes.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    f.write_all(&bytes)?;
    Ok(())
}

/// Maps values in [-1, 1] onto [0, 1] gray and writes a PGM (heatmaps).
pub fn write_signed_heatmap_pgm(path: &Path, side: usize, values: &[f64]) -> Result<()> {
    let gray: Vec<f64> = values.iter().map(|&v| (v + 1.0) / 2.0).collect();
    write_pgm(path, side, &gray)
}
