//! Exact fractional-area resampling between square grids. Every source
//! pixel's area is distributed over the target cells it overlaps, so cell
//! values are true area-weighted means for any size ratio.

/// Resamples `src` (side `from`) onto a grid of side `to`. Returns target
/// cell values as area-weighted means.
pub fn area_resample(src: &[f64], from: usize, to: usize) -> Vec<f64> {
    assert_eq!(src.len(), from * from, "area_resample: bad source length");
    let mut acc = vec![0.0f64; to * to];
    let scale = to as f64 / from as f64;
    for sr in 0..from {
        let r0 = sr as f64 * scale;
        let r1 = (sr + 1) as f64 * scale;
        for sc in 0..from {
            let c0 = sc as f64 * scale;
            let c1 = (sc + 1) as f64 * scale;
            let v = src[sr * from + sc];
            distribute(&mut acc, to, r0, r1, c0, c1, v);
        }
    }
    // each target cell has unit area in target coordinates
    acc
}

fn distribute(acc: &mut [f64], to: usize, r0: f64, r1: f64, c0: f64, c1: f64, v: f64) {
    let tr0 = r0.floor() as usize;
    let tr1 = (r1.ceil() as usize).min(to);
    let tc0 = c0.floor() as usize;
    let tc1 = (c1.ceil() as usize).min(to);
    for tr in tr0..tr1 {
        let overlap_r = (r1.min((tr + 1) as f64) - r0.max(tr as f64)).max(0.0);
        if overlap_r == 0.0 {
            continue;
        }
        for tc in tc0..tc1 {
            let overlap_c = (c1.min((tc + 1) as f64) - c0.max(tc as f64)).max(0.0);
            if overlap_c == 0.0 {
                continue;
            }
            acc[tr * to + tc] += v * overlap_r * overlap_c;
        }
    }
}
