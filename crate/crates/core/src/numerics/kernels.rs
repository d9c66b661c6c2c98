//! Scalar math kernels. These are the single source of truth for the
//! forward math; the autodiff graph ops call into them so the trained path
//! and the plain path cannot drift apart.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Default epsilon for layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Norm floor under which l2_normalize refuses to divide.
pub const NORM_FLOOR: f64 = 1e-12;

/// Layer normalization: zero mean, unit variance (population variance,
/// eps-guarded), then elementwise `gain * xhat + bias`.
pub fn layer_norm<F: Real>(x: &[F], gain: &[F], bias: &[F], eps: F) -> Result<Vec<F>> {
    if gain.len() != x.len() || bias.len() != x.len() {
        return Err(Error::Shape(format!(
            "layer_norm: x has {} elements, gain {}, bias {}",
            x.len(),
            gain.len(),
            bias.len()
        )));
    }
    let n = F::from_f64(x.len() as f64);
    let mean = x.iter().copied().sum::<F>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
    let inv = (var + eps).sqrt().recip();
    Ok(x.iter()
        .zip(gain.iter().zip(bias))
        .map(|(&v, (&g, &b))| g * ((v - mean) * inv) + b)
        .collect())
}

/// GELU, tanh approximation:
/// `0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 * x^3)))`
/// with `sqrt(2/pi) = 0.7978845608028654`.
pub fn gelu_scalar<F: Real>(x: F) -> F {
    let c = F::from_f64(0.797_884_560_802_865_4);
    let k = F::from_f64(0.044_715);
    let half = F::from_f64(0.5);
    half * x * (F::one() + (c * (x + k * x * x * x)).tanh())
}

/// Derivative of the tanh-approximation GELU.
pub fn gelu_grad_scalar<F: Real>(x: F) -> F {
    let c = F::from_f64(0.797_884_560_802_865_4);
    let k = F::from_f64(0.044_715);
    let half = F::from_f64(0.5);
    let three = F::from_f64(3.0);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let dinner = c * (F::one() + three * k * x * x);
    half * (F::one() + t) + half * x * (F::one() - t * t) * dinner
}

pub fn gelu<F: Real>(x: &[F]) -> Vec<F> {
    x.iter().map(|&v| gelu_scalar(v)).collect()
}

/// Scales to unit norm; errors when the norm is below `floor`.
pub fn l2_normalize<F: Real>(x: &[F], floor: F) -> Result<Vec<F>> {
    let norm = x.iter().map(|&v| v * v).sum::<F>().sqrt();
    if norm <= floor {
        return Err(Error::DegenerateVector {
            norm: norm.as_f64(),
            floor: floor.as_f64(),
        });
    }
    Ok(x.iter().map(|&v| v / norm).collect())
}

/// Row-wise log-softmax, numerically stable.
pub fn log_softmax_row<F: Real>(row: &[F]) -> Vec<F> {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let logsum = row.iter().map(|&v| (v - max).exp()).sum::<F>().ln() + max;
    row.iter().map(|&v| v - logsum).collect()
}

/// Mean negative log-softmax probability of `targets` over masked-in rows.
/// Masked-out rows contribute nothing to value or gradient.
pub fn cross_entropy<F: Real>(
    logits: &[F],
    vocab: usize,
    targets: &[usize],
    mask: &[bool],
) -> Result<F> {
    let t = targets.len();
    if logits.len() != t * vocab {
        return Err(Error::Shape(format!(
            "cross_entropy: logits {} != {}x{}",
            logits.len(),
            t,
            vocab
        )));
    }
    if mask.len() != t {
        return Err(Error::Shape(format!(
            "cross_entropy: mask length {} != {}",
            mask.len(),
            t
        )));
    }
    let mut total = F::zero();
    let mut count = 0usize;
    for (i, (&tok, &keep)) in targets.iter().zip(mask).enumerate() {
        if !keep {
            continue;
        }
        if tok >= vocab {
            return Err(Error::Argument(format!(
                "cross_entropy: target {tok} outside vocab {vocab}"
            )));
        }
        let row = &logits[i * vocab..(i + 1) * vocab];
        total = total - log_softmax_row(row)[tok];
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyLoss);
    }
    Ok(total / F::from_f64(count as f64))
}

/// Mean absolute difference.
pub fn l1_loss<F: Real>(pred: &[F], target: &[F]) -> Result<F> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "l1_loss: {} vs {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Empty("l1_loss on empty vectors".into()));
    }
    let sum: F = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| (p - t).abs())
        .sum();
    Ok(sum / F::from_f64(pred.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn layer_norm_constant_input_is_zero() {
        let x = [3.0f64; 6];
        let gain = [1.0f64; 6];
        let bias = [0.0f64; 6];
        let y = layer_norm(&x, &gain, &bias, 1e-5).unwrap();
        for v in y {
            assert_close(v, 0.0, 1e-12);
        }
    }

    #[test]
    fn layer_norm_already_normalized_is_identity_as_eps_vanishes() {
        let x = [1.0f64, -1.0];
        let y = layer_norm(&x, &[1.0, 1.0], &[0.0, 0.0], 1e-14).unwrap();
        assert_close(y[0], 1.0, 1e-6);
        assert_close(y[1], -1.0, 1e-6);
    }

    #[test]
    fn layer_norm_matches_two_pass_reference() {
        // Independent two-pass mean/variance reference, coded separately.
        let x = [0.3f64, -1.2, 2.2, 0.9, -0.4, 1.7, -2.0, 0.05];
        let gain = [1.1f64, 0.9, 1.0, 1.2, 0.8, 1.0, 1.05, 0.95];
        let bias = [0.1f64, -0.2, 0.0, 0.3, 0.05, -0.1, 0.0, 0.2];
        let eps = 1e-5;
        let mean: f64 = x.iter().sum::<f64>() / 8.0;
        let var: f64 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
        let y = layer_norm(&x, &gain, &bias, eps).unwrap();
        for i in 0..8 {
            let want = gain[i] * (x[i] - mean) / (var + eps).sqrt() + bias[i];
            assert_close(y[i], want, 1e-12);
        }
    }

    #[test]
    fn layer_norm_rejects_length_mismatch() {
        let err = layer_norm(&[1.0f64, 2.0], &[1.0], &[0.0, 0.0], 1e-5).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn gelu_fixed_points_and_asymptotes() {
        assert_eq!(gelu_scalar(0.0f64), 0.0);
        assert_close(gelu_scalar(10.0f64), 10.0, 1e-4);
        assert_close(gelu_scalar(-10.0f64), 0.0, 1e-4);
    }

    #[test]
    fn l2_normalize_three_four_five() {
        let y = l2_normalize(&[3.0f64, 4.0], 1e-12).unwrap();
        assert_close(y[0], 0.6, 1e-12);
        assert_close(y[1], 0.8, 1e-12);
    }

    #[test]
    fn l2_normalize_unit_vector_is_fixed_point() {
        let y = l2_normalize(&[0.6f64, 0.8], 1e-12).unwrap();
        assert_close(y[0], 0.6, 1e-12);
        assert_close(y[1], 0.8, 1e-12);
    }

    #[test]
    fn l2_normalize_zero_vector_is_degenerate() {
        let err = l2_normalize(&[0.0f64, 0.0], 1e-12).unwrap_err();
        assert!(matches!(err, Error::DegenerateVector { .. }));
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_vocab() {
        let vocab = 7;
        let logits = vec![0.25f64; vocab];
        let loss = cross_entropy(&logits, vocab, &[3], &[true]).unwrap();
        assert_close(loss, (vocab as f64).ln(), 1e-12);
    }

    #[test]
    fn cross_entropy_vanishes_with_margin() {
        let vocab = 5;
        let mut logits = vec![0.0f64; vocab];
        logits[2] = 20.0;
        let loss = cross_entropy(&logits, vocab, &[2], &[true]).unwrap();
        assert!(loss < 1e-3, "loss {loss}");
    }

    #[test]
    fn cross_entropy_matches_brute_force_reference() {
        // 3x5 case checked against an independently coded softmax+log sum.
        let logits = [
            0.3f64, -0.1, 1.2, 0.4, -0.9, //
            2.0, 0.0, -1.0, 0.5, 0.25, //
            -0.3, -0.6, 0.1, 0.9, 1.4,
        ];
        let targets = [2usize, 0, 4];
        let mask = [true, true, true];
        let mut want = 0.0f64;
        for i in 0..3 {
            let row = &logits[i * 5..(i + 1) * 5];
            let denom: f64 = row.iter().map(|v| v.exp()).sum();
            want -= (row[targets[i]].exp() / denom).ln();
        }
        want /= 3.0;
        let got = cross_entropy(&logits, 5, &targets, &mask).unwrap();
        assert_close(got, want, 1e-10);
    }

    #[test]
    fn cross_entropy_all_masked_is_empty_loss() {
        let logits = vec![0.0f64; 10];
        let err = cross_entropy(&logits, 5, &[1, 2], &[false, false]).unwrap_err();
        assert!(matches!(err, Error::EmptyLoss));
    }

    #[test]
    fn l1_loss_examples() {
        assert_eq!(l1_loss(&[1.0f64, 1.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(l1_loss(&[1.0f64, 1.0], &[0.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn l1_loss_matches_hand_summed_reference() {
        let pred: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        let target: Vec<f64> = (0..16).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut want = 0.0;
        for i in 0..16 {
            want += (pred[i] - target[i]).abs();
        }
        want /= 16.0;
        assert_close(l1_loss(&pred, &target).unwrap(), want, 1e-12);
    }
}
