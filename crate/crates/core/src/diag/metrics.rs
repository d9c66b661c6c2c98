//! Text metrics: exact-match accuracy after lowercase/whitespace
//! normalization, and bag-of-tokens F1.

use crate::data::vocab::normalize_text;
use crate::error::{Error, Result};
use std::collections::HashMap;

/// Bag-of-tokens F1: multiset overlap of lowercased, whitespace-split
/// tokens; harmonic mean of precision and recall. Zero when either side is
/// empty after tokenization.
pub fn token_f1(prediction: &str, gold: &str) -> f64 {
    let pred: Vec<String> = normalize_text(prediction)
        .split_whitespace()
        .map(str::to_string)
        .collect();
    let gold: Vec<String> = normalize_text(gold)
        .split_whitespace()
        .map(str::to_string)
        .collect();
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gold {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    let mut overlap = 0usize;
    for t in &pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / pred.len() as f64;
    let r = overlap as f64 / gold.len() as f64;
    2.0 * p * r / (p + r)
}

/// Exact-match rate after lowercasing and whitespace normalization.
pub fn accuracy(predictions: &[String], golds: &[String]) -> Result<f64> {
    if predictions.len() != golds.len() {
        return Err(Error::Shape(format!(
            "accuracy: {} predictions vs {} golds",
            predictions.len(),
            golds.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Empty("accuracy over empty set".into()));
    }
    let hits = predictions
        .iter()
        .zip(golds)
        .filter(|(p, g)| normalize_text(p) == normalize_text(g))
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}
