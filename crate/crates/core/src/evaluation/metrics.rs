//! Prediction and ranking metrics.

use crate::error::{Error, Result};
use crate::labels::ClassId;

/// Index of the largest logit; ties go to the lowest index.
pub fn predict(logits: &[f64]) -> Result<usize> {
    if logits.is_empty() {
        return Err(Error::InvalidArgument("cannot predict from empty logits".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite logit".into()));
    }
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Label ranking average precision with the `≥` tie rule on both sides.
pub fn lrap(scores: &[Vec<f64>], truth: &[Vec<usize>]) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "{} score rows but {} truth sets",
            scores.len(),
            truth.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::InvalidArgument("lrap over zero instances".into()));
    }
    let mut total = 0.0;
    for (i, (s, y)) in scores.iter().zip(truth).enumerate() {
        if y.is_empty() {
            return Err(Error::InvalidArgument(format!("instance {i} has an empty truth set")));
        }
        if let Some(&bad) = y.iter().find(|&&l| l >= s.len()) {
            return Err(Error::InvalidArgument(format!("instance {i}: label {bad} out of range {}", s.len())));
        }
        let mut per = 0.0;
        for &l in y {
            let sl = s[l];
            let above = s.iter().filter(|&&v| v >= sl).count();
            let above_true = y.iter().filter(|&&t| s[t] >= sl).count();
            per += above_true as f64 / above as f64;
        }
        total += per / y.len() as f64;
    }
    Ok(total / scores.len() as f64)
}

/// Fraction of rows whose prediction equals the single true index.
pub fn accuracy(scores: &[Vec<f64>], truth: &[usize]) -> Result<f64> {
    if scores.is_empty() || scores.len() != truth.len() {
        return Err(Error::InvalidArgument("accuracy needs equally many, non-zero rows and labels".into()));
    }
    let mut correct = 0usize;
    for (s, &t) in scores.iter().zip(truth) {
        correct += (predict(s)? == t) as usize;
    }
    Ok(correct as f64 / scores.len() as f64)
}

/// Positions of `labels` within `classes`; `None` if any is missing.
pub fn class_positions(classes: &[ClassId], labels: &[ClassId]) -> Option<Vec<usize>> {
    labels.iter().map(|l| classes.iter().position(|c| c == l)).collect()
}
