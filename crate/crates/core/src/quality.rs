//! Calibration quality assessment.
//!
//! Accuracy is the difference between the mean of repeated measures and the
//! known true value; precision is the dispersion of the measures around
//! their own mean. Point accuracy uses a known position in space, distance
//! accuracy a known object dimension — the formula is the same, the
//! measurement protocol differs.

use crate::error::{Error, Result};

fn mean(measures: &[f64]) -> Result<f64> {
    if measures.is_empty() {
        return Err(Error::InvalidParameter(
            "need at least one measurement".into(),
        ));
    }
    Ok(measures.iter().sum::<f64>() / measures.len() as f64)
}

/// |mean(measures) − truth|, for repeated measurements of a known point
/// position (mm).
pub fn point_accuracy(measures: &[f64], truth: f64) -> Result<f64> {
    Ok((mean(measures)? - truth).abs())
}

/// |mean(measures) − truth|, for repeated measurements of a known object
/// dimension (mm).
pub fn distance_accuracy(measures: &[f64], truth: f64) -> Result<f64> {
    point_accuracy(measures, truth)
}

/// RMS deviation of the measures from their own mean (mm).
pub fn reconstruction_precision(measures: &[f64]) -> Result<f64> {
    let m = mean(measures)?;
    let ss = measures.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    Ok((ss / measures.len() as f64).sqrt())
}
