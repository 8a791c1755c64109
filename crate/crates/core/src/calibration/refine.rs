//! Calibration refinement by image compounding.
//!
//! Two sweeps of the same volume, acquired roughly 90° apart, are both
//! reconstructed with candidate calibration parameters; the normalised cross
//! correlation over their overlapping voxels peaks when the calibration is
//! right. A coordinate-wise pattern search with shrinking steps refines the
//! equation-based solution. Only the eight parameters that matter after
//! calibration move: the rTp pose and the pixel scales; the phantom-frame
//! parameters are irrelevant here.

use super::CalibrationParams;
use crate::compounding::{compute_bounds, compound_onto, BoundsMode, ScanSequence, VoxelGrid};
use crate::error::{Error, Result};

/// Pattern-search knobs. Steps shrink by halving from the initial size down
/// to the final size; translations move in mm, angles in radians, and the
/// pixel scales in mm/px at 1/100 of the translation step (one millimetre of
/// step corresponds to 0.01 mm/px, a 100 px lever arm).
#[derive(Clone, Copy, Debug)]
pub struct RefineConfig {
    /// Initial translation step (mm).
    pub step_mm: f64,
    /// Initial rotation step (radians); default 1°.
    pub step_rad: f64,
    /// Search stops when the translation step shrinks below this (mm).
    pub min_step_mm: f64,
    /// Minimum voxels the two reconstructions must share.
    pub min_overlap: usize,
    /// Isotropic voxel spacing of the comparison grid; `None` uses
    /// `max(sx, sy)` of the initial parameters.
    pub spacing: Option<f64>,
    /// A step is accepted only if it raises the NCC by more than this.
    /// Two sweeps cannot sense common-mode motions (the objective compares
    /// the sweeps only against each other), and voxel-quantisation jitter
    /// would otherwise walk the search along those blind directions.
    pub min_improvement: f64,
    /// Indices (into the 14-parameter vector) the search moves; the default
    /// is sx, sy and the six rTp parameters. Restrict this when the sweep
    /// geometry leaves some of them blind: e.g. two sweeps related by a
    /// rotation cannot separate (z1, x1) pairs whose relative displacement
    /// cancels.
    pub parameters: Vec<usize>,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            step_mm: 1.0,
            step_rad: 1f64.to_radians(),
            min_step_mm: 0.01,
            min_overlap: 1000,
            spacing: None,
            min_improvement: 1e-3,
            parameters: (0..8).collect(),
        }
    }
}

/// Result of the refinement.
#[derive(Clone, Debug)]
pub struct RefineOutcome {
    pub params: CalibrationParams,
    pub ncc_initial: f64,
    pub ncc_final: f64,
    /// Objective evaluations performed (each is two compoundings).
    pub evaluations: usize,
}

/// NCC between the two reconstructions over voxels filled in both; `None`
/// when the overlap is too small or constant.
fn overlap_ncc(
    a: &crate::compounding::VoxelArray,
    b: &crate::compounding::VoxelArray,
    min_overlap: usize,
) -> (usize, Option<f64>) {
    let mut n = 0usize;
    let mut sa = 0.0;
    let mut sb = 0.0;
    for i in 0..a.values.len() {
        if a.contributions[i] > 0 && b.contributions[i] > 0 {
            n += 1;
            sa += a.values[i];
            sb += b.values[i];
        }
    }
    if n < min_overlap.max(2) {
        return (n, None);
    }
    let (ma, mb) = (sa / n as f64, sb / n as f64);
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for i in 0..a.values.len() {
        if a.contributions[i] > 0 && b.contributions[i] > 0 {
            let x = a.values[i] - ma;
            let y = b.values[i] - mb;
            num += x * y;
            da += x * x;
            db += y * y;
        }
    }
    let denom = (da * db).sqrt();
    if denom > 0.0 {
        (n, Some(num / denom))
    } else {
        (n, None)
    }
}

fn evaluate(
    sweep_a: &ScanSequence,
    sweep_b: &ScanSequence,
    grid: &VoxelGrid,
    params: &CalibrationParams,
    min_overlap: usize,
) -> Result<(usize, Option<f64>)> {
    let (va, _) = compound_onto(sweep_a, grid.clone(), params)?;
    let (vb, _) = compound_onto(sweep_b, grid.clone(), params)?;
    Ok(overlap_ncc(&va, &vb, min_overlap))
}

/// Refine `params0` by maximising the NCC between the two sweeps'
/// reconstructions. The returned parameters never score worse than the
/// input; with no improving step they are returned unchanged.
pub fn refine_by_compounding(
    sweep_a: &ScanSequence,
    sweep_b: &ScanSequence,
    params0: &CalibrationParams,
    cfg: &RefineConfig,
) -> Result<RefineOutcome> {
    let spacing = cfg.spacing.unwrap_or_else(|| params0.sx.max(params0.sy));

    // One fixed grid for the whole search: candidate NCC values are only
    // comparable on identical voxel sets.
    let mut frames = sweep_a.frames.clone();
    frames.extend(sweep_b.frames.iter().cloned());
    let mut poses = sweep_a.poses.clone();
    poses.extend(sweep_b.poses.iter().cloned());
    let combined = ScanSequence::new(frames, poses, params0.clone())?;
    let grid = compute_bounds(&combined, &BoundsMode::WorldAxes, [spacing; 3])?;

    let mut evaluations = 0usize;
    let (overlap0, ncc0) = evaluate(sweep_a, sweep_b, &grid, params0, cfg.min_overlap)?;
    evaluations += 1;
    let ncc_initial = match ncc0 {
        Some(v) => v,
        None => {
            return Err(Error::InsufficientOverlap {
                overlap: overlap0,
                required: cfg.min_overlap,
            })
        }
    };

    for &i in &cfg.parameters {
        if i >= 14 {
            return Err(Error::InvalidParameter(format!(
                "refined parameter index {i} out of range"
            )));
        }
        if params0.fixed[i] {
            return Err(Error::InvalidParameter(format!(
                "cannot refine fixed parameter `{}`",
                super::PARAM_NAMES[i]
            )));
        }
    }

    let base_step = |i: usize, scale: f64| -> f64 {
        match i {
            0 | 1 => cfg.step_mm * 0.01 * scale,  // sx, sy (mm/px)
            2..=4 | 8..=10 => cfg.step_mm * scale, // translations (mm)
            _ => cfg.step_rad * scale,            // angles
        }
    };

    let mut x = params0.to_vector();
    let mut best = ncc_initial;
    let mut scale = 1.0f64;
    while cfg.step_mm * scale >= cfg.min_step_mm {
        let mut improved = false;
        for &i in cfg.parameters.iter() {
            for sign in [1.0, -1.0] {
                let mut cand = x;
                cand[i] += sign * base_step(i, scale);
                if (i == 0 || i == 1) && cand[i] <= 0.0 {
                    continue;
                }
                let params = CalibrationParams::from_vector(&cand, params0.fixed);
                let (_, ncc) = evaluate(sweep_a, sweep_b, &grid, &params, cfg.min_overlap)?;
                evaluations += 1;
                if let Some(v) = ncc {
                    if v > best + cfg.min_improvement {
                        best = v;
                        x = cand;
                        improved = true;
                        break; // move on to the next coordinate
                    }
                }
            }
        }
        if !improved {
            scale *= 0.5;
        }
    }

    Ok(RefineOutcome {
        params: CalibrationParams::from_vector(&x, params0.fixed),
        ncc_initial,
        ncc_final: best,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Pose6, RigidTransform};
    use crate::imaging::Frame;

    fn flat_seq(offset_x: f64, calib: &CalibrationParams) -> ScanSequence {
        let frames: Vec<Frame> = (0..4)
            .map(|_| Frame::new(8, 8, vec![100; 64], 1.0, 1.0).unwrap())
            .collect();
        let poses: Vec<RigidTransform> = (0..4)
            .map(|i| RigidTransform::translation_xyz(offset_x, 0.0, i as f64 * 2.0))
            .collect();
        ScanSequence::new(frames, poses, calib.clone()).unwrap()
    }

    #[test]
    fn disjoint_sweeps_error() {
        let calib = CalibrationParams::new(1.0, 1.0, Pose6::zero(), Pose6::zero());
        let a = flat_seq(0.0, &calib);
        let b = flat_seq(500.0, &calib);
        let err = refine_by_compounding(&a, &b, &calib, &RefineConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InsufficientOverlap { .. }), "got {err}");
    }
}
