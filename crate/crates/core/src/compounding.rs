//! 3D compounding: place every 2D frame in space, size the minimal voxel
//! grid, and fill it by pixel-nearest-neighbour with contribution averaging.
//!
//! The grid is the smallest box containing all repositioned frame corners,
//! either in user-chosen axes or in the principal axes of the corner cloud
//! (PCA mode), which shrinks the box for sweeps not aligned with the world
//! frame. Insertion accumulates `(sum, count)` per voxel and divides once at
//! finalisation — numerically equivalent to the classic running average but
//! order-independent and trivially parallel.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::calibration::CalibrationParams;
use crate::error::{Error, Result};
use crate::geometry::{apply, compose, make_transform, RigidTransform};
use crate::imaging::Frame;

/// Geometry of a voxel grid: `world = world_from_grid · (i·dx, j·dy, k·dz)`
/// where `(i, j, k)` are voxel-centre indices.
#[derive(Clone, Debug)]
pub struct VoxelGrid {
    /// Voxel counts per axis (xl, yl, zl).
    pub dims: [usize; 3],
    /// mm per voxel per axis.
    pub spacing: [f64; 3],
    /// Maps grid coordinates (mm along grid axes) into world coordinates;
    /// its translation is the world position of voxel (0, 0, 0)'s centre.
    pub world_from_grid: RigidTransform,
}

impl VoxelGrid {
    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// World position of the centre of voxel (0,0,0).
    pub fn origin(&self) -> Vector3<f64> {
        self.world_from_grid.translation()
    }

    /// World position of a voxel centre.
    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> Vector3<f64> {
        apply(
            &self.world_from_grid,
            &Vector3::new(
                x as f64 * self.spacing[0],
                y as f64 * self.spacing[1],
                z as f64 * self.spacing[2],
            ),
        )
    }

    /// Continuous grid coordinates (in voxels) of a world point.
    pub fn grid_coords(&self, world: &Vector3<f64>) -> Vector3<f64> {
        let local = self.world_from_grid.rotation().transpose() * (world - self.origin());
        Vector3::new(
            local.x / self.spacing[0],
            local.y / self.spacing[1],
            local.z / self.spacing[2],
        )
    }
}

/// Bijective map from voxel coordinates to a linear index, x fastest:
/// `idx = x + xl·(y + yl·z)`.
pub fn xyz2idx(x: usize, y: usize, z: usize, dims: [usize; 3]) -> Result<usize> {
    if x >= dims[0] || y >= dims[1] || z >= dims[2] {
        return Err(Error::VoxelOutOfRange {
            x: x as i64,
            y: y as i64,
            z: z as i64,
            dims,
        });
    }
    Ok(x + dims[0] * (y + dims[1] * z))
}

/// Inverse of [`xyz2idx`].
pub fn idx2xyz(idx: usize, dims: [usize; 3]) -> (usize, usize, usize) {
    let x = idx % dims[0];
    let y = (idx / dims[0]) % dims[1];
    let z = idx / (dims[0] * dims[1]);
    (x, y, z)
}

/// 3D accumulator grid. During compounding `values` holds per-voxel sums of
/// contributions; [`VoxelArray::finalize`] divides them into means. Voxels
/// with `contributions == 0` always hold the sentinel value 0.
#[derive(Clone, Debug)]
pub struct VoxelArray {
    pub grid: VoxelGrid,
    pub values: Vec<f64>,
    pub contributions: Vec<u32>,
    finalized: bool,
}

impl VoxelArray {
    pub fn empty(grid: VoxelGrid) -> Self {
        let n = grid.voxel_count();
        VoxelArray {
            grid,
            values: vec![0.0; n],
            contributions: vec![0; n],
            finalized: false,
        }
    }

    /// Convert accumulated sums into means. Idempotent.
    pub fn finalize(&mut self) {
        if self.finalized {
            return;
        }
        self.values
            .par_iter_mut()
            .zip(self.contributions.par_iter())
            .for_each(|(v, &c)| {
                if c > 0 {
                    *v /= c as f64;
                }
            });
        self.finalized = true;
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    /// Mean value of a voxel regardless of finalisation state (0 when the
    /// voxel has no contributions).
    pub fn mean_at(&self, idx: usize) -> f64 {
        let c = self.contributions[idx];
        if c == 0 {
            0.0
        } else if self.finalized {
            self.values[idx]
        } else {
            self.values[idx] / c as f64
        }
    }
}

/// Scan sequence ready for compounding: frames paired with synchronized,
/// delay-corrected probe poses (transducer → world) and the calibration that
/// places pixels in the probe frame.
#[derive(Clone, Debug)]
pub struct ScanSequence {
    pub frames: Vec<Frame>,
    pub poses: Vec<RigidTransform>,
    pub calibration: CalibrationParams,
}

impl ScanSequence {
    pub fn new(
        frames: Vec<Frame>,
        poses: Vec<RigidTransform>,
        calibration: CalibrationParams,
    ) -> Result<Self> {
        if frames.len() != poses.len() {
            return Err(Error::InvalidParameter(format!(
                "{} frames but {} poses",
                frames.len(),
                poses.len()
            )));
        }
        if frames.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 frames, got {}",
                frames.len()
            )));
        }
        Ok(ScanSequence {
            frames,
            poses,
            calibration,
        })
    }

    /// World transform of a frame's image plane: `tTr · rTp`.
    pub fn world_from_image(&self, frame_index: usize) -> Result<RigidTransform> {
        let rtp = make_transform(&self.calibration.probe_from_image)?;
        Ok(compose(&self.poses[frame_index], &rtp))
    }

    /// World positions of the four corner-pixel centres of a frame.
    pub fn frame_corners(&self, frame_index: usize) -> Result<[Vector3<f64>; 4]> {
        let w2i = self.world_from_image(frame_index)?;
        let f = &self.frames[frame_index];
        let (sx, sy) = (self.calibration.sx, self.calibration.sy);
        let umax = (f.width - 1) as f64 * sx;
        let vmax = (f.height - 1) as f64 * sy;
        Ok([
            apply(&w2i, &Vector3::new(0.0, 0.0, 0.0)),
            apply(&w2i, &Vector3::new(umax, 0.0, 0.0)),
            apply(&w2i, &Vector3::new(0.0, vmax, 0.0)),
            apply(&w2i, &Vector3::new(umax, vmax, 0.0)),
        ])
    }
}

/// Axis choice for the voxel grid.
#[derive(Clone, Debug, Default)]
pub enum BoundsMode {
    /// World axes (identity rotation).
    #[default]
    WorldAxes,
    /// User-supplied rotation: grid axes are its columns.
    Manual(Matrix3<f64>),
    /// Principal components of the frame-corner cloud.
    Pca,
}

/// Compute the smallest voxel grid containing all repositioned frame
/// corners in the chosen axes. Each axis gets `floor(span/spacing) + 1`
/// voxel centres, centred on the corner bounding box, so the grid covers
/// the box rounded up to whole voxels; a degenerate (flat) axis still gets
/// one voxel.
pub fn compute_bounds(
    seq: &ScanSequence,
    mode: &BoundsMode,
    spacing: [f64; 3],
) -> Result<VoxelGrid> {
    if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "voxel spacing must be positive, got {spacing:?}"
        )));
    }
    let mut corners = Vec::with_capacity(seq.frames.len() * 4);
    for i in 0..seq.frames.len() {
        corners.extend(seq.frame_corners(i)?);
    }

    let axes = match mode {
        BoundsMode::WorldAxes => Matrix3::identity(),
        BoundsMode::Manual(r) => {
            RigidTransform::from_parts(*r, Vector3::zeros());
            let ortho = (r.transpose() * r - Matrix3::identity()).amax();
            if ortho > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidParameter(
                    "manual axes must form a rotation matrix (orthonormal, det +1)".into(),
                ));
            }
            *r
        }
        BoundsMode::Pca => principal_axes(&corners),
    };

    // Bounding box of the corners in the chosen basis.
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for c in &corners {
        let local = axes.transpose() * c;
        lo = lo.inf(&local);
        hi = hi.sup(&local);
    }

    let mut dims = [0usize; 3];
    let mut first_center = Vector3::zeros();
    for a in 0..3 {
        let span = hi[a] - lo[a];
        let n = (span / spacing[a] + 1e-9).floor() as usize + 1;
        dims[a] = n.max(1);
        // Centre the voxel-centre lattice on the span.
        let covered = (dims[a] - 1) as f64 * spacing[a];
        first_center[a] = lo[a] + (span - covered) / 2.0;
    }
    let origin = axes * first_center;
    Ok(VoxelGrid {
        dims,
        spacing,
        world_from_grid: RigidTransform::from_parts(axes, origin),
    })
}

/// Principal axes of a point cloud, ordered by descending variance, with a
/// deterministic sign convention and determinant +1.
fn principal_axes(points: &[Vector3<f64>]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let mean = points.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = nalgebra::SymmetricEigen::new(cov);
    // Sort eigenpairs by descending eigenvalue.
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut axes = Matrix3::zeros();
    for (col, &src) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(src).into_owned();
        // Deterministic sign: largest-magnitude component positive.
        let lead = v.iter().cloned().fold(0.0f64, |m, x| {
            if x.abs() > m.abs() {
                x
            } else {
                m
            }
        });
        if lead < 0.0 {
            v = -v;
        }
        axes.set_column(col, &v);
    }
    if axes.determinant() < 0.0 {
        let v = -axes.column(2).into_owned();
        axes.set_column(2, &v);
    }
    axes
}

/// Outcome of inserting one frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct InsertStats {
    pub inserted: usize,
    pub skipped: usize,
}

/// Insert one frame by pixel-nearest-neighbour: each pixel's world position
/// is `pose · rTp · (sx·u, sy·v, 0)`; the nearest voxel (round half away
/// from zero on grid coordinates) accumulates the pixel value. Out-of-bounds
/// pixels are skipped and counted.
pub fn insert_frame(
    va: &mut VoxelArray,
    frame: &Frame,
    pose: &RigidTransform,
    calib: &CalibrationParams,
) -> Result<InsertStats> {
    let rtp = make_transform(&calib.probe_from_image)?;
    let world_from_image = compose(pose, &rtp);
    let mut stats = InsertStats::default();
    insert_frame_inner(
        &va.grid,
        &mut va.values,
        &mut va.contributions,
        frame,
        &world_from_image,
        calib.sx,
        calib.sy,
        &mut stats,
    );
    Ok(stats)
}

#[allow(clippy::too_many_arguments)]
fn insert_frame_inner(
    grid: &VoxelGrid,
    sums: &mut [f64],
    counts: &mut [u32],
    frame: &Frame,
    world_from_image: &RigidTransform,
    sx: f64,
    sy: f64,
    stats: &mut InsertStats,
) {
    let rot = world_from_image.rotation();
    let tr = world_from_image.translation();
    let grot = grid.world_from_grid.rotation().transpose();
    let gorig = grid.origin();
    let dims = grid.dims;
    // Per-pixel steps in grid coordinates let the inner loop be additive.
    let col_u = grot * (rot.column(0) * sx);
    let col_v = grot * (rot.column(1) * sy);
    let base = grot * (tr - gorig);
    for v in 0..frame.height {
        let row_base = base + col_v * v as f64;
        for u in 0..frame.width {
            let g = row_base + col_u * u as f64;
            let gx = (g.x / grid.spacing[0]).round();
            let gy = (g.y / grid.spacing[1]).round();
            let gz = (g.z / grid.spacing[2]).round();
            if gx < 0.0
                || gy < 0.0
                || gz < 0.0
                || gx >= dims[0] as f64
                || gy >= dims[1] as f64
                || gz >= dims[2] as f64
            {
                stats.skipped += 1;
                continue;
            }
            let idx = gx as usize + dims[0] * (gy as usize + dims[1] * gz as usize);
            sums[idx] += frame.at(u, v) as f64;
            counts[idx] += 1;
            stats.inserted += 1;
        }
    }
}

/// Voxel spacing and axis mode for [`compound`].
#[derive(Clone, Debug, Default)]
pub struct CompoundConfig {
    /// Isotropic voxel spacing in mm; `None` uses `max(sx, sy)` of the
    /// calibrated image.
    pub spacing: Option<f64>,
    pub mode: BoundsMode,
}

/// Per-frame and total insertion statistics.
#[derive(Clone, Debug, Default)]
pub struct CompoundReport {
    pub per_frame: Vec<InsertStats>,
    pub inserted: usize,
    pub skipped: usize,
}

/// Compute bounds, insert every frame (in parallel, with per-thread
/// accumulators merged afterwards), and finalize to means.
pub fn compound(seq: &ScanSequence, cfg: &CompoundConfig) -> Result<(VoxelArray, CompoundReport)> {
    let s = cfg
        .spacing
        .unwrap_or_else(|| seq.calibration.sx.max(seq.calibration.sy));
    let grid = compute_bounds(seq, &cfg.mode, [s, s, s])?;
    compound_onto(seq, grid, &seq.calibration.clone())
}

/// Compound onto an existing grid with an explicit calibration (the
/// calibration refinement keeps the grid fixed while parameters move, so the
/// sequence's own calibration is overridden here).
pub fn compound_onto(
    seq: &ScanSequence,
    grid: VoxelGrid,
    calib: &CalibrationParams,
) -> Result<(VoxelArray, CompoundReport)> {
    let rtp = make_transform(&calib.probe_from_image)?;
    let n = grid.voxel_count();
    let (sx, sy) = (calib.sx, calib.sy);

    struct Acc {
        sums: Vec<f64>,
        counts: Vec<u32>,
        per_frame: Vec<(usize, InsertStats)>,
    }

    let merged = (0..seq.frames.len())
        .into_par_iter()
        .fold(
            || Acc {
                sums: vec![0.0; n],
                counts: vec![0; n],
                per_frame: Vec::new(),
            },
            |mut acc, i| {
                let world_from_image = compose(&seq.poses[i], &rtp);
                let mut stats = InsertStats::default();
                insert_frame_inner(
                    &grid,
                    &mut acc.sums,
                    &mut acc.counts,
                    &seq.frames[i],
                    &world_from_image,
                    sx,
                    sy,
                    &mut stats,
                );
                acc.per_frame.push((i, stats));
                acc
            },
        )
        .reduce(
            || Acc {
                sums: vec![0.0; n],
                counts: vec![0; n],
                per_frame: Vec::new(),
            },
            |mut a, b| {
                for (x, y) in a.sums.iter_mut().zip(&b.sums) {
                    *x += y;
                }
                for (x, y) in a.counts.iter_mut().zip(&b.counts) {
                    *x += y;
                }
                a.per_frame.extend(b.per_frame);
                a
            },
        );

    let mut per_frame = vec![InsertStats::default(); seq.frames.len()];
    for (i, s) in merged.per_frame {
        per_frame[i] = s;
    }
    let report = CompoundReport {
        inserted: per_frame.iter().map(|s| s.inserted).sum(),
        skipped: per_frame.iter().map(|s| s.skipped).sum(),
        per_frame,
    };
    let mut va = VoxelArray {
        grid,
        values: merged.sums,
        contributions: merged.counts,
        finalized: false,
    };
    va.finalize();
    Ok((va, report))
}
