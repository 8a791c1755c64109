//! Spatial calibration of the probe against a plane phantom.
//!
//! Scanning the flat floor of a water tank constrains every pixel that lies
//! on the visible edge line: its world position, re-expressed in the phantom
//! frame, must have zero out-of-plane coordinate. With two pixels per B-scan
//! this yields two equations per frame over the parameter vector
//! `(sx, sy, x1..gamma1, x2..gamma2)`; eleven of the fourteen parameters are
//! identifiable and solved by Levenberg–Marquardt with an analytic Jacobian.
//!
//! The out-of-plane residual for pixel `(u, v)` is the third component of
//!
//! ```text
//! Pc = cTt · tTr · rTp · (sx·u, sy·v, 0, 1)ᵀ
//! ```
//!
//! where `rTp` (image → probe) carries `(x1, y1, z1, alpha1, beta1, gamma1)`,
//! `tTr` (probe → tracker) is measured per frame, and `cTt` (tracker →
//! phantom) carries `(x2, y2, z2, alpha2, beta2, gamma2)`.
//!
//! The third row of `cTt` is `(-sin β2, cos β2 sin γ2, cos β2 cos γ2, z2)`:
//! it does not involve `alpha2`, `x2` or `y2` at all, which is exactly the
//! gauge freedom of a plane (slide along it, spin about its normal). Those
//! three parameters are therefore the fixed ones, leaving 11 unknowns.

mod lm;
mod refine;

pub use lm::{solve_lm, LmConfig, SolveReport};
pub use refine::{refine_by_compounding, RefineConfig, RefineOutcome};

pub use crate::quality::{distance_accuracy, point_accuracy, reconstruction_precision};

use nalgebra::{DMatrix, Matrix4, RowVector4, Vector4};

use crate::error::{Error, Result};
use crate::geometry::{
    make_transform, rotation_zyx_partial, EulerAxis, Pose6, RigidTransform,
};

/// Names of the 14 calibration parameters in vector order.
pub const PARAM_NAMES: [&str; 14] = [
    "sx", "sy", "x1", "y1", "z1", "alpha1", "beta1", "gamma1", "x2", "y2", "z2", "alpha2",
    "beta2", "gamma2",
];

/// Vector indices of the parameters the plane phantom cannot identify.
pub const PLANE_UNIDENTIFIABLE: [usize; 3] = [8, 9, 11]; // x2, y2, alpha2

/// The full 14-symbol calibration parameter set with a per-field fixed mask.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationParams {
    /// mm per pixel along image u.
    pub sx: f64,
    /// mm per pixel along image v.
    pub sy: f64,
    /// rTp: image frame → probe frame (x1, y1, z1, alpha1, beta1, gamma1).
    pub probe_from_image: Pose6,
    /// cTt: tracker/world frame → phantom frame (x2 .. gamma2).
    pub phantom_from_world: Pose6,
    /// Per-parameter fixed mask in [`PARAM_NAMES`] order; fixed parameters
    /// keep their value during solving.
    pub fixed: [bool; 14],
}

impl CalibrationParams {
    /// Build with the plane-phantom default mask (x2, y2, alpha2 fixed).
    pub fn new(sx: f64, sy: f64, probe_from_image: Pose6, phantom_from_world: Pose6) -> Self {
        let mut fixed = [false; 14];
        for i in PLANE_UNIDENTIFIABLE {
            fixed[i] = true;
        }
        CalibrationParams {
            sx,
            sy,
            probe_from_image,
            phantom_from_world,
            fixed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sx > 0.0 && self.sy > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "pixel scales must be positive (sx={}, sy={})",
                self.sx, self.sy
            )));
        }
        if !self.probe_from_image.is_finite() || !self.phantom_from_world.is_finite() {
            return Err(Error::InvalidParameter(
                "calibration poses contain non-finite values".into(),
            ));
        }
        let n_fixed = self.fixed.iter().filter(|&&f| f).count();
        if n_fixed != 3 {
            return Err(Error::InvalidParameter(format!(
                "plane-phantom calibration needs exactly 3 fixed parameters (11 free), got {n_fixed} fixed"
            )));
        }
        Ok(())
    }

    pub fn to_vector(&self) -> [f64; 14] {
        let p = &self.probe_from_image;
        let q = &self.phantom_from_world;
        [
            self.sx, self.sy, p.x, p.y, p.z, p.alpha, p.beta, p.gamma, q.x, q.y, q.z, q.alpha,
            q.beta, q.gamma,
        ]
    }

    /// Rebuild from a raw vector (angles kept as-is, not canonicalised, so a
    /// solver can do exact vector arithmetic).
    pub fn from_vector(v: &[f64; 14], fixed: [bool; 14]) -> Self {
        CalibrationParams {
            sx: v[0],
            sy: v[1],
            probe_from_image: Pose6 {
                x: v[2],
                y: v[3],
                z: v[4],
                alpha: v[5],
                beta: v[6],
                gamma: v[7],
            },
            phantom_from_world: Pose6 {
                x: v[8],
                y: v[9],
                z: v[10],
                alpha: v[11],
                beta: v[12],
                gamma: v[13],
            },
            fixed,
        }
    }

    pub fn free_indices(&self) -> Vec<usize> {
        (0..14).filter(|&i| !self.fixed[i]).collect()
    }

    pub fn free_names(&self) -> Vec<&'static str> {
        self.free_indices().iter().map(|&i| PARAM_NAMES[i]).collect()
    }

    /// rTp as a transform.
    pub fn probe_from_image_transform(&self) -> Result<RigidTransform> {
        make_transform(&self.probe_from_image)
    }

    /// cTt as a transform.
    pub fn phantom_from_world_transform(&self) -> Result<RigidTransform> {
        make_transform(&self.phantom_from_world)
    }
}

/// One calibrated B-scan: the tracked probe pose and two pixels on the
/// detected edge line.
#[derive(Clone, Debug)]
pub struct CalibObservation {
    pub frame_index: usize,
    /// tTr, the mocap-measured probe pose (probe → tracker frame).
    pub tracker_from_probe: RigidTransform,
    /// Two distinct `(u, v)` pixels on the line.
    pub pixels: [[f64; 2]; 2],
}

impl CalibObservation {
    pub fn validate(&self) -> Result<()> {
        if self.pixels[0] == self.pixels[1] {
            return Err(Error::InvalidParameter(format!(
                "observation {}: the two line pixels must be distinct",
                self.frame_index
            )));
        }
        Ok(())
    }
}

fn pixel_vector(params: &CalibrationParams, pixel: [f64; 2]) -> Vector4<f64> {
    Vector4::new(params.sx * pixel[0], params.sy * pixel[1], 0.0, 1.0)
}

/// Out-of-plane residuals in mm, one per pixel (two per observation).
pub fn residuals(params: &CalibrationParams, observations: &[CalibObservation]) -> Result<Vec<f64>> {
    let a = params.phantom_from_world_transform()?;
    let c = params.probe_from_image_transform()?;
    let mut out = Vec::with_capacity(observations.len() * 2);
    for obs in observations {
        let m = a.matrix() * obs.tracker_from_probe.matrix() * c.matrix();
        for pixel in obs.pixels {
            let p = pixel_vector(params, pixel);
            out.push(m.row(2).dot(&p.transpose()));
        }
    }
    Ok(out)
}

/// Embed a 3×3 rotation derivative as a homogeneous matrix with zero
/// translation column and zero bottom row.
fn embed_rotation_derivative(d: nalgebra::Matrix3<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&d);
    m
}

/// Analytic Jacobian of [`residuals`] with respect to the free parameters,
/// columns in ascending free-index order.
pub fn jacobian(
    params: &CalibrationParams,
    observations: &[CalibObservation],
) -> Result<DMatrix<f64>> {
    let free = params.free_indices();
    let a = params.phantom_from_world_transform()?;
    let c = params.probe_from_image_transform()?;
    let p1 = &params.probe_from_image;
    let p2 = &params.phantom_from_world;

    // Rotation derivatives for rTp (used through AB · dC · p) and cTt
    // (used through row3(dA) · BCp).
    let d_rtp: [Matrix4<f64>; 3] = [
        embed_rotation_derivative(rotation_zyx_partial(p1.alpha, p1.beta, p1.gamma, EulerAxis::Alpha)),
        embed_rotation_derivative(rotation_zyx_partial(p1.alpha, p1.beta, p1.gamma, EulerAxis::Beta)),
        embed_rotation_derivative(rotation_zyx_partial(p1.alpha, p1.beta, p1.gamma, EulerAxis::Gamma)),
    ];
    let d_ctt_row3: [RowVector4<f64>; 3] = [
        embed_rotation_derivative(rotation_zyx_partial(p2.alpha, p2.beta, p2.gamma, EulerAxis::Alpha)).row(2).into_owned(),
        embed_rotation_derivative(rotation_zyx_partial(p2.alpha, p2.beta, p2.gamma, EulerAxis::Beta)).row(2).into_owned(),
        embed_rotation_derivative(rotation_zyx_partial(p2.alpha, p2.beta, p2.gamma, EulerAxis::Gamma)).row(2).into_owned(),
    ];

    let m_rows = observations.len() * 2;
    let mut jac = DMatrix::zeros(m_rows, free.len());
    for (oi, obs) in observations.iter().enumerate() {
        let b = obs.tracker_from_probe.matrix();
        let ab = a.matrix() * b;
        let ab3 = ab.row(2).into_owned();
        let m = ab * c.matrix();
        let bc = b * c.matrix();
        for (pi, pixel) in obs.pixels.iter().enumerate() {
            let row = oi * 2 + pi;
            let p = pixel_vector(params, *pixel);
            let w = bc * p; // B·C·p, the world-side point seen by cTt
            for (col, &fi) in free.iter().enumerate() {
                jac[(row, col)] = match fi {
                    0 => m[(2, 0)] * pixel[0],          // sx
                    1 => m[(2, 1)] * pixel[1],          // sy
                    2 => ab3[0],                        // x1
                    3 => ab3[1],                        // y1
                    4 => ab3[2],                        // z1
                    5..=7 => (ab * d_rtp[fi - 5] * p)[2], // alpha1, beta1, gamma1
                    8 => 0.0,                           // x2: row 3 of d cTt/dx2 is zero
                    9 => 0.0,                           // y2
                    10 => w[3],                         // z2 (homogeneous 1)
                    11..=13 => d_ctt_row3[fi - 11].dot(&w.transpose()), // alpha2..gamma2
                    _ => unreachable!(),
                };
            }
        }
    }
    Ok(jac)
}
