//! Rigid-body transforms and the Euler convention used everywhere else.
//!
//! The rotation convention is intrinsic Z-Y-X: a [`Pose6`] with angles
//! `(alpha, beta, gamma)` produces `Rz(alpha) · Ry(beta) · Rx(gamma)`.
//! Every ingestion path must normalise to this convention — calibration
//! parameters expressed in any other convention are meaningless downstream.
//! Angles are radians, translations millimetres; degree conversion happens
//! only at CLI and file boundaries.

use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector3, Vector4};

use crate::error::{Error, Result};

/// Canonicalise an angle into `(-π, π]`.
pub fn canonical_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * std::f64::consts::PI);
    if r > std::f64::consts::PI {
        r - 2.0 * std::f64::consts::PI
    } else {
        r
    }
}

/// Six-parameter pose: translation (mm) and intrinsic Z-Y-X Euler angles
/// (radians, canonicalised to `(-π, π]`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose6 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Pose6 {
    pub fn new(x: f64, y: f64, z: f64, alpha: f64, beta: f64, gamma: f64) -> Self {
        Pose6 {
            x,
            y,
            z,
            alpha: canonical_angle(alpha),
            beta: canonical_angle(beta),
            gamma: canonical_angle(gamma),
        }
    }

    pub fn zero() -> Self {
        Pose6::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    }

    pub fn is_finite(&self) -> bool {
        [self.x, self.y, self.z, self.alpha, self.beta, self.gamma]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Rotation matrix for intrinsic Z-Y-X Euler angles: `Rz(alpha)·Ry(beta)·Rx(gamma)`.
pub fn rotation_zyx(alpha: f64, beta: f64, gamma: f64) -> Matrix3<f64> {
    let (sa, ca) = alpha.sin_cos();
    let (sb, cb) = beta.sin_cos();
    let (sg, cg) = gamma.sin_cos();
    Matrix3::new(
        ca * cb,
        ca * sb * sg - sa * cg,
        ca * sb * cg + sa * sg,
        sa * cb,
        sa * sb * sg + ca * cg,
        sa * sb * cg - ca * sg,
        -sb,
        cb * sg,
        cb * cg,
    )
}

/// Which Euler angle a partial derivative is taken with respect to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EulerAxis {
    Alpha,
    Beta,
    Gamma,
}

/// Partial derivative of [`rotation_zyx`] with respect to one angle.
pub fn rotation_zyx_partial(alpha: f64, beta: f64, gamma: f64, which: EulerAxis) -> Matrix3<f64> {
    let (sa, ca) = alpha.sin_cos();
    let (sb, cb) = beta.sin_cos();
    let (sg, cg) = gamma.sin_cos();
    let rz = Matrix3::new(ca, -sa, 0.0, sa, ca, 0.0, 0.0, 0.0, 1.0);
    let ry = Matrix3::new(cb, 0.0, sb, 0.0, 1.0, 0.0, -sb, 0.0, cb);
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cg, -sg, 0.0, sg, cg);
    match which {
        EulerAxis::Alpha => {
            let dz = Matrix3::new(-sa, -ca, 0.0, ca, -sa, 0.0, 0.0, 0.0, 0.0);
            dz * ry * rx
        }
        EulerAxis::Beta => {
            let dy = Matrix3::new(-sb, 0.0, cb, 0.0, 0.0, 0.0, -cb, 0.0, -sb);
            rz * dy * rx
        }
        EulerAxis::Gamma => {
            let dx = Matrix3::new(0.0, 0.0, 0.0, 0.0, -sg, -cg, 0.0, cg, -sg);
            rz * ry * dx
        }
    }
}

/// 4×4 homogeneous roto-translation. Rotation block orthonormal with
/// determinant +1, bottom row exactly `(0, 0, 0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    matrix: Matrix4<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            matrix: Matrix4::identity(),
        }
    }

    /// Assemble from a rotation block and a translation without further checks.
    pub fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
        RigidTransform { matrix: m }
    }

    /// Pure translation.
    pub fn translation_xyz(x: f64, y: f64, z: f64) -> Self {
        Self::from_parts(Matrix3::identity(), Vector3::new(x, y, z))
    }

    /// Validate a raw 4×4 matrix as a rigid transform (tolerance on
    /// orthonormality and the bottom row).
    pub fn try_from_matrix(m: Matrix4<f64>, tol: f64) -> Result<Self> {
        let t = RigidTransform { matrix: m };
        if !t.is_rigid(tol) {
            return Err(Error::InvalidParameter(
                "matrix is not a rigid transform (rotation block not orthonormal with det +1, or bottom row not (0,0,0,1))".into(),
            ));
        }
        Ok(t)
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.matrix
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.matrix.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.matrix.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Orthonormality / determinant / bottom-row check.
    pub fn is_rigid(&self, tol: f64) -> bool {
        let r = self.rotation();
        let ortho = (r.transpose() * r - Matrix3::identity()).amax();
        let det = r.determinant();
        let bottom = self.matrix.row(3);
        ortho <= tol
            && (det - 1.0).abs() <= tol
            && bottom[0] == 0.0
            && bottom[1] == 0.0
            && bottom[2] == 0.0
            && bottom[3] == 1.0
    }
}

/// Build the homogeneous transform for a pose: rotation `Rz·Ry·Rx`,
/// translation `(x, y, z)`.
pub fn make_transform(p: &Pose6) -> Result<RigidTransform> {
    if !p.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "pose contains non-finite components: {p:?}"
        )));
    }
    Ok(RigidTransform::from_parts(
        rotation_zyx(p.alpha, p.beta, p.gamma),
        Vector3::new(p.x, p.y, p.z),
    ))
}

/// Matrix product `a · b` (apply `b` first, then `a`).
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    let mut m = a.matrix * b.matrix;
    // Products of rigid transforms keep an exact bottom row; pin it so
    // rounding can never leak into the homogeneous coordinate.
    m.set_row(3, &nalgebra::RowVector4::new(0.0, 0.0, 0.0, 1.0));
    RigidTransform { matrix: m }
}

/// Closed-form rigid inverse: `(Rᵀ, -Rᵀ·t)`. No general matrix inversion.
pub fn invert(t: &RigidTransform) -> RigidTransform {
    let rt = t.rotation().transpose();
    let ti = -(rt * t.translation());
    RigidTransform::from_parts(rt, ti)
}

/// Apply the transform to a 3-point (homogeneous multiply, de-homogenise).
pub fn apply(t: &RigidTransform, pt: &Vector3<f64>) -> Vector3<f64> {
    let h = t.matrix * Vector4::new(pt.x, pt.y, pt.z, 1.0);
    Vector3::new(h.x, h.y, h.z)
}

/// Recover the pose of a transform (Euler extraction for the Z-Y-X
/// convention). At gimbal lock (`|cos beta| ≈ 0`) gamma is set to 0 and the
/// remaining freedom folded into alpha.
pub fn to_pose(t: &RigidTransform) -> Pose6 {
    let r = t.rotation();
    let tr = t.translation();
    let beta = (-r[(2, 0)]).asin();
    let cb = beta.cos();
    let (alpha, gamma) = if cb.abs() > 1e-12 {
        (r[(1, 0)].atan2(r[(0, 0)]), r[(2, 1)].atan2(r[(2, 2)]))
    } else {
        ((-r[(0, 1)]).atan2(r[(1, 1)]), 0.0)
    };
    Pose6::new(tr.x, tr.y, tr.z, alpha, beta, gamma)
}

/// How to evaluate a pose stream between samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum InterpMode {
    /// Spherical-linear on rotation, linear on translation.
    #[default]
    Slerp,
    /// Take the sample whose timestamp is closest.
    Nearest,
}

/// Time-stamped pose stream with interpolation, used to attach a pose to
/// every frame when the frame rate and the pose rate differ.
#[derive(Clone, Debug)]
pub struct PoseTrack {
    times: Vec<f64>,
    transforms: Vec<RigidTransform>,
}

impl PoseTrack {
    /// Build from `(time, pose)` samples; times must be finite and strictly
    /// increasing.
    pub fn new(samples: &[(f64, Pose6)]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidParameter("empty pose track".into()));
        }
        let mut times = Vec::with_capacity(samples.len());
        let mut transforms = Vec::with_capacity(samples.len());
        for (i, (t, p)) in samples.iter().enumerate() {
            if !t.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "pose sample {i}: non-finite timestamp"
                )));
            }
            if let Some(prev) = times.last() {
                if t <= prev {
                    return Err(Error::InvalidParameter(format!(
                        "pose sample {i}: timestamps not strictly increasing ({t} after {prev})"
                    )));
                }
            }
            times.push(*t);
            transforms.push(make_transform(p)?);
        }
        Ok(PoseTrack { times, transforms })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn start_time(&self) -> f64 {
        self.times[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Pose at time `t`, clamped to the track's span.
    pub fn sample(&self, t: f64, mode: InterpMode) -> RigidTransform {
        if t <= self.times[0] {
            return self.transforms[0];
        }
        if t >= self.end_time() {
            return *self.transforms.last().unwrap();
        }
        let hi = self.times.partition_point(|&x| x < t);
        let lo = hi - 1;
        match mode {
            InterpMode::Nearest => {
                if t - self.times[lo] <= self.times[hi] - t {
                    self.transforms[lo]
                } else {
                    self.transforms[hi]
                }
            }
            InterpMode::Slerp => {
                let w = (t - self.times[lo]) / (self.times[hi] - self.times[lo]);
                interpolate(&self.transforms[lo], &self.transforms[hi], w)
            }
        }
    }
}

/// Interpolate between two rigid transforms: slerp on rotation, lerp on
/// translation, `w` in `[0, 1]`.
pub fn interpolate(a: &RigidTransform, b: &RigidTransform, w: f64) -> RigidTransform {
    let qa = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(a.rotation()));
    let qb = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(b.rotation()));
    let q = qa.slerp(&qb, w);
    let t = a.translation() * (1.0 - w) + b.translation() * w;
    RigidTransform::from_parts(q.to_rotation_matrix().into_inner(), t)
}
