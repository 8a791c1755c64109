//! Synthetic phantom generator.
//!
//! Renders B-scan sequences by sampling an analytic phantom along each posed
//! image plane with a known (injected) calibration, publishes the pose
//! stream with a known injected delay, and rasterises the same phantom onto
//! voxel grids. Every stage of the pipeline can be checked against these
//! desk-scale ground truths without ultrasound or mocap hardware.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::calibration::{CalibObservation, CalibrationParams};
use crate::compounding::{VoxelArray, VoxelGrid};
use crate::error::{Error, Result};
use crate::geometry::{apply, compose, make_transform, to_pose, Pose6, RigidTransform};
use crate::imaging::Frame;

/// Analytic phantom evaluated at world positions (mm), intensities 0..255.
#[derive(Clone, Debug)]
pub enum PhantomShape {
    /// The floor of a water tank: the plane `z = 0` of the phantom frame
    /// shows as a bright line with a Gaussian depth profile.
    Plane {
        line_sigma_mm: f64,
        brightness: f64,
        background: f64,
    },
    /// Sphere with a linear intensity ramp of half-width `edge_mm` at the
    /// boundary (a hard edge aliases under voxel averaging).
    Sphere {
        center: [f64; 3],
        radius_mm: f64,
        inside: f64,
        outside: f64,
        edge_mm: f64,
    },
    /// 3D checkerboard, useful for registration objectives.
    Checker { period_mm: f64, high: f64, low: f64 },
}

impl PhantomShape {
    /// Intensity at a world point, given the phantom-frame pose (used only
    /// by the plane shape).
    pub fn value(&self, world: &Vector3<f64>, phantom_from_world: &RigidTransform) -> f64 {
        match self {
            PhantomShape::Plane {
                line_sigma_mm,
                brightness,
                background,
            } => {
                let s = apply(phantom_from_world, world).z;
                background + (brightness - background) * (-0.5 * (s / line_sigma_mm).powi(2)).exp()
            }
            PhantomShape::Sphere {
                center,
                radius_mm,
                inside,
                outside,
                edge_mm,
            } => {
                let r = (world - Vector3::new(center[0], center[1], center[2])).norm();
                if r <= radius_mm - edge_mm {
                    *inside
                } else if r >= radius_mm + edge_mm {
                    *outside
                } else {
                    let w = (radius_mm + edge_mm - r) / (2.0 * edge_mm);
                    outside + (inside - outside) * w
                }
            }
            PhantomShape::Checker { period_mm, high, low } => {
                let parity = (world.x / period_mm).floor() as i64
                    + (world.y / period_mm).floor() as i64
                    + (world.z / period_mm).floor() as i64;
                if parity.rem_euclid(2) == 0 {
                    *high
                } else {
                    *low
                }
            }
        }
    }
}

/// Everything needed to synthesise one sweep.
#[derive(Clone, Debug)]
pub struct PhantomSpec {
    pub shape: PhantomShape,
    pub width: usize,
    pub height: usize,
    /// Gaussian intensity noise (levels).
    pub noise_sigma: f64,
    pub seed: u64,
    /// True probe motion, sampled at `frame_rate`.
    pub trajectory: Vec<Pose6>,
    pub frame_rate: f64,
    /// Injected ground-truth calibration (including the phantom pose cTt).
    pub calibration: CalibrationParams,
    /// Injected delay: the frame stream lags the pose stream by this many
    /// samples (negative = frames lead).
    pub delay_samples: i32,
}

/// A synthesised dataset: frames and the pose stream a capture setup would
/// record, plus the ground truth that produced them.
#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub frames: Vec<Frame>,
    /// Published pose stream `(t, tTr pose)`, one sample per frame.
    pub pose_samples: Vec<(f64, Pose6)>,
    pub truth: CalibrationParams,
    pub frame_rate: f64,
    pub delay_samples: i32,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Render one B-scan at probe pose `tTr` using the injected calibration.
pub fn render_frame(
    shape: &PhantomShape,
    calib: &CalibrationParams,
    tracker_from_probe: &RigidTransform,
    width: usize,
    height: usize,
    noise_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Frame> {
    let rtp = calib.probe_from_image_transform()?;
    let ctt = calib.phantom_from_world_transform()?;
    let world_from_image = compose(tracker_from_probe, &rtp);
    let mut pixels = vec![0u8; width * height];
    for v in 0..height {
        for u in 0..width {
            let p = Vector3::new(calib.sx * u as f64, calib.sy * v as f64, 0.0);
            let w = apply(&world_from_image, &p);
            let mut i = shape.value(&w, &ctt);
            if noise_sigma > 0.0 {
                i += noise_sigma * gaussian(rng);
            }
            pixels[v * width + u] = i.round().clamp(0.0, 255.0) as u8;
        }
    }
    Frame::new(width, height, pixels, calib.sx, calib.sy)
}

/// Synthesise a sweep with the injected delay: both emitted streams have
/// `trajectory.len() - |delay|` samples, shifted against each other by exactly
/// `delay_samples` with no end-clamping.
pub fn synth_phantom(spec: &PhantomSpec) -> Result<SynthDataset> {
    let d = spec.delay_samples;
    let l = spec.trajectory.len();
    if l < 2 {
        return Err(Error::InvalidParameter(
            "trajectory needs at least 2 poses".into(),
        ));
    }
    if d.unsigned_abs() as usize >= l {
        return Err(Error::InvalidParameter(format!(
            "delay of {d} samples exceeds the {l}-pose trajectory"
        )));
    }
    let n = l - d.unsigned_abs() as usize;
    let (frame_base, pose_base) = if d >= 0 {
        (0usize, d as usize)
    } else {
        ((-d) as usize, 0usize)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut frames = Vec::with_capacity(n);
    for i in 0..n {
        let ttr = make_transform(&spec.trajectory[frame_base + i])?;
        frames.push(render_frame(
            &spec.shape,
            &spec.calibration,
            &ttr,
            spec.width,
            spec.height,
            spec.noise_sigma,
            &mut rng,
        )?);
    }
    let pose_samples: Vec<(f64, Pose6)> = (0..n)
        .map(|j| (j as f64 / spec.frame_rate, spec.trajectory[pose_base + j]))
        .collect();
    Ok(SynthDataset {
        frames,
        pose_samples,
        truth: spec.calibration.clone(),
        frame_rate: spec.frame_rate,
        delay_samples: d,
    })
}

/// Rasterise the phantom onto a grid (analytic value at every voxel centre).
pub fn rasterize_truth(
    shape: &PhantomShape,
    calib: &CalibrationParams,
    grid: &VoxelGrid,
) -> Result<VoxelArray> {
    let ctt = calib.phantom_from_world_transform()?;
    let mut va = VoxelArray::empty(grid.clone());
    let dims = grid.dims;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let idx = x + dims[0] * (y + dims[1] * z);
                va.values[idx] = shape.value(&grid.voxel_center(x, y, z), &ctt);
                va.contributions[idx] = 1;
            }
        }
    }
    va.finalize();
    Ok(va)
}

/// The canonical downward-looking probe orientation: image u → world x,
/// image v → world z (deeper), plane normal → world -y.
pub fn probe_base_orientation() -> Matrix3<f64> {
    Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0)
}

/// Pose with translation `(x, y, z)` and rotation `base · Rzyx(da, db, dg)`.
pub fn posed(
    x: f64,
    y: f64,
    z: f64,
    base: &Matrix3<f64>,
    delta: (f64, f64, f64),
) -> Pose6 {
    let r = base * crate::geometry::rotation_zyx(delta.0, delta.1, delta.2);
    to_pose(&RigidTransform::from_parts(r, Vector3::new(x, y, z)))
}

/// Vertical up-down maneuver for the temporal calibration: the probe keeps
/// the canonical orientation while its height oscillates.
pub fn updown_trajectory(
    n: usize,
    rate: f64,
    z_mid: f64,
    amplitude_mm: f64,
    freq_hz: f64,
) -> Vec<Pose6> {
    let base = probe_base_orientation();
    (0..n)
        .map(|i| {
            let t = i as f64 / rate;
            let z = z_mid + amplitude_mm * (std::f64::consts::TAU * freq_hz * t).sin();
            posed(0.0, 0.0, z, &base, (0.0, 0.0, 0.0))
        })
        .collect()
}

/// Calibration motion over the plane: slides along every axis plus tilts
/// about both image axes and a spin about the plane normal, superimposed
/// smoothly so consecutive B-scans stay valid.
pub fn calibration_trajectory(n: usize) -> Vec<Pose6> {
    let base = probe_base_orientation();
    (0..n)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            let phase = t * std::f64::consts::TAU;
            posed(
                14.0 * phase.sin(),
                9.0 * (2.0 * phase).cos(),
                24.0 + 7.0 * phase.cos(),
                &base,
                (
                    0.30 * (3.0 * phase).sin(),
                    0.22 * (2.0 * phase + 0.8).sin(),
                    0.18 * (1.5 * phase).cos(),
                ),
            )
        })
        .collect()
}

/// Straight sweep: translation from `start` by `i·step`, fixed orientation.
pub fn sweep_trajectory(
    n: usize,
    start: [f64; 3],
    step: [f64; 3],
    orientation: &Matrix3<f64>,
) -> Vec<Pose6> {
    (0..n)
        .map(|i| {
            posed(
                start[0] + step[0] * i as f64,
                start[1] + step[1] * i as f64,
                start[2] + step[2] * i as f64,
                orientation,
                (0.0, 0.0, 0.0),
            )
        })
        .collect()
}

/// Exact pixels on the phantom-plane line for one pose: solves
/// `row3(cTt·tTr·rTp)·(sx·u, sy·v, 0, 1) = 0` for v at two chosen u.
/// `None` when the line misses the frame or runs parallel to v.
pub fn exact_line_pixels(
    truth: &CalibrationParams,
    tracker_from_probe: &RigidTransform,
    width: usize,
    height: usize,
) -> Result<Option<[[f64; 2]; 2]>> {
    let a = truth.phantom_from_world_transform()?;
    let c = truth.probe_from_image_transform()?;
    let m = a.matrix() * tracker_from_probe.matrix() * c.matrix();
    let cu = m[(2, 0)] * truth.sx;
    let cv = m[(2, 1)] * truth.sy;
    let c0 = m[(2, 3)];
    if cv.abs() < 1e-9 {
        return Ok(None);
    }
    let mut pixels = [[0.0; 2]; 2];
    for (slot, u) in [(0, 0.2 * width as f64), (1, 0.8 * width as f64)] {
        let v = -(c0 + cu * u) / cv;
        if !(0.0..=(height as f64 - 1.0)).contains(&v) {
            return Ok(None);
        }
        pixels[slot] = [u, v];
    }
    Ok(Some(pixels))
}

/// Exact plane observations for a pose list (poses whose line misses the
/// frame are dropped).
pub fn plane_observations(
    truth: &CalibrationParams,
    poses: &[Pose6],
    width: usize,
    height: usize,
) -> Result<Vec<CalibObservation>> {
    let mut out = Vec::new();
    for (i, pose) in poses.iter().enumerate() {
        let ttr = make_transform(pose)?;
        if let Some(pixels) = exact_line_pixels(truth, &ttr, width, height)? {
            out.push(CalibObservation {
                frame_index: i,
                tracker_from_probe: ttr,
                pixels,
            });
        }
    }
    Ok(out)
}

/// A plausible ground-truth calibration for synthetic datasets: the phantom
/// plane sits at world z = `plane_z`, the image-to-probe offset is nonzero
/// in every component.
pub fn default_truth(sx: f64, sy: f64, plane_z: f64) -> CalibrationParams {
    CalibrationParams::new(
        sx,
        sy,
        Pose6::new(8.0, -4.0, 2.5, 0.06, -0.11, 0.09),
        Pose6::new(0.0, 0.0, -plane_z, 0.0, 0.04, -0.03),
    )
}
