//! Freehand-ultrasound volume reconstruction.
//!
//! Reconstructs a 3D voxel volume from a sequence of 2D B-scans and
//! synchronized probe poses, including the calibrations that make the
//! placement meaningful:
//!
//! 1. **Temporal calibration** ([`signal`]) — delay between the pose stream
//!    and the frame stream, from cross-correlating the probe height with the
//!    detected edge-line depth during an up-down maneuver.
//! 2. **Spatial calibration** ([`calibration`]) — the image→probe transform
//!    and pixel scales, solved against a plane phantom by Levenberg–Marquardt
//!    and optionally refined by compounding two crossed sweeps.
//! 3. **Compounding** ([`compounding`]) — minimal voxel bounds (world, manual
//!    or PCA axes) and pixel-nearest-neighbour accumulation with averaging.
//! 4. **Gap filling** ([`gapfill`]) — convex-hull masking between consecutive
//!    slices, then VNN or average-cube interpolation, optionally block-wise.
//! 5. **I/O** ([`io`]) — PGM frame sequences, pose CSV, C3D marker files,
//!    calibration files, VTI volume export, and the synthetic phantom
//!    generator used throughout the test suite.

pub mod calibration;
pub mod compounding;
pub mod error;
pub mod gapfill;
pub mod geometry;
pub mod imaging;
pub mod io;
pub mod quality;
pub mod signal;

pub use error::{Error, Result};
