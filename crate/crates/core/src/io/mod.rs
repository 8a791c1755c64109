//! Ingestion, persistence and export.
//!
//! - PGM (binary P5) frame sequences with a `frames.meta` sidecar
//! - pose CSV with declared angle units
//! - C3D marker files (Intel processor type)
//! - plain-text calibration files and covariance CSV
//! - VTI (XML ImageData, appended raw encoding) volume export
//! - the synthetic phantom generator that makes the pipeline testable
//!   end-to-end without hardware

mod c3d;
mod calib_file;
mod pgm;
mod pose_csv;
pub mod synth;
mod vti;

pub use c3d::{read_c3d_points, write_c3d_points, C3dStorage, MarkerTrack};
pub use calib_file::{read_calibration, write_calibration, write_covariance_csv, read_delay, write_delay};
pub use pgm::{read_frames, write_frames, FrameMeta};
pub use pose_csv::{read_pose_csv, write_pose_csv, AngleUnits};
pub use vti::{read_vti, write_vti, write_vti_with_mask, VtiVolume};
