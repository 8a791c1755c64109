//! Versioned plain-text calibration files (key = value, units mm / radians),
//! the covariance CSV, and the small delay file written by the temporal
//! calibration.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::calibration::{CalibrationParams, PARAM_NAMES};
use crate::error::{Error, Result};
use crate::geometry::Pose6;
use crate::signal::DelayEstimate;

const CALIB_VERSION: u32 = 1;

/// Persist a calibration (all 14 parameters plus the fixed mask).
pub fn write_calibration(path: &Path, params: &CalibrationParams) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let v = params.to_vector();
    writeln!(f, "# probe calibration (units: mm, radians)").map_err(|e| Error::io(path, e))?;
    writeln!(f, "version = {CALIB_VERSION}").map_err(|e| Error::io(path, e))?;
    for (i, name) in PARAM_NAMES.iter().enumerate() {
        writeln!(f, "{name} = {}", v[i]).map_err(|e| Error::io(path, e))?;
    }
    let fixed: Vec<&str> = (0..14)
        .filter(|&i| params.fixed[i])
        .map(|i| PARAM_NAMES[i])
        .collect();
    writeln!(f, "fixed = {}", fixed.join(",")).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read a calibration file written by [`write_calibration`].
pub fn read_calibration(path: &Path) -> Result<CalibrationParams> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut values = [f64::NAN; 14];
    let mut seen = [false; 14];
    let mut version: Option<u32> = None;
    let mut fixed_names: Option<Vec<String>> = None;
    for (ln0, line) in BufReader::new(file).lines().enumerate() {
        let ln = ln0 + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body.split_once('=').ok_or_else(|| {
            Error::parse(path, ln, format!("expected `key = value`, got `{body}`"))
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key == "version" {
            let v: u32 = value
                .parse()
                .map_err(|_| Error::parse(path, ln, "invalid version"))?;
            if v != CALIB_VERSION {
                return Err(Error::unsupported(
                    path,
                    format!("calibration file version {v}; this build reads version {CALIB_VERSION}"),
                ));
            }
            version = Some(v);
        } else if key == "fixed" {
            fixed_names = Some(value.split(',').map(|s| s.trim().to_string()).collect());
        } else if let Some(idx) = PARAM_NAMES.iter().position(|&n| n == key) {
            values[idx] = value
                .parse()
                .map_err(|_| Error::parse(path, ln, format!("`{value}` is not a number")))?;
            seen[idx] = true;
        } else {
            return Err(Error::parse(path, ln, format!("unknown key `{key}`")));
        }
    }
    if version.is_none() {
        return Err(Error::file(path, "missing `version` line"));
    }
    if let Some(missing) = (0..14).find(|&i| !seen[i]) {
        return Err(Error::file(
            path,
            format!("missing parameter `{}`", PARAM_NAMES[missing]),
        ));
    }
    let mut fixed = [false; 14];
    match fixed_names {
        Some(names) => {
            for name in names {
                let idx = PARAM_NAMES
                    .iter()
                    .position(|&n| n == name)
                    .ok_or_else(|| Error::file(path, format!("unknown fixed parameter `{name}`")))?;
                fixed[idx] = true;
            }
        }
        None => {
            for i in crate::calibration::PLANE_UNIDENTIFIABLE {
                fixed[i] = true;
            }
        }
    }
    let mut params = CalibrationParams::from_vector(&values, fixed);
    // Canonicalise the angles at the file boundary.
    params.probe_from_image = Pose6::new(
        params.probe_from_image.x,
        params.probe_from_image.y,
        params.probe_from_image.z,
        params.probe_from_image.alpha,
        params.probe_from_image.beta,
        params.probe_from_image.gamma,
    );
    params.phantom_from_world = Pose6::new(
        params.phantom_from_world.x,
        params.phantom_from_world.y,
        params.phantom_from_world.z,
        params.phantom_from_world.alpha,
        params.phantom_from_world.beta,
        params.phantom_from_world.gamma,
    );
    Ok(params)
}

/// Covariance of the free parameters as CSV with a name header column/row.
pub fn write_covariance_csv(
    path: &Path,
    covariance: &DMatrix<f64>,
    names: &[&'static str],
) -> Result<()> {
    if covariance.nrows() != names.len() || covariance.ncols() != names.len() {
        return Err(Error::InvalidParameter(format!(
            "covariance is {}×{} but {} names given",
            covariance.nrows(),
            covariance.ncols(),
            names.len()
        )));
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(f, "param,{}", names.join(",")).map_err(|e| Error::io(path, e))?;
    for (i, name) in names.iter().enumerate() {
        let row: Vec<String> = (0..names.len())
            .map(|j| format!("{}", covariance[(i, j)]))
            .collect();
        writeln!(f, "{name},{}", row.join(",")).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Persist a delay estimate.
pub fn write_delay(path: &Path, estimate: &DelayEstimate, rate: f64) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write!(
        f,
        "# temporal calibration\ndelay_s = {}\nlag_samples = {}\npeak_correlation = {}\nrate_hz = {}\n",
        estimate.delay, estimate.lag_samples, estimate.peak_correlation, rate
    )
    .map_err(|e| Error::io(path, e))
}

/// Read a delay file written by [`write_delay`]; returns (delay seconds,
/// lag samples, rate Hz).
pub fn read_delay(path: &Path) -> Result<(f64, i32, f64)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut delay = None;
    let mut lag = None;
    let mut rate = None;
    for (ln0, line) in BufReader::new(file).lines().enumerate() {
        let ln = ln0 + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body.split_once('=').ok_or_else(|| {
            Error::parse(path, ln, format!("expected `key = value`, got `{body}`"))
        })?;
        let value = value.trim();
        match key.trim() {
            "delay_s" => delay = value.parse().ok(),
            "lag_samples" => lag = value.parse().ok(),
            "rate_hz" => rate = value.parse().ok(),
            "peak_correlation" => {}
            other => return Err(Error::parse(path, ln, format!("unknown key `{other}`"))),
        }
    }
    match (delay, lag, rate) {
        (Some(d), Some(l), Some(r)) => Ok((d, l, r)),
        _ => Err(Error::file(path, "missing delay_s / lag_samples / rate_hz")),
    }
}
