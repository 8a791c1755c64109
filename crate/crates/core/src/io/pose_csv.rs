//! Pose CSV: `t,x,y,z,alpha,beta,gamma` with the angle units declared in a
//! header comment.
//!
//! ```text
//! # units: radians
//! t,x,y,z,alpha,beta,gamma
//! 0.000,12.0,-3.5,40.2,0.01,-0.02,0.00
//! ```
//!
//! Times are seconds and strictly increasing; translations are mm. The units
//! line is mandatory — pose streams exported by capture software disagree on
//! angle units, and guessing silently corrupts every calibration downstream.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Pose6;

/// Angle units declared by a pose file header.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AngleUnits {
    Radians,
    Degrees,
}

const HEADER: &str = "t,x,y,z,alpha,beta,gamma";

/// Read a pose CSV; angles are converted to radians on ingestion.
pub fn read_pose_csv(path: &Path) -> Result<Vec<(f64, Pose6)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut units: Option<AngleUnits> = None;
    let mut header_seen = false;
    let mut out: Vec<(f64, Pose6)> = Vec::new();
    for (ln0, line) in BufReader::new(file).lines().enumerate() {
        let ln = ln0 + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(u) = comment.strip_prefix("units:") {
                units = Some(match u.trim() {
                    "radians" => AngleUnits::Radians,
                    "degrees" => AngleUnits::Degrees,
                    other => {
                        return Err(Error::parse(
                            path,
                            ln,
                            format!("unknown angle units `{other}` (radians|degrees)"),
                        ))
                    }
                });
            }
            continue;
        }
        if !header_seen {
            if trimmed != HEADER {
                return Err(Error::parse(
                    path,
                    ln,
                    format!("expected header `{HEADER}`, got `{trimmed}`"),
                ));
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if fields.len() != 7 {
            return Err(Error::parse(
                path,
                ln,
                format!("expected 7 fields, got {}", fields.len()),
            ));
        }
        let mut values = [0.0f64; 7];
        for (i, f) in fields.iter().enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::parse(path, ln, format!("`{f}` is not a number")))?;
            if !v.is_finite() {
                return Err(Error::parse(path, ln, format!("non-finite value `{f}`")));
            }
            values[i] = v;
        }
        let t = values[0];
        if let Some((prev, _)) = out.last() {
            if t <= *prev {
                return Err(Error::parse(
                    path,
                    ln,
                    format!("timestamps must be strictly increasing ({t} after {prev})"),
                ));
            }
        }
        let scale = match units {
            Some(AngleUnits::Radians) => 1.0,
            Some(AngleUnits::Degrees) => std::f64::consts::PI / 180.0,
            None => {
                return Err(Error::parse(
                    path,
                    ln,
                    "missing `# units: radians|degrees` declaration before the data",
                ))
            }
        };
        out.push((
            t,
            Pose6::new(
                values[1],
                values[2],
                values[3],
                values[4] * scale,
                values[5] * scale,
                values[6] * scale,
            ),
        ));
    }
    if out.is_empty() {
        return Err(Error::file(path, "no pose rows found"));
    }
    Ok(out)
}

/// Write a pose CSV in the declared units.
pub fn write_pose_csv(path: &Path, samples: &[(f64, Pose6)], units: AngleUnits) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let unit_name = match units {
        AngleUnits::Radians => "radians",
        AngleUnits::Degrees => "degrees",
    };
    writeln!(f, "# units: {unit_name}").map_err(|e| Error::io(path, e))?;
    writeln!(f, "{HEADER}").map_err(|e| Error::io(path, e))?;
    let scale = match units {
        AngleUnits::Radians => 1.0,
        AngleUnits::Degrees => 180.0 / std::f64::consts::PI,
    };
    for (t, p) in samples {
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            t,
            p.x,
            p.y,
            p.z,
            p.alpha * scale,
            p.beta * scale,
            p.gamma * scale
        )
        .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
