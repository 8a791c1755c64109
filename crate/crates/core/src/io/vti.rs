//! VTI export: VTK XML ImageData with appended raw binary.
//!
//! The layout is fixed byte-for-byte for a given volume: an XML prologue
//! describing extent, origin, spacing and grid direction, one 8-bit unsigned
//! point-scalar array in `appended` format, and the `AppendedData` section
//! holding an underscore, a little-endian `u32` byte count and the raw
//! values (x fastest, then y, then z). Values are the voxel means rounded
//! half away from zero and clamped to 0..255. Readers like ParaView and
//! MeVisLab open these files directly.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};

use crate::compounding::VoxelArray;
use crate::error::{Error, Result};
use crate::gapfill::HullMask;

/// A volume read back from a VTI file written by this module.
#[derive(Clone, Debug)]
pub struct VtiVolume {
    pub dims: [usize; 3],
    pub origin: [f64; 3],
    pub spacing: [f64; 3],
    /// Row-major 3×3 grid direction matrix.
    pub direction: [f64; 9],
    pub data: Vec<u8>,
}

fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn vti_bytes(
    dims: [usize; 3],
    origin: &Vector3<f64>,
    spacing: [f64; 3],
    direction: &Matrix3<f64>,
    name: &str,
    payload: &[u8],
) -> Vec<u8> {
    let extent = format!(
        "0 {} 0 {} 0 {}",
        dims[0].saturating_sub(1),
        dims[1].saturating_sub(1),
        dims[2].saturating_sub(1)
    );
    let dir: Vec<String> = (0..3)
        .flat_map(|r| (0..3).map(move |c| format!("{}", direction[(r, c)])))
        .collect();
    let mut out = Vec::with_capacity(payload.len() + 1024);
    out.extend_from_slice(b"<?xml version=\"1.0\"?>\n");
    out.extend_from_slice(
        b"<VTKFile type=\"ImageData\" version=\"1.0\" byte_order=\"LittleEndian\" header_type=\"UInt32\">\n",
    );
    out.extend_from_slice(
        format!(
            "  <ImageData WholeExtent=\"{extent}\" Origin=\"{} {} {}\" Spacing=\"{} {} {}\" Direction=\"{}\">\n",
            origin.x,
            origin.y,
            origin.z,
            spacing[0],
            spacing[1],
            spacing[2],
            dir.join(" ")
        )
        .as_bytes(),
    );
    out.extend_from_slice(format!("    <Piece Extent=\"{extent}\">\n").as_bytes());
    out.extend_from_slice(format!("      <PointData Scalars=\"{name}\">\n").as_bytes());
    out.extend_from_slice(
        format!(
            "        <DataArray type=\"UInt8\" Name=\"{name}\" format=\"appended\" offset=\"0\"/>\n"
        )
        .as_bytes(),
    );
    out.extend_from_slice(b"      </PointData>\n");
    out.extend_from_slice(b"      <CellData/>\n");
    out.extend_from_slice(b"    </Piece>\n");
    out.extend_from_slice(b"  </ImageData>\n");
    out.extend_from_slice(b"  <AppendedData encoding=\"raw\">\n   _");
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(b"\n  </AppendedData>\n</VTKFile>\n");
    out
}

/// Write a volume as VTI. Deterministic: identical volumes produce
/// byte-identical files.
pub fn write_vti(va: &VoxelArray, path: &Path) -> Result<()> {
    let payload: Vec<u8> = (0..va.values.len()).map(|i| quantize(va.mean_at(i))).collect();
    let bytes = vti_bytes(
        va.grid.dims,
        &va.grid.origin(),
        va.grid.spacing,
        &va.grid.world_from_grid.rotation(),
        "intensity",
        &payload,
    );
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Path of the mask file written next to a volume: `name_mask.vti`.
pub fn mask_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    let mut p = path.to_path_buf();
    p.set_file_name(format!("{stem}_mask.vti"));
    p
}

/// Write the volume and, alongside it, the hull mask (0/1 voxels) with the
/// `_mask` suffix.
pub fn write_vti_with_mask(va: &VoxelArray, path: &Path, mask: Option<&HullMask>) -> Result<()> {
    write_vti(va, path)?;
    if let Some(m) = mask {
        let payload: Vec<u8> = m.data.iter().map(|&b| b as u8).collect();
        let bytes = vti_bytes(
            va.grid.dims,
            &va.grid.origin(),
            va.grid.spacing,
            &va.grid.world_from_grid.rotation(),
            "mask",
            &payload,
        );
        let mp = mask_path(path);
        fs::write(&mp, bytes).map_err(|e| Error::io(&mp, e))?;
    }
    Ok(())
}

fn attr<'a>(text: &'a str, name: &str, path: &Path) -> Result<&'a str> {
    let needle = format!("{name}=\"");
    let start = text
        .find(&needle)
        .ok_or_else(|| Error::file(path, format!("missing attribute {name}")))?
        + needle.len();
    let end = text[start..]
        .find('"')
        .ok_or_else(|| Error::file(path, format!("unterminated attribute {name}")))?;
    Ok(&text[start..start + end])
}

fn parse_floats<const N: usize>(s: &str, what: &str, path: &Path) -> Result<[f64; N]> {
    let vals: Vec<f64> = s
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::file(path, format!("invalid {what}: `{s}`")))?;
    vals.try_into()
        .map_err(|_| Error::file(path, format!("{what} must have {N} entries")))
}

/// Read a VTI file produced by [`write_vti`] (not a general-purpose VTK
/// reader).
pub fn read_vti(path: &Path) -> Result<VtiVolume> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let marker = b"<AppendedData encoding=\"raw\">";
    let data_pos = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| Error::file(path, "missing AppendedData section"))?;
    let header = std::str::from_utf8(&bytes[..data_pos])
        .map_err(|_| Error::file(path, "header is not UTF-8"))?;

    let extent: [f64; 6] = parse_floats(attr(header, "WholeExtent", path)?, "extent", path)?;
    let dims = [
        extent[1] as usize + 1,
        extent[3] as usize + 1,
        extent[5] as usize + 1,
    ];
    let origin: [f64; 3] = parse_floats(attr(header, "Origin", path)?, "origin", path)?;
    let spacing: [f64; 3] = parse_floats(attr(header, "Spacing", path)?, "spacing", path)?;
    let direction: [f64; 9] = parse_floats(attr(header, "Direction", path)?, "direction", path)?;

    let underscore = data_pos
        + bytes[data_pos..]
            .iter()
            .position(|&b| b == b'_')
            .ok_or_else(|| Error::file(path, "missing appended-data underscore"))?;
    let len_start = underscore + 1;
    if bytes.len() < len_start + 4 {
        return Err(Error::file(path, "truncated appended-data header"));
    }
    let len = u32::from_le_bytes(bytes[len_start..len_start + 4].try_into().unwrap()) as usize;
    let data_start = len_start + 4;
    if bytes.len() < data_start + len {
        return Err(Error::file(
            path,
            format!(
                "appended payload truncated: header says {len} bytes, {} present",
                bytes.len() - data_start
            ),
        ));
    }
    let data = bytes[data_start..data_start + len].to_vec();
    if data.len() != dims[0] * dims[1] * dims[2] {
        return Err(Error::file(
            path,
            format!(
                "payload of {} bytes does not match extent {:?}",
                data.len(),
                dims
            ),
        ));
    }
    Ok(VtiVolume {
        dims,
        origin,
        spacing,
        direction,
        data,
    })
}
