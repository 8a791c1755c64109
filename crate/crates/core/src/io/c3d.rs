//! C3D motion-capture files: marker trajectories in mm.
//!
//! Reads the Intel (little-endian) processor variant with integer or float
//! point storage, honouring `POINT:SCALE`; samples whose residual word is
//! negative are flagged invalid. A minimal writer exists to exercise the
//! reader — round trips preserve positions within one scale quantum.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

const PROCESSOR_INTEL: u8 = 84;
const PARAM_MAGIC: u8 = 0x50;
const BLOCK: usize = 512;

/// Trajectory of one labelled marker.
#[derive(Clone, Debug)]
pub struct MarkerTrack {
    pub label: String,
    /// Point frame rate in Hz.
    pub rate: f64,
    /// First frame number (1-based, from the header).
    pub first_frame: usize,
    /// Per-frame position in mm; `None` where the residual marked the
    /// sample invalid.
    pub samples: Vec<Option<[f64; 3]>>,
}

impl MarkerTrack {
    /// `(time, position)` pairs; time of frame `i` is
    /// `(first_frame - 1 + i) / rate` seconds.
    pub fn timed_samples(&self) -> impl Iterator<Item = (f64, Option<[f64; 3]>)> + '_ {
        let t0 = (self.first_frame - 1) as f64;
        self.samples
            .iter()
            .enumerate()
            .map(move |(i, s)| ((t0 + i as f64) / self.rate, *s))
    }
}

/// Point storage variant for the writer.
#[derive(Clone, Copy, Debug)]
pub enum C3dStorage {
    /// 16-bit integers, positions quantised to `scale` mm.
    Integer { scale: f64 },
    /// 32-bit floats (stored with a negative scale per the format).
    Float,
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn need(&self, n: usize) -> Result<()> {
        if self.pos + n > self.data.len() {
            Err(Error::file(
                self.path,
                format!("truncated file at byte {}", self.pos),
            ))
        } else {
            Ok(())
        }
    }
    fn u8(&mut self) -> Result<u8> {
        self.need(1)?;
        let v = self.data[self.pos];
        self.pos += 1;
        Ok(v)
    }
    fn i8(&mut self) -> Result<i8> {
        Ok(self.u8()? as i8)
    }
    fn i16(&mut self) -> Result<i16> {
        self.need(2)?;
        let v = i16::from_le_bytes([self.data[self.pos], self.data[self.pos + 1]]);
        self.pos += 2;
        Ok(v)
    }
    fn f32(&mut self) -> Result<f32> {
        self.need(4)?;
        let v = f32::from_le_bytes(self.data[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        Ok(v)
    }
    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        self.need(n)?;
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

#[derive(Debug, Default)]
struct PointParams {
    scale: Option<f64>,
    labels: Vec<String>,
}

fn parse_parameters(data: &[u8], start: usize, path: &Path) -> Result<PointParams> {
    let mut cur = Cursor {
        data,
        pos: start,
        path,
    };
    // 4-byte parameter header: reserved, 0x50, block count, processor.
    let _reserved = cur.u8()?;
    let magic = cur.u8()?;
    if magic != PARAM_MAGIC {
        return Err(Error::file(
            path,
            format!("parameter section format byte is 0x{magic:02x}, expected 0x50"),
        ));
    }
    let _nblocks = cur.u8()?;
    let processor = cur.u8()?;
    if processor != PROCESSOR_INTEL {
        return Err(Error::unsupported(
            path,
            format!("processor type {processor}; only Intel (84) is supported"),
        ));
    }

    let mut point_group_id: Option<i8> = None;
    let mut out = PointParams::default();
    // Two passes would be simpler but the POINT group conventionally comes
    // first; track params until their group definition shows up instead.
    let mut pending: Vec<(i8, String, usize)> = Vec::new(); // (group, name, body offset)

    loop {
        let entry_start = cur.pos;
        let name_len = match cur.i8() {
            Ok(v) => v,
            Err(_) => break,
        };
        if name_len == 0 {
            break;
        }
        let group_id = cur.i8()?;
        if group_id == 0 {
            break;
        }
        let n = name_len.unsigned_abs() as usize;
        let name = String::from_utf8_lossy(cur.bytes(n)?).to_uppercase();
        let offset_pos = cur.pos;
        let offset = cur.i16()?;
        let body_pos = cur.pos;

        if group_id < 0 {
            if name == "POINT" {
                point_group_id = Some(-group_id);
            }
        } else {
            pending.push((group_id, name, body_pos));
        }
        if offset == 0 {
            break;
        }
        cur.pos = offset_pos + offset as usize;
        let _ = entry_start;
    }

    let Some(pg) = point_group_id else {
        return Err(Error::file(path, "no POINT group in parameter section"));
    };
    for (gid, name, body) in pending {
        if gid != pg {
            continue;
        }
        let mut c = Cursor {
            data,
            pos: body,
            path,
        };
        let dtype = c.i8()?;
        let ndims = c.u8()? as usize;
        let mut dims = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            dims.push(c.u8()? as usize);
        }
        match name.as_str() {
            "SCALE" => {
                if dtype == 4 {
                    out.scale = Some(c.f32()? as f64);
                }
            }
            "LABELS" => {
                if dtype == -1 && ndims == 2 {
                    let (w, count) = (dims[0], dims[1]);
                    for i in 0..count {
                        let raw = c.bytes(w)?;
                        let _ = i;
                        out.labels
                            .push(String::from_utf8_lossy(raw).trim().to_string());
                    }
                }
            }
            _ => {}
        }
    }
    Ok(out)
}

/// Read marker trajectories for the requested labels.
pub fn read_c3d_points(path: &Path, marker_names: &[&str]) -> Result<Vec<MarkerTrack>> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    if data.len() < BLOCK {
        return Err(Error::file(path, "file shorter than the 512-byte header"));
    }
    let mut cur = Cursor {
        data: &data,
        pos: 0,
        path,
    };
    let param_block = cur.u8()? as usize;
    let magic = cur.u8()?;
    if magic != PARAM_MAGIC {
        return Err(Error::file(
            path,
            format!("header format byte is 0x{magic:02x}, expected 0x50 — not a C3D file"),
        ));
    }
    let n_points = cur.i16()? as usize;
    let _analog_per_frame = cur.i16()?;
    let first_frame = cur.i16()? as usize;
    let last_frame = cur.i16()? as usize;
    let _max_gap = cur.i16()?;
    let header_scale = cur.f32()? as f64;
    let data_block = cur.i16()? as usize;
    let _analog_samples = cur.i16()?;
    let rate = cur.f32()? as f64;
    if n_points == 0 {
        return Err(Error::file(path, "header declares zero 3D points"));
    }
    if last_frame < first_frame {
        return Err(Error::file(
            path,
            format!("header frame range {first_frame}..{last_frame} is empty"),
        ));
    }

    let params = parse_parameters(&data, (param_block - 1) * BLOCK, path)?;
    if params.labels.len() < n_points {
        return Err(Error::file(
            path,
            format!(
                "POINT:LABELS has {} entries for {} points",
                params.labels.len(),
                n_points
            ),
        ));
    }
    let scale = params.scale.unwrap_or(header_scale);
    let float_storage = scale < 0.0;
    let scale_abs = scale.abs();

    let mut indices = Vec::with_capacity(marker_names.len());
    for want in marker_names {
        match params.labels.iter().position(|l| l == want) {
            Some(i) => indices.push(i),
            None => {
                return Err(Error::file(
                    path,
                    format!(
                        "marker `{want}` not present; available labels: {}",
                        params.labels.join(", ")
                    ),
                ))
            }
        }
    }

    let n_frames = last_frame - first_frame + 1;
    let mut tracks: Vec<MarkerTrack> = indices
        .iter()
        .zip(marker_names)
        .map(|(_, name)| MarkerTrack {
            label: name.to_string(),
            rate,
            first_frame,
            samples: Vec::with_capacity(n_frames),
        })
        .collect();

    let mut cur = Cursor {
        data: &data,
        pos: (data_block - 1) * BLOCK,
        path,
    };
    for _ in 0..n_frames {
        let mut frame_points: Vec<Option<[f64; 3]>> = Vec::with_capacity(n_points);
        for _ in 0..n_points {
            if float_storage {
                let x = cur.f32()? as f64;
                let y = cur.f32()? as f64;
                let z = cur.f32()? as f64;
                let residual = cur.f32()?;
                frame_points.push(if residual < 0.0 { None } else { Some([x, y, z]) });
            } else {
                let x = cur.i16()? as f64;
                let y = cur.i16()? as f64;
                let z = cur.i16()? as f64;
                let residual = cur.i16()?;
                frame_points.push(if residual < 0 {
                    None
                } else {
                    Some([x * scale_abs, y * scale_abs, z * scale_abs])
                });
            }
        }
        for (t, &src) in tracks.iter_mut().zip(&indices) {
            t.samples.push(frame_points[src]);
        }
    }
    Ok(tracks)
}

fn param_entry(
    out: &mut Vec<u8>,
    name: &str,
    group_id: i8,
    body: &[u8],
    last: bool,
) {
    out.push(name.len() as u8);
    out.push(group_id as u8);
    out.extend_from_slice(name.as_bytes());
    let offset: i16 = if last { 0 } else { (2 + body.len()) as i16 };
    out.extend_from_slice(&offset.to_le_bytes());
    out.extend_from_slice(body);
}

/// Minimal C3D writer (Intel, one point group). `frames[i][m]` is marker `m`
/// at frame `i`; `None` samples get a negative residual.
pub fn write_c3d_points(
    path: &Path,
    labels: &[&str],
    frames: &[Vec<Option<[f64; 3]>>],
    rate: f64,
    storage: C3dStorage,
) -> Result<()> {
    if frames.is_empty() || labels.is_empty() {
        return Err(Error::InvalidParameter(
            "need at least one frame and one marker".into(),
        ));
    }
    for (i, f) in frames.iter().enumerate() {
        if f.len() != labels.len() {
            return Err(Error::InvalidParameter(format!(
                "frame {i} has {} markers, expected {}",
                f.len(),
                labels.len()
            )));
        }
    }
    let n_points = labels.len();
    let n_frames = frames.len();
    let scale_field = match storage {
        C3dStorage::Integer { scale } => {
            if !(scale > 0.0) {
                return Err(Error::InvalidParameter(
                    "integer storage needs a positive scale".into(),
                ));
            }
            scale
        }
        C3dStorage::Float => -1.0,
    };

    // Parameter section body.
    let mut params: Vec<u8> = vec![0x01, PARAM_MAGIC, 1, PROCESSOR_INTEL];
    param_entry(&mut params, "POINT", -1, &[0u8], false); // group def, empty description
    let mut body = vec![2i8 as u8, 0]; // int16, 0 dims
    body.extend_from_slice(&(n_points as i16).to_le_bytes());
    body.push(0); // description length
    param_entry(&mut params, "USED", 1, &body, false);
    let mut body = vec![4i8 as u8, 0];
    body.extend_from_slice(&(scale_field as f32).to_le_bytes());
    body.push(0);
    param_entry(&mut params, "SCALE", 1, &body, false);
    let mut body = vec![4i8 as u8, 0];
    body.extend_from_slice(&(rate as f32).to_le_bytes());
    body.push(0);
    param_entry(&mut params, "RATE", 1, &body, false);
    let mut body = vec![2i8 as u8, 0];
    body.extend_from_slice(&(n_frames as i16).to_le_bytes());
    body.push(0);
    param_entry(&mut params, "FRAMES", 1, &body, false);
    let label_width = labels.iter().map(|l| l.len()).max().unwrap().max(4);
    let mut body = vec![-1i8 as u8, 2, label_width as u8, n_points as u8];
    for l in labels {
        let mut padded = l.as_bytes().to_vec();
        padded.resize(label_width, b' ');
        body.extend_from_slice(&padded);
    }
    body.push(0);
    param_entry(&mut params, "LABELS", 1, &body, true);

    let param_blocks = params.len().div_ceil(BLOCK);
    params[2] = param_blocks as u8;
    let data_block = 2 + param_blocks; // header=1, params start at 2

    let mut header = vec![0u8; BLOCK];
    header[0] = 2; // parameter section block
    header[1] = PARAM_MAGIC;
    header[2..4].copy_from_slice(&(n_points as i16).to_le_bytes());
    header[4..6].copy_from_slice(&0i16.to_le_bytes()); // analog
    header[6..8].copy_from_slice(&1i16.to_le_bytes()); // first frame
    header[8..10].copy_from_slice(&(n_frames as i16).to_le_bytes()); // last frame
    header[10..12].copy_from_slice(&0i16.to_le_bytes()); // max gap
    header[12..16].copy_from_slice(&(scale_field as f32).to_le_bytes());
    header[16..18].copy_from_slice(&(data_block as i16).to_le_bytes());
    header[18..20].copy_from_slice(&0i16.to_le_bytes()); // analog per frame
    header[20..24].copy_from_slice(&(rate as f32).to_le_bytes());

    let mut out = header;
    params.resize(param_blocks * BLOCK, 0);
    out.extend_from_slice(&params);

    for frame in frames {
        for sample in frame {
            match storage {
                C3dStorage::Integer { scale } => match sample {
                    Some(p) => {
                        for c in p {
                            let q = (c / scale).round();
                            if q.abs() > i16::MAX as f64 {
                                return Err(Error::InvalidParameter(format!(
                                    "coordinate {c} mm overflows int16 at scale {scale}"
                                )));
                            }
                            out.extend_from_slice(&(q as i16).to_le_bytes());
                        }
                        out.extend_from_slice(&0i16.to_le_bytes());
                    }
                    None => {
                        for _ in 0..3 {
                            out.extend_from_slice(&0i16.to_le_bytes());
                        }
                        out.extend_from_slice(&(-1i16).to_le_bytes());
                    }
                },
                C3dStorage::Float => match sample {
                    Some(p) => {
                        for c in p {
                            out.extend_from_slice(&(*c as f32).to_le_bytes());
                        }
                        out.extend_from_slice(&0f32.to_le_bytes());
                    }
                    None => {
                        for _ in 0..3 {
                            out.extend_from_slice(&0f32.to_le_bytes());
                        }
                        out.extend_from_slice(&(-1f32).to_le_bytes());
                    }
                },
            }
        }
    }
    let pad = out.len().next_multiple_of(BLOCK) - out.len();
    out.extend(std::iter::repeat_n(0u8, pad));

    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}
