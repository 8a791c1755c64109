//! Binary PGM (P5) frame sequences.
//!
//! A frame directory holds `frame_000000.pgm`, `frame_000001.pgm`, … plus a
//! `frames.meta` sidecar declaring the pixel scales and the frame rate:
//!
//! ```text
//! # frame sequence metadata
//! sx = 0.2     # mm per pixel along u
//! sy = 0.2     # mm per pixel along v
//! rate = 30    # frames per second
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imaging::Frame;

pub const SIDECAR_NAME: &str = "frames.meta";

/// Sidecar metadata for a frame directory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameMeta {
    /// mm per pixel along u.
    pub sx: f64,
    /// mm per pixel along v.
    pub sy: f64,
    /// Frames per second.
    pub rate: f64,
}

fn parse_sidecar(path: &Path) -> Result<FrameMeta> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut sx = None;
    let mut sy = None;
    let mut rate = None;
    for (ln, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body.split_once('=').ok_or_else(|| {
            Error::parse(path, ln + 1, format!("expected `key = value`, got `{body}`"))
        })?;
        let value: f64 = value.trim().parse().map_err(|_| {
            Error::parse(path, ln + 1, format!("`{}` is not a number", value.trim()))
        })?;
        match key.trim() {
            "sx" => sx = Some(value),
            "sy" => sy = Some(value),
            "rate" => rate = Some(value),
            other => {
                return Err(Error::parse(path, ln + 1, format!("unknown key `{other}`")));
            }
        }
    }
    match (sx, sy, rate) {
        (Some(sx), Some(sy), Some(rate)) if sx > 0.0 && sy > 0.0 && rate > 0.0 => {
            Ok(FrameMeta { sx, sy, rate })
        }
        (Some(_), Some(_), Some(_)) => Err(Error::file(path, "sx, sy and rate must be positive")),
        _ => Err(Error::file(path, "sidecar must define sx, sy and rate")),
    }
}

/// One PGM token, skipping whitespace and `#` comments.
fn next_token(data: &[u8], pos: &mut usize) -> Option<Vec<u8>> {
    while *pos < data.len() {
        match data[*pos] {
            b' ' | b'\t' | b'\r' | b'\n' => *pos += 1,
            b'#' => {
                while *pos < data.len() && data[*pos] != b'\n' {
                    *pos += 1;
                }
            }
            _ => break,
        }
    }
    if *pos >= data.len() {
        return None;
    }
    let start = *pos;
    while *pos < data.len() && !data[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    Some(data[start..*pos].to_vec())
}

fn read_pgm(path: &Path, sx: f64, sy: f64) -> Result<Frame> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;
    let magic = next_token(&data, &mut pos)
        .ok_or_else(|| Error::file(path, "empty file"))?;
    match magic.as_slice() {
        b"P5" => {}
        b"P2" => {
            return Err(Error::unsupported(path, "ASCII PGM (P2); only binary P5 is supported"));
        }
        other => {
            return Err(Error::unsupported(
                path,
                format!("not a PGM file (magic `{}`)", String::from_utf8_lossy(other)),
            ));
        }
    }
    let mut int_token = |name: &str| -> Result<usize> {
        let tok = next_token(&data, &mut pos)
            .ok_or_else(|| Error::file(path, format!("truncated header: missing {name}")))?;
        std::str::from_utf8(&tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::file(path, format!("invalid {name} in header")))
    };
    let width = int_token("width")?;
    let height = int_token("height")?;
    let maxval = int_token("maxval")?;
    if maxval > 255 {
        return Err(Error::unsupported(
            path,
            format!("{maxval} maxval implies 16-bit samples; only 8-bit depth is supported"),
        ));
    }
    if maxval == 0 {
        return Err(Error::file(path, "maxval must be positive"));
    }
    // Exactly one whitespace byte separates header and raster.
    pos += 1;
    let need = width * height;
    if data.len() < pos + need {
        return Err(Error::file(
            path,
            format!("raster truncated: need {need} bytes, found {}", data.len().saturating_sub(pos)),
        ));
    }
    Frame::new(width, height, data[pos..pos + need].to_vec(), sx, sy)
}

/// Read an ordered PGM frame sequence plus its sidecar. All frames must have
/// identical dimensions.
pub fn read_frames(dir: &Path) -> Result<(Vec<Frame>, FrameMeta)> {
    let sidecar = dir.join(SIDECAR_NAME);
    if !sidecar.exists() {
        return Err(Error::file(
            &sidecar,
            "missing sidecar (expected sx/sy/rate metadata next to the frames)",
        ));
    }
    let meta = parse_sidecar(&sidecar)?;

    let mut entries: Vec<(usize, PathBuf)> = Vec::new();
    let listing = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in listing {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(stem) = name.strip_prefix("frame_").and_then(|s| s.strip_suffix(".pgm")) {
            let index: usize = stem.parse().map_err(|_| {
                Error::file(entry.path(), "frame files must be named frame_<number>.pgm")
            })?;
            entries.push((index, entry.path()));
        }
    }
    if entries.is_empty() {
        return Err(Error::file(dir, "no frame_*.pgm files found"));
    }
    entries.sort_by_key(|(i, _)| *i);

    let mut frames = Vec::with_capacity(entries.len());
    for (_, path) in &entries {
        let frame = read_pgm(path, meta.sx, meta.sy)?;
        if let Some(first) = frames.first() {
            let first: &Frame = first;
            if frame.width != first.width || frame.height != first.height {
                return Err(Error::file(
                    path,
                    format!(
                        "frame is {}×{} but the sequence started at {}×{}",
                        frame.width, frame.height, first.width, first.height
                    ),
                ));
            }
        }
        frames.push(frame);
    }
    Ok((frames, meta))
}

/// Write a frame sequence and its sidecar into `dir` (created if needed).
pub fn write_frames(dir: &Path, frames: &[Frame], meta: &FrameMeta) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let sidecar = dir.join(SIDECAR_NAME);
    let mut f = fs::File::create(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    write!(
        f,
        "# frame sequence metadata\nsx = {}\nsy = {}\nrate = {}\n",
        meta.sx, meta.sy, meta.rate
    )
    .map_err(|e| Error::io(&sidecar, e))?;
    for (i, frame) in frames.iter().enumerate() {
        let path = dir.join(format!("frame_{i:06}.pgm"));
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write!(f, "P5\n{} {}\n255\n", frame.width, frame.height).map_err(|e| Error::io(&path, e))?;
        f.write_all(&frame.pixels).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn meta() -> FrameMeta {
        FrameMeta {
            sx: 0.2,
            sy: 0.25,
            rate: 30.0,
        }
    }

    #[test]
    fn roundtrip_three_frames_in_order() {
        let dir = tempdir().unwrap();
        let frames: Vec<Frame> = (0..3)
            .map(|i| Frame::new(4, 3, vec![i as u8 * 10; 12], 0.2, 0.25).unwrap())
            .collect();
        write_frames(dir.path(), &frames, &meta()).unwrap();
        let (back, m) = read_frames(dir.path()).unwrap();
        assert_eq!(m, meta());
        assert_eq!(back.len(), 3);
        for (i, f) in back.iter().enumerate() {
            assert_eq!(f.pixels[0], i as u8 * 10);
            assert_eq!(f.sx, 0.2);
        }
    }

    #[test]
    fn ascii_pgm_rejected() {
        let dir = tempdir().unwrap();
        let frames = vec![Frame::new(2, 2, vec![1; 4], 1.0, 1.0).unwrap()];
        write_frames(dir.path(), &frames, &meta()).unwrap();
        let path = dir.path().join("frame_000000.pgm");
        fs::write(&path, b"P2\n2 2\n255\n1 2 3 4\n").unwrap();
        match read_frames(dir.path()) {
            Err(Error::UnsupportedFormat { message, .. }) => {
                assert!(message.contains("P2"), "{message}")
            }
            other => panic!("expected unsupported-format, got {other:?}"),
        }
    }

    #[test]
    fn sixteen_bit_rejected() {
        let dir = tempdir().unwrap();
        let frames = vec![Frame::new(2, 2, vec![1; 4], 1.0, 1.0).unwrap()];
        write_frames(dir.path(), &frames, &meta()).unwrap();
        let path = dir.path().join("frame_000000.pgm");
        fs::write(&path, b"P5\n2 2\n65535\n\0\0\0\0\0\0\0\0").unwrap();
        match read_frames(dir.path()) {
            Err(Error::UnsupportedFormat { message, .. }) => {
                assert!(message.contains("8-bit"), "{message}")
            }
            other => panic!("expected unsupported-depth, got {other:?}"),
        }
    }

    #[test]
    fn missing_sidecar_rejected() {
        let dir = tempdir().unwrap();
        let frames = vec![Frame::new(2, 2, vec![1; 4], 1.0, 1.0).unwrap()];
        write_frames(dir.path(), &frames, &meta()).unwrap();
        fs::remove_file(dir.path().join(SIDECAR_NAME)).unwrap();
        assert!(matches!(read_frames(dir.path()), Err(Error::File { .. })));
    }

    #[test]
    fn mixed_dimensions_rejected() {
        let dir = tempdir().unwrap();
        let frames = vec![
            Frame::new(2, 2, vec![1; 4], 1.0, 1.0).unwrap(),
            Frame::new(2, 2, vec![1; 4], 1.0, 1.0).unwrap(),
        ];
        write_frames(dir.path(), &frames, &meta()).unwrap();
        let path = dir.path().join("frame_000001.pgm");
        fs::write(&path, b"P5\n3 2\n255\n\0\0\0\0\0\0").unwrap();
        match read_frames(dir.path()) {
            Err(Error::File { message, .. }) => assert!(message.contains("3×2"), "{message}"),
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn pgm_comments_are_skipped() {
        let dir = tempdir().unwrap();
        fs::write(
            dir.path().join(SIDECAR_NAME),
            "sx = 1\nsy = 1\nrate = 10\n",
        )
        .unwrap();
        fs::write(
            dir.path().join("frame_000000.pgm"),
            b"P5\n# a comment\n2 1\n255\n\x07\x08",
        )
        .unwrap();
        let (frames, _) = read_frames(dir.path()).unwrap();
        assert_eq!(frames[0].pixels, vec![7, 8]);
    }

    #[test]
    fn truncated_raster_rejected() {
        let dir = tempdir().unwrap();
        fs::write(dir.path().join(SIDECAR_NAME), "sx=1\nsy=1\nrate=10\n").unwrap();
        fs::write(dir.path().join("frame_000000.pgm"), b"P5\n4 4\n255\n\x01\x02").unwrap();
        assert!(matches!(read_frames(dir.path()), Err(Error::File { .. })));
    }
}
