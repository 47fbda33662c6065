//! File formats: PFM radiance maps, 16-bit PGM raw frames with JSON sidecars,
//! and the JSON manifests for gain stacks and calibration sweeps.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gain::GainMap;
use crate::grid::Plane;
use crate::readout::{BinMap, GainStack};
use crate::sensor::RawCapture;

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_token<R: BufRead>(r: &mut R) -> Result<String> {
    let mut tok = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            break;
        }
        let c = byte[0];
        if c == b'#' && tok.is_empty() {
            let mut line = Vec::new();
            r.read_until(b'\n', &mut line)?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(c);
    }
    if tok.is_empty() {
        return Err(Error::Format("unexpected end of header".into()));
    }
    String::from_utf8(tok).map_err(|_| Error::Format("non-ASCII header".into()))
}

fn parse<T: std::str::FromStr>(tok: &str, what: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| Error::Format(format!("bad {what} '{tok}' in header")))
}

/// Decodes a PFM image. `Pf` is read as is; `PF` (RGB) is reduced to Rec. 709
/// luminance. A negative scale marks little-endian data. Rows are stored
/// bottom-to-top in the file and returned top-to-bottom.
pub fn decode_pfm(bytes: &[u8]) -> Result<Plane<f64>> {
    let mut r = BufReader::new(bytes);
    let magic = read_token(&mut r)?;
    let channels = match magic.as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(Error::Format(format!("not a PFM file (magic '{other}')"))),
    };
    let width: usize = parse(&read_token(&mut r)?, "width")?;
    let height: usize = parse(&read_token(&mut r)?, "height")?;
    let scale: f64 = parse(&read_token(&mut r)?, "scale")?;
    if width == 0 || height == 0 || scale == 0.0 {
        return Err(Error::Format("PFM header has zero size or scale".into()));
    }
    let little = scale < 0.0;
    let n = width * height * channels;
    let mut raw = vec![0u8; n * 4];
    r.read_exact(&mut raw)
        .map_err(|_| Error::Format("PFM pixel data is truncated".into()))?;
    let floats: Vec<f64> = raw
        .chunks_exact(4)
        .map(|b| {
            let b = [b[0], b[1], b[2], b[3]];
            (if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            }) as f64
        })
        .collect();
    Ok(Plane::from_fn(width, height, |x, y| {
        let i = ((height - 1 - y) * width + x) * channels;
        if channels == 1 {
            floats[i]
        } else {
            0.2126 * floats[i] + 0.7152 * floats[i + 1] + 0.0722 * floats[i + 2]
        }
    }))
}

/// Encodes a single-channel little-endian PFM.
pub fn encode_pfm(plane: &Plane<f64>) -> Vec<u8> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", plane.width, plane.height).into_bytes();
    out.reserve(plane.data.len() * 4);
    for y in (0..plane.height).rev() {
        for x in 0..plane.width {
            out.extend_from_slice(&(*plane.get(x, y) as f32).to_le_bytes());
        }
    }
    out
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Plane<f64>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
    decode_pfm(&bytes)
}

pub fn write_pfm(path: impl AsRef<Path>, plane: &Plane<f64>) -> Result<()> {
    fs::write(path, encode_pfm(plane))?;
    Ok(())
}

/// Binary PGM (P5). Samples are big-endian 16-bit when `maxval > 255`.
pub fn encode_pgm(plane: &Plane<u16>, maxval: u16) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", plane.width, plane.height, maxval).into_bytes();
    if maxval > 255 {
        for &v in &plane.data {
            out.extend_from_slice(&v.to_be_bytes());
        }
    } else {
        out.extend(plane.data.iter().map(|&v| v.min(255) as u8));
    }
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<(Plane<u16>, u16)> {
    let mut r = BufReader::new(bytes);
    if read_token(&mut r)? != "P5" {
        return Err(Error::Format("not a binary PGM (P5)".into()));
    }
    let width: usize = parse(&read_token(&mut r)?, "width")?;
    let height: usize = parse(&read_token(&mut r)?, "height")?;
    let maxval: u16 = parse(&read_token(&mut r)?, "maxval")?;
    let wide = maxval > 255;
    let mut raw = vec![0u8; width * height * if wide { 2 } else { 1 }];
    r.read_exact(&mut raw)
        .map_err(|_| Error::Format("PGM pixel data is truncated".into()))?;
    let data = if wide {
        raw.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect()
    } else {
        raw.iter().map(|&b| b as u16).collect()
    };
    Ok((Plane::from_vec(width, height, data)?, maxval))
}

/// Metadata written next to every raw frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSidecar {
    pub width: usize,
    pub height: usize,
    pub bit_depth: u32,
    pub black_level: u16,
    pub seed: Option<u64>,
    pub gain_map: GainMap,
    pub bin_map: BinMap,
}

pub fn sidecar_path(pgm: &Path) -> PathBuf {
    pgm.with_extension("json")
}

/// Writes `<path>` (PGM) and `<path>.json` (sidecar, extension replaced).
pub fn write_raw(path: impl AsRef<Path>, raw: &RawCapture) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_pgm(&raw.digits, raw.d_max()))?;
    let side = RawSidecar {
        width: raw.width(),
        height: raw.height(),
        bit_depth: raw.bit_depth,
        black_level: raw.black_level,
        seed: raw.seed,
        gain_map: raw.gain_map.clone(),
        bin_map: raw.bin_map.clone(),
    };
    write_json(sidecar_path(path), &side)
}

pub fn read_raw(path: impl AsRef<Path>) -> Result<RawCapture> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
    let (digits, _) = decode_pgm(&bytes)?;
    let side: RawSidecar = read_json(sidecar_path(path))?;
    if side.width != digits.width || side.height != digits.height {
        return Err(Error::Shape("sidecar size disagrees with PGM".into()));
    }
    side.gain_map.check_frame(side.width, side.height)?;
    side.bin_map.check_frame(side.width, side.height)?;
    let d_max = ((1u32 << side.bit_depth) - 1) as u16;
    if digits.data.iter().any(|&d| d > d_max) {
        return Err(Error::Format("digit exceeds bit depth".into()));
    }
    let saturation = digits.map(|&d| d == d_max);
    Ok(RawCapture {
        digits,
        saturation,
        gain_map: side.gain_map,
        bin_map: side.bin_map,
        bit_depth: side.bit_depth,
        black_level: side.black_level,
        seed: side.seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackEntry {
    pub gain: f64,
    /// PGM path relative to the manifest.
    pub raw: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackManifest {
    pub frames: Vec<StackEntry>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn manifest_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Writes every frame as `frame_NNN.pgm` (+ sidecar) and a `manifest.json`.
pub fn write_stack(dir: impl AsRef<Path>, stack: &GainStack) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut frames = Vec::new();
    for (i, (gain, raw)) in stack.frames().iter().enumerate() {
        let name = PathBuf::from(format!("frame_{i:03}.pgm"));
        write_raw(dir.join(&name), raw)?;
        frames.push(StackEntry { gain: *gain, raw: name });
    }
    let manifest = dir.join("manifest.json");
    write_json(&manifest, &StackManifest { frames })?;
    Ok(manifest)
}

pub fn read_stack(manifest: impl AsRef<Path>) -> Result<GainStack> {
    let manifest = manifest.as_ref();
    let m: StackManifest = read_json(manifest)?;
    let base = manifest_dir(manifest);
    let frames = m
        .frames
        .iter()
        .map(|e| read_raw(resolve(&base, &e.raw)).map(|r| (e.gain, r)))
        .collect::<Result<Vec<_>>>()?;
    GainStack::new(frames)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSweep {
    pub gain: f64,
    pub frames: Vec<PathBuf>,
}

/// Dark-frame sweep for calibration: frames grouped by gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationManifest {
    pub sweeps: Vec<CalibrationSweep>,
}

pub fn read_calibration_frames(manifest: impl AsRef<Path>) -> Result<Vec<(f64, Vec<RawCapture>)>> {
    let manifest = manifest.as_ref();
    let m: CalibrationManifest = read_json(manifest)?;
    let base = manifest_dir(manifest);
    m.sweeps
        .iter()
        .map(|s| {
            let frames = s
                .frames
                .iter()
                .map(|p| read_raw(resolve(&base, p)))
                .collect::<Result<Vec<_>>>()?;
            Ok((s.gain, frames))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_header_is_bit_exact() {
        let p = Plane::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = encode_pfm(&p);
        assert!(bytes.starts_with(b"Pf\n2 2\n-1.0\n"));
        // Bottom row first.
        assert_eq!(&bytes[12..16], &3.0f32.to_le_bytes());
        assert_eq!(decode_pfm(&bytes).unwrap(), p);
    }

    #[test]
    fn pfm_big_endian_and_color() {
        let mut bytes = b"PF\n1 1\n1.0\n".to_vec();
        for v in [1.0f32, 1.0, 1.0] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        let p = decode_pfm(&bytes).unwrap();
        assert!((p.data[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn truncated_or_foreign_files_are_rejected() {
        assert!(matches!(decode_pfm(b"Pf\n2 2\n-1.0\n\0\0"), Err(Error::Format(_))));
        assert!(matches!(decode_pfm(b"P6\n2 2\n255\n"), Err(Error::Format(_))));
        assert!(matches!(decode_pgm(b"P2\n1 1\n255\n1"), Err(Error::Format(_))));
    }

    #[test]
    fn pgm_sixteen_bit_layout() {
        let p = Plane::from_vec(2, 1, vec![0x0102u16, 4095]).unwrap();
        let bytes = encode_pgm(&p, 4095);
        assert!(bytes.starts_with(b"P5\n2 1\n4095\n"));
        assert_eq!(&bytes[bytes.len() - 4..], &[1, 2, 0x0f, 0xff]);
        assert_eq!(decode_pgm(&bytes).unwrap(), (p, 4095));
    }
}
