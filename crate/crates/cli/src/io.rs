//! Netpbm (P5/P6) and raw-volume I/O, seed masks and unary maps.

use std::fs;
use std::path::{Path, PathBuf};

use dope_core::{GridImage, GridShape, Seed};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pnm {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub maxval: u16,
    /// Samples in row-major order, channels interleaved.
    pub samples: Vec<u16>,
}

fn malformed(path: &Path, msg: impl Into<String>) -> CliError {
    CliError::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Header tokens of a binary netpbm file, with `#` comments skipped.
fn header_tokens(bytes: &[u8], count: usize) -> Option<(Vec<String>, usize)> {
    let mut tokens = Vec::with_capacity(count);
    let mut pos = 0;
    while tokens.len() < count {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return None;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return None;
    }
    Some((tokens, pos + 1))
}

pub fn parse_pnm(path: &Path, bytes: &[u8]) -> Result<Pnm> {
    let (tokens, body) = header_tokens(bytes, 4).ok_or_else(|| malformed(path, "truncated header"))?;
    let channels = match tokens[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        other => {
            return Err(malformed(
                path,
                format!("unsupported magic {other:?}, expected P5 or P6"),
            ))
        }
    };
    let num = |s: &str, what: &str| -> Result<usize> {
        s.parse::<usize>()
            .map_err(|_| malformed(path, format!("bad {what} {s:?}")))
    };
    let cols = num(&tokens[1], "width")?;
    let rows = num(&tokens[2], "height")?;
    let maxval = num(&tokens[3], "maxval")?;
    if cols == 0 || rows == 0 {
        return Err(malformed(path, "zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(malformed(path, format!("maxval {maxval} out of range")));
    }
    let wide = maxval > 255;
    let count = rows * cols * channels;
    let need = count * if wide { 2 } else { 1 };
    let raster = &bytes[body..];
    if raster.len() < need {
        return Err(malformed(
            path,
            format!("raster has {} bytes, expected {need}", raster.len()),
        ));
    }
    let samples: Vec<u16> = if wide {
        raster[..need]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        raster[..need].iter().map(|&b| u16::from(b)).collect()
    };
    if let Some(s) = samples.iter().find(|&&s| usize::from(s) > maxval) {
        return Err(malformed(path, format!("sample {s} exceeds maxval {maxval}")));
    }
    Ok(Pnm {
        rows,
        cols,
        channels,
        maxval: maxval as u16,
        samples,
    })
}

pub fn read_pnm(path: &Path) -> Result<Pnm> {
    parse_pnm(path, &read_bytes(path)?)
}

/// 8-bit P5 (one channel) or P6 (three channels).
pub fn write_pnm(path: &Path, rows: usize, cols: usize, channels: usize, samples: &[u8]) -> Result<()> {
    let magic = match channels {
        1 => "P5",
        3 => "P6",
        c => return Err(malformed(path, format!("cannot write {c}-channel netpbm"))),
    };
    if samples.len() != rows * cols * channels {
        return Err(malformed(path, "sample count does not match dimensions"));
    }
    let mut out = format!("{magic}\n{cols} {rows}\n255\n").into_bytes();
    out.extend_from_slice(samples);
    write_bytes(path, &out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Uint8,
    Float32,
}

/// Sidecar for raw arrays: `{"dims": [...], "channels": c, "dtype": "uint8"|"float32"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDescriptor {
    pub dims: Vec<usize>,
    #[serde(default = "one")]
    pub channels: usize,
    pub dtype: Dtype,
}

fn one() -> usize {
    1
}

impl RawDescriptor {
    pub fn len(&self) -> usize {
        self.dims.iter().product::<usize>() * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `volume.raw` → `volume.json`.
pub fn descriptor_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn read_descriptor(path: &Path) -> Result<RawDescriptor> {
    let dpath = descriptor_path(path);
    let text = fs::read_to_string(&dpath).map_err(|e| CliError::io(&dpath, e))?;
    serde_json::from_str(&text).map_err(|e| malformed(&dpath, e.to_string()))
}

/// Raw little-endian samples as doubles (uint8 kept as 0..=255).
pub fn read_raw(path: &Path, desc: &RawDescriptor) -> Result<Vec<f64>> {
    let bytes = read_bytes(path)?;
    let n = desc.len();
    let width = match desc.dtype {
        Dtype::Uint8 => 1,
        Dtype::Float32 => 4,
    };
    if bytes.len() != n * width {
        return Err(malformed(
            path,
            format!(
                "{} bytes, descriptor {:?} x{} needs {}",
                bytes.len(),
                desc.dims,
                desc.channels,
                n * width
            ),
        ));
    }
    Ok(match desc.dtype {
        Dtype::Uint8 => bytes.iter().map(|&b| f64::from(b)).collect(),
        Dtype::Float32 => bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect(),
    })
}

/// Writes the raw array and its sidecar descriptor.
pub fn write_raw(path: &Path, desc: &RawDescriptor, data: &[f64]) -> Result<()> {
    if data.len() != desc.len() {
        return Err(malformed(path, "data length does not match descriptor"));
    }
    let bytes: Vec<u8> = match desc.dtype {
        Dtype::Uint8 => data.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect(),
        Dtype::Float32 => data.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect(),
    };
    write_bytes(path, &bytes)?;
    let dpath = descriptor_path(path);
    let text = serde_json::to_string(desc).expect("descriptor serializes");
    write_bytes(&dpath, text.as_bytes())
}

fn is_raw(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("raw"))
}

/// PGM/PPM for 2D, raw + descriptor otherwise; values mapped to [0, 1].
pub fn load_image(path: &Path) -> Result<GridImage> {
    if is_raw(path) {
        let desc = read_descriptor(path)?;
        let data = read_raw(path, &desc)?;
        let data = match desc.dtype {
            Dtype::Uint8 => data.into_iter().map(|v| v / 255.0).collect(),
            Dtype::Float32 => {
                if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                    return Err(malformed(path, format!("float32 sample {v} outside [0, 1]")));
                }
                data
            }
        };
        let shape = GridShape::new(&desc.dims)?;
        return Ok(GridImage::new(shape, desc.channels, data)?);
    }
    let pnm = read_pnm(path)?;
    let scale = f64::from(pnm.maxval);
    let data = pnm.samples.iter().map(|&s| f64::from(s) / scale).collect();
    Ok(GridImage::new(
        GridShape::new(&[pnm.rows, pnm.cols])?,
        pnm.channels,
        data,
    )?)
}

pub const SEED_BACKGROUND: u8 = 128;
pub const SEED_FOREGROUND: u8 = 255;

fn seed_from_byte(path: &Path, value: u16) -> Result<Seed> {
    match value {
        0 => Ok(Seed::Unlabeled),
        128 => Ok(Seed::Background),
        255 => Ok(Seed::Foreground),
        v => Err(malformed(path, format!("seed value {v}; expected 0, 128 or 255"))),
    }
}

pub fn seed_byte(seed: Seed) -> u8 {
    match seed {
        Seed::Unlabeled => 0,
        Seed::Background => SEED_BACKGROUND,
        Seed::Foreground => SEED_FOREGROUND,
    }
}

/// Seed mask (PGM, or uint8 raw for volumes): 0 unlabeled, 128 background, 255 foreground.
pub fn load_seeds(path: &Path, shape: &GridShape) -> Result<Vec<Seed>> {
    let (dims, values): (Vec<usize>, Vec<u16>) = if is_raw(path) {
        let desc = read_descriptor(path)?;
        if desc.dtype != Dtype::Uint8 || desc.channels != 1 {
            return Err(malformed(path, "seed volume must be single-channel uint8"));
        }
        let data = read_raw(path, &desc)?;
        (desc.dims, data.into_iter().map(|v| v as u16).collect())
    } else {
        let pnm = read_pnm(path)?;
        if pnm.channels != 1 {
            return Err(malformed(path, "seed mask must be a PGM"));
        }
        (vec![pnm.rows, pnm.cols], pnm.samples)
    };
    if dims != shape.dims() {
        return Err(CliError::Mismatch(format!(
            "seed mask dims {:?} vs image {:?}",
            dims,
            shape.dims()
        )));
    }
    values.into_iter().map(|v| seed_from_byte(path, v)).collect()
}

pub fn write_seeds(path: &Path, shape: &GridShape, seeds: &[Seed]) -> Result<()> {
    let bytes: Vec<u8> = seeds.iter().map(|&s| seed_byte(s)).collect();
    write_labels_as(path, shape, &bytes)
}

pub const PROB_CLAMP: f64 = 1e-6;

/// `u = log(1 − p) − log p` with `p` clamped to `[1e−6, 1 − 1e−6]`.
pub fn unary_from_probability(p: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    (1.0 - p).ln() - p.ln()
}

/// Raw little-endian float32 foreground probabilities, one per pixel.
pub fn load_unaries(path: &Path, n: usize) -> Result<Vec<f64>> {
    let bytes = read_bytes(path)?;
    if bytes.len() != 4 * n {
        return Err(CliError::Mismatch(format!(
            "unary map {} has {} values, image has {n}",
            path.display(),
            bytes.len() / 4
        )));
    }
    bytes
        .chunks_exact(4)
        .map(|c| {
            let p = f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
            if p.is_nan() {
                Err(malformed(path, "NaN probability"))
            } else {
                Ok(unary_from_probability(p))
            }
        })
        .collect()
}

pub fn write_probabilities(path: &Path, probs: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = probs.iter().flat_map(|&p| (p as f32).to_le_bytes()).collect();
    write_bytes(path, &bytes)
}

/// One byte per pixel: PGM for 2D grids, raw + descriptor for 3D.
fn write_labels_as(path: &Path, shape: &GridShape, bytes: &[u8]) -> Result<()> {
    if shape.ndim() == 2 {
        write_pnm(path, shape.dims()[0], shape.dims()[1], 1, bytes)
    } else {
        let desc = RawDescriptor {
            dims: shape.dims().to_vec(),
            channels: 1,
            dtype: Dtype::Uint8,
        };
        let data: Vec<f64> = bytes.iter().map(|&b| f64::from(b)).collect();
        write_raw(path, &desc, &data)
    }
}

/// Label map with foreground as 255.
pub fn write_labels(path: &Path, shape: &GridShape, labels: &[u8]) -> Result<()> {
    let bytes: Vec<u8> = labels.iter().map(|&l| if l != 0 { 255 } else { 0 }).collect();
    write_labels_as(path, shape, &bytes)
}

/// `stem.pgm` for 2D, `stem.raw` for 3D.
pub fn label_file_name(stem: &str, shape: &GridShape) -> String {
    if shape.ndim() == 2 {
        format!("{stem}.pgm")
    } else {
        format!("{stem}.raw")
    }
}

/// Reads a label map written by [`write_labels`].
pub fn read_labels(path: &Path, shape: &GridShape) -> Result<Vec<u8>> {
    let values: Vec<u16> = if is_raw(path) {
        let desc = read_descriptor(path)?;
        read_raw(path, &desc)?.into_iter().map(|v| v as u16).collect()
    } else {
        read_pnm(path)?.samples
    };
    if values.len() != shape.n() {
        return Err(CliError::Mismatch(format!(
            "label map has {} pixels, expected {}",
            values.len(),
            shape.n()
        )));
    }
    Ok(values.into_iter().map(|v| u8::from(v != 0)).collect())
}

/// Writes an image in [0, 1] back out (PGM/PPM for 2D, float32 raw for 3D).
pub fn save_image(path: &Path, image: &GridImage) -> Result<()> {
    let shape = image.shape();
    if shape.ndim() == 2 && !is_raw(path) {
        let bytes: Vec<u8> = image
            .data()
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        write_pnm(path, shape.dims()[0], shape.dims()[1], image.channels(), &bytes)
    } else {
        let desc = RawDescriptor {
            dims: shape.dims().to_vec(),
            channels: image.channels(),
            dtype: Dtype::Float32,
        };
        write_raw(path, &desc, image.data())
    }
}
