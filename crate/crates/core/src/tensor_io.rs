//! SRT1 tensor files and binary PNM (P5/P6).
//!
//! SRT1 layout:
//!
//! ```text
//! "SRT1" | JSON header | '\n' | little-endian payload
//! ```
//!
//! The header is a single-line JSON object with keys, in this order:
//! `kind` (`image` | `mask` | `prob`), `dtype` (`u8` | `u16` | `f32`),
//! `dims`, `spacing`, `channels`, `classes` (list of `{label, name}`; empty
//! for images) and `payload_bytes`. The payload is row-major with channels
//! interleaved. See `docs/srt1.md` for the full description.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Grid, GridImage, LabelMask, ModelError, ProbabilityMap, SampleFormat};

pub const MAGIC: &[u8; 4] = b"SRT1";

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic")]
    BadMagic,
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("payload length {declared} does not match dims x channels x dtype size = {computed}")]
    PayloadMismatch { declared: usize, computed: usize },
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("dtype {dtype} not allowed for {kind}")]
    DtypeKind { dtype: SampleFormat, kind: TensorKind },
    #[error("label {0} not representable in a u16 mask")]
    LabelTooLarge(u32),
    #[error("expected a {expected} tensor, found {found}")]
    WrongKind { expected: TensorKind, found: TensorKind },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("pnm: {0}")]
    Pnm(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorKind {
    Image,
    Mask,
    Prob,
}

impl std::fmt::Display for TensorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TensorKind::Image => "image",
            TensorKind::Mask => "mask",
            TensorKind::Prob => "prob",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub label: u32,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorHeader {
    pub kind: TensorKind,
    pub dtype: SampleFormat,
    pub dims: Vec<usize>,
    pub spacing: Vec<f64>,
    pub channels: usize,
    pub classes: Vec<ClassEntry>,
    pub payload_bytes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    Image(GridImage),
    Mask(LabelMask),
    Prob(ProbabilityMap),
}

impl Tensor {
    pub fn kind(&self) -> TensorKind {
        match self {
            Tensor::Image(_) => TensorKind::Image,
            Tensor::Mask(_) => TensorKind::Mask,
            Tensor::Prob(_) => TensorKind::Prob,
        }
    }
}

impl From<GridImage> for Tensor {
    fn from(v: GridImage) -> Self {
        Tensor::Image(v)
    }
}

impl From<LabelMask> for Tensor {
    fn from(v: LabelMask) -> Self {
        Tensor::Mask(v)
    }
}

impl From<ProbabilityMap> for Tensor {
    fn from(v: ProbabilityMap) -> Self {
        Tensor::Prob(v)
    }
}

fn push_samples(buf: &mut Vec<u8>, format: SampleFormat, values: impl Iterator<Item = f32>) {
    match format {
        SampleFormat::U8 => buf.extend(values.map(|v| v as u8)),
        SampleFormat::U16 => {
            for v in values {
                buf.extend_from_slice(&(v as u16).to_le_bytes());
            }
        }
        SampleFormat::F32 => {
            for v in values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
}

fn decode_samples(format: SampleFormat, bytes: &[u8]) -> Vec<f32> {
    match format {
        SampleFormat::U8 => bytes.iter().map(|&b| f32::from(b)).collect(),
        SampleFormat::U16 => bytes
            .chunks_exact(2)
            .map(|c| f32::from(u16::from_le_bytes([c[0], c[1]])))
            .collect(),
        SampleFormat::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    }
}

/// Serializes a tensor into SRT1 bytes.
pub fn encode_tensor(tensor: &Tensor) -> Result<Vec<u8>, TensorError> {
    let (grid, channels, dtype, classes) = match tensor {
        Tensor::Image(img) => (img.grid(), img.channels(), img.format(), Vec::new()),
        Tensor::Mask(mask) => {
            let max = mask.labels().iter().copied().max().unwrap_or(0);
            let dtype = if max <= u32::from(u8::MAX) {
                SampleFormat::U8
            } else if max <= u32::from(u16::MAX) {
                SampleFormat::U16
            } else {
                return Err(TensorError::LabelTooLarge(max));
            };
            let classes = mask
                .class_names()
                .iter()
                .map(|(&label, name)| ClassEntry {
                    label,
                    name: name.clone(),
                })
                .collect();
            (mask.grid(), 1, dtype, classes)
        }
        Tensor::Prob(prob) => {
            let classes = prob
                .classes()
                .iter()
                .map(|(label, name)| ClassEntry {
                    label: *label,
                    name: name.clone(),
                })
                .collect();
            (prob.grid(), prob.classes().len(), SampleFormat::F32, classes)
        }
    };
    let header = TensorHeader {
        kind: tensor.kind(),
        dtype,
        dims: grid.dims().to_vec(),
        spacing: grid.spacing().to_vec(),
        channels,
        classes,
        payload_bytes: grid.voxel_count() * channels * dtype.byte_size(),
    };
    let json = serde_json::to_string(&header).map_err(|e| TensorError::MalformedHeader(e.to_string()))?;
    let mut buf = Vec::with_capacity(MAGIC.len() + json.len() + 1 + header.payload_bytes);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(json.as_bytes());
    buf.push(b'\n');
    match tensor {
        Tensor::Image(img) => push_samples(&mut buf, dtype, img.values().iter().copied()),
        Tensor::Mask(mask) => push_samples(&mut buf, dtype, mask.labels().iter().map(|&l| l as f32)),
        Tensor::Prob(prob) => push_samples(&mut buf, dtype, prob.values().iter().copied()),
    }
    Ok(buf)
}

/// Parses SRT1 bytes.
pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor, TensorError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(TensorError::BadMagic);
    }
    let rest = &bytes[MAGIC.len()..];
    let newline = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| TensorError::MalformedHeader("missing header terminator".into()))?;
    let header: TensorHeader = serde_json::from_slice(&rest[..newline])
        .map_err(|e| TensorError::MalformedHeader(e.to_string()))?;
    let payload = &rest[newline + 1..];

    let grid = Grid::new(header.dims.clone(), header.spacing.clone())
        .map_err(|e| TensorError::MalformedHeader(e.to_string()))?;
    let computed = grid.voxel_count() * header.channels * header.dtype.byte_size();
    if computed != header.payload_bytes {
        return Err(TensorError::PayloadMismatch {
            declared: header.payload_bytes,
            computed,
        });
    }
    if payload.len() < computed {
        return Err(TensorError::Truncated {
            expected: computed,
            found: payload.len(),
        });
    }
    if payload.len() > computed {
        return Err(TensorError::TrailingBytes(payload.len() - computed));
    }

    let values = decode_samples(header.dtype, payload);
    match header.kind {
        TensorKind::Image => Ok(Tensor::Image(GridImage::new(
            grid,
            header.channels,
            header.dtype,
            values,
        )?)),
        TensorKind::Mask => {
            if header.dtype == SampleFormat::F32 || header.channels != 1 {
                return Err(TensorError::DtypeKind {
                    dtype: header.dtype,
                    kind: header.kind,
                });
            }
            let names = header.classes.into_iter().map(|c| (c.label, c.name)).collect();
            let labels = values.into_iter().map(|v| v as u32).collect();
            Ok(Tensor::Mask(LabelMask::new(grid, labels, names)?))
        }
        TensorKind::Prob => {
            if header.dtype != SampleFormat::F32 {
                return Err(TensorError::DtypeKind {
                    dtype: header.dtype,
                    kind: header.kind,
                });
            }
            if header.classes.len() != header.channels {
                return Err(TensorError::MalformedHeader(format!(
                    "{} classes for {} channels",
                    header.classes.len(),
                    header.channels
                )));
            }
            let classes = header.classes.into_iter().map(|c| (c.label, c.name)).collect();
            Ok(Tensor::Prob(ProbabilityMap::new(grid, classes, values)?))
        }
    }
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &Tensor) -> Result<(), TensorError> {
    fs::write(path, encode_tensor(tensor)?)?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor, TensorError> {
    decode_tensor(&fs::read(path)?)
}

fn wrong_kind(expected: TensorKind, found: &Tensor) -> TensorError {
    TensorError::WrongKind {
        expected,
        found: found.kind(),
    }
}

pub fn read_image(path: impl AsRef<Path>) -> Result<GridImage, TensorError> {
    let path = path.as_ref();
    if is_pnm_path(path) {
        return read_pnm(path);
    }
    match read_tensor(path)? {
        Tensor::Image(v) => Ok(v),
        other => Err(wrong_kind(TensorKind::Image, &other)),
    }
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<LabelMask, TensorError> {
    match read_tensor(path)? {
        Tensor::Mask(v) => Ok(v),
        other => Err(wrong_kind(TensorKind::Mask, &other)),
    }
}

pub fn read_prob(path: impl AsRef<Path>) -> Result<ProbabilityMap, TensorError> {
    match read_tensor(path)? {
        Tensor::Prob(v) => Ok(v),
        other => Err(wrong_kind(TensorKind::Prob, &other)),
    }
}

pub fn is_pnm_path(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("pgm" | "ppm" | "pnm")
    )
}

// PNM

/// Encodes a 2-D 8-bit image as P5 (1 channel) or P6 (3 channels).
pub fn encode_pnm(image: &GridImage) -> Result<Vec<u8>, TensorError> {
    if image.grid().rank() != 2 {
        return Err(TensorError::Pnm("only 2-D images can be written".into()));
    }
    if let Some((i, &v)) = image
        .values()
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.fract() == 0.0 && (0.0..=255.0).contains(*v)))
    {
        return Err(TensorError::Pnm(format!("value {v} at index {i} is not 8-bit")));
    }
    let magic = if image.channels() == 1 { "P5" } else { "P6" };
    let [_, h, w] = image.grid().dims3();
    let mut buf = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    buf.extend(image.values().iter().map(|&v| v as u8));
    Ok(buf)
}

struct PnmCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PnmCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self) -> Result<usize, TensorError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| TensorError::Pnm("malformed header number".into()))
    }
}

pub fn decode_pnm(bytes: &[u8]) -> Result<GridImage, TensorError> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        Some([b'P', d]) if d.is_ascii_digit() => {
            return Err(TensorError::Pnm(format!(
                "unsupported variant P{} (binary P5/P6 only)",
                *d as char
            )))
        }
        _ => return Err(TensorError::BadMagic),
    };
    let mut cur = PnmCursor { bytes, pos: 2 };
    let width = cur.number()?;
    let height = cur.number()?;
    let maxval = cur.number()?;
    if maxval != 255 {
        return Err(TensorError::Pnm(format!("maxval {maxval} unsupported (255 only)")));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(TensorError::Pnm("missing whitespace before raster".into())),
    }
    let expected = width * height * channels;
    let payload = &bytes[cur.pos..];
    if payload.len() < expected {
        return Err(TensorError::Truncated {
            expected,
            found: payload.len(),
        });
    }
    let grid = Grid::unit(vec![height, width])?;
    let values = payload[..expected].iter().map(|&b| f32::from(b)).collect();
    Ok(GridImage::new(grid, channels, SampleFormat::U8, values)?)
}

pub fn write_pnm(path: impl AsRef<Path>, image: &GridImage) -> Result<(), TensorError> {
    fs::write(path, encode_pnm(image)?)?;
    Ok(())
}

pub fn read_pnm(path: impl AsRef<Path>) -> Result<GridImage, TensorError> {
    decode_pnm(&fs::read(path)?)
}
