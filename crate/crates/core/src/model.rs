//! Shared domain types: voxel grids, images, label masks, probability maps
//! and the adaptation-set manifest.
//!
//! All buffers are row-major with axis order `(z), y, x`. Multi-channel
//! buffers are interleaved, channel index fastest.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("value count {found} does not match dims x channels = {expected}")]
    ValueCount { expected: usize, found: usize },
    #[error("expected {expected} channel(s), found {found}")]
    ChannelCount { expected: usize, found: usize },
    #[error("probability out of range at index {index}: {value}")]
    ProbabilityOutOfRange { index: usize, value: f32 },
    #[error("value {value} at index {index} not representable as {format}")]
    NotRepresentable {
        index: usize,
        value: f32,
        format: SampleFormat,
    },
    #[error("dims mismatch: {0:?} vs {1:?}")]
    DimsMismatch(Vec<usize>, Vec<usize>),
}

/// Voxel lattice with physical spacing (millimeters per axis).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dims: Vec<usize>,
    spacing: Vec<f64>,
}

impl Grid {
    pub fn new(dims: Vec<usize>, spacing: Vec<f64>) -> Result<Self, ModelError> {
        if dims.len() != 2 && dims.len() != 3 {
            return Err(ModelError::InvalidGrid(format!(
                "rank {} not supported (2-D or 3-D only)",
                dims.len()
            )));
        }
        if spacing.len() != dims.len() {
            return Err(ModelError::InvalidGrid(format!(
                "{} spacing entries for rank {}",
                spacing.len(),
                dims.len()
            )));
        }
        if dims.contains(&0) {
            return Err(ModelError::InvalidGrid("zero extent".into()));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(ModelError::InvalidGrid(
                "spacing entries must be positive and finite".into(),
            ));
        }
        Ok(Self { dims, spacing })
    }

    /// Grid with unit spacing.
    pub fn unit(dims: Vec<usize>) -> Result<Self, ModelError> {
        let n = dims.len();
        Self::new(dims, vec![1.0; n])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    /// Extents padded to three axes `(z, y, x)`; 2-D grids get `z = 1`.
    pub fn dims3(&self) -> [usize; 3] {
        match self.dims.as_slice() {
            [y, x] => [1, *y, *x],
            [z, y, x] => [*z, *y, *x],
            _ => unreachable!("rank validated on construction"),
        }
    }

    /// Spacing padded to three axes; the padded z spacing is 1.
    pub fn spacing3(&self) -> [f64; 3] {
        match self.spacing.as_slice() {
            [y, x] => [1.0, *y, *x],
            [z, y, x] => [*z, *y, *x],
            _ => unreachable!("rank validated on construction"),
        }
    }

    pub fn coords3(&self, index: usize) -> [usize; 3] {
        let [_, ny, nx] = self.dims3();
        [index / (ny * nx), (index / nx) % ny, index % nx]
    }
}

/// Storage type of image samples. Governs file encoding and the 8-bit
/// normalization rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleFormat {
    U8,
    U16,
    F32,
}

impl SampleFormat {
    pub fn byte_size(self) -> usize {
        match self {
            SampleFormat::U8 => 1,
            SampleFormat::U16 => 2,
            SampleFormat::F32 => 4,
        }
    }

    fn admits(self, v: f32) -> bool {
        match self {
            SampleFormat::U8 => v.fract() == 0.0 && (0.0..=255.0).contains(&v),
            SampleFormat::U16 => v.fract() == 0.0 && (0.0..=65535.0).contains(&v),
            SampleFormat::F32 => true,
        }
    }
}

impl fmt::Display for SampleFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SampleFormat::U8 => "u8",
            SampleFormat::U16 => "u16",
            SampleFormat::F32 => "f32",
        })
    }
}

/// Intensity image with 1 or 3 interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct GridImage {
    grid: Grid,
    channels: usize,
    format: SampleFormat,
    values: Vec<f32>,
}

impl GridImage {
    pub fn new(
        grid: Grid,
        channels: usize,
        format: SampleFormat,
        values: Vec<f32>,
    ) -> Result<Self, ModelError> {
        if channels != 1 && channels != 3 {
            return Err(ModelError::ChannelCount {
                expected: 1,
                found: channels,
            });
        }
        let expected = grid.voxel_count() * channels;
        if values.len() != expected {
            return Err(ModelError::ValueCount {
                expected,
                found: values.len(),
            });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !format.admits(**v)) {
            return Err(ModelError::NotRepresentable {
                index,
                value,
                format,
            });
        }
        Ok(Self {
            grid,
            channels,
            format,
            values,
        })
    }

    /// Single-channel real-valued image.
    pub fn gray(grid: Grid, values: Vec<f32>) -> Result<Self, ModelError> {
        Self::new(grid, 1, SampleFormat::F32, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> &[usize] {
        self.grid.dims()
    }

    pub fn spacing(&self) -> &[f64] {
        self.grid.spacing()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn format(&self) -> SampleFormat {
        self.format
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    /// Sample of channel `c` at voxel `index`.
    pub fn at(&self, index: usize, c: usize) -> f32 {
        self.values[index * self.channels + c]
    }
}

/// Integer class labels per voxel; 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    grid: Grid,
    labels: Vec<u32>,
    class_names: BTreeMap<u32, String>,
}

impl LabelMask {
    pub fn new(
        grid: Grid,
        labels: Vec<u32>,
        class_names: BTreeMap<u32, String>,
    ) -> Result<Self, ModelError> {
        let expected = grid.voxel_count();
        if labels.len() != expected {
            return Err(ModelError::ValueCount {
                expected,
                found: labels.len(),
            });
        }
        Ok(Self {
            grid,
            labels,
            class_names,
        })
    }

    /// All-background mask.
    pub fn empty(grid: Grid, class_names: BTreeMap<u32, String>) -> Self {
        let n = grid.voxel_count();
        Self {
            grid,
            labels: vec![0; n],
            class_names,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> &[usize] {
        self.grid.dims()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u32] {
        &mut self.labels
    }

    pub fn class_names(&self) -> &BTreeMap<u32, String> {
        &self.class_names
    }

    pub fn class_name(&self, label: u32) -> Option<&str> {
        self.class_names.get(&label).map(String::as_str)
    }

    /// Distinct nonzero labels present in the buffer, ascending.
    pub fn present_labels(&self) -> Vec<u32> {
        let mut seen: Vec<u32> = self.labels.iter().copied().filter(|&l| l != 0).collect();
        seen.sort_unstable();
        seen.dedup();
        seen
    }

    pub fn count(&self, label: u32) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// Per-class foreground probabilities, one interleaved channel per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    grid: Grid,
    classes: Vec<(u32, String)>,
    values: Vec<f32>,
}

impl ProbabilityMap {
    pub fn new(
        grid: Grid,
        classes: Vec<(u32, String)>,
        values: Vec<f32>,
    ) -> Result<Self, ModelError> {
        if classes.is_empty() {
            return Err(ModelError::ChannelCount {
                expected: 1,
                found: 0,
            });
        }
        let expected = grid.voxel_count() * classes.len();
        if values.len() != expected {
            return Err(ModelError::ValueCount {
                expected,
                found: values.len(),
            });
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(ModelError::ProbabilityOutOfRange { index, value });
        }
        Ok(Self {
            grid,
            classes,
            values,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn classes(&self) -> &[(u32, String)] {
        &self.classes
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn channel_of(&self, label: u32) -> Option<usize> {
        self.classes.iter().position(|(l, _)| *l == label)
    }

    pub fn prob(&self, index: usize, channel: usize) -> f32 {
        self.values[index * self.classes.len() + channel]
    }
}

/// An invariant violation found by [`validate_pair`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DimsMismatch,
    SpacingMismatch,
    UnnamedLabel(u32),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DimsMismatch => f.write_str("dims mismatch"),
            Violation::SpacingMismatch => f.write_str("spacing mismatch"),
            Violation::UnnamedLabel(l) => write!(f, "unnamed label {l}"),
        }
    }
}

/// Lists every invariant the image/mask pair breaks. An empty list means the
/// pair is consistent.
pub fn validate_pair(image: &GridImage, mask: &LabelMask) -> Vec<Violation> {
    let mut out = Vec::new();
    if image.dims() != mask.dims() {
        out.push(Violation::DimsMismatch);
    } else if image.spacing() != mask.grid().spacing() {
        out.push(Violation::SpacingMismatch);
    }
    for label in mask.present_labels() {
        if !mask.class_names().contains_key(&label) {
            out.push(Violation::UnnamedLabel(label));
        }
    }
    out
}

/// Replicates a grayscale image into three identical channels.
pub fn duplicate_channels(image: &GridImage) -> Result<GridImage, ModelError> {
    if image.channels() != 1 {
        return Err(ModelError::ChannelCount {
            expected: 1,
            found: image.channels(),
        });
    }
    let values = image.values().iter().flat_map(|&v| [v, v, v]).collect();
    Ok(GridImage {
        grid: image.grid().clone(),
        channels: 3,
        format: image.format(),
        values,
    })
}

/// Maps intensities into `[0, 1]`.
///
/// `u8` data is divided by 255. Anything else is min-max scaled using the
/// global extrema over all channels; a constant image maps to 0.5.
pub fn normalize_intensity(image: &GridImage) -> GridImage {
    let values = match image.format() {
        SampleFormat::U8 => image.values().iter().map(|&v| v / 255.0).collect(),
        _ => {
            let (lo, hi) = image
                .values()
                .iter()
                .filter(|v| v.is_finite())
                .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            if !(hi > lo) {
                vec![0.5; image.values().len()]
            } else {
                let range = f64::from(hi) - f64::from(lo);
                image
                    .values()
                    .iter()
                    .map(|&v| (((f64::from(v) - f64::from(lo)) / range) as f32).clamp(0.0, 1.0))
                    .collect()
            }
        }
    };
    GridImage {
        grid: image.grid().clone(),
        channels: image.channels(),
        format: SampleFormat::F32,
        values,
    }
}

/// One `(equalized image, pseudo-label)` training pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub case: String,
    pub image: String,
    pub pseudo_label: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub source_prompts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_table: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created: Option<String>,
    pub equalization_levels: usize,
    pub per_slice: bool,
}

/// The adaptation training set: equalized target images paired with
/// pseudo-labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptManifest {
    pub entries: Vec<ManifestEntry>,
    pub provenance: Provenance,
}
