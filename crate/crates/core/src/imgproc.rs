//! Global histogram equalization and intensity sampling.

use thiserror::Error;

use crate::model::{normalize_intensity, GridImage, LabelMask, SampleFormat};

pub const DEFAULT_LEVELS: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImgError {
    #[error("equalization needs a single-channel image, found {0} channels")]
    MultiChannel(usize),
    #[error("level count {0} outside [2, 65536]")]
    Levels(usize),
    #[error("mask dims {mask:?} do not match image dims {image:?}")]
    DimsMismatch { image: Vec<usize>, mask: Vec<usize> },
}

/// Level histogram with running cumulative counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    counts: Vec<u64>,
    cumulative: Vec<u64>,
}

impl Histogram {
    pub fn from_levels(levels: &[usize], level_count: usize) -> Self {
        let mut counts = vec![0u64; level_count];
        for &l in levels {
            counts[l] += 1;
        }
        let cumulative = counts
            .iter()
            .scan(0u64, |acc, &c| {
                *acc += c;
                Some(*acc)
            })
            .collect();
        Self { counts, cumulative }
    }

    pub fn level_count(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn cumulative(&self) -> &[u64] {
        &self.cumulative
    }

    pub fn total(&self) -> u64 {
        self.cumulative.last().copied().unwrap_or(0)
    }

    /// Smallest nonzero cumulative count.
    pub fn cdf_min(&self) -> u64 {
        self.cumulative.iter().copied().find(|&c| c > 0).unwrap_or(0)
    }

    /// Equalization lookup table, or `None` when every sample sits on one
    /// level.
    ///
    /// `h(v) = round((cdf(v) - cdf_min) / (N - cdf_min) * (L - 1))`, with
    /// halves rounded away from zero.
    pub fn equalization_lut(&self) -> Option<Vec<usize>> {
        let n = self.total();
        let cdf_min = self.cdf_min();
        if n == cdf_min {
            return None;
        }
        let scale = (self.level_count() - 1) as f64 / (n - cdf_min) as f64;
        Some(
            self.cumulative
                .iter()
                .map(|&c| (c.saturating_sub(cdf_min) as f64 * scale).round() as usize)
                .collect(),
        )
    }
}

/// Maps a single-channel image onto integer levels `0..level_count`.
///
/// Images whose samples are already integers in range are used as-is;
/// everything else goes through [`normalize_intensity`] and is scaled to
/// `L - 1` with rounding.
pub fn quantize(image: &GridImage, level_count: usize) -> Vec<usize> {
    let top = (level_count - 1) as f32;
    let already = image
        .values()
        .iter()
        .all(|&v| v.fract() == 0.0 && (0.0..=top).contains(&v));
    if already {
        image.values().iter().map(|&v| v as usize).collect()
    } else {
        normalize_intensity(image)
            .values()
            .iter()
            .map(|&v| (f64::from(v) * f64::from(top)).round() as usize)
            .collect()
    }
}

fn check(image: &GridImage, levels: usize) -> Result<(), ImgError> {
    if image.channels() != 1 {
        return Err(ImgError::MultiChannel(image.channels()));
    }
    if !(2..=65536).contains(&levels) {
        return Err(ImgError::Levels(levels));
    }
    Ok(())
}

fn output_format(levels: usize) -> SampleFormat {
    if levels <= 256 {
        SampleFormat::U8
    } else {
        SampleFormat::U16
    }
}

/// Global histogram equalization over the whole image (all slices pooled).
///
/// Output samples are levels in `[0, L-1]`, stored as `u8` for `L <= 256`
/// and `u16` otherwise. An image whose samples all quantize to one level is
/// returned unchanged.
pub fn histogram_equalize(image: &GridImage, levels: usize) -> Result<GridImage, ImgError> {
    check(image, levels)?;
    let q = quantize(image, levels);
    let Some(lut) = Histogram::from_levels(&q, levels).equalization_lut() else {
        return Ok(image.clone());
    };
    let values = q.iter().map(|&l| lut[l] as f32).collect();
    Ok(GridImage::new(image.grid().clone(), 1, output_format(levels), values)
        .expect("levels fit the output format"))
}

/// Equalizes each z-slice of a 3-D image with its own histogram after a
/// shared volume-wide quantization. 2-D images behave as
/// [`histogram_equalize`].
pub fn histogram_equalize_per_slice(
    image: &GridImage,
    levels: usize,
) -> Result<GridImage, ImgError> {
    check(image, levels)?;
    if image.grid().rank() == 2 {
        return histogram_equalize(image, levels);
    }
    let q = quantize(image, levels);
    if Histogram::from_levels(&q, levels).equalization_lut().is_none() {
        return Ok(image.clone());
    }
    let [_, ny, nx] = image.grid().dims3();
    let slice_len = ny * nx;
    let mut values = Vec::with_capacity(q.len());
    for slice in q.chunks(slice_len) {
        match Histogram::from_levels(slice, levels).equalization_lut() {
            Some(lut) => values.extend(slice.iter().map(|&l| lut[l] as f32)),
            None => values.extend(slice.iter().map(|&l| l as f32)),
        }
    }
    Ok(GridImage::new(image.grid().clone(), 1, output_format(levels), values)
        .expect("levels fit the output format"))
}

/// Flattened samples in row-major order (channels interleaved), optionally
/// restricted to voxels with a nonzero mask label.
pub fn intensity_samples(image: &GridImage, mask: Option<&LabelMask>) -> Result<Vec<f64>, ImgError> {
    match mask {
        None => Ok(image.values().iter().map(|&v| f64::from(v)).collect()),
        Some(mask) => {
            if mask.dims() != image.dims() {
                return Err(ImgError::DimsMismatch {
                    image: image.dims().to_vec(),
                    mask: mask.dims().to_vec(),
                });
            }
            let c = image.channels();
            Ok(mask
                .labels()
                .iter()
                .enumerate()
                .filter(|(_, &l)| l != 0)
                .flat_map(|(i, _)| image.values()[i * c..(i + 1) * c].iter().map(|&v| f64::from(v)))
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Grid;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn gray(dims: &[usize], values: Vec<f32>) -> GridImage {
        GridImage::gray(Grid::unit(dims.to_vec()).unwrap(), values).unwrap()
    }

    #[test]
    fn uniform_histogram_is_identity() {
        // cdf = 1,2,3,4; cdf_min = 1; h(v) = round((cdf-1)/3 * 3) = v
        let img = gray(&[2, 2], vec![0.0, 1.0, 2.0, 3.0]);
        let out = histogram_equalize(&img, 4).unwrap();
        assert_eq!(out.values(), &[0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn constant_image_unchanged() {
        let img = gray(&[3, 3], vec![17.5; 9]);
        assert_eq!(histogram_equalize(&img, 256).unwrap(), img);
    }

    #[test]
    fn hand_checked_skewed_histogram() {
        // levels 0,0,0,3 with L = 4: cdf = 3,3,3,4; cdf_min = 3; h(0) = 0, h(3) = 3
        let img = gray(&[1, 4], vec![0.0, 0.0, 0.0, 3.0]);
        assert_eq!(histogram_equalize(&img, 4).unwrap().values(), &[0.0, 0.0, 0.0, 3.0]);
        // levels 0,1,1,1 with L = 4: cdf = 1,4,4,4 -> h(1) = round(3/3*3) = 3
        let img = gray(&[1, 4], vec![0.0, 1.0, 1.0, 1.0]);
        assert_eq!(histogram_equalize(&img, 4).unwrap().values(), &[0.0, 3.0, 3.0, 3.0]);
    }

    #[test]
    fn rejects_multichannel_and_bad_levels() {
        let g = Grid::unit(vec![1, 1]).unwrap();
        let rgb = GridImage::new(g, 3, SampleFormat::F32, vec![0.0; 3]).unwrap();
        assert_eq!(histogram_equalize(&rgb, 256), Err(ImgError::MultiChannel(3)));
        assert_eq!(histogram_equalize(&gray(&[1, 1], vec![0.0]), 1), Err(ImgError::Levels(1)));
    }

    #[test]
    fn histogram_invariants() {
        let h = Histogram::from_levels(&[0, 2, 2, 5], 8);
        assert_eq!(h.counts().iter().sum::<u64>(), 4);
        assert_eq!(h.total(), 4);
        assert!(h.cumulative().windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(h.cdf_min(), 1);
    }

    #[test]
    fn per_slice_equalizes_slices_independently() {
        let g = Grid::unit(vec![2, 1, 2]).unwrap();
        let img = GridImage::gray(g, vec![0.0, 1.0, 2.0, 2.0]).unwrap();
        let out = histogram_equalize_per_slice(&img, 4).unwrap();
        // slice 0: levels {0,1} -> {0,3}; slice 1: constant level 2 stays 2
        assert_eq!(out.values(), &[0.0, 3.0, 2.0, 2.0]);
    }

    #[test]
    fn samples_with_and_without_mask() {
        let img = gray(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(intensity_samples(&img, None).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
        let names: BTreeMap<u32, String> = [(1, "a".to_string())].into();
        let mask = LabelMask::new(Grid::unit(vec![2, 2]).unwrap(), vec![0, 0, 1, 0], names.clone()).unwrap();
        assert_eq!(intensity_samples(&img, Some(&mask)).unwrap(), vec![3.0]);
        let other = LabelMask::new(Grid::unit(vec![1, 4]).unwrap(), vec![1; 4], names).unwrap();
        assert!(matches!(intensity_samples(&img, Some(&other)), Err(ImgError::DimsMismatch { .. })));
    }

    fn arb_image() -> impl Strategy<Value = GridImage> {
        (1usize..12, 1usize..12).prop_flat_map(|(h, w)| {
            prop::collection::vec(0u8..=255, h * w).prop_map(move |v| {
                GridImage::new(
                    Grid::unit(vec![h, w]).unwrap(),
                    1,
                    SampleFormat::U8,
                    v.into_iter().map(f32::from).collect(),
                )
                .unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn output_range_and_monotone(img in arb_image()) {
            let out = histogram_equalize(&img, 256).unwrap();
            let (a, b) = (img.values(), out.values());
            for i in 0..a.len() {
                prop_assert!((0.0..=255.0).contains(&b[i]));
                for j in 0..a.len() {
                    if a[i] <= a[j] {
                        prop_assert!(b[i] <= b[j]);
                    }
                }
            }
        }

        #[test]
        fn near_idempotent(img in arb_image()) {
            let once = histogram_equalize(&img, 256).unwrap();
            let twice = histogram_equalize(&once, 256).unwrap();
            for (x, y) in once.values().iter().zip(twice.values()) {
                prop_assert!((x - y).abs() <= 1.0, "{} vs {}", x, y);
            }
        }

        #[test]
        fn real_valued_inputs_stay_in_range(vals in prop::collection::vec(-500f32..500.0, 2..40)) {
            let n = vals.len();
            let out = histogram_equalize(&gray(&[1, n], vals), 64).unwrap();
            prop_assert!(out.values().iter().all(|v| (0.0..=63.0).contains(v)));
        }
    }
}
