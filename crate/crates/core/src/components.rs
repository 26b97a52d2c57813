//! Connected components of label masks and their appearance features.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Grid, GridImage, LabelMask, ProbabilityMap};

/// Clamp margin keeping features strictly inside the Beta support.
pub const FEATURE_EPS: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ComponentError {
    #[error("dims mismatch: {what} has dims {found:?}, mask has {expected:?}")]
    DimsMismatch {
        what: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("feature image must have 3 channels, found {0}")]
    ChannelCount(usize),
    #[error("probability map has no channel for label {0}")]
    MissingProbClass(u32),
    #[error("unsupported connectivity {0} (use 4/8 in 2-D, 6/26 in 3-D)")]
    BadConnectivity(String),
}

/// Neighborhood used to join voxels into one component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    /// Shared faces only: 4 in 2-D, 6 in 3-D.
    Face,
    /// Faces, edges and corners: 8 in 2-D, 26 in 3-D.
    #[default]
    Full,
}

impl Connectivity {
    /// Interprets a neighbor count (4, 8, 6 or 26) for a grid of `rank`.
    pub fn from_count(count: u32, rank: usize) -> Result<Self, ComponentError> {
        match (count, rank) {
            (4, 2) | (6, 3) => Ok(Connectivity::Face),
            (8, 2) | (26, 3) => Ok(Connectivity::Full),
            _ => Err(ComponentError::BadConnectivity(format!("{count} for rank {rank}"))),
        }
    }

    pub fn neighbor_count(self, rank: usize) -> u32 {
        match (self, rank) {
            (Connectivity::Face, 2) => 4,
            (Connectivity::Face, _) => 6,
            (Connectivity::Full, 2) => 8,
            (Connectivity::Full, _) => 26,
        }
    }

    /// Offsets `(dz, dy, dx)` of the neighborhood, excluding the origin.
    pub fn offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        for dz in -1isize..=1 {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let manhattan = dz.abs() + dy.abs() + dx.abs();
                    let keep = match self {
                        Connectivity::Face => manhattan == 1,
                        Connectivity::Full => manhattan > 0,
                    };
                    if keep {
                        out.push([dz, dy, dx]);
                    }
                }
            }
        }
        out
    }
}

impl FromStr for Connectivity {
    type Err = ComponentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "4" | "6" | "face" => Ok(Connectivity::Face),
            "8" | "26" | "full" => Ok(Connectivity::Full),
            other => Err(ComponentError::BadConnectivity(other.to_string())),
        }
    }
}

/// A maximal connected region of one class label.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub label: u32,
    /// Row-major voxel indices, ascending.
    pub voxels: Vec<usize>,
}

impl Component {
    pub fn voxel_count(&self) -> usize {
        self.voxels.len()
    }

    /// Smallest row-major index; components are ordered by it.
    pub fn anchor(&self) -> usize {
        self.voxels[0]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComponentSet {
    pub by_class: BTreeMap<u32, Vec<Component>>,
}

impl ComponentSet {
    pub fn total(&self) -> usize {
        self.by_class.values().map(Vec::len).sum()
    }

    pub fn class(&self, label: u32) -> &[Component] {
        self.by_class.get(&label).map(Vec::as_slice).unwrap_or(&[])
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        // keep the smaller id as root so roots follow raster order
        if ra < rb {
            self.parent[rb as usize] = ra;
        } else if rb < ra {
            self.parent[ra as usize] = rb;
        }
    }
}

/// Raster-scan labeling with union-find over already-visited neighbors.
///
/// Components are grouped per class label and ordered by their smallest
/// voxel index.
pub fn extract_components(mask: &LabelMask, connectivity: Connectivity) -> ComponentSet {
    let grid = mask.grid();
    let [nz, ny, nx] = grid.dims3();
    let labels = mask.labels();
    // backward half of the neighborhood (lexicographically negative offsets)
    let backward: Vec<[isize; 3]> = connectivity
        .offsets()
        .into_iter()
        .filter(|o| (o[0], o[1], o[2]) < (0, 0, 0))
        .collect();

    let mut provisional = vec![u32::MAX; labels.len()];
    let mut sets = DisjointSet { parent: Vec::new() };

    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let idx = (z * ny + y) * nx + x;
                let label = labels[idx];
                if label == 0 {
                    continue;
                }
                let mut current = u32::MAX;
                for &[dz, dy, dx] in &backward {
                    let (qz, qy, qx) = (z as isize + dz, y as isize + dy, x as isize + dx);
                    if qz < 0 || qy < 0 || qx < 0 || qy >= ny as isize || qx >= nx as isize {
                        continue;
                    }
                    let q = (qz as usize * ny + qy as usize) * nx + qx as usize;
                    if labels[q] != label {
                        continue;
                    }
                    let other = provisional[q];
                    if current == u32::MAX {
                        current = other;
                    } else {
                        sets.union(current, other);
                    }
                }
                if current == u32::MAX {
                    current = sets.parent.len() as u32;
                    sets.parent.push(current);
                }
                provisional[idx] = current;
            }
        }
    }

    let mut slot_of_root: BTreeMap<u32, usize> = BTreeMap::new();
    let mut comps: Vec<Component> = Vec::new();
    for (idx, &p) in provisional.iter().enumerate() {
        if p == u32::MAX {
            continue;
        }
        let root = sets.find(p);
        let slot = *slot_of_root.entry(root).or_insert_with(|| {
            comps.push(Component {
                label: labels[idx],
                voxels: Vec::new(),
            });
            comps.len() - 1
        });
        comps[slot].voxels.push(idx);
    }

    let mut set = ComponentSet::default();
    for comp in comps {
        set.by_class.entry(comp.label).or_default().push(comp);
    }
    set
}

/// Appearance features of one component: mean class probability followed by
/// the mean R, G and B intensities, each clamped to `[eps, 1 - eps]`.
pub type Features = [f64; 4];

fn clamp_feature(v: f64) -> f64 {
    v.clamp(FEATURE_EPS, 1.0 - FEATURE_EPS)
}

fn same_dims(what: &'static str, grid: &Grid, found: &Grid) -> Result<(), ComponentError> {
    if grid.dims() != found.dims() {
        return Err(ComponentError::DimsMismatch {
            what,
            expected: grid.dims().to_vec(),
            found: found.dims().to_vec(),
        });
    }
    Ok(())
}

/// Computes the four plausibility features for `comp`.
///
/// `image` must be normalized to `[0, 1]` with 3 channels. Without a
/// probability map the first feature defaults to `1 - eps`, so pipelines
/// that only have binary masks still run; the score then depends on color
/// alone.
pub fn compute_features(
    comp: &Component,
    grid: &Grid,
    prob: Option<&ProbabilityMap>,
    image: &GridImage,
) -> Result<Features, ComponentError> {
    if image.channels() != 3 {
        return Err(ComponentError::ChannelCount(image.channels()));
    }
    same_dims("image", grid, image.grid())?;
    let n = comp.voxels.len() as f64;

    let f1 = match prob {
        None => 1.0 - FEATURE_EPS,
        Some(prob) => {
            same_dims("probability map", grid, prob.grid())?;
            let ch = prob
                .channel_of(comp.label)
                .ok_or(ComponentError::MissingProbClass(comp.label))?;
            let sum: f64 = comp.voxels.iter().map(|&i| f64::from(prob.prob(i, ch))).sum();
            clamp_feature(sum / n)
        }
    };
    let mut rgb = [0.0f64; 3];
    for &i in &comp.voxels {
        for (c, acc) in rgb.iter_mut().enumerate() {
            *acc += f64::from(image.at(i, c));
        }
    }
    Ok([
        f1,
        clamp_feature(rgb[0] / n),
        clamp_feature(rgb[1] / n),
        clamp_feature(rgb[2] / n),
    ])
}
