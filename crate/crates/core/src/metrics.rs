//! DICE, average symmetric surface distance, the two-sample
//! Kolmogorov-Smirnov statistic, and aggregation into report tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Grid, LabelMask};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("grid mismatch: pred {pred:?} vs gt {gt:?}")]
    GridMismatch { pred: Vec<usize>, gt: Vec<usize> },
    #[error("empty sample list")]
    EmptySamples,
    #[error("NaN in samples")]
    NanSample,
}

fn same_grid(pred: &LabelMask, gt: &LabelMask) -> Result<(), MetricError> {
    if pred.dims() != gt.dims() || pred.grid().spacing() != gt.grid().spacing() {
        return Err(MetricError::GridMismatch {
            pred: pred.dims().to_vec(),
            gt: gt.dims().to_vec(),
        });
    }
    Ok(())
}

/// `2|A∩B| / (|A| + |B|)` over the voxels labeled `label`. Both empty gives
/// 1.0; exactly one empty gives 0.0.
pub fn dice(pred: &LabelMask, gt: &LabelMask, label: u32) -> Result<f64, MetricError> {
    same_grid(pred, gt)?;
    let (mut a, mut b, mut both) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        let (ip, ig) = (p == label, g == label);
        a += usize::from(ip);
        b += usize::from(ig);
        both += usize::from(ip && ig);
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (a + b) as f64)
}

/// Whether surface distances are measured in the full volume or slice by
/// slice along z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AsdMode {
    #[default]
    Volume,
    Slice,
}

/// Boundary voxels of a binary volume `(nz, ny, nx)`: members with at least
/// one face neighbor outside the set. Outside the grid counts as outside the
/// set. `planar` restricts neighbors to the y/x plane.
pub fn surface_voxels(member: &[bool], dims: [usize; 3], planar: bool) -> Vec<usize> {
    let [nz, ny, nx] = dims;
    let inside = |z: isize, y: isize, x: isize| -> bool {
        if z < 0 || y < 0 || x < 0 || z >= nz as isize || y >= ny as isize || x >= nx as isize {
            return false;
        }
        member[(z as usize * ny + y as usize) * nx + x as usize]
    };
    let mut out = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let idx = (z * ny + y) * nx + x;
                if !member[idx] {
                    continue;
                }
                let (zi, yi, xi) = (z as isize, y as isize, x as isize);
                let mut boundary = !inside(zi, yi - 1, xi)
                    || !inside(zi, yi + 1, xi)
                    || !inside(zi, yi, xi - 1)
                    || !inside(zi, yi, xi + 1);
                if !planar {
                    boundary = boundary || !inside(zi - 1, yi, xi) || !inside(zi + 1, yi, xi);
                }
                if boundary {
                    out.push(idx);
                }
            }
        }
    }
    out
}

// Lower envelope of parabolas along one line: out[q] = min_p (s (q-p))^2 + f[p].
fn envelope_1d(f: &[f64], spacing: f64, out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    let w = spacing * spacing;
    v.clear();
    z.clear();
    for q in 0..f.len() {
        if f[q].is_infinite() {
            continue;
        }
        let qf = q as f64;
        loop {
            let Some(&p) = v.last() else {
                v.push(q);
                z.push(f64::NEG_INFINITY);
                break;
            };
            let pf = p as f64;
            let s = ((f[q] + w * qf * qf) - (f[p] + w * pf * pf)) / (2.0 * w * (qf - pf));
            if s <= *z.last().expect("parallel to v") {
                v.pop();
                z.pop();
            } else {
                v.push(q);
                z.push(s);
                break;
            }
        }
    }
    if v.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < q as f64 {
            k += 1;
        }
        let t = spacing * (q as f64 - v[k] as f64);
        *o = t * t + f[v[k]];
    }
}

/// Exact squared Euclidean distance (in mm²) from every voxel to the nearest
/// seed, by separable lower envelopes along z, then y, then x.
pub fn squared_distance_field(seeds: &[usize], dims: [usize; 3], spacing: [f64; 3]) -> Vec<f64> {
    let [nz, ny, nx] = dims;
    let mut field = vec![f64::INFINITY; nz * ny * nx];
    for &s in seeds {
        field[s] = 0.0;
    }
    let mut v = Vec::new();
    let mut zs = Vec::new();
    let mut line = Vec::new();
    let mut out = Vec::new();
    let strides = [ny * nx, nx, 1];
    for axis in 0..3 {
        let n = dims[axis];
        if n == 1 && axis == 0 {
            continue;
        }
        line.resize(n, 0.0);
        out.resize(n, 0.0);
        let stride = strides[axis];
        for base in 0..field.len() {
            // start of a line along `axis`
            if (base / stride) % n != 0 {
                continue;
            }
            for i in 0..n {
                line[i] = field[base + i * stride];
            }
            envelope_1d(&line, spacing[axis], &mut out, &mut v, &mut zs);
            for i in 0..n {
                field[base + i * stride] = out[i];
            }
        }
    }
    field
}

fn directed_mean(from: &[usize], field: &[f64]) -> f64 {
    from.iter().map(|&i| field[i].sqrt()).sum::<f64>() / from.len() as f64
}

fn asd_block(pred: &[bool], gt: &[bool], dims: [usize; 3], spacing: [f64; 3], planar: bool) -> Option<f64> {
    let sp = surface_voxels(pred, dims, planar);
    let sg = surface_voxels(gt, dims, planar);
    if sp.is_empty() || sg.is_empty() {
        return None;
    }
    let to_gt = squared_distance_field(&sg, dims, spacing);
    let to_pred = squared_distance_field(&sp, dims, spacing);
    Some((directed_mean(&sp, &to_gt) + directed_mean(&sg, &to_pred)) / 2.0)
}

/// Average symmetric surface distance in mm for `label`; `None` when either
/// mask lacks the class (rendered "N/A").
///
/// In [`AsdMode::Slice`] each z-slice is treated as a 2-D image and the
/// result is the mean over slices where both masks contain the class.
pub fn asd(pred: &LabelMask, gt: &LabelMask, label: u32, mode: AsdMode) -> Result<Option<f64>, MetricError> {
    same_grid(pred, gt)?;
    let grid: &Grid = gt.grid();
    let p: Vec<bool> = pred.labels().iter().map(|&l| l == label).collect();
    let g: Vec<bool> = gt.labels().iter().map(|&l| l == label).collect();
    let dims = grid.dims3();
    let spacing = grid.spacing3();
    let planar = grid.rank() == 2;
    match mode {
        AsdMode::Volume => Ok(asd_block(&p, &g, dims, spacing, planar)),
        AsdMode::Slice => {
            let [nz, ny, nx] = dims;
            let len = ny * nx;
            let per: Vec<f64> = (0..nz)
                .filter_map(|z| {
                    let r = z * len..(z + 1) * len;
                    asd_block(&p[r.clone()], &g[r], [1, ny, nx], spacing, true)
                })
                .collect();
            if per.is_empty() {
                Ok(None)
            } else {
                Ok(Some(per.iter().sum::<f64>() / per.len() as f64))
            }
        }
    }
}

/// `sup |F_a - F_b|` over the pooled sample points, right-continuous ECDFs.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::EmptySamples);
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(MetricError::NanSample);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < a.len() || j < b.len() {
        let v = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetric {
    pub label: u32,
    pub name: String,
    pub dice: f64,
    pub asd: Option<f64>,
}

/// Per-class metrics of one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub case: String,
    pub classes: Vec<ClassMetric>,
}

/// Scores every class present in either mask. Names come from the ground
/// truth, then the prediction, then `label_<n>`.
pub fn evaluate_case(case: &str, pred: &LabelMask, gt: &LabelMask, mode: AsdMode) -> Result<MetricResult, MetricError> {
    same_grid(pred, gt)?;
    let mut labels = gt.present_labels();
    labels.extend(pred.present_labels());
    labels.sort_unstable();
    labels.dedup();
    let classes = labels
        .into_iter()
        .map(|label| {
            let name = gt
                .class_name(label)
                .or_else(|| pred.class_name(label))
                .map(str::to_string)
                .unwrap_or_else(|| format!("label_{label}"));
            Ok(ClassMetric {
                label,
                name,
                dice: dice(pred, gt, label)?,
                asd: asd(pred, gt, label, mode)?,
            })
        })
        .collect::<Result<_, MetricError>>()?;
    Ok(MetricResult {
        case: case.to_string(),
        classes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Mean and population std; `None` for an empty list.
pub fn mean_std(values: &[f64]) -> Option<MeanStd> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some(MeanStd { mean, std: var.sqrt() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAggregate {
    pub label: u32,
    pub name: String,
    pub cases: usize,
    pub dice: MeanStd,
    /// `None` when every case was N/A.
    pub asd: Option<MeanStd>,
    pub asd_skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub classes: Vec<ClassAggregate>,
    pub mean_dice: Option<f64>,
    pub mean_asd: Option<f64>,
}

/// Per-class mean ± population std across cases. ASD skips N/A cases; the
/// grand means average the class means.
pub fn aggregate(results: &[MetricResult]) -> Aggregate {
    // label -> (name, dice values, asd values, skipped); sorted so the
    // result does not depend on case order
    let mut cases: Vec<&MetricResult> = results.iter().collect();
    cases.sort_by(|a, b| a.case.cmp(&b.case));
    let mut by_label: BTreeMap<u32, (String, Vec<f64>, Vec<f64>, usize)> = BTreeMap::new();
    for r in cases {
        for c in &r.classes {
            let e = by_label
                .entry(c.label)
                .or_insert_with(|| (c.name.clone(), Vec::new(), Vec::new(), 0));
            e.1.push(c.dice);
            match c.asd {
                Some(v) => e.2.push(v),
                None => e.3 += 1,
            }
        }
    }
    let classes: Vec<ClassAggregate> = by_label
        .into_iter()
        .map(|(label, (name, d, a, skipped))| ClassAggregate {
            label,
            name,
            cases: d.len(),
            dice: mean_std(&d).expect("at least one case"),
            asd: mean_std(&a),
            asd_skipped: skipped,
        })
        .collect();
    let dice_means: Vec<f64> = classes.iter().map(|c| c.dice.mean).collect();
    let asd_means: Vec<f64> = classes.iter().filter_map(|c| c.asd.map(|m| m.mean)).collect();
    Aggregate {
        mean_dice: mean_std(&dice_means).map(|m| m.mean),
        mean_asd: mean_std(&asd_means).map(|m| m.mean),
        classes,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "N/A".to_string(), |x| x.to_string())
}

/// CSV with one row per case and class, then `mean` and `std` rows per class
/// and a final `all` row holding the grand means.
pub fn render_csv(results: &[MetricResult], agg: &Aggregate) -> String {
    let mut out = String::from("case,label,class,dice,asd_mm\n");
    for r in results {
        for c in &r.classes {
            let _ = writeln!(out, "{},{},{},{},{}", r.case, c.label, c.name, c.dice, opt(c.asd));
        }
    }
    for c in &agg.classes {
        let _ = writeln!(out, "mean,{},{},{},{}", c.label, c.name, c.dice.mean, opt(c.asd.map(|m| m.mean)));
        let _ = writeln!(out, "std,{},{},{},{}", c.label, c.name, c.dice.std, opt(c.asd.map(|m| m.std)));
    }
    let _ = writeln!(out, "all,,,{},{}", opt(agg.mean_dice), opt(agg.mean_asd));
    out
}

/// Table with one column per class plus the grand mean: DICE in percent and
/// ASD in mm, each as `mean±std` with one decimal.
pub fn render_markdown(agg: &Aggregate, mode: AsdMode) -> String {
    let mut out = String::new();
    let _ = write!(out, "| Metric |");
    for c in &agg.classes {
        let _ = write!(out, " {} |", c.name);
    }
    let _ = writeln!(out, " Mean |");
    let _ = write!(out, "|---|");
    for _ in &agg.classes {
        let _ = write!(out, "---|");
    }
    let _ = writeln!(out, "---|");
    let _ = write!(out, "| DICE (%, mean ± std) |");
    for c in &agg.classes {
        let _ = write!(out, " {:.1}±{:.1} |", c.dice.mean * 100.0, c.dice.std * 100.0);
    }
    let _ = writeln!(out, " {} |", agg.mean_dice.map_or("N/A".into(), |v| format!("{:.1}", v * 100.0)));
    let _ = write!(out, "| ASD (mm, mean ± std) |");
    for c in &agg.classes {
        match c.asd {
            Some(m) => {
                let _ = write!(out, " {:.1}±{:.1} |", m.mean, m.std);
            }
            None => out.push_str(" N/A |"),
        }
    }
    let _ = writeln!(out, " {} |", agg.mean_asd.map_or("N/A".into(), |v| format!("{v:.1}")));
    let mode = match mode {
        AsdMode::Volume => "volume",
        AsdMode::Slice => "slice",
    };
    let _ = writeln!(out, "\nASD computed per {mode}; N/A marks an empty prediction or reference.");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(dims: &[usize], spacing: &[f64], labels: Vec<u32>) -> LabelMask {
        let names = [(1, "liver".to_string()), (2, "spleen".to_string())].into();
        LabelMask::new(Grid::new(dims.to_vec(), spacing.to_vec()).unwrap(), labels, names).unwrap()
    }

    #[test]
    fn dice_cases() {
        let a = mask(&[2, 3], &[1.0, 1.0], vec![1, 1, 1, 1, 0, 0]);
        assert_eq!(dice(&a, &a, 1).unwrap(), 1.0);
        let b = mask(&[2, 3], &[1.0, 1.0], vec![0, 0, 0, 0, 1, 1]);
        assert_eq!(dice(&a, &b, 1).unwrap(), 0.0);
        let c = mask(&[2, 3], &[1.0, 1.0], vec![1, 1, 0, 0, 0, 0]);
        assert!((dice(&a, &c, 1).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(dice(&a, &c, 2).unwrap(), 1.0);
        let empty = mask(&[2, 3], &[1.0, 1.0], vec![0; 6]);
        assert_eq!(dice(&empty, &a, 1).unwrap(), 0.0);
        let other = mask(&[3, 2], &[1.0, 1.0], vec![0; 6]);
        assert!(dice(&a, &other, 1).is_err());
    }

    #[test]
    fn asd_cases() {
        let a = mask(&[1, 1, 2], &[1.0, 1.0, 3.0], vec![1, 0]);
        let b = mask(&[1, 1, 2], &[1.0, 1.0, 3.0], vec![0, 1]);
        assert_eq!(asd(&a, &b, 1, AsdMode::Volume).unwrap(), Some(3.0));
        assert_eq!(asd(&a, &a, 1, AsdMode::Volume).unwrap(), Some(0.0));
        let empty = mask(&[1, 1, 2], &[1.0, 1.0, 3.0], vec![0, 0]);
        assert_eq!(asd(&empty, &b, 1, AsdMode::Volume).unwrap(), None);
        assert_eq!(asd(&a, &b, 1, AsdMode::Slice).unwrap(), Some(3.0));
    }

    #[test]
    fn slice_mode_ignores_z_gaps() {
        // pred in slice 0, gt in slice 1: no slice holds both
        let p = mask(&[2, 1, 1], &[5.0, 1.0, 1.0], vec![1, 0]);
        let g = mask(&[2, 1, 1], &[5.0, 1.0, 1.0], vec![0, 1]);
        assert_eq!(asd(&p, &g, 1, AsdMode::Volume).unwrap(), Some(5.0));
        assert_eq!(asd(&p, &g, 1, AsdMode::Slice).unwrap(), None);
    }

    #[test]
    fn surface_of_solid_block() {
        // 3x3 square: only the centre is interior
        let member = vec![true; 9];
        let s = surface_voxels(&member, [1, 3, 3], true);
        assert_eq!(s, vec![0, 1, 2, 3, 5, 6, 7, 8]);
    }

    #[test]
    fn ks_cases() {
        assert_eq!(ks_statistic(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(ks_statistic(&[0.0; 3], &[1.0; 3]).unwrap(), 1.0);
        assert_eq!(ks_statistic(&[0.0, 1.0], &[0.0, 0.0, 1.0, 1.0]).unwrap(), 0.0);
        // F_a = 1/3, 2/3, 1 and F_b = 0, 1, 1 at 0, 1, 2
        assert!((ks_statistic(&[0.0, 1.0, 2.0], &[1.0]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(ks_statistic(&[0.0, 1.0, 2.0], &[5.0]).unwrap(), 1.0);
        assert!(ks_statistic(&[], &[1.0]).is_err());
    }

    fn result(case: &str, dice: f64, asd: Option<f64>) -> MetricResult {
        MetricResult {
            case: case.into(),
            classes: vec![ClassMetric { label: 1, name: "liver".into(), dice, asd }],
        }
    }

    #[test]
    fn aggregate_cases() {
        let one = aggregate(&[result("a", 0.7, Some(2.0))]);
        assert_eq!(one.classes[0].dice, MeanStd { mean: 0.7, std: 0.0 });

        let two = aggregate(&[result("a", 0.8, Some(1.0)), result("b", 1.0, None)]);
        let c = &two.classes[0];
        assert!((c.dice.mean - 0.9).abs() < 1e-12);
        assert!((c.dice.std - 0.1).abs() < 1e-12);
        assert_eq!(c.asd, Some(MeanStd { mean: 1.0, std: 0.0 }));
        assert_eq!(c.asd_skipped, 1);

        let na = aggregate(&[result("a", 0.0, None)]);
        assert_eq!(na.classes[0].asd, None);
        assert_eq!(na.mean_asd, None);
        assert!(render_markdown(&na, AsdMode::Volume).contains("N/A"));
        assert!(render_csv(&[result("a", 0.0, None)], &na).contains("a,1,liver,0,N/A"));
    }

    #[test]
    fn aggregate_ignores_case_order() {
        let rs = vec![result("a", 0.1, Some(1.0)), result("b", 0.35, Some(2.5)), result("c", 0.9, None)];
        let mut rev = rs.clone();
        rev.reverse();
        assert_eq!(aggregate(&rs), aggregate(&rev));
    }
}
