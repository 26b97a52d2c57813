//! Beta-prior plausibility scoring and mean-minus-two-sigma component
//! retention.
//!
//! Each anatomical class carries four Beta distributions over the component
//! features (mean probability, mean R, mean G, mean B). A component's score
//! is the product of the four densities. Within each class, components whose
//! score falls below `mean - 2 * std` (population std) are erased.
//!
//! Scores are handled in log space and divided by the class maximum before
//! the threshold is computed. The retained set does not change under a
//! common positive rescaling of all scores, so this only avoids underflow.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::components::{compute_features, extract_components, Connectivity, Features};
use crate::model::{duplicate_channels, normalize_intensity, GridImage, LabelMask, ProbabilityMap};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PriorError {
    #[error("alpha must be positive, got {0}")]
    AlphaNotPositive(f64),
    #[error("beta must be positive, got {0}")]
    BetaNotPositive(f64),
    #[error("x = {0} outside the open interval (0, 1)")]
    OutsideSupport(f64),
    #[error("class '{class}': missing '{field}' pair")]
    MissingPair { class: String, field: &'static str },
    #[error("duplicate class '{0}'")]
    DuplicateClass(String),
    #[error("class '{class}': {message}")]
    BadEntry { class: String, message: String },
    #[error("priors file: {0}")]
    Parse(String),
    #[error("i/o error reading priors: {0}")]
    Io(String),
    #[error("empty score list")]
    EmptyScores,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RefineError {
    #[error("no prior for class '{0}'")]
    MissingPrior(String),
    #[error("label {0} has no class name")]
    UnnamedLabel(u32),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error(transparent)]
    Component(#[from] crate::components::ComponentError),
    #[error(transparent)]
    Prior(#[from] PriorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BetaParams {
    alpha: f64,
    beta: f64,
}

impl BetaParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, PriorError> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(PriorError::AlphaNotPositive(alpha));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(PriorError::BetaNotPositive(beta));
        }
        Ok(Self { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn ln_beta_fn(&self) -> f64 {
        ln_gamma(self.alpha) + ln_gamma(self.beta) - ln_gamma(self.alpha + self.beta)
    }
}

/// `(α-1) ln x + (β-1) ln(1-x) - ln B(α, β)` for `x` in `(0, 1)`.
pub fn beta_log_pdf(p: BetaParams, x: f64) -> Result<f64, PriorError> {
    if !(x > 0.0 && x < 1.0) {
        return Err(PriorError::OutsideSupport(x));
    }
    Ok((p.alpha - 1.0) * x.ln() + (p.beta - 1.0) * (-x).ln_1p() - p.ln_beta_fn())
}

pub const FEATURE_KEYS: [&str; 4] = ["prob", "r", "g", "b"];

/// Four Beta priors for one class, ordered as the features: probability,
/// R, G, B.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassPrior {
    pub name: String,
    pub params: [BetaParams; 4],
}

/// Sum of the four Beta log-densities.
pub fn plausibility_log_score(features: &Features, prior: &ClassPrior) -> Result<f64, PriorError> {
    features
        .iter()
        .zip(prior.params.iter())
        .map(|(&f, &p)| beta_log_pdf(p, f))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PriorsTable {
    pub classes: BTreeMap<String, ClassPrior>,
    pub provenance: String,
}

impl PriorsTable {
    pub fn get(&self, class: &str) -> Option<&ClassPrior> {
        self.classes.get(class)
    }
}

// Top-level object read as ordered pairs so duplicate class names can be
// rejected instead of silently overwritten.
struct OrderedPairs(Vec<(String, serde_json::Value)>);

impl<'de> Deserialize<'de> for OrderedPairs {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct PairsVisitor;
        impl<'de> Visitor<'de> for PairsVisitor {
            type Value = OrderedPairs;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a JSON object mapping class names to priors")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, serde_json::Value>()? {
                    out.push((k, v));
                }
                Ok(OrderedPairs(out))
            }
        }
        d.deserialize_map(PairsVisitor)
    }
}

/// Reserved top-level key carrying a free-form provenance string.
pub const PROVENANCE_KEY: &str = "_provenance";

/// Parses a priors document. Returns the table and a list of warnings about
/// ignored keys.
pub fn parse_priors(text: &str) -> Result<(PriorsTable, Vec<String>), PriorError> {
    let OrderedPairs(pairs) =
        serde_json::from_str(text).map_err(|e| PriorError::Parse(e.to_string()))?;
    let mut table = PriorsTable::default();
    let mut warnings = Vec::new();
    for (class, value) in pairs {
        if class == PROVENANCE_KEY {
            match value {
                serde_json::Value::String(s) => table.provenance = s,
                _ => warnings.push(format!("'{PROVENANCE_KEY}' is not a string; ignored")),
            }
            continue;
        }
        if table.classes.contains_key(&class) {
            return Err(PriorError::DuplicateClass(class));
        }
        let obj = value.as_object().ok_or_else(|| PriorError::BadEntry {
            class: class.clone(),
            message: "expected an object".into(),
        })?;
        for key in obj.keys() {
            if !FEATURE_KEYS.contains(&key.as_str()) {
                warnings.push(format!("class '{class}': unknown key '{key}' ignored"));
            }
        }
        let mut params = Vec::with_capacity(4);
        for field in FEATURE_KEYS {
            let pair = obj.get(field).ok_or_else(|| PriorError::MissingPair {
                class: class.clone(),
                field,
            })?;
            let nums: Option<Vec<f64>> = pair
                .as_array()
                .map(|a| a.iter().map(serde_json::Value::as_f64).collect::<Option<Vec<_>>>())
                .unwrap_or(None);
            match nums.as_deref() {
                Some(&[a, b]) => params.push(BetaParams::new(a, b)?),
                _ => {
                    return Err(PriorError::BadEntry {
                        class,
                        message: format!("'{field}' must be a pair of numbers"),
                    })
                }
            }
        }
        let params = [params[0], params[1], params[2], params[3]];
        table.classes.insert(class.clone(), ClassPrior { name: class, params });
    }
    Ok((table, warnings))
}

/// Reads a priors file, reporting ignored keys as warning events on stderr.
pub fn load_priors(path: impl AsRef<Path>) -> Result<PriorsTable, PriorError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| PriorError::Io(e.to_string()))?;
    let (mut table, warnings) = parse_priors(&text)?;
    for w in warnings {
        crate::events::warn("priors_key_ignored", &[("path", path.display().to_string()), ("detail", w)]);
    }
    if table.provenance.is_empty() {
        table.provenance = path.display().to_string();
    }
    Ok(table)
}

/// Mean, population standard deviation and `mean - 2 * std` of a score list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Threshold {
    pub mean: f64,
    pub std: f64,
    pub tau: f64,
}

pub fn retention_threshold(scores: &[f64]) -> Result<Threshold, PriorError> {
    if scores.is_empty() {
        return Err(PriorError::EmptyScores);
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    Ok(Threshold {
        mean,
        std,
        tau: mean - 2.0 * std,
    })
}

/// `exp(log_i - max_j log_j)`: linear scores rescaled so the best is 1.
pub fn normalize_log_scores(log_scores: &[f64]) -> Vec<f64> {
    let max = log_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    log_scores.iter().map(|l| (l - max).exp()).collect()
}

/// Which entries of `log_scores` survive the threshold, with the statistics
/// used to decide.
pub fn retained_from_log_scores(log_scores: &[f64]) -> Result<(Vec<bool>, Vec<f64>, Threshold), PriorError> {
    let normalized = normalize_log_scores(log_scores);
    let t = retention_threshold(&normalized)?;
    let keep = normalized.iter().map(|&s| s >= t.tau).collect();
    Ok((keep, normalized, t))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentReport {
    /// Smallest row-major voxel index of the component.
    pub anchor: usize,
    pub voxel_count: usize,
    pub features: Features,
    pub log_score: f64,
    pub normalized_score: f64,
    pub retained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassReport {
    pub label: u32,
    pub name: String,
    /// Statistics over the max-normalized linear scores; `None` for a class
    /// with no components.
    pub threshold: Option<Threshold>,
    pub max_log_score: Option<f64>,
    pub components: Vec<ComponentReport>,
    pub removed_voxels: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RefinementReport {
    pub connectivity: u32,
    pub used_probabilities: bool,
    pub classes: Vec<ClassReport>,
    pub removed_voxels: usize,
}

/// Erases implausible components class by class.
///
/// The returned mask equals the input except that voxels of removed
/// components become background.
pub fn refine_mask(
    mask: &LabelMask,
    prob: Option<&ProbabilityMap>,
    image: &GridImage,
    priors: &PriorsTable,
    connectivity: Connectivity,
) -> Result<(LabelMask, RefinementReport), RefineError> {
    if image.dims() != mask.dims() {
        return Err(RefineError::GridMismatch(format!(
            "image dims {:?} vs mask dims {:?}",
            image.dims(),
            mask.dims()
        )));
    }
    if let Some(p) = prob {
        if p.grid().dims() != mask.dims() {
            return Err(RefineError::GridMismatch(format!(
                "probability dims {:?} vs mask dims {:?}",
                p.grid().dims(),
                mask.dims()
            )));
        }
    }

    let present = mask.present_labels();
    let mut resolved = Vec::with_capacity(present.len());
    for &label in &present {
        let name = mask.class_name(label).ok_or(RefineError::UnnamedLabel(label))?;
        let prior = priors
            .get(name)
            .ok_or_else(|| RefineError::MissingPrior(name.to_string()))?;
        resolved.push((label, name.to_string(), prior));
    }

    let mut report = RefinementReport {
        connectivity: connectivity.neighbor_count(mask.grid().rank()),
        used_probabilities: prob.is_some(),
        ..Default::default()
    };
    if present.is_empty() {
        return Ok((mask.clone(), report));
    }

    let normalized = normalize_intensity(image);
    let rgb = if normalized.channels() == 1 {
        duplicate_channels(&normalized).expect("single channel")
    } else {
        normalized
    };
    let components = extract_components(mask, connectivity);

    let class_results: Vec<Result<(ClassReport, Vec<usize>), RefineError>> = resolved
        .par_iter()
        .map(|(label, name, prior)| {
            let comps = components.class(*label);
            let mut feats = Vec::with_capacity(comps.len());
            let mut logs = Vec::with_capacity(comps.len());
            for c in comps {
                let f = compute_features(c, mask.grid(), prob, &rgb)?;
                logs.push(plausibility_log_score(&f, prior)?);
                feats.push(f);
            }
            let (keep, normalized, threshold) = retained_from_log_scores(&logs)?;
            let mut erase = Vec::new();
            let mut reports = Vec::with_capacity(comps.len());
            for (i, c) in comps.iter().enumerate() {
                if !keep[i] {
                    erase.extend_from_slice(&c.voxels);
                }
                reports.push(ComponentReport {
                    anchor: c.anchor(),
                    voxel_count: c.voxel_count(),
                    features: feats[i],
                    log_score: logs[i],
                    normalized_score: normalized[i],
                    retained: keep[i],
                });
            }
            let max_log = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Ok((
                ClassReport {
                    label: *label,
                    name: name.clone(),
                    threshold: Some(threshold),
                    max_log_score: Some(max_log),
                    components: reports,
                    removed_voxels: erase.len(),
                },
                erase,
            ))
        })
        .collect();

    let mut out = mask.clone();
    for result in class_results {
        let (class_report, erase) = result?;
        let labels = out.labels_mut();
        for i in erase {
            labels[i] = 0;
        }
        report.removed_voxels += class_report.removed_voxels;
        report.classes.push(class_report);
    }
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_prior(a: f64, b: f64) -> ClassPrior {
        let p = BetaParams::new(a, b).unwrap();
        ClassPrior {
            name: "x".into(),
            params: [p; 4],
        }
    }

    #[test]
    fn beta_log_pdf_closed_forms() {
        let u = BetaParams::new(1.0, 1.0).unwrap();
        for x in [1e-6, 0.3, 0.999] {
            assert!(beta_log_pdf(u, x).unwrap().abs() < 1e-12);
        }
        let b22 = BetaParams::new(2.0, 2.0).unwrap();
        assert!((beta_log_pdf(b22, 0.5).unwrap() - 1.5f64.ln()).abs() < 1e-12);
        let b21 = BetaParams::new(2.0, 1.0).unwrap();
        assert!((beta_log_pdf(b21, 0.25).unwrap() - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn beta_log_pdf_rejects_support_edges() {
        let p = BetaParams::new(2.0, 2.0).unwrap();
        for x in [0.0, 1.0, -0.1, 1.1, f64::NAN] {
            assert!(matches!(beta_log_pdf(p, x), Err(PriorError::OutsideSupport(_))));
        }
        assert_eq!(BetaParams::new(0.0, 1.0), Err(PriorError::AlphaNotPositive(0.0)));
        assert_eq!(BetaParams::new(1.0, -2.0), Err(PriorError::BetaNotPositive(-2.0)));
    }

    #[test]
    fn log_score_cases() {
        let f = [0.5; 4];
        assert!(plausibility_log_score(&[0.1, 0.7, 0.2, 0.9], &uniform_prior(1.0, 1.0)).unwrap().abs() < 1e-12);
        let s = plausibility_log_score(&f, &uniform_prior(2.0, 2.0)).unwrap();
        assert!((s - 4.0 * 1.5f64.ln()).abs() < 1e-12);
        assert!((s.exp() - 5.0625).abs() < 1e-12);

        let mut prior = uniform_prior(1.0, 1.0);
        prior.params[0] = BetaParams::new(0.5, 2.0).unwrap();
        let s = plausibility_log_score(&[1.0 - 1e-6, 0.5, 0.5, 0.5], &prior).unwrap();
        assert!(s.is_finite() && s < -10.0, "{s}");
    }

    #[test]
    fn threshold_cases() {
        let t = retention_threshold(&[1.0; 4]).unwrap();
        assert_eq!((t.mean, t.std, t.tau), (1.0, 0.0, 1.0));

        let mut scores = vec![1.0; 9];
        scores.push(0.0);
        let t = retention_threshold(&scores).unwrap();
        assert!((t.mean - 0.9).abs() < 1e-12);
        assert!((t.std - 0.3).abs() < 1e-12);
        assert!((t.tau - 0.3).abs() < 1e-12);

        assert_eq!(retention_threshold(&[]), Err(PriorError::EmptyScores));
    }

    #[test]
    fn two_components_always_kept() {
        for logs in [[0.0, -500.0], [3.0, 2.999], [-1e3, 7.0]] {
            let (keep, _, _) = retained_from_log_scores(&logs).unwrap();
            assert_eq!(keep, vec![true, true]);
        }
    }

    #[test]
    fn parse_priors_cases() {
        let (t, w) = parse_priors(r#"{"liver": {"prob":[2,2],"r":[2,2],"g":[2,2],"b":[2,2]}}"#).unwrap();
        assert_eq!(t.classes.len(), 1);
        assert!(w.is_empty());
        assert_eq!(t.get("liver").unwrap().params[3], BetaParams::new(2.0, 2.0).unwrap());

        let err = parse_priors(r#"{"liver": {"prob":[0,1],"r":[2,2],"g":[2,2],"b":[2,2]}}"#).unwrap_err();
        assert_eq!(err.to_string(), "alpha must be positive, got 0");

        let dup = r#"{"liver": {"prob":[2,2],"r":[2,2],"g":[2,2],"b":[2,2]},
                      "liver": {"prob":[3,2],"r":[2,2],"g":[2,2],"b":[2,2]}}"#;
        assert_eq!(parse_priors(dup).unwrap_err(), PriorError::DuplicateClass("liver".into()));

        let missing = r#"{"liver": {"prob":[2,2],"r":[2,2],"g":[2,2]}}"#;
        assert!(matches!(parse_priors(missing), Err(PriorError::MissingPair { field: "b", .. })));

        let extra = r#"{"_provenance": "test", "liver": {"prob":[2,2],"r":[2,2],"g":[2,2],"b":[2,2],"note":1}}"#;
        let (t, w) = parse_priors(extra).unwrap();
        assert_eq!(t.provenance, "test");
        assert_eq!(w.len(), 1);
    }
}
