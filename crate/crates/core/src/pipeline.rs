//! Batch commands behind the `sfda` binary.
//!
//! Each command reads a directory (or a text file), works on every case,
//! and writes only under its output path. Cases are matched across
//! directories by file stem. A command returns an [`Outcome`] when it ran to
//! completion, possibly with per-case failures, and a [`PipelineError`]
//! when it aborted.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::chaos::{chaos_batch, ChaosConfig, ChaosError};
use crate::components::Connectivity;
use crate::events;
use crate::imgproc::{histogram_equalize, histogram_equalize_per_slice, intensity_samples, ImgError};
use crate::metrics::{aggregate, evaluate_case, ks_statistic, render_csv, render_markdown, AsdMode, MetricResult};
use crate::model::{AdaptManifest, ManifestEntry, Provenance};
use crate::plausibility::{load_priors, refine_mask, PriorError, RefineError, RefinementReport};
use crate::prompts::{
    canonicalize_lexicon, canonicalize_llm, join_canonical, split_batch, CanonicalPrompt, ChatTransport, Lexicon,
    MetaPromptConfig, PromptError, RawPromptBatch,
};
use crate::tensor_io::{read_image, read_mask, read_prob, write_pnm, write_tensor, Tensor, TensorError};

pub const TENSOR_EXT: &str = "srt";
const IMAGE_EXTS: &[&str] = &["srt", "pgm", "ppm", "pnm"];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Tensor { path: PathBuf, source: TensorError },
    #[error("unmatched files: {}", .0.join(", "))]
    Unmatched(Vec<String>),
    #[error("two inputs share the stem {stem:?} in {}", dir.display())]
    DuplicateStem { dir: PathBuf, stem: String },
    #[error("case {case}: {source}")]
    Refine { case: String, source: RefineError },
    #[error("empty sample set {0}")]
    EmptySet(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Chaos(#[from] ChaosError),
    #[error("{0}")]
    Config(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn tensor_err(path: &Path) -> impl FnOnce(TensorError) -> PipelineError + '_ {
    move |source| PipelineError::Tensor {
        path: path.to_path_buf(),
        source,
    }
}

/// Result of a command that ran to the end.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub written: Vec<PathBuf>,
    /// `(case or line, message)` for every unit of work that failed.
    pub failures: Vec<(String, String)>,
}

impl Outcome {
    /// 0 on full success, 2 when some cases failed.
    pub fn exit_code(&self) -> u8 {
        if self.failures.is_empty() {
            0
        } else {
            2
        }
    }

    fn fail(&mut self, unit: String, message: String) {
        events::error("case_failed", &[("case", unit.clone()), ("message", message.clone())]);
        self.failures.push((unit, message));
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>, outcome: &mut Outcome) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, contents).map_err(io_err(path))?;
    outcome.written.push(path.to_path_buf());
    Ok(())
}

/// Pretty JSON with a trailing newline, as written by every command.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

/// Files of `dir` with one of `exts`, keyed by stem. Hidden files are
/// skipped.
pub fn list_cases(dir: &Path, exts: &[&str]) -> Result<BTreeMap<String, PathBuf>, PipelineError> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with('.') || !path.is_file() {
            continue;
        }
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if !exts.contains(&ext) {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string();
        if out.insert(stem.clone(), path).is_some() {
            return Err(PipelineError::DuplicateStem {
                dir: dir.to_path_buf(),
                stem,
            });
        }
    }
    Ok(out)
}

/// Pairs two stem maps. Every stem present on only one side is reported
/// (as a path) before failing.
pub fn match_cases(
    left: &BTreeMap<String, PathBuf>,
    right: &BTreeMap<String, PathBuf>,
) -> Result<Vec<(String, PathBuf, PathBuf)>, PipelineError> {
    let mut orphans: Vec<String> = Vec::new();
    for (stem, path) in left {
        if !right.contains_key(stem) {
            orphans.push(path.display().to_string());
        }
    }
    for (stem, path) in right {
        if !left.contains_key(stem) {
            orphans.push(path.display().to_string());
        }
    }
    if !orphans.is_empty() {
        for o in &orphans {
            events::error("unmatched_file", &[("path", o.clone())]);
        }
        return Err(PipelineError::Unmatched(orphans));
    }
    Ok(left
        .iter()
        .map(|(stem, p)| (stem.clone(), p.clone(), right[stem].clone()))
        .collect())
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_string()))
        .collect())
}

// canonize

pub enum Canonicalizer<'a> {
    Lexicon(&'a Lexicon),
    Llm {
        config: &'a MetaPromptConfig,
        transport: &'a dyn ChatTransport,
    },
}

impl Canonicalizer<'_> {
    fn run(&self, batch: &RawPromptBatch) -> Result<Vec<CanonicalPrompt>, PromptError> {
        match self {
            Canonicalizer::Lexicon(lex) => canonicalize_lexicon(batch, lex),
            Canonicalizer::Llm { config, transport } => canonicalize_llm(batch, config, *transport),
        }
    }
}

/// Canonicalizes one batch per non-blank input line. Lines that fail are
/// reported by line number; the others are written in order.
pub fn cmd_canonize(input: &Path, canon: &Canonicalizer<'_>, out: &Path) -> Result<Outcome, PipelineError> {
    let lines = read_lines(input)?;
    let mut outcome = Outcome::default();
    let mut text = String::new();
    for (line_no, line) in lines {
        match split_batch(&line).and_then(|b| canon.run(&b)) {
            Ok(prompts) => {
                text.push_str(&join_canonical(&prompts));
                text.push('\n');
            }
            Err(e) => outcome.fail(format!("line {line_no}"), e.to_string()),
        }
    }
    write_file(out, text, &mut outcome)?;
    Ok(outcome)
}

// refine

/// Neighborhood as given on the command line: a neighbor count checked
/// against each case's rank, or a named kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConnectivitySpec {
    Count(u32),
    #[default]
    Full,
    Face,
}

impl std::str::FromStr for ConnectivitySpec {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "4" | "6" | "8" | "26" => Ok(ConnectivitySpec::Count(s.parse().expect("digits"))),
            "full" => Ok(ConnectivitySpec::Full),
            "face" => Ok(ConnectivitySpec::Face),
            other => Err(PipelineError::Config(format!(
                "connectivity must be 4, 8, 6, 26, face or full, got {other:?}"
            ))),
        }
    }
}

impl ConnectivitySpec {
    pub fn resolve(self, rank: usize) -> Result<Connectivity, String> {
        match self {
            ConnectivitySpec::Count(n) => Connectivity::from_count(n, rank).map_err(|e| e.to_string()),
            ConnectivitySpec::Full => Ok(Connectivity::Full),
            ConnectivitySpec::Face => Ok(Connectivity::Face),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RefineArgs {
    pub masks: PathBuf,
    pub images: PathBuf,
    pub probs: Option<PathBuf>,
    pub priors: PathBuf,
    pub out: PathBuf,
    pub connectivity: ConnectivitySpec,
    pub report: Option<PathBuf>,
}

enum CaseResult<T> {
    Done(T),
    Failed(String),
}

/// Refines every mask. A class without a prior aborts the whole run before
/// anything is written; unreadable or inconsistent cases are skipped and
/// reported.
pub fn cmd_refine(args: &RefineArgs) -> Result<Outcome, PipelineError> {
    let priors = load_priors(&args.priors)?;
    let masks = list_cases(&args.masks, &[TENSOR_EXT])?;
    let images = list_cases(&args.images, IMAGE_EXTS)?;
    let mut cases = match_cases(&masks, &images)?;
    let probs = match &args.probs {
        Some(dir) => {
            let probs = list_cases(dir, &[TENSOR_EXT])?;
            let paired = match_cases(&masks, &probs)?;
            paired.into_iter().map(|(s, _, p)| (s, p)).collect()
        }
        None => BTreeMap::new(),
    };
    cases.sort_by(|a, b| a.0.cmp(&b.0));

    let results: Vec<(String, PathBuf, CaseResult<(crate::model::LabelMask, RefinementReport)>)> = cases
        .par_iter()
        .map(|(stem, mask_path, image_path)| {
            let run = || -> Result<_, PipelineError> {
                let mask = read_mask(mask_path).map_err(tensor_err(mask_path))?;
                let image = read_image(image_path).map_err(tensor_err(image_path))?;
                let prob = match probs.get(stem) {
                    Some(p) => Some(read_prob(p).map_err(tensor_err(p))?),
                    None => None,
                };
                let conn = args
                    .connectivity
                    .resolve(mask.grid().rank())
                    .map_err(PipelineError::Config)?;
                refine_mask(&mask, prob.as_ref(), &image, &priors, conn).map_err(|source| PipelineError::Refine {
                    case: stem.clone(),
                    source,
                })
            };
            let r = match run() {
                Ok(v) => Ok(CaseResult::Done(v)),
                Err(e @ PipelineError::Refine {
                    source: RefineError::MissingPrior(_),
                    ..
                }) => Err(e),
                Err(e) => Ok(CaseResult::Failed(e.to_string())),
            };
            r.map(|r| (stem.clone(), mask_path.clone(), r))
        })
        .collect::<Result<_, _>>()?;

    fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;
    let mut outcome = Outcome::default();
    let mut combined: BTreeMap<String, RefinementReport> = BTreeMap::new();
    for (stem, mask_path, result) in results {
        match result {
            CaseResult::Done((mask, report)) => {
                let name = mask_path.file_name().expect("listed file");
                let path = args.out.join(name);
                write_tensor(&path, &Tensor::Mask(mask)).map_err(tensor_err(&path))?;
                outcome.written.push(path);
                write_file(&args.out.join(format!("{stem}.report.json")), to_json(&report), &mut outcome)?;
                events::info(
                    "refined",
                    &[("case", stem.clone()), ("removed_voxels", report.removed_voxels.to_string())],
                );
                combined.insert(stem, report);
            }
            CaseResult::Failed(msg) => outcome.fail(stem, msg),
        }
    }
    if let Some(path) = &args.report {
        write_file(path, to_json(&combined), &mut outcome)?;
    }
    Ok(outcome)
}

// assemble

#[derive(Debug, Clone)]
pub struct AssembleArgs {
    pub images: PathBuf,
    pub pseudolabels: PathBuf,
    pub out: PathBuf,
    pub levels: usize,
    pub per_slice: bool,
}

/// Directory next to the manifest that receives equalized images.
pub const EQUALIZED_DIR: &str = "equalized";

fn equalize_case(image_path: &Path, levels: usize, per_slice: bool) -> Result<crate::model::GridImage, String> {
    let image = read_image(image_path).map_err(|e| format!("{}: {e}", image_path.display()))?;
    let eq = if per_slice {
        histogram_equalize_per_slice(&image, levels)
    } else {
        histogram_equalize(&image, levels)
    };
    eq.map_err(|e: ImgError| format!("{}: {e}", image_path.display()))
}

/// Equalizes every image and writes the manifest pairing each equalized
/// copy with its pseudo-label. Images are written under
/// `<manifest dir>/equalized/`, keeping PNM inputs as PNM.
pub fn cmd_assemble(args: &AssembleArgs) -> Result<Outcome, PipelineError> {
    let images = list_cases(&args.images, IMAGE_EXTS)?;
    let labels = list_cases(&args.pseudolabels, &[TENSOR_EXT])?;
    let cases = match_cases(&images, &labels)?;
    let base = args.out.parent().map(Path::to_path_buf).unwrap_or_default();
    let eq_dir = base.join(EQUALIZED_DIR);

    let results: Vec<_> = cases
        .par_iter()
        .map(|(_, image_path, _)| equalize_case(image_path, args.levels, args.per_slice))
        .collect();

    let mut outcome = Outcome::default();
    let mut entries = Vec::new();
    fs::create_dir_all(&eq_dir).map_err(io_err(&eq_dir))?;
    for ((stem, image_path, label_path), result) in cases.iter().zip(results) {
        let image = match result {
            Ok(img) => img,
            Err(msg) => {
                outcome.fail(stem.clone(), msg);
                continue;
            }
        };
        let keep_pnm = crate::tensor_io::is_pnm_path(image_path) && image.format() == crate::model::SampleFormat::U8;
        let name = if keep_pnm {
            image_path.file_name().expect("listed file").to_string_lossy().into_owned()
        } else {
            format!("{stem}.{TENSOR_EXT}")
        };
        let path = eq_dir.join(&name);
        let written = if keep_pnm {
            write_pnm(&path, &image)
        } else {
            write_tensor(&path, &Tensor::Image(image))
        };
        written.map_err(tensor_err(&path))?;
        outcome.written.push(path);
        entries.push(ManifestEntry {
            case: stem.clone(),
            image: format!("{EQUALIZED_DIR}/{name}"),
            pseudo_label: label_path.display().to_string(),
        });
    }
    let manifest = AdaptManifest {
        entries,
        provenance: Provenance {
            equalization_levels: args.levels,
            per_slice: args.per_slice,
            ..Default::default()
        },
    };
    write_file(&args.out, to_json(&manifest), &mut outcome)?;
    Ok(outcome)
}

// chaos

/// Corrupts every non-blank line of `input` and writes the records as a
/// JSON array.
pub fn cmd_chaos(input: &Path, cfg: &ChaosConfig, out: &Path) -> Result<Outcome, PipelineError> {
    cfg.validate()?;
    let prompts: Vec<String> = read_lines(input)?.into_iter().map(|(_, l)| l.trim().to_string()).collect();
    let records = chaos_batch(&prompts, cfg)?;
    let mut outcome = Outcome::default();
    write_file(out, to_json(&records), &mut outcome)?;
    Ok(outcome)
}

// evaluate

#[derive(Debug, Clone)]
pub struct EvaluateArgs {
    pub pred: PathBuf,
    pub gt: PathBuf,
    pub out: PathBuf,
    pub md: Option<PathBuf>,
    pub asd_mode: AsdMode,
}

/// Scores each predicted mask against its ground truth. Cases that cannot
/// be scored are reported and left out of the aggregate.
pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<Outcome, PipelineError> {
    let pred = list_cases(&args.pred, &[TENSOR_EXT])?;
    let gt = list_cases(&args.gt, &[TENSOR_EXT])?;
    let cases = match_cases(&pred, &gt)?;
    let results: Vec<Result<MetricResult, String>> = cases
        .par_iter()
        .map(|(stem, p, g)| {
            let pm = read_mask(p).map_err(|e| format!("{}: {e}", p.display()))?;
            let gm = read_mask(g).map_err(|e| format!("{}: {e}", g.display()))?;
            evaluate_case(stem, &pm, &gm, args.asd_mode).map_err(|e| e.to_string())
        })
        .collect();
    let mut outcome = Outcome::default();
    let mut ok = Vec::new();
    for ((stem, _, _), r) in cases.iter().zip(results) {
        match r {
            Ok(m) => ok.push(m),
            Err(msg) => outcome.fail(stem.clone(), msg),
        }
    }
    let agg = aggregate(&ok);
    write_file(&args.out, render_csv(&ok, &agg), &mut outcome)?;
    if let Some(md) = &args.md {
        write_file(md, render_markdown(&agg, args.asd_mode), &mut outcome)?;
    }
    Ok(outcome)
}

// ks

/// Pairwise two-sample statistics between pooled intensity sets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KsReport {
    pub sets: Vec<String>,
    pub sample_counts: Vec<usize>,
    pub matrix: Vec<Vec<f64>>,
}

pub fn ks_matrix(sets: &[(String, Vec<f64>)]) -> Result<KsReport, PipelineError> {
    for (name, samples) in sets {
        if samples.is_empty() {
            return Err(PipelineError::EmptySet(name.clone()));
        }
    }
    let n = sets.len();
    let mut matrix = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = ks_statistic(&sets[i].1, &sets[j].1).map_err(|e| PipelineError::Config(e.to_string()))?;
            matrix[i][j] = d;
            matrix[j][i] = d;
        }
    }
    Ok(KsReport {
        sets: sets.iter().map(|s| s.0.clone()).collect(),
        sample_counts: sets.iter().map(|s| s.1.len()).collect(),
        matrix,
    })
}

/// Pools every image sample in `dir` (restricted to labelled voxels when a
/// mask directory is given).
pub fn pooled_samples(dir: &Path, masks: Option<&Path>) -> Result<Vec<f64>, PipelineError> {
    let images = list_cases(dir, IMAGE_EXTS)?;
    let pairs: Vec<(PathBuf, Option<PathBuf>)> = match masks {
        Some(mdir) => {
            let m = list_cases(mdir, &[TENSOR_EXT])?;
            match_cases(&images, &m)?
                .into_iter()
                .map(|(_, i, m)| (i, Some(m)))
                .collect()
        }
        None => images.into_values().map(|p| (p, None)).collect(),
    };
    let mut pooled = Vec::new();
    for (image_path, mask_path) in pairs {
        let image = read_image(&image_path).map_err(tensor_err(&image_path))?;
        let mask = match &mask_path {
            Some(p) => Some(read_mask(p).map_err(tensor_err(p))?),
            None => None,
        };
        let samples = intensity_samples(&image, mask.as_ref())
            .map_err(|e| PipelineError::Config(format!("{}: {e}", image_path.display())))?;
        pooled.extend(samples);
    }
    Ok(pooled)
}

pub fn cmd_ks(sets: &[(String, PathBuf, Option<PathBuf>)], out: &Path) -> Result<Outcome, PipelineError> {
    let pooled = sets
        .iter()
        .map(|(name, dir, mask)| Ok((name.clone(), pooled_samples(dir, mask.as_deref())?)))
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let report = ks_matrix(&pooled)?;
    let mut outcome = Outcome::default();
    write_file(out, to_json(&report), &mut outcome)?;
    Ok(outcome)
}
