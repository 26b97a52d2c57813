use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use sfda_core::chaos::{ChaosConfig, DEFAULT_CANDIDATES};
use sfda_core::events;
use sfda_core::imgproc::DEFAULT_LEVELS;
use sfda_core::metrics::AsdMode;
use sfda_core::pipeline::{
    cmd_assemble, cmd_canonize, cmd_chaos, cmd_evaluate, cmd_ks, cmd_refine, AssembleArgs, Canonicalizer,
    ConnectivitySpec, EvaluateArgs, Outcome, PipelineError, RefineArgs,
};
use sfda_core::prompts::{HttpTransport, Lexicon, MetaPromptConfig};

#[derive(Parser)]
#[command(name = "sfda", version, about = "Pseudo-label refinement, prompt canonicalization and evaluation")]
struct Cli {
    /// TOML (or JSON) file supplying defaults for any flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rewrite raw prompt batches (one per line) into canonical form.
    Canonize(CanonizeCmd),
    /// Remove implausible connected components from predicted masks.
    Refine(RefineCmd),
    /// Equalize target images and write the adaptation manifest.
    Assemble(AssembleCmd),
    /// Generate corrupted prompts at a target chaos level.
    Chaos(ChaosCmd),
    /// Score predictions against ground truth (DICE, ASD).
    Evaluate(EvaluateCmd),
    /// Two-sample KS statistic between pooled intensity sets.
    Ks(KsCmd),
}

#[derive(Args, Default)]
struct CanonizeCmd {
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// LLM endpoint config; switches to the HTTP canonicalizer.
    #[arg(long)]
    llm: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Default)]
struct RefineCmd {
    #[arg(long)]
    masks: Option<PathBuf>,
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    probs: Option<PathBuf>,
    #[arg(long)]
    priors: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// 4/8 for 2-D, 6/26 for 3-D, or face/full.
    #[arg(long)]
    connectivity: Option<String>,
    /// Combined JSON report of all cases.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Default)]
struct AssembleCmd {
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    pseudolabels: Option<PathBuf>,
    /// Manifest path; equalized images go to `equalized/` beside it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    per_slice: bool,
}

#[derive(Args, Default)]
struct ChaosCmd {
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    candidates: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum AsdModeArg {
    Volume,
    Slice,
}

impl From<AsdModeArg> for AsdMode {
    fn from(m: AsdModeArg) -> Self {
        match m {
            AsdModeArg::Volume => AsdMode::Volume,
            AsdModeArg::Slice => AsdMode::Slice,
        }
    }
}

#[derive(Args, Default)]
struct EvaluateCmd {
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    md: Option<PathBuf>,
    #[arg(long, value_enum)]
    asd_mode: Option<AsdModeArg>,
}

#[derive(Args, Default)]
struct KsCmd {
    #[arg(long)]
    a: Option<PathBuf>,
    #[arg(long)]
    b: Option<PathBuf>,
    /// Label directories for the two sets; only labelled voxels are pooled.
    #[arg(long, num_args = 2, value_names = ["MASKS_A", "MASKS_B"])]
    mask: Option<Vec<PathBuf>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Per-command defaults read from `--config`. Relative paths are taken
/// relative to the config file.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    jobs: Option<usize>,
    seed: Option<u64>,
    #[serde(default)]
    canonize: CanonizeConf,
    #[serde(default)]
    refine: RefineConf,
    #[serde(default)]
    assemble: AssembleConf,
    #[serde(default)]
    chaos: ChaosConf,
    #[serde(default)]
    evaluate: EvaluateConf,
    #[serde(default)]
    ks: KsConf,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct CanonizeConf {
    input: Option<PathBuf>,
    lexicon: Option<PathBuf>,
    llm: Option<PathBuf>,
    out: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RefineConf {
    masks: Option<PathBuf>,
    images: Option<PathBuf>,
    probs: Option<PathBuf>,
    priors: Option<PathBuf>,
    out: Option<PathBuf>,
    connectivity: Option<String>,
    report: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct AssembleConf {
    images: Option<PathBuf>,
    pseudolabels: Option<PathBuf>,
    out: Option<PathBuf>,
    levels: Option<usize>,
    per_slice: Option<bool>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ChaosConf {
    input: Option<PathBuf>,
    tau: Option<f64>,
    seed: Option<u64>,
    candidates: Option<usize>,
    out: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct EvaluateConf {
    pred: Option<PathBuf>,
    gt: Option<PathBuf>,
    out: Option<PathBuf>,
    md: Option<PathBuf>,
    asd_mode: Option<AsdModeArg>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct KsConf {
    a: Option<PathBuf>,
    b: Option<PathBuf>,
    mask: Option<Vec<PathBuf>>,
    out: Option<PathBuf>,
}

fn load_config(path: &Path) -> Result<(FileConfig, PathBuf), PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    let cfg = match toml::from_str::<FileConfig>(&text) {
        Ok(c) => c,
        Err(toml_err) => serde_json::from_str(&text).map_err(|json_err| {
            PipelineError::Config(format!("{}: not TOML ({toml_err}) nor JSON ({json_err})", path.display()))
        })?,
    };
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, base))
}

/// Flag value, else config value (resolved against the config dir).
fn pick(flag: Option<PathBuf>, conf: Option<PathBuf>, base: &Path) -> Option<PathBuf> {
    flag.or_else(|| conf.map(|p| if p.is_absolute() { p } else { base.join(p) }))
}

fn need<T>(v: Option<T>, flag: &str) -> Result<T, PipelineError> {
    v.ok_or_else(|| PipelineError::Config(format!("missing required --{flag}")))
}

fn run(cli: Cli) -> Result<Outcome, PipelineError> {
    let (conf, base) = match &cli.config {
        Some(p) => load_config(p)?,
        None => (FileConfig::default(), PathBuf::new()),
    };
    if let Some(jobs) = cli.jobs.or(conf.jobs) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Canonize(c) => {
            let k = conf.canonize;
            let input = need(pick(c.input, k.input, &base), "in")?;
            let out = need(pick(c.out, k.out, &base), "out")?;
            match pick(c.llm, k.llm, &base) {
                Some(llm) => {
                    let config = MetaPromptConfig::load(llm)?;
                    let transport = HttpTransport::from_config(&config);
                    cmd_canonize(
                        &input,
                        &Canonicalizer::Llm {
                            config: &config,
                            transport: &transport,
                        },
                        &out,
                    )
                }
                None => {
                    let lex = Lexicon::load(need(pick(c.lexicon, k.lexicon, &base), "lexicon")?)?;
                    cmd_canonize(&input, &Canonicalizer::Lexicon(&lex), &out)
                }
            }
        }
        Command::Refine(c) => {
            let k = conf.refine;
            let connectivity = match c.connectivity.or(k.connectivity) {
                Some(s) => s.parse()?,
                None => ConnectivitySpec::default(),
            };
            cmd_refine(&RefineArgs {
                masks: need(pick(c.masks, k.masks, &base), "masks")?,
                images: need(pick(c.images, k.images, &base), "images")?,
                probs: pick(c.probs, k.probs, &base),
                priors: need(pick(c.priors, k.priors, &base), "priors")?,
                out: need(pick(c.out, k.out, &base), "out")?,
                connectivity,
                report: pick(c.report, k.report, &base),
            })
        }
        Command::Assemble(c) => {
            let k = conf.assemble;
            cmd_assemble(&AssembleArgs {
                images: need(pick(c.images, k.images, &base), "images")?,
                pseudolabels: need(pick(c.pseudolabels, k.pseudolabels, &base), "pseudolabels")?,
                out: need(pick(c.out, k.out, &base), "out")?,
                levels: c.levels.or(k.levels).unwrap_or(DEFAULT_LEVELS),
                per_slice: c.per_slice || k.per_slice.unwrap_or(false),
            })
        }
        Command::Chaos(c) => {
            let k = conf.chaos;
            let input = need(pick(c.input, k.input, &base), "in")?;
            let out = need(pick(c.out, k.out, &base), "out")?;
            let tau = need(c.tau.or(k.tau), "tau")?;
            let seed = need(c.seed.or(k.seed).or(conf.seed), "seed")?;
            let mut cfg = ChaosConfig::new(tau, seed)?;
            cfg.candidates = c.candidates.or(k.candidates).unwrap_or(DEFAULT_CANDIDATES);
            cmd_chaos(&input, &cfg, &out)
        }
        Command::Evaluate(c) => {
            let k = conf.evaluate;
            cmd_evaluate(&EvaluateArgs {
                pred: need(pick(c.pred, k.pred, &base), "pred")?,
                gt: need(pick(c.gt, k.gt, &base), "gt")?,
                out: need(pick(c.out, k.out, &base), "out")?,
                md: pick(c.md, k.md, &base),
                asd_mode: c.asd_mode.or(k.asd_mode).map(AsdMode::from).unwrap_or_default(),
            })
        }
        Command::Ks(c) => {
            let k = conf.ks;
            let a = need(pick(c.a, k.a, &base), "a")?;
            let b = need(pick(c.b, k.b, &base), "b")?;
            let out = need(pick(c.out, k.out, &base), "out")?;
            let masks = match c.mask {
                Some(m) => Some(m),
                None => k.mask.map(|m| m.into_iter().map(|p| pick(None, Some(p), &base).unwrap()).collect()),
            };
            let (ma, mb) = match masks.as_deref() {
                Some([ma, mb]) => (Some(ma.clone()), Some(mb.clone())),
                Some(_) => return Err(PipelineError::Config("--mask takes two directories".into())),
                None => (None, None),
            };
            cmd_ks(&[("a".to_string(), a, ma), ("b".to_string(), b, mb)], &out)
        }
    }
}

fn main() -> ExitCode {
    // usage errors exit 1, keeping 2 for partial failure
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(outcome) => {
            events::info(
                "done",
                &[
                    ("written", outcome.written.len().to_string()),
                    ("failures", outcome.failures.len().to_string()),
                ],
            );
            ExitCode::from(outcome.exit_code())
        }
        Err(e) => {
            events::error("aborted", &[("message", e.to_string())]);
            ExitCode::from(1)
        }
    }
}
