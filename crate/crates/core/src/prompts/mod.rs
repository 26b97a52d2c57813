//! Canonical segmentation prompts of the form
//! `<Target> in <Site> <Modality>.` and the two canonicalizers that
//! produce them: a deterministic lexicon matcher and an LLM client.

mod lexicon;
mod llm;

use std::fmt;

use thiserror::Error;

pub use lexicon::{canonicalize_lexicon, Lexicon, LexiconEntry, TargetEntry, DEFAULT_MAX_EDIT};
pub use llm::{
    canonicalize_llm, ChatMessage, ChatRequest, ChatTransport, HttpTransport, MetaPromptConfig,
    TransportError, DEFAULT_META_PROMPT,
};

pub const SEP: &str = "[SEP]";

/// Modalities recognized by [`parse_canonical`] without an explicit
/// vocabulary.
pub const DEFAULT_MODALITIES: &[&str] = &[
    "CT",
    "MR",
    "MRI",
    "ultrasound",
    "endoscopes",
    "T2 weighted MR",
    "MR naive T1",
    "MR T2 FLAIR",
    "post-contrast T1 MR",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("missing ' in ' in {0:?}")]
    MissingIn(String),
    #[error("unrecognized modality {0:?}")]
    UnrecognizedModality(String),
    #[error("empty {0} field")]
    EmptyField(&'static str),
    #[error("target {0:?} contains ' in '")]
    AmbiguousTarget(String),
    #[error("sub-prompt {index} ({text:?}): no target matched")]
    NoTargetMatch { index: usize, text: String },
    #[error("no modality evidence in batch")]
    NoModalityEvidence,
    #[error("no anatomical site could be inferred")]
    SiteUnresolved,
    #[error("lexicon: {0}")]
    Lexicon(String),
    #[error("transport failed after {attempts} attempt(s): {last}")]
    TransportExhausted { attempts: usize, last: String },
    #[error("unparseable completion ({reason}): {raw:?}")]
    UnparseableCompletion { raw: String, reason: String },
    #[error("llm config: {0}")]
    Config(String),
}

/// Ordered sub-prompts of one raw query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPromptBatch(Vec<String>);

impl RawPromptBatch {
    pub fn prompts(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Rejoins with `" [SEP] "`.
    pub fn joined(&self) -> String {
        self.0.join(" [SEP] ")
    }
}

/// Splits on the literal `[SEP]`, trims, and drops empty fragments.
pub fn split_batch(raw: &str) -> Result<RawPromptBatch, PromptError> {
    let parts: Vec<String> = raw
        .split(SEP)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect();
    if parts.is_empty() {
        return Err(PromptError::EmptyBatch);
    }
    Ok(RawPromptBatch(parts))
}

/// A `(target, site, modality)` triple.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CanonicalPrompt {
    target: String,
    site: String,
    modality: String,
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

impl CanonicalPrompt {
    /// Trims each field and upper-cases the first letter of the target.
    pub fn new(target: &str, site: &str, modality: &str) -> Result<Self, PromptError> {
        let (target, site, modality) = (target.trim(), site.trim(), modality.trim());
        for (name, v) in [("target", target), ("site", site), ("modality", modality)] {
            if v.is_empty() {
                return Err(PromptError::EmptyField(name));
            }
        }
        if target.contains(" in ") {
            return Err(PromptError::AmbiguousTarget(target.to_string()));
        }
        Ok(Self {
            target: capitalize(target),
            site: site.to_string(),
            modality: modality.to_string(),
        })
    }

    pub fn target(&self) -> &str {
        &self.target
    }

    pub fn site(&self) -> &str {
        &self.site
    }

    pub fn modality(&self) -> &str {
        &self.modality
    }

    /// Rendering without the closing period.
    pub fn render_bare(&self) -> String {
        format!("{} in {} {}", self.target, self.site, self.modality)
    }
}

impl fmt::Display for CanonicalPrompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} in {} {}.", self.target, self.site, self.modality)
    }
}

pub fn emit_canonical(p: &CanonicalPrompt) -> String {
    p.to_string()
}

/// Joins emitted prompts into one `[SEP]` batch line.
pub fn join_canonical(prompts: &[CanonicalPrompt]) -> String {
    prompts.iter().map(emit_canonical).collect::<Vec<_>>().join(" [SEP] ")
}

pub fn parse_canonical(s: &str) -> Result<CanonicalPrompt, PromptError> {
    parse_canonical_with(s, DEFAULT_MODALITIES)
}

/// Parses `<target> in <site> <modality>[.]`.
///
/// The target ends at the first `" in "`. The modality is the longest
/// vocabulary entry (case-insensitive, whole words) that ends the string;
/// the site is what lies between.
pub fn parse_canonical_with<S: AsRef<str>>(s: &str, modalities: &[S]) -> Result<CanonicalPrompt, PromptError> {
    let body = s.trim();
    let body = body.strip_suffix('.').unwrap_or(body).trim_end();
    let (target, rest) = body
        .split_once(" in ")
        .ok_or_else(|| PromptError::MissingIn(s.to_string()))?;
    let rest = rest.trim();
    let lower = rest.to_ascii_lowercase();
    let mut best: Option<usize> = None;
    for m in modalities {
        let m = m.as_ref().to_ascii_lowercase();
        if lower.len() > m.len() + 1
            && lower.ends_with(&m)
            && lower.as_bytes()[lower.len() - m.len() - 1] == b' '
            && lower.is_char_boundary(lower.len() - m.len())
            && best.is_none_or(|b| m.len() > b)
        {
            best = Some(m.len());
        }
    }
    let Some(mlen) = best else {
        let last = rest.rsplit(' ').next().unwrap_or(rest);
        return Err(PromptError::UnrecognizedModality(last.to_string()));
    };
    let split = rest.len() - mlen;
    let (site, modality) = (&rest[..split - 1], &rest[split..]);
    CanonicalPrompt::new(target, site, modality)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn split_batch_cases() {
        let b = split_batch("Liverr [SEP] Spleen CT [SEP] Abdomen duodenum").unwrap();
        assert_eq!(b.prompts(), &["Liverr", "Spleen CT", "Abdomen duodenum"]);
        assert_eq!(split_batch("Liver").unwrap().len(), 1);
        assert_eq!(split_batch(" [SEP] "), Err(PromptError::EmptyBatch));
        assert_eq!(split_batch(""), Err(PromptError::EmptyBatch));
    }

    #[test]
    fn parse_canonical_cases() {
        let p = parse_canonical("Liver in abdominal CT.").unwrap();
        assert_eq!((p.target(), p.site(), p.modality()), ("Liver", "abdominal", "CT"));
        let p = parse_canonical("Right adrenal gland in abdominal MR.").unwrap();
        assert_eq!((p.target(), p.site(), p.modality()), ("Right adrenal gland", "abdominal", "MR"));
        let p = parse_canonical("Enhancing tissue in head MR T2 FLAIR.").unwrap();
        assert_eq!((p.site(), p.modality()), ("head", "MR T2 FLAIR"));
        assert!(matches!(parse_canonical("Polyp colon endoscopes"), Err(PromptError::MissingIn(_))));
        assert_eq!(
            parse_canonical("Liver in abdominal PET."),
            Err(PromptError::UnrecognizedModality("PET".into()))
        );
        assert!(parse_canonical("Liver in CT.").is_err());
    }

    #[test]
    fn emit_cases() {
        let p = CanonicalPrompt::new("Spleen", "abdominal", "CT").unwrap();
        assert_eq!(emit_canonical(&p), "Spleen in abdominal CT.");
        let p = CanonicalPrompt::new("left ventricle", "heart", "ultrasound").unwrap();
        assert_eq!(emit_canonical(&p), "Left ventricle in heart ultrasound.");
        assert_eq!(p.render_bare(), "Left ventricle in heart ultrasound");
        assert!(CanonicalPrompt::new("", "a", "CT").is_err());
    }

    fn word() -> impl Strategy<Value = String> {
        "[a-z][a-z/-]{0,8}".prop_filter("no keyword", |w| w != "in" && !DEFAULT_MODALITIES.iter().any(|m| m.eq_ignore_ascii_case(w)))
    }

    proptest! {
        #[test]
        fn parse_inverts_emit(
            target in prop::collection::vec(word(), 1..4),
            site in prop::collection::vec(word(), 1..3),
            m in 0..DEFAULT_MODALITIES.len(),
        ) {
            let p = CanonicalPrompt::new(&target.join(" "), &site.join(" "), DEFAULT_MODALITIES[m]).unwrap();
            prop_assert_eq!(parse_canonical(&emit_canonical(&p)).unwrap(), p);
        }
    }
}
