//! Deterministic canonicalizer driven by a vocabulary of targets, sites and
//! modalities.
//!
//! Each sub-prompt is tokenized and matched, ignoring word order, against
//! the vocabulary with a bounded edit distance. The batch then shares one
//! site and one modality, chosen by majority vote over the sub-prompts
//! (ties go to the first occurrence). When no sub-prompt names a site, the
//! targets' default sites vote instead.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CanonicalPrompt, PromptError, RawPromptBatch};
use crate::chaos::levenshtein;

pub const DEFAULT_MAX_EDIT: usize = 2;

const STOPWORDS: &[&str] = &["in", "of", "the", "on"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub name: String,
    #[serde(default)]
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEntry {
    pub name: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    /// Site used when no sub-prompt of the batch names one.
    #[serde(default)]
    pub site: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    #[serde(default = "default_max_edit")]
    pub max_edit: usize,
    pub targets: Vec<TargetEntry>,
    pub sites: Vec<LexiconEntry>,
    pub modalities: Vec<LexiconEntry>,
}

fn default_max_edit() -> usize {
    DEFAULT_MAX_EDIT
}

impl Lexicon {
    pub fn from_json(text: &str) -> Result<Self, PromptError> {
        let lex: Lexicon = serde_json::from_str(text).map_err(|e| PromptError::Lexicon(e.to_string()))?;
        lex.validate()?;
        Ok(lex)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PromptError> {
        let text = fs::read_to_string(path.as_ref())
            .map_err(|e| PromptError::Lexicon(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }

    /// Vocabularies must not share a surface form (case-insensitive), and
    /// every target's default site must be a known site.
    pub fn validate(&self) -> Result<(), PromptError> {
        let mut seen: HashSet<String> = HashSet::new();
        let forms = self
            .targets
            .iter()
            .flat_map(|t| std::iter::once(&t.name).chain(&t.aliases))
            .chain(self.sites.iter().flat_map(|e| std::iter::once(&e.name).chain(&e.aliases)))
            .chain(self.modalities.iter().flat_map(|e| std::iter::once(&e.name).chain(&e.aliases)));
        for form in forms {
            if words(form).is_empty() {
                return Err(PromptError::Lexicon(format!("entry {form:?} has no words")));
            }
            if !seen.insert(form.to_lowercase()) {
                return Err(PromptError::Lexicon(format!("{form:?} appears more than once")));
            }
        }
        for t in &self.targets {
            if let Some(site) = &t.site {
                if self.site_index(site).is_none() {
                    return Err(PromptError::Lexicon(format!(
                        "target {:?} refers to unknown site {site:?}",
                        t.name
                    )));
                }
            }
        }
        Ok(())
    }

    fn site_index(&self, name: &str) -> Option<usize> {
        let lower = name.to_lowercase();
        self.sites.iter().position(|e| {
            e.name.to_lowercase() == lower || e.aliases.iter().any(|a| a.to_lowercase() == lower)
        })
    }

    /// Modality surface forms, for parsing canonical strings.
    pub fn modality_forms(&self) -> Vec<String> {
        self.modalities
            .iter()
            .flat_map(|e| std::iter::once(e.name.clone()).chain(e.aliases.iter().cloned()))
            .collect()
    }

    /// Largest edit distance tolerated against a vocabulary word: a third
    /// of its length, capped at `max_edit`. Two-letter words match exactly.
    fn allowance(&self, word: &str) -> usize {
        (word.chars().count() / 3).min(self.max_edit)
    }
}

fn is_split(c: char) -> bool {
    c.is_whitespace() || c == '-' || c == '/'
}

/// Lower-cased words with surrounding punctuation removed; hyphens and
/// slashes separate words.
fn words(s: &str) -> Vec<String> {
    s.split(is_split)
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Hit {
    entry: usize,
    /// index of the matched surface form: 0 = name, k = alias k-1
    form: usize,
    words: usize,
    distance: usize,
    span: usize,
}

impl Hit {
    // more words, then fewer edits, then tighter span
    fn beats(&self, other: &Hit) -> bool {
        (other.words, self.distance, self.span) < (self.words, other.distance, other.span)
    }
}

/// Best assignment of distinct unused tokens to `form_words`: returns
/// `(total distance, span, used token indices)`.
fn match_form(
    lex: &Lexicon,
    form_words: &[String],
    tokens: &[String],
    used: &[bool],
) -> Option<(usize, usize, Vec<usize>)> {
    let candidates: Vec<Vec<(usize, usize)>> = form_words
        .iter()
        .map(|w| {
            let limit = lex.allowance(w);
            tokens
                .iter()
                .enumerate()
                .filter(|(i, _)| !used[*i])
                .filter_map(|(i, t)| {
                    let d = levenshtein(t, w);
                    (d <= limit).then_some((i, d))
                })
                .collect()
        })
        .collect();
    if candidates.iter().any(Vec::is_empty) {
        return None;
    }
    let mut best: Option<(usize, usize, Vec<usize>)> = None;
    let mut pick = Vec::with_capacity(form_words.len());
    search(&candidates, 0, 0, &mut pick, &mut best);
    best
}

fn search(
    candidates: &[Vec<(usize, usize)>],
    depth: usize,
    dist: usize,
    pick: &mut Vec<usize>,
    best: &mut Option<(usize, usize, Vec<usize>)>,
) {
    if depth == candidates.len() {
        let span = pick.iter().max().unwrap() - pick.iter().min().unwrap();
        let better = match best {
            None => true,
            Some((d, s, _)) => (dist, span) < (*d, *s),
        };
        if better {
            *best = Some((dist, span, pick.clone()));
        }
        return;
    }
    for &(tok, d) in &candidates[depth] {
        if pick.contains(&tok) {
            continue;
        }
        pick.push(tok);
        search(candidates, depth + 1, dist + d, pick, best);
        pick.pop();
    }
}

/// Best entry among `forms_of(entry)` over the unused tokens; marks the
/// winning tokens as used.
fn best_entry<'a, F>(
    lex: &Lexicon,
    entries: usize,
    forms_of: F,
    tokens: &[String],
    used: &mut [bool],
) -> Option<Hit>
where
    F: Fn(usize) -> Vec<&'a String>,
{
    let mut best: Option<(Hit, Vec<usize>)> = None;
    for entry in 0..entries {
        for (form, text) in forms_of(entry).into_iter().enumerate() {
            let form_words = words(text);
            if let Some((distance, span, toks)) = match_form(lex, &form_words, tokens, used) {
                let hit = Hit {
                    entry,
                    form,
                    words: form_words.len(),
                    distance,
                    span,
                };
                if best.as_ref().is_none_or(|(b, _)| hit.beats(b)) {
                    best = Some((hit, toks));
                }
            }
        }
    }
    let (hit, toks) = best?;
    for t in toks {
        used[t] = true;
    }
    Some(hit)
}

struct SubMatch {
    target: Option<Hit>,
    site: Option<Hit>,
    modality: Option<Hit>,
}

fn entry_forms(e: &LexiconEntry) -> Vec<&String> {
    std::iter::once(&e.name).chain(&e.aliases).collect()
}

fn match_sub_prompt(lex: &Lexicon, text: &str) -> SubMatch {
    let tokens: Vec<String> = words(text)
        .into_iter()
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
        .collect();
    let mut used = vec![false; tokens.len()];
    let modality = best_entry(lex, lex.modalities.len(), |i| entry_forms(&lex.modalities[i]), &tokens, &mut used);
    let site = best_entry(lex, lex.sites.len(), |i| entry_forms(&lex.sites[i]), &tokens, &mut used);
    let target = best_entry(
        lex,
        lex.targets.len(),
        |i| std::iter::once(&lex.targets[i].name).chain(&lex.targets[i].aliases).collect(),
        &tokens,
        &mut used,
    );
    SubMatch { target, site, modality }
}

/// Majority vote over `(entry, form)` picks; ties resolved by first
/// occurrence. Returns the entry and the form seen at its first occurrence.
fn vote(picks: &[(usize, usize)]) -> Option<(usize, usize)> {
    let mut tally: Vec<(usize, usize, usize)> = Vec::new(); // entry, first form, count
    for &(entry, form) in picks {
        match tally.iter_mut().find(|t| t.0 == entry) {
            Some(t) => t.2 += 1,
            None => tally.push((entry, form, 1)),
        }
    }
    let mut best: Option<(usize, usize, usize)> = None;
    for t in tally {
        if best.is_none_or(|b| t.2 > b.2) {
            best = Some(t);
        }
    }
    best.map(|(e, f, _)| (e, f))
}

fn form_text(entry: &LexiconEntry, form: usize) -> &str {
    if form == 0 {
        &entry.name
    } else {
        &entry.aliases[form - 1]
    }
}

/// Canonicalizes every sub-prompt of `batch`, preserving order.
///
/// Targets are emitted under their vocabulary name; the shared site and
/// modality keep the surface form that was matched (so "abdomen" and
/// "abdominal" both survive as written in the input).
pub fn canonicalize_lexicon(batch: &RawPromptBatch, lex: &Lexicon) -> Result<Vec<CanonicalPrompt>, PromptError> {
    let matches: Vec<SubMatch> = batch.prompts().iter().map(|p| match_sub_prompt(lex, p)).collect();

    for (index, (m, text)) in matches.iter().zip(batch.prompts()).enumerate() {
        if m.target.is_none() {
            return Err(PromptError::NoTargetMatch {
                index,
                text: text.clone(),
            });
        }
    }

    let modality_picks: Vec<(usize, usize)> = matches.iter().filter_map(|m| m.modality).map(|h| (h.entry, h.form)).collect();
    let (mod_entry, mod_form) = vote(&modality_picks).ok_or(PromptError::NoModalityEvidence)?;
    let modality = form_text(&lex.modalities[mod_entry], mod_form).to_string();

    let site_picks: Vec<(usize, usize)> = matches.iter().filter_map(|m| m.site).map(|h| (h.entry, h.form)).collect();
    let site = match vote(&site_picks) {
        Some((entry, form)) => form_text(&lex.sites[entry], form).to_string(),
        None => {
            let defaults: Vec<(usize, usize)> = matches
                .iter()
                .filter_map(|m| lex.targets[m.target.expect("checked").entry].site.as_deref())
                .filter_map(|s| lex.site_index(s))
                .map(|i| (i, 0))
                .collect();
            let (entry, _) = vote(&defaults).ok_or(PromptError::SiteUnresolved)?;
            lex.sites[entry].name.clone()
        }
    };

    matches
        .iter()
        .map(|m| {
            let target = &lex.targets[m.target.expect("checked").entry].name;
            CanonicalPrompt::new(target, &site, &modality)
        })
        .collect()
}
