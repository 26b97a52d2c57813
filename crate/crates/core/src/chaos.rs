//! Controlled prompt corruption for robustness benchmarks.
//!
//! A perturbation pass applies three operators in a fixed order, each with
//! its own rate:
//!
//! 1. typos: every free character is, with probability `spell`, replaced by
//!    a random letter, swapped with the following character, or preceded by
//!    an inserted random letter (one of the three, uniformly);
//! 2. word shuffling: every word is, with probability `shuffle`, swapped with
//!    another word of the same sub-prompt chosen uniformly;
//! 3. deletion: every free character is dropped with probability `remove`.
//!
//! `[SEP]` delimiters and the period closing each sub-prompt are never
//! touched, so corrupted batches still split cleanly. Random letters are
//! drawn from `a..=z`. All randomness comes from [`SplitMix64`]; the draw
//! sequence is part of the contract so runs are reproducible anywhere.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SplitMix64;

pub const SEP: &str = "[SEP]";
pub const DEFAULT_CANDIDATES: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChaosError {
    #[error("original prompt is empty")]
    EmptyOriginal,
    #[error("chaos level {0} outside [0, 100]")]
    LevelOutOfRange(f64),
    #[error("candidate count must be at least 1")]
    NoCandidates,
    #[error("rate {0} outside [0, 1]")]
    RateOutOfRange(f64),
}

/// Unit-cost edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    if a.is_ascii() && b.is_ascii() {
        return edit_distance(a.as_bytes(), b.as_bytes());
    }
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    edit_distance(&a, &b)
}

fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut stack = [0usize; 64];
    let mut heap = Vec::new();
    let row = if b.len() < stack.len() {
        &mut stack[..=b.len()]
    } else {
        heap.resize(b.len() + 1, 0);
        &mut heap[..]
    };
    // single row: row[j] holds L(a[..i], b[..j]); `diag` the previous row's j-1
    for (j, r) in row.iter_mut().enumerate() {
        *r = j;
    }
    for (i, ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = (diag + usize::from(ca != cb)).min(up + 1).min(row[j] + 1);
            diag = up;
        }
    }
    row[b.len()]
}

/// `min(100, L(orig, pert) / max(|orig|, |pert|) * 100)`.
pub fn chaos_score(orig: &str, pert: &str) -> Result<f64, ChaosError> {
    let lo = orig.chars().count();
    if lo == 0 {
        return Err(ChaosError::EmptyOriginal);
    }
    let longest = lo.max(pert.chars().count());
    let d = levenshtein(orig, pert);
    Ok((d as f64 / longest as f64 * 100.0).min(100.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSchedule {
    pub spell: f64,
    pub shuffle: f64,
    pub remove: f64,
}

impl RateSchedule {
    pub fn new(spell: f64, shuffle: f64, remove: f64) -> Result<Self, ChaosError> {
        for r in [spell, shuffle, remove] {
            if !(0.0..=1.0).contains(&r) {
                return Err(ChaosError::RateOutOfRange(r));
            }
        }
        Ok(Self { spell, shuffle, remove })
    }

    pub fn zero() -> Self {
        Self {
            spell: 0.0,
            shuffle: 0.0,
            remove: 0.0,
        }
    }
}

/// Operator rates for a target chaos level: 0.5, 0.7 and 0.2 times `τ/100`.
pub fn rate_schedule(level: f64) -> Result<RateSchedule, ChaosError> {
    if !(0.0..=100.0).contains(&level) {
        return Err(ChaosError::LevelOutOfRange(level));
    }
    Ok(RateSchedule {
        spell: 0.5 * level / 100.0,
        shuffle: 0.7 * level / 100.0,
        remove: 0.2 * level / 100.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Guard {
    Free,
    Sep,
    Period,
}

#[derive(Debug, Clone, Copy)]
struct Ch {
    c: char,
    guard: Guard,
}

impl Ch {
    fn free(c: char) -> Self {
        Self { c, guard: Guard::Free }
    }
}

fn mark(s: &str) -> Vec<Ch> {
    let chars: Vec<char> = s.chars().collect();
    let sep: Vec<char> = SEP.chars().collect();
    let mut out: Vec<Ch> = chars.iter().map(|&c| Ch::free(c)).collect();
    let mut i = 0;
    while i + sep.len() <= chars.len() {
        if chars[i..i + sep.len()] == sep[..] {
            for ch in &mut out[i..i + sep.len()] {
                ch.guard = Guard::Sep;
            }
            i += sep.len();
        } else {
            i += 1;
        }
    }
    // period closing each sub-prompt: last non-space char before [SEP] or end
    let mut boundary = out.len();
    loop {
        let mut k = boundary;
        while k > 0 && out[k - 1].c.is_whitespace() && out[k - 1].guard == Guard::Free {
            k -= 1;
        }
        if k > 0 && out[k - 1].c == '.' && out[k - 1].guard == Guard::Free {
            out[k - 1].guard = Guard::Period;
        }
        match out[..boundary].iter().rposition(|ch| ch.guard == Guard::Sep) {
            Some(p) => {
                let start = out[..=p].iter().rposition(|ch| ch.guard != Guard::Sep).map_or(0, |q| q + 1);
                boundary = start;
            }
            None => break,
        }
    }
    out
}

fn random_letter(rng: &mut SplitMix64) -> char {
    (b'a' + rng.below(26) as u8) as char
}

fn typo_pass(chars: Vec<Ch>, rate: f64, rng: &mut SplitMix64) -> Vec<Ch> {
    let mut out = Vec::with_capacity(chars.len() + 4);
    let mut i = 0;
    while i < chars.len() {
        let ch = chars[i];
        i += 1;
        if ch.guard != Guard::Free || !rng.bernoulli(rate) {
            out.push(ch);
            continue;
        }
        match rng.below(3) {
            0 => out.push(Ch::free(random_letter(rng))),
            1 => match chars.get(i) {
                Some(next) if next.guard == Guard::Free => {
                    out.push(*next);
                    out.push(ch);
                    i += 1;
                }
                _ => out.push(ch),
            },
            _ => {
                out.push(Ch::free(random_letter(rng)));
                out.push(ch);
            }
        }
    }
    out
}

enum Piece {
    Space(Vec<Ch>),
    Word { body: Vec<Ch>, tail: Vec<Ch>, sep: bool },
}

fn split_pieces(chars: &[Ch]) -> Vec<Piece> {
    let mut pieces = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let ws = chars[i].c.is_whitespace() && chars[i].guard == Guard::Free;
        let start = i;
        while i < chars.len() && (chars[i].c.is_whitespace() && chars[i].guard == Guard::Free) == ws {
            i += 1;
        }
        let run = &chars[start..i];
        if ws {
            pieces.push(Piece::Space(run.to_vec()));
        } else {
            let sep = run.iter().any(|c| c.guard == Guard::Sep);
            let (body, tail) = if sep {
                (run.to_vec(), Vec::new())
            } else {
                let cut = run.iter().position(|c| c.guard == Guard::Period).unwrap_or(run.len());
                (run[..cut].to_vec(), run[cut..].to_vec())
            };
            pieces.push(Piece::Word { body, tail, sep });
        }
    }
    pieces
}

fn shuffle_pass(chars: Vec<Ch>, rate: f64, rng: &mut SplitMix64) -> Vec<Ch> {
    let mut pieces = split_pieces(&chars);
    // eligible word positions, grouped by sub-prompt
    let mut segments: Vec<Vec<usize>> = vec![Vec::new()];
    for (k, p) in pieces.iter().enumerate() {
        if let Piece::Word { body, sep, .. } = p {
            if *sep {
                segments.push(Vec::new());
            } else if !body.is_empty() {
                segments.last_mut().expect("non-empty").push(k);
            }
        }
    }
    for seg in &segments {
        let n = seg.len();
        for i in 0..n {
            if !rng.bernoulli(rate) || n < 2 {
                continue;
            }
            let mut j = rng.below(n as u64 - 1) as usize;
            if j >= i {
                j += 1;
            }
            let (a, b) = (seg[i].min(seg[j]), seg[i].max(seg[j]));
            let (left, right) = pieces.split_at_mut(b);
            if let (Piece::Word { body: x, .. }, Piece::Word { body: y, .. }) = (&mut left[a], &mut right[0]) {
                std::mem::swap(x, y);
            }
        }
    }
    pieces
        .into_iter()
        .flat_map(|p| match p {
            Piece::Space(v) => v,
            Piece::Word { mut body, tail, .. } => {
                body.extend(tail);
                body
            }
        })
        .collect()
}

fn delete_pass(chars: Vec<Ch>, rate: f64, rng: &mut SplitMix64) -> Vec<Ch> {
    chars
        .into_iter()
        .filter(|ch| ch.guard != Guard::Free || !rng.bernoulli(rate))
        .collect()
}

/// One corrupted variant of `s`; advances `rng`.
pub fn perturb_once(s: &str, rates: RateSchedule, rng: &mut SplitMix64) -> String {
    let chars = mark(s);
    let chars = typo_pass(chars, rates.spell, rng);
    let chars = shuffle_pass(chars, rates.shuffle, rng);
    let chars = delete_pass(chars, rates.remove, rng);
    chars.into_iter().map(|ch| ch.c).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosConfig {
    pub level: f64,
    pub candidates: usize,
    pub seed: u64,
    /// Replaces the level-derived schedule when set.
    #[serde(default)]
    pub rates: Option<RateSchedule>,
}

impl ChaosConfig {
    pub fn new(level: f64, seed: u64) -> Result<Self, ChaosError> {
        let cfg = Self {
            level,
            candidates: DEFAULT_CANDIDATES,
            seed,
            rates: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ChaosError> {
        if !(0.0..=100.0).contains(&self.level) {
            return Err(ChaosError::LevelOutOfRange(self.level));
        }
        if self.candidates == 0 {
            return Err(ChaosError::NoCandidates);
        }
        if let Some(r) = self.rates {
            RateSchedule::new(r.spell, r.shuffle, r.remove)?;
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<RateSchedule, ChaosError> {
        match self.rates {
            Some(r) => Ok(r),
            None => rate_schedule(self.level),
        }
    }
}

/// Draws `cfg.candidates` variants from one seeded stream and keeps the one
/// whose score is closest to the target level (earliest wins ties).
pub fn generate_chaos(orig: &str, cfg: &ChaosConfig) -> Result<(String, f64), ChaosError> {
    cfg.validate()?;
    if orig.is_empty() {
        return Err(ChaosError::EmptyOriginal);
    }
    let rates = cfg.schedule()?;
    let mut rng = SplitMix64::new(cfg.seed);
    let mut best: Option<(String, f64)> = None;
    for _ in 0..cfg.candidates {
        let cand = perturb_once(orig, rates, &mut rng);
        let score = chaos_score(orig, &cand)?;
        let better = match &best {
            None => true,
            Some((_, s)) => (score - cfg.level).abs() < (s - cfg.level).abs(),
        };
        if better {
            best = Some((cand, score));
        }
    }
    Ok(best.expect("at least one candidate"))
}

/// Per-prompt report emitted by the chaos command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosRecord {
    pub original: String,
    pub perturbed: String,
    pub target_level: f64,
    pub achieved_score: f64,
    pub seed: u64,
}

/// Corrupts each prompt with seed `cfg.seed ^ index`.
pub fn chaos_batch(prompts: &[String], cfg: &ChaosConfig) -> Result<Vec<ChaosRecord>, ChaosError> {
    prompts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let seed = cfg.seed ^ i as u64;
            let local = ChaosConfig { seed, ..cfg.clone() };
            let (perturbed, achieved_score) = generate_chaos(p, &local)?;
            Ok(ChaosRecord {
                original: p.clone(),
                perturbed,
                target_level: cfg.level,
                achieved_score,
                seed,
            })
        })
        .collect()
}
