mod common;

use common::{all_strings, golden_section, lev_recursive, levenshtein_exhaustive};
use proptest::prelude::*;
use sfda_core::chaos::{chaos_batch, chaos_score, generate_chaos, levenshtein, perturb_once, rate_schedule, ChaosConfig, RateSchedule};
use sfda_core::rng::SplitMix64;

#[test]
fn levenshtein_matches_recursion_on_all_short_strings() {
    // the acceptance run covers length 8; 6 keeps this one quick
    assert_eq!(levenshtein_exhaustive(6), 1093 * 1093);
}

#[test]
fn column_oracle_agrees_with_memoized_recursion() {
    let all = all_strings(&['a', 'b', 'c'], 5);
    let mut rng = SplitMix64::new(11);
    for _ in 0..20_000 {
        let a = &all[rng.below(all.len() as u64) as usize];
        let b = &all[rng.below(all.len() as u64) as usize];
        let ac: Vec<char> = a.chars().collect();
        let bc: Vec<char> = b.chars().collect();
        assert_eq!(levenshtein(a, b), lev_recursive(&ac, &bc), "{a:?} {b:?}");
    }
}

#[test]
fn levenshtein_known_values() {
    assert_eq!(levenshtein("", "abc"), 3);
    assert_eq!(levenshtein("kitten", "sitting"), 3);
    assert_eq!(levenshtein("naïve", "naive"), 1);
    assert_eq!(levenshtein("日本語", "日本"), 1);
}

#[test]
fn score_hand_cases() {
    assert_eq!(chaos_score("Spleen in abdominal CT.", "Spleen in abdominal CT.").unwrap(), 0.0);
    assert_eq!(chaos_score("abcd", "").unwrap(), 100.0);
    assert!((chaos_score("abc", "axc").unwrap() - 100.0 / 3.0).abs() < 1e-9);
    assert!(chaos_score("", "x").is_err());
}

#[test]
fn schedule_at_75_is_exact() {
    let r = rate_schedule(75.0).unwrap();
    assert_eq!((r.spell, r.shuffle, r.remove), (0.375, 0.525, 0.15));
    assert_eq!(rate_schedule(0.0).unwrap(), RateSchedule::zero());
    let r = rate_schedule(100.0).unwrap();
    assert_eq!((r.spell, r.shuffle, r.remove), (0.5, 0.7, 0.2));
    assert!(rate_schedule(100.5).is_err());
    assert!(rate_schedule(-1.0).is_err());
}

#[test]
fn forced_deletion_empties_plain_text() {
    let mut rng = SplitMix64::new(3);
    let r = RateSchedule::new(0.0, 0.0, 1.0).unwrap();
    assert_eq!(perturb_once("abc", r, &mut rng), "");
}

#[test]
fn zero_level_is_identity() {
    for (i, p) in golden_section("abdominal").iter().enumerate() {
        let (out, score) = generate_chaos(p, &ChaosConfig::new(0.0, i as u64).unwrap()).unwrap();
        assert_eq!(&out, p);
        assert_eq!(score, 0.0);
    }
}

#[test]
fn delimiters_and_final_period_survive() {
    let batch = "Spleen in abdominal CT. [SEP] Liver in abdominal CT.";
    let cfg = ChaosConfig::new(100.0, 5).unwrap();
    for seed in 0..50 {
        let (out, _) = generate_chaos(batch, &ChaosConfig { seed, ..cfg.clone() }).unwrap();
        assert_eq!(out.matches("[SEP]").count(), 1, "{out}");
        assert!(out.ends_with('.'), "{out}");
    }
}

#[test]
fn generation_is_deterministic() {
    let prompts = golden_section("abdominal");
    let cfg = ChaosConfig::new(75.0, 42).unwrap();
    let a = serde_json::to_string(&chaos_batch(&prompts, &cfg).unwrap()).unwrap();
    let b = serde_json::to_string(&chaos_batch(&prompts, &cfg).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn monte_carlo_at_level_50() {
    let prompts: Vec<String> = golden_section("abdominal").into_iter().take(15).collect();
    let mut achieved = Vec::new();
    for p in &prompts {
        for seed in 0..200u64 {
            let (out, score) = generate_chaos(p, &ChaosConfig::new(50.0, seed).unwrap()).unwrap();
            assert!((0.0..=100.0).contains(&score));
            assert_eq!(score, chaos_score(p, &out).unwrap());
            achieved.push(score);
        }
    }
    let mean_gap = achieved.iter().map(|s| (s - 50.0).abs()).sum::<f64>() / achieved.len() as f64;
    let lo = achieved.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = achieved.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    eprintln!("level 50: {} draws, mean |achieved - 50| = {mean_gap:.3}, range [{lo:.2}, {hi:.2}]", achieved.len());
    assert!(hi > lo, "achieved scores are degenerate");
}

#[test]
fn hand_corruptions_rescored() {
    // Recomputed for reference only; no particular value is expected.
    let pairs = [
        ("Spleen in abdominal MR.", "pSleen MR in abdomianl."),
        ("Liver in abdominal MR.", "Lvier in MR abdomnal."),
    ];
    for (orig, pert) in pairs {
        let s = chaos_score(orig, pert).unwrap();
        eprintln!("{pert:?}: {s:.2}");
        assert!((0.0..=100.0).contains(&s));
    }
}

proptest! {
    #[test]
    fn triangle_inequality(a in "[a-c]{0,10}", b in "[a-c]{0,10}", c in "[a-c]{0,10}") {
        prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
        prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
    }

    #[test]
    fn zero_score_iff_equal(a in "\\PC{1,12}", b in "\\PC{0,12}") {
        let s = chaos_score(&a, &b).unwrap();
        prop_assert!((0.0..=100.0).contains(&s));
        prop_assert_eq!(s == 0.0, a == b);
    }

    #[test]
    fn achieved_score_is_recomputable(level in 0.0f64..=100.0, seed in any::<u64>(), idx in 0usize..15) {
        let p = &golden_section("abdominal")[idx];
        let cfg = ChaosConfig { candidates: 8, ..ChaosConfig::new(level, seed).unwrap() };
        let (out, score) = generate_chaos(p, &cfg).unwrap();
        prop_assert_eq!(score, chaos_score(p, &out).unwrap());
        prop_assert_eq!(generate_chaos(p, &cfg).unwrap(), (out, score));
    }
}
