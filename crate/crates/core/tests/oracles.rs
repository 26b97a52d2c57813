mod common;

use std::collections::BTreeMap;

use common::*;
use proptest::prelude::*;
use sfda_core::imgproc::{histogram_equalize, histogram_equalize_per_slice};
use sfda_core::metrics::{aggregate, dice, evaluate_case, ks_statistic, surface_voxels, AsdMode};
use sfda_core::{Grid, GridImage, LabelMask, SampleFormat};

#[test]
fn components_match_flood_fill() {
    component_oracle(500, 32, 0xC0FFEE).unwrap();
}

#[test]
fn components_on_dense_small_grids() {
    // tiny extents stress the grid edges
    component_oracle(2000, 4, 7).unwrap();
}

#[test]
fn asd_matches_all_pairs() {
    asd_oracle(200, 16, 0xA5D).unwrap();
}

#[test]
fn surface_matches_brute() {
    let mut rng = sfda_core::rng::SplitMix64::new(99);
    for n in 0..300 {
        let planar = n % 3 == 0;
        let (dims, labels) = random_labels(&mut rng, 12, planar, 1);
        let member: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        for flat in [false, true] {
            assert_eq!(surface_voxels(&member, dims, flat), brute_surface(&member, dims, flat));
        }
    }
}

fn mask(dims: &[usize], labels: Vec<u32>) -> LabelMask {
    let names: BTreeMap<u32, String> = [(1, "liver".to_string())].into();
    LabelMask::new(Grid::unit(dims.to_vec()).unwrap(), labels, names).unwrap()
}

#[test]
fn dice_hand_cases() {
    let a = mask(&[1, 3], vec![1, 1, 0]);
    assert_eq!(dice(&a, &a, 1).unwrap(), 1.0);
    assert_eq!(dice(&a, &mask(&[1, 3], vec![0, 0, 1]), 1).unwrap(), 0.0);
    assert!((dice(&a, &mask(&[1, 3], vec![1, 0, 0]), 1).unwrap() - 0.6667).abs() < 1e-4);
    assert!((dice(&a, &mask(&[1, 3], vec![1, 0, 0]), 1).unwrap() - 2.0 / 3.0).abs() < 1e-9);
}

#[test]
fn empty_prediction_scores_zero_and_na() {
    let gt = mask(&[2, 2], vec![1, 1, 0, 0]);
    let pred = mask(&[2, 2], vec![0; 4]);
    let r = evaluate_case("c", &pred, &gt, AsdMode::Volume).unwrap();
    assert_eq!(r.classes.len(), 1);
    assert_eq!(r.classes[0].dice, 0.0);
    assert_eq!(r.classes[0].asd, None);
    let agg = aggregate(&[r]);
    assert_eq!(agg.classes[0].dice.mean, 0.0);
    assert!(agg.classes[0].asd.is_none());
}

#[test]
fn ks_matches_brute_ecdf() {
    let mut rng = sfda_core::rng::SplitMix64::new(5);
    for _ in 0..500 {
        let na = 1 + rng.below(40) as usize;
        let nb = 1 + rng.below(40) as usize;
        // small integer support forces ties
        let a: Vec<f64> = (0..na).map(|_| rng.below(8) as f64).collect();
        let b: Vec<f64> = (0..nb).map(|_| rng.below(8) as f64 + 0.5 * rng.below(2) as f64).collect();
        let got = ks_statistic(&a, &b).unwrap();
        assert!((got - brute_ks(&a, &b)).abs() < 1e-12, "{a:?} {b:?}");
    }
}

#[test]
fn he_uniform_histogram_is_identity() {
    for levels in [2usize, 4, 16, 256] {
        let values: Vec<f32> = (0..levels).map(|v| v as f32).collect();
        let img = GridImage::new(Grid::unit(vec![1, levels]).unwrap(), 1, SampleFormat::U8, values.clone()).unwrap();
        assert_eq!(histogram_equalize(&img, levels).unwrap().values(), &values[..]);
    }
}

#[test]
fn he_monotone_on_random_images() {
    he_monotone(100, 17).unwrap();
}

#[test]
fn he_constant_image_is_noop() {
    for v in [0.0f32, 77.0, 255.0] {
        let img = GridImage::new(Grid::unit(vec![2, 3, 4]).unwrap(), 1, SampleFormat::U8, vec![v; 24]).unwrap();
        assert_eq!(histogram_equalize(&img, 256).unwrap(), img);
        assert_eq!(histogram_equalize_per_slice(&img, 256).unwrap(), img);
    }
}

proptest! {
    #[test]
    fn dice_is_symmetric_and_bounded(bits in prop::collection::vec(0u32..3, 1..64)) {
        let n = bits.len();
        let a = mask(&[1, n], bits.iter().map(|&b| u32::from(b & 1 == 1)).collect());
        let b = mask(&[1, n], bits.iter().map(|&b| u32::from(b >= 1)).collect());
        let d = dice(&a, &b, 1).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, dice(&b, &a, 1).unwrap());
    }

    #[test]
    fn ks_is_symmetric_and_bounded(a in prop::collection::vec(-5f64..5.0, 1..30), b in prop::collection::vec(-5f64..5.0, 1..30)) {
        let d = ks_statistic(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, ks_statistic(&b, &a).unwrap());
        prop_assert_eq!(ks_statistic(&a, &a).unwrap(), 0.0);
    }
}
