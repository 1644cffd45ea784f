use std::collections::BTreeMap;

use mwe_core::data::{
    augment, class_histogram, parse_manifest, resize_bilinear, split, AugmentationSpec, ImageItem, SplitSpec,
    Transform,
};
use mwe_core::evalx::{confusion, metrics, ConfusionMatrix};
use mwe_core::fusion::WoundClass;
use mwe_core::location::BodyMap;
use mwe_core::numerics::Tensor;
use mwe_core::Execution;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ratio(n: u64, d: u64) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

#[test]
fn confusion_matches_per_sample_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let k = 5;
    let truth: Vec<usize> = (0..100).map(|_| rng.random_range(0..k)).collect();
    let pred: Vec<usize> = (0..100).map(|_| rng.random_range(0..k)).collect();
    let cm = confusion(&truth, &pred, k).unwrap();
    for i in 0..k {
        for j in 0..k {
            let count = truth.iter().zip(&pred).filter(|&(&t, &p)| t == i && p == j).count() as u64;
            assert_eq!(cm.get(i, j), count);
        }
    }
}

#[test]
fn four_class_report_matches_formula_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let rows: Vec<Vec<u64>> = (0..4).map(|_| (0..4).map(|_| rng.random_range(0..30)).collect()).collect();
    let cm = ConfusionMatrix::from_rows(&rows).unwrap();
    let r = metrics(&cm).unwrap();
    let total: u64 = rows.iter().flatten().sum();
    let mut f1s = Vec::new();
    for c in 0..4 {
        let tp = rows[c][c];
        let fp: u64 = (0..4).filter(|&i| i != c).map(|i| rows[i][c]).sum();
        let fn_: u64 = (0..4).filter(|&j| j != c).map(|j| rows[c][j]).sum();
        let tn = total - tp - fp - fn_;
        let (p, rc) = (ratio(tp, tp + fp), ratio(tp, tp + fn_));
        let f1 = if p + rc == 0.0 { 0.0 } else { 2.0 * p * rc / (p + rc) };
        let m = &r.per_class[c];
        assert!((m.precision - p).abs() < 1e-12);
        assert!((m.recall - rc).abs() < 1e-12);
        assert!((m.sensitivity - rc).abs() < 1e-12);
        assert!((m.specificity - ratio(tn, tn + fp)).abs() < 1e-12);
        assert!((m.f1 - f1).abs() < 1e-12);
        f1s.push(f1);
    }
    assert!((r.macro_f1 - f1s.iter().sum::<f64>() / 4.0).abs() < 1e-12);
    assert_eq!(r.accuracy, ratio((0..4).map(|i| rows[i][i]).sum(), total));
}

fn cm_strategy() -> impl Strategy<Value = Vec<Vec<u64>>> {
    (2usize..7).prop_flat_map(|k| proptest::collection::vec(proptest::collection::vec(0u64..20, k), k))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn report_values_are_bounded_and_consistent(rows in cm_strategy()) {
        let total: u64 = rows.iter().flatten().sum();
        prop_assume!(total > 0);
        let cm = ConfusionMatrix::from_rows(&rows).unwrap();
        let r = metrics(&cm).unwrap();
        prop_assert_eq!(r.micro_precision, r.accuracy);
        prop_assert_eq!(r.micro_recall, r.accuracy);
        prop_assert_eq!(r.accuracy, cm.trace() as f64 / cm.total() as f64);
        for m in &r.per_class {
            for v in [m.precision, m.recall, m.f1, m.sensitivity, m.specificity] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if m.precision > 0.0 && m.recall > 0.0 {
                prop_assert!(m.f1 <= m.precision.max(m.recall) + 1e-15);
                prop_assert!(m.f1 >= m.precision.min(m.recall) - 1e-15);
            }
        }
    }

    #[test]
    fn split_partitions_the_dataset(labels in proptest::collection::vec(0usize..4, 20..80), seed in any::<u64>(), stratified in any::<bool>()) {
        let spec = SplitSpec { stratified, seed, ..SplitSpec::default() };
        let Ok(s) = split(&labels, &spec) else {
            // Only a class too small for three nonempty splits may fail.
            prop_assert!(stratified);
            return Ok(());
        };
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        prop_assert_eq!(s, split(&labels, &spec).unwrap());
    }
}

#[test]
fn ten_row_manifest_histogram_matches_line_counts() {
    let text = "image_path,label,location_id\n\
                a.png,D,10\nb.png,P,20\nc.png,D,30\nd.png,S,40\ne.png,V,50\n\
                f.png,N,\ng.png,BG,\nh.png,V,60\ni.png,D,70\nj.png,P,483\n";
    let records = parse_manifest(text.as_bytes(), BodyMap::Original484).unwrap();
    assert_eq!(records.len(), 10);
    let mut oracle: BTreeMap<WoundClass, usize> = BTreeMap::new();
    for line in text.lines().skip(1) {
        let label = line.split(',').nth(1).unwrap();
        *oracle.entry(label.parse().unwrap()).or_insert(0) += 1;
    }
    assert_eq!(class_histogram(&records), oracle);
}

#[test]
fn checkerboard_upsampling_matches_hand_values() {
    let board: Vec<f64> = [0.0, 1.0, 1.0, 0.0].iter().flat_map(|&v| [v; 3]).collect();
    let img = Tensor::new(&[2, 2, 3], board).unwrap();
    let out = resize_bilinear(&img, 4, 4).unwrap();
    // Half-pixel centers put output samples at source offsets 0, 0.25, 0.75, 1
    // (after edge clamping) on each axis; f = fx + fy − 2·fx·fy.
    let expect = [
        [0.0, 0.25, 0.75, 1.0],
        [0.25, 0.375, 0.625, 0.75],
        [0.75, 0.625, 0.375, 0.25],
        [1.0, 0.75, 0.25, 0.0],
    ];
    for y in 0..4 {
        for x in 0..4 {
            for c in 0..3 {
                assert!((out.data()[(y * 4 + x) * 3 + c] - expect[y][x]).abs() < 1e-15, "({y},{x})");
            }
        }
    }
}

#[test]
fn augmented_pixels_stay_in_unit_range_and_repeat() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let items: Vec<ImageItem> = (0..25)
        .map(|i| ImageItem {
            image: Tensor::new(&[6, 6, 3], (0..108).map(|_| rng.random::<f64>()).collect()).unwrap(),
            label: WoundClass::ALL[i % 4],
            location_id: Some(i as u16),
            source_id: i,
            transform: Transform::IDENTITY,
        })
        .collect();
    let spec = AugmentationSpec {
        brightness_delta: 0.4,
        contrast_range: (0.5, 2.0),
        ..AugmentationSpec::default()
    };
    let out = augment(&items, &spec, 17, Execution::Parallel).unwrap();
    assert_eq!(out.len(), 100);
    for it in &out {
        assert!(it.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(it.label, items[it.source_id].label);
    }
    let again = augment(&items, &spec, 17, Execution::Sequential).unwrap();
    assert_eq!(out, again);
}
