mod common;

use proptest::prelude::*;
use rand::Rng;

use common::{accuracy_oracle, ap_oracle, miou_oracle, random_instances, rng};
use spcrf::eval::{ap_r, average_precision, miou, pixel_accuracy};
use spcrf::{Instance, InstanceSet, LabelMap};

fn label_pair(seed: u64) -> (LabelMap, LabelMap, usize) {
    let mut rng = rng(seed);
    let l = rng.random_range(1..=6);
    let (rows, cols) = (rng.random_range(1..=10), rng.random_range(1..=10));
    let mut map = || {
        let labels = (0..rows * cols).map(|_| rng.random_range(0..l as u32)).collect();
        LabelMap::new(rows, cols, l, labels).unwrap()
    };
    let (a, b) = (map(), map());
    (a, b, l)
}

fn instance_pair(seed: u64) -> (InstanceSet, InstanceSet) {
    let mut rng = rng(seed);
    let classes = rng.random_range(1..=3);
    let (pred_count, gt_count) = (rng.random_range(0..=8), rng.random_range(1..=5));
    let pred = random_instances(&mut rng, 8, 8, pred_count, classes);
    let gt = random_instances(&mut rng, 8, 8, gt_count, classes);
    (pred, gt)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn swapping_prediction_and_truth_keeps_scores(seed in any::<u64>()) {
        let (a, b, l) = label_pair(seed);
        prop_assert_eq!(miou(&a, &b, l).unwrap(), miou(&b, &a, l).unwrap());
        prop_assert_eq!(pixel_accuracy(&a, &b).unwrap(), pixel_accuracy(&b, &a).unwrap());
    }

    #[test]
    fn segmentation_metrics_match_set_oracles(seed in any::<u64>()) {
        let (a, b, l) = label_pair(seed);
        prop_assert_eq!(miou(&a, &b, l).unwrap(), miou_oracle(&a, &b, l));
        prop_assert_eq!(pixel_accuracy(&a, &b).unwrap(), accuracy_oracle(&a, &b));
    }

    #[test]
    fn ap_matches_the_matching_oracle(seed in any::<u64>(), t in prop::sample::select(vec![0.1, 0.25, 0.5, 0.75, 0.9])) {
        let (pred, gt) = instance_pair(seed);
        let got = ap_r(&pred, &gt, t).unwrap();
        let (per, mean) = ap_oracle(&pred, &gt, t);
        prop_assert_eq!(got.per_class.into_iter().collect::<Vec<_>>(), per);
        prop_assert_eq!(got.mean, mean);
    }

    #[test]
    fn ap_depends_only_on_score_order(seed in any::<u64>(), scale in 0.1f64..=1.0, power in 0.5f64..3.0) {
        let (pred, gt) = instance_pair(seed);
        let rescaled: Vec<Instance> = pred
            .instances()
            .iter()
            .map(|p| Instance { score: (p.score * scale).powf(power), ..p.clone() })
            .collect();
        let rescaled = InstanceSet::new(8, 8, rescaled).unwrap();
        for t in [0.2, 0.5, 0.8] {
            prop_assert_eq!(ap_r(&pred, &gt, t).unwrap(), ap_r(&rescaled, &gt, t).unwrap());
        }
    }

    #[test]
    fn ap_never_rises_with_the_threshold(seed in any::<u64>()) {
        let (pred, gt) = instance_pair(seed);
        let thresholds = [0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95];
        let results: Vec<_> = thresholds.iter().map(|&t| ap_r(&pred, &gt, t).unwrap()).collect();
        for w in results.windows(2) {
            for (class, ap) in &w[1].per_class {
                prop_assert!(*ap <= w[0].per_class[class], "class {class}: {} -> {ap}", w[0].per_class[class]);
            }
        }
    }

    #[test]
    fn average_precision_is_a_fraction(hits in prop::collection::vec(any::<bool>(), 0..20), extra in 0usize..5) {
        let num_gt = hits.iter().filter(|&&h| h).count() + extra;
        let ap = average_precision(&hits, num_gt);
        prop_assert!((0.0..=1.0).contains(&ap));
    }
}

#[test]
fn perfect_and_disjoint_predictions() {
    let a = LabelMap::new(2, 2, 2, vec![0, 0, 1, 1]).unwrap();
    let b = LabelMap::new(2, 2, 2, vec![1, 1, 0, 0]).unwrap();
    assert_eq!(miou(&a, &a, 2).unwrap().1, 1.0);
    assert_eq!(miou(&a, &b, 2).unwrap().1, 0.0);
    assert_eq!(pixel_accuracy(&a, &b).unwrap(), 0.0);
    assert_eq!(average_precision(&[true, false, true], 2), (1.0 + 2.0 / 3.0) / 2.0);
}
