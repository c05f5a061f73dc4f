mod common;

use proptest::prelude::*;
use rand::Rng;

use common::{pool_oracle, random_partition, rng};
use spcrf::pool::{pool_superpixels, sp_cam, ReceptiveFieldGrid};
use spcrf::{Matrix, SuperpixelMap, Tensor};

fn random_features(seed: u64, stride: f64) -> (Tensor, SuperpixelMap, ReceptiveFieldGrid) {
    let mut rng = rng(seed);
    let (rows, cols) = (rng.random_range(1..=20), rng.random_range(1..=20));
    let max_ids = rng.random_range(1..=10);
    let sp = random_partition(&mut rng, rows, cols, max_ids);
    let grid = ReceptiveFieldGrid::new(stride).unwrap();
    let (frows, fcols) = grid.cells_for(rows, cols);
    let k = rng.random_range(1..=4);
    let data: Vec<f32> = (0..k * frows * fcols).map(|_| rng.random_range(-5.0..5.0)).collect();
    (Tensor::new(k, frows, fcols, data).unwrap(), sp, grid)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn matches_the_nearest_centre_oracle(seed in any::<u64>(), stride in prop::sample::select(vec![1.0, 2.0, 4.0])) {
        let (features, sp, grid) = random_features(seed, stride);
        let pooled = pool_superpixels(&features, &sp, &grid).unwrap();
        let (means, centroids, sizes) = pool_oracle(&features, &sp, stride);
        prop_assert_eq!(&pooled.sizes, &sizes);
        for i in 0..sp.count() {
            for (a, b) in pooled.feature(i).iter().zip(&means[i]) {
                prop_assert!((a - b).abs() <= 1e-9, "superpixel {i}: {a} vs {b}");
            }
            for (a, b) in pooled.positions[i].iter().zip(&centroids[i]) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn pooling_conserves_mass(seed in any::<u64>(), stride in prop::sample::select(vec![1.0, 2.0, 4.0])) {
        let (features, sp, grid) = random_features(seed, stride);
        let pooled = pool_superpixels(&features, &sp, &grid).unwrap();
        let (frows, fcols) = (features.rows(), features.cols());
        let n = (sp.rows() * sp.cols()) as f64;
        for ch in 0..features.channels() {
            let mut pixel_sum = 0.0;
            for r in 0..sp.rows() {
                for c in 0..sp.cols() {
                    let cell = grid.cell_of(r, frows) * fcols + grid.cell_of(c, fcols);
                    pixel_sum += f64::from(features.channel(ch)[cell]);
                }
            }
            let weighted: f64 = (0..sp.count()).map(|i| pooled.sizes[i] as f64 * pooled.feature(i)[ch]).sum();
            prop_assert!((weighted / n - pixel_sum / n).abs() <= 1e-9);
        }
    }

    #[test]
    fn one_superpixel_per_pixel_is_the_identity(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let (rows, cols, k) = (rng.random_range(1..=12), rng.random_range(1..=12), rng.random_range(1..=3));
        let data: Vec<f32> = (0..k * rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        let features = Tensor::new(k, rows, cols, data).unwrap();
        let sp = SuperpixelMap::new(rows, cols, (0..(rows * cols) as u32).collect(), rows * cols).unwrap();
        let pooled = pool_superpixels(&features, &sp, &ReceptiveFieldGrid::identity()).unwrap();
        for p in 0..rows * cols {
            for ch in 0..k {
                prop_assert_eq!(pooled.feature(p)[ch], f64::from(features.channel(ch)[p]));
            }
        }
    }

    #[test]
    fn sp_cam_is_the_elementwise_maximum(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let (n, c, scales) = (rng.random_range(1..=8), rng.random_range(1..=5), rng.random_range(1..=4));
        let maps: Vec<Matrix> = (0..scales)
            .map(|_| Matrix::new(n, c, (0..n * c).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap())
            .collect();
        let cam = sp_cam(&maps).unwrap();
        for i in 0..n {
            for j in 0..c {
                let best = maps.iter().map(|m| m.get(i, j)).fold(f64::NEG_INFINITY, f64::max);
                prop_assert_eq!(cam.get(i, j), best);
            }
        }
    }
}

#[test]
fn rejects_mismatched_feature_maps() {
    let sp = SuperpixelMap::new(4, 4, vec![0; 16], 1).unwrap();
    let features = Tensor::filled(1, 3, 3, 0.0).unwrap();
    assert!(pool_superpixels(&features, &sp, &ReceptiveFieldGrid::new(2.0).unwrap()).is_err());
    assert!(sp_cam(&[]).is_err());
}
