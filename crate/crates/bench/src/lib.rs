//! Shared fixtures for the pipeline benchmarks.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use proxclass_core::classifier::FeatureRow;
use proxclass_core::signal::DistanceClass;

/// Noisy three-channel rows resembling matched samples: RSSI falls with
/// distance, the 5 GHz channel cleanest.
pub fn synthetic_rows(seed: u64, n: usize) -> (Vec<FeatureRow>, Vec<DistanceClass>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let d: f64 = rng.random_range(0.5..6.0);
        let label = if d < 1.5 {
            DistanceClass::VeryClose
        } else if d <= 3.0 {
            DistanceClass::Close
        } else {
            DistanceClass::Safe
        };
        let noise = |rng: &mut ChaCha8Rng, sigma: f64| rng.random_range(-sigma..sigma);
        let ble = -45.0 - 17.0 * d.log10() + noise(&mut rng, 6.0);
        let w24 = -40.0 - 20.0 * d.log10() + noise(&mut rng, 3.0);
        let w5 = -46.0 - 24.0 * d.log10() + noise(&mut rng, 1.0);
        x.push([
            ble.round(),
            w24.round(),
            2437.0,
            w5.round(),
            5180.0,
        ]);
        y.push(label);
    }
    (x, y)
}
