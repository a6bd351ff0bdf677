//! Seeded synthetic tables with known structure, for demos and tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// CSV with columns `x1, x2, c1, y, z, d`:
///
/// * `x1`, `x2` uniform on `[0, 1)`
/// * `c1` one of `red`, `green`, `blue`
/// * `y = 3·x1 − 2·x2 + 0.1·ε` with standard normal `ε`
/// * `z` standard normal noise
/// * `d` is `warm` for red and `cool` otherwise
///
/// ```
/// let csv = tabinsight::synthetic::planted_signal_csv(5, 42);
/// assert_eq!(csv.lines().count(), 6);
/// assert!(csv.starts_with("x1,x2,c1,y,z,d\n"));
/// ```
pub fn planted_signal_csv(n_rows: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::from("x1,x2,c1,y,z,d\n");
    for _ in 0..n_rows {
        let x1: f64 = rng.random();
        let x2: f64 = rng.random();
        let c = rng.random_range(0..3usize);
        let noise: f64 = StandardNormal.sample(&mut rng);
        let z: f64 = StandardNormal.sample(&mut rng);
        let y = 3.0 * x1 - 2.0 * x2 + 0.1 * noise;
        let c1 = ["red", "green", "blue"][c];
        let d = if c == 0 { "warm" } else { "cool" };
        out.push_str(&format!("{x1:.6},{x2:.6},{c1},{y:.6},{z:.6},{d}\n"));
    }
    out
}
