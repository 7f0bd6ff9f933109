//! Randomized Latin hypercube designs on the unit cube.

use rand::seq::SliceRandom;
use rand::Rng;

/// `n` points in `[0,1]^dims`, one per stratum `[k/n, (k+1)/n)` along every axis.
pub fn latin_hypercube<R: Rng + ?Sized>(n: usize, dims: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; dims]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for j in 0..dims {
        perm.shuffle(rng);
        for (i, p) in points.iter_mut().enumerate() {
            let u: f64 = rng.gen();
            p[j] = (perm[i] as f64 + u) / n as f64;
        }
    }
    points
}
