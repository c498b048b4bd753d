//! Fixtures shared by the benchmarks.

use relu_forge::Network;

/// Deterministic points spread over `[a, b]^dim`.
pub fn grid_points(dim: usize, count: usize, a: f64, b: f64) -> Vec<Vec<f64>> {
    (0..count)
        .map(|i| {
            (0..dim)
                .map(|j| {
                    let t = ((i * 7919 + j * 104_729) % 1000) as f64 / 999.0;
                    a + (b - a) * t
                })
                .collect()
        })
        .collect()
}

/// Total output of a batch, to keep evaluations observable.
pub fn checksum(net: &Network, points: &[Vec<f64>]) -> f64 {
    net.evaluate_many(points)
        .expect("points match the input dimension")
        .iter()
        .flatten()
        .sum()
}
