//! Exact maxima: `m_d` and the running maximum `𝔪_d`.

use crate::calculus::{affine_wrap, identity_network, parallelize};
use crate::network::{AffineMap, Network};

/// Exact network for `m_d(x) = max{x_1, …, x_d}`.
///
/// Each level pairs values with `max(a, b) = r(a - b) + r(b) - r(-b)` and
/// carries an odd leftover `c` as `r(c) - r(-c)`; the affine read-out of a
/// level is fused into the next level's first layer. `max_net(1)` is the
/// identity network. The parameter count is about `3 d^2` for large `d`.
pub fn max_net(d: usize) -> Network {
    assert!(d >= 1, "max_net needs d >= 1");
    if d == 1 {
        return identity_network(1);
    }
    let mut layers = Vec::new();
    let mut values = AffineMap::identity(d);
    let mut m = d;
    while m > 1 {
        let pairs = m / 2;
        let odd = m % 2;
        let units = 3 * pairs + 2 * odd;
        let mut pre = Vec::with_capacity(4 * pairs + 2 * odd);
        let mut post = Vec::with_capacity(3 * pairs + 2 * odd);
        for p in 0..pairs {
            let (a, b, u) = (2 * p, 2 * p + 1, 3 * p);
            pre.extend([(u, a, 1.0), (u, b, -1.0), (u + 1, b, 1.0), (u + 2, b, -1.0)]);
            post.extend([(p, u, 1.0), (p, u + 1, 1.0), (p, u + 2, -1.0)]);
        }
        if odd == 1 {
            let (c, u) = (m - 1, 3 * pairs);
            pre.extend([(u, c, 1.0), (u + 1, c, -1.0)]);
            post.extend([(pairs, u, 1.0), (pairs, u + 1, -1.0)]);
        }
        let pre = AffineMap::from_triplets(units, m, pre, vec![0.0; units]).expect("level map");
        layers.push(pre.compose(&values).expect("level chains"));
        let next = pairs + odd;
        values = AffineMap::from_triplets(next, units, post, vec![0.0; next]).expect("read-out map");
        m = next;
    }
    layers.push(values);
    Network::new(layers).expect("max network chains")
}

/// The affine map `R^d -> R^{d(d+1)/2}` copying `(x_1, …, x_k)` for every
/// `k = 1, …, d` in order.
pub fn prefix_fan_out(d: usize) -> AffineMap {
    let rows = d * (d + 1) / 2;
    let mut entries = Vec::with_capacity(rows);
    let mut r = 0;
    for k in 1..=d {
        for j in 0..k {
            entries.push((r, j, 1.0));
            r += 1;
        }
    }
    AffineMap::from_triplets(rows, d, entries, vec![0.0; rows]).expect("fan-out map")
}

/// Exact network for the running maximum
/// `𝔪_d(x) = (m_1(x_1), m_2(x_1, x_2), …, m_d(x))`.
pub fn cummax_net(d: usize) -> Network {
    assert!(d >= 1, "cummax_net needs d >= 1");
    let blocks: Vec<Network> = (1..=d).map(max_net).collect();
    let par = parallelize(&blocks).expect("nonempty");
    affine_wrap(&par, Some(&prefix_fan_out(d)), None).expect("fan-out chains")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_cases() {
        assert_eq!(max_net(2).architecture(), vec![2, 3, 1]);
        assert_eq!(max_net(2).param_count(), 13);
        assert_eq!(max_net(3).evaluate(&[-1.0, -2.0, -0.5]).unwrap(), vec![-0.5]);
        assert_eq!(max_net(1).evaluate(&[4.0]).unwrap(), vec![4.0]);
        assert_eq!(cummax_net(3).evaluate(&[2.0, 1.0, 3.0]).unwrap(), vec![2.0, 2.0, 3.0]);
    }

    #[test]
    fn exhaustive_orderings() {
        for d in 1..=9 {
            let net = max_net(d);
            for k in 0..d {
                let x: Vec<f64> = (0..d).map(|j| if j == k { 5.0 } else { -(j as f64) }).collect();
                assert_eq!(net.evaluate(&x).unwrap(), vec![5.0]);
            }
        }
    }

    #[test]
    fn nondecreasing_sequence_is_fixed() {
        let x = [-3.0, -1.0, 0.0, 0.5, 2.0, 2.0];
        let out = cummax_net(x.len()).evaluate(&x).unwrap();
        assert_eq!(out, x.to_vec());
    }
}
