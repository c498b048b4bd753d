//! Approximate products: the two-factor multiplier, product trees on
//! `[-a, a]^d`, the Lipschitz-one product on `[-1/8, 1/8]^d`, and running
//! products.
//!
//! Squares are approximated by the sawtooth interpolant
//! `S_m(z) = z - Σ_{s=1}^m g_s(z) / 4^s` of `z^2` on `[0, 1]`, where `g_s` is
//! the `s`-fold composition of the hat function. `S_m` interpolates `z^2` at
//! the nodes `j 2^{-m}`, so `0 <= S_m(z) - z^2 <= 4^{-m-1}` and every slope
//! of `S_m` is within `2^{-m}` of `2z`.

use super::BoundedNetwork;
use crate::calculus::{affine_wrap, fuse, identity_network, parallelize};
use crate::error::{Error, Result};
use crate::network::{AffineMap, Network};

use super::max::prefix_fan_out;

/// Bounds of a product network beyond those of [`BoundedNetwork`].
#[derive(Clone, Debug)]
pub struct ProductNet {
    pub net: Network,
    /// Certified `sup |net - product|` on the domain.
    pub error_bound: f64,
    /// Certified bound on `|net(x) - net(y)| / ‖x - y‖_∞` on the domain.
    /// It bounds the `ℓ_p` Lipschitz constant for every `p`.
    pub lipschitz_bound: f64,
    /// Certified bound on `|net(x)|` on the domain.
    pub magnitude: f64,
}

impl ProductNet {
    pub fn into_bounded(self) -> BoundedNetwork {
        BoundedNetwork {
            net: self.net,
            error_bound: self.error_bound,
            lipschitz_bound: self.lipschitz_bound,
        }
    }
}

/// Smallest level count `m` with `2 A B 4^{-m-1} <= delta / 3`.
fn levels_for(a: f64, b: f64, delta: f64) -> usize {
    let mut m = 0usize;
    while 2.0 * a * b * 0.25f64.powi(m as i32 + 1) > delta / 3.0 {
        m += 1;
    }
    m
}

/// Network for `(x, y) -> ψ(x, y) ≈ x y` on `[-A, A] x [-B, B]`, with
/// `ψ = A B [2 S((x/A + y/B)/2) - S(x/A)/2 - S(y/B)/2]` and `S(u) = S_m(|u|)`.
fn mult2(a: f64, b: f64, delta: f64) -> ProductNet {
    let m = levels_for(a, b, delta);
    // Arguments u_k of the three squares as rows over (x, y).
    let args = [[0.5 / a, 0.5 / b], [1.0 / a, 0.0], [0.0, 1.0 / b]];
    let coef = [2.0 * a * b, -0.5 * a * b, -0.5 * a * b];
    let mut first = Vec::new();
    for (k, row) in args.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            first.push((2 * k, j, w));
            first.push((2 * k + 1, j, -w));
        }
    }
    let mut layers = vec![AffineMap::from_triplets(6, 2, first, vec![0.0; 6]).expect("first layer")];
    // Each square keeps 2 units after the first layer and 4 units
    // (h1, h2, h3, carry) after every sawtooth level. `prev` describes, for
    // each square, g_{s-1} and acc_{s-1} as combinations of the previous
    // layer's units (local indices within the square's block).
    let mut width = 2;
    let mut g_prev: Vec<(usize, f64)> = vec![(0, 1.0), (1, 1.0)];
    let mut acc_prev: Vec<(usize, f64)> = vec![(0, 1.0), (1, 1.0)];
    for s in 1..=m {
        let mut entries = Vec::new();
        let mut bias = Vec::new();
        for k in 0..3 {
            let (row0, col0) = (4 * k, width * k);
            for u in 0..3 {
                for &(j, w) in &g_prev {
                    entries.push((row0 + u, col0 + j, w));
                }
            }
            for &(j, w) in &acc_prev {
                entries.push((row0 + 3, col0 + j, w));
            }
            bias.extend([0.0, -0.5, -1.0, 0.0]);
        }
        layers.push(AffineMap::from_triplets(12, 3 * width, entries, bias).expect("sawtooth layer"));
        width = 4;
        g_prev = vec![(0, 2.0), (1, -4.0), (2, 2.0)];
        let scale = 0.25f64.powi(s as i32);
        acc_prev = vec![(0, -2.0 * scale), (1, 4.0 * scale), (2, -2.0 * scale), (3, 1.0)];
    }
    let mut out = Vec::new();
    for (k, c) in coef.iter().enumerate() {
        for &(j, w) in &acc_prev {
            out.push((0, width * k + j, c * w));
        }
    }
    layers.push(AffineMap::from_triplets(1, 3 * width, out, vec![0.0]).expect("read-out"));
    let h = 0.5f64.powi(m as i32);
    let slope = 1.0 + 1.5 * h;
    let error_bound = 2.0 * a * b * 0.25f64.powi(m as i32 + 1);
    ProductNet {
        net: Network::new(layers).expect("multiplier chains"),
        error_bound,
        lipschitz_bound: slope * (a + b),
        magnitude: a * b + error_bound,
    }
}

/// Two-factor multiplier with `sup_{|x|,|y| <= a} |net(x, y) - x y| <= eps`.
///
/// The sawtooth level count is the smallest one for which each of the three
/// polarization terms contributes at most `eps / 3`.
pub fn mult2_net(a: f64, eps: f64) -> Result<Network> {
    check_accuracy(eps)?;
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::invalid(format!("mult2_net needs a > 0, got {a}")));
    }
    Ok(mult2(a, a, eps).net)
}

fn check_accuracy(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "accuracy must be positive and finite, got {eps}"
        )))
    }
}

fn leaf(a: f64) -> ProductNet {
    ProductNet {
        net: Network::new(vec![AffineMap::identity(1)]).expect("leaf"),
        error_bound: 0.0,
        lipschitz_bound: 1.0,
        magnitude: a,
    }
}

/// Binary product tree on `[-a, a]^d` with total error at most `eps`.
///
/// At a node with exact factor bounds `M_l`, `M_r` the error satisfies
/// `e <= δ + A e_r + M_r e_l`, where `A = M_l + e_l` bounds the left
/// approximation. Each approximate child and the multiplier get an equal
/// share `s`; the children get `e_l = min(s / M_r, M_l / 2)` and
/// `e_r = min(s / A, M_r / 2)`, and the multiplier gets `δ = s`. The
/// multiplier's input boxes use these budgets, not the children's actual
/// error bounds, which keeps the parameter count monotone in `eps`.
fn tree(d: usize, a: f64, eps: f64) -> ProductNet {
    if d == 1 {
        return leaf(a);
    }
    let dl = d.div_ceil(2);
    let dr = d - dl;
    let ml = a.powi(dl as i32);
    let mr = a.powi(dr as i32);
    let shares = 1 + usize::from(dl > 1) + usize::from(dr > 1);
    let s = eps / shares as f64;
    let budget_l = if dl > 1 { (s / mr).min(0.5 * ml) } else { 0.0 };
    let left = tree(dl, a, budget_l);
    let a_bound = ml + budget_l;
    let budget_r = if dr > 1 { (s / a_bound).min(0.5 * mr) } else { 0.0 };
    let right = tree(dr, a, budget_r);
    let b_bound = mr + budget_r;
    let m2 = mult2(a_bound, b_bound, s);
    let slope = m2_slope(a_bound, b_bound, s);
    let par = parallelize(&[left.net, right.net]).expect("two children");
    let net = fuse(&m2.net, &par).expect("children feed the multiplier");
    let error_bound = m2.error_bound + a_bound * right.error_bound + mr * left.error_bound;
    ProductNet {
        net,
        error_bound,
        lipschitz_bound: slope * (b_bound * left.lipschitz_bound + a_bound * right.lipschitz_bound),
        magnitude: ml * mr + error_bound,
    }
}

fn m2_slope(a: f64, b: f64, delta: f64) -> f64 {
    1.0 + 1.5 * 0.5f64.powi(levels_for(a, b, delta) as i32)
}

/// Product tree for `p_d` on `[-a, a]^d` together with its certified
/// bounds. For `d = 1` the result is the identity network.
pub fn product_approx(d: usize, a: f64, eps: f64) -> Result<ProductNet> {
    check_accuracy(eps)?;
    if d == 0 {
        return Err(Error::invalid("product needs d >= 1"));
    }
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::invalid(format!("product scale must be positive, got {a}")));
    }
    if d == 1 {
        return Ok(ProductNet {
            net: identity_network(1),
            ..leaf(a)
        });
    }
    Ok(tree(d, a, eps))
}

/// Network for `p_d(x) = x_1 ⋯ x_d` with sup error at most `eps` on
/// `[-a, a]^d`.
pub fn product_net(d: usize, a: f64, eps: f64) -> Result<Network> {
    if a < 1.0 {
        return Err(Error::invalid(format!("product_net needs a >= 1, got {a}")));
    }
    Ok(product_approx(d, a, eps)?.net)
}

/// Lipschitz-one product on `[-1/8, 1/8]^d` with its certified bounds.
///
/// The input is padded to `2^e` coordinates (`2^{e-1} < d <= 2^e`) with the
/// constant `1/8`, passed through a product tree of accuracy
/// `8^{-2^{e-1}} eps`, and rescaled by `8^{2^e - d}`.
pub fn lip1_product_approx(d: usize, eps: f64) -> Result<ProductNet> {
    check_accuracy(eps)?;
    if d == 0 {
        return Err(Error::invalid("product needs d >= 1"));
    }
    if d == 1 {
        return product_approx(1, 0.125, eps);
    }
    let e = d.next_power_of_two().trailing_zeros();
    let full = 1usize << e;
    let inner_eps = eps * 8f64.powi(-(1i32 << (e - 1)));
    let t = tree(full, 0.125, inner_eps);
    let pad = AffineMap::from_triplets(
        full,
        d,
        (0..d).map(|i| (i, i, 1.0)),
        (0..full).map(|i| if i < d { 0.0 } else { 0.125 }).collect(),
    )?;
    let scale = 8f64.powi((full - d) as i32);
    let post = AffineMap::scaling(1, scale, 0.0);
    let net = affine_wrap(&t.net, Some(&pad), Some(&post))?;
    Ok(ProductNet {
        net,
        error_bound: scale * t.error_bound,
        lipschitz_bound: scale * t.lipschitz_bound,
        magnitude: scale * t.magnitude,
    })
}

/// Network for `p_d` on `[-1/8, 1/8]^d` with sup error at most `eps` and
/// Lipschitz constant at most one in every `ℓ_p`.
pub fn lip1_product_net(d: usize, eps: f64) -> Result<Network> {
    Ok(lip1_product_approx(d, eps)?.net)
}

/// Running products `𝔭_d(x) = (x_1, x_1 x_2, …, x_1 ⋯ x_d)` on `[-1, 1]^d`.
///
/// Every component gets accuracy `d^{-1/p} eps`, so the output error is at
/// most `eps` in `ℓ_p`. The Lipschitz bound is for `ℓ_p` on both sides.
pub fn cumprod_approx(d: usize, eps: f64, p: crate::network::Norm) -> Result<BoundedNetwork> {
    check_accuracy(eps)?;
    if d == 0 {
        return Err(Error::invalid("cumprod needs d >= 1"));
    }
    let each = eps / p.ones(d);
    let parts = (1..=d)
        .map(|k| product_approx(k, 1.0, each))
        .collect::<Result<Vec<_>>>()?;
    let err = parts.iter().map(|q| q.error_bound).collect::<Vec<_>>();
    let lip = parts.iter().fold(0.0f64, |m, q| m.max(q.lipschitz_bound));
    let nets: Vec<Network> = parts.into_iter().map(|q| q.net).collect();
    let par = parallelize(&nets)?;
    let net = affine_wrap(&par, Some(&prefix_fan_out(d)), None)?;
    Ok(BoundedNetwork {
        net,
        error_bound: p.of(&err),
        lipschitz_bound: p.ones(d) * lip,
    })
}

/// Network for the running products with `ℓ_p` output error at most `eps`.
pub fn cumprod_net(d: usize, eps: f64, p: crate::network::Norm) -> Result<Network> {
    Ok(cumprod_approx(d, eps, p)?.net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Norm;

    fn grid_error(net: &Network, a: f64, n: usize) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..=n {
            for j in 0..=n {
                let x = -a + 2.0 * a * i as f64 / n as f64;
                let y = -a + 2.0 * a * j as f64 / n as f64;
                let v = net.evaluate(&[x, y]).unwrap()[0];
                worst = worst.max((v - x * y).abs());
            }
        }
        worst
    }

    #[test]
    fn multiplier_examples() {
        let eps = 1e-3;
        let net = mult2_net(1.0, eps).unwrap();
        assert!((net.evaluate(&[0.5, -0.5]).unwrap()[0] + 0.25).abs() <= eps);
        assert!((net.evaluate(&[1.0, 1.0]).unwrap()[0] - 1.0).abs() <= eps);
        assert!(grid_error(&net, 1.0, 64) <= eps);
    }

    #[test]
    fn multiplier_on_larger_box() {
        let net = mult2_net(3.0, 0.01).unwrap();
        assert!(grid_error(&net, 3.0, 60) <= 0.01);
    }

    #[test]
    fn tree_bounds_are_within_budget() {
        for d in 2..=9 {
            let p = product_approx(d, 1.0, 0.01).unwrap();
            assert!(p.error_bound <= 0.01, "d={d}: {}", p.error_bound);
            let q = lip1_product_approx(d, 0.01).unwrap();
            assert!(q.error_bound <= 0.01);
            assert!(q.lipschitz_bound <= 1.0, "d={d}: {}", q.lipschitz_bound);
        }
    }

    #[test]
    fn products_at_simple_points() {
        let net = product_net(4, 1.0, 0.01).unwrap();
        assert!((net.evaluate(&[1.0; 4]).unwrap()[0] - 1.0).abs() <= 0.01);
        assert!(net.evaluate(&[0.3, 0.0, -0.9, 1.0]).unwrap()[0].abs() <= 0.01);
        let lip1 = lip1_product_net(3, 0.01).unwrap();
        let v = lip1.evaluate(&[0.125; 3]).unwrap()[0];
        assert!((v - 1.0 / 512.0).abs() <= 0.01);
        assert_eq!(lip1.input_dim(), 3);
    }

    #[test]
    fn lip1_padding_for_three_factors() {
        let net = lip1_product_net(3, 0.01).unwrap();
        assert_eq!(net.layers()[0].cols(), 3);
        // The first layer of a 4-factor tree acts on the padded vector; the
        // padding constant shows up only in the bias.
        let t = tree(4, 0.125, 0.01 * 8f64.powi(-2));
        assert_eq!(net.layers()[0].rows(), t.net.layers()[0].rows());
    }

    #[test]
    fn running_products() {
        let net = cumprod_net(3, 0.01, Norm::INF).unwrap();
        let out = net.evaluate(&[0.5, 0.5, 0.5]).unwrap();
        for (o, w) in out.iter().zip([0.5, 0.25, 0.125]) {
            assert!((o - w).abs() <= 0.01);
        }
        let out = net.evaluate(&[1.0, 1.0, 1.0]).unwrap();
        assert!(out.iter().all(|o| (o - 1.0).abs() <= 0.01));
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(mult2_net(1.0, 0.0).is_err());
        assert!(mult2_net(-1.0, 0.1).is_err());
        assert!(product_net(3, 0.5, 0.1).is_err());
        assert!(product_net(0, 1.0, 0.1).is_err());
    }
}
