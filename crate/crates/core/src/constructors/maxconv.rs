//! Maximum-convolution approximants of Lipschitz functions.

use super::max::max_net;
use super::{BoundedNetwork, BuildLimits};
use crate::calculus::fuse;
use crate::error::{Error, Result};
use crate::network::{AffineMap, Hypercube, Network, Norm};

/// Grid points per axis for a `k`-dimensional block with `ℓ_1` Lipschitz
/// constant `l` on an interval of width `w`: spacing at most `eps / (k l)`.
pub fn grid_points_per_axis(k: usize, l: f64, w: f64, eps: f64) -> usize {
    if l == 0.0 {
        return 1;
    }
    let n = (w * k as f64 * l / eps).ceil();
    if n.is_finite() && n < 1e15 {
        n as usize + 1
    } else {
        usize::MAX
    }
}

/// Total grid points `n^k`, saturating.
pub fn grid_size(k: usize, l: f64, w: f64, eps: f64) -> usize {
    let n = grid_points_per_axis(k, l, w, eps);
    (0..k)
        .try_fold(1usize, |acc, _| acc.checked_mul(n))
        .unwrap_or(usize::MAX)
}

/// Network for `x -> max_g (f(x_g) - L ‖x - x_g‖_1)` over a uniform grid on
/// `q` with per-axis spacing at most `eps / (k L)`.
///
/// If `f` is `L`-Lipschitz in some `ℓ_p` on `q`, the result is within `eps`
/// of `f` on `q`, agrees with `f` on the grid, and is `k^{1-1/p} L`-Lipschitz
/// in `ℓ_p`. The first layer holds `r(x_j - t)` and `r(t - x_j)` for every
/// axis `j` and grid coordinate `t`; their affine combination gives the
/// grid values, which feed `max_net` directly.
pub fn maxconv_fn(
    f: &(dyn Fn(&[f64]) -> Result<f64> + Sync),
    q: &Hypercube,
    lipschitz: f64,
    eps: f64,
    norm: Norm,
    limits: &BuildLimits,
) -> Result<BoundedNetwork> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("accuracy must be positive, got {eps}")));
    }
    if !(lipschitz >= 0.0 && lipschitz.is_finite()) {
        return Err(Error::invalid(format!(
            "Lipschitz constant must be finite and nonnegative, got {lipschitz}"
        )));
    }
    let k = q.dim;
    if lipschitz == 0.0 {
        check_constant(f, q)?;
    }
    let n = grid_points_per_axis(k, lipschitz, q.width(), eps);
    let total = grid_size(k, lipschitz, q.width(), eps);
    if total > limits.max_grid_points {
        return Err(Error::ResourceLimit(format!(
            "maximum convolution needs {n}^{k} grid points, limit is {}",
            limits.max_grid_points
        )));
    }
    let coords: Vec<f64> = if n == 1 {
        vec![0.5 * (q.a + q.b)]
    } else {
        (0..n)
            .map(|i| {
                if i == n - 1 {
                    q.b
                } else {
                    q.a + q.width() * i as f64 / (n - 1) as f64
                }
            })
            .collect()
    };
    let units = 2 * k * n;
    let mut first = Vec::with_capacity(2 * units);
    let mut first_bias = Vec::with_capacity(units);
    for j in 0..k {
        for (i, &t) in coords.iter().enumerate() {
            let u = 2 * (j * n + i);
            first.push((u, j, 1.0));
            first.push((u + 1, j, -1.0));
            first_bias.extend([-t, t]);
        }
    }
    let first = AffineMap::from_triplets(units, k, first, first_bias)?;
    let mut values = Vec::with_capacity(total * 2 * k);
    let mut value_bias = Vec::with_capacity(total);
    let mut index = vec![0usize; k];
    let mut point = vec![0.0; k];
    for g in 0..total {
        for (x, &i) in point.iter_mut().zip(&index) {
            *x = coords[i];
        }
        let v = f(&point)?;
        if !v.is_finite() {
            return Err(Error::Domain(format!("function is not finite at grid point {point:?}")));
        }
        value_bias.push(v);
        if lipschitz > 0.0 {
            for (j, &i) in index.iter().enumerate() {
                let u = 2 * (j * n + i);
                values.push((g, u, -lipschitz));
                values.push((g, u + 1, -lipschitz));
            }
        }
        for i in index.iter_mut() {
            *i += 1;
            if *i < n {
                break;
            }
            *i = 0;
        }
    }
    let values = AffineMap::from_triplets(total, units, values, value_bias)?;
    let head = Network::new(vec![first, values])?;
    let net = fuse(&max_net(total), &head)?;
    Ok(BoundedNetwork {
        net,
        error_bound: eps,
        lipschitz_bound: (k as f64).powf(1.0 - norm.inv()) * lipschitz,
    })
}

fn check_constant(f: &(dyn Fn(&[f64]) -> Result<f64> + Sync), q: &Hypercube) -> Result<()> {
    let reference = f(&q.center())?;
    let corners = if q.dim <= 16 { 1u64 << q.dim } else { 0 };
    for c in 0..corners {
        let v = f(&q.corner(c))?;
        if (v - reference).abs() > 1e-12 * (1.0 + reference.abs()) {
            return Err(Error::invalid(
                "Lipschitz constant 0 declared for a non-constant function",
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abs(x: &[f64]) -> Result<f64> {
        Ok(x[0].abs())
    }

    #[test]
    fn abs_on_three_points() {
        let q = Hypercube::new(-1.0, 1.0, 1).unwrap();
        // Width 2, L = 1, eps = 1 gives spacing 1: grid {-1, 0, 1}.
        assert_eq!(grid_points_per_axis(1, 1.0, 2.0, 1.0), 3);
        let b = maxconv_fn(&abs, &q, 1.0, 1.0, Norm::L1, &BuildLimits::default()).unwrap();
        assert_eq!(b.net.evaluate(&[0.0]).unwrap()[0], 0.0);
        assert_eq!(b.net.evaluate(&[1.0]).unwrap()[0], 1.0);
        assert!((b.net.evaluate(&[0.5]).unwrap()[0] - 0.5).abs() < 1e-12);
        assert!((b.net.evaluate(&[-0.25]).unwrap()[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn constant_function() {
        let q = Hypercube::new(0.0, 2.0, 2).unwrap();
        let c = |_: &[f64]| Ok(1.75);
        let b = maxconv_fn(&c, &q, 0.0, 0.1, Norm::L2, &BuildLimits::default()).unwrap();
        for x in [[0.0, 0.0], [1.3, 0.2], [2.0, 2.0]] {
            assert_eq!(b.net.evaluate(&x).unwrap()[0], 1.75);
        }
        let nonconst = |x: &[f64]| Ok(x[0]);
        assert!(maxconv_fn(&nonconst, &q, 0.0, 0.1, Norm::L2, &BuildLimits::default()).is_err());
    }

    #[test]
    fn resource_limit_is_enforced() {
        let q = Hypercube::new(-1.0, 1.0, 2).unwrap();
        let limits = BuildLimits { max_grid_points: 100 };
        let err = maxconv_fn(&abs, &q, 1.0, 0.01, Norm::L1, &limits).unwrap_err();
        assert!(matches!(err, Error::ResourceLimit(_)));
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let q = Hypercube::new(0.0, 1.0, 1).unwrap();
        let f = |x: &[f64]| Ok(1.0 / x[0]);
        assert!(matches!(
            maxconv_fn(&f, &q, 1.0, 0.5, Norm::L1, &BuildLimits::default()),
            Err(Error::Domain(_))
        ));
    }
}
