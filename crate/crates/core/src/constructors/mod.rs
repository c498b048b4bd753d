//! Builders for maxima, products, maximum convolutions and their
//! parallelizations.

mod max;
mod maxconv;
mod product;

pub use max::{cummax_net, max_net, prefix_fan_out};
pub use maxconv::{grid_points_per_axis, grid_size, maxconv_fn};
pub use product::{
    cumprod_approx, cumprod_net, lip1_product_approx, lip1_product_net, mult2_net, product_approx, product_net,
    ProductNet,
};

use crate::calculus::parallelize;
use crate::error::{Error, Result};
use crate::network::{Hypercube, Network, Norm};
use crate::pipeline::expr::Expr;

/// A network with certified bounds on its approximation error and on its
/// Lipschitz constant on the domain it was built for.
#[derive(Clone, Debug)]
pub struct BoundedNetwork {
    pub net: Network,
    pub error_bound: f64,
    pub lipschitz_bound: f64,
}

/// Caps on construction size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BuildLimits {
    /// Maximum number of maximum-convolution grid points in one build.
    pub max_grid_points: usize,
}

impl Default for BuildLimits {
    fn default() -> Self {
        BuildLimits {
            max_grid_points: 1_500_000,
        }
    }
}

/// One Lipschitz block `f_i` of a parallelization.
#[derive(Clone, Debug, PartialEq)]
pub struct LipschitzBlockSpec {
    pub dim: usize,
    pub expr: Expr,
    /// Declared Lipschitz constant in the spec's `ℓ_p` norm.
    pub lipschitz: f64,
}

impl LipschitzBlockSpec {
    pub fn new(dim: usize, expr: Expr, lipschitz: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("block dimension must be positive"));
        }
        if expr.arity() > dim {
            return Err(Error::invalid(format!(
                "expression uses x{} but the block has dimension {dim}",
                expr.arity()
            )));
        }
        if !(lipschitz >= 0.0 && lipschitz.is_finite()) {
            return Err(Error::invalid(format!(
                "Lipschitz constant must be finite and nonnegative, got {lipschitz}"
            )));
        }
        Ok(LipschitzBlockSpec { dim, expr, lipschitz })
    }
}

/// A partition `d_1 + … + d_n` of the input coordinates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionSpec {
    parts: Vec<usize>,
}

impl PartitionSpec {
    pub fn new(parts: Vec<usize>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::invalid("partition needs at least one part"));
        }
        if parts.contains(&0) {
            return Err(Error::invalid("partition parts must be positive"));
        }
        Ok(PartitionSpec { parts })
    }

    pub fn parts(&self) -> &[usize] {
        &self.parts
    }

    pub fn total(&self) -> usize {
        self.parts.iter().sum()
    }
}

/// Maximum-convolution network for a Lipschitz block on `q`.
pub fn maxconv_net(
    block: &LipschitzBlockSpec,
    q: &Hypercube,
    eps: f64,
    norm: Norm,
    limits: &BuildLimits,
) -> Result<BoundedNetwork> {
    if block.dim != q.dim {
        return Err(Error::shape(format!(
            "block dimension {} differs from domain dimension {}",
            block.dim, q.dim
        )));
    }
    let f = |x: &[f64]| block.expr.eval(x);
    maxconv_fn(&f, q, block.lipschitz, eps, norm, limits)
}

/// The families a parallelized stage may consist of.
#[derive(Clone, Debug, PartialEq)]
pub enum ParallelBlocks {
    Lipschitz(Vec<LipschitzBlockSpec>),
    Max(PartitionSpec),
    ProductLip1(PartitionSpec),
    ProductGeneral(PartitionSpec),
}

impl ParallelBlocks {
    pub fn input_dim(&self) -> usize {
        match self {
            ParallelBlocks::Lipschitz(blocks) => blocks.iter().map(|b| b.dim).sum(),
            ParallelBlocks::Max(p) | ParallelBlocks::ProductLip1(p) | ParallelBlocks::ProductGeneral(p) => p.total(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            ParallelBlocks::Lipschitz(blocks) => blocks.len(),
            ParallelBlocks::Max(p) | ParallelBlocks::ProductLip1(p) | ParallelBlocks::ProductGeneral(p) => {
                p.parts().len()
            }
        }
    }
}

/// Per-block accuracies for maximum-convolution blocks with
/// `(dimension, Lipschitz constant, domain width)` so that
/// `(Σ e_j^p)^{1/p} <= eps`.
///
/// Grid sizes behave like `C_j e_j^{-k_j}` with `C_j = (k_j L_j w_j)^{k_j}`;
/// the budgets minimize the total under the constraint. Identical blocks
/// get `n^{-1/p} eps` each, blocks with `L = 0` are exact and get `eps`, and
/// for `p = ∞` every block gets `eps`.
pub fn allocate_budgets(blocks: &[(usize, f64, f64)], eps: f64, norm: Norm) -> Vec<f64> {
    let active: Vec<usize> = (0..blocks.len()).filter(|&j| blocks[j].1 > 0.0).collect();
    let mut out = vec![eps; blocks.len()];
    if norm.p().is_infinite() || active.is_empty() {
        return out;
    }
    let p = norm.p();
    let first = blocks[active[0]];
    let homogeneous = active.iter().all(|&j| {
        let b = blocks[j];
        b.0 == first.0 && b.1 == first.1 && b.2 == first.2
    });
    if homogeneous {
        let each = eps / (active.len() as f64).powf(1.0 / p);
        for &j in &active {
            out[j] = each;
        }
        return out;
    }
    // e_j(λ) = (k_j C_j / (λ p))^{1/(k_j + p)}, decreasing in λ; solve
    // Σ e_j^p = eps^p in log λ by bisection.
    let log_kc: Vec<f64> = active
        .iter()
        .map(|&j| {
            let (k, l, w) = blocks[j];
            let k = k as f64;
            k.ln() + k * (k * l * w).ln()
        })
        .collect();
    let budgets = |log_lambda: f64| -> Vec<f64> {
        active
            .iter()
            .zip(&log_kc)
            .map(|(&j, &lkc)| {
                let k = blocks[j].0 as f64;
                ((lkc - log_lambda - p.ln()) / (k + p)).exp()
            })
            .collect()
    };
    let excess = |log_lambda: f64| -> f64 { budgets(log_lambda).iter().map(|e| e.powf(p)).sum::<f64>() - eps.powf(p) };
    let (mut lo, mut hi) = (-50.0f64, 50.0f64);
    while excess(lo) < 0.0 {
        lo -= 50.0;
    }
    while excess(hi) > 0.0 {
        hi += 50.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    for (&j, e) in active.iter().zip(budgets(hi)) {
        out[j] = e;
    }
    out
}

/// Parallelized blocks of one family on `q` with total `ℓ_p` error at most
/// `eps`. The Lipschitz bound of the result is in `ℓ_p` on both sides.
pub fn parallel_block_net(
    blocks: &ParallelBlocks,
    q: &Hypercube,
    eps: f64,
    norm: Norm,
    limits: &BuildLimits,
) -> Result<BoundedNetwork> {
    if blocks.input_dim() != q.dim {
        return Err(Error::shape(format!(
            "blocks cover {} coordinates but the domain has dimension {}",
            blocks.input_dim(),
            q.dim
        )));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("accuracy must be positive, got {eps}")));
    }
    let parts: Vec<BoundedNetwork> = match blocks {
        ParallelBlocks::Lipschitz(specs) => {
            let shape: Vec<(usize, f64, f64)> = specs.iter().map(|b| (b.dim, b.lipschitz, q.width())).collect();
            let total: usize = shape
                .iter()
                .zip(allocate_budgets(&shape, eps, norm))
                .map(|(&(k, l, w), e)| grid_size(k, l, w, e))
                .fold(0usize, usize::saturating_add);
            if total > limits.max_grid_points {
                return Err(Error::ResourceLimit(format!(
                    "stage needs {total} maximum-convolution grid points, limit is {}",
                    limits.max_grid_points
                )));
            }
            let budgets = allocate_budgets(&shape, eps, norm);
            specs
                .iter()
                .zip(budgets)
                .map(|(b, e)| maxconv_net(b, &q.with_dim(b.dim), e, norm, limits))
                .collect::<Result<_>>()?
        }
        ParallelBlocks::Max(p) => p
            .parts()
            .iter()
            .map(|&d| BoundedNetwork {
                net: max_net(d),
                error_bound: 0.0,
                lipschitz_bound: 1.0,
            })
            .collect(),
        ParallelBlocks::ProductLip1(p) | ParallelBlocks::ProductGeneral(p) => {
            let lip1 = matches!(blocks, ParallelBlocks::ProductLip1(_));
            let (lo, hi) = if lip1 { (-0.125, 0.125) } else { (-1.0, 1.0) };
            if q.a < lo || q.b > hi {
                return Err(Error::hypothesis(
                    format!("product domain must lie in [{lo}, {hi}]^d"),
                    format!("got [{}, {}]^{}", q.a, q.b, q.dim),
                ));
            }
            let nontrivial = p.parts().iter().filter(|&&d| d > 1).count().max(1);
            let each = eps / norm.ones(nontrivial);
            p.parts()
                .iter()
                .map(|&d| {
                    let r = if lip1 {
                        lip1_product_approx(d, each)
                    } else {
                        product_approx(d, 1.0, each)
                    };
                    r.map(ProductNet::into_bounded)
                })
                .collect::<Result<_>>()?
        }
    };
    let errors: Vec<f64> = parts.iter().map(|b| b.error_bound).collect();
    let lipschitz_bound = parts.iter().fold(0.0f64, |m, b| m.max(b.lipschitz_bound));
    let nets: Vec<Network> = parts.into_iter().map(|b| b.net).collect();
    Ok(BoundedNetwork {
        net: parallelize(&nets)?,
        error_bound: norm.of(&errors),
        lipschitz_bound,
    })
}
