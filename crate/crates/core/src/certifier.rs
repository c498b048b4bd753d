//! Sampled certification: sup-error and Lipschitz estimates, norm
//! conversion factors and growth-exponent fits.
//!
//! Every sampled estimate is a lower bound of the true supremum over the
//! domain. Estimates are reproducible: points are drawn sequentially from a
//! seeded ChaCha generator and evaluated in parallel, and results are
//! reduced by maximum, so the schedule does not affect the outcome.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Hypercube, Network, Norm};

/// Sample counts and seed for certification.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Uniform interior points for sup-error estimates.
    pub samples: usize,
    /// Point pairs for Lipschitz estimates.
    pub pairs: usize,
    pub seed: u64,
    /// Corners are included when the dimension is at most this.
    pub max_corner_dim: usize,
    /// Relative scale of local perturbation pairs.
    pub local_scale: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            samples: 100_000,
            pairs: 10_000,
            seed: 42,
            max_corner_dim: 16,
            local_scale: 1e-3,
        }
    }
}

/// Sampled Lipschitz estimates in `ℓ_1`, `ℓ_2` and `ℓ_∞`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimates {
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
}

impl LipschitzEstimates {
    pub fn get(&self, norm: Norm) -> f64 {
        if norm == Norm::L1 {
            self.l1
        } else if norm == Norm::L2 {
            self.l2
        } else {
            self.linf
        }
    }

    pub fn max(&self) -> f64 {
        self.l1.max(self.l2).max(self.linf)
    }
}

/// Evidence that a network approximates a function: sampled sup error,
/// sampled Lipschitz constants and the exact parameter count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertReport {
    pub sup_error_estimate: f64,
    pub lipschitz_estimate: LipschitzEstimates,
    pub param_count: u64,
    pub sample_count: usize,
    pub pair_count: usize,
    pub domain: Hypercube,
    pub norm: Norm,
    pub seed: u64,
}

impl CertReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// The deterministic point set used for sup-error estimates: the center,
/// all corners when the dimension allows, then uniform samples.
pub fn sample_points(q: &Hypercube, cfg: &SamplerConfig) -> Vec<Vec<f64>> {
    let mut pts = vec![q.center()];
    if q.dim <= cfg.max_corner_dim {
        for c in 0..(1u64 << q.dim) {
            pts.push(q.corner(c));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.samples {
        pts.push((0..q.dim).map(|_| rng.gen_range(q.a..=q.b)).collect());
    }
    pts
}

/// The deterministic pair set for Lipschitz estimates: half independent
/// uniform pairs, half local perturbations of uniform points.
pub fn sample_pairs(q: &Hypercube, cfg: &SamplerConfig) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let h = cfg.local_scale * q.width();
    let mut pairs = Vec::with_capacity(cfg.pairs);
    while pairs.len() < cfg.pairs {
        let x: Vec<f64> = (0..q.dim).map(|_| rng.gen_range(q.a..=q.b)).collect();
        let y: Vec<f64> = if pairs.len() % 2 == 0 {
            (0..q.dim).map(|_| rng.gen_range(q.a..=q.b)).collect()
        } else {
            x.iter().map(|&v| (v + rng.gen_range(-h..=h)).clamp(q.a, q.b)).collect()
        };
        if x != y {
            pairs.push((x, y));
        }
    }
    pairs
}

/// Output error `‖net(x) - oracle(x)‖_p` at each point.
pub fn pointwise_errors(
    net: &Network,
    oracle: &(dyn Fn(&[f64]) -> Result<Vec<f64>> + Sync),
    points: &[Vec<f64>],
    norm: Norm,
) -> Result<Vec<f64>> {
    let outputs = net.evaluate_many(points)?;
    points
        .par_iter()
        .zip(outputs.par_iter())
        .map(|(x, y)| {
            let want = oracle(x)?;
            if want.len() != y.len() {
                return Err(Error::shape(format!(
                    "oracle returns {} values, network {}",
                    want.len(),
                    y.len()
                )));
            }
            if want.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("oracle is not finite at {x:?}")));
            }
            Ok(norm.dist(y, &want))
        })
        .collect()
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

/// Sampled `sup_{x ∈ Q} ‖net(x) - oracle(x)‖_p`.
pub fn sup_error(
    net: &Network,
    oracle: &(dyn Fn(&[f64]) -> Result<Vec<f64>> + Sync),
    q: &Hypercube,
    norm: Norm,
    cfg: &SamplerConfig,
) -> Result<f64> {
    check_domain(net, q)?;
    let pts = sample_points(q, cfg);
    Ok(max_of(&pointwise_errors(net, oracle, &pts, norm)?))
}

fn check_domain(net: &Network, q: &Hypercube) -> Result<()> {
    if net.input_dim() == q.dim {
        Ok(())
    } else {
        Err(Error::shape(format!(
            "network has {} inputs, domain has dimension {}",
            net.input_dim(),
            q.dim
        )))
    }
}

/// Ratios `‖Δ net‖_p / ‖Δ x‖_p` for each sampled pair and each norm.
pub fn pair_ratios(net: &Network, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<Vec<[f64; 3]>> {
    let xs: Vec<Vec<f64>> = pairs.iter().map(|p| p.0.clone()).collect();
    let ys: Vec<Vec<f64>> = pairs.iter().map(|p| p.1.clone()).collect();
    let fx = net.evaluate_many(&xs)?;
    let fy = net.evaluate_many(&ys)?;
    Ok(pairs
        .par_iter()
        .zip(fx.par_iter().zip(fy.par_iter()))
        .map(|((x, y), (a, b))| {
            [Norm::L1, Norm::L2, Norm::INF].map(|n| {
                let din = n.dist(x, y);
                if din > 0.0 {
                    n.dist(a, b) / din
                } else {
                    0.0
                }
            })
        })
        .collect())
}

/// Sampled Lipschitz constants in all three norms from one pair set.
pub fn lipschitz_all(net: &Network, q: &Hypercube, cfg: &SamplerConfig) -> Result<LipschitzEstimates> {
    check_domain(net, q)?;
    let ratios = pair_ratios(net, &sample_pairs(q, cfg))?;
    let m = |k: usize| ratios.iter().map(|r| r[k]).fold(0.0, f64::max);
    Ok(LipschitzEstimates {
        l1: m(0),
        l2: m(1),
        linf: m(2),
    })
}

/// Sampled `ℓ_p` Lipschitz constant of the network on `q`.
pub fn lipschitz_est(net: &Network, q: &Hypercube, norm: Norm, cfg: &SamplerConfig) -> Result<f64> {
    check_domain(net, q)?;
    let pairs = sample_pairs(q, cfg);
    let xs: Vec<Vec<f64>> = pairs.iter().map(|p| p.0.clone()).collect();
    let ys: Vec<Vec<f64>> = pairs.iter().map(|p| p.1.clone()).collect();
    let fx = net.evaluate_many(&xs)?;
    let fy = net.evaluate_many(&ys)?;
    Ok(pairs
        .par_iter()
        .zip(fx.par_iter().zip(fy.par_iter()))
        .map(|((x, y), (a, b))| norm.dist(a, b) / norm.dist(x, y))
        .reduce(|| 0.0, f64::max))
}

/// Full report: sup error against `oracle` in `ℓ_p` and Lipschitz estimates.
pub fn certify(
    net: &Network,
    oracle: &(dyn Fn(&[f64]) -> Result<Vec<f64>> + Sync),
    q: &Hypercube,
    norm: Norm,
    cfg: &SamplerConfig,
) -> Result<CertReport> {
    let pts = sample_points(q, cfg);
    check_domain(net, q)?;
    let sup = max_of(&pointwise_errors(net, oracle, &pts, norm)?);
    let lip = if cfg.pairs > 0 {
        lipschitz_all(net, q, cfg)?
    } else {
        LipschitzEstimates::default()
    };
    Ok(CertReport {
        sup_error_estimate: sup,
        lipschitz_estimate: lip,
        param_count: net.param_count(),
        sample_count: pts.len(),
        pair_count: cfg.pairs,
        domain: *q,
        norm,
        seed: cfg.seed,
    })
}

/// Factors converting an `ℓ_p` certificate `(L, ε)` of a map `R^m -> R^n`
/// into an `ℓ_q` certificate `(λ L, η ε)`, returned as `(λ, η)`:
/// `λ = max{m^{1/p - 1/q}, n^{1/q - 1/p}}` and `η = max{n^{1/q - 1/p}, 1}`.
pub fn norm_factors(m: usize, n: usize, p: Norm, q: Norm) -> (f64, f64) {
    let (ip, iq) = (p.inv(), q.inv());
    let m = m as f64;
    let n = n as f64;
    let lip = m.powf(ip - iq).max(n.powf(iq - ip));
    let eps = n.powf(iq - ip).max(1.0);
    (lip, eps)
}

/// Least-squares line through `(x, y)` points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual.
    pub rms_residual: f64,
    /// Largest `|residual| / |fitted value|`.
    pub max_rel_residual: f64,
}

/// Least-squares fit of `y = slope x + intercept`; needs at least three
/// points with distinct abscissae.
pub fn linear_fit(points: &[(f64, f64)]) -> Result<Fit> {
    if points.len() < 3 {
        return Err(Error::invalid(format!(
            "a fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::invalid("fit points must be finite"));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("fit abscissae must not all coincide"));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<(f64, f64)> = points
        .iter()
        .map(|&(x, y)| {
            let fit = slope * x + intercept;
            (y - fit, fit)
        })
        .collect();
    let rms_residual = (residuals.iter().map(|r| r.0 * r.0).sum::<f64>() / n).sqrt();
    let max_rel_residual = residuals
        .iter()
        .map(|&(r, f)| if f != 0.0 { (r / f).abs() } else { r.abs() })
        .fold(0.0, f64::max);
    Ok(Fit {
        slope,
        intercept,
        rms_residual,
        max_rel_residual,
    })
}

/// Growth exponent: least-squares slope of `ln y` against `ln x`.
pub fn scaling_fit(points: &[(f64, f64)]) -> Result<Fit> {
    if points.iter().any(|&(x, y)| x <= 0.0 || y <= 0.0) {
        return Err(Error::invalid("scaling fit needs positive values"));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    linear_fit(&logs)
}
