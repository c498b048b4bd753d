//! Compilation of a validated spec into one network.
//!
//! Stage `i` of `n` gets accuracy `ε_i = ε / (n ∏_{j>i} L_j)`, where `L_j`
//! is the certified Lipschitz bound of the network built for stage `j`.
//! Stages are therefore built last to first. Every stage network is clipped
//! into the domain of the next stage (the last one into the output box) and
//! the clipped networks are chained.

use serde::Serialize;

use super::spec::{reference_eval, FunctionSpec, Mode, StageKind, StageOp};
use crate::calculus::{clip_to, compose_chain};
use crate::certifier::{certify, CertReport, SamplerConfig};
use crate::constructors::{
    cummax_net, cumprod_approx, parallel_block_net, BoundedNetwork, BuildLimits, ParallelBlocks,
};
use crate::error::{Error, Result};
use crate::network::{Hypercube, Network};

/// Relative tolerance of the budget identity.
pub const BUDGET_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct BuildOptions {
    pub sampler: SamplerConfig,
    pub limits: BuildLimits,
    /// Whether to run sampled certification after construction.
    pub certify: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            sampler: SamplerConfig::default(),
            limits: BuildLimits::default(),
            certify: true,
        }
    }
}

/// What was built for one stage.
#[derive(Clone, Debug, Serialize)]
pub struct StageReport {
    pub index: usize,
    pub kind: StageKind,
    pub input_dim: usize,
    pub output_dim: usize,
    /// Accuracy `ε_i` the stage was built for.
    pub budget: f64,
    /// Certified error bound of the stage network, at most `budget`.
    pub error_bound: f64,
    /// Certified Lipschitz bound `L_i` of the stage network.
    pub lipschitz_bound: f64,
    /// Box the stage output is clipped into.
    pub clip: Hypercube,
    pub param_count: u64,
    /// The clipped stage network.
    #[serde(skip)]
    pub net: Network,
}

#[derive(Clone, Debug, Serialize)]
pub struct BuildResult {
    #[serde(skip)]
    pub network: Network,
    pub eps: f64,
    pub stages: Vec<StageReport>,
    /// `Σ_i (∏_{j>i} L_j) ε_i`, equal to `eps` up to rounding.
    pub budget_identity: f64,
    /// `Σ_i (∏_{j>i} L_j) e_i` for the certified stage errors `e_i`.
    pub error_bound: f64,
    pub param_count: u64,
    pub report: Option<CertReport>,
    /// Sampled sup error at most `eps` and budget identity holds.
    pub certified: bool,
}

impl BuildResult {
    pub fn budget_identity_holds(&self) -> bool {
        (self.budget_identity - self.eps).abs() <= BUDGET_TOLERANCE * self.eps
    }
}

/// `Σ_i (∏_{j>i} L_j) v_i`.
pub fn propagate(values: &[f64], lipschitz: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut factor = 1.0;
    for i in (0..values.len()).rev() {
        total += factor * values[i];
        factor *= lipschitz[i];
    }
    total
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("accuracy must lie in (0, 1], got {eps}")))
    }
}

fn stage_net(spec: &FunctionSpec, i: usize, eps: f64, limits: &BuildLimits) -> Result<BoundedNetwork> {
    let s = &spec.stages[i];
    let norm = spec.norm;
    let blocks = match &s.op {
        StageOp::Lipschitz(b) => ParallelBlocks::Lipschitz(b.clone()),
        StageOp::Max(p) => ParallelBlocks::Max(p.clone()),
        StageOp::Product(p) => match spec.mode {
            Mode::Theorem1 => ParallelBlocks::ProductLip1(p.clone()),
            Mode::Theorem2 => ParallelBlocks::ProductGeneral(p.clone()),
        },
        StageOp::ExtMax => {
            return Ok(BoundedNetwork {
                net: cummax_net(s.input_dim()),
                error_bound: 0.0,
                lipschitz_bound: norm.ones(s.input_dim()),
            })
        }
        StageOp::ExtProd => return cumprod_approx(s.input_dim(), eps, norm),
    };
    parallel_block_net(&blocks, &s.domain, eps, norm, limits)
}

/// Builds the network for `spec` at accuracy `eps` and, if requested,
/// certifies it against [`reference_eval`] on the first stage's domain.
pub fn build(spec: &FunctionSpec, eps: f64, opts: &BuildOptions) -> Result<BuildResult> {
    check_eps(eps)?;
    let n = spec.stages.len();
    let mut reports: Vec<Option<StageReport>> = vec![None; n];
    let mut later = 1.0f64;
    for i in (0..n).rev() {
        let budget = eps / (n as f64 * later);
        let b = stage_net(spec, i, budget, &opts.limits).map_err(|e| match e {
            Error::ResourceLimit(m) => Error::ResourceLimit(format!("stage {i}: {m}")),
            other => other,
        })?;
        if b.error_bound > budget * (1.0 + 1e-12) {
            return Err(Error::invalid(format!(
                "stage {i} error bound {} exceeds its budget {budget}",
                b.error_bound
            )));
        }
        let clip = spec.clip_box(i);
        let net = clip_to(&b.net, &clip)?;
        later *= b.lipschitz_bound;
        let s = &spec.stages[i];
        reports[i] = Some(StageReport {
            index: i,
            kind: s.kind(),
            input_dim: s.input_dim(),
            output_dim: s.output_dim(),
            budget,
            error_bound: b.error_bound,
            lipschitz_bound: b.lipschitz_bound,
            clip,
            param_count: net.param_count(),
            net,
        });
    }
    let stages: Vec<StageReport> = reports.into_iter().map(|r| r.expect("every stage built")).collect();
    let lips: Vec<f64> = stages.iter().map(|s| s.lipschitz_bound).collect();
    let budgets: Vec<f64> = stages.iter().map(|s| s.budget).collect();
    let errors: Vec<f64> = stages.iter().map(|s| s.error_bound).collect();
    let nets: Vec<Network> = stages.iter().map(|s| s.net.clone()).collect();
    let network = if nets.len() == 1 {
        nets.into_iter().next().expect("one stage")
    } else {
        compose_chain(&nets)?
    };
    let mut result = BuildResult {
        param_count: network.param_count(),
        network,
        eps,
        budget_identity: propagate(&budgets, &lips),
        error_bound: propagate(&errors, &lips),
        stages,
        report: None,
        certified: false,
    };
    if opts.certify {
        let oracle = |x: &[f64]| reference_eval(spec, x);
        let report = certify(&result.network, &oracle, &spec.domain(), spec.norm, &opts.sampler)?;
        result.certified = report.sup_error_estimate <= eps && result.budget_identity_holds();
        result.report = Some(report);
    }
    Ok(result)
}
