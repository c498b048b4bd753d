//! Scaling studies: build and certify a family over a grid of dimensions
//! and accuracies, and fit growth exponents of the parameter count.

use std::fmt::Write as _;

use serde::Serialize;

use super::build::{build, BuildOptions};
use super::families::{builtin_family_with, FamilyParams};
use crate::certifier::{scaling_fit, Fit};
use crate::error::Result;

/// One `(d, ε)` cell of a study.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingRow {
    pub d: usize,
    pub eps: f64,
    pub params: Option<u64>,
    pub sup_error: Option<f64>,
    pub stages: Option<usize>,
    /// `Σ_i (∏_{j>i} L_j) ε_i` of the build.
    pub budget_identity: Option<f64>,
    pub certified: bool,
    /// Why the cell failed to build, if it did.
    pub error: Option<String>,
}

/// Slope of `ln 𝓟` against `ln d` at fixed `ε`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DimensionFit {
    pub eps: f64,
    pub fit: Fit,
}

/// Slope of `ln 𝓟` against `ln(1/ε)` at fixed `d`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AccuracyFit {
    pub d: usize,
    pub fit: Fit,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingReport {
    pub family: String,
    pub seed: u64,
    pub samples: usize,
    pub rows: Vec<ScalingRow>,
    pub dimension_fits: Vec<DimensionFit>,
    pub accuracy_fits: Vec<AccuracyFit>,
    pub all_certified: bool,
}

impl ScalingReport {
    /// CSV with header `d,eps,params,sup_error`; failed cells leave the
    /// last two fields empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("d,eps,params,sup_error\n");
        for r in &self.rows {
            let params = r.params.map(|p| p.to_string()).unwrap_or_default();
            let sup = r.sup_error.map(fmt_float).unwrap_or_default();
            writeln!(out, "{},{},{},{}", r.d, fmt_float(r.eps), params, sup).expect("writing to a string");
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Shortest decimal that round-trips.
pub fn fmt_float(x: f64) -> String {
    format!("{x:?}")
}

/// Fits over the series points that built: `(x, params)` pairs, needing at
/// least three.
fn fit_points(points: Vec<(f64, f64)>) -> Option<Fit> {
    (points.len() >= 3).then(|| scaling_fit(&points).ok()).flatten()
}

/// Builds and certifies `family` at every `(d, ε)`. Failures are recorded
/// per cell and the study continues.
pub fn run_scaling(
    family: &str,
    dims: &[usize],
    eps_set: &[f64],
    params: &FamilyParams,
    opts: &BuildOptions,
) -> Result<ScalingReport> {
    // Unknown families fail before any work.
    super::families::family_doc(family, dims.first().copied().unwrap_or(2).max(2), params)?;
    let mut rows = Vec::with_capacity(dims.len() * eps_set.len());
    for &d in dims {
        let spec = builtin_family_with(family, d, params);
        for &eps in eps_set {
            let cell = spec
                .as_ref()
                .map_err(|e| e.clone())
                .and_then(|s| build(s, eps, opts).map(|r| (s.stages.len(), r)));
            rows.push(match cell {
                Ok((stages, r)) => ScalingRow {
                    d,
                    eps,
                    params: Some(r.param_count),
                    sup_error: r.report.as_ref().map(|c| c.sup_error_estimate),
                    stages: Some(stages),
                    budget_identity: Some(r.budget_identity),
                    certified: r.certified,
                    error: None,
                },
                Err(e) => ScalingRow {
                    d,
                    eps,
                    params: None,
                    sup_error: None,
                    stages: None,
                    budget_identity: None,
                    certified: false,
                    error: Some(e.to_string()),
                },
            });
        }
    }
    let dimension_fits = eps_set
        .iter()
        .filter_map(|&eps| {
            let pts = rows
                .iter()
                .filter(|r| r.eps == eps)
                .filter_map(|r| r.params.map(|p| (r.d as f64, p as f64)))
                .collect();
            fit_points(pts).map(|fit| DimensionFit { eps, fit })
        })
        .collect();
    let accuracy_fits = dims
        .iter()
        .filter_map(|&d| {
            let pts = rows
                .iter()
                .filter(|r| r.d == d)
                .filter_map(|r| r.params.map(|p| (1.0 / r.eps, p as f64)))
                .collect();
            fit_points(pts).map(|fit| AccuracyFit { d, fit })
        })
        .collect();
    Ok(ScalingReport {
        family: family.to_string(),
        seed: opts.sampler.seed,
        samples: opts.sampler.samples,
        all_certified: rows.iter().all(|r| r.certified),
        rows,
        dimension_fits,
        accuracy_fits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certifier::SamplerConfig;

    #[test]
    fn csv_layout() {
        let report = ScalingReport {
            family: "x".into(),
            seed: 42,
            samples: 1,
            rows: vec![
                ScalingRow {
                    d: 2,
                    eps: 0.1,
                    params: Some(10),
                    sup_error: Some(0.01),
                    stages: Some(1),
                    budget_identity: Some(0.1),
                    certified: true,
                    error: None,
                },
                ScalingRow {
                    d: 3,
                    eps: 0.05,
                    params: None,
                    sup_error: None,
                    stages: None,
                    budget_identity: None,
                    certified: false,
                    error: Some("too big".into()),
                },
            ],
            dimension_fits: vec![],
            accuracy_fits: vec![],
            all_certified: false,
        };
        assert_eq!(report.to_csv(), "d,eps,params,sup_error\n2,0.1,10,0.01\n3,0.05,,\n");
    }

    #[test]
    fn small_powermax_study() {
        let opts = BuildOptions {
            sampler: SamplerConfig {
                samples: 500,
                pairs: 0,
                ..Default::default()
            },
            ..Default::default()
        };
        let r = run_scaling("powermax", &[2, 3, 4], &[0.1], &FamilyParams::default(), &opts).unwrap();
        assert_eq!(r.rows.len(), 3);
        assert!(r.all_certified, "{:?}", r.rows);
        assert_eq!(r.dimension_fits.len(), 1);
        assert!(r.dimension_fits[0].fit.slope.is_finite());
        assert!(run_scaling("nope", &[2], &[0.1], &FamilyParams::default(), &opts).is_err());
    }
}
