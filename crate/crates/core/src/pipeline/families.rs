//! Built-in example families of compositional functions.

use serde::Serialize;

use super::analysis::AnalysisConfig;
use super::spec::{validate, BlockDoc, Bounds, FunctionSpec, Mode, SpecDoc, StageDoc, StageKind};
use crate::error::{Error, Result};
use crate::network::{Hypercube, Norm};

/// Catalog entry of a built-in family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FamilyInfo {
    pub name: &'static str,
    /// Catalog number of the example.
    pub example: u32,
    pub mode: Mode,
    pub summary: &'static str,
}

const CATALOG: [FamilyInfo; 6] = [
    FamilyInfo {
        name: "tower",
        example: 1,
        mode: Mode::Theorem1,
        summary: "power tower x1^(x2^(...^xd)) on [1/e, 1]^d",
    },
    FamilyInfo {
        name: "nested_log",
        example: 2,
        mode: Mode::Theorem1,
        summary: "ln(x1 + ln(x2 + ... + ln(xd))) on [1, a]^d, a = 2",
    },
    FamilyInfo {
        name: "prodmax_tree",
        example: 3,
        mode: Mode::Theorem1,
        summary: "alternating block products and maxima on [-a, a]^(d^2), a = 1/8",
    },
    FamilyInfo {
        name: "powermax",
        example: 4,
        mode: Mode::Theorem2,
        summary: "max_k (x1 ... xk)^(d+k-1) on [-1, 1]^d",
    },
    FamilyInfo {
        name: "gauss_prod",
        example: 5,
        mode: Mode::Theorem2,
        summary: "prod_i exp(-i |xi|^2) on [-c d^c, c d^c]^d, c = 1",
    },
    FamilyInfo {
        name: "cos_max",
        example: 6,
        mode: Mode::Theorem2,
        summary: "max_l cos(l x(3l-2) + l^2 x(3l-1) + l^3 x(3l)) on [-c d^c, c d^c]^(3d), c = 3",
    },
];

pub fn catalog() -> &'static [FamilyInfo] {
    &CATALOG
}

/// Optional family parameters: the scale `a` (nested_log, prodmax_tree)
/// and the constant `c` (gauss_prod, cos_max).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FamilyParams {
    pub a: Option<f64>,
    pub c: Option<u32>,
}

/// Bounds `a_1, …, a_d` with `a_d = a` and `a_i = a_{i+1} + ln(a_{i+1})`.
pub fn nested_log_bounds(d: usize, a: f64) -> Vec<f64> {
    let mut out = vec![a; d];
    for i in (0..d.saturating_sub(1)).rev() {
        out[i] = out[i + 1] + out[i + 1].ln();
    }
    out
}

pub fn builtin_family(name: &str, d: usize) -> Result<FunctionSpec> {
    builtin_family_with(name, d, &FamilyParams::default())
}

fn cube(a: f64, b: f64, dim: usize) -> Hypercube {
    Hypercube { a, b, dim }
}

fn block(dim: usize, expr: String, lipschitz: f64) -> BlockDoc {
    BlockDoc { dim, expr, lipschitz }
}

fn lipschitz(domain: Hypercube, blocks: Vec<BlockDoc>) -> StageDoc {
    StageDoc {
        kind: StageKind::LipschitzParallel,
        domain,
        blocks: Some(blocks),
        partition: None,
    }
}

fn partitioned(kind: StageKind, domain: Hypercube, parts: Vec<usize>) -> StageDoc {
    StageDoc {
        kind,
        domain,
        blocks: None,
        partition: Some(parts),
    }
}

/// Stages `(x_1, …, x_{k-1}, h(x_k, x_{k+1}))` for `k = d-1, …, 1` on
/// domains `[lo, hi_s]`.
fn pair_chain(d: usize, lo: f64, his: &[f64], expr: &str) -> Vec<StageDoc> {
    (0..d - 1)
        .map(|s| {
            let dim = d - s;
            let mut blocks: Vec<BlockDoc> = (0..dim - 2).map(|_| block(1, "x1".into(), 1.0)).collect();
            blocks.push(block(2, expr.into(), 1.0));
            lipschitz(cube(lo, his[s], dim), blocks)
        })
        .collect()
}

fn tower(d: usize) -> SpecDoc {
    let lo = (-1.0f64).exp();
    SpecDoc {
        mode: Mode::Theorem1,
        norm: Norm::L1,
        c: Some(2),
        d: Some(d),
        output: Some(Bounds { a: lo, b: 1.0 }),
        stages: pair_chain(d, lo, &vec![1.0; d], "pow(x1,x2)"),
    }
}

fn nested_log(d: usize, a: f64) -> Result<SpecDoc> {
    if !(a > 1.0 && a.is_finite()) {
        return Err(Error::invalid(format!("nested_log needs a > 1, got {a}")));
    }
    // Stage s acts on [1, a_{d-s}]^{d-s}, where the recursion runs from
    // a_d = a downwards; bounds[k] holds a_{k+1}.
    let bounds = nested_log_bounds(d, a);
    let his: Vec<f64> = (0..d).map(|s| bounds[d - 1 - s]).collect();
    let mut stages = pair_chain(d, 1.0, &his, "x1 + ln(x2)");
    stages.push(lipschitz(cube(1.0, bounds[0], 1), vec![block(1, "ln(x1)".into(), 1.0)]));
    Ok(SpecDoc {
        mode: Mode::Theorem1,
        norm: Norm::L1,
        c: Some(2),
        d: Some(d),
        output: Some(Bounds {
            a: 0.0,
            b: bounds[0].ln(),
        }),
        stages,
    })
}

/// Placement of the working vector between stages: each entry is a single
/// value or a block of `d` raw coordinates.
#[derive(Clone, Copy, PartialEq)]
enum Slot {
    Value,
    Raw,
}

fn prodmax_tree(d: usize, a: f64) -> Result<SpecDoc> {
    if !(a > 0.0 && a <= 0.125) {
        return Err(Error::invalid(format!("prodmax_tree needs a in (0, 1/8], got {a}")));
    }
    let q = |dim: usize| cube(-a, a, dim);
    let width = |slots: &[Slot]| -> usize { slots.iter().map(|s| if *s == Slot::Raw { d } else { 1 }).sum() };
    // Blocks B_1, …, B_d of d coordinates; odd blocks are multiplied, even
    // blocks maximized. The first stage forms every block product.
    let mut stages = Vec::new();
    let mut parts = Vec::new();
    let mut slots = Vec::new();
    for j in 0..d {
        if j % 2 == 0 {
            parts.push(d);
            slots.push(Slot::Value);
        } else {
            parts.extend(std::iter::repeat_n(1, d));
            slots.push(Slot::Raw);
        }
    }
    stages.push(partitioned(StageKind::ProductParallel, q(d * d), parts));
    // Working from the innermost block outwards, a max stage merges a raw
    // block with the value after it and a product stage multiplies the
    // preceding block product into the result.
    while slots.len() > 1 {
        let last = slots.len() - 1;
        let before: usize = width(&slots[..last - 1]);
        if slots[last] == Slot::Raw {
            let mut parts = vec![1; width(&slots[..last])];
            parts.push(d);
            stages.push(partitioned(StageKind::MaxParallel, q(width(&slots)), parts));
            slots[last] = Slot::Value;
        } else if slots[last - 1] == Slot::Raw {
            let mut parts = vec![1; before];
            parts.push(d + 1);
            stages.push(partitioned(StageKind::MaxParallel, q(width(&slots)), parts));
            slots.pop();
            slots[last - 1] = Slot::Value;
        } else {
            let mut parts = vec![1; before];
            parts.push(2);
            stages.push(partitioned(StageKind::ProductParallel, q(width(&slots)), parts));
            slots.pop();
        }
    }
    Ok(SpecDoc {
        mode: Mode::Theorem1,
        norm: Norm::L1,
        c: Some(2),
        d: Some(d),
        output: Some(Bounds { a: -a, b: a }),
        stages,
    })
}

fn powermax(d: usize) -> SpecDoc {
    let q = cube(-1.0, 1.0, d);
    let blocks = (1..=d)
        .map(|i| {
            let k = d + i - 1;
            block(1, format!("pow(x1,{k})"), k as f64)
        })
        .collect();
    SpecDoc {
        mode: Mode::Theorem2,
        norm: Norm::INF,
        c: Some(2),
        d: Some(d),
        output: Some(Bounds { a: -1.0, b: 1.0 }),
        stages: vec![
            StageDoc {
                kind: StageKind::ExtProd,
                domain: q,
                blocks: None,
                partition: None,
            },
            lipschitz(q, blocks),
            partitioned(StageKind::MaxParallel, q, vec![d]),
        ],
    }
}

fn gauss_prod(d: usize, c: u32) -> SpecDoc {
    let r = super::spec::growth_bound(c, d);
    // |d/dx exp(-i x^2)| = 2 i |x| exp(-i x^2) peaks at sqrt(2 i / e).
    let blocks = (1..=d)
        .map(|i| {
            let l = (2.0 * i as f64 / std::f64::consts::E).sqrt() * (1.0 + 1e-12);
            block(1, format!("exp(-{i}*pow(x1,2))"), l)
        })
        .collect();
    SpecDoc {
        mode: Mode::Theorem2,
        norm: Norm::INF,
        c: Some(c),
        d: Some(d),
        output: Some(Bounds { a: -1.0, b: 1.0 }),
        stages: vec![
            lipschitz(cube(-r, r, d), blocks),
            partitioned(StageKind::ProductParallel, cube(-1.0, 1.0, d), vec![d]),
        ],
    }
}

fn cos_max(d: usize, c: u32) -> SpecDoc {
    let r = super::spec::growth_bound(c, d);
    // In ℓ_∞ the constant is the ℓ_1 norm of the coefficient vector.
    let blocks = (1..=d)
        .map(|l| {
            let (l1, l2, l3) = (l, l * l, l * l * l);
            block(3, format!("cos({l1}*x1 + {l2}*x2 + {l3}*x3)"), (l1 + l2 + l3) as f64)
        })
        .collect();
    SpecDoc {
        mode: Mode::Theorem2,
        norm: Norm::INF,
        c: Some(c),
        d: Some(d),
        output: Some(Bounds { a: -1.0, b: 1.0 }),
        stages: vec![
            lipschitz(cube(-r, r, 3 * d), blocks),
            partitioned(StageKind::MaxParallel, cube(-1.0, 1.0, d), vec![d]),
        ],
    }
}

/// The spec document of a family, before validation.
pub fn family_doc(name: &str, d: usize, params: &FamilyParams) -> Result<SpecDoc> {
    if d < 2 {
        return Err(Error::invalid(format!("families need d >= 2, got {d}")));
    }
    Ok(match name {
        "tower" => tower(d),
        "nested_log" => nested_log(d, params.a.unwrap_or(2.0))?,
        "prodmax_tree" => prodmax_tree(d, params.a.unwrap_or(0.125))?,
        "powermax" => powermax(d),
        "gauss_prod" => gauss_prod(d, params.c.unwrap_or(1)),
        "cos_max" => cos_max(d, params.c.unwrap_or(3)),
        other => {
            let names: Vec<&str> = CATALOG.iter().map(|f| f.name).collect();
            return Err(Error::invalid(format!(
                "unknown family `{other}`; known families: {}",
                names.join(", ")
            )));
        }
    })
}

/// A validated family spec.
pub fn builtin_family_with(name: &str, d: usize, params: &FamilyParams) -> Result<FunctionSpec> {
    validate(&family_doc(name, d, params)?, &AnalysisConfig::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::spec::{reference_eval, StageOp};

    #[test]
    fn tower_stages() {
        let s = builtin_family("tower", 3).unwrap();
        assert_eq!(s.stages.len(), 2);
        assert!(s.stages.iter().all(|st| matches!(st.op, StageOp::Lipschitz(_))));
        let v = reference_eval(&s, &[0.5, 0.5, 0.5]).unwrap()[0];
        assert!((v - 0.5f64.powf(0.5f64.powf(0.5))).abs() < 1e-15);
        assert!((v - 0.61255).abs() < 1e-4);
    }

    #[test]
    fn nested_log_recursion() {
        let b = nested_log_bounds(3, 2.0);
        assert_eq!(b[2], 2.0);
        assert_eq!(b[1], 2.0 + 2f64.ln());
        assert_eq!(b[0], b[1] + b[1].ln());
        let s = builtin_family("nested_log", 3).unwrap();
        assert_eq!(s.stages[0].domain.b, 2.0);
        assert_eq!(s.stages[1].domain.b, b[1]);
        assert_eq!(s.stages[2].domain.b, b[0]);
        let x = [1.5, 1.25, 1.75];
        let want = (1.5 + (1.25 + 1.75f64.ln()).ln()).ln();
        assert!((reference_eval(&s, &x).unwrap()[0] - want).abs() < 1e-15);
    }

    fn prodmax_direct(d: usize, x: &[f64]) -> f64 {
        let block = |j: usize| &x[j * d..(j + 1) * d];
        let mut inner: Option<f64> = None;
        for j in (0..d).rev() {
            inner = Some(if j % 2 == 0 {
                let p: f64 = block(j).iter().product();
                p * inner.unwrap_or(1.0)
            } else {
                let m = block(j).iter().copied().fold(f64::NEG_INFINITY, f64::max);
                inner.map_or(m, |v| m.max(v))
            });
        }
        inner.unwrap()
    }

    #[test]
    fn prodmax_tree_matches_formula() {
        for d in 2..=5 {
            let s = builtin_family("prodmax_tree", d).unwrap();
            assert_eq!(s.input_dim(), d * d);
            assert_eq!(s.output_dim(), 1);
            let x: Vec<f64> = (0..d * d).map(|i| 0.125 * ((i * 7 % 11) as f64 / 5.0 - 1.0)).collect();
            let got = reference_eval(&s, &x).unwrap()[0];
            assert!((got - prodmax_direct(d, &x)).abs() < 1e-18, "d = {d}");
        }
        let s = builtin_family("prodmax_tree", 4).unwrap();
        let x = vec![0.125; 16];
        let want = 0.125f64.powi(4) * 0.125f64.max(0.125f64.powi(4) * 0.125);
        assert_eq!(reference_eval(&s, &x).unwrap()[0], want);
    }

    #[test]
    fn powermax_stages() {
        let s = builtin_family("powermax", 4).unwrap();
        let kinds: Vec<StageKind> = s.stages.iter().map(|st| st.kind()).collect();
        assert_eq!(
            kinds,
            vec![StageKind::ExtProd, StageKind::LipschitzParallel, StageKind::MaxParallel]
        );
        let x = [0.9, -0.8, 0.7, 0.5];
        let mut best = f64::NEG_INFINITY;
        let mut p = 1.0f64;
        for (k, v) in x.iter().enumerate() {
            p *= v;
            best = best.max(p.powi((4 + k) as i32));
        }
        assert!((reference_eval(&s, &x).unwrap()[0] - best).abs() < 1e-15);
    }

    #[test]
    fn theorem2_families() {
        for d in 2..=4 {
            let g = builtin_family("gauss_prod", d).unwrap();
            assert_eq!(g.stages.len(), 2);
            let x = vec![0.3; d];
            let want: f64 = (1..=d).map(|i| (-(i as f64) * 0.09).exp()).product();
            assert!((reference_eval(&g, &x).unwrap()[0] - want).abs() < 1e-15);
        }
        assert!(builtin_family("cos_max", 2).is_ok());
        let err = builtin_family_with("cos_max", 2, &FamilyParams { a: None, c: Some(1) }).unwrap_err();
        assert!(matches!(err, Error::Hypothesis { .. }));
    }

    #[test]
    fn unknown_family() {
        assert!(builtin_family("nope", 3).is_err());
        assert!(builtin_family("tower", 1).is_err());
        assert_eq!(catalog().len(), 6);
    }
}
