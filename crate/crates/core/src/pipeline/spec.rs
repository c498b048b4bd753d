//! Staged function specifications: the JSON document format, validation of
//! the chaining and domain hypotheses, and exact reference evaluation.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::analysis::{check_lipschitz, check_range, enclose_range, AnalysisConfig, LipschitzCheck, RangeCheck};
use super::expr::Expr;
use super::interval::Interval;
use crate::constructors::{LipschitzBlockSpec, PartitionSpec};
use crate::error::{Error, Result};
use crate::network::{Hypercube, Norm};

/// Largest block dimension accepted for Lipschitz blocks.
pub const MAX_BLOCK_DIM: usize = 3;

/// Largest `c` tried when a spec does not state it.
const MAX_INFERRED_C: u32 = 64;

/// Which composition theorem a spec is checked against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Any number of stages; Lipschitz blocks at most 1 in `ℓ_1`; products
    /// on `[-1/8, 1/8]^d`.
    Theorem1,
    /// Fixed stage count; block Lipschitz constants up to `c d^c`;
    /// running maxima and products allowed; products on `[-1, 1]^d`.
    Theorem2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    LipschitzParallel,
    MaxParallel,
    ProductParallel,
    ExtMax,
    ExtProd,
}

impl std::fmt::Display for StageKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            StageKind::LipschitzParallel => "lipschitz_parallel",
            StageKind::MaxParallel => "max_parallel",
            StageKind::ProductParallel => "product_parallel",
            StageKind::ExtMax => "ext_max",
            StageKind::ExtProd => "ext_prod",
        };
        f.write_str(s)
    }
}

/// The function a stage computes.
#[derive(Clone, Debug, PartialEq)]
pub enum StageOp {
    /// Lipschitz blocks on consecutive coordinate groups.
    Lipschitz(Vec<LipschitzBlockSpec>),
    /// Maximum of each part of a partition.
    Max(PartitionSpec),
    /// Product of each part of a partition.
    Product(PartitionSpec),
    /// Running maxima `(x_1, max{x_1, x_2}, …)`.
    ExtMax,
    /// Running products `(x_1, x_1 x_2, …)`.
    ExtProd,
}

/// One stage `g_i` on its domain `Q_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct StageSpec {
    pub op: StageOp,
    pub domain: Hypercube,
}

impl StageSpec {
    pub fn kind(&self) -> StageKind {
        match self.op {
            StageOp::Lipschitz(_) => StageKind::LipschitzParallel,
            StageOp::Max(_) => StageKind::MaxParallel,
            StageOp::Product(_) => StageKind::ProductParallel,
            StageOp::ExtMax => StageKind::ExtMax,
            StageOp::ExtProd => StageKind::ExtProd,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.domain.dim
    }

    pub fn output_dim(&self) -> usize {
        match &self.op {
            StageOp::Lipschitz(blocks) => blocks.len(),
            StageOp::Max(p) | StageOp::Product(p) => p.parts().len(),
            StageOp::ExtMax | StageOp::ExtProd => self.domain.dim,
        }
    }

    /// Exact evaluation of the stage function.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(format!(
                "stage expects {} inputs, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        let groups = |parts: &[usize]| -> Vec<std::ops::Range<usize>> {
            let mut start = 0;
            parts
                .iter()
                .map(|&k| {
                    start += k;
                    start - k..start
                })
                .collect()
        };
        Ok(match &self.op {
            StageOp::Lipschitz(blocks) => {
                let dims: Vec<usize> = blocks.iter().map(|b| b.dim).collect();
                blocks
                    .iter()
                    .zip(groups(&dims))
                    .map(|(b, r)| b.expr.eval(&x[r]))
                    .collect::<Result<_>>()?
            }
            StageOp::Max(p) => groups(p.parts())
                .into_iter()
                .map(|r| x[r].iter().copied().fold(f64::NEG_INFINITY, f64::max))
                .collect(),
            StageOp::Product(p) => groups(p.parts()).into_iter().map(|r| x[r].iter().product()).collect(),
            StageOp::ExtMax => x
                .iter()
                .scan(f64::NEG_INFINITY, |m, &v| {
                    *m = m.max(v);
                    Some(*m)
                })
                .collect(),
            StageOp::ExtProd => x
                .iter()
                .scan(1.0, |p, &v| {
                    *p *= v;
                    Some(*p)
                })
                .collect(),
        })
    }
}

/// Bounds `[a, b]` of an output box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub a: f64,
    pub b: f64,
}

/// A validated composition `F = g_n ∘ ⋯ ∘ g_1`.
#[derive(Clone, Debug, PartialEq)]
pub struct FunctionSpec {
    pub mode: Mode,
    pub norm: Norm,
    /// The constant `c` of the theorem hypotheses.
    pub c: u32,
    /// The dimension parameter `d` the hypotheses refer to.
    pub d: usize,
    pub stages: Vec<StageSpec>,
    /// Box containing the range of the last stage; stage outputs are
    /// clipped into it.
    pub output: Bounds,
}

impl FunctionSpec {
    pub fn input_dim(&self) -> usize {
        self.stages[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.stages.last().expect("validated spec has stages").output_dim()
    }

    pub fn domain(&self) -> Hypercube {
        self.stages[0].domain
    }

    /// Box that the output of stage `i` is clipped into.
    pub fn clip_box(&self, i: usize) -> Hypercube {
        match self.stages.get(i + 1) {
            Some(next) => next.domain,
            None => Hypercube {
                a: self.output.a,
                b: self.output.b,
                dim: self.output_dim(),
            },
        }
    }

    pub fn to_doc(&self) -> SpecDoc {
        SpecDoc {
            mode: self.mode,
            norm: self.norm,
            c: Some(self.c),
            d: Some(self.d),
            output: Some(self.output),
            stages: self.stages.iter().map(stage_doc).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("spec serializes")
    }
}

fn stage_doc(s: &StageSpec) -> StageDoc {
    let (blocks, partition) = match &s.op {
        StageOp::Lipschitz(blocks) => (
            Some(
                blocks
                    .iter()
                    .map(|b| BlockDoc {
                        dim: b.dim,
                        expr: b.expr.source().to_string(),
                        lipschitz: b.lipschitz,
                    })
                    .collect(),
            ),
            None,
        ),
        StageOp::Max(p) | StageOp::Product(p) => (None, Some(p.parts().to_vec())),
        StageOp::ExtMax | StageOp::ExtProd => (None, None),
    };
    StageDoc {
        kind: s.kind(),
        domain: s.domain,
        blocks,
        partition,
    }
}

/// The JSON form of a spec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecDoc {
    pub mode: Mode,
    pub norm: Norm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<Bounds>,
    pub stages: Vec<StageDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageDoc {
    pub kind: StageKind,
    pub domain: Hypercube,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<Vec<BlockDoc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockDoc {
    pub dim: usize,
    pub expr: String,
    pub lipschitz: f64,
}

fn spec_err(path: impl Into<String>, msg: impl Into<String>) -> Error {
    Error::Spec {
        path: path.into(),
        message: msg.into(),
    }
}

/// Parses and validates a JSON spec document.
pub fn parse_spec(document: &str) -> Result<FunctionSpec> {
    parse_spec_with(document, &AnalysisConfig::default())
}

pub fn parse_spec_with(document: &str, cfg: &AnalysisConfig) -> Result<FunctionSpec> {
    let de = &mut serde_json::Deserializer::from_str(document);
    let doc: SpecDoc = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if inner.is_syntax() || inner.is_eof() || path == "." {
            Error::Parse(inner.to_string())
        } else {
            spec_err(path, inner.to_string())
        }
    })?;
    validate(&doc, cfg)
}

/// Structural conversion of a document, without hypothesis checks.
fn convert(doc: &SpecDoc) -> Result<Vec<StageSpec>> {
    if doc.stages.is_empty() {
        return Err(spec_err("stages", "a spec needs at least one stage"));
    }
    let mut stages = Vec::with_capacity(doc.stages.len());
    for (i, s) in doc.stages.iter().enumerate() {
        let at = |field: &str| format!("stages[{i}]{field}");
        let domain =
            Hypercube::new(s.domain.a, s.domain.b, s.domain.dim).map_err(|e| spec_err(at(".domain"), e.to_string()))?;
        let wants_blocks = s.kind == StageKind::LipschitzParallel;
        let wants_partition = matches!(s.kind, StageKind::MaxParallel | StageKind::ProductParallel);
        if s.blocks.is_some() != wants_blocks {
            let msg = if wants_blocks {
                "`blocks` is required"
            } else {
                "`blocks` is not allowed"
            };
            return Err(spec_err(at(".blocks"), format!("{msg} for {} stages", s.kind)));
        }
        if s.partition.is_some() != wants_partition {
            let msg = if wants_partition {
                "`partition` is required"
            } else {
                "`partition` is not allowed"
            };
            return Err(spec_err(at(".partition"), format!("{msg} for {} stages", s.kind)));
        }
        let op = match s.kind {
            StageKind::LipschitzParallel => {
                let docs = s.blocks.as_ref().expect("checked above");
                if docs.is_empty() {
                    return Err(spec_err(at(".blocks"), "at least one block is required"));
                }
                let mut blocks = Vec::with_capacity(docs.len());
                for (j, b) in docs.iter().enumerate() {
                    let bat = |field: &str| at(&format!(".blocks[{j}]{field}"));
                    if b.dim == 0 || b.dim > MAX_BLOCK_DIM {
                        return Err(spec_err(
                            bat(".dim"),
                            format!("block dimension must be in 1..={MAX_BLOCK_DIM}, got {}", b.dim),
                        ));
                    }
                    let expr = Expr::parse(&b.expr, b.dim).map_err(|e| spec_err(bat(".expr"), e.to_string()))?;
                    let block = LipschitzBlockSpec::new(b.dim, expr, b.lipschitz)
                        .map_err(|e| spec_err(bat(".lipschitz"), e.to_string()))?;
                    blocks.push(block);
                }
                let total: usize = blocks.iter().map(|b| b.dim).sum();
                if total != domain.dim {
                    return Err(spec_err(
                        at(".blocks"),
                        format!(
                            "blocks cover {total} coordinates but the domain has dimension {}",
                            domain.dim
                        ),
                    ));
                }
                StageOp::Lipschitz(blocks)
            }
            StageKind::MaxParallel | StageKind::ProductParallel => {
                let parts = s.partition.clone().expect("checked above");
                let p = PartitionSpec::new(parts).map_err(|e| spec_err(at(".partition"), e.to_string()))?;
                if p.total() != domain.dim {
                    return Err(spec_err(
                        at(".partition"),
                        format!(
                            "partition covers {} coordinates but the domain has dimension {}",
                            p.total(),
                            domain.dim
                        ),
                    ));
                }
                if s.kind == StageKind::MaxParallel {
                    StageOp::Max(p)
                } else {
                    StageOp::Product(p)
                }
            }
            StageKind::ExtMax => StageOp::ExtMax,
            StageKind::ExtProd => StageOp::ExtProd,
        };
        stages.push(StageSpec { op, domain });
    }
    for i in 1..stages.len() {
        let out = stages[i - 1].output_dim();
        if stages[i].input_dim() != out {
            return Err(spec_err(
                format!("stages[{i}].domain.dim"),
                format!(
                    "dimension chain broken: stage {} outputs {out} values but stage {} has dimension {}",
                    i - 1,
                    i,
                    stages[i].input_dim()
                ),
            ));
        }
    }
    Ok(stages)
}

/// `c d^c`, saturating.
pub fn growth_bound(c: u32, d: usize) -> f64 {
    c as f64 * (d as f64).powi(c as i32)
}

/// First violated size condition for a given `c`, if any.
fn size_violation(mode: Mode, c: u32, d: usize, stages: &[StageSpec]) -> Option<Error> {
    let bound = growth_bound(c, d);
    for (i, s) in stages.iter().enumerate() {
        let dims = [s.input_dim(), s.output_dim()];
        if dims.iter().any(|&k| k as f64 > bound) {
            return Some(Error::hypothesis(
                "stage dimensions at most c d^c",
                format!("stage {i} has dimensions {dims:?}, c d^c = {bound} for c = {c}, d = {d}"),
            ));
        }
        if s.domain.a < -bound || s.domain.b > bound {
            return Some(Error::hypothesis(
                "Q_i ⊆ [-c d^c, c d^c]^dim",
                format!(
                    "stage {i} domain [{}, {}] exceeds ±{bound} for c = {c}, d = {d}",
                    s.domain.a, s.domain.b
                ),
            ));
        }
        if let StageOp::Lipschitz(blocks) = &s.op {
            for (j, b) in blocks.iter().enumerate() {
                if b.dim as u32 > c {
                    return Some(Error::hypothesis(
                        "Lipschitz blocks of dimension at most c",
                        format!("stage {i} block {j} has dimension {} > c = {c}", b.dim),
                    ));
                }
                if mode == Mode::Theorem2 && b.lipschitz > bound {
                    return Some(Error::hypothesis(
                        "block Lipschitz constants at most c d^c",
                        format!("stage {i} block {j} declares {} > c d^c = {bound}", b.lipschitz),
                    ));
                }
            }
        }
    }
    None
}

fn mode_violation(mode: Mode, norm: Norm, stages: &[StageSpec]) -> Option<Error> {
    let (lo, hi) = match mode {
        Mode::Theorem1 => (-0.125, 0.125),
        Mode::Theorem2 => (-1.0, 1.0),
    };
    if mode == Mode::Theorem1 && norm != Norm::L1 {
        return Some(Error::hypothesis(
            "theorem1 stages are Lipschitz in ℓ_1",
            format!("theorem1 specs use norm 1, got {norm}"),
        ));
    }
    for (i, s) in stages.iter().enumerate() {
        match (&s.op, mode) {
            (StageOp::ExtMax | StageOp::ExtProd, Mode::Theorem1) => {
                return Some(Error::hypothesis(
                    "theorem1 allows Lipschitz, max and product stages only",
                    format!("stage {i} is {}", s.kind()),
                ));
            }
            (StageOp::Lipschitz(blocks), Mode::Theorem1) => {
                if let Some((j, b)) = blocks.iter().enumerate().find(|(_, b)| b.lipschitz > 1.0) {
                    return Some(Error::hypothesis(
                        "theorem1 Lipschitz blocks have constant at most 1",
                        format!("stage {i} block {j} declares {}", b.lipschitz),
                    ));
                }
            }
            _ => {}
        }
        let bounded =
            matches!(s.op, StageOp::Product(_)) || (mode == Mode::Theorem2 && matches!(s.op, StageOp::ExtProd));
        if bounded && (s.domain.a < lo || s.domain.b > hi) {
            return Some(Error::hypothesis(
                format!("product stages need Q_i ⊆ [{lo}, {hi}]^dim"),
                format!("stage {i} domain is [{}, {}]^{}", s.domain.a, s.domain.b, s.domain.dim),
            ));
        }
    }
    None
}

fn block_boxes(s: &StageSpec, dim: usize) -> Vec<Interval> {
    vec![Interval::new(s.domain.a, s.domain.b); dim]
}

fn power_hull(x: Interval, k: usize) -> Interval {
    (1..k).fold(x, |acc, _| acc * x)
}

/// Enclosure of every output component of a stage on its domain.
fn stage_range(s: &StageSpec) -> Result<Interval> {
    let x = Interval::new(s.domain.a, s.domain.b);
    Ok(match &s.op {
        StageOp::Lipschitz(blocks) => {
            let mut hull: Option<Interval> = None;
            for b in blocks {
                let r = enclose_range(&b.expr, &block_boxes(s, b.dim))?;
                hull = Some(hull.map_or(r, |h| h.hull(&r)));
            }
            hull.expect("stages have blocks")
        }
        StageOp::Max(_) | StageOp::ExtMax => x,
        StageOp::Product(p) => p
            .parts()
            .iter()
            .map(|&k| power_hull(x, k))
            .reduce(|a, b| a.hull(&b))
            .expect("partitions are nonempty"),
        StageOp::ExtProd => (1..=s.domain.dim)
            .map(|k| power_hull(x, k))
            .reduce(|a, b| a.hull(&b))
            .expect("dimension is positive"),
    })
}

/// Checks `g_i(Q_i) ⊆ [target.lo, target.hi]^dim`.
fn check_containment(
    i: usize,
    s: &StageSpec,
    target: Interval,
    cfg: &AnalysisConfig,
    proven: &mut HashSet<String>,
) -> Result<()> {
    let fail = |msg: String| Error::hypothesis("range containment g_i(Q_i) ⊆ Q_{i+1}", msg);
    let tol = cfg.rel_tol * (1.0 + target.mag());
    match &s.op {
        StageOp::Lipschitz(blocks) => {
            for (j, b) in blocks.iter().enumerate() {
                let key = format!(
                    "range {} {:?} {:?} {} {:?} {:?}",
                    b.expr.source(),
                    s.domain.a,
                    s.domain.b,
                    b.dim,
                    target.lo,
                    target.hi
                );
                if proven.contains(&key) {
                    continue;
                }
                match check_range(&b.expr, &block_boxes(s, b.dim), target, cfg)? {
                    RangeCheck::Contained { .. } => {
                        proven.insert(key);
                    }
                    RangeCheck::Escapes { point, value } => {
                        return Err(fail(format!(
                            "stage {i} block {j} takes {value} at {point:?}, outside [{}, {}]",
                            target.lo, target.hi
                        )))
                    }
                    RangeCheck::Inconclusive => {
                        return Err(fail(format!(
                            "stage {i} block {j}: containment in [{}, {}] could not be proven",
                            target.lo, target.hi
                        )))
                    }
                }
            }
        }
        _ => {
            let r = stage_range(s)?;
            if r.lo < target.lo - tol || r.hi > target.hi + tol {
                return Err(fail(format!(
                    "stage {i} ({}) has range [{}, {}], outside [{}, {}]",
                    s.kind(),
                    r.lo,
                    r.hi,
                    target.lo,
                    target.hi
                )));
            }
        }
    }
    Ok(())
}

fn check_blocks(i: usize, s: &StageSpec, norm: Norm, cfg: &AnalysisConfig, proven: &mut HashSet<String>) -> Result<()> {
    let StageOp::Lipschitz(blocks) = &s.op else {
        return Ok(());
    };
    for (j, b) in blocks.iter().enumerate() {
        let key = format!(
            "lip {} {:?} {:?} {} {:?} {norm}",
            b.expr.source(),
            s.domain.a,
            s.domain.b,
            b.dim,
            b.lipschitz
        );
        if proven.contains(&key) {
            continue;
        }
        let boxes = block_boxes(s, b.dim);
        if b.expr.eval_generic(&boxes).is_err() {
            return Err(Error::hypothesis(
                "expressions are nonsingular on their domain",
                format!(
                    "stage {i} block {j} `{}` is not defined on all of [{}, {}]^{}",
                    b.expr.source(),
                    s.domain.a,
                    s.domain.b,
                    b.dim
                ),
            ));
        }
        let condition = "declared Lipschitz constants bound the gradient";
        match check_lipschitz(&b.expr, &boxes, norm, b.lipschitz, cfg)? {
            LipschitzCheck::Valid { .. } => {
                proven.insert(key);
            }
            LipschitzCheck::Understated { point, value } => {
                return Err(Error::hypothesis(
                    condition,
                    format!(
                        "stage {i} block {j} `{}` declares {} but its gradient has dual norm {value} at {point:?}",
                        b.expr.source(),
                        b.lipschitz
                    ),
                ))
            }
            LipschitzCheck::Inconclusive { bound } => {
                return Err(Error::hypothesis(
                    condition,
                    format!(
                        "stage {i} block {j} `{}` declares {}; the best proven bound is {bound}",
                        b.expr.source(),
                        b.lipschitz
                    ),
                ))
            }
        }
    }
    Ok(())
}

/// Validates a document against the hypotheses of its mode.
pub fn validate(doc: &SpecDoc, cfg: &AnalysisConfig) -> Result<FunctionSpec> {
    let stages = convert(doc)?;
    let d = doc.d.unwrap_or(stages[0].input_dim());
    if d == 0 {
        return Err(spec_err("d", "d must be positive"));
    }
    if let Some(e) = mode_violation(doc.mode, doc.norm, &stages) {
        return Err(e);
    }
    let c = match doc.c {
        Some(0) => return Err(spec_err("c", "c must be positive")),
        Some(c) => {
            if let Some(e) = size_violation(doc.mode, c, d, &stages) {
                return Err(e);
            }
            c
        }
        None => match (1..=MAX_INFERRED_C).find(|&c| size_violation(doc.mode, c, d, &stages).is_none()) {
            Some(c) => c,
            None => return Err(size_violation(doc.mode, MAX_INFERRED_C, d, &stages).expect("no c fits")),
        },
    };
    // Families repeat identical blocks across stages; each is proven once.
    let mut proven = HashSet::new();
    for (i, s) in stages.iter().enumerate() {
        check_blocks(i, s, doc.norm, cfg, &mut proven)?;
    }
    for i in 0..stages.len() - 1 {
        let next = stages[i + 1].domain;
        check_containment(i, &stages[i], Interval::new(next.a, next.b), cfg, &mut proven)?;
    }
    let last_index = stages.len() - 1;
    let last = &stages[last_index];
    let output = match doc.output {
        Some(o) => {
            if !(o.a.is_finite() && o.b.is_finite() && o.a < o.b) {
                return Err(spec_err(
                    "output",
                    format!("output bounds need a < b, got [{}, {}]", o.a, o.b),
                ));
            }
            check_containment(last_index, last, Interval::new(o.a, o.b), cfg, &mut proven)?;
            o
        }
        None => {
            let r = stage_range(last)?;
            if !r.is_finite() {
                return Err(spec_err("output", "the final range is unbounded; state `output`"));
            }
            if r.lo < r.hi {
                Bounds { a: r.lo, b: r.hi }
            } else {
                Bounds {
                    a: r.lo,
                    b: r.lo.next_up(),
                }
            }
        }
    };
    Ok(FunctionSpec {
        mode: doc.mode,
        norm: doc.norm,
        c,
        d,
        stages,
        output,
    })
}

/// Exact staged evaluation `g_n(…g_1(x)…)` for `x ∈ Q_1`.
pub fn reference_eval(spec: &FunctionSpec, x: &[f64]) -> Result<Vec<f64>> {
    let q = spec.domain();
    if !q.contains(x) {
        return Err(Error::Domain(format!(
            "point {x:?} is outside the domain [{}, {}]^{}",
            q.a, q.b, q.dim
        )));
    }
    let mut v = x.to_vec();
    for s in &spec.stages {
        v = s.apply(&v)?;
    }
    if v.iter().any(|y| !y.is_finite()) {
        return Err(Error::Domain(format!("reference value is not finite at {x:?}")));
    }
    Ok(v)
}
