//! Branch-and-bound interval analysis of expressions on boxes: gradient norm
//! bounds for Lipschitz validation and range enclosures for containment.
//!
//! Each box is bounded twice, by natural interval evaluation and by the
//! mean-value form around its center, and the intersection is used. Boxes
//! that cannot be decided are bisected along their widest side.

use super::expr::{Dual, Expr, Scalar};
use super::interval::Interval;
use crate::error::{Error, Result};
use crate::network::Norm;

/// Tolerances and work limits for the analyses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnalysisConfig {
    /// Relative slack below which a bound counts as attained.
    pub rel_tol: f64,
    /// Maximum number of boxes examined per analysis.
    pub max_boxes: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            rel_tol: 1e-9,
            max_boxes: 400_000,
        }
    }
}

/// Outcome of a Lipschitz validation.
#[derive(Clone, Debug, PartialEq)]
pub enum LipschitzCheck {
    /// The dual norm of the gradient is at most `bound` on the whole box.
    Valid { bound: f64 },
    /// The gradient at `point` has dual norm `value`, above the declaration.
    Understated { point: Vec<f64>, value: f64 },
    /// The work limit was reached; `bound` is the best proven bound.
    Inconclusive { bound: f64 },
}

/// Outcome of a range containment check.
#[derive(Clone, Debug, PartialEq)]
pub enum RangeCheck {
    /// The range lies in the target (up to the tolerance); `range` encloses it.
    Contained {
        range: Interval,
    },
    /// The function takes `value` at `point`, outside the target.
    Escapes {
        point: Vec<f64>,
        value: f64,
    },
    Inconclusive,
}

fn center(b: &[Interval]) -> Vec<f64> {
    b.iter().map(Interval::mid).collect()
}

fn split(b: &[Interval]) -> (Vec<Interval>, Vec<Interval>) {
    let axis = (0..b.len())
        .max_by(|&i, &j| b[i].width().total_cmp(&b[j].width()))
        .expect("nonempty box");
    let (l, r) = b[axis].bisect();
    let mut left = b.to_vec();
    let mut right = b.to_vec();
    left[axis] = l;
    right[axis] = r;
    (left, right)
}

fn dual_vars<T: Scalar>(values: Vec<T>) -> Vec<Dual<T>> {
    let n = values.len();
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| Dual::variable(v, i, n))
        .collect()
}

fn padded_grad<T: Scalar>(mut g: Vec<T>, n: usize) -> Vec<T> {
    g.resize(n, T::constant(0.0));
    g
}

/// Enclosures of the gradient components on a box, or `None` when interval
/// evaluation fails there.
fn gradient_enclosure(expr: &Expr, b: &[Interval]) -> Option<Vec<Interval>> {
    let n = b.len();
    let natural = expr.eval_generic(&dual_vars(b.to_vec())).ok()?;
    let natural = padded_grad(natural.grad, n);
    let c = center(b);
    let at_center = expr
        .eval_generic(&dual_vars(c.iter().map(|&v| Interval::point(v)).collect()))
        .ok();
    let second: Option<Dual<Dual<Interval>>> = {
        let vars: Vec<Dual<Dual<Interval>>> = b
            .iter()
            .enumerate()
            .map(|(i, &x)| Dual {
                value: Dual::variable(x, i, n),
                grad: (0..n).map(|j| Dual::constant(if i == j { 1.0 } else { 0.0 })).collect(),
            })
            .collect();
        expr.eval_generic(&vars).ok()
    };
    let (Some(at_center), Some(second)) = (at_center, second) else {
        return Some(natural);
    };
    let at_center = padded_grad(at_center.grad, n);
    let hessian = padded_grad(second.grad, n);
    Some(
        (0..n)
            .map(|i| {
                let row = padded_grad(hessian[i].grad.clone(), n);
                let mut mv = at_center[i];
                for (j, h) in row.iter().enumerate() {
                    let offset = Interval::new(b[j].lo - c[j], b[j].hi - c[j]);
                    mv = mv + *h * offset;
                }
                natural[i].intersect(&mv).unwrap_or(natural[i])
            })
            .collect(),
    )
}

/// Upper bound of `‖v‖_q` over a vector of intervals.
fn norm_bound(components: &[Interval], q: Norm) -> f64 {
    let mags: Vec<f64> = components.iter().map(Interval::mag).collect();
    let v = q.of(&mags);
    v + 4.0 * f64::EPSILON * v
}

fn point_gradient(expr: &Expr, x: &[f64]) -> Result<Vec<f64>> {
    let d = expr.eval_generic(&dual_vars(x.to_vec())).map_err(Error::Domain)?;
    Ok(padded_grad(d.grad, x.len()))
}

/// Checks that `expr` is `declared`-Lipschitz in `ℓ_p` on the box, i.e. that
/// the `ℓ_q` norm of its gradient (`1/p + 1/q = 1`) is at most `declared`.
pub fn check_lipschitz(
    expr: &Expr,
    domain: &[Interval],
    norm: Norm,
    declared: f64,
    cfg: &AnalysisConfig,
) -> Result<LipschitzCheck> {
    let q = norm.dual();
    let limit = declared * (1.0 + cfg.rel_tol) + cfg.rel_tol * f64::MIN_POSITIVE.sqrt();
    let mut stack = vec![domain.to_vec()];
    let mut proven = 0.0f64;
    let mut examined = 0usize;
    while let Some(b) = stack.pop() {
        examined += 1;
        if let Some(g) = gradient_enclosure(expr, &b) {
            let u = norm_bound(&g, q);
            if u <= limit {
                proven = proven.max(u);
                continue;
            }
        }
        let c = center(&b);
        let value = q.of(&point_gradient(expr, &c)?);
        if value > limit {
            return Ok(LipschitzCheck::Understated { point: c, value });
        }
        if examined >= cfg.max_boxes {
            let rest = stack
                .iter()
                .chain(std::iter::once(&b))
                .filter_map(|b| gradient_enclosure(expr, b).map(|g| norm_bound(&g, q)))
                .fold(f64::INFINITY, f64::min)
                .max(proven);
            return Ok(LipschitzCheck::Inconclusive { bound: rest });
        }
        let (l, r) = split(&b);
        stack.push(l);
        stack.push(r);
    }
    Ok(LipschitzCheck::Valid { bound: proven })
}

/// Enclosure of the range on a box via natural and mean-value forms.
fn range_enclosure(expr: &Expr, b: &[Interval]) -> Option<Interval> {
    let natural = expr.eval_generic(b).ok()?;
    let c = center(b);
    let fc = expr
        .eval_generic(&c.iter().map(|&v| Interval::point(v)).collect::<Vec<_>>())
        .ok();
    let grad = expr.eval_generic(&dual_vars(b.to_vec())).ok();
    match (fc, grad) {
        (Some(fc), Some(grad)) => {
            let grad = padded_grad(grad.grad, b.len());
            let mut mv = fc;
            for (j, g) in grad.iter().enumerate() {
                mv = mv + *g * Interval::new(b[j].lo - c[j], b[j].hi - c[j]);
            }
            Some(natural.intersect(&mv).unwrap_or(natural))
        }
        _ => Some(natural),
    }
}

/// Checks `expr(domain) ⊆ target`. Ranges that overshoot the target by at
/// most a relative tolerance count as contained.
pub fn check_range(expr: &Expr, domain: &[Interval], target: Interval, cfg: &AnalysisConfig) -> Result<RangeCheck> {
    let tol = cfg.rel_tol * (1.0 + target.mag());
    let widened = Interval::new(target.lo - tol, target.hi + tol);
    let mut stack = vec![domain.to_vec()];
    let mut range: Option<Interval> = None;
    let mut examined = 0usize;
    while let Some(b) = stack.pop() {
        examined += 1;
        if let Some(r) = range_enclosure(expr, &b) {
            if r.lo >= widened.lo && r.hi <= widened.hi {
                range = Some(range.map_or(r, |acc| acc.hull(&r)));
                continue;
            }
        }
        let c = center(&b);
        let value = expr.eval(&c)?;
        if !widened.contains(value) {
            return Ok(RangeCheck::Escapes { point: c, value });
        }
        for corner in 0..(1u64 << b.len().min(16)) {
            let x: Vec<f64> = b
                .iter()
                .enumerate()
                .map(|(j, iv)| if corner >> j & 1 == 1 { iv.hi } else { iv.lo })
                .collect();
            let v = expr.eval(&x)?;
            if !widened.contains(v) {
                return Ok(RangeCheck::Escapes { point: x, value: v });
            }
        }
        if examined >= cfg.max_boxes {
            return Ok(RangeCheck::Inconclusive);
        }
        let (l, r) = split(&b);
        stack.push(l);
        stack.push(r);
    }
    Ok(RangeCheck::Contained {
        range: range.expect("at least one box was accepted"),
    })
}

/// An enclosure of `expr(domain)` from a uniform subdivision.
pub fn enclose_range(expr: &Expr, domain: &[Interval]) -> Result<Interval> {
    let k = domain.len();
    let per_axis = match k {
        1 => 64,
        2 => 16,
        _ => 6,
    };
    let total = (per_axis as u64).pow(k as u32);
    let mut hull: Option<Interval> = None;
    for cell in 0..total {
        let mut rest = cell;
        let b: Vec<Interval> = domain
            .iter()
            .map(|iv| {
                let i = (rest % per_axis as u64) as f64;
                rest /= per_axis as u64;
                let w = iv.width() / per_axis as f64;
                let lo = if i == 0.0 { iv.lo } else { iv.lo + i * w };
                let hi = if i as usize == per_axis - 1 {
                    iv.hi
                } else {
                    iv.lo + (i + 1.0) * w
                };
                Interval::new(lo, hi)
            })
            .collect();
        let r = range_enclosure(expr, &b)
            .ok_or_else(|| Error::Domain(format!("`{expr}` cannot be evaluated on part of its domain")))?;
        if !r.is_finite() {
            return Err(Error::Domain(format!("`{expr}` is unbounded on its domain")));
        }
        hull = Some(hull.map_or(r, |h| h.hull(&r)));
    }
    Ok(hull.expect("at least one cell"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn boxed(lo: f64, hi: f64, k: usize) -> Vec<Interval> {
        vec![Interval::new(lo, hi); k]
    }

    #[test]
    fn tower_block_is_one_lipschitz_in_l1() {
        let e = Expr::parse("pow(x1,x2)", 2).unwrap();
        let q = boxed((-1.0f64).exp(), 1.0, 2);
        let r = check_lipschitz(&e, &q, Norm::L1, 1.0, &AnalysisConfig::default()).unwrap();
        assert!(matches!(r, LipschitzCheck::Valid { .. }), "{r:?}");
        let r = check_lipschitz(&e, &q, Norm::L1, 0.9, &AnalysisConfig::default()).unwrap();
        assert!(matches!(r, LipschitzCheck::Understated { .. }), "{r:?}");
    }

    #[test]
    fn gaussian_block_attains_its_constant() {
        for i in 1..=4 {
            let e = Expr::parse(&format!("exp(-{i}*pow(x1,2))"), 1).unwrap();
            let l = (2.0 * i as f64).sqrt() * (-0.5f64).exp();
            let q = boxed(-3.0, 3.0, 1);
            let r = check_lipschitz(&e, &q, Norm::INF, l, &AnalysisConfig::default()).unwrap();
            assert!(matches!(r, LipschitzCheck::Valid { .. }), "i={i}: {r:?}");
        }
    }

    #[test]
    fn dual_norms() {
        let e = Expr::parse("3*x1 - 4*x2", 2).unwrap();
        let q = boxed(0.0, 1.0, 2);
        let cfg = AnalysisConfig::default();
        let ok = |n, l| {
            matches!(
                check_lipschitz(&e, &q, n, l, &cfg).unwrap(),
                LipschitzCheck::Valid { .. }
            )
        };
        assert!(ok(Norm::L1, 4.0) && !ok(Norm::L1, 3.9));
        assert!(ok(Norm::L2, 5.0) && !ok(Norm::L2, 4.9));
        assert!(ok(Norm::INF, 7.0) && !ok(Norm::INF, 6.9));
    }

    #[test]
    fn kinks_are_handled() {
        let e = Expr::parse("abs(x1)", 1).unwrap();
        let q = boxed(-1.0, 1.0, 1);
        let r = check_lipschitz(&e, &q, Norm::L1, 1.0, &AnalysisConfig::default()).unwrap();
        assert!(matches!(r, LipschitzCheck::Valid { .. }));
    }

    #[test]
    fn range_containment() {
        let cfg = AnalysisConfig::default();
        let e = Expr::parse("pow(x1,x2)", 2).unwrap();
        let q = boxed((-1.0f64).exp(), 1.0, 2);
        let target = Interval::new((-1.0f64).exp(), 1.0);
        assert!(matches!(
            check_range(&e, &q, target, &cfg).unwrap(),
            RangeCheck::Contained { .. }
        ));
        let e = Expr::parse("x1 + ln(x2)", 2).unwrap();
        let q = boxed(1.0, 2.0, 2);
        let r = check_range(&e, &q, Interval::new(1.0, 2.5), &cfg).unwrap();
        assert!(matches!(r, RangeCheck::Escapes { .. }));
        let r = check_range(&e, &q, Interval::new(1.0, 2.0 + 2f64.ln()), &cfg).unwrap();
        assert!(matches!(r, RangeCheck::Contained { .. }));
    }

    #[test]
    fn enclosures() {
        let e = Expr::parse("cos(3*x1)", 1).unwrap();
        let r = enclose_range(&e, &boxed(-1.0, 1.0, 1)).unwrap();
        assert!(r.lo <= (3.0f64).cos() && r.hi >= 1.0);
        assert!(r.lo > -1.0);
        let e = Expr::parse("ln(x1)", 1).unwrap();
        assert!(enclose_range(&e, &boxed(-1.0, 1.0, 1)).is_err());
    }
}
