//! Property tests for the invariants of networks, the calculus, the
//! constructors, the certifier and the pipeline.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relu_forge::calculus::{clip_to, compose, compose_chain, parallelize};
use relu_forge::certifier::{
    certify, lipschitz_all, norm_factors, pair_ratios, pointwise_errors, sample_pairs, sample_points, SamplerConfig,
};
use relu_forge::constructors::{
    cummax_net, cumprod_net, lip1_product_net, max_net, maxconv_net, product_net, BuildLimits, LipschitzBlockSpec,
};
use relu_forge::pipeline::analysis::{check_range, AnalysisConfig, RangeCheck};
use relu_forge::pipeline::build::propagate;
use relu_forge::pipeline::{build, builtin_family, BuildOptions, Expr, FunctionSpec, Interval};
use relu_forge::{AffineMap, Hypercube, Network, Norm};

const EXACT: f64 = 1e-9;
const NORMS: [Norm; 3] = [Norm::L1, Norm::L2, Norm::INF];

fn random_map(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> AffineMap {
    let w: Vec<Vec<f64>> = (0..rows)
        .map(|_| (0..cols).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let b = (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect();
    AffineMap::from_dense(&w, b).unwrap()
}

/// A dense network `input -> … -> output` with up to `max_depth` layers.
fn random_net(rng: &mut ChaCha8Rng, input: usize, output: usize, max_depth: usize) -> Network {
    let depth = rng.gen_range(1..=max_depth);
    let mut dims = vec![input];
    dims.extend((1..depth).map(|_| rng.gen_range(1..=5)));
    dims.push(output);
    Network::new(dims.windows(2).map(|w| random_map(rng, w[1], w[0])).collect()).unwrap()
}

fn random_points(rng: &mut ChaCha8Rng, dim: usize, count: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| (0..dim).map(|_| rng.gen_range(-scale..=scale)).collect())
        .collect()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

fn quick_sampler(seed: u64) -> SamplerConfig {
    SamplerConfig {
        samples: 500,
        pairs: 500,
        seed,
        ..Default::default()
    }
}

/// Largest `‖W‖_∞` over the layers, multiplied along the depth.
fn sup_norm_lipschitz(net: &Network) -> f64 {
    net.layers()
        .iter()
        .map(|l| {
            (0..l.rows())
                .map(|i| l.row(i).map(|(_, w)| w.abs()).sum::<f64>())
                .fold(0.0, f64::max)
        })
        .product()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn serialization_preserves_counts_and_values(seed in any::<u64>(), input in 1usize..5, output in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_net(&mut rng, input, output, 4);
        let back = Network::from_json(&net.to_json()).unwrap();
        prop_assert_eq!(back.param_count(), net.param_count());
        for x in random_points(&mut rng, input, 20, 3.0) {
            prop_assert_eq!(back.evaluate(&x).unwrap(), net.evaluate(&x).unwrap());
        }
    }

    #[test]
    fn relabeling_hidden_units_preserves_evaluation(seed in any::<u64>(), input in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_net(&mut rng, input, 2, 3);
        prop_assume!(net.depth() >= 2);
        let k = rng.gen_range(0..net.depth() - 1);
        let layers = net.layers();
        let rows = layers[k].rows();
        let mut perm: Vec<usize> = (0..rows).collect();
        for i in (1..rows).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let w = layers[k].to_dense();
        let permuted = AffineMap::from_dense(
            &perm.iter().map(|&i| w[i].clone()).collect::<Vec<_>>(),
            perm.iter().map(|&i| layers[k].bias()[i]).collect(),
        ).unwrap();
        let next = layers[k + 1].to_dense();
        let reordered = AffineMap::from_dense(
            &next.iter().map(|r| perm.iter().map(|&i| r[i]).collect()).collect::<Vec<_>>(),
            layers[k + 1].bias().to_vec(),
        ).unwrap();
        let mut new_layers = layers.to_vec();
        new_layers[k] = permuted;
        new_layers[k + 1] = reordered;
        let relabeled = Network::new(new_layers).unwrap();
        for x in random_points(&mut rng, input, 100, 3.0) {
            prop_assert!(close(&relabeled.evaluate(&x).unwrap(), &net.evaluate(&x).unwrap(), 1e-12));
        }
    }

    #[test]
    fn evaluation_is_continuous_along_segments(seed in any::<u64>(), input in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_net(&mut rng, input, 1, 4);
        let ends = random_points(&mut rng, input, 2, 3.0);
        let (x, y) = (&ends[0], &ends[1]);
        let bound = sup_norm_lipschitz(&net) * Norm::INF.dist(x, y);
        let n = 1000;
        let pts: Vec<Vec<f64>> = (0..=n)
            .map(|k| {
                let t = k as f64 / n as f64;
                x.iter().zip(y).map(|(a, b)| a + t * (b - a)).collect()
            })
            .collect();
        let vals = net.evaluate_many(&pts).unwrap();
        for w in vals.windows(2) {
            prop_assert!((w[1][0] - w[0][0]).abs() <= bound / n as f64 * (1.0 + 1e-9) + EXACT);
        }
    }

    #[test]
    fn composition_is_associative_and_bounded(seed in any::<u64>(), a in 1usize..4, b in 1usize..4, c in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_net(&mut rng, a, b, 3);
        let g = random_net(&mut rng, b, c, 3);
        let h = random_net(&mut rng, c, 2, 3);
        let left = compose(&h, &compose(&g, &f).unwrap()).unwrap();
        let right = compose(&compose(&h, &g).unwrap(), &f).unwrap();
        let gf = compose(&g, &f).unwrap();
        prop_assert!(gf.param_count() <= 3 * (g.param_count() + f.param_count()));
        let chain = compose_chain(&[f.clone(), g.clone(), h.clone()]).unwrap();
        let interfaces = (b * (b + 1) + c * (c + 1)) as u64;
        let total = f.param_count() + g.param_count() + h.param_count();
        prop_assert!(chain.param_count() <= 6 * interfaces + 3 * total);
        for x in random_points(&mut rng, a, 50, 2.0) {
            let want = h.evaluate(&g.evaluate(&f.evaluate(&x).unwrap()).unwrap()).unwrap();
            prop_assert!(close(&left.evaluate(&x).unwrap(), &right.evaluate(&x).unwrap(), EXACT));
            prop_assert!(close(&chain.evaluate(&x).unwrap(), &want, EXACT));
        }
    }

    #[test]
    fn parallelization_commutes_with_splitting(seed in any::<u64>(), n in 1usize..=16) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nets: Vec<Network> = (0..n)
            .map(|_| {
                let (i, o) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
                random_net(&mut rng, i, o, 4)
            })
            .collect();
        let par = parallelize(&nets).unwrap();
        let widest = nets.iter().map(|m| m.input_dim().max(m.output_dim())).max().unwrap() as u64;
        let total: u64 = nets.iter().map(Network::param_count).sum();
        // (11/4) n² w² ΣP, compared in integers.
        prop_assert!(4 * par.param_count() <= 11 * (n as u64).pow(2) * widest.pow(2) * total);
        for _ in 0..10 {
            let parts: Vec<Vec<f64>> = nets.iter().map(|m| random_points(&mut rng, m.input_dim(), 1, 2.0).remove(0)).collect();
            let want: Vec<f64> = nets.iter().zip(&parts).flat_map(|(m, x)| m.evaluate(x).unwrap()).collect();
            prop_assert!(close(&par.evaluate(&parts.concat()).unwrap(), &want, EXACT));
        }
    }

    #[test]
    fn clipping_is_exact_in_size_and_never_increases_lipschitz(seed in any::<u64>(), input in 1usize..4, output in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_net(&mut rng, input, output, 3);
        let q_out = Hypercube::new(-0.5, 0.75, output).unwrap();
        let clipped = clip_to(&net, &q_out).unwrap();
        let n = output as u64;
        prop_assert_eq!(clipped.param_count(), net.param_count() + 2 * n * (n + 1));
        let q_in = Hypercube::new(-2.0, 2.0, input).unwrap();
        let pairs = sample_pairs(&q_in, &SamplerConfig { pairs: 2000, seed, ..Default::default() });
        let before = pair_ratios(&net, &pairs).unwrap();
        let after = pair_ratios(&clipped, &pairs).unwrap();
        for (b, a) in before.iter().zip(&after) {
            for k in 0..3 {
                prop_assert!(a[k] <= b[k] * (1.0 + EXACT) + EXACT);
            }
        }
        for y in clipped.evaluate_many(&random_points(&mut rng, input, 50, 3.0)).unwrap() {
            prop_assert!(y.iter().all(|&v| (-0.5 - EXACT..=0.75 + EXACT).contains(&v)));
        }
    }

    #[test]
    fn max_constructions_are_exact(seed in any::<u64>(), d in 1usize..=64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, cm) = (max_net(d), cummax_net(d));
        for x in random_points(&mut rng, d, 20, 10.0) {
            let y = m.evaluate(&x).unwrap()[0];
            let ys = cm.evaluate(&x).unwrap();
            let mut run = f64::NEG_INFINITY;
            for k in 0..d {
                run = run.max(x[k]);
                prop_assert!((ys[k] - run).abs() <= EXACT);
            }
            prop_assert!((y - run).abs() <= EXACT);
        }
    }

    #[test]
    fn norm_conversion_is_sound(seed in any::<u64>(), input in 1usize..5, output in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_net(&mut rng, input, output, 3);
        let shift: Vec<f64> = (0..output).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let oracle = move |x: &[f64]| -> relu_forge::Result<Vec<f64>> {
            Ok(shift.iter().enumerate().map(|(k, s)| s * (x[0] * (k + 1) as f64).sin()).collect())
        };
        let perturbed = |x: &[f64]| -> relu_forge::Result<Vec<f64>> {
            let y = net.evaluate(x)?;
            Ok(y.iter().zip(oracle(x)?).map(|(a, b)| a + b).collect())
        };
        let q = Hypercube::new(-1.0, 1.0, input).unwrap();
        let cfg = quick_sampler(seed);
        let pts = sample_points(&q, &cfg);
        let pairs = sample_pairs(&q, &cfg);
        let ratios = pair_ratios(&net, &pairs).unwrap();
        for (i, p) in NORMS.iter().enumerate() {
            let eps_p = pointwise_errors(&net, &perturbed, &pts, *p).unwrap().into_iter().fold(0.0, f64::max);
            let lip_p = ratios.iter().map(|r| r[i]).fold(0.0, f64::max);
            for (j, q_norm) in NORMS.iter().enumerate() {
                let (lf, ef) = norm_factors(input, output, *p, *q_norm);
                let eps_q = pointwise_errors(&net, &perturbed, &pts, *q_norm).unwrap().into_iter().fold(0.0, f64::max);
                let lip_q = ratios.iter().map(|r| r[j]).fold(0.0, f64::max);
                prop_assert!(eps_q <= ef * eps_p * (1.0 + 1e-12) + 1e-300);
                prop_assert!(lip_q <= lf * lip_p * (1.0 + 1e-12) + 1e-300);
            }
        }
    }

    #[test]
    fn shrinking_the_domain_never_raises_estimates(seed in any::<u64>(), input in 1usize..4, lo in 0.0f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_net(&mut rng, input, 2, 3);
        let oracle = |x: &[f64]| -> relu_forge::Result<Vec<f64>> { Ok(vec![x[0].cos(), 0.0]) };
        let big = Hypercube::new(-1.0, 1.0, input).unwrap();
        let small = Hypercube::new(-1.0 + lo, 1.0 - lo / 2.0, input).unwrap();
        let cfg = quick_sampler(seed);
        let pts = sample_points(&big, &cfg);
        let shared: Vec<Vec<f64>> = pts.iter().filter(|x| small.contains(x)).cloned().collect();
        let pairs = sample_pairs(&big, &cfg);
        let shared_pairs: Vec<(Vec<f64>, Vec<f64>)> =
            pairs.iter().filter(|(x, y)| small.contains(x) && small.contains(y)).cloned().collect();
        for p in NORMS {
            let all = pointwise_errors(&net, &oracle, &pts, p).unwrap().into_iter().fold(0.0, f64::max);
            let sub = pointwise_errors(&net, &oracle, &shared, p).unwrap().into_iter().fold(0.0, f64::max);
            prop_assert!(sub <= all);
        }
        let all = pair_ratios(&net, &pairs).unwrap();
        let sub = pair_ratios(&net, &shared_pairs).unwrap();
        for k in 0..3 {
            let m = |r: &[[f64; 3]]| r.iter().map(|v| v[k]).fold(0.0, f64::max);
            prop_assert!(m(&sub) <= m(&all));
        }
    }

    #[test]
    fn reports_are_reproducible(seed in any::<u64>(), input in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_net(&mut rng, input, 1, 3);
        let oracle = |x: &[f64]| -> relu_forge::Result<Vec<f64>> { Ok(vec![x.iter().sum()]) };
        let q = Hypercube::new(-1.0, 1.0, input).unwrap();
        let cfg = quick_sampler(seed);
        let a = certify(&net, &oracle, &q, Norm::L2, &cfg).unwrap();
        let b = certify(&net, &oracle, &q, Norm::L2, &cfg).unwrap();
        prop_assert_eq!(a.to_json(), b.to_json());
        prop_assert!(a.sup_error_estimate >= 0.0 && a.lipschitz_estimate.l1 >= 0.0);
        prop_assert_eq!(lipschitz_all(&net, &q, &cfg).unwrap(), a.lipschitz_estimate);
    }

    #[test]
    fn range_acceptance_is_never_contradicted(
        seed in any::<u64>(),
        c in -2.0f64..2.0,
        k in 0.5f64..4.0,
        lo in -3.0f64..0.0,
        hi in 0.0f64..3.0,
    ) {
        let expr = Expr::parse(&format!("{c}*x1 + cos({k}*x2) - abs(x1*x2)"), 2).unwrap();
        let dom = [Interval::new(-1.0, 1.0), Interval::new(-0.5, 1.5)];
        let target = Interval::new(lo, hi);
        let cfg = AnalysisConfig::default();
        if let RangeCheck::Contained { .. } = check_range(&expr, &dom, target, &cfg).unwrap() {
            let tol = cfg.rel_tol * (1.0 + target.mag());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..2000 {
                let x = [rng.gen_range(-1.0..=1.0), rng.gen_range(-0.5..=1.5)];
                let v = expr.eval(&x).unwrap();
                prop_assert!(v >= lo - tol && v <= hi + tol, "{} at {:?}", v, x);
            }
        }
    }
}

fn cheap_family() -> impl Strategy<Value = (&'static str, usize)> {
    prop_oneof![
        (2usize..=6).prop_map(|d| ("prodmax_tree", d)),
        (2usize..=4).prop_map(|d| ("powermax", d)),
        (2usize..=3).prop_map(|d| ("gauss_prod", d)),
        Just(("tower", 2)),
        Just(("nested_log", 2)),
    ]
}

fn uncertified() -> BuildOptions {
    BuildOptions {
        certify: false,
        ..Default::default()
    }
}

/// Clipped stage outputs of `x`, one vector per stage.
fn stage_outputs(spec: &FunctionSpec, nets: &[Network], x: &[f64]) -> Vec<Vec<f64>> {
    assert_eq!(nets.len(), spec.stages.len());
    let mut cur = x.to_vec();
    nets.iter()
        .map(|n| {
            cur = n.evaluate(&cur).unwrap();
            cur.clone()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn budgets_telescope_to_the_accuracy((family, d) in cheap_family(), eps in 0.1f64..=1.0) {
        let spec = builtin_family(family, d).unwrap();
        let r = build(&spec, eps, &uncertified()).unwrap();
        prop_assert!(r.budget_identity_holds(), "{} vs {}", r.budget_identity, eps);
        let budgets: Vec<f64> = r.stages.iter().map(|s| s.budget).collect();
        let lips: Vec<f64> = r.stages.iter().map(|s| s.lipschitz_bound).collect();
        prop_assert!((propagate(&budgets, &lips) - eps).abs() <= 1e-12 * eps);
        prop_assert!(r.error_bound <= eps * (1.0 + 1e-12));
    }

    #[test]
    fn clipped_stage_outputs_stay_in_their_boxes((family, d) in cheap_family(), seed in any::<u64>()) {
        let spec = builtin_family(family, d).unwrap();
        let r = build(&spec, 0.5, &uncertified()).unwrap();
        let nets: Vec<Network> = r.stages.iter().map(|s| s.net.clone()).collect();
        let pts = sample_points(&spec.domain(), &SamplerConfig { samples: 500, seed, ..Default::default() });
        for x in &pts {
            for (s, y) in r.stages.iter().zip(stage_outputs(&spec, &nets, x)) {
                prop_assert!(s.clip.contains(&y), "stage {} output {:?} outside {:?}", s.index, y, s.clip);
            }
        }
    }

    #[test]
    fn builds_are_deterministic((family, d) in cheap_family()) {
        let spec = builtin_family(family, d).unwrap();
        let opts = BuildOptions { sampler: quick_sampler(42), ..Default::default() };
        let a = build(&spec, 0.5, &opts).unwrap();
        let b = build(&spec, 0.5, &opts).unwrap();
        prop_assert_eq!(a.network.to_json(), b.network.to_json());
        prop_assert_eq!(a.report.unwrap().to_json(), b.report.unwrap().to_json());
    }

    #[test]
    fn finer_accuracy_never_shrinks_networks(e1 in 0.01f64..=1.0, e2 in 0.01f64..=1.0, d in 2usize..=6) {
        let (fine, coarse) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let size = |f: &dyn Fn(f64) -> Network| (f(fine).param_count(), f(coarse).param_count());
        let checks = [
            size(&|e| product_net(d, 1.0, e).unwrap()),
            size(&|e| lip1_product_net(d, e).unwrap()),
            size(&|e| cumprod_net(d, e, Norm::INF).unwrap()),
            size(&|e| {
                let q = Hypercube::new(-1.0, 1.0, 1).unwrap();
                let block = LipschitzBlockSpec::new(1, Expr::parse("cos(3*x1)", 1).unwrap(), 3.0).unwrap();
                maxconv_net(&block, &q, e, Norm::INF, &BuildLimits::default()).unwrap().net
            }),
        ];
        for (f, c) in checks {
            prop_assert!(f >= c);
        }
        let spec = builtin_family("prodmax_tree", d).unwrap();
        let pf = build(&spec, fine, &uncertified()).unwrap().param_count;
        let pc = build(&spec, coarse, &uncertified()).unwrap().param_count;
        prop_assert!(pf >= pc);
    }
}
