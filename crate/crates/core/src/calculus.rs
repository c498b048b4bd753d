//! Network calculus: identity networks, composition, parallelization,
//! clipping and affine wrapping.

use crate::error::{Error, Result};
use crate::network::{AffineMap, Hypercube, Network};

/// `[I; -I]`, the first layer of the identity network on `R^d`.
fn split_map(d: usize) -> AffineMap {
    AffineMap::from_triplets(
        2 * d,
        d,
        (0..d).flat_map(|i| [(i, i, 1.0), (d + i, i, -1.0)]),
        vec![0.0; 2 * d],
    )
    .expect("split map is well formed")
}

/// `[I, -I]`, the second layer of the identity network on `R^d`.
fn merge_map(d: usize) -> AffineMap {
    AffineMap::from_triplets(
        d,
        2 * d,
        (0..d).flat_map(|i| [(i, i, 1.0), (i, d + i, -1.0)]),
        vec![0.0; d],
    )
    .expect("merge map is well formed")
}

/// The identity network on `R^d` with architecture `(d, 2d, d)`, using
/// `x = r(x) - r(-x)`.
pub fn identity_network(d: usize) -> Network {
    assert!(d >= 1, "identity network needs d >= 1");
    Network::new(vec![split_map(d), merge_map(d)]).expect("identity network is well formed")
}

/// Fuses the last layer of `inner` with the first layer of `outer`, without
/// any activation in between. The result has depth
/// `inner.depth() + outer.depth() - 1`.
pub fn fuse(outer: &Network, inner: &Network) -> Result<Network> {
    if inner.output_dim() != outer.input_dim() {
        return Err(Error::shape(format!(
            "cannot compose: inner output dimension {} differs from outer input dimension {}",
            inner.output_dim(),
            outer.input_dim()
        )));
    }
    let (inner_last, inner_rest) = inner.layers().split_last().expect("nonempty");
    let (outer_first, outer_rest) = outer.layers().split_first().expect("nonempty");
    let mut layers = inner_rest.to_vec();
    layers.push(outer_first.compose(inner_last)?);
    layers.extend_from_slice(outer_rest);
    Network::new(layers)
}

/// `outer ∘ inner` realized as `outer ∘ I_d ∘ inner`, with both boundary
/// affine maps fused into the identity network.
pub fn compose(outer: &Network, inner: &Network) -> Result<Network> {
    if inner.output_dim() != outer.input_dim() {
        return Err(Error::shape(format!(
            "cannot compose: inner output dimension {} differs from outer input dimension {}",
            inner.output_dim(),
            outer.input_dim()
        )));
    }
    let sandwiched = fuse(&identity_network(inner.output_dim()), inner)?;
    fuse(outer, &sandwiched)
}

/// Composes networks given in order of application: `[f_1, …, f_n]`
/// yields `f_n ∘ … ∘ f_1`.
pub fn compose_chain(nets: &[Network]) -> Result<Network> {
    let (first, rest) = nets
        .split_first()
        .ok_or_else(|| Error::invalid("compose_chain needs at least one network"))?;
    for (k, pair) in nets.windows(2).enumerate() {
        if pair[0].output_dim() != pair[1].input_dim() {
            return Err(Error::shape(format!(
                "network {k} has {} outputs but network {} expects {} inputs",
                pair[0].output_dim(),
                k + 1,
                pair[1].input_dim()
            )));
        }
    }
    let mut acc = first.clone();
    for next in rest {
        acc = compose(next, &acc)?;
    }
    Ok(acc)
}

/// Appends `extra` layers to `net` without changing its realization by
/// passing the output through identity networks.
pub fn pad_depth(net: &Network, extra: usize) -> Network {
    if extra == 0 {
        return net.clone();
    }
    let e = net.output_dim();
    let (last, rest) = net.layers().split_last().expect("nonempty");
    let mut layers = rest.to_vec();
    layers.push(split_map(e).compose(last).expect("dimensions chain"));
    let relay = split_map(e).compose(&merge_map(e)).expect("dimensions chain");
    for _ in 1..extra {
        layers.push(relay.clone());
    }
    layers.push(merge_map(e));
    Network::new(layers).expect("padded network chains")
}

/// The parallelization `f_1 □ … □ f_n`: shorter networks are padded to a
/// common depth, then the layers are stacked block-diagonally.
pub fn parallelize(nets: &[Network]) -> Result<Network> {
    if nets.is_empty() {
        return Err(Error::invalid("parallelize needs at least one network"));
    }
    if nets.len() == 1 {
        return Ok(nets[0].clone());
    }
    let depth = nets.iter().map(Network::depth).max().expect("nonempty");
    let padded: Vec<Network> = nets.iter().map(|n| pad_depth(n, depth - n.depth())).collect();
    let layers = (0..depth)
        .map(|k| {
            let maps: Vec<&AffineMap> = padded.iter().map(|n| &n.layers()[k]).collect();
            AffineMap::block_diag(&maps)
        })
        .collect::<Result<Vec<_>>>()?;
    Network::new(layers)
}

/// Post-composes `net` with the componentwise clipping `x -> max{a, min{x, b}}`
/// onto `q`. The last layer `(W, c)` becomes the three layers
/// `(W, c - a)`, `(-I, (b - a) 1)`, `(-I, b 1)`.
pub fn clip_to(net: &Network, q: &Hypercube) -> Result<Network> {
    let n = net.output_dim();
    if q.dim != n {
        return Err(Error::shape(format!(
            "clip hypercube has dimension {}, network has {n} outputs",
            q.dim
        )));
    }
    let (last, rest) = net.layers().split_last().expect("nonempty");
    let lowered = AffineMap::from_triplets(
        last.rows(),
        last.cols(),
        last.triplets().collect::<Vec<_>>(),
        last.bias().iter().map(|c| c - q.a).collect(),
    )?;
    let mut layers = rest.to_vec();
    layers.push(lowered);
    layers.push(AffineMap::scaling(n, -1.0, q.b - q.a));
    layers.push(AffineMap::scaling(n, -1.0, q.b));
    Network::new(layers)
}

/// `x -> post(net(pre(x)))` with `pre` fused into the first layer and
/// `post` into the last. Depth is unchanged.
pub fn affine_wrap(net: &Network, pre: Option<&AffineMap>, post: Option<&AffineMap>) -> Result<Network> {
    let mut layers = net.layers().to_vec();
    if let Some(pre) = pre {
        if pre.rows() != net.input_dim() {
            return Err(Error::shape(format!(
                "pre-map has {} outputs, network expects {} inputs",
                pre.rows(),
                net.input_dim()
            )));
        }
        layers[0] = layers[0].compose(pre)?;
    }
    if let Some(post) = post {
        if post.cols() != net.output_dim() {
            return Err(Error::shape(format!(
                "post-map expects {} inputs, network has {} outputs",
                post.cols(),
                net.output_dim()
            )));
        }
        let last = layers.len() - 1;
        layers[last] = post.compose(&layers[last])?;
    }
    Network::new(layers)
}

/// A network realizing the affine map itself (depth 1).
pub fn affine_network(map: AffineMap) -> Network {
    Network::new(vec![map]).expect("single layer chains")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    fn relu_pair() -> Network {
        let l1 =
            AffineMap::from_dense(&[vec![1.0, -2.0], vec![0.5, 1.0], vec![-1.0, 0.0]], vec![0.0, 0.1, 0.2]).unwrap();
        let l2 = AffineMap::from_dense(&[vec![1.0, -1.0, 2.0], vec![0.0, 1.0, 1.0]], vec![0.3, -0.4]).unwrap();
        Network::new(vec![l1, l2]).unwrap()
    }

    #[test]
    fn identity_network_shape_and_values() {
        for d in 1..=5 {
            let id = identity_network(d);
            assert_eq!(id.architecture(), vec![d, 2 * d, d]);
            let dd = d as u64;
            assert_eq!(id.param_count(), 2 * dd * (dd + 1) + dd * (2 * dd + 1));
        }
        assert_eq!(identity_network(1).evaluate(&[-5.0]).unwrap(), vec![-5.0]);
        assert_eq!(
            identity_network(3).evaluate(&[1.0, -2.0, 0.5]).unwrap(),
            vec![1.0, -2.0, 0.5]
        );
    }

    #[test]
    fn compose_realizes_composition() {
        let f = relu_pair();
        let g = relu_pair();
        let h = compose(&g, &f).unwrap();
        for x in [[0.3, -0.7], [2.0, 1.0], [-1.5, 0.25]] {
            let want = g.evaluate(&f.evaluate(&x).unwrap()).unwrap();
            assert!(close(&h.evaluate(&x).unwrap(), &want, 1e-12));
        }
        assert!(h.param_count() <= 3 * (f.param_count() + g.param_count()));
        assert!(compose(&identity_network(3), &f).is_err());
    }

    #[test]
    fn chain_of_one_is_unchanged() {
        let f = relu_pair();
        let c = compose_chain(std::slice::from_ref(&f)).unwrap();
        assert_eq!(c, f);
        assert!(compose_chain(&[]).is_err());
    }

    #[test]
    fn chain_of_identities_is_identity() {
        let ids = vec![identity_network(2), identity_network(2), identity_network(2)];
        let c = compose_chain(&ids).unwrap();
        assert_eq!(c.evaluate(&[3.5, -1.25]).unwrap(), vec![3.5, -1.25]);
    }

    #[test]
    fn parallelize_pads_and_stacks() {
        let shallow = affine_network(AffineMap::from_dense(&[vec![2.0, 1.0]], vec![-1.0]).unwrap());
        let deep = compose(&relu_pair(), &relu_pair()).unwrap();
        let p = parallelize(&[shallow.clone(), deep.clone()]).unwrap();
        assert_eq!(p.depth(), deep.depth());
        let x = [0.5, -0.25, 1.5, -2.0];
        let mut want = shallow.evaluate(&x[..2]).unwrap();
        want.extend(deep.evaluate(&x[2..]).unwrap());
        assert!(close(&p.evaluate(&x).unwrap(), &want, 1e-12));
        let single = parallelize(std::slice::from_ref(&deep)).unwrap();
        assert_eq!(single.param_count(), deep.param_count());
    }

    #[test]
    fn pad_depth_preserves_realization() {
        let f = relu_pair();
        for extra in 0..4 {
            let g = pad_depth(&f, extra);
            assert_eq!(g.depth(), f.depth() + extra);
            for x in [[0.3, -0.7], [-2.0, 1.0]] {
                assert!(close(&g.evaluate(&x).unwrap(), &f.evaluate(&x).unwrap(), 1e-12));
            }
        }
    }

    #[test]
    fn clip_adds_two_square_layers() {
        let f = relu_pair();
        let q = Hypercube::new(-0.5, 0.75, 2).unwrap();
        let c = clip_to(&f, &q).unwrap();
        assert_eq!(c.param_count(), f.param_count() + 2 * 2 * 3);
        for x in [[0.3, -0.7], [2.0, 1.0], [-1.5, 0.25], [0.0, 0.0]] {
            let raw = f.evaluate(&x).unwrap();
            let want: Vec<f64> = raw.iter().map(|v| v.clamp(q.a, q.b)).collect();
            assert!(close(&c.evaluate(&x).unwrap(), &want, 1e-12));
        }
        assert!(clip_to(&f, &Hypercube::new(0.0, 1.0, 3).unwrap()).is_err());
    }

    #[test]
    fn affine_wrap_fuses_without_depth() {
        let f = relu_pair();
        let pre = AffineMap::from_dense(&[vec![1.0], vec![-1.0]], vec![0.5, 0.0]).unwrap();
        let post = AffineMap::from_dense(&[vec![8.0, 1.0]], vec![1.0]).unwrap();
        let g = affine_wrap(&f, Some(&pre), Some(&post)).unwrap();
        assert_eq!(g.depth(), f.depth());
        let t = 0.7;
        let inner = f.evaluate(&pre.apply(&[t]).unwrap()).unwrap();
        let want = post.apply(&inner).unwrap();
        assert!(close(&g.evaluate(&[t]).unwrap(), &want, 1e-12));
        assert!(affine_wrap(&f, Some(&post), None).is_err());
    }
}
