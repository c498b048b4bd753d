//! Feedforward ReLU networks: affine layers, realization, parameter counts and
//! the JSON file format.
//!
//! A [`Network`] is a nonempty list of affine maps. Its realization applies
//! the maps in order with a componentwise ReLU between consecutive maps and no
//! activation after the last one. Weight matrices are stored in compressed
//! sparse row form; parameter counts always refer to the dense architecture.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An affine map `x -> W x + b` with `W` stored as a CSR matrix.
///
/// Exact zeros are never stored and column indices are strictly increasing
/// within each row.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineMap {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
    bias: Vec<f64>,
}

impl AffineMap {
    /// Builds a map from a row-major dense matrix.
    pub fn from_dense(weights: &[Vec<f64>], bias: Vec<f64>) -> Result<Self> {
        let rows = weights.len();
        if rows == 0 {
            return Err(Error::shape("affine map needs at least one row"));
        }
        let cols = weights[0].len();
        if cols == 0 {
            return Err(Error::shape("affine map needs at least one column"));
        }
        let mut entries = Vec::new();
        for (i, row) in weights.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::shape(format!(
                    "row {i} has {} entries, expected {cols}",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                entries.push((i, j, v));
            }
        }
        Self::from_triplets(rows, cols, entries, bias)
    }

    /// Builds a map from `(row, col, value)` triplets. Duplicate positions
    /// are summed and zeros are dropped.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        entries: impl IntoIterator<Item = (usize, usize, f64)>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape(format!(
                "affine map dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if cols > u32::MAX as usize {
            return Err(Error::shape("too many columns"));
        }
        if bias.len() != rows {
            return Err(Error::shape(format!("bias has length {}, expected {rows}", bias.len())));
        }
        if let Some(i) = bias.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite bias entry at {i}")));
        }
        let mut entries: Vec<(usize, usize, f64)> = entries.into_iter().collect();
        for &(i, j, v) in &entries {
            if i >= rows || j >= cols {
                return Err(Error::shape(format!("entry ({i}, {j}) outside a {rows}x{cols} matrix")));
            }
            if !v.is_finite() {
                return Err(Error::invalid(format!("non-finite weight at ({i}, {j})")));
            }
        }
        entries.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        let mut k = 0;
        while k < entries.len() {
            let (i, j, mut v) = entries[k];
            k += 1;
            while k < entries.len() && entries[k].0 == i && entries[k].1 == j {
                v += entries[k].2;
                k += 1;
            }
            if v != 0.0 {
                indices.push(j as u32);
                values.push(v);
                indptr[i + 1] += 1;
            }
        }
        for i in 0..rows {
            indptr[i + 1] += indptr[i];
        }
        Ok(AffineMap {
            rows,
            cols,
            indptr,
            indices,
            values,
            bias,
        })
    }

    /// The identity map on `R^d`.
    pub fn identity(d: usize) -> Self {
        Self::scaling(d, 1.0, 0.0)
    }

    /// The map `x -> s x + t 1` on `R^d`.
    pub fn scaling(d: usize, s: f64, t: f64) -> Self {
        Self::from_triplets(d, d, (0..d).map(|i| (i, i, s)), vec![t; d]).expect("scaling map is well formed")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Number of stored (nonzero) weights.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Dense parameter count `rows * (cols + 1)`.
    pub fn param_count(&self) -> u64 {
        self.rows as u64 * (self.cols as u64 + 1)
    }

    /// Nonzero entries of row `i` as `(col, value)` pairs.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.indptr[i]..self.indptr[i + 1];
        self.indices[range.clone()]
            .iter()
            .zip(&self.values[range])
            .map(|(&j, &v)| (j as usize, v))
    }

    /// All nonzero entries as `(row, col, value)` triplets in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    /// Weight at `(i, j)`.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let range = self.indptr[i]..self.indptr[i + 1];
        match self.indices[range.clone()].binary_search(&(j as u32)) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    /// Row-major dense copy of the weight matrix.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.cols]; self.rows];
        for (i, j, v) in self.triplets() {
            out[i][j] = v;
        }
        out
    }

    /// Evaluates `W x + b`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::shape(format!(
                "input has length {}, expected {}",
                x.len(),
                self.cols
            )));
        }
        let mut out = self.bias.clone();
        for (i, o) in out.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                *o += v * x[j];
            }
        }
        Ok(out)
    }

    /// The composition `self ∘ inner`, i.e. `x -> W (V x + c) + b`.
    pub fn compose(&self, inner: &AffineMap) -> Result<AffineMap> {
        if self.cols != inner.rows {
            return Err(Error::shape(format!(
                "cannot compose a map with {} inputs after a map with {} outputs",
                self.cols, inner.rows
            )));
        }
        let mut indptr = Vec::with_capacity(self.rows + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        let mut bias = Vec::with_capacity(self.rows);
        let mut acc = vec![0.0; inner.cols];
        let mut touched = vec![false; inner.cols];
        let mut pattern: Vec<u32> = Vec::new();
        for i in 0..self.rows {
            let mut b = self.bias[i];
            for (k, w) in self.row(i) {
                b += w * inner.bias[k];
                for (j, v) in inner.row(k) {
                    if !touched[j] {
                        touched[j] = true;
                        pattern.push(j as u32);
                    }
                    acc[j] += w * v;
                }
            }
            pattern.sort_unstable();
            for &j in &pattern {
                let j = j as usize;
                let v = acc[j];
                if v != 0.0 {
                    indices.push(j as u32);
                    values.push(v);
                }
                acc[j] = 0.0;
                touched[j] = false;
            }
            pattern.clear();
            bias.push(b);
            indptr.push(indices.len());
        }
        Ok(AffineMap {
            rows: self.rows,
            cols: inner.cols,
            indptr,
            indices,
            values,
            bias,
        })
    }

    /// Block-diagonal stacking: the map `(x_1, …, x_n) -> (A_1 x_1, …, A_n x_n)`.
    pub fn block_diag(maps: &[&AffineMap]) -> Result<AffineMap> {
        Self::stack(maps, true)
    }

    /// Vertical stacking of maps sharing one input: `x -> (A_1 x, …, A_n x)`.
    pub fn vstack(maps: &[&AffineMap]) -> Result<AffineMap> {
        Self::stack(maps, false)
    }

    fn stack(maps: &[&AffineMap], diagonal: bool) -> Result<AffineMap> {
        let first = maps
            .first()
            .ok_or_else(|| Error::invalid("cannot stack an empty list of maps"))?;
        let rows: usize = maps.iter().map(|m| m.rows).sum();
        let cols = if diagonal {
            maps.iter().map(|m| m.cols).sum()
        } else {
            if let Some(m) = maps.iter().find(|m| m.cols != first.cols) {
                return Err(Error::shape(format!(
                    "vertical stacking needs equal input dimensions ({} vs {})",
                    m.cols, first.cols
                )));
            }
            first.cols
        };
        let nnz: usize = maps.iter().map(|m| m.nnz()).sum();
        let mut indptr = Vec::with_capacity(rows + 1);
        indptr.push(0);
        let mut indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        let mut bias = Vec::with_capacity(rows);
        let mut offset = 0u32;
        for m in maps {
            for i in 0..m.rows {
                for (j, v) in m.row(i) {
                    indices.push(j as u32 + offset);
                    values.push(v);
                }
                indptr.push(indices.len());
            }
            bias.extend_from_slice(&m.bias);
            if diagonal {
                offset += m.cols as u32;
            }
        }
        Ok(AffineMap {
            rows,
            cols,
            indptr,
            indices,
            values,
            bias,
        })
    }

    /// Applies the map to a block of `BLOCK` points stored unit-major
    /// (`input[j][t]` is coordinate `j` of point `t`), followed by a ReLU
    /// when `relu` is set.
    fn apply_block(&self, input: &[Lanes], out: &mut Vec<Lanes>, relu: bool) {
        // Every entry is overwritten below, so only the length matters.
        out.resize(self.rows, [0.0; BLOCK]);
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = [self.bias[i]; BLOCK];
            for k in self.indptr[i]..self.indptr[i + 1] {
                let x = &input[self.indices[k] as usize];
                let w = self.values[k];
                for t in 0..BLOCK {
                    acc[t] += w * x[t];
                }
            }
            if relu {
                for v in acc.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            *o = acc;
        }
    }
}

/// A feedforward ReLU network.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<AffineMap>,
}

const BLOCK: usize = 8;

/// Values of one unit for a block of points.
type Lanes = [f64; BLOCK];

impl Network {
    /// Validates the dimension chain and wraps the layers.
    pub fn new(layers: Vec<AffineMap>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("a network needs at least one layer"));
        }
        for k in 1..layers.len() {
            if layers[k].cols != layers[k - 1].rows {
                return Err(Error::Layer {
                    layer: k,
                    message: format!(
                        "weight matrix has {} columns but the previous layer has {} outputs",
                        layers[k].cols,
                        layers[k - 1].rows
                    ),
                });
            }
        }
        Ok(Network { layers })
    }

    pub fn layers(&self) -> &[AffineMap] {
        &self.layers
    }

    pub fn into_layers(self) -> Vec<AffineMap> {
        self.layers
    }

    /// Number of affine layers `L`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].rows
    }

    /// Layer widths `(l_0, …, l_L)`.
    pub fn architecture(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.rows))
            .collect()
    }

    /// `Σ_k l_k (l_{k-1} + 1)`.
    pub fn param_count(&self) -> u64 {
        self.layers.iter().map(AffineMap::param_count).sum()
    }

    /// Number of stored nonzero weights.
    pub fn nnz(&self) -> usize {
        self.layers.iter().map(AffineMap::nnz).sum()
    }

    /// Realization at a single point.
    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut next = layer.apply(&cur)?;
            if k < last {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            cur = next;
        }
        Ok(cur)
    }

    /// Realization at many points, evaluated in parallel blocks. The result
    /// is identical to calling [`Network::evaluate`] on each point.
    pub fn evaluate_many(&self, points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        for x in points {
            self.check_input(x)?;
        }
        let blocks: Vec<Vec<Vec<f64>>> = points
            .par_chunks(BLOCK)
            .map_init(
                || (Vec::new(), Vec::new()),
                |bufs, chunk| self.evaluate_block(chunk, bufs),
            )
            .collect();
        Ok(blocks.into_iter().flatten().collect())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(format!(
                "input has length {}, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("input contains a non-finite entry"));
        }
        Ok(())
    }

    /// Evaluates one block of at most `BLOCK` points, reusing the scratch
    /// buffers `bufs` so large layers are not reallocated for every block.
    fn evaluate_block(&self, chunk: &[Vec<f64>], bufs: &mut (Vec<Lanes>, Vec<Lanes>)) -> Vec<Vec<f64>> {
        let (cur, next) = bufs;
        cur.clear();
        cur.resize(self.input_dim(), [0.0; BLOCK]);
        for (t, x) in chunk.iter().enumerate() {
            for (j, &v) in x.iter().enumerate() {
                cur[j][t] = v;
            }
        }
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            layer.apply_block(cur, next, k < last);
            std::mem::swap(cur, next);
        }
        (0..chunk.len())
            .map(|t| cur[..self.output_dim()].iter().map(|u| u[t]).collect())
            .collect()
    }

    /// Encodes the network as JSON.
    pub fn to_json(&self) -> Vec<u8> {
        let doc = NetworkDoc {
            layers: self.layers.iter().map(LayerDoc::from_map).collect(),
        };
        serde_json::to_vec(&doc).expect("network serializes")
    }

    /// Decodes a network from JSON produced by [`Network::to_json`] or by
    /// hand in the dense layer form.
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_slice(bytes);
        let doc: NetworkDoc = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            match layer_of_path(&path) {
                Some(layer) => Error::Layer {
                    layer,
                    message: format!("at `{path}`: {inner}"),
                },
                None => Error::Parse(format!("at `{path}`: {inner}")),
            }
        })?;
        if doc.layers.is_empty() {
            return Err(Error::Parse("document has no layers".into()));
        }
        let layers = doc
            .layers
            .into_iter()
            .enumerate()
            .map(|(k, l)| {
                l.into_map().map_err(|e| Error::Layer {
                    layer: k,
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Network::new(layers)
    }
}

impl fmt::Display for Network {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let arch: Vec<String> = self.architecture().iter().map(|w| w.to_string()).collect();
        write!(
            f,
            "Network(depth={}, architecture=({}), params={})",
            self.depth(),
            arch.join(","),
            self.param_count()
        )
    }
}

fn layer_of_path(path: &str) -> Option<usize> {
    let rest = path.strip_prefix("layers[")?;
    rest.split(']').next()?.parse().ok()
}

/// Layers whose dense form would exceed this many weights are written
/// sparsely when at most a quarter of their weights are nonzero.
const DENSE_LIMIT: usize = 1 << 16;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    layers: Vec<LayerDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shape: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    entries: Option<Vec<(usize, usize, f64)>>,
    bias: Vec<f64>,
}

impl LayerDoc {
    fn from_map(m: &AffineMap) -> Self {
        let size = m.rows * m.cols;
        if size <= DENSE_LIMIT || m.nnz() * 4 >= size {
            LayerDoc {
                weights: Some(m.to_dense()),
                shape: None,
                entries: None,
                bias: m.bias.clone(),
            }
        } else {
            LayerDoc {
                weights: None,
                shape: Some([m.rows, m.cols]),
                entries: Some(m.triplets().collect()),
                bias: m.bias.clone(),
            }
        }
    }

    fn into_map(self) -> Result<AffineMap> {
        match (self.weights, self.shape, self.entries) {
            (Some(w), None, None) => AffineMap::from_dense(&w, self.bias),
            (None, Some([r, c]), Some(e)) => AffineMap::from_triplets(r, c, e, self.bias),
            _ => Err(Error::Parse(
                "a layer needs either `weights` or both `shape` and `entries`".into(),
            )),
        }
    }
}

/// The hypercube `[a, b]^dim`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypercube {
    pub a: f64,
    pub b: f64,
    pub dim: usize,
}

impl Hypercube {
    pub fn new(a: f64, b: f64, dim: usize) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) || b <= a {
            return Err(Error::invalid(format!(
                "hypercube needs finite bounds with b > a, got [{a}, {b}]"
            )));
        }
        if dim == 0 {
            return Err(Error::invalid("hypercube dimension must be positive"));
        }
        Ok(Hypercube { a, b, dim })
    }

    pub fn width(&self) -> f64 {
        self.b - self.a
    }

    pub fn center(&self) -> Vec<f64> {
        vec![0.5 * (self.a + self.b); self.dim]
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim && x.iter().all(|&v| v >= self.a && v <= self.b)
    }

    /// Whether `self ⊆ other` (same dimension, nested intervals).
    pub fn is_subset_of(&self, other: &Hypercube) -> bool {
        self.dim == other.dim && self.a >= other.a && self.b <= other.b
    }

    /// Corner `index` (bit `j` selects `b` for coordinate `j`).
    pub fn corner(&self, index: u64) -> Vec<f64> {
        (0..self.dim)
            .map(|j| if index >> j & 1 == 1 { self.b } else { self.a })
            .collect()
    }

    /// Restriction to a different dimension with the same bounds.
    pub fn with_dim(&self, dim: usize) -> Self {
        Hypercube { dim, ..*self }
    }
}

/// An `ℓ_p` norm with `p ∈ [1, ∞]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Norm(f64);

impl Norm {
    pub const L1: Norm = Norm(1.0);
    pub const L2: Norm = Norm(2.0);
    pub const INF: Norm = Norm(f64::INFINITY);

    pub fn new(p: f64) -> Result<Self> {
        if p >= 1.0 {
            Ok(Norm(p))
        } else {
            Err(Error::invalid(format!("norm exponent must be at least 1, got {p}")))
        }
    }

    pub fn p(&self) -> f64 {
        self.0
    }

    /// `1/p`, with `1/∞ = 0`.
    pub fn inv(&self) -> f64 {
        if self.0.is_infinite() {
            0.0
        } else {
            1.0 / self.0
        }
    }

    /// The dual exponent `q` with `1/p + 1/q = 1`.
    pub fn dual(&self) -> Norm {
        if self.0 == 1.0 {
            Norm::INF
        } else if self.0.is_infinite() {
            Norm::L1
        } else {
            Norm(self.0 / (self.0 - 1.0))
        }
    }

    /// `‖x‖_p`.
    pub fn of(&self, x: &[f64]) -> f64 {
        if self.0.is_infinite() {
            x.iter().fold(0.0, |m, v| m.max(v.abs()))
        } else if self.0 == 1.0 {
            x.iter().map(|v| v.abs()).sum()
        } else if self.0 == 2.0 {
            x.iter().map(|v| v * v).sum::<f64>().sqrt()
        } else {
            x.iter().map(|v| v.abs().powf(self.0)).sum::<f64>().powf(1.0 / self.0)
        }
    }

    /// `‖x - y‖_p`.
    pub fn dist(&self, x: &[f64], y: &[f64]) -> f64 {
        let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        self.of(&d)
    }

    /// `n^{1/p}`, the `ℓ_p` norm of the all-ones vector in `R^n`.
    pub fn ones(&self, n: usize) -> f64 {
        (n as f64).powf(self.inv())
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_infinite() {
            write!(f, "inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl std::str::FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "Inf" | "infinity" => Ok(Norm::INF),
            other => other
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("unknown norm `{s}`")))
                .and_then(Norm::new),
        }
    }
}

impl Serialize for Norm {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Norm {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
