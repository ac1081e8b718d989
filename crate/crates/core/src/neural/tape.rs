//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters live in
//! a [`ParamStore`] that the graph borrows; [`Graph::backward`] accumulates
//! parameter gradients into a [`Gradients`] buffer so several graphs (one per
//! table of a batch) can feed the same optimizer step.

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

pub type Mat = Array2<f64>;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Handle to a trainable matrix in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    /// Embedding row that never receives gradient (PAD).
    frozen_rows: Vec<Option<usize>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        self.add_inner(name.into(), value, None)
    }

    /// Adds an embedding table whose `pad_row` is zeroed and excluded from updates.
    pub fn add_embedding(&mut self, name: impl Into<String>, mut value: Mat, pad_row: usize) -> ParamId {
        value.row_mut(pad_row).fill(0.0);
        self.add_inner(name.into(), value, Some(pad_row))
    }

    fn add_inner(&mut self, name: String, value: Mat, frozen: Option<usize>) -> ParamId {
        self.names.push(name);
        self.values.push(value);
        self.frozen_rows.push(frozen);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn frozen_row(&self, id: ParamId) -> Option<usize> {
        self.frozen_rows[id.0]
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Mat::len).sum()
    }

    /// Copies all values; used for best-epoch snapshots.
    pub fn snapshot(&self) -> Vec<Mat> {
        self.values.clone()
    }

    pub fn restore(&mut self, snapshot: Vec<Mat>) {
        assert_eq!(snapshot.len(), self.values.len(), "snapshot shape mismatch");
        self.values = snapshot;
    }

    /// Serializes every matrix as `rows cols data...` in little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"TMPS");
        out.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for (name, v) in self.names.iter().zip(&self.values) {
            out.extend_from_slice(&(name.len() as u64).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(v.nrows() as u64).to_le_bytes());
            out.extend_from_slice(&(v.ncols() as u64).to_le_bytes());
            for x in v.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    /// Loads values written by [`to_bytes`](Self::to_bytes) into a store of identical layout.
    pub fn load_bytes(&mut self, bytes: &[u8]) -> Result<(), String> {
        let mut cur = bytes;
        let mut take = |n: usize| -> Result<&[u8], String> {
            if cur.len() < n {
                return Err("truncated parameter file".into());
            }
            let (head, tail) = cur.split_at(n);
            cur = tail;
            Ok(head)
        };
        if take(4)? != b"TMPS" {
            return Err("bad parameter file magic".into());
        }
        let read_u64 = |b: &[u8]| u64::from_le_bytes(b.try_into().expect("8 bytes")) as usize;
        let count = read_u64(take(8)?);
        if count != self.values.len() {
            return Err(format!("expected {} parameters, file has {}", self.values.len(), count));
        }
        for i in 0..count {
            let name_len = read_u64(take(8)?);
            let name = String::from_utf8_lossy(take(name_len)?).into_owned();
            if name != self.names[i] {
                return Err(format!("parameter {i}: expected {}, found {}", self.names[i], name));
            }
            let rows = read_u64(take(8)?);
            let cols = read_u64(take(8)?);
            if (rows, cols) != self.values[i].dim() {
                return Err(format!("parameter {name}: shape mismatch"));
            }
            let raw = take(rows * cols * 8)?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            self.values[i] = Mat::from_shape_vec((rows, cols), data).map_err(|e| e.to_string())?;
        }
        Ok(())
    }
}

/// Accumulated parameter gradients, indexed like the owning [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn new(params: &ParamStore) -> Self {
        Gradients {
            grads: vec![None; params.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.grads[id.0].as_ref()
    }

    fn slot(&mut self, id: ParamId, shape: (usize, usize)) -> &mut Mat {
        self.grads[id.0].get_or_insert_with(|| Mat::zeros(shape))
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            *g *= factor;
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(|g| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    Gather(ParamId, Vec<usize>),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// Adds a `1×n` row to every row.
    AddRow(Var, Var),
    Mul(Var, Var),
    /// Multiplies by a `1×1` node.
    MulScalar(Var, Var),
    Affine(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Gelu(Var),
    Ln(Var),
    Softmax(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Sum(Var),
    MeanRows(Var),
    Pick(Var, usize, usize),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normed: Mat,
        inv_std: Vec<f64>,
    },
}

struct Node {
    value: Mat,
    op: Op,
}

/// One forward pass.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;
const LN_EPS: f64 = 1e-5;
/// Floor applied inside `ln` so a zero probability yields a large finite loss.
const LN_FLOOR: f64 = 1e-300;

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        match self.nodes[v.0].op {
            Op::Param(p) => self.params.value(p),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.constant(Mat::zeros((rows, cols)))
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.push(Mat::zeros((0, 0)), Op::Param(id))
    }

    /// Rows `ids` of an embedding parameter.
    pub fn gather(&mut self, id: ParamId, ids: &[usize]) -> Var {
        let table = self.params.value(id);
        let mut out = Mat::zeros((ids.len(), table.ncols()));
        for (r, &i) in ids.iter().enumerate() {
            out.row_mut(r).assign(&table.row(i));
        }
        self.push(out, Op::Gather(id, ids.to_vec()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.nrows(), 1, "add_row expects a 1xn bias");
        let v = self.value(a) + r;
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        let k = self.scalar(s);
        let v = self.value(a) * k;
        self.push(v, Op::MulScalar(a, s))
    }

    /// `mul * a + add`, elementwise.
    pub fn affine(&mut self, a: Var, mul: f64, add: f64) -> Var {
        let v = self.value(a).mapv(|x| mul * x + add);
        self.push(v, Op::Affine(a, mul))
    }

    pub fn scale(&mut self, a: Var, mul: f64) -> Var {
        self.affine(a, mul, 0.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| 0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh()));
        self.push(v, Op::Gelu(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(LN_FLOOR).ln());
        self.push(v, Op::Ln(a))
    }

    /// Row-wise softmax. Columns with `mask[j] == false` get exactly zero mass.
    pub fn softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Var {
        let v = softmax_rows(self.value(a), mask);
        self.push(v, Op::Softmax(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(v, Op::SliceRows(a, start))
    }

    pub fn row(&mut self, a: Var, r: usize) -> Var {
        self.slice_rows(a, r, 1)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Mat::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self
            .value(a)
            .mean_axis(Axis(0))
            .expect("mean_rows of empty matrix")
            .insert_axis(Axis(0));
        self.push(v, Op::MeanRows(a))
    }

    /// Single element as a `1×1` node.
    pub fn pick(&mut self, a: Var, r: usize, c: usize) -> Var {
        let v = Mat::from_elem((1, 1), self.value(a)[[r, c]]);
        self.push(v, Op::Pick(a, r, c))
    }

    /// Row-wise layer normalization with `1×n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mut normed = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in normed.rows_mut() {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) * is);
            inv_std.push(is);
        }
        let out = &normed * self.value(gamma) + self.value(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normed,
                inv_std,
            },
        )
    }

    /// Back-propagates from the `1×1` node `loss`, adding parameter gradients to `grads`.
    pub fn backward(&self, loss: Var, grads: &mut Gradients) {
        assert_eq!(self.shape(loss), (1, 1), "backward expects a scalar loss");
        let mut g: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        g[loss.0] = Some(Mat::ones((1, 1)));

        fn acc(g: &mut [Option<Mat>], v: Var, delta: Mat) {
            match &mut g[v.0] {
                Some(existing) => *existing += &delta,
                slot @ None => *slot = Some(delta),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(gy) = g[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::Param(p) => {
                    let slot = grads.slot(*p, gy.dim());
                    *slot += &gy;
                }
                Op::Gather(p, ids) => {
                    let frozen = self.params.frozen_row(*p);
                    let shape = self.params.value(*p).dim();
                    let slot = grads.slot(*p, shape);
                    for (r, &i) in ids.iter().enumerate() {
                        if Some(i) != frozen {
                            let mut row = slot.row_mut(i);
                            row += &gy.row(r);
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    acc(&mut g, *a, gy.dot(&bv.t()));
                    acc(&mut g, *b, av.t().dot(&gy));
                }
                Op::MatMulT(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    acc(&mut g, *a, gy.dot(bv));
                    acc(&mut g, *b, gy.t().dot(av));
                }
                Op::Add(a, b) => {
                    acc(&mut g, *b, gy.clone());
                    acc(&mut g, *a, gy);
                }
                Op::Sub(a, b) => {
                    acc(&mut g, *b, -&gy);
                    acc(&mut g, *a, gy);
                }
                Op::AddRow(a, row) => {
                    acc(&mut g, *row, gy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut g, *a, gy);
                }
                Op::Mul(a, b) => {
                    let ga = &gy * self.value(*b);
                    let gb = &gy * self.value(*a);
                    acc(&mut g, *a, ga);
                    acc(&mut g, *b, gb);
                }
                Op::MulScalar(a, s) => {
                    let k = self.scalar(*s);
                    let gs = (&gy * self.value(*a)).sum();
                    acc(&mut g, *s, Mat::from_elem((1, 1), gs));
                    acc(&mut g, *a, gy * k);
                }
                Op::Affine(a, mul) => acc(&mut g, *a, gy * *mul),
                Op::Tanh(a) => {
                    let d = &gy * &y.mapv(|t| 1.0 - t * t);
                    acc(&mut g, *a, d);
                }
                Op::Sigmoid(a) => {
                    let d = &gy * &y.mapv(|s| s * (1.0 - s));
                    acc(&mut g, *a, d);
                }
                Op::Gelu(a) => {
                    let d = &gy * &self.value(*a).mapv(gelu_grad);
                    acc(&mut g, *a, d);
                }
                Op::Ln(a) => {
                    let d = &gy / &self.value(*a).mapv(|x| x.max(LN_FLOOR));
                    acc(&mut g, *a, d);
                }
                Op::Softmax(a) => {
                    let mut d = Mat::zeros(y.dim());
                    for ((yr, gr), mut dr) in y.rows().into_iter().zip(gy.rows()).zip(d.rows_mut()) {
                        let dot: f64 = yr.iter().zip(gr.iter()).map(|(a, b)| a * b).sum();
                        for ((dv, yv), gv) in dr.iter_mut().zip(yr.iter()).zip(gr.iter()) {
                            *dv = yv * (gv - dot);
                        }
                    }
                    acc(&mut g, *a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.shape(*p).1;
                        acc(&mut g, *p, gy.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let h = self.shape(*p).0;
                        acc(&mut g, *p, gy.slice(s![start..start + h, ..]).to_owned());
                        start += h;
                    }
                }
                Op::SliceCols(a, start) => {
                    let mut d = Mat::zeros(self.shape(*a));
                    d.slice_mut(s![.., *start..*start + gy.ncols()]).assign(&gy);
                    acc(&mut g, *a, d);
                }
                Op::SliceRows(a, start) => {
                    let mut d = Mat::zeros(self.shape(*a));
                    d.slice_mut(s![*start..*start + gy.nrows(), ..]).assign(&gy);
                    acc(&mut g, *a, d);
                }
                Op::Sum(a) => {
                    let d = Mat::from_elem(self.shape(*a), gy[[0, 0]]);
                    acc(&mut g, *a, d);
                }
                Op::MeanRows(a) => {
                    let (rows, _) = self.shape(*a);
                    let row = gy.row(0).mapv(|x| x / rows as f64);
                    let d = ndarray::Array2::from_shape_fn(self.shape(*a), |(_, c)| row[c]);
                    acc(&mut g, *a, d);
                }
                Op::Pick(a, r, c) => {
                    let mut d = Mat::zeros(self.shape(*a));
                    d[[*r, *c]] = gy[[0, 0]];
                    acc(&mut g, *a, d);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    normed,
                    inv_std,
                } => {
                    let gv = self.value(*gamma);
                    acc(&mut g, *beta, gy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(
                        &mut g,
                        *gamma,
                        (&gy * normed).sum_axis(Axis(0)).insert_axis(Axis(0)),
                    );
                    let gn = &gy * gv;
                    let n = gn.ncols() as f64;
                    let mut d = Mat::zeros(gn.dim());
                    for (r, mut dr) in d.rows_mut().into_iter().enumerate() {
                        let gr = gn.row(r);
                        let nr = normed.row(r);
                        let mean_g = gr.sum() / n;
                        let mean_gn = gr.iter().zip(nr.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
                        for c in 0..dr.len() {
                            dr[c] = inv_std[r] * (gr[c] - mean_g - nr[c] * mean_gn);
                        }
                    }
                    acc(&mut g, *x, d);
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_K * (x + GELU_C * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

/// Row-wise masked softmax on plain matrices.
pub fn softmax_rows(x: &Mat, mask: Option<&[bool]>) -> Mat {
    let live = |j: usize| mask.is_none_or(|m| m[j]);
    let mut out = Mat::zeros(x.dim());
    for (xr, mut or) in x.rows().into_iter().zip(out.rows_mut()) {
        let max = xr
            .iter()
            .enumerate()
            .filter(|(j, _)| live(*j))
            .map(|(_, v)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            continue;
        }
        let mut total = 0.0;
        for (j, (o, v)) in or.iter_mut().zip(xr.iter()).enumerate() {
            if live(j) {
                *o = (v - max).exp();
                total += *o;
            }
        }
        or.mapv_inplace(|v| v / total);
    }
    out
}
