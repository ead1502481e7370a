//! Append-only tape for reverse-mode differentiation over dense matrices.
//!
//! Each primitive records its output value together with the inputs it
//! needs for the adjoint. [`Tape::backward`] walks the records in reverse
//! order and accumulates adjoints sequentially, so the same tape always
//! produces bit-identical gradients.

use super::matrix::gemm;
use super::{DenseMatrix, ParamStore};
use crate::error::{Error, Result};
use crate::graph::SparseGraph;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    Relu(Var),
    Exp(Var),
    Log(Var),
    RowL2Normalize(Var),
    ConcatCols(Vec<Var>),
    MeanOf(Vec<Var>),
    Dropout(Var, DenseMatrix),
    EdgeScores(Var, Var),
    SegmentSoftmax(Var),
    SegmentWeightedSum(Var, Var),
    SelectRows(Var, Vec<usize>),
    CrossEntropy(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Record {
    op: Op,
    value: DenseMatrix,
    param: Option<String>,
}

/// Recording of one forward computation. Graph-structured primitives borrow
/// the [`SparseGraph`] they were built against.
#[derive(Debug)]
pub struct Tape<'g> {
    records: Vec<Record>,
    graph: Option<&'g SparseGraph>,
    entry_rows: Vec<usize>,
}

/// Output of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    params: ParamStore,
    adjoints: Vec<Option<DenseMatrix>>,
}

impl Gradients {
    /// Gradients keyed by parameter name; unreachable parameters are zero.
    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    /// Adjoint of any recorded value (`None` when it did not reach the loss).
    pub fn wrt(&self, v: Var) -> Option<&DenseMatrix> {
        self.adjoints[v.0].as_ref()
    }
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'g> Tape<'g> {
    pub fn new() -> Self {
        Tape {
            records: Vec::new(),
            graph: None,
            entry_rows: Vec::new(),
        }
    }

    /// Tape whose segment primitives operate over `graph`.
    pub fn with_graph(graph: &'g SparseGraph) -> Self {
        Tape {
            records: Vec::new(),
            graph: Some(graph),
            entry_rows: graph.entry_rows(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn push(&mut self, op: Op, value: DenseMatrix) -> Var {
        self.records.push(Record {
            op,
            value,
            param: None,
        });
        Var(self.records.len() - 1)
    }

    fn graph(&self) -> &'g SparseGraph {
        self.graph
            .expect("segment primitive used on a tape without a graph")
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.records[v.0].value
    }

    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.push(Op::Leaf, value)
    }

    /// Differentiable leaf reported by name in [`Gradients::params`].
    pub fn param(&mut self, name: impl Into<String>, value: DenseMatrix) -> Var {
        let v = self.push(Op::Leaf, value);
        self.records[v.0].param = Some(name.into());
        v
    }

    /// Registers every tensor of `store` as a parameter leaf, in store order.
    pub fn params(&mut self, store: &ParamStore) -> Vec<(String, Var)> {
        store
            .iter()
            .map(|(name, t)| (name.to_string(), self.param(name, t.clone())))
            .collect()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul(a, b), out)
    }

    /// Adds a `1 x c` bias row to every row of `x`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(bias));
        assert_eq!(bv.shape(), (1, xv.cols()), "bias shape");
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bv.as_slice()) {
                *o += b;
            }
        }
        self.push(Op::AddRowBias(x, bias), out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(Op::Add(a, b), out)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(Op::Sub(a, b), out)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scaled(s);
        self.push(Op::Scale(a, s), out)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(Op::LeakyRelu(a, slope), out)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), out)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), out)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        self.push(Op::Log(a), out)
    }

    /// Divides each row by its Euclidean norm; zero rows stay zero.
    pub fn row_l2_normalize(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|x| *x /= norm);
            }
        }
        self.push(Op::RowL2Normalize(a), out)
    }

    /// Concatenates equal-height blocks side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = DenseMatrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat row mismatch");
            for r in 0..rows {
                out.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
            }
            offset += pv.cols();
        }
        self.push(Op::ConcatCols(parts.to_vec()), out)
    }

    /// Elementwise mean of equal-shape inputs.
    pub fn mean_of(&mut self, parts: &[Var]) -> Var {
        let mut out = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            out.add_assign(self.value(p));
        }
        let out = out.scaled(1.0 / parts.len() as f64);
        self.push(Op::MeanOf(parts.to_vec()), out)
    }

    /// Multiplies by an externally drawn mask (entries `0` or `1/keep`).
    pub fn dropout(&mut self, a: Var, mask: DenseMatrix) -> Var {
        let out = self.value(a).zip_map(&mask, |x, m| x * m);
        self.push(Op::Dropout(a, mask), out)
    }

    /// Per CSR entry `v -> u`: `dst[u] + src[v]`, from two `n x 1` columns.
    pub fn edge_scores(&mut self, dst: Var, src: Var) -> Var {
        let g = self.graph();
        let (d, s) = (self.value(dst), self.value(src));
        assert_eq!(d.shape(), (g.node_count(), 1), "dst score shape");
        assert_eq!(s.shape(), (g.node_count(), 1), "src score shape");
        let cols = g.col_indices();
        let data = self
            .entry_rows
            .iter()
            .zip(cols)
            .map(|(&u, &v)| d.as_slice()[u] + s.as_slice()[v])
            .collect();
        let out = DenseMatrix::from_vec(cols.len(), 1, data).unwrap();
        self.push(Op::EdgeScores(dst, src), out)
    }

    /// Softmax of per-entry logits within each destination row of the graph.
    pub fn segment_softmax(&mut self, logits: Var) -> Var {
        let out = segment_softmax_values(self.graph(), self.value(logits));
        self.push(Op::SegmentSoftmax(logits), out)
    }

    /// `out[u] = sum over entries (v -> u) of weight * feats[v]`.
    pub fn segment_weighted_sum(&mut self, weights: Var, feats: Var) -> Var {
        let g = self.graph();
        let (w, h) = (self.value(weights), self.value(feats));
        assert_eq!(w.shape(), (g.entry_count(), 1), "weight shape");
        assert_eq!(h.rows(), g.node_count(), "feature rows");
        let mut out = DenseMatrix::zeros(g.node_count(), h.cols());
        let offsets = g.row_offsets();
        for u in 0..g.node_count() {
            let row = out.row_mut(u);
            for k in offsets[u]..offsets[u + 1] {
                let a = w.as_slice()[k];
                for (o, x) in row.iter_mut().zip(h.row(g.col_indices()[k])) {
                    *o += a * x;
                }
            }
        }
        self.push(Op::SegmentWeightedSum(weights, feats), out)
    }

    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let out = self.value(a).select_rows(idx);
        self.push(Op::SelectRows(a, idx.to_vec()), out)
    }

    /// Mean over rows of `-log softmax(row)[target]`, as a `1 x 1` value.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), targets.len(), "one target per row");
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = lv.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
        }
        let out = DenseMatrix::scalar(total / targets.len().max(1) as f64);
        self.push(Op::CrossEntropy(logits, targets.to_vec()), out)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = DenseMatrix::scalar(self.value(a).sum());
        self.push(Op::Sum(a), out)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = DenseMatrix::scalar(v.sum() / v.len() as f64);
        self.push(Op::Mean(a), out)
    }

    /// Reverse sweep from a `1 x 1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {:?}",
                lv.shape()
            )));
        }
        let mut adj: Vec<Option<DenseMatrix>> = (0..self.records.len()).map(|_| None).collect();
        adj[loss.0] = Some(DenseMatrix::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            self.propagate(i, &g, &mut adj);
            adj[i] = Some(g);
        }
        let mut params = ParamStore::new();
        for (i, rec) in self.records.iter().enumerate() {
            if let Some(name) = &rec.param {
                let g = adj[i]
                    .clone()
                    .unwrap_or_else(|| DenseMatrix::zeros(rec.value.rows(), rec.value.cols()));
                params.insert(name.clone(), g)?;
            }
        }
        Ok(Gradients {
            params,
            adjoints: adj,
        })
    }

    fn propagate(&self, i: usize, g: &DenseMatrix, adj: &mut [Option<DenseMatrix>]) {
        let val = |v: Var| &self.records[v.0].value;
        let rec = &self.records[i];
        match &rec.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let mut da = DenseMatrix::zeros(av.rows(), av.cols());
                gemm(g, false, bv, true, &mut da, 0.0);
                accumulate(adj, *a, da);
                let mut db = DenseMatrix::zeros(bv.rows(), bv.cols());
                gemm(av, true, g, false, &mut db, 0.0);
                accumulate(adj, *b, db);
            }
            Op::AddRowBias(x, b) => {
                accumulate(adj, *x, g.clone());
                let mut db = DenseMatrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (d, x) in db.as_mut_slice().iter_mut().zip(g.row(r)) {
                        *d += x;
                    }
                }
                accumulate(adj, *b, db);
            }
            Op::Add(a, b) => {
                accumulate(adj, *a, g.clone());
                accumulate(adj, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(adj, *a, g.clone());
                accumulate(adj, *b, g.scaled(-1.0));
            }
            Op::Scale(a, s) => accumulate(adj, *a, g.scaled(*s)),
            Op::LeakyRelu(a, slope) => {
                let d = val(*a).zip_map(g, |x, dy| if x > 0.0 { dy } else { slope * dy });
                accumulate(adj, *a, d);
            }
            Op::Relu(a) => {
                let d = val(*a).zip_map(g, |x, dy| if x > 0.0 { dy } else { 0.0 });
                accumulate(adj, *a, d);
            }
            Op::Exp(a) => accumulate(adj, *a, rec.value.zip_map(g, |y, dy| y * dy)),
            Op::Log(a) => accumulate(adj, *a, val(*a).zip_map(g, |x, dy| dy / x)),
            Op::RowL2Normalize(a) => {
                let x = val(*a);
                let y = &rec.value;
                let mut d = DenseMatrix::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let norm = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm == 0.0 {
                        continue;
                    }
                    let dot: f64 = y.row(r).iter().zip(g.row(r)).map(|(a, b)| a * b).sum();
                    for ((o, yv), gv) in d.row_mut(r).iter_mut().zip(y.row(r)).zip(g.row(r)) {
                        *o = (gv - yv * dot) / norm;
                    }
                }
                accumulate(adj, *a, d);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pc = val(p).cols();
                    let mut d = DenseMatrix::zeros(g.rows(), pc);
                    for r in 0..g.rows() {
                        d.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + pc]);
                    }
                    offset += pc;
                    accumulate(adj, p, d);
                }
            }
            Op::MeanOf(parts) => {
                let d = g.scaled(1.0 / parts.len() as f64);
                for &p in parts {
                    accumulate(adj, p, d.clone());
                }
            }
            Op::Dropout(a, mask) => accumulate(adj, *a, g.zip_map(mask, |dy, m| dy * m)),
            Op::EdgeScores(dst, src) => {
                let n = self.graph().node_count();
                let mut dd = DenseMatrix::zeros(n, 1);
                let mut ds = DenseMatrix::zeros(n, 1);
                for ((&u, &v), &ge) in self
                    .entry_rows
                    .iter()
                    .zip(self.graph().col_indices())
                    .zip(g.as_slice())
                {
                    dd.as_mut_slice()[u] += ge;
                    ds.as_mut_slice()[v] += ge;
                }
                accumulate(adj, *dst, dd);
                accumulate(adj, *src, ds);
            }
            Op::SegmentSoftmax(logits) => {
                let graph = self.graph();
                let y = rec.value.as_slice();
                let mut d = DenseMatrix::zeros(y.len(), 1);
                let offsets = graph.row_offsets();
                for u in 0..graph.node_count() {
                    let seg = offsets[u]..offsets[u + 1];
                    let dot: f64 = seg.clone().map(|k| y[k] * g.as_slice()[k]).sum();
                    for k in seg {
                        d.as_mut_slice()[k] = y[k] * (g.as_slice()[k] - dot);
                    }
                }
                accumulate(adj, *logits, d);
            }
            Op::SegmentWeightedSum(weights, feats) => {
                let graph = self.graph();
                let (w, h) = (val(*weights), val(*feats));
                let mut dw = DenseMatrix::zeros(w.rows(), 1);
                let mut dh = DenseMatrix::zeros(h.rows(), h.cols());
                let offsets = graph.row_offsets();
                for u in 0..graph.node_count() {
                    let gu = g.row(u);
                    for k in offsets[u]..offsets[u + 1] {
                        let v = graph.col_indices()[k];
                        dw.as_mut_slice()[k] = gu.iter().zip(h.row(v)).map(|(a, b)| a * b).sum();
                        let a = w.as_slice()[k];
                        for (o, x) in dh.row_mut(v).iter_mut().zip(gu) {
                            *o += a * x;
                        }
                    }
                }
                accumulate(adj, *weights, dw);
                accumulate(adj, *feats, dh);
            }
            Op::SelectRows(a, idx) => {
                let av = val(*a);
                let mut d = DenseMatrix::zeros(av.rows(), av.cols());
                for (i, &r) in idx.iter().enumerate() {
                    for (o, x) in d.row_mut(r).iter_mut().zip(g.row(i)) {
                        *o += x;
                    }
                }
                accumulate(adj, *a, d);
            }
            Op::CrossEntropy(logits, targets) => {
                let lv = val(*logits);
                let scale = g.item() / targets.len().max(1) as f64;
                let mut d = DenseMatrix::zeros(lv.rows(), lv.cols());
                for (r, &t) in targets.iter().enumerate() {
                    let row = lv.row(r);
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
                    for (c, (o, x)) in d.row_mut(r).iter_mut().zip(row).enumerate() {
                        let p = (x - max).exp() / z;
                        *o = scale * (p - if c == t { 1.0 } else { 0.0 });
                    }
                }
                accumulate(adj, *logits, d);
            }
            Op::Sum(a) => {
                let av = val(*a);
                accumulate(adj, *a, DenseMatrix::filled(av.rows(), av.cols(), g.item()));
            }
            Op::Mean(a) => {
                let av = val(*a);
                let s = g.item() / av.len() as f64;
                accumulate(adj, *a, DenseMatrix::filled(av.rows(), av.cols(), s));
            }
        }
    }
}

fn accumulate(adj: &mut [Option<DenseMatrix>], v: Var, d: DenseMatrix) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&d),
        slot @ None => *slot = Some(d),
    }
}

/// Per-destination softmax with max subtraction, outside any tape.
pub fn segment_softmax_values(graph: &SparseGraph, logits: &DenseMatrix) -> DenseMatrix {
    assert_eq!(logits.shape(), (graph.entry_count(), 1), "one logit per entry");
    let x = logits.as_slice();
    let mut out = DenseMatrix::zeros(x.len(), 1);
    let offsets = graph.row_offsets();
    for u in 0..graph.node_count() {
        let seg = offsets[u]..offsets[u + 1];
        let max = x[seg.clone()].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for k in seg.clone() {
            let e = (x[k] - max).exp();
            out.as_mut_slice()[k] = e;
            z += e;
        }
        for k in seg {
            out.as_mut_slice()[k] /= z;
        }
    }
    out
}
