//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends one record holding its output value and the indices of its
//! inputs, so records are in topological order by construction. `backward` walks the
//! records once, from the output down to the first record, accumulating adjoints.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::tensor::{matmul_acc, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

/// Index of a trainable tensor in a parameter store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    Mul(usize, usize),
    MulCol(usize, usize),
    MulConst(usize, Vec<f64>),
    Relu(usize),
    LeakyRelu(usize, f64),
    Tanh(usize),
    GatherRows(usize, Arc<[usize]>),
    SliceCols(usize, usize),
    ConcatCols(Vec<usize>),
    SegmentSoftmax(usize, Arc<[usize]>),
    SegmentSum(usize, Arc<[usize]>),
    MeanRows(usize),
    MaxRows(usize, Vec<usize>),
    Sum(usize),
    SoftmaxCrossEntropy(usize, usize, Vec<f64>),
}

#[derive(Debug)]
struct Record {
    value: Tensor,
    op: Op,
}

#[derive(Debug)]
pub struct Tape {
    id: u64,
    records: Vec<Record>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to every parameter recorded on the tape.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    by_param: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.iter().all(|g| g.is_none())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.by_param
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|t| (ParamId(i), t)))
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize, f: impl FnOnce(&mut [f64])) {
    let buf = slot.get_or_insert_with(|| vec![0.0; len]);
    f(buf);
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn idx(&self, v: Var) -> usize {
        assert_eq!(v.tape, self.id, "variable recorded on a different tape");
        v.idx
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.records.push(Record { value, op });
        Var {
            tape: self.id,
            idx: self.records.len() - 1,
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.records[self.idx(v)].value
    }

    fn dims(&self, i: usize) -> (usize, usize) {
        let t = &self.records[i].value;
        (t.rows(), t.cols())
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    /// Records a trainable tensor; `backward` reports its gradient under `id`.
    pub fn param(&mut self, id: ParamId, value: &Tensor) -> Var {
        self.push(value.clone().with_grad(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let (n, k) = self.dims(ia);
        let (k2, m) = self.dims(ib);
        if k != k2 {
            return Err(Error::shape("matmul", format!("{n}x{k} · {k2}x{m}")));
        }
        let mut out = vec![0.0; n * m];
        matmul_acc(
            self.records[ia].value.data(),
            self.records[ib].value.data(),
            &mut out,
            n,
            k,
            m,
        );
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::MatMul(ia, ib)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a), self.idx(b));
        if self.dims(ia) != self.dims(ib) {
            return Err(Error::shape(
                "add",
                format!("{:?} + {:?}", self.dims(ia), self.dims(ib)),
            ));
        }
        let (n, m) = self.dims(ia);
        let out: Vec<f64> = self.records[ia]
            .value
            .data()
            .iter()
            .zip(self.records[ib].value.data())
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::Add(ia, ib)))
    }

    /// `a (n×d) + row (1×d)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ia, ir) = (self.idx(a), self.idx(row));
        let (n, d) = self.dims(ia);
        if self.dims(ir) != (1, d) {
            return Err(Error::shape(
                "add_row",
                format!("{n}x{d} + {:?}", self.dims(ir)),
            ));
        }
        let r = self.records[ir].value.data().to_vec();
        let mut out = self.records[ia].value.data().to_vec();
        for chunk in out.chunks_mut(d.max(1)) {
            for (o, b) in chunk.iter_mut().zip(&r) {
                *o += b;
            }
        }
        Ok(self.push(Tensor::matrix(n, d, out)?, Op::AddRow(ia, ir)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let ia = self.idx(a);
        let (n, m) = self.dims(ia);
        let out = self.records[ia]
            .value
            .data()
            .iter()
            .map(|x| x * factor)
            .collect();
        self.push(
            Tensor::matrix(n, m, out).expect("shape preserved"),
            Op::Scale(ia, factor),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a), self.idx(b));
        if self.dims(ia) != self.dims(ib) {
            return Err(Error::shape(
                "mul",
                format!("{:?} * {:?}", self.dims(ia), self.dims(ib)),
            ));
        }
        let (n, m) = self.dims(ia);
        let out = self.records[ia]
            .value
            .data()
            .iter()
            .zip(self.records[ib].value.data())
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::Mul(ia, ib)))
    }

    /// `a (n×d)` with row `i` scaled by `col[i]` for `col: n×1`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (ia, ic) = (self.idx(a), self.idx(col));
        let (n, d) = self.dims(ia);
        if self.dims(ic) != (n, 1) {
            return Err(Error::shape(
                "mul_col",
                format!("{n}x{d} * {:?}", self.dims(ic)),
            ));
        }
        let c = self.records[ic].value.data().to_vec();
        let mut out = self.records[ia].value.data().to_vec();
        for (i, chunk) in out.chunks_mut(d.max(1)).enumerate().take(n) {
            for o in chunk {
                *o *= c[i];
            }
        }
        Ok(self.push(Tensor::matrix(n, d, out)?, Op::MulCol(ia, ic)))
    }

    /// Elementwise product with a fixed (non-differentiated) array, e.g. a dropout mask.
    pub fn mul_const(&mut self, a: Var, factors: Vec<f64>) -> Result<Var> {
        let ia = self.idx(a);
        let (n, m) = self.dims(ia);
        if factors.len() != n * m {
            return Err(Error::shape(
                "mul_const",
                format!("{n}x{m} with {} factors", factors.len()),
            ));
        }
        let out = self.records[ia]
            .value
            .data()
            .iter()
            .zip(&factors)
            .map(|(x, f)| x * f)
            .collect();
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::MulConst(ia, factors)))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: impl FnOnce(usize) -> Op) -> Var {
        let ia = self.idx(a);
        let (n, m) = self.dims(ia);
        let out = self.records[ia].value.data().iter().map(|&x| f(x)).collect();
        self.push(Tensor::matrix(n, m, out).expect("shape preserved"), op(ia))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(
            a,
            move |x| if x > 0.0 { x } else { slope * x },
            move |i| Op::LeakyRelu(i, slope),
        )
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh)
    }

    /// Output row `r` is input row `rows[r]`.
    pub fn gather_rows(&mut self, a: Var, rows: Arc<[usize]>) -> Result<Var> {
        let ia = self.idx(a);
        let (n, d) = self.dims(ia);
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::shape(
                "gather_rows",
                format!("row {bad} of {n}"),
            ));
        }
        let src = self.records[ia].value.data();
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows.iter() {
            out.extend_from_slice(&src[r * d..(r + 1) * d]);
        }
        let t = Tensor::matrix(rows.len(), d, out)?;
        Ok(self.push(t, Op::GatherRows(ia, rows)))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ia = self.idx(a);
        let (n, d) = self.dims(ia);
        if start > end || end > d {
            return Err(Error::shape(
                "slice_cols",
                format!("{start}..{end} of {d} columns"),
            ));
        }
        let src = self.records[ia].value.data();
        let mut out = Vec::with_capacity(n * (end - start));
        for r in 0..n {
            out.extend_from_slice(&src[r * d + start..r * d + end]);
        }
        let t = Tensor::matrix(n, end - start, out)?;
        Ok(self.push(t, Op::SliceCols(ia, start)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let idxs: Vec<usize> = parts.iter().map(|&p| self.idx(p)).collect();
        let Some(&first) = idxs.first() else {
            return Err(Error::shape("concat_cols", "no inputs"));
        };
        let n = self.dims(first).0;
        if let Some(&bad) = idxs.iter().find(|&&i| self.dims(i).0 != n) {
            return Err(Error::shape(
                "concat_cols",
                format!("row counts {n} and {}", self.dims(bad).0),
            ));
        }
        let total: usize = idxs.iter().map(|&i| self.dims(i).1).sum();
        let mut out = Vec::with_capacity(n * total);
        for r in 0..n {
            for &i in &idxs {
                out.extend_from_slice(self.records[i].value.row_slice(r));
            }
        }
        let t = Tensor::matrix(n, total, out)?;
        Ok(self.push(t, Op::ConcatCols(idxs)))
    }

    /// Softmax of an `E×1` column within groups: entries sharing `segments[e]` are
    /// normalized together.
    pub fn segment_softmax(&mut self, scores: Var, segments: Arc<[usize]>) -> Result<Var> {
        let is = self.idx(scores);
        let (e, c) = self.dims(is);
        if c != 1 || segments.len() != e {
            return Err(Error::shape(
                "segment_softmax",
                format!("{e}x{c} scores with {} segment ids", segments.len()),
            ));
        }
        let n_seg = segments.iter().copied().max().map_or(0, |m| m + 1);
        let x = self.records[is].value.data();
        let mut max = vec![f64::NEG_INFINITY; n_seg];
        for (&s, &v) in segments.iter().zip(x) {
            if v > max[s] {
                max[s] = v;
            }
        }
        let mut out: Vec<f64> = segments
            .iter()
            .zip(x)
            .map(|(&s, &v)| (v - max[s]).exp())
            .collect();
        let mut denom = vec![0.0; n_seg];
        for (&s, &v) in segments.iter().zip(&out) {
            denom[s] += v;
        }
        for (o, &s) in out.iter_mut().zip(segments.iter()) {
            *o /= denom[s];
        }
        let t = Tensor::matrix(e, 1, out)?;
        Ok(self.push(t, Op::SegmentSoftmax(is, segments)))
    }

    /// Sums rows of `a (E×d)` into `n_segments` output rows by `segments[e]`.
    pub fn segment_sum(
        &mut self,
        a: Var,
        segments: Arc<[usize]>,
        n_segments: usize,
    ) -> Result<Var> {
        let ia = self.idx(a);
        let (e, d) = self.dims(ia);
        if segments.len() != e || segments.iter().any(|&s| s >= n_segments) {
            return Err(Error::shape(
                "segment_sum",
                format!("{e} rows, {} ids, {n_segments} segments", segments.len()),
            ));
        }
        let src = self.records[ia].value.data();
        let mut out = vec![0.0; n_segments * d];
        for (r, &s) in segments.iter().enumerate() {
            let dst = &mut out[s * d..(s + 1) * d];
            for (o, v) in dst.iter_mut().zip(&src[r * d..(r + 1) * d]) {
                *o += v;
            }
        }
        let t = Tensor::matrix(n_segments, d, out)?;
        Ok(self.push(t, Op::SegmentSum(ia, segments)))
    }

    /// Column means, `n×d → 1×d`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a);
        let (n, d) = self.dims(ia);
        if n == 0 {
            return Err(Error::shape("mean_rows", "no rows"));
        }
        let src = self.records[ia].value.data();
        let mut out = vec![0.0; d];
        for r in 0..n {
            for (o, v) in out.iter_mut().zip(&src[r * d..(r + 1) * d]) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= n as f64;
        }
        Ok(self.push(Tensor::row(out), Op::MeanRows(ia)))
    }

    /// Column maxima, `n×d → 1×d`. The gradient goes to the first maximal row.
    pub fn max_rows(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a);
        let (n, d) = self.dims(ia);
        if n == 0 {
            return Err(Error::shape("max_rows", "no rows"));
        }
        let src = self.records[ia].value.data();
        let mut arg = vec![0usize; d];
        let mut out = src[..d].to_vec();
        for r in 1..n {
            for c in 0..d {
                let v = src[r * d + c];
                if v > out[c] {
                    out[c] = v;
                    arg[c] = r;
                }
            }
        }
        Ok(self.push(Tensor::row(out), Op::MaxRows(ia, arg)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let s = self.records[ia].value.data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(ia))
    }

    /// `-log softmax(logits)[target]` for a `1×C` row of logits.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let il = self.idx(logits);
        let (r, c) = self.dims(il);
        if r != 1 || target >= c {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("{r}x{c} logits, target {target}"),
            ));
        }
        let probs = softmax(self.records[il].value.data());
        let loss = -log_softmax_at(self.records[il].value.data(), target);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy(il, target, probs),
        ))
    }

    /// Which side of every non-smooth choice the recorded pass took: the sign of each
    /// (leaky) ReLU input, the row picked by each `max_rows` column and the rows selected
    /// by each `gather_rows`. Two passes with equal signatures lie on the same smooth
    /// piece of the function.
    pub fn branch_signature(&self) -> Vec<usize> {
        let mut sig = Vec::new();
        for rec in &self.records {
            match &rec.op {
                Op::Relu(a) | Op::LeakyRelu(a, _) => {
                    sig.extend(self.records[*a].value.data().iter().map(|&v| usize::from(v > 0.0)));
                }
                Op::MaxRows(_, arg) => sig.extend_from_slice(arg),
                Op::GatherRows(_, rows) => sig.extend_from_slice(rows),
                _ => {}
            }
        }
        sig
    }

    /// Gradients of the scalar `output` with respect to every recorded parameter.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if output.tape != self.id || output.idx >= self.records.len() {
            return Err(Error::invalid(
                "backward",
                "output variable is not recorded on this tape",
            ));
        }
        if !self.records[output.idx].value.is_scalar() {
            return Err(Error::invalid(
                "backward",
                format!(
                    "output must be scalar, got shape {:?}",
                    self.records[output.idx].value.shape()
                ),
            ));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; output.idx + 1];
        adj[output.idx] = Some(vec![1.0]);
        let mut grads = Gradients::default();

        for i in (0..=output.idx).rev() {
            let Some(g) = adj[i].take() else { continue };
            let rec = &self.records[i];
            let (n, m) = (rec.value.rows(), rec.value.cols());
            match &rec.op {
                Op::Constant => {}
                Op::Param(id) => {
                    if grads.by_param.len() <= id.0 {
                        grads.by_param.resize(id.0 + 1, None);
                    }
                    let t = Tensor::new(rec.value.shape().to_vec(), g)?;
                    match &mut grads.by_param[id.0] {
                        Some(existing) => {
                            for (e, v) in existing.data_mut().iter_mut().zip(t.data()) {
                                *e += v;
                            }
                        }
                        slot @ None => *slot = Some(t),
                    }
                }
                &Op::MatMul(a, b) => {
                    let (_, k) = self.dims(a);
                    let av = self.records[a].value.data();
                    let bv = self.records[b].value.data();
                    // dA = dC · Bᵀ
                    accumulate(&mut adj[a], n * k, |da| {
                        for r in 0..n {
                            let grow = &g[r * m..(r + 1) * m];
                            for kk in 0..k {
                                let brow = &bv[kk * m..(kk + 1) * m];
                                da[r * k + kk] +=
                                    grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    });
                    // dB = Aᵀ · dC
                    accumulate(&mut adj[b], k * m, |db| {
                        for r in 0..n {
                            let grow = &g[r * m..(r + 1) * m];
                            for kk in 0..k {
                                let a_rk = av[r * k + kk];
                                if a_rk == 0.0 {
                                    continue;
                                }
                                for (d, &gv) in db[kk * m..(kk + 1) * m].iter_mut().zip(grow) {
                                    *d += a_rk * gv;
                                }
                            }
                        }
                    });
                }
                &Op::Add(a, b) => {
                    for x in [a, b] {
                        accumulate(&mut adj[x], n * m, |d| {
                            d.iter_mut().zip(&g).for_each(|(d, v)| *d += v)
                        });
                    }
                }
                &Op::AddRow(a, row) => {
                    accumulate(&mut adj[a], n * m, |d| {
                        d.iter_mut().zip(&g).for_each(|(d, v)| *d += v)
                    });
                    accumulate(&mut adj[row], m, |d| {
                        for chunk in g.chunks(m.max(1)) {
                            d.iter_mut().zip(chunk).for_each(|(d, v)| *d += v);
                        }
                    });
                }
                &Op::Scale(a, f) => {
                    accumulate(&mut adj[a], n * m, |d| {
                        d.iter_mut().zip(&g).for_each(|(d, v)| *d += f * v)
                    });
                }
                &Op::Mul(a, b) => {
                    let av = self.records[a].value.data();
                    let bv = self.records[b].value.data();
                    accumulate(&mut adj[a], n * m, |d| {
                        for j in 0..d.len() {
                            d[j] += g[j] * bv[j];
                        }
                    });
                    accumulate(&mut adj[b], n * m, |d| {
                        for j in 0..d.len() {
                            d[j] += g[j] * av[j];
                        }
                    });
                }
                &Op::MulCol(a, col) => {
                    let av = self.records[a].value.data();
                    let cv = self.records[col].value.data();
                    accumulate(&mut adj[a], n * m, |d| {
                        for r in 0..n {
                            for c in 0..m {
                                d[r * m + c] += g[r * m + c] * cv[r];
                            }
                        }
                    });
                    accumulate(&mut adj[col], n, |d| {
                        for r in 0..n {
                            d[r] += (0..m).map(|c| g[r * m + c] * av[r * m + c]).sum::<f64>();
                        }
                    });
                }
                Op::MulConst(a, factors) => {
                    accumulate(&mut adj[*a], n * m, |d| {
                        for j in 0..d.len() {
                            d[j] += g[j] * factors[j];
                        }
                    });
                }
                &Op::Relu(a) => {
                    let av = self.records[a].value.data();
                    accumulate(&mut adj[a], n * m, |d| {
                        for j in 0..d.len() {
                            if av[j] > 0.0 {
                                d[j] += g[j];
                            }
                        }
                    });
                }
                &Op::LeakyRelu(a, slope) => {
                    let av = self.records[a].value.data();
                    accumulate(&mut adj[a], n * m, |d| {
                        for j in 0..d.len() {
                            d[j] += if av[j] > 0.0 { g[j] } else { slope * g[j] };
                        }
                    });
                }
                &Op::Tanh(a) => {
                    let y = rec.value.data();
                    accumulate(&mut adj[a], n * m, |d| {
                        for j in 0..d.len() {
                            d[j] += g[j] * (1.0 - y[j] * y[j]);
                        }
                    });
                }
                Op::GatherRows(a, rows) => {
                    let (src_n, _) = self.dims(*a);
                    accumulate(&mut adj[*a], src_n * m, |d| {
                        for (r, &src) in rows.iter().enumerate() {
                            for c in 0..m {
                                d[src * m + c] += g[r * m + c];
                            }
                        }
                    });
                }
                &Op::SliceCols(a, start) => {
                    let (_, src_m) = self.dims(a);
                    accumulate(&mut adj[a], n * src_m, |d| {
                        for r in 0..n {
                            for c in 0..m {
                                d[r * src_m + start + c] += g[r * m + c];
                            }
                        }
                    });
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (_, pm) = self.dims(p);
                        accumulate(&mut adj[p], n * pm, |d| {
                            for r in 0..n {
                                for c in 0..pm {
                                    d[r * pm + c] += g[r * m + offset + c];
                                }
                            }
                        });
                        offset += pm;
                    }
                }
                Op::SegmentSoftmax(a, segments) => {
                    let y = rec.value.data();
                    let n_seg = segments.iter().copied().max().map_or(0, |s| s + 1);
                    let mut dot = vec![0.0; n_seg];
                    for (e, &s) in segments.iter().enumerate() {
                        dot[s] += g[e] * y[e];
                    }
                    accumulate(&mut adj[*a], n, |d| {
                        for (e, &s) in segments.iter().enumerate() {
                            d[e] += y[e] * (g[e] - dot[s]);
                        }
                    });
                }
                Op::SegmentSum(a, segments) => {
                    let (e, _) = self.dims(*a);
                    accumulate(&mut adj[*a], e * m, |d| {
                        for (r, &s) in segments.iter().enumerate() {
                            for c in 0..m {
                                d[r * m + c] += g[s * m + c];
                            }
                        }
                    });
                }
                &Op::MeanRows(a) => {
                    let (src_n, _) = self.dims(a);
                    let inv = 1.0 / src_n as f64;
                    accumulate(&mut adj[a], src_n * m, |d| {
                        for r in 0..src_n {
                            for c in 0..m {
                                d[r * m + c] += g[c] * inv;
                            }
                        }
                    });
                }
                Op::MaxRows(a, arg) => {
                    let (src_n, _) = self.dims(*a);
                    accumulate(&mut adj[*a], src_n * m, |d| {
                        for (c, &r) in arg.iter().enumerate() {
                            d[r * m + c] += g[c];
                        }
                    });
                }
                &Op::Sum(a) => {
                    let (an, am) = self.dims(a);
                    accumulate(&mut adj[a], an * am, |d| d.iter_mut().for_each(|d| *d += g[0]));
                }
                Op::SoftmaxCrossEntropy(a, target, probs) => {
                    accumulate(&mut adj[*a], probs.len(), |d| {
                        for (j, p) in probs.iter().enumerate() {
                            let onehot = if j == *target { 1.0 } else { 0.0 };
                            d[j] += g[0] * (p - onehot);
                        }
                    });
                }
            }
        }
        Ok(grads)
    }
}

/// Numerically stable softmax of a slice.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `log softmax(x)[i]`.
pub fn log_softmax_at(x: &[f64], i: usize) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    x[i] - lse
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(ParamId(0), &Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(ParamId(0)).unwrap().data(), &[6.0]);
    }

    #[test]
    fn relu_sum_subgradient() {
        let mut tape = Tape::new();
        let x = tape.param(ParamId(0), &Tensor::row(vec![-1.0, 2.0]));
        let r = tape.relu(x);
        let s = tape.sum(r);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(ParamId(0)).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(ParamId(0), &Tensor::row(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Invalid { .. })));
    }

    #[test]
    fn foreign_variable_is_rejected() {
        let mut other = Tape::new();
        let v = other.constant(Tensor::scalar(1.0));
        let tape = Tape::new();
        assert!(tape.backward(v).is_err());
    }

    #[test]
    fn branch_signature_tracks_relu_sides() {
        let sig = |x: f64| {
            let mut tape = Tape::new();
            let v = tape.constant(Tensor::matrix(2, 1, vec![x, 1.0]).unwrap());
            let r = tape.relu(v);
            tape.max_rows(r).unwrap();
            tape.branch_signature()
        };
        assert_eq!(sig(0.5), sig(0.6));
        assert_ne!(sig(0.5), sig(-0.5));
        assert_ne!(sig(0.5), sig(1.5));
    }

    #[test]
    fn max_tie_goes_to_first_row() {
        let mut tape = Tape::new();
        let x = tape.param(ParamId(0), &Tensor::matrix(3, 1, vec![2.0, 2.0, 1.0]).unwrap());
        let mx = tape.max_rows(x).unwrap();
        let s = tape.sum(mx);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(ParamId(0)).unwrap().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn reused_parameter_accumulates() {
        let mut tape = Tape::new();
        let a = tape.param(ParamId(0), &Tensor::scalar(2.0));
        let b = tape.param(ParamId(0), &Tensor::scalar(2.0));
        let y = tape.mul(a, b).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(ParamId(0)).unwrap().data(), &[4.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::scalar(5.0));
        let x = tape.param(ParamId(1), &Tensor::scalar(2.0));
        let y = tape.mul(c, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert!(g.get(ParamId(0)).is_none());
        assert_eq!(g.get(ParamId(1)).unwrap().data(), &[5.0]);
    }

    #[test]
    fn segment_softmax_normalizes_per_segment() {
        let mut tape = Tape::new();
        let s = tape.constant(Tensor::matrix(5, 1, vec![0.1, 2.0, -1.0, 3.0, 3.0]).unwrap());
        let seg: Arc<[usize]> = vec![0, 0, 1, 2, 2].into();
        let y = tape.segment_softmax(s, seg).unwrap();
        let v = tape.value(y).data();
        assert!((v[0] + v[1] - 1.0).abs() < 1e-15);
        assert_eq!(v[2], 1.0);
        assert_eq!(v[3], 0.5);
        assert_eq!(v[4], 0.5);
    }
}
