use std::collections::HashMap;
use std::ops::Range;

use rand::Rng;

use super::objectives;
use super::{Grads, NumericsError, ParamId, ParamStore, Real, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<T> {
    Owned(Vec<T>),
    /// Contiguous slice of a stored parameter (whole array or a row block).
    Param { id: ParamId, offset: usize },
}

enum Op<T> {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Mask(Var, Vec<T>),
    Concat(Vec<Var>),
    Gather(Var, Vec<usize>),
    GatherSum(Vec<(Var, Vec<usize>)>),
    SegmentMean(Var, Vec<Vec<usize>>),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Sum(Var),
    Mean(Var),
    LogSumExp(Var),
    DivClamped { x: Var, tau: Var, eps: T },
    PlackettLuce { scores: Var, segments: Vec<Range<usize>> },
    Bpr { scores: Var, pairs: Vec<(usize, usize)> },
    Mse { pred: Var, target: Vec<T> },
    LinComb(Vec<(Var, T)>),
}

struct Node<T> {
    rows: usize,
    cols: usize,
    value: Value<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records a computation over parameters borrowed from a [`ParamStore`] and
/// replays it backwards.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and [`Tape::backward`] walks it once in reverse.
pub struct Tape<'s, T: Real> {
    store: &'s ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_nodes: HashMap<ParamId, Var>,
}

fn shape_err(op: &'static str, detail: String) -> NumericsError {
    NumericsError::Shape { op, detail }
}

impl<'s, T: Real> Tape<'s, T> {
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Self { store, nodes: Vec::new(), param_nodes: HashMap::new() }
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        let node = &self.nodes[v.0];
        match &node.value {
            Value::Owned(d) => d,
            Value::Param { id, offset } => {
                &self.store.get(*id).data[*offset..*offset + node.rows * node.cols]
            }
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    /// The single value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[0]
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<T>, op: Op<T>, name: &'static str) -> Result<Var> {
        debug_assert_eq!(data.len(), rows * cols);
        if data.iter().any(|x| !x.is_finite()) {
            return Err(NumericsError::NonFinite { op: name });
        }
        let needs_grad = self.inputs_need_grad(&op);
        self.nodes.push(Node { rows, cols, value: Value::Owned(data), op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn inputs_need_grad(&self, op: &Op<T>) -> bool {
        let ng = |v: &Var| self.nodes[v.0].needs_grad;
        match op {
            Op::Constant => false,
            Op::Param(_) => true,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddBias(a, b) => ng(a) || ng(b),
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Mask(a, _)
            | Op::Gather(a, _)
            | Op::SegmentMean(a, _)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Sigmoid(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::LogSumExp(a) => ng(a),
            Op::Concat(vs) => vs.iter().any(ng),
            Op::GatherSum(parts) => parts.iter().any(|(v, _)| ng(v)),
            Op::DivClamped { x, tau, .. } => ng(x) || ng(tau),
            Op::PlackettLuce { scores, .. } | Op::Bpr { scores, .. } => ng(scores),
            Op::Mse { pred, .. } => ng(pred),
            Op::LinComb(terms) => terms.iter().any(|(v, _)| ng(v)),
        }
    }

    /// A constant input; never receives gradients.
    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<T>) -> Result<Var> {
        if data.len() != rows * cols {
            return Err(shape_err("constant", format!("{} values for {rows}x{cols}", data.len())));
        }
        self.push(rows, cols, data, Op::Constant, "constant")
    }

    /// A whole stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        let p = self.store.get(id);
        self.nodes.push(Node {
            rows: p.rows,
            cols: p.cols,
            value: Value::Param { id, offset: 0 },
            op: Op::Param(id),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        v
    }

    /// Rows `rows` of a stored parameter, viewed without copying.
    pub fn param_rows(&mut self, id: ParamId, rows: Range<usize>) -> Result<Var> {
        let p = self.store.get(id);
        if rows.start > rows.end || rows.end > p.rows {
            return Err(shape_err("param_rows", format!("{rows:?} outside {} rows", p.rows)));
        }
        self.nodes.push(Node {
            rows: rows.len(),
            cols: p.cols,
            value: Value::Param { id, offset: rows.start * p.cols },
            op: Op::Param(id),
            needs_grad: true,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.shape(a);
        let (k2, m) = self.shape(b);
        if k != k2 {
            return Err(shape_err("matmul", format!("{n}x{k} · {k2}x{m}")));
        }
        let mut out = vec![T::zero(); n * m];
        T::gemm(
            n,
            k,
            m,
            T::one(),
            self.value(a),
            k as isize,
            1,
            self.value(b),
            m as isize,
            1,
            T::zero(),
            &mut out,
            m as isize,
            1,
        );
        self.push(n, m, out, Op::MatMul(a, b), "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("add", format!("{:?} + {:?}", self.shape(a), self.shape(b))));
        }
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        self.push(r, c, out, Op::Add(a, b), "add")
    }

    /// Adds a `1×cols` row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if self.shape(bias) != (1, c) {
            return Err(shape_err("add_bias", format!("{r}x{c} + {:?}", self.shape(bias))));
        }
        let b = self.value(bias);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(c.max(1)) {
            for (x, &y) in row.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.push(r, c, out, Op::AddBias(a, bias), "add_bias")
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var> {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| x * factor).collect();
        self.push(r, c, out, Op::Scale(a, factor), "scale")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| x.max(T::zero())).collect();
        self.push(r, c, out, Op::Relu(a), "relu")
    }

    /// Multiplies elementwise by a fixed mask (e.g. a pre-drawn dropout mask
    /// already scaled by `1/(1−rate)`).
    pub fn mask(&mut self, a: Var, mask: Vec<T>) -> Result<Var> {
        let (r, c) = self.shape(a);
        if mask.len() != r * c {
            return Err(shape_err("mask", format!("{} mask values for {r}x{c}", mask.len())));
        }
        let out = self.value(a).iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        self.push(r, c, out, Op::Mask(a, mask), "mask")
    }

    /// Inverted dropout. Identity unless `training` and `rate > 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: &mut R, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NumericsError::Contract(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let (r, c) = self.shape(a);
        let mask = dropout_mask(r * c, rate, rng);
        self.mask(a, mask)
    }

    /// Column-wise concatenation of nodes with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(NumericsError::Contract("concat of nothing".into()));
        };
        let rows = self.shape(first).0;
        if parts.iter().any(|&p| self.shape(p).0 != rows) {
            return Err(shape_err("concat", "row counts differ".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let c = self.shape(p).1;
                out.extend_from_slice(&self.value(p)[r * c..(r + 1) * c]);
            }
        }
        self.push(rows, cols, out, Op::Concat(parts.to_vec()), "concat")
    }

    /// Selects rows of `a` by index (repeats allowed).
    pub fn gather(&mut self, a: Var, index: Vec<usize>) -> Result<Var> {
        let (r, c) = self.shape(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= r) {
            return Err(shape_err("gather", format!("row {bad} of {r}")));
        }
        let src = self.value(a);
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in &index {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        self.push(index.len(), c, out, Op::Gather(a, index), "gather")
    }

    /// `out[i] = Σ_p parts[p].value[index_p[i]]`, i.e. a sum of several
    /// gathers with equal output length, fused into one node.
    pub fn gather_sum(&mut self, parts: Vec<(Var, Vec<usize>)>) -> Result<Var> {
        let Some((first, first_idx)) = parts.first() else {
            return Err(NumericsError::Contract("gather_sum of nothing".into()));
        };
        let n = first_idx.len();
        let c = self.shape(*first).1;
        let mut out = vec![T::zero(); n * c];
        for (v, idx) in &parts {
            let (r, vc) = self.shape(*v);
            if vc != c || idx.len() != n {
                return Err(shape_err("gather_sum", format!("part {r}x{vc} with {} indices", idx.len())));
            }
            if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
                return Err(shape_err("gather_sum", format!("row {bad} of {r}")));
            }
            let src = self.value(*v);
            for (o, &i) in out.chunks_mut(c.max(1)).zip(idx) {
                for (x, &y) in o.iter_mut().zip(&src[i * c..(i + 1) * c]) {
                    *x += y;
                }
            }
        }
        self.push(n, c, out, Op::GatherSum(parts), "gather_sum")
    }

    /// Mean of selected rows of `table`, one output row per segment. Empty
    /// segments give a zero row.
    pub fn segment_mean(&mut self, table: Var, segments: Vec<Vec<usize>>) -> Result<Var> {
        let (r, c) = self.shape(table);
        let src = self.value(table);
        let mut out = vec![T::zero(); segments.len() * c];
        for (seg, o) in segments.iter().zip(out.chunks_mut(c.max(1))) {
            if seg.is_empty() {
                continue;
            }
            for &i in seg {
                if i >= r {
                    return Err(shape_err("segment_mean", format!("row {i} of {r}")));
                }
                for (x, &y) in o.iter_mut().zip(&src[i * c..(i + 1) * c]) {
                    *x += y;
                }
            }
            let inv = T::one() / T::of(seg.len() as f64);
            o.iter_mut().for_each(|x| *x *= inv);
        }
        self.push(segments.len(), c, out, Op::SegmentMean(table, segments), "segment_mean")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|x| x.exp()).collect();
        self.push(r, c, out, Op::Exp(a), "exp")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|x| x.ln()).collect();
        self.push(r, c, out, Op::Log(a), "log")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| super::sigmoid(x)).collect();
        self.push(r, c, out, Op::Sigmoid(a), "sigmoid")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().fold(T::zero(), |acc, &x| acc + x);
        self.push(1, 1, vec![s], Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(NumericsError::Contract("mean of an empty node".into()));
        }
        let s = v.iter().fold(T::zero(), |acc, &x| acc + x) / T::of(v.len() as f64);
        self.push(1, 1, vec![s], Op::Mean(a), "mean")
    }

    /// Log-sum-exp over all elements, computed with max subtraction.
    pub fn logsumexp(&mut self, a: Var) -> Result<Var> {
        let v = super::logsumexp(self.value(a));
        self.push(1, 1, vec![v], Op::LogSumExp(a), "logsumexp")
    }

    /// `x / max(tau, eps)` with `tau` a `1×1` node.
    pub fn div_clamped(&mut self, x: Var, tau: Var, eps: T) -> Result<Var> {
        if self.shape(tau) != (1, 1) {
            return Err(shape_err("div_clamped", format!("divisor {:?}", self.shape(tau))));
        }
        let d = self.scalar(tau).max(eps);
        let (r, c) = self.shape(x);
        let out = self.value(x).iter().map(|&v| v / d).collect();
        self.push(r, c, out, Op::DivClamped { x, tau, eps }, "div_clamped")
    }

    /// Mean Plackett–Luce loss over `segments` of `scores`; each segment lists
    /// its items best first.
    pub fn plackett_luce(&mut self, scores: Var, segments: Vec<Range<usize>>) -> Result<Var> {
        let n = self.value(scores).len();
        if segments.is_empty() || segments.iter().any(|s| s.is_empty() || s.end > n) {
            return Err(NumericsError::Contract("plackett_luce needs non-empty in-range segments".into()));
        }
        let v = self.value(scores);
        let total = segments.iter().fold(T::zero(), |acc, s| acc + objectives::plackett_luce(&v[s.clone()]));
        let loss = total / T::of(segments.len() as f64);
        self.push(1, 1, vec![loss], Op::PlackettLuce { scores, segments }, "plackett_luce")
    }

    /// Mean BPR loss over `(positive, negative)` index pairs of `scores`.
    pub fn bpr(&mut self, scores: Var, pairs: Vec<(usize, usize)>) -> Result<Var> {
        let v = self.value(scores);
        if pairs.is_empty() || pairs.iter().any(|&(a, b)| a >= v.len() || b >= v.len()) {
            return Err(NumericsError::Contract("bpr needs non-empty in-range pairs".into()));
        }
        let total = pairs.iter().fold(T::zero(), |acc, &(a, b)| acc + objectives::bpr(v[a], v[b]));
        let loss = total / T::of(pairs.len() as f64);
        self.push(1, 1, vec![loss], Op::Bpr { scores, pairs }, "bpr")
    }

    pub fn mse(&mut self, pred: Var, target: Vec<T>) -> Result<Var> {
        let v = self.value(pred);
        if v.len() != target.len() || v.is_empty() {
            return Err(NumericsError::Contract(format!(
                "mse over {} predictions and {} targets",
                v.len(),
                target.len()
            )));
        }
        let loss = objectives::mse(v, &target);
        self.push(1, 1, vec![loss], Op::Mse { pred, target }, "mse")
    }

    /// `Σ weight·scalar` over `1×1` nodes.
    pub fn lin_comb(&mut self, terms: Vec<(Var, T)>) -> Result<Var> {
        if terms.iter().any(|&(v, _)| self.shape(v) != (1, 1)) {
            return Err(shape_err("lin_comb", "terms must be scalars".into()));
        }
        let s = terms.iter().fold(T::zero(), |acc, &(v, w)| acc + w * self.scalar(v));
        self.push(1, 1, vec![s], Op::LinComb(terms), "lin_comb")
    }

    /// Reverse pass from a scalar `loss`. Parameters that did not take part
    /// have no entry in the result (their gradient is zero).
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        if self.shape(loss) != (1, 1) {
            return Err(NumericsError::Contract(format!("loss must be scalar, got {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut out = Grads::empty(self.store.len());
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, g, &mut grads, &mut out);
        }
        if !out.all_finite() {
            return Err(NumericsError::NonFinite { op: "backward" });
        }
        Ok(out)
    }

    fn backprop_node(&self, node: &Node<T>, g: Vec<T>, grads: &mut [Option<Vec<T>>], out: &mut Grads<T>) {
        let nodes = &self.nodes;
        let needs = |v: Var| nodes[v.0].needs_grad;
        // Accumulator for an input node, zero-initialized on first use.
        fn acc<'g, T: Real>(grads: &'g mut [Option<Vec<T>>], nodes: &[Node<T>], v: Var) -> &'g mut Vec<T> {
            let n = &nodes[v.0];
            grads[v.0].get_or_insert_with(|| vec![T::zero(); n.rows * n.cols])
        }

        match &node.op {
            Op::Constant => {}
            Op::Param(id) => {
                let Value::Param { offset, .. } = node.value else { unreachable!() };
                let p = self.store.get(*id);
                if offset == 0 && g.len() == p.len() && out.by_param[id.0].is_none() {
                    out.by_param[id.0] = Some(g);
                } else {
                    let buf = out.by_param[id.0].get_or_insert_with(|| vec![T::zero(); p.len()]);
                    for (x, &y) in buf[offset..offset + g.len()].iter_mut().zip(&g) {
                        *x += y;
                    }
                }
            }
            &Op::MatMul(a, b) => {
                let (n, k) = self.shape(a);
                let m = self.shape(b).1;
                if needs(a) {
                    let bv = self.value(b);
                    let da = acc(grads, nodes, a);
                    // dA += dC · Bᵀ
                    T::gemm(n, m, k, T::one(), &g, m as isize, 1, bv, 1, m as isize, T::one(), da, k as isize, 1);
                }
                if needs(b) {
                    let av = self.value(a);
                    let db = acc(grads, nodes, b);
                    // dB += Aᵀ · dC
                    T::gemm(k, n, m, T::one(), av, 1, k as isize, &g, m as isize, 1, T::one(), db, m as isize, 1);
                }
            }
            &Op::Add(a, b) => {
                for v in [a, b] {
                    if needs(v) {
                        add_into(acc(grads, nodes, v), &g);
                    }
                }
            }
            &Op::AddBias(a, bias) => {
                if needs(a) {
                    add_into(acc(grads, nodes, a), &g);
                }
                if needs(bias) {
                    let c = node.cols;
                    let db = acc(grads, nodes, bias);
                    for row in g.chunks(c.max(1)) {
                        add_into(db, row);
                    }
                }
            }
            &Op::Scale(a, f) => {
                if needs(a) {
                    let da = acc(grads, nodes, a);
                    for (x, &y) in da.iter_mut().zip(&g) {
                        *x += f * y;
                    }
                }
            }
            &Op::Relu(a) => {
                if needs(a) {
                    let av = self.value(a);
                    let da = acc(grads, nodes, a);
                    for ((x, &y), &v) in da.iter_mut().zip(&g).zip(av) {
                        if v > T::zero() {
                            *x += y;
                        }
                    }
                }
            }
            Op::Mask(a, mask) => {
                if needs(*a) {
                    let da = acc(grads, nodes, *a);
                    for ((x, &y), &m) in da.iter_mut().zip(&g).zip(mask) {
                        *x += y * m;
                    }
                }
            }
            Op::Concat(parts) => {
                let cols = node.cols;
                let mut col0 = 0;
                for &p in parts {
                    let pc = self.shape(p).1;
                    if needs(p) {
                        let dp = acc(grads, nodes, p);
                        for r in 0..node.rows {
                            add_into(&mut dp[r * pc..(r + 1) * pc], &g[r * cols + col0..r * cols + col0 + pc]);
                        }
                    }
                    col0 += pc;
                }
            }
            Op::Gather(a, index) => {
                if needs(*a) {
                    let c = node.cols;
                    let da = acc(grads, nodes, *a);
                    for (row, &i) in g.chunks(c.max(1)).zip(index) {
                        add_into(&mut da[i * c..(i + 1) * c], row);
                    }
                }
            }
            Op::GatherSum(parts) => {
                let c = node.cols;
                for (v, index) in parts {
                    if needs(*v) {
                        let dv = acc(grads, nodes, *v);
                        for (row, &i) in g.chunks(c.max(1)).zip(index) {
                            add_into(&mut dv[i * c..(i + 1) * c], row);
                        }
                    }
                }
            }
            Op::SegmentMean(table, segments) => {
                if needs(*table) {
                    let c = node.cols;
                    let dt = acc(grads, nodes, *table);
                    for (seg, row) in segments.iter().zip(g.chunks(c.max(1))) {
                        if seg.is_empty() {
                            continue;
                        }
                        let inv = T::one() / T::of(seg.len() as f64);
                        for &i in seg {
                            for (x, &y) in dt[i * c..(i + 1) * c].iter_mut().zip(row) {
                                *x += y * inv;
                            }
                        }
                    }
                }
            }
            &Op::Exp(a) => {
                if needs(a) {
                    let ov = match &node.value {
                        Value::Owned(d) => d,
                        Value::Param { .. } => unreachable!(),
                    };
                    let da = acc(grads, nodes, a);
                    for ((x, &y), &o) in da.iter_mut().zip(&g).zip(ov) {
                        *x += y * o;
                    }
                }
            }
            &Op::Log(a) => {
                if needs(a) {
                    let av = self.value(a);
                    let da = acc(grads, nodes, a);
                    for ((x, &y), &v) in da.iter_mut().zip(&g).zip(av) {
                        *x += y / v;
                    }
                }
            }
            &Op::Sigmoid(a) => {
                if needs(a) {
                    let av = self.value(a);
                    let da = acc(grads, nodes, a);
                    for ((x, &y), &v) in da.iter_mut().zip(&g).zip(av) {
                        let s = super::sigmoid(v);
                        *x += y * s * (T::one() - s);
                    }
                }
            }
            &Op::Sum(a) => {
                if needs(a) {
                    let da = acc(grads, nodes, a);
                    da.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            &Op::Mean(a) => {
                if needs(a) {
                    let da = acc(grads, nodes, a);
                    let share = g[0] / T::of(da.len() as f64);
                    da.iter_mut().for_each(|x| *x += share);
                }
            }
            &Op::LogSumExp(a) => {
                if needs(a) {
                    let av = self.value(a);
                    let lse = super::logsumexp(av);
                    let da = acc(grads, nodes, a);
                    for (x, &v) in da.iter_mut().zip(av) {
                        *x += g[0] * (v - lse).exp();
                    }
                }
            }
            &Op::DivClamped { x, tau, eps } => {
                let t = self.scalar(tau);
                let d = t.max(eps);
                if needs(x) {
                    let dx = acc(grads, nodes, x);
                    for (a, &y) in dx.iter_mut().zip(&g) {
                        *a += y / d;
                    }
                }
                if needs(tau) && t > eps {
                    let xv = self.value(x);
                    let s = g.iter().zip(xv).fold(T::zero(), |acc, (&y, &v)| acc + y * v);
                    acc(grads, nodes, tau)[0] -= s / (t * t);
                }
            }
            Op::PlackettLuce { scores, segments } => {
                if needs(*scores) {
                    let sv = self.value(*scores);
                    let w = g[0] / T::of(segments.len() as f64);
                    let mut local = vec![T::zero(); sv.len()];
                    for seg in segments {
                        for (j, d) in objectives::plackett_luce_grad(&sv[seg.clone()]).into_iter().enumerate() {
                            local[seg.start + j] += w * d;
                        }
                    }
                    add_into(acc(grads, nodes, *scores), &local);
                }
            }
            Op::Bpr { scores, pairs } => {
                if needs(*scores) {
                    let sv = self.value(*scores);
                    let w = g[0] / T::of(pairs.len() as f64);
                    let mut local = vec![T::zero(); sv.len()];
                    for &(a, b) in pairs {
                        let d = objectives::bpr_grad(sv[a], sv[b]) * w;
                        local[a] += d;
                        local[b] -= d;
                    }
                    add_into(acc(grads, nodes, *scores), &local);
                }
            }
            Op::Mse { pred, target } => {
                if needs(*pred) {
                    let pv = self.value(*pred);
                    let w = g[0] * T::of(2.0) / T::of(pv.len() as f64);
                    let local: Vec<T> = pv.iter().zip(target).map(|(&p, &t)| w * (p - t)).collect();
                    add_into(acc(grads, nodes, *pred), &local);
                }
            }
            Op::LinComb(terms) => {
                for &(v, w) in terms {
                    if needs(v) {
                        acc(grads, nodes, v)[0] += w * g[0];
                    }
                }
            }
        }
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (x, &y) in dst.iter_mut().zip(src) {
        *x += y;
    }
}

/// Inverted-dropout mask: each entry is `1/(1−rate)` with probability
/// `1−rate`, else 0.
pub fn dropout_mask<T: Real, R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - rate));
    (0..len).map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store_with(values: &[(&str, usize, usize, Vec<f64>)]) -> (ParamStore<f64>, Vec<ParamId>) {
        let mut s = ParamStore::new();
        let ids = values.iter().map(|(n, r, c, d)| s.add(*n, *r, *c, d.clone())).collect();
        (s, ids)
    }

    #[test]
    fn relu_forward() {
        let s = ParamStore::<f64>::new();
        let mut t = Tape::new(&s);
        let x = t.constant(1, 3, vec![-1.0, 0.0, 2.0]).unwrap();
        let y = t.relu(x).unwrap();
        assert_eq!(t.value(y), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn logsumexp_no_overflow() {
        let s = ParamStore::<f64>::new();
        let mut t = Tape::new(&s);
        let x = t.constant(1, 2, vec![1000.0, 1000.0]).unwrap();
        let y = t.logsumexp(x).unwrap();
        assert!((t.scalar(y) - (1000.0 + std::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = ParamStore::<f64>::new();
        let mut t = Tape::new(&s);
        let va = t.constant(2, 3, a.clone()).unwrap();
        let vb = t.constant(3, 2, b.clone()).unwrap();
        let c = t.matmul(va, vb).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut want = 0.0;
                for k in 0..3 {
                    want += a[i * 3 + k] * b[k * 2 + j];
                }
                assert!((t.value(c)[i * 2 + j] - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn matmul_shape_error() {
        let s = ParamStore::<f64>::new();
        let mut t = Tape::new(&s);
        let a = t.constant(2, 3, vec![0.0; 6]).unwrap();
        let b = t.constant(2, 2, vec![0.0; 4]).unwrap();
        assert!(matches!(t.matmul(a, b), Err(NumericsError::Shape { .. })));
    }

    #[test]
    fn sum_gradient_is_ones() {
        let (s, ids) = store_with(&[("x", 1, 3, vec![0.5, -2.0, 3.0])]);
        let mut t = Tape::new(&s);
        let x = t.param(ids[0]);
        let y = t.sum(x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(ids[0]).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn sigmoid_gradient_closed_form() {
        let x = 0.7;
        let (s, ids) = store_with(&[("w", 1, 1, vec![-0.3])]);
        let mut t = Tape::new(&s);
        let w = t.param(ids[0]);
        let z = t.scale(w, x).unwrap();
        let y = t.sigmoid(z).unwrap();
        let y = t.sum(y).unwrap();
        let g = t.backward(y).unwrap();
        let sz = crate::numerics::sigmoid(-0.3 * x);
        assert!((g.get(ids[0]).unwrap()[0] - sz * (1.0 - sz) * x).abs() < 1e-12);
    }

    #[test]
    fn unused_params_have_no_gradient() {
        let (s, ids) = store_with(&[("a", 1, 1, vec![1.0]), ("b", 1, 1, vec![2.0])]);
        let mut t = Tape::new(&s);
        let a = t.param(ids[0]);
        let y = t.sum(a).unwrap();
        let g = t.backward(y).unwrap();
        assert!(g.get(ids[1]).is_none());
        assert_eq!(g.dense(ids[1], 1), vec![0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let (s, ids) = store_with(&[("a", 1, 2, vec![1.0, 2.0])]);
        let mut t = Tape::new(&s);
        let a = t.param(ids[0]);
        assert!(matches!(t.backward(a), Err(NumericsError::Contract(_))));
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let s = ParamStore::<f64>::new();
        let mut t = Tape::new(&s);
        let x = t.constant(1, 1, vec![-1.0]).unwrap();
        assert!(matches!(t.log(x), Err(NumericsError::NonFinite { .. })));
    }

    #[test]
    fn dropout_only_in_training() {
        let s = ParamStore::<f64>::new();
        let mut t = Tape::new(&s);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = t.constant(1, 4, vec![1.0; 4]).unwrap();
        let y = t.dropout(x, 0.5, &mut rng, false).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let rate = 0.02;
        let mask: Vec<f64> = dropout_mask(n, rate, &mut rng);
        let mean = mask.iter().sum::<f64>() / n as f64;
        // Each entry is Bernoulli(1-rate)/(1-rate): variance rate/(1-rate).
        let sigma = (rate / (1.0 - rate) / n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * sigma, "mean {mean}");
    }
}
