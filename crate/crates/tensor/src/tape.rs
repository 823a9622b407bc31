use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::{numel, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the right operand of a binary op maps onto the left one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    Row,
    Col,
    Scalar,
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Scale(Var, T),
    Shift(Var),
    Tanh(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Exp(Var),
    Log(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Sum(Var),
    Mean(Var),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, usize),
    L2NormRows(Var),
    NormalizeRows(Var),
    GatherRows(Var, Vec<usize>),
    Nll(Var, Vec<usize>, Vec<T>),
    LstmGates(Var),
    LstmCell(Var, Var),
    LstmOutput(Var, Var),
}

#[derive(Debug)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    needs_grad: bool,
    op: Op<T>,
}

/// Gradients produced by [`Tape::backward`], indexed by the `Var`s of the
/// cleared tape.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// Records operations in execution order so gradients can be replayed in
/// exact reverse order.
///
/// Every node stores its value. Backward rules are recorded only for nodes
/// with at least one input that needs a gradient; all other nodes behave as
/// constants.
#[derive(Debug, Default)]
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

/// Views any shape as a row-major matrix: `[]` → 1×1, `[n]` → 1×n, higher
/// ranks fold the leading axes into rows.
fn dims2(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (1, shape[0]),
        _ => (numel(&shape[..shape.len() - 1]), shape[shape.len() - 1]),
    }
}

fn bcast_kind(a: &[usize], b: &[usize]) -> Option<Bcast> {
    if a == b {
        return Some(Bcast::Same);
    }
    if numel(b) == 1 {
        return Some(Bcast::Scalar);
    }
    let (r, c) = dims2(a);
    let (br, bc) = dims2(b);
    if br == 1 && bc == c {
        Some(Bcast::Row)
    } else if br == r && bc == 1 {
        Some(Bcast::Col)
    } else {
        None
    }
}

/// Calls `f(k, kb)` for every flat index `k` of an `r×c` operand, with `kb`
/// the matching index into the broadcast operand.
#[inline(always)]
fn zip_bcast(kind: Bcast, r: usize, c: usize, mut f: impl FnMut(usize, usize)) {
    match kind {
        Bcast::Same => (0..r * c).for_each(|k| f(k, k)),
        Bcast::Scalar => (0..r * c).for_each(|k| f(k, 0)),
        Bcast::Row => {
            for i in 0..r {
                (0..c).for_each(|j| f(i * c + j, j));
            }
        }
        Bcast::Col => {
            for i in 0..r {
                (0..c).for_each(|j| f(i * c + j, i));
            }
        }
    }
}

fn check_finite<T: Real>(op: &'static str, v: &[T]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

fn accumulate<T: Real>(slot: &mut Option<Vec<T>>, len: usize) -> &mut Vec<T> {
    slot.get_or_insert_with(|| vec![T::zero(); len])
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    /// Drops every node recorded after the first `len`, invalidating their `Var`s.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, inputs: &[Var]) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        let op = if needs_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            shape,
            value,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Copies a tensor onto the tape. The node needs a gradient iff the
    /// tensor requires one.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: t.values().to_vec(),
            needs_grad: t.requires_grad(),
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Like [`Tape::leaf`] but always a constant, whatever the tensor says.
    pub fn frozen(&mut self, t: &Tensor<T>) -> Var {
        self.constant(t.shape().to_vec(), t.values().to_vec())
            .expect("tensor invariants hold")
    }

    pub fn constant(&mut self, shape: Vec<usize>, value: Vec<T>) -> Result<Var> {
        self.input(shape, value, false)
    }

    /// A leaf that participates in differentiation.
    pub fn variable(&mut self, shape: Vec<usize>, value: Vec<T>) -> Result<Var> {
        self.input(shape, value, true)
    }

    fn input(&mut self, shape: Vec<usize>, value: Vec<T>, needs_grad: bool) -> Result<Var> {
        if numel(&shape) != value.len() {
            return Err(TensorError::Dimension {
                op: "leaf",
                shapes: vec![shape, vec![value.len()]],
            });
        }
        self.nodes.push(Node {
            shape,
            value,
            needs_grad,
            op: Op::Leaf,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dim_err(&self, op: &'static str, vars: &[Var]) -> TensorError {
        TensorError::Dimension {
            op,
            shapes: vars.iter().map(|v| self.nodes[v.0].shape.clone()).collect(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(self.dim_err("matmul", &[a, b]));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.value(a), false, self.value(b), false, &mut out, false);
        check_finite("matmul", &out)?;
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), &[a, b]))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<(Vec<T>, Bcast)> {
        let kind = bcast_kind(self.shape(a), self.shape(b))
            .ok_or_else(|| self.dim_err(name, &[a, b]))?;
        let (r, c) = dims2(self.shape(a));
        let (av, bv) = (self.value(a), self.value(b));
        let out: Vec<T> = if kind == Bcast::Same {
            av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let mut out = av.to_vec();
            zip_bcast(kind, r, c, |k, kb| out[k] = f(out[k], bv[kb]));
            out
        };
        check_finite(name, &out)?;
        Ok((out, kind))
    }

    /// Elementwise `a + b`; `b` may also be a row vector, a column vector or
    /// a scalar broadcast over `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, k) = self.binary("add", a, b, |x, y| x + y)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::Add(a, b, k), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, k) = self.binary("sub", a, b, |x, y| x - y)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::Sub(a, b, k), &[a, b]))
    }

    /// Elementwise product with the same broadcasting rules as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, k) = self.binary("mul", a, b, |x, y| x * y)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::Mul(a, b, k), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let out: Vec<T> = self.value(a).iter().map(|&x| x * c).collect();
        check_finite("scale", &out)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::Scale(a, c), &[a]))
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Result<Var> {
        let out: Vec<T> = self.value(a).iter().map(|&x| x + c).collect();
        check_finite("add_scalar", &out)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::Shift(a), &[a]))
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let out: Vec<T> = self.value(a).iter().map(|&x| f(x)).collect();
        check_finite(name, &out)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, op, &[a]))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    /// `log σ(x)`, evaluated without forming `σ(x)`.
    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(
            "log_sigmoid",
            a,
            |x| x.min(T::zero()) - (-x.abs()).exp().ln_1p(),
            Op::LogSigmoid(a),
        )
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, |x| x.exp(), Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary("log", a, |x| x.ln(), Op::Log(a))
    }

    fn row_softmax(&self, a: Var, log: bool) -> Vec<T> {
        let (r, c) = dims2(self.shape(a));
        let x = self.value(a);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let o = &mut out[i * c..(i + 1) * c];
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut z = T::zero();
            for (oj, &xj) in o.iter_mut().zip(row) {
                *oj = (xj - max).exp();
                z += *oj;
            }
            if log {
                let lz = z.ln();
                for (oj, &xj) in o.iter_mut().zip(row) {
                    *oj = (xj - max) - lz;
                }
            } else {
                for oj in o.iter_mut() {
                    *oj /= z;
                }
            }
        }
        out
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let out = self.row_softmax(a, false);
        check_finite("softmax_rows", &out)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::SoftmaxRows(a), &[a]))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let out = self.row_softmax(a, true);
        check_finite("log_softmax_rows", &out)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::LogSoftmaxRows(a), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: T = self.value(a).iter().copied().sum();
        check_finite("sum", &[s])?;
        Ok(self.push(vec![1], vec![s], Op::Sum(a), &[a]))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = T::from_usize(self.value(a).len()).unwrap();
        let s: T = self.value(a).iter().copied().sum::<T>() / n;
        check_finite("mean", &[s])?;
        Ok(self.push(vec![1], vec![s], Op::Mean(a), &[a]))
    }

    /// Concatenates 2-D tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() || axis > 1 || parts.iter().any(|&p| self.shape(p).len() != 2) {
            return Err(self.dim_err("concat", parts));
        }
        let (r0, c0) = (self.shape(parts[0])[0], self.shape(parts[0])[1]);
        let shape = if axis == 0 {
            if parts.iter().any(|&p| self.shape(p)[1] != c0) {
                return Err(self.dim_err("concat", parts));
            }
            vec![parts.iter().map(|&p| self.shape(p)[0]).sum(), c0]
        } else {
            if parts.iter().any(|&p| self.shape(p)[0] != r0) {
                return Err(self.dim_err("concat", parts));
            }
            vec![r0, parts.iter().map(|&p| self.shape(p)[1]).sum()]
        };
        let mut out = Vec::with_capacity(numel(&shape));
        if axis == 0 {
            for &p in parts {
                out.extend_from_slice(self.value(p));
            }
        } else {
            for i in 0..r0 {
                for &p in parts {
                    let c = self.shape(p)[1];
                    out.extend_from_slice(&self.value(p)[i * c..(i + 1) * c]);
                }
            }
        }
        Ok(self.push(shape, out, Op::Concat(parts.to_vec(), axis), parts))
    }

    /// Takes `len` rows (axis 0) or columns (axis 1) of a 2-D tensor starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 || axis > 1 || len == 0 || start + len > s[axis] {
            return Err(self.dim_err("slice", &[a]));
        }
        let (r, c) = (s[0], s[1]);
        let (shape, out) = if axis == 0 {
            (vec![len, c], self.value(a)[start * c..(start + len) * c].to_vec())
        } else {
            let v = self.value(a);
            let mut out = Vec::with_capacity(r * len);
            for i in 0..r {
                out.extend_from_slice(&v[i * c + start..i * c + start + len]);
            }
            (vec![r, len], out)
        };
        Ok(self.push(shape, out, Op::Slice(a, axis, start), &[a]))
    }

    /// Euclidean norm of every row, as an `[rows, 1]` column.
    pub fn l2_norm_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = dims2(self.shape(a));
        let v = self.value(a);
        let out: Vec<T> = (0..r)
            .map(|i| v[i * c..(i + 1) * c].iter().map(|&x| x * x).sum::<T>().sqrt())
            .collect();
        check_finite("l2_norm_rows", &out)?;
        Ok(self.push(vec![r, 1], out, Op::L2NormRows(a), &[a]))
    }

    /// Scales every row to unit Euclidean norm. A zero row is a numeric error.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = dims2(self.shape(a));
        let v = self.value(a);
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = &v[i * c..(i + 1) * c];
            let n = row.iter().map(|&x| x * x).sum::<T>().sqrt();
            out.extend(row.iter().map(|&x| x / n));
        }
        check_finite("normalize_rows", &out)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::NormalizeRows(a), &[a]))
    }

    fn lstm_operands(&self, op: &'static str, act: Var, c: Var) -> Result<(usize, usize)> {
        let ps = &self.nodes[act.0].shape;
        let cs = &self.nodes[c.0].shape;
        if ps.len() != 2 || cs.len() != 2 || ps[0] != cs[0] || ps[1] != 4 * cs[1] {
            return Err(self.dim_err(op, &[act, c]));
        }
        Ok((cs[0], cs[1]))
    }

    /// LSTM gate activations from pre-activations `[B, 4H]` laid out as
    /// input, forget, candidate, output: sigmoid on the three gates, tanh on
    /// the candidate.
    pub fn lstm_gates(&mut self, pre: Var) -> Result<Var> {
        let shape = self.shape(pre).to_vec();
        if shape.len() != 2 || !shape[1].is_multiple_of(4) {
            return Err(self.dim_err("lstm_gates", &[pre]));
        }
        let h = shape[1] / 4;
        let mut out = self.value(pre).to_vec();
        for row in out.chunks_mut(4 * h) {
            for (j, x) in row.iter_mut().enumerate() {
                *x = if j / h == 2 { x.tanh() } else { sigmoid(*x) };
            }
        }
        check_finite("lstm_gates", &out)?;
        Ok(self.push(shape, out, Op::LstmGates(pre), &[pre]))
    }

    /// Cell-state update `f⊙c_prev + i⊙g` from gate activations.
    pub fn lstm_cell(&mut self, act: Var, c_prev: Var) -> Result<Var> {
        let (b, h) = self.lstm_operands("lstm_cell", act, c_prev)?;
        let av = &self.nodes[act.0].value;
        let cv = &self.nodes[c_prev.0].value;
        let mut out = Vec::with_capacity(b * h);
        for r in 0..b {
            let row = &av[r * 4 * h..(r + 1) * 4 * h];
            for j in 0..h {
                out.push(row[h + j] * cv[r * h + j] + row[j] * row[2 * h + j]);
            }
        }
        check_finite("lstm_cell", &out)?;
        Ok(self.push(vec![b, h], out, Op::LstmCell(act, c_prev), &[act, c_prev]))
    }

    /// Hidden output `o⊙tanh(c)` from gate activations.
    pub fn lstm_output(&mut self, act: Var, c: Var) -> Result<Var> {
        let (b, h) = self.lstm_operands("lstm_output", act, c)?;
        let av = &self.nodes[act.0].value;
        let cv = &self.nodes[c.0].value;
        let mut out = Vec::with_capacity(b * h);
        for r in 0..b {
            for j in 0..h {
                out.push(av[r * 4 * h + 3 * h + j] * cv[r * h + j].tanh());
            }
        }
        Ok(self.push(vec![b, h], out, Op::LstmOutput(act, c), &[act, c]))
    }

    /// Row lookup into a `[n, e]` table (an embedding layer).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table);
        if s.len() != 2 || ids.is_empty() || ids.iter().any(|&i| i >= s[0]) {
            return Err(self.dim_err("gather_rows", &[table]));
        }
        let e = s[1];
        let v = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * e);
        for &i in ids {
            out.extend_from_slice(&v[i * e..(i + 1) * e]);
        }
        Ok(self.push(
            vec![ids.len(), e],
            out,
            Op::GatherRows(table, ids.to_vec()),
            &[table],
        ))
    }

    /// Weighted negative log-likelihood `-Σᵢ wᵢ · logp[i, targets[i]]`.
    ///
    /// `logp` is expected to hold row-wise log-probabilities, typically the
    /// output of [`Tape::log_softmax_rows`].
    pub fn nll(&mut self, logp: Var, targets: &[usize], weights: &[T]) -> Result<Var> {
        let (r, c) = dims2(self.shape(logp));
        if targets.len() != r || weights.len() != r || targets.iter().any(|&t| t >= c) {
            return Err(self.dim_err("nll", &[logp]));
        }
        let v = self.value(logp);
        let mut s = T::zero();
        for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
            if w != T::zero() {
                s -= w * v[i * c + t];
            }
        }
        check_finite("nll", &[s])?;
        Ok(self.push(
            vec![1],
            vec![s],
            Op::Nll(logp, targets.to_vec(), weights.to_vec()),
            &[logp],
        ))
    }

    /// Replays the tape in reverse from a scalar `loss`, then clears it.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![T::one()]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if node.needs_grad {
                self.propagate(id, &g, &mut grads)?;
                if matches!(node.op, Op::Leaf) {
                    grads[id] = Some(g);
                }
            }
        }
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !n.needs_grad {
                *g = None;
            }
        }
        for g in grads.iter().flatten() {
            check_finite("backward", g)?;
        }
        self.nodes.clear();
        Ok(Gradients { grads })
    }

    fn propagate(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let nodes = &self.nodes;
        let node = &nodes[id];
        let wants = |v: &Var| nodes[v.0].needs_grad;
        let len = |v: &Var| nodes[v.0].value.len();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                let n = nodes[b.0].shape[1];
                if wants(a) {
                    let ga = accumulate(&mut grads[a.0], m * k);
                    T::gemm(m, n, k, g, false, &nodes[b.0].value, true, ga, true);
                }
                if wants(b) {
                    let gb = accumulate(&mut grads[b.0], k * n);
                    T::gemm(k, m, n, &nodes[a.0].value, true, g, false, gb, true);
                }
            }
            Op::Add(a, b, kind) | Op::Sub(a, b, kind) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -T::one()
                } else {
                    T::one()
                };
                if wants(a) {
                    let ga = accumulate(&mut grads[a.0], g.len());
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
                if wants(b) {
                    let (r, c) = dims2(&node.shape);
                    let gb = accumulate(&mut grads[b.0], len(b));
                    zip_bcast(*kind, r, c, |k, kb| gb[kb] += sign * g[k]);
                }
            }
            Op::Mul(a, b, kind) => {
                let (r, c) = dims2(&node.shape);
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                if wants(a) {
                    let ga = accumulate(&mut grads[a.0], len(a));
                    zip_bcast(*kind, r, c, |k, kb| ga[k] += g[k] * bv[kb]);
                }
                if wants(b) {
                    let gb = accumulate(&mut grads[b.0], len(b));
                    zip_bcast(*kind, r, c, |k, kb| gb[kb] += g[k] * av[k]);
                }
            }
            Op::Scale(a, c) => {
                let ga = accumulate(&mut grads[a.0], g.len());
                ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y * *c);
            }
            Op::Shift(a) => {
                let ga = accumulate(&mut grads[a.0], g.len());
                ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
            }
            Op::Tanh(a) => {
                let ga = accumulate(&mut grads[a.0], g.len());
                for ((x, &gy), &y) in ga.iter_mut().zip(g).zip(&node.value) {
                    *x += gy * (T::one() - y * y);
                }
            }
            Op::Sigmoid(a) => {
                let ga = accumulate(&mut grads[a.0], g.len());
                for ((x, &gy), &y) in ga.iter_mut().zip(g).zip(&node.value) {
                    *x += gy * y * (T::one() - y);
                }
            }
            Op::LogSigmoid(a) => {
                let ga = accumulate(&mut grads[a.0], g.len());
                for ((x, &gy), &xi) in ga.iter_mut().zip(g).zip(&nodes[a.0].value) {
                    *x += gy * sigmoid(-xi);
                }
            }
            Op::Exp(a) => {
                let ga = accumulate(&mut grads[a.0], g.len());
                for ((x, &gy), &y) in ga.iter_mut().zip(g).zip(&node.value) {
                    *x += gy * y;
                }
            }
            Op::Log(a) => {
                let ga = accumulate(&mut grads[a.0], g.len());
                for ((x, &gy), &xi) in ga.iter_mut().zip(g).zip(&nodes[a.0].value) {
                    *x += gy / xi;
                }
            }
            Op::SoftmaxRows(a) => {
                let (r, c) = dims2(&node.shape);
                let ga = accumulate(&mut grads[a.0], g.len());
                for i in 0..r {
                    let y = &node.value[i * c..(i + 1) * c];
                    let gy = &g[i * c..(i + 1) * c];
                    let dot: T = y.iter().zip(gy).map(|(&p, &q)| p * q).sum();
                    for j in 0..c {
                        ga[i * c + j] += y[j] * (gy[j] - dot);
                    }
                }
            }
            Op::LogSoftmaxRows(a) => {
                let (r, c) = dims2(&node.shape);
                let ga = accumulate(&mut grads[a.0], g.len());
                for i in 0..r {
                    let y = &node.value[i * c..(i + 1) * c];
                    let gy = &g[i * c..(i + 1) * c];
                    let total: T = gy.iter().copied().sum();
                    for j in 0..c {
                        ga[i * c + j] += gy[j] - y[j].exp() * total;
                    }
                }
            }
            Op::Sum(a) => {
                let ga = accumulate(&mut grads[a.0], len(a));
                ga.iter_mut().for_each(|x| *x += g[0]);
            }
            Op::Mean(a) => {
                let n = len(a);
                let share = g[0] / T::from_usize(n).unwrap();
                let ga = accumulate(&mut grads[a.0], n);
                ga.iter_mut().for_each(|x| *x += share);
            }
            Op::Concat(parts, axis) => {
                let total_cols = node.shape[1];
                let mut offset = 0;
                for p in parts {
                    let (pr, pc) = (nodes[p.0].shape[0], nodes[p.0].shape[1]);
                    if wants(p) {
                        let gp = accumulate(&mut grads[p.0], pr * pc);
                        if *axis == 0 {
                            let src = &g[offset * pc..(offset + pr) * pc];
                            gp.iter_mut().zip(src).for_each(|(x, &y)| *x += y);
                        } else {
                            for i in 0..pr {
                                let src = &g[i * total_cols + offset..i * total_cols + offset + pc];
                                gp[i * pc..(i + 1) * pc]
                                    .iter_mut()
                                    .zip(src)
                                    .for_each(|(x, &y)| *x += y);
                            }
                        }
                    }
                    offset += if *axis == 0 { pr } else { pc };
                }
            }
            Op::Slice(a, axis, start) => {
                let (ar, ac) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                let ga = accumulate(&mut grads[a.0], ar * ac);
                if *axis == 0 {
                    ga[start * ac..start * ac + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(x, &y)| *x += y);
                } else {
                    let w = node.shape[1];
                    for i in 0..ar {
                        ga[i * ac + start..i * ac + start + w]
                            .iter_mut()
                            .zip(&g[i * w..(i + 1) * w])
                            .for_each(|(x, &y)| *x += y);
                    }
                }
            }
            Op::L2NormRows(a) => {
                let (r, c) = dims2(&nodes[a.0].shape);
                let x = &nodes[a.0].value;
                let ga = accumulate(&mut grads[a.0], r * c);
                for i in 0..r {
                    let n = node.value[i];
                    for j in 0..c {
                        ga[i * c + j] += g[i] * x[i * c + j] / n;
                    }
                }
            }
            Op::NormalizeRows(a) => {
                let (r, c) = dims2(&node.shape);
                let x = &nodes[a.0].value;
                let ga = accumulate(&mut grads[a.0], r * c);
                for i in 0..r {
                    let row = &x[i * c..(i + 1) * c];
                    let n = row.iter().map(|&v| v * v).sum::<T>().sqrt();
                    let y = &node.value[i * c..(i + 1) * c];
                    let gy = &g[i * c..(i + 1) * c];
                    let dot: T = y.iter().zip(gy).map(|(&p, &q)| p * q).sum();
                    for j in 0..c {
                        ga[i * c + j] += (gy[j] - y[j] * dot) / n;
                    }
                }
            }
            Op::LstmGates(pre) => {
                let h = node.shape[1] / 4;
                let gp = accumulate(&mut grads[pre.0], g.len());
                for (k, ((x, &gy), &y)) in gp.iter_mut().zip(g).zip(&node.value).enumerate() {
                    let d = if (k % (4 * h)) / h == 2 { T::one() - y * y } else { y * (T::one() - y) };
                    *x += gy * d;
                }
            }
            Op::LstmCell(act, c_prev) => {
                let (b, h) = (node.shape[0], node.shape[1]);
                let av = &nodes[act.0].value;
                let cv = &nodes[c_prev.0].value;
                if wants(act) {
                    let ga = accumulate(&mut grads[act.0], 4 * b * h);
                    for r in 0..b {
                        let base = r * 4 * h;
                        for j in 0..h {
                            let gc = g[r * h + j];
                            ga[base + j] += gc * av[base + 2 * h + j];
                            ga[base + h + j] += gc * cv[r * h + j];
                            ga[base + 2 * h + j] += gc * av[base + j];
                        }
                    }
                }
                if wants(c_prev) {
                    let gc_prev = accumulate(&mut grads[c_prev.0], b * h);
                    for r in 0..b {
                        for j in 0..h {
                            gc_prev[r * h + j] += g[r * h + j] * av[r * 4 * h + h + j];
                        }
                    }
                }
            }
            Op::LstmOutput(act, c) => {
                let (b, h) = (node.shape[0], node.shape[1]);
                let av = &nodes[act.0].value;
                let cv = &nodes[c.0].value;
                let want_a = wants(act);
                let want_c = wants(c);
                let mut tc = Vec::with_capacity(b * h);
                tc.extend(cv.iter().map(|x| x.tanh()));
                if want_a {
                    let ga = accumulate(&mut grads[act.0], 4 * b * h);
                    for r in 0..b {
                        for j in 0..h {
                            ga[r * 4 * h + 3 * h + j] += g[r * h + j] * tc[r * h + j];
                        }
                    }
                }
                if want_c {
                    let gcv = accumulate(&mut grads[c.0], b * h);
                    for r in 0..b {
                        for j in 0..h {
                            let t = tc[r * h + j];
                            gcv[r * h + j] += g[r * h + j] * av[r * 4 * h + 3 * h + j] * (T::one() - t * t);
                        }
                    }
                }
            }
            Op::GatherRows(table, ids) => {
                let e = nodes[table.0].shape[1];
                let gt = accumulate(&mut grads[table.0], len(table));
                for (k, &i) in ids.iter().enumerate() {
                    gt[i * e..(i + 1) * e]
                        .iter_mut()
                        .zip(&g[k * e..(k + 1) * e])
                        .for_each(|(x, &y)| *x += y);
                }
            }
            Op::Nll(logp, targets, weights) => {
                let (_, c) = dims2(&nodes[logp.0].shape);
                let gl = accumulate(&mut grads[logp.0], len(logp));
                for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                    gl[i * c + t] -= w * g[0];
                }
            }
        }
        Ok(())
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
