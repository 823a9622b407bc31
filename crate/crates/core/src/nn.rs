//! Parameterized layers on top of the tape.

use ltx_tensor::{Bindings, ParamId, ParamStore, Real, Tape, Tensor, Var};
use rand::Rng;

use crate::error::Result;

pub(crate) fn uniform<T: Real>(rng: &mut impl Rng, shape: Vec<usize>, scale: f64) -> Tensor<T> {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| T::from_f64_lossy(rng.random_range(-scale..=scale)))
        .collect();
    Tensor::new(shape, v).expect("shape matches")
}

pub(crate) fn filled<T: Real>(shape: Vec<usize>, value: f64) -> Tensor<T> {
    let n = shape.iter().product();
    Tensor::new(shape, vec![T::from_f64_lossy(value); n]).expect("shape matches")
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let scale = 1.0 / (fan_in as f64).sqrt();
        let w = store.add(format!("{name}.w"), uniform(rng, vec![fan_in, fan_out], scale))?;
        let b = store.add(format!("{name}.b"), filled(vec![fan_out], 0.0))?;
        Ok(Linear {
            w,
            b,
            fan_in,
            fan_out,
        })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bindings, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p.var(self.w))?;
        Ok(tape.add(y, p.var(self.b))?)
    }
}

#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub dim: usize,
}

impl Embedding {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        vocab: usize,
        dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let table = store.add(name, uniform(rng, vec![vocab, dim], 0.1))?;
        Ok(Embedding { table, dim })
    }

    pub fn lookup<T: Real>(&self, tape: &mut Tape<T>, p: &Bindings, ids: &[usize]) -> Result<Var> {
        Ok(tape.gather_rows(p.var(self.table), ids)?)
    }
}

/// Single-layer LSTM. Gate layout along the `4H` axis is input, forget,
/// cell candidate, output. An optional conditioning matrix `wz` adds a
/// constant per-sequence input (the latent code) to every step.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub wx: ParamId,
    pub wh: ParamId,
    pub wz: Option<ParamId>,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl Lstm {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        cond: Option<usize>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let scale = 1.0 / (hidden as f64).sqrt();
        let g = 4 * hidden;
        let wx = store.add(format!("{name}.wx"), uniform(rng, vec![input, g], scale))?;
        let wh = store.add(format!("{name}.wh"), uniform(rng, vec![hidden, g], scale))?;
        let wz = match cond {
            Some(d) => Some(store.add(format!("{name}.wz"), uniform(rng, vec![d, g], scale))?),
            None => None,
        };
        // forget gate starts open
        let mut bias = vec![T::zero(); g];
        for v in &mut bias[hidden..2 * hidden] {
            *v = T::one();
        }
        let b = store.add(format!("{name}.b"), Tensor::new(vec![g], bias)?)?;
        Ok(Lstm {
            wx,
            wh,
            wz,
            b,
            input,
            hidden,
        })
    }

    /// Input projection `x·Wx + b` for all stacked time steps at once.
    pub fn project_inputs<T: Real>(&self, tape: &mut Tape<T>, p: &Bindings, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p.var(self.wx))?;
        Ok(tape.add(y, p.var(self.b))?)
    }

    pub fn zero_state<T: Real>(&self, tape: &mut Tape<T>, batch: usize) -> Result<LstmState> {
        let h = tape.constant(vec![batch, self.hidden], vec![T::zero(); batch * self.hidden])?;
        let c = tape.constant(vec![batch, self.hidden], vec![T::zero(); batch * self.hidden])?;
        Ok(LstmState { h, c })
    }

    /// One recurrence step from a pre-projected input `[B, 4H]`.
    /// `h_mask` is the per-sequence recurrent dropout mask, if any.
    pub fn step<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &Bindings,
        x_proj: Var,
        state: LstmState,
        h_mask: Option<Var>,
    ) -> Result<LstmState> {
        let h_in = match h_mask {
            Some(m) => tape.mul(state.h, m)?,
            None => state.h,
        };
        let rec = tape.matmul(h_in, p.var(self.wh))?;
        let pre = tape.add(x_proj, rec)?;
        let act = tape.lstm_gates(pre)?;
        let c = tape.lstm_cell(act, state.c)?;
        let h = tape.lstm_output(act, c)?;
        Ok(LstmState { h, c })
    }

    /// Unrolls over `steps` time-major blocks of `batch` rows of `x_proj`,
    /// adding `cond` (shape `[B, 4H]`) at every step when given. Returns
    /// the hidden state after each step.
    #[allow(clippy::too_many_arguments)]
    pub fn unroll<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &Bindings,
        x_proj: Var,
        steps: usize,
        batch: usize,
        init: Option<LstmState>,
        cond: Option<Var>,
        h_mask: Option<Var>,
    ) -> Result<Vec<Var>> {
        let mut state = match init {
            Some(s) => s,
            None => self.zero_state(tape, batch)?,
        };
        let mut hs = Vec::with_capacity(steps);
        for t in 0..steps {
            let mut xt = tape.slice(x_proj, 0, t * batch, batch)?;
            if let Some(cz) = cond {
                xt = tape.add(xt, cz)?;
            }
            state = self.step(tape, p, xt, state, h_mask)?;
            hs.push(state.h);
        }
        Ok(hs)
    }
}
