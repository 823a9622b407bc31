//! Central finite-difference gradient checking for `f64` parameter sets.

use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// `|a − n| / max(|a|, |n|, floor)`. The floor keeps gradients that are
/// zero up to roundoff from reporting huge relative errors.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Worst relative error between analytic gradients and central
/// differences `(L(θ+h) − L(θ−h)) / 2h`, over every element of every
/// listed parameter.
///
/// `store` borrows the parameters out of `state` for perturbation and
/// `loss` evaluates the objective on the perturbed state; each element is
/// restored afterwards.
pub fn max_relative_error<S>(
    state: &mut S,
    analytic: &[(ParamId, Vec<f64>)],
    h: f64,
    floor: f64,
    store: impl Fn(&mut S) -> &mut ParamStore<f64>,
    loss: impl Fn(&S) -> f64,
) -> f64 {
    let mut worst = 0.0f64;
    for (id, grad) in analytic {
        for (i, &a) in grad.iter().enumerate() {
            let orig = store(state).get(*id).values()[i];
            store(state).get_mut(*id).values_mut()[i] = orig + h;
            let plus = loss(state);
            store(state).get_mut(*id).values_mut()[i] = orig - h;
            let minus = loss(state);
            store(state).get_mut(*id).values_mut()[i] = orig;
            worst = worst.max(relative_error(a, (plus - minus) / (2.0 * h), floor));
        }
    }
    worst
}

/// A differentiable graph over leaf inputs, reduced to a scalar.
pub type Graph = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

/// One named finite-difference test case.
pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor<f64>>,
    pub graph: Graph,
}

fn evaluate(inputs: &[Tensor<f64>], graph: &Graph) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = graph(&mut tape, &vars)?;
    Ok(tape.scalar(out))
}

/// Worst relative error between the tape's gradient of `graph` and central
/// differences, over every element of every input.
pub fn graph_error(inputs: &[Tensor<f64>], graph: &Graph, h: f64, floor: f64) -> Result<f64> {
    let inputs: Vec<Tensor<f64>> = inputs.iter().cloned().map(Tensor::with_grad).collect();
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = graph(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let mut worst = 0.0f64;
    let mut probe = inputs.clone();
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).map(<[f64]>::to_vec).unwrap_or(vec![0.0; input.numel()]);
        for (i, &a) in analytic.iter().enumerate() {
            let orig = input.values()[i];
            probe[k].values_mut()[i] = orig + h;
            let plus = evaluate(&probe, graph)?;
            probe[k].values_mut()[i] = orig - h;
            let minus = evaluate(&probe, graph)?;
            probe[k].values_mut()[i] = orig;
            worst = worst.max(relative_error(a, (plus - minus) / (2.0 * h), floor));
        }
    }
    Ok(worst)
}

/// Reproducible values in `[lo, hi)` from a SplitMix64 stream.
fn fill(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut state = seed;
    let values = (0..shape.iter().product::<usize>())
        .map(|_| {
            state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
            z ^= z >> 31;
            lo + (hi - lo) * (z >> 11) as f64 / (1u64 << 53) as f64
        })
        .collect();
    Tensor::new(shape.to_vec(), values).expect("shape matches value count")
}

/// Weighted sum with fixed uneven weights so every output element matters.
pub fn project(tape: &mut Tape<f64>, y: Var) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|i| ((i * 7919 % 13) as f64 - 6.0) / 5.0).collect();
    let w = tape.constant(shape, w)?;
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

fn case(
    name: &'static str,
    inputs: Vec<Tensor<f64>>,
    graph: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'static,
) -> OpCase {
    OpCase {
        name,
        inputs,
        graph: Box::new(graph),
    }
}

fn unary(name: &'static str, x: Tensor<f64>, op: fn(&mut Tape<f64>, Var) -> Result<Var>) -> OpCase {
    case(name, vec![x], move |t, v| {
        let y = op(t, v[0])?;
        project(t, y)
    })
}

/// One case per differentiable op, plus a few compositions.
pub fn op_cases() -> Vec<OpCase> {
    vec![
        case("matmul", vec![fill(&[3, 4], -1.0, 1.0, 1), fill(&[4, 2], -1.0, 1.0, 2)], |t, v| {
            let y = t.matmul(v[0], v[1])?;
            project(t, y)
        }),
        case(
            "add/sub/mul with broadcasting",
            vec![
                fill(&[3, 4], -1.0, 1.0, 3),
                fill(&[3, 4], -1.0, 1.0, 4),
                fill(&[4], -1.0, 1.0, 5),
                fill(&[3, 1], -1.0, 1.0, 6),
                fill(&[1], -1.0, 1.0, 7),
            ],
            |t, v| {
                let y = t.add(v[0], v[1])?;
                let y = t.mul(y, v[2])?;
                let y = t.sub(y, v[3])?;
                let y = t.mul(y, v[4])?;
                let y = t.add(y, v[2])?;
                let y = t.sub(y, v[4])?;
                let y = t.mul(y, v[3])?;
                project(t, y)
            },
        ),
        case("scale and add_scalar", vec![fill(&[2, 3], -1.0, 1.0, 8)], |t, v| {
            let y = t.scale(v[0], -2.5)?;
            let y = t.add_scalar(y, 0.3)?;
            project(t, y)
        }),
        unary("tanh", fill(&[3, 3], -2.0, 2.0, 9), |t, x| t.tanh(x)),
        unary("sigmoid", fill(&[3, 3], -2.0, 2.0, 10), |t, x| t.sigmoid(x)),
        unary("log_sigmoid", fill(&[3, 3], -2.0, 2.0, 11), |t, x| t.log_sigmoid(x)),
        unary("exp", fill(&[3, 3], -2.0, 2.0, 12), |t, x| t.exp(x)),
        unary("log", fill(&[2, 3], 0.5, 3.0, 13), |t, x| t.log(x)),
        unary("softmax_rows", fill(&[3, 5], -2.0, 2.0, 14), |t, x| t.softmax_rows(x)),
        unary("log_softmax_rows", fill(&[3, 5], -2.0, 2.0, 15), |t, x| t.log_softmax_rows(x)),
        unary("l2_norm_rows", fill(&[3, 4], -1.0, 1.0, 16), |t, x| t.l2_norm_rows(x)),
        unary("normalize_rows", fill(&[3, 4], -1.0, 1.0, 17), |t, x| t.normalize_rows(x)),
        case("sum and mean", vec![fill(&[2, 5], -1.0, 1.0, 18)], |t, v| {
            let sq = t.mul(v[0], v[0])?;
            let m = t.mean(sq)?;
            let s = t.sum(v[0])?;
            let p = t.mul(m, s)?;
            t.sum(p)
        }),
        case(
            "concat and slice",
            vec![fill(&[2, 3], -1.0, 1.0, 19), fill(&[2, 2], -1.0, 1.0, 20), fill(&[1, 5], -1.0, 1.0, 21)],
            |t, v| {
                let cols = t.concat(&[v[0], v[1]], 1)?;
                let rows = t.concat(&[cols, v[2]], 0)?;
                let s0 = t.slice(rows, 0, 1, 2)?;
                let s1 = t.slice(rows, 1, 2, 3)?;
                let s1 = t.tanh(s1)?;
                let p0 = project(t, s0)?;
                let p1 = project(t, s1)?;
                let both = t.mul(p0, p1)?;
                t.sum(both)
            },
        ),
        case("gather_rows and nll", vec![fill(&[5, 4], -1.0, 1.0, 22)], |t, v| {
            let rows = t.gather_rows(v[0], &[3, 0, 3, 1])?;
            let lp = t.log_softmax_rows(rows)?;
            t.nll(lp, &[1, 2, 0, 3], &[0.5, 0.25, 1.0, 0.0])
        }),
        case(
            "lstm gates, cell and output",
            vec![fill(&[2, 12], -2.0, 2.0, 23), fill(&[2, 3], -1.0, 1.0, 24)],
            |t, v| {
                let act = t.lstm_gates(v[0])?;
                let c = t.lstm_cell(act, v[1])?;
                let h = t.lstm_output(act, c)?;
                let both = t.concat(&[c, h], 1)?;
                project(t, both)
            },
        ),
        case(
            "tanh layer",
            vec![fill(&[3, 2], -1.0, 1.0, 25), fill(&[2, 2], -1.0, 1.0, 26), fill(&[1], -1.0, 1.0, 27)],
            |t, v| {
                let h = t.matmul(v[0], v[1])?;
                let h = t.add(h, v[2])?;
                let h = t.tanh(h)?;
                let sq = t.mul(h, h)?;
                t.mean(sq)
            },
        ),
    ]
}
