use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state for a fixed, ordered list of parameters.
///
/// Adam keeps first and second moments per parameter, zero at step 0, and
/// applies the usual bias correction. SGD is stateless apart from the step
/// counter.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer<T: Real> {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer {
            kind,
            lr,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self::new(OptimizerKind::adam(), lr)
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// First and second moments, one entry per parameter (empty before the first Adam step).
    pub fn moments(&self) -> (&[Vec<T>], &[Vec<T>]) {
        (&self.m, &self.v)
    }

    /// Restores state saved from [`Optimizer::moments`] and [`Optimizer::steps`].
    pub fn restore(&mut self, step: u64, m: Vec<Vec<T>>, v: Vec<Vec<T>>) -> Result<()> {
        if m.len() != v.len() || m.iter().zip(&v).any(|(a, b)| a.len() != b.len()) {
            return Err(TensorError::Contract("adam moments disagree in shape".into()));
        }
        self.step = step;
        self.m = m;
        self.v = v;
        Ok(())
    }

    /// Applies one update to `params` from their gradients, then zeroes the gradients.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>]) -> Result<()> {
        if let Some(p) = params.iter().position(|p| p.grad().is_none()) {
            return Err(TensorError::Contract(format!(
                "parameter {p} has no gradient buffer"
            )));
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                let lr = T::from_f64_lossy(self.lr);
                for p in params.iter_mut() {
                    let g = p.grad().unwrap().to_vec();
                    for (w, gi) in p.values_mut().iter_mut().zip(g) {
                        *w -= lr * gi;
                    }
                    p.zero_grad();
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if self.m.is_empty() {
                    self.m = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
                    self.v = self.m.clone();
                }
                if self.m.len() != params.len()
                    || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.numel())
                {
                    return Err(TensorError::Contract(
                        "parameter list changed between optimizer steps".into(),
                    ));
                }
                let t = self.step as i32;
                let b1 = T::from_f64_lossy(beta1);
                let b2 = T::from_f64_lossy(beta2);
                let one = T::one();
                let c1 = T::from_f64_lossy(1.0 - beta1.powi(t));
                let c2 = T::from_f64_lossy(1.0 - beta2.powi(t));
                let lr = T::from_f64_lossy(self.lr);
                let eps = T::from_f64_lossy(eps);
                for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
                    let g = p.grad().unwrap().to_vec();
                    for (((w, gi), mi), vi) in
                        p.values_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut())
                    {
                        *mi = b1 * *mi + (one - b1) * gi;
                        *vi = b2 * *vi + (one - b2) * gi * gi;
                        let mhat = *mi / c1;
                        let vhat = *vi / c2;
                        *w -= lr * mhat / (vhat.sqrt() + eps);
                    }
                    p.zero_grad();
                }
            }
        }
        Ok(())
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm measured before clipping.
pub fn clip_grad_norm<T: Real>(params: &mut [&mut Tensor<T>], max_norm: f64) -> f64 {
    let total: f64 = params
        .iter()
        .filter_map(|p| p.grad())
        .flat_map(|g| g.iter())
        .map(|&x| {
            let x = x.as_f64();
            x * x
        })
        .sum::<f64>()
        .sqrt();
    if total > max_norm {
        let s = T::from_f64_lossy(max_norm / total);
        for p in params.iter_mut() {
            if let Some(g) = p.grad_mut() {
                g.iter_mut().for_each(|x| *x *= s);
            }
        }
    }
    total
}
