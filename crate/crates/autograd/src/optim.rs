use crate::store::{NamedTensor, Param};
use crate::tensor::Tensor;

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

/// Serializable optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first_moments: Vec<NamedTensor>,
    pub second_moments: Vec<NamedTensor>,
}

impl Adam {
    pub fn new(params: &[Param], lr: f64) -> Self {
        let sizes = params.iter().map(|p| p.get().numel());
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.clone().map(|n| vec![0.0; n]).collect(),
            v: sizes.map(|n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update; `grads[i]` belongs to `params[i]`.
    pub fn step(&mut self, params: &[Param], grads: &[Tensor]) {
        assert_eq!(params.len(), self.m.len(), "optimizer built for another parameter set");
        assert_eq!(params.len(), grads.len());
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let mut w = p.get().to_vec();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, &gj) in g.data().iter().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                w[j] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            p.set_data(w);
        }
    }

    pub fn state(&self, params: &[Param]) -> AdamState {
        let pack = |bufs: &[Vec<f64>]| {
            params
                .iter()
                .zip(bufs)
                .map(|(p, b)| NamedTensor {
                    name: p.name().to_string(),
                    shape: p.shape(),
                    data: b.clone(),
                })
                .collect()
        };
        AdamState {
            step: self.step,
            first_moments: pack(&self.m),
            second_moments: pack(&self.v),
        }
    }

    pub fn load_state(&mut self, params: &[Param], state: &AdamState) -> Result<(), String> {
        let unpack = |src: &[NamedTensor]| -> Result<Vec<Vec<f64>>, String> {
            params
                .iter()
                .map(|p| {
                    let t = src
                        .iter()
                        .find(|t| t.name == p.name())
                        .ok_or_else(|| format!("optimizer state lacks {}", p.name()))?;
                    if t.shape != p.shape() {
                        return Err(format!("optimizer state shape mismatch for {}", p.name()));
                    }
                    Ok(t.data.clone())
                })
                .collect()
        };
        self.m = unpack(&state.first_moments)?;
        self.v = unpack(&state.second_moments)?;
        self.step = state.step;
        Ok(())
    }
}
