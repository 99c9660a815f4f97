use super::params::{PruneNetParams, TENSOR_DECAYS};

/// Adam with decoupled weight decay. Decay skips the bias tensors.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: PruneNetParams,
    v: PruneNetParams,
    t: i32,
}

impl AdamW {
    pub fn new(params: &PruneNetParams, lr: f64, beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay,
            m: PruneNetParams::zeros(params.shape),
            v: PruneNetParams::zeros(params.shape),
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut PruneNetParams, grad: &PruneNetParams) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, lr, eps, wd) = (self.beta1, self.beta2, self.lr, self.eps, self.weight_decay);
        let tensors = params.tensors_mut().into_iter().zip(grad.tensors());
        let moments = self.m.tensors_mut().into_iter().zip(self.v.tensors_mut());
        for (((theta, g), (m, v)), decays) in tensors.zip(moments).zip(TENSOR_DECAYS) {
            for k in 0..theta.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                if decays {
                    theta[k] -= lr * wd * theta[k];
                }
                theta[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
