use super::ParamStore;

/// Adam with bias correction. Moments live on each [`Parameter`](super::Parameter).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    /// Applies update number `t` (1-based) from the accumulated gradients.
    pub fn step(&self, store: &mut ParamStore, t: u64) {
        assert!(t >= 1, "Adam step counter starts at 1");
        let bc1 = 1.0 - self.beta1.powi(t as i32);
        let bc2 = 1.0 - self.beta2.powi(t as i32);
        for p in store.iter_mut() {
            let g = p.grad.data();
            let m = p.first_moment.data_mut();
            for (mi, gi) in m.iter_mut().zip(g) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
            }
            let v = p.second_moment.data_mut();
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
            }
            let (m, v) = (p.first_moment.data(), p.second_moment.data());
            for ((w, mi), vi) in p.value.data_mut().iter_mut().zip(m).zip(v) {
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Stochastic gradient descent with classical momentum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
}

impl Sgd {
    pub fn step(&self, store: &mut ParamStore) {
        for p in store.iter_mut() {
            let g = p.grad.data();
            let vel = p.first_moment.data_mut();
            for (vi, gi) in vel.iter_mut().zip(g) {
                *vi = self.momentum * *vi + gi;
            }
            for (w, vi) in p.value.data_mut().iter_mut().zip(p.first_moment.data()) {
                *w -= self.lr * vi;
            }
        }
    }
}
