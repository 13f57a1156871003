use super::buf::{Buf, Real};

/// Adam hyperparameters. Defaults follow the training setup: lr 0.005,
/// beta1 0.9, beta2 0.999, eps 1e-8.
#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { lr: 0.005, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment accumulators for a fixed list of parameter shapes.
pub struct AdamState<T> {
    pub m: Vec<Buf<T>>,
    pub v: Vec<Buf<T>>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(shapes: &[(usize, usize)]) -> Self {
        AdamState {
            m: shapes.iter().map(|&(r, c)| Buf::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Buf::zeros(r, c)).collect(),
            step: 0,
        }
    }

    /// One bias-corrected Adam update over all parameters, in order.
    pub fn step(&mut self, params: &mut [&mut Buf<T>], grads: &[Buf<T>], hp: &AdamParams) {
        assert_eq!(params.len(), self.m.len(), "parameter count mismatch");
        assert_eq!(grads.len(), self.m.len(), "gradient count mismatch");
        self.step += 1;
        let b1 = T::from_f64(hp.beta1);
        let b2 = T::from_f64(hp.beta2);
        let lr = T::from_f64(hp.lr);
        let eps = T::from_f64(hp.eps);
        let one = T::one();
        let bc1 = one - T::from_f64(hp.beta1.powi(self.step as i32));
        let bc2 = one - T::from_f64(hp.beta2.powi(self.step as i32));

        for i in 0..params.len() {
            assert_eq!(params[i].shape(), grads[i].shape(), "shape mismatch in adam step");
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let p = params[i].data_mut();
            let g = grads[i].data();
            let md = m.data_mut();
            for j in 0..p.len() {
                md[j] = b1 * md[j] + (one - b1) * g[j];
            }
            let vd = v.data_mut();
            for j in 0..p.len() {
                vd[j] = b2 * vd[j] + (one - b2) * g[j] * g[j];
                let mhat = md[j] / bc1;
                let vhat = vd[j] / bc2;
                p[j] = p[j] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
