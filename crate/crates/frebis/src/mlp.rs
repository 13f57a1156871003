//! Plain fully-connected MLPs over the autodiff graph.
//!
//! Used for the three frequency encoders, the SDF decoder, and the color
//! network. Hidden layers use softplus with sharpness 100 (the smooth
//! activation the SDF path needs); the output layer is linear or sigmoid.

use serde::{Deserialize, Serialize};

use crate::tensor::{uniform_in, Buf, Graph, ParamBinding, ParamId, ParamStore, Real, Rng, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Linear,
    Sigmoid,
}

/// Shape and activation of one MLP. `layers` counts linear layers; each but
/// the last is followed by the hidden activation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_width: usize,
    pub output_dim: usize,
    pub layers: usize,
    pub softplus_sharpness: f64,
    pub output_activation: OutputActivation,
    /// Extra multiplier on the final layer's initial weights; the SDF
    /// decoder starts near-constant by setting this small.
    pub final_weight_scale: f64,
}

impl MlpConfig {
    pub fn new(input_dim: usize, hidden_width: usize, output_dim: usize, layers: usize) -> Self {
        MlpConfig {
            input_dim,
            hidden_width,
            output_dim,
            layers,
            softplus_sharpness: 100.0,
            output_activation: OutputActivation::Linear,
            final_weight_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("mlp layer count must be >= 1".into()));
        }
        if self.input_dim == 0 || self.hidden_width == 0 || self.output_dim == 0 {
            return Err(Error::Config("mlp widths must be >= 1".into()));
        }
        Ok(())
    }
}

/// A registered MLP: parameter ids into a shared [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Mlp {
    cfg: MlpConfig,
    weights: Vec<ParamId>,
    biases: Vec<ParamId>,
}

impl Mlp {
    /// Register parameters under `prefix.w0`, `prefix.b0`, … Weights draw
    /// from U(±1/√fan_in), biases start at zero.
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cfg: MlpConfig,
        rng: &mut Rng,
    ) -> Result<Mlp> {
        cfg.validate()?;
        let mut weights = Vec::with_capacity(cfg.layers);
        let mut biases = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let fan_in = if l == 0 { cfg.input_dim } else { cfg.hidden_width };
            let fan_out = if l + 1 == cfg.layers { cfg.output_dim } else { cfg.hidden_width };
            let mut bound = 1.0 / (fan_in as f64).sqrt();
            if l + 1 == cfg.layers {
                bound *= cfg.final_weight_scale;
            }
            let w = Buf::from_fn(fan_in, fan_out, |_, _| {
                T::from_f64(uniform_in(rng, -bound, bound))
            });
            weights.push(store.register(format!("{prefix}.w{l}"), w));
            biases.push(store.register(format!("{prefix}.b{l}"), Buf::zeros(1, fan_out)));
        }
        Ok(Mlp { cfg, weights, biases })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.cfg
    }

    /// Bias parameter of the final layer (the SDF decoder nudges it).
    pub fn output_bias(&self) -> ParamId {
        *self.biases.last().unwrap()
    }

    /// Forward a B×input_dim batch to B×output_dim.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, bind: &ParamBinding, x: Var) -> Var {
        assert_eq!(
            g.shape(x).1,
            self.cfg.input_dim,
            "mlp input width mismatch"
        );
        let mut h = x;
        for l in 0..self.cfg.layers {
            let z = g.matmul(h, bind.var(self.weights[l]));
            h = g.add(z, bind.var(self.biases[l]));
            if l + 1 < self.cfg.layers {
                h = g.softplus(h, self.cfg.softplus_sharpness);
            }
        }
        match self.cfg.output_activation {
            OutputActivation::Linear => h,
            OutputActivation::Sigmoid => g.sigmoid(h),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{check_gradient, seeded, DEFAULT_EPS};

    fn build(cfg: MlpConfig) -> (ParamStore<f64>, Mlp) {
        let mut store = ParamStore::new();
        let mut rng = seeded(7);
        let mlp = Mlp::new(&mut store, "m", cfg, &mut rng).unwrap();
        (store, mlp)
    }

    #[test]
    fn zero_final_layer_gives_constant_output() {
        let cfg = MlpConfig::new(5, 16, 3, 3);
        let (mut store, mlp) = build(cfg);
        let w_last = store.by_name("m.w2").unwrap();
        *store.value_mut(w_last) = Buf::zeros(16, 3);
        let b_last = store.by_name("m.b2").unwrap();
        *store.value_mut(b_last) = Buf::from_f64_slice(1, 3, &[0.1, -0.2, 0.3]);

        let mut g = Graph::<f64>::new();
        let bind = store.bind(&mut g, false);
        let x = g.constant(Buf::from_f64_slice(2, 5, &[0.4; 10]));
        let y = mlp.forward(&mut g, &bind, x);
        for r in 0..2 {
            assert!((g.value(y).get(r, 0) - 0.1).abs() < 1e-12);
            assert!((g.value(y).get(r, 1) + 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_output_in_unit_interval_and_zero_weights_give_half() {
        let mut cfg = MlpConfig::new(4, 8, 3, 2);
        cfg.output_activation = OutputActivation::Sigmoid;
        cfg.final_weight_scale = 0.0;
        let (store, mlp) = build(cfg);
        let mut g = Graph::<f64>::new();
        let bind = store.bind(&mut g, false);
        let x = g.constant(Buf::from_f64_slice(1, 4, &[3.0, -2.0, 0.5, 9.0]));
        let y = mlp.forward(&mut g, &bind, x);
        for &v in g.value(y).data() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn batching_matches_single_evaluation() {
        let cfg = MlpConfig::new(3, 10, 4, 3);
        let (store, mlp) = build(cfg);
        let rows = [[0.1, 0.2, 0.3], [-0.5, 0.9, 0.0], [1.2, -1.1, 0.4]];
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();

        let mut g = Graph::<f64>::inference();
        let bind = store.bind(&mut g, false);
        let x = g.constant(Buf::from_f64_slice(3, 3, &flat));
        let batched = mlp.forward(&mut g, &bind, x);

        for (r, row) in rows.iter().enumerate() {
            let mut g1 = Graph::<f64>::inference();
            let b1 = store.bind(&mut g1, false);
            let x1 = g1.constant(Buf::from_f64_slice(1, 3, row));
            let y1 = mlp.forward(&mut g1, &b1, x1);
            for c in 0..4 {
                assert!((g.value(batched).get(r, c) - g1.value(y1).get(0, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn first_layer_gradient_matches_finite_differences() {
        let cfg = MlpConfig::new(3, 6, 2, 3);
        let (store, _mlp) = build(cfg);
        let w0 = store.by_name("m.w0").unwrap();
        let init = store.value(w0).clone();
        let err = check_gradient(&init, DEFAULT_EPS, |g, leaf| {
            let bind = store.bind(g, false);
            // Splice the candidate weight in place of the stored one.
            let x = g.constant(Buf::from_f64_slice(2, 3, &[0.3, -0.4, 0.8, 0.1, 0.5, -0.2]));
            let z = g.matmul(x, leaf);
            let z = g.add(z, bind.var(store.by_name("m.b0").unwrap()));
            let mut h = g.softplus(z, 100.0);
            for l in 1..3 {
                let z = g.matmul(h, bind.var(store.by_name(&format!("m.w{l}")).unwrap()));
                h = g.add(z, bind.var(store.by_name(&format!("m.b{l}")).unwrap()));
                if l + 1 < 3 {
                    h = g.softplus(h, 100.0);
                }
            }
            g.sum_all(h)
        });
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn finite_output_at_initialization() {
        let cfg = MlpConfig::new(15, 64, 64, 6);
        let (store, mlp) = build(cfg);
        let mut g = Graph::<f64>::inference();
        let bind = store.bind(&mut g, false);
        let x = g.constant(Buf::from_fn(4, 15, |r, c| ((r * 7 + c) as f64).sin()));
        let y = mlp.forward(&mut g, &bind, x);
        assert!(g.value(y).all_finite());
    }
}
