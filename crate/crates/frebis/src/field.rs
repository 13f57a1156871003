//! The full implicit field: banded encoders, feature weighting, SDF/appearance
//! decoder, SDF→density transform, spatial gradients, and the color network.

use serde::{Deserialize, Serialize};

use crate::encoding::{encode_points, BandSpec};
use crate::mlp::{Mlp, MlpConfig, OutputActivation};
use crate::tensor::{Buf, Graph, ParamBinding, ParamId, ParamStore, Real, Rng, Var};
use crate::weighting::{average_features, weight_features};
use crate::{Error, Result};

/// How the three band features are combined before decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingMode {
    /// Redundancy-aware softmax weighting (the full method).
    Redundancy,
    /// Ablation: plain average of the three features.
    UniformAverage,
}

/// Orientation of the SDF→density branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityConvention {
    /// Dense inside the surface (d < 0), vanishing outside. The convention
    /// volume rendering needs to converge to surfaces.
    InsideDense,
    /// The branches with the opposite orientation (dense outside), kept for
    /// fidelity experiments.
    OutsideDense,
}

/// Which features reach the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMode {
    /// Combine per the configured [`WeightingMode`].
    Standard,
    /// Keep only band `i` (others zeroed, weighting bypassed) — the
    /// per-band diagnostic decode.
    Band(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldConfig {
    pub band_spec: BandSpec,
    /// Linear-layer count of each encoder (low, mid, high).
    pub encoder_layers: [usize; 3],
    pub encoder_width: usize,
    /// Output width of each encoder = row count of the feature stack.
    pub feature_width: usize,
    pub decoder_layers: usize,
    pub decoder_width: usize,
    pub appearance_width: usize,
    pub color_layers: usize,
    pub color_width: usize,
    /// Softmax temperature of the weighting module.
    pub tau: f64,
    pub weighting: WeightingMode,
    pub density_convention: DensityConvention,
    pub alpha_init: f64,
    pub beta_init: f64,
    /// Central-difference step for spatial SDF gradients, in scene units.
    pub gradient_eps: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            band_spec: BandSpec::default(),
            encoder_layers: [6, 6, 6],
            encoder_width: 256,
            feature_width: 256,
            decoder_layers: 2,
            decoder_width: 256,
            appearance_width: 256,
            color_layers: 4,
            color_width: 256,
            tau: 0.5,
            weighting: WeightingMode::Redundancy,
            density_convention: DensityConvention::InsideDense,
            alpha_init: 10.0,
            beta_init: 0.1,
            gradient_eps: 1e-3,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        self.band_spec.validate()?;
        if self.tau <= 0.0 {
            return Err(Error::Config("tau must be positive".into()));
        }
        if self.alpha_init <= 0.0 || self.beta_init <= 0.0 {
            return Err(Error::Config("alpha/beta init must be positive".into()));
        }
        if self.gradient_eps <= 0.0 {
            return Err(Error::Config("gradient_eps must be positive".into()));
        }
        Ok(())
    }
}

/// Decoder output for a batch of points.
pub struct FieldOutput {
    /// B×1 signed distances.
    pub sdf: Var,
    /// B×appearance_width appearance features.
    pub appearance: Var,
    /// B×3 band weights actually applied.
    pub weights: Var,
}

/// All trainable state of the reconstruction pipeline.
pub struct FieldModel<T: Real> {
    cfg: FieldConfig,
    store: ParamStore<T>,
    encoders: [Mlp; 3],
    decoder: Mlp,
    colornet: Mlp,
    alpha_raw: ParamId,
    beta_raw: ParamId,
}

impl<T: Real> FieldModel<T> {
    pub fn new(cfg: FieldConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let dims = cfg.band_spec.banded_dims();

        let names = ["enc_low", "enc_mid", "enc_high"];
        let mut encoders = Vec::with_capacity(3);
        for i in 0..3 {
            let mc = MlpConfig {
                input_dim: dims[i],
                hidden_width: cfg.encoder_width,
                output_dim: cfg.feature_width,
                layers: cfg.encoder_layers[i],
                ..MlpConfig::new(dims[i], cfg.encoder_width, cfg.feature_width, cfg.encoder_layers[i])
            };
            encoders.push(Mlp::new(&mut store, names[i], mc, rng)?);
        }
        let encoders: [Mlp; 3] = encoders.try_into().unwrap();

        // Decoder starts near-constant: tiny final weights plus a positive
        // SDF bias, so the initial field is a small positive constant the
        // Eikonal term can shape.
        let mut dec_cfg = MlpConfig::new(
            3 * cfg.feature_width,
            cfg.decoder_width,
            1 + cfg.appearance_width,
            cfg.decoder_layers,
        );
        dec_cfg.final_weight_scale = 0.01;
        let decoder = Mlp::new(&mut store, "decoder", dec_cfg, rng)?;
        store.value_mut(decoder.output_bias()).set(0, 0, T::from_f64(0.3));

        let mut col_cfg = MlpConfig::new(
            cfg.appearance_width + 9,
            cfg.color_width,
            3,
            cfg.color_layers,
        );
        col_cfg.output_activation = OutputActivation::Sigmoid;
        let colornet = Mlp::new(&mut store, "color", col_cfg, rng)?;

        let alpha_raw =
            store.register("alpha_raw", Buf::scalar(T::from_f64(cfg.alpha_init.ln())));
        let beta_raw = store.register("beta_raw", Buf::scalar(T::from_f64(cfg.beta_init.ln())));

        Ok(FieldModel { cfg, store, encoders, decoder, colornet, alpha_raw, beta_raw })
    }

    pub fn config(&self) -> &FieldConfig {
        &self.cfg
    }
    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }
    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    /// Current density scale α = exp(alpha_raw).
    pub fn alpha(&self) -> f64 {
        self.store.value(self.alpha_raw).item().as_f64().exp()
    }
    /// Current density sharpness β = exp(beta_raw).
    pub fn beta(&self) -> f64 {
        self.store.value(self.beta_raw).item().as_f64().exp()
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> ParamBinding {
        self.store.bind(g, trainable)
    }

    /// Encode, weight, and decode a batch of points (B×3) into SDF and
    /// appearance.
    pub fn decode(
        &self,
        g: &mut Graph<T>,
        bind: &ParamBinding,
        points: &Buf<T>,
        mode: FeatureMode,
    ) -> Result<FieldOutput> {
        let bands = encode_points(points, &self.cfg.band_spec)?;
        let feats: Vec<Var> = bands
            .iter()
            .zip(&self.encoders)
            .map(|(band, enc)| {
                let x = g.constant(band.clone());
                enc.forward(g, bind, x)
            })
            .collect();
        let feats: [Var; 3] = feats.try_into().unwrap();

        let combined = match mode {
            FeatureMode::Standard => match self.cfg.weighting {
                WeightingMode::Redundancy => weight_features(g, feats, self.cfg.tau)?,
                WeightingMode::UniformAverage => average_features(g, feats),
            },
            FeatureMode::Band(i) => {
                if i >= 3 {
                    return Err(Error::Config(format!("band index {i} out of range")));
                }
                let b = points.rows();
                let mut onehot = Buf::zeros(b, 3);
                for r in 0..b {
                    onehot.set(r, i, T::one());
                }
                let weights = g.constant(onehot);
                let mut weighted = feats;
                for (j, f) in feats.iter().enumerate() {
                    if j != i {
                        weighted[j] = g.mul_const(*f, 0.0);
                    }
                }
                crate::weighting::WeightingOutput { weighted, weights }
            }
        };

        // Flatten column-major: f_L then f_M then f_H.
        let flat = g.concat_cols(&combined.weighted);
        let out = self.decoder.forward(g, bind, flat);
        let sdf = g.slice_cols(out, 0, 1);
        let appearance = g.slice_cols(out, 1, 1 + self.cfg.appearance_width);
        Ok(FieldOutput { sdf, appearance, weights: combined.weights })
    }

    /// Raw per-band feature columns at each point, for inspecting the
    /// similarity/dissimilarity/weight computation offline.
    pub fn band_feature_columns(&self, points: &Buf<T>) -> Result<Vec<[Vec<f64>; 3]>> {
        let mut g = Graph::inference();
        let bind = self.bind(&mut g, false);
        let bands = encode_points(points, &self.cfg.band_spec)?;
        let feats: Vec<Var> = bands
            .iter()
            .zip(&self.encoders)
            .map(|(band, enc)| {
                let x = g.constant(band.clone());
                enc.forward(&mut g, &bind, x)
            })
            .collect();
        let mut out = Vec::with_capacity(points.rows());
        for r in 0..points.rows() {
            let mut cols: [Vec<f64>; 3] = Default::default();
            for (b, &f) in feats.iter().enumerate() {
                let v = g.value(f);
                cols[b] = (0..self.cfg.feature_width).map(|c| v.get(r, c).as_f64()).collect();
            }
            out.push(cols);
        }
        Ok(out)
    }

    /// SDF, appearance, weights, and the central-difference spatial gradient
    /// at each point, computed in one decoder pass over 7·B stacked rows so
    /// the training loss backpropagates through all of it.
    pub fn decode_with_gradient(
        &self,
        g: &mut Graph<T>,
        bind: &ParamBinding,
        points: &Buf<T>,
        mode: FeatureMode,
    ) -> Result<(FieldOutput, Var)> {
        let b = points.rows();
        let eps = self.cfg.gradient_eps;
        let mut stacked = Buf::zeros(7 * b, 3);
        for r in 0..b {
            for c in 0..3 {
                let v = points.get(r, c);
                stacked.set(r, c, v);
                for axis in 0..3 {
                    let off = if c == axis { T::from_f64(eps) } else { T::zero() };
                    stacked.set((1 + 2 * axis) * b + r, c, v + off);
                    stacked.set((2 + 2 * axis) * b + r, c, v - off);
                }
            }
        }
        let out = self.decode(g, bind, &stacked, mode)?;
        let sdf = g.slice_rows(out.sdf, 0, b);
        let appearance = g.slice_rows(out.appearance, 0, b);
        let weights = g.slice_rows(out.weights, 0, b);
        let mut grad_cols = Vec::with_capacity(3);
        for axis in 0..3 {
            let plus = g.slice_rows(out.sdf, (1 + 2 * axis) * b, (2 + 2 * axis) * b);
            let minus = g.slice_rows(out.sdf, (2 + 2 * axis) * b, (3 + 2 * axis) * b);
            let diff = g.sub(plus, minus);
            grad_cols.push(g.mul_const(diff, 1.0 / (2.0 * eps)));
        }
        let grad = g.concat_cols(&grad_cols);
        Ok((FieldOutput { sdf, appearance, weights }, grad))
    }

    /// SDF→density. Both conventions give σ(0) = α/2; see
    /// [`DensityConvention`] for the branch orientation.
    pub fn sdf_to_density(&self, g: &mut Graph<T>, bind: &ParamBinding, sdf: Var) -> Var {
        let alpha = g.exp(bind.var(self.alpha_raw));
        let beta = g.exp(bind.var(self.beta_raw));
        // u = ½·exp(−|d|/β) ∈ (0, ½]: bounded on both branches, so the
        // masked-out side can never overflow into the kept one.
        let mag = g.abs(sdf);
        let neg = g.neg(mag);
        let ratio = g.div(neg, beta);
        let e = g.exp(ratio);
        let u = g.mul_const(e, 0.5);

        // Rows where the *far* branch applies (σ → α as |d| grows).
        let sdf_vals = g.value(sdf).clone();
        let far = match self.cfg.density_convention {
            DensityConvention::InsideDense => sdf_vals.map(|d| {
                if d < T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }),
            DensityConvention::OutsideDense => sdf_vals.map(|d| {
                if d > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }),
        };
        let mask = g.constant(far);
        let one_minus_u = {
            let nu = g.neg(u);
            g.add_const(nu, 1.0)
        };
        let far_term = g.mul(mask, one_minus_u);
        let near_mask = {
            let nm = g.neg(mask);
            g.add_const(nm, 1.0)
        };
        let near_term = g.mul(near_mask, u);
        let mixed = g.add(far_term, near_term);
        g.mul(alpha, mixed)
    }

    /// View-dependent color: MLP over appearance ⊕ position ⊕ view direction
    /// ⊕ normalized gradient, sigmoid-bounded.
    pub fn color(
        &self,
        g: &mut Graph<T>,
        bind: &ParamBinding,
        appearance: Var,
        points: Var,
        view_dirs: Var,
        gradient: Var,
    ) -> Var {
        let sq = g.square(gradient);
        let sumsq = g.sum_rows(sq);
        let norm = g.sqrt(sumsq);
        let denom = g.clamp_min(norm, 1e-8);
        let unit = g.div(gradient, denom);
        let input = g.concat_cols(&[appearance, points, view_dirs, unit]);
        self.colornet.forward(g, bind, input)
    }

    /// Inference-only SDF evaluation (used by meshing); no graph kept.
    pub fn sdf_values(&self, points: &Buf<T>, mode: FeatureMode) -> Result<Buf<T>> {
        let mut g = Graph::inference();
        let bind = self.bind(&mut g, false);
        let out = self.decode(&mut g, &bind, points, mode)?;
        Ok(g.value(out.sdf).clone())
    }
}
