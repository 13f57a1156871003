//! Training loop: ray-batch photometric + Eikonal optimization with Adam,
//! JSONL metrics logging, and resumable checkpoints.

use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::PosedDataset;
use crate::field::{FeatureMode, FieldConfig, FieldModel};
use crate::losses::{eikonal_points, model_eikonal_loss, total_loss};
use crate::rendering::{render_rays, sample_depths, Ray, RenderConfig};
use crate::tensor::{
    load_checkpoint, save_checkpoint, seeded, uniform_f64, AdamParams, AdamState, Buf, Graph,
    Real, Rng, RngSnapshot,
};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: u64,
    pub ray_batch: usize,
    pub learning_rate: f64,
    /// The learning rate decays exponentially to this multiple of its
    /// initial value over the run.
    pub lr_final_scale: f64,
    pub eikonal_weight: f64,
    /// Eikonal sample count per step; 0 means "same as the ray batch".
    pub eikonal_points: usize,
    pub seed: u64,
    pub log_interval: u64,
    pub checkpoint_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 3000,
            ray_batch: 512,
            learning_rate: 0.005,
            lr_final_scale: 0.1,
            eikonal_weight: 0.1,
            eikonal_points: 0,
            seed: 0,
            log_interval: 100,
            checkpoint_interval: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        if self.ray_batch == 0 {
            return Err(Error::Config("ray_batch must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.lr_final_scale > 0.0 && self.lr_final_scale <= 1.0) {
            return Err(Error::Config("lr_final_scale must be in (0, 1]".into()));
        }
        if self.eikonal_weight < 0.0 {
            return Err(Error::Config("eikonal_weight must be non-negative".into()));
        }
        if self.log_interval == 0 || self.checkpoint_interval == 0 {
            return Err(Error::Config("log and checkpoint intervals must be positive".into()));
        }
        Ok(())
    }

    fn eikonal_count(&self) -> usize {
        if self.eikonal_points == 0 { self.ray_batch } else { self.eikonal_points }
    }

    /// Exponential decay from `learning_rate` to `learning_rate ·
    /// lr_final_scale` across the run; `i` is the 0-based step index.
    pub fn lr_at(&self, i: u64) -> f64 {
        let span = (self.iterations - 1).max(1) as f64;
        self.learning_rate * self.lr_final_scale.powf(i.min(self.iterations - 1) as f64 / span)
    }
}

/// Flattened training rays: every pixel of every training view.
pub struct TrainData {
    pub rays: Vec<Ray>,
    pub colors: Vec<[f64; 3]>,
    pub bounding_radius: f64,
    pub background: [f64; 3],
}

impl TrainData {
    pub fn from_dataset(ds: &PosedDataset) -> Result<Self> {
        ds.validate()?;
        let mut rays = Vec::new();
        let mut colors = Vec::new();
        for view in ds.train_views() {
            let cam = &view.camera;
            for v in 0..cam.height {
                for u in 0..cam.width {
                    rays.push(cam.generate_ray(u, v)?);
                    let r = v * cam.width + u;
                    colors.push([
                        view.image.get(r, 0),
                        view.image.get(r, 1),
                        view.image.get(r, 2),
                    ]);
                }
            }
        }
        if rays.is_empty() {
            return Err(Error::Validation("dataset has no training pixels".into()));
        }
        Ok(TrainData {
            rays,
            colors,
            bounding_radius: ds.bounding_radius,
            background: ds.background,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    pub iteration: u64,
    pub loss: f64,
    pub rgb_loss: f64,
    pub eikonal_loss: f64,
    pub lr: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Mean redundancy weight per frequency band over the probe points.
    pub band_weights: [f64; 3],
}

pub struct StepStats {
    pub loss: f64,
    pub rgb_loss: f64,
    pub eikonal_loss: f64,
    pub lr: f64,
}

pub struct Trainer<T: Real> {
    pub model: FieldModel<T>,
    pub cfg: TrainConfig,
    pub render: RenderConfig,
    adam: AdamState<T>,
    rng: Rng,
    iteration: u64,
    probe_points: Buf<T>,
}

const PROBE_POINT_COUNT: usize = 32;

fn probe_points<T: Real>(radius: f64, seed: u64) -> Buf<T> {
    // A fixed low-discrepancy-ish set: uniform draws from a generator that
    // is independent of the training stream, so logging never perturbs it.
    let mut rng = seeded(seed ^ 0x9e37_79b9_7f4a_7c15);
    let empty = Buf::zeros(0, 3);
    eikonal_points(PROBE_POINT_COUNT, radius, &empty, &mut rng)
}

impl<T: Real> Trainer<T> {
    pub fn new(
        model: FieldModel<T>,
        cfg: TrainConfig,
        render: RenderConfig,
        bounding_radius: f64,
    ) -> Result<Self> {
        cfg.validate()?;
        let adam = AdamState::new(&model.store().shapes());
        let rng = seeded(cfg.seed);
        let probe = probe_points(bounding_radius, cfg.seed);
        Ok(Trainer { model, cfg, render, adam, rng, iteration: 0, probe_points: probe })
    }

    /// Rebuild a trainer from a checkpoint, restoring optimizer state, the
    /// iteration counter, and the exact RNG position.
    pub fn resume(
        path: &Path,
        cfg: TrainConfig,
        render: RenderConfig,
        bounding_radius: f64,
    ) -> Result<Self> {
        cfg.validate()?;
        let (model, ckpt) = load_field_model::<T>(path)?;
        let adam = match ckpt.adam {
            Some(a) => a,
            None => AdamState::new(&model.store().shapes()),
        };
        let rng = match &ckpt.meta.rng {
            Some(snap) => snap.restore()?,
            None => seeded(cfg.seed),
        };
        let probe = probe_points(bounding_radius, cfg.seed);
        Ok(Trainer {
            model,
            cfg,
            render,
            adam,
            rng,
            iteration: ckpt.meta.iteration,
            probe_points: probe,
        })
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// One optimization step: sample a ray batch, render the in-sphere rays,
    /// charge missed rays the constant background error, add the Eikonal
    /// term, and apply Adam.
    pub fn step(&mut self, data: &TrainData) -> Result<StepStats> {
        let b = self.cfg.ray_batch;
        let mut hit_rays = Vec::new();
        let mut hit_bounds = Vec::new();
        let mut hit_truth = Vec::new();
        let mut miss_abs_sum = 0.0;
        for _ in 0..b {
            let k = ((uniform_f64(&mut self.rng) * data.rays.len() as f64) as usize)
                .min(data.rays.len() - 1);
            let ray = data.rays[k];
            let truth = data.colors[k];
            match ray.sphere_interval(data.bounding_radius) {
                Some(bounds) => {
                    hit_rays.push(ray);
                    hit_bounds.push(bounds);
                    hit_truth.push(truth);
                }
                None => {
                    for c in 0..3 {
                        miss_abs_sum += (data.background[c] - truth[c]).abs();
                    }
                }
            }
        }

        let mut g = Graph::new();
        let bind = self.model.bind(&mut g, true);

        let (l_rgb, ray_points) = if hit_rays.is_empty() {
            let flat = g.constant_scalar(miss_abs_sum / (b as f64 * 3.0));
            (flat, Buf::zeros(0, 3))
        } else {
            let samples = sample_depths(
                &self.model,
                &hit_rays,
                &hit_bounds,
                &self.render,
                &mut self.rng,
            )?;
            let rendered =
                render_rays(&self.model, &mut g, &bind, &hit_rays, &samples, &self.render)?;
            let truth = Buf::from_fn(hit_rays.len(), 3, |r, c| T::from_f64(hit_truth[r][c]));
            let tvar = g.constant(truth);
            let diff = g.sub(rendered.rgb, tvar);
            let mag = g.abs(diff);
            let hit_sum = g.sum_all(mag);
            let with_miss = g.add_const(hit_sum, miss_abs_sum);
            (g.mul_const(with_miss, 1.0 / (b as f64 * 3.0)), rendered.points)
        };

        let eik_pts = eikonal_points(
            self.cfg.eikonal_count(),
            data.bounding_radius,
            &ray_points,
            &mut self.rng,
        );
        let l_eik = model_eikonal_loss(&self.model, &mut g, &bind, &eik_pts)?;
        let loss = total_loss(&mut g, l_rgb, l_eik, self.cfg.eikonal_weight)?;

        let loss_v = g.value(loss).item().as_f64();
        let rgb_v = g.value(l_rgb).item().as_f64();
        let eik_v = g.value(l_eik).item().as_f64();
        let lr = self.cfg.lr_at(self.iteration);
        if !loss_v.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss diverged at iteration {} (rgb {rgb_v}, eikonal {eik_v}, lr {lr}, alpha {}, beta {})",
                self.iteration,
                self.model.alpha(),
                self.model.beta()
            )));
        }

        let grads = g.backward(loss);
        let shapes = self.model.store().shapes();
        let grad_bufs: Vec<Buf<T>> = bind
            .vars()
            .iter()
            .zip(&shapes)
            .map(|(&v, &shape)| grads.get(v, shape))
            .collect();
        let hp = AdamParams { lr, ..AdamParams::default() };
        let mut params = self.model.store_mut().values_mut_all();
        self.adam.step(&mut params, &grad_bufs, &hp);
        self.iteration += 1;

        Ok(StepStats { loss: loss_v, rgb_loss: rgb_v, eikonal_loss: eik_v, lr })
    }

    /// Mean redundancy weight per band at the probe points (inference only).
    pub fn probe_band_weights(&self) -> Result<[f64; 3]> {
        let mut g = Graph::inference();
        let bind = self.model.bind(&mut g, false);
        let out = self.model.decode(&mut g, &bind, &self.probe_points, FeatureMode::Standard)?;
        let w = g.value(out.weights);
        let mut means = [0.0; 3];
        for r in 0..w.rows() {
            for (c, m) in means.iter_mut().enumerate() {
                *m += w.get(r, c).as_f64();
            }
        }
        for m in &mut means {
            *m /= w.rows() as f64;
        }
        Ok(means)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let model_json = serde_json::to_value(self.model.config())
            .map_err(|e| Error::Format(e.to_string()))?;
        save_checkpoint(
            path,
            self.model.store(),
            Some(&self.adam),
            self.iteration,
            model_json,
            Some(RngSnapshot::capture(&self.rng)),
        )
    }
}

/// Load a field model from a checkpoint, reconstructing the architecture
/// from the stored config and overwriting the freshly initialized values.
pub fn load_field_model<T: Real>(path: &Path) -> Result<(FieldModel<T>, crate::tensor::Checkpoint<T>)> {
    let ckpt = load_checkpoint::<T>(path)?;
    let cfg: FieldConfig = serde_json::from_value(ckpt.meta.model.clone())
        .map_err(|e| Error::Format(format!("{}: bad model config: {e}", path.display())))?;
    let mut init_rng = seeded(0);
    let mut model = FieldModel::new(cfg, &mut init_rng)?;
    if model.store().len() != ckpt.meta.params.len() {
        return Err(Error::Format(format!(
            "{}: checkpoint has {} parameters, model expects {}",
            path.display(),
            ckpt.meta.params.len(),
            model.store().len()
        )));
    }
    for (i, entry) in ckpt.meta.params.iter().enumerate() {
        let id = model.store().by_name(&entry.name).ok_or_else(|| {
            Error::Format(format!("{}: unknown parameter {}", path.display(), entry.name))
        })?;
        if model.store().value(id).shape() != (entry.rows, entry.cols) {
            return Err(Error::Format(format!(
                "{}: parameter {} has shape {}×{}, model expects {:?}",
                path.display(),
                entry.name,
                entry.rows,
                entry.cols,
                model.store().value(id).shape()
            )));
        }
        *model.store_mut().value_mut(id) = ckpt.values[i].clone();
    }
    Ok((model, ckpt))
}

/// Paths produced by a training run.
pub struct RunArtifacts {
    pub metrics_log: PathBuf,
    pub final_checkpoint: PathBuf,
}

/// Run the full loop: a metrics row at iteration 0 and every `log_interval`
/// steps, checkpoints every `checkpoint_interval` steps and at the end.
pub fn train_loop<T: Real>(
    trainer: &mut Trainer<T>,
    data: &TrainData,
    out_dir: &Path,
    mut on_row: impl FnMut(&MetricsRow),
) -> Result<RunArtifacts> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    let metrics_path = out_dir.join("metrics.jsonl");
    let fresh = trainer.iteration == 0;
    let file = if fresh {
        File::create(&metrics_path)
    } else {
        File::options().append(true).create(true).open(&metrics_path)
    }
    .map_err(|e| Error::io(format!("opening {}", metrics_path.display()), e))?;
    let mut log = BufWriter::new(file);

    let mut write_row = |log: &mut BufWriter<File>,
                         trainer: &Trainer<T>,
                         stats: Option<&StepStats>|
     -> Result<()> {
        let band_weights = trainer.probe_band_weights()?;
        let row = MetricsRow {
            iteration: trainer.iteration,
            loss: stats.map_or(f64::NAN, |s| s.loss),
            rgb_loss: stats.map_or(f64::NAN, |s| s.rgb_loss),
            eikonal_loss: stats.map_or(f64::NAN, |s| s.eikonal_loss),
            lr: trainer.cfg.lr_at(trainer.iteration.saturating_sub(1)),
            alpha: trainer.model.alpha(),
            beta: trainer.model.beta(),
            band_weights,
        };
        let line = serde_json::to_string(&row).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(log, "{line}")
            .map_err(|e| Error::io(format!("writing {}", metrics_path.display()), e))?;
        on_row(&row);
        Ok(())
    };

    if fresh {
        write_row(&mut log, trainer, None)?;
    }
    let total = trainer.cfg.iterations;
    while trainer.iteration < total {
        let stats = trainer.step(data)?;
        let i = trainer.iteration;
        if i % trainer.cfg.log_interval == 0 {
            write_row(&mut log, trainer, Some(&stats))?;
        }
        if i % trainer.cfg.checkpoint_interval == 0 && i != total {
            trainer.save(&out_dir.join(format!("checkpoint_{i:07}.frebis")))?;
        }
    }
    log.flush()
        .map_err(|e| Error::io(format!("writing {}", metrics_path.display()), e))?;
    let final_path = out_dir.join("checkpoint_final.frebis");
    trainer.save(&final_path)?;
    Ok(RunArtifacts { metrics_log: metrics_path, final_checkpoint: final_path })
}
