//! Command-line entry point. Exit codes: 0 success, 1 usage, 2 validation
//! or configuration error, 3 runtime error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use frebis::config::RunConfig;
use frebis::dataset::{read_camera_file, read_dataset, write_dataset, write_png};
use frebis::field::{FieldModel, WeightingMode};
use frebis::meshing::{
    marching_cubes, per_band_mesh, read_obj_vertices, sample_field_grid, weight_norm_colors,
    write_obj, write_ply, Mesh,
};
use frebis::metrics::{chamfer, psnr, ssim};
use frebis::rendering::{render_image, RenderConfig};
use frebis::scenes::{make_dataset, AnalyticScene};
use frebis::tensor::{read_checkpoint_meta, seeded, Buf, Precision, Real};
use frebis::training::{load_field_model, train_loop, TrainData, Trainer};
use frebis::weighting::inspect_point;
use frebis::{Error, Result};

#[derive(Parser)]
#[command(name = "frebis", version, about = "Frequency-stratified implicit surface reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a built-in analytic scene into a posed-image dataset.
    GenerateScene {
        /// Scene name: sphere, torus-checker, or freq-mix.
        #[arg(long)]
        scene: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        views: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model as described by a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Replace redundancy weighting with a uniform band average.
        #[arg(long)]
        no_weighting: bool,
        /// Continue from a checkpoint instead of initializing fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Render one view from a checkpoint.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset whose camera (and background/radius) to use.
        #[arg(long, conflicts_with = "pose")]
        dataset: Option<PathBuf>,
        /// View index into the dataset (over all views, in file order).
        #[arg(long, default_value_t = 0)]
        view_index: usize,
        /// Standalone camera JSON (same record layout as cameras.json).
        #[arg(long)]
        pose: Option<PathBuf>,
        /// Bounding sphere radius when rendering from a pose file.
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        samples: usize,
    },
    /// Extract the zero level set as a mesh.
    ExtractMesh {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 128)]
        resolution: usize,
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        /// Output OBJ path; auxiliary outputs derive their names from it.
        #[arg(long)]
        out: PathBuf,
        /// Also write one OBJ per frequency band.
        #[arg(long)]
        per_band: bool,
        /// Also write a PLY colored by the per-band redundancy weights.
        #[arg(long)]
        weight_colors: bool,
    },
    /// Holdout-view PSNR/SSIM (and Chamfer against a reference mesh).
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// OBJ whose vertices serve as the Chamfer reference point set.
        #[arg(long)]
        reference_mesh: Option<PathBuf>,
        #[arg(long, default_value_t = 128)]
        mesh_resolution: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Dump similarity, dissimilarity, and weights at query points.
    InspectWeights {
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSON file holding an array of [x, y, z] points.
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes, not usage errors.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Config(_) | Error::Validation(_) | Error::Shape(_) => 2,
                Error::NonFinite(_) | Error::Format(_) | Error::Io { .. } => 3,
            };
            ExitCode::from(code)
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenerateScene { scene, out, views, size, seed } => {
            let scene = AnalyticScene::by_name(&scene)?;
            let ds = make_dataset(&scene, views, size, seed)?;
            write_dataset(&ds, &out)?;
            println!(
                "wrote {} views ({} holdout) to {}",
                ds.views.len(),
                ds.holdout_views().len(),
                out.display()
            );
            Ok(())
        }
        Command::Train { config, no_weighting, resume } => {
            let mut cfg = RunConfig::load(&config)?;
            if no_weighting {
                cfg.field.weighting = WeightingMode::UniformAverage;
            }
            match cfg.precision {
                Precision::F32 => cmd_train::<f32>(cfg, resume.as_deref()),
                Precision::F64 => cmd_train::<f64>(cfg, resume.as_deref()),
            }
        }
        Command::Render { checkpoint, dataset, view_index, pose, radius, out, seed, samples } => {
            with_precision(&checkpoint, |p| match p {
                Precision::F32 => cmd_render::<f32>(
                    &checkpoint, dataset.as_deref(), view_index, pose.as_deref(), radius, &out,
                    seed, samples,
                ),
                Precision::F64 => cmd_render::<f64>(
                    &checkpoint, dataset.as_deref(), view_index, pose.as_deref(), radius, &out,
                    seed, samples,
                ),
            })
        }
        Command::ExtractMesh { checkpoint, resolution, radius, out, per_band, weight_colors } => {
            with_precision(&checkpoint, |p| match p {
                Precision::F32 => cmd_extract_mesh::<f32>(
                    &checkpoint, resolution, radius, &out, per_band, weight_colors,
                ),
                Precision::F64 => cmd_extract_mesh::<f64>(
                    &checkpoint, resolution, radius, &out, per_band, weight_colors,
                ),
            })
        }
        Command::Eval { checkpoint, dataset, out, reference_mesh, mesh_resolution, seed } => {
            with_precision(&checkpoint, |p| match p {
                Precision::F32 => cmd_eval::<f32>(
                    &checkpoint, &dataset, &out, reference_mesh.as_deref(), mesh_resolution, seed,
                ),
                Precision::F64 => cmd_eval::<f64>(
                    &checkpoint, &dataset, &out, reference_mesh.as_deref(), mesh_resolution, seed,
                ),
            })
        }
        Command::InspectWeights { checkpoint, points, out } => {
            with_precision(&checkpoint, |p| match p {
                Precision::F32 => cmd_inspect_weights::<f32>(&checkpoint, &points, &out),
                Precision::F64 => cmd_inspect_weights::<f64>(&checkpoint, &points, &out),
            })
        }
    }
}

fn with_precision(checkpoint: &Path, f: impl FnOnce(Precision) -> Result<()>) -> Result<()> {
    let meta = read_checkpoint_meta(checkpoint)?;
    f(meta.precision)
}

fn cmd_train<T: Real>(cfg: RunConfig, resume: Option<&Path>) -> Result<()> {
    let ds = read_dataset(&cfg.dataset_dir)?;
    let mut cfg = cfg;
    // Composite against the dataset's own background.
    cfg.render.background = ds.background;
    std::fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| Error::io(format!("creating {}", cfg.output_dir.display()), e))?;
    cfg.save(&cfg.output_dir.join("config.toml"))?;

    let data = TrainData::from_dataset(&ds)?;
    let mut trainer = match resume {
        Some(path) => {
            Trainer::<T>::resume(path, cfg.train.clone(), cfg.render.clone(), ds.bounding_radius)?
        }
        None => {
            let mut rng = seeded(cfg.train.seed);
            let model = FieldModel::<T>::new(cfg.field.clone(), &mut rng)?;
            Trainer::new(model, cfg.train.clone(), cfg.render.clone(), ds.bounding_radius)?
        }
    };
    let arts = train_loop(&mut trainer, &data, &cfg.output_dir, |row| {
        println!(
            "iter {:>6}  loss {:.5}  rgb {:.5}  eik {:.5}  lr {:.5}  alpha {:.2}  beta {:.4}",
            row.iteration, row.loss, row.rgb_loss, row.eikonal_loss, row.lr, row.alpha, row.beta
        );
    })?;
    println!("metrics: {}", arts.metrics_log.display());
    println!("checkpoint: {}", arts.final_checkpoint.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_render<T: Real>(
    checkpoint: &Path,
    dataset: Option<&Path>,
    view_index: usize,
    pose: Option<&Path>,
    radius: f64,
    out: &Path,
    seed: u64,
    samples: usize,
) -> Result<()> {
    let (model, _) = load_field_model::<T>(checkpoint)?;
    let mut render = RenderConfig {
        n_coarse: samples,
        n_importance: samples,
        ..RenderConfig::default()
    };
    let (camera, radius) = match (dataset, pose) {
        (Some(dir), None) => {
            let ds = read_dataset(dir)?;
            let view = ds.views.get(view_index).ok_or_else(|| {
                Error::Validation(format!(
                    "view index {view_index} out of range (dataset has {} views)",
                    ds.views.len()
                ))
            })?;
            render.background = ds.background;
            (view.camera.clone(), ds.bounding_radius)
        }
        (None, Some(path)) => (read_camera_file(path)?, radius),
        _ => {
            return Err(Error::Config(
                "render needs exactly one of --dataset or --pose".into(),
            ))
        }
    };
    let img = render_image(&model, &camera, radius, &render, seed)?;
    write_png(out, &img, camera.width, camera.height)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_extract_mesh<T: Real>(
    checkpoint: &Path,
    resolution: usize,
    radius: f64,
    out: &Path,
    per_band: bool,
    weight_colors: bool,
) -> Result<()> {
    let (model, _) = load_field_model::<T>(checkpoint)?;
    let grid = sample_field_grid(&model, radius, resolution, frebis::field::FeatureMode::Standard)?;
    let mesh = marching_cubes(&grid, 0.0);
    write_obj(out, &mesh)?;
    println!("wrote {} ({} vertices, {} triangles)", out.display(), mesh.vertices.len(), mesh.triangles.len());

    if per_band {
        for (band, tag) in ["low", "mid", "high"].iter().enumerate() {
            let band_mesh = per_band_mesh(&model, radius, resolution, band)?;
            let path = with_suffix(out, &format!("_band_{tag}"), "obj");
            write_obj(&path, &band_mesh)?;
            println!("wrote {}", path.display());
        }
    }
    if weight_colors {
        let colors = weight_norm_colors(&model, &mesh)?;
        let path = with_suffix(out, "_weights", "ply");
        write_ply(&path, &mesh, Some(&colors))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str, ext: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("mesh");
    path.with_file_name(format!("{stem}{suffix}.{ext}"))
}

#[derive(Serialize)]
struct EvalImageRow {
    view: String,
    psnr: f64,
    ssim: f64,
}

#[derive(Serialize)]
struct EvalReport {
    images: Vec<EvalImageRow>,
    mean_psnr: f64,
    mean_ssim: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    chamfer: Option<f64>,
}

fn cmd_eval<T: Real>(
    checkpoint: &Path,
    dataset: &Path,
    out: &Path,
    reference_mesh: Option<&Path>,
    mesh_resolution: usize,
    seed: u64,
) -> Result<()> {
    let (model, _) = load_field_model::<T>(checkpoint)?;
    let ds = read_dataset(dataset)?;
    let holdout = ds.holdout_views();
    if holdout.is_empty() {
        return Err(Error::Validation("dataset has no holdout views".into()));
    }
    let render = RenderConfig { background: ds.background, ..RenderConfig::default() };

    let mut images = Vec::new();
    for view in &holdout {
        let img = render_image(&model, &view.camera, ds.bounding_radius, &render, seed)?;
        images.push(EvalImageRow {
            view: view.name.clone(),
            psnr: psnr(&img, &view.image)?,
            ssim: ssim(&img, &view.image, view.camera.width, view.camera.height)?,
        });
    }
    let mean_psnr = images.iter().map(|r| r.psnr).sum::<f64>() / images.len() as f64;
    let mean_ssim = images.iter().map(|r| r.ssim).sum::<f64>() / images.len() as f64;

    let chamfer_d = match reference_mesh {
        Some(path) => {
            let reference = read_obj_vertices(path)?;
            let grid = sample_field_grid(
                &model,
                ds.bounding_radius,
                mesh_resolution,
                frebis::field::FeatureMode::Standard,
            )?;
            let mesh: Mesh = marching_cubes(&grid, 0.0);
            if mesh.vertices.is_empty() {
                return Err(Error::Validation("extracted mesh is empty".into()));
            }
            Some(chamfer(&mesh.vertices, &reference)?)
        }
        None => None,
    };

    let report = EvalReport { images, mean_psnr, mean_ssim, chamfer: chamfer_d };
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(out, &json).map_err(|e| Error::io(format!("writing {}", out.display()), e))?;
    println!("mean PSNR {mean_psnr:.2} dB, mean SSIM {mean_ssim:.4}");
    if let Some(c) = chamfer_d {
        println!("chamfer {c:.5}");
    }
    println!("wrote {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct InspectionRow {
    point: [f64; 3],
    #[serde(flatten)]
    inspection: frebis::weighting::WeightInspection,
}

fn cmd_inspect_weights<T: Real>(checkpoint: &Path, points: &Path, out: &Path) -> Result<()> {
    let (model, _) = load_field_model::<T>(checkpoint)?;
    let text = std::fs::read_to_string(points)
        .map_err(|e| Error::io(format!("reading {}", points.display()), e))?;
    let pts: Vec<[f64; 3]> = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", points.display())))?;
    if pts.is_empty() {
        return Err(Error::Validation("points file is empty".into()));
    }

    let buf = Buf::from_fn(pts.len(), 3, |r, c| T::from_f64(pts[r][c]));
    let features = model.band_feature_columns(&buf)?;
    let tau = model.config().tau;
    let mut rows = Vec::with_capacity(pts.len());
    for (point, cols) in pts.iter().zip(&features) {
        let inspection = inspect_point([&cols[0], &cols[1], &cols[2]], tau)?;
        rows.push(InspectionRow { point: *point, inspection });
    }
    let json = serde_json::to_string_pretty(&rows).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(out, &json).map_err(|e| Error::io(format!("writing {}", out.display()), e))?;
    println!("wrote {} ({} points)", out.display(), rows.len());
    Ok(())
}
