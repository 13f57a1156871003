//! Posed multi-view datasets on disk.
//!
//! Layout: `images/NNNN.png` (8-bit RGB) plus a single `cameras.json` holding
//! the bounding radius, background color, holdout tags, and per-image
//! intrinsics/extrinsics (camera-to-world as 12 row-major numbers at full
//! precision, so pose round-trips are lossless).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::rendering::Camera;
use crate::tensor::Buf;
use crate::{Error, Result};

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// One posed image. `image` is row-major (H·W)×3 RGB in [0,1], always a
/// multiple of 1/255 so PNG round-trips are exact.
#[derive(Debug, Clone)]
pub struct PosedView {
    pub name: String,
    pub camera: Camera,
    pub image: Buf<f64>,
    pub holdout: bool,
}

#[derive(Debug, Clone)]
pub struct PosedDataset {
    pub views: Vec<PosedView>,
    pub bounding_radius: f64,
    pub background: [f64; 3],
}

impl PosedDataset {
    pub fn train_views(&self) -> Vec<&PosedView> {
        self.views.iter().filter(|v| !v.holdout).collect()
    }

    pub fn holdout_views(&self) -> Vec<&PosedView> {
        self.views.iter().filter(|v| v.holdout).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::Validation("dataset has no views".into()));
        }
        if self.bounding_radius <= 0.0 {
            return Err(Error::Validation("bounding radius must be positive".into()));
        }
        let (w, h) = (self.views[0].camera.width, self.views[0].camera.height);
        for v in &self.views {
            v.camera.validate()?;
            if (v.camera.width, v.camera.height) != (w, h) {
                return Err(Error::Validation(format!(
                    "view {} size differs from the first view",
                    v.name
                )));
            }
            if v.image.shape() != (w * h, 3) {
                return Err(Error::Validation(format!(
                    "view {} image shape {:?} does not match its camera",
                    v.name,
                    v.image.shape()
                )));
            }
            // Cameras must look at scene content.
            let axis = v.camera.optical_axis();
            let central = crate::rendering::Ray { origin: v.camera.translation, dir: axis };
            if central.sphere_interval(self.bounding_radius).is_none() {
                return Err(Error::Validation(format!(
                    "view {} does not look at the bounding sphere",
                    v.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct CameraRecord {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    /// Rotation then translation, row-major: [r00 r01 r02 tx, r10 ... ].
    camera_to_world: [f64; 12],
}

#[derive(Serialize, Deserialize)]
struct CamerasFile {
    format_version: u32,
    bounding_radius: f64,
    background_rgb: [f64; 3],
    holdout: Vec<String>,
    cameras: BTreeMap<String, CameraRecord>,
}

fn to_record(cam: &Camera) -> CameraRecord {
    let r = &cam.rotation;
    let t = &cam.translation;
    CameraRecord {
        fx: cam.fx,
        fy: cam.fy,
        cx: cam.cx,
        cy: cam.cy,
        width: cam.width,
        height: cam.height,
        camera_to_world: [
            r[0][0], r[0][1], r[0][2], t[0], r[1][0], r[1][1], r[1][2], t[1], r[2][0], r[2][1],
            r[2][2], t[2],
        ],
    }
}

fn from_record(rec: &CameraRecord) -> Camera {
    let m = &rec.camera_to_world;
    Camera {
        fx: rec.fx,
        fy: rec.fy,
        cx: rec.cx,
        cy: rec.cy,
        width: rec.width,
        height: rec.height,
        rotation: [[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]],
        translation: [m[3], m[7], m[11]],
    }
}

/// Quantize a [0,1] float image to the 8-bit grid PNG stores.
pub fn quantize_image(img: &Buf<f64>) -> Buf<f64> {
    img.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
}

fn image_to_png_bytes(img: &Buf<f64>, width: usize, height: usize) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(width * height * 3);
    for r in 0..width * height {
        for c in 0..3 {
            bytes.push((img.get(r, c).clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    debug_assert_eq!(bytes.len(), width * height * 3);
    bytes
}

/// Write a row-major (H·W)×3 [0,1] image as an 8-bit RGB PNG.
pub fn write_png(path: &Path, img: &Buf<f64>, width: usize, height: usize) -> Result<()> {
    if img.shape() != (width * height, 3) {
        return Err(Error::Shape(format!(
            "image shape {:?} does not match {width}×{height}",
            img.shape()
        )));
    }
    let bytes = image_to_png_bytes(img, width, height);
    let rgb = image::RgbImage::from_raw(width as u32, height as u32, bytes)
        .expect("image buffer size");
    rgb.save(path)
        .map_err(|e| Error::Format(format!("writing {}: {e}", path.display())))
}

/// Read a single camera pose from a standalone JSON file using the same
/// record layout as cameras.json entries.
pub fn read_camera_file(path: &Path) -> Result<Camera> {
    let json = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let rec: CameraRecord = serde_json::from_str(&json)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let cam = from_record(&rec);
    cam.validate()?;
    Ok(cam)
}

pub fn write_dataset(ds: &PosedDataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    let images_dir = dir.join("images");
    fs::create_dir_all(&images_dir)
        .map_err(|e| Error::io(format!("creating {}", images_dir.display()), e))?;

    let mut cameras = BTreeMap::new();
    let mut holdout = Vec::new();
    for v in &ds.views {
        cameras.insert(v.name.clone(), to_record(&v.camera));
        if v.holdout {
            holdout.push(v.name.clone());
        }
        let png_path = images_dir.join(format!("{}.png", v.name));
        let bytes = image_to_png_bytes(&v.image, v.camera.width, v.camera.height);
        let img = image::RgbImage::from_raw(v.camera.width as u32, v.camera.height as u32, bytes)
            .expect("image buffer size");
        img.save(&png_path)
            .map_err(|e| Error::Format(format!("writing {}: {e}", png_path.display())))?;
    }

    let file = CamerasFile {
        format_version: DATASET_FORMAT_VERSION,
        bounding_radius: ds.bounding_radius,
        background_rgb: ds.background,
        holdout,
        cameras,
    };
    let json = serde_json::to_string_pretty(&file).map_err(|e| Error::Format(e.to_string()))?;
    let cam_path = dir.join("cameras.json");
    fs::write(&cam_path, json)
        .map_err(|e| Error::io(format!("writing {}", cam_path.display()), e))
}

pub fn read_dataset(dir: &Path) -> Result<PosedDataset> {
    let cam_path = dir.join("cameras.json");
    let json = fs::read_to_string(&cam_path)
        .map_err(|e| Error::io(format!("reading {}", cam_path.display()), e))?;
    let file: CamerasFile =
        serde_json::from_str(&json).map_err(|e| Error::Format(format!("cameras.json: {e}")))?;
    if file.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported dataset format version {} (expected {})",
            file.format_version, DATASET_FORMAT_VERSION
        )));
    }

    let images_dir = dir.join("images");
    let mut png_names: Vec<String> = fs::read_dir(&images_dir)
        .map_err(|e| Error::io(format!("reading {}", images_dir.display()), e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            name.strip_suffix(".png").map(str::to_owned)
        })
        .collect();
    png_names.sort();

    for name in &png_names {
        if !file.cameras.contains_key(name) {
            return Err(Error::Validation(format!(
                "image {name}.png has no camera entry in cameras.json"
            )));
        }
    }
    for name in file.cameras.keys() {
        if !png_names.contains(name) {
            return Err(Error::Validation(format!(
                "camera entry {name} has no image file images/{name}.png"
            )));
        }
    }

    let mut views = Vec::with_capacity(file.cameras.len());
    for (name, rec) in &file.cameras {
        let camera = from_record(rec);
        let png_path = images_dir.join(format!("{name}.png"));
        let img = image::open(&png_path)
            .map_err(|e| Error::Format(format!("reading {}: {e}", png_path.display())))?
            .into_rgb8();
        if (img.width() as usize, img.height() as usize) != (camera.width, camera.height) {
            return Err(Error::Validation(format!(
                "image {name}.png size {}×{} does not match camera {}×{}",
                img.width(),
                img.height(),
                camera.width,
                camera.height
            )));
        }
        let raw = img.into_raw();
        let mut buf = Buf::zeros(camera.width * camera.height, 3);
        for (i, px) in raw.chunks_exact(3).enumerate() {
            for c in 0..3 {
                buf.set(i, c, px[c] as f64 / 255.0);
            }
        }
        views.push(PosedView {
            name: name.clone(),
            camera,
            image: buf,
            holdout: file.holdout.contains(name),
        });
    }

    Ok(PosedDataset {
        views,
        bounding_radius: file.bounding_radius,
        background: file.background_rgb,
    })
}
