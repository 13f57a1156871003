//! Synthetic ground truth: analytic SDF scenes, a sphere-tracing reference
//! renderer, and posed-dataset generation.
//!
//! Scenes are normalized to the unit bounding sphere. The reference renderer
//! shades surface hits with a fixed-light Lambert term, which gives training
//! images view-consistent geometry with simple appearance.

use rayon::prelude::*;

use crate::dataset::{quantize_image, PosedDataset, PosedView};
use crate::rendering::{look_at, Camera, Ray};
use crate::tensor::{seeded, uniform_f64, Buf, Rng};
use crate::{Error, Result};

/// Composed signed distance field. Every primitive is 1-Lipschitz; union
/// (min) preserves the bound and scaling rescales the distance, so the
/// composed field keeps a known Lipschitz constant.
#[derive(Debug, Clone)]
pub enum Sdf {
    Sphere { radius: f64 },
    Box { half_extents: [f64; 3] },
    /// Ring around the z axis.
    Torus { major: f64, minor: f64 },
    Union(std::boxed::Box<Sdf>, std::boxed::Box<Sdf>),
    Translate { offset: [f64; 3], inner: std::boxed::Box<Sdf> },
    Scale { factor: f64, inner: std::boxed::Box<Sdf> },
}

impl Sdf {
    pub fn eval(&self, p: [f64; 3]) -> f64 {
        match self {
            Sdf::Sphere { radius } => norm3(p) - radius,
            Sdf::Box { half_extents } => {
                let q = [
                    p[0].abs() - half_extents[0],
                    p[1].abs() - half_extents[1],
                    p[2].abs() - half_extents[2],
                ];
                let outside = norm3([q[0].max(0.0), q[1].max(0.0), q[2].max(0.0)]);
                let inside = q[0].max(q[1]).max(q[2]).min(0.0);
                outside + inside
            }
            Sdf::Torus { major, minor } => {
                let ring = (p[0] * p[0] + p[1] * p[1]).sqrt() - major;
                (ring * ring + p[2] * p[2]).sqrt() - minor
            }
            Sdf::Union(a, b) => a.eval(p).min(b.eval(p)),
            Sdf::Translate { offset, inner } => {
                inner.eval([p[0] - offset[0], p[1] - offset[1], p[2] - offset[2]])
            }
            Sdf::Scale { factor, inner } => {
                inner.eval([p[0] / factor, p[1] / factor, p[2] / factor]) * factor
            }
        }
    }

    /// Central-difference surface normal.
    pub fn gradient(&self, p: [f64; 3], eps: f64) -> [f64; 3] {
        let mut g = [0.0; 3];
        for axis in 0..3 {
            let mut lo = p;
            let mut hi = p;
            lo[axis] -= eps;
            hi[axis] += eps;
            g[axis] = (self.eval(hi) - self.eval(lo)) / (2.0 * eps);
        }
        g
    }
}

fn norm3(p: [f64; 3]) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

/// Surface color as a function of the hit point.
#[derive(Debug, Clone)]
pub enum ColorField {
    Constant([f64; 3]),
    /// 3-D checkerboard with the given spatial frequency.
    Checker { frequency: f64, a: [f64; 3], b: [f64; 3] },
    /// Azimuthal stripes around the z axis.
    RadialStripes { count: usize, a: [f64; 3], b: [f64; 3] },
}

impl ColorField {
    pub fn eval(&self, p: [f64; 3]) -> [f64; 3] {
        match self {
            ColorField::Constant(c) => *c,
            ColorField::Checker { frequency, a, b } => {
                let s = (p[0] * frequency).floor() as i64
                    + (p[1] * frequency).floor() as i64
                    + (p[2] * frequency).floor() as i64;
                if s.rem_euclid(2) == 0 {
                    *a
                } else {
                    *b
                }
            }
            ColorField::RadialStripes { count, a, b } => {
                let az = p[1].atan2(p[0]); // [−π, π]
                let t = (az / std::f64::consts::PI + 1.0) / 2.0; // [0, 1]
                if ((t * *count as f64).floor() as i64).rem_euclid(2) == 0 {
                    *a
                } else {
                    *b
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct AnalyticScene {
    pub sdf: Sdf,
    pub color: ColorField,
    pub background: [f64; 3],
    pub bounding_radius: f64,
    pub light_dir: [f64; 3],
}

pub const SPHERE_TRACE_TOL: f64 = 1e-5;
const SPHERE_TRACE_STEPS: usize = 256;

impl AnalyticScene {
    /// Built-in scenes by name.
    pub fn by_name(name: &str) -> Result<AnalyticScene> {
        let light = {
            let l = [0.4, 0.3, 0.85];
            let n = norm3(l);
            [l[0] / n, l[1] / n, l[2] / n]
        };
        match name {
            "sphere" => Ok(AnalyticScene {
                sdf: Sdf::Sphere { radius: 0.8 },
                color: ColorField::Constant([0.8, 0.3, 0.2]),
                background: [1.0, 1.0, 1.0],
                bounding_radius: 1.0,
                light_dir: light,
            }),
            "torus-checker" => Ok(AnalyticScene {
                sdf: Sdf::Torus { major: 0.6, minor: 0.25 },
                color: ColorField::Checker { frequency: 8.0, a: [0.9, 0.9, 0.2], b: [0.2, 0.2, 0.8] },
                background: [1.0, 1.0, 1.0],
                bounding_radius: 1.0,
                light_dir: light,
            }),
            // Smooth low-frequency sphere plus a finely checkered torus, so
            // the low and high frequency encoders face different content.
            "freq-mix" => Ok(AnalyticScene {
                sdf: Sdf::Union(
                    Box::new(Sdf::Sphere { radius: 0.45 }),
                    Box::new(Sdf::Torus { major: 0.7, minor: 0.12 }),
                ),
                color: ColorField::Checker {
                    frequency: 16.0,
                    a: [0.85, 0.25, 0.2],
                    b: [0.15, 0.7, 0.3],
                },
                background: [1.0, 1.0, 1.0],
                bounding_radius: 1.0,
                light_dir: light,
            }),
            _ => Err(Error::Validation(format!(
                "unknown scene {name:?}; available: sphere, torus-checker, freq-mix"
            ))),
        }
    }

    /// March `t ← t + d(r(t))` until |d| < tol. Returns (t, hit point).
    pub fn sphere_trace(&self, ray: &Ray) -> Option<(f64, [f64; 3])> {
        let (t0, t1) = ray.sphere_interval(self.bounding_radius)?;
        let mut t = t0;
        for _ in 0..SPHERE_TRACE_STEPS {
            let p = ray.at(t);
            let d = self.sdf.eval(p);
            if d.abs() < SPHERE_TRACE_TOL {
                return Some((t, p));
            }
            t += d;
            if t > t1 {
                return None;
            }
        }
        None
    }

    /// Reference image: sphere-trace each pixel, Lambert-shade hits.
    pub fn render_ground_truth(&self, cam: &Camera) -> Result<Buf<f64>> {
        cam.validate()?;
        let (w, h) = (cam.width, cam.height);
        let rows: Result<Vec<Vec<[f64; 3]>>> = (0..h)
            .into_par_iter()
            .map(|v| {
                let mut row = Vec::with_capacity(w);
                for u in 0..w {
                    let ray = cam.generate_ray(u, v)?;
                    row.push(match self.sphere_trace(&ray) {
                        Some((_, p)) => {
                            let g = self.sdf.gradient(p, 1e-5);
                            let n = norm3(g).max(1e-12);
                            let lambert = ((g[0] * self.light_dir[0]
                                + g[1] * self.light_dir[1]
                                + g[2] * self.light_dir[2])
                                / n)
                                .max(0.2);
                            let c = self.color.eval(p);
                            [c[0] * lambert, c[1] * lambert, c[2] * lambert]
                        }
                        None => self.background,
                    });
                }
                Ok(row)
            })
            .collect();
        let mut img = Buf::zeros(w * h, 3);
        let mut i = 0;
        for row in rows? {
            for px in row {
                for c in 0..3 {
                    img.set(i, c, px[c]);
                }
                i += 1;
            }
        }
        Ok(img)
    }
}

/// Cameras on a radius-3 sphere looking at the origin, stratified in azimuth
/// with jittered elevation; every 10th view is tagged holdout.
pub fn make_dataset(
    scene: &AnalyticScene,
    n_views: usize,
    image_size: usize,
    seed: u64,
) -> Result<PosedDataset> {
    if n_views < 2 {
        return Err(Error::Validation("need at least 2 views".into()));
    }
    let mut rng: Rng = seeded(seed);
    let orbit_radius = 3.0;
    let fx = 1.2 * image_size as f64;
    let mut views = Vec::with_capacity(n_views);
    for i in 0..n_views {
        let az = 2.0 * std::f64::consts::PI * (i as f64 + uniform_f64(&mut rng)) / n_views as f64;
        let el = (uniform_f64(&mut rng) - 0.5) * 2.0; // radians, ±1.0
        let eye = [
            orbit_radius * el.cos() * az.cos(),
            orbit_radius * el.cos() * az.sin(),
            orbit_radius * el.sin(),
        ];
        let camera = look_at(eye, [0.0; 3], fx, image_size, image_size);
        let image = quantize_image(&scene.render_ground_truth(&camera)?);
        views.push(PosedView { name: format!("{i:04}"), camera, image, holdout: i % 10 == 0 });
    }
    Ok(PosedDataset {
        views,
        bounding_radius: scene.bounding_radius,
        background: scene.background,
    })
}
