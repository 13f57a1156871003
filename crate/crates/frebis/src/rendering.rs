//! Pinhole cameras, ray/depth sampling, and differentiable volume rendering.
//!
//! Rays are clipped to the scene bounding sphere. Depths come from a
//! stratified coarse pass refined by one round of importance sampling; the
//! quadrature is alpha compositing with transmittance from an exclusive
//! cumulative sum, which satisfies the telescoping identity
//! Σᵢ Tᵢaᵢ + T_{N+1} = 1 exactly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::field::{FeatureMode, FieldModel};
use crate::tensor::{seeded, uniform_f64, Buf, Graph, ParamBinding, Real, Rng, Var};
use crate::{Error, Result};

/// Pinhole camera: intrinsics in pixels plus a camera-to-world rigid
/// transform. Camera space looks down +z, x right, y down.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major camera-to-world rotation.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::Validation("camera focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Validation("camera image size must be positive".into()));
        }
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                // R·Rᵀ = I within 1e-6.
                let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-6 {
                    return Err(Error::Validation("camera rotation is not orthonormal".into()));
                }
            }
        }
        Ok(())
    }

    /// World-space ray through the center of pixel (u, v).
    pub fn generate_ray(&self, u: usize, v: usize) -> Result<Ray> {
        if u >= self.width || v >= self.height {
            return Err(Error::Validation(format!(
                "pixel ({u}, {v}) outside {}×{} image",
                self.width, self.height
            )));
        }
        let xc = (u as f64 + 0.5 - self.cx) / self.fx;
        let yc = (v as f64 + 0.5 - self.cy) / self.fy;
        let cam_dir = [xc, yc, 1.0];
        let mut dir = [0.0; 3];
        for i in 0..3 {
            dir[i] = (0..3).map(|k| self.rotation[i][k] * cam_dir[k]).sum();
        }
        let n = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
        Ok(Ray { origin: self.translation, dir: [dir[0] / n, dir[1] / n, dir[2] / n] })
    }

    /// Unit vector along the optical axis in world space.
    pub fn optical_axis(&self) -> [f64; 3] {
        [self.rotation[0][2], self.rotation[1][2], self.rotation[2][2]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: [f64; 3],
    pub dir: [f64; 3],
}

impl Ray {
    pub fn at(&self, t: f64) -> [f64; 3] {
        [
            self.origin[0] + t * self.dir[0],
            self.origin[1] + t * self.dir[1],
            self.origin[2] + t * self.dir[2],
        ]
    }

    /// Intersection interval with the origin-centered sphere of the given
    /// radius; `None` when the ray misses (those pixels show background).
    pub fn sphere_interval(&self, radius: f64) -> Option<(f64, f64)> {
        let o = self.origin;
        let d = self.dir;
        let b = o[0] * d[0] + o[1] * d[1] + o[2] * d[2];
        let c = o[0] * o[0] + o[1] * o[1] + o[2] * o[2] - radius * radius;
        let disc = b * b - c;
        if disc <= 0.0 {
            return None;
        }
        let s = disc.sqrt();
        let t_far = -b + s;
        if t_far <= 0.0 {
            return None;
        }
        Some(((-b - s).max(0.0), t_far))
    }
}

/// Sampler and compositing knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub n_coarse: usize,
    pub n_importance: usize,
    pub background: [f64; 3],
    /// Rays per parallel chunk in `render_image`. Output does not depend on
    /// the thread count (each chunk gets its own RNG stream), but it does
    /// depend on this value through the ray→stream grouping. Graph memory
    /// scales with chunk_size × samples per ray; keep the product modest.
    pub chunk_size: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig { n_coarse: 64, n_importance: 64, background: [1.0, 1.0, 1.0], chunk_size: 128 }
    }
}

/// One uniform draw per equal-width bin; strictly increasing.
pub fn stratified_sample(t_near: f64, t_far: f64, n: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    if !(t_near < t_far) || n == 0 {
        return Err(Error::Validation(format!(
            "bad sampling interval [{t_near}, {t_far}] with {n} samples"
        )));
    }
    let w = (t_far - t_near) / n as f64;
    Ok((0..n).map(|i| t_near + (i as f64 + uniform_f64(rng)) * w).collect())
}

/// Draw `m` extra depths from the piecewise-constant PDF ∝ weights over the
/// segments between consecutive coarse depths, then merge and sort. All-zero
/// weights fall back to stratified sampling; duplicates within 1e-9 are
/// dropped.
pub fn importance_resample(
    coarse: &[f64],
    weights: &[f64],
    m: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if coarse.len() < 2 {
        return Err(Error::Validation("importance resampling needs >= 2 coarse depths".into()));
    }
    if weights.iter().any(|&w| w < 0.0) {
        return Err(Error::Validation("negative quadrature weight".into()));
    }
    let n_seg = coarse.len() - 1;
    let seg_w = &weights[..n_seg.min(weights.len())];
    let total: f64 = seg_w.iter().sum();

    let mut extra = Vec::with_capacity(m);
    if total <= 0.0 {
        extra = stratified_sample(coarse[0], coarse[n_seg], m, rng)?;
    } else {
        // Inverse-CDF draws over segments.
        let mut cdf = Vec::with_capacity(n_seg + 1);
        let mut acc = 0.0;
        cdf.push(0.0);
        for &w in seg_w {
            acc += w / total;
            cdf.push(acc);
        }
        *cdf.last_mut().unwrap() = 1.0;
        for _ in 0..m {
            let u = uniform_f64(rng);
            let seg = match cdf.binary_search_by(|p| p.partial_cmp(&u).unwrap()) {
                Ok(i) => i.min(n_seg - 1),
                Err(i) => (i - 1).min(n_seg - 1),
            };
            let lo = cdf[seg];
            let hi = cdf[seg + 1];
            let frac = if hi > lo { (u - lo) / (hi - lo) } else { 0.5 };
            extra.push(coarse[seg] + frac * (coarse[seg + 1] - coarse[seg]));
        }
    }

    let mut all: Vec<f64> = coarse.iter().copied().chain(extra).collect();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    all.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    Ok(all)
}

/// Per-ray quadrature on the graph.
pub struct CompositeOutput {
    /// B×3 pixel colors.
    pub rgb: Var,
    /// B×1 accumulated alpha Σ Tᵢaᵢ.
    pub alpha: Var,
    /// B×N per-sample quadrature weights Tᵢaᵢ.
    pub sample_weights: Var,
}

/// Composite densities and colors along rays. `sigma` and each color channel
/// are B×N (ray-major); `deltas` holds the segment lengths.
pub fn composite<T: Real>(
    g: &mut Graph<T>,
    sigma: Var,
    deltas: &Buf<T>,
    colors: [Var; 3],
    background: [f64; 3],
) -> Result<CompositeOutput> {
    if g.value(sigma).data().iter().any(|&s| s < T::zero()) {
        return Err(Error::Validation("negative density in composite".into()));
    }
    let d = g.constant(deltas.clone());
    let sd = g.mul(sigma, d);
    // Tᵢ = exp(−Σ_{j<i} σⱼδⱼ); aᵢ = 1 − exp(−σᵢδᵢ).
    let pre = g.exclusive_cumsum_rows(sd);
    let neg_pre = g.neg(pre);
    let trans = g.exp(neg_pre);
    let neg_sd = g.neg(sd);
    let esd = g.exp(neg_sd);
    let a = {
        let na = g.neg(esd);
        g.add_const(na, 1.0)
    };
    let w = g.mul(trans, a);
    let alpha = g.sum_rows(w);

    // Residual transmittance past the last sample.
    let total = g.sum_rows(sd);
    let neg_total = g.neg(total);
    let resid = g.exp(neg_total);

    let mut channels = Vec::with_capacity(3);
    for (i, &c) in colors.iter().enumerate() {
        let wc = g.mul(w, c);
        let fg = g.sum_rows(wc);
        let bg = g.mul_const(resid, background[i]);
        channels.push(g.add(fg, bg));
    }
    let rgb = g.concat_cols(&channels);
    Ok(CompositeOutput { rgb, alpha, sample_weights: w })
}

/// Depth samples for one ray batch, produced by the coarse+importance
/// scheme. All rays in a batch share the sample count.
pub struct RaySamples {
    /// Depths per ray, each of length `n`.
    pub depths: Vec<Vec<f64>>,
    /// Per-ray (t_near, t_far); the last segment length is t_far − t_N.
    pub bounds: Vec<(f64, f64)>,
    pub n: usize,
}

/// A rendered (differentiable) ray batch.
pub struct RenderedRays<T: Real> {
    /// B×3 predicted colors.
    pub rgb: Var,
    /// B×1 accumulated alpha.
    pub alpha: Var,
    /// All sample points used, (B·N)×3 — Eikonal jitter draws from these.
    pub points: Buf<T>,
}

/// Coarse pass: stratified samples, inference-only density, quadrature
/// weights, then importance refinement. Returns per-ray depths padded to a
/// common count by stratified fill (dedup can shorten rays).
pub fn sample_depths<T: Real>(
    model: &FieldModel<T>,
    rays: &[Ray],
    bounds: &[(f64, f64)],
    cfg: &RenderConfig,
    rng: &mut Rng,
) -> Result<RaySamples> {
    assert_eq!(rays.len(), bounds.len());
    let n_total = cfg.n_coarse + cfg.n_importance;
    let mut coarse_depths = Vec::with_capacity(rays.len());
    let mut pts = Buf::zeros(rays.len() * cfg.n_coarse, 3);
    for (i, (ray, &(t0, t1))) in rays.iter().zip(bounds).enumerate() {
        let d = stratified_sample(t0, t1, cfg.n_coarse, rng)?;
        for (j, &t) in d.iter().enumerate() {
            let p = ray.at(t);
            for c in 0..3 {
                pts.set(i * cfg.n_coarse + j, c, T::from_f64(p[c]));
            }
        }
        coarse_depths.push(d);
    }

    // Inference density → quadrature weights for the refinement PDF.
    let mut g = Graph::inference();
    let bind = model.bind(&mut g, false);
    let out = model.decode(&mut g, &bind, &pts, FeatureMode::Standard)?;
    let sigma = model.sdf_to_density(&mut g, &bind, out.sdf);
    let sig = g.value(sigma);

    let mut depths = Vec::with_capacity(rays.len());
    for (i, coarse) in coarse_depths.iter().enumerate() {
        let (t0, t1) = bounds[i];
        let mut w: Vec<f64> = Vec::with_capacity(cfg.n_coarse);
        let mut acc = 0.0_f64;
        for j in 0..cfg.n_coarse {
            let s = Real::as_f64(sig.get(i * cfg.n_coarse + j, 0));
            let delta = if j + 1 < cfg.n_coarse { coarse[j + 1] - coarse[j] } else { t1 - coarse[j] };
            let a = 1.0 - (-s * delta).exp();
            w.push((-acc).exp() * a);
            acc += s * delta;
        }
        let mut d = importance_resample(coarse, &w, cfg.n_importance, rng)?;
        // Dedup may have removed a few; top up uniformly at random.
        while d.len() < n_total {
            let t = t0 + (t1 - t0) * uniform_f64(rng);
            match d.binary_search_by(|p| p.partial_cmp(&t).unwrap()) {
                Ok(_) => {}
                Err(pos) => d.insert(pos, t),
            }
        }
        d.truncate(n_total);
        depths.push(d);
    }
    Ok(RaySamples { depths, bounds: bounds.to_vec(), n: n_total })
}

/// Differentiable render of a ray batch on an existing graph. Spatial SDF
/// gradients feed both the color network and (outside) the Eikonal loss.
pub fn render_rays<T: Real>(
    model: &FieldModel<T>,
    g: &mut Graph<T>,
    bind: &ParamBinding,
    rays: &[Ray],
    samples: &RaySamples,
    cfg: &RenderConfig,
) -> Result<RenderedRays<T>> {
    let b = rays.len();
    let n = samples.n;
    assert_eq!(samples.depths.len(), b);

    let mut pts = Buf::zeros(b * n, 3);
    let mut dirs = Buf::zeros(b * n, 3);
    let mut deltas = Buf::zeros(b, n);
    for (i, ray) in rays.iter().enumerate() {
        let d = &samples.depths[i];
        let t_far = samples.bounds[i].1;
        for j in 0..n {
            let p = ray.at(d[j]);
            for c in 0..3 {
                pts.set(i * n + j, c, T::from_f64(p[c]));
                dirs.set(i * n + j, c, T::from_f64(ray.dir[c]));
            }
            let next = if j + 1 < n { d[j + 1] } else { t_far };
            deltas.set(i, j, T::from_f64(next - d[j]));
        }
    }

    let (out, grad) = model.decode_with_gradient(g, bind, &pts, FeatureMode::Standard)?;
    let sigma_flat = model.sdf_to_density(g, bind, out.sdf);
    let sigma = g.reshape(sigma_flat, b, n);

    let pts_var = g.constant(pts.clone());
    let dirs_var = g.constant(dirs);
    let rgb_flat = model.color(g, bind, out.appearance, pts_var, dirs_var, grad);
    let mut colors = [sigma; 3];
    for c in 0..3 {
        let ch = g.slice_cols(rgb_flat, c, c + 1);
        colors[c] = g.reshape(ch, b, n);
    }

    let comp = composite(g, sigma, &deltas, colors, cfg.background)?;
    Ok(RenderedRays { rgb: comp.rgb, alpha: comp.alpha, points: pts })
}

/// Render a full image against a frozen model. Parallel over fixed-size ray
/// chunks with a per-chunk RNG stream, so output bytes do not depend on the
/// thread count. Returns row-major RGB in [0,1], (H·W)×3.
pub fn render_image<T: Real>(
    model: &FieldModel<T>,
    camera: &Camera,
    bounding_radius: f64,
    cfg: &RenderConfig,
    seed: u64,
) -> Result<Buf<f64>> {
    camera.validate()?;
    let w = camera.width;
    let h = camera.height;
    let mut rays = Vec::with_capacity(w * h);
    for v in 0..h {
        for u in 0..w {
            rays.push(camera.generate_ray(u, v)?);
        }
    }

    let chunk = cfg.chunk_size.max(1);
    let results: Result<Vec<Vec<[f64; 3]>>> = rays
        .par_chunks(chunk)
        .enumerate()
        .map(|(ci, chunk_rays)| {
            let mut rng = seeded(seed);
            rng.set_stream(ci as u64 + 1);
            render_chunk(model, chunk_rays, bounding_radius, cfg, &mut rng)
        })
        .collect();

    let mut img = Buf::zeros(w * h, 3);
    let mut row = 0;
    for block in results? {
        for px in block {
            for c in 0..3 {
                img.set(row, c, px[c]);
            }
            row += 1;
        }
    }
    Ok(img)
}

fn render_chunk<T: Real>(
    model: &FieldModel<T>,
    rays: &[Ray],
    bounding_radius: f64,
    cfg: &RenderConfig,
    rng: &mut Rng,
) -> Result<Vec<[f64; 3]>> {
    let mut hit = Vec::new();
    let mut bounds = Vec::new();
    let mut hit_idx = Vec::new();
    for (i, ray) in rays.iter().enumerate() {
        if let Some(b) = ray.sphere_interval(bounding_radius) {
            hit.push(*ray);
            bounds.push(b);
            hit_idx.push(i);
        }
    }
    let mut out = vec![cfg.background; rays.len()];
    if hit.is_empty() {
        return Ok(out);
    }
    let samples = sample_depths(model, &hit, &bounds, cfg, rng)?;
    let mut g = Graph::inference();
    let bind = model.bind(&mut g, false);
    let rendered = render_rays(model, &mut g, &bind, &hit, &samples, cfg)?;
    let rgb = g.value(rendered.rgb);
    for (k, &i) in hit_idx.iter().enumerate() {
        out[i] = [
            rgb.get(k, 0).as_f64(),
            rgb.get(k, 1).as_f64(),
            rgb.get(k, 2).as_f64(),
        ];
    }
    Ok(out)
}

/// Camera at `eye` looking at `target` with +y-down image convention.
pub fn look_at(eye: [f64; 3], target: [f64; 3], fx: f64, width: usize, height: usize) -> Camera {
    let mut fwd = [target[0] - eye[0], target[1] - eye[1], target[2] - eye[2]];
    let n = (fwd[0] * fwd[0] + fwd[1] * fwd[1] + fwd[2] * fwd[2]).sqrt();
    for f in &mut fwd {
        *f /= n;
    }
    // World up; fall back when the view is near-vertical.
    let up = if fwd[2].abs() < 0.99 { [0.0, 0.0, 1.0] } else { [0.0, 1.0, 0.0] };
    let mut right = [
        fwd[1] * up[2] - fwd[2] * up[1],
        fwd[2] * up[0] - fwd[0] * up[2],
        fwd[0] * up[1] - fwd[1] * up[0],
    ];
    let rn = (right[0] * right[0] + right[1] * right[1] + right[2] * right[2]).sqrt();
    for r in &mut right {
        *r /= rn;
    }
    let down = [
        fwd[1] * right[2] - fwd[2] * right[1],
        fwd[2] * right[0] - fwd[0] * right[2],
        fwd[0] * right[1] - fwd[1] * right[0],
    ];
    Camera {
        fx,
        fy: fx,
        cx: width as f64 / 2.0,
        cy: height as f64 / 2.0,
        width,
        height,
        rotation: [
            [right[0], down[0], fwd[0]],
            [right[1], down[1], fwd[1]],
            [right[2], down[2], fwd[2]],
        ],
        translation: eye,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::check_gradient;

    #[test]
    fn principal_point_ray_is_optical_axis() {
        let cam = look_at([0.0, 0.0, 3.0], [0.0; 3], 80.0, 64, 64);
        cam.validate().unwrap();
        // Pixel centers straddle the principal point; use the axis directly.
        let axis = cam.optical_axis();
        assert!((axis[2] + 1.0).abs() < 1e-12, "camera should look toward −z, got {axis:?}");
    }

    #[test]
    fn central_ray_sphere_interval() {
        let ray = Ray { origin: [0.0, 0.0, 3.0], dir: [0.0, 0.0, -1.0] };
        let (t0, t1) = ray.sphere_interval(1.0).unwrap();
        assert!((t0 - 2.0).abs() < 1e-12);
        assert!((t1 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn missing_ray_has_no_interval() {
        let ray = Ray { origin: [0.0, 5.0, 3.0], dir: [0.0, 0.0, -1.0] };
        assert!(ray.sphere_interval(1.0).is_none());
        // Tangent ray: discriminant zero counts as a miss.
        let tangent = Ray { origin: [1.0, 0.0, 3.0], dir: [0.0, 0.0, -1.0] };
        assert!(tangent.sphere_interval(1.0).is_none());
    }

    #[test]
    fn stratified_samples_in_range_and_sorted() {
        let mut rng = seeded(4);
        let d = stratified_sample(2.0, 4.0, 64, &mut rng).unwrap();
        assert_eq!(d.len(), 64);
        for w in d.windows(2) {
            assert!(w[0] < w[1]);
        }
        assert!(d[0] >= 2.0 && d[63] <= 4.0);
        let mut rng2 = seeded(4);
        assert_eq!(d, stratified_sample(2.0, 4.0, 64, &mut rng2).unwrap());
    }

    #[test]
    fn importance_concentrates_on_heavy_segment() {
        let mut rng = seeded(7);
        let coarse = vec![0.0, 1.0, 2.0, 3.0];
        let weights = vec![0.0, 1.0, 0.0];
        let refined = importance_resample(&coarse, &weights, 20, &mut rng).unwrap();
        let extra: Vec<f64> =
            refined.iter().copied().filter(|t| !coarse.contains(t)).collect();
        assert_eq!(extra.len(), 20);
        for t in extra {
            assert!((1.0..=2.0).contains(&t));
        }
    }

    #[test]
    fn importance_zero_weights_falls_back() {
        let mut rng = seeded(7);
        let refined = importance_resample(&[0.0, 1.0, 2.0], &[0.0, 0.0], 10, &mut rng).unwrap();
        assert_eq!(refined.len(), 13);
        for w in refined.windows(2) {
            assert!(w[1] - w[0] >= 1e-9);
        }
    }

    #[test]
    fn importance_uniform_weights_roughly_uniform() {
        // Chi-square over 4 equal segments with uniform weights.
        let mut rng = seeded(123);
        let coarse: Vec<f64> = (0..=4).map(|i| i as f64).collect();
        let mut counts = [0usize; 4];
        let m = 4000;
        let refined = importance_resample(&coarse, &[1.0; 4], m, &mut rng).unwrap();
        for t in refined.iter().filter(|t| !coarse.contains(t)) {
            counts[(t.floor() as usize).min(3)] += 1;
        }
        let expected = m as f64 / 4.0;
        let chi2: f64 =
            counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 3 dof, 99.9th percentile ≈ 16.27.
        assert!(chi2 < 16.27, "chi2 {chi2}, counts {counts:?}");
    }

    #[test]
    fn transparent_ray_shows_background() {
        let mut g = Graph::<f64>::new();
        let sigma = g.constant(Buf::zeros(1, 8));
        let colors = [g.constant(Buf::full(1, 8, 0.2)); 3];
        let deltas = Buf::full(1, 8, 0.25);
        let out = composite(&mut g, sigma, &deltas, colors, [0.1, 0.5, 0.9]).unwrap();
        let rgb = g.value(out.rgb);
        assert!((rgb.get(0, 0) - 0.1).abs() < 1e-12);
        assert!((rgb.get(0, 2) - 0.9).abs() < 1e-12);
        assert!(g.value(out.alpha).item().abs() < 1e-12);
    }

    #[test]
    fn opaque_sample_dominates() {
        let mut g = Graph::<f64>::new();
        let sigma = g.constant(Buf::from_f64_slice(1, 1, &[50.0]));
        let colors = [
            g.constant(Buf::from_f64_slice(1, 1, &[0.3])),
            g.constant(Buf::from_f64_slice(1, 1, &[0.6])),
            g.constant(Buf::from_f64_slice(1, 1, &[0.9])),
        ];
        let deltas = Buf::full(1, 1, 1.0);
        let out = composite(&mut g, sigma, &deltas, colors, [0.0; 3]).unwrap();
        let rgb = g.value(out.rgb);
        assert!((rgb.get(0, 0) - 0.3).abs() < 1e-6);
        assert!((rgb.get(0, 1) - 0.6).abs() < 1e-6);
    }

    #[test]
    fn quadrature_matches_analytic_constant_density() {
        // Constant σ₀ and color over [2, 4] against background b.
        let sigma0: f64 = 1.3;
        let color = 0.7;
        let bg = 0.25;
        let truth = color * (1.0 - (-sigma0 * 2.0).exp()) + bg * (-sigma0 * 2.0).exp();
        let mut g = Graph::<f64>::new();
        let n = 256;
        let sigma = g.constant(Buf::full(1, n, sigma0));
        let colors = [g.constant(Buf::full(1, n, color)); 3];
        let deltas = Buf::full(1, n, 2.0 / n as f64);
        let out = composite(&mut g, sigma, &deltas, colors, [bg; 3]).unwrap();
        let err = (g.value(out.rgb).get(0, 0) - truth).abs();
        assert!(err < 1e-3, "N=256 error {err}");
    }

    #[test]
    fn quadrature_converges_on_varying_color() {
        // Constant σ, color c(t) = t/2 over [0, 2]:
        // ∫ σe^{−σt}·(t/2) dt = (1/(2σ))·(1 − e^{−σL}(1 + σL)).
        let sigma0: f64 = 1.5;
        let len = 2.0;
        let truth = (1.0 - (-sigma0 * len).exp() * (1.0 + sigma0 * len)) / (2.0 * sigma0);
        let mut errs = Vec::new();
        for n in [16usize, 32, 64, 128, 256] {
            let w = len / n as f64;
            let mut g = Graph::<f64>::new();
            let sigma = g.constant(Buf::full(1, n, sigma0));
            let colors = [g.constant(Buf::from_fn(1, n, |_, j| (j as f64 + 0.5) * w / 2.0)); 3];
            let deltas = Buf::full(1, n, w);
            let out = composite(&mut g, sigma, &deltas, colors, [0.0; 3]).unwrap();
            errs.push((g.value(out.rgb).get(0, 0) - truth).abs());
        }
        assert!(errs[4] < 1e-3, "N=256 error {}", errs[4]);
        for w in errs.windows(2) {
            assert!(w[1] < w[0], "error should shrink as N doubles: {errs:?}");
        }
    }

    #[test]
    fn telescoping_identity_exact() {
        let mut rng = seeded(99);
        for _ in 0..20 {
            let n = 32;
            let mut g = Graph::<f64>::new();
            let sigma =
                g.constant(Buf::from_fn(3, n, |_, _| 5.0 * uniform_f64(&mut rng)));
            let colors = [g.constant(Buf::full(3, n, 0.5)); 3];
            let deltas = Buf::from_fn(3, n, |_, _| 0.05 + 0.1 * uniform_f64(&mut rng));
            let dv = g.constant(deltas.clone());
            let sd = g.mul(sigma, dv);
            let out = composite(&mut g, sigma, &deltas, colors, [0.0; 3]).unwrap();
            let total = g.sum_rows(sd);
            for r in 0..3 {
                let resid = (-g.value(total).get(r, 0)).exp();
                let sum = g.value(out.alpha).get(r, 0) + resid;
                assert!((sum - 1.0).abs() < 1e-9, "telescoping broke: {sum}");
            }
        }
    }

    #[test]
    fn composite_gradients_match_finite_differences() {
        let n = 6;
        let mut rng = seeded(17);
        let sigma0 = Buf::from_fn(2, n, |_, _| 2.0 * uniform_f64(&mut rng) + 0.1);
        let deltas = Buf::from_fn(2, n, |_, _| 0.1 + 0.2 * uniform_f64(&mut rng));
        let cbuf = Buf::from_fn(2, n, |_, _| uniform_f64(&mut rng));

        let d2 = deltas.clone();
        let c2 = cbuf.clone();
        let err = check_gradient(&sigma0, 1e-6, move |g, leaf| {
            let colors = [g.constant(c2.clone()); 3];
            let out = composite(g, leaf, &d2, colors, [0.3; 3]).unwrap();
            g.sum_all(out.rgb)
        });
        assert!(err < 1e-4, "sigma grad rel err {err}");

        let d3 = deltas.clone();
        let s3 = sigma0.clone();
        let err = check_gradient(&cbuf, 1e-6, move |g, leaf| {
            let sig = g.constant(s3.clone());
            let out = composite(g, sig, &d3, [leaf, leaf, leaf], [0.3; 3]).unwrap();
            g.sum_all(out.rgb)
        });
        assert!(err < 1e-4, "color grad rel err {err}");
    }

    #[test]
    fn negative_density_rejected() {
        let mut g = Graph::<f64>::new();
        let sigma = g.constant(Buf::from_f64_slice(1, 2, &[0.5, -0.1]));
        let colors = [g.constant(Buf::full(1, 2, 0.5)); 3];
        assert!(composite(&mut g, sigma, &Buf::full(1, 2, 0.1), colors, [0.0; 3]).is_err());
    }
}
