//! Image and mesh quality metrics: PSNR, SSIM, Chamfer distance.

use crate::tensor::Buf;
use crate::{Error, Result};

/// 10·log₁₀(1/MSE) over all pixels and channels of [0,1] images; identical
/// images cap at 100 dB.
pub fn psnr(a: &Buf<f64>, b: &Buf<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("psnr shapes {:?} vs {:?}", a.shape(), b.shape())));
    }
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(100.0);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(100.0))
}

/// Standard SSIM: 11×11 Gaussian window (σ=1.5), k1=0.01, k2=0.03, dynamic
/// range 1.0, computed per channel and averaged. Images are row-major
/// (H·W)×3 with explicit width/height.
pub fn ssim(a: &Buf<f64>, b: &Buf<f64>, width: usize, height: usize) -> Result<f64> {
    if a.shape() != b.shape() || a.rows() != width * height {
        return Err(Error::Shape("ssim image shape mismatch".into()));
    }
    const WIN: usize = 11;
    if width < WIN || height < WIN {
        return Err(Error::Validation(format!(
            "ssim needs at least {WIN}×{WIN} images, got {width}×{height}"
        )));
    }
    let c1 = (0.01f64).powi(2);
    let c2 = (0.03f64).powi(2);

    // Separable Gaussian taps.
    let mut taps = [0.0; WIN];
    let sigma = 1.5;
    let mut sum = 0.0;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - (WIN as f64 - 1.0) / 2.0;
        *t = (-d * d / (2.0 * sigma * sigma)).exp();
        sum += *t;
    }
    for t in &mut taps {
        *t /= sum;
    }

    let mut total = 0.0;
    for ch in 0..3 {
        let px = |x: &Buf<f64>, u: usize, v: usize| x.get(v * width + u, ch);
        let mut score = 0.0;
        let mut windows = 0usize;
        for v0 in 0..=(height - WIN) {
            for u0 in 0..=(width - WIN) {
                let mut mu_a = 0.0;
                let mut mu_b = 0.0;
                let mut aa = 0.0;
                let mut bb = 0.0;
                let mut ab = 0.0;
                for dv in 0..WIN {
                    for du in 0..WIN {
                        let w = taps[dv] * taps[du];
                        let xa = px(a, u0 + du, v0 + dv);
                        let xb = px(b, u0 + du, v0 + dv);
                        mu_a += w * xa;
                        mu_b += w * xb;
                        aa += w * xa * xa;
                        bb += w * xb * xb;
                        ab += w * xa * xb;
                    }
                }
                let var_a = aa - mu_a * mu_a;
                let var_b = bb - mu_b * mu_b;
                let cov = ab - mu_a * mu_b;
                let s = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                    / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
                score += s;
                windows += 1;
            }
        }
        total += score / windows as f64;
    }
    Ok(total / 3.0)
}

/// Symmetric mean nearest-neighbor distance between two point sets,
/// accelerated by a uniform grid index.
pub fn chamfer(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Validation("chamfer needs non-empty point sets".into()));
    }
    Ok((mean_nn(a, b) + mean_nn(b, a)) / 2.0)
}

struct GridIndex<'a> {
    pts: &'a [[f64; 3]],
    cells: std::collections::HashMap<(i64, i64, i64), Vec<usize>>,
    cell: f64,
    key_lo: [i64; 3],
    key_hi: [i64; 3],
}

impl<'a> GridIndex<'a> {
    fn build(pts: &'a [[f64; 3]]) -> Self {
        // Cell size from the bounding box so occupancy stays modest.
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in pts {
            for c in 0..3 {
                lo[c] = lo[c].min(p[c]);
                hi[c] = hi[c].max(p[c]);
            }
        }
        let extent = (0..3).map(|c| hi[c] - lo[c]).fold(0.0f64, f64::max).max(1e-9);
        let cell = extent / (pts.len() as f64).cbrt().max(1.0);
        let mut cells: std::collections::HashMap<(i64, i64, i64), Vec<usize>> =
            std::collections::HashMap::new();
        let mut key_lo = [i64::MAX; 3];
        let mut key_hi = [i64::MIN; 3];
        for (i, p) in pts.iter().enumerate() {
            let k = Self::key(p, cell);
            for (c, kc) in [k.0, k.1, k.2].into_iter().enumerate() {
                key_lo[c] = key_lo[c].min(kc);
                key_hi[c] = key_hi[c].max(kc);
            }
            cells.entry(k).or_default().push(i);
        }
        GridIndex { pts, cells, cell, key_lo, key_hi }
    }

    fn key(p: &[f64; 3], cell: f64) -> (i64, i64, i64) {
        (
            (p[0] / cell).floor() as i64,
            (p[1] / cell).floor() as i64,
            (p[2] / cell).floor() as i64,
        )
    }

    /// Exact nearest distance: expand rings of cells until the best found
    /// distance is provably closer than any unvisited ring.
    fn nearest(&self, q: &[f64; 3]) -> f64 {
        let (kx, ky, kz) = Self::key(q, self.cell);
        let qk = [kx, ky, kz];
        // Rings strictly between the query cell and the occupied-key bounding
        // box are empty, so start at the first ring that can hold a cell and
        // stop once every occupied cell has been visited.
        let start = (0..3)
            .map(|c| (self.key_lo[c] - qk[c]).max(qk[c] - self.key_hi[c]).max(0))
            .max()
            .unwrap();
        let last = (0..3)
            .map(|c| (self.key_hi[c] - qk[c]).max(qk[c] - self.key_lo[c]))
            .max()
            .unwrap();
        let mut best = f64::INFINITY;
        let mut ring = start;
        loop {
            for x in (kx - ring).max(self.key_lo[0])..=(kx + ring).min(self.key_hi[0]) {
                for y in (ky - ring).max(self.key_lo[1])..=(ky + ring).min(self.key_hi[1]) {
                    for z in (kz - ring).max(self.key_lo[2])..=(kz + ring).min(self.key_hi[2]) {
                        if (x - kx).abs().max((y - ky).abs()).max((z - kz).abs()) != ring {
                            continue;
                        }
                        if let Some(ids) = self.cells.get(&(x, y, z)) {
                            for &i in ids {
                                let p = self.pts[i];
                                let d2 = (p[0] - q[0]).powi(2)
                                    + (p[1] - q[1]).powi(2)
                                    + (p[2] - q[2]).powi(2);
                                best = best.min(d2.sqrt());
                            }
                        }
                    }
                }
            }
            // A point in an unvisited cell (key distance > ring) is at least
            // ring·cell away from anywhere inside the query's cell.
            if best.is_finite() && best <= ring as f64 * self.cell {
                return best;
            }
            if ring >= last {
                return best;
            }
            ring += 1;
        }
    }
}

fn mean_nn(from: &[[f64; 3]], to: &[[f64; 3]]) -> f64 {
    let index = GridIndex::build(to);
    from.iter().map(|p| index.nearest(p)).sum::<f64>() / from.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{seeded, uniform_f64};

    #[test]
    fn psnr_reference_values() {
        let a = Buf::full(100, 3, 0.5);
        assert_eq!(psnr(&a, &a).unwrap(), 100.0);
        // MSE 0.01 → 20 dB.
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        // MSE 1 → 0 dB.
        let z = Buf::zeros(100, 3);
        let o = Buf::full(100, 3, 1.0);
        assert!(psnr(&z, &o).unwrap().abs() < 1e-12);
    }

    #[test]
    fn psnr_decreases_with_mse() {
        let a = Buf::full(50, 3, 0.5);
        let mut last = f64::INFINITY;
        for step in [0.05, 0.1, 0.2, 0.4] {
            let b = a.map(|v| v + step);
            let p = psnr(&a, &b).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_identity_and_direction() {
        let w = 16;
        let h = 16;
        let mut rng = seeded(5);
        let a = Buf::from_fn(w * h, 3, |r, _| {
            0.5 + 0.3 * ((r % w) as f64 * 0.7).sin() + 0.05 * uniform_f64(&mut rng)
        });
        assert!((ssim(&a, &a, w, h).unwrap() - 1.0).abs() < 1e-12);
        let negative = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &negative, w, h).unwrap() < 0.5);
    }

    #[test]
    fn ssim_constant_images_closed_form() {
        // Constant vs constant: variance and covariance vanish, so
        // SSIM = (2ab + c1)/(a² + b² + c1) — the luminance term alone.
        let w = 12;
        let h = 12;
        let a = Buf::full(w * h, 3, 0.3);
        let b = Buf::full(w * h, 3, 0.6);
        let c1 = 0.01f64.powi(2);
        let want = (2.0 * 0.3 * 0.6 + c1) / (0.3f64.powi(2) + 0.6f64.powi(2) + c1);
        assert!((ssim(&a, &b, w, h).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = Buf::full(25, 3, 0.5);
        assert!(ssim(&a, &a, 5, 5).is_err());
    }

    #[test]
    fn chamfer_basics() {
        let a = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        let b = vec![[0.0, 0.0, 0.0]];
        let c = vec![[1.0, 0.0, 0.0]];
        assert!((chamfer(&b, &c).unwrap() - 1.0).abs() < 1e-12);
        assert!(chamfer(&[], &a).is_err());
    }

    #[test]
    fn chamfer_symmetric() {
        let mut rng = seeded(2);
        let a: Vec<[f64; 3]> = (0..60)
            .map(|_| [uniform_f64(&mut rng), uniform_f64(&mut rng), uniform_f64(&mut rng)])
            .collect();
        let b: Vec<[f64; 3]> = (0..45)
            .map(|_| [uniform_f64(&mut rng), uniform_f64(&mut rng), uniform_f64(&mut rng)])
            .collect();
        assert!((chamfer(&a, &b).unwrap() - chamfer(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn chamfer_matches_brute_force() {
        let mut rng = seeded(77);
        let a: Vec<[f64; 3]> = (0..200)
            .map(|_| {
                [
                    2.0 * uniform_f64(&mut rng) - 1.0,
                    2.0 * uniform_f64(&mut rng) - 1.0,
                    2.0 * uniform_f64(&mut rng) - 1.0,
                ]
            })
            .collect();
        let b: Vec<[f64; 3]> = (0..200)
            .map(|_| {
                [
                    2.0 * uniform_f64(&mut rng) - 1.0,
                    2.0 * uniform_f64(&mut rng) - 1.0,
                    2.0 * uniform_f64(&mut rng) - 1.0,
                ]
            })
            .collect();

        let brute = |from: &[[f64; 3]], to: &[[f64; 3]]| -> f64 {
            from.iter()
                .map(|p| {
                    to.iter()
                        .map(|q| {
                            ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2))
                                .sqrt()
                        })
                        .fold(f64::INFINITY, f64::min)
                })
                .sum::<f64>()
                / from.len() as f64
        };
        let want = (brute(&a, &b) + brute(&b, &a)) / 2.0;
        assert!((chamfer(&a, &b).unwrap() - want).abs() < 1e-9);
    }
}
