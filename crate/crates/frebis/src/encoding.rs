//! Sinusoidal positional encoding split into low/middle/high frequency bands.
//!
//! The full encoding of a point x is (sin(2⁰x), cos(2⁰x), …, sin(2^{L−1}x),
//! cos(2^{L−1}x)) applied componentwise. A [`BandSpec`] partitions the L
//! frequency levels into three contiguous bands, one per encoder; each band
//! optionally gets the raw coordinates appended.

use serde::{Deserialize, Serialize};

use crate::tensor::{Buf, Real};
use crate::{Error, Result};

/// How the L frequency levels are split across the three encoders.
///
/// `assignment = (n_low, n_mid, n_high)` hands the lowest `n_low` levels to
/// the low band, the next `n_mid` to the middle band, and the top `n_high`
/// to the high band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandSpec {
    pub total_levels: usize,
    pub assignment: (usize, usize, usize),
    pub include_raw_coords: bool,
}

impl Default for BandSpec {
    fn default() -> Self {
        BandSpec { total_levels: 6, assignment: (2, 2, 2), include_raw_coords: true }
    }
}

impl BandSpec {
    pub fn validate(&self) -> Result<()> {
        if self.total_levels == 0 {
            return Err(Error::Config("total_levels must be positive".into()));
        }
        let (a, b, c) = self.assignment;
        if a + b + c != self.total_levels {
            return Err(Error::Config(format!(
                "band assignment ({a},{b},{c}) must sum to total_levels = {}",
                self.total_levels
            )));
        }
        Ok(())
    }

    /// Half-open frequency-level ranges [start, end) for the three bands.
    pub fn band_ranges(&self) -> [(usize, usize); 3] {
        let (a, b, _) = self.assignment;
        [(0, a), (a, a + b), (a + b, self.total_levels)]
    }

    /// Input dimension of each band: 2·3·n_levels, plus 3 for raw coords.
    pub fn banded_dims(&self) -> [usize; 3] {
        let raw = if self.include_raw_coords { 3 } else { 0 };
        let (a, b, c) = self.assignment;
        [6 * a + raw, 6 * b + raw, 6 * c + raw]
    }
}

/// Encode a batch of points (rows of `points`, shape B×3) into three band
/// matrices of shape B×dim. Entry order inside a band is frequency-major,
/// then sin before cos, then coordinate axis; raw coordinates come last.
pub fn encode_points<T: Real>(points: &Buf<T>, spec: &BandSpec) -> Result<[Buf<T>; 3]> {
    if points.cols() != 3 {
        return Err(Error::Shape(format!("expected B×3 points, got {:?}", points.shape())));
    }
    if !points.all_finite() {
        return Err(Error::NonFinite("encode_points input".into()));
    }
    spec.validate()?;

    let b = points.rows();
    let dims = spec.banded_dims();
    let ranges = spec.band_ranges();
    let mut out: Vec<Buf<T>> = dims.iter().map(|&d| Buf::zeros(b, d)).collect();

    for r in 0..b {
        let x = [
            points.get(r, 0).as_f64(),
            points.get(r, 1).as_f64(),
            points.get(r, 2).as_f64(),
        ];
        for (band, &(lo, hi)) in ranges.iter().enumerate() {
            let m = &mut out[band];
            let mut c = 0;
            for k in lo..hi {
                let f = (1u64 << k) as f64;
                for &xi in &x {
                    m.set(r, c, T::from_f64((f * xi).sin()));
                    c += 1;
                }
                for &xi in &x {
                    m.set(r, c, T::from_f64((f * xi).cos()));
                    c += 1;
                }
            }
            if spec.include_raw_coords {
                for &xi in &x {
                    m.set(r, c, T::from_f64(xi));
                    c += 1;
                }
            }
            debug_assert_eq!(c, dims[band]);
        }
    }
    let mut it = out.into_iter();
    Ok([it.next().unwrap(), it.next().unwrap(), it.next().unwrap()])
}

/// The unsplit L-level encoding of a single point, in the same entry order
/// the bands use. Used by tests to pin the band/concat relationship.
pub fn full_encoding(x: [f64; 3], total_levels: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(6 * total_levels);
    for k in 0..total_levels {
        let f = (1u64 << k) as f64;
        for &xi in &x {
            out.push((f * xi).sin());
        }
        for &xi in &x {
            out.push((f * xi).cos());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(x: [f64; 3]) -> Buf<f64> {
        Buf::from_f64_slice(1, 3, &x)
    }

    #[test]
    fn banded_dims_examples() {
        let spec = BandSpec::default();
        assert_eq!(spec.banded_dims(), [15, 15, 15]);

        let uneven = BandSpec { assignment: (1, 2, 3), ..spec };
        assert_eq!(uneven.banded_dims(), [9, 15, 21]);

        let no_raw = BandSpec { include_raw_coords: false, ..spec };
        assert_eq!(no_raw.banded_dims(), [12, 12, 12]);
    }

    #[test]
    fn invalid_assignment_rejected() {
        let spec = BandSpec { total_levels: 6, assignment: (2, 2, 3), include_raw_coords: true };
        assert!(spec.validate().is_err());
        assert!(BandSpec { total_levels: 0, assignment: (0, 0, 0), include_raw_coords: true }
            .validate()
            .is_err());
    }

    #[test]
    fn zero_point_gives_sin_zero_cos_one() {
        let spec = BandSpec::default();
        let [low, _, _] = encode_points(&point([0.0; 3]), &spec).unwrap();
        // Two levels: [sin×3, cos×3, sin×3, cos×3, raw×3].
        let want = [0., 0., 0., 1., 1., 1., 0., 0., 0., 1., 1., 1., 0., 0., 0.];
        for (i, &w) in want.iter().enumerate() {
            assert_eq!(low.get(0, i), w, "entry {i}");
        }
    }

    #[test]
    fn half_pi_pins_entry_order() {
        let spec = BandSpec::default();
        let x = std::f64::consts::FRAC_PI_2;
        let [low, _, _] = encode_points(&point([x, 0.0, 0.0]), &spec).unwrap();
        // Level 0: sin(2⁰·π/2) = 1 at axis 0, cos = 0 there.
        assert!((low.get(0, 0) - 1.0).abs() < 1e-12);
        assert!(low.get(0, 3).abs() < 1e-12);
        // Raw coordinates are the last three entries.
        assert!((low.get(0, 12) - x).abs() < 1e-12);
        assert_eq!(low.get(0, 13), 0.0);
    }

    #[test]
    fn sinusoidal_entries_bounded() {
        let spec = BandSpec { total_levels: 9, assignment: (3, 3, 3), include_raw_coords: false };
        let bands = encode_points(&point([1.7, -2.3, 0.9]), &spec).unwrap();
        for b in &bands {
            for &v in b.data() {
                assert!((-1.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn concatenated_bands_reproduce_full_encoding() {
        let spec = BandSpec { total_levels: 6, assignment: (1, 2, 3), include_raw_coords: false };
        let x = [0.31, -0.77, 1.13];
        let bands = encode_points(&point(x), &spec).unwrap();
        let mut cat = Vec::new();
        for b in &bands {
            cat.extend_from_slice(b.data());
        }
        assert_eq!(cat, full_encoding(x, 6));
    }

    #[test]
    fn lipschitz_bound_holds_numerically() {
        let spec = BandSpec::default();
        let x = [0.4, 0.2, -0.6];
        let delta = 1e-4;
        let y = [x[0] + delta, x[1], x[2]];
        let a = encode_points(&point(x), &spec).unwrap();
        let b = encode_points(&point(y), &spec).unwrap();
        let bound = 2f64.powi(spec.total_levels as i32 - 1) * delta + 1e-9;
        for (ba, bb) in a.iter().zip(b.iter()) {
            for (u, v) in ba.data().iter().zip(bb.data()) {
                assert!((u - v).abs() <= bound);
            }
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let spec = BandSpec::default();
        assert!(encode_points(&point([f64::NAN, 0.0, 0.0]), &spec).is_err());
    }
}
