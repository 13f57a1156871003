//! Redundancy-aware weighting of the three band features.
//!
//! Per point, the 256×3 feature stack F = [f_L, f_M, f_H] is column-L2
//! normalized to F̄, the Gram matrix S = F̄ᵀF̄ measures pairwise similarity,
//! the diagonal is removed (S′ = S − I), a dissimilarity score
//! d = (2I − S′)·1 rewards bands unlike the other two, and the columns of F
//! are rescaled by w = softmax(d/τ). Everything is differentiable end to
//! end; gradients flow into F both directly and through w.

use crate::tensor::{Graph, Real, Var};
use crate::{Error, Result};

/// Column-norm guard: a zero feature column stays zero instead of NaN.
pub const NORM_EPS: f64 = 1e-12;

/// Weighted features plus the weights themselves (kept for diagnostics).
pub struct WeightingOutput {
    /// Reweighted per-band features, each B×width.
    pub weighted: [Var; 3],
    /// Per-point weights, B×3, rows sum to 1.
    pub weights: Var,
}

/// Apply redundancy-aware weighting to a batch of per-band features
/// (three B×width matrices, one row per point).
pub fn weight_features<T: Real>(
    g: &mut Graph<T>,
    features: [Var; 3],
    tau: f64,
) -> Result<WeightingOutput> {
    if tau <= 0.0 {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }

    // Column L2 norms per point (B×1), with the zero guard.
    let mut normed = [features[0]; 3];
    for (i, &f) in features.iter().enumerate() {
        let sq = g.square(f);
        let sumsq = g.sum_rows(sq);
        let norm = g.sqrt(sumsq);
        let denom = g.clamp_min(norm, NORM_EPS);
        normed[i] = g.div(f, denom);
    }

    // Row i of S sums to S_ii + Σ_{j≠i} S_ij; d_i = (2I − (S − I))·1 = 3 − Σ_j S_ij.
    let mut d = [features[0]; 3];
    for i in 0..3 {
        let mut row_sum: Option<Var> = None;
        for j in 0..3 {
            let prod = g.mul(normed[i], normed[j]);
            let dot = g.sum_rows(prod);
            row_sum = Some(match row_sum {
                Some(acc) => g.add(acc, dot),
                None => dot,
            });
        }
        let sum = row_sum.unwrap();
        let neg = g.neg(sum);
        d[i] = g.add_const(neg, 3.0);
    }

    let d_mat = g.concat_cols(&d);
    let scaled = g.mul_const(d_mat, 1.0 / tau);
    let weights = g.softmax_rows(scaled);

    let mut weighted = [features[0]; 3];
    for i in 0..3 {
        let wi = g.slice_cols(weights, i, i + 1);
        weighted[i] = g.mul(features[i], wi);
    }
    Ok(WeightingOutput { weighted, weights })
}

/// Ablation: uniform averaging instead of learned-free reweighting — every
/// band scaled by 1/3, weights reported as the constant (1/3, 1/3, 1/3).
pub fn average_features<T: Real>(g: &mut Graph<T>, features: [Var; 3]) -> WeightingOutput {
    let b = g.shape(features[0]).0;
    let third = crate::tensor::Buf::full(b, 3, T::from_f64(1.0 / 3.0));
    let weights = g.constant(third);
    let mut weighted = [features[0]; 3];
    for i in 0..3 {
        weighted[i] = g.mul_const(features[i], 1.0 / 3.0);
    }
    WeightingOutput { weighted, weights }
}

/// Intermediate quantities for one point, for the `inspect-weights`
/// diagnostic output.
#[derive(Debug, Clone, serde::Serialize)]
pub struct WeightInspection {
    pub similarity: [[f64; 3]; 3],
    pub dissimilarity: [f64; 3],
    pub weights: [f64; 3],
}

/// Scalar-loop computation of (S, d, w) for one point's feature columns.
pub fn inspect_point(cols: [&[f64]; 3], tau: f64) -> Result<WeightInspection> {
    if tau <= 0.0 {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let n = cols[0].len();
    if cols.iter().any(|c| c.len() != n) {
        return Err(Error::Shape("feature columns differ in length".into()));
    }
    let norms: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS))
        .collect();
    let mut similarity = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = cols[i].iter().zip(cols[j]).map(|(a, b)| a * b).sum();
            similarity[i][j] = dot / (norms[i] * norms[j]);
        }
    }
    let mut dissimilarity = [0.0; 3];
    for i in 0..3 {
        dissimilarity[i] = 3.0 - similarity[i].iter().sum::<f64>();
    }
    let m = dissimilarity.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = dissimilarity.iter().map(|d| ((d - m) / tau).exp()).collect();
    let z: f64 = exps.iter().sum();
    let weights = [exps[0] / z, exps[1] / z, exps[2] / z];
    Ok(WeightInspection { similarity, dissimilarity, weights })
}
