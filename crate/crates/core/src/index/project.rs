use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::EmbeddingIndex;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub ids: Vec<String>,
    pub points: Vec<[f64; 2]>,
    /// Variance along each axis (the two leading covariance eigenvalues).
    pub variances: [f64; 2],
    /// Set when the data spans fewer than two directions; the second axis is then zero.
    pub rank_deficient: bool,
}

/// Mean-centered projection onto the two leading principal axes. Each
/// axis is signed so its largest-magnitude loading is positive.
pub fn project_2d(index: &EmbeddingIndex) -> Result<Projection> {
    let n = index.len();
    if n < 3 {
        return Err(Error::invalid("projection needs at least three entries"));
    }
    let d = index.dim();
    let mut mean = vec![0.0f64; d];
    for i in 0..n {
        for (m, &v) in mean.iter_mut().zip(index.vector(i)) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| index.vector(i)[j] as f64 - mean[j]);
    let cov = centered.transpose() * &centered / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let top = eig.eigenvalues[order[0]].max(0.0);
    let tolerance = 1e-12 * top.max(f64::MIN_POSITIVE) * d as f64;
    let mut axes = Vec::with_capacity(2);
    let mut variances = [0.0; 2];
    let mut rank_deficient = false;
    for (slot, &k) in order.iter().take(2).enumerate() {
        let value = eig.eigenvalues[k];
        if slot > 0 && value <= tolerance {
            rank_deficient = true;
            axes.push(vec![0.0; d]);
            continue;
        }
        let mut axis: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let lead = axis
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
            .map(|(_, &v)| v)
            .unwrap_or(0.0);
        if lead < 0.0 {
            axis.iter_mut().for_each(|v| *v = -*v);
        }
        variances[slot] = value.max(0.0);
        axes.push(axis);
    }
    if d == 1 {
        rank_deficient = true;
        axes.push(vec![0.0; d]);
    }
    if rank_deficient {
        log::warn!("embedding data has rank < 2; second projection axis is zero");
    }
    let points = (0..n)
        .map(|i| {
            let row = centered.row(i);
            let p = |axis: &[f64]| row.iter().zip(axis).map(|(a, b)| a * b).sum::<f64>();
            [p(&axes[0]), p(&axes[1])]
        })
        .collect();
    Ok(Projection {
        ids: index.ids().to_vec(),
        points,
        variances,
        rank_deficient,
    })
}
