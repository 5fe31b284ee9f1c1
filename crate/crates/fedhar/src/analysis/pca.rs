//! Principal component analysis via singular value decomposition of the
//! centered feature matrix.

use nalgebra::DMatrix;

use super::{AnalysisError, Projection, ProjectionMeta};
use crate::tensor::{matmul_nt, Tensor};

/// Project `[n, d]` features onto the top `k` principal components.
///
/// Columns are centered, the right singular vectors of the centered matrix
/// give the components, and each component is sign-fixed so its
/// largest-magnitude entry is positive. Explained-variance ratios are
/// reported non-increasing.
pub fn pca(features: &Tensor, k: usize) -> Result<Projection, AnalysisError> {
    let (centered, components, explained) = decompose(features, k)?;
    let (n, d) = (features.shape()[0], features.shape()[1]);
    let coords = Tensor::new(vec![n, k], matmul_nt(&centered, &components, n, d, k));
    coords.assert_finite("pca coordinates");
    Ok(Projection {
        coords,
        labels: Vec::new(),
        meta: ProjectionMeta::Pca {
            explained_variance: explained,
        },
    })
}

/// The sign-fixed component matrix `[k, d]` and the explained-variance
/// ratios, exactly as [`pca`] uses them. Exposed so tests can compare against
/// an independent eigendecomposition of the covariance.
pub fn pca_components(features: &Tensor, k: usize) -> Result<(Vec<f64>, Vec<f64>), AnalysisError> {
    decompose(features, k).map(|(_, components, explained)| (components, explained))
}

#[allow(clippy::type_complexity)]
fn decompose(
    features: &Tensor,
    k: usize,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), AnalysisError> {
    let shape = features.shape();
    assert_eq!(shape.len(), 2, "pca expects a 2-D feature matrix");
    let (n, d) = (shape[0], shape[1]);
    if n <= k {
        return Err(AnalysisError::DegenerateInput(format!(
            "{n} rows cannot support {k} components"
        )));
    }
    if d < k {
        return Err(AnalysisError::DegenerateInput(format!(
            "{d}-dimensional features cannot support {k} components"
        )));
    }

    let mut centered = features.values().to_vec();
    let mut means = vec![0.0; d];
    for row in centered.chunks_exact(d) {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }
    for row in centered.chunks_exact_mut(d) {
        for (v, m) in row.iter_mut().zip(&means) {
            *v -= m;
        }
    }

    let svd = DMatrix::from_row_slice(n, d, &centered).svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .expect("finite singular values")
    });

    let total: f64 = svd.singular_values.iter().map(|s| s * s).sum();
    let mut components = vec![0.0; k * d];
    let mut explained = Vec::with_capacity(k);
    for (out_row, &src) in order[..k].iter().enumerate() {
        let row = v_t.row(src);
        // Sign convention: the largest-magnitude entry ends up positive,
        // first occurrence breaking ties.
        let mut arg = 0;
        let mut best = 0.0f64;
        for (j, v) in row.iter().enumerate() {
            if v.abs() > best {
                best = v.abs();
                arg = j;
            }
        }
        let flip = if row[arg] < 0.0 { -1.0 } else { 1.0 };
        for (j, v) in row.iter().enumerate() {
            components[out_row * d + j] = flip * v;
        }
        let s = svd.singular_values[src];
        explained.push(if total > 0.0 { s * s / total } else { 0.0 });
    }
    Ok((centered, components, explained))
}
