//! t-SNE: Gaussian input affinities with per-point bandwidths found by
//! binary search on the row entropy, a Student-t low-dimensional kernel, and
//! momentum gradient descent on the KL divergence with early exaggeration.

use super::{AnalysisError, Projection, ProjectionMeta};
use crate::rng::Rng;
use crate::tensor::{matmul_nt, Tensor};

const OUTPUT_DIMS: usize = 2;
const LEARNING_RATE: f64 = 200.0;
const EXAGGERATION: f64 = 12.0;
const EXAGGERATION_ITERS: usize = 250;
const MOMENTUM_EARLY: f64 = 0.5;
const MOMENTUM_LATE: f64 = 0.8;
const BANDWIDTH_SEARCH_ITERS: usize = 50;
const ENTROPY_TOLERANCE: f64 = 1e-4;
/// Checkpoint cadence for the KL trace; 260 is also recorded as the first
/// settled point after the exaggeration phase.
const KL_CHECKPOINT_EVERY: usize = 50;
const POST_EXAGGERATION_CHECKPOINT: usize = 260;

/// Embed `[n, d]` features into two dimensions.
///
/// The per-point Gaussian bandwidths are binary-searched until each row of
/// conditional affinities has entropy `log2(perplexity)` within 1e-4 (at most
/// 50 halving steps). The embedding starts as Gaussian noise of std 1e-4
/// drawn from `rng` and descends KL(P || Q) for `iterations` steps.
pub fn tsne(
    features: &Tensor,
    perplexity: f64,
    iterations: usize,
    rng: &mut Rng,
) -> Result<Projection, AnalysisError> {
    let shape = features.shape();
    assert_eq!(shape.len(), 2, "tsne expects a 2-D feature matrix");
    let n = shape[0];
    if n < 10 {
        return Err(AnalysisError::PerplexityInfeasible(format!(
            "need at least 10 points, got {n}"
        )));
    }
    if !(perplexity > 1.0 && perplexity < (n - 1) as f64 / 3.0) {
        return Err(AnalysisError::PerplexityInfeasible(format!(
            "perplexity {perplexity} outside (1, {})",
            (n - 1) as f64 / 3.0
        )));
    }

    let dist = pairwise_squared_distances(features);
    let (p, betas) = symmetric_affinities(&dist, n, perplexity);

    // Tiny Gaussian start.
    let mut y: Vec<f64> = (0..n * OUTPUT_DIMS).map(|_| 1e-4 * rng.next_normal()).collect();
    let mut velocity = vec![0.0; n * OUTPUT_DIMS];
    let mut w = vec![0.0; n * n];
    let mut grad = vec![0.0; n * OUTPUT_DIMS];
    let mut kl_trace = Vec::new();

    for iter in 0..iterations {
        // Student-t kernel weights and their normalizer.
        let mut z = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    w[i * n + j] = 0.0;
                    continue;
                }
                let mut d2 = 0.0;
                for k in 0..OUTPUT_DIMS {
                    let diff = y[i * OUTPUT_DIMS + k] - y[j * OUTPUT_DIMS + k];
                    d2 += diff * diff;
                }
                let v = 1.0 / (1.0 + d2);
                w[i * n + j] = v;
                z += v;
            }
        }

        let exaggeration = if iter < EXAGGERATION_ITERS {
            EXAGGERATION
        } else {
            1.0
        };
        let momentum = if iter < EXAGGERATION_ITERS {
            MOMENTUM_EARLY
        } else {
            MOMENTUM_LATE
        };

        grad.fill(0.0);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let wij = w[i * n + j];
                let q = wij / z;
                let factor = 4.0 * (exaggeration * p[i * n + j] - q) * wij;
                for k in 0..OUTPUT_DIMS {
                    grad[i * OUTPUT_DIMS + k] +=
                        factor * (y[i * OUTPUT_DIMS + k] - y[j * OUTPUT_DIMS + k]);
                }
            }
        }

        for (v, g) in velocity.iter_mut().zip(&grad) {
            *v = momentum * *v - LEARNING_RATE * g;
        }
        for (yi, v) in y.iter_mut().zip(&velocity) {
            *yi += v;
        }

        // Keep the embedding centered.
        let mut mean = [0.0; OUTPUT_DIMS];
        for row in y.chunks_exact(OUTPUT_DIMS) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        for row in y.chunks_exact_mut(OUTPUT_DIMS) {
            for (v, m) in row.iter_mut().zip(&mean) {
                *v -= m;
            }
        }

        let step = iter + 1;
        if step % KL_CHECKPOINT_EVERY == 0 || step == POST_EXAGGERATION_CHECKPOINT {
            let kl = kl_divergence(&p, &y, n);
            assert!(kl.is_finite(), "KL divergence diverged at iteration {step}");
            kl_trace.push((step, kl));
        }
    }

    let final_kl = kl_divergence(&p, &y, n);
    let coords = Tensor::new(vec![n, OUTPUT_DIMS], y);
    coords.assert_finite("tsne coordinates");

    Ok(Projection {
        coords,
        labels: Vec::new(),
        meta: ProjectionMeta::Tsne {
            final_kl,
            kl_trace,
            betas,
        },
    })
}

/// Squared Euclidean distances between feature rows, clamped at zero.
pub fn pairwise_squared_distances(features: &Tensor) -> Vec<f64> {
    let (n, d) = (features.shape()[0], features.shape()[1]);
    let x = features.values();
    let gram = matmul_nt(x, x, n, d, n);
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            dist[i * n + j] = (gram[i * n + i] + gram[j * n + j] - 2.0 * gram[i * n + j]).max(0.0);
        }
    }
    dist
}

/// Conditional affinities of one row under precision `beta`, and their
/// Shannon entropy in bits.
fn row_affinities(dist_row: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let mut sum = 0.0;
    for (j, (&d, o)) in dist_row.iter().zip(out.iter_mut()).enumerate() {
        *o = if j == i { 0.0 } else { (-beta * d).exp() };
        sum += *o;
    }
    if sum <= 0.0 {
        // Degenerate row: all mass collapsed, entropy zero.
        return 0.0;
    }
    let mut entropy_nats = 0.0;
    for o in out.iter_mut() {
        *o /= sum;
        if *o > 1e-300 {
            entropy_nats -= *o * o.ln();
        }
    }
    entropy_nats / std::f64::consts::LN_2
}

/// Symmetrized affinity matrix `P` (entries sum to 1) and the per-point
/// precisions found by the entropy binary search.
pub fn symmetric_affinities(dist: &[f64], n: usize, perplexity: f64) -> (Vec<f64>, Vec<f64>) {
    let target = perplexity.log2();
    let mut cond = vec![0.0; n * n];
    let mut betas = vec![1.0; n];
    let mut row_buf = vec![0.0; n];
    for i in 0..n {
        let dist_row = &dist[i * n..(i + 1) * n];
        let mut beta = 1.0;
        let mut beta_min = f64::NEG_INFINITY;
        let mut beta_max = f64::INFINITY;
        for _ in 0..BANDWIDTH_SEARCH_ITERS {
            let entropy = row_affinities(dist_row, i, beta, &mut row_buf);
            let diff = entropy - target;
            if diff.abs() <= ENTROPY_TOLERANCE {
                break;
            }
            if diff > 0.0 {
                // Too spread out: sharpen the kernel.
                beta_min = beta;
                beta = if beta_max.is_infinite() {
                    beta * 2.0
                } else {
                    (beta + beta_max) / 2.0
                };
            } else {
                beta_max = beta;
                beta = if beta_min.is_infinite() {
                    beta / 2.0
                } else {
                    (beta + beta_min) / 2.0
                };
            }
        }
        let _ = row_affinities(dist_row, i, beta, &mut row_buf);
        cond[i * n..(i + 1) * n].copy_from_slice(&row_buf);
        betas[i] = beta;
    }

    let mut p = vec![0.0; n * n];
    let norm = 2.0 * n as f64;
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / norm;
        }
    }
    debug_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    (p, betas)
}

/// KL(P || Q) of the embedding against the true (unexaggerated) affinities.
fn kl_divergence(p: &[f64], y: &[f64], n: usize) -> f64 {
    let mut z = 0.0;
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let mut d2 = 0.0;
            for k in 0..OUTPUT_DIMS {
                let diff = y[i * OUTPUT_DIMS + k] - y[j * OUTPUT_DIMS + k];
                d2 += diff * diff;
            }
            w[i * n + j] = 1.0 / (1.0 + d2);
            z += w[i * n + j];
        }
    }
    let mut kl = 0.0;
    for i in 0..n * n {
        if p[i] > 0.0 {
            let q = (w[i] / z).max(1e-12);
            kl += p[i] * (p[i] / q).ln();
        }
    }
    kl
}
