//! Dense row-major `f64` tensors and the few matrix kernels the network needs.
//!
//! The kernels are single-threaded and fully deterministic: every output
//! element is accumulated in a fixed order, so results are bit-identical from
//! run to run. Inner loops are blocked so the streamed operand passes through
//! cache a bounded number of times.

/// Row block size for the matrix kernels. Eight rows of the resident operand
/// stay in cache while the large operand streams past once per block.
const ROW_BLOCK: usize = 8;

/// A dense tensor: a shape and a row-major value buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Self {
        let expect: usize = shape.iter().product();
        assert_eq!(
            values.len(),
            expect,
            "shape {:?} expects {} values, got {}",
            shape,
            expect,
            values.len()
        );
        Tensor { shape, values }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Self {
        let expect: usize = shape.iter().product();
        assert_eq!(self.values.len(), expect, "reshape to {shape:?} mismatch");
        self.shape = shape;
        self
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        assert_eq!(self.shape.len(), 2, "row() needs a 2-D tensor");
        let w = self.shape[1];
        &self.values[i * w..(i + 1) * w]
    }

    /// `self += other`, shapes must match exactly.
    pub fn add_assign(&mut self, other: &Tensor) {
        self.scaled_add_assign(1.0, other);
    }

    /// `self += alpha * other`, shapes must match exactly.
    pub fn scaled_add_assign(&mut self, alpha: f64, other: &Tensor) {
        assert_eq!(
            self.shape, other.shape,
            "tensor shape mismatch: {:?} vs {:?}",
            self.shape, other.shape
        );
        axpy(alpha, &other.values, &mut self.values);
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.values {
            *v *= alpha;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn assert_finite(&self, what: &str) {
        assert!(self.all_finite(), "{what}: non-finite value in tensor");
    }
}

/// Dot product with four independent accumulators combined in a fixed order.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dot length mismatch");
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        s += x * y;
    }
    s
}

/// `y += alpha * x`.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    assert_eq!(x.len(), y.len(), "axpy length mismatch");
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `a [m,k] * b^T` where `b` is `[n,k]`; returns `[m,n]`.
///
/// Both operands are read along contiguous rows; `b` streams once per block
/// of `ROW_BLOCK` rows of `a`.
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), n * k);
    let mut out = vec![0.0; m * n];
    if m == 0 || k == 0 || n == 0 {
        return out;
    }
    for (a_chunk, out_chunk) in a.chunks(ROW_BLOCK * k).zip(out.chunks_mut(ROW_BLOCK * n)) {
        let rows = a_chunk.len() / k;
        for (j, brow) in b.chunks_exact(k).enumerate() {
            for r in 0..rows {
                out_chunk[r * n + j] = dot(&a_chunk[r * k..(r + 1) * k], brow);
            }
        }
    }
    out
}

/// `a [m,k] * b [k,n]`; returns `[m,n]`.
pub fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    if m == 0 || k == 0 || n == 0 {
        return out;
    }
    for (a_chunk, out_chunk) in a.chunks(ROW_BLOCK * k).zip(out.chunks_mut(ROW_BLOCK * n)) {
        let rows = a_chunk.len() / k;
        for (j, bj) in b.chunks_exact(n).enumerate() {
            for r in 0..rows {
                axpy(a_chunk[r * k + j], bj, &mut out_chunk[r * n..(r + 1) * n]);
            }
        }
    }
    out
}

/// `a^T * b` where `a` is `[m,k]` and `b` is `[m,n]`; returns `[k,n]`.
pub fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), m * n);
    let mut out = vec![0.0; k * n];
    if m == 0 || k == 0 || n == 0 {
        return out;
    }
    let mut ib = 0;
    while ib < k {
        let iw = ROW_BLOCK.min(k - ib);
        for r in 0..m {
            let brow = &b[r * n..(r + 1) * n];
            for d in 0..iw {
                let col = ib + d;
                axpy(a[r * k + col], brow, &mut out[col * n..(col + 1) * n]);
            }
        }
        ib += iw;
    }
    out
}
