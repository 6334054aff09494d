//! Dense forward operators: explicit matrices and 1D convolution quadrature.

use nalgebra::{DMatrix, DVector};

use super::{ApplyCounter, LinearMap, OperatorError};

/// A [`LinearMap`] backed by an explicit matrix.
#[derive(Debug)]
pub struct DenseMap {
    matrix: DMatrix<f64>,
    counter: ApplyCounter,
}

impl DenseMap {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

/// Wrap an explicit `M×N` matrix as a counted operator.
pub fn dense_map(matrix: DMatrix<f64>) -> Result<DenseMap, OperatorError> {
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(OperatorError::NonFiniteEntries);
    }
    Ok(DenseMap {
        matrix,
        counter: ApplyCounter::default(),
    })
}

impl LinearMap for DenseMap {
    fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.cols(), "apply dimension mismatch");
        self.counter.bump_apply();
        &self.matrix * x
    }

    fn apply_transpose(&self, y: &DVector<f64>) -> DVector<f64> {
        assert_eq!(y.len(), self.rows(), "apply_transpose dimension mismatch");
        self.counter.bump_transpose();
        self.matrix.tr_mul(y)
    }

    fn counter(&self) -> &ApplyCounter {
        &self.counter
    }
}

/// Midpoint-quadrature discretization of a convolution on `[0, 1]`:
/// `(Ax)_i = (1/n) Σ_j a(s_i − s'_j) x_j` with `s'_j` the `n` state midpoints
/// and `s_i` the `m` observation midpoints.
pub fn conv1d_map_with(
    kernel: impl Fn(f64) -> f64,
    n: usize,
    m: usize,
) -> Result<DenseMap, OperatorError> {
    if n < m || m < 1 {
        return Err(OperatorError::TooManyObservations { m, n });
    }
    let mut matrix = DMatrix::zeros(m, n);
    for i in 0..m {
        let s_i = (i as f64 + 0.5) / m as f64;
        for j in 0..n {
            let s_j = (j as f64 + 0.5) / n as f64;
            matrix[(i, j)] = kernel(s_i - s_j) / n as f64;
        }
    }
    dense_map(matrix)
}

/// Gaussian blurring kernel `a(s) = exp(−s²/(2γ²)) / (γ√(2π))` with width
/// `γ`, the standard 1D deblurring benchmark.
pub fn conv1d_map(width: f64, n: usize, m: usize) -> Result<DenseMap, OperatorError> {
    if !(width > 0.0) {
        return Err(OperatorError::NonPositiveWidth(width));
    }
    let norm = 1.0 / (width * (2.0 * std::f64::consts::PI).sqrt());
    conv1d_map_with(move |s| (-0.5 * (s / width).powi(2)).exp() * norm, n, m)
}
