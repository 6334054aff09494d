//! Discrete Laplacian prior factors.
//!
//! Both factors use the unscaled stencils (no `h⁻²`); the prior precision
//! hyperparameter absorbs the mesh scale.

use nalgebra::DVector;

use super::{BandedCholesky, FactorCounter, OperatorError, PriorFactor};

/// Upper-bidiagonal factor `L` with `LᵀL = tridiag(−1, 2, −1)`, the 1D
/// Dirichlet Laplacian.
///
/// `L` is the transposed Cholesky factor of the stencil, so applies and
/// solves are `O(n)` sweeps.
#[derive(Debug)]
pub struct Laplacian1dFactor {
    /// diagonal of `L`
    diag: Vec<f64>,
    /// superdiagonal of `L`
    upper: Vec<f64>,
    counter: FactorCounter,
}

/// Build the 1D Dirichlet Laplacian factor on `n` interior nodes.
pub fn laplacian1d_factor(n: usize) -> Result<Laplacian1dFactor, OperatorError> {
    if n < 2 {
        return Err(OperatorError::GridTooSmall(n, 2));
    }
    // Cholesky of tridiag(-1,2,-1): T = C Cᵀ with C lower bidiagonal; we
    // store L = Cᵀ so that LᵀL = T.
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n - 1];
    diag[0] = 2.0_f64.sqrt();
    for i in 0..n - 1 {
        upper[i] = -1.0 / diag[i];
        diag[i + 1] = (2.0 - upper[i] * upper[i]).sqrt();
    }
    Ok(Laplacian1dFactor {
        diag,
        upper,
        counter: FactorCounter::default(),
    })
}

impl PriorFactor for Laplacian1dFactor {
    fn dim(&self) -> usize {
        self.diag.len()
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.dim(), "apply dimension mismatch");
        self.counter.apply.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let n = self.dim();
        DVector::from_fn(n, |i, _| {
            let mut v = self.diag[i] * x[i];
            if i + 1 < n {
                v += self.upper[i] * x[i + 1];
            }
            v
        })
    }

    fn apply_transpose(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.dim(), "apply_transpose dimension mismatch");
        self.counter.transpose_apply.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let n = self.dim();
        DVector::from_fn(n, |i, _| {
            let mut v = self.diag[i] * x[i];
            if i > 0 {
                v += self.upper[i - 1] * x[i - 1];
            }
            v
        })
    }

    fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        assert_eq!(b.len(), self.dim(), "solve dimension mismatch");
        self.counter.solve.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let n = self.dim();
        let mut y = DVector::zeros(n);
        for i in (0..n).rev() {
            let mut s = b[i];
            if i + 1 < n {
                s -= self.upper[i] * y[i + 1];
            }
            y[i] = s / self.diag[i];
        }
        y
    }

    fn solve_transpose(&self, b: &DVector<f64>) -> DVector<f64> {
        assert_eq!(b.len(), self.dim(), "solve_transpose dimension mismatch");
        self.counter.transpose_solve.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let n = self.dim();
        let mut y = DVector::zeros(n);
        for i in 0..n {
            let mut s = b[i];
            if i > 0 {
                s -= self.upper[i - 1] * y[i - 1];
            }
            y[i] = s / self.diag[i];
        }
        y
    }

    fn counter(&self) -> &FactorCounter {
        &self.counter
    }
}

/// Symmetric factor `L = −Δ_h` (unscaled 5-point stencil, Dirichlet), giving
/// the biharmonic prior precision `Γ_prior⁻¹ = LᵀL = Δ_h²` on the interior
/// nodes of an `nx × ny` cell grid.
///
/// Solves go through a banded Cholesky factorization cached at construction.
#[derive(Debug)]
pub struct Biharmonic2dFactor {
    ix: usize,
    iy: usize,
    chol: BandedCholesky,
    counter: FactorCounter,
}

/// Build the 2D factor on the `(nx−1) × (ny−1)` interior of an `nx × ny`
/// cell grid.
pub fn biharmonic2d_factor(nx: usize, ny: usize) -> Result<Biharmonic2dFactor, OperatorError> {
    if nx < 2 {
        return Err(OperatorError::GridTooSmall(nx, 2));
    }
    if ny < 2 {
        return Err(OperatorError::GridTooSmall(ny, 2));
    }
    let (ix, iy) = (nx - 1, ny - 1);
    let chol = BandedCholesky::new(&stencil_bands(ix, iy, 1.0, 1.0, 4.0))?;
    let factor = Biharmonic2dFactor {
        ix,
        iy,
        counter: FactorCounter::default(),
        chol,
    };
    // positive-definiteness probe: the factorization succeeding is the real
    // check, this guards against a misconfigured stencil
    let probe = DVector::from_fn(ix * iy, |i, _| ((i * 7919 + 13) % 17) as f64 - 8.0);
    let quad = probe.dot(&stencil_apply(&probe, ix, iy, 1.0, 1.0, 4.0));
    if quad <= 0.0 {
        return Err(OperatorError::NotPositiveDefinite);
    }
    Ok(factor)
}

/// Lower bands of `c_diag·I − cx·(x-neighbors) − cy·(y-neighbors)` on the
/// row-major `(ix, iy)` interior grid.
pub(super) fn stencil_bands(ix: usize, iy: usize, cx: f64, cy: f64, c_diag: f64) -> Vec<Vec<f64>> {
    let n = ix * iy;
    let mut bands: Vec<Vec<f64>> = (0..=iy).map(|r| vec![0.0; n - r]).collect();
    bands[0] = vec![c_diag; n];
    // y-neighbor is adjacent in memory (zero across row boundaries),
    // x-neighbor is one row of iy entries away
    for i in 0..n - 1 {
        if (i + 1) % iy != 0 {
            bands[1][i] = -cy;
        }
    }
    bands[iy] = vec![-cx; n - iy];
    bands
}

pub(super) fn stencil_apply(
    x: &DVector<f64>,
    ix: usize,
    iy: usize,
    cx: f64,
    cy: f64,
    c_diag: f64,
) -> DVector<f64> {
    let n = ix * iy;
    assert_eq!(x.len(), n, "stencil dimension mismatch");
    DVector::from_fn(n, |idx, _| {
        let (i, j) = (idx / iy, idx % iy);
        let mut v = c_diag * x[idx];
        if i > 0 {
            v -= cx * x[idx - iy];
        }
        if i + 1 < ix {
            v -= cx * x[idx + iy];
        }
        if j > 0 {
            v -= cy * x[idx - 1];
        }
        if j + 1 < iy {
            v -= cy * x[idx + 1];
        }
        v
    })
}

impl Biharmonic2dFactor {
    pub fn interior(&self) -> (usize, usize) {
        (self.ix, self.iy)
    }
}

impl PriorFactor for Biharmonic2dFactor {
    fn dim(&self) -> usize {
        self.ix * self.iy
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.counter.apply.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        stencil_apply(x, self.ix, self.iy, 1.0, 1.0, 4.0)
    }

    fn apply_transpose(&self, x: &DVector<f64>) -> DVector<f64> {
        self.counter.transpose_apply.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        // self-adjoint stencil
        stencil_apply(x, self.ix, self.iy, 1.0, 1.0, 4.0)
    }

    fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        assert_eq!(b.len(), self.dim(), "solve dimension mismatch");
        self.counter.solve.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        DVector::from_vec(self.chol.solve(b.as_slice()))
    }

    fn solve_transpose(&self, b: &DVector<f64>) -> DVector<f64> {
        assert_eq!(b.len(), self.dim(), "solve_transpose dimension mismatch");
        self.counter.transpose_solve.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        DVector::from_vec(self.chol.solve(b.as_slice()))
    }

    fn counter(&self) -> &FactorCounter {
        &self.counter
    }
}
