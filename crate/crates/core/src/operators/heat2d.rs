//! Forward operator for the 2D inverse heat problem: implicit time stepping
//! of `u_t − κΔu = 0` on `[0, 2] × [0, 1]` with Dirichlet boundary, composed
//! with point observation of the final state.

use nalgebra::DVector;

use super::laplacian::stencil_bands;
use super::{ApplyCounter, BandedCholesky, LinearMap, OperatorError};

/// `A = observe ∘ step^nt` from the initial interior state.
///
/// Each backward-Euler step solves `(I + κΔt·(−Δ_h)) u⁺ = u` with the
/// physically scaled 5-point Laplacian; the step operator is symmetric, so
/// the transpose is the same solve sequence applied to the scattered
/// observation vector.
#[derive(Debug)]
pub struct Heat2dMap {
    ix: usize,
    iy: usize,
    steps: usize,
    obs: Vec<usize>,
    step_solve: BandedCholesky,
    counter: ApplyCounter,
}

/// Build the heat forward map on the interior of an `nx × ny` cell grid over
/// `[0, 2] × [0, 1]`, with `nt` implicit steps to final time `t_final` and
/// observations at the given interior indices (row-major).
pub fn heat2d_map(
    nx: usize,
    ny: usize,
    kappa: f64,
    t_final: f64,
    nt: usize,
    obs: Vec<usize>,
) -> Result<Heat2dMap, OperatorError> {
    if nx < 2 {
        return Err(OperatorError::GridTooSmall(nx, 2));
    }
    if ny < 2 {
        return Err(OperatorError::GridTooSmall(ny, 2));
    }
    if kappa < 0.0 {
        return Err(OperatorError::NegativeDiffusivity(kappa));
    }
    if t_final <= 0.0 {
        return Err(OperatorError::NonPositiveTime(t_final));
    }
    if nt == 0 {
        return Err(OperatorError::NoTimeSteps);
    }
    let (ix, iy) = (nx - 1, ny - 1);
    let n = ix * iy;
    for &o in &obs {
        if o >= n {
            return Err(OperatorError::ObservationOutOfRange(o, n));
        }
    }
    let hx = 2.0 / nx as f64;
    let hy = 1.0 / ny as f64;
    let dt = t_final / nt as f64;
    // I + κ Δt (−Δ_h) with physical h⁻² scaling
    let cx = kappa * dt / (hx * hx);
    let cy = kappa * dt / (hy * hy);
    let bands = stencil_bands(ix, iy, cx, cy, 1.0 + 2.0 * cx + 2.0 * cy);
    let step_solve = BandedCholesky::new(&bands)?;
    Ok(Heat2dMap {
        ix,
        iy,
        steps: nt,
        obs,
        step_solve,
        counter: ApplyCounter::default(),
    })
}

impl Heat2dMap {
    fn march(&self, state: &DVector<f64>) -> DVector<f64> {
        let mut u = state.as_slice().to_vec();
        for _ in 0..self.steps {
            u = self.step_solve.solve(&u);
        }
        DVector::from_vec(u)
    }

    pub fn interior(&self) -> (usize, usize) {
        (self.ix, self.iy)
    }

    pub fn observation_indices(&self) -> &[usize] {
        &self.obs
    }
}

impl LinearMap for Heat2dMap {
    fn rows(&self) -> usize {
        self.obs.len()
    }

    fn cols(&self) -> usize {
        self.ix * self.iy
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.cols(), "apply dimension mismatch");
        self.counter.bump_apply();
        let u = self.march(x);
        DVector::from_fn(self.obs.len(), |i, _| u[self.obs[i]])
    }

    fn apply_transpose(&self, y: &DVector<f64>) -> DVector<f64> {
        assert_eq!(y.len(), self.rows(), "apply_transpose dimension mismatch");
        self.counter.bump_transpose();
        let mut scattered = DVector::zeros(self.cols());
        for (i, &o) in self.obs.iter().enumerate() {
            scattered[o] += y[i];
        }
        // each step is symmetric, so the adjoint marches the same solves in
        // reverse order
        self.march(&scattered)
    }

    fn counter(&self) -> &ApplyCounter {
        &self.counter
    }
}
