//! Matrix-free linear operators with instrumented application counts.
//!
//! Everything downstream (densities, samplers, cost accounting) talks to the
//! forward model and the prior through two trait objects:
//!
//! * [`LinearMap`] — the forward operator `A: R^N -> R^M` and its transpose,
//! * [`PriorFactor`] — a square factor `L` with `Γ_prior⁻¹ = LᵀL`, supporting
//!   application and solves with `L` and `Lᵀ`.
//!
//! Each implementation tallies how often it is applied.  The tallies are
//! atomic so a single operator can be shared by chains running in parallel;
//! a [`CostSnapshot`] freezes the counts at a point in time and
//! [`CostSnapshot::delta`] reconciles a run against its expected matvec
//! budget.

mod banded;
mod dense;
mod heat2d;
mod laplacian;

pub use banded::BandedCholesky;
pub use dense::{conv1d_map, conv1d_map_with, dense_map, DenseMap};
pub use heat2d::{heat2d_map, Heat2dMap};
pub use laplacian::{
    biharmonic2d_factor, laplacian1d_factor, Biharmonic2dFactor, Laplacian1dFactor,
};

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("grid size {0} too small: need at least {1}")]
    GridTooSmall(usize, usize),
    #[error("kernel width must be positive, got {0}")]
    NonPositiveWidth(f64),
    #[error("observation count {m} exceeds state size {n}")]
    TooManyObservations { m: usize, n: usize },
    #[error("diffusivity must be non-negative, got {0}")]
    NegativeDiffusivity(f64),
    #[error("final time must be positive, got {0}")]
    NonPositiveTime(f64),
    #[error("need at least one time step")]
    NoTimeSteps,
    #[error("observation index {0} outside interior grid of size {1}")]
    ObservationOutOfRange(usize, usize),
    #[error("matrix entries must be finite")]
    NonFiniteEntries,
    #[error("operator is not positive definite")]
    NotPositiveDefinite,
}

/// Application tallies for a [`LinearMap`].
#[derive(Debug, Default)]
pub struct ApplyCounter {
    apply: AtomicU64,
    transpose: AtomicU64,
}

impl ApplyCounter {
    fn bump_apply(&self) {
        self.apply.fetch_add(1, Ordering::Relaxed);
    }

    fn bump_transpose(&self) {
        self.transpose.fetch_add(1, Ordering::Relaxed);
    }

    pub fn apply_count(&self) -> u64 {
        self.apply.load(Ordering::Relaxed)
    }

    pub fn transpose_count(&self) -> u64 {
        self.transpose.load(Ordering::Relaxed)
    }
}

/// Application and solve tallies for a [`PriorFactor`].
#[derive(Debug, Default)]
pub struct FactorCounter {
    apply: AtomicU64,
    transpose_apply: AtomicU64,
    solve: AtomicU64,
    transpose_solve: AtomicU64,
}

impl FactorCounter {
    pub fn apply_count(&self) -> u64 {
        self.apply.load(Ordering::Relaxed)
    }

    pub fn transpose_apply_count(&self) -> u64 {
        self.transpose_apply.load(Ordering::Relaxed)
    }

    pub fn solve_count(&self) -> u64 {
        self.solve.load(Ordering::Relaxed)
    }

    pub fn transpose_solve_count(&self) -> u64 {
        self.transpose_solve.load(Ordering::Relaxed)
    }
}

/// A linear operator `A` exposed only through matrix-vector products.
///
/// `apply` takes vectors of length `cols()` and returns length `rows()`;
/// `apply_transpose` the reverse.  Implementations must satisfy the adjoint
/// identity `⟨u, A v⟩ = ⟨Aᵀ u, v⟩` and bump their counter by exactly one per
/// application.
pub trait LinearMap: Send + Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn apply(&self, x: &DVector<f64>) -> DVector<f64>;
    fn apply_transpose(&self, y: &DVector<f64>) -> DVector<f64>;
    fn counter(&self) -> &ApplyCounter;
}

/// A square invertible factor `L` of the prior precision, `Γ_prior⁻¹ = LᵀL`.
pub trait PriorFactor: Send + Sync {
    fn dim(&self) -> usize;
    /// `L x`
    fn apply(&self, x: &DVector<f64>) -> DVector<f64>;
    /// `Lᵀ x`
    fn apply_transpose(&self, x: &DVector<f64>) -> DVector<f64>;
    /// `L⁻¹ x`
    fn solve(&self, x: &DVector<f64>) -> DVector<f64>;
    /// `L⁻ᵀ x`
    fn solve_transpose(&self, x: &DVector<f64>) -> DVector<f64>;
    fn counter(&self) -> &FactorCounter;
}

/// Materialize a [`LinearMap`] as a dense matrix by applying it to basis
/// vectors. Test scale only; the applications are counted.
pub fn densify_map(map: &dyn LinearMap) -> nalgebra::DMatrix<f64> {
    let (m, n) = (map.rows(), map.cols());
    let mut out = nalgebra::DMatrix::zeros(m, n);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        out.set_column(j, &map.apply(&e));
    }
    out
}

/// Materialize a [`PriorFactor`]'s `L` as a dense matrix. Test scale only.
pub fn densify_factor(factor: &dyn PriorFactor) -> nalgebra::DMatrix<f64> {
    let n = factor.dim();
    let mut out = nalgebra::DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        out.set_column(j, &factor.apply(&e));
    }
    out
}

/// Frozen operator/evaluation tallies.
///
/// Snapshots are taken before and after a sampler run; the difference is the
/// run's cost in matvecs.  All counts are monotone non-decreasing over the
/// lifetime of the operators.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CostSnapshot {
    pub a_apply: u64,
    pub a_transpose: u64,
    pub l_apply: u64,
    pub l_transpose: u64,
    pub l_solve: u64,
    pub l_transpose_solve: u64,
    pub full_posterior_evals: u64,
    pub surrogate_evals: u64,
}

impl CostSnapshot {
    /// Counts accumulated between `earlier` and `self`.
    pub fn delta(&self, earlier: &CostSnapshot) -> CostSnapshot {
        CostSnapshot {
            a_apply: self.a_apply - earlier.a_apply,
            a_transpose: self.a_transpose - earlier.a_transpose,
            l_apply: self.l_apply - earlier.l_apply,
            l_transpose: self.l_transpose - earlier.l_transpose,
            l_solve: self.l_solve - earlier.l_solve,
            l_transpose_solve: self.l_transpose_solve - earlier.l_transpose_solve,
            full_posterior_evals: self.full_posterior_evals - earlier.full_posterior_evals,
            surrogate_evals: self.surrogate_evals - earlier.surrogate_evals,
        }
    }

    /// Total `A`-type matvecs (transpose counted the same as forward).
    pub fn t_a(&self) -> u64 {
        self.a_apply + self.a_transpose
    }

    /// Total `L`-type matvecs.
    pub fn t_l(&self) -> u64 {
        self.l_apply + self.l_transpose
    }

    /// Total `L⁻¹`-type solves.
    pub fn t_l_inv(&self) -> u64 {
        self.l_solve + self.l_transpose_solve
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_vector(n: usize, rng: &mut impl Rng) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    /// `⟨u, A v⟩ = ⟨Aᵀ u, v⟩` over random pairs, relative to `‖u‖ ‖Av‖`.
    pub(crate) fn adjoint_mismatch(map: &dyn LinearMap, trials: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..trials {
            let v = random_vector(map.cols(), &mut rng);
            let u = random_vector(map.rows(), &mut rng);
            let av = map.apply(&v);
            let atu = map.apply_transpose(&u);
            let denom = u.norm() * av.norm();
            if denom == 0.0 {
                continue;
            }
            worst = worst.max((u.dot(&av) - atu.dot(&v)).abs() / denom);
        }
        worst
    }

    #[test]
    fn cost_snapshot_delta() {
        let a = CostSnapshot {
            a_apply: 3,
            l_solve: 5,
            ..Default::default()
        };
        let b = CostSnapshot {
            a_apply: 10,
            l_solve: 6,
            full_posterior_evals: 2,
            ..Default::default()
        };
        let d = b.delta(&a);
        assert_eq!(d.a_apply, 7);
        assert_eq!(d.l_solve, 1);
        assert_eq!(d.full_posterior_evals, 2);
        assert_eq!(d.t_a(), 7);
    }

    #[test]
    fn dense_map_identity() {
        let a = dense_map(DMatrix::identity(3, 3)).unwrap();
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(a.apply(&x), x);
    }

    #[test]
    fn dense_map_hand_checked() {
        let a = dense_map(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let x = DVector::from_vec(vec![1.0, 1.0]);
        let y = a.apply(&x);
        assert_eq!(y, DVector::from_vec(vec![3.0, 7.0]));
    }

    #[test]
    fn dense_map_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = DMatrix::from_fn(5, 4, |_, _| rng.random::<f64>() - 0.5);
        let a = dense_map(m).unwrap();
        // direct evaluation of both inner products
        let v = random_vector(4, &mut rng);
        let u = random_vector(5, &mut rng);
        let lhs = u.dot(&a.apply(&v));
        let rhs = a.apply_transpose(&u).dot(&v);
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn dense_map_counts_each_application() {
        let a = dense_map(DMatrix::identity(2, 2)).unwrap();
        let x = DVector::zeros(2);
        a.apply(&x);
        a.apply(&x);
        a.apply_transpose(&x);
        assert_eq!(a.counter().apply_count(), 2);
        assert_eq!(a.counter().transpose_count(), 1);
    }

    #[test]
    fn dense_map_rejects_non_finite() {
        let m = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        assert!(dense_map(m).is_err());
    }

    #[test]
    #[should_panic(expected = "dimension")]
    fn dense_map_dimension_mismatch_panics() {
        let a = dense_map(DMatrix::identity(3, 2)).unwrap();
        a.apply(&DVector::zeros(3));
    }

    #[test]
    fn conv1d_single_spike_gives_kernel_row() {
        // linearity on a basis vector: output is the scaled kernel column
        let n = 16;
        let a = conv1d_map(0.05, n, n).unwrap();
        let j = 5;
        let mut x = DVector::zeros(n);
        x[j] = 1.0;
        let y = a.apply(&x);
        let gamma: f64 = 0.05;
        let norm = 1.0 / (gamma * (2.0 * std::f64::consts::PI).sqrt());
        for i in 0..n {
            let s_i = (i as f64 + 0.5) / n as f64;
            let s_j = (j as f64 + 0.5) / n as f64;
            let expect = (-((s_i - s_j) / gamma).powi(2) / 2.0).exp() * norm / n as f64;
            assert_relative_eq!(y[i], expect, max_relative = 1e-12);
        }
    }

    #[test]
    fn conv1d_constant_kernel_integrates_to_one() {
        // quadrature of a constant: a ≡ 1 and x ≡ 1 gives exactly 1 everywhere
        let n = 12;
        let a = conv1d_map_with(|_| 1.0, n, 8).unwrap();
        let y = a.apply(&DVector::from_element(n, 1.0));
        for i in 0..8 {
            assert_relative_eq!(y[i], 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn conv1d_adjoint() {
        let a = conv1d_map(0.05, 32, 32).unwrap();
        assert!(adjoint_mismatch(&a, 20, 3) < 1e-10);
    }

    #[test]
    fn conv1d_rejects_bad_width() {
        assert!(conv1d_map(0.0, 8, 8).is_err());
        assert!(conv1d_map(-1.0, 8, 8).is_err());
    }

    #[test]
    fn laplacian1d_defining_stencil() {
        let l = laplacian1d_factor(3).unwrap();
        let dense = densify_factor(&l);
        let ltl = dense.transpose() * &dense;
        let expect = DMatrix::from_row_slice(
            3,
            3,
            &[2.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 2.0],
        );
        assert_relative_eq!(ltl, expect, epsilon = 1e-14);
    }

    #[test]
    fn laplacian1d_round_trip() {
        let l = laplacian1d_factor(16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_vector(16, &mut rng);
        let back = l.solve(&l.apply(&x));
        assert_relative_eq!(back, x, epsilon = 1e-10);
        let back_t = l.solve_transpose(&l.apply_transpose(&x));
        assert_relative_eq!(back_t, x, epsilon = 1e-10);
    }

    #[test]
    fn laplacian1d_smallest_eigenvalue() {
        // dense eigensolve oracle: spectrum of tridiag(-1,2,-1) at n=4 is
        // 2(1-cos(kπ/5))
        let l = laplacian1d_factor(4).unwrap();
        let dense = densify_factor(&l);
        let ltl = dense.transpose() * &dense;
        let eig = ltl.symmetric_eigen();
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        let expect = 2.0 * (1.0 - (std::f64::consts::PI / 5.0).cos());
        assert_relative_eq!(min, expect, epsilon = 1e-12);
    }

    #[test]
    fn laplacian1d_rejects_tiny_grid() {
        assert!(laplacian1d_factor(1).is_err());
        assert!(laplacian1d_factor(2).is_ok());
    }

    #[test]
    fn biharmonic2d_sine_mode_eigenvalue() {
        // analytic eigenvalue of the unscaled 5-point stencil: the discrete
        // sine mode sin(pπi/nx) sin(qπj/ny) is an exact eigenvector
        let (nx, ny) = (8, 6);
        let l = biharmonic2d_factor(nx, ny).unwrap();
        let (ix, iy) = (nx - 1, ny - 1);
        let (p, q) = (2usize, 1usize);
        let mode = DVector::from_fn(ix * iy, |idx, _| {
            let i = idx / iy + 1;
            let j = idx % iy + 1;
            ((p * i) as f64 * std::f64::consts::PI / nx as f64).sin()
                * ((q * j) as f64 * std::f64::consts::PI / ny as f64).sin()
        });
        let lam = 4.0 * ((p as f64) * std::f64::consts::PI / (2.0 * nx as f64)).sin().powi(2)
            + 4.0 * ((q as f64) * std::f64::consts::PI / (2.0 * ny as f64)).sin().powi(2);
        let out = l.apply(&mode);
        assert_relative_eq!(out, mode.scale(lam), epsilon = 1e-12);
    }

    #[test]
    fn biharmonic2d_round_trip() {
        let l = biharmonic2d_factor(8, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = random_vector(l.dim(), &mut rng);
        assert_relative_eq!(l.solve(&l.apply(&x)), x, epsilon = 1e-8);
    }

    #[test]
    fn biharmonic2d_symmetric() {
        let l = biharmonic2d_factor(6, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let u = random_vector(l.dim(), &mut rng);
        let v = random_vector(l.dim(), &mut rng);
        let lhs = u.dot(&l.apply(&v));
        let rhs = l.apply(&u).dot(&v);
        assert!((lhs - rhs).abs() / (u.norm() * v.norm()) < 1e-10);
    }

    #[test]
    fn heat2d_spike_diffuses_and_loses_mass() {
        let (nx, ny) = (8, 4);
        let n = (nx - 1) * (ny - 1);
        let obs: Vec<usize> = (0..n).collect();
        let a = heat2d_map(nx, ny, 0.05, 1.0, 10, obs).unwrap();
        let mut spike = DVector::zeros(n);
        spike[n / 2] = 1.0;
        let y = a.apply(&spike);
        assert!(y.iter().all(|&v| v > 0.0), "diffused spike positive everywhere");
        // Dirichlet boundary loses mass
        assert!(y.sum() < 1.0);
    }

    #[test]
    fn heat2d_adjoint() {
        let a = heat2d_map(8, 4, 0.02, 1.0, 4, vec![0, 3, 7, 11]).unwrap();
        assert!(adjoint_mismatch(&a, 20, 5) < 1e-10);
    }

    #[test]
    fn heat2d_zero_state_zero_observations() {
        let a = heat2d_map(8, 4, 0.02, 1.0, 4, vec![1, 2]).unwrap();
        let y = a.apply(&DVector::zeros(21));
        assert_eq!(y, DVector::zeros(2));
    }

    #[test]
    fn heat2d_validates_observations() {
        assert!(heat2d_map(8, 4, 0.02, 1.0, 4, vec![21]).is_err());
        assert!(heat2d_map(8, 4, 0.02, 1.0, 0, vec![0]).is_err());
        assert!(heat2d_map(8, 4, -0.1, 1.0, 4, vec![0]).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]

            #[test]
            fn dense_adjoint_consistency(rows in 1usize..10, cols in 1usize..10, seed in 0u64..1000) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let m = DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>() - 0.5);
                let a = dense_map(m).unwrap();
                prop_assert!(adjoint_mismatch(&a, 50, seed ^ 0xabcd) < 1e-8);
            }

            #[test]
            fn prior_factor_round_trips(n in 2usize..40, seed in 0u64..1000) {
                let l = laplacian1d_factor(n).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = random_vector(n, &mut rng);
                let rel = (l.solve(&l.apply(&x)) - &x).norm() / x.norm();
                prop_assert!(rel < 1e-8);
                let rel_t = (l.solve_transpose(&l.apply_transpose(&x)) - &x).norm() / x.norm();
                prop_assert!(rel_t < 1e-8);
            }
        }
    }
}
