//! Low-rank approximation of the prior-preconditioned data-misfit Hessian
//! `H = L⁻ᵀAᵀAL⁻¹` and the conditional covariance factor it induces.
//!
//! With `H ≈ V_k Λ_k V_kᵀ` the conditional precision `μAᵀA + σΓ_prior⁻¹`
//! becomes `Lᵀ(μV_kΛ_kV_kᵀ + σI)L`, which can be inverted, factored, and
//! log-determined in `O(nk)` once the eigenpairs are known.  The
//! decomposition is θ-independent and built once per run; only the
//! diagonals of [`GFactor`] depend on `θ`.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::model::HyperState;
use crate::operators::{densify_factor, densify_map, LinearMap, PriorFactor};

#[derive(Debug, Error)]
pub enum LowRankError {
    #[error("rank {k} out of range 1..={max}")]
    RankOutOfRange { k: usize, max: usize },
    #[error("operator is {rows}x{cols} but prior factor has dimension {dim}")]
    DimensionMismatch { rows: usize, cols: usize, dim: usize },
    #[error("Lanczos breakdown after {0} steps, before the requested rank converged")]
    LanczosBreakdown(usize),
    #[error("surrogate file is malformed: {0}")]
    MalformedFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How to compute the truncated eigendecomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EigMethod {
    /// Densify `H` and eigendecompose directly. Test scale only.
    Exact,
    /// Lanczos tridiagonalization with full reorthogonalization.
    Lanczos,
    /// Randomized subspace iteration.
    Randomized,
}

/// Knobs for the iterative methods.
#[derive(Debug, Clone, Copy)]
pub struct LowRankOptions {
    /// Extra subspace dimension beyond the stored rank.
    pub oversampling: usize,
    /// Power/subspace iterations for the randomized method.
    pub power_iterations: usize,
    /// Store eigenpairs beyond the kept rank `k` (tail estimates for the
    /// moment quantities). Defaults to `k` itself, i.e. no tail.
    pub extended_rank: Option<usize>,
    /// Seed for the randomized sketch, separate from any chain RNG.
    pub seed: u64,
}

impl Default for LowRankOptions {
    fn default() -> Self {
        Self {
            oversampling: 10,
            power_iterations: 2,
            extended_rank: None,
            seed: 0x10f_ab1e,
        }
    }
}

/// Truncated eigendecomposition of `L⁻ᵀAᵀAL⁻¹`.
///
/// Stores `k_stored ≥ k` pairs; the leading `k` define the surrogate
/// covariance, the remainder (if any) estimate the discarded tail.
pub struct LowRankSurrogate {
    /// kept rank defining the surrogate
    k: usize,
    /// eigenvalues, non-increasing, length `k_stored`
    eigenvalues: Vec<f64>,
    /// orthonormal columns, `n × k_stored`
    vectors: DMatrix<f64>,
    map: Arc<dyn LinearMap>,
    prior: Arc<dyn PriorFactor>,
}

impl LowRankSurrogate {
    pub fn dim(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn rank(&self) -> usize {
        self.k
    }

    pub fn stored_rank(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Kept eigenvalues `λ_1 ≥ … ≥ λ_k`.
    pub fn kept_eigenvalues(&self) -> &[f64] {
        &self.eigenvalues[..self.k]
    }

    /// Tail eigenvalues `λ_{k+1} ≥ …` beyond the kept rank.
    pub fn tail_eigenvalues(&self) -> &[f64] {
        &self.eigenvalues[self.k..]
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn kept_vectors(&self) -> nalgebra::DMatrixView<'_, f64> {
        self.vectors.view((0, 0), (self.dim(), self.k))
    }

    pub fn map(&self) -> &Arc<dyn LinearMap> {
        &self.map
    }

    pub fn prior(&self) -> &Arc<dyn PriorFactor> {
        &self.prior
    }

    /// Same decomposition with a different kept rank `k ≤ k_stored`.
    pub fn with_rank(&self, k: usize) -> Result<Self, LowRankError> {
        if k == 0 || k > self.stored_rank() {
            return Err(LowRankError::RankOutOfRange {
                k,
                max: self.stored_rank(),
            });
        }
        Ok(Self {
            k,
            eigenvalues: self.eigenvalues.clone(),
            vectors: self.vectors.clone(),
            map: Arc::clone(&self.map),
            prior: Arc::clone(&self.prior),
        })
    }

    /// `V_kᵀ y` over the kept columns.
    pub fn project_kept(&self, y: &DVector<f64>) -> DVector<f64> {
        self.kept_vectors().tr_mul(y)
    }

    /// `Vᵀ y` over all stored columns.
    pub fn project_stored(&self, y: &DVector<f64>) -> DVector<f64> {
        self.vectors.tr_mul(y)
    }
}

impl std::fmt::Debug for LowRankSurrogate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LowRankSurrogate")
            .field("dim", &self.dim())
            .field("rank", &self.k)
            .field("stored_rank", &self.stored_rank())
            .finish()
    }
}

/// One application of `H = L⁻ᵀAᵀAL⁻¹`.
fn hessian_apply(a: &dyn LinearMap, l: &dyn PriorFactor, v: &DVector<f64>) -> DVector<f64> {
    l.solve_transpose(&a.apply_transpose(&a.apply(&l.solve(v))))
}

/// Compute the top-`k` eigenpairs of the prior-preconditioned data-misfit
/// Hessian.
pub fn truncated_eig(
    a: Arc<dyn LinearMap>,
    l: Arc<dyn PriorFactor>,
    k: usize,
    method: EigMethod,
    opts: LowRankOptions,
) -> Result<LowRankSurrogate, LowRankError> {
    let n = a.cols();
    if l.dim() != n {
        return Err(LowRankError::DimensionMismatch {
            rows: a.rows(),
            cols: a.cols(),
            dim: l.dim(),
        });
    }
    let max_rank = a.rows().min(n);
    if k == 0 || k > max_rank {
        return Err(LowRankError::RankOutOfRange { k, max: max_rank });
    }
    let k_store = opts.extended_rank.unwrap_or(k).max(k).min(n);
    let (eigenvalues, vectors) = match method {
        EigMethod::Exact => exact_eig(a.as_ref(), l.as_ref(), n),
        EigMethod::Randomized => randomized_eig(a.as_ref(), l.as_ref(), k_store, &opts),
        EigMethod::Lanczos => lanczos_eig(a.as_ref(), l.as_ref(), k_store, &opts)?,
    };
    let stored = k_store.min(eigenvalues.len());
    Ok(LowRankSurrogate {
        k,
        eigenvalues: eigenvalues[..stored].to_vec(),
        vectors: vectors.columns(0, stored).into_owned(),
        map: a,
        prior: l,
    })
}

/// Sort a symmetric eigendecomposition by descending eigenvalue, clamping
/// tiny negative values of the PSD operator to zero.
fn sorted_pairs(eigenvalues: DVector<f64>, vectors: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let mut idx: Vec<usize> = (0..eigenvalues.len()).collect();
    idx.sort_by(|&i, &j| eigenvalues[j].partial_cmp(&eigenvalues[i]).unwrap());
    let vals: Vec<f64> = idx.iter().map(|&i| eigenvalues[i].max(0.0)).collect();
    let cols: Vec<_> = idx.iter().map(|&i| vectors.column(i)).collect();
    (vals, DMatrix::from_columns(&cols))
}

fn exact_eig(a: &dyn LinearMap, l: &dyn PriorFactor, n: usize) -> (Vec<f64>, DMatrix<f64>) {
    let l_dense = densify_factor(l);
    let a_dense = densify_map(a);
    let l_inv = l_dense
        .lu()
        .solve(&DMatrix::identity(n, n))
        .expect("prior factor must be invertible");
    let al_inv = &a_dense * &l_inv;
    let mut h = al_inv.tr_mul(&al_inv);
    // enforce symmetry against roundoff
    h = (&h + h.transpose()) * 0.5;
    let eig = h.symmetric_eigen();
    sorted_pairs(eig.eigenvalues, eig.eigenvectors)
}

fn gaussian_matrix(n: usize, s: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, s, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn orthonormalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let qr = m.clone().qr();
    let q = qr.q();
    q.columns(0, m.ncols().min(q.ncols())).into_owned()
}

fn randomized_eig(
    a: &dyn LinearMap,
    l: &dyn PriorFactor,
    k_store: usize,
    opts: &LowRankOptions,
) -> (Vec<f64>, DMatrix<f64>) {
    let n = l.dim();
    let s = (k_store + opts.oversampling).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut basis = gaussian_matrix(n, s, &mut rng);
    for _ in 0..=opts.power_iterations {
        let mut image = DMatrix::zeros(n, s);
        for j in 0..s {
            image.set_column(j, &hessian_apply(a, l, &basis.column(j).into_owned()));
        }
        basis = orthonormalize(&image);
    }
    // Rayleigh-Ritz on the converged subspace
    let cols = basis.ncols();
    let mut image = DMatrix::zeros(n, cols);
    for j in 0..cols {
        image.set_column(j, &hessian_apply(a, l, &basis.column(j).into_owned()));
    }
    let mut small = basis.tr_mul(&image);
    small = (&small + small.transpose()) * 0.5;
    let eig = small.symmetric_eigen();
    let (vals, small_vecs) = sorted_pairs(eig.eigenvalues, eig.eigenvectors);
    let take = k_store.min(vals.len());
    let vectors = &basis * small_vecs.columns(0, take);
    (vals[..take].to_vec(), vectors)
}

fn lanczos_eig(
    a: &dyn LinearMap,
    l: &dyn PriorFactor,
    k_store: usize,
    opts: &LowRankOptions,
) -> Result<(Vec<f64>, DMatrix<f64>), LowRankError> {
    let n = l.dim();
    let steps = (k_store + opts.oversampling).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut q = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    q /= q.norm();

    let mut basis: Vec<DVector<f64>> = vec![q];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    for j in 0..steps {
        let mut w = hessian_apply(a, l, &basis[j]);
        if j > 0 {
            w -= &basis[j - 1] * betas[j - 1];
        }
        let alpha = basis[j].dot(&w);
        w -= &basis[j] * alpha;
        // full reorthogonalization keeps the basis numerically orthonormal
        for v in &basis {
            let c = v.dot(&w);
            w -= v * c;
        }
        alphas.push(alpha);
        if j + 1 == steps {
            break;
        }
        let beta = w.norm();
        if beta < 1e-12 * alpha.abs().max(1.0) {
            // invariant subspace reached before the requested rank
            break;
        }
        betas.push(beta);
        basis.push(w / beta);
    }
    let m = alphas.len();
    if m < k_store {
        return Err(LowRankError::LanczosBreakdown(m));
    }
    let mut tri = DMatrix::zeros(m, m);
    for i in 0..m {
        tri[(i, i)] = alphas[i];
        if i + 1 < m {
            tri[(i, i + 1)] = betas[i];
            tri[(i + 1, i)] = betas[i];
        }
    }
    let eig = tri.symmetric_eigen();
    let (vals, small_vecs) = sorted_pairs(eig.eigenvalues, eig.eigenvectors);
    let q_mat = DMatrix::from_columns(&basis[..m].iter().collect::<Vec<_>>());
    let take = k_store.min(vals.len());
    let vectors = &q_mat * small_vecs.columns(0, take);
    Ok((vals[..take].to_vec(), vectors))
}

/// θ-dependent factor `G` of the surrogate conditional covariance,
/// `GGᵀ = Γ̂_cond`, with `G = σ^(−1/2) L⁻¹ (I − V_k D̂_k V_kᵀ)`.
///
/// The diagonals are `d_j = μλ_j / (μλ_j + σ)` and `d̂_j = 1 − √(1 − d_j)`;
/// the sign choice makes `G → σ^(−1/2) L⁻¹` continuously as the eigenvalues
/// vanish.
#[derive(Debug, Clone)]
pub struct GFactor {
    theta: HyperState,
    d: Vec<f64>,
    d_hat: Vec<f64>,
}

impl GFactor {
    pub fn theta(&self) -> HyperState {
        self.theta
    }

    /// `d_j = μλ_j / (μλ_j + σ)`
    pub fn d(&self) -> &[f64] {
        &self.d
    }

    /// `d̂_j = 1 − √(1 − d_j)`
    pub fn d_hat(&self) -> &[f64] {
        &self.d_hat
    }

    /// `σ^(−1/2) (I − V_k D̂_k V_kᵀ) ε` — everything of `Gε` except the final
    /// prior solve.
    pub fn half_image(&self, s: &LowRankSurrogate, eps: &DVector<f64>) -> DVector<f64> {
        let mut t = s.project_kept(eps);
        for (ti, dh) in t.iter_mut().zip(&self.d_hat) {
            *ti *= dh;
        }
        let mut w = eps.clone();
        w.gemv(-1.0, &s.kept_vectors(), &t, 1.0);
        w / self.theta.sigma.sqrt()
    }

    /// `G ε`; costs one prior solve plus `O(nk)`.
    pub fn apply(&self, s: &LowRankSurrogate, eps: &DVector<f64>) -> DVector<f64> {
        s.prior().solve(&self.half_image(s, eps))
    }
}

/// Build the conditional covariance factor at `θ`.
pub fn build_g_factor(s: &LowRankSurrogate, theta: HyperState) -> GFactor {
    let (mu, sigma) = (theta.mu, theta.sigma);
    let d: Vec<f64> = s
        .kept_eigenvalues()
        .iter()
        .map(|&lam| mu * lam / (mu * lam + sigma))
        .collect();
    let d_hat: Vec<f64> = d.iter().map(|&dj| 1.0 - (1.0 - dj).sqrt()).collect();
    GFactor { theta, d, d_hat }
}

/// Draw `x = x̂_cond + Gε` with fresh standard-normal `ε`.
pub fn sample_conditional(
    g: &GFactor,
    s: &LowRankSurrogate,
    xcond_hat: &DVector<f64>,
    rng: &mut impl Rng,
) -> DVector<f64> {
    let eps = DVector::from_fn(s.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
    xcond_hat + g.apply(s, &eps)
}

/// Write the decomposition to its binary sidecar: header `n`, `k_stored`
/// (little-endian u64), then the eigenvalues and `V` column-major as
/// little-endian f64.
pub fn write_surrogate(s: &LowRankSurrogate, path: &Path) -> Result<(), LowRankError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&(s.dim() as u64).to_le_bytes())?;
    f.write_all(&(s.stored_rank() as u64).to_le_bytes())?;
    for &v in &s.eigenvalues {
        f.write_all(&v.to_le_bytes())?;
    }
    for col in s.vectors.column_iter() {
        for &v in col.iter() {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

/// Read a decomposition back, attaching it to the operators it was built
/// from. `k` is the kept rank.
pub fn read_surrogate(
    path: &Path,
    a: Arc<dyn LinearMap>,
    l: Arc<dyn PriorFactor>,
    k: usize,
) -> Result<LowRankSurrogate, LowRankError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut u64buf = [0u8; 8];
    f.read_exact(&mut u64buf)?;
    let n = u64::from_le_bytes(u64buf) as usize;
    f.read_exact(&mut u64buf)?;
    let k_stored = u64::from_le_bytes(u64buf) as usize;
    if n != l.dim() {
        return Err(LowRankError::MalformedFile(format!(
            "file dimension {n} does not match prior dimension {}",
            l.dim()
        )));
    }
    if k == 0 || k > k_stored {
        return Err(LowRankError::RankOutOfRange { k, max: k_stored });
    }
    fn read_f64(f: &mut impl Read) -> Result<f64, LowRankError> {
        let mut b = [0u8; 8];
        f.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }
    let mut eigenvalues = Vec::with_capacity(k_stored);
    for _ in 0..k_stored {
        eigenvalues.push(read_f64(&mut f)?);
    }
    let mut vectors = DMatrix::zeros(n, k_stored);
    for j in 0..k_stored {
        for i in 0..n {
            vectors[(i, j)] = read_f64(&mut f)?;
        }
    }
    Ok(LowRankSurrogate {
        k,
        eigenvalues,
        vectors,
        map: a,
        prior: l,
    })
}
