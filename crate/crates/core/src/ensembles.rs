//! Correlated Gaussian measurement ensembles and structured-matrix identities.
//!
//! Random streams: every draw comes from a ChaCha20 generator seeded with
//! `seed_from_u64(seed)` and switched to stream `trial_index` via
//! [`ChaCha20Rng::set_stream`]. ChaCha is counter based, so trial `i` sees the
//! same numbers no matter how trials are scheduled across threads.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape and randomness of one measurement ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n: usize,
    pub alpha: f64,
    pub rho: f64,
    pub seed: u64,
}

impl EnsembleConfig {
    pub fn m(&self) -> usize {
        (self.alpha * self.n as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("n must be positive"));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::invalid(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if self.m() == 0 {
            return Err(Error::invalid("round(alpha * n) must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::invalid(format!(
                "rho must lie in [0, 1), got {}",
                self.rho
            )));
        }
        Ok(())
    }
}

/// Generator for substream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One realized detection problem `y = H x0 + w`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub h: DMatrix<f64>,
    pub x0: DVector<f64>,
    pub z0: DVector<f64>,
    pub y: DVector<f64>,
    /// Eigenvalues of `HᵀH`, ascending, clipped at zero.
    pub lambda_samples: Vec<f64>,
}

impl ProblemInstance {
    pub fn n(&self) -> usize {
        self.h.ncols()
    }

    pub fn m(&self) -> usize {
        self.h.nrows()
    }

    pub fn alpha(&self) -> f64 {
        self.m() as f64 / self.n() as f64
    }

    pub fn mean_lambda(&self) -> f64 {
        self.lambda_samples.iter().sum::<f64>() / self.lambda_samples.len() as f64
    }
}

/// `R[i][j] = rho^|i-j|`.
pub fn kronecker_correlation(rho: f64, n: usize) -> Result<DMatrix<f64>> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::invalid(format!("rho must lie in [0, 1), got {rho}")));
    }
    if n == 0 {
        return Err(Error::invalid("n must be positive"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            rho.powi(i.abs_diff(j) as i32)
        }
    }))
}

/// Principal square root of a symmetric positive-definite matrix.
/// Eigenvalues below `1e-14` are clamped there.
pub fn principal_sqrt(r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(r.clone());
    let min = eig.eigenvalues.min();
    if !min.is_finite() || min < -1e-8 {
        return Err(Error::numeric(format!(
            "matrix is not positive definite (smallest eigenvalue {min})"
        )));
    }
    let d = eig.eigenvalues.map(|l| l.max(1e-14).sqrt());
    let v = &eig.eigenvectors;
    let s = v * DMatrix::from_diagonal(&d) * v.transpose();
    Ok((&s + s.transpose()) * 0.5)
}

/// Ascending eigenvalues of `HᵀH`, clipped at zero.
pub fn gram_spectrum(h: &DMatrix<f64>) -> Vec<f64> {
    let g = h.tr_mul(h);
    let mut l: Vec<f64> = SymmetricEigen::new(g)
        .eigenvalues
        .iter()
        .map(|&x| x.max(0.0))
        .collect();
    l.sort_by(f64::total_cmp);
    l
}

/// Draw `H = H_w R^{1/2}` with `H_w` i.i.d. `N(0, 1/N)` from `rng`.
pub fn sample_measurement(config: &EnsembleConfig, rng: &mut ChaCha20Rng) -> Result<DMatrix<f64>> {
    config.validate()?;
    let (m, n) = (config.m(), config.n);
    let sd = 1.0 / (n as f64).sqrt();
    // row-major fill order is part of the reproducibility contract
    let mut hw = DMatrix::<f64>::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            let g: f64 = StandardNormal.sample(rng);
            hw[(i, j)] = sd * g;
        }
    }
    if config.rho == 0.0 {
        return Ok(hw);
    }
    let r = kronecker_correlation(config.rho, n)?;
    Ok(hw * principal_sqrt(&r)?)
}

/// Measurement matrix and its Gram spectrum from `config.seed` (stream 0).
pub fn build_measurement(config: &EnsembleConfig) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let mut rng = stream_rng(config.seed, 0);
    let h = sample_measurement(config, &mut rng)?;
    let l = gram_spectrum(&h);
    Ok((h, l))
}

/// Inverse of `Q = 1_L ⊗ B + I_L ⊗ (A − B)` stored as its two distinct
/// blocks: `Q⁻¹ = I_L ⊗ diag_block + 1_L ⊗ all_block`.
#[derive(Debug, Clone)]
pub struct StructuredInverse {
    pub diag_block: DMatrix<f64>,
    pub all_block: DMatrix<f64>,
    pub copies: usize,
}

impl StructuredInverse {
    /// Dense `nL × nL` form.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.diag_block.nrows();
        let l = self.copies;
        let mut out = DMatrix::zeros(n * l, n * l);
        for bi in 0..l {
            for bj in 0..l {
                let mut blk = self.all_block.clone();
                if bi == bj {
                    blk += &self.diag_block;
                }
                out.view_mut((bi * n, bj * n), (n, n)).copy_from(&blk);
            }
        }
        out
    }
}

/// Dense `1_L ⊗ B + I_L ⊗ (A − B)`.
pub fn structured_dense(a: &DMatrix<f64>, b: &DMatrix<f64>, l: usize) -> DMatrix<f64> {
    let n = a.nrows();
    let mut q = DMatrix::zeros(n * l, n * l);
    for bi in 0..l {
        for bj in 0..l {
            let blk = if bi == bj { a } else { b };
            q.view_mut((bi * n, bj * n), (n, n)).copy_from(blk);
        }
    }
    q
}

/// Closed-form inverse of a block matrix with `A` on the
/// diagonal and `B` everywhere else.
///
/// Uses the form `all = −(A + (L−1)B)⁻¹ B (A−B)⁻¹`, `diag = (A−B)⁻¹`, which
/// equals `−[(A−B)B⁻¹(A−B) + L(A−B)]⁻¹` whenever `B` is invertible and stays
/// defined when it is not.
pub fn structured_inverse(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    l: usize,
) -> Result<StructuredInverse> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || b.ncols() != n {
        return Err(Error::invalid("A and B must be square and of equal size"));
    }
    if l == 0 {
        return Err(Error::invalid("L must be positive"));
    }
    let amb = a - b;
    let diag = invert(&amb).ok_or_else(|| Error::Singular("A − B".into()))?;
    let comb = a + b * (l as f64 - 1.0);
    let comb_inv = invert(&comb).ok_or_else(|| Error::Singular("A + (L − 1) B".into()))?;
    let all = -(comb_inv * b * &diag);
    Ok(StructuredInverse {
        diag_block: diag,
        all_block: all,
        copies: l,
    })
}

fn invert(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let lu = m.clone().lu();
    let scale = m.amax().max(f64::MIN_POSITIVE);
    // reject numerically singular pivots
    let u = lu.u();
    let min_pivot = (0..u.nrows())
        .map(|i| u[(i, i)].abs())
        .fold(f64::INFINITY, f64::min);
    if !(min_pivot > 1e-13 * scale) {
        return None;
    }
    lu.try_inverse()
}

/// Parameters of a KRSB-structured overlap matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct KrsbMatrixParams {
    pub c: f64,
    pub d: f64,
    pub f: f64,
    pub chi: f64,
    pub h_levels: Vec<f64>,
    pub ladder_sizes: Vec<usize>,
    pub tau: usize,
}

impl KrsbMatrixParams {
    pub fn validate(&self) -> Result<()> {
        if self.h_levels.len() != self.ladder_sizes.len() {
            return Err(Error::invalid(
                "h_levels and ladder_sizes must have equal length",
            ));
        }
        if self.tau == 0 {
            return Err(Error::invalid("tau must be positive"));
        }
        let mut prev = 1;
        for &l in &self.ladder_sizes {
            if l == 0 || l % prev != 0 {
                return Err(Error::invalid(format!(
                    "ladder size {l} is not a multiple of {prev}"
                )));
            }
            prev = l;
        }
        if !self.tau.is_multiple_of(prev) {
            return Err(Error::invalid(format!(
                "tau = {} is not a multiple of {prev}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// `Q = F · D_q · F^†` with `F` block-diagonal unitary.
#[derive(Debug, Clone)]
pub struct KrsbDecomposition {
    pub q: DMatrix<f64>,
    pub f_factor: DMatrix<Complex64>,
    pub d_q: DMatrix<Complex64>,
}

impl KrsbDecomposition {
    pub fn reconstruct(&self) -> DMatrix<Complex64> {
        &self.f_factor * &self.d_q * self.f_factor.adjoint()
    }

    /// `‖Q − F D_q F^†‖_F / ‖Q‖_F`
    pub fn relative_error(&self) -> f64 {
        let r = self.reconstruct();
        let q = self.q.map(|x| Complex64::new(x, 0.0));
        (r - &q).norm() / q.norm().max(f64::MIN_POSITIVE)
    }
}

fn dft(l: usize) -> DMatrix<Complex64> {
    let s = 1.0 / (l as f64).sqrt();
    DMatrix::from_fn(l, l, |j, k| {
        let ph = -2.0 * std::f64::consts::PI * ((j * k) % l) as f64 / l as f64;
        Complex64::from_polar(s, ph)
    })
}

fn kron(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    a.kronecker(b)
}

/// Assemble `Q = [[C, D 1ᵀ], [D 1, F 𝟙 + χ I + Σ H_k I_{τ/L̃_k} ⊗ 𝟙_{L̃_k}]]`
/// and its Fourier-block factorization.
pub fn krsb_build_and_decompose(p: &KrsbMatrixParams) -> Result<KrsbDecomposition> {
    p.validate()?;
    let tau = p.tau;
    let mut q = DMatrix::<f64>::zeros(tau + 1, tau + 1);
    q[(0, 0)] = p.c;
    for i in 0..tau {
        q[(0, i + 1)] = p.d;
        q[(i + 1, 0)] = p.d;
        for j in 0..tau {
            let mut v = p.f;
            if i == j {
                v += p.chi;
            }
            for (&h, &l) in p.h_levels.iter().zip(&p.ladder_sizes) {
                if i / l == j / l {
                    v += h;
                }
            }
            q[(i + 1, j + 1)] = v;
        }
    }

    // normalized DFT factors, coarsest first: F_{τ/L̃_K} ⊗ … ⊗ F_{L̃_1}
    let mut inner = DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0));
    let mut prev = 1;
    for &l in &p.ladder_sizes {
        inner = kron(&dft(l / prev), &inner);
        prev = l;
    }
    inner = kron(&dft(tau / prev), &inner);
    let mut f_factor = DMatrix::<Complex64>::zeros(tau + 1, tau + 1);
    f_factor[(0, 0)] = Complex64::new(1.0, 0.0);
    f_factor.view_mut((1, 1), (tau, tau)).copy_from(&inner);

    let mut d_q = DMatrix::<Complex64>::zeros(tau + 1, tau + 1);
    d_q[(0, 0)] = Complex64::new(p.c, 0.0);
    let corner = Complex64::new((tau as f64).sqrt() * p.d, 0.0);
    d_q[(0, 1)] = corner;
    d_q[(1, 0)] = corner;
    for i in 0..tau {
        let mut v = p.chi;
        if i == 0 {
            v += tau as f64 * p.f;
        }
        for (&h, &l) in p.h_levels.iter().zip(&p.ladder_sizes) {
            if i % l == 0 {
                v += l as f64 * h;
            }
        }
        d_q[(i + 1, i + 1)] = Complex64::new(v, 0.0);
    }
    Ok(KrsbDecomposition { q, f_factor, d_q })
}
