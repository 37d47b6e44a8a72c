//! The linear node: per-level regularized normal equations
//! `Ĉ_k = [Diag(1/c_{x,k}) + Hᵀ Diag(1/c_{z,k}) H]⁻¹`.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use super::Ladders;
use crate::error::{Error, Result};

/// Diagonals and means of the Gaussian posterior at the linear node.
#[derive(Debug, Clone, PartialEq)]
pub struct LmmseOutput {
    /// `ĉ_{x,k} = d(Ĉ_k)`, level-major.
    pub c_hat_x: Ladders,
    /// Mean from the level-`K` system.
    pub mu_hat_x: DVector<f64>,
    /// `d(H Ĉ_k Hᵀ)` when the z-projection was requested.
    pub c_hat_z: Option<Ladders>,
    pub mu_hat_z: Option<DVector<f64>>,
}

fn check_positive(c: &[Vec<f64>], what: &str) -> Result<()> {
    for (k, row) in c.iter().enumerate() {
        if let Some(v) = row.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::numeric(format!(
                "{what} ladder entry {v} at level {k} is not a positive finite variance"
            )));
        }
    }
    Ok(())
}

/// Per-coordinate path: one Cholesky factorization per level.
pub fn lmmse_stage(
    h: &DMatrix<f64>,
    c_x: &Ladders,
    c_z: &Ladders,
    mu_x: &DVector<f64>,
    mu_z: &DVector<f64>,
    project_z: bool,
) -> Result<LmmseOutput> {
    let (m, n) = h.shape();
    if c_x.len() != c_z.len() || c_x.is_empty() {
        return Err(Error::invalid(
            "x and z ladders must have the same nonzero depth",
        ));
    }
    if c_x.iter().any(|r| r.len() != n)
        || c_z.iter().any(|r| r.len() != m)
        || mu_x.len() != n
        || mu_z.len() != m
    {
        return Err(Error::invalid("ladder or mean dimensions do not match H"));
    }
    check_positive(c_x, "x")?;
    check_positive(c_z, "z")?;
    let kk = c_x.len() - 1;
    let mut c_hat_x = Vec::with_capacity(kk + 1);
    let mut c_hat_z = project_z.then(|| Vec::with_capacity(kk + 1));
    let mut mu_hat_x = DVector::zeros(n);
    let ht = h.transpose();
    for k in 0..=kk {
        let mut s = h.clone();
        for (i, mut row) in s.row_iter_mut().enumerate() {
            row *= c_z[k][i].sqrt().recip();
        }
        let mut a = s.tr_mul(&s);
        for i in 0..n {
            a[(i, i)] += c_x[k][i].recip();
        }
        let chol = Cholesky::new(a).ok_or_else(|| {
            Error::Singular(format!(
                "LMMSE system at level {k} is not positive definite"
            ))
        })?;
        // Ĉ = WᵀW with W = L⁻¹
        let mut w = DMatrix::identity(n, n);
        if !chol.l_dirty().solve_lower_triangular_mut(&mut w) {
            return Err(Error::Singular(format!(
                "LMMSE factor at level {k} has a zero pivot"
            )));
        }
        // L⁻¹ is lower triangular; clear the upper part left by the solve
        w.fill_upper_triangle(0.0, 1);
        c_hat_x.push(w.column_iter().map(|c| c.norm_squared()).collect());
        if k == kk {
            let rhs = mu_x.component_div(&DVector::from_column_slice(&c_x[k]))
                + &ht * mu_z.component_div(&DVector::from_column_slice(&c_z[k]));
            mu_hat_x = chol.solve(&rhs);
        }
        if let Some(cz) = c_hat_z.as_mut() {
            let p = &w * &ht;
            cz.push(p.column_iter().map(|c| c.norm_squared()).collect());
        }
    }
    let mu_hat_z = project_z.then(|| h * &mu_hat_x);
    Ok(LmmseOutput {
        c_hat_x,
        mu_hat_x,
        c_hat_z,
        mu_hat_z,
    })
}

/// Eigendecomposition path for ladders that are uniform across coordinates:
/// with `HᵀH = V Λ Vᵀ`, every level is diagonal in the eigenbasis, so a
/// stage costs `O(N² + MN)` after the one-off decomposition.
#[derive(Debug, Clone)]
pub struct SpectralLmmse {
    v: DMatrix<f64>,
    lambda: DVector<f64>,
    v_sq: DMatrix<f64>,
    hv_sq: DMatrix<f64>,
}

impl SpectralLmmse {
    pub fn new(h: &DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new(h.tr_mul(h));
        let v = eig.eigenvectors;
        let lambda = eig.eigenvalues.map(|l| l.max(0.0));
        let v_sq = v.map(|x| x * x);
        let hv_sq = (h * &v).map(|x| x * x);
        Self {
            v,
            lambda,
            v_sq,
            hv_sq,
        }
    }

    /// Eigenvalues of `HᵀH` (clipped at zero, in decomposition order).
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.lambda
    }

    /// Same outputs as [`lmmse_stage`] for scalar per-level variances.
    pub fn solve(
        &self,
        h: &DMatrix<f64>,
        c_x: &[f64],
        c_z: &[f64],
        mu_x: &DVector<f64>,
        mu_z: &DVector<f64>,
        project_z: bool,
    ) -> Result<LmmseOutput> {
        if c_x.len() != c_z.len() || c_x.is_empty() {
            return Err(Error::invalid(
                "x and z ladders must have the same nonzero depth",
            ));
        }
        if let Some(v) = c_x
            .iter()
            .chain(c_z)
            .find(|v| !(**v > 0.0) || !v.is_finite())
        {
            return Err(Error::numeric(format!(
                "ladder entry {v} is not a positive finite variance"
            )));
        }
        let kk = c_x.len() - 1;
        let filter = |k: usize| self.lambda.map(|l| (c_x[k].recip() + l / c_z[k]).recip());
        let mut c_hat_x = Vec::with_capacity(kk + 1);
        let mut c_hat_z = project_z.then(|| Vec::with_capacity(kk + 1));
        for k in 0..=kk {
            let f = filter(k);
            c_hat_x.push((&self.v_sq * &f).iter().copied().collect());
            if let Some(cz) = c_hat_z.as_mut() {
                cz.push((&self.hv_sq * &f).iter().copied().collect());
            }
        }
        let rhs = mu_x / c_x[kk] + h.tr_mul(mu_z) / c_z[kk];
        let coef = self.v.tr_mul(&rhs).component_mul(&filter(kk));
        let mu_hat_x = &self.v * coef;
        let mu_hat_z = project_z.then(|| h * &mu_hat_x);
        Ok(LmmseOutput {
            c_hat_x,
            mu_hat_x,
            c_hat_z,
            mu_hat_z,
        })
    }
}
