use super::{CompressError, Result};
use crate::linalg::{least_squares, matmul, svd, Matrix, SvdResult};

fn check_rank(w: &Matrix, r: usize) -> Result<()> {
    let max = w.rows().min(w.cols());
    if r == 0 || r > max {
        return Err(CompressError::Domain {
            what: "rank",
            value: r as f64,
        });
    }
    Ok(())
}

/// `mn / (r (m + n))`: dense element count over factored element count.
pub fn compression_ratio(m: usize, n: usize, r: usize) -> f64 {
    (m * n) as f64 / (r * (m + n)) as f64
}

/// Share of spectral energy beyond the leading `r` singular values:
/// `Σ_{i>r} σᵢ² / Σ σᵢ²`. Zero for an all-zero spectrum.
pub fn tail_mass_ratio(sigma: &[f64], r: usize) -> f64 {
    let total: f64 = sigma.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return 0.0;
    }
    sigma.iter().skip(r).map(|s| s * s).sum::<f64>() / total
}

/// Number of singular values above `rel_tol * σ₁`.
pub fn numerical_rank(w: &Matrix, rel_tol: f64) -> Result<usize> {
    let s = svd(w)?;
    let cut = s.sigma[0] * rel_tol;
    Ok(s.sigma.iter().filter(|&&x| x > cut && x > 0.0).count())
}

/// Rank-`r` truncated SVD reconstruction `U Σ̂ Vᵀ`, same shape as `w`.
pub fn lowrank_distort(w: &Matrix, r: usize) -> Result<Matrix> {
    check_rank(w, r)?;
    Ok(svd(w)?.reconstruct_rank(r)?)
}

/// A rank-`r` matrix stored as `u_trunc` (`m x r`, columns of `UΣ̂`) times
/// `vt_trunc` (`r x n`).
#[derive(Debug, Clone)]
pub struct LowRankForm {
    pub u_trunc: Matrix,
    pub vt_trunc: Matrix,
    pub rank: usize,
    /// Singular values that were discarded, largest first.
    pub sigma_tail: Vec<f64>,
}

impl LowRankForm {
    pub fn reconstruct(&self) -> Matrix {
        matmul(&self.u_trunc, &self.vt_trunc).expect("factor shapes chain by construction")
    }

    pub fn param_count(&self) -> usize {
        self.rank * (self.u_trunc.rows() + self.vt_trunc.cols())
    }

    pub fn compression_ratio(&self) -> f64 {
        compression_ratio(self.u_trunc.rows(), self.vt_trunc.cols(), self.rank)
    }
}

fn factors_from(dec: &SvdResult, r: usize) -> LowRankForm {
    let m = dec.u.rows();
    let u_trunc = Matrix::from_fn(m, r, |i, j| dec.u.get(i, j) * dec.sigma[j]);
    LowRankForm {
        u_trunc,
        vt_trunc: dec.vt.leading_rows(r),
        rank: r,
        sigma_tail: dec.sigma[r..].to_vec(),
    }
}

/// Splits the rank-`r` truncation of `w` into its two factors.
pub fn truncate_to_factors(w: &Matrix, r: usize) -> Result<LowRankForm> {
    check_rank(w, r)?;
    Ok(factors_from(&svd(w)?, r))
}

/// Two matrices sharing one right factor: `W_h ≈ z_h vt_shared` and
/// `W_x ≈ z_x vt_shared`.
#[derive(Debug, Clone)]
pub struct SharedProjection {
    pub z_x: Matrix,
    pub z_h: Matrix,
    pub vt_shared: Matrix,
}

impl SharedProjection {
    pub fn reconstruct_x(&self) -> Matrix {
        matmul(&self.z_x, &self.vt_shared).expect("shapes chain")
    }

    pub fn reconstruct_h(&self) -> Matrix {
        matmul(&self.z_h, &self.vt_shared).expect("shapes chain")
    }
}

/// Takes the leading `r` right singular vectors of `w_h` as a shared projection
/// and fits `w_x` onto it: `z_x = argmin_Y ||Y vt_shared - w_x||_F`.
pub fn shared_projection(w_x: &Matrix, w_h: &Matrix, r: usize) -> Result<SharedProjection> {
    if w_x.cols() != w_h.cols() {
        return Err(CompressError::Shape(format!(
            "shared projection needs equal column counts, got {} and {}",
            w_x.cols(),
            w_h.cols()
        )));
    }
    check_rank(w_h, r)?;
    check_rank(w_x, r)?;
    let h = factors_from(&svd(w_h)?, r);
    // Y vt = W_x  <=>  vtᵀ Yᵀ = W_xᵀ, an ordinary (n x r) least-squares problem.
    let z_x_t = least_squares(&h.vt_trunc.transpose(), &w_x.transpose())?;
    Ok(SharedProjection {
        z_x: z_x_t.transpose(),
        z_h: h.u_trunc,
        vt_shared: h.vt_trunc,
    })
}
