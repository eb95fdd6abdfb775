use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative size of a QR pivot below which its column is considered a linear
/// combination of the preceding ones.
const RANK_TOL: f64 = 1e-9;

/// Least-squares fit via Householder QR.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coef: DVector<f64>,
    /// `(X'X)^-1`.
    pub xtx_inv: DMatrix<f64>,
    pub residuals: DVector<f64>,
    pub rss: f64,
    /// Centered total sum of squares of the response.
    pub tss: f64,
    pub n: usize,
    pub p: usize,
}

impl OlsFit {
    pub fn df_resid(&self) -> usize {
        self.n - self.p
    }

    pub fn sigma2(&self) -> f64 {
        self.rss / self.df_resid() as f64
    }

    pub fn std_errors(&self) -> Vec<f64> {
        let s2 = self.sigma2();
        (0..self.p).map(|j| (s2 * self.xtx_inv[(j, j)]).sqrt()).collect()
    }

    pub fn r2(&self) -> f64 {
        1.0 - self.rss / self.tss
    }

    pub fn adjusted_r2(&self) -> f64 {
        1.0 - (self.rss / self.df_resid() as f64) / (self.tss / (self.n - 1) as f64)
    }
}

pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>, names: &[String]) -> Result<OlsFit> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::invalid(format!("response has {} rows, design has {n}", y.len())));
    }
    if n <= p {
        return Err(Error::invalid(format!("need more observations ({n}) than columns ({p})")));
    }
    let qr = x.clone().qr();
    let r = qr.r();

    let dependent: Vec<String> = (0..p)
        .filter(|&j| {
            let norm = x.column(j).norm();
            r[(j, j)].abs() <= RANK_TOL * norm.max(f64::MIN_POSITIVE)
        })
        .map(|j| names.get(j).cloned().unwrap_or_else(|| format!("column {j}")))
        .collect();
    if !dependent.is_empty() {
        return Err(Error::RankDeficient { columns: dependent });
    }

    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let coef = r
        .solve_upper_triangular(&qty.rows(0, p).into_owned())
        .ok_or_else(|| Error::numerical("singular triangular factor"))?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::numerical("singular triangular factor"))?;
    let xtx_inv = &r_inv * r_inv.transpose();

    let residuals = y - x * &coef;
    let rss = residuals.norm_squared();
    let mean = y.mean();
    let tss = y.iter().map(|v| (v - mean).powi(2)).sum();
    Ok(OlsFit { coef, xtx_inv, residuals, rss, tss, n, p })
}
