use serde::{Deserialize, Serialize};

use super::{coefficient_names, design, ols, Coefficient, DesignRow};
use crate::error::Result;

/// Pooled linear model `y = alpha0 + alpha1 x + sum_k gamma_k w_k + e`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    /// `alpha0`, `alpha1`, then `gamma_1..gamma_K`.
    pub coefficients: Vec<Coefficient>,
    pub sigma2: f64,
    pub r2: f64,
    pub adjusted_r2: f64,
    pub n_obs: usize,
    pub df_resid: usize,
}

impl LinearFit {
    pub fn alpha0(&self) -> f64 {
        self.coefficients[0].estimate
    }

    pub fn alpha1(&self) -> f64 {
        self.coefficients[1].estimate
    }

    pub fn gamma(&self) -> Vec<f64> {
        self.coefficients[2..].iter().map(|c| c.estimate).collect()
    }

    pub fn n_exposures(&self) -> usize {
        self.coefficients.len() - 2
    }
}

pub fn fit_linear(rows: &[DesignRow]) -> Result<LinearFit> {
    let (x, y) = design(rows)?;
    let names = coefficient_names("alpha0", "alpha1", x.ncols() - 2);
    let f = ols(&x, &y, &names)?;
    let df = f.df_resid() as f64;
    let coefficients = names
        .into_iter()
        .zip(f.coef.iter().zip(f.std_errors()))
        .map(|(name, (&est, se))| Coefficient::new(name, est, se, df))
        .collect();
    Ok(LinearFit {
        coefficients,
        sigma2: f.sigma2(),
        r2: f.r2(),
        adjusted_r2: f.adjusted_r2(),
        n_obs: f.n,
        df_resid: f.df_resid(),
    })
}
