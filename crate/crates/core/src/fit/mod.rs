//! Model fitting: pooled OLS, random-intercept maximum likelihood, and the
//! spatially correlated random-intercept model by MCMC.

mod linear;
mod longitudinal;
mod ols;
mod spatial;
mod vif;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

pub use linear::{fit_linear, LinearFit};
pub use longitudinal::{fit_longitudinal, log_likelihood, MixedFit, VarianceMethod};
pub use ols::{ols, OlsFit};
pub use spatial::{
    exponential_correlation, fit_spatial, Draw, FixedParams, McmcConfig, ParamSummary, Priors, SpatialPosterior,
};
pub use vif::{vif, vif_columns};

use crate::error::{Error, Result};

/// One observation in model form: `y = ln Z`, `x = ln U`, `w` = exposure covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignRow {
    pub site_id: String,
    pub y: f64,
    pub x: f64,
    pub w: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_value: f64,
    pub p_value: f64,
    pub df: f64,
}

impl Coefficient {
    pub(crate) fn new(name: impl Into<String>, estimate: f64, std_error: f64, df: f64) -> Self {
        let t_value = estimate / std_error;
        Coefficient { name: name.into(), estimate, std_error, t_value, p_value: two_sided_p(t_value, df), df }
    }
}

/// Two-sided Student-t p-value.
pub fn two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() || !(df > 0.0) {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

/// Coefficient names for `k` exposure covariates with the given prefix pair.
pub(crate) fn coefficient_names(intercept: &str, slope: &str, k: usize) -> Vec<String> {
    let mut names = vec![intercept.to_string(), slope.to_string()];
    names.extend((1..=k).map(|i| format!("gamma_{i}")));
    names
}

/// Number of exposure covariates, checking rows agree and are finite.
pub(crate) fn check_rows(rows: &[DesignRow]) -> Result<usize> {
    let Some(first) = rows.first() else {
        return Err(Error::invalid("no design rows"));
    };
    let k = first.w.len();
    for r in rows {
        if r.w.len() != k {
            return Err(Error::invalid(format!("site {}: {} exposure covariates, expected {k}", r.site_id, r.w.len())));
        }
        if !r.y.is_finite() || !r.x.is_finite() || r.w.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid(format!("site {}: non-finite design value", r.site_id)));
        }
    }
    Ok(k)
}

/// `[1, x, w_1..w_k]` design matrix and response vector.
pub(crate) fn design(rows: &[DesignRow]) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let k = check_rows(rows)?;
    let p = 2 + k;
    let x = DMatrix::from_fn(rows.len(), p, |i, j| match j {
        0 => 1.0,
        1 => rows[i].x,
        _ => rows[i].w[j - 2],
    });
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.y));
    Ok((x, y))
}

/// Rows grouped by site in order of first appearance.
pub(crate) fn group_by_site(rows: &[DesignRow]) -> (Vec<String>, Vec<usize>) {
    let mut ids: Vec<String> = Vec::new();
    let mut index = std::collections::HashMap::new();
    let groups = rows
        .iter()
        .map(|r| {
            *index.entry(r.site_id.clone()).or_insert_with(|| {
                ids.push(r.site_id.clone());
                ids.len() - 1
            })
        })
        .collect();
    (ids, groups)
}
