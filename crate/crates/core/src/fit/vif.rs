use nalgebra::{DMatrix, DVector};

use super::{check_rows, DesignRow};
use crate::error::{Error, Result};

/// Variance inflation factor of each column against all the others (plus an
/// intercept). Perfectly collinear columns report `f64::INFINITY`.
pub fn vif_columns(columns: &[Vec<f64>]) -> Result<Vec<f64>> {
    let m = columns.len();
    if m < 2 {
        return Err(Error::invalid(format!("VIF needs at least 2 covariates, got {m}")));
    }
    let n = columns[0].len();
    if columns.iter().any(|c| c.len() != n) {
        return Err(Error::invalid("covariate columns differ in length"));
    }
    (0..m)
        .map(|j| {
            let x = DMatrix::from_fn(n, m, |i, c| match c {
                0 => 1.0,
                c if c <= j => columns[c - 1][i],
                c => columns[c][i],
            });
            let y = DVector::from_column_slice(&columns[j]);
            let mean = y.mean();
            let tss = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
            if !(tss > 0.0) {
                return Ok(f64::INFINITY);
            }
            // SVD so that collinear peers are handled by the pseudo-inverse.
            let svd = x.clone().svd(true, true);
            let eps = 1e-10 * svd.singular_values.max();
            let beta = svd.solve(&y, eps).map_err(|e| Error::numerical(e.to_string()))?;
            let rss = (&y - &x * beta).norm_squared();
            let r2 = 1.0 - rss / tss;
            Ok(if r2 >= 1.0 - 1e-13 { f64::INFINITY } else { 1.0 / (1.0 - r2) })
        })
        .collect()
}

/// VIF of each exposure covariate in the pooled linear model, with `x` and
/// the other exposures as peers.
pub fn vif(rows: &[DesignRow]) -> Result<Vec<f64>> {
    let k = check_rows(rows)?;
    let mut cols = vec![rows.iter().map(|r| r.x).collect::<Vec<_>>()];
    for j in 0..k {
        cols.push(rows.iter().map(|r| r.w[j]).collect());
    }
    Ok(vif_columns(&cols)?.split_off(1))
}
