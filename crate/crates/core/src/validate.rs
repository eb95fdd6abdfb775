//! Held-out calibration of period predictions and empirical semivariograms
//! of estimated random intercepts.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{ols, Coefficient};
use crate::geom::{Point, METERS_PER_KM};

pub const DEFAULT_BIN_WIDTH_KM: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PeriodKey {
    pub site_id: String,
    pub period_start: NaiveDate,
    pub period_end: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Intercept of observed-on-predicted regression.
    pub alpha0: Coefficient,
    /// Slope of observed-on-predicted regression.
    pub alpha1: Coefficient,
    pub predictive_r2: f64,
    /// ppb.
    pub rmse: f64,
    pub n_sites: usize,
    pub n_obs: usize,
}

/// Regresses observed on predicted period means and reports the fit, the
/// squared correlation, and the root mean squared difference.
pub fn calibration(
    observed: &BTreeMap<PeriodKey, f64>,
    predicted: &BTreeMap<PeriodKey, f64>,
) -> Result<ValidationReport> {
    let unmatched: Vec<String> = observed
        .keys()
        .filter(|k| !predicted.contains_key(*k))
        .map(|k| format!("observed {}:{}..{}", k.site_id, k.period_start, k.period_end))
        .chain(
            predicted
                .keys()
                .filter(|k| !observed.contains_key(*k))
                .map(|k| format!("predicted {}:{}..{}", k.site_id, k.period_start, k.period_end)),
        )
        .collect();
    if !unmatched.is_empty() {
        return Err(Error::invalid(format!("unmatched period keys: {}", unmatched.join(", "))));
    }
    let n = observed.len();
    if n < 3 {
        return Err(Error::invalid(format!("calibration needs at least 3 periods, got {n}")));
    }
    let z: Vec<f64> = observed.values().copied().collect();
    let p: Vec<f64> = predicted.values().copied().collect();

    let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { p[i] });
    let y = DVector::from_column_slice(&z);
    let names = ["alpha0".to_string(), "alpha1".to_string()];
    let f = ols(&x, &y, &names)?;
    let se = f.std_errors();
    let df = f.df_resid() as f64;

    let rmse = (z.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64).sqrt();
    let n_sites = observed.keys().map(|k| &k.site_id).collect::<BTreeSet<_>>().len();
    Ok(ValidationReport {
        alpha0: Coefficient::new("alpha0", f.coef[0], se[0], df),
        alpha1: Coefficient::new("alpha1", f.coef[1], se[1], df),
        predictive_r2: pearson(&z, &p).powi(2),
        rmse,
        n_sites,
        n_obs: n,
    })
}

pub(crate) fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemivariogramBin {
    /// km.
    pub center: f64,
    pub lower: f64,
    pub upper: f64,
    pub semivariance: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Semivariogram {
    /// Non-empty bins only, ascending.
    pub bins: Vec<SemivariogramBin>,
    pub bin_width: f64,
    pub max_lag: f64,
}

impl Semivariogram {
    pub fn total_pairs(&self) -> usize {
        self.bins.iter().map(|b| b.pairs).sum()
    }

    /// Plateau level: pair-weighted mean semivariance over bins centered in
    /// the upper half of the lag range (all bins if none are).
    pub fn sill(&self) -> f64 {
        let upper: Vec<&SemivariogramBin> = self.bins.iter().filter(|b| b.center >= 0.5 * self.max_lag).collect();
        let use_bins: Vec<&SemivariogramBin> = if upper.is_empty() { self.bins.iter().collect() } else { upper };
        let pairs: usize = use_bins.iter().map(|b| b.pairs).sum();
        if pairs == 0 {
            return 0.0;
        }
        use_bins.iter().map(|b| b.semivariance * b.pairs as f64).sum::<f64>() / pairs as f64
    }
}

/// Half the largest inter-site distance, km.
pub fn default_max_lag(points: &[Point]) -> f64 {
    0.5 * crate::geom::max_pairwise_distance(points) / METERS_PER_KM
}

/// Classical estimator `gamma(h) = sum (v_a - v_b)^2 / (2 N_h)` over site
/// pairs whose separation falls in each lag bin. Distances are in km.
pub fn semivariogram(
    values: &BTreeMap<String, f64>,
    locations: &HashMap<String, Point>,
    bin_width: f64,
    max_lag: Option<f64>,
) -> Result<Semivariogram> {
    if values.len() < 2 {
        return Err(Error::invalid("semivariogram needs at least 2 sites"));
    }
    if !(bin_width > 0.0) {
        return Err(Error::invalid("bin width must be positive"));
    }
    let pts: Vec<(Point, f64)> = values
        .iter()
        .map(|(id, v)| {
            locations.get(id).map(|p| (*p, *v)).ok_or_else(|| Error::invalid(format!("no location for site {id}")))
        })
        .collect::<Result<_>>()?;
    let max_lag = match max_lag {
        Some(m) => m,
        None => default_max_lag(&pts.iter().map(|(p, _)| *p).collect::<Vec<_>>()),
    };
    if !(max_lag > 0.0) {
        return Err(Error::invalid("maximum lag must be positive"));
    }
    let n_bins = (max_lag / bin_width).ceil().max(1.0) as usize;
    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for (i, (pa, va)) in pts.iter().enumerate() {
        for (pb, vb) in &pts[..i] {
            let d = pa.distance(pb) / METERS_PER_KM;
            if d > max_lag {
                continue;
            }
            let h = ((d / bin_width) as usize).min(n_bins - 1);
            sums[h] += (va - vb).powi(2);
            counts[h] += 1;
        }
    }
    let bins = (0..n_bins)
        .filter(|&h| counts[h] > 0)
        .map(|h| SemivariogramBin {
            center: (h as f64 + 0.5) * bin_width,
            lower: h as f64 * bin_width,
            upper: ((h + 1) as f64 * bin_width).min(max_lag),
            semivariance: sums[h] / (2.0 * counts[h] as f64),
            pairs: counts[h],
        })
        .collect();
    Ok(Semivariogram { bins, bin_width, max_lag })
}
