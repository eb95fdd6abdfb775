//! Random-intercept model fitted by profile likelihood.
//!
//! With `lambda = sigma_b2 / sigma_y2`, each site's marginal covariance is
//! `sigma_y2 (I + lambda J)`, whose inverse is `(I - c J) / sigma_y2` with
//! `c = lambda / (1 + n lambda)`. Everything the likelihood needs is therefore
//! a function of per-site sums, and the fixed effects and `sigma_y2` profile
//! out in closed form for each `lambda`. The remaining one-dimensional search
//! is over `ln lambda`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{coefficient_names, design, group_by_site, ols, Coefficient, DesignRow};
use crate::error::{Error, Result};

const LN_LAMBDA_MIN: f64 = -20.0;
const LN_LAMBDA_MAX: f64 = 12.0;
const GRID_STEP: f64 = 0.2;
const GOLDEN_TOL: f64 = 1e-10;
const MAX_ITERATIONS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceMethod {
    #[default]
    Ml,
    Reml,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedFit {
    /// `beta0`, `beta1`, then `gamma_1..gamma_K`.
    pub coefficients: Vec<Coefficient>,
    pub sigma_b2: f64,
    pub sigma_y2: f64,
    /// Conditional mean of each learning site's random intercept.
    pub blups: BTreeMap<String, f64>,
    pub log_likelihood: f64,
    pub method: VarianceMethod,
    pub n_sites: usize,
    pub n_obs: usize,
    /// Denominator degrees of freedom: within-site for the intercept and
    /// covariates that vary within a site, between-site for site-level ones.
    pub df_within: f64,
    pub df_between: f64,
}

impl MixedFit {
    pub fn beta0(&self) -> f64 {
        self.coefficients[0].estimate
    }

    pub fn beta1(&self) -> f64 {
        self.coefficients[1].estimate
    }

    pub fn gamma(&self) -> Vec<f64> {
        self.coefficients[2..].iter().map(|c| c.estimate).collect()
    }

    pub fn n_exposures(&self) -> usize {
        self.coefficients.len() - 2
    }
}

struct SiteStats {
    n: f64,
    sx: DVector<f64>,
    sy: f64,
}

struct Profile {
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    sites: Vec<SiteStats>,
    n_obs: f64,
    p: usize,
}

struct ProfilePoint {
    loglik: f64,
    beta: DVector<f64>,
    sigma_y2: f64,
    a: DMatrix<f64>,
}

impl Profile {
    fn new(x: &DMatrix<f64>, y: &DVector<f64>, groups: &[usize], n_sites: usize) -> Self {
        let p = x.ncols();
        let mut sites: Vec<SiteStats> =
            (0..n_sites).map(|_| SiteStats { n: 0.0, sx: DVector::zeros(p), sy: 0.0 }).collect();
        for (i, &g) in groups.iter().enumerate() {
            let s = &mut sites[g];
            s.n += 1.0;
            s.sx += x.row(i).transpose();
            s.sy += y[i];
        }
        Profile { xtx: x.tr_mul(x), xty: x.tr_mul(y), yty: y.norm_squared(), sites, n_obs: y.len() as f64, p }
    }

    fn eval(&self, lambda: f64, method: VarianceMethod) -> Option<ProfilePoint> {
        let mut a = self.xtx.clone();
        let mut b = self.xty.clone();
        let mut q = self.yty;
        let mut logdet = 0.0;
        for s in &self.sites {
            let c = lambda / (1.0 + s.n * lambda);
            a.ger(-c, &s.sx, &s.sx, 1.0);
            b.axpy(-c * s.sy, &s.sx, 1.0);
            q -= c * s.sy * s.sy;
            logdet += (s.n * lambda).ln_1p();
        }
        let chol = a.clone().cholesky()?;
        let beta = chol.solve(&b);
        let rss = q - b.dot(&beta);
        let dof = match method {
            VarianceMethod::Ml => self.n_obs,
            VarianceMethod::Reml => self.n_obs - self.p as f64,
        };
        let sigma_y2 = rss / dof;
        if !(sigma_y2 > 0.0) {
            return None;
        }
        let mut loglik = -0.5 * dof * ((2.0 * PI * sigma_y2).ln() + 1.0) - 0.5 * logdet;
        if method == VarianceMethod::Reml {
            let ld_a: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
            loglik -= 0.5 * ld_a;
        }
        loglik.is_finite().then_some(ProfilePoint { loglik, beta, sigma_y2, a })
    }
}

/// Maximizes the profile likelihood over `ln lambda`: coarse grid, then
/// golden-section refinement around the best grid point.
fn maximize(profile: &Profile, method: VarianceMethod) -> Result<f64> {
    let f = |t: f64| profile.eval(t.exp(), method).map_or(f64::NEG_INFINITY, |p| p.loglik);

    let n_grid = ((LN_LAMBDA_MAX - LN_LAMBDA_MIN) / GRID_STEP).round() as usize;
    let (best_i, best_val) = (0..=n_grid)
        .map(|i| (i, f(LN_LAMBDA_MIN + i as f64 * GRID_STEP)))
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    if !best_val.is_finite() {
        return Err(Error::numerical("profile likelihood is not finite anywhere on the search grid"));
    }
    let center = LN_LAMBDA_MIN + best_i as f64 * GRID_STEP;
    let (mut lo, mut hi) = ((center - GRID_STEP).max(LN_LAMBDA_MIN), (center + GRID_STEP).min(LN_LAMBDA_MAX));

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut trace = Vec::new();
    for _ in 0..MAX_ITERATIONS {
        if hi - lo < GOLDEN_TOL {
            let t = 0.5 * (lo + hi);
            let v = f(t);
            return Ok(if v >= best_val { t } else { center });
        }
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
        trace.push(format!("[{lo:.6}, {hi:.6}]"));
        if trace.len() > 8 {
            trace.remove(0);
        }
    }
    Err(Error::NonConvergence {
        iterations: MAX_ITERATIONS,
        trace: format!("ln(sigma_b2/sigma_y2) bracket history {}", trace.join(" ")),
    })
}

/// Fits the random-intercept model by ML (default) or REML.
pub fn fit_longitudinal(rows: &[DesignRow], method: VarianceMethod) -> Result<MixedFit> {
    let (x, y) = design(rows)?;
    let (site_ids, groups) = group_by_site(rows);
    let n_sites = site_ids.len();
    if n_sites < 2 {
        return Err(Error::invalid("random-intercept model needs at least 2 sites"));
    }
    let p = x.ncols();
    let names = coefficient_names("beta0", "beta1", p - 2);
    // Surface rank problems with column names before the likelihood search.
    ols(&x, &y, &names)?;

    let profile = Profile::new(&x, &y, &groups, n_sites);
    let t_hat = maximize(&profile, method)?;
    let interior =
        profile.eval(t_hat.exp(), method).ok_or_else(|| Error::numerical("profile likelihood failed at optimum"))?;
    let boundary = profile.eval(0.0, method);
    let (lambda, point) = match boundary {
        Some(b) if b.loglik >= interior.loglik => (0.0, b),
        _ => (t_hat.exp(), interior),
    };

    let sigma_y2 = point.sigma_y2;
    let sigma_b2 = lambda * sigma_y2;
    let cov =
        point.a.clone().try_inverse().ok_or_else(|| Error::numerical("GLS information matrix is singular"))? * sigma_y2;

    let (df_within, df_between, within) = degrees_of_freedom(&x, &groups, n_sites);
    let coefficients = names
        .into_iter()
        .enumerate()
        .map(|(j, name)| {
            let df = if within[j] { df_within } else { df_between };
            Coefficient::new(name, point.beta[j], cov[(j, j)].sqrt(), df)
        })
        .collect();

    let blups = site_ids
        .iter()
        .zip(&profile.sites)
        .map(|(id, s)| {
            let mean_resid = (s.sy - s.sx.dot(&point.beta)) / s.n;
            let shrink = s.n * lambda / (1.0 + s.n * lambda);
            (id.clone(), shrink * mean_resid)
        })
        .collect();

    Ok(MixedFit {
        coefficients,
        sigma_b2,
        sigma_y2,
        blups,
        log_likelihood: point.loglik,
        method,
        n_sites,
        n_obs: rows.len(),
        df_within,
        df_between,
    })
}

/// Within/between split: `N - G - p_within` and `G - p_between - 1`, where the
/// intercept is counted on neither side and takes the within-site value.
fn degrees_of_freedom(x: &DMatrix<f64>, groups: &[usize], n_sites: usize) -> (f64, f64, Vec<bool>) {
    let p = x.ncols();
    let mut first: Vec<Option<usize>> = vec![None; n_sites];
    let mut within = vec![false; p];
    within[0] = true;
    for (i, &g) in groups.iter().enumerate() {
        match first[g] {
            None => first[g] = Some(i),
            Some(f) => {
                for j in 1..p {
                    if x[(i, j)] != x[(f, j)] {
                        within[j] = true;
                    }
                }
            }
        }
    }
    let p_within = within[1..].iter().filter(|w| **w).count();
    let p_between = p - 1 - p_within;
    let n = x.nrows() as f64;
    let g = n_sites as f64;
    (n - g - p_within as f64, g - p_between as f64 - 1.0, within)
}

/// Full Gaussian log-likelihood of the random-intercept model at given parameters.
pub fn log_likelihood(rows: &[DesignRow], beta: &[f64], sigma_b2: f64, sigma_y2: f64) -> Result<f64> {
    let (x, y) = design(rows)?;
    if beta.len() != x.ncols() {
        return Err(Error::invalid(format!("expected {} coefficients, got {}", x.ncols(), beta.len())));
    }
    if !(sigma_y2 > 0.0) || !(sigma_b2 >= 0.0) {
        return Err(Error::invalid("variances must satisfy sigma_y2 > 0, sigma_b2 >= 0"));
    }
    let (ids, groups) = group_by_site(rows);
    let beta = DVector::from_column_slice(beta);
    let resid = &y - &x * &beta;
    let mut n = vec![0.0; ids.len()];
    let mut s = vec![0.0; ids.len()];
    let mut ss = vec![0.0; ids.len()];
    for (i, &g) in groups.iter().enumerate() {
        n[g] += 1.0;
        s[g] += resid[i];
        ss[g] += resid[i] * resid[i];
    }
    let lambda = sigma_b2 / sigma_y2;
    let mut ll = 0.0;
    for g in 0..ids.len() {
        let c = lambda / (1.0 + n[g] * lambda);
        let logdet = n[g] * sigma_y2.ln() + (n[g] * lambda).ln_1p();
        let quad = (ss[g] - c * s[g] * s[g]) / sigma_y2;
        ll -= 0.5 * (n[g] * (2.0 * PI).ln() + logdet + quad);
    }
    Ok(ll)
}
