//! Random-intercept model with exponentially correlated site effects,
//! `b ~ N(0, sigma_b2 * Sigma(phi))`, `Sigma_ij = exp(-d_ij / phi)`, fitted by MCMC.
//!
//! Each iteration:
//! 1. random-walk Metropolis on `ln phi` given `b` and `sigma_b2`;
//! 2. inverse-gamma draw of `sigma_b2` given `b` and `phi`;
//! 3. inverse-gamma draw of `sigma_y2` given the residuals;
//! 4. a joint draw of `(beta, b)`: `beta` from its conditional with `b`
//!    integrated out, then `b` given `beta`.
//!
//! Step 4 works on site means. Within-site deviations carry no information
//! about `b`, and the site means satisfy `ybar = Xbar beta + b + ebar` with
//! `ebar_g ~ N(0, sigma_y2 / n_g)`, so only the `G x G` matrix
//! `K = sigma_b2 Sigma + diag(sigma_y2 / n_g)` needs factoring. `b` is then
//! drawn by conditioning a prior draw on the site means.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{check_rows, coefficient_names, design, group_by_site, DesignRow};
use crate::error::{Error, Result};
use crate::geom::{Point, METERS_PER_KM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Priors {
    /// Inverse-gamma shape for both variance components.
    pub variance_shape: f64,
    /// Inverse-gamma rate for both variance components.
    pub variance_rate: f64,
    /// Upper bound of the uniform prior on `phi`; defaults to half the largest
    /// inter-site distance.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi_max: Option<f64>,
}

impl Default for Priors {
    fn default() -> Self {
        Priors { variance_shape: 0.01, variance_rate: 0.01, phi_max: None }
    }
}

/// Parameters held at a known value instead of sampled.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixedParams {
    pub beta: Option<Vec<f64>>,
    pub sigma_b2: Option<f64>,
    pub sigma_y2: Option<f64>,
    pub phi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    pub chains: usize,
    /// Total iterations per chain, burn-in included.
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub priors: Priors,
    pub target_acceptance: f64,
    pub adapt_every: usize,
    pub initial_log_step: f64,
    /// Length unit for `phi`, in meters.
    pub distance_unit_m: f64,
    pub fixed: FixedParams,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            chains: 2,
            iterations: 10_000,
            burn_in: 5_000,
            seed: 1,
            priors: Priors::default(),
            target_acceptance: 0.35,
            adapt_every: 50,
            initial_log_step: 0.3,
            distance_unit_m: METERS_PER_KM,
            fixed: FixedParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub chain: usize,
    /// Post-burn-in iteration index within the chain.
    pub iteration: usize,
    /// `beta0`, `beta1`, `gamma_1..gamma_K`.
    pub beta: Vec<f64>,
    pub sigma_b2: f64,
    pub sigma_y2: f64,
    pub phi: f64,
    /// Random intercepts in `SpatialPosterior::site_ids` order.
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
}

impl ParamSummary {
    pub fn from_values(name: impl Into<String>, values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        ParamSummary {
            name: name.into(),
            mean,
            sd: var.sqrt(),
            q025: quantile(&sorted, 0.025),
            q50: quantile(&sorted, 0.5),
            q975: quantile(&sorted, 0.975),
        }
    }

    pub fn covers(&self, value: f64) -> bool {
        self.q025 <= value && value <= self.q975
    }
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialPosterior {
    pub coefficient_names: Vec<String>,
    pub site_ids: Vec<String>,
    pub locations: Vec<Point>,
    pub draws: Vec<Draw>,
    /// Coefficients, then `sigma_b2`, `sigma_y2`, `phi`.
    pub summaries: Vec<ParamSummary>,
    /// Post-burn-in Metropolis acceptance rate for `phi`, per chain.
    pub phi_acceptance: Vec<f64>,
    pub phi_max: f64,
    pub distance_unit_m: f64,
    pub warnings: Vec<String>,
}

impl SpatialPosterior {
    pub fn summary(&self, name: &str) -> Option<&ParamSummary> {
        self.summaries.iter().find(|s| s.name == name)
    }

    pub fn mean_beta(&self) -> Vec<f64> {
        let n = self.draws.len() as f64;
        let p = self.coefficient_names.len();
        let mut m = vec![0.0; p];
        for d in &self.draws {
            for (acc, v) in m.iter_mut().zip(&d.beta) {
                *acc += v / n;
            }
        }
        m
    }

    pub fn mean_b(&self) -> BTreeMap<String, f64> {
        let n = self.draws.len() as f64;
        let mut m = vec![0.0; self.site_ids.len()];
        for d in &self.draws {
            for (acc, v) in m.iter_mut().zip(&d.b) {
                *acc += v / n;
            }
        }
        self.site_ids.iter().cloned().zip(m).collect()
    }

    pub fn n_exposures(&self) -> usize {
        self.coefficient_names.len() - 2
    }

    /// Recomputes `summaries` from `draws`.
    pub fn summarize(&mut self) {
        self.summaries = summarize(&self.coefficient_names, &self.draws);
    }
}

fn summarize(names: &[String], draws: &[Draw]) -> Vec<ParamSummary> {
    let mut out: Vec<ParamSummary> = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let v: Vec<f64> = draws.iter().map(|d| d.beta[j]).collect();
            ParamSummary::from_values(name.clone(), &v)
        })
        .collect();
    let pick = |f: fn(&Draw) -> f64| draws.iter().map(f).collect::<Vec<_>>();
    out.push(ParamSummary::from_values("sigma_b2", &pick(|d| d.sigma_b2)));
    out.push(ParamSummary::from_values("sigma_y2", &pick(|d| d.sigma_y2)));
    out.push(ParamSummary::from_values("phi", &pick(|d| d.phi)));
    out
}

/// `exp(-d / phi)` correlation matrix from a distance matrix.
pub fn exponential_correlation(dist: &DMatrix<f64>, phi: f64) -> DMatrix<f64> {
    let n = dist.nrows();
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        m[(j, j)] = 1.0;
        for i in (j + 1)..n {
            let v = (-dist[(i, j)] / phi).exp();
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Site-level data shared by all chains.
struct Data {
    x: DMatrix<f64>,
    y: DVector<f64>,
    groups: Vec<usize>,
    n_per_site: DVector<f64>,
    xbar: DMatrix<f64>,
    ybar: DVector<f64>,
    /// Within-site centered cross products.
    wxx: DMatrix<f64>,
    wxy: DVector<f64>,
    dist: DMatrix<f64>,
    phi_max: f64,
}

impl Data {
    fn p(&self) -> usize {
        self.x.ncols()
    }

    fn g(&self) -> usize {
        self.n_per_site.len()
    }

    fn n(&self) -> usize {
        self.y.len()
    }
}

/// `L z` for the lower factor of a Cholesky decomposition.
fn lower_mul(chol: &Cholesky<f64, Dyn>, z: &DVector<f64>) -> DVector<f64> {
    let l = chol.l_dirty();
    let n = z.len();
    DVector::from_fn(n, |i, _| (0..=i).map(|k| l[(i, k)] * z[k]).sum())
}

fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum()
}

/// `b' Sigma^-1 b` via the lower factor.
fn quad_form(chol: &Cholesky<f64, Dyn>, b: &DVector<f64>) -> f64 {
    chol.l_dirty().solve_lower_triangular(b).map_or(f64::INFINITY, |v| v.norm_squared())
}

fn std_normal_vec(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn inverse_gamma(rng: &mut impl Rng, shape: f64, rate: f64) -> Result<f64> {
    let g =
        Gamma::new(shape, 1.0).map_err(|e| Error::numerical(format!("invalid gamma shape {shape}: {e}")))?.sample(rng);
    let v = rate / g;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::numerical(format!("inverse-gamma draw not finite (shape {shape}, rate {rate})")))
    }
}

struct ChainOutput {
    draws: Vec<Draw>,
    acceptance: f64,
}

struct PhiState {
    phi: f64,
    sigma: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl PhiState {
    fn new(data: &Data, phi: f64) -> Option<Self> {
        let sigma = exponential_correlation(&data.dist, phi);
        let chol = sigma.clone().cholesky()?;
        let log_det = log_det(&chol);
        Some(PhiState { phi, sigma, chol, log_det })
    }
}

fn run_chain(data: &Data, cfg: &McmcConfig, chain: usize) -> Result<ChainOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain as u64);
    let (p, g, n) = (data.p(), data.g(), data.n());
    let fixed = &cfg.fixed;
    let (a0, r0) = (cfg.priors.variance_shape, cfg.priors.variance_rate);

    // Start from pooled least squares.
    let xtx = data.x.tr_mul(&data.x);
    let mut beta = match &fixed.beta {
        Some(b) => DVector::from_column_slice(b),
        None => xtx
            .clone()
            .cholesky()
            .ok_or_else(|| Error::numerical("X'X is not positive definite"))?
            .solve(&data.x.tr_mul(&data.y)),
    };
    let resid0 = &data.y - &data.x * &beta;
    let v0 = (resid0.norm_squared() / n as f64).max(1e-6);
    let mut sigma_b2 = fixed.sigma_b2.unwrap_or(0.5 * v0);
    let mut sigma_y2 = fixed.sigma_y2.unwrap_or(0.5 * v0);
    let mut b = DVector::zeros(g);
    for (i, &s) in data.groups.iter().enumerate() {
        b[s] += 0.5 * resid0[i] / data.n_per_site[s];
    }
    let phi0 = fixed.phi.unwrap_or_else(|| (data.phi_max / 4.0 * (1.0 + 0.25 * chain as f64)).min(data.phi_max));
    let mut phi_state = PhiState::new(data, phi0)
        .ok_or_else(|| Error::numerical(format!("Sigma(phi) not positive definite at phi = {phi0}")))?;

    let mut log_step = cfg.initial_log_step.ln();
    let (mut batch_acc, mut batch_n, mut batch_k) = (0usize, 0usize, 0usize);
    let (mut post_acc, mut post_n) = (0usize, 0usize);
    let mut draws = Vec::with_capacity(cfg.iterations.saturating_sub(cfg.burn_in));

    for it in 0..cfg.iterations {
        let burning = it < cfg.burn_in;

        // phi | b, sigma_b2
        if fixed.phi.is_none() {
            let q_cur = quad_form(&phi_state.chol, &b);
            let cur = -0.5 * phi_state.log_det - 0.5 * q_cur / sigma_b2 + phi_state.phi.ln();
            let z: f64 = rng.sample(StandardNormal);
            let prop_phi = phi_state.phi * (log_step.exp() * z).exp();
            let u: f64 = rng.random();
            let mut accepted = false;
            if prop_phi > 0.0 && prop_phi <= data.phi_max {
                if let Some(prop) = PhiState::new(data, prop_phi) {
                    let q = quad_form(&prop.chol, &b);
                    let new = -0.5 * prop.log_det - 0.5 * q / sigma_b2 + prop_phi.ln();
                    if !cur.is_finite() {
                        return Err(Error::numerical(format!("non-finite log posterior at phi = {}", phi_state.phi)));
                    }
                    if u.ln() < new - cur {
                        phi_state = prop;
                        accepted = true;
                    }
                }
            }
            if burning {
                batch_acc += accepted as usize;
                batch_n += 1;
                if batch_n == cfg.adapt_every {
                    batch_k += 1;
                    let rate = batch_acc as f64 / batch_n as f64;
                    log_step += (rate - cfg.target_acceptance) * (1.0 / (batch_k as f64).sqrt()).min(1.0) * 2.0;
                    batch_acc = 0;
                    batch_n = 0;
                }
            } else {
                post_acc += accepted as usize;
                post_n += 1;
            }
        }

        // sigma_b2 | b, phi
        if fixed.sigma_b2.is_none() {
            let q = quad_form(&phi_state.chol, &b);
            sigma_b2 = inverse_gamma(&mut rng, a0 + 0.5 * g as f64, r0 + 0.5 * q)?;
        }

        // sigma_y2 | beta, b
        if fixed.sigma_y2.is_none() {
            let fitted = &data.x * &beta;
            let ss: f64 = (0..n).map(|i| (data.y[i] - fitted[i] - b[data.groups[i]]).powi(2)).sum();
            sigma_y2 = inverse_gamma(&mut rng, a0 + 0.5 * n as f64, r0 + 0.5 * ss)?;
        }

        // (beta, b) | sigma_b2, sigma_y2, phi
        let mut k = &phi_state.sigma * sigma_b2;
        for s in 0..g {
            k[(s, s)] += sigma_y2 / data.n_per_site[s];
        }
        let chol_k = k.cholesky().ok_or_else(|| Error::numerical("site-mean covariance is not positive definite"))?;

        if fixed.beta.is_none() {
            let kinv_xbar = chol_k.solve(&data.xbar);
            let kinv_ybar = chol_k.solve(&data.ybar);
            let prec = &data.wxx / sigma_y2 + data.xbar.tr_mul(&kinv_xbar);
            let lin = &data.wxy / sigma_y2 + data.xbar.tr_mul(&kinv_ybar);
            let chol_m =
                prec.cholesky().ok_or_else(|| Error::numerical("coefficient precision is not positive definite"))?;
            let mean = chol_m.solve(&lin);
            let z = std_normal_vec(&mut rng, p);
            let noise = chol_m
                .l_dirty()
                .tr_solve_lower_triangular(&z)
                .ok_or_else(|| Error::numerical("singular coefficient precision factor"))?;
            beta = mean + noise;
        }

        let rbar = &data.ybar - &data.xbar * &beta;
        let b_prior = lower_mul(&phi_state.chol, &std_normal_vec(&mut rng, g)) * sigma_b2.sqrt();
        let e =
            DVector::from_fn(g, |s, _| (sigma_y2 / data.n_per_site[s]).sqrt() * rng.sample::<f64, _>(StandardNormal));
        let gap = chol_k.solve(&(rbar - &b_prior - e));
        b = b_prior + (&phi_state.sigma * gap) * sigma_b2;

        if !(sigma_b2.is_finite() && sigma_y2.is_finite() && b.iter().all(|v| v.is_finite())) {
            return Err(Error::numerical(format!("non-finite state at iteration {it} of chain {chain}")));
        }

        if !burning {
            draws.push(Draw {
                chain,
                iteration: it - cfg.burn_in,
                beta: beta.iter().copied().collect(),
                sigma_b2,
                sigma_y2,
                phi: phi_state.phi,
                b: b.iter().copied().collect(),
            });
        }
    }

    let acceptance = if post_n > 0 { post_acc as f64 / post_n as f64 } else { f64::NAN };
    Ok(ChainOutput { draws, acceptance })
}

/// Fits the spatial random-intercept model. `locations` must hold a distinct
/// point for every site appearing in `rows`.
pub fn fit_spatial(
    rows: &[DesignRow],
    locations: &HashMap<String, Point>,
    config: &McmcConfig,
) -> Result<SpatialPosterior> {
    let k = check_rows(rows)?;
    if config.chains == 0 || config.burn_in >= config.iterations {
        return Err(Error::invalid(format!(
            "need at least one chain and iterations ({}) > burn-in ({})",
            config.iterations, config.burn_in
        )));
    }
    if !(config.distance_unit_m > 0.0) {
        return Err(Error::invalid("distance unit must be positive"));
    }
    let (x, y) = design(rows)?;
    let names = coefficient_names("beta0", "beta1", k);
    let p = x.ncols();
    if let Some(b) = &config.fixed.beta {
        if b.len() != p {
            return Err(Error::invalid(format!("fixed beta has {} entries, expected {p}", b.len())));
        }
    }
    let (site_ids, groups) = group_by_site(rows);
    let g = site_ids.len();
    if g < 2 {
        return Err(Error::invalid("spatial model needs at least 2 sites"));
    }
    let pts: Vec<Point> = site_ids
        .iter()
        .map(|id| locations.get(id).copied().ok_or_else(|| Error::invalid(format!("no location for site {id}"))))
        .collect::<Result<_>>()?;

    let unit = config.distance_unit_m;
    let dist = DMatrix::from_fn(g, g, |i, j| pts[i].distance(&pts[j]) / unit);
    let mut max_d = 0.0f64;
    for i in 0..g {
        for j in 0..i {
            if dist[(i, j)] * unit < 1e-6 {
                return Err(Error::invalid(format!("sites {} and {} share a location", site_ids[i], site_ids[j])));
            }
            max_d = max_d.max(dist[(i, j)]);
        }
    }
    let phi_max = config.priors.phi_max.unwrap_or(0.5 * max_d);
    if !(phi_max > 0.0) {
        return Err(Error::invalid("phi upper bound must be positive"));
    }

    let mut n_per_site = DVector::zeros(g);
    let mut xbar = DMatrix::zeros(g, p);
    let mut ybar = DVector::zeros(g);
    for (i, &s) in groups.iter().enumerate() {
        n_per_site[s] += 1.0;
        for j in 0..p {
            xbar[(s, j)] += x[(i, j)];
        }
        ybar[s] += y[i];
    }
    for s in 0..g {
        for j in 0..p {
            xbar[(s, j)] /= n_per_site[s];
        }
        ybar[s] /= n_per_site[s];
    }
    let mut wxx = DMatrix::zeros(p, p);
    let mut wxy = DVector::zeros(p);
    for (i, &s) in groups.iter().enumerate() {
        let dx = x.row(i) - xbar.row(s);
        let dy = y[i] - ybar[s];
        wxx += dx.transpose() * &dx;
        wxy += dx.transpose() * dy;
    }

    let data = Data { x, y, groups, n_per_site, xbar, ybar, wxx, wxy, dist, phi_max };

    let outputs: Vec<Result<ChainOutput>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..config.chains)
            .map(|c| {
                let data = &data;
                scope.spawn(move || run_chain(data, config, c))
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err(Error::numerical("MCMC chain panicked")))).collect()
    });

    let mut draws = Vec::new();
    let mut phi_acceptance = Vec::new();
    let mut warnings = Vec::new();
    for (c, out) in outputs.into_iter().enumerate() {
        let out = out?;
        if config.fixed.phi.is_none() && !(0.05..=0.8).contains(&out.acceptance) {
            let msg =
                format!("chain {c}: phi acceptance rate {:.3} outside [0.05, 0.8] after adaptation", out.acceptance);
            log::warn!("{msg}");
            warnings.push(msg);
        }
        phi_acceptance.push(out.acceptance);
        draws.extend(out.draws);
    }

    let summaries = summarize(&names, &draws);
    Ok(SpatialPosterior {
        coefficient_names: names,
        site_ids,
        locations: pts,
        draws,
        summaries,
        phi_acceptance,
        phi_max,
        distance_unit_m: unit,
        warnings,
    })
}
