//! Daily predictions at learning or new sites, and their averages over
//! observation periods.

use std::collections::{BTreeMap, HashMap};

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{exponential_correlation, LinearFit, MixedFit, SpatialPosterior};
use crate::geom::Point;
use crate::ingest::Site;
use crate::interp::COLLOCATION_EPS_M;

pub const DEFAULT_MAX_KRIGING_DRAWS: usize = 1000;

#[derive(Debug, Clone)]
pub enum FittedModel {
    Linear(LinearFit),
    Longitudinal(MixedFit),
    Spatial(SpatialPosterior),
}

impl FittedModel {
    pub fn n_exposures(&self) -> usize {
        match self {
            FittedModel::Linear(f) => f.n_exposures(),
            FittedModel::Longitudinal(f) => f.n_exposures(),
            FittedModel::Spatial(f) => f.n_exposures(),
        }
    }

    /// Point estimates of intercept, slope on `ln idw`, and exposure coefficients.
    pub fn fixed_effects(&self) -> Vec<f64> {
        match self {
            FittedModel::Linear(f) => f.coefficients.iter().map(|c| c.estimate).collect(),
            FittedModel::Longitudinal(f) => f.coefficients.iter().map(|c| c.estimate).collect(),
            FittedModel::Spatial(f) => f.mean_beta(),
        }
    }

    /// Estimated random intercepts of the learning sites, if the model has any.
    pub fn random_intercepts(&self) -> Option<BTreeMap<String, f64>> {
        match self {
            FittedModel::Linear(_) => None,
            FittedModel::Longitudinal(f) => Some(f.blups.clone()),
            FittedModel::Spatial(f) => Some(f.mean_b()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionMode {
    /// New sites get a zero random intercept.
    Marginal,
    /// New sites get the kriged random intercept (spatial model only).
    #[default]
    Conditional,
}

/// A site to predict at; `location` is needed for conditional predictions at
/// sites outside the learning set.
#[derive(Debug, Clone, Copy)]
pub struct Target<'a> {
    pub site_id: &'a str,
    pub location: Option<Point>,
}

impl<'a> From<&'a Site> for Target<'a> {
    fn from(s: &'a Site) -> Self {
        Target { site_id: &s.site_id, location: Some(s.location) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub site_id: String,
    pub date: NaiveDate,
    pub predicted_log: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodPrediction {
    pub site_id: String,
    pub period_start: NaiveDate,
    pub period_end: NaiveDate,
    pub p: f64,
}

struct KrigingDraw {
    phi: f64,
    /// `Sigma(phi)^-1 b` for this draw.
    alpha: DVector<f64>,
}

struct Kriging {
    locations: Vec<Point>,
    unit: f64,
    draws: Vec<KrigingDraw>,
}

impl Kriging {
    fn new(post: &SpatialPosterior, max_draws: usize) -> Result<Self> {
        let n = post.draws.len();
        if n == 0 {
            return Err(Error::invalid("spatial posterior has no draws"));
        }
        let m = max_draws.clamp(1, n);
        let g = post.locations.len();
        let dist = DMatrix::from_fn(g, g, |i, j| post.locations[i].distance(&post.locations[j]) / post.distance_unit_m);
        let draws = (0..m)
            .map(|i| {
                let d = &post.draws[i * n / m];
                let chol = exponential_correlation(&dist, d.phi)
                    .cholesky()
                    .ok_or_else(|| Error::numerical(format!("Sigma(phi) not positive definite at phi = {}", d.phi)))?;
                Ok(KrigingDraw { phi: d.phi, alpha: chol.solve(&DVector::from_column_slice(&d.b)) })
            })
            .collect::<Result<_>>()?;
        Ok(Kriging { locations: post.locations.clone(), unit: post.distance_unit_m, draws })
    }

    /// Mean over draws of `c(phi)' Sigma(phi)^-1 b`.
    fn conditional_mean(&self, at: Point) -> f64 {
        let d: Vec<f64> = self.locations.iter().map(|p| p.distance(&at) / self.unit).collect();
        let total: f64 = self
            .draws
            .iter()
            .map(|kd| d.iter().zip(kd.alpha.iter()).map(|(di, a)| (-di / kd.phi).exp() * a).sum::<f64>())
            .sum();
        total / self.draws.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Linear,
    Longitudinal,
    Spatial,
}

/// Precomputed state for predicting from one fitted model.
pub struct Predictor {
    kind: Kind,
    n_exposures: usize,
    fixed: Vec<f64>,
    intercepts: HashMap<String, f64>,
    /// Learning-site locations and posterior mean intercepts, spatial only.
    learning: Vec<(Point, f64)>,
    kriging: Option<Kriging>,
}

impl Predictor {
    pub fn new(model: &FittedModel) -> Result<Self> {
        Predictor::with_max_kriging_draws(model, DEFAULT_MAX_KRIGING_DRAWS)
    }

    /// Kriging weights are computed on at most `max_draws` evenly spaced
    /// posterior draws.
    pub fn with_max_kriging_draws(model: &FittedModel, max_draws: usize) -> Result<Self> {
        let intercepts: HashMap<String, f64> = model.random_intercepts().unwrap_or_default().into_iter().collect();
        let (learning, kriging) = match model {
            FittedModel::Spatial(post) => {
                let learning = post.site_ids.iter().zip(&post.locations).map(|(id, p)| (*p, intercepts[id])).collect();
                (learning, Some(Kriging::new(post, max_draws)?))
            }
            _ => (Vec::new(), None),
        };
        let kind = match model {
            FittedModel::Linear(_) => Kind::Linear,
            FittedModel::Longitudinal(_) => Kind::Longitudinal,
            FittedModel::Spatial(_) => Kind::Spatial,
        };
        Ok(Predictor {
            kind,
            n_exposures: model.n_exposures(),
            fixed: model.fixed_effects(),
            intercepts,
            learning,
            kriging,
        })
    }

    pub fn n_exposures(&self) -> usize {
        self.n_exposures
    }

    /// The random intercept used for a target site.
    pub fn random_intercept(&self, target: &Target, mode: PredictionMode) -> Result<f64> {
        match self.kind {
            Kind::Linear => Ok(0.0),
            Kind::Longitudinal => Ok(self.intercepts.get(target.site_id).copied().unwrap_or(0.0)),
            Kind::Spatial => {
                if let Some(&b) = self.intercepts.get(target.site_id) {
                    return Ok(b);
                }
                if mode == PredictionMode::Marginal {
                    return Ok(0.0);
                }
                let at = target.location.ok_or_else(|| {
                    Error::invalid(format!(
                        "site {} is not a learning site and has no coordinates for conditional prediction",
                        target.site_id
                    ))
                })?;
                if let Some((_, b)) = self.learning.iter().find(|(p, _)| p.distance(&at) < COLLOCATION_EPS_M) {
                    return Ok(*b);
                }
                Ok(self.kriging.as_ref().expect("spatial model has kriging state").conditional_mean(at))
            }
        }
    }

    fn check_exposure(&self, exposure: &[f64]) -> Result<()> {
        let k = self.n_exposures;
        if exposure.len() != k {
            return Err(Error::invalid(format!(
                "exposure has {} covariates but the model was fitted with {k}",
                exposure.len()
            )));
        }
        Ok(())
    }

    /// Log-scale prediction from an already-resolved random intercept.
    pub fn linear_predictor(&self, random_intercept: f64, idw_value: f64, exposure: &[f64]) -> Result<f64> {
        self.check_exposure(exposure)?;
        if !(idw_value > 0.0) || !idw_value.is_finite() {
            return Err(Error::invalid(format!("interpolated value must be positive, got {idw_value}")));
        }
        let traffic: f64 = self.fixed[2..].iter().zip(exposure).map(|(g, w)| g * w).sum();
        Ok(self.fixed[0] + random_intercept + self.fixed[1] * idw_value.ln() + traffic)
    }

    pub fn predict_daily(
        &self,
        target: &Target,
        date: NaiveDate,
        idw_value: f64,
        exposure: &[f64],
        mode: PredictionMode,
    ) -> Result<PredictionRecord> {
        let b = self.random_intercept(target, mode)?;
        let predicted_log = self.linear_predictor(b, idw_value, exposure)?;
        Ok(PredictionRecord {
            site_id: target.site_id.to_string(),
            date,
            predicted_log,
            predicted: predicted_log.exp(),
        })
    }

    /// Daily predictions over a run of `(date, idw)` pairs, resolving the
    /// random intercept once.
    pub fn predict_days(
        &self,
        target: &Target,
        days: &[(NaiveDate, f64)],
        exposure: &[f64],
        mode: PredictionMode,
    ) -> Result<Vec<PredictionRecord>> {
        let b = self.random_intercept(target, mode)?;
        days.iter()
            .map(|&(date, v)| {
                let predicted_log = self.linear_predictor(b, v, exposure)?;
                Ok(PredictionRecord {
                    site_id: target.site_id.to_string(),
                    date,
                    predicted_log,
                    predicted: predicted_log.exp(),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Predictions {
    pub daily: Vec<PredictionRecord>,
    pub periods: Vec<PeriodPrediction>,
}

/// Daily predictions over every observation period of every site, averaged
/// per period on the ppb scale.
pub fn predict_periods(
    predictor: &Predictor,
    sites: &[Site],
    daily_idw: &HashMap<String, BTreeMap<NaiveDate, f64>>,
    exposures: &HashMap<String, Vec<f64>>,
    mode: PredictionMode,
) -> Result<Predictions> {
    let mut out = Predictions::default();
    for site in sites {
        let exposure = exposures
            .get(&site.site_id)
            .ok_or_else(|| Error::invalid(format!("no exposure for site {}", site.site_id)))?;
        let series = daily_idw.get(&site.site_id);
        let target = Target::from(site);
        let b = predictor.random_intercept(&target, mode)?;
        for obs in &site.observations {
            let mut missing = Vec::new();
            let mut sum = 0.0;
            let mut count = 0usize;
            for day in obs.days() {
                match series.and_then(|s| s.get(&day)) {
                    Some(&v) => {
                        let predicted_log = predictor.linear_predictor(b, v, exposure)?;
                        let predicted = predicted_log.exp();
                        sum += predicted;
                        count += 1;
                        out.daily.push(PredictionRecord {
                            site_id: site.site_id.clone(),
                            date: day,
                            predicted_log,
                            predicted,
                        });
                    }
                    None => missing.push(day),
                }
            }
            if !missing.is_empty() {
                return Err(Error::MissingDates { site_id: site.site_id.clone(), dates: missing });
            }
            out.periods.push(PeriodPrediction {
                site_id: site.site_id.clone(),
                period_start: obs.period_start,
                period_end: obs.period_end,
                p: sum / count as f64,
            });
        }
    }
    Ok(out)
}
