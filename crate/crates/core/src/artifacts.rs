//! Reading and writing the pipeline's CSV and JSON artifacts. CSV files
//! start with a `#` line naming the tool version, seed and config hash; JSON
//! files carry the same fields under `meta`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelKind;
use crate::error::{Error, Result};
use crate::fit::{Draw, LinearFit, MixedFit, ParamSummary, SpatialPosterior};
use crate::geom::Point;
use crate::interp::PeriodCovariate;
use crate::predict::{FittedModel, PeriodPrediction, PredictionMode, PredictionRecord};
use crate::traffic::{ExposureVector, RingSpec};
use crate::validate::{Semivariogram, ValidationReport};

pub const TOOL: &str = "no2est";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
}

impl Meta {
    pub fn new(seed: u64, config_sha256: impl Into<String>) -> Self {
        Meta { tool: TOOL.to_string(), version: VERSION.to_string(), seed, config_sha256: config_sha256.into() }
    }

    pub fn header_line(&self) -> String {
        format!("# {} {} seed={} config_sha256={}", self.tool, self.version, self.seed, self.config_sha256)
    }
}

struct CsvOut {
    path: std::path::PathBuf,
    out: BufWriter<fs::File>,
}

impl CsvOut {
    fn create(path: &Path, meta: &Meta, columns: &[&str]) -> Result<Self> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = CsvOut { path: path.to_path_buf(), out: BufWriter::new(file) };
        w.line(&meta.header_line())?;
        w.line(&columns.join(","))?;
        Ok(w)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}").map_err(|e| Error::io(&self.path, e))
    }

    fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) -> Result<()> {
        let s = fields.into_iter().collect::<Vec<_>>().join(",");
        self.line(&s)
    }

    fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::invalid(format!("cannot serialize: {e}")))?;
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line() as u64,
        message: e.to_string(),
    })
}

pub fn write_exposure(path: &Path, meta: &Meta, exposures: &[ExposureVector], n_rings: usize) -> Result<()> {
    let mut cols = vec!["site_id".to_string()];
    cols.extend((1..=n_rings).map(|k| format!("w_{k}")));
    let cols: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut w = CsvOut::create(path, meta, &cols)?;
    for e in exposures {
        w.row(std::iter::once(e.site_id.clone()).chain(e.w.iter().map(f64::to_string)))?;
    }
    w.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureMeta {
    pub meta: Meta,
    /// Ring boundaries, m.
    pub rings: RingSpec,
    pub target_len_m: f64,
    /// `w` columns are vehicle-meters divided by this.
    pub exposure_scale: f64,
}

pub fn write_daily_idw(path: &Path, meta: &Meta, rows: &[(String, chrono::NaiveDate, f64)]) -> Result<()> {
    let mut w = CsvOut::create(path, meta, &["site_id", "date", "no2_ppb"])?;
    for (id, d, v) in rows {
        w.row([id.clone(), d.to_string(), v.to_string()])?;
    }
    w.finish()
}

pub fn write_period_covariates(path: &Path, meta: &Meta, rows: &[PeriodCovariate]) -> Result<()> {
    let mut w = CsvOut::create(path, meta, &["site_id", "period_start", "period_end", "u_ppb", "x_log"])?;
    for c in rows {
        w.row([
            c.site_id.clone(),
            c.period_start.to_string(),
            c.period_end.to_string(),
            c.u.to_string(),
            c.x.to_string(),
        ])?;
    }
    w.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteLocation {
    pub site_id: String,
    pub x_m: f64,
    pub y_m: f64,
}

/// Everything about a spatial fit except the draws themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialSummary {
    pub coefficient_names: Vec<String>,
    pub summaries: Vec<ParamSummary>,
    /// `None` where `phi` was held fixed.
    pub phi_acceptance: Vec<Option<f64>>,
    pub phi_max: f64,
    pub distance_unit_m: f64,
    pub n_draws: usize,
    pub warnings: Vec<String>,
    /// Posterior mean random intercepts.
    pub b_mean: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum FitBody {
    Linear(LinearFit),
    Longitudinal(MixedFit),
    Spatial(SpatialSummary),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitArtifact {
    pub meta: Meta,
    pub model: ModelKind,
    pub rings: RingSpec,
    pub exposure_scale: f64,
    pub target_len_m: f64,
    /// Variance inflation factor of each exposure covariate.
    pub vif: Vec<Option<f64>>,
    /// Learning sites in fitting order.
    pub learning_sites: Vec<SiteLocation>,
    pub fit: FitBody,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl FitArtifact {
    pub fn new(
        meta: Meta,
        rings: RingSpec,
        exposure_scale: f64,
        target_len_m: f64,
        vif: &[f64],
        learning_sites: Vec<SiteLocation>,
        model: &FittedModel,
    ) -> Self {
        let (kind, fit) = match model {
            FittedModel::Linear(f) => (ModelKind::Linear, FitBody::Linear(f.clone())),
            FittedModel::Longitudinal(f) => (ModelKind::Longitudinal, FitBody::Longitudinal(f.clone())),
            FittedModel::Spatial(p) => (
                ModelKind::Spatial,
                FitBody::Spatial(SpatialSummary {
                    coefficient_names: p.coefficient_names.clone(),
                    summaries: p.summaries.clone(),
                    phi_acceptance: p.phi_acceptance.iter().map(|&a| finite(a)).collect(),
                    phi_max: p.phi_max,
                    distance_unit_m: p.distance_unit_m,
                    n_draws: p.draws.len(),
                    warnings: p.warnings.clone(),
                    b_mean: p.mean_b(),
                }),
            ),
        };
        FitArtifact {
            meta,
            model: kind,
            rings,
            exposure_scale,
            target_len_m,
            vif: vif.iter().map(|&v| finite(v)).collect(),
            learning_sites,
            fit,
        }
    }
}

pub fn draws_columns(coefficient_names: &[String], site_ids: &[String]) -> Vec<String> {
    let mut cols: Vec<String> = vec!["chain".into(), "iteration".into()];
    cols.extend(coefficient_names.iter().cloned());
    cols.extend(["sigma_b2", "sigma_y2", "phi"].map(String::from));
    cols.extend(site_ids.iter().map(|s| format!("b:{s}")));
    cols
}

pub fn write_draws(path: &Path, meta: &Meta, post: &SpatialPosterior) -> Result<()> {
    let cols = draws_columns(&post.coefficient_names, &post.site_ids);
    let cols: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut w = CsvOut::create(path, meta, &cols)?;
    for d in &post.draws {
        let fields = [d.chain.to_string(), d.iteration.to_string()]
            .into_iter()
            .chain(d.beta.iter().map(f64::to_string))
            .chain([d.sigma_b2, d.sigma_y2, d.phi].map(|v| v.to_string()))
            .chain(d.b.iter().map(f64::to_string));
        w.row(fields)?;
    }
    w.finish()
}

/// Reads draws written by [`write_draws`]; the column layout must match the
/// given names.
pub fn read_draws(path: &Path, coefficient_names: &[String], site_ids: &[String]) -> Result<Vec<Draw>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let expected = draws_columns(coefficient_names, site_ids).join(",");
    let p = coefficient_names.len();
    let g = site_ids.len();
    let err = |line: usize, message: String| Error::Parse { path: path.to_path_buf(), line: line as u64, message };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == expected => {}
        Some((i, _)) => return Err(err(i + 1, "draws header does not match the fitted model".into())),
        None => return Err(err(0, "empty draws file".into())),
    }
    lines
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 5 + p + g {
                return Err(err(i + 1, format!("expected {} fields, got {}", 5 + p + g, f.len())));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|e| err(i + 1, format!("'{s}': {e}")));
            let int = |s: &str| s.trim().parse::<usize>().map_err(|e| err(i + 1, format!("'{s}': {e}")));
            let nums = f[2..].iter().map(|s| num(s)).collect::<Result<Vec<f64>>>()?;
            Ok(Draw {
                chain: int(f[0])?,
                iteration: int(f[1])?,
                beta: nums[..p].to_vec(),
                sigma_b2: nums[p],
                sigma_y2: nums[p + 1],
                phi: nums[p + 2],
                b: nums[p + 3..].to_vec(),
            })
        })
        .collect()
}

/// Rebuilds a fitted model from fit.json, plus draws.csv for the spatial model.
pub fn load_model(fit_json: &Path, draws_csv: Option<&Path>) -> Result<(FitArtifact, FittedModel)> {
    let art: FitArtifact = read_json(fit_json)?;
    let model = match &art.fit {
        FitBody::Linear(f) => FittedModel::Linear(f.clone()),
        FitBody::Longitudinal(f) => FittedModel::Longitudinal(f.clone()),
        FitBody::Spatial(s) => {
            let draws_csv = draws_csv.ok_or_else(|| Error::invalid("spatial model needs its draws file"))?;
            let site_ids: Vec<String> = art.learning_sites.iter().map(|s| s.site_id.clone()).collect();
            let draws = read_draws(draws_csv, &s.coefficient_names, &site_ids)?;
            if draws.len() != s.n_draws {
                return Err(Error::invalid(format!("draws file has {} draws, fit records {}", draws.len(), s.n_draws)));
            }
            FittedModel::Spatial(SpatialPosterior {
                coefficient_names: s.coefficient_names.clone(),
                site_ids,
                locations: art.learning_sites.iter().map(|l| Point::new(l.x_m, l.y_m)).collect(),
                draws,
                summaries: s.summaries.clone(),
                phi_acceptance: s.phi_acceptance.iter().map(|a| a.unwrap_or(f64::NAN)).collect(),
                phi_max: s.phi_max,
                distance_unit_m: s.distance_unit_m,
                warnings: s.warnings.clone(),
            })
        }
    };
    Ok((art, model))
}

pub fn write_daily_predictions(path: &Path, meta: &Meta, rows: &[PredictionRecord]) -> Result<()> {
    let mut w = CsvOut::create(path, meta, &["site_id", "date", "no2_ppb", "log_no2"])?;
    for r in rows {
        w.row([r.site_id.clone(), r.date.to_string(), r.predicted.to_string(), r.predicted_log.to_string()])?;
    }
    w.finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodRow<'a> {
    pub prediction: &'a PeriodPrediction,
    pub role: &'a str,
    pub observed: f64,
}

pub fn write_period_predictions(path: &Path, meta: &Meta, rows: &[PeriodRow]) -> Result<()> {
    let mut w =
        CsvOut::create(path, meta, &["site_id", "period_start", "period_end", "p_ppb", "observed_ppb", "role"])?;
    for r in rows {
        let p = r.prediction;
        w.row([
            p.site_id.clone(),
            p.period_start.to_string(),
            p.period_end.to_string(),
            p.p.to_string(),
            r.observed.to_string(),
            r.role.to_string(),
        ])?;
    }
    w.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationArtifact {
    pub meta: Meta,
    pub model: ModelKind,
    pub prediction_mode: PredictionMode,
    /// Held-out sites; absent when every site was used for fitting.
    pub validation: Option<ValidationReport>,
    /// In-sample calibration at the learning sites.
    pub learning: ValidationReport,
    /// Sill of the semivariogram of learning-site random intercepts.
    pub semivariogram_sill: Option<f64>,
}

pub fn write_semivariogram(path: &Path, meta: &Meta, v: &Semivariogram) -> Result<()> {
    let mut w =
        CsvOut::create(path, meta, &["lag_lower_km", "lag_upper_km", "lag_center_km", "semivariance", "pairs"])?;
    for b in &v.bins {
        w.row([
            b.lower.to_string(),
            b.upper.to_string(),
            b.center.to_string(),
            b.semivariance.to_string(),
            b.pairs.to_string(),
        ])?;
    }
    w.finish()
}
