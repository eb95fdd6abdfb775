//! Stage orchestration: ingest, exposure, interpolate, fit, predict,
//! validate. Each stage writes its artifacts into the output directory.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::PathBuf;

use chrono::NaiveDate;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::artifacts::{self, FitArtifact, Meta, PeriodRow, SiteLocation, ValidationArtifact};
use crate::config::{ModelKind, RunConfig};
use crate::error::{Error, Result};
use crate::fit::{self, DesignRow, VarianceMethod};
use crate::geom::Point;
use crate::ingest::{self, MonitorStation, RoadSegment, Site};
use crate::interp::{self, DailySeries, PeriodCovariate};
use crate::predict::{self, FittedModel, Predictions, Predictor};
use crate::synth::{self, Role};
use crate::traffic::{self, RingSpec};
use crate::validate::{self, PeriodKey, ValidationReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Ingest,
    Exposure,
    Interpolate,
    Fit,
    Predict,
    Validate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Exposure => "exposure",
            Stage::Interpolate => "interpolate",
            Stage::Fit => "fit",
            Stage::Predict => "predict",
            Stage::Validate => "validate",
        })
    }
}

#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub source: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        self.source.exit_code()
    }
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

/// Which stages a command runs. `Predict` and `Validate` reuse the fit
/// already in the output directory; `Run` fits afresh.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Exposure,
    Interpolate,
    Fit,
    Predict,
    Validate,
    Run,
}

pub struct Context {
    pub config: RunConfig,
    pub meta: Meta,
    pub out_dir: PathBuf,
    pub rings: RingSpec,
}

impl Context {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let rings = config.rings()?;
        let out_dir = config.output_path();
        fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
        Ok(Context { meta: Meta::new(config.seed, config.hash()), out_dir, rings, config })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

pub struct LoadedInputs {
    pub monitors: Vec<MonitorStation>,
    pub sites: Vec<Site>,
    pub roads: Vec<RoadSegment>,
    /// Role of each site, in `sites` order.
    pub roles: Vec<Role>,
}

impl LoadedInputs {
    pub fn learning(&self) -> Vec<&Site> {
        self.with_role(Role::Learning)
    }

    pub fn validation(&self) -> Vec<&Site> {
        self.with_role(Role::Validation)
    }

    fn with_role(&self, role: Role) -> Vec<&Site> {
        self.sites.iter().zip(&self.roles).filter(|(_, r)| **r == role).map(|(s, _)| s).collect()
    }
}

pub fn load_inputs(cfg: &RunConfig) -> Result<LoadedInputs> {
    let monitors = ingest::load_monitors(cfg.resolve(&cfg.inputs.monitors))?;
    let sites = ingest::load_sites(cfg.resolve(&cfg.inputs.sites))?;
    let roads = ingest::load_roads(cfg.resolve(&cfg.inputs.roads))?;
    let roles = match &cfg.inputs.split {
        Some(p) => roles_from_split(&sites, &synth::load_split(&cfg.resolve(p))?)?,
        None => random_roles(sites.len(), cfg.validation.n_validation, cfg.seed)?,
    };
    log::info!("loaded {} monitors, {} sites, {} road segments", monitors.len(), sites.len(), roads.len());
    Ok(LoadedInputs { monitors, sites, roads, roles })
}

fn roles_from_split(sites: &[Site], split: &[(String, Role)]) -> Result<Vec<Role>> {
    let map: HashMap<&str, Role> = split.iter().map(|(id, r)| (id.as_str(), *r)).collect();
    if map.len() != split.len() {
        return Err(Error::invalid("split file lists a site more than once"));
    }
    let known: HashMap<&str, ()> = sites.iter().map(|s| (s.site_id.as_str(), ())).collect();
    if let Some((id, _)) = split.iter().find(|(id, _)| !known.contains_key(id.as_str())) {
        return Err(Error::invalid(format!("split file names unknown site {id}")));
    }
    sites
        .iter()
        .map(|s| {
            map.get(s.site_id.as_str())
                .copied()
                .ok_or_else(|| Error::invalid(format!("site {} is missing from the split file", s.site_id)))
        })
        .collect()
}

fn random_roles(n_sites: usize, n_validation: usize, seed: u64) -> Result<Vec<Role>> {
    if n_validation >= n_sites {
        return Err(Error::invalid(format!("cannot hold out {n_validation} of {n_sites} sites")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut roles = vec![Role::Learning; n_sites];
    for i in sample(&mut rng, n_sites, n_validation) {
        roles[i] = Role::Validation;
    }
    Ok(roles)
}

/// Scaled exposure per site id.
pub type Exposures = HashMap<String, Vec<f64>>;

pub fn run_exposure(ctx: &Context, inputs: &LoadedInputs) -> Result<Exposures> {
    let cfg = &ctx.config;
    let ev = traffic::exposure_matrix(
        &inputs.sites,
        &inputs.roads,
        &ctx.rings,
        cfg.exposure.target_len_m,
        cfg.exposure.scale,
    )?;
    artifacts::write_exposure(&ctx.path("exposure.csv"), &ctx.meta, &ev, ctx.rings.n_rings())?;
    artifacts::write_json(
        &ctx.path("exposure_meta.json"),
        &artifacts::ExposureMeta {
            meta: ctx.meta.clone(),
            rings: ctx.rings.clone(),
            target_len_m: cfg.exposure.target_len_m,
            exposure_scale: cfg.exposure.scale,
        },
    )?;
    Ok(ev.into_iter().map(|e| (e.site_id, e.w)).collect())
}

pub struct Interpolated {
    pub stations: Vec<DailySeries>,
    /// Daily IDW value over each site's observation days.
    pub site_daily: HashMap<String, BTreeMap<NaiveDate, f64>>,
    pub covariates: Vec<PeriodCovariate>,
}

pub fn run_interpolate(ctx: &Context, inputs: &LoadedInputs) -> Result<Interpolated> {
    let cfg = &ctx.config;
    let stations = interp::daily_averages(&inputs.monitors, cfg.interp.min_hours);
    let mut site_daily = HashMap::new();
    let mut rows = Vec::new();
    for site in &inputs.sites {
        let series = interp::site_daily_idw(site, &stations, cfg.interp.power)?;
        rows.extend(series.iter().map(|(d, v)| (site.site_id.clone(), *d, *v)));
        site_daily.insert(site.site_id.clone(), series.into_iter().collect::<BTreeMap<_, _>>());
    }
    let covariates = interp::period_covariates(&inputs.sites, &stations, cfg.interp.power)?;
    artifacts::write_daily_idw(&ctx.path("daily_idw.csv"), &ctx.meta, &rows)?;
    artifacts::write_period_covariates(&ctx.path("period_covariates.csv"), &ctx.meta, &covariates)?;
    Ok(Interpolated { stations, site_daily, covariates })
}

/// One row per observation period of the given sites, with `y = ln Z`.
pub fn design_rows(sites: &[&Site], covariates: &[PeriodCovariate], exposures: &Exposures) -> Result<Vec<DesignRow>> {
    let cov: HashMap<(&str, NaiveDate), &PeriodCovariate> =
        covariates.iter().map(|c| ((c.site_id.as_str(), c.period_start), c)).collect();
    let mut rows = Vec::new();
    for site in sites {
        let w = exposures
            .get(&site.site_id)
            .ok_or_else(|| Error::invalid(format!("no exposure for site {}", site.site_id)))?;
        for obs in &site.observations {
            let c = cov.get(&(site.site_id.as_str(), obs.period_start)).ok_or_else(|| {
                Error::invalid(format!("no covariate for site {} period {}", site.site_id, obs.period_start))
            })?;
            rows.push(DesignRow { site_id: site.site_id.clone(), y: obs.value.ln(), x: c.x, w: w.clone() });
        }
    }
    Ok(rows)
}

pub fn fit_model(cfg: &RunConfig, learning: &[&Site], rows: &[DesignRow]) -> Result<FittedModel> {
    Ok(match cfg.model.kind {
        ModelKind::Linear => FittedModel::Linear(fit::fit_linear(rows)?),
        ModelKind::Longitudinal => {
            let method = if cfg.model.reml { VarianceMethod::Reml } else { VarianceMethod::Ml };
            FittedModel::Longitudinal(fit::fit_longitudinal(rows, method)?)
        }
        ModelKind::Spatial => {
            let locations: HashMap<String, Point> = learning.iter().map(|s| (s.site_id.clone(), s.location)).collect();
            let post = fit::fit_spatial(rows, &locations, &cfg.mcmc_config())?;
            for w in &post.warnings {
                log::warn!("{w}");
            }
            FittedModel::Spatial(post)
        }
    })
}

pub fn run_fit(
    ctx: &Context,
    inputs: &LoadedInputs,
    exposures: &Exposures,
    interp: &Interpolated,
) -> Result<FittedModel> {
    let cfg = &ctx.config;
    let learning = inputs.learning();
    let rows = design_rows(&learning, &interp.covariates, exposures)?;
    log::info!("fitting {} model on {} rows from {} sites", cfg.model.kind, rows.len(), learning.len());
    let model = fit_model(cfg, &learning, &rows)?;
    let vif = fit::vif(&rows)?;
    // Spatial posteriors index sites in fitting order, which follows `rows`.
    let locations: HashMap<&str, Point> = learning.iter().map(|s| (s.site_id.as_str(), s.location)).collect();
    let order: Vec<String> = match &model {
        FittedModel::Spatial(p) => p.site_ids.clone(),
        _ => learning.iter().map(|s| s.site_id.clone()).collect(),
    };
    let learning_sites = order
        .iter()
        .map(|id| SiteLocation { site_id: id.clone(), x_m: locations[id.as_str()].x, y_m: locations[id.as_str()].y })
        .collect();
    let art = FitArtifact::new(
        ctx.meta.clone(),
        ctx.rings.clone(),
        cfg.exposure.scale,
        cfg.exposure.target_len_m,
        &vif,
        learning_sites,
        &model,
    );
    artifacts::write_json(&ctx.path("fit.json"), &art)?;
    if let FittedModel::Spatial(p) = &model {
        artifacts::write_draws(&ctx.path("draws.csv"), &ctx.meta, p)?;
    }
    Ok(model)
}

/// Loads the fit previously written to the output directory and checks it
/// was made with the same exposure definition.
pub fn load_fit(ctx: &Context) -> Result<FittedModel> {
    let draws = ctx.path("draws.csv");
    let (art, model) = artifacts::load_model(&ctx.path("fit.json"), draws.exists().then_some(draws.as_path()))?;
    if art.model != ctx.config.model.kind {
        return Err(Error::invalid(format!(
            "fit.json holds a {} fit but the config asks for {}",
            art.model, ctx.config.model.kind
        )));
    }
    if art.rings != ctx.rings || art.exposure_scale != ctx.config.exposure.scale {
        return Err(Error::invalid("fit.json was produced with different ring boundaries or exposure scale"));
    }
    Ok(model)
}

pub fn run_predict(
    ctx: &Context,
    inputs: &LoadedInputs,
    exposures: &Exposures,
    interp: &Interpolated,
    model: &FittedModel,
) -> Result<Predictions> {
    let predictor = Predictor::with_max_kriging_draws(model, ctx.config.validation.max_kriging_draws)?;
    let preds = predict::predict_periods(
        &predictor,
        &inputs.sites,
        &interp.site_daily,
        exposures,
        ctx.config.model.prediction,
    )?;
    artifacts::write_daily_predictions(&ctx.path("daily_predictions.csv"), &ctx.meta, &preds.daily)?;
    let roles: HashMap<&str, Role> =
        inputs.sites.iter().map(|s| s.site_id.as_str()).zip(inputs.roles.iter().copied()).collect();
    let observed = observed_table(&inputs.sites);
    let rows: Vec<PeriodRow> = preds
        .periods
        .iter()
        .map(|p| PeriodRow {
            prediction: p,
            role: roles[p.site_id.as_str()].as_str(),
            observed: observed[&period_key(p)],
        })
        .collect();
    artifacts::write_period_predictions(&ctx.path("period_predictions.csv"), &ctx.meta, &rows)?;
    Ok(preds)
}

fn period_key(p: &predict::PeriodPrediction) -> PeriodKey {
    PeriodKey { site_id: p.site_id.clone(), period_start: p.period_start, period_end: p.period_end }
}

fn observed_table(sites: &[Site]) -> BTreeMap<PeriodKey, f64> {
    sites
        .iter()
        .flat_map(|s| {
            s.observations.iter().map(move |o| {
                (
                    PeriodKey { site_id: s.site_id.clone(), period_start: o.period_start, period_end: o.period_end },
                    o.value,
                )
            })
        })
        .collect()
}

fn report_for(sites: &[&Site], preds: &Predictions) -> Result<ValidationReport> {
    let owned: Vec<Site> = sites.iter().map(|s| (*s).clone()).collect();
    let observed = observed_table(&owned);
    let predicted: BTreeMap<PeriodKey, f64> =
        preds.periods.iter().map(|p| (period_key(p), p.p)).filter(|(k, _)| observed.contains_key(k)).collect();
    validate::calibration(&observed, &predicted)
}

pub fn run_validate(
    ctx: &Context,
    inputs: &LoadedInputs,
    model: &FittedModel,
    preds: &Predictions,
) -> Result<ValidationArtifact> {
    let cfg = &ctx.config;
    let validation_sites = inputs.validation();
    let validation = if validation_sites.is_empty() { None } else { Some(report_for(&validation_sites, preds)?) };
    let learning = report_for(&inputs.learning(), preds)?;

    let mut sill = None;
    if let Some(b) = model.random_intercepts() {
        let locations: HashMap<String, Point> = inputs.sites.iter().map(|s| (s.site_id.clone(), s.location)).collect();
        let v = validate::semivariogram(&b, &locations, cfg.validation.bin_width_km, cfg.validation.max_lag_km)?;
        artifacts::write_semivariogram(&ctx.path("semivariogram.csv"), &ctx.meta, &v)?;
        sill = Some(v.sill());
    }
    let art = ValidationArtifact {
        meta: ctx.meta.clone(),
        model: cfg.model.kind,
        prediction_mode: cfg.model.prediction,
        validation,
        learning,
        semivariogram_sill: sill,
    };
    artifacts::write_json(&ctx.path("validation.json"), &art)?;
    Ok(art)
}

#[derive(Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub model: Option<FittedModel>,
    pub validation: Option<ValidationArtifact>,
}

pub fn run_pipeline(config: RunConfig) -> std::result::Result<RunSummary, StageError> {
    run_command(config, Command::Run)
}

pub fn run_command(config: RunConfig, command: Command) -> std::result::Result<RunSummary, StageError> {
    let ctx = Context::new(config).at(Stage::Config)?;
    let inputs = load_inputs(&ctx.config).at(Stage::Ingest)?;
    let mut summary = RunSummary { out_dir: ctx.out_dir.clone(), model: None, validation: None };
    if command == Command::Interpolate {
        run_interpolate(&ctx, &inputs).at(Stage::Interpolate)?;
        return Ok(summary);
    }
    let exposures = run_exposure(&ctx, &inputs).at(Stage::Exposure)?;
    if command == Command::Exposure {
        return Ok(summary);
    }
    let interp = run_interpolate(&ctx, &inputs).at(Stage::Interpolate)?;
    let model = match command {
        Command::Predict | Command::Validate => load_fit(&ctx).at(Stage::Predict)?,
        _ => run_fit(&ctx, &inputs, &exposures, &interp).at(Stage::Fit)?,
    };
    if command != Command::Fit {
        let preds = run_predict(&ctx, &inputs, &exposures, &interp, &model).at(Stage::Predict)?;
        if command != Command::Predict {
            summary.validation = Some(run_validate(&ctx, &inputs, &model, &preds).at(Stage::Validate)?);
        }
    }
    summary.model = Some(model);
    Ok(summary)
}
