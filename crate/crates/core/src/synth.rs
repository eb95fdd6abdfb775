//! Synthetic datasets drawn from the fitted model's own generative law, for
//! exercising the pipeline and testing parameter recovery.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{Days, NaiveDate};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{Inputs, ModelKind, RunConfig};
use crate::error::{Error, Result};
use crate::fit::exponential_correlation;
use crate::geom::{Point, METERS_PER_KM};
use crate::ingest::{self, HourlyReading, MonitorStation, Observation, RoadSegment, Site};
use crate::interp::{self, DEFAULT_IDW_POWER, DEFAULT_MIN_HOURS};
use crate::traffic::{self, RingSpec, DEFAULT_TARGET_LEN_M};

/// Synthetic road densities put raw single-ring exposure near 1e8
/// vehicle-meters, so this scale keeps `W` of order one.
pub const SYNTH_EXPOSURE_SCALE: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueParams {
    pub beta0: f64,
    pub beta1: f64,
    pub gamma: Vec<f64>,
    pub sigma_b2: f64,
    pub sigma_y2: f64,
    /// Range of the exponential correlation in km; `None` draws independent
    /// intercepts.
    pub phi: Option<f64>,
}

impl TrueParams {
    /// Single-step longitudinal estimates, independent intercepts.
    pub fn table2() -> Self {
        TrueParams { beta0: -0.5974, beta1: 1.0281, gamma: vec![0.1529], sigma_b2: 0.0402, sigma_y2: 0.0619, phi: None }
    }

    /// Posterior means of the spatial model.
    pub fn table3() -> Self {
        TrueParams {
            beta0: -0.8524,
            beta1: 1.0828,
            gamma: vec![0.1023],
            sigma_b2: 0.0748,
            sigma_y2: 0.0648,
            phi: Some(12.3184),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadNetworkSpec {
    pub n_centers: usize,
    /// Highways are added until the network reaches this length.
    pub total_km: f64,
    pub max_highway_km: f64,
    pub segment_median_m: f64,
    pub segment_log_sd: f64,
    pub segment_min_m: f64,
    pub segment_max_m: f64,
    pub adt_median: f64,
    /// Variance of ln ADT.
    pub adt_log_var: f64,
    /// Share of the ln ADT variance that is constant along a highway.
    pub adt_highway_share: f64,
    pub adt_max: f64,
    /// Standard deviation of the heading change between segments, radians.
    pub turn_sd: f64,
}

impl Default for RoadNetworkSpec {
    fn default() -> Self {
        RoadNetworkSpec {
            n_centers: 6,
            total_km: 3000.0,
            max_highway_km: 40.0,
            segment_median_m: 740.0,
            segment_log_sd: 0.989,
            segment_min_m: 16.0,
            segment_max_m: 12_295.0,
            adt_median: 11_400.0,
            // ln(mean / median) = var / 2 with mean 22,323.
            adt_log_var: 2.0 * (22_323.0f64 / 11_400.0).ln(),
            adt_highway_share: 0.75,
            adt_max: 184_000.0,
            turn_sd: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorSpec {
    /// Median daily level, ppb.
    pub median_ppb: f64,
    pub ar_coefficient: f64,
    /// Innovation sd of the regional log signal.
    pub ar_sd: f64,
    pub station_offset_sd: f64,
    pub station_daily_sd: f64,
    pub hourly_sd: f64,
    pub diurnal_amplitude: f64,
    pub missing_rate: f64,
}

impl Default for MonitorSpec {
    fn default() -> Self {
        MonitorSpec {
            median_ppb: 15.0,
            ar_coefficient: 0.7,
            ar_sd: 0.3,
            station_offset_sd: 0.15,
            station_daily_sd: 0.1,
            hourly_sd: 0.15,
            diurnal_amplitude: 0.35,
            missing_rate: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub n_learning: usize,
    pub n_validation: usize,
    pub n_monitors: usize,
    pub extent_km: f64,
    pub truth: TrueParams,
    pub roads: RoadNetworkSpec,
    pub monitors: MonitorSpec,
    pub periods_per_site: usize,
    pub period_days: u64,
    pub period_spacing_days: u64,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub rings: RingSpec,
    pub target_len_m: f64,
    pub exposure_scale: f64,
    pub idw_power: f64,
    pub min_hours: usize,
    pub distance_unit_m: f64,
}

impl Scenario {
    pub fn new(seed: u64, truth: TrueParams) -> Self {
        Scenario {
            seed,
            n_learning: 266,
            n_validation: 50,
            n_monitors: 4,
            extent_km: 100.0,
            truth,
            roads: RoadNetworkSpec::default(),
            monitors: MonitorSpec::default(),
            periods_per_site: 4,
            period_days: 28,
            period_spacing_days: 91,
            start_date: NaiveDate::from_ymd_opt(2006, 4, 25).expect("valid date"),
            end_date: NaiveDate::from_ymd_opt(2008, 3, 21).expect("valid date"),
            rings: RingSpec::default_single(),
            target_len_m: DEFAULT_TARGET_LEN_M,
            exposure_scale: SYNTH_EXPOSURE_SCALE,
            idw_power: DEFAULT_IDW_POWER,
            min_hours: DEFAULT_MIN_HOURS,
            distance_unit_m: METERS_PER_KM,
        }
    }

    pub fn table2(seed: u64) -> Self {
        Scenario::new(seed, TrueParams::table2())
    }

    pub fn table3(seed: u64) -> Self {
        Scenario::new(seed, TrueParams::table3())
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "table2" => Ok(Scenario::table2(seed)),
            "table3" => Ok(Scenario::table3(seed)),
            _ => Err(Error::invalid(format!("unknown preset '{name}' (expected table2 or table3)"))),
        }
    }

    fn validate(&self) -> Result<()> {
        let t = &self.truth;
        if !(t.sigma_b2 > 0.0 && t.sigma_y2 > 0.0) {
            return Err(Error::invalid("variances must be positive"));
        }
        if t.phi.is_some_and(|p| !(p > 0.0)) {
            return Err(Error::invalid("phi must be positive"));
        }
        if self.n_learning == 0 || self.n_monitors == 0 || self.periods_per_site == 0 || self.period_days == 0 {
            return Err(Error::invalid("counts must be at least 1"));
        }
        if t.gamma.len() != self.rings.n_rings() {
            return Err(Error::invalid(format!("{} gamma values for {} rings", t.gamma.len(), self.rings.n_rings())));
        }
        if self.periods_per_site > 1 && self.period_spacing_days < self.period_days {
            return Err(Error::invalid("observation periods would overlap"));
        }
        if self.window_days() < 0 {
            return Err(Error::invalid("observation periods do not fit in the date range"));
        }
        Ok(())
    }

    /// Number of possible start offsets for the first period, minus one.
    fn window_days(&self) -> i64 {
        let span = (self.end_date - self.start_date).num_days() + 1;
        let used = (self.periods_per_site as u64 - 1) * self.period_spacing_days + self.period_days;
        span - used as i64
    }

    fn extent_m(&self) -> f64 {
        self.extent_km * METERS_PER_KM
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Learning,
    Validation,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Learning => "learning",
            Role::Validation => "validation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub seed: u64,
    pub params: TrueParams,
    pub rings: RingSpec,
    pub exposure_scale: f64,
    pub distance_unit_m: f64,
    /// Random intercept of every site, learning and validation.
    pub b: BTreeMap<String, f64>,
    /// Scaled exposure of every site.
    pub exposure: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub monitors: Vec<MonitorStation>,
    /// Learning sites first, then validation sites.
    pub sites: Vec<Site>,
    pub roads: Vec<RoadSegment>,
    pub split: Vec<(String, Role)>,
    pub truth: Truth,
    pub scenario: Scenario,
}

impl Dataset {
    pub fn learning_sites(&self) -> &[Site] {
        &self.sites[..self.scenario.n_learning]
    }

    pub fn validation_sites(&self) -> &[Site] {
        &self.sites[self.scenario.n_learning..]
    }
}

/// Rounds to `digits` decimals. Dividing by the power of ten gives the nearest double,
/// so the value prints without trailing noise.
fn round_to(v: f64, digits: i32) -> f64 {
    let k = 10f64.powi(digits);
    (v * k).round() / k
}

fn uniform_point(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Point {
    Point::new(round_to(rng.random_range(lo..hi), 1), round_to(rng.random_range(lo..hi), 1))
}

/// Draws `b ~ N(0, sigma_b2 * Sigma(phi))` at the given points, with
/// distances in `unit_m`; `phi = None` gives independent draws.
pub fn draw_spatial_intercepts<R: Rng>(
    rng: &mut R,
    locations: &[Point],
    sigma_b2: f64,
    phi: Option<f64>,
    unit_m: f64,
) -> Result<Vec<f64>> {
    let n = locations.len();
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let sd = sigma_b2.sqrt();
    match phi {
        None => Ok(z.iter().map(|v| sd * v).collect()),
        Some(phi) => {
            let dist = DMatrix::from_fn(n, n, |i, j| locations[i].distance(&locations[j]) / unit_m);
            let chol = exponential_correlation(&dist, phi)
                .cholesky()
                .ok_or_else(|| Error::numerical("correlation matrix of synthetic sites is not positive definite"))?;
            Ok((chol.l() * z).iter().map(|v| sd * v).collect())
        }
    }
}

fn generate_roads(rng: &mut ChaCha8Rng, spec: &RoadNetworkSpec, extent: f64) -> Result<Vec<RoadSegment>> {
    let centers: Vec<Point> =
        (0..spec.n_centers.max(1)).map(|_| uniform_point(rng, 0.15 * extent, 0.85 * extent)).collect();
    let seg_len =
        LogNormal::new(spec.segment_median_m.ln(), spec.segment_log_sd).map_err(|e| Error::invalid(e.to_string()))?;
    let hw_sd = (spec.adt_log_var * spec.adt_highway_share).sqrt();
    let seg_sd = (spec.adt_log_var * (1.0 - spec.adt_highway_share)).sqrt();
    let hw_adt = LogNormal::new(spec.adt_median.ln(), hw_sd).map_err(|e| Error::invalid(e.to_string()))?;
    let seg_adt = LogNormal::new(0.0, seg_sd).map_err(|e| Error::invalid(e.to_string()))?;
    let turn = Normal::new(0.0, spec.turn_sd).map_err(|e| Error::invalid(e.to_string()))?;
    let jitter = Normal::new(0.0, 500.0).expect("valid sd");

    let total_m = spec.total_km * METERS_PER_KM;
    let max_hw_m = spec.max_highway_km * METERS_PER_KM;
    let inside = |p: &Point| p.x >= 0.0 && p.y >= 0.0 && p.x <= extent && p.y <= extent;
    let mut roads = Vec::new();
    let mut total = 0.0;
    let mut h = 0usize;
    while total < total_m {
        let c = centers[h % centers.len()];
        let mut pos = Point::new(round_to(c.x + jitter.sample(rng), 1), round_to(c.y + jitter.sample(rng), 1));
        let mut heading = rng.random_range(0.0..2.0 * PI);
        let base_adt = hw_adt.sample(rng);
        let mut hw_len = 0.0;
        let mut s = 0usize;
        while hw_len < max_hw_m && total < total_m && inside(&pos) {
            let len = seg_len.sample(rng).clamp(spec.segment_min_m, spec.segment_max_m);
            heading += turn.sample(rng);
            let next = Point::new(round_to(pos.x + len * heading.cos(), 1), round_to(pos.y + len * heading.sin(), 1));
            if next == pos {
                continue;
            }
            let adt = (base_adt * seg_adt.sample(rng)).round().clamp(1.0, spec.adt_max);
            let seg = RoadSegment::new(format!("H{h:03}S{s:03}"), vec![pos, next], adt)?;
            hw_len += seg.length();
            total += seg.length();
            roads.push(seg);
            pos = next;
            s += 1;
        }
        h += 1;
    }
    Ok(roads)
}

fn generate_monitors(rng: &mut ChaCha8Rng, sc: &Scenario) -> Vec<MonitorStation> {
    let spec = &sc.monitors;
    let n_days = (sc.end_date - sc.start_date).num_days() as usize + 1;
    let ar = Normal::new(0.0, spec.ar_sd).expect("valid sd");
    let stationary_sd = spec.ar_sd / (1.0 - spec.ar_coefficient.powi(2)).sqrt();
    let mut regional = Vec::with_capacity(n_days);
    let mut s = rng.sample::<f64, _>(StandardNormal) * stationary_sd;
    for _ in 0..n_days {
        regional.push(s);
        s = spec.ar_coefficient * s + ar.sample(rng);
    }
    let locations: Vec<Point> = (0..sc.n_monitors).map(|_| uniform_point(rng, 0.0, sc.extent_m())).collect();
    let offsets: Vec<f64> =
        (0..sc.n_monitors).map(|_| spec.station_offset_sd * rng.sample::<f64, _>(StandardNormal)).collect();
    let diurnal: Vec<f64> =
        (0..24).map(|h| (1.0 + spec.diurnal_amplitude * (2.0 * PI * (h as f64 - 8.0) / 24.0).cos()).ln()).collect();
    (0..sc.n_monitors)
        .map(|m| {
            let mut readings = Vec::with_capacity(n_days * 24);
            for (d, level) in regional.iter().enumerate() {
                let day = sc.start_date + Days::new(d as u64);
                let daily = spec.median_ppb.ln()
                    + level
                    + offsets[m]
                    + spec.station_daily_sd * rng.sample::<f64, _>(StandardNormal);
                for (h, dh) in diurnal.iter().enumerate() {
                    let noise: f64 = rng.sample(StandardNormal);
                    if rng.random::<f64>() < spec.missing_rate {
                        continue;
                    }
                    let v = round_to((daily + dh + spec.hourly_sd * noise).exp(), 2).max(0.01);
                    readings.push(HourlyReading {
                        timestamp: day.and_hms_opt(h as u32, 0, 0).expect("valid hour"),
                        no2: v,
                    });
                }
            }
            MonitorStation { station_id: format!("M{:02}", m + 1), location: locations[m], readings }
        })
        .collect()
}

/// Draws a complete dataset. Interpolated covariates and exposures are
/// computed with the same code the pipeline uses, so the generating model is
/// exactly the fitted one.
pub fn generate(sc: &Scenario) -> Result<Dataset> {
    sc.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let extent = sc.extent_m();

    let roads = generate_roads(&mut rng, &sc.roads, extent)?;
    let monitors = generate_monitors(&mut rng, sc);

    let n = sc.n_learning + sc.n_validation;
    let window = sc.window_days() as u64;
    let mut sites: Vec<Site> = (0..n)
        .map(|i| {
            let site_id =
                if i < sc.n_learning { format!("L{:03}", i + 1) } else { format!("V{:03}", i - sc.n_learning + 1) };
            let location = uniform_point(&mut rng, 0.0, extent);
            let first = sc.start_date + Days::new(rng.random_range(0..=window));
            let observations = (0..sc.periods_per_site as u64)
                .map(|k| {
                    let start = first + Days::new(k * sc.period_spacing_days);
                    Observation {
                        period_start: start,
                        period_end: start + Days::new(sc.period_days - 1),
                        value: f64::NAN,
                    }
                })
                .collect();
            Site { site_id, location, observations }
        })
        .collect();

    let locations: Vec<Point> = sites.iter().map(|s| s.location).collect();
    let t = &sc.truth;
    let b = draw_spatial_intercepts(&mut rng, &locations, t.sigma_b2, t.phi, sc.distance_unit_m)?;

    let exposure = traffic::exposure_matrix(&sites, &roads, &sc.rings, sc.target_len_m, sc.exposure_scale)?;
    let daily = interp::daily_averages(&monitors, sc.min_hours);
    let eps_sd = t.sigma_y2.sqrt();
    for (i, site) in sites.iter_mut().enumerate() {
        let traffic_term: f64 = t.gamma.iter().zip(&exposure[i].w).map(|(g, w)| g * w).sum();
        for k in 0..site.observations.len() {
            let cov = interp::period_covariate(site, &site.observations[k], &daily, sc.idw_power)?;
            let eps: f64 = rng.sample(StandardNormal);
            let y = t.beta0 + b[i] + t.beta1 * cov.x + traffic_term + eps_sd * eps;
            site.observations[k].value = y.exp();
        }
    }

    let split = sites
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let role = if i < sc.n_learning { Role::Learning } else { Role::Validation };
            (s.site_id.clone(), role)
        })
        .collect();
    let truth = Truth {
        seed: sc.seed,
        params: t.clone(),
        rings: sc.rings.clone(),
        exposure_scale: sc.exposure_scale,
        distance_unit_m: sc.distance_unit_m,
        b: sites.iter().zip(&b).map(|(s, v)| (s.site_id.clone(), *v)).collect(),
        exposure: exposure.into_iter().map(|e| (e.site_id, e.w)).collect(),
    };
    Ok(Dataset { monitors, sites, roads, split, truth, scenario: sc.clone() })
}

pub fn write_split<W: Write>(mut out: W, split: &[(String, Role)]) -> Result<()> {
    let io = |e| Error::io("<output>", e);
    writeln!(out, "site_id,role").map_err(io)?;
    for (id, role) in split {
        writeln!(out, "{id},{}", role.as_str()).map_err(io)?;
    }
    Ok(())
}

/// Reads `site_id,role` rows.
pub fn load_split(path: &Path) -> Result<Vec<(String, Role)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (i == 0 && line == "site_id,role") {
            continue;
        }
        let parse_err = |message: String| Error::Parse { path: path.to_path_buf(), line: i as u64 + 1, message };
        let (id, role) =
            line.split_once(',').ok_or_else(|| parse_err(format!("expected site_id,role, got '{line}'")))?;
        let role = match role.trim() {
            "learning" => Role::Learning,
            "validation" => Role::Validation,
            r => return Err(parse_err(format!("unknown role '{r}'"))),
        };
        out.push((id.trim().to_string(), role));
    }
    Ok(out)
}

/// Run configuration matching how a dataset was generated.
pub fn matching_config(ds: &Dataset) -> RunConfig {
    let sc = &ds.scenario;
    let mut cfg = RunConfig::new(Inputs {
        monitors: PathBuf::from("monitors.csv"),
        sites: PathBuf::from("sites.csv"),
        roads: PathBuf::from("roads.csv"),
        split: Some(PathBuf::from("split.csv")),
    });
    cfg.seed = sc.seed;
    cfg.exposure.rings = crate::config::Rings::Boundaries(sc.rings.boundaries().to_vec());
    cfg.exposure.target_len_m = sc.target_len_m;
    cfg.exposure.scale = sc.exposure_scale;
    cfg.interp.power = sc.idw_power;
    cfg.interp.min_hours = sc.min_hours;
    cfg.mcmc.distance_unit_m = sc.distance_unit_m;
    cfg.model.kind = if sc.truth.phi.is_some() { ModelKind::Spatial } else { ModelKind::Longitudinal };
    cfg.validation.n_validation = sc.n_validation;
    cfg
}

/// Writes monitors.csv, sites.csv, roads.csv, split.csv, truth.json and a
/// matching config.toml into `dir`.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let create = |name: &str| {
        let p = dir.join(name);
        fs::File::create(&p).map(std::io::BufWriter::new).map_err(|e| Error::io(p, e))
    };
    ingest::write_monitors(create("monitors.csv")?, &ds.monitors)?;
    ingest::write_sites(create("sites.csv")?, &ds.sites)?;
    ingest::write_roads(create("roads.csv")?, &ds.roads)?;
    write_split(create("split.csv")?, &ds.split)?;
    let truth = serde_json::to_string_pretty(&ds.truth).map_err(|e| Error::invalid(e.to_string()))?;
    let p = dir.join("truth.json");
    fs::write(&p, truth + "\n").map_err(|e| Error::io(p, e))?;
    let p = dir.join("config.toml");
    fs::write(&p, matching_config(ds).to_toml()?).map_err(|e| Error::io(p, e))?;
    Ok(())
}
