//! Daily monitor averages, inverse-distance-weighted interpolation to sites,
//! and averaging of the interpolated series over observation periods.

use std::collections::BTreeMap;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::geom::Point;
use crate::ingest::{MonitorStation, Observation, Site};

pub const DEFAULT_MIN_HOURS: usize = 18;
pub const DEFAULT_IDW_POWER: f64 = 1.0;

/// Below this many meters a site is treated as collocated with a station.
pub const COLLOCATION_EPS_M: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct DailySeries {
    pub station_id: String,
    pub location: Point,
    pub values: BTreeMap<NaiveDate, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodCovariate {
    pub site_id: String,
    pub period_start: NaiveDate,
    pub period_end: NaiveDate,
    /// Mean interpolated level over the period, ppb.
    pub u: f64,
    /// `ln(u)`.
    pub x: f64,
}

/// Averages hourly readings per calendar date. Dates with fewer than
/// `min_hours` readings are dropped.
pub fn daily_average(station: &MonitorStation, min_hours: usize) -> DailySeries {
    let mut sums: BTreeMap<NaiveDate, (f64, usize)> = BTreeMap::new();
    for r in &station.readings {
        let e = sums.entry(r.timestamp.date()).or_insert((0.0, 0));
        e.0 += r.no2;
        e.1 += 1;
    }
    let total = sums.len();
    let values: BTreeMap<NaiveDate, f64> =
        sums.into_iter().filter(|(_, (_, n))| *n >= min_hours).map(|(d, (s, n))| (d, s / n as f64)).collect();
    if values.len() < total {
        log::info!(
            "station {}: {} of {} days dropped (fewer than {} hours)",
            station.station_id,
            total - values.len(),
            total,
            min_hours
        );
    }
    DailySeries { station_id: station.station_id.clone(), location: station.location, values }
}

pub fn daily_averages(stations: &[MonitorStation], min_hours: usize) -> Vec<DailySeries> {
    stations.iter().map(|s| daily_average(s, min_hours)).collect()
}

/// Inverse-distance-weighted value at `location` on `date`, using weights
/// `1 / d^power` over the stations that have a value that day.
pub fn idw(location: Point, stations: &[DailySeries], date: NaiveDate, power: f64) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut any = false;
    for s in stations {
        let Some(&v) = s.values.get(&date) else {
            continue;
        };
        any = true;
        let d = location.distance(&s.location);
        if d < COLLOCATION_EPS_M {
            return Ok(v);
        }
        let w = d.powf(-power);
        num += w * v;
        den += w;
    }
    if !any {
        return Err(Error::UncoverableDay(date));
    }
    Ok(num / den)
}

/// Interpolated values at a location for every day of `days`; uncoverable
/// days are collected and reported together.
pub fn idw_days(
    site_id: &str,
    location: Point,
    stations: &[DailySeries],
    days: impl IntoIterator<Item = NaiveDate>,
    power: f64,
) -> Result<Vec<(NaiveDate, f64)>> {
    let mut out = Vec::new();
    let mut missing = Vec::new();
    for day in days {
        match idw(location, stations, day, power) {
            Ok(v) => out.push((day, v)),
            Err(Error::UncoverableDay(d)) => missing.push(d),
            Err(e) => return Err(e),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingDates { site_id: site_id.to_string(), dates: missing });
    }
    Ok(out)
}

pub fn period_covariate(
    site: &Site,
    obs: &Observation,
    stations: &[DailySeries],
    power: f64,
) -> Result<PeriodCovariate> {
    let daily = idw_days(&site.site_id, site.location, stations, obs.days(), power)?;
    let u = daily.iter().map(|(_, v)| v).sum::<f64>() / daily.len() as f64;
    Ok(PeriodCovariate {
        site_id: site.site_id.clone(),
        period_start: obs.period_start,
        period_end: obs.period_end,
        u,
        x: u.ln(),
    })
}

pub fn period_covariates(sites: &[Site], stations: &[DailySeries], power: f64) -> Result<Vec<PeriodCovariate>> {
    let mut out = Vec::new();
    for site in sites {
        for obs in &site.observations {
            out.push(period_covariate(site, obs, stations, power)?);
        }
    }
    Ok(out)
}

/// Daily interpolated series at a site covering every day of its observation periods.
pub fn site_daily_idw(site: &Site, stations: &[DailySeries], power: f64) -> Result<Vec<(NaiveDate, f64)>> {
    let days = site.observations.iter().flat_map(|o| o.days());
    idw_days(&site.site_id, site.location, stations, days, power)
}
