//! Input datasets: hourly monitor readings, period-averaged site observations
//! and road segments with average daily traffic.
//!
//! All three are comma-separated UTF-8 files with a header row. Lines starting
//! with `#` are treated as comments so that tool-written metadata headers do
//! not break re-reading.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime, Timelike};

use crate::error::{Error, Result};
use crate::geom::{polyline_length, Point};

pub const MONITORS_HEADER: [&str; 5] = ["station_id", "x_m", "y_m", "timestamp_iso8601_hour", "no2_ppb"];
pub const SITES_HEADER: [&str; 6] = ["site_id", "x_m", "y_m", "period_start", "period_end", "no2_ppb"];
pub const ROADS_HEADER: [&str; 3] = ["segment_id", "adt", "wkt_linestring"];

const DATE_FMT: &str = "%Y-%m-%d";
const HOUR_FMT: &str = "%Y-%m-%dT%H:00";

#[derive(Debug, Clone, PartialEq)]
pub struct HourlyReading {
    pub timestamp: NaiveDateTime,
    pub no2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorStation {
    pub station_id: String,
    pub location: Point,
    /// Sorted by timestamp, at most one per hour.
    pub readings: Vec<HourlyReading>,
}

/// One period-averaged measurement at a site.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub period_start: NaiveDate,
    /// Inclusive.
    pub period_end: NaiveDate,
    pub value: f64,
}

impl Observation {
    pub fn days(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.period_start.iter_days().take_while(move |d| *d <= self.period_end)
    }

    pub fn n_days(&self) -> i64 {
        (self.period_end - self.period_start).num_days() + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Site {
    pub site_id: String,
    pub location: Point,
    /// Sorted by period start, non-overlapping.
    pub observations: Vec<Observation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadSegment {
    pub segment_id: String,
    pub vertices: Vec<Point>,
    pub adt: f64,
    length: f64,
}

impl RoadSegment {
    pub fn new(segment_id: impl Into<String>, vertices: Vec<Point>, adt: f64) -> Result<Self> {
        let segment_id = segment_id.into();
        if vertices.len() < 2 {
            return Err(Error::invalid(format!(
                "segment {segment_id}: polyline needs at least 2 vertices, got {}",
                vertices.len()
            )));
        }
        if vertices.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid(format!("segment {segment_id}: non-finite vertex")));
        }
        if !adt.is_finite() || adt < 0.0 {
            return Err(Error::invalid(format!(
                "segment {segment_id}: ADT must be finite and non-negative, got {adt}"
            )));
        }
        let length = polyline_length(&vertices);
        if !(length > 0.0) {
            return Err(Error::invalid(format!("segment {segment_id}: polyline has zero length")));
        }
        Ok(RoadSegment { segment_id, vertices, adt, length })
    }

    /// Polyline length in meters.
    pub fn length(&self) -> f64 {
        self.length
    }
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(input)
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn check_header(path: &Path, rdr: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers().map_err(|e| csv_error(path, e))?;
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: header.position().map_or(1, |p| p.line()),
            message: format!("expected header `{}`, got `{}`", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse { path: path.to_path_buf(), line, message: e.to_string() }
}

struct RowCtx<'a> {
    path: &'a Path,
    line: u64,
}

impl RowCtx<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse { path: self.path.to_path_buf(), line: self.line, message: message.into() }
    }

    fn float(&self, field: &str, name: &str) -> Result<f64> {
        let v: f64 = field.parse().map_err(|_| self.err(format!("{name}: cannot parse `{field}` as a number")))?;
        if !v.is_finite() {
            return Err(self.err(format!("{name}: value must be finite")));
        }
        Ok(v)
    }

    fn positive(&self, field: &str, name: &str) -> Result<f64> {
        let v = self.float(field, name)?;
        if v <= 0.0 {
            return Err(self.err(format!("{name}: value must be > 0, got {v}")));
        }
        Ok(v)
    }

    fn date(&self, field: &str, name: &str) -> Result<NaiveDate> {
        NaiveDate::parse_from_str(field, DATE_FMT)
            .map_err(|_| self.err(format!("{name}: expected YYYY-MM-DD, got `{field}`")))
    }

    fn id(&self, field: &str, name: &str) -> Result<String> {
        if field.is_empty() {
            return Err(self.err(format!("{name} is empty")));
        }
        Ok(field.to_string())
    }
}

/// Parses an ISO-8601 timestamp truncated to the hour.
pub fn parse_hour(s: &str) -> Option<NaiveDateTime> {
    let s = s.strip_suffix('Z').unwrap_or(s);
    let ts = ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .or_else(|| {
            // Bare `YYYY-MM-DDTHH`.
            let (date, hour) = s.split_once('T')?;
            let date = NaiveDate::parse_from_str(date, DATE_FMT).ok()?;
            let hour: u32 = hour.parse().ok()?;
            date.and_hms_opt(hour, 0, 0)
        })?;
    (ts.minute() == 0 && ts.second() == 0).then_some(ts)
}

pub fn format_hour(ts: &NaiveDateTime) -> String {
    ts.format(HOUR_FMT).to_string()
}

pub fn load_monitors(path: impl AsRef<Path>) -> Result<Vec<MonitorStation>> {
    let path = path.as_ref();
    read_monitors(open(path)?, path)
}

pub fn read_monitors<R: Read>(input: R, path: &Path) -> Result<Vec<MonitorStation>> {
    let mut rdr = reader(input);
    check_header(path, &mut rdr, &MONITORS_HEADER)?;

    let mut stations: Vec<MonitorStation> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut seen: HashMap<(usize, NaiveDateTime), u64> = HashMap::new();

    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let ctx = RowCtx { path, line: rec.position().map_or(0, |p| p.line()) };
        if rec.len() != MONITORS_HEADER.len() {
            return Err(ctx.err(format!("expected {} fields, got {}", MONITORS_HEADER.len(), rec.len())));
        }
        let id = ctx.id(&rec[0], "station_id")?;
        let location = Point::new(ctx.float(&rec[1], "x_m")?, ctx.float(&rec[2], "y_m")?);
        let timestamp = parse_hour(&rec[3])
            .ok_or_else(|| ctx.err(format!("timestamp: expected an ISO-8601 hour, got `{}`", &rec[3])))?;
        let no2 = ctx.positive(&rec[4], "no2_ppb")?;

        let idx = match index.entry(id) {
            Entry::Occupied(e) => {
                let idx = *e.get();
                if stations[idx].location != location {
                    return Err(ctx.err(format!("station {} has inconsistent coordinates", stations[idx].station_id)));
                }
                idx
            }
            Entry::Vacant(e) => {
                stations.push(MonitorStation { station_id: e.key().clone(), location, readings: Vec::new() });
                *e.insert(stations.len() - 1)
            }
        };
        if let Some(first) = seen.insert((idx, timestamp), ctx.line) {
            return Err(ctx.err(format!(
                "duplicate reading for station {} at {} (first seen on line {first})",
                stations[idx].station_id,
                format_hour(&timestamp)
            )));
        }
        stations[idx].readings.push(HourlyReading { timestamp, no2 });
    }
    for s in &mut stations {
        s.readings.sort_by_key(|r| r.timestamp);
    }
    Ok(stations)
}

pub fn load_sites(path: impl AsRef<Path>) -> Result<Vec<Site>> {
    let path = path.as_ref();
    read_sites(open(path)?, path)
}

pub fn read_sites<R: Read>(input: R, path: &Path) -> Result<Vec<Site>> {
    let mut rdr = reader(input);
    check_header(path, &mut rdr, &SITES_HEADER)?;

    let mut sites: Vec<Site> = Vec::new();
    let mut lines: Vec<Vec<u64>> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();

    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let ctx = RowCtx { path, line: rec.position().map_or(0, |p| p.line()) };
        if rec.len() != SITES_HEADER.len() {
            return Err(ctx.err(format!("expected {} fields, got {}", SITES_HEADER.len(), rec.len())));
        }
        let id = ctx.id(&rec[0], "site_id")?;
        let location = Point::new(ctx.float(&rec[1], "x_m")?, ctx.float(&rec[2], "y_m")?);
        let period_start = ctx.date(&rec[3], "period_start")?;
        let period_end = ctx.date(&rec[4], "period_end")?;
        if period_start > period_end {
            return Err(ctx.err(format!("period_start {period_start} is after period_end {period_end}")));
        }
        let value = ctx.positive(&rec[5], "no2_ppb")?;

        let idx = match index.entry(id) {
            Entry::Occupied(e) => {
                let idx = *e.get();
                if sites[idx].location != location {
                    return Err(ctx.err(format!("site {} has inconsistent coordinates", sites[idx].site_id)));
                }
                idx
            }
            Entry::Vacant(e) => {
                sites.push(Site { site_id: e.key().clone(), location, observations: Vec::new() });
                lines.push(Vec::new());
                *e.insert(sites.len() - 1)
            }
        };
        sites[idx].observations.push(Observation { period_start, period_end, value });
        lines[idx].push(ctx.line);
    }

    for (site, lines) in sites.iter_mut().zip(&lines) {
        let mut order: Vec<usize> = (0..site.observations.len()).collect();
        order.sort_by_key(|&i| site.observations[i].period_start);
        for w in order.windows(2) {
            let (a, b) = (&site.observations[w[0]], &site.observations[w[1]]);
            if b.period_start <= a.period_end {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lines[w[0]].max(lines[w[1]]),
                    message: format!(
                        "site {}: period {}..{} overlaps {}..{}",
                        site.site_id, b.period_start, b.period_end, a.period_start, a.period_end
                    ),
                });
            }
        }
        site.observations = order.iter().map(|&i| site.observations[i].clone()).collect();
    }
    Ok(sites)
}

pub fn load_roads(path: impl AsRef<Path>) -> Result<Vec<RoadSegment>> {
    let path = path.as_ref();
    read_roads(open(path)?, path)
}

pub fn read_roads<R: Read>(input: R, path: &Path) -> Result<Vec<RoadSegment>> {
    let mut rdr = reader(input);
    check_header(path, &mut rdr, &ROADS_HEADER)?;

    let mut roads = Vec::new();
    let mut ids: HashMap<String, u64> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let ctx = RowCtx { path, line: rec.position().map_or(0, |p| p.line()) };
        if rec.len() != ROADS_HEADER.len() {
            return Err(ctx.err(format!("expected {} fields, got {}", ROADS_HEADER.len(), rec.len())));
        }
        let id = ctx.id(&rec[0], "segment_id")?;
        if let Some(first) = ids.insert(id.clone(), ctx.line) {
            return Err(ctx.err(format!("duplicate segment_id {id} (first seen on line {first})")));
        }
        let adt = ctx.float(&rec[1], "adt")?;
        let vertices = parse_wkt_linestring(&rec[2]).map_err(|m| ctx.err(m))?;
        let seg = RoadSegment::new(id, vertices, adt).map_err(|e| ctx.err(e.to_string()))?;
        roads.push(seg);
    }
    Ok(roads)
}

/// Parses `LINESTRING (x1 y1, x2 y2, ...)`.
pub fn parse_wkt_linestring(s: &str) -> std::result::Result<Vec<Point>, String> {
    let body = s.trim();
    let rest = body
        .get(..10)
        .filter(|p| p.eq_ignore_ascii_case("LINESTRING"))
        .map(|_| body[10..].trim_start())
        .ok_or_else(|| format!("expected WKT LINESTRING, got `{s}`"))?;
    let inner = rest
        .strip_prefix('(')
        .and_then(|r| r.trim_end().strip_suffix(')'))
        .ok_or_else(|| format!("malformed LINESTRING coordinates in `{s}`"))?;
    let mut pts = Vec::new();
    for pair in inner.split(',') {
        let mut it = pair.split_whitespace();
        let (Some(x), Some(y), None) = (it.next(), it.next(), it.next()) else {
            return Err(format!("expected `x y` coordinate pair, got `{}`", pair.trim()));
        };
        let x: f64 = x.parse().map_err(|_| format!("bad coordinate `{x}`"))?;
        let y: f64 = y.parse().map_err(|_| format!("bad coordinate `{y}`"))?;
        pts.push(Point::new(x, y));
    }
    Ok(pts)
}

pub fn format_wkt_linestring(vertices: &[Point]) -> String {
    let coords: Vec<String> = vertices.iter().map(|p| format!("{} {}", p.x, p.y)).collect();
    format!("LINESTRING ({})", coords.join(", "))
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().from_writer(out)
}

fn write_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io("<output>", io),
        other => Error::invalid(format!("csv write failed: {other:?}")),
    }
}

pub fn write_monitors<W: Write>(out: W, stations: &[MonitorStation]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(MONITORS_HEADER).map_err(write_err)?;
    for s in stations {
        let (x, y) = (s.location.x.to_string(), s.location.y.to_string());
        for r in &s.readings {
            w.write_record([s.station_id.as_str(), &x, &y, &format_hour(&r.timestamp), &r.no2.to_string()])
                .map_err(write_err)?;
        }
    }
    w.flush().map_err(|e| Error::io("<output>", e))
}

pub fn write_sites<W: Write>(out: W, sites: &[Site]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(SITES_HEADER).map_err(write_err)?;
    for s in sites {
        let (x, y) = (s.location.x.to_string(), s.location.y.to_string());
        for o in &s.observations {
            w.write_record([
                s.site_id.as_str(),
                &x,
                &y,
                &o.period_start.format(DATE_FMT).to_string(),
                &o.period_end.format(DATE_FMT).to_string(),
                &o.value.to_string(),
            ])
            .map_err(write_err)?;
        }
    }
    w.flush().map_err(|e| Error::io("<output>", e))
}

pub fn write_roads<W: Write>(out: W, roads: &[RoadSegment]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(ROADS_HEADER).map_err(write_err)?;
    for r in roads {
        w.write_record([r.segment_id.as_str(), &r.adt.to_string(), &format_wkt_linestring(&r.vertices)])
            .map_err(write_err)?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))
}
