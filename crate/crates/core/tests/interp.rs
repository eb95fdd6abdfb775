use std::collections::BTreeMap;

use chrono::{Days, NaiveDate};
use proptest::prelude::*;

use no2est::error::Error;
use no2est::geom::Point;
use no2est::ingest::{HourlyReading, MonitorStation, Observation, Site};
use no2est::interp::*;

fn d0() -> NaiveDate {
    NaiveDate::from_ymd_opt(2006, 6, 1).unwrap()
}

fn series(id: &str, x: f64, y: f64, values: &[(NaiveDate, f64)]) -> DailySeries {
    DailySeries { station_id: id.into(), location: Point::new(x, y), values: values.iter().copied().collect() }
}

fn four_stations(days: u64) -> Vec<DailySeries> {
    let corners = [(0.0, 0.0), (90_000.0, 0.0), (0.0, 60_000.0), (90_000.0, 60_000.0)];
    corners
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| {
            let v: Vec<(NaiveDate, f64)> =
                (0..days).map(|k| (d0() + Days::new(k), 5.0 + i as f64 * 3.0 + (k % 7) as f64)).collect();
            series(&format!("M{i}"), x, y, &v)
        })
        .collect()
}

/// Weighted mean written out longhand, no shared code with the library.
fn oracle(at: Point, stations: &[DailySeries], day: NaiveDate, power: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for s in stations {
        if let Some(v) = s.values.get(&day) {
            let d = ((at.x - s.location.x).powi(2) + (at.y - s.location.y).powi(2)).sqrt();
            num += v / d.powf(power);
            den += 1.0 / d.powf(power);
        }
    }
    num / den
}

#[test]
fn four_station_weighted_mean_by_hand() {
    let day = d0();
    let st = vec![
        series("a", 0.0, 0.0, &[(day, 10.0)]),
        series("b", 3000.0, 0.0, &[(day, 20.0)]),
        series("c", 0.0, 4000.0, &[(day, 30.0)]),
        series("d", 3000.0, 4000.0, &[(day, 40.0)]),
    ];
    // Site at (0, 0) is collocated; site at (1500, 2000) is equidistant.
    assert_eq!(idw(Point::new(0.0, 0.0), &st, day, 1.0).unwrap(), 10.0);
    assert!((idw(Point::new(1500.0, 2000.0), &st, day, 1.0).unwrap() - 25.0).abs() < 1e-12);
    // (3000, 0): distances 3000, 0 -> collocated with b.
    // (0, 1000): distances 1000, sqrt(9e6+1e6), 3000, sqrt(9e6+9e6).
    let w = [1.0 / 1000.0, 1.0 / 10_000_000f64.sqrt(), 1.0 / 3000.0, 1.0 / 18_000_000f64.sqrt()];
    let want = (10.0 * w[0] + 20.0 * w[1] + 30.0 * w[2] + 40.0 * w[3]) / w.iter().sum::<f64>();
    assert!((idw(Point::new(0.0, 1000.0), &st, day, 1.0).unwrap() - want).abs() < 1e-12);
}

#[test]
fn missing_station_days_are_skipped() {
    let day = d0();
    let st = vec![series("a", 0.0, 0.0, &[(day, 10.0)]), series("b", 100.0, 0.0, &[])];
    assert_eq!(idw(Point::new(50.0, 0.0), &st, day, 1.0).unwrap(), 10.0);
    let other = day + Days::new(1);
    assert!(matches!(idw(Point::new(50.0, 0.0), &st, other, 1.0), Err(Error::UncoverableDay(d)) if d == other));
}

#[test]
fn period_average_matches_day_loop() {
    let st = four_stations(120);
    let at = Point::new(31_000.0, 17_500.0);
    for len in [30u64, 90] {
        let site = Site {
            site_id: "s".into(),
            location: at,
            observations: vec![Observation {
                period_start: d0() + Days::new(3),
                period_end: d0() + Days::new(3 + len - 1),
                value: 10.0,
            }],
        };
        let cov = period_covariates(std::slice::from_ref(&site), &st, 1.0).unwrap();
        let mut sum = 0.0;
        for k in 0..len {
            sum += oracle(at, &st, d0() + Days::new(3 + k), 1.0);
        }
        let u = sum / len as f64;
        assert!((cov[0].u - u).abs() <= 1e-12 * u);
        assert!((cov[0].x - u.ln()).abs() < 1e-12);
    }
}

#[test]
fn uncovered_dates_all_reported() {
    let st = four_stations(10);
    let site = Site {
        site_id: "far".into(),
        location: Point::new(1.0, 1.0),
        observations: vec![Observation {
            period_start: d0() + Days::new(8),
            period_end: d0() + Days::new(11),
            value: 1.0,
        }],
    };
    match period_covariates(&[site], &st, 1.0) {
        Err(Error::MissingDates { site_id, dates }) => {
            assert_eq!(site_id, "far");
            assert_eq!(dates, vec![d0() + Days::new(10), d0() + Days::new(11)]);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn daily_average_drops_short_days() {
    let base = d0().and_hms_opt(0, 0, 0).unwrap();
    let mut readings: Vec<HourlyReading> =
        (0..24).map(|h| HourlyReading { timestamp: base + chrono::Duration::hours(h), no2: h as f64 }).collect();
    readings.extend((0..17).map(|h| HourlyReading { timestamp: base + chrono::Duration::hours(24 + h), no2: 1.0 }));
    let st = MonitorStation { station_id: "A".into(), location: Point::new(0.0, 0.0), readings };
    let s = daily_average(&st, 18);
    assert_eq!(s.values.len(), 1);
    assert_eq!(s.values[&d0()], 11.5);
    assert_eq!(daily_average(&st, 17).values.len(), 2);
}

/// Stations as (x, y, value), plus a query point.
type Layout = (Vec<(f64, f64, f64)>, (f64, f64));

fn layout() -> impl Strategy<Value = Layout> {
    (prop::collection::vec((-1e5..1e5f64, -1e5..1e5f64, 0.1..200.0f64), 1..8), (-1e5..1e5f64, -1e5..1e5f64))
}

fn build(st: &[(f64, f64, f64)], scale: f64) -> Vec<DailySeries> {
    st.iter().enumerate().map(|(i, &(x, y, v))| series(&format!("m{i}"), x * scale, y * scale, &[(d0(), v)])).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn within_station_range((st, (x, y)) in layout(), power in 0.5..3.0f64) {
        let v = idw(Point::new(x, y), &build(&st, 1.0), d0(), power).unwrap();
        let lo = st.iter().map(|s| s.2).fold(f64::INFINITY, f64::min);
        let hi = st.iter().map(|s| s.2).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(v >= lo * (1.0 - 1e-12) && v <= hi * (1.0 + 1e-12));
    }

    #[test]
    fn scaling_all_distances_changes_nothing((st, (x, y)) in layout(), scale in 0.01..100.0f64) {
        let a = idw(Point::new(x, y), &build(&st, 1.0), d0(), 1.0).unwrap();
        let b = idw(Point::new(x * scale, y * scale), &build(&st, scale), d0(), 1.0).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs());
    }

    #[test]
    fn constant_field_is_reproduced((st, (x, y)) in layout(), c in 0.1..100.0f64) {
        let flat: Vec<(f64, f64, f64)> = st.iter().map(|s| (s.0, s.1, c)).collect();
        let v = idw(Point::new(x, y), &build(&flat, 1.0), d0(), 1.0).unwrap();
        prop_assert!((v - c).abs() <= 1e-12 * c);
    }

    #[test]
    fn matches_longhand_oracle((st, (x, y)) in layout()) {
        let stations = build(&st, 1.0);
        let at = Point::new(x, y);
        let got = idw(at, &stations, d0(), 1.0).unwrap();
        let want = oracle(at, &stations, d0(), 1.0);
        prop_assert!((got - want).abs() <= 1e-12 * want.abs());
    }
}

#[test]
fn site_daily_covers_every_period_day() {
    let st = four_stations(60);
    let site = Site {
        site_id: "s".into(),
        location: Point::new(500.0, 500.0),
        observations: vec![
            Observation { period_start: d0(), period_end: d0() + Days::new(4), value: 1.0 },
            Observation { period_start: d0() + Days::new(20), period_end: d0() + Days::new(21), value: 1.0 },
        ],
    };
    let daily: BTreeMap<NaiveDate, f64> = site_daily_idw(&site, &st, 1.0).unwrap().into_iter().collect();
    assert_eq!(daily.len(), 7);
    assert!(daily.contains_key(&(d0() + Days::new(21))));
}
