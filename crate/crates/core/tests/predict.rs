use std::collections::{BTreeMap, HashMap};

use chrono::{Days, NaiveDate};
use proptest::prelude::*;

use no2est::fit::{Coefficient, Draw, SpatialPosterior};
use no2est::geom::Point;
use no2est::ingest::{Observation, Site};
use no2est::predict::*;

fn posterior(sites: &[(&str, Point)], draws: &[(f64, Vec<f64>)], beta: &[f64]) -> SpatialPosterior {
    let mut post = SpatialPosterior {
        coefficient_names: (0..beta.len())
            .map(|i| match i {
                0 => "beta0".to_string(),
                1 => "beta1".to_string(),
                k => format!("gamma_{}", k - 1),
            })
            .collect(),
        site_ids: sites.iter().map(|s| s.0.to_string()).collect(),
        locations: sites.iter().map(|s| s.1).collect(),
        draws: draws
            .iter()
            .enumerate()
            .map(|(i, (phi, b))| Draw {
                chain: 0,
                iteration: i,
                beta: beta.to_vec(),
                sigma_b2: 0.3,
                sigma_y2: 0.1,
                phi: *phi,
                b: b.clone(),
            })
            .collect(),
        summaries: vec![],
        phi_acceptance: vec![0.4],
        phi_max: 50.0,
        distance_unit_m: 1000.0,
        warnings: vec![],
    };
    post.summarize();
    post
}

fn two_sites() -> Vec<(&'static str, Point)> {
    vec![("a", Point::new(0.0, 0.0)), ("b", Point::new(4000.0, 0.0))]
}

/// `c' Sigma^-1 b` for two learning sites, inverse written out.
fn krige2(at: Point, sites: &[(&str, Point)], phi: f64, b: &[f64]) -> f64 {
    let km = |p: Point, q: Point| ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt() / 1000.0;
    let rho = (-km(sites[0].1, sites[1].1) / phi).exp();
    let c1 = (-km(at, sites[0].1) / phi).exp();
    let c2 = (-km(at, sites[1].1) / phi).exp();
    let det = 1.0 - rho * rho;
    let a1 = (b[0] - rho * b[1]) / det;
    let a2 = (b[1] - rho * b[0]) / det;
    c1 * a1 + c2 * a2
}

#[test]
fn two_site_kriging_matches_hand_inverse() {
    let sites = two_sites();
    let draws = vec![(3.0, vec![0.4, -0.2]), (6.0, vec![0.1, 0.3]), (1.5, vec![-0.5, 0.2])];
    let model = FittedModel::Spatial(posterior(&sites, &draws, &[1.0, 0.8]));
    let pred = Predictor::new(&model).unwrap();
    for at in [Point::new(1000.0, 500.0), Point::new(2000.0, -3000.0), Point::new(-2500.0, 100.0)] {
        let want = draws.iter().map(|(phi, b)| krige2(at, &sites, *phi, b)).sum::<f64>() / 3.0;
        let t = Target { site_id: "new", location: Some(at) };
        let got = pred.random_intercept(&t, PredictionMode::Conditional).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        assert_eq!(pred.random_intercept(&t, PredictionMode::Marginal).unwrap(), 0.0);
    }
}

#[test]
fn coincident_location_returns_site_mean() {
    let sites = two_sites();
    let draws = vec![(3.0, vec![0.4, -0.2]), (6.0, vec![0.2, 0.3])];
    let pred = Predictor::new(&FittedModel::Spatial(posterior(&sites, &draws, &[1.0, 0.8]))).unwrap();
    let t = Target { site_id: "elsewhere", location: Some(Point::new(4000.0, 0.0)) };
    let b = pred.random_intercept(&t, PredictionMode::Conditional).unwrap();
    assert!((b - 0.05).abs() < 1e-12);
    // A learning site by id gets its posterior mean in either mode.
    let by_id = Target { site_id: "a", location: None };
    assert!((pred.random_intercept(&by_id, PredictionMode::Marginal).unwrap() - 0.3).abs() < 1e-12);
}

#[test]
fn far_targets_shrink_to_zero() {
    let sites = two_sites();
    let sigma_b = 0.3f64.sqrt();
    let draws = vec![(2.0, vec![0.5, -0.4])];
    let pred = Predictor::new(&FittedModel::Spatial(posterior(&sites, &draws, &[1.0, 0.8]))).unwrap();
    // 10 phi from the nearer learning site.
    let t = Target { site_id: "far", location: Some(Point::new(24_000.0, 0.0)) };
    assert!(pred.random_intercept(&t, PredictionMode::Conditional).unwrap().abs() < 0.01 * sigma_b);
}

#[test]
fn conditional_needs_coordinates() {
    let pred =
        Predictor::new(&FittedModel::Spatial(posterior(&two_sites(), &[(3.0, vec![0.1, 0.2])], &[1.0, 0.8]))).unwrap();
    let t = Target { site_id: "x", location: None };
    assert!(pred.random_intercept(&t, PredictionMode::Conditional).is_err());
    assert_eq!(pred.random_intercept(&t, PredictionMode::Marginal).unwrap(), 0.0);
}

#[test]
fn marginal_ignores_learning_set() {
    let beta = [0.9, 0.75, 0.2];
    let a = posterior(&two_sites(), &[(3.0, vec![0.4, -0.2])], &beta);
    let b = posterior(
        &[("p", Point::new(100.0, 100.0)), ("q", Point::new(9000.0, 0.0)), ("r", Point::new(0.0, 7000.0))],
        &[(8.0, vec![1.0, 1.0, -2.0]), (1.0, vec![0.0, 0.5, 0.5])],
        &beta,
    );
    let pa = Predictor::new(&FittedModel::Spatial(a)).unwrap();
    let pb = Predictor::new(&FittedModel::Spatial(b)).unwrap();
    let t = Target { site_id: "v", location: Some(Point::new(500.0, 500.0)) };
    let day = NaiveDate::from_ymd_opt(2007, 1, 1).unwrap();
    let ra = pa.predict_daily(&t, day, 14.0, &[2.5], PredictionMode::Marginal).unwrap();
    let rb = pb.predict_daily(&t, day, 14.0, &[2.5], PredictionMode::Marginal).unwrap();
    assert_eq!(ra, rb);
    assert!((ra.predicted_log - (0.9 + 0.75 * 14f64.ln() + 0.2 * 2.5)).abs() < 1e-12);
}

#[test]
fn exposure_dimension_is_checked() {
    let pred =
        Predictor::new(&FittedModel::Spatial(posterior(&two_sites(), &[(3.0, vec![0.1, 0.2])], &[1.0, 0.8, 0.1])))
            .unwrap();
    assert!(pred.linear_predictor(0.0, 10.0, &[]).is_err());
    assert!(pred.linear_predictor(0.0, 0.0, &[1.0]).is_err());
}

fn one_site(start: NaiveDate, days: u64) -> Site {
    Site {
        site_id: "v".into(),
        location: Point::new(2000.0, 2000.0),
        observations: vec![Observation { period_start: start, period_end: start + Days::new(days - 1), value: 10.0 }],
    }
}

type Setup = (Predictor, Vec<Site>, HashMap<String, BTreeMap<NaiveDate, f64>>, HashMap<String, Vec<f64>>);

fn setup(days: u64, value: impl Fn(u64) -> f64) -> Setup {
    let start = NaiveDate::from_ymd_opt(2006, 5, 1).unwrap();
    let pred =
        Predictor::new(&FittedModel::Spatial(posterior(&two_sites(), &[(3.0, vec![0.4, -0.2])], &[0.5, 0.9, 0.05])))
            .unwrap();
    let series: BTreeMap<NaiveDate, f64> = (0..days).map(|k| (start + Days::new(k), value(k))).collect();
    let idw = HashMap::from([("v".to_string(), series)]);
    let exp = HashMap::from([("v".to_string(), vec![3.0])]);
    (pred, vec![one_site(start, days)], idw, exp)
}

#[test]
fn one_day_period_is_that_day() {
    let (pred, sites, idw, exp) = setup(1, |_| 12.0);
    let out = predict_periods(&pred, &sites, &idw, &exp, PredictionMode::Conditional).unwrap();
    assert_eq!(out.periods.len(), 1);
    assert_eq!(out.daily.len(), 1);
    assert_eq!(out.periods[0].p, out.daily[0].predicted);
}

#[test]
fn constant_period_equals_daily_value() {
    let (pred, sites, idw, exp) = setup(28, |_| 12.0);
    let out = predict_periods(&pred, &sites, &idw, &exp, PredictionMode::Marginal).unwrap();
    let want = (0.5 + 0.9 * 12f64.ln() + 0.05 * 3.0f64).exp();
    assert!((out.periods[0].p - want).abs() < 1e-12 * want);
}

#[test]
fn ninety_day_period_matches_loop() {
    let f = |k: u64| 8.0 + 6.0 * ((k as f64) / 9.0).sin().abs();
    let (pred, sites, idw, exp) = setup(90, f);
    let out = predict_periods(&pred, &sites, &idw, &exp, PredictionMode::Marginal).unwrap();
    let mut sum = 0.0;
    for k in 0..90 {
        sum += (0.5 + 0.9 * f(k).ln() + 0.15).exp();
    }
    assert!((out.periods[0].p - sum / 90.0).abs() < 1e-12 * out.periods[0].p);
    assert_eq!(out.daily.len(), 90);
}

#[test]
fn gap_in_interpolated_series_is_reported() {
    let (pred, sites, mut idw, exp) = setup(10, |_| 5.0);
    let s = idw.get_mut("v").unwrap();
    let day = *s.keys().nth(4).unwrap();
    s.remove(&day);
    assert!(predict_periods(&pred, &sites, &idw, &exp, PredictionMode::Marginal).is_err());
}

proptest! {
    #[test]
    fn predictions_are_positive(
        values in prop::collection::vec(0.01..300.0f64, 1..60),
        b0 in -5.0..5.0f64,
        b1 in -2.0..2.0f64,
        g in -1e-3..1e-3f64,
        w in 0.0..1e3f64,
    ) {
        let start = NaiveDate::from_ymd_opt(2006, 5, 1).unwrap();
        let pred = Predictor::new(&FittedModel::Spatial(posterior(&two_sites(), &[(3.0, vec![0.4, -0.2])], &[b0, b1, g]))).unwrap();
        let series: BTreeMap<NaiveDate, f64> = values.iter().enumerate().map(|(k, v)| (start + Days::new(k as u64), *v)).collect();
        let idw = HashMap::from([("v".to_string(), series)]);
        let exp = HashMap::from([("v".to_string(), vec![w])]);
        let sites = vec![one_site(start, values.len() as u64)];
        for mode in [PredictionMode::Marginal, PredictionMode::Conditional] {
            let out = predict_periods(&pred, &sites, &idw, &exp, mode).unwrap();
            prop_assert!(out.periods[0].p > 0.0);
            prop_assert!(out.daily.iter().all(|d| d.predicted > 0.0 && (d.predicted.ln() - d.predicted_log).abs() < 1e-9));
        }
    }
}

#[test]
fn linear_model_has_no_intercept_term() {
    let coef = |n: &str, v: f64| Coefficient {
        name: n.into(),
        estimate: v,
        std_error: 0.1,
        t_value: v / 0.1,
        p_value: 0.5,
        df: 10.0,
    };
    let fit = no2est::fit::LinearFit {
        coefficients: vec![coef("alpha0", 0.3), coef("alpha1", 1.1)],
        sigma2: 0.1,
        r2: 0.5,
        adjusted_r2: 0.45,
        n_obs: 12,
        df_resid: 10,
    };
    let pred = Predictor::new(&FittedModel::Linear(fit)).unwrap();
    let t = Target { site_id: "a", location: None };
    assert_eq!(pred.random_intercept(&t, PredictionMode::Conditional).unwrap(), 0.0);
    assert!((pred.linear_predictor(0.0, 20.0, &[]).unwrap() - (0.3 + 1.1 * 20f64.ln())).abs() < 1e-12);
}
