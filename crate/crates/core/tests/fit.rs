mod common;

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use common::*;
use no2est::error::Error;
use no2est::fit::*;
use no2est::geom::Point;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_rows(r: &mut ChaCha8Rng, n: usize, k: usize, sites: usize) -> Vec<DesignRow> {
    let beta: Vec<f64> = (0..k + 2).map(|_| r.random_range(-2.0..2.0)).collect();
    (0..n)
        .map(|i| {
            let x: f64 = r.random_range(1.0..4.0);
            let w: Vec<f64> = (0..k).map(|_| r.random_range(0.0..3.0)).collect();
            let e: f64 = r.sample(StandardNormal);
            let y = beta[0] + beta[1] * x + w.iter().zip(&beta[2..]).map(|(a, b)| a * b).sum::<f64>() + 0.3 * e;
            DesignRow { site_id: format!("s{}", i % sites), y, x, w }
        })
        .collect()
}

#[test]
fn linear_matches_normal_equations() {
    let mut r = rng(1);
    for k in 0..5 {
        let rows = random_rows(&mut r, 50, k, 50);
        let fit = fit_linear(&rows).unwrap();
        let y: Vec<f64> = rows.iter().map(|r| r.y).collect();
        let o = normal_equations(&design_matrix(&rows), &y);
        for (c, (b, se)) in fit.coefficients.iter().zip(o.coef.iter().zip(&o.se)) {
            assert!(rel_close(c.estimate, *b, 1e-8), "{} {b}", c.estimate);
            assert!(rel_close(c.std_error, *se, 1e-8));
        }
        assert!(rel_close(fit.r2, o.r2, 1e-8));
        assert!(rel_close(fit.adjusted_r2, o.adj_r2, 1e-8));
        assert!(rel_close(fit.sigma2, o.sigma2, 1e-8));
        assert_eq!(fit.df_resid, 50 - (k + 2));
    }
}

#[test]
fn exact_line_is_recovered() {
    let rows: Vec<DesignRow> = (0..10)
        .map(|i| DesignRow { site_id: format!("s{i}"), y: 1.0 + 2.0 * i as f64, x: i as f64, w: vec![] })
        .collect();
    let fit = fit_linear(&rows).unwrap();
    assert!((fit.alpha0() - 1.0).abs() < 1e-12);
    assert!((fit.alpha1() - 2.0).abs() < 1e-12);
    assert!(fit.sigma2 < 1e-20);
    assert!((fit.r2 - 1.0).abs() < 1e-12);
}

#[test]
fn duplicate_column_is_rank_deficient() {
    let mut rows = random_rows(&mut rng(2), 30, 1, 30);
    for r in rows.iter_mut() {
        let w = r.w[0];
        r.w.push(w);
    }
    match fit_linear(&rows) {
        Err(Error::RankDeficient { columns }) => assert_eq!(columns, vec!["gamma_2".to_string()]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn residuals_orthogonal_to_columns() {
    let rows = random_rows(&mut rng(3), 80, 3, 80);
    let x = DMatrix::from_row_iterator(80, 5, design_matrix(&rows).into_iter().flatten());
    let y = DVector::from_iterator(80, rows.iter().map(|r| r.y));
    let names: Vec<String> = (0..5).map(|i| format!("c{i}")).collect();
    let f = ols(&x, &y, &names).unwrap();
    let xr = x.tr_mul(&f.residuals);
    for v in xr.iter() {
        assert!(v.abs() < 1e-9, "{xr}");
    }
    assert!((f.residuals.sum()).abs() < 1e-9);
}

/// Site-clustered rows with a known between-site variance.
fn clustered(seed: u64, sites: usize, per: usize, sigma_b: f64, sigma_y: f64) -> Vec<DesignRow> {
    let mut r = rng(seed);
    let mut rows = Vec::new();
    for s in 0..sites {
        let b = sigma_b * r.sample::<f64, _>(StandardNormal);
        let w = r.random_range(0.0..2.0);
        for _ in 0..per {
            let x: f64 = r.random_range(1.0..4.0);
            let e: f64 = r.sample(StandardNormal);
            rows.push(DesignRow {
                site_id: format!("s{s}"),
                y: 0.5 + 0.8 * x + 0.3 * w + b + sigma_y * e,
                x,
                w: vec![w],
            });
        }
    }
    rows
}

#[test]
fn no_site_effect_reduces_to_ols() {
    // Noise with zero mean within each site leaves nothing for sigma_b2.
    let mut rows = clustered(4, 40, 4, 0.0, 0.2);
    for s in 0..40 {
        let m = rows[s * 4..s * 4 + 4].iter().map(|r| r.y - 0.5 - 0.8 * r.x - 0.3 * r.w[0]).sum::<f64>() / 4.0;
        for r in rows[s * 4..s * 4 + 4].iter_mut() {
            r.y -= m;
        }
    }
    let mixed = fit_longitudinal(&rows, VarianceMethod::Ml).unwrap();
    let lin = fit_linear(&rows).unwrap();
    assert!(mixed.sigma_b2 < 1e-3, "{}", mixed.sigma_b2);
    for (a, b) in mixed.coefficients.iter().zip(&lin.coefficients) {
        assert!((a.estimate - b.estimate).abs() < 1e-4, "{} {}", a.estimate, b.estimate);
    }
}

/// Profile log-likelihood of the random-intercept model at `lambda =
/// sigma_b2 / sigma_y2`, from dense matrices.
fn dense_profile(rows: &[DesignRow], lambda: f64) -> (f64, Vec<f64>, f64) {
    let n = rows.len();
    let w: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (i == j) as u8 as f64 + if rows[i].site_id == rows[j].site_id { lambda } else { 0.0 })
                .collect()
        })
        .collect();
    let x = design_matrix(rows);
    let y: Vec<f64> = rows.iter().map(|r| r.y).collect();
    let (beta, _, winv) = gls(&x, &y, &w);
    let r: Vec<f64> = y.iter().zip(mat_vec(&x, &beta)).map(|(a, b)| a - b).collect();
    let q: f64 = r.iter().zip(mat_vec(&winv, &r)).map(|(a, b)| a * b).sum();
    let s2 = q / n as f64;
    let nf = n as f64;
    let ll = -0.5 * (nf * (2.0 * std::f64::consts::PI).ln() + nf * s2.ln() + log_det(&w) + nf);
    (ll, beta, s2)
}

#[test]
fn ml_matches_grid_search() {
    let rows = clustered(5, 6, 3, 0.8, 0.3);
    let fit = fit_longitudinal(&rows, VarianceMethod::Ml).unwrap();

    let mut best = (f64::NEG_INFINITY, 0.0);
    let mut t = -12.0;
    while t <= 8.0 {
        let ll = dense_profile(&rows, f64::exp(t)).0;
        if ll > best.0 {
            best = (ll, t);
        }
        t += 0.01;
    }
    // Golden-section refinement inside the winning grid cell.
    let (mut a, mut b) = (best.1 - 0.01, best.1 + 0.01);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..80 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if dense_profile(&rows, c.exp()).0 > dense_profile(&rows, d.exp()).0 {
            b = d;
        } else {
            a = c;
        }
    }
    let lambda = (0.5 * (a + b)).exp();
    let (ll, beta, s2) = dense_profile(&rows, lambda);

    assert!((fit.log_likelihood - ll).abs() < 1e-6, "{} vs {ll}", fit.log_likelihood);
    assert!(rel_close(fit.sigma_y2, s2, 1e-4), "{} vs {s2}", fit.sigma_y2);
    assert!(rel_close(fit.sigma_b2, lambda * s2, 1e-4), "{} vs {}", fit.sigma_b2, lambda * s2);
    for (c, b) in fit.coefficients.iter().zip(&beta) {
        assert!((c.estimate - b).abs() < 1e-4);
    }
    let direct = log_likelihood(&rows, &beta, lambda * s2, s2).unwrap();
    assert!((direct - ll).abs() < 1e-8);
}

#[test]
fn ml_beats_independence() {
    for seed in 0..5 {
        let rows = clustered(10 + seed, 20, 4, 0.4, 0.3);
        let fit = fit_longitudinal(&rows, VarianceMethod::Ml).unwrap();
        let lin = fit_linear(&rows).unwrap();
        let n = rows.len() as f64;
        let ols_ml_s2 = lin.sigma2 * lin.df_resid as f64 / n;
        let ll0 =
            log_likelihood(&rows, &lin.coefficients.iter().map(|c| c.estimate).collect::<Vec<_>>(), 0.0, ols_ml_s2)
                .unwrap();
        assert!(fit.log_likelihood >= ll0 - 1e-9);
    }
}

#[test]
fn blups_shrink_site_mean_residuals() {
    let rows = clustered(6, 15, 4, 0.5, 0.4);
    let fit = fit_longitudinal(&rows, VarianceMethod::Ml).unwrap();
    let beta: Vec<f64> = fit.coefficients.iter().map(|c| c.estimate).collect();
    for s in 0..15 {
        let id = format!("s{s}");
        let mine: Vec<&DesignRow> = rows.iter().filter(|r| r.site_id == id).collect();
        let ni = mine.len() as f64;
        let rbar = mine.iter().map(|r| r.y - beta[0] - beta[1] * r.x - beta[2] * r.w[0]).sum::<f64>() / ni;
        let want = ni * fit.sigma_b2 / (ni * fit.sigma_b2 + fit.sigma_y2) * rbar;
        let got = fit.blups[&id];
        assert!((got - want).abs() < 1e-9);
        assert!(got.abs() <= rbar.abs());
    }
}

#[test]
fn reml_variance_exceeds_ml() {
    let rows = clustered(7, 12, 3, 0.5, 0.3);
    let ml = fit_longitudinal(&rows, VarianceMethod::Ml).unwrap();
    let reml = fit_longitudinal(&rows, VarianceMethod::Reml).unwrap();
    assert!(reml.sigma_b2 + reml.sigma_y2 > ml.sigma_b2 + ml.sigma_y2);
}

fn spatial_rows(seed: u64, sites: usize, per: usize, spacing_m: f64) -> (Vec<DesignRow>, HashMap<String, Point>) {
    let mut r = rng(seed);
    let mut rows = Vec::new();
    let mut loc = HashMap::new();
    let noise = Normal::new(0.0, 0.3).unwrap();
    for s in 0..sites {
        let id = format!("s{s}");
        loc.insert(
            id.clone(),
            Point::new(spacing_m * (s % 5) as f64, spacing_m * (s / 5) as f64 + r.random_range(0.0..10.0)),
        );
        let b = 0.5 * r.sample::<f64, _>(StandardNormal);
        for _ in 0..per {
            let x: f64 = r.random_range(1.0..4.0);
            rows.push(DesignRow { site_id: id.clone(), y: 1.0 + 0.7 * x + b + noise.sample(&mut r), x, w: vec![] });
        }
    }
    (rows, loc)
}

#[test]
fn fixed_variance_posterior_matches_gls() {
    let (rows, loc) = spatial_rows(8, 15, 3, 4000.0);
    let (sb2, sy2, phi) = (0.25, 0.09, 6.0);
    let cfg = McmcConfig {
        chains: 1,
        iterations: 4500,
        burn_in: 500,
        seed: 3,
        fixed: FixedParams { sigma_b2: Some(sb2), sigma_y2: Some(sy2), phi: Some(phi), beta: None },
        ..McmcConfig::default()
    };
    let post = fit_spatial(&rows, &loc, &cfg).unwrap();

    let n = rows.len();
    let v: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let d = loc[&rows[i].site_id].distance(&loc[&rows[j].site_id]) / 1000.0;
                    sb2 * (-d / phi).exp() + if i == j { sy2 } else { 0.0 }
                })
                .collect()
        })
        .collect();
    let x = design_matrix(&rows);
    let y: Vec<f64> = rows.iter().map(|r| r.y).collect();
    let (beta, cov, _) = gls(&x, &y, &v);

    let m = post.draws.len() as f64;
    for j in 0..2 {
        let vals: Vec<f64> = post.draws.iter().map(|d| d.beta[j]).collect();
        let mean = vals.iter().sum::<f64>() / m;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
        // Joint (beta, b) draws are exact given the fixed components, hence independent.
        let mcse = (cov[j][j] / m).sqrt();
        assert!((mean - beta[j]).abs() < 3.0 * mcse, "beta{j}: {mean} vs {} (mcse {mcse})", beta[j]);
        assert!((var / cov[j][j] - 1.0).abs() < 0.1, "var {var} vs {}", cov[j][j]);
    }
}

#[test]
fn distant_sites_are_uncorrelated() {
    // Sites 1000 km apart with phi = 5 km.
    let (rows, loc) = spatial_rows(9, 10, 3, 1_000_000.0);
    let cfg = McmcConfig {
        chains: 1,
        iterations: 4000,
        burn_in: 200,
        seed: 4,
        fixed: FixedParams { beta: Some(vec![1.0, 0.7]), sigma_b2: Some(0.25), sigma_y2: Some(0.09), phi: Some(5.0) },
        ..McmcConfig::default()
    };
    let post = fit_spatial(&rows, &loc, &cfg).unwrap();
    let a: Vec<f64> = post.draws.iter().map(|d| d.b[0]).collect();
    let b: Vec<f64> = post.draws.iter().map(|d| d.b[1]).collect();
    assert!(pearson(&a, &b).abs() < 0.1);
}

#[test]
fn same_seed_same_draws() {
    let (rows, loc) = spatial_rows(10, 12, 2, 3000.0);
    let cfg = McmcConfig { iterations: 300, burn_in: 100, seed: 42, ..McmcConfig::default() };
    let a = fit_spatial(&rows, &loc, &cfg).unwrap();
    let b = fit_spatial(&rows, &loc, &cfg).unwrap();
    assert_eq!(a.draws.len(), 400);
    for (x, y) in a.draws.iter().zip(&b.draws) {
        assert_eq!(
            x.beta.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            y.beta.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(x.phi.to_bits(), y.phi.to_bits());
        assert_eq!(
            x.b.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            y.b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
    let c = fit_spatial(&rows, &loc, &McmcConfig { seed: 43, ..cfg }).unwrap();
    assert_ne!(a.draws[50].phi, c.draws[50].phi);
}

#[test]
fn spatial_rejects_missing_location() {
    let (rows, mut loc) = spatial_rows(11, 5, 2, 3000.0);
    loc.remove("s3");
    assert!(fit_spatial(&rows, &loc, &McmcConfig::default()).is_err());
}

/// Two columns with sample correlation exactly `r`.
fn correlated_pair(n: usize, r: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut g = rng(seed);
    let mut z1: Vec<f64> = (0..n).map(|_| g.sample(StandardNormal)).collect();
    let mut z2: Vec<f64> = (0..n).map(|_| g.sample(StandardNormal)).collect();
    let center = |v: &mut Vec<f64>| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter_mut().for_each(|x| *x -= m);
    };
    center(&mut z1);
    center(&mut z2);
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let n1 = dot(&z1, &z1).sqrt();
    z1.iter_mut().for_each(|x| *x /= n1);
    let proj = dot(&z1, &z2);
    z2.iter_mut().zip(&z1).for_each(|(x, y)| *x -= proj * y);
    let n2 = dot(&z2, &z2).sqrt();
    z2.iter_mut().for_each(|x| *x /= n2);
    let b = z1.iter().zip(&z2).map(|(a, c)| r * a + (1.0 - r * r).sqrt() * c).collect();
    (z1, b)
}

#[test]
fn vif_at_correlation_point_eight() {
    let (a, b) = correlated_pair(200, 0.8, 12);
    assert!((pearson(&a, &b) - 0.8).abs() < 1e-12);
    let v = vif_columns(&[a, b]).unwrap();
    for x in v {
        assert!((x - 1.0 / 0.36).abs() < 1e-4, "{x}");
    }
}

#[test]
fn five_ring_vif_matches_auxiliary_regressions() {
    let mut g = rng(13);
    let n = 120;
    let base: Vec<f64> = (0..n).map(|_| g.random_range(0.0..1.0)).collect();
    let rows: Vec<DesignRow> = (0..n)
        .map(|i| DesignRow {
            site_id: format!("s{i}"),
            y: 0.0,
            x: g.random_range(1.0..3.0),
            w: (0..5).map(|k| base[i] * (k + 1) as f64 + g.random_range(0.0..1.0)).collect(),
        })
        .collect();
    let got = vif(&rows).unwrap();
    assert_eq!(got.len(), 5);
    for (j, &g) in got.iter().enumerate() {
        let target: Vec<f64> = rows.iter().map(|r| r.w[j]).collect();
        let others: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let mut v = vec![1.0, r.x];
                v.extend(r.w.iter().enumerate().filter(|(k, _)| *k != j).map(|(_, w)| *w));
                v
            })
            .collect();
        let o = normal_equations(&others, &target);
        assert!(rel_close(g, 1.0 / (1.0 - o.r2), 1e-8), "{g} vs {}", 1.0 / (1.0 - o.r2));
    }
}
