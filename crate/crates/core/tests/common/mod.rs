//! Independent reference implementations used as test oracles. Nothing here
//! calls into the library's numerics.

#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::BTreeMap;

use no2est::fit::DesignRow;
use no2est::geom::Point;
use no2est::ingest::{RoadSegment, Site};
use no2est::interp;
use no2est::pipeline;
use no2est::synth::Dataset;

/// Solves `a x = b` by Gauss-Jordan elimination with partial pivoting and
/// returns `(x, a^-1)`.
pub fn gauss_jordan(a: &[Vec<f64>], b: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = a[i].clone();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row.push(b[i]);
            row
        })
        .collect();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        m.swap(c, piv);
        let d = m[c][c];
        for v in m[c].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                if f != 0.0 {
                    for k in 0..=2 * n {
                        m[r][k] -= f * m[c][k];
                    }
                }
            }
        }
    }
    let x = m.iter().map(|r| r[2 * n]).collect();
    let inv = m.iter().map(|r| r[n..2 * n].to_vec()).collect();
    (x, inv)
}

pub struct OlsOracle {
    pub coef: Vec<f64>,
    pub se: Vec<f64>,
    pub r2: f64,
    pub adj_r2: f64,
    pub sigma2: f64,
}

/// OLS through the normal equations `X'X b = X'y`. `x` rows include the
/// intercept column.
pub fn normal_equations(x: &[Vec<f64>], y: &[f64]) -> OlsOracle {
    let n = x.len();
    let p = x[0].len();
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for (row, yi) in x.iter().zip(y) {
        for a in 0..p {
            xty[a] += row[a] * yi;
            for b in 0..p {
                xtx[a][b] += row[a] * row[b];
            }
        }
    }
    let (coef, inv) = gauss_jordan(&xtx, &xty);
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(row, yi)| {
            let fit: f64 = row.iter().zip(&coef).map(|(a, b)| a * b).sum();
            (yi - fit).powi(2)
        })
        .sum();
    let ybar = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
    let sigma2 = rss / (n - p) as f64;
    let r2 = 1.0 - rss / tss;
    OlsOracle {
        se: (0..p).map(|j| (sigma2 * inv[j][j]).sqrt()).collect(),
        coef,
        r2,
        adj_r2: 1.0 - (1.0 - r2) * (n - 1) as f64 / (n - p) as f64,
        sigma2,
    }
}

pub fn design_matrix(rows: &[DesignRow]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| {
            let mut v = vec![1.0, r.x];
            v.extend(&r.w);
            v
        })
        .collect()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300) || (a - b).abs() < 1e-300
}

/// Midpoints and lengths of `ceil(L / target)` equal pieces, walked along
/// the polyline directly.
pub fn brute_pieces(seg: &RoadSegment, target: f64) -> Vec<(Point, f64)> {
    let v = &seg.vertices;
    let legs: Vec<f64> = v.windows(2).map(|w| ((w[1].x - w[0].x).powi(2) + (w[1].y - w[0].y).powi(2)).sqrt()).collect();
    let total: f64 = legs.iter().sum();
    if total == 0.0 {
        return vec![];
    }
    let n = (total / target).ceil().max(1.0) as usize;
    let piece = total / n as f64;
    (0..n)
        .map(|i| {
            let mut s = (i as f64 + 0.5) * piece;
            let mut k = 0;
            while k + 1 < legs.len() && s > legs[k] {
                s -= legs[k];
                k += 1;
            }
            let t = if legs[k] > 0.0 { (s / legs[k]).min(1.0) } else { 0.0 };
            let p = Point::new(v[k].x + t * (v[k + 1].x - v[k].x), v[k].y + t * (v[k + 1].y - v[k].y));
            (p, piece)
        })
        .collect()
}

/// Exposure by looping over every piece of every segment; ring `k` holds
/// pieces with `D_{k-1} < d <= D_k`, and `d = 0` falls in the first ring.
pub fn brute_exposure(at: Point, roads: &[RoadSegment], boundaries: &[f64], target: f64) -> Vec<f64> {
    let k = boundaries.len() - 1;
    let mut w = vec![0.0; k];
    for seg in roads {
        for (mid, len) in brute_pieces(seg, target) {
            let d = ((mid.x - at.x).powi(2) + (mid.y - at.y).powi(2)).sqrt();
            if let Some(r) = (1..=k).find(|&r| d <= boundaries[r]) {
                w[r - 1] += seg.adt * len;
            }
        }
    }
    w
}

/// All-pairs semivariogram: `(bin index, sum of squared differences, pairs)`.
pub fn brute_semivariogram(values: &[(Point, f64)], width_km: f64, max_lag_km: f64) -> BTreeMap<usize, (f64, usize)> {
    let n_bins = (max_lag_km / width_km).ceil() as usize;
    let mut out: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for i in 0..values.len() {
        for j in (i + 1)..values.len() {
            let (a, va) = values[i];
            let (b, vb) = values[j];
            let d = ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt() / 1000.0;
            if d > max_lag_km {
                continue;
            }
            let h = ((d / width_km).floor() as usize).min(n_bins - 1);
            let e = out.entry(h).or_insert((0.0, 0));
            e.0 += (va - vb).powi(2);
            e.1 += 1;
        }
    }
    out
}

/// Design rows for a synthetic dataset's sites, built the way the pipeline
/// builds them.
pub fn design_for(ds: &Dataset, sites: &[Site]) -> Vec<DesignRow> {
    let sc = &ds.scenario;
    let daily = interp::daily_averages(&ds.monitors, sc.min_hours);
    let cov = interp::period_covariates(sites, &daily, sc.idw_power).unwrap();
    let refs: Vec<&Site> = sites.iter().collect();
    let exposures = ds.truth.exposure.clone().into_iter().collect();
    pipeline::design_rows(&refs, &cov, &exposures).unwrap()
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Log-determinant of a symmetric positive definite matrix by plain
/// Gaussian elimination.
pub fn log_det(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let mut m = a.to_vec();
    let mut acc = 0.0;
    for c in 0..n {
        let d = m[c][c];
        acc += d.ln();
        for r in (c + 1)..n {
            let f = m[r][c] / d;
            for k in c..n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    acc
}

pub fn mat_vec(a: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum()).collect()
}

/// Generalized least squares `(X'V^-1 X)^-1 X'V^-1 y` with dense inverses.
/// Returns `(beta, (X'V^-1 X)^-1, V^-1)`.
pub fn gls(x: &[Vec<f64>], y: &[f64], v: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = x.len();
    let p = x[0].len();
    let (_, vinv) = gauss_jordan(v, &vec![0.0; n]);
    let mut a = vec![vec![0.0; p]; p];
    let mut b = vec![0.0; p];
    for i in 0..n {
        for j in 0..n {
            let w = vinv[i][j];
            if w == 0.0 {
                continue;
            }
            for r in 0..p {
                b[r] += x[i][r] * w * y[j];
                for c in 0..p {
                    a[r][c] += x[i][r] * w * x[j][c];
                }
            }
        }
    }
    let (beta, cov) = gauss_jordan(&a, &b);
    (beta, cov, vinv)
}
