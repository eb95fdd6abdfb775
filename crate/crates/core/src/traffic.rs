//! Traffic exposure covariates.
//!
//! Road polylines are cut into short equal-length pieces; each piece is a
//! point source of strength ADT × length located at its midpoint. A site's
//! exposure in ring k is the summed strength of the pieces whose midpoint lies
//! in the distance band `(D[k-1], D[k]]`, i.e. a step dispersion function.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{points_at_arc_lengths, Point};
use crate::ingest::{RoadSegment, Site};

pub const DEFAULT_TARGET_LEN_M: f64 = 50.0;
pub const DEFAULT_EXPOSURE_SCALE: f64 = 1e6;

/// Per-term contributions are rounded to multiples of 2^-16 vehicle-meters/day
/// and summed as integers, so ring totals add up exactly.
const QUANTA_PER_UNIT: f64 = 65536.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SubSegment {
    pub midpoint: Point,
    pub length: f64,
    pub adt: f64,
    pub parent_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct RingSpec {
    boundaries: Vec<f64>,
}

impl RingSpec {
    /// `boundaries` is `[0, D1, ..., DK]`, strictly ascending with `K >= 1`.
    pub fn new(boundaries: Vec<f64>) -> Result<Self> {
        if boundaries.len() < 2 {
            return Err(Error::invalid("ring spec needs at least two boundaries"));
        }
        if boundaries[0] != 0.0 {
            return Err(Error::invalid("ring spec must start at 0"));
        }
        if boundaries.iter().any(|b| !b.is_finite()) || boundaries.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!(
                "ring boundaries must be finite and strictly ascending: {boundaries:?}"
            )));
        }
        Ok(RingSpec { boundaries })
    }

    /// Everything within `outer` meters counts equally.
    pub fn single_step(outer: f64) -> Result<Self> {
        RingSpec::new(vec![0.0, outer])
    }

    /// Steps at 400, 800, 1200, 1600 and 2000 m.
    pub fn multi_step() -> Self {
        RingSpec { boundaries: vec![0.0, 400.0, 800.0, 1200.0, 1600.0, 2000.0] }
    }

    pub fn default_single() -> Self {
        RingSpec { boundaries: vec![0.0, 2000.0] }
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn n_rings(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn outer(&self) -> f64 {
        *self.boundaries.last().expect("non-empty")
    }

    /// Ring index for a distance; ties go to the inner ring and `d = 0` is ring 0.
    pub fn ring_of(&self, d: f64) -> Option<usize> {
        if d > self.outer() {
            return None;
        }
        // First boundary index with D >= d, skipping D0 = 0.
        let idx = self.boundaries[1..].partition_point(|&b| b < d);
        Some(idx)
    }
}

impl TryFrom<Vec<f64>> for RingSpec {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        RingSpec::new(v)
    }
}

impl From<RingSpec> for Vec<f64> {
    fn from(r: RingSpec) -> Self {
        r.boundaries
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExposureVector {
    pub site_id: String,
    pub w: Vec<f64>,
}

/// Splits a segment into `ceil(L / target_len)` pieces of equal arc length.
pub fn subdivide(segment: &RoadSegment, target_len: f64) -> Result<Vec<SubSegment>> {
    if !(target_len > 0.0) || !target_len.is_finite() {
        return Err(Error::invalid(format!("target length must be positive, got {target_len}")));
    }
    let total = segment.length();
    let n = piece_count(total, target_len);
    let piece = total / n as f64;
    let stations: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) * piece).collect();
    let mids = points_at_arc_lengths(&segment.vertices, &stations);
    Ok(mids
        .into_iter()
        .map(|midpoint| SubSegment { midpoint, length: piece, adt: segment.adt, parent_id: segment.segment_id.clone() })
        .collect())
}

fn piece_count(total: f64, target: f64) -> usize {
    let n = (total / target).ceil().max(1.0) as usize;
    // Guard against ratios like 100.00000000000001 from rounding.
    if n > 1 && total / ((n - 1) as f64) <= target * (1.0 + 1e-12) {
        n - 1
    } else {
        n
    }
}

pub fn subdivide_all(segments: &[RoadSegment], target_len: f64) -> Result<Vec<SubSegment>> {
    let mut out = Vec::new();
    for s in segments {
        out.extend(subdivide(s, target_len)?);
    }
    Ok(out)
}

/// Raw ring exposures (vehicle-meters/day) at an arbitrary location.
pub fn exposure_at(location: Point, subsegments: &[SubSegment], rings: &RingSpec) -> Vec<f64> {
    let mut acc = vec![0i128; rings.n_rings()];
    let outer2 = rings.outer() * rings.outer();
    for s in subsegments {
        let dx = s.midpoint.x - location.x;
        let dy = s.midpoint.y - location.y;
        if dx * dx + dy * dy > outer2 * (1.0 + 1e-9) {
            continue;
        }
        let d = location.distance(&s.midpoint);
        if let Some(k) = rings.ring_of(d) {
            acc[k] += (s.adt * s.length * QUANTA_PER_UNIT).round() as i128;
        }
    }
    acc.into_iter().map(|q| q as f64 / QUANTA_PER_UNIT).collect()
}

pub fn exposure(site: &Site, subsegments: &[SubSegment], rings: &RingSpec) -> ExposureVector {
    ExposureVector { site_id: site.site_id.clone(), w: exposure_at(site.location, subsegments, rings) }
}

/// Subdivides the network once, then computes every site's exposure divided
/// by `exposure_scale`.
pub fn exposure_matrix(
    sites: &[Site],
    segments: &[RoadSegment],
    rings: &RingSpec,
    target_len: f64,
    exposure_scale: f64,
) -> Result<Vec<ExposureVector>> {
    if !(exposure_scale > 0.0) || !exposure_scale.is_finite() {
        return Err(Error::invalid(format!("exposure scale must be positive, got {exposure_scale}")));
    }
    let subs = subdivide_all(segments, target_len)?;
    Ok(sites
        .iter()
        .map(|site| {
            let mut v = exposure(site, &subs, rings);
            for w in &mut v.w {
                *w /= exposure_scale;
            }
            v
        })
        .collect())
}
