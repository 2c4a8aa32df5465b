//! Configuration and objective-space types, Pareto dominance, and the
//! two-objective hypervolume indicator.
//!
//! Objectives are kept in raw units: accuracy is a fraction to maximize and
//! power is in watts to minimize.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frame-difference feature used by the on-camera filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Pixel,
    Area,
    Edge,
}

impl FilterKind {
    pub const ALL: [FilterKind; 3] = [FilterKind::Pixel, FilterKind::Area, FilterKind::Edge];

    pub fn as_str(self) -> &'static str {
        match self {
            FilterKind::Pixel => "pixel",
            FilterKind::Area => "area",
            FilterKind::Edge => "edge",
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pixel" => Ok(FilterKind::Pixel),
            "area" => Ok(FilterKind::Area),
            "edge" => Ok(FilterKind::Edge),
            other => Err(Error::invalid(format!("unknown filter feature {other:?}"))),
        }
    }
}

/// A point in the control space.
///
/// Equality, hashing and ordering are bitwise on the floating-point fields so
/// that configurations can key maps; grid values are always produced by the
/// same arithmetic and therefore compare equal.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Configuration {
    pub cpu_ghz: f64,
    pub filter: FilterKind,
    pub threshold: f64,
    pub bitrate_kbps: u32,
}

pub const MIN_BITRATE_KBPS: u32 = 100;
pub const MAX_BITRATE_KBPS: u32 = 3000;

impl Configuration {
    pub fn new(cpu_ghz: f64, filter: FilterKind, threshold: f64, bitrate_kbps: u32) -> Result<Self> {
        let cfg = Configuration {
            cpu_ghz,
            filter,
            threshold,
            bitrate_kbps,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Online-stage configuration: 1.5 GHz with the pixel filter.
    pub fn online(threshold: f64, bitrate_kbps: u32) -> Self {
        Configuration {
            cpu_ghz: 1.5,
            filter: FilterKind::Pixel,
            threshold,
            bitrate_kbps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::invalid(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        if !(MIN_BITRATE_KBPS..=MAX_BITRATE_KBPS).contains(&self.bitrate_kbps) {
            return Err(Error::invalid(format!(
                "bitrate {} kbps outside [{MIN_BITRATE_KBPS}, {MAX_BITRATE_KBPS}]",
                self.bitrate_kbps
            )));
        }
        if !(self.cpu_ghz.is_finite() && self.cpu_ghz > 0.0) {
            return Err(Error::invalid(format!("cpu frequency {} GHz", self.cpu_ghz)));
        }
        Ok(())
    }

    fn key(&self) -> (u64, FilterKind, u64, u32) {
        (
            self.cpu_ghz.to_bits(),
            self.filter,
            self.threshold.to_bits(),
            self.bitrate_kbps,
        )
    }
}

impl PartialEq for Configuration {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for Configuration {}

impl Hash for Configuration {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.key().hash(state);
    }
}

impl Ord for Configuration {
    /// Threshold, then bitrate, then frequency, then filter. This is also the
    /// tie-break order used when selecting among equally scored candidates.
    fn cmp(&self, other: &Self) -> Ordering {
        self.threshold
            .total_cmp(&other.threshold)
            .then(self.bitrate_kbps.cmp(&other.bitrate_kbps))
            .then(self.cpu_ghz.total_cmp(&other.cpu_ghz))
            .then(self.filter.cmp(&other.filter))
    }
}

impl PartialOrd for Configuration {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{} GHz, {}, {:.2}, {} kbps]",
            self.cpu_ghz, self.filter, self.threshold, self.bitrate_kbps
        )
    }
}

/// Measured or predicted objective values of one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectivePoint {
    pub accuracy: f64,
    pub power_w: f64,
}

impl ObjectivePoint {
    pub const fn new(accuracy: f64, power_w: f64) -> Self {
        ObjectivePoint { accuracy, power_w }
    }

    fn strictly_dominates_ref(&self, r: &ObjectivePoint) -> bool {
        self.accuracy > r.accuracy && self.power_w < r.power_w
    }
}

/// A configuration together with its objective values and the explore round
/// in which it was last evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub config: Configuration,
    pub point: ObjectivePoint,
    pub round: u64,
}

/// Weak dominance with at least one strict improvement.
pub fn dominates(p: &ObjectivePoint, q: &ObjectivePoint) -> bool {
    p.accuracy >= q.accuracy
        && p.power_w <= q.power_w
        && (p.accuracy > q.accuracy || p.power_w < q.power_w)
}

/// Non-dominated subset of `points`, sorted by ascending power, with exact
/// duplicates collapsed.
pub fn pareto_front(points: &[ObjectivePoint]) -> Vec<ObjectivePoint> {
    let mut sorted: Vec<ObjectivePoint> = points.to_vec();
    sorted.sort_by(|a, b| {
        a.power_w
            .total_cmp(&b.power_w)
            .then(b.accuracy.total_cmp(&a.accuracy))
    });
    let mut front: Vec<ObjectivePoint> = Vec::new();
    for p in sorted {
        match front.last() {
            // sorted by power, so p survives only with strictly better accuracy
            Some(last) if p.accuracy <= last.accuracy => {}
            _ => front.push(p),
        }
    }
    front
}

/// Indices of the entries in `points` that no other entry dominates. Unlike
/// [`pareto_front`], duplicates are all retained.
pub fn non_dominated_indices(points: &[ObjectivePoint]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| !points.iter().any(|q| dominates(q, &points[i])))
        .collect()
}

/// Area dominated by `front` and bounded by `reference`.
///
/// Every front point must strictly dominate the reference. Dominated points in
/// `front` are tolerated and contribute nothing.
pub fn hypervolume_2d(front: &[ObjectivePoint], reference: &ObjectivePoint) -> Result<f64> {
    if let Some(bad) = front.iter().find(|p| !p.strictly_dominates_ref(reference)) {
        return Err(Error::ReferenceNotDominated {
            accuracy: bad.accuracy,
            power_w: bad.power_w,
        });
    }
    Ok(hypervolume_unchecked(front, reference))
}

pub(crate) fn hypervolume_unchecked(front: &[ObjectivePoint], reference: &ObjectivePoint) -> f64 {
    let mut sorted: Vec<&ObjectivePoint> = front.iter().collect();
    sorted.sort_by(|a, b| a.power_w.total_cmp(&b.power_w));

    let mut area = 0.0;
    let mut best_acc = reference.accuracy;
    for (i, p) in sorted.iter().enumerate() {
        best_acc = best_acc.max(p.accuracy);
        let next_power = sorted.get(i + 1).map_or(reference.power_w, |q| q.power_w);
        area += (best_acc - reference.accuracy) * (next_power - p.power_w);
    }
    area
}
