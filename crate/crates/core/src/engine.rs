//! Sliding-window bookkeeping, explore-candidate assembly and selection.

use std::cmp::Ordering;
use std::collections::VecDeque;

use crate::acquisition::{suggest_batch, AcquisitionContext};
use crate::error::{Error, Result};
use crate::objective::{non_dominated_indices, Configuration, FilterKind, ObjectivePoint, Observation};
use crate::scene::{ProfileRecord, SceneModel};

pub const DEFAULT_CAPACITY: usize = 20;
pub const DEFAULT_MANUAL: usize = 6;
pub const DEFAULT_MBO: usize = 4;

/// Most recently evaluated configurations, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct SlidingWindow {
    capacity: usize,
    entries: VecDeque<Observation>,
}

impl SlidingWindow {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("window capacity must be positive"));
        }
        Ok(SlidingWindow {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries from least to most recent.
    pub fn entries(&self) -> impl Iterator<Item = &Observation> {
        self.entries.iter()
    }

    pub fn snapshot(&self) -> Vec<Observation> {
        self.entries.iter().copied().collect()
    }

    pub fn get(&self, config: &Configuration) -> Option<&Observation> {
        self.entries.iter().find(|o| &o.config == config)
    }

    pub fn update(&mut self, obs: Observation) {
        if let Some(i) = self.entries.iter().position(|o| o.config == obs.config) {
            self.entries.remove(i);
        } else if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(obs);
    }
}

fn by_power(a: &Observation, b: &Observation) -> Ordering {
    a.point
        .power_w
        .total_cmp(&b.point.power_w)
        .then(a.config.threshold.total_cmp(&b.config.threshold))
        .then(a.config.bitrate_kbps.cmp(&b.config.bitrate_kbps))
        .then(a.config.cmp(&b.config))
}

fn by_accuracy_desc(a: &Observation, b: &Observation) -> Ordering {
    b.point
        .accuracy
        .total_cmp(&a.point.accuracy)
        .then_with(|| by_power(a, b))
}

/// Up to `n` window configurations: front entries meeting `target`, then any
/// entries meeting it, both cheapest first, then the most accurate of the rest.
pub fn manual_picks(window: &SlidingWindow, target: f64, n: usize) -> Vec<Configuration> {
    let entries = window.snapshot();
    let points: Vec<ObjectivePoint> = entries.iter().map(|o| o.point).collect();
    let on_front = non_dominated_indices(&points);

    let mut front_ok: Vec<Observation> = on_front
        .iter()
        .map(|&i| entries[i])
        .filter(|o| o.point.accuracy >= target)
        .collect();
    front_ok.sort_by(by_power);
    let mut all_ok: Vec<Observation> = entries.iter().copied().filter(|o| o.point.accuracy >= target).collect();
    all_ok.sort_by(by_power);
    let mut rest = entries.clone();
    rest.sort_by(by_accuracy_desc);

    let mut picks: Vec<Configuration> = Vec::with_capacity(n);
    for o in front_ok.iter().chain(&all_ok).chain(&rest) {
        if picks.len() == n {
            break;
        }
        if !picks.contains(&o.config) {
            picks.push(o.config);
        }
    }
    picks
}

/// Concatenates, dropping later duplicates.
pub fn merge_candidates(first: &[Configuration], second: &[Configuration]) -> Vec<Configuration> {
    let mut out: Vec<Configuration> = Vec::with_capacity(first.len() + second.len());
    for c in first.iter().chain(second) {
        if !out.contains(c) {
            out.push(*c);
        }
    }
    out
}

/// Manual picks followed by an EHVI batch over `grid`, deduplicated.
pub fn assemble_candidates(
    window: &SlidingWindow,
    target: f64,
    n_manual: usize,
    n_mbo: usize,
    grid: &[Configuration],
) -> Result<Vec<Configuration>> {
    if window.is_empty() {
        return Err(Error::Empty("sliding window"));
    }
    let manual = manual_picks(window, target, n_manual);
    if n_mbo == 0 {
        return Ok(manual);
    }
    let ctx = AcquisitionContext::from_observations(&window.snapshot())?;
    let mbo = suggest_batch(&ctx, n_mbo, grid)?;
    Ok(merge_candidates(&manual, &mbo))
}

/// Cheapest current-round entry meeting `target`, else the most accurate
/// current-round entry.
pub fn select_optimal(window: &SlidingWindow, target: f64, round: u64) -> Result<Configuration> {
    let current: Vec<&Observation> = window.entries().filter(|o| o.round == round).collect();
    if current.is_empty() {
        return Err(Error::NoCurrentRound(round));
    }
    let meeting = current
        .iter()
        .filter(|o| o.point.accuracy >= target)
        .min_by(|a, b| by_power(a, b));
    let chosen = match meeting {
        Some(o) => o,
        None => current
            .iter()
            .min_by(|a, b| by_accuracy_desc(a, b))
            .expect("non-empty"),
    };
    Ok(chosen.config)
}

/// Offline power surface over the online (threshold, bitrate) grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerLookup {
    thresholds: Vec<f64>,
    bitrates: Vec<f64>,
    // row-major over thresholds
    power_w: Vec<f64>,
}

impl PowerLookup {
    /// Builds from the 1.5 GHz / pixel records of a profile; they must cover
    /// a full threshold x bitrate grid.
    pub fn from_profile(records: &[ProfileRecord]) -> Result<Self> {
        let online: Vec<&ProfileRecord> = records
            .iter()
            .filter(|r| r.config.cpu_ghz == 1.5 && r.config.filter == FilterKind::Pixel)
            .collect();
        if online.is_empty() {
            return Err(Error::Empty("1.5 GHz pixel profile records"));
        }
        let mut thresholds: Vec<f64> = online.iter().map(|r| r.config.threshold).collect();
        thresholds.sort_by(f64::total_cmp);
        thresholds.dedup();
        let mut bitrates: Vec<f64> = online.iter().map(|r| r.config.bitrate_kbps as f64).collect();
        bitrates.sort_by(f64::total_cmp);
        bitrates.dedup();

        let mut power_w = vec![f64::NAN; thresholds.len() * bitrates.len()];
        for r in &online {
            let i = thresholds.partition_point(|&t| t < r.config.threshold);
            let j = bitrates.partition_point(|&b| b < r.config.bitrate_kbps as f64);
            power_w[i * bitrates.len() + j] = r.power_w;
        }
        if power_w.iter().any(|p| p.is_nan()) {
            return Err(Error::invalid("profile does not cover a full threshold x bitrate grid"));
        }
        Ok(PowerLookup {
            thresholds,
            bitrates,
            power_w,
        })
    }

    fn bracket(axis: &[f64], v: f64) -> (usize, usize, f64) {
        if axis.len() == 1 || v <= axis[0] {
            return (0, 0, 0.0);
        }
        let last = axis.len() - 1;
        if v >= axis[last] {
            return (last, last, 0.0);
        }
        let hi = axis.partition_point(|&a| a <= v);
        let lo = hi - 1;
        (lo, hi, (v - axis[lo]) / (axis[hi] - axis[lo]))
    }

    /// Bilinear interpolation, clamped to the grid.
    pub fn power(&self, threshold: f64, bitrate_kbps: u32) -> f64 {
        let (i0, i1, u) = Self::bracket(&self.thresholds, threshold);
        let (j0, j1, v) = Self::bracket(&self.bitrates, bitrate_kbps as f64);
        let at = |i: usize, j: usize| self.power_w[i * self.bitrates.len() + j];
        let lo = at(i0, j0) * (1.0 - v) + at(i0, j1) * v;
        let hi = at(i1, j0) * (1.0 - v) + at(i1, j1) * v;
        lo * (1.0 - u) + hi * u
    }
}

/// Power for explore observations: the offline profile at the regime the
/// burst was captured in, read off the (threshold, bitrate) grid.
#[derive(Debug, Clone)]
pub struct PowerAttribution {
    scene: SceneModel,
    grid: Vec<Configuration>,
    cached: Option<(f64, PowerLookup)>,
}

impl PowerAttribution {
    pub fn new(scene: SceneModel, grid: Vec<Configuration>) -> Self {
        PowerAttribution {
            scene,
            grid,
            cached: None,
        }
    }

    pub fn power(&mut self, regime: f64, config: &Configuration) -> Result<f64> {
        let stale = self.cached.as_ref().is_none_or(|(p, _)| *p != regime);
        if stale {
            let records = self.scene.profile_configs(&self.grid, regime);
            self.cached = Some((regime, PowerLookup::from_profile(&records)?));
        }
        let (_, lookup) = self.cached.as_ref().expect("filled above");
        Ok(lookup.power(config.threshold, config.bitrate_kbps))
    }
}

/// Seeds a window from offline front records: the `capacity` consecutive
/// records (by power) centred on the cheapest one meeting `target`.
pub fn seed_window(front: &[ProfileRecord], capacity: usize, target: f64) -> Result<SlidingWindow> {
    let mut window = SlidingWindow::new(capacity)?;
    if front.is_empty() {
        return Err(Error::Empty("offline Pareto front"));
    }
    let mut sorted = front.to_vec();
    sorted.sort_by(|a, b| a.power_w.total_cmp(&b.power_w).then(a.config.cmp(&b.config)));
    let anchor = sorted
        .iter()
        .position(|r| r.accuracy >= target)
        .unwrap_or(sorted.len() - 1);
    let start = anchor
        .saturating_sub(capacity / 2)
        .min(sorted.len().saturating_sub(capacity));
    for r in sorted.iter().skip(start).take(capacity) {
        window.update(Observation {
            config: r.config,
            point: r.point(),
            round: 0,
        });
    }
    Ok(window)
}
