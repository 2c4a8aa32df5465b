//! Calibrated synthetic ground truth for accuracy and power.
//!
//! The scene blends two parameter regimes, day (`p = 0`) and night
//! (`p = 1`), coefficient by coefficient. For a mix `p`:
//!
//! ```text
//! A(x, p) = sat(b) * dec(tau)
//!   sat(b)   = 1 - c * (exp(-b / b0) - exp(-b_max / b0))
//!   dec(tau) = 1 - d * (sigmoid((tau - m) / w) - sigmoid(-m / w))
//!
//! E(x, p) = base(f) + filter(kind, f) + encode(f) * pass(tau) * g(b)
//!   pass(tau) = floor + (1 - floor) * exp(-tau / scale)
//!   g(b)      = g0 + (1 - g0) * (b - b_min) / (b_max - b_min)
//! ```
//!
//! so `A(0, b_max) = 1` at every `p`, accuracy ignores frequency and filter,
//! and every monotonicity property holds for any positive coefficients.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{
    non_dominated_indices, Configuration, FilterKind, ObjectivePoint, MAX_BITRATE_KBPS,
    MIN_BITRATE_KBPS,
};

const DEFAULT_SCENE: &str = include_str!("../data/scene_default.json");

/// Piecewise-linear day/night mix over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct DriftSchedule {
    breakpoints: Vec<(f64, f64)>,
}

impl DriftSchedule {
    pub fn new(breakpoints: Vec<(f64, f64)>) -> Result<Self> {
        if breakpoints.is_empty() {
            return Err(Error::Empty("drift schedule"));
        }
        for w in breakpoints.windows(2) {
            if w[1].0 < w[0].0 {
                return Err(Error::invalid("drift breakpoints must be sorted by time"));
            }
        }
        if breakpoints.iter().any(|(_, p)| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("drift mix outside [0, 1]"));
        }
        Ok(DriftSchedule { breakpoints })
    }

    pub fn constant(p: f64) -> Result<Self> {
        DriftSchedule::new(vec![(0.0, p)])
    }

    pub fn mix_at(&self, t_s: f64) -> f64 {
        let bp = &self.breakpoints;
        if t_s <= bp[0].0 {
            return bp[0].1;
        }
        for w in bp.windows(2) {
            let ((t0, p0), (t1, p1)) = (w[0], w[1]);
            if t_s <= t1 {
                if t1 == t0 {
                    return p1;
                }
                return p0 + (p1 - p0) * (t_s - t0) / (t1 - t0);
            }
        }
        bp[bp.len() - 1].1
    }

    /// First time at which the mix leaves its initial value, if ever.
    pub fn onset_s(&self) -> Option<f64> {
        let p0 = self.breakpoints[0].1;
        self.breakpoints
            .windows(2)
            .find(|w| w[1].1 != p0)
            .map(|w| w[0].0)
    }
}

impl TryFrom<Vec<(f64, f64)>> for DriftSchedule {
    type Error = Error;

    fn try_from(v: Vec<(f64, f64)>) -> Result<Self> {
        DriftSchedule::new(v)
    }
}

impl From<DriftSchedule> for Vec<(f64, f64)> {
    fn from(d: DriftSchedule) -> Self {
        d.breakpoints
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub accuracy_sd: f64,
    pub power_sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyParams {
    pub bitrate_gap: f64,
    pub bitrate_scale_kbps: f64,
    pub threshold_drop: f64,
    pub threshold_midpoint: f64,
    pub threshold_width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterCosts {
    pub pixel: f64,
    pub area: f64,
    pub edge: f64,
}

impl FilterCosts {
    fn get(&self, kind: FilterKind) -> f64 {
        match kind {
            FilterKind::Pixel => self.pixel,
            FilterKind::Area => self.area,
            FilterKind::Edge => self.edge,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyPower {
    pub cpu_ghz: f64,
    pub base_w: f64,
    pub encode_w: f64,
    pub filter_w: FilterCosts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerParams {
    pub pass_floor: f64,
    pub pass_scale: f64,
    pub bitrate_cost_floor: f64,
    pub frequencies: Vec<FrequencyPower>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeParams {
    pub accuracy: AccuracyParams,
    pub power: PowerParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regimes {
    pub day: RegimeParams,
    pub night: RegimeParams,
}

/// The configuration grid profiled offline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub cpu_ghz: Vec<f64>,
    pub filters: Vec<FilterKind>,
    pub thresholds: Vec<f64>,
    pub bitrates_kbps: Vec<u32>,
}

impl Grid {
    pub fn full(&self) -> Vec<Configuration> {
        let mut out = Vec::with_capacity(
            self.cpu_ghz.len() * self.filters.len() * self.thresholds.len() * self.bitrates_kbps.len(),
        );
        for &cpu_ghz in &self.cpu_ghz {
            for &filter in &self.filters {
                for &threshold in &self.thresholds {
                    for &bitrate_kbps in &self.bitrates_kbps {
                        out.push(Configuration {
                            cpu_ghz,
                            filter,
                            threshold,
                            bitrate_kbps,
                        });
                    }
                }
            }
        }
        out
    }

    /// The two-dimensional online grid at 1.5 GHz with the pixel filter.
    pub fn online(&self) -> Vec<Configuration> {
        let mut out = Vec::with_capacity(self.thresholds.len() * self.bitrates_kbps.len());
        for &t in &self.thresholds {
            for &b in &self.bitrates_kbps {
                out.push(Configuration::online(t, b));
            }
        }
        out
    }
}

fn lerp(a: f64, b: f64, p: f64) -> f64 {
    a + (b - a) * p
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl AccuracyParams {
    fn mix(&self, other: &Self, p: f64) -> Self {
        AccuracyParams {
            bitrate_gap: lerp(self.bitrate_gap, other.bitrate_gap, p),
            bitrate_scale_kbps: lerp(self.bitrate_scale_kbps, other.bitrate_scale_kbps, p),
            threshold_drop: lerp(self.threshold_drop, other.threshold_drop, p),
            threshold_midpoint: lerp(self.threshold_midpoint, other.threshold_midpoint, p),
            threshold_width: lerp(self.threshold_width, other.threshold_width, p),
        }
    }

    fn saturation(&self, bitrate_kbps: f64) -> f64 {
        let s = self.bitrate_scale_kbps;
        1.0 - self.bitrate_gap
            * ((-bitrate_kbps / s).exp() - (-(MAX_BITRATE_KBPS as f64) / s).exp())
    }

    fn threshold_penalty(&self, threshold: f64) -> f64 {
        let (m, w) = (self.threshold_midpoint, self.threshold_width);
        1.0 - self.threshold_drop * (sigmoid((threshold - m) / w) - sigmoid(-m / w))
    }

    fn evaluate(&self, cfg: &Configuration) -> f64 {
        (self.saturation(cfg.bitrate_kbps as f64) * self.threshold_penalty(cfg.threshold)).clamp(0.0, 1.0)
    }
}

impl PowerParams {
    fn mix(&self, other: &Self, p: f64) -> Self {
        let frequencies = self
            .frequencies
            .iter()
            .zip(&other.frequencies)
            .map(|(a, b)| FrequencyPower {
                cpu_ghz: a.cpu_ghz,
                base_w: lerp(a.base_w, b.base_w, p),
                encode_w: lerp(a.encode_w, b.encode_w, p),
                filter_w: FilterCosts {
                    pixel: lerp(a.filter_w.pixel, b.filter_w.pixel, p),
                    area: lerp(a.filter_w.area, b.filter_w.area, p),
                    edge: lerp(a.filter_w.edge, b.filter_w.edge, p),
                },
            })
            .collect();
        PowerParams {
            pass_floor: lerp(self.pass_floor, other.pass_floor, p),
            pass_scale: lerp(self.pass_scale, other.pass_scale, p),
            bitrate_cost_floor: lerp(self.bitrate_cost_floor, other.bitrate_cost_floor, p),
            frequencies,
        }
    }

    /// Fraction of frames that clear the filter at `threshold`.
    pub fn pass_rate(&self, threshold: f64) -> f64 {
        self.pass_floor + (1.0 - self.pass_floor) * (-threshold / self.pass_scale).exp()
    }

    fn bitrate_cost(&self, bitrate_kbps: f64) -> f64 {
        let span = (MAX_BITRATE_KBPS - MIN_BITRATE_KBPS) as f64;
        let g0 = self.bitrate_cost_floor;
        g0 + (1.0 - g0) * (bitrate_kbps - MIN_BITRATE_KBPS as f64) / span
    }

    /// Per-frequency components interpolated linearly between table rows.
    fn at_frequency(&self, cpu_ghz: f64) -> (f64, f64, FilterCosts) {
        let rows = &self.frequencies;
        let first = &rows[0];
        let pick = |r: &FrequencyPower| (r.base_w, r.encode_w, r.filter_w);
        if cpu_ghz <= first.cpu_ghz {
            return pick(first);
        }
        for w in rows.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if cpu_ghz <= b.cpu_ghz {
                let p = (cpu_ghz - a.cpu_ghz) / (b.cpu_ghz - a.cpu_ghz);
                return (
                    lerp(a.base_w, b.base_w, p),
                    lerp(a.encode_w, b.encode_w, p),
                    FilterCosts {
                        pixel: lerp(a.filter_w.pixel, b.filter_w.pixel, p),
                        area: lerp(a.filter_w.area, b.filter_w.area, p),
                        edge: lerp(a.filter_w.edge, b.filter_w.edge, p),
                    },
                );
            }
        }
        pick(&rows[rows.len() - 1])
    }

    pub fn filter_cost(&self, kind: FilterKind, cpu_ghz: f64) -> f64 {
        self.at_frequency(cpu_ghz).2.get(kind)
    }

    fn evaluate(&self, cfg: &Configuration) -> f64 {
        let (base, encode, filters) = self.at_frequency(cfg.cpu_ghz);
        base + filters.get(cfg.filter)
            + encode * self.pass_rate(cfg.threshold) * self.bitrate_cost(cfg.bitrate_kbps as f64)
    }
}

impl RegimeParams {
    fn validate(&self, name: &str) -> Result<()> {
        let a = &self.accuracy;
        let positive = [
            a.bitrate_gap,
            a.bitrate_scale_kbps,
            a.threshold_drop,
            a.threshold_width,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) || a.threshold_drop > 1.0 {
            return Err(Error::invalid(format!("{name}: accuracy coefficients out of range")));
        }
        let pw = &self.power;
        if !(0.0..=1.0).contains(&pw.pass_floor)
            || !(pw.pass_scale > 0.0)
            || !(0.0..=1.0).contains(&pw.bitrate_cost_floor)
        {
            return Err(Error::invalid(format!("{name}: pass/bitrate coefficients out of range")));
        }
        if pw.frequencies.is_empty() {
            return Err(Error::Empty("power frequency table"));
        }
        for w in pw.frequencies.windows(2) {
            let (lo, hi) = (&w[0], &w[1]);
            if !(hi.cpu_ghz > lo.cpu_ghz && hi.base_w > lo.base_w)
                || hi.encode_w < lo.encode_w
                || hi.filter_w.pixel < lo.filter_w.pixel
                || hi.filter_w.area < lo.filter_w.area
                || hi.filter_w.edge < lo.filter_w.edge
            {
                return Err(Error::invalid(format!(
                    "{name}: power must increase with frequency ({} -> {} GHz)",
                    lo.cpu_ghz, hi.cpu_ghz
                )));
            }
        }
        for row in &pw.frequencies {
            let f = &row.filter_w;
            if !(row.base_w > 0.0 && row.encode_w > 0.0 && f.pixel > 0.0 && f.area > f.pixel && f.edge > f.area) {
                return Err(Error::invalid(format!(
                    "{name}: at {} GHz power terms must be positive with edge > area > pixel",
                    row.cpu_ghz
                )));
            }
        }
        Ok(())
    }
}

/// Offline profile entry: noise-free truth of one configuration at mix `regime`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileRecord {
    pub config: Configuration,
    pub accuracy: f64,
    pub power_w: f64,
    pub regime: f64,
}

impl ProfileRecord {
    pub fn point(&self) -> ObjectivePoint {
        ObjectivePoint::new(self.accuracy, self.power_w)
    }
}

/// Ground-truth frames captured during a verify phase.
///
/// `seed` fixes the sampling noise of every evaluation against this burst so
/// that scoring is a pure function of `(scene, burst, config)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBurst {
    pub t_s: f64,
    pub frames: u32,
    pub regime: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneModel {
    pub seed: u64,
    pub noise: NoiseParams,
    pub drift: DriftSchedule,
    pub grid: Grid,
    pub regimes: Regimes,
}

pub type SceneRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SceneModel {
    pub fn default_scene() -> Self {
        Self::from_json(DEFAULT_SCENE).expect("embedded scene file is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: SceneModel = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| Error::parse("scene file", path, e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.regimes.day.validate("day")?;
        self.regimes.night.validate("night")?;
        let (d, n) = (&self.regimes.day.power.frequencies, &self.regimes.night.power.frequencies);
        if d.len() != n.len() || d.iter().zip(n).any(|(a, b)| a.cpu_ghz != b.cpu_ghz) {
            return Err(Error::invalid("day and night frequency tables must list the same frequencies"));
        }
        if self.noise.accuracy_sd < 0.0 || self.noise.power_sd < 0.0 {
            return Err(Error::invalid("negative noise standard deviation"));
        }
        let g = &self.grid;
        if g.cpu_ghz.is_empty() || g.filters.is_empty() || g.thresholds.is_empty() || g.bitrates_kbps.is_empty() {
            return Err(Error::Empty("configuration grid"));
        }
        for cfg in g.full() {
            cfg.validate()?;
        }
        Ok(())
    }

    pub fn with_noise(mut self, accuracy_sd: f64, power_sd: f64) -> Self {
        self.noise = NoiseParams { accuracy_sd, power_sd };
        self
    }

    pub fn with_drift(mut self, drift: DriftSchedule) -> Self {
        self.drift = drift;
        self
    }

    pub fn regime_at(&self, t_s: f64) -> f64 {
        self.drift.mix_at(t_s)
    }

    pub fn true_accuracy(&self, cfg: &Configuration, p: f64) -> f64 {
        self.regimes
            .day
            .accuracy
            .mix(&self.regimes.night.accuracy, p)
            .evaluate(cfg)
    }

    pub fn true_power(&self, cfg: &Configuration, p: f64) -> f64 {
        self.power_params(p).evaluate(cfg)
    }

    pub fn power_params(&self, p: f64) -> PowerParams {
        self.regimes.day.power.mix(&self.regimes.night.power, p)
    }

    pub fn truth(&self, cfg: &Configuration, p: f64) -> ObjectivePoint {
        ObjectivePoint::new(self.true_accuracy(cfg, p), self.true_power(cfg, p))
    }

    pub fn rng(&self, seed: u64) -> SceneRng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Noisy measurement of `cfg` at time `t_s`.
    pub fn observe(&self, cfg: &Configuration, t_s: f64, rng: &mut SceneRng) -> ObjectivePoint {
        let truth = self.truth(cfg, self.regime_at(t_s));
        let acc_noise = gaussian(rng, self.noise.accuracy_sd);
        let pow_noise = gaussian(rng, self.noise.power_sd);
        ObjectivePoint::new(
            (truth.accuracy + acc_noise).clamp(0.0, 1.0),
            (truth.power_w + pow_noise).max(1e-3),
        )
    }

    pub fn capture_burst(&self, t_s: f64, frames: u32, rng: &mut SceneRng) -> GroundTruthBurst {
        GroundTruthBurst {
            t_s,
            frames,
            regime: self.regime_at(t_s),
            seed: rng.random(),
        }
    }

    /// Accuracy of `cfg` re-simulated against the burst's ground truth.
    pub fn evaluate_burst(&self, burst: &GroundTruthBurst, cfg: &Configuration) -> f64 {
        if cfg.threshold == 0.0 && cfg.bitrate_kbps == MAX_BITRATE_KBPS {
            // the burst itself
            return 1.0;
        }
        let mut key = splitmix64(burst.seed);
        for part in [
            cfg.threshold.to_bits(),
            cfg.bitrate_kbps as u64,
            cfg.cpu_ghz.to_bits(),
            cfg.filter as u64,
        ] {
            key = splitmix64(key ^ part);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let truth = self.true_accuracy(cfg, burst.regime);
        (truth + gaussian(&mut rng, self.noise.accuracy_sd)).clamp(0.0, 1.0)
    }

    pub fn offline_profile(&self, p: f64) -> Vec<ProfileRecord> {
        self.profile_configs(&self.grid.full(), p)
    }

    pub fn profile_configs(&self, configs: &[Configuration], p: f64) -> Vec<ProfileRecord> {
        configs
            .iter()
            .map(|c| {
                let pt = self.truth(c, p);
                ProfileRecord {
                    config: *c,
                    accuracy: pt.accuracy,
                    power_w: pt.power_w,
                    regime: p,
                }
            })
            .collect()
    }
}

fn gaussian(rng: &mut SceneRng, sd: f64) -> f64 {
    Normal::new(0.0, sd).map_or(0.0, |n| n.sample(rng))
}

/// Records whose objective point no other record dominates.
pub fn profile_front(records: &[ProfileRecord]) -> Vec<ProfileRecord> {
    let points: Vec<ObjectivePoint> = records.iter().map(ProfileRecord::point).collect();
    let mut front: Vec<ProfileRecord> = non_dominated_indices(&points)
        .into_iter()
        .map(|i| records[i])
        .collect();
    front.sort_by(|a, b| a.power_w.total_cmp(&b.power_w).then(a.config.cmp(&b.config)));
    front
}

pub const PROFILE_HEADER: &str = "cpu_ghz,filter,threshold,bitrate_kbps,accuracy,power_w";

pub fn write_profile_csv(mut w: impl Write, records: &[ProfileRecord]) -> Result<()> {
    writeln!(w, "{PROFILE_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.config.cpu_ghz, r.config.filter, r.config.threshold, r.config.bitrate_kbps, r.accuracy, r.power_w
        )?;
    }
    Ok(())
}

/// Reads a profile CSV. The regime column is not stored, so records carry
/// `regime` as given.
pub fn read_profile_csv(text: &str, origin: &Path, regime: f64) -> Result<Vec<ProfileRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == PROFILE_HEADER => {}
        _ => return Err(Error::parse("profile CSV", origin, "missing or unexpected header")),
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::parse("profile CSV", origin, format!("row {}: {what}", n + 1));
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 6 {
            return Err(bad("expected 6 columns"));
        }
        let num = |i: usize| cols[i].parse::<f64>().map_err(|_| bad(cols[i]));
        let config = Configuration::new(
            num(0)?,
            cols[1].parse().map_err(|_| bad(cols[1]))?,
            num(2)?,
            cols[3].parse().map_err(|_| bad(cols[3]))?,
        )
        .map_err(|e| bad(&e.to_string()))?;
        out.push(ProfileRecord {
            config,
            accuracy: num(4)?,
            power_w: num(5)?,
            regime,
        });
    }
    Ok(out)
}
