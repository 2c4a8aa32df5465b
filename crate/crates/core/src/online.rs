//! The verify / explore / exploit control loop on a simulated clock.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::engine::{
    assemble_candidates, seed_window, select_optimal, PowerAttribution, SlidingWindow,
    DEFAULT_CAPACITY, DEFAULT_MANUAL, DEFAULT_MBO,
};
use crate::error::{Error, Result};
use crate::objective::{Configuration, ObjectivePoint, Observation, MAX_BITRATE_KBPS};
use crate::scene::{profile_front, GroundTruthBurst, SceneModel, SceneRng};

pub const SWITCH_NOTE: &str = "config_switch";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopParams {
    pub target_accuracy: f64,
    pub explore_duration_s: u64,
    pub exploit_duration_s: u64,
    pub verify_duration_s: u64,
    pub burst_frames: u32,
    pub window_capacity: usize,
    pub n_manual: usize,
    pub n_mbo: usize,
    pub total_duration_s: u64,
    pub seed: u64,
}

impl Default for LoopParams {
    fn default() -> Self {
        LoopParams {
            target_accuracy: 0.90,
            explore_duration_s: 5,
            exploit_duration_s: 60,
            verify_duration_s: 1,
            burst_frames: 15,
            window_capacity: DEFAULT_CAPACITY,
            n_manual: DEFAULT_MANUAL,
            n_mbo: DEFAULT_MBO,
            total_duration_s: 900,
            seed: 7,
        }
    }
}

impl LoopParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_accuracy > 0.0 && self.target_accuracy <= 1.0) {
            return Err(Error::invalid(format!("target accuracy {} outside (0, 1]", self.target_accuracy)));
        }
        if self.explore_duration_s == 0 || self.exploit_duration_s == 0 || self.total_duration_s == 0 {
            return Err(Error::invalid("durations must be positive"));
        }
        if self.verify_duration_s == 0 || self.verify_duration_s >= self.explore_duration_s {
            return Err(Error::invalid("verify must take a positive part of the explore budget"));
        }
        if self.window_capacity == 0 {
            return Err(Error::invalid("window capacity must be positive"));
        }
        Ok(())
    }

    pub fn cycle_s(&self) -> u64 {
        self.explore_duration_s + self.exploit_duration_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Verify,
    Explore,
    Exploit,
}

/// One simulated second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub t_s: u64,
    pub phase: Phase,
    pub threshold: f64,
    pub bitrate_kbps: u32,
    pub accuracy: f64,
    pub power_w: f64,
    pub note: Option<String>,
}

impl TraceEvent {
    pub fn config(&self) -> Configuration {
        Configuration::online(self.threshold, self.bitrate_kbps)
    }
}

/// The camera plus evaluator side of the loop.
pub trait Backend {
    /// Captures a ground-truth burst at `t_s` and streams the unfiltered
    /// maximum-bitrate configuration for `seconds`.
    fn verify(&mut self, t_s: u64, seconds: u64, frames: u32) -> Result<(GroundTruthBurst, Vec<ObjectivePoint>)>;

    /// Per-second measurements while streaming `config`.
    fn stream(&mut self, t_s: u64, seconds: u64, config: &Configuration, phase: Phase) -> Result<Vec<ObjectivePoint>>;

    /// Accuracy of `config` re-simulated against a burst.
    fn evaluate(&mut self, burst: &GroundTruthBurst, config: &Configuration) -> Result<f64>;
}

/// The configuration streamed during verify.
pub fn ground_truth_config() -> Configuration {
    Configuration::online(0.0, MAX_BITRATE_KBPS)
}

/// In-process backend driven directly by a scene model.
#[derive(Debug, Clone)]
pub struct SimBackend {
    scene: SceneModel,
    rng: SceneRng,
}

impl SimBackend {
    pub fn new(scene: SceneModel, seed: u64) -> Self {
        let rng = scene.rng(seed);
        SimBackend { scene, rng }
    }

    pub fn scene(&self) -> &SceneModel {
        &self.scene
    }

    /// Camera-side verify: the burst and the streamed seconds, in that order.
    pub fn capture(&mut self, t_s: u64, seconds: u64, frames: u32) -> (GroundTruthBurst, Vec<ObjectivePoint>) {
        let burst = self.scene.capture_burst(t_s as f64, frames, &mut self.rng);
        let points = self.measure(t_s, seconds, &ground_truth_config());
        (burst, points)
    }

    pub fn measure(&mut self, t_s: u64, seconds: u64, config: &Configuration) -> Vec<ObjectivePoint> {
        (t_s..t_s + seconds)
            .map(|t| self.scene.observe(config, t as f64, &mut self.rng))
            .collect()
    }
}

impl Backend for SimBackend {
    fn verify(&mut self, t_s: u64, seconds: u64, frames: u32) -> Result<(GroundTruthBurst, Vec<ObjectivePoint>)> {
        Ok(self.capture(t_s, seconds, frames))
    }

    fn stream(&mut self, t_s: u64, seconds: u64, config: &Configuration, _phase: Phase) -> Result<Vec<ObjectivePoint>> {
        Ok(self.measure(t_s, seconds, config))
    }

    fn evaluate(&mut self, burst: &GroundTruthBurst, config: &Configuration) -> Result<f64> {
        Ok(self.scene.evaluate_burst(burst, config))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTime {
    pub verify_s: u64,
    pub explore_s: u64,
    pub exploit_s: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub duration_s: u64,
    pub mean_accuracy: f64,
    pub mean_power_w: f64,
    pub switch_count: usize,
    pub switch_times_s: Vec<u64>,
    pub rounds: u64,
    pub phase_time: PhaseTime,
}

impl Summary {
    pub fn from_trace(trace: &[TraceEvent], rounds: u64) -> Self {
        let n = trace.len().max(1) as f64;
        let mut phase_time = PhaseTime::default();
        for e in trace {
            match e.phase {
                Phase::Verify => phase_time.verify_s += 1,
                Phase::Explore => phase_time.explore_s += 1,
                Phase::Exploit => phase_time.exploit_s += 1,
            }
        }
        let switch_times_s: Vec<u64> = trace
            .iter()
            .filter(|e| e.note.as_deref() == Some(SWITCH_NOTE))
            .map(|e| e.t_s)
            .collect();
        Summary {
            duration_s: trace.len() as u64,
            mean_accuracy: trace.iter().map(|e| e.accuracy).sum::<f64>() / n,
            mean_power_w: trace.iter().map(|e| e.power_w).sum::<f64>() / n,
            switch_count: switch_times_s.len(),
            switch_times_s,
            rounds,
            phase_time,
        }
    }
}

/// Loop state. Owns the window and the trace so a failed run still leaves
/// its partial trace behind.
#[derive(Debug, Clone)]
pub struct OnlineLoop {
    params: LoopParams,
    grid: Vec<Configuration>,
    window: SlidingWindow,
    attribution: PowerAttribution,
    current: Configuration,
    round: u64,
    t_s: u64,
    trace: Vec<TraceEvent>,
}

impl OnlineLoop {
    /// Seeds the window from the scene's day profile over its online grid;
    /// explore power is read from the scene's profile at each burst's regime.
    pub fn new(params: LoopParams, scene: &SceneModel) -> Result<Self> {
        params.validate()?;
        let grid = scene.grid.online();
        if grid.is_empty() {
            return Err(Error::Empty("candidate grid"));
        }
        let profile = scene.profile_configs(&grid, 0.0);
        let window = seed_window(&profile_front(&profile), params.window_capacity, params.target_accuracy)?;
        let current = select_optimal(&window, params.target_accuracy, 0)?;
        Ok(OnlineLoop {
            attribution: PowerAttribution::new(scene.clone(), grid.clone()),
            params,
            grid,
            window,
            current,
            round: 0,
            t_s: 0,
            trace: Vec::new(),
        })
    }

    pub fn params(&self) -> &LoopParams {
        &self.params
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn window(&self) -> &SlidingWindow {
        &self.window
    }

    pub fn current(&self) -> Configuration {
        self.current
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn now_s(&self) -> u64 {
        self.t_s
    }

    pub fn summary(&self) -> Summary {
        Summary::from_trace(&self.trace, self.round)
    }

    fn remaining(&self, seconds: u64) -> u64 {
        seconds.min(self.params.total_duration_s.saturating_sub(self.t_s))
    }

    fn record(&mut self, phase: Phase, config: Configuration, points: &[ObjectivePoint], first_note: Option<&str>) {
        for (i, p) in points.iter().enumerate() {
            self.trace.push(TraceEvent {
                t_s: self.t_s + i as u64,
                phase,
                threshold: config.threshold,
                bitrate_kbps: config.bitrate_kbps,
                accuracy: p.accuracy,
                power_w: p.power_w,
                note: if i == 0 { first_note.map(str::to_owned) } else { None },
            });
        }
        self.t_s += points.len() as u64;
    }

    // nothing is sent for a phase cut to zero length by the run's end
    fn stream(&self, backend: &mut dyn Backend, secs: u64, phase: Phase) -> Result<Vec<ObjectivePoint>> {
        if secs == 0 {
            return Ok(Vec::new());
        }
        backend.stream(self.t_s, secs, &self.current, phase)
    }

    /// Re-scores the current optimum against a fresh burst.
    pub fn verify_phase(&mut self, backend: &mut dyn Backend) -> Result<GroundTruthBurst> {
        let secs = self.remaining(self.params.verify_duration_s);
        let (burst, points) = backend.verify(self.t_s, secs, self.params.burst_frames)?;
        self.record(Phase::Verify, ground_truth_config(), &points, None);
        let accuracy = backend.evaluate(&burst, &self.current)?;
        self.window.update(Observation {
            config: self.current,
            point: ObjectivePoint::new(accuracy, self.attribution.power(burst.regime, &self.current)?),
            round: self.round,
        });
        Ok(burst)
    }

    /// Scores a candidate batch against `burst` and picks the next optimum.
    /// Returns whether the optimum changed.
    pub fn explore_phase(&mut self, backend: &mut dyn Backend, burst: &GroundTruthBurst) -> Result<bool> {
        let p = &self.params;
        let candidates = assemble_candidates(&self.window, p.target_accuracy, p.n_manual, p.n_mbo, &self.grid)?;
        let next_round = self.round + 1;
        for c in &candidates {
            let accuracy = backend.evaluate(burst, c)?;
            self.window.update(Observation {
                config: *c,
                point: ObjectivePoint::new(accuracy, self.attribution.power(burst.regime, c)?),
                round: next_round,
            });
        }
        let secs = self.remaining(self.params.explore_duration_s - self.params.verify_duration_s);
        let points = self.stream(backend, secs, Phase::Explore)?;
        self.record(Phase::Explore, self.current, &points, None);

        self.round = next_round;
        let chosen = select_optimal(&self.window, self.params.target_accuracy, self.round)?;
        let switched = chosen != self.current;
        self.current = chosen;
        Ok(switched)
    }

    pub fn exploit_phase(&mut self, backend: &mut dyn Backend, switched: bool) -> Result<()> {
        let secs = self.remaining(self.params.exploit_duration_s);
        let points = self.stream(backend, secs, Phase::Exploit)?;
        let note = switched.then_some(SWITCH_NOTE);
        self.record(Phase::Exploit, self.current, &points, note);
        Ok(())
    }

    pub fn run_cycle(&mut self, backend: &mut dyn Backend) -> Result<()> {
        let burst = self.verify_phase(backend)?;
        let switched = self.explore_phase(backend, &burst)?;
        self.exploit_phase(backend, switched)
    }

    pub fn is_done(&self) -> bool {
        self.t_s >= self.params.total_duration_s
    }

    pub fn run(&mut self, backend: &mut dyn Backend) -> Result<Summary> {
        while !self.is_done() {
            self.run_cycle(backend)?;
        }
        Ok(self.summary())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub trace: Vec<TraceEvent>,
    pub summary: Summary,
}

/// Runs the loop to completion against `backend`, seeding from `scene`.
pub fn run_online(params: LoopParams, scene: &SceneModel, backend: &mut dyn Backend) -> Result<RunOutput> {
    let mut lp = OnlineLoop::new(params, scene)?;
    let summary = lp.run(backend)?;
    Ok(RunOutput {
        trace: lp.trace,
        summary,
    })
}

/// Convenience: in-process run with a [`SimBackend`] seeded from `params.seed`.
pub fn run_simulated(params: LoopParams, scene: &SceneModel) -> Result<RunOutput> {
    let mut backend = SimBackend::new(scene.clone(), params.seed);
    run_online(params, scene, &mut backend)
}

pub fn write_trace_jsonl(mut w: impl Write, trace: &[TraceEvent]) -> Result<()> {
    for e in trace {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trace_jsonl(text: &str) -> Result<Vec<TraceEvent>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Mean power of `baseline` over the timestamps of `trace`, from the scene's
/// noise-free surface.
pub fn baseline_mean_power(scene: &SceneModel, baseline: &Configuration, trace: &[TraceEvent]) -> f64 {
    if trace.is_empty() {
        return 0.0;
    }
    trace
        .iter()
        .map(|e| scene.true_power(baseline, scene.regime_at(e.t_s as f64)))
        .sum::<f64>()
        / trace.len() as f64
}
