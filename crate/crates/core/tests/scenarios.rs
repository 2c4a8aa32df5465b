//! End-to-end loop behaviour under hand-built drift schedules.

use ecolens::online::{run_simulated, LoopParams, Phase, SWITCH_NOTE};
use ecolens::scene::{DriftSchedule, SceneModel};

fn params(seed: u64, total: u64) -> LoopParams {
    LoopParams {
        seed,
        total_duration_s: total,
        ..LoopParams::default()
    }
}

#[test]
fn drift_unlocks_cheaper_config_within_two_rounds() {
    // default scenario: day drifting to night from 600 s
    let scene = SceneModel::default_scene();
    let p = LoopParams::default();
    let out = run_simulated(p.clone(), &scene).unwrap();
    let target = p.target_accuracy;
    let grid = scene.grid.online();

    // configurations that only meet the target once the drift has progressed
    let day_ok: Vec<_> = grid.iter().filter(|c| scene.true_accuracy(c, 0.0) >= target).collect();
    let unlocked = |t: f64| {
        let mix = scene.regime_at(t);
        grid.iter().any(|c| {
            scene.true_accuracy(c, 0.0) < target
                && scene.true_accuracy(c, mix) >= target
                && day_ok.iter().all(|d| scene.true_power(c, mix) < scene.true_power(d, mix))
        })
    };
    let t_star = (0..p.total_duration_s).find(|&t| unlocked(t as f64)).expect("drift unlocks a cheaper config");

    let cycle = p.cycle_s();
    let rounds: Vec<u64> = (0..)
        .map(|k| k * cycle)
        .filter(|&t| t >= t_star)
        .take(2)
        .filter(|&t| t + p.explore_duration_s < p.total_duration_s)
        .collect();
    assert!(!rounds.is_empty(), "no explore round after t*={t_star}");
    let reached = rounds.iter().any(|&t| {
        let e = out.trace.iter().find(|e| e.t_s == t + p.explore_duration_s).unwrap();
        let mix = scene.regime_at(e.t_s as f64);
        let c = e.config();
        scene.true_accuracy(&c, mix) >= target - 0.01
            && day_ok.iter().all(|d| scene.true_power(&c, mix) < scene.true_power(d, mix))
    });
    assert!(reached, "t*={t_star}, rounds {rounds:?}");
}

#[test]
fn stationary_day_keeps_meeting_target() {
    let scene = SceneModel::default_scene().with_drift(DriftSchedule::constant(0.0).unwrap());
    let out = run_simulated(params(3, 900), &scene).unwrap();
    for e in out.trace.iter().filter(|e| e.phase == Phase::Exploit) {
        assert!(scene.true_accuracy(&e.config(), 0.0) >= 0.85, "{e:?}");
    }
}

#[test]
fn drift_to_night_raises_operating_accuracy() {
    let scene = SceneModel::default_scene();
    let out = run_simulated(params(7, 900), &scene).unwrap();
    let onset = scene.drift.onset_s().unwrap() as u64;
    let switches: Vec<u64> = out
        .trace
        .iter()
        .filter(|e| e.note.as_deref() == Some(SWITCH_NOTE))
        .map(|e| e.t_s)
        .collect();
    assert!(switches.iter().any(|&t| t >= onset), "{switches:?}");
    let last = out.trace.last().unwrap().config();
    let at_onset = out.trace.iter().find(|e| e.t_s == onset).unwrap().config();
    assert!(scene.true_accuracy(&last, 1.0) > scene.true_accuracy(&at_onset, 1.0));
}
