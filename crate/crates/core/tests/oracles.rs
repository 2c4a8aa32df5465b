//! Independent oracles for batch acquisition and candidate assembly.

use ecolens::acquisition::{
    ehvi_gaussian, reference_point, suggest_batch, suggest_batch_scored, AcquisitionContext, BELIEVER_NOISE, TIE_TOLERANCE,
};
use ecolens::engine::{assemble_candidates, manual_picks, SlidingWindow};
use ecolens::objective::{pareto_front, Configuration, ObjectivePoint, Observation};
use ecolens::scene::SceneModel;
use ecolens::surrogate::{normalize, GpSurrogate, Objective};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn obs(t: f64, b: u32, a: f64, w: f64) -> Observation {
    Observation {
        config: Configuration::online(t, b),
        point: ObjectivePoint::new(a, w),
        round: 0,
    }
}

fn random_window(rng: &mut ChaCha8Rng, grid: &[Configuration], n: usize) -> Vec<Observation> {
    let mut configs = grid.to_vec();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let c = configs.swap_remove(rng.random_range(0..configs.len()));
        // accuracy falls with threshold and rises with bitrate, plus noise
        let a = (0.97 - 2.0 * c.threshold + 0.03 * (c.bitrate_kbps as f64 / 3000.0) + rng.random_range(-0.03..0.03))
            .clamp(0.05, 1.0);
        let w = 4.0 + 1.5 * (c.bitrate_kbps as f64 / 3000.0) - 4.0 * c.threshold + rng.random_range(-0.1..0.1);
        out.push(Observation {
            config: c,
            point: ObjectivePoint::new(a, w),
            round: 0,
        });
    }
    out
}

fn context(observations: &[Observation]) -> (AcquisitionContext, GpSurrogate, GpSurrogate) {
    let points: Vec<ObjectivePoint> = observations.iter().map(|o| o.point).collect();
    let r = reference_point(&points);
    let front: Vec<ObjectivePoint> = pareto_front(&points).into_iter().filter(|p| p.accuracy > r.accuracy).collect();
    let ga = GpSurrogate::fit(observations, Objective::Accuracy).unwrap();
    let gp = GpSurrogate::fit(observations, Objective::Power).unwrap();
    let ctx = AcquisitionContext::new(front, r, ga.clone(), gp.clone()).unwrap();
    (ctx, ga, gp)
}

// scores within the tie tolerance go to the earlier (threshold, bitrate)
fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] + TIE_TOLERANCE {
            best = i;
        }
    }
    best
}

#[test]
fn single_pick_is_the_ehvi_argmax() {
    let scene = SceneModel::default_scene();
    let grid = scene.grid.online();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..10 {
        let window = random_window(&mut rng, &grid, 12);
        let (ctx, _, _) = context(&window);
        let pool: Vec<Configuration> = (0..15).map(|_| grid[rng.random_range(0..grid.len())]).collect();
        let mut pool_sorted = pool.clone();
        pool_sorted.sort_by(|a, b| a.threshold.total_cmp(&b.threshold).then(a.bitrate_kbps.cmp(&b.bitrate_kbps)));
        pool_sorted.dedup();
        let scores: Vec<f64> = pool_sorted.iter().map(|c| ctx.ehvi(&normalize(c).unwrap())).collect();
        let want = pool_sorted[argmax(&scores)];
        let got = suggest_batch(&ctx, 1, &pool).unwrap();
        assert_eq!(got, vec![want]);
    }
}

#[test]
fn two_picks_match_explicit_two_step_enumeration() {
    let scene = SceneModel::default_scene();
    let grid = scene.grid.online();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for case in 0..10 {
        let window = random_window(&mut rng, &grid, 10);
        let (ctx, ga, gp) = context(&window);
        let mut three: Vec<Configuration> = Vec::new();
        while three.len() < 3 {
            let c = grid[rng.random_range(0..grid.len())];
            if !three.contains(&c) {
                three.push(c);
            }
        }
        three.sort_by(|a, b| a.threshold.total_cmp(&b.threshold).then(a.bitrate_kbps.cmp(&b.bitrate_kbps)));
        let xs: Vec<_> = three.iter().map(|c| normalize(c).unwrap()).collect();

        // step one: plain EHVI on the window model
        let s1: Vec<f64> = xs
            .iter()
            .map(|x| ehvi_gaussian(ctx.front(), ctx.reference(), ga.predict(x), gp.predict(x)))
            .collect();
        let first = argmax(&s1);

        // step two: believe the posterior mean at the first pick
        let x1 = xs[first];
        let (ma, _) = ga.predict(&x1);
        let (mp, _) = gp.predict(&x1);
        let ga2 = ga.condition(x1, ma, BELIEVER_NOISE).unwrap();
        let gp2 = gp.condition(x1, mp, BELIEVER_NOISE).unwrap();
        let r = ctx.reference();
        let mut front2 = ctx.front().to_vec();
        if ma > r.accuracy && mp < r.power_w {
            front2.push(ObjectivePoint::new(ma, mp));
        }
        let front2 = pareto_front(&front2);
        let rest: Vec<usize> = (0..3).filter(|&i| i != first).collect();
        let s2: Vec<f64> = rest
            .iter()
            .map(|&i| ehvi_gaussian(&front2, r, ga2.predict(&xs[i]), gp2.predict(&xs[i])))
            .collect();
        let second = rest[argmax(&s2)];

        let got = suggest_batch_scored(&ctx, 2, &three).unwrap();
        assert_eq!(got[0].config, three[first], "case {case} first pick");
        assert_eq!(got[1].config, three[second], "case {case} second pick");
        assert!((got[0].ehvi - s1[first]).abs() <= 1e-12);
        let s2_best = s2[rest.iter().position(|&i| i == second).unwrap()];
        assert!((got[1].ehvi - s2_best).abs() <= 1e-9, "case {case}: {} vs {s2_best}", got[1].ehvi);
    }
}

fn brute_force_manual(entries: &[Observation], target: f64, n: usize) -> Vec<Configuration> {
    let dominated = |o: &Observation| {
        entries.iter().any(|q| {
            q.point.accuracy >= o.point.accuracy
                && q.point.power_w <= o.point.power_w
                && (q.point.accuracy > o.point.accuracy || q.point.power_w < o.point.power_w)
        })
    };
    let by_power = |a: &&Observation, b: &&Observation| a.point.power_w.total_cmp(&b.point.power_w);
    let mut front_ok: Vec<&Observation> =
        entries.iter().filter(|o| !dominated(o) && o.point.accuracy >= target).collect();
    front_ok.sort_by(by_power);
    let mut ok: Vec<&Observation> = entries.iter().filter(|o| o.point.accuracy >= target).collect();
    ok.sort_by(by_power);
    let mut rest: Vec<&Observation> = entries.iter().collect();
    rest.sort_by(|a, b| b.point.accuracy.total_cmp(&a.point.accuracy));
    let mut out = Vec::new();
    for o in front_ok.into_iter().chain(ok).chain(rest) {
        if out.len() < n && !out.contains(&o.config) {
            out.push(o.config);
        }
    }
    out
}

#[test]
fn manual_picks_on_a_hand_built_window() {
    let entries = vec![
        obs(0.0, 3000, 0.95, 6.0),
        obs(0.01, 2000, 0.93, 5.5),
        obs(0.02, 1500, 0.91, 5.0),
        obs(0.03, 1000, 0.85, 4.0),
        obs(0.05, 500, 0.80, 3.5),
        obs(0.0, 2500, 0.92, 6.5),
        obs(0.01, 2500, 0.905, 5.8),
        obs(0.04, 900, 0.84, 4.5),
        obs(0.06, 700, 0.70, 5.0),
        obs(0.08, 300, 0.60, 6.0),
    ];
    let mut w = SlidingWindow::new(10).unwrap();
    for o in &entries {
        w.update(*o);
    }
    let want: Vec<Configuration> = [
        (0.02, 1500),
        (0.01, 2000),
        (0.0, 3000),
        (0.01, 2500),
        (0.0, 2500),
        (0.03, 1000),
    ]
    .iter()
    .map(|&(t, b)| Configuration::online(t, b))
    .collect();
    assert_eq!(manual_picks(&w, 0.9, 6), want);
    assert_eq!(brute_force_manual(&entries, 0.9, 6), want);

    let grid = SceneModel::default_scene().grid.online();
    let all = assemble_candidates(&w, 0.9, 6, 4, &grid).unwrap();
    assert_eq!(&all[..6], &want[..]);
    assert!(all.len() <= 10);
    for (i, c) in all.iter().enumerate() {
        assert!(!all[..i].contains(c), "duplicate {c}");
    }
    assert_eq!(assemble_candidates(&w, 0.9, 6, 0, &grid).unwrap(), want);
}

#[test]
fn manual_picks_match_brute_force_on_random_windows() {
    let grid = SceneModel::default_scene().grid.online();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..200 {
        let n = rng.random_range(1..=20);
        let entries = random_window(&mut rng, &grid, n);
        let mut w = SlidingWindow::new(20).unwrap();
        for o in &entries {
            w.update(*o);
        }
        let target = rng.random_range(0.7..0.98);
        let k = rng.random_range(0..8);
        assert_eq!(manual_picks(&w, target, k), brute_force_manual(&entries, target, k));
    }
}
