//! Expected hypervolume improvement for (maximize accuracy, minimize power)
//! and greedy batch selection.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::objective::{pareto_front, Configuration, ObjectivePoint, Observation};
use crate::surrogate::{normalize, GpSurrogate, Objective, Point};

/// Noise variance (standardized) given to hallucinated believer points.
pub const BELIEVER_NOISE: f64 = 1e-6;
/// Power reference as a multiple of the largest observed power.
pub const REFERENCE_POWER_FACTOR: f64 = 1.25;
/// Scores closer than this are ties and resolve by threshold, then bitrate.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// `E[(c - Y)^+]` for `Y ~ N(mu, sigma^2)`.
fn expected_shortfall(c: f64, mu: f64, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return (c - mu).max(0.0);
    }
    let z = (c - mu) / sigma;
    let n = Normal::standard();
    (c - mu) * n.cdf(z) + sigma * n.pdf(z)
}

/// Exact EHVI of a Gaussian point against a front.
///
/// `front` must be non-dominated and strictly dominate `reference`.
pub fn ehvi_gaussian(
    front: &[ObjectivePoint],
    reference: ObjectivePoint,
    accuracy: (f64, f64),
    power: (f64, f64),
) -> f64 {
    let (ma, sa) = (accuracy.0, accuracy.1.max(0.0).sqrt());
    let (mp, sp) = (power.0, power.1.max(0.0).sqrt());
    // E[(A - t)^+] = E[(-t) - (-A)]^+ with -A ~ N(-ma, sa^2)
    let alpha = |t: f64| expected_shortfall(-t, -ma, sa);
    let beta = |c: f64| expected_shortfall(c, mp, sp);

    let mut sorted: Vec<ObjectivePoint> = front.to_vec();
    sorted.sort_by(|a, b| b.accuracy.total_cmp(&a.accuracy).then(b.power_w.total_cmp(&a.power_w)));

    let mut total = 0.0;
    let mut upper_alpha = 0.0;
    let mut cap_power = reference.power_w;
    for p in &sorted {
        let a_lo = alpha(p.accuracy);
        total += (a_lo - upper_alpha) * beta(cap_power);
        upper_alpha = a_lo;
        cap_power = p.power_w;
    }
    total += (alpha(reference.accuracy) - upper_alpha) * beta(cap_power);
    total.max(0.0)
}

/// Current front, reference point and one surrogate per objective.
#[derive(Debug, Clone)]
pub struct AcquisitionContext {
    front: Vec<ObjectivePoint>,
    reference: ObjectivePoint,
    model_accuracy: GpSurrogate,
    model_power: GpSurrogate,
}

impl AcquisitionContext {
    pub fn new(
        front: Vec<ObjectivePoint>,
        reference: ObjectivePoint,
        model_accuracy: GpSurrogate,
        model_power: GpSurrogate,
    ) -> Result<Self> {
        for p in &front {
            if !(p.accuracy > reference.accuracy && p.power_w < reference.power_w) {
                return Err(Error::ReferenceNotDominated {
                    accuracy: p.accuracy,
                    power_w: p.power_w,
                });
            }
        }
        Ok(AcquisitionContext {
            front: pareto_front(&front),
            reference,
            model_accuracy,
            model_power,
        })
    }

    /// Fits both surrogates to a window and derives the front and reference
    /// point from it.
    pub fn from_observations(observations: &[Observation]) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::Empty("observation window"));
        }
        let points: Vec<ObjectivePoint> = observations.iter().map(|o| o.point).collect();
        let reference = reference_point(&points);
        let front: Vec<ObjectivePoint> = pareto_front(&points)
            .into_iter()
            .filter(|p| p.accuracy > reference.accuracy)
            .collect();
        Self::new(
            front,
            reference,
            GpSurrogate::fit(observations, Objective::Accuracy)?,
            GpSurrogate::fit(observations, Objective::Power)?,
        )
    }

    pub fn front(&self) -> &[ObjectivePoint] {
        &self.front
    }

    pub fn reference(&self) -> ObjectivePoint {
        self.reference
    }

    pub fn predict(&self, x: &Point) -> ((f64, f64), (f64, f64)) {
        (self.model_accuracy.predict(x), self.model_power.predict(x))
    }

    pub fn ehvi(&self, x: &Point) -> f64 {
        let (acc, pow) = self.predict(x);
        ehvi_gaussian(&self.front, self.reference, acc, pow)
    }

    /// Believer update: condition on the posterior mean at `x` and fold that
    /// mean into the working front.
    fn believe(&self, x: &Point) -> Result<Self> {
        let ((ma, _), (mp, _)) = self.predict(x);
        let model_accuracy = self.model_accuracy.condition(*x, ma, BELIEVER_NOISE)?;
        let model_power = self.model_power.condition(*x, mp, BELIEVER_NOISE)?;
        let mut points = self.front.clone();
        let hallucinated = ObjectivePoint::new(ma, mp);
        if ma > self.reference.accuracy && mp < self.reference.power_w {
            points.push(hallucinated);
        }
        Ok(AcquisitionContext {
            front: pareto_front(&points),
            reference: self.reference,
            model_accuracy,
            model_power,
        })
    }
}

/// `(0, 1.25 * max power)` over the given points.
pub fn reference_point(points: &[ObjectivePoint]) -> ObjectivePoint {
    let max_power = points.iter().map(|p| p.power_w).fold(0.0, f64::max);
    ObjectivePoint::new(0.0, REFERENCE_POWER_FACTOR * max_power)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub config: Configuration,
    pub ehvi: f64,
}

fn tie_break(a: &Configuration, b: &Configuration) -> std::cmp::Ordering {
    a.threshold
        .total_cmp(&b.threshold)
        .then(a.bitrate_kbps.cmp(&b.bitrate_kbps))
}

/// Greedy Kriging-Believer batch of `n` distinct candidates, each with the
/// EHVI it scored when picked.
pub fn suggest_batch_scored(
    ctx: &AcquisitionContext,
    n: usize,
    candidates: &[Configuration],
) -> Result<Vec<Suggestion>> {
    if candidates.is_empty() {
        return Err(Error::Empty("candidate set"));
    }
    if n > candidates.len() {
        return Err(Error::invalid(format!(
            "batch of {n} requested from {} candidates",
            candidates.len()
        )));
    }
    let mut pool: Vec<(Configuration, Point)> = candidates
        .iter()
        .map(|c| normalize(c).map(|x| (*c, x)))
        .collect::<Result<_>>()?;
    pool.sort_by(|a, b| tie_break(&a.0, &b.0));
    pool.dedup_by(|a, b| a.0 == b.0);
    if n > pool.len() {
        return Err(Error::invalid(format!(
            "batch of {n} requested from {} distinct candidates",
            pool.len()
        )));
    }

    let mut working = ctx.clone();
    let mut picks = Vec::with_capacity(n);
    for step in 0..n {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (i, (_, x)) in pool.iter().enumerate() {
            let s = working.ehvi(x);
            if s > best_score + TIE_TOLERANCE {
                best = i;
                best_score = s;
            }
        }
        let (config, x) = pool.remove(best);
        picks.push(Suggestion {
            config,
            ehvi: best_score,
        });
        if step + 1 < n {
            working = working.believe(&x)?;
        }
    }
    Ok(picks)
}

pub fn suggest_batch(
    ctx: &AcquisitionContext,
    n: usize,
    candidates: &[Configuration],
) -> Result<Vec<Configuration>> {
    Ok(suggest_batch_scored(ctx, n, candidates)?
        .into_iter()
        .map(|s| s.config)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::hypervolume_2d;
    use crate::surrogate::Hyperparameters;
    use proptest::prelude::*;

    fn pt(a: f64, p: f64) -> ObjectivePoint {
        ObjectivePoint::new(a, p)
    }

    #[test]
    fn degenerate_gaussian_matches_hypervolume_gain() {
        let front = vec![pt(0.9, 6.0), pt(0.7, 4.0), pt(0.5, 3.0)];
        let r = pt(0.0, 8.0);
        assert_eq!(ehvi_gaussian(&front, r, (0.6, 0.0), (4.5, 0.0)), 0.0);
        for y in [pt(0.8, 4.5), pt(0.95, 7.0), pt(0.3, 2.0), pt(0.99, 1.0)] {
            let mut with = front.clone();
            with.push(y);
            let gain = hypervolume_2d(&with, &r).unwrap() - hypervolume_2d(&front, &r).unwrap();
            let e = ehvi_gaussian(&front, r, (y.accuracy, 0.0), (y.power_w, 0.0));
            assert!((e - gain).abs() < 1e-12, "{y:?}: {e} vs {gain}");
        }
        // empty front: the whole box
        let e = ehvi_gaussian(&[], r, (0.5, 0.0), (2.0, 0.0));
        assert!((e - 0.5 * 6.0).abs() < 1e-12);
    }

    #[test]
    fn expected_shortfall_closed_form() {
        // E[(0 - Y)^+] for standard normal is 1/sqrt(2 pi)
        let v = expected_shortfall(0.0, 0.0, 1.0);
        assert!((v - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
        assert_eq!(expected_shortfall(1.0, 3.0, 0.0), 0.0);
        assert_eq!(expected_shortfall(3.0, 1.0, 0.0), 2.0);
    }

    fn flat_model(value: f64) -> GpSurrogate {
        let h = Hyperparameters {
            lengthscales: [0.1, 0.1],
            noise_var: 1e-9,
        };
        GpSurrogate::fit_fixed(&[[0.0, 0.0], [1.0, 1.0]], &[value, value], h).unwrap()
    }

    #[test]
    fn zero_variance_candidates_fall_back_to_tie_order() {
        let front = vec![pt(0.9, 5.0)];
        let ctx = AcquisitionContext::new(front, pt(0.0, 10.0), flat_model(0.9), flat_model(5.0)).unwrap();
        let cands = [
            Configuration::online(0.0, 100),
            Configuration::online(0.10, 3000),
            Configuration::online(0.0, 3000),
        ];
        // posterior variance is tiny but not exactly zero away from the
        // training inputs; only the training corners are exact
        let picks = suggest_batch_scored(&ctx, 2, &[cands[0], cands[1]]).unwrap();
        assert_eq!(picks[0].config, cands[0]);
        assert_eq!(picks[1].config, cands[1]);
        assert!(picks.iter().all(|s| s.ehvi.abs() < 1e-12));
        assert!(suggest_batch(&ctx, 4, &cands).is_err());
        assert!(suggest_batch(&ctx, 1, &[]).is_err());
    }

    #[test]
    fn reference_not_dominated_is_rejected() {
        let r = AcquisitionContext::new(vec![pt(0.5, 11.0)], pt(0.0, 10.0), flat_model(0.5), flat_model(5.0));
        assert!(matches!(r, Err(Error::ReferenceNotDominated { .. })));
    }

    proptest! {
        #[test]
        fn ehvi_order_invariant_and_monotone(
            pts in proptest::collection::vec((0.05..0.95f64, 1.0..9.0f64), 1..6),
            ma in 0.0..1.0f64, sa in 0.0..0.05f64,
            mp in 1.0..9.0f64, sp in 0.0..2.0f64,
            shift in 0.0..0.3f64,
        ) {
            let front: Vec<ObjectivePoint> = pareto_front(&pts.iter().map(|&(a, p)| pt(a, p)).collect::<Vec<_>>());
            let r = pt(0.0, 10.0);
            let e = ehvi_gaussian(&front, r, (ma, sa), (mp, sp));
            prop_assert!(e >= 0.0);
            let mut rev = front.clone();
            rev.reverse();
            prop_assert!((ehvi_gaussian(&rev, r, (ma, sa), (mp, sp)) - e).abs() < 1e-12);
            prop_assert!(ehvi_gaussian(&front, r, (ma + shift, sa), (mp, sp)) >= e - 1e-12);
            prop_assert!(ehvi_gaussian(&front, r, (ma, sa), (mp - shift, sp)) >= e - 1e-12);
        }
    }
}
