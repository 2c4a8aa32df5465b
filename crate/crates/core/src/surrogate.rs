//! Gaussian-process surrogates over the normalized (threshold, bitrate) square.

use std::cmp::Ordering;
use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{Configuration, Observation, MAX_BITRATE_KBPS, MIN_BITRATE_KBPS};

pub const MAX_THRESHOLD: f64 = 0.10;
pub const LENGTHSCALE_GRID: [f64; 4] = [0.1, 0.2, 0.5, 1.0];
pub const NOISE_GRID: [f64; 3] = [1e-4, 1e-2, 1e-1];
pub const JITTER: f64 = 1e-8;
const SD_FLOOR: f64 = 1e-12;

pub type Point = [f64; 2];

/// Maps an online configuration into the unit square.
pub fn normalize(config: &Configuration) -> Result<Point> {
    let (t, b) = (config.threshold, config.bitrate_kbps);
    if !(0.0..=MAX_THRESHOLD).contains(&t) || !(MIN_BITRATE_KBPS..=MAX_BITRATE_KBPS).contains(&b) {
        return Err(Error::OutOfBox {
            threshold: t,
            bitrate_kbps: b,
        });
    }
    let span = (MAX_BITRATE_KBPS - MIN_BITRATE_KBPS) as f64;
    Ok([t / MAX_THRESHOLD, (b - MIN_BITRATE_KBPS) as f64 / span])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Accuracy,
    Power,
}

impl Objective {
    pub fn value(self, obs: &Observation) -> f64 {
        match self {
            Objective::Accuracy => obs.point.accuracy,
            Objective::Power => obs.point.power_w,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub lengthscales: [f64; 2],
    pub noise_var: f64,
}

impl Hyperparameters {
    /// Grid cells in tie-break preference order: larger lengthscales first,
    /// then larger noise.
    pub fn grid() -> Vec<Hyperparameters> {
        let mut out = Vec::with_capacity(LENGTHSCALE_GRID.len().pow(2) * NOISE_GRID.len());
        for &lt in LENGTHSCALE_GRID.iter().rev() {
            for &lb in LENGTHSCALE_GRID.iter().rev() {
                for &noise_var in NOISE_GRID.iter().rev() {
                    out.push(Hyperparameters {
                        lengthscales: [lt, lb],
                        noise_var,
                    });
                }
            }
        }
        out
    }

    fn kernel(&self, a: &Point, b: &Point) -> f64 {
        let d0 = (a[0] - b[0]) / self.lengthscales[0];
        let d1 = (a[1] - b[1]) / self.lengthscales[1];
        (-0.5 * (d0 * d0 + d1 * d1)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardization {
    pub mean: f64,
    pub sd: f64,
}

impl Standardization {
    fn from_targets(ys: &[f64]) -> Self {
        let n = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / n;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
        Standardization {
            mean,
            sd: var.sqrt().max(SD_FLOOR),
        }
    }

    fn forward(&self, y: f64) -> f64 {
        (y - self.mean) / self.sd
    }
}

/// A fitted GP posterior. Immutable once built.
#[derive(Debug, Clone)]
pub struct GpSurrogate {
    inputs: Vec<Point>,
    targets: DVector<f64>,
    noise: Vec<f64>,
    hyper: Hyperparameters,
    scale: Standardization,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    log_ml: f64,
}

fn sort_pairs(xs: &[Point], ys: &[f64]) -> (Vec<Point>, Vec<f64>) {
    let mut pairs: Vec<(Point, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
    pairs.sort_by(|a, b| {
        a.0[0]
            .total_cmp(&b.0[0])
            .then(a.0[1].total_cmp(&b.0[1]))
            .then(a.1.total_cmp(&b.1))
    });
    pairs.into_iter().unzip()
}

fn check_inputs(xs: &[Point], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::invalid(format!("{} inputs but {} targets", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::Surrogate(format!("need at least 2 observations, got {}", xs.len())));
    }
    if xs.iter().flatten().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Surrogate("non-finite training data".into()));
    }
    Ok(())
}

impl GpSurrogate {
    /// Fits one objective of a set of observations with grid-searched
    /// hyperparameters.
    pub fn fit(observations: &[Observation], objective: Objective) -> Result<Self> {
        let mut sorted: Vec<&Observation> = observations.iter().collect();
        sorted.sort_by_key(|o| o.config);
        let xs = sorted
            .iter()
            .map(|o| normalize(&o.config))
            .collect::<Result<Vec<_>>>()?;
        let ys: Vec<f64> = sorted.iter().map(|o| objective.value(o)).collect();
        Self::fit_points(&xs, &ys)
    }

    pub fn fit_points(xs: &[Point], ys: &[f64]) -> Result<Self> {
        check_inputs(xs, ys)?;
        let (xs, ys) = sort_pairs(xs, ys);
        let mut best: Option<GpSurrogate> = None;
        for hyper in Hyperparameters::grid() {
            let Ok(model) = Self::build(&xs, &ys, hyper) else {
                continue;
            };
            if best.as_ref().is_none_or(|b| model.log_ml > b.log_ml) {
                best = Some(model);
            }
        }
        best.ok_or_else(|| Error::Surrogate("no grid cell produced a positive-definite kernel".into()))
    }

    /// Fits with the given hyperparameters; no search.
    pub fn fit_fixed(xs: &[Point], ys: &[f64], hyper: Hyperparameters) -> Result<Self> {
        check_inputs(xs, ys)?;
        if !(hyper.noise_var >= 0.0) || hyper.lengthscales.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::invalid("lengthscales must be positive and noise non-negative"));
        }
        let (xs, ys) = sort_pairs(xs, ys);
        if hyper.noise_var == 0.0 && xs.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Surrogate("duplicate inputs with zero noise variance".into()));
        }
        Self::build(&xs, &ys, hyper)
    }

    /// Log marginal likelihood of standardized targets under `hyper`.
    pub fn log_marginal_likelihood(xs: &[Point], ys: &[f64], hyper: Hyperparameters) -> Result<f64> {
        Self::fit_fixed(xs, ys, hyper).map(|m| m.log_ml)
    }

    fn build(xs: &[Point], ys: &[f64], hyper: Hyperparameters) -> Result<Self> {
        let scale = Standardization::from_targets(ys);
        let targets = DVector::from_iterator(ys.len(), ys.iter().map(|&y| scale.forward(y)));
        let noise = vec![hyper.noise_var; xs.len()];
        Self::factor(xs.to_vec(), targets, noise, hyper, scale)
    }

    fn factor(
        inputs: Vec<Point>,
        targets: DVector<f64>,
        noise: Vec<f64>,
        hyper: Hyperparameters,
        scale: Standardization,
    ) -> Result<Self> {
        let n = inputs.len();
        let k = DMatrix::from_fn(n, n, |i, j| {
            let v = hyper.kernel(&inputs[i], &inputs[j]);
            if i == j {
                v + noise[i] + JITTER
            } else {
                v
            }
        });
        let chol = k
            .cholesky()
            .ok_or_else(|| Error::Surrogate("kernel matrix is not positive definite".into()))?;
        let alpha = chol.solve(&targets);
        let log_det_half: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
        let log_ml = -0.5 * targets.dot(&alpha) - log_det_half - 0.5 * n as f64 * (2.0 * PI).ln();
        Ok(GpSurrogate {
            inputs,
            targets,
            noise,
            hyper,
            scale,
            chol,
            alpha,
            log_ml,
        })
    }

    pub fn hyperparameters(&self) -> Hyperparameters {
        self.hyper
    }

    pub fn standardization(&self) -> Standardization {
        self.scale
    }

    pub fn log_ml(&self) -> f64 {
        self.log_ml
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Posterior of the latent function in standardized units.
    pub fn predict_standardized(&self, x: &Point) -> (f64, f64) {
        let ks = DVector::from_iterator(self.inputs.len(), self.inputs.iter().map(|xi| self.hyper.kernel(xi, x)));
        let mean = ks.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .lower_triangle()
            .solve_lower_triangular(&ks)
            .expect("cholesky factor has a positive diagonal");
        let var = (1.0 - v.norm_squared()).max(0.0);
        (mean, var)
    }

    /// Posterior mean and variance in the objective's own units.
    pub fn predict(&self, x: &Point) -> (f64, f64) {
        let (m, v) = self.predict_standardized(x);
        let sd = self.scale.sd;
        (m * sd + self.scale.mean, v * sd * sd)
    }

    /// The same posterior with one extra observation `(x, y)` carrying
    /// `noise_var` (standardized units). Hyperparameters and standardization
    /// are kept as fitted.
    pub fn condition(&self, x: Point, y: f64, noise_var: f64) -> Result<Self> {
        let mut inputs = self.inputs.clone();
        inputs.push(x);
        let mut noise = self.noise.clone();
        noise.push(noise_var);
        let targets = DVector::from_iterator(
            inputs.len(),
            self.targets.iter().copied().chain([self.scale.forward(y)]),
        );
        Self::factor(inputs, targets, noise, self.hyper, self.scale)
    }
}

impl PartialEq for GpSurrogate {
    fn eq(&self, other: &Self) -> bool {
        self.inputs == other.inputs
            && self.targets == other.targets
            && self.hyper == other.hyper
            && self.scale == other.scale
    }
}

/// Orders grid cells the way fitting prefers them on equal likelihood.
pub fn preference_order(a: &Hyperparameters, b: &Hyperparameters) -> Ordering {
    b.lengthscales[0]
        .total_cmp(&a.lengthscales[0])
        .then(b.lengthscales[1].total_cmp(&a.lengthscales[1]))
        .then(b.noise_var.total_cmp(&a.noise_var))
}
