//! Training-free diffusion sampling against an empirical dataset.
//!
//! Under the linear interpolation schedule `X_t = (1-α_t) X_0 + α_t Z` with
//! `α_t = t`, the noised distribution of a dataset is an equal-weight
//! Gaussian mixture with centers `(1-α_t) X_i` and covariance `α_t² I`. Its
//! score, flow velocity, and patch-local marginal scores are all closed
//! form; the backward samplers integrate them from noise back to data.
//!
//! The deterministic sampler (`eta = 0`) is an Euler pass on the flow ODE;
//! `eta > 0` adds Euler-Maruyama noise from the one-parameter family of
//! backward equations sharing the same marginals. Because the backward
//! diffusion coefficient `2t/(1-t)` blows up at `t = 1`, the stochastic
//! branch evaluates time coefficients at each step's midpoint. Both end
//! with a noiseless jump to `t = 0` using the field frozen at `t_min`
//! (the mixture density is singular below that).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::lattice::{reorganize, Lattice, Tripartition};

/// Weights this small are flushed to zero after normalization.
const WEIGHT_FLUSH: f64 = 1e-300;

/// An empirical dataset with lattice geometry for patch-local scores.
#[derive(Debug, Clone)]
pub struct Dataset {
    samples: DMatrix<f64>,
    lat: Lattice,
}

impl Dataset {
    /// `samples` has one data point per row; columns are lattice sites.
    pub fn new(samples: DMatrix<f64>, lat: Lattice) -> Result<Self> {
        if samples.nrows() == 0 {
            return Err(Error::InvalidDistribution("dataset must be nonempty".into()));
        }
        if samples.ncols() != lat.site_count() {
            return Err(Error::DimensionMismatch {
                expected: lat.site_count(),
                got: samples.ncols(),
            });
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDistribution("non-finite dataset entry".into()));
        }
        Ok(Self { samples, lat })
    }

    pub fn from_points(points: &[Vec<f64>], lat: Lattice) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidDistribution("dataset must be nonempty".into()));
        }
        let k = points[0].len();
        if points.iter().any(|p| p.len() != k) {
            return Err(Error::InvalidDistribution("ragged dataset rows".into()));
        }
        let samples = DMatrix::from_fn(points.len(), k, |i, j| points[i][j]);
        Self::new(samples, lat)
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lat
    }

    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }
}

/// Noise-level schedule `α(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlphaSchedule {
    /// `α_t = t`.
    Linear,
}

impl AlphaSchedule {
    pub fn alpha(&self, t: f64) -> f64 {
        match self {
            AlphaSchedule::Linear => t,
        }
    }
}

/// Backward time grid: `n_steps` uniform intervals from `t_max` down to
/// `t_min`, plus the final frozen jump to zero taken by the samplers.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    pub alpha: AlphaSchedule,
    pub n_steps: usize,
    pub t_min: f64,
    pub t_max: f64,
}

impl NoiseSchedule {
    pub fn new(alpha: AlphaSchedule, n_steps: usize, t_min: f64, t_max: f64) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::Domain("need at least one step".into()));
        }
        if !(0.0 < t_min && t_min < t_max && t_max <= 1.0) {
            return Err(Error::Domain(format!(
                "need 0 < t_min < t_max <= 1, got ({t_min}, {t_max})"
            )));
        }
        Ok(Self { alpha, n_steps, t_min, t_max })
    }

    /// Linear schedule from pure noise down to the default stopping time.
    pub fn linear(n_steps: usize) -> Result<Self> {
        Self::new(AlphaSchedule::Linear, n_steps, 0.01, 1.0)
    }

    /// Grid times in descending order, `t_max` first, `t_min` last.
    pub fn times(&self) -> Vec<f64> {
        let dt = (self.t_max - self.t_min) / self.n_steps as f64;
        (0..=self.n_steps)
            .map(|j| self.t_max - j as f64 * dt)
            .collect()
    }
}

/// Which score the backward update reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerMode {
    Global,
    Local,
    /// Local except inside the configured global intervals.
    Hybrid,
}

/// Backward sampler configuration.
#[derive(Debug, Clone)]
pub struct SamplerConfig {
    /// Backward-noise level: 0 is the deterministic flow, 1 the
    /// Bayes-matched stochastic sampler.
    pub eta: f64,
    pub mode: SamplerMode,
    /// Patch buffer width for local updates.
    pub r: usize,
    /// Time intervals where hybrid mode goes global.
    pub global_intervals: Vec<(f64, f64)>,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn global(seed: u64) -> Self {
        Self {
            eta: 0.0,
            mode: SamplerMode::Global,
            r: 0,
            global_intervals: Vec::new(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::Domain(format!("eta must be >= 0, got {}", self.eta)));
        }
        let mut sorted = self.global_intervals.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in sorted.windows(2) {
            if w[0].1 > w[1].0 {
                return Err(Error::Domain(format!(
                    "global intervals overlap: {:?} and {:?}",
                    w[0], w[1]
                )));
            }
        }
        for &(lo, hi) in &self.global_intervals {
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                return Err(Error::Domain(format!("bad interval ({lo}, {hi})")));
            }
        }
        Ok(())
    }

    fn is_global_at(&self, t: f64) -> bool {
        match self.mode {
            SamplerMode::Global => true,
            SamplerMode::Local => false,
            SamplerMode::Hybrid => self
                .global_intervals
                .iter()
                .any(|&(lo, hi)| t >= lo && t <= hi),
        }
    }
}

/// Softmax posterior weights of the mixture components at `x`, restricted
/// to the listed coordinates. Log-sum-exp stabilized; the weights sum to 1
/// (tiny ones are flushed to zero).
pub(crate) fn mixture_weights(
    ds: &Dataset,
    alpha: f64,
    x: &DVector<f64>,
    coords: &[usize],
) -> Vec<f64> {
    debug_assert_eq!(x.len(), coords.len());
    let shrink = 1.0 - alpha;
    let inv = 1.0 / (2.0 * alpha * alpha);
    let mut exps = Vec::with_capacity(ds.len());
    let mut max = f64::NEG_INFINITY;
    for i in 0..ds.len() {
        let mut d2 = 0.0;
        for (j, &c) in coords.iter().enumerate() {
            let diff = x[j] - shrink * ds.samples[(i, c)];
            d2 += diff * diff;
        }
        let e = -d2 * inv;
        max = max.max(e);
        exps.push(e);
    }
    let mut total = 0.0;
    for e in exps.iter_mut() {
        *e = (*e - max).exp();
        total += *e;
    }
    for e in exps.iter_mut() {
        *e /= total;
        if *e < WEIGHT_FLUSH {
            *e = 0.0;
        }
    }
    exps
}

fn check_query(ds: &Dataset, x: &DVector<f64>, expected: usize) -> Result<()> {
    let _ = ds;
    if x.len() != expected {
        return Err(Error::DimensionMismatch { expected, got: x.len() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite query point".into()));
    }
    Ok(())
}

/// Exact score `∇_x ln P_t(x)` of the noised dataset mixture:
/// `(Σ_i w_i c_i - x) / α_t²` with `c_i = (1-α_t) X_i` and softmax weights.
pub fn mixture_score(ds: &Dataset, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::Domain(format!(
            "score defined for t in (0, 1], got {t} (density singular at t = 0)"
        )));
    }
    check_query(ds, x, ds.dim())?;
    let coords: Vec<usize> = (0..ds.dim()).collect();
    let alpha = AlphaSchedule::Linear.alpha(t);
    let w = mixture_weights(ds, alpha, x, &coords);
    let mut s = DVector::zeros(ds.dim());
    for j in 0..ds.dim() {
        let mut center = 0.0;
        for (i, &wi) in w.iter().enumerate() {
            center += wi * (1.0 - alpha) * ds.samples[(i, j)];
        }
        s[j] = (center - x[j]) / (alpha * alpha);
    }
    Ok(s)
}

/// Exact log density of the mixture at `x` (used by the finite-difference
/// checks, and a handy diagnostic).
pub fn log_mixture_density(ds: &Dataset, t: f64, x: &DVector<f64>) -> Result<f64> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::Domain(format!("density defined for t in (0, 1], got {t}")));
    }
    check_query(ds, x, ds.dim())?;
    let alpha = AlphaSchedule::Linear.alpha(t);
    let inv = 1.0 / (2.0 * alpha * alpha);
    let k = ds.dim() as f64;
    let norm = -0.5 * k * (2.0 * std::f64::consts::PI * alpha * alpha).ln();
    let mut max = f64::NEG_INFINITY;
    let mut exps = Vec::with_capacity(ds.len());
    for i in 0..ds.len() {
        let mut d2 = 0.0;
        for j in 0..ds.dim() {
            let diff = x[j] - (1.0 - alpha) * ds.samples[(i, j)];
            d2 += diff * diff;
        }
        let e = -d2 * inv;
        max = max.max(e);
        exps.push(e);
    }
    let sum: f64 = exps.iter().map(|e| (e - max).exp()).sum();
    Ok(norm + max + sum.ln() - (ds.len() as f64).ln())
}

/// Score components on `A` of the `A ∪ B` marginal mixture. Marginalizing
/// an isotropic Gaussian mixture just drops coordinates, so this is the
/// same softmax form restricted to the `A ∪ B` coordinates.
///
/// `x_ab` is ordered A then B ([`Tripartition::ab_sites`]); the returned
/// vector has one component per `A` site.
pub fn local_mixture_score(
    ds: &Dataset,
    t: f64,
    x_ab: &DVector<f64>,
    part: &Tripartition,
) -> Result<DVector<f64>> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::Domain(format!("score defined for t in (0, 1], got {t}")));
    }
    if part.site_count() != ds.dim() {
        return Err(Error::DimensionMismatch { expected: ds.dim(), got: part.site_count() });
    }
    let coords = part.ab_sites();
    check_query(ds, x_ab, coords.len())?;
    let alpha = AlphaSchedule::Linear.alpha(t);
    let w = mixture_weights(ds, alpha, x_ab, &coords);
    let na = part.a().len();
    let mut s = DVector::zeros(na);
    for (j, &site) in part.a().sites().iter().enumerate() {
        let mut center = 0.0;
        for (i, &wi) in w.iter().enumerate() {
            center += wi * (1.0 - alpha) * ds.samples[(i, site)];
        }
        s[j] = (center - x_ab[j]) / (alpha * alpha);
    }
    Ok(s)
}

/// Exact flow velocity `E[X_0 - Z | X_t = x]` of the interpolation: the
/// posterior-weighted `(Σ_i w_i X_i - x) / t`. Consistent with
/// [`mixture_score`] through `v = (x + t s) / (1 - t)`.
pub fn flow_velocity(ds: &Dataset, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::Domain(format!(
            "velocity defined for t in (0, 1), got {t}"
        )));
    }
    check_query(ds, x, ds.dim())?;
    let coords: Vec<usize> = (0..ds.dim()).collect();
    Ok(velocity_inner(ds, t, x, &coords, &coords))
}

/// `(Σ w_i X_i[out] - x[out]) / t` with weights over `coords`. Regular at
/// t = 1 (uniform weights), which the public op excludes by contract.
fn velocity_inner(
    ds: &Dataset,
    t: f64,
    x: &DVector<f64>,
    coords: &[usize],
    out: &[usize],
) -> DVector<f64> {
    let alpha = AlphaSchedule::Linear.alpha(t);
    let w = mixture_weights(ds, alpha, x, coords);
    let mut v = DVector::zeros(out.len());
    for (j, &site) in out.iter().enumerate() {
        let mut mean = 0.0;
        for (i, &wi) in w.iter().enumerate() {
            mean += wi * ds.samples[(i, site)];
        }
        let pos = coords.iter().position(|&c| c == site).unwrap();
        v[j] = (mean - x[pos]) / t;
    }
    v
}

/// Score restricted to `coords`, evaluated from those coordinates only.
fn score_inner(ds: &Dataset, t: f64, x: &DVector<f64>, coords: &[usize], out: &[usize]) -> DVector<f64> {
    let alpha = AlphaSchedule::Linear.alpha(t);
    let w = mixture_weights(ds, alpha, x, coords);
    let mut s = DVector::zeros(out.len());
    for (j, &site) in out.iter().enumerate() {
        let mut center = 0.0;
        for (i, &wi) in w.iter().enumerate() {
            center += wi * (1.0 - alpha) * ds.samples[(i, site)];
        }
        let pos = coords.iter().position(|&c| c == site).unwrap();
        s[j] = (center - x[pos]) / (alpha * alpha);
    }
    s
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Integrates `n_draws` independent trajectories from `t_max` noise down to
/// `t_min`, then jumps to `t = 0` with the field frozen at `t_min`; returns
/// the endpoints. Deterministic per `(seed, draw index)`.
///
/// Local and hybrid modes update one patch at a time through the
/// reorganized sub-step schedule (regions of size 1, buffer `cfg.r`),
/// reading only `A ∪ B` coordinates per update.
pub fn sample_backward(
    ds: &Dataset,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
    n_draws: usize,
) -> Result<Vec<DVector<f64>>> {
    cfg.validate()?;
    let k = ds.dim();
    let times = schedule.times();

    // Patch geometry is shared by all draws.
    let patches: Option<Vec<(Vec<usize>, Tripartition)>> = match cfg.mode {
        SamplerMode::Global => None,
        _ => {
            let reorg = reorganize(ds.lattice(), 1, cfg.r)?;
            let mut list = Vec::new();
            for substep in reorg.substeps() {
                for region in substep {
                    let part = Tripartition::around(ds.lattice(), region.clone(), cfg.r)?;
                    list.push((part.ab_sites(), part));
                }
            }
            // Backward pass runs the schedule in reverse order.
            list.reverse();
            Some(list)
        }
    };

    let mut endpoints = Vec::with_capacity(n_draws);
    for draw in 0..n_draws {
        let mut rng = ChaCha12Rng::seed_from_u64(splitmix64(cfg.seed ^ draw as u64));
        // Exact draw from P_{t_max}: component then Gaussian. At t_max = 1
        // this is pure noise.
        let alpha0 = schedule.alpha.alpha(schedule.t_max);
        let comp = rng.gen_range(0..ds.len());
        let mut y = DVector::from_fn(k, |j, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (1.0 - alpha0) * ds.samples[(comp, j)] + alpha0 * z
        });

        for step in 0..schedule.n_steps {
            let t_hi = times[step];
            let t_lo = times[step + 1];
            let dt = t_hi - t_lo;
            // Midpoint time for the stochastic branch: the diffusion
            // coefficient 2t/(1-t) is singular at t = 1.
            let t_eval = if cfg.eta > 0.0 { 0.5 * (t_hi + t_lo) } else { t_hi };

            if cfg.is_global_at(t_hi) {
                let coords: Vec<usize> = (0..k).collect();
                let mut drift = velocity_inner(ds, t_eval, &y, &coords, &coords);
                if cfg.eta > 0.0 {
                    let s = score_inner(ds, t_eval, &y, &coords, &coords);
                    let amp = cfg.eta * cfg.eta * t_eval / (1.0 - t_eval);
                    drift += s * amp;
                    let std = cfg.eta * (2.0 * t_eval * dt / (1.0 - t_eval)).sqrt();
                    for j in 0..k {
                        y[j] += dt * drift[j] + std * Distribution::<f64>::sample(&StandardNormal, &mut rng);
                    }
                } else {
                    y += drift * dt;
                }
            } else {
                for (ab, part) in patches.as_ref().unwrap() {
                    let x_ab = DVector::from_fn(ab.len(), |j, _| y[ab[j]]);
                    let mut drift = velocity_inner(ds, t_eval, &x_ab, ab, part.a().sites());
                    if cfg.eta > 0.0 {
                        let s = score_inner(ds, t_eval, &x_ab, ab, part.a().sites());
                        let amp = cfg.eta * cfg.eta * t_eval / (1.0 - t_eval);
                        drift += s * amp;
                        let std = cfg.eta * (2.0 * t_eval * dt / (1.0 - t_eval)).sqrt();
                        for (j, &site) in part.a().sites().iter().enumerate() {
                            y[site] +=
                                dt * drift[j] + std * Distribution::<f64>::sample(&StandardNormal, &mut rng);
                        }
                    } else {
                        for (j, &site) in part.a().sites().iter().enumerate() {
                            y[site] += dt * drift[j];
                        }
                    }
                }
            }

            if y.norm() > 1e6 {
                return Err(Error::Numeric(format!(
                    "trajectory diverged at draw {draw}, step {step} (t = {t_hi:.4})"
                )));
            }
        }

        // Noiseless jump to t = 0 with the t_min field: y + t v(y, t_min),
        // the posterior-mean prediction of X_0.
        let t_min = schedule.t_min;
        if cfg.is_global_at(t_min) {
            let coords: Vec<usize> = (0..k).collect();
            let v = velocity_inner(ds, t_min, &y, &coords, &coords);
            y += v * t_min;
        } else {
            for (ab, part) in patches.as_ref().unwrap() {
                let x_ab = DVector::from_fn(ab.len(), |j, _| y[ab[j]]);
                let v = velocity_inner(ds, t_min, &x_ab, ab, part.a().sites());
                for (j, &site) in part.a().sites().iter().enumerate() {
                    y[site] += t_min * v[j];
                }
            }
        }
        endpoints.push(y);
    }
    Ok(endpoints)
}
