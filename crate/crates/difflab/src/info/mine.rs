//! Mutual information neural estimation from samples.
//!
//! Trains a small MLP `T` by gradient ascent on the Donsker-Varadhan bound
//! `E_joint[T] - ln E_marg[e^T]`, which lower-bounds `I(X_A : X_S)`.
//! Marginal pairs come from permuting the `X_S` column within each
//! minibatch. The gradient of the log-partition term uses a moving-average
//! estimate of `E[e^T]` (rate 0.001) to reduce minibatch bias; Adam does the
//! updates with the usual (0.9, 0.999) moments.
//!
//! The inputs here are low-dimensional coordinate vectors, so `T` is a
//! two-hidden-layer tanh MLP of width 64 rather than a convolutional net.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};

const HIDDEN_WIDTH: usize = 64;

/// Configuration for one MINE run.
#[derive(Debug, Clone)]
pub struct MineConfig {
    /// Minibatch size (>= 2).
    pub batch: usize,
    /// Adam learning rate.
    pub lr: f64,
    /// Number of gradient steps.
    pub iters: usize,
    /// Moving-average rate for the log-partition gradient correction.
    pub ema_rate: f64,
    /// RNG seed; fixed seed gives a bit-identical estimate.
    pub seed: u64,
    /// Pad the `X_B` block with zeros up to the full surrounding width when
    /// estimating `I(X_A : X_B)`, mirroring the fixed-input-width trick.
    /// With a per-run input width this is redundant, hence off by default.
    pub zero_pad: bool,
}

impl Default for MineConfig {
    fn default() -> Self {
        Self {
            batch: 256,
            lr: 1e-3,
            iters: 2000,
            ema_rate: 0.001,
            seed: 0,
            zero_pad: false,
        }
    }
}

impl MineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch < 2 {
            return Err(Error::Domain(format!(
                "batch size must be >= 2, got {}",
                self.batch
            )));
        }
        if !(self.lr > 0.0 && self.lr < 1.0) {
            return Err(Error::Domain(format!(
                "learning rate must be in (0, 1), got {}",
                self.lr
            )));
        }
        if !(self.ema_rate > 0.0 && self.ema_rate < 1.0) {
            return Err(Error::Domain(format!(
                "moving-average rate must be in (0, 1), got {}",
                self.ema_rate
            )));
        }
        if self.iters == 0 {
            return Err(Error::Domain("iteration count must be >= 1".into()));
        }
        Ok(())
    }

    fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Fully-connected network parameters: tanh hidden layers, linear output.
#[derive(Debug, Clone)]
pub struct MlpParams {
    widths: Vec<usize>,
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
}

impl MlpParams {
    /// Xavier-uniform initialization for the given layer widths.
    pub fn new(widths: Vec<usize>, rng: &mut impl Rng) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(Error::Domain(format!("bad layer widths {widths:?}")));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(DMatrix::from_fn(fan_in, fan_out, |_, _| {
                rng.gen_range(-bound..bound)
            }));
            biases.push(DVector::zeros(fan_out));
        }
        Ok(Self { widths, weights, biases })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn weights(&self) -> &[DMatrix<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[DVector<f64>] {
        &self.biases
    }

    fn layer_count(&self) -> usize {
        self.weights.len()
    }

    /// Forward pass over a batch (rows = samples). Returns all activations,
    /// `acts[0]` being the input and `acts.last()` the scalar outputs.
    fn forward(&self, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut acts = Vec::with_capacity(self.layer_count() + 1);
        acts.push(x.clone());
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = acts.last().unwrap() * w;
            for mut row in z.row_iter_mut() {
                row += b.transpose();
            }
            if i + 1 < self.layer_count() {
                z.apply(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        acts
    }

    /// Backward pass; `d_out` is the loss gradient at the scalar outputs.
    fn backward(&self, acts: &[DMatrix<f64>], d_out: &DMatrix<f64>) -> Grads {
        let layers = self.layer_count();
        let mut d_weights = Vec::with_capacity(layers);
        let mut d_biases = Vec::with_capacity(layers);
        let mut delta = d_out.clone();
        for i in (0..layers).rev() {
            d_weights.push(acts[i].transpose() * &delta);
            d_biases.push(delta.row_sum().transpose());
            if i > 0 {
                let mut d_prev = &delta * self.weights[i].transpose();
                // tanh'(z) = 1 - tanh(z)^2, and acts[i] already holds tanh(z).
                d_prev.zip_apply(&acts[i], |d, a| *d *= 1.0 - a * a);
                delta = d_prev;
            }
        }
        d_weights.reverse();
        d_biases.reverse();
        Grads { d_weights, d_biases }
    }
}

struct Grads {
    d_weights: Vec<DMatrix<f64>>,
    d_biases: Vec<DVector<f64>>,
}

impl Grads {
    fn add(&mut self, other: &Grads) {
        for (a, b) in self.d_weights.iter_mut().zip(&other.d_weights) {
            *a += b;
        }
        for (a, b) in self.d_biases.iter_mut().zip(&other.d_biases) {
            *a += b;
        }
    }
}

struct Adam {
    m_w: Vec<DMatrix<f64>>,
    v_w: Vec<DMatrix<f64>>,
    m_b: Vec<DVector<f64>>,
    v_b: Vec<DVector<f64>>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(params: &MlpParams, lr: f64) -> Self {
        Self {
            m_w: params.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            v_w: params.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            m_b: params.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
            v_b: params.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut MlpParams, grads: &Grads) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.weights.len() {
            update(&mut self.m_w[i], &mut self.v_w[i], &grads.d_weights[i]);
            let w = &mut params.weights[i];
            for ((w, m), v) in w.iter_mut().zip(self.m_w[i].iter()).zip(self.v_w[i].iter()) {
                *w -= self.lr * (m / c1) / ((v / c2).sqrt() + Self::EPS);
            }
            update_vec(&mut self.m_b[i], &mut self.v_b[i], &grads.d_biases[i]);
            let b = &mut params.biases[i];
            for ((b, m), v) in b.iter_mut().zip(self.m_b[i].iter()).zip(self.v_b[i].iter()) {
                *b -= self.lr * (m / c1) / ((v / c2).sqrt() + Self::EPS);
            }
        }

        fn update(m: &mut DMatrix<f64>, v: &mut DMatrix<f64>, g: &DMatrix<f64>) {
            for ((m, v), g) in m.iter_mut().zip(v.iter_mut()).zip(g.iter()) {
                *m = Adam::BETA1 * *m + (1.0 - Adam::BETA1) * g;
                *v = Adam::BETA2 * *v + (1.0 - Adam::BETA2) * g * g;
            }
        }
        fn update_vec(m: &mut DVector<f64>, v: &mut DVector<f64>, g: &DVector<f64>) {
            for ((m, v), g) in m.iter_mut().zip(v.iter_mut()).zip(g.iter()) {
                *m = Adam::BETA1 * *m + (1.0 - Adam::BETA1) * g;
                *v = Adam::BETA2 * *v + (1.0 - Adam::BETA2) * g * g;
            }
        }
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Estimates `I(X_A : X_S)` in nats from paired samples (rows).
///
/// Returns the Donsker-Varadhan value of the trained network evaluated over
/// the full sample set, with marginal pairs formed by a fixed half-rotation
/// of the `X_S` rows.
pub fn mine_estimate(xa: &DMatrix<f64>, xs: &DMatrix<f64>, cfg: &MineConfig) -> Result<f64> {
    cfg.validate()?;
    let n = xa.nrows();
    if xs.nrows() != n {
        return Err(Error::DimensionMismatch { expected: n, got: xs.nrows() });
    }
    if n < cfg.batch {
        return Err(Error::Domain(format!(
            "need at least {} samples, got {n}",
            cfg.batch
        )));
    }
    if xa.iter().chain(xs.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidDistribution("non-finite sample entry".into()));
    }

    let dim = xa.ncols() + xs.ncols();
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut params = MlpParams::new(vec![dim, HIDDEN_WIDTH, HIDDEN_WIDTH, 1], &mut rng)?;
    let mut adam = Adam::new(&params, cfg.lr);
    let mut ln_ema: Option<f64> = None;

    let inv_batch = 1.0 / cfg.batch as f64;
    let mut joint = DMatrix::zeros(cfg.batch, dim);
    let mut marg = DMatrix::zeros(cfg.batch, dim);
    let mut perm: Vec<usize> = (0..cfg.batch).collect();

    for iter in 0..cfg.iters {
        // Joint minibatch, then an in-batch permutation of the X_S column
        // for the marginal term.
        let idx: Vec<usize> = (0..cfg.batch).map(|_| rng.gen_range(0..n)).collect();
        for p in perm.iter_mut() {
            *p = rng.gen_range(0..cfg.batch);
        }
        for (b, &i) in idx.iter().enumerate() {
            for c in 0..xa.ncols() {
                joint[(b, c)] = xa[(i, c)];
                marg[(b, c)] = xa[(i, c)];
            }
            for c in 0..xs.ncols() {
                joint[(b, xa.ncols() + c)] = xs[(i, c)];
                marg[(b, xa.ncols() + c)] = xs[(idx[perm[b]], c)];
            }
        }

        let acts_joint = params.forward(&joint);
        let acts_marg = params.forward(&marg);
        let t_joint = acts_joint.last().unwrap();
        let t_marg = acts_marg.last().unwrap();

        let ln_mean_et = log_sum_exp(t_marg.iter().copied()) - (cfg.batch as f64).ln();
        let dv = t_joint.iter().sum::<f64>() * inv_batch - ln_mean_et;
        if !dv.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite objective at iteration {iter}: {dv}"
            )));
        }
        ln_ema = Some(match ln_ema {
            None => ln_mean_et,
            Some(prev) => log_add_exp(
                (1.0 - cfg.ema_rate).ln() + prev,
                cfg.ema_rate.ln() + ln_mean_et,
            ),
        });
        let ln_ema_val = ln_ema.unwrap();

        // Ascent on E[T] - ln E[e^T]  =>  descent gradients below.
        let d_joint = DMatrix::from_element(cfg.batch, 1, -inv_batch);
        let d_marg = DMatrix::from_fn(cfg.batch, 1, |b, _| {
            (t_marg[(b, 0)] - ln_ema_val - (cfg.batch as f64).ln()).exp()
        });

        let mut grads = params.backward(&acts_joint, &d_joint);
        grads.add(&params.backward(&acts_marg, &d_marg));
        adam.step(&mut params, &grads);
    }

    // Full-pass evaluation with a deterministic half-rotation pairing.
    let shift = (n / 2).max(1);
    let mut joint_all = DMatrix::zeros(n, dim);
    let mut marg_all = DMatrix::zeros(n, dim);
    for i in 0..n {
        let j = (i + shift) % n;
        for c in 0..xa.ncols() {
            joint_all[(i, c)] = xa[(i, c)];
            marg_all[(i, c)] = xa[(i, c)];
        }
        for c in 0..xs.ncols() {
            joint_all[(i, xa.ncols() + c)] = xs[(i, c)];
            marg_all[(i, xa.ncols() + c)] = xs[(j, c)];
        }
    }
    let t_joint = params.forward(&joint_all);
    let t_marg = params.forward(&marg_all);
    let mean_joint = t_joint.last().unwrap().iter().sum::<f64>() / n as f64;
    let ln_mean_et = log_sum_exp(t_marg.last().unwrap().iter().copied()) - (n as f64).ln();
    let estimate = mean_joint - ln_mean_et;
    if !estimate.is_finite() {
        return Err(Error::Numeric(format!("non-finite final estimate {estimate}")));
    }
    Ok(estimate)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn concat_cols(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(a);
    out.view_mut((0, a.ncols()), (b.nrows(), b.ncols())).copy_from(b);
    out
}

/// Estimates `I(X_A : X_C | X_B) = I(X_A : X_B X_C) - I(X_A : X_B)` from
/// samples of the three blocks, as two MINE runs with seeds derived from
/// `cfg.seed`.
pub fn cmi_via_mine(
    xa: &DMatrix<f64>,
    xb: &DMatrix<f64>,
    xc: &DMatrix<f64>,
    cfg: &MineConfig,
) -> Result<f64> {
    if xb.nrows() != xa.nrows() || xc.nrows() != xa.nrows() {
        return Err(Error::DimensionMismatch { expected: xa.nrows(), got: xb.nrows().min(xc.nrows()) });
    }
    let xbc = concat_cols(xb, xc);
    let i_abc = mine_estimate(xa, &xbc, &cfg.with_seed(splitmix64(cfg.seed ^ 0xA5)))?;
    let xs_b = if cfg.zero_pad {
        concat_cols(xb, &DMatrix::zeros(xc.nrows(), xc.ncols()))
    } else {
        xb.clone()
    };
    let i_ab = mine_estimate(xa, &xs_b, &cfg.with_seed(splitmix64(cfg.seed ^ 0x5A)))?;
    Ok(i_abc - i_ab)
}
