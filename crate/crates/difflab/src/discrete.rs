//! Exact diffusion and denoising on enumerable discrete distributions.
//!
//! Channels act on a region of sites and leave the rest untouched. Their
//! Bayes reversal against a reference distribution `P` is the exact
//! conditional `B(x|y) = N(y|x) P(x) / N(P)(y)`; the local variant reads
//! `A ∪ B` and rewrites only `A`, conditioning on the marginal of `P` over
//! `A ∪ B`. Continuous-time evolution goes through sparse rate generators
//! and an RK4 master-equation integrator.
//!
//! Channels are kept site-factored where possible; dense kernels are only
//! materialized on regions of at most [`MAX_DENSE_SITES`] sites.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::info::{cmi, kl, stable_sum, tv, FiniteDist};
use crate::lattice::{reorganize, Lattice, Region, Tripartition};

/// Largest region for which a dense `2^m x 2^m` kernel may be built.
pub const MAX_DENSE_SITES: usize = 12;

fn extract_bits(x: u64, sites: &[usize]) -> u64 {
    let mut out = 0u64;
    for (j, &s) in sites.iter().enumerate() {
        out |= (x >> s & 1) << j;
    }
    out
}

fn insert_bits(x: u64, sites: &[usize], value: u64) -> u64 {
    let mut out = x;
    for (j, &s) in sites.iter().enumerate() {
        out = (out & !(1u64 << s)) | ((value >> j & 1) << s);
    }
    out
}

/// Independent symmetric bit flips with probability `p` on each site of a
/// region.
#[derive(Debug, Clone)]
pub struct FlipChannel {
    p: f64,
    sites: Region,
}

impl FlipChannel {
    pub fn new(p: f64, sites: Region) -> Result<Self> {
        if !(0.0..=0.5).contains(&p) {
            return Err(Error::InvalidChannel(format!(
                "flip probability must be in [0, 1/2], got {p}"
            )));
        }
        Ok(Self { p, sites })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn sites(&self) -> &Region {
        &self.sites
    }
}

/// Master-equation time matching a flip probability: `t = -ln(1 - 2p)`.
///
/// Returns `+∞` at `p = 1/2` (full mixing is reached only asymptotically).
pub fn flip_time(p: f64) -> Result<f64> {
    if !(0.0..=0.5).contains(&p) {
        return Err(Error::Domain(format!(
            "flip probability must be in [0, 1/2], got {p}"
        )));
    }
    if p == 0.5 {
        return Ok(f64::INFINITY);
    }
    Ok(-(1.0 - 2.0 * p).ln())
}

/// A stochastic channel on a subset of sites, identity elsewhere.
#[derive(Debug, Clone)]
pub enum StochChannel {
    /// Independent per-site flips.
    Flip(FlipChannel),
    /// Arbitrary row-stochastic kernel on a small region:
    /// `kernel[x_local][y_local] = N(y|x)`.
    Dense { region: Region, kernel: Vec<Vec<f64>> },
    /// Deterministic reset of every site in the region to 0.
    Reset(Region),
    /// Each mask XOR-applied independently with probability 1/2.
    XorMix { sites: Region, masks: Vec<u64> },
}

impl StochChannel {
    pub fn dense(region: Region, kernel: Vec<Vec<f64>>) -> Result<Self> {
        let m = region.len();
        if m > MAX_DENSE_SITES {
            return Err(Error::InvalidChannel(format!(
                "dense kernel on {m} sites exceeds the {MAX_DENSE_SITES}-site guard"
            )));
        }
        let n = 1usize << m;
        if kernel.len() != n || kernel.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidChannel(format!(
                "kernel must be {n} x {n} for a {m}-site region"
            )));
        }
        for row in &kernel {
            if row.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::InvalidChannel("negative kernel entry".into()));
            }
            let total = stable_sum(row.iter().copied());
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidChannel(format!(
                    "kernel row sums to {total}, expected 1"
                )));
            }
        }
        Ok(Self::Dense { region, kernel })
    }

    /// Region the channel acts on.
    pub fn region(&self) -> &Region {
        match self {
            Self::Flip(f) => &f.sites,
            Self::Dense { region, .. } => region,
            Self::Reset(region) => region,
            Self::XorMix { sites, .. } => sites,
        }
    }

    /// Pushes a distribution through the channel. Probability is preserved
    /// to the tolerance enforced by [`FiniteDist::new`].
    pub fn apply(&self, p: &FiniteDist) -> Result<FiniteDist> {
        self.region().check_bounds(p.site_count())?;
        let n = p.state_count();
        match self {
            Self::Flip(f) => {
                let mut cur = p.probs().to_vec();
                for &s in f.sites.sites() {
                    let bit = 1usize << s;
                    let mut next = vec![0.0; n];
                    for (x, v) in next.iter_mut().enumerate() {
                        *v = (1.0 - f.p) * cur[x] + f.p * cur[x ^ bit];
                    }
                    cur = next;
                }
                FiniteDist::new(p.site_count(), cur)
            }
            Self::Dense { region, kernel } => {
                let mut out = vec![0.0; n];
                for (x, &px) in p.probs().iter().enumerate() {
                    if px == 0.0 {
                        continue;
                    }
                    let x_loc = extract_bits(x as u64, region.sites()) as usize;
                    for (y_loc, &prob) in kernel[x_loc].iter().enumerate() {
                        if prob > 0.0 {
                            let y = insert_bits(x as u64, region.sites(), y_loc as u64);
                            out[y as usize] += px * prob;
                        }
                    }
                }
                FiniteDist::new(p.site_count(), out)
            }
            Self::Reset(region) => {
                let mut out = vec![0.0; n];
                for (x, &px) in p.probs().iter().enumerate() {
                    if px > 0.0 {
                        out[insert_bits(x as u64, region.sites(), 0) as usize] += px;
                    }
                }
                FiniteDist::new(p.site_count(), out)
            }
            Self::XorMix { masks, .. } => {
                let mut cur = p.probs().to_vec();
                for &mask in masks {
                    let mut next = vec![0.0; n];
                    for (x, v) in next.iter_mut().enumerate() {
                        *v = 0.5 * cur[x] + 0.5 * cur[x ^ mask as usize];
                    }
                    cur = next;
                }
                FiniteDist::new(p.site_count(), cur)
            }
        }
    }

    /// Dense `N(y_local | x_local)` kernel over the acting region.
    fn kernel_matrix(&self) -> Result<Vec<Vec<f64>>> {
        let m = self.region().len();
        if m > MAX_DENSE_SITES {
            return Err(Error::InvalidChannel(format!(
                "cannot materialize a kernel on {m} sites (guard is {MAX_DENSE_SITES})"
            )));
        }
        let n = 1usize << m;
        match self {
            Self::Flip(f) => {
                let mut kernel = vec![vec![0.0; n]; n];
                for (x, row) in kernel.iter_mut().enumerate() {
                    for (y, v) in row.iter_mut().enumerate() {
                        let h = (x ^ y).count_ones() as i32;
                        *v = f.p.powi(h) * (1.0 - f.p).powi(m as i32 - h);
                    }
                }
                Ok(kernel)
            }
            Self::Dense { kernel, .. } => Ok(kernel.clone()),
            Self::Reset(_) => {
                let mut kernel = vec![vec![0.0; n]; n];
                for row in kernel.iter_mut() {
                    row[0] = 1.0;
                }
                Ok(kernel)
            }
            Self::XorMix { sites, masks } => {
                let weight = 0.5f64.powi(masks.len() as i32);
                let mut kernel = vec![vec![0.0; n]; n];
                for subset in 0u64..(1 << masks.len()) {
                    let mut xor = 0u64;
                    for (i, &mask) in masks.iter().enumerate() {
                        if subset >> i & 1 == 1 {
                            xor ^= mask;
                        }
                    }
                    let xor_loc = extract_bits(xor, sites.sites()) as usize;
                    for (x, row) in kernel.iter_mut().enumerate() {
                        row[x ^ xor_loc] += weight;
                    }
                }
                Ok(kernel)
            }
        }
    }
}

/// Exact global Bayes reversal of a channel against a reference
/// distribution.
#[derive(Debug, Clone)]
pub struct BayesChannel {
    region: Region,
    kernel: Vec<Vec<f64>>,
    prior: FiniteDist,
    pushed: FiniteDist,
    prior_support: Vec<u64>,
}

/// Builds the recovery channel `B(x|y) = N(y|x) P(x) / N(P)(y)`.
///
/// Outputs `y` with `N(P)(y) = 0` have no defined conditional; applying the
/// channel assigns such mass uniformly over the prior's support and flags
/// it. Those outputs are never produced by the matching forward channel.
pub fn bayes_channel(ch: &StochChannel, prior: &FiniteDist) -> Result<BayesChannel> {
    ch.region().check_bounds(prior.site_count())?;
    let kernel = ch.kernel_matrix()?;
    let pushed = ch.apply(prior)?;
    let prior_support = prior
        .probs()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(x, _)| x as u64)
        .collect();
    Ok(BayesChannel {
        region: ch.region().clone(),
        kernel,
        prior: prior.clone(),
        pushed,
        prior_support,
    })
}

impl BayesChannel {
    /// Pushes a distribution through the reverse channel. The flag reports
    /// whether any mass hit an output with undefined conditional.
    pub fn apply(&self, q: &FiniteDist) -> Result<(FiniteDist, bool)> {
        if q.site_count() != self.prior.site_count() {
            return Err(Error::DimensionMismatch {
                expected: self.prior.site_count(),
                got: q.site_count(),
            });
        }
        let n = q.state_count();
        let mut out = vec![0.0; n];
        let mut fallback = false;
        let sites = self.region.sites();
        for (y, &qy) in q.probs().iter().enumerate() {
            if qy == 0.0 {
                continue;
            }
            let pushed_y = self.pushed.prob(y as u64);
            if pushed_y > 0.0 {
                let y_loc = extract_bits(y as u64, sites) as usize;
                for x_loc in 0..self.kernel.len() {
                    let k = self.kernel[x_loc][y_loc];
                    if k == 0.0 {
                        continue;
                    }
                    let x = insert_bits(y as u64, sites, x_loc as u64);
                    let px = self.prior.prob(x);
                    if px > 0.0 {
                        out[x as usize] += qy * k * px / pushed_y;
                    }
                }
            } else {
                fallback = true;
                let share = qy / self.prior_support.len() as f64;
                for &s in &self.prior_support {
                    out[s as usize] += share;
                }
            }
        }
        Ok((FiniteDist::new(q.site_count(), out)?, fallback))
    }
}

/// Local Bayes recovery: reads `A ∪ B`, rewrites only `A`, conditioning on
/// the reference marginal over `A ∪ B`.
#[derive(Debug, Clone)]
pub struct LocalBayesChannel {
    a_sites: Vec<usize>,
    b_sites: Vec<usize>,
    kernel: Vec<Vec<f64>>,
    prior_ab: FiniteDist,
    /// denominators indexed `y_a | (x_b << |A|)`
    den: Vec<f64>,
    site_count: usize,
}

/// Builds the local recovery channel from a channel on `A` and the exact
/// marginal of the current global state on `A ∪ B` (coordinates ordered A
/// then B, as produced by [`Tripartition::ab_sites`]).
pub fn local_bayes_channel(
    ch: &StochChannel,
    prior_ab: &FiniteDist,
    part: &Tripartition,
) -> Result<LocalBayesChannel> {
    if ch.region() != part.a() {
        return Err(Error::InvalidChannel(
            "channel must act exactly on region A of the tripartition".into(),
        ));
    }
    let na = part.a().len();
    let nb = part.b().len();
    if prior_ab.site_count() != na + nb {
        return Err(Error::DimensionMismatch {
            expected: na + nb,
            got: prior_ab.site_count(),
        });
    }
    let kernel = ch.kernel_matrix()?;
    let mut den = vec![0.0; 1 << (na + nb)];
    for x_b in 0..1usize << nb {
        for y_a in 0..1usize << na {
            let mut total = 0.0;
            for (x_a, row) in kernel.iter().enumerate() {
                total += row[y_a] * prior_ab.prob((x_a | (x_b << na)) as u64);
            }
            den[y_a | (x_b << na)] = total;
        }
    }
    Ok(LocalBayesChannel {
        a_sites: part.a().sites().to_vec(),
        b_sites: part.b().sites().to_vec(),
        kernel,
        prior_ab: prior_ab.clone(),
        den,
        site_count: part.site_count(),
    })
}

impl LocalBayesChannel {
    pub fn apply(&self, q: &FiniteDist) -> Result<(FiniteDist, bool)> {
        if q.site_count() != self.site_count {
            return Err(Error::DimensionMismatch {
                expected: self.site_count,
                got: q.site_count(),
            });
        }
        let na = self.a_sites.len();
        let n_a_states = 1usize << na;
        let mut out = vec![0.0; q.state_count()];
        let mut fallback = false;
        for (y, &qy) in q.probs().iter().enumerate() {
            if qy == 0.0 {
                continue;
            }
            let y_a = extract_bits(y as u64, &self.a_sites) as usize;
            let x_b = extract_bits(y as u64, &self.b_sites) as usize;
            let d = self.den[y_a | (x_b << na)];
            if d > 0.0 {
                for x_a in 0..n_a_states {
                    let k = self.kernel[x_a][y_a];
                    if k == 0.0 {
                        continue;
                    }
                    let w = k * self.prior_ab.prob((x_a | (x_b << na)) as u64) / d;
                    if w > 0.0 {
                        out[insert_bits(y as u64, &self.a_sites, x_a as u64) as usize] += qy * w;
                    }
                }
            } else {
                // Conditional undefined for this (y_a, x_b): spread over the
                // reference support of x_a given x_b, or evenly if empty.
                fallback = true;
                let support: Vec<usize> = (0..n_a_states)
                    .filter(|&x_a| self.prior_ab.prob((x_a | (x_b << na)) as u64) > 0.0)
                    .collect();
                let states = if support.is_empty() {
                    (0..n_a_states).collect()
                } else {
                    support
                };
                let share = qy / states.len() as f64;
                for x_a in states {
                    out[insert_bits(y as u64, &self.a_sites, x_a as u64) as usize] += share;
                }
            }
        }
        Ok((FiniteDist::new(q.site_count(), out)?, fallback))
    }
}

/// Sparse continuous-time generator: off-diagonal rates `λ(y|x) >= 0` for
/// jumps `x -> y`; the diagonal is implied by probability conservation.
#[derive(Debug, Clone, Default)]
pub struct RateGenerator {
    site_count: usize,
    rates: BTreeMap<(u64, u64), f64>,
}

impl RateGenerator {
    pub fn new(site_count: usize) -> Self {
        Self { site_count, rates: BTreeMap::new() }
    }

    /// All single-site flips at the given rate.
    pub fn symmetric_flip(site_count: usize, rate: f64) -> Self {
        let mut gen = Self::new(site_count);
        for x in 0..1u64 << site_count {
            for s in 0..site_count {
                gen.rates.insert((x, x ^ (1 << s)), rate);
            }
        }
        gen
    }

    pub fn set_rate(&mut self, from: u64, to: u64, rate: f64) -> Result<()> {
        let n = 1u64 << self.site_count;
        if from >= n || to >= n {
            return Err(Error::Domain(format!(
                "state out of range for {} sites",
                self.site_count
            )));
        }
        if from == to {
            return Err(Error::Domain("diagonal rates are implied".into()));
        }
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(Error::Domain(format!("rate must be nonnegative, got {rate}")));
        }
        self.rates.insert((from, to), rate);
        Ok(())
    }

    pub fn rate(&self, from: u64, to: u64) -> f64 {
        self.rates.get(&(from, to)).copied().unwrap_or(0.0)
    }

    pub fn site_count(&self) -> usize {
        self.site_count
    }

    pub fn jumps(&self) -> impl Iterator<Item = (u64, u64, f64)> + '_ {
        self.rates.iter().map(|(&(f, t), &r)| (f, t, r))
    }

    /// `out = L p` with the diagonal completed by the row-sum constraint.
    fn derivative(&self, p: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (&(from, to), &rate) in &self.rates {
            let flow = rate * p[from as usize];
            out[to as usize] += flow;
            out[from as usize] -= flow;
        }
    }
}

/// Exact reversal of a rate generator against a distribution: the reverse
/// jump `y -> x` runs at `λ(y|x) P(x) / P(y)`.
pub fn reverse_rates(gen: &RateGenerator, p: &FiniteDist) -> Result<RateGenerator> {
    if gen.site_count() != p.site_count() {
        return Err(Error::DimensionMismatch {
            expected: gen.site_count(),
            got: p.site_count(),
        });
    }
    let mut rev = RateGenerator::new(gen.site_count());
    for (from, to, rate) in gen.jumps() {
        if rate == 0.0 {
            continue;
        }
        let p_from = p.prob(from);
        let p_to = p.prob(to);
        if p_to == 0.0 {
            if p_from == 0.0 {
                continue;
            }
            return Err(Error::ZeroProbabilityState { state: to });
        }
        rev.rates.insert((to, from), rate * p_from / p_to);
    }
    Ok(rev)
}

/// RK4 integration of the master equation `dP/dt = L(t) P` over `duration`.
///
/// The state is renormalized after every step; per-step mass drift beyond
/// 1e-9 or negative probabilities beyond -1e-9 abort with an error (the
/// step size is too coarse for the given rates).
pub fn integrate_master<F>(
    gen_at: F,
    p0: &FiniteDist,
    duration: f64,
    steps: usize,
) -> Result<FiniteDist>
where
    F: Fn(f64) -> RateGenerator,
{
    if steps == 0 {
        return Err(Error::Domain("step count must be >= 1".into()));
    }
    if !(duration >= 0.0) || !duration.is_finite() {
        return Err(Error::Domain(format!("bad duration {duration}")));
    }
    let n = p0.state_count();
    let h = duration / steps as f64;
    let mut state = p0.probs().to_vec();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    for step in 0..steps {
        let t = step as f64 * h;
        let g0 = gen_at(t);
        let g_half = gen_at(t + 0.5 * h);
        let g1 = gen_at(t + h);

        g0.derivative(&state, &mut k1);
        for i in 0..n {
            tmp[i] = state[i] + 0.5 * h * k1[i];
        }
        g_half.derivative(&tmp, &mut k2);
        for i in 0..n {
            tmp[i] = state[i] + 0.5 * h * k2[i];
        }
        g_half.derivative(&tmp, &mut k3);
        for i in 0..n {
            tmp[i] = state[i] + h * k3[i];
        }
        g1.derivative(&tmp, &mut k4);
        for i in 0..n {
            state[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }

        let total = stable_sum(state.iter().copied());
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Numeric(format!(
                "mass drift {} at step {step}",
                total - 1.0
            )));
        }
        for v in state.iter_mut() {
            if *v < 0.0 {
                if *v < -1e-9 {
                    return Err(Error::Numeric(format!(
                        "negative probability {v} at step {step}; step size too coarse"
                    )));
                }
                *v = 0.0;
            }
            *v /= total;
        }
    }
    FiniteDist::new(p0.site_count(), state)
}

/// Outcome of a reorganized forward/backward run with local recovery.
#[derive(Debug, Clone)]
pub struct MultiStepReport {
    /// `TV(P_0, recovered)`
    pub tv_total: f64,
    /// Sum of per-channel recovery errors `TV(B∘N(P_pre), P_pre)`, the
    /// telescoping upper bound on `tv_total`.
    pub tv_step_sum: f64,
    /// `KL(P_0 ‖ recovered)`
    pub kl_total: f64,
    /// Number of local channels applied.
    pub channels: usize,
}

/// Runs `flip_ps.len()` noising steps through the reorganized schedule, then
/// recovers with local Bayes channels in exact reverse order.
///
/// Each local channel's reference marginal is taken from the exactly
/// propagated state before its sub-step, matching the construction the
/// telescoping bound assumes.
pub fn multi_step_local_recovery(
    p0: &FiniteDist,
    lat: &Lattice,
    k: usize,
    r: usize,
    flip_ps: &[f64],
) -> Result<MultiStepReport> {
    if lat.site_count() != p0.site_count() {
        return Err(Error::DimensionMismatch {
            expected: p0.site_count(),
            got: lat.site_count(),
        });
    }
    let schedule = reorganize(lat, k, r)?;
    let mut state = p0.clone();
    let mut recorded: Vec<LocalBayesChannel> = Vec::new();
    let mut tv_step_sum = 0.0;

    for &p_flip in flip_ps {
        for substep in schedule.substeps() {
            let pre = state.clone();
            for region in substep {
                let part = Tripartition::around(lat, region.clone(), r)?;
                let ch = StochChannel::Flip(FlipChannel::new(p_flip, region.clone())?);
                let prior_ab = pre.marginal(&part.ab_sites())?;
                let local = local_bayes_channel(&ch, &prior_ab, &part)?;

                let noised_pre = ch.apply(&pre)?;
                let (recovered_pre, _) = local.apply(&noised_pre)?;
                tv_step_sum += tv(&recovered_pre, &pre)?;

                state = ch.apply(&state)?;
                recorded.push(local);
            }
        }
    }

    for local in recorded.iter().rev() {
        let (next, _) = local.apply(&state)?;
        state = next;
    }

    Ok(MultiStepReport {
        tv_total: tv(&state, p0)?,
        tv_step_sum,
        kl_total: kl(p0, &state)?,
        channels: recorded.len(),
    })
}

fn random_dist(k: usize, rng: &mut impl Rng) -> FiniteDist {
    let weights: Vec<f64> = (0..1usize << k).map(|_| -f64::ln(rng.gen::<f64>())).collect();
    FiniteDist::from_weights(k, weights).unwrap()
}

fn random_channel_on(region: &Region, rng: &mut impl Rng) -> StochChannel {
    if rng.gen_bool(0.5) {
        StochChannel::Flip(FlipChannel::new(rng.gen_range(0.0..=0.5), region.clone()).unwrap())
    } else {
        let n = 1usize << region.len();
        let kernel: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let row: Vec<f64> = (0..n).map(|_| -f64::ln(rng.gen::<f64>())).collect();
                let total: f64 = row.iter().sum();
                row.into_iter().map(|v| v / total).collect()
            })
            .collect();
        StochChannel::dense(region.clone(), kernel).unwrap()
    }
}

fn random_tripartition(rng: &mut impl Rng) -> (Lattice, Tripartition) {
    loop {
        let l = rng.gen_range(3..=7usize);
        let lat = Lattice::line(l, rng.gen()).unwrap();
        let center = rng.gen_range(0..l);
        let k_block = rng.gen_range(1..=2usize.min(l));
        let r = rng.gen_range(0..=2usize);
        if let Ok(part) = crate::lattice::build_tripartition(&lat, center, k_block, r) {
            return (lat, part);
        }
    }
}

/// Worst-case margins from exact single-step Bayes round trips.
#[derive(Debug, Clone)]
pub struct BayesRoundtripReport {
    pub instances: usize,
    pub max_tv: f64,
}

/// Pushes random `(P, channel)` pairs forward and back through the exact
/// global Bayes reversal; reports the largest `TV(B∘N(P), P)`.
pub fn bayes_roundtrip_suite(
    instances: usize,
    max_sites: usize,
    seed: u64,
) -> Result<BayesRoundtripReport> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut max_tv = 0.0f64;
    for _ in 0..instances {
        let k = rng.gen_range(2..=max_sites);
        let p = random_dist(k, &mut rng);
        let region_size = rng.gen_range(1..=3.min(k));
        let mut sites: Vec<usize> = (0..k).collect();
        for i in (1..sites.len()).rev() {
            sites.swap(i, rng.gen_range(0..=i));
        }
        sites.truncate(region_size);
        let region = Region::new(sites)?;
        let ch = random_channel_on(&region, &mut rng);
        let pushed = ch.apply(&p)?;
        let reverse = bayes_channel(&ch, &p)?;
        let (recovered, fallback) = reverse.apply(&pushed)?;
        debug_assert!(!fallback);
        max_tv = max_tv.max(tv(&recovered, &p)?);
    }
    Ok(BayesRoundtripReport { instances, max_tv })
}

/// Violation counts and worst margins for the recovery-error chain
/// `2 TV² <= KL(P‖P̂) <= I_before - I_after <= I_before` over random
/// `(P, channel, tripartition)` instances.
#[derive(Debug, Clone)]
pub struct FawziChainReport {
    pub instances: usize,
    pub pinsker_violations: usize,
    pub kl_cmi_violations: usize,
    pub kl_dcmi_violations: usize,
    /// max of `2 TV² - KL` (should be <= 0)
    pub max_pinsker_margin: f64,
    /// max of `KL - CMI` (should be <= 0)
    pub max_kl_cmi_margin: f64,
    /// max of `KL - (I_before - I_after)` (should be <= 0)
    pub max_kl_dcmi_margin: f64,
}

pub fn fawzi_chain_suite(instances: usize, seed: u64) -> Result<FawziChainReport> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut report = FawziChainReport {
        instances,
        pinsker_violations: 0,
        kl_cmi_violations: 0,
        kl_dcmi_violations: 0,
        max_pinsker_margin: f64::NEG_INFINITY,
        max_kl_cmi_margin: f64::NEG_INFINITY,
        max_kl_dcmi_margin: f64::NEG_INFINITY,
    };
    for _ in 0..instances {
        let (_, part) = random_tripartition(&mut rng);
        let k = part.site_count();
        let p = random_dist(k, &mut rng);
        let ch = random_channel_on(part.a(), &mut rng);

        let cmi_before = cmi(&p, &part)?;
        let noisy = ch.apply(&p)?;
        let cmi_after = cmi(&noisy, &part)?;
        let prior_ab = p.marginal(&part.ab_sites())?;
        let local = local_bayes_channel(&ch, &prior_ab, &part)?;
        let (recovered, _) = local.apply(&noisy)?;

        let kl_val = kl(&p, &recovered)?;
        let tv_val = tv(&p, &recovered)?;

        let pinsker = 2.0 * tv_val * tv_val - kl_val;
        let kl_cmi = kl_val - cmi_before;
        let kl_dcmi = kl_val - (cmi_before - cmi_after);
        if pinsker > 1e-12 {
            report.pinsker_violations += 1;
        }
        if kl_cmi > 1e-9 {
            report.kl_cmi_violations += 1;
        }
        if kl_dcmi > 1e-9 {
            report.kl_dcmi_violations += 1;
        }
        report.max_pinsker_margin = report.max_pinsker_margin.max(pinsker);
        report.max_kl_cmi_margin = report.max_kl_cmi_margin.max(kl_cmi);
        report.max_kl_dcmi_margin = report.max_kl_dcmi_margin.max(kl_dcmi);
    }
    Ok(report)
}

/// Telescoping-bound check over random multi-step runs.
#[derive(Debug, Clone)]
pub struct TelescopingReport {
    pub runs: usize,
    pub violations: usize,
    /// max of `TV_total - Σ per-step TV` (should be <= 0)
    pub max_gap: f64,
}

pub fn telescoping_suite(runs: usize, seed: u64) -> Result<TelescopingReport> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut report = TelescopingReport {
        runs,
        violations: 0,
        max_gap: f64::NEG_INFINITY,
    };
    for _ in 0..runs {
        let l = rng.gen_range(4..=8usize);
        let lat = Lattice::line(l, rng.gen()).unwrap();
        let r = rng.gen_range(0..=2usize);
        let n_steps = rng.gen_range(1..=6usize);
        let flip_ps: Vec<f64> = (0..n_steps).map(|_| rng.gen_range(0.02..0.3)).collect();
        let p0 = random_dist(l, &mut rng);
        let outcome = multi_step_local_recovery(&p0, &lat, 1, r, &flip_ps)?;
        let gap = outcome.tv_total - outcome.tv_step_sum;
        if gap > 1e-12 {
            report.violations += 1;
        }
        report.max_gap = report.max_gap.max(gap);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_tripartition;
    use approx::assert_abs_diff_eq;

    fn flip_all(k: usize, p: f64) -> StochChannel {
        StochChannel::Flip(FlipChannel::new(p, Region::new((0..k).collect()).unwrap()).unwrap())
    }

    #[test]
    fn flip_examples() {
        let p = FiniteDist::new(1, vec![1.0, 0.0]).unwrap();
        let id = flip_all(1, 0.0).apply(&p).unwrap();
        assert_eq!(id.probs(), p.probs());

        let half = flip_all(1, 0.5).apply(&p).unwrap();
        assert_abs_diff_eq!(half.prob(0), 0.5, epsilon = 1e-15);

        let tenth = flip_all(1, 0.1).apply(&p).unwrap();
        assert_abs_diff_eq!(tenth.prob(0), 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(tenth.prob(1), 0.1, epsilon = 1e-15);

        // p = 1/2 on every site fully mixes any start.
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let q = random_dist(3, &mut rng);
        let mixed = flip_all(3, 0.5).apply(&q).unwrap();
        let uniform = FiniteDist::uniform(3).unwrap();
        assert!(tv(&mixed, &uniform).unwrap() < 1e-14);
    }

    #[test]
    fn flip_time_examples() {
        assert_eq!(flip_time(0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(flip_time(0.25).unwrap(), std::f64::consts::LN_2, epsilon = 1e-15);
        assert!(flip_time(0.5).unwrap().is_infinite());
        assert!(flip_time(0.6).is_err());
    }

    #[test]
    fn bayes_identity_and_full_mixing() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let p = random_dist(3, &mut rng);
        let q = random_dist(3, &mut rng);

        // Identity channel reverses to the identity.
        let id = flip_all(3, 0.0);
        let rev = bayes_channel(&id, &p).unwrap();
        let (out, _) = rev.apply(&q).unwrap();
        assert!(tv(&out, &q).unwrap() < 1e-13);

        // Full mixing carries no information: reverse maps anything to P.
        let mix = flip_all(3, 0.5);
        let rev = bayes_channel(&mix, &p).unwrap();
        let (out, fallback) = rev.apply(&q).unwrap();
        assert!(!fallback);
        assert!(tv(&out, &p).unwrap() < 1e-13);
    }

    #[test]
    fn bayes_roundtrip_two_bits() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let p = random_dist(2, &mut rng);
        let ch =
            StochChannel::Flip(FlipChannel::new(0.2, Region::new(vec![0]).unwrap()).unwrap());
        let pushed = ch.apply(&p).unwrap();
        let rev = bayes_channel(&ch, &p).unwrap();
        let (recovered, fallback) = rev.apply(&pushed).unwrap();
        assert!(!fallback);
        assert!(tv(&recovered, &p).unwrap() <= 1e-12);
    }

    #[test]
    fn local_bayes_exact_when_cmi_zero() {
        // P = P_AB ⊗ P_C on a 4-site chain, channel on A = {0}.
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let p_ab = random_dist(2, &mut rng);
        let p_c = random_dist(2, &mut rng);
        let mut probs = vec![0.0; 16];
        for (x, v) in probs.iter_mut().enumerate() {
            *v = p_ab.prob((x & 3) as u64) * p_c.prob((x >> 2) as u64);
        }
        let p = FiniteDist::new(4, probs).unwrap();
        let lat = Lattice::line(4, false).unwrap();
        let part = build_tripartition(&lat, 0, 1, 1).unwrap();
        assert_eq!(part.a().sites(), &[0]);
        assert_eq!(part.b().sites(), &[1]);
        assert!(cmi(&p, &part).unwrap() < 1e-12);

        let ch = StochChannel::Flip(FlipChannel::new(0.3, part.a().clone()).unwrap());
        let noisy = ch.apply(&p).unwrap();
        let prior_ab = p.marginal(&part.ab_sites()).unwrap();
        let local = local_bayes_channel(&ch, &prior_ab, &part).unwrap();
        let (recovered, fallback) = local.apply(&noisy).unwrap();
        assert!(!fallback);
        assert!(tv(&recovered, &p).unwrap() <= 1e-12);
    }

    #[test]
    fn local_bayes_with_full_buffer_matches_global() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let lat = Lattice::line(4, false).unwrap();
        let p = random_dist(4, &mut rng);
        // r = 3 makes B the whole complement of A.
        let part = build_tripartition(&lat, 1, 1, 3).unwrap();
        assert!(part.c().is_empty());
        let ch = random_channel_on(part.a(), &mut rng);
        let noisy = ch.apply(&p).unwrap();

        let global = bayes_channel(&ch, &p).unwrap();
        let (g, _) = global.apply(&noisy).unwrap();
        let local =
            local_bayes_channel(&ch, &p.marginal(&part.ab_sites()).unwrap(), &part).unwrap();
        let (l, _) = local.apply(&noisy).unwrap();
        assert!(tv(&g, &l).unwrap() <= 1e-12);
        assert!(tv(&g, &p).unwrap() <= 1e-12);
    }

    #[test]
    fn local_bayes_kl_bounded_by_cmi() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let lat = Lattice::line(6, false).unwrap();
        for _ in 0..20 {
            let p = random_dist(6, &mut rng);
            let part = build_tripartition(&lat, 2, 1, 1).unwrap();
            let ch = random_channel_on(part.a(), &mut rng);
            let noisy = ch.apply(&p).unwrap();
            let local =
                local_bayes_channel(&ch, &p.marginal(&part.ab_sites()).unwrap(), &part).unwrap();
            let (recovered, _) = local.apply(&noisy).unwrap();
            let kl_val = kl(&p, &recovered).unwrap();
            let cmi_val = cmi(&p, &part).unwrap();
            assert!(kl_val <= cmi_val + 1e-9, "KL {kl_val} exceeds CMI {cmi_val}");
        }
    }

    #[test]
    fn reverse_rates_examples() {
        // Uniform stationary distribution: reversal leaves rates unchanged.
        let gen = RateGenerator::symmetric_flip(2, 0.7);
        let uniform = FiniteDist::uniform(2).unwrap();
        let rev = reverse_rates(&gen, &uniform).unwrap();
        for (from, to, rate) in gen.jumps() {
            assert_abs_diff_eq!(rev.rate(to, from), rate, epsilon = 1e-15);
        }

        // Single bit, forward 0 -> 1 at λ, P = (2/3, 1/3).
        let mut gen = RateGenerator::new(1);
        gen.set_rate(0, 1, 0.9).unwrap();
        let p = FiniteDist::new(1, vec![2.0 / 3.0, 1.0 / 3.0]).unwrap();
        let rev = reverse_rates(&gen, &p).unwrap();
        assert_abs_diff_eq!(rev.rate(1, 0), 1.8, epsilon = 1e-14);

        // Detailed balance: λ01 P0 = λ10 P1 makes the chain reversible.
        let mut gen = RateGenerator::new(1);
        gen.set_rate(0, 1, 1.0).unwrap();
        gen.set_rate(1, 0, 2.0).unwrap();
        let stationary = FiniteDist::new(1, vec![2.0 / 3.0, 1.0 / 3.0]).unwrap();
        let rev = reverse_rates(&gen, &stationary).unwrap();
        assert_abs_diff_eq!(rev.rate(0, 1), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(rev.rate(1, 0), 2.0, epsilon = 1e-14);

        // Zero-probability reachable state is rejected.
        let point = FiniteDist::point_mass(1, 0).unwrap();
        let mut gen = RateGenerator::new(1);
        gen.set_rate(0, 1, 1.0).unwrap();
        assert!(matches!(
            reverse_rates(&gen, &point),
            Err(Error::ZeroProbabilityState { state: 1 })
        ));
    }

    #[test]
    fn master_equation_zero_generator() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let p0 = random_dist(3, &mut rng);
        let out = integrate_master(|_| RateGenerator::new(3), &p0, 1.0, 10).unwrap();
        assert!(tv(&out, &p0).unwrap() < 1e-14);
    }

    #[test]
    fn master_equation_matches_flip_kernel() {
        // Single bit, symmetric rate 1/2: the solution is the (1 ± e^{-t})/2
        // kernel, i.e. a flip channel with p = (1 - e^{-t})/2.
        let p0 = FiniteDist::point_mass(1, 0).unwrap();
        let t = 0.8;
        let out =
            integrate_master(|_| RateGenerator::symmetric_flip(1, 0.5), &p0, t, 200).unwrap();
        let p_flip = (1.0 - (-t).exp()) / 2.0;
        assert_abs_diff_eq!(out.prob(1), p_flip, epsilon = 1e-8);
        // And t = -ln(1 - 2p) maps back to the elapsed time.
        assert_abs_diff_eq!(flip_time(p_flip).unwrap(), t, epsilon = 1e-8);
    }

    #[test]
    fn master_equation_forward_backward_roundtrip() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let p0 = random_dist(4, &mut rng);
        let gen = RateGenerator::symmetric_flip(4, 0.5);
        let duration = 0.7;
        let steps = 400;

        // Forward trajectory stored at half-step resolution so the backward
        // RK4 stages see exact marginals.
        let h = duration / steps as f64;
        let mut traj = Vec::with_capacity(2 * steps + 1);
        traj.push(p0.clone());
        let mut cur = p0.clone();
        for _ in 0..2 * steps {
            cur = integrate_master(|_| gen.clone(), &cur, 0.5 * h, 1).unwrap();
            traj.push(cur.clone());
        }
        let p_final = traj.last().unwrap().clone();

        let backward = integrate_master(
            |s| {
                let tau = duration - s;
                let idx = (tau / (0.5 * h)).round() as usize;
                reverse_rates(&gen, &traj[idx.min(traj.len() - 1)]).unwrap()
            },
            &p_final,
            duration,
            steps,
        )
        .unwrap();
        assert!(
            tv(&backward, &p0).unwrap() <= 1e-6,
            "roundtrip TV = {}",
            tv(&backward, &p0).unwrap()
        );
    }

    #[test]
    fn multi_step_full_buffer_recovers_exactly() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let lat = Lattice::line(5, false).unwrap();
        let p0 = random_dist(5, &mut rng);
        let report = multi_step_local_recovery(&p0, &lat, 1, 5, &[0.1, 0.2, 0.15]).unwrap();
        assert!(report.tv_total <= 1e-10, "tv = {}", report.tv_total);
    }

    #[test]
    fn telescoping_bound_holds() {
        let report = telescoping_suite(10, 42).unwrap();
        assert_eq!(report.violations, 0, "max gap {}", report.max_gap);
    }

    #[test]
    fn channel_mass_preserved() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for _ in 0..20 {
            let k = rng.gen_range(2..=6);
            let p = random_dist(k, &mut rng);
            let mut sites: Vec<usize> = (0..k).collect();
            for i in (1..sites.len()).rev() {
                sites.swap(i, rng.gen_range(0..=i));
            }
            sites.truncate(rng.gen_range(1..=2));
            let ch = random_channel_on(&Region::new(sites).unwrap(), &mut rng);
            // FiniteDist::new would reject drift beyond 1e-12.
            let out = ch.apply(&p).unwrap();
            assert!(out.probs().iter().all(|&v| v >= 0.0));
        }
    }
}
