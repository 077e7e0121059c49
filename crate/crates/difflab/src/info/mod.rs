//! Information measures on explicit finite distributions.
//!
//! [`FiniteDist`] stores the full probability vector over `K`-bit strings,
//! `K <= 24`, with little-endian state indexing: site `j` is bit `j` of the
//! state index. Everything downstream (channels, marginals, entropies) is
//! exact enumeration over the `2^K` states.
//!
//! All entropic quantities are in nats.

mod mine;

pub use mine::{cmi_via_mine, mine_estimate, MineConfig, MlpParams};

use crate::error::{Error, Result};
use crate::lattice::Tripartition;

/// Hard cap on the number of binary sites: 2^24 probabilities is the most we
/// are willing to hold in memory.
pub const MAX_SITES: usize = 24;

/// Neumaier compensated sum; keeps normalization checks at the 1e-12 level
/// even for 2^18-entry vectors.
pub(crate) fn stable_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// An explicit probability distribution over `K`-bit strings.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDist {
    k: usize,
    probs: Vec<f64>,
}

impl FiniteDist {
    /// Validates and wraps a probability vector of length `2^k`.
    ///
    /// Entries in `[-1e-12, 0)` are clamped to zero; anything more negative
    /// is rejected, as is a total mass off by more than 1e-12.
    pub fn new(k: usize, mut probs: Vec<f64>) -> Result<Self> {
        if k > MAX_SITES {
            return Err(Error::InvalidDistribution(format!(
                "{k} sites exceeds the {MAX_SITES}-site enumeration guard"
            )));
        }
        if probs.len() != 1usize << k {
            return Err(Error::InvalidDistribution(format!(
                "expected {} probabilities for {k} sites, got {}",
                1usize << k,
                probs.len()
            )));
        }
        for p in probs.iter_mut() {
            if !p.is_finite() || *p < -1e-12 {
                return Err(Error::InvalidDistribution(format!(
                    "invalid probability {p}"
                )));
            }
            if *p < 0.0 {
                *p = 0.0;
            }
        }
        let total = stable_sum(probs.iter().copied());
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self { k, probs })
    }

    /// Normalizes a nonnegative weight vector into a distribution.
    pub fn from_weights(k: usize, weights: Vec<f64>) -> Result<Self> {
        let total = stable_sum(weights.iter().copied());
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidDistribution(format!(
                "weights sum to {total}, cannot normalize"
            )));
        }
        let probs = weights.into_iter().map(|w| w / total).collect();
        Self::new(k, probs)
    }

    pub fn uniform(k: usize) -> Result<Self> {
        let n = 1usize << k;
        Self::new(k, vec![1.0 / n as f64; n])
    }

    pub fn point_mass(k: usize, state: u64) -> Result<Self> {
        let n = 1usize << k;
        if state as usize >= n {
            return Err(Error::InvalidDistribution(format!(
                "state {state} out of range for {k} sites"
            )));
        }
        let mut probs = vec![0.0; n];
        probs[state as usize] = 1.0;
        Self::new(k, probs)
    }

    pub fn site_count(&self) -> usize {
        self.k
    }

    pub fn state_count(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, state: u64) -> f64 {
        self.probs[state as usize]
    }

    pub fn support_size(&self) -> usize {
        self.probs.iter().filter(|&&p| p > 0.0).count()
    }

    /// Marginal over the listed sites, in the listed order: output bit `j`
    /// carries input site `sites[j]`.
    pub fn marginal(&self, sites: &[usize]) -> Result<FiniteDist> {
        for &s in sites {
            if s >= self.k {
                return Err(Error::InvalidRegion(format!(
                    "site {s} out of range for {} sites",
                    self.k
                )));
            }
        }
        let mut seen = 0u64;
        for &s in sites {
            if seen >> s & 1 == 1 {
                return Err(Error::InvalidRegion(format!("site {s} listed twice")));
            }
            seen |= 1 << s;
        }
        let mut out = vec![0.0; 1usize << sites.len()];
        for (x, &p) in self.probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let mut y = 0usize;
            for (j, &s) in sites.iter().enumerate() {
                y |= (x >> s & 1) << j;
            }
            out[y] += p;
        }
        FiniteDist { k: sites.len(), probs: out }.renormalized()
    }

    /// Rescales away accumulated rounding so the invariant check in `new`
    /// stays honest after long channel chains.
    pub(crate) fn renormalized(mut self) -> Result<FiniteDist> {
        let total = stable_sum(self.probs.iter().copied());
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Numeric(format!(
                "probability mass drifted to {total}"
            )));
        }
        for p in self.probs.iter_mut() {
            *p /= total;
        }
        FiniteDist::new(self.k, self.probs)
    }
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &FiniteDist) -> f64 {
    stable_sum(p.probs().iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()))
}

/// Kullback-Leibler divergence `Σ P ln(P/Q)` in nats.
///
/// Returns `+∞` when `P` puts mass where `Q` has none; that infinity is the
/// support-violation flag.
pub fn kl(p: &FiniteDist, q: &FiniteDist) -> Result<f64> {
    if p.site_count() != q.site_count() {
        return Err(Error::DimensionMismatch {
            expected: p.site_count(),
            got: q.site_count(),
        });
    }
    let mut terms = Vec::with_capacity(p.state_count());
    for (&pi, &qi) in p.probs().iter().zip(q.probs()) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Ok(f64::INFINITY);
        }
        terms.push(pi * (pi.ln() - qi.ln()));
    }
    Ok(stable_sum(terms))
}

/// Total variation distance `½ Σ |P - Q|`, in `[0, 1]`.
pub fn tv(p: &FiniteDist, q: &FiniteDist) -> Result<f64> {
    if p.site_count() != q.site_count() {
        return Err(Error::DimensionMismatch {
            expected: p.site_count(),
            got: q.site_count(),
        });
    }
    Ok(0.5 * stable_sum(p.probs().iter().zip(q.probs()).map(|(&a, &b)| (a - b).abs())))
}

/// Conditional mutual information `I(X_A : X_C | X_B)` of an explicit
/// distribution, from exact marginals:
/// `H(X_AB) + H(X_BC) - H(X_ABC) - H(X_B)`, clipped to zero from below.
pub fn cmi(p: &FiniteDist, part: &Tripartition) -> Result<f64> {
    if part.site_count() != p.site_count() {
        return Err(Error::DimensionMismatch {
            expected: p.site_count(),
            got: part.site_count(),
        });
    }
    let h_ab = entropy(&p.marginal(&part.ab_sites())?);
    let h_bc = entropy(&p.marginal(&part.bc_sites())?);
    let h_b = entropy(&p.marginal(part.b().sites())?);
    let h_abc = entropy(p);
    let value = h_ab + h_bc - h_abc - h_b;
    debug_assert!(value > -1e-10, "cmi evaluated to {value}");
    Ok(value.max(0.0))
}
