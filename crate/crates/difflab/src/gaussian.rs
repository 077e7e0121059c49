//! Closed-form linear-Gaussian diffusion algebra.
//!
//! States are mean/covariance pairs, channels are affine-Gaussian maps
//! `x ↦ M x + b + ξ` with `ξ ~ N(0, Q)`, and everything — forward noising,
//! exact Bayes reversal (global and local), KL, CMI — stays in closed form.
//! No sampling happens anywhere in this module; the multi-step recovery
//! experiment is pure moment propagation.
//!
//! Covariance updates re-symmetrize after every product and SPD checks use
//! the smallest eigenvalue with a 1e-10 tolerance. Inversions go through
//! Cholesky with a one-shot 1e-12 diagonal jitter retry, so the
//! deterministic endpoints of the noising schedule stay usable.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::lattice::{reorganize, Lattice, Region, Tripartition};

const SYM_TOL: f64 = 1e-10;
const JITTER: f64 = 1e-12;

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Cholesky with a single jittered retry; the jitter is applied only here,
/// inside inversions, never to stored covariances.
fn chol_jittered(m: &DMatrix<f64>, context: &'static str) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = m.clone().cholesky() {
        return Ok(c);
    }
    let jittered = m + DMatrix::identity(m.nrows(), m.ncols()) * JITTER;
    jittered.cholesky().ok_or(Error::Singular { context })
}

fn ln_det_spd(m: &DMatrix<f64>, context: &'static str) -> Result<f64> {
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    let chol = m.clone().cholesky().ok_or(Error::Singular { context })?;
    Ok(2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

fn submatrix(m: &DMatrix<f64>, sites: &[usize]) -> DMatrix<f64> {
    m.select_rows(sites.iter()).select_columns(sites.iter())
}

/// A nondegenerate multivariate Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDist {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianDist {
    /// Validates symmetry (1e-10) and strict positive-definiteness.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let k = mean.len();
        if cov.nrows() != k || cov.ncols() != k {
            return Err(Error::DimensionMismatch { expected: k, got: cov.nrows() });
        }
        if mean.iter().any(|v| !v.is_finite()) || cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDistribution("non-finite Gaussian moments".into()));
        }
        if max_asymmetry(&cov) > SYM_TOL {
            return Err(Error::InvalidDistribution(format!(
                "covariance asymmetry {:.3e} exceeds {SYM_TOL:.0e}",
                max_asymmetry(&cov)
            )));
        }
        let cov = symmetrize(&cov);
        let min_eig = min_eigenvalue(&cov);
        if !(min_eig > 0.0) {
            return Err(Error::NotPositiveDefinite { min_eig });
        }
        Ok(Self { mean, cov })
    }

    pub fn standard(k: usize) -> Self {
        Self {
            mean: DVector::zeros(k),
            cov: DMatrix::identity(k, k),
        }
    }

    /// Gaussian Markov random field on a 1D chain: unit-diagonal tridiagonal
    /// precision with off-diagonal `-coupling` (|coupling| < 1/2 keeps it
    /// positive definite). Finite coupling gives a tunable finite Markov
    /// length once noise is added.
    pub fn gmrf_chain(l: usize, coupling: f64) -> Result<Self> {
        if !(coupling.abs() < 0.5) {
            return Err(Error::Domain(format!(
                "chain coupling must satisfy |c| < 1/2, got {coupling}"
            )));
        }
        let mut precision = DMatrix::identity(l, l);
        for i in 0..l.saturating_sub(1) {
            precision[(i, i + 1)] = -coupling;
            precision[(i + 1, i)] = -coupling;
        }
        Self::from_precision(precision)
    }

    /// GMRF on an open `l x l` grid: unit diagonal, `-coupling` on the
    /// 4-neighbor couplings (|coupling| < 1/4).
    pub fn gmrf_grid(l: usize, coupling: f64) -> Result<Self> {
        if !(coupling.abs() < 0.25) {
            return Err(Error::Domain(format!(
                "grid coupling must satisfy |c| < 1/4, got {coupling}"
            )));
        }
        let k = l * l;
        let mut precision = DMatrix::identity(k, k);
        for x in 0..l {
            for y in 0..l {
                let s = x * l + y;
                if x + 1 < l {
                    precision[(s, s + l)] = -coupling;
                    precision[(s + l, s)] = -coupling;
                }
                if y + 1 < l {
                    precision[(s, s + 1)] = -coupling;
                    precision[(s + 1, s)] = -coupling;
                }
            }
        }
        Self::from_precision(precision)
    }

    /// Zero-mean Gaussian with the given precision matrix.
    pub fn from_precision(precision: DMatrix<f64>) -> Result<Self> {
        let k = precision.nrows();
        let chol = precision
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { min_eig: min_eigenvalue(&precision) })?;
        let cov = symmetrize(&chol.inverse());
        Self::new(DVector::zeros(k), cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Marginal over the listed coordinates, in the listed order.
    pub fn marginal(&self, sites: &[usize]) -> Result<GaussianDist> {
        for &s in sites {
            if s >= self.dim() {
                return Err(Error::InvalidRegion(format!(
                    "coordinate {s} out of range for dimension {}",
                    self.dim()
                )));
            }
        }
        if sites.is_empty() {
            return Err(Error::InvalidRegion("empty marginal".into()));
        }
        GaussianDist::new(
            self.mean.select_rows(sites.iter()),
            submatrix(&self.cov, sites),
        )
    }

    /// Log density at a point.
    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        let chol = chol_jittered(&self.cov, "log-density covariance")?;
        let diff = x - &self.mean;
        let solved = chol.solve(&diff);
        let ln_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let k = self.dim() as f64;
        Ok(-0.5 * (diff.dot(&solved) + ln_det + k * (2.0 * std::f64::consts::PI).ln()))
    }
}

/// Affine-Gaussian channel `x ↦ M x + b + ξ`, `ξ ~ N(0, Q)` with `Q` PSD.
#[derive(Debug, Clone)]
pub struct LinearChannel {
    m: DMatrix<f64>,
    b: DVector<f64>,
    noise_cov: DMatrix<f64>,
}

impl LinearChannel {
    pub fn new(m: DMatrix<f64>, b: DVector<f64>, noise_cov: DMatrix<f64>) -> Result<Self> {
        let k_out = m.nrows();
        if b.len() != k_out || noise_cov.nrows() != k_out || noise_cov.ncols() != k_out {
            return Err(Error::DimensionMismatch { expected: k_out, got: b.len() });
        }
        if max_asymmetry(&noise_cov) > SYM_TOL {
            return Err(Error::InvalidChannel(format!(
                "noise covariance asymmetry {:.3e}",
                max_asymmetry(&noise_cov)
            )));
        }
        let noise_cov = symmetrize(&noise_cov);
        let min_eig = min_eigenvalue(&noise_cov);
        if min_eig < -SYM_TOL {
            return Err(Error::NotPositiveDefinite { min_eig });
        }
        Ok(Self { m, b, noise_cov })
    }

    pub fn identity(k: usize) -> Self {
        Self {
            m: DMatrix::identity(k, k),
            b: DVector::zeros(k),
            noise_cov: DMatrix::zeros(k, k),
        }
    }

    /// Scalar channel `x ↦ a x + ξ`, `ξ ~ N(0, q I)`.
    pub fn scalar(k: usize, a: f64, q: f64) -> Result<Self> {
        if !(q >= 0.0) || !q.is_finite() || !a.is_finite() {
            return Err(Error::InvalidChannel(format!("bad scalar channel a={a}, q={q}")));
        }
        Ok(Self {
            m: DMatrix::identity(k, k) * a,
            b: DVector::zeros(k),
            noise_cov: DMatrix::identity(k, k) * q,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.noise_cov
    }

    pub fn dim_in(&self) -> usize {
        self.m.ncols()
    }

    pub fn dim_out(&self) -> usize {
        self.m.nrows()
    }

    /// Extends a channel on `region` (coordinates in region-site order) to
    /// the full space, acting as the identity elsewhere.
    pub fn embed(&self, region: &Region, k_total: usize) -> Result<LinearChannel> {
        let m_loc = region.len();
        if self.dim_in() != m_loc || self.dim_out() != m_loc {
            return Err(Error::DimensionMismatch { expected: m_loc, got: self.dim_in() });
        }
        region.check_bounds(k_total)?;
        let mut m = DMatrix::identity(k_total, k_total);
        let mut b = DVector::zeros(k_total);
        let mut q = DMatrix::zeros(k_total, k_total);
        for (i, &gi) in region.sites().iter().enumerate() {
            m[(gi, gi)] = 0.0;
            b[gi] = self.b[i];
            for (j, &gj) in region.sites().iter().enumerate() {
                m[(gi, gj)] = self.m[(i, j)];
                q[(gi, gj)] = self.noise_cov[(i, j)];
            }
        }
        LinearChannel::new(m, b, q)
    }
}

/// The unique scalar-affine Markov kernel carrying the interpolation
/// marginals from time `t` to `t2` under the linear schedule `α_t = t`:
/// `M = a I` with `a = (1-t2)/(1-t)`, noise `(t2² - a² t²) I`.
pub fn forward_step(t: f64, t2: f64, k: usize) -> Result<LinearChannel> {
    if !(0.0..1.0).contains(&t) || !(0.0..=1.0).contains(&t2) {
        return Err(Error::Domain(format!("times must satisfy 0 <= t < 1, t2 <= 1; got ({t}, {t2})")));
    }
    if t2 < t {
        return Err(Error::Domain(format!("t2 = {t2} must not precede t = {t}")));
    }
    let a = (1.0 - t2) / (1.0 - t);
    let q = (t2 * t2 - a * a * t * t).max(0.0);
    LinearChannel::scalar(k, a, q)
}

/// Pushes a Gaussian through an affine-Gaussian channel.
///
/// Rejects results that lose positive-definiteness (degenerate channel).
pub fn push(ch: &LinearChannel, p: &GaussianDist) -> Result<GaussianDist> {
    if ch.dim_in() != p.dim() {
        return Err(Error::DimensionMismatch { expected: ch.dim_in(), got: p.dim() });
    }
    let mean = &ch.m * &p.mean + &ch.b;
    let cov = symmetrize(&(&ch.m * &p.cov * ch.m.transpose())) + &ch.noise_cov;
    GaussianDist::new(mean, cov)
}

/// Exact Bayes reversal of a channel against a Gaussian prior: the affine
/// conditional `X | Y` under the joint of `prior` and the channel.
pub fn bayes_reverse(ch: &LinearChannel, prior: &GaussianDist) -> Result<LinearChannel> {
    if ch.dim_in() != prior.dim() {
        return Err(Error::DimensionMismatch { expected: ch.dim_in(), got: prior.dim() });
    }
    // J = Cov(X, Y) = Σ Mᵀ, S = Cov(Y) = M Σ Mᵀ + Q.
    let j = &prior.cov * ch.m.transpose();
    let s = symmetrize(&(&ch.m * &j)) + &ch.noise_cov;
    let chol = chol_jittered(&s, "pushed covariance in Bayes reversal")?;
    let g = chol.solve(&j.transpose()).transpose();
    let c = &prior.mean - &g * (&ch.m * &prior.mean + &ch.b);
    let cond = symmetrize(&(&prior.cov - &g * j.transpose()));
    LinearChannel::new(g, c, cond)
}

/// Local Bayes reversal: the Gaussian conditional of `X_A` given
/// `(Y_A, X_B)` under the `A ∪ B` marginal joint, extended by the identity
/// on `B` and `C`. Reads `A ∪ B`, writes only `A`.
///
/// `ch_a` acts on the `|A|` coordinates of region A; `prior_ab` is the exact
/// marginal of the current global state on `A ∪ B` in A-then-B order.
pub fn local_bayes_reverse(
    ch_a: &LinearChannel,
    prior_ab: &GaussianDist,
    part: &Tripartition,
) -> Result<LinearChannel> {
    let na = part.a().len();
    let nb = part.b().len();
    if ch_a.dim_in() != na {
        return Err(Error::DimensionMismatch { expected: na, got: ch_a.dim_in() });
    }
    if prior_ab.dim() != na + nb {
        return Err(Error::DimensionMismatch { expected: na + nb, got: prior_ab.dim() });
    }

    let sigma = prior_ab.cov();
    let saa = sigma.view((0, 0), (na, na)).into_owned();
    let sab = sigma.view((0, na), (na, nb)).into_owned();
    let sbb = sigma.view((na, na), (nb, nb)).into_owned();
    let mu_a = prior_ab.mean().rows(0, na).into_owned();
    let mu_b = prior_ab.mean().rows(na, nb).into_owned();

    // Joint of Z = (Y_A, X_B): S = [[M Σaa Mᵀ + Q, M Σab], [Σba Mᵀ, Σbb]],
    // J = Cov(X_A, Z) = [Σaa Mᵀ | Σab].
    let m = &ch_a.m;
    let mut s = DMatrix::zeros(na + nb, na + nb);
    let s_yy = symmetrize(&(m * &saa * m.transpose())) + &ch_a.noise_cov;
    let s_yb = m * &sab;
    s.view_mut((0, 0), (na, na)).copy_from(&s_yy);
    s.view_mut((0, na), (na, nb)).copy_from(&s_yb);
    s.view_mut((na, 0), (nb, na)).copy_from(&s_yb.transpose());
    s.view_mut((na, na), (nb, nb)).copy_from(&sbb);

    let mut j = DMatrix::zeros(na, na + nb);
    j.view_mut((0, 0), (na, na)).copy_from(&(&saa * m.transpose()));
    j.view_mut((0, na), (na, nb)).copy_from(&sab);

    let chol = chol_jittered(&symmetrize(&s), "conditioning covariance in local Bayes reversal")?;
    let g = chol.solve(&j.transpose()).transpose();
    let mut z_mean = DVector::zeros(na + nb);
    z_mean.rows_mut(0, na).copy_from(&(m * &mu_a + &ch_a.b));
    z_mean.rows_mut(na, nb).copy_from(&mu_b);
    let c = &mu_a - &g * z_mean;
    let cond = symmetrize(&(&saa - &g * j.transpose()));

    // Assemble the full-space channel: rows of A read (Y_A, X_B); B and C
    // pass through.
    let k_total = part.site_count();
    let mut m_full = DMatrix::identity(k_total, k_total);
    let mut b_full = DVector::zeros(k_total);
    let mut q_full = DMatrix::zeros(k_total, k_total);
    for (i, &gi) in part.a().sites().iter().enumerate() {
        m_full[(gi, gi)] = 0.0;
        b_full[gi] = c[i];
        for (j2, &gj) in part.a().sites().iter().enumerate() {
            m_full[(gi, gj)] = g[(i, j2)];
            q_full[(gi, gj)] = cond[(i, j2)];
        }
        for (j2, &gj) in part.b().sites().iter().enumerate() {
            m_full[(gi, gj)] = g[(i, na + j2)];
        }
    }
    LinearChannel::new(m_full, b_full, q_full)
}

/// `KL(P ‖ Q)` between Gaussians:
/// `½ [tr(Σq⁻¹Σp) + (μq-μp)ᵀΣq⁻¹(μq-μp) - K + ln(det Σq / det Σp)]`.
pub fn gaussian_kl(p: &GaussianDist, q: &GaussianDist) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch { expected: p.dim(), got: q.dim() });
    }
    let chol_q = chol_jittered(q.cov(), "Q covariance in Gaussian KL")?;
    let ln_det_q = 2.0 * chol_q.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let ln_det_p = ln_det_spd(p.cov(), "P covariance in Gaussian KL")?;
    let trace = chol_q.solve(p.cov()).trace();
    let diff = q.mean() - p.mean();
    let maha = diff.dot(&chol_q.solve(&diff));
    Ok(0.5 * (trace + maha - p.dim() as f64 + ln_det_q - ln_det_p))
}

/// `I(X_A : X_C | X_B)` of a Gaussian from principal-minor log-determinants:
/// `½ [ln det Σ_AB + ln det Σ_BC - ln det Σ_B - ln det Σ_ABC]`, clipped at 0.
pub fn gaussian_cmi(p: &GaussianDist, part: &Tripartition) -> Result<f64> {
    if part.site_count() != p.dim() {
        return Err(Error::DimensionMismatch { expected: p.dim(), got: part.site_count() });
    }
    let ld = |sites: &[usize]| -> Result<f64> {
        ln_det_spd(&submatrix(p.cov(), sites), "principal submatrix in Gaussian CMI")
    };
    let val = 0.5
        * (ld(&part.ab_sites())? + ld(&part.bc_sites())?
            - ld(part.b().sites())?
            - ld(&(0..p.dim()).collect::<Vec<_>>())?);
    Ok(val.max(0.0))
}

/// Score of a Gaussian: `∇_x ln P(x) = -Σ⁻¹ (x - μ)`.
pub fn score(p: &GaussianDist, x: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != p.dim() {
        return Err(Error::DimensionMismatch { expected: p.dim(), got: x.len() });
    }
    let chol = chol_jittered(p.cov(), "covariance in Gaussian score")?;
    Ok(-chol.solve(&(x - p.mean())))
}

/// Exponential-decay fit of CMI against buffer width.
#[derive(Debug, Clone)]
pub struct MarkovFit {
    /// Decay length; `+∞` flags a non-decaying fit.
    pub xi: f64,
    /// Prefactor.
    pub gamma: f64,
    /// RMS residual of the least-squares line on `(r, ln cmi)`.
    pub residual: f64,
}

/// Least-squares line on `(r, ln cmi)` over points with `cmi > 1e-14`:
/// `ξ = -1/slope`, `γ = exp(intercept)`. A nonnegative slope yields the
/// `xi = +∞` sentinel.
pub fn markov_length_fit(rs: &[f64], cmis: &[f64]) -> Result<MarkovFit> {
    if rs.len() != cmis.len() {
        return Err(Error::DimensionMismatch { expected: rs.len(), got: cmis.len() });
    }
    let pts: Vec<(f64, f64)> = rs
        .iter()
        .zip(cmis)
        .filter(|(_, &c)| c > 1e-14)
        .map(|(&r, &c)| (r, c.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Domain(format!(
            "need at least 2 points with cmi > 1e-14, have {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return Err(Error::Domain("all widths identical, cannot fit".into()));
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let residual = (pts
        .iter()
        .map(|&(x, y)| (y - slope * x - intercept).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let xi = if slope < 0.0 { -1.0 / slope } else { f64::INFINITY };
    Ok(MarkovFit { xi, gamma: intercept.exp(), residual })
}

/// CMI of a state at each buffer width in `rs`, for the tripartition around
/// the `k`-block at `center`.
pub fn cmi_vs_width(
    p: &GaussianDist,
    lat: &Lattice,
    center: usize,
    k: usize,
    rs: &[usize],
) -> Result<Vec<f64>> {
    rs.iter()
        .map(|&r| {
            let part = crate::lattice::build_tripartition(lat, center, k, r)?;
            gaussian_cmi(p, &part)
        })
        .collect()
}

/// Runs the reorganized forward chain and reverses it with local Bayes
/// channels built from the exactly propagated intermediate marginals;
/// returns `KL(P_0 ‖ recovered)`.
///
/// The time grid is uniform on `[0, t_max]` with `n_steps` intervals; each
/// interval's scalar kernel is applied region by region through the
/// schedule, and the recorded reversals run in exact reverse order.
pub fn multi_step_local_recovery(
    p0: &GaussianDist,
    lat: &Lattice,
    n_steps: usize,
    k: usize,
    r: usize,
    t_max: f64,
) -> Result<f64> {
    if lat.site_count() != p0.dim() {
        return Err(Error::DimensionMismatch { expected: p0.dim(), got: lat.site_count() });
    }
    if n_steps == 0 {
        return Err(Error::Domain("need at least one step".into()));
    }
    if !(t_max > 0.0 && t_max < 1.0) {
        return Err(Error::Domain(format!("t_max must be in (0, 1), got {t_max}")));
    }
    let schedule = reorganize(lat, k, r)?;
    let mut state = p0.clone();
    let mut recorded: Vec<LinearChannel> = Vec::new();

    for n in 1..=n_steps {
        let t1 = (n - 1) as f64 * t_max / n_steps as f64;
        let t2 = n as f64 * t_max / n_steps as f64;
        for substep in schedule.substeps() {
            let pre = state.clone();
            for region in substep {
                let part = Tripartition::around(lat, region.clone(), r)?;
                let ch_a = forward_step(t1, t2, region.len())?;
                let prior_ab = pre.marginal(&part.ab_sites())?;
                recorded.push(local_bayes_reverse(&ch_a, &prior_ab, &part)?);
                state = push(&ch_a.embed(region, lat.site_count())?, &state)?;
            }
        }
    }

    for rev in recorded.iter().rev() {
        state = push(rev, &state)?;
    }
    gaussian_kl(p0, &state)
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn random_spd(k: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let f = DMatrix::from_fn(k, k, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
    symmetrize(&(&f * f.transpose())) / k as f64 + DMatrix::identity(k, k) * 0.4
}

fn random_channel(k: usize, rng: &mut impl Rng) -> LinearChannel {
    let m = DMatrix::from_fn(k, k, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
    let b = DVector::from_fn(k, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
    let w = DMatrix::from_fn(k, k, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
    let q = symmetrize(&(&w * w.transpose())) / k as f64 + DMatrix::identity(k, k) * 0.1;
    LinearChannel::new(m, b, q).unwrap()
}

/// Worst margins of the single-step recovery chain on random Gaussian
/// instances: `KL(P‖P̂) <= I_before - I_after <= I_before`, all closed form.
#[derive(Debug, Clone)]
pub struct GaussChainReport {
    pub instances: usize,
    pub kl_cmi_violations: usize,
    pub kl_dcmi_violations: usize,
    /// max of `KL - CMI` (should be <= 0)
    pub max_kl_cmi_margin: f64,
    /// max of `KL - (I_before - I_after)` (should be <= 0)
    pub max_kl_dcmi_margin: f64,
}

pub fn fawzi_chain_suite(instances: usize, seed: u64) -> Result<GaussChainReport> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut report = GaussChainReport {
        instances,
        kl_cmi_violations: 0,
        kl_dcmi_violations: 0,
        max_kl_cmi_margin: f64::NEG_INFINITY,
        max_kl_dcmi_margin: f64::NEG_INFINITY,
    };
    for _ in 0..instances {
        let (lat, part) = loop {
            let l = rng.gen_range(3..=7usize);
            let lat = Lattice::line(l, rng.gen()).unwrap();
            let center = rng.gen_range(0..l);
            let k_block = rng.gen_range(1..=2usize.min(l));
            let r = rng.gen_range(0..=2usize);
            if let Ok(part) = crate::lattice::build_tripartition(&lat, center, k_block, r) {
                break (lat, part);
            }
        };
        let k = lat.site_count();
        let prior = GaussianDist::new(DVector::from_fn(k, |_, _| rng.gen::<f64>()), random_spd(k, &mut rng))?;
        let ch_a = random_channel(part.a().len(), &mut rng);

        let cmi_before = gaussian_cmi(&prior, &part)?;
        let noisy = push(&ch_a.embed(part.a(), k)?, &prior)?;
        let cmi_after = gaussian_cmi(&noisy, &part)?;
        let rev = local_bayes_reverse(&ch_a, &prior.marginal(&part.ab_sites())?, &part)?;
        let recovered = push(&rev, &noisy)?;
        let kl_val = gaussian_kl(&prior, &recovered)?;

        let kl_cmi = kl_val - cmi_before;
        let kl_dcmi = kl_val - (cmi_before - cmi_after);
        if kl_cmi > 1e-9 {
            report.kl_cmi_violations += 1;
        }
        if kl_dcmi > 1e-9 {
            report.kl_dcmi_violations += 1;
        }
        report.max_kl_cmi_margin = report.max_kl_cmi_margin.max(kl_cmi);
        report.max_kl_dcmi_margin = report.max_kl_dcmi_margin.max(kl_dcmi);
    }
    Ok(report)
}

/// Largest moment mismatch of `bayes_reverse ∘ forward` against the prior
/// over random instances (exactness of the global reversal).
#[derive(Debug, Clone)]
pub struct FixpointReport {
    pub instances: usize,
    pub max_mean_err: f64,
    pub max_cov_err: f64,
}

pub fn bayes_fixpoint_suite(instances: usize, seed: u64) -> Result<FixpointReport> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut report = FixpointReport { instances, max_mean_err: 0.0, max_cov_err: 0.0 };
    for _ in 0..instances {
        let k = rng.gen_range(2..=8usize);
        let prior = GaussianDist::new(
            DVector::from_fn(k, |_, _| rng.gen::<f64>() * 2.0 - 1.0),
            random_spd(k, &mut rng),
        )?;
        let ch = random_channel(k, &mut rng);
        let pushed = push(&ch, &prior)?;
        let rev = bayes_reverse(&ch, &prior)?;
        let back = push(&rev, &pushed)?;
        report.max_mean_err = report
            .max_mean_err
            .max((back.mean() - prior.mean()).abs().max());
        report.max_cov_err = report
            .max_cov_err
            .max((back.cov() - prior.cov()).abs().max());
    }
    Ok(report)
}
