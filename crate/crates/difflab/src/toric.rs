//! The 2D classical toric code testbed.
//!
//! An `L x L` torus carries one binary spin per edge (`K = 2L²` edges). The
//! code distribution is the uniform mixture of all topologically trivial
//! closed loops: configurations with even parity around every plaquette;
//! odd-parity plaquettes host "anyons". The trivial loops are the XOR span
//! of the vertex stars (each vertex's four incident edges) — the plaquette
//! boundaries of the dual lattice, which on the self-dual torus is the same
//! picture shifted by half a cell. Star flips touch every plaquette in an
//! even number of edges, so the span is syndrome-free; its size is
//! `2^(L²-1)` (the only relation is that all stars multiply to identity).
//!
//! Edge indexing: vertex `(row, col)` owns its rightward edge `2v` and its
//! downward edge `2v + 1` with `v = row * L + col` (row-major). For region
//! geometry, edges live at doubled midpoint coordinates on a `2L x 2L`
//! torus — a rightward edge at `(2 row, 2 col + 1)`, a downward edge at
//! `(2 row + 1, 2 col)` — and edge distance is Chebyshev there, so one
//! lattice unit equals two doubled units.
//!
//! Exact enumeration is guarded at `L <= 3` (`2^18` states).

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::discrete::{FlipChannel, StochChannel};
use crate::error::{Error, Result};
use crate::info::{cmi, FiniteDist};
use crate::lattice::{Region, Tripartition};

/// Largest linear size for exact enumeration of the loop distribution.
pub const MAX_EXACT_L: usize = 3;

/// Geometry of the `L x L` torus code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TorusCode {
    l: usize,
}

impl TorusCode {
    pub fn new(l: usize) -> Result<Self> {
        if l < 2 {
            return Err(Error::InvalidLattice(format!(
                "torus linear size must be >= 2, got {l}"
            )));
        }
        if 2 * l * l > 64 {
            return Err(Error::InvalidLattice(format!(
                "torus with {l}^2 plaquettes exceeds the 64-edge bitmask limit"
            )));
        }
        Ok(Self { l })
    }

    pub fn linear_size(&self) -> usize {
        self.l
    }

    pub fn edge_count(&self) -> usize {
        2 * self.l * self.l
    }

    pub fn plaquette_count(&self) -> usize {
        self.l * self.l
    }

    /// The four edges bounding plaquette `p` (top-left vertex `p`).
    pub fn plaquette_edges(&self, p: usize) -> [usize; 4] {
        let l = self.l;
        let (row, col) = (p / l, p % l);
        let v = |r: usize, c: usize| (r % l) * l + (c % l);
        [
            2 * v(row, col),         // top (rightward edge of the corner)
            2 * v(row, col) + 1,     // left (downward edge of the corner)
            2 * v(row + 1, col),     // bottom
            2 * v(row, col + 1) + 1, // right
        ]
    }

    /// Bitmask of the plaquette boundary.
    pub fn plaquette_mask(&self, p: usize) -> u64 {
        self.plaquette_edges(p)
            .iter()
            .fold(0u64, |acc, &e| acc | (1 << e))
    }

    /// The four edges incident to vertex `v`: the loop generators (dual
    /// plaquette boundaries).
    pub fn star_edges(&self, v: usize) -> [usize; 4] {
        let l = self.l;
        let (row, col) = (v / l, v % l);
        let idx = |r: usize, c: usize| (r % l) * l + (c % l);
        [
            2 * idx(row, col),                      // rightward from v
            2 * idx(row, col) + 1,                  // downward from v
            2 * idx(row, (col + l - 1) % l),        // rightward into v
            2 * idx((row + l - 1) % l, col) + 1,    // downward into v
        ]
    }

    /// Bitmask of a vertex star.
    pub fn star_mask(&self, v: usize) -> u64 {
        self.star_edges(v)
            .iter()
            .fold(0u64, |acc, &e| acc | (1 << e))
    }

    /// Doubled midpoint coordinates of an edge on the `2L x 2L` torus.
    pub fn edge_midpoint_doubled(&self, e: usize) -> (usize, usize) {
        let v = e / 2;
        let (row, col) = (v / self.l, v % self.l);
        if e % 2 == 0 {
            (2 * row, 2 * col + 1)
        } else {
            (2 * row + 1, 2 * col)
        }
    }

    /// Chebyshev distance between edge midpoints in doubled units, wrapping
    /// on the torus. Edges sharing a vertex are at distance 1; parallel
    /// next-neighbor edges at distance 2.
    pub fn edge_distance(&self, e1: usize, e2: usize) -> usize {
        let (x1, y1) = self.edge_midpoint_doubled(e1);
        let (x2, y2) = self.edge_midpoint_doubled(e2);
        let period = 2 * self.l;
        let wrap = |a: usize, b: usize| {
            let d = a.abs_diff(b);
            d.min(period - d)
        };
        wrap(x1, x2).max(wrap(y1, y2))
    }

    /// A fixed central edge: the rightward edge of vertex `(L/2, L/2)`.
    pub fn central_edge(&self) -> usize {
        2 * ((self.l / 2) * self.l + self.l / 2)
    }
}

/// Per-plaquette boundary parities of an edge configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnyonConfig {
    mask: u64,
    plaquettes: usize,
}

impl AnyonConfig {
    /// Parity bit of plaquette `p` (true = anyon present).
    pub fn parity(&self, p: usize) -> bool {
        self.mask >> p & 1 == 1
    }

    pub fn anyon_count(&self) -> usize {
        self.mask.count_ones() as usize
    }

    pub fn is_trivial(&self) -> bool {
        self.mask == 0
    }

    pub fn mask(&self) -> u64 {
        self.mask
    }
}

/// Plaquette parities of an edge bitstring. The total anyon number is always
/// even: every edge sits on exactly two plaquettes.
pub fn anyon_syndrome(code: &TorusCode, x: u64) -> AnyonConfig {
    let mut mask = 0u64;
    for p in 0..code.plaquette_count() {
        if ((x & code.plaquette_mask(p)).count_ones() & 1) == 1 {
            mask |= 1 << p;
        }
    }
    debug_assert!(mask.count_ones() % 2 == 0, "global anyon parity must be even");
    AnyonConfig { mask, plaquettes: code.plaquette_count() }
}

/// All topologically trivial loops, enumerated as XOR combinations of the
/// first `L² - 1` vertex stars (the full product is the only relation, so
/// these subsets hit each loop exactly once).
pub fn enumerate_loops(code: &TorusCode) -> Result<Vec<u64>> {
    if code.l > MAX_EXACT_L {
        return Err(Error::InvalidLattice(format!(
            "loop enumeration guarded at L <= {MAX_EXACT_L}, got {}",
            code.l
        )));
    }
    let gens: Vec<u64> = (0..code.plaquette_count() - 1)
        .map(|v| code.star_mask(v))
        .collect();
    let mut loops = Vec::with_capacity(1 << gens.len());
    for subset in 0u64..(1 << gens.len()) {
        let mut x = 0u64;
        for (i, &g) in gens.iter().enumerate() {
            if subset >> i & 1 == 1 {
                x ^= g;
            }
        }
        loops.push(x);
    }
    Ok(loops)
}

/// Uniform distribution over the trivial loops; support size `2^(L²-1)`.
pub fn loop_dist(code: &TorusCode) -> Result<FiniteDist> {
    let loops = enumerate_loops(code)?;
    let mut probs = vec![0.0; 1 << code.edge_count()];
    let w = 1.0 / loops.len() as f64;
    for &x in &loops {
        probs[x as usize] = w;
    }
    FiniteDist::new(code.edge_count(), probs)
}

/// Unbiased loop sampler: XOR of a uniformly random subset of the vertex
/// stars.
pub fn sample_loops(code: &TorusCode, n: usize, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let masks: Vec<u64> = (0..code.plaquette_count())
        .map(|v| code.star_mask(v))
        .collect();
    (0..n)
        .map(|_| {
            let mut x = 0u64;
            for &m in &masks {
                if rng.gen::<bool>() {
                    x ^= m;
                }
            }
            x
        })
        .collect()
}

/// Tripartition of the edge set: `A = {center_edge}`, `B` the edges within
/// doubled distance `2r` (a buffer of width `r` lattice units), `C` the
/// rest.
pub fn edge_tripartition(code: &TorusCode, center_edge: usize, r: usize) -> Result<Tripartition> {
    if center_edge >= code.edge_count() {
        return Err(Error::InvalidRegion(format!(
            "edge {center_edge} out of range for {} edges",
            code.edge_count()
        )));
    }
    let mut b = Vec::new();
    let mut c = Vec::new();
    for e in 0..code.edge_count() {
        if e == center_edge {
            continue;
        }
        let d = code.edge_distance(center_edge, e);
        if d <= 2 * r {
            b.push(e);
        } else {
            c.push(e);
        }
    }
    Tripartition::from_regions(
        Region::new(vec![center_edge])?,
        Region::new(b)?,
        Region::new(c)?,
        r,
        code.edge_count(),
    )
}

/// Uniform flip of every edge with probability `p` applied to the loop
/// distribution.
pub fn noisy_loop_dist(code: &TorusCode, p: f64) -> Result<FiniteDist> {
    let all_edges = Region::new((0..code.edge_count()).collect())?;
    let ch = StochChannel::Flip(FlipChannel::new(p, all_edges)?);
    ch.apply(&loop_dist(code)?)
}

/// Exact CMI of the flip-noised loop distribution at each `p` in the grid,
/// in grid order.
pub fn toric_cmi_sweep(
    code: &TorusCode,
    ps: &[f64],
    part: &Tripartition,
) -> Result<Vec<(f64, f64)>> {
    let base = loop_dist(code)?;
    let all_edges = Region::new((0..code.edge_count()).collect())?;
    ps.iter()
        .map(|&p| {
            let ch = StochChannel::Flip(FlipChannel::new(p, all_edges.clone())?);
            let noisy = ch.apply(&base)?;
            Ok((p, cmi(&noisy, part)?))
        })
        .collect()
}

/// Entropy of the noised loop distribution restricted to region `Q`, via
/// the anyon-sector decomposition: flip patterns `e_Q` with equal net
/// syndrome differ by a loop restriction and are equiprobable, so
/// `H(X_Q) = H(sectors) + z_Q ln 2` with `2^{z_Q}` loop restrictions to
/// `Q`. Exact for arbitrary `Q`, holes included.
pub fn regional_entropy_via_anyons(code: &TorusCode, q: &Region, p: f64) -> Result<f64> {
    if q.is_empty() {
        return Ok(0.0);
    }
    if q.len() > 18 {
        return Err(Error::InvalidRegion(format!(
            "region of {} edges exceeds the 18-edge enumeration guard",
            q.len()
        )));
    }
    q.check_bounds(code.edge_count())?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("flip probability {p} outside [0, 1]")));
    }

    // Restrictions of the loop group to Q form a subgroup.
    let loops = enumerate_loops(code)?;
    let extract = |x: u64| -> u64 {
        q.sites()
            .iter()
            .enumerate()
            .fold(0u64, |acc, (j, &s)| acc | ((x >> s & 1) << j))
    };
    let subgroup: Vec<u64> = {
        let set: HashSet<u64> = loops.iter().map(|&x| extract(x)).collect();
        let mut v: Vec<u64> = set.into_iter().collect();
        v.sort_unstable();
        v
    };
    let z_q = (subgroup.len() as f64).log2();
    debug_assert!(subgroup.len().is_power_of_two());

    // Label cosets of the subgroup, then accumulate the binomial flip
    // weights per coset.
    let n = 1usize << q.len();
    let mut label = vec![u32::MAX; n];
    let mut next = 0u32;
    for e in 0..n {
        if label[e] != u32::MAX {
            continue;
        }
        for &v in &subgroup {
            label[e ^ v as usize] = next;
        }
        next += 1;
    }
    let mut sector_prob = vec![0.0f64; next as usize];
    let m = q.len() as i32;
    for (e, &lab) in label.iter().enumerate() {
        let ones = (e as u64).count_ones() as i32;
        sector_prob[lab as usize] += p.powi(ones) * (1.0 - p).powi(m - ones);
    }
    let h_sectors = -sector_prob
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|&w| w * w.ln())
        .sum::<f64>();
    Ok(h_sectors + z_q * std::f64::consts::LN_2)
}

/// CMI assembled from the four anyon-sector entropies of a tripartition.
pub fn cmi_via_anyons(code: &TorusCode, part: &Tripartition, p: f64) -> Result<f64> {
    let region = |sites: Vec<usize>| Region::new(sites);
    let h_ab = regional_entropy_via_anyons(code, &region(part.ab_sites())?, p)?;
    let h_bc = regional_entropy_via_anyons(code, &region(part.bc_sites())?, p)?;
    let h_b = regional_entropy_via_anyons(code, part.b(), p)?;
    let all = region((0..code.edge_count()).collect())?;
    let h_abc = regional_entropy_via_anyons(code, &all, p)?;
    Ok((h_ab + h_bc - h_b - h_abc).max(0.0))
}

/// The three channels of the bypass path between the loop distribution and
/// the fully mixed distribution: reset every edge to zero, flip every edge
/// with probability 1/2, and flip each loop generator (the four edges of a
/// dual plaquette, i.e. a vertex star) together with probability 1/2,
/// which rebuilds the loop mixture from the zero string.
#[derive(Debug, Clone)]
pub struct BypassChannels {
    pub reset: StochChannel,
    pub uniform_flip: StochChannel,
    pub plaquette_flip: StochChannel,
}

pub fn bypass_path_channels(code: &TorusCode) -> Result<BypassChannels> {
    let all_edges = Region::new((0..code.edge_count()).collect())?;
    let masks: Vec<u64> = (0..code.plaquette_count())
        .map(|v| code.star_mask(v))
        .collect();
    Ok(BypassChannels {
        reset: StochChannel::Reset(all_edges.clone()),
        uniform_flip: StochChannel::Flip(FlipChannel::new(0.5, all_edges.clone())?),
        plaquette_flip: StochChannel::XorMix { sites: all_edges, masks },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::info::{entropy, tv};
    use approx::assert_abs_diff_eq;

    #[test]
    fn incidence_invariants() {
        for l in [2, 3, 4] {
            let code = TorusCode::new(l).unwrap();
            for masks in [
                (0..code.plaquette_count()).map(|p| code.plaquette_mask(p)).collect::<Vec<_>>(),
                (0..code.plaquette_count()).map(|v| code.star_mask(v)).collect::<Vec<_>>(),
            ] {
                let mut edge_uses = vec![0usize; code.edge_count()];
                let mut total = 0u64;
                for &mask in &masks {
                    assert_eq!(mask.count_ones(), 4);
                    total ^= mask;
                    for e in 0..code.edge_count() {
                        if mask >> e & 1 == 1 {
                            edge_uses[e] += 1;
                        }
                    }
                }
                assert!(edge_uses.iter().all(|&u| u == 2), "each edge on 2 cells");
                assert_eq!(total, 0, "boundary of the full surface vanishes");
            }
            // Every star crosses every plaquette boundary evenly: the span
            // it generates is syndrome-free.
            for v in 0..code.plaquette_count() {
                for p in 0..code.plaquette_count() {
                    let shared = (code.star_mask(v) & code.plaquette_mask(p)).count_ones();
                    assert_eq!(shared % 2, 0, "star {v} vs plaquette {p}");
                }
            }
        }
    }

    /// Brute-force oracle: XOR over all 2^(L²) generator subsets, dedup.
    fn loops_brute_force(code: &TorusCode) -> HashSet<u64> {
        let mut set = HashSet::new();
        for subset in 0u64..(1 << code.plaquette_count()) {
            let mut x = 0u64;
            for v in 0..code.plaquette_count() {
                if subset >> v & 1 == 1 {
                    x ^= code.star_mask(v);
                }
            }
            set.insert(x);
        }
        set
    }

    #[test]
    fn loop_enumeration_matches_brute_force() {
        for l in [2, 3] {
            let code = TorusCode::new(l).unwrap();
            let loops = enumerate_loops(&code).unwrap();
            let expected = loops_brute_force(&code);
            assert_eq!(loops.len(), 1 << (l * l - 1));
            assert_eq!(loops.iter().copied().collect::<HashSet<_>>(), expected);
            // Support is a group under XOR containing zero.
            assert!(expected.contains(&0));
            for &a in loops.iter().take(32) {
                for &b in loops.iter().take(32) {
                    assert!(expected.contains(&(a ^ b)));
                }
            }
            // Every loop has trivial syndrome.
            for &x in &loops {
                assert!(anyon_syndrome(&code, x).is_trivial());
            }
        }
    }

    #[test]
    fn loop_dist_support_sizes() {
        let code2 = TorusCode::new(2).unwrap();
        assert_eq!(loop_dist(&code2).unwrap().support_size(), 8);
        let code3 = TorusCode::new(3).unwrap();
        assert_eq!(loop_dist(&code3).unwrap().support_size(), 256);
    }

    #[test]
    fn syndrome_examples() {
        let code = TorusCode::new(3).unwrap();
        assert!(anyon_syndrome(&code, 0).is_trivial());
        // A single flipped edge excites exactly its two plaquettes.
        for e in 0..code.edge_count() {
            let syndrome = anyon_syndrome(&code, 1 << e);
            assert_eq!(syndrome.anyon_count(), 2, "edge {e}");
        }
    }

    #[test]
    fn sampler_matches_loop_dist() {
        let code = TorusCode::new(2).unwrap();
        let samples = sample_loops(&code, 8000, 7);
        assert_eq!(samples, sample_loops(&code, 8000, 7), "seeded determinism");
        let loops: Vec<u64> = enumerate_loops(&code).unwrap();
        let mut counts = std::collections::HashMap::new();
        for &s in &samples {
            *counts.entry(s).or_insert(0usize) += 1;
            assert!(anyon_syndrome(&code, s).is_trivial());
        }
        assert_eq!(counts.len(), loops.len());
        for &x in &loops {
            let c = counts[&x];
            assert!(
                (c as i64 - 1000).unsigned_abs() <= 100,
                "loop {x:b} sampled {c} times"
            );
        }
    }

    #[test]
    fn regional_entropy_full_lattice_at_p0() {
        for l in [2, 3] {
            let code = TorusCode::new(l).unwrap();
            let q = Region::new((0..code.edge_count()).collect()).unwrap();
            let h = regional_entropy_via_anyons(&code, &q, 0.0).unwrap();
            let expected = (l * l - 1) as f64 * std::f64::consts::LN_2;
            assert_abs_diff_eq!(h, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn regional_entropy_matches_enumeration() {
        let code = TorusCode::new(2).unwrap();
        let noisy = noisy_loop_dist(&code, 0.1).unwrap();
        // Single edge.
        let q1 = Region::new(vec![3]).unwrap();
        let via_anyons = regional_entropy_via_anyons(&code, &q1, 0.1).unwrap();
        let direct = entropy(&noisy.marginal(q1.sites()).unwrap());
        assert_abs_diff_eq!(via_anyons, direct, epsilon = 1e-9);
        // A patch around the central edge.
        let center = code.central_edge();
        let patch: Vec<usize> = (0..code.edge_count())
            .filter(|&e| code.edge_distance(center, e) <= 2)
            .collect();
        let q2 = Region::new(patch).unwrap();
        let via_anyons = regional_entropy_via_anyons(&code, &q2, 0.1).unwrap();
        let direct = entropy(&noisy.marginal(q2.sites()).unwrap());
        assert_abs_diff_eq!(via_anyons, direct, epsilon = 1e-9);
    }

    #[test]
    fn cmi_vanishes_at_endpoints() {
        let code = TorusCode::new(2).unwrap();
        let part = edge_tripartition(&code, code.central_edge(), 1).unwrap();
        let rows = toric_cmi_sweep(&code, &[0.0, 0.5], &part).unwrap();
        assert!(rows[0].1 <= 1e-9, "CMI(p=0) = {}", rows[0].1);
        assert!(rows[1].1 <= 1e-9, "CMI(p=1/2) = {}", rows[1].1);
    }

    #[test]
    fn cmi_identity_via_anyons() {
        let code = TorusCode::new(2).unwrap();
        let part = edge_tripartition(&code, code.central_edge(), 1).unwrap();
        for p in [0.05, 0.15, 0.3] {
            let noisy = noisy_loop_dist(&code, p).unwrap();
            let direct = cmi(&noisy, &part).unwrap();
            let assembled = cmi_via_anyons(&code, &part, p).unwrap();
            assert_abs_diff_eq!(direct, assembled, epsilon = 1e-9);
        }
    }

    #[test]
    fn bypass_path_identities() {
        let code = TorusCode::new(2).unwrap();
        let channels = bypass_path_channels(&code).unwrap();
        let loops = loop_dist(&code).unwrap();
        let k = code.edge_count();

        let zero = channels.reset.apply(&loops).unwrap();
        assert!(tv(&zero, &FiniteDist::point_mass(k, 0).unwrap()).unwrap() <= 1e-12);

        let mixed = channels.uniform_flip.apply(&zero).unwrap();
        assert!(tv(&mixed, &FiniteDist::uniform(k).unwrap()).unwrap() <= 1e-12);

        let rebuilt = channels.plaquette_flip.apply(&zero).unwrap();
        assert!(tv(&rebuilt, &loops).unwrap() <= 1e-12);
    }
}
