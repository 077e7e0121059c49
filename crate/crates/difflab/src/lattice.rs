//! Lattice geometry, region algebra, and the sub-step scheduler.
//!
//! Sites live on a 1D chain or 2D square grid of linear size `L`, open or
//! periodic. All distances are Chebyshev (ℓ∞): the buffer of width `r`
//! around a square region is again square, so shells compose cleanly.
//!
//! A [`Tripartition`] splits the sites into a local region `A`, the buffer
//! `B` of all sites within distance `r` of `A`, and the remainder `C`. The
//! nearest `C` site is therefore at distance `r + 1` from `A`: `r` counts
//! the shells one must cross, which is the "buffer width" convention used
//! throughout the crate.
//!
//! [`reorganize`] splits one noising step into sub-steps whose regions are
//! pairwise at distance >= 2r + 1, so that the `A ∪ B` blocks of distinct
//! regions in a sub-step never share a site.

use crate::error::{Error, Result};

/// A 1D or 2D site lattice with open or periodic boundaries.
///
/// Sites are indexed row-major: in 2D, site `x * L + y` has coordinates
/// `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lattice {
    d: usize,
    l: usize,
    periodic: bool,
}

impl Lattice {
    pub fn new(d: usize, l: usize, periodic: bool) -> Result<Self> {
        if d != 1 && d != 2 {
            return Err(Error::InvalidLattice(format!(
                "dimension must be 1 or 2, got {d}"
            )));
        }
        if l == 0 {
            return Err(Error::InvalidLattice("linear size must be >= 1".into()));
        }
        Ok(Self { d, l, periodic })
    }

    /// 1D chain of `l` sites.
    pub fn line(l: usize, periodic: bool) -> Result<Self> {
        Self::new(1, l, periodic)
    }

    /// 2D square grid of `l * l` sites.
    pub fn grid(l: usize, periodic: bool) -> Result<Self> {
        Self::new(2, l, periodic)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn linear_size(&self) -> usize {
        self.l
    }

    pub fn periodic(&self) -> bool {
        self.periodic
    }

    /// Total number of sites, `K = L^d`.
    pub fn site_count(&self) -> usize {
        self.l.pow(self.d as u32)
    }

    /// Coordinates of a site; the second component is 0 in 1D.
    pub fn coords(&self, site: usize) -> [usize; 2] {
        debug_assert!(site < self.site_count());
        if self.d == 1 {
            [site, 0]
        } else {
            [site / self.l, site % self.l]
        }
    }

    /// Site index at the given coordinates.
    pub fn site_at(&self, coords: [usize; 2]) -> usize {
        if self.d == 1 {
            coords[0]
        } else {
            coords[0] * self.l + coords[1]
        }
    }

    fn axis_distance(&self, a: usize, b: usize) -> usize {
        let diff = a.abs_diff(b);
        if self.periodic {
            diff.min(self.l - diff)
        } else {
            diff
        }
    }

    /// Chebyshev distance between two sites, wrapping on periodic lattices.
    pub fn distance(&self, s1: usize, s2: usize) -> usize {
        let c1 = self.coords(s1);
        let c2 = self.coords(s2);
        let dx = self.axis_distance(c1[0], c2[0]);
        if self.d == 1 {
            dx
        } else {
            dx.max(self.axis_distance(c1[1], c2[1]))
        }
    }
}

/// An ordered set of site indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    sites: Vec<usize>,
}

impl Region {
    /// Builds a region from site indices; sorts and rejects duplicates.
    pub fn new(mut sites: Vec<usize>) -> Result<Self> {
        sites.sort_unstable();
        if sites.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidRegion("duplicate site index".into()));
        }
        Ok(Self { sites })
    }

    pub fn empty() -> Self {
        Self { sites: Vec::new() }
    }

    pub fn sites(&self) -> &[usize] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn contains(&self, site: usize) -> bool {
        self.sites.binary_search(&site).is_ok()
    }

    /// Validates that every site index fits a lattice of `site_count` sites.
    pub fn check_bounds(&self, site_count: usize) -> Result<()> {
        match self.sites.last() {
            Some(&max) if max >= site_count => Err(Error::InvalidRegion(format!(
                "site {max} out of range for {site_count} sites"
            ))),
            _ => Ok(()),
        }
    }
}

/// Minimum pairwise Chebyshev distance between two nonempty regions.
pub fn region_distance(lat: &Lattice, r1: &Region, r2: &Region) -> Result<usize> {
    if r1.is_empty() || r2.is_empty() {
        return Err(Error::InvalidRegion(
            "region distance requires nonempty regions".into(),
        ));
    }
    r1.check_bounds(lat.site_count())?;
    r2.check_bounds(lat.site_count())?;
    let mut best = usize::MAX;
    for &a in r1.sites() {
        for &b in r2.sites() {
            best = best.min(lat.distance(a, b));
        }
    }
    Ok(best)
}

/// Lattice regions `A`, `B`, `C` with buffer width `r`.
///
/// `B` holds every site at distance 1..=r from `A`; `C` is the rest, so
/// `dist(A, C) = r + 1` whenever `C` is nonempty (on open lattices the
/// buffer is clipped at the boundary).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tripartition {
    a: Region,
    b: Region,
    c: Region,
    r: usize,
    site_count: usize,
}

impl Tripartition {
    /// Assembles a tripartition from explicit regions, checking only the
    /// partition algebra (pairwise disjoint, covers `0..site_count`).
    /// Geometric invariants are guaranteed when built through
    /// [`build_tripartition`] or [`Tripartition::around`].
    pub fn from_regions(
        a: Region,
        b: Region,
        c: Region,
        r: usize,
        site_count: usize,
    ) -> Result<Self> {
        let mut seen = vec![false; site_count];
        for region in [&a, &b, &c] {
            region.check_bounds(site_count)?;
            for &s in region.sites() {
                if seen[s] {
                    return Err(Error::InvalidPartition(format!(
                        "site {s} appears in more than one region"
                    )));
                }
                seen[s] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|&v| !v) {
            return Err(Error::InvalidPartition(format!(
                "site {missing} not covered by any region"
            )));
        }
        Ok(Self {
            a,
            b,
            c,
            r,
            site_count,
        })
    }

    /// Builds the tripartition with `A = a`, `B` the distance-`1..=r` shell
    /// around it, and `C` the remainder.
    pub fn around(lat: &Lattice, a: Region, r: usize) -> Result<Self> {
        if a.is_empty() {
            return Err(Error::InvalidRegion("region A must be nonempty".into()));
        }
        a.check_bounds(lat.site_count())?;
        let mut b = Vec::new();
        let mut c = Vec::new();
        for s in 0..lat.site_count() {
            if a.contains(s) {
                continue;
            }
            let dist = a.sites().iter().map(|&t| lat.distance(s, t)).min().unwrap();
            if dist <= r {
                b.push(s);
            } else {
                c.push(s);
            }
        }
        Self::from_regions(a, Region::new(b)?, Region::new(c)?, r, lat.site_count())
    }

    pub fn a(&self) -> &Region {
        &self.a
    }

    pub fn b(&self) -> &Region {
        &self.b
    }

    pub fn c(&self) -> &Region {
        &self.c
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn site_count(&self) -> usize {
        self.site_count
    }

    /// Sites of `A` followed by sites of `B`: the coordinate order used for
    /// every marginal on `A ∪ B`.
    pub fn ab_sites(&self) -> Vec<usize> {
        let mut sites = self.a.sites().to_vec();
        sites.extend_from_slice(self.b.sites());
        sites
    }

    /// Sites of `B` followed by sites of `C`.
    pub fn bc_sites(&self) -> Vec<usize> {
        let mut sites = self.b.sites().to_vec();
        sites.extend_from_slice(self.c.sites());
        sites
    }
}

/// Builds the tripartition around the `k`-block centered at `center`.
///
/// The block spans offsets `-(k-1)/2 ..= k/2` per axis; on open lattices it
/// must fit without clipping.
pub fn build_tripartition(
    lat: &Lattice,
    center: usize,
    k: usize,
    r: usize,
) -> Result<Tripartition> {
    let a = block_at(lat, center, k)?;
    Tripartition::around(lat, a, r)
}

fn block_at(lat: &Lattice, center: usize, k: usize) -> Result<Region> {
    if center >= lat.site_count() {
        return Err(Error::InvalidRegion(format!(
            "center {center} out of range for {} sites",
            lat.site_count()
        )));
    }
    if k == 0 || k > lat.linear_size() {
        return Err(Error::InvalidRegion(format!(
            "block size {k} must be in 1..={}",
            lat.linear_size()
        )));
    }
    let c = lat.coords(center);
    let lo = -((k as isize - 1) / 2);
    let hi = k as isize / 2;
    let axis_positions = |center_axis: usize| -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(k);
        for off in lo..=hi {
            let pos = center_axis as isize + off;
            let pos = if lat.periodic() {
                pos.rem_euclid(lat.linear_size() as isize) as usize
            } else if pos < 0 || pos >= lat.linear_size() as isize {
                return Err(Error::InvalidRegion(format!(
                    "block of size {k} at center {center_axis} does not fit an open lattice"
                )));
            } else {
                pos as usize
            };
            out.push(pos);
        }
        Ok(out)
    };
    let xs = axis_positions(c[0])?;
    let mut sites = Vec::with_capacity(k.pow(lat.dim() as u32));
    if lat.dim() == 1 {
        sites.extend(xs);
    } else {
        let ys = axis_positions(c[1])?;
        for &x in &xs {
            for &y in &ys {
                sites.push(lat.site_at([x, y]));
            }
        }
    }
    Region::new(sites)
}

/// Grouping of the lattice's `k`-block tiling into sub-steps whose regions
/// are pairwise at Chebyshev distance >= 2r + 1.
#[derive(Debug, Clone)]
pub struct ReorgSchedule {
    substeps: Vec<Vec<Region>>,
    k: usize,
    r: usize,
}

impl ReorgSchedule {
    pub fn substeps(&self) -> &[Vec<Region>] {
        &self.substeps
    }

    pub fn substep_count(&self) -> usize {
        self.substeps.len()
    }

    pub fn block_size(&self) -> usize {
        self.k
    }

    pub fn separation(&self) -> usize {
        self.r
    }

    /// All regions in sub-step order.
    pub fn regions(&self) -> impl Iterator<Item = &Region> {
        self.substeps.iter().flatten()
    }
}

/// Half-open axis interval `[start, end)`, one factor of a block.
#[derive(Debug, Clone, Copy)]
struct AxisInterval {
    start: usize,
    end: usize,
}

fn axis_interval_distance(lat: &Lattice, a: AxisInterval, b: AxisInterval) -> usize {
    let (first, second) = if a.start <= b.start { (a, b) } else { (b, a) };
    if second.start < first.end {
        return 0;
    }
    let forward = second.start - (first.end - 1);
    if lat.periodic() {
        let backward = first.start + lat.linear_size() - (second.end - 1);
        forward.min(backward)
    } else {
        forward
    }
}

/// First-fit grouping of the axis intervals so that members of one group are
/// pairwise at least `need` apart.
fn group_axis(lat: &Lattice, intervals: &[AxisInterval], need: usize) -> Vec<usize> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut labels = vec![0usize; intervals.len()];
    for (i, &iv) in intervals.iter().enumerate() {
        let fit = groups.iter().position(|members| {
            members
                .iter()
                .all(|&j| axis_interval_distance(lat, iv, intervals[j]) >= need)
        });
        let g = match fit {
            Some(g) => g,
            None => {
                groups.push(Vec::new());
                groups.len() - 1
            }
        };
        groups[g].push(i);
        labels[i] = g;
    }
    labels
}

/// Partitions the lattice into `k`-blocks and groups them into sub-steps
/// with pairwise separation >= 2r + 1 (coset tiling with stride `2r + k`,
/// with extra sub-steps where the stride does not divide `L`).
///
/// Every site is covered exactly once across all sub-steps; blocks at the
/// open boundary (or where `k` does not divide `L`) are clipped.
pub fn reorganize(lat: &Lattice, k: usize, r: usize) -> Result<ReorgSchedule> {
    if k == 0 || k > lat.linear_size() {
        return Err(Error::InvalidRegion(format!(
            "block size {k} must be in 1..={}",
            lat.linear_size()
        )));
    }
    let l = lat.linear_size();
    let intervals: Vec<AxisInterval> = (0..l)
        .step_by(k)
        .map(|s| AxisInterval {
            start: s,
            end: (s + k).min(l),
        })
        .collect();
    let need = 2 * r + 1;
    let labels = group_axis(lat, &intervals, need);
    let groups_per_axis = labels.iter().max().map_or(0, |&m| m + 1);

    let substep_index = |bi: usize, bj: usize| -> usize {
        if lat.dim() == 1 {
            labels[bi]
        } else {
            labels[bi] * groups_per_axis + labels[bj]
        }
    };
    let n_slots = if lat.dim() == 1 {
        groups_per_axis
    } else {
        groups_per_axis * groups_per_axis
    };

    let mut substeps: Vec<Vec<Region>> = vec![Vec::new(); n_slots];
    if lat.dim() == 1 {
        for (bi, iv) in intervals.iter().enumerate() {
            let region = Region::new((iv.start..iv.end).collect())?;
            substeps[substep_index(bi, 0)].push(region);
        }
    } else {
        for (bi, ivx) in intervals.iter().enumerate() {
            for (bj, ivy) in intervals.iter().enumerate() {
                let mut sites = Vec::with_capacity(k * k);
                for x in ivx.start..ivx.end {
                    for y in ivy.start..ivy.end {
                        sites.push(lat.site_at([x, y]));
                    }
                }
                substeps[substep_index(bi, bj)].push(Region::new(sites)?);
            }
        }
    }
    substeps.retain(|s| !s.is_empty());
    Ok(ReorgSchedule { substeps, k, r })
}

/// Buffer width needed for a target recovery error: `⌈2ξ ln(√γ N K / ε)⌉`,
/// clamped to 0 when the bound is vacuous.
pub fn required_radius(xi: f64, n_steps: u64, sites: u64, eps: f64, gamma: f64) -> Result<usize> {
    if !(xi > 0.0) || !xi.is_finite() {
        return Err(Error::Domain(format!("markov length must be positive, got {xi}")));
    }
    if n_steps == 0 || sites == 0 {
        return Err(Error::Domain("step and site counts must be positive".into()));
    }
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::Domain(format!("target error must be positive, got {eps}")));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::Domain(format!("prefactor must be positive, got {gamma}")));
    }
    let arg = gamma.sqrt() * n_steps as f64 * sites as f64 / eps;
    if arg <= 1.0 {
        return Ok(0);
    }
    Ok((2.0 * xi * arg.ln()).ceil() as usize)
}
