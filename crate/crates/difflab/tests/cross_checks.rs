//! Cross-module checks: sample-based estimators against closed-form
//! oracles, stochastic against deterministic samplers, and the recovery
//! trend against the fitted decay length.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use difflab::gaussian::{self, GaussianDist};
use difflab::info::{cmi_via_mine, tv, FiniteDist, MineConfig};
use difflab::lattice::{Lattice, Region, Tripartition};
use difflab::score::{sample_backward, Dataset, NoiseSchedule, SamplerConfig, SamplerMode};
use difflab::toric::{self, TorusCode};

fn three_site_partition() -> Tripartition {
    Tripartition::from_regions(
        Region::new(vec![0]).unwrap(),
        Region::new(vec![1]).unwrap(),
        Region::new(vec![2]).unwrap(),
        1,
        3,
    )
    .unwrap()
}

fn gaussian_samples(p: &GaussianDist, n: usize, seed: u64) -> Vec<DMatrix<f64>> {
    let chol = p.cov().clone().cholesky().unwrap();
    let l = chol.l();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let k = p.dim();
    let mut cols: Vec<DMatrix<f64>> = (0..k).map(|_| DMatrix::zeros(n, 1)).collect();
    for i in 0..n {
        let z = DVector::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
        let x = &l * z;
        for j in 0..k {
            cols[j][(i, 0)] = x[j];
        }
    }
    cols
}

#[test]
fn gaussian_chain_suite_500_instances() {
    let report = gaussian::fawzi_chain_suite(500, 0x6A0).unwrap();
    assert_eq!(
        report.kl_cmi_violations, 0,
        "KL <= CMI violated, worst margin {}",
        report.max_kl_cmi_margin
    );
    assert_eq!(
        report.kl_dcmi_violations, 0,
        "KL <= I_before - I_after violated, worst margin {}",
        report.max_kl_dcmi_margin
    );
}

#[test]
fn mine_cmi_matches_gaussian_oracle() {
    // Direct A-C coupling behind a single buffer site; the closed-form CMI
    // is the oracle for the two-run MI-difference estimate.
    let mut precision = DMatrix::identity(3, 3);
    precision[(0, 1)] = -0.25;
    precision[(1, 0)] = -0.25;
    precision[(1, 2)] = -0.25;
    precision[(2, 1)] = -0.25;
    precision[(0, 2)] = -0.45;
    precision[(2, 0)] = -0.45;
    let p = GaussianDist::from_precision(precision).unwrap();
    let part = three_site_partition();
    let exact = gaussian::gaussian_cmi(&p, &part).unwrap();
    assert!(exact > 0.05, "oracle CMI too small to resolve: {exact}");

    let cols = gaussian_samples(&p, 16384, 0xCC1);
    let cfg = MineConfig { batch: 256, iters: 8000, seed: 0, ..Default::default() };
    let est = cmi_via_mine(&cols[0], &cols[1], &cols[2], &cfg).unwrap();
    let rel = (est - exact).abs() / exact;
    assert!(
        rel <= 0.2,
        "estimate {est:.4} vs exact {exact:.4}: relative error {:.1}%",
        rel * 100.0
    );
}

#[test]
fn mine_cmi_near_zero_for_product_and_chain() {
    // Product distribution: all blocks independent.
    let mut rng = ChaCha12Rng::seed_from_u64(0xCC2);
    let n = 8192;
    let mut randn = |_, _| -> f64 { StandardNormal.sample(&mut rng) };
    let xa = DMatrix::from_fn(n, 1, &mut randn);
    let xb = DMatrix::from_fn(n, 1, &mut randn);
    let xc = DMatrix::from_fn(n, 1, &mut randn);
    let cfg = MineConfig { batch: 256, iters: 3000, seed: 0, ..Default::default() };
    let est = cmi_via_mine(&xa, &xb, &xc, &cfg).unwrap();
    assert!(est.abs() <= 0.1, "product-distribution estimate {est}");

    // Gaussian chain with B separating A from C: CMI = 0 exactly.
    let mut precision = DMatrix::identity(3, 3);
    precision[(0, 1)] = -0.4;
    precision[(1, 0)] = -0.4;
    precision[(1, 2)] = -0.4;
    precision[(2, 1)] = -0.4;
    let p = GaussianDist::from_precision(precision).unwrap();
    assert!(gaussian::gaussian_cmi(&p, &three_site_partition()).unwrap() < 1e-10);
    let cols = gaussian_samples(&p, 8192, 0xCC3);
    let est = cmi_via_mine(&cols[0], &cols[1], &cols[2], &cfg).unwrap();
    assert!(est.abs() <= 0.1, "Markov-chain estimate {est}");
}

#[test]
fn eta_families_share_endpoint_statistics() {
    // Deterministic and stochastic backward passes integrate the same
    // marginals; the two-basin split must agree within finite-step noise.
    let lat = Lattice::line(2, false).unwrap();
    let ds = Dataset::from_points(&[vec![1.0, 0.0], vec![-1.0, 0.0]], lat).unwrap();
    let schedule = NoiseSchedule::linear(200).unwrap();
    let n_draws = 1000;

    let fraction_basin0 = |eta: f64, seed: u64| -> f64 {
        let cfg = SamplerConfig { eta, ..SamplerConfig::global(seed) };
        let ends = sample_backward(&ds, &schedule, &cfg, n_draws).unwrap();
        let hits = ends.iter().filter(|y| y[0] > 0.0).count();
        hits as f64 / n_draws as f64
    };

    let f_det = fraction_basin0(0.0, 0xE7A);
    let f_sde = fraction_basin0(1.0, 0xE7B);
    assert!(
        (f_det - f_sde).abs() <= 0.05,
        "basin fractions eta=0: {f_det:.3}, eta=1: {f_sde:.3}"
    );
}

#[test]
fn hybrid_protocol_recovers_data_points() {
    // Global updates only inside the configured window, local elsewhere.
    let lat = Lattice::line(2, false).unwrap();
    let ds = Dataset::from_points(&[vec![1.0, 0.0], vec![-1.0, 0.0]], lat).unwrap();
    let schedule = NoiseSchedule::linear(200).unwrap();
    let cfg = SamplerConfig {
        eta: 0.0,
        mode: SamplerMode::Hybrid,
        r: 1,
        global_intervals: vec![(0.2, 0.5)],
        seed: 0x49B,
    };
    let ends = sample_backward(&ds, &schedule, &cfg, 200).unwrap();
    let close = ends
        .iter()
        .filter(|y| {
            let d0 = ((y[0] - 1.0).powi(2) + y[1].powi(2)).sqrt();
            let d1 = ((y[0] + 1.0).powi(2) + y[1].powi(2)).sqrt();
            d0.min(d1) <= 0.1
        })
        .count();
    assert!(close >= 180, "only {close}/200 hybrid endpoints near a data point");
}

#[test]
fn recovery_slope_tracks_fitted_markov_length() {
    // ln KL vs r falls at least as fast as the square-root of the fitted
    // CMI decay (the bound chain relates KL to CMI, TV to its square root).
    let lat = Lattice::line(16, false).unwrap();
    let p0 = GaussianDist::gmrf_chain(16, 0.4).unwrap();
    let rs = [0usize, 1, 2, 3, 4];
    let kls: Vec<f64> = rs
        .iter()
        .map(|&r| gaussian::multi_step_local_recovery(&p0, &lat, 8, 1, r, 0.98).unwrap())
        .collect();
    let kl_fit = gaussian::markov_length_fit(
        &rs.iter().map(|&r| r as f64).collect::<Vec<_>>(),
        &kls,
    )
    .unwrap();

    // Markov length of the mid-diffusion state.
    let mut state = p0.clone();
    for n in 1..=4 {
        let t1 = (n - 1) as f64 * 0.98 / 8.0;
        let t2 = n as f64 * 0.98 / 8.0;
        state = gaussian::push(&gaussian::forward_step(t1, t2, 16).unwrap(), &state).unwrap();
    }
    let cmis = gaussian::cmi_vs_width(&state, &lat, 8, 1, &rs).unwrap();
    let cmi_fit = gaussian::markov_length_fit(
        &rs.iter().map(|&r| r as f64).collect::<Vec<_>>(),
        &cmis,
    )
    .unwrap();

    assert!(cmi_fit.xi.is_finite() && cmi_fit.xi > 0.0);
    assert!(kl_fit.xi.is_finite() && kl_fit.xi > 0.0);
    let kl_slope = 1.0 / kl_fit.xi;
    let half_cmi_slope = 0.5 / cmi_fit.xi;
    println!(
        "ln-KL slope {kl_slope:.2} vs half CMI slope {half_cmi_slope:.2} (xi = {:.3})",
        cmi_fit.xi
    );
    assert!(
        kl_slope >= half_cmi_slope,
        "recovery error decays slower ({kl_slope:.2}) than the fitted bound ({half_cmi_slope:.2})"
    );
}

#[test]
fn toric_l3_cmi_identity_and_bypass() {
    let code = TorusCode::new(3).unwrap();
    let part = toric::edge_tripartition(&code, code.central_edge(), 1).unwrap();
    for p in [0.05, 0.12] {
        let noisy = toric::noisy_loop_dist(&code, p).unwrap();
        let direct = difflab::info::cmi(&noisy, &part).unwrap();
        let assembled = toric::cmi_via_anyons(&code, &part, p).unwrap();
        assert!(
            (direct - assembled).abs() <= 1e-9,
            "p = {p}: direct {direct} vs assembled {assembled}"
        );
    }

    let channels = toric::bypass_path_channels(&code).unwrap();
    let loops = toric::loop_dist(&code).unwrap();
    let k = code.edge_count();
    let zero = channels.reset.apply(&loops).unwrap();
    assert!(tv(&zero, &FiniteDist::point_mass(k, 0).unwrap()).unwrap() <= 1e-12);
    let mixed = channels.uniform_flip.apply(&zero).unwrap();
    assert!(tv(&mixed, &FiniteDist::uniform(k).unwrap()).unwrap() <= 1e-12);
}

#[test]
fn sampled_loops_follow_exact_frequencies() {
    // Chi-square sanity of the sampler against the exact distribution.
    let code = TorusCode::new(2).unwrap();
    let n = 16000;
    let samples = toric::sample_loops(&code, n, 0x10F);
    let loops: std::collections::HashSet<u64> =
        toric::enumerate_loops(&code).unwrap().into_iter().collect();
    let mut counts: std::collections::HashMap<u64, usize> = std::collections::HashMap::new();
    for s in samples {
        assert!(loops.contains(&s));
        *counts.entry(s).or_insert(0) += 1;
    }
    let expected = n as f64 / loops.len() as f64;
    let chi2: f64 = counts
        .values()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    // 7 degrees of freedom; 29.9 is the 1e-4 tail.
    assert!(chi2 < 29.9, "chi-square {chi2}");
}
