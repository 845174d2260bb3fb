use bhm_core::accum::{Domain, SampleAccumulator};
use bhm_core::errors::{
    bootstrap_error, covariance_band, covariance_error, evolution_error, robust_error,
    uniform_grid, BandError, ErrorMethod, EvolutionTrace, DEFAULT_GRID_POINTS,
};
use bhm_core::hierarchy::build;
use bhm_core::nalgebra::{DMatrix, DVector};
use bhm_core::splinefit::{adaptive_fit, FitConfig, SplineModel};
use bhm_core::testbed::{builtin, sample};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn constant_model(lo: f64, hi: f64, c: f64, var: f64) -> SplineModel {
    SplineModel {
        order: 0,
        breakpoints: vec![lo, hi],
        piece_coeffs: vec![vec![c]],
        theta: DVector::from_element(1, c),
        free_cov: DMatrix::from_element(1, 1, var),
        param_map: vec![DMatrix::identity(1, 1)],
    }
}

fn cubic_parts(m: usize, n_each: u64, seed0: u64) -> Vec<SampleAccumulator> {
    let dist = builtin("cubic").unwrap();
    let domain = Domain::new(1.0, 2.8).unwrap();
    (0..m)
        .map(|i| {
            let mut acc = SampleAccumulator::new(domain, 6, None).unwrap();
            sample(&dist, n_each, seed0 + i as u64, &mut acc, None).unwrap();
            acc
        })
        .collect()
}

fn merge_all(parts: &[SampleAccumulator]) -> SampleAccumulator {
    let mut acc = parts[0].clone();
    for p in &parts[1..] {
        acc = acc.merge(p).unwrap();
    }
    acc
}

#[test]
fn covariance_constant_model() {
    let model = constant_model(0.0, 2.0, 5.0, 0.04);
    for x in [0.0, 0.3, 1.0, 2.0] {
        assert!((covariance_error(&model, x).unwrap() - 0.2).abs() <= 1e-15);
    }
    assert!(matches!(
        covariance_error(&model, 2.5),
        Err(BandError::Fit(_))
    ));
}

#[test]
fn covariance_diagonal_expansion() {
    // m = 1 on [0,2]: local u = x − 1, diag C → sqrt(σ0² + σ1²u²)
    let mut model = constant_model(0.0, 2.0, 0.0, 0.0);
    model.order = 1;
    model.piece_coeffs = vec![vec![0.0, 0.0]];
    model.theta = DVector::zeros(2);
    model.free_cov = DMatrix::from_diagonal(&DVector::from_vec(vec![0.09, 0.16]));
    model.param_map = vec![DMatrix::identity(2, 2)];
    let expect = |x: f64| (0.09 + 0.16 * (x - 1.0) * (x - 1.0)).sqrt();
    for x in [0.0, 0.5, 1.0, 1.5, 2.0] {
        assert!((covariance_error(&model, x).unwrap() - expect(x)).abs() <= 1e-15);
    }
    assert!((covariance_error(&model, 1.0).unwrap() - 0.3).abs() <= 1e-15);
    assert!((covariance_error(&model, 2.0).unwrap() - 0.5).abs() <= 1e-15);
}

#[test]
fn covariance_corruption_detected() {
    let model = constant_model(0.0, 1.0, 1.0, -1.0);
    assert!(matches!(
        covariance_error(&model, 0.5),
        Err(BandError::CorruptCovariance { .. })
    ));
    // rounding-scale negative is clamped, not reported
    let model = constant_model(0.0, 1.0, 1.0, -1e-13);
    assert_eq!(covariance_error(&model, 0.5).unwrap(), 0.0);
}

#[test]
fn covariance_band_is_continuous_across_knots() {
    let parts = cubic_parts(1, 40_000, 5);
    let h = build(&parts[0], 10).unwrap();
    let cfg = FitConfig { order: 2, ..FitConfig::default() };
    let (model, _) = adaptive_fit(&h, &cfg, &[]).unwrap();
    let grid = uniform_grid(model.domain(), DEFAULT_GRID_POINTS);
    let band = covariance_band(&model, &grid).unwrap();
    assert_eq!(band.method, ErrorMethod::Covariance);
    assert_eq!(band.x.len(), 512);
    assert!(band.sigma.iter().all(|s| s.is_finite() && *s >= 0.0));
    // the value at an interior knot is the same functional of θ seen from
    // either side, so its propagated error must agree too
    for p in 1..model.n_pieces() {
        let knot = model.breakpoints[p];
        let eps = 1e-9;
        let left = covariance_error(&model, knot - eps).unwrap();
        let right = covariance_error(&model, knot + eps).unwrap();
        assert!((left - right).abs() <= 1e-6 * left.max(1e-30), "{left} vs {right}");
    }
}

#[test]
fn uniform_grid_conventions() {
    let d = Domain::new(-1.0, 3.0).unwrap();
    let g = uniform_grid(d, 5);
    assert_eq!(g, vec![-1.0, 0.0, 1.0, 2.0, 3.0]);
    assert_eq!(uniform_grid(d, 0), vec![-1.0, 3.0]);
    let g = uniform_grid(Domain::new(0.1, 0.7).unwrap(), 512);
    assert_eq!(g.len(), 512);
    assert_eq!(g[0], 0.1);
    assert_eq!(g[511], 0.7);
    assert!(g.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn bootstrap_single_part_is_degenerate() {
    // one part: every multinomial draw returns the whole histogram
    let parts = cubic_parts(1, 5_000, 7);
    let h = build(&parts[0], 10).unwrap();
    let cfg = FitConfig::default();
    let (model, diag) = adaptive_fit(&h, &cfg, &[]).unwrap();
    assert!(diag.accepted);
    let grid = uniform_grid(model.domain(), 33);
    let band =
        bootstrap_error(&parts, &model.breakpoints, &cfg, &[], 8, &grid, 99).unwrap();
    assert_eq!(band.method, ErrorMethod::Bootstrap);
    assert!(band.sigma.iter().all(|s| *s == 0.0), "{:?}", band.sigma);
}

#[test]
fn bootstrap_is_deterministic_and_seed_sensitive() {
    let parts = cubic_parts(4, 5_000, 11);
    let merged = merge_all(&parts);
    let h = build(&merged, 10).unwrap();
    let cfg = FitConfig::default();
    let (model, _) = adaptive_fit(&h, &cfg, &[]).unwrap();
    let grid = uniform_grid(model.domain(), 17);
    let a = bootstrap_error(&parts, &model.breakpoints, &cfg, &[], 16, &grid, 1).unwrap();
    let b = bootstrap_error(&parts, &model.breakpoints, &cfg, &[], 16, &grid, 1).unwrap();
    let c = bootstrap_error(&parts, &model.breakpoints, &cfg, &[], 16, &grid, 2).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.sigma, c.sigma);
    assert!(a.sigma.iter().all(|s| s.is_finite() && *s >= 0.0));
    assert!(a.sigma.iter().any(|s| *s > 0.0));
}

#[test]
fn bootstrap_tracks_covariance_scale() {
    // same data, two band methods: agreement within a loose factor guards
    // against gross normalization slips (e.g. a stray 1/√N)
    let parts = cubic_parts(8, 5_000, 21);
    let merged = merge_all(&parts);
    let h = build(&merged, 10).unwrap();
    let cfg = FitConfig::default();
    let (model, diag) = adaptive_fit(&h, &cfg, &[]).unwrap();
    assert!(diag.accepted);
    let grid = uniform_grid(model.domain(), 9);
    let boot =
        bootstrap_error(&parts, &model.breakpoints, &cfg, &[], 64, &grid, 3).unwrap();
    let cov = covariance_band(&model, &grid).unwrap();
    for (b, c) in boot.sigma.iter().zip(&cov.sigma) {
        assert!(*b > 0.2 * c && *b < 5.0 * c, "bootstrap {b} vs covariance {c}");
    }
}

#[test]
fn bootstrap_mean_sigma_is_permutation_invariant() {
    // reversing the parts relabels the multinomial cells; the band is a
    // different draw from the same distribution, so seed-ensemble means of
    // sigma at a probe point must agree statistically
    let parts = cubic_parts(4, 2_500, 31);
    let reversed: Vec<_> = parts.iter().rev().cloned().collect();
    let merged = merge_all(&parts);
    let h = build(&merged, 10).unwrap();
    let cfg = FitConfig::default();
    let (model, _) = adaptive_fit(&h, &cfg, &[]).unwrap();
    let grid = [1.9f64];
    let ensemble = |ps: &[SampleAccumulator]| -> (f64, f64) {
        let mut stats = bhm_core::accum::BinStats::default();
        for seed in 0..12u64 {
            let band =
                bootstrap_error(ps, &model.breakpoints, &cfg, &[], 24, &grid, seed)
                    .unwrap();
            stats.push(band.sigma[0]);
        }
        let n = stats.count as f64;
        (stats.mean, (stats.m2 / ((n - 1.0) * n)).sqrt())
    };
    let (mean_a, se_a) = ensemble(&parts);
    let (mean_b, se_b) = ensemble(&reversed);
    let se = (se_a * se_a + se_b * se_b).sqrt();
    assert!(
        (mean_a - mean_b).abs() <= 3.0 * se,
        "{mean_a} vs {mean_b} (se {se})"
    );
}

#[test]
fn bootstrap_argument_validation() {
    let parts = cubic_parts(3, 2_000, 41);
    let merged = merge_all(&parts);
    let h = build(&merged, 10).unwrap();
    let cfg = FitConfig::default();
    let (model, _) = adaptive_fit(&h, &cfg, &[]).unwrap();
    let grid = [1.5f64];

    assert!(matches!(
        bootstrap_error(&[], &model.breakpoints, &cfg, &[], 4, &grid, 0),
        Err(BandError::NoParts)
    ));
    assert!(matches!(
        bootstrap_error(&parts, &model.breakpoints, &cfg, &[], 2, &grid, 0),
        Err(BandError::FewReplicas { m_tilde: 2, parts: 3 })
    ));

    // a part on a different elementary grid is rejected up front
    let mut bad = parts.clone();
    bad.push(SampleAccumulator::new(Domain::new(1.0, 2.8).unwrap(), 4, None).unwrap());
    assert!(matches!(
        bootstrap_error(&bad, &model.breakpoints, &cfg, &[], 8, &grid, 0),
        Err(BandError::MismatchedParts)
    ));
}

#[test]
fn bootstrap_aborts_on_hopeless_parts() {
    // 5 records total: every replica hierarchy is all-unusable, every draw
    // is redrawn, and the 10% budget trips immediately
    let dist = builtin("cubic").unwrap();
    let mut acc = SampleAccumulator::new(Domain::new(1.0, 2.8).unwrap(), 4, None).unwrap();
    sample(&dist, 5, 1, &mut acc, None).unwrap();
    let cfg = FitConfig::default();
    let grid = [1.5f64];
    let got = bootstrap_error(&[acc], &[1.0, 2.8], &cfg, &[], 5, &grid, 0);
    assert!(matches!(got, Err(BandError::TooManyRedraws { .. })), "{got:?}");
}

#[test]
fn evolution_one_over_k_sequence_is_exact() {
    // f̃_k = c + d/k with d divisible by every k: increments built from
    // integer-exact floats, so A_k = c and σ* = 0 with no rounding at all
    let (c, d) = (1000.0f64, 360.0f64);
    let grid = vec![0.0, 1.0];
    for k0 in 1..=3usize {
        let mut trace = EvolutionTrace::new(50_000, k0, grid.clone()).unwrap();
        for k in 1..=6u32 {
            let v = c + d / k as f64;
            trace.push_snapshot(vec![v, v]).unwrap();
        }
        assert_eq!(trace.sigma_star().unwrap(), vec![0.0, 0.0], "k0 = {k0}");
        let band = evolution_error(&trace).unwrap();
        assert_eq!(band.sigma, vec![0.0, 0.0]);
        assert_eq!(band.method, ErrorMethod::Evolution);
        assert_eq!(band.x, grid);
    }
}

#[test]
fn evolution_matches_hand_computed_dispersion() {
    // f̃_k = S_k/k with S_k the prefix sums of a: then A_k = a_k, and the
    // sample dispersion of a_2..a_8 is known in closed form
    let a = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0];
    let mut trace = EvolutionTrace::new(1000, 1, vec![0.5]).unwrap();
    let mut s = 0.0;
    for (k, &ak) in a.iter().enumerate() {
        s += ak;
        trace.push_snapshot(vec![s / (k + 1) as f64]).unwrap();
    }
    // a_2..a_8 = [1,4,1,5,9,2,6]: mean 4, Σdev² = 52, ddof 1
    let expect = (52.0f64 / 6.0).sqrt();
    let star = trace.sigma_star().unwrap()[0];
    assert!((star - expect).abs() <= 1e-9 * expect, "{star} vs {expect}");
    let band = evolution_error(&trace).unwrap();
    assert!((band.sigma[0] - expect / 8.0f64.sqrt()).abs() <= 1e-9 * expect);
}

#[test]
fn evolution_argument_validation() {
    assert!(matches!(
        EvolutionTrace::new(0, 1, vec![0.0]),
        Err(BandError::BadTrace)
    ));
    assert!(matches!(
        EvolutionTrace::new(10, 0, vec![0.0]),
        Err(BandError::BadTrace)
    ));
    assert!(matches!(EvolutionTrace::new(10, 1, vec![]), Err(BandError::BadTrace)));

    let mut trace = EvolutionTrace::new(10, 2, vec![0.0, 1.0]).unwrap();
    assert!(matches!(
        trace.push_snapshot(vec![1.0]),
        Err(BandError::GridMismatch { have: 1, expect: 2 })
    ));
    for _ in 0..3 {
        trace.push_snapshot(vec![1.0, 2.0]).unwrap();
    }
    assert!(matches!(
        trace.sigma_star(),
        Err(BandError::InsufficientSnapshots { have: 3, need: 4 })
    ));
}

#[test]
fn robust_identical_runs_give_zero() {
    let runs: Vec<_> = (0..30).map(|_| constant_model(0.0, 1.0, 2.0, 0.0)).collect();
    assert_eq!(robust_error(&runs, 0.5).unwrap(), 0.0);
    let short = &runs[..29];
    assert!(matches!(robust_error(short, 0.5), Err(BandError::TooFewRuns { have: 29 })));
}

#[test]
fn robust_small_ensemble_oracles() {
    // values 1..=30: every 21-wide window spans 20 and covers the mean 15.5
    let runs: Vec<_> =
        (1..=30).map(|i| constant_model(0.0, 1.0, i as f64, 0.0)).collect();
    assert_eq!(robust_error(&runs, 0.5).unwrap(), 10.0);

    // 29 zeros and one outlier: the only window containing the mean is the
    // one reaching the outlier, so the covering rule must NOT report 0
    let mut values = vec![0.0; 29];
    values.push(100.0);
    let runs: Vec<_> =
        values.iter().map(|&v| constant_model(0.0, 1.0, v, 0.0)).collect();
    assert_eq!(robust_error(&runs, 0.5).unwrap(), 50.0);
}

#[test]
fn robust_normal_ensemble_recovers_sigma() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let runs: Vec<_> = (0..10_000)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            constant_model(0.0, 1.0, z, 0.0)
        })
        .collect();
    let sigma = robust_error(&runs, 0.3).unwrap();
    assert!((sigma - 1.0).abs() <= 0.05, "{sigma}");
}
