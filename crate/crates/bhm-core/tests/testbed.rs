use std::f64::consts::PI;

use bhm_core::accum::{BinStats, Domain, Edges, SampleAccumulator};
use bhm_core::hierarchy::build;
use bhm_core::splinefit::{adaptive_fit, eval, FitConfig};
use bhm_core::testbed::{
    builtin, elementary_only_fit, naive_histogram, sample, Builtin, SamplerKind,
};

fn cfg(order: u32) -> FitConfig {
    FitConfig { order, min_count: 1, ..FitConfig::default() }
}

fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    let mut sum = f(a) + f(b);
    for i in 1..panels {
        let x = a + i as f64 * h;
        sum += if i % 2 == 1 { 4.0 * f(x) } else { 2.0 * f(x) };
    }
    sum * h / 3.0
}

#[test]
fn builtin_lookup() {
    for (name, kind, sampler) in [
        ("cubic", Builtin::Cubic, SamplerKind::Rejection),
        ("quartic", Builtin::Quartic, SamplerKind::Rejection),
        ("exp", Builtin::Exp, SamplerKind::InverseCdf),
        ("cosine", Builtin::Cosine, SamplerKind::Rejection),
        ("divergent", Builtin::Divergent, SamplerKind::InverseCdf),
        ("signtoy", Builtin::SignToy, SamplerKind::MarkovChain),
    ] {
        let d = builtin(name).unwrap();
        assert_eq!(d.kind, kind);
        assert_eq!(d.name(), name);
        assert_eq!(d.sampler(), sampler);
    }
    assert!(builtin("gaussian").is_err());
    assert!(builtin("divergent").unwrap().default_transform().is_some());
    assert!(builtin("cubic").unwrap().default_transform().is_none());
}

#[test]
fn frozen_target_values() {
    let quartic = builtin("quartic").unwrap();
    assert!((quartic.f(0.5) - (-0.1375)).abs() <= 1e-15, "0.0625 - 0.2");

    // cubic strictly positive on its domain, minimum 1 at the left edge
    let cubic = builtin("cubic").unwrap();
    let mut min = f64::INFINITY;
    for i in 0..=4096 {
        let x = 1.0 + 1.8 * i as f64 / 4096.0;
        min = min.min(cubic.f(x));
    }
    assert!((min - 1.0).abs() <= 1e-9);

    let cosine = builtin("cosine").unwrap();
    for i in 0..=4096 {
        let x = 1.0 + (PI - 0.4) * i as f64 / 4096.0;
        assert!(cosine.f(x) >= 9.0);
    }

    let sign = builtin("signtoy").unwrap();
    assert_eq!(sign.f(0.0), 0.0);
    assert!(sign.f(1.5) > 0.0);
}

#[test]
fn frozen_integrals() {
    let cubic = builtin("cubic").unwrap();
    let i = simpson(|x| cubic.f(x), 1.0, 2.8, 512);
    assert!((i - 138591.0 / 45000.0).abs() <= 1e-12);
    assert!((138591.0 / 45000.0 - 3.0798f64).abs() <= 1e-15);

    let cosine = builtin("cosine").unwrap();
    let i = simpson(|x| cosine.f(x), 1.0, PI + 0.6, 4096);
    assert!((i - 27.442387097166975).abs() <= 1e-9, "{i}");

    // divergent: ∫ over [0,∞) of 1/(√x(1+x)) = π, via u = √x
    let divergent = builtin("divergent").unwrap();
    let i = simpson(|u: f64| 2.0 / (1.0 + u * u), 0.0, 1000.0, 400_000);
    assert!((i - PI).abs() <= 2.1e-3, "tail truncation at √x = 1000: {i}");
    assert!((divergent.f(1.0) - 0.5).abs() <= 1e-15);
}

#[test]
fn abs_norm_matches_quadrature() {
    let cubic = builtin("cubic").unwrap();
    assert_eq!(cubic.abs_norm(), 138591.0 / 45000.0);

    // |f| kinks at ±√0.8, so integrate the three smooth pieces
    let quartic = builtin("quartic").unwrap();
    let a = 0.8f64.sqrt();
    let q = simpson(|x| quartic.f(x).abs(), -1.0, -a, 2048)
        + simpson(|x| quartic.f(x).abs(), -a, a, 2048)
        + simpson(|x| quartic.f(x).abs(), a, 1.0, 2048);
    assert!((quartic.abs_norm() - q).abs() <= 1e-11, "{q}");

    let expd = builtin("exp").unwrap();
    let q = simpson(|x| expd.f(x).abs(), 1.0, 2.8, 2048);
    assert!((expd.abs_norm() - q).abs() <= 1e-12);

    let cosine = builtin("cosine").unwrap();
    let q = simpson(|x| cosine.f(x).abs(), 1.0, PI + 0.6, 4096);
    assert!((cosine.abs_norm() - q).abs() <= 1e-9);

    assert_eq!(builtin("divergent").unwrap().abs_norm(), PI);

    // the chain's norm is the summed sector weights, not ∫|f|
    let signtoy = builtin("signtoy").unwrap();
    let q = simpson(|x: f64| (-0.99 * x).exp() + (-x).exp(), 0.0, 3.0, 2048);
    assert!((signtoy.abs_norm() - q).abs() <= 1e-12, "{q}");
}

/// Closed-form ∫f/∫|f| for the quartic: A(x) = x⁵/5 − 0.8x³/3.
fn quartic_mean_sign() -> f64 {
    let a = 0.8f64.sqrt();
    let anti = |x: f64| x.powi(5) / 5.0 - 0.8 * x.powi(3) / 3.0;
    let int_f = 2.0 * anti(1.0);
    let int_abs = 2.0 * (anti(1.0) - 2.0 * anti(a));
    int_f / int_abs
}

#[test]
fn rejection_and_inverse_cdf_pass_ks() {
    // binned Kolmogorov-Smirnov against the analytic CDF of |f|/∫|f|,
    // 1% critical value at n = 1e5
    for name in ["cubic", "quartic", "exp", "cosine"] {
        let dist = builtin(name).unwrap();
        let (lo, hi) = dist.domain();
        let n = 100_000u64;
        let mut acc =
            SampleAccumulator::new(Domain::new(lo, hi).unwrap(), 12, None).unwrap();
        sample(&dist, n, 42, &mut acc, None).unwrap();

        let nb = acc.n_bins();
        let mut cdf = Vec::with_capacity(nb + 1);
        cdf.push(0.0);
        let mut cum = 0.0;
        for i in 0..nb {
            let (a, b) = (acc.edge(i), acc.edge(i + 1));
            cum += simpson(|x| dist.f(x).abs(), a, b, 2);
            cdf.push(cum);
        }
        let mut counts = 0u64;
        let mut d = 0.0f64;
        for i in 0..nb {
            counts += acc.bins()[i].count;
            d = d.max((counts as f64 / n as f64 - cdf[i + 1] / cum).abs());
        }
        assert!(d <= 1.628 / (n as f64).sqrt(), "{name}: KS statistic {d}");
    }
}

#[test]
fn sampling_is_deterministic() {
    let dist = builtin("quartic").unwrap();
    let domain = Domain::new(-1.0, 1.0).unwrap();
    let mut a = SampleAccumulator::new(domain, 6, None).unwrap();
    let mut b = SampleAccumulator::new(domain, 6, None).unwrap();
    let mut c = SampleAccumulator::new(domain, 6, None).unwrap();
    sample(&dist, 5000, 7, &mut a, None).unwrap();
    sample(&dist, 5000, 7, &mut b, None).unwrap();
    sample(&dist, 5000, 8, &mut c, None).unwrap();
    assert_eq!(a.bins(), b.bins(), "same seed, bit-identical statistics");
    assert_ne!(a.bins(), c.bins());
}

#[test]
fn zero_draws_leave_accumulator_unchanged() {
    let dist = builtin("cubic").unwrap();
    let mut acc = SampleAccumulator::new(Domain::new(1.0, 2.8).unwrap(), 4, None).unwrap();
    sample(&dist, 0, 3, &mut acc, None).unwrap();
    assert_eq!(acc.total(), 0);
    assert!(acc.bins().iter().all(|b| b.count == 0));
}

#[test]
fn positive_target_normalizes_exactly() {
    // all v = +1: the root integral is 1 with zero error, exactly
    let dist = builtin("cubic").unwrap();
    let mut acc = SampleAccumulator::new(Domain::new(1.0, 2.8).unwrap(), 6, None).unwrap();
    sample(&dist, 10_000, 11, &mut acc, None).unwrap();
    let h = build(&acc, 10).unwrap();
    let root = &h.level(0)[0];
    assert_eq!(root.estimate.value, 1.0);
    assert_eq!(root.estimate.error, 0.0);
}

#[test]
fn sign_changing_target_matches_mean_sign() {
    let dist = builtin("quartic").unwrap();
    let mut acc = SampleAccumulator::new(Domain::new(-1.0, 1.0).unwrap(), 6, None).unwrap();
    sample(&dist, 10_000, 13, &mut acc, None).unwrap();
    let h = build(&acc, 10).unwrap();
    let root = &h.level(0)[0];
    let target = quartic_mean_sign();
    assert!(target < -0.7 && target > -0.8, "sanity: {target}");
    assert!(
        (root.estimate.value - target).abs() <= 4.0 * root.estimate.error,
        "{} vs {target} (δ = {})",
        root.estimate.value,
        root.estimate.error
    );
}

#[test]
fn divergent_pipeline_hits_known_area() {
    // recorded y-target is cos²(πy/2)/π, so the root integral is 1/(2π)
    let dist = builtin("divergent").unwrap();
    let t = dist.default_transform().unwrap();
    let mut acc = SampleAccumulator::new(Domain::new(0.0, 1.0).unwrap(), 6, None).unwrap();
    sample(&dist, 10_000, 17, &mut acc, Some(&t)).unwrap();
    let h = build(&acc, 10).unwrap();
    let root = &h.level(0)[0];
    assert!(root.estimate.error > 0.0);
    assert!(
        (root.estimate.value - 1.0 / (2.0 * PI)).abs() <= 4.0 * root.estimate.error,
        "{} vs {}",
        root.estimate.value,
        1.0 / (2.0 * PI)
    );
}

#[test]
fn sign_chain_observables() {
    let dist = builtin("signtoy").unwrap();
    let mut acc = SampleAccumulator::new(Domain::new(0.0, 3.0).unwrap(), 8, None).unwrap();
    let n = 200_000u64;
    sample(&dist, n, 23, &mut acc, None).unwrap();
    assert_eq!(acc.total(), n, "every update records exactly once");

    // mean recorded sign vs (Z₁ − Z₋₁)/(Z₁ + Z₋₁) from quadrature
    let z1 = simpson(|x| (-0.99 * x).exp(), 0.0, 3.0, 2048);
    let zm = simpson(|x| (-x).exp(), 0.0, 3.0, 2048);
    let target = (z1 - zm) / (z1 + zm);
    assert!(target > 0.0 && target < 0.01, "nearly cancelling sectors: {target}");
    let h = build(&acc, 10).unwrap();
    let got = h.level(0)[0].estimate.value;
    assert!((got - target).abs() <= 0.015, "{got} vs {target}");
}

#[test]
fn naive_histogram_staircase() {
    // one bin, all v = 1 on a width-2 domain: value 1/Δ = 0.5
    let mut acc = SampleAccumulator::new(Domain::new(0.0, 2.0).unwrap(), 0, None).unwrap();
    for _ in 0..10 {
        acc.record(1.0, 1.0).unwrap();
    }
    let st = naive_histogram(&acc);
    assert_eq!(st.values, vec![0.5]);

    // staircase bin integrals equal mean·count/N exactly
    let stats = vec![
        BinStats { count: 3, mean: 2.0, m2: 1.0 },
        BinStats { count: 1, mean: -4.0, m2: 0.0 },
        BinStats { count: 4, mean: 0.5, m2: 2.0 },
        BinStats::default(),
    ];
    let acc = SampleAccumulator::from_parts(
        Domain::new(0.0, 2.0).unwrap(),
        2,
        Edges::Uniform,
        stats.clone(),
        8,
    )
    .unwrap();
    let st = naive_histogram(&acc);
    for (i, s) in stats.iter().enumerate() {
        let expect = s.mean * s.count as f64 / 8.0;
        assert!((st.bin_integral(i) - expect).abs() <= 1e-15);
    }

    // value_at: right-open bins, last bin closed, outside is None
    assert_eq!(st.value_at(0.5), Some(st.values[1]));
    assert_eq!(st.value_at(2.0), Some(st.values[3]));
    assert_eq!(st.value_at(-0.1), None);
    assert_eq!(st.value_at(2.1), None);
}

fn exact_data_hierarchy<F: Fn(f64) -> f64>(
    f: F,
    k: u32,
    counts: &dyn Fn(usize) -> u64,
    m2: f64,
) -> bhm_core::hierarchy::BinHierarchy {
    let n = 1usize << k;
    let total: u64 = (0..n).map(counts).sum();
    let stats = (0..n)
        .map(|i| {
            let (a, b) = (i as f64 / n as f64, (i + 1) as f64 / n as f64);
            let integral = simpson(&f, a, b, 256);
            BinStats {
                count: counts(i),
                mean: integral * total as f64 / counts(i).max(1) as f64,
                m2,
            }
        })
        .collect();
    let acc = SampleAccumulator::from_parts(
        Domain::new(0.0, 1.0).unwrap(),
        k,
        Edges::Uniform,
        stats,
        total,
    )
    .unwrap();
    build(&acc, 10).unwrap()
}

#[test]
fn elementary_only_matches_on_fully_usable_exact_data() {
    let f = |x: f64| 0.2 + x - 0.5 * x * x + 0.1 * x * x * x;
    let h = exact_data_hierarchy(f, 6, &|_| 100, 100.0);
    let c = cfg(3);
    let baseline = elementary_only_fit(&h, &c).unwrap();
    let (full, diag) = adaptive_fit(&h, &c, &[]).unwrap();
    assert!(diag.accepted);
    for i in 0..=64 {
        let x = i as f64 / 64.0;
        let a = eval(&baseline, x).unwrap();
        let b = eval(&full, x).unwrap();
        assert!((a - b).abs() <= 1e-6, "x={x}: {a} vs {b}");
    }
}

#[test]
fn elementary_only_merges_underpopulated_bins() {
    // two starved elementary bins force one merged row; constant data stays
    // exactly reconstructible
    let counts = |i: usize| if i == 2 || i == 3 { 6 } else { 100 };
    let h = exact_data_hierarchy(|_| 2.5, 3, &counts, 10.0);
    assert!(!h.level(3)[2].usable && !h.level(3)[3].usable);
    assert!(h.level(2)[1].usable);
    let model = elementary_only_fit(&h, &cfg(1)).unwrap();
    for i in 0..=32 {
        let x = i as f64 / 32.0;
        assert!((eval(&model, x).unwrap() - 2.5).abs() <= 1e-9);
    }
}
