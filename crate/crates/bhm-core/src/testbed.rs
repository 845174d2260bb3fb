//! Reference targets and samplers for exercising the reconstruction
//! pipeline end to end: positive and sign-changing polynomials, a steep
//! exponential, an oscillation, an endpoint divergence on [0, ∞), and a
//! two-sector Markov chain whose recorded signs nearly cancel.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::accum::{AccumError, SampleAccumulator};
use crate::fmath;
use crate::hierarchy::BinHierarchy;
use crate::splinefit::{
    self, edge_value, fit_rowspecs, nearest_split_edge, Basis, ExactSpec, FitConfig, FitError,
    RowSpec, SplineModel,
};
use crate::transforms::{Transform, TransformError, TransformKind};

const PI: f64 = core::f64::consts::PI;

/// The built-in test targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    /// 1 − 3x/2 + 2x² − x³/2 on [1, 2.8]; strictly positive.
    Cubic,
    /// x⁴ − 0.8x² on [−1, 1]; changes sign at |x| = √0.8.
    Quartic,
    /// e^{−3x} on [1, 2.8]; three decades of fall-off.
    Exp,
    /// 10 + cos(10x) on [1, π + 0.6]; oscillation on a positive base.
    Cosine,
    /// 1/(√x·(1+x)) on [0, ∞); integrable divergence at the origin.
    Divergent,
    /// e^{−0.99x} − e^{−x} on [0, 3]; sampled through a two-sector chain
    /// whose recorded signs nearly cancel.
    SignToy,
}

/// How a target is sampled by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    InverseCdf,
    Rejection,
    MarkovChain,
}

/// A target distribution: the unnormalized integrand, its domain, and its
/// default sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TestDistribution {
    pub kind: Builtin,
}

/// Error for an unrecognized built-in name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownDistribution;

impl core::fmt::Display for UnknownDistribution {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str("unknown distribution name")
    }
}

impl core::error::Error for UnknownDistribution {}

/// Look up a built-in by name: one of cubic, quartic, exp, cosine,
/// divergent, signtoy.
pub fn builtin(name: &str) -> Result<TestDistribution, UnknownDistribution> {
    let kind = match name {
        "cubic" => Builtin::Cubic,
        "quartic" => Builtin::Quartic,
        "exp" => Builtin::Exp,
        "cosine" => Builtin::Cosine,
        "divergent" => Builtin::Divergent,
        "signtoy" => Builtin::SignToy,
        _ => return Err(UnknownDistribution),
    };
    Ok(TestDistribution { kind })
}

impl TestDistribution {
    pub fn name(&self) -> &'static str {
        match self.kind {
            Builtin::Cubic => "cubic",
            Builtin::Quartic => "quartic",
            Builtin::Exp => "exp",
            Builtin::Cosine => "cosine",
            Builtin::Divergent => "divergent",
            Builtin::SignToy => "signtoy",
        }
    }

    /// Domain in original coordinates; the upper edge is +∞ for the
    /// divergent target, which is sampled through a compactifying
    /// transform.
    pub fn domain(&self) -> (f64, f64) {
        match self.kind {
            Builtin::Cubic | Builtin::Exp => (1.0, 2.8),
            Builtin::Quartic => (-1.0, 1.0),
            Builtin::Cosine => (1.0, PI + 0.6),
            Builtin::Divergent => (0.0, f64::INFINITY),
            Builtin::SignToy => (0.0, 3.0),
        }
    }

    /// The unnormalized target value.
    pub fn f(&self, x: f64) -> f64 {
        match self.kind {
            Builtin::Cubic => 1.0 - 1.5 * x + 2.0 * x * x - 0.5 * x * x * x,
            Builtin::Quartic => x * x * x * x - 0.8 * x * x,
            Builtin::Exp => fmath::exp(-3.0 * x),
            Builtin::Cosine => 10.0 + fmath::cos(10.0 * x),
            Builtin::Divergent => 1.0 / (fmath::sqrt(x) * (1.0 + x)),
            Builtin::SignToy => fmath::exp(-0.99 * x) - fmath::exp(-x),
        }
    }

    pub fn sampler(&self) -> SamplerKind {
        match self.kind {
            Builtin::Exp | Builtin::Divergent => SamplerKind::InverseCdf,
            Builtin::Cubic | Builtin::Quartic | Builtin::Cosine => SamplerKind::Rejection,
            Builtin::SignToy => SamplerKind::MarkovChain,
        }
    }

    /// The absolute normalization the sampler divides out, in closed form:
    /// ∫|f| for directly sampled targets, Z₊ + Z₋ for the two-sector chain.
    /// Sampled data estimates f divided by this, so multiplying a
    /// reconstruction by it restores the target's own units.
    pub fn abs_norm(&self) -> f64 {
        match self.kind {
            // positive cubic: plain antiderivative across [1, 2.8]
            Builtin::Cubic => 138_591.0 / 45_000.0,
            Builtin::Quartic => {
                // |f| splits at ±√0.8; A(x) = x⁵/5 − 0.8x³/3
                let a = fmath::sqrt(0.8);
                let anti = |x: f64| fmath::powi(x, 5) / 5.0 - 0.8 * fmath::powi(x, 3) / 3.0;
                2.0 * (anti(1.0) - 2.0 * anti(a))
            }
            Builtin::Exp => (fmath::exp(-3.0) - fmath::exp(-8.4)) / 3.0,
            Builtin::Cosine => {
                let hi = PI + 0.6;
                10.0 * (hi - 1.0) + (fmath::sin(10.0 * hi) - fmath::sin(10.0)) / 10.0
            }
            Builtin::Divergent => PI,
            Builtin::SignToy => {
                // Z₊ + Z₋ for the two sectors
                (1.0 - fmath::exp(-2.97)) / 0.99 + (1.0 - fmath::exp(-3.0))
            }
        }
    }

    /// The transform the divergent target needs before any histogram can
    /// hold it; `None` for targets on finite domains.
    pub fn default_transform(&self) -> Option<Transform> {
        match self.kind {
            Builtin::Divergent => Some(Transform {
                kind: TransformKind::Arctan,
                weight_power: 0.5,
            }),
            _ => None,
        }
    }

    /// Inverse CDF of |f|/∫|f| for the targets sampled that way.
    fn inv_cdf(&self, u: f64) -> f64 {
        match self.kind {
            Builtin::Exp => {
                // F(x) = (e^{-3} − e^{-3x}) / (e^{-3} − e^{-8.4})
                let (a, b) = (fmath::exp(-3.0), fmath::exp(-8.4));
                -fmath::ln(a - u * (a - b)) / 3.0
            }
            Builtin::Divergent => {
                // F(x) = (2/π)·arctan(√x), so x = tan²(πu/2)
                let t = fmath::tan(PI * u / 2.0);
                t * t
            }
            _ => unreachable!("inverse CDF only for exp and divergent"),
        }
    }
}

/// Sampler failures: the accumulator rejected a record (grid does not
/// cover the transformed domain) or the transform rejected a point.
#[derive(Debug, PartialEq)]
pub enum SampleError {
    Accum(AccumError),
    Transform(TransformError),
}

impl core::fmt::Display for SampleError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SampleError::Accum(e) => write!(f, "recording failed: {e}"),
            SampleError::Transform(e) => write!(f, "transform failed: {e}"),
        }
    }
}

impl core::error::Error for SampleError {}

impl From<AccumError> for SampleError {
    fn from(e: AccumError) -> Self {
        SampleError::Accum(e)
    }
}

impl From<TransformError> for SampleError {
    fn from(e: TransformError) -> Self {
        SampleError::Transform(e)
    }
}

fn record(
    acc: &mut SampleAccumulator,
    transform: Option<&Transform>,
    x: f64,
    v: f64,
) -> Result<(), SampleError> {
    match transform {
        Some(t) => {
            let (y, w) = t.forward(x)?;
            acc.record(y, v * w)?;
        }
        None => acc.record(x, v)?,
    }
    Ok(())
}

/// Draw n points from |f|/∫|f| and record v = sign f (times the transform
/// weight when one is given). Deterministic for a fixed seed.
pub fn sample(
    dist: &TestDistribution,
    n: u64,
    seed: u64,
    acc: &mut SampleAccumulator,
    transform: Option<&Transform>,
) -> Result<(), SampleError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match dist.sampler() {
        SamplerKind::InverseCdf => {
            for _ in 0..n {
                let x = dist.inv_cdf(rng.gen::<f64>());
                record(acc, transform, x, 1.0)?;
            }
        }
        SamplerKind::Rejection => {
            let (lo, hi) = dist.domain();
            let env = envelope(dist);
            let mut accepted = 0u64;
            while accepted < n {
                let x = lo + (hi - lo) * rng.gen::<f64>();
                let fx = dist.f(x);
                assert!(
                    fmath::abs(fx) <= env,
                    "rejection envelope violated at x = {x}"
                );
                if rng.gen::<f64>() * env <= fmath::abs(fx) {
                    let v = if fx >= 0.0 { 1.0 } else { -1.0 };
                    record(acc, transform, x, v)?;
                    accepted += 1;
                }
            }
        }
        SamplerKind::MarkovChain => {
            let mut state = SignChainState::new();
            for _ in 0..SIGN_CHAIN_BURN_IN {
                sign_chain_step(&mut state, &mut rng);
            }
            for _ in 0..n {
                let (x, v) = sign_chain_step(&mut state, &mut rng);
                record(acc, transform, x, v)?;
            }
        }
    }
    Ok(())
}

/// Constant rejection envelope: 1.05 × the max of |f| on a 4096-interval
/// scan of the domain.
fn envelope(dist: &TestDistribution) -> f64 {
    let (lo, hi) = dist.domain();
    let mut max = 0.0f64;
    for i in 0..=4096u32 {
        let x = lo + (hi - lo) * i as f64 / 4096.0;
        let a = fmath::abs(dist.f(x));
        if a > max {
            max = a;
        }
    }
    1.05 * max
}

const SIGN_CHAIN_BURN_IN: u64 = 1000;
const SIGN_CHAIN_X0: f64 = 1.5;
const SIGN_CHAIN_STEP: f64 = 0.5;

/// Two-sector chain state: the sector σ picks which exponential the walker
/// currently samples, and the recorded value is σ itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignChainState {
    pub sector: i8,
    pub x: f64,
    updates: u64,
}

impl SignChainState {
    pub fn new() -> SignChainState {
        SignChainState { sector: 1, x: SIGN_CHAIN_X0, updates: 0 }
    }
}

impl Default for SignChainState {
    fn default() -> Self {
        SignChainState::new()
    }
}

fn sector_f(sector: i8, x: f64) -> f64 {
    if sector > 0 {
        fmath::exp(-0.99 * x)
    } else {
        fmath::exp(-x)
    }
}

/// One chain update — alternating a sector switch, accepted with
/// min(1, f_{−σ}(x)/f_σ(x)) = min(1, e^{±0.01x}), and a Metropolis x-move
/// within the current sector on [0, 3]. Returns the (x, v = σ) pair to
/// record after the update.
pub fn sign_chain_step<R: Rng>(state: &mut SignChainState, rng: &mut R) -> (f64, f64) {
    if state.updates % 2 == 0 {
        // sector switch
        let ratio = sector_f(-state.sector, state.x) / sector_f(state.sector, state.x);
        if rng.gen::<f64>() < ratio {
            state.sector = -state.sector;
        }
    } else {
        // x-move
        let proposal = state.x + SIGN_CHAIN_STEP * (2.0 * rng.gen::<f64>() - 1.0);
        if (0.0..=3.0).contains(&proposal) {
            let ratio = sector_f(state.sector, proposal) / sector_f(state.sector, state.x);
            if rng.gen::<f64>() < ratio {
                state.x = proposal;
            }
        }
    }
    state.updates += 1;
    (state.x, state.sector as f64)
}

/// The plain histogram estimate: value mean_i·count_i/(N·Δ_i) on each
/// elementary bin.
#[derive(Debug, Clone, PartialEq)]
pub struct Staircase {
    /// n+1 edges for n bins.
    pub edges: Vec<f64>,
    /// Constant value on [edges\[i\], edges\[i+1\]).
    pub values: Vec<f64>,
}

impl Staircase {
    /// Value of the step function at x; the last bin is closed above.
    pub fn value_at(&self, x: f64) -> Option<f64> {
        let n = self.values.len();
        if x < self.edges[0] || x > self.edges[n] {
            return None;
        }
        let i = self.edges[1..n].partition_point(|e| *e <= x);
        Some(self.values[i])
    }

    /// Integral of the staircase over bin i.
    pub fn bin_integral(&self, i: usize) -> f64 {
        self.values[i] * (self.edges[i + 1] - self.edges[i])
    }
}

/// Build the staircase from an accumulator's elementary bins.
pub fn naive_histogram(acc: &SampleAccumulator) -> Staircase {
    let n = acc.n_bins();
    let total = acc.total() as f64;
    let edges: Vec<f64> = (0..=n).map(|i| acc.edge(i)).collect();
    let values = (0..n)
        .map(|i| {
            if acc.total() == 0 {
                return 0.0;
            }
            let b = &acc.bins()[i];
            b.mean * b.count as f64 / (total * (edges[i + 1] - edges[i]))
        })
        .collect();
    Staircase { edges, values }
}

/// Residual rows from the finest usable cut of the hierarchy: starting at
/// the root, descend wherever both children are usable, and emit the bins
/// where descent stops. Underpopulated elementary bins are thereby merged
/// pairwise until usable.
fn finest_usable_cut(h: &BinHierarchy) -> (Vec<RowSpec>, Vec<ExactSpec>) {
    let mut rows = Vec::new();
    let mut exacts = Vec::new();
    let mut stack: Vec<(usize, usize)> = vec![(0, 0)];
    while let Some((n, j)) = stack.pop() {
        let descend = n + 1 < h.num_levels() && {
            let kids = h.level(n + 1);
            kids[2 * j].usable && kids[2 * j + 1].usable
        };
        if descend {
            stack.push((n + 1, 2 * j));
            stack.push((n + 1, 2 * j + 1));
            continue;
        }
        let b = &h.level(n)[j];
        if !b.usable {
            continue;
        }
        if b.estimate.error > 0.0 {
            rows.push(RowSpec {
                lo: b.lo,
                hi: b.hi,
                value: b.estimate.value,
                sigma: b.estimate.error,
                scale: 1.0,
            });
        } else if b.stats.count == h.total() {
            exacts.push(ExactSpec { lo: b.lo, hi: b.hi, value: b.estimate.value });
        }
    }
    rows.sort_by(|a, b| a.lo.partial_cmp(&b.lo).expect("bin edges are finite"));
    (rows, exacts)
}

/// Flat pooled goodness over the cut rows inside [lo, hi]: χ²/ñ against
/// 1 + T·sqrt(2/ñ). Returns (pass, excess) — a row-free interval passes
/// vacuously with excess 0.
fn flat_goodness(
    rows: &[RowSpec],
    model: &SplineModel,
    lo: f64,
    hi: f64,
    t: f64,
) -> (bool, f64) {
    let mut chi2 = 0.0;
    let mut n = 0usize;
    for r in rows {
        if r.lo < lo || r.hi > hi {
            continue;
        }
        let res = (r.value - model.integral(r.lo, r.hi)) / r.sigma;
        chi2 += res * res;
        n += 1;
    }
    if n == 0 {
        return (true, 0.0);
    }
    let nn = n as f64;
    let excess = chi2 / nn - (1.0 + t * fmath::sqrt(2.0 / nn));
    (excess <= 0.0, excess)
}

/// The single-binning baseline: the same adaptive division loop, but every
/// residual row comes from the finest usable cut instead of the whole
/// hierarchy of combined bins, and goodness pools those rows flat. For
/// comparison against the full method; the jump constraint is not applied.
pub fn elementary_only_fit(h: &BinHierarchy, cfg: &FitConfig) -> Result<SplineModel, FitError> {
    cfg.validate()?;
    let m = cfg.order as usize;
    let n_e = h.level(h.num_levels() - 1).len();
    let (rows, exacts) = finest_usable_cut(h);
    let max_params = rows.len() + exacts.len();

    let mut division: Vec<usize> = vec![0, n_e];
    let mut t = cfg.t_min;
    loop {
        let stalled = loop {
            let bp: Vec<f64> = division.iter().map(|&i| edge_value(h, i)).collect();
            let basis = Basis::new(&bp, m);
            let (theta, cov, _) =
                fit_rowspecs(&basis, &rows, &exacts, &[], &[], cfg.sv_cutoff)?;
            let model = splinefit::package_model(&basis, theta, cov, cfg.order);
            let (lo, hi) = (bp[0], bp[bp.len() - 1]);
            if flat_goodness(&rows, &model, lo, hi, t).0 {
                return Ok(model);
            }

            let mut inserts: Vec<usize> = Vec::new();
            let mut fallback: Option<(f64, usize)> = None;
            for w in division.windows(2) {
                let (ilo, ihi) = (w[0], w[1]);
                let split = nearest_split_edge(h, ilo, ihi);
                let splittable = split.map_or(false, |s| s - ilo > m + 1 && ihi - s > m + 1);
                if !splittable {
                    continue;
                }
                let s = split.expect("splittable implies a split edge");
                let (pass, excess) =
                    flat_goodness(&rows, &model, edge_value(h, ilo), edge_value(h, ihi), t);
                if !pass {
                    inserts.push(s);
                } else if fallback.map_or(true, |(e, _)| excess > e) {
                    fallback = Some((excess, s));
                }
            }
            if inserts.is_empty() {
                if let Some((_, s)) = fallback {
                    inserts.push(s);
                }
            }
            // never grow past what the cut can determine
            while m + division.len() - 1 + inserts.len() > max_params {
                inserts.pop();
            }
            if inserts.is_empty() {
                break model;
            }
            division.extend(inserts);
            division.sort_unstable();
            division.dedup();
        };
        t += 0.5;
        if t > cfg.t_max + 1e-9 {
            return Ok(stalled);
        }
    }
}
