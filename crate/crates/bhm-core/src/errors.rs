//! Error bands for fitted splines.
//!
//! Three complementary estimates of the pointwise uncertainty of a
//! reconstruction:
//!
//! * [`covariance_error`] propagates the fit's parameter covariance to a
//!   value error at one point. Cheap and available from a single fit, but
//!   blind to the knot-placement freedom.
//! * [`bootstrap_error`] refits resampled combinations of partial
//!   histograms with the knots frozen and reads off the spread of the
//!   replica curves.
//! * [`evolution_error`] tracks the fitted curve while the sample count
//!   grows and converts the dispersion of its increments into an error at
//!   the final size.
//!
//! [`robust_error`] is the ensemble ground truth the three single-run
//! methods are judged against: the shortest 68.27% interval of values over
//! independent equal-size runs.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nalgebra::{DVector, SymmetricEigen};

use crate::accum::{BinStats, Domain, SampleAccumulator};
use crate::fmath;
use crate::hierarchy::build;
use crate::splinefit::{
    eval, fit_division, BoundaryCondition, FitConfig, FitError, SplineModel,
};

/// How an [`ErrorBand`] was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorMethod {
    Covariance,
    Bootstrap,
    Evolution,
}

impl fmt::Display for ErrorMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorMethod::Covariance => "covariance",
            ErrorMethod::Bootstrap => "bootstrap",
            ErrorMethod::Evolution => "evolution",
        })
    }
}

/// One-standard-error band evaluated on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorBand {
    pub x: Vec<f64>,
    /// One standard error at each grid point; never negative.
    pub sigma: Vec<f64>,
    pub method: ErrorMethod,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BandError {
    Fit(FitError),
    /// Covariance quadratic form went negative past rounding tolerance.
    CorruptCovariance { radicand: f64 },
    NoParts,
    /// Partial histograms do not share one elementary grid.
    MismatchedParts,
    /// Fewer replicas than parts defeats the resampling.
    FewReplicas { m_tilde: usize, parts: usize },
    /// More than 10% of replicas came back rank-deficient.
    TooManyRedraws { redrawn: usize, m_tilde: usize },
    BadTrace,
    /// Snapshot length differs from the trace grid.
    GridMismatch { have: usize, expect: usize },
    InsufficientSnapshots { have: usize, need: usize },
    TooFewRuns { have: usize },
}

impl fmt::Display for BandError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BandError::Fit(e) => write!(f, "fit failed: {e}"),
            BandError::CorruptCovariance { radicand } => {
                write!(f, "covariance radicand {radicand:e} is negative beyond tolerance")
            }
            BandError::NoParts => f.write_str("no partial histograms given"),
            BandError::MismatchedParts => {
                f.write_str("partial histograms do not share one elementary grid")
            }
            BandError::FewReplicas { m_tilde, parts } => {
                write!(f, "need at least {parts} replicas (one per part), got {m_tilde}")
            }
            BandError::TooManyRedraws { redrawn, m_tilde } => {
                write!(f, "{redrawn} of {m_tilde} replicas were rank-deficient")
            }
            BandError::BadTrace => {
                f.write_str("evolution trace needs delta >= 1, k0 >= 1 and a non-empty grid")
            }
            BandError::GridMismatch { have, expect } => {
                write!(f, "snapshot has {have} values, trace grid has {expect}")
            }
            BandError::InsufficientSnapshots { have, need } => {
                write!(f, "evolution needs at least {need} snapshots, got {have}")
            }
            BandError::TooFewRuns { have } => {
                write!(f, "robust error needs at least 30 runs, got {have}")
            }
        }
    }
}

impl core::error::Error for BandError {
    fn source(&self) -> Option<&(dyn core::error::Error + 'static)> {
        match self {
            BandError::Fit(e) => Some(e),
            _ => None,
        }
    }
}

impl From<FitError> for BandError {
    fn from(e: FitError) -> Self {
        BandError::Fit(e)
    }
}

/// Default number of grid points for band evaluation.
pub const DEFAULT_GRID_POINTS: usize = 512;

/// `n` evenly spaced points spanning the domain, endpoints included.
pub fn uniform_grid(domain: Domain, n: usize) -> Vec<f64> {
    let n = n.max(2);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / (n - 1) as f64;
        out.push(domain.x_lo + (domain.x_hi - domain.x_lo) * t);
    }
    out[n - 1] = domain.x_hi;
    out
}

/// Value error at `x` from the fit's parameter covariance: the variance of
/// the evaluation functional w = mapᵀ·(1, u, u², …) under the free-parameter
/// covariance, δp(u) = sqrt(wᵀ C w).
///
/// The form is evaluated through the eigendecomposition of C, as a sum of
/// non-negative weighted squares. The naive route through the per-piece
/// covariance map·C·mapᵀ cancels catastrophically where the basis map is
/// large (fine tail pieces of a many-knot fit) and can even turn the
/// variance negative; here the cancellation happens inside each dot product
/// instead, where it costs absolute accuracy ~√λ_max·ε and never the sign.
/// An eigenvalue materially below zero means the stored covariance itself
/// is corrupt and is reported rather than clamped.
pub fn covariance_error(model: &SplineModel, x: f64) -> Result<f64, BandError> {
    let p = model.piece_of(x)?;
    let (center, half) = model.local_frame(p);
    let u = (x - center) / half;
    let map = &model.param_map[p];
    let mut phi = DVector::zeros(map.nrows());
    let mut pw = 1.0;
    for i in 0..map.nrows() {
        phi[i] = pw;
        pw *= u;
    }
    let w = map.transpose() * phi;
    // exact symmetry is an invariant of the solver; re-impose it so the
    // eigensolver sees a symmetric matrix even after transported covariances
    let c = 0.5 * (&model.free_cov + model.free_cov.transpose());
    let eig = SymmetricEigen::new(c);
    let l_max = eig.eigenvalues.iter().fold(0.0_f64, |m, &l| m.max(l));
    let mut r = 0.0;
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l < -1e-8 * l_max {
            return Err(BandError::CorruptCovariance { radicand: l });
        }
        if l > 0.0 {
            let y = eig.eigenvectors.column(i).dot(&w);
            r += l * y * y;
        }
    }
    Ok(fmath::sqrt(r))
}

/// [`covariance_error`] over a whole grid.
pub fn covariance_band(model: &SplineModel, grid: &[f64]) -> Result<ErrorBand, BandError> {
    let mut sigma = Vec::with_capacity(grid.len());
    for &x in grid {
        sigma.push(covariance_error(model, x)?);
    }
    Ok(ErrorBand { x: grid.to_vec(), sigma, method: ErrorMethod::Covariance })
}

fn sample_sd(s: &BinStats) -> f64 {
    if s.count < 2 {
        0.0
    } else {
        fmath::sqrt((s.m2 / (s.count - 1) as f64).max(0.0))
    }
}

/// One bootstrap replica: multinomial part coefficients drawn from
/// (`seed`, `stream`), weighted merge of the parts, fixed-knot refit, and
/// evaluation on `grid`.
///
/// `Ok(None)` flags a replica the caller should redraw (rank-deficient or
/// otherwise unfittable); hard errors are ones a redraw cannot fix. Replica
/// r of a band uses stream r, and its a-th redraw uses stream
/// r + a·m_tilde, so bands are reproducible no matter how replicas are
/// scheduled across workers.
pub fn bootstrap_replica(
    parts: &[SampleAccumulator],
    knots: &[f64],
    cfg: &FitConfig,
    boundary: &[BoundaryCondition],
    grid: &[f64],
    seed: u64,
    stream: u64,
) -> Result<Option<Vec<f64>>, BandError> {
    let m = parts.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut coeff = vec![0u32; m];
    for _ in 0..m {
        coeff[rng.gen_range(0..m)] += 1;
    }

    // weighted merge: coefficient c multiplies count and m2, exactly as if
    // the part's sample list had been recorded c times
    let nb = parts[0].n_bins();
    let mut stats = vec![BinStats::default(); nb];
    let mut total = 0u64;
    for (part, &c) in parts.iter().zip(&coeff) {
        if c == 0 {
            continue;
        }
        total += part.total() * c as u64;
        for (s, b) in stats.iter_mut().zip(part.bins()) {
            *s = BinStats::pool(s, &b.scaled(c));
        }
    }
    let acc = SampleAccumulator::from_parts(
        parts[0].domain(),
        parts[0].levels(),
        parts[0].edges().clone(),
        stats,
        total,
    )
    .map_err(|_| BandError::MismatchedParts)?;

    let h = match build(&acc, cfg.min_count) {
        Ok(h) => h,
        Err(_) => return Ok(None),
    };
    let (model, diag) = match fit_division(&h, knots, cfg, boundary) {
        Ok(r) => r,
        Err(_) => return Ok(None),
    };
    if !diag.full_rank {
        return Ok(None);
    }
    let mut values = Vec::with_capacity(grid.len());
    for &x in grid {
        values.push(eval(&model, x)?);
    }
    Ok(Some(values))
}

/// Bootstrap band over `m_tilde` resampled recombinations of the partial
/// histograms, refit with the accepted fit's knots frozen and no acceptance
/// testing. `sigma` is the per-grid-point sample standard deviation of the
/// replica curves.
pub fn bootstrap_error(
    parts: &[SampleAccumulator],
    knots: &[f64],
    cfg: &FitConfig,
    boundary: &[BoundaryCondition],
    m_tilde: usize,
    grid: &[f64],
    seed: u64,
) -> Result<ErrorBand, BandError> {
    if parts.is_empty() {
        return Err(BandError::NoParts);
    }
    if m_tilde < parts.len() {
        return Err(BandError::FewReplicas { m_tilde, parts: parts.len() });
    }
    let first = &parts[0];
    for p in &parts[1..] {
        let same = p.levels() == first.levels()
            && p.domain() == first.domain()
            && (0..=first.n_bins()).all(|i| p.edge(i) == first.edge(i));
        if !same {
            return Err(BandError::MismatchedParts);
        }
    }

    let mut spread = vec![BinStats::default(); grid.len()];
    let mut redrawn = 0usize;
    for r in 0..m_tilde {
        let mut attempt = 0u64;
        let values = loop {
            let stream = r as u64 + attempt * m_tilde as u64;
            match bootstrap_replica(parts, knots, cfg, boundary, grid, seed, stream)? {
                Some(v) => break v,
                None => {
                    redrawn += 1;
                    attempt += 1;
                    if redrawn * 10 > m_tilde {
                        return Err(BandError::TooManyRedraws { redrawn, m_tilde });
                    }
                }
            }
        };
        for (s, &v) in spread.iter_mut().zip(&values) {
            s.push(v);
        }
    }
    let sigma = spread.iter().map(sample_sd).collect();
    Ok(ErrorBand { x: grid.to_vec(), sigma, method: ErrorMethod::Bootstrap })
}

/// Fit snapshots f̃_k on a fixed grid, taken every `delta` samples.
///
/// Snapshot k (1-based) is the fit after k·delta samples; the increments
/// A_k = k·f̃_k − (k−1)·f̃_{k−1} are independent enough beyond a burn-in
/// cutoff k0 for their dispersion σ* to obey σ_k = σ*/√k.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionTrace {
    pub delta: u64,
    pub k0: usize,
    pub grid: Vec<f64>,
    pub snapshots: Vec<Vec<f64>>,
}

impl EvolutionTrace {
    pub fn new(delta: u64, k0: usize, grid: Vec<f64>) -> Result<Self, BandError> {
        if delta == 0 || k0 == 0 || grid.is_empty() {
            return Err(BandError::BadTrace);
        }
        Ok(EvolutionTrace { delta, k0, grid, snapshots: Vec::new() })
    }

    /// Append the fit evaluated on the trace grid after the next `delta`
    /// samples.
    pub fn push_snapshot(&mut self, values: Vec<f64>) -> Result<(), BandError> {
        if values.len() != self.grid.len() {
            return Err(BandError::GridMismatch {
                have: values.len(),
                expect: self.grid.len(),
            });
        }
        self.snapshots.push(values);
        Ok(())
    }

    /// Per-grid-point sample standard deviation of the increments A_k over
    /// k = k0+1 ..= k_final. Needs at least k0 + 2 snapshots so that at
    /// least two increments exist.
    pub fn sigma_star(&self) -> Result<Vec<f64>, BandError> {
        let kf = self.snapshots.len();
        let need = self.k0 + 2;
        if kf < need {
            return Err(BandError::InsufficientSnapshots { have: kf, need });
        }
        let mut out = Vec::with_capacity(self.grid.len());
        for g in 0..self.grid.len() {
            let mut s = BinStats::default();
            for k in (self.k0 + 1)..=kf {
                let a = k as f64 * self.snapshots[k - 1][g]
                    - (k - 1) as f64 * self.snapshots[k - 2][g];
                s.push(a);
            }
            out.push(sample_sd(&s));
        }
        Ok(out)
    }
}

/// Evolution band at the final snapshot: σ = σ*/√k_final per grid point.
pub fn evolution_error(trace: &EvolutionTrace) -> Result<ErrorBand, BandError> {
    let star = trace.sigma_star()?;
    let root_k = fmath::sqrt(trace.snapshots.len() as f64);
    let sigma = star.iter().map(|s| s / root_k).collect();
    Ok(ErrorBand { x: trace.grid.clone(), sigma, method: ErrorMethod::Evolution })
}

/// Ensemble error at `x` over independent equal-size runs: half-width of
/// the shortest window of 68.27% of the run values whose span contains the
/// ensemble mean.
pub fn robust_error(runs: &[SplineModel], x: f64) -> Result<f64, BandError> {
    if runs.len() < 30 {
        return Err(BandError::TooFewRuns { have: runs.len() });
    }
    let mut values = Vec::with_capacity(runs.len());
    for model in runs {
        values.push(eval(model, x)?);
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    values.sort_unstable_by(f64::total_cmp);
    let m = (fmath::ceil(0.6827 * n as f64) as usize).clamp(1, n);
    let mut covering = f64::INFINITY;
    let mut narrowest = f64::INFINITY;
    for i in 0..=(n - m) {
        let width = values[i + m - 1] - values[i];
        narrowest = narrowest.min(width);
        if values[i] <= mean && mean <= values[i + m - 1] {
            covering = covering.min(width);
        }
    }
    // the mean always lies inside some window for m >= 2; the fallback only
    // guards m == 1 degeneracies
    let best = if covering.is_finite() { covering } else { narrowest };
    Ok(best / 2.0)
}
