//! Polynomial spline fitting against the whole hierarchy of sampled
//! integrals at once: weighted least squares over every usable bin,
//! automatic knot placement with threshold escalation, and an optional
//! penalty shrinking jumps of the highest derivative across knots.
//!
//! Free parameters are the m+1 coefficients of a global polynomial (in the
//! scaled domain coordinate) plus one m-th-order jump amplitude per interior
//! knot — a truncated-power basis giving exactly `n_p + m` parameters with
//! continuity of derivatives 0..m−1 built in. Piece coefficients are stored
//! in each piece's own local coordinate `u = (x − center)/halfwidth`, where
//! moment and covariance arithmetic is well conditioned.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::accum::Domain;
use crate::fmath;
use crate::hierarchy::{bins_inside, BinHierarchy};
use crate::lsq;

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Polynomial order m of every spline piece.
    pub order: u32,
    /// Acceptance-threshold sweep: T runs from t_min to t_max in 0.5 steps.
    pub t_min: f64,
    pub t_max: f64,
    /// Minimum bin occupancy for usable statistics (consumed when building
    /// the hierarchy; the fit honors the hierarchy's flags).
    pub min_count: u64,
    /// Apply the jump-shrinking constraint to accepted multi-piece fits.
    pub jump_constraint: bool,
    /// Relative singular-value cutoff of the least-squares solver.
    pub sv_cutoff: f64,
    /// Search range for the global jump-penalty weight λ.
    pub lambda_range: (f64, f64),
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            order: 3,
            t_min: 2.0,
            t_max: 4.0,
            min_count: 10,
            jump_constraint: true,
            sv_cutoff: 1e-10,
            lambda_range: (1e-4, 1e6),
        }
    }
}

impl FitConfig {
    pub(crate) fn validate(&self) -> Result<(), FitError> {
        let ok = self.t_min <= self.t_max
            && self.sv_cutoff > 0.0
            && self.sv_cutoff < 1.0
            && self.lambda_range.0 > 0.0
            && self.lambda_range.0 <= self.lambda_range.1;
        if ok {
            Ok(())
        } else {
            Err(FitError::BadConfig)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Lower,
    Upper,
}

/// Known value of the d-th derivative at a domain endpoint, imposed as an
/// exact linear constraint (removing one free parameter).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryCondition {
    pub side: Side,
    pub derivative: u32,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FitError {
    BadConfig,
    BadBreakpoints,
    NoUsableBins,
    Underdetermined { rows: usize, params: usize },
    InconsistentConstraints,
    OutOfDomain { x: f64 },
}

impl fmt::Display for FitError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FitError::BadConfig => write!(f, "invalid fit configuration"),
            FitError::BadBreakpoints => {
                write!(f, "breakpoints must be increasing elementary-bin edges spanning the domain")
            }
            FitError::NoUsableBins => write!(f, "no hierarchy bin carries usable statistics"),
            FitError::Underdetermined { rows, params } => {
                write!(f, "{rows} usable rows cannot determine {params} free parameters")
            }
            FitError::InconsistentConstraints => {
                write!(f, "exact constraints are mutually inconsistent")
            }
            FitError::OutOfDomain { x } => write!(f, "x = {x} lies outside the spline domain"),
        }
    }
}

impl core::error::Error for FitError {}

/// A fitted spline: `n_p` polynomial pieces of order m joined with
/// continuous derivatives 0..m−1.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineModel {
    pub order: u32,
    /// t_0 < … < t_{n_p}; piece j covers [t_j, t_{j+1}].
    pub breakpoints: Vec<f64>,
    /// Per piece, the m+1 coefficients in its local coordinate.
    pub piece_coeffs: Vec<Vec<f64>>,
    /// Free parameters: global polynomial then per-knot jump amplitudes.
    pub theta: DVector<f64>,
    /// Covariance of `theta`.
    pub free_cov: DMatrix<f64>,
    /// Linear maps from `theta` to each piece's local coefficients.
    pub param_map: Vec<DMatrix<f64>>,
}

impl SplineModel {
    pub fn n_pieces(&self) -> usize {
        self.breakpoints.len() - 1
    }

    pub fn domain(&self) -> Domain {
        Domain::new(self.breakpoints[0], *self.breakpoints.last().expect("nonempty"))
            .expect("breakpoints are a valid domain")
    }

    /// Piece owning x; a point on an interior knot belongs to the right
    /// piece, the upper domain edge to the last piece.
    pub fn piece_of(&self, x: f64) -> Result<usize, FitError> {
        let bp = &self.breakpoints;
        if !(x >= bp[0] && x <= bp[bp.len() - 1]) {
            return Err(FitError::OutOfDomain { x });
        }
        Ok(bp.partition_point(|&t| t <= x).min(bp.len() - 1) - 1)
    }

    /// (center, halfwidth) of piece p's local coordinate.
    pub fn local_frame(&self, p: usize) -> (f64, f64) {
        let (a, b) = (self.breakpoints[p], self.breakpoints[p + 1]);
        (0.5 * (a + b), 0.5 * (b - a))
    }

    /// Integral of the model over `[lo, hi]`, as the sum of exact piece
    /// moments over the intersection with each piece.
    pub fn integral(&self, lo: f64, hi: f64) -> f64 {
        let mut sum = 0.0;
        for p in 0..self.n_pieces() {
            let a = if lo > self.breakpoints[p] { lo } else { self.breakpoints[p] };
            let b = if hi < self.breakpoints[p + 1] { hi } else { self.breakpoints[p + 1] };
            if b <= a {
                continue;
            }
            let (c, h) = self.local_frame(p);
            let mom = bin_moments((a - c) / h, (b - c) / h, self.order);
            sum += h
                * self.piece_coeffs[p]
                    .iter()
                    .zip(&mom)
                    .map(|(ck, xk)| ck * xk)
                    .sum::<f64>();
        }
        sum
    }

    /// Covariance of piece p's local coefficients.
    pub fn piece_cov(&self, p: usize) -> DMatrix<f64> {
        &self.param_map[p] * &self.free_cov * self.param_map[p].transpose()
    }
}

/// Spline value at x.
pub fn eval(model: &SplineModel, x: f64) -> Result<f64, FitError> {
    let p = model.piece_of(x)?;
    let (c, h) = model.local_frame(p);
    let u = (x - c) / h;
    let mut acc = 0.0;
    for &a in model.piece_coeffs[p].iter().rev() {
        acc = acc * u + a;
    }
    Ok(acc)
}

/// Monomial moments X_k = ∫ x^k dx = (hi^{k+1} − lo^{k+1})/(k+1), k = 0..=m.
/// Callers working in a piece's local coordinate pass local endpoints.
pub fn bin_moments(lo: f64, hi: f64, m: u32) -> Vec<f64> {
    debug_assert!(lo < hi);
    let mut out = Vec::with_capacity(m as usize + 1);
    let (mut plo, mut phi) = (lo, hi);
    for k in 0..=m {
        out.push((phi - plo) / (k as f64 + 1.0));
        plo *= lo;
        phi *= hi;
    }
    out
}

/// Goodness of one hierarchy level: ñ usable bins, reduced χ².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelGoodness {
    pub level: u32,
    pub usable: usize,
    pub chi2_over_n: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitDiagnostics {
    pub per_level: Vec<LevelGoodness>,
    /// Threshold T the acceptance verdict refers to.
    pub accepted_threshold: f64,
    pub pieces: usize,
    pub accepted: bool,
    /// Global jump-penalty weight; 0 when unconstrained.
    pub constraint_lambda: f64,
    /// Realized weighted objective Σ_n χ²_n/2ⁿ.
    pub objective: f64,
    /// The solver kept every free direction of the design matrix.
    pub full_rank: bool,
}

/// One checked level of an interval scan; `excess` > 0 means the level
/// fails its threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalGoodness {
    pub level: u32,
    pub usable: usize,
    pub chi2_over_n: f64,
    pub excess: f64,
}

/// Per-level acceptance: every level with usable bins must satisfy
/// χ²_n/ñ ≤ 1 + T·sqrt(2/ñ).
pub fn passes_levels(per_level: &[LevelGoodness], t: f64) -> bool {
    per_level
        .iter()
        .all(|lv| lv.usable == 0 || lv.chi2_over_n <= 1.0 + t * fmath::sqrt(2.0 / lv.usable as f64))
}

fn binom(n: usize, k: usize) -> f64 {
    let mut out = 1.0;
    for i in 0..k {
        out = out * (n - i) as f64 / (i + 1) as f64;
    }
    out
}

fn falling(n: usize, d: usize) -> f64 {
    let mut out = 1.0;
    for i in 0..d {
        out *= (n - i) as f64;
    }
    out
}

/// Truncated-power parametrization over a fixed division: the linear maps
/// from free parameters to per-piece local coefficients.
pub(crate) struct Basis {
    pub m: usize,
    pub breakpoints: Vec<f64>,
    pub maps: Vec<DMatrix<f64>>,
}

impl Basis {
    pub fn new(breakpoints: &[f64], m: usize) -> Basis {
        let n_p = breakpoints.len() - 1;
        let p = m + n_p;
        let (x_lo, x_hi) = (breakpoints[0], breakpoints[n_p]);
        let cg = 0.5 * (x_lo + x_hi);
        let hg = 0.5 * (x_hi - x_lo);
        let mut maps = Vec::with_capacity(n_p);
        for pc in 0..n_p {
            let c = 0.5 * (breakpoints[pc] + breakpoints[pc + 1]);
            let h = 0.5 * (breakpoints[pc + 1] - breakpoints[pc]);
            let mut mm = DMatrix::zeros(m + 1, p);
            // global polynomial in U = α + β·u
            let alpha = (c - cg) / hg;
            let beta = h / hg;
            for k in 0..=m {
                for l in 0..=k {
                    mm[(l, k)] =
                        binom(k, l) * fmath::powi(alpha, (k - l) as i32) * fmath::powi(beta, l as i32);
                }
            }
            // knots at or left of this piece contribute ((x−t_j)/w_j)^m = (γ + η·u)^m
            for j in 1..=pc {
                let t = breakpoints[j];
                let w = x_hi - t;
                let gamma = (c - t) / w;
                let eta = h / w;
                for l in 0..=m {
                    mm[(l, m + j)] =
                        binom(m, l) * fmath::powi(gamma, (m - l) as i32) * fmath::powi(eta, l as i32);
                }
            }
            maps.push(mm);
        }
        Basis { m, breakpoints: breakpoints.to_vec(), maps }
    }

    pub fn n_params(&self) -> usize {
        self.m + self.breakpoints.len() - 1
    }

    /// ∫ model over [lo,hi] as a linear form on the free parameters.
    pub fn integral_row(&self, lo: f64, hi: f64) -> RowDVector<f64> {
        let mut row = RowDVector::zeros(self.n_params());
        for pc in 0..self.maps.len() {
            let a = if lo > self.breakpoints[pc] { lo } else { self.breakpoints[pc] };
            let b = if hi < self.breakpoints[pc + 1] { hi } else { self.breakpoints[pc + 1] };
            if b <= a {
                continue;
            }
            let c = 0.5 * (self.breakpoints[pc] + self.breakpoints[pc + 1]);
            let h = 0.5 * (self.breakpoints[pc + 1] - self.breakpoints[pc]);
            let mom = bin_moments((a - c) / h, (b - c) / h, self.m as u32);
            let mom = RowDVector::from_iterator(self.m + 1, mom.into_iter().map(|x| x * h));
            row += mom * &self.maps[pc];
        }
        row
    }

    /// d-th derivative of the model at x as a linear form on the free
    /// parameters (used for boundary conditions).
    pub fn derivative_row(&self, x: f64, d: usize) -> RowDVector<f64> {
        if d > self.m {
            return RowDVector::zeros(self.n_params());
        }
        let n_p = self.breakpoints.len() - 1;
        let (x_lo, x_hi) = (self.breakpoints[0], self.breakpoints[n_p]);
        let cg = 0.5 * (x_lo + x_hi);
        let hg = 0.5 * (x_hi - x_lo);
        let mut row = RowDVector::zeros(self.n_params());
        let uu = (x - cg) / hg;
        for k in d..=self.m {
            row[k] = falling(k, d) * fmath::powi(uu, (k - d) as i32) / fmath::powi(hg, d as i32);
        }
        for j in 1..n_p {
            let t = self.breakpoints[j];
            if x <= t {
                continue;
            }
            let w = x_hi - t;
            row[self.m + j] =
                falling(self.m, d) * fmath::powi((x - t) / w, (self.m - d) as i32)
                    / fmath::powi(w, d as i32);
        }
        row
    }
}

/// One weighted residual row: the sampled integral of `[lo, hi]` with its
/// statistical error and the level weight.
pub(crate) struct RowSpec {
    pub lo: f64,
    pub hi: f64,
    pub value: f64,
    pub sigma: f64,
    pub scale: f64,
}

/// A bin measured exactly (zero statistical error): an equality constraint.
pub(crate) struct ExactSpec {
    pub lo: f64,
    pub hi: f64,
    pub value: f64,
}

/// Single-column penalty row appended to the weighted system, target 0.
pub(crate) struct Penalty {
    pub col: usize,
    pub coeff: f64,
}

/// Residual rows from every usable hierarchy bin, level n scaled by
/// 2^{−n/2} so squared rows reproduce Σ_n χ²_n/2ⁿ. Zero-error bins holding
/// the full sample become exact constraints; zero-error partial bins carry
/// no information (degenerate variance estimate) and are dropped.
pub(crate) fn hierarchy_rows(h: &BinHierarchy) -> (Vec<RowSpec>, Vec<ExactSpec>) {
    let mut rows = Vec::new();
    let mut exacts = Vec::new();
    for n in 0..h.num_levels() {
        let scale = fmath::sqrt(fmath::powi(0.5, n as i32));
        for b in h.level(n) {
            if !b.usable {
                continue;
            }
            if b.estimate.error > 0.0 {
                rows.push(RowSpec {
                    lo: b.lo,
                    hi: b.hi,
                    value: b.estimate.value,
                    sigma: b.estimate.error,
                    scale,
                });
            } else if b.stats.count == h.total() {
                exacts.push(ExactSpec { lo: b.lo, hi: b.hi, value: b.estimate.value });
            }
        }
    }
    (rows, exacts)
}

/// Assemble and solve the weighted system over a fixed basis.
pub(crate) fn fit_rowspecs(
    basis: &Basis,
    rows: &[RowSpec],
    exacts: &[ExactSpec],
    boundary: &[BoundaryCondition],
    penalties: &[Penalty],
    sv_cutoff: f64,
) -> Result<(DVector<f64>, DMatrix<f64>, bool), FitError> {
    let p = basis.n_params();
    if boundary.iter().any(|bc| bc.derivative as usize > basis.m) {
        return Err(FitError::BadConfig);
    }
    let n_c = exacts.len() + boundary.len();
    if rows.is_empty() && n_c == 0 {
        return Err(FitError::NoUsableBins);
    }
    if rows.len() + n_c < p {
        return Err(FitError::Underdetermined { rows: rows.len() + n_c, params: p });
    }

    let mut a = DMatrix::zeros(rows.len() + penalties.len(), p);
    let mut b = DVector::zeros(rows.len() + penalties.len());
    for (i, r) in rows.iter().enumerate() {
        let w = r.scale / r.sigma;
        a.row_mut(i).copy_from(&(basis.integral_row(r.lo, r.hi) * w));
        b[i] = r.value * w;
    }
    for (i, pen) in penalties.iter().enumerate() {
        a[(rows.len() + i, pen.col)] = pen.coeff;
    }

    if n_c == 0 {
        let sol = lsq::solve(&a, &b, sv_cutoff);
        return Ok((sol.theta, sol.cov, sol.full_rank));
    }
    let mut g = DMatrix::zeros(n_c, p);
    let mut hh = DVector::zeros(n_c);
    for (i, e) in exacts.iter().enumerate() {
        g.row_mut(i).copy_from(&basis.integral_row(e.lo, e.hi));
        hh[i] = e.value;
    }
    let dom = (basis.breakpoints[0], basis.breakpoints[basis.breakpoints.len() - 1]);
    for (i, bc) in boundary.iter().enumerate() {
        let x = match bc.side {
            Side::Lower => dom.0,
            Side::Upper => dom.1,
        };
        g.row_mut(exacts.len() + i)
            .copy_from(&basis.derivative_row(x, bc.derivative as usize));
        hh[exacts.len() + i] = bc.value;
    }
    let sol = lsq::solve_constrained(&a, &b, &g, &hh, sv_cutoff)
        .map_err(|_| FitError::InconsistentConstraints)?;
    Ok((sol.theta, sol.cov, sol.full_rank))
}

pub(crate) fn package_model(
    basis: &Basis,
    theta: DVector<f64>,
    cov: DMatrix<f64>,
    order: u32,
) -> SplineModel {
    let piece_coeffs = basis
        .maps
        .iter()
        .map(|m| (m * &theta).iter().cloned().collect())
        .collect();
    SplineModel {
        order,
        breakpoints: basis.breakpoints.clone(),
        piece_coeffs,
        theta,
        free_cov: cov,
        param_map: basis.maps.clone(),
    }
}

/// Per-level reduced χ² of the model against all usable bins, plus the
/// realized weighted objective. Exactly-constrained bins count toward ñ
/// with zero residual.
pub(crate) fn diagnose(h: &BinHierarchy, model: &SplineModel) -> (Vec<LevelGoodness>, f64) {
    let mut per_level = Vec::with_capacity(h.num_levels());
    let mut objective = 0.0;
    for n in 0..h.num_levels() {
        let mut chi2 = 0.0;
        let mut usable = 0;
        for b in h.level(n) {
            if !b.usable {
                continue;
            }
            if b.estimate.error > 0.0 {
                usable += 1;
                let r = (b.estimate.value - model.integral(b.lo, b.hi)) / b.estimate.error;
                chi2 += r * r;
            } else if b.stats.count == h.total() {
                usable += 1;
            }
        }
        objective += chi2 * fmath::powi(0.5, n as i32);
        per_level.push(LevelGoodness {
            level: n as u32,
            usable,
            chi2_over_n: if usable > 0 { chi2 / usable as f64 } else { 0.0 },
        });
    }
    (per_level, objective)
}

pub(crate) fn edge_value(h: &BinHierarchy, i: usize) -> f64 {
    let bins = h.level(h.num_levels() - 1);
    if i < bins.len() {
        bins[i].lo
    } else {
        h.domain().x_hi
    }
}

fn snap_breakpoints(h: &BinHierarchy, breakpoints: &[f64]) -> Result<Vec<f64>, FitError> {
    if breakpoints.len() < 2 {
        return Err(FitError::BadBreakpoints);
    }
    let bins = h.level(h.num_levels() - 1);
    let n_e = bins.len();
    let tol = 1e-9 * h.domain().width();
    let mut out = Vec::with_capacity(breakpoints.len());
    for &t in breakpoints {
        let i1 = bins.partition_point(|b| b.lo < t).min(n_e);
        let mut best = i1;
        if i1 > 0 && (t - edge_value(h, i1 - 1)).abs() < (edge_value(h, i1) - t).abs() {
            best = i1 - 1;
        }
        let e = edge_value(h, best);
        if (e - t).abs() > tol {
            return Err(FitError::BadBreakpoints);
        }
        out.push(e);
    }
    let d = h.domain();
    if out[0] != d.x_lo
        || *out.last().expect("nonempty") != d.x_hi
        || out.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(FitError::BadBreakpoints);
    }
    Ok(out)
}

/// Fit a spline over a fixed division. Acceptance fields in the returned
/// diagnostics refer to `cfg.t_min`; no splitting or constraint is applied.
pub fn fit_division(
    h: &BinHierarchy,
    breakpoints: &[f64],
    cfg: &FitConfig,
    boundary: &[BoundaryCondition],
) -> Result<(SplineModel, FitDiagnostics), FitError> {
    cfg.validate()?;
    let bp = snap_breakpoints(h, breakpoints)?;
    let basis = Basis::new(&bp, cfg.order as usize);
    let (rows, exacts) = hierarchy_rows(h);
    let (theta, cov, full_rank) =
        fit_rowspecs(&basis, &rows, &exacts, boundary, &[], cfg.sv_cutoff)?;
    let model = package_model(&basis, theta, cov, cfg.order);
    let (per_level, objective) = diagnose(h, &model);
    let accepted = passes_levels(&per_level, cfg.t_min);
    let pieces = bp.len() - 1;
    Ok((
        model,
        FitDiagnostics {
            per_level,
            accepted_threshold: cfg.t_min,
            pieces,
            accepted,
            constraint_lambda: 0.0,
            objective,
            full_rank,
        },
    ))
}

/// Levels actually checked by the interval scan: walk levels from the top,
/// keep those whose fully-inside bins are at most half unusable, and stop
/// the scan entirely at the first level where unusable bins are the
/// majority.
fn scan_levels(h: &BinHierarchy, model: &SplineModel, lo: f64, hi: f64) -> Vec<LevelGoodness> {
    let mut out = Vec::new();
    for n in 0..h.num_levels() {
        let bins = bins_inside(h, lo, hi, n);
        if bins.is_empty() {
            continue;
        }
        let unusable = bins.iter().filter(|b| !b.usable).count();
        if 2 * unusable > bins.len() {
            break;
        }
        let mut chi2 = 0.0;
        let mut usable = 0;
        for b in bins {
            if !b.usable {
                continue;
            }
            if b.estimate.error > 0.0 {
                usable += 1;
                let r = (b.estimate.value - model.integral(b.lo, b.hi)) / b.estimate.error;
                chi2 += r * r;
            } else if b.stats.count == h.total() {
                usable += 1;
            }
        }
        if usable == 0 {
            continue;
        }
        out.push(LevelGoodness { level: n as u32, usable, chi2_over_n: chi2 / usable as f64 });
    }
    out
}

/// Check the model on `[lo, hi]` at threshold T. Returns the verdict and
/// the worst-margin checked level (None when nothing was checkable, a
/// vacuous pass).
pub fn goodness_on_interval(
    h: &BinHierarchy,
    model: &SplineModel,
    lo: f64,
    hi: f64,
    t: f64,
) -> (bool, Option<IntervalGoodness>) {
    let mut pass = true;
    let mut worst: Option<IntervalGoodness> = None;
    for lv in scan_levels(h, model, lo, hi) {
        let threshold = 1.0 + t * fmath::sqrt(2.0 / lv.usable as f64);
        let excess = lv.chi2_over_n - threshold;
        if excess > 0.0 {
            pass = false;
        }
        if worst.map_or(true, |w| excess > w.excess) {
            worst = Some(IntervalGoodness {
                level: lv.level,
                usable: lv.usable,
                chi2_over_n: lv.chi2_over_n,
                excess,
            });
        }
    }
    (pass, worst)
}

/// Elementary edge nearest the midpoint of the piece spanned by edge
/// indices `(ilo, ihi)`, if any interior edge exists.
pub(crate) fn nearest_split_edge(h: &BinHierarchy, ilo: usize, ihi: usize) -> Option<usize> {
    if ihi - ilo < 2 {
        return None;
    }
    let bins = h.level(h.num_levels() - 1);
    let mid = 0.5 * (edge_value(h, ilo) + edge_value(h, ihi));
    let off = bins[ilo + 1..ihi].partition_point(|b| b.lo < mid);
    let hi_cand = (ilo + 1 + off).min(ihi - 1);
    let lo_cand = if ilo + 1 + off > ilo + 1 { ilo + off } else { hi_cand };
    if (edge_value(h, lo_cand) - mid).abs() <= (edge_value(h, hi_cand) - mid).abs() {
        Some(lo_cand)
    } else {
        Some(hi_cand)
    }
}

/// The adaptive loop: start from one piece, split pieces that fail their
/// interval checks at the elementary edge nearest their midpoint, escalate
/// the threshold once no further split helps, and constrain jumps on the
/// accepted division.
pub fn adaptive_fit(
    h: &BinHierarchy,
    cfg: &FitConfig,
    boundary: &[BoundaryCondition],
) -> Result<(SplineModel, FitDiagnostics), FitError> {
    cfg.validate()?;
    let m = cfg.order as usize;
    let n_e = h.level(h.num_levels() - 1).len();
    let unconstrained = FitConfig { jump_constraint: false, ..cfg.clone() };

    let mut division: Vec<usize> = vec![0, n_e];
    let mut t = cfg.t_min;
    loop {
        // splitting loop at fixed T; breaks with the stalled fit
        let stalled = loop {
            let bp: Vec<f64> = division.iter().map(|&i| edge_value(h, i)).collect();
            let (model, mut diag) = fit_division(h, &bp, &unconstrained, boundary)?;
            diag.accepted_threshold = t;
            diag.accepted = passes_levels(&diag.per_level, t);
            if diag.accepted {
                if cfg.jump_constraint && division.len() > 2 {
                    let (model, lambda) = constrain_jumps(h, &model, cfg, t, boundary);
                    let (per_level, objective) = diagnose(h, &model);
                    let diag = FitDiagnostics {
                        per_level,
                        constraint_lambda: lambda,
                        objective,
                        ..diag
                    };
                    return Ok((model, diag));
                }
                return Ok((model, diag));
            }

            let mut inserts: Vec<usize> = Vec::new();
            let mut fallback: Option<(f64, usize)> = None;
            for w in division.windows(2) {
                let (ilo, ihi) = (w[0], w[1]);
                let split = nearest_split_edge(h, ilo, ihi);
                let splittable =
                    split.map_or(false, |s| s - ilo > m + 1 && ihi - s > m + 1);
                if !splittable {
                    continue;
                }
                let s = split.expect("splittable implies a split edge");
                let (pass, data) =
                    goodness_on_interval(h, &model, edge_value(h, ilo), edge_value(h, ihi), t);
                if !pass {
                    inserts.push(s);
                } else if let Some(d) = data {
                    // candidate for the fallback split when the division
                    // fails globally but every piece passes locally
                    if fallback.map_or(true, |(e, _)| d.excess > e) {
                        fallback = Some((d.excess, s));
                    }
                }
            }
            if inserts.is_empty() {
                if let Some((_, s)) = fallback {
                    inserts.push(s);
                }
            }
            if inserts.is_empty() {
                break (model, diag);
            }
            division.extend(inserts);
            division.sort_unstable();
            division.dedup();
        };
        t += 0.5;
        if t > cfg.t_max + 1e-9 {
            let (model, mut diag) = stalled;
            diag.accepted = false;
            diag.accepted_threshold = cfg.t_max;
            return Ok((model, diag));
        }
    }
}

/// Shrink m-th-derivative jumps of an accepted multi-piece model: per-knot
/// weights λ_j come from the goodness headroom of the surrounding pieces,
/// and the global weight λ is pushed to the largest feasible value in
/// `cfg.lambda_range` by bisection on log λ. Returns the (possibly
/// unchanged) model and the λ used.
/// Per-knot constraint weights λ_j at threshold T: the goodness headroom
/// of the pieces around knot j, floored at 0. Index 0 is unused and stays
/// 0; a knot with no checkable surroundings gets 0 and is left alone.
pub fn knot_weights(h: &BinHierarchy, model: &SplineModel, t: f64) -> Vec<f64> {
    let n_p = model.n_pieces();
    let mut lambda_j = vec![0.0f64; n_p];
    for j in 1..n_p {
        let p_lo = j.saturating_sub(2);
        let p_hi = if j + 1 < n_p { j + 1 } else { n_p - 1 };
        let mut min_margin = f64::INFINITY;
        for pc in p_lo..=p_hi {
            let (lo, hi) = (model.breakpoints[pc], model.breakpoints[pc + 1]);
            for lv in scan_levels(h, model, lo, hi) {
                let margin =
                    1.0 + t * fmath::sqrt(2.0 / lv.usable as f64) - lv.chi2_over_n;
                if margin < min_margin {
                    min_margin = margin;
                }
            }
        }
        if min_margin.is_finite() && min_margin > 0.0 {
            lambda_j[j] = min_margin;
        }
    }
    lambda_j
}

pub fn constrain_jumps(
    h: &BinHierarchy,
    model: &SplineModel,
    cfg: &FitConfig,
    t: f64,
    boundary: &[BoundaryCondition],
) -> (SplineModel, f64) {
    let n_p = model.n_pieces();
    if n_p < 2 {
        return (model.clone(), 0.0);
    }
    let m = model.order as usize;
    let lambda_j = knot_weights(h, model, t);

    let active: Vec<usize> = (1..n_p)
        .filter(|&j| lambda_j[j] > 0.0 && model.theta[m + j] != 0.0)
        .collect();
    if active.is_empty() {
        return (model.clone(), 0.0);
    }

    let basis = Basis::new(&model.breakpoints, m);
    let (rows, exacts) = hierarchy_rows(h);
    let feasible = |lam: f64| -> Option<SplineModel> {
        let pens: Vec<Penalty> = active
            .iter()
            .map(|&j| Penalty {
                col: m + j,
                coeff: fmath::sqrt(lam * lambda_j[j] / n_p as f64) / model.theta[m + j],
            })
            .collect();
        let (theta, cov, _) =
            fit_rowspecs(&basis, &rows, &exacts, boundary, &pens, cfg.sv_cutoff).ok()?;
        let cand = package_model(&basis, theta, cov, model.order);
        let (per_level, _) = diagnose(h, &cand);
        if !passes_levels(&per_level, t) {
            return None;
        }
        for w in cand.breakpoints.windows(2) {
            let (pass, _) = goodness_on_interval(h, &cand, w[0], w[1], t);
            if !pass {
                return None;
            }
        }
        Some(cand)
    };

    let (lam_min, lam_max) = cfg.lambda_range;
    if let Some(best) = feasible(lam_max) {
        return (best, lam_max);
    }
    let Some(mut best) = feasible(lam_min) else {
        return (model.clone(), 0.0);
    };
    let mut best_lam = lam_min;
    let mut lo = fmath::ln(lam_min);
    let mut hi = fmath::ln(lam_max);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let lam = fmath::exp(mid);
        if let Some(cand) = feasible(lam) {
            best = cand;
            best_lam = lam;
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (best, best_lam)
}
