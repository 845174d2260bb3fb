//! Weighted linear least squares by singular value decomposition, with exact
//! linear equality constraints eliminated through the constraint nullspace.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum LsqError {
    /// Equality constraints have no solution.
    Inconsistent,
}

pub(crate) struct Solution {
    pub theta: DVector<f64>,
    /// Parameter covariance for unit-variance rows, `V Σ⁻² Vᵀ` over the kept
    /// singular values (restricted to the constraint nullspace when present).
    pub cov: DMatrix<f64>,
    /// No singular value of the free directions was discarded.
    pub full_rank: bool,
}

/// Minimize `‖A θ − b‖²`. Singular values below `sv_cutoff` times the largest
/// are treated as zero.
pub(crate) fn solve(a: &DMatrix<f64>, b: &DVector<f64>, sv_cutoff: f64) -> Solution {
    let p = a.ncols();
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let sv = &svd.singular_values;
    let sv_max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let cut = sv_cutoff * sv_max;

    let mut theta = DVector::zeros(p);
    let mut cov = DMatrix::zeros(p, p);
    let mut kept = 0usize;
    for i in 0..sv.len() {
        let s = sv[i];
        if s <= cut || s == 0.0 {
            continue;
        }
        kept += 1;
        let vi = v_t.row(i).transpose();
        let ui_b = u.column(i).dot(b);
        theta += &vi * (ui_b / s);
        cov += &vi * vi.transpose() / (s * s);
    }
    Solution { theta, cov, full_rank: kept == p }
}

/// Orthonormal basis of the nullspace of `g`, with the rank of `g`.
/// Columns of the returned matrix are the free directions.
pub(crate) fn nullspace(g: &DMatrix<f64>, sv_cutoff: f64) -> (DMatrix<f64>, usize) {
    let p = g.ncols();
    let svd = g.clone().svd(false, true);
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let sv = &svd.singular_values;
    let sv_max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let cut = sv_cutoff * sv_max;
    let rank = (0..sv.len()).filter(|&i| sv[i] > cut && sv[i] > 0.0).count();

    // Complete the orthonormal row-space basis to all of R^p: QR of
    // [rowspaceᵀ | I] puts the orthogonal complement in columns rank..p.
    let mut m = DMatrix::zeros(p, rank + p);
    for (col, i) in (0..sv.len()).filter(|&i| sv[i] > cut && sv[i] > 0.0).enumerate() {
        m.set_column(col, &v_t.row(i).transpose());
    }
    for i in 0..p {
        m[(i, rank + i)] = 1.0;
    }
    let q = m.qr().q();
    (q.columns(rank, p - rank).into_owned(), rank)
}

/// Minimize `‖A θ − b‖²` subject to `G θ = h`.
pub(crate) fn solve_constrained(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    g: &DMatrix<f64>,
    h: &DVector<f64>,
    sv_cutoff: f64,
) -> Result<Solution, LsqError> {
    let p = a.ncols();
    debug_assert_eq!(g.ncols(), p);

    // Particular solution θ₀ = G⁺ h, and a consistency check: redundant
    // constraint rows are fine, contradictory ones are not.
    let part = solve(g, h, sv_cutoff);
    let theta0 = part.theta;
    let resid = (g * &theta0 - h).norm();
    if resid > 1e-8 * (1.0 + h.norm()) {
        return Err(LsqError::Inconsistent);
    }

    let (z, _rank) = nullspace(g, sv_cutoff);
    if z.ncols() == 0 {
        return Ok(Solution { theta: theta0, cov: DMatrix::zeros(p, p), full_rank: true });
    }

    let az = a * &z;
    let rhs = b - a * &theta0;
    let inner = solve(&az, &rhs, sv_cutoff);
    let theta = &theta0 + &z * &inner.theta;
    let cov = &z * &inner.cov * z.transpose();
    Ok(Solution { theta, cov, full_rank: inner.full_rank })
}
