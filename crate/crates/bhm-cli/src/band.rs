//! Band assembly for the CLI: thread-pool bootstrap and transform-aware
//! evaluation grids.

use anyhow::{anyhow, bail, Context, Result};
use bhm_core::accum::{BinStats, SampleAccumulator};
use bhm_core::errors::{bootstrap_error, bootstrap_replica, BandError, ErrorBand, ErrorMethod};
use bhm_core::splinefit::{BoundaryCondition, FitConfig, SplineModel};
use bhm_core::transforms::{MonotoneMap, Transform, TransformKind};
use rayon::prelude::*;

/// Bootstrap band with replicas spread over a rayon pool.
///
/// Replica r always uses RNG stream r and its a-th redraw stream
/// r + a·m_tilde, so the band is bit-identical to the sequential
/// [`bootstrap_error`] no matter how many threads run.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_band(
    parts: &[SampleAccumulator],
    knots: &[f64],
    cfg: &FitConfig,
    boundary: &[BoundaryCondition],
    m_tilde: usize,
    grid: &[f64],
    seed: u64,
    threads: Option<usize>,
) -> Result<ErrorBand> {
    if threads == Some(1) {
        return Ok(bootstrap_error(parts, knots, cfg, boundary, m_tilde, grid, seed)?);
    }
    if parts.is_empty() {
        bail!(BandError::NoParts);
    }
    if m_tilde < parts.len() {
        bail!(BandError::FewReplicas { m_tilde, parts: parts.len() });
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .context("building thread pool")?;
    let replicas: Result<Vec<(Vec<f64>, usize)>> = pool.install(|| {
        (0..m_tilde)
            .into_par_iter()
            .map(|r| {
                let mut redraws = 0usize;
                loop {
                    let stream = r as u64 + redraws as u64 * m_tilde as u64;
                    match bootstrap_replica(parts, knots, cfg, boundary, grid, seed, stream)?
                    {
                        Some(v) => return Ok((v, redraws)),
                        None => {
                            redraws += 1;
                            if redraws * 10 > m_tilde {
                                bail!(BandError::TooManyRedraws { redrawn: redraws, m_tilde });
                            }
                        }
                    }
                }
            })
            .collect()
    });
    let replicas = replicas?;

    let redrawn: usize = replicas.iter().map(|(_, r)| r).sum();
    if redrawn * 10 > m_tilde {
        bail!(BandError::TooManyRedraws { redrawn, m_tilde });
    }
    // same accumulation order as the sequential path: replica index order
    let mut spread = vec![BinStats::default(); grid.len()];
    for (values, _) in &replicas {
        for (s, &v) in spread.iter_mut().zip(values) {
            s.push(v);
        }
    }
    let sigma = spread
        .iter()
        .map(|s| if s.count < 2 { 0.0 } else { (s.m2 / (s.count - 1) as f64).max(0.0).sqrt() })
        .collect();
    Ok(ErrorBand { x: grid.to_vec(), sigma, method: ErrorMethod::Bootstrap })
}

/// One output abscissa: original coordinate `x`, model coordinate `y`, and
/// the weight x^p that converts model-space values and errors back to the
/// original function.
#[derive(Debug, Clone, Copy)]
pub struct EvalPoint {
    pub x: f64,
    pub y: f64,
    pub weight: f64,
}

/// Evaluation grid in original coordinates.
///
/// Without a transform this is a uniform grid over the model domain (or
/// the requested x-range, which must lie inside it). With one, the default
/// grid is uniform in the model's y coordinate mapped back to x — points
/// whose x is infinite or sits on a divergent weight are dropped — while
/// an explicit x-range is taken uniform in x.
pub fn eval_points(
    model: &SplineModel,
    transform: Option<&Transform>,
    x_range: Option<(f64, f64)>,
    n: usize,
) -> Result<Vec<EvalPoint>> {
    let n = n.max(2);
    let d = model.domain();
    let mut out = Vec::with_capacity(n);
    match transform {
        None => {
            let (lo, hi) = x_range.unwrap_or((d.x_lo, d.x_hi));
            if lo < d.x_lo || hi > d.x_hi || !(lo < hi) {
                bail!("x range [{lo}, {hi}] is outside the fitted domain [{}, {}]", d.x_lo, d.x_hi);
            }
            for i in 0..n {
                let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
                out.push(EvalPoint { x, y: x, weight: 1.0 });
            }
        }
        Some(t) => {
            let p = t.weight_power;
            let mut push = |x: f64, y: f64| {
                if !x.is_finite() || (x == 0.0 && p > 0.0) {
                    return; // divergent endpoint
                }
                out.push(EvalPoint { x, y, weight: x.powf(p) });
            };
            match x_range {
                Some((lo, hi)) => {
                    if !(lo < hi) {
                        bail!("empty x range [{lo}, {hi}]");
                    }
                    for i in 0..n {
                        let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
                        let y = t.kind.y_of(x);
                        if y < d.x_lo || y > d.x_hi {
                            bail!(
                                "x = {x} maps to y = {y}, outside the fitted domain [{}, {}]",
                                d.x_lo,
                                d.x_hi
                            );
                        }
                        push(x, y);
                    }
                }
                None => {
                    for i in 0..n {
                        let y = d.x_lo + (d.x_hi - d.x_lo) * i as f64 / (n - 1) as f64;
                        push(t.kind.x_of(y), y);
                    }
                }
            }
            if out.is_empty() {
                bail!("no evaluable grid points (all map to divergent endpoints)");
            }
        }
    }
    Ok(out)
}

/// σ at each eval point in original coordinates: the model-space band value
/// divided by the point's weight.
pub fn restore_sigma(points: &[EvalPoint], band: &ErrorBand) -> Result<Vec<f64>> {
    if band.x.len() != points.len() {
        bail!("band grid size {} does not match {} points", band.x.len(), points.len());
    }
    Ok(points.iter().zip(&band.sigma).map(|(pt, s)| s / pt.weight).collect())
}

/// Parse `--transform`/`--weight-power` into the sampling-side transform.
/// `none` with p = 0 means no transform at all.
pub fn make_transform(kind: TransformKind, weight_power: f64) -> Result<Option<Transform>> {
    if kind == TransformKind::Identity && weight_power == 0.0 {
        return Ok(None);
    }
    Transform::new(kind, weight_power)
        .map(Some)
        .map_err(|e| anyhow!("bad transform: {e}"))
}
