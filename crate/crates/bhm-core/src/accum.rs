//! Streaming collection of sampled values into `2^K` non-overlapping
//! elementary histogram bins, with per-bin integral estimates and errors.

use alloc::vec::Vec;
use core::fmt;

use crate::fmath;

/// Refuse grids with more than `2^DEFAULT_MAX_LEVELS` elementary bins unless
/// the caller raises the cap explicitly.
pub const DEFAULT_MAX_LEVELS: u32 = 26;

#[derive(Debug, Clone, PartialEq)]
pub enum AccumError {
    BadDomain,
    TooManyLevels { levels: u32, cap: u32 },
    BadEdges,
    OutOfDomain { x: f64 },
    GridMismatch,
    TotalTooSmall,
    InconsistentParts,
}

impl fmt::Display for AccumError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AccumError::BadDomain => write!(f, "domain must satisfy x_lo < x_hi with both finite"),
            AccumError::TooManyLevels { levels, cap } => {
                write!(f, "K = {levels} exceeds the bin cap of 2^{cap} elementary bins")
            }
            AccumError::BadEdges => {
                write!(f, "edges must be 2^K + 1 strictly increasing values matching the domain")
            }
            AccumError::OutOfDomain { x } => write!(f, "sample x = {x} lies outside the domain"),
            AccumError::GridMismatch => write!(f, "accumulators have different domains or grids"),
            AccumError::TotalTooSmall => {
                write!(f, "integral errors need a total of at least 2 samples")
            }
            AccumError::InconsistentParts => {
                write!(f, "bin statistics violate the accumulator invariants")
            }
        }
    }
}

impl core::error::Error for AccumError {}

/// Sampling domain `[x_lo, x_hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub x_lo: f64,
    pub x_hi: f64,
}

impl Domain {
    pub fn new(x_lo: f64, x_hi: f64) -> Result<Self, AccumError> {
        if !(x_lo.is_finite() && x_hi.is_finite() && x_lo < x_hi) {
            return Err(AccumError::BadDomain);
        }
        Ok(Domain { x_lo, x_hi })
    }

    pub fn width(&self) -> f64 {
        self.x_hi - self.x_lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.x_lo <= x && x <= self.x_hi
    }
}

/// Per-bin streaming statistics: sample count `N_i`, mean `v̄_i`, and the
/// scaled variance `M2 = (N_i - 1) Var(v_i)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BinStats {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl BinStats {
    /// Single-pass (Welford) update.
    pub fn push(&mut self, v: f64) {
        self.count += 1;
        let delta = v - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (v - self.mean);
    }

    /// Pooled combination of two disjoint sample sets.
    pub fn pool(a: &BinStats, b: &BinStats) -> BinStats {
        if a.count == 0 {
            return *b;
        }
        if b.count == 0 {
            return *a;
        }
        let count = a.count + b.count;
        let na = a.count as f64;
        let nb = b.count as f64;
        let delta = b.mean - a.mean;
        let mean = a.mean + delta * nb / count as f64;
        let m2 = a.m2 + b.m2 + delta * delta * na * nb / count as f64;
        BinStats { count, mean, m2 }
    }

    /// Statistics of this bin's sample list repeated `c` times.
    pub fn scaled(&self, c: u32) -> BinStats {
        if c == 0 || self.count == 0 {
            return BinStats::default();
        }
        BinStats { count: self.count * c as u64, mean: self.mean, m2: self.m2 * c as f64 }
    }
}

/// Estimate of the integral of f over one bin: `I_i = v̄_i N_i / N` with its
/// statistical error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegralEstimate {
    pub value: f64,
    pub error: f64,
    pub count: u64,
}

/// Elementary bin boundaries; the uniform default stays symbolic so file
/// round-trips preserve the form.
#[derive(Debug, Clone, PartialEq)]
pub enum Edges {
    Uniform,
    Explicit(Vec<f64>),
}

/// Streaming accumulator over `2^K` elementary bins.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleAccumulator {
    domain: Domain,
    levels: u32,
    edges: Edges,
    bins: Vec<BinStats>,
    total: u64,
}

impl SampleAccumulator {
    /// `new_accumulator`: zeroed bins on a uniform or caller-supplied grid.
    pub fn new(domain: Domain, levels: u32, edges: Option<Vec<f64>>) -> Result<Self, AccumError> {
        Self::with_cap(domain, levels, edges, DEFAULT_MAX_LEVELS)
    }

    /// `new` with an explicit memory cap on `K`.
    pub fn with_cap(
        domain: Domain,
        levels: u32,
        edges: Option<Vec<f64>>,
        max_levels: u32,
    ) -> Result<Self, AccumError> {
        if levels > max_levels {
            return Err(AccumError::TooManyLevels { levels, cap: max_levels });
        }
        let n_bins = 1usize << levels;
        let edges = match edges {
            None => Edges::Uniform,
            Some(e) => {
                if e.len() != n_bins + 1
                    || e[0] != domain.x_lo
                    || e[n_bins] != domain.x_hi
                    || e.windows(2).any(|w| !(w[0] < w[1]) || !w[1].is_finite())
                {
                    return Err(AccumError::BadEdges);
                }
                Edges::Explicit(e)
            }
        };
        Ok(SampleAccumulator {
            domain,
            levels,
            edges,
            bins: alloc::vec![BinStats::default(); n_bins],
            total: 0,
        })
    }

    /// Rebuild an accumulator from stored parts (file readers, tests).
    pub fn from_parts(
        domain: Domain,
        levels: u32,
        edges: Edges,
        bins: Vec<BinStats>,
        total: u64,
    ) -> Result<Self, AccumError> {
        let n_bins = 1usize << levels;
        if bins.len() != n_bins {
            return Err(AccumError::InconsistentParts);
        }
        if bins.iter().map(|b| b.count).sum::<u64>() != total {
            return Err(AccumError::InconsistentParts);
        }
        if let Edges::Explicit(e) = &edges {
            if e.len() != n_bins + 1
                || e[0] != domain.x_lo
                || e[n_bins] != domain.x_hi
                || e.windows(2).any(|w| !(w[0] < w[1]))
            {
                return Err(AccumError::BadEdges);
            }
        }
        Ok(SampleAccumulator { domain, levels, edges, bins, total })
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    /// K, the number of hierarchy levels below the root.
    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn n_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn bins(&self) -> &[BinStats] {
        &self.bins
    }

    pub fn edges(&self) -> &Edges {
        &self.edges
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self.edges, Edges::Uniform)
    }

    /// i-th bin boundary, i in `0..=2^K`.
    pub fn edge(&self, i: usize) -> f64 {
        match &self.edges {
            Edges::Explicit(e) => e[i],
            Edges::Uniform => {
                if i == 0 {
                    self.domain.x_lo
                } else if i == self.bins.len() {
                    self.domain.x_hi
                } else {
                    self.domain.x_lo
                        + self.domain.width() * (i as f64 / self.bins.len() as f64)
                }
            }
        }
    }

    /// Owning bin of x: a point on a shared edge goes to the right bin,
    /// x = x_hi to the last bin.
    pub fn bin_index(&self, x: f64) -> Result<usize, AccumError> {
        if !self.domain.contains(x) {
            return Err(AccumError::OutOfDomain { x });
        }
        if x == self.domain.x_hi {
            return Ok(self.bins.len() - 1);
        }
        // Largest i with edge(i) <= x, by binary search over the (possibly
        // virtual) edge array; exactness matters only against these same
        // edge values, so the computed uniform edges are fine.
        let mut lo = 0usize;
        let mut hi = self.bins.len();
        while lo + 1 < hi {
            let mid = (lo + hi) / 2;
            if self.edge(mid) <= x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(lo)
    }

    /// `record`: stream one sampled value v at position x.
    pub fn record(&mut self, x: f64, v: f64) -> Result<(), AccumError> {
        let i = self.bin_index(x)?;
        self.bins[i].push(v);
        self.total += 1;
        Ok(())
    }

    /// `merge`: pooled combination over an identical grid.
    pub fn merge(&self, other: &SampleAccumulator) -> Result<SampleAccumulator, AccumError> {
        if self.domain != other.domain || self.levels != other.levels || self.edges != other.edges
        {
            return Err(AccumError::GridMismatch);
        }
        let mut out = self.clone();
        for (a, b) in out.bins.iter_mut().zip(&other.bins) {
            *a = BinStats::pool(a, b);
        }
        out.total += other.total;
        Ok(out)
    }

    /// `integral` of the i-th elementary bin.
    pub fn integral(&self, i: usize) -> Result<IntegralEstimate, AccumError> {
        integral_of(&self.bins[i], self.total)
    }
}

/// Eqs. for the sampled bin integral: value `v̄ N_i / N` and error
/// `sqrt((M2 + v̄² N_i (N - N_i)/N) / ((N-1) N))`.
pub fn integral_of(bin: &BinStats, total: u64) -> Result<IntegralEstimate, AccumError> {
    if total < 2 {
        return Err(AccumError::TotalTooSmall);
    }
    let n = total as f64;
    let ni = bin.count as f64;
    let value = bin.mean * ni / n;
    let m2_i = bin.m2 + bin.mean * bin.mean * ni * ((total - bin.count) as f64) / n;
    let error = fmath::sqrt(m2_i / ((n - 1.0) * n));
    Ok(IntegralEstimate { value, error, count: bin.count })
}
