//! Hierarchy of combined bins: level n holds `2^n` bins, each the pooled
//! combination of its two level-(n+1) children, down to the elementary grid
//! at level K and up to a single full-domain bin at level 0.

use alloc::vec::Vec;

use crate::accum::{integral_of, AccumError, BinStats, Domain, IntegralEstimate, SampleAccumulator};

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyBin {
    pub level: u32,
    pub index: usize,
    pub lo: f64,
    pub hi: f64,
    pub stats: BinStats,
    pub estimate: IntegralEstimate,
    /// Carries enough samples to contribute a residual row.
    pub usable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinHierarchy {
    /// `levels[n]` has `2^n` bins in left-to-right order.
    levels: Vec<Vec<HierarchyBin>>,
    domain: Domain,
    total: u64,
    min_count: u64,
}

impl BinHierarchy {
    /// Number of levels below the root, i.e. the elementary grid is level K.
    pub fn k(&self) -> u32 {
        self.levels.len() as u32 - 1
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, n: usize) -> &[HierarchyBin] {
        &self.levels[n]
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    /// Number of usable bins at level n.
    pub fn usable_at(&self, n: usize) -> usize {
        self.levels[n].iter().filter(|b| b.usable).count()
    }
}

/// Build the full hierarchy from an elementary accumulator.
pub fn build(acc: &SampleAccumulator, min_count: u64) -> Result<BinHierarchy, AccumError> {
    if acc.total() < 2 {
        return Err(AccumError::TotalTooSmall);
    }
    let k = acc.levels() as usize;
    let total = acc.total();
    let mut levels: Vec<Vec<HierarchyBin>> = Vec::with_capacity(k + 1);

    let elementary: Vec<HierarchyBin> = acc
        .bins()
        .iter()
        .enumerate()
        .map(|(i, stats)| HierarchyBin {
            level: k as u32,
            index: i,
            lo: acc.edge(i),
            hi: acc.edge(i + 1),
            stats: *stats,
            estimate: integral_of(stats, total).expect("total >= 2"),
            usable: stats.count >= min_count,
        })
        .collect();
    levels.push(elementary);

    for n in (0..k).rev() {
        let child = levels.last().expect("child level present");
        let mut row = Vec::with_capacity(1 << n);
        for j in 0..(1usize << n) {
            let (a, b) = (&child[2 * j], &child[2 * j + 1]);
            let stats = BinStats::pool(&a.stats, &b.stats);
            row.push(HierarchyBin {
                level: n as u32,
                index: j,
                lo: a.lo,
                hi: b.hi,
                stats,
                estimate: integral_of(&stats, total).expect("total >= 2"),
                usable: stats.count >= min_count,
            });
        }
        levels.push(row);
    }
    levels.reverse();

    Ok(BinHierarchy { levels, domain: acc.domain(), total, min_count })
}

/// Level-n bins lying fully inside `[lo, hi]`, in order, unusable ones
/// included. Bins at one level are contiguous, so this is a subslice.
pub fn bins_inside(h: &BinHierarchy, lo: f64, hi: f64, level: usize) -> &[HierarchyBin] {
    debug_assert!(lo < hi && h.domain.contains(lo) && h.domain.contains(hi));
    let bins = h.level(level);
    let start = bins.partition_point(|b| b.lo < lo);
    let end = bins.partition_point(|b| b.hi <= hi);
    if start >= end {
        &[]
    } else {
        &bins[start..end]
    }
}
