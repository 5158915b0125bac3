//! Latency statistics grouped by graph size.
//!
//! Percentiles use the nearest-rank definition: the p-th percentile of `n`
//! sorted samples is the sample at 1-based rank `ceil(p / 100 * n)`. The
//! median is the 50th percentile under the same rule, so for an even number
//! of samples it is the lower middle value.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("invalid bucket spec: {0}")]
    Buckets(String),
    #[error("no samples")]
    Empty,
}

/// Nearest-rank percentile of ascending `sorted`, `p` in `(0, 100]`.
pub fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() || !(p > 0.0 && p <= 100.0) {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub p99: f64,
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(Summary {
        count: values.len(),
        mean: values.iter().sum::<f64>() / values.len() as f64,
        median: percentile(&sorted, 50.0)?,
        p99: percentile(&sorted, 99.0)?,
    })
}

/// Ascending lower bounds; bucket `i` is `[bounds[i], bounds[i + 1])` and
/// the last bucket is open-ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Buckets {
    bounds: Vec<usize>,
}

impl Buckets {
    pub fn new(mut bounds: Vec<usize>) -> Result<Self, StatsError> {
        if bounds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(StatsError::Buckets(format!("bounds {bounds:?} must be strictly ascending")));
        }
        if bounds.first() != Some(&0) {
            bounds.insert(0, 0);
        }
        Ok(Buckets { bounds })
    }

    /// Parses a comma-separated list such as `0,16,32,64`.
    pub fn parse(spec: &str) -> Result<Self, StatsError> {
        let bounds = spec
            .split(',')
            .map(|s| s.trim().parse::<usize>().map_err(|e| StatsError::Buckets(format!("`{s}`: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(bounds)
    }

    pub fn bounds(&self) -> &[usize] {
        &self.bounds
    }

    pub fn len(&self) -> usize {
        self.bounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bounds.is_empty()
    }

    pub fn index_of(&self, x: usize) -> usize {
        self.bounds.partition_point(|&b| b <= x) - 1
    }

    pub fn range(&self, i: usize) -> BucketRange {
        BucketRange { lo: self.bounds[i], hi: self.bounds.get(i + 1).copied() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketRange {
    pub lo: usize,
    /// Exclusive upper bound, `None` for the last bucket.
    pub hi: Option<usize>,
}

impl fmt::Display for BucketRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.hi {
            Some(hi) => write!(f, "{}-{}", self.lo, hi - 1),
            None => write!(f, "{}+", self.lo),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub nodes: usize,
    pub edges: usize,
    pub cycles: u64,
    pub latency_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub nodes: Option<BucketRange>,
    pub edges: Option<BucketRange>,
    pub latency_s: Summary,
    pub cycles: Summary,
}

/// Groups keyed by (node bucket, edge bucket) plus the two marginals.
/// Empty groups are omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub total: GroupStats,
    pub joint: Vec<GroupStats>,
    pub by_nodes: Vec<GroupStats>,
    pub by_edges: Vec<GroupStats>,
}

fn group(samples: &[&Sample], nodes: Option<BucketRange>, edges: Option<BucketRange>) -> Option<GroupStats> {
    let lat: Vec<f64> = samples.iter().map(|s| s.latency_s).collect();
    let cyc: Vec<f64> = samples.iter().map(|s| s.cycles as f64).collect();
    Some(GroupStats { nodes, edges, latency_s: summarize(&lat)?, cycles: summarize(&cyc)? })
}

pub fn latency_stats(
    samples: &[Sample],
    node_buckets: &Buckets,
    edge_buckets: &Buckets,
) -> Result<LatencyStats, StatsError> {
    let all: Vec<&Sample> = samples.iter().collect();
    let total = group(&all, None, None).ok_or(StatsError::Empty)?;

    let mut joint = Vec::new();
    let mut by_nodes = Vec::new();
    let mut by_edges = Vec::new();
    for i in 0..node_buckets.len() {
        let in_nodes: Vec<&Sample> = all.iter().copied().filter(|s| node_buckets.index_of(s.nodes) == i).collect();
        by_nodes.extend(group(&in_nodes, Some(node_buckets.range(i)), None));
        for j in 0..edge_buckets.len() {
            let cell: Vec<&Sample> = in_nodes.iter().copied().filter(|s| edge_buckets.index_of(s.edges) == j).collect();
            joint.extend(group(&cell, Some(node_buckets.range(i)), Some(edge_buckets.range(j))));
        }
    }
    for j in 0..edge_buckets.len() {
        let in_edges: Vec<&Sample> = all.iter().copied().filter(|s| edge_buckets.index_of(s.edges) == j).collect();
        by_edges.extend(group(&in_edges, None, Some(edge_buckets.range(j))));
    }
    Ok(LatencyStats { total, joint, by_nodes, by_edges })
}

pub const BATCH_SIZES: [usize; 5] = [1, 2, 4, 8, 16];

/// Modeled per-graph latency when a fixed per-batch overhead is shared by
/// `b` graphs: `mean_latency + overhead / b`.
pub fn batch_amortization(samples: &[Sample], overhead_s: f64, batch_sizes: &[usize]) -> Vec<(usize, f64)> {
    if samples.is_empty() {
        return Vec::new();
    }
    let mean = samples.iter().map(|s| s.latency_s).sum::<f64>() / samples.len() as f64;
    batch_sizes.iter().map(|&b| (b, mean + overhead_s / b as f64)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares `y = slope * x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Some(LinearFit { slope, intercept: my - slope * mx, r2 })
}
