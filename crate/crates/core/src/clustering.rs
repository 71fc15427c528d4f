//! Seeded k-means (Lloyd iterations from k-means++ seeding) and k sweeps.

use std::io::{BufRead, Write};
use std::ops::RangeInclusive;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{derive_seed, derive_stream, Stream};

#[derive(Debug, Error)]
pub enum ClusteringError {
    #[error("no points to cluster")]
    NoPoints,
    #[error("k = {k} is outside 1..={n}")]
    KOutOfRange { k: usize, n: usize },
    #[error("point {index} has dimension {found}, expected {expected}")]
    Dimension {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("point {0} has a non-finite coordinate")]
    NonFinite(usize),
    #[error("at least one restart is required")]
    NoRestarts,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Dense row-major point set in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMatrix {
    n: usize,
    dim: usize,
    data: Vec<f64>,
}

impl PointMatrix {
    pub fn from_rows<T: AsRef<[f32]>>(rows: &[T]) -> Result<Self, ClusteringError> {
        Self::build(rows.iter().map(|r| r.as_ref().iter().map(|&v| f64::from(v)).collect()))
    }

    pub fn from_rows_f64<T: AsRef<[f64]>>(rows: &[T]) -> Result<Self, ClusteringError> {
        Self::build(rows.iter().map(|r| r.as_ref().to_vec()))
    }

    fn build<I: Iterator<Item = Vec<f64>>>(rows: I) -> Result<Self, ClusteringError> {
        let mut data = Vec::new();
        let mut dim = None;
        let mut n = 0;
        for (index, row) in rows.enumerate() {
            let expected = *dim.get_or_insert(row.len());
            if row.len() != expected {
                return Err(ClusteringError::Dimension {
                    index,
                    expected,
                    found: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(ClusteringError::NonFinite(index));
            }
            data.extend(row);
            n += 1;
        }
        Ok(Self {
            n,
            dim: dim.unwrap_or(0),
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Rows scaled to unit length (zero rows stay zero), for cosine-style clustering.
    pub fn normalized(&self) -> Self {
        let mut data = self.data.clone();
        if self.dim > 0 {
            for row in data.chunks_mut(self.dim) {
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    row.iter_mut().for_each(|v| *v /= norm);
                }
            }
        }
        Self { data, ..*self }
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    /// Stop once the relative inertia improvement drops below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Independent k-means++ seedings; the lowest final inertia wins.
    pub restarts: usize,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            tol: 1e-6,
            max_iter: 300,
            restarts: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub k: usize,
    pub seed: u64,
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Inertia after seeding and after every Lloyd iteration of the kept restart.
    pub inertia_trace: Vec<f64>,
}

impl ClusteringResult {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

/// Relative slack allowed by the monotonicity check for floating-point noise.
pub const INERTIA_SLACK: f64 = 1e-12;

/// True when `trace` never increases beyond floating-point slack.
pub fn is_non_increasing(trace: &[f64]) -> bool {
    trace
        .windows(2)
        .all(|w| w[1] <= w[0] + INERTIA_SLACK * w[0].abs().max(1.0))
}

pub fn kmeans(points: &PointMatrix, config: &KMeansConfig) -> Result<ClusteringResult, ClusteringError> {
    if points.is_empty() {
        return Err(ClusteringError::NoPoints);
    }
    if config.k == 0 || config.k > points.len() {
        return Err(ClusteringError::KOutOfRange {
            k: config.k,
            n: points.len(),
        });
    }
    if config.restarts == 0 {
        return Err(ClusteringError::NoRestarts);
    }
    let mut best: Option<ClusteringResult> = None;
    for restart in 0..config.restarts {
        let mut rng = derive_stream(config.seed, &["restart", &restart.to_string()]);
        let run = lloyd(points, config, &mut rng);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn lloyd(points: &PointMatrix, config: &KMeansConfig, rng: &mut Stream) -> ClusteringResult {
    let k = config.k;
    let mut centroids = kmeans_plus_plus(points, k, rng);
    let (mut labels, dists) = assign(points, &centroids);
    let mut inertia = repair_empty(points, &mut labels, dists, &mut centroids);
    let mut trace = vec![inertia];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < config.max_iter {
        iterations += 1;
        centroids = update_centroids(points, &labels, k);
        let (next, dists) = assign(points, &centroids);
        let mut next = next;
        let next_inertia = repair_empty(points, &mut next, dists, &mut centroids);
        debug_assert!(is_non_increasing(&[inertia, next_inertia]), "{inertia} -> {next_inertia}");
        trace.push(next_inertia);
        let changed = next != labels;
        labels = next;
        let improvement = if inertia > 0.0 {
            (inertia - next_inertia) / inertia
        } else {
            0.0
        };
        inertia = next_inertia;
        if !changed || improvement < config.tol {
            converged = true;
            break;
        }
    }

    // finish on an update step so every centroid is the mean of its members
    centroids = update_centroids(points, &labels, k);
    let final_inertia: f64 = (0..points.len())
        .map(|i| squared_distance(points.row(i), &centroids[labels[i]]))
        .sum();
    if final_inertia != inertia {
        debug_assert!(is_non_increasing(&[inertia, final_inertia]));
        trace.push(final_inertia);
    }
    ClusteringResult {
        k,
        seed: config.seed,
        assignments: labels,
        centroids,
        inertia: final_inertia,
        iterations,
        converged,
        inertia_trace: trace,
    }
}

fn kmeans_plus_plus(points: &PointMatrix, k: usize, rng: &mut Stream) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.gen_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points.row(first).to_vec()];
    let mut nearest: Vec<f64> = (0..n).map(|i| squared_distance(points.row(i), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in nearest.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave target just above the running sum
            pick.unwrap_or_else(|| nearest.iter().rposition(|&w| w > 0.0).expect("total > 0"))
        } else {
            // fewer distinct points than k: any unused index
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.gen_range(0..free.len())]
        };
        chosen[pick] = true;
        let c = points.row(pick).to_vec();
        for (i, slot) in nearest.iter_mut().enumerate() {
            *slot = slot.min(squared_distance(points.row(i), &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Nearest centroid per point (ties to the lower index) and its squared distance.
fn assign(points: &PointMatrix, centroids: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    (0..points.len())
        .into_par_iter()
        .map(|i| {
            let p = points.row(i);
            let mut best = (0, f64::INFINITY);
            for (c, centroid) in centroids.iter().enumerate() {
                let d = squared_distance(p, centroid);
                if d < best.1 {
                    best = (c, d);
                }
            }
            best
        })
        .unzip()
}

/// Give every empty cluster the point farthest from its own centroid, taken
/// from a cluster that can spare it. Returns the resulting inertia.
fn repair_empty(points: &PointMatrix, labels: &mut [usize], mut dists: Vec<f64>, centroids: &mut [Vec<f64>]) -> f64 {
    let k = centroids.len();
    let mut counts = vec![0usize; k];
    for &l in labels.iter() {
        counts[l] += 1;
    }
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let mut donor: Option<usize> = None;
        for i in 0..labels.len() {
            if counts[labels[i]] > 1 && donor.is_none_or(|d| dists[i] > dists[d]) {
                donor = Some(i);
            }
        }
        let i = donor.expect("k <= n leaves a cluster with two or more members");
        counts[labels[i]] -= 1;
        counts[empty] += 1;
        labels[i] = empty;
        centroids[empty] = points.row(i).to_vec();
        dists[i] = 0.0;
    }
    dists.iter().sum()
}

fn update_centroids(points: &PointMatrix, labels: &[usize], k: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; points.dim()]; k];
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, &v) in sums[l].iter_mut().zip(points.row(i)) {
            *s += v;
        }
    }
    for (sum, &count) in sums.iter_mut().zip(&counts) {
        if count > 0 {
            let c = count as f64;
            sum.iter_mut().for_each(|v| *v /= c);
        }
    }
    sums
}

/// Seed used for one k of a sweep.
pub fn sweep_seed(master: u64, k: usize) -> u64 {
    derive_seed(master, &["kmeans", &k.to_string()])
}

/// One clustering per k. Each k gets its own derived seed, so results do not
/// depend on evaluation order.
pub fn kmeans_sweep(
    points: &PointMatrix,
    k_range: RangeInclusive<usize>,
    master_seed: u64,
    base: &KMeansConfig,
) -> Result<Vec<ClusteringResult>, ClusteringError> {
    let ks: Vec<usize> = k_range.collect();
    if let Some(&bad) = ks.iter().find(|&&k| k == 0 || k > points.len()) {
        return Err(ClusteringError::KOutOfRange { k: bad, n: points.len() });
    }
    ks.par_iter()
        .map(|&k| {
            let config = KMeansConfig {
                k,
                seed: sweep_seed(master_seed, k),
                ..*base
            };
            kmeans(points, &config)
        })
        .collect()
}

/// Number of adjacent k pairs in a sweep whose inertia goes up.
pub fn inertia_increases(results: &[ClusteringResult]) -> usize {
    results
        .windows(2)
        .filter(|w| !is_non_increasing(&[w[0].inertia, w[1].inertia]))
        .count()
}

/// One line of a sweep dump. Centroids and the inertia trace are not kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub k: usize,
    pub seed: u64,
    pub inertia: f64,
    pub iterations: usize,
    pub converged: bool,
    pub assignments: Vec<usize>,
}

impl From<&ClusteringResult> for SweepEntry {
    fn from(r: &ClusteringResult) -> Self {
        Self {
            k: r.k,
            seed: r.seed,
            inertia: r.inertia,
            iterations: r.iterations,
            converged: r.converged,
            assignments: r.assignments.clone(),
        }
    }
}

impl SweepEntry {
    /// A result without centroids or trace, enough for evaluation.
    pub fn into_result(self) -> ClusteringResult {
        ClusteringResult {
            k: self.k,
            seed: self.seed,
            assignments: self.assignments,
            centroids: Vec::new(),
            inertia: self.inertia,
            iterations: self.iterations,
            converged: self.converged,
            inertia_trace: Vec::new(),
        }
    }
}

/// JSONL with one [`SweepEntry`] per result.
pub fn write_sweep<W: Write>(results: &[ClusteringResult], mut out: W) -> Result<(), ClusteringError> {
    for r in results {
        serde_json::to_writer(&mut out, &SweepEntry::from(r))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_sweep<R: BufRead>(reader: R) -> Result<Vec<SweepEntry>, ClusteringError> {
    let mut entries = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        entries.push(serde_json::from_str(&line)?);
    }
    Ok(entries)
}
