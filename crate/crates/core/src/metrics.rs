//! Cluster evaluation: purity, co-clustering accuracies, semantic coherency,
//! Metaphone similarity, Dtag composition, LD profiles and edit tables.
//!
//! The scalar measures are plain functions over assignments and labels so
//! they can be checked against brute-force oracles. [`evaluate_set`] puts
//! them together into the per-k, per-cluster report.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::ClusteringResult;
use crate::embedding::{LabeledPoint, TypeVectors};
use crate::mutation::VariantKind;
use crate::phonetics::{edit_signature, levenshtein, metaphone, EditSignature};
use crate::seed::derive_stream;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("empty input")]
    Empty,
    #[error("{what}: expected {expected} entries, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("point index {index} out of range for {n} assignments")]
    IndexOutOfRange { index: usize, n: usize },
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<(), MetricsError> {
    if expected == found {
        Ok(())
    } else {
        Err(MetricsError::LengthMismatch { what, expected, found })
    }
}

fn check_index(index: usize, n: usize) -> Result<(), MetricsError> {
    if index < n {
        Ok(())
    } else {
        Err(MetricsError::IndexOutOfRange { index, n })
    }
}

/// Fraction of points that belong to their cluster's majority class.
pub fn purity<L: Eq + Hash>(assignments: &[usize], labels: &[L]) -> Result<f64, MetricsError> {
    if assignments.is_empty() {
        return Err(MetricsError::Empty);
    }
    check_len("labels", assignments.len(), labels.len())?;
    let mut counts: HashMap<(usize, &L), usize> = HashMap::new();
    for (&a, l) in assignments.iter().zip(labels) {
        *counts.entry((a, l)).or_default() += 1;
    }
    let mut majority: HashMap<usize, usize> = HashMap::new();
    for ((cluster, _), c) in counts {
        let m = majority.entry(cluster).or_default();
        *m = (*m).max(c);
    }
    Ok(majority.values().sum::<usize>() as f64 / assignments.len() as f64)
}

/// Share of groups whose members all fall in one cluster. Empty groups are
/// skipped; at least one nonempty group is required.
pub fn overall_accuracy(assignments: &[usize], groups: &[Vec<usize>]) -> Result<f64, MetricsError> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for group in groups.iter().filter(|g| !g.is_empty()) {
        for &i in group {
            check_index(i, assignments.len())?;
        }
        total += 1;
        let first = assignments[group[0]];
        if group.iter().all(|&i| assignments[i] == first) {
            hits += 1;
        }
    }
    if total == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(hits as f64 / total as f64)
}

/// Partial-credit companion of [`overall_accuracy`]: per group, the share of
/// members in the group's most common cluster, averaged over groups.
pub fn overall_accuracy_partial(assignments: &[usize], groups: &[Vec<usize>]) -> Result<f64, MetricsError> {
    let mut sum = 0.0;
    let mut total = 0usize;
    for group in groups.iter().filter(|g| !g.is_empty()) {
        let mut counts: HashMap<usize, usize> = HashMap::new();
        for &i in group {
            check_index(i, assignments.len())?;
            *counts.entry(assignments[i]).or_default() += 1;
        }
        sum += *counts.values().max().expect("nonempty group") as f64 / group.len() as f64;
        total += 1;
    }
    if total == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(sum / total as f64)
}

/// Share of (standard, observed) index pairs that share a cluster.
pub fn so_accuracy(assignments: &[usize], pairs: &[(usize, usize)]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut hits = 0;
    for &(s, o) in pairs {
        check_index(s, assignments.len())?;
        check_index(o, assignments.len())?;
        if assignments[s] == assignments[o] {
            hits += 1;
        }
    }
    Ok(hits as f64 / pairs.len() as f64)
}

pub fn cosine_similarity(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coherency {
    /// Mean pairwise cosine; `None` with fewer than two in-vocabulary tokens.
    pub score: Option<f64>,
    pub in_vocab: usize,
    pub total: usize,
}

/// Mean cosine similarity of type vectors over all unordered token pairs
/// whose words are both in the vocabulary.
pub fn semantic_coherency<S: AsRef<str>>(tokens: &[S], vectors: &TypeVectors) -> Coherency {
    let found: Vec<&[f32]> = tokens.iter().filter_map(|t| vectors.get(t.as_ref())).collect();
    let score = mean_over_pairs(found.len(), |i, j| cosine_similarity(found[i], found[j]));
    Coherency {
        score,
        in_vocab: found.len(),
        total: tokens.len(),
    }
}

/// Mean pairwise Levenshtein distance between Metaphone codes; `None` for
/// fewer than two tokens. Lower means more phonetically alike.
pub fn mphone_similarity<S: AsRef<str>>(tokens: &[S]) -> Option<f64> {
    let n = tokens.len();
    if n < 2 {
        return None;
    }
    // identical codes are at distance 0, so only distinct codes need pairing
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for t in tokens {
        *counts.entry(metaphone(t.as_ref())).or_default() += 1;
    }
    let distinct: Vec<(&String, u64)> = counts.iter().map(|(c, &m)| (c, m)).collect();
    let total: u64 = (0..distinct.len())
        .into_par_iter()
        .map(|i| {
            let (a, ma) = distinct[i];
            distinct[i + 1..]
                .iter()
                .map(|&(b, mb)| ma * mb * levenshtein(a, b) as u64)
                .sum::<u64>()
        })
        .sum();
    Some(total as f64 / (n as u64 * (n as u64 - 1) / 2) as f64)
}

fn mean_over_pairs<F: Fn(usize, usize) -> f64 + Sync>(n: usize, f: F) -> Option<f64> {
    if n < 2 {
        return None;
    }
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|i| ((i + 1)..n).map(|j| f(i, j)).sum::<f64>())
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    Some(total / (n * (n - 1) / 2) as f64)
}

/// Tag distribution of one cluster. An empty cluster gives an empty map.
pub fn dtag_proportions<S: AsRef<str>>(
    assignments: &[usize],
    dtags: &[S],
    cluster: usize,
) -> Result<BTreeMap<String, f64>, MetricsError> {
    check_len("dtags", assignments.len(), dtags.len())?;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut size = 0usize;
    for (&a, tag) in assignments.iter().zip(dtags) {
        if a == cluster {
            *counts.entry(tag.as_ref().to_string()).or_default() += 1;
            size += 1;
        }
    }
    Ok(counts
        .into_iter()
        .map(|(tag, c)| (tag, c as f64 / size as f64))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LdProfile {
    pub correct_mean_ld: Option<f64>,
    pub error_mean_ld: Option<f64>,
    pub correct_count: usize,
    pub error_count: usize,
}

/// Mean Levenshtein(std, obv) over correctly and incorrectly grouped pairs.
pub fn ld_profile<S: AsRef<str>>(pairs: &[(S, S)], correct: &[bool]) -> Result<LdProfile, MetricsError> {
    check_len("correctness flags", pairs.len(), correct.len())?;
    let (mut c_sum, mut c_n, mut e_sum, mut e_n) = (0usize, 0usize, 0usize, 0usize);
    for ((s, o), &ok) in pairs.iter().zip(correct) {
        let d = levenshtein(s.as_ref(), o.as_ref());
        if ok {
            c_sum += d;
            c_n += 1;
        } else {
            e_sum += d;
            e_n += 1;
        }
    }
    let mean = |sum: usize, n: usize| (n > 0).then(|| sum as f64 / n as f64);
    Ok(LdProfile {
        correct_mean_ld: mean(c_sum, c_n),
        error_mean_ld: mean(e_sum, e_n),
        correct_count: c_n,
        error_count: e_n,
    })
}

/// Count merged edit labels, most frequent first, ties in lexicographic order.
pub fn edit_frequency_table(signatures: &[EditSignature]) -> Vec<(String, usize)> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for sig in signatures {
        for label in sig.labels() {
            *counts.entry(label).or_default() += 1;
        }
    }
    let mut table: Vec<(String, usize)> = counts.into_iter().collect();
    table.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    table
}

/// Adjusted Rand index between two labelings of the same points.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64, MetricsError> {
    if a.is_empty() {
        return Err(MetricsError::Empty);
    }
    check_len("labelings", a.len(), b.len())?;
    let choose2 = |n: usize| (n * n.saturating_sub(1) / 2) as f64;
    let mut table: HashMap<(usize, usize), usize> = HashMap::new();
    let mut rows: HashMap<usize, usize> = HashMap::new();
    let mut cols: HashMap<usize, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sum_rows: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_cols: f64 = cols.values().map(|&c| choose2(c)).sum();
    let expected = sum_rows * sum_cols / choose2(a.len()).max(1.0);
    let max = 0.5 * (sum_rows + sum_cols);
    if max == expected {
        // both labelings trivial (all one cluster or all singletons)
        return Ok(if index == expected { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

/// Bound on tokens per pairwise computation; larger clusters are sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairwiseCap {
    pub max_tokens: usize,
    pub seed: u64,
}

impl Default for PairwiseCap {
    fn default() -> Self {
        Self {
            max_tokens: 2000,
            seed: 0,
        }
    }
}

impl PairwiseCap {
    /// The tokens to use (in original order) and whether sampling happened.
    pub fn apply<'a>(&self, tokens: &[&'a str], label: &str) -> (Vec<&'a str>, bool) {
        if tokens.len() <= self.max_tokens {
            return (tokens.to_vec(), false);
        }
        let mut rng = derive_stream(self.seed, &["pairwise-sample", label]);
        let mut picked = sample(&mut rng, tokens.len(), self.max_tokens).into_vec();
        picked.sort_unstable();
        (picked.into_iter().map(|i| tokens[i]).collect(), true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub cluster: usize,
    pub size: usize,
    pub dtag_proportions: BTreeMap<String, f64>,
    pub semantic_coherency: Option<f64>,
    pub coherency_in_vocab: usize,
    pub mphone_similarity: Option<f64>,
    /// Tokens used by the pairwise measures, when fewer than `size`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampled_tokens: Option<usize>,
    pub top_edits: Vec<EditCount>,
}

/// A ranked edit with the first member (in point order) that shows it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCount {
    pub edit: String,
    pub count: usize,
    pub example: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KReport {
    pub k: usize,
    pub seed: u64,
    pub inertia: f64,
    pub iterations: usize,
    pub converged: bool,
    pub variant_purity: f64,
    pub dtag_purity: f64,
    pub overall_accuracy: Option<f64>,
    pub overall_accuracy_partial: Option<f64>,
    pub so_accuracy: Option<f64>,
    pub ld_profile: Option<LdProfile>,
    pub clusters: Vec<ClusterReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetReport {
    pub name: String,
    pub kinds: Vec<VariantKind>,
    pub points: usize,
    pub per_k: Vec<KReport>,
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions<'a> {
    pub type_vectors: Option<&'a TypeVectors>,
    pub cap: PairwiseCap,
    pub top_edits: usize,
    pub cluster_details: bool,
}

impl Default for EvalOptions<'_> {
    fn default() -> Self {
        Self {
            type_vectors: None,
            cap: PairwiseCap::default(),
            top_edits: 10,
            cluster_details: true,
        }
    }
}

/// Datapoint groups and (std, obv) pairs over a point list. Degenerate
/// points are left out of both.
pub fn co_clustering_groups<P: LabeledPoint>(points: &[P]) -> (Vec<Vec<usize>>, Vec<(usize, usize)>) {
    let mut by_id: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        by_id.entry(p.datapoint_id()).or_default().push(i);
    }
    let mut groups = Vec::with_capacity(by_id.len());
    let mut pairs = Vec::new();
    for members in by_id.values() {
        let kept: Vec<usize> = members.iter().copied().filter(|&i| !points[i].degenerate()).collect();
        let find = |kind: VariantKind| kept.iter().copied().find(|&i| points[i].kind() == kind);
        if let (Some(s), Some(o)) = (find(VariantKind::Std), find(VariantKind::Obv)) {
            pairs.push((s, o));
        }
        groups.push(kept);
    }
    (groups, pairs)
}

/// Evaluate every clustering of one point set.
pub fn evaluate_set<P: LabeledPoint + Sync>(
    name: &str,
    kinds: Vec<VariantKind>,
    points: &[P],
    results: &[ClusteringResult],
    options: &EvalOptions<'_>,
) -> Result<SetReport, MetricsError> {
    let variant_labels: Vec<VariantKind> = points.iter().map(LabeledPoint::kind).collect();
    let dtags: Vec<&str> = points.iter().map(LabeledPoint::dtag).collect();
    let (groups, pairs) = co_clustering_groups(points);
    let has_pairs = !pairs.is_empty();
    let signatures: Vec<EditSignature> = if options.cluster_details {
        points
            .par_iter()
            .map(|p| edit_signature(p.standard(), p.form()))
            .collect()
    } else {
        Vec::new()
    };

    let mut per_k = Vec::with_capacity(results.len());
    for r in results {
        check_len("assignments", points.len(), r.assignments.len())?;
        let a = &r.assignments;
        let (overall, partial, so, ld) = if has_pairs {
            let correct: Vec<bool> = pairs.iter().map(|&(s, o)| a[s] == a[o]).collect();
            let so_strings: Vec<(&str, &str)> = pairs
                .iter()
                .map(|&(s, o)| (points[s].form(), points[o].form()))
                .collect();
            (
                Some(overall_accuracy(a, &groups)?),
                Some(overall_accuracy_partial(a, &groups)?),
                Some(so_accuracy(a, &pairs)?),
                Some(ld_profile(&so_strings, &correct)?),
            )
        } else {
            (None, None, None, None)
        };
        let clusters = if options.cluster_details {
            cluster_reports(r, points, &dtags, &signatures, options, name)?
        } else {
            Vec::new()
        };
        per_k.push(KReport {
            k: r.k,
            seed: r.seed,
            inertia: r.inertia,
            iterations: r.iterations,
            converged: r.converged,
            variant_purity: purity(a, &variant_labels)?,
            dtag_purity: purity(a, &dtags)?,
            overall_accuracy: overall,
            overall_accuracy_partial: partial,
            so_accuracy: so,
            ld_profile: ld,
            clusters,
        });
    }
    Ok(SetReport {
        name: name.to_string(),
        kinds,
        points: points.len(),
        per_k,
    })
}

fn cluster_reports<P: LabeledPoint + Sync>(
    result: &ClusteringResult,
    points: &[P],
    dtags: &[&str],
    signatures: &[EditSignature],
    options: &EvalOptions<'_>,
    set_name: &str,
) -> Result<Vec<ClusterReport>, MetricsError> {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); result.k];
    for (i, &c) in result.assignments.iter().enumerate() {
        members[c].push(i);
    }
    members
        .par_iter()
        .enumerate()
        .map(|(cluster, idx)| {
            let tokens: Vec<&str> = idx.iter().map(|&i| points[i].form()).collect();
            let label = format!("{set_name}/k{}/c{cluster}", result.k);
            let (used, sampled) = options.cap.apply(&tokens, &label);
            let coherency = options.type_vectors.map(|tv| semantic_coherency(&used, tv));
            let sigs: Vec<EditSignature> = idx.iter().map(|&i| signatures[i].clone()).collect();
            let mut ranked = edit_frequency_table(&sigs);
            ranked.truncate(options.top_edits);
            let top_edits = ranked
                .into_iter()
                .map(|(edit, count)| {
                    let example = idx
                        .iter()
                        .zip(&sigs)
                        .find(|(_, sig)| sig.labels().any(|l| l == edit))
                        .map(|(&i, _)| format!("{} -> {}", points[i].standard(), points[i].form()))
                        .unwrap_or_default();
                    EditCount { edit, count, example }
                })
                .collect();
            Ok(ClusterReport {
                cluster,
                size: idx.len(),
                dtag_proportions: dtag_proportions(&result.assignments, dtags, cluster)?,
                semantic_coherency: coherency.and_then(|c| c.score),
                coherency_in_vocab: coherency.map_or(0, |c| c.in_vocab),
                mphone_similarity: mphone_similarity(&used),
                sampled_tokens: sampled.then_some(used.len()),
                top_edits,
            })
        })
        .collect()
}
