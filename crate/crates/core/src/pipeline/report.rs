//! The metrics file and its markdown tables.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::embedding::{DiffDirection, LayerAggregation};
use crate::metrics::{ClusterReport, PairwiseCap, SetReport};
use crate::mutation::VariantKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub seed: u64,
    pub k_min: usize,
    pub k_max: usize,
    pub layer_aggregation: LayerAggregation,
    pub diff_direction: DiffDirection,
    pub normalize: bool,
    pub excluded_kinds: BTreeSet<VariantKind>,
    pub pairwise_cap: PairwiseCap,
    pub semantic_coherency: bool,
    pub runs: Vec<ModelRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRun {
    pub model_id: String,
    pub datapoints: usize,
    pub excluded_datapoints: usize,
    pub sets: Vec<SetReport>,
}

impl ModelRun {
    pub fn set(&self, name: &str) -> Option<&SetReport> {
        self.sets.iter().find(|s| s.name == name)
    }
}

fn two(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"))
}

fn dtag_cell(c: &ClusterReport, limit: usize) -> String {
    let mut tags: Vec<(&String, &f64)> = c.dtag_proportions.iter().collect();
    tags.sort_by(|a, b| b.1.total_cmp(a.1).then_with(|| a.0.cmp(b.0)));
    tags.iter()
        .take(limit)
        .map(|(t, p)| format!("{t} {p:.2}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn escape(cell: &str) -> String {
    cell.replace('|', "\\|")
}

/// Per-cluster size, Dtag shares, Mphone and coherency, one section per k.
pub fn cluster_table(model_id: &str, set: &SetReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {model_id}: {} set, per-cluster summary\n", set.name);
    for k in &set.per_k {
        let _ = writeln!(out, "## k = {}\n", k.k);
        let _ = writeln!(out, "| cluster | size | dtag proportions | mphone | coherency |");
        let _ = writeln!(out, "|---|---|---|---|---|");
        for c in &k.clusters {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} |",
                c.cluster,
                c.size,
                dtag_cell(c, 4),
                two(c.mphone_similarity),
                two(c.semantic_coherency)
            );
        }
        out.push('\n');
    }
    out
}

/// Most frequent merged edits per cluster with one example each.
pub fn edit_table(model_id: &str, set: &SetReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {model_id}: {} set, characteristic edits\n", set.name);
    for k in &set.per_k {
        let _ = writeln!(out, "## k = {}\n", k.k);
        let _ = writeln!(out, "| cluster | size | edit | count | example |");
        let _ = writeln!(out, "|---|---|---|---|---|");
        for c in &k.clusters {
            for e in &c.top_edits {
                let _ = writeln!(
                    out,
                    "| {} | {} | `{}` | {} | {} |",
                    c.cluster,
                    c.size,
                    escape(&e.edit),
                    e.count,
                    escape(&e.example)
                );
            }
        }
        out.push('\n');
    }
    out
}
