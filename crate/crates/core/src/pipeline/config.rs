//! Run configuration and its validation.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{DataFormat, UnknownDtagPolicy};
use crate::embedding::{DiffDirection, LayerAggregation};
use crate::mutation::VariantKind;

/// One model run's embedding file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingInput {
    pub model_id: String,
    pub path: PathBuf,
}

impl FromStr for EmbeddingInput {
    type Err = String;

    /// Parse `model_id=path`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (model_id, path) = s
            .split_once('=')
            .ok_or_else(|| format!("expected model_id=path, got {s:?}"))?;
        if model_id.is_empty() || path.is_empty() {
            return Err(format!("expected model_id=path, got {s:?}"));
        }
        Ok(Self {
            model_id: model_id.to_string(),
            path: PathBuf::from(path),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    /// Inferred from the dataset extension when absent.
    pub dataset_format: Option<DataFormat>,
    /// JSON list of `{code, description}`; the built-in tags otherwise.
    pub dtag_inventory: Option<PathBuf>,
    pub unknown_dtag: UnknownDtagPolicy,
    pub case_fold: bool,
    /// OCR confusion table; the built-in one when absent.
    pub confusion_table: Option<PathBuf>,
    pub embeddings: Vec<EmbeddingInput>,
    /// Word vectors for semantic coherency; the measure is skipped without them.
    pub type_vectors: Option<PathBuf>,
    pub char_limit: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub seed: u64,
    pub ocr_mutations: usize,
    pub layer_agg: LayerAggregation,
    pub diff_direction: DiffDirection,
    /// Kinds dropped from the filtered relative set.
    pub exclude_kinds: BTreeSet<VariantKind>,
    /// Cluster unit-length vectors instead of raw ones.
    pub normalize: bool,
    /// Dtag purity over every variant kind instead of observed tokens only.
    pub dtag_all_kinds: bool,
    pub restarts: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub pairwise_cap: usize,
    pub top_edits: usize,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::new(),
            dataset_format: None,
            dtag_inventory: None,
            unknown_dtag: UnknownDtagPolicy::default(),
            case_fold: false,
            confusion_table: None,
            embeddings: Vec::new(),
            type_vectors: None,
            char_limit: 512,
            k_min: 1,
            k_max: 20,
            seed: 42,
            ocr_mutations: 1,
            layer_agg: LayerAggregation::default(),
            diff_direction: DiffDirection::default(),
            exclude_kinds: BTreeSet::from([VariantKind::Rev, VariantKind::Swp]),
            normalize: false,
            dtag_all_kinds: false,
            restarts: 5,
            tol: 1e-6,
            max_iter: 300,
            pairwise_cap: 2000,
            top_edits: 10,
            out: PathBuf::from("run"),
        }
    }
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Every problem found; empty when the config is usable.
    /// `need_embeddings` is set for stages from set building on.
    pub fn problems(&self, need_embeddings: bool) -> Vec<String> {
        let mut out = Vec::new();
        let require_file = |out: &mut Vec<String>, what: &str, path: &PathBuf| {
            if !path.is_file() {
                out.push(format!("{what} {} does not exist", path.display()));
            }
        };
        if self.dataset.as_os_str().is_empty() {
            out.push("no dataset given".to_string());
        } else {
            require_file(&mut out, "dataset", &self.dataset);
        }
        if let Some(p) = &self.dtag_inventory {
            require_file(&mut out, "dtag inventory", p);
        }
        if let Some(p) = &self.confusion_table {
            require_file(&mut out, "confusion table", p);
        }
        if let Some(p) = &self.type_vectors {
            require_file(&mut out, "type vector table", p);
        }
        for e in &self.embeddings {
            require_file(&mut out, &format!("embedding file for {}", e.model_id), &e.path);
        }
        if need_embeddings && self.embeddings.is_empty() {
            out.push("no embedding files given".to_string());
        }
        let mut seen = BTreeSet::new();
        for e in &self.embeddings {
            if !is_safe_model_id(&e.model_id) {
                out.push(format!(
                    "model id {:?} must use only letters, digits, '.', '_' and '-'",
                    e.model_id
                ));
            }
            if !seen.insert(e.model_id.as_str()) {
                out.push(format!("model id {} given twice", e.model_id));
            }
        }
        if self.dataset_format.is_none()
            && !self.dataset.as_os_str().is_empty()
            && DataFormat::from_path(&self.dataset).is_none()
        {
            out.push(format!(
                "cannot infer format of {}; use .jsonl or .csv or set dataset_format",
                self.dataset.display()
            ));
        }
        if self.char_limit == 0 {
            out.push("char limit must be positive".to_string());
        }
        if self.k_min == 0 || self.k_min > self.k_max {
            out.push(format!("k range {}..={} is empty or starts at 0", self.k_min, self.k_max));
        }
        if self.ocr_mutations == 0 {
            out.push("ocr mutations must be at least 1".to_string());
        }
        if self.exclude_kinds.contains(&VariantKind::Std) {
            out.push("std cannot be excluded from relative sets".to_string());
        }
        if self.restarts == 0 {
            out.push("restarts must be at least 1".to_string());
        }
        if self.max_iter == 0 {
            out.push("max iterations must be at least 1".to_string());
        }
        if !(self.tol.is_finite() && self.tol >= 0.0) {
            out.push(format!("tolerance {} must be finite and non-negative", self.tol));
        }
        if self.pairwise_cap < 2 {
            out.push("pairwise cap must be at least 2".to_string());
        }
        if self.out.as_os_str().is_empty() {
            out.push("no output directory given".to_string());
        }
        out
    }
}

fn is_safe_model_id(id: &str) -> bool {
    !id.is_empty()
        && id != "."
        && id != ".."
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
}

/// Parse a comma-separated kind list such as `rev,swp`. Empty means none.
pub fn parse_kind_list(s: &str) -> Result<BTreeSet<VariantKind>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<VariantKind>().map_err(|e| e.to_string()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!(c.char_limit, 512);
        assert_eq!((c.k_min, c.k_max), (1, 20));
        assert_eq!(c.exclude_kinds, BTreeSet::from([VariantKind::Rev, VariantKind::Swp]));
        let back = RunConfig::from_json_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(RunConfig::from_json_str("{}").unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json_str(r#"{"k_mx": 3}"#).is_err());
    }

    #[test]
    fn embedding_arg() {
        let e: EmbeddingInput = "canine-c=/tmp/x.jsonl".parse().unwrap();
        assert_eq!(e.model_id, "canine-c");
        assert_eq!(e.path, PathBuf::from("/tmp/x.jsonl"));
        assert!("nopath".parse::<EmbeddingInput>().is_err());
        assert!("=x".parse::<EmbeddingInput>().is_err());
    }

    #[test]
    fn kind_lists() {
        assert_eq!(
            parse_kind_list("rev, swp").unwrap(),
            BTreeSet::from([VariantKind::Rev, VariantKind::Swp])
        );
        assert!(parse_kind_list("").unwrap().is_empty());
        assert!(parse_kind_list("rev,bogus").is_err());
    }

    #[test]
    fn problems_are_collected() {
        let c = RunConfig {
            dataset: PathBuf::from("/nonexistent/data.jsonl"),
            k_min: 5,
            k_max: 2,
            embeddings: vec![
                EmbeddingInput {
                    model_id: "a/b".into(),
                    path: PathBuf::from("/nonexistent/e.jsonl"),
                },
            ],
            ..RunConfig::default()
        };
        let p = c.problems(true);
        assert!(p.iter().any(|m| m.contains("dataset")));
        assert!(p.iter().any(|m| m.contains("k range")));
        assert!(p.iter().any(|m| m.contains("model id")));
        assert!(p.iter().any(|m| m.contains("embedding file")));
        assert!(RunConfig::default().problems(false).iter().any(|m| m.contains("no dataset")));
    }
}
