//! Stage orchestration: validate → mutate → build-sets → cluster → evaluate
//! → report, with per-stage caching keyed by input hashes.
//!
//! Every stage reads its inputs from the run directory and writes its
//! outputs there. A stage is skipped when its stamp carries the same input
//! key and its outputs still hash to the recorded values.

pub mod config;
pub mod figures;
pub mod manifest;
pub mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::clustering::{inertia_increases, is_non_increasing, kmeans_sweep, read_sweep, sweep_seed, KMeansConfig, PointMatrix};
use crate::corpus::{load_dataset, tag_histogram, truncate_by_char_limit, DataPoint, DtagInventory, LoadOptions};
use crate::embedding::{
    build_absolute_set, build_relative_set, read_embedding_file, read_points, write_points, AbsolutePoint,
    DatapointLabels, EmbeddingError, LabeledPoint, RelativePoint, TypeVectors,
};
use crate::metrics::{evaluate_set, EvalOptions, PairwiseCap, SetReport};
use crate::mutation::{build_variant_set, read_variants, write_variants, ConfusionTable, MutationConfig, VariantKind};

pub use config::{parse_kind_list, EmbeddingInput, RunConfig};
use manifest::{fresh_stamp, rel_string, sha256_file, stage_key, write_stamp, InputRecord, Manifest, RunLock, Stamp};
use report::{MetricsFile, ModelRun};

pub const ABSOLUTE: &str = "absolute";
pub const RELATIVE: &str = "relative";
pub const RELATIVE_FILTERED: &str = "relative-filtered";
pub const ABSOLUTE_DTAG: &str = "absolute-dtag";
pub const RELATIVE_OBV: &str = "relative-obv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Validate,
    Mutate,
    BuildSets,
    Cluster,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Validate,
        Stage::Mutate,
        Stage::BuildSets,
        Stage::Cluster,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Validate => "validate",
            Stage::Mutate => "mutate",
            Stage::BuildSets => "build-sets",
            Stage::Cluster => "cluster",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("run directory {} is in use by another run (delete its .lock file if stale)", .0.display())]
    Locked(PathBuf),
    #[error("stage {stage} failed: {message}{}", ids_suffix(.ids))]
    Stage {
        stage: Stage,
        message: String,
        ids: Vec<String>,
    },
}

fn ids_suffix(ids: &[String]) -> String {
    if ids.is_empty() {
        String::new()
    } else {
        format!(" (records: {})", ids.join(", "))
    }
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Validation(_) => 2,
            PipelineError::Locked(_) | PipelineError::Stage { .. } => 3,
        }
    }

    fn stage(stage: Stage, message: impl fmt::Display) -> Self {
        PipelineError::Stage {
            stage,
            message: message.to_string(),
            ids: Vec::new(),
        }
    }

    fn stage_with(stage: Stage, message: impl fmt::Display, ids: Vec<String>) -> Self {
        PipelineError::Stage {
            stage,
            message: message.to_string(),
            ids,
        }
    }
}

fn embedding_error(stage: Stage, e: EmbeddingError) -> PipelineError {
    let ids = match &e {
        EmbeddingError::Shape { id, .. }
        | EmbeddingError::DimensionDrift { id, .. }
        | EmbeddingError::NonFinite { id, .. }
        | EmbeddingError::LayerCount { id, .. }
        | EmbeddingError::Duplicate { id, .. } => vec![id.clone()],
        _ => Vec::new(),
    };
    PipelineError::stage_with(stage, e, ids)
}

/// Counts from the validate stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub loaded: usize,
    pub rejected: usize,
    pub char_limit: usize,
    pub after_char_limit: usize,
    pub tags_loaded: BTreeMap<String, usize>,
    pub tags_after_char_limit: BTreeMap<String, usize>,
}

/// One analysis set: which points it clusters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SetSpec {
    pub name: &'static str,
    pub relative: bool,
    pub kinds: BTreeSet<VariantKind>,
}

/// The sets clustered for every model run.
pub fn set_specs(config: &RunConfig) -> Vec<SetSpec> {
    let non_std: BTreeSet<VariantKind> = VariantKind::NON_STD.into_iter().collect();
    let obv = BTreeSet::from([VariantKind::Obv]);
    let mut specs = vec![
        SetSpec {
            name: ABSOLUTE,
            relative: false,
            kinds: VariantKind::ALL.into_iter().collect(),
        },
        SetSpec {
            name: RELATIVE,
            relative: true,
            kinds: non_std.clone(),
        },
    ];
    let filtered: BTreeSet<VariantKind> = non_std.difference(&config.exclude_kinds).copied().collect();
    if !filtered.is_empty() && filtered != non_std {
        specs.push(SetSpec {
            name: RELATIVE_FILTERED,
            relative: true,
            kinds: filtered,
        });
    }
    specs.push(SetSpec {
        name: ABSOLUTE_DTAG,
        relative: false,
        kinds: if config.dtag_all_kinds {
            VariantKind::ALL.into_iter().collect()
        } else {
            obv.clone()
        },
    });
    specs.push(SetSpec {
        name: RELATIVE_OBV,
        relative: true,
        kinds: obv,
    });
    specs
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSummary {
    pub dir: PathBuf,
    /// Stage ids that ran.
    pub executed: Vec<String>,
    /// Stage ids served from cache.
    pub cached: Vec<String>,
    pub corpus: Option<CorpusSummary>,
}

/// Run every stage.
pub fn run_pipeline(config: &RunConfig) -> Result<RunSummary, PipelineError> {
    run_until(config, Stage::Report)
}

/// Run the stages up to and including `last`. Upstream stages are reused
/// from cache when their inputs are unchanged.
pub fn run_until(config: &RunConfig, last: Stage) -> Result<RunSummary, PipelineError> {
    let problems = config.problems(last >= Stage::BuildSets);
    if !problems.is_empty() {
        return Err(PipelineError::Config(problems));
    }
    let dir = config.out.clone();
    let lock = match RunLock::acquire(&dir) {
        Ok(lock) => lock,
        Err(e) if e.kind() == io::ErrorKind::AlreadyExists => return Err(PipelineError::Locked(dir)),
        Err(e) => return Err(PipelineError::stage(Stage::Validate, format!("cannot create {}: {e}", dir.display()))),
    };
    let mut run = Runner::new(config, dir)?;
    for stage in Stage::ALL.into_iter().filter(|&s| s <= last) {
        match stage {
            Stage::Validate => run.validate()?,
            Stage::Mutate => run.mutate()?,
            Stage::BuildSets => run.build_sets()?,
            Stage::Cluster => run.cluster()?,
            Stage::Evaluate => run.evaluate()?,
            Stage::Report => run.report()?,
        }
    }
    run.write_manifest()?;
    drop(lock);
    Ok(RunSummary {
        dir: run.dir,
        executed: run.executed,
        cached: run.cached,
        corpus: run.corpus,
    })
}

struct Runner<'a> {
    config: &'a RunConfig,
    dir: PathBuf,
    inputs: BTreeMap<String, InputRecord>,
    stamps: BTreeMap<String, Stamp>,
    seeds: BTreeMap<String, u64>,
    executed: Vec<String>,
    cached: Vec<String>,
    corpus: Option<CorpusSummary>,
}

const DATAPOINTS: &str = "corpus/datapoints.jsonl";
const REJECTIONS: &str = "corpus/rejections.jsonl";
const CORPUS_SUMMARY: &str = "corpus/summary.json";
const VARIANTS: &str = "variants.jsonl";
const METRICS: &str = "metrics.json";
const CURVES: &str = "curves.csv";
const MANIFEST: &str = "manifest.json";

fn sets_dir(model: &str) -> PathBuf {
    Path::new("sets").join(model)
}

fn sweep_path(model: &str, set: &str) -> PathBuf {
    Path::new("clusters").join(model).join(format!("{set}.jsonl"))
}

impl<'a> Runner<'a> {
    fn new(config: &'a RunConfig, dir: PathBuf) -> Result<Self, PipelineError> {
        let mut run = Self {
            config,
            dir,
            inputs: BTreeMap::new(),
            stamps: BTreeMap::new(),
            seeds: BTreeMap::new(),
            executed: Vec::new(),
            cached: Vec::new(),
            corpus: None,
        };
        run.hash_input("dataset", &config.dataset)?;
        if let Some(p) = &config.dtag_inventory {
            run.hash_input("dtag_inventory", p)?;
        }
        if let Some(p) = &config.confusion_table {
            run.hash_input("confusion_table", p)?;
        }
        if let Some(p) = &config.type_vectors {
            run.hash_input("type_vectors", p)?;
        }
        for e in &config.embeddings {
            run.hash_input(&format!("embeddings:{}", e.model_id), &e.path)?;
        }
        run.seeds.insert("master".into(), config.seed);
        Ok(run)
    }

    fn hash_input(&mut self, role: &str, path: &Path) -> Result<(), PipelineError> {
        let sha256 = sha256_file(path).map_err(|e| PipelineError::Validation(format!("cannot read {}: {e}", path.display())))?;
        self.inputs.insert(
            role.to_string(),
            InputRecord {
                role: role.to_string(),
                path: path.display().to_string(),
                sha256,
            },
        );
        Ok(())
    }

    fn input_hash(&self, role: &str) -> Option<&str> {
        self.inputs.get(role).map(|r| r.sha256.as_str())
    }

    fn output_hash(&self, stamp_id: &str, rel: &Path) -> String {
        self.stamps
            .get(stamp_id)
            .and_then(|s| s.outputs.get(&rel_string(rel)))
            .cloned()
            .unwrap_or_default()
    }

    fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.dir.join(rel)
    }

    /// Reuse the stamp for `id` when fresh, otherwise run `body` and stamp its outputs.
    fn stage<F>(&mut self, stage: Stage, id: &str, key: String, body: F) -> Result<(), PipelineError>
    where
        F: FnOnce(&Self) -> Result<Vec<PathBuf>, PipelineError>,
    {
        if let Some(stamp) = fresh_stamp(&self.dir, id, &key) {
            log::info!("{id}: inputs unchanged, reusing outputs");
            self.stamps.insert(id.to_string(), stamp);
            self.cached.push(id.to_string());
            return Ok(());
        }
        log::info!("{id}: running");
        let started = std::time::Instant::now();
        let outputs = body(self)?;
        log::info!("{id}: done in {:.2}s", started.elapsed().as_secs_f64());
        let stamp = write_stamp(&self.dir, id, &key, &outputs)
            .map_err(|e| PipelineError::stage(stage, format!("cannot stamp outputs: {e}")))?;
        self.stamps.insert(id.to_string(), stamp);
        self.executed.push(id.to_string());
        Ok(())
    }

    fn validate(&mut self) -> Result<(), PipelineError> {
        let c = self.config;
        let key = stage_key(
            "validate",
            &json!({
                "dataset": self.input_hash("dataset"),
                "format": c.dataset_format,
                "inventory": self.input_hash("dtag_inventory"),
                "unknown_dtag": c.unknown_dtag,
                "case_fold": c.case_fold,
                "char_limit": c.char_limit,
            }),
        );
        self.stage(Stage::Validate, "validate", key, |run| {
            let inventory = match &c.dtag_inventory {
                Some(p) => DtagInventory::from_json_file(p).map_err(|e| PipelineError::Validation(e.to_string()))?,
                None => DtagInventory::with_known_tags(),
            };
            let options = LoadOptions {
                unknown_dtag: c.unknown_dtag,
                case_fold: c.case_fold,
            };
            let loaded = load_dataset(&c.dataset, c.dataset_format, &options, inventory)
                .map_err(|e| PipelineError::Validation(e.to_string()))?;
            for r in &loaded.rejections {
                log::warn!("rejected record {}: {}", r.id, r.reason);
            }
            let kept = truncate_by_char_limit(&loaded.datapoints, c.char_limit);
            if kept.is_empty() {
                return Err(PipelineError::Validation(format!(
                    "no datapoints left ({} loaded, {} rejected, none within {} characters)",
                    loaded.datapoints.len(),
                    loaded.rejections.len(),
                    c.char_limit
                )));
            }
            let summary = CorpusSummary {
                loaded: loaded.datapoints.len(),
                rejected: loaded.rejections.len(),
                char_limit: c.char_limit,
                after_char_limit: kept.len(),
                tags_loaded: tag_histogram(&loaded.datapoints),
                tags_after_char_limit: tag_histogram(&kept),
            };
            let fail = |e: &dyn fmt::Display| PipelineError::stage(Stage::Validate, e);
            write_with(&run.path(DATAPOINTS), |w| crate::corpus::write_jsonl(&kept, w).map_err(|e| fail(&e)))?;
            write_with(&run.path(REJECTIONS), |w| {
                crate::corpus::write_rejections(&loaded.rejections, w).map_err(|e| fail(&e))
            })?;
            write_json(&run.path(CORPUS_SUMMARY), &summary).map_err(|e| fail(&e))?;
            Ok(vec![DATAPOINTS.into(), REJECTIONS.into(), CORPUS_SUMMARY.into()])
        })?;
        let summary: CorpusSummary = read_json(&self.path(CORPUS_SUMMARY)).map_err(|e| PipelineError::stage(Stage::Validate, e))?;
        self.corpus = Some(summary);
        Ok(())
    }

    fn mutate(&mut self) -> Result<(), PipelineError> {
        let c = self.config;
        let key = stage_key(
            "mutate",
            &json!({
                "datapoints": self.output_hash("validate", Path::new(DATAPOINTS)),
                "confusion_table": self.input_hash("confusion_table").unwrap_or("builtin"),
                "seed": c.seed,
                "ocr_mutations": c.ocr_mutations,
            }),
        );
        self.stage(Stage::Mutate, "mutate", key, |run| {
            let fail = |e: &dyn fmt::Display| PipelineError::stage(Stage::Mutate, e);
            let table = match &c.confusion_table {
                Some(p) => ConfusionTable::from_json_file(p).map_err(|e| PipelineError::Validation(e.to_string()))?,
                None => ConfusionTable::builtin(),
            };
            let datapoints: Vec<DataPoint> = read_jsonl(&run.path(DATAPOINTS)).map_err(|e| fail(&e))?;
            let mutation = MutationConfig {
                ocr_mutations: c.ocr_mutations,
                ..MutationConfig::default()
            };
            let sets = datapoints
                .par_iter()
                .map(|dp| {
                    build_variant_set(dp, &table, &mutation, c.seed)
                        .map_err(|e| PipelineError::stage_with(Stage::Mutate, e, vec![dp.id.clone()]))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let fallbacks = sets.iter().filter(|s| !s.fallbacks.is_empty()).count();
            let degenerate = sets.iter().filter(|s| !s.degenerate.is_empty()).count();
            if fallbacks + degenerate > 0 {
                log::info!("{fallbacks} datapoints used a fallback mutation; {degenerate} have a degenerate variant");
            }
            write_with(&run.path(VARIANTS), |w| write_variants(&sets, w).map_err(|e| fail(&e)))?;
            Ok(vec![VARIANTS.into()])
        })?;
        self.seeds.insert("mutation".into(), c.seed);
        Ok(())
    }

    fn build_sets(&mut self) -> Result<(), PipelineError> {
        let c = self.config;
        for input in &c.embeddings {
            let model = input.model_id.as_str();
            let id = format!("build-sets.{model}");
            let key = stage_key(
                "build-sets",
                &json!({
                    "datapoints": self.output_hash("validate", Path::new(DATAPOINTS)),
                    "variants": self.output_hash("mutate", Path::new(VARIANTS)),
                    "embeddings": self.input_hash(&format!("embeddings:{model}")),
                    "layer_agg": c.layer_agg,
                    "diff_direction": c.diff_direction,
                }),
            );
            self.stage(Stage::BuildSets, &id, key, |run| {
                let fail = |e: &dyn fmt::Display| PipelineError::stage(Stage::BuildSets, e);
                let datapoints: Vec<DataPoint> = read_jsonl(&run.path(DATAPOINTS)).map_err(|e| fail(&e))?;
                let file = File::open(run.path(VARIANTS)).map_err(|e| fail(&e))?;
                let variants = read_variants(BufReader::new(file)).map_err(|e| fail(&e))?;
                let by_id: BTreeMap<&str, _> = variants.iter().map(|v| (v.datapoint_id.as_str(), v)).collect();
                let mut labels = BTreeMap::new();
                for dp in &datapoints {
                    let Some(v) = by_id.get(dp.id.as_str()) else {
                        return Err(PipelineError::stage_with(Stage::BuildSets, "datapoint has no variants", vec![dp.id.clone()]));
                    };
                    labels.insert(dp.id.clone(), DatapointLabels::new(dp, v));
                }
                let known: BTreeSet<String> = labels.keys().cloned().collect();
                let file = read_embedding_file(&input.path, Some(&known)).map_err(|e| embedding_error(Stage::BuildSets, e))?;
                let layers = file.header.layer_count().map_err(|e| embedding_error(Stage::BuildSets, e))?;
                let absolute = build_absolute_set(&file.records, &labels, c.layer_agg, layers)
                    .map_err(|e| embedding_error(Stage::BuildSets, e))?;
                if absolute.points.is_empty() {
                    return Err(fail(&format!("no datapoint of {model} has all six variant embeddings")));
                }
                let relative = build_relative_set(&absolute.points, c.diff_direction);
                let dir = sets_dir(model);
                let (abs_rel, rel_rel, ex_rel) = (dir.join("absolute.jsonl"), dir.join("relative.jsonl"), dir.join("exclusions.jsonl"));
                write_with(&run.path(&abs_rel), |w| write_points(&absolute.points, w).map_err(|e| fail(&e)))?;
                write_with(&run.path(&rel_rel), |w| write_points(&relative, w).map_err(|e| fail(&e)))?;
                write_with(&run.path(&ex_rel), |w| write_lines(&absolute.excluded, w).map_err(|e| fail(&e)))?;
                Ok(vec![abs_rel, rel_rel, ex_rel])
            })?;
        }
        Ok(())
    }

    fn load_points(&self, stage: Stage, model: &str) -> Result<(Vec<AbsolutePoint>, Vec<RelativePoint>), PipelineError> {
        let dir = sets_dir(model);
        let fail = |e: &dyn fmt::Display| PipelineError::stage(stage, e);
        let open = |name: &str| File::open(self.path(dir.join(name))).map(BufReader::new).map_err(|e| fail(&e));
        let absolute = read_points(open("absolute.jsonl")?).map_err(|e| fail(&e))?;
        let relative = read_points(open("relative.jsonl")?).map_err(|e| fail(&e))?;
        Ok((absolute, relative))
    }

    fn cluster(&mut self) -> Result<(), PipelineError> {
        let c = self.config;
        let specs = set_specs(c);
        for input in &c.embeddings {
            let model = input.model_id.as_str();
            let id = format!("cluster.{model}");
            let build_id = format!("build-sets.{model}");
            let key = stage_key(
                "cluster",
                &json!({
                    "absolute": self.output_hash(&build_id, &sets_dir(model).join("absolute.jsonl")),
                    "relative": self.output_hash(&build_id, &sets_dir(model).join("relative.jsonl")),
                    "k": [c.k_min, c.k_max],
                    "seed": c.seed,
                    "restarts": c.restarts,
                    "tol": c.tol,
                    "max_iter": c.max_iter,
                    "normalize": c.normalize,
                    "sets": specs.iter().map(|s| (s.name, &s.kinds)).collect::<Vec<_>>(),
                }),
            );
            self.stage(Stage::Cluster, &id, key, |run| {
                let fail = |e: &dyn fmt::Display| PipelineError::stage(Stage::Cluster, e);
                let (absolute, relative) = run.load_points(Stage::Cluster, model)?;
                let base = KMeansConfig {
                    tol: c.tol,
                    max_iter: c.max_iter,
                    restarts: c.restarts,
                    ..KMeansConfig::new(1, c.seed)
                };
                let mut outputs = Vec::new();
                for spec in &specs {
                    let vectors: Vec<&[f32]> = if spec.relative {
                        select_vectors(&relative, &spec.kinds)
                    } else {
                        select_vectors(&absolute, &spec.kinds)
                    };
                    if vectors.len() < c.k_max {
                        return Err(fail(&format!(
                            "{model} {} set has {} points, fewer than k_max = {}",
                            spec.name,
                            vectors.len(),
                            c.k_max
                        )));
                    }
                    let mut matrix = PointMatrix::from_rows(&vectors).map_err(|e| fail(&e))?;
                    if c.normalize {
                        matrix = matrix.normalized();
                    }
                    let results = kmeans_sweep(&matrix, c.k_min..=c.k_max, c.seed, &base).map_err(|e| fail(&e))?;
                    for r in &results {
                        if !is_non_increasing(&r.inertia_trace) {
                            log::warn!("{model} {} k={}: inertia trace increased", spec.name, r.k);
                        }
                    }
                    let ups = inertia_increases(&results);
                    if ups > 0 {
                        log::info!("{model} {}: final inertia rose with k {ups} times", spec.name);
                    }
                    let rel = sweep_path(model, spec.name);
                    write_with(&run.path(&rel), |w| crate::clustering::write_sweep(&results, w).map_err(|e| fail(&e)))?;
                    outputs.push(rel);
                }
                Ok(outputs)
            })?;
        }
        for k in c.k_min..=c.k_max {
            self.seeds.insert(format!("kmeans.k{k:02}"), sweep_seed(c.seed, k));
        }
        Ok(())
    }

    fn evaluate(&mut self) -> Result<(), PipelineError> {
        let c = self.config;
        let specs = set_specs(c);
        let upstream: Vec<_> = c
            .embeddings
            .iter()
            .map(|e| {
                let m = e.model_id.as_str();
                let build_id = format!("build-sets.{m}");
                let cluster_id = format!("cluster.{m}");
                json!({
                    "model": m,
                    "absolute": self.output_hash(&build_id, &sets_dir(m).join("absolute.jsonl")),
                    "relative": self.output_hash(&build_id, &sets_dir(m).join("relative.jsonl")),
                    "exclusions": self.output_hash(&build_id, &sets_dir(m).join("exclusions.jsonl")),
                    "sweeps": specs.iter().map(|s| self.output_hash(&cluster_id, &sweep_path(m, s.name))).collect::<Vec<_>>(),
                })
            })
            .collect();
        let key = stage_key(
            "evaluate",
            &json!({
                "upstream": upstream,
                "type_vectors": self.input_hash("type_vectors"),
                "pairwise_cap": c.pairwise_cap,
                "top_edits": c.top_edits,
                "seed": c.seed,
                "k": [c.k_min, c.k_max],
                "layer_agg": c.layer_agg,
                "diff_direction": c.diff_direction,
                "normalize": c.normalize,
                "exclude_kinds": c.exclude_kinds,
            }),
        );
        self.stage(Stage::Evaluate, "evaluate", key, |run| {
            let fail = |e: &dyn fmt::Display| PipelineError::stage(Stage::Evaluate, e);
            let type_vectors = match &c.type_vectors {
                Some(p) => Some(TypeVectors::load(p).map_err(|e| fail(&e))?),
                None => None,
            };
            let cap = PairwiseCap {
                max_tokens: c.pairwise_cap,
                seed: c.seed,
            };
            let options = EvalOptions {
                type_vectors: type_vectors.as_ref(),
                cap,
                top_edits: c.top_edits,
                cluster_details: true,
            };
            let mut runs = Vec::new();
            for input in &c.embeddings {
                let model = input.model_id.as_str();
                let (absolute, relative) = run.load_points(Stage::Evaluate, model)?;
                let excluded: Vec<serde_json::Value> =
                    read_jsonl(&run.path(sets_dir(model).join("exclusions.jsonl"))).map_err(|e| fail(&e))?;
                let mut sets = Vec::new();
                for spec in &specs {
                    let file = File::open(run.path(sweep_path(model, spec.name))).map_err(|e| fail(&e))?;
                    let results: Vec<_> = read_sweep(BufReader::new(file))
                        .map_err(|e| fail(&e))?
                        .into_iter()
                        .map(|e| e.into_result())
                        .collect();
                    let report = if spec.relative {
                        evaluate_spec(spec, &relative, &results, &options)
                    } else {
                        evaluate_spec(spec, &absolute, &results, &options)
                    }
                    .map_err(|e| fail(&format!("{model} {}: {e}", spec.name)))?;
                    sets.push(report);
                }
                runs.push(ModelRun {
                    model_id: model.to_string(),
                    datapoints: absolute.len() / VariantKind::ALL.len(),
                    excluded_datapoints: excluded.len(),
                    sets,
                });
            }
            let metrics = MetricsFile {
                seed: c.seed,
                k_min: c.k_min,
                k_max: c.k_max,
                layer_aggregation: c.layer_agg,
                diff_direction: c.diff_direction,
                normalize: c.normalize,
                excluded_kinds: c.exclude_kinds.clone(),
                pairwise_cap: cap,
                semantic_coherency: type_vectors.is_some(),
                runs,
            };
            write_json(&run.path(METRICS), &metrics).map_err(|e| fail(&e))?;
            Ok(vec![METRICS.into()])
        })?;
        self.seeds.insert("pairwise-sample".into(), c.seed);
        Ok(())
    }

    fn report(&mut self) -> Result<(), PipelineError> {
        let key = stage_key("report", &json!({ "metrics": self.output_hash("evaluate", Path::new(METRICS)) }));
        self.stage(Stage::Report, "report", key, |run| {
            let fail = |e: &dyn fmt::Display| PipelineError::stage(Stage::Report, e);
            let metrics: MetricsFile = read_json(&run.path(METRICS)).map_err(|e| fail(&e))?;
            let mut outputs: Vec<PathBuf> = vec![CURVES.into()];
            write_with(&run.path(CURVES), |w| figures::write_curves_csv(&metrics, w).map_err(|e| fail(&e)))?;

            let fig_dir = run.path("figures");
            fs::create_dir_all(&fig_dir).map_err(|e| fail(&e))?;
            for plot in figures::PLOTS {
                let rel = Path::new("figures").join(plot.file);
                match figures::draw_plot(&metrics, plot, &run.path(&rel)) {
                    Ok(()) => outputs.push(rel),
                    Err(e) => {
                        log::warn!("could not draw {}: {e}; curves remain in {CURVES}", plot.file);
                        let _ = fs::remove_file(run.path(&rel));
                    }
                }
            }

            for model_run in &metrics.runs {
                for set in &model_run.sets {
                    let dir = Path::new("tables").join(&model_run.model_id);
                    let clusters = dir.join(format!("{}_clusters.md", set.name));
                    let edits = dir.join(format!("{}_edits.md", set.name));
                    write_with(&run.path(&clusters), |w| {
                        w.write_all(report::cluster_table(&model_run.model_id, set).as_bytes())
                            .map_err(|e| fail(&e))
                    })?;
                    write_with(&run.path(&edits), |w| {
                        w.write_all(report::edit_table(&model_run.model_id, set).as_bytes())
                            .map_err(|e| fail(&e))
                    })?;
                    outputs.push(clusters);
                    outputs.push(edits);
                }
            }
            Ok(outputs)
        })
    }

    fn write_manifest(&self) -> Result<(), PipelineError> {
        let mut outputs = BTreeMap::new();
        let mut stages = BTreeMap::new();
        for (id, stamp) in &self.stamps {
            outputs.extend(stamp.outputs.clone());
            stages.insert(id.clone(), stamp.key.clone());
        }
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::to_value(self.config).expect("config serializes"),
            seeds: self.seeds.clone(),
            inputs: self.inputs.values().cloned().collect(),
            outputs,
            stages,
        };
        let last = self.executed.last().or(self.cached.last()).map_or("validate", String::as_str);
        let stage = Stage::ALL
            .into_iter()
            .find(|s| last.starts_with(s.name()))
            .unwrap_or(Stage::Validate);
        write_json(&self.path(MANIFEST), &manifest).map_err(|e| PipelineError::stage(stage, e))
    }
}

fn select_vectors<'p, P: LabeledPoint>(points: &'p [P], kinds: &BTreeSet<VariantKind>) -> Vec<&'p [f32]> {
    points
        .iter()
        .filter(|p| kinds.contains(&p.kind()))
        .map(LabeledPoint::vector)
        .collect()
}

fn evaluate_spec<P: LabeledPoint + Clone + Sync>(
    spec: &SetSpec,
    points: &[P],
    results: &[crate::clustering::ClusteringResult],
    options: &EvalOptions<'_>,
) -> Result<SetReport, crate::metrics::MetricsError> {
    let selected: Vec<P> = points.iter().filter(|p| spec.kinds.contains(&p.kind())).cloned().collect();
    evaluate_set(spec.name, spec.kinds.iter().copied().collect(), &selected, results, options)
}

fn write_with<F>(path: &Path, body: F) -> Result<(), PipelineError>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<(), PipelineError>,
{
    let io_fail = |e: io::Error| PipelineError::Validation(format!("cannot write {}: {e}", path.display()));
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_fail)?;
    }
    let mut w = BufWriter::new(File::create(path).map_err(io_fail)?);
    body(&mut w)?;
    w.flush().map_err(io_fail)
}

fn write_lines<T: Serialize, W: Write>(items: &[T], mut out: W) -> io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> io::Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> io::Result<Vec<T>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
