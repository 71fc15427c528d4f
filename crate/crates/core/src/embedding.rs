//! Embedding files, layer aggregation, pooling and the absolute/relative sets.
//!
//! An embedding file is JSONL: a header line
//! `{"model_id", "layer_spec", "dim", "tokenization"}` followed by one record
//! per (datapoint, variant) with `layers[l][s][d]` indexing (layer, subtoken,
//! dimension). Vectors are kept as `f32`; sums and means accumulate in `f64`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::DataPoint;
use crate::mutation::{VariantKind, VariantSet};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("embedding file has no header line")]
    MissingHeader,
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("record {id}/{kind}: {message}")]
    Shape {
        id: String,
        kind: VariantKind,
        message: String,
    },
    #[error("record {id}/{kind}: vector width {found} differs from declared dim {expected}")]
    DimensionDrift {
        id: String,
        kind: VariantKind,
        expected: usize,
        found: usize,
    },
    #[error("record {id}/{kind}: non-finite value")]
    NonFinite { id: String, kind: VariantKind },
    #[error("record {id}/{kind}: strategy {strategy:?} needs {expected} layers, found {found}")]
    LayerCount {
        id: String,
        kind: VariantKind,
        strategy: LayerAggregation,
        expected: usize,
        found: usize,
    },
    #[error("unrecognised layer spec {0:?}")]
    LayerSpec(String),
    #[error("duplicate record for {id}/{kind}")]
    Duplicate { id: String, kind: VariantKind },
    #[error("type vector table line {line}: {message}")]
    TypeVectors { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingHeader {
    pub model_id: String,
    pub layer_spec: String,
    pub dim: usize,
    pub tokenization: String,
}

impl EmbeddingHeader {
    /// Layers each record is expected to carry under this header's layer spec.
    pub fn layer_count(&self) -> Result<usize, EmbeddingError> {
        layer_count_for_spec(&self.layer_spec)
    }
}

/// `final`/`last` -> 1, `lastN` -> N.
pub fn layer_count_for_spec(spec: &str) -> Result<usize, EmbeddingError> {
    let s = spec.trim().to_ascii_lowercase();
    match s.as_str() {
        "final" | "last" => Ok(1),
        _ => s
            .strip_prefix("last")
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|&n| n > 0)
            .ok_or_else(|| EmbeddingError::LayerSpec(spec.to_string())),
    }
}

/// Row-major `rows x dim` matrix of subtoken vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SubtokenMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl SubtokenMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Self {
        assert_eq!(rows * dim, data.len(), "matrix data length");
        Self { rows, dim, data }
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Option<Self> {
        let dim = rows.first()?.len();
        if rows.iter().any(|r| r.len() != dim) {
            return None;
        }
        Some(Self::new(rows.len(), dim, rows.concat()))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_rows(&self) -> Vec<Vec<f32>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }
}

/// Raw per-variant embedding: every requested layer, every subtoken.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub datapoint_id: String,
    pub kind: VariantKind,
    pub model_id: String,
    pub layers: Vec<SubtokenMatrix>,
}

impl EmbeddingRecord {
    pub fn subtoken_count(&self) -> usize {
        self.layers.first().map_or(0, SubtokenMatrix::rows)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub header: EmbeddingHeader,
    pub records: Vec<EmbeddingRecord>,
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    kind: VariantKind,
    layers: Vec<Vec<Vec<f32>>>,
}

#[derive(Serialize)]
struct RawRecordRef<'a> {
    id: &'a str,
    kind: VariantKind,
    layers: Vec<Vec<Vec<f32>>>,
}

/// Read and validate an embedding file. Records whose id is missing from
/// `known_ids` (when given) are kept with a warning.
pub fn read_embedding_file(
    path: &Path,
    known_ids: Option<&BTreeSet<String>>,
) -> Result<EmbeddingFile, EmbeddingError> {
    let file = File::open(path).map_err(|source| EmbeddingError::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    parse_embedding_jsonl(BufReader::new(file), known_ids)
}

pub fn parse_embedding_jsonl<R: BufRead>(
    reader: R,
    known_ids: Option<&BTreeSet<String>>,
) -> Result<EmbeddingFile, EmbeddingError> {
    let mut lines = reader.lines().enumerate().filter(|(_, l)| match l {
        Ok(l) => !l.trim().is_empty(),
        Err(_) => true,
    });
    let header: EmbeddingHeader = match lines.next() {
        Some((idx, line)) => serde_json::from_str(&line?).map_err(|e| EmbeddingError::Malformed {
            line: idx + 1,
            message: format!("bad header: {e}"),
        })?,
        None => return Err(EmbeddingError::MissingHeader),
    };
    let mut records = Vec::new();
    for (idx, line) in lines {
        let raw: RawRecord = serde_json::from_str(&line?).map_err(|e| EmbeddingError::Malformed {
            line: idx + 1,
            message: e.to_string(),
        })?;
        let record = validate_record(raw, &header)?;
        if let Some(known) = known_ids {
            if !known.contains(&record.datapoint_id) {
                log::warn!("embedding record for unknown datapoint {}", record.datapoint_id);
            }
        }
        records.push(record);
    }
    Ok(EmbeddingFile { header, records })
}

fn validate_record(raw: RawRecord, header: &EmbeddingHeader) -> Result<EmbeddingRecord, EmbeddingError> {
    let shape = |message: String| EmbeddingError::Shape {
        id: raw.id.clone(),
        kind: raw.kind,
        message,
    };
    if raw.layers.is_empty() {
        return Err(shape("no layers".into()));
    }
    let subtokens = raw.layers[0].len();
    if subtokens == 0 {
        return Err(shape("no subtokens".into()));
    }
    let mut layers = Vec::with_capacity(raw.layers.len());
    for (l, layer) in raw.layers.iter().enumerate() {
        if layer.len() != subtokens {
            return Err(shape(format!(
                "layer {l} has {} subtokens, layer 0 has {subtokens}",
                layer.len()
            )));
        }
        for row in layer {
            if row.len() != header.dim {
                return Err(EmbeddingError::DimensionDrift {
                    id: raw.id.clone(),
                    kind: raw.kind,
                    expected: header.dim,
                    found: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(EmbeddingError::NonFinite {
                    id: raw.id.clone(),
                    kind: raw.kind,
                });
            }
        }
        layers.push(SubtokenMatrix::from_rows(layer).expect("rows checked above"));
    }
    Ok(EmbeddingRecord {
        datapoint_id: raw.id,
        kind: raw.kind,
        model_id: header.model_id.clone(),
        layers,
    })
}

pub fn write_embedding_file<W: Write>(
    header: &EmbeddingHeader,
    records: &[EmbeddingRecord],
    mut out: W,
) -> Result<(), EmbeddingError> {
    serde_json::to_writer(&mut out, header)?;
    out.write_all(b"\n")?;
    for r in records {
        let raw = RawRecordRef {
            id: &r.datapoint_id,
            kind: r.kind,
            layers: r.layers.iter().map(SubtokenMatrix::to_rows).collect(),
        };
        serde_json::to_writer(&mut out, &raw)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// How the configured hidden layers are combined into one matrix.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerAggregation {
    /// Layers side by side in layer order: width `layers * d`.
    #[default]
    Concat,
    /// Elementwise sum: width `d`.
    Sum,
    /// Final layer only.
    Last,
}

impl std::str::FromStr for LayerAggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "concat" => Ok(Self::Concat),
            "sum" => Ok(Self::Sum),
            "last" => Ok(Self::Last),
            other => Err(format!("unknown layer aggregation {other:?}")),
        }
    }
}

pub fn aggregate_layers(
    record: &EmbeddingRecord,
    strategy: LayerAggregation,
    expected_layers: usize,
) -> Result<SubtokenMatrix, EmbeddingError> {
    let found = record.layers.len();
    let mismatch = || EmbeddingError::LayerCount {
        id: record.datapoint_id.clone(),
        kind: record.kind,
        strategy,
        expected: expected_layers,
        found,
    };
    match strategy {
        LayerAggregation::Last => record.layers.last().cloned().ok_or_else(mismatch),
        _ if found != expected_layers || found == 0 => Err(mismatch()),
        LayerAggregation::Sum => {
            let first = &record.layers[0];
            let mut acc = vec![0f64; first.data.len()];
            for layer in &record.layers {
                for (a, &v) in acc.iter_mut().zip(&layer.data) {
                    *a += f64::from(v);
                }
            }
            Ok(SubtokenMatrix::new(
                first.rows,
                first.dim,
                acc.into_iter().map(|v| v as f32).collect(),
            ))
        }
        LayerAggregation::Concat => {
            let rows = record.subtoken_count();
            let dim: usize = record.layers.iter().map(|l| l.dim).sum();
            let mut data = Vec::with_capacity(rows * dim);
            for s in 0..rows {
                for layer in &record.layers {
                    data.extend_from_slice(layer.row(s));
                }
            }
            Ok(SubtokenMatrix::new(rows, dim, data))
        }
    }
}

/// Mean over the subtoken axis.
pub fn mean_pool(matrix: &SubtokenMatrix) -> Vec<f32> {
    let mut acc = vec![0f64; matrix.dim];
    for s in 0..matrix.rows {
        for (a, &v) in acc.iter_mut().zip(matrix.row(s)) {
            *a += f64::from(v);
        }
    }
    let n = matrix.rows.max(1) as f64;
    acc.into_iter().map(|v| (v / n) as f32).collect()
}

/// Common view over absolute and relative points.
pub trait LabeledPoint {
    fn datapoint_id(&self) -> &str;
    fn kind(&self) -> VariantKind;
    fn vector(&self) -> &[f32];
    fn dtag(&self) -> &str;
    /// Surface string the point stands for.
    fn form(&self) -> &str;
    fn standard(&self) -> &str;
    fn degenerate(&self) -> bool;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsolutePoint {
    pub datapoint_id: String,
    pub kind: VariantKind,
    pub vector: Vec<f32>,
    pub dtag: String,
    pub form: String,
    pub standard: String,
    pub degenerate: bool,
}

/// Difference between a datapoint's standard-form vector and one variant's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativePoint {
    pub datapoint_id: String,
    /// The variant side of the difference; never `Std`.
    pub kind: VariantKind,
    pub vector: Vec<f32>,
    pub dtag: String,
    pub form: String,
    pub standard: String,
    pub degenerate: bool,
}

macro_rules! labeled_point {
    ($t:ty) => {
        impl LabeledPoint for $t {
            fn datapoint_id(&self) -> &str {
                &self.datapoint_id
            }
            fn kind(&self) -> VariantKind {
                self.kind
            }
            fn vector(&self) -> &[f32] {
                &self.vector
            }
            fn dtag(&self) -> &str {
                &self.dtag
            }
            fn form(&self) -> &str {
                &self.form
            }
            fn standard(&self) -> &str {
                &self.standard
            }
            fn degenerate(&self) -> bool {
                self.degenerate
            }
        }
    };
}

labeled_point!(AbsolutePoint);
labeled_point!(RelativePoint);

/// Corpus-side labels for one datapoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatapointLabels {
    pub dtag: String,
    pub forms: BTreeMap<VariantKind, String>,
    pub degenerate: BTreeSet<VariantKind>,
}

impl DatapointLabels {
    pub fn new(datapoint: &DataPoint, variants: &VariantSet) -> Self {
        Self {
            dtag: datapoint.dtag.clone(),
            forms: variants.forms.clone(),
            degenerate: variants.degenerate.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct AbsoluteSet {
    pub points: Vec<AbsolutePoint>,
    pub excluded: Vec<Exclusion>,
}

/// Pool every record into an absolute point.
///
/// Datapoints without all six variant records, or unknown to `labels`, are
/// excluded with a warning. Output is sorted by id, then variant kind.
pub fn build_absolute_set(
    records: &[EmbeddingRecord],
    labels: &BTreeMap<String, DatapointLabels>,
    strategy: LayerAggregation,
    expected_layers: usize,
) -> Result<AbsoluteSet, EmbeddingError> {
    let mut grouped: BTreeMap<&str, BTreeMap<VariantKind, &EmbeddingRecord>> = BTreeMap::new();
    for r in records {
        let slot = grouped.entry(r.datapoint_id.as_str()).or_default();
        if slot.insert(r.kind, r).is_some() {
            return Err(EmbeddingError::Duplicate {
                id: r.datapoint_id.clone(),
                kind: r.kind,
            });
        }
    }

    let mut excluded = Vec::new();
    let mut complete = Vec::new();
    for (id, kinds) in grouped {
        let Some(label) = labels.get(id) else {
            excluded.push(Exclusion {
                id: id.to_string(),
                reason: "not in corpus".into(),
            });
            continue;
        };
        let missing: Vec<&str> = VariantKind::ALL
            .iter()
            .filter(|k| !kinds.contains_key(k))
            .map(|k| k.as_str())
            .collect();
        if !missing.is_empty() {
            excluded.push(Exclusion {
                id: id.to_string(),
                reason: format!("missing variants: {}", missing.join(",")),
            });
            continue;
        }
        complete.push((id, kinds, label));
    }
    for ex in &excluded {
        log::warn!("excluding datapoint {}: {}", ex.id, ex.reason);
    }

    let pooled: Result<Vec<Vec<AbsolutePoint>>, EmbeddingError> = complete
        .par_iter()
        .map(|(id, kinds, label)| {
            kinds
                .iter()
                .map(|(&kind, record)| {
                    let matrix = aggregate_layers(record, strategy, expected_layers)?;
                    Ok(AbsolutePoint {
                        datapoint_id: id.to_string(),
                        kind,
                        vector: mean_pool(&matrix),
                        dtag: label.dtag.clone(),
                        form: label.forms.get(&kind).cloned().unwrap_or_default(),
                        standard: label.forms.get(&VariantKind::Std).cloned().unwrap_or_default(),
                        degenerate: label.degenerate.contains(&kind),
                    })
                })
                .collect()
        })
        .collect();
    let points: Vec<AbsolutePoint> = pooled?.into_iter().flatten().collect();

    if let Some(first) = points.first() {
        let d = first.vector.len();
        if let Some(bad) = points.iter().find(|p| p.vector.len() != d) {
            return Err(EmbeddingError::DimensionDrift {
                id: bad.datapoint_id.clone(),
                kind: bad.kind,
                expected: d,
                found: bad.vector.len(),
            });
        }
    }
    Ok(AbsoluteSet { points, excluded })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiffDirection {
    #[default]
    StdMinusVar,
    VarMinusStd,
}

impl std::str::FromStr for DiffDirection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "std-minus-var" => Ok(Self::StdMinusVar),
            "var-minus-std" => Ok(Self::VarMinusStd),
            other => Err(format!("unknown diff direction {other:?}")),
        }
    }
}

/// Five difference vectors per datapoint, in the absolute set's order.
/// Datapoints lacking a standard-form point are skipped.
pub fn build_relative_set(absolute: &[AbsolutePoint], direction: DiffDirection) -> Vec<RelativePoint> {
    let mut by_id: BTreeMap<&str, Vec<&AbsolutePoint>> = BTreeMap::new();
    for p in absolute {
        by_id.entry(p.datapoint_id.as_str()).or_default().push(p);
    }
    by_id
        .into_par_iter()
        .map(|(_, group)| {
            let Some(std_point) = group.iter().find(|p| p.kind == VariantKind::Std) else {
                return Vec::new();
            };
            let mut out: Vec<RelativePoint> = group
                .iter()
                .filter(|p| p.kind != VariantKind::Std)
                .map(|p| {
                    let vector = std_point
                        .vector
                        .iter()
                        .zip(&p.vector)
                        .map(|(&s, &v)| {
                            let d = f64::from(s) - f64::from(v);
                            match direction {
                                DiffDirection::StdMinusVar => d as f32,
                                DiffDirection::VarMinusStd => -d as f32,
                            }
                        })
                        .collect();
                    RelativePoint {
                        datapoint_id: p.datapoint_id.clone(),
                        kind: p.kind,
                        vector,
                        dtag: p.dtag.clone(),
                        form: p.form.clone(),
                        standard: p.standard.clone(),
                        degenerate: p.degenerate,
                    }
                })
                .collect();
            out.sort_by_key(|p| p.kind);
            out
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// Keep points whose variant kind is in `kinds`.
pub fn filter_variant_kinds<P: LabeledPoint + Clone>(points: &[P], kinds: &BTreeSet<VariantKind>) -> Vec<P> {
    points.iter().filter(|p| kinds.contains(&p.kind())).cloned().collect()
}

pub fn write_points<P: Serialize, W: Write>(points: &[P], mut out: W) -> Result<(), EmbeddingError> {
    for p in points {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_points<P: for<'de> Deserialize<'de>, R: BufRead>(reader: R) -> Result<Vec<P>, EmbeddingError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| EmbeddingError::Malformed {
            line: idx + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Word -> vector table in plain-text word2vec format. An optional leading
/// `count dim` line is skipped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TypeVectors {
    dim: usize,
    vectors: HashMap<String, Vec<f32>>,
}

impl TypeVectors {
    pub fn from_pairs<I: IntoIterator<Item = (String, Vec<f32>)>>(pairs: I) -> Self {
        let vectors: HashMap<String, Vec<f32>> = pairs.into_iter().collect();
        let dim = vectors.values().next().map_or(0, Vec::len);
        Self { dim, vectors }
    }

    pub fn load(path: &Path) -> Result<Self, EmbeddingError> {
        let file = File::open(path).map_err(|source| EmbeddingError::Unreadable {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(BufReader::new(file))
    }

    pub fn parse<R: BufRead>(reader: R) -> Result<Self, EmbeddingError> {
        let mut vectors = HashMap::new();
        let mut dim = None;
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let mut fields = line.split_whitespace();
            let Some(word) = fields.next() else { continue };
            let rest: Vec<&str> = fields.collect();
            if idx == 0 && rest.len() == 1 && word.parse::<usize>().is_ok() && rest[0].parse::<usize>().is_ok() {
                continue;
            }
            let values = rest
                .iter()
                .map(|v| v.parse::<f32>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| EmbeddingError::TypeVectors {
                    line: idx + 1,
                    message: e.to_string(),
                })?;
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(EmbeddingError::TypeVectors {
                        line: idx + 1,
                        message: format!("expected {d} values, found {}", values.len()),
                    })
                }
                _ => {}
            }
            vectors.insert(word.to_string(), values);
        }
        Ok(Self {
            dim: dim.unwrap_or(0),
            vectors,
        })
    }

    pub fn get(&self, word: &str) -> Option<&[f32]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn write<W: Write>(&self, mut out: W) -> io::Result<()> {
        let mut words: Vec<&String> = self.vectors.keys().collect();
        words.sort();
        writeln!(out, "{} {}", words.len(), self.dim)?;
        for w in words {
            write!(out, "{w}")?;
            for v in &self.vectors[w] {
                write!(out, " {v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}
