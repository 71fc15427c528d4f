//! Paired orthovariant dataset: loading, validation, filtering and summaries.
//!
//! A record pairs an observed (nonstandard) spelling with its standard form,
//! the sentence it was found in, and the dialect tag (Dtag) assigned to it.
//! Records are read from JSONL or CSV with identical field names. All text is
//! NFC-normalized at load and every length or offset is counted in Unicode
//! scalar values.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

/// Upper bound on the number of distinct dialect tags.
pub const MAX_DTAGS: usize = 31;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read dataset {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("cannot infer dataset format from {0}; use a .jsonl or .csv extension")]
    UnknownFormat(PathBuf),
    #[error("malformed csv header: {0}")]
    CsvHeader(String),
    #[error("malformed dtag inventory: {0}")]
    Inventory(String),
    #[error("dtag inventory is full ({MAX_DTAGS} codes); cannot register {0}")]
    InventoryFull(String),
    #[error("target {observed:?} not found in context of datapoint {id}")]
    TargetNotFound { id: String, observed: String },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One observed/standard token pair with its context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataPoint {
    pub id: String,
    pub standard: String,
    pub observed: String,
    pub context: String,
    pub dtag: String,
    /// Character offset of `observed` within `context`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_offset: Option<usize>,
}

impl DataPoint {
    /// Locate the observed token in the context, failing with the datapoint id.
    pub fn target_span(&self, case_fold: bool) -> Result<CharSpan, CorpusError> {
        locate_target_span(&self.context, &self.observed, self.target_offset, case_fold).ok_or_else(
            || CorpusError::TargetNotFound {
                id: self.id.clone(),
                observed: self.observed.clone(),
            },
        )
    }

    pub fn context_chars(&self) -> usize {
        self.context.chars().count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dtag {
    pub code: String,
    #[serde(default)]
    pub description: String,
}

/// The set of dialect tags a dataset may use.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DtagInventory {
    tags: BTreeMap<String, Dtag>,
}

impl DtagInventory {
    /// Inventory seeded with the tags whose meaning is documented for the
    /// released corpus. The rest are registered as they are encountered.
    pub fn with_known_tags() -> Self {
        let mut inv = Self::default();
        for (code, description) in [
            ("AA", "African American"),
            ("AR", "intentionally archaic"),
            ("BW", "backwoods"),
            ("DE", "German"),
            ("GA", "Gaelic"),
            ("WS", "White Southern"),
        ] {
            inv.tags.insert(
                code.to_string(),
                Dtag {
                    code: code.to_string(),
                    description: description.to_string(),
                },
            );
        }
        inv
    }

    /// Read a JSON array of `{code, description}` objects.
    pub fn from_json_file(path: &Path) -> Result<Self, CorpusError> {
        let file = File::open(path).map_err(|source| CorpusError::Unreadable {
            path: path.to_path_buf(),
            source,
        })?;
        let tags: Vec<Dtag> = serde_json::from_reader(BufReader::new(file))?;
        let mut inv = Self::default();
        for tag in tags {
            let code = normalize_code(&tag.code);
            if code.is_empty() {
                return Err(CorpusError::Inventory("empty dtag code".into()));
            }
            if inv.tags.contains_key(&code) {
                return Err(CorpusError::Inventory(format!("duplicate dtag code {code}")));
            }
            inv.tags.insert(
                code.clone(),
                Dtag {
                    code,
                    description: tag.description,
                },
            );
        }
        if inv.len() > MAX_DTAGS {
            return Err(CorpusError::Inventory(format!(
                "{} codes exceed the cap of {MAX_DTAGS}",
                inv.len()
            )));
        }
        Ok(inv)
    }

    pub fn contains(&self, code: &str) -> bool {
        self.tags.contains_key(code)
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn codes(&self) -> impl Iterator<Item = &str> {
        self.tags.keys().map(String::as_str)
    }

    pub fn register(&mut self, code: &str) -> Result<(), CorpusError> {
        if self.contains(code) {
            return Ok(());
        }
        if self.tags.len() >= MAX_DTAGS {
            return Err(CorpusError::InventoryFull(code.to_string()));
        }
        self.tags.insert(
            code.to_string(),
            Dtag {
                code: code.to_string(),
                description: String::new(),
            },
        );
        Ok(())
    }
}

fn normalize_code(code: &str) -> String {
    code.trim().to_uppercase()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Jsonl,
    Csv,
}

impl DataFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "jsonl" | "ndjson" => Some(Self::Jsonl),
            "csv" => Some(Self::Csv),
            _ => None,
        }
    }
}

/// What to do with a Dtag code missing from the inventory.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnknownDtagPolicy {
    Reject,
    /// Add it to the inventory (up to [`MAX_DTAGS`]) and warn.
    #[default]
    Register,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub unknown_dtag: UnknownDtagPolicy,
    /// Match the observed token against the context case-insensitively.
    pub case_fold: bool,
}

/// A record that failed validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub datapoints: Vec<DataPoint>,
    pub rejections: Vec<Rejection>,
    pub inventory: DtagInventory,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct RawRecord {
    id: Option<String>,
    standard: Option<String>,
    observed: Option<String>,
    context: Option<String>,
    dtag: Option<String>,
    target_offset: Option<usize>,
}

/// Load and validate a dataset file.
///
/// File-level failures are errors. Record-level failures (malformed line,
/// missing field, target not found, unknown Dtag under the reject policy,
/// duplicate id) go to the rejection report.
pub fn load_dataset(
    path: &Path,
    format: Option<DataFormat>,
    options: &LoadOptions,
    inventory: DtagInventory,
) -> Result<LoadedCorpus, CorpusError> {
    let format = match format.or_else(|| DataFormat::from_path(path)) {
        Some(f) => f,
        None => return Err(CorpusError::UnknownFormat(path.to_path_buf())),
    };
    let file = File::open(path).map_err(|source| CorpusError::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    match format {
        DataFormat::Jsonl => parse_jsonl(reader, options, inventory),
        DataFormat::Csv => parse_csv(reader, options, inventory),
    }
}

pub fn parse_jsonl<R: BufRead>(
    reader: R,
    options: &LoadOptions,
    inventory: DtagInventory,
) -> Result<LoadedCorpus, CorpusError> {
    let mut validator = Validator::new(options, inventory);
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        match serde_json::from_str::<RawRecord>(&line) {
            Ok(raw) => validator.accept(raw, line_no),
            Err(e) => validator.reject(format!("line:{line_no}"), format!("malformed record: {e}")),
        }
    }
    Ok(validator.finish())
}

pub fn parse_csv<R: Read>(
    reader: R,
    options: &LoadOptions,
    inventory: DtagInventory,
) -> Result<LoadedCorpus, CorpusError> {
    let mut validator = Validator::new(options, inventory);
    let mut csv_reader = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    if csv_reader.headers().is_err() {
        // an empty file has no header row at all
        return Ok(validator.finish());
    }
    let headers = csv_reader
        .headers()
        .map_err(|e| CorpusError::CsvHeader(e.to_string()))?
        .clone();
    for (idx, row) in csv_reader.records().enumerate() {
        // header is line 1
        let line_no = idx + 2;
        let parsed = row.and_then(|r| r.deserialize::<RawRecord>(Some(&headers)));
        match parsed {
            Ok(mut raw) => {
                // csv yields Some("") for present-but-blank cells
                for field in [
                    &mut raw.id,
                    &mut raw.standard,
                    &mut raw.observed,
                    &mut raw.context,
                    &mut raw.dtag,
                ] {
                    if field.as_deref() == Some("") {
                        *field = None;
                    }
                }
                validator.accept(raw, line_no)
            }
            Err(e) => validator.reject(format!("line:{line_no}"), format!("malformed record: {e}")),
        }
    }
    Ok(validator.finish())
}

struct Validator<'a> {
    options: &'a LoadOptions,
    inventory: DtagInventory,
    seen: BTreeSet<String>,
    datapoints: Vec<DataPoint>,
    rejections: Vec<Rejection>,
}

impl<'a> Validator<'a> {
    fn new(options: &'a LoadOptions, inventory: DtagInventory) -> Self {
        Self {
            options,
            inventory,
            seen: BTreeSet::new(),
            datapoints: Vec::new(),
            rejections: Vec::new(),
        }
    }

    fn reject(&mut self, id: String, reason: String) {
        log::debug!("rejected {id}: {reason}");
        self.rejections.push(Rejection { id, reason });
    }

    fn accept(&mut self, raw: RawRecord, line_no: usize) {
        let id = match raw.id.as_deref().map(str::trim) {
            Some(id) if !id.is_empty() => nfc(id),
            _ => return self.reject(format!("line:{line_no}"), "missing field: id".into()),
        };
        let required = [
            ("standard", &raw.standard),
            ("observed", &raw.observed),
            ("context", &raw.context),
            ("dtag", &raw.dtag),
        ];
        if let Some((name, _)) = required.iter().find(|(_, v)| v.is_none()) {
            return self.reject(id, format!("missing field: {name}"));
        }
        let standard = nfc(raw.standard.as_deref().unwrap_or_default().trim());
        let observed = nfc(raw.observed.as_deref().unwrap_or_default().trim());
        let context = nfc(raw.context.as_deref().unwrap_or_default());
        let dtag = normalize_code(raw.dtag.as_deref().unwrap_or_default());
        if standard.is_empty() {
            return self.reject(id, "empty standard form".into());
        }
        if observed.is_empty() {
            return self.reject(id, "empty observed form".into());
        }
        if dtag.is_empty() {
            return self.reject(id, "empty dtag".into());
        }
        if self.seen.contains(&id) {
            return self.reject(id, "duplicate id".into());
        }
        if !self.inventory.contains(&dtag) {
            match self.options.unknown_dtag {
                UnknownDtagPolicy::Reject => {
                    return self.reject(id, format!("unknown dtag {dtag}"));
                }
                UnknownDtagPolicy::Register => {
                    if let Err(e) = self.inventory.register(&dtag) {
                        return self.reject(id, e.to_string());
                    }
                    log::warn!("registered previously unknown dtag {dtag} (first seen on {id})");
                }
            }
        }
        let span = match locate_target_span(
            &context,
            &observed,
            raw.target_offset,
            self.options.case_fold,
        ) {
            Some(span) => span,
            None => return self.reject(id, "target not found".into()),
        };
        let target_offset = match raw.target_offset {
            Some(hint) if hint != span.start => {
                log::warn!("{id}: target_offset {hint} does not match; using {}", span.start);
                Some(span.start)
            }
            other => other,
        };
        self.seen.insert(id.clone());
        self.datapoints.push(DataPoint {
            id,
            standard,
            observed,
            context,
            dtag,
            target_offset,
        });
    }

    fn finish(self) -> LoadedCorpus {
        LoadedCorpus {
            datapoints: self.datapoints,
            rejections: self.rejections,
            inventory: self.inventory,
        }
    }
}

fn nfc(s: &str) -> String {
    s.nfc().collect()
}

/// Half-open span of character (scalar) indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
}

impl CharSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    /// Slice `text` by this character span.
    pub fn slice<'t>(&self, text: &'t str) -> &'t str {
        let mut indices = text.char_indices().map(|(i, _)| i).chain(std::iter::once(text.len()));
        let start = indices.nth(self.start).unwrap_or(text.len());
        let end = if self.is_empty() {
            start
        } else {
            indices.nth(self.len() - 1).unwrap_or(text.len())
        };
        &text[start..end]
    }
}

/// Find `observed` in `context`.
///
/// A valid `hint` (a character offset at which `observed` occurs) is returned
/// unchanged. Otherwise the leftmost occurrence bounded by non-alphanumeric
/// characters wins, then the leftmost occurrence of any kind.
pub fn locate_target_span(
    context: &str,
    observed: &str,
    hint: Option<usize>,
    case_fold: bool,
) -> Option<CharSpan> {
    let fold = |c: char| {
        if case_fold {
            c.to_lowercase().next().unwrap_or(c)
        } else {
            c
        }
    };
    let haystack: Vec<char> = context.chars().map(fold).collect();
    let needle: Vec<char> = observed.chars().map(fold).collect();
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    let matches_at = |start: usize| {
        start + needle.len() <= haystack.len() && haystack[start..start + needle.len()] == needle[..]
    };
    let span_at = |start: usize| CharSpan {
        start,
        end: start + needle.len(),
    };
    if let Some(h) = hint {
        if matches_at(h) {
            return Some(span_at(h));
        }
    }
    let is_word = |c: char| c.is_alphanumeric();
    let bounded = |start: usize| {
        let end = start + needle.len();
        (start == 0 || !is_word(haystack[start - 1])) && (end == haystack.len() || !is_word(haystack[end]))
    };
    let candidates: Vec<usize> = (0..=haystack.len() - needle.len()).filter(|&s| matches_at(s)).collect();
    candidates
        .iter()
        .copied()
        .find(|&s| bounded(s))
        .or_else(|| candidates.first().copied())
        .map(span_at)
}

/// Keep datapoints whose context fits within `limit` characters.
pub fn truncate_by_char_limit(datapoints: &[DataPoint], limit: usize) -> Vec<DataPoint> {
    datapoints
        .iter()
        .filter(|dp| dp.context_chars() <= limit)
        .cloned()
        .collect()
}

pub fn tag_histogram(datapoints: &[DataPoint]) -> BTreeMap<String, usize> {
    let mut hist = BTreeMap::new();
    for dp in datapoints {
        *hist.entry(dp.dtag.clone()).or_insert(0) += 1;
    }
    hist
}

pub fn write_jsonl<W: Write>(datapoints: &[DataPoint], mut out: W) -> Result<(), CorpusError> {
    for dp in datapoints {
        serde_json::to_writer(&mut out, dp)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_rejections<W: Write>(rejections: &[Rejection], mut out: W) -> Result<(), CorpusError> {
    for r in rejections {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
