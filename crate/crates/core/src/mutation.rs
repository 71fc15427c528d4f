//! Synthetic variants of standard word forms.
//!
//! Each datapoint gets four constructed spellings next to its standard and
//! observed forms: the reversed word, an OCR-style confusion, an adjacent
//! transposition and a single random substitution. Every random draw comes
//! from a stream keyed by (master seed, datapoint id, variant kind), so the
//! output does not depend on iteration order or thread count.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::DataPoint;
use crate::seed::derive_stream;

const DEFAULT_TABLE: &str = include_str!("../data/ocr_confusions.json");

#[derive(Debug, Error)]
pub enum MutationError {
    #[error("confusion table is empty")]
    EmptyConfusionTable,
    #[error("invalid confusion table: {0}")]
    InvalidTable(String),
    #[error("cannot mutate an empty word")]
    EmptyWord,
    #[error("replacement alphabet needs at least two symbols")]
    AlphabetTooSmall,
    #[error("unknown variant kind {0:?}")]
    UnknownKind(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// The six surface forms tracked per datapoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantKind {
    Std,
    Obv,
    Rev,
    Ocr,
    Swp,
    Rnd,
}

impl VariantKind {
    pub const ALL: [VariantKind; 6] = [
        VariantKind::Std,
        VariantKind::Obv,
        VariantKind::Rev,
        VariantKind::Ocr,
        VariantKind::Swp,
        VariantKind::Rnd,
    ];

    /// Every kind except the standard form.
    pub const NON_STD: [VariantKind; 5] = [
        VariantKind::Obv,
        VariantKind::Rev,
        VariantKind::Ocr,
        VariantKind::Swp,
        VariantKind::Rnd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VariantKind::Std => "std",
            VariantKind::Obv => "obv",
            VariantKind::Rev => "rev",
            VariantKind::Ocr => "ocr",
            VariantKind::Swp => "swp",
            VariantKind::Rnd => "rnd",
        }
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantKind {
    type Err = MutationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VariantKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim())
            .ok_or_else(|| MutationError::UnknownKind(s.to_string()))
    }
}

/// Single-character OCR confusions: character -> possible misreadings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionTable {
    entries: BTreeMap<char, Vec<char>>,
}

impl ConfusionTable {
    /// Self-substitutions are dropped; an entry left with nothing is invalid.
    pub fn new(entries: BTreeMap<char, Vec<char>>) -> Result<Self, MutationError> {
        let mut cleaned = BTreeMap::new();
        for (from, subs) in entries {
            let mut subs: Vec<char> = subs.into_iter().filter(|&c| c != from).collect();
            subs.dedup();
            if subs.is_empty() {
                return Err(MutationError::InvalidTable(format!(
                    "{from:?} has no substitute other than itself"
                )));
            }
            cleaned.insert(from, subs);
        }
        Ok(Self { entries: cleaned })
    }

    /// Parse the JSON form `{"c": ["e", "o"], ...}`.
    pub fn from_json_str(text: &str) -> Result<Self, MutationError> {
        let raw: BTreeMap<String, Vec<String>> = serde_json::from_str(text)?;
        let single = |s: &str| {
            let mut it = s.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => Ok(c),
                _ => Err(MutationError::InvalidTable(format!(
                    "{s:?} is not a single character"
                ))),
            }
        };
        let mut entries = BTreeMap::new();
        for (from, subs) in raw {
            let from = single(&from)?;
            let subs = subs.iter().map(|s| single(s)).collect::<Result<Vec<_>, _>>()?;
            entries.insert(from, subs);
        }
        Self::new(entries)
    }

    pub fn from_json_file(path: &Path) -> Result<Self, MutationError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// The table shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_json_str(DEFAULT_TABLE).expect("bundled confusion table is valid")
    }

    pub fn substitutes(&self, c: char) -> Option<&[char]> {
        self.entries.get(&c).map(Vec::as_slice)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn to_json(&self) -> String {
        let raw: BTreeMap<String, Vec<String>> = self
            .entries
            .iter()
            .map(|(k, v)| (k.to_string(), v.iter().map(char::to_string).collect()))
            .collect();
        serde_json::to_string_pretty(&raw).expect("string map serializes")
    }
}

/// A generated form plus how it came about.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mutation {
    pub form: String,
    /// The requested mutation was impossible and another one was used.
    pub fallback: bool,
    /// The form could not be made distinct from its source.
    pub degenerate: bool,
}

impl Mutation {
    fn plain(form: String) -> Self {
        Self {
            form,
            fallback: false,
            degenerate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationConfig {
    /// Characters mutated per OCR variant.
    pub ocr_mutations: usize,
    /// Replacement alphabet for random substitutions.
    pub alphabet: Vec<char>,
}

impl Default for MutationConfig {
    fn default() -> Self {
        Self {
            ocr_mutations: 1,
            alphabet: ('a'..='z').collect(),
        }
    }
}

pub fn reverse_variant(word: &str) -> String {
    word.chars().rev().collect()
}

/// Replace `count` confusable characters (distinct positions) by a uniformly
/// drawn substitute. Falls back to a random substitution when the word has no
/// confusable character at all.
pub fn ocr_variant<R: Rng>(
    word: &str,
    table: &ConfusionTable,
    count: usize,
    alphabet: &[char],
    rng: &mut R,
) -> Result<Mutation, MutationError> {
    if table.is_empty() {
        return Err(MutationError::EmptyConfusionTable);
    }
    let mut chars: Vec<char> = word.chars().collect();
    if chars.is_empty() {
        return Err(MutationError::EmptyWord);
    }
    let confusable: Vec<usize> = (0..chars.len())
        .filter(|&i| table.substitutes(chars[i]).is_some())
        .collect();
    if confusable.is_empty() {
        let form = random_char_variant(word, alphabet, rng)?;
        return Ok(Mutation {
            form,
            fallback: true,
            degenerate: false,
        });
    }
    let amount = count.max(1).min(confusable.len());
    let mut picked: Vec<usize> = sample(rng, confusable.len(), amount).into_iter().collect();
    picked.sort_unstable();
    for slot in picked {
        let pos = confusable[slot];
        let subs = table.substitutes(chars[pos]).expect("position is confusable");
        chars[pos] = subs[rng.gen_range(0..subs.len())];
    }
    Ok(Mutation::plain(chars.into_iter().collect()))
}

/// Transpose two adjacent, unequal characters at a uniformly drawn position.
pub fn swap_variant<R: Rng>(
    word: &str,
    alphabet: &[char],
    rng: &mut R,
) -> Result<Mutation, MutationError> {
    let mut chars: Vec<char> = word.chars().collect();
    match chars.len() {
        0 => Err(MutationError::EmptyWord),
        1 => Ok(Mutation {
            form: random_char_variant(word, alphabet, rng)?,
            fallback: true,
            degenerate: true,
        }),
        n => {
            // drawing only among effective positions is the same as redrawing on no-ops
            let effective: Vec<usize> = (0..n - 1).filter(|&i| chars[i] != chars[i + 1]).collect();
            if effective.is_empty() {
                return Ok(Mutation {
                    form: word.to_string(),
                    fallback: false,
                    degenerate: true,
                });
            }
            let pos = effective[rng.gen_range(0..effective.len())];
            chars.swap(pos, pos + 1);
            Ok(Mutation::plain(chars.into_iter().collect()))
        }
    }
}

/// Replace one uniformly drawn position by a different alphabet symbol.
pub fn random_char_variant<R: Rng>(
    word: &str,
    alphabet: &[char],
    rng: &mut R,
) -> Result<String, MutationError> {
    let mut chars: Vec<char> = word.chars().collect();
    if chars.is_empty() {
        return Err(MutationError::EmptyWord);
    }
    let distinct: BTreeSet<char> = alphabet.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(MutationError::AlphabetTooSmall);
    }
    let pos = rng.gen_range(0..chars.len());
    let choices: Vec<char> = distinct.into_iter().filter(|&c| c != chars[pos]).collect();
    chars[pos] = choices[rng.gen_range(0..choices.len())];
    Ok(chars.into_iter().collect())
}

/// All six surface forms of one datapoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantSet {
    pub datapoint_id: String,
    pub forms: BTreeMap<VariantKind, String>,
    /// Kinds whose form equals the standard form.
    pub degenerate: BTreeSet<VariantKind>,
    /// Kinds produced by a fallback mutation.
    pub fallbacks: BTreeSet<VariantKind>,
}

impl VariantSet {
    pub fn form(&self, kind: VariantKind) -> &str {
        self.forms.get(&kind).map(String::as_str).unwrap_or_default()
    }

    pub fn is_degenerate(&self, kind: VariantKind) -> bool {
        self.degenerate.contains(&kind)
    }
}

pub fn build_variant_set(
    datapoint: &DataPoint,
    table: &ConfusionTable,
    config: &MutationConfig,
    master_seed: u64,
) -> Result<VariantSet, MutationError> {
    let std_form = datapoint.standard.as_str();
    if std_form.is_empty() {
        return Err(MutationError::EmptyWord);
    }
    let stream = |kind: VariantKind| derive_stream(master_seed, &["mutation", &datapoint.id, kind.as_str()]);

    let mut forms = BTreeMap::new();
    let mut fallbacks = BTreeSet::new();
    let mut degenerate = BTreeSet::new();

    forms.insert(VariantKind::Std, std_form.to_string());
    forms.insert(VariantKind::Obv, datapoint.observed.clone());
    forms.insert(VariantKind::Rev, reverse_variant(std_form));

    let ocr = ocr_variant(
        std_form,
        table,
        config.ocr_mutations,
        &config.alphabet,
        &mut stream(VariantKind::Ocr),
    )?;
    let swp = swap_variant(std_form, &config.alphabet, &mut stream(VariantKind::Swp))?;
    let rnd = Mutation::plain(random_char_variant(
        std_form,
        &config.alphabet,
        &mut stream(VariantKind::Rnd),
    )?);
    for (kind, m) in [(VariantKind::Ocr, ocr), (VariantKind::Swp, swp), (VariantKind::Rnd, rnd)] {
        if m.fallback {
            fallbacks.insert(kind);
        }
        if m.degenerate {
            degenerate.insert(kind);
        }
        forms.insert(kind, m.form);
    }
    for kind in VariantKind::NON_STD {
        if forms[&kind] == std_form {
            degenerate.insert(kind);
        }
    }
    Ok(VariantSet {
        datapoint_id: datapoint.id.clone(),
        forms,
        degenerate,
        fallbacks,
    })
}

/// One line of the variant dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantRecord {
    pub id: String,
    pub kind: VariantKind,
    pub form: String,
    pub degenerate: bool,
}

pub fn write_variants<W: Write>(sets: &[VariantSet], mut out: W) -> Result<(), MutationError> {
    for set in sets {
        for (&kind, form) in &set.forms {
            let rec = VariantRecord {
                id: set.datapoint_id.clone(),
                kind,
                form: form.clone(),
                degenerate: set.is_degenerate(kind),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Read a variant dump back, grouping records by datapoint id.
///
/// Fallback information is not part of the dump and comes back empty.
pub fn read_variants<R: BufRead>(reader: R) -> Result<Vec<VariantSet>, MutationError> {
    let mut sets: BTreeMap<String, VariantSet> = BTreeMap::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: VariantRecord = serde_json::from_str(&line)?;
        let set = sets.entry(rec.id.clone()).or_insert_with(|| VariantSet {
            datapoint_id: rec.id.clone(),
            forms: BTreeMap::new(),
            degenerate: BTreeSet::new(),
            fallbacks: BTreeSet::new(),
        });
        if rec.degenerate {
            set.degenerate.insert(rec.kind);
        }
        set.forms.insert(rec.kind, rec.form);
    }
    Ok(sets.into_values().collect())
}
