#![allow(dead_code)]

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use orthovar::corpus::DataPoint;
use orthovar::embedding::{write_embedding_file, EmbeddingHeader, EmbeddingRecord, SubtokenMatrix};
use orthovar::mutation::VariantKind;
use orthovar::pipeline::{EmbeddingInput, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const STEMS: &[&str] = &[
    "after", "rather", "quarters", "poem", "blooming", "hunters", "falls", "circus", "going", "nothing", "mother",
    "father", "thinking", "water", "morning", "little", "better", "whether", "something", "evening", "children",
    "kitchen", "window", "yellow", "follow", "fellow", "nothing", "walking", "talking", "looking", "brother",
    "weather", "master", "sister", "winter", "summer", "river", "silver", "number", "garden",
];

const TAGS: &[&str] = &["BW", "AA", "AR", "GA", "DE"];

/// A dialect-style respelling that always differs from `word`.
pub fn respell(word: &str, i: usize) -> String {
    let rules: [fn(&str) -> Option<String>; 4] = [
        |w| w.strip_suffix("ing").map(|s| format!("{s}in'")),
        |w| w.strip_suffix("er").map(|s| format!("{s}ah")),
        |w| w.contains("th").then(|| w.replacen("th", "d", 1)),
        |w| w.contains('o').then(|| w.replacen('o', "oo", 1)),
    ];
    for k in 0..rules.len() {
        if let Some(r) = rules[(i + k) % rules.len()](word) {
            if r != word {
                return r;
            }
        }
    }
    format!("{word}'")
}

pub fn datapoints(n: usize) -> Vec<DataPoint> {
    (0..n)
        .map(|i| {
            let standard = STEMS[i % STEMS.len()].to_string();
            let observed = respell(&standard, i / STEMS.len());
            DataPoint {
                id: format!("d{i:04}"),
                context: format!("Well, {observed} was what she said, line {i}."),
                standard,
                observed,
                dtag: TAGS[i % TAGS.len()].to_string(),
                target_offset: None,
            }
        })
        .collect()
}

pub fn write_dataset(path: &Path, datapoints: &[DataPoint]) {
    orthovar::corpus::write_jsonl(datapoints, BufWriter::new(File::create(path).unwrap())).unwrap();
}

/// Geometry of the planted-offset fixture.
#[derive(Clone, Copy)]
pub struct Planted {
    pub dim: usize,
    pub offset_norm: f64,
    /// Noise standard deviation as a fraction of the offset norm.
    pub noise_frac: f64,
    pub seed: u64,
}

impl Default for Planted {
    fn default() -> Self {
        Self {
            dim: 16,
            offset_norm: 4.0,
            noise_frac: 0.05,
            seed: 7,
        }
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Pooled vectors: std = random base; every other kind = base + its fixed
/// offset + Gaussian noise.
pub fn planted_vectors(ids: &[String], p: &Planted) -> Vec<(String, VariantKind, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let offsets: Vec<Vec<f64>> = VariantKind::NON_STD
        .iter()
        .map(|_| unit_vector(&mut rng, p.dim).into_iter().map(|x| x * p.offset_norm).collect())
        .collect();
    let base_dist = Normal::new(0.0, 3.0).unwrap();
    let noise = Normal::new(0.0, p.noise_frac * p.offset_norm).unwrap();
    let mut out = Vec::new();
    for id in ids {
        let base: Vec<f64> = (0..p.dim).map(|_| base_dist.sample(&mut rng)).collect();
        out.push((id.clone(), VariantKind::Std, base.clone()));
        for (kind, offset) in VariantKind::NON_STD.iter().zip(&offsets) {
            let v = base
                .iter()
                .zip(offset)
                .map(|(b, o)| b + o + noise.sample(&mut rng))
                .collect();
            out.push((id.clone(), *kind, v));
        }
    }
    out
}

/// Embedding records carrying `vector` as two layers of `dim / 2`, each with
/// two subtoken rows that average back to the vector.
pub fn records_for(vectors: &[(String, VariantKind, Vec<f64>)], model_id: &str, seed: u64) -> Vec<EmbeddingRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vectors
        .iter()
        .map(|(id, kind, v)| {
            let half = v.len() / 2;
            let layers = (0..2)
                .map(|l| {
                    let part = &v[l * half..(l + 1) * half];
                    let delta: Vec<f64> = (0..half).map(|_| rng.gen_range(-0.5..0.5)).collect();
                    let up: Vec<f32> = part.iter().zip(&delta).map(|(x, d)| (x + d) as f32).collect();
                    let down: Vec<f32> = part.iter().zip(&delta).map(|(x, d)| (x - d) as f32).collect();
                    SubtokenMatrix::from_rows(&[up, down]).unwrap()
                })
                .collect();
            EmbeddingRecord {
                datapoint_id: id.clone(),
                kind: *kind,
                model_id: model_id.to_string(),
                layers,
            }
        })
        .collect()
}

pub fn write_embeddings(path: &Path, model_id: &str, dim: usize, records: &[EmbeddingRecord]) {
    let header = EmbeddingHeader {
        model_id: model_id.to_string(),
        layer_spec: "last2".into(),
        dim: dim / 2,
        tokenization: "synthetic".into(),
    };
    write_embedding_file(&header, records, BufWriter::new(File::create(path).unwrap())).unwrap();
}

/// Dataset plus one planted embedding file per model id, ready to run.
pub struct Fixture {
    pub dir: PathBuf,
    pub dataset: PathBuf,
    pub embeddings: Vec<EmbeddingInput>,
}

pub fn planted_fixture(dir: &Path, n: usize, models: &[&str], p: &Planted) -> Fixture {
    let dps = datapoints(n);
    let dataset = dir.join("data.jsonl");
    write_dataset(&dataset, &dps);
    let ids: Vec<String> = dps.iter().map(|d| d.id.clone()).collect();
    let embeddings = models
        .iter()
        .enumerate()
        .map(|(m, model)| {
            let planted = Planted {
                seed: p.seed + m as u64,
                ..*p
            };
            let vectors = planted_vectors(&ids, &planted);
            let records = records_for(&vectors, model, 100 + m as u64);
            let path = dir.join(format!("{model}.jsonl"));
            write_embeddings(&path, model, p.dim, &records);
            EmbeddingInput {
                model_id: model.to_string(),
                path,
            }
        })
        .collect();
    Fixture {
        dir: dir.to_path_buf(),
        dataset,
        embeddings,
    }
}

impl Fixture {
    pub fn config(&self, out: &str) -> RunConfig {
        RunConfig {
            dataset: self.dataset.clone(),
            embeddings: self.embeddings.clone(),
            out: self.dir.join(out),
            ..RunConfig::default()
        }
    }
}

/// Quadratic full-matrix edit distance, written independently of the library.
pub fn dp_levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut m = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in m.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in m[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = if a[i - 1] == b[j - 1] { 0 } else { 1 };
            m[i][j] = (m[i - 1][j] + 1).min(m[i][j - 1] + 1).min(m[i - 1][j - 1] + cost);
        }
    }
    m[a.len()][b.len()]
}

/// Words and codes from the Metaphone reference list.
pub fn metaphone_reference() -> Vec<(String, String)> {
    let text = include_str!("../data/metaphone_reference.tsv");
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let (w, c) = l.split_once('\t').expect("word<TAB>code");
            (w.to_string(), c.to_string())
        })
        .collect()
}
