//! Seeded synthetic corpus in the ingest formats: a record CSV, an embedding manifest
//! and little-endian `f32` vector files.
//!
//! Labels of the four tasks are drawn from a dependency chain so that each task is
//! partly predictable from the others. Image embeddings carry most signal for
//! technique and material, text embeddings for place and timespan.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::corpus::csv_field;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::schema::{TaskSchema, NA};

const MUSEUMS: [&str; 6] = ["met", "vam", "risd", "imatex", "mad", "unipa"];
const WORDS: [&str; 16] = [
    "fragment", "silk", "woven", "panel", "pattern", "floral", "border", "ground", "loom", "weft", "warp", "lined",
    "crimson", "gilt", "repeat", "motif",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_records: usize,
    pub image_dim: usize,
    pub text_dim: usize,
    /// Probability that a record has at least one image.
    pub image_rate: f64,
    /// Probability that a record has a description.
    pub text_rate: f64,
    pub max_images: usize,
    /// Per-task probability that the label is known.
    pub label_rate: Vec<f64>,
    /// Probability that a label is copied from its predecessor in the chain.
    pub coupling: f64,
    /// Per-task prototype scale in image and text embeddings.
    pub image_signal: Vec<f64>,
    pub text_signal: Vec<f64>,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_records: 800,
            image_dim: 16,
            text_dim: 12,
            image_rate: 0.85,
            text_rate: 0.55,
            max_images: 3,
            label_rate: vec![0.85, 0.75, 0.7, 0.7],
            coupling: 0.5,
            image_signal: vec![0.3, 0.4, 1.0, 0.9],
            text_signal: vec![1.0, 0.9, 0.3, 0.3],
            noise: 1.0,
            seed: 7,
        }
    }
}

/// One generated record, labels as class names.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthRow {
    pub record_id: String,
    pub museum: String,
    pub text: Option<String>,
    pub images: Vec<Vec<f32>>,
    pub text_embedding: Option<Vec<f32>>,
    pub labels: Vec<Option<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub rows: Vec<SynthRow>,
}

/// Where [`SynthCorpus::write`] put its files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthPaths {
    pub csv: PathBuf,
    pub manifest: PathBuf,
}

fn prototypes(rng: &mut ChaCha8Rng, counts: &[usize], dim: usize) -> Vec<Vec<Vec<f64>>> {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    counts.iter().map(|&k| (0..k).map(|_| (0..dim).map(|_| n.sample(rng)).collect()).collect()).collect()
}

fn embed(
    rng: &mut ChaCha8Rng,
    protos: &[Vec<Vec<f64>>],
    signal: &[f64],
    classes: &[usize],
    dim: usize,
    noise: &Normal<f64>,
) -> Vec<f32> {
    (0..dim)
        .map(|d| {
            let s: f64 = classes.iter().enumerate().map(|(m, &c)| signal[m] * protos[m][c][d]).sum();
            (s + noise.sample(rng)) as f32
        })
        .collect()
}

fn text(rng: &mut ChaCha8Rng, id: &str) -> String {
    // roughly one in eight descriptions is too short for the text filter
    let n_words = if rng.random_bool(0.125) { rng.random_range(2..6) } else { rng.random_range(10..40) };
    let mut s = format!("Object {id}:");
    for _ in 0..n_words {
        s.push(' ');
        s.push_str(WORDS[rng.random_range(0..WORDS.len())]);
    }
    s.push('.');
    s
}

impl SynthCorpus {
    pub fn generate(config: &SynthConfig, schema: &TaskSchema) -> Result<Self> {
        let counts = schema.class_counts();
        let m = counts.len();
        if config.label_rate.len() != m || config.image_signal.len() != m || config.text_signal.len() != m {
            return Err(Error::config(format!("synthetic corpus needs per-task settings for {m} tasks")));
        }
        if config.image_dim == 0 || config.text_dim == 0 || config.max_images == 0 || !(config.noise > 0.0) {
            return Err(Error::config("synthetic dimensions, image count and noise must be positive"));
        }
        let probs = [config.image_rate, config.text_rate, config.coupling];
        if probs.iter().chain(&config.label_rate).any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::config("synthetic rates must lie in [0, 1]"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let image_protos = prototypes(&mut rng, &counts, config.image_dim);
        let text_protos = prototypes(&mut rng, &counts, config.text_dim);
        // skewed class priors, most frequent class first as in the schema
        let priors: Vec<WeightedIndex<f64>> = counts
            .iter()
            .map(|&k| WeightedIndex::new((0..k).map(|c| 1.0 / (1.0 + 0.4 * c as f64))).expect("positive weights"))
            .collect();
        let noise = Normal::new(0.0, config.noise).expect("positive noise");
        let width = config.n_records.max(1).to_string().len();

        let mut rows = Vec::with_capacity(config.n_records);
        for i in 0..config.n_records {
            let record_id = format!("syn-{i:0width$}");
            let mut classes = Vec::with_capacity(m);
            for t in 0..m {
                let c = if t > 0 && rng.random_bool(config.coupling) {
                    (classes[t - 1] * 7 + 3) % counts[t]
                } else {
                    priors[t].sample(&mut rng)
                };
                classes.push(c);
            }
            let museum = if rng.random_bool(0.7) {
                MUSEUMS[classes[0] % MUSEUMS.len()]
            } else {
                MUSEUMS[rng.random_range(0..MUSEUMS.len())]
            };
            let n_images = if rng.random_bool(config.image_rate) { rng.random_range(1..=config.max_images) } else { 0 };
            let images = (0..n_images)
                .map(|_| embed(&mut rng, &image_protos, &config.image_signal, &classes, config.image_dim, &noise))
                .collect();
            let (text, text_embedding) = if rng.random_bool(config.text_rate) {
                let t = text(&mut rng, &record_id);
                (Some(t), Some(embed(&mut rng, &text_protos, &config.text_signal, &classes, config.text_dim, &noise)))
            } else {
                (None, None)
            };
            let labels = classes
                .iter()
                .enumerate()
                .map(|(t, &c)| rng.random_bool(config.label_rate[t]).then(|| schema.task(t).classes[c].clone()))
                .collect();
            rows.push(SynthRow { record_id, museum: museum.to_string(), text, images, text_embedding, labels });
        }
        Ok(Self { config: config.clone(), rows })
    }

    pub fn csv(&self, schema: &TaskSchema) -> String {
        let mut s = String::from("record_id,museum,text,images");
        for t in schema.task_names() {
            s.push(',');
            s.push_str(&csv_field(t));
        }
        s.push('\n');
        for r in &self.rows {
            let images: Vec<String> = (0..r.images.len()).map(|k| format!("img/{}_{k}.jpg", r.record_id)).collect();
            let images = if images.is_empty() { NA.to_string() } else { images.join("|") };
            let _ = write!(
                s,
                "{},{},{},{}",
                csv_field(&r.record_id),
                csv_field(&r.museum),
                csv_field(r.text.as_deref().unwrap_or(NA)),
                csv_field(&images)
            );
            for l in &r.labels {
                s.push(',');
                s.push_str(&csv_field(l.as_deref().unwrap_or(NA)));
            }
            s.push('\n');
        }
        s
    }

    /// Writes `corpus.csv`, `manifest.tsv` and `emb/*.f32` under `dir`.
    pub fn write(&self, dir: &Path, schema: &TaskSchema) -> Result<SynthPaths> {
        let emb = dir.join("emb");
        std::fs::create_dir_all(&emb)?;
        let mut manifest = String::from("# record_id\tmodality\tpath\tdim\n");
        let bytes = |v: &[f32]| v.iter().flat_map(|x| x.to_le_bytes()).collect::<Vec<u8>>();
        for r in &self.rows {
            for (k, v) in r.images.iter().enumerate() {
                let rel = format!("emb/{}_img{k}.f32", r.record_id);
                write_atomic(&dir.join(&rel), &bytes(v))?;
                let _ = writeln!(manifest, "{}\timage\t{rel}\t{}", r.record_id, v.len());
            }
            if let Some(v) = &r.text_embedding {
                let rel = format!("emb/{}_txt.f32", r.record_id);
                write_atomic(&dir.join(&rel), &bytes(v))?;
                let _ = writeln!(manifest, "{}\ttext\t{rel}\t{}", r.record_id, v.len());
            }
        }
        let paths = SynthPaths { csv: dir.join("corpus.csv"), manifest: dir.join("manifest.tsv") };
        write_atomic(&paths.manifest, manifest.as_bytes())?;
        write_atomic(&paths.csv, self.csv(schema).as_bytes())?;
        Ok(paths)
    }
}
