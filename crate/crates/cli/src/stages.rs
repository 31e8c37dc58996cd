//! Pipeline stages. Each stage reads the artifacts of the stages before it and fails
//! with a dependency error naming the first one that is missing.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::{SubsecRound, Utc};
use log::info;
use mmfuse::corpus::{
    compute_stats, filter_corpus, parse_records, split_records, GroupingTable, Modality, ParseOptions, Record, RecordSet,
    Split, SplitAssignment,
};
use mmfuse::fsutil::{write_atomic, write_atomic_str};
use mmfuse::fusion::{
    ablate_modalities, all_subsets, build_fusion_rows, fusion_row, subset_name, tune_and_train_fusion, DecisionSet,
    FusionManifest, FusionModel, FUSION_COLUMNS,
};
use mmfuse::gbdt::TreeEnsemble;
use mmfuse::grid::results_csv;
use mmfuse::metrics::{comparison_csv, cross_task_average, evaluate, render_reports, ComparisonColumn, TaskReport};
use mmfuse::mtnet::{checkpoint, predict_record, train, HeadTopology, Sample, TrainConfig, TrainLog};
use mmfuse::provexport::{
    emit_ttl, map_facet_to_concept, percent_encode, ClassUriMap, ConceptMap, ExportConfig, PredictionStatement, PropertyMap,
    SoftwareAgent,
};
use mmfuse::stamp::{stamped_csv, RunStamp};
use mmfuse::synth::{SynthConfig, SynthCorpus};
use mmfuse::tabular::{build_tabular_inputs, grid_search_tabular, TabularModel};
use mmfuse::{Error, HeadModel, ModalityDecision, Result, TaskSchema};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Resolved, RunConfig};

/// File names under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

fn stem(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn archive(&self) -> PathBuf {
        self.corpus_dir().join("archive.json")
    }

    pub fn head_dir(&self, m: Modality) -> PathBuf {
        self.root.join(m.as_str())
    }

    pub fn head_model(&self, m: Modality) -> PathBuf {
        self.head_dir(m).join("model.bin")
    }

    pub fn tabular_dir(&self) -> PathBuf {
        self.root.join("tabular")
    }

    pub fn tabular_model(&self, task: &str) -> PathBuf {
        self.tabular_dir().join(format!("model_{}.json", stem(task)))
    }

    pub fn fusion_dir(&self) -> PathBuf {
        self.root.join("fusion")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn ttl(&self) -> PathBuf {
        self.root.join("ttl").join("predictions.ttl")
    }
}

fn require(path: &Path, what: &str, stage: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Dependency(format!("{what} ({}) is missing; run `mmfuse {stage}` first", path.display())))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic_str(path, &s)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Filtered corpus and its split, the input of every training stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusArchive {
    pub stamp: RunStamp,
    pub records: RecordSet,
    pub split: SplitAssignment,
}

impl CorpusArchive {
    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.records.iter().filter(move |r| self.split.get(&r.record_id) == Some(split))
    }

    pub fn schema(&self) -> &TaskSchema {
        &self.records.schema
    }
}

fn load_archive(layout: &Layout, run: &Resolved) -> Result<CorpusArchive> {
    require(&layout.archive(), "corpus archive", "ingest")?;
    let a: CorpusArchive = read_json(&layout.archive())?;
    if a.stamp != run.stamp {
        log::warn!("corpus archive was written under a different configuration ({})", a.stamp.config_sha256);
    }
    Ok(a)
}

pub fn synth(dir: &Path, config: &SynthConfig) -> Result<()> {
    let schema = TaskSchema::heritage_default();
    let corpus = SynthCorpus::generate(config, &schema)?;
    let paths = corpus.write(dir, &schema)?;
    let run = desk_config(config.seed);
    write_atomic_str(&dir.join("config.toml"), &run.to_toml()?)?;
    info!("synthetic corpus of {} records written to {}", corpus.rows.len(), paths.csv.display());
    Ok(())
}

/// Settings sized for the synthetic corpus: small heads, short training, narrow grids.
pub fn desk_config(seed: u64) -> RunConfig {
    use mmfuse::grid::{BoostGrid, SampleWeighting};
    let mut c = RunConfig { seed, ..RunConfig::default() };
    c.filter.min_label_count = 20;
    for (head, hidden) in [(&mut c.image, None), (&mut c.text, Some(8))] {
        head.trunk = vec![32, 16];
        head.head_hidden = hidden;
        head.train.adam.learning_rate = 3e-3;
        head.train.batch_size = 32;
        head.train.max_epochs = 40;
        head.train.patience = 5;
    }
    let grid = BoostGrid {
        max_depth: vec![2, 4],
        min_child_weight: vec![1.0],
        gamma: vec![0.0],
        subsample: vec![1.0],
        colsample_bytree: vec![1.0],
        learning_rate: vec![0.3],
        n_rounds: vec![20, 50],
        lambda: vec![1.0],
        sample_weight: vec![SampleWeighting::None, SampleWeighting::Balanced],
        seed,
    };
    c.tabular.grid = grid.clone();
    c.fusion.grid = grid;
    c.export.timestamp = Some(chrono::DateTime::from_timestamp(1_700_000_000, 0).expect("valid time"));
    c
}

pub fn ingest(run: &Resolved) -> Result<()> {
    run.require_inputs()?;
    let cfg = &run.config;
    let layout = Layout::new(run.out_dir());
    let mut options = ParseOptions::new(run.schema.clone());
    if let Some(g) = &cfg.paths.grouping {
        options = options.with_grouping(GroupingTable::load(&run.input(g))?);
    }
    let parsed = parse_records(&run.input(&cfg.paths.corpus), &run.input(&cfg.paths.manifest), &options)?;
    let records = filter_corpus(&parsed, cfg.filter);
    let split = split_records(&records, cfg.seed, cfg.split_ratios)?;
    let stats = compute_stats(&records, &split);
    let dir = layout.corpus_dir();
    let st = Some(&run.stamp);
    write_atomic_str(&dir.join("stats_museums.csv"), &stamped_csv(st, &stats.museums_csv()))?;
    write_atomic_str(&dir.join("stats_classes.csv"), &stamped_csv(st, &stats.classes_csv()))?;
    write_atomic_str(&dir.join("stats_modality.csv"), &stamped_csv(st, &stats.modality_csv()))?;
    write_atomic_str(&dir.join("stats_text_lengths.csv"), &stamped_csv(st, &stats.text_lengths_csv()))?;
    write_atomic_str(&dir.join("split.tsv"), &stamped_csv(st, &split.to_tsv()))?;
    info!(
        "ingested {} records, {} after filtering (train {}, validation {}, test {})",
        parsed.len(),
        records.len(),
        split.count(Split::Train),
        split.count(Split::Validation),
        split.count(Split::Test)
    );
    write_json(&layout.archive(), &CorpusArchive { stamp: run.stamp.clone(), records, split })
}

fn samples<'a>(records: impl Iterator<Item = &'a Record>, m: Modality) -> Vec<Sample<f64>> {
    records
        .flat_map(|r| {
            r.embeddings(m).into_iter().map(|e| Sample { x: e.iter().map(|&v| v as f64).collect(), labels: r.labels.clone() })
        })
        .collect()
}

/// Checkpoint sidecar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeadMeta {
    pub stamp: RunStamp,
    pub modality: Modality,
    pub topology: HeadTopology,
    pub train: TrainConfig,
    pub log: TrainLog,
}

/// Validation reports for any per-record decision source.
fn validation_reports(
    archive: &CorpusArchive,
    split: Split,
    decide: impl Fn(&Record, usize) -> Result<Option<usize>>,
) -> Result<Vec<(TaskReport, mmfuse::metrics::ConfusionMatrix)>> {
    archive
        .schema()
        .tasks()
        .iter()
        .enumerate()
        .map(|(t, task)| {
            let (mut preds, mut truths) = (Vec::new(), Vec::new());
            for r in archive.in_split(split) {
                if let Some(y) = r.label(t) {
                    preds.push(decide(r, t)?);
                    truths.push(y);
                }
            }
            evaluate(task, &preds, &truths)
        })
        .collect()
}

fn render(dir: &Path, prefix: &str, out: Vec<(TaskReport, mmfuse::metrics::ConfusionMatrix)>, stamp: &RunStamp) -> Result<Vec<TaskReport>> {
    let (reports, matrices): (Vec<_>, Vec<_>) = out.into_iter().unzip();
    render_reports(&reports, &matrices, dir, prefix, Some(stamp))?;
    Ok(reports)
}

pub fn train_head(run: &Resolved, m: Modality) -> Result<()> {
    let layout = Layout::new(run.out_dir());
    let archive = load_archive(&layout, run)?;
    let head = match m {
        Modality::Image => &run.config.image,
        Modality::Text => &run.config.text,
        Modality::Tabular => return train_tabular(run),
    };
    let dim = archive.records.dim(m).ok_or_else(|| Error::Config(format!("corpus has no {m} embeddings")))?;
    let topology = head.topology(dim, archive.schema().class_counts());
    let tc = run.config.train_config(head);
    let train_set = samples(archive.in_split(Split::Train), m);
    let val_set = samples(archive.in_split(Split::Validation), m);
    info!("{m} head: {} training and {} validation embeddings", train_set.len(), val_set.len());
    let model = HeadModel::initialized(topology.clone(), run.config.seed)?;
    let (model, log) = train(model, &train_set, &val_set, &tc)?;
    info!("{m} head: best epoch {} of {}", log.best_epoch, log.epochs.len());
    let meta = HeadMeta { stamp: run.stamp.clone(), modality: m, topology, train: tc, log };
    checkpoint::save_with_sidecar(&model, &layout.head_model(m), &meta)?;
    let out = validation_reports(&archive, Split::Validation, |r, t| Ok(predict_record(&model, r, m)?[t].class))?;
    render(&layout.head_dir(m), "validation_", out, &run.stamp)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StampedTabular {
    pub stamp: RunStamp,
    pub model: TabularModel,
}

pub fn train_tabular(run: &Resolved) -> Result<()> {
    let layout = Layout::new(run.out_dir());
    let archive = load_archive(&layout, run)?;
    let schema = archive.schema().clone();
    let dir = layout.tabular_dir();
    let mut models = Vec::new();
    for task in schema.tasks() {
        let tr = build_tabular_inputs(archive.in_split(Split::Train), &schema, &task.name)?;
        let va = build_tabular_inputs(archive.in_split(Split::Validation), &schema, &task.name)?;
        let (model, results) = grid_search_tabular(&tr, &va, &run.config.tabular.grid, &schema)?;
        write_atomic_str(
            &dir.join(format!("grid_results_{}.csv", stem(&task.name))),
            &stamped_csv(Some(&run.stamp), &results_csv(&results)),
        )?;
        write_json(&layout.tabular_model(&task.name), &StampedTabular { stamp: run.stamp.clone(), model: model.clone() })?;
        models.push(model);
    }
    let out = validation_reports(&archive, Split::Validation, |r, t| Ok(models[t].predict_record(r, &schema)?.class))?;
    render(&dir, "validation_", out, &run.stamp)?;
    Ok(())
}

/// Fusion manifest with its stamp; the ensemble lives in `ensemble_file` beside it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StampedFusion {
    pub stamp: RunStamp,
    pub manifest: FusionManifest,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StampedEnsemble {
    pub stamp: RunStamp,
    pub ensemble: TreeEnsemble<f64>,
}

fn load_decisions(layout: &Layout, archive: &CorpusArchive) -> Result<DecisionSet> {
    let schema = archive.schema();
    let mut heads = Vec::new();
    for m in [Modality::Image, Modality::Text] {
        let p = layout.head_model(m);
        require(&p, &format!("{m} checkpoint"), &format!("train {m}"))?;
        heads.push((m, checkpoint::load::<f64>(&p)?));
    }
    let mut tabular = Vec::new();
    for task in schema.tasks() {
        let p = layout.tabular_model(&task.name);
        require(&p, &format!("tabular model for `{}`", task.name), "train tabular")?;
        tabular.push(read_json::<StampedTabular>(&p)?.model);
    }
    let mut decisions = DecisionSet::default();
    for r in &archive.records.records {
        for (m, model) in &heads {
            decisions.insert(&r.record_id, predict_record(model, r, *m)?);
        }
        let tab = tabular.iter().map(|t| t.predict_record(r, schema)).collect::<Result<Vec<ModalityDecision>>>()?;
        decisions.insert(&r.record_id, tab);
    }
    Ok(decisions)
}

fn model_id(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}

pub fn fuse(run: &Resolved) -> Result<()> {
    let layout = Layout::new(run.out_dir());
    let archive = load_archive(&layout, run)?;
    let decisions = load_decisions(&layout, &archive)?;
    let schema = archive.schema().clone();
    let grid = &run.config.fusion.grid;
    let dir = layout.fusion_dir();
    let st = Some(&run.stamp);

    let names = ["image", "text", "tabular", "multimodal"];
    let mut columns: Vec<ComparisonColumn> =
        names.iter().map(|n| ComparisonColumn { name: n.to_string(), reports: Vec::new() }).collect();
    let mut ablation: Vec<Vec<f64>> = Vec::new();
    let mut fused = Vec::new();
    for (t, task) in schema.tasks().iter().enumerate() {
        let val_rows = build_fusion_rows(archive.in_split(Split::Validation), &decisions, task, t)?;
        let test_rows = build_fusion_rows(archive.in_split(Split::Test), &decisions, task, t)?;
        let (model, results) = tune_and_train_fusion(&val_rows, &FUSION_COLUMNS, grid, task, t)?;
        let s = stem(&task.name);
        let ensemble_json = model.ensemble.to_json()?;
        let ensemble_file = format!("ensemble_{s}.json");
        write_json(&dir.join(&ensemble_file), &StampedEnsemble { stamp: run.stamp.clone(), ensemble: model.ensemble.clone() })?;
        write_json(&dir.join(format!("model_{s}.json")), &StampedFusion { stamp: run.stamp.clone(), manifest: model.manifest(task, &ensemble_file) })?;
        write_atomic_str(&dir.join(format!("grid_results_{s}.csv")), &stamped_csv(st, &results_csv(&results)))?;

        let truths: Vec<usize> = test_rows.iter().map(|r| r.target.expect("rows are labeled")).collect();
        for (c, col) in columns.iter_mut().enumerate() {
            let preds: Vec<Option<usize>> = if c < 3 {
                test_rows.iter().map(|r| r.columns[c]).collect()
            } else {
                test_rows.iter().map(|r| model.predict(r).map(|(k, _)| Some(k))).collect::<Result<_>>()?
            };
            let (report, matrix) = evaluate(task, &preds, &truths)?;
            render_reports(&[report.clone()], &[matrix], &layout.reports_dir(), &format!("test_{}_", col.name), st)?;
            col.reports.push(report);
        }
        if run.config.fusion.ablation {
            let entries = ablate_modalities(&val_rows, &test_rows, &all_subsets(), grid, task, t)?;
            ablation.push(entries.iter().map(|e| e.test_macro_f1).collect());
        }
        fused.push((model, model_id(ensemble_json.as_bytes())));
    }
    write_atomic_str(&dir.join("comparison.csv"), &stamped_csv(st, &comparison_csv(&columns)?))?;
    if run.config.fusion.ablation {
        write_atomic_str(&dir.join("ablation.csv"), &stamped_csv(st, &ablation_csv(&schema, &ablation)))?;
    }
    let avg = cross_task_average(&columns[3].reports)?;
    info!("multimodal test macro-F1 averaged over tasks: {:.4}", avg.macro_f1);
    export_unlabeled(run, &layout, &archive, &decisions, &fused)
}

fn ablation_csv(schema: &TaskSchema, f1: &[Vec<f64>]) -> String {
    let mut s = String::from("modalities");
    for t in schema.task_names() {
        s.push(',');
        s.push_str(t);
    }
    s.push_str(",average\n");
    for (i, subset) in all_subsets().iter().enumerate() {
        s.push_str(&subset_name(subset));
        let mut sum = 0.0;
        for task in f1 {
            let _ = write!(s, ",{:.4}", task[i]);
            sum += task[i];
        }
        let _ = writeln!(s, ",{:.4}", sum / f1.len().max(1) as f64);
    }
    s
}

/// Fused predictions for every (record, task) without a gold label, as Turtle.
fn export_unlabeled(
    run: &Resolved,
    layout: &Layout,
    archive: &CorpusArchive,
    decisions: &DecisionSet,
    fused: &[(FusionModel, String)],
) -> Result<()> {
    let ex = &run.config.export;
    let load_or = |p: &Option<PathBuf>| p.as_ref().map(|p| run.input(p));
    let concepts = match load_or(&ex.concepts) {
        Some(p) => ConceptMap::load(&p)?,
        None => ConceptMap::heritage_default(),
    };
    let properties = match load_or(&ex.properties) {
        Some(p) => PropertyMap::load(&p)?,
        None => PropertyMap::heritage_default(),
    };
    let class_uris = match load_or(&ex.class_uris) {
        Some(p) => ClassUriMap::load(&p)?,
        None => ClassUriMap::heritage_default(),
    };
    let timestamp = ex.timestamp.unwrap_or_else(Utc::now).trunc_subsecs(0);
    let schema = archive.schema();
    let mut statements = Vec::new();
    for r in &archive.records.records {
        let id = percent_encode(&r.record_id);
        for (t, task) in schema.tasks().iter().enumerate() {
            if r.label(t).is_some() {
                continue;
            }
            let (model, model_id) = &fused[t];
            let row = fusion_row(r, decisions, task, t)?;
            let (c, p) = model.predict(&row)?;
            let used = FUSION_COLUMNS
                .iter()
                .zip(row.columns)
                .filter(|(_, c)| c.is_some())
                .map(|(m, _)| format!("{}{id}/{m}", ex.object_base))
                .collect();
            statements.push(PredictionStatement {
                record_id: r.record_id.clone(),
                task: task.name.clone(),
                subject: format!("{}{id}", ex.production_base),
                predicate: properties.property(&task.name)?.to_string(),
                object: map_facet_to_concept(&class_uris.uri(&task.name, &task.classes[c]), &concepts)?,
                confidence: p,
                timestamp,
                agent: SoftwareAgent { label: format!("multimodal late fusion classifier ({})", task.name), model: model_id.clone() },
                used,
            });
        }
    }
    let path = layout.ttl();
    if statements.is_empty() {
        if path.exists() {
            std::fs::remove_file(&path)?;
        }
        info!("every record is fully labeled; nothing to export");
        return Ok(());
    }
    let ttl = emit_ttl(&statements, &ExportConfig { graph: ex.graph.clone() }, Some(&run.stamp))?;
    write_atomic(&path, ttl.as_bytes())?;
    info!("{} predictions exported to {}", statements.len(), path.display());
    Ok(())
}

/// Loads a fusion model written by [`fuse`].
pub fn load_fusion(layout: &Layout, task: &str) -> Result<FusionModel> {
    let dir = layout.fusion_dir();
    let p = dir.join(format!("model_{}.json", stem(task)));
    require(&p, &format!("fusion model for `{task}`"), "fuse")?;
    let m: StampedFusion = read_json(&p)?;
    let e: StampedEnsemble = read_json(&dir.join(&m.manifest.ensemble_file))?;
    Ok(FusionModel::from_parts(&m.manifest, e.ensemble))
}

pub fn pipeline(run: &Resolved) -> Result<()> {
    ingest(run)?;
    train_head(run, Modality::Image)?;
    train_head(run, Modality::Text)?;
    train_tabular(run)?;
    fuse(run)
}
