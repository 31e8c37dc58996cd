//! Run configuration: one TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use mmfuse::corpus::{FilterConfig, DEFAULT_RATIOS};
use mmfuse::grid::BoostGrid;
use mmfuse::imbalance::ImbalanceStrategy;
use mmfuse::mtnet::{HeadTopology, LossKind, TrainConfig, DEFAULT_DROPOUT, DEFAULT_GAMMA, DEFAULT_TRUNK};
use mmfuse::provexport::DEFAULT_GRAPH;
use mmfuse::stamp::RunStamp;
use mmfuse::{Error, Result, Task, TaskSchema};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum LossChoice {
    #[default]
    Softmax,
    Focal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    pub manifest: PathBuf,
    pub grouping: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { corpus: "corpus.csv".into(), manifest: "manifest.tsv".into(), grouping: None, out: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSection {
    pub trunk: Vec<usize>,
    pub head_hidden: Option<usize>,
    pub dropout: f64,
    pub train: TrainConfig,
}

impl HeadSection {
    fn image() -> Self {
        Self { trunk: DEFAULT_TRUNK.to_vec(), head_hidden: None, dropout: DEFAULT_DROPOUT, train: TrainConfig::image() }
    }

    fn text() -> Self {
        Self { head_hidden: Some(DEFAULT_TRUNK[1]), train: TrainConfig::text(), ..Self::image() }
    }

    pub fn topology(&self, input_dim: usize, outputs: Vec<usize>) -> HeadTopology {
        HeadTopology { input_dim, trunk: self.trunk.clone(), head_hidden: self.head_hidden, dropout: self.dropout, outputs }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    /// JSON grid file; replaces `grid` when set.
    pub grid_file: Option<PathBuf>,
    pub grid: BoostGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSection {
    pub grid_file: Option<PathBuf>,
    pub grid: BoostGrid,
    pub ablation: bool,
}

impl Default for FusionSection {
    fn default() -> Self {
        Self { grid_file: None, grid: BoostGrid::fusion_reference(), ablation: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportSection {
    pub graph: String,
    pub production_base: String,
    pub object_base: String,
    pub concepts: Option<PathBuf>,
    pub properties: Option<PathBuf>,
    pub class_uris: Option<PathBuf>,
    /// Generation time written into the export; the clock is read when unset.
    pub timestamp: Option<DateTime<Utc>>,
}

impl Default for ExportSection {
    fn default() -> Self {
        Self {
            graph: DEFAULT_GRAPH.into(),
            production_base: "http://data.silknow.org/production/".into(),
            object_base: "http://data.silknow.org/object/".into(),
            concepts: None,
            properties: None,
            class_uris: None,
            timestamp: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub loss: LossChoice,
    pub gamma: f64,
    pub imbalance: ImbalanceStrategy,
    pub paths: Paths,
    /// Task vocabularies; the built-in heritage schema when absent.
    pub tasks: Option<Vec<Task>>,
    pub filter: FilterConfig,
    pub split_ratios: [f64; 3],
    #[serde(deserialize_with = "image_head")]
    pub image: HeadSection,
    #[serde(deserialize_with = "text_head")]
    pub text: HeadSection,
    pub tabular: GridSection,
    pub fusion: FusionSection,
    pub export: ExportSection,
}

fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// A partial table is read over the section's preset rather than over field defaults.
fn head_over<'de, D: serde::Deserializer<'de>>(d: D, preset: HeadSection) -> std::result::Result<HeadSection, D::Error> {
    use serde::de::Error as _;
    let patch = serde_json::Value::deserialize(d)?;
    let mut base = serde_json::to_value(preset).map_err(D::Error::custom)?;
    merge(&mut base, patch);
    serde_json::from_value(base).map_err(D::Error::custom)
}

fn image_head<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<HeadSection, D::Error> {
    head_over(d, HeadSection::image())
}

fn text_head<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<HeadSection, D::Error> {
    head_over(d, HeadSection::text())
}

impl Default for GridSection {
    fn default() -> Self {
        Self { grid_file: None, grid: BoostGrid::tabular_reference() }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            loss: LossChoice::Softmax,
            gamma: DEFAULT_GAMMA,
            imbalance: ImbalanceStrategy::None,
            paths: Paths::default(),
            tasks: None,
            filter: FilterConfig::default(),
            split_ratios: DEFAULT_RATIOS,
            image: HeadSection::image(),
            text: HeadSection::text(),
            tabular: GridSection::default(),
            fusion: FusionSection::default(),
            export: ExportSection::default(),
        }
    }
}

/// Flag values layered over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub loss: Option<LossChoice>,
    pub imbalance: Option<ImbalanceStrategy>,
    pub tabular_grid: Option<PathBuf>,
    pub fusion_grid: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Effective configuration with file paths resolved.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub schema: TaskSchema,
    pub stamp: RunStamp,
    /// Directory relative input paths are resolved against.
    pub base: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid configuration: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    /// Canonical bytes for the provenance hash; the output location is left out so
    /// the same run in two directories carries the same stamp.
    fn canonical(&self) -> Result<Vec<u8>> {
        let mut c = self.clone();
        c.paths.out = PathBuf::new();
        Ok(serde_json::to_vec(&c)?)
    }

    pub fn train_config(&self, head: &HeadSection) -> TrainConfig {
        let mut t = head.train.clone().with_imbalance(self.imbalance);
        t.loss = match self.loss {
            LossChoice::Softmax => LossKind::SoftmaxCe,
            LossChoice::Focal => LossKind::Focal { gamma: self.gamma },
        };
        t.seed = self.seed;
        t
    }
}

fn load_grid(base: &Path, file: &Option<PathBuf>, inline: &BoostGrid) -> Result<BoostGrid> {
    match file {
        Some(p) => BoostGrid::load(&base.join(p)),
        None => Ok(inline.clone()),
    }
}

/// Reads the config file (or defaults), applies overrides and checks inputs.
pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<Resolved> {
    let (mut config, base) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
            (RunConfig::parse(&text)?, p.parent().map(Path::to_path_buf).unwrap_or_default())
        }
        None => (RunConfig::default(), PathBuf::new()),
    };
    if let Some(s) = overrides.seed {
        config.seed = s;
    }
    if let Some(l) = overrides.loss {
        config.loss = l;
    }
    if let Some(i) = overrides.imbalance {
        config.imbalance = i;
    }
    if let Some(out) = &overrides.out {
        config.paths.out = std::path::absolute(out)?;
    }
    // grids are inlined so the stamp covers their content, not a file name
    if let Some(g) = &overrides.tabular_grid {
        config.tabular.grid = BoostGrid::load(g)?;
        config.tabular.grid_file = None;
    }
    if let Some(g) = &overrides.fusion_grid {
        config.fusion.grid = BoostGrid::load(g)?;
        config.fusion.grid_file = None;
    }
    config.tabular.grid = load_grid(&base, &config.tabular.grid_file.take(), &config.tabular.grid)?;
    config.fusion.grid = load_grid(&base, &config.fusion.grid_file.take(), &config.fusion.grid)?;
    config.tabular.grid.seed = config.seed;
    config.fusion.grid.seed = config.seed;
    if !(config.gamma >= 0.0) {
        return Err(Error::Config("focal gamma must be >= 0".into()));
    }
    let schema = match &config.tasks {
        Some(t) => TaskSchema::new(t.clone())?,
        None => TaskSchema::heritage_default(),
    };
    let stamp = RunStamp::new(&config.canonical()?, config.seed);
    Ok(Resolved { config, schema, stamp, base })
}

impl Resolved {
    pub fn input(&self, p: &Path) -> PathBuf {
        self.base.join(p)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.base.join(&self.config.paths.out)
    }

    /// Fails with a configuration error naming the first missing input file.
    pub fn require_inputs(&self) -> Result<()> {
        let p = &self.config.paths;
        let mut files = vec![("corpus CSV", &p.corpus), ("embedding manifest", &p.manifest)];
        if let Some(g) = &p.grouping {
            files.push(("grouping table", g));
        }
        for (what, f) in files {
            let full = self.input(f);
            if !full.is_file() {
                return Err(Error::Config(format!("{what} not found: {}", full.display())));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn partial_head_tables_keep_their_preset() {
        let c = RunConfig::parse("[text]\ntrunk = [4]\n[text.train]\nbatch_size = 7\n").unwrap();
        assert_eq!(c.text.trunk, vec![4]);
        assert_eq!(c.text.train.batch_size, 7);
        assert_eq!(c.text.train.adam, TrainConfig::text().adam);
        assert_eq!(c.text.head_hidden, HeadSection::text().head_hidden);
        assert_eq!(c.image, HeadSection::image());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::parse("sed = 3\n"), Err(Error::Config(_))));
        assert!(RunConfig::parse("[image]\nwidth = 3\n").is_err());
    }

    #[test]
    fn stamp_ignores_output_directory() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        std::fs::write(&cfg, "seed = 3\n").unwrap();
        let a = resolve(Some(&cfg), &Overrides { out: Some("x".into()), ..Overrides::default() }).unwrap();
        let b = resolve(Some(&cfg), &Overrides { out: Some("y".into()), ..Overrides::default() }).unwrap();
        assert_eq!(a.stamp, b.stamp);
        let c = resolve(Some(&cfg), &Overrides { seed: Some(4), ..Overrides::default() }).unwrap();
        assert_ne!(a.stamp.config_sha256, c.stamp.config_sha256);
        assert_eq!(c.config.tabular.grid.seed, 4);
    }

    #[test]
    fn flags_select_training_objective() {
        let mut c = RunConfig { loss: LossChoice::Focal, imbalance: ImbalanceStrategy::UniformSampling, ..RunConfig::default() };
        c.seed = 9;
        let t = c.train_config(&c.image);
        assert_eq!(t.loss, LossKind::Focal { gamma: DEFAULT_GAMMA });
        assert_eq!(t.seed, 9);
        assert!(!t.balanced_class_weights);
    }
}
