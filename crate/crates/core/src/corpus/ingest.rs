use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use log::warn;

use super::grouping::GroupingTable;
use super::record::{Record, RecordSet};
use crate::error::{Error, Result};
use crate::schema::{TaskSchema, NA};

/// What to do with a label the grouping table does not know.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnmappedPolicy {
    /// Treat the cell as missing and log a warning.
    #[default]
    Drop,
    Abort,
}

#[derive(Debug, Clone)]
pub struct ParseOptions {
    pub schema: TaskSchema,
    pub grouping: Option<GroupingTable>,
    pub unmapped: UnmappedPolicy,
}

impl ParseOptions {
    pub fn new(schema: TaskSchema) -> Self {
        Self { schema, grouping: None, unmapped: UnmappedPolicy::Drop }
    }

    pub fn with_grouping(mut self, table: GroupingTable) -> Self {
        self.grouping = Some(table);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub record_id: String,
    pub modality: String,
    pub path: PathBuf,
    pub dim: usize,
}

/// Embedding vectors indexed by record id, in manifest order.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingManifest {
    pub image: HashMap<String, Vec<Vec<f32>>>,
    pub text: HashMap<String, Vec<f32>>,
    pub image_dim: Option<usize>,
    pub text_dim: Option<usize>,
}

fn read_vector(path: &Path, dim: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path)?;
    if bytes.len() != dim * 4 {
        return Err(Error::Shape { expected: dim * 4, got: bytes.len() });
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

/// Reads `record_id <TAB> modality <TAB> relative_path <TAB> dim` lines and the
/// little-endian `f32` vector files they point to. Paths resolve against the
/// manifest's directory.
pub fn read_manifest(path: &Path) -> Result<EmbeddingManifest> {
    let text = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut manifest = EmbeddingManifest::default();
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(Error::Parse { row, message: format!("manifest line needs 4 fields, found {}", f.len()) });
        }
        let dim: usize = f[3]
            .trim()
            .parse()
            .map_err(|_| Error::Parse { row, message: format!("bad dimension `{}`", f[3]) })?;
        let entry = ManifestEntry {
            record_id: f[0].trim().to_string(),
            modality: f[1].trim().to_ascii_lowercase(),
            path: base.join(f[2].trim()),
            dim,
        };
        let slot = match entry.modality.as_str() {
            "image" => &mut manifest.image_dim,
            "text" => &mut manifest.text_dim,
            other => return Err(Error::Parse { row, message: format!("unknown modality `{other}`") }),
        };
        match *slot {
            Some(d) if d != dim => return Err(Error::Shape { expected: d, got: dim }),
            _ => *slot = Some(dim),
        }
        let v = read_vector(&entry.path, dim)?;
        if entry.modality == "image" {
            manifest.image.entry(entry.record_id).or_default().push(v);
        } else if manifest.text.insert(entry.record_id.clone(), v).is_some() {
            return Err(Error::Parse { row, message: format!("second text embedding for {}", entry.record_id) });
        }
    }
    Ok(manifest)
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c == NA
}

/// Parses a record CSV and attaches embeddings from `embedding_manifest`.
pub fn parse_records(csv_path: &Path, embedding_manifest: &Path, options: &ParseOptions) -> Result<RecordSet> {
    let manifest = read_manifest(embedding_manifest)?;
    let file = fs::File::open(csv_path)?;
    parse_records_from_reader(file, &manifest, options)
}

pub fn parse_records_from_reader<R: Read>(
    reader: R,
    manifest: &EmbeddingManifest,
    options: &ParseOptions,
) -> Result<RecordSet> {
    let schema = &options.schema;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Parse { row: 0, message: e.to_string() })?.clone();
    let col = |names: &[&str]| headers.iter().position(|h| names.iter().any(|n| h.trim().eq_ignore_ascii_case(n)));
    let need = |names: &[&str]| {
        col(names).ok_or_else(|| Error::Parse { row: 0, message: format!("missing column `{}`", names[0]) })
    };
    let id_col = need(&["record_id", "id"])?;
    let museum_col = need(&["museum"])?;
    let text_col = need(&["text"])?;
    let image_col = need(&["images", "image_refs", "img"])?;
    let task_cols = schema.task_names().map(|t| need(&[t])).collect::<Result<Vec<_>>>()?;

    let mut set = RecordSet::new(schema.clone());
    set.image_dim = manifest.image_dim;
    set.text_dim = manifest.text_dim;
    let mut seen = HashSet::new();

    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| Error::Parse { row: row_no, message: e.to_string() })?;
        let cell = |c: usize| row.get(c).unwrap_or("");
        let record_id = cell(id_col).trim().to_string();
        if record_id.is_empty() || record_id == NA {
            return Err(Error::Parse { row: row_no, message: "empty record_id".into() });
        }
        if !seen.insert(record_id.clone()) {
            return Err(Error::Parse { row: row_no, message: format!("duplicate record_id `{record_id}`") });
        }

        let mut labels = Vec::with_capacity(schema.len());
        for (t, &c) in task_cols.iter().enumerate() {
            let raw = cell(c);
            labels.push(if is_missing(raw) { None } else { resolve_label(options, t, raw)? });
        }

        let image_refs: Vec<String> = if is_missing(cell(image_col)) {
            Vec::new()
        } else {
            cell(image_col).split('|').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
        };
        let mut image_embeddings = manifest.image.get(&record_id).cloned().unwrap_or_default();
        if image_embeddings.len() < image_refs.len() {
            warn!(
                "record {record_id}: {} image refs but {} embeddings",
                image_refs.len(),
                image_embeddings.len()
            );
        } else if image_embeddings.len() > image_refs.len() {
            warn!("record {record_id}: ignoring embeddings without a matching image ref");
            image_embeddings.truncate(image_refs.len());
        }

        let text = (!is_missing(cell(text_col))).then(|| cell(text_col).to_string());
        let text_embedding = if text.is_some() { manifest.text.get(&record_id).cloned() } else { None };

        set.records.push(Record {
            record_id,
            museum: if is_missing(cell(museum_col)) { NA.to_string() } else { cell(museum_col).trim().to_string() },
            text,
            image_refs,
            image_embeddings,
            text_embedding,
            labels,
        });
    }
    set.validate()?;
    Ok(set)
}

fn resolve_label(options: &ParseOptions, task: usize, raw: &str) -> Result<Option<usize>> {
    let t = options.schema.task(task);
    let label = match &options.grouping {
        Some(table) => match table.map(&t.name, raw) {
            Ok(g) => g,
            Err(e) => match options.unmapped {
                UnmappedPolicy::Abort => return Err(e),
                UnmappedPolicy::Drop => {
                    warn!("task {}: dropping unmapped label `{raw}`", t.name);
                    return Ok(None);
                }
            },
        },
        None => raw.trim().to_string(),
    };
    t.class_index(&label)
        .map(Some)
        .ok_or_else(|| Error::Vocabulary { task: t.name.clone(), label })
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "record_id,museum,text,images,place,timespan,technique,material\n";

    fn opts() -> ParseOptions {
        ParseOptions::new(TaskSchema::heritage_default()).with_grouping(GroupingTable::heritage_default())
    }

    fn parse(body: &str) -> Result<RecordSet> {
        parse_records_from_reader(format!("{HEADER}{body}").as_bytes(), &EmbeddingManifest::default(), &opts())
    }

    #[test]
    fn published_example_row() {
        let set = parse("r1,vam,\"Furnishing fabric, woven, British\",URL1,Great Britain,XIX,[NA],[NA]\n").unwrap();
        let r = &set.records[0];
        assert_eq!(r.museum, "vam");
        assert_eq!(r.labels, vec![Some(2), Some(0), None, None]);
        assert_eq!(set.schema.task(0).classes[2], "GB");
        assert_eq!(r.image_refs, vec!["URL1"]);
        assert!(r.image_embeddings.is_empty());
    }

    #[test]
    fn header_only_is_empty() {
        assert!(parse("").unwrap().is_empty());
    }

    #[test]
    fn all_missing_labels_are_kept() {
        let set = parse("r1,met,[NA],[NA],[NA],[NA],[NA],[NA]\n").unwrap();
        assert!(set.records[0].is_unlabeled());
        assert!(!set.records[0].has_image());
        assert!(!set.records[0].has_text());
    }

    #[test]
    fn malformed_row_reports_row_number() {
        let err = parse("r1,vam,t,URL,FR,XIX,damask,silk\nr2,vam,t\n").unwrap_err();
        assert!(matches!(err, Error::Parse { row: 2, .. }), "{err:?}");
    }

    #[test]
    fn out_of_vocabulary_label_is_named() {
        let o = ParseOptions::new(TaskSchema::heritage_default());
        let err = parse_records_from_reader(
            format!("{HEADER}r1,vam,t,URL,Atlantis,XIX,damask,silk\n").as_bytes(),
            &EmbeddingManifest::default(),
            &o,
        )
        .unwrap_err();
        match err {
            Error::Vocabulary { task, label } => {
                assert_eq!(task, "place");
                assert_eq!(label, "Atlantis");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unmapped_policy() {
        let body = "r1,vam,t,URL,Atlantis,XIX,damask,silk\n";
        let set = parse(body).unwrap();
        assert_eq!(set.records[0].labels[0], None);
        let mut o = opts();
        o.unmapped = UnmappedPolicy::Abort;
        let err = parse_records_from_reader(format!("{HEADER}{body}").as_bytes(), &EmbeddingManifest::default(), &o);
        assert!(matches!(err, Err(Error::UnmappedLabel(_))));
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(parse("r1,vam,[NA],[NA],FR,[NA],[NA],[NA]\nr1,vam,[NA],[NA],FR,[NA],[NA],[NA]\n").is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let write = |name: &str, v: &[f32]| {
            let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
            std::fs::write(dir.path().join(name), bytes).unwrap();
        };
        write("a0.f32", &[1.0, 2.0]);
        write("t.f32", &[0.5, -0.5, 3.0]);
        std::fs::write(
            dir.path().join("manifest.tsv"),
            "# record_id\tmodality\tpath\tdim\nr1\timage\ta0.f32\t2\nr1\ttext\tt.f32\t3\n",
        )
        .unwrap();
        let csv = dir.path().join("c.csv");
        std::fs::write(&csv, format!("{HEADER}r1,vam,some text,a0|a1,FR,[NA],[NA],[NA]\n")).unwrap();
        let set = parse_records(&csv, &dir.path().join("manifest.tsv"), &opts()).unwrap();
        let r = &set.records[0];
        assert_eq!(r.image_embeddings, vec![vec![1.0, 2.0]]);
        assert_eq!(r.image_refs.len(), 2);
        assert_eq!(r.text_embedding.as_deref(), Some(&[0.5, -0.5, 3.0][..]));
        assert_eq!((set.image_dim, set.text_dim), (Some(2), Some(3)));
    }
}
