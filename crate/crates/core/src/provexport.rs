//! Predictions as reified RDF statements with PROV-O provenance, written as Turtle.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::stamp::RunStamp;

pub const DEFAULT_GRAPH: &str = "http://data.silknow.org/predictions";
pub const SILKNOW_ONTOLOGY: &str = "http://data.silknow.org/ontology/";
pub const CRM: &str = "http://erlangen-crm.org/current/";
const FACET_MARKER: &str = "/facet/";

const DEFAULT_CONCEPTS: &str = include_str!("../../../data/concepts.tsv");
const DEFAULT_PROPERTIES: &str = include_str!("../../../data/properties.tsv");
const DEFAULT_CLASS_URIS: &str = include_str!("../../../data/class_uris.tsv");

const PREFIXES: [(&str, &str); 6] = [
    ("crm", CRM),
    ("prov", "http://www.w3.org/ns/prov#"),
    ("rdf", "http://www.w3.org/1999/02/22-rdf-syntax-ns#"),
    ("rdfs", "http://www.w3.org/2000/01/rdf-schema#"),
    ("silk", SILKNOW_ONTOLOGY),
    ("xsd", "http://www.w3.org/2001/XMLSchema#"),
];

fn parse_tsv(text: &str, fields: usize) -> Result<Vec<Vec<String>>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<String> = line.split('\t').map(|s| s.trim().to_string()).collect();
        if parts.len() != fields {
            return Err(Error::Parse { row: i + 1, message: format!("expected {fields} tab-separated fields") });
        }
        out.push(parts);
    }
    Ok(out)
}

fn read_table(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))
}

/// Facet URI to thesaurus concept URI.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptMap {
    entries: BTreeMap<String, String>,
}

impl ConceptMap {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(Self { entries: parse_tsv(text, 2)?.into_iter().map(|mut r| (r.remove(0), r.remove(0))).collect() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_table(path)?)
    }

    pub fn heritage_default() -> Self {
        Self::parse(DEFAULT_CONCEPTS).expect("bundled concept table parses")
    }

    pub fn insert(&mut self, facet: &str, concept: &str) {
        self.entries.insert(facet.to_string(), concept.to_string());
    }
}

/// Concept URI for a facet URI; URIs that are not facets pass through unchanged.
pub fn map_facet_to_concept(uri: &str, map: &ConceptMap) -> Result<String> {
    if let Some(c) = map.entries.get(uri) {
        return Ok(c.clone());
    }
    if uri.contains(FACET_MARKER) {
        return Err(Error::UnmappedFacet(uri.to_string()));
    }
    Ok(uri.to_string())
}

/// Task name to the CIDOC-CRM property a prediction asserts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyMap {
    by_task: BTreeMap<String, String>,
}

impl PropertyMap {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(Self { by_task: parse_tsv(text, 2)?.into_iter().map(|mut r| (r.remove(0), r.remove(0))).collect() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_table(path)?)
    }

    pub fn heritage_default() -> Self {
        Self::parse(DEFAULT_PROPERTIES).expect("bundled property table parses")
    }

    pub fn property(&self, task: &str) -> Result<&str> {
        self.by_task.get(task).map(String::as_str).ok_or_else(|| Error::UnknownTask(task.to_string()))
    }
}

/// URI for each (task, class) pair; classes without an entry get
/// `<fallback><task>:<class slug>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassUriMap {
    entries: BTreeMap<(String, String), String>,
    pub fallback: String,
}

impl ClassUriMap {
    pub const DEFAULT_FALLBACK: &'static str = "urn:mmfuse:class:";

    pub fn parse(text: &str) -> Result<Self> {
        let entries = parse_tsv(text, 3)?.into_iter().map(|mut r| ((r.remove(0), r.remove(0)), r.remove(0))).collect();
        Ok(Self { entries, fallback: Self::DEFAULT_FALLBACK.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_table(path)?)
    }

    pub fn heritage_default() -> Self {
        Self::parse(DEFAULT_CLASS_URIS).expect("bundled class table parses")
    }

    pub fn uri(&self, task: &str, class: &str) -> String {
        match self.entries.get(&(task.to_string(), class.to_string())) {
            Some(u) => u.clone(),
            None => format!("{}{}:{}", self.fallback, percent_encode(task), percent_encode(&class.to_lowercase())),
        }
    }
}

/// Percent-encodes everything outside the URI unreserved set.
pub fn percent_encode(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || b"-._~".contains(&b) {
            out.push(b as char);
        } else {
            let _ = write!(out, "%{b:02X}");
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SoftwareAgent {
    /// Human-readable algorithm name.
    pub label: String,
    /// Model identifier, e.g. a checkpoint digest.
    pub model: String,
}

/// One prediction to export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionStatement {
    pub record_id: String,
    pub task: String,
    /// Production entity of the object.
    pub subject: String,
    pub predicate: String,
    /// Predicted concept.
    pub object: String,
    pub confidence: f64,
    pub timestamp: DateTime<Utc>,
    pub agent: SoftwareAgent,
    /// Input resources the prediction was computed from.
    pub used: Vec<String>,
}

fn check_uri(uri: &str) -> Result<()> {
    let bad = uri.chars().any(|c| c.is_whitespace() || c.is_control() || "<>\"{}|^`\\".contains(c));
    match url::Url::parse(uri) {
        Ok(_) if !bad => Ok(()),
        _ => Err(Error::Serialization(format!("not an absolute URI: `{uri}`"))),
    }
}

impl PredictionStatement {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::Validation(format!("confidence {} outside [0, 1]", self.confidence)));
        }
        check_uri(&self.subject)?;
        check_uri(&self.predicate)?;
        check_uri(&self.object)?;
        self.used.iter().try_for_each(|u| check_uri(u))
    }

    fn time(&self) -> DateTime<Utc> {
        self.timestamp.trunc_subsecs(0)
    }

    fn node_key(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.record_id.as_bytes());
        h.update([0x1f]);
        h.update(self.task.as_bytes());
        h.update([0x1f]);
        h.update(self.time().to_rfc3339_opts(chrono::SecondsFormat::Secs, true).as_bytes());
        hex::encode(&h.finalize()[..12])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportConfig {
    /// Base of the skolemized node URIs; also the graph the file is meant for.
    pub graph: String,
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self { graph: DEFAULT_GRAPH.to_string() }
    }
}

fn literal(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Serializes predictions as Turtle: one `rdf:Statement`, one `prov:Activity` and one
/// `prov:SoftwareAgent` per prediction, ordered by record, task and time.
pub fn emit_ttl(statements: &[PredictionStatement], config: &ExportConfig, stamp: Option<&RunStamp>) -> Result<String> {
    check_uri(&config.graph)?;
    statements.iter().try_for_each(PredictionStatement::validate)?;
    let mut order: Vec<&PredictionStatement> = statements.iter().collect();
    order.sort_by(|a, b| (&a.record_id, &a.task, a.time()).cmp(&(&b.record_id, &b.task, b.time())));
    let mut keys = BTreeSet::new();
    for s in &order {
        if !keys.insert(s.node_key()) {
            return Err(Error::Validation(format!(
                "duplicate prediction for record `{}`, task `{}` at {}",
                s.record_id,
                s.task,
                s.time()
            )));
        }
    }

    let mut out = String::new();
    if let Some(st) = stamp {
        let _ = writeln!(out, "# config_sha256={} seed={}", st.config_sha256, st.seed);
    }
    let _ = writeln!(out, "# graph <{}>", config.graph);
    for (p, ns) in PREFIXES {
        let _ = writeln!(out, "@prefix {p}: <{ns}> .");
    }
    let base = config.graph.trim_end_matches('/');
    for s in order {
        let key = s.node_key();
        let stmt = format!("<{base}/statement/{key}>");
        let activity = format!("<{base}/activity/{key}>");
        let agent = format!("<{base}/agent/{key}>");
        out.push('\n');
        let _ = writeln!(out, "{stmt} a rdf:Statement ;");
        let _ = writeln!(out, "    rdf:subject <{}> ;", s.subject);
        let _ = writeln!(out, "    rdf:predicate <{}> ;", s.predicate);
        let _ = writeln!(out, "    rdf:object <{}> ;", s.object);
        let _ = writeln!(out, "    silk:L18 \"{}\"^^xsd:decimal ;", s.confidence);
        let _ = writeln!(out, "    prov:wasGeneratedBy {activity} .");
        out.push('\n');
        let _ = writeln!(out, "{activity} a prov:Activity ;");
        let _ = writeln!(out, "    prov:atTime \"{}\"^^xsd:dateTime ;", s.time().to_rfc3339_opts(chrono::SecondsFormat::Secs, true));
        let mut used: Vec<&str> = s.used.iter().map(String::as_str).collect();
        used.sort_unstable();
        used.dedup();
        if !used.is_empty() {
            let list: Vec<String> = used.iter().map(|u| format!("<{u}>")).collect();
            let _ = writeln!(out, "    prov:used {} ;", list.join(" , "));
        }
        let _ = writeln!(out, "    prov:wasAssociatedWith {agent} .");
        out.push('\n');
        let _ = writeln!(out, "{agent} a prov:SoftwareAgent ;");
        let _ = writeln!(out, "    rdfs:label {} ;", literal(&s.agent.label));
        let _ = writeln!(out, "    rdfs:comment {} .", literal(&format!("model {}", s.agent.model)));
    }
    Ok(out)
}
