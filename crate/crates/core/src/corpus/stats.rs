use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::record::RecordSet;
use super::split::{Split, SplitAssignment};

/// Column group of the class table: one per split plus the corpus total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitColumn {
    Split(Split),
    Total,
}

impl SplitColumn {
    pub const ALL: [SplitColumn; 4] = [
        SplitColumn::Split(Split::Train),
        SplitColumn::Split(Split::Validation),
        SplitColumn::Split(Split::Test),
        SplitColumn::Total,
    ];

    fn index(self) -> usize {
        match self {
            SplitColumn::Split(Split::Train) => 0,
            SplitColumn::Split(Split::Validation) => 1,
            SplitColumn::Split(Split::Test) => 2,
            SplitColumn::Total => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SplitColumn::Split(s) => s.as_str(),
            SplitColumn::Total => "total",
        }
    }
}

/// Per-class record counts: `[split column][total, with image, with text]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCountRow {
    pub task: String,
    pub class: String,
    pub counts: [[usize; 3]; 4],
}

impl ClassCountRow {
    pub fn get(&self, col: SplitColumn) -> [usize; 3] {
        self.counts[col.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ModalityOverlap {
    pub total: usize,
    pub with_image: usize,
    pub without_image: usize,
    pub with_text: usize,
    pub both: usize,
    pub neither: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthSummary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub mean: f64,
    pub q3: f64,
    pub max: f64,
}

impl LengthSummary {
    /// Quartiles use linear interpolation between order statistics.
    pub fn of(values: &[usize]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Some(Self {
            min: v[0],
            q1: q(0.25),
            median: q(0.5),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            q3: q(0.75),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub class_counts: Vec<ClassCountRow>,
    /// Indexed like [`SplitColumn::ALL`].
    pub overlap: [ModalityOverlap; 4],
    /// Sorted by descending count, then name.
    pub museums: Vec<(String, usize)>,
    pub text_chars: Option<LengthSummary>,
    pub text_tokens: Option<LengthSummary>,
    /// Labeled records per task, indexed like `class_counts` groups and split columns.
    pub labeled: Vec<[[usize; 3]; 4]>,
}

impl CorpusStats {
    pub fn overlap(&self, col: SplitColumn) -> ModalityOverlap {
        self.overlap[col.index()]
    }
}

pub fn compute_stats(records: &RecordSet, split: &SplitAssignment) -> CorpusStats {
    let schema = &records.schema;
    let mut class_counts: Vec<ClassCountRow> = schema
        .tasks()
        .iter()
        .flat_map(|t| {
            t.classes.iter().map(|c| ClassCountRow { task: t.name.clone(), class: c.clone(), counts: [[0; 3]; 4] })
        })
        .collect();
    let offsets: Vec<usize> = schema
        .class_counts()
        .iter()
        .scan(0, |acc, &k| {
            let o = *acc;
            *acc += k;
            Some(o)
        })
        .collect();
    let mut labeled = vec![[[0usize; 3]; 4]; schema.len()];
    let mut overlap = [ModalityOverlap::default(); 4];
    let mut museums: BTreeMap<&str, usize> = BTreeMap::new();
    let mut chars = Vec::new();
    let mut tokens = Vec::new();

    for r in &records.records {
        let mut cols = vec![SplitColumn::Total.index()];
        if let Some(s) = split.get(&r.record_id) {
            cols.push(SplitColumn::Split(s).index());
        }
        let (img, txt) = (r.has_image(), r.has_text());
        let modality = [true, img, txt];
        for &c in &cols {
            let o = &mut overlap[c];
            o.total += 1;
            o.with_image += img as usize;
            o.without_image += !img as usize;
            o.with_text += txt as usize;
            o.both += (img && txt) as usize;
            o.neither += (!img && !txt) as usize;
            for (t, l) in r.labels.iter().enumerate() {
                if let Some(k) = l {
                    for m in 0..3 {
                        if modality[m] {
                            class_counts[offsets[t] + k].counts[c][m] += 1;
                            labeled[t][c][m] += 1;
                        }
                    }
                }
            }
        }
        *museums.entry(r.museum.as_str()).or_default() += 1;
        if let Some(text) = &r.text {
            chars.push(text.chars().count());
            tokens.push(text.split_whitespace().count());
        }
    }

    let mut museums: Vec<(String, usize)> = museums.into_iter().map(|(m, n)| (m.to_string(), n)).collect();
    museums.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    CorpusStats {
        class_counts,
        overlap,
        museums,
        text_chars: LengthSummary::of(&chars),
        text_tokens: LengthSummary::of(&tokens),
        labeled,
    }
}

fn pct(n: usize, total: usize) -> String {
    if total == 0 {
        "0.0".to_string()
    } else {
        format!("{:.1}", 100.0 * n as f64 / total as f64)
    }
}

impl CorpusStats {
    /// Records per museum.
    pub fn museums_csv(&self) -> String {
        let mut out = String::from("museum,records\n");
        for (m, n) in &self.museums {
            let _ = writeln!(out, "{},{n}", csv_field(m));
        }
        out
    }

    /// Class distribution per task and split, with image/text columns.
    pub fn classes_csv(&self) -> String {
        let mut out = String::from("task,class");
        for col in SplitColumn::ALL {
            let l = col.label();
            let _ = write!(out, ",{l}_total,{l}_with_image,{l}_with_text");
        }
        out.push('\n');
        for row in &self.class_counts {
            let _ = write!(out, "{},{}", csv_field(&row.task), csv_field(&row.class));
            for col in SplitColumn::ALL {
                let [a, b, c] = row.get(col);
                let _ = write!(out, ",{a},{b},{c}");
            }
            out.push('\n');
        }
        out
    }

    /// Modality availability and overlap, plus a percentage row for the corpus total.
    pub fn modality_csv(&self) -> String {
        let mut out = String::from("split,records,with_image,with_text,both,neither\n");
        for col in SplitColumn::ALL {
            let o = self.overlap(col);
            let _ = writeln!(out, "{},{},{},{},{},{}", col.label(), o.total, o.with_image, o.with_text, o.both, o.neither);
        }
        let o = self.overlap(SplitColumn::Total);
        let _ = writeln!(
            out,
            "total_pct,{},{},{},{},{}",
            pct(o.total, o.total),
            pct(o.with_image, o.total),
            pct(o.with_text, o.total),
            pct(o.both, o.total),
            pct(o.neither, o.total)
        );
        out
    }

    pub fn text_lengths_csv(&self) -> String {
        let mut out = String::from("unit,min,q1,median,mean,q3,max\n");
        for (name, s) in [("char", &self.text_chars), ("token", &self.text_tokens)] {
            if let Some(s) = s {
                let _ = writeln!(out, "{name},{},{},{},{:.1},{},{}", s.min, s.q1, s.median, s.mean, s.q3, s.max);
            }
        }
        out
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
