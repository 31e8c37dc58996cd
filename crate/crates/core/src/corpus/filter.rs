use super::record::RecordSet;

pub const DEFAULT_MIN_LABEL_COUNT: usize = 150;
pub const DEFAULT_MIN_TEXT_CHARS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub min_label_count: usize,
    pub min_text_chars: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { min_label_count: DEFAULT_MIN_LABEL_COUNT, min_text_chars: DEFAULT_MIN_TEXT_CHARS }
    }
}

/// Clears rare labels, drops short texts and removes records left without labels.
///
/// Label frequencies are corpus-wide. Classes below `min_label_count` leave the
/// vocabulary and every record. Texts shorter than `min_text_chars` characters are
/// removed together with their embedding; the record keeps its other modalities.
pub fn filter_corpus(records: &RecordSet, config: FilterConfig) -> RecordSet {
    let schema = &records.schema;
    let mut counts: Vec<Vec<usize>> = schema.class_counts().into_iter().map(|k| vec![0; k]).collect();
    for r in &records.records {
        for (t, l) in r.labels.iter().enumerate() {
            if let Some(c) = l {
                counts[t][*c] += 1;
            }
        }
    }

    // old class index -> new class index, per task
    let remap: Vec<Vec<Option<usize>>> = counts
        .iter()
        .map(|task_counts| {
            let mut next = 0;
            task_counts
                .iter()
                .map(|&n| {
                    (n >= config.min_label_count).then(|| {
                        next += 1;
                        next - 1
                    })
                })
                .collect()
        })
        .collect();

    let mut new_schema = schema.clone();
    new_schema.retain_classes(|t, c| {
        let idx = schema.task(t).class_index(c).expect("class from the same schema");
        remap[t][idx].is_some()
    });

    let mut out = RecordSet {
        schema: new_schema,
        records: Vec::with_capacity(records.len()),
        image_dim: records.image_dim,
        text_dim: records.text_dim,
    };
    for r in &records.records {
        let mut r = r.clone();
        for (t, l) in r.labels.iter_mut().enumerate() {
            *l = l.and_then(|c| remap[t][c]);
        }
        if r.is_unlabeled() {
            continue;
        }
        if r.text.as_ref().is_some_and(|s| s.chars().count() < config.min_text_chars) {
            r.text = None;
            r.text_embedding = None;
        }
        out.records.push(r);
    }
    out
}
