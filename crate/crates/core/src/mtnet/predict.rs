use super::model::MultitaskHeadModel;
use crate::corpus::{Modality, Record};
use crate::decision::ModalityDecision;
use crate::error::Result;
use crate::scalar::Scalar;

/// Per task, the (class, score) pair with the highest softmax score over all
/// embeddings; equal scores resolve to the lowest class index so the result does not
/// depend on embedding order.
pub fn aggregate_embeddings<T: Scalar>(model: &MultitaskHeadModel<T>, embeddings: &[&[f32]]) -> Result<Vec<Option<(usize, T)>>> {
    let mut best: Vec<Option<(usize, T)>> = vec![None; model.n_tasks()];
    for e in embeddings {
        let x: Vec<T> = e.iter().map(|&v| T::of(v as f64)).collect();
        let probs = model.infer(&x)?;
        for (slot, y) in best.iter_mut().zip(&probs) {
            for (c, &p) in y.iter().enumerate() {
                let better = match *slot {
                    None => true,
                    Some((bc, bp)) => p > bp || (p == bp && c < bc),
                };
                if better {
                    *slot = Some((c, p));
                }
            }
        }
    }
    Ok(best)
}

/// Record-level decisions for every task; a record without embeddings of this
/// modality gets missing decisions.
pub fn predict_record<T: Scalar>(model: &MultitaskHeadModel<T>, record: &Record, modality: Modality) -> Result<Vec<ModalityDecision>> {
    let embeddings = record.embeddings(modality);
    let best = aggregate_embeddings(model, &embeddings)?;
    Ok(best
        .into_iter()
        .enumerate()
        .map(|(task, b)| match b {
            Some((c, p)) => ModalityDecision::predicted(modality, task, c, p.as_f64()),
            None => ModalityDecision::missing(modality, task),
        })
        .collect())
}
