use serde::{Deserialize, Serialize};

use crate::corpus::Modality;

/// One classifier's verdict for one record and task; `class == None` means the
/// modality was absent for the record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModalityDecision {
    pub modality: Modality,
    pub task: usize,
    pub class: Option<usize>,
    pub confidence: Option<f64>,
}

impl ModalityDecision {
    pub fn missing(modality: Modality, task: usize) -> Self {
        Self { modality, task, class: None, confidence: None }
    }

    pub fn predicted(modality: Modality, task: usize, class: usize, confidence: f64) -> Self {
        Self { modality, task, class: Some(class), confidence: Some(confidence) }
    }

    pub fn is_missing(&self) -> bool {
        self.class.is_none()
    }
}
