//! Funnel data: raw rows, vocabularies, encoded datasets, splitting,
//! negative downsampling, batching, and a synthetic funnel generator.

mod funnel;
mod sampling;
pub mod tsv;
mod vocab;

pub use funnel::{generate_funnel, FunnelGenConfig, GeneratedFunnel};
pub use sampling::{batches, chronological_split, downsample_negatives, downsample_negatives_by};
pub use vocab::{build_vocab, encode_row, encode_rows, EncodedSample, FunnelDataset, Vocabulary};

use crate::error::{Error, Result};

/// One observation before encoding: a timestamp, one categorical token per
/// field (empty for missing), and the funnel labels `y_1..y_T`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawRow {
    pub ts: i64,
    pub features: Vec<String>,
    pub labels: Vec<u8>,
}

/// `y_1 >= y_2 >= ... >= y_T` with every label 0 or 1.
pub fn labels_monotone(labels: &[u8]) -> bool {
    labels.iter().all(|&y| y <= 1) && labels.windows(2).all(|w| w[0] >= w[1])
}

impl RawRow {
    /// Rejects rows whose labels break the funnel order.
    pub fn validate(&self, index: usize) -> Result<()> {
        if !labels_monotone(&self.labels) {
            return Err(Error::RejectedRow {
                row: index,
                reason: format!("labels {:?} are not a non-increasing 0/1 sequence", self.labels),
            });
        }
        Ok(())
    }

    pub fn final_label(&self) -> u8 {
        *self.labels.last().unwrap_or(&0)
    }
}
