//! Versioned JSON model documents.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::model::{ArchitectureConfig, Model, ModelVariant};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub validation: Option<MetricReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub variant: ModelVariant,
    pub architecture: ArchitectureConfig,
    /// Snapshot of the run configuration as `key -> value`.
    pub run_config: BTreeMap<String, String>,
    pub vocabulary: Vocabulary,
    pub parameters: Vec<NamedTensor>,
    pub training: TrainingMetadata,
}

impl ModelArtifact {
    pub fn new(
        model: &Model,
        vocabulary: Vocabulary,
        run_config: BTreeMap<String, String>,
        training: TrainingMetadata,
    ) -> Self {
        let parameters = model
            .params()
            .iter()
            .map(|(_, name, t)| NamedTensor {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                values: t.data().to_vec(),
            })
            .collect();
        ModelArtifact {
            format_version: FORMAT_VERSION,
            variant: model.variant(),
            architecture: model.config().clone(),
            run_config,
            vocabulary,
            parameters,
            training,
        }
    }

    pub fn model(&self) -> Result<Model> {
        if self.architecture.fields != self.vocabulary.fields() {
            return Err(Error::Artifact(format!(
                "architecture has {} fields, vocabulary has {}",
                self.architecture.fields,
                self.vocabulary.fields()
            )));
        }
        let tensors = self
            .parameters
            .iter()
            .map(|p| Ok((p.name.clone(), Tensor::new(p.shape.clone(), p.values.clone())?)))
            .collect::<Result<Vec<_>>>()?;
        Model::from_named(
            self.variant,
            self.architecture.clone(),
            self.vocabulary.size(),
            tensors,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Artifact(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let a: ModelArtifact =
            serde_json::from_str(text).map_err(|e| Error::Artifact(e.to_string()))?;
        if a.format_version != FORMAT_VERSION {
            return Err(Error::Artifact(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                a.format_version
            )));
        }
        Ok(a)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Artifact(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
