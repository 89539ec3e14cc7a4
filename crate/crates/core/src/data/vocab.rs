use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::RawRow;
use crate::error::{Error, Result};

/// Per-field token maps. Local id 0 of every field is its out-of-vocabulary
/// slot; global ids add the field's offset so all fields share one table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    min_frequency: usize,
    names: Vec<String>,
    tokens: Vec<Vec<String>>,
    index: Vec<HashMap<String, usize>>,
    offsets: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    min_frequency: usize,
    fields: Vec<FieldRepr>,
}

#[derive(Serialize, Deserialize)]
struct FieldRepr {
    name: String,
    /// Tokens in id order, starting at id 1.
    tokens: Vec<String>,
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(r: VocabularyRepr) -> Self {
        let (names, tokens) = r.fields.into_iter().map(|f| (f.name, f.tokens)).unzip();
        Vocabulary::assemble(r.min_frequency, names, tokens)
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            min_frequency: v.min_frequency,
            fields: v
                .names
                .into_iter()
                .zip(v.tokens)
                .map(|(name, tokens)| FieldRepr { name, tokens })
                .collect(),
        }
    }
}

impl Vocabulary {
    fn assemble(min_frequency: usize, names: Vec<String>, tokens: Vec<Vec<String>>) -> Self {
        let index = tokens
            .iter()
            .map(|ts| ts.iter().enumerate().map(|(i, t)| (t.clone(), i + 1)).collect())
            .collect();
        let mut offsets = Vec::with_capacity(tokens.len());
        let mut next = 0;
        for ts in &tokens {
            offsets.push(next);
            next += ts.len() + 1;
        }
        Vocabulary {
            min_frequency,
            names,
            tokens,
            index,
            offsets,
        }
    }

    pub fn fields(&self) -> usize {
        self.names.len()
    }

    pub fn field_names(&self) -> &[String] {
        &self.names
    }

    pub fn min_frequency(&self) -> usize {
        self.min_frequency
    }

    /// Rows of the shared embedding table.
    pub fn size(&self) -> usize {
        self.tokens.iter().map(|t| t.len() + 1).sum()
    }

    /// Field-local id; 0 for unknown or missing tokens.
    pub fn local_id(&self, field: usize, token: &str) -> usize {
        if token.is_empty() {
            return 0;
        }
        self.index[field].get(token).copied().unwrap_or(0)
    }

    pub fn global_id(&self, field: usize, token: &str) -> usize {
        self.offsets[field] + self.local_id(field, token)
    }

    pub fn field_offset(&self, field: usize) -> usize {
        self.offsets[field]
    }
}

/// Fits token maps on `rows`. Tokens seen fewer than `min_frequency` times
/// (and the empty token) map to the out-of-vocabulary id. Known tokens get
/// ids in lexicographic order.
pub fn build_vocab(rows: &[RawRow], field_names: &[String], min_frequency: usize) -> Result<Vocabulary> {
    if rows.is_empty() {
        return Err(Error::Ingest("cannot build a vocabulary from an empty corpus".into()));
    }
    let fields = field_names.len();
    let mut counts: Vec<HashMap<&str, usize>> = vec![HashMap::new(); fields];
    for (i, row) in rows.iter().enumerate() {
        if row.features.len() != fields {
            return Err(Error::Ingest(format!(
                "row {i} has {} features, expected {fields}",
                row.features.len()
            )));
        }
        for (f, tok) in row.features.iter().enumerate() {
            if !tok.is_empty() {
                *counts[f].entry(tok.as_str()).or_insert(0) += 1;
            }
        }
    }
    let tokens = counts
        .into_iter()
        .map(|c| {
            let mut kept: Vec<String> = c
                .into_iter()
                .filter(|&(_, n)| n >= min_frequency)
                .map(|(t, _)| t.to_string())
                .collect();
            kept.sort();
            kept
        })
        .collect();
    Ok(Vocabulary::assemble(min_frequency, field_names.to_vec(), tokens))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedSample {
    pub ids: Vec<usize>,
    pub labels: Vec<u8>,
}

/// Maps one row to global ids. Rows with non-monotone labels are rejected.
pub fn encode_row(row: &RawRow, vocab: &Vocabulary, index: usize) -> Result<EncodedSample> {
    row.validate(index)?;
    if row.features.len() != vocab.fields() {
        return Err(Error::Encoding(format!(
            "row {index} has {} features, vocabulary has {} fields",
            row.features.len(),
            vocab.fields()
        )));
    }
    let ids = row
        .features
        .iter()
        .enumerate()
        .map(|(f, tok)| vocab.global_id(f, tok))
        .collect();
    Ok(EncodedSample {
        ids,
        labels: row.labels.clone(),
    })
}

/// Encoded samples stored as flat row-major id and label matrices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FunnelDataset {
    pub fields: usize,
    pub tasks: usize,
    pub ids: Vec<usize>,
    pub labels: Vec<u8>,
}

impl FunnelDataset {
    pub fn rows(&self) -> usize {
        self.labels.len() / self.tasks.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, r: usize) -> (&[usize], &[u8]) {
        (
            &self.ids[r * self.fields..(r + 1) * self.fields],
            &self.labels[r * self.tasks..(r + 1) * self.tasks],
        )
    }

    /// Ids and labels of the selected rows, in the given order.
    pub fn gather(&self, rows: &[usize]) -> (Vec<usize>, Vec<u8>) {
        let mut ids = Vec::with_capacity(rows.len() * self.fields);
        let mut labels = Vec::with_capacity(rows.len() * self.tasks);
        for &r in rows {
            let (i, l) = self.sample(r);
            ids.extend_from_slice(i);
            labels.extend_from_slice(l);
        }
        (ids, labels)
    }

    /// Labels of one task as a column.
    pub fn task_labels(&self, t: usize) -> Vec<u8> {
        self.labels.iter().skip(t).step_by(self.tasks).copied().collect()
    }
}

pub fn encode_rows(rows: &[RawRow], vocab: &Vocabulary) -> Result<FunnelDataset> {
    let tasks = rows.first().map_or(0, |r| r.labels.len());
    let mut ds = FunnelDataset {
        fields: vocab.fields(),
        tasks,
        ids: Vec::with_capacity(rows.len() * vocab.fields()),
        labels: Vec::with_capacity(rows.len() * tasks),
    };
    for (i, row) in rows.iter().enumerate() {
        if row.labels.len() != tasks {
            return Err(Error::Encoding(format!(
                "row {i} has {} labels, expected {tasks}",
                row.labels.len()
            )));
        }
        let s = encode_row(row, vocab, i)?;
        ds.ids.extend(s.ids);
        ds.labels.extend(s.labels);
    }
    Ok(ds)
}
