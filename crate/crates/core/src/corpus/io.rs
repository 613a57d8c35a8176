//! Line-delimited JSON dataset files.
//!
//! One record per line. Records carry both the rendered text and the token
//! ids; readers check that the two agree.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{CorpusError, Dataset, Example, TokenId, Vocab};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    pub task: String,
    pub seed: u64,
    pub prompt_text: String,
    pub continuation_text: String,
    pub prompt_ids: Vec<TokenId>,
    pub continuation_ids: Vec<TokenId>,
}

impl ExampleRecord {
    pub fn new(dataset: &Dataset, example: &Example, vocab: &Vocab) -> Result<Self, CorpusError> {
        Ok(Self {
            id: example.id.clone(),
            task: dataset.task_name.clone(),
            seed: dataset.seed,
            prompt_text: vocab.decode(&example.prompt)?,
            continuation_text: vocab.decode(&example.continuation)?,
            prompt_ids: example.prompt.clone(),
            continuation_ids: example.continuation.clone(),
        })
    }

    pub fn to_example(&self, vocab: &Vocab) -> Result<Example, String> {
        let prompt = vocab.decode(&self.prompt_ids).map_err(|e| e.to_string())?;
        let continuation = vocab
            .decode(&self.continuation_ids)
            .map_err(|e| e.to_string())?;
        if prompt != self.prompt_text || continuation != self.continuation_text {
            return Err(format!("record {}: text does not match ids", self.id));
        }
        Ok(Example {
            id: self.id.clone(),
            prompt: self.prompt_ids.clone(),
            continuation: self.continuation_ids.clone(),
        })
    }
}

/// Writes serializable records, one JSON object per line.
pub fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CorpusError> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads line-delimited records; errors carry the 1-based line number.
pub fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let record = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

pub fn dataset_records(dataset: &Dataset, vocab: &Vocab) -> Result<Vec<ExampleRecord>, CorpusError> {
    dataset
        .examples
        .iter()
        .map(|e| ExampleRecord::new(dataset, e, vocab))
        .collect()
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<(), CorpusError> {
    write_records(path, &dataset_records(dataset, &Vocab::default())?)
}

/// Reads a dataset file. Extra fields (as in mixed or correction files) are
/// ignored, so those files also read back as plain datasets.
pub fn read_dataset(path: &Path) -> Result<Dataset, CorpusError> {
    let vocab = Vocab::default();
    let records: Vec<ExampleRecord> = read_records(path)?;
    let mut dataset = Dataset {
        task_name: records.first().map(|r| r.task.clone()).unwrap_or_default(),
        seed: records.first().map(|r| r.seed).unwrap_or_default(),
        examples: Vec::with_capacity(records.len()),
    };
    for (i, r) in records.iter().enumerate() {
        let example = r.to_example(&vocab).map_err(|message| CorpusError::Parse {
            line: i + 1,
            message,
        })?;
        dataset.examples.push(example);
    }
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::gen_addition_task;

    #[test]
    fn write_read_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let d = gen_addition_task(30, 4, 9).unwrap();
        write_dataset(&path, &d).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), d);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 30);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        for key in ["id", "prompt_text", "continuation_text", "prompt_ids", "continuation_ids"] {
            assert!(first.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn empty_dataset_is_zero_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.jsonl");
        let d = Dataset {
            task_name: "copy".into(),
            seed: 0,
            examples: vec![],
        };
        write_dataset(&path, &d).unwrap();
        assert_eq!(std::fs::read(&path).unwrap().len(), 0);
        assert!(read_dataset(&path).unwrap().is_empty());
    }

    #[test]
    fn truncated_record_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let d = gen_addition_task(3, 2, 1).unwrap();
        write_dataset(&path, &d).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        let cut = &lines[1][..lines[1].len() / 2];
        lines[1] = cut;
        std::fs::write(&path, lines.join("\n")).unwrap();
        match read_dataset(&path) {
            Err(CorpusError::Parse { line: 2, .. }) => {}
            other => panic!("expected parse error at line 2, got {other:?}"),
        }
    }

    #[test]
    fn text_id_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let d = gen_addition_task(1, 2, 1).unwrap();
        let mut rec = dataset_records(&d, &Vocab::default()).unwrap();
        rec[0].prompt_text.push('9');
        write_records(&path, &rec).unwrap();
        assert!(matches!(read_dataset(&path), Err(CorpusError::Parse { line: 1, .. })));
    }
}
