//! Run records and their JSONL file format.
//!
//! One JSON object per line, UTF-8. Struct field order is the canonical key
//! order; map-valued fields use sorted keys, so serializing a record is
//! byte-stable. A canonical file is the records sorted by
//! (dataset, algorithm, test_env, trial, repetition).

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hparams::HParams;
use crate::seeds::RunSeeds;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}")]
    Contract(String),
}

/// Accuracy on the two splits of one domain at one checkpoint. For the test
/// domain the `train` split is never trained on and serves as the final
/// evaluation set; `val` is the 20% selection split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitAcc {
    pub train: f64,
    pub val: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: u64,
    /// Domain name -> split accuracies.
    pub accs: BTreeMap<String, SplitAcc>,
    /// Mean update scalars since the previous checkpoint.
    pub stats: BTreeMap<String, f64>,
}

/// Full trace of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub algorithm: String,
    pub dataset: String,
    pub test_env: usize,
    pub trial: usize,
    pub repetition: usize,
    pub hparams: HParams,
    pub seeds: RunSeeds,
    /// "ok" or "failed@STEP".
    pub status: String,
    pub env_sizes: BTreeMap<String, SplitSizes>,
    pub checkpoints: Vec<Checkpoint>,
    /// Leave-one-domain-out sub-runs (same hparams, one more domain held out).
    pub sub_runs: Vec<RunRecord>,
}

impl RunRecord {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn final_checkpoint(&self) -> Option<&Checkpoint> {
        self.checkpoints.last()
    }

    /// Sort key for canonical files.
    pub fn cell_key(&self) -> (String, String, usize, usize, usize) {
        (self.dataset.clone(), self.algorithm.clone(), self.test_env, self.trial, self.repetition)
    }

    /// Total records including nested sub-runs.
    pub fn record_count(&self) -> usize {
        1 + self.sub_runs.iter().map(RunRecord::record_count).sum::<usize>()
    }
}

pub fn to_jsonl_line(record: &RunRecord) -> Result<String, RecordError> {
    serde_json::to_string(record).map_err(|source| RecordError::Json { line: 0, source })
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>, RecordError> {
    let text = fs::read_to_string(path)?;
    parse_records(&text)
}

pub fn parse_records(text: &str) -> Result<Vec<RunRecord>, RecordError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: RunRecord =
            serde_json::from_str(line).map_err(|source| RecordError::Json { line: i + 1, source })?;
        out.push(rec);
    }
    Ok(out)
}

/// Records sorted by cell key and re-serialized, one per line. Two sweeps
/// with the same master seed produce byte-identical canonical strings no
/// matter how workers interleaved the appends.
pub fn canonical_string(records: &[RunRecord]) -> Result<String, RecordError> {
    let mut sorted: Vec<&RunRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.cell_key());
    let mut out = String::new();
    for r in sorted {
        out.push_str(&to_jsonl_line(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// Append-only JSONL writer; every record is one flushed line.
pub struct RecordWriter {
    inner: BufWriter<fs::File>,
}

impl RecordWriter {
    pub fn append(path: &Path) -> Result<Self, RecordError> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        let file = fs::OpenOptions::new().create(true).append(true).open(path)?;
        Ok(RecordWriter { inner: BufWriter::new(file) })
    }

    pub fn write(&mut self, record: &RunRecord) -> Result<(), RecordError> {
        let line = to_jsonl_line(record)?;
        self.inner.write_all(line.as_bytes())?;
        self.inner.write_all(b"\n")?;
        self.inner.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hparams::HpValue;

    pub(crate) fn sample_record(trial: usize) -> RunRecord {
        let mut hparams = HParams::new();
        hparams.insert("lr".into(), HpValue::Num(1e-3));
        hparams.insert("batch_size".into(), HpValue::Int(64));
        let mut accs = BTreeMap::new();
        accs.insert("a".to_string(), SplitAcc { train: 0.9, val: 0.8 });
        accs.insert("b".to_string(), SplitAcc { train: 0.7, val: 0.6 });
        let mut env_sizes = BTreeMap::new();
        env_sizes.insert("a".to_string(), SplitSizes { train: 80, val: 20 });
        env_sizes.insert("b".to_string(), SplitSizes { train: 80, val: 20 });
        RunRecord {
            schema_version: SCHEMA_VERSION,
            algorithm: "ERM".into(),
            dataset: "toy".into(),
            test_env: 1,
            trial,
            repetition: 0,
            hparams,
            seeds: RunSeeds { data: 1, split: 2, init: 3, train: 4 },
            status: "ok".into(),
            env_sizes,
            checkpoints: vec![Checkpoint { step: 100, accs, stats: BTreeMap::new() }],
            sub_runs: vec![],
        }
    }

    #[test]
    fn jsonl_roundtrip_preserves_the_record() {
        let rec = sample_record(0);
        let line = to_jsonl_line(&rec).unwrap();
        let parsed = parse_records(&line).unwrap();
        assert_eq!(parsed, vec![rec]);
    }

    #[test]
    fn canonical_string_sorts_by_cell() {
        let records = vec![sample_record(2), sample_record(0), sample_record(1)];
        let canon = canonical_string(&records).unwrap();
        let parsed = parse_records(&canon).unwrap();
        let trials: Vec<usize> = parsed.iter().map(|r| r.trial).collect();
        assert_eq!(trials, vec![0, 1, 2]);
        // Canonicalizing twice is stable byte-for-byte.
        assert_eq!(canonical_string(&parsed).unwrap(), canon);
    }

    #[test]
    fn record_count_includes_sub_runs() {
        let mut rec = sample_record(0);
        rec.sub_runs = vec![sample_record(0), sample_record(0)];
        assert_eq!(rec.record_count(), 3);
    }

    #[test]
    fn bad_json_names_the_line() {
        let good = to_jsonl_line(&sample_record(0)).unwrap();
        let text = format!("{good}\nnot json\n");
        match parse_records(&text) {
            Err(RecordError::Json { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
