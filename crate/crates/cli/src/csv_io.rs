//! Token datasets as CSV.
//!
//! One example per row: `N` integer token columns, then the label column for
//! labeled splits. A first row made only of non-numeric cells is a header.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clda_core::data::{DomainData, DomainDatasetSpec, LabeledSplit, TokenBatch, UnlabeledSplit};

use crate::error::{CliError, Result};

pub const SOURCE_FILE: &str = "source.csv";
pub const TARGET_TRAIN_FILE: &str = "target_train.csv";
pub const TARGET_EVAL_FILE: &str = "target_eval.csv";
pub const SPEC_FILE: &str = "spec.json";

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct CsvSchema {
    /// Token columns per row; taken from the first data row when `None`.
    pub seq_len: Option<usize>,
    pub labeled: bool,
    /// Tokens must be below this when set.
    pub vocab: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsvBatch {
    pub tokens: TokenBatch,
    pub labels: Option<Vec<usize>>,
}

/// Streams batches of `batch_size` rows; the last batch may be shorter.
pub struct CsvBatches {
    path: PathBuf,
    records: csv::StringRecordsIntoIter<File>,
    schema: CsvSchema,
    batch_size: usize,
    first: bool,
    done: bool,
}

pub fn load_csv(path: &Path, schema: CsvSchema, batch_size: usize) -> Result<CsvBatches> {
    if batch_size == 0 {
        return Err(CliError::Config("batch size must be positive".into()));
    }
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    Ok(CsvBatches {
        path: path.to_path_buf(),
        records: reader.into_records(),
        schema,
        batch_size,
        first: true,
        done: false,
    })
}

impl CsvBatches {
    fn err(&self, line: u64, msg: impl std::fmt::Display) -> CliError {
        CliError::Data(format!("{}:{line}: {msg}", self.path.display()))
    }

    fn parse_row(&mut self, record: &csv::StringRecord) -> Result<Option<(Vec<usize>, Option<usize>)>> {
        let line = record.position().map_or(0, |p| p.line());
        if self.first {
            self.first = false;
            if record.iter().all(|c| c.parse::<i64>().is_err()) {
                return Ok(None);
            }
        }
        let extra = usize::from(self.schema.labeled);
        let cols = record.len();
        let seq_len = *self.schema.seq_len.get_or_insert(cols.saturating_sub(extra));
        if cols != seq_len + extra || seq_len == 0 {
            return Err(self.err(line, format!("expected {} columns, found {cols}", seq_len + extra)));
        }
        let mut values = Vec::with_capacity(cols);
        for (i, cell) in record.iter().enumerate() {
            let v: usize = cell
                .parse()
                .map_err(|_| self.err(line, format!("column {}: {cell:?} is not a non-negative integer", i + 1)))?;
            values.push(v);
        }
        let label = if self.schema.labeled { values.pop() } else { None };
        if let Some(vocab) = self.schema.vocab {
            if let Some(t) = values.iter().find(|&&t| t >= vocab) {
                return Err(self.err(line, format!("token {t} outside vocabulary of {vocab}")));
            }
        }
        Ok(Some((values, label)))
    }
}

impl Iterator for CsvBatches {
    type Item = Result<CsvBatch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let mut tokens = Vec::new();
        let mut labels = Vec::new();
        let mut rows = 0;
        while rows < self.batch_size {
            let record = match self.records.next() {
                None => break,
                Some(Ok(r)) => r,
                Some(Err(e)) => {
                    self.done = true;
                    let line = e.position().map_or(0, |p| p.line());
                    return Some(Err(self.err(line, e)));
                }
            };
            match self.parse_row(&record) {
                Ok(None) => {}
                Ok(Some((row, label))) => {
                    tokens.extend(row);
                    labels.extend(label);
                    rows += 1;
                }
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
            }
        }
        if rows == 0 {
            self.done = true;
            return None;
        }
        let seq_len = self.schema.seq_len.expect("set by the first data row");
        let batch = TokenBatch::new(seq_len, tokens).map_err(CliError::from).map(|tokens| CsvBatch {
            tokens,
            labels: self.schema.labeled.then_some(labels),
        });
        Some(batch)
    }
}

fn read_all(path: &Path, schema: CsvSchema) -> Result<(usize, Vec<usize>, Vec<usize>)> {
    let mut tokens = Vec::new();
    let mut labels = Vec::new();
    let mut seq_len = schema.seq_len;
    for batch in load_csv(path, schema, 1024)? {
        let batch = batch?;
        seq_len = Some(batch.tokens.seq_len());
        tokens.extend_from_slice(batch.tokens.tokens());
        labels.extend(batch.labels.unwrap_or_default());
    }
    match seq_len {
        Some(n) if !tokens.is_empty() => Ok((n, tokens, labels)),
        _ => Err(CliError::Data(format!("{}: no data rows", path.display()))),
    }
}

pub fn read_labeled(path: &Path, seq_len: Option<usize>, vocab: Option<usize>) -> Result<LabeledSplit> {
    let (n, tokens, labels) = read_all(path, CsvSchema { seq_len, labeled: true, vocab })?;
    Ok(LabeledSplit::new(TokenBatch::new(n, tokens)?, labels)?)
}

pub fn read_unlabeled(path: &Path, seq_len: Option<usize>, vocab: Option<usize>) -> Result<UnlabeledSplit> {
    let (n, tokens, _) = read_all(path, CsvSchema { seq_len, labeled: false, vocab })?;
    Ok(UnlabeledSplit::new(TokenBatch::new(n, tokens)?))
}

pub fn write_csv(path: &Path, tokens: &TokenBatch, labels: Option<&[usize]>) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| CliError::io(path, e);
    let n = tokens.seq_len();
    let mut header: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
    if labels.is_some() {
        header.push("label".into());
    }
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for r in 0..tokens.batch_size() {
        let mut cells: Vec<String> = tokens.row(r).iter().map(usize::to_string).collect();
        if let Some(l) = labels {
            cells.push(l[r].to_string());
        }
        writeln!(w, "{}", cells.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Shape facts a training run needs about a dataset directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetMeta {
    pub vocab: usize,
    pub seq_len: usize,
    pub classes: usize,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub spec: Option<DomainDatasetSpec>,
    pub data: DomainData,
}

pub fn write_dataset(dir: &Path, spec: &DomainDatasetSpec, data: &DomainData) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write_csv(&dir.join(SOURCE_FILE), data.source.tokens(), Some(data.source.labels()))?;
    write_csv(&dir.join(TARGET_TRAIN_FILE), data.target_train.tokens(), None)?;
    write_csv(&dir.join(TARGET_EVAL_FILE), data.target_eval.tokens(), Some(data.target_eval.labels()))?;
    let spec_path = dir.join(SPEC_FILE);
    let json = serde_json::to_string_pretty(spec).expect("spec serializes");
    fs::write(&spec_path, json + "\n").map_err(|e| CliError::io(&spec_path, e))
}

/// Reads a dataset directory. Without `spec.json` the vocabulary and class
/// count are the largest token and label seen plus one.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(CliError::Data(format!("{}: dataset directory not found", dir.display())));
    }
    let spec_path = dir.join(SPEC_FILE);
    let spec: Option<DomainDatasetSpec> = if spec_path.exists() {
        let text = fs::read_to_string(&spec_path).map_err(|e| CliError::io(&spec_path, e))?;
        Some(serde_json::from_str(&text).map_err(|e| CliError::format(&spec_path, e.to_string()))?)
    } else {
        None
    };
    let (seq, vocab) = match &spec {
        Some(s) => (Some(s.seq_len), Some(s.vocab)),
        None => (None, None),
    };
    let source = read_labeled(&dir.join(SOURCE_FILE), seq, vocab)?;
    let n = source.tokens().seq_len();
    let target_train = read_unlabeled(&dir.join(TARGET_TRAIN_FILE), Some(n), vocab)?;
    let target_eval = read_labeled(&dir.join(TARGET_EVAL_FILE), Some(n), vocab)?;
    let meta = match &spec {
        Some(s) => DatasetMeta {
            vocab: s.vocab,
            seq_len: s.seq_len,
            classes: s.classes,
        },
        None => {
            let max_tok = [source.tokens(), target_train.tokens(), target_eval.tokens()]
                .iter()
                .flat_map(|t| t.tokens().iter().copied())
                .max()
                .unwrap_or(0);
            let max_label = source.labels().iter().chain(target_eval.labels()).copied().max().unwrap_or(0);
            DatasetMeta {
                vocab: max_tok + 1,
                seq_len: n,
                classes: (max_label + 1).max(2),
            }
        }
    };
    if let Some(&l) = source.labels().iter().chain(target_eval.labels()).find(|&&l| l >= meta.classes) {
        return Err(CliError::Data(format!(
            "{}: label {l} outside {} classes",
            dir.display(),
            meta.classes
        )));
    }
    Ok(Dataset {
        meta,
        spec,
        data: DomainData {
            source,
            target_train,
            target_eval,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn labeled(n: usize) -> CsvSchema {
        CsvSchema {
            seq_len: Some(n),
            labeled: true,
            vocab: None,
        }
    }

    #[test]
    fn two_rows_one_batch() {
        let f = file("1,2,3,0\n4,5,6,1\n");
        let batches: Vec<_> = load_csv(f.path(), labeled(3), 2).unwrap().collect::<Result<_>>().unwrap();
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].tokens.shape(), [2, 3]);
        assert_eq!(batches[0].labels.as_deref(), Some(&[0, 1][..]));
    }

    #[test]
    fn header_only_is_empty() {
        let f = file("t0,t1,t2,label\n");
        assert_eq!(load_csv(f.path(), labeled(3), 4).unwrap().count(), 0);
    }

    #[test]
    fn bad_cell_names_line() {
        let f = file("t0,t1,label\n1,2,0\n3,x,1\n");
        let err = load_csv(f.path(), labeled(2), 8).unwrap().find_map(|b| b.err()).unwrap();
        let msg = err.to_string();
        assert!(msg.contains(":3:"), "{msg}");
        assert!(msg.contains("\"x\""), "{msg}");
    }

    #[test]
    fn column_count_mismatch() {
        let f = file("1,2,0\n1,2\n");
        let err = load_csv(f.path(), labeled(2), 8).unwrap().find_map(|b| b.err()).unwrap();
        assert!(err.to_string().contains(":2:"));
    }

    #[test]
    fn infers_width_and_streams_remainder() {
        let f = file("1,2\n3,4\n5,6\n");
        let schema = CsvSchema {
            seq_len: None,
            labeled: false,
            vocab: Some(10),
        };
        let sizes: Vec<usize> = load_csv(f.path(), schema, 2)
            .unwrap()
            .map(|b| b.unwrap().tokens.batch_size())
            .collect();
        assert_eq!(sizes, [2, 1]);
    }

    #[test]
    fn vocab_bound() {
        let f = file("1,12\n");
        let schema = CsvSchema {
            seq_len: None,
            labeled: false,
            vocab: Some(10),
        };
        assert!(load_csv(f.path(), schema, 2).unwrap().next().unwrap().is_err());
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            load_csv(Path::new("/nonexistent/x.csv"), labeled(2), 1),
            Err(CliError::Io { .. })
        ));
    }
}
