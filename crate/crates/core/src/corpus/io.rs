use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{ClickLog, CorpusError, QueryRecord, Schema};

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const SCHEMA_FILE: &str = "schema.json";
pub const CLICKS_FILE: &str = "clicks.jsonl";

/// Schema plus validated queries, as stored in a data directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: Schema,
    pub queries: Vec<QueryRecord>,
}

impl Dataset {
    pub fn load_dir(dir: &Path) -> Result<Self, CorpusError> {
        let schema = load_schema(&dir.join(SCHEMA_FILE))?;
        let queries = load_dataset(&dir.join(DATASET_FILE), &schema)?;
        Ok(Self { schema, queries })
    }

    pub fn save_dir(&self, dir: &Path) -> Result<(), CorpusError> {
        fs::create_dir_all(dir)?;
        save_schema(&dir.join(SCHEMA_FILE), &self.schema)?;
        save_dataset(&dir.join(DATASET_FILE), &self.queries)
    }

    pub fn find(&self, query_id: &str) -> Option<&QueryRecord> {
        self.queries.iter().find(|q| q.query_id == query_id)
    }
}

pub fn load_schema(path: &Path) -> Result<Schema, CorpusError> {
    let schema: Schema = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    schema.validate()?;
    Ok(schema)
}

pub fn save_schema(path: &Path, schema: &Schema) -> Result<(), CorpusError> {
    let mut text = serde_json::to_string_pretty(schema)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Reads one query per line; blank lines are skipped. Every record is
/// validated against `schema` and errors carry 1-based line numbers.
pub fn load_dataset(path: &Path, schema: &Schema) -> Result<Vec<QueryRecord>, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let mut queries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: QueryRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        record.validate(schema, line_no)?;
        queries.push(record);
    }
    Ok(queries)
}

pub fn save_dataset(path: &Path, queries: &[QueryRecord]) -> Result<(), CorpusError> {
    write_jsonl(path, queries)
}

pub fn load_click_logs(path: &Path) -> Result<Vec<ClickLog>, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let mut logs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let log: ClickLog = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        log.validate().map_err(|_| CorpusError::Invalid {
            line: i + 1,
            reason: "impressions and clicks differ in length".into(),
        })?;
        logs.push(log);
    }
    Ok(logs)
}

pub fn save_click_logs(path: &Path, logs: &[ClickLog]) -> Result<(), CorpusError> {
    write_jsonl(path, logs)
}

fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{BlueLink, VerticalSchema};

    fn schema(alpha: usize) -> Schema {
        Schema {
            alpha,
            g_max: 4,
            verticals: vec![VerticalSchema {
                vertical_id: 0,
                name: "web".into(),
                raw_dim: alpha,
            }],
        }
    }

    #[test]
    fn empty_file_gives_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        fs::write(&path, "").unwrap();
        assert!(load_dataset(&path, &schema(8)).unwrap().is_empty());
    }

    #[test]
    fn short_embedding_is_a_schema_error() {
        let q = QueryRecord {
            query_id: "q".into(),
            embedding: vec![0.0; 8],
            blue_links: vec![BlueLink {
                doc_id: "d".into(),
                embedding: vec![0.0; 7],
                relevance: 1,
            }],
            modules: vec![],
            orientation: vec![1.0],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save_dataset(&path, &[q]).unwrap();
        let err = load_dataset(&path, &schema(8)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("embedding") && msg.contains("expected 8"), "{msg}");
        assert!(matches!(err, CorpusError::Dimension { line: 1, expected: 8, actual: 7, .. }));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        fs::write(&path, "\n{not json}\n").unwrap();
        assert!(matches!(
            load_dataset(&path, &schema(2)),
            Err(CorpusError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn click_logs_roundtrip() {
        let logs = vec![ClickLog {
            query_id: "q".into(),
            impressions: vec!["a".into(), "b".into()],
            clicks: vec![true, false],
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        save_click_logs(&path, &logs).unwrap();
        assert_eq!(load_click_logs(&path).unwrap(), logs);
    }
}
