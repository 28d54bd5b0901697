//! JSONL dataset ingestion.
//!
//! Schema per line: `{"id": str, "question": str, "answer": str, "tests": [str]?}`.

use crate::error::DatasetError;
use serde::{Deserialize, Serialize};
use std::io::BufRead;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub question: String,
    pub answer: String,
    #[serde(default)]
    pub tests: Vec<String>,
}

/// Reads records from a JSONL reader. Malformed lines are reported with
/// their 1-based line number; blank lines are skipped; an empty input is an
/// empty dataset, not an error.
pub fn read_dataset<R: BufRead>(reader: R) -> Result<Vec<DatasetRecord>, DatasetError> {
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| DatasetError::Schema {
            line: line_no,
            message: format!("unreadable line: {e}"),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord =
            serde_json::from_str(&line).map_err(|e| DatasetError::Schema {
                line: line_no,
                message: e.to_string(),
            })?;
        if !seen.insert(record.id.clone()) {
            return Err(DatasetError::Schema {
                line: line_no,
                message: format!("duplicate id '{}'", record.id),
            });
        }
        out.push(record);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<DatasetRecord>, DatasetError> {
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_dataset(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_valid_lines_parse() {
        let data = br#"{"id":"a","question":"1+1?","answer":"2"}
{"id":"b","question":"2+2?","answer":"4","tests":["assert f(2)==4"]}
{"id":"c","question":"3+3?","answer":"6"}
"#;
        let records = read_dataset(&data[..]).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(records[1].tests.len(), 1);
    }

    #[test]
    fn missing_question_names_the_line() {
        let data = br#"{"id":"a","question":"1+1?","answer":"2"}
{"id":"b","answer":"4"}
"#;
        let err = read_dataset(&data[..]).unwrap_err();
        match err {
            DatasetError::Schema { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("question"), "{message}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let records = read_dataset(&b""[..]).unwrap();
        assert!(records.is_empty());
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let data = br#"{"id":"a","question":"x","answer":"1"}
{"id":"a","question":"y","answer":"2"}
"#;
        let err = read_dataset(&data[..]).unwrap_err();
        assert!(matches!(err, DatasetError::Schema { line: 2, .. }));
    }
}
