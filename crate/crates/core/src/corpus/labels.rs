use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use super::{CorpusError, Result};
use crate::label::Label;

/// Read a `trial_id,label` CSV.
pub fn load_labels(path: &Path) -> Result<BTreeMap<String, Label>> {
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_labels(file)
}

/// Parse label CSV content. A leading `trial_id,label` header row is skipped
/// when present.
pub fn parse_labels<R: Read>(input: R) -> Result<BTreeMap<String, Label>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(input);

    let mut labels = BTreeMap::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CorpusError::MalformedLabels {
            line: e.position().map_or(row as u64 + 1, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(row as u64 + 1, |p| p.line());
        if record.len() != 2 {
            return Err(CorpusError::MalformedLabels {
                line,
                reason: format!("expected 2 columns, found {}", record.len()),
            });
        }
        let (id, value) = (&record[0], &record[1]);
        if row == 0 && id == "trial_id" && value == "label" {
            continue;
        }
        if id.is_empty() {
            return Err(CorpusError::MalformedLabels {
                line,
                reason: "empty trial id".into(),
            });
        }
        let label = value
            .parse::<u8>()
            .ok()
            .and_then(|v| Label::try_from(v).ok())
            .ok_or_else(|| CorpusError::BadLabelValue {
                line,
                value: value.to_string(),
            })?;
        if labels.insert(id.to_string(), label).is_some() {
            return Err(CorpusError::DuplicateTrialId(id.to_string()));
        }
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_rows() {
        let labels = parse_labels("NCT1,1\nNCT2,0".as_bytes()).unwrap();
        assert_eq!(labels.len(), 2);
        assert_eq!(labels["NCT1"], Label::Success);
        assert_eq!(labels["NCT2"], Label::Failure);
    }

    #[test]
    fn header_skipped() {
        let labels = parse_labels("trial_id,label\nNCT1,1\n".as_bytes()).unwrap();
        assert_eq!(labels.len(), 1);
    }

    #[test]
    fn bad_value() {
        assert!(matches!(
            parse_labels("NCT1,2".as_bytes()),
            Err(CorpusError::BadLabelValue { value, .. }) if value == "2"
        ));
        assert!(matches!(
            parse_labels("trial_id,label\nNCT1,yes".as_bytes()),
            Err(CorpusError::BadLabelValue { line: 2, .. })
        ));
    }

    #[test]
    fn duplicate_id() {
        assert!(matches!(
            parse_labels("NCT1,1\nNCT1,0\n".as_bytes()),
            Err(CorpusError::DuplicateTrialId(id)) if id == "NCT1"
        ));
    }

    #[test]
    fn wrong_arity() {
        assert!(matches!(
            parse_labels("NCT1,1,extra\n".as_bytes()),
            Err(CorpusError::MalformedLabels { .. })
        ));
    }
}
