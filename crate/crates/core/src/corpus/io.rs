use std::io::{BufRead, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{parse_trial_xml, CorpusError, LabeledCorpus, LabeledTrial, Result, TrialRecord};
use crate::label::Label;

/// Records parsed from a directory or archive, plus the sources that failed.
#[derive(Debug, Default)]
pub struct IngestReport {
    pub records: Vec<TrialRecord>,
    pub failures: Vec<(String, CorpusError)>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Parse every `.xml` file under a directory (recursively, sorted by path) or
/// inside a `.zip` archive (sorted by entry name).
///
/// A file that fails to parse is reported in `failures` and does not stop the
/// ingest.
pub fn load_records(source: &Path) -> Result<IngestReport> {
    let documents = if source.is_dir() {
        read_directory(source)?
    } else {
        read_zip(source)?
    };

    let parsed: Vec<(String, Result<TrialRecord>)> = documents
        .into_par_iter()
        .map(|(name, text)| {
            let parsed = parse_trial_xml(&text);
            (name, parsed)
        })
        .collect();

    let mut report = IngestReport::default();
    for (name, parsed) in parsed {
        match parsed {
            Ok(record) => report.records.push(record),
            Err(e) => report.failures.push((name, e)),
        }
    }
    Ok(report)
}

fn read_directory(root: &Path) -> Result<Vec<(String, String)>> {
    let mut paths = Vec::new();
    let mut pending = vec![root.to_path_buf()];
    while let Some(dir) = pending.pop() {
        for entry in std::fs::read_dir(&dir).map_err(io_err(&dir))? {
            let path = entry.map_err(io_err(&dir))?.path();
            if path.is_dir() {
                pending.push(path);
            } else if has_xml_extension(&path) {
                paths.push(path);
            }
        }
    }
    paths.sort();
    paths
        .into_iter()
        .map(|path| {
            let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
            Ok((path.display().to_string(), text))
        })
        .collect()
}

fn has_xml_extension(path: &Path) -> bool {
    path.extension().is_some_and(|ext| ext.eq_ignore_ascii_case("xml"))
}

fn read_zip(path: &Path) -> Result<Vec<(String, String)>> {
    let archive_err = |reason: String| CorpusError::Archive {
        path: path.to_path_buf(),
        reason,
    };
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut archive = zip::ZipArchive::new(file).map_err(|e| archive_err(e.to_string()))?;

    let mut names: Vec<String> = archive
        .file_names()
        .filter(|name| has_xml_extension(Path::new(name)))
        .map(str::to_string)
        .collect();
    names.sort();

    let mut documents = Vec::with_capacity(names.len());
    for name in names {
        let mut entry = archive.by_name(&name).map_err(|e| archive_err(e.to_string()))?;
        let mut text = String::new();
        entry
            .read_to_string(&mut text)
            .map_err(|e| archive_err(format!("{name}: {e}")))?;
        documents.push((name, text));
    }
    Ok(documents)
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusLine {
    trial_id: String,
    text: String,
    label: Label,
    interventions: Vec<String>,
}

/// One JSON object per trial: `trial_id`, `text`, `label`, `interventions`.
pub fn write_corpus_jsonl<W: Write>(corpus: &LabeledCorpus, mut out: W) -> std::io::Result<()> {
    for trial in corpus {
        let line = CorpusLine {
            trial_id: trial.record.trial_id.clone(),
            text: trial.text.clone(),
            label: trial.label,
            interventions: trial.record.intervention_names.clone(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Read a corpus written by [`write_corpus_jsonl`].
///
/// The raw XML is not part of the file; records come back with an empty
/// `raw_xml` and fields recovered from the text lines.
pub fn read_corpus_jsonl<R: BufRead>(input: R) -> Result<LabeledCorpus> {
    let mut trials = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| CorpusError::MalformedCorpusLine {
            line: line_no,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CorpusLine = serde_json::from_str(&line).map_err(|e| CorpusError::MalformedCorpusLine {
            line: line_no,
            reason: e.to_string(),
        })?;
        let fields = parsed
            .text
            .lines()
            .filter_map(|l| l.split_once(": "))
            .map(|(p, t)| (p.to_string(), t.to_string()))
            .collect();
        trials.push(LabeledTrial {
            record: TrialRecord {
                trial_id: parsed.trial_id,
                raw_xml: String::new(),
                fields,
                intervention_names: parsed
                    .interventions
                    .iter()
                    .map(|n| super::canonicalize_name(n))
                    .collect(),
                overall_status: None,
                why_stop: None,
            },
            text: parsed.text,
            label: parsed.label,
        });
    }
    LabeledCorpus::from_trials(trials)
}

/// Convenience wrapper over [`read_corpus_jsonl`] for a path.
pub fn read_corpus_file(path: &Path) -> Result<LabeledCorpus> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    read_corpus_jsonl(std::io::BufReader::new(file))
}

impl LabeledCorpus {
    pub fn load(path: &Path) -> Result<Self> {
        read_corpus_file(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(io_err(path))?;
        write_corpus_jsonl(self, std::io::BufWriter::new(file)).map_err(io_err(path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_labeled_corpus;
    use std::collections::BTreeMap;

    fn xml(id: &str, drug: &str, status: &str) -> String {
        format!(
            "<clinical_study><id_info><nct_id>{id}</nct_id></id_info>\
             <brief_title>Study of {drug}</brief_title>\
             <overall_status>{status}</overall_status>\
             <intervention><intervention_name>{drug}</intervention_name></intervention>\
             </clinical_study>"
        )
    }

    #[test]
    fn directory_ingest_skips_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("b.xml"), xml("NCT2", "Ibuprofen", "Terminated")).unwrap();
        std::fs::write(dir.path().join("a.xml"), xml("NCT1", "Aspirin", "Completed")).unwrap();
        std::fs::write(dir.path().join("bad.xml"), "<oops>").unwrap();
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let report = load_records(dir.path()).unwrap();
        let ids: Vec<_> = report.records.iter().map(|r| r.trial_id.as_str()).collect();
        assert_eq!(ids, ["NCT1", "NCT2"]);
        assert_eq!(report.failures.len(), 1);
        assert!(report.failures[0].0.ends_with("bad.xml"));
    }

    #[test]
    fn zip_ingest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dump.zip");
        {
            let mut writer = zip::ZipWriter::new(std::fs::File::create(&path).unwrap());
            let opts = zip::write::SimpleFileOptions::default();
            writer.start_file("NCT0000/NCT2.xml", opts).unwrap();
            writer.write_all(xml("NCT2", "b", "Completed").as_bytes()).unwrap();
            writer.start_file("NCT0000/NCT1.xml", opts).unwrap();
            writer.write_all(xml("NCT1", "a", "Completed").as_bytes()).unwrap();
            writer.start_file("README.txt", opts).unwrap();
            writer.write_all(b"hi").unwrap();
            writer.finish().unwrap();
        }
        let report = load_records(&path).unwrap();
        let ids: Vec<_> = report.records.iter().map(|r| r.trial_id.as_str()).collect();
        assert_eq!(ids, ["NCT1", "NCT2"]);
        assert!(report.failures.is_empty());
    }

    #[test]
    fn jsonl_round_trip() {
        let records = vec![
            parse_trial_xml(&xml("NCT1", "Aspirin", "Completed")).unwrap(),
            parse_trial_xml(&xml("NCT2", "Ibuprofen", "Terminated")).unwrap(),
        ];
        let labels: BTreeMap<_, _> = [
            ("NCT1".to_string(), Label::Success),
            ("NCT2".to_string(), Label::Failure),
        ]
        .into();
        let corpus = build_labeled_corpus(records, &labels).unwrap();
        let mut buf = Vec::new();
        write_corpus_jsonl(&corpus, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with(r#"{"trial_id":"NCT1","text":"id_info/nct_id: NCT1\nbrief_title: Study of Aspirin\nintervention/intervention_name: Aspirin\n","label":1,"interventions":["aspirin"]}"#));

        let back = read_corpus_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in corpus.iter().zip(back.iter()) {
            assert_eq!(a.text, b.text);
            assert_eq!(a.label, b.label);
            assert_eq!(crate::corpus::serialize_trial(&b.record), b.text);
            assert_eq!(a.record.intervention_names, b.record.intervention_names);
        }
    }
}
