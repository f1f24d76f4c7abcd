use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PipelineError, Result, SyntheticCorpus};
use crate::label::Label;
use crate::llm_gateway::{Provenance, SyntheticTrial};

/// Line layout of the synthetic JSONL export.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    trial_id: String,
    text: String,
    label: Label,
    intervention: String,
    provenance: Provenance,
}

pub fn write_synthetic_jsonl<W: Write>(corpus: &SyntheticCorpus, mut out: W) -> std::io::Result<()> {
    for t in corpus {
        let line = Line {
            trial_id: t.trial_id.clone(),
            text: t.text.clone(),
            label: t.label,
            intervention: t.intervention.clone(),
            provenance: t.provenance.clone(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_synthetic_jsonl<R: Read>(input: R) -> Result<SyntheticCorpus> {
    let mut trials = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| PipelineError::MalformedSyntheticLine {
            line: line_no,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line).map_err(|e| PipelineError::MalformedSyntheticLine {
            line: line_no,
            reason: e.to_string(),
        })?;
        trials.push(SyntheticTrial {
            trial_id: parsed.trial_id,
            text: parsed.text,
            intervention: parsed.intervention,
            label: parsed.label,
            provenance: parsed.provenance,
        });
    }
    SyntheticCorpus::new(trials)
}

pub fn export_synthetic(corpus: &SyntheticCorpus, path: &Path) -> Result<()> {
    let io_err = |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    write_synthetic_jsonl(corpus, BufWriter::new(file)).map_err(io_err)
}

pub fn import_synthetic(path: &Path) -> Result<SyntheticCorpus> {
    let file = File::open(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_synthetic_jsonl(file)
}
