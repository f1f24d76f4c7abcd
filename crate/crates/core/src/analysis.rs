//! Cosine-similarity analysis over embedding files: seeded pair sampling
//! within and across the real and synthetic sets, and fixed-range
//! histograms for comparing the three distributions.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

pub const DEFAULT_PAIR_COUNT: usize = 10_000;
pub const DEFAULT_BINS: usize = 80;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("analysis: line {line}: expected dimension {expected}, got {actual}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        actual: usize,
    },
    #[error("analysis: line {line}: vector has a non-finite component")]
    NonFiniteValue { line: usize },
    #[error("analysis: duplicate embedding id {0}")]
    DuplicateId(String),
    #[error("analysis: line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("analysis: embeddings must have at least one dimension")]
    EmptyVector,
    #[error("analysis: zero vector has no direction")]
    ZeroVector,
    #[error("analysis: {0}")]
    TooFewItems(String),
    #[error("analysis: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = AnalysisError> = std::result::Result<T, E>;

/// Vectors of one dimension keyed by id, in file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingSet {
    dimension: usize,
    vectors: IndexMap<String, Vec<f64>>,
}

impl EmbeddingSet {
    pub fn from_rows<I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        let mut set = EmbeddingSet::default();
        for (i, (id, vector)) in rows.into_iter().enumerate() {
            set.insert(i + 1, id, vector)?;
        }
        Ok(set)
    }

    fn insert(&mut self, line: usize, id: String, vector: Vec<f64>) -> Result<()> {
        if vector.is_empty() {
            return Err(AnalysisError::EmptyVector);
        }
        if self.vectors.is_empty() {
            self.dimension = vector.len();
        } else if vector.len() != self.dimension {
            return Err(AnalysisError::DimensionMismatch {
                line,
                expected: self.dimension,
                actual: vector.len(),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(AnalysisError::NonFiniteValue { line });
        }
        if self.vectors.contains_key(&id) {
            return Err(AnalysisError::DuplicateId(id));
        }
        self.vectors.insert(id, vector);
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.vectors.keys().map(String::as_str)
    }

    fn entry(&self, i: usize) -> (&str, &[f64]) {
        let (id, v) = self.vectors.get_index(i).expect("index in range");
        (id, v)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Row {
    id: String,
    vector: Vec<f64>,
}

// serde_json rejects bare NaN/Infinity tokens with a generic syntax error;
// spotting them first gives the more useful NonFiniteValue.
static NON_FINITE_TOKEN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?:^|[\[,:\s])-?(?:NaN|Infinity|inf)\s*(?:[\],]|$)").expect("valid regex"));

fn outside_strings(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut in_string = false;
    let mut escaped = false;
    for c in line.chars() {
        if in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            out.push(' ');
        } else {
            if c == '"' {
                in_string = true;
            }
            out.push(if c == '"' { ' ' } else { c });
        }
    }
    out
}

/// Parse JSON-lines `{"id": ..., "vector": [...]}`; blank lines are skipped.
pub fn parse_embeddings<R: Read>(input: R) -> Result<EmbeddingSet> {
    let mut set = EmbeddingSet::default();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| AnalysisError::MalformedLine {
            line: line_no,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        if NON_FINITE_TOKEN.is_match(&outside_strings(&line)) {
            return Err(AnalysisError::NonFiniteValue { line: line_no });
        }
        let row: Row = serde_json::from_str(&line).map_err(|e| AnalysisError::MalformedLine {
            line: line_no,
            reason: e.to_string(),
        })?;
        set.insert(line_no, row.id, row.vector)?;
    }
    Ok(set)
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let file = File::open(path).map_err(|source| AnalysisError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_embeddings(file)
}

/// Cosine similarity clamped to [-1, 1].
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    assert_eq!(u.len(), v.len(), "cosine of vectors with different dimensions");
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(AnalysisError::ZeroVector);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    RealReal,
    SynSyn,
    RealSyn,
}

impl PairMode {
    pub const ALL: [PairMode; 3] = [PairMode::RealReal, PairMode::SynSyn, PairMode::RealSyn];

    pub fn as_str(self) -> &'static str {
        match self {
            PairMode::RealReal => "real_real",
            PairMode::SynSyn => "syn_syn",
            PairMode::RealSyn => "real_syn",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilaritySample {
    pub mode: PairMode,
    pub pairs: Vec<(String, String)>,
    pub similarities: Vec<f64>,
}

impl SimilaritySample {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Sample `n` ordered pairs uniformly with replacement.
///
/// With `b == None` both ids come from `a` and self-pairs are redrawn;
/// otherwise the first id comes from `a` and the second from `b`, and a
/// pair whose ids coincide (an id present in both sets) is also redrawn.
pub fn sample_pairs(
    a: &EmbeddingSet,
    b: Option<&EmbeddingSet>,
    mode: PairMode,
    n: usize,
    seed: u64,
) -> Result<SimilaritySample> {
    let second = b.unwrap_or(a);
    match b {
        None if a.len() < 2 => {
            return Err(AnalysisError::TooFewItems(format!(
                "{} needs at least 2 embeddings, got {}",
                mode.as_str(),
                a.len()
            )))
        }
        Some(b) if a.is_empty() || b.is_empty() => {
            return Err(AnalysisError::TooFewItems(format!(
                "{} needs both sets non-empty ({} and {})",
                mode.as_str(),
                a.len(),
                b.len()
            )))
        }
        Some(b) if a.len() == 1 && b.len() == 1 && a.entry(0).0 == b.entry(0).0 => {
            return Err(AnalysisError::TooFewItems(format!(
                "{} has no pair of distinct ids",
                mode.as_str()
            )))
        }
        _ => {}
    }
    if a.dimension() != second.dimension() {
        return Err(AnalysisError::DimensionMismatch {
            line: 0,
            expected: a.dimension(),
            actual: second.dimension(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut index_pairs = Vec::with_capacity(n);
    while index_pairs.len() < n {
        let i = rng.random_range(0..a.len());
        let j = rng.random_range(0..second.len());
        if a.entry(i).0 != second.entry(j).0 {
            index_pairs.push((i, j));
        }
    }

    let similarities = index_pairs
        .par_iter()
        .map(|&(i, j)| cosine(a.entry(i).1, second.entry(j).1))
        .collect::<Result<Vec<f64>>>()?;
    let pairs = index_pairs
        .into_iter()
        .map(|(i, j)| (a.entry(i).0.to_string(), second.entry(j).0.to_string()))
        .collect();
    Ok(SimilaritySample {
        mode,
        pairs,
        similarities,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn bin_edges(&self, i: usize) -> (f64, f64) {
        let width = (self.hi - self.lo) / self.counts.len() as f64;
        (self.lo + width * i as f64, self.lo + width * (i + 1) as f64)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Equal-width bins over `[lo, hi]`; each bin is left-closed and the last
/// one also includes `hi`. Values outside the range go to the end bins.
pub fn histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Histogram {
    assert!(
        bins > 0 && hi > lo,
        "histogram needs at least one bin over a non-empty range"
    );
    let mut counts = vec![0u64; bins];
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let raw = ((v - lo) / width).floor();
        let bin = if raw.is_nan() || raw < 0.0 {
            0
        } else {
            (raw as usize).min(bins - 1)
        };
        counts[bin] += 1;
    }
    Histogram { lo, hi, counts }
}

pub fn similarity_histogram(sample: &SimilaritySample, bins: usize) -> Histogram {
    histogram(&sample.similarities, bins, -1.0, 1.0)
}

/// Header `mode,id_a,id_b,similarity`, then one row per pair of each sample.
pub fn write_pairs_csv<W: Write>(samples: &[SimilaritySample], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["mode", "id_a", "id_b", "similarity"])?;
    for s in samples {
        for ((a, b), sim) in s.pairs.iter().zip(&s.similarities) {
            w.write_record([s.mode.as_str(), a, b, &format!("{sim:.6}")])?;
        }
    }
    w.flush()
}

/// Header `bin_left,bin_right,count`, one row per bin.
pub fn write_histogram_csv<W: Write>(histogram: &Histogram, out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bin_left", "bin_right", "count"])?;
    for (i, count) in histogram.counts.iter().enumerate() {
        let (l, r) = histogram.bin_edges(i);
        w.write_record([format!("{l:.6}"), format!("{r:.6}"), count.to_string()])?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(rows: &[(&str, &[f64])]) -> EmbeddingSet {
        EmbeddingSet::from_rows(rows.iter().map(|(id, v)| (id.to_string(), v.to_vec()))).unwrap()
    }

    #[test]
    fn load_valid_and_invalid() {
        let s = parse_embeddings("{\"id\":\"a\",\"vector\":[1,2,3]}\n{\"id\":\"b\",\"vector\":[0,1,0.5]}\n".as_bytes())
            .unwrap();
        assert_eq!((s.dimension(), s.len()), (3, 2));
        assert!(matches!(
            parse_embeddings("{\"id\":\"a\",\"vector\":[1,2,3]}\n{\"id\":\"b\",\"vector\":[1,2,3,4]}\n".as_bytes()),
            Err(AnalysisError::DimensionMismatch {
                line: 2,
                expected: 3,
                actual: 4
            })
        ));
        assert!(matches!(
            parse_embeddings("{\"id\":\"a\",\"vector\":[1,NaN,3]}\n".as_bytes()),
            Err(AnalysisError::NonFiniteValue { line: 1 })
        ));
        assert!(matches!(
            parse_embeddings("{\"id\":\"a\",\"vector\":[-Infinity]}\n".as_bytes()),
            Err(AnalysisError::NonFiniteValue { line: 1 })
        ));
        assert!(matches!(
            parse_embeddings("{\"id\":\"a\",\"vector\":[1]}\n{\"id\":\"a\",\"vector\":[2]}\n".as_bytes()),
            Err(AnalysisError::DuplicateId(_))
        ));
        // NaN inside an id is just text
        let s = parse_embeddings("{\"id\":\"NaN, ok\",\"vector\":[1]}\n".as_bytes()).unwrap();
        assert_eq!(s.ids().collect::<Vec<_>>(), ["NaN, ok"]);
        assert!(matches!(
            parse_embeddings("{\"id\":\"a\",\"vector\":[1e400]}\n".as_bytes()),
            Err(AnalysisError::MalformedLine { .. } | AnalysisError::NonFiniteValue { .. })
        ));
    }

    #[test]
    fn cosine_cases() {
        assert!((cosine(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(matches!(
            cosine(&[0.0, 0.0], &[1.0, 0.0]),
            Err(AnalysisError::ZeroVector)
        ));
    }

    #[test]
    fn forced_pairs() {
        let s = set(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0])]);
        let sample = sample_pairs(&s, None, PairMode::RealReal, 5, 9).unwrap();
        assert_eq!(sample.len(), 5);
        for (x, y) in &sample.pairs {
            assert_ne!(x, y);
        }
        let one = set(&[("a", &[1.0])]);
        assert!(matches!(
            sample_pairs(&one, None, PairMode::SynSyn, 1, 0),
            Err(AnalysisError::TooFewItems(_))
        ));
        assert!(matches!(
            sample_pairs(&one, Some(&EmbeddingSet::default()), PairMode::RealSyn, 1, 0),
            Err(AnalysisError::TooFewItems(_))
        ));
    }

    #[test]
    fn cross_pairs_stay_on_their_side() {
        let real = set(&[("NCT1", &[1.0, 0.0]), ("NCT2", &[0.5, 0.5]), ("NCT3", &[0.1, 0.9])]);
        let syn = set(&[("SYN-1", &[1.0, 1.0]), ("SYN-2", &[0.0, 1.0])]);
        let sample = sample_pairs(&real, Some(&syn), PairMode::RealSyn, 500, 1).unwrap();
        assert!(sample
            .pairs
            .iter()
            .all(|(a, b)| a.starts_with("NCT") && b.starts_with("SYN")));
        assert_eq!(
            sample,
            sample_pairs(&real, Some(&syn), PairMode::RealSyn, 500, 1).unwrap()
        );
        assert_ne!(
            sample.pairs,
            sample_pairs(&real, Some(&syn), PairMode::RealSyn, 500, 2)
                .unwrap()
                .pairs
        );
    }

    #[test]
    fn histogram_rules() {
        assert_eq!(histogram(&[-1.0, 0.0, 1.0], 4, -1.0, 1.0).counts, [1, 0, 1, 1]);
        let h = histogram(&[1.0; 7], 80, -1.0, 1.0);
        assert_eq!(h.counts[79], 7);
        assert_eq!(h.total(), 7);
        assert!(histogram(&[], 80, -1.0, 1.0).counts.iter().all(|&c| c == 0));
        assert_eq!(histogram(&[-1.5, 1.5], 2, -1.0, 1.0).counts, [1, 1]);
        assert_eq!(h.bin_edges(0), (-1.0, -0.975));
    }

    #[test]
    fn csv_layouts() {
        let s = set(&[("a", &[1.0, 0.0]), ("b", &[1.0, 1.0])]);
        let sample = sample_pairs(&s, None, PairMode::RealReal, 2, 0).unwrap();
        let mut buf = Vec::new();
        write_pairs_csv(std::slice::from_ref(&sample), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("mode,id_a,id_b,similarity\nreal_real,"));
        assert!(text.contains(",0.707107\n"));

        let mut buf = Vec::new();
        write_histogram_csv(&histogram(&[0.0], 2, -1.0, 1.0), &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "bin_left,bin_right,count\n-1.000000,0.000000,0\n0.000000,1.000000,1\n"
        );
    }

    proptest! {
        #[test]
        fn cosine_properties(
            u in proptest::collection::vec(-10.0f64..10.0, 4),
            v in proptest::collection::vec(-10.0f64..10.0, 4),
        ) {
            prop_assume!(u.iter().any(|x| x.abs() > 1e-6) && v.iter().any(|x| x.abs() > 1e-6));
            prop_assert!((cosine(&u, &u).unwrap() - 1.0).abs() < 1e-12);
            let c = cosine(&u, &v).unwrap();
            prop_assert_eq!(c, cosine(&v, &u).unwrap());
            prop_assert!((-1.0..=1.0).contains(&c));
        }

        #[test]
        fn histogram_conserves_mass(values in proptest::collection::vec(-1.0f64..=1.0, 0..200), bins in 1usize..100) {
            prop_assert_eq!(histogram(&values, bins, -1.0, 1.0).total(), values.len() as u64);
        }
    }
}
