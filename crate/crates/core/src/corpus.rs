//! Gold-standard data model and the line-oriented JSON dataset format.
//!
//! One sentence per line:
//!
//! ```text
//! {"tokens": ["great", "food"], "triplets": [{"aspect": [1, 1], "opinion": [0, 0], "sentiment": "positive"}]}
//! ```
//!
//! Span indices are 0-based and inclusive at both ends.

pub mod convert;

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{path}:{line}: invalid sentence: {msg}")]
    Validation {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("unknown split {0:?} (expected train, dev or test)")]
    UnknownSplit(String),
}

/// Inclusive token range `[left, right]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Span {
    pub left: usize,
    pub right: usize,
}

impl From<[usize; 2]> for Span {
    fn from([left, right]: [usize; 2]) -> Self {
        Span { left, right }
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> Self {
        [s.left, s.right]
    }
}

impl Span {
    pub fn new(left: usize, right: usize) -> Self {
        Span { left, right }
    }

    pub fn single(i: usize) -> Self {
        Span { left: i, right: i }
    }

    pub fn len(&self) -> usize {
        self.right + 1 - self.left
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, i: usize) -> bool {
        self.left <= i && i <= self.right
    }

    pub fn indices(&self) -> std::ops::RangeInclusive<usize> {
        self.left..=self.right
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.left <= other.right && other.left <= self.right
    }

    /// True when the spans share a token or sit directly next to each other.
    pub fn touches(&self, other: &Span) -> bool {
        self.left <= other.right + 1 && other.left <= self.right + 1
    }

    fn is_well_formed(&self, n: usize) -> bool {
        self.left <= self.right && self.right < n
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.left, self.right)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Neutral,
    Negative,
}

impl Polarity {
    pub const ALL: [Polarity; 3] = [Polarity::Positive, Polarity::Neutral, Polarity::Negative];

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Neutral => "neutral",
            Polarity::Negative => "negative",
        }
    }
}

impl FromStr for Polarity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "positive" | "pos" => Ok(Polarity::Positive),
            "neutral" | "neu" => Ok(Polarity::Neutral),
            "negative" | "neg" => Ok(Polarity::Negative),
            other => Err(format!("unknown sentiment {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OpinionPair {
    pub aspect: Span,
    pub opinion: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OpinionTriplet {
    pub aspect: Span,
    pub opinion: Span,
    pub sentiment: Polarity,
}

impl OpinionTriplet {
    pub fn pair(&self) -> OpinionPair {
        OpinionPair {
            aspect: self.aspect,
            opinion: self.opinion,
        }
    }
}

/// A non-empty pre-tokenized sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    tokens: Vec<String>,
}

impl Sentence {
    pub fn new(tokens: Vec<String>) -> Result<Self, String> {
        if tokens.is_empty() {
            return Err("sentence has no tokens".into());
        }
        if let Some(i) = tokens.iter().position(|t| t.is_empty()) {
            return Err(format!("token {i} is empty"));
        }
        Ok(Sentence { tokens })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedSentence {
    sentence: Sentence,
    triplets: Vec<OpinionTriplet>,
}

impl AnnotatedSentence {
    /// Validates spans against the sentence and the pairing constraints.
    pub fn new(sentence: Sentence, triplets: Vec<OpinionTriplet>) -> Result<Self, String> {
        let n = sentence.len();
        for (k, t) in triplets.iter().enumerate() {
            for (role, span) in [("aspect", t.aspect), ("opinion", t.opinion)] {
                if !span.is_well_formed(n) {
                    return Err(format!(
                        "triplet {k}: {role} span {span} out of bounds for {n} tokens"
                    ));
                }
            }
            if t.aspect.overlaps(&t.opinion) {
                return Err(format!(
                    "triplet {k}: aspect {} overlaps opinion {}",
                    t.aspect, t.opinion
                ));
            }
            if let Some(prev) = triplets[..k]
                .iter()
                .find(|p| p.pair() == t.pair() && p.sentiment != t.sentiment)
            {
                return Err(format!(
                    "pair ({}, {}) annotated as both {} and {}",
                    t.aspect,
                    t.opinion,
                    prev.sentiment.as_str(),
                    t.sentiment.as_str()
                ));
            }
        }
        Ok(AnnotatedSentence { sentence, triplets })
    }

    pub fn from_tokens(tokens: &[&str], triplets: Vec<OpinionTriplet>) -> Result<Self, String> {
        let sentence = Sentence::new(tokens.iter().map(|t| t.to_string()).collect())?;
        Self::new(sentence, triplets)
    }

    pub fn sentence(&self) -> &Sentence {
        &self.sentence
    }

    pub fn tokens(&self) -> &[String] {
        self.sentence.tokens()
    }

    pub fn len(&self) -> usize {
        self.sentence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentence.is_empty()
    }

    pub fn triplets(&self) -> &[OpinionTriplet] {
        &self.triplets
    }

    pub fn aspects(&self) -> BTreeSet<Span> {
        self.triplets.iter().map(|t| t.aspect).collect()
    }

    pub fn opinions(&self) -> BTreeSet<Span> {
        self.triplets.iter().map(|t| t.opinion).collect()
    }

    pub fn pairs(&self) -> BTreeSet<OpinionPair> {
        self.triplets.iter().map(|t| t.pair()).collect()
    }

    pub fn triplet_set(&self) -> BTreeSet<OpinionTriplet> {
        self.triplets.iter().copied().collect()
    }

    pub fn to_record(&self) -> Record {
        Record {
            tokens: self.tokens().to_vec(),
            triplets: self
                .triplets
                .iter()
                .map(|t| RecordTriplet {
                    aspect: t.aspect,
                    opinion: t.opinion,
                    sentiment: Some(t.sentiment),
                })
                .collect(),
            aspects: None,
            opinions: None,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.to_record()).expect("record serializes")
    }
}

/// One line of a dataset or prediction file.
///
/// Prediction files may omit `sentiment` (pair extraction) and may carry
/// the decoded term sets in `aspects` / `opinions`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub tokens: Vec<String>,
    pub triplets: Vec<RecordTriplet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aspects: Option<Vec<Span>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub opinions: Option<Vec<Span>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordTriplet {
    pub aspect: Span,
    pub opinion: Span,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentiment: Option<Polarity>,
}

impl Record {
    /// Converts to a gold sentence; every triplet must carry a sentiment.
    pub fn into_annotated(self) -> Result<AnnotatedSentence, String> {
        let sentence = Sentence::new(self.tokens)?;
        let triplets = self
            .triplets
            .iter()
            .enumerate()
            .map(|(k, t)| {
                t.sentiment
                    .map(|sentiment| OpinionTriplet {
                        aspect: t.aspect,
                        opinion: t.opinion,
                        sentiment,
                    })
                    .ok_or_else(|| format!("triplet {k} has no sentiment"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        AnnotatedSentence::new(sentence, triplets)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Dev, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Dev => "dev",
            SplitName::Test => "test",
        }
    }

    /// `train.jsonl`, `dev.jsonl` or `test.jsonl`.
    pub fn file_name(self) -> String {
        format!("{}.jsonl", self.as_str())
    }
}

impl FromStr for SplitName {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(SplitName::Train),
            "dev" => Ok(SplitName::Dev),
            "test" => Ok(SplitName::Test),
            other => Err(CorpusError::UnknownSplit(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub sentences: Vec<AnnotatedSentence>,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// Reads a split file, one JSON record per non-blank line.
pub fn load_split(path: &Path, split_name: &str) -> Result<DatasetSplit, CorpusError> {
    let name: SplitName = split_name.parse()?;
    let records = read_records(path)?;
    let mut sentences = Vec::with_capacity(records.len());
    for (line, record) in records {
        let ann = record
            .into_annotated()
            .map_err(|msg| CorpusError::Validation {
                path: path.to_path_buf(),
                line,
                msg,
            })?;
        sentences.push(ann);
    }
    Ok(DatasetSplit { name, sentences })
}

/// Loads `<dir>/<split>.jsonl`.
pub fn load_dataset_split(dir: &Path, split: SplitName) -> Result<DatasetSplit, CorpusError> {
    load_split(&dir.join(split.file_name()), split.as_str())
}

/// Parses every non-blank line into a [`Record`], keeping 1-based line numbers.
pub fn read_records(path: &Path) -> Result<Vec<(usize, Record)>, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::open(path).map_err(io_err)?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            path: path.to_path_buf(),
            line: k + 1,
            msg: e.to_string(),
        })?;
        out.push((k + 1, record));
    }
    Ok(out)
}

pub fn write_split<'a, W: Write>(
    mut out: W,
    sentences: impl IntoIterator<Item = &'a AnnotatedSentence>,
) -> std::io::Result<()> {
    for s in sentences {
        writeln!(out, "{}", s.to_json_line())?;
    }
    Ok(())
}

pub fn save_split(path: &Path, sentences: &[AnnotatedSentence]) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    write_split(std::io::BufWriter::new(file), sentences).map_err(io_err)
}

/// Sentence, term, pair and triplet counts of a split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatasetStats {
    pub sentences: usize,
    pub aspects: usize,
    pub opinions: usize,
    pub pairs: usize,
    pub triplets: usize,
}

/// Terms and pairs are counted as distinct spans within each sentence.
pub fn dataset_stats(split: &DatasetSplit) -> DatasetStats {
    stats_of(&split.sentences)
}

pub fn stats_of(sentences: &[AnnotatedSentence]) -> DatasetStats {
    sentences
        .iter()
        .fold(DatasetStats::default(), |acc, s| DatasetStats {
            sentences: acc.sentences + 1,
            aspects: acc.aspects + s.aspects().len(),
            opinions: acc.opinions + s.opinions().len(),
            pairs: acc.pairs + s.pairs().len(),
            triplets: acc.triplets + s.triplets().len(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trip(a: (usize, usize), o: (usize, usize), s: Polarity) -> OpinionTriplet {
        OpinionTriplet {
            aspect: Span::new(a.0, a.1),
            opinion: Span::new(o.0, o.1),
            sentiment: s,
        }
    }

    fn write_tmp(lines: &[&str]) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.jsonl");
        let mut f = fs::File::create(&path).unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        (dir, path)
    }

    #[test]
    fn minimal_line_loads() {
        let (_d, path) = write_tmp(&[
            r#"{"tokens":["great","food"],"triplets":[{"aspect":[1,1],"opinion":[0,0],"sentiment":"positive"}]}"#,
        ]);
        let split = load_split(&path, "train").unwrap();
        assert_eq!(split.len(), 1);
        assert_eq!(split.sentences[0].triplets().len(), 1);
        assert_eq!(
            split.sentences[0].triplets()[0],
            trip((1, 1), (0, 0), Polarity::Positive)
        );
    }

    #[test]
    fn out_of_bounds_span_names_the_line() {
        let (_d, path) = write_tmp(&[
            r#"{"tokens":["great","food"],"triplets":[]}"#,
            r#"{"tokens":["great","food"],"triplets":[{"aspect":[5,6],"opinion":[0,0],"sentiment":"positive"}]}"#,
        ]);
        match load_split(&path, "train") {
            Err(CorpusError::Validation { line, msg, .. }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("out of bounds"), "{msg}");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_json_reports_line() {
        let (_d, path) = write_tmp(&[r#"{"tokens":["a"],"triplets":[]}"#, "{not json"]);
        assert!(matches!(
            load_split(&path, "dev"),
            Err(CorpusError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn overlapping_aspect_and_opinion_rejected() {
        let s = Sentence::new(vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let err = AnnotatedSentence::new(s, vec![trip((0, 1), (1, 2), Polarity::Neutral)])
            .unwrap_err();
        assert!(err.contains("overlaps"));
    }

    #[test]
    fn conflicting_sentiment_rejected() {
        let s = Sentence::new(vec!["a".into(), "b".into()]).unwrap();
        let err = AnnotatedSentence::new(
            s,
            vec![
                trip((0, 0), (1, 1), Polarity::Positive),
                trip((0, 0), (1, 1), Polarity::Negative),
            ],
        )
        .unwrap_err();
        assert!(err.contains("both"));
    }

    #[test]
    fn empty_tokens_rejected() {
        assert!(Sentence::new(vec![]).is_err());
        assert!(Sentence::new(vec!["a".into(), "".into()]).is_err());
    }

    #[test]
    fn missing_sentiment_is_a_validation_error_for_gold() {
        let (_d, path) =
            write_tmp(&[r#"{"tokens":["a","b"],"triplets":[{"aspect":[0,0],"opinion":[1,1]}]}"#]);
        assert!(matches!(
            load_split(&path, "test"),
            Err(CorpusError::Validation { line: 1, .. })
        ));
    }

    #[test]
    fn unknown_split_name() {
        let (_d, path) = write_tmp(&[]);
        assert!(matches!(
            load_split(&path, "validation"),
            Err(CorpusError::UnknownSplit(_))
        ));
    }

    #[test]
    fn stats_count_distinct_terms() {
        let ann = AnnotatedSentence::from_tokens(
            &["food", "good", "and", "cheap"],
            vec![
                trip((0, 0), (1, 1), Polarity::Positive),
                trip((0, 0), (3, 3), Polarity::Positive),
            ],
        )
        .unwrap();
        let split = DatasetSplit {
            name: SplitName::Train,
            sentences: vec![ann],
        };
        assert_eq!(
            dataset_stats(&split),
            DatasetStats {
                sentences: 1,
                aspects: 1,
                opinions: 2,
                pairs: 2,
                triplets: 2
            }
        );
    }

    #[test]
    fn empty_split_stats_are_zero() {
        let split = DatasetSplit {
            name: SplitName::Test,
            sentences: vec![],
        };
        assert_eq!(dataset_stats(&split), DatasetStats::default());
    }

    #[test]
    fn serialized_line_is_byte_stable() {
        let line = r#"{"tokens":["great","food"],"triplets":[{"aspect":[1,1],"opinion":[0,0],"sentiment":"positive"}]}"#;
        let (_d, path) = write_tmp(&[line]);
        let split = load_split(&path, "train").unwrap();
        assert_eq!(split.sentences[0].to_json_line(), line);
    }

    #[test]
    fn span_touching() {
        assert!(Span::new(0, 1).touches(&Span::new(2, 3)));
        assert!(Span::new(0, 2).touches(&Span::new(2, 3)));
        assert!(!Span::new(0, 1).touches(&Span::new(3, 3)));
        assert!(!Span::new(0, 1).overlaps(&Span::new(2, 3)));
    }
}
