//! Word-pair tag grids: encoding gold annotations and decoding predictions.
//!
//! A sentence of `n` words is described by one tag per unordered word pair
//! `(i, j)`, `i <= j`, including each word paired with itself. Diagonal `A`
//! / `O` runs delimit aspect and opinion terms; a pairing tag on any cell
//! between an aspect word and an opinion word links the two terms.

use std::collections::BTreeSet;
use std::fmt::Debug;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    AnnotatedSentence, OpinionPair, OpinionTriplet, Polarity, Record, RecordTriplet, Span,
};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("cell ({i}, {j}) is tagged both {first} and {second}")]
    SentimentConflict {
        i: usize,
        j: usize,
        first: &'static str,
        second: &'static str,
    },
    #[error("cell {cell}: distribution sums to {sum}, expected 1")]
    NotNormalized { cell: usize, sum: f64 },
    #[error("expected {expected} values, got {got}")]
    Size { expected: usize, got: usize },
    #[error("unknown tag {0:?}")]
    UnknownTag(String),
    #[error("cell ({i}, {j}) outside the upper triangle of a {n}-word grid")]
    BadCell { i: usize, j: usize, n: usize },
    #[error("grid task {found} does not match {expected}")]
    TaskMismatch { expected: Task, found: Task },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Opinion pair extraction.
    Ope,
    /// Opinion triplet extraction.
    Ote,
}

impl Task {
    pub fn num_tags(self) -> usize {
        match self {
            Task::Ope => OpeTag::ALL.len(),
            Task::Ote => OteTag::ALL.len(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Ope => "ope",
            Task::Ote => "ote",
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ope" => Ok(Task::Ope),
            "ote" => Ok(Task::Ote),
            other => Err(format!("unknown task {other:?} (expected ope or ote)")),
        }
    }
}

/// A task's tag alphabet. `ALL` fixes the class order used by the model.
pub trait TagSet: Copy + Eq + Debug + Send + Sync + 'static {
    const TASK: Task;
    const ALL: &'static [Self];
    const ASPECT: Self;
    const OPINION: Self;
    const NONE: Self;

    fn name(self) -> &'static str;

    /// Tag written on cells linking the aspect and opinion of a triplet.
    fn cross(sentiment: Polarity) -> Self;

    fn is_cross(self) -> bool;

    /// Sentiment carried by a cross tag, if the tag set has sentiments.
    fn polarity(self) -> Option<Polarity>;

    fn index(self) -> usize {
        Self::ALL
            .iter()
            .position(|&t| t == self)
            .expect("tag is in its own alphabet")
    }

    fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|t| t.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpeTag {
    A,
    O,
    P,
    N,
}

impl TagSet for OpeTag {
    const TASK: Task = Task::Ope;
    const ALL: &'static [Self] = &[OpeTag::A, OpeTag::O, OpeTag::P, OpeTag::N];
    const ASPECT: Self = OpeTag::A;
    const OPINION: Self = OpeTag::O;
    const NONE: Self = OpeTag::N;

    fn name(self) -> &'static str {
        match self {
            OpeTag::A => "A",
            OpeTag::O => "O",
            OpeTag::P => "P",
            OpeTag::N => "N",
        }
    }

    fn cross(_: Polarity) -> Self {
        OpeTag::P
    }

    fn is_cross(self) -> bool {
        self == OpeTag::P
    }

    fn polarity(self) -> Option<Polarity> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OteTag {
    A,
    O,
    Pos,
    Neu,
    Neg,
    N,
}

impl TagSet for OteTag {
    const TASK: Task = Task::Ote;
    const ALL: &'static [Self] = &[
        OteTag::A,
        OteTag::O,
        OteTag::Pos,
        OteTag::Neu,
        OteTag::Neg,
        OteTag::N,
    ];
    const ASPECT: Self = OteTag::A;
    const OPINION: Self = OteTag::O;
    const NONE: Self = OteTag::N;

    fn name(self) -> &'static str {
        match self {
            OteTag::A => "A",
            OteTag::O => "O",
            OteTag::Pos => "Pos",
            OteTag::Neu => "Neu",
            OteTag::Neg => "Neg",
            OteTag::N => "N",
        }
    }

    fn cross(sentiment: Polarity) -> Self {
        match sentiment {
            Polarity::Positive => OteTag::Pos,
            Polarity::Neutral => OteTag::Neu,
            Polarity::Negative => OteTag::Neg,
        }
    }

    fn is_cross(self) -> bool {
        self.polarity().is_some()
    }

    fn polarity(self) -> Option<Polarity> {
        match self {
            OteTag::Pos => Some(Polarity::Positive),
            OteTag::Neu => Some(Polarity::Neutral),
            OteTag::Neg => Some(Polarity::Negative),
            _ => None,
        }
    }
}

/// Number of cells in the upper triangle (diagonal included) of an `n`-word grid.
pub fn num_cells(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Flat position of `(i, j)`, `i <= j < n`, in row-major upper-triangular order.
pub fn cell_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i <= j && j < n);
    i * (2 * n - i + 1) / 2 + (j - i)
}

/// All `(i, j)` with `i <= j < n` in storage order.
pub fn cell_coords(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect()
}

/// Upper-triangular grid of word-pair tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagGrid<T> {
    n: usize,
    cells: Vec<T>,
}

impl<T: TagSet> TagGrid<T> {
    pub fn filled(n: usize, tag: T) -> Self {
        TagGrid {
            n,
            cells: vec![tag; num_cells(n)],
        }
    }

    pub fn from_cells(n: usize, cells: Vec<T>) -> Result<Self, GridError> {
        if cells.len() != num_cells(n) {
            return Err(GridError::Size {
                expected: num_cells(n),
                got: cells.len(),
            });
        }
        Ok(TagGrid { n, cells })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cells(&self) -> &[T] {
        &self.cells
    }

    /// Tag of the unordered pair `{i, j}`.
    pub fn get(&self, i: usize, j: usize) -> T {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        self.cells[cell_index(self.n, a, b)]
    }

    pub fn set(&mut self, i: usize, j: usize, tag: T) {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        let k = cell_index(self.n, a, b);
        self.cells[k] = tag;
    }

    /// Class indices of every cell, in storage order.
    pub fn class_indices(&self) -> Vec<usize> {
        self.cells.iter().map(|t| t.index()).collect()
    }

    pub fn to_dump(&self, tokens: Option<&[String]>) -> GridDump {
        let cells = cell_coords(self.n)
            .into_iter()
            .zip(&self.cells)
            .filter(|(_, &t)| t != T::NONE)
            .map(|((i, j), t)| (i, j, t.name().to_string()))
            .collect();
        GridDump {
            n: self.n,
            task: T::TASK,
            tokens: tokens.map(|t| t.to_vec()),
            cells,
        }
    }

    pub fn from_dump(dump: &GridDump) -> Result<Self, GridError> {
        if dump.task != T::TASK {
            return Err(GridError::TaskMismatch {
                expected: T::TASK,
                found: dump.task,
            });
        }
        let mut grid = TagGrid::filled(dump.n, T::NONE);
        for (i, j, name) in &dump.cells {
            let (i, j) = (*i, *j);
            if i > j || j >= dump.n {
                return Err(GridError::BadCell { i, j, n: dump.n });
            }
            let tag = T::parse(name).ok_or_else(|| GridError::UnknownTag(name.clone()))?;
            grid.set(i, j, tag);
        }
        Ok(grid)
    }
}

/// Compact JSON form of a grid: only non-`N` cells are listed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridDump {
    pub n: usize,
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<String>>,
    pub cells: Vec<(usize, usize, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TermKind {
    Aspect,
    Opinion,
}

/// Non-fatal encoding problems: the grid is produced but will not decode
/// back to the gold annotation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncodeWarning {
    /// Two distinct same-type spans that touch on the diagonal merge when decoded.
    AdjacentSpans {
        term: TermKind,
        first: Span,
        second: Span,
    },
    /// A cell claimed by two incompatible relations; the later one was kept.
    CellConflict {
        i: usize,
        j: usize,
        kept: &'static str,
        dropped: &'static str,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoded<T> {
    pub grid: TagGrid<T>,
    pub warnings: Vec<EncodeWarning>,
}

/// Tags every word pair of a gold sentence.
///
/// Cross tags go on all cells between an aspect and its paired opinion; `A`
/// and `O` go on all cells inside one aspect / opinion span.
pub fn encode_grid<T: TagSet>(ann: &AnnotatedSentence) -> Result<Encoded<T>, GridError> {
    let n = ann.len();
    let mut grid = TagGrid::filled(n, T::NONE);
    let mut warnings = Vec::new();

    for t in ann.triplets() {
        let tag = T::cross(t.sentiment);
        for i in t.aspect.indices() {
            for j in t.opinion.indices() {
                let cur = grid.get(i, j);
                if cur != T::NONE && cur != tag {
                    return Err(GridError::SentimentConflict {
                        i: i.min(j),
                        j: i.max(j),
                        first: cur.name(),
                        second: tag.name(),
                    });
                }
                grid.set(i, j, tag);
            }
        }
    }

    let aspects = ann.aspects();
    let opinions = ann.opinions();
    for (term, spans, tag) in [
        (TermKind::Aspect, &aspects, T::ASPECT),
        (TermKind::Opinion, &opinions, T::OPINION),
    ] {
        let list: Vec<Span> = spans.iter().copied().collect();
        for (k, a) in list.iter().enumerate() {
            for b in &list[k + 1..] {
                if a.touches(b) {
                    warnings.push(EncodeWarning::AdjacentSpans {
                        term,
                        first: *a,
                        second: *b,
                    });
                }
            }
        }
        for s in &list {
            for i in s.indices() {
                for j in i..=s.right {
                    let cur = grid.get(i, j);
                    if cur != T::NONE && cur != tag {
                        warnings.push(EncodeWarning::CellConflict {
                            i,
                            j,
                            kept: tag.name(),
                            dropped: cur.name(),
                        });
                    }
                    grid.set(i, j, tag);
                }
            }
        }
    }
    Ok(Encoded { grid, warnings })
}

/// Extraction result for one sentence. `triplets` stays empty for pair extraction.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DecodedResult {
    pub aspects: BTreeSet<Span>,
    pub opinions: BTreeSet<Span>,
    pub pairs: BTreeSet<OpinionPair>,
    pub triplets: BTreeSet<OpinionTriplet>,
}

impl DecodedResult {
    /// The gold annotation viewed as a decoding result.
    pub fn from_gold(ann: &AnnotatedSentence, task: Task) -> Self {
        DecodedResult {
            aspects: ann.aspects(),
            opinions: ann.opinions(),
            pairs: ann.pairs(),
            triplets: match task {
                Task::Ope => BTreeSet::new(),
                Task::Ote => ann.triplet_set(),
            },
        }
    }

    /// Prediction record in dataset-line form; sentiment is omitted for pairs.
    pub fn to_record(&self, tokens: &[String], task: Task) -> Record {
        let triplets = match task {
            Task::Ope => self
                .pairs
                .iter()
                .map(|p| RecordTriplet {
                    aspect: p.aspect,
                    opinion: p.opinion,
                    sentiment: None,
                })
                .collect(),
            Task::Ote => self
                .triplets
                .iter()
                .map(|t| RecordTriplet {
                    aspect: t.aspect,
                    opinion: t.opinion,
                    sentiment: Some(t.sentiment),
                })
                .collect(),
        };
        Record {
            tokens: tokens.to_vec(),
            triplets,
            aspects: Some(self.aspects.iter().copied().collect()),
            opinions: Some(self.opinions.iter().copied().collect()),
        }
    }

    /// Reads a prediction record. Term sets default to the spans used by
    /// the listed pairs when the record does not carry them.
    pub fn from_record(record: &Record, task: Task) -> Result<Self, String> {
        let mut out = DecodedResult::default();
        for (k, t) in record.triplets.iter().enumerate() {
            out.pairs.insert(OpinionPair {
                aspect: t.aspect,
                opinion: t.opinion,
            });
            if task == Task::Ote {
                let sentiment = t
                    .sentiment
                    .ok_or_else(|| format!("triplet {k} has no sentiment"))?;
                out.triplets.insert(OpinionTriplet {
                    aspect: t.aspect,
                    opinion: t.opinion,
                    sentiment,
                });
            }
        }
        out.aspects = match &record.aspects {
            Some(a) => a.iter().copied().collect(),
            None => out.pairs.iter().map(|p| p.aspect).collect(),
        };
        out.opinions = match &record.opinions {
            Some(o) => o.iter().copied().collect(),
            None => out.pairs.iter().map(|p| p.opinion).collect(),
        };
        Ok(out)
    }
}

/// Maximal runs of `tag` on the diagonal.
fn diagonal_runs<T: TagSet>(grid: &TagGrid<T>, tag: T) -> BTreeSet<Span> {
    let mut spans = BTreeSet::new();
    let mut start = None;
    for i in 0..grid.n() {
        match (grid.get(i, i) == tag, start) {
            (true, None) => start = Some(i),
            (false, Some(l)) => {
                spans.insert(Span::new(l, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(l) = start {
        spans.insert(Span::new(l, grid.n() - 1));
    }
    spans
}

fn slot(p: Polarity) -> usize {
    match p {
        Polarity::Positive => 0,
        Polarity::Neutral => 1,
        Polarity::Negative => 2,
    }
}

/// Majority sentiment with ties resolved Negative, then Neutral, then Positive.
fn majority(counts: [usize; 3]) -> Option<Polarity> {
    let top = counts.into_iter().max().filter(|&c| c > 0)?;
    [Polarity::Negative, Polarity::Neutral, Polarity::Positive]
        .into_iter()
        .find(|&p| counts[slot(p)] == top)
}

/// Relaxed decoding: terms come from diagonal runs only, and a pair needs a
/// single cross-tagged cell between its two terms.
pub fn decode<T: TagSet>(grid: &TagGrid<T>) -> DecodedResult {
    let aspects = diagonal_runs(grid, T::ASPECT);
    let opinions = diagonal_runs(grid, T::OPINION);
    let mut pairs = BTreeSet::new();
    let mut triplets = BTreeSet::new();
    for &a in &aspects {
        for &o in &opinions {
            let mut counts = [0usize; 3];
            let mut linked = false;
            for i in a.indices() {
                for j in o.indices() {
                    let tag = grid.get(i, j);
                    if tag.is_cross() {
                        linked = true;
                        if let Some(p) = tag.polarity() {
                            counts[slot(p)] += 1;
                        }
                    }
                }
            }
            if !linked {
                continue;
            }
            pairs.insert(OpinionPair {
                aspect: a,
                opinion: o,
            });
            if T::TASK == Task::Ote {
                if let Some(sentiment) = majority(counts) {
                    triplets.insert(OpinionTriplet {
                        aspect: a,
                        opinion: o,
                        sentiment,
                    });
                }
            }
        }
    }
    DecodedResult {
        aspects,
        opinions,
        pairs,
        triplets,
    }
}

pub fn decode_ope(grid: &TagGrid<OpeTag>) -> DecodedResult {
    decode(grid)
}

pub fn decode_ote(grid: &TagGrid<OteTag>) -> DecodedResult {
    decode(grid)
}

/// Argmax tag per cell; ties go to the earliest tag in `T::ALL`.
///
/// `probs` is row-major `[num_cells(n), T::ALL.len()]` and every row must sum
/// to one within `1e-6`.
pub fn grid_from_probabilities<T: TagSet, S: Scalar>(
    probs: &[S],
    n: usize,
) -> Result<TagGrid<T>, GridError> {
    let c = T::ALL.len();
    let m = num_cells(n);
    if probs.len() != m * c {
        return Err(GridError::Size {
            expected: m * c,
            got: probs.len(),
        });
    }
    let mut cells = Vec::with_capacity(m);
    for (k, row) in probs.chunks(c).enumerate() {
        let sum: f64 = row.iter().map(|v| v.as_f64()).sum();
        if !((sum - 1.0).abs() <= 1e-6) {
            return Err(GridError::NotNormalized { cell: k, sum });
        }
        let mut best = 0;
        for (t, v) in row.iter().enumerate().skip(1) {
            if *v > row[best] {
                best = t;
            }
        }
        cells.push(T::ALL[best]);
    }
    TagGrid::from_cells(n, cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn great_food() -> AnnotatedSentence {
        AnnotatedSentence::from_tokens(
            &["great", "food"],
            vec![OpinionTriplet {
                aspect: Span::single(1),
                opinion: Span::single(0),
                sentiment: Polarity::Positive,
            }],
        )
        .unwrap()
    }

    #[test]
    fn cell_index_is_dense_and_ordered() {
        for n in 1..8 {
            let coords = cell_coords(n);
            assert_eq!(coords.len(), num_cells(n));
            for (k, &(i, j)) in coords.iter().enumerate() {
                assert_eq!(cell_index(n, i, j), k);
            }
        }
    }

    #[test]
    fn encode_ote_minimal() {
        let g = encode_grid::<OteTag>(&great_food()).unwrap().grid;
        assert_eq!(g.get(0, 0), OteTag::O);
        assert_eq!(g.get(1, 1), OteTag::A);
        assert_eq!(g.get(0, 1), OteTag::Pos);
        assert_eq!(g.get(1, 0), OteTag::Pos);
    }

    #[test]
    fn encode_ope_minimal() {
        let g = encode_grid::<OpeTag>(&great_food()).unwrap().grid;
        assert_eq!(g.cells(), &[OpeTag::O, OpeTag::P, OpeTag::A]);
    }

    #[test]
    fn multiword_aspect_cells_are_a() {
        let ann = AnnotatedSentence::from_tokens(
            &["the", "hot", "dogs", "are", "top", "notch"],
            vec![OpinionTriplet {
                aspect: Span::new(1, 2),
                opinion: Span::new(4, 5),
                sentiment: Polarity::Positive,
            }],
        )
        .unwrap();
        let g = encode_grid::<OpeTag>(&ann).unwrap().grid;
        assert_eq!(g.get(1, 2), OpeTag::A);
        assert_eq!(g.get(4, 5), OpeTag::O);
        for i in 1..=2 {
            for j in 4..=5 {
                assert_eq!(g.get(i, j), OpeTag::P);
            }
        }
        assert_eq!(g.get(0, 3), OpeTag::N);
    }

    #[test]
    fn adjacent_aspects_warn() {
        let ann = AnnotatedSentence::from_tokens(
            &["wine", "list", "great"],
            vec![
                OpinionTriplet {
                    aspect: Span::single(0),
                    opinion: Span::single(2),
                    sentiment: Polarity::Positive,
                },
                OpinionTriplet {
                    aspect: Span::single(1),
                    opinion: Span::single(2),
                    sentiment: Polarity::Positive,
                },
            ],
        )
        .unwrap();
        let enc = encode_grid::<OteTag>(&ann).unwrap();
        assert_eq!(
            enc.warnings,
            vec![EncodeWarning::AdjacentSpans {
                term: TermKind::Aspect,
                first: Span::single(0),
                second: Span::single(1)
            }]
        );
        // the two aspects decode as one merged term
        let dec = decode(&enc.grid);
        assert_eq!(dec.aspects, BTreeSet::from([Span::new(0, 1)]));
    }

    #[test]
    fn decode_six_token_example() {
        let mut g = TagGrid::filled(6, OpeTag::N);
        g.set(1, 1, OpeTag::A);
        g.set(2, 2, OpeTag::A);
        g.set(4, 4, OpeTag::O);
        g.set(5, 5, OpeTag::O);
        g.set(1, 4, OpeTag::P);
        let d = decode_ope(&g);
        assert_eq!(d.aspects, BTreeSet::from([Span::new(1, 2)]));
        assert_eq!(d.opinions, BTreeSet::from([Span::new(4, 5)]));
        assert_eq!(
            d.pairs,
            BTreeSet::from([OpinionPair {
                aspect: Span::new(1, 2),
                opinion: Span::new(4, 5)
            }])
        );
        assert!(d.triplets.is_empty());
    }

    #[test]
    fn all_n_grid_decodes_empty() {
        let g = TagGrid::filled(5, OteTag::N);
        assert_eq!(decode_ote(&g), DecodedResult::default());
    }

    #[test]
    fn terms_without_cross_tags_do_not_pair() {
        let mut g = TagGrid::filled(3, OpeTag::N);
        g.set(0, 0, OpeTag::A);
        g.set(2, 2, OpeTag::O);
        let d = decode_ope(&g);
        assert_eq!(d.aspects.len(), 1);
        assert_eq!(d.opinions.len(), 1);
        assert!(d.pairs.is_empty());
    }

    /// Aspect [0,1], opinion [2,3]: four cross cells.
    fn ote_with_cross(tags: [OteTag; 4]) -> DecodedResult {
        let mut g = TagGrid::filled(4, OteTag::N);
        g.set(0, 0, OteTag::A);
        g.set(1, 1, OteTag::A);
        g.set(2, 2, OteTag::O);
        g.set(3, 3, OteTag::O);
        let cross = [(0, 2), (0, 3), (1, 2), (1, 3)];
        for ((i, j), t) in cross.into_iter().zip(tags) {
            g.set(i, j, t);
        }
        decode_ote(&g)
    }

    #[test]
    fn majority_sentiment() {
        let d = ote_with_cross([OteTag::Pos, OteTag::Pos, OteTag::Neu, OteTag::N]);
        assert_eq!(d.triplets.iter().next().unwrap().sentiment, Polarity::Positive);
    }

    #[test]
    fn no_sentiment_cells_no_triplet() {
        let d = ote_with_cross([OteTag::N; 4]);
        assert!(d.triplets.is_empty());
        assert!(d.pairs.is_empty());
    }

    #[test]
    fn sentiment_ties_prefer_negative_then_neutral() {
        let d = ote_with_cross([OteTag::Pos, OteTag::Neg, OteTag::N, OteTag::N]);
        assert_eq!(d.triplets.iter().next().unwrap().sentiment, Polarity::Negative);
        let d = ote_with_cross([OteTag::Pos, OteTag::Neu, OteTag::N, OteTag::N]);
        assert_eq!(d.triplets.iter().next().unwrap().sentiment, Polarity::Neutral);
        let d = ote_with_cross([OteTag::Pos, OteTag::Neu, OteTag::Neg, OteTag::N]);
        assert_eq!(d.triplets.iter().next().unwrap().sentiment, Polarity::Negative);
    }

    #[test]
    fn argmax_and_ties() {
        let g: TagGrid<OpeTag> = grid_from_probabilities(&[0.1, 0.2, 0.6, 0.1], 1).unwrap();
        assert_eq!(g.get(0, 0), OpeTag::P);
        let g: TagGrid<OpeTag> = grid_from_probabilities(&[0.25f64; 4], 1).unwrap();
        assert_eq!(g.get(0, 0), OpeTag::A);
        let err = grid_from_probabilities::<OpeTag, f64>(&[0.1, 0.1, 0.2, 0.1], 1).unwrap_err();
        assert!(matches!(err, GridError::NotNormalized { cell: 0, .. }));
        let err = grid_from_probabilities::<OteTag, f64>(&[0.25; 4], 1).unwrap_err();
        assert!(matches!(err, GridError::Size { .. }));
    }

    #[test]
    fn dump_lists_only_non_n_cells() {
        let g = encode_grid::<OteTag>(&great_food()).unwrap().grid;
        let dump = g.to_dump(None);
        assert_eq!(dump.cells.len(), 3);
        let json = serde_json::to_string(&dump).unwrap();
        assert_eq!(
            json,
            r#"{"n":2,"task":"ote","cells":[[0,0,"O"],[0,1,"Pos"],[1,1,"A"]]}"#
        );
        let back: GridDump = serde_json::from_str(&json).unwrap();
        assert_eq!(TagGrid::<OteTag>::from_dump(&back).unwrap(), g);
        assert!(matches!(
            TagGrid::<OpeTag>::from_dump(&back),
            Err(GridError::TaskMismatch { .. })
        ));
    }

    #[test]
    fn dump_rejects_lower_triangle_cells() {
        let dump = GridDump {
            n: 2,
            task: Task::Ope,
            tokens: None,
            cells: vec![(1, 0, "A".into())],
        };
        assert!(matches!(
            TagGrid::<OpeTag>::from_dump(&dump),
            Err(GridError::BadCell { .. })
        ));
    }
}
