//! Converters from the two public release formats of the opinion
//! pair/triplet benchmarks into [`AnnotatedSentence`]s.
//!
//! * grid-tagging release (`train.json`): a JSON array of
//!   `{"sentence": "...", "triples": [{"target_tags": "w\\O w\\B ...",
//!   "opinion_tags": "...", "sentiment": "positive"}]}`. Every aspect span
//!   in `target_tags` pairs with every opinion span in `opinion_tags`.
//! * triplet release (`train_triplets.txt`): `sentence####[([3, 4], [6], 'POS'), ...]`
//!   with 0-based word index lists.

use serde::Deserialize;

use super::{AnnotatedSentence, OpinionTriplet, Polarity, Sentence, Span};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceFormat {
    GridJson,
    TripletText,
}

#[derive(Debug, Deserialize)]
struct GridEntry {
    sentence: String,
    triples: Vec<GridTriple>,
}

#[derive(Debug, Deserialize)]
struct GridTriple {
    target_tags: String,
    opinion_tags: String,
    sentiment: String,
}

pub fn convert(text: &str, format: SourceFormat) -> Result<Vec<AnnotatedSentence>, String> {
    match format {
        SourceFormat::GridJson => from_grid_json(text),
        SourceFormat::TripletText => from_triplet_text(text),
    }
}

fn tokenize(sentence: &str) -> Result<Sentence, String> {
    Sentence::new(sentence.split_whitespace().map(str::to_string).collect())
}

/// Maximal `B I*` runs of a `word\TAG` sequence; a stray `I` opens a span.
fn bio_spans(tags: &str) -> Result<Vec<Span>, String> {
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    let labels = tags.split_whitespace().map(|tok| {
        tok.rsplit_once('\\')
            .map(|(_, t)| t)
            .ok_or_else(|| format!("tag token {tok:?} lacks a '\\' separator"))
    });
    let mut n = 0;
    for (i, label) in labels.enumerate() {
        n = i + 1;
        match label? {
            "B" => {
                if let Some(l) = open.take() {
                    spans.push(Span::new(l, i - 1));
                }
                open = Some(i);
            }
            "I" => {
                open.get_or_insert(i);
            }
            "O" => {
                if let Some(l) = open.take() {
                    spans.push(Span::new(l, i - 1));
                }
            }
            other => return Err(format!("unknown BIO tag {other:?}")),
        }
    }
    if let Some(l) = open {
        spans.push(Span::new(l, n - 1));
    }
    Ok(spans)
}

pub fn from_grid_json(text: &str) -> Result<Vec<AnnotatedSentence>, String> {
    let entries: Vec<GridEntry> = serde_json::from_str(text).map_err(|e| e.to_string())?;
    entries
        .into_iter()
        .enumerate()
        .map(|(k, e)| {
            let sentence = tokenize(&e.sentence).map_err(|m| format!("entry {k}: {m}"))?;
            let mut triplets = Vec::new();
            for t in &e.triples {
                let sentiment: Polarity = t.sentiment.parse().map_err(|m| format!("entry {k}: {m}"))?;
                let aspects = bio_spans(&t.target_tags).map_err(|m| format!("entry {k}: {m}"))?;
                let opinions = bio_spans(&t.opinion_tags).map_err(|m| format!("entry {k}: {m}"))?;
                for &aspect in &aspects {
                    for &opinion in &opinions {
                        triplets.push(OpinionTriplet {
                            aspect,
                            opinion,
                            sentiment,
                        });
                    }
                }
            }
            AnnotatedSentence::new(sentence, triplets).map_err(|m| format!("entry {k}: {m}"))
        })
        .collect()
}

pub fn from_triplet_text(text: &str) -> Result<Vec<AnnotatedSentence>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, line)| {
            let ctx = |m: String| format!("line {}: {m}", k + 1);
            let (sent, labels) = line
                .split_once("####")
                .ok_or_else(|| ctx("missing '####' separator".into()))?;
            let sentence = tokenize(sent).map_err(ctx)?;
            let triplets = parse_triplet_list(labels).map_err(ctx)?;
            AnnotatedSentence::new(sentence, triplets).map_err(ctx)
        })
        .collect()
}

/// Parses `[([3, 4], [6], 'POS'), ...]`.
fn parse_triplet_list(s: &str) -> Result<Vec<OpinionTriplet>, String> {
    let s = s.trim();
    let body = s
        .strip_prefix('[')
        .and_then(|b| b.strip_suffix(']'))
        .ok_or_else(|| format!("expected a bracketed list, got {s:?}"))?;
    let mut out = Vec::new();
    let mut rest = body.trim();
    while !rest.is_empty() {
        let inner_start = rest
            .find('(')
            .ok_or_else(|| format!("expected '(' in {rest:?}"))?;
        let inner_end = rest
            .find(')')
            .ok_or_else(|| format!("unclosed tuple in {rest:?}"))?;
        let tuple = &rest[inner_start + 1..inner_end];
        out.push(parse_tuple(tuple)?);
        rest = rest[inner_end + 1..].trim_start_matches([',', ' ']);
    }
    Ok(out)
}

fn parse_tuple(tuple: &str) -> Result<OpinionTriplet, String> {
    let lists: Vec<&str> = tuple.split(']').collect();
    if lists.len() != 3 {
        return Err(format!("malformed triplet ({tuple})"));
    }
    let aspect = index_span(lists[0])?;
    let opinion = index_span(lists[1])?;
    let label = lists[2].trim_matches([',', ' ', '\'', '"']);
    let sentiment = label.parse()?;
    Ok(OpinionTriplet {
        aspect,
        opinion,
        sentiment,
    })
}

fn index_span(list: &str) -> Result<Span, String> {
    let inner = list
        .trim_start_matches([',', ' '])
        .strip_prefix('[')
        .ok_or_else(|| format!("expected index list in {list:?}"))?;
    let idx = inner
        .split(',')
        .map(|v| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    match (idx.first(), idx.last()) {
        (Some(&l), Some(&r)) if idx.windows(2).all(|w| w[1] == w[0] + 1) => Ok(Span::new(l, r)),
        _ => Err(format!("index list {idx:?} is not a contiguous span")),
    }
}
