//! Exact-match precision, recall and F1 over terms, pairs and triplets.
//!
//! Counts are pooled over the whole corpus before computing the ratios.

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::AnnotatedSentence;
use crate::grid::{DecodedResult, Task};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{predicted} predictions for {gold} gold sentences")]
    LengthMismatch { predicted: usize, gold: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct MatchCounts {
    pub predicted: usize,
    pub gold: usize,
    pub correct: usize,
}

impl MatchCounts {
    fn add_sets<E: Ord>(&mut self, predicted: &BTreeSet<E>, gold: &BTreeSet<E>) {
        self.predicted += predicted.len();
        self.gold += gold.len();
        self.correct += predicted.intersection(gold).count();
    }

    fn merge(self, other: MatchCounts) -> MatchCounts {
        MatchCounts {
            predicted: self.predicted + other.predicted,
            gold: self.gold + other.gold,
            correct: self.correct + other.correct,
        }
    }

    pub fn precision(&self) -> f64 {
        ratio(self.correct, self.predicted)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.correct, self.gold)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn metrics(&self) -> Metrics {
        Metrics {
            precision: self.precision(),
            recall: self.recall(),
            f1: self.f1(),
            counts: *self,
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: MatchCounts,
}

/// Per-category scores. `triplet` is present only for triplet extraction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    pub task: Task,
    pub aspect: Metrics,
    pub opinion: Metrics,
    pub pair: Metrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub triplet: Option<Metrics>,
}

impl ScoreReport {
    /// Pair F1 for pair extraction, triplet F1 for triplet extraction.
    pub fn headline_f1(&self) -> f64 {
        match self.triplet {
            Some(t) if self.task == Task::Ote => t.f1,
            _ => self.pair.f1,
        }
    }

    pub fn rows(&self) -> Vec<(&'static str, Metrics)> {
        let mut rows = vec![
            ("aspect", self.aspect),
            ("opinion", self.opinion),
            ("pair", self.pair),
        ];
        if let Some(t) = self.triplet {
            rows.push(("triplet", t));
        }
        rows
    }
}

impl fmt::Display for ScoreReport {
    /// Aligned `P R F1` table, values in percent.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10}{:>8}{:>8}{:>8}", "", "P", "R", "F1")?;
        for (name, m) in self.rows() {
            writeln!(
                f,
                "{:<10}{:>8.2}{:>8.2}{:>8.2}",
                name,
                100.0 * m.precision,
                100.0 * m.recall,
                100.0 * m.f1
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    aspect: MatchCounts,
    opinion: MatchCounts,
    pair: MatchCounts,
    triplet: MatchCounts,
}

impl Tally {
    fn merge(self, o: Tally) -> Tally {
        Tally {
            aspect: self.aspect.merge(o.aspect),
            opinion: self.opinion.merge(o.opinion),
            pair: self.pair.merge(o.pair),
            triplet: self.triplet.merge(o.triplet),
        }
    }
}

fn tally(pred: &DecodedResult, gold: &AnnotatedSentence) -> Tally {
    let mut t = Tally::default();
    t.aspect.add_sets(&pred.aspects, &gold.aspects());
    t.opinion.add_sets(&pred.opinions, &gold.opinions());
    t.pair.add_sets(&pred.pairs, &gold.pairs());
    t.triplet.add_sets(&pred.triplets, &gold.triplet_set());
    t
}

/// Scores predictions aligned one-to-one with gold sentences.
pub fn score(
    predictions: &[DecodedResult],
    gold: &[AnnotatedSentence],
    task: Task,
) -> Result<ScoreReport, EvalError> {
    if predictions.len() != gold.len() {
        return Err(EvalError::LengthMismatch {
            predicted: predictions.len(),
            gold: gold.len(),
        });
    }
    let total = predictions
        .iter()
        .zip(gold)
        .map(|(p, g)| tally(p, g))
        .fold(Tally::default(), Tally::merge);
    Ok(ScoreReport {
        task,
        aspect: total.aspect.metrics(),
        opinion: total.opinion.metrics(),
        pair: total.pair.metrics(),
        triplet: (task == Task::Ote).then(|| total.triplet.metrics()),
    })
}
