//! Template-generated restaurant reviews with gold triplets.
//!
//! Used for fixtures, smoke runs and the desk-scale training checks. The
//! generator is deterministic for a given seed.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{AnnotatedSentence, OpinionTriplet, Polarity, Sentence, Span};

const ASPECTS: &[&str] = &[
    "food",
    "service",
    "staff",
    "pizza",
    "sushi",
    "ambience",
    "waiter",
    "dessert",
    "menu",
    "decor",
    "coffee",
    "bread",
    "music",
    "view",
    "hot dogs",
    "wine list",
    "fish tacos",
    "outdoor seating",
    "goat cheese salad",
    "happy hour",
];

const POSITIVE: &[&str] = &[
    "great",
    "delicious",
    "friendly",
    "excellent",
    "amazing",
    "fresh",
    "top notch",
    "very good",
];
const NEGATIVE: &[&str] = &[
    "terrible",
    "rude",
    "bland",
    "overpriced",
    "awful",
    "cold",
    "way too slow",
];
const NEUTRAL: &[&str] = &["okay", "average", "decent", "fine"];

const OPENERS: &[&str] = &["honestly ,", "overall ,", "i think", "to be fair ,", "sadly ,"];
const FILLERS: &[&str] = &[
    "we came here on a friday night .",
    "my sister booked a table for six .",
    "it was our second visit .",
    "parking is across the street .",
];

struct Builder {
    tokens: Vec<String>,
    triplets: Vec<OpinionTriplet>,
}

impl Builder {
    fn new() -> Self {
        Builder {
            tokens: Vec::new(),
            triplets: Vec::new(),
        }
    }

    fn words(&mut self, text: &str) -> Span {
        let start = self.tokens.len();
        self.tokens
            .extend(text.split_whitespace().map(str::to_string));
        Span::new(start, self.tokens.len() - 1)
    }

    fn link(&mut self, aspect: Span, opinion: Span, sentiment: Polarity) {
        self.triplets.push(OpinionTriplet {
            aspect,
            opinion,
            sentiment,
        });
    }

    fn finish(self) -> AnnotatedSentence {
        let sentence = Sentence::new(self.tokens).expect("templates produce tokens");
        AnnotatedSentence::new(sentence, self.triplets).expect("templates produce valid spans")
    }
}

/// Seeded generator of annotated sentences.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    rng: ChaCha8Rng,
    adjacent_rate: f64,
}

impl SyntheticCorpus {
    pub fn new(seed: u64) -> Self {
        SyntheticCorpus {
            rng: ChaCha8Rng::seed_from_u64(seed),
            adjacent_rate: 0.0,
        }
    }

    /// Fraction of sentences that place two distinct aspects side by side,
    /// which the grid encoding cannot separate.
    pub fn with_adjacent_rate(mut self, rate: f64) -> Self {
        self.adjacent_rate = rate;
        self
    }

    fn opinion(&mut self) -> (&'static str, Polarity) {
        let polarity = *[
            Polarity::Positive,
            Polarity::Positive,
            Polarity::Negative,
            Polarity::Neutral,
        ]
        .choose(&mut self.rng)
        .unwrap();
        let pool = match polarity {
            Polarity::Positive => POSITIVE,
            Polarity::Negative => NEGATIVE,
            Polarity::Neutral => NEUTRAL,
        };
        (pool.choose(&mut self.rng).unwrap(), polarity)
    }

    fn two_aspects(&mut self) -> (&'static str, &'static str) {
        let picks: Vec<&&str> = ASPECTS.choose_multiple(&mut self.rng, 2).collect();
        (picks[0], picks[1])
    }

    pub fn sentence(&mut self) -> AnnotatedSentence {
        let mut b = Builder::new();
        if self.rng.gen_bool(0.25) {
            b.words(OPENERS.choose(&mut self.rng).unwrap());
        }
        if self.adjacent_rate > 0.0 && self.rng.gen_bool(self.adjacent_rate) {
            let (a1, a2) = self.two_aspects();
            let (o, p) = self.opinion();
            let s1 = b.words(a1);
            let s2 = b.words(a2);
            b.words("were both");
            let so = b.words(o);
            b.words(".");
            b.link(s1, so, p);
            b.link(s2, so, p);
            return b.finish();
        }
        match self.rng.gen_range(0..7) {
            0 => {
                let a = *ASPECTS.choose(&mut self.rng).unwrap();
                let (o, p) = self.opinion();
                b.words("the");
                let sa = b.words(a);
                b.words("was");
                let so = b.words(o);
                b.words(".");
                b.link(sa, so, p);
            }
            1 => {
                let a = *ASPECTS.choose(&mut self.rng).unwrap();
                let (o, p) = self.opinion();
                let so = b.words(o);
                let sa = b.words(a);
                b.words(".");
                b.link(sa, so, p);
            }
            2 => {
                let (a1, a2) = self.two_aspects();
                let (o1, p1) = self.opinion();
                let (o2, p2) = self.opinion();
                b.words("the");
                let s1 = b.words(a1);
                b.words("was");
                let t1 = b.words(o1);
                b.words("but the");
                let s2 = b.words(a2);
                b.words("was");
                let t2 = b.words(o2);
                b.words(".");
                b.link(s1, t1, p1);
                b.link(s2, t2, p2);
            }
            3 => {
                let a = *ASPECTS.choose(&mut self.rng).unwrap();
                let (o1, p1) = self.opinion();
                let (mut o2, mut p2) = self.opinion();
                while o2 == o1 {
                    (o2, p2) = self.opinion();
                }
                b.words("the");
                let sa = b.words(a);
                b.words("is");
                let t1 = b.words(o1);
                b.words("and");
                let t2 = b.words(o2);
                b.words(".");
                b.link(sa, t1, p1);
                b.link(sa, t2, p2);
            }
            4 => {
                let (a1, a2) = self.two_aspects();
                let (o, p) = self.opinion();
                b.words("i thought the");
                let s1 = b.words(a1);
                b.words("and the");
                let s2 = b.words(a2);
                b.words("were");
                let so = b.words(o);
                b.words(".");
                b.link(s1, so, p);
                b.link(s2, so, p);
            }
            5 => {
                let a = *ASPECTS.choose(&mut self.rng).unwrap();
                let (o, p) = self.opinion();
                let sa = b.words(a);
                b.words(":");
                let so = b.words(o);
                b.words(", would come back for it .");
                b.link(sa, so, p);
            }
            _ => {
                b.words(FILLERS.choose(&mut self.rng).unwrap());
            }
        }
        b.finish()
    }

    pub fn generate(&mut self, count: usize) -> Vec<AnnotatedSentence> {
        (0..count).map(|_| self.sentence()).collect()
    }
}
