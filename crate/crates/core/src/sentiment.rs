//! Lexicon-based sentiment for review texts and tweets.
//!
//! A text is tokenized, each token looked up in an integer-valence lexicon
//! (-5..=5), and the text's raw score is the mean over matched tokens. Raw
//! scores are mapped to a 0..10 scale with `raw + 5`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::OnceLock;

use serde::Serialize;
use thiserror::Error;

use crate::ingest::{parse_reader, IngestError, LexiconEntry};

#[derive(Debug, Error, PartialEq)]
pub enum SentimentError {
    #[error("raw sentiment {0} outside [-5, 5]")]
    OutOfRange(f64),
    #[error("lexicon is empty")]
    EmptyLexicon,
}

/// English stop words, pinned. Apostrophes are already stripped, matching the
/// tokenizer (`don't` -> `dont`).
pub const STOP_WORDS: &[&str] = &[
    "i", "me", "my", "myself", "we", "our", "ours", "ourselves", "you", "youre", "youve",
    "youll", "youd", "your", "yours", "yourself", "yourselves", "he", "him", "his", "himself",
    "she", "shes", "her", "hers", "herself", "it", "its", "itself", "they", "them", "their",
    "theirs", "themselves", "what", "which", "who", "whom", "this", "that", "thatll", "these",
    "those", "am", "is", "are", "was", "were", "be", "been", "being", "have", "has", "had",
    "having", "do", "does", "did", "doing", "a", "an", "the", "and", "but", "if", "or",
    "because", "as", "until", "while", "of", "at", "by", "for", "with", "about", "against",
    "between", "into", "through", "during", "before", "after", "above", "below", "to", "from",
    "up", "down", "in", "out", "on", "off", "over", "under", "again", "further", "then", "once",
    "here", "there", "when", "where", "why", "how", "all", "any", "both", "each", "few", "more",
    "most", "other", "some", "such", "no", "nor", "not", "only", "own", "same", "so", "than",
    "too", "very", "s", "t", "can", "will", "just", "don", "dont", "should", "shouldve", "now",
    "d", "ll", "m", "o", "re", "ve", "y", "ain", "aren", "arent", "couldn", "couldnt", "didn",
    "didnt", "doesn", "doesnt", "hadn", "hadnt", "hasn", "hasnt", "haven", "havent", "isn",
    "isnt", "ma", "mightn", "mightnt", "mustn", "mustnt", "needn", "neednt", "shan", "shant",
    "shouldn", "shouldnt", "wasn", "wasnt", "weren", "werent", "won", "wont", "wouldn",
    "wouldnt",
];

fn stop_words() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| STOP_WORDS.iter().copied().collect())
}

fn is_apostrophe(c: char) -> bool {
    matches!(c, '\'' | '\u{2019}' | '\u{2018}' | '`')
}

/// Lowercases, drops apostrophes, splits on every other non-alphanumeric
/// character, and removes stop words. Token order is preserved.
pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| !is_apostrophe(*c))
        .flat_map(char::to_lowercase)
        .collect();
    let stops = stop_words();
    cleaned
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty() && !stops.contains(t))
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone)]
pub struct Lexicon {
    scores: HashMap<String, i8>,
}

impl Lexicon {
    pub fn new(entries: impl IntoIterator<Item = LexiconEntry>) -> Result<Self, SentimentError> {
        let scores: HashMap<String, i8> = entries.into_iter().map(|e| (e.word, e.score)).collect();
        if scores.is_empty() {
            return Err(SentimentError::EmptyLexicon);
        }
        Ok(Lexicon { scores })
    }

    /// The lexicon subset shipped with the crate.
    pub fn bundled() -> Self {
        let out = parse_reader::<LexiconEntry, _>(BUNDLED_LEXICON.as_bytes())
            .expect("bundled lexicon parses");
        Lexicon::new(out.records).expect("bundled lexicon is nonempty")
    }

    pub fn from_csv(text: &str) -> Result<Self, IngestError> {
        let out = parse_reader::<LexiconEntry, _>(text.as_bytes())?;
        Lexicon::new(out.records).map_err(|e| {
            IngestError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e))
        })
    }

    pub fn score(&self, word: &str) -> Option<i8> {
        self.scores.get(word).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

pub const BUNDLED_LEXICON: &str = include_str!("../data/lexicon_subset.csv");

/// Per-text scoring result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextScore {
    /// Mean valence over matched tokens, absent when nothing matched.
    pub raw: Option<f64>,
    pub matched: usize,
    pub tokens: usize,
}

pub fn score_text<S: AsRef<str>>(tokens: &[S], lexicon: &Lexicon) -> Option<f64> {
    score_tokens(tokens, lexicon).raw
}

pub fn score_tokens<S: AsRef<str>>(tokens: &[S], lexicon: &Lexicon) -> TextScore {
    let mut sum = 0i64;
    let mut matched = 0usize;
    for t in tokens {
        if let Some(s) = lexicon.score(t.as_ref()) {
            sum += s as i64;
            matched += 1;
        }
    }
    TextScore {
        raw: (matched > 0).then(|| sum as f64 / matched as f64),
        matched,
        tokens: tokens.len(),
    }
}

pub fn score_document(text: &str, lexicon: &Lexicon) -> TextScore {
    score_tokens(&tokenize(text), lexicon)
}

pub fn scale_to_10(raw: f64) -> Result<f64, SentimentError> {
    if !(-5.0..=5.0).contains(&raw) {
        return Err(SentimentError::OutOfRange(raw));
    }
    Ok(raw + 5.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Mean,
    Median,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SentimentScore {
    pub airline_id: u32,
    pub score_0_10: f64,
    /// Texts with at least one lexicon match.
    pub n_texts: usize,
    /// Share of tokens, over all of the airline's texts, found in the lexicon.
    pub matched_token_share: f64,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

/// Aggregates per-text scores into one 0..10 score per airline.
///
/// Texts without any lexicon match do not enter the aggregate. Airlines left
/// with no scored text are omitted.
pub fn aggregate_airline_sentiment(
    texts: &[(u32, TextScore)],
    method: Aggregation,
) -> Vec<SentimentScore> {
    struct Acc {
        raws: Vec<f64>,
        matched: usize,
        tokens: usize,
    }
    let mut by_airline: BTreeMap<u32, Acc> = BTreeMap::new();
    for (airline, s) in texts {
        let acc = by_airline.entry(*airline).or_insert(Acc {
            raws: Vec::new(),
            matched: 0,
            tokens: 0,
        });
        acc.matched += s.matched;
        acc.tokens += s.tokens;
        if let Some(r) = s.raw {
            acc.raws.push(r);
        }
    }

    let mut out = Vec::with_capacity(by_airline.len());
    for (airline_id, mut acc) in by_airline {
        let n = acc.raws.len();
        let raw = match method {
            Aggregation::Mean if n > 0 => Some(acc.raws.iter().sum::<f64>() / n as f64),
            Aggregation::Mean => None,
            Aggregation::Median => median(&mut acc.raws),
        };
        let Some(raw) = raw else {
            log::warn!("airline {airline_id}: no text matched the lexicon; omitted");
            continue;
        };
        // Mean and median of values in [-5, 5] stay in range.
        let score_0_10 = scale_to_10(raw.clamp(-5.0, 5.0)).expect("clamped");
        out.push(SentimentScore {
            airline_id,
            score_0_10,
            n_texts: n,
            matched_token_share: if acc.tokens == 0 {
                0.0
            } else {
                acc.matched as f64 / acc.tokens as f64
            },
        });
    }
    out
}

pub fn write_sentiment_table<W: std::io::Write>(
    w: W,
    scores: &[SentimentScore],
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["airline_id", "score_0_10", "n_texts", "matched_token_share"])?;
    for s in scores {
        w.write_record([
            s.airline_id.to_string(),
            s.score_0_10.to_string(),
            s.n_texts.to_string(),
            s.matched_token_share.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(r: f64) -> TextScore {
        TextScore {
            raw: Some(r),
            matched: 1,
            tokens: 2,
        }
    }

    #[test]
    fn tokenizer_examples() {
        assert_eq!(
            tokenize("Amazing crew, breathtaking views!"),
            vec!["amazing", "crew", "breathtaking", "views"]
        );
        assert!(tokenize("").is_empty());
        assert!(tokenize("The the THE").is_empty());
        assert_eq!(tokenize("Don't cancel"), vec!["cancel"]);
        assert_eq!(tokenize("on-time   arrival..."), vec!["time", "arrival"]);
    }

    #[test]
    fn scoring_against_bundled_lexicon() {
        let lex = Lexicon::bundled();
        assert_eq!(score_text(&["amazing", "disaster"], &lex), Some(1.0));
        assert_eq!(score_text(&["breathtaking"], &lex), Some(5.0));
        assert_eq!(score_text(&["crew", "views"], &lex), None);
    }

    #[test]
    fn scale_endpoints() {
        assert_eq!(scale_to_10(-5.0), Ok(0.0));
        assert_eq!(scale_to_10(0.0), Ok(5.0));
        assert_eq!(scale_to_10(5.0), Ok(10.0));
        assert_eq!(scale_to_10(5.5), Err(SentimentError::OutOfRange(5.5)));
    }

    #[test]
    fn aggregation_examples() {
        let one = aggregate_airline_sentiment(&[(1, raw(0.0))], Aggregation::Median);
        assert_eq!(one[0].score_0_10, 5.0);

        let texts = [(1, raw(-1.0)), (1, raw(0.0)), (1, raw(3.0))];
        assert_eq!(aggregate_airline_sentiment(&texts, Aggregation::Median)[0].score_0_10, 5.0);

        let reviews = [(2, raw(4.0)), (2, raw(-2.0))];
        assert_eq!(aggregate_airline_sentiment(&reviews, Aggregation::Mean)[0].score_0_10, 6.0);
    }

    #[test]
    fn unmatched_texts_are_excluded_and_airline_omitted() {
        let none = TextScore {
            raw: None,
            matched: 0,
            tokens: 3,
        };
        let out = aggregate_airline_sentiment(&[(1, none), (2, raw(2.0)), (2, none)], Aggregation::Mean);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].airline_id, 2);
        assert_eq!(out[0].n_texts, 1);
        assert!((out[0].matched_token_share - 1.0 / 5.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn scale_is_monotone(a in -5.0f64..=5.0, b in -5.0f64..=5.0) {
            let (sa, sb) = (scale_to_10(a).unwrap(), scale_to_10(b).unwrap());
            prop_assert_eq!(a < b, sa < sb);
            prop_assert!((0.0..=10.0).contains(&sa));
        }

        #[test]
        fn aggregate_is_permutation_invariant(
            raws in proptest::collection::vec(-5.0f64..=5.0, 1..20),
            shift in 0usize..20,
        ) {
            let texts: Vec<_> = raws.iter().map(|&r| (7u32, raw(r))).collect();
            let mut rotated = texts.clone();
            rotated.rotate_left(shift % texts.len());
            for m in [Aggregation::Mean, Aggregation::Median] {
                let a = aggregate_airline_sentiment(&texts, m);
                let b = aggregate_airline_sentiment(&rotated, m);
                prop_assert!((a[0].score_0_10 - b[0].score_0_10).abs() < 1e-12);
                prop_assert!((0.0..=10.0).contains(&a[0].score_0_10));
            }
        }

        #[test]
        fn adding_the_median_keeps_it(raws in proptest::collection::vec(-5.0f64..=5.0, 1..20)) {
            let mut texts: Vec<_> = raws.iter().map(|&r| (1u32, raw(r))).collect();
            let before = aggregate_airline_sentiment(&texts, Aggregation::Median)[0].score_0_10;
            texts.push((1, raw(before - 5.0)));
            let after = aggregate_airline_sentiment(&texts, Aggregation::Median)[0].score_0_10;
            prop_assert!((before - after).abs() < 1e-12);
        }
    }
}
