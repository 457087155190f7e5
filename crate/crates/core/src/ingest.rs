//! Typed readers and writers for the six input datasets and the sentiment lexicon.
//!
//! Every dataset is a UTF-8 comma-separated file with a single header row.
//! Lines starting with `#` are treated as comments, which lets pipeline
//! outputs carry a provenance line without breaking the reader.
//!
//! Parsing is row-tolerant: a row that fails validation is rejected with its
//! line number and the parse continues. Only structural problems (missing
//! file, wrong header) or a majority of rejected rows abort the parse.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use csv::StringRecord;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("dataset file not found: {0}")]
    MissingFile(String),
    #[error("{kind} header mismatch: expected `{expected}`, found `{found}`")]
    HeaderMismatch {
        kind: DatasetKind,
        expected: String,
        found: String,
    },
    #[error("{kind}: {rejected} of {total} rows rejected (more than half); first: {first}")]
    TooManyRejected {
        kind: DatasetKind,
        rejected: usize,
        total: usize,
        first: Rejection,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// The dataset schemas understood by [`parse_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Bookings,
    Fares,
    Reviews,
    Tweets,
    Safety,
    Fleet,
    Lexicon,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 7] = [
        DatasetKind::Bookings,
        DatasetKind::Fares,
        DatasetKind::Reviews,
        DatasetKind::Tweets,
        DatasetKind::Safety,
        DatasetKind::Fleet,
        DatasetKind::Lexicon,
    ];

    pub fn header(self) -> &'static [&'static str] {
        match self {
            DatasetKind::Bookings | DatasetKind::Fares => &[
                "od",
                "airline_id",
                "dep_day_id",
                "dbd",
                "dep_time_mam",
                "travel_time",
                "price",
            ],
            DatasetKind::Reviews => &[
                "id",
                "airline_id",
                "recommended",
                "review",
                "fb",
                "ground",
                "ife",
                "crew",
                "seat",
                "value",
                "wifi",
            ],
            DatasetKind::Tweets => &[
                "airline_id",
                "text",
                "is_retweet",
                "is_reply",
                "language_tag",
            ],
            DatasetKind::Safety => &["rank", "airline_code", "score"],
            DatasetKind::Fleet => &[
                "airline_id",
                "aircraft_type",
                "aircraft_cost",
                "registration",
                "aircraft_age",
            ],
            DatasetKind::Lexicon => &["word", "score"],
        }
    }

    /// Conventional file name used by the pipeline's directory layout.
    pub fn file_name(self) -> &'static str {
        match self {
            DatasetKind::Bookings => "bookings.csv",
            DatasetKind::Fares => "fares.csv",
            DatasetKind::Reviews => "reviews.csv",
            DatasetKind::Tweets => "tweets.csv",
            DatasetKind::Safety => "safety.csv",
            DatasetKind::Fleet => "fleet.csv",
            DatasetKind::Lexicon => "lexicon.csv",
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            DatasetKind::Bookings => "bookings",
            DatasetKind::Fares => "fares",
            DatasetKind::Reviews => "reviews",
            DatasetKind::Tweets => "tweets",
            DatasetKind::Safety => "safety",
            DatasetKind::Fleet => "fleet",
            DatasetKind::Lexicon => "lexicon",
        };
        f.write_str(name)
    }
}

/// A row that failed validation, positioned by its 1-based file line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub line: u64,
    pub message: String,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Clone)]
pub struct ParseOutcome<T> {
    pub records: Vec<T>,
    pub rejections: Vec<Rejection>,
}

impl<T> ParseOutcome<T> {
    pub fn accepted(&self) -> usize {
        self.records.len()
    }

    pub fn rejected(&self) -> usize {
        self.rejections.len()
    }

    /// Rejections rendered one per line, `line N: message`.
    pub fn rejection_report(&self) -> String {
        let mut out = String::new();
        for r in &self.rejections {
            out.push_str(&r.to_string());
            out.push('\n');
        }
        out
    }
}

/// A record type bound to one dataset schema.
pub trait Record: Sized {
    const KIND: DatasetKind;

    fn from_row(row: &StringRecord) -> Result<Self, String>;

    fn to_row(&self) -> Vec<String>;

    /// Uniqueness key; rows repeating an earlier key are rejected.
    fn unique_key(&self) -> Option<String> {
        None
    }
}

pub fn parse_dataset<T: Record>(path: impl AsRef<Path>) -> Result<ParseOutcome<T>, IngestError> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(IngestError::MissingFile(path.display().to_string()));
    }
    parse_reader(File::open(path)?)
}

pub fn parse_reader<T: Record, R: Read>(reader: R) -> Result<ParseOutcome<T>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(reader);

    let expected = T::KIND.header();
    let found = rdr.headers()?.clone();
    if found.len() != expected.len() || found.iter().zip(expected).any(|(a, b)| a.trim() != *b) {
        return Err(IngestError::HeaderMismatch {
            kind: T::KIND,
            expected: expected.join(","),
            found: found.iter().collect::<Vec<_>>().join(","),
        });
    }

    let mut records = Vec::new();
    let mut rejections = Vec::new();
    let mut seen = HashSet::new();
    for row in rdr.records() {
        let row = match row {
            Ok(row) => row,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                rejections.push(Rejection {
                    line,
                    message: format!("malformed row: {e}"),
                });
                continue;
            }
        };
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != expected.len() {
            rejections.push(Rejection {
                line,
                message: format!("expected {} fields, found {}", expected.len(), row.len()),
            });
            continue;
        }
        match T::from_row(&row) {
            Ok(rec) => {
                if let Some(key) = rec.unique_key() {
                    if !seen.insert(key.clone()) {
                        rejections.push(Rejection {
                            line,
                            message: format!("duplicate key {key}"),
                        });
                        continue;
                    }
                }
                records.push(rec);
            }
            Err(message) => rejections.push(Rejection { line, message }),
        }
    }

    let total = records.len() + rejections.len();
    if rejections.len() * 2 > total {
        return Err(IngestError::TooManyRejected {
            kind: T::KIND,
            rejected: rejections.len(),
            total,
            first: rejections[0].clone(),
        });
    }
    if !rejections.is_empty() {
        log::warn!(
            "{}: accepted {}, rejected {}",
            T::KIND,
            records.len(),
            rejections.len()
        );
    }
    Ok(ParseOutcome {
        records,
        rejections,
    })
}

pub fn write_dataset<T: Record, W: Write>(writer: W, records: &[T]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(T::KIND.header())?;
    for r in records {
        w.write_record(r.to_row())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset_file<T: Record>(path: impl AsRef<Path>, records: &[T]) -> Result<(), IngestError> {
    write_dataset(File::create(path)?, records)
}

fn field<'a>(row: &'a StringRecord, idx: usize, name: &str) -> Result<&'a str, String> {
    match row.get(idx).map(str::trim) {
        Some(s) if !s.is_empty() => Ok(s),
        _ => Err(format!("{name} is empty")),
    }
}

fn parse_num<T: std::str::FromStr>(row: &StringRecord, idx: usize, name: &str) -> Result<T, String> {
    let raw = field(row, idx, name)?;
    raw.parse::<T>()
        .map_err(|_| format!("{name}: cannot parse `{raw}`"))
}

fn parse_finite(row: &StringRecord, idx: usize, name: &str) -> Result<f64, String> {
    let v: f64 = parse_num(row, idx, name)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{name} is not finite"))
    }
}

pub(crate) fn parse_bool(raw: &str) -> Option<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "true" | "y" | "yes" | "1" | "t" => Some(true),
        "false" | "n" | "no" | "0" | "f" => Some(false),
        _ => None,
    }
}

fn bool_field(row: &StringRecord, idx: usize, name: &str) -> Result<bool, String> {
    let raw = field(row, idx, name)?;
    parse_bool(raw).ok_or_else(|| format!("{name}: cannot parse `{raw}` as boolean"))
}

/// Splits `AMS-LHR` into `("AMS", "LHR")`.
pub fn od_endpoints(od: &str) -> Option<(&str, &str)> {
    let (o, d) = od.split_once('-')?;
    if o.is_empty() || d.is_empty() || d.contains('-') {
        None
    } else {
        Some((o, d))
    }
}

/// One displayed itinerary, optionally purchased.
///
/// Bookings files carry only purchased itineraries, so parsed bookings have
/// `is_bought = true`; the label for every displayed itinerary is attached
/// later by joining bookings onto the fare observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItineraryRecord {
    pub od: String,
    pub airline_id: u32,
    pub dep_day_id: i64,
    pub dbd: i32,
    pub dep_time_mam: u32,
    pub travel_time: f64,
    pub price: f64,
    pub is_bought: bool,
}

/// One airline's offered price for an itinerary at a given days-before-departure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FareObservation {
    pub od: String,
    pub airline_id: u32,
    pub dep_day_id: i64,
    pub dbd: i32,
    pub dep_time_mam: u32,
    pub travel_time: f64,
    pub price: f64,
}

/// Identity of a displayed itinerary: `(od, airline_id, dep_day_id, dbd, dep_time_mam)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ItineraryKey {
    pub od: String,
    pub airline_id: u32,
    pub dep_day_id: i64,
    pub dbd: i32,
    pub dep_time_mam: u32,
}

impl FareObservation {
    pub fn key(&self) -> ItineraryKey {
        ItineraryKey {
            od: self.od.clone(),
            airline_id: self.airline_id,
            dep_day_id: self.dep_day_id,
            dbd: self.dbd,
            dep_time_mam: self.dep_time_mam,
        }
    }
}

impl ItineraryRecord {
    pub fn key(&self) -> ItineraryKey {
        ItineraryKey {
            od: self.od.clone(),
            airline_id: self.airline_id,
            dep_day_id: self.dep_day_id,
            dbd: self.dbd,
            dep_time_mam: self.dep_time_mam,
        }
    }
}

struct ItineraryFields {
    od: String,
    airline_id: u32,
    dep_day_id: i64,
    dbd: i32,
    dep_time_mam: u32,
    travel_time: f64,
    price: f64,
}

fn itinerary_fields(row: &StringRecord) -> Result<ItineraryFields, String> {
    let od = field(row, 0, "od")?.to_string();
    if od_endpoints(&od).is_none() {
        return Err(format!("od `{od}` is not an origin-destination pair"));
    }
    let airline_id = parse_num(row, 1, "airline_id")?;
    let dep_day_id = parse_num(row, 2, "dep_day_id")?;
    let dbd: i32 = parse_num(row, 3, "dbd")?;
    if dbd > 0 {
        return Err(format!("dbd {dbd} must be <= 0"));
    }
    let dep_time_mam: u32 = parse_num(row, 4, "dep_time_mam")?;
    if dep_time_mam >= 1440 {
        return Err(format!("dep_time_mam out of range: {dep_time_mam}"));
    }
    let travel_time = parse_finite(row, 5, "travel_time")?;
    if travel_time <= 0.0 {
        return Err(format!("travel_time {travel_time} must be positive"));
    }
    let price = parse_finite(row, 6, "price")?;
    if price <= 0.0 {
        return Err(format!("price {price} must be positive"));
    }
    Ok(ItineraryFields {
        od,
        airline_id,
        dep_day_id,
        dbd,
        dep_time_mam,
        travel_time,
        price,
    })
}

fn itinerary_row(
    od: &str,
    airline_id: u32,
    dep_day_id: i64,
    dbd: i32,
    dep_time_mam: u32,
    travel_time: f64,
    price: f64,
) -> Vec<String> {
    vec![
        od.to_string(),
        airline_id.to_string(),
        dep_day_id.to_string(),
        dbd.to_string(),
        dep_time_mam.to_string(),
        travel_time.to_string(),
        price.to_string(),
    ]
}

impl Record for ItineraryRecord {
    const KIND: DatasetKind = DatasetKind::Bookings;

    fn from_row(row: &StringRecord) -> Result<Self, String> {
        let f = itinerary_fields(row)?;
        Ok(ItineraryRecord {
            od: f.od,
            airline_id: f.airline_id,
            dep_day_id: f.dep_day_id,
            dbd: f.dbd,
            dep_time_mam: f.dep_time_mam,
            travel_time: f.travel_time,
            price: f.price,
            is_bought: true,
        })
    }

    fn to_row(&self) -> Vec<String> {
        itinerary_row(
            &self.od,
            self.airline_id,
            self.dep_day_id,
            self.dbd,
            self.dep_time_mam,
            self.travel_time,
            self.price,
        )
    }
}

impl Record for FareObservation {
    const KIND: DatasetKind = DatasetKind::Fares;

    fn from_row(row: &StringRecord) -> Result<Self, String> {
        let f = itinerary_fields(row)?;
        Ok(FareObservation {
            od: f.od,
            airline_id: f.airline_id,
            dep_day_id: f.dep_day_id,
            dbd: f.dbd,
            dep_time_mam: f.dep_time_mam,
            travel_time: f.travel_time,
            price: f.price,
        })
    }

    fn to_row(&self) -> Vec<String> {
        itinerary_row(
            &self.od,
            self.airline_id,
            self.dep_day_id,
            self.dbd,
            self.dep_time_mam,
            self.travel_time,
            self.price,
        )
    }

    fn unique_key(&self) -> Option<String> {
        Some(format!(
            "({},{},{},{},{})",
            self.od, self.airline_id, self.dep_day_id, self.dbd, self.dep_time_mam
        ))
    }
}

/// Ordinal 1..=5 ratings attached to a review.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewScores {
    pub fb: u8,
    pub ground: u8,
    pub ife: u8,
    pub crew: u8,
    pub seat: u8,
    pub value: u8,
    pub wifi: u8,
}

impl ReviewScores {
    pub const NAMES: [&'static str; 7] = ["fb", "ground", "ife", "crew", "seat", "value", "wifi"];

    pub fn as_array(&self) -> [u8; 7] {
        [
            self.fb,
            self.ground,
            self.ife,
            self.crew,
            self.seat,
            self.value,
            self.wifi,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub id: u64,
    pub airline_id: u32,
    pub recommended: bool,
    pub review_text: String,
    pub scores: ReviewScores,
}

impl Record for ReviewRecord {
    const KIND: DatasetKind = DatasetKind::Reviews;

    fn from_row(row: &StringRecord) -> Result<Self, String> {
        let id = parse_num(row, 0, "id")?;
        let airline_id = parse_num(row, 1, "airline_id")?;
        let recommended = bool_field(row, 2, "recommended")?;
        let review_text = row.get(3).unwrap_or("").to_string();
        let mut s = [0u8; 7];
        for (i, name) in ReviewScores::NAMES.iter().enumerate() {
            let v: u8 = parse_num(row, 4 + i, name)?;
            if !(1..=5).contains(&v) {
                return Err(format!("{name} score {v} outside 1..5"));
            }
            s[i] = v;
        }
        Ok(ReviewRecord {
            id,
            airline_id,
            recommended,
            review_text,
            scores: ReviewScores {
                fb: s[0],
                ground: s[1],
                ife: s[2],
                crew: s[3],
                seat: s[4],
                value: s[5],
                wifi: s[6],
            },
        })
    }

    fn to_row(&self) -> Vec<String> {
        let mut row = vec![
            self.id.to_string(),
            self.airline_id.to_string(),
            if self.recommended { "Y" } else { "N" }.to_string(),
            self.review_text.clone(),
        ];
        row.extend(self.scores.as_array().iter().map(|v| v.to_string()));
        row
    }

    fn unique_key(&self) -> Option<String> {
        Some(self.id.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TweetRecord {
    pub airline_id: u32,
    pub text: String,
    pub is_retweet: bool,
    pub is_reply: bool,
    pub language_tag: String,
}

impl Record for TweetRecord {
    const KIND: DatasetKind = DatasetKind::Tweets;

    fn from_row(row: &StringRecord) -> Result<Self, String> {
        Ok(TweetRecord {
            airline_id: parse_num(row, 0, "airline_id")?,
            text: row.get(1).unwrap_or("").to_string(),
            is_retweet: bool_field(row, 2, "is_retweet")?,
            is_reply: bool_field(row, 3, "is_reply")?,
            language_tag: field(row, 4, "language_tag")?.to_string(),
        })
    }

    fn to_row(&self) -> Vec<String> {
        vec![
            self.airline_id.to_string(),
            self.text.clone(),
            self.is_retweet.to_string(),
            self.is_reply.to_string(),
            self.language_tag.clone(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyRecord {
    pub rank: u32,
    pub airline_code: String,
    /// Lower is safer.
    pub score: f64,
}

impl Record for SafetyRecord {
    const KIND: DatasetKind = DatasetKind::Safety;

    fn from_row(row: &StringRecord) -> Result<Self, String> {
        let score = parse_finite(row, 2, "score")?;
        if score < 0.0 {
            return Err(format!("safety score {score} must be nonnegative"));
        }
        Ok(SafetyRecord {
            rank: parse_num(row, 0, "rank")?,
            airline_code: field(row, 1, "airline_code")?.to_string(),
            score,
        })
    }

    fn to_row(&self) -> Vec<String> {
        vec![
            self.rank.to_string(),
            self.airline_code.clone(),
            self.score.to_string(),
        ]
    }

    fn unique_key(&self) -> Option<String> {
        Some(self.airline_code.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetRecord {
    pub airline_id: u32,
    pub aircraft_type: String,
    pub aircraft_cost: f64,
    pub registration: String,
    pub aircraft_age: f64,
}

impl Record for FleetRecord {
    const KIND: DatasetKind = DatasetKind::Fleet;

    fn from_row(row: &StringRecord) -> Result<Self, String> {
        let aircraft_cost = parse_finite(row, 2, "aircraft_cost")?;
        if aircraft_cost <= 0.0 {
            return Err(format!("aircraft_cost {aircraft_cost} must be positive"));
        }
        let aircraft_age = parse_finite(row, 4, "aircraft_age")?;
        if aircraft_age < 0.0 {
            return Err(format!("aircraft_age {aircraft_age} must be nonnegative"));
        }
        Ok(FleetRecord {
            airline_id: parse_num(row, 0, "airline_id")?,
            aircraft_type: field(row, 1, "aircraft_type")?.to_string(),
            aircraft_cost,
            registration: field(row, 3, "registration")?.to_string(),
            aircraft_age,
        })
    }

    fn to_row(&self) -> Vec<String> {
        vec![
            self.airline_id.to_string(),
            self.aircraft_type.clone(),
            self.aircraft_cost.to_string(),
            self.registration.clone(),
            self.aircraft_age.to_string(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub word: String,
    pub score: i8,
}

impl Record for LexiconEntry {
    const KIND: DatasetKind = DatasetKind::Lexicon;

    fn from_row(row: &StringRecord) -> Result<Self, String> {
        let word = field(row, 0, "word")?.to_lowercase();
        let score: i8 = parse_num(row, 1, "score")?;
        if !(-5..=5).contains(&score) {
            return Err(format!("lexicon score {score} outside -5..5"));
        }
        Ok(LexiconEntry { word, score })
    }

    fn to_row(&self) -> Vec<String> {
        vec![self.word.clone(), self.score.to_string()]
    }

    fn unique_key(&self) -> Option<String> {
        Some(self.word.clone())
    }
}

/// Keeps original English tweets: no retweets, no replies.
pub fn filter_tweets<I>(tweets: I) -> Vec<TweetRecord>
where
    I: IntoIterator<Item = TweetRecord>,
{
    tweets
        .into_iter()
        .filter(|t| !t.is_retweet && !t.is_reply && t.language_tag == "en")
        .collect()
}

/// Relative-error histogram of booking prices against pricing-dataset fares.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorHistogram {
    /// Upper edges of the bins; the last bin is open-ended.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl ErrorHistogram {
    fn new(errors: &[f64]) -> Self {
        let edges: Vec<f64> = (1..=10).map(|i| i as f64 * 0.01).collect();
        let mut counts = vec![0usize; edges.len() + 1];
        for &e in errors {
            let bin = edges.iter().position(|&edge| e < edge).unwrap_or(edges.len());
            counts[bin] += 1;
        }
        ErrorHistogram { edges, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct Reconciliation {
    /// Matched bookings, priced at the pricing-dataset fare.
    pub joined: Vec<ItineraryRecord>,
    /// `|p_booking - p_pricing| / p_pricing`, aligned with `joined`.
    pub relative_errors: Vec<f64>,
    pub histogram: ErrorHistogram,
    pub unmatched: usize,
}

impl Reconciliation {
    pub fn share_within(&self, tolerance: f64) -> Option<f64> {
        if self.relative_errors.is_empty() {
            return None;
        }
        let n = self.relative_errors.iter().filter(|&&e| e <= tolerance).count();
        Some(n as f64 / self.relative_errors.len() as f64)
    }
}

/// Joins bookings to the pricing dataset on the full itinerary key and
/// replaces each booking price with the pricing-dataset fare.
pub fn reconcile_booking_fares(
    bookings: &[ItineraryRecord],
    fares: &[FareObservation],
) -> Reconciliation {
    let index: std::collections::HashMap<ItineraryKey, f64> =
        fares.iter().map(|f| (f.key(), f.price)).collect();
    let mut joined = Vec::with_capacity(bookings.len());
    let mut relative_errors = Vec::with_capacity(bookings.len());
    let mut unmatched = 0;
    for b in bookings {
        match index.get(&b.key()) {
            Some(&fare) => {
                relative_errors.push((b.price - fare).abs() / fare);
                let mut rec = b.clone();
                rec.price = fare;
                joined.push(rec);
            }
            None => unmatched += 1,
        }
    }
    if unmatched > 0 {
        log::warn!("{unmatched} bookings without a matching fare observation were dropped");
    }
    let histogram = ErrorHistogram::new(&relative_errors);
    Reconciliation {
        joined,
        relative_errors,
        histogram,
        unmatched,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_str<T: Record>(s: &str) -> Result<ParseOutcome<T>, IngestError> {
        parse_reader(s.as_bytes())
    }

    #[test]
    fn parses_booking_row() {
        let text = "od,airline_id,dep_day_id,dbd,dep_time_mam,travel_time,price\n\
                    AMS-LHR,4,3063,-119,1305,4.33,173.92\n";
        let out = parse_str::<ItineraryRecord>(text).unwrap();
        assert_eq!(out.accepted(), 1);
        let r = &out.records[0];
        assert_eq!(r.od, "AMS-LHR");
        assert_eq!(r.airline_id, 4);
        assert_eq!(r.dep_day_id, 3063);
        assert_eq!(r.dbd, -119);
        assert_eq!(r.dep_time_mam, 1305);
        assert_eq!(r.travel_time, 4.33);
        assert_eq!(r.price, 173.92);
        assert!(r.is_bought);
    }

    #[test]
    fn empty_file_with_header() {
        let text = "od,airline_id,dep_day_id,dbd,dep_time_mam,travel_time,price\n";
        let out = parse_str::<FareObservation>(text).unwrap();
        assert_eq!(out.accepted(), 0);
        assert_eq!(out.rejected(), 0);
    }

    #[test]
    fn rejects_out_of_range_departure_with_line() {
        let text = "od,airline_id,dep_day_id,dbd,dep_time_mam,travel_time,price\n\
                    AMS-LHR,4,3063,-119,1305,4.33,173.92\n\
                    AMS-LHR,4,3063,-118,1500,4.33,173.92\n\
                    AMS-LHR,4,3063,-117,1305,4.33,173.92\n";
        let out = parse_str::<FareObservation>(text).unwrap();
        assert_eq!(out.accepted(), 2);
        assert_eq!(out.rejections.len(), 1);
        assert_eq!(out.rejections[0].line, 3);
        assert!(out.rejections[0].message.contains("dep_time_mam out of range"));
    }

    #[test]
    fn majority_rejection_is_fatal() {
        let text = "od,airline_id,dep_day_id,dbd,dep_time_mam,travel_time,price\n\
                    AMS-LHR,4,3063,5,1305,4.33,173.92\n\
                    AMS-LHR,4,3063,-1,1305,-4.33,173.92\n\
                    AMS-LHR,4,3063,-1,1305,4.33,173.92\n";
        let err = parse_str::<FareObservation>(text).unwrap_err();
        assert!(matches!(err, IngestError::TooManyRejected { rejected: 2, total: 3, .. }));
    }

    #[test]
    fn header_mismatch_and_missing_file() {
        let err = parse_str::<SafetyRecord>("rank,code,score\n1,CX,0.005\n").unwrap_err();
        assert!(matches!(err, IngestError::HeaderMismatch { .. }));
        let err = parse_dataset::<SafetyRecord>("/nonexistent/safety.csv").unwrap_err();
        assert!(matches!(err, IngestError::MissingFile(_)));
    }

    #[test]
    fn duplicate_fare_key_rejected() {
        let text = "od,airline_id,dep_day_id,dbd,dep_time_mam,travel_time,price\n\
                    FRA-SYD,1,946,-6,1220,13.24,605.73\n\
                    FRA-SYD,2,946,-6,1200,15.83,416.74\n\
                    FRA-SYD,1,946,-6,1220,13.24,600.00\n";
        let out = parse_str::<FareObservation>(text).unwrap();
        assert_eq!(out.accepted(), 2);
        assert!(out.rejections[0].message.starts_with("duplicate key"));
    }

    #[test]
    fn review_scores_validated() {
        let text = "id,airline_id,recommended,review,fb,ground,ife,crew,seat,value,wifi\n\
                    1,5,N,\"late, rude crew\",2,3,3,2,1,4,1\n\
                    2,1,N,bad,2,2,2,1,1,3,6\n\
                    3,2,Y,fine,3,4,4,3,4,4,5\n";
        let out = parse_str::<ReviewRecord>(text).unwrap();
        assert_eq!(out.accepted(), 2);
        assert_eq!(out.records[0].review_text, "late, rude crew");
        assert!(out.rejections[0].message.contains("wifi"));
    }

    #[test]
    fn lexicon_rejects_out_of_range_and_duplicates() {
        let text = "word,score\namazing,4\nAmazing,3\nawful,-7\nlimited,-1\n";
        let out = parse_str::<LexiconEntry>(text).unwrap();
        assert_eq!(out.accepted(), 2);
        assert_eq!(out.rejected(), 2);
    }

    fn tweet(rt: bool, reply: bool, lang: &str) -> TweetRecord {
        TweetRecord {
            airline_id: 1,
            text: "great flight".into(),
            is_retweet: rt,
            is_reply: reply,
            language_tag: lang.into(),
        }
    }

    #[test]
    fn tweet_filter_rules() {
        assert!(filter_tweets(vec![tweet(true, false, "en")]).is_empty());
        assert_eq!(filter_tweets(vec![tweet(false, false, "en")]).len(), 1);
        let all_excluded = vec![
            tweet(true, false, "en"),
            tweet(false, true, "en"),
            tweet(false, false, "nl"),
        ];
        assert!(filter_tweets(all_excluded).is_empty());
    }

    fn fare(price: f64, dbd: i32) -> FareObservation {
        FareObservation {
            od: "AMS-LHR".into(),
            airline_id: 1,
            dep_day_id: 10,
            dbd,
            dep_time_mam: 420,
            travel_time: 1.0,
            price,
        }
    }

    fn booking(price: f64, dbd: i32) -> ItineraryRecord {
        let f = fare(price, dbd);
        ItineraryRecord {
            od: f.od,
            airline_id: f.airline_id,
            dep_day_id: f.dep_day_id,
            dbd: f.dbd,
            dep_time_mam: f.dep_time_mam,
            travel_time: f.travel_time,
            price: f.price,
            is_bought: true,
        }
    }

    #[test]
    fn reconciliation_replaces_price_and_counts_unmatched() {
        let fares = vec![fare(100.0, -1), fare(100.0, -2)];
        let bookings = vec![booking(100.0, -1), booking(101.0, -2), booking(100.0, -3)];
        let rec = reconcile_booking_fares(&bookings, &fares);
        assert_eq!(rec.joined.len(), 2);
        assert_eq!(rec.unmatched, 1);
        assert_eq!(rec.relative_errors[0], 0.0);
        assert!((rec.relative_errors[1] - 0.01).abs() < 1e-12);
        assert_eq!(rec.joined[1].price, 100.0);
        assert_eq!(rec.histogram.total(), 2);
    }
}
