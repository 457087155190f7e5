//! Per-itinerary feature engineering.
//!
//! Every displayed itinerary (one fare observation) becomes one
//! [`FeatureVector`]. Features come in four groups:
//!
//! * competitive pricing: the market's cheapest (`yy`) and second-cheapest
//!   (`xx`, written `zz` in output column names) fares, the airline's
//!   difference to them, and rolling mean/min/max/sd of those differences
//!   over the 3, 7, 14 and 28 days strictly before the evaluation day;
//! * schedule: what the airline offers in the market that day and where this
//!   itinerary sits against the fastest travel time and a 06:00 anchor;
//! * airline aggregates: review ratings, review and tweet sentiment, safety
//!   and fleet statistics, broadcast by airline id;
//! * time: `bucket_t = floor(dbd / 10) * 10`.
//!
//! Missing values are explicit (`None`) and written as empty CSV fields.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{
    od_endpoints, reconcile_booking_fares, FareObservation, FleetRecord, ItineraryKey,
    ItineraryRecord, Reconciliation, ReviewRecord, ReviewScores, SafetyRecord, TweetRecord,
};
use crate::sentiment::{
    aggregate_airline_sentiment, median, score_document, Aggregation, Lexicon,
};

pub const WINDOWS: [usize; 4] = [3, 7, 14, 28];

/// Departure-time anchor for `dept_delta`, minutes after midnight (06:00).
pub const DEPARTURE_ANCHOR_MAM: u32 = 360;
/// Departures strictly after this are evening departures (18:00).
pub const EVENING_AFTER_MAM: u32 = 1080;
/// Arrivals strictly before this are morning arrivals (09:00).
pub const MORNING_BEFORE_MAM: u32 = 540;
/// Departures strictly before this are night departures (06:00).
pub const NIGHT_DEPARTURE_BEFORE_MAM: u32 = 360;
/// An itinerary within this many hours of the market's fastest travel time
/// is treated as non-stop.
pub const MIN_CONNECTION_HOURS: f64 = 0.75;

/// Aircraft type codes counted as wide-body.
pub const WIDE_BODY_TYPES: &[&str] = &[
    "332", "333", "338", "339", "343", "346", "351", "359", "35K", "380", "388", "744", "747",
    "748", "763", "764", "772", "773", "77L", "77W", "77X", "788", "789", "78X",
];

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("feature file: {0}")]
    Format(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Reference fare a window compares against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Reference {
    /// The airline against its own fare on the previous day.
    Own,
    /// The cheapest fare in the market.
    Cheapest,
    /// The second-cheapest fare in the market.
    SecondCheapest,
}

impl Reference {
    pub const ALL: [Reference; 3] = [Reference::Own, Reference::Cheapest, Reference::SecondCheapest];

    /// Suffix used in output column names.
    pub fn suffix(self) -> &'static str {
        match self {
            Reference::Own => "al",
            Reference::Cheapest => "yy",
            Reference::SecondCheapest => "zz",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketReference {
    pub yy_fare: f64,
    pub yy_airline: u32,
    /// Absent when fewer than two airlines are in the market.
    pub xx: Option<(f64, u32)>,
}

/// Cheapest and second-cheapest fare over distinct airlines, from each
/// airline's own minimum fare. Ties are attributed to the lower airline id.
pub fn reference_from_airline_fares(airline_fares: &[(u32, f64)]) -> Option<MarketReference> {
    let mut per_airline: BTreeMap<u32, f64> = BTreeMap::new();
    for &(airline, fare) in airline_fares {
        per_airline
            .entry(airline)
            .and_modify(|f| *f = f.min(fare))
            .or_insert(fare);
    }
    let mut sorted: Vec<(u32, f64)> = per_airline.into_iter().collect();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let (yy_airline, yy_fare) = *sorted.first()?;
    Some(MarketReference {
        yy_fare,
        yy_airline,
        xx: sorted.get(1).map(|&(a, f)| (f, a)),
    })
}

pub fn market_reference_fares(
    fares: &[FareObservation],
    od: &str,
    dep_day_id: i64,
    dbd: i32,
) -> Option<MarketReference> {
    let at: Vec<(u32, f64)> = fares
        .iter()
        .filter(|f| f.od == od && f.dep_day_id == dep_day_id && f.dbd == dbd)
        .map(|f| (f.airline_id, f.price))
        .collect();
    reference_from_airline_fares(&at)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FareDiffs {
    pub is_cheapest: bool,
    pub yy_diff: f64,
    pub xx_diff: Option<f64>,
}

pub fn fare_differences(own_fare: f64, yy_fare: f64, xx_fare: Option<f64>) -> FareDiffs {
    FareDiffs {
        is_cheapest: own_fare == yy_fare,
        yy_diff: own_fare - yy_fare,
        xx_diff: xx_fare.map(|xx| own_fare - xx),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowStats {
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

/// Mean, sample standard deviation, min and max of a nonempty window.
pub fn window_stats(values: &[f64]) -> WindowStats {
    assert!(!values.is_empty(), "window must be nonempty");
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return WindowStats {
            mean: min,
            sd: 0.0,
            min,
            max,
        };
    }
    let n = values.len() as f64;
    let mean = (values.iter().sum::<f64>() / n).clamp(min, max);
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    WindowStats { mean, sd, min, max }
}

/// Statistics over the diffs at `dbd - window ..= dbd - 1`. Missing when any
/// of those days has no diff.
pub fn rolling_price_features(
    series: &BTreeMap<i32, f64>,
    dbd: i32,
    window: usize,
) -> Option<WindowStats> {
    let mut values = Vec::with_capacity(window);
    for back in 1..=window as i32 {
        values.push(*series.get(&(dbd - back))?);
    }
    Some(window_stats(&values))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PricingFeatures {
    pub own_fare: f64,
    pub mkt_fare: f64,
    pub is_cheapest: bool,
    pub mkt_fare_diff: f64,
    pub mkt_fare_diff_perc: f64,
    /// Indexed `[reference][window]` following [`Reference::ALL`] and [`WINDOWS`].
    pub windows: [[Option<WindowStats>; 4]; 3],
}

impl PricingFeatures {
    pub fn window(&self, reference: Reference, window: usize) -> Option<WindowStats> {
        let r = Reference::ALL.iter().position(|&x| x == reference)?;
        let w = WINDOWS.iter().position(|&x| x == window)?;
        self.windows[r][w]
    }
}

/// Per-airline fare panel for one market (od, departure day): dbd -> airline -> fare.
#[derive(Debug, Clone, Default)]
pub struct MarketPanel {
    fares: BTreeMap<i32, BTreeMap<u32, f64>>,
}

impl MarketPanel {
    pub fn insert(&mut self, dbd: i32, airline: u32, fare: f64) {
        self.fares
            .entry(dbd)
            .or_default()
            .entry(airline)
            .and_modify(|f| *f = f.min(fare))
            .or_insert(fare);
    }

    pub fn from_observations<'a>(obs: impl IntoIterator<Item = &'a FareObservation>) -> Self {
        let mut panel = MarketPanel::default();
        for o in obs {
            panel.insert(o.dbd, o.airline_id, o.price);
        }
        panel
    }

    pub fn reference(&self, dbd: i32) -> Option<MarketReference> {
        let at = self.fares.get(&dbd)?;
        let pairs: Vec<(u32, f64)> = at.iter().map(|(&a, &f)| (a, f)).collect();
        reference_from_airline_fares(&pairs)
    }

    pub fn airline_fare(&self, airline: u32, dbd: i32) -> Option<f64> {
        self.fares.get(&dbd)?.get(&airline).copied()
    }

    pub fn airlines_at(&self, dbd: i32) -> impl Iterator<Item = u32> + '_ {
        self.fares.get(&dbd).into_iter().flat_map(|m| m.keys().copied())
    }

    /// Difference series for one airline against a reference, keyed by dbd.
    pub fn diff_series(&self, airline: u32, reference: Reference) -> BTreeMap<i32, f64> {
        let mut out = BTreeMap::new();
        for (&dbd, at) in &self.fares {
            let Some(&own) = at.get(&airline) else { continue };
            let diff = match reference {
                Reference::Own => self.airline_fare(airline, dbd - 1).map(|prev| own - prev),
                Reference::Cheapest => self.reference(dbd).map(|r| own - r.yy_fare),
                Reference::SecondCheapest => {
                    self.reference(dbd).and_then(|r| r.xx).map(|(xx, _)| own - xx)
                }
            };
            if let Some(d) = diff {
                out.insert(dbd, d);
            }
        }
        out
    }

    /// Pricing features for every day the airline has a fare.
    pub fn airline_features(&self, airline: u32) -> BTreeMap<i32, PricingFeatures> {
        let series: Vec<BTreeMap<i32, f64>> = Reference::ALL
            .iter()
            .map(|&r| self.diff_series(airline, r))
            .collect();
        let mut out = BTreeMap::new();
        for (&dbd, at) in &self.fares {
            let Some(&own) = at.get(&airline) else { continue };
            let Some(reference) = self.reference(dbd) else { continue };
            let diffs = fare_differences(own, reference.yy_fare, reference.xx.map(|x| x.0));
            let mut windows = [[None; 4]; 3];
            for (r, s) in series.iter().enumerate() {
                for (w, &len) in WINDOWS.iter().enumerate() {
                    windows[r][w] = rolling_price_features(s, dbd, len);
                }
            }
            out.insert(
                dbd,
                PricingFeatures {
                    own_fare: own,
                    mkt_fare: reference.yy_fare,
                    is_cheapest: diffs.is_cheapest,
                    mkt_fare_diff: diffs.yy_diff,
                    mkt_fare_diff_perc: own / reference.yy_fare - 1.0,
                    windows,
                },
            );
        }
        out
    }
}

/// Arrival time, minutes after midnight, ignoring time zones.
pub fn arrival_mam(dep_time_mam: u32, travel_time_hours: f64) -> u32 {
    ((dep_time_mam as f64 + (travel_time_hours * 60.0).round()) as u64 % 1440) as u32
}

fn crosses_midnight(dep_time_mam: u32, travel_time_hours: f64) -> bool {
    dep_time_mam as f64 + (travel_time_hours * 60.0).round() >= 1440.0
}

pub fn bucket_t(dbd: i32) -> i32 {
    dbd.div_euclid(10) * 10
}

pub fn dept_delta(dep_time_mam: u32) -> u32 {
    dep_time_mam.abs_diff(DEPARTURE_ANCHOR_MAM)
}

/// What one airline offers in a market on one day.
#[derive(Debug, Clone, PartialEq)]
pub struct AirlineSchedule {
    pub direct_flight: bool,
    pub has_night_flight: bool,
    pub has_day_flight: bool,
    pub has_night_departure: bool,
    pub has_morning_arrival: bool,
    pub has_evening_departure: bool,
    pub first_flight_dep: u32,
    pub first_flight_arr: u32,
    pub last_flight_dep: u32,
    pub last_flight_arr: u32,
    pub min_flying_time: f64,
    pub min_conn_time: f64,
    pub min_travel_time: f64,
    pub num_frequencies: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleFeatures {
    pub airline: AirlineSchedule,
    pub dep_time_mam: u32,
    pub travel_time: f64,
    pub connecting_time: f64,
    pub mintt: f64,
    pub tt_delta: f64,
    pub dept_delta: u32,
    pub bucket_t: i32,
}

/// Airline-level schedule features from that airline's `(dep_time_mam,
/// travel_time)` itineraries on one day, given the market's fastest travel
/// time `mintt`.
pub fn airline_schedule(itineraries: &[(u32, f64)], mintt: f64) -> AirlineSchedule {
    assert!(!itineraries.is_empty(), "schedule group must be nonempty");
    let first = itineraries
        .iter()
        .min_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)))
        .unwrap();
    let last = itineraries
        .iter()
        .max_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)))
        .unwrap();
    let min_travel_time = itineraries.iter().map(|i| i.1).fold(f64::INFINITY, f64::min);
    AirlineSchedule {
        direct_flight: itineraries.iter().any(|i| i.1 - mintt < MIN_CONNECTION_HOURS),
        has_night_flight: itineraries.iter().any(|i| crosses_midnight(i.0, i.1)),
        has_day_flight: itineraries.iter().any(|i| !crosses_midnight(i.0, i.1)),
        has_night_departure: itineraries.iter().any(|i| i.0 < NIGHT_DEPARTURE_BEFORE_MAM),
        has_morning_arrival: itineraries
            .iter()
            .any(|i| arrival_mam(i.0, i.1) < MORNING_BEFORE_MAM),
        has_evening_departure: itineraries.iter().any(|i| i.0 > EVENING_AFTER_MAM),
        first_flight_dep: first.0,
        first_flight_arr: arrival_mam(first.0, first.1),
        last_flight_dep: last.0,
        last_flight_arr: arrival_mam(last.0, last.1),
        min_flying_time: mintt,
        min_conn_time: (min_travel_time - mintt).max(0.0),
        min_travel_time,
        num_frequencies: itineraries.len(),
    }
}

pub fn schedule_features(
    group: &[(u32, f64)],
    own: (u32, f64),
    mintt: f64,
    dbd: i32,
) -> ScheduleFeatures {
    let (dep, tt) = own;
    let tt_delta = tt - mintt;
    ScheduleFeatures {
        airline: airline_schedule(group, mintt),
        dep_time_mam: dep,
        travel_time: tt,
        connecting_time: if tt_delta < MIN_CONNECTION_HOURS { 0.0 } else { tt_delta },
        mintt,
        tt_delta,
        dept_delta: dept_delta(dep),
        bucket_t: bucket_t(dbd),
    }
}

/// Airline-level aggregates broadcast onto every itinerary of the airline.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AirlineAggregates {
    pub sc1: Option<f64>,
    pub sc2: Option<f64>,
    pub rating_recommended: Option<f64>,
    pub rating_review: Option<f64>,
    /// Median of each ordinal score, ordered as [`ReviewScores::NAMES`].
    pub rating_scores: [Option<f64>; 7],
    pub rating_obs: Option<f64>,
    pub sent_mean: Option<f64>,
    pub sent_sd: Option<f64>,
    pub twitter_sentiment: Option<f64>,
    pub safety_score: Option<f64>,
    pub fleet_size: Option<f64>,
    pub fleet_cost: Option<f64>,
    pub fleet_age: Option<f64>,
    pub wide_body: Option<f64>,
}

/// Sources for airline-level aggregates.
#[derive(Debug, Clone, Copy)]
pub struct AirlineSources<'a> {
    pub reviews: &'a [ReviewRecord],
    pub tweets: &'a [TweetRecord],
    pub safety: &'a [SafetyRecord],
    pub fleet: &'a [FleetRecord],
    pub lexicon: &'a Lexicon,
    /// Maps safety-index airline codes to airline ids. Codes that parse as
    /// integers map to themselves when absent here.
    pub airline_codes: &'a BTreeMap<String, u32>,
    /// Optional external review-site scores per airline.
    pub site_scores: &'a BTreeMap<u32, (Option<f64>, Option<f64>)>,
}

/// Tweets are expected to be filtered already (see [`crate::ingest::filter_tweets`]).
pub fn build_airline_aggregates(src: AirlineSources<'_>) -> BTreeMap<u32, AirlineAggregates> {
    let mut out: BTreeMap<u32, AirlineAggregates> = BTreeMap::new();

    let mut by_airline: BTreeMap<u32, Vec<&ReviewRecord>> = BTreeMap::new();
    for r in src.reviews {
        by_airline.entry(r.airline_id).or_default().push(r);
    }
    let review_scores: Vec<(u32, _)> = src
        .reviews
        .par_iter()
        .map(|r| (r.airline_id, score_document(&r.review_text, src.lexicon)))
        .collect();
    let review_sentiment = aggregate_airline_sentiment(&review_scores, Aggregation::Mean);
    for (airline, reviews) in &by_airline {
        let agg = out.entry(*airline).or_default();
        let n = reviews.len() as f64;
        agg.rating_obs = Some(n);
        agg.rating_recommended = Some(reviews.iter().filter(|r| r.recommended).count() as f64 / n);
        for k in 0..7 {
            let mut vals: Vec<f64> = reviews.iter().map(|r| r.scores.as_array()[k] as f64).collect();
            agg.rating_scores[k] = median(&mut vals);
        }
        let scaled: Vec<f64> = review_scores
            .iter()
            .filter(|(a, _)| a == airline)
            .filter_map(|(_, s)| s.raw.map(|r| r + 5.0))
            .collect();
        if !scaled.is_empty() {
            let n = scaled.len() as f64;
            let mean = scaled.iter().sum::<f64>() / n;
            agg.sent_mean = Some(mean);
            if scaled.len() > 1 {
                let var = scaled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
                agg.sent_sd = Some(var.sqrt());
            }
        }
    }
    for s in review_sentiment {
        out.entry(s.airline_id).or_default().rating_review = Some(s.score_0_10);
    }

    let tweet_scores: Vec<(u32, _)> = src
        .tweets
        .par_iter()
        .map(|t| (t.airline_id, score_document(&t.text, src.lexicon)))
        .collect();
    for s in aggregate_airline_sentiment(&tweet_scores, Aggregation::Median) {
        out.entry(s.airline_id).or_default().twitter_sentiment = Some(s.score_0_10);
    }

    for s in src.safety {
        let id = src
            .airline_codes
            .get(&s.airline_code)
            .copied()
            .or_else(|| s.airline_code.parse().ok());
        match id {
            Some(id) => out.entry(id).or_default().safety_score = Some(s.score),
            None => log::warn!("safety code {} has no airline id mapping", s.airline_code),
        }
    }

    let mut fleets: BTreeMap<u32, Vec<&FleetRecord>> = BTreeMap::new();
    for f in src.fleet {
        fleets.entry(f.airline_id).or_default().push(f);
    }
    for (airline, aircraft) in fleets {
        let agg = out.entry(airline).or_default();
        let n = aircraft.len() as f64;
        agg.fleet_size = Some(n);
        agg.fleet_cost = Some(aircraft.iter().map(|a| a.aircraft_cost).sum());
        agg.fleet_age = Some(aircraft.iter().map(|a| a.aircraft_age).sum::<f64>() / n);
        let wide = aircraft
            .iter()
            .filter(|a| WIDE_BODY_TYPES.contains(&a.aircraft_type.as_str()))
            .count() as f64;
        agg.wide_body = Some(if wide * 2.0 > n { 1.0 } else { 0.0 });
    }

    for (&airline, &(sc1, sc2)) in src.site_scores {
        let agg = out.entry(airline).or_default();
        agg.sc1 = sc1;
        agg.sc2 = sc2;
    }
    out
}

/// Column names, in output order.
pub fn feature_columns() -> &'static [String] {
    static COLS: OnceLock<Vec<String>> = OnceLock::new();
    COLS.get_or_init(|| {
        let mut c: Vec<String> = ["price", "home_carrier", "sc1", "sc2", "rating_recommended", "rating_review"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        c.extend(ReviewScores::NAMES.iter().map(|n| format!("rating_{n}")));
        c.extend(
            [
                "rating_obs",
                "sent_mean",
                "sent_sd",
                "sent_mean_rel_diff",
                "sent_mean_rel_perc",
                "sent_sd_rel_diff",
                "sent_sd_rel_perc",
                "twitter_sentiment",
                "safety_score",
                "direct_flight",
                "has_night_flight",
                "has_day_flight",
                "first_flight_dep",
                "first_flight_arr",
                "last_flight_dep",
                "last_flight_arr",
                "min_flying_time",
                "min_conn_time",
                "min_travel_time",
                "has_night_departure",
                "has_morning_arrival",
                "has_evening_departure",
                "num_frequencies",
                "wide_body",
                "airline_fleet_size",
                "airline_fleet_cost",
                "airline_fleet_age",
                "bucket_t",
            ]
            .iter()
            .map(|s| s.to_string()),
        );
        for r in Reference::ALL {
            for w in WINDOWS {
                for stat in ["mean", "min", "max", "sd"] {
                    c.push(format!("{stat}{w}d_{}", r.suffix()));
                }
            }
        }
        c.extend(
            [
                "dep_time_mam",
                "connecting_time",
                "travel_time",
                "mintt",
                "tt_delta",
                "dept_delta",
                "mkt_fare",
                "mkt_fare_diff",
                "mkt_fare_diff_perc",
                "is_cheapest",
            ]
            .iter()
            .map(|s| s.to_string()),
        );
        c
    })
}

pub fn column_index(name: &str) -> Option<usize> {
    static INDEX: OnceLock<HashMap<String, usize>> = OnceLock::new();
    INDEX
        .get_or_init(|| {
            feature_columns()
                .iter()
                .enumerate()
                .map(|(i, n)| (n.clone(), i))
                .collect()
        })
        .get(name)
        .copied()
}

/// Coarse grouping of feature columns by what drives them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureFamily {
    Pricing,
    Schedule,
    /// Airline product and reputation: ratings, sentiment, safety, fleet.
    Product,
    Other,
}

pub fn feature_family(name: &str) -> FeatureFamily {
    const SCHEDULE: &[&str] = &[
        "dep_time_mam",
        "connecting_time",
        "travel_time",
        "mintt",
        "tt_delta",
        "dept_delta",
        "direct_flight",
        "num_frequencies",
    ];
    if name == "price"
        || name.starts_with("mkt_")
        || name == "is_cheapest"
        || name.ends_with("_al")
        || name.ends_with("_yy")
        || name.ends_with("_zz")
    {
        FeatureFamily::Pricing
    } else if SCHEDULE.contains(&name)
        || name.starts_with("has_")
        || name.starts_with("first_flight")
        || name.starts_with("last_flight")
        || name.starts_with("min_")
    {
        FeatureFamily::Schedule
    } else if name.starts_with("rating_")
        || name.starts_with("sent_")
        || name.starts_with("airline_fleet")
        || matches!(
            name,
            "twitter_sentiment" | "safety_score" | "wide_body" | "sc1" | "sc2" | "home_carrier"
        )
    {
        FeatureFamily::Product
    } else {
        FeatureFamily::Other
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub key: ItineraryKey,
    /// Aligned with [`feature_columns`].
    pub values: Vec<Option<f64>>,
    pub is_bought: bool,
}

impl FeatureVector {
    pub fn get(&self, column: &str) -> Option<f64> {
        column_index(column).and_then(|i| self.values[i])
    }
}

fn b(v: bool) -> Option<f64> {
    Some(if v { 1.0 } else { 0.0 })
}

/// Everything assembly needs besides the fares and bookings.
#[derive(Debug, Clone, Default)]
pub struct AssembleContext {
    pub airlines: BTreeMap<u32, AirlineAggregates>,
    /// Hub airport per airline, for `home_carrier`.
    pub hubs: BTreeMap<u32, String>,
}

#[derive(Debug, Clone)]
pub struct Assembled {
    pub rows: Vec<FeatureVector>,
    pub reconciliation: Reconciliation,
}

/// One feature row per fare observation, in input order. A row is labelled
/// bought when a reconciled booking matches its key.
pub fn assemble_feature_vectors(
    fares: &[FareObservation],
    bookings: &[ItineraryRecord],
    ctx: &AssembleContext,
) -> Assembled {
    let reconciliation = reconcile_booking_fares(bookings, fares);
    let bought: HashSet<ItineraryKey> = reconciliation.joined.iter().map(|b| b.key()).collect();

    let mut by_od: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, f) in fares.iter().enumerate() {
        by_od.entry(f.od.as_str()).or_default().push(i);
    }
    let per_od: Vec<Vec<(usize, FeatureVector)>> = by_od
        .into_par_iter()
        .map(|(od, idx)| assemble_od(od, fares, &idx, &bought, ctx))
        .collect();

    let mut slots: Vec<Option<FeatureVector>> = vec![None; fares.len()];
    for (i, fv) in per_od.into_iter().flatten() {
        slots[i] = Some(fv);
    }
    Assembled {
        rows: slots.into_iter().map(|s| s.expect("every fare row assembled")).collect(),
        reconciliation,
    }
}

fn assemble_od(
    od: &str,
    fares: &[FareObservation],
    idx: &[usize],
    bought: &HashSet<ItineraryKey>,
    ctx: &AssembleContext,
) -> Vec<(usize, FeatureVector)> {
    let mut mintt: HashMap<i32, f64> = HashMap::new();
    let mut groups: HashMap<(u32, i64, i32), Vec<(u32, f64)>> = HashMap::new();
    let mut markets: BTreeMap<i64, MarketPanel> = BTreeMap::new();
    for &i in idx {
        let f = &fares[i];
        mintt
            .entry(f.dbd)
            .and_modify(|m| *m = m.min(f.travel_time))
            .or_insert(f.travel_time);
        groups
            .entry((f.airline_id, f.dep_day_id, f.dbd))
            .or_default()
            .push((f.dep_time_mam, f.travel_time));
        markets
            .entry(f.dep_day_id)
            .or_default()
            .insert(f.dbd, f.airline_id, f.price);
    }

    let mut pricing: HashMap<(u32, i64), BTreeMap<i32, PricingFeatures>> = HashMap::new();
    for (&day, panel) in &markets {
        let airlines: HashSet<u32> = groups
            .keys()
            .filter(|k| k.1 == day)
            .map(|k| k.0)
            .collect();
        for a in airlines {
            pricing.insert((a, day), panel.airline_features(a));
        }
    }

    let endpoints = od_endpoints(od);
    let mut out = Vec::with_capacity(idx.len());
    for &i in idx {
        let f = &fares[i];
        let key = f.key();
        let agg = ctx.airlines.get(&f.airline_id);
        let group = &groups[&(f.airline_id, f.dep_day_id, f.dbd)];
        let sched = schedule_features(group, (f.dep_time_mam, f.travel_time), mintt[&f.dbd], f.dbd);
        let price = pricing
            .get(&(f.airline_id, f.dep_day_id))
            .and_then(|m| m.get(&f.dbd));

        let panel = &markets[&f.dep_day_id];
        let (mean_rel, sd_rel) = relative_sentiment(panel, f.dbd, f.airline_id, ctx);

        let home = match (endpoints, ctx.hubs.get(&f.airline_id)) {
            (Some((o, d)), Some(hub)) => b(hub == o || hub == d),
            _ => None,
        };

        let mut v: Vec<Option<f64>> = Vec::with_capacity(feature_columns().len());
        v.push(Some(f.price));
        v.push(home);
        v.push(agg.and_then(|a| a.sc1));
        v.push(agg.and_then(|a| a.sc2));
        v.push(agg.and_then(|a| a.rating_recommended));
        v.push(agg.and_then(|a| a.rating_review));
        for k in 0..7 {
            v.push(agg.and_then(|a| a.rating_scores[k]));
        }
        v.push(agg.and_then(|a| a.rating_obs));
        v.push(agg.and_then(|a| a.sent_mean));
        v.push(agg.and_then(|a| a.sent_sd));
        v.extend([mean_rel.0, mean_rel.1, sd_rel.0, sd_rel.1]);
        v.push(agg.and_then(|a| a.twitter_sentiment));
        v.push(agg.and_then(|a| a.safety_score));
        let s = &sched.airline;
        v.extend([
            b(s.direct_flight),
            b(s.has_night_flight),
            b(s.has_day_flight),
            Some(s.first_flight_dep as f64),
            Some(s.first_flight_arr as f64),
            Some(s.last_flight_dep as f64),
            Some(s.last_flight_arr as f64),
            Some(s.min_flying_time),
            Some(s.min_conn_time),
            Some(s.min_travel_time),
            b(s.has_night_departure),
            b(s.has_morning_arrival),
            b(s.has_evening_departure),
            Some(s.num_frequencies as f64),
        ]);
        v.push(agg.and_then(|a| a.wide_body));
        v.push(agg.and_then(|a| a.fleet_size));
        v.push(agg.and_then(|a| a.fleet_cost));
        v.push(agg.and_then(|a| a.fleet_age));
        v.push(Some(sched.bucket_t as f64));
        for r in 0..3 {
            for w in 0..4 {
                let st = price.and_then(|p| p.windows[r][w]);
                v.extend([
                    st.map(|s| s.mean),
                    st.map(|s| s.min),
                    st.map(|s| s.max),
                    st.map(|s| s.sd),
                ]);
            }
        }
        v.extend([
            Some(sched.dep_time_mam as f64),
            Some(sched.connecting_time),
            Some(sched.travel_time),
            Some(sched.mintt),
            Some(sched.tt_delta),
            Some(sched.dept_delta as f64),
        ]);
        v.push(price.map(|p| p.mkt_fare));
        v.push(price.map(|p| p.mkt_fare_diff));
        v.push(price.map(|p| p.mkt_fare_diff_perc));
        v.push(price.and_then(|p| b(p.is_cheapest)));
        debug_assert_eq!(v.len(), feature_columns().len());

        let is_bought = bought.contains(&key);
        out.push((
            i,
            FeatureVector {
                key,
                values: v,
                is_bought,
            },
        ));
    }
    out
}

type RelPair = (Option<f64>, Option<f64>);

/// Airline sentiment mean and sd against the average over the airlines in
/// the market that day: `(difference, ratio - 1)` for each.
fn relative_sentiment(
    panel: &MarketPanel,
    dbd: i32,
    airline: u32,
    ctx: &AssembleContext,
) -> (RelPair, RelPair) {
    let mut means = Vec::new();
    let mut sds = Vec::new();
    for a in panel.airlines_at(dbd) {
        if let Some(agg) = ctx.airlines.get(&a) {
            means.extend(agg.sent_mean);
            sds.extend(agg.sent_sd);
        }
    }
    let own = ctx.airlines.get(&airline);
    let rel = |own: Option<f64>, all: &[f64]| -> RelPair {
        match own {
            Some(o) if !all.is_empty() => {
                let m = all.iter().sum::<f64>() / all.len() as f64;
                (Some(o - m), (m != 0.0).then(|| o / m - 1.0))
            }
            _ => (None, None),
        }
    };
    (
        rel(own.and_then(|a| a.sent_mean), &means),
        rel(own.and_then(|a| a.sent_sd), &sds),
    )
}

const KEY_COLUMNS: [&str; 4] = ["od", "airline_id", "dep_day_id", "dbd"];

pub fn write_feature_csv<W: Write>(writer: W, rows: &[FeatureVector]) -> Result<(), FeatureError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = KEY_COLUMNS.to_vec();
    header.extend(feature_columns().iter().map(String::as_str));
    header.push("is_bought");
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.key.od.clone(),
            r.key.airline_id.to_string(),
            r.key.dep_day_id.to_string(),
            r.key.dbd.to_string(),
        ];
        rec.extend(r.values.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
        rec.push(if r.is_bought { "1" } else { "0" }.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_feature_csv<R: Read>(reader: R) -> Result<Vec<FeatureVector>, FeatureError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let cols = feature_columns();
    let expected = KEY_COLUMNS.len() + cols.len() + 1;
    let matches = header.len() == expected
        && header.iter().take(4).eq(KEY_COLUMNS.iter().copied())
        && header.iter().skip(4).take(cols.len()).eq(cols.iter().map(String::as_str))
        && header.get(expected - 1) == Some("is_bought");
    if !matches {
        return Err(FeatureError::Format("header does not match the feature catalog".into()));
    }
    let dep_col = column_index("dep_time_mam").expect("catalog has dep_time_mam");
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |what: &str| FeatureError::Format(format!("line {line}: bad {what}"));
        let mut values = Vec::with_capacity(cols.len());
        for (j, name) in cols.iter().enumerate() {
            let raw = rec.get(4 + j).unwrap_or("");
            values.push(if raw.is_empty() {
                None
            } else {
                Some(raw.parse::<f64>().map_err(|_| bad(name))?)
            });
        }
        let dep = values[dep_col].ok_or_else(|| bad("dep_time_mam"))? as u32;
        out.push(FeatureVector {
            key: ItineraryKey {
                od: rec[0].to_string(),
                airline_id: rec[1].parse().map_err(|_| bad("airline_id"))?,
                dep_day_id: rec[2].parse().map_err(|_| bad("dep_day_id"))?,
                dbd: rec[3].parse().map_err(|_| bad("dbd"))?,
                dep_time_mam: dep,
            },
            values,
            is_bought: crate::ingest::parse_bool(&rec[expected - 1]).ok_or_else(|| bad("is_bought"))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn obs(airline: u32, dbd: i32, price: f64) -> FareObservation {
        FareObservation {
            od: "AMS-LHR".into(),
            airline_id: airline,
            dep_day_id: 1,
            dbd,
            dep_time_mam: 420 + airline * 60,
            travel_time: 1.0 + airline as f64,
            price,
        }
    }

    fn sample_fares() -> Vec<FareObservation> {
        let rows = [
            (-103, [450.0, 600.0, 500.0, 1000.0]),
            (-102, [475.0, 600.0, 500.0, 1100.0]),
            (-101, [450.0, 625.0, 360.0, 1100.0]),
            (-100, [450.0, 750.0, 500.0, 300.0]),
        ];
        rows.iter()
            .flat_map(|(t, fs)| fs.iter().enumerate().map(move |(a, &p)| obs(a as u32 + 1, *t, p)))
            .collect()
    }

    #[test]
    fn market_references_follow_fare_table() {
        let fares = sample_fares();
        let r = market_reference_fares(&fares, "AMS-LHR", 1, -103).unwrap();
        assert_eq!((r.yy_fare, r.yy_airline), (450.0, 1));
        assert_eq!(r.xx, Some((500.0, 3)));
        let r = market_reference_fares(&fares, "AMS-LHR", 1, -101).unwrap();
        assert_eq!((r.yy_fare, r.yy_airline), (360.0, 3));
        assert_eq!(r.xx, Some((450.0, 1)));
    }

    #[test]
    fn equal_fares_tie_to_lower_airline() {
        let r = reference_from_airline_fares(&[(5, 450.0), (2, 450.0)]).unwrap();
        assert_eq!((r.yy_fare, r.yy_airline), (450.0, 2));
        assert_eq!(r.xx, Some((450.0, 5)));
        let single = reference_from_airline_fares(&[(5, 450.0), (5, 400.0)]).unwrap();
        assert_eq!(single.yy_fare, 400.0);
        assert_eq!(single.xx, None);
    }

    #[test]
    fn fare_difference_rule() {
        assert_eq!(
            fare_differences(450.0, 450.0, Some(500.0)),
            FareDiffs { is_cheapest: true, yy_diff: 0.0, xx_diff: Some(-50.0) }
        );
        assert_eq!(fare_differences(450.0, 360.0, Some(450.0)).yy_diff, 90.0);
        assert_eq!(fare_differences(450.0, 300.0, None).yy_diff, 150.0);
        assert_eq!(fare_differences(450.0, 300.0, None).xx_diff, None);
    }

    #[test]
    fn three_day_windows_at_t100() {
        let panel = MarketPanel::from_observations(&sample_fares());
        let feats = panel.airline_features(1);
        let at = &feats[&-100];
        assert_eq!(at.window(Reference::Cheapest, 3).unwrap().mean, 30.0);
        assert_eq!(at.window(Reference::SecondCheapest, 3).unwrap().mean, -25.0);
        assert!(at.window(Reference::Cheapest, 7).is_none());
        // Own-airline diffs need a fare on the day before each window day.
        assert!(at.window(Reference::Own, 3).is_none());
        assert!(!at.is_cheapest);
        assert_eq!(at.mkt_fare_diff, 150.0);
    }

    #[test]
    fn constant_series_windows() {
        let series: BTreeMap<i32, f64> = (-40..0).map(|d| (d, 12.5)).collect();
        for w in WINDOWS {
            let s = rolling_price_features(&series, -1, w).unwrap();
            assert_eq!(s, WindowStats { mean: 12.5, sd: 0.0, min: 12.5, max: 12.5 });
        }
    }

    #[test]
    fn schedule_examples() {
        let s = schedule_features(&[(360, 1.0)], (360, 1.0), 1.0, -5);
        assert_eq!(s.dept_delta, 0);

        let group = [(420, 1.0), (1170, 1.0)];
        let a = airline_schedule(&group, 1.0);
        assert!(a.has_evening_departure);
        assert_eq!(a.first_flight_dep, 420);
        assert_eq!(a.last_flight_dep, 1170);
        assert_eq!(a.num_frequencies, 2);

        let s = schedule_features(&[(420, 4.33)], (420, 4.33), 0.9, -119);
        assert_eq!(s.mintt, 0.9);
        assert!((s.tt_delta - 3.43).abs() < 1e-12);
        assert_eq!(s.bucket_t, -120);
        assert!(!s.airline.direct_flight);
    }

    #[test]
    fn night_flight_and_arrivals() {
        let a = airline_schedule(&[(1305, 4.33)], 4.33);
        assert!(a.has_night_flight);
        assert!(!a.has_day_flight);
        assert_eq!(a.first_flight_arr, (1305 + 260) % 1440);
        assert!(a.has_morning_arrival);
    }

    #[test]
    fn bucket_examples() {
        assert_eq!(bucket_t(-119), -120);
        assert_eq!(bucket_t(-120), -120);
        assert_eq!(bucket_t(-1), -10);
        assert_eq!(bucket_t(0), 0);
    }

    #[test]
    fn assembled_rows_and_missing_aggregates() {
        let fares = sample_fares();
        let bookings = vec![ItineraryRecord {
            od: "AMS-LHR".into(),
            airline_id: 4,
            dep_day_id: 1,
            dbd: -100,
            dep_time_mam: obs(4, -100, 0.0).dep_time_mam,
            travel_time: 5.0,
            price: 303.0,
            is_bought: true,
        }];
        let mut ctx = AssembleContext::default();
        ctx.airlines.insert(
            1,
            AirlineAggregates {
                rating_scores: [Some(4.0); 7],
                ..Default::default()
            },
        );
        let out = assemble_feature_vectors(&fares, &bookings, &ctx);
        assert_eq!(out.rows.len(), fares.len());
        assert_eq!(out.rows.iter().filter(|r| r.is_bought).count(), 1);
        let r = out.rows.iter().find(|r| r.key.airline_id == 2).unwrap();
        assert_eq!(r.get("rating_ife"), None);
        assert!(r.get("mkt_fare").is_some());
        assert!(r.get("dept_delta").is_some());
        let r1 = out.rows.iter().find(|r| r.key.airline_id == 1 && r.key.dbd == -100).unwrap();
        assert_eq!(r1.get("rating_ife"), Some(4.0));
        assert_eq!(r1.get("mean3d_yy"), Some(30.0));
        assert_eq!(r1.get("mean3d_zz"), Some(-25.0));
    }

    #[test]
    fn feature_csv_round_trip() {
        let out = assemble_feature_vectors(&sample_fares(), &[], &AssembleContext::default());
        let mut buf = Vec::new();
        write_feature_csv(&mut buf, &out.rows).unwrap();
        let back = read_feature_csv(buf.as_slice()).unwrap();
        assert_eq!(back, out.rows);
    }

    #[test]
    fn families() {
        assert_eq!(feature_family("mean3d_yy"), FeatureFamily::Pricing);
        assert_eq!(feature_family("mkt_fare_diff"), FeatureFamily::Pricing);
        assert_eq!(feature_family("dept_delta"), FeatureFamily::Schedule);
        assert_eq!(feature_family("has_evening_departure"), FeatureFamily::Schedule);
        assert_eq!(feature_family("rating_ife"), FeatureFamily::Product);
        assert_eq!(feature_family("bucket_t"), FeatureFamily::Other);
        for c in feature_columns() {
            let _ = feature_family(c);
        }
        assert_eq!(feature_columns().len(), 41 + 48 + 10);
    }

    fn market_strategy() -> impl Strategy<Value = Vec<FareObservation>> {
        proptest::collection::vec((1u32..5, -30i32..0, 50.0f64..900.0), 5..80).prop_map(|v| {
            let mut seen = HashSet::new();
            v.into_iter()
                .filter(|(a, d, _)| seen.insert((*a, *d)))
                .map(|(a, d, p)| obs(a, d, p.round()))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn strict_cheapest_has_zero_diff(fares in market_strategy()) {
            let out = assemble_feature_vectors(&fares, &[], &AssembleContext::default());
            prop_assert_eq!(out.rows.len(), fares.len());
            let panel = MarketPanel::from_observations(&fares);
            for r in &out.rows {
                let own = panel.airline_fare(r.key.airline_id, r.key.dbd).unwrap();
                let strict = panel
                    .airlines_at(r.key.dbd)
                    .filter(|&a| a != r.key.airline_id)
                    .all(|a| panel.airline_fare(a, r.key.dbd).unwrap() > own);
                if strict {
                    prop_assert_eq!(r.get("is_cheapest"), Some(1.0));
                    prop_assert_eq!(r.get("mkt_fare_diff"), Some(0.0));
                }
            }
        }

        #[test]
        fn window_stats_are_ordered(fares in market_strategy()) {
            let out = assemble_feature_vectors(&fares, &[], &AssembleContext::default());
            for r in &out.rows {
                for rf in Reference::ALL {
                    for w in WINDOWS {
                        let g = |s: &str| r.get(&format!("{s}{w}d_{}", rf.suffix()));
                        if let (Some(mean), Some(min), Some(max), Some(sd)) = (g("mean"), g("min"), g("max"), g("sd")) {
                            prop_assert!(min <= mean && mean <= max);
                            prop_assert!(sd >= 0.0);
                            prop_assert_eq!(sd == 0.0, min == max);
                        }
                    }
                }
            }
        }

        #[test]
        fn shift_and_scale_invariance(fares in market_strategy(), shift in -40.0f64..40.0, scale in 0.5f64..3.0) {
            let shift = shift.round();
            let base = assemble_feature_vectors(&fares, &[], &AssembleContext::default()).rows;
            let shifted_fares: Vec<_> = fares.iter().map(|f| FareObservation { price: f.price + shift + 50.0, ..f.clone() }).collect();
            let scaled_fares: Vec<_> = fares.iter().map(|f| FareObservation { price: f.price * scale, ..f.clone() }).collect();
            let shifted = assemble_feature_vectors(&shifted_fares, &[], &AssembleContext::default()).rows;
            let scaled = assemble_feature_vectors(&scaled_fares, &[], &AssembleContext::default()).rows;
            let diff_cols: Vec<usize> = feature_columns()
                .iter()
                .enumerate()
                .filter(|(_, n)| n.ends_with("_al") || n.ends_with("_yy") || n.ends_with("_zz") || *n == "mkt_fare_diff")
                .map(|(i, _)| i)
                .collect();
            for ((a, s), c) in base.iter().zip(&shifted).zip(&scaled) {
                for &j in &diff_cols {
                    match (a.values[j], s.values[j], c.values[j]) {
                        (Some(x), Some(y), Some(z)) => {
                            prop_assert!((x - y).abs() < 1e-6, "shift changed {}", feature_columns()[j]);
                            prop_assert!((x * scale - z).abs() < 1e-6 * (1.0 + x.abs() * scale), "scale broke {}", feature_columns()[j]);
                        }
                        (None, None, None) => {}
                        other => prop_assert!(false, "missingness changed: {:?}", other),
                    }
                }
            }
        }
    }
}
