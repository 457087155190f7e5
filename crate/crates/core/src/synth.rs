//! Synthetic markets with planted purchase behaviour.
//!
//! A shared pool of airlines gets reviews, tweets, a safety score and a
//! fleet. Each OD market gets mean-reverting fare walks per airline and
//! departure day, and purchase labels drawn from a logistic model in the
//! engineered features whose dominant term depends on the archetype:
//!
//! * price: becoming the cheapest airline after trailing the cheapest fare
//!   over the past week;
//! * schedule: departing 1 to 4 hours away from 06:00;
//! * comfort: on connecting itineraries, a strong in-flight entertainment
//!   rating attracts buyers and a weak one repels them.
//!
//! The intercept is found by bisection so the expected purchase share hits
//! the target. The standard fixture also builds a single-flight scenario in
//! which the host airline raises its fares on the last departure day, so
//! its booking history overstates demand for that day.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{
    assemble_feature_vectors, build_airline_aggregates, feature_family, AirlineSources,
    Assembled, AssembleContext, FeatureFamily, FeatureVector,
};
use crate::gbt::sigmoid;
use crate::ingest::{
    write_dataset, FareObservation, FleetRecord, ItineraryRecord, Record, ReviewRecord,
    ReviewScores, SafetyRecord, TweetRecord,
};
use crate::sentiment::Lexicon;
use crate::simulate::{OdScenario, SimScenario};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    Spec(String),
    #[error("{od}: intercept search did not reach prevalence {target}")]
    Calibration { od: String, target: f64 },
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Ingest(#[from] crate::ingest::IngestError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    Price,
    Schedule,
    Comfort,
}

impl Archetype {
    /// Feature family the planted signal lives in.
    pub fn family(self) -> FeatureFamily {
        match self {
            Archetype::Price => FeatureFamily::Pricing,
            Archetype::Schedule => FeatureFamily::Schedule,
            Archetype::Comfort => FeatureFamily::Product,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeSpec {
    pub od: String,
    pub archetype: Archetype,
    pub n_airlines: usize,
    pub n_departure_days: usize,
    /// Inclusive range of days before departure, both negative.
    pub dbd_min: i32,
    pub dbd_max: i32,
    /// Coefficient of the dominant term in the label model.
    pub signal: f64,
    /// Daily volatility of the log-fare walk.
    pub noise_scale: f64,
    pub target_prevalence: f64,
    pub base_fare: f64,
    /// Fastest travel time in hours.
    pub base_travel_time: f64,
}

impl ArchetypeSpec {
    pub fn new(od: &str, archetype: Archetype, n_airlines: usize, base_fare: f64, base_travel_time: f64) -> Self {
        ArchetypeSpec {
            od: od.to_string(),
            archetype,
            n_airlines,
            n_departure_days: 20,
            dbd_min: -60,
            dbd_max: -1,
            signal: 4.0,
            noise_scale: 0.06,
            target_prevalence: 0.203,
            base_fare,
            base_travel_time,
        }
    }

    pub fn validate(&self, pool: usize) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Spec(format!("{}: {m}", self.od)));
        if self.n_airlines < 2 || self.n_airlines > pool {
            return bad("n_airlines must be at least 2 and fit the airline pool");
        }
        if self.n_departure_days < 2 {
            return bad("need at least 2 departure days");
        }
        if !(self.dbd_min < self.dbd_max && self.dbd_max <= 0) {
            return bad("dbd range must be increasing and non-positive");
        }
        if !(self.target_prevalence > 0.0 && self.target_prevalence < 1.0) {
            return bad("target prevalence must lie in (0, 1)");
        }
        if !(self.base_fare > 0.0 && self.base_travel_time > 0.0 && self.noise_scale >= 0.0) {
            return bad("base fare, travel time and noise must be positive");
        }
        if crate::ingest::od_endpoints(&self.od).is_none() {
            return bad("od must look like AAA-BBB");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveredOd {
    pub od: String,
    pub fares: Vec<f64>,
    pub brand_mix: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncoveredOd {
    pub name: String,
    pub fares: Vec<f64>,
    pub brand_mix: [f64; 3],
    /// Relative share of the uncovered demand.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightSpec {
    pub capacity: u32,
    /// Share of expected flight demand from covered ODs.
    pub covered_share: f64,
    pub host_airline: u32,
    /// Multiplier on the host's fares on the last departure day.
    pub host_fare_factor: f64,
    pub n_reps: u32,
    pub demand_factor_mean: f64,
    pub demand_factor_sd: f64,
    pub covered: Vec<CoveredOd>,
    pub uncovered: Vec<UncoveredOd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_pool_airlines: u32,
    pub markets: Vec<ArchetypeSpec>,
    pub flight: Option<FlightSpec>,
}

const COVERED_FARES: [[f64; 12]; 4] = [
    [2324.0, 1913.0, 1672.0, 1152.0, 1081.0, 966.0, 871.0, 706.0, 660.0, 498.0, 494.0, 447.0],
    [2489.0, 2078.0, 1995.0, 1707.0, 1462.0, 1363.0, 1187.0, 1009.0, 774.0, 553.0, 534.0, 474.0],
    [1904.0, 1621.0, 1323.0, 1094.0, 1091.0, 962.0, 922.0, 737.0, 682.0, 622.0, 495.0, 311.0],
    [2509.0, 2043.0, 1452.0, 1420.0, 1035.0, 762.0, 700.0, 523.0, 449.0, 374.0, 311.0, 206.0],
];
const COVERED_MIX: [[f64; 3]; 4] = [
    [0.05, 0.30, 0.65],
    [0.10, 0.18, 0.70],
    [0.02, 0.46, 0.40],
    [0.12, 0.20, 0.59],
];

impl SynthConfig {
    /// Ten OD markets with 2 to 9 competitors each and a flight through the
    /// four price-sensitive markets.
    pub fn standard() -> Self {
        use Archetype::*;
        let markets = vec![
            ArchetypeSpec::new("AMS-DXB", Price, 7, 550.0, 6.5),
            ArchetypeSpec::new("AMS-LHR", Schedule, 4, 180.0, 0.9),
            ArchetypeSpec::new("AMS-SYD", Comfort, 5, 1400.0, 21.5),
            ArchetypeSpec::new("CDG-SYD", Comfort, 4, 1450.0, 22.0),
            ArchetypeSpec::new("FRA-SYD", Price, 9, 1300.0, 21.0),
            ArchetypeSpec::new("FRA-KUL", Price, 6, 800.0, 12.0),
            ArchetypeSpec::new("FRA-MEL", Comfort, 5, 1350.0, 22.5),
            ArchetypeSpec::new("KUL-SIN", Price, 2, 90.0, 1.0),
            ArchetypeSpec::new("LHR-JFK", Schedule, 2, 600.0, 8.0),
            ArchetypeSpec::new("LHR-SYD", Comfort, 5, 1500.0, 22.0),
        ];
        let covered = ["AMS-DXB", "FRA-SYD", "FRA-KUL", "KUL-SIN"]
            .iter()
            .zip(COVERED_FARES.iter().zip(COVERED_MIX.iter()))
            .map(|(od, (f, m))| CoveredOd {
                od: od.to_string(),
                fares: f.to_vec(),
                brand_mix: *m,
            })
            .collect();
        let uncovered = [("AMS-BKK", 1.1, [0.06, 0.30, 0.64], 0.4), ("AMS-HKG", 0.9, [0.08, 0.25, 0.67], 0.35), ("AMS-NRT", 1.25, [0.10, 0.30, 0.60], 0.25)]
            .iter()
            .map(|(name, scale, mix, w)| UncoveredOd {
                name: name.to_string(),
                fares: COVERED_FARES[0].iter().map(|f| (f * scale).round()).collect(),
                brand_mix: *mix,
                weight: *w,
            })
            .collect();
        SynthConfig {
            seed: 20_190_101,
            n_pool_airlines: 14,
            markets,
            flight: Some(FlightSpec {
                capacity: 150,
                covered_share: 0.42,
                host_airline: 1,
                host_fare_factor: 1.25,
                n_reps: 500,
                demand_factor_mean: 0.98,
                demand_factor_sd: 0.1,
                covered,
                uncovered,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub fares: Vec<FareObservation>,
    pub bookings: Vec<ItineraryRecord>,
    pub reviews: Vec<ReviewRecord>,
    pub tweets: Vec<TweetRecord>,
    pub safety: Vec<SafetyRecord>,
    pub fleet: Vec<FleetRecord>,
    /// True purchase probability of each fare row.
    pub purchase_probability: Vec<f64>,
    pub markets: Vec<ArchetypeSpec>,
    pub scenario: Option<SimScenario>,
}

/// Airline aggregates from the bundled lexicon, with safety codes equal to
/// airline ids and no hub map.
fn context(
    reviews: &[ReviewRecord],
    tweets: &[TweetRecord],
    safety: &[SafetyRecord],
    fleet: &[FleetRecord],
) -> AssembleContext {
    let lexicon = Lexicon::bundled();
    let filtered = crate::ingest::filter_tweets(tweets.iter().cloned());
    AssembleContext {
        airlines: build_airline_aggregates(AirlineSources {
            reviews,
            tweets: &filtered,
            safety,
            fleet,
            lexicon: &lexicon,
            airline_codes: &BTreeMap::new(),
            site_scores: &BTreeMap::new(),
        }),
        hubs: BTreeMap::new(),
    }
}

impl SynthCorpus {
    pub fn context(&self) -> AssembleContext {
        context(&self.reviews, &self.tweets, &self.safety, &self.fleet)
    }

    /// Feature rows for every fare, labelled from the bookings.
    pub fn assemble(&self) -> Assembled {
        assemble_feature_vectors(&self.fares, &self.bookings, &self.context())
    }

    pub fn market_of(&self, od: &str) -> Option<&ArchetypeSpec> {
        self.markets.iter().find(|m| m.od == od)
    }
}

#[derive(Debug, Clone)]
struct Airline {
    id: u32,
    quality: f64,
    ife_high: bool,
}

const POSITIVE: &[&str] = &[
    "excellent", "great", "comfortable", "friendly", "amazing", "good", "helpful", "love", "wonderful",
    "perfect", "pleasant", "delicious", "recommend", "outstanding", "nice",
];
const NEGATIVE: &[&str] = &[
    "delayed", "rude", "terrible", "uncomfortable", "dirty", "poor", "disappointed", "awful", "worst",
    "bad", "horrible", "stuck", "misleading", "limited",
];
const NEUTRAL: &[&str] = &[
    "flight", "seat", "crew", "food", "cabin", "boarding", "legroom", "meal", "service", "airport",
    "gate", "lounge", "trip", "screen", "movies", "journey",
];
const WIDE: &[&str] = &["77W", "788", "789", "359", "333", "388", "744"];
const NARROW: &[&str] = &["320", "321", "738", "739", "E90", "319"];

fn pool(rng: &mut ChaCha8Rng, n: u32) -> Vec<Airline> {
    (1..=n)
        .map(|id| Airline {
            id,
            quality: rng.random_range(0.15..0.95),
            ife_high: id % 2 == 0,
        })
        .collect()
}

fn sentence(rng: &mut ChaCha8Rng, quality: f64, words: usize) -> String {
    let mut out = Vec::with_capacity(words);
    for _ in 0..words {
        let u: f64 = rng.random();
        let w = if u < 0.45 {
            NEUTRAL.choose(rng).unwrap()
        } else if rng.random::<f64>() < quality {
            POSITIVE.choose(rng).unwrap()
        } else {
            NEGATIVE.choose(rng).unwrap()
        };
        out.push(*w);
    }
    out.join(" ")
}

fn score(rng: &mut ChaCha8Rng, level: f64) -> u8 {
    let noise = Normal::new(0.0, 0.8).unwrap().sample(rng);
    (1.0 + 4.0 * level + noise).round().clamp(1.0, 5.0) as u8
}

fn airline_datasets(
    rng: &mut ChaCha8Rng,
    airlines: &[Airline],
) -> (Vec<ReviewRecord>, Vec<TweetRecord>, Vec<SafetyRecord>, Vec<FleetRecord>) {
    let mut reviews = Vec::new();
    let mut tweets = Vec::new();
    let mut fleet = Vec::new();
    let mut safety_scores = Vec::new();
    let mut review_id = 1000u64;
    for a in airlines {
        for _ in 0..40 {
            let ife_level = if a.ife_high { 0.85 } else { 0.3 };
            let n_words = rng.random_range(8..20);
            reviews.push(ReviewRecord {
                id: review_id,
                airline_id: a.id,
                recommended: rng.random::<f64>() < a.quality,
                review_text: sentence(rng, a.quality, n_words),
                scores: ReviewScores {
                    fb: score(rng, a.quality),
                    ground: score(rng, a.quality),
                    ife: score(rng, ife_level),
                    crew: score(rng, a.quality),
                    seat: score(rng, a.quality),
                    value: score(rng, a.quality),
                    wifi: score(rng, a.quality * 0.8),
                },
            });
            review_id += rng.random_range(1..4);
        }
        for _ in 0..60 {
            let n_words = rng.random_range(4..12);
            let lang = if rng.random::<f64>() < 0.85 { "en" } else { ["nl", "de", "fr"].choose(rng).unwrap() };
            tweets.push(TweetRecord {
                airline_id: a.id,
                text: format!("@airline{} {}", a.id, sentence(rng, a.quality, n_words)),
                is_retweet: rng.random::<f64>() < 0.1,
                is_reply: rng.random::<f64>() < 0.1,
                language_tag: lang.to_string(),
            });
        }
        let n_aircraft = rng.random_range(8..40);
        let wide_share: f64 = rng.random_range(0.1..0.9);
        for k in 0..n_aircraft {
            let wide = rng.random::<f64>() < wide_share;
            let ty = if wide { WIDE.choose(rng).unwrap() } else { NARROW.choose(rng).unwrap() };
            fleet.push(FleetRecord {
                airline_id: a.id,
                aircraft_type: ty.to_string(),
                aircraft_cost: if wide { rng.random_range(150.0..380.0f64) } else { rng.random_range(40.0..120.0f64) }.round(),
                registration: format!("X{:02}-{:03}", a.id, k),
                aircraft_age: (rng.random_range(0.5..22.0f64) * 10.0).round() / 10.0,
            });
        }
        let s = (3.0 + 4.0 * a.quality + Normal::new(0.0, 0.3).unwrap().sample(rng)).clamp(0.0, 7.0);
        safety_scores.push((a.id, (s * 10.0).round() / 10.0));
    }
    safety_scores.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let safety = safety_scores
        .iter()
        .enumerate()
        .map(|(r, (id, s))| SafetyRecord {
            rank: r as u32 + 1,
            airline_code: id.to_string(),
            score: *s,
        })
        .collect();
    (reviews, tweets, safety, fleet)
}

struct FareShift {
    host: u32,
    day: i64,
    factor: f64,
}

fn choose_airlines(
    rng: &mut ChaCha8Rng,
    spec: &ArchetypeSpec,
    airlines: &[Airline],
    must_include: Option<u32>,
) -> Vec<u32> {
    let mut ids: Vec<u32> = airlines.iter().map(|a| a.id).collect();
    ids.retain(|&id| Some(id) != must_include);
    ids.shuffle(rng);
    let mut chosen: Vec<u32> = must_include.into_iter().collect();
    chosen.extend(ids.into_iter().take(spec.n_airlines - chosen.len()));
    if spec.archetype == Archetype::Comfort {
        // About a third of a comfort market offers strong entertainment.
        let high = |id: &u32| airlines[*id as usize - 1].ife_high;
        let want = (spec.n_airlines / 3).max(1);
        let mut highs: Vec<u32> = airlines.iter().map(|a| a.id).filter(high).collect();
        let mut lows: Vec<u32> = airlines.iter().map(|a| a.id).filter(|id| !high(id)).collect();
        highs.shuffle(rng);
        lows.shuffle(rng);
        if highs.len() >= want && lows.len() >= spec.n_airlines - want {
            chosen = highs[..want].iter().chain(&lows[..spec.n_airlines - want]).copied().collect();
        }
    }
    chosen.sort_unstable();
    chosen
}

fn draw_fares(
    rng: &mut ChaCha8Rng,
    spec: &ArchetypeSpec,
    airline_ids: &[u32],
    shift: Option<&FareShift>,
) -> Vec<FareObservation> {
    let long_haul = spec.base_travel_time > 4.0;
    let eps = Normal::new(0.0, 1.0).unwrap();
    let mut out = Vec::new();
    // (airline, fare level, share of connecting itineraries, itineraries per day)
    let profiles: Vec<(u32, f64, f64, usize)> = airline_ids
        .iter()
        .map(|&id| {
            let level = rng.random_range(0.88..1.12f64);
            let conn_share = if long_haul { rng.random_range(0.3..0.8f64) } else { 0.0 };
            (id, level, conn_share, rng.random_range(1..=3usize))
        })
        .collect();
    for day in 1..=spec.n_departure_days as i64 {
        for (a, &(id, level, conn_share, n_itin)) in profiles.iter().enumerate() {
            let mut slots: BTreeSet<u32> = BTreeSet::new();
            while slots.len() < n_itin {
                slots.insert(rng.random_range(48..=276u32) * 5);
            }
            let day_level = level * rng.random_range(0.92..1.08f64);
            let shift = match shift {
                Some(p) if p.host == id && p.day == day => p.factor,
                _ => 1.0,
            };
            let mut x = 0.0f64;
            let mut walk = Vec::new();
            for dbd in spec.dbd_min..=spec.dbd_max {
                x = 0.85 * x + spec.noise_scale * eps.sample(rng);
                let rise = 1.0 + 0.4 * ((dbd + 21) as f64 / 21.0).max(0.0);
                walk.push((dbd, spec.base_fare * day_level * rise * x.exp() * shift));
            }
            for (k, &dep) in slots.iter().enumerate() {
                // The first airline's first itinerary is non-stop, so the
                // fastest time exists every day.
                let conn = if (a == 0 && k == 0) || rng.random::<f64>() >= conn_share {
                    0.0
                } else {
                    rng.random_range(1.5..6.0f64)
                };
                let tt = spec.base_travel_time + conn + 0.15 * k as f64;
                for &(dbd, fare) in &walk {
                    out.push(FareObservation {
                        od: spec.od.clone(),
                        airline_id: id,
                        dep_day_id: day,
                        dbd,
                        dep_time_mam: dep,
                        travel_time: (tt * 100.0).round() / 100.0,
                        price: (fare * (1.0 + 0.03 * k as f64)).round().max(1.0),
                    });
                }
            }
        }
    }
    out.sort_by(|a, b| {
        (a.dep_day_id, a.dbd, a.airline_id, a.dep_time_mam).cmp(&(b.dep_day_id, b.dbd, b.airline_id, b.dep_time_mam))
    });
    out
}

/// Score of the planted label model before the intercept.
pub fn planted_score(archetype: Archetype, signal: f64, fv: &FeatureVector) -> f64 {
    let cheap = fv.get("mkt_fare_diff_perc").is_some_and(|d| d <= 0.01);
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    match archetype {
        Archetype::Price => {
            let trailed = match (fv.get("mean7d_yy"), fv.get("price")) {
                (Some(y), Some(p)) => y / p >= 0.03,
                _ => false,
            };
            signal * flag(cheap && trailed)
        }
        Archetype::Schedule => {
            let band = fv.get("dept_delta").is_some_and(|d| (60.0..=240.0).contains(&d));
            signal * flag(band) + 0.8 * flag(cheap)
        }
        Archetype::Comfort => {
            let ife = fv.get("rating_ife").is_some_and(|r| r >= 4.0);
            let connecting = fv.get("tt_delta").is_some_and(|t| t > 1.0);
            signal * flag(ife && connecting) - 0.5 * signal * flag(!ife && connecting) + 0.8 * flag(cheap)
        }
    }
}

/// Intercept such that the mean of `sigmoid(b + s)` equals `target`.
pub fn calibrate_intercept(scores: &[f64], target: f64) -> Option<f64> {
    let mean_p = |b: f64| scores.iter().map(|s| sigmoid(b + s)).sum::<f64>() / scores.len() as f64;
    let (mut lo, mut hi) = (-40.0, 40.0);
    if scores.is_empty() || mean_p(lo) > target || mean_p(hi) < target {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_p(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let b = 0.5 * (lo + hi);
    ((mean_p(b) - target).abs() < 1e-6).then_some(b)
}

fn booking_price(rng: &mut ChaCha8Rng, fare: f64) -> f64 {
    let err = if rng.random::<f64>() < 0.93 {
        rng.random_range(-0.009..0.009)
    } else {
        let e = rng.random_range(0.011..0.08);
        if rng.random::<bool>() { e } else { -e }
    };
    ((fare * (1.0 + err)) * 100.0).round() / 100.0
}

struct MarketOut {
    fares: Vec<FareObservation>,
    probability: Vec<f64>,
    labels: Vec<bool>,
    bookings: Vec<ItineraryRecord>,
}

fn generate_od(
    rng: &mut ChaCha8Rng,
    spec: &ArchetypeSpec,
    airlines: &[Airline],
    ctx: &AssembleContext,
    host: Option<u32>,
    shift: Option<&FareShift>,
) -> Result<MarketOut, SynthError> {
    let ids = choose_airlines(rng, spec, airlines, host);
    let fares = draw_fares(rng, spec, &ids, shift);
    let rows = assemble_feature_vectors(&fares, &[], ctx).rows;
    let scores: Vec<f64> = rows
        .iter()
        .map(|fv| planted_score(spec.archetype, spec.signal, fv))
        .collect();
    let b0 = calibrate_intercept(&scores, spec.target_prevalence).ok_or_else(|| SynthError::Calibration {
        od: spec.od.clone(),
        target: spec.target_prevalence,
    })?;
    let probability: Vec<f64> = scores.iter().map(|s| sigmoid(b0 + s)).collect();
    let labels: Vec<bool> = probability.iter().map(|&p| rng.random::<f64>() < p).collect();
    let bookings = fares
        .iter()
        .zip(&labels)
        .filter(|(_, &l)| l)
        .map(|(f, _)| ItineraryRecord {
            od: f.od.clone(),
            airline_id: f.airline_id,
            dep_day_id: f.dep_day_id,
            dbd: f.dbd,
            dep_time_mam: f.dep_time_mam,
            travel_time: f.travel_time,
            price: booking_price(rng, f.price),
            is_bought: true,
        })
        .collect();
    Ok(MarketOut {
        fares,
        probability,
        labels,
        bookings,
    })
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Fare rows, true purchase probabilities and labels per covered OD.
type CoveredRows = BTreeMap<String, (Vec<FareObservation>, Vec<f64>, Vec<bool>)>;

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus, SynthError> {
    for m in &config.markets {
        m.validate(config.n_pool_airlines as usize)?;
    }
    let ods: BTreeSet<&str> = config.markets.iter().map(|m| m.od.as_str()).collect();
    if ods.len() != config.markets.len() {
        return Err(SynthError::Spec("OD names must be distinct".into()));
    }
    let mut rng = stream(config.seed, 0);
    let airlines = pool(&mut rng, config.n_pool_airlines);
    let (reviews, tweets, safety, fleet) = airline_datasets(&mut rng, &airlines);

    let ctx = context(&reviews, &tweets, &safety, &fleet);

    let covered: BTreeSet<&str> = config
        .flight
        .iter()
        .flat_map(|f| f.covered.iter().map(|c| c.od.as_str()))
        .collect();
    for c in &covered {
        if !ods.contains(c) {
            return Err(SynthError::Spec(format!("covered OD {c} has no market")));
        }
    }

    let mut corpus = SynthCorpus {
        fares: vec![],
        bookings: vec![],
        reviews,
        tweets,
        safety,
        fleet,
        purchase_probability: vec![],
        markets: config.markets.clone(),
        scenario: None,
    };
    let mut covered_out: CoveredRows = BTreeMap::new();
    for (k, spec) in config.markets.iter().enumerate() {
        let mut rng = stream(config.seed, k as u64 + 1);
        let flight = config.flight.as_ref().filter(|_| covered.contains(spec.od.as_str()));
        let shift = flight.map(|f| FareShift {
            host: f.host_airline,
            day: spec.n_departure_days as i64,
            factor: f.host_fare_factor,
        });
        let out = generate_od(&mut rng, spec, &airlines, &ctx, flight.map(|f| f.host_airline), shift.as_ref())?;
        if flight.is_some() {
            covered_out.insert(spec.od.clone(), (out.fares.clone(), out.probability.clone(), out.labels.clone()));
        }
        corpus.fares.extend(out.fares);
        corpus.purchase_probability.extend(out.probability);
        corpus.bookings.extend(out.bookings);
    }

    if let Some(f) = &config.flight {
        let mut rng = stream(config.seed, 10_000);
        corpus.scenario = Some(flight_scenario(&mut rng, config, f, &covered_out)?);
    }
    Ok(corpus)
}

/// Single-market corpus with its own airline pool.
pub fn generate_market(spec: &ArchetypeSpec, seed: u64) -> Result<SynthCorpus, SynthError> {
    generate(&SynthConfig {
        seed,
        n_pool_airlines: (spec.n_airlines as u32 + 4).max(8),
        markets: vec![spec.clone()],
        flight: None,
    })
}

fn flight_scenario(
    rng: &mut ChaCha8Rng,
    config: &SynthConfig,
    f: &FlightSpec,
    covered: &CoveredRows,
) -> Result<SimScenario, SynthError> {
    if !(f.covered_share > 0.0 && f.covered_share < 1.0) || f.capacity == 0 {
        return Err(SynthError::Spec("flight capacity and covered share must be valid".into()));
    }
    let cap = f.capacity as f64;
    let mut truth = Vec::new();
    let mut histories = Vec::new();
    let mut target_day = 0;
    for c in &f.covered {
        let spec = config.markets.iter().find(|m| m.od == c.od).unwrap();
        let last = spec.n_departure_days as i64;
        target_day = last;
        let (fares, probs, labels) = &covered[&c.od];
        let mut expected = 0.0;
        let mut booked = vec![0.0; spec.n_departure_days];
        for ((fo, p), l) in fares.iter().zip(probs).zip(labels) {
            if fo.airline_id != f.host_airline {
                continue;
            }
            if fo.dep_day_id == last {
                expected += p;
            } else if *l {
                booked[(fo.dep_day_id - 1) as usize] += 1.0;
            }
        }
        booked.pop();
        truth.push(expected);
        histories.push(booked);
    }
    let covered_total: f64 = truth.iter().sum();
    if covered_total <= 0.0 {
        return Err(SynthError::Spec("host has no expected demand on covered ODs".into()));
    }
    let kappa = f.covered_share * cap / covered_total;
    let mut ods: Vec<OdScenario> = f
        .covered
        .iter()
        .zip(truth.iter().zip(&histories))
        .map(|(c, (t, h))| OdScenario {
            name: c.od.clone(),
            covered: true,
            fares: c.fares.clone(),
            brand_mix: c.brand_mix,
            mean_demand: kappa * t,
            history: h.iter().map(|b| kappa * b).collect(),
        })
        .collect();
    let w_total: f64 = f.uncovered.iter().map(|u| u.weight).sum();
    let noise = Normal::new(0.0, 0.1).unwrap();
    let n_hist = histories.first().map_or(19, Vec::len);
    for u in &f.uncovered {
        let mean = (1.0 - f.covered_share) * cap * u.weight / w_total;
        let history = (0..n_hist)
            .map(|_| (mean * (1.0 + noise.sample(rng))).max(0.0))
            .collect();
        ods.push(OdScenario {
            name: u.name.clone(),
            covered: false,
            fares: u.fares.clone(),
            brand_mix: u.brand_mix,
            mean_demand: mean,
            history,
        });
    }
    let mut s = SimScenario {
        capacity: f.capacity,
        demand_factor_mean: f.demand_factor_mean,
        demand_factor_sd: f.demand_factor_sd,
        n_reps: f.n_reps,
        seed: config.seed ^ 0x5eed,
        class_cv: 0.3,
        cheap_early_prob: 0.7,
        des_alpha: 0.3,
        des_beta: 0.1,
        rollup_scale: kappa,
        target_dep_day: target_day,
        host_airline: f.host_airline,
        ods,
    };
    s.validate().map_err(|e| SynthError::Spec(e.to_string()))?;
    Ok(s)
}

pub fn standard_fixture() -> SynthCorpus {
    generate(&SynthConfig::standard()).expect("standard fixture generates")
}

fn encode<T: Record>(records: &[T], header: Option<&str>) -> Result<(String, Vec<u8>), SynthError> {
    let mut buf = Vec::new();
    if let Some(h) = header {
        writeln!(buf, "# {h}")?;
    }
    write_dataset(&mut buf, records)?;
    Ok((T::KIND.file_name().to_string(), buf))
}

/// File names and contents of the six datasets and, when present,
/// `scenario.toml`. An optional header becomes a leading `#` comment line.
pub fn corpus_files(corpus: &SynthCorpus, header: Option<&str>) -> Result<Vec<(String, Vec<u8>)>, SynthError> {
    let mut files = vec![
        encode(&corpus.bookings, header)?,
        encode(&corpus.fares, header)?,
        encode(&corpus.reviews, header)?,
        encode(&corpus.tweets, header)?,
        encode(&corpus.safety, header)?,
        encode(&corpus.fleet, header)?,
    ];
    if let Some(s) = &corpus.scenario {
        let mut text = String::new();
        if let Some(h) = header {
            text.push_str(&format!("# {h}\n"));
        }
        text.push_str(&s.to_toml());
        files.push(("scenario.toml".into(), text.into_bytes()));
    }
    Ok(files)
}

pub fn write_corpus(dir: &Path, corpus: &SynthCorpus, header: Option<&str>) -> Result<(), SynthError> {
    fs::create_dir_all(dir)?;
    for (name, bytes) in corpus_files(corpus, header)? {
        fs::write(dir.join(name), bytes)?;
    }
    Ok(())
}

/// Names of the top `k` gain features and whether any belongs to `family`.
pub fn family_in_top(gain: &[crate::gbt::GainEntry], family: FeatureFamily, k: usize) -> bool {
    gain.iter().take(k).any(|e| feature_family(&e.feature) == family)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluate::prevalence;
    use crate::ingest::{parse_reader, Record};

    #[test]
    fn calibration_hits_target() {
        let scores: Vec<f64> = (0..100).map(|i| if i % 5 == 0 { 4.0 } else { 0.0 }).collect();
        let b = calibrate_intercept(&scores, 0.203).unwrap();
        let m = scores.iter().map(|s| sigmoid(b + s)).sum::<f64>() / 100.0;
        assert!((m - 0.203).abs() < 1e-6);
        assert!(calibrate_intercept(&[], 0.2).is_none());
    }

    #[test]
    fn spec_validation() {
        let mut s = ArchetypeSpec::new("AMS-LHR", Archetype::Schedule, 1, 100.0, 1.0);
        assert!(s.validate(10).is_err());
        s.n_airlines = 3;
        assert!(s.validate(10).is_ok());
        s.target_prevalence = 1.0;
        assert!(s.validate(10).is_err());
    }

    fn round_trip<T: Record + PartialEq + std::fmt::Debug>(records: &[T]) {
        let mut buf = Vec::new();
        write_dataset(&mut buf, records).unwrap();
        let back = parse_reader::<T, _>(buf.as_slice()).unwrap();
        assert_eq!(back.rejected(), 0, "{}", back.rejection_report());
        assert_eq!(back.accepted(), records.len());
    }

    #[test]
    fn market_files_parse_cleanly() {
        let spec = ArchetypeSpec {
            n_departure_days: 4,
            ..ArchetypeSpec::new("LHR-JFK", Archetype::Schedule, 3, 600.0, 8.0)
        };
        let c = generate_market(&spec, 7).unwrap();
        round_trip(&c.fares);
        round_trip(&c.bookings);
        round_trip(&c.reviews);
        round_trip(&c.tweets);
        round_trip(&c.safety);
        round_trip(&c.fleet);
        assert!(c.fares.iter().all(|f| f.price > 0.0));
        let labels: Vec<bool> = {
            let keys: BTreeSet<_> = c.bookings.iter().map(|b| b.key()).collect();
            c.fares.iter().map(|f| keys.contains(&f.key())).collect()
        };
        let p = prevalence(&labels).unwrap();
        assert!((0.15..0.26).contains(&p), "{p}");
        assert_eq!(generate_market(&spec, 7).unwrap(), c);
    }
}
