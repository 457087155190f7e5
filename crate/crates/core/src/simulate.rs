//! Single-flight seat-inventory simulation.
//!
//! Each (OD, booking class) pair is a product. Products are ranked by fare
//! and protected with EMSR-b under Gaussian demand, giving nested booking
//! limits. Arrival streams are replayed against two policies built from
//! different forecasts, with the same streams for both (common random
//! numbers), with and without downsell.

use std::io::Write;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal, StudentsT};
use thiserror::Error;

pub const N_CLASSES: usize = 12;
/// Classes 1–3, 4–8 and 9–12, zero-based.
pub const BRANDS: [Range<usize>; 3] = [0..3, 3..8, 8..12];

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("history needs at least 2 points, got {0}")]
    ShortHistory(usize),
    #[error("smoothing constants must lie in (0, 1): alpha {alpha}, beta {beta}")]
    Smoothing { alpha: f64, beta: f64 },
    #[error("capacity must be positive")]
    NonPositiveCapacity,
    #[error("fares must be non-increasing by class: {0}")]
    UnorderedFares(String),
    #[error("no model forecast for covered OD {0}")]
    MissingModel(String),
    #[error("invalid scenario: {0}")]
    Scenario(String),
}

/// Holt linear-trend smoothing; returns the one-step-ahead forecast floored at 0.
pub fn des_forecast(history: &[f64], alpha: f64, beta: f64) -> Result<f64, SimError> {
    if history.len() < 2 {
        return Err(SimError::ShortHistory(history.len()));
    }
    if !(alpha > 0.0 && alpha < 1.0 && beta > 0.0 && beta < 1.0) {
        return Err(SimError::Smoothing { alpha, beta });
    }
    let mut level = history[0];
    let mut trend = history[1] - history[0];
    for &y in &history[1..] {
        let prev = level;
        level = alpha * y + (1.0 - alpha) * (level + trend);
        trend = beta * (level - prev) + (1.0 - beta) * trend;
    }
    Ok((level + trend).max(0.0))
}

/// Expected OD demand from per-itinerary purchase probabilities.
pub fn model_rollup_forecast(probabilities: &[f64]) -> f64 {
    probabilities.iter().sum()
}

/// Splits OD demand over classes: brand share, then uniform within brand.
pub fn allocate_to_classes(od_demand: f64, brand_mix: &[f64; 3]) -> [f64; N_CLASSES] {
    let mut out = [0.0; N_CLASSES];
    for (b, range) in BRANDS.iter().enumerate() {
        let per = od_demand * brand_mix[b] / range.len() as f64;
        for c in range.clone() {
            out[c] = per;
        }
    }
    out
}

pub fn brand_of(class: usize) -> usize {
    BRANDS.iter().position(|r| r.contains(&class)).expect("class in 0..12")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdScenario {
    pub name: String,
    /// Whether a trained purchase model covers this OD.
    pub covered: bool,
    /// Fares for classes 1..=12, most expensive first.
    pub fares: Vec<f64>,
    /// Demand shares of fare brands 1, 2, 3.
    pub brand_mix: [f64; 3],
    /// Expected requests per departure at demand factor 1.
    pub mean_demand: f64,
    /// Observed demand per past departure, oldest first.
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub capacity: u32,
    pub demand_factor_mean: f64,
    pub demand_factor_sd: f64,
    pub n_reps: u32,
    pub seed: u64,
    /// Coefficient of variation of class demand in the optimizer.
    pub class_cv: f64,
    /// Probability that a request arrives in its brand's time band
    /// (cheapest brand earliest) rather than uniformly.
    pub cheap_early_prob: f64,
    pub des_alpha: f64,
    pub des_beta: f64,
    /// Multiplier from summed purchase probabilities to flight demand.
    pub rollup_scale: f64,
    /// Departure day whose itineraries feed the model forecast.
    pub target_dep_day: i64,
    /// Airline operating the flight; its itineraries feed the model forecast.
    pub host_airline: u32,
    #[serde(rename = "od")]
    pub ods: Vec<OdScenario>,
}

impl SimScenario {
    /// Checks invariants and renormalizes brand mixes that do not sum to 1.
    pub fn validate(&mut self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Scenario(m));
        if self.capacity == 0 {
            return Err(SimError::NonPositiveCapacity);
        }
        if self.n_reps == 0 {
            return bad("n_reps must be >= 1".into());
        }
        if !(self.demand_factor_sd >= 0.0 && self.demand_factor_mean.is_finite()) {
            return bad("demand factor distribution is invalid".into());
        }
        if !(self.class_cv >= 0.0) || !(0.0..=1.0).contains(&self.cheap_early_prob) {
            return bad("class_cv or cheap_early_prob out of range".into());
        }
        if self.ods.is_empty() {
            return bad("no ODs".into());
        }
        for od in &mut self.ods {
            check_ladder(&od.name, &od.fares)?;
            let s: f64 = od.brand_mix.iter().sum();
            if od.brand_mix.iter().any(|&x| x < 0.0) || s <= 0.0 {
                return bad(format!("{}: brand mix must be nonnegative with positive sum", od.name));
            }
            if (s - 1.0).abs() > 1e-9 {
                log::info!("{}: brand mix sums to {s}, renormalized", od.name);
                for x in &mut od.brand_mix {
                    *x /= s;
                }
            }
            if !(od.mean_demand >= 0.0) {
                return bad(format!("{}: negative mean demand", od.name));
            }
        }
        Ok(())
    }

    pub fn covered_share(&self) -> f64 {
        let total: f64 = self.ods.iter().map(|o| o.mean_demand).sum();
        self.ods.iter().filter(|o| o.covered).map(|o| o.mean_demand).sum::<f64>() / total
    }

    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let mut s: SimScenario =
            toml::from_str(text).map_err(|e| SimError::Scenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }
}

fn check_ladder(name: &str, fares: &[f64]) -> Result<(), SimError> {
    if fares.len() != N_CLASSES {
        return Err(SimError::Scenario(format!("{name}: expected {N_CLASSES} fares")));
    }
    if fares.iter().any(|&f| !(f > 0.0 && f.is_finite())) {
        return Err(SimError::Scenario(format!("{name}: fares must be positive")));
    }
    if fares.windows(2).any(|w| w[1] > w[0]) {
        return Err(SimError::UnorderedFares(name.to_string()));
    }
    Ok(())
}

/// Nested protection levels and booking limits over fare-ranked products.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Policy {
    pub capacity: u32,
    /// `protection[j]` seats are held for products `0..=j`.
    pub protection: Vec<f64>,
    /// Maximum seats sold to products ranked `j` or lower in fare.
    pub booking_limits: Vec<u32>,
}

impl Policy {
    pub fn all_open(n_products: usize, capacity: u32) -> Self {
        Policy {
            capacity,
            protection: vec![0.0; n_products.saturating_sub(1)],
            booking_limits: vec![capacity; n_products],
        }
    }
}

/// EMSR-b. Products are ordered by non-increasing fare; demand for product
/// `j` is Normal(mean_j, (cv · mean_j)²).
pub fn optimize_policy(
    means: &[f64],
    fares: &[f64],
    capacity: u32,
    cv: f64,
) -> Result<Policy, SimError> {
    if capacity == 0 {
        return Err(SimError::NonPositiveCapacity);
    }
    if means.len() != fares.len() {
        return Err(SimError::Scenario("means and fares differ in length".into()));
    }
    if fares.windows(2).any(|w| w[1] > w[0]) {
        return Err(SimError::UnorderedFares(format!("{fares:?}")));
    }
    let sds: Vec<f64> = means.iter().map(|m| cv * m).collect();
    optimize_policy_with_sd(means, &sds, fares, capacity)
}

pub fn optimize_policy_with_sd(
    means: &[f64],
    sds: &[f64],
    fares: &[f64],
    capacity: u32,
) -> Result<Policy, SimError> {
    if capacity == 0 {
        return Err(SimError::NonPositiveCapacity);
    }
    let n = fares.len();
    let cap = capacity as f64;
    let z = StdNormal::standard();
    let mut protection = Vec::with_capacity(n.saturating_sub(1));
    let (mut mu, mut var, mut rev) = (0.0, 0.0, 0.0);
    let mut prev = 0.0f64;
    for j in 0..n.saturating_sub(1) {
        mu += means[j];
        var += sds[j] * sds[j];
        rev += fares[j] * means[j];
        let y = if mu <= 0.0 {
            0.0
        } else {
            let ratio = fares[j + 1] / (rev / mu);
            if ratio >= 1.0 {
                0.0
            } else if ratio <= 0.0 {
                cap
            } else {
                mu + var.sqrt() * z.inverse_cdf(1.0 - ratio)
            }
        };
        let y = y.clamp(0.0, cap).max(prev);
        prev = y;
        protection.push(y);
    }
    let mut booking_limits = vec![capacity];
    booking_limits.extend(protection.iter().map(|y| capacity - y.round() as u32));
    Ok(Policy {
        capacity,
        protection,
        booking_limits,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Product {
    pub od: usize,
    pub class: usize,
    pub fare: f64,
}

/// Fare-ranked products for a flight with the policy over them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlightPolicy {
    pub products: Vec<Product>,
    /// `rank[od][class]` is the product's index in `products`.
    pub rank: Vec<[usize; N_CLASSES]>,
    pub policy: Policy,
}

fn rank_products(ladders: &[&[f64]]) -> (Vec<Product>, Vec<[usize; N_CLASSES]>) {
    let mut products: Vec<Product> = ladders
        .iter()
        .enumerate()
        .flat_map(|(od, fares)| {
            fares.iter().enumerate().map(move |(class, &fare)| Product { od, class, fare })
        })
        .collect();
    products.sort_by(|a, b| {
        b.fare
            .total_cmp(&a.fare)
            .then(a.class.cmp(&b.class))
            .then(a.od.cmp(&b.od))
    });
    let mut rank = vec![[0; N_CLASSES]; ladders.len()];
    for (r, p) in products.iter().enumerate() {
        rank[p.od][p.class] = r;
    }
    (products, rank)
}

/// Builds the EMSR-b policy from per-OD class demand forecasts.
pub fn build_policy(scenario: &SimScenario, forecasts: &[[f64; N_CLASSES]]) -> Result<FlightPolicy, SimError> {
    let ladders: Vec<&[f64]> = scenario.ods.iter().map(|o| o.fares.as_slice()).collect();
    for o in &scenario.ods {
        check_ladder(&o.name, &o.fares)?;
    }
    let (products, rank) = rank_products(&ladders);
    let means: Vec<f64> = products.iter().map(|p| forecasts[p.od][p.class]).collect();
    let fares: Vec<f64> = products.iter().map(|p| p.fare).collect();
    let policy = optimize_policy(&means, &fares, scenario.capacity, scenario.class_cv)?;
    Ok(FlightPolicy {
        products,
        rank,
        policy,
    })
}

/// Policy that accepts every request while seats remain.
pub fn open_policy(scenario: &SimScenario, capacity: u32) -> FlightPolicy {
    let ladders: Vec<&[f64]> = scenario.ods.iter().map(|o| o.fares.as_slice()).collect();
    let (products, rank) = rank_products(&ladders);
    let n = products.len();
    FlightPolicy {
        products,
        rank,
        policy: Policy::all_open(n, capacity),
    }
}

/// Class forecasts for every OD: smoothing for all ODs (`Std`), and the same
/// with covered ODs replaced by the model roll-up (`XGB`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlightForecasts {
    pub std_od: Vec<f64>,
    pub xgb_od: Vec<f64>,
    pub std: Vec<[f64; N_CLASSES]>,
    pub xgb: Vec<[f64; N_CLASSES]>,
}

/// `rollups` gives summed purchase probabilities for each covered OD, by name.
pub fn flight_forecasts(
    scenario: &SimScenario,
    rollups: &std::collections::BTreeMap<String, f64>,
) -> Result<FlightForecasts, SimError> {
    let mut out = FlightForecasts {
        std_od: vec![],
        xgb_od: vec![],
        std: vec![],
        xgb: vec![],
    };
    for od in &scenario.ods {
        let des = des_forecast(&od.history, scenario.des_alpha, scenario.des_beta)?;
        let model = if od.covered {
            let p = rollups
                .get(&od.name)
                .ok_or_else(|| SimError::MissingModel(od.name.clone()))?;
            p * scenario.rollup_scale
        } else {
            des
        };
        out.std_od.push(des);
        out.xgb_od.push(model);
        out.std.push(allocate_to_classes(des, &od.brand_mix));
        out.xgb.push(allocate_to_classes(model, &od.brand_mix));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Request {
    /// Position in the booking horizon, in [0, 1).
    pub time: f64,
    pub od: usize,
    /// Willingness-to-pay class, zero-based.
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Arrivals {
    pub demand_factor: f64,
    pub requests: Vec<Request>,
}

fn pick_weighted<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Request stream for one replication. Each replication draws from its own
/// stream of the scenario seed, so streams are independent of run order.
pub fn generate_arrivals(scenario: &SimScenario, rep: u64) -> Arrivals {
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    rng.set_stream(rep);
    let df = Normal::new(scenario.demand_factor_mean, scenario.demand_factor_sd)
        .expect("validated demand factor")
        .sample(&mut rng);
    let n = (scenario.capacity as f64 * df.max(0.0)).round() as usize;
    let weights: Vec<f64> = scenario.ods.iter().map(|o| o.mean_demand).collect();
    let mut requests = Vec::with_capacity(n);
    for _ in 0..n {
        let od = pick_weighted(&mut rng, &weights);
        let brand = pick_weighted(&mut rng, &scenario.ods[od].brand_mix);
        let range = BRANDS[brand].clone();
        let class = rng.random_range(range);
        let u: f64 = rng.random();
        let time = if rng.random::<f64>() < scenario.cheap_early_prob {
            // Brand 3 books first, brand 1 last.
            ((2 - brand) as f64 + u) / 3.0
        } else {
            u
        };
        requests.push(Request { time, od, class });
    }
    requests.sort_by(|a, b| a.time.total_cmp(&b.time));
    Arrivals {
        demand_factor: df,
        requests,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayOutcome {
    pub revenue: f64,
    pub seats_sold: u32,
    /// (od, class sold) per accepted request, in arrival order.
    pub bookings: Vec<(usize, usize)>,
}

/// Sells against nested limits. Without downsell a request books its own
/// class if open; with downsell it books the cheapest open class of its OD
/// at or below its willingness.
pub fn replay(requests: &[Request], flight: &FlightPolicy, downsell: bool) -> ReplayOutcome {
    let n = flight.products.len();
    let limits = &flight.policy.booking_limits;
    let mut sold = vec![0u32; n];
    let mut total = 0u32;
    let mut revenue = 0.0;
    let mut bookings = Vec::new();
    let mut headroom = vec![0i64; n];
    for req in requests {
        if total >= flight.policy.capacity {
            continue;
        }
        // headroom[r] = min over q <= r of (limit_q − seats sold at ranks >= q).
        let mut suffix: i64 = total as i64;
        let mut running = i64::MAX;
        for r in 0..n {
            running = running.min(limits[r] as i64 - suffix);
            headroom[r] = running;
            suffix -= sold[r] as i64;
        }
        let open = |class: usize| headroom[flight.rank[req.od][class]] >= 1;
        let choice = if downsell {
            (req.class..N_CLASSES).rev().find(|&c| open(c))
        } else {
            open(req.class).then_some(req.class)
        };
        if let Some(c) = choice {
            let r = flight.rank[req.od][c];
            sold[r] += 1;
            total += 1;
            revenue += flight.products[r].fare;
            bookings.push((req.od, c));
        }
    }
    ReplayOutcome {
        revenue,
        seats_sold: total,
        bookings,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RepRecord {
    pub rep: u64,
    pub demand_factor: f64,
    pub n_requests: usize,
    pub std_revenue: f64,
    pub xgb_revenue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyComparison {
    pub downsell: bool,
    pub std_mean: f64,
    pub xgb_mean: f64,
    pub gain_pct: f64,
    pub diff_mean: f64,
    /// 95% confidence interval of the mean paired difference (XGB − Std).
    pub diff_ci: (f64, f64),
    pub reps: Vec<RepRecord>,
}

pub fn compare_policies(
    scenario: &SimScenario,
    std_policy: &FlightPolicy,
    xgb_policy: &FlightPolicy,
    downsell: bool,
) -> PolicyComparison {
    let reps: Vec<RepRecord> = (0..scenario.n_reps as u64)
        .into_par_iter()
        .map(|rep| {
            let a = generate_arrivals(scenario, rep);
            RepRecord {
                rep,
                demand_factor: a.demand_factor,
                n_requests: a.requests.len(),
                std_revenue: replay(&a.requests, std_policy, downsell).revenue,
                xgb_revenue: replay(&a.requests, xgb_policy, downsell).revenue,
            }
        })
        .collect();
    let n = reps.len() as f64;
    let std_mean = reps.iter().map(|r| r.std_revenue).sum::<f64>() / n;
    let xgb_mean = reps.iter().map(|r| r.xgb_revenue).sum::<f64>() / n;
    let diffs: Vec<f64> = reps.iter().map(|r| r.xgb_revenue - r.std_revenue).collect();
    let diff_mean = diffs.iter().sum::<f64>() / n;
    let diff_ci = if reps.len() > 1 {
        let sd = (diffs.iter().map(|d| (d - diff_mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let t = StudentsT::new(0.0, 1.0, n - 1.0)
            .expect("positive degrees of freedom")
            .inverse_cdf(0.975);
        let half = t * sd / n.sqrt();
        (diff_mean - half, diff_mean + half)
    } else {
        (diff_mean, diff_mean)
    };
    PolicyComparison {
        downsell,
        std_mean,
        xgb_mean,
        gain_pct: if std_mean != 0.0 {
            100.0 * (xgb_mean - std_mean) / std_mean
        } else {
            0.0
        },
        diff_mean,
        diff_ci,
        reps,
    }
}

/// Rows `downsell,std,xgb,gain_pct,diff_ci_low,diff_ci_high`.
pub fn write_revenue_table<W: Write>(writer: W, rows: &[PolicyComparison]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["downsell", "std", "xgb", "gain_pct", "diff_ci_low", "diff_ci_high"])?;
    for r in rows {
        w.write_record([
            if r.downsell { "Yes" } else { "No" }.to_string(),
            format!("{:.2}", r.std_mean),
            format!("{:.2}", r.xgb_mean),
            format!("{:.2}", r.gain_pct),
            format!("{:.2}", r.diff_ci.0),
            format!("{:.2}", r.diff_ci.1),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_replication_log<W: Write>(writer: W, rows: &[PolicyComparison]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["downsell", "rep", "demand_factor", "n_requests", "std_revenue", "xgb_revenue"])?;
    for r in rows {
        for rep in &r.reps {
            w.write_record([
                if r.downsell { "Yes" } else { "No" }.to_string(),
                rep.rep.to_string(),
                rep.demand_factor.to_string(),
                rep.n_requests.to_string(),
                rep.std_revenue.to_string(),
                rep.xgb_revenue.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
