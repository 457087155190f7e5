//! Itinerary purchase prediction from competitive pricing, schedule and
//! airline product features, with a seat-inventory revenue simulator.

pub mod ingest;
pub mod sentiment;
pub mod features;
pub mod dataset;
pub mod gbt;
pub mod logit;
pub mod explain;
pub mod evaluate;
pub mod simulate;
pub mod synth;
