use std::collections::{BTreeMap, BTreeSet};

use fareboost::ingest::{
    parse_reader, FareObservation, FleetRecord, ItineraryRecord, Record, ReviewRecord, SafetyRecord,
    TweetRecord,
};
use fareboost::simulate::SimScenario;
use fareboost::synth::{corpus_files, generate, standard_fixture, SynthConfig};

#[test]
fn fixture_is_deterministic() {
    let a = standard_fixture();
    let b = generate(&SynthConfig::standard()).unwrap();
    assert_eq!(a, b);
    let mut other = SynthConfig::standard();
    other.seed += 1;
    assert_ne!(generate(&other).unwrap().fares, a.fares);
}

#[test]
fn competitor_counts_span_two_to_nine() {
    let c = standard_fixture();
    let mut per_od: BTreeMap<&str, BTreeSet<u32>> = BTreeMap::new();
    for f in &c.fares {
        per_od.entry(&f.od).or_default().insert(f.airline_id);
    }
    let mut counts: Vec<usize> = per_od.values().map(BTreeSet::len).collect();
    counts.sort();
    assert_eq!(counts, [2, 2, 4, 4, 5, 5, 5, 6, 7, 9]);
}

fn reparse<T: Record + PartialEq + std::fmt::Debug>(files: &BTreeMap<String, Vec<u8>>, records: &[T]) {
    let bytes = &files[T::KIND.file_name()];
    let out = parse_reader::<T, _>(bytes.as_slice()).unwrap();
    assert_eq!(out.rejected(), 0, "{}", out.rejection_report());
    assert_eq!(out.records, records);
}

#[test]
fn written_corpus_parses_without_rejections() {
    let c = standard_fixture();
    let files: BTreeMap<String, Vec<u8>> = corpus_files(&c, Some("fixture")).unwrap().into_iter().collect();
    reparse::<FareObservation>(&files, &c.fares);
    reparse::<ItineraryRecord>(&files, &c.bookings);
    reparse::<ReviewRecord>(&files, &c.reviews);
    reparse::<TweetRecord>(&files, &c.tweets);
    reparse::<SafetyRecord>(&files, &c.safety);
    reparse::<FleetRecord>(&files, &c.fleet);
    let s = SimScenario::from_toml(std::str::from_utf8(&files["scenario.toml"]).unwrap()).unwrap();
    assert_eq!(Some(s), c.scenario);
}

#[test]
fn every_fare_row_gets_a_feature_row() {
    let c = standard_fixture();
    let a = c.assemble();
    assert_eq!(a.rows.len(), c.fares.len());
    assert_eq!(a.reconciliation.unmatched, 0);
    let bought = a.rows.iter().filter(|r| r.is_bought).count();
    assert_eq!(bought, c.bookings.len());
}
