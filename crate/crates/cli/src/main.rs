use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use fareboost::dataset::{temporal_holdout, Dataset};
use fareboost::evaluate::{
    confusion, group_by_od, write_comparison_long, write_comparison_wide, OdEvaluation,
};
use fareboost::explain::{render_waterfall, Explainer};
use fareboost::features::{
    assemble_feature_vectors, build_airline_aggregates, read_feature_csv, write_feature_csv,
    AirlineSources, AssembleContext, FeatureVector,
};
use fareboost::gbt::{
    grid_search, label_from_probability, train_with_trace, write_gain_table, write_rmse_curve,
    GbtModel, GbtParams, GridSpec,
};
use fareboost::ingest::{
    filter_tweets, parse_dataset, FareObservation, FleetRecord, ItineraryRecord, ParseOutcome,
    Record, ReviewRecord, SafetyRecord, TweetRecord,
};
use fareboost::logit::{fit_logit, LogitModel, LogitOptions};
use fareboost::sentiment::Lexicon;
use fareboost::simulate::{
    build_policy, compare_policies, flight_forecasts, write_replication_log, write_revenue_table,
    SimScenario,
};
use fareboost::synth::{corpus_files, generate, SynthConfig};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Parser)]
#[command(name = "fareboost", version, about = "Itinerary purchase prediction and revenue simulation")]
struct Cli {
    /// Run configuration (TOML). Relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output root.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus into the data directory.
    Synth {
        /// Generator settings (TOML); the built-in ten-market setup when absent.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Parse the data directory and write one feature file per OD.
    Features,
    /// Fit the boosted trees and the logit baseline for every OD.
    Train,
    /// Confusion-share comparison on each OD's holdout days.
    Evaluate,
    /// Log-odds waterfall for one itinerary.
    Explain {
        #[arg(long)]
        od: String,
        /// Zero-based data row of the OD's feature file.
        #[arg(long)]
        row: usize,
    },
    /// Compare Std and XGB forecasts on the flight scenario.
    Simulate {
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DataConfig {
    /// Directory holding the six datasets under their default file names.
    dir: Option<PathBuf>,
    /// Per-dataset overrides, keyed by default file name (`fares.csv`, ...).
    files: BTreeMap<String, PathBuf>,
    /// Two-column `word,score` file replacing the bundled lexicon.
    lexicon: Option<PathBuf>,
    /// Safety-index airline codes to airline ids.
    airline_codes: BTreeMap<String, u32>,
    /// Hub airport per airline id.
    hubs: BTreeMap<u32, String>,
    /// External review-site scores per airline id.
    site_scores: BTreeMap<u32, SiteScores>,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SiteScores {
    sc1: Option<f64>,
    sc2: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    seed: u64,
    /// ODs to process; empty means all.
    ods: Vec<String>,
    holdout_fraction: f64,
    data: DataConfig,
    gbt: GbtParams,
    /// When present, `train` picks parameters by grid search on the
    /// training days.
    grid: Option<GridSpec>,
    logit: LogitOptions,
    scenario: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            ods: vec![],
            holdout_fraction: 0.2,
            data: DataConfig::default(),
            gbt: GbtParams::default(),
            grid: None,
            logit: LogitOptions::default(),
            scenario: None,
        }
    }
}

const DATASET_FILES: [&str; 6] = [
    "bookings.csv",
    "fares.csv",
    "reviews.csv",
    "tweets.csv",
    "safety.csv",
    "fleet.csv",
];

struct Run {
    config: RunConfig,
    hash: String,
    out: PathBuf,
    seed_overridden: bool,
}

impl Run {
    fn load(cli: &Cli) -> Result<Self> {
        let mut config = match &cli.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                let mut c: RunConfig = toml::from_str(&text)
                    .map_err(|e| anyhow!("config {}: {}", path.display(), e.message()))?;
                let base = path.parent().unwrap_or(Path::new("."));
                let resolve = |p: &mut Option<PathBuf>| {
                    if let Some(q) = p {
                        if q.is_relative() {
                            *q = base.join(&*q);
                        }
                    }
                };
                resolve(&mut c.data.dir);
                for f in c.data.files.values_mut() {
                    if f.is_relative() {
                        *f = base.join(&*f);
                    }
                }
                resolve(&mut c.data.lexicon);
                resolve(&mut c.scenario);
                c
            }
            None => RunConfig::default(),
        };
        if let Some(s) = cli.seed {
            config.seed = s;
        }
        config.gbt.seed = config.seed;
        if !(config.holdout_fraction > 0.0 && config.holdout_fraction < 1.0) {
            bail!("holdout_fraction must lie in (0, 1), got {}", config.holdout_fraction);
        }
        config.gbt.validate().map_err(|e| anyhow!("gbt parameters: {e}"))?;
        for name in config.data.files.keys() {
            if !DATASET_FILES.contains(&name.as_str()) {
                bail!("data.files: unknown dataset `{name}`; expected one of {}", DATASET_FILES.join(", "));
            }
        }
        let named = config.data.files.values().chain(&config.data.lexicon).chain(&config.scenario);
        for p in named {
            if !p.exists() {
                bail!("configured path {} does not exist", p.display());
            }
        }
        let text = toml::to_string(&config).context("serializing config")?;
        let hash = hex::encode(Sha256::digest(text.as_bytes()));
        Ok(Run {
            config,
            hash,
            out: cli.out.clone(),
            seed_overridden: cli.seed.is_some(),
        })
    }

    fn header(&self) -> String {
        format!("config_hash={} seed={}", self.hash, self.config.seed)
    }

    fn data_dir(&self) -> PathBuf {
        self.config.data.dir.clone().unwrap_or_else(|| self.out.join("data"))
    }

    fn dataset_path(&self, file_name: &str) -> PathBuf {
        self.config
            .data
            .files
            .get(file_name)
            .cloned()
            .unwrap_or_else(|| self.data_dir().join(file_name))
    }

    fn features_dir(&self) -> PathBuf {
        self.out.join("features")
    }

    fn models_dir(&self) -> PathBuf {
        self.out.join("models")
    }

    fn reports_dir(&self) -> PathBuf {
        self.out.join("reports")
    }

    fn selected(&self, od: &str) -> bool {
        self.config.ods.is_empty() || self.config.ods.iter().any(|o| o == od)
    }
}

/// Writes through a temporary file in the target directory, so readers never
/// see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path)
        .map_err(|e| anyhow!("writing {}: {}", path.display(), e.error))?;
    Ok(())
}

fn with_header(header: &str, body: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    writeln!(buf, "# {header}")?;
    body(&mut buf)?;
    Ok(buf)
}

#[derive(Serialize, Deserialize)]
struct ModelFile<T> {
    config_hash: String,
    seed: u64,
    od: String,
    model: T,
}

fn cmd_synth(run: &Run, spec: Option<&Path>) -> Result<()> {
    let mut config = match spec {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<SynthConfig>(&text)
                .map_err(|e| anyhow!("synth spec {}: {}", p.display(), e.message()))?
        }
        None => SynthConfig::standard(),
    };
    if run.seed_overridden {
        config.seed = run.config.seed;
    }
    let corpus = generate(&config)?;
    let header = format!("config_hash={} seed={}", run.hash, config.seed);
    let dir = run.data_dir();
    for (name, bytes) in corpus_files(&corpus, Some(&header))? {
        write_atomic(&dir.join(name), &bytes)?;
    }
    info!("synth: {} fare rows, {} bookings", corpus.fares.len(), corpus.bookings.len());
    println!("wrote {}", dir.display());
    Ok(())
}

fn load<T: Record>(run: &Run) -> Result<Vec<T>> {
    let path = run.dataset_path(T::KIND.file_name());
    if !path.exists() {
        bail!(
            "missing {}; run `fareboost synth` or point data.dir at the input files",
            path.display()
        );
    }
    let out: ParseOutcome<T> = parse_dataset(&path)?;
    for r in &out.rejections {
        warn!("{}: {r}", T::KIND.file_name());
    }
    if out.rejected() > 0 {
        eprintln!("{}: {} rows rejected", T::KIND.file_name(), out.rejected());
    }
    Ok(out.records)
}

fn cmd_features(run: &Run) -> Result<()> {
    let (fares, bookings) = rayon::join(|| load::<FareObservation>(run), || load::<ItineraryRecord>(run));
    let (fares, bookings) = (fares?, bookings?);
    let reviews = load::<ReviewRecord>(run)?;
    let tweets = filter_tweets(load::<TweetRecord>(run)?);
    let safety = load::<SafetyRecord>(run)?;
    let fleet = load::<FleetRecord>(run)?;
    let lexicon = match &run.config.data.lexicon {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading lexicon {}", p.display()))?;
            Lexicon::from_csv(&text)?
        }
        None => Lexicon::bundled(),
    };
    let site_scores: BTreeMap<u32, (Option<f64>, Option<f64>)> = run
        .config
        .data
        .site_scores
        .iter()
        .map(|(&a, s)| (a, (s.sc1, s.sc2)))
        .collect();
    let ctx = AssembleContext {
        airlines: build_airline_aggregates(AirlineSources {
            reviews: &reviews,
            tweets: &tweets,
            safety: &safety,
            fleet: &fleet,
            lexicon: &lexicon,
            airline_codes: &run.config.data.airline_codes,
            site_scores: &site_scores,
        }),
        hubs: run.config.data.hubs.clone(),
    };
    let assembled = assemble_feature_vectors(&fares, &bookings, &ctx);
    let header = run.header();
    let groups = group_by_od(&assembled.rows);
    let written: Vec<String> = groups
        .par_iter()
        .filter(|(od, _)| run.selected(od))
        .map(|(od, idx)| {
            let rows: Vec<FeatureVector> = idx.iter().map(|&i| assembled.rows[i].clone()).collect();
            let bytes = with_header(&header, |b| Ok(write_feature_csv(b, &rows)?))?;
            write_atomic(&run.features_dir().join(format!("{od}.csv")), &bytes)?;
            Ok(od.clone())
        })
        .collect::<Result<_>>()?;
    if written.is_empty() {
        bail!("no fare rows for the selected ODs");
    }

    let rec = &assembled.reconciliation;
    let bytes = with_header(&header, |b| {
        writeln!(b, "bookings_joined,{}", rec.joined.len())?;
        writeln!(b, "bookings_unmatched,{}", rec.unmatched)?;
        if let Some(s) = rec.share_within(0.01) {
            writeln!(b, "share_within_1pct,{s:.6}")?;
        }
        let h = &rec.histogram;
        for (i, count) in h.counts.iter().enumerate() {
            match h.edges.get(i) {
                Some(edge) => writeln!(b, "error_below_{edge},{count}")?,
                None => writeln!(b, "error_open,{count}")?,
            }
        }
        Ok(())
    })?;
    write_atomic(&run.features_dir().join("reconciliation.txt"), &bytes)?;
    println!("wrote {} feature files to {}", written.len(), run.features_dir().display());
    Ok(())
}

fn feature_ods(run: &Run, prerequisite: &str) -> Result<Vec<String>> {
    let dir = run.features_dir();
    let entries = fs::read_dir(&dir)
        .map_err(|_| anyhow!("no feature files in {}; run `fareboost features` first", dir.display()))?;
    let mut ods = Vec::new();
    for e in entries {
        let path = e?.path();
        if path.extension().is_some_and(|x| x == "csv") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                if run.selected(stem) {
                    ods.push(stem.to_string());
                }
            }
        }
    }
    ods.sort();
    if ods.is_empty() {
        bail!("no feature files in {}; run `fareboost {prerequisite}` first", dir.display());
    }
    Ok(ods)
}

fn read_features(run: &Run, od: &str) -> Result<Vec<FeatureVector>> {
    let path = run.features_dir().join(format!("{od}.csv"));
    let file = fs::File::open(&path)
        .map_err(|_| anyhow!("missing {}; run `fareboost features` first", path.display()))?;
    read_feature_csv(file).with_context(|| format!("reading {}", path.display()))
}

struct Split {
    data: Dataset,
    train: Vec<usize>,
    test: Vec<usize>,
}

fn split(run: &Run, od: &str, rows: &[FeatureVector]) -> Result<Split> {
    let data = Dataset::from_feature_vectors(rows)?;
    let days: Vec<i64> = rows.iter().map(|r| r.key.dep_day_id).collect();
    let (train, test) = temporal_holdout(&days, run.config.holdout_fraction);
    if train.is_empty() || test.is_empty() {
        bail!("{od}: need at least two departure days to split train and holdout");
    }
    Ok(Split { data, train, test })
}

fn train_od(run: &Run, od: &str) -> Result<()> {
    let rows = read_features(run, od)?;
    let s = split(run, od, &rows)?;
    let train_ds = s.data.subset(&s.train);
    let test_ds = s.data.subset(&s.test);
    let header = run.header();
    let dir = run.models_dir();

    let params = match &run.config.grid {
        Some(grid) => {
            let train_rows: Vec<FeatureVector> = s.train.iter().map(|&i| rows[i].clone()).collect();
            let inner = split(run, od, &train_rows)?;
            let outcome = grid_search(
                &inner.data.subset(&inner.train),
                &inner.data.subset(&inner.test),
                grid,
                &run.config.gbt,
            )?;
            let bytes = with_header(&header, |b| {
                let mut w = csv::Writer::from_writer(b);
                w.write_record(["eta", "n_trees", "max_depth", "subsample", "rmse"])?;
                for c in &outcome.cells {
                    w.write_record([
                        c.eta.to_string(),
                        c.n_trees.to_string(),
                        c.max_depth.to_string(),
                        c.subsample.to_string(),
                        c.rmse.to_string(),
                    ])?;
                }
                w.flush()?;
                Ok(())
            })?;
            write_atomic(&dir.join(format!("{od}_grid.csv")), &bytes)?;
            outcome.best
        }
        None => run.config.gbt.clone(),
    };

    let (model, trace) = train_with_trace(&train_ds, &params, Some(&test_ds))?;
    let logit = fit_logit(&train_ds, &run.config.logit)?;

    let json = |model: serde_json::Value| -> Result<Vec<u8>> {
        let file = ModelFile {
            config_hash: run.hash.clone(),
            seed: run.config.seed,
            od: od.to_string(),
            model,
        };
        let mut bytes = serde_json::to_vec_pretty(&file)?;
        bytes.push(b'\n');
        Ok(bytes)
    };
    write_atomic(&dir.join(format!("{od}.json")), &json(serde_json::to_value(&model)?)?)?;
    write_atomic(&dir.join(format!("{od}_logit.json")), &json(serde_json::to_value(&logit)?)?)?;
    let bytes = with_header(&header, |b| Ok(write_gain_table(b, &model.gain_table)?))?;
    write_atomic(&dir.join(format!("{od}_gain.csv")), &bytes)?;
    let bytes = with_header(&header, |b| Ok(write_rmse_curve(b, &trace.holdout_rmse)?))?;
    write_atomic(&dir.join(format!("{od}_rmse.csv")), &bytes)?;
    let bytes = with_header(&header, |b| Ok(logit.write_coefficients(b)?))?;
    write_atomic(&dir.join(format!("{od}_logit_coef.csv")), &bytes)?;
    info!("{od}: {} trees, {} leaves", model.trees.len(), model.n_leaves());
    Ok(())
}

fn cmd_train(run: &Run) -> Result<()> {
    let ods = feature_ods(run, "features")?;
    ods.par_iter().map(|od| train_od(run, od)).collect::<Result<Vec<()>>>()?;
    println!("trained {} ODs into {}", ods.len(), run.models_dir().display());
    Ok(())
}

fn read_model<T: for<'de> Deserialize<'de>>(run: &Run, od: &str, suffix: &str) -> Result<T> {
    let path = run.models_dir().join(format!("{od}{suffix}.json"));
    let text = fs::read_to_string(&path)
        .map_err(|_| anyhow!("missing model {}; run `fareboost train` first", path.display()))?;
    let file: ModelFile<T> =
        serde_json::from_str(&text).with_context(|| format!("reading {}", path.display()))?;
    if file.config_hash != run.hash {
        bail!(
            "{} was trained under a different configuration; rerun `fareboost train`",
            path.display()
        );
    }
    Ok(file.model)
}

fn evaluate_od(run: &Run, od: &str) -> Result<OdEvaluation> {
    let rows = read_features(run, od)?;
    let s = split(run, od, &rows)?;
    let gbt: GbtModel = read_model(run, od, "")?;
    let logit: LogitModel = read_model(run, od, "_logit")?;
    let mut labels = Vec::with_capacity(s.test.len());
    let mut xgb = Vec::with_capacity(s.test.len());
    let mut lg = Vec::with_capacity(s.test.len());
    for &i in &s.test {
        let row = &rows[i].values;
        labels.push(rows[i].is_bought);
        xgb.push(label_from_probability(gbt.predict_proba(row)?));
        lg.push(logit.predict_logit(row)?.1);
    }
    Ok(OdEvaluation {
        od: od.to_string(),
        logit: confusion(&labels, &lg)?,
        xgb: confusion(&labels, &xgb)?,
    })
}

fn cmd_evaluate(run: &Run) -> Result<()> {
    let ods = feature_ods(run, "features")?;
    let rows: Vec<OdEvaluation> = ods.par_iter().map(|od| evaluate_od(run, od)).collect::<Result<_>>()?;
    let header = run.header();
    let dir = run.reports_dir();
    let wide = with_header(&header, |b| Ok(write_comparison_wide(b, &rows)?))?;
    write_atomic(&dir.join("comparison.csv"), &wide)?;
    let long = with_header(&header, |b| Ok(write_comparison_long(b, &rows)?))?;
    write_atomic(&dir.join("comparison_long.csv"), &long)?;
    print!("{}", String::from_utf8_lossy(&wide[wide.iter().position(|&c| c == b'\n').map_or(0, |p| p + 1)..]));
    Ok(())
}

fn cmd_explain(run: &Run, od: &str, row: usize) -> Result<()> {
    let rows = read_features(run, od)?;
    let fv = rows
        .get(row)
        .ok_or_else(|| anyhow!("{od} has {} rows; row {row} is out of range", rows.len()))?;
    let model: GbtModel = read_model(run, od, "")?;
    let exp = Explainer::new(&model).explain(&fv.values)?;
    let header = run.header();
    let mut text = Vec::new();
    let mut plot = Vec::new();
    writeln!(text, "# {header}")?;
    writeln!(
        text,
        "{} airline {} day {} dbd {} dep {} bought {}",
        fv.key.od, fv.key.airline_id, fv.key.dep_day_id, fv.key.dbd, fv.key.dep_time_mam, fv.is_bought
    )?;
    writeln!(plot, "# {header}")?;
    render_waterfall(&exp, &mut text, &mut plot)?;
    let dir = run.reports_dir();
    write_atomic(&dir.join(format!("explain_{od}_{row}.txt")), &text)?;
    write_atomic(&dir.join(format!("explain_{od}_{row}.csv")), &plot)?;
    print!("{}", String::from_utf8_lossy(&text));
    Ok(())
}

fn cmd_simulate(run: &Run, scenario: Option<&Path>) -> Result<()> {
    let path = scenario
        .map(Path::to_path_buf)
        .or_else(|| run.config.scenario.clone())
        .unwrap_or_else(|| run.data_dir().join("scenario.toml"));
    let text = fs::read_to_string(&path).map_err(|_| {
        anyhow!("missing scenario {}; run `fareboost synth` or pass --scenario", path.display())
    })?;
    let scenario = SimScenario::from_toml(&text)?;

    let covered: Vec<&str> = scenario.ods.iter().filter(|o| o.covered).map(|o| o.name.as_str()).collect();
    let rollups: BTreeMap<String, f64> = covered
        .par_iter()
        .map(|&od| {
            let rows = read_features(run, od)?;
            let model: GbtModel = read_model(run, od, "")?;
            let mut sum = 0.0;
            for r in rows.iter().filter(|r| {
                r.key.airline_id == scenario.host_airline && r.key.dep_day_id == scenario.target_dep_day
            }) {
                sum += model.predict_proba(&r.values)?;
            }
            Ok((od.to_string(), sum))
        })
        .collect::<Result<_>>()?;

    let fc = flight_forecasts(&scenario, &rollups)?;
    let std_policy = build_policy(&scenario, &fc.std)?;
    let xgb_policy = build_policy(&scenario, &fc.xgb)?;
    let results = vec![
        compare_policies(&scenario, &std_policy, &xgb_policy, true),
        compare_policies(&scenario, &std_policy, &xgb_policy, false),
    ];

    let header = run.header();
    let dir = run.reports_dir();
    let table = with_header(&header, |b| Ok(write_revenue_table(b, &results)?))?;
    write_atomic(&dir.join("revenue.csv"), &table)?;
    let reps = with_header(&header, |b| Ok(write_replication_log(b, &results)?))?;
    write_atomic(&dir.join("replications.csv"), &reps)?;
    let fcs = with_header(&header, |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["od", "covered", "std_forecast", "xgb_forecast", "mean_demand"])?;
        for (i, o) in scenario.ods.iter().enumerate() {
            w.write_record([
                o.name.clone(),
                o.covered.to_string(),
                fc.std_od[i].to_string(),
                fc.xgb_od[i].to_string(),
                o.mean_demand.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    write_atomic(&dir.join("forecasts.csv"), &fcs)?;
    for r in &results {
        println!(
            "downsell={} std={:.1} xgb={:.1} gain={:.2}% diff_ci=[{:.1}, {:.1}]",
            r.downsell, r.std_mean, r.xgb_mean, r.gain_pct, r.diff_ci.0, r.diff_ci.1
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = (|| {
        if let Some(j) = cli.jobs {
            rayon::ThreadPoolBuilder::new()
                .num_threads(j.max(1))
                .build_global()
                .context("starting worker pool")?;
        }
        let run = Run::load(&cli)?;
        match &cli.command {
            Command::Synth { spec } => cmd_synth(&run, spec.as_deref()),
            Command::Features => cmd_features(&run),
            Command::Train => cmd_train(&run),
            Command::Evaluate => cmd_evaluate(&run),
            Command::Explain { od, row } => cmd_explain(&run, od, *row),
            Command::Simulate { scenario } => cmd_simulate(&run, scenario.as_deref()),
        }
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
