//! Confusion shares that leave out true negatives, and logit/boosted-tree
//! comparison tables.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::dataset::{temporal_holdout, Dataset};
use crate::features::FeatureVector;
use crate::gbt::{label_from_probability, train, GbtModel, GbtParams};
use crate::logit::{fit_logit, LogitModel, LogitOptions};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{labels} labels but {predictions} predictions")]
    LengthMismatch { labels: usize, predictions: usize },
    #[error("no labels")]
    Empty,
    #[error("shares undefined: no positives predicted or present")]
    Undefined,
    #[error("{od}: {message}")]
    Fit { od: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ConfusionCounts {
    pub tn: u64,
    pub fn_: u64,
    pub fp: u64,
    pub tp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Shares {
    pub fn_share: f64,
    pub fp_share: f64,
    pub tp_share: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfusionTriple {
    pub counts: ConfusionCounts,
    /// `None` when there are no positives, predicted or actual.
    pub shares: Option<Shares>,
}

impl ConfusionTriple {
    pub fn from_counts(counts: ConfusionCounts) -> Self {
        let denom = counts.fn_ + counts.fp + counts.tp;
        let shares = (denom > 0).then(|| {
            let d = denom as f64;
            Shares {
                fn_share: counts.fn_ as f64 / d,
                fp_share: counts.fp as f64 / d,
                tp_share: counts.tp as f64 / d,
            }
        });
        ConfusionTriple { counts, shares }
    }

    pub fn status(&self) -> &'static str {
        if self.shares.is_some() {
            "ok"
        } else {
            "no positives predicted or present"
        }
    }
}

pub fn confusion(labels: &[bool], predictions: &[bool]) -> Result<ConfusionTriple, EvalError> {
    if labels.len() != predictions.len() {
        return Err(EvalError::LengthMismatch {
            labels: labels.len(),
            predictions: predictions.len(),
        });
    }
    let mut c = ConfusionCounts::default();
    for (&y, &p) in labels.iter().zip(predictions) {
        match (y, p) {
            (false, false) => c.tn += 1,
            (true, false) => c.fn_ += 1,
            (false, true) => c.fp += 1,
            (true, true) => c.tp += 1,
        }
    }
    Ok(ConfusionTriple::from_counts(c))
}

pub fn prevalence(labels: &[bool]) -> Result<f64, EvalError> {
    if labels.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(labels.iter().filter(|&&y| y).count() as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Winner {
    Logit,
    Xgb,
    Tie,
}

impl Winner {
    pub fn as_str(self) -> &'static str {
        match self {
            Winner::Logit => "logit",
            Winner::Xgb => "xgb",
            Winner::Tie => "tie",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Comparison {
    pub fn_: Winner,
    pub fp: Winner,
    pub tp: Winner,
}

fn pick(logit: f64, xgb: f64, lower_wins: bool) -> Winner {
    if logit == xgb {
        Winner::Tie
    } else if (logit < xgb) == lower_wins {
        Winner::Logit
    } else {
        Winner::Xgb
    }
}

/// Lower false-negative and false-positive shares win; higher true-positive
/// share wins.
pub fn compare_models(logit: &ConfusionTriple, xgb: &ConfusionTriple) -> Result<Comparison, EvalError> {
    let (Some(l), Some(x)) = (logit.shares, xgb.shares) else {
        return Err(EvalError::Undefined);
    };
    Ok(Comparison {
        fn_: pick(l.fn_share, x.fn_share, true),
        fp: pick(l.fp_share, x.fp_share, true),
        tp: pick(l.tp_share, x.tp_share, false),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OdEvaluation {
    pub od: String,
    pub logit: ConfusionTriple,
    pub xgb: ConfusionTriple,
}

fn share_field(t: &ConfusionTriple, f: impl Fn(&Shares) -> f64) -> String {
    t.shares.map(|s| format!("{:.4}", f(&s))).unwrap_or_else(|| "undefined".into())
}

/// One row per OD: `od,fn_logit,fn_xgb,fp_logit,fp_xgb,tp_logit,tp_xgb`.
pub fn write_comparison_wide<W: Write>(writer: W, rows: &[OdEvaluation]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["od", "fn_logit", "fn_xgb", "fp_logit", "fp_xgb", "tp_logit", "tp_xgb"])?;
    for r in rows {
        w.write_record([
            r.od.clone(),
            share_field(&r.logit, |s| s.fn_share),
            share_field(&r.xgb, |s| s.fn_share),
            share_field(&r.logit, |s| s.fp_share),
            share_field(&r.xgb, |s| s.fp_share),
            share_field(&r.logit, |s| s.tp_share),
            share_field(&r.xgb, |s| s.tp_share),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Two rows per OD: `od,method,fn,fp,tp,tn_count,fn_count,fp_count,tp_count,better`.
/// `better` lists the metrics this method wins.
pub fn write_comparison_long<W: Write>(writer: W, rows: &[OdEvaluation]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "od", "method", "fn", "fp", "tp", "tn_count", "fn_count", "fp_count", "tp_count", "better",
    ])?;
    for r in rows {
        let cmp = compare_models(&r.logit, &r.xgb).ok();
        for (method, t, me) in [("logit", &r.logit, Winner::Logit), ("xgb", &r.xgb, Winner::Xgb)] {
            let better = cmp
                .map(|c| {
                    [("fn", c.fn_), ("fp", c.fp), ("tp", c.tp)]
                        .iter()
                        .filter(|(_, w)| *w == me)
                        .map(|(m, _)| *m)
                        .collect::<Vec<_>>()
                        .join(";")
                })
                .unwrap_or_default();
            w.write_record([
                r.od.clone(),
                method.to_string(),
                share_field(t, |s| s.fn_share),
                share_field(t, |s| s.fp_share),
                share_field(t, |s| s.tp_share),
                t.counts.tn.to_string(),
                t.counts.fn_.to_string(),
                t.counts.fp.to_string(),
                t.counts.tp.to_string(),
                better,
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Row indices of each OD, in input order.
pub fn group_by_od(rows: &[FeatureVector]) -> BTreeMap<String, Vec<usize>> {
    let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        out.entry(r.key.od.clone()).or_default().push(i);
    }
    out
}

/// Both learners fitted on one OD's earlier departure days and scored on
/// the later ones.
#[derive(Debug, Clone)]
pub struct OdRun {
    pub od: String,
    /// Indices into the OD's own rows.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub gbt: GbtModel,
    pub logit: LogitModel,
    pub evaluation: OdEvaluation,
    pub gbt_seconds: f64,
}

pub fn fit_and_evaluate(
    od: &str,
    rows: &[FeatureVector],
    holdout_fraction: f64,
    params: &GbtParams,
    logit_opts: &LogitOptions,
) -> Result<OdRun, EvalError> {
    let fail = |message: String| EvalError::Fit {
        od: od.to_string(),
        message,
    };
    let data = Dataset::from_feature_vectors(rows).map_err(|e| fail(e.to_string()))?;
    let days: Vec<i64> = rows.iter().map(|r| r.key.dep_day_id).collect();
    let (train_idx, test_idx) = temporal_holdout(&days, holdout_fraction);
    if test_idx.is_empty() {
        return Err(fail("need at least two departure days for a holdout".into()));
    }
    let train_ds = data.subset(&train_idx);
    let started = Instant::now();
    let gbt = train(&train_ds, params).map_err(|e| fail(e.to_string()))?;
    let gbt_seconds = started.elapsed().as_secs_f64();
    let logit = fit_logit(&train_ds, logit_opts).map_err(|e| fail(e.to_string()))?;

    let labels: Vec<bool> = test_idx.iter().map(|&i| rows[i].is_bought).collect();
    let mut xgb_pred = Vec::with_capacity(test_idx.len());
    let mut logit_pred = Vec::with_capacity(test_idx.len());
    for &i in &test_idx {
        let row = &rows[i].values;
        let p = gbt.predict_proba(row).map_err(|e| fail(e.to_string()))?;
        xgb_pred.push(label_from_probability(p));
        logit_pred.push(logit.predict_logit(row).map_err(|e| fail(e.to_string()))?.1);
    }
    let evaluation = OdEvaluation {
        od: od.to_string(),
        logit: confusion(&labels, &logit_pred)?,
        xgb: confusion(&labels, &xgb_pred)?,
    };
    Ok(OdRun {
        od: od.to_string(),
        train: train_idx,
        test: test_idx,
        gbt,
        logit,
        evaluation,
        gbt_seconds,
    })
}
