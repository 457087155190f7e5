//! Gradient-boosted decision trees for the logistic objective.
//!
//! Trees are grown level by level with exact greedy split search: every
//! boundary between consecutive distinct values of every sampled feature is
//! scored with the second-order gain
//!
//! ```text
//! gain = ½ [G_L²/(H_L+λ) + G_R²/(H_R+λ) − G²/(H+λ)] − γ
//! ```
//!
//! and only splits with positive gain are kept. Rows with a missing value go
//! to whichever side scores higher (left on ties). Leaves hold the shrunk
//! Newton step `η · −G/(H+λ)`.

use std::io::{Read, Write};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DataError, Dataset};

#[derive(Debug, Error)]
pub enum GbtError {
    #[error("training needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("row has {found} features, model expects {expected}")]
    Arity { expected: usize, found: usize },
    #[error("holdout set is empty")]
    EmptyHoldout,
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("model file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbtParams {
    pub eta: f64,
    pub n_trees: usize,
    pub max_depth: usize,
    pub subsample: f64,
    pub colsample: f64,
    pub gamma: f64,
    pub lambda: f64,
    /// Boosting-round budget. When set it must equal `n_trees`.
    pub n_passes: Option<usize>,
    pub seed: u64,
    /// Initial log-odds. Defaults to the log-odds of the training prevalence.
    pub base_score: Option<f64>,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            eta: 0.3,
            n_trees: 10,
            max_depth: 6,
            subsample: 1.0,
            colsample: 1.0,
            gamma: 0.25,
            lambda: 1.0,
            n_passes: None,
            seed: 0,
            base_score: None,
        }
    }
}

impl GbtParams {
    pub fn validate(&self) -> Result<(), GbtError> {
        let bad = |m: &str| Err(GbtError::InvalidParam(m.to_string()));
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad("eta must be a finite value >= 0");
        }
        if self.n_trees < 1 {
            return bad("n_trees must be >= 1");
        }
        if self.max_depth < 1 {
            return bad("max_depth must be >= 1");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must be in (0, 1]");
        }
        if !(self.colsample > 0.0 && self.colsample <= 1.0) {
            return bad("colsample must be in (0, 1]");
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be >= 0");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be >= 0");
        }
        if let Some(p) = self.n_passes {
            if p != self.n_trees {
                return bad("n_passes must equal n_trees");
            }
        }
        if let Some(b) = self.base_score {
            if !b.is_finite() {
                return bad("base_score must be finite");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        missing_left: bool,
        left: usize,
        right: usize,
        gain: f64,
        cover: f64,
    },
    Leaf {
        weight: f64,
        cover: f64,
    },
}

impl Node {
    pub fn cover(&self) -> f64 {
        match *self {
            Node::Split { cover, .. } | Node::Leaf { cover, .. } => cover,
        }
    }
}

/// Nodes in creation order; the root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Index of the next node for a value at a split node.
    fn step(node: &Node, x: Option<f64>) -> Option<usize> {
        match *node {
            Node::Split {
                threshold,
                missing_left,
                left,
                right,
                ..
            } => Some(match x {
                None => {
                    if missing_left {
                        left
                    } else {
                        right
                    }
                }
                Some(v) if v < threshold => left,
                Some(_) => right,
            }),
            Node::Leaf { .. } => None,
        }
    }

    /// Node indices from the root to the reached leaf.
    pub fn path<F: Fn(usize) -> Option<f64>>(&self, get: F) -> Vec<usize> {
        let mut at = 0;
        let mut path = vec![0];
        while let Node::Split { feature, .. } = self.nodes[at] {
            at = Tree::step(&self.nodes[at], get(feature)).unwrap();
            path.push(at);
        }
        path
    }

    pub fn leaf<F: Fn(usize) -> Option<f64>>(&self, get: F) -> usize {
        let mut at = 0;
        while let Node::Split { feature, .. } = self.nodes[at] {
            at = Tree::step(&self.nodes[at], get(feature)).unwrap();
        }
        at
    }

    pub fn predict<F: Fn(usize) -> Option<f64>>(&self, get: F) -> f64 {
        match self.nodes[self.leaf(get)] {
            Node::Leaf { weight, .. } => weight,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }

    /// Same structure with leaf weights recomputed as `η · −G/(H+λ)` from the
    /// given per-row gradients and hessians.
    pub fn refit(&self, ds: &Dataset, grad: &[f64], hess: &[f64], lambda: f64, eta: f64) -> Tree {
        let mut g = vec![0.0; self.nodes.len()];
        let mut h = vec![0.0; self.nodes.len()];
        for i in 0..ds.n_rows() {
            let l = self.leaf(|j| ds.value(i, j));
            g[l] += grad[i];
            h[l] += hess[i];
        }
        let nodes = self
            .nodes
            .iter()
            .enumerate()
            .map(|(k, n)| match n {
                Node::Leaf { .. } => Node::Leaf {
                    weight: leaf_weight(g[k], h[k], lambda, eta),
                    cover: h[k],
                },
                s => s.clone(),
            })
            .collect();
        Tree { nodes }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn log_odds(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Shared decision rule: a probability of exactly 0.5 counts as a purchase.
pub fn label_from_probability(p: f64) -> bool {
    p >= 0.5
}

/// Per-row gradient and hessian of the logistic loss at the given margins.
pub fn gradients(labels: &[f64], margins: &[f64]) -> (Vec<f64>, Vec<f64>) {
    labels
        .iter()
        .zip(margins)
        .map(|(&y, &m)| {
            let p = sigmoid(m);
            (p - y, p * (1.0 - p))
        })
        .unzip()
}

/// Mean logistic loss at the given margins.
pub fn log_loss(labels: &[f64], margins: &[f64]) -> f64 {
    let total: f64 = labels
        .iter()
        .zip(margins)
        .map(|(&y, &m)| m.max(0.0) + (-m.abs()).exp().ln_1p() - y * m)
        .sum();
    total / labels.len() as f64
}

fn rmse(labels: &[f64], margins: &[f64]) -> f64 {
    let s: f64 = labels
        .iter()
        .zip(margins)
        .map(|(&y, &m)| (y - sigmoid(m)).powi(2))
        .sum();
    (s / labels.len() as f64).sqrt()
}

fn leaf_weight(g: f64, h: f64, lambda: f64, eta: f64) -> f64 {
    if h + lambda > 0.0 {
        -g / (h + lambda) * eta
    } else {
        0.0
    }
}

fn score(g: f64, h: f64, lambda: f64) -> Option<f64> {
    (h + lambda > 0.0).then(|| g * g / (h + lambda))
}

/// Split gain including the γ penalty; `None` when a side has no curvature
/// to divide by.
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64, gamma: f64) -> Option<f64> {
    let l = score(gl, hl, lambda)?;
    let r = score(gr, hr, lambda)?;
    let p = score(gl + gr, hl + hr, lambda)?;
    Some(0.5 * (l + r - p) - gamma)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    feature: usize,
    threshold: f64,
    missing_left: bool,
    gain: f64,
}

fn better(a: Option<Candidate>, b: Option<Candidate>) -> Option<Candidate> {
    match (a, b) {
        (Some(x), Some(y)) => Some(if y.gain > x.gain { y } else { x }),
        (x, None) => x,
        (None, y) => y,
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m > a {
        m
    } else {
        b
    }
}

#[derive(Clone, Copy)]
struct NodeStats {
    g: f64,
    h: f64,
    n: usize,
}

/// Best split per frontier node on one feature. `pos[i]` is the frontier
/// slot of row `i` or `u32::MAX` when the row is inactive.
#[allow(clippy::too_many_arguments)]
fn best_on_feature(
    feature: usize,
    sorted: &[u32],
    column: &[f64],
    pos: &[u32],
    grad: &[f64],
    hess: &[f64],
    stats: &[NodeStats],
    lambda: f64,
    gamma: f64,
) -> Vec<Option<Candidate>> {
    let m = stats.len();
    let mut nm = vec![(0.0f64, 0.0f64, 0usize); m];
    for &i in sorted {
        let p = pos[i as usize];
        if p != u32::MAX {
            let e = &mut nm[p as usize];
            e.0 += grad[i as usize];
            e.1 += hess[i as usize];
            e.2 += 1;
        }
    }
    let missing: Vec<(f64, f64, bool)> = (0..m)
        .map(|p| {
            if stats[p].n > nm[p].2 {
                (stats[p].g - nm[p].0, stats[p].h - nm[p].1, true)
            } else {
                (0.0, 0.0, false)
            }
        })
        .collect();

    let eval = |p: usize, gl: f64, hl: f64, threshold: f64| -> Option<Candidate> {
        let (g, h) = (stats[p].g, stats[p].h);
        let (mg, mh, has_missing) = missing[p];
        let right = split_gain(gl, hl, g - gl, h - hl, lambda, gamma);
        let left = if has_missing {
            split_gain(gl + mg, hl + mh, g - gl - mg, h - hl - mh, lambda, gamma)
        } else {
            right
        };
        let (gain, missing_left) = match (left, right) {
            (Some(l), Some(r)) if l >= r => (l, true),
            (_, Some(r)) => (r, false),
            (Some(l), None) => (l, true),
            (None, None) => return None,
        };
        (gain > 0.0).then_some(Candidate {
            feature,
            threshold,
            missing_left,
            gain,
        })
    };

    let mut acc = vec![(0.0f64, 0.0f64, f64::NAN); m];
    let mut best: Vec<Option<Candidate>> = vec![None; m];
    for &i in sorted {
        let p = pos[i as usize];
        if p == u32::MAX {
            continue;
        }
        let p = p as usize;
        let x = column[i as usize];
        let (gl, hl, last) = acc[p];
        if !last.is_nan() && x > last {
            best[p] = better(best[p], eval(p, gl, hl, midpoint(last, x)));
        }
        acc[p] = (gl + grad[i as usize], hl + hess[i as usize], x);
    }
    // Separating missing from present values: every present value goes left.
    for p in 0..m {
        let (mg, mh, has_missing) = missing[p];
        if has_missing && nm[p].2 > 0 {
            let (g, h) = (stats[p].g, stats[p].h);
            let c = split_gain(g - mg, h - mh, mg, mh, lambda, gamma)
                .filter(|&gain| gain > 0.0)
                .map(|gain| Candidate {
                    feature,
                    threshold: f64::MAX,
                    missing_left: false,
                    gain,
                });
            best[p] = better(best[p], c);
        }
    }
    best
}

struct Grower<'a> {
    ds: &'a Dataset,
    sorted: &'a [Vec<u32>],
    lambda: f64,
    gamma: f64,
    eta: f64,
    max_depth: usize,
}

impl Grower<'_> {
    fn grow(&self, grad: &[f64], hess: &[f64], rows: &[usize], features: &[usize]) -> Tree {
        let n = self.ds.n_rows();
        let mut pos = vec![u32::MAX; n];
        for &i in rows {
            pos[i] = 0;
        }
        let mut nodes = vec![Node::Leaf {
            weight: 0.0,
            cover: 0.0,
        }];
        let mut frontier: Vec<usize> = vec![0];
        let mut depth = 0;
        while !frontier.is_empty() {
            let m = frontier.len();
            let mut stats = vec![NodeStats { g: 0.0, h: 0.0, n: 0 }; m];
            for i in 0..n {
                let p = pos[i];
                if p != u32::MAX {
                    let s = &mut stats[p as usize];
                    s.g += grad[i];
                    s.h += hess[i];
                    s.n += 1;
                }
            }
            let best: Vec<Option<Candidate>> = if depth < self.max_depth {
                let per_feature: Vec<Vec<Option<Candidate>>> = features
                    .par_iter()
                    .map(|&f| {
                        best_on_feature(
                            f,
                            &self.sorted[f],
                            self.ds.column(f),
                            &pos,
                            grad,
                            hess,
                            &stats,
                            self.lambda,
                            self.gamma,
                        )
                    })
                    .collect();
                (0..m)
                    .map(|p| per_feature.iter().fold(None, |acc, c| better(acc, c[p])))
                    .collect()
            } else {
                vec![None; m]
            };

            let mut next = Vec::new();
            let mut child_slot: Vec<Option<(u32, u32)>> = vec![None; m];
            for (p, &node_id) in frontier.iter().enumerate() {
                let s = stats[p];
                match best[p] {
                    Some(c) => {
                        let left = nodes.len();
                        let right = left + 1;
                        nodes.push(Node::Leaf { weight: 0.0, cover: 0.0 });
                        nodes.push(Node::Leaf { weight: 0.0, cover: 0.0 });
                        nodes[node_id] = Node::Split {
                            feature: c.feature,
                            threshold: c.threshold,
                            missing_left: c.missing_left,
                            left,
                            right,
                            gain: c.gain,
                            cover: s.h,
                        };
                        child_slot[p] = Some((next.len() as u32, next.len() as u32 + 1));
                        next.push(left);
                        next.push(right);
                    }
                    None => {
                        nodes[node_id] = Node::Leaf {
                            weight: leaf_weight(s.g, s.h, self.lambda, self.eta),
                            cover: s.h,
                        };
                    }
                }
            }
            for i in 0..n {
                let p = pos[i];
                if p == u32::MAX {
                    continue;
                }
                pos[i] = match (child_slot[p as usize], best[p as usize]) {
                    (Some((l, r)), Some(c)) => {
                        let goes_left = match self.ds.value(i, c.feature) {
                            None => c.missing_left,
                            Some(x) => x < c.threshold,
                        };
                        if goes_left {
                            l
                        } else {
                            r
                        }
                    }
                    _ => u32::MAX,
                };
            }
            frontier = next;
            depth += 1;
        }
        Tree { nodes }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainEntry {
    pub feature: String,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub feature_names: Vec<String>,
    pub params: GbtParams,
    pub base_score: f64,
    pub trees: Vec<Tree>,
    /// Share of total split gain per feature, descending; features never
    /// split on are absent.
    pub gain_table: Vec<GainEntry>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Mean training log-loss after each round.
    pub train_logloss: Vec<f64>,
    /// Holdout RMSE of the probability after each round, when a holdout is given.
    pub holdout_rmse: Vec<f64>,
}

fn presort(ds: &Dataset) -> Vec<Vec<u32>> {
    (0..ds.n_features())
        .into_par_iter()
        .map(|j| {
            let col = ds.column(j);
            let mut idx: Vec<u32> = (0..ds.n_rows() as u32)
                .filter(|&i| !col[i as usize].is_nan())
                .collect();
            idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
            idx
        })
        .collect()
}

pub fn train(ds: &Dataset, params: &GbtParams) -> Result<GbtModel, GbtError> {
    train_with_trace(ds, params, None).map(|(m, _)| m)
}

pub fn train_with_trace(
    ds: &Dataset,
    params: &GbtParams,
    holdout: Option<&Dataset>,
) -> Result<(GbtModel, TrainTrace), GbtError> {
    params.validate()?;
    let n = ds.n_rows();
    if n < 2 {
        return Err(GbtError::TooFewRows(n));
    }
    if let Some(h) = holdout {
        if h.n_features() != ds.n_features() {
            return Err(GbtError::Arity {
                expected: ds.n_features(),
                found: h.n_features(),
            });
        }
    }
    let labels = ds.labels();
    let base_score = params.base_score.unwrap_or_else(|| {
        let p = ds.prevalence().unwrap().clamp(1e-6, 1.0 - 1e-6);
        log_odds(p)
    });
    let sorted = presort(ds);
    let grower = Grower {
        ds,
        sorted: &sorted,
        lambda: params.lambda,
        gamma: params.gamma,
        eta: params.eta,
        max_depth: params.max_depth,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut margins = vec![base_score; n];
    let mut hold_margins = holdout.map(|h| vec![base_score; h.n_rows()]);
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut trace = TrainTrace::default();
    let p = ds.n_features();
    for _ in 0..params.n_trees {
        let (grad, hess) = gradients(labels, &margins);
        let rows: Vec<usize> = if params.subsample < 1.0 {
            let k = ((params.subsample * n as f64).round() as usize).clamp(1, n);
            let mut r = sample(&mut rng, n, k).into_vec();
            r.sort_unstable();
            r
        } else {
            (0..n).collect()
        };
        let features: Vec<usize> = if params.colsample < 1.0 && p > 0 {
            let k = ((params.colsample * p as f64).round() as usize).clamp(1, p);
            let mut f = sample(&mut rng, p, k).into_vec();
            f.sort_unstable();
            f
        } else {
            (0..p).collect()
        };
        let tree = grower.grow(&grad, &hess, &rows, &features);
        margins
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, m)| *m += tree.predict(|j| ds.value(i, j)));
        trace.train_logloss.push(log_loss(labels, &margins));
        if let (Some(h), Some(hm)) = (holdout, hold_margins.as_mut()) {
            hm.par_iter_mut()
                .enumerate()
                .for_each(|(i, m)| *m += tree.predict(|j| h.value(i, j)));
            trace.holdout_rmse.push(rmse(h.labels(), hm));
        }
        trees.push(tree);
    }
    let mut model = GbtModel {
        feature_names: ds.names().to_vec(),
        params: params.clone(),
        base_score,
        trees,
        gain_table: Vec::new(),
    };
    model.gain_table = model.compute_gain_table();
    Ok((model, trace))
}

impl GbtModel {
    fn check_arity(&self, row: &[Option<f64>]) -> Result<(), GbtError> {
        if row.len() != self.feature_names.len() {
            return Err(GbtError::Arity {
                expected: self.feature_names.len(),
                found: row.len(),
            });
        }
        Ok(())
    }

    pub fn predict_margin(&self, row: &[Option<f64>]) -> Result<f64, GbtError> {
        self.check_arity(row)?;
        Ok(self.margin_prefix(|j| row[j], self.trees.len()))
    }

    /// Margin using only the first `n_trees` trees.
    pub fn margin_prefix<F: Fn(usize) -> Option<f64> + Copy>(&self, get: F, n_trees: usize) -> f64 {
        self.base_score
            + self.trees[..n_trees.min(self.trees.len())]
                .iter()
                .map(|t| t.predict(get))
                .sum::<f64>()
    }

    pub fn predict_proba(&self, row: &[Option<f64>]) -> Result<f64, GbtError> {
        self.predict_margin(row).map(sigmoid)
    }

    pub fn predict_label(&self, row: &[Option<f64>]) -> Result<bool, GbtError> {
        self.predict_proba(row).map(label_from_probability)
    }

    /// Probabilities for every row of a dataset with the model's arity.
    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Vec<f64>, GbtError> {
        if ds.n_features() != self.feature_names.len() {
            return Err(GbtError::Arity {
                expected: self.feature_names.len(),
                found: ds.n_features(),
            });
        }
        Ok((0..ds.n_rows())
            .into_par_iter()
            .map(|i| sigmoid(self.margin_prefix(|j| ds.value(i, j), self.trees.len())))
            .collect())
    }

    pub fn n_leaves(&self) -> usize {
        self.trees.iter().map(Tree::n_leaves).sum()
    }

    fn compute_gain_table(&self) -> Vec<GainEntry> {
        let mut totals = vec![0.0; self.feature_names.len()];
        for t in &self.trees {
            for n in &t.nodes {
                if let Node::Split { feature, gain, .. } = *n {
                    totals[feature] += gain;
                }
            }
        }
        let sum: f64 = totals.iter().sum();
        if sum <= 0.0 {
            return Vec::new();
        }
        let mut table: Vec<GainEntry> = totals
            .iter()
            .enumerate()
            .filter(|(_, &g)| g > 0.0)
            .map(|(j, &g)| GainEntry {
                feature: self.feature_names[j].clone(),
                share: g / sum,
            })
            .collect();
        table.sort_by(|a, b| b.share.total_cmp(&a.share).then_with(|| a.feature.cmp(&b.feature)));
        table
    }

    /// Gain table without entries below `min_share`.
    pub fn feature_gain(&self, min_share: f64) -> Vec<GainEntry> {
        self.gain_table
            .iter()
            .filter(|e| e.share >= min_share)
            .cloned()
            .collect()
    }

    pub fn to_writer<W: Write>(&self, w: W) -> Result<(), GbtError> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn from_reader<R: Read>(r: R) -> Result<Self, GbtError> {
        Ok(serde_json::from_reader(r)?)
    }
}

pub fn write_gain_table<W: Write>(writer: W, table: &[GainEntry]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["feature", "gain_share"])?;
    for e in table {
        w.write_record([e.feature.clone(), e.share.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rmse_curve<W: Write>(writer: W, curve: &[f64]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["round", "holdout_rmse"])?;
    for (k, v) in curve.iter().enumerate() {
        w.write_record([(k + 1).to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub eta: Vec<f64>,
    pub n_trees: Vec<usize>,
    pub max_depth: Vec<usize>,
    pub subsample: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        let mut eta: Vec<f64> = (1..=10).map(|k| k as f64 / 100.0).collect();
        eta.extend([0.2, 0.3, 0.5]);
        GridSpec {
            eta,
            n_trees: (1..=10).map(|k| k * 50).collect(),
            max_depth: (3..=20).collect(),
            subsample: (2..=10).map(|k| k as f64 / 10.0).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCell {
    pub eta: f64,
    pub n_trees: usize,
    pub max_depth: usize,
    pub subsample: f64,
    /// Holdout RMSE after each round up to `n_trees`.
    pub rmse_curve: Vec<f64>,
    pub rmse: f64,
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub best: GbtParams,
    pub cells: Vec<GridCell>,
}

/// Exhaustive search over the grid, scored by holdout RMSE after the last
/// round. Ties go to smaller depth, then fewer trees, then larger subsample.
/// One model per (eta, depth, subsample) is trained with the largest tree
/// count; smaller counts are read off its prefix.
pub fn grid_search(
    train_ds: &Dataset,
    holdout: &Dataset,
    grid: &GridSpec,
    base: &GbtParams,
) -> Result<GridOutcome, GbtError> {
    if holdout.n_rows() == 0 {
        return Err(GbtError::EmptyHoldout);
    }
    let max_trees = *grid
        .n_trees
        .iter()
        .max()
        .ok_or_else(|| GbtError::InvalidParam("empty n_trees grid".into()))?;
    if grid.eta.is_empty() || grid.max_depth.is_empty() || grid.subsample.is_empty() {
        return Err(GbtError::InvalidParam("empty grid axis".into()));
    }
    let mut combos = Vec::new();
    for &eta in &grid.eta {
        for &d in &grid.max_depth {
            for &s in &grid.subsample {
                combos.push((eta, d, s));
            }
        }
    }
    let curves: Vec<(f64, usize, f64, Vec<f64>)> = combos
        .par_iter()
        .map(|&(eta, d, s)| {
            let params = GbtParams {
                eta,
                max_depth: d,
                subsample: s,
                n_trees: max_trees,
                n_passes: None,
                ..base.clone()
            };
            train_with_trace(train_ds, &params, Some(holdout)).map(|(_, t)| (eta, d, s, t.holdout_rmse))
        })
        .collect::<Result<_, _>>()?;
    let mut cells = Vec::new();
    for (eta, d, s, curve) in curves {
        for &nt in &grid.n_trees {
            let c = curve[..nt].to_vec();
            cells.push(GridCell {
                eta,
                n_trees: nt,
                max_depth: d,
                subsample: s,
                rmse: *c.last().unwrap(),
                rmse_curve: c,
            });
        }
    }
    let best = cells
        .iter()
        .min_by(|a, b| {
            a.rmse
                .total_cmp(&b.rmse)
                .then(a.max_depth.cmp(&b.max_depth))
                .then(a.n_trees.cmp(&b.n_trees))
                .then(b.subsample.total_cmp(&a.subsample))
                .then(a.eta.total_cmp(&b.eta))
        })
        .unwrap();
    Ok(GridOutcome {
        best: GbtParams {
            eta: best.eta,
            n_trees: best.n_trees,
            max_depth: best.max_depth,
            subsample: best.subsample,
            n_passes: None,
            ..base.clone()
        },
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn ds(rows: Vec<Vec<Option<f64>>>, labels: Vec<f64>) -> Dataset {
        let p = rows.first().map(|r| r.len()).unwrap_or(0);
        Dataset::new((0..p).map(|j| format!("x{j}")).collect(), &rows, labels).unwrap()
    }

    fn random_ds(seed: u64, n: usize, p: usize, missing: f64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<Option<f64>>> = (0..n)
            .map(|_| {
                (0..p)
                    .map(|_| (rng.random::<f64>() >= missing).then(|| rng.random_range(-3.0..3.0f64)))
                    .collect()
            })
            .collect();
        let labels = rows
            .iter()
            .map(|r| {
                let z = r[0].unwrap_or(1.0) * 1.5 - r.get(1).copied().flatten().unwrap_or(0.0);
                if rng.random::<f64>() < sigmoid(z) { 1.0 } else { 0.0 }
            })
            .collect();
        ds(rows, labels)
    }

    #[test]
    fn symmetric_pair_gives_zero_leaf() {
        let d = ds(vec![vec![Some(1.0)], vec![Some(1.0)]], vec![1.0, 0.0]);
        let params = GbtParams { max_depth: 1, n_trees: 1, base_score: Some(0.0), ..Default::default() };
        let m = train(&d, &params).unwrap();
        assert_eq!(m.trees[0].nodes.len(), 1);
        assert_eq!(m.predict_proba(&[Some(1.0)]).unwrap(), 0.5);
        assert!(m.gain_table.is_empty());
    }

    #[test]
    fn single_leaf_newton_step() {
        let d = ds(vec![vec![Some(1.0)], vec![Some(2.0)]], vec![1.0, 1.0]);
        let params = GbtParams { max_depth: 1, n_trees: 1, base_score: Some(0.0), ..Default::default() };
        let m = train(&d, &params).unwrap();
        // Both rows have g = -0.5, so no split has positive gain.
        let margin = m.predict_margin(&[Some(1.0)]).unwrap();
        assert!((margin - 0.2).abs() < 1e-12);
        assert!((m.predict_proba(&[Some(1.0)]).unwrap() - 0.549_833_997_312_478).abs() < 1e-12);
    }

    #[test]
    fn empty_ensemble_and_label_rule() {
        let m = GbtModel {
            feature_names: vec!["x".into()],
            params: GbtParams::default(),
            base_score: 0.0,
            trees: vec![],
            gain_table: vec![],
        };
        assert_eq!(m.predict_proba(&[None]).unwrap(), 0.5);
        assert!(m.predict_label(&[None]).unwrap());
        assert!(!label_from_probability(0.49));
        assert!(label_from_probability(0.62));
        assert!(matches!(m.predict_proba(&[]), Err(GbtError::Arity { .. })));
    }

    #[test]
    fn param_validation() {
        let bad = [
            GbtParams { n_trees: 0, ..Default::default() },
            GbtParams { max_depth: 0, ..Default::default() },
            GbtParams { subsample: 0.0, ..Default::default() },
            GbtParams { colsample: 1.5, ..Default::default() },
            GbtParams { gamma: -1.0, ..Default::default() },
            GbtParams { lambda: -0.1, ..Default::default() },
            GbtParams { n_passes: Some(3), ..Default::default() },
        ];
        for p in bad {
            assert!(p.validate().is_err(), "{p:?}");
        }
        let d = ds(vec![vec![Some(1.0)]], vec![1.0]);
        assert!(matches!(train(&d, &GbtParams::default()), Err(GbtError::TooFewRows(1))));
    }

    #[test]
    fn single_split_owns_all_gain() {
        let d = ds(
            vec![vec![Some(0.0)], vec![Some(1.0)], vec![Some(2.0)], vec![Some(3.0)]],
            vec![0.0, 0.0, 1.0, 1.0],
        );
        let params = GbtParams { max_depth: 1, n_trees: 1, gamma: 0.0, ..Default::default() };
        let m = train(&d, &params).unwrap();
        assert_eq!(m.gain_table, vec![GainEntry { feature: "x0".into(), share: 1.0 }]);
        match m.trees[0].nodes[0] {
            Node::Split { threshold, .. } => assert_eq!(threshold, 1.5),
            _ => panic!("expected a split"),
        }
    }

    #[test]
    fn missing_values_follow_learned_direction() {
        // Missing rows behave like the high group.
        let rows = vec![
            vec![Some(0.0)], vec![Some(0.5)], vec![Some(1.0)],
            vec![Some(5.0)], vec![Some(6.0)], vec![None], vec![None],
        ];
        let d = ds(rows, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        let params = GbtParams { max_depth: 1, n_trees: 1, gamma: 0.0, ..Default::default() };
        let m = train(&d, &params).unwrap();
        match m.trees[0].nodes[0] {
            Node::Split { missing_left, threshold, .. } => {
                assert!(!missing_left);
                assert_eq!(threshold, 3.0);
            }
            _ => panic!("expected a split"),
        }
        assert!(m.predict_proba(&[None]).unwrap() > m.predict_proba(&[Some(0.0)]).unwrap());
    }

    #[test]
    fn depth_and_leaf_weights_respect_params() {
        let d = random_ds(3, 300, 4, 0.1);
        let params = GbtParams { max_depth: 3, n_trees: 5, gamma: 0.0, ..Default::default() };
        let m = train(&d, &params).unwrap();
        for t in &m.trees {
            assert!(t.depth() <= 3);
            for n in &t.nodes {
                if let Node::Split { threshold, .. } = n {
                    assert!(threshold.is_finite());
                }
            }
        }
        let s: f64 = m.gain_table.iter().map(|e| e.share).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn training_is_deterministic_with_sampling() {
        let d = random_ds(5, 400, 6, 0.2);
        let params = GbtParams { subsample: 0.7, colsample: 0.5, seed: 11, ..Default::default() };
        let a = serde_json::to_string(&train(&d, &params).unwrap()).unwrap();
        let b = serde_json::to_string(&train(&d, &params).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn model_json_round_trip() {
        let d = random_ds(8, 200, 3, 0.1);
        let m = train(&d, &GbtParams::default()).unwrap();
        let mut buf = Vec::new();
        m.to_writer(&mut buf).unwrap();
        let back = GbtModel::from_reader(buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rmse_curve_contracts() {
        let d = random_ds(1, 200, 3, 0.0);
        let (_, trace) = train_with_trace(&d, &GbtParams::default(), Some(&d)).unwrap();
        assert_eq!(trace.holdout_rmse.len(), 10);

        let zero = GbtParams { eta: 0.0, ..Default::default() };
        let (_, trace) = train_with_trace(&d, &zero, Some(&d)).unwrap();
        assert!(trace.holdout_rmse.windows(2).all(|w| w[0] == w[1]));

        let ones = ds((0..50).map(|i| vec![Some(i as f64)]).collect(), vec![1.0; 50]);
        let p = GbtParams { base_score: Some(0.0), n_trees: 30, ..Default::default() };
        let (_, trace) = train_with_trace(&ones, &p, Some(&ones)).unwrap();
        assert!(trace.holdout_rmse.windows(2).all(|w| w[1] <= w[0]));
        assert!(*trace.holdout_rmse.last().unwrap() < 0.05);
    }

    #[test]
    fn grid_single_cell_and_dominance() {
        let d = random_ds(2, 300, 3, 0.0);
        let h = random_ds(4, 150, 3, 0.0);
        let one = GridSpec { eta: vec![0.3], n_trees: vec![5], max_depth: vec![2], subsample: vec![1.0] };
        let out = grid_search(&d, &h, &one, &GbtParams::default()).unwrap();
        assert_eq!(out.cells.len(), 1);
        assert_eq!((out.best.eta, out.best.n_trees, out.best.max_depth), (0.3, 5, 2));

        // eta 0 never learns, so the learning cell dominates at every round.
        let two = GridSpec { eta: vec![0.0, 0.3], ..one };
        let out = grid_search(&d, &h, &two, &GbtParams::default()).unwrap();
        assert_eq!(out.best.eta, 0.3);

        let empty = h.subset(&[]);
        assert!(matches!(grid_search(&d, &empty, &GridSpec::default(), &GbtParams::default()), Err(GbtError::EmptyHoldout)));
    }

    #[test]
    fn grid_prefers_depth_for_interactions() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let make = |rng: &mut ChaCha8Rng, n: usize| {
            let rows: Vec<Vec<Option<f64>>> = (0..n)
                .map(|_| vec![Some(rng.random_range(-1.0..1.0)), Some(rng.random_range(-1.0..1.0))])
                .collect();
            let labels = rows
                .iter()
                .map(|r| {
                    let xor = (r[0].unwrap() > 0.0) != (r[1].unwrap() > 0.0);
                    let p = if xor { 0.9 } else { 0.1 };
                    if rng.random::<f64>() < p { 1.0 } else { 0.0 }
                })
                .collect();
            ds(rows, labels)
        };
        let d = make(&mut rng, 600);
        let h = make(&mut rng, 300);
        let grid = GridSpec { eta: vec![0.3], n_trees: vec![10], max_depth: vec![1, 2], subsample: vec![1.0] };
        let params = GbtParams { gamma: 0.0, ..Default::default() };
        let out = grid_search(&d, &h, &grid, &params).unwrap();
        assert!(out.best.max_depth >= 2);
    }

    #[test]
    fn refit_shrinks_with_lambda() {
        let d = random_ds(9, 200, 3, 0.1);
        let m = train(&d, &GbtParams { n_trees: 1, gamma: 0.0, ..Default::default() }).unwrap();
        let margins = vec![m.base_score; d.n_rows()];
        let (g, h) = gradients(d.labels(), &margins);
        let max_abs = |t: &Tree| {
            t.nodes.iter().filter_map(|n| match n { Node::Leaf { weight, .. } => Some(weight.abs()), _ => None }).fold(0.0, f64::max)
        };
        let ws: Vec<f64> = [0.0, 1.0, 10.0, 100.0].iter().map(|&l| max_abs(&m.trees[0].refit(&d, &g, &h, l, 0.3))).collect();
        assert!(ws.windows(2).all(|w| w[1] <= w[0]), "{ws:?}");
        assert_eq!(m.trees[0].refit(&d, &g, &h, 1.0, 0.3), m.trees[0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn probabilities_in_open_interval(seed in 0u64..1000) {
            let d = random_ds(seed, 60, 3, 0.2);
            let m = train(&d, &GbtParams { n_trees: 3, ..Default::default() }).unwrap();
            for i in 0..d.n_rows() {
                let p = m.predict_proba(&d.row(i)).unwrap();
                prop_assert!(p > 0.0 && p < 1.0);
            }
        }

        #[test]
        fn logloss_non_increasing_without_gamma(seed in 0u64..1000) {
            let d = random_ds(seed, 120, 4, 0.15);
            let p = GbtParams { gamma: 0.0, ..Default::default() };
            let (_, trace) = train_with_trace(&d, &p, None).unwrap();
            let start = log_loss(d.labels(), &vec![log_odds(d.prevalence().unwrap().clamp(1e-6, 1.0 - 1e-6)); d.n_rows()]);
            prop_assert!(trace.train_logloss[0] <= start + 1e-12);
            for w in trace.train_logloss.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12, "{:?}", trace.train_logloss);
            }
        }

        #[test]
        fn leaf_count_non_increasing_in_gamma(seed in 0u64..1000) {
            let d = random_ds(seed, 150, 4, 0.1);
            let counts: Vec<usize> = [0.0, 0.25, 1.0, 4.0]
                .iter()
                .map(|&g| train(&d, &GbtParams { gamma: g, n_trees: 1, ..Default::default() }).unwrap().n_leaves())
                .collect();
            prop_assert!(counts.windows(2).all(|w| w[1] <= w[0]), "{:?}", counts);
        }
    }
}
