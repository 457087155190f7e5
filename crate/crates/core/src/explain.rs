//! Per-prediction log-odds attribution for tree ensembles.
//!
//! Each node's expected value is the cover-weighted mean of the leaves below
//! it. Walking a row from the root to its leaf, every step credits the split
//! feature with the change in expected value. The root expectations of all
//! trees plus the ensemble's base score form the intercept, so the intercept
//! plus all contributions equals the model's margin.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::gbt::{sigmoid, GbtError, GbtModel, Node, Tree};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Explanation {
    /// Intercept in log-odds.
    pub base: f64,
    /// Per-feature log-odds, sorted by absolute value, largest first.
    pub contributions: Vec<(String, f64)>,
    pub final_log_odds: f64,
    pub final_probability: f64,
}

/// Expected value of every node of every tree, computed once per model.
pub struct Explainer<'a> {
    model: &'a GbtModel,
    expected: Vec<Vec<f64>>,
}

fn node_expectations(tree: &Tree) -> Vec<f64> {
    fn go(nodes: &[Node], at: usize, out: &mut [f64]) -> f64 {
        let v = match nodes[at] {
            Node::Leaf { weight, .. } => weight,
            Node::Split { left, right, .. } => {
                let el = go(nodes, left, out);
                let er = go(nodes, right, out);
                let (cl, cr) = (nodes[left].cover(), nodes[right].cover());
                if cl + cr > 0.0 {
                    (cl * el + cr * er) / (cl + cr)
                } else {
                    0.5 * (el + er)
                }
            }
        };
        out[at] = v;
        v
    }
    let mut out = vec![0.0; tree.nodes.len()];
    go(&tree.nodes, 0, &mut out);
    out
}

impl<'a> Explainer<'a> {
    pub fn new(model: &'a GbtModel) -> Self {
        Explainer {
            model,
            expected: model.trees.iter().map(node_expectations).collect(),
        }
    }

    pub fn explain(&self, row: &[Option<f64>]) -> Result<Explanation, GbtError> {
        let names = &self.model.feature_names;
        if row.len() != names.len() {
            return Err(GbtError::Arity {
                expected: names.len(),
                found: row.len(),
            });
        }
        let mut base = self.model.base_score;
        let mut by_feature: BTreeMap<usize, f64> = BTreeMap::new();
        for (tree, ev) in self.model.trees.iter().zip(&self.expected) {
            let path = tree.path(|j| row[j]);
            base += ev[0];
            for w in path.windows(2) {
                if let Node::Split { feature, .. } = tree.nodes[w[0]] {
                    *by_feature.entry(feature).or_insert(0.0) += ev[w[1]] - ev[w[0]];
                }
            }
        }
        let mut contributions: Vec<(String, f64)> = by_feature
            .into_iter()
            .map(|(j, c)| (names[j].clone(), c))
            .collect();
        contributions.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then_with(|| a.0.cmp(&b.0)));
        let final_log_odds = base + contributions.iter().map(|c| c.1).sum::<f64>();
        Ok(Explanation {
            base,
            contributions,
            final_log_odds,
            final_probability: sigmoid(final_log_odds),
        })
    }
}

pub fn explain_prediction(model: &GbtModel, row: &[Option<f64>]) -> Result<Explanation, GbtError> {
    Explainer::new(model).explain(row)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaterfallBar {
    pub feature: String,
    pub log_odds: f64,
    pub cumulative_log_odds: f64,
    pub cumulative_probability: f64,
    /// Change in probability caused by this bar.
    pub probability_delta: f64,
}

/// Bars in display order: the intercept first, then contributions by
/// decreasing magnitude.
pub fn waterfall(exp: &Explanation) -> Vec<WaterfallBar> {
    let mut bars = vec![WaterfallBar {
        feature: "intercept".into(),
        log_odds: exp.base,
        cumulative_log_odds: exp.base,
        cumulative_probability: sigmoid(exp.base),
        probability_delta: sigmoid(exp.base),
    }];
    let mut cum = exp.base;
    for (f, c) in &exp.contributions {
        let before = sigmoid(cum);
        cum += c;
        bars.push(WaterfallBar {
            feature: f.clone(),
            log_odds: *c,
            cumulative_log_odds: cum,
            cumulative_probability: sigmoid(cum),
            probability_delta: sigmoid(cum) - before,
        });
    }
    bars
}

/// Text report plus plot data. A `*` marks bars where the running
/// probability crosses the 0.5 purchase cut-off.
pub fn render_waterfall<W: Write, P: Write>(
    exp: &Explanation,
    text: &mut W,
    plot: P,
) -> std::io::Result<()> {
    let bars = waterfall(exp);
    writeln!(
        text,
        "{:<28} {:>10} {:>10} {:>10}",
        "feature", "log_odds", "delta_p", "cum_p"
    )?;
    let mut prev = None;
    for b in &bars {
        let crossed = prev.is_some_and(|p: f64| (p >= 0.5) != (b.cumulative_probability >= 0.5));
        writeln!(
            text,
            "{:<28} {:>+10.4} {:>+10.4} {:>10.4}{}",
            b.feature,
            b.log_odds,
            b.probability_delta,
            b.cumulative_probability,
            if crossed { " *" } else { "" }
        )?;
        prev = Some(b.cumulative_probability);
    }
    writeln!(
        text,
        "final log-odds {:.6}, probability {:.6}, cut-off 0.5",
        exp.final_log_odds, exp.final_probability
    )?;
    let mut w = csv::Writer::from_writer(plot);
    w.write_record([
        "feature",
        "log_odds",
        "cumulative_log_odds",
        "cumulative_probability",
        "probability_delta",
    ])?;
    for b in &bars {
        w.write_record([
            b.feature.clone(),
            b.log_odds.to_string(),
            b.cumulative_log_odds.to_string(),
            b.cumulative_probability.to_string(),
            b.probability_delta.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Dataset;
    use crate::gbt::{train, GbtParams};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(trees: Vec<Tree>, base: f64, p: usize) -> GbtModel {
        GbtModel {
            feature_names: (0..p).map(|j| format!("x{j}")).collect(),
            params: GbtParams::default(),
            base_score: base,
            trees,
            gain_table: vec![],
        }
    }

    fn random_ds(seed: u64, n: usize, p: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<Option<f64>>> = (0..n)
            .map(|_| (0..p).map(|_| (rng.random::<f64>() > 0.15).then(|| rng.random_range(0.0..10.0))).collect())
            .collect();
        let labels = rows
            .iter()
            .map(|r| {
                let z = (r[0].unwrap_or(5.0) - 5.0) * 0.8 + if r[1].unwrap_or(0.0) > 6.0 { 1.5 } else { -0.5 };
                if rng.random::<f64>() < sigmoid(z) { 1.0 } else { 0.0 }
            })
            .collect();
        Dataset::new((0..p).map(|j| format!("x{j}")).collect(), &rows, labels).unwrap()
    }

    #[test]
    fn single_leaf_goes_to_base() {
        let m = model(vec![Tree { nodes: vec![Node::Leaf { weight: 0.2, cover: 3.0 }] }], -0.5, 1);
        let e = explain_prediction(&m, &[None]).unwrap();
        assert!((e.base - (-0.3)).abs() < 1e-15);
        assert!(e.contributions.is_empty());
        assert_eq!(waterfall(&e).len(), 1);
    }

    #[test]
    fn depth_one_hand_computation() {
        // 4 rows, base 0: covers are 0.25 per row, two rows on each side.
        let tree = Tree {
            nodes: vec![
                Node::Split { feature: 0, threshold: 1.5, missing_left: true, left: 1, right: 2, gain: 1.0, cover: 1.0 },
                Node::Leaf { weight: -0.4, cover: 0.75 },
                Node::Leaf { weight: 0.6, cover: 0.25 },
            ],
        };
        let m = model(vec![tree], 0.0, 1);
        let mean = (0.75 * -0.4 + 0.25 * 0.6) / 1.0;
        let e = explain_prediction(&m, &[Some(2.0)]).unwrap();
        assert!((e.base - mean).abs() < 1e-15);
        assert_eq!(e.contributions.len(), 1);
        assert!((e.contributions[0].1 - (0.6 - mean)).abs() < 1e-15);
        assert!((e.final_log_odds - 0.6).abs() < 1e-15);
    }

    #[test]
    fn waterfall_orders_by_magnitude() {
        let e = Explanation {
            base: -0.28,
            contributions: vec![("rating_ife".into(), 0.47), ("mean7d_yy".into(), 0.22)],
            final_log_odds: 0.41,
            final_probability: sigmoid(0.41),
        };
        let bars = waterfall(&e);
        assert_eq!(bars[1].feature, "rating_ife");
        assert!(bars.iter().all(|b| b.cumulative_probability > 0.0 && b.cumulative_probability < 1.0));
        let mut text = Vec::new();
        let mut plot = Vec::new();
        render_waterfall(&e, &mut text, &mut plot).unwrap();
        let text = String::from_utf8(text).unwrap();
        assert!(text.lines().nth(2).unwrap().ends_with('*'));
        assert_eq!(String::from_utf8(plot).unwrap().lines().count(), 4);
    }

    #[test]
    fn column_permutation_permutes_keys_only() {
        let d = random_ds(3, 300, 3);
        let m = train(&d, &GbtParams::default()).unwrap();
        let perm = [2usize, 0, 1]; // new column k holds old column perm[k]
        let inv: Vec<usize> = (0..3).map(|old| perm.iter().position(|&p| p == old).unwrap()).collect();
        let mut pm = m.clone();
        pm.feature_names = perm.iter().map(|&o| m.feature_names[o].clone()).collect();
        for t in &mut pm.trees {
            for n in &mut t.nodes {
                if let Node::Split { feature, .. } = n {
                    *feature = inv[*feature];
                }
            }
        }
        for i in 0..d.n_rows() {
            let row = d.row(i);
            let prow: Vec<Option<f64>> = perm.iter().map(|&o| row[o]).collect();
            let a = explain_prediction(&m, &row).unwrap();
            let b = explain_prediction(&pm, &prow).unwrap();
            let ma: BTreeMap<_, _> = a.contributions.into_iter().collect();
            let mb: BTreeMap<_, _> = b.contributions.into_iter().collect();
            assert_eq!(ma, mb);
            assert_eq!(a.base, b.base);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn additivity(seed in 0u64..1000, depth in 1usize..6) {
            let d = random_ds(seed, 200, 4);
            let m = train(&d, &GbtParams { max_depth: depth, gamma: 0.0, ..Default::default() }).unwrap();
            let ex = Explainer::new(&m);
            for i in 0..d.n_rows() {
                let row = d.row(i);
                let e = ex.explain(&row).unwrap();
                let p = m.predict_proba(&row).unwrap();
                let sum = e.base + e.contributions.iter().map(|c| c.1).sum::<f64>();
                prop_assert!((sigmoid(sum) - p).abs() <= 1e-9);
                prop_assert!((e.final_probability - p).abs() <= 1e-9);
            }
        }
    }
}
