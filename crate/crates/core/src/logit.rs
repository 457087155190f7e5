//! Logistic-regression baseline fitted by iteratively reweighted least squares.
//!
//! Inputs are standardized per column; missing values are replaced by the
//! column mean (zero after standardization) and constant or all-missing
//! columns are dropped. The objective is the mean negative log-likelihood
//! plus `½ · l2 · ‖β‖²` on the slopes.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::gbt::{label_from_probability, sigmoid};

#[derive(Debug, Error)]
pub enum LogitError {
    #[error("dataset has no rows")]
    Empty,
    #[error("row has {found} features, model expects {expected}")]
    Arity { expected: usize, found: usize },
    #[error("normal equations are singular")]
    Singular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogitOptions {
    pub l2_penalty: f64,
    pub max_iter: usize,
    /// Stop once the gradient norm of the objective falls below this.
    pub tol: f64,
}

impl Default for LogitOptions {
    fn default() -> Self {
        LogitOptions {
            l2_penalty: 1e-6,
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub feature: String,
    /// Position in the input row.
    pub index: usize,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitModel {
    pub n_inputs: usize,
    pub columns: Vec<ColumnScale>,
    pub intercept: f64,
    /// Slopes on the standardized scale, aligned with `columns`.
    pub coefficients: Vec<f64>,
    pub convergence: Convergence,
}

fn scales(ds: &Dataset) -> Vec<ColumnScale> {
    let mut out = Vec::new();
    for j in 0..ds.n_features() {
        let present: Vec<f64> = ds.column(j).iter().copied().filter(|x| !x.is_nan()).collect();
        if present.is_empty() {
            continue;
        }
        let n = present.len() as f64;
        let mean = present.iter().sum::<f64>() / n;
        let sd = (present.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        if sd > 0.0 && sd.is_finite() {
            out.push(ColumnScale {
                feature: ds.names()[j].clone(),
                index: j,
                mean,
                sd,
            });
        }
    }
    out
}

fn standardized(x: Option<f64>, s: &ColumnScale) -> f64 {
    x.map_or(0.0, |v| (v - s.mean) / s.sd)
}

pub fn fit_logit(ds: &Dataset, opts: &LogitOptions) -> Result<LogitModel, LogitError> {
    let n = ds.n_rows();
    if n == 0 {
        return Err(LogitError::Empty);
    }
    let columns = scales(ds);
    let k = columns.len() + 1;
    let mut x = DMatrix::<f64>::zeros(n, k);
    for i in 0..n {
        x[(i, 0)] = 1.0;
    }
    for (c, s) in columns.iter().enumerate() {
        for i in 0..n {
            x[(i, c + 1)] = standardized(ds.value(i, s.index), s);
        }
    }
    let y = DVector::from_column_slice(ds.labels());
    let nf = n as f64;
    let mut beta = DVector::<f64>::zeros(k);

    let gradient = |beta: &DVector<f64>| -> (DVector<f64>, DVector<f64>) {
        let p = (&x * beta).map(sigmoid);
        let mut g = x.transpose() * (&p - &y) / nf;
        for j in 1..k {
            g[j] += opts.l2_penalty * beta[j];
        }
        (g, p)
    };

    let (mut g, mut p) = gradient(&beta);
    let mut iterations = 0;
    while g.norm() >= opts.tol && iterations < opts.max_iter {
        let w = p.map(|v| v * (1.0 - v));
        let mut xw = x.clone();
        for i in 0..n {
            xw.row_mut(i).scale_mut(w[i]);
        }
        let mut h = x.transpose() * xw / nf;
        for j in 1..k {
            h[(j, j)] += opts.l2_penalty;
        }
        let step = match h.clone().cholesky() {
            Some(ch) => ch.solve(&g),
            None => h.lu().solve(&g).ok_or(LogitError::Singular)?,
        };
        beta -= step;
        iterations += 1;
        (g, p) = gradient(&beta);
    }
    let gradient_norm = g.norm();
    let converged = gradient_norm < opts.tol;
    if !converged {
        log::warn!(
            "logit did not converge in {iterations} iterations (gradient norm {gradient_norm:e})"
        );
    }
    Ok(LogitModel {
        n_inputs: ds.n_features(),
        columns,
        intercept: beta[0],
        coefficients: beta.iter().skip(1).copied().collect(),
        convergence: Convergence {
            iterations,
            gradient_norm,
            converged,
        },
    })
}

impl LogitModel {
    pub fn predict_margin(&self, row: &[Option<f64>]) -> Result<f64, LogitError> {
        if row.len() != self.n_inputs {
            return Err(LogitError::Arity {
                expected: self.n_inputs,
                found: row.len(),
            });
        }
        Ok(self.intercept
            + self
                .columns
                .iter()
                .zip(&self.coefficients)
                .map(|(s, b)| b * standardized(row[s.index], s))
                .sum::<f64>())
    }

    /// Probability and the purchase label under the shared 0.5 rule.
    pub fn predict_logit(&self, row: &[Option<f64>]) -> Result<(f64, bool), LogitError> {
        let p = sigmoid(self.predict_margin(row)?);
        Ok((p, label_from_probability(p)))
    }

    pub fn write_coefficients<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["feature", "coefficient", "mean", "sd"])?;
        w.write_record(["(intercept)", &self.intercept.to_string(), "", ""])?;
        for (s, b) in self.columns.iter().zip(&self.coefficients) {
            w.write_record([
                s.feature.clone(),
                b.to_string(),
                s.mean.to_string(),
                s.sd.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ds(rows: Vec<Vec<Option<f64>>>, labels: Vec<f64>) -> Dataset {
        let p = rows[0].len();
        Dataset::new((0..p).map(|j| format!("x{j}")).collect(), &rows, labels).unwrap()
    }

    #[test]
    fn mirrored_data_has_zero_intercept() {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for x in [0.5, 1.0, 2.0, 3.0] {
            rows.push(vec![Some(x)]);
            labels.push(1.0);
            rows.push(vec![Some(-x)]);
            labels.push(0.0);
        }
        // Flip one pair each way so the data is not separable.
        rows.push(vec![Some(0.2)]);
        labels.push(0.0);
        rows.push(vec![Some(-0.2)]);
        labels.push(1.0);
        let m = fit_logit(&ds(rows, labels), &LogitOptions::default()).unwrap();
        assert!(m.intercept.abs() < 1e-9);
        assert!(m.coefficients[0] > 0.0);
        assert!(m.convergence.converged);
    }

    #[test]
    fn all_negative_labels() {
        let rows = (0..20).map(|i| vec![Some(i as f64), Some((i * 7 % 5) as f64)]).collect();
        let m = fit_logit(&ds(rows, vec![0.0; 20]), &LogitOptions::default()).unwrap();
        assert!(m.intercept < -10.0);
        assert!(m.coefficients.iter().all(|b| b.abs() < 1e-3));
    }

    #[test]
    fn constant_and_missing_columns_are_dropped() {
        let rows = (0..10)
            .map(|i| vec![Some(1.0), None, Some(i as f64), if i % 3 == 0 { None } else { Some(i as f64 * 2.0) }])
            .collect();
        let labels = (0..10).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect();
        let m = fit_logit(&ds(rows, labels), &LogitOptions::default()).unwrap();
        let kept: Vec<usize> = m.columns.iter().map(|c| c.index).collect();
        assert_eq!(kept, vec![2, 3]);
        let (p0, _) = m.predict_logit(&[None, None, Some(m.columns[0].mean), None]).unwrap();
        assert!((p0 - sigmoid(m.intercept)).abs() < 1e-15);
        assert!(matches!(m.predict_logit(&[None]), Err(LogitError::Arity { .. })));
    }

    #[test]
    fn monotone_in_positive_coefficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<Vec<Option<f64>>> = (0..200).map(|_| vec![Some(rng.random_range(-2.0..2.0))]).collect();
        let labels = rows.iter().map(|r| if rng.random::<f64>() < sigmoid(2.0 * r[0].unwrap()) { 1.0 } else { 0.0 }).collect();
        let m = fit_logit(&ds(rows, labels), &LogitOptions::default()).unwrap();
        assert!(m.coefficients[0] > 0.0);
        let (a, _) = m.predict_logit(&[Some(0.0)]).unwrap();
        let (b, _) = m.predict_logit(&[Some(1.0)]).unwrap();
        assert!(b > a);
        assert!(m.convergence.gradient_norm < 1e-8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]

        #[test]
        fn affine_rescaling_leaves_predictions_unchanged(seed in 0u64..500, a in prop_oneof![-5.0f64..-0.2, 0.2f64..5.0], c in -100.0f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<Option<f64>>> = (0..80)
                .map(|_| (0..3).map(|_| (rng.random::<f64>() > 0.1).then(|| rng.random_range(-2.0..2.0))).collect())
                .collect();
            let labels: Vec<f64> = rows.iter().map(|r| {
                let z = r[0].unwrap_or(0.0) - 0.5 * r[1].unwrap_or(0.0);
                if rng.random::<f64>() < sigmoid(z) { 1.0 } else { 0.0 }
            }).collect();
            let scaled: Vec<Vec<Option<f64>>> = rows.iter().map(|r| {
                let mut r = r.clone();
                r[1] = r[1].map(|x| a * x + c);
                r
            }).collect();
            let opts = LogitOptions { tol: 1e-10, ..Default::default() };
            let m1 = fit_logit(&ds(rows.clone(), labels.clone()), &opts).unwrap();
            let m2 = fit_logit(&ds(scaled.clone(), labels), &opts).unwrap();
            for (r1, r2) in rows.iter().zip(&scaled) {
                let (p1, _) = m1.predict_logit(r1).unwrap();
                let (p2, _) = m2.predict_logit(r2).unwrap();
                prop_assert!((p1 - p2).abs() < 1e-7);
            }
        }
    }
}
