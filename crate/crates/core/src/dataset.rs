//! Column-major numeric matrix shared by the learners.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::features::{feature_columns, FeatureVector};

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("dataset has no rows")]
    Empty,
    #[error("row {row} has {found} values, expected {expected}")]
    Arity {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}, column {column}: non-finite value (use a missing marker instead)")]
    NonFinite { row: usize, column: String },
    #[error("row {row}: label {value} is not 0 or 1")]
    Label { row: usize, value: f64 },
    #[error("{rows} rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
}

/// Features with explicit missing values and 0/1 labels. Missing values are
/// stored as NaN internally; NaN is rejected on input.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    labels: Vec<f64>,
}

impl Dataset {
    pub fn new(
        names: Vec<String>,
        rows: &[Vec<Option<f64>>],
        labels: Vec<f64>,
    ) -> Result<Self, DataError> {
        if rows.len() != labels.len() {
            return Err(DataError::LengthMismatch {
                rows: rows.len(),
                labels: labels.len(),
            });
        }
        let p = names.len();
        let mut columns = vec![Vec::with_capacity(rows.len()); p];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(DataError::Arity {
                    row: i,
                    expected: p,
                    found: row.len(),
                });
            }
            for (j, v) in row.iter().enumerate() {
                let x = match v {
                    Some(x) if !x.is_finite() => {
                        return Err(DataError::NonFinite {
                            row: i,
                            column: names[j].clone(),
                        })
                    }
                    Some(x) => *x,
                    None => f64::NAN,
                };
                columns[j].push(x);
            }
        }
        for (i, &y) in labels.iter().enumerate() {
            if y != 0.0 && y != 1.0 {
                return Err(DataError::Label { row: i, value: y });
            }
        }
        Ok(Dataset {
            names,
            columns,
            labels,
        })
    }

    pub fn from_feature_vectors(rows: &[FeatureVector]) -> Result<Self, DataError> {
        let values: Vec<Vec<Option<f64>>> = rows.iter().map(|r| r.values.clone()).collect();
        let labels = rows.iter().map(|r| if r.is_bought { 1.0 } else { 0.0 }).collect();
        Dataset::new(feature_columns().to_vec(), &values, labels)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Raw column, NaN where missing.
    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn value(&self, i: usize, j: usize) -> Option<f64> {
        let x = self.columns[j][i];
        (!x.is_nan()).then_some(x)
    }

    pub fn row(&self, i: usize) -> Vec<Option<f64>> {
        (0..self.n_features()).map(|j| self.value(i, j)).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| idx.iter().map(|&i| c[i]).collect())
                .collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn prevalence(&self) -> Option<f64> {
        (!self.labels.is_empty())
            .then(|| self.labels.iter().sum::<f64>() / self.labels.len() as f64)
    }
}

/// Splits row indices so the latest `fraction` of departure days (at least
/// one day) form the holdout. Returns `(train, holdout)`; the holdout is
/// empty when fewer than two distinct days exist.
pub fn temporal_holdout(dep_days: &[i64], fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let days: Vec<i64> = dep_days.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if days.len() < 2 {
        return ((0..dep_days.len()).collect(), Vec::new());
    }
    let n_hold = ((days.len() as f64 * fraction).ceil() as usize).clamp(1, days.len() - 1);
    let cutoff = days[days.len() - n_hold];
    let (mut train, mut hold) = (Vec::new(), Vec::new());
    for (i, &d) in dep_days.iter().enumerate() {
        if d >= cutoff {
            hold.push(i);
        } else {
            train.push(i);
        }
    }
    (train, hold)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("f{i}")).collect()
    }

    #[test]
    fn rejects_nan_and_bad_labels() {
        let err = Dataset::new(names(1), &[vec![Some(f64::NAN)]], vec![1.0]).unwrap_err();
        assert!(matches!(err, DataError::NonFinite { row: 0, .. }));
        let err = Dataset::new(names(1), &[vec![None]], vec![0.5]).unwrap_err();
        assert_eq!(err, DataError::Label { row: 0, value: 0.5 });
        let err = Dataset::new(names(2), &[vec![None]], vec![0.0]).unwrap_err();
        assert!(matches!(err, DataError::Arity { .. }));
    }

    #[test]
    fn missing_round_trips() {
        let ds = Dataset::new(names(2), &[vec![Some(1.0), None]], vec![1.0]).unwrap();
        assert_eq!(ds.row(0), vec![Some(1.0), None]);
        assert_eq!(ds.prevalence(), Some(1.0));
    }

    #[test]
    fn holdout_takes_latest_days() {
        let days = [1, 1, 2, 3, 4, 5, 5, 6, 7, 8, 9, 10];
        let (train, hold) = temporal_holdout(&days, 0.2);
        assert_eq!(hold, vec![10, 11]);
        assert_eq!(train.len(), 10);
        let (train, hold) = temporal_holdout(&[3, 3], 0.2);
        assert_eq!(train.len(), 2);
        assert!(hold.is_empty());
    }
}
