//! Conversion of a feature table into a dense numeric design matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table_ingest::{FeatureTable, FeatureValues};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "encoding", rename_all = "snake_case")]
pub enum Encoding {
    /// Min-max scaled to `[0, 1]`; a constant column maps to 0.
    Scaled {
        min: f64,
        max: f64,
    },
    OneHot {
        width: usize,
    },
}

/// The block of design columns produced by one source feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnGroup {
    pub source: String,
    pub start: usize,
    pub width: usize,
    pub encoding: Encoding,
}

impl ColumnGroup {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    Classification { n_classes: usize },
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Target {
    Classes { labels: Vec<usize>, n_classes: usize },
    Real(Vec<f64>),
}

impl Target {
    pub fn task(&self) -> Task {
        match self {
            Target::Classes { n_classes, .. } => Task::Classification { n_classes: *n_classes },
            Target::Real(_) => Task::Regression,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Target::Classes { labels, .. } => labels.len(),
            Target::Real(y) => y.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn subset(&self, rows: &[usize]) -> Target {
        match self {
            Target::Classes { labels, n_classes } => {
                Target::Classes { labels: rows.iter().map(|&r| labels[r]).collect(), n_classes: *n_classes }
            }
            Target::Real(y) => Target::Real(rows.iter().map(|&r| y[r]).collect()),
        }
    }
}

/// Row-major `n_rows × n_cols` predictor matrix plus its target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub data: Vec<f64>,
    pub groups: Vec<ColumnGroup>,
    pub target_name: String,
    pub target: Target,
}

impl DesignMatrix {
    /// Assembles a matrix from raw rows. Used by tests and by callers that
    /// already hold numeric predictors; each column becomes its own group.
    pub fn from_rows(rows: &[Vec<f64>], target_name: &str, target: Target) -> Result<DesignMatrix> {
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::InvalidInput("ragged design rows".into()));
        }
        if target.len() != rows.len() {
            return Err(Error::LengthMismatch { left: rows.len(), right: target.len() });
        }
        let groups = (0..n_cols)
            .map(|j| ColumnGroup {
                source: format!("x{}", j + 1),
                start: j,
                width: 1,
                encoding: Encoding::Scaled { min: 0.0, max: 1.0 },
            })
            .collect();
        Ok(DesignMatrix {
            n_rows: rows.len(),
            n_cols,
            data: rows.concat(),
            groups,
            target_name: target_name.to_string(),
            target,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn task(&self) -> Task {
        self.target.task()
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    /// Rows `rows` in the given order, with the same column layout.
    pub fn subset(&self, rows: &[usize]) -> DesignMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.n_cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        DesignMatrix {
            n_rows: rows.len(),
            n_cols: self.n_cols,
            data,
            groups: self.groups.clone(),
            target_name: self.target_name.clone(),
            target: self.target.subset(rows),
        }
    }
}

/// Builds the design matrix for predicting `target` from every other
/// feature. Synthetic features may be predictors but never targets.
///
/// ```
/// use tabinsight::model_zoo::build_design_matrix;
/// use tabinsight::table_ingest::{Feature, FeatureTable};
/// let t = FeatureTable::from_features(vec![
///     Feature::continuous("x", vec![0.0, 5.0, 10.0]),
///     Feature::discrete("c", vec![0, 1, 2]),
///     Feature::continuous("y", vec![1.0, 2.0, 3.0]),
/// ]).unwrap();
/// let m = build_design_matrix(&t, "y").unwrap();
/// assert_eq!(m.row(1), &[0.5, 0.0, 1.0, 0.0]);
/// ```
pub fn build_design_matrix(table: &FeatureTable, target: &str) -> Result<DesignMatrix> {
    let t = table.feature(target).ok_or_else(|| Error::UnknownFeature(target.to_string()))?;
    if t.synthetic {
        return Err(Error::InvalidInput(format!("synthetic feature '{target}' cannot be a modeling target")));
    }
    let predictors: Vec<_> = table.features.iter().filter(|f| f.name != target).collect();
    if predictors.is_empty() {
        return Err(Error::InvalidInput(format!("target '{target}' has no predictors")));
    }
    let n = table.n_rows;
    let mut groups = Vec::with_capacity(predictors.len());
    let mut start = 0;
    for f in &predictors {
        let encoding = match &f.values {
            FeatureValues::Continuous(v) => {
                let min = v.iter().copied().fold(f64::INFINITY, f64::min);
                let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                Encoding::Scaled { min, max }
            }
            FeatureValues::Discrete(c) => {
                let observed = c.iter().map(|&x| x as usize + 1).max().unwrap_or(0);
                Encoding::OneHot { width: f.n_categories().max(observed) }
            }
        };
        let width = match encoding {
            Encoding::Scaled { .. } => 1,
            Encoding::OneHot { width } => width,
        };
        groups.push(ColumnGroup { source: f.name.clone(), start, width, encoding });
        start += width;
    }
    let n_cols = start;
    let mut data = vec![0.0; n * n_cols];
    for (f, g) in predictors.iter().zip(&groups) {
        match (&f.values, g.encoding) {
            (FeatureValues::Continuous(v), Encoding::Scaled { min, max }) => {
                let span = max - min;
                for (i, &x) in v.iter().enumerate() {
                    data[i * n_cols + g.start] = if span > 0.0 { (x - min) / span } else { 0.0 };
                }
            }
            (FeatureValues::Discrete(c), Encoding::OneHot { .. }) => {
                for (i, &code) in c.iter().enumerate() {
                    data[i * n_cols + g.start + code as usize] = 1.0;
                }
            }
            _ => unreachable!("encoding chosen from the value kind"),
        }
    }
    let target_values = match &t.values {
        FeatureValues::Continuous(y) => Target::Real(y.clone()),
        FeatureValues::Discrete(c) => {
            let observed = c.iter().map(|&x| x as usize + 1).max().unwrap_or(0);
            Target::Classes {
                labels: c.iter().map(|&x| x as usize).collect(),
                n_classes: t.n_categories().max(observed),
            }
        }
    };
    Ok(DesignMatrix { n_rows: n, n_cols, data, groups, target_name: target.to_string(), target: target_values })
}
