//! Tabular dataset ingestion, encoding, balancing, and splitting.
//!
//! CSV input is comma-separated with a header row, UTF-8, '.' decimal point,
//! no quoting. Columns whose cells all parse as numbers become numeric
//! features; any other column is treated as categorical and one-hot encoded
//! into binary indicator features. Missing values are rejected at load.

use std::collections::BTreeSet;
use std::ops::Index;
use std::path::Path;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats;

#[derive(Debug, Error)]
pub enum TabularError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("target column '{0}' not found in header")]
    MissingTargetColumn(String),
    #[error("empty dataset: no data rows")]
    EmptyDataset,
    #[error("line {line}: expected {expected} columns, found {found}")]
    RaggedRow {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}, column '{column}': missing value")]
    MissingValue { line: usize, column: String },
    #[error("line {line}, column '{column}': cannot parse '{value}' as a number")]
    UnparseableCell {
        line: usize,
        column: String,
        value: String,
    },
    #[error("line {line}: classification target must be 0 or 1, found {value}")]
    NonBinaryTarget { line: usize, value: f64 },
    #[error("balance_downsample requires a classification dataset")]
    BalanceOnRegression,
    #[error("train fraction must be in (0, 1), got {0}")]
    InvalidFraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    BinaryIndicator,
}

/// Per-feature metadata with statistics observed on the rows the dataset was
/// built from (after a split, on the training partition only).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub name: String,
    pub kind: FeatureKind,
    pub observed_min: f64,
    pub observed_max: f64,
    pub observed_std: f64,
    /// 25th/50th/75th percentiles (linear interpolation).
    pub quartile_bounds: [f64; 3],
    /// Original column name for one-hot encoded features.
    pub source_categorical: Option<String>,
}

impl FeatureSchema {
    pub fn observed_range(&self) -> f64 {
        self.observed_max - self.observed_min
    }
}

/// One row of feature values, indexed by schema position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance(pub Vec<f64>);

impl Instance {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Copy with one feature replaced.
    pub fn with_value(&self, feature: usize, value: f64) -> Instance {
        let mut v = self.0.clone();
        v[feature] = value;
        Instance(v)
    }
}

impl Index<usize> for Instance {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: Vec<FeatureSchema>,
    pub rows: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub task: TaskKind,
}

impl Dataset {
    /// Build a dataset from in-memory rows, deriving feature kinds (binary
    /// iff every observed value is 0 or 1) and statistics from the rows.
    pub fn from_rows(
        names: Vec<String>,
        rows: Vec<Vec<f64>>,
        targets: Vec<f64>,
        task: TaskKind,
    ) -> Dataset {
        assert!(!rows.is_empty(), "from_rows requires at least one row");
        assert_eq!(rows.len(), targets.len());
        let schema = names
            .into_iter()
            .enumerate()
            .map(|(j, name)| {
                let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
                let (min, max, std, quartiles) = column_stats(&col);
                let binary = col.iter().all(|&v| v == 0.0 || v == 1.0);
                FeatureSchema {
                    name,
                    kind: if binary {
                        FeatureKind::BinaryIndicator
                    } else {
                        FeatureKind::Numeric
                    },
                    observed_min: min,
                    observed_max: max,
                    observed_std: std,
                    quartile_bounds: quartiles,
                    source_categorical: None,
                }
            })
            .collect();
        Dataset {
            schema,
            rows,
            targets,
            task,
        }
    }

    pub fn num_features(&self) -> usize {
        self.schema.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn instance(&self, i: usize) -> Instance {
        Instance(self.rows[i].clone())
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|f| f.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dataset serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Dataset, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// Recompute per-feature statistics from this dataset's rows. Feature
    /// identity (name, kind, source column) is preserved.
    fn recompute_stats(&mut self) {
        for (j, field) in self.schema.iter_mut().enumerate() {
            let col: Vec<f64> = self.rows.iter().map(|r| r[j]).collect();
            let (min, max, std, quartiles) = column_stats(&col);
            field.observed_min = min;
            field.observed_max = max;
            field.observed_std = std;
            field.quartile_bounds = quartiles;
        }
    }
}

fn column_stats(col: &[f64]) -> (f64, f64, f64, [f64; 3]) {
    let mut sorted = col.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN feature value"));
    let min = sorted[0];
    let max = sorted[sorted.len() - 1];
    let std = stats::std_dev(col);
    let quartiles = [
        stats::percentile_sorted(&sorted, 25.0),
        stats::percentile_sorted(&sorted, 50.0),
        stats::percentile_sorted(&sorted, 75.0),
    ];
    (min, max, std, quartiles)
}

/// Load a CSV file into a typed dataset.
///
/// Categorical columns (any cell that does not parse as a number) are one-hot
/// encoded into `column=value` indicator features; numeric columns pass
/// through. Schema statistics are computed from the loaded rows.
pub fn load_csv(
    path: impl AsRef<Path>,
    target_column: &str,
    task: TaskKind,
) -> Result<Dataset, TabularError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| TabularError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_csv_str(&text, target_column, task)
}

/// Same as [`load_csv`] but from in-memory text.
pub fn load_csv_str(
    text: &str,
    target_column: &str,
    task: TaskKind,
) -> Result<Dataset, TabularError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty());

    let (_, header) = lines.next().ok_or(TabularError::EmptyDataset)?;
    let columns: Vec<String> = header.split(',').map(|c| c.trim().to_string()).collect();
    let target_idx = columns
        .iter()
        .position(|c| c == target_column)
        .ok_or_else(|| TabularError::MissingTargetColumn(target_column.to_string()))?;

    let mut cells: Vec<(usize, Vec<String>)> = Vec::new();
    for (line, raw) in lines {
        let row: Vec<String> = raw.split(',').map(|c| c.trim().to_string()).collect();
        if row.len() != columns.len() {
            return Err(TabularError::RaggedRow {
                line,
                expected: columns.len(),
                found: row.len(),
            });
        }
        cells.push((line, row));
    }
    if cells.is_empty() {
        return Err(TabularError::EmptyDataset);
    }

    for (line, row) in &cells {
        for (j, cell) in row.iter().enumerate() {
            if cell.is_empty() {
                return Err(TabularError::MissingValue {
                    line: *line,
                    column: columns[j].clone(),
                });
            }
        }
    }

    // A column is numeric iff every cell parses; otherwise it is categorical.
    let mut numeric: Vec<bool> = vec![true; columns.len()];
    for (_, row) in &cells {
        for (j, cell) in row.iter().enumerate() {
            if numeric[j] && cell.parse::<f64>().is_err() {
                numeric[j] = false;
            }
        }
    }

    let mut targets = Vec::with_capacity(cells.len());
    for (line, row) in &cells {
        let cell = &row[target_idx];
        let value = cell
            .parse::<f64>()
            .map_err(|_| TabularError::UnparseableCell {
                line: *line,
                column: columns[target_idx].clone(),
                value: cell.clone(),
            })?;
        if task == TaskKind::Classification && value != 0.0 && value != 1.0 {
            return Err(TabularError::NonBinaryTarget { line: *line, value });
        }
        targets.push(value);
    }

    // Expand columns into features, one-hot encoding categoricals in place.
    // Distinct categorical values are sorted so the layout is deterministic.
    struct FeatureDef {
        name: String,
        source: Option<(usize, String)>, // (column index, matched level)
        column: usize,
    }
    let mut defs: Vec<FeatureDef> = Vec::new();
    for (j, col_name) in columns.iter().enumerate() {
        if j == target_idx {
            continue;
        }
        if numeric[j] {
            defs.push(FeatureDef {
                name: col_name.clone(),
                source: None,
                column: j,
            });
        } else {
            let levels: BTreeSet<&str> = cells.iter().map(|(_, row)| row[j].as_str()).collect();
            for level in levels {
                defs.push(FeatureDef {
                    name: format!("{col_name}={level}"),
                    source: Some((j, level.to_string())),
                    column: j,
                });
            }
        }
    }

    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(cells.len());
    for (_, row) in &cells {
        let mut out = Vec::with_capacity(defs.len());
        for def in &defs {
            let v = match &def.source {
                None => row[def.column].parse::<f64>().expect("checked numeric"),
                Some((j, level)) => {
                    if row[*j] == *level {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            out.push(v);
        }
        rows.push(out);
    }

    let schema: Vec<FeatureSchema> = defs
        .iter()
        .enumerate()
        .map(|(j, def)| {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let (min, max, std, quartiles) = column_stats(&col);
            let binary = col.iter().all(|&v| v == 0.0 || v == 1.0);
            FeatureSchema {
                name: def.name.clone(),
                kind: if binary {
                    FeatureKind::BinaryIndicator
                } else {
                    FeatureKind::Numeric
                },
                observed_min: min,
                observed_max: max,
                observed_std: std,
                quartile_bounds: quartiles,
                source_categorical: def.source.as_ref().map(|(j, _)| columns[*j].clone()),
            }
        })
        .collect();

    Ok(Dataset {
        schema,
        rows,
        targets,
        task,
    })
}

/// Downsample the majority class so both classes have the minority count.
///
/// Minority rows are always kept; majority rows are selected uniformly at
/// random under `seed`. Row order is preserved.
pub fn balance_downsample(d: &Dataset, seed: u64) -> Result<Dataset, TabularError> {
    if d.task != TaskKind::Classification {
        return Err(TabularError::BalanceOnRegression);
    }
    let positives: Vec<usize> = (0..d.num_rows()).filter(|&i| d.targets[i] == 1.0).collect();
    let negatives: Vec<usize> = (0..d.num_rows()).filter(|&i| d.targets[i] == 0.0).collect();

    let (minority, majority) = if positives.len() <= negatives.len() {
        (positives, negatives)
    } else {
        (negatives, positives)
    };

    let mut rng = StdRng::seed_from_u64(seed);
    let mut shuffled = majority.clone();
    shuffled.shuffle(&mut rng);
    let take = minority.len().min(shuffled.len());
    let mut keep: Vec<usize> = minority;
    keep.extend_from_slice(&shuffled[..take]);
    keep.sort_unstable();

    let mut out = Dataset {
        schema: d.schema.clone(),
        rows: keep.iter().map(|&i| d.rows[i].clone()).collect(),
        targets: keep.iter().map(|&i| d.targets[i]).collect(),
        task: d.task,
    };
    out.recompute_stats();
    Ok(out)
}

/// Shuffle under `seed` and split into `(train, test)` with
/// `floor(n * train_fraction)` training rows. Schema statistics are
/// recomputed from the training partition and copied into both outputs.
pub fn train_test_split(
    d: &Dataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), TabularError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(TabularError::InvalidFraction(train_fraction));
    }
    let mut order: Vec<usize> = (0..d.num_rows()).collect();
    let mut rng = StdRng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let n_train = ((d.num_rows() as f64) * train_fraction).floor() as usize;
    let take = |idx: &[usize]| Dataset {
        schema: d.schema.clone(),
        rows: idx.iter().map(|&i| d.rows[i].clone()).collect(),
        targets: idx.iter().map(|&i| d.targets[i]).collect(),
        task: d.task,
    };
    let mut train = take(&order[..n_train]);
    let test_part = take(&order[n_train..]);

    if !train.rows.is_empty() {
        train.recompute_stats();
    }
    let mut test = test_part;
    test.schema = train.schema.clone();
    Ok((train, test))
}
