//! Tabular loading, preprocessing and stratified splitting.
//!
//! Preprocessing follows a fit/apply contract: [`Preprocessor::fit`] learns
//! standardization statistics and categorical levels from a set of rows, and
//! [`Preprocessor::transform`] applies those frozen statistics to any rows of
//! the same table. The class-id mapping is always built from the whole label
//! column so every split shares one id space.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use log::warn;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Label,
    /// Column is read but dropped (ids, free text).
    Ignore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnKind>,
    #[serde(default)]
    pub has_header: bool,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
}

fn default_delimiter() -> char {
    ','
}

impl Schema {
    pub fn new(columns: Vec<ColumnKind>) -> Self {
        Schema {
            columns,
            has_header: false,
            delimiter: ',',
        }
    }

    pub fn with_header(mut self, has_header: bool) -> Self {
        self.has_header = has_header;
        self
    }

    fn label_column(&self) -> Result<usize> {
        let labels: Vec<usize> = self
            .columns
            .iter()
            .enumerate()
            .filter(|(_, k)| **k == ColumnKind::Label)
            .map(|(i, _)| i)
            .collect();
        match labels.as_slice() {
            [one] => Ok(*one),
            other => Err(Error::LabelColumnCount(other.len())),
        }
    }
}

/// Cells exactly as read from the file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub column_names: Vec<String>,
    pub column_kinds: Vec<ColumnKind>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn new(
        column_names: Vec<String>,
        column_kinds: Vec<ColumnKind>,
        rows: Vec<Vec<String>>,
    ) -> Result<Self> {
        let width = column_kinds.len();
        if column_names.len() != width {
            return Err(Error::SchemaMismatch {
                schema: width,
                file: column_names.len(),
            });
        }
        Schema::new(column_kinds.clone()).label_column()?;
        for (row, cells) in rows.iter().enumerate() {
            if cells.len() != width {
                return Err(Error::RaggedRow {
                    row,
                    found: cells.len(),
                    expected: width,
                });
            }
        }
        Ok(RawTable {
            column_names,
            column_kinds,
            rows,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn label_column(&self) -> usize {
        self.column_kinds
            .iter()
            .position(|k| *k == ColumnKind::Label)
            .expect("RawTable invariant: one label column")
    }

    /// Distinct label texts, sorted.
    pub fn label_texts(&self) -> Vec<String> {
        let col = self.label_column();
        self.rows
            .iter()
            .map(|r| r[col].clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<RawTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let delimiter = u8::try_from(schema.delimiter)
        .map_err(|_| Error::InvalidArgument("delimiter must be a single-byte character".into()))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(schema.has_header)
        .delimiter(delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        rows.push(record.iter().map(str::to_owned).collect::<Vec<_>>());
    }

    let width = rows.first().map_or(schema.columns.len(), Vec::len);
    for (row, cells) in rows.iter().enumerate() {
        if cells.len() != width {
            return Err(Error::RaggedRow {
                row,
                found: cells.len(),
                expected: width,
            });
        }
    }
    if width != schema.columns.len() {
        return Err(Error::SchemaMismatch {
            schema: schema.columns.len(),
            file: width,
        });
    }

    let column_names = if schema.has_header {
        let headers = reader.headers()?;
        if headers.len() != width {
            return Err(Error::SchemaMismatch {
                schema: width,
                file: headers.len(),
            });
        }
        headers.iter().map(str::to_owned).collect()
    } else {
        (0..width).map(|i| format!("c{i}")).collect()
    };

    RawTable::new(column_names, schema.columns.clone(), rows)
}

/// Preprocessed instances with integer class ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Vec<usize>,
    pub class_labels: Vec<String>,
}

impl Dataset {
    /// Checks the full invariant set, including that every class occurs.
    pub fn new(x: Array2<f64>, y: Vec<usize>, class_labels: Vec<String>) -> Result<Self> {
        let ds = Self::unchecked(x, y, class_labels)?;
        let counts = ds.class_counts();
        if let Some(k) = counts.iter().position(|&c| c == 0) {
            return Err(Error::ClassTooSmall {
                label: ds.class_labels[k].clone(),
                found: 0,
                needed: 1,
            });
        }
        Ok(ds)
    }

    /// Like [`Dataset::new`] but allows classes with no instances, which is
    /// what subsets of a dataset look like.
    pub fn unchecked(x: Array2<f64>, y: Vec<usize>, class_labels: Vec<String>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                x.nrows(),
                y.len()
            )));
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= class_labels.len()) {
            return Err(Error::InvalidArgument(format!(
                "class id {bad} out of range for {} classes",
                class_labels.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite feature value".into()));
        }
        Ok(Dataset { x, y, class_labels })
    }

    pub fn n_instances(&self) -> usize {
        self.y.len()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_labels.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &c in &self.y {
            counts[c] += 1;
        }
        counts
    }

    /// Rows at `indices`, in that order. Keeps the full class list.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(ndarray::Axis(0), indices),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            class_labels: self.class_labels.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Standardize numeric columns to zero mean and unit population variance.
    #[serde(default = "yes")]
    pub standardize: bool,
}

fn yes() -> bool {
    true
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig { standardize: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum ColumnTransform {
    Numeric { mean: f64, std: f64 },
    Categorical { levels: Vec<String> },
}

/// Frozen preprocessing statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessor {
    columns: Vec<(usize, ColumnTransform)>,
    label_column: usize,
    classes: Vec<String>,
}

impl Preprocessor {
    pub fn fit(table: &RawTable, rows: &[usize], config: &PreprocessConfig) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("no rows to fit preprocessing on"));
        }
        let mut columns = Vec::new();
        for (col, kind) in table.column_kinds.iter().enumerate() {
            match kind {
                ColumnKind::Numeric => {
                    let values = rows
                        .iter()
                        .map(|&r| parse_cell(table, r, col))
                        .collect::<Result<Vec<f64>>>()?;
                    let (mean, std) = if config.standardize {
                        let n = values.len() as f64;
                        let mean = values.iter().sum::<f64>() / n;
                        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                        let std = var.sqrt();
                        if std == 0.0 {
                            warn!(
                                "column '{}' has zero variance; encoding it as zeros",
                                table.column_names[col]
                            );
                        }
                        (mean, std)
                    } else {
                        (0.0, 1.0)
                    };
                    columns.push((col, ColumnTransform::Numeric { mean, std }));
                }
                ColumnKind::Categorical => {
                    let levels: BTreeSet<String> =
                        rows.iter().map(|&r| table.rows[r][col].clone()).collect();
                    columns.push((
                        col,
                        ColumnTransform::Categorical {
                            levels: levels.into_iter().collect(),
                        },
                    ));
                }
                ColumnKind::Label | ColumnKind::Ignore => {}
            }
        }
        Ok(Preprocessor {
            columns,
            label_column: table.label_column(),
            classes: table.label_texts(),
        })
    }

    pub fn n_output_features(&self) -> usize {
        self.columns
            .iter()
            .map(|(_, t)| match t {
                ColumnTransform::Numeric { .. } => 1,
                ColumnTransform::Categorical { levels } => levels.len(),
            })
            .sum()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn transform(&self, table: &RawTable, rows: &[usize]) -> Result<Dataset> {
        let width = self.n_output_features();
        let mut x = Array2::zeros((rows.len(), width));
        let class_index: HashMap<&str, usize> = self
            .classes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect();
        let mut y = Vec::with_capacity(rows.len());
        for (out_row, &r) in rows.iter().enumerate() {
            let mut offset = 0;
            for (col, transform) in &self.columns {
                match transform {
                    ColumnTransform::Numeric { mean, std } => {
                        let v = parse_cell(table, r, *col)?;
                        x[[out_row, offset]] = if *std > 0.0 { (v - mean) / std } else { 0.0 };
                        offset += 1;
                    }
                    ColumnTransform::Categorical { levels } => {
                        let cell = &table.rows[r][*col];
                        match levels.binary_search(cell) {
                            Ok(k) => x[[out_row, offset + k]] = 1.0,
                            Err(_) => warn!(
                                "unseen value '{}' in column '{}'; encoding as all zeros",
                                cell, table.column_names[*col]
                            ),
                        }
                        offset += levels.len();
                    }
                }
            }
            let label = &table.rows[r][self.label_column];
            let id = class_index.get(label.as_str()).ok_or_else(|| {
                Error::InvalidArgument(format!("label '{label}' not seen at fit time"))
            })?;
            y.push(*id);
        }
        Dataset::unchecked(x, y, self.classes.clone())
    }
}

fn parse_cell(table: &RawTable, row: usize, col: usize) -> Result<f64> {
    let cell = table.rows[row][col].trim();
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::BadNumber {
            row,
            column: table.column_names[col].clone(),
            value: cell.to_owned(),
        }),
    }
}

/// Fits on every row and transforms them all.
pub fn preprocess(table: &RawTable, config: &PreprocessConfig) -> Result<Dataset> {
    let rows: Vec<usize> = (0..table.n_rows()).collect();
    let prep = Preprocessor::fit(table, &rows, config)?;
    let ds = prep.transform(table, &rows)?;
    Dataset::new(ds.x, ds.y, ds.class_labels)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub folds: Vec<Fold>,
    pub k: usize,
    pub seed: u64,
}

fn members_by_class(y: &[usize], indices: &[usize], n_classes: usize) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); n_classes];
    for &i in indices {
        by_class[y[i]].push(i);
    }
    by_class
}

/// Shuffles each class with the seed and deals its members round-robin into
/// the folds. The dealing position carries over between classes so fold
/// sizes stay within one of each other.
pub fn stratified_kfold(ds: &Dataset, k: usize, seed: u64) -> Result<SplitPlan> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "k must be at least 2, got {k}"
        )));
    }
    let all: Vec<usize> = (0..ds.n_instances()).collect();
    let mut by_class = members_by_class(&ds.y, &all, ds.n_classes());
    for (c, members) in by_class.iter().enumerate() {
        if members.len() < k {
            return Err(Error::ClassTooSmall {
                label: ds.class_labels[c].clone(),
                found: members.len(),
                needed: k,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_sets = vec![Vec::new(); k];
    let mut slot = 0;
    for members in &mut by_class {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            test_sets[slot].push(i);
            slot = (slot + 1) % k;
        }
    }

    let folds = test_sets
        .into_iter()
        .map(|mut test| {
            test.sort_unstable();
            let mut in_test = vec![false; ds.n_instances()];
            for &i in &test {
                in_test[i] = true;
            }
            let train = (0..ds.n_instances()).filter(|&i| !in_test[i]).collect();
            Fold { train, test }
        })
        .collect();
    Ok(SplitPlan { folds, k, seed })
}

/// Stratified split of `train_indices` into a training part and a validation
/// part holding `fraction` of each class (rounded, at least one per side).
pub fn train_val_split(
    train_indices: &[usize],
    ds: &Dataset,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "validation fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let by_class = members_by_class(&ds.y, train_indices, ds.n_classes());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (c, mut members) in by_class.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(Error::ClassTooSmall {
                label: ds.class_labels[c].clone(),
                found: members.len(),
                needed: 2,
            });
        }
        members.sort_unstable();
        members.shuffle(&mut rng);
        let n_val = ((members.len() as f64) * fraction).round() as usize;
        let n_val = n_val.clamp(1, members.len() - 1);
        val.extend_from_slice(&members[..n_val]);
        train.extend_from_slice(&members[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn toy(y: Vec<usize>, n_classes: usize) -> Dataset {
        let n = y.len();
        let x = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        let labels = (0..n_classes).map(|c| format!("c{c}")).collect();
        Dataset::unchecked(x, y, labels).unwrap()
    }

    #[test]
    fn load_three_rows() {
        let f = write_tmp("1.0,a\n2.0,b\n3.0,a\n");
        let schema = Schema::new(vec![ColumnKind::Numeric, ColumnKind::Label]);
        let t = load_csv(f.path(), &schema).unwrap();
        assert_eq!(t.n_rows(), 3);
        assert_eq!(t.column_kinds.len(), 2);
        assert_eq!(t.rows[1], vec!["2.0", "b"]);
    }

    #[test]
    fn load_with_header() {
        let f = write_tmp("x,class\n1,a\n2,b\n");
        let schema = Schema::new(vec![ColumnKind::Numeric, ColumnKind::Label]).with_header(true);
        let t = load_csv(f.path(), &schema).unwrap();
        assert_eq!(t.column_names, vec!["x", "class"]);
        assert_eq!(t.n_rows(), 2);
    }

    #[test]
    fn ragged_row_is_rejected() {
        let f = write_tmp("1,a\n2,b,extra\n3,a\n");
        let schema = Schema::new(vec![ColumnKind::Numeric, ColumnKind::Label]);
        assert!(matches!(
            load_csv(f.path(), &schema),
            Err(Error::RaggedRow {
                row: 1,
                found: 3,
                expected: 2
            })
        ));
    }

    #[test]
    fn schema_width_mismatch() {
        let f = write_tmp("1,2,a\n3,4,b\n");
        let schema = Schema::new(vec![ColumnKind::Numeric, ColumnKind::Label]);
        assert!(matches!(
            load_csv(f.path(), &schema),
            Err(Error::SchemaMismatch { schema: 2, file: 3 })
        ));
    }

    #[test]
    fn missing_file() {
        let schema = Schema::new(vec![ColumnKind::Label]);
        assert!(matches!(
            load_csv("/nonexistent/file.csv", &schema),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn standardizes_with_population_sigma() {
        let table = RawTable::new(
            vec!["x".into(), "y".into()],
            vec![ColumnKind::Numeric, ColumnKind::Label],
            vec![
                vec!["2".into(), "a".into()],
                vec!["4".into(), "b".into()],
                vec!["6".into(), "a".into()],
            ],
        )
        .unwrap();
        let ds = preprocess(&table, &PreprocessConfig::default()).unwrap();
        let expected = [-1.224_744_871_391_589, 0.0, 1.224_744_871_391_589];
        for (got, want) in ds.x.column(0).iter().zip(expected) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn already_standardized_is_unchanged() {
        let values = [-1.224_744_871_391_589, 0.0, 1.224_744_871_391_589];
        let table = RawTable::new(
            vec!["x".into(), "y".into()],
            vec![ColumnKind::Numeric, ColumnKind::Label],
            values
                .iter()
                .map(|v| vec![format!("{v:.17}"), "a".into()])
                .collect(),
        )
        .unwrap();
        let ds = preprocess(&table, &PreprocessConfig::default()).unwrap();
        for (got, want) in ds.x.column(0).iter().zip(values) {
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn one_hot_and_sorted_classes() {
        let table = RawTable::new(
            vec!["color".into(), "label".into()],
            vec![ColumnKind::Categorical, ColumnKind::Label],
            vec![
                vec!["red".into(), "zebra".into()],
                vec!["blue".into(), "ant".into()],
                vec!["red".into(), "ant".into()],
            ],
        )
        .unwrap();
        let ds = preprocess(&table, &PreprocessConfig::default()).unwrap();
        assert_eq!(ds.n_features(), 2);
        // levels sorted: blue, red
        assert_eq!(ds.x.row(0).to_vec(), vec![0.0, 1.0]);
        assert_eq!(ds.x.row(1).to_vec(), vec![1.0, 0.0]);
        assert_eq!(ds.class_labels, vec!["ant", "zebra"]);
        assert_eq!(ds.y, vec![1, 0, 0]);
    }

    #[test]
    fn zero_variance_column_maps_to_zero() {
        let table = RawTable::new(
            vec!["x".into(), "y".into()],
            vec![ColumnKind::Numeric, ColumnKind::Label],
            vec![vec!["5".into(), "a".into()], vec!["5".into(), "b".into()]],
        )
        .unwrap();
        let ds = preprocess(&table, &PreprocessConfig::default()).unwrap();
        assert!(ds.x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frozen_statistics_and_unseen_levels() {
        let table = RawTable::new(
            vec!["x".into(), "c".into(), "y".into()],
            vec![
                ColumnKind::Numeric,
                ColumnKind::Categorical,
                ColumnKind::Label,
            ],
            vec![
                vec!["0".into(), "a".into(), "p".into()],
                vec!["2".into(), "b".into(), "q".into()],
                vec!["4".into(), "z".into(), "p".into()],
            ],
        )
        .unwrap();
        let prep = Preprocessor::fit(&table, &[0, 1], &PreprocessConfig::default()).unwrap();
        let held_out = prep.transform(&table, &[2]).unwrap();
        // mean 1, sigma 1 from the fitted rows
        assert!((held_out.x[[0, 0]] - 3.0).abs() < 1e-12);
        assert_eq!(held_out.x[[0, 1]], 0.0);
        assert_eq!(held_out.x[[0, 2]], 0.0);
    }

    #[test]
    fn missing_numeric_cell_is_rejected() {
        let table = RawTable::new(
            vec!["x".into(), "y".into()],
            vec![ColumnKind::Numeric, ColumnKind::Label],
            vec![vec!["?".into(), "a".into()], vec!["1".into(), "b".into()]],
        )
        .unwrap();
        assert!(matches!(
            preprocess(&table, &PreprocessConfig::default()),
            Err(Error::BadNumber { row: 0, .. })
        ));
    }

    #[test]
    fn kfold_balanced_classes() {
        let ds = toy(vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1], 2);
        let plan = stratified_kfold(&ds, 5, 3).unwrap();
        assert_eq!(plan.folds.len(), 5);
        for fold in &plan.folds {
            let mut per_class = [0; 2];
            for &i in &fold.test {
                per_class[ds.y[i]] += 1;
            }
            assert_eq!(per_class, [1, 1]);
        }
    }

    #[test]
    fn kfold_is_deterministic() {
        let ds = toy((0..40).map(|i| i % 3).collect(), 3);
        assert_eq!(
            stratified_kfold(&ds, 4, 11).unwrap(),
            stratified_kfold(&ds, 4, 11).unwrap()
        );
    }

    #[test]
    fn kfold_rejects_small_class() {
        let ds = toy(vec![0, 0, 0, 0, 0, 0, 0, 0, 0, 1], 2);
        assert!(matches!(
            stratified_kfold(&ds, 5, 0),
            Err(Error::ClassTooSmall {
                found: 1,
                needed: 5,
                ..
            })
        ));
    }

    #[test]
    fn val_split_balanced() {
        let ds = toy((0..100).map(|i| i % 2).collect(), 2);
        let idx: Vec<usize> = (0..100).collect();
        let (train, val) = train_val_split(&idx, &ds, 0.2, 1).unwrap();
        assert_eq!(train.len(), 80);
        assert_eq!(val.len(), 20);
        assert_eq!(val.iter().filter(|&&i| ds.y[i] == 0).count(), 10);
    }

    #[test]
    fn val_split_half_of_four() {
        let ds = toy(vec![0, 1, 0, 1], 2);
        let (train, val) = train_val_split(&[0, 1, 2, 3], &ds, 0.5, 9).unwrap();
        assert_eq!(train.len(), 2);
        assert_eq!(val.len(), 2);
        assert_ne!(ds.y[val[0]], ds.y[val[1]]);
    }

    #[test]
    fn val_split_single_member_class() {
        let ds = toy(vec![0, 0, 0, 0, 1], 2);
        assert!(matches!(
            train_val_split(&[0, 1, 2, 3, 4], &ds, 0.2, 0),
            Err(Error::ClassTooSmall { found: 1, .. })
        ));
    }
}
