//! Observational study data: covariates, a multi-level treatment and an outcome.
//!
//! Treatment levels are stored as 0-based indices `0..T`. The original labels
//! (as they appeared in the input) are kept in [`Dataset::level_labels`], and
//! reports print levels 1-based.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Immutable observational dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    covariates: Array2<f64>,
    treatment: Vec<usize>,
    outcome: Vec<f64>,
    covariate_names: Vec<String>,
    intercept: bool,
    level_labels: Vec<String>,
}

impl Dataset {
    /// Builds and validates a dataset. When `intercept` is set, column 0 of
    /// `covariates` must be identically 1.
    pub fn new(
        covariates: Array2<f64>,
        treatment: Vec<usize>,
        outcome: Vec<f64>,
        covariate_names: Vec<String>,
        intercept: bool,
        level_labels: Vec<String>,
    ) -> Result<Self> {
        let n = treatment.len();
        if n == 0 {
            return Err(Error::InvalidData("dataset has no rows".into()));
        }
        if covariates.nrows() != n || outcome.len() != n {
            return Err(Error::Dimension(format!(
                "covariates have {} rows, treatment {}, outcome {}",
                covariates.nrows(),
                n,
                outcome.len()
            )));
        }
        if covariate_names.len() != covariates.ncols() {
            return Err(Error::Dimension(format!(
                "{} covariate names for {} columns",
                covariate_names.len(),
                covariates.ncols()
            )));
        }
        let t = level_labels.len();
        if t == 0 {
            return Err(Error::InvalidData("no treatment levels".into()));
        }
        let mut counts = vec![0usize; t];
        for (i, &w) in treatment.iter().enumerate() {
            if w >= t {
                return Err(Error::InvalidData(format!(
                    "row {i}: treatment level {} outside 1..={t}",
                    w + 1
                )));
            }
            counts[w] += 1;
        }
        if let Some(level) = counts.iter().position(|&c| c == 0) {
            return Err(Error::EmptyLevel { level: level + 1 });
        }
        for ((i, k), v) in covariates.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::BadCell {
                    row: i + 1,
                    column: covariate_names[k].clone(),
                    message: format!("non-finite value {v}"),
                });
            }
        }
        if let Some(i) = outcome.iter().position(|y| !y.is_finite()) {
            return Err(Error::BadCell {
                row: i + 1,
                column: "outcome".into(),
                message: format!("non-finite value {}", outcome[i]),
            });
        }
        if intercept {
            if covariates.ncols() == 0 {
                return Err(Error::InvalidData("intercept flagged but no columns".into()));
            }
            if let Some(i) = covariates.column(0).iter().position(|&v| v != 1.0) {
                return Err(Error::BadCell {
                    row: i + 1,
                    column: covariate_names[0].clone(),
                    message: "intercept column is not identically 1".into(),
                });
            }
        }
        Ok(Self {
            covariates,
            treatment,
            outcome,
            covariate_names,
            intercept,
            level_labels,
        })
    }

    /// Convenience constructor with labels `"1".."T"`.
    pub fn from_parts(
        covariates: Array2<f64>,
        treatment: Vec<usize>,
        outcome: Vec<f64>,
        intercept: bool,
    ) -> Result<Self> {
        let t = treatment.iter().copied().max().map_or(0, |m| m + 1);
        let names = (0..covariates.ncols())
            .map(|k| {
                if intercept && k == 0 {
                    "intercept".to_string()
                } else {
                    format!("x{}", if intercept { k } else { k + 1 })
                }
            })
            .collect();
        let labels = (1..=t).map(|w| w.to_string()).collect();
        Self::new(covariates, treatment, outcome, names, intercept, labels)
    }

    pub fn n(&self) -> usize {
        self.treatment.len()
    }

    /// Number of covariate columns, including a flagged intercept.
    pub fn k(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn n_levels(&self) -> usize {
        self.level_labels.len()
    }

    pub fn covariates(&self) -> ArrayView2<'_, f64> {
        self.covariates.view()
    }

    pub fn treatment(&self) -> &[usize] {
        &self.treatment
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn has_intercept(&self) -> bool {
        self.intercept
    }

    pub fn level_labels(&self) -> &[String] {
        &self.level_labels
    }

    pub fn arm_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_levels()];
        for &w in &self.treatment {
            counts[w] += 1;
        }
        counts
    }

    /// Indices of units with treatment `w`, in order.
    pub fn arm_indices(&self, w: usize) -> Vec<usize> {
        self.treatment
            .iter()
            .enumerate()
            .filter_map(|(i, &wi)| (wi == w).then_some(i))
            .collect()
    }

    /// Design matrix with a leading intercept column, added if not flagged.
    pub fn design_matrix(&self) -> Array2<f64> {
        if self.intercept {
            return self.covariates.clone();
        }
        let mut x = Array2::ones((self.n(), self.k() + 1));
        x.slice_mut(ndarray::s![.., 1..]).assign(&self.covariates);
        x
    }

    /// Names matching the columns of [`Dataset::design_matrix`].
    pub fn design_names(&self) -> Vec<String> {
        if self.intercept {
            self.covariate_names.clone()
        } else {
            std::iter::once("intercept".to_string())
                .chain(self.covariate_names.iter().cloned())
                .collect()
        }
    }

    /// Covariate matrix without the intercept column.
    pub fn substantive_covariates(&self) -> Array2<f64> {
        if self.intercept {
            self.covariates.slice(ndarray::s![.., 1..]).to_owned()
        } else {
            self.covariates.clone()
        }
    }

    /// Rows `indices` (duplicates allowed), keeping the level coding.
    /// Fails if a level ends up with no units.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let covariates = self.covariates.select(Axis(0), indices);
        let treatment: Vec<usize> = indices.iter().map(|&i| self.treatment[i]).collect();
        let outcome = indices.iter().map(|&i| self.outcome[i]).collect();
        let mut present = vec![false; self.n_levels()];
        for &w in &treatment {
            present[w] = true;
        }
        if let Some(level) = present.iter().position(|p| !p) {
            return Err(Error::LevelEliminated { level: level + 1 });
        }
        Ok(Dataset {
            covariates,
            treatment,
            outcome,
            covariate_names: self.covariate_names.clone(),
            intercept: self.intercept,
            level_labels: self.level_labels.clone(),
        })
    }

    pub fn apply_mask(&self, mask: &UnitMask) -> Result<Dataset> {
        if mask.len() != self.n() {
            return Err(Error::Dimension(format!(
                "mask has {} entries for {} units",
                mask.len(),
                self.n()
            )));
        }
        self.subset(&mask.indices())
    }

    /// Keeps only units with treatment in `levels`, re-coded to `0..levels.len()`
    /// in the given order.
    pub fn restrict_levels(&self, levels: &[usize]) -> Result<Dataset> {
        let mut recode = vec![None; self.n_levels()];
        for (new, &old) in levels.iter().enumerate() {
            if old >= self.n_levels() {
                return Err(Error::Config(format!("treatment level {} does not exist", old + 1)));
            }
            recode[old] = Some(new);
        }
        let idx: Vec<usize> = (0..self.n()).filter(|&i| recode[self.treatment[i]].is_some()).collect();
        let labels = levels.iter().map(|&w| self.level_labels[w].clone()).collect();
        Dataset::new(
            self.covariates.select(Axis(0), &idx),
            idx.iter().map(|&i| recode[self.treatment[i]].unwrap()).collect(),
            idx.iter().map(|&i| self.outcome[i]).collect(),
            self.covariate_names.clone(),
            self.intercept,
            labels,
        )
    }

    /// Copy with outcomes replaced.
    pub fn with_outcome(&self, outcome: Vec<f64>) -> Result<Dataset> {
        Dataset::new(
            self.covariates.clone(),
            self.treatment.clone(),
            outcome,
            self.covariate_names.clone(),
            self.intercept,
            self.level_labels.clone(),
        )
    }

    /// Copy without the non-intercept covariates that take a single value,
    /// plus the names of the removed columns.
    pub fn without_constant_covariates(&self) -> (Dataset, Vec<String>) {
        let first = usize::from(self.intercept);
        let constant = |k: usize| {
            let col = self.covariates.column(k);
            col.iter().all(|&v| v == col[0])
        };
        let keep: Vec<usize> = (0..self.k()).filter(|&k| k < first || !constant(k)).collect();
        let dropped = (first..self.k())
            .filter(|&k| constant(k))
            .map(|k| self.covariate_names[k].clone())
            .collect();
        let d = Dataset {
            covariates: self.covariates.select(Axis(1), &keep),
            covariate_names: keep.iter().map(|&k| self.covariate_names[k].clone()).collect(),
            ..self.clone()
        };
        (d, dropped)
    }

    /// Schema that reads back a file written by [`Dataset::write_csv`].
    pub fn csv_schema(&self) -> CsvSchema {
        let (intercept_column, covariates) = if self.intercept {
            (Some(self.covariate_names[0].clone()), self.covariate_names[1..].to_vec())
        } else {
            (None, self.covariate_names.clone())
        };
        CsvSchema {
            treatment: "treatment".into(),
            outcome: "outcome".into(),
            covariates,
            intercept_column,
            levels: Some(self.level_labels.clone()),
            delimiter: b',',
        }
    }

    pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::read_csv(file, schema)
    }

    /// Reads a delimited file with a header row. Lines starting with `#` are
    /// skipped.
    pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<Dataset> {
        schema.validate()?;
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(schema.delimiter)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let position = |name: &str| -> Result<usize> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let t_col = position(&schema.treatment)?;
        let y_col = position(&schema.outcome)?;
        let icpt_col = schema.intercept_column.as_deref().map(position).transpose()?;
        let x_cols = schema
            .covariates
            .iter()
            .map(|c| position(c))
            .collect::<Result<Vec<_>>>()?;

        let mut names: Vec<String> = Vec::new();
        if let Some(c) = &schema.intercept_column {
            names.push(c.clone());
        }
        names.extend(schema.covariates.iter().cloned());
        let all_cols: Vec<usize> = icpt_col.into_iter().chain(x_cols.iter().copied()).collect();

        let mut labels: Vec<String> = schema.levels.clone().unwrap_or_default();
        let mut code: HashMap<String, usize> =
            labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        let mut values = Vec::new();
        let mut treatment = Vec::new();
        let mut outcome = Vec::new();

        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = r + 1;
            let cell = |c: usize| -> Result<&str> {
                match rec.get(c) {
                    Some(s) if !s.is_empty() => Ok(s),
                    _ => Err(Error::BadCell {
                        row,
                        column: headers[c].to_string(),
                        message: "missing value".into(),
                    }),
                }
            };
            let number = |c: usize| -> Result<f64> {
                let s = cell(c)?;
                let v: f64 = s.parse().map_err(|_| Error::BadCell {
                    row,
                    column: headers[c].to_string(),
                    message: format!("non-numeric value `{s}`"),
                })?;
                if !v.is_finite() {
                    return Err(Error::BadCell {
                        row,
                        column: headers[c].to_string(),
                        message: format!("non-finite value `{s}`"),
                    });
                }
                Ok(v)
            };
            let label = cell(t_col)?.to_string();
            let w = match code.get(&label) {
                Some(&w) => w,
                None if schema.levels.is_some() => {
                    return Err(Error::BadCell {
                        row,
                        column: schema.treatment.clone(),
                        message: format!("treatment label `{label}` not among declared levels"),
                    })
                }
                None => {
                    labels.push(label.clone());
                    code.insert(label, labels.len() - 1);
                    labels.len() - 1
                }
            };
            treatment.push(w);
            outcome.push(number(y_col)?);
            for &c in &all_cols {
                values.push(number(c)?);
            }
        }
        let n = treatment.len();
        let covariates = Array2::from_shape_vec((n, all_cols.len()), values)
            .map_err(|e| Error::Dimension(e.to_string()))?;
        Dataset::new(
            covariates,
            treatment,
            outcome,
            names,
            schema.intercept_column.is_some(),
            labels,
        )
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path.as_ref())?;
        self.write_csv(file, b',')
    }

    /// Writes `covariates..., treatment, outcome` with shortest round-trip
    /// float formatting.
    pub fn write_csv<W: Write>(&self, writer: W, delimiter: u8) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().delimiter(delimiter).from_writer(writer);
        let mut header: Vec<&str> = self.covariate_names.iter().map(String::as_str).collect();
        header.push("treatment");
        header.push("outcome");
        wtr.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec: Vec<String> = self.covariates.row(i).iter().map(|v| format!("{v:?}")).collect();
            rec.push(self.level_labels[self.treatment[i]].clone());
            rec.push(format!("{:?}", self.outcome[i]));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Column roles for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub treatment: String,
    pub outcome: String,
    pub covariates: Vec<String>,
    /// Column holding a constant-1 intercept, if the file has one.
    #[serde(default)]
    pub intercept_column: Option<String>,
    /// Fixed level order. Without it, levels are coded by first appearance.
    #[serde(default)]
    pub levels: Option<Vec<String>>,
    #[serde(default = "default_delimiter")]
    pub delimiter: u8,
}

fn default_delimiter() -> u8 {
    b','
}

impl CsvSchema {
    pub fn new(treatment: &str, outcome: &str, covariates: &[&str]) -> Self {
        Self {
            treatment: treatment.into(),
            outcome: outcome.into(),
            covariates: covariates.iter().map(|s| s.to_string()).collect(),
            intercept_column: None,
            levels: None,
            delimiter: b',',
        }
    }

    fn validate(&self) -> Result<()> {
        if self.covariates.is_empty() && self.intercept_column.is_none() {
            return Err(Error::Config("schema names no covariate columns".into()));
        }
        Ok(())
    }
}

/// Retained-unit mask over a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitMask {
    retained: Vec<bool>,
}

impl UnitMask {
    pub fn new(retained: Vec<bool>) -> Self {
        Self { retained }
    }

    pub fn all(n: usize) -> Self {
        Self { retained: vec![true; n] }
    }

    pub fn len(&self) -> usize {
        self.retained.len()
    }

    pub fn is_empty(&self) -> bool {
        self.retained.is_empty()
    }

    pub fn retained(&self) -> &[bool] {
        &self.retained
    }

    pub fn indices(&self) -> Vec<usize> {
        self.retained
            .iter()
            .enumerate()
            .filter_map(|(i, &r)| r.then_some(i))
            .collect()
    }

    /// Retained units per treatment level.
    pub fn counts_per_level(&self, treatment: &[usize], n_levels: usize) -> Vec<usize> {
        let mut counts = vec![0; n_levels];
        for (&keep, &w) in self.retained.iter().zip(treatment) {
            if keep {
                counts[w] += 1;
            }
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn small() -> Dataset {
        Dataset::from_parts(
            array![[1.0], [2.0], [3.0], [4.0], [5.0], [6.0]],
            vec![0, 1, 0, 1, 0, 1],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            false,
        )
        .unwrap()
    }

    #[test]
    fn labels_coded_by_first_appearance() {
        let csv = "x,w,y\n0.5,A,1\n1.5,B,2\n2.5,A,3\n";
        let d = Dataset::read_csv(csv.as_bytes(), &CsvSchema::new("w", "y", &["x"])).unwrap();
        assert_eq!(d.n_levels(), 2);
        assert_eq!(d.treatment(), &[0, 1, 0]);
        assert_eq!(d.level_labels(), &["A".to_string(), "B".to_string()]);
    }

    #[test]
    fn nan_outcome_names_row_and_column() {
        let csv = "x,w,y\n0.5,A,1\n1.5,B,NaN\n";
        let err = Dataset::read_csv(csv.as_bytes(), &CsvSchema::new("w", "y", &["x"])).unwrap_err();
        match err {
            Error::BadCell { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "y");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_and_non_numeric_cells() {
        let schema = CsvSchema::new("w", "y", &["x"]);
        let err = Dataset::read_csv("x,w,y\n,A,1\n".as_bytes(), &schema).unwrap_err();
        assert!(matches!(err, Error::BadCell { row: 1, .. }));
        let err = Dataset::read_csv("x,w,y\nabc,A,1\n".as_bytes(), &schema).unwrap_err();
        assert!(err.to_string().contains("non-numeric"));
        let err = Dataset::read_csv("x,w,y\n1,A,1\n".as_bytes(), &CsvSchema::new("w", "y", &["z"]))
            .unwrap_err();
        assert!(matches!(err, Error::MissingColumn(c) if c == "z"));
    }

    #[test]
    fn declared_level_without_units_is_rejected() {
        let mut schema = CsvSchema::new("w", "y", &["x"]);
        schema.levels = Some(vec!["A".into(), "B".into(), "C".into()]);
        let err = Dataset::read_csv("x,w,y\n1,A,1\n2,B,2\n".as_bytes(), &schema).unwrap_err();
        assert!(matches!(err, Error::EmptyLevel { level: 3 }));
    }

    #[test]
    fn custom_delimiter() {
        let mut schema = CsvSchema::new("w", "y", &["x"]);
        schema.delimiter = b';';
        let d = Dataset::read_csv("x;w;y\n1;1;2\n2;2;3\n".as_bytes(), &schema).unwrap();
        assert_eq!(d.n(), 2);
    }

    #[test]
    fn intercept_column_must_be_ones() {
        let err = Dataset::new(
            array![[1.0, 0.0], [0.5, 1.0]],
            vec![0, 1],
            vec![0.0, 1.0],
            vec!["c".into(), "x".into()],
            true,
            vec!["1".into(), "2".into()],
        )
        .unwrap_err();
        assert!(matches!(err, Error::BadCell { row: 2, .. }));
    }

    #[test]
    fn all_true_mask_is_identity() {
        let d = small();
        assert_eq!(d.apply_mask(&UnitMask::all(6)).unwrap(), d);
    }

    #[test]
    fn mask_eliminating_a_level_fails() {
        let d = small();
        let mask = UnitMask::new(d.treatment().iter().map(|&w| w != 1).collect());
        assert!(matches!(d.apply_mask(&mask), Err(Error::LevelEliminated { level: 2 })));
    }

    #[test]
    fn mask_keeps_original_order() {
        let d = small();
        let mask = UnitMask::new(vec![true, false, true, false, true, false]);
        let err = d.apply_mask(&mask).unwrap_err();
        // rows 1,3,5 are all level 1
        assert!(matches!(err, Error::LevelEliminated { level: 2 }));
        let mask = UnitMask::new(vec![true, true, false, false, true, false]);
        let sub = d.apply_mask(&mask).unwrap();
        assert_eq!(sub.outcome(), &[1.0, 2.0, 5.0]);
        assert_eq!(sub.treatment(), &[0, 1, 0]);
        assert_eq!(sub.apply_mask(&UnitMask::all(3)).unwrap(), sub);
    }

    #[test]
    fn mask_length_checked() {
        assert!(matches!(small().apply_mask(&UnitMask::all(3)), Err(Error::Dimension(_))));
    }

    #[test]
    fn design_matrix_prepends_intercept() {
        let d = small();
        let x = d.design_matrix();
        assert_eq!(x.ncols(), 2);
        assert!(x.column(0).iter().all(|&v| v == 1.0));
        assert_eq!(d.design_names()[0], "intercept");
    }

    #[test]
    fn restrict_levels_recodes() {
        let d = Dataset::from_parts(
            array![[1.0], [2.0], [3.0], [4.0]],
            vec![0, 1, 2, 2],
            vec![0.0; 4],
            false,
        )
        .unwrap();
        let r = d.restrict_levels(&[2, 0]).unwrap();
        assert_eq!(r.treatment(), &[1, 0, 0]);
        assert_eq!(r.level_labels(), &["3".to_string(), "1".to_string()]);
    }
}
