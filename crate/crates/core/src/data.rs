//! Tabular data: CSV ingestion, seeded splits, preprocessing and
//! sensitive-attribute subgroup partitions.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed::{rng_from, Fingerprint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    BinaryClassification,
    Regression,
}

/// Column roles of a tabular dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSchema {
    pub target: String,
    #[serde(default)]
    pub task: Task,
    #[serde(default)]
    pub numericals: Vec<String>,
    #[serde(default)]
    pub categoricals: Vec<String>,
    #[serde(default)]
    pub sensitive: Vec<String>,
    /// Sensitive attributes kept out of the model's feature set.
    #[serde(default)]
    pub exclude_from_features: Vec<String>,
}

impl ColumnSchema {
    pub fn new(target: impl Into<String>) -> Self {
        ColumnSchema {
            target: target.into(),
            task: Task::BinaryClassification,
            numericals: Vec::new(),
            categoricals: Vec::new(),
            sensitive: Vec::new(),
            exclude_from_features: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target.is_empty() {
            return Err(Error::validation("schema target column is empty"));
        }
        if self.numericals.contains(&self.target) || self.categoricals.contains(&self.target) {
            return Err(Error::validation(format!(
                "target `{}` must not be listed as a feature column",
                self.target
            )));
        }
        let mut seen = BTreeSet::new();
        for c in self.numericals.iter().chain(&self.categoricals) {
            if !seen.insert(c.as_str()) {
                return Err(Error::validation(format!(
                    "column `{c}` is listed twice among numericals/categoricals"
                )));
            }
        }
        if self.sensitive.contains(&self.target) {
            return Err(Error::validation(format!(
                "target `{}` cannot be a sensitive attribute",
                self.target
            )));
        }
        for c in &self.exclude_from_features {
            if !self.sensitive.contains(c) {
                return Err(Error::validation(format!(
                    "`{c}` is excluded from features but is not a sensitive attribute"
                )));
            }
        }
        Ok(())
    }

    /// Numerical feature columns in schema order.
    pub fn feature_numericals(&self) -> Vec<String> {
        self.numericals
            .iter()
            .filter(|c| !self.exclude_from_features.contains(c))
            .cloned()
            .collect()
    }

    /// Categorical feature columns: declared categoricals, then sensitive
    /// attributes not already used as features.
    pub fn feature_categoricals(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .categoricals
            .iter()
            .filter(|c| !self.exclude_from_features.contains(c))
            .cloned()
            .collect();
        for s in &self.sensitive {
            if self.exclude_from_features.contains(s)
                || self.numericals.contains(s)
                || self.categoricals.contains(s)
            {
                continue;
            }
            out.push(s.clone());
        }
        out
    }

    /// Every column the dataset must carry, target first.
    pub fn required_columns(&self) -> Vec<String> {
        let mut cols = vec![self.target.clone()];
        for c in self
            .numericals
            .iter()
            .chain(&self.categoricals)
            .chain(&self.sensitive)
        {
            if !cols.contains(c) {
                cols.push(c.clone());
            }
        }
        cols
    }
}

/// In-memory dataset restricted to the schema's columns.
#[derive(Debug, Clone)]
pub struct Dataset {
    schema: ColumnSchema,
    columns: Vec<String>,
    cells: Vec<Vec<String>>,
    numeric: HashMap<String, Vec<f64>>,
    targets: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset from a header and string records. Numeric columns
    /// and the target are parsed here.
    pub fn from_records(
        schema: ColumnSchema,
        header: &[String],
        records: Vec<Vec<String>>,
    ) -> Result<Self> {
        schema.validate()?;
        let columns = schema.required_columns();
        let mut positions = Vec::with_capacity(columns.len());
        for c in &columns {
            let pos = header
                .iter()
                .position(|h| h == c)
                .ok_or_else(|| Error::MissingColumn(c.clone()))?;
            positions.push(pos);
        }

        let mut cells = Vec::with_capacity(records.len());
        for (r, rec) in records.into_iter().enumerate() {
            if rec.len() != header.len() {
                return Err(Error::Parse {
                    row: r + 1,
                    column: String::new(),
                    message: format!("expected {} fields, found {}", header.len(), rec.len()),
                });
            }
            cells.push(positions.iter().map(|&p| rec[p].trim().to_string()).collect());
        }

        let parse_col = |name: &str, col: usize, cells: &[Vec<String>]| -> Result<Vec<f64>> {
            cells
                .iter()
                .enumerate()
                .map(|(r, row)| {
                    row[col].parse::<f64>().map_err(|e| Error::Parse {
                        row: r + 1,
                        column: name.to_string(),
                        message: format!("`{}`: {e}", row[col]),
                    })
                })
                .collect()
        };

        let targets = parse_col(&schema.target, 0, &cells)?;
        if schema.task == Task::BinaryClassification {
            if let Some((r, v)) = targets
                .iter()
                .enumerate()
                .find(|(_, v)| **v != 0.0 && **v != 1.0)
            {
                return Err(Error::validation(format!(
                    "row {}: binary target `{}` has value {v}, expected 0 or 1",
                    r + 1,
                    schema.target
                )));
            }
        } else if let Some(r) = targets.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "row {}: target `{}` is not finite",
                r + 1,
                schema.target
            )));
        }

        let mut numeric = HashMap::new();
        for name in &schema.numericals {
            let col = columns.iter().position(|c| c == name).expect("required column");
            numeric.insert(name.clone(), parse_col(name, col, &cells)?);
        }

        Ok(Dataset {
            schema,
            columns,
            cells,
            numeric,
            targets,
        })
    }

    pub fn schema(&self) -> &ColumnSchema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn targets_at(&self, indices: &[usize]) -> Vec<f64> {
        indices.iter().map(|&i| self.targets[i]).collect()
    }

    /// Raw cell text.
    pub fn value(&self, row: usize, column: &str) -> Result<&str> {
        let col = self
            .columns
            .iter()
            .position(|c| c == column)
            .ok_or_else(|| Error::MissingColumn(column.to_string()))?;
        Ok(&self.cells[row][col])
    }

    pub fn numeric_column(&self, column: &str) -> Result<&[f64]> {
        self.numeric
            .get(column)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingColumn(column.to_string()))
    }
}

/// Reads a headed, RFC 4180 CSV file.
pub fn load_csv(path: impl AsRef<Path>, schema: ColumnSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_csv_bytes(&bytes, schema)
}

pub fn load_csv_bytes(bytes: &[u8], schema: ColumnSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes);
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        records.push(rec.iter().map(str::to_string).collect());
    }
    Dataset::from_records(schema, &header, records)
}

/// Row indices of a train / test / calibration split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub calibration: Vec<usize>,
}

impl SplitIndices {
    pub fn fingerprint(&self) -> String {
        let mut h = Fingerprint::new();
        for (tag, list) in [(0u64, &self.train), (1, &self.test), (2, &self.calibration)] {
            h.write_u64(tag);
            h.write_u64(list.len() as u64);
            for &i in list {
                h.write_u64(i as u64);
            }
        }
        format!("{:016x}", h.finish())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub test: f64,
    pub calibration: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.8,
            test: 0.1,
            calibration: 0.1,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("train", self.train),
            ("test", self.test),
            ("calibration", self.calibration),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::validation(format!(
                    "{name} fraction {f} is outside [0, 1]"
                )));
            }
        }
        let sum = self.train + self.test + self.calibration;
        if sum > 1.0 + 1e-12 {
            return Err(Error::validation(format!(
                "split fractions sum to {sum}, which exceeds 1"
            )));
        }
        Ok(())
    }
}

/// Seeded random split. Test and calibration sizes are `round(f * n)`; when
/// the fractions cover the whole dataset the rounding remainder goes to train.
pub fn split(n: usize, fractions: SplitFractions, seed: u64) -> Result<SplitIndices> {
    fractions.validate()?;
    if n < 3 {
        return Err(Error::validation(format!(
            "dataset has {n} rows; at least 3 are needed to split"
        )));
    }
    let size = |f: f64| (f * n as f64).round() as usize;
    let n_test = size(fractions.test);
    let n_cal = size(fractions.calibration);
    let covers_all = fractions.train + fractions.test + fractions.calibration >= 1.0 - 1e-12;
    let n_train = if covers_all {
        n.checked_sub(n_test + n_cal).ok_or_else(|| {
            Error::validation("test and calibration splits exceed the dataset size")
        })?
    } else {
        size(fractions.train)
    };
    if n_train + n_test + n_cal > n {
        return Err(Error::validation(
            "rounded split sizes exceed the dataset size",
        ));
    }
    for (name, f, k) in [
        ("train", fractions.train, n_train),
        ("test", fractions.test, n_test),
        ("calibration", fractions.calibration, n_cal),
    ] {
        if f > 0.0 && k == 0 {
            return Err(Error::validation(format!(
                "{name} fraction {f} yields an empty split for n = {n}"
            )));
        }
    }

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng_from(seed));
    let take = |k: usize, from: &mut &[usize]| {
        let (head, tail) = from.split_at(k);
        *from = tail;
        let mut v = head.to_vec();
        v.sort_unstable();
        v
    };
    let mut rest: &[usize] = &perm;
    let test = take(n_test, &mut rest);
    let calibration = take(n_cal, &mut rest);
    let train = take(n_train, &mut rest);
    Ok(SplitIndices {
        train,
        test,
        calibration,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitiveAttribute {
    pub column: String,
    pub privileged: String,
}

/// Which sensitive attributes define subgroups, and which intersections to cross.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubgroupSpec {
    pub attributes: Vec<SensitiveAttribute>,
    #[serde(default)]
    pub intersections: Vec<Vec<String>>,
}

impl SubgroupSpec {
    pub fn validate(&self, schema: &ColumnSchema) -> Result<()> {
        for a in &self.attributes {
            if !schema.sensitive.contains(&a.column) {
                return Err(Error::validation(format!(
                    "subgroup attribute `{}` is not declared sensitive",
                    a.column
                )));
            }
        }
        for inter in &self.intersections {
            if inter.len() < 2 {
                return Err(Error::validation(format!(
                    "intersection {inter:?} needs at least two attributes"
                )));
            }
            for c in inter {
                if !self.attributes.iter().any(|a| &a.column == c) {
                    return Err(Error::validation(format!(
                        "intersection member `{c}` is not a declared subgroup attribute"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Attribute names plus `a&b` intersection names, in declaration order.
    pub fn group_names(&self) -> Vec<String> {
        self.attributes
            .iter()
            .map(|a| a.column.clone())
            .chain(self.intersections.iter().map(|i| i.join("&")))
            .collect()
    }

    fn privileged_value(&self, column: &str) -> &str {
        &self
            .attributes
            .iter()
            .find(|a| a.column == column)
            .expect("validated attribute")
            .privileged
    }
}

pub const OVERALL: &str = "overall";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subgroup {
    pub name: String,
    pub indices: Vec<usize>,
}

impl Subgroup {
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Named subgroups of one split, `overall` first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgroupPartition {
    pub groups: Vec<Subgroup>,
}

impl SubgroupPartition {
    pub fn get(&self, name: &str) -> Option<&Subgroup> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.groups.iter().map(|g| g.name.clone()).collect()
    }

    pub fn empty_groups(&self) -> Vec<&str> {
        self.groups
            .iter()
            .filter(|g| g.is_empty())
            .map(|g| g.name.as_str())
            .collect()
    }

    /// Re-expresses dataset row indices as positions within `split`, so the
    /// groups can index per-split prediction vectors.
    pub fn to_positions(&self, split: &[usize]) -> SubgroupPartition {
        let pos: HashMap<usize, usize> = split.iter().enumerate().map(|(p, &i)| (i, p)).collect();
        SubgroupPartition {
            groups: self
                .groups
                .iter()
                .map(|g| Subgroup {
                    name: g.name.clone(),
                    indices: g.indices.iter().filter_map(|i| pos.get(i).copied()).collect(),
                })
                .collect(),
        }
    }
}

/// Partitions `split` into `a_priv` / `a_dis` per attribute and
/// `a&b_priv` / `a&b_dis` per intersection, plus `overall`.
pub fn partition_subgroups(
    dataset: &Dataset,
    split: &[usize],
    spec: &SubgroupSpec,
) -> Result<SubgroupPartition> {
    spec.validate(dataset.schema())?;
    let mut groups = vec![Subgroup {
        name: OVERALL.to_string(),
        indices: split.to_vec(),
    }];

    let is_priv = |row: usize, column: &str| -> Result<bool> {
        Ok(dataset.value(row, column)? == spec.privileged_value(column))
    };

    for a in &spec.attributes {
        let mut priv_rows = Vec::new();
        let mut dis_rows = Vec::new();
        for &i in split {
            if is_priv(i, &a.column)? {
                priv_rows.push(i);
            } else {
                dis_rows.push(i);
            }
        }
        groups.push(Subgroup {
            name: format!("{}_priv", a.column),
            indices: priv_rows,
        });
        groups.push(Subgroup {
            name: format!("{}_dis", a.column),
            indices: dis_rows,
        });
    }

    for inter in &spec.intersections {
        let name = inter.join("&");
        let mut priv_rows = Vec::new();
        let mut dis_rows = Vec::new();
        for &i in split {
            let flags = inter
                .iter()
                .map(|c| is_priv(i, c))
                .collect::<Result<Vec<bool>>>()?;
            if flags.iter().all(|f| *f) {
                priv_rows.push(i);
            } else if flags.iter().all(|f| !*f) {
                dis_rows.push(i);
            }
        }
        groups.push(Subgroup {
            name: format!("{name}_priv"),
            indices: priv_rows,
        });
        groups.push(Subgroup {
            name: format!("{name}_dis"),
            indices: dis_rows,
        });
    }

    let partition = SubgroupPartition { groups };
    for g in partition.empty_groups() {
        log::warn!("subgroup `{g}` is empty; its metrics will be undefined");
    }
    Ok(partition)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericScaler {
    pub column: String,
    pub mean: f64,
    /// Population standard deviation of the train rows.
    pub std: f64,
    /// `std`, or 1 when the column is constant on train.
    pub divisor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryVocabulary {
    pub column: String,
    /// First-seen-in-train order.
    pub categories: Vec<String>,
}

/// Train-fitted one-hot vocabularies and standardization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub numeric: Vec<NumericScaler>,
    pub categorical: Vec<CategoryVocabulary>,
    pub warnings: Vec<String>,
}

impl Preprocessor {
    pub fn width(&self) -> usize {
        self.numeric.len() + self.categorical.iter().map(|c| c.categories.len()).sum::<usize>()
    }
}

pub fn fit_preprocessor(dataset: &Dataset, train: &[usize]) -> Result<Preprocessor> {
    if train.is_empty() {
        return Err(Error::validation("cannot fit a preprocessor on an empty train split"));
    }
    let schema = dataset.schema();
    let mut warnings = Vec::new();
    let mut numeric = Vec::new();
    for column in schema.feature_numericals() {
        let values = dataset.numeric_column(&column)?;
        let n = train.len() as f64;
        let mean = train.iter().map(|&i| values[i]).sum::<f64>() / n;
        let var = train.iter().map(|&i| (values[i] - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        let divisor = if std > 0.0 {
            std
        } else {
            let msg = format!("numerical column `{column}` is constant on train; scaling divisor set to 1");
            log::warn!("{msg}");
            warnings.push(msg);
            1.0
        };
        numeric.push(NumericScaler {
            column,
            mean,
            std,
            divisor,
        });
    }

    let mut categorical = Vec::new();
    for column in schema.feature_categoricals() {
        let mut categories: Vec<String> = Vec::new();
        for &i in train {
            let v = dataset.value(i, &column)?;
            if !categories.iter().any(|c| c == v) {
                categories.push(v.to_string());
            }
        }
        categorical.push(CategoryVocabulary { column, categories });
    }

    Ok(Preprocessor {
        numeric,
        categorical,
        warnings,
    })
}

/// Encodes rows: scaled numericals first, then one-hot blocks. Categories
/// unseen at fit time encode as an all-zero block.
pub fn transform(preproc: &Preprocessor, dataset: &Dataset, indices: &[usize]) -> Result<Matrix> {
    let width = preproc.width();
    let mut out = Matrix::zeros(indices.len(), width);
    let numeric_cols = preproc
        .numeric
        .iter()
        .map(|s| dataset.numeric_column(&s.column))
        .collect::<Result<Vec<_>>>()?;
    for (r, &i) in indices.iter().enumerate() {
        let row = out.row_mut(r);
        for (j, s) in preproc.numeric.iter().enumerate() {
            row[j] = (numeric_cols[j][i] - s.mean) / s.divisor;
        }
        let mut offset = preproc.numeric.len();
        for vocab in &preproc.categorical {
            let v = dataset.value(i, &vocab.column)?;
            if let Some(k) = vocab.categories.iter().position(|c| c == v) {
                row[offset + k] = 1.0;
            }
            offset += vocab.categories.len();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(rows: &[(&str, &str, &str)]) -> Dataset {
        let mut schema = ColumnSchema::new("label");
        schema.numericals = vec!["age".into()];
        schema.sensitive = vec!["sex".into()];
        let header = vec!["age".to_string(), "sex".to_string(), "label".to_string()];
        let records = rows
            .iter()
            .map(|(a, s, l)| vec![a.to_string(), s.to_string(), l.to_string()])
            .collect();
        Dataset::from_records(schema, &header, records).unwrap()
    }

    #[test]
    fn loads_three_row_csv() {
        let mut schema = ColumnSchema::new("label");
        schema.numericals = vec!["age".into()];
        schema.sensitive = vec!["sex".into()];
        let csv = b"age,sex,label\n30,M,1\n41,F,0\n25,F,1\n";
        let ds = load_csv_bytes(csv, schema).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.numeric_column("age").unwrap(), &[30.0, 41.0, 25.0]);
        assert_eq!(ds.value(1, "sex").unwrap(), "F");
    }

    #[test]
    fn missing_column_is_named() {
        let mut schema = ColumnSchema::new("label");
        schema.sensitive = vec!["race".into()];
        let err = load_csv_bytes(b"age,sex,label\n30,M,1\n", schema).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(ref c) if c == "race"), "{err}");
    }

    #[test]
    fn non_binary_target_rejected() {
        let schema = ColumnSchema::new("label");
        let err = load_csv_bytes(b"label\n0\n2\n", schema).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn unparseable_numeric_cell_reports_location() {
        let mut schema = ColumnSchema::new("label");
        schema.numericals = vec!["age".into()];
        let err = load_csv_bytes(b"age,label\n30,1\nabc,0\n", schema).unwrap_err();
        match err {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "age");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn quoted_fields_are_supported() {
        let mut schema = ColumnSchema::new("label");
        schema.categoricals = vec!["city".into()];
        let ds = load_csv_bytes(b"city,label\n\"Paris, FR\",1\n\"a \"\"b\"\"\",0\n", schema).unwrap();
        assert_eq!(ds.value(0, "city").unwrap(), "Paris, FR");
        assert_eq!(ds.value(1, "city").unwrap(), "a \"b\"");
    }

    #[test]
    fn schema_invariants() {
        let mut s = ColumnSchema::new("y");
        s.numericals = vec!["y".into()];
        assert!(s.validate().is_err());
        let mut s = ColumnSchema::new("y");
        s.numericals = vec!["a".into()];
        s.categoricals = vec!["a".into()];
        assert!(s.validate().is_err());
    }

    #[test]
    fn split_sizes_follow_protocol() {
        let s = split(100, SplitFractions::default(), 7).unwrap();
        assert_eq!((s.train.len(), s.test.len(), s.calibration.len()), (80, 10, 10));
        let all: BTreeSet<usize> = s
            .train
            .iter()
            .chain(&s.test)
            .chain(&s.calibration)
            .copied()
            .collect();
        assert_eq!(all.len(), 100);
    }

    #[test]
    fn identity_split() {
        let f = SplitFractions {
            train: 1.0,
            test: 0.0,
            calibration: 0.0,
        };
        let s = split(10, f, 3).unwrap();
        assert_eq!(s.train, (0..10).collect::<Vec<_>>());
        assert!(s.test.is_empty() && s.calibration.is_empty());
    }

    #[test]
    fn split_is_deterministic() {
        let a = split(57, SplitFractions::default(), 11).unwrap();
        let b = split(57, SplitFractions::default(), 11).unwrap();
        assert_eq!(a, b);
        let c = split(57, SplitFractions::default(), 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let f = SplitFractions {
            train: 0.8,
            test: 0.3,
            calibration: 0.1,
        };
        assert!(split(100, f, 1).is_err());
        let f = SplitFractions {
            train: 0.9,
            test: 0.05,
            calibration: 0.05,
        };
        assert!(split(5, f, 1).is_err(), "0.05 * 5 rounds to 0 rows");
    }

    #[test]
    fn partial_split_leaves_rows_unused() {
        let f = SplitFractions {
            train: 0.5,
            test: 0.2,
            calibration: 0.0,
        };
        let s = split(10, f, 1).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (5, 2));
    }

    #[test]
    fn single_attribute_partition() {
        let rows: Vec<(&str, &str, &str)> = (0..10)
            .map(|i| ("1", if i < 6 { "M" } else { "F" }, "0"))
            .collect();
        let ds = toy(&rows);
        let spec = SubgroupSpec {
            attributes: vec![SensitiveAttribute {
                column: "sex".into(),
                privileged: "M".into(),
            }],
            intersections: vec![],
        };
        let all: Vec<usize> = (0..10).collect();
        let p = partition_subgroups(&ds, &all, &spec).unwrap();
        assert_eq!(p.get("sex_priv").unwrap().indices.len(), 6);
        assert_eq!(p.get("sex_dis").unwrap().indices.len(), 4);
        assert_eq!(p.get(OVERALL).unwrap().indices, all);
    }

    #[test]
    fn intersectional_membership() {
        let mut schema = ColumnSchema::new("label");
        schema.sensitive = vec!["sex".into(), "race".into()];
        let header: Vec<String> = ["sex", "race", "label"].iter().map(|s| s.to_string()).collect();
        let records = vec![
            vec!["M".into(), "W".into(), "1".into()],
            vec!["M".into(), "B".into(), "0".into()],
            vec!["F".into(), "B".into(), "0".into()],
        ];
        let ds = Dataset::from_records(schema, &header, records).unwrap();
        let spec = SubgroupSpec {
            attributes: vec![
                SensitiveAttribute {
                    column: "sex".into(),
                    privileged: "M".into(),
                },
                SensitiveAttribute {
                    column: "race".into(),
                    privileged: "W".into(),
                },
            ],
            intersections: vec![vec!["sex".into(), "race".into()]],
        };
        let p = partition_subgroups(&ds, &[0, 1, 2], &spec).unwrap();
        let has = |g: &str, i: usize| p.get(g).unwrap().indices.contains(&i);
        assert!(has("sex_priv", 0) && has("race_priv", 0) && has("sex&race_priv", 0));
        assert!(has("sex_priv", 1) && has("race_dis", 1));
        assert!(!has("sex&race_priv", 1) && !has("sex&race_dis", 1));
        assert!(has("sex&race_dis", 2));
    }

    #[test]
    fn all_privileged_flags_empty_dis() {
        let ds = toy(&[("1", "M", "0"), ("2", "M", "1"), ("3", "M", "0")]);
        let spec = SubgroupSpec {
            attributes: vec![SensitiveAttribute {
                column: "sex".into(),
                privileged: "M".into(),
            }],
            intersections: vec![],
        };
        let p = partition_subgroups(&ds, &[0, 1, 2], &spec).unwrap();
        assert_eq!(p.empty_groups(), vec!["sex_dis"]);
    }

    #[test]
    fn subgroup_spec_validation() {
        let schema = {
            let mut s = ColumnSchema::new("y");
            s.sensitive = vec!["sex".into()];
            s
        };
        let bad = SubgroupSpec {
            attributes: vec![SensitiveAttribute {
                column: "race".into(),
                privileged: "W".into(),
            }],
            intersections: vec![],
        };
        assert!(bad.validate(&schema).is_err());
        let bad = SubgroupSpec {
            attributes: vec![SensitiveAttribute {
                column: "sex".into(),
                privileged: "M".into(),
            }],
            intersections: vec![vec!["sex".into()]],
        };
        assert!(bad.validate(&schema).is_err());
    }

    #[test]
    fn preprocessor_statistics() {
        let ds = toy(&[("1", "M", "0"), ("2", "F", "1"), ("3", "M", "0")]);
        let p = fit_preprocessor(&ds, &[0, 1, 2]).unwrap();
        assert_eq!(p.numeric[0].mean, 2.0);
        assert!((p.numeric[0].std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(p.categorical[0].categories, vec!["M", "F"]);
        assert_eq!(p.width(), 3);
        let x = transform(&p, &ds, &[1]).unwrap();
        assert_eq!(x.row(0), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn constant_column_scales_by_one() {
        let ds = toy(&[("5", "M", "0"), ("5", "F", "1"), ("5", "M", "0")]);
        let p = fit_preprocessor(&ds, &[0, 1, 2]).unwrap();
        assert_eq!(p.numeric[0].divisor, 1.0);
        assert_eq!(p.warnings.len(), 1);
        let x = transform(&p, &ds, &[0, 1, 2]).unwrap();
        assert!(x.iter_rows().all(|r| r[0] == 0.0));
    }

    #[test]
    fn unseen_category_encodes_as_zeros() {
        let ds = toy(&[("1", "a", "0"), ("2", "b", "1"), ("3", "a", "0"), ("4", "c", "1")]);
        let p = fit_preprocessor(&ds, &[0, 1, 2]).unwrap();
        assert_eq!(p.categorical[0].categories, vec!["a", "b"]);
        let x = transform(&p, &ds, &[3]).unwrap();
        assert_eq!(&x.row(0)[1..], &[0.0, 0.0]);
    }

    #[test]
    fn excluded_sensitive_attribute_is_not_a_feature() {
        let mut schema = ColumnSchema::new("label");
        schema.numericals = vec!["age".into()];
        schema.sensitive = vec!["sex".into()];
        schema.exclude_from_features = vec!["sex".into()];
        assert!(schema.feature_categoricals().is_empty());
        assert_eq!(schema.feature_numericals(), vec!["age".to_string()]);
    }
}
