//! Labeled datasets, CSV ingestion and the two-Gaussian contamination generator.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing value at line {line}, column `{column}`")]
    MissingCell { line: u64, column: String },
    #[error("cannot parse `{value}` as a number at line {line}, column `{column}`")]
    BadNumber {
        line: u64,
        column: String,
        value: String,
    },
    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },
    #[error("label column `{0}` not found in header")]
    UnknownLabelColumn(String),
    #[error("dataset has no rows")]
    Empty,
    #[error("dataset has no feature columns")]
    NoFeatures,
    #[error("{labels} labels for {rows} feature rows")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("class `{0}` has no cases")]
    EmptyClass(String),
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// An n x p feature matrix with one class label per row.
///
/// Labels are zero-based indices into `class_names`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: DMatrix<f64>,
    labels: Vec<usize>,
    class_names: Vec<String>,
    feature_names: Vec<String>,
}

impl LabeledDataset {
    pub fn new(
        features: DMatrix<f64>,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self, DataError> {
        let feature_names = (1..=features.ncols()).map(|j| format!("x{j}")).collect();
        Self::with_feature_names(features, labels, class_names, feature_names)
    }

    pub fn with_feature_names(
        features: DMatrix<f64>,
        labels: Vec<usize>,
        class_names: Vec<String>,
        feature_names: Vec<String>,
    ) -> Result<Self, DataError> {
        if features.nrows() == 0 {
            return Err(DataError::Empty);
        }
        if features.ncols() == 0 {
            return Err(DataError::NoFeatures);
        }
        if features.nrows() != labels.len() {
            return Err(DataError::LengthMismatch {
                rows: features.nrows(),
                labels: labels.len(),
            });
        }
        if feature_names.len() != features.ncols() {
            return Err(DataError::Config(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                features.ncols()
            )));
        }
        for j in 0..features.ncols() {
            for i in 0..features.nrows() {
                if !features[(i, j)].is_finite() {
                    return Err(DataError::NonFinite { row: i, column: j });
                }
            }
        }
        let g = class_names.len();
        let mut seen = vec![false; g];
        for &l in &labels {
            if l >= g {
                return Err(DataError::LabelOutOfRange {
                    label: l,
                    classes: g,
                });
            }
            seen[l] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(DataError::EmptyClass(class_names[missing].clone()));
        }
        Ok(Self {
            features,
            labels,
            class_names,
            feature_names,
        })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn p(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.features.row(i).transpose()
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_classes()];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// Row indices belonging to class `g`, in data order.
    pub fn class_indices(&self, g: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.labels[i] == g).collect()
    }

    /// Sub-matrix holding only the rows of class `g`.
    pub fn class_rows(&self, g: usize) -> DMatrix<f64> {
        self.features.select_rows(&self.class_indices(g))
    }

    /// Re-index the labels so that class `k` is `names[k]`.
    ///
    /// `names` must contain every class of the dataset; extra names are
    /// kept but such classes would be empty, so they are rejected.
    pub fn reorder_classes(&self, names: &[String]) -> Result<Self, DataError> {
        let lookup: HashMap<&str, usize> = names
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let mut map = Vec::with_capacity(self.n_classes());
        for name in &self.class_names {
            match lookup.get(name.as_str()) {
                Some(&k) => map.push(k),
                None => return Err(DataError::UnknownClass(name.clone())),
            }
        }
        let labels = self.labels.iter().map(|&l| map[l]).collect();
        Self::with_feature_names(
            self.features.clone(),
            labels,
            names.to_vec(),
            self.feature_names.clone(),
        )
    }

    /// Writes the dataset as CSV with the label in the last column.
    ///
    /// Floats use the shortest representation that parses back to the same
    /// bits, so a save/load round trip is exact.
    pub fn write_csv<W: Write>(
        &self,
        writer: W,
        label_column: &str,
        provenance: Option<&[Provenance]>,
    ) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push(label_column);
        if provenance.is_some() {
            header.push("provenance");
        }
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec: Vec<String> = (0..self.p())
                .map(|j| self.features[(i, j)].to_string())
                .collect();
            rec.push(self.class_names[self.labels[i]].clone());
            if let Some(prov) = provenance {
                rec.push(prov[i].as_str().to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>, label_column: &str) -> Result<(), DataError> {
        self.write_csv(File::create(path)?, label_column, None)
    }
}

/// A numeric table read from CSV, with an optional string column split off.
#[derive(Debug, Clone)]
pub struct NumericTable {
    pub column_names: Vec<String>,
    pub values: DMatrix<f64>,
    pub text_column: Option<Vec<String>>,
}

/// Reads a comma-separated table whose columns are all numeric except
/// `text_column` (when given). Missing columns named by `text_column` are
/// an error only if `require_text` is set.
pub fn read_numeric_table<R: Read>(
    reader: R,
    text_column: Option<&str>,
    require_text: bool,
) -> Result<NumericTable, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let text_idx = match text_column {
        Some(name) => {
            let idx = headers.iter().position(|h| h == name);
            if idx.is_none() && require_text {
                return Err(DataError::UnknownLabelColumn(name.to_string()));
            }
            idx
        }
        None => None,
    };
    let numeric_cols: Vec<usize> = (0..headers.len()).filter(|&j| Some(j) != text_idx).collect();
    if numeric_cols.is_empty() {
        return Err(DataError::NoFeatures);
    }
    let mut values = Vec::new();
    let mut text = Vec::new();
    let mut rows = 0usize;
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        for &j in &numeric_cols {
            let cell = record.get(j).unwrap_or("");
            if cell.is_empty() {
                return Err(DataError::MissingCell {
                    line,
                    column: headers[j].clone(),
                });
            }
            let v: f64 = cell.parse().map_err(|_| DataError::BadNumber {
                line,
                column: headers[j].clone(),
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(DataError::BadNumber {
                    line,
                    column: headers[j].clone(),
                    value: cell.to_string(),
                });
            }
            values.push(v);
        }
        if let Some(t) = text_idx {
            let cell = record.get(t).unwrap_or("");
            if cell.is_empty() {
                return Err(DataError::MissingCell {
                    line,
                    column: headers[t].clone(),
                });
            }
            text.push(cell.to_string());
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(DataError::Empty);
    }
    Ok(NumericTable {
        column_names: numeric_cols.iter().map(|&j| headers[j].clone()).collect(),
        values: DMatrix::from_row_slice(rows, numeric_cols.len(), &values),
        text_column: text_idx.map(|_| text),
    })
}

/// Reads a labeled dataset; class names are the distinct labels in order of
/// first appearance.
pub fn read_csv<R: Read>(reader: R, label_column: &str) -> Result<LabeledDataset, DataError> {
    let table = read_numeric_table(reader, Some(label_column), true)?;
    let raw = table.text_column.expect("label column required");
    let mut class_names: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let labels = raw
        .into_iter()
        .map(|s| {
            *index.entry(s.clone()).or_insert_with(|| {
                class_names.push(s);
                class_names.len() - 1
            })
        })
        .collect();
    LabeledDataset::with_feature_names(table.values, labels, class_names, table.column_names)
}

pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<LabeledDataset, DataError> {
    read_csv(File::open(path)?, label_column)
}

/// How a case of the contaminated dataset relates to its clean counterpart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Clean,
    Mislabeled,
    Replaced,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Clean => "clean",
            Provenance::Mislabeled => "mislabeled",
            Provenance::Replaced => "replaced",
        }
    }
}

/// Parameters of the two-class bivariate contamination experiment.
///
/// Every key has a default, so a config file only needs the keys it changes:
///
/// ```toml
/// n1 = 80
/// n2 = 100
/// mean1 = [0.0, 0.0]
/// cov1 = [[1.0, 0.4], [0.4, 1.0]]
/// swap1 = 4
/// out1 = 5
/// outlier_center1 = [-3.0, 6.0]
/// outlier_spread = 0.3
/// seed = 1
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n1: usize,
    pub n2: usize,
    pub mean1: [f64; 2],
    pub mean2: [f64; 2],
    pub cov1: [[f64; 2]; 2],
    pub cov2: [[f64; 2]; 2],
    /// Class-1 cases relabeled as class 2.
    pub swap1: usize,
    pub swap2: usize,
    /// Class-1 cases replaced by draws around `outlier_center1`.
    pub out1: usize,
    pub out2: usize,
    pub outlier_center1: [f64; 2],
    pub outlier_center2: [f64; 2],
    /// Outlier clusters have covariance `outlier_spread * I`.
    pub outlier_spread: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n1: 80,
            n2: 100,
            mean1: [0.0, 0.0],
            mean2: [3.5, 2.0],
            cov1: [[1.0, 0.4], [0.4, 1.0]],
            cov2: [[1.5, -0.6], [-0.6, 1.2]],
            swap1: 4,
            swap2: 4,
            out1: 5,
            out2: 8,
            outlier_center1: [-3.0, 6.0],
            outlier_center2: [-1.0, -5.0],
            outlier_spread: 0.3,
            seed: 1,
        }
    }
}

impl SyntheticConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, DataError> {
        toml::from_str(text).map_err(|e| DataError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.n1 == 0 || self.n2 == 0 {
            return Err(DataError::Config("class sizes must be positive".into()));
        }
        for (name, cov) in [("cov1", &self.cov1), ("cov2", &self.cov2)] {
            cholesky_2x2(cov).ok_or_else(|| {
                DataError::Config(format!("{name} is not symmetric positive definite"))
            })?;
        }
        if self.swap1 + self.out1 > self.n1 || self.swap2 + self.out2 > self.n2 {
            return Err(DataError::Config(
                "noise counts exceed class sizes".into(),
            ));
        }
        if !(self.outlier_spread >= 0.0 && self.outlier_spread.is_finite()) {
            return Err(DataError::Config("outlier_spread must be >= 0".into()));
        }
        let all = self
            .mean1
            .iter()
            .chain(&self.mean2)
            .chain(&self.outlier_center1)
            .chain(&self.outlier_center2);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(DataError::Config("non-finite mean or center".into()));
        }
        Ok(())
    }
}

fn cholesky_2x2(cov: &[[f64; 2]; 2]) -> Option<Matrix2<f64>> {
    if cov[0][1] != cov[1][0] {
        return None;
    }
    Matrix2::new(cov[0][0], cov[0][1], cov[1][0], cov[1][1])
        .cholesky()
        .map(|c| c.l())
}

/// Clean data, its contaminated copy, and per-case provenance of the copy.
#[derive(Debug, Clone)]
pub struct ContaminatedPair {
    pub clean: LabeledDataset,
    pub contaminated: LabeledDataset,
    pub provenance: Vec<Provenance>,
}

/// Draws the clean two-class sample, then injects label noise (the cases of
/// each class nearest their own class mean get the other label, so they sit
/// deep inside the cloud opposing their new label) and
/// measurement noise (randomly chosen remaining cases are replaced by draws
/// from that class's outlier cluster).
pub fn generate_contaminated_pair(config: &SyntheticConfig) -> Result<ContaminatedPair, DataError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.n1 + config.n2;
    let mut features = DMatrix::zeros(n, 2);
    let mut labels = Vec::with_capacity(n);

    let classes = [
        (config.n1, config.mean1, &config.cov1),
        (config.n2, config.mean2, &config.cov2),
    ];
    let mut row = 0;
    for (g, (size, mean, cov)) in classes.iter().enumerate() {
        let l = cholesky_2x2(cov).expect("validated");
        let mu = Vector2::new(mean[0], mean[1]);
        for _ in 0..*size {
            let z = Vector2::new(
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            );
            let x = mu + l * z;
            features[(row, 0)] = x[0];
            features[(row, 1)] = x[1];
            labels.push(g);
            row += 1;
        }
    }
    let class_names = vec!["1".to_string(), "2".to_string()];
    let clean = LabeledDataset::new(features.clone(), labels.clone(), class_names.clone())?;

    let mut provenance = vec![Provenance::Clean; n];
    let mut noisy_features = features;
    let mut noisy_labels = labels;
    let offsets = [0, config.n1];
    let swaps = [config.swap1, config.swap2];
    let outs = [config.out1, config.out2];
    let own_mean = [config.mean1, config.mean2];
    let centers = [config.outlier_center1, config.outlier_center2];
    let sd = config.outlier_spread.sqrt();

    for g in 0..2 {
        let size = classes[g].0;
        let members: Vec<usize> = (offsets[g]..offsets[g] + size).collect();
        let target = own_mean[g];
        let dist2 = |i: usize| {
            let dx = noisy_features[(i, 0)] - target[0];
            let dy = noisy_features[(i, 1)] - target[1];
            dx * dx + dy * dy
        };
        let mut by_distance = members.clone();
        by_distance.sort_by(|&a, &b| dist2(a).total_cmp(&dist2(b)).then(a.cmp(&b)));
        for &i in by_distance.iter().take(swaps[g]) {
            noisy_labels[i] = 1 - g;
            provenance[i] = Provenance::Mislabeled;
        }

        let candidates: Vec<usize> = members
            .into_iter()
            .filter(|&i| provenance[i] == Provenance::Clean)
            .collect();
        let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, candidates.len(), outs[g])
            .into_iter()
            .map(|k| candidates[k])
            .collect();
        picked.sort_unstable();
        for i in picked {
            for (j, c) in centers[g].iter().enumerate() {
                let z: f64 = StandardNormal.sample(&mut rng);
                noisy_features[(i, j)] = c + sd * z;
            }
            provenance[i] = Provenance::Replaced;
        }
    }
    let contaminated = LabeledDataset::new(noisy_features, noisy_labels, class_names)?;
    Ok(ContaminatedPair {
        clean,
        contaminated,
        provenance,
    })
}

/// Writes `case,provenance` rows with one-based case numbers.
pub fn write_provenance_csv<W: Write>(writer: W, provenance: &[Provenance]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["case", "provenance"])?;
    for (i, p) in provenance.iter().enumerate() {
        w.write_record([(i + 1).to_string(), p.as_str().to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_csv() -> &'static str {
        "x,y,label\n1.0,2.0,a\n1.5,2.5,a\n3.0,0.5,b\n3.5,1.0,b\n"
    }

    #[test]
    fn reads_small_csv() {
        let ds = read_csv(small_csv().as_bytes(), "label").unwrap();
        assert_eq!((ds.n(), ds.p(), ds.n_classes()), (4, 2, 2));
        assert_eq!(ds.class_names(), ["a", "b"]);
        assert_eq!(ds.labels(), [0, 0, 1, 1]);
        assert_eq!(ds.feature_names(), ["x", "y"]);
        assert_eq!(ds.features()[(2, 0)], 3.0);
    }

    #[test]
    fn first_appearance_order() {
        let ds = read_csv("v,c\n1,z\n2,a\n3,z\n".as_bytes(), "c").unwrap();
        assert_eq!(ds.class_names(), ["z", "a"]);
        assert_eq!(ds.labels(), [0, 1, 0]);
    }

    #[test]
    fn blank_cell_is_named() {
        let err = read_csv("x,y,label\n1,2,a\n3,,b\n".as_bytes(), "label").unwrap_err();
        match err {
            DataError::MissingCell { line, column } => {
                assert_eq!(line, 3);
                assert_eq!(column, "y");
            }
            other => panic!("unexpected {other:?}"),
        }
        let err = read_csv("x,label\nfoo,a\n".as_bytes(), "label").unwrap_err();
        assert!(matches!(err, DataError::BadNumber { line: 2, .. }));
    }

    #[test]
    fn unknown_label_column() {
        let err = read_csv(small_csv().as_bytes(), "class").unwrap_err();
        assert!(matches!(err, DataError::UnknownLabelColumn(c) if c == "class"));
    }

    #[test]
    fn invariants_enforced() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let names = vec!["a".to_string(), "b".to_string()];
        assert!(matches!(
            LabeledDataset::new(x.clone(), vec![0, 0], names.clone()),
            Err(DataError::EmptyClass(_))
        ));
        assert!(matches!(
            LabeledDataset::new(x.clone(), vec![0, 2], names.clone()),
            Err(DataError::LabelOutOfRange { .. })
        ));
        assert!(matches!(
            LabeledDataset::new(x, vec![0], names.clone()),
            Err(DataError::LengthMismatch { .. })
        ));
        let bad = DMatrix::from_row_slice(2, 1, &[1.0, f64::NAN]);
        assert!(matches!(
            LabeledDataset::new(bad, vec![0, 1], names),
            Err(DataError::NonFinite { row: 1, column: 0 })
        ));
    }

    #[test]
    fn reorder_classes_remaps_labels() {
        let ds = read_csv(small_csv().as_bytes(), "label").unwrap();
        let r = ds.reorder_classes(&["b".into(), "a".into()]).unwrap();
        assert_eq!(r.labels(), [1, 1, 0, 0]);
        assert!(ds.reorder_classes(&["a".into()]).is_err());
    }

    #[test]
    fn default_contamination_counts() {
        let pair = generate_contaminated_pair(&SyntheticConfig::default()).unwrap();
        assert_eq!(pair.contaminated.n(), 180);
        let count = |p| pair.provenance.iter().filter(|&&q| q == p).count();
        assert_eq!(count(Provenance::Mislabeled), 8);
        assert_eq!(count(Provenance::Replaced), 13);
        assert_eq!(pair.clean.class_sizes(), [80, 100]);
        assert_eq!(pair.contaminated.class_sizes(), [80, 100]);
    }

    #[test]
    fn differences_match_provenance() {
        let pair = generate_contaminated_pair(&SyntheticConfig::default()).unwrap();
        for i in 0..pair.clean.n() {
            let label_changed = pair.clean.labels()[i] != pair.contaminated.labels()[i];
            let row_changed = pair.clean.row(i) != pair.contaminated.row(i);
            assert_eq!(label_changed, pair.provenance[i] == Provenance::Mislabeled);
            assert_eq!(row_changed, pair.provenance[i] == Provenance::Replaced);
        }
    }

    #[test]
    fn zero_noise_is_identity() {
        let cfg = SyntheticConfig {
            swap1: 0,
            swap2: 0,
            out1: 0,
            out2: 0,
            ..Default::default()
        };
        let pair = generate_contaminated_pair(&cfg).unwrap();
        assert_eq!(pair.clean, pair.contaminated);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SyntheticConfig {
            seed: 42,
            ..Default::default()
        };
        let a = generate_contaminated_pair(&cfg).unwrap();
        let b = generate_contaminated_pair(&cfg).unwrap();
        assert_eq!(a.clean, b.clean);
        assert_eq!(a.contaminated, b.contaminated);
        assert_eq!(a.provenance, b.provenance);
    }

    #[test]
    fn rejects_invalid_config() {
        let cfg = SyntheticConfig {
            cov1: [[1.0, 2.0], [2.0, 1.0]],
            ..Default::default()
        };
        assert!(matches!(generate_contaminated_pair(&cfg), Err(DataError::Config(_))));
        let cfg = SyntheticConfig {
            swap2: 60,
            out2: 50,
            ..Default::default()
        };
        assert!(generate_contaminated_pair(&cfg).is_err());
    }

    #[test]
    fn config_from_toml() {
        let cfg = SyntheticConfig::from_toml_str("n1 = 10\nseed = 7\ncov2 = [[2.0, 0.0], [0.0, 2.0]]\n")
            .unwrap();
        assert_eq!(cfg.n1, 10);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.n2, 100);
        assert_eq!(cfg.cov2, [[2.0, 0.0], [0.0, 2.0]]);
        assert!(SyntheticConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn provenance_column_written() {
        let pair = generate_contaminated_pair(&SyntheticConfig::default()).unwrap();
        let mut buf = Vec::new();
        pair.contaminated
            .write_csv(&mut buf, "label", Some(&pair.provenance))
            .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x1,x2,label,provenance\n"));
        assert_eq!(text.matches(",replaced").count(), 13);
    }
}
