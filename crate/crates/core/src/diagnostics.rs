//! Per-case diagnostics of a fitted discriminant model: posteriors, PAC,
//! silhouette width, farness, plus confusion matrices and Q-Q data.

use std::fmt::Write as _;
use std::io::Write;

use thiserror::Error;

use crate::data::LabeledDataset;
use crate::discriminant::{argmax, predict, DAModel, PredictError, Prediction};
use crate::special::{chi2_quantile, DomainError};

/// Fewest within-class distances from which a farness CDF is estimated.
pub const MIN_FARNESS_CASES: usize = 5;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("PAC needs at least two classes")]
    SingleClass,
    #[error("given class {given} out of range for {classes} classes")]
    ClassOutOfRange { given: usize, classes: usize },
    #[error("farness unavailable for class `{class}`: only {cases} usable distances")]
    FarnessUnavailable { class: String, cases: usize },
    #[error("empty input")]
    Empty,
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Softmax of discriminant scores, i.e. `pi_g f_g(x) / sum_k pi_k f_k(x)`.
///
/// The scores differ from `ln pi_g + ln phi(x; mu_g, S_g)` only by a
/// class-independent constant, which cancels.
pub fn posteriors_from_scores(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn posteriors(model: &DAModel, x: &[f64]) -> Result<Vec<f64>, PredictError> {
    Ok(posteriors_from_scores(&predict(model, x)?.scores))
}

fn check_given(len: usize, given: usize) -> Result<(), DiagnosticsError> {
    if len < 2 {
        return Err(DiagnosticsError::SingleClass);
    }
    if given >= len {
        return Err(DiagnosticsError::ClassOutOfRange {
            given,
            classes: len,
        });
    }
    Ok(())
}

/// Conditional probability of the best alternative class.
pub fn pac(posteriors: &[f64], given: usize) -> Result<f64, DiagnosticsError> {
    check_given(posteriors.len(), given)?;
    let alt = posteriors
        .iter()
        .enumerate()
        .filter(|&(g, _)| g != given)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(alt / (posteriors[given] + alt))
}

/// PAC from log-numerators (or scores): a logistic function of the gap
/// between the given class and its best competitor, immune to underflow.
pub fn pac_from_scores(scores: &[f64], given: usize) -> Result<f64, DiagnosticsError> {
    check_given(scores.len(), given)?;
    let alt = scores
        .iter()
        .enumerate()
        .filter(|&(g, _)| g != given)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let gap = scores[given] - alt;
    Ok(if gap >= 0.0 {
        let e = (-gap).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + gap.exp())
    })
}

pub fn silhouette(pac: f64) -> f64 {
    1.0 - 2.0 * pac
}

/// Which within-class distances feed the farness CDF.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FarnessBasis {
    /// Every training case of the class.
    #[default]
    AllCases,
    /// Only cases within the chi-squared cutoff.
    Unflagged,
}

/// Empirical distribution of within-class distances for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassFarness {
    distances: Vec<f64>,
}

impl ClassFarness {
    pub fn from_distances(mut distances: Vec<f64>) -> Option<Self> {
        if distances.len() < MIN_FARNESS_CASES || distances.iter().any(|d| !d.is_finite()) {
            return None;
        }
        distances.sort_by(f64::total_cmp);
        Some(Self { distances })
    }

    /// Sorted distances.
    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    /// Hazen plotting positions `(i - 0.5) / n`.
    pub fn plotting_positions(&self) -> Vec<f64> {
        let n = self.distances.len() as f64;
        (1..=self.distances.len()).map(|i| (i as f64 - 0.5) / n).collect()
    }

    /// Estimated `P(RD <= rd)`, interpolating linearly between plotting
    /// positions and clamped to `[0.5/n, 1 - 0.5/n]`.
    pub fn cdf(&self, rd: f64) -> f64 {
        let d = &self.distances;
        let n = d.len() as f64;
        let pos = |i: usize| (i as f64 + 0.5) / n;
        let k = d.partition_point(|&v| v <= rd);
        if k == 0 {
            return pos(0);
        }
        if k == d.len() {
            return pos(d.len() - 1);
        }
        let (x0, x1) = (d[k - 1], d[k]);
        let t = (rd - x0) / (x1 - x0);
        pos(k - 1) + t * (pos(k) - pos(k - 1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FarnessModel {
    class_names: Vec<String>,
    classes: Vec<Option<ClassFarness>>,
    available_cases: Vec<usize>,
    pub cutoff_prob: f64,
}

impl FarnessModel {
    pub fn class(&self, g: usize) -> Option<&ClassFarness> {
        self.classes.get(g).and_then(Option::as_ref)
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn farness(&self, g: usize, rd: f64) -> Result<f64, DiagnosticsError> {
        match self.class(g) {
            Some(c) => Ok(c.cdf(rd)),
            None => Err(DiagnosticsError::FarnessUnavailable {
                class: self.class_names.get(g).cloned().unwrap_or_else(|| g.to_string()),
                cases: self.available_cases.get(g).copied().unwrap_or(0),
            }),
        }
    }

    /// Farness of `distances[g]` for every class; `None` where unavailable.
    pub fn farness_all(&self, distances: &[f64]) -> Vec<Option<f64>> {
        distances
            .iter()
            .enumerate()
            .map(|(g, &d)| self.class(g).map(|c| c.cdf(d)))
            .collect()
    }

    /// Farness to every available class exceeds the cutoff.
    pub fn is_outlier(&self, farness: &[Option<f64>]) -> bool {
        let mut any = false;
        for f in farness.iter().flatten() {
            any = true;
            if *f <= self.cutoff_prob {
                return false;
            }
        }
        any
    }
}

pub fn fit_farness(model: &DAModel, data: &LabeledDataset) -> Result<FarnessModel, DiagnosticsError> {
    fit_farness_with(model, data, FarnessBasis::AllCases)
}

/// Estimates, per class, the distribution of the distance of the class's
/// training cases to the class model.
pub fn fit_farness_with(
    model: &DAModel,
    data: &LabeledDataset,
    basis: FarnessBasis,
) -> Result<FarnessModel, DiagnosticsError> {
    let groups = model.n_classes();
    let mut per_class: Vec<Vec<f64>> = vec![Vec::new(); groups];
    let cutoff = model.distance_cutoff();
    for (i, &g) in data.labels().iter().enumerate() {
        let pr = predict(model, data.row(i).as_slice())?;
        let d = pr.distances[g];
        if basis == FarnessBasis::AllCases || d <= cutoff {
            per_class[g].push(d);
        }
    }
    let available_cases = per_class.iter().map(Vec::len).collect();
    Ok(FarnessModel {
        class_names: model.class_names().to_vec(),
        classes: per_class.into_iter().map(ClassFarness::from_distances).collect(),
        available_cases,
        cutoff_prob: model.spec().outlier_cutoff_prob,
    })
}

pub fn farness(fm: &FarnessModel, g: usize, rd: f64) -> Result<f64, DiagnosticsError> {
    fm.farness(g, rd)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseDiagnostics {
    pub given: usize,
    pub predicted: usize,
    pub posteriors: Vec<f64>,
    pub pac: f64,
    pub silhouette: f64,
    /// Distance to every class model.
    pub distances: Vec<f64>,
    pub rd_given: f64,
    pub rd_predicted: f64,
    pub farness: Vec<Option<f64>>,
    pub outlier_distance: bool,
    pub outlier_farness: bool,
}

impl CaseDiagnostics {
    pub fn from_prediction(pred: &Prediction, given: usize, fm: &FarnessModel) -> Result<Self, DiagnosticsError> {
        let pac = pac_from_scores(&pred.scores, given)?;
        let farness = fm.farness_all(&pred.distances);
        Ok(Self {
            given,
            predicted: pred.predicted,
            posteriors: posteriors_from_scores(&pred.scores),
            pac,
            silhouette: silhouette(pac),
            rd_given: pred.distances[given],
            rd_predicted: pred.distances[pred.predicted],
            outlier_distance: pred.overall_outlier,
            outlier_farness: fm.is_outlier(&farness),
            distances: pred.distances.clone(),
            farness,
        })
    }

    /// Farness to the given class, when available.
    pub fn farness_given(&self) -> Option<f64> {
        self.farness[self.given]
    }
}

/// Diagnostics for every case of `data`, in data order.
pub fn diagnose(
    model: &DAModel,
    data: &LabeledDataset,
    fm: &FarnessModel,
) -> Result<Vec<CaseDiagnostics>, DiagnosticsError> {
    (0..data.n())
        .map(|i| {
            let pred = predict(model, data.row(i).as_slice())?;
            CaseDiagnostics::from_prediction(&pred, data.labels()[i], fm)
        })
        .collect()
}

/// How overall outliers are routed into an extra confusion-matrix column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutlierRule {
    None,
    Distance,
    Farness,
}

/// Given classes in rows, predicted classes (plus optional outlier class) in columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<usize>>,
    class_names: Vec<String>,
    outlier_column: bool,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<usize>>, class_names: Vec<String>, outlier_column: bool) -> Self {
        let width = class_names.len() + usize::from(outlier_column);
        assert!(counts.len() == class_names.len() && counts.iter().all(|r| r.len() == width));
        Self {
            counts,
            class_names,
            outlier_column,
        }
    }

    pub fn counts(&self) -> &[Vec<usize>] {
        &self.counts
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn has_outlier_column(&self) -> bool {
        self.outlier_column
    }

    pub fn row_sums(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn total(&self) -> usize {
        self.row_sums().iter().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.class_names.len()).map(|g| self.counts[g][g]).sum()
    }

    pub fn outlier_total(&self) -> usize {
        if self.outlier_column {
            let k = self.class_names.len();
            self.counts.iter().map(|r| r[k]).sum()
        } else {
            0
        }
    }

    pub fn column_labels(&self) -> Vec<String> {
        let mut labels = self.class_names.clone();
        if self.outlier_column {
            labels.push("outliers".into());
        }
        labels
    }

    /// Right-aligned text table.
    pub fn to_text(&self) -> String {
        let cols = self.column_labels();
        let row_w = self.class_names.iter().map(String::len).max().unwrap_or(0).max(5);
        let col_w: Vec<usize> = cols
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let widest = self.counts.iter().map(|r| r[j].to_string().len()).max().unwrap_or(1);
                c.len().max(widest)
            })
            .collect();
        let mut out = String::new();
        let _ = write!(out, "{:>row_w$}", "given");
        for (c, w) in cols.iter().zip(&col_w) {
            let _ = write!(out, "  {c:>w$}");
        }
        out.push('\n');
        for (name, row) in self.class_names.iter().zip(&self.counts) {
            let _ = write!(out, "{name:>row_w$}");
            for (v, w) in row.iter().zip(&col_w) {
                let _ = write!(out, "  {v:>w$}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "given,{}", self.column_labels().join(","))?;
        for (name, row) in self.class_names.iter().zip(&self.counts) {
            let cells: Vec<String> = row.iter().map(usize::to_string).collect();
            writeln!(w, "{name},{}", cells.join(","))?;
        }
        Ok(())
    }
}

pub fn confusion_from_diagnostics(
    diags: &[CaseDiagnostics],
    class_names: &[String],
    rule: OutlierRule,
) -> ConfusionMatrix {
    let g = class_names.len();
    let extra = rule != OutlierRule::None;
    let mut counts = vec![vec![0usize; g + usize::from(extra)]; g];
    for d in diags {
        let col = match rule {
            OutlierRule::Distance if d.outlier_distance => g,
            OutlierRule::Farness if d.outlier_farness => g,
            _ => d.predicted,
        };
        counts[d.given][col] += 1;
    }
    ConfusionMatrix::from_counts(counts, class_names.to_vec(), extra)
}

/// Confusion matrix of `model` on `data`; with `with_outlier_class` the
/// distance-based overall outliers get their own column.
pub fn confusion(
    model: &DAModel,
    data: &LabeledDataset,
    with_outlier_class: bool,
) -> Result<ConfusionMatrix, PredictError> {
    let g = model.n_classes();
    let mut counts = vec![vec![0usize; g + usize::from(with_outlier_class)]; g];
    for i in 0..data.n() {
        let pr = predict(model, data.row(i).as_slice())?;
        let col = if with_outlier_class && pr.overall_outlier {
            g
        } else {
            pr.predicted
        };
        counts[data.labels()[i]][col] += 1;
    }
    Ok(ConfusionMatrix::from_counts(
        counts,
        model.class_names().to_vec(),
        with_outlier_class,
    ))
}

/// `trace / total`, or `trace / (total - outliers)` when excluding the
/// outlier column.
pub fn accuracy(cm: &ConfusionMatrix, exclude_outliers: bool) -> f64 {
    let total = cm.total();
    let denom = if exclude_outliers {
        total - cm.outlier_total()
    } else {
        total
    };
    if denom == 0 {
        return f64::NAN;
    }
    cm.trace() as f64 / denom as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct SilhouetteSummary {
    /// Mean silhouette per given class; `None` for classes without cases.
    pub per_class: Vec<Option<f64>>,
    pub class_counts: Vec<usize>,
    pub overall: f64,
}

pub fn silhouette_summary(diags: &[CaseDiagnostics], n_classes: usize) -> Result<SilhouetteSummary, DiagnosticsError> {
    if diags.is_empty() {
        return Err(DiagnosticsError::Empty);
    }
    let mut sums = vec![0.0; n_classes];
    let mut counts = vec![0usize; n_classes];
    for d in diags {
        if d.given >= n_classes {
            return Err(DiagnosticsError::ClassOutOfRange {
                given: d.given,
                classes: n_classes,
            });
        }
        sums[d.given] += d.silhouette;
        counts[d.given] += 1;
    }
    let overall = diags.iter().map(|d| d.silhouette).sum::<f64>() / diags.len() as f64;
    Ok(SilhouetteSummary {
        per_class: sums
            .iter()
            .zip(&counts)
            .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
            .collect(),
        class_counts: counts,
        overall,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QqData {
    /// `(chi-squared quantile at (i - 0.5)/m, i-th smallest value)`.
    pub pairs: Vec<(f64, f64)>,
    pub dof: usize,
    /// `chi2_{dof, 0.99}`.
    pub cutoff: f64,
    /// Endpoints of the identity reference line over the data range.
    pub identity_line: [(f64, f64); 2],
}

pub const QQ_CUTOFF_PROB: f64 = 0.99;

pub fn qq_data(squared_rds: &[f64], dof: usize) -> Result<QqData, DiagnosticsError> {
    if squared_rds.is_empty() {
        return Err(DiagnosticsError::Empty);
    }
    let mut sorted = squared_rds.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() as f64;
    let pairs = sorted
        .iter()
        .enumerate()
        .map(|(i, &v)| Ok((chi2_quantile(dof, (i as f64 + 0.5) / m)?, v)))
        .collect::<Result<Vec<_>, DomainError>>()?;
    let lo = pairs.iter().map(|p| p.0.min(p.1)).fold(f64::INFINITY, f64::min);
    let hi = pairs.iter().map(|p| p.0.max(p.1)).fold(f64::NEG_INFINITY, f64::max);
    Ok(QqData {
        pairs,
        dof,
        cutoff: chi2_quantile(dof, QQ_CUTOFF_PROB)?,
        identity_line: [(lo, lo), (hi, hi)],
    })
}

/// One CSV row per case.
pub fn write_diagnostics_csv<W: Write>(
    mut w: W,
    diags: &[CaseDiagnostics],
    class_names: &[String],
) -> std::io::Result<()> {
    let mut header = vec!["case".to_string(), "given".into(), "predicted".into()];
    header.extend(class_names.iter().map(|c| format!("posterior_{c}")));
    header.push("pac".into());
    header.push("silhouette".into());
    header.extend(class_names.iter().map(|c| format!("rd_{c}")));
    header.extend(class_names.iter().map(|c| format!("farness_{c}")));
    header.push("outlier_distance".into());
    header.push("outlier_farness".into());
    writeln!(w, "{}", header.join(","))?;
    for (i, d) in diags.iter().enumerate() {
        let mut row = vec![
            (i + 1).to_string(),
            class_names[d.given].clone(),
            class_names[d.predicted].clone(),
        ];
        row.extend(d.posteriors.iter().map(f64::to_string));
        row.push(d.pac.to_string());
        row.push(d.silhouette.to_string());
        row.extend(d.distances.iter().map(f64::to_string));
        row.extend(
            d.farness
                .iter()
                .map(|f| f.map_or_else(|| "NA".to_string(), |v| v.to_string())),
        );
        row.push(d.outlier_distance.to_string());
        row.push(d.outlier_farness.to_string());
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Predicted class implied by a posterior vector.
pub fn map_class(posteriors: &[f64]) -> usize {
    argmax(posteriors)
}
