//! Linear and quadratic discriminant rules with classical or MCD plug-in
//! estimates, robust priors from unflagged cases, and the overall-outlier rule.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::LabeledDataset;
use crate::estimators::{
    classical_moments, exact_mcd, fast_mcd, pooled_covariance, subset_size, EstimatorConfig,
    EstimatorError, LocationScatter, Method,
};
use crate::special::chi2_quantile;

/// Format tag and version written into model files.
pub const MODEL_FORMAT: &str = "rda-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("class `{class}` has {size} cases, needs at least {needed}")]
    ClassTooSmall {
        class: String,
        size: usize,
        needed: usize,
    },
    #[error("class `{class}`: {source}")]
    Estimation {
        class: String,
        #[source]
        source: EstimatorError,
    },
    #[error("class `{0}` has no unflagged cases, its robust prior would be zero")]
    NoUnflaggedCases(String),
    #[error("pooling failed: {0}")]
    Pooling(#[source] EstimatorError),
    #[error("invalid model specification: {0}")]
    Spec(String),
    #[error("need at least two classes, got {0}")]
    TooFewClasses(usize),
}

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("point has {got} coordinates, model expects {expected}")]
    Shape { expected: usize, got: usize },
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("malformed model document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported model format `{format}` version {version}")]
    Format { format: String, version: u32 },
    #[error("inconsistent model document: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    Linear,
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimation {
    Classical,
    Robust,
}

/// Which MCD algorithm backs robust estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    FastMcd,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DASpec {
    pub rule: Rule,
    pub estimation: Estimation,
    pub engine: Engine,
    pub estimator: EstimatorConfig,
    /// Probability level of the chi-squared cutoff for flagging and for
    /// overall outliers.
    pub outlier_cutoff_prob: f64,
}

impl DASpec {
    pub fn new(rule: Rule, estimation: Estimation) -> Self {
        Self {
            rule,
            estimation,
            engine: Engine::FastMcd,
            estimator: EstimatorConfig::default(),
            outlier_cutoff_prob: 0.99,
        }
    }

    pub fn cqda() -> Self {
        Self::new(Rule::Quadratic, Estimation::Classical)
    }

    pub fn clda() -> Self {
        Self::new(Rule::Linear, Estimation::Classical)
    }

    pub fn rqda(alpha: f64) -> Self {
        let mut s = Self::new(Rule::Quadratic, Estimation::Robust);
        s.estimator.alpha = alpha;
        s
    }

    pub fn rlda(alpha: f64) -> Self {
        let mut s = Self::new(Rule::Linear, Estimation::Robust);
        s.estimator.alpha = alpha;
        s
    }

    pub fn validate(&self) -> Result<(), FitError> {
        if !(self.outlier_cutoff_prob > 0.0 && self.outlier_cutoff_prob < 1.0) {
            return Err(FitError::Spec(format!(
                "outlier_cutoff_prob must lie in (0, 1), got {}",
                self.outlier_cutoff_prob
            )));
        }
        if self.estimation == Estimation::Robust {
            self.estimator
                .validate()
                .map_err(|e| FitError::Spec(e.to_string()))?;
        }
        Ok(())
    }

    /// Short name such as `RQDA` or `CLDA`.
    pub fn acronym(&self) -> &'static str {
        match (self.estimation, self.rule) {
            (Estimation::Classical, Rule::Linear) => "CLDA",
            (Estimation::Classical, Rule::Quadratic) => "CQDA",
            (Estimation::Robust, Rule::Linear) => "RLDA",
            (Estimation::Robust, Rule::Quadratic) => "RQDA",
        }
    }
}

/// A fitted discriminant model. Immutable after fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct DAModel {
    spec: DASpec,
    class_names: Vec<String>,
    class_sizes: Vec<usize>,
    unflagged_counts: Vec<usize>,
    priors: Vec<f64>,
    /// Per-class estimates as computed from each class alone.
    fits: Vec<LocationScatter>,
    /// Pooled scatter of a linear rule.
    common: Option<LocationScatter>,
    /// Per-class normal models actually used for scores and distances.
    effective: Vec<LocationScatter>,
    linear_terms: Vec<(DVector<f64>, f64)>,
    cutoff_sq: f64,
}

impl DAModel {
    fn assemble(
        spec: DASpec,
        class_names: Vec<String>,
        class_sizes: Vec<usize>,
        unflagged_counts: Vec<usize>,
        priors: Vec<f64>,
        fits: Vec<LocationScatter>,
        common: Option<LocationScatter>,
    ) -> Result<Self, EstimatorError> {
        let p = fits[0].p();
        let effective: Vec<LocationScatter> = match &common {
            Some(c) => fits.iter().map(|f| c.recentered(f.center().clone())).collect(),
            None => fits.clone(),
        };
        let linear_terms = effective
            .iter()
            .zip(&priors)
            .map(|(e, &pi)| {
                let w = e.solve(e.center());
                let c = -0.5 * e.center().dot(&w) + pi.ln();
                (w, c)
            })
            .collect();
        let cutoff_sq = chi2_quantile(p, spec.outlier_cutoff_prob)?;
        Ok(Self {
            spec,
            class_names,
            class_sizes,
            unflagged_counts,
            priors,
            fits,
            common,
            effective,
            linear_terms,
            cutoff_sq,
        })
    }

    pub fn spec(&self) -> &DASpec {
        &self.spec
    }

    pub fn p(&self) -> usize {
        self.fits[0].p()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_sizes(&self) -> &[usize] {
        &self.class_sizes
    }

    /// Per-class counts of training cases not flagged as outliers
    /// (equal to the class sizes for classical models).
    pub fn unflagged_counts(&self) -> &[usize] {
        &self.unflagged_counts
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    /// Estimates computed from each class separately.
    pub fn class_fits(&self) -> &[LocationScatter] {
        &self.fits
    }

    pub fn common_scatter(&self) -> Option<&LocationScatter> {
        self.common.as_ref()
    }

    /// Normal model of class `g` used for scores, posteriors and distances;
    /// for linear rules it carries the pooled scatter.
    pub fn class_model(&self, g: usize) -> &LocationScatter {
        &self.effective[g]
    }

    /// Distance cutoff `sqrt(chi2_{p, cutoff_prob})`.
    pub fn distance_cutoff(&self) -> f64 {
        self.cutoff_sq.sqrt()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelDoc::from(self)).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let doc: ModelDoc = serde_json::from_str(text)?;
        doc.try_into()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelDoc {
    format: String,
    version: u32,
    spec: DASpec,
    class_names: Vec<String>,
    class_sizes: Vec<usize>,
    unflagged_counts: Vec<usize>,
    priors: Vec<f64>,
    estimates: Vec<LocationScatter>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    common_scatter: Option<LocationScatter>,
}

impl From<&DAModel> for ModelDoc {
    fn from(m: &DAModel) -> Self {
        Self {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            spec: m.spec.clone(),
            class_names: m.class_names.clone(),
            class_sizes: m.class_sizes.clone(),
            unflagged_counts: m.unflagged_counts.clone(),
            priors: m.priors.clone(),
            estimates: m.fits.clone(),
            common_scatter: m.common.clone(),
        }
    }
}

impl TryFrom<ModelDoc> for DAModel {
    type Error = ModelError;

    fn try_from(doc: ModelDoc) -> Result<Self, ModelError> {
        if doc.format != MODEL_FORMAT || doc.version != MODEL_VERSION {
            return Err(ModelError::Format {
                format: doc.format,
                version: doc.version,
            });
        }
        let g = doc.class_names.len();
        if g < 2
            || doc.estimates.len() != g
            || doc.priors.len() != g
            || doc.class_sizes.len() != g
            || doc.unflagged_counts.len() != g
        {
            return Err(ModelError::Inconsistent(
                "per-class vectors disagree in length".into(),
            ));
        }
        let p = doc.estimates[0].p();
        if doc.estimates.iter().any(|e| e.p() != p)
            || doc.common_scatter.as_ref().is_some_and(|c| c.p() != p)
        {
            return Err(ModelError::Inconsistent("estimates disagree in dimension".into()));
        }
        if (doc.spec.rule == Rule::Linear) != doc.common_scatter.is_some() {
            return Err(ModelError::Inconsistent(
                "linear rules need a common scatter, quadratic rules none".into(),
            ));
        }
        if doc.priors.iter().any(|&p| !(p > 0.0)) {
            return Err(ModelError::Inconsistent("priors must be positive".into()));
        }
        Ok(DAModel::assemble(
            doc.spec,
            doc.class_names,
            doc.class_sizes,
            doc.unflagged_counts,
            doc.priors,
            doc.estimates,
            doc.common_scatter,
        )?)
    }
}

fn estimate_class(
    rows: &DMatrix<f64>,
    spec: &DASpec,
    g: usize,
    name: &str,
) -> Result<LocationScatter, FitError> {
    let (m, p) = rows.shape();
    let wrap = |source| FitError::Estimation {
        class: name.to_string(),
        source,
    };
    match spec.estimation {
        Estimation::Classical => {
            if m < p + 1 {
                return Err(FitError::ClassTooSmall {
                    class: name.to_string(),
                    size: m,
                    needed: p + 1,
                });
            }
            classical_moments(rows).map_err(wrap)
        }
        Estimation::Robust => {
            let h = subset_size(spec.estimator.alpha, m);
            if h <= p {
                // smallest m with ceil(alpha m) > p
                let needed = (p + 1..).find(|&k| subset_size(spec.estimator.alpha, k) > p).unwrap();
                return Err(FitError::ClassTooSmall {
                    class: name.to_string(),
                    size: m,
                    needed,
                });
            }
            match spec.engine {
                Engine::FastMcd => {
                    let mut cfg = spec.estimator.clone();
                    cfg.seed = cfg.seed.wrapping_add(g as u64);
                    fast_mcd(rows, &cfg).map_err(wrap)
                }
                Engine::Exact => exact_mcd(rows, spec.estimator.alpha).map_err(wrap),
            }
        }
    }
}

/// Fits per-class estimates, priors and (for linear rules) the pooled scatter.
pub fn fit(data: &LabeledDataset, spec: &DASpec) -> Result<DAModel, FitError> {
    spec.validate()?;
    let groups = data.n_classes();
    if groups < 2 {
        return Err(FitError::TooFewClasses(groups));
    }
    let p = data.p();
    let names = data.class_names();
    let sizes = data.class_sizes();

    let fits = (0..groups)
        .map(|g| estimate_class(&data.class_rows(g), spec, g, &names[g]))
        .collect::<Result<Vec<_>, _>>()?;

    let unflagged: Vec<usize> = match spec.estimation {
        Estimation::Classical => sizes.clone(),
        Estimation::Robust => {
            let cutoff_sq = chi2_quantile(p, spec.outlier_cutoff_prob)
                .map_err(|e| FitError::Spec(e.to_string()))?;
            (0..groups)
                .map(|g| {
                    let d = fits[g]
                        .mahalanobis_sq_rows(&data.class_rows(g))
                        .expect("class rows share the model dimension");
                    d.iter().filter(|&&v| v <= cutoff_sq).count()
                })
                .collect()
        }
    };
    if let Some(g) = unflagged.iter().position(|&c| c == 0) {
        return Err(FitError::NoUnflaggedCases(names[g].clone()));
    }
    let total: usize = unflagged.iter().sum();
    let priors: Vec<f64> = unflagged.iter().map(|&c| c as f64 / total as f64).collect();

    let common = match spec.rule {
        Rule::Quadratic => None,
        Rule::Linear => {
            let parts: Vec<(usize, &DMatrix<f64>)> = unflagged
                .iter()
                .zip(&fits)
                .map(|(&c, f)| (c, f.scatter()))
                .collect();
            let pooled = pooled_covariance(&parts).map_err(FitError::Pooling)?;
            Some(
                LocationScatter::new(DVector::zeros(p), pooled, Method::Pooled)
                    .map_err(FitError::Pooling)?,
            )
        }
    };

    DAModel::assemble(
        spec.clone(),
        names.to_vec(),
        sizes,
        unflagged,
        priors,
        fits,
        common,
    )
    .map_err(|e| FitError::Spec(e.to_string()))
}

/// `-1/2 ln|S| - 1/2 (x - m)' S^{-1} (x - m) + ln prior`.
pub fn quadratic_score(x: &[f64], est: &LocationScatter, prior: f64) -> Result<f64, EstimatorError> {
    let d2 = est.mahalanobis_sq_slice(x)?;
    Ok(-0.5 * est.log_det() - 0.5 * d2 + prior.ln())
}

/// `m' S^{-1} x - 1/2 m' S^{-1} m + ln prior` for a common scatter `S`.
pub fn linear_score(
    x: &[f64],
    center: &DVector<f64>,
    common: &LocationScatter,
    prior: f64,
) -> Result<f64, EstimatorError> {
    let p = common.p();
    if x.len() != p || center.len() != p {
        return Err(EstimatorError::Shape {
            expected: p,
            got: if x.len() != p { x.len() } else { center.len() },
        });
    }
    let w = common.solve(center);
    let xv = DVector::from_column_slice(x);
    Ok(w.dot(&xv) - 0.5 * w.dot(center) + prior.ln())
}

/// Index of the largest value; the lowest index wins exact ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub scores: Vec<f64>,
    /// Distance of the point to every class model.
    pub distances: Vec<f64>,
    pub predicted: usize,
    /// Every distance exceeds the model's cutoff.
    pub overall_outlier: bool,
}

pub fn predict(model: &DAModel, x: &[f64]) -> Result<Prediction, PredictError> {
    let p = model.p();
    if x.len() != p {
        return Err(PredictError::Shape {
            expected: p,
            got: x.len(),
        });
    }
    let groups = model.n_classes();
    let mut scores = Vec::with_capacity(groups);
    let mut distances = Vec::with_capacity(groups);
    let mut outlier = true;
    for g in 0..groups {
        let est = &model.effective[g];
        let d2 = est.mahalanobis_sq_slice(x).expect("dimension checked");
        outlier &= d2 > model.cutoff_sq;
        distances.push(d2.sqrt());
        let score = match model.spec.rule {
            Rule::Quadratic => -0.5 * est.log_det() - 0.5 * d2 + model.priors[g].ln(),
            Rule::Linear => {
                let (w, c) = &model.linear_terms[g];
                w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + c
            }
        };
        scores.push(score);
    }
    Ok(Prediction {
        predicted: argmax(&scores),
        scores,
        distances,
        overall_outlier: outlier,
    })
}

/// Predictions for every row of `features`, in row order.
pub fn predict_batch(model: &DAModel, features: &DMatrix<f64>) -> Result<Vec<Prediction>, PredictError> {
    let mut row = vec![0.0; features.ncols()];
    (0..features.nrows())
        .map(|i| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = features[(i, j)];
            }
            predict(model, &row)
        })
        .collect()
}

/// Training cases whose distance to their own class exceeds the cutoff.
pub fn flagged_cases(model: &DAModel, data: &LabeledDataset) -> Result<Vec<bool>, PredictError> {
    let preds = predict_batch(model, data.features())?;
    Ok(preds
        .iter()
        .zip(data.labels())
        .map(|(pr, &g)| pr.distances[g] > model.distance_cutoff())
        .collect())
}

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]` in the first two coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl BoundingBox {
    /// Smallest box holding the first two columns of every matrix.
    pub fn of(matrices: &[&DMatrix<f64>]) -> Self {
        let mut b = Self {
            x0: f64::INFINITY,
            x1: f64::NEG_INFINITY,
            y0: f64::INFINITY,
            y1: f64::NEG_INFINITY,
        };
        for m in matrices {
            for i in 0..m.nrows() {
                b.x0 = b.x0.min(m[(i, 0)]);
                b.x1 = b.x1.max(m[(i, 0)]);
                b.y0 = b.y0.min(m[(i, 1)]);
                b.y1 = b.y1.max(m[(i, 1)]);
            }
        }
        b
    }

    /// Grid node coordinates, `n` per axis, endpoints included.
    pub fn grid(&self, n: usize) -> (Vec<f64>, Vec<f64>) {
        let lin = |a: f64, b: f64| -> Vec<f64> {
            if n == 1 {
                return vec![0.5 * (a + b)];
            }
            (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
        };
        (lin(self.x0, self.x1), lin(self.y0, self.y1))
    }
}

/// Predicted classes on an `n x n` grid over a bivariate box, row `j` of the
/// result holding the nodes with the `j`-th y value.
pub fn predict_grid(model: &DAModel, bbox: &BoundingBox, n: usize) -> Result<Vec<usize>, PredictError> {
    let (xs, ys) = bbox.grid(n);
    let mut out = Vec::with_capacity(n * n);
    for &y in &ys {
        for &x in &xs {
            out.push(predict(model, &[x, y])?.predicted);
        }
    }
    Ok(out)
}

/// Fraction of grid nodes where two bivariate models predict different classes.
pub fn decision_change_fraction(
    a: &DAModel,
    b: &DAModel,
    bbox: &BoundingBox,
    n: usize,
) -> Result<f64, PredictError> {
    let ga = predict_grid(a, bbox, n)?;
    let gb = predict_grid(b, bbox, n)?;
    let changed = ga.iter().zip(&gb).filter(|(u, v)| u != v).count();
    Ok(changed as f64 / ga.len() as f64)
}
