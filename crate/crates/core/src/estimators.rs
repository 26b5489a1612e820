//! Location/scatter estimation: classical moments, pooling, and the Minimum
//! Covariance Determinant (FastMCD with concentration steps, plus an exact
//! enumeration engine for small samples).

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::special::{chi2_cdf, chi2_quantile, DomainError};

/// Largest number of h-subsets `exact_mcd` will enumerate.
pub const EXACT_SUBSET_LIMIT: u128 = 1_000_000;

const DEGENERATE_RCOND: f64 = 1e-12;
const EXACT_FIT_RATIO: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("{cases} cases are not enough, at least {needed} required")]
    TooFewCases { cases: usize, needed: usize },
    #[error("covariance matrix is singular (reciprocal condition number {rcond:.3e})")]
    Degenerate { rcond: f64 },
    #[error("scatter matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("invalid estimator configuration: {0}")]
    Config(String),
    #[error("{0}")]
    ExactFit(Box<ExactFit>),
    #[error("exact MCD would enumerate {subsets} subsets (limit {limit})")]
    TooManySubsets { subsets: u128, limit: u128 },
    #[error("pooling needs more cases than classes (n = {n}, G = {groups})")]
    DegeneratePooling { n: usize, groups: usize },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// At least `h` cases lie (numerically) on the hyperplane `normal . x = offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactFit {
    pub normal: Vec<f64>,
    pub offset: f64,
    /// The h-subset whose covariance is singular.
    pub subset: Vec<usize>,
    /// Number of cases of the whole sample on the hyperplane.
    pub on_plane: usize,
}

impl fmt::Display for ExactFit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "exact fit: {} cases lie on the hyperplane {:?} . x = {}",
            self.on_plane, self.normal, self.offset
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Classical,
    McdRaw,
    McdReweighted,
    ExactMcd,
    /// Common scatter of a linear rule, pooled over classes.
    Pooled,
}

impl Method {
    pub fn is_mcd(self) -> bool {
        matches!(self, Method::McdRaw | Method::McdReweighted | Method::ExactMcd)
    }
}

/// A center and positive-definite scatter matrix with its Cholesky factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "LocationScatterDoc", try_from = "LocationScatterDoc")]
pub struct LocationScatter {
    center: DVector<f64>,
    scatter: DMatrix<f64>,
    chol: DMatrix<f64>,
    log_det: f64,
    method: Method,
    alpha: Option<f64>,
    h_subset: Option<Vec<usize>>,
    weights: Option<Vec<bool>>,
}

impl LocationScatter {
    pub fn new(
        center: DVector<f64>,
        scatter: DMatrix<f64>,
        method: Method,
    ) -> Result<Self, EstimatorError> {
        let p = center.len();
        if scatter.nrows() != p || scatter.ncols() != p {
            return Err(EstimatorError::Shape {
                expected: p,
                got: scatter.nrows(),
            });
        }
        let scatter = (&scatter + scatter.transpose()) * 0.5;
        let (chol, log_det) =
            cholesky(scatter.as_slice(), p).ok_or(EstimatorError::NotPositiveDefinite)?;
        Ok(Self {
            center,
            scatter,
            chol: DMatrix::from_row_slice(p, p, &chol),
            log_det,
            method,
            alpha: None,
            h_subset: None,
            weights: None,
        })
    }

    fn with_mcd_metadata(mut self, alpha: f64, subset: Vec<usize>, weights: Option<Vec<bool>>) -> Self {
        self.alpha = Some(alpha);
        self.h_subset = Some(subset);
        self.weights = weights;
        self
    }

    pub fn p(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn scatter(&self) -> &DMatrix<f64> {
        &self.scatter
    }

    /// Lower-triangular Cholesky factor of the scatter.
    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn alpha(&self) -> Option<f64> {
        self.alpha
    }

    pub fn h_subset(&self) -> Option<&[usize]> {
        self.h_subset.as_deref()
    }

    pub fn weights(&self) -> Option<&[bool]> {
        self.weights.as_deref()
    }

    /// Same scatter, different center.
    pub fn recentered(&self, center: DVector<f64>) -> Self {
        Self {
            center,
            ..self.clone()
        }
    }

    /// Squared Mahalanobis distance of a point given as a slice.
    pub fn mahalanobis_sq_slice(&self, x: &[f64]) -> Result<f64, EstimatorError> {
        let p = self.p();
        if x.len() != p {
            return Err(EstimatorError::Shape {
                expected: p,
                got: x.len(),
            });
        }
        let mut y = vec![0.0; p];
        Ok(forward_solve_norm_sq(&self.chol, x, self.center.as_slice(), &mut y))
    }

    pub fn mahalanobis_sq(&self, x: &DVector<f64>) -> Result<f64, EstimatorError> {
        self.mahalanobis_sq_slice(x.as_slice())
    }

    /// Squared distances of all rows of `x`.
    pub fn mahalanobis_sq_rows(&self, x: &DMatrix<f64>) -> Result<Vec<f64>, EstimatorError> {
        let p = self.p();
        if x.ncols() != p {
            return Err(EstimatorError::Shape {
                expected: p,
                got: x.ncols(),
            });
        }
        let mut row = vec![0.0; p];
        let mut y = vec![0.0; p];
        Ok((0..x.nrows())
            .map(|i| {
                for j in 0..p {
                    row[j] = x[(i, j)];
                }
                forward_solve_norm_sq(&self.chol, &row, self.center.as_slice(), &mut y)
            })
            .collect())
    }

    /// `scatter^{-1} v`, through the Cholesky factor.
    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        let l = &self.chol;
        let y = l
            .solve_lower_triangular(v)
            .expect("Cholesky factor has a positive diagonal");
        l.transpose()
            .solve_upper_triangular(&y)
            .expect("Cholesky factor has a positive diagonal")
    }
}

fn forward_solve_norm_sq(l: &DMatrix<f64>, x: &[f64], mu: &[f64], y: &mut [f64]) -> f64 {
    let p = mu.len();
    let mut acc = 0.0;
    for i in 0..p {
        let mut s = x[i] - mu[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
        acc += y[i] * y[i];
    }
    acc
}

/// Serialized form: scatter is row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocationScatterDoc {
    pub center: Vec<f64>,
    pub scatter: Vec<f64>,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub log_det: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_subset: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<bool>>,
}

impl From<LocationScatter> for LocationScatterDoc {
    fn from(ls: LocationScatter) -> Self {
        let p = ls.p();
        let scatter = (0..p)
            .flat_map(|i| (0..p).map(move |j| (i, j)))
            .map(|(i, j)| ls.scatter[(i, j)])
            .collect();
        Self {
            center: ls.center.as_slice().to_vec(),
            scatter,
            method: ls.method,
            alpha: ls.alpha,
            log_det: ls.log_det,
            h_subset: ls.h_subset,
            weights: ls.weights,
        }
    }
}

impl TryFrom<LocationScatterDoc> for LocationScatter {
    type Error = EstimatorError;

    fn try_from(doc: LocationScatterDoc) -> Result<Self, Self::Error> {
        let p = doc.center.len();
        if doc.scatter.len() != p * p {
            return Err(EstimatorError::Shape {
                expected: p * p,
                got: doc.scatter.len(),
            });
        }
        let mut ls = LocationScatter::new(
            DVector::from_vec(doc.center),
            DMatrix::from_row_slice(p, p, &doc.scatter),
            doc.method,
        )?;
        ls.alpha = doc.alpha;
        ls.h_subset = doc.h_subset;
        ls.weights = doc.weights;
        Ok(ls)
    }
}

impl fmt::Display for EstimatorConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "alpha={} starts={} keep={} max_csteps={} seed={}",
            self.alpha, self.n_starts, self.n_keep, self.max_csteps, self.seed
        )
    }
}

/// Settings for FastMCD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    /// Fraction of cases covered by the h-subset, in [0.5, 1).
    pub alpha: f64,
    pub n_starts: usize,
    /// Candidates carried to full convergence.
    pub n_keep: usize,
    pub max_csteps: usize,
    /// Relative change in determinant below which C-steps stop.
    pub convergence_tol: f64,
    pub seed: u64,
    pub reweight_quantile: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            alpha: 0.75,
            n_starts: 500,
            n_keep: 10,
            max_csteps: 100,
            convergence_tol: 1e-12,
            seed: 0,
            reweight_quantile: 0.975,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        if !(self.alpha >= 0.5 && self.alpha < 1.0) {
            return Err(EstimatorError::Config(format!(
                "alpha must lie in [0.5, 1), got {}",
                self.alpha
            )));
        }
        if self.n_starts == 0 || self.n_keep == 0 || self.n_keep > self.n_starts {
            return Err(EstimatorError::Config(
                "need 1 <= n_keep <= n_starts".into(),
            ));
        }
        if self.max_csteps == 0 {
            return Err(EstimatorError::Config("max_csteps must be positive".into()));
        }
        if !(self.reweight_quantile > 0.0 && self.reweight_quantile < 1.0) {
            return Err(EstimatorError::Config(
                "reweight_quantile must lie in (0, 1)".into(),
            ));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(EstimatorError::Config("convergence_tol must be >= 0".into()));
        }
        Ok(())
    }
}

/// `h = ceil(alpha * m)`, ignoring representation error in the product.
pub fn subset_size(alpha: f64, m: usize) -> usize {
    let x = alpha * m as f64;
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Row-major copy of a data matrix; the MCD inner loops run on this.
struct Rows {
    data: Vec<f64>,
    m: usize,
    p: usize,
}

impl Rows {
    fn new(x: &DMatrix<f64>) -> Self {
        let (m, p) = x.shape();
        let mut data = Vec::with_capacity(m * p);
        for i in 0..m {
            for j in 0..p {
                data.push(x[(i, j)]);
            }
        }
        Self { data, m, p }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }

    /// Mean and covariance (divisor k - 1) of the given rows, row-major.
    fn mean_cov(&self, idx: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let p = self.p;
        let k = idx.len() as f64;
        let mut mean = vec![0.0; p];
        for &i in idx {
            for (m, v) in mean.iter_mut().zip(self.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= k);
        let mut cov = vec![0.0; p * p];
        let mut d = vec![0.0; p];
        for &i in idx {
            for (j, v) in self.row(i).iter().enumerate() {
                d[j] = v - mean[j];
            }
            for a in 0..p {
                for b in 0..=a {
                    cov[a * p + b] += d[a] * d[b];
                }
            }
        }
        let denom = (k - 1.0).max(1.0);
        for a in 0..p {
            for b in 0..=a {
                let v = cov[a * p + b] / denom;
                cov[a * p + b] = v;
                cov[b * p + a] = v;
            }
        }
        (mean, cov)
    }

    fn weighted_mean_cov(&self, weights: &[bool]) -> (Vec<f64>, Vec<f64>) {
        let idx: Vec<usize> = (0..self.m).filter(|&i| weights[i]).collect();
        self.mean_cov(&idx)
    }

    fn dist_sq_all(&self, mean: &[f64], l: &[f64]) -> Vec<f64> {
        let p = self.p;
        let mut y = vec![0.0; p];
        (0..self.m)
            .map(|i| {
                let x = self.row(i);
                let mut acc = 0.0;
                for a in 0..p {
                    let mut s = x[a] - mean[a];
                    for b in 0..a {
                        s -= l[a * p + b] * y[b];
                    }
                    y[a] = s / l[a * p + a];
                    acc += y[a] * y[a];
                }
                acc
            })
            .collect()
    }

    /// Sum of log column variances, i.e. `p * ln(geometric mean variance)`.
    fn log_variance_volume(&self) -> f64 {
        let all: Vec<usize> = (0..self.m).collect();
        let (_, cov) = self.mean_cov(&all);
        (0..self.p).map(|j| cov[j * self.p + j].ln()).sum()
    }
}

/// Row-major Cholesky; returns the lower factor and log-determinant, or
/// `None` if the matrix is not numerically positive definite.
fn cholesky(a: &[f64], p: usize) -> Option<(Vec<f64>, f64)> {
    let mut l = vec![0.0; p * p];
    let mut log_det = 0.0;
    for i in 0..p {
        for j in 0..=i {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= l[i * p + k] * l[j * p + k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                let d = s.sqrt();
                l[i * p + i] = d;
                log_det += 2.0 * d.ln();
            } else {
                l[i * p + j] = s / l[j * p + j];
            }
        }
    }
    Some((l, log_det))
}

fn rcond_symmetric(s: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(s.clone()).eigenvalues;
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if max <= 0.0 {
        0.0
    } else {
        (min / max).max(0.0)
    }
}

/// Column means and unbiased sample covariance.
pub fn classical_moments(x: &DMatrix<f64>) -> Result<LocationScatter, EstimatorError> {
    let (m, p) = x.shape();
    if m < p + 1 {
        return Err(EstimatorError::TooFewCases {
            cases: m,
            needed: p + 1,
        });
    }
    let rows = Rows::new(x);
    let all: Vec<usize> = (0..m).collect();
    let (mean, cov) = rows.mean_cov(&all);
    let cov = DMatrix::from_row_slice(p, p, &cov);
    let rcond = rcond_symmetric(&cov);
    if rcond < DEGENERATE_RCOND {
        return Err(EstimatorError::Degenerate { rcond });
    }
    LocationScatter::new(DVector::from_vec(mean), cov, Method::Classical)
}

/// `sum (m_g - 1) S_g / (n - G)` over the given `(m_g, S_g)` parts.
pub fn pooled_covariance(parts: &[(usize, &DMatrix<f64>)]) -> Result<DMatrix<f64>, EstimatorError> {
    if parts.len() < 2 {
        return Err(EstimatorError::Config(
            "pooling needs at least two parts".into(),
        ));
    }
    let p = parts[0].1.nrows();
    let n: usize = parts.iter().map(|(m, _)| m).sum();
    let groups = parts.len();
    if n <= groups {
        return Err(EstimatorError::DegeneratePooling { n, groups });
    }
    let mut acc = DMatrix::zeros(p, p);
    for (m, s) in parts {
        if s.nrows() != p || s.ncols() != p {
            return Err(EstimatorError::Shape {
                expected: p,
                got: s.nrows(),
            });
        }
        if *m == 0 {
            continue;
        }
        acc += *s * (*m as f64 - 1.0);
    }
    acc /= (n - groups) as f64;
    Ok((&acc + acc.transpose()) * 0.5)
}

/// `alpha / F_{chi2, p+2}(chi2_{p, alpha})`, making the MCD scatter of an
/// alpha-fraction consistent at the normal model. Equals 1 at `alpha = 1`.
pub fn consistency_factor(alpha: f64, p: usize) -> Result<f64, EstimatorError> {
    if p == 0 || !(0.5..=1.0).contains(&alpha) {
        return Err(EstimatorError::Config(format!(
            "consistency factor needs alpha in [0.5, 1] and p >= 1 (alpha={alpha}, p={p})"
        )));
    }
    if alpha >= 1.0 {
        return Ok(1.0);
    }
    let q = chi2_quantile(p, alpha)?;
    Ok(alpha / chi2_cdf(q, p + 2))
}

pub fn mahalanobis(x: &DVector<f64>, est: &LocationScatter) -> Result<f64, EstimatorError> {
    Ok(est.mahalanobis_sq(x)?.sqrt())
}

/// Outcome of one concentration step.
#[derive(Debug, Clone, PartialEq)]
pub struct CStep {
    /// New h-subset, ascending indices.
    pub subset: Vec<usize>,
    /// Log-determinant of the covariance of the new subset
    /// (`-inf` when it is singular).
    pub log_det: f64,
}

impl CStep {
    pub fn det(&self) -> f64 {
        self.log_det.exp()
    }
}

fn hyperplane_from(rows: &Rows, subset: &[usize]) -> ExactFit {
    let p = rows.p;
    let (mean, cov) = rows.mean_cov(subset);
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(p, p, &cov));
    let k = eig.eigenvalues.imin();
    let mut normal: Vec<f64> = eig.eigenvectors.column(k).iter().cloned().collect();
    if let Some(first) = normal.iter().find(|v| v.abs() > 1e-12) {
        if *first < 0.0 {
            normal.iter_mut().for_each(|v| *v = -*v);
        }
    }
    let offset: f64 = normal.iter().zip(&mean).map(|(a, b)| a * b).sum();
    let scale = (0..rows.m)
        .flat_map(|i| rows.row(i).iter())
        .fold(0.0f64, |a, v| a.max(v.abs()))
        .max(1.0);
    let on_plane = (0..rows.m)
        .filter(|&i| {
            let v: f64 = normal.iter().zip(rows.row(i)).map(|(a, b)| a * b).sum();
            (v - offset).abs() <= 1e-8 * scale
        })
        .count();
    ExactFit {
        normal,
        offset,
        subset: subset.to_vec(),
        on_plane,
    }
}

/// Indices of the `h` smallest values, ties broken by index, returned ascending.
fn smallest_h(dist: &[f64], h: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
    order.truncate(h);
    order.sort_unstable();
    order
}

fn subset_log_det(rows: &Rows, subset: &[usize]) -> f64 {
    let (_, cov) = rows.mean_cov(subset);
    cholesky(&cov, rows.p).map_or(f64::NEG_INFINITY, |(_, ld)| ld)
}

fn c_step_rows(rows: &Rows, subset: &[usize], h: usize) -> Result<CStep, EstimatorError> {
    let (mean, cov) = rows.mean_cov(subset);
    let (l, _) = cholesky(&cov, rows.p)
        .ok_or_else(|| EstimatorError::ExactFit(Box::new(hyperplane_from(rows, subset))))?;
    let d = rows.dist_sq_all(&mean, &l);
    let next = smallest_h(&d, h);
    let log_det = subset_log_det(rows, &next);
    Ok(CStep {
        subset: next,
        log_det,
    })
}

/// One concentration step: the h cases closest (Mahalanobis) to the fit of
/// `subset` form the next subset, whose covariance determinant is never larger.
pub fn c_step(x: &DMatrix<f64>, subset: &[usize]) -> Result<CStep, EstimatorError> {
    let rows = Rows::new(x);
    if subset.len() <= rows.p || subset.iter().any(|&i| i >= rows.m) {
        return Err(EstimatorError::Config(format!(
            "subset of size {} invalid for {} x {} data",
            subset.len(),
            rows.m,
            rows.p
        )));
    }
    c_step_rows(&rows, subset, subset.len())
}

/// Log-determinant of the (divisor h - 1) covariance of the given rows.
pub fn subset_covariance_log_det(x: &DMatrix<f64>, subset: &[usize]) -> f64 {
    subset_log_det(&Rows::new(x), subset)
}

/// Raw and reweighted MCD estimates together with the optimized objective.
#[derive(Debug, Clone)]
pub struct McdFit {
    pub raw: LocationScatter,
    pub reweighted: LocationScatter,
    /// Log-determinant of the plain sample covariance of the best h-subset.
    pub objective_log_det: f64,
    pub h: usize,
}

struct Candidate {
    log_det: f64,
    subset: Vec<usize>,
}

fn check_exact_fit(rows: &Rows, threshold: f64, cand: &Candidate) -> Result<(), EstimatorError> {
    if cand.log_det < threshold {
        Err(EstimatorError::ExactFit(Box::new(hyperplane_from(
            rows,
            &cand.subset,
        ))))
    } else {
        Ok(())
    }
}

fn constant_column_fit(rows: &Rows) -> Option<ExactFit> {
    (0..rows.p).find_map(|j| {
        let first = rows.row(0)[j];
        (0..rows.m).all(|i| rows.row(i)[j] == first).then(|| {
            let mut normal = vec![0.0; rows.p];
            normal[j] = 1.0;
            ExactFit {
                normal,
                offset: first,
                subset: (0..rows.m).collect(),
                on_plane: rows.m,
            }
        })
    })
}

fn mcd_search(rows: &Rows, h: usize, config: &EstimatorConfig) -> Result<Candidate, EstimatorError> {
    let (m, p) = (rows.m, rows.p);
    if let Some(fit) = constant_column_fit(rows) {
        return Err(EstimatorError::ExactFit(Box::new(fit)));
    }
    let threshold = EXACT_FIT_RATIO.ln() + rows.log_variance_volume();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut candidates: Vec<Candidate> = Vec::with_capacity(config.n_starts);
    for _ in 0..config.n_starts {
        let mut start: Vec<usize> = rand::seq::index::sample(&mut rng, m, p + 1).into_vec();
        let (mut mean, mut cov) = rows.mean_cov(&start);
        let mut factor = cholesky(&cov, p);
        // grow singular starts one random case at a time
        while factor.is_none() {
            if start.len() == m {
                return Err(EstimatorError::ExactFit(Box::new(hyperplane_from(
                    rows, &start,
                ))));
            }
            let rest: Vec<usize> = (0..m).filter(|i| !start.contains(i)).collect();
            let k = rand::seq::index::sample(&mut rng, rest.len(), 1).index(0);
            start.push(rest[k]);
            (mean, cov) = rows.mean_cov(&start);
            factor = cholesky(&cov, p);
        }
        let (l, _) = factor.expect("loop exits on a factor");
        let mut subset = smallest_h(&rows.dist_sq_all(&mean, &l), h);
        let mut log_det = subset_log_det(rows, &subset);
        for _ in 0..2 {
            if log_det < threshold {
                break;
            }
            let step = c_step_rows(rows, &subset, h)?;
            subset = step.subset;
            log_det = step.log_det;
        }
        let cand = Candidate { log_det, subset };
        check_exact_fit(rows, threshold, &cand)?;
        candidates.push(cand);
    }

    candidates.sort_by(|a, b| a.log_det.total_cmp(&b.log_det).then(a.subset.cmp(&b.subset)));
    candidates.dedup_by(|a, b| a.subset == b.subset);
    candidates.truncate(config.n_keep);

    let mut best: Option<Candidate> = None;
    for mut cand in candidates {
        for _ in 0..config.max_csteps {
            let step = c_step_rows(rows, &cand.subset, h)?;
            let unchanged = step.subset == cand.subset;
            let small = cand.log_det - step.log_det <= config.convergence_tol;
            if step.log_det <= cand.log_det {
                cand = Candidate {
                    log_det: step.log_det,
                    subset: step.subset,
                };
            }
            check_exact_fit(rows, threshold, &cand)?;
            if unchanged || small {
                break;
            }
        }
        let better = match &best {
            None => true,
            Some(b) => {
                cand.log_det < b.log_det || (cand.log_det == b.log_det && cand.subset < b.subset)
            }
        };
        if better {
            best = Some(cand);
        }
    }
    Ok(best.expect("n_keep >= 1"))
}

/// FastMCD followed by one reweighting step.
pub fn fast_mcd_fit(x: &DMatrix<f64>, config: &EstimatorConfig) -> Result<McdFit, EstimatorError> {
    config.validate()?;
    let rows = Rows::new(x);
    let (m, p) = (rows.m, rows.p);
    let h = subset_size(config.alpha, m);
    if h <= p {
        return Err(EstimatorError::Config(format!(
            "h = {h} must exceed p = {p} (m = {m}, alpha = {})",
            config.alpha
        )));
    }
    let best = mcd_search(&rows, h, config)?;

    let (mean, cov) = rows.mean_cov(&best.subset);
    let cf = consistency_factor(config.alpha, p)?;
    let raw_scatter = DMatrix::from_row_slice(p, p, &cov) * cf;
    let raw = LocationScatter::new(DVector::from_vec(mean), raw_scatter, Method::McdRaw)?
        .with_mcd_metadata(config.alpha, best.subset.clone(), None);

    let cutoff = chi2_quantile(p, config.reweight_quantile)?;
    let d = raw.mahalanobis_sq_rows(x)?;
    let weights: Vec<bool> = d.iter().map(|&v| v <= cutoff).collect();
    let kept = weights.iter().filter(|&&w| w).count();
    if kept <= p {
        return Err(EstimatorError::TooFewCases {
            cases: kept,
            needed: p + 1,
        });
    }
    let (rw_mean, rw_cov) = rows.weighted_mean_cov(&weights);
    let rw_cf = consistency_factor(config.reweight_quantile, p)?;
    let rw_scatter = DMatrix::from_row_slice(p, p, &rw_cov) * rw_cf;
    let reweighted =
        LocationScatter::new(DVector::from_vec(rw_mean), rw_scatter, Method::McdReweighted)
            .map_err(|_| EstimatorError::Degenerate { rcond: 0.0 })?
            .with_mcd_metadata(config.alpha, best.subset, Some(weights));

    Ok(McdFit {
        raw,
        reweighted,
        objective_log_det: best.log_det,
        h,
    })
}

/// Reweighted MCD estimate.
pub fn fast_mcd(x: &DMatrix<f64>, config: &EstimatorConfig) -> Result<LocationScatter, EstimatorError> {
    fast_mcd_fit(x, config).map(|f| f.reweighted)
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return acc;
        }
    }
    acc
}

/// Minimizes the covariance determinant over every h-subset. Intended as a
/// reference for small samples; refuses more than [`EXACT_SUBSET_LIMIT`] subsets.
pub fn exact_mcd(x: &DMatrix<f64>, alpha: f64) -> Result<LocationScatter, EstimatorError> {
    let rows = Rows::new(x);
    let (m, p) = (rows.m, rows.p);
    if !(0.5..=1.0).contains(&alpha) {
        return Err(EstimatorError::Config(format!(
            "alpha must lie in [0.5, 1], got {alpha}"
        )));
    }
    let h = subset_size(alpha, m);
    if h <= p {
        return Err(EstimatorError::Config(format!("h = {h} must exceed p = {p}")));
    }
    let subsets = binomial(m, h);
    if subsets > EXACT_SUBSET_LIMIT {
        return Err(EstimatorError::TooManySubsets {
            subsets,
            limit: EXACT_SUBSET_LIMIT,
        });
    }
    if let Some(fit) = constant_column_fit(&rows) {
        return Err(EstimatorError::ExactFit(Box::new(fit)));
    }
    let threshold = EXACT_FIT_RATIO.ln() + rows.log_variance_volume();

    let mut idx: Vec<usize> = (0..h).collect();
    let mut best = Candidate {
        log_det: f64::INFINITY,
        subset: idx.clone(),
    };
    loop {
        let ld = subset_log_det(&rows, &idx);
        if ld < best.log_det {
            best = Candidate {
                log_det: ld,
                subset: idx.clone(),
            };
        }
        // next combination in lexicographic order
        let mut i = h;
        while i > 0 && idx[i - 1] == m - h + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        idx[i - 1] += 1;
        for j in i..h {
            idx[j] = idx[j - 1] + 1;
        }
    }
    check_exact_fit(&rows, threshold, &best)?;

    let (mean, cov) = rows.mean_cov(&best.subset);
    let cf = consistency_factor(alpha, p)?;
    Ok(LocationScatter::new(
        DVector::from_vec(mean),
        DMatrix::from_row_slice(p, p, &cov) * cf,
        Method::ExactMcd,
    )?
    .with_mcd_metadata(alpha, best.subset, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_matrix(seed: u64, m: usize, p: usize) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(m, p, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn classical_square() {
        let x = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 2.0, 0.0, 0.0, 2.0, 2.0, 2.0]);
        let est = classical_moments(&x).unwrap();
        assert_eq!(est.center().as_slice(), &[1.0, 1.0]);
        let want = DMatrix::from_row_slice(2, 2, &[4.0 / 3.0, 0.0, 0.0, 4.0 / 3.0]);
        assert!((est.scatter() - want).abs().max() < 1e-15);
        assert!((est.log_det() - (16.0f64 / 9.0).ln()).abs() < 1e-14);
    }

    #[test]
    fn classical_needs_p_plus_one() {
        let x = random_matrix(1, 3, 3);
        assert!(matches!(
            classical_moments(&x),
            Err(EstimatorError::TooFewCases { cases: 3, needed: 4 })
        ));
        let collinear = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        assert!(matches!(
            classical_moments(&collinear),
            Err(EstimatorError::Degenerate { .. })
        ));
    }

    #[test]
    fn classical_matches_two_pass_oracle() {
        let x = random_matrix(7, 50, 3);
        let est = classical_moments(&x).unwrap();
        let m = x.nrows() as f64;
        let mut mean = [0.0; 3];
        for i in 0..50 {
            for j in 0..3 {
                mean[j] += x[(i, j)] / m;
            }
        }
        for a in 0..3 {
            assert!((est.center()[a] - mean[a]).abs() < 1e-12);
            for b in 0..3 {
                let mut s = 0.0;
                for i in 0..50 {
                    s += (x[(i, a)] - mean[a]) * (x[(i, b)] - mean[b]);
                }
                assert!((est.scatter()[(a, b)] - s / (m - 1.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pooled_examples() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let p = pooled_covariance(&[(5, &s), (17, &s)]).unwrap();
        assert!((p - &s).abs().max() < 1e-14);
        let three = &i2 * 3.0;
        let p = pooled_covariance(&[(3, &i2), (3, &three)]).unwrap();
        assert!((p - &i2 * 2.0).abs().max() < 1e-15);
        assert!(matches!(
            pooled_covariance(&[(1, &i2), (1, &i2)]),
            Err(EstimatorError::DegeneratePooling { .. })
        ));
    }

    #[test]
    fn consistency_factor_values() {
        assert_eq!(consistency_factor(1.0, 3).unwrap(), 1.0);
        // chi2_4 CDF at the chi2_2 median: 1 - 0.5 (1 + ln 2)
        let want = 0.5 / (1.0 - 0.5 * (1.0 + 2f64.ln()));
        let got = consistency_factor(0.5, 2).unwrap();
        assert!((got - want).abs() < 1e-12);
        assert!((got - 3.259).abs() < 1e-3);
        for p in 1..6 {
            let mut prev = f64::INFINITY;
            for k in 0..=50 {
                let a = 0.5 + 0.5 * k as f64 / 50.0;
                let f = consistency_factor(a, p).unwrap();
                assert!(f < prev, "p={p} alpha={a}");
                prev = f;
            }
        }
    }

    #[test]
    fn mahalanobis_basic() {
        let est = LocationScatter::new(
            DVector::from_vec(vec![1.0, 2.0]),
            DMatrix::identity(2, 2),
            Method::Classical,
        )
        .unwrap();
        assert_eq!(mahalanobis(&DVector::from_vec(vec![1.0, 2.0]), &est).unwrap(), 0.0);
        assert!((mahalanobis(&DVector::from_vec(vec![4.0, 6.0]), &est).unwrap() - 5.0).abs() < 1e-15);
        assert!(matches!(
            mahalanobis(&DVector::from_vec(vec![1.0]), &est),
            Err(EstimatorError::Shape { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn mahalanobis_matches_explicit_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a = DMatrix::<f64>::from_fn(4, 4, |_, _| rng.sample(StandardNormal));
            let s = &a * a.transpose() + DMatrix::identity(4, 4) * 0.1;
            let mu = DVector::<f64>::from_fn(4, |_, _| rng.sample(StandardNormal));
            let x = DVector::<f64>::from_fn(4, |_, _| rng.sample(StandardNormal));
            let est = LocationScatter::new(mu.clone(), s.clone(), Method::Classical).unwrap();
            let inv = s.try_inverse().unwrap();
            let d = &x - &mu;
            let want = (d.transpose() * inv * &d)[(0, 0)].sqrt();
            let got = mahalanobis(&x, &est).unwrap();
            assert!((got - want).abs() <= 1e-10 * want);
        }
    }

    #[test]
    fn c_step_fixed_point_and_monotone() {
        // tight cluster of six plus four far points: the cluster is optimal
        let x = DMatrix::from_row_slice(
            10,
            2,
            &[
                0.0, 0.0, 0.1, 0.0, 0.0, 0.1, 0.1, 0.1, 0.05, 0.02, 0.02, 0.07, 5.0, 5.0, -4.0,
                3.0, 6.0, -2.0, -5.0, -5.0,
            ],
        );
        let opt: Vec<usize> = (0..6).collect();
        let step = c_step(&x, &opt).unwrap();
        assert_eq!(step.subset, opt);

        let start = vec![0, 1, 2, 6, 7, 8];
        let mut cur = start;
        let mut ld = subset_covariance_log_det(&x, &cur);
        for _ in 0..10 {
            let s = c_step(&x, &cur).unwrap();
            assert!(s.log_det <= ld + 1e-12);
            ld = s.log_det;
            cur = s.subset;
        }
        assert_eq!(cur, opt);
    }

    #[test]
    fn c_step_singular_subset_reports_exact_fit() {
        let x = DMatrix::from_row_slice(5, 2, &[0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 0.0, 3.0, 4.0, 1.0]);
        match c_step(&x, &[0, 1, 2]) {
            Err(EstimatorError::ExactFit(fit)) => {
                assert_eq!(fit.subset, vec![0, 1, 2]);
                assert!(fit.on_plane >= 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn subset_size_rounding() {
        assert_eq!(subset_size(0.7, 10), 7);
        assert_eq!(subset_size(0.75, 80), 60);
        assert_eq!(subset_size(0.5, 11), 6);
        assert_eq!(subset_size(0.75, 101), 76);
    }

    #[test]
    fn exact_mcd_full_sample_is_classical() {
        let x = random_matrix(11, 9, 2);
        let e = exact_mcd(&x, 1.0).unwrap();
        let c = classical_moments(&x).unwrap();
        assert!((e.center() - c.center()).abs().max() < 1e-14);
        assert!((e.scatter() - c.scatter()).abs().max() < 1e-14);
        assert_eq!(e.h_subset().unwrap().len(), 9);
    }

    #[test]
    fn exact_mcd_duplicate_points_is_exact_fit() {
        let mut x = random_matrix(5, 10, 2);
        for i in 0..5 {
            x[(i, 0)] = 1.5;
            x[(i, 1)] = -0.5;
        }
        assert!(matches!(exact_mcd(&x, 0.5), Err(EstimatorError::ExactFit(_))));
    }

    #[test]
    fn exact_mcd_beats_sampled_subsets() {
        let x = random_matrix(21, 10, 2);
        let e = exact_mcd(&x, 0.5).unwrap();
        let best = subset_covariance_log_det(&x, e.h_subset().unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..500 {
            let s = rand::seq::index::sample(&mut rng, 10, 5).into_vec();
            assert!(best <= subset_covariance_log_det(&x, &s) + 1e-12);
        }
    }

    #[test]
    fn exact_mcd_refuses_large() {
        let x = random_matrix(1, 40, 2);
        assert!(matches!(
            exact_mcd(&x, 0.5),
            Err(EstimatorError::TooManySubsets { .. })
        ));
    }

    #[test]
    fn fast_mcd_config_errors() {
        let x = random_matrix(1, 4, 3);
        let cfg = EstimatorConfig {
            alpha: 0.5,
            ..Default::default()
        };
        assert!(matches!(fast_mcd(&x, &cfg), Err(EstimatorError::Config(_))));
        let bad = EstimatorConfig {
            alpha: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = EstimatorConfig {
            n_keep: 20,
            n_starts: 10,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn fast_mcd_exact_fit_on_line() {
        let mut x = random_matrix(4, 30, 2);
        for i in 0..25 {
            x[(i, 1)] = 2.0 * x[(i, 0)] + 1.0;
        }
        match fast_mcd(&x, &EstimatorConfig::default()) {
            Err(EstimatorError::ExactFit(fit)) => {
                assert!(fit.on_plane >= 25);
                let ratio = fit.normal[1] / fit.normal[0];
                assert!((ratio + 0.5).abs() < 1e-6, "{:?}", fit.normal);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fast_mcd_is_deterministic_and_flags_outliers() {
        let mut x = random_matrix(8, 60, 2);
        for i in 0..10 {
            x[(i, 0)] += 20.0;
        }
        let cfg = EstimatorConfig {
            seed: 3,
            ..Default::default()
        };
        let a = fast_mcd_fit(&x, &cfg).unwrap();
        let b = fast_mcd_fit(&x, &cfg).unwrap();
        assert_eq!(a.reweighted, b.reweighted);
        assert_eq!(a.reweighted.method(), Method::McdReweighted);
        assert_eq!(a.raw.h_subset().unwrap().len(), 45);
        let w = a.reweighted.weights().unwrap();
        assert!(w[..10].iter().all(|&v| !v));
        assert!(a.reweighted.center()[0].abs() < 0.5);
    }

    #[test]
    fn serde_round_trip_is_exact() {
        let x = random_matrix(2, 40, 3);
        let est = fast_mcd(&x, &EstimatorConfig::default()).unwrap();
        let text = serde_json::to_string(&est).unwrap();
        let back: LocationScatter = serde_json::from_str(&text).unwrap();
        assert_eq!(back, est);
    }
}
