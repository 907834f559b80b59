//! Least squares and pathwise elastic-net regression.
//!
//! [`ols_fit`] is the GPTIPS-style top-level combiner and the LR baseline.
//! [`elastic_net_path`] is the pathwise regularized learner used by FFX and EFS:
//! cyclic coordinate descent over a geometric λ grid with warm starts, run on
//! standardized columns and reported back in the original scale.
//!
//! The elastic-net objective on standardized columns `z` and centered target `yc` is
//!
//! ```text
//! (1/2n)·‖yc − Zβ‖² + λ·(α‖β‖₁ + (1−α)/2·‖β‖²)
//! ```
//!
//! with `α` = `l1_ratio`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Columns whose population standard deviation is below this (relative) level are
/// treated as constant and excluded from the regularized fit.
const CONSTANT_COLUMN_TOL: f64 = 1e-12;

/// Evaluated basis outputs (rows × bases) and the regression target.
#[derive(Clone, Debug)]
pub struct DesignMatrix {
    columns: DMatrix<f64>,
    target: Vec<f64>,
    means: Vec<f64>,
    stds: Vec<f64>,
}

impl DesignMatrix {
    pub fn new(columns: DMatrix<f64>, target: Vec<f64>) -> Result<Self> {
        if columns.nrows() != target.len() {
            return Err(Error::Argument(format!(
                "design matrix has {} rows but target has {}",
                columns.nrows(),
                target.len()
            )));
        }
        if target.is_empty() {
            return Err(Error::Argument("design matrix needs at least one row".into()));
        }
        if columns.iter().chain(&target).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite entry in design matrix".into()));
        }
        let n = target.len() as f64;
        let mut means = Vec::with_capacity(columns.ncols());
        let mut stds = Vec::with_capacity(columns.ncols());
        for col in columns.column_iter() {
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            means.push(mean);
            stds.push(var.sqrt());
        }
        Ok(DesignMatrix { columns, target, means, stds })
    }

    /// Builds a design matrix from column vectors.
    pub fn from_columns(columns: &[Vec<f64>], target: Vec<f64>) -> Result<Self> {
        let rows = target.len();
        if let Some(bad) = columns.iter().find(|c| c.len() != rows) {
            return Err(Error::Argument(format!("column of length {} does not match {rows} rows", bad.len())));
        }
        let flat: Vec<f64> = columns.iter().flatten().copied().collect();
        Self::new(DMatrix::from_vec(rows, columns.len(), flat), target)
    }

    pub fn nrows(&self) -> usize {
        self.target.len()
    }

    pub fn ncols(&self) -> usize {
        self.columns.ncols()
    }

    pub fn columns(&self) -> &DMatrix<f64> {
        &self.columns
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn stds(&self) -> &[f64] {
        &self.stds
    }

    fn is_constant(&self, j: usize) -> bool {
        self.stds[j] <= CONSTANT_COLUMN_TOL * (1.0 + self.means[j].abs())
    }

    /// `intercept + X·coefficients`
    pub fn predict(&self, intercept: f64, coefficients: &[f64]) -> Vec<f64> {
        let mut out = vec![intercept; self.nrows()];
        for (j, &c) in coefficients.iter().enumerate() {
            if c != 0.0 {
                for (o, v) in out.iter_mut().zip(self.columns.column(j).iter()) {
                    *o += c * v;
                }
            }
        }
        out
    }

    pub fn mse(&self, intercept: f64, coefficients: &[f64]) -> f64 {
        crate::stats::mse(&self.predict(intercept, coefficients), &self.target)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OlsFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

/// Minimum-norm least squares with an unpenalized intercept.
///
/// Columns and target are centered and the centered system is solved through a
/// singular value decomposition, so collinear or duplicated columns receive the
/// minimum-norm coefficient vector instead of an error.
pub fn ols_fit(x: &DesignMatrix) -> Result<OlsFit> {
    let n = x.nrows();
    let p = x.ncols();
    let y_mean = x.target.iter().sum::<f64>() / n as f64;
    if p == 0 {
        return Ok(OlsFit { intercept: y_mean, coefficients: Vec::new() });
    }
    let mut centered = x.columns.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-x.means[j]);
    }
    let yc = DVector::from_iterator(n, x.target.iter().map(|v| v - y_mean));
    let svd = centered.svd(true, true);
    let sigma_max = svd.singular_values.max();
    let tol = (n.max(p) as f64) * f64::EPSILON * sigma_max;
    let beta = if sigma_max == 0.0 {
        DVector::zeros(p)
    } else {
        svd.solve(&yc, tol).map_err(|e| Error::Numeric(e.to_string()))?
    };
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("least squares produced non-finite coefficients".into()));
    }
    let intercept = y_mean - beta.iter().zip(&x.means).map(|(b, m)| b * m).sum::<f64>();
    Ok(OlsFit { intercept, coefficients: beta.iter().copied().collect() })
}

/// Active-set sweeps between direct solves when coordinate descent stalls.
const POLISH_EVERY: usize = 10;

#[derive(Clone, Debug)]
pub struct ElasticNetConfig {
    /// Mixing parameter α in (0, 1]; 1 is the lasso.
    pub l1_ratio: f64,
    pub n_lambdas: usize,
    /// Smallest λ on the grid as a fraction of λ_max.
    pub lambda_min_ratio: f64,
    /// Convergence threshold on the largest standardized coefficient change per sweep.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Stop the path once a solution has more nonzero coefficients than this.
    pub max_nonzero: Option<usize>,
    /// Stop the path (between λ values) once this instant has passed.
    pub deadline: Option<Instant>,
}

impl Default for ElasticNetConfig {
    fn default() -> Self {
        ElasticNetConfig {
            l1_ratio: 0.95,
            n_lambdas: 100,
            lambda_min_ratio: 1e-4,
            tol: 1e-7,
            max_sweeps: 1000,
            max_nonzero: None,
            deadline: None,
        }
    }
}

impl ElasticNetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l1_ratio > 0.0 && self.l1_ratio <= 1.0) {
            return Err(Error::Argument(format!("l1_ratio must lie in (0, 1], got {}", self.l1_ratio)));
        }
        if self.n_lambdas == 0 || !(self.lambda_min_ratio > 0.0 && self.lambda_min_ratio < 1.0) {
            return Err(Error::Argument("invalid lambda grid".into()));
        }
        Ok(())
    }
}

/// One solution on the regularization path, in the original column scale.
#[derive(Clone, Debug, PartialEq)]
pub struct PathPoint {
    pub lambda: f64,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub nonzero: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathSolution {
    pub points: Vec<PathPoint>,
    /// λ_max: the smallest λ whose solution is all zero.
    pub lambda_max: f64,
}

/// Coordinate-descent state over the standardized problem, with lazily cached Gram
/// columns for every coordinate that has ever been nonzero.
struct CoordinateDescent {
    n: usize,
    /// Original indices of the non-constant columns.
    kept: Vec<usize>,
    z: Vec<Vec<f64>>,
    /// z_jᵀ·yc / n
    corr: Vec<f64>,
    /// z_jᵀ·z_j / n
    diag: Vec<f64>,
    gram: Vec<Option<Vec<f64>>>,
    touched: Vec<usize>,
    beta: Vec<f64>,
    l1_ratio: f64,
}

impl CoordinateDescent {
    fn new(x: &DesignMatrix, l1_ratio: f64) -> Self {
        let n = x.nrows();
        let nf = n as f64;
        let y_mean = x.target.iter().sum::<f64>() / nf;
        let yc: Vec<f64> = x.target.iter().map(|v| v - y_mean).collect();
        let kept: Vec<usize> = (0..x.ncols()).filter(|&j| !x.is_constant(j)).collect();
        let z: Vec<Vec<f64>> = kept
            .iter()
            .map(|&j| {
                let (m, s) = (x.means[j], x.stds[j]);
                x.columns.column(j).iter().map(|v| (v - m) / s).collect()
            })
            .collect();
        let corr = z.iter().map(|zj| dot(zj, &yc) / nf).collect();
        let diag = z.iter().map(|zj| dot(zj, zj) / nf).collect();
        let p = kept.len();
        CoordinateDescent {
            n,
            kept,
            z,
            corr,
            diag,
            gram: vec![None; p],
            touched: Vec::new(),
            beta: vec![0.0; p],
            l1_ratio,
        }
    }

    fn p(&self) -> usize {
        self.kept.len()
    }

    fn lambda_max(&self) -> f64 {
        self.corr.iter().fold(0.0f64, |m, c| m.max(c.abs())) / self.l1_ratio
    }

    fn ensure_gram(&mut self, k: usize) {
        if self.gram[k].is_none() {
            let nf = self.n as f64;
            let zk = &self.z[k];
            let col = self.z.iter().map(|zj| dot(zj, zk) / nf).collect();
            self.gram[k] = Some(col);
            self.touched.push(k);
        }
    }

    /// (1/n)·z_jᵀ·(yc − Zβ)
    fn gradient(&self, j: usize) -> f64 {
        let mut g = self.corr[j];
        for &k in &self.touched {
            let b = self.beta[k];
            if b != 0.0 {
                g -= self.gram[k].as_ref().expect("gram column cached")[j] * b;
            }
        }
        g
    }

    fn update(&mut self, j: usize, lambda: f64) -> f64 {
        let old = self.beta[j];
        let rho = self.gradient(j) + self.diag[j] * old;
        let new = soft_threshold(rho, lambda * self.l1_ratio) / (self.diag[j] + lambda * (1.0 - self.l1_ratio));
        if new != old {
            if new != 0.0 {
                self.ensure_gram(j);
            }
            self.beta[j] = new;
        }
        (new - old).abs()
    }

    fn kkt_violation(&self, lambda: f64) -> f64 {
        (0..self.p())
            .map(|j| {
                let g = self.gradient(j);
                let b = self.beta[j];
                if b != 0.0 {
                    (g - lambda * self.l1_ratio * b.signum() - lambda * (1.0 - self.l1_ratio) * b).abs()
                } else {
                    (g.abs() - lambda * self.l1_ratio).max(0.0)
                }
            })
            .fold(0.0, f64::max)
    }

    /// Solves the stationarity equations on the current active set with its current
    /// signs. Kept only if the signs survive and the full KKT check passes.
    fn polish(&mut self, lambda: f64, tol: f64) -> bool {
        let active: Vec<usize> = (0..self.p()).filter(|&j| self.beta[j] != 0.0).collect();
        let m = active.len();
        if m == 0 {
            return false;
        }
        let ridge = lambda * (1.0 - self.l1_ratio);
        let gram = DMatrix::from_fn(m, m, |a, b| {
            self.gram[active[b]].as_ref().expect("active columns are cached")[active[a]]
                + if a == b { ridge } else { 0.0 }
        });
        let rhs =
            DVector::from_fn(m, |a, _| self.corr[active[a]] - lambda * self.l1_ratio * self.beta[active[a]].signum());
        let Some(chol) = gram.cholesky() else {
            return false;
        };
        let solved = chol.solve(&rhs);
        if active
            .iter()
            .zip(solved.iter())
            .any(|(&j, &v)| !v.is_finite() || v == 0.0 || v.signum() != self.beta[j].signum())
        {
            return false;
        }
        let saved: Vec<f64> = active.iter().map(|&j| self.beta[j]).collect();
        for (&j, &v) in active.iter().zip(solved.iter()) {
            self.beta[j] = v;
        }
        if self.kkt_violation(lambda) <= tol {
            return true;
        }
        for (&j, &v) in active.iter().zip(&saved) {
            self.beta[j] = v;
        }
        false
    }

    /// Solves at one λ starting from the current coefficients.
    ///
    /// Coordinate descent alternates full sweeps with sweeps over the active set. When
    /// progress stalls (correlated columns), the active-set equations are solved
    /// directly.
    fn solve(&mut self, lambda: f64, tol: f64, max_sweeps: usize) {
        let mut sweeps = 0;
        while sweeps < max_sweeps {
            let mut max_change = 0.0f64;
            for j in 0..self.p() {
                max_change = max_change.max(self.update(j, lambda));
            }
            sweeps += 1;
            if max_change < tol {
                if self.kkt_violation(lambda) <= tol || self.polish(lambda, tol) {
                    break;
                }
                continue;
            }
            let mut inner = 0;
            while sweeps < max_sweeps {
                let active: Vec<usize> = (0..self.p()).filter(|&j| self.beta[j] != 0.0).collect();
                let mut change = 0.0f64;
                for j in active {
                    change = change.max(self.update(j, lambda));
                }
                sweeps += 1;
                inner += 1;
                if change < tol {
                    break;
                }
                if inner % POLISH_EVERY == 0 && self.polish(lambda, tol) {
                    return;
                }
            }
        }
    }

    fn to_point(&self, x: &DesignMatrix, lambda: f64) -> PathPoint {
        let mut coefficients = vec![0.0; x.ncols()];
        let mut nonzero = 0;
        for (k, &j) in self.kept.iter().enumerate() {
            if self.beta[k] != 0.0 {
                coefficients[j] = self.beta[k] / x.stds[j];
                nonzero += 1;
            }
        }
        let y_mean = x.target.iter().sum::<f64>() / x.nrows() as f64;
        let intercept = y_mean - coefficients.iter().zip(&x.means).map(|(c, m)| c * m).sum::<f64>();
        PathPoint { lambda, intercept, coefficients, nonzero }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `sign(z)·max(|z| − γ, 0)`
#[inline]
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Warm-started coordinate-descent path from λ_max down to λ_max·`lambda_min_ratio`
/// on a geometric grid of `n_lambdas` values.
///
/// Constant columns are excluded (their coefficients stay 0). With no usable column, or
/// a target that is uncorrelated with every column, the path holds a single
/// intercept-only point.
pub fn elastic_net_path(x: &DesignMatrix, cfg: &ElasticNetConfig) -> Result<PathSolution> {
    cfg.validate()?;
    let mut cd = CoordinateDescent::new(x, cfg.l1_ratio);
    let lambda_max = cd.lambda_max();
    if cd.p() == 0 || lambda_max <= 0.0 {
        return Ok(PathSolution { points: vec![cd.to_point(x, 0.0)], lambda_max: 0.0 });
    }
    let mut points = vec![cd.to_point(x, lambda_max)];
    let steps = cfg.n_lambdas.max(1) - 1;
    for k in 1..=steps {
        if cfg.deadline.is_some_and(|d| Instant::now() >= d) {
            break;
        }
        let lambda = lambda_max * cfg.lambda_min_ratio.powf(k as f64 / steps as f64);
        cd.solve(lambda, cfg.tol, cfg.max_sweeps);
        let point = cd.to_point(x, lambda);
        if cfg.max_nonzero.is_some_and(|m| point.nonzero > m) {
            break;
        }
        points.push(point);
    }
    Ok(PathSolution { points, lambda_max })
}

/// Solves the elastic net at a single λ from an all-zero start.
pub fn elastic_net_at(x: &DesignMatrix, lambda: f64, cfg: &ElasticNetConfig) -> Result<PathPoint> {
    cfg.validate()?;
    let mut cd = CoordinateDescent::new(x, cfg.l1_ratio);
    if cd.p() > 0 {
        cd.solve(lambda, cfg.tol, cfg.max_sweeps);
    }
    Ok(cd.to_point(x, lambda))
}

/// Index of the smallest MSE; near-ties (relative 1e-12) go to the sparser entry,
/// then to the earlier one.
pub fn argmin_mse_sparse(mses: &[f64], nonzeros: &[usize]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for i in 0..mses.len() {
        let Some(b) = best else {
            best = Some(i);
            continue;
        };
        let tie = (mses[i] - mses[b]).abs() <= 1e-12 * mses[i].abs().max(mses[b].abs());
        if (!tie && mses[i] < mses[b]) || (tie && nonzeros[i] < nonzeros[b]) {
            best = Some(i);
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathSelection {
    pub index: usize,
    pub mse: f64,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

/// Picks the path point with minimal training MSE, ties going to fewer nonzeros.
pub fn select_on_path(path: &PathSolution, x: &DesignMatrix) -> Result<PathSelection> {
    let mses: Vec<f64> = path.points.iter().map(|p| x.mse(p.intercept, &p.coefficients)).collect();
    let nonzeros: Vec<usize> = path.points.iter().map(|p| p.nonzero).collect();
    let index =
        argmin_mse_sparse(&mses, &nonzeros).ok_or_else(|| Error::Argument("empty regularization path".into()))?;
    let p = &path.points[index];
    Ok(PathSelection { index, mse: mses[index], intercept: p.intercept, coefficients: p.coefficients.clone() })
}
