//! Fast Function Extraction.
//!
//! A deterministic pipeline: enumerate a large catalog of univariate and bivariate
//! basis functions, fit elastic-net regularization paths over it (plain and in the
//! rational form `y ≈ N(x) / (1 + D(x))`), and keep the models that are nondominated
//! in (training MSE, number of bases).

use std::collections::HashSet;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::efs::pearson;
use crate::error::{Error, Result};
use crate::expr::{count_nodes, evaluate, ExprTree, GlmModel, Model, Op, PROTECT_EPS, VALUE_LIMIT};
use crate::linreg::{argmin_mse_sparse, elastic_net_path, DesignMatrix, ElasticNetConfig, PathPoint};

/// Basis columns with larger magnitudes are treated as overflowing.
const COLUMN_LIMIT: f64 = 1e100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FfxConfig {
    pub exponents: Vec<f64>,
    /// Unary operators applied to every power base.
    pub operators: Vec<Op>,
    /// Thresholds per variable and hinge direction; 0 disables hinges.
    pub hinge_thresholds: usize,
    pub bivariate: bool,
    pub rational: bool,
    pub l1_ratio: f64,
    pub n_lambdas: usize,
    pub lambda_min_ratio: f64,
    /// Paths stop once a point would use more bases than this.
    pub max_bases: usize,
    /// Catalog size cap; the bases most correlated with the target are kept.
    pub max_catalog: usize,
    pub timeout_seconds: f64,
}

impl Default for FfxConfig {
    fn default() -> Self {
        FfxConfig {
            exponents: vec![-1.0, -0.5, 0.5, 1.0],
            operators: vec![Op::Abs, Op::PLog],
            hinge_thresholds: 5,
            bivariate: true,
            rational: true,
            l1_ratio: 0.95,
            n_lambdas: 100,
            lambda_min_ratio: 1e-4,
            max_bases: 250,
            max_catalog: 4000,
            timeout_seconds: 600.0,
        }
    }
}

impl FfxConfig {
    /// Only exponents: no operators, hinges or products.
    pub fn powers_only() -> Self {
        FfxConfig { operators: Vec::new(), hinge_thresholds: 0, bivariate: false, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.exponents.is_empty() || self.exponents.iter().any(|e| !e.is_finite() || *e == 0.0) {
            return Err(Error::Config("ffx: exponents must be finite and nonzero".into()));
        }
        if self.operators.iter().any(|op| op.arity() != 1 || op.has_param()) {
            return Err(Error::Config("ffx: operators must be unary without parameters".into()));
        }
        if self.max_bases < 1 || self.max_catalog < 1 {
            return Err(Error::Config("ffx: base limits must be positive".into()));
        }
        if !(self.timeout_seconds > 0.0) {
            return Err(Error::Config("ffx: timeout must be positive".into()));
        }
        self.path_config(None).validate()
    }

    fn path_config(&self, deadline: Option<Instant>) -> ElasticNetConfig {
        ElasticNetConfig {
            l1_ratio: self.l1_ratio,
            n_lambdas: self.n_lambdas,
            lambda_min_ratio: self.lambda_min_ratio,
            max_nonzero: Some(self.max_bases),
            deadline,
            ..Default::default()
        }
    }
}

/// How a univariate base is built.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Univariate {
    Power { var: usize, exponent: f64 },
    Operator { op: Op, var: usize, exponent: f64 },
    HingeMax { var: usize, threshold: f64 },
    HingeMin { var: usize, threshold: f64 },
}

impl Univariate {
    /// Operator-type bases are never multiplied with each other.
    pub fn is_operator(&self) -> bool {
        !matches!(self, Univariate::Power { .. })
    }

    pub fn key(&self) -> String {
        match *self {
            Univariate::Power { var, exponent } => format!("x{var}^{exponent}"),
            Univariate::Operator { op, var, exponent } => format!("{op}(x{var}^{exponent})"),
            Univariate::HingeMax { var, threshold } => format!("hinge_max(x{var},{threshold})"),
            Univariate::HingeMin { var, threshold } => format!("hinge_min(x{var},{threshold})"),
        }
    }

    pub fn tree(&self) -> ExprTree {
        match *self {
            Univariate::Power { var, exponent } => power_tree(var, exponent),
            Univariate::Operator { op, var, exponent } => ExprTree::unary(op, power_tree(var, exponent)),
            Univariate::HingeMax { var, threshold } => ExprTree::hinge_max(ExprTree::var(var), threshold),
            Univariate::HingeMin { var, threshold } => ExprTree::hinge_min(ExprTree::var(var), threshold),
        }
    }
}

fn power_tree(var: usize, exponent: f64) -> ExprTree {
    if exponent == 1.0 {
        ExprTree::var(var)
    } else if exponent == 0.5 {
        ExprTree::unary(Op::PSqrt, ExprTree::var(var))
    } else {
        ExprTree::pow(ExprTree::var(var), exponent)
    }
}

/// Canonical key of a product; same-variable powers merge their exponents.
/// `None` when the product is constant.
fn product_key(a: &Univariate, b: &Univariate) -> Option<String> {
    if let (Univariate::Power { var: va, exponent: ea }, Univariate::Power { var: vb, exponent: eb }) = (a, b) {
        if va == vb {
            let e = ea + eb;
            if e.abs() < 1e-12 {
                return None;
            }
            return Some(format!("x{va}^{e}"));
        }
    }
    let (ka, kb) = (a.key(), b.key());
    Some(if ka <= kb { format!("{ka}*{kb}") } else { format!("{kb}*{ka}") })
}

#[derive(Clone, Debug)]
pub struct Basis {
    pub key: String,
    pub tree: ExprTree,
    /// Univariate parents (one or two).
    pub parts: Vec<Univariate>,
    pub column: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct BasisCatalog {
    pub bases: Vec<Basis>,
}

impl BasisCatalog {
    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }

    pub fn univariate(&self) -> impl Iterator<Item = &Basis> {
        self.bases.iter().filter(|b| b.parts.len() == 1)
    }

    pub fn bivariate(&self) -> impl Iterator<Item = &Basis> {
        self.bases.iter().filter(|b| b.parts.len() == 2)
    }
}

fn admissible(column: &[f64]) -> bool {
    if column.iter().any(|v| !v.is_finite() || v.abs() > COLUMN_LIMIT) {
        return false;
    }
    let n = column.len() as f64;
    let mean = column.iter().sum::<f64>() / n;
    let var = column.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    var > 1e-24 * (1.0 + mean * mean)
}

/// Whether `x^exponent` is defined at every training value.
fn power_defined(column: &[f64], exponent: f64) -> bool {
    let fractional = exponent.fract() != 0.0;
    column.iter().all(|&v| (exponent > 0.0 || v.abs() > PROTECT_EPS) && (!fractional || v >= 0.0))
}

/// Whether `op` is well defined (without protection) on a column.
fn operator_defined(op: Op, column: &[f64]) -> bool {
    match op {
        Op::Abs => column.iter().any(|v| *v < 0.0),
        Op::PLog => column.iter().all(|v| v.abs() > PROTECT_EPS),
        Op::PSqrt => column.iter().all(|v| *v >= 0.0),
        _ => true,
    }
}

fn hinge_thresholds(column: &[f64], count: usize) -> Vec<f64> {
    let lo = column.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = column.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (a, b) = (lo + 0.2 * (hi - lo), hi - 0.2 * (hi - lo));
    match count {
        0 => Vec::new(),
        1 => vec![0.5 * (a + b)],
        _ => (0..count).map(|i| a + (b - a) * i as f64 / (count - 1) as f64).collect(),
    }
}

fn multiply(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| (x * y).clamp(-VALUE_LIMIT, VALUE_LIMIT)).collect()
}

/// Builds the basis catalog on the training inputs.
///
/// Univariate bases are ordered by variable, then exponent, then operator, then
/// hinges; bivariate products follow in pair order. Bases that are undefined,
/// overflowing or constant on the training data are dropped, as are duplicates of
/// an earlier canonical form.
pub fn generate_bases(x: &DMatrix<f64>, y: &[f64], cfg: &FfxConfig) -> Result<BasisCatalog> {
    cfg.validate()?;
    let mut seen: HashSet<String> = HashSet::new();
    let mut uni: Vec<Basis> = Vec::new();
    let mut push = |u: Univariate, column: Vec<f64>, uni: &mut Vec<Basis>| {
        let key = u.key();
        if admissible(&column) && seen.insert(key.clone()) {
            uni.push(Basis { key, tree: u.tree(), parts: vec![u], column });
        }
    };
    for var in 0..x.ncols() {
        let raw: Vec<f64> = x.column(var).iter().copied().collect();
        for &exponent in &cfg.exponents {
            if !power_defined(&raw, exponent) {
                continue;
            }
            let u = Univariate::Power { var, exponent };
            let col = evaluate(&u.tree(), x)?;
            let ops: Vec<Op> = cfg.operators.iter().copied().filter(|&op| operator_defined(op, &col)).collect();
            push(u, col, &mut uni);
            for op in ops {
                let v = Univariate::Operator { op, var, exponent };
                push(v, evaluate(&v.tree(), x)?, &mut uni);
            }
        }
        for threshold in hinge_thresholds(&raw, cfg.hinge_thresholds) {
            for u in [Univariate::HingeMax { var, threshold }, Univariate::HingeMin { var, threshold }] {
                push(u, evaluate(&u.tree(), x)?, &mut uni);
            }
        }
    }
    let mut bases = uni.clone();
    if cfg.bivariate {
        for i in 0..uni.len() {
            for j in i + 1..uni.len() {
                let (a, b) = (&uni[i].parts[0], &uni[j].parts[0]);
                if a.is_operator() && b.is_operator() {
                    continue;
                }
                let Some(key) = product_key(a, b) else { continue };
                if seen.contains(&key) {
                    continue;
                }
                let column = multiply(&uni[i].column, &uni[j].column);
                if admissible(&column) {
                    seen.insert(key.clone());
                    bases.push(Basis {
                        key,
                        tree: ExprTree::binary(Op::Mult, uni[i].tree.clone(), uni[j].tree.clone()),
                        parts: vec![*a, *b],
                        column,
                    });
                }
            }
        }
    }
    if bases.len() > cfg.max_catalog {
        let mut scored: Vec<(usize, f64)> = bases
            .iter()
            .enumerate()
            .map(|(i, b)| (i, pearson(&b.column, y).map(|r| r.value.abs()).unwrap_or(0.0)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut keep: Vec<usize> = scored[..cfg.max_catalog].iter().map(|s| s.0).collect();
        keep.sort_unstable();
        bases = keep.into_iter().map(|i| bases[i].clone()).collect();
    }
    Ok(BasisCatalog { bases })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontEntry {
    pub model: Model,
    pub train_mse: f64,
    pub n_bases: usize,
    pub n_nodes: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParetoFront {
    /// Sorted by increasing number of bases.
    pub entries: Vec<FrontEntry>,
}

impl ParetoFront {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn dominates(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 <= b.0 && a.1 <= b.1 && (a.0 < b.0 || a.1 < b.1)
}

/// Nondominated subset in (MSE, number of bases); exact duplicates keep the first.
pub fn pareto_filter(candidates: Vec<FrontEntry>) -> ParetoFront {
    let scores: Vec<(f64, usize)> = candidates.iter().map(|c| (c.train_mse, c.n_bases)).collect();
    let mut entries: Vec<FrontEntry> = Vec::new();
    for (i, cand) in candidates.into_iter().enumerate() {
        let dominated = scores.iter().any(|&s| dominates(s, scores[i]));
        let duplicate = scores[..i].contains(&scores[i]);
        if !dominated && !duplicate && scores[i].0.is_finite() {
            entries.push(cand);
        }
    }
    entries.sort_by(|a, b| a.n_bases.cmp(&b.n_bases).then(b.train_mse.total_cmp(&a.train_mse)));
    ParetoFront { entries }
}

/// Same arithmetic as `GlmModel::predict` on cached columns.
fn combine(intercept: f64, terms: &[(f64, usize)], columns: &[&[f64]], n: usize) -> Vec<f64> {
    let mut out = vec![intercept; n];
    for &(c, j) in terms {
        for (o, v) in out.iter_mut().zip(columns[j]) {
            *o += c * v;
        }
    }
    out.into_iter().map(clamp_value).collect()
}

fn clamp_value(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(-VALUE_LIMIT, VALUE_LIMIT)
    }
}

struct Candidate {
    model: Model,
    mse: f64,
}

fn linear_candidate(point: &PathPoint, catalog: &BasisCatalog, y: &[f64]) -> Candidate {
    let cols: Vec<&[f64]> = catalog.bases.iter().map(|b| b.column.as_slice()).collect();
    let terms: Vec<(f64, usize)> =
        point.coefficients.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(j, c)| (*c, j)).collect();
    let pred = combine(point.intercept, &terms, &cols, y.len());
    let model =
        GlmModel::new(point.intercept, terms.iter().map(|&(c, j)| (c, catalog.bases[j].tree.clone())).collect());
    Candidate { model: model.into(), mse: crate::stats::mse(&pred, y) }
}

fn rational_candidate(point: &PathPoint, catalog: &BasisCatalog, y: &[f64]) -> Candidate {
    let p = catalog.len();
    let cols: Vec<&[f64]> = catalog.bases.iter().map(|b| b.column.as_slice()).collect();
    let pick = |range: std::ops::Range<usize>| -> Vec<(f64, usize)> {
        range.filter(|&k| point.coefficients[k] != 0.0).map(|k| (point.coefficients[k], k % p)).collect()
    };
    let num_terms = pick(0..p);
    let den_terms = pick(p..2 * p);
    if den_terms.is_empty() {
        return linear_candidate(
            &PathPoint { coefficients: point.coefficients[..p].to_vec(), ..point.clone() },
            catalog,
            y,
        );
    }
    let num = combine(point.intercept, &num_terms, &cols, y.len());
    let den = combine(1.0, &den_terms, &cols, y.len());
    let pred: Vec<f64> = num
        .iter()
        .zip(&den)
        .map(|(&n, &d)| {
            let d = if d.abs() < PROTECT_EPS { PROTECT_EPS.copysign(d) } else { d };
            clamp_value(n / d)
        })
        .collect();
    let glm = |intercept: f64, terms: &[(f64, usize)]| {
        GlmModel::new(intercept, terms.iter().map(|&(c, j)| (c, catalog.bases[j].tree.clone())).collect())
    };
    Candidate {
        model: Model::Rational { numerator: glm(point.intercept, &num_terms), denominator: glm(1.0, &den_terms) },
        mse: crate::stats::mse(&pred, y),
    }
}

fn entry(c: Candidate) -> FrontEntry {
    FrontEntry { n_bases: c.model.n_bases(), n_nodes: count_nodes(&c.model), train_mse: c.mse, model: c.model }
}

/// Fits the regularization paths on the training part of `train` and returns the
/// Pareto front.
pub fn ffx_fit(train: &Dataset, cfg: &FfxConfig) -> Result<ParetoFront> {
    ffx_fit_xy(&train.x_train, &train.y_train, cfg)
}

pub fn ffx_fit_xy(x: &DMatrix<f64>, y: &[f64], cfg: &FfxConfig) -> Result<ParetoFront> {
    cfg.validate()?;
    if y.is_empty() || x.nrows() != y.len() {
        return Err(Error::Argument("FFX needs a non-empty training set".into()));
    }
    let deadline = Instant::now() + Duration::from_secs_f64(cfg.timeout_seconds);
    let n = y.len();
    let mean = y.iter().sum::<f64>() / n as f64;
    let constant = GlmModel::constant(mean);
    let constant_mse = crate::stats::mse(&vec![mean; n], y);
    let mut candidates = vec![entry(Candidate { model: constant.into(), mse: constant_mse })];
    let y_var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if y_var <= 1e-24 * (1.0 + mean * mean) {
        return Ok(pareto_filter(candidates));
    }
    let catalog = generate_bases(x, y, cfg)?;
    if catalog.is_empty() {
        return Ok(pareto_filter(candidates));
    }
    let path_cfg = cfg.path_config(Some(deadline));
    {
        let cols: Vec<Vec<f64>> = catalog.bases.iter().map(|b| b.column.clone()).collect();
        let design = DesignMatrix::from_columns(&cols, y.to_vec())?;
        drop(cols);
        let path = elastic_net_path(&design, &path_cfg)?;
        candidates.extend(path.points.iter().map(|p| entry(linear_candidate(p, &catalog, y))));
    }
    if cfg.rational && Instant::now() < deadline {
        let mut cols: Vec<Vec<f64>> = catalog.bases.iter().map(|b| b.column.clone()).collect();
        for b in &catalog.bases {
            cols.push(b.column.iter().zip(y).map(|(v, t)| -(v * t)).collect());
        }
        if cols.iter().all(|c| c.iter().all(|v| v.is_finite())) {
            let design = DesignMatrix::from_columns(&cols, y.to_vec())?;
            drop(cols);
            let path = elastic_net_path(&design, &path_cfg)?;
            candidates.extend(path.points.iter().map(|p| entry(rational_candidate(p, &catalog, y))));
        }
    }
    Ok(pareto_filter(candidates))
}

/// The front member with the smallest MSE on `(x, y)`; near-ties go to fewer bases.
pub fn select_best(front: &ParetoFront, x: &DMatrix<f64>, y: &[f64]) -> Result<Model> {
    let mses =
        front.entries.iter().map(|e| Ok(crate::stats::mse(&e.model.predict(x)?, y))).collect::<Result<Vec<f64>>>()?;
    let bases: Vec<usize> = front.entries.iter().map(|e| e.n_bases).collect();
    let i = argmin_mse_sparse(&mses, &bases).ok_or_else(|| Error::Argument("empty Pareto front".into()))?;
    Ok(front.entries[i].model.clone())
}

/// Fits the front and selects on the training data itself.
pub fn ffx_run(train: &Dataset, cfg: &FfxConfig) -> Result<Model> {
    let front = ffx_fit(train, cfg)?;
    select_best(&front, &train.x_train, &train.y_train)
}
