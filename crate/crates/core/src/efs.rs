//! Evolutionary feature synthesis.
//!
//! The population holds features rather than models. Every generation a
//! regularization path is fitted over the current features and the best model seen
//! so far is kept; new features are then composed by applying operators to existing
//! ones, and admitted only when they are not too correlated with their parents.

use std::collections::HashSet;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::expr::{apply_columns, reported_nodes, ExprTree, FunctionSet, GlmModel};
use crate::linreg::{elastic_net_path, select_on_path, DesignMatrix, ElasticNetConfig};

/// Variances below this make a correlation undefined.
const DEGENERATE_VARIANCE: f64 = 1e-24;
/// Candidate columns with larger magnitudes are rejected.
const COLUMN_LIMIT: f64 = 1e100;
/// Added to every sampling weight so unused features stay reachable.
const WEIGHT_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correlation {
    pub value: f64,
    /// Either input had (numerically) zero variance; `value` is then 0.
    pub degenerate: bool,
}

/// Pearson product-moment correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<Correlation> {
    if a.len() != b.len() {
        return Err(Error::Argument(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::Argument("correlation needs at least two points".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa / n < DEGENERATE_VARIANCE || sbb / n < DEGENERATE_VARIANCE {
        return Ok(Correlation { value: 0.0, degenerate: true });
    }
    let r = sab / (saa.sqrt() * sbb.sqrt());
    Ok(Correlation { value: r.clamp(-1.0, 1.0), degenerate: false })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EfsConfig {
    /// Pool capacity is `max(capacity_per_feature · d, min_capacity)`.
    pub capacity_per_feature: usize,
    pub min_capacity: usize,
    pub generations: usize,
    /// Composition attempts per generation; 0 means one per pool slot.
    pub attempts_per_generation: usize,
    pub max_feature_nodes: usize,
    pub correlation_threshold: f64,
    pub l1_ratio: f64,
    pub n_lambdas: usize,
    pub lambda_min_ratio: f64,
    pub timeout_seconds: f64,
    pub seed: u64,
}

impl Default for EfsConfig {
    fn default() -> Self {
        EfsConfig {
            capacity_per_feature: 5,
            min_capacity: 25,
            generations: 200,
            attempts_per_generation: 0,
            max_feature_nodes: 5,
            correlation_threshold: 0.95,
            l1_ratio: 0.95,
            n_lambdas: 100,
            lambda_min_ratio: 1e-4,
            timeout_seconds: 600.0,
            seed: 0,
        }
    }
}

impl EfsConfig {
    pub fn capacity(&self, dims: usize) -> usize {
        (self.capacity_per_feature * dims).max(self.min_capacity).max(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_feature_nodes < 1 {
            return Err(Error::Config("efs: feature node limit must be positive".into()));
        }
        if !(self.correlation_threshold > 0.0 && self.correlation_threshold <= 1.0) {
            return Err(Error::Config("efs: correlation threshold must be in (0, 1]".into()));
        }
        if !(self.timeout_seconds > 0.0) {
            return Err(Error::Config("efs: timeout must be positive".into()));
        }
        self.path_config().validate()
    }

    fn path_config(&self) -> ElasticNetConfig {
        ElasticNetConfig {
            l1_ratio: self.l1_ratio,
            n_lambdas: self.n_lambdas,
            lambda_min_ratio: self.lambda_min_ratio,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct Feature {
    pub id: u64,
    pub tree: ExprTree,
    pub column: Vec<f64>,
    /// Ids of the features it was composed from (empty for input variables).
    pub parents: Vec<u64>,
    pub original: bool,
    /// Sampling weight from the latest fit.
    pub weight: f64,
}

#[derive(Clone, Debug)]
pub struct FeaturePool {
    pub features: Vec<Feature>,
    pub capacity: usize,
    next_id: u64,
}

impl FeaturePool {
    /// Pool of the input variables.
    pub fn from_inputs(x: &DMatrix<f64>, capacity: usize) -> Self {
        let features = (0..x.ncols())
            .map(|j| Feature {
                id: j as u64,
                tree: ExprTree::var(j),
                column: x.column(j).iter().copied().collect(),
                parents: Vec::new(),
                original: true,
                weight: WEIGHT_FLOOR,
            })
            .collect();
        FeaturePool { features, capacity: capacity.max(x.ncols()), next_id: x.ncols() as u64 }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    fn design(&self, y: &[f64]) -> Result<DesignMatrix> {
        let cols: Vec<Vec<f64>> = self.features.iter().map(|f| f.column.clone()).collect();
        DesignMatrix::from_columns(&cols, y.to_vec())
    }

    /// Sets sampling weights from coefficients on the original scale.
    pub fn set_weights(&mut self, coefficients: &[f64], stds: &[f64]) {
        for ((f, c), s) in self.features.iter_mut().zip(coefficients).zip(stds) {
            f.weight = (c * s).abs() + WEIGHT_FLOOR;
        }
    }

    /// Order-sensitive digest of the pool's expressions.
    pub fn fingerprint(&self) -> String {
        self.features.iter().map(|f| f.tree.infix()).collect::<Vec<_>>().join(" | ")
    }

    /// Index of the feature an admission would replace.
    fn eviction_target(&self) -> Option<usize> {
        self.features
            .iter()
            .enumerate()
            .filter(|(_, f)| !f.original)
            .min_by(|(_, a), (_, b)| a.weight.total_cmp(&b.weight).then(a.id.cmp(&b.id)))
            .map(|(i, _)| i)
    }
}

fn usable(column: &[f64]) -> bool {
    column.iter().all(|v| v.is_finite() && v.abs() <= COLUMN_LIMIT)
}

/// Attempts `attempts` compositions. Each picks an operator uniformly, draws parents
/// with probability proportional to their weights and admits the new feature when it
/// has at most `max_nodes` nodes, a finite column, well-defined correlations with
/// every parent, all below `threshold` in absolute value, and no duplicate in the
/// pool. A full pool evicts its lowest-weight non-input feature (oldest on ties).
/// Returns the number of admitted features.
pub fn compose_features(
    pool: &mut FeaturePool,
    functions: &FunctionSet,
    attempts: usize,
    max_nodes: usize,
    threshold: f64,
    rng: &mut impl Rng,
) -> usize {
    if functions.ops.is_empty() || pool.is_empty() {
        return 0;
    }
    let mut known: HashSet<String> = pool.features.iter().map(|f| f.tree.infix()).collect();
    let mut admitted = 0;
    for _ in 0..attempts {
        let op = functions.ops[rng.random_range(0..functions.ops.len())];
        let weights: Vec<f64> = pool.features.iter().map(|f| f.weight).collect();
        let dist = WeightedIndex::new(&weights).expect("weights are positive");
        let parents: Vec<usize> = (0..op.arity()).map(|_| dist.sample(rng)).collect();
        let tree = ExprTree::apply(op, parents.iter().map(|&p| pool.features[p].tree.clone()).collect());
        if reported_nodes(&tree) > max_nodes {
            continue;
        }
        let key = tree.infix();
        if known.contains(&key) {
            continue;
        }
        let args: Vec<&[f64]> = parents.iter().map(|&p| pool.features[p].column.as_slice()).collect();
        let column = apply_columns(op, 0.0, &args);
        if !usable(&column) {
            continue;
        }
        let accepted = parents.iter().all(|&p| match pearson(&column, &pool.features[p].column) {
            Ok(r) => !r.degenerate && r.value.abs() < threshold,
            Err(_) => false,
        });
        if !accepted {
            continue;
        }
        let feature = Feature {
            id: pool.next_id,
            tree,
            column,
            parents: parents.iter().map(|&p| pool.features[p].id).collect(),
            original: false,
            weight: WEIGHT_FLOOR,
        };
        if pool.len() < pool.capacity {
            pool.features.push(feature);
        } else if let Some(victim) = pool.eviction_target() {
            known.remove(&pool.features[victim].tree.infix());
            pool.features[victim] = feature;
        } else {
            continue;
        }
        pool.next_id += 1;
        known.insert(key);
        admitted += 1;
    }
    admitted
}

/// One run of the algorithm.
pub struct EfsEngine {
    y: Vec<f64>,
    functions: FunctionSet,
    config: EfsConfig,
    rng: ChaCha8Rng,
    pool: FeaturePool,
    best: GlmModel,
    best_mse: f64,
    generation: usize,
    history: Vec<f64>,
}

impl EfsEngine {
    /// Creates the pool of input variables and fits it once.
    pub fn new(x: &DMatrix<f64>, y: &[f64], functions: FunctionSet, config: EfsConfig) -> Result<Self> {
        config.validate()?;
        if y.is_empty() || x.nrows() != y.len() {
            return Err(Error::Argument("EFS needs a non-empty training set".into()));
        }
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let pool = FeaturePool::from_inputs(x, config.capacity(x.ncols()));
        let mut engine = EfsEngine {
            y: y.to_vec(),
            functions,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            pool,
            best: GlmModel::constant(mean),
            best_mse: crate::stats::mse(&vec![mean; y.len()], y),
            generation: 0,
            history: Vec::new(),
        };
        engine.fit()?;
        Ok(engine)
    }

    /// Fits the path over the pool and keeps the selected model if it improves.
    fn fit(&mut self) -> Result<()> {
        let design = self.pool.design(&self.y)?;
        let path = elastic_net_path(&design, &self.config.path_config())?;
        let sel = select_on_path(&path, &design)?;
        self.pool.set_weights(&sel.coefficients, design.stds());
        if sel.mse < self.best_mse {
            self.best_mse = sel.mse;
            self.best = GlmModel::new(
                sel.intercept,
                sel.coefficients
                    .iter()
                    .zip(&self.pool.features)
                    .filter(|(c, _)| **c != 0.0)
                    .map(|(c, f)| (*c, f.tree.clone()))
                    .collect(),
            );
        }
        self.history.push(self.best_mse);
        Ok(())
    }

    /// Composes new features, then refits.
    pub fn step(&mut self) -> Result<()> {
        let attempts = match self.config.attempts_per_generation {
            0 => self.pool.capacity,
            a => a,
        };
        compose_features(
            &mut self.pool,
            &self.functions,
            attempts,
            self.config.max_feature_nodes,
            self.config.correlation_threshold,
            &mut self.rng,
        );
        self.generation += 1;
        self.fit()
    }

    pub fn run_until(&mut self, deadline: Instant) -> Result<()> {
        while self.generation < self.config.generations && Instant::now() < deadline {
            self.step()?;
        }
        Ok(())
    }

    pub fn pool(&self) -> &FeaturePool {
        &self.pool
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    /// Best training MSE after the initial fit and after each generation.
    pub fn history(&self) -> &[f64] {
        &self.history
    }

    pub fn best(&self) -> &GlmModel {
        &self.best
    }

    pub fn best_mse(&self) -> f64 {
        self.best_mse
    }
}

/// Runs on the training part of `train` and returns the best model found.
pub fn efs_run(train: &Dataset, functions: &FunctionSet, config: &EfsConfig) -> Result<GlmModel> {
    if train.n_train() == 0 {
        return Err(Error::Argument("empty training set".into()));
    }
    let deadline = Instant::now() + Duration::from_secs_f64(config.timeout_seconds);
    let mut engine = EfsEngine::new(&train.x_train, &train.y_train, functions.clone(), config.clone())?;
    engine.run_until(deadline)?;
    Ok(engine.best.clone())
}
