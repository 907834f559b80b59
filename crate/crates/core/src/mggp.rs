//! Multi-gene genetic programming.
//!
//! Individuals are lists of expression trees (genes). Each gene's output column is a
//! basis function; the genes are combined by ordinary least squares and the training
//! RMSE of that fit is the individual's fitness. Selection is a tournament with
//! lexicographic parsimony pressure on expressional complexity.

use std::cmp::Ordering;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::expr::{evaluate, expressional_complexity, ExprTree, FunctionSet, GlmModel, Op};
use crate::linreg::{ols_fit, DesignMatrix};

/// Gene columns with larger magnitudes are left out of the least-squares fit.
const USABLE_LIMIT: f64 = 1e100;
/// Fitness values closer than this are considered tied in tournaments.
const FITNESS_TIE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MggpConfig {
    pub population_size: usize,
    /// Includes the initial population.
    pub generations: usize,
    pub tournament_size: usize,
    pub elite_fraction: f64,
    /// A single leaf has depth 1.
    pub max_depth: usize,
    pub max_genes: usize,
    pub p_crossover: f64,
    pub p_mutation: f64,
    pub p_reproduction: f64,
    /// Probability that a crossover event exchanges whole genes.
    pub p_high_level: f64,
    pub erc_min: f64,
    pub erc_max: f64,
    /// Probability that a generated leaf is a constant rather than a variable.
    pub p_constant: f64,
    pub timeout_seconds: f64,
    pub seed: u64,
}

impl Default for MggpConfig {
    fn default() -> Self {
        MggpConfig {
            population_size: 100,
            generations: 150,
            tournament_size: 10,
            elite_fraction: 0.15,
            max_depth: 4,
            max_genes: 4,
            p_crossover: 0.84,
            p_mutation: 0.14,
            p_reproduction: 0.02,
            p_high_level: 0.2,
            erc_min: -10.0,
            erc_max: 10.0,
            p_constant: 0.1,
            timeout_seconds: 600.0,
            seed: 0,
        }
    }
}

impl MggpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("mggp: {m}")));
        if self.population_size < 1 || self.generations < 1 || self.max_depth < 1 || self.max_genes < 1 {
            return bad("population, generations, depth and gene limits must be positive");
        }
        if self.tournament_size < 1 || self.tournament_size > self.population_size {
            return bad("tournament size must lie in 1..=population size");
        }
        let probs = [self.p_crossover, self.p_mutation, self.p_reproduction];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("event probabilities must be in [0, 1] and sum to 1");
        }
        if !(0.0..=1.0).contains(&self.p_high_level) || !(0.0..=1.0).contains(&self.p_constant) {
            return bad("probabilities must be in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.elite_fraction) {
            return bad("elite fraction must be in [0, 1)");
        }
        if !(self.erc_min < self.erc_max) {
            return bad("ERC range must be non-empty");
        }
        if !(self.timeout_seconds > 0.0) {
            return bad("timeout must be positive");
        }
        Ok(())
    }

    pub fn elite_count(&self) -> usize {
        ((self.elite_fraction * self.population_size as f64).ceil() as usize).min(self.population_size)
    }
}

/// Ingredients for random tree generation.
#[derive(Clone, Debug)]
pub struct Primitives<'a> {
    pub functions: &'a FunctionSet,
    pub n_vars: usize,
    pub erc_min: f64,
    pub erc_max: f64,
    pub p_constant: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMethod {
    Full,
    Grow,
}

impl Primitives<'_> {
    pub fn leaf(&self, rng: &mut impl Rng) -> ExprTree {
        if self.n_vars == 0 || rng.random::<f64>() < self.p_constant {
            ExprTree::constant(rng.random_range(self.erc_min..=self.erc_max))
        } else {
            ExprTree::var(rng.random_range(0..self.n_vars))
        }
    }

    fn node(&self, op: Op, depth: usize, method: InitMethod, rng: &mut impl Rng) -> ExprTree {
        let children = (0..op.arity()).map(|_| self.tree(depth - 1, method, rng)).collect();
        ExprTree::apply(op, children)
    }

    /// A random tree of depth at most `depth` (exactly `depth` for `Full`).
    pub fn tree(&self, depth: usize, method: InitMethod, rng: &mut impl Rng) -> ExprTree {
        let ops = &self.functions.ops;
        if depth <= 1 || ops.is_empty() {
            return self.leaf(rng);
        }
        match method {
            InitMethod::Full => {
                let op = ops[rng.random_range(0..ops.len())];
                self.node(op, depth, method, rng)
            }
            InitMethod::Grow => {
                // uniform choice among operators and terminal kinds (each variable, ERC)
                let terminals = self.n_vars + 1;
                let pick = rng.random_range(0..ops.len() + terminals);
                if pick < ops.len() {
                    self.node(ops[pick], depth, method, rng)
                } else {
                    self.leaf(rng)
                }
            }
        }
    }

    /// Ramped half-and-half: a depth drawn uniformly from `1..=depth_max` and a fair
    /// choice between the full and grow methods.
    pub fn ramped_with_method(&self, depth_max: usize, rng: &mut impl Rng) -> (ExprTree, InitMethod) {
        let depth = rng.random_range(1..=depth_max.max(1));
        let method = if rng.random::<bool>() { InitMethod::Full } else { InitMethod::Grow };
        (self.tree(depth, method, rng), method)
    }
}

pub fn ramped_half_and_half(depth_max: usize, primitives: &Primitives, rng: &mut impl Rng) -> ExprTree {
    primitives.ramped_with_method(depth_max, rng).0
}

#[derive(Clone, Debug)]
pub struct Gene {
    pub tree: ExprTree,
    column: Option<Arc<Vec<f64>>>,
}

impl Gene {
    pub fn new(tree: ExprTree) -> Self {
        Gene { tree, column: None }
    }
}

#[derive(Clone, Debug)]
pub struct Individual {
    pub genes: Vec<Gene>,
    /// Training RMSE of the least-squares combination of the genes.
    pub fitness: f64,
    pub complexity: usize,
    pub intercept: f64,
    /// One coefficient per gene; genes left out of the fit have 0.
    pub coefficients: Vec<f64>,
}

impl Individual {
    pub fn from_trees(trees: Vec<ExprTree>) -> Self {
        Individual {
            genes: trees.into_iter().map(Gene::new).collect(),
            fitness: f64::INFINITY,
            complexity: 0,
            intercept: 0.0,
            coefficients: Vec::new(),
        }
    }

    pub fn trees(&self) -> impl Iterator<Item = &ExprTree> {
        self.genes.iter().map(|g| &g.tree)
    }

    pub fn max_depth(&self) -> usize {
        self.trees().map(ExprTree::depth).max().unwrap_or(0)
    }

    /// Least-squares model over the genes.
    pub fn to_model(&self) -> GlmModel {
        let bases = self
            .genes
            .iter()
            .zip(&self.coefficients)
            .filter(|(_, c)| **c != 0.0)
            .map(|(g, c)| (*c, g.tree.clone()))
            .collect();
        GlmModel::new(self.intercept, bases)
    }
}

fn usable(column: &[f64]) -> bool {
    let first = column[0];
    column.iter().all(|v| v.abs() <= USABLE_LIMIT) && column.iter().any(|&v| v != first)
}

/// `Less` when `a` is the better individual (lower RMSE, then lower complexity).
fn lexicographic(a: &Individual, b: &Individual) -> Ordering {
    if (a.fitness - b.fitness).abs() < FITNESS_TIE || a.fitness == b.fitness {
        a.complexity.cmp(&b.complexity)
    } else {
        a.fitness.total_cmp(&b.fitness)
    }
}

/// Tournament of `k` distinct individuals; ties in fitness go to lower complexity,
/// remaining ties are broken uniformly at random.
pub fn tournament_select<'p>(population: &'p [Individual], k: usize, rng: &mut impl Rng) -> &'p Individual {
    let k = k.clamp(1, population.len());
    let mut best: Vec<usize> = Vec::new();
    for i in index::sample(rng, population.len(), k).into_iter() {
        match best.first() {
            None => best.push(i),
            Some(&b) => match lexicographic(&population[i], &population[b]) {
                Ordering::Less => {
                    best.clear();
                    best.push(i);
                }
                Ordering::Equal => best.push(i),
                Ordering::Greater => {}
            },
        }
    }
    let pick = if best.len() == 1 { 0 } else { rng.random_range(0..best.len()) };
    &population[best[pick]]
}

fn strip(ind: &Individual) -> Individual {
    Individual {
        genes: ind.genes.clone(),
        fitness: f64::INFINITY,
        complexity: 0,
        intercept: 0.0,
        coefficients: Vec::new(),
    }
}

/// Swaps random subtrees between one random gene of each parent. A child whose gene
/// exceeds `max_depth` is replaced by a copy of its parent.
pub fn subtree_crossover(
    a: &Individual,
    b: &Individual,
    max_depth: usize,
    rng: &mut impl Rng,
) -> (Individual, Individual) {
    let (mut ca, mut cb) = (strip(a), strip(b));
    let ga = rng.random_range(0..a.genes.len());
    let gb = rng.random_range(0..b.genes.len());
    let ta = &a.genes[ga].tree;
    let tb = &b.genes[gb].tree;
    let na = rng.random_range(0..ta.size());
    let nb = rng.random_range(0..tb.size());
    let sa = ta.subtree(na).expect("index in range").clone();
    let sb = tb.subtree(nb).expect("index in range").clone();
    let mut new_a = ta.clone();
    *new_a.subtree_mut(na).expect("index in range") = sb;
    let mut new_b = tb.clone();
    *new_b.subtree_mut(nb).expect("index in range") = sa;
    if new_a.depth() <= max_depth {
        ca.genes[ga] = Gene::new(new_a);
    }
    if new_b.depth() <= max_depth {
        cb.genes[gb] = Gene::new(new_b);
    }
    (ca, cb)
}

fn truncate_genes(genes: &mut Vec<Gene>, max_genes: usize, rng: &mut impl Rng) {
    while genes.len() > max_genes {
        let i = rng.random_range(0..genes.len());
        genes.remove(i);
    }
}

/// Exchanges a random contiguous run of genes between the parents, then drops random
/// genes from any child holding more than `max_genes`.
pub fn high_level_crossover(
    a: &Individual,
    b: &Individual,
    max_genes: usize,
    rng: &mut impl Rng,
) -> (Individual, Individual) {
    let range = |len: usize, rng: &mut dyn rand::RngCore| {
        let i = rng.random_range(0..len);
        let j = rng.random_range(i..len);
        (i, j + 1)
    };
    let (i1, j1) = range(a.genes.len(), rng);
    let (i2, j2) = range(b.genes.len(), rng);
    let splice = |base: &[Gene], lo: usize, hi: usize, donor: &[Gene]| -> Vec<Gene> {
        base[..lo].iter().chain(donor).chain(&base[hi..]).cloned().collect()
    };
    let mut genes_a = splice(&a.genes, i1, j1, &b.genes[i2..j2]);
    let mut genes_b = splice(&b.genes, i2, j2, &a.genes[i1..j1]);
    truncate_genes(&mut genes_a, max_genes, rng);
    truncate_genes(&mut genes_b, max_genes, rng);
    let mut ca = strip(a);
    ca.genes = genes_a;
    let mut cb = strip(b);
    cb.genes = genes_b;
    (ca, cb)
}

/// Replaces a random subtree of a random gene by a freshly grown tree that keeps the
/// gene within `max_depth`.
pub fn subtree_mutation(a: &Individual, primitives: &Primitives, max_depth: usize, rng: &mut impl Rng) -> Individual {
    let mut child = strip(a);
    let g = rng.random_range(0..a.genes.len());
    let mut tree = a.genes[g].tree.clone();
    let node = rng.random_range(0..tree.size());
    let room = max_depth.saturating_sub(tree.depth_of(node).expect("index in range") - 1).max(1);
    let depth = rng.random_range(1..=room);
    let method = if rng.random::<bool>() { InitMethod::Full } else { InitMethod::Grow };
    *tree.subtree_mut(node).expect("index in range") = primitives.tree(depth, method, rng);
    if tree.depth() <= max_depth {
        child.genes[g] = Gene::new(tree);
    }
    child
}

/// State of one evolutionary run.
pub struct MggpEngine {
    x: DMatrix<f64>,
    y: Vec<f64>,
    functions: FunctionSet,
    config: MggpConfig,
    rng: ChaCha8Rng,
    population: Vec<Individual>,
    generation: usize,
    history: Vec<f64>,
}

impl MggpEngine {
    /// Creates and evaluates the initial population.
    pub fn new(x: DMatrix<f64>, y: Vec<f64>, functions: FunctionSet, config: MggpConfig) -> Result<Self> {
        config.validate()?;
        if y.is_empty() || x.nrows() != y.len() {
            return Err(Error::Argument("MGGP needs a non-empty training set".into()));
        }
        if let Some(op) = functions.ops.iter().find(|op| op.has_param()) {
            return Err(Error::Argument(format!("operator `{op}` is not available to MGGP")));
        }
        let mut engine = MggpEngine {
            x,
            y,
            functions,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            population: Vec::new(),
            generation: 0,
            history: Vec::new(),
        };
        let mut population = Vec::with_capacity(engine.config.population_size);
        for _ in 0..engine.config.population_size {
            let n_genes = engine.rng.random_range(1..=engine.config.max_genes);
            let prim = engine.primitives();
            let mut rng = engine.rng.clone();
            let trees = (0..n_genes).map(|_| ramped_half_and_half(engine.config.max_depth, &prim, &mut rng)).collect();
            engine.rng = rng;
            population.push(Individual::from_trees(trees));
        }
        for ind in &mut population {
            engine.evaluate(ind);
        }
        engine.population = population;
        engine.generation = 1;
        engine.history.push(engine.best().fitness);
        Ok(engine)
    }

    fn primitives(&self) -> Primitives<'_> {
        Primitives {
            functions: &self.functions,
            n_vars: self.x.ncols(),
            erc_min: self.config.erc_min,
            erc_max: self.config.erc_max,
            p_constant: self.config.p_constant,
        }
    }

    /// Fills missing gene columns and refits the least-squares combination.
    pub fn evaluate(&self, ind: &mut Individual) {
        for gene in &mut ind.genes {
            if gene.column.is_none() {
                let col = evaluate(&gene.tree, &self.x).expect("generated trees are valid");
                gene.column = Some(Arc::new(col));
            }
        }
        ind.complexity = ind.trees().map(expressional_complexity).sum();
        let cols: Vec<&Arc<Vec<f64>>> = ind.genes.iter().map(|g| g.column.as_ref().expect("filled")).collect();
        let keep: Vec<usize> = (0..cols.len()).filter(|&i| usable(cols[i])).collect();
        let columns: Vec<Vec<f64>> = keep.iter().map(|&i| cols[i].to_vec()).collect();
        ind.coefficients = vec![0.0; cols.len()];
        ind.fitness = f64::INFINITY;
        let Ok(design) = DesignMatrix::from_columns(&columns, self.y.clone()) else {
            return;
        };
        match ols_fit(&design) {
            Ok(fit) => {
                let pred = design.predict(fit.intercept, &fit.coefficients);
                let mse = crate::stats::mse(&pred, &self.y);
                if mse.is_finite() {
                    ind.fitness = mse.sqrt();
                    ind.intercept = fit.intercept;
                    for (&i, c) in keep.iter().zip(fit.coefficients) {
                        ind.coefficients[i] = c;
                    }
                }
            }
            Err(_) => {}
        }
    }

    pub fn population(&self) -> &[Individual] {
        &self.population
    }

    pub fn config(&self) -> &MggpConfig {
        &self.config
    }

    /// Generations completed so far, counting the initial population.
    pub fn generation(&self) -> usize {
        self.generation
    }

    /// Best training RMSE after each generation.
    pub fn history(&self) -> &[f64] {
        &self.history
    }

    fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.population.len()).collect();
        order.sort_by(|&i, &j| {
            let (a, b) = (&self.population[i], &self.population[j]);
            a.fitness.total_cmp(&b.fitness).then(a.complexity.cmp(&b.complexity)).then(i.cmp(&j))
        });
        order
    }

    pub fn best(&self) -> &Individual {
        &self.population[self.ranking()[0]]
    }

    /// Breeds the next generation.
    pub fn step(&mut self) {
        let cfg = self.config.clone();
        let ranking = self.ranking();
        let mut next: Vec<Individual> =
            ranking[..cfg.elite_count()].iter().map(|&i| self.population[i].clone()).collect();
        let mut rng = self.rng.clone();
        let mut fresh: Vec<Individual> = Vec::new();
        {
            let prim = self.primitives();
            let pop = &self.population;
            while next.len() + fresh.len() < cfg.population_size {
                let r: f64 = rng.random();
                if r < cfg.p_crossover {
                    let a = tournament_select(pop, cfg.tournament_size, &mut rng);
                    let b = tournament_select(pop, cfg.tournament_size, &mut rng);
                    let (ca, cb) = if rng.random::<f64>() < cfg.p_high_level {
                        high_level_crossover(a, b, cfg.max_genes, &mut rng)
                    } else {
                        subtree_crossover(a, b, cfg.max_depth, &mut rng)
                    };
                    fresh.push(ca);
                    if next.len() + fresh.len() < cfg.population_size {
                        fresh.push(cb);
                    }
                } else if r < cfg.p_crossover + cfg.p_mutation {
                    let a = tournament_select(pop, cfg.tournament_size, &mut rng);
                    fresh.push(subtree_mutation(a, &prim, cfg.max_depth, &mut rng));
                } else {
                    fresh.push(tournament_select(pop, cfg.tournament_size, &mut rng).clone());
                }
            }
        }
        self.rng = rng;
        for ind in &mut fresh {
            if ind.fitness == f64::INFINITY || ind.coefficients.len() != ind.genes.len() {
                self.evaluate(ind);
            }
        }
        next.extend(fresh);
        self.population = next;
        self.generation += 1;
        self.history.push(self.best().fitness);
    }

    /// Runs until the generation limit or until `deadline` passes (checked between
    /// generations).
    pub fn run_until(&mut self, deadline: Instant) {
        while self.generation < self.config.generations && Instant::now() < deadline {
            self.step();
        }
    }

    pub fn best_model(&self) -> GlmModel {
        self.best().to_model()
    }
}

/// Evolves a model on the training part of `train`.
pub fn mggp_run(train: &Dataset, functions: &FunctionSet, config: &MggpConfig) -> Result<GlmModel> {
    if train.n_train() == 0 {
        return Err(Error::Argument("empty training set".into()));
    }
    let deadline = Instant::now() + Duration::from_secs_f64(config.timeout_seconds);
    let mut engine = MggpEngine::new(train.x_train.clone(), train.y_train.clone(), functions.clone(), config.clone())?;
    engine.run_until(deadline);
    Ok(engine.best_model())
}
