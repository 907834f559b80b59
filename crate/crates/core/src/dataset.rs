//! Benchmark generators, sampling, CSV ingestion and train/test splitting.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where a dataset came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Benchmark { id: String, seed: u64 },
    File { path: String, split_seed: u64, train_fraction: f64 },
    Manual,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub names: Vec<String>,
    pub x_train: DMatrix<f64>,
    pub y_train: Vec<f64>,
    pub x_test: DMatrix<f64>,
    pub y_test: Vec<f64>,
    pub provenance: Provenance,
}

impl Dataset {
    /// Builds a dataset after checking shapes and finiteness.
    pub fn new(
        names: Vec<String>,
        x_train: DMatrix<f64>,
        y_train: Vec<f64>,
        x_test: DMatrix<f64>,
        y_test: Vec<f64>,
        provenance: Provenance,
    ) -> Result<Self> {
        let d = names.len();
        if x_train.ncols() != d || x_test.ncols() != d {
            return Err(Error::Data(format!(
                "{d} variable names but {} train / {} test columns",
                x_train.ncols(),
                x_test.ncols()
            )));
        }
        if x_train.nrows() != y_train.len() || x_test.nrows() != y_test.len() {
            return Err(Error::Data("matrix rows and target length differ".into()));
        }
        let finite = |m: &DMatrix<f64>, y: &[f64]| m.iter().all(|v| v.is_finite()) && y.iter().all(|v| v.is_finite());
        if !finite(&x_train, &y_train) || !finite(&x_test, &y_test) {
            return Err(Error::Data("dataset contains non-finite values".into()));
        }
        Ok(Dataset { names, x_train, y_train, x_test, y_test, provenance })
    }

    /// Same data for training and testing.
    pub fn train_only(names: Vec<String>, x: DMatrix<f64>, y: Vec<f64>) -> Result<Self> {
        Dataset::new(names, x.clone(), y.clone(), x, y, Provenance::Manual)
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn n_train(&self) -> usize {
        self.y_train.len()
    }

    pub fn n_test(&self) -> usize {
        self.y_test.len()
    }
}

/// Sampling of one variable: `U[a, b, c]` random points or an `E[a, b, c]` grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Sampling {
    Uniform { a: f64, b: f64, count: usize },
    Grid { a: f64, b: f64, spacing: f64 },
}

/// `count` rows of i.i.d. uniform values on `[a, b]` in `dims` columns, filled row by row.
pub fn sample_uniform(a: f64, b: f64, count: usize, dims: usize, rng: &mut impl Rng) -> Result<DMatrix<f64>> {
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(Error::Argument(format!("invalid uniform bounds [{a}, {b}]")));
    }
    if count == 0 {
        return Err(Error::Argument("uniform sample count must be at least 1".into()));
    }
    let mut m = DMatrix::zeros(count, dims);
    for i in 0..count {
        for j in 0..dims {
            m[(i, j)] = rng.random_range(a..=b);
        }
    }
    Ok(m)
}

/// Points `a, a + s, …` not exceeding `b` (with a `1e-9·s` tolerance).
pub fn grid_axis(a: f64, b: f64, spacing: f64) -> Result<Vec<f64>> {
    if !(spacing > 0.0) || !spacing.is_finite() {
        return Err(Error::Argument(format!("invalid grid spacing {spacing}")));
    }
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(Error::Argument(format!("invalid grid bounds [{a}, {b}]")));
    }
    let count = ((b - a) / spacing + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| a + i as f64 * spacing).collect())
}

/// Full Cartesian grid over several axes; the last axis varies fastest.
pub fn cartesian(axes: &[Vec<f64>]) -> DMatrix<f64> {
    let rows: usize = axes.iter().map(Vec::len).product();
    let d = axes.len();
    let mut m = DMatrix::zeros(rows, d);
    for r in 0..rows {
        let mut rem = r;
        for j in (0..d).rev() {
            let len = axes[j].len();
            m[(r, j)] = axes[j][rem % len];
            rem /= len;
        }
    }
    m
}

/// `d`-dimensional grid with the same axis for every variable.
pub fn sample_grid(a: f64, b: f64, spacing: f64, dims: usize) -> Result<DMatrix<f64>> {
    let axis = grid_axis(a, b, spacing)?;
    Ok(cartesian(&vec![axis; dims]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Benchmark {
    Koza1,
    Korns11,
    S1,
    S2,
    Ub,
}

impl Benchmark {
    pub const ALL: [Benchmark; 5] = [Benchmark::Koza1, Benchmark::Korns11, Benchmark::S1, Benchmark::S2, Benchmark::Ub];

    pub fn id(self) -> &'static str {
        match self {
            Benchmark::Koza1 => "koza1",
            Benchmark::Korns11 => "korns11",
            Benchmark::S1 => "s1",
            Benchmark::S2 => "s2",
            Benchmark::Ub => "ub",
        }
    }

    pub fn from_id(id: &str) -> Option<Benchmark> {
        Benchmark::ALL.into_iter().find(|b| b.id() == id.to_ascii_lowercase())
    }

    pub fn spec(self) -> BenchmarkSpec {
        let u = |a, b, count| Sampling::Uniform { a, b, count };
        let e = |a, b, spacing| Sampling::Grid { a, b, spacing };
        let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
        match self {
            Benchmark::Koza1 => BenchmarkSpec {
                benchmark: self,
                names: names(&["x"]),
                train: vec![u(-1.0, 1.0, 20)],
                test: vec![u(-1.0, 1.0, 100)],
            },
            Benchmark::Korns11 => BenchmarkSpec {
                benchmark: self,
                names: names(&["x", "y", "z", "v", "w"]),
                train: vec![u(-50.0, 10.0, 10000); 5],
                test: vec![u(-50.0, 10.0, 10000); 5],
            },
            Benchmark::S1 => BenchmarkSpec {
                benchmark: self,
                names: names(&["x"]),
                train: vec![e(-0.5, 10.5, 0.1)],
                test: vec![e(-0.5, 10.5, 0.05)],
            },
            Benchmark::S2 => BenchmarkSpec {
                benchmark: self,
                names: names(&["x", "y"]),
                train: vec![e(-0.5, 10.5, 0.1), e(-0.5, 10.5, 2.0)],
                test: vec![e(-0.5, 10.5, 0.05), e(-0.5, 10.5, 0.5)],
            },
            Benchmark::Ub => BenchmarkSpec {
                benchmark: self,
                names: names(&["x1", "x2", "x3", "x4", "x5"]),
                train: vec![u(-0.25, 6.35, 1024); 5],
                test: vec![u(-0.25, 6.35, 5000); 5],
            },
        }
    }

    /// Grid-sampled benchmarks are identical for every seed.
    pub fn is_deterministic(self) -> bool {
        matches!(self, Benchmark::S1 | Benchmark::S2)
    }

    /// The benchmark's target function at one point.
    pub fn target(self, x: &[f64]) -> f64 {
        match self {
            Benchmark::Koza1 => {
                let v = x[0];
                v.powi(4) + v.powi(3) + v.powi(2) + v
            }
            Benchmark::Korns11 => 6.87 + 11.0 * (7.23 * x[0].powi(3)).cos(),
            Benchmark::S1 => salustowicz(x[0]),
            Benchmark::S2 => (x[1] - 5.0) * salustowicz(x[0]),
            Benchmark::Ub => 10.0 / (5.0 + x.iter().map(|v| (v - 3.0).powi(2)).sum::<f64>()),
        }
    }
}

fn salustowicz(x: f64) -> f64 {
    let (s, c) = x.sin_cos();
    (-x).exp() * x.powi(3) * s * c * (s * s * c - 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub benchmark: Benchmark,
    pub names: Vec<String>,
    /// One descriptor per variable.
    pub train: Vec<Sampling>,
    pub test: Vec<Sampling>,
}

/// Draws the inputs for one phase. Uniform variables must share a count and are
/// drawn jointly row by row; grid variables form a Cartesian product.
fn sample_phase(sampling: &[Sampling], rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
    if sampling.iter().all(|s| matches!(s, Sampling::Grid { .. })) {
        let axes = sampling
            .iter()
            .map(|s| match *s {
                Sampling::Grid { a, b, spacing } => grid_axis(a, b, spacing),
                Sampling::Uniform { .. } => unreachable!(),
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok(cartesian(&axes));
    }
    let mut count = None;
    for s in sampling {
        match *s {
            Sampling::Uniform { count: c, .. } if count.is_none() || count == Some(c) => count = Some(c),
            _ => return Err(Error::Argument("mixed or unequal sampling descriptors".into())),
        }
    }
    let n = count.unwrap_or(0);
    let mut m = DMatrix::zeros(n, sampling.len());
    for i in 0..n {
        for (j, s) in sampling.iter().enumerate() {
            if let Sampling::Uniform { a, b, .. } = *s {
                if !(a < b) {
                    return Err(Error::Argument(format!("invalid uniform bounds [{a}, {b}]")));
                }
                m[(i, j)] = rng.random_range(a..=b);
            }
        }
    }
    Ok(m)
}

fn targets(benchmark: Benchmark, x: &DMatrix<f64>) -> Vec<f64> {
    let mut row = vec![0.0; x.ncols()];
    (0..x.nrows())
        .map(|i| {
            for (j, r) in row.iter_mut().enumerate() {
                *r = x[(i, j)];
            }
            benchmark.target(&row)
        })
        .collect()
}

/// Instantiates a benchmark. The training set is drawn first, then the test set,
/// from one generator seeded with `seed`.
pub fn make_benchmark(spec: &BenchmarkSpec, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x_train = sample_phase(&spec.train, &mut rng)?;
    let x_test = sample_phase(&spec.test, &mut rng)?;
    let y_train = targets(spec.benchmark, &x_train);
    let y_test = targets(spec.benchmark, &x_test);
    let seed = if spec.benchmark.is_deterministic() { 0 } else { seed };
    Dataset::new(
        spec.names.clone(),
        x_train,
        y_train,
        x_test,
        y_test,
        Provenance::Benchmark { id: spec.benchmark.id().to_string(), seed },
    )
}

/// Which column of a CSV holds the target.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TargetColumn {
    Index(usize),
    Name(String),
    Last,
}

/// A whole CSV table split into inputs and target.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub names: Vec<String>,
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
}

/// Reads a rectangular numeric CSV file.
pub fn load_csv(path: &Path, target: &TargetColumn, header: bool) -> Result<Table> {
    let text = fs::read_to_string(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    parse_csv(&text, target, header)
}

pub fn parse_csv(text: &str, target: &TargetColumn, header: bool) -> Result<Table> {
    let mut reader =
        csv::ReaderBuilder::new().has_headers(header).flexible(false).trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers: Option<Vec<String>> = if header {
        Some(reader.headers().map_err(|e| Error::Data(e.to_string()))?.iter().map(str::to_string).collect())
    } else {
        None
    };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Data(format!("malformed CSV: {e}")))?;
        let row = record
            .iter()
            .enumerate()
            .map(|(j, cell)| {
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Data(format!("non-numeric cell `{cell}` at row {}, column {}", i + 1, j + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let width = headers
        .as_ref()
        .map(Vec::len)
        .or_else(|| rows.first().map(Vec::len))
        .ok_or_else(|| Error::Data("empty CSV".into()))?;
    if rows.is_empty() {
        return Err(Error::Data("CSV has no data rows".into()));
    }
    if width < 2 {
        return Err(Error::Data("CSV needs at least one input and one target column".into()));
    }
    let t = match target {
        TargetColumn::Last => width - 1,
        TargetColumn::Index(i) if *i < width => *i,
        TargetColumn::Index(i) => return Err(Error::Data(format!("target column {i} out of range ({width} columns)"))),
        TargetColumn::Name(name) => headers
            .as_ref()
            .and_then(|h| h.iter().position(|c| c == name))
            .ok_or_else(|| Error::Data(format!("missing target column `{name}`")))?,
    };
    let names: Vec<String> = (0..width)
        .filter(|&j| j != t)
        .map(|j| match &headers {
            Some(h) => h[j].clone(),
            None => format!("x{}", j),
        })
        .collect();
    let inputs: Vec<usize> = (0..width).filter(|&j| j != t).collect();
    let x = DMatrix::from_fn(rows.len(), inputs.len(), |i, j| rows[i][inputs[j]]);
    let y = rows.iter().map(|r| r[t]).collect();
    Ok(Table { names, x, y })
}

fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

/// Seeded shuffle; the first `⌈fraction·n⌉` shuffled rows become the training set.
pub fn split(table: &Table, train_fraction: f64, seed: u64, source: &str) -> Result<Dataset> {
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(Error::Argument(format!("train fraction {train_fraction} not in (0, 1]")));
    }
    let n = table.y.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((train_fraction * n as f64) - 1e-9).ceil().max(1.0) as usize;
    let n_train = n_train.min(n);
    let (tr, te) = order.split_at(n_train);
    Dataset::new(
        table.names.clone(),
        select_rows(&table.x, tr),
        tr.iter().map(|&i| table.y[i]).collect(),
        select_rows(&table.x, te),
        te.iter().map(|&i| table.y[i]).collect(),
        Provenance::File { path: source.to_string(), split_seed: seed, train_fraction },
    )
}

/// CSV text with a header of the variable names followed by `target`.
pub fn to_csv(names: &[String], x: &DMatrix<f64>, y: &[f64]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = names.iter().map(String::as_str).collect();
    header.push("target");
    w.write_record(&header).map_err(|e| Error::Data(e.to_string()))?;
    for i in 0..x.nrows() {
        let mut rec: Vec<String> = (0..x.ncols()).map(|j| x[(i, j)].to_string()).collect();
        rec.push(y[i].to_string());
        w.write_record(&rec).map_err(|e| Error::Data(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes `<stem>_train.csv`, `<stem>_test.csv` and `<stem>.json` (provenance) into `dir`.
pub fn write_dataset(data: &Dataset, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let train = dir.join(format!("{stem}_train.csv"));
    let test = dir.join(format!("{stem}_test.csv"));
    let meta = dir.join(format!("{stem}.json"));
    fs::write(&train, to_csv(&data.names, &data.x_train, &data.y_train)?)?;
    fs::write(&test, to_csv(&data.names, &data.x_test, &data.y_test)?)?;
    let sidecar = serde_json::json!({
        "provenance": data.provenance,
        "names": data.names,
        "n_train": data.n_train(),
        "n_test": data.n_test(),
    });
    fs::write(&meta, serde_json::to_string_pretty(&sidecar)?)?;
    Ok(vec![train, test, meta])
}

/// A real-world dataset that must be fetched separately.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub name: String,
    pub source: String,
    pub features: usize,
    pub rows: usize,
    /// Zero-based column of the target after conversion to CSV.
    pub target_column: usize,
    pub sha256: Option<String>,
}

pub fn real_world_manifest() -> Vec<ManifestEntry> {
    let uci = "https://archive.ics.uci.edu/dataset";
    vec![
        ManifestEntry {
            id: "enc".into(),
            name: "Energy efficiency (cooling load)".into(),
            source: format!("{uci}/242/energy+efficiency"),
            features: 8,
            rows: 768,
            target_column: 9,
            sha256: None,
        },
        ManifestEntry {
            id: "enh".into(),
            name: "Energy efficiency (heating load)".into(),
            source: format!("{uci}/242/energy+efficiency"),
            features: 8,
            rows: 768,
            target_column: 8,
            sha256: None,
        },
        ManifestEntry {
            id: "ccs".into(),
            name: "Concrete compressive strength".into(),
            source: format!("{uci}/165/concrete+compressive+strength"),
            features: 8,
            rows: 1030,
            target_column: 8,
            sha256: None,
        },
        ManifestEntry {
            id: "asn".into(),
            name: "Airfoil self-noise".into(),
            source: format!("{uci}/291/airfoil+self+noise"),
            features: 5,
            rows: 1503,
            target_column: 5,
            sha256: None,
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_shape_and_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = sample_uniform(-1.0, 1.0, 20, 1, &mut rng).unwrap();
        assert_eq!((m.nrows(), m.ncols()), (20, 1));
        assert!(m.iter().all(|v| (-1.0..=1.0).contains(v)));
        let eps = 1e-6;
        let m = sample_uniform(0.0, eps, 5, 1, &mut rng).unwrap();
        assert!(m.iter().all(|v| (0.0..=eps).contains(v)));
        assert!(sample_uniform(1.0, 1.0, 5, 1, &mut rng).is_err());
    }

    #[test]
    fn uniform_is_seed_reproducible() {
        let a = sample_uniform(-1.0, 1.0, 3, 2, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = sample_uniform(-1.0, 1.0, 3, 2, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a, b);
        let golden = a.row(0).iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        let again = sample_uniform(-1.0, 1.0, 1, 2, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(golden, again.row(0).iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn grid_counts() {
        let count_loop = |a: f64, b: f64, s: f64| {
            let mut n = 0;
            while a + n as f64 * s <= b + 1e-9 * s {
                n += 1;
            }
            n
        };
        assert_eq!(sample_grid(-0.5, 10.5, 0.1, 1).unwrap().nrows(), 111);
        assert_eq!(count_loop(-0.5, 10.5, 0.1), 111);
        assert_eq!(sample_grid(-0.5, 10.5, 0.05, 1).unwrap().nrows(), count_loop(-0.5, 10.5, 0.05));
        let g = sample_grid(0.0, 1.0, 1.0, 2).unwrap();
        assert_eq!(g.nrows(), 4);
        let pts: Vec<(f64, f64)> = (0..4).map(|i| (g[(i, 0)], g[(i, 1)])).collect();
        for p in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
            assert!(pts.contains(&p));
        }
        assert!(sample_grid(0.0, 1.0, 0.0, 1).is_err());
    }

    #[test]
    fn s2_grid_sizes() {
        let d = make_benchmark(&Benchmark::S2.spec(), 5).unwrap();
        assert_eq!(d.n_train(), 111 * 6);
        assert_eq!(d.n_test(), 221 * 23);
        assert_eq!(d, make_benchmark(&Benchmark::S2.spec(), 99).unwrap());
    }

    #[test]
    fn benchmark_formula_points() {
        assert_eq!(Benchmark::Ub.target(&[3.0; 5]), 2.0);
        assert_eq!(Benchmark::S1.target(&[0.0]), 0.0);
        assert_eq!(Benchmark::Koza1.target(&[1.0]), 4.0);
        assert!((Benchmark::Korns11.target(&[0.0, 1.0, 2.0, 3.0, 4.0]) - 17.87).abs() < 1e-12);
        let a = Benchmark::Korns11.target(&[1.3, 1.0, 2.0, 3.0, 4.0]);
        let b = Benchmark::Korns11.target(&[1.3, 4.0, 3.0, 2.0, 1.0]);
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_benchmarks_vary_with_seed() {
        let a = make_benchmark(&Benchmark::Koza1.spec(), 1).unwrap();
        let b = make_benchmark(&Benchmark::Koza1.spec(), 2).unwrap();
        assert_ne!(a.x_train, b.x_train);
        assert_eq!((a.n_train(), a.n_test()), (20, 100));
        assert_eq!(a, make_benchmark(&Benchmark::Koza1.spec(), 1).unwrap());
    }

    #[test]
    fn csv_parsing_and_errors() {
        let t = parse_csv("a,b,y\n1,2,3\n4,5,6\n", &TargetColumn::Name("y".into()), true).unwrap();
        assert_eq!(t.names, vec!["a", "b"]);
        assert_eq!(t.y, vec![3.0, 6.0]);
        assert_eq!(t.x[(1, 0)], 4.0);
        let t = parse_csv("1,2,3\n4,5,6\n", &TargetColumn::Index(0), false).unwrap();
        assert_eq!(t.y, vec![1.0, 4.0]);
        assert_eq!(t.names, vec!["x1", "x2"]);
        assert!(matches!(parse_csv("a,b\n1,2\n3\n", &TargetColumn::Last, true), Err(Error::Data(_))));
        assert!(matches!(parse_csv("a,b\n1,x\n", &TargetColumn::Last, true), Err(Error::Data(_))));
        assert!(matches!(parse_csv("a,b\n1,2\n", &TargetColumn::Name("t".into()), true), Err(Error::Data(_))));
    }

    #[test]
    fn split_sizes_and_partition() {
        let table = Table {
            names: vec!["a".into()],
            x: DMatrix::from_fn(10, 1, |i, _| i as f64),
            y: (0..10).map(f64::from).collect(),
        };
        let d = split(&table, 0.7, 3, "mem").unwrap();
        assert_eq!((d.n_train(), d.n_test()), (7, 3));
        let mut all: Vec<f64> = d.y_train.iter().chain(&d.y_test).copied().collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, table.y);
        assert_eq!(d, split(&table, 0.7, 3, "mem").unwrap());

        let big = Table { names: vec!["a".into()], x: DMatrix::zeros(1030, 1), y: vec![0.0; 1030] };
        let d = split(&big, 0.7, 0, "ccs").unwrap();
        assert_eq!((d.n_train(), d.n_test()), (721, 309));
    }

    #[test]
    fn csv_round_trip() {
        let d = make_benchmark(&Benchmark::Ub.spec(), 8).unwrap();
        let text = to_csv(&d.names, &d.x_train, &d.y_train).unwrap();
        assert!(text.starts_with("x1,x2,x3,x4,x5,target\n"));
        let t = parse_csv(&text, &TargetColumn::Name("target".into()), true).unwrap();
        assert_eq!(t.x, d.x_train);
        assert_eq!(t.y, d.y_train);
    }
}
