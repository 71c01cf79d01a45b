//! Regression datasets, their CSV form, and synthetic generators.
//!
//! CSV layout: optional `#` comment lines, one header row, then numeric rows.
//! Every column but the last is an input coordinate; the last is the target.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::compose::KernelSpec;
use crate::error::{Error, Result};
use crate::gp;
use crate::kernel::BaseKernel;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    /// Column names, inputs then target.
    pub names: Vec<String>,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        let dim = inputs.first().map(Vec::len).unwrap_or(0);
        let mut names: Vec<String> = (1..=dim).map(|d| format!("x{d}")).collect();
        names.push("y".into());
        Self::with_names(inputs, targets, names)
    }

    pub fn with_names(inputs: Vec<Vec<f64>>, targets: Vec<f64>, names: Vec<String>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Dataset("dataset has no rows".into()));
        }
        if inputs.len() != targets.len() {
            return Err(Error::Dataset(format!("{} inputs but {} targets", inputs.len(), targets.len())));
        }
        let dim = inputs[0].len();
        if dim == 0 {
            return Err(Error::Dataset("inputs have no columns".into()));
        }
        if names.len() != dim + 1 {
            return Err(Error::Dataset(format!("expected {} column names, got {}", dim + 1, names.len())));
        }
        for row in &inputs {
            if row.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: row.len() });
            }
        }
        if !inputs.iter().flatten().chain(&targets).all(|v| v.is_finite()) {
            return Err(Error::Dataset("non-finite value".into()));
        }
        Ok(Dataset { inputs, targets, names })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        Dataset::with_names(
            idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            idx.iter().map(|&i| self.targets[i]).collect(),
            self.names.clone(),
        )
    }

    /// Random split into `(train, test)` with `round(n·train_fraction)` training rows.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        let n = self.len();
        let n_train = ((n as f64) * train_fraction).round() as usize;
        if n_train == 0 || n_train >= n {
            return Err(Error::Dataset(format!("split leaves an empty side ({n_train} of {n})")));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng::stream(seed, 0));
        let (train, test) = idx.split_at(n_train);
        let (mut train, mut test) = (train.to_vec(), test.to_vec());
        train.sort_unstable();
        test.sort_unstable();
        Ok((self.subset(&train)?, self.subset(&test)?))
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
        let names: Vec<String> =
            rdr.headers().map_err(|e| Error::Dataset(e.to_string()))?.iter().map(str::to_string).collect();
        if names.len() < 2 {
            return Err(Error::Dataset("need at least one input column and a target column".into()));
        }
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| Error::Dataset(e.to_string()))?;
            let values = record
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Dataset(format!("row {}: {e}", line + 1)))?;
            if values.len() != names.len() {
                return Err(Error::Dataset(format!("row {} has {} fields", line + 1, values.len())));
            }
            let (x, y) = values.split_at(values.len() - 1);
            inputs.push(x.to_vec());
            targets.push(y[0]);
        }
        Dataset::with_names(inputs, targets, names)
    }

    pub fn from_path(path: &Path) -> Result<Dataset> {
        let file = std::fs::File::open(path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
        Dataset::read_csv(file)
    }

    pub fn write_csv<W: Write>(&self, writer: W, comments: &[String]) -> std::io::Result<()> {
        let rows: Vec<Vec<f64>> = self
            .inputs
            .iter()
            .zip(&self.targets)
            .map(|(x, y)| x.iter().copied().chain(std::iter::once(*y)).collect())
            .collect();
        write_table(writer, comments, &self.names, &rows)
    }
}

/// Write a numeric table with `# ` comment lines above the header. Floats use
/// Rust's shortest round-trip formatting.
pub fn write_table<W: Write>(
    mut writer: W,
    comments: &[String],
    header: &[String],
    rows: &[Vec<f64>],
) -> std::io::Result<()> {
    for c in comments {
        for line in c.lines() {
            writeln!(writer, "# {line}")?;
        }
    }
    writeln!(writer, "{}", header.join(","))?;
    for row in rows {
        let fields: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(writer, "{}", fields.join(","))?;
    }
    Ok(())
}

/// `n` evenly spaced 1-D inputs on `[lo, hi]`.
pub fn grid_1d(n: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    if n == 1 {
        return vec![vec![lo]];
    }
    (0..n).map(|i| vec![lo + (hi - lo) * i as f64 / (n - 1) as f64]).collect()
}

/// Pure-noise data: `y ~ N(0, σ²)` on an evenly spaced grid over `[0, 10]`.
pub fn pure_noise(n: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    let x = grid_1d(n, 0.0, 10.0);
    let mut s = rng::stream(seed, 0);
    let y = (0..n).map(|_| noise_std * rng::standard_normal(&mut s)).collect();
    Dataset::new(x, y)
}

/// Two-scale generator: a slow SE draw plus a fast SE draw plus white noise.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoScale {
    pub n: usize,
    pub lo: f64,
    pub hi: f64,
    pub long_signal: f64,
    pub long_length: f64,
    pub short_signal: f64,
    pub short_length: f64,
    pub noise_std: f64,
}

impl Default for TwoScale {
    fn default() -> Self {
        TwoScale {
            n: 100,
            lo: 0.0,
            hi: 10.0,
            long_signal: 1.0,
            long_length: 2.0,
            short_signal: 0.3,
            short_length: 0.15,
            noise_std: 0.05,
        }
    }
}

impl TwoScale {
    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        let x = grid_1d(self.n, self.lo, self.hi);
        let draw = |signal: f64, length: f64, lane: u64| -> Result<Vec<f64>> {
            if signal == 0.0 {
                return Ok(vec![0.0; x.len()]);
            }
            let spec = KernelSpec::leaf(BaseKernel::squared_exp(signal, length));
            let f = gp::sample_prior(&spec, &x, 1, seed.wrapping_add(lane.wrapping_mul(0x9E37_79B9_7F4A_7C15)))?;
            Ok(f.row(0).iter().copied().collect())
        };
        let slow = draw(self.long_signal, self.long_length, 1)?;
        let fast = draw(self.short_signal, self.short_length, 2)?;
        let mut noise = rng::stream(seed, 3);
        let y =
            slow.iter().zip(&fast).map(|(a, b)| a + b + self.noise_std * rng::standard_normal(&mut noise)).collect();
        Dataset::new(x, y)
    }
}

/// Log-uniform ranges used to randomize generator hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperRanges {
    pub signal: (f64, f64),
    pub length: (f64, f64),
    /// Range of the NuN rate α; β is drawn as a uniform fraction of α.
    pub rate: (f64, f64),
}

impl Default for HyperRanges {
    fn default() -> Self {
        HyperRanges { signal: (0.5, 2.0), length: (0.3, 2.0), rate: (0.5, 2.0) }
    }
}

fn log_uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    (rng.random_range(lo.ln()..=hi.ln())).exp()
}

/// Same structure as `spec` with every hyperparameter redrawn.
pub fn randomize_hyperparameters<R: Rng>(spec: &KernelSpec, ranges: &HyperRanges, rng: &mut R) -> Result<KernelSpec> {
    let params = spec.params();
    let mut values = Vec::with_capacity(params.len());
    let mut last_alpha = None;
    for (name, _) in &params {
        let leaf = name.rsplit('.').next().unwrap_or(name);
        let v = match leaf {
            "alpha" => {
                let a = log_uniform(rng, ranges.rate);
                last_alpha = Some(a);
                a
            }
            "beta" => last_alpha.take().unwrap_or(1.0) * rng.random_range(0.1..0.9),
            n if n.starts_with("length") => log_uniform(rng, ranges.length),
            _ => log_uniform(rng, ranges.signal),
        };
        values.push(v);
    }
    spec.with_params(&values)
}

/// One GP draw from `spec` on `x` plus white noise.
pub fn from_kernel(spec: &KernelSpec, x: Vec<Vec<f64>>, noise_std: f64, seed: u64) -> Result<Dataset> {
    let f: DMatrix<f64> = gp::sample_prior(spec, &x, 1, seed)?;
    let mut noise = rng::stream(seed, 1);
    let y = f.row(0).iter().map(|v| v + noise_std * rng::standard_normal(&mut noise)).collect();
    Dataset::new(x, y)
}
