use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use deepkern::data::{self, write_table, Dataset, HyperRanges, TwoScale};
use deepkern::gp::{self, GpModel};
use deepkern::moments::{heavy_tail_report, second_moment_checks, HeavyTailOptions};
use deepkern::optimize::{optimize, FitReport, OptimizeOptions};
use deepkern::rng;
use deepkern::sweep::{chi_sweep, ChiSweepConfig, DEFAULT_GENERATORS};
use deepkern::{Error, KernelSpec};
use serde::{Deserialize, Serialize};

use crate::args::*;

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum Failure {
    Numerical(String),
    Validation(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Numerical(_) => 2,
            Failure::Validation(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Numerical(m) | Failure::Validation(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NotPositiveDefinite { .. }
            | Error::DivergentExpectation { .. }
            | Error::NotSmooth(_)
            | Error::Optimization(_) => Failure::Numerical(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Validation(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

/// Inline JSON, a path to a JSON file, or a label such as `SE[Lin+SE]`.
pub fn parse_kernel(arg: &str) -> Result<KernelSpec, Failure> {
    let trimmed = arg.trim();
    if trimmed.starts_with('{') {
        return Ok(KernelSpec::from_json(trimmed)?);
    }
    let path = Path::new(trimmed);
    if path.is_file() {
        let text = fs::read_to_string(path)?;
        return Ok(KernelSpec::from_json(&text)?);
    }
    KernelSpec::from_label(trimmed).map_err(|_| {
        Failure::Validation(format!("`{trimmed}` is neither kernel JSON, a readable file, nor a kernel label"))
    })
}

fn open_out(out: &Option<PathBuf>) -> Result<Box<dyn Write>, Failure> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn header(command: &str, config: &impl Serialize) -> Vec<String> {
    vec![format!("deepkern {command}"), format!("config {}", serde_json::to_string(config).expect("config serializes"))]
}

fn grid_points(g: &Grid) -> Result<Vec<Vec<f64>>, Failure> {
    if g.grid_n == 0 || !(g.grid_lo.is_finite() && g.grid_hi.is_finite()) || g.grid_hi < g.grid_lo {
        return Err(Failure::Validation("grid needs n ≥ 1 and finite lo ≤ hi".into()));
    }
    Ok(data::grid_1d(g.grid_n, g.grid_lo, g.grid_hi))
}

pub fn sample_prior(a: &SamplePriorArgs) -> Outcome {
    let specs = a.kernel.iter().map(|k| parse_kernel(k)).collect::<Result<Vec<_>, _>>()?;
    let x = grid_points(&a.grid)?;
    let mut names = vec!["x".to_string()];
    let mut columns = Vec::new();
    let mut comments = header("sample-prior", a);
    for (k, spec) in specs.iter().enumerate() {
        comments.push(format!("kernel k{k} {}", spec.to_json()));
        let f = gp::sample_prior(spec, &x, a.n_functions, a.common.seed)?;
        for j in 0..a.n_functions {
            names.push(format!("k{k}_f{j}"));
            columns.push(f.row(j).iter().copied().collect::<Vec<f64>>());
        }
    }
    let rows: Vec<Vec<f64>> = x
        .iter()
        .enumerate()
        .map(|(i, xi)| std::iter::once(xi[0]).chain(columns.iter().map(|c| c[i])).collect())
        .collect();
    write_table(open_out(&a.common.out)?, &comments, &names, &rows)?;
    Ok(())
}

pub fn gen_data(a: &GenDataArgs) -> Outcome {
    let seed = a.common.seed;
    let mut comments = header("gen-data", a);
    let dataset = match a.generator {
        Generator::PureNoise => data::pure_noise(a.n.unwrap_or(90), a.noise_std.unwrap_or(0.2), seed)?,
        Generator::TwoScale => TwoScale {
            n: a.n.unwrap_or(100),
            noise_std: a.noise_std.unwrap_or(0.05),
            long_signal: a.long_signal,
            long_length: a.long_length,
            short_signal: a.short_signal,
            short_length: a.short_length,
            ..TwoScale::default()
        }
        .generate(seed)?,
        Generator::FromKernel => {
            let kernel = a.kernel.as_deref().ok_or_else(|| Failure::Validation("from_kernel needs --kernel".into()))?;
            let mut spec = parse_kernel(kernel)?;
            if !a.keep_params {
                spec = data::randomize_hyperparameters(&spec, &HyperRanges::default(), &mut rng::stream(seed, 2))?;
            }
            comments.push(format!("kernel {}", spec.to_json()));
            let x = data::grid_1d(a.n.unwrap_or(150), -5.0, 5.0);
            data::from_kernel(&spec, x, a.noise_std.unwrap_or(0.1), seed)?
        }
    };
    dataset.write_csv(open_out(&a.common.out)?, &comments)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct FitOutput {
    command: String,
    config: serde_json::Value,
    n_train: usize,
    report: FitReport,
}

pub fn fit(a: &FitArgs) -> Outcome {
    let data = Dataset::from_path(&a.data)?;
    let spec = parse_kernel(&a.kernel)?;
    let n_train = data.len();
    let template = GpModel::new(spec, 0.1, data)?;
    let report = optimize(
        &template,
        &OptimizeOptions { restarts: a.restarts, seed: a.common.seed, budget: a.budget, ..Default::default() },
    )?;
    log::info!("best log marginal likelihood {:.6} from restart {}", report.best_lml, report.best_restart);
    let out = FitOutput {
        command: "fit".into(),
        config: serde_json::to_value(a).expect("config serializes"),
        n_train,
        report,
    };
    let mut w = open_out(&a.common.out)?;
    serde_json::to_writer_pretty(&mut w, &out).map_err(|e| Failure::Validation(e.to_string()))?;
    writeln!(w)?;
    Ok(())
}

fn load_report(path: &Path) -> Result<(FitReport, Option<usize>), Failure> {
    let text = fs::read_to_string(path)?;
    if let Ok(out) = serde_json::from_str::<FitOutput>(&text) {
        return Ok((out.report, Some(out.n_train)));
    }
    Ok((FitReport::from_json(&text)?, None))
}

pub fn predict(a: &PredictArgs) -> Outcome {
    let data = Dataset::from_path(&a.data)?;
    let (report, n_train) = load_report(&a.report)?;
    if let Some(n) = n_train {
        if n != data.len() {
            return Err(Failure::Validation(format!(
                "report was fitted on {n} rows but {} has {}",
                a.data.display(),
                data.len()
            )));
        }
    }
    let dim = data.dim();
    let x_star = match &a.test {
        Some(p) => Dataset::from_path(p)?.inputs,
        None => grid_points(&a.grid)?,
    };
    if x_star[0].len() != dim {
        return Err(Failure::Validation(format!(
            "prediction inputs have {} columns, training data {dim}",
            x_star[0].len()
        )));
    }
    let model = report.model(data)?;
    let pred = model.posterior_predict(&x_star, a.with_noise)?;
    let mut names: Vec<String> = (1..=dim).map(|d| format!("x{d}")).collect();
    names.extend(["mean".to_string(), "variance".to_string()]);
    let rows: Vec<Vec<f64>> = x_star
        .iter()
        .zip(pred.mean.iter().zip(&pred.variance))
        .map(|(x, (m, v))| x.iter().copied().chain([*m, *v]).collect())
        .collect();
    let mut comments = header("predict", a);
    comments.push(format!("kernel {}", report.spec.to_json()));
    comments.push(format!("noise_variance {:?}", report.noise_variance));
    write_table(open_out(&a.common.out)?, &comments, &names, &rows)?;
    Ok(())
}

pub fn chi_sweep_cmd(a: &ChiSweepArgs) -> Outcome {
    let generators = if a.generators.is_empty() {
        DEFAULT_GENERATORS.iter().map(|s| s.to_string()).collect()
    } else {
        a.generators.clone()
    };
    let cfg = ChiSweepConfig {
        generators: generators.clone(),
        draws_per_generator: a.draws,
        n_points: a.n,
        noise_std: a.noise_std,
        restarts: a.restarts,
        budget: a.budget,
        seed: a.common.seed,
        ..ChiSweepConfig::default()
    };
    let rows = chi_sweep(&cfg)?;
    let mut comments = header("chi-sweep", a);
    for (i, g) in generators.iter().enumerate() {
        comments.push(format!("generator {i} {g}"));
    }
    comments.push("missing values are written as NaN".into());
    let names: Vec<String> =
        ["generator", "draw_seed", "restart", "final_lml", "log_chi"].iter().map(|s| s.to_string()).collect();
    let table: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            let g = generators.iter().position(|g| *g == r.generator).unwrap_or(usize::MAX);
            vec![
                g as f64,
                r.draw_seed as f64,
                r.restart as f64,
                r.final_lml.unwrap_or(f64::NAN),
                r.log_chi.unwrap_or(f64::NAN),
            ]
        })
        .collect();
    write_table(open_out(&a.common.out)?, &comments, &names, &table)?;
    Ok(())
}

/// Depth beyond which the wrap recursion is only a moment-matched
/// approximation of the stacked process.
const EXACT_DEPTH: usize = 2;

pub fn moments(a: &MomentsArgs) -> Outcome {
    let spec = parse_kernel(&a.kernel)?;
    if spec.depth() > 3 {
        return Err(Failure::Validation("the ancestral oracle supports at most three layers".into()));
    }
    let points: Vec<Vec<f64>> = a.points.iter().map(|&x| vec![x]).collect();
    let seed = a.common.seed;
    let exact = spec.depth() <= EXACT_DEPTH;
    let mut comments = header("moments", a);
    comments.push(format!("kernel {}", spec.to_json()));
    comments
        .push("order 2: analytic_p = analytic_q = effective kernel; order 4: exact and Gaussian fourth moments".into());
    comments.push("passed: 1 pass, 0 fail, -1 informational".into());

    let mut rows = Vec::new();
    let mut failures = 0usize;
    let second = second_moment_checks(&spec, &points, a.samples, seed, a.n_se)?;
    for c in &second {
        let passed = if !exact {
            -1.0
        } else if c.passed {
            1.0
        } else {
            failures += 1;
            0.0
        };
        let (i, j) = (c.i as f64, c.j as f64);
        rows.push(vec![2.0, i, j, -1.0, -1.0, c.analytic, c.analytic, c.mc.value, c.mc.std_error, 0.0, passed]);
    }

    let two_layer_fourth =
        spec.depth() == 2 && matches!(spec.outermost().map(|o| o.kind_name()), Some("SE") | Some("SC"));
    if two_layer_fourth {
        let opts = HeavyTailOptions {
            n_samples: a.samples,
            seed: seed.wrapping_add(1),
            n_se: a.n_se,
            corrupt_analytic: a.corrupt,
        };
        let report = heavy_tail_report(&spec, &points, &opts)?;
        for r in &report.rows {
            let ok = r.margin_ok() && r.mc.agrees_with(r.analytic_p, a.n_se);
            if !ok {
                failures += 1;
            }
            let q = r.quartet;
            rows.push(vec![
                4.0,
                q.i as f64,
                q.j as f64,
                q.m as f64,
                q.l as f64,
                r.analytic_p,
                r.analytic_q,
                r.mc.value,
                r.mc.std_error,
                r.margin,
                if ok { 1.0 } else { 0.0 },
            ]);
        }
        comments.push(format!("margin range [{:?}, {:?}]", report.min_margin(), report.max_margin()));
    } else {
        comments.push("fourth moments need a two-layer SE or SC outer kernel; skipped".into());
    }
    comments.push(format!("failures {failures}"));

    let names: Vec<String> =
        ["order", "i", "j", "m", "l", "analytic_p", "analytic_q", "mc_value", "mc_stderr", "margin", "passed"]
            .iter()
            .map(|s| s.to_string())
            .collect();
    write_table(open_out(&a.common.out)?, &comments, &names, &rows)?;
    if failures > 0 {
        return Err(Failure::Validation(format!("{failures} moment check(s) failed")));
    }
    Ok(())
}
