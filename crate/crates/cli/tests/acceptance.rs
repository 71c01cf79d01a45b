//! Acceptance criteria. Each test prints one `[PASS]`/`[FAIL]` line straight
//! to stderr (bypassing output capture) and then asserts. Tests hold a shared
//! lock so their runtimes are measured one at a time.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use deepkern::compose::{chi_analytic, chi_finite_difference};
use deepkern::data::{grid_1d, pure_noise, TwoScale};
use deepkern::moments::{
    analytic_fourth_moments, sc_pairing_margin, se_pairing_margin, sign_flip_symmetry_check, AncestralSampler, Quartet,
};
use deepkern::optimize::{optimize, OptimizeOptions};
use deepkern::rng;
use deepkern::sweep::{chi_sweep, mean_lml_in, ChiSweepConfig};
use deepkern::{expected_sq_derivative, wrap_outer, BaseKernel, GpModel, InnerEval, KernelSpec, OuterKernel};
use nalgebra::DMatrix;
use rand::Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(id: u32, name: &str, passed: bool, detail: &str, elapsed: Duration) {
    let tag = if passed { "PASS" } else { "FAIL" };
    let line = format!("[{tag}] criterion {id:>2} {name}: {detail} ({:.2}s)\n", elapsed.as_secs_f64());
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn log_uniform(r: &mut rng::Stream, lo: f64, hi: f64) -> f64 {
    r.random_range(lo.ln()..hi.ln()).exp()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn se_se(s1: f64, l1: f64, s2: f64, l2: f64) -> KernelSpec {
    KernelSpec::leaf(BaseKernel::squared_exp(s1, l1)).wrapped(OuterKernel::squared_exp(s2, l2))
}

#[test]
fn criterion_01_closed_form() {
    let _g = serial();
    let t = Instant::now();
    let mut r = rng::stream(1, 0);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (s1, l1, s2, l2) = (
            log_uniform(&mut r, 0.1, 5.0),
            log_uniform(&mut r, 0.1, 5.0),
            log_uniform(&mut r, 0.1, 5.0),
            log_uniform(&mut r, 0.1, 5.0),
        );
        let x = r.random_range(-5.0..5.0);
        let y = r.random_range(-5.0..5.0);
        let got = se_se(s1, l1, s2, l2).eval(&[x], &[y]).unwrap();
        let d2 = (x - y) * (x - y);
        let expect = s2 * s2 * (1.0 + 2.0 * s1 * s1 * (1.0 - (-d2 / (2.0 * l1 * l1)).exp()) / (l2 * l2)).powf(-0.5);
        worst = worst.max((got - expect).abs() / (s2 * s2));
    }
    let el = t.elapsed();
    let ok = worst <= 1e-12 && el < Duration::from_secs(1);
    report(1, "SE[SE] closed form", ok, &format!("max |err|/σ² = {worst:.2e} on 1000 tuples"), el);
    assert!(ok);
}

#[test]
fn criterion_02_monte_carlo_oracle() {
    let _g = serial();
    let t = Instant::now();
    let seps = [0.1, 0.4, 1.0, 2.0, 4.0];
    let points: Vec<Vec<f64>> = std::iter::once(0.0).chain(seps).map(|x| vec![x]).collect();
    let pairs: Vec<(usize, usize)> = (1..=seps.len()).map(|k| (0, k)).collect();
    let mut worst_z = 0.0f64;
    let mut failed = Vec::new();
    for (i, label) in ["SE[SE]", "SC[SE]", "SE[SC]", "SC[SC]", "NuN[SE]", "SE[Lin]", "SC[Lin]"].iter().enumerate() {
        let spec = KernelSpec::from_label(label).unwrap();
        let sampler = AncestralSampler::new(&spec, &points).unwrap();
        let est = sampler.pair_moments(&pairs, 1_000_000, 100 + i as u64).unwrap();
        for (&(a, b), e) in pairs.iter().zip(&est) {
            let z = e.z_score(spec.eval(&points[a], &points[b]).unwrap()).abs();
            worst_z = worst_z.max(z);
            if z > 4.0 {
                failed.push(format!("{label}@{}", points[b][0]));
            }
        }
    }
    let el = t.elapsed();
    let ok = failed.is_empty() && el < Duration::from_secs(120);
    report(
        2,
        "Monte-Carlo oracle",
        ok,
        &format!("7 kernels × 5 separations, max |z| = {worst_z:.2}, failures {failed:?}"),
        el,
    );
    assert!(ok);
}

#[test]
fn criterion_03_table_equivalences() {
    let _g = serial();
    let t = Instant::now();
    let deltas: Vec<f64> = (0..100).map(|i| 0.07 * i as f64).collect();
    let mut worst = [0.0f64; 4];

    let (s, l, s_lin) = (1.3, 0.7, 0.9);
    let se_lin = KernelSpec::leaf(BaseKernel::linear(s_lin)).wrapped(OuterKernel::squared_exp(s, l));
    let sc_lin = KernelSpec::leaf(BaseKernel::linear(s_lin)).wrapped(OuterKernel::squared_cosine(s, l));
    let (s1, l1, s2, l2) = (1.1, 0.6, 0.8, 1.4);
    let sc_sc = KernelSpec::leaf(BaseKernel::squared_cosine(s1, l1)).wrapped(OuterKernel::squared_cosine(s2, l2));
    let inner = BaseKernel::squared_exp(1.2, 0.9);
    let alpha = 1.7;
    for &d in &deltas {
        let (x, y) = ([0.3], [0.3 + d]);
        // Rational quadratic of order ½ with length ℓ/σ_lin. The linear kernel
        // is not stationary, so compare through the one-dimensional difference.
        let l_rq = l / s_lin;
        let rq = s * s * (1.0 + d * d / (2.0 * 0.5 * l_rq * l_rq)).powf(-0.5);
        worst[0] = worst[0].max((se_lin.eval(&x, &y).unwrap() - rq).abs());

        let se_plus_const = s * s / 2.0 + s * s / 2.0 * (-(s_lin * s_lin) * d * d / (2.0 * l * l)).exp();
        worst[1] = worst[1].max((sc_lin.eval(&x, &y).unwrap() - se_plus_const).abs());

        let (a, b, c) = (s2 * s2 / 2.0, s1 * s1 / (l2 * l2), 2.0 * l1);
        let periodic = a * (1.0 + (-b * (d / c).sin().powi(2)).exp());
        worst[2] = worst[2].max((sc_sc.eval(&x, &y).unwrap() - periodic).abs());

        let e = InnerEval::new(inner.eval(&x, &x).unwrap(), inner.eval(&y, &y).unwrap(), inner.eval(&x, &y).unwrap())
            .unwrap();
        let nun = wrap_outer(&OuterKernel::nun(s, alpha, alpha), e).unwrap();
        let se = wrap_outer(&OuterKernel::squared_exp(s, 1.0 / alpha.sqrt()), e).unwrap();
        worst[3] = worst[3].max((nun - se).abs());
    }
    let el = t.elapsed();
    let ok = worst.iter().all(|w| *w <= 1e-12);
    report(
        3,
        "Table equivalences",
        ok,
        &format!(
            "max |diff| SE[Lin]~RQ½ {:.1e}, SC[Lin]~SE+Const {:.1e}, SC[SC]~periodic {:.1e}, NuN(α=β)~SE {:.1e}",
            worst[0], worst[1], worst[2], worst[3]
        ),
        el,
    );
    assert!(ok);
}

#[test]
fn criterion_04_fourth_moment_inequalities() {
    let _g = serial();
    let t = Instant::now();
    let mut r = rng::stream(4, 0);
    let mut min_pair = f64::INFINITY;
    for _ in 0..1000 {
        let scale = r.random_range(0.1..3.0);
        let a = DMatrix::from_fn(4, 4, |_, _| scale * rng::standard_normal(&mut r));
        let k = &a * a.transpose() / 4.0;
        let l = log_uniform(&mut r, 0.2, 3.0);
        let q = Quartet::new(0, 1, 2, 3);
        min_pair = min_pair.min(se_pairing_margin(&k, l, q).unwrap()).min(sc_pairing_margin(&k, l, q).unwrap());
    }

    let mut min_quartet = f64::INFINITY;
    let points: Vec<Vec<f64>> = (0..6).map(|_| vec![r.random_range(-3.0..3.0)]).collect();
    let families = ["SE[SE]", "SC[SE]", "SE[SC]", "SC[SC]", "SE[Lin]", "SC[Lin]"];
    for label in families {
        let spec = KernelSpec::from_label(label).unwrap();
        let table = analytic_fourth_moments(&spec, &points).unwrap();
        for _ in 0..100 {
            let mut idx: Vec<usize> = (0..4).map(|_| r.random_range(0..points.len())).collect();
            idx.sort();
            let q = Quartet::new(idx[0], idx[1], idx[2], idx[3]);
            let (_, p, g) = table.iter().find(|row| row.0 == q).copied().unwrap();
            min_quartet = min_quartet.min((p - g) / g.abs().max(1.0));
        }
    }

    let ratios = [1.0, 0.3, 0.1, 0.03];
    let grid = grid_1d(4, 0.0, 3.0);
    let max_margins: Vec<f64> = ratios
        .iter()
        .map(|&ratio| {
            analytic_fourth_moments(&se_se(ratio, 1.0, 1.0, 1.0), &grid)
                .unwrap()
                .iter()
                .map(|(_, p, q)| p - q)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let shrinking = max_margins.windows(2).all(|w| w[1] < w[0]);

    let el = t.elapsed();
    let ok = min_pair >= -1e-12 && min_quartet >= -1e-12 && shrinking;
    report(
        4,
        "fourth-moment inequalities",
        ok,
        &format!(
            "min pairing margin {min_pair:.2e} (1000 covariances), min E_p−E_q {min_quartet:.2e} (600 quartets), max margins over σ1/ℓ2 {ratios:?}: [{}]",
            max_margins.iter().map(|m| format!("{m:.3e}")).collect::<Vec<_>>().join(", ")
        ),
        el,
    );
    assert!(ok);
}

#[test]
fn criterion_05_sign_flip_symmetry() {
    let _g = serial();
    let t = Instant::now();
    let x = grid_1d(8, -2.0, 2.0);
    let labels = ["SE[SE]", "SC[SE]", "NuN[SE]", "SE[SE[SE]]"];
    let ok = labels.iter().all(|l| sign_flip_symmetry_check(&KernelSpec::from_label(l).unwrap(), &x, 100, 5).unwrap());
    let el = t.elapsed();
    report(5, "sign-flip symmetry", ok, &format!("100 trials each for {labels:?} at 1e-10 relative"), el);
    assert!(ok);
}

#[test]
fn criterion_06_chi_consistency() {
    let _g = serial();
    let t = Instant::now();
    let mut r = rng::stream(6, 0);
    let (mut worst_chi, mut worst_deriv) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let p: Vec<f64> = (0..6).map(|_| log_uniform(&mut r, 0.5, 2.0)).collect();
        let two = se_se(p[0], p[1], p[2], p[3]);
        let three = two.clone().wrapped(OuterKernel::squared_exp(p[4], p[5]));
        let closed2 = p[0] * p[0] / (p[3] * p[3]);
        let closed3 = p[2] * p[2] * p[0] * p[0] / (p[5] * p[5] * p[3] * p[3]);
        worst_chi = worst_chi
            .max(rel_err(chi_finite_difference(&two).unwrap(), closed2))
            .max(rel_err(chi_finite_difference(&three).unwrap(), closed3))
            .max(rel_err(chi_analytic(&three).unwrap(), closed3));
        let x0 = r.random_range(-2.0..2.0);
        for (spec, chi, s_out) in [(&two, closed2, p[2]), (&three, closed3, p[4])] {
            let d = expected_sq_derivative(spec, &[x0]).unwrap();
            worst_deriv = worst_deriv.max(rel_err(d, s_out * s_out * chi / (p[1] * p[1])));
        }
    }
    let el = t.elapsed();
    let ok = worst_chi <= 1e-5 && worst_deriv <= 1e-3;
    report(
        6,
        "chi consistency",
        ok,
        &format!("max rel err χ {worst_chi:.2e}, E[f'²] {worst_deriv:.2e} over 100 draws"),
        el,
    );
    assert!(ok);
}

fn erf_vs_recursion(ratio_top: f64, ratio_mid: f64) -> f64 {
    // σ3 = ℓ1 = ℓ2 = ℓ3 = 1, σ2 = ratio_top, σ1 = ratio_mid.
    let inner = KernelSpec::leaf(BaseKernel::squared_exp(ratio_mid, 1.0));
    let erf = inner.clone().wrapped(OuterKernel::erf_three_layer(1.0, 1.0, ratio_top, 1.0));
    let rec = inner.wrapped(OuterKernel::squared_exp(ratio_top, 1.0)).wrapped(OuterKernel::squared_exp(1.0, 1.0));
    (0..=500)
        .map(|i| {
            let d = 5.0 * i as f64 / 500.0;
            (erf.eval(&[0.0], &[d]).unwrap() - rec.eval(&[0.0], &[d]).unwrap()).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn criterion_07_recursion_vs_erf() {
    let _g = serial();
    let t = Instant::now();
    let green = erf_vs_recursion(0.8, 0.8);
    let black = erf_vs_recursion(1.0, 1.0);
    let red = erf_vs_recursion(1.4, 1.2);
    let el = t.elapsed();
    let ok = green <= 0.05 && red > 0.05;
    report(
        7,
        "recursion vs erf",
        ok,
        &format!("max |diff|/σ3² green {green:.4} (≤ 0.05 required), black {black:.4}, red {red:.4} (> 0.05 required)"),
        el,
    );
    assert!(ok);
}

fn fit(label: &str, data: deepkern::Dataset, seed: u64) -> GpModel {
    let template = GpModel::new(KernelSpec::from_label(label).unwrap(), 0.1, data.clone()).unwrap();
    let rep = optimize(&template, &OptimizeOptions { restarts: 20, seed, budget: 2000, ..Default::default() }).unwrap();
    rep.model(data).unwrap()
}

#[test]
fn criterion_08_two_scale_regression() {
    let _g = serial();
    let t = Instant::now();
    let mut wins = 0;
    let mut detail = Vec::new();
    for seed in 0..10u64 {
        let data = TwoScale::default().generate(seed).unwrap();
        let (train, test) = data.split(0.8, seed).unwrap();
        let se = fit("SE", train.clone(), seed).log_predictive_density(&test).unwrap();
        let sese = fit("SE[SE]", train, seed).log_predictive_density(&test).unwrap();
        if sese > se {
            wins += 1;
        }
        detail.push(format!("{:+.3}", sese - se));
    }
    let el = t.elapsed();
    let ok = wins >= 8 && el < Duration::from_secs(300);
    report(
        8,
        "two-scale regression",
        ok,
        &format!("SE[SE] wins {wins}/10, Δ held-out LPD per seed [{}]", detail.join(", ")),
        el,
    );
    assert!(ok);
}

#[test]
fn criterion_09_pure_noise_regression() {
    let _g = serial();
    let t = Instant::now();
    let mut wins = 0;
    let mut detail = Vec::new();
    // Predictive curve over the data range, not just at the observed inputs.
    let curve = grid_1d(1000, 0.0, 10.0);
    let rms = |m: &GpModel| {
        let p = m.posterior_predict(&curve, false).unwrap();
        (p.mean.iter().map(|v| v * v).sum::<f64>() / p.mean.len() as f64).sqrt()
    };
    for seed in 0..10u64 {
        let data = pure_noise(90, 0.2, seed).unwrap();
        let se = rms(&fit("SE", data.clone(), seed));
        let sese = rms(&fit("SE[SE]", data, seed));
        if sese <= se {
            wins += 1;
        }
        detail.push(format!("{sese:.4}/{se:.4}"));
    }
    let el = t.elapsed();
    let ok = wins >= 7;
    report(9, "pure-noise regression", ok, &format!("SE[SE] RMS ≤ SE RMS in {wins}/10 [{}]", detail.join(", ")), el);
    assert!(ok);
}

#[test]
fn criterion_10_chi_sweep() {
    let _g = serial();
    let t = Instant::now();
    let rows = chi_sweep(&ChiSweepConfig::default()).unwrap();
    let se_family: Vec<_> = rows.iter().filter(|r| r.generator.starts_with("SE[")).cloned().collect();
    let near = mean_lml_in(&se_family, -1.0, 1.0);
    let low = mean_lml_in(&se_family, f64::NEG_INFINITY, -3.0);
    let count = |lo: f64, hi: f64| se_family.iter().filter(|r| r.log_chi.is_some_and(|c| c >= lo && c < hi)).count();
    let el = t.elapsed();
    let gap = match (near, low) {
        (Some(a), Some(b)) => a - b,
        _ => f64::NAN,
    };
    let ok = gap >= 10.0 && el < Duration::from_secs(1800);
    report(
        10,
        "chi sweep",
        ok,
        &format!(
            "SE-family mean LML log χ∈(−1,1) {near:?} (n={}), log χ<−3 {low:?} (n={}), gap {gap:.2} nats; {} rows total",
            count(-1.0, 1.0),
            count(f64::NEG_INFINITY, -3.0),
            rows.len()
        ),
        el,
    );
    assert!(ok);
}

fn run(args: &[&str], dir: &Path) -> (i32, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_deepkern")).args(args).current_dir(dir).output().unwrap();
    (out.status.code().unwrap_or(-1), out.stdout)
}

#[test]
fn criterion_11_determinism() {
    let _g = serial();
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(
        run(&["gen-data", "--generator", "two_scale", "--n", "40", "--seed", "3", "--out", "train.csv"], d).0,
        0
    );
    assert_eq!(
        run(
            &[
                "fit",
                "--data",
                "train.csv",
                "--kernel",
                "SE[SE]",
                "--restarts",
                "2",
                "--budget",
                "200",
                "--out",
                "fit.json"
            ],
            d
        )
        .0,
        0
    );
    let commands: Vec<Vec<&str>> = vec![
        vec!["sample-prior", "--kernel", "SE[SE]", "--kernel", "SE[SE[SE]]", "--grid-n", "30", "--seed", "9"],
        vec!["gen-data", "--generator", "two_scale", "--seed", "9"],
        vec!["gen-data", "--generator", "pure_noise", "--seed", "9"],
        vec!["gen-data", "--generator", "from_kernel", "--kernel", "SE[SC]", "--seed", "9"],
        vec!["fit", "--data", "train.csv", "--kernel", "SE[SE]", "--restarts", "2", "--budget", "200", "--seed", "9"],
        vec!["predict", "--data", "train.csv", "--report", "fit.json", "--grid-n", "25"],
        vec![
            "chi-sweep",
            "--generators",
            "SE[SE],SC[SE]",
            "--n",
            "30",
            "--restarts",
            "2",
            "--budget",
            "150",
            "--seed",
            "9",
        ],
        vec!["moments", "--kernel", "SE[SE]", "--samples", "20000", "--seed", "9"],
    ];
    let mut bad = Vec::new();
    for c in &commands {
        let (code_a, a) = run(c, d);
        let (code_b, b) = run(c, d);
        if code_a != code_b || a != b || a.is_empty() {
            bad.push(c[0]);
        }
    }
    let el = t.elapsed();
    let ok = bad.is_empty();
    report(11, "determinism", ok, &format!("{} commands run twice, mismatches {bad:?}", commands.len()), el);
    assert!(ok);
}
