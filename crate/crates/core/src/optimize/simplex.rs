//! Nelder–Mead downhill simplex.

/// Stopping rules and initial simplex size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    /// Edge length of the initial axis-aligned simplex.
    pub step: f64,
    /// Stop once every vertex lies within this distance (max norm) of the best.
    pub tolerance: f64,
    /// Maximum number of objective evaluations.
    pub max_evaluations: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions { step: 1.0, tolerance: 1e-6, max_evaluations: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

fn sanitize(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

fn diameter(simplex: &[Vec<f64>]) -> f64 {
    let best = &simplex[0];
    simplex[1..].iter().flat_map(|v| v.iter().zip(best).map(|(a, b)| (a - b).abs())).fold(0.0, f64::max)
}

fn affine(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    // a + t (b − a)
    a.iter().zip(b).map(|(a, b)| a + t * (b - a)).collect()
}

/// Minimize `f` from `x0`. Non-finite values count as +∞, so the search backs
/// away from regions where the objective is undefined.
pub fn minimize<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], opts: &SimplexOptions) -> SimplexResult {
    let n = x0.len();
    let mut evaluations = 0;
    let mut eval = |x: &[f64], evaluations: &mut usize| {
        *evaluations += 1;
        sanitize(f(x))
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += opts.step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v, &mut evaluations)).collect();

    let mut iterations = 0;
    let mut converged = false;
    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        if n == 0 || diameter(&simplex) < opts.tolerance {
            converged = true;
            break;
        }
        if evaluations >= opts.max_evaluations {
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }
        let worst = simplex[n].clone();
        let reflected = affine(&centroid, &worst, -REFLECT);
        let f_r = eval(&reflected, &mut evaluations);

        if f_r < values[0] {
            let expanded = affine(&centroid, &worst, -EXPAND);
            let f_e = eval(&expanded, &mut evaluations);
            if f_e < f_r {
                simplex[n] = expanded;
                values[n] = f_e;
            } else {
                simplex[n] = reflected;
                values[n] = f_r;
            }
            continue;
        }
        if f_r < values[n - 1] {
            simplex[n] = reflected;
            values[n] = f_r;
            continue;
        }
        let (candidate, f_c) = if f_r < values[n] {
            let c = affine(&centroid, &reflected, CONTRACT);
            let fc = eval(&c, &mut evaluations);
            (c, fc)
        } else {
            let c = affine(&centroid, &worst, CONTRACT);
            let fc = eval(&c, &mut evaluations);
            (c, fc)
        };
        if f_c < values[n].min(f_r) {
            simplex[n] = candidate;
            values[n] = f_c;
            continue;
        }
        let best = simplex[0].clone();
        for i in 1..=n {
            simplex[i] = affine(&best, &simplex[i], SHRINK);
            values[i] = eval(&simplex[i], &mut evaluations);
        }
    }

    SimplexResult { x: simplex.swap_remove(0), value: values[0], iterations, evaluations, converged }
}
