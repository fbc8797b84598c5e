//! Nelder–Mead simplex minimization.

use serde::Serialize;

/// Termination reason.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimStatus {
    Converged,
    /// The objective was flat over the initial simplex.
    ConvergedDegenerate,
    MaxEvaluations,
}

#[derive(Clone, Copy, Debug)]
pub struct NelderMeadOptions {
    /// Maximum number of objective evaluations.
    pub maxit: usize,
    pub reltol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            maxit: 500,
            reltol: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub status: OptimStatus,
    pub evaluations: usize,
}

/// Minimizes `f` from `x0`. Reflection 1, expansion 2, contraction 1/2,
/// shrink 1/2. The initial simplex steps each coordinate by
/// `max(0.1, 0.1 |x0_i|)`. Stops when the spread of simplex values falls below
/// `reltol (|f_lo| + reltol)` or after `maxit` evaluations. NaN values are
/// treated as `+inf`.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], opts: &NelderMeadOptions) -> NelderMeadResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evals = 0usize;
    let mut warned = false;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            if !warned {
                log::warn!("objective returned NaN; treating as +inf");
                warned = true;
            }
            f64::INFINITY
        } else {
            v
        }
    };

    let f0 = eval(x0, &mut evals);
    if n == 0 {
        return NelderMeadResult {
            x: Vec::new(),
            value: f0,
            status: OptimStatus::Converged,
            evaluations: evals,
        };
    }
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(x0.to_vec(), f0)];
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += (0.1 * x0[i].abs()).max(0.1);
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }

    let mut first = true;
    loop {
        // stable: ties keep earlier vertices (x0 first) in front
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (lo, hi) = (simplex[0].1, simplex[n].1);
        if hi - lo <= opts.reltol * (lo.abs() + opts.reltol) || (lo == hi && lo.is_infinite()) {
            let status = if first && lo == hi {
                OptimStatus::ConvergedDegenerate
            } else {
                OptimStatus::Converged
            };
            return finish(simplex, status, evals);
        }
        if evals >= opts.maxit {
            return finish(simplex, OptimStatus::MaxEvaluations, evals);
        }
        first = false;

        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / n as f64;
            }
        }
        let worst = simplex[n].0.clone();
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&worst).map(|(c, w)| c + t * (c - w)).collect() };

        let xr = along(1.0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = eval(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc, accept) = if fr < simplex[n].1 {
            let xc = along(0.5);
            let fc = eval(&xc, &mut evals);
            (xc, fc, fc <= fr)
        } else {
            let xc = along(-0.5);
            let fc = eval(&xc, &mut evals);
            (xc, fc, fc < simplex[n].1)
        };
        if accept {
            simplex[n] = (xc, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            for (v, b) in vertex.0.iter_mut().zip(&best) {
                *v = b + 0.5 * (*v - b);
            }
            vertex.1 = eval(&vertex.0, &mut evals);
        }
    }
}

fn finish(mut simplex: Vec<(Vec<f64>, f64)>, status: OptimStatus, evaluations: usize) -> NelderMeadResult {
    let (x, value) = simplex.swap_remove(0);
    NelderMeadResult {
        x,
        value,
        status,
        evaluations,
    }
}
