use nalgebra::{DMatrix, DVector};
use rand::Rng;

use pomp_kit::distributions::rnorm;
use pomp_kit::models::gompertz;
use pomp_kit::nlf::fit_rbf_predictor;
use pomp_kit::oracle::{
    gompertz_loglik, kalman_exact_mle, kalman_loglik_log_scale, nelder_mead, LinearGaussianSSM, NelderMeadOptions,
    OptimStatus,
};
use pomp_kit::probes::synth_loglik;
use pomp_kit::smc::pfilter;
use pomp_kit::{simulate, StreamKey, TimeSeriesData};

/// Log density of `z` under the joint Gaussian implied by the state-space
/// model with a point-mass initial state, computed densely.
fn dense_gaussian_loglik(ssm: &LinearGaussianSSM, z: &[f64]) -> f64 {
    let n = z.len();
    let mut mean = DVector::zeros(n);
    let mut m = ssm.x0_mean;
    for i in 0..n {
        m = ssm.a * m + ssm.b;
        mean[i] = m + ssm.c;
    }
    let cov = DMatrix::from_fn(n, n, |i, j| {
        let (lo, hi) = (i.min(j), i.max(j));
        let mut s = 0.0;
        for k in 0..=lo {
            s += ssm.a.powi((lo - k) as i32) * ssm.a.powi((hi - k) as i32) * ssm.q;
        }
        s + if i == j { ssm.r_obs } else { 0.0 }
    });
    let resid = DVector::from_column_slice(z) - mean;
    let lu = cov.clone().lu();
    let sol = lu.solve(&resid).unwrap();
    -0.5 * resid.dot(&sol) - 0.5 * lu.determinant().ln() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
}

#[test]
fn kalman_matches_dense_joint_gaussian() {
    let mut rng = StreamKey::new(1).rng();
    for _ in 0..20 {
        let ssm = LinearGaussianSSM {
            a: rng.random_range(-0.95..0.95),
            b: rng.random_range(-1.0..1.0),
            q: rng.random_range(0.01..1.0),
            c: rng.random_range(-1.0..1.0),
            r_obs: rng.random_range(0.01..1.0),
            x0_mean: rng.random_range(-1.0..1.0),
            x0_var: 0.0,
        };
        let z: Vec<f64> = (0..8).map(|_| rnorm(0.0, 1.0, &mut rng)).collect();
        let a = kalman_loglik_log_scale(&ssm, &z).unwrap();
        let b = dense_gaussian_loglik(&ssm, &z);
        assert!((a - b).abs() < 1e-9 * b.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn gompertz_loglik_includes_lognormal_jacobian() {
    let theta = gompertz::default_params();
    let y = [1.1, 0.9, 1.05, 0.97];
    let data = TimeSeriesData::new(0.0, vec![1.0, 2.0, 3.0, 4.0], vec!["Y".into()], y.to_vec()).unwrap();
    let ssm = pomp_kit::oracle::gompertz_ssm(&theta, 1.0).unwrap();
    let z: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let expected = dense_gaussian_loglik(&ssm, &z) - z.iter().sum::<f64>();
    let got = gompertz_loglik(&data, &theta).unwrap();
    assert!((got - expected).abs() < 1e-10);
}

#[test]
fn particle_filter_tracks_exact_likelihood() {
    let m = gompertz::gompertz(None).unwrap();
    let theta = gompertz::default_params();
    let sim = simulate(&m, &theta, StreamKey::new(7), 1).unwrap();
    let m = m.with_data(sim[0].data().unwrap()).unwrap();
    let exact = gompertz_loglik(m.data(), &theta).unwrap();
    let lls: Vec<f64> = (0..20).map(|i| pfilter(&m, &theta, 2000, StreamKey::new(8).child(i)).unwrap().loglik).collect();
    let mean = lls.iter().sum::<f64>() / lls.len() as f64;
    assert!((mean - exact).abs() < 0.3, "{mean} vs {exact}");
}

#[test]
fn exact_mle_is_a_local_maximum() {
    let m = gompertz::gompertz(None).unwrap();
    let theta = gompertz::default_params();
    let sim = simulate(&m, &theta, StreamKey::new(9), 1).unwrap();
    let data = sim[0].data().unwrap();
    let mle = kalman_exact_mle(&data, &theta).unwrap();
    for name in ["r", "sigma", "tau"] {
        for f in [0.97, 1.03] {
            let v = mle.theta.get(name).unwrap();
            let moved = mle.theta.with(&[(name, v * f)]).unwrap();
            assert!(gompertz_loglik(&data, &moved).unwrap() <= mle.loglik + 1e-6);
        }
    }
}

#[test]
fn synth_loglik_matches_direct_gaussian_density() {
    let mut rng = StreamKey::new(2).rng();
    let (j, d) = (60, 4);
    let sim: Vec<f64> = (0..j * d)
        .map(|i| rnorm((i % d) as f64, 1.0 + (i % d) as f64, &mut rng))
        .collect();
    let obs = [0.3, 1.2, 1.7, 3.5];
    let x = DMatrix::from_row_slice(j, d, &sim);
    let mu = DVector::from_fn(d, |k, _| x.column(k).sum() / j as f64);
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..j {
        let r = DVector::from_fn(d, |k, _| x[(i, k)] - mu[k]);
        cov += &r * r.transpose();
    }
    cov /= (j - 1) as f64;
    let resid = DVector::from_column_slice(&obs) - &mu;
    let inv = cov.clone().try_inverse().unwrap();
    let expected = -0.5 * (resid.transpose() * inv * &resid)[(0, 0)]
        - 0.5 * cov.determinant().ln()
        - 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln();
    let got = synth_loglik(&sim, &obs).unwrap();
    assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
}

#[test]
fn rbf_fit_solves_normal_equations() {
    let mut rng = StreamKey::new(3).rng();
    let mut y = vec![0.5];
    for n in 1..400 {
        let prev: f64 = y[n - 1];
        y.push(0.8 * prev + 0.3 * (prev * 2.0).sin() + rnorm(0.0, 0.2, &mut rng));
    }
    let lags = [2, 3];
    let (k, first) = (4, 3);
    let fit = fit_rbf_predictor(&y, first, &lags, k).unwrap();

    let window = &y[first..];
    let lo = window.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let centers: Vec<f64> = (0..k).map(|i| lo + (hi - lo) * (1.2 * i as f64 / 3.0 - 0.1)).collect();
    let s = 0.3 * (hi - lo);
    let x = DMatrix::from_fn(window.len(), lags.len() * k, |i, c| {
        let v = y[first + i - lags[c / k]];
        (-(v - centers[c % k]).powi(2) / (2.0 * s * s)).exp()
    });
    let resp = DVector::from_column_slice(window);
    let beta = (x.transpose() * &x).lu().solve(&(x.transpose() * &resp)).unwrap();
    let pred_fit: Vec<f64> = (first..y.len()).map(|n| fit.predict(&y, n)).collect();
    let pred_ne = &x * &beta;
    let worst = pred_fit
        .iter()
        .zip(pred_ne.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-6, "prediction mismatch {worst}");
    let sigma2 = (resp - pred_ne).norm_squared() / window.len() as f64;
    assert!((fit.sigma2 - sigma2).abs() < 1e-8 * sigma2);
}

#[test]
fn nelder_mead_finds_rosenbrock_minimum() {
    let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
    let res = nelder_mead(
        rosen,
        &[-1.2, 1.0],
        &NelderMeadOptions {
            maxit: 5000,
            reltol: 1e-14,
        },
    );
    assert_eq!(res.status, OptimStatus::Converged);
    assert!((res.x[0] - 1.0).abs() < 1e-3 && (res.x[1] - 1.0).abs() < 1e-3, "{:?}", res.x);
}
