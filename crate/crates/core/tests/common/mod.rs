//! Fixtures and brute-force reference implementations shared by the
//! integration tests. Oracles are written as plain loops over units and
//! deliberately avoid the library's helpers.

#![allow(clippy::needless_range_loop)]
#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use didcurve::data::TwoPeriodDataset;
use didcurve::nuisance::{DensityFn, NuisanceModelSet};

pub fn expit(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Small synthetic two-period dataset with two covariates.
pub fn synthetic(n: usize, seed: u64) -> TwoPeriodDataset<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(2 * n);
    let (mut a, mut d, mut y0, mut y1) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for i in 0..n {
        let x1: f64 = rng.sample(StandardNormal);
        let x2: f64 = rng.sample(StandardNormal);
        // alternate groups so both are always present
        let treated = if i < 4 {
            i % 2 == 0
        } else {
            rng.random::<f64>() < expit(0.3 * x1)
        };
        let dose = 2.0 + 0.5 * x1 + rng.sample::<f64, _>(StandardNormal);
        let base = 5.0 + x2 + 0.2 * rng.sample::<f64, _>(StandardNormal);
        let trend = if treated {
            1.0 + 0.4 * dose + x1
        } else {
            -0.5 + x1
        } + 0.3 * rng.sample::<f64, _>(StandardNormal);
        x.extend([x1, x2]);
        a.push(treated);
        d.push(treated.then_some(dose));
        y0.push(base);
        y1.push(base + trend);
    }
    TwoPeriodDataset::new(
        (0..n).map(|i| format!("u{i}")).collect(),
        vec!["x1".into(), "x2".into()],
        x,
        a,
        d,
        y0,
        y1,
        (0, 1),
    )
    .unwrap()
}

pub fn mu1_fn(d: f64, x: &[f64]) -> f64 {
    0.5 + 0.3 * d + x[0] - 0.1 * d * x[1]
}

pub fn pi_d_fn(d: f64, x: &[f64]) -> f64 {
    normal_pdf((d - 2.0 - 0.4 * x[0]) / 1.2) / 1.2
}

pub fn pi_a_fn(x: &[f64]) -> f64 {
    expit(0.2 + 0.3 * x[0] - 0.1 * x[1])
}

pub fn mu0_fn(x: &[f64]) -> f64 {
    -0.4 + 0.9 * x[0] + 0.05 * x[1]
}

/// Closed-form nuisance functions, without marginals.
pub fn closed_form_models() -> NuisanceModelSet<f64> {
    NuisanceModelSet {
        pi_a: Some(Arc::new(pi_a_fn)),
        pi_d: Some(Arc::new(DensityFn(pi_d_fn))),
        mu1: Some(Arc::new(mu1_fn)),
        mu0: Some(Arc::new(mu0_fn)),
        m_marginal: None,
        f_marginal: None,
    }
}

pub fn treated_rows(data: &TwoPeriodDataset<f64>) -> Vec<usize> {
    (0..data.n()).filter(|&i| data.treated(i)).collect()
}

pub fn control_rows(data: &TwoPeriodDataset<f64>) -> Vec<usize> {
    (0..data.n()).filter(|&i| !data.treated(i)).collect()
}

/// `m(d)` as a direct average of `mu1_fn` over treated covariates.
pub fn brute_m(data: &TwoPeriodDataset<f64>, d: f64) -> f64 {
    let t = treated_rows(data);
    let mut s = 0.0;
    for &i in &t {
        s += mu1_fn(d, data.x_row(i));
    }
    s / t.len() as f64
}

pub fn brute_f(data: &TwoPeriodDataset<f64>, d: f64) -> f64 {
    let t = treated_rows(data);
    let mut s = 0.0;
    for &i in &t {
        s += pi_d_fn(d, data.x_row(i));
    }
    s / t.len() as f64
}

/// Pseudo-outcomes of the treated, in unit order, under the closed-form
/// models.
pub fn brute_xi(data: &TwoPeriodDataset<f64>) -> Vec<f64> {
    let t = treated_rows(data);
    let mut raw = Vec::new();
    for &i in &t {
        let d = data.dose(i).unwrap();
        raw.push(brute_f(data, d) / pi_d_fn(d, data.x_row(i)));
    }
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    let mut out = Vec::new();
    for (k, &i) in t.iter().enumerate() {
        let d = data.dose(i).unwrap();
        let resid = data.y1()[i] - data.y0()[i] - mu1_fn(d, data.x_row(i));
        out.push(brute_m(data, d) + raw[k] / mean * resid);
    }
    out
}

/// `(theta00, theta01)` under the closed-form models: the odds-weighted
/// control mean of trend residuals with weights scaled to mean one, and the
/// treated mean of `mu0`.
pub fn brute_theta0(data: &TwoPeriodDataset<f64>) -> (f64, f64) {
    let (t, c) = (treated_rows(data), control_rows(data));
    let theta01 = t.iter().map(|&i| mu0_fn(data.x_row(i))).sum::<f64>() / t.len() as f64;
    let odds: Vec<f64> = c
        .iter()
        .map(|&i| {
            let p = pi_a_fn(data.x_row(i));
            p / (1.0 - p)
        })
        .collect();
    let mean_odds = odds.iter().sum::<f64>() / odds.len() as f64;
    let mut s = 0.0;
    for (k, &i) in c.iter().enumerate() {
        s += odds[k] / mean_odds * (data.y1()[i] - data.y0()[i] - mu0_fn(data.x_row(i)));
    }
    (s / c.len() as f64, theta01)
}

/// Solves a small dense system by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

pub fn epanechnikov(u: f64) -> f64 {
    if u.abs() < 1.0 {
        0.75 * (1.0 - u * u)
    } else {
        0.0
    }
}

/// Local linear intercept from the explicit 2x2 normal equations, or `None`
/// with fewer than two in-window points.
pub fn direct_local_linear(
    xs: &[f64],
    ys: &[f64],
    h: f64,
    delta: f64,
    skip: Option<usize>,
) -> Option<f64> {
    let mut xtx = vec![vec![0.0; 2]; 2];
    let mut xty = vec![0.0; 2];
    let mut count = 0;
    for i in 0..xs.len() {
        if Some(i) == skip {
            continue;
        }
        let u = (xs[i] - delta) / h;
        let k = epanechnikov(u);
        if k <= 0.0 {
            continue;
        }
        count += 1;
        let row = [1.0, u];
        for r in 0..2 {
            xty[r] += k * row[r] * ys[i];
            for c in 0..2 {
                xtx[r][c] += k * row[r] * row[c];
            }
        }
    }
    let det = xtx[0][0] * xtx[1][1] - xtx[0][1] * xtx[1][0];
    if count < 2 || det <= 1e-12 * xtx[0][0] * xtx[1][1] {
        return None;
    }
    Some(gauss_solve(xtx, xty)[0])
}

/// Exhaustive leave-one-out sweep; ties go to the smaller bandwidth.
pub fn brute_bandwidth(xs: &[f64], ys: &[f64], grid: &[f64]) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    'candidates: for h in sorted {
        let mut err = 0.0;
        for i in 0..xs.len() {
            match direct_local_linear(xs, ys, h, xs[i], Some(i)) {
                Some(fit) => err += (ys[i] - fit).powi(2),
                None => continue 'candidates,
            }
        }
        if best.is_none_or(|(_, e)| err < e * (1.0 - 1e-10)) {
            best = Some((h, err));
        }
    }
    best.map(|(h, _)| h)
}
