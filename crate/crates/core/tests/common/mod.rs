//! Independent oracles shared by integration tests.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// Exact discrete Kalman filter and Rauch–Tung–Striebel smoother for
/// `x_{k+1} = F x_k + w`, `w ~ N(0, Q)`, observing `y_k = x_k[h] + v`,
/// `v ~ N(0, r²)`, with Gaussian prior `N(m0, P0)` at the first observation.
pub struct LinearSmoother {
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

/// One-step Euler–Maruyama transition repeated `steps` times: returns the
/// exact transition matrix and accumulated noise covariance.
pub fn euler_transition(a: &DMatrix<f64>, sigma: &[f64], dt: f64, steps: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = a.nrows();
    let m = DMatrix::identity(d, d) + a * dt;
    let qd = DMatrix::from_diagonal(&DVector::from_iterator(d, sigma.iter().map(|s| s * s * dt)));
    let mut f = DMatrix::identity(d, d);
    let mut q = DMatrix::zeros(d, d);
    for _ in 0..steps {
        q = &m * q * m.transpose() + &qd;
        f = &m * f;
    }
    (f, q)
}

pub fn exact_smoother(
    f: &DMatrix<f64>,
    q: &DMatrix<f64>,
    h: usize,
    r: f64,
    m0: DVector<f64>,
    p0: DMatrix<f64>,
    ys: &[f64],
) -> LinearSmoother {
    let d = f.nrows();
    let mut ma = Vec::new();
    let mut pa = Vec::new();
    let mut mf = Vec::new();
    let mut pf = Vec::new();
    let (mut m, mut p) = (m0, p0);
    for (k, &y) in ys.iter().enumerate() {
        if k > 0 {
            m = f * &m;
            p = f * &p * f.transpose() + q;
        }
        mf.push(m.clone());
        pf.push(p.clone());
        let s = p[(h, h)] + r * r;
        let gain = p.column(h) / s;
        m = &m + &gain * (y - m[h]);
        p = &p - &gain * p.row(h);
        p = (&p + p.transpose()) * 0.5;
        ma.push(m.clone());
        pa.push(p.clone());
    }
    let t = ys.len();
    let mut means = vec![DVector::zeros(d); t];
    let mut covs = vec![DMatrix::zeros(d, d); t];
    means[t - 1] = ma[t - 1].clone();
    covs[t - 1] = pa[t - 1].clone();
    for k in (0..t - 1).rev() {
        let j = &pa[k] * f.transpose() * pf[k + 1].clone().try_inverse().unwrap();
        means[k] = &ma[k] + &j * (&means[k + 1] - &mf[k + 1]);
        covs[k] = &pa[k] + &j * (&covs[k + 1] - &pf[k + 1]) * j.transpose();
    }
    LinearSmoother { means, covs }
}

pub fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}
