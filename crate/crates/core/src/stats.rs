//! Small numerical helpers shared by the learning modules.

use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};

const CHUNK_ROWS: usize = 4096;

/// Column means and the centered second-moment matrix (divided by `n`).
#[derive(Debug, Clone)]
pub(crate) struct Moments {
    pub n: usize,
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
}

impl Moments {
    /// Two passes over the columns returned by `column(j)`, each of length `n`.
    pub fn from_columns<'a>(n: usize, k: usize, column: impl Fn(usize) -> &'a [f64]) -> Self {
        let mean: Vec<f64> = (0..k).map(|j| column(j).iter().sum::<f64>() / n.max(1) as f64).collect();
        let mut cov = DMatrix::zeros(k, k);
        let mut r0 = 0;
        while r0 < n {
            let len = CHUNK_ROWS.min(n - r0);
            let chunk = DMatrix::from_fn(len, k, |r, j| column(j)[r0 + r] - mean[j]);
            cov += chunk.tr_mul(&chunk);
            r0 += len;
        }
        cov /= n.max(1) as f64;
        Self { n, mean, cov }
    }

    pub fn sd(&self, j: usize) -> f64 {
        self.cov[(j, j)].max(0.0).sqrt()
    }

    /// A column is treated as constant when its spread is negligible next to its level.
    pub fn is_constant(&self, j: usize) -> bool {
        self.sd(j) <= 1e-12 * self.mean[j].abs().max(1.0)
    }

    /// Correlation submatrix over `idx` with `ridge` added to the diagonal.
    pub fn correlation(&self, idx: &[usize], ridge: f64) -> DMatrix<f64> {
        let sd: Vec<f64> = idx.iter().map(|&j| self.sd(j)).collect();
        DMatrix::from_fn(idx.len(), idx.len(), |a, b| {
            let r = self.cov[(idx[a], idx[b])] / (sd[a] * sd[b]);
            if a == b {
                1.0 + ridge
            } else {
                r
            }
        })
    }
}

/// Cholesky factor, refused when a pivot is non-finite or negligible next
/// to the largest diagonal entry.
pub(crate) fn cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let scale = m.diagonal().iter().copied().fold(0.0, f64::max);
    let c = Cholesky::new(m.clone())?;
    let ok = c.l_dirty().diagonal().iter().all(|d| d.is_finite() && d * d > 1e-14 * scale);
    ok.then_some(c)
}

pub(crate) fn log_det_spd(m: &DMatrix<f64>) -> Option<f64> {
    if m.nrows() == 0 {
        return Some(0.0);
    }
    let c = cholesky(m)?;
    Some(2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Indices whose weight in the eigenvector of the smallest eigenvalue is
/// material; these are the columns taking part in the near-linear dependence.
pub(crate) fn collinear_members(m: &DMatrix<f64>) -> Vec<usize> {
    let eig = SymmetricEigen::new(m.clone());
    let (k, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap_or((0, &0.0));
    let v = eig.eigenvectors.column(k);
    let mut out: Vec<usize> = (0..v.len()).filter(|&i| v[i].abs() > 0.1).collect();
    if out.is_empty() {
        out = (0..v.len()).collect();
    }
    out
}

pub(crate) fn smallest_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

pub(crate) fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

pub(crate) fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

/// Biased sample autocorrelation at `lag`.
pub(crate) fn autocorrelation(x: &[f64], lag: usize) -> f64 {
    let n = x.len();
    if lag >= n {
        return 0.0;
    }
    let m = mean(x);
    let c0: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
    if c0 == 0.0 {
        return 0.0;
    }
    let c: f64 = (0..n - lag).map(|k| (x[k] - m) * (x[k + lag] - m)).sum();
    c / c0
}

pub(crate) fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Nearest-rank quantile of an unsorted sample.
pub(crate) fn quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    values[rank - 1]
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_match_direct_formulas() {
        let a: Vec<f64> = (0..10_000).map(|k| (k as f64 * 0.37).sin() + 5.0).collect();
        let b: Vec<f64> = (0..10_000).map(|k| (k as f64 * 0.11).cos()).collect();
        let m = Moments::from_columns(a.len(), 2, |j| if j == 0 { &a } else { &b });
        assert!((m.mean[0] - mean(&a)).abs() < 1e-12);
        assert!((m.cov[(0, 0)] - variance(&a)).abs() < 1e-12);
        let r = m.correlation(&[0, 1], 0.0);
        assert!((r[(0, 1)] - correlation(&a, &b)).abs() < 1e-10);
    }

    #[test]
    fn quantile_nearest_rank() {
        let mut v: Vec<f64> = (1..=100).rev().map(f64::from).collect();
        assert_eq!(quantile(&mut v, 0.99), 99.0);
        assert_eq!(quantile(&mut v, 1.0), 100.0);
        assert_eq!(quantile(&mut v, 0.0), 1.0);
    }

    #[test]
    fn collinearity_is_located() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
        assert_eq!(collinear_members(&m), vec![1, 2]);
        assert!(log_det_spd(&m).is_none());
    }
}
