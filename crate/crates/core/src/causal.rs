//! Gaussian causation entropy and causality-based structure selection.
//!
//! The causation entropy from a candidate `f_m` to the tendency `u̇_i`,
//! conditioned on the remaining candidates, is under a joint Gaussian
//! approximation
//!
//! ```text
//! C = ½ ln det R_XY − ½ ln det R_Y − ½ ln det R_XYZ + ½ ln det R_YZ
//! ```
//!
//! which equals `−½ ln(1 − ρ²)` with `ρ` the partial correlation of `X` and
//! `Z` given `Y`. [`gaussian_causation_entropy`] evaluates the four log
//! determinants literally; [`causation_entropy_matrix`] reads all partial
//! correlations of one equation off a single precision matrix. Both work on
//! ridge-regularized correlation matrices, so rescaling a column changes
//! nothing.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::library::{DerivativeSeries, DesignMatrix, FunctionLibrary, LibraryEntry};
use crate::model::{ModelSpec, StateVarSet, Var};
use crate::stats::{self, Moments};

/// Ridge added to the diagonal of every correlation matrix (trace/dim = 1).
pub const RIDGE: f64 = 1e-8;

/// Minimum number of samples per candidate column.
pub const LENGTH_FLOOR_PER_CANDIDATE: usize = 50;

#[derive(Debug, Clone)]
pub struct CausationEntropyMatrix {
    /// `equations × candidates`, in nats.
    pub values: DMatrix<f64>,
    pub equations: StateVarSet,
    pub library: FunctionLibrary,
    /// Per-entry null cutoffs once a bootstrap has been run.
    pub null_thresholds: Option<NullThresholds>,
    /// Entries that came out negative (or above one in squared correlation)
    /// through round-off and were clipped.
    pub clipped: usize,
    moments: Arc<Moments>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NullThresholds {
    pub params: BootstrapParams,
    pub values: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapParams {
    pub n_shuffles: usize,
    pub block_len: usize,
    pub quantile: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for BootstrapParams {
    fn default() -> Self {
        Self { n_shuffles: 100, block_len: 100, quantile: 0.99, seed: 0 }
    }
}

impl BootstrapParams {
    fn validate(&self) -> Result<()> {
        if self.n_shuffles == 0 || self.block_len == 0 || !(0.0..=1.0).contains(&self.quantile) {
            return Err(Error::InvalidConfig(format!("invalid bootstrap parameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SelectionPolicy {
    Absolute { threshold: f64 },
    Bootstrap(BootstrapParams),
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        SelectionPolicy::Bootstrap(BootstrapParams::default())
    }
}

/// Which candidates enter which equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructurePattern {
    pub equations: StateVarSet,
    pub library: FunctionLibrary,
    /// `mask[i][m]`: candidate `m` enters the equation of `equations[i]`.
    pub mask: Vec<Vec<bool>>,
}

impl StructurePattern {
    pub fn new(equations: StateVarSet, library: FunctionLibrary, mask: Vec<Vec<bool>>) -> Result<Self> {
        if mask.len() != equations.len() {
            return Err(Error::DimensionMismatch { expected: equations.len(), got: mask.len() });
        }
        if let Some(row) = mask.iter().find(|r| r.len() != library.len()) {
            return Err(Error::DimensionMismatch { expected: library.len(), got: row.len() });
        }
        Ok(Self { equations, library, mask })
    }

    /// The terms of `model` located in `library`; equations absent from the
    /// model are left empty.
    pub fn from_model(model: &ModelSpec, equations: &StateVarSet, library: &FunctionLibrary) -> Result<Self> {
        let mut mask = vec![vec![false; library.len()]; equations.len()];
        for (i, &v) in equations.vars().iter().enumerate() {
            let Some(eq) = model.vars.index_of(v) else { continue };
            for term in &model.equations[eq] {
                if term.coefficient == 0.0 {
                    continue;
                }
                let entry = LibraryEntry::new(term.monomial.clone(), term.seasonal);
                let m = library
                    .position(&entry)
                    .ok_or_else(|| Error::InvalidModel(format!("term {} is not in the library", term.label())))?;
                mask[i][m] = true;
            }
        }
        Self::new(equations.clone(), library.clone(), mask)
    }

    pub fn count(&self) -> usize {
        self.mask.iter().flatten().filter(|&&b| b).count()
    }

    pub fn selected(&self, eq: usize) -> Vec<usize> {
        (0..self.library.len()).filter(|&m| self.mask[eq][m]).collect()
    }

    /// Number of entries on which the two masks disagree.
    pub fn symmetric_difference(&self, other: &StructurePattern) -> Result<usize> {
        if self.mask.len() != other.mask.len() || self.library.len() != other.library.len() {
            return Err(Error::DimensionMismatch { expected: self.mask.len(), got: other.mask.len() });
        }
        Ok(self
            .mask
            .iter()
            .flatten()
            .zip(other.mask.iter().flatten())
            .filter(|(a, b)| a != b)
            .count())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(header(self.library.len()))?;
        for (i, v) in self.equations.vars().iter().enumerate() {
            let mut row = vec![v.name()];
            row.extend(self.mask[i].iter().map(|&b| u8::from(b).to_string()));
            out.write_record(row)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn header(m: usize) -> Vec<String> {
    std::iter::once("equation".to_string()).chain((0..m).map(|j| j.to_string())).collect()
}

fn column(m: &DMatrix<f64>, j: usize) -> &[f64] {
    let n = m.nrows();
    &m.as_slice()[j * n..(j + 1) * n]
}

fn conditioning_error(names: &[String], members: Vec<usize>) -> Error {
    Error::Conditioning { columns: members.into_iter().map(|k| names[k].clone()).collect() }
}

/// Causation entropy from `z` to `x` given `y`, via four log determinants.
pub fn gaussian_causation_entropy(x: &[f64], y: &[&[f64]], z: &[f64]) -> Result<f64> {
    let n = x.len();
    if z.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: z.len() });
    }
    if let Some(c) = y.iter().find(|c| c.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, got: c.len() });
    }
    let needed = LENGTH_FLOOR_PER_CANDIDATE * (y.len() + 1);
    if n < needed {
        return Err(Error::InsufficientData { needed, available: n });
    }

    // Column order: y..., z, x.
    let k = y.len() + 2;
    let moments = Moments::from_columns(n, k, |j| match j {
        j if j < y.len() => y[j],
        j if j == y.len() => z,
        _ => x,
    });
    let ix = k - 1;
    let iz = k - 2;
    if moments.is_constant(ix) {
        return Err(Error::ZeroVariance("x".into()));
    }
    if moments.is_constant(iz) {
        return Ok(0.0);
    }
    // Constant conditioning columns carry no information about fluctuations.
    let iy: Vec<usize> = (0..y.len()).filter(|&j| !moments.is_constant(j)).collect();

    let mut names: Vec<String> = (0..y.len()).map(|j| format!("y{j}")).collect();
    names.push("z".into());
    names.push("x".into());

    let full: Vec<usize> = iy.iter().copied().chain([iz, ix]).collect();
    let r = moments.correlation(&full, RIDGE);
    let pos = |sub: &[usize]| -> Vec<usize> { sub.iter().map(|j| full.iter().position(|f| f == j).unwrap()).collect() };
    let logdet = |sub: &[usize]| -> Result<f64> {
        let p = pos(sub);
        let m = r.select_rows(&p).select_columns(&p);
        stats::log_det_spd(&m).ok_or_else(|| {
            conditioning_error(&names, stats::collinear_members(&m).into_iter().map(|q| sub[q]).collect())
        })
    };
    let with = |extra: &[usize]| -> Vec<usize> { iy.iter().copied().chain(extra.iter().copied()).collect() };
    let c = 0.5 * logdet(&with(&[ix]))? - 0.5 * logdet(&iy)? - 0.5 * logdet(&with(&[ix, iz]))?
        + 0.5 * logdet(&with(&[iz]))?;
    Ok(c.max(0.0))
}

/// Moments of the design columns followed by the derivative columns.
fn joint_moments(derivs: &DerivativeSeries, design: &DesignMatrix) -> Result<Moments> {
    let n = design.rows();
    if derivs.rows() != n {
        return Err(Error::DimensionMismatch { expected: n, got: derivs.rows() });
    }
    let m = design.library.len();
    let k = m + derivs.vars.len();
    Ok(Moments::from_columns(n, k, |j| {
        if j < m {
            column(&design.values, j)
        } else {
            column(&derivs.values, j - m)
        }
    }))
}

pub fn causation_entropy_matrix(derivs: &DerivativeSeries, design: &DesignMatrix) -> Result<CausationEntropyMatrix> {
    let n = design.rows();
    let m = design.library.len();
    let needed = LENGTH_FLOOR_PER_CANDIDATE * m;
    if n < needed {
        return Err(Error::InsufficientData { needed, available: n });
    }
    let moments = joint_moments(derivs, design)?;
    let labels = design.library.labels();
    let active: Vec<usize> = (0..m).filter(|&j| !moments.is_constant(j)).collect();
    for (j, e) in design.library.entries.iter().enumerate() {
        if moments.is_constant(j) && !e.is_constant() {
            return Err(Error::Conditioning { columns: vec![labels[j].clone()] });
        }
    }

    let n_eq = derivs.vars.len();
    let mut values = DMatrix::zeros(n_eq, m);
    let mut clipped = 0;
    for i in 0..n_eq {
        let ix = m + i;
        if moments.is_constant(ix) {
            return Err(Error::ZeroVariance(derivs.vars.vars()[i].name()));
        }
        let idx: Vec<usize> = active.iter().copied().chain([ix]).collect();
        let r = moments.correlation(&idx, RIDGE);
        let chol = stats::cholesky(&r).ok_or_else(|| {
            let mut names: Vec<String> = active.iter().map(|&j| labels[j].clone()).collect();
            names.push(format!("d{}/dt", derivs.vars.vars()[i]));
            conditioning_error(&names, stats::collinear_members(&r))
        })?;
        let p = chol.inverse();
        let last = idx.len() - 1;
        for (a, &j) in active.iter().enumerate() {
            let rho2 = p[(last, a)] * p[(last, a)] / (p[(last, last)] * p[(a, a)]);
            if !(0.0..1.0).contains(&rho2) {
                clipped += 1;
            }
            let rho2 = rho2.clamp(0.0, 1.0 - 1e-16);
            values[(i, j)] = -0.5 * (-rho2).ln_1p();
        }
    }
    if clipped > 0 {
        log::warn!("clipped {clipped} causation entropies to the valid range");
    }
    Ok(CausationEntropyMatrix {
        values,
        equations: derivs.vars.clone(),
        library: design.library.clone(),
        null_thresholds: None,
        clipped,
        moments: Arc::new(moments),
    })
}

impl CausationEntropyMatrix {
    /// Per-entry null cutoffs from block-shuffled residualized candidates.
    ///
    /// For entry `(i, m)` the statistic is the correlation between the
    /// tendency and the candidate, both with the other candidates regressed
    /// out. The candidate residual is shuffled in blocks of `block_len`
    /// samples, which keeps short-range autocorrelation while breaking any
    /// alignment with the tendency.
    pub fn compute_null(&mut self, derivs: &DerivativeSeries, design: &DesignMatrix, params: BootstrapParams) -> Result<()> {
        params.validate()?;
        if design.library != self.library || derivs.vars != self.equations {
            return Err(Error::InvalidConfig("data do not match the entropy matrix".into()));
        }
        let n = design.rows();
        let mo = &*self.moments;
        if mo.n != n {
            return Err(Error::DimensionMismatch { expected: mo.n, got: n });
        }
        let m = self.library.len();
        let active: Vec<usize> = (0..m).filter(|&j| !mo.is_constant(j)).collect();
        let r_lib = mo.correlation(&active, RIDGE);
        let chol = stats::cholesky(&r_lib).ok_or_else(|| {
            let labels = self.library.labels();
            let names: Vec<String> = active.iter().map(|&j| labels[j].clone()).collect();
            conditioning_error(&names, stats::collinear_members(&r_lib))
        })?;
        let p_lib = chol.inverse();
        let sd: Vec<f64> = (0..mo.mean.len()).map(|j| mo.sd(j)).collect();

        // Standardized combination Σ w_j (D_j − μ_j)/sd_j of the active columns.
        let combine = |w: &DVector<f64>| -> Vec<f64> {
            let mut full = DVector::zeros(m);
            let mut shift = 0.0;
            for (a, &j) in active.iter().enumerate() {
                full[j] = w[a] / sd[j];
                shift += full[j] * mo.mean[j];
            }
            let mut out = &design.values * full;
            out.add_scalar_mut(-shift);
            out.data.into()
        };

        let n_eq = self.equations.len();
        let mut resid_x = Vec::with_capacity(n_eq);
        let mut gamma = Vec::with_capacity(n_eq);
        for i in 0..n_eq {
            let ix = m + i;
            let c = DVector::from_iterator(active.len(), active.iter().map(|&j| mo.cov[(j, ix)] / (sd[j] * sd[ix])));
            let b = chol.solve(&c);
            let fit = combine(&b);
            let x = column(&derivs.values, i);
            let e: Vec<f64> = x.iter().zip(&fit).map(|(xv, f)| (xv - mo.mean[ix]) / sd[ix] - f).collect();
            resid_x.push(e);
            gamma.push(b);
        }
        let var_e: Vec<f64> = resid_x.iter().map(|e| stats::dot(e, e) / n as f64).collect();

        let blocks: Vec<(usize, usize)> =
            (0..n.div_ceil(params.block_len)).map(|b| (b * params.block_len, ((b + 1) * params.block_len).min(n))).collect();

        let per_candidate: Vec<(usize, Vec<f64>)> = active
            .par_iter()
            .enumerate()
            .map(|(a, &j)| {
                let w = p_lib.column(a) / p_lib[(a, a)];
                let r = combine(&w.into_owned());
                let var_r = stats::dot(&r, &r) / n as f64;
                let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
                rng.set_stream(j as u64);
                let mut order: Vec<usize> = (0..blocks.len()).collect();
                let mut shuffled = vec![0.0; n];
                let mut null = vec![Vec::with_capacity(params.n_shuffles); n_eq];
                for _ in 0..params.n_shuffles {
                    order.shuffle(&mut rng);
                    let mut k = 0;
                    for &b in &order {
                        let (s, e) = blocks[b];
                        shuffled[k..k + e - s].copy_from_slice(&r[s..e]);
                        k += e - s;
                    }
                    let c_rr = stats::dot(&r, &shuffled) / n as f64;
                    for i in 0..n_eq {
                        let g = gamma[i][a];
                        let c_er = stats::dot(&resid_x[i], &shuffled) / n as f64;
                        let denom = ((var_e[i] + g * g * var_r) * var_r).sqrt();
                        let rho = if denom > 0.0 { (c_er + g * c_rr) / denom } else { 0.0 };
                        let rho2 = (rho * rho).min(1.0 - 1e-16);
                        null[i].push(-0.5 * (-rho2).ln_1p());
                    }
                }
                let cut = null.into_iter().map(|mut v| stats::quantile(&mut v, params.quantile)).collect();
                (j, cut)
            })
            .collect();

        let mut values = DMatrix::zeros(n_eq, m);
        for (j, cut) in per_candidate {
            for (i, c) in cut.into_iter().enumerate() {
                values[(i, j)] = c;
            }
        }
        self.null_thresholds = Some(NullThresholds { params, values });
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(header(self.library.len()))?;
        for (i, v) in self.equations.vars().iter().enumerate() {
            let mut row = vec![v.name()];
            row.extend(self.values.row(i).iter().map(|x| format!("{x:e}")));
            out.write_record(row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn value(&self, eq: Var, entry: &LibraryEntry) -> Option<f64> {
        Some(self.values[(self.equations.index_of(eq)?, self.library.position(entry)?)])
    }
}

/// Apply a selection policy. The constant candidate is always kept, since
/// its causation entropy is zero by construction.
pub fn select_structure(cem: &CausationEntropyMatrix, policy: &SelectionPolicy) -> Result<StructurePattern> {
    let (n_eq, m) = cem.values.shape();
    let constant: Vec<bool> = cem.library.entries.iter().map(LibraryEntry::is_constant).collect();
    let mask = match policy {
        SelectionPolicy::Absolute { threshold } => {
            if !threshold.is_finite() {
                return Err(Error::InvalidConfig("threshold must be finite".into()));
            }
            (0..n_eq).map(|i| (0..m).map(|j| cem.values[(i, j)] >= *threshold || constant[j]).collect()).collect()
        }
        SelectionPolicy::Bootstrap(params) => {
            params.validate()?;
            let null = cem
                .null_thresholds
                .as_ref()
                .filter(|t| t.params == *params)
                .ok_or_else(|| Error::InvalidConfig("bootstrap thresholds have not been computed for these parameters".into()))?;
            (0..n_eq)
                .map(|i| (0..m).map(|j| cem.values[(i, j)] > null.values[(i, j)] || constant[j]).collect())
                .collect()
        }
    };
    StructurePattern::new(cem.equations.clone(), cem.library.clone(), mask)
}

/// Entropy matrix plus selection, running the bootstrap when the policy asks for it.
pub fn learn_structure(
    derivs: &DerivativeSeries,
    design: &DesignMatrix,
    policy: &SelectionPolicy,
) -> Result<(CausationEntropyMatrix, StructurePattern)> {
    let mut cem = causation_entropy_matrix(derivs, design)?;
    if let SelectionPolicy::Bootstrap(p) = policy {
        cem.compute_null(derivs, design, *p)?;
    }
    let pattern = select_structure(&cem, policy)?;
    Ok((cem, pattern))
}
