//! Ensemble Kalman smoothing of partially observed model trajectories.
//!
//! A forward ensemble Kalman filter with perturbed observations stores the
//! forecast and analysis ensembles at every observation time; a backward
//! ensemble Rauch–Tung–Striebel pass then updates each member with the gain
//! `J_k = Cov(x^a_k, x^f_{k+1}) Cov(x^f_{k+1})⁻¹`. Smoothed members are draws
//! from the conditional distribution of the full state path given the
//! observations (exactly so for linear Gaussian models as the ensemble grows).

use std::io::Write;

use nalgebra::{DMatrix, DVector, SVD};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{em_step, path_rng, CompiledModel, ModelSpec, StateVarSet, Trajectory, Var, REFLECT_EPS};
use crate::stats;

pub const MIN_ENSEMBLE: usize = 20;
pub const DEFAULT_INFLATION: f64 = 1.02;
/// Default observation error as a fraction of each series' standard deviation.
pub const DEFAULT_OBS_NOISE_FRACTION: f64 = 0.05;
pub const COLLAPSE_SPREAD: f64 = 1e-10;

/// Observed variables on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub vars: StateVarSet,
    pub times: Vec<f64>,
    /// `times × vars`.
    pub values: DMatrix<f64>,
    pub noise_std: Vec<f64>,
}

impl ObservationSet {
    pub fn new(vars: StateVarSet, times: Vec<f64>, values: DMatrix<f64>, noise_std: Vec<f64>) -> Result<Self> {
        if values.shape() != (times.len(), vars.len()) {
            return Err(Error::DimensionMismatch { expected: times.len() * vars.len(), got: values.len() });
        }
        if noise_std.len() != vars.len() {
            return Err(Error::DimensionMismatch { expected: vars.len(), got: noise_std.len() });
        }
        if let Some(s) = noise_std.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::InvalidConfig(format!("observation noise must be positive, got {s}")));
        }
        if times.len() < 2 {
            return Err(Error::InsufficientData { needed: 2, available: times.len() });
        }
        let h = times[1] - times[0];
        if !(h > 0.0) {
            return Err(Error::NonUniformSpacing { index: 1 });
        }
        for (k, w) in times.windows(2).enumerate() {
            if ((w[1] - w[0]) - h).abs() > 1e-9 * h.max(w[1].abs()) {
                return Err(Error::NonUniformSpacing { index: k + 1 });
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("observations must be finite".into()));
        }
        Ok(Self { vars, times, values, noise_std })
    }

    /// Observe `vars` of a trajectory; without explicit noise levels each
    /// variable gets the default fraction of its standard deviation.
    pub fn from_trajectory(trajectory: &Trajectory, vars: &[Var], noise_std: Option<Vec<f64>>) -> Result<Self> {
        let sub = trajectory.select(vars)?;
        let values = DMatrix::from_fn(sub.len(), vars.len(), |k, j| sub.row(k)[j]);
        let noise = match noise_std {
            Some(n) => n,
            None => (0..vars.len())
                .map(|j| DEFAULT_OBS_NOISE_FRACTION * stats::variance(&sub.column_at(j)).sqrt())
                .collect(),
        };
        Self::new(sub.vars.clone(), sub.times.clone(), values, noise)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        self.times[1] - self.times[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialEnsemble {
    /// Members spun up from rest for `spin_up` time units ending at the
    /// first observation time.
    Climatology { spin_up: f64 },
    /// Independent Gaussian draws per variable.
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmootherConfig {
    pub ensemble_size: usize,
    pub seed: u64,
    /// Multiplicative inflation of forecast anomalies before each analysis.
    pub inflation: f64,
    /// Model step between observations.
    pub dt: f64,
    pub initial: InitialEnsemble,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        Self {
            ensemble_size: 100,
            seed: 0,
            inflation: DEFAULT_INFLATION,
            dt: 0.01,
            initial: InitialEnsemble::Climatology { spin_up: 120.0 },
        }
    }
}

/// Posterior mean and spread of the hidden variables.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSeries {
    pub times: Vec<f64>,
    pub vars: StateVarSet,
    pub mean: DMatrix<f64>,
    pub std: DMatrix<f64>,
    pub ensemble_size: usize,
}

impl PosteriorSeries {
    pub fn mean_of(&self, v: Var) -> Option<Vec<f64>> {
        self.vars.index_of(v).map(|j| self.mean.column(j).iter().copied().collect())
    }

    pub fn std_of(&self, v: Var) -> Option<Vec<f64>> {
        self.vars.index_of(v).map(|j| self.std.column(j).iter().copied().collect())
    }

    /// Long format `time,var,mean,std`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["time", "var", "mean", "std"])?;
        for (k, t) in self.times.iter().enumerate() {
            for (j, v) in self.vars.vars().iter().enumerate() {
                out.write_record([format!("{t:e}"), v.name(), format!("{:e}", self.mean[(k, j)]), format!("{:e}", self.std[(k, j)])])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Every smoothed member over the full state at the observation times.
#[derive(Debug, Clone)]
pub struct SmootherOutput {
    pub times: Vec<f64>,
    pub vars: StateVarSet,
    /// One `members × vars` matrix per observation time.
    pub smoothed: Vec<DMatrix<f64>>,
    /// Filter analyses, same layout.
    pub filtered: Vec<DMatrix<f64>>,
}

impl SmootherOutput {
    pub fn ensemble_size(&self) -> usize {
        self.smoothed[0].nrows()
    }

    pub fn posterior(&self, hidden: &[Var]) -> Result<PosteriorSeries> {
        let idx = hidden
            .iter()
            .map(|v| self.vars.index_of(*v).ok_or_else(|| Error::UnknownVariable(v.name())))
            .collect::<Result<Vec<_>>>()?;
        let t = self.times.len();
        let mut mean = DMatrix::zeros(t, idx.len());
        let mut std = DMatrix::zeros(t, idx.len());
        for (k, e) in self.smoothed.iter().enumerate() {
            for (a, &j) in idx.iter().enumerate() {
                let col: Vec<f64> = e.column(j).iter().copied().collect();
                mean[(k, a)] = stats::mean(&col);
                std[(k, a)] = sample_variance(&col).sqrt();
            }
        }
        Ok(PosteriorSeries {
            times: self.times.clone(),
            vars: StateVarSet::new(hidden.to_vec())?,
            mean,
            std,
            ensemble_size: self.ensemble_size(),
        })
    }

    /// Member `j` as a trajectory over `vars`.
    pub fn member(&self, j: usize, vars: &[Var]) -> Result<Trajectory> {
        let idx = vars
            .iter()
            .map(|v| self.vars.index_of(*v).ok_or_else(|| Error::UnknownVariable(v.name())))
            .collect::<Result<Vec<_>>>()?;
        let values = self.smoothed.iter().flat_map(|e| idx.iter().map(move |&i| e[(j, i)])).collect();
        Trajectory::new(StateVarSet::new(vars.to_vec())?, self.times.clone(), values, 0)
    }
}

fn sample_variance(x: &[f64]) -> f64 {
    let m = stats::mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len().max(2) - 1) as f64
}

struct Member {
    x: Vec<f64>,
    rng: ChaCha8Rng,
}

fn clamp_bounds(model: &CompiledModel, x: &mut [f64]) {
    for (i, b) in model.bounds.iter().enumerate() {
        if let Some((lo, hi)) = *b {
            x[i] = x[i].clamp(lo + REFLECT_EPS, hi - REFLECT_EPS);
        }
    }
}

fn propagate(model: &CompiledModel, members: &mut [Member], t0: f64, steps: usize, dt: f64) -> Result<()> {
    let d = model.dim();
    let sqdt = dt.sqrt();
    members.par_iter_mut().try_for_each(|m| {
        let (mut drift, mut diff) = (vec![0.0; d], vec![0.0; d]);
        for s in 0..steps {
            em_step(model, &mut m.x, t0 + s as f64 * dt, dt, sqdt, &mut drift, &mut diff, &mut m.rng);
        }
        if m.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationBlowup { time: t0 + steps as f64 * dt, state: m.x.clone() });
        }
        Ok(())
    })
}

fn ensemble_matrix(members: &[Member]) -> DMatrix<f64> {
    let d = members[0].x.len();
    DMatrix::from_fn(members.len(), d, |j, i| members[j].x[i])
}

fn column_means(e: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(e.ncols(), e.column_iter().map(|c| c.mean()))
}

fn anomalies(e: &DMatrix<f64>) -> DMatrix<f64> {
    let m = column_means(e);
    DMatrix::from_fn(e.nrows(), e.ncols(), |j, i| e[(j, i)] - m[i])
}

/// Centered perturbations with no sample correlation to the forecast
/// anomalies `ah` and unit sample variance per column, which removes most of
/// the sampling noise that perturbed observations add to the analysis.
fn exact_second_order(perturbations: &DMatrix<f64>, ah: &DMatrix<f64>) -> DMatrix<f64> {
    let n = perturbations.nrows();
    let mut eps = anomalies(perturbations);
    if n > ah.ncols() + eps.ncols() + 1 {
        let g = ah.tr_mul(ah);
        if let Some(chol) = stats::cholesky(&g) {
            let coef = chol.solve(&ah.tr_mul(&eps));
            eps -= ah * coef;
        }
    }
    for mut col in eps.column_iter_mut() {
        let sd = (col.norm_squared() / (n - 1) as f64).sqrt();
        if sd > 0.0 {
            col /= sd;
        }
    }
    eps
}

/// Perturbed-observation analysis of a forecast ensemble (`members × vars`).
///
/// `perturbations` holds one standard-normal draw per member and observed
/// variable; they are centered, decorrelated from the forecast and rescaled
/// before use. Reordering members together with
/// their perturbations reorders the result and leaves its mean unchanged.
pub fn analysis(
    forecast: &DMatrix<f64>,
    observed: &[usize],
    y: &[f64],
    noise_std: &[f64],
    perturbations: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let (n, _) = forecast.shape();
    let p = observed.len();
    let a = anomalies(forecast);
    let ah = a.select_columns(observed);
    let pht = a.tr_mul(&ah) / (n - 1) as f64;
    let mut s = ah.tr_mul(&ah) / (n - 1) as f64;
    for q in 0..p {
        s[(q, q)] += noise_std[q] * noise_std[q];
    }
    let chol = stats::cholesky(&s).ok_or_else(|| Error::Conditioning {
        columns: observed.iter().map(|i| i.to_string()).collect(),
    })?;
    let eps = exact_second_order(perturbations, &ah);
    let mut innov = DMatrix::zeros(p, n);
    for j in 0..n {
        for q in 0..p {
            innov[(q, j)] = y[q] + noise_std[q] * eps[(j, q)] - forecast[(j, observed[q])];
        }
    }
    let gain_innov = &pht * chol.solve(&innov);
    Ok(forecast + gain_innov.transpose())
}

/// Backward ensemble RTS pass over stored analysis and forecast ensembles.
/// `forecasts[k]` is the forecast valid at the time of `analyses[k]`
/// (`forecasts[0]` is unused).
pub fn backward_pass(analyses: &[DMatrix<f64>], forecasts: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    let t = analyses.len();
    let mut smoothed = vec![DMatrix::zeros(0, 0); t];
    smoothed[t - 1] = analyses[t - 1].clone();
    for k in (0..t - 1).rev() {
        let n = analyses[k].nrows();
        let aa = anomalies(&analyses[k]);
        let af = anomalies(&forecasts[k + 1]);
        let c_af = aa.tr_mul(&af) / (n - 1) as f64;
        let c_ff = af.tr_mul(&af) / (n - 1) as f64;
        let scale = c_ff.trace().max(f64::MIN_POSITIVE);
        let c_ff_inv = SVD::new(c_ff, true, true)
            .pseudo_inverse(1e-12 * scale)
            .expect("SVD computed with both factors");
        let gain = c_af * c_ff_inv;
        let delta = &smoothed[k + 1] - &forecasts[k + 1];
        smoothed[k] = &analyses[k] + delta * gain.transpose();
    }
    smoothed
}

/// Forward filter plus backward smoother over the full model state.
pub fn smooth(model: &ModelSpec, obs: &ObservationSet, config: &SmootherConfig) -> Result<SmootherOutput> {
    let n = config.ensemble_size;
    if n < MIN_ENSEMBLE {
        return Err(Error::InvalidConfig(format!("ensemble size must be at least {MIN_ENSEMBLE}")));
    }
    if !(config.inflation >= 1.0 && config.inflation.is_finite()) {
        return Err(Error::InvalidConfig("inflation must be ≥ 1".into()));
    }
    if !(config.dt > 0.0) {
        return Err(Error::InvalidConfig("dt must be positive".into()));
    }
    let observed = obs
        .vars
        .vars()
        .iter()
        .map(|v| model.vars.index_of(*v).ok_or_else(|| Error::UnknownVariable(v.name())))
        .collect::<Result<Vec<_>>>()?;
    let h = obs.spacing();
    let steps = (h / config.dt).round() as usize;
    if steps == 0 || (steps as f64 * config.dt - h).abs() > 1e-6 * h {
        return Err(Error::InvalidConfig(format!("observation spacing {h} is not a multiple of dt {}", config.dt)));
    }
    let compiled = CompiledModel::new(model)?;
    let d = compiled.dim();
    let t0 = obs.times[0];

    let mut members: Vec<Member> = (0..n)
        .map(|j| Member { x: model.rest_state(), rng: path_rng(config.seed, j as u64) })
        .collect();
    match &config.initial {
        InitialEnsemble::Climatology { spin_up } => {
            let spin = (spin_up / config.dt).round() as usize;
            propagate(&compiled, &mut members, t0 - spin as f64 * config.dt, spin, config.dt)?;
        }
        InitialEnsemble::Gaussian { mean, std } => {
            if mean.len() != d || std.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: mean.len().min(std.len()) });
            }
            // Draws matched to the prescribed mean and spread.
            let mut z = DMatrix::from_fn(n, d, |j, _| StandardNormal.sample(&mut members[j].rng));
            z = anomalies(&z);
            for (i, mut col) in z.column_iter_mut().enumerate() {
                let sd = (col.norm_squared() / (n - 1) as f64).sqrt();
                col *= if sd > 0.0 { std[i] / sd } else { 0.0 };
            }
            for (j, m) in members.iter_mut().enumerate() {
                for i in 0..d {
                    m.x[i] = mean[i] + z[(j, i)];
                }
                clamp_bounds(&compiled, &mut m.x);
            }
        }
    }

    let mut pert_rng = path_rng(config.seed, n as u64 + 1);
    let p = observed.len();
    let mut analyses = Vec::with_capacity(obs.len());
    let mut forecasts = Vec::with_capacity(obs.len());
    for k in 0..obs.len() {
        if k > 0 {
            propagate(&compiled, &mut members, obs.times[k - 1], steps, config.dt)?;
        }
        let mut f = ensemble_matrix(&members);
        if config.inflation != 1.0 {
            let mean = column_means(&f);
            for j in 0..n {
                for i in 0..d {
                    f[(j, i)] = mean[i] + config.inflation * (f[(j, i)] - mean[i]);
                }
            }
        }
        let spread = anomalies(&f).column_iter().map(|c| c.norm()).fold(0.0, f64::max) / ((n - 1) as f64).sqrt();
        if spread < COLLAPSE_SPREAD {
            return Err(Error::EnsembleCollapse { step: k, spread });
        }
        let perts = DMatrix::from_fn(n, p, |_, _| pert_rng.sample::<f64, _>(StandardNormal));
        let y: Vec<f64> = obs.values.row(k).iter().copied().collect();
        let mut a = analysis(&f, &observed, &y, &obs.noise_std, &perts)?;
        for (j, m) in members.iter_mut().enumerate() {
            for i in 0..d {
                m.x[i] = a[(j, i)];
            }
            clamp_bounds(&compiled, &mut m.x);
            for i in 0..d {
                a[(j, i)] = m.x[i];
            }
        }
        analyses.push(a);
        forecasts.push(f);
    }

    let mut smoothed = backward_pass(&analyses, &forecasts);
    for e in &mut smoothed {
        for j in 0..n {
            let mut row: Vec<f64> = e.row(j).iter().copied().collect();
            clamp_bounds(&compiled, &mut row);
            for i in 0..d {
                e[(j, i)] = row[i];
            }
        }
    }
    Ok(SmootherOutput { times: obs.times.clone(), vars: model.vars.clone(), smoothed, filtered: analyses })
}

fn hidden_vars(model: &ModelSpec, obs: &ObservationSet) -> Vec<Var> {
    model.vars.vars().iter().copied().filter(|v| !obs.vars.contains(*v)).collect()
}

/// Posterior mean and spread of every unobserved model variable.
pub fn enks_recover(model: &ModelSpec, obs: &ObservationSet, ensemble_size: usize, seed: u64) -> Result<PosteriorSeries> {
    let config = SmootherConfig { ensemble_size, seed, ..SmootherConfig::default() };
    enks_recover_with(model, obs, &config)
}

pub fn enks_recover_with(model: &ModelSpec, obs: &ObservationSet, config: &SmootherConfig) -> Result<PosteriorSeries> {
    let hidden = hidden_vars(model, obs);
    if hidden.is_empty() {
        return smooth(model, obs, config)?.posterior(obs.vars.vars());
    }
    smooth(model, obs, config)?.posterior(&hidden)
}

/// Smoothed member trajectories of `hidden` given the observations.
pub fn conditional_sample(
    model: &ModelSpec,
    obs: &ObservationSet,
    hidden: &[Var],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    let config = SmootherConfig { ensemble_size: n_samples.max(MIN_ENSEMBLE), seed, ..SmootherConfig::default() };
    conditional_sample_with(model, obs, hidden, n_samples, &config)
}

pub fn conditional_sample_with(
    model: &ModelSpec,
    obs: &ObservationSet,
    hidden: &[Var],
    n_samples: usize,
    config: &SmootherConfig,
) -> Result<Vec<Trajectory>> {
    if n_samples > config.ensemble_size {
        return Err(Error::InvalidConfig("more samples requested than ensemble members".into()));
    }
    let out = smooth(model, obs, config)?;
    (0..n_samples).map(|j| out.member(j, hidden)).collect()
}

/// Pearson correlation.
pub fn correlation_score(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    if a.len() < 3 {
        return Err(Error::InsufficientData { needed: 3, available: a.len() });
    }
    if stats::variance(a) == 0.0 || stats::variance(b) == 0.0 {
        return Err(Error::ZeroVariance("correlation input".into()));
    }
    Ok(stats::correlation(a, b).clamp(-1.0, 1.0))
}
