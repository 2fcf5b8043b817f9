//! Joint learning of model structure and unobserved (latent) processes.
//!
//! The loop alternates two steps until the coefficients settle:
//!
//! 1. with the current latent paths, causal selection and least-squares
//!    fitting over a library of observed monomials plus latent and
//!    observed×latent candidates;
//! 2. with the resulting model, fresh latent paths drawn from the ensemble
//!    smoother conditioned on the observed record.
//!
//! A latent variable is only determined up to scale and sign, so after every
//! fit the latent is rescaled to unit variance and its sign aligned with the
//! previous iteration. The products `coupling × latent std` are the
//! identifiable quantities and are reported separately.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::assimilation::{smooth, InitialEnsemble, ObservationSet, SmootherConfig, DEFAULT_INFLATION};
use crate::causal::{learn_structure, select_structure, CausationEntropyMatrix, SelectionPolicy, StructurePattern};
use crate::error::{Error, Result};
use crate::estimation::{assemble, full_pattern, mle_fit, LearnOutcome};
use crate::library::{build_library, derivative_design, DerivativeSeries, DesignMatrix, FunctionLibrary, LibraryEntry};
use crate::model::{ModelSpec, Monomial, NoiseSpec, SeasonalBasis, StateVarSet, Trajectory, Var};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatentNoise {
    Fitted,
    Fixed { sigma: f64 },
}

/// Latent equation used before anything has been learned:
/// `dλ = −damping λ dt + noise dW`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentInit {
    pub damping: f64,
    pub noise: f64,
}

impl Default for LatentInit {
    fn default() -> Self {
        Self { damping: 1.0, noise: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatentConfig {
    pub n_latent: usize,
    pub max_iters: usize,
    /// Relative coefficient change below which an iteration counts as settled.
    pub tol: f64,
    pub latent_noise: LatentNoise,
    pub init: LatentInit,
    /// Smoother members stacked into each fit.
    pub n_samples: usize,
    pub ensemble_size: usize,
    /// Observation error inside the sampler, as a fraction of each observed
    /// variable's standard deviation.
    pub obs_noise_fraction: f64,
    /// Forecast inflation inside the sampler.
    pub inflation: f64,
    /// Seasonal copies of the observed-variable candidates.
    pub seasonal: bool,
}

impl Default for LatentConfig {
    fn default() -> Self {
        Self {
            n_latent: 1,
            max_iters: 20,
            tol: 1e-2,
            latent_noise: LatentNoise::Fitted,
            init: LatentInit::default(),
            n_samples: 4,
            ensemble_size: 30,
            obs_noise_fraction: 0.01,
            inflation: DEFAULT_INFLATION,
            seasonal: true,
        }
    }
}

impl LatentConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.n_latent == 0 || self.n_latent > 9 {
            return bad("n_latent must be between 1 and 9");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1");
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if self.n_samples == 0 || self.n_samples > self.ensemble_size {
            return bad("n_samples must be between 1 and ensemble_size");
        }
        if !(self.obs_noise_fraction > 0.0) {
            return bad("obs_noise_fraction must be positive");
        }
        if !(self.init.damping > 0.0 && self.init.noise > 0.0) {
            return bad("latent initialization needs positive damping and noise");
        }
        if let LatentNoise::Fixed { sigma } = self.latent_noise {
            if !(sigma >= 0.0) {
                return bad("latent noise must be non-negative");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LatentLearnResult {
    /// Model over observed then latent variables, latent at unit variance.
    pub model: ModelSpec,
    pub outcome: LearnOutcome,
    /// Latent paths from the final sampling step, over the latent variables only.
    pub latent_samples: Vec<Trajectory>,
    /// Relative coefficient change from each fit to the next.
    pub iteration_trace: Vec<f64>,
    pub converged: bool,
}

impl LatentLearnResult {
    pub fn latent_vars(&self) -> Vec<Var> {
        self.model.vars.vars().iter().copied().filter(|v| matches!(v, Var::Latent(_))).collect()
    }

    /// Fits performed; the trace starts at the second one.
    pub fn iterations(&self) -> usize {
        self.iteration_trace.len() + 1
    }

    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["iteration", "relative_change"])?;
        for (k, c) in self.iteration_trace.iter().enumerate() {
            out.write_record([(k + 2).to_string(), format!("{c:e}")])?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn latent_vars(n: usize) -> Vec<Var> {
    (1..=n as u8).map(Var::Latent).collect()
}

/// Observed-variable library plus, for every latent `λ`, the candidates `λ`
/// and `λ·x` for each observed `x`.
pub fn latent_library(observed: &StateVarSet, n_latent: usize, seasonal: bool) -> Result<FunctionLibrary> {
    let base = build_library(observed, seasonal)?;
    let latents = latent_vars(n_latent);
    let mut vars = observed.vars().to_vec();
    vars.extend(&latents);
    let mut entries = base.entries;
    for &l in &latents {
        entries.push(LibraryEntry::new(Monomial::var(l), SeasonalBasis::Constant));
        for &x in observed.vars() {
            entries.push(LibraryEntry::new(Monomial::of(&[(x, 1), (l, 1)]), SeasonalBasis::Constant));
        }
    }
    FunctionLibrary::new(StateVarSet::new(vars)?, entries)
}

/// Same dynamics written for `var' = var / scale`; `var` must have additive noise.
pub fn rescale_variable(model: &ModelSpec, var: Var, scale: f64) -> Result<ModelSpec> {
    if !(scale.is_finite() && scale != 0.0) {
        return Err(Error::InvalidConfig(format!("cannot rescale by {scale}")));
    }
    let k = model.vars.index_of(var).ok_or_else(|| Error::UnknownVariable(var.name()))?;
    let mut m = model.clone();
    for (i, eq) in m.equations.iter_mut().enumerate() {
        for t in eq.iter_mut() {
            if let Some(&p) = t.monomial.0.get(&var) {
                t.coefficient *= scale.powi(p as i32);
            }
            if i == k {
                t.coefficient /= scale;
            }
        }
    }
    m.noise[k] = match m.noise[k] {
        NoiseSpec::Additive { sigma } => NoiseSpec::Additive { sigma: sigma / scale.abs() },
        _ => return Err(Error::InvalidModel(format!("{var} must have additive noise to be rescaled"))),
    };
    Ok(m)
}

/// Trajectory with the latent columns appended to the observed ones.
fn augment(observed: &Trajectory, latent: &[Vec<f64>]) -> Result<Trajectory> {
    let n = observed.len();
    let d = observed.dim();
    let k = latent.len();
    let mut vars = observed.vars.vars().to_vec();
    vars.extend(latent_vars(k));
    let mut values = Vec::with_capacity(n * (d + k));
    for r in 0..n {
        values.extend_from_slice(observed.row(r));
        for l in latent {
            values.push(l[r]);
        }
    }
    Trajectory::new(StateVarSet::new(vars)?, observed.times.clone(), values, observed.calendar_offset_months)
}

/// Stacked derivative and design rows over several latent samples.
pub fn stacked_design(
    observed: &Trajectory,
    samples: &[Vec<Vec<f64>>],
    library: &FunctionLibrary,
) -> Result<(DerivativeSeries, DesignMatrix)> {
    let mut ds = Vec::with_capacity(samples.len());
    let mut xs = Vec::with_capacity(samples.len());
    for s in samples {
        let (d, x) = derivative_design(library, &augment(observed, s)?)?;
        ds.push(d);
        xs.push(x);
    }
    Ok((DerivativeSeries::vstack(&ds)?, DesignMatrix::vstack(&xs)?))
}

/// Latent equations may only contain latent linear terms and the constant,
/// and always keep their own damping.
fn restrict_latent_equations(pattern: &mut StructurePattern) {
    let library = pattern.library.clone();
    for (i, v) in pattern.equations.vars().iter().enumerate() {
        if !matches!(v, Var::Latent(_)) {
            continue;
        }
        for (m, e) in library.entries.iter().enumerate() {
            let latent_linear = e.seasonal == SeasonalBasis::Constant
                && e.monomial.degree() == 1
                && e.monomial.vars().all(|x| matches!(x, Var::Latent(_)));
            let own = latent_linear && e.monomial.contains(*v);
            pattern.mask[i][m] = own || (pattern.mask[i][m] && (latent_linear || e.is_constant()));
        }
    }
}

/// One selection-and-fit pass given latent samples. Entropies and null
/// cutoffs are computed per sample, so the significance test sees the true
/// record length, and averaged before selection; coefficients are fitted on
/// all samples stacked.
pub fn learn_step(
    observed: &Trajectory,
    samples: &[Vec<Vec<f64>>],
    library: &FunctionLibrary,
    policy: &SelectionPolicy,
    latent_noise: LatentNoise,
) -> Result<LearnOutcome> {
    let mut cem: Option<CausationEntropyMatrix> = None;
    for s in samples {
        let (d1, x1) = stacked_design(observed, std::slice::from_ref(s), library)?;
        let (c, _) = learn_structure(&d1, &x1, policy)?;
        cem = Some(match cem {
            None => c,
            Some(mut acc) => {
                acc.values += &c.values;
                if let (Some(a), Some(b)) = (acc.null_thresholds.as_mut(), c.null_thresholds.as_ref()) {
                    a.values += &b.values;
                }
                acc.clipped += c.clipped;
                acc
            }
        });
    }
    let mut cem = cem.ok_or(Error::InsufficientData { needed: 1, available: 0 })?;
    let k = samples.len() as f64;
    cem.values /= k;
    if let Some(t) = cem.null_thresholds.as_mut() {
        t.values /= k;
    }
    let mut pattern = select_structure(&cem, policy)?;
    restrict_latent_equations(&mut pattern);
    let (d, x) = stacked_design(observed, samples, library)?;
    let fit = mle_fit(&pattern, &x, &d)?;
    let overrides: Vec<(Var, NoiseSpec)> = match latent_noise {
        LatentNoise::Fitted => Vec::new(),
        LatentNoise::Fixed { sigma } => {
            latent_vars(samples[0].len()).into_iter().map(|v| (v, NoiseSpec::Additive { sigma })).collect()
        }
    };
    let model = assemble(&pattern, &fit, &overrides)?;
    Ok(LearnOutcome { cem, pattern, fit, model })
}

/// Initial latent paths. The leading principal components of the
/// standardized observed-equation residuals are passed through the
/// steady-state Kalman filter of the initial latent equation, with the
/// signal share of each component read off its lag-one autocorrelation.
fn initial_latents(observed: &Trajectory, n_latent: usize, init: &LatentInit, seasonal: bool) -> Result<Vec<Vec<f64>>> {
    let lib = build_library(&observed.vars, seasonal)?;
    let (d, x) = derivative_design(&lib, observed)?;
    let fit = mle_fit(&full_pattern(&d.vars, &lib), &x, &d)?;
    let res: Vec<Vec<f64>> = fit.residuals(&x, &d).iter().map(|r| standardize(r)).collect();
    let n = res[0].len();
    let p = res.len();
    let cov = DMatrix::from_fn(p, p, |i, j| stats::dot(&res[i], &res[j]) / n as f64);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

    let phi = (-init.damping * d.dt).exp();
    let p_inf = init.noise * init.noise / (2.0 * init.damping);
    let q = p_inf * (1.0 - phi * phi);
    let mut latents = Vec::with_capacity(n_latent);
    for k in 0..n_latent {
        let v = eig.eigenvectors.column(order[k % p]);
        let z = standardize(&(0..n).map(|r| (0..p).map(|i| v[i] * res[i][r]).sum()).collect::<Vec<f64>>());
        let signal = (stats::autocorrelation(&z, 1) / phi).clamp(0.05, 0.95);
        let g = (signal / p_inf).sqrt();
        let r = 1.0 - signal;
        let mut pf = p_inf;
        let mut gain = 0.0;
        for _ in 0..1000 {
            let prior = phi * phi * pf + q;
            gain = prior * g / (g * g * prior + r);
            let next = (1.0 - gain * g) * prior;
            if (next - pf).abs() <= 1e-14 * pf {
                break;
            }
            pf = next;
        }
        // The value at each row is the forecast from earlier residuals only,
        // so the latent cannot borrow the increment it is meant to explain.
        let mut y = 0.0;
        let mut series = Vec::with_capacity(n + 1);
        for zk in &z {
            y *= phi;
            series.push(y);
            y += gain * (zk - g * y);
        }
        series.push(phi * y);
        latents.push(standardize(&series));
    }
    Ok(latents)
}

fn standardize(x: &[f64]) -> Vec<f64> {
    let m = stats::mean(x);
    let sd = stats::variance(x).sqrt().max(f64::MIN_POSITIVE);
    x.iter().map(|v| (v - m) / sd).collect()
}

/// Largest per-equation change of the drift over the design rows,
/// `‖X(θ_new − θ_old)‖ / ‖X θ_old‖`. Swapping one of two nearly collinear
/// candidates for the other barely registers, unlike a raw coefficient norm.
fn relative_change(old: &[Vec<f64>], new: &[Vec<f64>], design: &DMatrix<f64>) -> f64 {
    old.iter()
        .zip(new)
        .map(|(a, b)| {
            let a = DVector::from_column_slice(a);
            let delta = DVector::from_column_slice(b) - &a;
            (design * delta).norm() / (design * a).norm().max(1e-300)
        })
        .fold(0.0, f64::max)
}

/// Rescale every latent to unit variance across the pooled samples and
/// flip signs to agree with `reference` when given.
fn normalize(
    model: &ModelSpec,
    samples: &mut [Vec<Vec<f64>>],
    reference: Option<&[Vec<f64>]>,
) -> Result<ModelSpec> {
    let k = samples[0].len();
    let mut m = model.clone();
    for (l, var) in latent_vars(k).into_iter().enumerate() {
        let pooled: Vec<f64> = samples.iter().flat_map(|s| s[l].iter().copied()).collect();
        let mut scale = stats::variance(&pooled).sqrt();
        if !(scale > 0.0) {
            return Err(Error::ZeroVariance(var.name()));
        }
        if let Some(r) = reference {
            let mean_path: Vec<f64> =
                (0..r[l].len()).map(|t| samples.iter().map(|s| s[l][t]).sum::<f64>() / samples.len() as f64).collect();
            if stats::correlation(&mean_path, &r[l]) < 0.0 {
                scale = -scale;
            }
        }
        m = rescale_variable(&m, var, scale)?;
        for s in samples.iter_mut() {
            s[l].iter_mut().for_each(|v| *v /= scale);
        }
    }
    Ok(m)
}

/// Iterate sampling and learning until the coefficients settle.
pub fn learn_with_latent(
    observed: &Trajectory,
    config: &LatentConfig,
    policy: &SelectionPolicy,
    seed: u64,
) -> Result<LatentLearnResult> {
    config.validate()?;
    if observed.vars.vars().iter().any(|v| matches!(v, Var::Latent(_))) {
        return Err(Error::InvalidConfig("observed record already contains latent variables".into()));
    }
    let library = latent_library(&observed.vars, config.n_latent, config.seasonal)?;
    let obs = ObservationSet::from_trajectory(observed, observed.vars.vars(), None).and_then(|o| {
        let noise = o.noise_std.iter().map(|s| s / crate::assimilation::DEFAULT_OBS_NOISE_FRACTION * config.obs_noise_fraction).collect();
        ObservationSet::new(o.vars, o.times, o.values, noise)
    })?;
    let smoother_dt = {
        let h = obs.spacing();
        let steps = (h / 0.01).round().max(1.0);
        h / steps
    };

    // Start from the first observation rather than a free spin-up, which a
    // poorly constrained early model may not survive.
    let start = {
        let mut mean = observed.row(0).to_vec();
        let mut std = obs.noise_std.clone();
        mean.extend(std::iter::repeat_n(0.0, config.n_latent));
        std.extend(std::iter::repeat_n(1.0, config.n_latent));
        InitialEnsemble::Gaussian { mean, std }
    };
    let mut samples = vec![initial_latents(observed, config.n_latent, &config.init, config.seasonal)?];
    let mut reference: Vec<Vec<f64>> = samples[0].clone();
    let mut previous: Option<Vec<Vec<f64>>> = None;
    let mut trace = Vec::new();
    let mut settled = 0;
    let mut rising = 0;
    let mut converged = false;
    let mut last: Option<(LearnOutcome, ModelSpec)> = None;

    for iter in 0..config.max_iters {
        let outcome = learn_step(observed, &samples, &library, policy, config.latent_noise)?;
        let coefficients = outcome.fit.coefficients.clone();
        let model = outcome.model.clone();

        let smoother = SmootherConfig {
            ensemble_size: config.ensemble_size,
            seed,
            inflation: config.inflation,
            dt: smoother_dt,
            initial: start.clone(),
        };
        let out = smooth(&model, &obs, &smoother)?;
        let lv = latent_vars(config.n_latent);
        let idx: Vec<usize> = lv.iter().map(|v| model.vars.index_of(*v).expect("latent in model")).collect();
        let mut fresh: Vec<Vec<Vec<f64>>> = (0..config.n_samples)
            .map(|j| idx.iter().map(|&i| out.smoothed.iter().map(|e| e[(j, i)]).collect()).collect())
            .collect();
        let model = normalize(&model, &mut fresh, Some(&reference))?;
        for (i, v) in model.vars.vars().iter().enumerate().filter(|(_, v)| matches!(v, Var::Latent(_))) {
            log::debug!("iteration {}: {v} equation {:?}", iter + 1, model.equations[i].iter().map(|t| (t.label(), t.coefficient)).collect::<Vec<_>>());
        }
        reference = (0..config.n_latent)
            .map(|l| {
                (0..fresh[0][l].len()).map(|t| fresh.iter().map(|s| s[l][t]).sum::<f64>() / fresh.len() as f64).collect()
            })
            .collect();

        if let Some(prev) = &previous {
            let (_, x) = stacked_design(observed, &samples[..1], &library)?;
            let change = relative_change(prev, &coefficients, &x.values);
            log::info!("latent iteration {}: relative change {change:.4}", iter + 1);
            if let Some(&before) = trace.last() {
                rising = if change > before { rising + 1 } else { 0 };
            }
            trace.push(change);
            settled = if change < config.tol { settled + 1 } else { 0 };
        }
        previous = Some(coefficients);
        samples = fresh;
        last = Some((outcome, model));
        if settled >= 2 {
            converged = true;
            break;
        }
        if rising >= 3 {
            return Err(Error::LatentDivergence { trace });
        }
    }

    let (outcome, model) = last.expect("at least one iteration");
    let latent_samples = samples
        .iter()
        .map(|s| {
            let values: Vec<f64> = (0..observed.len()).flat_map(|t| s.iter().map(move |l| l[t])).collect();
            Trajectory::new(StateVarSet::new(latent_vars(config.n_latent))?, observed.times.clone(), values, observed.calendar_offset_months)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LatentLearnResult { model, outcome, latent_samples, iteration_trace: trace, converged })
}

/// Share of each observed equation's drift variance carried by terms that
/// contain a latent variable, evaluated along `observed` with the first
/// latent sample.
pub fn latent_forcing_share(model: &ModelSpec, observed: &Trajectory, latent: &Trajectory) -> Result<Vec<(Var, f64)>> {
    let cols: Vec<Vec<f64>> = latent.vars.vars().iter().map(|&v| latent.column(v)).collect::<Result<_>>()?;
    let traj = augment(observed, &cols)?;
    let mut out = Vec::new();
    for (i, &v) in model.vars.vars().iter().enumerate() {
        if matches!(v, Var::Latent(_)) {
            continue;
        }
        let map: Vec<usize> = model
            .vars
            .vars()
            .iter()
            .map(|&w| traj.vars.index_of(w).ok_or_else(|| Error::UnknownVariable(w.name())))
            .collect::<Result<_>>()?;
        let mut state = vec![0.0; map.len()];
        let mut total = Vec::with_capacity(traj.len());
        let mut forced = Vec::with_capacity(traj.len());
        for k in 0..traj.len() {
            let row = traj.row(k);
            for (slot, &j) in state.iter_mut().zip(&map) {
                *slot = row[j];
            }
            let t = traj.times[k];
            let (mut a, mut b) = (0.0, 0.0);
            for term in &model.equations[i] {
                let value = term.coefficient * term.monomial.eval(&model.vars, &state)? * term.seasonal.eval(t);
                a += value;
                if term.monomial.vars().any(|x| matches!(x, Var::Latent(_))) {
                    b += value;
                }
            }
            total.push(a);
            forced.push(b);
        }
        let vt = stats::variance(&total);
        out.push((v, if vt > 0.0 { stats::variance(&forced) / vt } else { 0.0 }));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiableProduct {
    pub equation: String,
    pub term: String,
    pub coefficient: f64,
    pub latent_std: f64,
    /// `coefficient × latent_std`, independent of the latent's scale.
    pub product: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    pub products: Vec<IdentifiableProduct>,
    /// The model rewritten for a unit-variance latent.
    pub normalized_model: ModelSpec,
    pub normalized_std: Vec<f64>,
}

/// Coupling × latent-std products per latent-containing term of each
/// observed equation, and the model normalized to unit latent variance.
pub fn identifiability_report(model: &ModelSpec, latent_samples: &[Trajectory]) -> Result<IdentifiabilityReport> {
    let first = latent_samples.first().ok_or(Error::InsufficientData { needed: 1, available: 0 })?;
    let mut products = Vec::new();
    let mut stds = Vec::new();
    let mut normalized = model.clone();
    let mut normalized_std = Vec::new();
    for &lv in first.vars.vars() {
        let pooled: Vec<f64> = latent_samples.iter().map(|s| s.column(lv)).collect::<Result<Vec<_>>>()?.concat();
        let sd = stats::variance(&pooled).sqrt();
        stds.push((lv, sd));
        normalized = rescale_variable(&normalized, lv, sd)?;
        normalized_std.push(stats::variance(&pooled.iter().map(|v| v / sd).collect::<Vec<_>>()).sqrt());
    }
    for (i, v) in model.vars.vars().iter().enumerate() {
        if matches!(v, Var::Latent(_)) {
            continue;
        }
        for t in &model.equations[i] {
            for &(lv, sd) in &stds {
                if let Some(&p) = t.monomial.0.get(&lv) {
                    products.push(IdentifiableProduct {
                        equation: v.name(),
                        term: t.label(),
                        coefficient: t.coefficient,
                        latent_std: sd,
                        product: t.coefficient * sd.powi(p as i32),
                    });
                }
            }
        }
    }
    Ok(IdentifiabilityReport { products, normalized_model: normalized, normalized_std })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, VariantId};

    #[test]
    fn latent_library_scope() {
        let obs = StateVarSet::new(vec![Var::HW, Var::TC, Var::TE]).unwrap();
        let lib = latent_library(&obs, 1, false).unwrap();
        assert_eq!(lib.len(), 13 + 4);
        let labels = lib.labels();
        assert!(labels.contains(&"TC*latent_1".to_string()));
        assert!(!labels.iter().any(|l| l.contains("latent_1^2")));
        assert_eq!(latent_library(&obs, 2, true).unwrap().len(), 49 + 8);
    }

    #[test]
    fn rescaling_preserves_identifiable_products() {
        let m = build_model(VariantId::Latent4D).unwrap();
        let times: Vec<f64> = (0..200).map(|k| k as f64 * 0.05).collect();
        let latent: Vec<f64> = (0..200).map(|k| (k as f64 * 0.3).sin() * 1.7).collect();
        let tr = Trajectory::new(StateVarSet::new(vec![Var::Latent(1)]).unwrap(), times.clone(), latent.clone(), 0).unwrap();
        let a = identifiability_report(&m, &[tr]).unwrap();
        let alpha = 3.5;
        let m2 = rescale_variable(&m, Var::Latent(1), 1.0 / alpha).unwrap();
        let tr2 = Trajectory::new(
            StateVarSet::new(vec![Var::Latent(1)]).unwrap(),
            times,
            latent.iter().map(|v| v * alpha).collect(),
            0,
        )
        .unwrap();
        let b = identifiability_report(&m2, &[tr2]).unwrap();
        assert_eq!(a.products.len(), b.products.len());
        for (x, y) in a.products.iter().zip(&b.products) {
            assert!((x.product - y.product).abs() < 1e-10, "{x:?} {y:?}");
        }
        assert!((a.normalized_std[0] - 1.0).abs() < 0.02);
    }

    #[test]
    fn rescaled_model_has_identical_observed_drift() {
        let m = build_model(VariantId::Latent4D).unwrap();
        let s = 2.5;
        let m2 = rescale_variable(&m, Var::Latent(1), s).unwrap();
        let x = [0.1, -0.2, 0.3, 0.8];
        let x2 = [0.1, -0.2, 0.3, 0.8 / s];
        let d = m.drift(&x, 1.3).unwrap();
        let d2 = m2.drift(&x2, 1.3).unwrap();
        for i in 0..3 {
            assert!((d[i] - d2[i]).abs() < 1e-12);
        }
        assert!((d[3] / s - d2[3]).abs() < 1e-12);
        assert!(rescale_variable(&build_model(VariantId::Reference).unwrap(), Var::Tau, 2.0).is_err());
    }

    #[test]
    fn relative_change_is_scale_free() {
        // Two identical columns: moving weight between them is no change.
        let x = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.5, 2.0, 2.0, -1.0, -1.0, -1.0, 0.0]);
        let a = vec![vec![1.0, 0.0, 0.2]];
        let b = vec![vec![0.0, 1.0, 0.2]];
        assert!(relative_change(&a, &b, &x) < 1e-15);
        let c = vec![vec![1.1, 0.0, 0.22]];
        assert!((relative_change(&a, &c, &x) - 0.1).abs() < 1e-12);
        let scaled = x.clone() * 5.0;
        assert!((relative_change(&a, &c, &scaled) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(LatentConfig::default().validate().is_ok());
        assert!(LatentConfig { max_iters: 0, ..Default::default() }.validate().is_err());
        assert!(LatentConfig { tol: 0.0, ..Default::default() }.validate().is_err());
        assert!(LatentConfig { n_samples: 100, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn latent_columns_scale_out_of_observed_fits() {
        // Observed TC forced by a red-noise driver; the fitted observed drift
        // must not depend on the units of the latent column.
        let n = 6000;
        let h = 0.05;
        let mut rng = crate::model::path_rng(4, 0);
        let mut lat = vec![0.0; n];
        let mut tc = vec![0.0; n];
        for k in 1..n {
            let e1: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
            let e2: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
            lat[k] = lat[k - 1] - lat[k - 1] * h + (h as f64).sqrt() * e1;
            tc[k] = tc[k - 1] + (-0.5 * tc[k - 1] + 0.3 * lat[k - 1]) * h + 0.05 * h.sqrt() * e2;
        }
        let obs = Trajectory::new(
            StateVarSet::new(vec![Var::TC]).unwrap(),
            (0..n).map(|k| k as f64 * h).collect(),
            tc,
            0,
        )
        .unwrap();
        let lib = latent_library(&obs.vars, 1, false).unwrap();
        let policy = SelectionPolicy::Absolute { threshold: 1e-3 };
        let a = learn_step(&obs, &[vec![lat.clone()]], &lib, &policy, LatentNoise::Fitted).unwrap();
        let scaled: Vec<f64> = lat.iter().map(|v| v * 7.0).collect();
        let b = learn_step(&obs, &[vec![scaled]], &lib, &policy, LatentNoise::Fitted).unwrap();
        assert_eq!(a.pattern.mask, b.pattern.mask);
        let (_, xa) = stacked_design(&obs, &[vec![lat]], &lib).unwrap();
        let fa = a.fit.fitted(&xa);
        let mut xb = xa.clone();
        for (m, e) in lib.entries.iter().enumerate() {
            if let Some(&p) = e.monomial.0.get(&Var::Latent(1)) {
                xb.values.column_mut(m).scale_mut(7f64.powi(p as i32));
            }
        }
        let fb = b.fit.fitted(&xb);
        for r in 0..fa.nrows() {
            assert!((fa[(r, 0)] - fb[(r, 0)]).abs() < 1e-6);
        }
    }
}
