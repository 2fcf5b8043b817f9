//! Closed-form maximum-likelihood fitting of a selected structure.
//!
//! Under the Euler discretization `u_{k+1} = u_k + Φ Δt + σ √Δt ξ` with
//! additive Gaussian noise, the likelihood of the drift coefficients is
//! maximized by ordinary least squares of the forward-difference tendency on
//! the selected candidate columns, one equation at a time.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::causal::{learn_structure, CausationEntropyMatrix, SelectionPolicy, StructurePattern};
use crate::error::{Error, Result};
use crate::library::{derivative_design, DerivativeSeries, DesignMatrix, FunctionLibrary};
use crate::model::{ModelSpec, NoiseSpec, SeasonalBasis, StateVarSet, Term, Trajectory, Var, VariantId};
use crate::stats;

/// Ridge on the normal equations of unit-scaled columns.
pub const NORMAL_RIDGE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualDiagnostics {
    pub rms: f64,
    pub lag1_autocorr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub pattern: StructurePattern,
    /// `coefficients[i][m]`, zero wherever the pattern is false.
    pub coefficients: Vec<Vec<f64>>,
    /// Least-squares standard errors, same layout as `coefficients`.
    pub std_errors: Vec<Vec<f64>>,
    pub noise_sigmas: Vec<f64>,
    pub diagnostics: Vec<ResidualDiagnostics>,
    /// Sampling interval of the derivative series.
    pub dt: f64,
}

/// Optional per-row weights, one column per equation (for example the
/// inverse noise variance along the path).
#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    pub weights: Option<DMatrix<f64>>,
}

pub fn mle_fit(pattern: &StructurePattern, design: &DesignMatrix, derivs: &DerivativeSeries) -> Result<FitResult> {
    mle_fit_with(pattern, design, derivs, &FitOptions::default())
}

pub fn mle_fit_with(
    pattern: &StructurePattern,
    design: &DesignMatrix,
    derivs: &DerivativeSeries,
    options: &FitOptions,
) -> Result<FitResult> {
    let n = design.rows();
    if derivs.rows() != n {
        return Err(Error::DimensionMismatch { expected: n, got: derivs.rows() });
    }
    if pattern.library != design.library {
        return Err(Error::InvalidConfig("pattern and design use different libraries".into()));
    }
    if pattern.equations != derivs.vars {
        return Err(Error::InvalidConfig("pattern and derivative series cover different variables".into()));
    }
    if n == 0 {
        return Err(Error::InsufficientData { needed: 1, available: 0 });
    }
    if let Some(w) = &options.weights {
        if w.shape() != (n, derivs.vars.len()) {
            return Err(Error::DimensionMismatch { expected: n, got: w.nrows() });
        }
    }

    let m = design.library.len();
    let labels = design.library.labels();
    let mut coefficients = Vec::new();
    let mut std_errors = Vec::new();
    let mut residuals = Vec::new();
    for (i, var) in derivs.vars.vars().iter().enumerate() {
        let y = derivs.values.column(i);
        let sel = pattern.selected(i);
        let mut theta = vec![0.0; m];
        let mut se = vec![0.0; m];
        if sel.is_empty() {
            residuals.push(y.iter().copied().collect::<Vec<_>>());
            coefficients.push(theta);
            std_errors.push(se);
            continue;
        }
        let mut x = design.values.select_columns(&sel);
        let scale: Vec<f64> = (0..sel.len()).map(|a| (x.column(a).norm_squared() / n as f64).sqrt()).collect();
        if let Some(a) = scale.iter().position(|&s| s == 0.0) {
            return Err(Error::RankDeficient { equation: var.name(), candidates: vec![labels[sel[a]].clone()] });
        }
        for (a, s) in scale.iter().enumerate() {
            x.column_mut(a).scale_mut(1.0 / s);
        }
        let (xw, yw) = match &options.weights {
            Some(w) => {
                let sw = w.column(i).map(|v| v.max(0.0).sqrt());
                let mut xw = x.clone();
                for mut col in xw.column_iter_mut() {
                    col.component_mul_assign(&sw);
                }
                (xw, y.component_mul(&sw))
            }
            None => (x.clone(), y.clone_owned()),
        };
        let mut g = xw.tr_mul(&xw) / n as f64;
        let rhs = xw.tr_mul(&yw) / n as f64;

        let d = g.diagonal().map(|v| 1.0 / v.sqrt());
        let normalized = DMatrix::from_fn(g.nrows(), g.ncols(), |a, b| g[(a, b)] * d[a] * d[b]);
        if stats::smallest_eigenvalue(&normalized) < NORMAL_RIDGE * sel.len() as f64 {
            return Err(Error::RankDeficient {
                equation: var.name(),
                candidates: stats::collinear_members(&normalized).into_iter().map(|a| labels[sel[a]].clone()).collect(),
            });
        }
        let g_plain = g.clone();
        for a in 0..g.nrows() {
            g[(a, a)] += NORMAL_RIDGE;
        }
        let chol = stats::cholesky(&g).ok_or_else(|| Error::RankDeficient {
            equation: var.name(),
            candidates: sel.iter().map(|&j| labels[j].clone()).collect(),
        })?;
        // Iterative refinement removes the ridge bias from well-posed fits.
        let mut beta = chol.solve(&rhs);
        for _ in 0..2 {
            beta += chol.solve(&(&rhs - &g_plain * &beta));
        }
        let res: Vec<f64> = (y - &x * &beta).iter().copied().collect();
        let dof = n.saturating_sub(sel.len()).max(1) as f64;
        let s2 = res.iter().map(|r| r * r).sum::<f64>() / dof;
        let ginv = chol.inverse();
        for (a, &j) in sel.iter().enumerate() {
            theta[j] = beta[a] / scale[a];
            se[j] = (s2 * ginv[(a, a)] / n as f64).sqrt() / scale[a];
        }
        residuals.push(res);
        coefficients.push(theta);
        std_errors.push(se);
    }

    let noise_sigmas = estimate_noise(&residuals, derivs.dt)?;
    let diagnostics = residuals
        .iter()
        .map(|r| ResidualDiagnostics {
            rms: (r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64).sqrt(),
            lag1_autocorr: stats::autocorrelation(r, 1),
        })
        .collect();
    Ok(FitResult { pattern: pattern.clone(), coefficients, std_errors, noise_sigmas, diagnostics, dt: derivs.dt })
}

/// `σ_i = sqrt(dt · mean(r_i²))`.
pub fn estimate_noise(residuals: &[Vec<f64>], dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig(format!("dt must be positive, got {dt}")));
    }
    residuals
        .iter()
        .map(|r| {
            if r.is_empty() {
                return Err(Error::InsufficientData { needed: 1, available: 0 });
            }
            Ok((dt * r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64).sqrt())
        })
        .collect()
}

impl FitResult {
    pub fn equations(&self) -> &StateVarSet {
        &self.pattern.equations
    }

    pub fn library(&self) -> &FunctionLibrary {
        &self.pattern.library
    }

    /// Fitted drift at every design row, `rows × equations`.
    pub fn fitted(&self, design: &DesignMatrix) -> DMatrix<f64> {
        let theta = DMatrix::from_fn(self.library().len(), self.coefficients.len(), |m, i| self.coefficients[i][m]);
        &design.values * theta
    }

    pub fn residuals(&self, design: &DesignMatrix, derivs: &DerivativeSeries) -> Vec<Vec<f64>> {
        let res = &derivs.values - self.fitted(design);
        res.column_iter().map(|c| c.iter().copied().collect()).collect()
    }

    pub fn coefficient(&self, eq: Var, label: &str) -> Option<f64> {
        let i = self.equations().index_of(eq)?;
        let m = self.library().labels().iter().position(|l| l == label)?;
        Some(self.coefficients[i][m])
    }

    /// Parameter tables: per equation, state monomial coefficients, the
    /// seasonal components listed separately, standard errors and noise.
    pub fn to_json(&self) -> Result<String> {
        let lib = self.library();
        let mut eqs = Map::new();
        for (i, v) in self.equations().vars().iter().enumerate() {
            let mut constant = Map::new();
            let mut seasonal: BTreeMap<&str, Map<String, Value>> = BTreeMap::new();
            let mut errors = Map::new();
            for m in self.pattern.selected(i) {
                let e = &lib.entries[m];
                let c = json!(self.coefficients[i][m]);
                match e.seasonal {
                    SeasonalBasis::Constant => {
                        constant.insert(e.monomial.label(), c);
                    }
                    s => {
                        seasonal.entry(s.tag()).or_default().insert(e.monomial.label(), c);
                    }
                }
                errors.insert(e.label(), json!(self.std_errors[i][m]));
            }
            eqs.insert(
                v.name(),
                json!({
                    "coefficients": constant,
                    "seasonal": seasonal,
                    "std_errors": errors,
                    "sigma": self.noise_sigmas[i],
                    "residual_rms": self.diagnostics[i].rms,
                    "residual_lag1_autocorr": self.diagnostics[i].lag1_autocorr,
                }),
            );
        }
        let doc = json!({ "variables": self.equations().names(), "dt": self.dt, "equations": eqs });
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

/// Runnable model from a fit. Variables listed in `noise_overrides` take the
/// given noise law instead of the fitted additive amplitude.
pub fn assemble(pattern: &StructurePattern, fit: &FitResult, noise_overrides: &[(Var, NoiseSpec)]) -> Result<ModelSpec> {
    if &fit.pattern != pattern {
        return Err(Error::InvalidConfig("fit does not belong to this pattern".into()));
    }
    let vars = &pattern.equations;
    if let Some(v) = pattern.library.vars.vars().iter().find(|v| !vars.contains(**v)) {
        return Err(Error::InvalidModel(format!("library variable {v} has no equation")));
    }
    for (v, _) in noise_overrides {
        if !vars.contains(*v) {
            return Err(Error::UnknownVariable(v.name()));
        }
    }
    let equations = (0..vars.len())
        .map(|i| {
            pattern
                .selected(i)
                .into_iter()
                .map(|m| {
                    let e = &pattern.library.entries[m];
                    Term { coefficient: fit.coefficients[i][m], monomial: e.monomial.clone(), seasonal: e.seasonal }
                })
                .collect()
        })
        .collect();
    let noise = vars
        .vars()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            noise_overrides
                .iter()
                .rev()
                .find(|(o, _)| o == v)
                .map(|(_, n)| *n)
                .unwrap_or(NoiseSpec::Additive { sigma: fit.noise_sigmas[i] })
        })
        .collect();
    ModelSpec::new(VariantId::Custom, vars.clone(), equations, noise)
}

/// Everything produced by one pass of structure selection and fitting.
#[derive(Debug, Clone)]
pub struct LearnOutcome {
    pub cem: CausationEntropyMatrix,
    pub pattern: StructurePattern,
    pub fit: FitResult,
    pub model: ModelSpec,
}

/// Derivatives, entropy matrix, selection, fit and assembly on one record.
pub fn learn(
    trajectory: &Trajectory,
    library: &FunctionLibrary,
    policy: &SelectionPolicy,
    noise_overrides: &[(Var, NoiseSpec)],
) -> Result<LearnOutcome> {
    let (derivs, design) = derivative_design(library, trajectory)?;
    learn_from(&derivs, &design, policy, noise_overrides)
}

pub fn learn_from(
    derivs: &DerivativeSeries,
    design: &DesignMatrix,
    policy: &SelectionPolicy,
    noise_overrides: &[(Var, NoiseSpec)],
) -> Result<LearnOutcome> {
    let (cem, pattern) = learn_structure(derivs, design, policy)?;
    let fit = mle_fit(&pattern, design, derivs)?;
    let model = assemble(&pattern, &fit, noise_overrides)?;
    Ok(LearnOutcome { cem, pattern, fit, model })
}

/// Pattern with every candidate of every equation switched on.
pub fn full_pattern(equations: &StateVarSet, library: &FunctionLibrary) -> StructurePattern {
    StructurePattern {
        equations: equations.clone(),
        library: library.clone(),
        mask: vec![vec![true; library.len()]; equations.len()],
    }
}

/// Per-equation residual sum of squares.
pub fn residual_sum_of_squares(fit: &FitResult, design: &DesignMatrix, derivs: &DerivativeSeries) -> Vec<f64> {
    fit.residuals(design, derivs).iter().map(|r| r.iter().map(|v| v * v).sum()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::library::{build_library, LibraryEntry};
    use crate::model::{integrate, Monomial, SimConfig};

    fn vs(v: &[Var]) -> StateVarSet {
        StateVarSet::new(v.to_vec()).unwrap()
    }

    fn ou(theta: f64, sigma: f64, duration: f64, seed: u64) -> Trajectory {
        let m = ModelSpec::new(
            VariantId::Custom,
            vs(&[Var::TC]),
            vec![vec![Term::new(theta, &[(Var::TC, 1)], SeasonalBasis::Constant)]],
            vec![NoiseSpec::Additive { sigma }],
        )
        .unwrap();
        let cfg = SimConfig {
            dt: 0.01,
            duration,
            burn_in: 0.0,
            output_stride: 1,
            seed,
            initial_state: vec![0.0],
            calendar_offset_months: 0,
        };
        integrate(&m, &cfg).unwrap()
    }

    fn linear_lib() -> FunctionLibrary {
        FunctionLibrary::new(
            vs(&[Var::TC]),
            vec![LibraryEntry::new(Monomial::var(Var::TC), SeasonalBasis::Constant), LibraryEntry::constant()],
        )
        .unwrap()
    }

    #[test]
    fn noiseless_affine_drift_is_recovered() {
        let n = 500;
        let x: Vec<f64> = (0..n).map(|k| (k as f64 * 0.3).sin()).collect();
        let lib = linear_lib();
        let design = DesignMatrix {
            values: DMatrix::from_fn(n, 2, |r, c| if c == 0 { x[r] } else { 1.0 }),
            library: lib.clone(),
            times: (0..n).map(|k| k as f64).collect(),
        };
        let derivs = DerivativeSeries {
            vars: vs(&[Var::TC]),
            values: DMatrix::from_fn(n, 1, |r, _| 2.0 * x[r] - 0.5),
            times: design.times.clone(),
            dt: 1.0,
        };
        let fit = mle_fit(&full_pattern(&derivs.vars, &lib), &design, &derivs).unwrap();
        assert!((fit.coefficients[0][0] - 2.0).abs() < 1e-10);
        assert!((fit.coefficients[0][1] + 0.5).abs() < 1e-10);
        assert!(fit.noise_sigmas[0] < 1e-8);
    }

    #[test]
    fn ou_damping_within_three_standard_errors() {
        let tr = ou(-0.8, 0.3, 5000.0, 3);
        let lib = linear_lib();
        let (d, dm) = derivative_design(&lib, &tr).unwrap();
        let fit = mle_fit(&full_pattern(&d.vars, &lib), &dm, &d).unwrap();
        let (est, se) = (fit.coefficients[0][0], fit.std_errors[0][0]);
        assert!((est + 0.8).abs() < 3.0 * se, "{est} ± {se}");
        assert!((fit.noise_sigmas[0] / 0.3 - 1.0).abs() < 0.02);
    }

    #[test]
    fn brownian_amplitude() {
        let tr = ou(0.0, 0.3, 1000.0, 5);
        let d = crate::library::estimate_derivatives(&tr).unwrap();
        assert!(d.rows() >= 100_000 - 1);
        let res: Vec<f64> = d.values.column(0).iter().copied().collect();
        let s = estimate_noise(&[res], d.dt).unwrap()[0];
        assert!((s / 0.3 - 1.0).abs() < 0.02, "{s}");
    }

    #[test]
    fn zero_residuals_zero_sigma() {
        assert_eq!(estimate_noise(&[vec![0.0; 10]], 0.01).unwrap(), vec![0.0]);
        assert!(estimate_noise(&[vec![]], 0.01).is_err());
    }

    #[test]
    fn duplicated_columns_are_named() {
        let n = 200;
        let x: Vec<f64> = (0..n).map(|k| (k as f64 * 0.7).cos()).collect();
        let lib = FunctionLibrary::new(
            vs(&[Var::TC, Var::TE]),
            vec![
                LibraryEntry::new(Monomial::var(Var::TC), SeasonalBasis::Constant),
                LibraryEntry::new(Monomial::var(Var::TE), SeasonalBasis::Constant),
                LibraryEntry::constant(),
            ],
        )
        .unwrap();
        let design = DesignMatrix {
            values: DMatrix::from_fn(n, 3, |r, c| if c == 2 { 1.0 } else { x[r] }),
            library: lib.clone(),
            times: (0..n).map(|k| k as f64).collect(),
        };
        let derivs = DerivativeSeries {
            vars: vs(&[Var::TC]),
            values: DMatrix::from_fn(n, 1, |r, _| x[r]),
            times: design.times.clone(),
            dt: 1.0,
        };
        match mle_fit(&full_pattern(&derivs.vars, &lib), &design, &derivs) {
            Err(Error::RankDeficient { candidates, .. }) => assert_eq!(candidates, vec!["TC", "TE"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn assemble_round_trips_drift() {
        let tr = ou(-0.8, 0.3, 200.0, 7);
        let lib = linear_lib();
        let (d, dm) = derivative_design(&lib, &tr).unwrap();
        let pattern = full_pattern(&d.vars, &lib);
        let fit = mle_fit(&pattern, &dm, &d).unwrap();
        let model = assemble(&pattern, &fit, &[]).unwrap();
        assert_eq!(model.variant_id, VariantId::Custom);
        let fitted = fit.fitted(&dm);
        for k in [0, 10, 500] {
            let drift = model.drift(tr.row(k), tr.times[k]).unwrap();
            assert!((drift[0] - fitted[(k, 0)]).abs() < 1e-12);
        }
        assert!(matches!(
            assemble(&pattern, &fit, &[(Var::Tau, NoiseSpec::zero())]),
            Err(Error::UnknownVariable(_))
        ));
        let over = assemble(&pattern, &fit, &[(Var::TC, NoiseSpec::Additive { sigma: 1.0 })]).unwrap();
        assert_eq!(over.noise[0], NoiseSpec::Additive { sigma: 1.0 });
    }

    #[test]
    fn json_lists_seasonal_components_separately() {
        let tr = ou(-0.8, 0.3, 200.0, 9);
        let lib = build_library(&tr.vars, true).unwrap();
        let (d, dm) = derivative_design(&lib, &tr).unwrap();
        let fit = mle_fit(&full_pattern(&d.vars, &lib), &dm, &d).unwrap();
        let v: Value = serde_json::from_str(&fit.to_json().unwrap()).unwrap();
        let tc = &v["equations"]["TC"];
        assert!(tc["coefficients"]["TC"].is_number());
        assert!(tc["seasonal"]["s1"]["TC^3"].is_number());
        assert!(tc["sigma"].as_f64().unwrap() > 0.0);
    }
}
