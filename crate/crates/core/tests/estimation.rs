use enso_core::causal::{SelectionPolicy, StructurePattern};
use enso_core::estimation::{learn, mle_fit};
use enso_core::library::{build_library, derivative_design, evaluate_rows, DerivativeSeries, DesignMatrix};
use enso_core::model::{
    build_model, integrate, ModelSpec, NoiseSpec, SeasonalBasis, SimConfig, StateVarSet, Term, Trajectory, Var, VariantId,
};
use proptest::prelude::*;
use std::sync::OnceLock;

const C: SeasonalBasis = SeasonalBasis::Constant;

/// A damped linear three-variable system with one quadratic term.
fn data() -> &'static (DerivativeSeries, DesignMatrix, StructurePattern) {
    static DATA: OnceLock<(DerivativeSeries, DesignMatrix, StructurePattern)> = OnceLock::new();
    DATA.get_or_init(|| {
        let vars = StateVarSet::new(vec![Var::HW, Var::TC, Var::TE]).unwrap();
        let eqs = vec![
            vec![Term::new(-0.8, &[(Var::HW, 1)], C), Term::new(-0.3, &[(Var::TE, 1)], C)],
            vec![Term::new(-1.0, &[(Var::TC, 1)], C), Term::new(0.6, &[(Var::HW, 1)], C), Term::new(-0.5, &[(Var::TC, 2)], C)],
            vec![Term::new(-0.5, &[(Var::TE, 1)], C), Term::new(0.4, &[(Var::TC, 1)], C)],
        ];
        let model = ModelSpec::new(VariantId::Custom, vars.clone(), eqs, vec![NoiseSpec::Additive { sigma: 0.3 }; 3]).unwrap();
        let cfg = SimConfig { dt: 0.01, duration: 500.0, burn_in: 10.0, output_stride: 5, seed: 4, initial_state: vec![0.0; 3], calendar_offset_months: 0 };
        let tr = integrate(&model, &cfg).unwrap();
        let lib = build_library(&vars, false).unwrap();
        let (d, dm) = derivative_design(&lib, &tr).unwrap();
        let pattern = StructurePattern::from_model(&model, &vars, &lib).unwrap();
        (d, dm, pattern)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn extra_candidates_never_raise_the_residual(eq in 0usize..3, extra in 0usize..13) {
        let (d, dm, pattern) = data();
        let base = mle_fit(pattern, dm, d).unwrap();
        let mut wider = pattern.clone();
        wider.mask[eq][extra] = true;
        let refit = mle_fit(&wider, dm, d).unwrap();
        prop_assert!(refit.diagnostics[eq].rms <= base.diagnostics[eq].rms * (1.0 + 1e-12));
    }

    #[test]
    fn rescaled_column_rescales_its_coefficient(col in 0usize..13, alpha in 0.01f64..100.0) {
        let (d, dm, pattern) = data();
        let mut wide = pattern.clone();
        for row in wide.mask.iter_mut() {
            row[col] = true;
        }
        let base = mle_fit(&wide, dm, d).unwrap();
        let mut scaled = dm.clone();
        scaled.values.column_mut(col).scale_mut(alpha);
        let other = mle_fit(&wide, &scaled, d).unwrap();
        for i in 0..3 {
            let (a, b) = (base.coefficients[i][col], other.coefficients[i][col]);
            prop_assert!((a / alpha - b).abs() <= 1e-7 * (a / alpha).abs().max(1e-6), "{a} / {alpha} vs {b}");
        }
        let (fa, fb) = (base.fitted(dm), other.fitted(&scaled));
        prop_assert!((&fa - &fb).abs().max() <= 1e-8 * fa.abs().max());
    }
}

fn twin_run(model: &ModelSpec, seed: u64) -> Trajectory {
    let cfg = SimConfig {
        dt: 0.01,
        duration: 60.0 + 2000.0 * 6.0,
        burn_in: 60.0,
        output_stride: 5,
        seed,
        initial_state: model.rest_state(),
        calendar_offset_months: 0,
    };
    integrate(model, &cfg).unwrap()
}

/// Largest per-equation ‖X(θb − θa)‖ / ‖X θa‖ on a common design.
fn drift_change(a: &[Vec<f64>], b: &[Vec<f64>], design: &DesignMatrix) -> f64 {
    let m = design.values.ncols();
    (0..a.len())
        .map(|i| {
            let ta = nalgebra::DVector::from_fn(m, |j, _| a[i][j]);
            let tb = nalgebra::DVector::from_fn(m, |j, _| b[i][j]);
            (&design.values * (tb - &ta)).norm() / (&design.values * ta).norm()
        })
        .fold(0.0, f64::max)
}

#[test]
fn relearning_an_assembled_model_is_self_consistent() {
    let reference = build_model(VariantId::Reference).unwrap();
    let overrides: Vec<(Var, NoiseSpec)> = [Var::Tau, Var::I]
        .iter()
        .map(|&v| (v, reference.noise[reference.vars.index_of(v).unwrap()]))
        .collect();
    let lib = build_library(&reference.vars, true).unwrap();
    let policy = SelectionPolicy::default();

    let first = learn(&twin_run(&reference, 42), &lib, &policy, &overrides).unwrap();
    let again = twin_run(&first.model, 43);
    let second = learn(&again, &lib, &policy, &overrides).unwrap();

    let diff = first.pattern.symmetric_difference(&second.pattern).unwrap();
    let entries = reference.dim() * lib.len();
    println!("support difference {diff} of {entries}");
    assert!(diff as f64 <= 0.1 * entries as f64);

    // The decadal I equation relaxes on a 30-unit scale under strong noise, so
    // its drift is not pinned down by a 2000-year record: the first fit is
    // already about 100% away from the true drift there. Its change is
    // reported; the bound applies to the interannual equations.
    let design = evaluate_rows(&lib, &again, again.len() - 1).unwrap();
    let slow = reference.vars.index_of(Var::I).unwrap();
    let decadal = drift_change(&first.fit.coefficients[slow..=slow], &second.fit.coefficients[slow..=slow], &design);
    println!("decadal drift change {decadal:.4}");
    let fast: Vec<usize> = (0..reference.dim()).filter(|&i| i != slow).collect();
    let pick = |c: &[Vec<f64>]| fast.iter().map(|&i| c[i].clone()).collect::<Vec<_>>();
    let change = drift_change(&pick(&first.fit.coefficients), &pick(&second.fit.coefficients), &design);
    println!("largest interannual drift change {change:.4}");
    assert!(change <= 0.1, "{change}");
}
