use enso_core::library::{build_library, estimate_derivatives, evaluate_library};
use enso_core::model::{build_model, StateVarSet, Trajectory, Var, VariantId};
use proptest::prelude::*;

const ALL: [Var; 6] = [Var::U, Var::HW, Var::TC, Var::TE, Var::Tau, Var::I];

fn subset(bits: u8) -> Vec<Var> {
    ALL.iter().enumerate().filter(|(k, _)| bits & (1 << k) != 0).map(|(_, v)| *v).collect()
}

fn random_trajectory(vars: &StateVarSet, raw: &[f64], h: f64) -> Trajectory {
    let d = vars.len();
    let rows = raw.len() / d;
    let times = (0..rows).map(|k| 0.37 + k as f64 * h).collect();
    Trajectory::new(vars.clone(), times, raw[..rows * d].to_vec(), 0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn subset_library_is_the_restriction(bits in 1u8..64, seasonal in any::<bool>()) {
        let full = build_library(&StateVarSet::new(ALL.to_vec()).unwrap(), seasonal).unwrap();
        let sub = StateVarSet::new(subset(bits)).unwrap();
        let direct = build_library(&sub, seasonal).unwrap();
        let restricted = full.restrict(&sub);
        let mut a = direct.labels();
        let mut b = restricted.labels();
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn design_rows_reproduce_catalog_drift(
        variant in prop::sample::select(vec![VariantId::Reference, VariantId::IaIsDMA, VariantId::IaIsM, VariantId::Linear6D]),
        raw in prop::collection::vec(-1.5f64..1.5, 6 * 20),
    ) {
        let model = build_model(variant).unwrap();
        let library = build_library(&model.vars, true).unwrap();
        let traj = random_trajectory(&model.vars, &raw, 0.29);
        let design = evaluate_library(&library, &traj).unwrap();
        for (i, &v) in model.vars.vars().iter().enumerate() {
            let theta: Vec<f64> = library
                .entries
                .iter()
                .map(|e| model.coefficient(v, &e.monomial, e.seasonal).unwrap_or(0.0))
                .collect();
            for k in 0..traj.len() {
                let fitted: f64 = (0..library.len()).map(|m| design.values[(k, m)] * theta[m]).sum();
                let drift = model.drift(traj.row(k), traj.times[k]).unwrap()[i];
                prop_assert!((fitted - drift).abs() <= 1e-10 * (1.0 + drift.abs()), "{v} row {k}: {fitted} vs {drift}");
            }
        }
    }

    #[test]
    fn forward_difference_is_exact_on_affine_signals(
        slopes in prop::collection::vec(-10.0f64..10.0, 3),
        offsets in prop::collection::vec(-10.0f64..10.0, 3),
        h in 0.01f64..2.0,
        rows in 2usize..50,
    ) {
        let vars = StateVarSet::new(vec![Var::U, Var::TC, Var::TE]).unwrap();
        let times: Vec<f64> = (0..rows).map(|k| k as f64 * h).collect();
        let (a, b) = (&offsets, &slopes);
        let values: Vec<f64> = times.iter().flat_map(|t| (0..3).map(move |j| a[j] + b[j] * t)).collect();
        let d = estimate_derivatives(&Trajectory::new(vars, times, values, 0).unwrap()).unwrap();
        prop_assert_eq!(d.rows(), rows - 1);
        for k in 0..d.rows() {
            for j in 0..3 {
                prop_assert!((d.values[(k, j)] - slopes[j]).abs() <= 1e-9 * (1.0 + slopes[j].abs() + offsets[j].abs() / h));
            }
        }
    }
}
