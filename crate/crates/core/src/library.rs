//! Candidate-function libraries, design matrices and derivative estimates.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Monomial, SeasonalBasis, StateVarSet, Trajectory, Var};

/// One candidate function `f_m`: a monomial times a seasonal factor.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LibraryEntry {
    pub monomial: Monomial,
    pub seasonal: SeasonalBasis,
}

impl LibraryEntry {
    pub fn new(monomial: Monomial, seasonal: SeasonalBasis) -> Self {
        Self { monomial, seasonal }
    }

    pub fn constant() -> Self {
        Self::new(Monomial::constant(), SeasonalBasis::Constant)
    }

    pub fn is_constant(&self) -> bool {
        self.monomial.is_constant() && self.seasonal == SeasonalBasis::Constant
    }

    pub fn label(&self) -> String {
        match self.seasonal {
            SeasonalBasis::Constant => self.monomial.label(),
            s => format!("{}*{}", self.monomial.label(), s.tag()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionLibrary {
    pub vars: StateVarSet,
    pub entries: Vec<LibraryEntry>,
}

impl FunctionLibrary {
    pub fn new(vars: StateVarSet, entries: Vec<LibraryEntry>) -> Result<Self> {
        if !entries.iter().any(LibraryEntry::is_constant) {
            return Err(Error::InvalidModel("library must contain the constant function".into()));
        }
        for (i, e) in entries.iter().enumerate() {
            if e.monomial.degree() > 3 {
                return Err(Error::InvalidModel(format!("{} has degree > 3", e.label())));
            }
            if let Some(v) = e.monomial.vars().find(|v| !vars.contains(*v)) {
                return Err(Error::UnknownVariable(v.name()));
            }
            if entries[..i].contains(e) {
                return Err(Error::InvalidModel(format!("duplicate entry {}", e.label())));
            }
        }
        Ok(Self { vars, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> Vec<String> {
        self.entries.iter().map(LibraryEntry::label).collect()
    }

    pub fn position(&self, entry: &LibraryEntry) -> Option<usize> {
        self.entries.iter().position(|e| e == entry)
    }

    /// Entries that only involve `vars`, in the original order.
    pub fn restrict(&self, vars: &StateVarSet) -> FunctionLibrary {
        FunctionLibrary {
            vars: vars.clone(),
            entries: self
                .entries
                .iter()
                .filter(|e| e.monomial.vars().all(|v| vars.contains(v)))
                .cloned()
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Manifest<'a> {
            vars: Vec<String>,
            entries: Vec<ManifestEntry<'a>>,
        }
        #[derive(Serialize)]
        struct ManifestEntry<'a> {
            id: usize,
            label: String,
            exponents: &'a Monomial,
            seasonal: SeasonalBasis,
        }
        let m = Manifest {
            vars: self.vars.names(),
            entries: self
                .entries
                .iter()
                .enumerate()
                .map(|(id, e)| ManifestEntry { id, label: e.label(), exponents: &e.monomial, seasonal: e.seasonal })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&m)?)
    }
}

/// Linear, quadratic (squares and cross products) and pure cubic monomials
/// plus the constant; optionally every non-constant entry is repeated with
/// each seasonal factor.
pub fn build_library(vars: &StateVarSet, seasonal: bool) -> Result<FunctionLibrary> {
    if vars.is_empty() {
        return Err(Error::InvalidModel("empty variable set".into()));
    }
    let v = vars.vars();
    let mut monos = Vec::new();
    monos.extend(v.iter().map(|&a| Monomial::of(&[(a, 1)])));
    monos.extend(v.iter().map(|&a| Monomial::of(&[(a, 2)])));
    for i in 0..v.len() {
        for j in i + 1..v.len() {
            monos.push(Monomial::of(&[(v[i], 1), (v[j], 1)]));
        }
    }
    monos.extend(v.iter().map(|&a| Monomial::of(&[(a, 3)])));

    let mut entries: Vec<LibraryEntry> =
        monos.iter().map(|m| LibraryEntry::new(m.clone(), SeasonalBasis::Constant)).collect();
    entries.push(LibraryEntry::constant());
    if seasonal {
        for s in SeasonalBasis::MODULATED {
            entries.extend(monos.iter().map(|m| LibraryEntry::new(m.clone(), s)));
        }
    }
    FunctionLibrary::new(vars.clone(), entries)
}

/// Library values along a trajectory, one column per entry.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub values: DMatrix<f64>,
    pub library: FunctionLibrary,
    pub times: Vec<f64>,
}

impl DesignMatrix {
    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    /// Rows of several designs over the same library stacked in order.
    pub fn vstack(parts: &[DesignMatrix]) -> Result<DesignMatrix> {
        let first = parts.first().ok_or(Error::InsufficientData { needed: 1, available: 0 })?;
        let m = first.library.len();
        if parts.iter().any(|p| p.library != first.library) {
            return Err(Error::InvalidConfig("stacked designs must share a library".into()));
        }
        let rows: usize = parts.iter().map(DesignMatrix::rows).sum();
        let mut values = DMatrix::zeros(rows, m);
        let mut r0 = 0;
        for p in parts {
            values.rows_mut(r0, p.rows()).copy_from(&p.values);
            r0 += p.rows();
        }
        Ok(DesignMatrix {
            values,
            library: first.library.clone(),
            times: parts.iter().flat_map(|p| p.times.iter().copied()).collect(),
        })
    }
}

pub fn evaluate_library(library: &FunctionLibrary, trajectory: &Trajectory) -> Result<DesignMatrix> {
    evaluate_rows(library, trajectory, trajectory.len())
}

/// Design rows for the first `rows` samples of the trajectory.
pub fn evaluate_rows(library: &FunctionLibrary, trajectory: &Trajectory, rows: usize) -> Result<DesignMatrix> {
    let rows = rows.min(trajectory.len());
    let d = trajectory.dim();
    let plans = library
        .entries
        .iter()
        .map(|e| {
            e.monomial
                .0
                .iter()
                .map(|(&v, &p)| {
                    trajectory.vars.index_of(v).map(|j| (j, p as i32)).ok_or_else(|| Error::UnknownVariable(v.name()))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let seasonal: Vec<[f64; 3]> = trajectory.times[..rows]
        .iter()
        .map(|&t| [SeasonalBasis::S1.eval(t), SeasonalBasis::S2.eval(t), SeasonalBasis::S3.eval(t)])
        .collect();

    let mut values = DMatrix::zeros(rows, library.len());
    values
        .as_mut_slice()
        .par_chunks_mut(rows.max(1))
        .zip(plans.par_iter().zip(library.entries.par_iter()))
        .for_each(|(col, (plan, entry))| {
            for (k, out) in col.iter_mut().enumerate() {
                let x = &trajectory.values[k * d..(k + 1) * d];
                let mut v = match entry.seasonal {
                    SeasonalBasis::Constant => 1.0,
                    SeasonalBasis::S1 => seasonal[k][0],
                    SeasonalBasis::S2 => seasonal[k][1],
                    SeasonalBasis::S3 => seasonal[k][2],
                };
                for &(j, p) in plan {
                    v *= x[j].powi(p);
                }
                *out = v;
            }
        });
    Ok(DesignMatrix { values, library: library.clone(), times: trajectory.times[..rows].to_vec() })
}

/// Forward-difference time derivatives, aligned with the sample they start from.
#[derive(Debug, Clone)]
pub struct DerivativeSeries {
    pub vars: StateVarSet,
    /// `rows × vars.len()`.
    pub values: DMatrix<f64>,
    pub times: Vec<f64>,
    pub dt: f64,
}

impl DerivativeSeries {
    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn column(&self, v: Var) -> Option<Vec<f64>> {
        self.vars.index_of(v).map(|j| self.values.column(j).iter().copied().collect())
    }

    pub fn vstack(parts: &[DerivativeSeries]) -> Result<DerivativeSeries> {
        let first = parts.first().ok_or(Error::InsufficientData { needed: 1, available: 0 })?;
        if parts.iter().any(|p| p.vars != first.vars) {
            return Err(Error::InvalidConfig("stacked derivatives must share variables".into()));
        }
        let rows: usize = parts.iter().map(DerivativeSeries::rows).sum();
        let mut values = DMatrix::zeros(rows, first.vars.len());
        let mut r0 = 0;
        for p in parts {
            values.rows_mut(r0, p.rows()).copy_from(&p.values);
            r0 += p.rows();
        }
        Ok(DerivativeSeries {
            vars: first.vars.clone(),
            values,
            times: parts.iter().flat_map(|p| p.times.iter().copied()).collect(),
            dt: first.dt,
        })
    }
}

pub fn estimate_derivatives(trajectory: &Trajectory) -> Result<DerivativeSeries> {
    let n = trajectory.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, available: n });
    }
    let h = trajectory.spacing()?;
    let d = trajectory.dim();
    let mut values = DMatrix::zeros(n - 1, d);
    for k in 0..n - 1 {
        let (a, b) = (trajectory.row(k), trajectory.row(k + 1));
        for j in 0..d {
            values[(k, j)] = (b[j] - a[j]) / h;
        }
    }
    Ok(DerivativeSeries {
        vars: trajectory.vars.clone(),
        values,
        times: trajectory.times[..n - 1].to_vec(),
        dt: h,
    })
}

/// Derivatives plus the design rows they align with.
pub fn derivative_design(library: &FunctionLibrary, trajectory: &Trajectory) -> Result<(DerivativeSeries, DesignMatrix)> {
    let derivs = estimate_derivatives(trajectory)?;
    let design = evaluate_rows(library, trajectory, derivs.rows())?;
    Ok((derivs, design))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Var::*;

    fn vs(v: &[Var]) -> StateVarSet {
        StateVarSet::new(v.to_vec()).unwrap()
    }

    fn traj(vars: &[Var], times: Vec<f64>, rows: &[Vec<f64>]) -> Trajectory {
        Trajectory::new(vs(vars), times, rows.concat(), 0).unwrap()
    }

    #[test]
    fn library_sizes() {
        assert_eq!(build_library(&vs(&[U, HW, TC, TE, Tau, I]), false).unwrap().len(), 34);
        assert_eq!(build_library(&vs(&[TC]), false).unwrap().len(), 4);
        assert_eq!(build_library(&vs(&[HW, TC, TE]), false).unwrap().len(), 13);
        assert_eq!(build_library(&vs(&[U, HW, TC, TE, Tau, I]), true).unwrap().len(), 34 + 3 * 33);
    }

    #[test]
    fn one_variable_library_entries() {
        let lib = build_library(&vs(&[TC]), false).unwrap();
        assert_eq!(lib.labels(), vec!["TC", "TC^2", "TC^3", "1"]);
    }

    #[test]
    fn restriction_equals_smaller_library() {
        let full = build_library(&vs(&[U, HW, TC, TE, Tau, I]), true).unwrap();
        for sub in [vec![HW, TC, TE], vec![TC], vec![HW, TC, TE, Tau]] {
            let sub = vs(&sub);
            let direct = build_library(&sub, true).unwrap();
            let restricted = full.restrict(&sub);
            let mut a = direct.entries.clone();
            let mut b = restricted.entries.clone();
            a.sort_by_key(|e| e.label());
            b.sort_by_key(|e| e.label());
            assert_eq!(a, b);
        }
    }

    #[test]
    fn evaluate_examples() {
        let tr = traj(&[TC, Tau], vec![0.0, 1.5], &[vec![0.2, 0.5], vec![0.3, -1.0]]);
        let lib = FunctionLibrary::new(
            vs(&[TC, Tau]),
            vec![
                LibraryEntry::constant(),
                LibraryEntry::new(Monomial::of(&[(TC, 1), (Tau, 1)]), SeasonalBasis::Constant),
                LibraryEntry::new(Monomial::of(&[(TC, 2)]), SeasonalBasis::S1),
            ],
        )
        .unwrap();
        let dm = evaluate_library(&lib, &tr).unwrap();
        assert_eq!(dm.values[(0, 0)], 1.0);
        assert_eq!(dm.values[(1, 0)], 1.0);
        assert!((dm.values[(0, 1)] - 0.1).abs() < 1e-15);
        // s1(1.5) = sin(π/2) = 1
        assert!((dm.values[(1, 2)] - 0.09).abs() < 1e-12);
    }

    #[test]
    fn missing_variable_is_an_error() {
        let tr = traj(&[TC], vec![0.0, 1.0], &[vec![0.1], vec![0.2]]);
        let lib = build_library(&vs(&[TC, TE]), false).unwrap();
        assert!(matches!(evaluate_library(&lib, &tr), Err(Error::UnknownVariable(_))));
    }

    #[test]
    fn forward_difference_is_exact_on_ramps() {
        let times: Vec<f64> = (0..20).map(|k| k as f64 * 0.1).collect();
        let rows: Vec<Vec<f64>> = times.iter().map(|&t| vec![3.0 * t, 1.0 - 2.0 * t]).collect();
        let d = estimate_derivatives(&traj(&[TC, TE], times, &rows)).unwrap();
        assert_eq!(d.rows(), 19);
        for k in 0..19 {
            assert!((d.values[(k, 0)] - 3.0).abs() < 1e-9);
            assert!((d.values[(k, 1)] + 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn forward_difference_error_bounded_by_step() {
        let h = 0.01;
        let times: Vec<f64> = (0..1000).map(|k| k as f64 * h).collect();
        let rows: Vec<Vec<f64>> = times.iter().map(|&t| vec![t.sin()]).collect();
        let d = estimate_derivatives(&traj(&[TC], times.clone(), &rows)).unwrap();
        let err = (0..d.rows()).map(|k| (d.values[(k, 0)] - times[k].cos()).abs()).fold(0.0, f64::max);
        assert!(err <= h, "{err}");
    }

    #[test]
    fn derivative_preconditions() {
        let one = traj(&[TC], vec![0.0], &[vec![1.0]]);
        assert!(estimate_derivatives(&one).is_err());
        let bad = Trajectory {
            vars: vs(&[TC]),
            times: vec![0.0, 1.0, 2.5],
            values: vec![0.0, 1.0, 2.0],
            calendar_offset_months: 0,
        };
        assert!(matches!(estimate_derivatives(&bad), Err(Error::NonUniformSpacing { .. })));
    }

    #[test]
    fn manifest_lists_every_entry() {
        let lib = build_library(&vs(&[TC, TE]), true).unwrap();
        let json: serde_json::Value = serde_json::from_str(&lib.to_json().unwrap()).unwrap();
        assert_eq!(json["entries"].as_array().unwrap().len(), lib.len());
    }
}
