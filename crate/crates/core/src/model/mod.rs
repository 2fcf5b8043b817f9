//! Stochastic conceptual models: state variables, drift terms, noise forms,
//! the model catalog and the Euler–Maruyama integrator.

mod catalog;
mod integrate;
mod units;

pub use catalog::build_model;
pub use integrate::{integrate, SimConfig, Trajectory, DEFAULT_CALENDAR_OFFSET_MONTHS, MONTH, REFLECT_EPS};

pub(crate) use integrate::{em_step, path_rng};
pub use units::{convert_units, Direction, Quantity};

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A state variable. Latent variables are numbered from 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Var {
    U,
    HW,
    TC,
    TE,
    Tau,
    I,
    Latent(u8),
}

impl Var {
    pub fn name(&self) -> String {
        match self {
            Var::U => "u".into(),
            Var::HW => "hW".into(),
            Var::TC => "TC".into(),
            Var::TE => "TE".into(),
            Var::Tau => "tau".into(),
            Var::I => "I".into(),
            Var::Latent(k) => format!("latent_{k}"),
        }
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Var {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "u" => Var::U,
            "hW" | "h_W" | "hw" => Var::HW,
            "TC" | "T_C" => Var::TC,
            "TE" | "T_E" => Var::TE,
            "tau" => Var::Tau,
            "I" => Var::I,
            other => match other.strip_prefix("latent_").map(str::parse::<u8>) {
                Some(Ok(k)) if k >= 1 => Var::Latent(k),
                _ => return Err(Error::UnknownVariable(other.to_string())),
            },
        })
    }
}

impl Serialize for Var {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for Var {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Ordered, duplicate-free set of state variables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Var>", into = "Vec<Var>")]
pub struct StateVarSet(Vec<Var>);

impl StateVarSet {
    pub fn new(vars: Vec<Var>) -> Result<Self> {
        if vars.is_empty() {
            return Err(Error::InvalidModel("empty variable set".into()));
        }
        for (i, v) in vars.iter().enumerate() {
            if vars[..i].contains(v) {
                return Err(Error::InvalidModel(format!("duplicate variable {v}")));
            }
        }
        Ok(Self(vars))
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn index_of(&self, v: Var) -> Option<usize> {
        self.0.iter().position(|&w| w == v)
    }

    pub fn contains(&self, v: Var) -> bool {
        self.index_of(v).is_some()
    }

    pub fn names(&self) -> Vec<String> {
        self.0.iter().map(Var::name).collect()
    }
}

impl TryFrom<Vec<Var>> for StateVarSet {
    type Error = Error;
    fn try_from(v: Vec<Var>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<StateVarSet> for Vec<Var> {
    fn from(s: StateVarSet) -> Self {
        s.0
    }
}

/// Seasonal modulation factor multiplying a term. Time is non-dimensional
/// (one unit = two months), so s1 and s2 have a one-year period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeasonalBasis {
    Constant,
    S1,
    S2,
    S3,
}

impl SeasonalBasis {
    pub const MODULATED: [SeasonalBasis; 3] = [SeasonalBasis::S1, SeasonalBasis::S2, SeasonalBasis::S3];

    #[inline]
    pub fn eval(self, t: f64) -> f64 {
        match self {
            SeasonalBasis::Constant => 1.0,
            SeasonalBasis::S1 => (2.0 * PI * t / 6.0).sin(),
            SeasonalBasis::S2 => (2.0 * PI * t / 6.0 + 2.0 * PI / 6.0).sin(),
            SeasonalBasis::S3 => (2.0 * PI * t / 3.0 + 2.0 * PI / 6.0).sin(),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            SeasonalBasis::Constant => "",
            SeasonalBasis::S1 => "s1",
            SeasonalBasis::S2 => "s2",
            SeasonalBasis::S3 => "s3",
        }
    }
}

/// A monomial over state variables; an empty map is the constant function.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Monomial(pub BTreeMap<Var, u8>);

impl Monomial {
    pub fn constant() -> Self {
        Self::default()
    }

    pub fn of(factors: &[(Var, u8)]) -> Self {
        let mut m = BTreeMap::new();
        for &(v, p) in factors {
            if p > 0 {
                *m.entry(v).or_insert(0) += p;
            }
        }
        Self(m)
    }

    pub fn var(v: Var) -> Self {
        Self::of(&[(v, 1)])
    }

    pub fn degree(&self) -> u32 {
        self.0.values().map(|&p| p as u32).sum()
    }

    pub fn is_constant(&self) -> bool {
        self.0.is_empty()
    }

    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.0.keys().copied()
    }

    pub fn contains(&self, v: Var) -> bool {
        self.0.contains_key(&v)
    }

    /// Evaluate against a state laid out according to `vars`.
    pub fn eval(&self, vars: &StateVarSet, state: &[f64]) -> Result<f64> {
        let mut out = 1.0;
        for (&v, &p) in &self.0 {
            let i = vars.index_of(v).ok_or_else(|| Error::UnknownVariable(v.name()))?;
            out *= state[i].powi(p as i32);
        }
        Ok(out)
    }

    pub fn label(&self) -> String {
        if self.0.is_empty() {
            return "1".into();
        }
        self.0
            .iter()
            .map(|(v, &p)| if p == 1 { v.name() } else { format!("{}^{}", v.name(), p) })
            .collect::<Vec<_>>()
            .join("*")
    }
}

/// One drift contribution: coefficient × monomial × seasonal factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coefficient: f64,
    pub monomial: Monomial,
    pub seasonal: SeasonalBasis,
}

impl Term {
    pub fn new(coefficient: f64, factors: &[(Var, u8)], seasonal: SeasonalBasis) -> Self {
        Self { coefficient, monomial: Monomial::of(factors), seasonal }
    }

    pub fn label(&self) -> String {
        match self.seasonal {
            SeasonalBasis::Constant => self.monomial.label(),
            s if self.monomial.is_constant() => s.tag().to_string(),
            s => format!("{}*{}", self.monomial.label(), s.tag()),
        }
    }
}

/// Noise amplitude of one equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    Additive { sigma: f64 },
    /// `a·[tanh(b·TC) + 1]·[1 + c·cos(2πt/6)]`
    WindMultiplicative { a: f64, b: f64, c: f64 },
    /// `sqrt(λ·(x − lower)·(upper − x))` on the equation's own variable.
    DecadalMultiplicative { lambda: f64, lower: f64, upper: f64 },
}

impl NoiseSpec {
    pub fn zero() -> Self {
        NoiseSpec::Additive { sigma: 0.0 }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            NoiseSpec::Additive { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                Err(Error::InvalidModel(format!("additive sigma {sigma} must be finite and >= 0")))
            }
            NoiseSpec::WindMultiplicative { a, b, c } if !(a.is_finite() && b.is_finite() && c.is_finite()) => {
                Err(Error::InvalidModel("wind noise parameters must be finite".into()))
            }
            NoiseSpec::DecadalMultiplicative { lambda, lower, upper } if !(lambda > 0.0 && lower < upper) => {
                Err(Error::InvalidModel("decadal noise needs lambda > 0 and lower < upper".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Catalog identifiers of the model hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VariantId {
    Reference,
    IaIsDMA,
    IaIsMA,
    IaIsDM,
    IaIsM,
    IaM,
    Linear6D,
    Latent4D,
    Custom,
}

impl VariantId {
    pub const CATALOG: [VariantId; 8] = [
        VariantId::Reference,
        VariantId::IaIsDMA,
        VariantId::IaIsMA,
        VariantId::IaIsDM,
        VariantId::IaIsM,
        VariantId::IaM,
        VariantId::Linear6D,
        VariantId::Latent4D,
    ];
}

impl FromStr for VariantId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let id = match s.to_ascii_lowercase().as_str() {
            "reference" => VariantId::Reference,
            "iaisdma" => VariantId::IaIsDMA,
            "iaisma" => VariantId::IaIsMA,
            "iaisdm" => VariantId::IaIsDM,
            "iaism" => VariantId::IaIsM,
            "iam" => VariantId::IaM,
            "linear6d" => VariantId::Linear6D,
            "latent4d" => VariantId::Latent4D,
            "custom" => VariantId::Custom,
            _ => return Err(Error::UnknownVariant(s.to_string())),
        };
        Ok(id)
    }
}

impl fmt::Display for VariantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// A stochastic ODE system `dU = Φ(U, t) dt + σ(U, t) dW` with diagonal noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant_id: VariantId,
    pub vars: StateVarSet,
    pub equations: Vec<Vec<Term>>,
    pub noise: Vec<NoiseSpec>,
}

impl ModelSpec {
    pub fn new(
        variant_id: VariantId,
        vars: StateVarSet,
        equations: Vec<Vec<Term>>,
        noise: Vec<NoiseSpec>,
    ) -> Result<Self> {
        let n = vars.len();
        if equations.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: equations.len() });
        }
        if noise.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: noise.len() });
        }
        for (eq, terms) in equations.iter().enumerate() {
            for term in terms {
                if !term.coefficient.is_finite() {
                    return Err(Error::InvalidModel(format!(
                        "non-finite coefficient in equation {}",
                        vars.vars()[eq]
                    )));
                }
                if let Some(v) = term.monomial.vars().find(|v| !vars.contains(*v)) {
                    return Err(Error::UnknownVariable(v.name()));
                }
                if term.monomial.degree() > 3 {
                    return Err(Error::InvalidModel(format!("term {} has degree > 3", term.label())));
                }
            }
        }
        for nz in &noise {
            nz.validate()?;
            if matches!(nz, NoiseSpec::WindMultiplicative { .. }) && !vars.contains(Var::TC) {
                return Err(Error::InvalidModel("wind-burst noise requires TC".into()));
            }
        }
        Ok(Self { variant_id, vars, equations, noise })
    }

    /// Custom model with no terms and zero noise.
    pub fn empty(vars: StateVarSet) -> Self {
        let n = vars.len();
        Self {
            variant_id: VariantId::Custom,
            vars,
            equations: vec![Vec::new(); n],
            noise: vec![NoiseSpec::zero(); n],
        }
    }

    pub fn dim(&self) -> usize {
        self.vars.len()
    }

    pub fn drift(&self, state: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_dim(state, t)?;
        let compiled = CompiledModel::new(self)?;
        let mut out = vec![0.0; self.dim()];
        compiled.drift(state, t, &mut out);
        Ok(out)
    }

    pub fn diffusion(&self, state: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_dim(state, t)?;
        let compiled = CompiledModel::new(self)?;
        let mut out = vec![0.0; self.dim()];
        compiled.diffusion(state, t, &mut out);
        Ok(out)
    }

    /// Coefficient of the term with the given monomial and seasonal factor in
    /// the equation for `eq`, summing duplicates; 0 when absent.
    pub fn coefficient(&self, eq: Var, monomial: &Monomial, seasonal: SeasonalBasis) -> Option<f64> {
        let i = self.vars.index_of(eq)?;
        Some(
            self.equations[i]
                .iter()
                .filter(|t| &t.monomial == monomial && t.seasonal == seasonal)
                .map(|t| t.coefficient)
                .sum(),
        )
    }

    /// Zero anomalies, except that bounded variables sit mid-range.
    pub fn rest_state(&self) -> Vec<f64> {
        self.noise
            .iter()
            .map(|n| match *n {
                NoiseSpec::DecadalMultiplicative { lower, upper, .. } => 0.5 * (lower + upper),
                _ => 0.0,
            })
            .collect()
    }

    /// Same model with every noise amplitude forced to zero.
    pub fn without_noise(&self) -> Self {
        let mut m = self.clone();
        m.noise = vec![NoiseSpec::zero(); self.dim()];
        m
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut m = self.clone();
        for eq in &mut m.equations {
            for t in eq {
                t.coefficient *= alpha;
            }
        }
        m
    }

    fn check_dim(&self, state: &[f64], t: f64) -> Result<()> {
        if state.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: state.len() });
        }
        if !t.is_finite() {
            return Err(Error::InvalidConfig("time must be finite".into()));
        }
        Ok(())
    }
}

/// Flattened drift and noise evaluator used on hot paths.
#[derive(Debug, Clone)]
pub(crate) struct CompiledModel {
    dim: usize,
    terms: Vec<CompiledTerm>,
    noise: Vec<CompiledNoise>,
    /// Per-variable reflecting bounds (decadal noise keeps its variable inside).
    pub(crate) bounds: Vec<Option<(f64, f64)>>,
}

#[derive(Debug, Clone)]
struct CompiledTerm {
    eq: usize,
    coefficient: f64,
    factors: Vec<(usize, i32)>,
    seasonal: SeasonalBasis,
}

#[derive(Debug, Clone, Copy)]
enum CompiledNoise {
    Additive(f64),
    Wind { a: f64, b: f64, c: f64, tc: usize },
    Decadal { lambda: f64, lower: f64, upper: f64, own: usize },
}

impl CompiledModel {
    pub(crate) fn new(model: &ModelSpec) -> Result<Self> {
        let vars = &model.vars;
        let mut terms = Vec::new();
        for (eq, ts) in model.equations.iter().enumerate() {
            for t in ts {
                let factors = t
                    .monomial
                    .0
                    .iter()
                    .map(|(&v, &p)| {
                        vars.index_of(v)
                            .map(|i| (i, p as i32))
                            .ok_or_else(|| Error::UnknownVariable(v.name()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                terms.push(CompiledTerm { eq, coefficient: t.coefficient, factors, seasonal: t.seasonal });
            }
        }
        let mut bounds = vec![None; vars.len()];
        let noise = model
            .noise
            .iter()
            .enumerate()
            .map(|(own, nz)| {
                Ok(match *nz {
                    NoiseSpec::Additive { sigma } => CompiledNoise::Additive(sigma),
                    NoiseSpec::WindMultiplicative { a, b, c } => CompiledNoise::Wind {
                        a,
                        b,
                        c,
                        tc: vars
                            .index_of(Var::TC)
                            .ok_or_else(|| Error::InvalidModel("wind-burst noise requires TC".into()))?,
                    },
                    NoiseSpec::DecadalMultiplicative { lambda, lower, upper } => {
                        bounds[own] = Some((lower, upper));
                        CompiledNoise::Decadal { lambda, lower, upper, own }
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dim: vars.len(), terms, noise, bounds })
    }

    pub(crate) fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub(crate) fn drift(&self, state: &[f64], t: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        let seas = [
            1.0,
            SeasonalBasis::S1.eval(t),
            SeasonalBasis::S2.eval(t),
            SeasonalBasis::S3.eval(t),
        ];
        for term in &self.terms {
            let mut v = term.coefficient
                * seas[match term.seasonal {
                    SeasonalBasis::Constant => 0,
                    SeasonalBasis::S1 => 1,
                    SeasonalBasis::S2 => 2,
                    SeasonalBasis::S3 => 3,
                }];
            for &(i, p) in &term.factors {
                v *= match p {
                    1 => state[i],
                    2 => state[i] * state[i],
                    3 => state[i] * state[i] * state[i],
                    _ => state[i].powi(p),
                };
            }
            out[term.eq] += v;
        }
    }

    #[inline]
    pub(crate) fn diffusion(&self, state: &[f64], t: f64, out: &mut [f64]) {
        for (o, nz) in out.iter_mut().zip(&self.noise) {
            *o = match *nz {
                CompiledNoise::Additive(s) => s,
                CompiledNoise::Wind { a, b, c, tc } => {
                    a * ((b * state[tc]).tanh() + 1.0) * (1.0 + c * (2.0 * PI * t / 6.0).cos())
                }
                CompiledNoise::Decadal { lambda, lower, upper, own } => {
                    let x = state[own].clamp(lower, upper);
                    (lambda * (x - lower) * (upper - x)).max(0.0).sqrt()
                }
            };
        }
    }
}
