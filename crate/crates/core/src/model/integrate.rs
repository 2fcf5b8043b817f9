use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{CompiledModel, ModelSpec, StateVarSet, Var};
use crate::error::{Error, Result};

/// Margin kept between a reflected variable and its bounds.
pub const REFLECT_EPS: f64 = 1e-6;

/// Calendar month (0 = January) of the sample at non-dimensional time 0.
/// Calibrated once on the reference model so that the EP variance peaks in
/// boreal winter.
pub const DEFAULT_CALENDAR_OFFSET_MONTHS: u32 = 1;

/// Non-dimensional length of one month.
pub const MONTH: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub duration: f64,
    pub burn_in: f64,
    pub output_stride: usize,
    pub seed: u64,
    pub initial_state: Vec<f64>,
    #[serde(default = "default_offset")]
    pub calendar_offset_months: u32,
}

fn default_offset() -> u32 {
    DEFAULT_CALENDAR_OFFSET_MONTHS
}

impl SimConfig {
    /// Monthly output at `dt = 0.01`, `years` of stored data after `burn_in_years`.
    pub fn monthly(years: f64, burn_in_years: f64, seed: u64, initial_state: Vec<f64>) -> Self {
        let dt = 0.01;
        let burn_in = burn_in_years * 6.0;
        Self {
            dt,
            // last stored sample sits one month before the end of the span
            duration: burn_in + years * 6.0 - MONTH,
            burn_in,
            output_stride: (MONTH / dt).round() as usize,
            seed,
            initial_state,
            calendar_offset_months: DEFAULT_CALENDAR_OFFSET_MONTHS,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidConfig("dt must be positive".into()));
        }
        if self.output_stride == 0 {
            return Err(Error::InvalidConfig("output_stride must be >= 1".into()));
        }
        if !(self.burn_in >= 0.0 && self.burn_in < self.duration) {
            return Err(Error::InvalidConfig("need 0 <= burn_in < duration".into()));
        }
        if self.calendar_offset_months >= 12 {
            return Err(Error::InvalidConfig("calendar_offset_months must be < 12".into()));
        }
        if self.initial_state.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: self.initial_state.len() });
        }
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        ((self.duration - self.burn_in) / (self.dt * self.output_stride as f64) + 1e-9).floor() as usize + 1
    }
}

/// Uniformly sampled multivariate series in non-dimensional units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub vars: StateVarSet,
    pub times: Vec<f64>,
    /// Row-major `times.len() × vars.len()`.
    pub values: Vec<f64>,
    pub calendar_offset_months: u32,
}

impl Trajectory {
    pub fn new(vars: StateVarSet, times: Vec<f64>, values: Vec<f64>, calendar_offset_months: u32) -> Result<Self> {
        let tr = Self { vars, times, values, calendar_offset_months };
        tr.validate()?;
        Ok(tr)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.vars.len();
        if self.values.len() != self.times.len() * d {
            return Err(Error::DimensionMismatch { expected: self.times.len() * d, got: self.values.len() });
        }
        if let Some(k) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!("non-finite value at row {}", k / d)));
        }
        if self.calendar_offset_months >= 12 {
            return Err(Error::InvalidConfig("calendar_offset_months must be < 12".into()));
        }
        self.spacing()?;
        Ok(())
    }

    /// Sampling interval; errors when spacing is not uniform.
    pub fn spacing(&self) -> Result<f64> {
        if self.times.len() < 2 {
            return Ok(f64::NAN);
        }
        let h = self.times[1] - self.times[0];
        if !(h > 0.0) {
            return Err(Error::NonUniformSpacing { index: 1 });
        }
        for (k, w) in self.times.windows(2).enumerate() {
            let tol = 1e-12 * w[1].abs().max(1.0);
            if ((w[1] - w[0]) - h).abs() > tol {
                return Err(Error::NonUniformSpacing { index: k + 1 });
            }
        }
        Ok(h)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vars.len()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let d = self.dim();
        &self.values[k * d..(k + 1) * d]
    }

    pub fn column(&self, v: Var) -> Result<Vec<f64>> {
        let j = self.vars.index_of(v).ok_or_else(|| Error::UnknownVariable(v.name()))?;
        Ok(self.column_at(j))
    }

    pub fn column_at(&self, j: usize) -> Vec<f64> {
        let d = self.dim();
        self.values.iter().skip(j).step_by(d).copied().collect()
    }

    /// Keep the given variables, in the given order.
    pub fn select(&self, vars: &[Var]) -> Result<Trajectory> {
        let idx = vars
            .iter()
            .map(|&v| self.vars.index_of(v).ok_or_else(|| Error::UnknownVariable(v.name())))
            .collect::<Result<Vec<_>>>()?;
        let mut values = Vec::with_capacity(self.len() * idx.len());
        for k in 0..self.len() {
            let r = self.row(k);
            values.extend(idx.iter().map(|&j| r[j]));
        }
        Ok(Trajectory {
            vars: StateVarSet::new(vars.to_vec())?,
            times: self.times.clone(),
            values,
            calendar_offset_months: self.calendar_offset_months,
        })
    }

    /// Every `stride`-th sample starting at the first.
    pub fn subsample(&self, stride: usize) -> Trajectory {
        let stride = stride.max(1);
        let d = self.dim();
        let keep: Vec<usize> = (0..self.len()).step_by(stride).collect();
        Trajectory {
            vars: self.vars.clone(),
            times: keep.iter().map(|&k| self.times[k]).collect(),
            values: keep.iter().flat_map(|&k| self.values[k * d..(k + 1) * d].iter().copied()).collect(),
            calendar_offset_months: self.calendar_offset_months,
        }
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> Trajectory {
        let d = self.dim();
        Trajectory {
            vars: self.vars.clone(),
            times: self.times[range.clone()].to_vec(),
            values: self.values[range.start * d..range.end * d].to_vec(),
            calendar_offset_months: self.calendar_offset_months,
        }
    }

    /// Calendar month (0 = January) of sample `k`.
    pub fn calendar_month(&self, k: usize) -> usize {
        month_of(self.times[k], self.calendar_offset_months)
    }
}

pub(crate) fn month_of(t: f64, offset: u32) -> usize {
    let m = (t / MONTH + 1e-6).floor() as i64 + offset as i64;
    m.rem_euclid(12) as usize
}

pub(crate) fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One Euler–Maruyama step in place, with reflection at variable bounds.
#[inline]
pub(crate) fn em_step<R: rand::Rng + ?Sized>(
    model: &CompiledModel,
    x: &mut [f64],
    t: f64,
    dt: f64,
    sqdt: f64,
    drift: &mut [f64],
    diff: &mut [f64],
    rng: &mut R,
) {
    model.drift(x, t, drift);
    model.diffusion(x, t, diff);
    for i in 0..x.len() {
        let xi: f64 = StandardNormal.sample(rng);
        x[i] += drift[i] * dt + diff[i] * sqdt * xi;
    }
    for (i, b) in model.bounds.iter().enumerate() {
        if let Some((lo, hi)) = *b {
            x[i] = reflect(x[i], lo + REFLECT_EPS, hi - REFLECT_EPS);
        }
    }
}

fn reflect(mut x: f64, lo: f64, hi: f64) -> f64 {
    if x < lo {
        x = 2.0 * lo - x;
    }
    if x > hi {
        x = 2.0 * hi - x;
    }
    x.clamp(lo, hi)
}

/// Simulate one Euler–Maruyama path.
pub fn integrate(model: &ModelSpec, config: &SimConfig) -> Result<Trajectory> {
    config.validate(model.dim())?;
    let compiled = CompiledModel::new(model)?;
    let d = model.dim();
    let n_out = config.sample_count();
    let burn_steps = (config.burn_in / config.dt).round() as usize;
    let last_step = burn_steps + (n_out - 1) * config.output_stride;

    let mut rng = path_rng(config.seed, 0);
    let mut x = config.initial_state.clone();
    for (i, b) in compiled.bounds.iter().enumerate() {
        if let Some((lo, hi)) = *b {
            x[i] = x[i].clamp(lo + REFLECT_EPS, hi - REFLECT_EPS);
        }
    }
    let (mut drift, mut diff) = (vec![0.0; d], vec![0.0; d]);
    let sqdt = config.dt.sqrt();
    let mut times = Vec::with_capacity(n_out);
    let mut values = Vec::with_capacity(n_out * d);

    for step in 0..=last_step {
        let t = step as f64 * config.dt;
        if step >= burn_steps && (step - burn_steps) % config.output_stride == 0 {
            times.push(t);
            values.extend_from_slice(&x);
        }
        if step == last_step {
            break;
        }
        em_step(&compiled, &mut x, t, config.dt, sqdt, &mut drift, &mut diff, &mut rng);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationBlowup { time: t + config.dt, state: x });
        }
    }
    Ok(Trajectory {
        vars: model.vars.clone(),
        times,
        values,
        calendar_offset_months: config.calendar_offset_months,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, NoiseSpec, SeasonalBasis, Term, VariantId};

    fn decay() -> ModelSpec {
        let vars = StateVarSet::new(vec![Var::TC]).unwrap();
        ModelSpec::new(
            VariantId::Custom,
            vars,
            vec![vec![Term::new(-1.0, &[(Var::TC, 1)], SeasonalBasis::Constant)]],
            vec![NoiseSpec::zero()],
        )
        .unwrap()
    }

    #[test]
    fn linear_decay_matches_exponential() {
        let cfg = SimConfig {
            dt: 0.01,
            duration: 1.0,
            burn_in: 0.0,
            output_stride: 1,
            seed: 1,
            initial_state: vec![1.0],
            calendar_offset_months: 0,
        };
        let tr = integrate(&decay(), &cfg).unwrap();
        let last = *tr.values.last().unwrap();
        // Forward Euler reproduces (1 - dt)^n exactly; its first-order bias
        // against e^-1 is about dt/2 * e^-1.
        assert!((last - 0.99f64.powi(100)).abs() < 1e-12, "{last}");
        assert!((last - (-1.0f64).exp()).abs() < 2e-3, "{last}");
        assert!((tr.times.last().unwrap() - 1.0).abs() < 1e-12);

        let fine = SimConfig { dt: 0.001, ..cfg };
        let last = *integrate(&decay(), &fine).unwrap().values.last().unwrap();
        assert!((last - (-1.0f64).exp()).abs() < 1e-3, "{last}");
    }

    #[test]
    fn sample_count_bookkeeping() {
        let m = build_model(VariantId::IaIsM).unwrap();
        for (dur, burn, stride) in [(10.0, 1.0, 7usize), (6.0, 0.0, 50), (3.3, 0.2, 3)] {
            let cfg = SimConfig {
                dt: 0.01,
                duration: dur,
                burn_in: burn,
                output_stride: stride,
                seed: 3,
                initial_state: vec![0.0; 4],
                calendar_offset_months: 0,
            };
            let tr = integrate(&m, &cfg).unwrap();
            let expect = ((dur - burn) / (0.01 * stride as f64) + 1e-9).floor() as usize + 1;
            assert_eq!(tr.len(), expect);
        }
    }

    #[test]
    fn monthly_config_gives_twelve_rows_per_year() {
        let cfg = SimConfig::monthly(100.0, 10.0, 5, vec![0.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
        assert_eq!(cfg.sample_count(), 1200);
    }

    #[test]
    fn same_seed_same_path() {
        let m = build_model(VariantId::Reference).unwrap();
        let cfg = SimConfig::monthly(5.0, 0.0, 11, vec![0.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
        let a = integrate(&m, &cfg).unwrap();
        let b = integrate(&m, &cfg).unwrap();
        assert_eq!(a, b);
        let mut cfg2 = cfg.clone();
        cfg2.seed = 12;
        assert_ne!(a.values, integrate(&m, &cfg2).unwrap().values);
    }

    #[test]
    fn decadal_variable_stays_in_bounds() {
        let m = build_model(VariantId::Reference).unwrap();
        let cfg = SimConfig::monthly(200.0, 0.0, 2, vec![0.0, 0.0, 0.0, 0.0, 0.0, 3.99]);
        let tr = integrate(&m, &cfg).unwrap();
        let i = tr.column(Var::I).unwrap();
        assert!(i.iter().all(|&x| x > 0.0 && x < 4.0));
    }

    #[test]
    fn invalid_configs_rejected() {
        let m = decay();
        let base = SimConfig {
            dt: 0.01,
            duration: 1.0,
            burn_in: 0.0,
            output_stride: 1,
            seed: 1,
            initial_state: vec![1.0],
            calendar_offset_months: 0,
        };
        let mut c = base.clone();
        c.dt = 0.0;
        assert!(integrate(&m, &c).is_err());
        let mut c = base.clone();
        c.output_stride = 0;
        assert!(integrate(&m, &c).is_err());
        let mut c = base.clone();
        c.burn_in = 2.0;
        assert!(integrate(&m, &c).is_err());
        let mut c = base;
        c.initial_state = vec![1.0, 2.0];
        assert!(integrate(&m, &c).is_err());
    }

    #[test]
    fn blowup_is_reported() {
        let vars = StateVarSet::new(vec![Var::TC]).unwrap();
        let m = ModelSpec::new(
            VariantId::Custom,
            vars,
            vec![vec![Term::new(10.0, &[(Var::TC, 3)], SeasonalBasis::Constant)]],
            vec![NoiseSpec::zero()],
        )
        .unwrap();
        let cfg = SimConfig {
            dt: 0.01,
            duration: 100.0,
            burn_in: 0.0,
            output_stride: 1,
            seed: 1,
            initial_state: vec![5.0],
            calendar_offset_months: 0,
        };
        assert!(matches!(integrate(&m, &cfg), Err(Error::IntegrationBlowup { .. })));
    }
}
