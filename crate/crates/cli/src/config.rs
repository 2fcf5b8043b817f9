//! The TOML run configuration.
//!
//! A file holds optional global keys (`seed`, `output_dir`, `log_level`) and
//! exactly one command table, named after the subcommand it drives. Relative
//! paths are resolved against the directory holding the file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use enso_core::assimilation::InitialEnsemble;
use enso_core::causal::SelectionPolicy;
use enso_core::diagnostics::ValidationOptions;
use enso_core::latent::LatentConfig;
use enso_core::model::{Var, VariantId, DEFAULT_CALENDAR_OFFSET_MONTHS};
use serde::{Deserialize, Deserializer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Learn,
    LatentLearn,
    Assimilate,
    Validate,
}

impl Command {
    pub fn table(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Learn => "learn",
            Command::LatentLearn => "latent-learn",
            Command::Assimilate => "assimilate",
            Command::Validate => "validate",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub log_level: Option<String>,
    pub simulate: Option<SimulateSection>,
    pub learn: Option<LearnSection>,
    #[serde(rename = "latent-learn", alias = "latent_learn")]
    pub latent_learn: Option<LatentLearnSection>,
    pub assimilate: Option<AssimilateSection>,
    pub validate: Option<ValidateSection>,
}

fn variant<'de, D: Deserializer<'de>>(d: D) -> Result<VariantId, D::Error> {
    let s = String::deserialize(d)?;
    s.parse().map_err(serde::de::Error::custom)
}

fn opt_variant<'de, D: Deserializer<'de>>(d: D) -> Result<Option<VariantId>, D::Error> {
    variant(d).map(Some)
}

fn var_list<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<Var>>, D::Error> {
    let names = Vec::<String>::deserialize(d)?;
    names.iter().map(|n| n.parse().map_err(serde::de::Error::custom)).collect::<Result<Vec<_>, _>>().map(Some)
}

fn req_var_list<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Var>, D::Error> {
    var_list(d).map(Option::unwrap_or_default)
}

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

fn default_dt() -> f64 {
    0.01
}

fn default_offset() -> u32 {
    DEFAULT_CALENDAR_OFFSET_MONTHS
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    #[serde(deserialize_with = "variant")]
    pub variant: VariantId,
    /// Stored span after burn-in.
    pub years: f64,
    #[serde(default)]
    pub burn_in_years: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Integration steps per stored sample; monthly when omitted.
    pub output_stride: Option<usize>,
    /// Rest state when omitted.
    pub initial_state: Option<Vec<f64>>,
    #[serde(default = "default_offset")]
    pub calendar_offset_months: u32,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnSection {
    pub input: PathBuf,
    /// Columns to model; all columns of the input when omitted.
    #[serde(default, deserialize_with = "var_list")]
    pub variables: Option<Vec<Var>>,
    #[serde(default = "yes")]
    pub seasonal: bool,
    /// Keep every `stride`-th sample of the input.
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub policy: SelectionPolicy,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentLearnSection {
    pub input: PathBuf,
    #[serde(default, deserialize_with = "var_list")]
    pub observed: Option<Vec<Var>>,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub policy: SelectionPolicy,
    #[serde(default)]
    pub settings: LatentConfig,
}

/// A catalog variant or a model JSON file; exactly one must be given.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRef {
    #[serde(default, deserialize_with = "opt_variant")]
    pub variant: Option<VariantId>,
    pub model_file: Option<PathBuf>,
}

fn default_ensemble() -> usize {
    100
}

fn default_inflation() -> f64 {
    enso_core::assimilation::DEFAULT_INFLATION
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssimilateSection {
    pub model: ModelRef,
    /// Trajectory CSV holding the observed columns.
    pub observations: PathBuf,
    #[serde(deserialize_with = "req_var_list")]
    pub observed: Vec<Var>,
    /// Per observed variable; a fixed fraction of each standard deviation when omitted.
    pub obs_noise_std: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default = "default_ensemble")]
    pub ensemble_size: usize,
    #[serde(default = "default_inflation")]
    pub inflation: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub initial: Option<InitialEnsemble>,
}

fn default_validate_years() -> f64 {
    2000.0
}

fn default_validate_burn_in() -> f64 {
    100.0
}

fn default_start_year() -> i32 {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateSection {
    /// Monthly trajectory CSV to validate; otherwise the model is simulated.
    pub trajectory: Option<PathBuf>,
    #[serde(default)]
    pub model: ModelRef,
    #[serde(default = "default_validate_years")]
    pub years: f64,
    #[serde(default = "default_validate_burn_in")]
    pub burn_in_years: f64,
    #[serde(default = "default_start_year")]
    pub start_year: i32,
    #[serde(default)]
    pub options: ValidationOptions,
    /// Observed index CSV with `nino3` and `nino4` columns.
    pub observations: Option<PathBuf>,
    /// Inclusive year span of the climatology removed from the observations;
    /// the whole record when omitted.
    pub climatology: Option<[i32; 2]>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve(&base);
        Ok(cfg)
    }

    fn active(&self) -> Vec<Command> {
        let mut out = Vec::new();
        if self.simulate.is_some() {
            out.push(Command::Simulate);
        }
        if self.learn.is_some() {
            out.push(Command::Learn);
        }
        if self.latent_learn.is_some() {
            out.push(Command::LatentLearn);
        }
        if self.assimilate.is_some() {
            out.push(Command::Assimilate);
        }
        if self.validate.is_some() {
            out.push(Command::Validate);
        }
        out
    }

    /// The file must configure exactly the requested command.
    pub fn check_command(&self, cmd: Command) -> anyhow::Result<()> {
        match self.active().as_slice() {
            [c] if *c == cmd => Ok(()),
            [] => bail!("config has no [{}] table", cmd.table()),
            [c] => bail!("config configures [{}] but the command is {}", c.table(), cmd.table()),
            many => {
                let names: Vec<_> = many.iter().map(|c| c.table()).collect();
                bail!("config must hold exactly one command table, found {}", names.join(", "))
            }
        }
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(d) = self.output_dir.as_mut() {
            fix(d);
        }
        if let Some(s) = self.learn.as_mut() {
            fix(&mut s.input);
        }
        if let Some(s) = self.latent_learn.as_mut() {
            fix(&mut s.input);
        }
        if let Some(s) = self.assimilate.as_mut() {
            fix(&mut s.observations);
            s.model.model_file.as_mut().map(fix);
        }
        if let Some(s) = self.validate.as_mut() {
            s.trajectory.as_mut().map(fix);
            s.observations.as_mut().map(fix);
            s.model.model_file.as_mut().map(fix);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>("[simulate]\nvariant = \"reference\"\nyears = 1\nyeras = 2\n").unwrap_err();
        assert!(err.to_string().contains("yeras"), "{err}");
        assert!(toml::from_str::<RunConfig>("sed = 1\n").is_err());
    }

    #[test]
    fn one_command_per_file() {
        let cfg: RunConfig = toml::from_str("[simulate]\nvariant = \"Reference\"\nyears = 1\n").unwrap();
        assert!(cfg.check_command(Command::Simulate).is_ok());
        assert!(cfg.check_command(Command::Learn).is_err());
        let two: RunConfig =
            toml::from_str("[simulate]\nvariant = \"reference\"\nyears = 1\n[learn]\ninput = \"x.csv\"\n").unwrap();
        assert!(two.check_command(Command::Simulate).is_err());
    }

    #[test]
    fn nested_settings_parse() {
        let cfg: RunConfig = toml::from_str(
            "[latent-learn]\ninput = \"t.csv\"\nobserved = [\"u\", \"hW\", \"TC\", \"TE\"]\n\
             [latent-learn.settings]\nn_latent = 1\nmax_iters = 5\ntol = 0.01\nlatent_noise = { kind = \"fitted\" }\n\
             init = { damping = 1.0, noise = 1.0 }\nn_samples = 2\nensemble_size = 20\nobs_noise_fraction = 0.01\n\
             inflation = 1.02\nseasonal = false\n",
        )
        .unwrap();
        let s = cfg.latent_learn.unwrap();
        assert_eq!(s.observed.unwrap(), vec![Var::U, Var::HW, Var::TC, Var::TE]);
        assert_eq!(s.settings.max_iters, 5);
    }
}
