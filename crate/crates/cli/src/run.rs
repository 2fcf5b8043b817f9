//! One function per command. Each writes its files into the output
//! directory and returns their paths.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use enso_core::assimilation::{enks_recover_with, ObservationSet, SmootherConfig};
use enso_core::causal::SelectionPolicy;
use enso_core::diagnostics::{validate, MonthlySeries, RegressionProfile};
use enso_core::estimation::learn;
use enso_core::io::{
    compute_anomalies, load_index_csv, load_trajectory, model_from_json, model_to_json, save_trajectory, IndexColumn,
};
use enso_core::latent::{identifiability_report, learn_with_latent};
use enso_core::library::build_library;
use enso_core::model::{build_model, integrate, ModelSpec, SimConfig, Trajectory, Var, MONTH};
use serde_json::json;

use crate::config::{AssimilateSection, LatentLearnSection, LearnSection, ModelRef, SimulateSection, ValidateSection};

pub struct Outputs {
    pub dir: PathBuf,
    pub written: Vec<PathBuf>,
}

impl Outputs {
    pub fn new(dir: &Path) -> anyhow::Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new() })
    }

    fn create(&mut self, name: &str) -> anyhow::Result<BufWriter<File>> {
        let p = self.dir.join(name);
        let f = File::create(&p).with_context(|| format!("creating {}", p.display()))?;
        self.written.push(p);
        Ok(BufWriter::new(f))
    }

    fn text(&mut self, name: &str, body: &str) -> anyhow::Result<()> {
        let p = self.dir.join(name);
        std::fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?;
        self.written.push(p);
        Ok(())
    }

    fn trajectory(&mut self, name: &str, traj: &Trajectory, meta: serde_json::Value) -> anyhow::Result<()> {
        let p = self.dir.join(name);
        save_trajectory(traj, &p, meta)?;
        self.written.push(enso_core::io::sidecar_path(&p));
        self.written.push(p);
        Ok(())
    }
}

fn resolve_model(r: &ModelRef) -> anyhow::Result<ModelSpec> {
    match (&r.variant, &r.model_file) {
        (Some(v), None) => Ok(build_model(*v)?),
        (None, Some(p)) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(model_from_json(&text)?)
        }
        _ => bail!("give exactly one of `variant` and `model_file`"),
    }
}

fn read_input(path: &Path, vars: Option<&[Var]>, stride: usize) -> anyhow::Result<Trajectory> {
    if stride == 0 {
        bail!("stride must be at least 1");
    }
    let traj = load_trajectory(path).with_context(|| format!("loading {}", path.display()))?;
    let traj = match vars {
        Some(v) => traj.select(v)?,
        None => traj,
    };
    Ok(traj.subsample(stride))
}

fn with_seed(policy: &SelectionPolicy, seed: u64) -> SelectionPolicy {
    match *policy {
        SelectionPolicy::Bootstrap(mut p) => {
            p.seed = seed;
            SelectionPolicy::Bootstrap(p)
        }
        other => other,
    }
}

pub fn simulate(s: &SimulateSection, seed: u64, out: &mut Outputs) -> anyhow::Result<()> {
    let model = build_model(s.variant)?;
    let mut cfg = SimConfig::monthly(s.years, s.burn_in_years, seed, s.initial_state.clone().unwrap_or_else(|| model.rest_state()));
    cfg.dt = s.dt;
    cfg.output_stride = s.output_stride.unwrap_or_else(|| (MONTH / s.dt).round() as usize);
    cfg.duration = s.burn_in_years * 6.0 + s.years * 6.0 - cfg.dt * cfg.output_stride as f64;
    cfg.calendar_offset_months = s.calendar_offset_months;
    let traj = integrate(&model, &cfg)?;
    out.trajectory("trajectory.csv", &traj, json!({ "variant": s.variant, "seed": seed, "config": cfg }))?;
    out.text("model.json", &model_to_json(&model)?)?;
    Ok(())
}

pub fn learn_cmd(s: &LearnSection, seed: u64, out: &mut Outputs) -> anyhow::Result<()> {
    let traj = read_input(&s.input, s.variables.as_deref(), s.stride)?;
    let library = build_library(&traj.vars, s.seasonal)?;
    let outcome = learn(&traj, &library, &with_seed(&s.policy, seed), &[])?;
    out.text("model.json", &model_to_json(&outcome.model)?)?;
    out.text("fit.json", &outcome.fit.to_json()?)?;
    out.text("library.json", &library.to_json()?)?;
    outcome.cem.write_csv(out.create("cem.csv")?)?;
    outcome.pattern.write_csv(out.create("structure.csv")?)?;
    Ok(())
}

pub fn latent_learn(s: &LatentLearnSection, seed: u64, out: &mut Outputs) -> anyhow::Result<()> {
    let traj = read_input(&s.input, s.observed.as_deref(), s.stride)?;
    let res = learn_with_latent(&traj, &s.settings, &with_seed(&s.policy, seed), seed)?;
    out.text("model.json", &model_to_json(&res.model)?)?;
    res.write_trace_csv(out.create("latent_trace.csv")?)?;
    for (k, sample) in res.latent_samples.iter().enumerate() {
        out.trajectory(&format!("latent_sample_{k}.csv"), sample, json!({ "seed": seed, "sample": k }))?;
    }
    let report = identifiability_report(&res.model, &res.latent_samples)?;
    out.text("identifiability.json", &serde_json::to_string_pretty(&report)?)?;
    out.text(
        "summary.json",
        &serde_json::to_string_pretty(&json!({
            "converged": res.converged,
            "iterations": res.iterations(),
            "iteration_trace": res.iteration_trace,
        }))?,
    )?;
    if !res.converged {
        log::warn!("latent learning stopped after {} iterations without settling", res.iterations());
    }
    Ok(())
}

pub fn assimilate(s: &AssimilateSection, seed: u64, out: &mut Outputs) -> anyhow::Result<()> {
    let model = resolve_model(&s.model)?;
    if s.observed.is_empty() {
        bail!("`observed` lists no variables");
    }
    let traj = read_input(&s.observations, Some(&s.observed), s.stride)?;
    let obs = ObservationSet::from_trajectory(&traj, &s.observed, s.obs_noise_std.clone())?;
    let mut cfg = SmootherConfig { ensemble_size: s.ensemble_size, seed, inflation: s.inflation, dt: s.dt, ..SmootherConfig::default() };
    if let Some(init) = &s.initial {
        cfg.initial = init.clone();
    }
    let post = enks_recover_with(&model, &obs, &cfg)?;
    post.write_csv(out.create("posterior.csv")?)?;
    Ok(())
}

fn observed_reference(path: &Path, span: Option<[i32; 2]>) -> anyhow::Result<(MonthlySeries, MonthlySeries)> {
    let ds = load_index_csv(path).with_context(|| format!("loading {}", path.display()))?;
    if ds.is_empty() {
        bail!("{} holds no rows", path.display());
    }
    let [a, b] = span.unwrap_or([ds.years[0], *ds.years.last().expect("non-empty")]);
    let anom = compute_anomalies(&ds, (a, b))?;
    Ok((anom.monthly_series(IndexColumn::Nino4)?, anom.monthly_series(IndexColumn::Nino3)?))
}

pub fn validate_cmd(s: &ValidateSection, seed: u64, out: &mut Outputs) -> anyhow::Result<()> {
    let traj = match &s.trajectory {
        Some(p) => {
            if s.model.variant.is_some() || s.model.model_file.is_some() {
                bail!("give either `trajectory` or a model, not both");
            }
            load_trajectory(p).with_context(|| format!("loading {}", p.display()))?
        }
        None => {
            let model = resolve_model(&s.model)?;
            integrate(&model, &SimConfig::monthly(s.years, s.burn_in_years, seed, model.rest_state()))?
        }
    };
    let tc = MonthlySeries::from_trajectory(&traj, Var::TC, s.start_year)?.to_celsius();
    let te = MonthlySeries::from_trajectory(&traj, Var::TE, s.start_year)?.to_celsius();
    let reference = s.observations.as_deref().map(|p| observed_reference(p, s.climatology)).transpose()?;
    let report = validate(&tc, &te, &s.options, &RegressionProfile::idealized(), reference.as_ref().map(|(c, e)| (c, e)))?;
    out.text("report.json", &report.to_json()?)?;
    out.written.extend(report.write_csvs(&out.dir)?);
    Ok(())
}
