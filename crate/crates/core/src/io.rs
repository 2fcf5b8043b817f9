//! Reading and writing index files, trajectories and models.
//!
//! Index CSVs carry one row per month with either a `date` column
//! (`YYYY-MM` or `YYYY-MM-DD`) or separate `year` and `month` columns, plus
//! any of `nino3`, `nino4` (°C), `hW` (m), `u` (m/s) and `tau` (m/s). Numbers
//! are written in shortest round-trip scientific notation.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::diagnostics::{MonthlySeries, SeriesUnits};
use crate::error::{Error, Result};
use crate::model::{
    convert_units, Direction, ModelSpec, Monomial, NoiseSpec, Quantity, SeasonalBasis, StateVarSet, Term, Trajectory, Var,
    VariantId, DEFAULT_CALENDAR_OFFSET_MONTHS, MONTH,
};

/// Shortest span accepted as a climatology.
pub const MIN_CLIMATOLOGY_YEARS: i32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexColumn {
    Nino3,
    Nino4,
    #[serde(rename = "hW")]
    HW,
    U,
    Tau,
}

impl IndexColumn {
    pub const ALL: [IndexColumn; 5] = [IndexColumn::Nino3, IndexColumn::Nino4, IndexColumn::HW, IndexColumn::U, IndexColumn::Tau];

    pub fn name(self) -> &'static str {
        match self {
            IndexColumn::Nino3 => "nino3",
            IndexColumn::Nino4 => "nino4",
            IndexColumn::HW => "hW",
            IndexColumn::U => "u",
            IndexColumn::Tau => "tau",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name().eq_ignore_ascii_case(s.trim()))
    }

    /// Model variable the index stands for.
    pub fn var(self) -> Var {
        match self {
            IndexColumn::Nino3 => Var::TE,
            IndexColumn::Nino4 => Var::TC,
            IndexColumn::HW => Var::HW,
            IndexColumn::U => Var::U,
            IndexColumn::Tau => Var::Tau,
        }
    }

    pub fn quantity(self) -> Quantity {
        match self {
            IndexColumn::Nino3 | IndexColumn::Nino4 => Quantity::T,
            IndexColumn::HW => Quantity::H,
            IndexColumn::U => Quantity::U,
            IndexColumn::Tau => Quantity::Tau,
        }
    }
}

/// Monthly index values in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexDataset {
    pub years: Vec<i32>,
    /// 1 = January.
    pub months: Vec<u32>,
    pub columns: BTreeMap<IndexColumn, Vec<f64>>,
}

impl IndexDataset {
    pub fn len(&self) -> usize {
        self.years.len()
    }

    pub fn is_empty(&self) -> bool {
        self.years.is_empty()
    }

    pub fn has(&self, c: IndexColumn) -> bool {
        self.columns.contains_key(&c)
    }

    pub fn column(&self, c: IndexColumn) -> Result<&[f64]> {
        self.columns.get(&c).map(Vec::as_slice).ok_or_else(|| Error::UnknownVariable(c.name().into()))
    }

    fn month_number(&self, k: usize) -> i64 {
        self.years[k] as i64 * 12 + self.months[k] as i64 - 1
    }

    /// Index of the first gap in the monthly record, if any.
    pub fn first_gap(&self) -> Option<usize> {
        (1..self.len()).find(|&k| self.month_number(k) != self.month_number(k - 1) + 1)
    }

    pub fn require_contiguous(&self) -> Result<()> {
        match self.first_gap() {
            Some(k) => Err(Error::NonUniformSpacing { index: k }),
            None => Ok(()),
        }
    }

    /// One column as a monthly series in physical units.
    pub fn monthly_series(&self, c: IndexColumn) -> Result<MonthlySeries> {
        self.require_contiguous()?;
        let values = self.column(c)?.to_vec();
        if self.is_empty() {
            return Err(Error::InsufficientData { needed: 1, available: 0 });
        }
        let units = if c.quantity() == Quantity::T { SeriesUnits::Celsius } else { SeriesUnits::Nondimensional };
        if units == SeriesUnits::Nondimensional {
            return Err(Error::UnitMismatch(format!("{} is not a temperature index", c.name())));
        }
        MonthlySeries::new(c.var().name(), units, self.years[0], self.months[0], values)
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

pub fn load_index_csv(path: &Path) -> Result<IndexDataset> {
    parse_index_csv(BufReader::new(File::open(path)?))
}

/// Parse an index CSV; line numbers in errors count the header as line 1.
pub fn parse_index_csv<R: Read>(reader: R) -> Result<IndexDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let mut date_col = None;
    let mut year_col = None;
    let mut month_col = None;
    let mut data_cols = Vec::new();
    for (j, h) in header.iter().enumerate() {
        match h.to_ascii_lowercase().as_str() {
            "date" => date_col = Some(j),
            "year" => year_col = Some(j),
            "month" => month_col = Some(j),
            _ => match IndexColumn::parse(h) {
                Some(c) if !data_cols.iter().any(|(_, d)| *d == c) => data_cols.push((j, c)),
                Some(c) => return Err(parse_err(1, format!("column {} appears twice", c.name()))),
                None => return Err(parse_err(1, format!("unrecognized column '{h}'"))),
            },
        }
    }
    let date_mode = match (date_col, year_col, month_col) {
        (Some(d), _, _) => Ok(d),
        (None, Some(y), Some(m)) => Err((y, m)),
        _ => return Err(parse_err(1, "need a 'date' column or both 'year' and 'month'")),
    };

    let mut ds = IndexDataset {
        years: Vec::new(),
        months: Vec::new(),
        columns: data_cols.iter().map(|(_, c)| (*c, Vec::new())).collect(),
    };
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec?;
        let field = |j: usize| rec.get(j).ok_or_else(|| parse_err(line, "row is shorter than the header"));
        let (year, month) = match date_mode {
            Ok(d) => parse_date(field(d)?).ok_or_else(|| parse_err(line, format!("bad date '{}'", field(d).unwrap_or(""))))?,
            Err((y, m)) => {
                let year = field(y)?.parse::<i32>().map_err(|_| parse_err(line, "bad year"))?;
                let month = field(m)?.parse::<u32>().map_err(|_| parse_err(line, "bad month"))?;
                (year, month)
            }
        };
        if !(1..=12).contains(&month) {
            return Err(parse_err(line, format!("month {month} out of range")));
        }
        let this = year as i64 * 12 + month as i64 - 1;
        if let (Some(&py), Some(&pm)) = (ds.years.last(), ds.months.last()) {
            let prev = py as i64 * 12 + pm as i64 - 1;
            if this == prev {
                return Err(parse_err(line, format!("duplicate month {year}-{month:02}")));
            }
            if this < prev {
                return Err(parse_err(line, format!("date {year}-{month:02} goes backwards")));
            }
        }
        for (j, c) in &data_cols {
            let s = field(*j)?;
            let v = s.parse::<f64>().map_err(|_| parse_err(line, format!("bad {} value '{s}'", c.name())))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite {} value", c.name())));
            }
            ds.columns.get_mut(c).expect("column registered").push(v);
        }
        ds.years.push(year);
        ds.months.push(month);
    }
    Ok(ds)
}

fn parse_date(s: &str) -> Option<(i32, u32)> {
    let mut parts = s.split('-');
    let year = parts.next()?.parse().ok()?;
    let month = parts.next()?.parse().ok()?;
    if let Some(day) = parts.next() {
        day.parse::<u32>().ok().filter(|d| (1..=31).contains(d))?;
    }
    parts.next().is_none().then_some((year, month))
}

pub fn write_index_csv<W: Write>(ds: &IndexDataset, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["year".to_string(), "month".to_string()];
    header.extend(ds.columns.keys().map(|c| c.name().to_string()));
    out.write_record(&header)?;
    for k in 0..ds.len() {
        let mut row = vec![ds.years[k].to_string(), ds.months[k].to_string()];
        row.extend(ds.columns.values().map(|v| format!("{:e}", v[k])));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Subtract each calendar month's mean over the years `span.0..=span.1`.
pub fn compute_anomalies(ds: &IndexDataset, span: (i32, i32)) -> Result<IndexDataset> {
    let (first, last) = span;
    let years = last - first + 1;
    if years < MIN_CLIMATOLOGY_YEARS {
        return Err(Error::InsufficientData { needed: MIN_CLIMATOLOGY_YEARS as usize, available: years.max(0) as usize });
    }
    if ds.is_empty() || first < ds.years[0] || last > *ds.years.last().expect("non-empty") {
        return Err(Error::InvalidConfig(format!("climatology span {first}-{last} lies outside the data")));
    }
    let inside: Vec<usize> = (0..ds.len()).filter(|&k| ds.years[k] >= first && ds.years[k] <= last).collect();
    let mut out = ds.clone();
    for (c, values) in out.columns.iter_mut() {
        let src = &ds.columns[c];
        let mut clim = [0.0; 12];
        for (m, slot) in clim.iter_mut().enumerate() {
            let vals: Vec<f64> = inside.iter().filter(|&&k| ds.months[k] as usize == m + 1).map(|&k| src[k]).collect();
            if vals.is_empty() {
                return Err(Error::InsufficientData { needed: 1, available: 0 });
            }
            *slot = vals.iter().sum::<f64>() / vals.len() as f64;
        }
        for (k, v) in values.iter_mut().enumerate() {
            *v -= clim[ds.months[k] as usize - 1];
        }
    }
    Ok(out)
}

/// Non-dimensional trajectory over the dataset's columns, one sample per
/// month, timed so the model calendar matches the data calendar.
pub fn to_model_units(ds: &IndexDataset) -> Result<Trajectory> {
    ds.require_contiguous()?;
    if ds.is_empty() || ds.columns.is_empty() {
        return Err(Error::InsufficientData { needed: 1, available: 0 });
    }
    let cols: Vec<IndexColumn> = ds.columns.keys().copied().collect();
    let vars = StateVarSet::new(cols.iter().map(|c| c.var()).collect())?;
    let first = (ds.months[0] as i64 - 1 - DEFAULT_CALENDAR_OFFSET_MONTHS as i64).rem_euclid(12) as f64;
    let times = (0..ds.len()).map(|k| (first + k as f64) * MONTH).collect();
    let mut values = Vec::with_capacity(ds.len() * cols.len());
    for k in 0..ds.len() {
        for c in &cols {
            values.push(convert_units(ds.columns[c][k], c.quantity(), Direction::ToNondim));
        }
    }
    Trajectory::new(vars, times, values, DEFAULT_CALENDAR_OFFSET_MONTHS)
}

/// Facts about a trajectory file kept next to it as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub variables: Vec<String>,
    pub rows: usize,
    pub spacing: Option<f64>,
    pub calendar_offset_months: u32,
    #[serde(default)]
    pub metadata: Value,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["time".to_string()];
    header.extend(traj.vars.names());
    out.write_record(&header)?;
    for k in 0..traj.len() {
        let mut row = vec![format!("{:e}", traj.times[k])];
        row.extend(traj.row(k).iter().map(|v| format!("{v:e}")));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Trajectory CSV plus its JSON sidecar.
pub fn save_trajectory(traj: &Trajectory, path: &Path, metadata: Value) -> Result<()> {
    write_trajectory_csv(traj, std::io::BufWriter::new(File::create(path)?))?;
    let meta = TrajectoryMeta {
        variables: traj.vars.names(),
        rows: traj.len(),
        spacing: traj.spacing().ok(),
        calendar_offset_months: traj.calendar_offset_months,
        metadata,
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn read_trajectory_csv<R: Read>(reader: R, calendar_offset_months: u32) -> Result<Trajectory> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("time") {
        return Err(parse_err(1, "first column must be 'time'"));
    }
    let vars = StateVarSet::new(header.iter().skip(1).map(str::parse).collect::<Result<Vec<Var>>>()?)?;
    let d = vars.len();
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        if rec.len() != d + 1 {
            return Err(parse_err(line, format!("expected {} fields, found {}", d + 1, rec.len())));
        }
        let mut nums = rec.iter().map(|s| s.trim().parse::<f64>().map_err(|_| parse_err(line, format!("bad number '{s}'"))));
        times.push(nums.next().expect("time field")?);
        for v in nums {
            values.push(v?);
        }
    }
    if times.is_empty() {
        return Err(Error::InsufficientData { needed: 1, available: 0 });
    }
    Trajectory::new(vars, times, values, calendar_offset_months)
}

/// Trajectory CSV, taking the calendar offset from the sidecar when present.
pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    let side = sidecar_path(path);
    let offset = if side.exists() {
        let meta: TrajectoryMeta = serde_json::from_str(&std::fs::read_to_string(side)?)?;
        meta.calendar_offset_months
    } else {
        DEFAULT_CALENDAR_OFFSET_MONTHS
    };
    read_trajectory_csv(BufReader::new(File::open(path)?), offset)
}

/// Model in the estimation JSON layout: per equation, constant-coefficient
/// monomials under `coefficients`, seasonal ones under `seasonal.<tag>`,
/// and the noise law.
pub fn model_to_json(model: &ModelSpec) -> Result<String> {
    let mut eqs = Map::new();
    for (i, v) in model.vars.vars().iter().enumerate() {
        let mut constant = Map::new();
        let mut seasonal: BTreeMap<&str, Map<String, Value>> = BTreeMap::new();
        for t in &model.equations[i] {
            match t.seasonal {
                SeasonalBasis::Constant => {
                    constant.insert(t.monomial.label(), json!(t.coefficient));
                }
                s => {
                    seasonal.entry(s.tag()).or_default().insert(t.monomial.label(), json!(t.coefficient));
                }
            }
        }
        let mut eq = json!({ "coefficients": constant, "seasonal": seasonal, "noise": model.noise[i] });
        if let NoiseSpec::Additive { sigma } = model.noise[i] {
            eq["sigma"] = json!(sigma);
        }
        eqs.insert(v.name(), eq);
    }
    let doc = json!({ "variables": model.vars.names(), "variant": model.variant_id, "equations": eqs });
    Ok(serde_json::to_string_pretty(&doc)?)
}

fn parse_monomial(label: &str) -> Result<Monomial> {
    if label == "1" {
        return Ok(Monomial::constant());
    }
    let mut factors = Vec::new();
    for f in label.split('*') {
        let (name, power) = match f.split_once('^') {
            Some((n, p)) => (n, p.parse::<u8>().map_err(|_| Error::InvalidModel(format!("bad power in '{label}'")))?),
            None => (f, 1),
        };
        factors.push((name.parse::<Var>()?, power));
    }
    Ok(Monomial::of(&factors))
}

fn parse_seasonal(tag: &str) -> Result<SeasonalBasis> {
    SeasonalBasis::MODULATED
        .into_iter()
        .find(|s| s.tag() == tag)
        .ok_or_else(|| Error::InvalidModel(format!("unknown seasonal component '{tag}'")))
}

/// Read a model written by [`model_to_json`] or by the estimation fit export.
/// Without a `noise` entry the noise is additive with amplitude `sigma`.
pub fn model_from_json(text: &str) -> Result<ModelSpec> {
    let doc: Value = serde_json::from_str(text)?;
    let names: Vec<String> = serde_json::from_value(doc["variables"].clone())?;
    let vars = StateVarSet::new(names.iter().map(|n| n.parse()).collect::<Result<Vec<Var>>>()?)?;
    let variant: VariantId = match doc.get("variant") {
        Some(v) => serde_json::from_value(v.clone())?,
        None => VariantId::Custom,
    };
    let mut equations = Vec::new();
    let mut noise = Vec::new();
    for n in &names {
        let eq = doc["equations"].get(n).ok_or_else(|| Error::InvalidModel(format!("no equation for {n}")))?;
        let mut terms = Vec::new();
        if let Some(map) = eq["coefficients"].as_object() {
            for (label, c) in map {
                let c = c.as_f64().ok_or_else(|| Error::InvalidModel(format!("coefficient of {label} is not a number")))?;
                terms.push(Term { coefficient: c, monomial: parse_monomial(label)?, seasonal: SeasonalBasis::Constant });
            }
        }
        if let Some(groups) = eq["seasonal"].as_object() {
            for (tag, map) in groups {
                let s = parse_seasonal(tag)?;
                for (label, c) in map.as_object().into_iter().flatten() {
                    let c = c.as_f64().ok_or_else(|| Error::InvalidModel(format!("coefficient of {label} is not a number")))?;
                    terms.push(Term { coefficient: c, monomial: parse_monomial(label)?, seasonal: s });
                }
            }
        }
        equations.push(terms);
        noise.push(match eq.get("noise") {
            Some(v) => serde_json::from_value(v.clone())?,
            None => NoiseSpec::Additive {
                sigma: eq["sigma"].as_f64().ok_or_else(|| Error::InvalidModel(format!("no noise for {n}")))?,
            },
        });
    }
    ModelSpec::new(variant, vars, equations, noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;

    #[test]
    fn minimal_file_with_one_column() {
        let ds = parse_index_csv("date,nino3\n1950-01,0.5\n1950-02,-0.25\n".as_bytes()).unwrap();
        assert_eq!(ds.len(), 2);
        assert!(ds.has(IndexColumn::Nino3) && !ds.has(IndexColumn::Nino4));
        assert_eq!(ds.column(IndexColumn::Nino3).unwrap(), &[0.5, -0.25]);
    }

    #[test]
    fn duplicate_month_names_its_line() {
        let err = parse_index_csv("year,month,nino4\n1950,1,0.1\n1950,2,0.2\n1950,2,0.3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err}");
    }

    #[test]
    fn header_problems() {
        assert!(matches!(parse_index_csv("nino3\n0.1\n".as_bytes()), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_index_csv("date,foo\n1950-01,1\n".as_bytes()), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_index_csv("date,nino3\n1950-02,1\n1950-01,1\n".as_bytes()), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(parse_index_csv("date,nino3\n1950-01,x\n".as_bytes()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn iso_days_are_accepted() {
        let ds = parse_index_csv("date,nino3\n1950-01-15,1\n1950-02-15,2\n".as_bytes()).unwrap();
        assert_eq!(ds.months, vec![1, 2]);
    }

    #[test]
    fn gaps_fail_contiguous_operations() {
        let ds = parse_index_csv("date,nino3\n1950-01,1\n1950-03,2\n".as_bytes()).unwrap();
        assert_eq!(ds.first_gap(), Some(1));
        assert!(to_model_units(&ds).is_err());
    }

    #[test]
    fn model_units_and_calendar() {
        let ds = parse_index_csv("date,nino3,hW\n1950-12,7.5,150\n1951-01,0,-75\n".as_bytes()).unwrap();
        let tr = to_model_units(&ds).unwrap();
        assert_eq!(tr.row(0), &[1.0, 1.0]);
        assert_eq!(tr.column(Var::HW).unwrap(), vec![1.0, -0.5]);
        assert_eq!(tr.calendar_month(0), 11);
        assert_eq!(tr.calendar_month(1), 0);
    }

    #[test]
    fn model_json_round_trip() {
        for v in [VariantId::Reference, VariantId::Latent4D, VariantId::IaIsDMA] {
            let m = build_model(v).unwrap();
            let back = model_from_json(&model_to_json(&m).unwrap()).unwrap();
            assert_eq!(back.vars, m.vars);
            assert_eq!(back.noise, m.noise);
            let x: Vec<f64> = (0..m.dim()).map(|i| 0.1 * (i as f64 + 1.0)).collect();
            let (a, b) = (m.drift(&x, 0.7).unwrap(), back.drift(&x, 0.7).unwrap());
            for (p, q) in a.iter().zip(&b) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn monomial_labels_parse() {
        assert_eq!(parse_monomial("TC^2*hW").unwrap(), Monomial::of(&[(Var::TC, 2), (Var::HW, 1)]));
        assert_eq!(parse_monomial("1").unwrap(), Monomial::constant());
        assert!(parse_monomial("foo").is_err());
    }
}
