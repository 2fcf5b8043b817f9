//! Validation metrics for simulated and observed ENSO indices.
//!
//! Everything here works on monthly series in °C: event classification from
//! December–February means, event counts per 70-year segment, seasonal
//! variance, kernel density estimates, autocorrelation, moments, and the
//! location-strength diagram built from a longitude regression profile.
//!
//! Conventions: thresholds are strict (a DJF mean of exactly 0.5 °C is not an
//! event), a DJF window belongs to the year of its December, kurtosis is raw
//! (Gaussian = 3), and a year that meets both the El Niño and the La Niña
//! condition counts as El Niño.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, Matrix2, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{convert_units, Direction, Quantity, Trajectory, Var, MONTH};
use crate::stats;

pub const EVENT_THRESHOLD_C: f64 = 0.5;
pub const EXTREME_THRESHOLD_C: f64 = 2.5;
pub const SEGMENT_YEARS: usize = 70;
pub const KDE_POINTS: usize = 512;
/// Shortest record accepted by [`long_run_stats`].
pub const MIN_STATS_YEARS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesUnits {
    Celsius,
    Nondimensional,
}

/// Contiguous monthly values starting at (`start_year`, `start_month`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlySeries {
    pub name: String,
    pub units: SeriesUnits,
    pub start_year: i32,
    /// 1 = January.
    pub start_month: u32,
    pub values: Vec<f64>,
}

impl MonthlySeries {
    pub fn new(name: impl Into<String>, units: SeriesUnits, start_year: i32, start_month: u32, values: Vec<f64>) -> Result<Self> {
        if !(1..=12).contains(&start_month) {
            return Err(Error::InvalidConfig(format!("month {start_month} is not in 1..=12")));
        }
        Ok(Self { name: name.into(), units, start_year, start_month, values })
    }

    /// Monthly samples of `var` from a trajectory written at one-month spacing.
    pub fn from_trajectory(traj: &Trajectory, var: Var, start_year: i32) -> Result<Self> {
        let h = traj.spacing()?;
        if (h - MONTH).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("trajectory spacing {h} is not one month")));
        }
        let values = traj.column(var)?;
        Self::new(var.name(), SeriesUnits::Nondimensional, start_year, traj.calendar_month(0) as u32 + 1, values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Calendar month (1–12) of entry `k`.
    pub fn month(&self, k: usize) -> u32 {
        ((self.start_month as usize - 1 + k) % 12) as u32 + 1
    }

    pub fn year(&self, k: usize) -> i32 {
        self.start_year + ((self.start_month as usize - 1 + k) / 12) as i32
    }

    /// Temperature series in °C.
    pub fn to_celsius(&self) -> MonthlySeries {
        match self.units {
            SeriesUnits::Celsius => self.clone(),
            SeriesUnits::Nondimensional => MonthlySeries {
                units: SeriesUnits::Celsius,
                values: self.values.iter().map(|&v| convert_units(v, Quantity::T, Direction::ToPhysical)).collect(),
                ..self.clone()
            },
        }
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> MonthlySeries {
        MonthlySeries {
            name: self.name.clone(),
            units: self.units,
            start_year: self.year(range.start),
            start_month: self.month(range.start),
            values: self.values[range].to_vec(),
        }
    }

    /// Non-overlapping segments of `years` years from the start; a shorter
    /// tail is dropped.
    pub fn segments(&self, years: usize) -> Vec<MonthlySeries> {
        let len = years * 12;
        if len == 0 {
            return Vec::new();
        }
        (0..self.len() / len).map(|s| self.slice(s * len..(s + 1) * len)).collect()
    }

    fn require_celsius(&self) -> Result<()> {
        match self.units {
            SeriesUnits::Celsius => Ok(()),
            SeriesUnits::Nondimensional => Err(Error::UnitMismatch(format!("{} must be in °C", self.name))),
        }
    }

    fn aligned_with(&self, other: &MonthlySeries) -> Result<()> {
        if self.start_year != other.start_year || self.start_month != other.start_month {
            return Err(Error::InvalidConfig(format!("{} and {} start in different months", self.name, other.name)));
        }
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: other.len() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    EP,
    CP,
    LaNina,
}

impl EventKind {
    pub fn is_el_nino(self) -> bool {
        matches!(self, EventKind::EP | EventKind::CP)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// Year of the December that opens the DJF window.
    pub year: i32,
    pub kind: EventKind,
    pub djf_tc: f64,
    pub djf_te: f64,
    pub extreme: bool,
    pub multiyear_id: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventCatalog {
    pub events: Vec<Event>,
    /// Months covered by the classified record.
    pub span_months: usize,
}

impl EventCatalog {
    pub fn counts(&self) -> EventCounts {
        let mut c = EventCounts::default();
        let mut groups_el = std::collections::BTreeSet::new();
        let mut groups_la = std::collections::BTreeSet::new();
        for e in &self.events {
            match e.kind {
                EventKind::EP => c.ep += 1,
                EventKind::CP => c.cp += 1,
                EventKind::LaNina => c.la_nina += 1,
            }
            if e.kind.is_el_nino() {
                c.el_nino += 1;
                c.extreme += e.extreme as usize;
                if let Some(g) = e.multiyear_id {
                    groups_el.insert(g);
                }
            } else if let Some(g) = e.multiyear_id {
                groups_la.insert(g);
            }
        }
        c.multiyear_el_nino = groups_el.len();
        c.multiyear_la_nina = groups_la.len();
        c
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["year", "kind", "djf_tc", "djf_te", "extreme", "multiyear_id"])?;
        for e in &self.events {
            out.write_record([
                e.year.to_string(),
                format!("{:?}", e.kind),
                format!("{:e}", e.djf_tc),
                format!("{:e}", e.djf_te),
                e.extreme.to_string(),
                e.multiyear_id.map(|g| g.to_string()).unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Event counts in the seven reported categories. Multi-year categories
/// count groups, not member years.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub el_nino: usize,
    pub ep: usize,
    pub cp: usize,
    pub extreme: usize,
    pub multiyear_el_nino: usize,
    pub la_nina: usize,
    pub multiyear_la_nina: usize,
}

impl EventCounts {
    pub const CATEGORIES: [&'static str; 7] =
        ["el_nino", "ep", "cp", "extreme", "multiyear_el_nino", "la_nina", "multiyear_la_nina"];

    pub fn as_array(&self) -> [f64; 7] {
        [
            self.el_nino as f64,
            self.ep as f64,
            self.cp as f64,
            self.extreme as f64,
            self.multiyear_el_nino as f64,
            self.la_nina as f64,
            self.multiyear_la_nina as f64,
        ]
    }
}

/// Classify every complete December–February window.
pub fn classify_events(tc: &MonthlySeries, te: &MonthlySeries) -> Result<EventCatalog> {
    tc.require_celsius()?;
    te.require_celsius()?;
    tc.aligned_with(te)?;
    let n = tc.len();
    let mut events: Vec<Event> = Vec::new();
    for k in 0..n.saturating_sub(2) {
        if tc.month(k) != 12 {
            continue;
        }
        let mc = (tc.values[k] + tc.values[k + 1] + tc.values[k + 2]) / 3.0;
        let me = (te.values[k] + te.values[k + 1] + te.values[k + 2]) / 3.0;
        let kind = if me > mc && me > EVENT_THRESHOLD_C {
            Some(EventKind::EP)
        } else if mc > me && mc > EVENT_THRESHOLD_C {
            Some(EventKind::CP)
        } else if mc < -EVENT_THRESHOLD_C || me < -EVENT_THRESHOLD_C {
            Some(EventKind::LaNina)
        } else {
            None
        };
        let Some(kind) = kind else { continue };
        // April of the December year through the following March.
        let lo = k.saturating_sub(8);
        let hi = (k + 4).min(n);
        let peak = te.values[lo..hi].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        events.push(Event {
            year: tc.year(k),
            kind,
            djf_tc: mc,
            djf_te: me,
            extreme: kind.is_el_nino() && peak > EXTREME_THRESHOLD_C,
            multiyear_id: None,
        });
    }
    group_multiyear(&mut events);
    Ok(EventCatalog { events, span_months: n })
}

/// Label maximal runs of at least two consecutive years with the same polarity.
fn group_multiyear(events: &mut [Event]) {
    let mut next = 0;
    let mut i = 0;
    while i < events.len() {
        let polarity = events[i].kind.is_el_nino();
        let mut j = i + 1;
        while j < events.len() && events[j].kind.is_el_nino() == polarity && events[j].year == events[j - 1].year + 1 {
            j += 1;
        }
        if j - i >= 2 {
            for e in &mut events[i..j] {
                e.multiyear_id = Some(next);
            }
            next += 1;
        }
        i = j;
    }
}

/// Per-segment metric values with their box statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentStats {
    pub metrics: Vec<String>,
    /// One row per segment.
    pub values: Vec<Vec<f64>>,
    pub median: Vec<f64>,
    pub p5: Vec<f64>,
    pub p95: Vec<f64>,
}

impl SegmentStats {
    pub fn from_rows(metrics: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InsufficientData { needed: 1, available: 0 });
        }
        if let Some(r) = values.iter().find(|r| r.len() != metrics.len()) {
            return Err(Error::DimensionMismatch { expected: metrics.len(), got: r.len() });
        }
        let column = |j: usize| -> Vec<f64> { values.iter().map(|r| r[j]).collect() };
        let q = |p: f64| (0..metrics.len()).map(|j| percentile(&column(j), p)).collect();
        Ok(Self { median: q(50.0), p5: q(5.0), p95: q(95.0), metrics, values })
    }

    pub fn index(&self, metric: &str) -> Option<usize> {
        self.metrics.iter().position(|m| m == metric)
    }

    /// Whether `value` lies inside the 5–95 box of `metric`.
    pub fn within_box(&self, metric: &str, value: f64) -> Option<bool> {
        self.index(metric).map(|j| value >= self.p5[j] && value <= self.p95[j])
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["metric", "median", "p5", "p95"])?;
        for (j, m) in self.metrics.iter().enumerate() {
            out.write_record([m.clone(), format!("{:e}", self.median[j]), format!("{:e}", self.p5[j]), format!("{:e}", self.p95[j])])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (p / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Event counts per segment in the seven categories.
/// Counts are only comparable across catalogs of one common span.
pub fn occurrence_frequencies(catalogs: &[EventCatalog]) -> Result<SegmentStats> {
    let span = catalogs.first().map(|c| c.span_months).ok_or(Error::InsufficientData { needed: 1, available: 0 })?;
    if span < 12 {
        return Err(Error::InsufficientData { needed: 12, available: span });
    }
    if let Some(c) = catalogs.iter().find(|c| c.span_months != span) {
        return Err(Error::InvalidConfig(format!("catalog spans differ: {} vs {} months", span, c.span_months)));
    }
    let rows = catalogs.iter().map(|c| c.counts().as_array().to_vec()).collect();
    SegmentStats::from_rows(EventCounts::CATEGORIES.iter().map(|s| s.to_string()).collect(), rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Density {
    pub x: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

impl Density {
    /// Trapezoidal integral over the grid.
    pub fn integral(&self) -> f64 {
        self.x.windows(2).zip(self.density.windows(2)).map(|(x, d)| 0.5 * (x[1] - x[0]) * (d[0] + d[1])).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongRunStats {
    /// Variance per calendar month, January first.
    pub seasonal_variance: [f64; 12],
    pub pdf: Density,
    pub acf: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    /// Raw kurtosis (Gaussian = 3).
    pub kurtosis: f64,
}

impl LongRunStats {
    /// Calendar month (1–12) with the largest variance.
    pub fn peak_variance_month(&self) -> u32 {
        let (k, _) = self
            .seasonal_variance
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("twelve months");
        k as u32 + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub kurtosis: f64,
}

pub fn moments(x: &[f64]) -> Result<Moments> {
    if x.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, available: x.len() });
    }
    let n = x.len() as f64;
    let mean = stats::mean(x);
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if m2 <= 0.0 {
        return Err(Error::ZeroVariance("series".into()));
    }
    Ok(Moments { mean, variance: m2, skewness: m3 / m2.powf(1.5), kurtosis: m4 / (m2 * m2) })
}

/// Gaussian kernel density with Silverman's bandwidth on a 512-point grid
/// spanning five standard deviations either side of the mean.
pub fn kernel_density(x: &[f64]) -> Result<Density> {
    let m = moments(x)?;
    let sd = m.variance.sqrt();
    let iqr = percentile(x, 75.0) - percentile(x, 25.0);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * (x.len() as f64).powf(-0.2);
    let lo = m.mean - 5.0 * sd;
    let step = 10.0 * sd / (KDE_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..KDE_POINTS).map(|i| lo + step * i as f64).collect();
    let norm = 1.0 / (x.len() as f64 * h * (2.0 * PI).sqrt());
    let density = grid
        .par_iter()
        .map(|g| x.iter().map(|v| (-0.5 * ((g - v) / h).powi(2)).exp()).sum::<f64>() * norm)
        .collect();
    Ok(Density { x: grid, density, bandwidth: h })
}

/// Seasonal variance, density, autocorrelation up to `max_lag_months` and moments.
pub fn long_run_stats(series: &MonthlySeries, max_lag_months: usize) -> Result<LongRunStats> {
    let need = MIN_STATS_YEARS * 12;
    if series.len() < need {
        return Err(Error::InsufficientData { needed: need, available: series.len() });
    }
    let x = &series.values;
    let m = moments(x).map_err(|_| Error::ZeroVariance(series.name.clone()))?;
    let mut seasonal_variance = [0.0; 12];
    for (mo, slot) in seasonal_variance.iter_mut().enumerate() {
        let vals: Vec<f64> = (0..x.len()).filter(|&k| series.month(k) as usize == mo + 1).map(|k| x[k]).collect();
        *slot = stats::variance(&vals);
    }
    let acf = (0..=max_lag_months).map(|l| stats::autocorrelation(x, l)).collect();
    Ok(LongRunStats {
        seasonal_variance,
        pdf: kernel_density(x)?,
        acf,
        mean: m.mean,
        variance: m.variance,
        skewness: m.skewness,
        kurtosis: m.kurtosis,
    })
}

/// Per-longitude regression of SST anomalies on (T_C, T_E).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionProfile {
    /// Degrees east.
    pub longitudes: Vec<f64>,
    pub r_c: Vec<f64>,
    pub r_e: Vec<f64>,
}

impl RegressionProfile {
    pub fn new(longitudes: Vec<f64>, r_c: Vec<f64>, r_e: Vec<f64>) -> Result<Self> {
        if r_c.len() != longitudes.len() || r_e.len() != longitudes.len() {
            return Err(Error::DimensionMismatch { expected: longitudes.len(), got: r_c.len().min(r_e.len()) });
        }
        if r_c.iter().chain(&r_e).any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("profile coefficients must be finite".into()));
        }
        Ok(Self { longitudes, r_c, r_e })
    }

    /// Unimodal profiles centred on the Niño 4 (170°W) and Niño 3 (120°W)
    /// boxes, for use when no gridded SST is at hand.
    pub fn idealized() -> Self {
        let longitudes: Vec<f64> = (0..=160).map(|i| 120.0 + i as f64).collect();
        let bump = |c: f64, w: f64| longitudes.iter().map(|x| (-0.5 * ((x - c) / w).powi(2)).exp()).collect();
        Self { r_c: bump(190.0, 20.0), r_e: bump(240.0, 20.0), longitudes }
    }

    /// SST(x) = r_C(x) T_C + r_E(x) T_E.
    pub fn reconstruct(&self, tc: f64, te: f64) -> Vec<f64> {
        self.r_c.iter().zip(&self.r_e).map(|(c, e)| c * tc + e * te).collect()
    }

    /// Longitude × time reconstruction.
    pub fn reconstruct_grid(&self, tc: &[f64], te: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.longitudes.len(), tc.len().min(te.len()), |i, t| self.r_c[i] * tc[t] + self.r_e[i] * te[t])
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["longitude", "r_c", "r_e"])?;
        for i in 0..self.longitudes.len() {
            out.write_record([format!("{:e}", self.longitudes[i]), format!("{:e}", self.r_c[i]), format!("{:e}", self.r_e[i])])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Least-squares fit, without intercept, of each longitude's anomalies
/// (rows of `grid`, months along columns) on `tc` and `te`.
pub fn regression_profile(grid: &DMatrix<f64>, longitudes: &[f64], tc: &[f64], te: &[f64]) -> Result<RegressionProfile> {
    let t = grid.ncols();
    if grid.nrows() != longitudes.len() {
        return Err(Error::DimensionMismatch { expected: grid.nrows(), got: longitudes.len() });
    }
    if tc.len() != t || te.len() != t {
        return Err(Error::DimensionMismatch { expected: t, got: tc.len().min(te.len()) });
    }
    if t < 24 {
        return Err(Error::InsufficientData { needed: 24, available: t });
    }
    if stats::correlation(tc, te).abs() > 0.999 {
        return Err(Error::Conditioning { columns: vec!["TC".into(), "TE".into()] });
    }
    let g = Matrix2::new(stats::dot(tc, tc), stats::dot(tc, te), stats::dot(tc, te), stats::dot(te, te));
    let inv = g.try_inverse().ok_or_else(|| Error::Conditioning { columns: vec!["TC".into(), "TE".into()] })?;
    let mut r_c = Vec::with_capacity(grid.nrows());
    let mut r_e = Vec::with_capacity(grid.nrows());
    for row in grid.row_iter() {
        let y: Vec<f64> = row.iter().copied().collect();
        let b = inv * Vector2::new(stats::dot(tc, &y), stats::dot(te, &y));
        r_c.push(b[0]);
        r_e.push(b[1]);
    }
    RegressionProfile::new(longitudes.to_vec(), r_c, r_e)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BivariatePoint {
    pub year: i32,
    pub kind: EventKind,
    pub peak_longitude: f64,
    pub peak_amplitude: f64,
}

/// Zonal maximum of the reconstructed DJF SST for every El Niño event.
pub fn bivariate_diagram(catalog: &EventCatalog, profile: &RegressionProfile) -> Vec<BivariatePoint> {
    catalog
        .events
        .iter()
        .filter(|e| e.kind.is_el_nino() && (e.djf_tc != 0.0 || e.djf_te != 0.0))
        .map(|e| {
            let sst = profile.reconstruct(e.djf_tc, e.djf_te);
            let (i, amp) = sst.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, v)| (i, *v)).unwrap_or((0, f64::NAN));
            BivariatePoint { year: e.year, kind: e.kind, peak_longitude: profile.longitudes[i], peak_amplitude: amp }
        })
        .collect()
}

pub fn write_bivariate_csv<W: Write>(points: &[BivariatePoint], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["year", "kind", "peak_longitude", "peak_amplitude"])?;
    for p in points {
        out.write_record([p.year.to_string(), format!("{:?}", p.kind), format!("{:e}", p.peak_longitude), format!("{:e}", p.peak_amplitude)])?;
    }
    out.flush()?;
    Ok(())
}

/// Which report sections to compute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationOptions {
    pub seasonal_variance: bool,
    pub distributions: bool,
    pub acf: bool,
    pub events: bool,
    pub bivariate: bool,
    pub max_lag_months: usize,
    pub segment_years: usize,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            seasonal_variance: true,
            distributions: true,
            acf: true,
            events: true,
            bivariate: true,
            max_lag_months: 36,
            segment_years: SEGMENT_YEARS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalSection {
    pub tc: [f64; 12],
    pub te: [f64; 12],
    pub te_peak_month: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSection {
    pub tc: Moments,
    pub te: Moments,
    /// Per-segment variance, skewness and kurtosis of both indices.
    pub segments: SegmentStats,
    #[serde(skip)]
    pub tc_pdf: Option<Density>,
    #[serde(skip)]
    pub te_pdf: Option<Density>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcfSection {
    pub tc: Vec<f64>,
    pub te: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSection {
    pub counts: SegmentStats,
    /// Counts over a reference record, when one is supplied.
    pub observed: Option<EventCounts>,
    pub observed_within_box: Option<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BivariateSection {
    pub points: Vec<BivariatePoint>,
    pub median_ep_peak: f64,
    pub median_cp_peak: f64,
}

/// Results of the statistics and event criteria; disabled sections are absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub segment_years: usize,
    pub n_segments: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seasonal_variance: Option<SeasonalSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distributions: Option<DistributionSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acf: Option<AcfSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub events: Option<EventSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bivariate: Option<BivariateSection>,
}

/// Compute the enabled sections for a pair of °C series. `reference` is an
/// optional observed (T_C, T_E) pair whose event counts are set against the
/// model's segment boxes.
pub fn validate(
    tc: &MonthlySeries,
    te: &MonthlySeries,
    options: &ValidationOptions,
    profile: &RegressionProfile,
    reference: Option<(&MonthlySeries, &MonthlySeries)>,
) -> Result<ValidationReport> {
    tc.require_celsius()?;
    te.require_celsius()?;
    tc.aligned_with(te)?;
    if options.segment_years == 0 {
        return Err(Error::InvalidConfig("segment_years must be positive".into()));
    }
    let seg_tc = tc.segments(options.segment_years);
    let seg_te = te.segments(options.segment_years);
    let need_stats = options.seasonal_variance || options.distributions || options.acf;
    let (stc, ste) = if need_stats {
        (Some(long_run_stats(tc, options.max_lag_months)?), Some(long_run_stats(te, options.max_lag_months)?))
    } else {
        (None, None)
    };

    let seasonal_variance = match (&stc, &ste) {
        (Some(a), Some(b)) if options.seasonal_variance => {
            Some(SeasonalSection { tc: a.seasonal_variance, te: b.seasonal_variance, te_peak_month: b.peak_variance_month() })
        }
        _ => None,
    };

    let distributions = match (&stc, &ste) {
        (Some(a), Some(b)) if options.distributions => {
            let rows: Vec<Vec<f64>> = seg_tc
                .par_iter()
                .zip(&seg_te)
                .map(|(c, e)| {
                    let mc = moments(&c.values)?;
                    let me = moments(&e.values)?;
                    Ok(vec![mc.variance, mc.skewness, mc.kurtosis, me.variance, me.skewness, me.kurtosis])
                })
                .collect::<Result<_>>()?;
            let names = ["tc_variance", "tc_skewness", "tc_kurtosis", "te_variance", "te_skewness", "te_kurtosis"];
            Some(DistributionSection {
                tc: Moments { mean: a.mean, variance: a.variance, skewness: a.skewness, kurtosis: a.kurtosis },
                te: Moments { mean: b.mean, variance: b.variance, skewness: b.skewness, kurtosis: b.kurtosis },
                segments: SegmentStats::from_rows(names.iter().map(|s| s.to_string()).collect(), rows)?,
                tc_pdf: Some(a.pdf.clone()),
                te_pdf: Some(b.pdf.clone()),
            })
        }
        _ => None,
    };

    let acf = match (&stc, &ste) {
        (Some(a), Some(b)) if options.acf => Some(AcfSection { tc: a.acf.clone(), te: b.acf.clone() }),
        _ => None,
    };

    let events = if options.events {
        let catalogs: Vec<EventCatalog> =
            seg_tc.par_iter().zip(&seg_te).map(|(c, e)| classify_events(c, e)).collect::<Result<_>>()?;
        let counts = occurrence_frequencies(&catalogs)?;
        let observed = reference.map(|(c, e)| classify_events(c, e).map(|cat| cat.counts())).transpose()?;
        let observed_within_box = observed.map(|o| {
            o.as_array().iter().enumerate().map(|(j, &v)| v >= counts.p5[j] && v <= counts.p95[j]).collect()
        });
        Some(EventSection { counts, observed, observed_within_box })
    } else {
        None
    };

    let bivariate = if options.bivariate {
        let catalog = classify_events(tc, te)?;
        let points = bivariate_diagram(&catalog, profile);
        let med = |k: EventKind| {
            let v: Vec<f64> = points.iter().filter(|p| p.kind == k).map(|p| p.peak_amplitude).collect();
            percentile(&v, 50.0)
        };
        Some(BivariateSection { median_ep_peak: med(EventKind::EP), median_cp_peak: med(EventKind::CP), points })
    } else {
        None
    };

    Ok(ValidationReport {
        segment_years: options.segment_years,
        n_segments: seg_tc.len(),
        seasonal_variance,
        distributions,
        acf,
        events,
        bivariate,
    })
}

impl ValidationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Plot-ready CSVs, one per figure family, written into `dir`.
    pub fn write_csvs(&self, dir: &std::path::Path) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut open = |name: &str| -> Result<std::fs::File> {
            let p = dir.join(name);
            written.push(p.clone());
            Ok(std::fs::File::create(p)?)
        };
        if let Some(s) = &self.seasonal_variance {
            let mut out = csv::Writer::from_writer(open("seasonal_variance.csv")?);
            out.write_record(["month", "tc", "te"])?;
            for m in 0..12 {
                out.write_record([(m + 1).to_string(), format!("{:e}", s.tc[m]), format!("{:e}", s.te[m])])?;
            }
            out.flush()?;
        }
        if let Some(d) = &self.distributions {
            if let (Some(a), Some(b)) = (&d.tc_pdf, &d.te_pdf) {
                let mut out = csv::Writer::from_writer(open("pdf.csv")?);
                out.write_record(["tc_x", "tc_density", "te_x", "te_density"])?;
                for i in 0..a.x.len() {
                    out.write_record([
                        format!("{:e}", a.x[i]),
                        format!("{:e}", a.density[i]),
                        format!("{:e}", b.x[i]),
                        format!("{:e}", b.density[i]),
                    ])?;
                }
                out.flush()?;
            }
            d.segments.write_csv(open("moments_box.csv")?)?;
        }
        if let Some(a) = &self.acf {
            let mut out = csv::Writer::from_writer(open("acf.csv")?);
            out.write_record(["lag_months", "tc", "te"])?;
            for l in 0..a.tc.len() {
                out.write_record([l.to_string(), format!("{:e}", a.tc[l]), format!("{:e}", a.te[l])])?;
            }
            out.flush()?;
        }
        if let Some(e) = &self.events {
            e.counts.write_csv(open("event_counts_box.csv")?)?;
        }
        if let Some(b) = &self.bivariate {
            write_bivariate_csv(&b.points, open("bivariate.csv")?)?;
        }
        Ok(written)
    }
}
