//! Band averages of scattered ocean observations.
//!
//! Records `(date, lat, lon, value)` are filtered to one calendar month and
//! one longitude-latitude rectangle, and the average of the value over the
//! rectangle is estimated with the corrected kernel-smoothing weights on the
//! planar `(lon, lat)` design. There is no ocean mask: the rectangle is the
//! integration domain even where it covers land.

use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::bandwidth::BandwidthRule;
use crate::density::Design;
use crate::integrate::{estimate_ks_subset_pair, EstimatorOptions, LabeledSample};
use crate::kernels::KernelSpec;
use crate::parallel;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsRecord {
    pub date: NaiveDate,
    pub lat: f64,
    pub lon: f64,
    pub value: f64,
}

impl ObsRecord {
    /// Validates ranges; a longitude of -180 is folded onto 180.
    pub fn new(date: NaiveDate, lat: f64, lon: f64, value: f64) -> Result<Self> {
        if !(lat.is_finite() && (-90.0..=90.0).contains(&lat)) {
            return Err(Error::InvalidArgument(format!("latitude {lat} outside [-90, 90]")));
        }
        if !(lon.is_finite() && (-180.0..=180.0).contains(&lon)) {
            return Err(Error::InvalidArgument(format!("longitude {lon} outside (-180, 180]")));
        }
        if !value.is_finite() {
            return Err(Error::InvalidArgument("value is not finite".into()));
        }
        let lon = if lon == -180.0 { 180.0 } else { lon };
        Ok(Self { date, lat, lon, value })
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SkippedRow {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct IngestReport {
    pub records: Vec<ObsRecord>,
    pub skipped: Vec<SkippedRow>,
    pub warnings: Vec<String>,
}

pub const REQUIRED_COLUMNS: [&str; 4] = ["date", "lat", "lon", "sst"];

pub fn ingest(path: &Path, strict: bool) -> Result<IngestReport> {
    let file = std::fs::File::open(path)?;
    ingest_reader(file, strict)
}

/// Parses a CSV with header `date,lat,lon,sst` (extra columns ignored).
/// Malformed rows are skipped and listed, or abort the read when `strict`.
pub fn ingest_reader<R: Read>(reader: R, strict: bool) -> Result<IngestReport> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let mut report = IngestReport::default();
    let headers = {
        let h = rdr.headers()?;
        h.clone()
    };
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        log::warn!("input is empty");
        report.warnings.push("input is empty".into());
        return Ok(report);
    }
    let mut idx = [0usize; 4];
    for (k, name) in REQUIRED_COLUMNS.iter().enumerate() {
        idx[k] = headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Parse { line: 1, reason: format!("missing column `{name}`") })?;
    }
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        match parse_row(&row, &idx) {
            Ok(r) => report.records.push(r),
            Err(reason) if strict => return Err(Error::Parse { line, reason }),
            Err(reason) => report.skipped.push(SkippedRow { line, reason }),
        }
    }
    if !report.skipped.is_empty() {
        let msg = format!("skipped {} malformed rows", report.skipped.len());
        log::warn!("{msg}");
        report.warnings.push(msg);
    }
    if report.records.is_empty() {
        report.warnings.push("no valid records".into());
    }
    Ok(report)
}

fn parse_row(row: &csv::StringRecord, idx: &[usize; 4]) -> std::result::Result<ObsRecord, String> {
    let field = |k: usize| row.get(idx[k]).ok_or_else(|| format!("missing field `{}`", REQUIRED_COLUMNS[k]));
    let date = NaiveDate::parse_from_str(field(0)?, "%Y-%m-%d").map_err(|e| format!("bad date: {e}"))?;
    let num = |k: usize| -> std::result::Result<f64, String> {
        let s = field(k)?;
        s.parse::<f64>().map_err(|_| format!("bad {} `{s}`", REQUIRED_COLUMNS[k]))
    };
    ObsRecord::new(date, num(1)?, num(2)?, num(3)?).map_err(|e| e.to_string())
}

/// Longitude-latitude rectangle. Preset bands are half-open in latitude,
/// `(lat_min, lat_max]`, so a latitude on a shared edge goes to the band
/// nearer the equator-ward side listed first (the lower one); the southern
/// cap is closed. Custom bands are closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub name: String,
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min_closed: bool,
}

pub const PRESETS: [(&str, f64, f64); 7] = [
    ("south", -90.0, -50.0),
    ("south-temperate", -50.0, -30.0),
    ("south-tropical", -30.0, -10.0),
    ("equatorial", -10.0, 10.0),
    ("north-tropical", 10.0, 30.0),
    ("north-temperate", 30.0, 50.0),
    ("north", 50.0, 90.0),
];

impl BandSpec {
    pub fn new(lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64) -> Result<Self> {
        let ok = |a: f64, b: f64, lo: f64, hi: f64| a.is_finite() && b.is_finite() && a < b && a >= lo && b <= hi;
        if !ok(lat_min, lat_max, -90.0, 90.0) {
            return Err(Error::InvalidArgument(format!("bad latitude range [{lat_min}, {lat_max}]")));
        }
        if !ok(lon_min, lon_max, -180.0, 180.0) {
            return Err(Error::InvalidArgument(format!("bad longitude range [{lon_min}, {lon_max}]")));
        }
        Ok(Self {
            name: format!("{lat_min}:{lat_max}"),
            lat_min,
            lat_max,
            lon_min,
            lon_max,
            lat_min_closed: true,
        })
    }

    pub fn preset(name: &str) -> Option<Self> {
        PRESETS.iter().find(|p| p.0 == name).map(|&(name, lo, hi)| Self {
            name: name.to_string(),
            lat_min: lo,
            lat_max: hi,
            lon_min: -180.0,
            lon_max: 180.0,
            lat_min_closed: lo == -90.0,
        })
    }

    pub fn presets() -> Vec<Self> {
        PRESETS.iter().map(|p| Self::preset(p.0).expect("listed preset")).collect()
    }

    pub fn with_lon(mut self, lon_min: f64, lon_max: f64) -> Result<Self> {
        let b = Self::new(self.lat_min, self.lat_max, lon_min, lon_max)?;
        self.lon_min = b.lon_min;
        self.lon_max = b.lon_max;
        Ok(self)
    }

    pub fn contains_lat(&self, lat: f64) -> bool {
        let above = if self.lat_min_closed { lat >= self.lat_min } else { lat > self.lat_min };
        above && lat <= self.lat_max
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        self.contains_lat(lat) && lon >= self.lon_min && lon <= self.lon_max
    }

    /// Planar area in square degrees.
    pub fn area(&self) -> f64 {
        (self.lat_max - self.lat_min) * (self.lon_max - self.lon_min)
    }
}

impl FromStr for BandSpec {
    type Err = Error;

    /// A preset name or `lo:hi` in degrees of latitude.
    fn from_str(s: &str) -> Result<Self> {
        if let Some(b) = Self::preset(s) {
            return Ok(b);
        }
        let (a, b) = s.split_once(':').ok_or_else(|| {
            let names: Vec<&str> = PRESETS.iter().map(|p| p.0).collect();
            Error::InvalidArgument(format!("unknown band `{s}`; use lo:hi or one of {}", names.join(", ")))
        })?;
        let parse = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("cannot parse `{v}` as a latitude")))
        };
        Self::new(parse(a)?, parse(b)?, -180.0, 180.0)
    }
}

/// Records dated in the given calendar month.
pub fn in_month(records: &[ObsRecord], year: i32, month: u32) -> Vec<&ObsRecord> {
    records.iter().filter(|r| r.date.year() == year && r.date.month() == month).collect()
}

/// How the integral estimate becomes an average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Divide by the estimate of the band area from the same weights.
    #[default]
    Weights,
    /// Divide by the exact planar area of the band.
    Area,
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weights" => Ok(Self::Weights),
            "area" => Ok(Self::Area),
            other => Err(Error::InvalidArgument(format!("unknown normalization `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OceanOptions {
    pub kernel: KernelSpec,
    pub bandwidth: BandwidthRule,
    pub min_records: usize,
    /// Degrees added around the band when building the density estimate.
    pub margin: f64,
    pub normalization: Normalization,
    pub estimator: EstimatorOptions,
}

impl Default for OceanOptions {
    fn default() -> Self {
        Self {
            kernel: KernelSpec::gaussian(),
            bandwidth: BandwidthRule::Auto,
            min_records: 30,
            margin: 0.0,
            normalization: Normalization::Weights,
            estimator: EstimatorOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BandAverage {
    pub year: i32,
    pub month: u32,
    pub band: String,
    /// Records inside the band.
    pub n: usize,
    /// Records used for the density estimate (band plus margin).
    pub n_design: usize,
    pub average_c: f64,
    pub bandwidth: Vec<f64>,
    pub clamped: usize,
    pub warnings: Vec<String>,
}

pub fn monthly_band_average(
    records: &[ObsRecord],
    band: &BandSpec,
    year: i32,
    month: u32,
    opts: &OceanOptions,
) -> Result<BandAverage> {
    if !(opts.margin >= 0.0 && opts.margin.is_finite()) {
        return Err(Error::InvalidArgument(format!("margin must be non-negative, got {}", opts.margin)));
    }
    let cell = format!("{} {year:04}-{month:02}", band.name);
    let m = opts.margin;
    let selected: Vec<&ObsRecord> = in_month(records, year, month)
        .into_iter()
        .filter(|r| {
            let inside_lat = if m > 0.0 {
                r.lat >= band.lat_min - m && r.lat <= band.lat_max + m
            } else {
                band.contains_lat(r.lat)
            };
            inside_lat && r.lon >= band.lon_min - m && r.lon <= band.lon_max + m
        })
        .collect();
    let mask: Vec<bool> = selected.iter().map(|r| band.contains(r.lat, r.lon)).collect();
    let n = mask.iter().filter(|&&b| b).count();
    let needed = opts.min_records.max(2);
    if n < needed {
        return Err(Error::InsufficientData { cell, got: n, needed });
    }
    let pts: Vec<f64> = selected.iter().flat_map(|r| [r.lon, r.lat]).collect();
    let design = Design::new(pts, 2)?;
    let values: Vec<f64> = selected.iter().map(|r| r.value).collect();
    let h = opts.bandwidth.select(&design, opts.kernel)?;
    let sample = LabeledSample::new(design, values)?;
    let pair = estimate_ks_subset_pair(&sample, opts.kernel, &h, &mask, &opts.estimator)?;
    let corrected = pair.corrected;
    let average_c = match opts.normalization {
        Normalization::Weights => corrected.estimate / pair.corrected_mass,
        Normalization::Area => corrected.estimate / band.area(),
    };
    let mut warnings = corrected.warnings.clone();
    warnings.push("no ocean mask: the full rectangle is the integration domain".into());
    Ok(BandAverage {
        year,
        month,
        band: band.name.clone(),
        n,
        n_design: selected.len(),
        average_c,
        bandwidth: h.scales().to_vec(),
        clamped: corrected.clamped,
        warnings,
    })
}

/// Every `(year, month)` present in the records, ascending.
pub fn months_present(records: &[ObsRecord]) -> Vec<(i32, u32)> {
    let mut m: Vec<(i32, u32)> = records.iter().map(|r| (r.date.year(), r.date.month())).collect();
    m.sort_unstable();
    m.dedup();
    m
}

/// One average per band and month, computed concurrently. Cells that fail
/// are returned as errors in place.
pub fn band_series(
    records: &[ObsRecord],
    bands: &[BandSpec],
    months: &[(i32, u32)],
    opts: &OceanOptions,
) -> Vec<Result<BandAverage>> {
    let cells: Vec<(usize, i32, u32)> = bands
        .iter()
        .enumerate()
        .flat_map(|(b, _)| months.iter().map(move |&(y, m)| (b, y, m)))
        .collect();
    parallel::map_slice(&cells, |&(b, y, m)| monthly_band_average(records, &bands[b], y, m, opts))
}
