//! OBD/GPS stream handling: 1 Hz resampling, clock alignment by speed
//! cross-correlation, and fusion into a single per-second trace.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default half-width of the lag search window, seconds.
pub const DEFAULT_MAX_LAG_S: usize = 120;
/// Minimum joined duration for a fused trace, seconds.
pub const MIN_FUSED_OVERLAP_S: usize = 60;
/// Longest run of empty seconds that resampling bridges by interpolation.
pub const MAX_INTERPOLATED_GAP_S: i64 = 2;

const MIN_CORRELATION_PAIRS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriveMode {
    #[default]
    Normal,
    Eco,
}

impl fmt::Display for DriveMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DriveMode::Normal => "normal",
            DriveMode::Eco => "eco",
        })
    }
}

impl FromStr for DriveMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(DriveMode::Normal),
            "eco" => Ok(DriveMode::Eco),
            other => Err(Error::Invalid(format!("unknown drive mode `{other}`"))),
        }
    }
}

/// One row of the on-board diagnostics stream. Time is relative to the run start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObdSample {
    #[serde(rename = "t_rel_s")]
    pub t_rel: f64,
    #[serde(rename = "speed_mph")]
    pub speed: f64,
    /// Battery pack current; positive while charging.
    #[serde(rename = "current_a")]
    pub current: f64,
    #[serde(rename = "voltage_v")]
    pub voltage: f64,
    #[serde(rename = "ac_power_w")]
    pub ac_power: f64,
    #[serde(rename = "acc_power_w")]
    pub acc_power: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsSample {
    #[serde(rename = "t_utc_ms")]
    pub t_utc: i64,
    #[serde(rename = "lat_deg")]
    pub lat: f64,
    #[serde(rename = "lon_deg")]
    pub lon: f64,
    #[serde(rename = "elevation_m")]
    pub elevation: f64,
    #[serde(rename = "speed_mph")]
    pub speed: f64,
}

/// A fused 1 Hz record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSample {
    pub t_utc: i64,
    pub speed: f64,
    pub p_prop: f64,
    pub lat: f64,
    pub lon: f64,
    pub elevation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedTrace {
    pub trip_id: String,
    pub mode: DriveMode,
    pub samples: Vec<TraceSample>,
}

impl FusedTrace {
    /// Splits the samples into runs of consecutive seconds.
    pub fn segments(&self) -> impl Iterator<Item = &[TraceSample]> {
        self.samples
            .chunk_by(|a, b| b.t_utc - a.t_utc == 1)
    }
}

/// Net propulsion power in watts: battery output minus A/C and accessory loads.
/// Negative values mean net regeneration.
pub fn compute_propulsion_power(s: &ObdSample) -> f64 {
    -(s.current * s.voltage) - (s.ac_power + s.acc_power)
}

/// A contiguous run of per-second values.
pub type Segment<const N: usize> = Vec<(i64, [f64; N])>;

/// Averages a time-ordered stream onto the integer-second grid.
///
/// Each occupied second holds the mean of the samples flooring to it. Up to
/// [`MAX_INTERPOLATED_GAP_S`] empty seconds between occupied ones are filled
/// by linear interpolation; longer gaps start a new segment.
pub fn resample_to_1hz<const N: usize>(stream: &[(f64, [f64; N])]) -> Result<Vec<Segment<N>>> {
    if stream.len() < 2 {
        return Err(Error::EmptyInput(format!(
            "resampling needs at least 2 samples, got {}",
            stream.len()
        )));
    }
    if let Some(w) = stream.windows(2).find(|w| !(w[1].0 >= w[0].0)) {
        return Err(Error::Invalid(format!(
            "stream not time-ordered at t={} -> t={}",
            w[0].0, w[1].0
        )));
    }

    let mut bins: Vec<(i64, [f64; N], usize)> = Vec::new();
    for (t, values) in stream {
        let second = t.floor() as i64;
        match bins.last_mut() {
            Some((s, sum, n)) if *s == second => {
                for (acc, v) in sum.iter_mut().zip(values) {
                    *acc += v;
                }
                *n += 1;
            }
            _ => bins.push((second, *values, 1)),
        }
    }

    let mut segments: Vec<Segment<N>> = Vec::new();
    let mut current: Segment<N> = Vec::new();
    for (second, sum, n) in bins {
        let mean = sum.map(|v| v / n as f64);
        if let Some(&(prev_t, prev)) = current.last() {
            let missing = second - prev_t - 1;
            if missing > MAX_INTERPOLATED_GAP_S {
                segments.push(std::mem::take(&mut current));
            } else {
                for k in 1..=missing {
                    let frac = k as f64 / (missing + 1) as f64;
                    let mut v = prev;
                    for (out, (a, b)) in v.iter_mut().zip(prev.iter().zip(&mean)) {
                        *out = a + (b - a) * frac;
                    }
                    current.push((prev_t + k, v));
                }
            }
        }
        current.push((second, mean));
    }
    if !current.is_empty() {
        segments.push(current);
    }
    Ok(segments)
}

/// Estimates the integer clock offset between two 1 Hz speed series.
///
/// `obd[i]` is paired with `gps[i + lag]`; a positive lag means the OBD
/// stream starts `lag` seconds after the GPS origin. Non-finite entries are
/// treated as missing. The lag maximizing the Pearson correlation of the
/// overlap wins, ties going to the smallest `|lag|`.
pub fn align_by_cross_correlation(obd: &[f64], gps: &[f64], max_lag: usize) -> Result<i64> {
    if max_lag == 0 {
        return Err(Error::Invalid("max_lag must be positive".into()));
    }
    let needed = 2 * max_lag + MIN_CORRELATION_PAIRS;
    if obd.len() < needed || gps.len() < needed {
        return Err(Error::InsufficientOverlap(format!(
            "series lengths {} and {} are below {needed} required for max_lag {max_lag}",
            obd.len(),
            gps.len()
        )));
    }
    for (name, series) in [("obd", obd), ("gps", gps)] {
        if !has_variance(series) {
            return Err(Error::DegenerateSignal(format!("{name} speed series is constant")));
        }
    }

    let max_lag = max_lag as i64;
    let mut best: Option<(i64, f64)> = None;
    for lag in -max_lag..=max_lag {
        let Some(r) = overlap_correlation(obd, gps, lag) else {
            continue;
        };
        let better = match best {
            None => true,
            Some((best_lag, best_r)) => {
                let tol = 1e-12 * best_r.abs().max(1.0);
                r > best_r + tol || ((r - best_r).abs() <= tol && lag.abs() < best_lag.abs())
            }
        };
        if better {
            best = Some((lag, r));
        }
    }
    best.map(|(lag, _)| lag)
        .ok_or_else(|| Error::DegenerateSignal("no lag produced a defined correlation".into()))
}

fn has_variance(series: &[f64]) -> bool {
    let mut finite = series.iter().copied().filter(|v| v.is_finite());
    match finite.next() {
        Some(first) => finite.any(|v| v != first),
        None => false,
    }
}

fn overlap_correlation(obd: &[f64], gps: &[f64], lag: i64) -> Option<f64> {
    let start = (-lag).max(0) as usize;
    let end = (obd.len() as i64).min(gps.len() as i64 - lag).max(0) as usize;
    let pairs = (start..end)
        .map(|i| (obd[i], gps[(i as i64 + lag) as usize]))
        .filter(|(a, b)| a.is_finite() && b.is_finite());

    let (mut n, mut sa, mut sb) = (0usize, 0.0, 0.0);
    for (a, b) in pairs.clone() {
        n += 1;
        sa += a;
        sb += b;
    }
    if n < MIN_CORRELATION_PAIRS {
        return None;
    }
    let (ma, mb) = (sa / n as f64, sb / n as f64);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (a, b) in pairs {
        cov += (a - ma) * (b - mb);
        va += (a - ma) * (a - ma);
        vb += (b - mb) * (b - mb);
    }
    if va <= 0.0 || vb <= 0.0 {
        return None;
    }
    Some(cov / (va.sqrt() * vb.sqrt()))
}

#[derive(Debug, Clone)]
pub struct FuseConfig {
    pub trip_id: String,
    pub mode: DriveMode,
    pub max_lag: usize,
}

impl Default for FuseConfig {
    fn default() -> Self {
        Self {
            trip_id: "trip".into(),
            mode: DriveMode::Normal,
            max_lag: DEFAULT_MAX_LAG_S,
        }
    }
}

/// Dense per-second series starting at `origin`, NaN where no sample exists.
struct Dense<const N: usize> {
    origin: i64,
    values: Vec<[f64; N]>,
}

impl<const N: usize> Dense<N> {
    fn from_segments(segments: &[Segment<N>]) -> Self {
        let origin = segments[0][0].0;
        let last = segments.last().and_then(|s| s.last()).map_or(origin, |p| p.0);
        let mut values = vec![[f64::NAN; N]; (last - origin + 1) as usize];
        for &(t, v) in segments.iter().flatten() {
            values[(t - origin) as usize] = v;
        }
        Self { origin, values }
    }

    fn channel(&self, idx: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[idx]).collect()
    }

    fn at(&self, t: i64) -> Option<[f64; N]> {
        let i = t - self.origin;
        if i < 0 {
            return None;
        }
        self.values
            .get(i as usize)
            .copied()
            .filter(|v| v[0].is_finite())
    }
}

/// Resamples, aligns and joins the two streams into one 1 Hz trace.
///
/// Speed comes from the OBD stream; position and elevation from GPS.
pub fn fuse(obd: &[ObdSample], gps: &[GpsSample], cfg: &FuseConfig) -> Result<FusedTrace> {
    if obd.is_empty() {
        return Err(Error::EmptyInput("OBD stream is empty".into()));
    }
    if gps.is_empty() {
        return Err(Error::EmptyInput("GPS stream is empty".into()));
    }
    validate_obd(obd)?;
    validate_gps(gps)?;

    let obd_stream: Vec<(f64, [f64; 2])> = obd
        .iter()
        .map(|s| (s.t_rel, [s.speed, compute_propulsion_power(s)]))
        .collect();
    let gps_stream: Vec<(f64, [f64; 4])> = gps
        .iter()
        .map(|s| (s.t_utc as f64 / 1000.0, [s.speed, s.lat, s.lon, s.elevation]))
        .collect();
    let obd_dense = Dense::from_segments(&resample_to_1hz(&obd_stream)?);
    let gps_dense = Dense::from_segments(&resample_to_1hz(&gps_stream)?);

    let obd_speed = obd_dense.channel(0);
    let gps_speed = gps_dense.channel(0);
    let shortest = obd_speed.len().min(gps_speed.len());
    let max_lag = cfg
        .max_lag
        .min(shortest.saturating_sub(MIN_CORRELATION_PAIRS) / 2);
    if max_lag == 0 {
        return Err(Error::InsufficientOverlap(format!(
            "streams too short to align ({shortest} s)"
        )));
    }
    let lag = align_by_cross_correlation(&obd_speed, &gps_speed, max_lag)?;

    let samples: Vec<TraceSample> = (0..obd_dense.values.len() as i64)
        .filter_map(|i| {
            let o = obd_dense.at(obd_dense.origin + i)?;
            let utc = gps_dense.origin + i + lag;
            let g = gps_dense.at(utc)?;
            Some(TraceSample {
                t_utc: utc,
                speed: o[0],
                p_prop: o[1],
                lat: g[1],
                lon: g[2],
                elevation: g[3],
            })
        })
        .collect();

    if samples.len() < MIN_FUSED_OVERLAP_S {
        return Err(Error::NoOverlap(format!(
            "{} s of joined data after alignment (lag {lag} s), need {MIN_FUSED_OVERLAP_S}",
            samples.len()
        )));
    }
    log::debug!("fused {}: lag {lag} s, {} samples", cfg.trip_id, samples.len());

    Ok(FusedTrace {
        trip_id: cfg.trip_id.clone(),
        mode: cfg.mode,
        samples,
    })
}

fn validate_obd(obd: &[ObdSample]) -> Result<()> {
    for (i, s) in obd.iter().enumerate() {
        if !(s.voltage > 0.0) {
            return Err(Error::Invalid(format!("OBD row {i}: voltage must be positive")));
        }
        if !(s.speed >= 0.0) {
            return Err(Error::Invalid(format!("OBD row {i}: negative speed")));
        }
        if i > 0 && !(s.t_rel >= obd[i - 1].t_rel) {
            return Err(Error::Invalid(format!("OBD row {i}: time goes backwards")));
        }
    }
    Ok(())
}

fn validate_gps(gps: &[GpsSample]) -> Result<()> {
    for (i, s) in gps.iter().enumerate() {
        if !(-90.0..=90.0).contains(&s.lat) || !(-180.0..=180.0).contains(&s.lon) {
            return Err(Error::Invalid(format!("GPS row {i}: coordinates out of range")));
        }
        if i > 0 && s.t_utc <= gps[i - 1].t_utc {
            return Err(Error::Invalid(format!("GPS row {i}: timestamps not strictly increasing")));
        }
    }
    Ok(())
}

/// Symmetric mean absolute percentage error, in percent.
pub fn smape(reference: &[f64], evaluated: &[f64]) -> Result<f64> {
    if reference.is_empty() || reference.len() != evaluated.len() {
        return Err(Error::Invalid(format!(
            "smape needs equal non-empty series, got {} and {}",
            reference.len(),
            evaluated.len()
        )));
    }
    if reference.iter().chain(evaluated).any(|v| !(*v >= 0.0)) {
        return Err(Error::Invalid("smape inputs must be non-negative".into()));
    }
    let (num, den) = reference
        .iter()
        .zip(evaluated)
        .fold((0.0, 0.0), |(n, d), (a, f)| (n + (f - a).abs(), d + (a + f)));
    if den == 0.0 {
        return Err(Error::DegenerateDenominator("sum of series is zero".into()));
    }
    Ok(100.0 * num / den)
}

// ---- file formats ----

#[derive(Debug, Serialize, Deserialize)]
struct TraceRow {
    trip_id: String,
    mode: DriveMode,
    t_utc_s: i64,
    speed_mph: f64,
    p_prop_w: f64,
    lat_deg: f64,
    lon_deg: f64,
    elevation_m: f64,
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::csv(path, e))
}

pub(crate) fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for row in rows {
        writer.serialize(row).map_err(|e| Error::csv(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn read_obd_csv(path: &Path) -> Result<Vec<ObdSample>> {
    read_csv(path)
}

pub fn write_obd_csv(path: &Path, samples: &[ObdSample]) -> Result<()> {
    write_csv(path, samples)
}

pub fn read_gps_csv(path: &Path) -> Result<Vec<GpsSample>> {
    read_csv(path)
}

pub fn write_gps_csv(path: &Path, samples: &[GpsSample]) -> Result<()> {
    write_csv(path, samples)
}

/// Reads a fused trace file; trips are returned in order of first appearance.
pub fn read_traces_csv(path: &Path) -> Result<Vec<FusedTrace>> {
    let rows: Vec<TraceRow> = read_csv(path)?;
    let mut order: Vec<String> = Vec::new();
    let mut by_trip: BTreeMap<String, FusedTrace> = BTreeMap::new();
    for row in rows {
        let trace = by_trip.entry(row.trip_id.clone()).or_insert_with(|| {
            order.push(row.trip_id.clone());
            FusedTrace {
                trip_id: row.trip_id.clone(),
                mode: row.mode,
                samples: Vec::new(),
            }
        });
        if trace.mode != row.mode {
            return Err(Error::Invalid(format!(
                "{}: trip {} mixes drive modes",
                path.display(),
                row.trip_id
            )));
        }
        if let Some(last) = trace.samples.last() {
            if row.t_utc_s <= last.t_utc {
                return Err(Error::Invalid(format!(
                    "{}: trip {} is not time-ordered at t={}",
                    path.display(),
                    row.trip_id,
                    row.t_utc_s
                )));
            }
        }
        trace.samples.push(TraceSample {
            t_utc: row.t_utc_s,
            speed: row.speed_mph,
            p_prop: row.p_prop_w,
            lat: row.lat_deg,
            lon: row.lon_deg,
            elevation: row.elevation_m,
        });
    }
    Ok(order
        .into_iter()
        .filter_map(|id| by_trip.remove(&id))
        .collect())
}

pub fn write_traces_csv(path: &Path, traces: &[FusedTrace]) -> Result<()> {
    let rows = traces.iter().flat_map(|trace| {
        trace.samples.iter().map(|s| TraceRow {
            trip_id: trace.trip_id.clone(),
            mode: trace.mode,
            t_utc_s: s.t_utc,
            speed_mph: s.speed,
            p_prop_w: s.p_prop,
            lat_deg: s.lat,
            lon_deg: s.lon,
            elevation_m: s.elevation,
        })
    });
    write_csv(path, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obd(current: f64, voltage: f64, ac: f64, acc: f64) -> ObdSample {
        ObdSample {
            t_rel: 0.0,
            speed: 0.0,
            current,
            voltage,
            ac_power: ac,
            acc_power: acc,
        }
    }

    #[test]
    fn propulsion_power_examples() {
        assert_eq!(compute_propulsion_power(&obd(0.0, 360.0, 0.0, 0.0)), 0.0);
        assert_eq!(compute_propulsion_power(&obd(-10.0, 360.0, 500.0, 100.0)), 3000.0);
        assert_eq!(compute_propulsion_power(&obd(20.0, 350.0, 0.0, 0.0)), -7000.0);
    }

    #[test]
    fn resample_constant_20hz() {
        let stream: Vec<(f64, [f64; 1])> = (0..100).map(|i| (i as f64 * 0.05, [30.0])).collect();
        let segs = resample_to_1hz(&stream).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].len(), 5);
        assert!(segs[0].iter().all(|(_, v)| v[0] == 30.0));
        let times: Vec<i64> = segs[0].iter().map(|p| p.0).collect();
        assert_eq!(times, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn resample_means_within_second() {
        let segs = resample_to_1hz(&[(0.0, [10.0]), (0.5, [20.0]), (1.2, [40.0])]).unwrap();
        assert_eq!(segs[0][0], (0, [15.0]));
        assert_eq!(segs[0][1], (1, [40.0]));
    }

    #[test]
    fn resample_interpolates_short_gaps() {
        let segs = resample_to_1hz(&[(0.0, [0.0]), (3.0, [30.0])]).unwrap();
        assert_eq!(segs.len(), 1);
        let vals: Vec<f64> = segs[0].iter().map(|p| p.1[0]).collect();
        assert_eq!(vals, vec![0.0, 10.0, 20.0, 30.0]);
    }

    #[test]
    fn resample_splits_long_gaps() {
        let segs = resample_to_1hz(&[(0.0, [1.0]), (4.0, [2.0])]).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0], vec![(0, [1.0])]);
        assert_eq!(segs[1], vec![(4, [2.0])]);
    }

    #[test]
    fn resample_rejects_short_or_unordered() {
        assert!(matches!(resample_to_1hz(&[(0.0, [1.0])]), Err(Error::EmptyInput(_))));
        assert!(matches!(
            resample_to_1hz(&[(1.0, [1.0]), (0.5, [1.0])]),
            Err(Error::Invalid(_))
        ));
    }

    fn wiggle(n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let t = i as f64;
                25.0 + 10.0 * (t / 17.0).sin() + 4.0 * (t / 5.3).cos() + 3.0 * (t / 41.0).sin()
            })
            .collect()
    }

    #[test]
    fn align_identity_and_shift() {
        let s = wiggle(400);
        assert_eq!(align_by_cross_correlation(&s, &s, 30).unwrap(), 0);

        let truth = wiggle(460);
        let obd = truth[30..430].to_vec();
        let gps = truth[23..423].to_vec();
        assert_eq!(align_by_cross_correlation(&obd, &gps, 30).unwrap(), 7);
    }

    #[test]
    fn align_errors() {
        let s = wiggle(60);
        assert!(matches!(
            align_by_cross_correlation(&s, &s, 30),
            Err(Error::InsufficientOverlap(_))
        ));
        let flat = vec![5.0; 200];
        assert!(matches!(
            align_by_cross_correlation(&flat, &wiggle(200), 30),
            Err(Error::DegenerateSignal(_))
        ));
    }

    #[test]
    fn smape_examples() {
        assert_eq!(smape(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 0.0);
        let v = smape(&[10.0, 20.0], &[12.0, 18.0]).unwrap();
        assert!((v - 100.0 * 4.0 / 60.0).abs() < 1e-12);
        assert!(matches!(
            smape(&[0.0, 0.0], &[0.0, 0.0]),
            Err(Error::DegenerateDenominator(_))
        ));
    }

    #[test]
    fn fuse_rejects_empty_obd() {
        let gps = vec![GpsSample {
            t_utc: 0,
            lat: 0.0,
            lon: 0.0,
            elevation: 0.0,
            speed: 0.0,
        }];
        assert!(matches!(
            fuse(&[], &gps, &FuseConfig::default()),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn drive_mode_parses() {
        assert_eq!("eco".parse::<DriveMode>().unwrap(), DriveMode::Eco);
        assert!("sport".parse::<DriveMode>().is_err());
    }
}
