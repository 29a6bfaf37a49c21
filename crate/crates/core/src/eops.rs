//! Energy-rate model: binning of snippets by road class, grade and average
//! speed, quartic fits over per-bin medians, and prediction.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mapmatch::{segment_into_snippets, Snippet, DEFAULT_SEARCH_RADIUS_M};
use crate::netgraph::{RoadClass, RoadNetwork};
use crate::telemetry::{write_csv, DriveMode, FusedTrace};

pub const SPEED_BIN_WIDTH_MPH: f64 = 5.0;
/// Cells with fewer observations are merged into a neighbouring speed bin.
pub const MIN_CELL_COUNT: usize = 10;
pub const POLY_TERMS: usize = 5;

/// Interval of percent grade. `None` bounds are unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradeBin {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub lower_inclusive: bool,
    pub upper_inclusive: bool,
}

impl GradeBin {
    const fn new(lower: Option<f64>, upper: Option<f64>, lower_inclusive: bool, upper_inclusive: bool) -> Self {
        Self {
            lower,
            upper,
            lower_inclusive,
            upper_inclusive,
        }
    }

    /// Seven bins symmetric about flat, finer near zero.
    pub fn default_bins() -> Vec<GradeBin> {
        vec![
            GradeBin::new(None, Some(-4.0), false, false),
            GradeBin::new(Some(-4.0), Some(-2.0), true, false),
            GradeBin::new(Some(-2.0), Some(-0.5), true, false),
            GradeBin::new(Some(-0.5), Some(0.5), true, true),
            GradeBin::new(Some(0.5), Some(2.0), false, true),
            GradeBin::new(Some(2.0), Some(4.0), false, true),
            GradeBin::new(Some(4.0), None, false, false),
        ]
    }

    pub fn contains(&self, grade: f64) -> bool {
        let above = match self.lower {
            None => true,
            Some(l) if self.lower_inclusive => grade >= l,
            Some(l) => grade > l,
        };
        let below = match self.upper {
            None => true,
            Some(u) if self.upper_inclusive => grade <= u,
            Some(u) => grade < u,
        };
        above && below
    }
}

pub fn grade_bin_index(bins: &[GradeBin], grade: f64) -> Option<usize> {
    bins.iter().position(|b| b.contains(grade))
}

/// Lower edge of the 5 mph speed bin holding `v`.
pub fn speed_bin_lower(v: f64) -> f64 {
    (v / SPEED_BIN_WIDTH_MPH).floor() * SPEED_BIN_WIDTH_MPH
}

#[derive(Debug, Clone, PartialEq)]
pub struct EopsCell {
    pub road_class: RoadClass,
    pub grade_bin_index: usize,
    /// Lower edge of the half-open speed bin.
    pub speed_bin: f64,
    pub rates: Vec<f64>,
    pub median_rate: f64,
    pub count: usize,
}

impl EopsCell {
    fn new(road_class: RoadClass, grade_bin_index: usize, speed_bin: f64, rates: Vec<f64>) -> Self {
        let median_rate = median(&rates);
        Self {
            road_class,
            grade_bin_index,
            speed_bin,
            count: rates.len(),
            rates,
            median_rate,
        }
    }

    pub fn center(&self) -> f64 {
        self.speed_bin + SPEED_BIN_WIDTH_MPH / 2.0
    }
}

/// Exact median; mean of the middle two for even counts. NaN on empty input.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 1]`.
fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Groups snippets into (class, grade bin, speed bin) cells and merges
/// sparse cells into the neighbouring speed bin holding more observations.
pub fn bin_snippets(snippets: &[Snippet], net: &RoadNetwork, bins: &[GradeBin]) -> Result<Vec<EopsCell>> {
    let mut raw: BTreeMap<(RoadClass, usize), BTreeMap<i64, Vec<f64>>> = BTreeMap::new();
    for s in snippets {
        let link = net.link(&s.link_id).ok_or_else(|| Error::UnknownLink(s.link_id.clone()))?;
        let gi = grade_bin_index(bins, link.grade_pct()).ok_or_else(|| {
            Error::UncoveredBin(format!("grade {}% of link {} is in no bin", link.grade_pct(), link.id))
        })?;
        let sb = speed_bin_lower(s.avg_speed) as i64;
        raw.entry((link.road_class, gi))
            .or_default()
            .entry(sb)
            .or_default()
            .push(s.energy_rate);
    }

    let mut cells = Vec::new();
    for ((class, gi), by_speed) in raw {
        let mut group: Vec<(i64, Vec<f64>)> = by_speed.into_iter().collect();
        merge_sparse(&mut group);
        cells.extend(
            group
                .into_iter()
                .map(|(sb, rates)| EopsCell::new(class, gi, sb as f64, rates)),
        );
    }
    Ok(cells)
}

fn merge_sparse(group: &mut Vec<(i64, Vec<f64>)>) {
    while group.len() > 1 {
        let sparse = group
            .iter()
            .enumerate()
            .filter(|(_, (_, r))| r.len() < MIN_CELL_COUNT)
            .min_by_key(|(i, (_, r))| (r.len(), *i))
            .map(|(i, _)| i);
        let Some(i) = sparse else { break };
        let target = match (i.checked_sub(1), group.get(i + 1)) {
            (Some(prev), Some(next)) if next.1.len() > group[prev].1.len() => i + 1,
            (Some(prev), _) => prev,
            (None, _) => i + 1,
        };
        let (_, rates) = group.remove(i);
        let target = if target > i { target - 1 } else { target };
        group[target].1.extend(rates);
    }
}

/// Ordinary least-squares quartic of median rate against speed-bin center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuarticFit {
    pub alpha: [f64; POLY_TERMS],
    pub v_min: f64,
    pub v_max: f64,
}

pub fn fit_quartic(cells: &[EopsCell]) -> Result<QuarticFit> {
    let points: Vec<(f64, f64)> = cells.iter().map(|c| (c.center(), c.median_rate)).collect();
    fit_quartic_points(&points)
}

/// Least-squares quartic through `(v, rate)` points.
///
/// Solved by SVD on a centered and scaled Vandermonde matrix, then mapped
/// back to plain monomial coefficients.
pub fn fit_quartic_points(points: &[(f64, f64)]) -> Result<QuarticFit> {
    let mut centers: Vec<f64> = points.iter().map(|p| p.0).collect();
    centers.sort_by(f64::total_cmp);
    centers.dedup();
    if centers.len() < POLY_TERMS {
        return Err(Error::UnderdeterminedFit(format!(
            "{} distinct speeds, need {POLY_TERMS}",
            centers.len()
        )));
    }
    if points.iter().any(|(v, r)| !v.is_finite() || !r.is_finite()) {
        return Err(Error::Invalid("non-finite fit input".into()));
    }
    let (v_min, v_max) = (centers[0], centers[centers.len() - 1]);
    let mid = 0.5 * (v_min + v_max);
    let half = 0.5 * (v_max - v_min);

    let a = DMatrix::from_fn(points.len(), POLY_TERMS, |i, j| ((points[i].0 - mid) / half).powi(j as i32));
    let b = DVector::from_iterator(points.len(), points.iter().map(|p| p.1));
    let svd = a.svd(true, true);
    let sv = &svd.singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > smax * 1e-12) {
        return Err(Error::SingularFit(format!("singular values {smax:e}..{smin:e}")));
    }
    let beta = svd
        .solve(&b, 0.0)
        .map_err(|e| Error::SingularFit(e.to_string()))?;

    // p(v) = sum_j beta_j ((v - mid) / half)^j, expanded binomially.
    let mut alpha = [0.0; POLY_TERMS];
    for (j, &bj) in beta.iter().enumerate() {
        let scale = bj / half.powi(j as i32);
        for (k, a) in alpha.iter_mut().enumerate().take(j + 1) {
            *a += scale * binomial(j, k) * (-mid).powi((j - k) as i32);
        }
    }
    Ok(QuarticFit { alpha, v_min, v_max })
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub fn eval_poly(alpha: &[f64; POLY_TERMS], v: f64) -> f64 {
    alpha.iter().rev().fold(0.0, |acc, a| acc * v + a)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub road_class: RoadClass,
    pub grade_bin_index: usize,
    pub alpha: [f64; POLY_TERMS],
    pub v_min: f64,
    pub v_max: f64,
    pub sample_count: usize,
}

/// Calibrated energy-rate curves for one drive mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EopsModel {
    pub mode: DriveMode,
    pub grade_bins: Vec<GradeBin>,
    pub curves: Vec<Curve>,
}

impl EopsModel {
    pub fn new(mode: DriveMode, grade_bins: Vec<GradeBin>, mut curves: Vec<Curve>) -> Result<Self> {
        for c in &curves {
            if c.grade_bin_index >= grade_bins.len() {
                return Err(Error::Invalid(format!(
                    "curve references grade bin {} of {}",
                    c.grade_bin_index,
                    grade_bins.len()
                )));
            }
            if !(c.v_min <= c.v_max) {
                return Err(Error::Invalid("curve fit domain is empty".into()));
            }
        }
        curves.sort_by_key(|c| (c.road_class, c.grade_bin_index));
        if curves
            .windows(2)
            .any(|w| (w[0].road_class, w[0].grade_bin_index) == (w[1].road_class, w[1].grade_bin_index))
        {
            return Err(Error::Invalid("duplicate curve for one (class, grade bin)".into()));
        }
        Ok(Self {
            mode,
            grade_bins,
            curves,
        })
    }

    pub fn curve(&self, road_class: RoadClass, grade_bin_index: usize) -> Option<&Curve> {
        self.curves
            .iter()
            .find(|c| c.road_class == road_class && c.grade_bin_index == grade_bin_index)
    }

    /// Energy rate in Wh/mi. Speed is clamped to the curve's fitted range.
    pub fn predict_rate(&self, road_class: RoadClass, grade_pct: f64, avg_speed: f64) -> Result<f64> {
        let gi = grade_bin_index(&self.grade_bins, grade_pct)
            .ok_or_else(|| Error::UncoveredBin(format!("grade {grade_pct}% is in no bin")))?;
        let curve = self
            .curve(road_class, gi)
            .ok_or_else(|| Error::UncoveredBin(format!("no {road_class} curve for grade bin {gi}")))?;
        Ok(eval_poly(&curve.alpha, avg_speed.clamp(curve.v_min, curve.v_max)))
    }

    /// Like [`predict_rate`](Self::predict_rate), but a grade bin without a
    /// curve falls back to the flat curve of the same road class.
    pub fn predict_link_rate(&self, road_class: RoadClass, grade_pct: f64, avg_speed: f64) -> Result<f64> {
        match self.predict_rate(road_class, grade_pct, avg_speed) {
            Err(Error::UncoveredBin(_)) => self.predict_rate(road_class, 0.0, avg_speed),
            other => other,
        }
    }

    /// Canonical JSON with sorted keys.
    pub fn to_json(&self) -> Result<String> {
        let value = serde_json::to_value(self).map_err(|e| Error::Internal(e.to_string()))?;
        let mut s = serde_json::to_string_pretty(&value).map_err(|e| Error::Internal(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: EopsModel = serde_json::from_str(text).map_err(|e| Error::Invalid(format!("model: {e}")))?;
        EopsModel::new(m.mode, m.grade_bins, m.curves)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: EopsModel = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        EopsModel::new(m.mode, m.grade_bins, m.curves)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// Short content hash identifying this model.
    pub fn fingerprint(&self) -> String {
        let json = self.to_json().unwrap_or_default();
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Relative trip-energy errors, percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorStats {
    pub min: f64,
    pub p25: f64,
    pub mean: f64,
    pub median: f64,
    pub p75: f64,
    pub max: f64,
    pub n: usize,
}

/// Summary of `100 (estimated - measured) / measured` over trips given as
/// `(measured_wh, estimated_wh)`.
pub fn trip_energy_error_stats(trips: &[(f64, f64)]) -> Result<ErrorStats> {
    if trips.is_empty() {
        return Err(Error::EmptyInput("no trips".into()));
    }
    let mut errors = trips
        .iter()
        .map(|&(measured, estimated)| {
            if !(measured > 0.0) {
                return Err(Error::InvalidMeasurement(format!("measured energy {measured} Wh")));
            }
            Ok(100.0 * (estimated - measured) / measured)
        })
        .collect::<Result<Vec<f64>>>()?;
    errors.sort_by(f64::total_cmp);
    let n = errors.len();
    Ok(ErrorStats {
        min: errors[0],
        p25: percentile_sorted(&errors, 0.25),
        mean: errors.iter().sum::<f64>() / n as f64,
        median: percentile_sorted(&errors, 0.5),
        p75: percentile_sorted(&errors, 0.75),
        max: errors[n - 1],
        n,
    })
}

/// Model estimate of the energy of a set of snippets, Wh. Uncovered grade
/// bins use the flat curve of the same class.
pub fn estimate_energy(model: &EopsModel, net: &RoadNetwork, snippets: &[Snippet]) -> Result<f64> {
    snippets.iter().try_fold(0.0, |acc, s| {
        let link = net.link(&s.link_id).ok_or_else(|| Error::UnknownLink(s.link_id.clone()))?;
        Ok(acc + model.predict_link_rate(link.road_class, link.grade_pct(), s.avg_speed)? * s.distance)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TripComparison {
    pub trip_id: String,
    pub measured_wh: f64,
    pub estimated_wh: f64,
}

/// Measured vs. modelled energy per trip, over the trip's snippets. Trips
/// with non-positive measured energy are skipped.
pub fn compare_trips(model: &EopsModel, net: &RoadNetwork, snippets: &[Snippet]) -> Result<Vec<TripComparison>> {
    let mut by_trip: BTreeMap<&str, Vec<&Snippet>> = BTreeMap::new();
    for s in snippets {
        by_trip.entry(&s.trip_id).or_default().push(s);
    }
    let mut out = Vec::new();
    for (trip, group) in by_trip {
        let measured: f64 = group.iter().map(|s| s.energy).sum();
        if !(measured > 0.0) {
            continue;
        }
        let owned: Vec<Snippet> = group.into_iter().cloned().collect();
        out.push(TripComparison {
            trip_id: trip.to_string(),
            measured_wh: measured,
            estimated_wh: estimate_energy(model, net, &owned)?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct CalibrationConfig {
    pub mode: DriveMode,
    pub grade_bins: Vec<GradeBin>,
    pub search_radius_m: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            mode: DriveMode::Normal,
            grade_bins: GradeBin::default_bins(),
            search_radius_m: DEFAULT_SEARCH_RADIUS_M,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Calibration {
    pub model: EopsModel,
    pub snippets: Vec<Snippet>,
    pub cells: Vec<EopsCell>,
    /// (class, grade bin, reason) for groups that could not be fitted.
    pub skipped: Vec<(RoadClass, usize, String)>,
}

/// Map-matches the traces of the configured mode, bins their snippets and
/// fits one quartic per (class, grade bin) with enough data.
pub fn calibrate(traces: &[FusedTrace], net: &RoadNetwork, cfg: &CalibrationConfig) -> Result<Calibration> {
    let selected: Vec<&FusedTrace> = traces.iter().filter(|t| t.mode == cfg.mode).collect();
    if selected.is_empty() {
        return Err(Error::EmptyInput(format!("no {} mode traces", cfg.mode)));
    }
    let snippets: Vec<Snippet> = selected
        .par_iter()
        .map(|t| segment_into_snippets(t, net, cfg.search_radius_m))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let cells = bin_snippets(&snippets, net, &cfg.grade_bins)?;

    let mut groups: BTreeMap<(RoadClass, usize), Vec<EopsCell>> = BTreeMap::new();
    for c in &cells {
        groups.entry((c.road_class, c.grade_bin_index)).or_default().push(c.clone());
    }
    let fits: Vec<((RoadClass, usize), Result<QuarticFit>, usize)> = groups
        .into_par_iter()
        .map(|(key, group)| {
            let count = group.iter().map(|c| c.count).sum();
            (key, fit_quartic(&group), count)
        })
        .collect();

    let mut curves = Vec::new();
    let mut skipped = Vec::new();
    for ((class, gi), fit, count) in fits {
        match fit {
            Ok(f) => curves.push(Curve {
                road_class: class,
                grade_bin_index: gi,
                alpha: f.alpha,
                v_min: f.v_min,
                v_max: f.v_max,
                sample_count: count,
            }),
            Err(e @ (Error::UnderdeterminedFit(_) | Error::SingularFit(_))) => {
                log::warn!("skipping {class} grade bin {gi}: {e}");
                skipped.push((class, gi, e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    if curves.is_empty() {
        return Err(Error::UnderdeterminedFit(format!(
            "none of {} (class, grade bin) groups had enough speed bins",
            skipped.len()
        )));
    }
    Ok(Calibration {
        model: EopsModel::new(cfg.mode, cfg.grade_bins.clone(), curves)?,
        snippets,
        cells,
        skipped,
    })
}

#[derive(Serialize)]
struct CellRow {
    road_class: RoadClass,
    grade_bin_index: usize,
    speed_bin_lower_mph: f64,
    speed_bin_center_mph: f64,
    count: usize,
    median_rate_wh_per_mi: f64,
}

pub fn write_cells_csv(path: &Path, cells: &[EopsCell]) -> Result<()> {
    write_csv(
        path,
        cells.iter().map(|c| CellRow {
            road_class: c.road_class,
            grade_bin_index: c.grade_bin_index,
            speed_bin_lower_mph: c.speed_bin,
            speed_bin_center_mph: c.center(),
            count: c.count,
            median_rate_wh_per_mi: c.median_rate,
        }),
    )
}
