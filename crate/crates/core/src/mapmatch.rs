//! Nearest-link map matching and per-link snippet extraction.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geo::point_segment_distance;
use crate::netgraph::RoadNetwork;
use crate::telemetry::{write_csv, DriveMode, FusedTrace, TraceSample};

pub const DEFAULT_SEARCH_RADIUS_M: f64 = 50.0;
pub const MIN_SNIPPET_SAMPLES: usize = 3;
pub const MIN_SNIPPET_DISTANCE_MI: f64 = 0.005;

#[derive(Debug, Clone, PartialEq)]
pub struct MatchedPoint {
    pub sample: TraceSample,
    pub link_id: String,
    pub orthogonal_distance: f64,
    pub position_along_link: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snippet {
    pub trip_id: String,
    pub link_id: String,
    pub mode: DriveMode,
    pub samples: Vec<TraceSample>,
    /// mph
    pub avg_speed: f64,
    /// miles
    pub distance: f64,
    /// Wh
    pub energy: f64,
    /// Wh/mi
    pub energy_rate: f64,
    /// mph²/mi
    pub nke: f64,
}

/// Matches `p` to the link with the least orthogonal distance within
/// `search_radius` meters. Equal distances go to the lowest link id.
pub fn match_point(p: &TraceSample, net: &RoadNetwork, search_radius: f64) -> Result<MatchedPoint> {
    if net.is_empty() {
        return Err(Error::Invalid("network has no links".into()));
    }
    if !(search_radius > 0.0) {
        return Err(Error::Invalid("search radius must be positive".into()));
    }
    let nodes = net.nodes();
    let mut best: Option<(f64, usize, f64)> = None;
    for (i, link) in net.links().iter().enumerate() {
        let (a, b) = net.endpoints(i);
        let (d, t) = point_segment_distance(
            (p.lat, p.lon),
            (nodes[a].lat, nodes[a].lon),
            (nodes[b].lat, nodes[b].lon),
        );
        if d > search_radius {
            continue;
        }
        let better = match best {
            None => true,
            Some((bd, bi, _)) => d < bd || (d == bd && link.id < net.links()[bi].id),
        };
        if better {
            best = Some((d, i, t));
        }
    }
    let (d, i, t) = best.ok_or(Error::NoMatch {
        lat: p.lat,
        lon: p.lon,
        radius_m: search_radius,
    })?;
    Ok(MatchedPoint {
        sample: *p,
        link_id: net.links()[i].id.clone(),
        orthogonal_distance: d,
        position_along_link: t,
    })
}

/// Negative kinetic energy: the sum of squared-speed drops per unit distance.
pub fn nke(speeds: &[f64], cumulative_distance: &[f64]) -> Result<f64> {
    if speeds.len() < 2 || speeds.len() != cumulative_distance.len() {
        return Err(Error::Invalid(format!(
            "nke needs at least 2 paired samples, got {} speeds and {} distances",
            speeds.len(),
            cumulative_distance.len()
        )));
    }
    let drops: f64 = speeds
        .windows(2)
        .map(|w| (w[1] * w[1] - w[0] * w[0]).min(0.0))
        .sum();
    let travelled: f64 = cumulative_distance.windows(2).map(|w| w[1] - w[0]).sum();
    if !(travelled > 0.0) {
        return Err(Error::DegenerateDistance(format!(
            "total distance {travelled} mi"
        )));
    }
    Ok(drops / travelled)
}

/// Splits a fused trace into per-link snippets.
///
/// Runs of consecutive seconds matched to the same link form one snippet.
/// Unmatched samples and time gaps end a run; runs shorter than
/// [`MIN_SNIPPET_SAMPLES`] or [`MIN_SNIPPET_DISTANCE_MI`] are dropped.
pub fn segment_into_snippets(trace: &FusedTrace, net: &RoadNetwork, search_radius: f64) -> Vec<Snippet> {
    let matched: Vec<Option<String>> = trace
        .samples
        .iter()
        .map(|s| match_point(s, net, search_radius).ok().map(|m| m.link_id))
        .collect();

    let mut snippets = Vec::new();
    let mut start = 0;
    while start < trace.samples.len() {
        let Some(link) = &matched[start] else {
            start += 1;
            continue;
        };
        let mut end = start + 1;
        while end < trace.samples.len()
            && matched[end].as_ref() == Some(link)
            && trace.samples[end].t_utc - trace.samples[end - 1].t_utc == 1
        {
            end += 1;
        }
        if let Some(snippet) = build_snippet(trace, link, &trace.samples[start..end]) {
            snippets.push(snippet);
        }
        start = end;
    }
    snippets
}

fn build_snippet(trace: &FusedTrace, link_id: &str, samples: &[TraceSample]) -> Option<Snippet> {
    if samples.len() < MIN_SNIPPET_SAMPLES {
        return None;
    }
    let distance: f64 = samples.iter().map(|s| s.speed / 3600.0).sum();
    if distance < MIN_SNIPPET_DISTANCE_MI {
        return None;
    }
    let energy: f64 = samples.iter().map(|s| s.p_prop / 3600.0).sum();
    let hours = samples.len() as f64 / 3600.0;

    let speeds: Vec<f64> = samples.iter().map(|s| s.speed).collect();
    let mut cumulative = Vec::with_capacity(samples.len());
    let mut d = 0.0;
    cumulative.push(d);
    for w in speeds.windows(2) {
        d += 0.5 * (w[0] + w[1]) / 3600.0;
        cumulative.push(d);
    }
    let nke = nke(&speeds, &cumulative).unwrap_or(0.0);

    Some(Snippet {
        trip_id: trace.trip_id.clone(),
        link_id: link_id.to_string(),
        mode: trace.mode,
        samples: samples.to_vec(),
        avg_speed: distance / hours,
        distance,
        energy,
        energy_rate: energy / distance,
        nke,
    })
}

#[derive(Serialize)]
struct SnippetRow<'a> {
    trip_id: &'a str,
    link_id: &'a str,
    mode: DriveMode,
    avg_speed_mph: f64,
    distance_mi: f64,
    energy_wh: f64,
    energy_rate_wh_per_mi: f64,
    nke_mph2_per_mi: f64,
}

pub fn write_snippets_csv(path: &Path, snippets: &[Snippet]) -> Result<()> {
    write_csv(
        path,
        snippets.iter().map(|s| SnippetRow {
            trip_id: &s.trip_id,
            link_id: &s.link_id,
            mode: s.mode,
            avg_speed_mph: s.avg_speed,
            distance_mi: s.distance,
            energy_wh: s.energy,
            energy_rate_wh_per_mi: s.energy_rate,
            nke_mph2_per_mi: s.nke,
        }),
    )
}
