//! Batch evaluation: virtual departures at a fixed interval over a multi-day
//! window, each routed under all three criteria against the traffic in force.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eops::EopsModel;
use crate::error::{Error, Result};
use crate::netgraph::{apply_traffic, build_cost_table, EnergyPolicy, LinkCostTable, RoadNetwork, TrafficFeed, TrafficSnapshot};
use crate::router::{route_request, RouteCriterion, RouteRequest, RouteSet};
use crate::telemetry::write_csv;

pub const DEFAULT_INTERVAL_S: i64 = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdPair {
    pub origin: String,
    pub destination: String,
    pub direction: String,
    /// Label for the report; defaults to `origin-destination`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site: Option<String>,
}

impl OdPair {
    pub fn site_label(&self) -> String {
        self.site
            .clone()
            .unwrap_or_else(|| format!("{}-{}", self.origin, self.destination))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationPlan {
    pub od_pairs: Vec<OdPair>,
    #[serde(rename = "start_epoch_s")]
    pub start_epoch: i64,
    pub days: u32,
    #[serde(rename = "interval_s", default = "default_interval")]
    pub interval: i64,
}

fn default_interval() -> i64 {
    DEFAULT_INTERVAL_S
}

impl EvaluationPlan {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let plan: EvaluationPlan = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.days < 1 {
            return Err(Error::Invalid("plan needs at least one day".into()));
        }
        if self.interval <= 0 || 3600 % self.interval != 0 {
            return Err(Error::Invalid(format!(
                "interval {} s does not divide an hour",
                self.interval
            )));
        }
        if self.od_pairs.is_empty() {
            return Err(Error::Invalid("plan has no OD pairs".into()));
        }
        Ok(())
    }

    pub fn departures(&self) -> impl Iterator<Item = i64> + '_ {
        let n = self.days as i64 * 86_400 / self.interval;
        (0..n).map(move |k| self.start_epoch + k * self.interval)
    }
}

/// Mean cross-criterion increments for one OD pair, in percent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IncrementRow {
    pub site: String,
    pub direction: String,
    pub sd_time_inc_pct: f64,
    pub sd_energy_inc_pct: f64,
    pub ld_dist_inc_pct: f64,
    pub ld_energy_inc_pct: f64,
    pub le_dist_inc_pct: f64,
    pub le_time_inc_pct: f64,
    pub trips: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IncrementReport {
    pub rows: Vec<IncrementRow>,
}

impl IncrementReport {
    pub fn total_trips(&self) -> usize {
        self.rows.iter().map(|r| r.trips).sum()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_csv(path, &self.rows)
    }
}

/// The six increments of one departure, in `IncrementRow` column order.
pub fn tick_increments(set: &RouteSet) -> std::result::Result<[f64; 6], String> {
    use RouteCriterion::*;
    let get = |c| set.get(c).ok_or_else(|| format!("no {c} route"));
    let (sd, ld, le) = (get(ShortestDistance)?, get(LeastDuration)?, get(LeastEnergy)?);
    let inc = |value: f64, best: f64, what: &str| {
        if best > 0.0 {
            Ok(100.0 * (value - best) / best)
        } else {
            Err(format!("optimal {what} is {best}, increment undefined"))
        }
    };
    let (d, t, e) = (sd.total_distance, ld.total_time, le.total_energy);
    Ok([
        inc(sd.total_time, t, "time")?,
        inc(sd.total_energy, e, "energy")?,
        inc(ld.total_distance, d, "distance")?,
        inc(ld.total_energy, e, "energy")?,
        inc(le.total_distance, d, "distance")?,
        inc(le.total_time, t, "time")?,
    ])
}

/// Routes every departure of the plan and averages the increments.
///
/// Departures before the first feed snapshot use free-flow speeds; later
/// ones use the latest snapshot at or before the departure time. A departure
/// with any failed criterion is counted as failed and left out of the means.
pub fn run_evaluation(
    plan: &EvaluationPlan,
    net: &RoadNetwork,
    model: &EopsModel,
    feed: &TrafficFeed,
    policy: EnergyPolicy,
) -> Result<IncrementReport> {
    plan.validate()?;
    for od in &plan.od_pairs {
        for id in [&od.origin, &od.destination] {
            if net.node_idx(id).is_none() {
                return Err(Error::UnknownNode(id.clone()));
            }
        }
    }

    let departures: Vec<i64> = plan.departures().collect();
    let snapshot_epochs: Vec<Option<i64>> = departures
        .iter()
        .map(|&t| feed.at(t).map(|s| s.epoch))
        .collect();
    let mut distinct: Vec<Option<i64>> = snapshot_epochs.clone();
    distinct.sort();
    distinct.dedup();
    let tables: BTreeMap<Option<i64>, LinkCostTable> = distinct
        .par_iter()
        .map(|&key| {
            let snapshot = match key {
                Some(epoch) => feed.at(epoch).cloned().expect("epoch came from the feed"),
                None => TrafficSnapshot::free_flow(plan.start_epoch),
            };
            let speeds = apply_traffic(net, &snapshot)?;
            Ok((key, build_cost_table(net, &speeds, model, policy, snapshot.epoch)?))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(plan.od_pairs.len());
    for od in &plan.od_pairs {
        let req = RouteRequest::all(od.origin.clone(), od.destination.clone());
        let outcomes: Vec<std::result::Result<[f64; 6], String>> = snapshot_epochs
            .par_iter()
            .map(|key| {
                let set = route_request(net, &tables[key], &req).map_err(|e| e.to_string())?;
                tick_increments(&set)
            })
            .collect();

        let mut sums = [0.0; 6];
        let mut ok = 0usize;
        let mut failed = 0usize;
        for outcome in outcomes {
            match outcome {
                Ok(inc) => {
                    for (s, v) in sums.iter_mut().zip(inc) {
                        *s += v;
                    }
                    ok += 1;
                }
                Err(reason) => {
                    log::debug!("{} {}: failed tick: {reason}", od.site_label(), od.direction);
                    failed += 1;
                }
            }
        }
        let mean = sums.map(|s| if ok > 0 { s / ok as f64 } else { f64::NAN });
        rows.push(IncrementRow {
            site: od.site_label(),
            direction: od.direction.clone(),
            sd_time_inc_pct: mean[0],
            sd_energy_inc_pct: mean[1],
            ld_dist_inc_pct: mean[2],
            ld_energy_inc_pct: mean[3],
            le_dist_inc_pct: mean[4],
            le_time_inc_pct: mean[5],
            trips: ok * RouteCriterion::ALL.len(),
            failed,
        });
    }
    Ok(IncrementReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(days: u32, interval: i64) -> EvaluationPlan {
        EvaluationPlan {
            od_pairs: vec![OdPair {
                origin: "a".into(),
                destination: "b".into(),
                direction: "0".into(),
                site: None,
            }],
            start_epoch: 0,
            days,
            interval,
        }
    }

    #[test]
    fn departures_per_week() {
        assert_eq!(plan(7, 300).departures().count(), 2016);
        assert_eq!(plan(1, 3600).departures().count(), 24);
    }

    #[test]
    fn plan_validation() {
        assert!(plan(0, 300).validate().is_err());
        assert!(plan(1, 7).validate().is_err());
        assert!(plan(1, 300).validate().is_ok());
    }

    #[test]
    fn plan_json_defaults_interval() {
        let p: EvaluationPlan = serde_json::from_str(
            r#"{"od_pairs":[{"origin":"a","destination":"b","direction":"0"}],"start_epoch_s":5,"days":1}"#,
        )
        .unwrap();
        assert_eq!(p.interval, 300);
        assert_eq!(p.od_pairs[0].site_label(), "a-b");
    }
}
