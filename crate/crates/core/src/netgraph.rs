//! Road network model, traffic snapshots and per-link cost derivation.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::eops::EopsModel;
use crate::error::{Error, Result};
use crate::geo::METERS_PER_MILE;

/// Default traffic refresh cadence, seconds.
pub const DEFAULT_REFRESH_S: i64 = 300;
/// Default elevation potential for the `potential` policy, Wh per meter.
pub const DEFAULT_K_POT_WH_PER_M: f64 = 2.2;
/// Allowed disagreement between a stated grade and the endpoint elevations, percent.
pub const GRADE_TOLERANCE_PCT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoadClass {
    Freeway,
    Arterial,
}

impl RoadClass {
    pub const ALL: [RoadClass; 2] = [RoadClass::Freeway, RoadClass::Arterial];
}

impl fmt::Display for RoadClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RoadClass::Freeway => "freeway",
            RoadClass::Arterial => "arterial",
        })
    }
}

impl FromStr for RoadClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "freeway" => Ok(RoadClass::Freeway),
            "arterial" => Ok(RoadClass::Arterial),
            other => Err(Error::Invalid(format!("unknown road class `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadNode {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    #[serde(rename = "elevation_m", default, skip_serializing_if = "Option::is_none")]
    pub elevation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadLink {
    pub id: String,
    #[serde(rename = "from")]
    pub from_node: String,
    #[serde(rename = "to")]
    pub to_node: String,
    #[serde(rename = "length_mi")]
    pub length: f64,
    pub road_class: RoadClass,
    /// Signed percent grade in the direction of travel.
    #[serde(rename = "grade_pct", default, skip_serializing_if = "Option::is_none")]
    pub grade: Option<f64>,
    #[serde(rename = "speed_limit_mph")]
    pub speed_limit: f64,
}

impl RoadLink {
    pub fn grade_pct(&self) -> f64 {
        self.grade.unwrap_or(0.0)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct NetworkFile {
    nodes: Vec<RoadNode>,
    links: Vec<RoadLink>,
}

/// Directed road graph. Immutable once built; node and link indices are
/// positions in file order.
#[derive(Debug, Clone)]
pub struct RoadNetwork {
    nodes: Vec<RoadNode>,
    links: Vec<RoadLink>,
    link_from: Vec<usize>,
    link_to: Vec<usize>,
    node_index: HashMap<String, usize>,
    link_index: HashMap<String, usize>,
    outgoing: Vec<Vec<usize>>,
}

impl RoadNetwork {
    /// Validates and indexes the graph. Missing grades are derived from node
    /// elevations when both are known, otherwise default to flat.
    pub fn new(nodes: Vec<RoadNode>, mut links: Vec<RoadLink>) -> Result<Self> {
        let mut node_index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if !(-90.0..=90.0).contains(&n.lat) || !(-180.0..=180.0).contains(&n.lon) {
                return Err(Error::schema(format!("node {}", n.id), "coordinates out of range"));
            }
            if node_index.insert(n.id.clone(), i).is_some() {
                return Err(Error::schema(format!("node {}", n.id), "duplicate id"));
            }
        }

        let mut link_index = HashMap::with_capacity(links.len());
        let mut link_from = Vec::with_capacity(links.len());
        let mut link_to = Vec::with_capacity(links.len());
        let mut outgoing = vec![Vec::new(); nodes.len()];
        for (i, link) in links.iter_mut().enumerate() {
            let record = format!("link {}", link.id);
            if link_index.insert(link.id.clone(), i).is_some() {
                return Err(Error::schema(record, "duplicate id"));
            }
            let from = *node_index.get(&link.from_node).ok_or_else(|| {
                Error::schema(&record, format!("references missing node `{}`", link.from_node))
            })?;
            let to = *node_index.get(&link.to_node).ok_or_else(|| {
                Error::schema(&record, format!("references missing node `{}`", link.to_node))
            })?;
            if from == to {
                return Err(Error::schema(record, "from and to are the same node"));
            }
            if !(link.length > 0.0) || !link.length.is_finite() {
                return Err(Error::schema(record, "length must be positive"));
            }
            if !(link.speed_limit > 0.0) {
                return Err(Error::schema(record, "speed limit must be positive"));
            }

            let derived = match (nodes[from].elevation, nodes[to].elevation) {
                (Some(a), Some(b)) => Some(100.0 * (b - a) / (link.length * METERS_PER_MILE)),
                _ => None,
            };
            match (link.grade, derived) {
                (Some(g), Some(d)) if (g - d).abs() > GRADE_TOLERANCE_PCT => {
                    return Err(Error::schema(
                        record,
                        format!("grade {g}% disagrees with endpoint elevations ({d:.3}%)"),
                    ));
                }
                (Some(g), _) if !g.is_finite() => {
                    return Err(Error::schema(record, "grade must be finite"));
                }
                (Some(_), _) => {}
                (None, Some(d)) => link.grade = Some(d),
                (None, None) => {
                    log::warn!("link {} has no grade and no elevations; assuming 0%", link.id);
                    link.grade = Some(0.0);
                }
            }

            link_from.push(from);
            link_to.push(to);
            outgoing[from].push(i);
        }

        Ok(Self {
            nodes,
            links,
            link_from,
            link_to,
            node_index,
            link_index,
            outgoing,
        })
    }

    pub fn nodes(&self) -> &[RoadNode] {
        &self.nodes
    }

    pub fn links(&self) -> &[RoadLink] {
        &self.links
    }

    pub fn node_idx(&self, id: &str) -> Option<usize> {
        self.node_index.get(id).copied()
    }

    pub fn link_idx(&self, id: &str) -> Option<usize> {
        self.link_index.get(id).copied()
    }

    pub fn link(&self, id: &str) -> Option<&RoadLink> {
        self.link_idx(id).map(|i| &self.links[i])
    }

    /// Endpoint node indices of link `i`.
    pub fn endpoints(&self, i: usize) -> (usize, usize) {
        (self.link_from[i], self.link_to[i])
    }

    pub fn outgoing(&self, node: usize) -> &[usize] {
        &self.outgoing[node]
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = NetworkFile {
            nodes: self.nodes.clone(),
            links: self.links.clone(),
        };
        serde_json::to_string_pretty(&file).map_err(|e| Error::Internal(e.to_string()))
    }
}

pub fn load_network(path: &Path) -> Result<RoadNetwork> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: NetworkFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    RoadNetwork::new(file.nodes, file.links)
}

/// Per-link average speeds in force from `epoch` on.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrafficSnapshot {
    pub epoch: i64,
    pub speeds: BTreeMap<String, f64>,
}

impl TrafficSnapshot {
    pub fn free_flow(epoch: i64) -> Self {
        Self {
            epoch,
            speeds: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.speeds.iter().find(|(_, v)| !(**v > 0.0) || !v.is_finite()) {
            Some((link, v)) => Err(Error::RejectedSnapshot {
                epoch: self.epoch,
                reason: format!("link {link} has speed {v}"),
            }),
            None => Ok(()),
        }
    }
}

/// Effective speed per link index: the snapshot speed when present, else the
/// speed limit, never above the speed limit.
pub fn apply_traffic(net: &RoadNetwork, snapshot: &TrafficSnapshot) -> Result<Vec<f64>> {
    snapshot.validate()?;
    Ok(net
        .links
        .iter()
        .map(|link| {
            snapshot
                .speeds
                .get(&link.id)
                .map_or(link.speed_limit, |v| v.min(link.speed_limit))
        })
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "lowercase")]
pub enum EnergyPolicy {
    /// Clamp link energy at zero.
    #[default]
    Floor0,
    /// Reweight by an elevation potential, clamping any residual negatives.
    Potential { k_pot: f64 },
}

impl fmt::Display for EnergyPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnergyPolicy::Floor0 => f.write_str("floor0"),
            EnergyPolicy::Potential { .. } => f.write_str("potential"),
        }
    }
}

impl FromStr for EnergyPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "floor0" => Ok(EnergyPolicy::Floor0),
            "potential" => Ok(EnergyPolicy::Potential {
                k_pot: DEFAULT_K_POT_WH_PER_M,
            }),
            other => Err(Error::Invalid(format!("unknown energy policy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkCost {
    pub distance_mi: f64,
    pub time_hr: f64,
    /// Non-negative routing weight after the energy policy.
    pub energy_wh: f64,
    /// Model estimate before any clamping or reweighting.
    pub raw_energy_wh: f64,
}

/// Costs for every link of one network under one snapshot and model.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkCostTable {
    pub epoch: i64,
    pub model_id: String,
    pub policy: EnergyPolicy,
    /// Links whose policy weight had to be clamped at zero.
    pub clamped_links: usize,
    pub costs: Vec<LinkCost>,
}

/// Derives distance, time and energy costs for every link.
///
/// Links whose grade bin has no curve fall back to the flat curve of the same
/// road class.
pub fn build_cost_table(
    net: &RoadNetwork,
    speeds: &[f64],
    model: &EopsModel,
    policy: EnergyPolicy,
    epoch: i64,
) -> Result<LinkCostTable> {
    if speeds.len() != net.links.len() {
        return Err(Error::Internal(format!(
            "speed vector has {} entries for {} links",
            speeds.len(),
            net.links.len()
        )));
    }
    let mut clamped = 0;
    let mut costs = Vec::with_capacity(net.links.len());
    for (i, (link, &v)) in net.links.iter().zip(speeds).enumerate() {
        let rate = model.predict_link_rate(link.road_class, link.grade_pct(), v)?;
        let raw = rate * link.length;
        let weight = match policy {
            EnergyPolicy::Floor0 => raw,
            EnergyPolicy::Potential { k_pot } => {
                let (a, b) = net.endpoints(i);
                let drop = net.nodes[a].elevation.unwrap_or(0.0) - net.nodes[b].elevation.unwrap_or(0.0);
                raw + k_pot * drop
            }
        };
        if weight < 0.0 {
            clamped += 1;
        }
        costs.push(LinkCost {
            distance_mi: link.length,
            time_hr: link.length / v,
            energy_wh: weight.max(0.0),
            raw_energy_wh: raw,
        });
    }
    if let EnergyPolicy::Potential { .. } = policy {
        if clamped > 0 {
            log::warn!("potential policy clamped {clamped} link(s) at zero");
        }
    }
    Ok(LinkCostTable {
        epoch,
        model_id: model.fingerprint(),
        policy,
        clamped_links: clamped,
        costs,
    })
}

/// Time-ordered traffic snapshots read from a feed file.
#[derive(Debug, Clone, Default)]
pub struct TrafficFeed {
    snapshots: Vec<TrafficSnapshot>,
}

#[derive(Debug, Deserialize)]
struct FeedRow {
    epoch_s: i64,
    link_id: String,
    avg_speed_mph: f64,
}

impl TrafficFeed {
    /// Builds a feed, dropping snapshots that fail validation.
    pub fn new(mut snapshots: Vec<TrafficSnapshot>) -> Self {
        snapshots.sort_by_key(|s| s.epoch);
        snapshots.retain(|s| match s.validate() {
            Ok(()) => true,
            Err(e) => {
                log::warn!("{e}");
                false
            }
        });
        Self { snapshots }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let mut grouped: BTreeMap<i64, BTreeMap<String, f64>> = BTreeMap::new();
        for row in reader.deserialize::<FeedRow>() {
            let row = row.map_err(|e| Error::csv(path, e))?;
            grouped
                .entry(row.epoch_s)
                .or_default()
                .insert(row.link_id, row.avg_speed_mph);
        }
        Ok(Self::new(
            grouped
                .into_iter()
                .map(|(epoch, speeds)| TrafficSnapshot { epoch, speeds })
                .collect(),
        ))
    }

    pub fn snapshots(&self) -> &[TrafficSnapshot] {
        &self.snapshots
    }

    /// The latest snapshot with `epoch <= t`, or `None` before the first one.
    pub fn at(&self, t: i64) -> Option<&TrafficSnapshot> {
        let idx = self.snapshots.partition_point(|s| s.epoch <= t);
        idx.checked_sub(1).map(|i| &self.snapshots[i])
    }
}

/// Holds the cost table currently in force. Tables are swapped whole; a
/// reader pins an `Arc` and keeps a consistent view for its whole query.
pub struct CostTableStore {
    net: Arc<RoadNetwork>,
    model: Arc<EopsModel>,
    policy: EnergyPolicy,
    refresh_s: i64,
    current: RwLock<Arc<LinkCostTable>>,
}

impl CostTableStore {
    pub fn new(
        net: Arc<RoadNetwork>,
        model: Arc<EopsModel>,
        policy: EnergyPolicy,
        start_epoch: i64,
    ) -> Result<Self> {
        let speeds = apply_traffic(&net, &TrafficSnapshot::free_flow(start_epoch))?;
        let table = build_cost_table(&net, &speeds, &model, policy, start_epoch)?;
        Ok(Self {
            net,
            model,
            policy,
            refresh_s: DEFAULT_REFRESH_S,
            current: RwLock::new(Arc::new(table)),
        })
    }

    pub fn with_refresh_interval(mut self, seconds: i64) -> Self {
        self.refresh_s = seconds;
        self
    }

    pub fn pin(&self) -> Arc<LinkCostTable> {
        Arc::clone(&self.current.read().expect("cost table lock poisoned"))
    }

    pub fn network(&self) -> &RoadNetwork {
        &self.net
    }

    /// Whether a refresh is due at time `now`.
    pub fn is_stale(&self, now: i64) -> bool {
        now - self.pin().epoch >= self.refresh_s
    }

    /// Rebuilds from `snapshot` and swaps the table in. A rejected snapshot
    /// leaves the previous table in force.
    pub fn apply(&self, snapshot: &TrafficSnapshot) -> Result<Arc<LinkCostTable>> {
        let speeds = apply_traffic(&self.net, snapshot)?;
        let table = Arc::new(build_cost_table(
            &self.net,
            &speeds,
            &self.model,
            self.policy,
            snapshot.epoch,
        )?);
        *self.current.write().expect("cost table lock poisoned") = Arc::clone(&table);
        Ok(table)
    }
}
