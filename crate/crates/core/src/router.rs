//! Least-cost routing over a pinned link cost table.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::netgraph::{EnergyPolicy, LinkCost, LinkCostTable, RoadNetwork};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteCriterion {
    ShortestDistance,
    LeastDuration,
    LeastEnergy,
}

impl RouteCriterion {
    pub const ALL: [RouteCriterion; 3] = [
        RouteCriterion::ShortestDistance,
        RouteCriterion::LeastDuration,
        RouteCriterion::LeastEnergy,
    ];

    pub fn weight(self, cost: &LinkCost) -> f64 {
        match self {
            RouteCriterion::ShortestDistance => cost.distance_mi,
            RouteCriterion::LeastDuration => cost.time_hr,
            RouteCriterion::LeastEnergy => cost.energy_wh,
        }
    }

    /// Parses the CLI spelling: `all`, `distance`, `time` or `energy`.
    pub fn parse_set(s: &str) -> Result<Vec<RouteCriterion>> {
        match s {
            "all" => Ok(Self::ALL.to_vec()),
            other => Ok(vec![other.parse()?]),
        }
    }
}

impl fmt::Display for RouteCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RouteCriterion::ShortestDistance => "shortest_distance",
            RouteCriterion::LeastDuration => "least_duration",
            RouteCriterion::LeastEnergy => "least_energy",
        })
    }
}

impl FromStr for RouteCriterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "distance" | "shortest_distance" => Ok(RouteCriterion::ShortestDistance),
            "time" | "least_duration" => Ok(RouteCriterion::LeastDuration),
            "energy" | "least_energy" => Ok(RouteCriterion::LeastEnergy),
            other => Err(Error::Invalid(format!("unknown criterion `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Route {
    pub criterion: RouteCriterion,
    pub nodes: Vec<String>,
    pub links: Vec<String>,
    #[serde(rename = "distance_mi")]
    pub total_distance: f64,
    #[serde(rename = "time_hr")]
    pub total_time: f64,
    /// Raw model energy, re-summed along the path without clamping.
    #[serde(rename = "energy_wh")]
    pub total_energy: f64,
}

impl Route {
    pub fn total(&self, criterion: RouteCriterion) -> f64 {
        match criterion {
            RouteCriterion::ShortestDistance => self.total_distance,
            RouteCriterion::LeastDuration => self.total_time,
            RouteCriterion::LeastEnergy => self.total_energy,
        }
    }
}

#[derive(Clone, Copy)]
struct Label {
    cost: f64,
    hops: usize,
    via: Option<usize>,
}

#[derive(PartialEq)]
struct HeapEntry {
    cost: f64,
    hops: usize,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed for a min-heap
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.hops.cmp(&self.hops))
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Minimum-cost path from `origin` to `destination` under one criterion.
///
/// Equal-cost paths are resolved by fewer links, then by the
/// lexicographically smallest node-id sequence, then link-id sequence.
pub fn dijkstra(
    net: &RoadNetwork,
    table: &LinkCostTable,
    origin: &str,
    destination: &str,
    criterion: RouteCriterion,
) -> Result<Route> {
    let src = net.node_idx(origin).ok_or_else(|| Error::UnknownNode(origin.into()))?;
    let dst = net
        .node_idx(destination)
        .ok_or_else(|| Error::UnknownNode(destination.into()))?;
    if table.costs.len() != net.links().len() {
        return Err(Error::Internal(format!(
            "cost table has {} entries for {} links",
            table.costs.len(),
            net.links().len()
        )));
    }
    if let Some((i, w)) = table
        .costs
        .iter()
        .map(|c| criterion.weight(c))
        .enumerate()
        .find(|(_, w)| !(*w >= 0.0))
    {
        return Err(Error::Internal(format!(
            "link {} has negative {criterion} weight {w}",
            net.links()[i].id
        )));
    }

    let n = net.nodes().len();
    let mut labels: Vec<Option<Label>> = vec![None; n];
    let mut settled = vec![false; n];
    let mut heap = BinaryHeap::new();
    labels[src] = Some(Label {
        cost: 0.0,
        hops: 0,
        via: None,
    });
    heap.push(HeapEntry {
        cost: 0.0,
        hops: 0,
        node: src,
    });

    while let Some(HeapEntry { cost, hops, node }) = heap.pop() {
        if settled[node] {
            continue;
        }
        let current = labels[node].expect("queued node has a label");
        if current.cost != cost || current.hops != hops {
            continue;
        }
        settled[node] = true;
        if node == dst {
            break;
        }
        for &link in net.outgoing(node) {
            let (_, next) = net.endpoints(link);
            if settled[next] {
                continue;
            }
            let cand = Label {
                cost: cost + criterion.weight(&table.costs[link]),
                hops: hops + 1,
                via: Some(link),
            };
            let replace = match labels[next] {
                None => true,
                Some(old) => match cand.cost.total_cmp(&old.cost).then(cand.hops.cmp(&old.hops)) {
                    Ordering::Less => true,
                    Ordering::Greater => false,
                    Ordering::Equal => {
                        let via_old = old.via.expect("non-origin label has a predecessor");
                        compare_paths(net, &labels, link, via_old) == Ordering::Less
                    }
                },
            };
            if replace {
                labels[next] = Some(cand);
                heap.push(HeapEntry {
                    cost: cand.cost,
                    hops: cand.hops,
                    node: next,
                });
            }
        }
    }

    if !settled[dst] {
        return Err(Error::Unreachable {
            origin: origin.into(),
            destination: destination.into(),
        });
    }
    let links = trace_links(net, &labels, labels[dst].and_then(|l| l.via));
    Ok(route_from_links(net, table, criterion, src, &links))
}

/// Links from the origin ending with `last`, following predecessors.
fn trace_links(net: &RoadNetwork, labels: &[Option<Label>], last: Option<usize>) -> Vec<usize> {
    let mut links = Vec::new();
    let mut via = last;
    while let Some(link) = via {
        links.push(link);
        let (from, _) = net.endpoints(link);
        via = labels[from].and_then(|l| l.via);
    }
    links.reverse();
    links
}

fn compare_paths(net: &RoadNetwork, labels: &[Option<Label>], a: usize, b: usize) -> Ordering {
    let pa = trace_links(net, labels, Some(a));
    let pb = trace_links(net, labels, Some(b));
    let node_ids = |p: &[usize]| -> Vec<&str> {
        let mut ids = Vec::with_capacity(p.len() + 1);
        if let Some(&first) = p.first() {
            ids.push(net.nodes()[net.endpoints(first).0].id.as_str());
        }
        ids.extend(p.iter().map(|&l| net.nodes()[net.endpoints(l).1].id.as_str()));
        ids
    };
    let link_ids = |p: &[usize]| -> Vec<&str> { p.iter().map(|&l| net.links()[l].id.as_str()).collect() };
    node_ids(&pa)
        .cmp(&node_ids(&pb))
        .then_with(|| link_ids(&pa).cmp(&link_ids(&pb)))
}

/// Builds a route from a link sequence, summing all three totals in path order.
pub fn route_from_links(
    net: &RoadNetwork,
    table: &LinkCostTable,
    criterion: RouteCriterion,
    origin: usize,
    links: &[usize],
) -> Route {
    let mut nodes = vec![net.nodes()[origin].id.clone()];
    let (mut d, mut t, mut e) = (0.0, 0.0, 0.0);
    for &l in links {
        let c = &table.costs[l];
        d += c.distance_mi;
        t += c.time_hr;
        e += c.raw_energy_wh;
        nodes.push(net.nodes()[net.endpoints(l).1].id.clone());
    }
    Route {
        criterion,
        nodes,
        links: links.iter().map(|&l| net.links()[l].id.clone()).collect(),
        total_distance: d,
        total_time: t,
        total_energy: e,
    }
}

/// Route preferences that may appear in a request. None are supported yet;
/// any that are set cause the request to be rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoutePreferences {
    #[serde(default)]
    pub avoid_tolls: bool,
    #[serde(default)]
    pub prefer_highways: bool,
    #[serde(default)]
    pub use_hov: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteRequest {
    pub origin: String,
    pub destination: String,
    pub criteria: Vec<RouteCriterion>,
    pub preferences: RoutePreferences,
}

impl RouteRequest {
    pub fn all(origin: impl Into<String>, destination: impl Into<String>) -> Self {
        Self {
            origin: origin.into(),
            destination: destination.into(),
            criteria: RouteCriterion::ALL.to_vec(),
            preferences: RoutePreferences::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RouteOutcome {
    Found(Route),
    Failed { criterion: RouteCriterion, error: String },
}

impl RouteOutcome {
    pub fn route(&self) -> Option<&Route> {
        match self {
            RouteOutcome::Found(r) => Some(r),
            RouteOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteSet {
    pub origin: String,
    pub destination: String,
    pub epoch: i64,
    pub policy: EnergyPolicy,
    pub model_id: String,
    pub clamped_links: usize,
    pub routes: Vec<RouteOutcome>,
}

impl RouteSet {
    pub fn get(&self, criterion: RouteCriterion) -> Option<&Route> {
        self.routes
            .iter()
            .filter_map(RouteOutcome::route)
            .find(|r| r.criterion == criterion)
    }

    pub fn to_json(&self) -> String {
        let routes: Vec<serde_json::Value> = self
            .routes
            .iter()
            .map(|o| match o {
                RouteOutcome::Found(r) => serde_json::to_value(r).expect("route serializes"),
                RouteOutcome::Failed { criterion, error } => json!({
                    "criterion": criterion,
                    "error": error,
                }),
            })
            .collect();
        let value = json!({
            "origin": self.origin,
            "destination": self.destination,
            "epoch": self.epoch,
            "energy_policy": self.policy.to_string(),
            "model_id": self.model_id,
            "clamped_links": self.clamped_links,
            "routes": routes,
        });
        let mut s = serde_json::to_string_pretty(&value).expect("route set serializes");
        s.push('\n');
        s
    }

    /// One LineString feature per found route, coordinates in `[lon, lat]`.
    pub fn to_geojson(&self, net: &RoadNetwork) -> String {
        let features: Vec<serde_json::Value> = self
            .routes
            .iter()
            .filter_map(RouteOutcome::route)
            .map(|r| {
                let coords: Vec<[f64; 2]> = r
                    .nodes
                    .iter()
                    .filter_map(|id| net.node_idx(id))
                    .map(|i| [net.nodes()[i].lon, net.nodes()[i].lat])
                    .collect();
                json!({
                    "type": "Feature",
                    "geometry": { "type": "LineString", "coordinates": coords },
                    "properties": {
                        "criterion": r.criterion,
                        "distance_mi": r.total_distance,
                        "time_hr": r.total_time,
                        "energy_wh": r.total_energy,
                    },
                })
            })
            .collect();
        let mut s = serde_json::to_string_pretty(&json!({
            "type": "FeatureCollection",
            "features": features,
        }))
        .expect("geojson serializes");
        s.push('\n');
        s
    }
}

/// Runs one search per requested criterion against the same pinned table.
/// Per-criterion failures are recorded in the set rather than returned.
pub fn route_request(net: &RoadNetwork, table: &LinkCostTable, req: &RouteRequest) -> Result<RouteSet> {
    if req.preferences != RoutePreferences::default() {
        return Err(Error::Unsupported(
            "route preferences (tolls, highways, HOV) are not supported".into(),
        ));
    }
    for id in [&req.origin, &req.destination] {
        if net.node_idx(id).is_none() {
            return Err(Error::UnknownNode(id.clone()));
        }
    }
    let mut criteria = req.criteria.clone();
    criteria.sort();
    criteria.dedup();
    let mut routes = Vec::with_capacity(criteria.len());
    for criterion in criteria {
        match dijkstra(net, table, &req.origin, &req.destination, criterion) {
            Ok(r) => routes.push(RouteOutcome::Found(r)),
            Err(e @ Error::Unreachable { .. }) => routes.push(RouteOutcome::Failed {
                criterion,
                error: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(RouteSet {
        origin: req.origin.clone(),
        destination: req.destination.clone(),
        epoch: table.epoch,
        policy: table.policy,
        model_id: table.model_id.clone(),
        clamped_links: table.clamped_links,
        routes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::{RoadClass, RoadLink, RoadNode};

    pub(crate) fn graph(edges: &[(&str, &str, f64)]) -> (RoadNetwork, LinkCostTable) {
        let mut ids: Vec<&str> = edges.iter().flat_map(|e| [e.0, e.1]).collect();
        ids.sort();
        ids.dedup();
        let nodes = ids
            .iter()
            .enumerate()
            .map(|(i, id)| RoadNode {
                id: id.to_string(),
                lat: 34.0,
                lon: -117.0 + 0.01 * i as f64,
                elevation: None,
            })
            .collect();
        let links = edges
            .iter()
            .enumerate()
            .map(|(i, (a, b, _))| RoadLink {
                id: format!("e{i}"),
                from_node: a.to_string(),
                to_node: b.to_string(),
                length: 1.0,
                road_class: RoadClass::Arterial,
                grade: Some(0.0),
                speed_limit: 30.0,
            })
            .collect();
        let costs = edges
            .iter()
            .map(|e| LinkCost {
                distance_mi: e.2,
                time_hr: e.2,
                energy_wh: e.2,
                raw_energy_wh: e.2,
            })
            .collect();
        let table = LinkCostTable {
            epoch: 0,
            model_id: "test".into(),
            policy: EnergyPolicy::Floor0,
            clamped_links: 0,
            costs,
        };
        (RoadNetwork::new(nodes, links).unwrap(), table)
    }

    #[test]
    fn detour_beats_direct() {
        let (net, table) = graph(&[("A", "B", 5.0), ("A", "C", 2.0), ("C", "B", 2.0)]);
        let r = dijkstra(&net, &table, "A", "B", RouteCriterion::ShortestDistance).unwrap();
        assert_eq!(r.nodes, vec!["A", "C", "B"]);
        assert_eq!(r.total_distance, 4.0);
    }

    #[test]
    fn degenerate_route() {
        let (net, table) = graph(&[("A", "B", 5.0)]);
        let r = dijkstra(&net, &table, "A", "A", RouteCriterion::LeastEnergy).unwrap();
        assert_eq!(r.nodes, vec!["A"]);
        assert!(r.links.is_empty());
        assert_eq!((r.total_distance, r.total_time, r.total_energy), (0.0, 0.0, 0.0));
    }

    #[test]
    fn unreachable_destination() {
        let (net, table) = graph(&[("A", "B", 1.0), ("C", "D", 1.0)]);
        let res = dijkstra(&net, &table, "A", "D", RouteCriterion::LeastDuration);
        assert!(matches!(res, Err(Error::Unreachable { .. })));
    }

    #[test]
    fn ties_prefer_fewer_links_then_lexicographic() {
        let (net, table) = graph(&[
            ("A", "Z", 2.0),
            ("A", "C", 1.0),
            ("C", "Z", 1.0),
            ("A", "B", 1.0),
            ("B", "Z", 1.0),
        ]);
        let r = dijkstra(&net, &table, "A", "Z", RouteCriterion::ShortestDistance).unwrap();
        assert_eq!(r.nodes, vec!["A", "Z"]);

        let (net, table) = graph(&[("A", "C", 1.0), ("C", "Z", 1.0), ("A", "B", 1.0), ("B", "Z", 1.0)]);
        let r = dijkstra(&net, &table, "A", "Z", RouteCriterion::ShortestDistance).unwrap();
        assert_eq!(r.nodes, vec!["A", "B", "Z"]);
    }

    #[test]
    fn zero_weight_edges() {
        let (net, table) = graph(&[("A", "B", 0.0), ("B", "C", 0.0), ("A", "C", 0.0)]);
        let r = dijkstra(&net, &table, "A", "C", RouteCriterion::LeastEnergy).unwrap();
        assert_eq!(r.nodes, vec!["A", "C"]);
    }

    #[test]
    fn preferences_rejected() {
        let (net, table) = graph(&[("A", "B", 1.0)]);
        let mut req = RouteRequest::all("A", "B");
        req.preferences.avoid_tolls = true;
        assert!(matches!(route_request(&net, &table, &req), Err(Error::Unsupported(_))));
    }

    #[test]
    fn partial_failures_are_marked() {
        let (net, table) = graph(&[("A", "B", 1.0), ("C", "D", 1.0)]);
        let set = route_request(&net, &table, &RouteRequest::all("A", "D")).unwrap();
        assert_eq!(set.routes.len(), 3);
        assert!(set.routes.iter().all(|o| matches!(o, RouteOutcome::Failed { .. })));
        assert!(set.to_json().contains("\"error\""));
    }

    #[test]
    fn negative_weight_is_internal_error() {
        let (net, mut table) = graph(&[("A", "B", 1.0)]);
        table.costs[0].energy_wh = -1.0;
        let res = dijkstra(&net, &table, "A", "B", RouteCriterion::LeastEnergy);
        assert!(matches!(res, Err(Error::Internal(_))));
    }
}
