#![allow(dead_code)]

use ecoroute::netgraph::{EnergyPolicy, LinkCost, LinkCostTable, RoadClass, RoadLink, RoadNetwork, RoadNode};
use ecoroute::router::RouteCriterion;
use rand::Rng;

/// Random directed graph with integer-valued, independent costs per criterion.
pub fn random_graph<R: Rng>(rng: &mut R, max_nodes: usize, max_links: usize) -> (RoadNetwork, LinkCostTable) {
    let n = rng.gen_range(2..=max_nodes);
    let m = rng.gen_range(1..=max_links);
    let nodes: Vec<RoadNode> = (0..n)
        .map(|i| RoadNode {
            id: format!("n{i}"),
            lat: 34.0 + 0.001 * i as f64,
            lon: -117.0,
            elevation: None,
        })
        .collect();
    let mut links = Vec::with_capacity(m);
    let mut costs = Vec::with_capacity(m);
    for k in 0..m {
        let a = rng.gen_range(0..n);
        let mut b = rng.gen_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        links.push(RoadLink {
            id: format!("e{k:02}"),
            from_node: format!("n{a}"),
            to_node: format!("n{b}"),
            length: 1.0,
            road_class: RoadClass::Arterial,
            grade: Some(0.0),
            speed_limit: 30.0,
        });
        let energy = rng.gen_range(0..50) as f64;
        costs.push(LinkCost {
            distance_mi: rng.gen_range(0..20) as f64,
            time_hr: rng.gen_range(0..20) as f64,
            energy_wh: energy,
            raw_energy_wh: energy,
        });
    }
    let net = RoadNetwork::new(nodes, links).expect("generated graph is valid");
    let table = LinkCostTable {
        epoch: 0,
        model_id: "random".into(),
        policy: EnergyPolicy::Floor0,
        clamped_links: 0,
        costs,
    };
    (net, table)
}

/// Every simple path from `src` to `dst` as link-index sequences.
pub fn simple_paths(net: &RoadNetwork, src: usize, dst: usize) -> Vec<Vec<usize>> {
    fn walk(net: &RoadNetwork, at: usize, dst: usize, seen: &mut Vec<bool>, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if at == dst {
            out.push(path.clone());
            return;
        }
        for &l in net.outgoing(at) {
            let (_, next) = net.endpoints(l);
            if seen[next] {
                continue;
            }
            seen[next] = true;
            path.push(l);
            walk(net, next, dst, seen, path, out);
            path.pop();
            seen[next] = false;
        }
    }
    let mut seen = vec![false; net.nodes().len()];
    seen[src] = true;
    let mut out = Vec::new();
    walk(net, src, dst, &mut seen, &mut Vec::new(), &mut out);
    out
}

pub fn path_cost(table: &LinkCostTable, path: &[usize], criterion: RouteCriterion) -> f64 {
    path.iter().fold(0.0, |acc, &l| acc + criterion.weight(&table.costs[l]))
}

/// Best path by enumeration under the router's tie-break: cost, then link
/// count, then node ids, then link ids.
pub fn enumerate_best(
    net: &RoadNetwork,
    table: &LinkCostTable,
    src: usize,
    dst: usize,
    criterion: RouteCriterion,
) -> Option<(f64, Vec<usize>)> {
    let key = |p: &Vec<usize>| {
        let mut nodes = vec![net.nodes()[src].id.clone()];
        nodes.extend(p.iter().map(|&l| net.nodes()[net.endpoints(l).1].id.clone()));
        let links: Vec<String> = p.iter().map(|&l| net.links()[l].id.clone()).collect();
        (p.len(), nodes, links)
    };
    simple_paths(net, src, dst)
        .into_iter()
        .map(|p| (path_cost(table, &p, criterion), p))
        .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| key(&a.1).cmp(&key(&b.1))))
}
