//! Synthetic data: a ground-truth energy-rate function, networks, and drives
//! rendered as raw OBD and GPS streams. Used for fixtures and end-to-end checks.

use rand::Rng;

use crate::eops::{fit_quartic_points, Curve, EopsModel, GradeBin};
use crate::geo::{unproject, METERS_PER_MILE};
use crate::netgraph::{RoadClass, RoadLink, RoadNetwork, RoadNode, TrafficSnapshot};
use crate::telemetry::{DriveMode, GpsSample, ObdSample, TraceSample};

pub const ORIGIN_LAT: f64 = 33.95;
pub const ORIGIN_LON: f64 = -117.40;

/// Ground-truth distance-based energy rate, Wh/mi.
///
/// A U-shaped speed term plus a grade term that charges climbing at 90%
/// drivetrain efficiency and recovers 60% on descents (1600 kg vehicle).
pub fn reference_rate(class: RoadClass, grade_pct: f64, v_mph: f64) -> f64 {
    let v = v_mph.max(0.0);
    let base = 120.0 + 1500.0 / (v + 10.0) + 0.04 * v * v;
    let class_term = match class {
        RoadClass::Arterial => 20.0,
        RoadClass::Freeway => 0.0,
    };
    // m g (1%) per mile in Wh
    let per_pct = 1600.0 * 9.81 * 0.01 * METERS_PER_MILE / 3600.0;
    let grade_term = if grade_pct >= 0.0 {
        per_pct * grade_pct / 0.9
    } else {
        per_pct * grade_pct * 0.6
    };
    base + class_term + grade_term
}

/// Grade used to stand for a whole bin when building the reference model.
fn representative_grade(bin: &GradeBin) -> f64 {
    match (bin.lower, bin.upper) {
        (Some(l), Some(u)) => 0.5 * (l + u),
        (None, Some(u)) => u - 2.0,
        (Some(l), None) => l + 2.0,
        (None, None) => 0.0,
    }
}

/// Quartic fits of [`reference_rate`] at 5 mph bin centers for every class
/// and default grade bin.
pub fn reference_model(mode: DriveMode) -> EopsModel {
    let bins = GradeBin::default_bins();
    let centers: Vec<f64> = (0..16).map(|k| 2.5 + 5.0 * k as f64).collect();
    let mut curves = Vec::new();
    for class in RoadClass::ALL {
        for (gi, bin) in bins.iter().enumerate() {
            let g = representative_grade(bin);
            let points: Vec<(f64, f64)> = centers.iter().map(|&v| (v, reference_rate(class, g, v))).collect();
            let fit = fit_quartic_points(&points).expect("reference fit is well posed");
            curves.push(Curve {
                road_class: class,
                grade_bin_index: gi,
                alpha: fit.alpha,
                v_min: fit.v_min,
                v_max: fit.v_max,
                sample_count: points.len(),
            });
        }
    }
    EopsModel::new(mode, bins, curves).expect("reference model is valid")
}

fn node_at(id: String, x: f64, y: f64, elevation: f64) -> RoadNode {
    let (lat, lon) = unproject(ORIGIN_LAT, ORIGIN_LON, x, y);
    RoadNode {
        id,
        lat,
        lon,
        elevation: Some(elevation),
    }
}

const CORRIDOR_GRADES: [f64; 8] = [0.0, 3.0, -3.0, 1.2, -1.2, 5.0, -5.0, 0.0];

/// A straight west-to-east one-way corridor of equal-length links. Road
/// class alternates in blocks of eight links; grades cycle through all
/// seven default grade bins.
pub fn corridor_network(n_links: usize, link_len_mi: f64) -> RoadNetwork {
    let len_m = link_len_mi * METERS_PER_MILE;
    let mut elevation = 300.0;
    let mut nodes = vec![node_at("N000".into(), 0.0, 0.0, elevation)];
    let mut links = Vec::with_capacity(n_links);
    for k in 0..n_links {
        let grade = CORRIDOR_GRADES[k % CORRIDOR_GRADES.len()];
        elevation += grade / 100.0 * len_m;
        nodes.push(node_at(format!("N{:03}", k + 1), (k + 1) as f64 * len_m, 0.0, elevation));
        let road_class = if (k / 8) % 2 == 0 {
            RoadClass::Arterial
        } else {
            RoadClass::Freeway
        };
        links.push(RoadLink {
            id: format!("L{k:03}"),
            from_node: format!("N{k:03}"),
            to_node: format!("N{:03}", k + 1),
            length: link_len_mi,
            road_class,
            grade: None,
            speed_limit: match road_class {
                RoadClass::Arterial => 45.0,
                RoadClass::Freeway => 70.0,
            },
        });
    }
    RoadNetwork::new(nodes, links).expect("corridor is valid")
}

#[derive(Debug, Clone)]
pub struct DriveConfig {
    pub trip_id: String,
    pub mode: DriveMode,
    /// UTC second at which OBD logging starts.
    pub start_utc: i64,
    /// Seconds the GPS logger runs (stationary) before OBD logging starts.
    pub gps_lead_s: i64,
    pub obd_hz: u32,
    /// Uniform GPS speed noise amplitude, mph.
    pub gps_speed_noise: f64,
    /// Uniform GPS position noise amplitude, meters.
    pub gps_position_noise: f64,
}

impl Default for DriveConfig {
    fn default() -> Self {
        Self {
            trip_id: "trip".into(),
            mode: DriveMode::Normal,
            start_utc: 1_395_644_400,
            gps_lead_s: 17,
            obd_hz: 20,
            gps_speed_noise: 0.5,
            gps_position_noise: 3.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDrive {
    pub obd: Vec<ObdSample>,
    pub gps: Vec<GpsSample>,
    /// Noise-free per-second state on the UTC grid.
    pub truth: Vec<TraceSample>,
}

const AC_POWER_W: f64 = 350.0;
const ACC_POWER_W: f64 = 180.0;

/// Drives the corridor links `first..=last` at a random cruise speed per
/// link, accelerating at up to 3 mph/s between them, and renders the drive
/// as 1 Hz GPS and `obd_hz` OBD streams whose propulsion power follows
/// [`reference_rate`].
pub fn drive_corridor<R: Rng>(
    net: &RoadNetwork,
    first: usize,
    last: usize,
    cfg: &DriveConfig,
    rng: &mut R,
) -> SyntheticDrive {
    let len_m: Vec<f64> = net.links().iter().map(|l| l.length * METERS_PER_MILE).collect();
    let start_x: f64 = len_m[..first].iter().sum();
    let end_x: f64 = start_x + len_m[first..=last].iter().sum::<f64>();
    let targets: Vec<f64> = net
        .links()
        .iter()
        .map(|l| match l.road_class {
            RoadClass::Arterial => rng.gen_range(6.0..44.0),
            RoadClass::Freeway => rng.gen_range(36.0..69.0),
        })
        .collect();
    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);

    let link_at = |x: f64| -> (usize, f64) {
        let mut acc = 0.0;
        for (i, l) in len_m.iter().enumerate() {
            if x < acc + l {
                return (i, (x - acc) / l);
            }
            acc += l;
        }
        (len_m.len() - 1, 1.0)
    };
    let nodes = net.nodes();
    let elevation_at = |x: f64| -> f64 {
        let (i, frac) = link_at(x);
        let (a, b) = net.endpoints(i);
        let (ea, eb) = (nodes[a].elevation.unwrap_or(0.0), nodes[b].elevation.unwrap_or(0.0));
        ea + (eb - ea) * frac
    };

    let mut truth = Vec::new();
    let (mut x, mut v) = (start_x, 0.0f64);
    let mut s = 0i64;
    while x < end_x && s < 20_000 {
        let (i, _) = link_at(x);
        let link = &net.links()[i];
        let wobble = 1.5 * ((s as f64) / 7.0 + phase).sin();
        let target = (targets[i] + wobble).max(2.0);
        v = if target > v { (v + 3.0).min(target) } else { (v - 3.0).max(target) };
        let p = reference_rate(link.road_class, link.grade_pct(), v) * v;
        let (lat, lon) = unproject(ORIGIN_LAT, ORIGIN_LON, x, 0.0);
        truth.push(TraceSample {
            t_utc: cfg.start_utc + s,
            speed: v,
            p_prop: p,
            lat,
            lon,
            elevation: elevation_at(x),
        });
        x += v * METERS_PER_MILE / 3600.0;
        s += 1;
    }

    let obd = render_obd(&truth, cfg, rng);
    let gps = render_gps(&truth, cfg, rng);
    SyntheticDrive { obd, gps, truth }
}

fn render_obd<R: Rng>(truth: &[TraceSample], cfg: &DriveConfig, rng: &mut R) -> Vec<ObdSample> {
    let hz = cfg.obd_hz.max(1);
    let mut out = Vec::with_capacity(truth.len() * hz as usize);
    for (s, t) in truth.iter().enumerate() {
        for k in 0..hz {
            let voltage = 360.0 + rng.gen_range(-2.0..2.0);
            let load = t.p_prop + AC_POWER_W + ACC_POWER_W;
            out.push(ObdSample {
                t_rel: s as f64 + k as f64 / hz as f64,
                speed: t.speed,
                current: -load / voltage,
                voltage,
                ac_power: AC_POWER_W,
                acc_power: ACC_POWER_W,
            });
        }
    }
    out
}

fn render_gps<R: Rng>(truth: &[TraceSample], cfg: &DriveConfig, rng: &mut R) -> Vec<GpsSample> {
    let first = truth[0];
    let lead = (0..cfg.gps_lead_s).map(|k| TraceSample {
        t_utc: first.t_utc - cfg.gps_lead_s + k,
        speed: 0.0,
        ..first
    });
    lead.chain(truth.iter().copied())
        .map(|t| {
            let noise = |rng: &mut R, a: f64| if a > 0.0 { rng.gen_range(-a..a) } else { 0.0 };
            let (dx, dy) = (noise(rng, cfg.gps_position_noise), noise(rng, cfg.gps_position_noise));
            let (lat, lon) = unproject(t.lat, t.lon, dx, dy);
            GpsSample {
                t_utc: t.t_utc * 1000 + rng.gen_range(0..900),
                lat,
                lon,
                elevation: t.elevation + noise(rng, 1.0),
                speed: (t.speed + noise(rng, cfg.gps_speed_noise)).abs(),
            }
        })
        .collect()
}

/// A smooth random speed trace for alignment experiments, mph.
pub fn speed_profile<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut v: f64 = rng.gen_range(10.0..40.0);
    let mut target: f64 = rng.gen_range(0.0..60.0);
    for _ in 0..n {
        if rng.gen_bool(0.04) {
            target = rng.gen_range(0.0..65.0);
        }
        let step = (target - v).clamp(-3.0, 2.5);
        v = (v + step + rng.gen_range(-0.3..0.3)).max(0.0);
        out.push(v);
    }
    out
}

/// Two ways between `O` and `D`: a 2 mi route over a 6% hill through `H`
/// and a 3 mi flat route through `F1` and `F2`, with reverse links for the
/// return direction.
pub fn two_route_network() -> RoadNetwork {
    let mi = METERS_PER_MILE;
    let rise = 0.06 * mi;
    let nodes = vec![
        node_at("D".into(), 2.0 * mi, 0.0, 250.0),
        node_at("F1".into(), 0.5 * mi, -mi, 250.0),
        node_at("F2".into(), 1.5 * mi, -mi, 250.0),
        node_at("H".into(), 1.0 * mi, 0.0, 250.0 + rise),
        node_at("O".into(), 0.0, 0.0, 250.0),
    ];
    let link = |id: &str, from: &str, to: &str, length: f64, limit: f64| RoadLink {
        id: id.into(),
        from_node: from.into(),
        to_node: to.into(),
        length,
        road_class: RoadClass::Arterial,
        grade: None,
        speed_limit: limit,
    };
    let links = vec![
        link("hill_up", "O", "H", 1.0, 40.0),
        link("hill_down", "H", "D", 1.0, 40.0),
        link("flat_1", "O", "F1", 1.0, 45.0),
        link("flat_2", "F1", "F2", 1.0, 45.0),
        link("flat_3", "F2", "D", 1.0, 45.0),
        link("hill_up_r", "D", "H", 1.0, 40.0),
        link("hill_down_r", "H", "O", 1.0, 40.0),
        link("flat_3_r", "D", "F2", 1.0, 45.0),
        link("flat_2_r", "F2", "F1", 1.0, 45.0),
        link("flat_1_r", "F1", "O", 1.0, 45.0),
    ];
    RoadNetwork::new(nodes, links).expect("two-route fixture is valid")
}

/// One day of 5-minute snapshots loading the flat route of
/// [`two_route_network`] with a time-of-day congestion pattern.
pub fn two_route_feed(start_epoch: i64) -> Vec<TrafficSnapshot> {
    (0..288)
        .map(|k| {
            let hour = (k as f64) / 12.0;
            let peak = (-(hour - 8.0).powi(2) / 2.0).exp() + (-(hour - 17.5).powi(2) / 2.0).exp();
            let speed = (34.0 - 14.0 * peak).max(18.0);
            let speeds = ["flat_1", "flat_2", "flat_3", "flat_1_r", "flat_2_r", "flat_3_r"]
                .iter()
                .enumerate()
                .map(|(i, id)| (id.to_string(), ((speed - i as f64 * 0.5) * 100.0).round() / 100.0))
                .collect();
            TrafficSnapshot {
                epoch: start_epoch + 300 * k,
                speeds,
            }
        })
        .collect()
}

/// A `side` x `side` grid with random smooth elevations and two-way links
/// between neighbours. Neighbouring elevations differ by at most 60 m over
/// 0.5 mi, keeping grades within 7.5%.
pub fn hill_network<R: Rng>(side: usize, rng: &mut R) -> RoadNetwork {
    let spacing_mi = 0.5;
    let spacing_m = spacing_mi * METERS_PER_MILE;
    let (a, b, c) = (rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0), rng.gen_range(0.0..std::f64::consts::TAU));
    let amp = rng.gen_range(5.0..25.0);
    let mut nodes = Vec::with_capacity(side * side);
    for r in 0..side {
        for col in 0..side {
            let (x, y) = (col as f64, r as f64);
            let e = 200.0 + amp * ((a * x + c).sin() + (b * y - c).cos()) + rng.gen_range(-5.0..5.0);
            nodes.push(node_at(format!("n{r}_{col}"), x * spacing_m, y * spacing_m, e));
        }
    }
    let mut links = Vec::new();
    for r in 0..side {
        for col in 0..side {
            let i = r * side + col;
            let mut neighbours = Vec::new();
            if col + 1 < side {
                neighbours.push(i + 1);
            }
            if r + 1 < side {
                neighbours.push(i + side);
            }
            for j in neighbours {
                let class = if rng.gen_bool(0.3) {
                    RoadClass::Freeway
                } else {
                    RoadClass::Arterial
                };
                let limit = match class {
                    RoadClass::Freeway => 65.0,
                    RoadClass::Arterial => 40.0,
                };
                for (f, t) in [(i, j), (j, i)] {
                    links.push(RoadLink {
                        id: format!("{}>{}", nodes[f].id, nodes[t].id),
                        from_node: nodes[f].id.clone(),
                        to_node: nodes[t].id.clone(),
                        length: spacing_mi,
                        road_class: class,
                        grade: None,
                        speed_limit: limit,
                    });
                }
            }
        }
    }
    RoadNetwork::new(nodes, links).expect("hill network is valid")
}
