//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line.

mod common;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use common::{enumerate_best, random_graph};
use ecoroute::eops::{
    calibrate, compare_trips, eval_poly, fit_quartic_points, trip_energy_error_stats, CalibrationConfig, EopsModel,
};
use ecoroute::harness::{run_evaluation, EvaluationPlan};
use ecoroute::mapmatch::nke;
use ecoroute::netgraph::{
    apply_traffic, build_cost_table, load_network, EnergyPolicy, RoadClass, TrafficFeed, TrafficSnapshot,
    DEFAULT_K_POT_WH_PER_M,
};
use ecoroute::router::{dijkstra, route_request, RouteCriterion, RouteRequest};
use ecoroute::synth::{self, DriveConfig};
use ecoroute::telemetry::{align_by_cross_correlation, fuse, smape, DriveMode, FuseConfig};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_chacha::ChaCha8Rng;

// Written straight to stderr so the line shows even when test output is captured.
fn report(name: &str, ok: bool, detail: String) {
    let _ = writeln!(std::io::stderr(), "[{}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{name}: {detail}");
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

#[test]
fn routing_matches_exhaustive_enumeration() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut mismatches = 0;
    let mut checked = 0;
    for _ in 0..1000 {
        let (net, table) = random_graph(&mut rng, 10, 30);
        let n = net.nodes().len();
        let (s, d) = (rng.gen_range(0..n), rng.gen_range(0..n));
        let (o, t) = (&net.nodes()[s].id, &net.nodes()[d].id);
        for c in RouteCriterion::ALL {
            let got = dijkstra(&net, &table, o, t, c).ok().map(|r| r.total(c));
            let want = enumerate_best(&net, &table, s, d, c).map(|b| b.0);
            checked += 1;
            if got != want {
                mismatches += 1;
            }
        }
    }
    let elapsed = started.elapsed();
    report(
        "routing oracle equivalence",
        mismatches == 0 && elapsed < Duration::from_secs(30),
        format!("{checked} queries on 1000 graphs, {mismatches} mismatches, {elapsed:.2?}"),
    );
}

#[test]
fn quartic_fit_recovers_known_curve() {
    let truth = [310.0, -9.5, 0.31, -0.0042, 0.000021];
    let centers: Vec<f64> = (0..11).map(|k| 2.5 + 5.0 * k as f64).collect();
    let exact: Vec<(f64, f64)> = centers.iter().map(|&v| (v, eval_poly(&truth, v))).collect();
    let fit = fit_quartic_points(&exact).unwrap();
    let coef_err = fit
        .alpha
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let sigma = 5.0;
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut worst_rms: f64 = 0.0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noisy: Vec<(f64, f64)> = exact
            .iter()
            .map(|&(v, r)| (v, r + noise.sample(&mut rng)))
            .collect();
        let fit = fit_quartic_points(&noisy).unwrap();
        let mse = exact
            .iter()
            .map(|&(v, r)| (eval_poly(&fit.alpha, v) - r).powi(2))
            .sum::<f64>()
            / exact.len() as f64;
        worst_rms = worst_rms.max(mse.sqrt());
    }
    report(
        "regression recovery",
        coef_err <= 1e-9 && worst_rms < 2.0 * sigma,
        format!("max coefficient error {coef_err:.2e}, worst RMS over 100 noisy seeds {worst_rms:.3} Wh/mi"),
    );
}

#[test]
fn calibration_reproduces_trip_energy() {
    let started = Instant::now();
    let net = synth::corridor_network(48, 0.15);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let traces: Vec<_> = (0..50)
        .map(|k| {
            let cfg = DriveConfig {
                trip_id: format!("t{k:02}"),
                start_utc: 1_400_000_000 + 3600 * k,
                gps_lead_s: 3 + (k * 11) % 60,
                obd_hz: 5,
                ..DriveConfig::default()
            };
            let drive = synth::drive_corridor(&net, 0, 47, &cfg, &mut rng);
            let fcfg = FuseConfig {
                trip_id: cfg.trip_id.clone(),
                ..FuseConfig::default()
            };
            fuse(&drive.obd, &drive.gps, &fcfg).expect("synthetic drive fuses")
        })
        .collect();
    let cal = calibrate(&traces, &net, &CalibrationConfig::default()).unwrap();
    let trips = compare_trips(&cal.model, &net, &cal.snippets).unwrap();
    let pairs: Vec<(f64, f64)> = trips.iter().map(|t| (t.measured_wh, t.estimated_wh)).collect();
    let stats = trip_energy_error_stats(&pairs).unwrap();
    let classes = RoadClass::ALL
        .iter()
        .filter(|c| cal.model.curves.iter().any(|k| k.road_class == **c))
        .count();
    let mut bins: Vec<usize> = cal.model.curves.iter().map(|c| c.grade_bin_index).collect();
    bins.sort();
    bins.dedup();
    let elapsed = started.elapsed();
    report(
        "end-to-end calibration fidelity",
        stats.n >= 50
            && stats.mean.abs() <= 10.0
            && classes == 2
            && bins.len() >= 3
            && elapsed < Duration::from_secs(60),
        format!(
            "{} trips, {} curves over {} grade bins and {classes} classes, mean error {:.2}%, {elapsed:.2?}",
            stats.n,
            cal.model.curves.len(),
            bins.len(),
            stats.mean
        ),
    );
}

#[test]
fn alignment_recovers_lags() {
    let max_lag = 120usize;
    let n = 900usize;
    let mut rng = ChaCha8Rng::seed_from_u64(120);
    let truth = synth::speed_profile(n + 2 * max_lag, &mut rng);
    let m = max_lag as i64;
    let obd = &truth[max_lag..max_lag + n];
    let mut exact_misses = Vec::new();
    for lag in -m..=m {
        let start = (m - lag) as usize;
        let gps = &truth[start..start + n];
        if align_by_cross_correlation(obd, gps, max_lag).ok() != Some(lag) {
            exact_misses.push(lag);
        }
    }

    let mut within = 0;
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = synth::speed_profile(n + 2 * max_lag, &mut rng);
        let lag = rng.gen_range(-m..=m);
        let start = (m - lag) as usize;
        let obd = &truth[max_lag..max_lag + n];
        let gps: Vec<f64> = truth[start..start + n]
            .iter()
            .map(|v| (v + rng.gen_range(-0.5..=0.5)).max(0.0))
            .collect();
        if let Ok(found) = align_by_cross_correlation(obd, &gps, max_lag) {
            if (found - lag).abs() <= 1 {
                within += 1;
            }
        }
    }
    report(
        "alignment recovery",
        exact_misses.is_empty() && within >= 190,
        format!(
            "{} of 241 noise-free lags exact, {within}/200 noisy seeds within 1 s",
            241 - exact_misses.len()
        ),
    );
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * b.abs().max(1e-300) || a == b
}

#[test]
fn metrics_match_hand_values() {
    let mut failures = Vec::new();
    let mut check = |what: &str, ok: bool| {
        if !ok {
            failures.push(what.to_string());
        }
    };
    check("smape identity", smape(&[3.0, 7.0, 1.0], &[3.0, 7.0, 1.0]).unwrap() == 0.0);
    check("smape pair", close(smape(&[10.0, 20.0], &[12.0, 18.0]).unwrap(), 100.0 * 4.0 / 60.0));
    check("smape zero", smape(&[0.0, 0.0], &[0.0, 0.0]).is_err());
    check("nke constant", nke(&[25.0; 6], &[0.0, 0.01, 0.02, 0.03, 0.04, 0.05]).unwrap() == 0.0);
    check("nke decel", close(nke(&[30.0, 20.0], &[0.0, 0.01]).unwrap(), -50000.0));
    check("nke accel", nke(&[20.0, 30.0], &[0.0, 0.01]).unwrap() == 0.0);

    let s = trip_energy_error_stats(&[(50.0, 50.0), (80.0, 80.0)]).unwrap();
    check("stats identity", [s.min, s.p25, s.mean, s.median, s.p75, s.max].iter().all(|v| *v == 0.0));
    let s = trip_energy_error_stats(&[(100.0, 80.0), (100.0, 90.0), (100.0, 100.0), (100.0, 110.0), (100.0, 120.0)])
        .unwrap();
    check("stats symmetric min", close(s.min, -20.0));
    check("stats symmetric mean", s.mean.abs() <= 1e-12);
    check("stats symmetric median", s.median.abs() <= 1e-12);
    check("stats symmetric max", close(s.max, 20.0));
    let s = trip_energy_error_stats(&[(100.0, 90.0)]).unwrap();
    check(
        "stats single",
        [s.min, s.p25, s.mean, s.median, s.p75, s.max].iter().all(|v| close(*v, -10.0)),
    );
    report(
        "metric exactness",
        failures.is_empty(),
        if failures.is_empty() {
            "smape, nke and error statistics agree with hand values".into()
        } else {
            format!("mismatched: {}", failures.join(", "))
        },
    );
}

#[test]
fn eco_route_diverges_on_two_route_fixture() {
    let net = load_network(&fixture("two_route_network.json")).unwrap();
    let model = EopsModel::load(&fixture("reference_model.json")).unwrap();
    let feed = TrafficFeed::load(&fixture("two_route_traffic.csv")).unwrap();
    let policy = EnergyPolicy::Floor0;
    let peak = feed
        .snapshots()
        .iter()
        .min_by(|a, b| a.speeds["flat_1"].total_cmp(&b.speeds["flat_1"]))
        .unwrap();
    let speeds = apply_traffic(&net, peak).unwrap();
    let table = build_cost_table(&net, &speeds, &model, policy, peak.epoch).unwrap();
    let set = route_request(&net, &table, &RouteRequest::all("O", "D")).unwrap();
    let sd = set.get(RouteCriterion::ShortestDistance).unwrap();
    let ld = set.get(RouteCriterion::LeastDuration).unwrap();
    let le = set.get(RouteCriterion::LeastEnergy).unwrap();
    let diverges = le.links != sd.links && le.links != ld.links;
    let cheaper = le.total_energy < sd.total_energy && le.total_energy < ld.total_energy;

    let plan = EvaluationPlan::load(&fixture("plan.json")).unwrap();
    let inc = run_evaluation(&plan, &net, &model, &feed, policy).unwrap();
    let pattern = inc.rows.iter().all(|r| {
        r.trips > 0 && r.sd_energy_inc_pct > 0.0 && r.ld_energy_inc_pct > 0.0 && r.le_time_inc_pct > 0.0
    });
    let summary: Vec<String> = inc
        .rows
        .iter()
        .map(|r| {
            format!(
                "dir {}: sd +{:.2}% energy, ld +{:.2}% energy, le +{:.2}% time",
                r.direction, r.sd_energy_inc_pct, r.ld_energy_inc_pct, r.le_time_inc_pct
            )
        })
        .collect();
    report(
        "eco-route divergence",
        diverges && cheaper && pattern,
        format!(
            "le {:.1} Wh via {} links vs sd {:.1} Wh / ld {:.1} Wh; {}",
            le.total_energy,
            le.links.len(),
            sd.total_energy,
            ld.total_energy,
            summary.join("; ")
        ),
    );
}

#[test]
fn week_of_five_minute_ticks_yields_6048_trips() {
    let net = load_network(&fixture("two_route_network.json")).unwrap();
    let model = EopsModel::load(&fixture("reference_model.json")).unwrap();
    let feed = TrafficFeed::load(&fixture("two_route_traffic.csv")).unwrap();
    let mut plan = EvaluationPlan::load(&fixture("plan.json")).unwrap();
    plan.od_pairs.truncate(1);
    plan.days = 7;
    plan.interval = 300;
    let inc = run_evaluation(&plan, &net, &model, &feed, EnergyPolicy::Floor0).unwrap();
    let row = &inc.rows[0];
    report(
        "evaluation arithmetic",
        inc.total_trips() == 6048 && row.failed == 0,
        format!("{} routed trips, {} failed ticks", inc.total_trips(), row.failed),
    );
}

fn run_pipeline(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let bin = env!("CARGO_BIN_EXE_ecoroute");
    let run = |args: &[&str]| {
        let out = Command::new(bin)
            .args(args)
            .env("RUST_LOG", "error")
            .output()
            .expect("binary runs");
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        out.stdout
    };
    let f = |name: &str| fixture(name).to_str().unwrap().to_string();
    let p = |name: &str| dir.join(name).to_str().unwrap().to_string();

    run(&["fuse", &f("trip_obd.csv"), &f("trip_gps.csv"), "-o", &p("fused.csv")]);
    let cal_stdout = run(&[
        "calibrate",
        &f("traces.csv"),
        "--network",
        &f("corridor_network.json"),
        "-o",
        &p("model.json"),
    ]);
    run(&[
        "route",
        "--network",
        &f("two_route_network.json"),
        "--model",
        &f("reference_model.json"),
        "--traffic",
        &f("two_route_traffic.csv"),
        "--origin",
        "O",
        "--dest",
        "D",
        "--energy-policy",
        "potential",
        "-o",
        &p("route.json"),
        "--geojson",
        &p("route.geojson"),
    ]);
    run(&[
        "evaluate",
        "--plan",
        &f("plan.json"),
        "--network",
        &f("two_route_network.json"),
        "--model",
        &f("reference_model.json"),
        "--traffic",
        &f("two_route_traffic.csv"),
        "--energy-policy",
        "potential",
        "-o",
        &p("increments.csv"),
    ]);
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.push(("calibrate stdout".into(), cal_stdout));
    files.sort();
    files
}

#[test]
fn cli_outputs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run_pipeline(a.path());
    let second = run_pipeline(b.path());
    let names: Vec<&str> = first.iter().map(|f| f.0.as_str()).collect();
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    report(
        "determinism",
        first.len() == second.len() && differing.is_empty() && first.len() >= 7,
        format!("{} outputs compared ({}), differing: {:?}", names.len(), names.join(", "), differing),
    );
}

#[test]
fn potential_policy_is_sound_on_hills() {
    let model = synth::reference_model(DriveMode::Normal);
    let k_pot = DEFAULT_K_POT_WH_PER_M;
    let side = 6;
    let mut no_worse = 0;
    let mut bound_violations = 0;
    let mut clamped = 0;
    let mut floor_clamped = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = synth::hill_network(side, &mut rng);
        let speeds = apply_traffic(&net, &TrafficSnapshot::free_flow(0)).unwrap();
        let floor = build_cost_table(&net, &speeds, &model, EnergyPolicy::Floor0, 0).unwrap();
        let pot = build_cost_table(&net, &speeds, &model, EnergyPolicy::Potential { k_pot }, 0).unwrap();
        clamped += pot.clamped_links;
        floor_clamped += floor.clamped_links;
        for (i, c) in pot.costs.iter().enumerate() {
            let (a, b) = net.endpoints(i);
            let drop = net.nodes()[a].elevation.unwrap() - net.nodes()[b].elevation.unwrap();
            let within_bound = c.raw_energy_wh >= -k_pot * drop;
            if c.energy_wh < 0.0 || (within_bound && c.energy_wh != c.raw_energy_wh + k_pot * drop) {
                bound_violations += 1;
            }
        }
        let n = net.nodes().len();
        let (o, d) = (&net.nodes()[0].id, &net.nodes()[n - 1].id);
        let via_floor = dijkstra(&net, &floor, o, d, RouteCriterion::LeastEnergy).unwrap();
        let via_pot = dijkstra(&net, &pot, o, d, RouteCriterion::LeastEnergy).unwrap();
        if via_pot.total_energy <= via_floor.total_energy + 1e-9 * via_floor.total_energy.abs().max(1.0) {
            no_worse += 1;
        }
    }
    report(
        "negative-edge policy soundness",
        bound_violations == 0 && no_worse >= 95,
        format!(
            "potential path raw energy <= floor0 on {no_worse}/100 networks, {bound_violations} bound violations, {clamped} links clamped under potential and {floor_clamped} under floor0"
        ),
    );
}
