//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Deserialize;

use crate::eops::{self, CalibrationConfig, EopsModel};
use crate::error::{Error, Result};
use crate::harness::{run_evaluation, EvaluationPlan};
use crate::mapmatch::{self, match_point, write_snippets_csv, DEFAULT_SEARCH_RADIUS_M};
use crate::netgraph::{apply_traffic, build_cost_table, load_network, EnergyPolicy, RoadNetwork, TrafficFeed, TrafficSnapshot, DEFAULT_K_POT_WH_PER_M};
use crate::router::{route_request, RouteCriterion, RouteRequest};
use crate::telemetry::{self, DriveMode, FuseConfig, TraceSample, DEFAULT_MAX_LAG_S};

#[derive(Debug, Parser)]
#[command(name = "ecoroute", version, about = "EV energy-rate calibration and eco-routing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fuse an OBD stream and a GPS stream into a 1 Hz trace.
    Fuse {
        obd: PathBuf,
        gps: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Defaults to the OBD file stem.
        #[arg(long)]
        trip_id: Option<String>,
        #[arg(long, default_value = "normal")]
        mode: DriveMode,
        #[arg(long, default_value_t = DEFAULT_MAX_LAG_S)]
        max_lag: usize,
    },
    /// Calibrate energy-rate curves from fused traces.
    Calibrate {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[arg(long)]
        network: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value = "normal")]
        mode: DriveMode,
        #[arg(long, default_value_t = DEFAULT_SEARCH_RADIUS_M)]
        radius: f64,
        /// Snippet dump; defaults to `<output stem>.snippets.csv`.
        #[arg(long)]
        snippets: Option<PathBuf>,
        /// Per-cell diagnostics; defaults to `<output stem>.bins.csv`.
        #[arg(long)]
        bins: Option<PathBuf>,
    },
    /// Compute routes between two nodes (or `lat,lon` points).
    Route {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        traffic: Option<PathBuf>,
        #[arg(long)]
        origin: String,
        #[arg(long)]
        dest: String,
        /// all, distance, time or energy
        #[arg(long, default_value = "all")]
        criterion: String,
        #[arg(long, default_value = "floor0")]
        energy_policy: String,
        #[arg(long, default_value_t = DEFAULT_K_POT_WH_PER_M)]
        k_pot: f64,
        /// Departure time; defaults to the latest snapshot in the feed.
        #[arg(long)]
        at: Option<i64>,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        geojson: Option<PathBuf>,
    },
    /// Run a batch evaluation plan and write the increment report.
    Evaluate {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        traffic: Option<PathBuf>,
        #[arg(long, default_value = "floor0")]
        energy_policy: String,
        #[arg(long, default_value_t = DEFAULT_K_POT_WH_PER_M)]
        k_pot: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Error statistics, SMAPE and NKE reports.
    Stats {
        /// CSV `trip_id,measured_wh,estimated_wh`.
        #[arg(long)]
        trips: Option<PathBuf>,
        /// CSV `reference,evaluated`.
        #[arg(long)]
        smape: Option<PathBuf>,
        /// Fused trace file; reports NKE per trip.
        #[arg(long)]
        nke: Option<PathBuf>,
    },
}

/// Parses `argv` and runs the command. Returns the process exit status.
pub fn main_with_args<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            let _ = writeln!(err, "error[usage]: {}", first.trim_start_matches("error: "));
            return 1;
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            let _ = writeln!(err, "error[{}]: {msg}", e.kind());
            if e.is_internal() {
                2
            } else {
                1
            }
        }
    }
}

fn policy(name: &str, k_pot: f64) -> Result<EnergyPolicy> {
    match name.parse()? {
        EnergyPolicy::Potential { .. } => Ok(EnergyPolicy::Potential { k_pot }),
        p => Ok(p),
    }
}

fn sibling(output: &Path, suffix: &str) -> PathBuf {
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    output.with_file_name(format!("{stem}.{suffix}"))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Fuse {
            obd,
            gps,
            output,
            trip_id,
            mode,
            max_lag,
        } => {
            let trip_id = trip_id.unwrap_or_else(|| {
                obd.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "trip".into())
            });
            let obd = telemetry::read_obd_csv(&obd)?;
            let gps = telemetry::read_gps_csv(&gps)?;
            let trace = telemetry::fuse(&obd, &gps, &FuseConfig { trip_id, mode, max_lag })?;
            telemetry::write_traces_csv(&output, std::slice::from_ref(&trace))
        }
        Command::Calibrate {
            traces,
            network,
            output,
            mode,
            radius,
            snippets,
            bins,
        } => {
            let net = load_network(&network)?;
            let mut all = Vec::new();
            for path in &traces {
                all.extend(telemetry::read_traces_csv(path)?);
            }
            let cfg = CalibrationConfig {
                mode,
                search_radius_m: radius,
                ..CalibrationConfig::default()
            };
            let cal = eops::calibrate(&all, &net, &cfg)?;
            cal.model.save(&output)?;
            write_snippets_csv(&snippets.unwrap_or_else(|| sibling(&output, "snippets.csv")), &cal.snippets)?;
            eops::write_cells_csv(&bins.unwrap_or_else(|| sibling(&output, "bins.csv")), &cal.cells)?;

            writeln!(out, "curves,{}", cal.model.curves.len()).map_err(|e| Error::io("stdout", e))?;
            for (class, gi, reason) in &cal.skipped {
                log::info!("no curve for {class} grade bin {gi}: {reason}");
            }
            let trips = eops::compare_trips(&cal.model, &net, &cal.snippets)?;
            if !trips.is_empty() {
                let pairs: Vec<(f64, f64)> = trips.iter().map(|t| (t.measured_wh, t.estimated_wh)).collect();
                write_error_stats(out, &eops::trip_energy_error_stats(&pairs)?)?;
            }
            Ok(())
        }
        Command::Route {
            network,
            model,
            traffic,
            origin,
            dest,
            criterion,
            energy_policy,
            k_pot,
            at,
            output,
            geojson,
        } => {
            let net = load_network(&network)?;
            let model = EopsModel::load(&model)?;
            let policy = policy(&energy_policy, k_pot)?;
            let criteria = RouteCriterion::parse_set(&criterion)?;
            let feed = match &traffic {
                Some(p) => TrafficFeed::load(p)?,
                None => TrafficFeed::default(),
            };
            let snapshot = match at {
                Some(t) => feed.at(t).cloned().unwrap_or_else(|| TrafficSnapshot::free_flow(t)),
                None => feed.snapshots().last().cloned().unwrap_or_default(),
            };
            let speeds = apply_traffic(&net, &snapshot)?;
            let table = build_cost_table(&net, &speeds, &model, policy, snapshot.epoch)?;
            let req = RouteRequest {
                origin: resolve_node(&net, &origin)?,
                destination: resolve_node(&net, &dest)?,
                criteria,
                preferences: Default::default(),
            };
            let set = route_request(&net, &table, &req)?;
            write_file(&output, &set.to_json())?;
            if let Some(path) = geojson {
                write_file(&path, &set.to_geojson(&net))?;
            }
            Ok(())
        }
        Command::Evaluate {
            plan,
            network,
            model,
            traffic,
            energy_policy,
            k_pot,
            output,
        } => {
            let plan = EvaluationPlan::load(&plan)?;
            let net = load_network(&network)?;
            let model = EopsModel::load(&model)?;
            let feed = match &traffic {
                Some(p) => TrafficFeed::load(p)?,
                None => TrafficFeed::default(),
            };
            let report = run_evaluation(&plan, &net, &model, &feed, policy(&energy_policy, k_pot)?)?;
            report.write_csv(&output)?;
            for row in &report.rows {
                if row.failed > 0 {
                    log::warn!("{} {}: {} failed departures", row.site, row.direction, row.failed);
                }
            }
            Ok(())
        }
        Command::Stats { trips, smape, nke } => {
            if trips.is_none() && smape.is_none() && nke.is_none() {
                return Err(Error::Invalid("stats needs --trips, --smape or --nke".into()));
            }
            if let Some(path) = trips {
                let rows: Vec<TripRow> = read_rows(&path)?;
                let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.measured_wh, r.estimated_wh)).collect();
                write_error_stats(out, &eops::trip_energy_error_stats(&pairs)?)?;
            }
            if let Some(path) = smape {
                let rows: Vec<SmapeRow> = read_rows(&path)?;
                let a: Vec<f64> = rows.iter().map(|r| r.reference).collect();
                let f: Vec<f64> = rows.iter().map(|r| r.evaluated).collect();
                let v = telemetry::smape(&a, &f)?;
                writeln!(out, "smape_pct,{v}").map_err(|e| Error::io("stdout", e))?;
            }
            if let Some(path) = nke {
                for trace in telemetry::read_traces_csv(&path)? {
                    let v = trip_nke(&trace.samples)?;
                    writeln!(out, "nke_mph2_per_mi,{},{v}", trace.trip_id).map_err(|e| Error::io("stdout", e))?;
                }
            }
            Ok(())
        }
    }
}

#[derive(Deserialize)]
struct TripRow {
    #[allow(dead_code)]
    trip_id: String,
    measured_wh: f64,
    estimated_wh: f64,
}

#[derive(Deserialize)]
struct SmapeRow {
    reference: f64,
    evaluated: f64,
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::csv(path, e))
}

fn write_error_stats(out: &mut dyn Write, s: &eops::ErrorStats) -> Result<()> {
    let lines = format!(
        "trips,{}\nerror_min_pct,{}\nerror_p25_pct,{}\nerror_mean_pct,{}\nerror_median_pct,{}\nerror_p75_pct,{}\nerror_max_pct,{}\n",
        s.n, s.min, s.p25, s.mean, s.median, s.p75, s.max
    );
    out.write_all(lines.as_bytes()).map_err(|e| Error::io("stdout", e))
}

/// NKE over a whole trace, distances integrated by the trapezoid rule
/// within each run of consecutive seconds.
fn trip_nke(samples: &[TraceSample]) -> Result<f64> {
    let mut speeds = Vec::with_capacity(samples.len());
    let mut cumulative = Vec::with_capacity(samples.len());
    let mut d = 0.0;
    for (i, s) in samples.iter().enumerate() {
        if i > 0 && s.t_utc - samples[i - 1].t_utc == 1 {
            d += 0.5 * (s.speed + samples[i - 1].speed) / 3600.0;
        }
        speeds.push(s.speed);
        cumulative.push(d);
    }
    mapmatch::nke(&speeds, &cumulative)
}

/// Accepts a node id, or `lat,lon` snapped to the nearer endpoint of the
/// closest link.
fn resolve_node(net: &RoadNetwork, spec: &str) -> Result<String> {
    if net.node_idx(spec).is_some() {
        return Ok(spec.to_string());
    }
    let coords: Vec<f64> = spec
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::UnknownNode(spec.into()))?;
    let [lat, lon] = coords[..] else {
        return Err(Error::UnknownNode(spec.into()));
    };
    let probe = TraceSample {
        t_utc: 0,
        speed: 0.0,
        p_prop: 0.0,
        lat,
        lon,
        elevation: 0.0,
    };
    let m = match_point(&probe, net, 5_000.0)?;
    let link = net.link(&m.link_id).ok_or_else(|| Error::Internal("matched link vanished".into()))?;
    Ok(if m.position_along_link < 0.5 {
        link.from_node.clone()
    } else {
        link.to_node.clone()
    })
}
