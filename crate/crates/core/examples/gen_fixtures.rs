//! Regenerates the bundled fixtures under `crates/core/fixtures/`.
//!
//!     cargo run -p ecoroute --example gen_fixtures

use std::path::Path;

use ecoroute::eops::EopsModel;
use ecoroute::harness::{EvaluationPlan, OdPair};
use ecoroute::synth::{self, DriveConfig};
use ecoroute::telemetry::{self, DriveMode, FuseConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const CORRIDOR_LINKS: usize = 48;
const CORRIDOR_LINK_MI: f64 = 0.15;
const CALIBRATION_TRIPS: usize = 30;
const START_EPOCH: i64 = 1_395_644_400;

fn main() -> ecoroute::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    std::fs::create_dir_all(&dir).map_err(|e| ecoroute::Error::Invalid(e.to_string()))?;
    let write = |name: &str, text: String| {
        std::fs::write(dir.join(name), text).expect("fixture directory is writable");
    };

    let corridor = synth::corridor_network(CORRIDOR_LINKS, CORRIDOR_LINK_MI);
    write("corridor_network.json", corridor.to_json()? + "\n");

    let mut rng = ChaCha8Rng::seed_from_u64(2014);
    let mut traces = Vec::new();
    for k in 0..CALIBRATION_TRIPS {
        let cfg = DriveConfig {
            trip_id: format!("trip{k:02}"),
            start_utc: START_EPOCH + 3600 * k as i64,
            gps_lead_s: 5 + (k as i64 * 7) % 40,
            obd_hz: if k == 0 { 20 } else { 5 },
            ..DriveConfig::default()
        };
        let drive = synth::drive_corridor(&corridor, 0, CORRIDOR_LINKS - 1, &cfg, &mut rng);
        if k == 0 {
            telemetry::write_obd_csv(&dir.join("trip_obd.csv"), &drive.obd)?;
            telemetry::write_gps_csv(&dir.join("trip_gps.csv"), &drive.gps)?;
        }
        let fused = telemetry::fuse(
            &drive.obd,
            &drive.gps,
            &FuseConfig {
                trip_id: cfg.trip_id.clone(),
                mode: DriveMode::Normal,
                ..FuseConfig::default()
            },
        )?;
        traces.push(fused);
    }
    telemetry::write_traces_csv(&dir.join("traces.csv"), &traces)?;

    let two_route = synth::two_route_network();
    write("two_route_network.json", two_route.to_json()? + "\n");
    let model: EopsModel = synth::reference_model(DriveMode::Normal);
    write("reference_model.json", model.to_json()?);

    let mut feed = String::from("epoch_s,link_id,avg_speed_mph\n");
    for snap in synth::two_route_feed(START_EPOCH) {
        for (link, v) in &snap.speeds {
            feed.push_str(&format!("{},{link},{v}\n", snap.epoch));
        }
    }
    write("two_route_traffic.csv", feed);

    let plan = EvaluationPlan {
        od_pairs: vec![
            OdPair {
                origin: "O".into(),
                destination: "D".into(),
                direction: "0".into(),
                site: Some("two-route".into()),
            },
            OdPair {
                origin: "D".into(),
                destination: "O".into(),
                direction: "1".into(),
                site: Some("two-route".into()),
            },
        ],
        start_epoch: START_EPOCH,
        days: 7,
        interval: 300,
    };
    write(
        "plan.json",
        serde_json::to_string_pretty(&plan).expect("plan serializes") + "\n",
    );
    Ok(())
}
