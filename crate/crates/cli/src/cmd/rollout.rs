//! `rollout`: run follow-ahead controllers over seeded scenarios and
//! summarize tracking quality per controller.

use super::{json_line, parse_kind, parse_style, parse_visibility};
use crate::config::{print_keys, Config, KeySpec};
use crate::{par_map, resolve_out, runtime, usage, CliError, CommonArgs, OutDir};
use followahead_core::control::{default_actions, GreedyParams, PlannerParams, ViewParams};
use followahead_core::pathnet::PathNet;
use followahead_core::sim::{
    eval_followahead, rollout, sample_scenario, write_rollout, ControllerKind, FollowAheadEval,
    MapSpec, RolloutConfig, Scenario,
};
use serde::Serialize;
use std::path::PathBuf;

pub const KEYS: &[KeySpec] = &[
    KeySpec { key: "models", default: "", doc: "model dir (required for dp-forecast)" },
    KeySpec {
        key: "controllers",
        default: "greedy-ekf,dp-forecast,dp-oracle",
        doc: "controllers to compare",
    },
    KeySpec { key: "kinds", default: "corridor,l-turn,t-junction,open-room", doc: "map kinds" },
    KeySpec { key: "styles", default: "walk", doc: "motion styles, cycled across scenarios" },
    KeySpec { key: "count", default: "5", doc: "scenarios per map kind" },
    KeySpec { key: "seed", default: "3", doc: "master seed; scenario seeds derive from it" },
    KeySpec { key: "map.width", default: "2.0", doc: "corridor width, meters" },
    KeySpec { key: "map.length", default: "10.0", doc: "map extent, meters" },
    KeySpec { key: "map.resolution", default: "0.125", doc: "map cell edge, meters" },
    KeySpec { key: "control_rate", default: "5", doc: "control loop rate, Hz" },
    KeySpec { key: "predictor_rate", default: "15", doc: "observation rate, Hz" },
    KeySpec { key: "history", default: "15", doc: "observed frames (overridden by the model)" },
    KeySpec { key: "horizon", default: "45", doc: "forecast frames (overridden by the model)" },
    KeySpec { key: "map.cells", default: "40", doc: "forecast window edge (overridden by the model)" },
    KeySpec { key: "visibility", default: "full", doc: "map view fed to the forecaster" },
    KeySpec { key: "noise_std", default: "0", doc: "hip measurement noise, meters" },
    KeySpec { key: "start_ahead", default: "1.2", doc: "robot spawn distance ahead, meters" },
    KeySpec { key: "ekf.q", default: "0.05", doc: "tracker process noise" },
    KeySpec { key: "ekf.r", default: "0.02", doc: "tracker measurement noise" },
    KeySpec { key: "lattice.res", default: "0.25", doc: "planner lattice cell, meters" },
    KeySpec { key: "lattice.headings", default: "16", doc: "planner heading bins" },
    KeySpec { key: "inflation", default: "0.3", doc: "robot radius for collision checks" },
    KeySpec { key: "lambda_col", default: "inf", doc: "collision penalty weight" },
    KeySpec { key: "lookahead", default: "1.5", doc: "greedy goal distance ahead of the human" },
    KeySpec { key: "camera.fov_deg", default: "87", doc: "rear camera cone, degrees" },
    KeySpec { key: "camera.range", default: "6.0", doc: "rear camera range, meters" },
    KeySpec { key: "logs", default: "true", doc: "write one log file per scenario" },
];

#[derive(Serialize)]
struct SummaryHeader<'a> {
    format: &'static str,
    version: u32,
    seed: u64,
    scenarios: usize,
    controllers: &'a [&'a str],
}

#[derive(Serialize)]
struct SummaryLine<'a> {
    controller: &'a str,
    tracking_time: f64,
    area_proxy: f64,
    distance: f64,
    scenarios: usize,
}

pub fn run(args: &CommonArgs) -> Result<(), CliError> {
    if args.list_keys {
        print_keys("rollout", KEYS);
        return Ok(());
    }
    let cfg = Config::load(args.config.as_deref(), &args.sets, KEYS)?;
    let controllers: Vec<ControllerKind> = cfg
        .list("controllers", KEYS)
        .iter()
        .map(|s| {
            ControllerKind::parse(s).ok_or_else(|| {
                CliError::Usage(format!(
                    "unknown controller {s:?}; expected greedy-ekf, dp-forecast, or dp-oracle"
                ))
            })
        })
        .collect::<Result<_, _>>()?;
    if controllers.is_empty() {
        return Err(CliError::Usage("controllers: at least one controller required".into()));
    }
    let kinds = cfg.list("kinds", KEYS);
    let styles = cfg.list("styles", KEYS);
    let count = cfg.usize("count", KEYS)?;
    if kinds.is_empty() || styles.is_empty() || count == 0 {
        return Err(CliError::Usage("kinds, styles, and count must be non-empty".into()));
    }
    let kinds = kinds.iter().map(|s| parse_kind(s)).collect::<Result<Vec<_>, _>>()?;
    let styles = styles.iter().map(|s| parse_style(s)).collect::<Result<Vec<_>, _>>()?;
    let seed = cfg.u64("seed", KEYS)?;

    let model = if controllers.contains(&ControllerKind::DpForecast) {
        let dir = cfg.str("models", KEYS);
        if dir.is_empty() {
            return Err(CliError::Usage("models: directory is required for dp-forecast".into()));
        }
        let path = PathBuf::from(dir).join("pathnet.fawt");
        Some(PathNet::load(&path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?)
    } else {
        None
    };
    // The loaded forecaster dictates its own window geometry.
    let (history, horizon, map_cells) = match &model {
        Some(m) => (m.config.history_len, m.config.horizon, m.config.map_height),
        None => (cfg.usize("history", KEYS)?, cfg.usize("horizon", KEYS)?, cfg.usize("map.cells", KEYS)?),
    };

    let control_rate = cfg.f64("control_rate", KEYS)?;
    if !(control_rate > 0.0) {
        return Err(CliError::Usage("control_rate must be positive".into()));
    }
    let dt = 1.0 / control_rate;
    let inflation = cfg.f64("inflation", KEYS)?;
    let rollout_cfg = RolloutConfig {
        control_rate_hz: control_rate,
        predictor_rate_hz: cfg.f64("predictor_rate", KEYS)?,
        history_len: history,
        horizon,
        planner: PlannerParams {
            lattice_res: cfg.f64("lattice.res", KEYS)?,
            headings: cfg.usize("lattice.headings", KEYS)?,
            actions: default_actions(),
            dt,
            lambda_col: cfg.f64("lambda_col", KEYS)?,
            inflation,
            view: ViewParams::default(),
        },
        greedy: GreedyParams {
            actions: default_actions(),
            dt,
            inflation,
            lookahead: cfg.f64("lookahead", KEYS)?,
        },
        ekf_q: cfg.f64("ekf.q", KEYS)?,
        ekf_r: cfg.f64("ekf.r", KEYS)?,
        start_ahead: cfg.f64("start_ahead", KEYS)?,
        noise_std: cfg.f64("noise_std", KEYS)?,
        visibility: parse_visibility(&cfg.str("visibility", KEYS))?,
        map_cells,
        map_resolution: cfg.f64("map.resolution", KEYS)?,
        camera_fov: cfg.f64("camera.fov_deg", KEYS)?.to_radians(),
        camera_range: cfg.f64("camera.range", KEYS)?,
    };
    rollout_cfg.validate().map_err(usage)?;

    let base = MapSpec {
        kind: kinds[0],
        corridor_width: cfg.f64("map.width", KEYS)?,
        length: cfg.f64("map.length", KEYS)?,
        resolution: cfg.f64("map.resolution", KEYS)?,
    };
    let mut scenarios: Vec<Scenario> = Vec::new();
    for (k, &kind) in kinds.iter().enumerate() {
        for i in 0..count {
            let idx = k * count + i;
            let style = styles[idx % styles.len()];
            let sc_seed = seed.wrapping_mul(1000).wrapping_add(idx as u64);
            scenarios.push(sample_scenario(&MapSpec { kind, ..base }, style, sc_seed).map_err(usage)?);
        }
    }

    let write_logs = cfg.bool("logs", KEYS)?;
    let mut out = OutDir::create(resolve_out(args))?;
    let mut rows: Vec<(&str, FollowAheadEval, usize)> = Vec::new();
    for &kind in &controllers {
        let runs: Vec<Result<_, CliError>> = par_map(args.workers, &scenarios, |i, sc| {
            let log = rollout(sc, kind, model.as_ref(), &rollout_cfg)
                .map_err(|e| runtime(format!("{} scenario {i}: {e}", kind.name())))?;
            let eval = eval_followahead(&log, &sc.map, rollout_cfg.camera_fov, rollout_cfg.camera_range)
                .map_err(|e| runtime(format!("{} scenario {i}: {e}", kind.name())))?;
            Ok((log, eval))
        });
        let mut acc = FollowAheadEval { tracking_time: 0.0, area_proxy: 0.0, distance: 0.0 };
        let n = runs.len();
        for (i, r) in runs.into_iter().enumerate() {
            let (log, eval) = r?;
            if write_logs {
                let mut bytes = Vec::new();
                write_rollout(&log, &mut bytes).map_err(runtime)?;
                out.write(&format!("logs/{}/sc-{i:03}.jsonl", kind.name()), &bytes)?;
            }
            acc.tracking_time += eval.tracking_time;
            acc.area_proxy += eval.area_proxy;
            acc.distance += eval.distance;
        }
        acc.tracking_time /= n as f64;
        acc.area_proxy /= n as f64;
        acc.distance /= n as f64;
        rows.push((kind.name(), acc, n));
    }

    println!(
        "{:12} {:>9} {:>9} {:>9} {:>10}",
        "controller", "tracking", "area", "distance", "scenarios"
    );
    for (name, eval, n) in &rows {
        println!(
            "{name:12} {:>9.3} {:>9.3} {:>9.3} {n:>10}",
            eval.tracking_time, eval.area_proxy, eval.distance
        );
    }

    let names: Vec<&str> = rows.iter().map(|(n, _, _)| *n).collect();
    let mut bytes = json_line(&SummaryHeader {
        format: "rollout-summary",
        version: 1,
        seed,
        scenarios: scenarios.len(),
        controllers: &names,
    })?;
    for (name, eval, n) in &rows {
        bytes.extend(json_line(&SummaryLine {
            controller: name,
            tracking_time: eval.tracking_time,
            area_proxy: eval.area_proxy,
            distance: eval.distance,
            scenarios: *n,
        })?);
    }
    out.write("summary.jsonl", &bytes)?;
    out.finish_manifest("rollout")?;
    Ok(())
}
