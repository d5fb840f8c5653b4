//! `eval`: score trajectory and pose forecasts per horizon, across
//! map-visibility variants, against held-out episodes.

use super::{dataset_windows, json_line, load_index, load_split, parse_split, parse_visibility};
use crate::config::{print_keys, Config, KeySpec};
use crate::{par_map, resolve_out, runtime, usage, CliError, CommonArgs, OutDir};
use followahead_core::geo::Vec2;
use followahead_core::pathnet::PathNet;
use followahead_core::posenet::PoseNet;
use followahead_core::sim::{eval_prediction, DatasetConfig, PredictionEval};
use serde::Serialize;
use std::path::PathBuf;

pub const KEYS: &[KeySpec] = &[
    KeySpec { key: "data", default: "", doc: "dataset directory produced by `gen` (required)" },
    KeySpec { key: "models", default: "", doc: "directory holding pathnet.fawt / posenet.fawt" },
    KeySpec { key: "predictor", default: "model", doc: "model, or oracle for ground truth" },
    KeySpec { key: "split", default: "test", doc: "episode split to score" },
    KeySpec { key: "variants", default: "full,partial,unknown", doc: "map views to score" },
    KeySpec { key: "horizons", default: "1.0,1.5,2.0,3.0", doc: "report horizons, seconds" },
    KeySpec { key: "limit", default: "0", doc: "cap on windows, 0 = all (even subsample)" },
    KeySpec { key: "history", default: "15", doc: "observed frames (oracle mode only)" },
    KeySpec { key: "horizon", default: "45", doc: "forecast frames (oracle mode only)" },
    KeySpec { key: "map.cells", default: "40", doc: "map window edge (oracle mode only)" },
    KeySpec { key: "map.resolution", default: "0.125", doc: "map window cell edge, meters" },
    KeySpec { key: "camera.fov_deg", default: "87", doc: "camera cone for partial visibility" },
    KeySpec { key: "camera.range", default: "6.0", doc: "camera range for partial visibility" },
];

#[derive(Serialize)]
struct MetricsHeader<'a> {
    format: &'static str,
    version: u32,
    predictor: &'a str,
    split: &'a str,
    windows: usize,
    horizons_s: &'a [f64],
}

#[derive(Serialize)]
struct VariantLine<'a> {
    variant: &'a str,
    path_mm: &'a [f64],
    path_mean_mm: f64,
    pose_mm: &'a [f64],
    pose_mean_mm: f64,
}

pub fn run(args: &CommonArgs) -> Result<(), CliError> {
    if args.list_keys {
        print_keys("eval", KEYS);
        return Ok(());
    }
    let cfg = Config::load(args.config.as_deref(), &args.sets, KEYS)?;
    let data = cfg.str("data", KEYS);
    if data.is_empty() {
        return Err(CliError::Usage("data: dataset directory is required".into()));
    }
    let data = PathBuf::from(data);
    let predictor = cfg.str("predictor", KEYS);
    let horizons = cfg.f64_list("horizons", KEYS)?;
    if horizons.is_empty() {
        return Err(CliError::Usage("horizons: at least one horizon required".into()));
    }
    let variants = cfg.list("variants", KEYS);
    if variants.is_empty() {
        return Err(CliError::Usage("variants: at least one map view required".into()));
    }

    // The nets pin the window geometry; config keys only drive oracle runs.
    let models = match predictor.as_str() {
        "model" => {
            let dir = cfg.str("models", KEYS);
            if dir.is_empty() {
                return Err(CliError::Usage("models: directory is required with predictor=model".into()));
            }
            let dir = PathBuf::from(dir);
            let path_net = PathNet::load(&dir.join("pathnet.fawt"))
                .map_err(|e| CliError::Usage(format!("{}: {e}", dir.join("pathnet.fawt").display())))?;
            let pose_net = PoseNet::load(&dir.join("posenet.fawt"))
                .map_err(|e| CliError::Usage(format!("{}: {e}", dir.join("posenet.fawt").display())))?;
            if path_net.config.history_len != pose_net.config.history_len
                || path_net.config.horizon != pose_net.config.horizon
            {
                return Err(CliError::Usage(
                    "models disagree on history length or horizon".into(),
                ));
            }
            Some((path_net, pose_net))
        }
        "oracle" => None,
        other => {
            return Err(CliError::Usage(format!(
                "predictor: expected model or oracle, got {other:?}"
            )))
        }
    };
    let (history, horizon, map_cells) = match &models {
        Some((p, _)) => (p.config.history_len, p.config.horizon, p.config.map_height),
        None => (
            cfg.usize("history", KEYS)?,
            cfg.usize("horizon", KEYS)?,
            cfg.usize("map.cells", KEYS)?,
        ),
    };

    let (index, entries) = load_index(&data)?;
    let split_name = cfg.str("split", KEYS);
    let episodes = load_split(&data, &entries, parse_split(&split_name)?)?;
    if episodes.is_empty() {
        return Err(CliError::Usage(format!("no episodes in split {split_name:?}")));
    }
    let limit = cfg.usize("limit", KEYS)?;
    let base = DatasetConfig {
        history_len: history,
        horizon,
        rate_hz: 1.0, // replaced per episode
        visibility: followahead_core::sim::Visibility::Full,
        map_cells,
        map_resolution: cfg.f64("map.resolution", KEYS)?,
        camera_fov: cfg.f64("camera.fov_deg", KEYS)?.to_radians(),
        camera_range: cfg.f64("camera.range", KEYS)?,
    };

    let mut results: Vec<(String, PredictionEval)> = Vec::new();
    let mut window_count = 0;
    for variant in &variants {
        let visibility = parse_visibility(variant)?;
        let wins = dataset_windows(&episodes, &DatasetConfig { visibility, ..base }, limit)?;
        if wins.is_empty() {
            return Err(CliError::Usage(
                "no evaluation windows; episodes are shorter than history + horizon".into(),
            ));
        }
        window_count = wins.len();

        type Pred = Result<(Vec<Vec2>, Vec<Vec<[f64; 3]>>), CliError>;
        let preds: Vec<Pred> = par_map(args.workers, &wins, |_, w| match &models {
            Some((path_net, pose_net)) => {
                let (traj, _) = path_net
                    .predict(&w.path.input_map, &w.path.history)
                    .map_err(runtime)?;
                let pose = pose_net
                    .predict_local(&w.pose.history, &traj, w.pose.hip_z)
                    .map_err(runtime)?;
                Ok((traj, pose))
            }
            None => Ok((w.path.future.clone(), w.pose.future_local.clone())),
        });
        let mut pred_paths = Vec::with_capacity(wins.len());
        let mut pred_poses = Vec::with_capacity(wins.len());
        for p in preds {
            let (traj, pose) = p?;
            pred_paths.push(traj);
            pred_poses.push(pose);
        }
        let gt_paths: Vec<_> = wins.iter().map(|w| w.path.future.clone()).collect();
        let gt_poses: Vec<_> = wins.iter().map(|w| w.pose.future_local.clone()).collect();

        let eval = eval_prediction(
            &gt_paths,
            &pred_paths,
            &gt_poses,
            &pred_poses,
            index.rate_hz,
            &horizons,
        )
        .map_err(usage)?;
        results.push((visibility.name().to_string(), eval));
    }

    print_table("path error (mm)", &horizons, &results, |e| (&e.path_mm, e.path_mean_mm));
    println!();
    print_table("pose error (mm)", &horizons, &results, |e| (&e.pose_mm, e.pose_mean_mm));

    let mut bytes = json_line(&MetricsHeader {
        format: "prediction-metrics",
        version: 1,
        predictor: &predictor,
        split: &split_name,
        windows: window_count,
        horizons_s: &horizons,
    })?;
    for (variant, e) in &results {
        bytes.extend(json_line(&VariantLine {
            variant,
            path_mm: &e.path_mm,
            path_mean_mm: e.path_mean_mm,
            pose_mm: &e.pose_mm,
            pose_mean_mm: e.pose_mean_mm,
        })?);
    }
    let mut out = OutDir::create(resolve_out(args))?;
    out.write("metrics.jsonl", &bytes)?;
    out.finish_manifest("eval")?;
    Ok(())
}

/// One row per variant: label, one column per horizon, then the mean.
fn print_table(
    title: &str,
    horizons: &[f64],
    results: &[(String, PredictionEval)],
    select: impl Fn(&PredictionEval) -> (&Vec<f64>, f64),
) {
    println!("{title}");
    let mut header = format!("{:10}", "variant");
    for h in horizons {
        header.push_str(&format!(" {:>9}", format!("{h:.1}s")));
    }
    header.push_str(&format!(" {:>9}", "mean"));
    println!("{header}");
    for (variant, eval) in results {
        let (cols, mean) = select(eval);
        let mut row = format!("{variant:10}");
        for c in cols {
            row.push_str(&format!(" {c:>9.1}"));
        }
        row.push_str(&format!(" {mean:>9.1}"));
        println!("{row}");
    }
}
