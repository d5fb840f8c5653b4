//! `train`: fit the trajectory forecaster, then the pose forecaster
//! (teacher-forced on ground-truth trajectories), with checkpointed
//! optimizer state for exact resume.

use super::{dataset_windows, json_line, load_index, load_split, parse_split, parse_visibility};
use crate::config::{print_keys, Config, KeySpec};
use crate::{resolve_out, runtime, usage, CliError, CommonArgs, OutDir};
use followahead_core::nn::{
    read_weights, step_decay_lr, write_weights, Adam, NnError, ParamStore, Tensor,
};
use followahead_core::pathnet::{LossWeights, PathNet, PathNetConfig, TrainConfig};
use followahead_core::posenet::{PoseNet, PoseNetConfig, PoseTrainConfig};
use followahead_core::sim::DatasetConfig;
use serde::Serialize;
use std::io::BufReader;
use std::path::{Path, PathBuf};

pub const KEYS: &[KeySpec] = &[
    KeySpec { key: "data", default: "", doc: "dataset directory produced by `gen` (required)" },
    KeySpec { key: "seed", default: "2", doc: "weight init and batch shuffling seed" },
    KeySpec { key: "split", default: "train", doc: "episode split to fit on" },
    KeySpec { key: "visibility", default: "full", doc: "map view fed to the forecaster" },
    KeySpec { key: "limit", default: "0", doc: "cap on windows, 0 = all (even subsample)" },
    KeySpec { key: "nets", default: "path,pose", doc: "which forecasters to fit" },
    KeySpec { key: "resume", default: "false", doc: "continue from checkpoints in the output dir" },
    KeySpec { key: "history", default: "15", doc: "observed frames per window" },
    KeySpec { key: "horizon", default: "45", doc: "forecast frames per window" },
    KeySpec { key: "map.cells", default: "40", doc: "local map window edge, cells" },
    KeySpec { key: "map.resolution", default: "0.125", doc: "local map cell edge, meters" },
    KeySpec { key: "camera.fov_deg", default: "87", doc: "camera cone for partial visibility" },
    KeySpec { key: "camera.range", default: "6.0", doc: "camera range for partial visibility" },
    KeySpec { key: "path.channels", default: "8,16,32", doc: "encoder channel widths" },
    KeySpec { key: "path.bottleneck", default: "64", doc: "bottleneck width" },
    KeySpec { key: "path.beta", default: "10", doc: "soft-argmax inverse temperature" },
    KeySpec { key: "path.pos_weight", default: "40", doc: "heatmap positive-pixel weight" },
    KeySpec { key: "path.w_traj", default: "1", doc: "trajectory loss weight" },
    KeySpec { key: "path.w_final", default: "1", doc: "final-step loss weight" },
    KeySpec { key: "path.w_map", default: "2", doc: "heatmap loss weight" },
    KeySpec { key: "path.w_col", default: "1", doc: "obstacle-overlap loss weight" },
    KeySpec { key: "path.epochs", default: "200", doc: "trajectory net epochs" },
    KeySpec { key: "path.batch", default: "16", doc: "trajectory net batch size" },
    KeySpec { key: "path.lr", default: "0.001", doc: "trajectory net initial learning rate" },
    KeySpec { key: "path.lr_gamma", default: "0.1", doc: "learning-rate decay factor" },
    KeySpec { key: "path.lr_step", default: "600", doc: "epochs between decays" },
    KeySpec { key: "pose.hidden", default: "64", doc: "pose net recurrent width" },
    KeySpec { key: "pose.enc", default: "64", doc: "pose net encoder width" },
    KeySpec { key: "pose.epochs", default: "150", doc: "pose net epochs" },
    KeySpec { key: "pose.batch", default: "16", doc: "pose net batch size" },
    KeySpec { key: "pose.lr", default: "0.00001", doc: "pose net initial learning rate" },
    KeySpec { key: "pose.lr_gamma", default: "0.1", doc: "learning-rate decay factor" },
    KeySpec { key: "pose.lr_step", default: "600", doc: "epochs between decays" },
];

#[derive(Serialize)]
struct ReportHeader<'a> {
    format: &'static str,
    version: u32,
    seed: u64,
    visibility: &'a str,
    windows: usize,
    nets: &'a [String],
    path_lr0: f64,
    pose_lr0: f64,
}

#[derive(Serialize)]
struct EpochLine<'a> {
    net: &'a str,
    epoch: usize,
    loss: f64,
    lr: f64,
}

#[derive(Serialize)]
struct NetSummary<'a> {
    net: &'a str,
    start_epoch: usize,
    epochs: usize,
    final_loss: Option<f64>,
}

pub fn run(args: &CommonArgs) -> Result<(), CliError> {
    if args.list_keys {
        print_keys("train", KEYS);
        return Ok(());
    }
    let cfg = Config::load(args.config.as_deref(), &args.sets, KEYS)?;
    let data = cfg.str("data", KEYS);
    if data.is_empty() {
        return Err(CliError::Usage("data: dataset directory is required".into()));
    }
    let data = PathBuf::from(data);
    let (_, entries) = load_index(&data)?;
    let split = parse_split(&cfg.str("split", KEYS))?;
    let visibility = parse_visibility(&cfg.str("visibility", KEYS))?;
    let nets = cfg.list("nets", KEYS);
    for net in &nets {
        if net != "path" && net != "pose" {
            return Err(CliError::Usage(format!("nets: unknown net {net:?}")));
        }
    }
    let seed = cfg.u64("seed", KEYS)?;
    let resume = cfg.bool("resume", KEYS)?;
    let history = cfg.usize("history", KEYS)?;
    let horizon = cfg.usize("horizon", KEYS)?;
    let map_cells = cfg.usize("map.cells", KEYS)?;

    let dataset = DatasetConfig {
        history_len: history,
        horizon,
        rate_hz: 1.0, // replaced per episode
        visibility,
        map_cells,
        map_resolution: cfg.f64("map.resolution", KEYS)?,
        camera_fov: cfg.f64("camera.fov_deg", KEYS)?.to_radians(),
        camera_range: cfg.f64("camera.range", KEYS)?,
    };
    let episodes = load_split(&data, &entries, split)?;
    let windows = dataset_windows(&episodes, &dataset, cfg.usize("limit", KEYS)?)?;
    if windows.is_empty() {
        return Err(CliError::Usage(
            "no training windows; episodes are shorter than history + horizon".into(),
        ));
    }
    let (path_samples, pose_samples): (Vec<_>, Vec<_>) =
        windows.into_iter().map(|w| (w.path, w.pose)).unzip();

    let mut out = OutDir::create(resolve_out(args))?;
    let mut report = json_line(&ReportHeader {
        format: "train-report",
        version: 1,
        seed,
        visibility: visibility.name(),
        windows: path_samples.len(),
        nets: &nets,
        path_lr0: cfg.f64("path.lr", KEYS)?,
        pose_lr0: cfg.f64("pose.lr", KEYS)?,
    })?;
    let mut summaries = Vec::new();

    if nets.iter().any(|n| n == "path") {
        let channels = cfg.f64_list("path.channels", KEYS)?;
        if channels.len() != 3 || channels.iter().any(|&c| c < 1.0 || c.fract() != 0.0) {
            return Err(CliError::Usage("path.channels: expected three positive integers".into()));
        }
        let net_cfg = PathNetConfig {
            history_len: history,
            horizon,
            map_height: map_cells,
            map_width: map_cells,
            channels: [channels[0] as usize, channels[1] as usize, channels[2] as usize],
            bottleneck: cfg.usize("path.bottleneck", KEYS)?,
            beta: cfg.f64("path.beta", KEYS)?,
            weights: LossWeights {
                traj: cfg.f64("path.w_traj", KEYS)?,
                final_step: cfg.f64("path.w_final", KEYS)?,
                map: cfg.f64("path.w_map", KEYS)?,
                collision: cfg.f64("path.w_col", KEYS)?,
            },
            map_pos_weight: cfg.f64("path.pos_weight", KEYS)?,
        };
        let train_cfg = TrainConfig {
            epochs: cfg.usize("path.epochs", KEYS)?,
            batch_size: cfg.usize("path.batch", KEYS)?,
            lr0: cfg.f64("path.lr", KEYS)?,
            lr_gamma: cfg.f64("path.lr_gamma", KEYS)?,
            lr_step_epochs: cfg.usize("path.lr_step", KEYS)?,
            seed: seed ^ 0x7061_7468,
        };

        let weights_path = out.path("pathnet.fawt");
        let ckpt_path = out.path("pathnet.ckpt");
        let (mut model, mut opt, start_epoch) = if resume {
            let model = PathNet::load(&weights_path)
                .map_err(|e| CliError::Usage(format!("resume: {}: {e}", weights_path.display())))?;
            if model.config != net_cfg {
                return Err(CliError::Usage(
                    "resume: checkpointed trajectory net was built with a different config".into(),
                ));
            }
            let mut opt = Adam::new(train_cfg.lr0, &model.store);
            let epoch = load_optimizer(&ckpt_path, &model.store, &mut opt)?;
            (model, opt, epoch)
        } else {
            let model = PathNet::new(net_cfg, train_cfg.seed).map_err(usage)?;
            let opt = Adam::new(train_cfg.lr0, &model.store);
            (model, opt, 0)
        };
        if start_epoch > train_cfg.epochs {
            return Err(CliError::Usage(format!(
                "resume: checkpoint is at epoch {start_epoch}, past path.epochs {}",
                train_cfg.epochs
            )));
        }

        let mut lines = Vec::new();
        let r = model
            .train_from(&path_samples, &train_cfg, start_epoch, &mut opt, |epoch, loss| {
                lines.push((epoch, loss));
            })
            .map_err(runtime)?;
        for &(epoch, loss) in &lines {
            report.extend(json_line(&EpochLine {
                net: "path",
                epoch,
                loss,
                lr: step_decay_lr(train_cfg.lr0, train_cfg.lr_gamma, train_cfg.lr_step_epochs, epoch),
            })?);
        }
        save_model(&mut out, "pathnet.fawt", &model.store)?;
        save_checkpoint(&mut out, "pathnet.ckpt", &model.store, &opt, train_cfg.epochs)?;
        summaries.push(NetSummary {
            net: "path",
            start_epoch,
            epochs: train_cfg.epochs,
            final_loss: r.epoch_loss.last().copied(),
        });
    }

    if nets.iter().any(|n| n == "pose") {
        let net_cfg = PoseNetConfig {
            history_len: history,
            horizon,
            joints: followahead_core::encode::JOINT_COUNT,
            hidden: cfg.usize("pose.hidden", KEYS)?,
            enc_width: cfg.usize("pose.enc", KEYS)?,
        };
        let train_cfg = PoseTrainConfig {
            epochs: cfg.usize("pose.epochs", KEYS)?,
            batch_size: cfg.usize("pose.batch", KEYS)?,
            lr0: cfg.f64("pose.lr", KEYS)?,
            lr_gamma: cfg.f64("pose.lr_gamma", KEYS)?,
            lr_step_epochs: cfg.usize("pose.lr_step", KEYS)?,
            seed: seed ^ 0x706f_7365,
        };

        let weights_path = out.path("posenet.fawt");
        let ckpt_path = out.path("posenet.ckpt");
        let (mut model, mut opt, start_epoch) = if resume {
            let model = PoseNet::load(&weights_path)
                .map_err(|e| CliError::Usage(format!("resume: {}: {e}", weights_path.display())))?;
            if model.config != net_cfg {
                return Err(CliError::Usage(
                    "resume: checkpointed pose net was built with a different config".into(),
                ));
            }
            let mut opt = Adam::new(train_cfg.lr0, &model.store);
            let epoch = load_optimizer(&ckpt_path, &model.store, &mut opt)?;
            (model, opt, epoch)
        } else {
            let model = PoseNet::new(net_cfg, train_cfg.seed).map_err(usage)?;
            let opt = Adam::new(train_cfg.lr0, &model.store);
            (model, opt, 0)
        };
        if start_epoch > train_cfg.epochs {
            return Err(CliError::Usage(format!(
                "resume: checkpoint is at epoch {start_epoch}, past pose.epochs {}",
                train_cfg.epochs
            )));
        }

        let mut lines = Vec::new();
        let r = model
            .train_from(&pose_samples, &train_cfg, start_epoch, &mut opt, |epoch, loss| {
                lines.push((epoch, loss));
            })
            .map_err(runtime)?;
        for &(epoch, loss) in &lines {
            report.extend(json_line(&EpochLine {
                net: "pose",
                epoch,
                loss,
                lr: step_decay_lr(train_cfg.lr0, train_cfg.lr_gamma, train_cfg.lr_step_epochs, epoch),
            })?);
        }
        save_model(&mut out, "posenet.fawt", &model.store)?;
        save_checkpoint(&mut out, "posenet.ckpt", &model.store, &opt, train_cfg.epochs)?;
        summaries.push(NetSummary {
            net: "pose",
            start_epoch,
            epochs: train_cfg.epochs,
            final_loss: r.epoch_loss.last().copied(),
        });
    }

    for s in &summaries {
        report.extend(json_line(s)?);
    }
    out.write("report.jsonl", &report)?;
    out.finish_manifest("train")?;
    for s in &summaries {
        match s.final_loss {
            Some(loss) => println!(
                "train {}: epochs {}..{}, final loss {loss:.6} -> {}",
                s.net,
                s.start_epoch,
                s.epochs,
                out.root().display()
            ),
            None => println!(
                "train {}: checkpoint already at epoch {}, nothing to do",
                s.net, s.epochs
            ),
        }
    }
    Ok(())
}

fn save_model(out: &mut OutDir, rel: &str, store: &ParamStore) -> Result<(), CliError> {
    let mut bytes = Vec::new();
    write_weights(store, &mut bytes).map_err(runtime)?;
    out.write(rel, &bytes)
}

/// Optimizer checkpoint: the moment estimates stored as `m.<param>` /
/// `v.<param>` tensors beside `t` and the epoch to resume from.
fn save_checkpoint(
    out: &mut OutDir,
    rel: &str,
    model: &ParamStore,
    opt: &Adam,
    next_epoch: usize,
) -> Result<(), CliError> {
    let build = || -> Result<ParamStore, NnError> {
        let mut ckpt = ParamStore::new();
        ckpt.add("epoch", Tensor::scalar(next_epoch as f64))?;
        let (m, v, t) = opt.state();
        ckpt.add("t", Tensor::scalar(t as f64))?;
        for (k, id) in model.ids().enumerate() {
            let name = model.name(id);
            ckpt.add(&format!("m.{name}"), Tensor::new(vec![m[k].len()], m[k].clone())?)?;
            ckpt.add(&format!("v.{name}"), Tensor::new(vec![v[k].len()], v[k].clone())?)?;
        }
        Ok(ckpt)
    };
    let ckpt = build().map_err(runtime)?;
    let mut bytes = Vec::new();
    write_weights(&ckpt, &mut bytes).map_err(runtime)?;
    out.write(rel, &bytes)
}

/// Restore optimizer state; returns the epoch training should resume at.
fn load_optimizer(path: &Path, model: &ParamStore, opt: &mut Adam) -> Result<usize, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Usage(format!("resume: cannot open {}: {e}", path.display())))?;
    let ckpt = read_weights(BufReader::new(file))
        .map_err(|e| CliError::Usage(format!("resume: {}: {e}", path.display())))?;
    let scalar = |name: &str| -> Result<f64, CliError> {
        let id = ckpt.id(name).ok_or_else(|| {
            CliError::Usage(format!("resume: {}: missing {name}", path.display()))
        })?;
        Ok(ckpt.tensor(id).item())
    };
    let epoch = scalar("epoch")? as usize;
    let t = scalar("t")? as u64;
    let mut m = Vec::new();
    let mut v = Vec::new();
    for id in model.ids().collect::<Vec<_>>() {
        let name = model.name(id);
        for (dst, prefix) in [(&mut m, "m"), (&mut v, "v")] {
            let key = format!("{prefix}.{name}");
            let cid = ckpt.id(&key).ok_or_else(|| {
                CliError::Usage(format!("resume: {}: missing {key}", path.display()))
            })?;
            dst.push(ckpt.tensor(cid).data().to_vec());
        }
    }
    opt.restore_state(m, v, t)
        .map_err(|e| CliError::Usage(format!("resume: {}: {e}", path.display())))?;
    Ok(epoch)
}
