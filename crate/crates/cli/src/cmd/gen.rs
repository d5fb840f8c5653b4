//! `gen`: synthesize maps and scripted walker episodes.

use super::{json_line, parse_kind, parse_style, IndexEntry, IndexHeader, INDEX_FORMAT, INDEX_VERSION};
use crate::config::{print_keys, Config, KeySpec};
use crate::{resolve_out, usage, CliError, CommonArgs, OutDir};
use followahead_core::encode::{write_episode, EpisodeLog};
use followahead_core::grid::write_map;
use followahead_core::sim::{episode_frames, sample_scenario, MapSpec};

pub const KEYS: &[KeySpec] = &[
    KeySpec { key: "seed", default: "1", doc: "master seed; episode seeds derive from it" },
    KeySpec {
        key: "kinds",
        default: "corridor,l-turn,t-junction,open-room",
        doc: "map kinds to generate",
    },
    KeySpec {
        key: "styles",
        default: "walk,crab,variable-speed",
        doc: "motion styles, cycled across episodes",
    },
    KeySpec { key: "count", default: "3", doc: "episodes per map kind" },
    KeySpec { key: "map.width", default: "2.0", doc: "corridor width, meters" },
    KeySpec { key: "map.length", default: "10.0", doc: "map extent, meters" },
    KeySpec { key: "map.resolution", default: "0.125", doc: "map cell edge, meters" },
    KeySpec { key: "rate_hz", default: "15", doc: "skeleton frame rate" },
];

pub fn run(args: &CommonArgs) -> Result<(), CliError> {
    if args.list_keys {
        print_keys("gen", KEYS);
        return Ok(());
    }
    let cfg = Config::load(args.config.as_deref(), &args.sets, KEYS)?;
    let seed = cfg.u64("seed", KEYS)?;
    let kinds = cfg.list("kinds", KEYS);
    let styles = cfg.list("styles", KEYS);
    let count = cfg.usize("count", KEYS)?;
    let rate_hz = cfg.f64("rate_hz", KEYS)?;
    if kinds.is_empty() || styles.is_empty() || count == 0 {
        return Err(CliError::Usage("kinds, styles, and count must be non-empty".into()));
    }
    if rate_hz <= 0.0 || rate_hz.is_nan() {
        return Err(CliError::Usage(format!("rate_hz must be positive, got {rate_hz}")));
    }
    let kinds = kinds.iter().map(|s| parse_kind(s)).collect::<Result<Vec<_>, _>>()?;
    let styles = styles.iter().map(|s| parse_style(s)).collect::<Result<Vec<_>, _>>()?;
    let base = MapSpec {
        kind: kinds[0],
        corridor_width: cfg.f64("map.width", KEYS)?,
        length: cfg.f64("map.length", KEYS)?,
        resolution: cfg.f64("map.resolution", KEYS)?,
    };

    let mut out = OutDir::create(resolve_out(args))?;
    let mut index = Vec::new();
    let mut total_frames = 0usize;
    let mut ep = 0usize;
    for &kind in &kinds {
        for _ in 0..count {
            let style = styles[ep % styles.len()];
            // Stable per-episode seed so adding kinds later does not
            // reshuffle existing episodes of the same index.
            let sc_seed = seed.wrapping_mul(1000).wrapping_add(ep as u64);
            let spec = MapSpec { kind, ..base };
            let sc = sample_scenario(&spec, style, sc_seed).map_err(usage)?;
            let frames = episode_frames(&sc, rate_hz).map_err(usage)?;

            let map_rel = format!("maps/ep-{ep:03}.occ");
            let mut bytes = Vec::new();
            write_map(&sc.map, &mut bytes).map_err(crate::runtime)?;
            out.write(&map_rel, &bytes)?;

            let ep_rel = format!("episodes/ep-{ep:03}.jsonl");
            let log = EpisodeLog {
                rate_hz,
                map_file: Some(map_rel.clone()),
                frames,
            };
            let mut bytes = Vec::new();
            write_episode(&log, &mut bytes).map_err(crate::runtime)?;
            out.write(&ep_rel, &bytes)?;

            total_frames += log.frames.len();
            index.push(IndexEntry {
                episode: ep_rel,
                map: map_rel,
                seed: sc_seed,
                kind: kind.name().to_string(),
                style: style.name().to_string(),
                frames: log.frames.len(),
                duration: sc.duration,
                speed: sc.speed,
            });
            ep += 1;
        }
    }

    let mut bytes = json_line(&IndexHeader {
        format: INDEX_FORMAT.to_string(),
        version: INDEX_VERSION,
        rate_hz,
        episodes: index.len(),
    })?;
    for entry in &index {
        bytes.extend(json_line(entry)?);
    }
    out.write("index.jsonl", &bytes)?;
    out.finish_manifest("gen")?;
    println!(
        "gen: {} episodes ({} frames at {rate_hz} Hz) -> {}",
        index.len(),
        total_frames,
        out.root().display()
    );
    Ok(())
}
