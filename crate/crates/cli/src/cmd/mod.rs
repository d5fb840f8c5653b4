//! Subcommand implementations and the dataset plumbing they share.

pub mod eval;
pub mod gen;
pub mod gradcheck;
pub mod rollout;
pub mod train;

use crate::{usage, CliError};
use followahead_core::encode::{read_episode, EpisodeLog, SkeletonFrame};
use followahead_core::grid::read_map;
use followahead_core::sim::{
    windows, DatasetConfig, MapKind, MotionStyle, Split, Visibility, WindowSample,
};
use followahead_core::OccupancyGrid;
use serde::{Deserialize, Serialize};
use std::io::BufReader;
use std::path::Path;

/// First line of `index.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexHeader {
    pub format: String,
    pub version: u32,
    pub rate_hz: f64,
    pub episodes: usize,
}

/// One generated episode: artifact paths plus the scenario summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexEntry {
    pub episode: String,
    pub map: String,
    pub seed: u64,
    pub kind: String,
    pub style: String,
    pub frames: usize,
    pub duration: f64,
    pub speed: f64,
}

pub const INDEX_FORMAT: &str = "episode-index";
pub const INDEX_VERSION: u32 = 1;

/// Read and validate a dataset index written by `gen`.
pub fn load_index(data: &Path) -> Result<(IndexHeader, Vec<IndexEntry>), CliError> {
    let path = data.join("index.jsonl");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Usage(format!("cannot read dataset index {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header: IndexHeader = lines
        .next()
        .ok_or_else(|| CliError::Usage(format!("{}: empty index", path.display())))
        .and_then(|l| serde_json::from_str(l).map_err(usage))?;
    if header.format != INDEX_FORMAT || header.version != INDEX_VERSION {
        return Err(CliError::Usage(format!(
            "{}: not a version-{INDEX_VERSION} {INDEX_FORMAT} file",
            path.display()
        )));
    }
    let entries: Vec<IndexEntry> = lines
        .map(|l| serde_json::from_str(l).map_err(usage))
        .collect::<Result<_, _>>()?;
    if entries.len() != header.episodes {
        return Err(CliError::Usage(format!(
            "{}: header promises {} episodes, found {}",
            path.display(),
            header.episodes,
            entries.len()
        )));
    }
    Ok((header, entries))
}

/// An episode loaded back from disk alongside its map.
pub struct LoadedEpisode {
    pub entry: IndexEntry,
    pub log: EpisodeLog,
    pub map: OccupancyGrid,
}

/// Load the episodes of one split, in index order.
pub fn load_split(
    data: &Path,
    entries: &[IndexEntry],
    split: Split,
) -> Result<Vec<LoadedEpisode>, CliError> {
    let mut out = Vec::new();
    for entry in entries {
        if followahead_core::sim::split_of(entry.seed) != split {
            continue;
        }
        let ep_path = data.join(&entry.episode);
        let file = std::fs::File::open(&ep_path)
            .map_err(|e| CliError::Usage(format!("cannot open {}: {e}", ep_path.display())))?;
        let log = read_episode(BufReader::new(file))
            .map_err(|e| CliError::Usage(format!("{}: {e}", ep_path.display())))?;
        let map_path = data.join(&entry.map);
        let file = std::fs::File::open(&map_path)
            .map_err(|e| CliError::Usage(format!("cannot open {}: {e}", map_path.display())))?;
        let map = read_map(BufReader::new(file))
            .map_err(|e| CliError::Usage(format!("{}: {e}", map_path.display())))?;
        out.push(LoadedEpisode { entry: entry.clone(), log, map });
    }
    Ok(out)
}

/// Slice every loaded episode into training windows. `limit` of zero
/// keeps everything; otherwise windows are subsampled evenly so a cap
/// still sees all episodes.
pub fn dataset_windows(
    episodes: &[LoadedEpisode],
    base: &DatasetConfig,
    limit: usize,
) -> Result<Vec<WindowSample>, CliError> {
    let mut all = Vec::new();
    for ep in episodes {
        let cfg = DatasetConfig { rate_hz: ep.log.rate_hz, ..*base };
        let mut w = windows(&ep.log.frames, &ep.map, &cfg).map_err(usage)?;
        all.append(&mut w);
    }
    if limit > 0 && all.len() > limit {
        let stride = all.len() as f64 / limit as f64;
        let picked: Vec<WindowSample> = (0..limit)
            .map(|i| all[(i as f64 * stride) as usize].clone())
            .collect();
        return Ok(picked);
    }
    Ok(all)
}

/// Skeleton frames of every loaded episode, for oracle queries.
pub fn frames_of(ep: &LoadedEpisode) -> &[SkeletonFrame] {
    &ep.log.frames
}

// --- name parsing ---------------------------------------------------------

pub fn parse_kind(s: &str) -> Result<MapKind, CliError> {
    MapKind::parse(s).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown map kind {s:?}; expected corridor, l-turn, t-junction, or open-room"
        ))
    })
}

pub fn parse_style(s: &str) -> Result<MotionStyle, CliError> {
    MotionStyle::parse(s).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown motion style {s:?}; expected walk, crab, or variable-speed"
        ))
    })
}

pub fn parse_visibility(s: &str) -> Result<Visibility, CliError> {
    Visibility::parse(s).ok_or_else(|| {
        CliError::Usage(format!("unknown visibility {s:?}; expected full, partial, or unknown"))
    })
}

pub fn parse_split(s: &str) -> Result<Split, CliError> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        _ => Err(CliError::Usage(format!(
            "unknown split {s:?}; expected train, val, or test"
        ))),
    }
}

/// Serialize one machine-readable record as a JSON line.
pub fn json_line<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec(value).map_err(crate::runtime)?;
    bytes.push(b'\n');
    Ok(bytes)
}
