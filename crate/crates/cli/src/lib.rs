//! Command-line front end: dataset generation, training, evaluation,
//! rollouts, and gradient verification over the followahead core.
//!
//! Exit codes: 0 success, 2 usage/config error, 1 runtime failure. All
//! outputs are reproducible byte-for-byte from (config, seed).

pub mod cmd;
pub mod config;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

/// Environment variable supplying the default output directory.
pub const OUT_ENV: &str = "FOLLOWAHEAD_OUT";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config keys, or input paths; exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Failure while doing the work; exit code 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

/// Classify core errors raised while operating on user-named inputs as
/// usage errors; everything else is a runtime failure.
pub fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

pub fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "followahead",
    version,
    about = "Synthetic follow-ahead pipeline: generate walker episodes, train \
             forecasters, evaluate them, and roll out controllers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate maps and scripted walker episodes
    Gen(CommonArgs),
    /// Train the trajectory forecaster, then the pose forecaster
    Train(CommonArgs),
    /// Score forecasts per horizon across map-visibility variants
    Eval(CommonArgs),
    /// Roll out follow-ahead controllers and summarize their metrics
    Rollout(CommonArgs),
    /// Run the gradient verification suite
    Gradcheck(CommonArgs),
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// Flat key=value config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Output directory (default: $FOLLOWAHEAD_OUT, then ./out)
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Worker threads for independent scenarios/samples
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Print this command's config keys with defaults and exit
    #[arg(long)]
    pub list_keys: bool,
}

/// Dispatch a parsed invocation; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Gen(args) => cmd::gen::run(args),
        Command::Train(args) => cmd::train::run(args),
        Command::Eval(args) => cmd::eval::run(args),
        Command::Rollout(args) => cmd::rollout::run(args),
        Command::Gradcheck(args) => cmd::gradcheck::run(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Resolve the output directory: flag, then environment, then `./out`.
pub fn resolve_out(args: &CommonArgs) -> PathBuf {
    if let Some(out) = &args.out {
        return out.clone();
    }
    if let Ok(env) = std::env::var(OUT_ENV) {
        if !env.is_empty() {
            return PathBuf::from(env);
        }
    }
    PathBuf::from("out")
}

/// An output directory that records every file written so the run can
/// close with a manifest of artifact hashes.
#[derive(Debug)]
pub struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

#[derive(Serialize)]
struct ManifestEntry {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    format: &'static str,
    version: u32,
    command: &'a str,
    files: Vec<ManifestEntry>,
}

impl OutDir {
    /// Create the directory tree; an uncreatable output root is treated
    /// as a config mistake.
    pub fn create(root: PathBuf) -> Result<OutDir, CliError> {
        std::fs::create_dir_all(&root).map_err(|e| {
            CliError::Usage(format!("cannot create output dir {}: {e}", root.display()))
        })?;
        Ok(OutDir { root, written: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)
                .map_err(|e| runtime(format!("cannot create {}: {e}", parent.display())))?;
        }
        std::fs::write(&path, bytes)
            .map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;
        self.written.push(rel.to_string());
        Ok(())
    }

    /// Hash every artifact written this run (sorted by path) into
    /// `manifest.json`. The manifest does not list itself.
    pub fn finish_manifest(&mut self, command: &str) -> Result<(), CliError> {
        let mut rels = self.written.clone();
        rels.sort_unstable();
        rels.dedup();
        let mut files = Vec::with_capacity(rels.len());
        for rel in &rels {
            let path = self.root.join(rel);
            let bytes = std::fs::read(&path)
                .map_err(|e| runtime(format!("cannot hash {}: {e}", path.display())))?;
            files.push(ManifestEntry {
                path: rel.clone(),
                sha256: hex::encode(Sha256::digest(&bytes)),
            });
        }
        let manifest = Manifest { format: "manifest", version: 1, command, files };
        let mut bytes = serde_json::to_vec(&manifest).map_err(runtime)?;
        bytes.push(b'\n');
        let path = self.root.join("manifest.json");
        std::fs::write(&path, bytes)
            .map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;
        Ok(())
    }
}

/// Map `f` over `items` with up to `workers` threads, preserving input
/// order in the result regardless of scheduling.
pub fn par_map<T, R, F>(workers: usize, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let workers = workers.max(1).min(items.len().max(1));
    if workers == 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let done = std::sync::Mutex::new(Vec::with_capacity(items.len()));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(i, &items[i]);
                done.lock().unwrap().push((i, r));
            });
        }
    });
    let mut done = done.into_inner().unwrap();
    done.sort_by_key(|(i, _)| *i);
    done.into_iter().map(|(_, r)| r).collect()
}
