//! `gradcheck`: central-finite-difference verification of every autodiff
//! primitive and both forecaster loss graphs at toy sizes.

use crate::config::{print_keys, Config, KeySpec};
use crate::{runtime, CliError, CommonArgs};
use followahead_core::nn::primitive_suite;
use followahead_core::{pathnet, posenet};

pub const KEYS: &[KeySpec] = &[
    KeySpec { key: "seed", default: "7", doc: "seed for the random check points" },
    KeySpec { key: "trials", default: "3", doc: "random inputs per primitive" },
];

/// Largest acceptable relative error between analytic and numeric
/// gradients.
pub const GRAD_TOL: f64 = 1e-4;

pub fn run(args: &CommonArgs) -> Result<(), CliError> {
    if args.list_keys {
        print_keys("gradcheck", KEYS);
        return Ok(());
    }
    let cfg = Config::load(args.config.as_deref(), &args.sets, KEYS)?;
    let seed = cfg.u64("seed", KEYS)?;
    let trials = cfg.usize("trials", KEYS)?;
    if trials == 0 {
        return Err(CliError::Usage("trials must be positive".into()));
    }

    let mut rows: Vec<(String, f64)> = primitive_suite(seed, trials)
        .map_err(runtime)?
        .into_iter()
        .map(|(name, err)| (format!("primitive {name}"), err))
        .collect();
    rows.push((
        "trajectory-net loss graph".to_string(),
        pathnet::model_gradcheck(seed).map_err(runtime)?.max_rel_err,
    ));
    rows.push((
        "pose-net loss graph".to_string(),
        posenet::model_gradcheck(seed).map_err(runtime)?.max_rel_err,
    ));

    println!("gradient checks (seed {seed}, {trials} trials, tolerance {GRAD_TOL:.0e})");
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0);
    let mut failures = 0;
    for (name, err) in &rows {
        let status = if *err <= GRAD_TOL { "ok" } else { "FAIL" };
        println!("  {name:width$}  {err:>12.3e}  {status}");
        if *err > GRAD_TOL {
            failures += 1;
        }
    }
    if failures > 0 {
        return Err(runtime(format!("{failures} gradient check(s) exceeded {GRAD_TOL:.0e}")));
    }
    println!("all {} checks passed", rows.len());
    Ok(())
}
