//! Schema checks for every file the CLI writes.

use std::fs;
use std::path::Path;

use clap::ValueEnum;
use qovae_core::analysis::{
    DEVICE_COUNTS_FILE, ENTROPY_KDE_FILE, KET_FREQUENCY_FILE, RANK_HIST_FILE, SUMMARY_FILE,
};
use qovae_core::model::{Qovae, LOG_FILE};
use qovae_core::repr::{read_dataset, Vocabulary};
use serde_json::Value;

use crate::error::{CliError, Result};

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    Dataset,
    GenStats,
    Simulate,
    Path,
    LatentMap,
    Distance,
    DistanceBins,
    Analyze,
    Bo,
    TrainLog,
    Checkpoint,
}

/// Leading columns fixed, then optionally `z1..zk`, then fixed trailing columns.
struct CsvShape {
    head: &'static [&'static str],
    latent: bool,
    tail: &'static [&'static str],
    numeric: &'static [&'static str],
}

const PATH: CsvShape = CsvShape {
    head: &["step", "t", "setup", "S", "error"],
    latent: false,
    tail: &[],
    numeric: &["step", "t", "S"],
};
const LATENT_MAP: CsvShape = CsvShape {
    head: &[],
    latent: true,
    tail: &["S", "length", "last_device", "second_last_device", "functional_group"],
    numeric: &["S", "length"],
};
const DISTANCE: CsvShape = CsvShape {
    head: &["i", "j", "distance", "abs_dS"],
    latent: false,
    tail: &[],
    numeric: &["i", "j", "distance", "abs_dS"],
};
const DISTANCE_BINS: CsvShape = CsvShape {
    head: &["bin_lo", "bin_hi", "count", "mean_abs_dS"],
    latent: false,
    tail: &[],
    numeric: &["bin_lo", "bin_hi", "count", "mean_abs_dS"],
};
const BO: CsvShape = CsvShape {
    head: &["rank", "iteration", "setup", "y", "metric", "fidelity"],
    latent: true,
    tail: &[],
    numeric: &["rank", "iteration", "y", "metric", "fidelity"],
};
const TRAIN_LOG: CsvShape = CsvShape {
    head: &["epoch", "recon", "kl", "val_recon", "val_kl"],
    latent: false,
    tail: &[],
    numeric: &["epoch", "recon", "kl", "val_recon", "val_kl"],
};
const ENTROPY_KDE: CsvShape = CsvShape {
    head: &["bipartition", "x", "train_density", "gen_density"],
    latent: false,
    tail: &[],
    numeric: &["x", "train_density", "gen_density"],
};
const RANK_HIST: CsvShape = CsvShape {
    head: &["bipartition", "rank", "train_count", "gen_count"],
    latent: false,
    tail: &[],
    numeric: &["rank", "train_count", "gen_count"],
};
const DEVICE_COUNTS: CsvShape = CsvShape {
    head: &["device_kind", "count_per_setup", "train_setups", "gen_setups"],
    latent: false,
    tail: &[],
    numeric: &["count_per_setup", "train_setups", "gen_setups"],
};
const KET_FREQUENCY: CsvShape = CsvShape {
    head: &["ket", "train_states", "train_fraction", "gen_states", "gen_fraction"],
    latent: false,
    tail: &[],
    numeric: &["train_states", "train_fraction", "gen_states", "gen_fraction"],
};

fn bad(path: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::input(format!("{}: {msg}", path.display()))
}

/// Returns the number of data rows.
fn check_csv(path: &Path, shape: &CsvShape) -> Result<usize> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    let n_fixed = shape.head.len() + shape.tail.len();
    if header.len() < n_fixed {
        return Err(bad(path, format!("header {header:?} is too short")));
    }
    let k = header.len() - n_fixed;
    if !shape.latent && k != 0 {
        return Err(bad(path, format!("unexpected columns in header {header:?}")));
    }
    if shape.latent && k == 0 {
        return Err(bad(path, "no latent columns z1..zk"));
    }
    let expected: Vec<String> = shape
        .head
        .iter()
        .map(|s| s.to_string())
        .chain((1..=k).map(|i| format!("z{i}")))
        .chain(shape.tail.iter().map(|s| s.to_string()))
        .collect();
    if header != expected {
        return Err(bad(path, format!("header {header:?}, expected {expected:?}")));
    }
    let latent_cols = shape.head.len()..shape.head.len() + k;
    let numeric: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(i, h)| latent_cols.contains(i) || shape.numeric.contains(&h.as_str()))
        .map(|(i, _)| i)
        .collect();
    let mut rows = 0;
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        for &c in &numeric {
            let v = &rec[c];
            if !v.is_empty() && v.parse::<f64>().is_err() {
                return Err(bad(
                    path,
                    format!("row {}: column {} is not numeric: '{v}'", line + 1, header[c]),
                ));
            }
        }
        rows += 1;
    }
    Ok(rows)
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| bad(path, e))
}

fn require(path: &Path, v: &Value, keys: &[&str]) -> Result<()> {
    for k in keys {
        let mut cur = v;
        for part in k.split('.') {
            cur = cur
                .get(part)
                .ok_or_else(|| bad(path, format!("missing key '{k}'")))?;
        }
    }
    Ok(())
}

pub fn check(schema: Schema, path: &Path) -> Result<usize> {
    match schema {
        Schema::Dataset => Ok(read_dataset(path, &Vocabulary::default())?.len()),
        Schema::GenStats => {
            let v = read_json(path)?;
            require(path, &v, &["spec", "stats.draws", "stats.accepted", "stats.acceptance_rate"])?;
            Ok(1)
        }
        Schema::Simulate => {
            let v = read_json(path)?;
            require(path, &v, &["setup", "kets", "summary.entropies", "summary.ranks", "summary.total"])?;
            Ok(v["kets"].as_array().map_or(0, Vec::len))
        }
        Schema::Path => check_csv(path, &PATH),
        Schema::LatentMap => check_csv(path, &LATENT_MAP),
        Schema::Distance => check_csv(path, &DISTANCE),
        Schema::DistanceBins => check_csv(path, &DISTANCE_BINS),
        Schema::Bo => check_csv(path, &BO),
        Schema::TrainLog => check_csv(path, &TRAIN_LOG),
        Schema::Checkpoint => {
            Qovae::load(path)?;
            let log = path.join(LOG_FILE);
            if log.exists() {
                check_csv(&log, &TRAIN_LOG)
            } else {
                Ok(0)
            }
        }
        Schema::Analyze => {
            let mut rows = check_csv(&path.join(ENTROPY_KDE_FILE), &ENTROPY_KDE)?;
            rows += check_csv(&path.join(RANK_HIST_FILE), &RANK_HIST)?;
            rows += check_csv(&path.join(DEVICE_COUNTS_FILE), &DEVICE_COUNTS)?;
            rows += check_csv(&path.join(KET_FREQUENCY_FILE), &KET_FREQUENCY)?;
            let s = path.join(SUMMARY_FILE);
            let v = read_json(&s)?;
            require(&s, &v, &["train", "generated", "uniqueness_pct", "novelty_pct"])?;
            Ok(rows)
        }
    }
}

pub fn run(schema: Schema, path: &Path) -> Result<()> {
    let rows = check(schema, path)?;
    println!(
        "{}",
        serde_json::json!({
            "schema": format!("{schema:?}"),
            "path": path,
            "ok": true,
            "rows": rows,
        })
    );
    Ok(())
}
