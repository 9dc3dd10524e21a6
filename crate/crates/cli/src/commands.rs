use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use qovae_core::analysis::{self, Grouping};
use qovae_core::bayesopt::{bo_loop, BoOptions, GpOptions, TargetObjective, TargetState};
use qovae_core::datagen::{self, GenSpec, LabelError, Labeled};
use qovae_core::entanglement::EntanglementSummary;
use qovae_core::model::{self, DecodeMode, Qovae};
use qovae_core::optics::{run_setup, SimError};
use qovae_core::repr::{read_dataset, write_dataset, Record, Setup, Vocabulary};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, Kind, Result};
use crate::{
    AnalyzeArgs, BoArgs, DistanceArgs, GenDataArgs, InterpolateArgs, LatentMapArgs, SampleArgs,
    SimulateArgs, TrainArgs,
};

fn print_json(value: &impl Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Reads a dataset and relabels every setup by simulation, so stored
/// labels never drift from the simulator.
pub fn read_labeled(path: &Path, vocab: &Vocabulary) -> Result<Vec<Labeled>> {
    let sim = vocab.sim_config();
    read_dataset(path, vocab)?
        .into_iter()
        .map(|r| Ok(datagen::label(&r.setup, &sim)?))
        .collect()
}

pub fn read_setups(path: &Path, vocab: &Vocabulary) -> Result<Vec<Setup>> {
    Ok(read_dataset(path, vocab)?.into_iter().map(|r| r.setup).collect())
}

fn write_labeled(path: &Path, records: &[Labeled]) -> Result<()> {
    let recs: Vec<Record> = records.iter().map(Labeled::to_record).collect();
    Ok(write_dataset(path, &recs)?)
}

#[derive(Serialize)]
struct GenReport<'a> {
    out: &'a Path,
    spec: &'a GenSpec,
    stats: &'a datagen::GenStats,
}

pub fn gen_data(a: &GenDataArgs) -> Result<()> {
    let vocab = RunConfig::load_opt(a.config.as_deref())?.vocabulary()?;
    let workers = a
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(CliError::usage("--workers must be positive"));
    }
    let spec = GenSpec {
        count: a.count,
        min_len: a.min_len,
        max_len: a.max_len,
        s_min: a.s_min,
        s_max: a.s_max,
        ntp_min: a.ntp_min,
        mix: a.mix,
        seed: a.seed,
        workers,
        max_draws: a.max_draws,
        ..GenSpec::default()
    };
    let (records, stats) = datagen::generate_dataset(&vocab, &spec)?;
    write_labeled(&a.out, &records)?;
    let report = GenReport {
        out: &a.out,
        spec: &spec,
        stats: &stats,
    };
    let stats_path = a.stats.clone().unwrap_or_else(|| with_suffix(&a.out, ".stats.json"));
    write_json(&stats_path, &report)?;
    print_json(&report)
}

#[derive(Serialize)]
pub struct KetDump {
    pub ket: String,
    pub oam: Option<[i32; 4]>,
    /// Unnormalized exact amplitude.
    pub exact: String,
    /// Normalized amplitude.
    pub re: f64,
    pub im: f64,
}

#[derive(Serialize)]
pub struct SimulateDump {
    pub setup: String,
    pub length: usize,
    pub n_tp: usize,
    pub empty: bool,
    pub norm_sqr: f64,
    pub kets: Vec<KetDump>,
    pub summary: EntanglementSummary,
}

pub fn simulate_setup(setup: &Setup, vocab: &Vocabulary) -> Result<SimulateDump> {
    let sim = vocab.sim_config();
    let mut dump = SimulateDump {
        setup: setup.to_string(),
        length: setup.len(),
        n_tp: setup.two_photon_count(),
        empty: true,
        norm_sqr: 0.0,
        kets: Vec::new(),
        summary: EntanglementSummary::unentangled(),
    };
    let state = match run_setup(setup, &sim) {
        Ok(s) => s,
        Err(SimError::EmptyState) => return Ok(dump),
        Err(e) => return Err(e.into()),
    };
    let normalized: Vec<_> = state.complex_terms();
    dump.empty = false;
    dump.norm_sqr = state.raw_norm_sqr();
    dump.kets = state
        .terms()
        .zip(normalized)
        .map(|((k, exact), (_, c))| KetDump {
            ket: k.to_string(),
            oam: k.detector_oams(),
            exact: exact.to_string(),
            re: c.re,
            im: c.im,
        })
        .collect();
    dump.summary = match datagen::label(setup, &sim) {
        Ok(l) => l.summary,
        Err(LabelError::Sim(e)) => return Err(e.into()),
        Err(e) => return Err(CliError::new(Kind::Simulation, e.to_string())),
    };
    Ok(dump)
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let vocab = RunConfig::load_opt(a.config.as_deref())?.vocabulary()?;
    let setup = vocab.parse_setup(&a.setup)?;
    print_json(&simulate_setup(&setup, &vocab)?)
}

#[derive(Serialize)]
struct TrainReport {
    out: PathBuf,
    records: usize,
    train: usize,
    validation: usize,
    best_epoch: usize,
    final_epoch: Option<model::EpochLog>,
    wall_time_secs: f64,
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load_opt(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.model.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.model.epochs = e;
    }
    let vocab = cfg.vocabulary()?;
    let setups = read_setups(&a.data, &vocab)?;
    let t0 = Instant::now();
    let outcome = model::train(&setups, &vocab, &cfg.model, Some(&a.out), |e| {
        eprintln!(
            "epoch {} recon {:.4} kl {:.4} val_recon {:.4} val_kl {:.4}",
            e.epoch, e.recon, e.kl, e.val_recon, e.val_kl
        );
    })?;
    print_json(&TrainReport {
        out: a.out.clone(),
        records: setups.len(),
        train: outcome.train_indices.len(),
        validation: outcome.val_indices.len(),
        best_epoch: outcome.best_epoch,
        final_epoch: outcome.log.last().copied(),
        wall_time_secs: t0.elapsed().as_secs_f64(),
    })
}

#[derive(Serialize)]
struct SampleReport {
    out: PathBuf,
    n: usize,
    skipped_overflow: usize,
    stats: analysis::SStats,
}

/// Labels decoded setups, dropping those whose amplitudes overflow.
fn label_all(setups: &[Setup], vocab: &Vocabulary) -> Result<(Vec<Labeled>, usize)> {
    let sim = vocab.sim_config();
    let mut out = Vec::with_capacity(setups.len());
    let mut skipped = 0;
    for s in setups {
        match datagen::label(s, &sim) {
            Ok(l) => out.push(l),
            Err(LabelError::Sim(SimError::Overflow(_))) => skipped += 1,
            Err(e) => return Err(e.into()),
        }
    }
    Ok((out, skipped))
}

pub fn sample(a: &SampleArgs) -> Result<()> {
    let model = Qovae::load(&a.ckpt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mode: DecodeMode = a.mode.into();
    let (_, setups) = model.sample_prior(a.n, mode, &mut rng)?;
    let (labeled, skipped) = label_all(&setups, model.vocab())?;
    write_labeled(&a.out, &labeled)?;
    print_json(&SampleReport {
        out: a.out.clone(),
        n: labeled.len(),
        skipped_overflow: skipped,
        stats: analysis::s_stats(&labeled),
    })
}

pub fn interpolate(a: &InterpolateArgs) -> Result<()> {
    let model = Qovae::load(&a.ckpt)?;
    let from = model.vocab().parse_setup(&a.from)?;
    let to = model.vocab().parse_setup(&a.to)?;
    let points = analysis::interpolation_path(&model, &from, &to, a.steps)?;
    analysis::write_path_csv(&a.out, &points)?;
    print_json(&serde_json::json!({ "out": a.out, "rows": points.len() }))
}

pub fn latent_map(a: &LatentMapArgs) -> Result<()> {
    let model = Qovae::load(&a.ckpt)?;
    let axes = match a.axes.as_deref() {
        None => None,
        Some(&[i, j]) => {
            let k = model.latent_dim();
            if i >= k || j >= k || i == j {
                return Err(CliError::usage(format!(
                    "axes {i},{j} must be two distinct indices below {k}"
                )));
            }
            Some((i, j))
        }
        Some(_) => return Err(CliError::usage("--axes takes exactly two indices")),
    };
    let records = read_labeled(&a.data, model.vocab())?;
    let grouping: Grouping = a.grouping.into();
    let rows = analysis::latent_map(&model, &records, axes, grouping)?;
    analysis::write_latent_map(&a.out, &rows)?;
    print_json(&serde_json::json!({ "out": a.out, "rows": rows.len() }))
}

#[derive(Serialize)]
struct DistanceReport {
    pairs: usize,
    spearman_rho: f64,
    p_value: f64,
}

pub fn distance(a: &DistanceArgs) -> Result<()> {
    let model = Qovae::load(&a.ckpt)?;
    let records = read_labeled(&a.data, model.vocab())?;
    let setups: Vec<Setup> = records.iter().map(|r| r.setup.clone()).collect();
    let totals: Vec<f64> = records.iter().map(Labeled::total).collect();
    let z = model.encode_setups(&setups)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let pairs = analysis::distance_vs_ds(z.view(), &totals, a.pairs, &mut rng)?;
    let bins = analysis::bin_pairs(&pairs, a.bins);
    analysis::write_distance_csv(&a.out, &with_suffix(&a.out, ".bins.csv"), &pairs, &bins)?;
    let d: Vec<f64> = pairs.iter().map(|p| p.distance).collect();
    let s: Vec<f64> = pairs.iter().map(|p| p.ds).collect();
    let (rho, p) = analysis::spearman(&d, &s)?;
    print_json(&DistanceReport {
        pairs: pairs.len(),
        spearman_rho: rho,
        p_value: p,
    })
}

pub fn analyze(a: &AnalyzeArgs) -> Result<()> {
    let vocab = RunConfig::load_opt(a.config.as_deref())?.vocabulary()?;
    let generated = read_labeled(&a.gen, &vocab)?;
    let training = read_labeled(&a.train, &vocab)?;
    let report = analysis::compare_distributions(&generated, &training, &vocab.sim_config());
    report.write_dir(&a.out)?;
    print_json(&report.summary)
}

#[derive(Serialize)]
struct BoReport {
    out: PathBuf,
    evaluated: usize,
    data_best: f64,
    best_y: f64,
    best_setup: Option<String>,
    best_fidelity: Option<f64>,
    empty_batches: usize,
}

pub fn bo(a: &BoArgs) -> Result<()> {
    let model = Qovae::load(&a.ckpt)?;
    let target = match &a.target {
        Some(p) => TargetState::parse(&fs::read_to_string(p)?)?,
        None => TargetState::ghz(),
    };
    let objective = TargetObjective::new(target, a.lambda, model.vocab().max_len(), a.metric)?;
    let data = read_setups(&a.data, model.vocab())?;
    let opts = BoOptions {
        iterations: a.iters,
        batch: a.batch,
        starts: a.starts,
        seed: a.seed,
        gp: GpOptions {
            max_points: a.max_points,
            seed: a.seed,
            ..GpOptions::default()
        },
    };
    let result = bo_loop(&model, &data, &objective, &opts)?;

    let dim = model.latent_dim();
    let mut w = csv::Writer::from_path(&a.out)?;
    let mut header: Vec<String> = ["rank", "iteration", "setup", "y", "metric", "fidelity"]
        .map(String::from)
        .to_vec();
    header.extend((1..=dim).map(|i| format!("z{i}")));
    w.write_record(&header)?;
    for (rank, c) in result.ranked.iter().enumerate() {
        let mut rec = vec![
            (rank + 1).to_string(),
            c.iteration.to_string(),
            c.setup.to_string(),
            format!("{:.9}", c.score.y),
            format!("{:.9}", c.score.metric),
            format!("{:.9}", c.score.fidelity),
        ];
        rec.extend(c.z.iter().map(|v| format!("{v:.9}")));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let best = result.ranked.first();
    print_json(&BoReport {
        out: a.out.clone(),
        evaluated: result.ranked.len(),
        data_best: result.data_best,
        best_y: result.best_y(),
        best_setup: best.map(|c| c.setup.to_string()),
        best_fidelity: best.map(|c| c.score.fidelity),
        empty_batches: result.empty_batches,
    })
}
