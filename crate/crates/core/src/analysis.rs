//! Latent-space studies and generated-vs-training comparisons.
//!
//! Every writer emits CSV with a header row or pretty JSON; the column names
//! are part of the public contract and listed next to each writer.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{self, Write as _};
use std::path::Path as FsPath;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::datagen::{label, Labeled};
use crate::entanglement::BIPARTITION_LABELS;
use crate::model::{ModelError, Qovae};
use crate::optics::{run_setup, Device, Path, SimConfig};
use crate::repr::{render_device, Setup};

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("latent vectors are antipodal or zero; slerp is undefined")]
    Antipodal,
    #[error("latent vectors differ in dimension ({0} vs {1})")]
    Dimension(usize, usize),
    #[error("kernel density needs at least two values with nonzero spread")]
    DegenerateBandwidth,
    #[error("need at least {need} items, got {got}")]
    TooFew { need: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

const ANGLE_TOL: f64 = 1e-6;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Spherical interpolation between `z1` and `z2`.
pub fn slerp(z1: &[f64], z2: &[f64], t: f64) -> Result<Vec<f64>, AnalysisError> {
    if z1.len() != z2.len() {
        return Err(AnalysisError::Dimension(z1.len(), z2.len()));
    }
    let (n1, n2) = (norm(z1), norm(z2));
    let lerp = || z1.iter().zip(z2).map(|(a, b)| (1.0 - t) * a + t * b).collect();
    if n1 == 0.0 || n2 == 0.0 {
        if z1 == z2 {
            return Ok(lerp());
        }
        return Err(AnalysisError::Antipodal);
    }
    let cos = (z1.iter().zip(z2).map(|(a, b)| a * b).sum::<f64>() / (n1 * n2)).clamp(-1.0, 1.0);
    let omega = cos.acos();
    if omega < ANGLE_TOL {
        return Ok(lerp());
    }
    if std::f64::consts::PI - omega < ANGLE_TOL {
        return Err(AnalysisError::Antipodal);
    }
    let s = omega.sin();
    let (a, b) = (((1.0 - t) * omega).sin() / s, (t * omega).sin() / s);
    Ok(z1.iter().zip(z2).map(|(x, y)| a * x + b * y).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathPoint {
    pub step: usize,
    pub t: f64,
    pub setup: Setup,
    pub total: Option<f64>,
    pub error: Option<String>,
}

/// Encodes both ends, slerps at `steps` equally spaced points including the
/// endpoints and argmax-decodes each point.
pub fn interpolation_path(
    model: &Qovae,
    from: &Setup,
    to: &Setup,
    steps: usize,
) -> Result<Vec<PathPoint>, AnalysisError> {
    if steps < 2 {
        return Err(AnalysisError::TooFew { need: 2, got: steps });
    }
    let z1 = model.encode_setup(from)?.mu;
    let z2 = model.encode_setup(to)?.mu;
    let sim = model.vocab().sim_config();
    let mut out = Vec::with_capacity(steps);
    for step in 0..steps {
        let t = step as f64 / (steps - 1) as f64;
        let z = slerp(&z1, &z2, t)?;
        let setup = model.decode_argmax(&z)?;
        let (total, error) = match label(&setup, &sim) {
            Ok(l) => (Some(l.total()), None),
            Err(e) => (None, Some(e.to_string())),
        };
        out.push(PathPoint {
            step,
            t,
            setup,
            total,
            error,
        });
    }
    Ok(out)
}

/// Columns: `step,t,setup,S,error`.
pub fn write_path_csv(path: &FsPath, points: &[PathPoint]) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    w.write_record(["step", "t", "setup", "S", "error"]).map_err(csv_io)?;
    for p in points {
        w.write_record([
            p.step.to_string(),
            format!("{:.6}", p.t),
            p.setup.to_string(),
            p.total.map(|s| format!("{s:.6}")).unwrap_or_default(),
            p.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> AnalysisError {
    AnalysisError::Io(io::Error::other(e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistancePair {
    pub i: usize,
    pub j: usize,
    pub distance: f64,
    pub ds: f64,
}

/// `n_pairs` random pairs of rows (drawn with replacement, `i != j` when
/// possible) with their Euclidean latent distance and `|S_i - S_j|`.
pub fn distance_vs_ds<R: Rng + ?Sized>(
    latents: ArrayView2<f64>,
    totals: &[f64],
    n_pairs: usize,
    rng: &mut R,
) -> Result<Vec<DistancePair>, AnalysisError> {
    let n = latents.nrows();
    if n == 0 || totals.len() != n {
        return Err(AnalysisError::TooFew { need: 1, got: n.min(totals.len()) });
    }
    Ok((0..n_pairs)
        .map(|_| {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n);
            while n > 1 && j == i {
                j = rng.random_range(0..n);
            }
            let d = latents
                .row(i)
                .iter()
                .zip(latents.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            DistancePair {
                i,
                j,
                distance: d,
                ds: (totals[i] - totals[j]).abs(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_ds: f64,
}

/// Equal-width distance bins with the mean `|dS|` in each.
pub fn bin_pairs(pairs: &[DistancePair], bins: usize) -> Vec<Bin> {
    if pairs.is_empty() || bins == 0 {
        return Vec::new();
    }
    let max = pairs.iter().map(|p| p.distance).fold(0.0, f64::max);
    let width = if max > 0.0 { max / bins as f64 } else { 1.0 };
    let mut sums = vec![(0usize, 0.0); bins];
    for p in pairs {
        let b = ((p.distance / width) as usize).min(bins - 1);
        sums[b].0 += 1;
        sums[b].1 += p.ds;
    }
    sums.iter()
        .enumerate()
        .map(|(b, &(c, s))| Bin {
            lo: b as f64 * width,
            hi: (b + 1) as f64 * width,
            count: c,
            mean_ds: if c > 0 { s / c as f64 } else { f64::NAN },
        })
        .collect()
}

/// Columns: `i,j,distance,abs_dS`; bins go to a second file with
/// `bin_lo,bin_hi,count,mean_abs_dS`.
pub fn write_distance_csv(
    pairs_path: &FsPath,
    bins_path: &FsPath,
    pairs: &[DistancePair],
    bins: &[Bin],
) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_path(pairs_path).map_err(csv_io)?;
    w.write_record(["i", "j", "distance", "abs_dS"]).map_err(csv_io)?;
    for p in pairs {
        w.write_record([
            p.i.to_string(),
            p.j.to_string(),
            format!("{:.9}", p.distance),
            format!("{:.9}", p.ds),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(bins_path).map_err(csv_io)?;
    w.write_record(["bin_lo", "bin_hi", "count", "mean_abs_dS"]).map_err(csv_io)?;
    for b in bins {
        w.write_record([
            format!("{:.9}", b.lo),
            format!("{:.9}", b.hi),
            b.count.to_string(),
            format!("{:.9}", b.mean_ds),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// Spearman rank correlation and its two-sided p-value from the
/// t-distribution with `n - 2` degrees of freedom.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<(f64, f64), AnalysisError> {
    let n = x.len().min(y.len());
    if n < 3 {
        return Err(AnalysisError::TooFew { need: 3, got: n });
    }
    let rx = ranks(&x[..n]);
    let ry = ranks(&y[..n]);
    let r = pearson(&rx, &ry);
    if !r.is_finite() {
        return Ok((0.0, 1.0));
    }
    if r.abs() >= 1.0 {
        return Ok((r.signum(), 0.0));
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    Ok((r, 2.0 * (1.0 - dist.cdf(t.abs()))))
}

/// Average ranks (1-based) with ties sharing the mean rank.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// How devices are grouped into functional classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Grouping {
    /// Device kind only.
    #[default]
    Kind,
    /// Device kind, with a separate class when an empty path is involved.
    KindEmptyPath,
}

pub const DEVICE_KINDS: [&str; 5] = ["BS", "DownConv", "Ref", "DP", "OAMHolo"];

pub fn device_kind(d: &Device) -> &'static str {
    match d {
        Device::BeamSplitter(..) => "BS",
        Device::DownConv(..) => "DownConv",
        Device::Mirror(_) => "Ref",
        Device::DovePrism(_) => "DP",
        Device::Hologram(..) => "OAMHolo",
    }
}

pub fn functional_group(d: &Device, grouping: Grouping) -> String {
    let kind = device_kind(d);
    match grouping {
        Grouping::Kind => kind.to_string(),
        Grouping::KindEmptyPath => {
            if d.paths().iter().any(|p| matches!(p, Path::E | Path::F)) {
                format!("{kind}-empty")
            } else {
                kind.to_string()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatentRow {
    pub z: Vec<f64>,
    pub total: f64,
    pub length: usize,
    pub last_device: String,
    pub second_last_device: String,
    pub functional_group: String,
}

/// One row per setup: latent mean (optionally restricted to two axes),
/// S, length, last two devices and the last device's group.
pub fn latent_map(
    model: &Qovae,
    records: &[Labeled],
    axes: Option<(usize, usize)>,
    grouping: Grouping,
) -> Result<Vec<LatentRow>, AnalysisError> {
    let setups: Vec<Setup> = records.iter().map(|r| r.setup.clone()).collect();
    let z = model.encode_setups(&setups)?;
    if let Some((a, b)) = axes {
        let l = model.latent_dim();
        if a >= l || b >= l {
            return Err(AnalysisError::Dimension(a.max(b) + 1, l));
        }
    }
    Ok(records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let row = z.row(i);
            let zs = match axes {
                Some((a, b)) => vec![row[a], row[b]],
                None => row.to_vec(),
            };
            let devs = r.setup.devices();
            let nth_last = |k: usize| {
                devs.len()
                    .checked_sub(k)
                    .map(|i| render_device(&devs[i]))
                    .unwrap_or_default()
            };
            LatentRow {
                z: zs,
                total: r.total(),
                length: devs.len(),
                last_device: nth_last(1),
                second_last_device: nth_last(2),
                functional_group: devs
                    .last()
                    .map(|d| functional_group(d, grouping))
                    .unwrap_or_default(),
            }
        })
        .collect())
}

/// Columns: `z1..zk,S,length,last_device,second_last_device,functional_group`.
pub fn write_latent_map(path: &FsPath, rows: &[LatentRow]) -> Result<(), AnalysisError> {
    let dim = rows.first().map(|r| r.z.len()).unwrap_or(0);
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    let mut header: Vec<String> = (1..=dim).map(|i| format!("z{i}")).collect();
    header.extend(
        ["S", "length", "last_device", "second_last_device", "functional_group"]
            .map(String::from),
    );
    w.write_record(&header).map_err(csv_io)?;
    for r in rows {
        let mut rec: Vec<String> = r.z.iter().map(|v| format!("{v:.9}")).collect();
        rec.push(format!("{:.6}", r.total));
        rec.push(r.length.to_string());
        rec.push(r.last_device.clone());
        rec.push(r.second_last_device.clone());
        rec.push(r.functional_group.clone());
        w.write_record(&rec).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// Scott's rule bandwidth `sd * n^(-1/5)`.
pub fn scott_bandwidth(values: &[f64]) -> Result<f64, AnalysisError> {
    let n = values.len();
    if n < 2 {
        return Err(AnalysisError::DegenerateBandwidth);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let h = var.sqrt() * (n as f64).powf(-0.2);
    if h > 0.0 && h.is_finite() {
        Ok(h)
    } else {
        Err(AnalysisError::DegenerateBandwidth)
    }
}

/// Gaussian kernel density estimate evaluated on `grid`.
pub fn kde(values: &[f64], grid: &[f64]) -> Result<Vec<f64>, AnalysisError> {
    let h = scott_bandwidth(values)?;
    let c = 1.0 / (values.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    Ok(grid
        .iter()
        .map(|&x| {
            c * values
                .iter()
                .map(|&v| (-0.5 * ((x - v) / h).powi(2)).exp())
                .sum::<f64>()
        })
        .collect())
}

/// Most frequent S after rounding to 6 decimals; ties go to the smaller.
pub fn mode_s(values: &[f64]) -> Option<f64> {
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for v in values {
        *counts.entry((v * 1e6).round() as i64).or_default() += 1;
    }
    let mut best: Option<(i64, usize)> = None;
    for (&k, &c) in &counts {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((k, c));
        }
    }
    best.map(|(k, _)| k as f64 / 1e6)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SStats {
    pub n: usize,
    pub mode_s: Option<f64>,
    pub mean_s: f64,
    pub sd_s: f64,
    pub pct_entangled: f64,
}

pub fn s_stats(records: &[Labeled]) -> SStats {
    let s: Vec<f64> = records.iter().map(|r| r.total()).collect();
    let n = s.len();
    let mean = if n > 0 { s.iter().sum::<f64>() / n as f64 } else { f64::NAN };
    let sd = if n > 1 {
        (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        f64::NAN
    };
    let ent = records.iter().filter(|r| r.is_entangled()).count();
    SStats {
        n,
        mode_s: mode_s(&s),
        mean_s: mean,
        sd_s: sd,
        pct_entangled: if n > 0 { 100.0 * ent as f64 / n as f64 } else { f64::NAN },
    }
}

/// Percent of distinct setups among `generated`, and percent of generated
/// setups absent from `training`.
pub fn uniqueness_novelty(generated: &[Setup], training: &[Setup]) -> (f64, f64) {
    if generated.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = generated.len() as f64;
    let distinct: HashSet<&Setup> = generated.iter().collect();
    let train: HashSet<&Setup> = training.iter().collect();
    let novel = generated.iter().filter(|s| !train.contains(s)).count();
    (
        100.0 * distinct.len() as f64 / n,
        100.0 * novel as f64 / n,
    )
}

const KDE_POINTS: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KdeCurve {
    pub label: String,
    pub grid: Vec<f64>,
    pub train: Option<Vec<f64>>,
    pub generated: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub train: SStats,
    pub generated: SStats,
    pub uniqueness_pct: f64,
    pub novelty_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionReport {
    pub kde: Vec<KdeCurve>,
    /// (bipartition, rank) -> (train count, generated count)
    pub rank_hist: BTreeMap<(usize, u32), (usize, usize)>,
    /// (device kind, per-setup count) -> (train, generated)
    pub device_counts: BTreeMap<(&'static str, usize), (usize, usize)>,
    /// OAM 0/1 ket -> (train states containing it, generated states containing it)
    pub ket_frequency: BTreeMap<[i32; 4], (usize, usize)>,
    pub summary: Summary,
}

fn ket_presence(records: &[Labeled], sim: &SimConfig) -> HashMap<[i32; 4], usize> {
    let mut out = HashMap::new();
    for r in records {
        if let Ok(state) = run_setup(&r.setup, sim) {
            for (oams, _) in state.detector_terms() {
                if oams.iter().all(|&l| l == 0 || l == 1) {
                    *out.entry(oams).or_default() += 1;
                }
            }
        }
    }
    out
}

fn kde_curve(label: &str, train: &[f64], generated: &[f64]) -> KdeCurve {
    let max = train
        .iter()
        .chain(generated)
        .copied()
        .fold(0.0_f64, f64::max);
    let hi = max * 1.1 + 0.5;
    let lo = -0.5;
    let grid: Vec<f64> = (0..KDE_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (KDE_POINTS - 1) as f64)
        .collect();
    KdeCurve {
        label: label.to_string(),
        train: kde(train, &grid).ok(),
        generated: kde(generated, &grid).ok(),
        grid,
    }
}

/// Statistics comparing generated records against training records.
pub fn compare_distributions(
    generated: &[Labeled],
    training: &[Labeled],
    sim: &SimConfig,
) -> DistributionReport {
    let mut kde = Vec::new();
    for (k, label) in BIPARTITION_LABELS.iter().enumerate() {
        let t: Vec<f64> = training.iter().map(|r| r.summary.entropies[k]).collect();
        let g: Vec<f64> = generated.iter().map(|r| r.summary.entropies[k]).collect();
        kde.push(kde_curve(label, &t, &g));
    }
    let t: Vec<f64> = training.iter().map(|r| r.total()).collect();
    let g: Vec<f64> = generated.iter().map(|r| r.total()).collect();
    kde.push(kde_curve("S", &t, &g));

    let mut rank_hist = BTreeMap::new();
    let mut device_counts = BTreeMap::new();
    for (set, is_gen) in [(training, false), (generated, true)] {
        for r in set {
            for (k, &rank) in r.summary.ranks.iter().enumerate() {
                let e: &mut (usize, usize) = rank_hist.entry((k, rank)).or_default();
                if is_gen { e.1 += 1 } else { e.0 += 1 }
            }
            for kind in DEVICE_KINDS {
                let c = r.setup.iter().filter(|d| device_kind(d) == kind).count();
                let e: &mut (usize, usize) = device_counts.entry((kind, c)).or_default();
                if is_gen { e.1 += 1 } else { e.0 += 1 }
            }
        }
    }
    let kt = ket_presence(training, sim);
    let kg = ket_presence(generated, sim);
    let mut ket_frequency = BTreeMap::new();
    for bits in 0..16u32 {
        let ket = [0, 1, 2, 3].map(|i| ((bits >> (3 - i)) & 1) as i32);
        ket_frequency.insert(
            ket,
            (
                kt.get(&ket).copied().unwrap_or(0),
                kg.get(&ket).copied().unwrap_or(0),
            ),
        );
    }
    let gs: Vec<Setup> = generated.iter().map(|r| r.setup.clone()).collect();
    let ts: Vec<Setup> = training.iter().map(|r| r.setup.clone()).collect();
    let (u, nv) = uniqueness_novelty(&gs, &ts);
    DistributionReport {
        kde,
        rank_hist,
        device_counts,
        ket_frequency,
        summary: Summary {
            train: s_stats(training),
            generated: s_stats(generated),
            uniqueness_pct: u,
            novelty_pct: nv,
        },
    }
}

pub const ENTROPY_KDE_FILE: &str = "entropy_kde.csv";
pub const RANK_HIST_FILE: &str = "schmidt_rank_hist.csv";
pub const DEVICE_COUNTS_FILE: &str = "device_counts.csv";
pub const KET_FREQUENCY_FILE: &str = "ket_frequency.csv";
pub const SUMMARY_FILE: &str = "summary.json";

fn fmt_opt(v: Option<&f64>) -> String {
    v.map(|x| format!("{x:.9}")).unwrap_or_default()
}

impl DistributionReport {
    /// Writes:
    /// - `entropy_kde.csv`: `bipartition,x,train_density,gen_density`
    ///   (bipartition is `a|bcd` ... `ad|bc` or `S`; empty density means the
    ///   set had no spread)
    /// - `schmidt_rank_hist.csv`: `bipartition,rank,train_count,gen_count`
    /// - `device_counts.csv`: `device_kind,count_per_setup,train_setups,gen_setups`
    /// - `ket_frequency.csv`: `ket,train_states,train_fraction,gen_states,gen_fraction`
    /// - `summary.json`
    pub fn write_dir(&self, dir: &FsPath) -> Result<(), AnalysisError> {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join(ENTROPY_KDE_FILE)).map_err(csv_io)?;
        w.write_record(["bipartition", "x", "train_density", "gen_density"])
            .map_err(csv_io)?;
        for c in &self.kde {
            for (i, x) in c.grid.iter().enumerate() {
                w.write_record([
                    c.label.clone(),
                    format!("{x:.6}"),
                    fmt_opt(c.train.as_ref().map(|v| &v[i])),
                    fmt_opt(c.generated.as_ref().map(|v| &v[i])),
                ])
                .map_err(csv_io)?;
            }
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join(RANK_HIST_FILE)).map_err(csv_io)?;
        w.write_record(["bipartition", "rank", "train_count", "gen_count"])
            .map_err(csv_io)?;
        for (&(k, rank), &(t, g)) in &self.rank_hist {
            w.write_record([
                BIPARTITION_LABELS[k].to_string(),
                rank.to_string(),
                t.to_string(),
                g.to_string(),
            ])
            .map_err(csv_io)?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join(DEVICE_COUNTS_FILE)).map_err(csv_io)?;
        w.write_record(["device_kind", "count_per_setup", "train_setups", "gen_setups"])
            .map_err(csv_io)?;
        for (&(kind, c), &(t, g)) in &self.device_counts {
            w.write_record([kind.to_string(), c.to_string(), t.to_string(), g.to_string()])
                .map_err(csv_io)?;
        }
        w.flush()?;

        let nt = self.summary.train.n.max(1) as f64;
        let ng = self.summary.generated.n.max(1) as f64;
        let mut w = csv::Writer::from_path(dir.join(KET_FREQUENCY_FILE)).map_err(csv_io)?;
        w.write_record(["ket", "train_states", "train_fraction", "gen_states", "gen_fraction"])
            .map_err(csv_io)?;
        for (ket, &(t, g)) in &self.ket_frequency {
            w.write_record([
                format!("|{},{},{},{}>", ket[0], ket[1], ket[2], ket[3]),
                t.to_string(),
                format!("{:.6}", t as f64 / nt),
                g.to_string(),
                format!("{:.6}", g as f64 / ng),
            ])
            .map_err(csv_io)?;
        }
        w.flush()?;

        let mut f = fs::File::create(dir.join(SUMMARY_FILE))?;
        serde_json::to_writer_pretty(&mut f, &self.summary)?;
        writeln!(f)?;
        Ok(())
    }
}

/// Lloyd's k-means with k-means++ seeding, best of `restarts` by inertia.
pub fn kmeans(points: ArrayView2<f64>, k: usize, restarts: usize, seed: u64) -> Vec<usize> {
    let n = points.nrows();
    if n == 0 || k == 0 {
        return vec![0; n];
    }
    let k = k.min(n);
    let dist2 = |i: usize, c: &Array2<f64>, j: usize| -> f64 {
        points
            .row(i)
            .iter()
            .zip(c.row(j).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..restarts.max(1) {
        let mut centers = Array2::zeros((k, points.ncols()));
        centers.row_mut(0).assign(&points.row(rng.random_range(0..n)));
        let mut d: Vec<f64> = (0..n).map(|i| dist2(i, &centers, 0)).collect();
        for c in 1..k {
            let total: f64 = d.iter().sum();
            let pick = if total > 0.0 {
                let mut u = rng.random::<f64>() * total;
                let mut pick = n - 1;
                for (i, &di) in d.iter().enumerate() {
                    if u < di {
                        pick = i;
                        break;
                    }
                    u -= di;
                }
                pick
            } else {
                rng.random_range(0..n)
            };
            centers.row_mut(c).assign(&points.row(pick));
            for (i, di) in d.iter_mut().enumerate() {
                *di = di.min(dist2(i, &centers, c));
            }
        }
        let mut labels = vec![0; n];
        for _ in 0..300 {
            let mut changed = false;
            for (i, label) in labels.iter_mut().enumerate() {
                let c = (0..k)
                    .min_by(|&a, &b| dist2(i, &centers, a).total_cmp(&dist2(i, &centers, b)))
                    .expect("k > 0");
                if c != *label {
                    *label = c;
                    changed = true;
                }
            }
            let mut sums = Array2::<f64>::zeros(centers.dim());
            let mut counts = vec![0usize; k];
            for (i, &c) in labels.iter().enumerate() {
                sums.row_mut(c).scaled_add(1.0, &points.row(i));
                counts[c] += 1;
            }
            for c in 0..k {
                if counts[c] > 0 {
                    centers.row_mut(c).assign(&(&sums.row(c) / counts[c] as f64));
                }
            }
            if !changed {
                break;
            }
        }
        let inertia: f64 = labels.iter().enumerate().map(|(i, &c)| dist2(i, &centers, c)).sum();
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, labels));
        }
    }
    best.expect("at least one restart").1
}

/// Fraction of points whose class is the majority class of their cluster.
pub fn purity<C: Eq + std::hash::Hash + Clone>(clusters: &[usize], classes: &[C]) -> f64 {
    let mut table: HashMap<usize, HashMap<C, usize>> = HashMap::new();
    for (c, k) in clusters.iter().zip(classes) {
        *table.entry(*c).or_default().entry(k.clone()).or_default() += 1;
    }
    let hits: usize = table.values().map(|m| m.values().max().copied().unwrap_or(0)).sum();
    hits as f64 / clusters.len().max(1) as f64
}

/// Expected purity when class labels are shuffled over the same clusters.
pub fn chance_purity<C: Eq + std::hash::Hash + Clone>(
    clusters: &[usize],
    classes: &[C],
    permutations: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = classes.to_vec();
    let mut acc = 0.0;
    for _ in 0..permutations.max(1) {
        shuffled.shuffle(&mut rng);
        acc += purity(clusters, &shuffled);
    }
    acc / permutations.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn slerp_identities() {
        let a = [1.0, 0.0];
        let b = [0.0, 1.0];
        assert_eq!(slerp(&a, &b, 0.0).unwrap(), a.to_vec());
        let end = slerp(&a, &b, 1.0).unwrap();
        assert_abs_diff_eq!(end[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(end[1], 1.0, epsilon = 1e-15);
        let mid = slerp(&a, &b, 0.5).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(mid[0], h, epsilon = 1e-15);
        assert_abs_diff_eq!(mid[1], h, epsilon = 1e-15);
        assert!(matches!(slerp(&a, &[-1.0, 0.0], 0.3), Err(AnalysisError::Antipodal)));
        assert_eq!(slerp(&a, &a, 0.4).unwrap(), a.to_vec());
    }

    #[test]
    fn kde_of_standard_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v: Vec<f64> = (0..10_000)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let grid: Vec<f64> = (0..=800).map(|i| -8.0 + i as f64 * 0.02).collect();
        let d = kde(&v, &grid).unwrap();
        assert_abs_diff_eq!(d[400], 0.3989, epsilon = 0.02);
        let integral: f64 = d.iter().sum::<f64>() * 0.02;
        assert_abs_diff_eq!(integral, 1.0, epsilon = 1e-3);
        assert!(matches!(kde(&[1.0, 1.0], &grid), Err(AnalysisError::DegenerateBandwidth)));
        assert!(kde(&[1.0], &grid).is_err());
    }

    #[test]
    fn kde_symmetric() {
        let v = [-2.0, -0.5, 0.5, 2.0];
        let d = kde(&v, &[-1.3, 1.3]).unwrap();
        assert_abs_diff_eq!(d[0], d[1], epsilon = 1e-15);
    }

    #[test]
    fn mode_rounding_and_ties() {
        assert_eq!(mode_s(&[1.0, 2.0, 2.0000000001, 1.0]), Some(1.0));
        assert_eq!(mode_s(&[3.0, 2.5, 3.0]), Some(3.0));
        assert_eq!(mode_s(&[]), None);
    }

    #[test]
    fn spearman_known_values() {
        let (r, p) = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[5.0, 6.0, 7.0, 8.0, 7.0]).unwrap();
        // ranks: x 1..5, y 1,2,3.5,5,3.5
        assert_abs_diff_eq!(r, 0.8207826816681233, epsilon = 1e-12);
        assert!(p > 0.05 && p < 0.2);
        assert_eq!(ranks(&[2.0, 1.0, 2.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn uniqueness_and_novelty() {
        let s = Setup::new(vec![Device::Mirror(Path::A)]);
        let t = Setup::new(vec![Device::Mirror(Path::B)]);
        let (u, n) = uniqueness_novelty(&[s.clone(), s.clone(), s.clone()], &[t.clone()]);
        assert_abs_diff_eq!(u, 100.0 / 3.0, epsilon = 1e-12);
        assert_eq!(n, 100.0);
        let (_, n) = uniqueness_novelty(&[t.clone()], &[t]);
        assert_eq!(n, 0.0);
    }

    #[test]
    fn kmeans_separates_blobs() {
        let pts = array![[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [5.0, 5.0], [5.1, 5.0], [5.0, 5.2]];
        let labels = kmeans(pts.view(), 2, 3, 0);
        assert_eq!(labels[0], labels[1]);
        assert_eq!(labels[0], labels[2]);
        assert_ne!(labels[0], labels[3]);
        let classes = [1, 1, 1, 2, 2, 2];
        assert_eq!(purity(&labels, &classes), 1.0);
        assert!(chance_purity(&labels, &classes, 50, 1) < 1.0);
    }

    #[test]
    fn distance_pairs_and_bins() {
        let z = array![[0.0, 0.0], [3.0, 4.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pairs = distance_vs_ds(z.view(), &[1.0, 3.5], 7, &mut rng).unwrap();
        assert_eq!(pairs.len(), 7);
        assert!(pairs.iter().all(|p| p.distance == 5.0 && p.ds == 2.5));
        let z1 = array![[1.0, 1.0]];
        let same = distance_vs_ds(z1.view(), &[2.0], 1, &mut rng).unwrap();
        assert_eq!((same[0].distance, same[0].ds), (0.0, 0.0));
        let bins = bin_pairs(&pairs, 4);
        assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), 7);
    }

    #[test]
    fn identical_sets_give_identical_statistics() {
        let v = crate::repr::Vocabulary::default();
        let sim = v.sim_config();
        let recs: Vec<Labeled> = [
            "BS(b,c) OAMHolo(b,1) DownConv(c,d) Ref(c) OAMHolo(a,1)",
            "Ref(a) Ref(b) Ref(c)",
            "DownConv(a,b) BS(a,c) OAMHolo(d,2)",
        ]
        .iter()
        .map(|s| label(&v.parse_setup(s).unwrap(), &sim).unwrap())
        .collect();
        let rep = compare_distributions(&recs, &recs, &sim);
        assert_eq!(rep.summary.train, rep.summary.generated);
        for c in &rep.kde {
            assert_eq!(c.train, c.generated);
        }
        assert!(rep.rank_hist.values().all(|(a, b)| a == b));
        assert!(rep.device_counts.values().all(|(a, b)| a == b));
        for k in 0..7 {
            let total: usize = rep
                .rank_hist
                .iter()
                .filter(|((b, _), _)| *b == k)
                .map(|(_, (t, _))| t)
                .sum();
            assert_eq!(total, 3);
        }
        let dir = tempfile::tempdir().unwrap();
        rep.write_dir(dir.path()).unwrap();
        for f in [ENTROPY_KDE_FILE, RANK_HIST_FILE, DEVICE_COUNTS_FILE, KET_FREQUENCY_FILE, SUMMARY_FILE] {
            assert!(dir.path().join(f).exists());
        }
    }
}
