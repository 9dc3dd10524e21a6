//! Gaussian-process Bayesian optimization over decoder latents.

use std::collections::BTreeMap;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::datagen::label;
use crate::model::{ModelError, Qovae};
use crate::optics::{run_setup, SimConfig};
use crate::repr::Setup;

#[derive(Debug, thiserror::Error)]
pub enum BoError {
    #[error("target line {line}: {reason}")]
    Target { line: usize, reason: String },
    #[error("target state is empty or has zero norm")]
    EmptyTarget,
    #[error("need at least {need} points, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("kernel matrix is not positive definite even with jitter {0:e}")]
    NotPositiveDefinite(f64),
    #[error("invalid objective: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Normalized target state over detector OAM quadruples.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetState {
    terms: BTreeMap<[i32; 4], Complex64>,
}

impl TargetState {
    pub fn new(terms: impl IntoIterator<Item = ([i32; 4], Complex64)>) -> Result<Self, BoError> {
        let mut map: BTreeMap<[i32; 4], Complex64> = BTreeMap::new();
        for (k, a) in terms {
            *map.entry(k).or_default() += a;
        }
        map.retain(|_, a| a.norm_sqr() > 0.0);
        let norm = map.values().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if map.is_empty() || !norm.is_finite() {
            return Err(BoError::EmptyTarget);
        }
        for a in map.values_mut() {
            *a /= norm;
        }
        Ok(TargetState { terms: map })
    }

    /// (|0,0,0,0> + |1,1,1,1>) / sqrt 2.
    pub fn ghz() -> Self {
        let one = Complex64::new(1.0, 0.0);
        Self::new([([0; 4], one), ([1; 4], one)]).expect("nonzero")
    }

    pub fn terms(&self) -> &BTreeMap<[i32; 4], Complex64> {
        &self.terms
    }

    /// Parses lines `re im i j k l`; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, BoError> {
        let mut terms = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| BoError::Target { line: n + 1, reason };
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 6 {
                return Err(err(format!("expected 6 fields, found {}", f.len())));
            }
            let re: f64 = f[0].parse().map_err(|_| err(format!("bad real part '{}'", f[0])))?;
            let im: f64 = f[1].parse().map_err(|_| err(format!("bad imaginary part '{}'", f[1])))?;
            let mut ket = [0i32; 4];
            for (i, s) in f[2..].iter().enumerate() {
                ket[i] = s.parse().map_err(|_| err(format!("bad OAM value '{s}'")))?;
            }
            terms.push((ket, Complex64::new(re, im)));
        }
        Self::new(terms)
    }

    pub fn render(&self) -> String {
        self.terms
            .iter()
            .map(|(k, a)| format!("{} {} {} {} {} {}\n", a.re, a.im, k[0], k[1], k[2], k[3]))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// Complex overlap |<target|state>|^2.
    #[default]
    Fidelity,
    /// (sum_i sqrt(p_i q_i))^2 over basis probabilities.
    ProbFidelity,
    /// Negated Euclidean distance between basis probabilities.
    NegMse,
    /// Negated KL(p_target || q).
    NegKl,
    /// Total entanglement S (ignores the target state).
    Entanglement,
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fidelity" => Ok(Metric::Fidelity),
            "prob-fidelity" => Ok(Metric::ProbFidelity),
            "neg-mse" => Ok(Metric::NegMse),
            "neg-kl" => Ok(Metric::NegKl),
            "entanglement" => Ok(Metric::Entanglement),
            _ => Err(format!(
                "unknown metric '{s}' (fidelity, prob-fidelity, neg-mse, neg-kl, entanglement)"
            )),
        }
    }
}

const KL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TargetObjective {
    pub target: TargetState,
    pub lambda: f64,
    pub max_len: usize,
    pub metric: Metric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Score {
    /// Penalized objective.
    pub y: f64,
    /// Unpenalized metric value.
    pub metric: f64,
    /// Complex fidelity with the target, reported for every metric.
    pub fidelity: f64,
}

impl TargetObjective {
    pub fn new(target: TargetState, lambda: f64, max_len: usize, metric: Metric) -> Result<Self, BoError> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(BoError::Invalid(format!("lambda {lambda} must be >= 0")));
        }
        if max_len == 0 {
            return Err(BoError::Invalid("max length must be positive".into()));
        }
        Ok(TargetObjective {
            target,
            lambda,
            max_len,
            metric,
        })
    }

    fn penalty(&self, len: usize) -> f64 {
        self.lambda * len as f64 / (4.0 * self.max_len as f64)
    }

    /// Scores a normalized state given as detector terms (empty when
    /// post-selection failed).
    pub fn score_terms(&self, terms: &[([i32; 4], Complex64)], len: usize, entropy: f64) -> Score {
        let state: BTreeMap<[i32; 4], Complex64> = terms.iter().copied().collect();
        let overlap: Complex64 = self
            .target
            .terms
            .iter()
            .filter_map(|(k, a)| state.get(k).map(|b| a.conj() * b))
            .sum();
        let fidelity = overlap.norm_sqr();
        let p = |k: &[i32; 4]| self.target.terms.get(k).map_or(0.0, |a| a.norm_sqr());
        let q = |k: &[i32; 4]| state.get(k).map_or(0.0, |a| a.norm_sqr());
        let keys: std::collections::BTreeSet<&[i32; 4]> =
            self.target.terms.keys().chain(state.keys()).collect();
        let metric = match self.metric {
            Metric::Fidelity => fidelity,
            Metric::ProbFidelity => keys.iter().map(|k| (p(k) * q(k)).sqrt()).sum::<f64>().powi(2),
            Metric::NegMse => -keys.iter().map(|k| (p(k) - q(k)).powi(2)).sum::<f64>().sqrt(),
            Metric::NegKl => -self
                .target
                .terms
                .keys()
                .map(|k| p(k) * (p(k) / q(k).max(KL_FLOOR)).ln())
                .sum::<f64>(),
            Metric::Entanglement => entropy,
        };
        Score {
            y: metric - self.penalty(len),
            metric,
            fidelity,
        }
    }

    pub fn score(&self, setup: &Setup, sim: &SimConfig) -> Score {
        let terms = run_setup(setup, sim)
            .map(|s| s.detector_terms())
            .unwrap_or_default();
        let entropy = if self.metric == Metric::Entanglement {
            label(setup, sim).map(|l| l.total()).unwrap_or(0.0)
        } else {
            0.0
        };
        self.score_terms(&terms, setup.len(), entropy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpOptions {
    pub noise: f64,
    pub max_points: usize,
    pub seed: u64,
}

impl Default for GpOptions {
    fn default() -> Self {
        GpOptions {
            noise: 1e-4,
            max_points: 2000,
            seed: 0,
        }
    }
}

pub const LENGTH_SCALES: usize = 13;
pub const SIGNAL_VARIANCES: [f64; 3] = [0.1, 1.0, 10.0];
const JITTERS: [f64; 6] = [0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2];

/// Exact GP regression with an RBF kernel on centered targets.
#[derive(Debug, Clone)]
pub struct GpModel {
    z: Vec<Vec<f64>>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    pub signal_var: f64,
    pub length_scale: f64,
    pub noise: f64,
    pub y_mean: f64,
    pub log_marginal_likelihood: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kernel_matrix(z: &[Vec<f64>], sf2: f64, ell: f64, diag: f64) -> DMatrix<f64> {
    let n = z.len();
    DMatrix::from_fn(n, n, |i, j| {
        let k = sf2 * (-sq_dist(&z[i], &z[j]) / (2.0 * ell * ell)).exp();
        if i == j { k + diag } else { k }
    })
}

fn factor(z: &[Vec<f64>], sf2: f64, ell: f64, noise: f64) -> Result<(Cholesky<f64, Dyn>, f64), BoError> {
    for jitter in JITTERS {
        if let Some(c) = Cholesky::new(kernel_matrix(z, sf2, ell, noise + jitter)) {
            return Ok((c, jitter));
        }
    }
    Err(BoError::NotPositiveDefinite(JITTERS[JITTERS.len() - 1]))
}

/// Log-spaced length scales from 0.1 to 10.
pub fn length_scale_grid() -> Vec<f64> {
    (0..LENGTH_SCALES)
        .map(|i| 10f64.powf(-1.0 + 2.0 * i as f64 / (LENGTH_SCALES - 1) as f64))
        .collect()
}

/// Fits hyperparameters by grid search on the log marginal likelihood.
pub fn gp_fit(z: ArrayView2<f64>, y: &[f64], opts: &GpOptions) -> Result<GpModel, BoError> {
    let n = z.nrows();
    if n < 2 || y.len() != n {
        return Err(BoError::TooFew { need: 2, got: n.min(y.len()) });
    }
    let keep: Vec<usize> = if n > opts.max_points {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let best = (0..n).max_by(|&a, &b| y[a].total_cmp(&y[b])).expect("n > 0");
        let mut idx: Vec<usize> = sample(&mut rng, n, opts.max_points).into_vec();
        if !idx.contains(&best) {
            idx[0] = best;
        }
        idx.sort_unstable();
        idx
    } else {
        (0..n).collect()
    };
    let pts: Vec<Vec<f64>> = keep.iter().map(|&i| z.row(i).to_vec()).collect();
    let ys: Vec<f64> = keep.iter().map(|&i| y[i]).collect();
    let y_mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let yc = DVector::from_iterator(ys.len(), ys.iter().map(|v| v - y_mean));
    let m = ys.len() as f64;
    let mut best: Option<GpModel> = None;
    let mut last_err = None;
    for ell in length_scale_grid() {
        for sf2 in SIGNAL_VARIANCES {
            let (chol, _) = match factor(&pts, sf2, ell, opts.noise) {
                Ok(c) => c,
                Err(e) => {
                    last_err = Some(e);
                    continue;
                }
            };
            let alpha = chol.solve(&yc);
            let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
            let lml = -0.5 * yc.dot(&alpha) - logdet - 0.5 * m * (2.0 * std::f64::consts::PI).ln();
            if best.as_ref().is_none_or(|b| lml > b.log_marginal_likelihood) {
                best = Some(GpModel {
                    z: pts.clone(),
                    chol,
                    alpha,
                    signal_var: sf2,
                    length_scale: ell,
                    noise: opts.noise,
                    y_mean,
                    log_marginal_likelihood: lml,
                });
            }
        }
    }
    best.ok_or_else(|| last_err.expect("grid is non-empty"))
}

/// Fits with fixed hyperparameters.
pub fn gp_fit_fixed(
    z: ArrayView2<f64>,
    y: &[f64],
    signal_var: f64,
    length_scale: f64,
    noise: f64,
) -> Result<GpModel, BoError> {
    let n = z.nrows();
    if n < 2 || y.len() != n {
        return Err(BoError::TooFew { need: 2, got: n.min(y.len()) });
    }
    let pts: Vec<Vec<f64>> = (0..n).map(|i| z.row(i).to_vec()).collect();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let (chol, _) = factor(&pts, signal_var, length_scale, noise)?;
    let alpha = chol.solve(&yc);
    let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    let lml = -0.5 * yc.dot(&alpha) - logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    Ok(GpModel {
        z: pts,
        chol,
        alpha,
        signal_var,
        length_scale,
        noise,
        y_mean,
        log_marginal_likelihood: lml,
    })
}

impl GpModel {
    /// Posterior mean and latent-function variance at `x`.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let ell2 = 2.0 * self.length_scale * self.length_scale;
        let k = DVector::from_iterator(
            self.z.len(),
            self.z.iter().map(|p| self.signal_var * (-sq_dist(p, x) / ell2).exp()),
        );
        let mean = k.dot(&self.alpha) + self.y_mean;
        let v = self
            .chol
            .l_dirty()
            .lower_triangle()
            .solve_lower_triangular(&k)
            .expect("triangular factor is nonsingular");
        let var = (self.signal_var - v.dot(&v)).max(0.0);
        (mean, var)
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

/// EI for maximization; zero when the predictive spread vanishes.
pub fn expected_improvement(mean: f64, var: f64, best: f64) -> f64 {
    let sd = var.max(0.0).sqrt();
    if sd < 1e-12 {
        return 0.0;
    }
    let n = Normal::standard();
    let u = (mean - best) / sd;
    ((mean - best) * n.cdf(u) + sd * n.pdf(u)).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoOptions {
    pub iterations: usize,
    pub batch: usize,
    pub starts: usize,
    pub seed: u64,
    pub gp: GpOptions,
}

impl Default for BoOptions {
    fn default() -> Self {
        BoOptions {
            iterations: 5,
            batch: 10,
            starts: 256,
            seed: 0,
            gp: GpOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub iteration: usize,
    pub z: Vec<f64>,
    pub setup: Setup,
    pub score: Score,
}

/// Axis-aligned search box: data range widened by one standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl LatentBox {
    pub fn around(z: ArrayView2<f64>) -> Self {
        let n = z.nrows().max(1) as f64;
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for col in z.columns() {
            let mean = col.sum() / n;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            let mn = col.iter().copied().fold(f64::INFINITY, f64::min);
            let mx = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            lo.push(mn - sd);
            hi.push(mx + sd);
        }
        LatentBox { lo, hi }
    }

    pub fn diagonal(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| (b - a).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&a, &b)| if b > a { rng.random_range(a..=b) } else { a })
            .collect()
    }

    fn clamp(&self, x: &mut [f64]) {
        for ((v, &a), &b) in x.iter_mut().zip(&self.lo).zip(&self.hi) {
            *v = v.clamp(a, b);
        }
    }
}

/// Coordinate-wise pattern search on EI inside the box.
fn refine(gp: &GpModel, bx: &LatentBox, best_y: f64, start: Vec<f64>) -> (Vec<f64>, f64) {
    let ei = |x: &[f64]| {
        let (m, v) = gp.predict(x);
        expected_improvement(m, v, best_y)
    };
    let mut x = start;
    let mut fx = ei(&x);
    let mut step: Vec<f64> = bx.lo.iter().zip(&bx.hi).map(|(a, b)| 0.1 * (b - a)).collect();
    for _ in 0..30 {
        let mut improved = false;
        for d in 0..x.len() {
            for sign in [1.0, -1.0] {
                let mut y = x.clone();
                y[d] += sign * step[d];
                bx.clamp(&mut y);
                let fy = ei(&y);
                if fy > fx {
                    x = y;
                    fx = fy;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            for s in &mut step {
                *s *= 0.5;
            }
        }
    }
    (x, fx)
}

/// Proposes up to `q` separated points maximizing EI.
pub fn propose_batch<R: Rng + ?Sized>(
    gp: &GpModel,
    bx: &LatentBox,
    best_y: f64,
    q: usize,
    starts: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let pts: Vec<Vec<f64>> = (0..starts.max(1)).map(|_| bx.sample(rng)).collect();
    let mut scored: Vec<(Vec<f64>, f64)> = pts
        .into_par_iter()
        .map(|p| {
            let (m, v) = gp.predict(&p);
            let e = expected_improvement(m, v, best_y);
            (p, e)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    let n_refine = (2 * q).min(scored.len());
    let refined: Vec<(Vec<f64>, f64)> = scored[..n_refine]
        .par_iter()
        .map(|(p, _)| refine(gp, bx, best_y, p.clone()))
        .collect();
    let mut pool: Vec<(Vec<f64>, f64)> = refined.into_iter().chain(scored).collect();
    pool.sort_by(|a, b| b.1.total_cmp(&a.1));
    let min_sep = 0.1 * bx.diagonal();
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(q);
    for (p, _) in pool {
        if out.len() == q {
            break;
        }
        if out.iter().all(|o| sq_dist(o, &p).sqrt() >= min_sep) {
            out.push(p);
        }
    }
    out
}

fn evaluate(
    model: &Qovae,
    objective: &TargetObjective,
    zs: Vec<Vec<f64>>,
    iteration: usize,
) -> Result<Vec<Candidate>, BoError> {
    if zs.is_empty() {
        return Ok(Vec::new());
    }
    let dim = model.latent_dim();
    let flat: Vec<f64> = zs.iter().flatten().copied().collect();
    let z = Array2::from_shape_vec((zs.len(), dim), flat).map_err(|e| BoError::Invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let setups = model.decode_setups(z.view(), crate::model::DecodeMode::Argmax, &mut rng)?;
    let sim = model.vocab().sim_config();
    Ok(zs
        .into_par_iter()
        .zip(setups)
        .map(|(z, setup)| {
            let score = objective.score(&setup, &sim);
            Candidate {
                iteration,
                z,
                setup,
                score,
            }
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct BoResult {
    /// Proposed candidates sorted by objective, best first.
    pub ranked: Vec<Candidate>,
    /// Best objective among the starting data.
    pub data_best: f64,
    pub empty_batches: usize,
}

impl BoResult {
    pub fn best_y(&self) -> f64 {
        self.ranked.first().map_or(f64::NEG_INFINITY, |c| c.score.y)
    }
}

/// Scores the training setups, then runs `iterations` rounds of batched EI.
pub fn bo_loop(
    model: &Qovae,
    dataset: &[Setup],
    objective: &TargetObjective,
    opts: &BoOptions,
) -> Result<BoResult, BoError> {
    if dataset.len() < 2 {
        return Err(BoError::TooFew { need: 2, got: dataset.len() });
    }
    let sim = model.vocab().sim_config();
    let z0 = model.encode_setups(dataset)?;
    let y0: Vec<f64> = dataset
        .par_iter()
        .map(|s| objective.score(s, &sim).y)
        .collect();
    let bx = LatentBox::around(z0.view());
    let mut zs: Vec<Vec<f64>> = z0.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut ys = y0.clone();
    let data_best = y0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut proposals = Vec::new();
    let mut empty_batches = 0;
    for it in 0..opts.iterations {
        let dim = model.latent_dim();
        let flat: Vec<f64> = zs.iter().flatten().copied().collect();
        let zm = Array2::from_shape_vec((zs.len(), dim), flat).expect("rows of latent_dim");
        let gp = gp_fit(
            zm.view(),
            &ys,
            &GpOptions {
                seed: opts.gp.seed.wrapping_add(it as u64),
                ..opts.gp
            },
        )?;
        let best_y = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let batch = propose_batch(&gp, &bx, best_y, opts.batch, opts.starts, &mut rng);
        let cands = evaluate(model, objective, batch, it + 1)?;
        if cands.iter().all(|c| c.setup.is_empty()) {
            empty_batches += 1;
        }
        for c in &cands {
            zs.push(c.z.clone());
            ys.push(c.score.y);
        }
        proposals.extend(cands);
    }
    proposals.sort_by(|a, b| b.score.y.total_cmp(&a.score.y));
    Ok(BoResult {
        ranked: proposals,
        data_best,
        empty_batches,
    })
}

/// Equal-budget baseline: uniform latents in the same box, argmax-decoded.
pub fn random_baseline(
    model: &Qovae,
    dataset: &[Setup],
    objective: &TargetObjective,
    budget: usize,
    seed: u64,
) -> Result<Vec<Candidate>, BoError> {
    let z0 = model.encode_setups(dataset)?;
    let bx = LatentBox::around(z0.view());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zs: Vec<Vec<f64>> = (0..budget).map(|_| bx.sample(&mut rng)).collect();
    let mut out = evaluate(model, objective, zs, 0)?;
    out.sort_by(|a, b| b.score.y.total_cmp(&a.score.y));
    Ok(out)
}
