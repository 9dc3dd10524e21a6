//! Convolutional Gaussian encoder, recurrent categorical decoder and the
//! training loop.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::nn::checkpoint::{self, CheckpointError};
use crate::nn::layers::{
    kl_standard_normal, kl_standard_normal_backward, relu, relu_backward, reparameterize,
    reparameterize_backward, softmax_cross_entropy, softmax_cross_entropy_backward, softmax_rows,
    ConvCache, GruCache,
};
use crate::nn::{Adam, AdamConfig, Conv1d, Gru, Linear, ParamStore, ShapeError};
use crate::repr::{OneHotMatrix, ReprError, Setup, VocabConfig, Vocabulary};

pub const LOG_FILE: &str = "train_log.csv";
pub const BEST_DIR: &str = "best";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QovaeConfig {
    pub latent_dim: usize,
    pub conv_filters: Vec<usize>,
    pub conv_widths: Vec<usize>,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: usize,
    pub gru_layers: usize,
    pub gru_hidden: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub val_fraction: f64,
}

impl Default for QovaeConfig {
    fn default() -> Self {
        QovaeConfig {
            latent_dim: 6,
            conv_filters: vec![18, 18, 18],
            conv_widths: vec![3, 3, 3],
            encoder_hidden: vec![128, 128],
            decoder_hidden: 64,
            gru_layers: 3,
            gru_hidden: 128,
            lr: 1e-3,
            batch_size: 64,
            epochs: 200,
            seed: 0,
            val_fraction: 0.1,
        }
    }
}

impl QovaeConfig {
    /// Six-dimensional latent space.
    pub fn high() -> Self {
        Self::default()
    }

    /// Two-dimensional latent space.
    pub fn low() -> Self {
        QovaeConfig {
            latent_dim: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self, max_len: usize) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.latent_dim == 0 || self.decoder_hidden == 0 || self.gru_hidden == 0 {
            return bad("latent_dim, decoder_hidden and gru_hidden must be positive".into());
        }
        if self.conv_filters.is_empty() || self.conv_filters.len() != self.conv_widths.len() {
            return bad("conv_filters and conv_widths must be non-empty and equal length".into());
        }
        if self.conv_filters.contains(&0) || self.conv_widths.contains(&0) {
            return bad("conv filters and widths must be positive".into());
        }
        if self.encoder_hidden.contains(&0) {
            return bad("encoder_hidden widths must be positive".into());
        }
        let shrink: usize = self.conv_widths.iter().map(|w| w - 1).sum();
        if shrink >= max_len {
            return bad(format!(
                "convolutions shrink length {max_len} by {shrink}, leaving no output"
            ));
        }
        if self.gru_layers == 0 || self.batch_size == 0 {
            return bad("gru_layers and batch_size must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} is not positive", self.lr));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction {} not in [0, 1)", self.val_fraction));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Repr(#[from] ReprError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPoint {
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Argmax,
    Sample,
}

/// Per-sample means of the two ELBO terms; `loss = recon + kl`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ElboParts {
    pub recon: f64,
    pub kl: f64,
}

impl ElboParts {
    pub fn loss(&self) -> f64 {
        self.recon + self.kl
    }
}

struct EncoderCache {
    convs: Vec<ConvCache>,
    conv_out: (usize, usize),
    mlp_in: Vec<Array2<f64>>,
    mlp_out: Vec<Array2<f64>>,
}

struct DecoderCache {
    z: Array2<f64>,
    seed: Array2<f64>,
    grus: Vec<GruCache>,
    top: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct Qovae {
    config: QovaeConfig,
    vocab: Vocabulary,
    params: ParamStore,
    convs: Vec<Conv1d>,
    encoder: Vec<Linear>,
    seed_mlp: Linear,
    grus: Vec<Gru>,
    output: Linear,
}

impl Qovae {
    pub fn new(config: QovaeConfig, vocab: Vocabulary) -> Result<Self, ModelError> {
        config.validate(vocab.max_len())?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let mut channels = vocab.size();
        let mut steps = vocab.max_len();
        let mut convs = Vec::new();
        for (i, (&f, &w)) in config.conv_filters.iter().zip(&config.conv_widths).enumerate() {
            let c = Conv1d::new(&mut params, &format!("encoder.conv{}", i + 1), channels, f, w, &mut rng);
            steps = c.out_steps(steps);
            channels = f;
            convs.push(c);
        }
        let mut width = steps * channels;
        let mut encoder = Vec::new();
        let widths = config
            .encoder_hidden
            .iter()
            .copied()
            .chain(std::iter::once(2 * config.latent_dim));
        for (i, out) in widths.enumerate() {
            encoder.push(Linear::new(&mut params, &format!("encoder.mlp{}", i + 1), width, out, &mut rng));
            width = out;
        }
        let seed_mlp = Linear::new(&mut params, "decoder.mlp", config.latent_dim, config.decoder_hidden, &mut rng);
        let mut grus = Vec::new();
        let mut input = config.decoder_hidden;
        for i in 0..config.gru_layers {
            grus.push(Gru::new(&mut params, &format!("decoder.gru{}", i + 1), input, config.gru_hidden, &mut rng));
            input = config.gru_hidden;
        }
        let output = Linear::new(&mut params, "decoder.softmax", config.gru_hidden, vocab.size(), &mut rng);
        Ok(Qovae {
            config,
            vocab,
            params,
            convs,
            encoder,
            seed_mlp,
            grus,
            output,
        })
    }

    pub fn config(&self) -> &QovaeConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn one_hot_batch(&self, seqs: &[&[usize]]) -> Result<Array2<f64>, ModelError> {
        let (t, d) = (self.vocab.max_len(), self.vocab.size());
        let mut x = Array2::zeros((seqs.len() * t, d));
        for (b, seq) in seqs.iter().enumerate() {
            if seq.len() != t || seq.iter().any(|&i| i >= d) {
                return Err(ShapeError(format!(
                    "sequence {b} is not {t} class indices below {d}"
                ))
                .into());
            }
            for (k, &i) in seq.iter().enumerate() {
                x[[b * t + k, i]] = 1.0;
            }
        }
        Ok(x)
    }

    fn encoder_forward(
        &self,
        p: &[f64],
        seqs: &[&[usize]],
    ) -> Result<(Array2<f64>, Array2<f64>, EncoderCache), ModelError> {
        let batch = seqs.len();
        let mut h = self.one_hot_batch(seqs)?;
        let mut convs = Vec::with_capacity(self.convs.len());
        for c in &self.convs {
            let (out, cache) = c.forward(p, h.view(), batch)?;
            convs.push(cache);
            h = out;
        }
        let conv_out = h.dim();
        let mut a = h
            .into_shape_with_order((batch, conv_out.0 / batch * conv_out.1))
            .expect("flatten");
        let mut mlp_in = Vec::new();
        let mut mlp_out = Vec::new();
        let last = self.encoder.len() - 1;
        for (i, lin) in self.encoder.iter().enumerate() {
            let mut y = lin.forward(p, a.view())?;
            if i != last {
                y = relu(&y);
            }
            mlp_in.push(a);
            mlp_out.push(y.clone());
            a = y;
        }
        let l = self.config.latent_dim;
        let mu = a.slice(s![.., ..l]).to_owned();
        let ls = a.slice(s![.., l..]).to_owned();
        Ok((
            mu,
            ls,
            EncoderCache {
                convs,
                conv_out,
                mlp_in,
                mlp_out,
            },
        ))
    }

    fn encoder_backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        cache: &EncoderCache,
        dmu: &Array2<f64>,
        dls: &Array2<f64>,
    ) {
        let mut d = ndarray::concatenate(Axis(1), &[dmu.view(), dls.view()]).expect("concat");
        let last = self.encoder.len() - 1;
        for (i, lin) in self.encoder.iter().enumerate().rev() {
            if i != last {
                d = relu_backward(&cache.mlp_out[i], &d);
            }
            d = lin.backward(p, g, cache.mlp_in[i].view(), &d);
        }
        let mut d = d.into_shape_with_order(cache.conv_out).expect("unflatten");
        for (c, cc) in self.convs.iter().zip(&cache.convs).rev() {
            d = c.backward(p, g, cc, &d);
        }
    }

    fn decoder_forward(
        &self,
        p: &[f64],
        z: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, DecoderCache), ModelError> {
        let batch = z.nrows();
        let steps = self.vocab.max_len();
        let seed = relu(&self.seed_mlp.forward(p, z)?);
        let mut x = Array2::zeros((steps * batch, seed.ncols()));
        for t in 0..steps {
            x.slice_mut(s![t * batch..(t + 1) * batch, ..]).assign(&seed);
        }
        let mut grus = Vec::with_capacity(self.grus.len());
        for gru in &self.grus {
            let (h, cache) = gru.forward(p, x.view(), batch)?;
            grus.push(cache);
            x = h;
        }
        let logits = self.output.forward(p, x.view())?;
        Ok((
            logits,
            DecoderCache {
                z: z.to_owned(),
                seed,
                grus,
                top: x,
            },
        ))
    }

    fn decoder_backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        cache: &DecoderCache,
        dlogits: &Array2<f64>,
    ) -> Array2<f64> {
        let batch = cache.z.nrows();
        let mut d = self.output.backward(p, g, cache.top.view(), dlogits);
        for (gru, gc) in self.grus.iter().zip(&cache.grus).rev() {
            d = gru.backward(p, g, gc, &d);
        }
        let mut dseed = Array2::zeros(cache.seed.dim());
        for t in 0..self.vocab.max_len() {
            dseed += &d.slice(s![t * batch..(t + 1) * batch, ..]);
        }
        let dpre = relu_backward(&cache.seed, &dseed);
        self.seed_mlp.backward(p, g, cache.z.view(), &dpre)
    }

    /// Time-major targets for a batch.
    fn targets(&self, seqs: &[&[usize]]) -> Vec<usize> {
        let b = seqs.len();
        let t = self.vocab.max_len();
        let mut out = vec![0; b * t];
        for (i, seq) in seqs.iter().enumerate() {
            for k in 0..t {
                out[k * b + i] = seq[k];
            }
        }
        out
    }

    /// Mean ELBO terms over a batch with one reparameterized sample per
    /// item, and optionally the gradient of `recon + kl` (per-sample mean).
    pub fn batch_loss(
        &self,
        params: &[f64],
        seqs: &[&[usize]],
        eps: ArrayView2<f64>,
        want_grad: bool,
    ) -> Result<(ElboParts, Option<Vec<f64>>), ModelError> {
        let batch = seqs.len();
        if batch == 0 {
            return Err(ModelError::EmptyDataset);
        }
        let (mu, ls, enc) = self.encoder_forward(params, seqs)?;
        let z = reparameterize(mu.view(), ls.view(), eps)?;
        let (logits, dec) = self.decoder_forward(params, z.view())?;
        let targets = self.targets(seqs);
        let (recon, probs) = softmax_cross_entropy(logits.view(), &targets)?;
        let kl = kl_standard_normal(mu.view(), ls.view()).sum();
        let scale = 1.0 / batch as f64;
        let parts = ElboParts {
            recon: recon * scale,
            kl: kl * scale,
        };
        if !want_grad {
            return Ok((parts, None));
        }
        let mut g = vec![0.0; params.len()];
        let dlogits = softmax_cross_entropy_backward(&probs, &targets, scale);
        let dz = self.decoder_backward(params, &mut g, &dec, &dlogits);
        let (dmu_r, dls_r) = reparameterize_backward(ls.view(), eps, &dz);
        let (dmu_k, dls_k) = kl_standard_normal_backward(mu.view(), ls.view(), scale);
        self.encoder_backward(params, &mut g, &enc, &(dmu_r + dmu_k), &(dls_r + dls_k));
        Ok((parts, Some(g)))
    }

    /// Single-sample ELBO terms for one input.
    pub fn elbo<R: Rng + ?Sized>(
        &self,
        x: &OneHotMatrix,
        rng: &mut R,
    ) -> Result<ElboParts, ModelError> {
        let eps = Array2::from_shape_fn((1, self.latent_dim()), |_| rng.sample(StandardNormal));
        Ok(self.batch_loss(self.params.flat(), &[x.indices()], eps.view(), false)?.0)
    }

    pub fn encode(&self, x: &OneHotMatrix) -> Result<LatentPoint, ModelError> {
        Ok(self.encode_many(&[x.indices()])?.remove(0))
    }

    pub fn encode_setup(&self, setup: &Setup) -> Result<LatentPoint, ModelError> {
        self.encode(&self.vocab.encode_onehot(setup)?)
    }

    pub fn encode_many(&self, seqs: &[&[usize]]) -> Result<Vec<LatentPoint>, ModelError> {
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(256) {
            let (mu, ls, _) = self.encoder_forward(self.params.flat(), chunk)?;
            for (m, l) in mu.rows().into_iter().zip(ls.rows()) {
                out.push(LatentPoint {
                    mu: m.to_vec(),
                    log_sigma: l.to_vec(),
                });
            }
        }
        Ok(out)
    }

    /// Means of the posterior for each setup, as rows.
    pub fn encode_setups(&self, setups: &[Setup]) -> Result<Array2<f64>, ModelError> {
        let enc: Vec<OneHotMatrix> = setups
            .iter()
            .map(|s| self.vocab.encode_onehot(s))
            .collect::<Result<_, _>>()?;
        let seqs: Vec<&[usize]> = enc.iter().map(|e| e.indices()).collect();
        let points = self.encode_many(&seqs)?;
        let mut z = Array2::zeros((setups.len(), self.latent_dim()));
        for (i, p) in points.iter().enumerate() {
            z.row_mut(i).assign(&ndarray::ArrayView1::from(&p.mu));
        }
        Ok(z)
    }

    /// Per-position device probabilities (`T x D`) for every latent row.
    pub fn decode_probs_many(&self, z: ArrayView2<f64>) -> Result<Vec<Array2<f64>>, ModelError> {
        if z.ncols() != self.latent_dim() {
            return Err(ShapeError(format!(
                "latent has {} entries, model expects {}",
                z.ncols(),
                self.latent_dim()
            ))
            .into());
        }
        let steps = self.vocab.max_len();
        let mut out = Vec::with_capacity(z.nrows());
        for start in (0..z.nrows()).step_by(256) {
            let chunk = z.slice(s![start..(start + 256).min(z.nrows()), ..]);
            let b = chunk.nrows();
            let (logits, _) = self.decoder_forward(self.params.flat(), chunk)?;
            let probs = softmax_rows(logits.view());
            for i in 0..b {
                let rows: Vec<usize> = (0..steps).map(|t| t * b + i).collect();
                out.push(probs.select(Axis(0), &rows));
            }
        }
        Ok(out)
    }

    pub fn decode_probs(&self, z: &[f64]) -> Result<Array2<f64>, ModelError> {
        let z = ArrayView2::from_shape((1, z.len()), z).expect("row");
        Ok(self.decode_probs_many(z)?.remove(0))
    }

    fn pick<R: Rng + ?Sized>(&self, probs: &Array2<f64>, mode: DecodeMode, rng: &mut R) -> Setup {
        let indices: Vec<usize> = probs
            .rows()
            .into_iter()
            .map(|row| match mode {
                DecodeMode::Argmax => argmax(row.as_slice().expect("row")),
                DecodeMode::Sample => {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut pick = row.len() - 1;
                    for (i, &p) in row.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            pick = i;
                            break;
                        }
                    }
                    pick
                }
            })
            .collect();
        self.vocab.decode_indices(&indices)
    }

    /// Decodes every latent row; sampling draws from `rng` row by row.
    pub fn decode_setups<R: Rng + ?Sized>(
        &self,
        z: ArrayView2<f64>,
        mode: DecodeMode,
        rng: &mut R,
    ) -> Result<Vec<Setup>, ModelError> {
        Ok(self
            .decode_probs_many(z)?
            .iter()
            .map(|p| self.pick(p, mode, rng))
            .collect())
    }

    pub fn decode_setup<R: Rng + ?Sized>(
        &self,
        z: &[f64],
        mode: DecodeMode,
        rng: &mut R,
    ) -> Result<Setup, ModelError> {
        Ok(self.pick(&self.decode_probs(z)?, mode, rng))
    }

    pub fn decode_argmax(&self, z: &[f64]) -> Result<Setup, ModelError> {
        self.decode_setup(z, DecodeMode::Argmax, &mut ChaCha8Rng::seed_from_u64(0))
    }

    /// Decodes `n` draws from the standard normal prior.
    pub fn sample_prior<R: Rng + ?Sized>(
        &self,
        n: usize,
        mode: DecodeMode,
        rng: &mut R,
    ) -> Result<(Array2<f64>, Vec<Setup>), ModelError> {
        let z = Array2::from_shape_fn((n, self.latent_dim()), |_| rng.sample(StandardNormal));
        let setups = self.decode_setups(z.view(), mode, rng)?;
        Ok((z, setups))
    }

    /// Fraction of setups recovered exactly by argmax decoding of the mean.
    pub fn reconstruction_rate(&self, setups: &[Setup]) -> Result<f64, ModelError> {
        if setups.is_empty() {
            return Ok(0.0);
        }
        let z = self.encode_setups(setups)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.decode_setups(z.view(), DecodeMode::Argmax, &mut rng)?;
        let hits = out.iter().zip(setups).filter(|(a, b)| a == b).count();
        Ok(hits as f64 / setups.len() as f64)
    }

    fn architecture(&self) -> serde_json::Value {
        serde_json::json!({
            "model": self.config,
            "vocabulary": self.vocab.config(),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        checkpoint::save(dir, &self.params, &self.vocab.hash(), self.architecture())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let manifest = checkpoint::read_manifest(dir)?;
        let arch = &manifest.architecture;
        let config: QovaeConfig = serde_json::from_value(arch["model"].clone())
            .map_err(CheckpointError::from)?;
        let vocab_cfg: VocabConfig = serde_json::from_value(arch["vocabulary"].clone())
            .map_err(CheckpointError::from)?;
        let vocab = Vocabulary::new(vocab_cfg)?;
        if vocab.hash() != manifest.vocab_hash {
            return Err(CheckpointError::Mismatch("vocabulary hash differs".into()).into());
        }
        let mut model = Qovae::new(config, vocab)?;
        checkpoint::load_into(dir, &manifest, &mut model.params)?;
        Ok(model)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub recon: f64,
    pub kl: f64,
    pub val_recon: f64,
    pub val_kl: f64,
}

pub struct TrainOutcome {
    pub model: Qovae,
    pub best: Qovae,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

/// Minibatch Adam on the mean negative ELBO.
///
/// When `out` is given, the final model is saved there, the lowest
/// validation-loss model under `best/`, and the per-epoch log as CSV.
pub fn train(
    setups: &[Setup],
    vocab: &Vocabulary,
    config: &QovaeConfig,
    out: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, ModelError> {
    if setups.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut model = Qovae::new(config.clone(), vocab.clone())?;
    let encoded: Vec<OneHotMatrix> = setups
        .iter()
        .map(|s| vocab.encode_onehot(s))
        .collect::<Result<_, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..setups.len()).collect();
    order.shuffle(&mut rng);
    let n_val = (config.val_fraction * setups.len() as f64).round() as usize;
    let n_val = n_val.min(setups.len() - 1);
    let val_indices = order[..n_val].to_vec();
    let mut train_indices = order[n_val..].to_vec();
    let val_seqs: Vec<&[usize]> = val_indices.iter().map(|&i| encoded[i].indices()).collect();
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        model.params.len(),
    );
    let l = config.latent_dim;
    let mut log = Vec::with_capacity(config.epochs);
    let mut best = model.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut log_file = match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let mut f = fs::File::create(dir.join(LOG_FILE))?;
            writeln!(f, "epoch,recon,kl,val_recon,val_kl")?;
            Some(f)
        }
        None => None,
    };

    for epoch in 1..=config.epochs {
        train_indices.shuffle(&mut rng);
        let mut sum = ElboParts::default();
        for batch in train_indices.chunks(config.batch_size) {
            let seqs: Vec<&[usize]> = batch.iter().map(|&i| encoded[i].indices()).collect();
            let eps = Array2::from_shape_fn((seqs.len(), l), |_| rng.sample(StandardNormal));
            let (parts, grad) = model.batch_loss(model.params.flat(), &seqs, eps.view(), true)?;
            if !parts.loss().is_finite() {
                return Err(ModelError::Diverged {
                    epoch,
                    loss: parts.loss(),
                });
            }
            adam.step(model.params.flat_mut(), &grad.expect("requested"));
            let w = seqs.len() as f64;
            sum.recon += parts.recon * w;
            sum.kl += parts.kl * w;
        }
        let n = train_indices.len() as f64;
        let (val_recon, val_kl) = if val_seqs.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let mut vrng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7661_6c69_6461_7465);
            let mut acc = ElboParts::default();
            for chunk in val_seqs.chunks(256) {
                let eps = Array2::from_shape_fn((chunk.len(), l), |_| vrng.sample(StandardNormal));
                let (p, _) = model.batch_loss(model.params.flat(), chunk, eps.view(), false)?;
                acc.recon += p.recon * chunk.len() as f64;
                acc.kl += p.kl * chunk.len() as f64;
            }
            let m = val_seqs.len() as f64;
            (acc.recon / m, acc.kl / m)
        };
        let entry = EpochLog {
            epoch,
            recon: sum.recon / n,
            kl: sum.kl / n,
            val_recon,
            val_kl,
        };
        let score = if val_seqs.is_empty() {
            entry.recon + entry.kl
        } else {
            val_recon + val_kl
        };
        if !score.is_finite() {
            return Err(ModelError::Diverged { epoch, loss: score });
        }
        if score < best_loss {
            best_loss = score;
            best_epoch = epoch;
            best = model.clone();
        }
        if let Some(f) = log_file.as_mut() {
            writeln!(
                f,
                "{},{},{},{},{}",
                epoch, entry.recon, entry.kl, entry.val_recon, entry.val_kl
            )?;
        }
        on_epoch(&entry);
        log.push(entry);
    }
    if let Some(dir) = out {
        model.save(dir)?;
        best.save(&dir.join(BEST_DIR))?;
    }
    Ok(TrainOutcome {
        model,
        best,
        best_epoch,
        log,
        train_indices,
        val_indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> QovaeConfig {
        QovaeConfig {
            latent_dim: 2,
            conv_filters: vec![4, 4, 4],
            encoder_hidden: vec![8, 8],
            decoder_hidden: 6,
            gru_layers: 2,
            gru_hidden: 8,
            ..QovaeConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        let v = Vocabulary::default();
        assert!(Qovae::new(QovaeConfig::default(), v.clone()).is_ok());
        let wide = QovaeConfig {
            conv_widths: vec![5, 5, 5],
            ..QovaeConfig::default()
        };
        assert!(matches!(Qovae::new(wide, v.clone()), Err(ModelError::Config(_))));
        let ragged = QovaeConfig {
            conv_filters: vec![4, 4],
            ..QovaeConfig::default()
        };
        assert!(Qovae::new(ragged, v).is_err());
    }

    #[test]
    fn decode_rows_are_distributions() {
        let m = Qovae::new(tiny(), Vocabulary::default()).unwrap();
        let p = m.decode_probs(&[0.3, -1.2]).unwrap();
        assert_eq!(p.dim(), (12, 67));
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        assert!(m.decode_probs(&[0.3]).is_err());
    }

    #[test]
    fn encode_is_deterministic_and_finite() {
        let v = Vocabulary::default();
        let m = Qovae::new(tiny(), v.clone()).unwrap();
        let s = v.parse_setup("BS(b,c) OAMHolo(b,1) DownConv(c,d)").unwrap();
        let a = m.encode_setup(&s).unwrap();
        let b = m.encode_setup(&s).unwrap();
        assert_eq!(a, b);
        assert!(a.mu.iter().chain(&a.log_sigma).all(|v| v.is_finite()));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let v = Vocabulary::default();
        let m = Qovae::new(tiny(), v).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = Qovae::load(dir.path()).unwrap();
        assert_eq!(back.params(), m.params());
        assert_eq!(back.config(), m.config());
    }
}
