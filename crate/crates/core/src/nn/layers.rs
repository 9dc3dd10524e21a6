//! Forward kernels and their hand-written backward passes.
//!
//! Batched activations are row-major matrices. Sequences are stored either
//! sample-major (`B*T` rows, used by the convolutions) or time-major (`T*B`
//! rows, used by the GRU). Backward functions accumulate parameter gradients
//! into a flat buffer laid out like the parameter store and return the
//! gradient with respect to the layer input.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;

use super::params::{ParamId, ParamStore};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("shape mismatch: {0}")]
pub struct ShapeError(pub String);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), ShapeError> {
    if cond {
        Ok(())
    } else {
        Err(ShapeError(msg()))
    }
}

fn add_row(y: &mut Array2<f64>, b: ArrayView1<f64>) {
    for mut row in y.rows_mut() {
        row += &b;
    }
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Gradient through a ReLU given its output; the subgradient at 0 is 0.
pub fn relu_backward(y: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(y).for_each(|d, &v| {
        if v <= 0.0 {
            *d = 0.0
        }
    });
    dx
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: ArrayView2<f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row /= z;
    }
    out
}

/// Summed negative log-likelihood of `targets` under row-wise softmax.
/// Returns the loss and the probabilities (needed for the backward pass).
pub fn softmax_cross_entropy(
    logits: ArrayView2<f64>,
    targets: &[usize],
) -> Result<(f64, Array2<f64>), ShapeError> {
    check(logits.nrows() == targets.len(), || {
        format!("{} logit rows vs {} targets", logits.nrows(), targets.len())
    })?;
    check(targets.iter().all(|&t| t < logits.ncols()), || {
        "target class out of range".into()
    })?;
    let mut loss = 0.0;
    let mut probs = logits.to_owned();
    for (mut row, &t) in probs.rows_mut().into_iter().zip(targets) {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - row[t];
        row.mapv_inplace(|v| (v - lse).exp());
    }
    Ok((loss, probs))
}

/// Gradient of `scale * softmax_cross_entropy` with respect to the logits.
pub fn softmax_cross_entropy_backward(
    probs: &Array2<f64>,
    targets: &[usize],
    scale: f64,
) -> Array2<f64> {
    let mut d = probs.clone();
    for (mut row, &t) in d.rows_mut().into_iter().zip(targets) {
        row[t] -= 1.0;
        row *= scale;
    }
    d
}

/// `z = mu + exp(log_sigma) * eps`.
pub fn reparameterize(
    mu: ArrayView2<f64>,
    log_sigma: ArrayView2<f64>,
    eps: ArrayView2<f64>,
) -> Result<Array2<f64>, ShapeError> {
    check(mu.dim() == log_sigma.dim() && mu.dim() == eps.dim(), || {
        "mu, log_sigma and eps differ in shape".into()
    })?;
    let mut z = mu.to_owned();
    Zip::from(&mut z)
        .and(log_sigma)
        .and(eps)
        .for_each(|z, &ls, &e| *z += ls.exp() * e);
    Ok(z)
}

/// Returns (d mu, d log_sigma) given dz.
pub fn reparameterize_backward(
    log_sigma: ArrayView2<f64>,
    eps: ArrayView2<f64>,
    dz: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let mut dls = dz.clone();
    Zip::from(&mut dls)
        .and(log_sigma)
        .and(eps)
        .for_each(|d, &ls, &e| *d *= ls.exp() * e);
    (dz.clone(), dls)
}

/// Per-row KL(N(mu, sigma^2) || N(0, I)).
pub fn kl_standard_normal(mu: ArrayView2<f64>, log_sigma: ArrayView2<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(mu.nrows());
    for (i, (m, ls)) in mu.rows().into_iter().zip(log_sigma.rows()).enumerate() {
        out[i] = 0.5
            * m.iter()
                .zip(ls.iter())
                .map(|(&m, &l)| m * m + (2.0 * l).exp() - 1.0 - 2.0 * l)
                .sum::<f64>();
    }
    out
}

/// Gradient of `scale * sum(kl_standard_normal)`.
pub fn kl_standard_normal_backward(
    mu: ArrayView2<f64>,
    log_sigma: ArrayView2<f64>,
    scale: f64,
) -> (Array2<f64>, Array2<f64>) {
    (
        mu.mapv(|m| scale * m),
        log_sigma.mapv(|l| scale * ((2.0 * l).exp() - 1.0)),
    )
}

/// Fully connected layer `y = x W^T + b` with `W: out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        let bound = (1.0 / input as f64).sqrt();
        Linear {
            w: store.add(&format!("{name}.weight"), &[output, input], bound, rng),
            b: store.add(&format!("{name}.bias"), &[output], bound, rng),
            input,
            output,
        }
    }

    pub fn forward(&self, p: &[f64], x: ArrayView2<f64>) -> Result<Array2<f64>, ShapeError> {
        check(x.ncols() == self.input, || {
            format!("linear expects {} inputs, got {}", self.input, x.ncols())
        })?;
        let mut y = x.dot(&self.w.mat(p).t());
        add_row(&mut y, self.b.vec(p));
        Ok(y)
    }

    pub fn backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        x: ArrayView2<f64>,
        dy: &Array2<f64>,
    ) -> Array2<f64> {
        general_mat_mul(1.0, &dy.t(), &x, 1.0, &mut self.w.mat_mut(g));
        self.b.vec_mut(g).scaled_add(1.0, &dy.sum_axis(Axis(0)));
        dy.dot(&self.w.mat(p))
    }
}

/// Valid 1-D convolution followed by ReLU.
///
/// Input rows are `B*T` time steps of `channels` features (sample-major);
/// output rows are `B*(T-width+1)` steps of `filters` features. The weight
/// tensor has logical shape `filters x width x channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub channels: usize,
    pub filters: usize,
    pub width: usize,
}

#[derive(Debug, Clone)]
pub struct ConvCache {
    cols: Array2<f64>,
    out: Array2<f64>,
    batch: usize,
    steps: usize,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        filters: usize,
        width: usize,
        rng: &mut R,
    ) -> Self {
        let bound = (1.0 / (width * channels) as f64).sqrt();
        Conv1d {
            w: store.add(
                &format!("{name}.weight"),
                &[filters, width, channels],
                bound,
                rng,
            ),
            b: store.add(&format!("{name}.bias"), &[filters], bound, rng),
            channels,
            filters,
            width,
        }
    }

    pub fn out_steps(&self, steps: usize) -> usize {
        steps + 1 - self.width
    }

    /// Returns the activated output and a cache for the backward pass.
    pub fn forward(
        &self,
        p: &[f64],
        x: ArrayView2<f64>,
        batch: usize,
    ) -> Result<(Array2<f64>, ConvCache), ShapeError> {
        check(x.ncols() == self.channels, || {
            format!("conv expects {} channels, got {}", self.channels, x.ncols())
        })?;
        check(batch > 0 && x.nrows() % batch == 0, || {
            format!("{} rows do not split into {batch} samples", x.nrows())
        })?;
        let steps = x.nrows() / batch;
        check(steps >= self.width, || {
            format!("sequence length {steps} shorter than kernel {}", self.width)
        })?;
        let xs = x.as_standard_layout();
        let flat = xs.as_slice().expect("standard layout");
        let t_out = self.out_steps(steps);
        let k = self.width * self.channels;
        let mut cols = Array2::zeros((batch * t_out, k));
        for b in 0..batch {
            for t in 0..t_out {
                let start = (b * steps + t) * self.channels;
                cols.row_mut(b * t_out + t)
                    .as_slice_mut()
                    .expect("contiguous")
                    .copy_from_slice(&flat[start..start + k]);
            }
        }
        let mut pre = cols.dot(&self.w.mat(p).t());
        add_row(&mut pre, self.b.vec(p));
        let out = relu(&pre);
        Ok((
            out.clone(),
            ConvCache {
                cols,
                out,
                batch,
                steps,
            },
        ))
    }

    pub fn backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        cache: &ConvCache,
        dy: &Array2<f64>,
    ) -> Array2<f64> {
        let dpre = relu_backward(&cache.out, dy);
        general_mat_mul(1.0, &dpre.t(), &cache.cols, 1.0, &mut self.w.mat_mut(g));
        self.b.vec_mut(g).scaled_add(1.0, &dpre.sum_axis(Axis(0)));
        let dcols = dpre.dot(&self.w.mat(p));
        let t_out = self.out_steps(cache.steps);
        let k = self.width * self.channels;
        let mut dx = vec![0.0; cache.batch * cache.steps * self.channels];
        for b in 0..cache.batch {
            for t in 0..t_out {
                let start = (b * cache.steps + t) * self.channels;
                let src = dcols.row(b * t_out + t);
                for (d, s) in dx[start..start + k].iter_mut().zip(src.iter()) {
                    *d += s;
                }
            }
        }
        Array2::from_shape_vec((cache.batch * cache.steps, self.channels), dx)
            .expect("dx shape")
    }
}

/// Gated recurrent layer with update gate `z`, reset gate `r` and candidate
/// `c = tanh(W_h x + U_h (r * h) + b_h)`; `h = (1 - z) * h_prev + z * c`.
///
/// Gate blocks are stacked `[z; r; h]` in `W: 3H x in`, `U: 3H x H`, `b: 3H`.
/// Sequences are time-major with `steps*B` rows and `h_0 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone)]
pub struct GruCache {
    x: Array2<f64>,
    /// `(steps+1)*B` rows, the first block is `h_0`.
    h: Array2<f64>,
    z: Array2<f64>,
    r: Array2<f64>,
    c: Array2<f64>,
    batch: usize,
}

impl Gru {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let bx = (1.0 / input as f64).sqrt();
        let bh = (1.0 / hidden as f64).sqrt();
        Gru {
            w: store.add(&format!("{name}.w"), &[3 * hidden, input], bx, rng),
            u: store.add(&format!("{name}.u"), &[3 * hidden, hidden], bh, rng),
            b: store.add(&format!("{name}.b"), &[3 * hidden], bh, rng),
            input,
            hidden,
        }
    }

    /// Returns all hidden states (`steps*B x H`) and the cache.
    pub fn forward(
        &self,
        p: &[f64],
        x: ArrayView2<f64>,
        batch: usize,
    ) -> Result<(Array2<f64>, GruCache), ShapeError> {
        check(x.ncols() == self.input, || {
            format!("gru expects {} inputs, got {}", self.input, x.ncols())
        })?;
        check(batch > 0 && x.nrows() % batch == 0, || {
            format!("{} rows do not split into batch {batch}", x.nrows())
        })?;
        let hd = self.hidden;
        let steps = x.nrows() / batch;
        let u = self.u.mat(p);
        let u_zr = u.slice(s![..2 * hd, ..]);
        let u_h = u.slice(s![2 * hd.., ..]);
        let mut a = x.dot(&self.w.mat(p).t());
        add_row(&mut a, self.b.vec(p));

        let mut h = Array2::zeros(((steps + 1) * batch, hd));
        let mut z = Array2::zeros((steps * batch, hd));
        let mut r = Array2::zeros((steps * batch, hd));
        let mut c = Array2::zeros((steps * batch, hd));
        let mut zr = Array2::zeros((batch, 2 * hd));
        let mut ch = Array2::zeros((batch, hd));
        for t in 0..steps {
            let rows = t * batch..(t + 1) * batch;
            let h_prev = h.slice(s![rows.clone(), ..]).to_owned();
            let at = a.slice(s![rows.clone(), ..]);
            general_mat_mul(1.0, &h_prev, &u_zr.t(), 0.0, &mut zr);
            let mut zt = z.slice_mut(s![rows.clone(), ..]);
            Zip::from(&mut zt)
                .and(&at.slice(s![.., ..hd]))
                .and(&zr.slice(s![.., ..hd]))
                .for_each(|o, &a, &b| *o = sigmoid(a + b));
            let mut rt = r.slice_mut(s![rows.clone(), ..]);
            Zip::from(&mut rt)
                .and(&at.slice(s![.., hd..2 * hd]))
                .and(&zr.slice(s![.., hd..]))
                .for_each(|o, &a, &b| *o = sigmoid(a + b));
            let rh = &rt * &h_prev;
            general_mat_mul(1.0, &rh, &u_h.t(), 0.0, &mut ch);
            let mut ct = c.slice_mut(s![rows.clone(), ..]);
            Zip::from(&mut ct)
                .and(&at.slice(s![.., 2 * hd..]))
                .and(&ch)
                .for_each(|o, &a, &b| *o = (a + b).tanh());
            let zt = z.slice(s![rows.clone(), ..]);
            let ct = c.slice(s![rows.clone(), ..]);
            let mut hn = h.slice_mut(s![(t + 1) * batch..(t + 2) * batch, ..]);
            Zip::from(&mut hn)
                .and(&h_prev)
                .and(&zt)
                .and(&ct)
                .for_each(|o, &hp, &z, &c| *o = (1.0 - z) * hp + z * c);
        }
        let out = h.slice(s![batch.., ..]).to_owned();
        Ok((
            out,
            GruCache {
                x: x.to_owned(),
                h,
                z,
                r,
                c,
                batch,
            },
        ))
    }

    /// `dy` is the gradient with respect to every output hidden state.
    pub fn backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        cache: &GruCache,
        dy: &Array2<f64>,
    ) -> Array2<f64> {
        let hd = self.hidden;
        let batch = cache.batch;
        let steps = cache.z.nrows() / batch;
        let u = self.u.mat(p);
        let u_zr = u.slice(s![..2 * hd, ..]);
        let u_h = u.slice(s![2 * hd.., ..]);
        let mut da = Array2::<f64>::zeros((steps * batch, 3 * hd));
        let mut dh = Array2::<f64>::zeros((batch, hd));
        let mut du = Array2::<f64>::zeros((3 * hd, hd));
        for t in (0..steps).rev() {
            let rows = t * batch..(t + 1) * batch;
            dh += &dy.slice(s![rows.clone(), ..]);
            let h_prev = cache.h.slice(s![rows.clone(), ..]);
            let z = cache.z.slice(s![rows.clone(), ..]);
            let r = cache.r.slice(s![rows.clone(), ..]);
            let c = cache.c.slice(s![rows.clone(), ..]);
            let mut dat = da.slice_mut(s![rows.clone(), ..]);
            // candidate and update gate pre-activations
            Zip::from(dat.slice_mut(s![.., 2 * hd..]))
                .and(&dh)
                .and(&z)
                .and(&c)
                .for_each(|o, &d, &z, &c| *o = d * z * (1.0 - c * c));
            Zip::from(dat.slice_mut(s![.., ..hd]))
                .and(&dh)
                .and(&z)
                .and(&c)
                .and(&h_prev)
                .for_each(|o, &d, &z, &c, &hp| *o = d * (c - hp) * z * (1.0 - z));
            let da_h = dat.slice(s![.., 2 * hd..]);
            let rh = &r * &h_prev;
            general_mat_mul(1.0, &da_h.t(), &rh, 1.0, &mut du.slice_mut(s![2 * hd.., ..]));
            let drh = da_h.dot(&u_h);
            Zip::from(dat.slice_mut(s![.., hd..2 * hd]))
                .and(&drh)
                .and(&h_prev)
                .and(&r)
                .for_each(|o, &d, &hp, &r| *o = d * hp * r * (1.0 - r));
            let da_zr = dat.slice(s![.., ..2 * hd]);
            general_mat_mul(1.0, &da_zr.t(), &h_prev, 1.0, &mut du.slice_mut(s![..2 * hd, ..]));
            let mut dh_prev = da_zr.dot(&u_zr);
            Zip::from(&mut dh_prev)
                .and(&dh)
                .and(&z)
                .and(&drh)
                .and(&r)
                .for_each(|o, &d, &z, &drh, &r| *o += d * (1.0 - z) + drh * r);
            dh = dh_prev;
        }
        self.u.mat_mut(g).scaled_add(1.0, &du);
        general_mat_mul(1.0, &da.t(), &cache.x, 1.0, &mut self.w.mat_mut(g));
        self.b.vec_mut(g).scaled_add(1.0, &da.sum_axis(Axis(0)));
        da.dot(&self.w.mat(p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;

    fn rng() -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(1)
    }

    #[test]
    fn softmax_basics() {
        let p = softmax_rows(array![[0.0, 0.0, 0.0]].view());
        for v in p.iter() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let a = softmax_rows(array![[1.0, -2.0, 0.5]].view());
        let b = softmax_rows(array![[101.0, 98.0, 100.5]].view());
        for (x, y) in a.iter().zip(b.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-15);
        }
    }

    #[test]
    fn cross_entropy_of_certain_prediction_is_zero() {
        let logits = array![[800.0, 0.0], [0.0, 800.0]];
        let (loss, _) = softmax_cross_entropy(logits.view(), &[0, 1]).unwrap();
        assert_abs_diff_eq!(loss, 0.0, epsilon = 1e-300);
    }

    #[test]
    fn kl_zero_at_standard_normal() {
        let z = Array2::zeros((2, 3));
        assert_eq!(kl_standard_normal(z.view(), z.view()), array![0.0, 0.0]);
        let m = array![[0.3, -1.0]];
        let l = array![[0.2, -0.4]];
        assert!(kl_standard_normal(m.view(), l.view())[0] > 0.0);
    }

    #[test]
    fn conv_ones_filter_counts_window() {
        let mut store = ParamStore::new();
        let conv = Conv1d::new(&mut store, "c", 4, 1, 3, &mut rng());
        store.flat_mut()[conv.w.offset..conv.w.offset + 12].fill(1.0);
        store.flat_mut()[conv.b.offset] = 0.0;
        let mut x = Array2::zeros((5, 4));
        for (t, c) in [0, 3, 1, 1, 2].into_iter().enumerate() {
            x[[t, c]] = 1.0;
        }
        let (y, _) = conv.forward(store.flat(), x.view(), 1).unwrap();
        assert_eq!(y, array![[3.0], [3.0], [3.0]]);
    }

    #[test]
    fn conv_rejects_short_sequence() {
        let mut store = ParamStore::new();
        let conv = Conv1d::new(&mut store, "c", 2, 1, 3, &mut rng());
        let x = Array2::zeros((2, 2));
        assert!(conv.forward(store.flat(), x.view(), 1).is_err());
    }

    #[test]
    fn gru_zero_weights_stay_zero() {
        let mut store = ParamStore::new();
        let gru = Gru::new(&mut store, "g", 3, 4, &mut rng());
        store.flat_mut().fill(0.0);
        let x = Array2::from_elem((10, 3), 0.7);
        let (h, _) = gru.forward(store.flat(), x.view(), 2).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gru_scalar_step_by_hand() {
        let mut store = ParamStore::new();
        let gru = Gru::new(&mut store, "g", 1, 1, &mut rng());
        // W = [wz, wr, wh], U = [uz, ur, uh], b = [bz, br, bh]
        store.flat_mut().copy_from_slice(&[0.5, -0.3, 0.8, 0.2, 0.4, -0.6, 0.1, 0.05, -0.2]);
        let x = array![[1.5], [-0.5]];
        let (h, _) = gru.forward(store.flat(), x.view(), 1).unwrap();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut hp = 0.0;
        for &xt in &[1.5, -0.5] {
            let z = sig(0.5 * xt + 0.2 * hp + 0.1);
            let r = sig(-0.3 * xt + 0.4 * hp + 0.05);
            let c = (0.8 * xt - 0.6 * (r * hp) - 0.2).tanh();
            hp = (1.0 - z) * hp + z * c;
        }
        assert_abs_diff_eq!(h[[1, 0]], hp, epsilon = 1e-12);
    }

    #[test]
    fn relu_subgradient_at_zero() {
        let y = array![[0.0, 1.0]];
        let dy = array![[5.0, 5.0]];
        assert_eq!(relu_backward(&y, &dy), array![[0.0, 5.0]]);
    }
}
