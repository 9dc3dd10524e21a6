//! Central finite-difference checks for every layer.

use ndarray::Array2;
use qovae_core::nn::layers::{
    kl_standard_normal, kl_standard_normal_backward, relu, relu_backward, reparameterize,
    reparameterize_backward, softmax_cross_entropy, softmax_cross_entropy_backward,
};
use qovae_core::nn::{Conv1d, Gru, Linear, ParamStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_EPS: f64 = 1e-5;
/// Denominator floor so that near-zero gradients compare absolutely.
const FLOOR: f64 = 1e-6;

/// Max that keeps NaN, so a broken gradient cannot hide.
pub fn nan_max(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
}

fn dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Max relative error of `analytic` against central differences of `f`
/// with respect to each entry of `x`.
fn fd_against(
    x: &mut [f64],
    analytic: &[f64],
    mut f: impl FnMut(&[f64]) -> f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + FD_EPS;
        let up = f(x);
        x[i] = orig - FD_EPS;
        let down = f(x);
        x[i] = orig;
        let num = (up - down) / (2.0 * FD_EPS);
        worst = nan_max(worst, rel_err(analytic[i], num));
    }
    worst
}

pub struct LayerReport {
    pub layer: &'static str,
    pub shapes: usize,
    pub max_rel_err: f64,
}

fn linear_case(rng: &mut ChaCha8Rng) -> f64 {
    let (inp, out, batch) = (rng.random_range(1..8), rng.random_range(1..8), rng.random_range(1..5));
    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "l", inp, out, rng);
    let mut x = rand_mat(rng, batch, inp);
    let probe = rand_mat(rng, batch, out);
    let mut g = store.zeros();
    let dx = lin.backward(store.flat(), &mut g, x.view(), &probe);
    let loss = |p: &[f64], x: &Array2<f64>| dot(&lin.forward(p, x.view()).unwrap(), &probe);
    let mut params = store.flat().to_vec();
    let xs = x.clone();
    let e1 = fd_against(&mut params, &g, |p| loss(p, &xs));
    let p = store.flat().to_vec();
    let e2 = fd_against(x.as_slice_mut().unwrap(), dx.as_slice().unwrap(), |xv| {
        loss(&p, &Array2::from_shape_vec((batch, inp), xv.to_vec()).unwrap())
    });
    nan_max(e1, e2)
}

fn conv_case(rng: &mut ChaCha8Rng) -> f64 {
    let channels = rng.random_range(1..6);
    let filters = rng.random_range(1..6);
    let width = rng.random_range(1..5);
    let steps = width + rng.random_range(0..6);
    let batch = rng.random_range(1..4);
    let mut store = ParamStore::new();
    let conv = Conv1d::new(&mut store, "c", channels, filters, width, rng);
    let mut x = rand_mat(rng, batch * steps, channels);
    let t_out = conv.out_steps(steps);
    let probe = rand_mat(rng, batch * t_out, filters);
    let (_, cache) = conv.forward(store.flat(), x.view(), batch).unwrap();
    let mut g = store.zeros();
    let dx = conv.backward(store.flat(), &mut g, &cache, &probe);
    let loss = |p: &[f64], x: &Array2<f64>| {
        dot(&conv.forward(p, x.view(), batch).unwrap().0, &probe)
    };
    let mut params = store.flat().to_vec();
    let xs = x.clone();
    let e1 = fd_against(&mut params, &g, |p| loss(p, &xs));
    let p = store.flat().to_vec();
    let e2 = fd_against(x.as_slice_mut().unwrap(), dx.as_slice().unwrap(), |xv| {
        loss(&p, &Array2::from_shape_vec((batch * steps, channels), xv.to_vec()).unwrap())
    });
    nan_max(e1, e2)
}

fn gru_case(rng: &mut ChaCha8Rng) -> f64 {
    let inp = rng.random_range(1..6);
    let hidden = rng.random_range(1..6);
    let steps = rng.random_range(1..6);
    let batch = rng.random_range(1..4);
    let mut store = ParamStore::new();
    let gru = Gru::new(&mut store, "g", inp, hidden, rng);
    let mut x = rand_mat(rng, steps * batch, inp);
    let probe = rand_mat(rng, steps * batch, hidden);
    let (_, cache) = gru.forward(store.flat(), x.view(), batch).unwrap();
    let mut g = store.zeros();
    let dx = gru.backward(store.flat(), &mut g, &cache, &probe);
    let loss = |p: &[f64], x: &Array2<f64>| {
        dot(&gru.forward(p, x.view(), batch).unwrap().0, &probe)
    };
    let mut params = store.flat().to_vec();
    let xs = x.clone();
    let e1 = fd_against(&mut params, &g, |p| loss(p, &xs));
    let p = store.flat().to_vec();
    let e2 = fd_against(x.as_slice_mut().unwrap(), dx.as_slice().unwrap(), |xv| {
        loss(&p, &Array2::from_shape_vec((steps * batch, inp), xv.to_vec()).unwrap())
    });
    nan_max(e1, e2)
}

fn relu_case(rng: &mut ChaCha8Rng) -> f64 {
    let (r, c) = (rng.random_range(1..6), rng.random_range(1..6));
    // keep inputs away from the kink
    let mut x = Array2::from_shape_fn((r, c), |_| {
        let v: f64 = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) { v } else { -v }
    });
    let probe = rand_mat(rng, r, c);
    let dx = relu_backward(&relu(&x), &probe);
    fd_against(x.as_slice_mut().unwrap(), dx.as_slice().unwrap(), |xv| {
        dot(&relu(&Array2::from_shape_vec((r, c), xv.to_vec()).unwrap()), &probe)
    })
}

fn softmax_ce_case(rng: &mut ChaCha8Rng) -> f64 {
    let (rows, classes) = (rng.random_range(1..7), rng.random_range(2..9));
    let mut logits = rand_mat(rng, rows, classes).mapv(|v| 3.0 * v);
    let targets: Vec<usize> = (0..rows).map(|_| rng.random_range(0..classes)).collect();
    let scale = rng.random_range(0.2..2.0);
    let (_, probs) = softmax_cross_entropy(logits.view(), &targets).unwrap();
    let d = softmax_cross_entropy_backward(&probs, &targets, scale);
    fd_against(logits.as_slice_mut().unwrap(), d.as_slice().unwrap(), |lv| {
        let l = Array2::from_shape_vec((rows, classes), lv.to_vec()).unwrap();
        scale * softmax_cross_entropy(l.view(), &targets).unwrap().0
    })
}

fn gaussian_case(rng: &mut ChaCha8Rng) -> f64 {
    let (rows, dim) = (rng.random_range(1..5), rng.random_range(1..7));
    let mut mu = rand_mat(rng, rows, dim);
    let mut ls = rand_mat(rng, rows, dim);
    let eps = rand_mat(rng, rows, dim);
    let probe = rand_mat(rng, rows, dim);
    let scale = rng.random_range(0.2..2.0);
    let loss = |m: &Array2<f64>, l: &Array2<f64>| {
        dot(&reparameterize(m.view(), l.view(), eps.view()).unwrap(), &probe)
            + scale * kl_standard_normal(m.view(), l.view()).sum()
    };
    let (dm1, dl1) = reparameterize_backward(ls.view(), eps.view(), &probe);
    let (dm2, dl2) = kl_standard_normal_backward(mu.view(), ls.view(), scale);
    let dm = dm1 + dm2;
    let dl = dl1 + dl2;
    let lsc = ls.clone();
    let e1 = fd_against(mu.as_slice_mut().unwrap(), dm.as_slice().unwrap(), |v| {
        loss(&Array2::from_shape_vec((rows, dim), v.to_vec()).unwrap(), &lsc)
    });
    let muc = mu.clone();
    let e2 = fd_against(ls.as_slice_mut().unwrap(), dl.as_slice().unwrap(), |v| {
        loss(&muc, &Array2::from_shape_vec((rows, dim), v.to_vec()).unwrap())
    });
    nan_max(e1, e2)
}

pub type Case = fn(&mut ChaCha8Rng) -> f64;

pub const LAYERS: [(&str, Case); 6] = [
    ("linear", linear_case),
    ("conv1d_relu", conv_case),
    ("gru", gru_case),
    ("relu", relu_case),
    ("softmax_cross_entropy", softmax_ce_case),
    ("reparameterize_kl", gaussian_case),
];

/// Runs `shapes` random shapes per layer.
pub fn run_suite(shapes: usize, seed: u64) -> Vec<LayerReport> {
    LAYERS
        .iter()
        .enumerate()
        .map(|(i, (name, case))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed + i as u64);
            let worst = (0..shapes).map(|_| case(&mut rng)).fold(0.0, nan_max);
            LayerReport {
                layer: name,
                shapes,
                max_rel_err: worst,
            }
        })
        .collect()
}
