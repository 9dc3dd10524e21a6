use ndarray::{Array1, Array2};
use qovae_core::nn::layers::{relu, softmax_cross_entropy, softmax_rows, Conv1d, Gru, Linear};
use qovae_core::nn::params::ParamStore;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

#[test]
fn conv_matches_direct_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let (batch, steps, channels, filters, width) = (3, 9, 5, 4, 3);
    let conv = Conv1d::new(&mut store, "c", channels, filters, width, &mut rng);
    let x = random(batch * steps, channels, &mut rng);
    let (y, _) = conv.forward(store.flat(), x.view(), batch).unwrap();
    let w = conv.w.slice(store.flat());
    let b = conv.b.slice(store.flat());
    let t_out = steps - width + 1;
    for s in 0..batch {
        for t in 0..t_out {
            for f in 0..filters {
                let mut acc = b[f];
                for l in 0..width {
                    for d in 0..channels {
                        acc += w[(f * width + l) * channels + d] * x[[s * steps + t + l, d]];
                    }
                }
                assert!((y[[s * t_out + t, f]] - acc.max(0.0)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn width_one_selector_conv_is_relu() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let conv = Conv1d::new(&mut store, "c", 4, 4, 1, &mut rng);
    let p = store.flat_mut();
    conv.b.slice_mut(p).fill(0.0);
    let w = conv.w.slice_mut(p);
    w.fill(0.0);
    for i in 0..4 {
        w[i * 4 + i] = 1.0;
    }
    let x = random(12, 4, &mut rng);
    let (y, _) = conv.forward(store.flat(), x.view(), 2).unwrap();
    assert_eq!(y, relu(&x));
}

#[test]
fn gru_settles_under_constant_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let (input, hidden, steps) = (3, 6, 200);
    let gru = Gru::new(&mut store, "g", input, hidden, &mut rng);
    // Small recurrent weights keep the step map a contraction.
    for v in gru.u.slice_mut(store.flat_mut()) {
        *v *= 0.1;
    }
    let row = random(1, input, &mut rng);
    let x = Array2::from_shape_fn((steps, input), |(_, j)| row[[0, j]]);
    let (h, _) = gru.forward(store.flat(), x.view(), 1).unwrap();
    let deltas: Vec<f64> = (1..steps)
        .map(|t| (&h.row(t) - &h.row(t - 1)).mapv(|v| v * v).sum().sqrt())
        .collect();
    for pair in deltas.windows(2).skip(1) {
        assert!(pair[1] <= pair[0] + 1e-15, "{pair:?}");
    }
    assert!(*deltas.last().unwrap() < 1e-10);
}

#[test]
fn stacked_linear_matches_manual_affine_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let dims = [5, 7, 6, 3];
    let layers: Vec<Linear> = dims
        .windows(2)
        .enumerate()
        .map(|(i, w)| Linear::new(&mut store, &format!("l{i}"), w[0], w[1], &mut rng))
        .collect();
    let x = random(4, 5, &mut rng);
    let p = store.flat();
    let mut h = x.clone();
    for (i, l) in layers.iter().enumerate() {
        h = l.forward(p, h.view()).unwrap();
        if i + 1 < layers.len() {
            h = relu(&h);
        }
    }
    let mut m = x;
    for (i, l) in layers.iter().enumerate() {
        let w = l.w.mat(p);
        let b = l.b.vec(p);
        let mut next = Array2::zeros((m.nrows(), l.output));
        for r in 0..m.nrows() {
            for o in 0..l.output {
                let mut acc = b[o];
                for k in 0..l.input {
                    acc += w[[o, k]] * m[[r, k]];
                }
                next[[r, o]] = if i + 1 < layers.len() { acc.max(0.0) } else { acc };
            }
        }
        m = next;
    }
    assert!((&h - &m).iter().all(|d| d.abs() < 1e-12));
}

#[test]
fn softmax_ignores_shifts() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(6, 9, &mut rng) * 20.0;
    let a = softmax_rows(x.view());
    for c in [-700.0, -3.5, 0.25, 800.0] {
        let b = softmax_rows((&x + c).view());
        assert!((&a - &b).iter().all(|d| d.abs() < 1e-12));
    }
    let u = softmax_rows(Array2::zeros((1, 3)).view());
    assert!(u.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
}

#[test]
fn gradients_scale_with_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "l", 4, 5, &mut rng);
    let x = random(3, 4, &mut rng);
    let targets = [0, 4, 2];
    let logits = lin.forward(store.flat(), x.view()).unwrap();
    let (_, probs) = softmax_cross_entropy(logits.view(), &targets).unwrap();
    let grads = |scale: f64| {
        let dy = qovae_core::nn::layers::softmax_cross_entropy_backward(&probs, &targets, scale);
        let mut g = store.zeros();
        let dx = lin.backward(store.flat(), &mut g, x.view(), &dy);
        (Array1::from(g), dx)
    };
    let (g1, dx1) = grads(1.0);
    let (g3, dx3) = grads(-2.5);
    assert!((&g1 * -2.5 - &g3).iter().all(|d| d.abs() < 1e-12));
    assert!((&dx1 * -2.5 - &dx3).iter().all(|d| d.abs() < 1e-12));
}

#[test]
fn constant_loss_has_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    let conv = Conv1d::new(&mut store, "c", 3, 2, 2, &mut rng);
    let gru = Gru::new(&mut store, "g", 2, 4, &mut rng);
    let x = random(10, 3, &mut rng);
    let (y, cc) = conv.forward(store.flat(), x.view(), 2).unwrap();
    let (h, gc) = gru.forward(store.flat(), y.view(), 2).unwrap();
    let mut g = store.zeros();
    let dy = gru.backward(store.flat(), &mut g, &gc, &Array2::zeros(h.raw_dim()));
    let dx = conv.backward(store.flat(), &mut g, &cc, &dy);
    assert!(g.iter().all(|&v| v == 0.0));
    assert!(dx.iter().all(|&v| v == 0.0));
}
