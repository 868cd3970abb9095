use std::rc::Rc;

use pqos_neuro::layers::inverse_softplus;
use pqos_neuro::{
    elbo_loss, hypoexp_nll, Activation, Adam, AdamConfig, Autoencoder, AutoencoderSpec,
    BayesianDense, GaussianHead, Graph, HypoexpHead, KlMode, LstmCell, NeuroError, Noise,
    ParamStore, SageLayer, Tensor,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn hypoexp_nll_examples() {
    assert!((hypoexp_nll(&[1.0], 1.0).unwrap() - 1.0).abs() < 1e-14);
    assert!((hypoexp_nll(&[1.0, 2.0], 1.0).unwrap() - 0.7655).abs() < 1e-4);
    assert!(matches!(
        hypoexp_nll(&[1.0, 2.0], 0.0),
        Err(NeuroError::Data(_))
    ));
}

#[test]
fn gaussian_nll_examples() {
    let c = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let mut g = Graph::new();
    let mu = g.input(Tensor::column(vec![3.0, 0.0]));
    let sigma = g.input(Tensor::column(vec![2.0, 1.0]));
    let y = g.input(Tensor::column(vec![3.0, 1.0]));
    let nll = g.gaussian_nll(mu, sigma, y);
    assert!((g.value(nll).get(0, 0) - (2f64.ln() + c)).abs() < 1e-15);
    assert!((g.value(nll).get(1, 0) - 1.4189).abs() < 1e-4);
}

#[test]
fn adam_examples() {
    let mut store = ParamStore::new();
    let id = store.add("x", Tensor::new(1, 2, vec![1.0, -2.0]));

    // zero gradient leaves parameters unchanged
    let mut g = Graph::new();
    let x = g.param(&store, id);
    let z = g.scale(x, 0.0);
    let l = g.sum(z);
    let grads = g.backward(l).unwrap();
    let mut adam = Adam::new(AdamConfig {
        lr: 0.1,
        ..Default::default()
    });
    adam.step(&mut store, &grads).unwrap();
    assert_eq!(store.get(id).data(), &[1.0, -2.0]);

    // constant gradient: first update has magnitude lr
    let mut g = Graph::new();
    let x = g.param(&store, id);
    let z = g.scale(x, 3.0);
    let l = g.sum(z);
    let grads = g.backward(l).unwrap();
    let mut adam = Adam::new(AdamConfig {
        lr: 0.1,
        ..Default::default()
    });
    adam.step(&mut store, &grads).unwrap();
    assert!((store.get(id).data()[0] - 0.9).abs() < 1e-8);
    assert!((store.get(id).data()[1] + 2.1).abs() < 1e-8);
}

#[test]
fn adam_converges_on_quadratic_bowl() {
    let target = [3.0, -1.5, 0.25];
    let mut store = ParamStore::new();
    let id = store.add("x", Tensor::zeros(1, 3));
    let mut adam = Adam::new(AdamConfig {
        lr: 0.05,
        ..Default::default()
    });
    let mut steps = 0;
    while steps < 5000 {
        let mut g = Graph::new();
        let x = g.param(&store, id);
        let t = g.input(Tensor::new(1, 3, target.to_vec()));
        let d = g.sub(x, t);
        let d2 = g.square(d);
        let l = g.sum(d2);
        let grads = g.backward(l).unwrap();
        adam.step(&mut store, &grads).unwrap();
        steps += 1;
        let err = store
            .get(id)
            .data()
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if err < 1e-6 {
            break;
        }
    }
    assert!(steps < 5000, "no convergence in 5000 steps");
}

#[test]
fn kl_examples_and_elbo_without_kl() {
    let mut r = rng(3);
    let mut store = ParamStore::new();
    let layer = BayesianDense::new(&mut store, "b", 1, 1, 1.0, 1.0, &mut r);
    store.set(layer.w_mu, Tensor::scalar(1.0));
    let mut g = Graph::new();
    let x = g.input(Tensor::scalar(1.0));
    let (_, kl) = layer.forward(&mut g, &store, x, &mut Noise::Zero);
    // weight contributes 0.5, zero bias at the prior contributes 0
    assert!((g.value(kl).item() - 0.5).abs() < 1e-12);

    let mut g = Graph::new();
    let mut samples = Vec::new();
    let mut nll_sum = 0.0;
    for s in 0..4 {
        let k = g.input(Tensor::scalar(10.0 + s as f64));
        let v = 1.0 / 3.0 + s as f64 * 0.1;
        nll_sum += v;
        let n = g.input(Tensor::scalar(v));
        samples.push((k, n));
    }
    let loss = elbo_loss(&mut g, &samples, 0.0).unwrap();
    assert!((g.value(loss).item() - nll_sum / 4.0).abs() < 1e-10);
    assert!(matches!(
        elbo_loss(&mut g, &[], 1.0),
        Err(NeuroError::Contract(_))
    ));
}

/// One ELBO estimate of a small Bayesian regression.
fn elbo_estimate(store: &ParamStore, layer: &BayesianDense, samples: usize, seed: u64) -> f64 {
    let mut nrng = rng(seed);
    let x_t = Tensor::new(4, 2, vec![0.5, -1.0, 1.0, 0.3, -0.2, 0.8, 1.5, -0.5]);
    let y_t = Tensor::column(vec![1.0, 0.2, -0.4, 0.9]);
    let mut g = Graph::new();
    let mut terms = Vec::new();
    for _ in 0..samples {
        let x = g.input(x_t.clone());
        let y = g.input(y_t.clone());
        let (pred, kl) = layer.forward(&mut g, store, x, &mut Noise::Sample(&mut nrng));
        let sigma = g.input(Tensor::filled(4, 1, 0.5));
        let nll = g.gaussian_nll(pred, sigma, y);
        let nll = g.mean(nll);
        terms.push((kl, nll));
    }
    let l = elbo_loss(&mut g, &terms, 0.1).unwrap();
    g.value(l).item()
}

#[test]
fn more_mc_samples_reduce_estimator_variance() {
    let mut r = rng(11);
    let mut store = ParamStore::new();
    let mut layer = BayesianDense::new(&mut store, "b", 2, 1, 1.0, 0.4, &mut r);
    layer.kl_mode = KlMode::MonteCarlo;
    let var = |k: usize| {
        let v: Vec<f64> = (0..100)
            .map(|i| elbo_estimate(&store, &layer, k, 1000 + i))
            .collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    let (v1, v64) = (var(1), var(64));
    assert!(v64 < v1, "var(64) = {v64} ≥ var(1) = {v1}");
}

#[test]
fn kl_minimized_at_prior() {
    let mut r = rng(5);
    let mut store = ParamStore::new();
    let layer = BayesianDense::new(&mut store, "b", 2, 2, 0.8, 0.2, &mut r);
    let mut adam = Adam::new(AdamConfig {
        lr: 0.02,
        ..Default::default()
    });
    for _ in 0..3000 {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(1, 2));
        let (_, kl) = layer.forward(&mut g, &store, x, &mut Noise::Zero);
        let grads = g.backward(kl).unwrap();
        adam.step(&mut store, &grads).unwrap();
    }
    for id in [layer.w_mu, layer.b_mu] {
        assert!(store.get(id).data().iter().all(|m| m.abs() < 1e-3));
    }
    let rho = inverse_softplus(0.8);
    for id in [layer.w_rho, layer.b_rho] {
        assert!(store.get(id).data().iter().all(|p| (p - rho).abs() < 1e-3));
    }
}

#[test]
fn lstm_behavior() {
    let mut r = rng(8);
    let mut store = ParamStore::new();
    let cell = LstmCell::new(&mut store, "l", 3, 5, &mut r);
    let mut g = Graph::new();
    let xs: Vec<_> = (0..6)
        .map(|_| {
            let t = Tensor::new(4, 3, (0..12).map(|_| r.random_range(-3.0..3.0)).collect());
            g.input(t)
        })
        .collect();
    let h = cell.forward(&mut g, &store, &xs).unwrap();
    assert!(g.value(h).data().iter().all(|v| v.abs() < 1.0));
    assert!(matches!(
        cell.forward(&mut g, &store, &[]),
        Err(NeuroError::Contract(_))
    ));

    for id in [cell.wx, cell.wh, cell.b] {
        let [a, b] = store.get(id).shape();
        store.set(id, Tensor::zeros(a, b));
    }
    let mut g = Graph::new();
    let xs: Vec<_> = (0..6).map(|_| g.input(Tensor::filled(4, 3, 2.0))).collect();
    let h = cell.forward(&mut g, &store, &xs).unwrap();
    assert!(g.value(h).data().iter().all(|&v| v == 0.0));
}

#[test]
fn sage_without_edges_is_self_dense() {
    let mut r = rng(9);
    let mut store = ParamStore::new();
    let sage = SageLayer::new(&mut store, "s", 3, 2, Activation::Identity, &mut r);
    let h_t = Tensor::new(3, 3, (0..9).map(|i| i as f64 * 0.3 - 1.0).collect());
    let mut g = Graph::new();
    let h = g.input(h_t.clone());
    let y = sage
        .forward(&mut g, &store, h, &Rc::new(vec![vec![]; 3]))
        .unwrap();
    assert_eq!(g.value(y), &h_t.matmul(store.get(sage.w_self)));

    // identical features on a two-node graph give identical outputs
    let mut g = Graph::new();
    let h = g.input(Tensor::new(2, 3, vec![0.2, -0.3, 0.9, 0.2, -0.3, 0.9]));
    let y = sage
        .forward(&mut g, &store, h, &Rc::new(vec![vec![1], vec![0]]))
        .unwrap();
    assert_eq!(g.value(y).row(0), g.value(y).row(1));

    let mut g = Graph::new();
    let h = g.input(Tensor::zeros(4, 3));
    assert!(matches!(
        sage.forward(&mut g, &store, h, &Rc::new(vec![vec![]; 3])),
        Err(NeuroError::Shape(_))
    ));
}

#[test]
fn autoencoder_rejects_wide_bottleneck() {
    let mut store = ParamStore::new();
    let spec = AutoencoderSpec {
        input_dim: 4,
        hidden: vec![],
        bottleneck: 4,
        activation: Activation::Tanh,
    };
    assert!(matches!(
        Autoencoder::new(&mut store, "ae", spec, &mut rng(1)),
        Err(NeuroError::Spec(_))
    ));
}

#[test]
fn gaussian_head_scale_positive() {
    let mut g = Graph::new();
    let raw = g.input(Tensor::new(2, 2, vec![0.0, -50.0, 1.0, 3.0]));
    let (_, s) = GaussianHead.forward(&mut g, raw);
    assert!(g.value(s).data().iter().all(|&v| v > 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sage_is_permutation_equivariant(seed in any::<u64>(), n in 2usize..7) {
        let mut r = rng(seed);
        let mut store = ParamStore::new();
        let sage = SageLayer::new(&mut store, "s", 3, 4, Activation::Tanh, &mut r);
        let mut nbrs = vec![Vec::new(); n];
        for a in 0..n {
            for b in a + 1..n {
                if r.random_bool(0.5) {
                    nbrs[a].push(b);
                    nbrs[b].push(a);
                }
            }
        }
        let h = Tensor::new(n, 3, (0..3 * n).map(|_| r.random_range(-1.0..1.0)).collect());
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        // node v of the permuted graph is node perm[v] of the original
        let mut inv = vec![0; n];
        for (v, &p) in perm.iter().enumerate() {
            inv[p] = v;
        }
        let pnbrs: Vec<Vec<usize>> = perm
            .iter()
            .map(|&p| {
                let mut l: Vec<usize> = nbrs[p].iter().map(|&u| inv[u]).collect();
                l.sort_unstable();
                l
            })
            .collect();
        let ph = Tensor::from_rows(&perm.iter().map(|&p| h.row(p).to_vec()).collect::<Vec<_>>());

        let mut g = Graph::new();
        let hv = g.input(h);
        let y = sage.forward(&mut g, &store, hv, &Rc::new(nbrs)).unwrap();
        let phv = g.input(ph);
        let py = sage.forward(&mut g, &store, phv, &Rc::new(pnbrs)).unwrap();
        for (v, &p) in perm.iter().enumerate() {
            for (a, b) in g.value(py).row(v).iter().zip(g.value(y).row(p)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kl_nonnegative(mu in -3.0f64..3.0, rho in -5.0f64..3.0, prior in 0.1f64..3.0) {
        let mut store = ParamStore::new();
        let layer = BayesianDense::new(&mut store, "b", 1, 1, prior, 0.5, &mut rng(0));
        store.set(layer.w_mu, Tensor::scalar(mu));
        store.set(layer.w_rho, Tensor::scalar(rho));
        let mut g = Graph::new();
        let x = g.input(Tensor::scalar(1.0));
        let (_, kl) = layer.forward(&mut g, &store, x, &mut Noise::Zero);
        prop_assert!(g.value(kl).item() >= -1e-12);
    }

    #[test]
    fn head_rates_strictly_increasing(raw in proptest::collection::vec(-40.0f64..40.0, 4)) {
        let head = HypoexpHead::new(4, false).unwrap();
        let mut g = Graph::new();
        let r = g.input(Tensor::new(1, 4, raw));
        let out = head.forward(&mut g, r);
        let rates = g.value(out.rates).row(0).to_vec();
        prop_assert!(rates[0] > 0.0);
        prop_assert!(rates.windows(2).all(|w| w[1] > w[0]));
    }
}
