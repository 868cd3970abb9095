//! Central finite-difference checks of [`Graph::backward`].

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::layers::{
    Activation, Autoencoder, AutoencoderSpec, BayesianDense, Dense, GaussianHead, HypoexpHead,
    KlMode, LstmCell, Noise, SageLayer,
};
use crate::{Graph, NeuroError, ParamStore, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

const FLOOR: f64 = 1e-3;

/// Largest relative error between analytic and central-difference
/// gradients of the scalar `loss` over all entries of all parameters.
pub fn check_param_gradients<F>(store: &mut ParamStore, loss: F) -> Result<f64, NeuroError>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var, NeuroError>,
{
    let mut g = Graph::new();
    let l = loss(&mut g, store)?;
    let grads = g.backward(l)?;
    let ids: Vec<_> = store.ids().collect();
    let mut worst = 0.0f64;
    for id in ids {
        let analytic = grads
            .param(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(store.get(id).rows(), store.get(id).cols()));
        for k in 0..analytic.len() {
            let orig = store.get(id).data()[k];
            let mut eval = |x: f64| -> Result<f64, NeuroError> {
                store.get_mut(id).data_mut()[k] = x;
                let mut g = Graph::new();
                let l = loss(&mut g, store)?;
                Ok(g.value(l).item())
            };
            let num = (eval(orig + FD_STEP)? - eval(orig - FD_STEP)?) / (2.0 * FD_STEP);
            store.get_mut(id).data_mut()[k] = orig;
            worst = worst.max(relative_error(analytic.data()[k], num, FLOOR));
        }
    }
    Ok(worst)
}

/// As [`check_param_gradients`] with respect to leaf inputs.
pub fn check_leaf_gradients<F>(inputs: &[Tensor], loss: F) -> Result<f64, NeuroError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, NeuroError>,
{
    let run = |vals: &[Tensor]| -> Result<(Graph, Vec<Var>, Var), NeuroError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.leaf(t.clone())).collect();
        let l = loss(&mut g, &vars)?;
        Ok((g, vars, l))
    };
    let (g, vars, l) = run(inputs)?;
    let grads = g.backward(l)?;
    let mut vals = inputs.to_vec();
    let mut worst = 0.0f64;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads
            .wrt(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].rows(), inputs[i].cols()));
        for k in 0..analytic.len() {
            let orig = vals[i].data()[k];
            vals[i].data_mut()[k] = orig + FD_STEP;
            let (g, _, l) = run(&vals)?;
            let up = g.value(l).item();
            vals[i].data_mut()[k] = orig - FD_STEP;
            let (g, _, l) = run(&vals)?;
            let down = g.value(l).item();
            vals[i].data_mut()[k] = orig;
            let num = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic.data()[k], num, FLOOR));
        }
    }
    Ok(worst)
}

/// Worst relative gradient error of one layer type over all draws.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub max_rel_err: f64,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::new(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect(),
    )
}

fn randomize(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let [r, c] = store.get(id).shape();
        let t = if store.name(id).ends_with("_rho") {
            uniform(rng, r, c, -3.0, 0.5)
        } else {
            uniform(rng, r, c, -0.8, 0.8)
        };
        store.set(id, t);
    }
}

fn sum_sq(g: &mut Graph, v: Var) -> Var {
    let s = g.square(v);
    g.sum(s)
}

fn random_neighbors(rng: &mut ChaCha8Rng, n: usize) -> Rc<Vec<Vec<usize>>> {
    let mut nbrs = vec![Vec::new(); n];
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(0.4) {
                nbrs[a].push(b);
                nbrs[b].push(a);
            }
        }
    }
    Rc::new(nbrs)
}

/// Finite-difference check of every layer type and both likelihood heads
/// at `draws` random parameter draws each.
pub fn layer_gradient_suite(draws: usize, seed: u64) -> Result<Vec<SuiteResult>, NeuroError> {
    let mut results: Vec<SuiteResult> = Vec::new();
    let mut record =
        |name: &'static str, err: f64| match results.iter_mut().find(|r| r.name == name) {
            Some(r) => r.max_rel_err = r.max_rel_err.max(err),
            None => results.push(SuiteResult {
                name,
                max_rel_err: err,
            }),
        };

    for d in 0..draws as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1000).wrapping_add(d));

        // dense, 8×4 input
        let mut store = ParamStore::new();
        let dense = Dense::new(&mut store, "dense", 4, 3, &mut rng);
        randomize(&mut store, &mut rng);
        let x = uniform(&mut rng, 8, 4, -1.0, 1.0);
        let err = check_param_gradients(&mut store, |g, s| {
            let xv = g.input(x.clone());
            let y = dense.forward(g, s, xv);
            let y = g.tanh(y);
            Ok(sum_sq(g, y))
        })?;
        let st = store.clone();
        let err_in = check_leaf_gradients(std::slice::from_ref(&x), |g, v| {
            let y = dense.forward(g, &st, v[0]);
            let y = g.tanh(y);
            Ok(sum_sq(g, y))
        })?;
        record("dense", err.max(err_in));

        // Bayesian dense, both KL modes, frozen noise
        for mode in [KlMode::ClosedForm, KlMode::MonteCarlo] {
            let mut store = ParamStore::new();
            let mut layer = BayesianDense::new(&mut store, "bayes", 4, 3, 0.7, 0.1, &mut rng);
            layer.kl_mode = mode;
            randomize(&mut store, &mut rng);
            let x = uniform(&mut rng, 6, 4, -1.0, 1.0);
            let noise_seed = rng.random::<u64>();
            let err = check_param_gradients(&mut store, |g, s| {
                let mut nrng = ChaCha8Rng::seed_from_u64(noise_seed);
                let xv = g.input(x.clone());
                let (y, kl) = layer.forward(g, s, xv, &mut Noise::Sample(&mut nrng));
                let l = sum_sq(g, y);
                Ok(g.add(l, kl))
            })?;
            record(
                match mode {
                    KlMode::ClosedForm => "bayesian_dense",
                    KlMode::MonteCarlo => "bayesian_dense_mc_kl",
                },
                err,
            );
        }

        // LSTM unrolled 5 and 10 steps
        for steps in [5usize, 10] {
            let mut store = ParamStore::new();
            let cell = LstmCell::new(&mut store, "lstm", 3, 4, &mut rng);
            randomize(&mut store, &mut rng);
            let xs: Vec<Tensor> = (0..steps)
                .map(|_| uniform(&mut rng, 2, 3, -1.0, 1.0))
                .collect();
            let err = check_param_gradients(&mut store, |g, s| {
                let vars: Vec<Var> = xs.iter().map(|t| g.input(t.clone())).collect();
                let h = cell.forward(g, s, &vars)?;
                Ok(sum_sq(g, h))
            })?;
            record(
                if steps == 5 {
                    "lstm_5_steps"
                } else {
                    "lstm_10_steps"
                },
                err,
            );
        }

        // sage over two stacked snapshots of a random graph
        let mut store = ParamStore::new();
        let sage = SageLayer::new(&mut store, "sage", 3, 4, Activation::Tanh, &mut rng);
        randomize(&mut store, &mut rng);
        let nbrs = random_neighbors(&mut rng, 5);
        let h = uniform(&mut rng, 10, 3, -1.0, 1.0);
        let err = check_param_gradients(&mut store, |g, s| {
            let hv = g.input(h.clone());
            let y = sage.forward(g, s, hv, &nbrs)?;
            Ok(sum_sq(g, y))
        })?;
        let st = store.clone();
        let err_in = check_leaf_gradients(std::slice::from_ref(&h), |g, v| {
            let y = sage.forward(g, &st, v[0], &nbrs)?;
            Ok(sum_sq(g, y))
        })?;
        record("sage", err.max(err_in));

        // autoencoder
        let mut store = ParamStore::new();
        let spec = AutoencoderSpec {
            input_dim: 5,
            hidden: vec![4],
            bottleneck: 2,
            activation: Activation::Tanh,
        };
        let ae = Autoencoder::new(&mut store, "ae", spec, &mut rng)?;
        randomize(&mut store, &mut rng);
        let x = uniform(&mut rng, 7, 5, -1.0, 1.0);
        let err = check_param_gradients(&mut store, |g, s| {
            let xv = g.input(x.clone());
            let e = ae.reconstruction_error(g, s, xv);
            Ok(g.mean(e))
        })?;
        record("autoencoder", err);

        // Hypoexponential head with shift, rates and shift from raw leaves
        let n = 2 + (d as usize % 3);
        let head = HypoexpHead::new(n, true)?;
        let mut raw = uniform(&mut rng, 6, n + 1, -1.0, 1.0);
        for r in 0..6 {
            raw.data_mut()[r * (n + 1) + n] = rng.random_range(-3.0..-1.0);
        }
        let y = uniform(&mut rng, 6, 1, 0.6, 6.0);
        let err = check_leaf_gradients(&[raw, y], |g, v| {
            let out = head.forward(g, v[0]);
            let nll = head.nll(g, out, v[1], 1e-3)?;
            Ok(g.sum(nll))
        })?;
        record("hypoexp_head", err);

        // Gaussian head
        let raw = uniform(&mut rng, 6, 2, -1.5, 1.5);
        let y = uniform(&mut rng, 6, 1, -2.0, 2.0);
        let err = check_leaf_gradients(&[raw, y], |g, v| {
            let nll = GaussianHead.nll(g, v[0], v[1]);
            Ok(g.sum(nll))
        })?;
        record("gaussian_head", err);
    }
    Ok(results)
}
