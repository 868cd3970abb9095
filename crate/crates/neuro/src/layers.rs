//! Layers built on [`Graph`] operations. Layers only hold [`ParamId`]s;
//! values live in a [`ParamStore`].

use std::rc::Rc;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Graph, NeuroError, ParamId, ParamStore, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
            Activation::Sigmoid => g.sigmoid(x),
        }
    }
}

/// Affine map `x·W + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add_glorot(format!("{name}.w"), in_dim, out_dim, rng);
        let b = store.add(format!("{name}.b"), Tensor::zeros(1, out_dim));
        Self {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let xw = g.matmul(x, w);
        g.add_row(xw, b)
    }
}

/// Source of the reparametrization noise of Bayesian layers.
pub enum Noise<'a> {
    Sample(&'a mut dyn RngCore),
    /// `ε = 0`: the layer uses its posterior means.
    Zero,
}

impl Noise<'_> {
    pub fn draw(&mut self, rows: usize, cols: usize) -> Tensor {
        match self {
            Noise::Sample(rng) => {
                let data = (0..rows * cols)
                    .map(|_| StandardNormal.sample(&mut **rng))
                    .collect();
                Tensor::new(rows, cols, data)
            }
            Noise::Zero => Tensor::zeros(rows, cols),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlMode {
    #[default]
    ClosedForm,
    /// Single-sample estimate `log q(w) − log p(w)` at the drawn weights.
    MonteCarlo,
}

/// Dense layer with a diagonal Gaussian posterior over weights and biases,
/// `w = μ + softplus(ρ)·ε`, and prior `N(0, prior_sigma²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesianDense {
    pub w_mu: ParamId,
    pub w_rho: ParamId,
    pub b_mu: ParamId,
    pub b_rho: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
    pub prior_sigma: f64,
    pub kl_mode: KlMode,
}

/// `ρ` with `softplus(ρ) = σ`.
pub fn inverse_softplus(sigma: f64) -> f64 {
    sigma + (-(-sigma).exp_m1()).ln()
}

impl BayesianDense {
    /// Glorot means and posterior stddev `init_sigma` everywhere.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        prior_sigma: f64,
        init_sigma: f64,
        rng: &mut R,
    ) -> Self {
        assert!(prior_sigma > 0.0 && init_sigma > 0.0);
        let rho = inverse_softplus(init_sigma);
        let w_mu = store.add_glorot(format!("{name}.w_mu"), in_dim, out_dim, rng);
        let w_rho = store.add(
            format!("{name}.w_rho"),
            Tensor::filled(in_dim, out_dim, rho),
        );
        let b_mu = store.add(format!("{name}.b_mu"), Tensor::zeros(1, out_dim));
        let b_rho = store.add(format!("{name}.b_rho"), Tensor::filled(1, out_dim, rho));
        Self {
            w_mu,
            w_rho,
            b_mu,
            b_rho,
            in_dim,
            out_dim,
            prior_sigma,
            kl_mode: KlMode::ClosedForm,
        }
    }

    /// Sampled affine map and the layer's KL term (1×1).
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        noise: &mut Noise,
    ) -> (Var, Var) {
        let (w, kl_w) = self.sample(g, store, self.w_mu, self.w_rho, noise);
        let (b, kl_b) = self.sample(g, store, self.b_mu, self.b_rho, noise);
        let xw = g.matmul(x, w);
        let y = g.add_row(xw, b);
        (y, g.add(kl_w, kl_b))
    }

    fn sample(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        mu: ParamId,
        rho: ParamId,
        noise: &mut Noise,
    ) -> (Var, Var) {
        let [r, c] = store.get(mu).shape();
        let eps_t = noise.draw(r, c);
        let mu = g.param(store, mu);
        let rho = g.param(store, rho);
        let sigma = g.softplus(rho);
        let eps_sq_half: f64 = eps_t.data().iter().map(|e| 0.5 * e * e).sum();
        let eps = g.input(eps_t);
        let se = g.mul(sigma, eps);
        let w = g.add(mu, se);
        let sp = self.prior_sigma;
        let count = (r * c) as f64;
        let log_sq = g.log(sigma);
        let kl = match self.kl_mode {
            KlMode::ClosedForm => {
                let s2 = g.square(sigma);
                let m2 = g.square(mu);
                let t = g.add(s2, m2);
                let t = g.scale(t, 0.5 / (sp * sp));
                let t = g.sub(t, log_sq);
                let t = g.sum(t);
                g.add_scalar(t, count * (sp.ln() - 0.5))
            }
            KlMode::MonteCarlo => {
                let w2 = g.square(w);
                let t = g.scale(w2, 0.5 / (sp * sp));
                let t = g.sub(t, log_sq);
                let t = g.sum(t);
                g.add_scalar(t, count * sp.ln() - eps_sq_half)
            }
        };
        (w, kl)
    }

    pub fn scalar_count(&self) -> usize {
        2 * (self.in_dim + 1) * self.out_dim
    }
}

/// Positive, strictly increasing rates from `n_stages` raw outputs, plus an
/// optional per-row location shift from one extra raw output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypoexpHead {
    pub n_stages: usize,
    pub shifted: bool,
    pub min_increment: f64,
}

/// Rates (B×n) and shift (B×1) of a [`HypoexpHead`].
#[derive(Debug, Clone, Copy)]
pub struct HypoexpOutput {
    pub rates: Var,
    pub shift: Option<Var>,
}

impl HypoexpHead {
    pub fn new(n_stages: usize, shifted: bool) -> Result<Self, NeuroError> {
        if !(2..=4).contains(&n_stages) {
            return Err(NeuroError::Spec(format!(
                "n_stages must be in [2, 4], got {n_stages}"
            )));
        }
        Ok(Self {
            n_stages,
            shifted,
            min_increment: 1e-4,
        })
    }

    /// Number of raw inputs consumed.
    pub fn width(&self) -> usize {
        self.n_stages + usize::from(self.shifted)
    }

    pub fn forward(&self, g: &mut Graph, raw: Var) -> HypoexpOutput {
        let n = self.n_stages;
        let r = g.slice_cols(raw, 0, n);
        let inc = g.softplus(r);
        let inc = g.add_scalar(inc, self.min_increment);
        let rates = g.cumsum_cols(inc);
        let shift = self.shifted.then(|| {
            let s = g.slice_cols(raw, n, n + 1);
            g.softplus(s)
        });
        HypoexpOutput { rates, shift }
    }

    /// Per-row NLL of `y` (B×1); see [`Graph::hypoexp_nll`] for `z_min`.
    pub fn nll(
        &self,
        g: &mut Graph,
        out: HypoexpOutput,
        y: Var,
        z_min: f64,
    ) -> Result<Var, NeuroError> {
        let z = match out.shift {
            Some(s) => g.sub(y, s),
            None => y,
        };
        g.hypoexp_nll(out.rates, z, z_min)
    }
}

/// Gaussian mean (linear) and scale (softplus) from two raw outputs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GaussianHead;

impl GaussianHead {
    pub const WIDTH: usize = 2;

    pub fn forward(&self, g: &mut Graph, raw: Var) -> (Var, Var) {
        let mu = g.slice_cols(raw, 0, 1);
        let s = g.slice_cols(raw, 1, 2);
        let s = g.softplus(s);
        (mu, g.add_scalar(s, 1e-6))
    }

    pub fn nll(&self, g: &mut Graph, raw: Var, y: Var) -> Var {
        let (mu, sigma) = self.forward(g, raw);
        g.gaussian_nll(mu, sigma, y)
    }
}

/// Standard LSTM cell with gate order input, forget, output, candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmCell {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl LstmCell {
    /// Forget-gate bias starts at 1.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let wx = store.add_glorot(format!("{name}.wx"), input_dim, 4 * hidden, rng);
        let wh = store.add_glorot(format!("{name}.wh"), hidden, 4 * hidden, rng);
        let mut bias = Tensor::zeros(1, 4 * hidden);
        bias.data_mut()[hidden..2 * hidden].fill(1.0);
        let b = store.add(format!("{name}.b"), bias);
        Self {
            wx,
            wh,
            b,
            input_dim,
            hidden,
        }
    }

    /// One step; returns `(h, c)`.
    pub fn step(&self, g: &mut Graph, store: &ParamStore, x: Var, h: Var, c: Var) -> (Var, Var) {
        let hd = self.hidden;
        let wx = g.param(store, self.wx);
        let wh = g.param(store, self.wh);
        let b = g.param(store, self.b);
        let zx = g.matmul(x, wx);
        let zh = g.matmul(h, wh);
        let z = g.add(zx, zh);
        let z = g.add_row(z, b);
        let i = g.slice_cols(z, 0, hd);
        let i = g.sigmoid(i);
        let f = g.slice_cols(z, hd, 2 * hd);
        let f = g.sigmoid(f);
        let o = g.slice_cols(z, 2 * hd, 3 * hd);
        let o = g.sigmoid(o);
        let cand = g.slice_cols(z, 3 * hd, 4 * hd);
        let cand = g.tanh(cand);
        let fc = g.mul(f, c);
        let ic = g.mul(i, cand);
        let c_next = g.add(fc, ic);
        let tc = g.tanh(c_next);
        (g.mul(o, tc), c_next)
    }

    /// Final hidden state after the sequence, from zero initial states.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        xs: &[Var],
    ) -> Result<Var, NeuroError> {
        let Some(&first) = xs.first() else {
            return Err(NeuroError::Contract("empty input sequence".into()));
        };
        let rows = g.value(first).rows();
        let mut h = g.input(Tensor::zeros(rows, self.hidden));
        let mut c = g.input(Tensor::zeros(rows, self.hidden));
        for &x in xs {
            let cols = g.value(x).cols();
            if cols != self.input_dim || g.value(x).rows() != rows {
                return Err(NeuroError::Shape(format!(
                    "lstm step input is {:?}, expected [{rows}, {}]",
                    g.value(x).shape(),
                    self.input_dim
                )));
            }
            (h, c) = self.step(g, store, x, h, c);
        }
        Ok(h)
    }

    pub fn scalar_count(&self) -> usize {
        (self.input_dim + self.hidden + 1) * 4 * self.hidden
    }
}

/// `act(H·W_self + mean_nbr(H)·W_nbr + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SageLayer {
    pub w_self: ParamId,
    pub w_nbr: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl SageLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let w_self = store.add_glorot(format!("{name}.w_self"), in_dim, out_dim, rng);
        let w_nbr = store.add_glorot(format!("{name}.w_nbr"), in_dim, out_dim, rng);
        let b = store.add(format!("{name}.b"), Tensor::zeros(1, out_dim));
        Self {
            w_self,
            w_nbr,
            b,
            in_dim,
            out_dim,
            activation,
        }
    }

    /// `h` stacks one or more snapshots of `neighbors.len()` node rows.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        h: Var,
        neighbors: &Rc<Vec<Vec<usize>>>,
    ) -> Result<Var, NeuroError> {
        let [rows, cols] = g.value(h).shape();
        let n = neighbors.len();
        if n == 0 || rows % n != 0 || cols != self.in_dim {
            return Err(NeuroError::Shape(format!(
                "sage input {:?} vs {n} nodes × {} features",
                [rows, cols],
                self.in_dim
            )));
        }
        let ws = g.param(store, self.w_self);
        let wn = g.param(store, self.w_nbr);
        let b = g.param(store, self.b);
        let agg = g.mean_aggregate(h, Rc::clone(neighbors));
        let a = g.matmul(h, ws);
        let m = g.matmul(agg, wn);
        let z = g.add(a, m);
        let z = g.add_row(z, b);
        Ok(self.activation.apply(g, z))
    }

    pub fn scalar_count(&self) -> usize {
        (2 * self.in_dim + 1) * self.out_dim
    }
}

/// Feed-forward stack with one activation on all hidden layers and a
/// linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

impl Mlp {
    /// `dims = [input, hidden…, output]`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| Dense::new(store, &format!("{name}.{i}"), d[0], d[1], rng))
            .collect();
        Self { layers, activation }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, store, h);
            if i < last {
                h = self.activation.apply(g, h);
            }
        }
        h
    }

    pub fn scalar_count(&self) -> usize {
        self.layers.iter().map(|l| (l.in_dim + 1) * l.out_dim).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoencoderSpec {
    pub input_dim: usize,
    /// Encoder hidden widths; the decoder mirrors them.
    #[serde(default)]
    pub hidden: Vec<usize>,
    pub bottleneck: usize,
    #[serde(default = "default_ae_activation")]
    pub activation: Activation,
}

fn default_ae_activation() -> Activation {
    Activation::Tanh
}

/// Symmetric autoencoder with a linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Autoencoder {
    pub spec: AutoencoderSpec,
    pub encoder: Vec<Dense>,
    pub decoder: Vec<Dense>,
}

impl Autoencoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        spec: AutoencoderSpec,
        rng: &mut R,
    ) -> Result<Self, NeuroError> {
        if spec.bottleneck == 0 || spec.bottleneck >= spec.input_dim {
            return Err(NeuroError::Spec(format!(
                "bottleneck {} must be in [1, input_dim = {})",
                spec.bottleneck, spec.input_dim
            )));
        }
        if spec.hidden.contains(&0) {
            return Err(NeuroError::Spec("hidden widths must be positive".into()));
        }
        let mut dims = vec![spec.input_dim];
        dims.extend(&spec.hidden);
        dims.push(spec.bottleneck);
        let enc = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| Dense::new(store, &format!("{name}.enc{i}"), d[0], d[1], rng))
            .collect();
        dims.reverse();
        let dec = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| Dense::new(store, &format!("{name}.dec{i}"), d[0], d[1], rng))
            .collect();
        Ok(Self {
            spec,
            encoder: enc,
            decoder: dec,
        })
    }

    fn stack(&self, layers: &[Dense], g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let last = layers.len() - 1;
        let mut h = x;
        for (i, layer) in layers.iter().enumerate() {
            h = layer.forward(g, store, h);
            if i < last {
                h = self.spec.activation.apply(g, h);
            }
        }
        h
    }

    pub fn encode(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        self.stack(&self.encoder, g, store, x)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let code = self.encode(g, store, x);
        let code = self.spec.activation.apply(g, code);
        self.stack(&self.decoder, g, store, code)
    }

    /// Per-row squared reconstruction error (B×1).
    pub fn reconstruction_error(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let recon = self.forward(g, store, x);
        let d = g.sub(recon, x);
        let d2 = g.square(d);
        g.row_sum(d2)
    }
}

/// `kl_weight · mean(KL) + mean(NLL)` over Monte Carlo samples, each given
/// as `(kl, nll)` scalars. Minimizing it maximizes the evidence lower bound.
pub fn elbo_loss(g: &mut Graph, samples: &[(Var, Var)], kl_weight: f64) -> Result<Var, NeuroError> {
    if samples.is_empty() {
        return Err(NeuroError::Contract(
            "elbo needs at least one sample".into(),
        ));
    }
    let inv = 1.0 / samples.len() as f64;
    let mut kl = samples[0].0;
    let mut nll = samples[0].1;
    for &(k, n) in &samples[1..] {
        kl = g.add(kl, k);
        nll = g.add(nll, n);
    }
    let kl = g.scale(kl, kl_weight * inv);
    let nll = g.scale(nll, inv);
    Ok(g.add(kl, nll))
}
