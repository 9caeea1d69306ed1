//! Minimal MLP toolkit with exact analytic gradients.
//!
//! Affine layers with rectified-linear hidden activations and a linear
//! output, evaluated in batches as `(B, in) x (in, out)` products. Two
//! head interpretations sit on top: an identity head for critics and a
//! Gaussian head whose output pairs up as (means, log standard
//! deviations) and is sampled with the reparameterization trick plus tanh
//! squashing. An Adam-style optimizer and a bit-exact text checkpoint
//! format round out the kit.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(&'static str),
    #[error("non-finite input")]
    NonFinite,
    #[error("checkpoint parse error: {0}")]
    Checkpoint(String),
}

/// Output interpretation of the final linear layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    /// Raw linear outputs (critics).
    Identity,
    /// Outputs split as k means followed by k log standard deviations.
    Gaussian,
}

/// Network shape: layer sizes plus head interpretation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub head: Head,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, head: Head) -> Self {
        assert!(layer_sizes.len() >= 2, "need at least input and output layers");
        assert!(layer_sizes.iter().all(|&s| s >= 1));
        if head == Head::Gaussian {
            assert!(layer_sizes.last().unwrap() % 2 == 0, "gaussian head needs even output width");
        }
        Self { layer_sizes, head }
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct Layer {
    /// (out, in)
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Network parameters; the same structure doubles as a gradient holder.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Layer>,
}

/// Uniform Glorot initialization: weights in +-sqrt(6/(fan_in+fan_out)),
/// biases zero.
pub fn init_params(spec: &MlpSpec, rng: &mut ChaCha12Rng) -> Mlp {
    let layers = spec
        .layer_sizes
        .windows(2)
        .map(|dims| {
            let (fan_in, fan_out) = (dims[0], dims[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..=bound));
            Layer {
                w,
                b: Array1::zeros(fan_out),
            }
        })
        .collect();
    Mlp {
        spec: spec.clone(),
        layers,
    }
}

/// Activations cached by a batch forward pass.
pub struct ForwardCache {
    pub input: Array2<f64>,
    /// Pre-activations per layer.
    pub pre: Vec<Array2<f64>>,
    /// Post-activations per layer (last entry equals the output).
    pub post: Vec<Array2<f64>>,
}

impl Mlp {
    pub fn input_dim(&self) -> usize {
        self.spec.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.spec.layer_sizes.last().unwrap()
    }

    pub fn zeros_like(&self) -> Mlp {
        Mlp {
            spec: self.spec.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    w: Array2::zeros(l.w.dim()),
                    b: Array1::zeros(l.b.len()),
                })
                .collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    /// Flatten parameters: per layer, row-major weights then biases.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_from_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut i = 0;
        for l in &mut self.layers {
            for w in l.w.iter_mut() {
                *w = flat[i];
                i += 1;
            }
            for b in l.b.iter_mut() {
                *b = flat[i];
                i += 1;
            }
        }
    }

    /// Batch forward: rows are samples. Hidden layers apply the rectifier,
    /// the final layer stays linear.
    pub fn forward_batch(&self, input: &Array2<f64>) -> (Array2<f64>, ForwardCache) {
        let n = self.layers.len();
        let mut pre = Vec::with_capacity(n);
        let mut post = Vec::with_capacity(n);
        let mut h = input.clone();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.w.t());
            z += &layer.b;
            let a = if li + 1 < n {
                z.mapv(|v| v.max(0.0))
            } else {
                z.clone()
            };
            pre.push(z);
            post.push(a.clone());
            h = a;
        }
        (
            h,
            ForwardCache {
                input: input.clone(),
                pre,
                post,
            },
        )
    }

    /// Single-sample forward.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache), NnError> {
        if input.len() != self.input_dim() {
            return Err(NnError::Shape("input length"));
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite);
        }
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec()).unwrap();
        let (out, cache) = self.forward_batch(&x);
        Ok((out.row(0).to_vec(), cache))
    }

    /// Reverse-mode gradients of every parameter for a batch.
    ///
    /// `out_grad` is dLoss/dOutput, shape (B, out). Returns parameter
    /// gradients in a parameter-shaped `Mlp` plus dLoss/dInput.
    pub fn backward_batch(&self, cache: &ForwardCache, out_grad: &Array2<f64>) -> (Mlp, Array2<f64>) {
        let n = self.layers.len();
        let mut grads = self.zeros_like();
        let mut delta = out_grad.clone();
        for li in (0..n).rev() {
            let below = if li == 0 { &cache.input } else { &cache.post[li - 1] };
            grads.layers[li].w = delta.t().dot(below);
            grads.layers[li].b = delta.sum_axis(Axis(0));
            if li > 0 {
                let mut prev = delta.dot(&self.layers[li].w);
                prev.zip_mut_with(&cache.pre[li - 1], |d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = prev;
            } else {
                delta = delta.dot(&self.layers[0].w);
            }
        }
        (grads, delta)
    }

    pub fn backward(&self, cache: &ForwardCache, out_grad: &[f64]) -> Mlp {
        let g = Array2::from_shape_vec((1, out_grad.len()), out_grad.to_vec()).unwrap();
        self.backward_batch(cache, &g).0
    }
}

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const SQUASH_EPS: f64 = 1e-6;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// One tanh-squashed Gaussian draw with its log density and the partial
/// derivatives needed to push gradients back into the head outputs.
#[derive(Debug, Clone, Copy)]
pub struct GaussianSample {
    pub epsilon: f64,
    pub log_density: f64,
    pub raw: f64,
    /// d epsilon / d mu
    pub deps_dmu: f64,
    /// d epsilon / d log_std
    pub deps_dlogstd: f64,
    /// d log_density / d mu
    pub dlogp_dmu: f64,
    /// d log_density / d log_std
    pub dlogp_dlogstd: f64,
}

/// Sample the squashed Gaussian head: `raw = mu + noise * exp(log_std)`,
/// `epsilon = tanh(raw)`. The log density is the Gaussian log density of
/// `raw` minus the squash correction `ln(1 - epsilon^2 + 1e-6)`. The log
/// standard deviation is clamped to `[-20, 2]` (gradients gate to zero
/// outside).
pub fn gaussian_head_sample(mu: f64, log_std: f64, noise: f64) -> GaussianSample {
    let inside = (LOG_STD_MIN..=LOG_STD_MAX).contains(&log_std);
    let ls = log_std.clamp(LOG_STD_MIN, LOG_STD_MAX);
    let sigma = ls.exp();
    let raw = mu + noise * sigma;
    // tanh saturates to exactly 1.0 in f64 for |raw| > ~19; keep the
    // squashed value strictly inside the open interval
    let t = raw.tanh().clamp(-1.0 + 1e-12, 1.0 - 1e-12);
    let sech2 = 1.0 - t * t;
    let log_density = -0.5 * noise * noise - ls - LN_SQRT_2PI - (sech2 + SQUASH_EPS).ln();
    let gate = if inside { 1.0 } else { 0.0 };
    let dlogp_draw = 2.0 * t * sech2 / (sech2 + SQUASH_EPS);
    GaussianSample {
        epsilon: t,
        log_density,
        raw,
        deps_dmu: sech2,
        deps_dlogstd: sech2 * noise * sigma * gate,
        dlogp_dmu: dlogp_draw,
        dlogp_dlogstd: (-1.0 + dlogp_draw * noise * sigma) * gate,
    }
}

/// Adam with bias correction. Moments are stored flat in parameter order.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(lr: f64, param_count: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    fn step_flat(&mut self, idx: usize, g: f64, bc1: f64, bc2: f64) -> f64 {
        let m = self.beta1 * self.m[idx] + (1.0 - self.beta1) * g;
        let v = self.beta2 * self.v[idx] + (1.0 - self.beta2) * g * g;
        self.m[idx] = m;
        self.v[idx] = v;
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        self.lr * m_hat / (v_hat.sqrt() + self.eps)
    }

    /// One bias-corrected update of `params` along `grads`.
    pub fn update(&mut self, params: &mut Mlp, grads: &Mlp) -> Result<(), NnError> {
        if grads.layers.iter().any(|l| {
            l.w.iter().any(|v| !v.is_finite()) || l.b.iter().any(|v| !v.is_finite())
        }) {
            return Err(NnError::NonFinite);
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut idx = 0;
        for (pl, gl) in params.layers.iter_mut().zip(&grads.layers) {
            for (p, g) in pl.w.iter_mut().zip(gl.w.iter()) {
                *p -= self.step_flat(idx, *g, bc1, bc2);
                idx += 1;
            }
            for (p, g) in pl.b.iter_mut().zip(gl.b.iter()) {
                *p -= self.step_flat(idx, *g, bc1, bc2);
                idx += 1;
            }
        }
        Ok(())
    }
}

/// Adam on one scalar (the entropy temperature's log).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalarAdam {
    pub lr: f64,
    pub step: u64,
    pub m: f64,
    pub v: f64,
}

impl ScalarAdam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            step: 0,
            m: 0.0,
            v: 0.0,
        }
    }

    pub fn update(&mut self, param: &mut f64, grad: f64) {
        self.step += 1;
        self.m = 0.9 * self.m + 0.1 * grad;
        self.v = 0.999 * self.v + 0.001 * grad * grad;
        let m_hat = self.m / (1.0 - 0.9f64.powi(self.step as i32));
        let v_hat = self.v / (1.0 - 0.999f64.powi(self.step as i32));
        *param -= self.lr * m_hat / (v_hat.sqrt() + 1e-8);
    }
}

// --- checkpoint format -------------------------------------------------
//
// Plain text, one value per token, every f64 written as its IEEE-754 bit
// pattern in hex so round-trips are exact.

fn push_f64(out: &mut String, v: f64) {
    out.push_str(&format!("{:016x}\n", v.to_bits()));
}

fn parse_f64(tok: &str) -> Result<f64, NnError> {
    u64::from_str_radix(tok.trim(), 16)
        .map(f64::from_bits)
        .map_err(|e| NnError::Checkpoint(format!("bad f64 token '{tok}': {e}")))
}

pub fn write_mlp(out: &mut String, mlp: &Mlp) {
    out.push_str("mlp v1\n");
    out.push_str(&format!(
        "head {}\n",
        match mlp.spec.head {
            Head::Identity => "identity",
            Head::Gaussian => "gaussian",
        }
    ));
    out.push_str(&format!("sizes {}\n", mlp.spec.layer_sizes.len()));
    for s in &mlp.spec.layer_sizes {
        out.push_str(&format!("{s}\n"));
    }
    for v in mlp.to_flat() {
        push_f64(out, v);
    }
}

pub fn read_mlp(lines: &mut std::str::Lines) -> Result<Mlp, NnError> {
    let expect = |lines: &mut std::str::Lines, what: &str| -> Result<String, NnError> {
        lines
            .next()
            .map(str::to_string)
            .ok_or_else(|| NnError::Checkpoint(format!("missing {what}")))
    };
    let magic = expect(lines, "magic")?;
    if magic.trim() != "mlp v1" {
        return Err(NnError::Checkpoint(format!("unknown magic '{magic}'")));
    }
    let head_line = expect(lines, "head")?;
    let head = match head_line.trim() {
        "head identity" => Head::Identity,
        "head gaussian" => Head::Gaussian,
        other => return Err(NnError::Checkpoint(format!("unknown head '{other}'"))),
    };
    let sizes_line = expect(lines, "sizes")?;
    let n: usize = sizes_line
        .trim()
        .strip_prefix("sizes ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| NnError::Checkpoint("bad sizes line".into()))?;
    let mut layer_sizes = Vec::with_capacity(n);
    for _ in 0..n {
        let s = expect(lines, "layer size")?;
        layer_sizes.push(
            s.trim()
                .parse()
                .map_err(|_| NnError::Checkpoint("bad layer size".into()))?,
        );
    }
    let spec = MlpSpec::new(layer_sizes, head);
    let count = spec.param_count();
    let mut flat = Vec::with_capacity(count);
    for _ in 0..count {
        flat.push(parse_f64(&expect(lines, "param")?)?);
    }
    let mut rng = ChaCha12Rng::seed_from_u64(0);
    let mut mlp = init_params(&spec, &mut rng);
    mlp.set_from_flat(&flat);
    Ok(mlp)
}

pub fn write_adam(out: &mut String, adam: &AdamState) {
    out.push_str(&format!("adam v1 {} \n", adam.step));
    push_f64(out, adam.lr);
    out.push_str(&format!("len {}\n", adam.m.len()));
    for v in adam.m.iter().chain(adam.v.iter()) {
        push_f64(out, *v);
    }
}

pub fn read_adam(lines: &mut std::str::Lines) -> Result<AdamState, NnError> {
    let header = lines
        .next()
        .ok_or_else(|| NnError::Checkpoint("missing adam header".into()))?;
    let step: u64 = header
        .trim()
        .strip_prefix("adam v1 ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| NnError::Checkpoint("bad adam header".into()))?;
    let lr = parse_f64(lines.next().ok_or_else(|| NnError::Checkpoint("missing lr".into()))?)?;
    let len_line = lines.next().ok_or_else(|| NnError::Checkpoint("missing len".into()))?;
    let len: usize = len_line
        .trim()
        .strip_prefix("len ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| NnError::Checkpoint("bad len line".into()))?;
    let mut vals = Vec::with_capacity(2 * len);
    for _ in 0..2 * len {
        vals.push(parse_f64(
            lines.next().ok_or_else(|| NnError::Checkpoint("missing moment".into()))?,
        )?);
    }
    let mut adam = AdamState::new(lr, len);
    adam.step = step;
    adam.m = vals[..len].to_vec();
    adam.v = vals[len..].to_vec();
    Ok(adam)
}

use rand::SeedableRng;
