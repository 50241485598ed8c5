//! Task-conditioned U-Net denoiser.
//!
//! The encoder is shared by all tasks. At every conditioned decoder level a
//! small hypernetwork maps the embedded task vector to the kernel and bias of
//! a `C x C` pointwise convolution applied residually to the encoder skip
//! features `E_j`; the result is concatenated with the decoder features `D_j`:
//!
//! ```text
//! F_j = (E_j + conv1x1(E_j; W_j(task))) || D_j
//! ```
//!
//! With a freshly initialised hypernetwork the predicted kernel is small, so
//! every mode starts close to the plain U-Net.
//!
//! The deepest level uses the bottleneck features themselves as `D_j`; the
//! other levels use the upsampled output of the level below. A pointwise
//! head maps back to two channels and the input is added back.

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coil_sim::ComplexImage;
use crate::error::{Error, Result};
use crate::nn::{
    conv1x1_backward, conv1x1_forward, lrelu_backward, lrelu_inplace, maxpool2_backward, maxpool2_forward,
    upsample2_backward, upsample2_forward, Conv3x3, ConvCache, Linear, LinearCache, ParamId, ParamStore, Tensor,
};
use crate::task_codec::{EmbeddedTask, EMBED_WIDTH};

/// Which decoder levels receive predicted weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DwpMode {
    None,
    Bottleneck,
    All,
}

impl std::str::FromStr for DwpMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(DwpMode::None),
            "bottleneck" => Ok(DwpMode::Bottleneck),
            "all" => Ok(DwpMode::All),
            other => Err(Error::invalid(format!("unknown dwp mode '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    /// Number of resolution levels; the last one is the bottleneck.
    pub levels: usize,
    /// Channels at the full-resolution level, doubled per level.
    pub base_channels: usize,
    /// Hidden width of every hypernetwork.
    pub embed_dim: usize,
    pub dwp_mode: DwpMode,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            base_channels: 16,
            embed_dim: 8,
            dwp_mode: DwpMode::All,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.levels > 8 {
            return Err(Error::invalid(format!("levels {} outside [1, 8]", self.levels)));
        }
        if self.base_channels == 0 || self.embed_dim == 0 {
            return Err(Error::invalid("channel and embedding widths must be positive"));
        }
        Ok(())
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn is_conditioned(&self, level: usize) -> bool {
        match self.dwp_mode {
            DwpMode::None => false,
            DwpMode::Bottleneck => level + 1 == self.levels,
            DwpMode::All => level < self.levels,
        }
    }

    pub fn conditioned_levels(&self) -> Vec<usize> {
        (0..self.levels).filter(|&l| self.is_conditioned(l)).collect()
    }

    /// Height and width must survive `levels - 1` halvings.
    pub fn check_shape(&self, h: usize, w: usize) -> Result<()> {
        let f = 1 << (self.levels - 1);
        if h == 0 || w == 0 || h % f != 0 || w % f != 0 {
            return Err(Error::invalid(format!(
                "image {h}x{w} is not divisible by {f} for {} levels",
                self.levels
            )));
        }
        Ok(())
    }
}

/// Predicted pointwise-convolution parameters for one level: a row-major
/// `C x C` kernel followed by `C` biases.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicWeights {
    pub level: usize,
    pub channels: usize,
    pub values: Vec<f64>,
}

impl DynamicWeights {
    pub fn kernel(&self) -> &[f64] {
        &self.values[..self.channels * self.channels]
    }

    pub fn bias(&self) -> &[f64] {
        &self.values[self.channels * self.channels..]
    }
}

/// Second hidden activation of a hypernetwork (after the leaky ReLU).
#[derive(Clone, Debug, PartialEq)]
pub struct TaskEmbedding {
    pub values: Vec<f64>,
}

#[derive(Clone, Debug)]
struct Block {
    a: Conv3x3,
    b: Conv3x3,
}

struct BlockCache {
    a: ConvCache,
    a_out: Tensor,
    b: ConvCache,
    b_out: Tensor,
}

impl Block {
    fn register(params: &mut ParamStore, name: &str, cin: usize, cout: usize) -> Self {
        Self {
            a: Conv3x3::register(params, &format!("{name}.conv_a"), cin, cout),
            b: Conv3x3::register(params, &format!("{name}.conv_b"), cout, cout),
        }
    }

    fn init<R: Rng + ?Sized>(&self, params: &mut ParamStore, rng: &mut R) {
        for conv in [&self.a, &self.b] {
            params.kaiming_uniform(conv.weight, conv.fan_in(), 1.0, rng);
        }
    }

    fn forward(&self, params: &ParamStore, x: &Tensor) -> BlockCache {
        let (mut a_out, a) = self.a.forward(params, x);
        lrelu_inplace(&mut a_out);
        let (mut b_out, b) = self.b.forward(params, &a_out);
        lrelu_inplace(&mut b_out);
        BlockCache { a, a_out, b, b_out }
    }

    fn backward(&self, params: &ParamStore, cache: &BlockCache, grad_out: &Tensor, grads: &mut [f64]) -> Tensor {
        let mut g = grad_out.clone();
        lrelu_backward(&mut g.data, &cache.b_out.data);
        let mut g = self.b.backward(params, &cache.b, &g, grads);
        lrelu_backward(&mut g.data, &cache.a_out.data);
        self.a.backward(params, &cache.a, &g, grads)
    }
}

/// FC(32 -> E) -> LReLU -> FC(E -> E) -> LReLU -> FC(E -> C^2 + C).
#[derive(Clone, Debug)]
struct HyperNet {
    level: usize,
    channels: usize,
    fc1: Linear,
    fc2: Linear,
    fc3: Linear,
}

struct HyperCache {
    c1: LinearCache,
    h1: Vec<f64>,
    c2: LinearCache,
    h2: Vec<f64>,
    c3: LinearCache,
    weights: DynamicWeights,
}

fn lrelu_vec(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x *= crate::nn::LRELU_SLOPE;
        }
    }
}

impl HyperNet {
    fn forward(&self, params: &ParamStore, e: &EmbeddedTask) -> HyperCache {
        let (mut h1, c1) = self.fc1.forward(params, &e.values);
        lrelu_vec(&mut h1);
        let (mut h2, c2) = self.fc2.forward(params, &h1);
        lrelu_vec(&mut h2);
        let (out, c3) = self.fc3.forward(params, &h2);
        HyperCache {
            c1,
            h1,
            c2,
            h2,
            c3,
            weights: DynamicWeights {
                level: self.level,
                channels: self.channels,
                values: out,
            },
        }
    }

    fn backward(&self, params: &ParamStore, cache: &HyperCache, grad_out: &[f64], grads: &mut [f64]) {
        let mut g = self.fc3.backward(params, &cache.c3, grad_out, grads);
        lrelu_backward(&mut g, &cache.h2);
        let mut g = self.fc2.backward(params, &cache.c2, &g, grads);
        lrelu_backward(&mut g, &cache.h1);
        self.fc1.backward(params, &cache.c1, &g, grads);
    }
}

/// Layout of one denoiser inside a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Denoiser {
    config: DenoiserConfig,
    enc: Vec<Block>,
    dec: Vec<Block>,
    head_weight: ParamId,
    head_bias: ParamId,
    hyper: Vec<Option<HyperNet>>,
}

/// Intermediate values retained for the backward pass.
pub struct DenoiserCache {
    enc: Vec<BlockCache>,
    pool: Vec<Vec<usize>>,
    hyper: Vec<Option<HyperCache>>,
    dec: Vec<BlockCache>,
    height: usize,
    width: usize,
}

/// Substring identifying hypernetwork tensors in parameter names.
pub const HYPER_TAG: &str = ".hyper.";

impl Denoiser {
    /// Registers all tensors under `prefix`; CNN tensors live under
    /// `<prefix>.cnn.` and hypernetworks under `<prefix>.hyper.`.
    pub fn register(params: &mut ParamStore, prefix: &str, config: &DenoiserConfig) -> Result<Self> {
        config.validate()?;
        let n = config.levels;
        let mut enc = Vec::with_capacity(n);
        for l in 0..n {
            let cin = if l == 0 { 2 } else { config.channels(l - 1) };
            enc.push(Block::register(params, &format!("{prefix}.cnn.enc{l}"), cin, config.channels(l)));
        }
        let mut dec = Vec::with_capacity(n);
        for l in 0..n {
            let below = if l + 1 == n { config.channels(l) } else { config.channels(l + 1) };
            dec.push(Block::register(
                params,
                &format!("{prefix}.cnn.dec{l}"),
                config.channels(l) + below,
                config.channels(l),
            ));
        }
        let head_weight = params.register(format!("{prefix}.cnn.head.weight"), &[2, config.channels(0)]);
        let head_bias = params.register(format!("{prefix}.cnn.head.bias"), &[2]);
        let hyper = (0..n)
            .map(|l| {
                config.is_conditioned(l).then(|| {
                    let c = config.channels(l);
                    let name = format!("{prefix}.hyper.level{l}");
                    HyperNet {
                        level: l,
                        channels: c,
                        fc1: Linear::register(params, &format!("{name}.fc1"), EMBED_WIDTH, config.embed_dim),
                        fc2: Linear::register(params, &format!("{name}.fc2"), config.embed_dim, config.embed_dim),
                        fc3: Linear::register(params, &format!("{name}.fc3"), config.embed_dim, c * c + c),
                    }
                })
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            enc,
            dec,
            head_weight,
            head_bias,
            hyper,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    /// Kaiming-uniform weights and zero biases; the pointwise head and the
    /// last hypernetwork layer are scaled by 0.1.
    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamStore, rng: &mut R) {
        for b in self.enc.iter().chain(&self.dec) {
            b.init(params, rng);
        }
        params.kaiming_uniform(self.head_weight, self.config.channels(0), 0.1, rng);
        for h in self.hyper.iter().flatten() {
            params.kaiming_uniform(h.fc1.weight, h.fc1.inputs, 1.0, rng);
            params.kaiming_uniform(h.fc2.weight, h.fc2.inputs, 1.0, rng);
            params.kaiming_uniform(h.fc3.weight, h.fc3.inputs, 0.1, rng);
        }
    }

    /// Zeroes the output head so the denoiser reduces to the identity.
    pub fn zero_head(&self, params: &mut ParamStore) {
        params.get_mut(self.head_weight).fill(0.0);
        params.get_mut(self.head_bias).fill(0.0);
    }

    /// Runs the hypernetwork of `level` (0-based; `levels - 1` is the bottleneck).
    pub fn hypernet_forward(
        &self,
        params: &ParamStore,
        e: &EmbeddedTask,
        level: usize,
    ) -> Result<(DynamicWeights, TaskEmbedding)> {
        let net = self
            .hyper
            .get(level)
            .and_then(|h| h.as_ref())
            .ok_or_else(|| Error::invalid(format!("level {level} has no hypernetwork")))?;
        let cache = net.forward(params, e);
        Ok((cache.weights, TaskEmbedding { values: cache.h2 }))
    }

    pub fn forward(&self, params: &ParamStore, x: &Tensor, e: &EmbeddedTask) -> Result<(Tensor, DenoiserCache)> {
        if x.channels != 2 {
            return Err(Error::invalid(format!("denoiser expects 2 channels, got {}", x.channels)));
        }
        self.config.check_shape(x.height, x.width)?;
        let n = self.config.levels;

        let mut enc: Vec<BlockCache> = Vec::with_capacity(n);
        let mut pool = Vec::with_capacity(n.saturating_sub(1));
        for l in 0..n {
            let cache = if l == 0 {
                self.enc[0].forward(params, x)
            } else {
                let (pooled, arg) = maxpool2_forward(&enc[l - 1].b_out);
                pool.push(arg);
                self.enc[l].forward(params, &pooled)
            };
            enc.push(cache);
        }

        let hyper: Vec<Option<HyperCache>> =
            self.hyper.iter().map(|h| h.as_ref().map(|h| h.forward(params, e))).collect();

        let mut dec: Vec<Option<BlockCache>> = (0..n).map(|_| None).collect();
        for l in (0..n).rev() {
            let skip = &enc[l].b_out;
            let transformed = match &hyper[l] {
                Some(hc) => {
                    let mut t = conv1x1_forward(skip, hc.weights.kernel(), hc.weights.bias(), skip.channels);
                    t.add_assign(skip);
                    t
                }
                None => skip.clone(),
            };
            let below = if l + 1 == n {
                skip.clone()
            } else {
                upsample2_forward(&dec[l + 1].as_ref().expect("decoded below").b_out)
            };
            dec[l] = Some(self.dec[l].forward(params, &Tensor::concat(&transformed, &below)));
        }
        let dec: Vec<BlockCache> = dec.into_iter().map(|d| d.expect("decoded")).collect();

        let mut out = conv1x1_forward(
            &dec[0].b_out,
            params.get(self.head_weight),
            params.get(self.head_bias),
            2,
        );
        out.add_assign(x);
        Ok((
            out,
            DenoiserCache {
                enc,
                pool,
                hyper,
                dec,
                height: x.height,
                width: x.width,
            },
        ))
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&self, params: &ParamStore, cache: &DenoiserCache, grad_out: &Tensor, grads: &mut [f64]) -> Tensor {
        let n = self.config.levels;
        let mut grad_input = grad_out.clone();

        let g_head = {
            let (gw, gb) = split_two(params, self.head_weight, self.head_bias, grads);
            conv1x1_backward(&cache.dec[0].b_out, params.get(self.head_weight), grad_out, gw, gb)
        };

        let mut g_enc: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        let mut g_dec_out = g_head;
        for l in 0..n {
            let g_f = self.dec[l].backward(params, &cache.dec[l], &g_dec_out, grads);
            let skip = &cache.enc[l].b_out;
            let (g_t, g_below) = g_f.split(skip.channels);
            let g_skip = match (&self.hyper[l], &cache.hyper[l]) {
                (Some(net), Some(hc)) => {
                    let c = skip.channels;
                    let mut g_w = vec![0.0; c * c + c];
                    let (gk, gb) = g_w.split_at_mut(c * c);
                    let mut g = conv1x1_backward(skip, hc.weights.kernel(), &g_t, gk, gb);
                    net.backward(params, hc, &g_w, grads);
                    g.add_assign(&g_t);
                    g
                }
                _ => g_t,
            };
            accumulate(&mut g_enc[l], g_skip);
            if l + 1 == n {
                accumulate(&mut g_enc[l], g_below);
            } else {
                g_dec_out = upsample2_backward(&g_below);
            }
        }

        for l in (0..n).rev() {
            let g = g_enc[l].take().expect("encoder gradient");
            let g_in = self.enc[l].backward(params, &cache.enc[l], &g, grads);
            if l == 0 {
                grad_input.add_assign(&g_in);
            } else {
                let prev = &cache.enc[l - 1].b_out;
                let g_prev = maxpool2_backward(&g_in, &cache.pool[l - 1], prev.height, prev.width);
                accumulate(&mut g_enc[l - 1], g_prev);
            }
        }
        debug_assert_eq!((grad_input.height, grad_input.width), (cache.height, cache.width));
        grad_input
    }

    /// Complex-image convenience wrapper around [`Denoiser::forward`].
    pub fn denoise(&self, params: &ParamStore, m: &ComplexImage, e: &EmbeddedTask) -> Result<ComplexImage> {
        let (out, _) = self.forward(params, &complex_to_tensor(&m.data), e)?;
        ComplexImage::new(tensor_to_complex(&out))
    }
}

fn split_two<'a>(params: &ParamStore, a: ParamId, b: ParamId, grads: &'a mut [f64]) -> (&'a mut [f64], &'a mut [f64]) {
    let (ia, ib) = (params.info(a).clone(), params.info(b).clone());
    assert_eq!(ia.offset + ia.len, ib.offset, "head tensors are adjacent");
    let (wa, wb) = grads[ia.offset..ib.offset + ib.len].split_at_mut(ia.len);
    (wa, wb)
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(t) => t.add_assign(&g),
        None => *slot = Some(g),
    }
}

/// Real and imaginary parts as two channels.
pub fn complex_to_tensor(x: &Array2<Complex64>) -> Tensor {
    let (h, w) = x.dim();
    let mut data = Vec::with_capacity(2 * h * w);
    data.extend(x.iter().map(|v| v.re));
    data.extend(x.iter().map(|v| v.im));
    Tensor::from_vec(2, h, w, data)
}

pub fn tensor_to_complex(t: &Tensor) -> Array2<Complex64> {
    assert_eq!(t.channels, 2);
    let p = t.plane();
    Array2::from_shape_fn((t.height, t.width), |(i, j)| {
        let k = i * t.width + j;
        Complex64::new(t.data[k], t.data[p + k])
    })
}
