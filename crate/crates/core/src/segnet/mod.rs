//! Miniature U-Net with hand-written forward and reverse passes.
//!
//! Encoder level `l` holds two 3x3 conv + ReLU layers with
//! `base_channels * 2^l` channels, separated by 2x2 max pooling. Each
//! decoder level upsamples (nearest), applies a 3x3 conv + ReLU that halves
//! the channels, concatenates the matching skip connection and runs two more
//! 3x3 conv + ReLU layers. A 1x1 conv and a sigmoid produce the probability
//! map. There is no normalization layer.
//!
//! All parameters live in one flat `Vec<f64>` so that optimizer and EMA
//! updates are plain elementwise loops.

mod adam;
mod checkpoint;
mod ops;

use std::sync::Arc;

use ndarray::{concatenate, s, Array2, Array3, ArrayView2, ArrayViewMut2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamState};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, Dtype,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Number of encoder levels.
    pub depth: usize,
    pub base_channels: usize,
    /// `(H, W)` of the input slices.
    pub input_size: (usize, usize),
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            base_channels: 8,
            input_size: (64, 64),
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::InvalidConfig(format!(
                "depth must be at least 2, got {}",
                self.depth
            )));
        }
        if self.base_channels < 4 {
            return Err(Error::InvalidConfig(format!(
                "base_channels must be at least 4, got {}",
                self.base_channels
            )));
        }
        let div = 1usize << self.depth;
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % div != 0 || w % div != 0 {
            return Err(Error::InvalidConfig(format!(
                "input {h}x{w} must be divisible by 2^depth = {div}"
            )));
        }
        Ok(())
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Length of the pooled bottleneck feature vector.
    pub fn feature_len(&self) -> usize {
        self.channels(self.depth - 1)
    }

    /// Declared layer list, in parameter order.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let mut layers = Vec::new();
        for l in 0..self.depth {
            let cin = if l == 0 { 1 } else { self.channels(l - 1) };
            let c = self.channels(l);
            layers.push(LayerSpec::new(format!("enc{l}.conv1"), cin, c, 3));
            layers.push(LayerSpec::new(format!("enc{l}.conv2"), c, c, 3));
        }
        for l in (0..self.depth - 1).rev() {
            let c = self.channels(l);
            layers.push(LayerSpec::new(format!("dec{l}.up"), self.channels(l + 1), c, 3));
            layers.push(LayerSpec::new(format!("dec{l}.conv1"), 2 * c, c, 3));
            layers.push(LayerSpec::new(format!("dec{l}.conv2"), c, c, 3));
        }
        layers.push(LayerSpec::new("head".to_string(), self.channels(0), 1, 1));
        layers
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl LayerSpec {
    fn new(name: String, in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            name,
            in_channels,
            out_channels,
            kernel,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.fan_in()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    config: NetConfig,
    layers: Vec<LayerSpec>,
    tensors: Vec<TensorInfo>,
    total: usize,
}

impl Layout {
    fn new(config: NetConfig) -> Self {
        let layers = config.layers();
        let mut tensors = Vec::with_capacity(2 * layers.len());
        let mut offset = 0;
        for layer in &layers {
            let wshape = vec![layer.out_channels, layer.in_channels, layer.kernel, layer.kernel];
            tensors.push(TensorInfo {
                name: format!("{}.weight", layer.name),
                shape: wshape,
                offset,
            });
            offset += layer.weight_len();
            tensors.push(TensorInfo {
                name: format!("{}.bias", layer.name),
                shape: vec![layer.out_channels],
                offset,
            });
            offset += layer.out_channels;
        }
        Self {
            config,
            layers,
            tensors,
            total: offset,
        }
    }
}

/// Full parameter set of one network (student or teacher).
#[derive(Debug, Clone)]
pub struct NetParams {
    layout: Arc<Layout>,
    values: Vec<f64>,
}

impl PartialEq for NetParams {
    fn eq(&self, other: &Self) -> bool {
        self.same_layout(other) && self.values == other.values
    }
}

impl NetParams {
    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let layout = Arc::new(Layout::new(config));
        let values = vec![0.0; layout.total];
        Ok(Self { layout, values })
    }

    /// Rebuilds parameters from a flat vector in layout order.
    pub fn from_values(config: NetConfig, values: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        if values.len() != p.values.len() {
            return Err(Error::shape(p.values.len(), values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite parameter".into()));
        }
        p.values = values;
        Ok(p)
    }

    pub fn config(&self) -> &NetConfig {
        &self.layout.config
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layout.layers
    }

    pub fn tensors(&self) -> &[TensorInfo] {
        &self.layout.tensors
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.tensors()
            .iter()
            .find(|t| t.name == name)
            .map(|t| &self.values[t.offset..t.offset + t.len()])
    }

    /// True when both sets have identical configuration and tensor table.
    pub fn same_layout(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }

    fn weight(&self, layer: usize) -> ArrayView2<'_, f64> {
        let spec = &self.layout.layers[layer];
        let t = &self.layout.tensors[2 * layer];
        ArrayView2::from_shape(
            (spec.out_channels, spec.fan_in()),
            &self.values[t.offset..t.offset + t.len()],
        )
        .expect("layout is consistent")
    }

    fn bias(&self, layer: usize) -> &[f64] {
        let t = &self.layout.tensors[2 * layer + 1];
        &self.values[t.offset..t.offset + t.len()]
    }

    fn fingerprint(&self) -> u64 {
        // FNV-1a over the raw bits.
        self.values.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, v| {
            (h ^ v.to_bits()).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }
}

/// Gradients aligned element-for-element with a [`NetParams`] layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    values: Vec<f64>,
}

impl ParamGrads {
    pub fn zeros_like(params: &NetParams) -> Self {
        Self {
            values: vec![0.0; params.len()],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|g| *g *= factor);
    }

    fn split_layer(&mut self, layout: &Layout, layer: usize) -> (ArrayViewMut2<'_, f64>, &mut [f64]) {
        let spec = &layout.layers[layer];
        let wt = &layout.tensors[2 * layer];
        let bt = &layout.tensors[2 * layer + 1];
        let (head, tail) = self.values.split_at_mut(bt.offset);
        let w = ArrayViewMut2::from_shape(
            (spec.out_channels, spec.fan_in()),
            &mut head[wt.offset..wt.offset + wt.len()],
        )
        .expect("layout is consistent");
        (w, &mut tail[..bt.len()])
    }
}

/// He-style fan-in initialization: weights ~ N(0, 2 / fan_in), zero biases.
pub fn init_params(config: NetConfig, seed: u64) -> Result<NetParams> {
    let mut params = NetParams::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = Arc::clone(&params.layout);
    for (i, layer) in layout.layers.iter().enumerate() {
        let std = (2.0 / layer.fan_in() as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("std is positive");
        let t = &layout.tensors[2 * i];
        for v in &mut params.values[t.offset..t.offset + t.len()] {
            *v = normal.sample(&mut rng);
        }
    }
    Ok(params)
}

/// Per-pixel foreground probabilities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap(Array2<f64>);

impl ProbMap {
    pub fn new(p: Array2<f64>) -> Result<Self> {
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput("probability outside [0, 1]".into()));
        }
        Ok(Self(p))
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn dim(&self) -> (usize, usize) {
        self.0.dim()
    }
}

#[derive(Debug)]
struct ConvRecord {
    cols: Array2<f64>,
    in_dim: (usize, usize, usize),
    /// Post-ReLU output; `None` for the linear head.
    out: Option<Array3<f64>>,
}

#[derive(Debug)]
struct PoolRecord {
    idx: Vec<usize>,
    in_dim: (usize, usize, usize),
}

/// Everything the reverse pass needs from a forward pass.
#[derive(Debug)]
pub struct ActivationCache {
    fingerprint: u64,
    layout: Arc<Layout>,
    convs: Vec<ConvRecord>,
    pools: Vec<PoolRecord>,
    probs: Array2<f64>,
}

struct Runner<'a> {
    params: &'a NetParams,
    convs: Vec<ConvRecord>,
    pools: Vec<PoolRecord>,
    record: bool,
}

impl Runner<'_> {
    fn conv(&mut self, layer: usize, input: &Array3<f64>, relu: bool) -> Array3<f64> {
        let spec = &self.params.layout.layers[layer];
        let (_, h, w) = input.dim();
        let cols = ops::im2col(input, spec.kernel);
        let mut out = ops::conv_apply(self.params.weight(layer), self.params.bias(layer), &cols, h, w);
        if relu {
            ops::relu_inplace(&mut out);
        }
        if self.record {
            self.convs.push(ConvRecord {
                cols,
                in_dim: input.dim(),
                out: relu.then(|| out.clone()),
            });
        }
        out
    }

    fn pool(&mut self, input: &Array3<f64>) -> Array3<f64> {
        let (out, idx) = ops::maxpool2(input);
        if self.record {
            self.pools.push(PoolRecord {
                idx,
                in_dim: input.dim(),
            });
        }
        out
    }

    /// Runs the encoder; returns the per-level skip maps (last = bottleneck).
    fn encode(&mut self, image: ArrayView2<'_, f64>) -> Vec<Array3<f64>> {
        let depth = self.params.config().depth;
        let (h, w) = image.dim();
        let mut x = image
            .to_owned()
            .into_shape_with_order((1, h, w))
            .expect("single channel");
        let mut skips = Vec::with_capacity(depth);
        for l in 0..depth {
            if l > 0 {
                x = self.pool(&x);
            }
            x = self.conv(2 * l, &x, true);
            x = self.conv(2 * l + 1, &x, true);
            skips.push(x.clone());
        }
        skips
    }
}

fn check_input(params: &NetParams, image: ArrayView2<'_, f64>) -> Result<()> {
    if image.dim() != params.config().input_size {
        return Err(Error::shape(params.config().input_size, image.dim()));
    }
    if image.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite input pixel".into()));
    }
    Ok(())
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn forward_impl(
    params: &NetParams,
    image: ArrayView2<'_, f64>,
    record: bool,
) -> Result<(ProbMap, Option<ActivationCache>)> {
    check_input(params, image)?;
    let depth = params.config().depth;
    let mut run = Runner {
        params,
        convs: Vec::new(),
        pools: Vec::new(),
        record,
    };
    let mut skips = run.encode(image);
    let mut x = skips.pop().expect("depth >= 2");
    let mut layer = 2 * depth;
    for _ in (0..depth - 1).rev() {
        let skip = skips.pop().expect("one skip per level");
        let up = run.conv(layer, &ops::upsample2(&x), true);
        let cat = concatenate(Axis(0), &[skip.view(), up.view()])
            .expect("matching spatial dims")
            .as_standard_layout()
            .into_owned();
        x = run.conv(layer + 1, &cat, true);
        x = run.conv(layer + 2, &x, true);
        layer += 3;
    }
    let logits = run.conv(layer, &x, false);
    let (h, w) = image.dim();
    let probs = logits
        .into_shape_with_order((h, w))
        .expect("single output channel")
        .mapv(sigmoid);
    let cache = record.then(|| ActivationCache {
        fingerprint: params.fingerprint(),
        layout: Arc::clone(&params.layout),
        convs: run.convs,
        pools: run.pools,
        probs: probs.clone(),
    });
    Ok((ProbMap(probs), cache))
}

/// Forward pass recording everything needed by [`backward`].
pub fn forward(params: &NetParams, image: ArrayView2<'_, f64>) -> Result<(ProbMap, ActivationCache)> {
    let (p, cache) = forward_impl(params, image, true)?;
    Ok((p, cache.expect("recording enabled")))
}

/// Inference-only forward pass.
pub fn predict(params: &NetParams, image: ArrayView2<'_, f64>) -> Result<ProbMap> {
    Ok(forward_impl(params, image, false)?.0)
}

/// Reverse pass for the scalar loss whose gradient w.r.t. the probability
/// map is `upstream`.
pub fn backward(
    params: &NetParams,
    cache: &ActivationCache,
    upstream: ArrayView2<'_, f64>,
) -> Result<ParamGrads> {
    let mut grads = ParamGrads::zeros_like(params);
    backward_into(params, cache, upstream, &mut grads)?;
    Ok(grads)
}

/// Like [`backward`], accumulating into `grads`.
pub fn backward_into(
    params: &NetParams,
    cache: &ActivationCache,
    upstream: ArrayView2<'_, f64>,
    grads: &mut ParamGrads,
) -> Result<()> {
    if *cache.layout != *params.layout || cache.fingerprint != params.fingerprint() {
        return Err(Error::InvalidState(
            "activation cache does not belong to these parameters".into(),
        ));
    }
    if upstream.dim() != cache.probs.dim() {
        return Err(Error::shape(cache.probs.dim(), upstream.dim()));
    }
    if grads.len() != params.len() {
        return Err(Error::shape(params.len(), grads.len()));
    }
    let layout = &*params.layout;
    let depth = layout.config.depth;
    let (h, w) = upstream.dim();

    let mut conv_idx = cache.convs.len();
    let mut conv_back = |layer: usize, dout: Array3<f64>, grads: &mut ParamGrads, want: bool| {
        conv_idx -= 1;
        let rec = &cache.convs[conv_idx];
        let mut dout = dout;
        if let Some(out) = &rec.out {
            ops::relu_adjoint(&mut dout, out);
        }
        let (dw, db) = grads.split_layer(layout, layer);
        let dcols = ops::conv_adjoint(params.weight(layer), &rec.cols, &dout, dw, db, want);
        dcols.map(|dc| {
            let (c, ih, iw) = rec.in_dim;
            ops::col2im(&dc, c, ih, iw, layout.layers[layer].kernel)
        })
    };

    let dlogits = ndarray::Zip::from(&upstream)
        .and(&cache.probs)
        .map_collect(|&g, &p| g * p * (1.0 - p))
        .into_shape_with_order((1, h, w))
        .expect("single channel");

    let mut layer = layout.layers.len() - 1;
    let mut dx = conv_back(layer, dlogits, grads, true).expect("input grad requested");

    // Decoder, shallowest level first (reverse of forward order).
    let mut dskips: Vec<Option<Array3<f64>>> = vec![None; depth];
    for l in 0..depth - 1 {
        layer -= 3;
        let c = layout.config.channels(l);
        dx = conv_back(layer + 2, dx, grads, true).expect("requested");
        let dcat = conv_back(layer + 1, dx, grads, true).expect("requested");
        let dskip = dcat.slice(s![..c, .., ..]).to_owned();
        let dup = dcat.slice(s![c.., .., ..]).to_owned();
        dskips[l] = Some(dskip);
        let dup = conv_back(layer, dup, grads, true).expect("requested");
        dx = ops::upsample2_adjoint(&dup);
    }

    // Encoder, deepest level first; dx currently holds the bottleneck grad.
    let mut pool_idx = cache.pools.len();
    for l in (0..depth).rev() {
        if let Some(ds) = dskips[l].take() {
            dx += &ds;
        }
        dx = conv_back(2 * l + 1, dx, grads, true).expect("requested");
        let want = l > 0;
        let din = conv_back(2 * l, dx, grads, want);
        if l > 0 {
            pool_idx -= 1;
            let rec = &cache.pools[pool_idx];
            dx = ops::maxpool2_adjoint(&din.expect("requested"), &rec.idx, rec.in_dim);
        } else {
            dx = Array3::zeros((0, 0, 0));
        }
    }
    Ok(())
}

/// Spatially average-pooled bottleneck activations.
pub fn extract_features(params: &NetParams, image: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    check_input(params, image)?;
    let mut run = Runner {
        params,
        convs: Vec::new(),
        pools: Vec::new(),
        record: false,
    };
    let bottleneck = run.encode(image).pop().expect("depth >= 2");
    Ok(bottleneck
        .outer_iter()
        .map(|plane| plane.mean().unwrap_or(0.0))
        .collect())
}

/// `teacher <- beta * teacher + (1 - beta) * student`, elementwise.
///
/// Entries where teacher and student already agree are left untouched, so
/// a teacher equal to a fixed student stays bitwise equal for any beta.
pub fn ema_update(teacher: &mut NetParams, student: &NetParams, beta: f64) -> Result<()> {
    if !teacher.same_layout(student) {
        return Err(Error::InvalidInput(
            "teacher and student layouts differ".into(),
        ));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidConfig(format!(
            "beta must lie in [0, 1], got {beta}"
        )));
    }
    let keep = 1.0 - beta;
    for (t, &s) in teacher.values.iter_mut().zip(&student.values) {
        if *t != s {
            *t = beta * *t + keep * s;
        }
    }
    Ok(())
}
