use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{loss, Act, Mode, BN_EPSILON, BN_MOMENTUM};
use crate::b16::quantize;
use crate::error::{Error, Result};
use crate::tensor::kernels::{
    batch_major_to_filters_major, col2im, filters_major_to_batch_major, im2col_raw, matmul_raw, transpose_raw,
    ConvGeometry,
};
use crate::tensor::{Arith, Conv2dParams, NumericEvents};

/// Layer kinds and their static sizes. Shapes below omit the batch axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    /// `[in] -> [out]`, weights `[in, out]`, bias `[out]`.
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Relu,
    /// Row-wise softmax with max-subtraction. Only valid as the last layer.
    Softmax,
    /// `[C, H, W] -> [F, OH, OW]`, weights `[F, C, kh, kw]`, bias `[F]`.
    Conv2d {
        in_channels: usize,
        filters: usize,
        kernel: [usize; 2],
        stride: usize,
        padding: usize,
    },
    /// `[C, H, W] -> [C, OH, OW]`, square window, no padding.
    MaxPool2d {
        size: usize,
        stride: usize,
    },
    /// `[...] -> [product]`.
    Flatten,
    /// Normalizes each channel of `[C]` or `[C, H, W]`; params gamma, beta,
    /// running mean, running variance, each `[C]`.
    BatchNorm {
        channels: usize,
    },
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Dense { .. } => "dense",
            LayerKind::Relu => "relu",
            LayerKind::Softmax => "softmax",
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::MaxPool2d { .. } => "maxpool2d",
            LayerKind::Flatten => "flatten",
            LayerKind::BatchNorm { .. } => "batchnorm",
        }
    }

    /// Stable numeric id used by the model file format.
    pub fn id(&self) -> u8 {
        match self {
            LayerKind::Dense { .. } => 1,
            LayerKind::Relu => 2,
            LayerKind::Softmax => 3,
            LayerKind::Conv2d { .. } => 4,
            LayerKind::MaxPool2d { .. } => 5,
            LayerKind::Flatten => 6,
            LayerKind::BatchNorm { .. } => 7,
        }
    }

    /// Integer attributes written after the kind id in model files.
    pub fn attributes(&self) -> Vec<u32> {
        let v: Vec<usize> = match *self {
            LayerKind::Dense { inputs, outputs } => vec![inputs, outputs],
            LayerKind::Conv2d { in_channels, filters, kernel, stride, padding } => {
                vec![in_channels, filters, kernel[0], kernel[1], stride, padding]
            }
            LayerKind::MaxPool2d { size, stride } => vec![size, stride],
            LayerKind::BatchNorm { channels } => vec![channels],
            LayerKind::Relu | LayerKind::Softmax | LayerKind::Flatten => vec![],
        };
        v.into_iter().map(|x| x as u32).collect()
    }

    pub fn from_id(id: u8, attrs: &[u32]) -> Option<LayerKind> {
        let a: Vec<usize> = attrs.iter().map(|&x| x as usize).collect();
        Some(match (id, a.as_slice()) {
            (1, &[inputs, outputs]) => LayerKind::Dense { inputs, outputs },
            (2, &[]) => LayerKind::Relu,
            (3, &[]) => LayerKind::Softmax,
            (4, &[in_channels, filters, kh, kw, stride, padding]) => {
                LayerKind::Conv2d { in_channels, filters, kernel: [kh, kw], stride, padding }
            }
            (5, &[size, stride]) => LayerKind::MaxPool2d { size, stride },
            (6, &[]) => LayerKind::Flatten,
            (7, &[channels]) => LayerKind::BatchNorm { channels },
            _ => return None,
        })
    }

    /// Number of attributes stored for a kind id.
    pub fn attribute_count(id: u8) -> Option<usize> {
        match id {
            1 | 5 => Some(2),
            2 | 3 | 6 => Some(0),
            4 => Some(6),
            7 => Some(1),
            _ => None,
        }
    }

    /// Parameter shapes in storage order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerKind::Dense { inputs, outputs } => vec![vec![inputs, outputs], vec![outputs]],
            LayerKind::Conv2d { in_channels, filters, kernel, .. } => {
                vec![vec![filters, in_channels, kernel[0], kernel[1]], vec![filters]]
            }
            LayerKind::BatchNorm { channels } => vec![vec![channels]; 4],
            _ => vec![],
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match *self {
            LayerKind::Dense { inputs, outputs } => {
                if input != [inputs] {
                    return Err(format!("expects [{inputs}], got {input:?}"));
                }
                if outputs == 0 {
                    return Err("zero outputs".into());
                }
                Ok(vec![outputs])
            }
            LayerKind::Relu | LayerKind::Softmax => {
                if matches!(self, LayerKind::Softmax) && input.len() != 1 {
                    return Err(format!("expects a flat input, got {input:?}"));
                }
                Ok(input.to_vec())
            }
            LayerKind::Conv2d { in_channels, filters, kernel, stride, padding } => {
                let &[c, h, w] = input else { return Err(format!("expects [C, H, W], got {input:?}")) };
                if c != in_channels || filters == 0 {
                    return Err(format!("expects {in_channels} channels, got {c}"));
                }
                let oh = crate::tensor::conv_output_extent(h, kernel[0], stride, padding);
                let ow = crate::tensor::conv_output_extent(w, kernel[1], stride, padding);
                match (oh, ow) {
                    (Some(oh), Some(ow)) => Ok(vec![filters, oh, ow]),
                    _ => Err(format!("kernel {kernel:?} does not fit {input:?}")),
                }
            }
            LayerKind::MaxPool2d { size, stride } => {
                let &[c, h, w] = input else { return Err(format!("expects [C, H, W], got {input:?}")) };
                match (
                    crate::tensor::conv_output_extent(h, size, stride, 0),
                    crate::tensor::conv_output_extent(w, size, stride, 0),
                ) {
                    (Some(oh), Some(ow)) => Ok(vec![c, oh, ow]),
                    _ => Err(format!("window {size} does not fit {input:?}")),
                }
            }
            LayerKind::Flatten => Ok(vec![input.iter().product()]),
            LayerKind::BatchNorm { channels } => {
                if input.is_empty() || input[0] != channels || !(input.len() == 1 || input.len() == 3) {
                    return Err(format!("expects [{channels}] or [{channels}, H, W], got {input:?}"));
                }
                Ok(input.to_vec())
            }
        }
    }
}

/// A parameter tensor with its gradient.
///
/// Values sit on the storage grid of the model's tag; under `Mixed` they are
/// the binary32 master copy and forward passes use their binary16 rounding.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    shape: Vec<usize>,
    values: Vec<f32>,
    grad: Vec<f32>,
    trainable: bool,
}

impl Param {
    pub(crate) fn new(shape: Vec<usize>, values: Vec<f32>, trainable: bool) -> Param {
        let n = values.len();
        debug_assert_eq!(shape.iter().product::<usize>(), n);
        Param { shape, values, grad: vec![0.0; n], trainable }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn grad(&self) -> &[f32] {
        &self.grad
    }

    /// Optimizers update trainable parameters only (BatchNorm running
    /// statistics are not trainable).
    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub(crate) fn grad_mut(&mut self) -> &mut Vec<f32> {
        &mut self.grad
    }

    pub(crate) fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Values seen by the forward pass.
    fn working(&self, mode: Mode) -> std::borrow::Cow<'_, [f32]> {
        if mode.narrow_store && !mode.arith.is_narrow() {
            std::borrow::Cow::Owned(self.values.iter().map(|&v| quantize(v)).collect())
        } else {
            std::borrow::Cow::Borrowed(&self.values)
        }
    }
}

#[derive(Clone, Debug)]
pub struct Layer {
    kind: LayerKind,
    params: Vec<Param>,
}

/// Per-layer data kept between forward and backward.
#[derive(Clone, Debug)]
pub(crate) enum Extra {
    None,
    Conv { col: Vec<f32> },
    MaxPool { argmax: Vec<usize> },
    BatchNorm { xhat: Vec<f32>, denom: Vec<f32> },
}

/// Batch statistics produced by a training-mode BatchNorm forward.
#[derive(Clone, Debug)]
pub(crate) struct Running {
    mean: Vec<f32>,
    var: Vec<f32>,
}

fn glorot_uniform(rng: &mut dyn RngCore, n: usize, fan_in: usize, fan_out: usize, narrow: bool) -> Vec<f32> {
    let limit = (6.0f32 / (fan_in + fan_out) as f32).sqrt();
    (0..n)
        .map(|_| {
            // 24 random bits give a uniform u in [0, 1) exactly at binary32.
            let u = (rng.next_u32() >> 8) as f32 * (1.0 / (1u32 << 24) as f32);
            let w = (2.0 * u - 1.0) * limit;
            if narrow {
                quantize(w)
            } else {
                w
            }
        })
        .collect()
}

impl Layer {
    pub fn new(kind: LayerKind) -> Layer {
        let params = kind
            .param_shapes()
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                let n = s.iter().product();
                let trainable = !(matches!(kind, LayerKind::BatchNorm { .. }) && i >= 2);
                Param::new(s, vec![0.0; n], trainable)
            })
            .collect();
        Layer { kind, params }
    }

    pub(crate) fn with_params(kind: LayerKind, params: Vec<Param>) -> Layer {
        Layer { kind, params }
    }

    pub fn kind(&self) -> LayerKind {
        self.kind
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub(crate) fn init(&mut self, rng: &mut dyn RngCore, narrow: bool) {
        match self.kind {
            LayerKind::Dense { inputs, outputs } => {
                self.params[0].values = glorot_uniform(rng, inputs * outputs, inputs, outputs, narrow);
                self.params[1].values.fill(0.0);
            }
            LayerKind::Conv2d { in_channels, filters, kernel, .. } => {
                let area = kernel[0] * kernel[1];
                let n = filters * in_channels * area;
                self.params[0].values = glorot_uniform(rng, n, in_channels * area, filters * area, narrow);
                self.params[1].values.fill(0.0);
            }
            LayerKind::BatchNorm { .. } => {
                self.params[0].values.fill(1.0);
                self.params[1].values.fill(0.0);
                self.params[2].values.fill(0.0);
                self.params[3].values.fill(1.0);
            }
            _ => {}
        }
        for p in &mut self.params {
            p.zero_grad();
        }
    }

    pub(crate) fn forward(
        &self,
        mode: Mode,
        x: &Act,
        training: bool,
    ) -> Result<(Act, Extra, Option<Running>, NumericEvents)> {
        let per_sample = &x.shape[1..];
        let out_shape = self
            .kind
            .output_shape(per_sample)
            .map_err(|e| Error::contract(format!("{}: input {:?}: {e}", self.kind.name(), x.shape)))?;
        let n = x.batch();
        let a = mode.arith;
        let mut flushed = 0u64;
        let mut extra = Extra::None;
        let mut running = None;
        let mut data = match self.kind {
            LayerKind::Dense { inputs, outputs } => {
                let w = self.params[0].working(mode);
                let b = self.params[1].working(mode);
                let (mut y, f) = matmul_raw(a, &x.data, &w, n, inputs, outputs);
                flushed += f;
                for row in y.chunks_mut(outputs) {
                    for (v, &bj) in row.iter_mut().zip(b.iter()) {
                        *v = a.add(*v, bj);
                    }
                }
                y
            }
            LayerKind::Relu => x.data.iter().map(|&v| if v > 0.0 || v.is_nan() { v } else { 0.0 }).collect(),
            LayerKind::Softmax => {
                let (y, f) = loss::softmax_rows(a, &x.data, out_shape[0]);
                flushed += f;
                y
            }
            LayerKind::Conv2d { filters, kernel, stride, padding, .. } => {
                let g = ConvGeometry::new(&x.shape, kernel[0], kernel[1], Conv2dParams { stride, padding })?;
                let w = self.params[0].working(mode);
                let b = self.params[1].working(mode);
                let col = im2col_raw(&g, &x.data);
                let (mut fm, f) = matmul_raw(a, &w, &col, filters, g.patch(), g.positions());
                flushed += f;
                for (row, &bf) in fm.chunks_mut(g.positions()).zip(b.iter()) {
                    for v in row {
                        *v = a.add(*v, bf);
                    }
                }
                if training {
                    extra = Extra::Conv { col };
                }
                filters_major_to_batch_major(&fm, filters, n, g.oh * g.ow)
            }
            LayerKind::MaxPool2d { size, stride } => {
                let (y, argmax) = maxpool_forward(x, size, stride, &out_shape);
                if training {
                    extra = Extra::MaxPool { argmax };
                }
                y
            }
            LayerKind::Flatten => x.data.clone(),
            LayerKind::BatchNorm { channels } => {
                let spatial = per_sample[1..].iter().product::<usize>();
                let (y, xhat, denom, stats) = self.batchnorm_forward(mode, x, channels, spatial, training);
                if training {
                    extra = Extra::BatchNorm { xhat, denom };
                    running = stats;
                }
                y
            }
        };
        mode.store(&mut data);
        let events = NumericEvents::scan(&data).with_underflows(flushed);
        let mut shape = vec![n];
        shape.extend_from_slice(&out_shape);
        Ok((Act { shape, data }, extra, running, events))
    }

    fn batchnorm_forward(
        &self,
        mode: Mode,
        x: &Act,
        channels: usize,
        spatial: usize,
        training: bool,
    ) -> (Vec<f32>, Vec<f32>, Vec<f32>, Option<Running>) {
        let a = mode.arith;
        let n = x.batch();
        let gamma = self.params[0].working(mode);
        let beta = self.params[1].working(mode);
        let eps = mode.constant(BN_EPSILON);
        let (mean, var) = if training {
            let mean: Vec<f32> = (0..channels)
                .map(|c| channel_mean(a, n, spatial, |i, s| x.data[(i * channels + c) * spatial + s]))
                .collect();
            let var: Vec<f32> = (0..channels)
                .map(|c| {
                    channel_mean(a, n, spatial, |i, s| {
                        let d = a.sub(x.data[(i * channels + c) * spatial + s], mean[c]);
                        a.mul(d, d)
                    })
                })
                .collect();
            (mean, var)
        } else {
            (self.params[2].working(mode).into_owned(), self.params[3].working(mode).into_owned())
        };
        let denom: Vec<f32> = var.iter().map(|&v| a.sqrt(a.add(v, eps))).collect();
        let mut xhat = vec![0f32; x.data.len()];
        let mut y = vec![0f32; x.data.len()];
        for i in 0..n {
            for c in 0..channels {
                for s in 0..spatial {
                    let k = (i * channels + c) * spatial + s;
                    xhat[k] = a.div(a.sub(x.data[k], mean[c]), denom[c]);
                    y[k] = a.add(a.mul(gamma[c], xhat[k]), beta[c]);
                }
            }
        }
        let stats = training.then_some(Running { mean, var });
        (y, xhat, denom, stats)
    }

    /// Blend batch statistics into the running statistics.
    pub(crate) fn apply_running(&mut self, mode: Mode, r: Running) {
        let a = mode.arith;
        let m = mode.constant(BN_MOMENTUM);
        let one_minus = a.sub(1.0, m);
        for (idx, batch) in [(2, r.mean), (3, r.var)] {
            for (v, b) in self.params[idx].values.iter_mut().zip(batch) {
                *v = a.add(a.mul(m, *v), a.mul(one_minus, b));
            }
        }
    }

    /// Backpropagate `dy` through this layer, writing parameter gradients.
    /// Returns the input gradient (empty when `need_dx` is false).
    pub(crate) fn backward(
        &mut self,
        mode: Mode,
        x: &Act,
        extra: &Extra,
        dy: &Act,
        need_dx: bool,
    ) -> Result<(Act, NumericEvents)> {
        let a = mode.arith;
        let n = x.batch();
        let mut flushed = 0u64;
        let mut events = NumericEvents::default();
        let mut dx = match (self.kind, extra) {
            (LayerKind::Dense { inputs, outputs }, _) => {
                let xt = transpose_raw(&x.data, n, inputs);
                let (mut dw, f) = matmul_raw(a, &xt, &dy.data, inputs, n, outputs);
                flushed += f;
                let mut db: Vec<f32> = (0..outputs).map(|j| a.sum((0..n).map(|i| dy.data[i * outputs + j]))).collect();
                mode.store(&mut dw);
                mode.store(&mut db);
                events += NumericEvents::scan(&dw) + NumericEvents::scan(&db);
                *self.params[0].grad_mut() = dw;
                *self.params[1].grad_mut() = db;
                if need_dx {
                    let w = self.params[0].working(mode);
                    let wt = transpose_raw(&w, inputs, outputs);
                    let (dx, f) = matmul_raw(a, &dy.data, &wt, n, outputs, inputs);
                    flushed += f;
                    dx
                } else {
                    vec![]
                }
            }
            (LayerKind::Relu, _) => x.data.iter().zip(&dy.data).map(|(&v, &g)| if v > 0.0 { g } else { 0.0 }).collect(),
            (LayerKind::Flatten, _) => dy.data.clone(),
            (LayerKind::Conv2d { filters, kernel, stride, padding, .. }, Extra::Conv { col }) => {
                let g = ConvGeometry::new(&x.shape, kernel[0], kernel[1], Conv2dParams { stride, padding })?;
                let (patch, positions) = (g.patch(), g.positions());
                let dy_fm = batch_major_to_filters_major(&dy.data, n, filters, g.oh * g.ow);
                let colt = transpose_raw(col, patch, positions);
                let (mut dw, f) = matmul_raw(a, &dy_fm, &colt, filters, positions, patch);
                flushed += f;
                let mut db: Vec<f32> = dy_fm.chunks(positions).map(|row| a.sum(row.iter().copied())).collect();
                mode.store(&mut dw);
                mode.store(&mut db);
                events += NumericEvents::scan(&dw) + NumericEvents::scan(&db);
                *self.params[0].grad_mut() = dw;
                *self.params[1].grad_mut() = db;
                if need_dx {
                    let w = self.params[0].working(mode);
                    let wt = transpose_raw(&w, filters, patch);
                    let (dcol, f) = matmul_raw(a, &wt, &dy_fm, patch, filters, positions);
                    flushed += f;
                    col2im(a, &g, &dcol)
                } else {
                    vec![]
                }
            }
            (LayerKind::MaxPool2d { .. }, Extra::MaxPool { argmax }) => {
                let mut dx = vec![0f32; x.data.len()];
                for (&src, &g) in argmax.iter().zip(&dy.data) {
                    dx[src] = a.add(dx[src], g);
                }
                dx
            }
            (LayerKind::BatchNorm { channels }, Extra::BatchNorm { xhat, denom }) => {
                let spatial = x.shape[2..].iter().product::<usize>();
                let (dx, f) = self.batchnorm_backward(mode, n, channels, spatial, xhat, denom, dy, &mut events);
                flushed += f;
                dx
            }
            (LayerKind::Softmax, _) => {
                return Err(Error::contract("softmax gradient is only available fused with cross-entropy"))
            }
            (kind, _) => return Err(Error::contract(format!("{} cache does not match layer", kind.name()))),
        };
        mode.store(&mut dx);
        events += NumericEvents::scan(&dx).with_underflows(flushed);
        let shape = if need_dx { x.shape.clone() } else { vec![0] };
        Ok((Act { shape, data: dx }, events))
    }

    #[allow(clippy::too_many_arguments)]
    fn batchnorm_backward(
        &mut self,
        mode: Mode,
        n: usize,
        channels: usize,
        spatial: usize,
        xhat: &[f32],
        denom: &[f32],
        dy: &Act,
        events: &mut NumericEvents,
    ) -> (Vec<f32>, u64) {
        let a = mode.arith;
        let at = |i: usize, c: usize, s: usize| (i * channels + c) * spatial + s;
        let gamma = self.params[0].working(mode).into_owned();
        let mut flushed = 0u64;
        let mut dgamma = vec![0f32; channels];
        let mut dbeta = vec![0f32; channels];
        let mut dxhat = vec![0f32; xhat.len()];
        for c in 0..channels {
            dbeta[c] = channel_sum(a, n, spatial, |i, s| dy.data[at(i, c, s)]);
            dgamma[c] = channel_sum(a, n, spatial, |i, s| {
                let k = at(i, c, s);
                let p = a.mul(dy.data[k], xhat[k]);
                flushed += (p == 0.0 && dy.data[k] != 0.0 && xhat[k] != 0.0) as u64;
                p
            });
            for i in 0..n {
                for s in 0..spatial {
                    let k = at(i, c, s);
                    dxhat[k] = a.mul(dy.data[k], gamma[c]);
                }
            }
        }
        let mut dx = vec![0f32; xhat.len()];
        for c in 0..channels {
            let m1 = channel_mean(a, n, spatial, |i, s| dxhat[at(i, c, s)]);
            let m2 = channel_mean(a, n, spatial, |i, s| {
                let k = at(i, c, s);
                a.mul(dxhat[k], xhat[k])
            });
            for i in 0..n {
                for s in 0..spatial {
                    let k = at(i, c, s);
                    let centered = a.sub(a.sub(dxhat[k], m1), a.mul(xhat[k], m2));
                    dx[k] = a.div(centered, denom[c]);
                }
            }
        }
        mode.store(&mut dgamma);
        mode.store(&mut dbeta);
        *events += NumericEvents::scan(&dgamma) + NumericEvents::scan(&dbeta);
        *self.params[0].grad_mut() = dgamma;
        *self.params[1].grad_mut() = dbeta;
        (dx, flushed)
    }
}

/// Sum of one channel over samples `i` and spatial positions `s`: each
/// sample's spatial values are summed first, then the per-sample totals.
fn channel_sum(a: Arith, n: usize, spatial: usize, mut f: impl FnMut(usize, usize) -> f32) -> f32 {
    if spatial == 1 {
        return a.sum((0..n).map(|i| f(i, 0)));
    }
    let mut totals = Vec::with_capacity(n);
    for i in 0..n {
        totals.push(a.sum((0..spatial).map(|s| f(i, s))));
    }
    a.sum(totals)
}

/// Mean of one channel as the mean over samples of per-sample spatial means,
/// which keeps every binary16 partial sum small.
fn channel_mean(a: Arith, n: usize, spatial: usize, mut f: impl FnMut(usize, usize) -> f32) -> f32 {
    let nf = a.round(n as f32);
    if spatial == 1 {
        return a.div(a.sum((0..n).map(|i| f(i, 0))), nf);
    }
    let sf = a.round(spatial as f32);
    let mut means = Vec::with_capacity(n);
    for i in 0..n {
        means.push(a.div(a.sum((0..spatial).map(|s| f(i, s))), sf));
    }
    a.div(a.sum(means), nf)
}

fn maxpool_forward(x: &Act, size: usize, stride: usize, out_shape: &[usize]) -> (Vec<f32>, Vec<usize>) {
    let (n, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let mut y = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = base + oy * stride * w + ox * stride;
                let mut best = x.data[best_idx];
                'window: for i in 0..size {
                    for j in 0..size {
                        if best.is_nan() {
                            break 'window;
                        }
                        let k = base + (oy * stride + i) * w + ox * stride + j;
                        let v = x.data[k];
                        if v.is_nan() || v > best {
                            best = v;
                            best_idx = k;
                        }
                    }
                }
                y.push(best);
                argmax.push(best_idx);
            }
        }
    }
    (y, argmax)
}
