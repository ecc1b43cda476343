//! Analytic gradients of binary32 models against central differences of an
//! independent binary64 reference forward pass.

use p16::{LayerKind, Model, Precision, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-3;
pub const DENOMINATOR_FLOOR: f64 = 1e-2;
pub const TOLERANCE: f64 = 1e-3;
const CE_CLAMP: f64 = 6.103515625e-5;
const BN_EPSILON: f64 = 1e-3;

/// Activations of a batch: `[N, ...]` flattened, plus the per-sample shape.
pub struct Act {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Loss of the reference pass, and a fingerprint of every ReLU mask and
/// max-pool choice so that kinks between evaluations can be detected.
pub fn reference_loss(kinds: &[LayerKind], params: &[Vec<Vec<f64>>], x: &Act, labels: &[usize]) -> (f64, Vec<usize>) {
    let n = labels.len();
    let mut a = Act { shape: x.shape.clone(), data: x.data.clone() };
    let mut fingerprint = Vec::new();
    for (kind, p) in kinds.iter().zip(params) {
        a = match *kind {
            LayerKind::Dense { inputs, outputs } => {
                let mut y = vec![0.0; n * outputs];
                for i in 0..n {
                    for j in 0..outputs {
                        y[i * outputs + j] =
                            p[1][j] + (0..inputs).map(|k| a.data[i * inputs + k] * p[0][k * outputs + j]).sum::<f64>();
                    }
                }
                Act { shape: vec![outputs], data: y }
            }
            LayerKind::Relu => {
                fingerprint.extend(a.data.iter().map(|&v| (v > 0.0) as usize));
                Act { shape: a.shape, data: a.data.iter().map(|&v| v.max(0.0)).collect() }
            }
            LayerKind::Flatten => Act { shape: vec![a.shape.iter().product()], data: a.data },
            LayerKind::Softmax => {
                let k = a.shape[0];
                let mut y = a.data.clone();
                for row in y.chunks_mut(k) {
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let s: f64 = row.iter().map(|v| (v - m).exp()).sum();
                    row.iter_mut().for_each(|v| *v = (*v - m).exp() / s);
                }
                Act { shape: a.shape, data: y }
            }
            LayerKind::Conv2d { in_channels, filters, kernel: [kh, kw], stride, padding } => {
                let (h, w) = (a.shape[1], a.shape[2]);
                let oh = (h + 2 * padding - kh) / stride + 1;
                let ow = (w + 2 * padding - kw) / stride + 1;
                let mut y = vec![0.0; n * filters * oh * ow];
                for i in 0..n {
                    for f in 0..filters {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut s = p[1][f];
                                for c in 0..in_channels {
                                    for ky in 0..kh {
                                        for kx in 0..kw {
                                            let iy = (oy * stride + ky) as isize - padding as isize;
                                            let ix = (ox * stride + kx) as isize - padding as isize;
                                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                                continue;
                                            }
                                            let xv =
                                                a.data[((i * in_channels + c) * h + iy as usize) * w + ix as usize];
                                            s += xv * p[0][((f * in_channels + c) * kh + ky) * kw + kx];
                                        }
                                    }
                                }
                                y[((i * filters + f) * oh + oy) * ow + ox] = s;
                            }
                        }
                    }
                }
                Act { shape: vec![filters, oh, ow], data: y }
            }
            LayerKind::MaxPool2d { size, stride } => {
                let (c, h, w) = (a.shape[0], a.shape[1], a.shape[2]);
                let oh = (h - size) / stride + 1;
                let ow = (w - size) / stride + 1;
                let mut y = vec![0.0; n * c * oh * ow];
                for i in 0..n {
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut best = (f64::NEG_INFINITY, 0);
                                for ky in 0..size {
                                    for kx in 0..size {
                                        let idx = ((i * c + ch) * h + oy * stride + ky) * w + ox * stride + kx;
                                        if a.data[idx] > best.0 {
                                            best = (a.data[idx], idx);
                                        }
                                    }
                                }
                                fingerprint.push(best.1);
                                y[((i * c + ch) * oh + oy) * ow + ox] = best.0;
                            }
                        }
                    }
                }
                Act { shape: vec![c, oh, ow], data: y }
            }
            LayerKind::BatchNorm { channels } => {
                let spatial: usize = a.shape[1..].iter().product();
                let count = (n * spatial) as f64;
                let at = |i: usize, c: usize, s: usize| (i * channels + c) * spatial + s;
                let mut y = a.data.clone();
                for c in 0..channels {
                    let idx: Vec<usize> = (0..n).flat_map(|i| (0..spatial).map(move |s| at(i, c, s))).collect();
                    let mean = idx.iter().map(|&k| a.data[k]).sum::<f64>() / count;
                    let var = idx.iter().map(|&k| (a.data[k] - mean).powi(2)).sum::<f64>() / count;
                    let denom = (var + BN_EPSILON).sqrt();
                    for &k in &idx {
                        y[k] = p[0][c] * (a.data[k] - mean) / denom + p[1][c];
                    }
                }
                Act { shape: a.shape, data: y }
            }
        };
    }
    let classes = a.shape[0];
    let loss =
        labels.iter().enumerate().map(|(i, &l)| -a.data[i * classes + l].max(CE_CLAMP).ln()).sum::<f64>() / n as f64;
    (loss, fingerprint)
}

pub struct Outcome {
    pub checked: usize,
    pub skipped: usize,
    /// Largest relative error and where it occurred.
    pub worst: f64,
    pub worst_at: String,
    /// Binary32 loss minus the binary64 reference loss.
    pub forward_gap: f64,
}

/// Compare a binary32 model's analytic parameter gradients with central
/// differences of [`reference_loss`]. Coordinates whose perturbation flips a
/// ReLU mask or a max-pool choice are skipped.
pub fn gradient_check(input_shape: &[usize], kinds: &[LayerKind], batch: usize, seed: u64) -> Outcome {
    let mut model = Model::new(input_shape, kinds, Precision::Pure32, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let width: usize = input_shape.iter().product();
    let classes = match kinds[kinds.len() - 2] {
        LayerKind::Dense { outputs, .. } => outputs,
        _ => unreachable!(),
    };
    let xs: Vec<f32> = (0..batch * width).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();
    let mut shape = vec![batch];
    shape.extend_from_slice(input_shape);
    let x = Tensor::from_f32(&shape, &xs, Precision::Pure32).unwrap();

    let params: Vec<Vec<Vec<f64>>> = model
        .layers()
        .iter()
        .map(|l| l.params().iter().map(|p| p.values().iter().map(|&v| v as f64).collect()).collect())
        .collect();
    let (_, loss32, _) = model.train_step_gradients(&x, &labels).unwrap();
    let reference = Act { shape: input_shape.to_vec(), data: xs.iter().map(|&v| v as f64).collect() };
    let (loss64, base_print) = reference_loss(kinds, &params, &reference, &labels);
    let mut out =
        Outcome { checked: 0, skipped: 0, worst: 0.0, worst_at: String::new(), forward_gap: loss32 as f64 - loss64 };
    for (li, layer) in model.layers().iter().enumerate() {
        for (pi, param) in layer.params().iter().enumerate().filter(|(_, p)| p.is_trainable()) {
            for e in 0..param.len() {
                let mut plus = params.clone();
                plus[li][pi][e] += H;
                let mut minus = params.clone();
                minus[li][pi][e] -= H;
                let (lp, fp) = reference_loss(kinds, &plus, &reference, &labels);
                let (lm, fm) = reference_loss(kinds, &minus, &reference, &labels);
                if fp != base_print || fm != base_print {
                    out.skipped += 1;
                    continue;
                }
                let numeric = (lp - lm) / (2.0 * H);
                let analytic = param.grad()[e] as f64;
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR);
                if rel > out.worst {
                    out.worst = rel;
                    out.worst_at =
                        format!("{} param {pi}[{e}]: analytic {analytic:e} numeric {numeric:e}", layer.kind().name());
                }
                out.checked += 1;
            }
        }
    }
    out
}

/// Toy networks that together contain every layer kind:
/// `(name, input shape, layers, batch, seed)`.
pub fn toy_nets() -> Vec<(&'static str, Vec<usize>, Vec<LayerKind>, usize, u64)> {
    vec![
        (
            "dense/relu/softmax",
            vec![6],
            vec![
                LayerKind::Dense { inputs: 6, outputs: 5 },
                LayerKind::Relu,
                LayerKind::Dense { inputs: 5, outputs: 4 },
                LayerKind::Relu,
                LayerKind::Dense { inputs: 4, outputs: 3 },
                LayerKind::Softmax,
            ],
            4,
            1,
        ),
        (
            "conv/batchnorm/maxpool/flatten",
            vec![2, 6, 6],
            vec![
                LayerKind::Conv2d { in_channels: 2, filters: 3, kernel: [3, 3], stride: 1, padding: 1 },
                LayerKind::BatchNorm { channels: 3 },
                LayerKind::Relu,
                LayerKind::MaxPool2d { size: 2, stride: 2 },
                LayerKind::Flatten,
                LayerKind::Dense { inputs: 3 * 3 * 3, outputs: 4 },
                LayerKind::Softmax,
            ],
            3,
            2,
        ),
        (
            "strided conv/flat batchnorm",
            vec![1, 7, 7],
            vec![
                LayerKind::Conv2d { in_channels: 1, filters: 2, kernel: [3, 2], stride: 2, padding: 0 },
                LayerKind::Flatten,
                LayerKind::BatchNorm { channels: 2 * 3 * 3 },
                LayerKind::Dense { inputs: 18, outputs: 5 },
                LayerKind::Softmax,
            ],
            5,
            3,
        ),
        (
            "overlapping pool windows",
            vec![1, 6, 6],
            vec![
                LayerKind::Conv2d { in_channels: 1, filters: 2, kernel: [2, 2], stride: 1, padding: 0 },
                LayerKind::MaxPool2d { size: 3, stride: 1 },
                LayerKind::Flatten,
                LayerKind::Dense { inputs: 2 * 3 * 3, outputs: 3 },
                LayerKind::Softmax,
            ],
            2,
            4,
        ),
    ]
}
