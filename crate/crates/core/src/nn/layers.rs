//! Layer implementations with hand-written backward passes.
//!
//! Activations are batched, row-major `f64` tensors. Image-like tensors are
//! `[batch, channels, height, width]`; vector tensors are `[batch, features]`.
//! Each layer caches what its backward pass needs during a forward call, so
//! `backward` must follow the matching `forward`.

use rand::Rng;

use super::Tensor;
use crate::rng::SimRng;

pub(crate) type LayerResult<T> = std::result::Result<T, String>;

fn fan_in_uniform(rng: &mut SimRng, len: usize, fan_in: usize) -> Vec<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..len).map(|_| rng.gen_range(-bound..bound)).collect()
}

#[derive(Debug, Clone)]
pub(crate) struct Conv2d {
    pub in_channels: usize,
    pub filters: usize,
    pub kh: usize,
    pub kw: usize,
    /// `[filters, in_channels, kh, kw]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub grad_weight: Vec<f64>,
    pub grad_bias: Vec<f64>,
    input: Option<Tensor>,
}

impl Conv2d {
    pub fn new(in_channels: usize, filters: usize, kh: usize, kw: usize, rng: &mut SimRng) -> Self {
        let n = filters * in_channels * kh * kw;
        Conv2d {
            in_channels,
            filters,
            kh,
            kw,
            weight: fan_in_uniform(rng, n, in_channels * kh * kw),
            bias: vec![0.0; filters],
            grad_weight: vec![0.0; n],
            grad_bias: vec![0.0; filters],
            input: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, cache: bool) -> LayerResult<Tensor> {
        let &[n, cin, h, w] = x.shape() else {
            return Err(format!("expected a 4-d input, got shape {:?}", x.shape()));
        };
        if cin != self.in_channels || h < self.kh || w < self.kw {
            return Err(format!(
                "input {:?} incompatible with {} channels and a {}x{} kernel",
                x.shape(),
                self.in_channels,
                self.kh,
                self.kw
            ));
        }
        let (oh, ow) = (h - self.kh + 1, w - self.kw + 1);
        let cout = self.filters;
        let patch = cin * self.kh * self.kw;
        let mut out = vec![0.0; n * cout * oh * ow];
        let mut cols = vec![0.0; oh * ow * patch];
        let xd = x.data();
        for b in 0..n {
            // im2col: one row per output position, laid out like a filter
            for oy in 0..oh {
                for ox in 0..ow {
                    let row = &mut cols[(oy * ow + ox) * patch..][..patch];
                    let mut r = 0;
                    for ci in 0..cin {
                        let src = &xd[(b * cin + ci) * h * w..][..h * w];
                        for ki in 0..self.kh {
                            let line = &src[(oy + ki) * w + ox..][..self.kw];
                            row[r..r + self.kw].copy_from_slice(line);
                            r += self.kw;
                        }
                    }
                }
            }
            for co in 0..cout {
                let wr = &self.weight[co * patch..][..patch];
                let plane = &mut out[(b * cout + co) * oh * ow..][..oh * ow];
                for (p, d) in plane.iter_mut().enumerate() {
                    *d = self.bias[co] + dot(wr, &cols[p * patch..][..patch]);
                }
            }
        }
        self.input = cache.then(|| x.clone());
        Ok(Tensor::new(vec![n, cout, oh, ow], out))
    }

    pub fn backward(&mut self, grad: &Tensor) -> LayerResult<Tensor> {
        let x = self
            .input
            .as_ref()
            .ok_or("backward called without a cached forward pass")?;
        let &[n, cin, h, w] = x.shape() else { unreachable!() };
        let (oh, ow) = (h - self.kh + 1, w - self.kw + 1);
        let cout = self.filters;
        if grad.shape() != [n, cout, oh, ow] {
            return Err(format!("gradient shape {:?} does not match output", grad.shape()));
        }
        let xd = x.data();
        let gd = grad.data();
        let mut gx = vec![0.0; xd.len()];
        for b in 0..n {
            for co in 0..cout {
                let gplane = &gd[(b * cout + co) * oh * ow..][..oh * ow];
                self.grad_bias[co] += gplane.iter().sum::<f64>();
                for ci in 0..cin {
                    let src = &xd[(b * cin + ci) * h * w..][..h * w];
                    let dst = &mut gx[(b * cin + ci) * h * w..][..h * w];
                    for ki in 0..self.kh {
                        for kj in 0..self.kw {
                            let widx = ((co * cin + ci) * self.kh + ki) * self.kw + kj;
                            let wv = self.weight[widx];
                            let mut acc = 0.0;
                            for oy in 0..oh {
                                let g = &gplane[oy * ow..][..ow];
                                let s = &src[(oy + ki) * w + kj..][..ow];
                                acc += g.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                                let d = &mut dst[(oy + ki) * w + kj..][..ow];
                                for (d, g) in d.iter_mut().zip(g) {
                                    *d += wv * g;
                                }
                            }
                            self.grad_weight[widx] += acc;
                        }
                    }
                }
            }
        }
        Ok(Tensor::new(x.shape().to_vec(), gx))
    }
}

/// Batch normalization over the batch (and spatial) axes of each channel.
#[derive(Debug, Clone)]
pub(crate) struct BatchNorm {
    pub channels: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub grad_gamma: Vec<f64>,
    pub grad_beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    cache: Option<NormCache>,
    /// Normalized activations of the last train-mode pass, before scale/shift.
    pub(crate) last_normalized: Option<Tensor>,
}

#[derive(Debug, Clone)]
struct NormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    shape: Vec<usize>,
}

pub(crate) const NORM_EPS: f64 = 1e-8;
const NORM_MOMENTUM: f64 = 0.1;

/// (batch, channels, spatial) view of a 2-d or 4-d tensor.
fn channel_layout(shape: &[usize]) -> Option<(usize, usize, usize)> {
    match *shape {
        [n, c] => Some((n, c, 1)),
        [n, c, h, w] => Some((n, c, h * w)),
        _ => None,
    }
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            channels,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            grad_gamma: vec![0.0; channels],
            grad_beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            cache: None,
            last_normalized: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> LayerResult<Tensor> {
        let (n, c, s) =
            channel_layout(x.shape()).ok_or_else(|| format!("expected a 2-d or 4-d input, got {:?}", x.shape()))?;
        if c != self.channels {
            return Err(format!("expected {} channels, got {c}", self.channels));
        }
        let xd = x.data();
        let idx = |b: usize, ch: usize, i: usize| (b * c + ch) * s + i;
        let mut out = vec![0.0; xd.len()];
        if train {
            let count = (n * s) as f64;
            let mut xhat = vec![0.0; xd.len()];
            let mut inv_std = vec![0.0; c];
            for ch in 0..c {
                let mut mean = 0.0;
                for b in 0..n {
                    mean += xd[idx(b, ch, 0)..][..s].iter().sum::<f64>();
                }
                mean /= count;
                let mut var = 0.0;
                for b in 0..n {
                    var += xd[idx(b, ch, 0)..][..s].iter().map(|v| (v - mean).powi(2)).sum::<f64>();
                }
                var /= count;
                let is = 1.0 / (var + NORM_EPS).sqrt();
                inv_std[ch] = is;
                for b in 0..n {
                    for i in 0..s {
                        let j = idx(b, ch, i);
                        xhat[j] = (xd[j] - mean) * is;
                        out[j] = self.gamma[ch] * xhat[j] + self.beta[ch];
                    }
                }
                let unbiased = if count > 1.0 { var * count / (count - 1.0) } else { var };
                self.running_mean[ch] = (1.0 - NORM_MOMENTUM) * self.running_mean[ch] + NORM_MOMENTUM * mean;
                self.running_var[ch] = (1.0 - NORM_MOMENTUM) * self.running_var[ch] + NORM_MOMENTUM * unbiased;
            }
            self.last_normalized = Some(Tensor::new(x.shape().to_vec(), xhat.clone()));
            self.cache = Some(NormCache {
                xhat,
                inv_std,
                shape: x.shape().to_vec(),
            });
        } else {
            for ch in 0..c {
                let is = 1.0 / (self.running_var[ch] + NORM_EPS).sqrt();
                let (g, bt, m) = (self.gamma[ch], self.beta[ch], self.running_mean[ch]);
                for b in 0..n {
                    for i in 0..s {
                        let j = idx(b, ch, i);
                        out[j] = g * (xd[j] - m) * is + bt;
                    }
                }
            }
        }
        Ok(Tensor::new(x.shape().to_vec(), out))
    }

    pub fn backward(&mut self, grad: &Tensor) -> LayerResult<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or("backward requires a train-mode forward pass")?;
        if grad.shape() != cache.shape.as_slice() {
            return Err(format!("gradient shape {:?} does not match output", grad.shape()));
        }
        let (n, c, s) = channel_layout(&cache.shape).expect("validated in forward");
        let count = (n * s) as f64;
        let gd = grad.data();
        let idx = |b: usize, ch: usize, i: usize| (b * c + ch) * s + i;
        let mut gx = vec![0.0; gd.len()];
        for ch in 0..c {
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for b in 0..n {
                for i in 0..s {
                    let j = idx(b, ch, i);
                    sum_g += gd[j];
                    sum_gx += gd[j] * cache.xhat[j];
                }
            }
            self.grad_beta[ch] += sum_g;
            self.grad_gamma[ch] += sum_gx;
            // dL/dxhat = g·γ; fold γ into the closed-form input gradient
            let k = self.gamma[ch] * cache.inv_std[ch] / count;
            for b in 0..n {
                for i in 0..s {
                    let j = idx(b, ch, i);
                    gx[j] = k * (count * gd[j] - sum_g - cache.xhat[j] * sum_gx);
                }
            }
        }
        Ok(Tensor::new(cache.shape.clone(), gx))
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn forward(&mut self, x: &Tensor, cache: bool) -> Tensor {
        let out: Vec<f64> = x.data().iter().map(|&v| v.max(0.0)).collect();
        self.mask = cache.then(|| x.data().iter().map(|&v| v > 0.0).collect());
        Tensor::new(x.shape().to_vec(), out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> LayerResult<Tensor> {
        let mask = self
            .mask
            .as_ref()
            .ok_or("backward called without a cached forward pass")?;
        if mask.len() != grad.len() {
            return Err("gradient length does not match output".into());
        }
        let g = grad
            .data()
            .iter()
            .zip(mask)
            .map(|(&g, &m)| if m { g } else { 0.0 })
            .collect();
        Ok(Tensor::new(grad.shape().to_vec(), g))
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Dense {
    pub inputs: usize,
    pub units: usize,
    /// `[units, inputs]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub grad_weight: Vec<f64>,
    pub grad_bias: Vec<f64>,
    input: Option<Tensor>,
}

impl Dense {
    pub fn new(inputs: usize, units: usize, rng: &mut SimRng) -> Self {
        Dense {
            inputs,
            units,
            weight: fan_in_uniform(rng, inputs * units, inputs),
            bias: vec![0.0; units],
            grad_weight: vec![0.0; inputs * units],
            grad_bias: vec![0.0; units],
            input: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, cache: bool) -> LayerResult<Tensor> {
        let &[n, f] = x.shape() else {
            return Err(format!("expected a 2-d input, got shape {:?}", x.shape()));
        };
        if f != self.inputs {
            return Err(format!("expected {} features, got {f}", self.inputs));
        }
        let mut out = vec![0.0; n * self.units];
        for b in 0..n {
            let xr = &x.data()[b * f..][..f];
            for o in 0..self.units {
                let wr = &self.weight[o * f..][..f];
                out[b * self.units + o] = self.bias[o] + dot(wr, xr);
            }
        }
        self.input = cache.then(|| x.clone());
        Ok(Tensor::new(vec![n, self.units], out))
    }

    pub fn backward(&mut self, grad: &Tensor) -> LayerResult<Tensor> {
        let x = self
            .input
            .as_ref()
            .ok_or("backward called without a cached forward pass")?;
        let n = x.shape()[0];
        let f = self.inputs;
        if grad.shape() != [n, self.units] {
            return Err(format!("gradient shape {:?} does not match output", grad.shape()));
        }
        let mut gx = vec![0.0; n * f];
        for b in 0..n {
            let xr = &x.data()[b * f..][..f];
            let gxr = &mut gx[b * f..][..f];
            for o in 0..self.units {
                let g = grad.data()[b * self.units + o];
                if g == 0.0 {
                    continue;
                }
                self.grad_bias[o] += g;
                let gw = &mut self.grad_weight[o * f..][..f];
                for (gw, x) in gw.iter_mut().zip(xr) {
                    *gw += g * x;
                }
                let wr = &self.weight[o * f..][..f];
                for (gx, w) in gxr.iter_mut().zip(wr) {
                    *gx += g * w;
                }
            }
        }
        Ok(Tensor::new(vec![n, f], gx))
    }
}

/// Inverted dropout: survivors are scaled by `1/(1-p)` at train time.
#[derive(Debug, Clone)]
pub(crate) struct Dropout {
    pub p: f64,
    mask: Option<Vec<f64>>,
}

impl Dropout {
    pub fn new(p: f64) -> Self {
        Dropout { p, mask: None }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool, rng: &mut SimRng) -> Tensor {
        if !train || self.p == 0.0 {
            self.mask = train.then(|| vec![1.0; x.len()]);
            return x.clone();
        }
        let keep = 1.0 / (1.0 - self.p);
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.gen::<f64>() >= self.p { keep } else { 0.0 })
            .collect();
        let out = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        self.mask = Some(mask);
        Tensor::new(x.shape().to_vec(), out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> LayerResult<Tensor> {
        let mask = self
            .mask
            .as_ref()
            .ok_or("backward requires a train-mode forward pass")?;
        if mask.len() != grad.len() {
            return Err("gradient length does not match output".into());
        }
        let g = grad.data().iter().zip(mask).map(|(g, m)| g * m).collect();
        Ok(Tensor::new(grad.shape().to_vec(), g))
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Flatten {
    shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let n = x.shape()[0];
        let f = x.len() / n.max(1);
        self.shape = Some(x.shape().to_vec());
        Tensor::new(vec![n, f], x.data().to_vec())
    }

    pub fn backward(&mut self, grad: &Tensor) -> LayerResult<Tensor> {
        let shape = self
            .shape
            .clone()
            .ok_or("backward called without a cached forward pass")?;
        Ok(Tensor::new(shape, grad.data().to_vec()))
    }
}

/// Dot product with independent partial sums so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    const LANES: usize = 8;
    let mut acc = [0.0; LANES];
    let (ac, bc) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let tail: f64 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        let x: &[f64; LANES] = x.try_into().unwrap();
        let y: &[f64; LANES] = y.try_into().unwrap();
        for i in 0..LANES {
            acc[i] += x[i] * y[i];
        }
    }
    acc.iter().sum::<f64>() + tail
}
