//! Differentiable layers with cached forward state.
//!
//! Every `backward` consumes the cache of the preceding `forward` and accumulates
//! parameter gradients (`+=`) into the parameter tensors' gradient buffers.

use super::fake_quant::FakeQuantWeight;
use super::Phase;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

fn shape_err(msg: String) -> Error {
    Error::InvalidInput(msg)
}

fn no_cache(name: &str) -> Error {
    Error::State(format!("{name}: backward called before forward"))
}

/// Fully connected layer `y = x W^T + b`, `W` of shape `[out, in]`.
#[derive(Debug, Clone)]
pub struct Dense<T> {
    pub name: String,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub quant: Option<FakeQuantWeight<T>>,
    input: Option<Tensor<T>>,
    effective: Option<Tensor<T>>,
}

impl<T: Real> Dense<T> {
    pub fn new(name: &str, weight: Tensor<T>, bias: Tensor<T>) -> Self {
        Self {
            name: name.into(),
            weight,
            bias,
            quant: None,
            input: None,
            effective: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (fan_in, out) = (self.in_features(), self.out_features());
        if x.shape().len() != 2 || x.shape()[1] != fan_in {
            return Err(shape_err(format!(
                "{}: expected [batch, {fan_in}], got {:?}",
                self.name,
                x.shape()
            )));
        }
        let w = match &self.quant {
            Some(q) => q.forward(&self.weight)?,
            None => self.weight.clone(),
        };
        let batch = x.shape()[0];
        let mut y = Vec::with_capacity(batch * out);
        for _ in 0..batch {
            y.extend_from_slice(self.bias.data());
        }
        T::gemm(
            batch,
            fan_in,
            out,
            T::one(),
            (x.data(), fan_in as isize, 1),
            (w.data(), 1, fan_in as isize),
            T::one(),
            (&mut y, out as isize, 1),
        );
        self.input = Some(x.clone());
        self.effective = Some(w);
        Tensor::new(&[batch, out], y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.take().ok_or_else(|| no_cache(&self.name))?;
        let w = self.effective.take().ok_or_else(|| no_cache(&self.name))?;
        let (fan_in, out, batch) = (self.in_features(), self.out_features(), x.shape()[0]);
        let mut dw = vec![T::zero(); out * fan_in];
        T::gemm(
            out,
            batch,
            fan_in,
            T::one(),
            (dy.data(), 1, out as isize),
            (x.data(), fan_in as isize, 1),
            T::zero(),
            (&mut dw, fan_in as isize, 1),
        );
        let db = self.bias.grad_mut();
        for row in dy.data().chunks(out) {
            for (g, &v) in db.iter_mut().zip(row) {
                *g += v;
            }
        }
        let mut dx = vec![T::zero(); batch * fan_in];
        T::gemm(
            batch,
            out,
            fan_in,
            T::one(),
            (dy.data(), out as isize, 1),
            (w.data(), fan_in as isize, 1),
            T::zero(),
            (&mut dx, fan_in as isize, 1),
        );
        accumulate_weight_grad(&mut self.weight, &mut self.quant, dw)?;
        Tensor::new(&[batch, fan_in], dx)
    }
}

fn accumulate_weight_grad<T: Real>(
    weight: &mut Tensor<T>,
    quant: &mut Option<FakeQuantWeight<T>>,
    grad_effective: Vec<T>,
) -> Result<()> {
    let grad_latent = match quant {
        Some(q) => q.backward(weight, &grad_effective)?,
        None => grad_effective,
    };
    for (g, v) in weight.grad_mut().iter_mut().zip(grad_latent) {
        *g += v;
    }
    Ok(())
}

/// 2-D convolution, stride 1, square kernel, zero padding. Weight `[out, in, k, k]`.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub name: String,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub padding: usize,
    pub quant: Option<FakeQuantWeight<T>>,
    cols: Option<Vec<T>>,
    in_shape: Option<Vec<usize>>,
    effective: Option<Tensor<T>>,
}

impl<T: Real> Conv2d<T> {
    pub fn new(name: &str, weight: Tensor<T>, bias: Tensor<T>, padding: usize) -> Self {
        Self {
            name: name.into(),
            weight,
            bias,
            padding,
            quant: None,
            cols: None,
            in_shape: None,
            effective: None,
        }
    }

    fn dims(&self) -> (usize, usize, usize) {
        let s = self.weight.shape();
        (s[0], s[1], s[2])
    }

    pub fn out_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let (_, _, k) = self.dims();
        let (hp, wp) = (h + 2 * self.padding, w + 2 * self.padding);
        (hp >= k && wp >= k).then(|| (hp - k + 1, wp - k + 1))
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (out_c, in_c, k) = self.dims();
        let s = x.shape();
        if s.len() != 4 || s[1] != in_c {
            return Err(shape_err(format!(
                "{}: expected [batch, {in_c}, h, w], got {s:?}",
                self.name
            )));
        }
        let (batch, h, w) = (s[0], s[2], s[3]);
        let (ho, wo) = self.out_hw(h, w).ok_or_else(|| {
            shape_err(format!(
                "{}: {h}x{w} input is smaller than the kernel",
                self.name
            ))
        })?;
        let ckk = in_c * k * k;
        let hw = ho * wo;
        let pad = self.padding as isize;
        let mut cols = vec![T::zero(); batch * ckk * hw];
        for b in 0..batch {
            let img = &x.data()[b * in_c * h * w..(b + 1) * in_c * h * w];
            let col = &mut cols[b * ckk * hw..(b + 1) * ckk * hw];
            for c in 0..in_c {
                for ki in 0..k {
                    for kj in 0..k {
                        let row = (c * k + ki) * k + kj;
                        for oi in 0..ho {
                            let ii = oi as isize + ki as isize - pad;
                            if ii < 0 || ii >= h as isize {
                                continue;
                            }
                            for oj in 0..wo {
                                let jj = oj as isize + kj as isize - pad;
                                if jj >= 0 && jj < w as isize {
                                    col[row * hw + oi * wo + oj] =
                                        img[(c * h + ii as usize) * w + jj as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        let wt = match &self.quant {
            Some(q) => q.forward(&self.weight)?,
            None => self.weight.clone(),
        };
        let mut y = vec![T::zero(); batch * out_c * hw];
        for b in 0..batch {
            let yb = &mut y[b * out_c * hw..(b + 1) * out_c * hw];
            for (o, chunk) in yb.chunks_mut(hw).enumerate() {
                chunk.iter_mut().for_each(|v| *v = self.bias.data()[o]);
            }
            T::gemm(
                out_c,
                ckk,
                hw,
                T::one(),
                (wt.data(), ckk as isize, 1),
                (&cols[b * ckk * hw..(b + 1) * ckk * hw], hw as isize, 1),
                T::one(),
                (yb, hw as isize, 1),
            );
        }
        self.cols = Some(cols);
        self.in_shape = Some(s.to_vec());
        self.effective = Some(wt);
        Tensor::new(&[batch, out_c, ho, wo], y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let cols = self.cols.take().ok_or_else(|| no_cache(&self.name))?;
        let in_shape = self.in_shape.take().ok_or_else(|| no_cache(&self.name))?;
        let wt = self.effective.take().ok_or_else(|| no_cache(&self.name))?;
        let (out_c, in_c, k) = self.dims();
        let (batch, h, w) = (in_shape[0], in_shape[2], in_shape[3]);
        let (ho, wo) = (dy.shape()[2], dy.shape()[3]);
        let (ckk, hw) = (in_c * k * k, ho * wo);
        let pad = self.padding as isize;
        let mut dw = vec![T::zero(); out_c * ckk];
        let mut dx = vec![T::zero(); batch * in_c * h * w];
        let mut dcol = vec![T::zero(); ckk * hw];
        {
            let db = self.bias.grad_mut();
            for b in 0..batch {
                let dyb = &dy.data()[b * out_c * hw..(b + 1) * out_c * hw];
                for (o, chunk) in dyb.chunks(hw).enumerate() {
                    db[o] += chunk.iter().copied().sum::<T>();
                }
            }
        }
        for b in 0..batch {
            let dyb = &dy.data()[b * out_c * hw..(b + 1) * out_c * hw];
            let colb = &cols[b * ckk * hw..(b + 1) * ckk * hw];
            T::gemm(
                out_c,
                hw,
                ckk,
                T::one(),
                (dyb, hw as isize, 1),
                (colb, 1, hw as isize),
                T::one(),
                (&mut dw, ckk as isize, 1),
            );
            T::gemm(
                ckk,
                out_c,
                hw,
                T::one(),
                (wt.data(), 1, ckk as isize),
                (dyb, hw as isize, 1),
                T::zero(),
                (&mut dcol, hw as isize, 1),
            );
            let img = &mut dx[b * in_c * h * w..(b + 1) * in_c * h * w];
            for c in 0..in_c {
                for ki in 0..k {
                    for kj in 0..k {
                        let row = (c * k + ki) * k + kj;
                        for oi in 0..ho {
                            let ii = oi as isize + ki as isize - pad;
                            if ii < 0 || ii >= h as isize {
                                continue;
                            }
                            for oj in 0..wo {
                                let jj = oj as isize + kj as isize - pad;
                                if jj >= 0 && jj < w as isize {
                                    img[(c * h + ii as usize) * w + jj as usize] +=
                                        dcol[row * hw + oi * wo + oj];
                                }
                            }
                        }
                    }
                }
            }
        }
        accumulate_weight_grad(&mut self.weight, &mut self.quant, dw)?;
        Tensor::new(&in_shape, dx)
    }
}

/// Per-channel batch normalization over `[batch, C]` or `[batch, C, h, w]` inputs.
#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub name: String,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache<T>>,
}

#[derive(Debug, Clone)]
struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    shape: Vec<usize>,
    train: bool,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            name: name.into(),
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn layout(&self, shape: &[usize]) -> Result<(usize, usize, usize)> {
        let c = self.channels();
        match shape {
            [b, ch] if *ch == c => Ok((*b, c, 1)),
            [b, ch, h, w] if *ch == c => Ok((*b, c, h * w)),
            _ => Err(shape_err(format!(
                "{}: {c} channels do not fit input {shape:?}",
                self.name
            ))),
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, phase: Phase) -> Result<Tensor<T>> {
        let (batch, c, inner) = self.layout(x.shape())?;
        let count = (batch * inner) as f64;
        let idx = |b: usize, ch: usize, i: usize| (b * c + ch) * inner + i;
        let data = x.data();
        let mut inv_std = vec![T::zero(); c];
        let mut mean = vec![T::zero(); c];
        match phase {
            Phase::Train => {
                for ch in 0..c {
                    let mut s = 0.0;
                    for b in 0..batch {
                        for i in 0..inner {
                            s += data[idx(b, ch, i)].as_f64();
                        }
                    }
                    let m = s / count;
                    let mut v = 0.0;
                    for b in 0..batch {
                        for i in 0..inner {
                            v += (data[idx(b, ch, i)].as_f64() - m).powi(2);
                        }
                    }
                    let var = v / count;
                    mean[ch] = T::lit(m);
                    inv_std[ch] = T::lit(1.0 / (var + self.eps).sqrt());
                    let unbiased = if count > 1.0 { v / (count - 1.0) } else { var };
                    let mo = self.momentum;
                    self.running_mean[ch] =
                        T::lit((1.0 - mo) * self.running_mean[ch].as_f64() + mo * m);
                    self.running_var[ch] =
                        T::lit((1.0 - mo) * self.running_var[ch].as_f64() + mo * unbiased);
                }
            }
            Phase::Eval => {
                for ch in 0..c {
                    mean[ch] = self.running_mean[ch];
                    inv_std[ch] = T::lit(1.0 / (self.running_var[ch].as_f64() + self.eps).sqrt());
                }
            }
        }
        let mut xhat = vec![T::zero(); data.len()];
        let mut y = vec![T::zero(); data.len()];
        let (g, bt) = (self.gamma.data(), self.beta.data());
        for b in 0..batch {
            for ch in 0..c {
                for i in 0..inner {
                    let j = idx(b, ch, i);
                    xhat[j] = (data[j] - mean[ch]) * inv_std[ch];
                    y[j] = g[ch] * xhat[j] + bt[ch];
                }
            }
        }
        self.cache = Some(BnCache {
            xhat,
            inv_std,
            shape: x.shape().to_vec(),
            train: phase == Phase::Train,
        });
        Tensor::new(x.shape(), y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or_else(|| no_cache(&self.name))?;
        let (batch, c, inner) = self.layout(&cache.shape)?;
        let idx = |b: usize, ch: usize, i: usize| (b * c + ch) * inner + i;
        let count = T::lit((batch * inner) as f64);
        let g = dy.data();
        let mut sum_dy = vec![T::zero(); c];
        let mut sum_dy_xhat = vec![T::zero(); c];
        for b in 0..batch {
            for ch in 0..c {
                for i in 0..inner {
                    let j = idx(b, ch, i);
                    sum_dy[ch] += g[j];
                    sum_dy_xhat[ch] += g[j] * cache.xhat[j];
                }
            }
        }
        for ch in 0..c {
            self.gamma.grad_mut()[ch] += sum_dy_xhat[ch];
            self.beta.grad_mut()[ch] += sum_dy[ch];
        }
        let gamma = self.gamma.data();
        let mut dx = vec![T::zero(); g.len()];
        for b in 0..batch {
            for ch in 0..c {
                let scale = gamma[ch] * cache.inv_std[ch];
                for i in 0..inner {
                    let j = idx(b, ch, i);
                    dx[j] = if cache.train {
                        scale
                            * (g[j] - sum_dy[ch] / count - cache.xhat[j] * sum_dy_xhat[ch] / count)
                    } else {
                        scale * g[j]
                    };
                }
            }
        }
        Tensor::new(&cache.shape, dx)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    pub name: String,
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.into(),
            mask: None,
        }
    }

    pub fn forward<T: Real>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.mask = Some(x.data().iter().map(|&v| v > T::zero()).collect());
        Ok(x.map(|v| if v > T::zero() { v } else { T::zero() }))
    }

    pub fn backward<T: Real>(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let mask = self.mask.take().ok_or_else(|| no_cache(&self.name))?;
        let data = dy
            .data()
            .iter()
            .zip(mask)
            .map(|(&g, m)| if m { g } else { T::zero() })
            .collect();
        Tensor::new(dy.shape(), data)
    }
}

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
#[derive(Debug, Clone, Default)]
pub struct MaxPool2d {
    pub name: String,
    argmax: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool2d {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.into(),
            argmax: None,
        }
    }

    pub fn forward<T: Real>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() != 4 || s[2] < 2 || s[3] < 2 {
            return Err(shape_err(format!(
                "{}: expected [batch, c, h>=2, w>=2], got {s:?}",
                self.name
            )));
        }
        let (bc, h, w) = (s[0] * s[1], s[2], s[3]);
        let (ho, wo) = (h / 2, w / 2);
        let mut out = Vec::with_capacity(bc * ho * wo);
        let mut arg = Vec::with_capacity(bc * ho * wo);
        let d = x.data();
        for p in 0..bc {
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = (p * h + 2 * i) * w + 2 * j;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let cand = (p * h + 2 * i + di) * w + 2 * j + dj;
                        if d[cand] > d[best] {
                            best = cand;
                        }
                    }
                    out.push(d[best]);
                    arg.push(best);
                }
            }
        }
        self.argmax = Some((arg, s.to_vec()));
        Tensor::new(&[s[0], s[1], ho, wo], out)
    }

    pub fn backward<T: Real>(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (arg, shape) = self.argmax.take().ok_or_else(|| no_cache(&self.name))?;
        let mut dx = vec![T::zero(); shape.iter().product()];
        for (&i, &g) in arg.iter().zip(dy.data()) {
            dx[i] += g;
        }
        Tensor::new(&shape, dx)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Flatten {
    pub name: String,
    shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.into(),
            shape: None,
        }
    }

    pub fn forward<T: Real>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.shape = Some(x.shape().to_vec());
        let b = x.dim0();
        x.clone().reshape(&[b, x.len() / b])
    }

    pub fn backward<T: Real>(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let s = self.shape.take().ok_or_else(|| no_cache(&self.name))?;
        dy.clone().reshape(&s)
    }
}
