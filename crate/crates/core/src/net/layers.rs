use std::any::Any;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Param, Parameterized, Tensor};
use crate::{seed, Error, Result};

/// Opaque per-forward state consumed by `backward`.
pub type Cache = Box<dyn Any + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Training: dropout active, masks drawn from `seed`.
    Train { seed: u64 },
    Eval,
}

pub trait Layer: Send + Sync {
    fn name(&self) -> &'static str;

    fn forward(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, Cache)>;

    /// Adds parameter gradients into `grads` (ordered like `params()`) and
    /// returns the gradient with respect to the input.
    fn backward(&self, cache: &Cache, grad_out: &Tensor, grads: &mut [Tensor]) -> Result<Tensor>;

    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

pub(crate) fn cache_ref<'a, T: 'static>(cache: &'a Cache, layer: &str) -> Result<&'a T> {
    cache
        .downcast_ref::<T>()
        .ok_or_else(|| Error::Shape(format!("{layer}: cache from a different layer")))
}

/// `c[m x n] += a[m x k] * b[k x n]` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: callers pass slices sized for the given dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// 2-D cross-correlation over `[C_in, H, W]` inputs, computed as im2col + GEMM.
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    pub stride: usize,
    pub padding: usize,
}

struct ConvCache {
    cols: Vec<f64>,
    in_shape: [usize; 3],
    out_hw: (usize, usize),
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Self {
            weight: Param::init(&[out_channels, in_channels, kernel, kernel], fan_in, rng),
            bias: Param::init(&[out_channels], fan_in, rng),
            stride,
            padding,
        }
    }

    pub fn from_params(weight: Tensor, bias: Tensor, stride: usize, padding: usize) -> Result<Self> {
        let [co, _, _, _] = weight.dims::<4>("conv2d weight")?;
        if bias.shape() != [co] {
            return Err(Error::Shape(format!("conv2d bias {:?} for {co} outputs", bias.shape())));
        }
        Ok(Self {
            weight: Param::new(weight),
            bias: Param::new(bias),
            stride,
            padding,
        })
    }

    fn kernel_dims(&self) -> [usize; 4] {
        let s = self.weight.value.shape();
        [s[0], s[1], s[2], s[3]]
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let [_, _, kh, kw] = self.kernel_dims();
        let (hp, wp) = (h + 2 * self.padding, w + 2 * self.padding);
        if hp < kh || wp < kw || self.stride == 0 {
            return Err(Error::Shape(format!(
                "conv2d: {kh}x{kw} kernel does not fit a padded {hp}x{wp} input"
            )));
        }
        Ok(((hp - kh) / self.stride + 1, (wp - kw) / self.stride + 1))
    }
}

impl Layer for Conv2d {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn forward(&self, x: &Tensor, _mode: Mode) -> Result<(Tensor, Cache)> {
        let [ci, h, w] = x.dims::<3>("conv2d input")?;
        let [co, wci, kh, kw] = self.kernel_dims();
        if ci != wci {
            return Err(Error::Shape(format!("conv2d: {ci} input channels, kernel expects {wci}")));
        }
        let (oh, ow) = self.output_hw(h, w)?;
        let (s, p) = (self.stride as isize, self.padding as isize);
        let n = oh * ow;
        let k = ci * kh * kw;
        let mut cols = vec![0.0; k * n];
        let xd = x.data();
        for c in 0..ci {
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = &mut cols[((c * kh + ki) * kw + kj) * n..][..n];
                    for oy in 0..oh {
                        let iy = oy as isize * s + ki as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &xd[(c * h + iy as usize) * w..][..w];
                        let dst = &mut row[oy * ow..][..ow];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = ox as isize * s + kj as isize - p;
                            if ix >= 0 && ix < w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        let mut out = vec![0.0; co * n];
        for (o, chunk) in out.chunks_mut(n).enumerate() {
            chunk.fill(self.bias.value.data()[o]);
        }
        gemm(co, k, n, self.weight.value.data(), (k as isize, 1), &cols, (n as isize, 1), &mut out, 1.0);
        let cache = ConvCache {
            cols,
            in_shape: [ci, h, w],
            out_hw: (oh, ow),
        };
        Ok((Tensor::new(&[co, oh, ow], out)?, Box::new(cache)))
    }

    fn backward(&self, cache: &Cache, grad_out: &Tensor, grads: &mut [Tensor]) -> Result<Tensor> {
        let cache: &ConvCache = cache_ref(cache, "conv2d")?;
        let [co, ci, kh, kw] = self.kernel_dims();
        let [_, h, w] = cache.in_shape;
        let (oh, ow) = cache.out_hw;
        let n = oh * ow;
        let k = ci * kh * kw;
        if grad_out.shape() != [co, oh, ow] {
            return Err(Error::Shape(format!("conv2d: grad {:?}", grad_out.shape())));
        }
        let go = grad_out.data();
        let (gw, rest) = grads.split_at_mut(1);
        // dW += dOut * cols^T
        gemm(co, n, k, go, (n as isize, 1), &cache.cols, (1, n as isize), gw[0].data_mut(), 1.0);
        for (o, chunk) in go.chunks(n).enumerate() {
            rest[0].data_mut()[o] += chunk.iter().sum::<f64>();
        }
        // dcols = W^T * dOut, then scatter back (col2im).
        let mut dcols = vec![0.0; k * n];
        gemm(k, co, n, self.weight.value.data(), (1, k as isize), go, (n as isize, 1), &mut dcols, 0.0);
        let (s, p) = (self.stride as isize, self.padding as isize);
        let mut dx = vec![0.0; ci * h * w];
        for c in 0..ci {
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = &dcols[((c * kh + ki) * kw + kj) * n..][..n];
                    for oy in 0..oh {
                        let iy = oy as isize * s + ki as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut dx[(c * h + iy as usize) * w..][..w];
                        for (ox, &g) in row[oy * ow..][..ow].iter().enumerate() {
                            let ix = ox as isize * s + kj as isize - p;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += g;
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(&[ci, h, w], dx)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

pub struct Relu;

impl Layer for Relu {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn forward(&self, x: &Tensor, _mode: Mode) -> Result<(Tensor, Cache)> {
        let out = Tensor::new(x.shape(), x.data().iter().map(|&v| v.max(0.0)).collect())?;
        let mask: Vec<bool> = x.data().iter().map(|&v| v > 0.0).collect();
        Ok((out, Box::new(mask)))
    }

    fn backward(&self, cache: &Cache, grad_out: &Tensor, _grads: &mut [Tensor]) -> Result<Tensor> {
        let mask: &Vec<bool> = cache_ref(cache, "relu")?;
        let data = grad_out
            .data()
            .iter()
            .zip(mask)
            .map(|(&g, &m)| if m { g } else { 0.0 })
            .collect();
        Tensor::new(grad_out.shape(), data)
    }
}

/// Non-overlapping max pooling with a `ph x pw` window; trailing rows/columns are dropped.
pub struct MaxPool2d {
    pub ph: usize,
    pub pw: usize,
}

impl Layer for MaxPool2d {
    fn name(&self) -> &'static str {
        "maxpool2d"
    }

    fn forward(&self, x: &Tensor, _mode: Mode) -> Result<(Tensor, Cache)> {
        let [c, h, w] = x.dims::<3>("maxpool input")?;
        let (oh, ow) = (h / self.ph, w / self.pw);
        if oh == 0 || ow == 0 {
            return Err(Error::Shape(format!(
                "maxpool {}x{} on a {h}x{w} map",
                self.ph, self.pw
            )));
        }
        let xd = x.data();
        let mut out = Vec::with_capacity(c * oh * ow);
        let mut argmax = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = usize::MAX;
                    let mut best_v = f64::NEG_INFINITY;
                    for dy in 0..self.ph {
                        for dx in 0..self.pw {
                            let idx = (ch * h + oy * self.ph + dy) * w + ox * self.pw + dx;
                            if xd[idx] > best_v || best == usize::MAX {
                                best_v = xd[idx];
                                best = idx;
                            }
                        }
                    }
                    out.push(best_v);
                    argmax.push(best);
                }
            }
        }
        let cache = (argmax, x.shape().to_vec());
        Ok((Tensor::new(&[c, oh, ow], out)?, Box::new(cache)))
    }

    fn backward(&self, cache: &Cache, grad_out: &Tensor, _grads: &mut [Tensor]) -> Result<Tensor> {
        let (argmax, shape): &(Vec<usize>, Vec<usize>) = cache_ref(cache, "maxpool2d")?;
        let mut dx = Tensor::zeros(shape);
        for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
            dx.data_mut()[idx] += g;
        }
        Ok(dx)
    }
}

/// `[C, H, W] -> [C, 1, W]`, averaging over rows.
pub struct AdaptiveAvgPoolHeight;

impl Layer for AdaptiveAvgPoolHeight {
    fn name(&self) -> &'static str {
        "adaptive_avg_pool_height"
    }

    fn forward(&self, x: &Tensor, _mode: Mode) -> Result<(Tensor, Cache)> {
        let [c, h, w] = x.dims::<3>("height pool input")?;
        let mut out = vec![0.0; c * w];
        for ch in 0..c {
            for y in 0..h {
                let row = &x.data()[(ch * h + y) * w..][..w];
                for (o, &v) in out[ch * w..][..w].iter_mut().zip(row) {
                    *o += v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= h as f64);
        Ok((Tensor::new(&[c, 1, w], out)?, Box::new(h)))
    }

    fn backward(&self, cache: &Cache, grad_out: &Tensor, _grads: &mut [Tensor]) -> Result<Tensor> {
        let h = *cache_ref::<usize>(cache, "adaptive_avg_pool_height")?;
        let [c, _, w] = grad_out.dims::<3>("height pool grad")?;
        let mut dx = vec![0.0; c * h * w];
        for ch in 0..c {
            let g = &grad_out.data()[ch * w..][..w];
            for y in 0..h {
                for (d, &gv) in dx[(ch * h + y) * w..][..w].iter_mut().zip(g) {
                    *d = gv / h as f64;
                }
            }
        }
        Tensor::new(&[c, h, w], dx)
    }
}

/// `[C, 1, W] -> [W, C]`: each column becomes one time step.
pub struct ColumnsToSequence;

fn transpose(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

impl Layer for ColumnsToSequence {
    fn name(&self) -> &'static str {
        "columns_to_sequence"
    }

    fn forward(&self, x: &Tensor, _mode: Mode) -> Result<(Tensor, Cache)> {
        let [c, h, w] = x.dims::<3>("sequence input")?;
        if h != 1 {
            return Err(Error::Shape(format!("sequence input needs height 1, got {h}")));
        }
        Ok((Tensor::new(&[w, c], transpose(x.data(), c, w))?, Box::new(())))
    }

    fn backward(&self, _cache: &Cache, grad_out: &Tensor, _grads: &mut [Tensor]) -> Result<Tensor> {
        let [w, c] = grad_out.dims::<2>("sequence grad")?;
        Tensor::new(&[c, 1, w], transpose(grad_out.data(), w, c))
    }
}

/// Inverted dropout: survivors are scaled by `1/(1-p)` in training; identity in eval.
pub struct Dropout {
    pub p: f64,
}

impl Layer for Dropout {
    fn name(&self) -> &'static str {
        "dropout"
    }

    fn forward(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, Cache)> {
        match mode {
            Mode::Train { seed } if self.p > 0.0 => {
                let mut rng = seed::rng(seed);
                let keep = 1.0 / (1.0 - self.p);
                let scale: Vec<f64> = (0..x.len())
                    .map(|_| if rng.gen::<f64>() < self.p { 0.0 } else { keep })
                    .collect();
                let out = x.data().iter().zip(&scale).map(|(a, b)| a * b).collect();
                Ok((Tensor::new(x.shape(), out)?, Box::new(Some(scale))))
            }
            _ => Ok((x.clone(), Box::new(None::<Vec<f64>>))),
        }
    }

    fn backward(&self, cache: &Cache, grad_out: &Tensor, _grads: &mut [Tensor]) -> Result<Tensor> {
        match cache_ref::<Option<Vec<f64>>>(cache, "dropout")? {
            Some(scale) => Tensor::new(
                grad_out.shape(),
                grad_out.data().iter().zip(scale).map(|(a, b)| a * b).collect(),
            ),
            None => Ok(grad_out.clone()),
        }
    }
}

/// Affine map applied to each row of a `[T, D]` input.
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: Param::init(&[outputs, inputs], inputs, rng),
            bias: Param::init(&[outputs], inputs, rng),
        }
    }

    fn dims(&self) -> (usize, usize) {
        let s = self.weight.value.shape();
        (s[0], s[1])
    }
}

impl Layer for Linear {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn forward(&self, x: &Tensor, _mode: Mode) -> Result<(Tensor, Cache)> {
        let [t, d] = x.dims::<2>("linear input")?;
        let (o, di) = self.dims();
        if d != di {
            return Err(Error::Shape(format!("linear: input width {d}, weight expects {di}")));
        }
        let mut out = Vec::with_capacity(t * o);
        for _ in 0..t {
            out.extend_from_slice(self.bias.value.data());
        }
        gemm(t, d, o, x.data(), (d as isize, 1), self.weight.value.data(), (1, d as isize), &mut out, 1.0);
        Ok((Tensor::new(&[t, o], out)?, Box::new(x.clone())))
    }

    fn backward(&self, cache: &Cache, grad_out: &Tensor, grads: &mut [Tensor]) -> Result<Tensor> {
        let x: &Tensor = cache_ref(cache, "linear")?;
        let [t, d] = x.dims::<2>("linear input")?;
        let (o, _) = self.dims();
        let go = grad_out.data();
        let (gw, gb) = grads.split_at_mut(1);
        // dW[o x d] += dOut^T[o x t] * x[t x d]
        gemm(o, t, d, go, (1, o as isize), x.data(), (d as isize, 1), gw[0].data_mut(), 1.0);
        for row in go.chunks(o) {
            for (b, &g) in gb[0].data_mut().iter_mut().zip(row) {
                *b += g;
            }
        }
        let mut dx = vec![0.0; t * d];
        gemm(t, o, d, go, (o as isize, 1), self.weight.value.data(), (d as isize, 1), &mut dx, 0.0);
        Tensor::new(&[t, d], dx)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Row-wise log-softmax over the last axis of a `[T, C]` input.
pub struct LogSoftmax;

impl Layer for LogSoftmax {
    fn name(&self) -> &'static str {
        "log_softmax"
    }

    fn forward(&self, x: &Tensor, _mode: Mode) -> Result<(Tensor, Cache)> {
        let [_, c] = x.dims::<2>("log_softmax input")?;
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let out = Tensor::new(x.shape(), out)?;
        Ok((out.clone(), Box::new(out)))
    }

    fn backward(&self, cache: &Cache, grad_out: &Tensor, _grads: &mut [Tensor]) -> Result<Tensor> {
        let out: &Tensor = cache_ref(cache, "log_softmax")?;
        let [_, c] = out.dims::<2>("log_softmax output")?;
        let mut dx = Vec::with_capacity(out.len());
        for (y, g) in out.data().chunks(c).zip(grad_out.data().chunks(c)) {
            let sum: f64 = g.iter().sum();
            dx.extend(y.iter().zip(g).map(|(yv, gv)| gv - yv.exp() * sum));
        }
        Tensor::new(out.shape(), dx)
    }
}

/// Repeats every cell of a `[C, H, W]` map into a `factor x factor` block.
pub struct NearestUpsample {
    pub factor: usize,
}

impl Layer for NearestUpsample {
    fn name(&self) -> &'static str {
        "nearest_upsample"
    }

    fn forward(&self, x: &Tensor, _mode: Mode) -> Result<(Tensor, Cache)> {
        let [c, h, w] = x.dims::<3>("upsample input")?;
        let f = self.factor;
        let (oh, ow) = (h * f, w * f);
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                let src = &x.data()[(ch * h + y / f) * w..][..w];
                for (x_out, o) in out[(ch * oh + y) * ow..][..ow].iter_mut().enumerate() {
                    *o = src[x_out / f];
                }
            }
        }
        Ok((Tensor::new(&[c, oh, ow], out)?, Box::new([c, h, w])))
    }

    fn backward(&self, cache: &Cache, grad_out: &Tensor, _grads: &mut [Tensor]) -> Result<Tensor> {
        let &[c, h, w] = cache_ref::<[usize; 3]>(cache, "nearest_upsample")?;
        let f = self.factor;
        let (oh, ow) = (h * f, w * f);
        let mut dx = vec![0.0; c * h * w];
        for ch in 0..c {
            for y in 0..oh {
                let g = &grad_out.data()[(ch * oh + y) * ow..][..ow];
                let dst = &mut dx[(ch * h + y / f) * w..][..w];
                for (x_out, &gv) in g.iter().enumerate() {
                    dst[x_out / f] += gv;
                }
            }
        }
        Tensor::new(&[c, h, w], dx)
    }
}

/// Layers applied in order. Dropout seeds are derived per layer index.
#[derive(Default)]
pub struct Sequential {
    pub layers: Vec<Box<dyn Layer>>,
}

impl Sequential {
    pub fn new(layers: Vec<Box<dyn Layer>>) -> Self {
        Self { layers }
    }

    pub fn push(&mut self, layer: impl Layer + 'static) {
        self.layers.push(Box::new(layer));
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, Vec<Cache>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let layer_mode = match mode {
                Mode::Train { seed } => Mode::Train {
                    seed: seed::derive(seed, &[i as u64]),
                },
                Mode::Eval => Mode::Eval,
            };
            let (out, cache) = layer.forward(&cur, layer_mode)?;
            caches.push(cache);
            cur = out;
        }
        Ok((cur, caches))
    }

    pub fn backward(&self, caches: &[Cache], grad_out: &Tensor, grads: &mut [Tensor]) -> Result<Tensor> {
        let counts: Vec<usize> = self.layers.iter().map(|l| l.params().len()).collect();
        let mut offset: usize = counts.iter().sum();
        if grads.len() != offset {
            return Err(Error::Shape(format!(
                "{} gradient buffers for {offset} parameters",
                grads.len()
            )));
        }
        let mut g = grad_out.clone();
        for ((layer, cache), &n) in self.layers.iter().zip(caches).zip(&counts).rev() {
            offset -= n;
            g = layer.backward(cache, &g, &mut grads[offset..offset + n])?;
        }
        Ok(g)
    }
}

impl Parameterized for Sequential {
    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}
