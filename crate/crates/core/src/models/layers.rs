//! Layers with explicit forward/backward passes. Each layer caches what its
//! backward pass needs when the forward is called with `keep = true`.

use super::params::{ParamId, ParamKind, ParamStore, Role};
use super::tensor::{col2im, gemm, im2col, ConvGeometry, Tensor};
use crate::exec::Exec;
use crate::rng::Rng;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub cin: usize,
    pub cout: usize,
    pub geom: ConvGeometry,
    input: Option<Tensor>,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        path: &str,
        role: Role,
        cin: usize,
        cout: usize,
        geom: ConvGeometry,
        bias: bool,
    ) -> Self {
        let k = geom.kernel;
        let weight = store.add_conv_weight(format!("{path}.weight"), role, [cout, cin, k, k], rng);
        let bias = bias.then(|| store.add(format!("{path}.bias"), vec![cout], role, ParamKind::Bias, vec![0.0; cout]));
        Conv2d { weight, bias, cin, cout, geom, input: None }
    }

    fn col_rows(&self) -> usize {
        self.cin * self.geom.kernel * self.geom.kernel
    }

    pub fn forward(&mut self, store: &ParamStore, x: &Tensor, keep: bool, exec: Exec) -> Tensor {
        assert_eq!(x.c, self.cin, "conv input channels");
        let g = self.geom;
        let (oh, ow) = (g.out_size(x.h), g.out_size(x.w));
        let ohw = oh * ow;
        let kk = self.col_rows();
        let mut y = Tensor::zeros(x.n, self.cout, oh, ow);
        let w = store.value(self.weight);
        let b = self.bias.map(|b| store.value(b));
        let cout = self.cout;
        exec.for_each_chunk(&mut y.data, cout * ohw, |i, yi| {
            let xi = x.sample(i);
            if g.is_pointwise() {
                gemm(cout, kk, ohw, w, (kk, 1), xi, (ohw, 1), yi, 0.0);
            } else {
                let mut col = vec![0.0; kk * ohw];
                im2col(xi, x.c, x.h, x.w, g, &mut col);
                gemm(cout, kk, ohw, w, (kk, 1), &col, (ohw, 1), yi, 0.0);
            }
            if let Some(b) = b {
                for (o, plane) in yi.chunks_mut(ohw).enumerate() {
                    plane.iter_mut().for_each(|v| *v += b[o]);
                }
            }
        });
        self.input = keep.then(|| x.clone());
        y
    }

    /// Accumulates weight/bias gradients; returns the input gradient when
    /// `need_dx`.
    pub fn backward(&mut self, store: &mut ParamStore, dy: &Tensor, need_dx: bool, exec: Exec) -> Option<Tensor> {
        let x = self.input.take().expect("conv backward without cached input");
        let g = self.geom;
        let ohw = dy.h * dy.w;
        let kk = self.col_rows();
        let cout = self.cout;
        let w = store.value(self.weight);
        let has_bias = self.bias.is_some();
        let parts = exec.map(x.n, |i| {
            let dyi = dy.sample(i);
            let xi = x.sample(i);
            let owned;
            let col: &[f32] = if g.is_pointwise() {
                xi
            } else {
                let mut c = vec![0.0; kk * ohw];
                im2col(xi, x.c, x.h, x.w, g, &mut c);
                owned = c;
                &owned
            };
            let mut dw = vec![0.0; cout * kk];
            gemm(cout, ohw, kk, dyi, (ohw, 1), col, (1, ohw), &mut dw, 0.0);
            let db: Vec<f32> = if has_bias {
                dyi.chunks(ohw).map(|p| p.iter().map(|&v| v as f64).sum::<f64>() as f32).collect()
            } else {
                Vec::new()
            };
            let dx = need_dx.then(|| {
                let mut dcol = vec![0.0; kk * ohw];
                gemm(kk, cout, ohw, w, (1, kk), dyi, (ohw, 1), &mut dcol, 0.0);
                if g.is_pointwise() {
                    dcol
                } else {
                    let mut dxi = vec![0.0; x.sample_len()];
                    col2im(&dcol, x.c, x.h, x.w, g, &mut dxi);
                    dxi
                }
            });
            (dw, db, dx)
        });
        let mut dx_all = need_dx.then(|| Tensor::zeros(x.n, x.c, x.h, x.w));
        let sl = x.sample_len();
        for (i, (dw, db, dx)) in parts.into_iter().enumerate() {
            store.add_grad(self.weight, &dw);
            if let Some(b) = self.bias {
                store.add_grad(b, &db);
            }
            if let (Some(all), Some(dx)) = (dx_all.as_mut(), dx) {
                all.data[i * sl..(i + 1) * sl].copy_from_slice(&dx);
            }
        }
        dx_all
    }

    pub fn clear(&mut self) {
        self.input = None;
    }
}

#[derive(Debug, Clone)]
enum BnCache {
    Train { xhat: Vec<f32>, inv_std: Vec<f64> },
    Eval { xhat: Vec<f32>, scale: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    cache: Option<BnCache>,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, path: &str, role: Role, channels: usize) -> Self {
        let c = channels;
        BatchNorm2d {
            gamma: store.add(format!("{path}.bn.weight"), vec![c], role, ParamKind::BnGamma, vec![1.0; c]),
            beta: store.add(format!("{path}.bn.bias"), vec![c], role, ParamKind::BnBeta, vec![0.0; c]),
            running_mean: store.add(format!("{path}.bn.running_mean"), vec![c], role, ParamKind::RunningMean, vec![0.0; c]),
            running_var: store.add(format!("{path}.bn.running_var"), vec![c], role, ParamKind::RunningVar, vec![1.0; c]),
            channels: c,
            cache: None,
        }
    }

    /// Batch statistics (and a running-statistics update) when `train`,
    /// running statistics otherwise.
    pub fn forward(&mut self, store: &mut ParamStore, mut x: Tensor, train: bool, keep: bool) -> Tensor {
        let (n, c, hw) = (x.n, x.c, x.plane());
        let gamma = store.value(self.gamma).to_vec();
        let beta = store.value(self.beta).to_vec();
        if train {
            let m = (n * hw) as f64;
            let mut mean = vec![0.0f64; c];
            let mut var = vec![0.0f64; c];
            for ch in 0..c {
                let mut s = 0.0;
                for i in 0..n {
                    s += x.data[(i * c + ch) * hw..(i * c + ch + 1) * hw].iter().map(|&v| v as f64).sum::<f64>();
                }
                mean[ch] = s / m;
                let mut q = 0.0;
                for i in 0..n {
                    q += x.data[(i * c + ch) * hw..(i * c + ch + 1) * hw]
                        .iter()
                        .map(|&v| (v as f64 - mean[ch]).powi(2))
                        .sum::<f64>();
                }
                var[ch] = q / m;
            }
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
            let mut xhat = if keep { vec![0.0f32; x.data.len()] } else { Vec::new() };
            for i in 0..n {
                for ch in 0..c {
                    let off = (i * c + ch) * hw;
                    for j in off..off + hw {
                        let h = (x.data[j] as f64 - mean[ch]) * inv_std[ch];
                        if keep {
                            xhat[j] = h as f32;
                        }
                        x.data[j] = (gamma[ch] as f64 * h + beta[ch] as f64) as f32;
                    }
                }
            }
            let unbiased = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
            {
                let rm = &mut store.get_mut(self.running_mean).value;
                for ch in 0..c {
                    rm[ch] = ((1.0 - BN_MOMENTUM) * rm[ch] as f64 + BN_MOMENTUM * mean[ch]) as f32;
                }
            }
            {
                let rv = &mut store.get_mut(self.running_var).value;
                for ch in 0..c {
                    rv[ch] = ((1.0 - BN_MOMENTUM) * rv[ch] as f64 + BN_MOMENTUM * var[ch] * unbiased) as f32;
                }
            }
            self.cache = keep.then_some(BnCache::Train { xhat, inv_std });
        } else {
            let rm = store.value(self.running_mean);
            let rv = store.value(self.running_var);
            let inv_std: Vec<f64> = (0..c).map(|ch| 1.0 / (rv[ch] as f64 + BN_EPS).sqrt()).collect();
            let mut xhat = if keep { vec![0.0f32; x.data.len()] } else { Vec::new() };
            for i in 0..n {
                for ch in 0..c {
                    let off = (i * c + ch) * hw;
                    for j in off..off + hw {
                        let h = (x.data[j] as f64 - rm[ch] as f64) * inv_std[ch];
                        if keep {
                            xhat[j] = h as f32;
                        }
                        x.data[j] = (gamma[ch] as f64 * h + beta[ch] as f64) as f32;
                    }
                }
            }
            let scale = (0..c).map(|ch| gamma[ch] as f64 * inv_std[ch]).collect();
            self.cache = keep.then_some(BnCache::Eval { xhat, scale });
        }
        x
    }

    pub fn backward(&mut self, store: &mut ParamStore, mut dy: Tensor) -> Tensor {
        let (n, c, hw) = (dy.n, dy.c, dy.plane());
        let cache = self.cache.take().expect("batch-norm backward without cache");
        match cache {
            BnCache::Train { xhat, inv_std } => {
                let gamma = store.value(self.gamma).to_vec();
                let m = (n * hw) as f64;
                let mut dgamma = vec![0.0f32; c];
                let mut dbeta = vec![0.0f32; c];
                for ch in 0..c {
                    let (mut sdy, mut sdyx) = (0.0f64, 0.0f64);
                    for i in 0..n {
                        let off = (i * c + ch) * hw;
                        for j in off..off + hw {
                            sdy += dy.data[j] as f64;
                            sdyx += dy.data[j] as f64 * xhat[j] as f64;
                        }
                    }
                    dgamma[ch] = sdyx as f32;
                    dbeta[ch] = sdy as f32;
                    let k = gamma[ch] as f64 * inv_std[ch] / m;
                    for i in 0..n {
                        let off = (i * c + ch) * hw;
                        for j in off..off + hw {
                            dy.data[j] = (k * (m * dy.data[j] as f64 - sdy - xhat[j] as f64 * sdyx)) as f32;
                        }
                    }
                }
                store.add_grad(self.gamma, &dgamma);
                store.add_grad(self.beta, &dbeta);
            }
            BnCache::Eval { xhat, scale } => {
                let mut dgamma = vec![0.0f64; c];
                let mut dbeta = vec![0.0f64; c];
                for i in 0..n {
                    for ch in 0..c {
                        let off = (i * c + ch) * hw;
                        for j in off..off + hw {
                            dgamma[ch] += dy.data[j] as f64 * xhat[j] as f64;
                            dbeta[ch] += dy.data[j] as f64;
                            dy.data[j] = (dy.data[j] as f64 * scale[ch]) as f32;
                        }
                    }
                }
                store.add_grad(self.gamma, &dgamma.iter().map(|&v| v as f32).collect::<Vec<_>>());
                store.add_grad(self.beta, &dbeta.iter().map(|&v| v as f32).collect::<Vec<_>>());
            }
        }
        dy
    }

    pub fn clear(&mut self) {
        self.cache = None;
    }
}

pub fn relu_inplace(x: &mut Tensor) {
    x.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Masks `dy` by `out > 0`, where `out` is the post-ReLU output.
pub fn relu_backward(dy: &mut Tensor, out: &Tensor) {
    for (d, &o) in dy.data.iter_mut().zip(&out.data) {
        if o <= 0.0 {
            *d = 0.0;
        }
    }
}

pub fn add_inplace(a: &mut Tensor, b: &Tensor) {
    assert_eq!(a.shape(), b.shape());
    a.data.iter_mut().zip(&b.data).for_each(|(x, y)| *x += y);
}

pub fn concat_channels(parts: &[&Tensor]) -> Tensor {
    let (n, h, w) = (parts[0].n, parts[0].h, parts[0].w);
    let c: usize = parts.iter().map(|p| p.c).sum();
    let mut out = Tensor::zeros(n, c, h, w);
    let hw = h * w;
    for i in 0..n {
        let mut off = i * c * hw;
        for p in parts {
            assert_eq!((p.n, p.h, p.w), (n, h, w), "concat shape mismatch");
            let s = p.sample(i);
            out.data[off..off + s.len()].copy_from_slice(s);
            off += s.len();
        }
    }
    out
}

pub fn split_channels(dy: &Tensor, channels: &[usize]) -> Vec<Tensor> {
    let hw = dy.plane();
    let mut outs: Vec<Tensor> = channels.iter().map(|&c| Tensor::zeros(dy.n, c, dy.h, dy.w)).collect();
    for i in 0..dy.n {
        let src = dy.sample(i);
        let mut off = 0;
        for (o, &c) in outs.iter_mut().zip(channels) {
            let l = c * hw;
            o.data[i * l..(i + 1) * l].copy_from_slice(&src[off..off + l]);
            off += l;
        }
    }
    outs
}

/// Half-pixel-centre bilinear sampling taps for resizing `input -> output`.
fn bilinear_taps(input: usize, output: usize) -> Vec<(usize, usize, f32)> {
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * input as f64 / output as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, (src - i0 as f64) as f32)
        })
        .collect()
}

pub fn resize_bilinear(x: &Tensor, oh: usize, ow: usize) -> Tensor {
    if (oh, ow) == (x.h, x.w) {
        return x.clone();
    }
    let ty = bilinear_taps(x.h, oh);
    let tx = bilinear_taps(x.w, ow);
    let mut out = Tensor::zeros(x.n, x.c, oh, ow);
    for p in 0..x.n * x.c {
        let src = &x.data[p * x.plane()..(p + 1) * x.plane()];
        let dst = &mut out.data[p * oh * ow..(p + 1) * oh * ow];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let top = src[y0 * x.w + x0] * (1.0 - lx) + src[y0 * x.w + x1] * lx;
                let bot = src[y1 * x.w + x0] * (1.0 - lx) + src[y1 * x.w + x1] * lx;
                dst[oy * ow + ox] = top * (1.0 - ly) + bot * ly;
            }
        }
    }
    out
}

pub fn resize_bilinear_backward(dy: &Tensor, h: usize, w: usize) -> Tensor {
    if (dy.h, dy.w) == (h, w) {
        return dy.clone();
    }
    let ty = bilinear_taps(h, dy.h);
    let tx = bilinear_taps(w, dy.w);
    let mut dx = Tensor::zeros(dy.n, dy.c, h, w);
    for p in 0..dy.n * dy.c {
        let src = &dy.data[p * dy.plane()..(p + 1) * dy.plane()];
        let dst = &mut dx.data[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let g = src[oy * dy.w + ox];
                dst[y0 * w + x0] += g * (1.0 - ly) * (1.0 - lx);
                dst[y0 * w + x1] += g * (1.0 - ly) * lx;
                dst[y1 * w + x0] += g * ly * (1.0 - lx);
                dst[y1 * w + x1] += g * ly * lx;
            }
        }
    }
    dx
}

fn pool_bins(input: usize, grid: usize) -> Vec<(usize, usize)> {
    (0..grid)
        .map(|i| ((i * input) / grid, ((i + 1) * input).div_ceil(grid)))
        .collect()
}

pub fn adaptive_avg_pool(x: &Tensor, grid: usize) -> Tensor {
    let by = pool_bins(x.h, grid);
    let bx = pool_bins(x.w, grid);
    let mut out = Tensor::zeros(x.n, x.c, grid, grid);
    for p in 0..x.n * x.c {
        let src = &x.data[p * x.plane()..(p + 1) * x.plane()];
        for (gy, &(y0, y1)) in by.iter().enumerate() {
            for (gx, &(x0, x1)) in bx.iter().enumerate() {
                let mut s = 0.0f64;
                for y in y0..y1 {
                    for xx in x0..x1 {
                        s += src[y * x.w + xx] as f64;
                    }
                }
                out.data[p * grid * grid + gy * grid + gx] = (s / ((y1 - y0) * (x1 - x0)) as f64) as f32;
            }
        }
    }
    out
}

pub fn adaptive_avg_pool_backward(dy: &Tensor, h: usize, w: usize) -> Tensor {
    let grid = dy.h;
    let by = pool_bins(h, grid);
    let bx = pool_bins(w, grid);
    let mut dx = Tensor::zeros(dy.n, dy.c, h, w);
    for p in 0..dy.n * dy.c {
        let dst = &mut dx.data[p * h * w..(p + 1) * h * w];
        for (gy, &(y0, y1)) in by.iter().enumerate() {
            for (gx, &(x0, x1)) in bx.iter().enumerate() {
                let g = dy.data[p * grid * grid + gy * grid + gx] / ((y1 - y0) * (x1 - x0)) as f32;
                for y in y0..y1 {
                    for xx in x0..x1 {
                        dst[y * w + xx] += g;
                    }
                }
            }
        }
    }
    dx
}
