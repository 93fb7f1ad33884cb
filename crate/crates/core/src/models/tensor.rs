//! Batched `[N, C, H, W]` float tensors and the dense kernels behind the
//! layers.

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor { n, c, h, w, data: vec![0.0; n * c * h * w] }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), n * c * h * w, "tensor data length");
        Tensor { n, c, h, w, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let l = self.sample_len();
        &self.data[i * l..(i + 1) * l]
    }

    /// Copy of sample `i` as a batch of one.
    pub fn slice_sample(&self, i: usize) -> Tensor {
        Tensor::from_vec(1, self.c, self.h, self.w, self.sample(i).to_vec())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `c = alpha * a·b + beta * c` with explicit row/column strides for `a` and
/// `b` (so transposed operands need no copy). `c` is row-major `m x n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    c: &mut [f32],
    beta: f32,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k > 0 {
        assert!((m - 1) * rsa + (k - 1) * csa < a.len(), "gemm: a out of bounds");
        assert!((k - 1) * rsb + (n - 1) * csb < b.len(), "gemm: b out of bounds");
    }
    assert!(c.len() >= m * n, "gemm: c out of bounds");
    // SAFETY: the asserts above bound every index matrixmultiply touches.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Spatial geometry of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl ConvGeometry {
    pub fn out_size(&self, input: usize) -> usize {
        let span = self.dilation * (self.kernel - 1) + 1;
        (input + 2 * self.pad - span) / self.stride + 1
    }

    pub fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds one `[C, H, W]` sample into `[C*k*k, OH*OW]` columns.
pub fn im2col(x: &[f32], c: usize, h: usize, w: usize, g: ConvGeometry, col: &mut [f32]) {
    let (oh, ow) = (g.out_size(h), g.out_size(w));
    let k = g.kernel;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki * g.dilation) as isize - g.pad as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj * g.dilation) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into a `[C, H, W]` sample.
pub fn col2im(col: &[f32], c: usize, h: usize, w: usize, g: ConvGeometry, x: &mut [f32]) {
    let (oh, ow) = (g.out_size(h), g.out_size(w));
    let k = g.kernel;
    x.fill(0.0);
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src = &col[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki * g.dilation) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kj * g.dilation) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            line[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposed_views() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, (2, 1), &b, (2, 1), &mut c, 0.0);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        // a^T b
        gemm(2, 2, 2, &a, (1, 2), &b, (2, 1), &mut c, 0.0);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let (c, h, w) = (2, 5, 6);
        for g in [
            ConvGeometry { kernel: 3, stride: 1, pad: 1, dilation: 1 },
            ConvGeometry { kernel: 3, stride: 2, pad: 1, dilation: 1 },
            ConvGeometry { kernel: 3, stride: 1, pad: 2, dilation: 2 },
        ] {
            let x: Vec<f32> = (0..c * h * w).map(|i| ((i * 7 % 11) as f32) - 5.0).collect();
            let rows = c * 9;
            let cols = g.out_size(h) * g.out_size(w);
            let y: Vec<f32> = (0..rows * cols).map(|i| ((i * 5 % 13) as f32) - 6.0).collect();
            let mut col = vec![0.0; rows * cols];
            im2col(&x, c, h, w, g, &mut col);
            let lhs: f64 = col.iter().zip(&y).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
            let mut back = vec![0.0; c * h * w];
            col2im(&y, c, h, w, g, &mut back);
            let rhs: f64 = x.iter().zip(&back).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
            assert!((lhs - rhs).abs() < 1e-6, "{g:?}: {lhs} vs {rhs}");
        }
    }
}
