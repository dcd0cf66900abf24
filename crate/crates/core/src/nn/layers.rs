use super::tensor::{gemm, gemm_nt, gemm_tn, Tensor};
use crate::error::{Error, Result};

/// Fully connected layer, `y = s·(x Wᵀ + b)` with `W` stored `out × in`.
///
/// `full_in`/`full_out` are the dimensions of the same layer in the ×1
/// network; `out_scale` is 1 unless layer-output rescaling is enabled.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
    pub full_in: usize,
    pub full_out: usize,
    pub out_scale: f64,
}

impl Dense {
    pub fn new(in_features: usize, out_features: usize, full_in: usize, full_out: usize) -> Self {
        Dense {
            weight: Tensor::zeros(&[out_features, in_features]),
            bias: Tensor::zeros(&[out_features]),
            full_in,
            full_out,
            out_scale: 1.0,
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, i, o) = (x.batch(), self.in_features(), self.out_features());
        if x.shape().len() != 2 || x.shape()[1] != i {
            return Err(Error::shape("dense input", &[n, i], x.shape()));
        }
        let mut y = vec![0.0; n * o];
        gemm_nt(x.data(), self.weight.data(), &mut y, n, i, o);
        let b = self.bias.data();
        for row in y.chunks_mut(o) {
            for (v, &bb) in row.iter_mut().zip(b) {
                *v = self.out_scale * (*v + bb);
            }
        }
        Tensor::from_vec(&[n, o], y)
    }

    pub fn backward(&self, x: &Tensor, dy: &[f64], dw: &mut [f64], db: &mut [f64]) -> Vec<f64> {
        let (n, i, o) = (x.batch(), self.in_features(), self.out_features());
        let scaled: Vec<f64>;
        let dy = if self.out_scale != 1.0 {
            scaled = dy.iter().map(|v| v * self.out_scale).collect();
            &scaled[..]
        } else {
            dy
        };
        for row in dy.chunks(o) {
            for (d, &v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
        gemm_tn(dy, x.data(), dw, o, n, i);
        let mut dx = vec![0.0; n * i];
        gemm(dy, self.weight.data(), &mut dx, n, o, i);
        dx
    }
}

/// 2-D convolution over `(N, C, H, W)` input with square kernels.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    /// `out × in × k × k`
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
    pub full_in: usize,
    pub full_out: usize,
    pub out_scale: f64,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        full_in: usize,
        full_out: usize,
    ) -> Self {
        Conv2d {
            weight: Tensor::zeros(&[out_ch, in_ch, kernel, kernel]),
            bias: Tensor::zeros(&[out_ch]),
            stride,
            padding,
            full_in,
            full_out,
            out_scale: 1.0,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel();
        (
            (h + 2 * self.padding - k) / self.stride + 1,
            (w + 2 * self.padding - k) / self.stride + 1,
        )
    }

    fn im2col(&self, x: &[f64], c: usize, h: usize, w: usize, cols: &mut [f64]) {
        let k = self.kernel();
        let (ho, wo) = self.output_hw(h, w);
        let (s, p) = (self.stride as isize, self.padding as isize);
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                    for oy in 0..ho {
                        let iy = oy as isize * s - p + ky as isize;
                        for ox in 0..wo {
                            let ix = ox as isize * s - p + kx as isize;
                            dst[oy * wo + ox] = if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                x[(ci * h + iy as usize) * w + ix as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], c: usize, h: usize, w: usize, dx: &mut [f64]) {
        let k = self.kernel();
        let (ho, wo) = self.output_hw(h, w);
        let (s, p) = (self.stride as isize, self.padding as isize);
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                    for oy in 0..ho {
                        let iy = oy as isize * s - p + ky as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = ox as isize * s - p + kx as isize;
                            if ix >= 0 && (ix as usize) < w {
                                dx[(ci * h + iy as usize) * w + ix as usize] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Returns the output and the unfolded input patches kept for backward.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.in_channels() {
            return Err(Error::shape("conv2d input channels", &[self.in_channels()], &s[1.min(s.len())..]));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let k = self.kernel();
        if h + 2 * self.padding < k || w + 2 * self.padding < k {
            return Err(Error::shape("conv2d spatial size", &[k, k], &[h, w]));
        }
        let (ho, wo) = self.output_hw(h, w);
        let o = self.out_channels();
        let ck = c * k * k;
        let mut cols = vec![0.0; n * ck * ho * wo];
        let mut y = vec![0.0; n * o * ho * wo];
        let b = self.bias.data();
        for ni in 0..n {
            let col = &mut cols[ni * ck * ho * wo..(ni + 1) * ck * ho * wo];
            self.im2col(&x.data()[ni * c * h * w..(ni + 1) * c * h * w], c, h, w, col);
            let out = &mut y[ni * o * ho * wo..(ni + 1) * o * ho * wo];
            gemm(self.weight.data(), col, out, o, ck, ho * wo);
            for (oc, plane) in out.chunks_mut(ho * wo).enumerate() {
                for v in plane {
                    *v = self.out_scale * (*v + b[oc]);
                }
            }
        }
        Ok((Tensor::from_vec(&[n, o, ho, wo], y)?, cols))
    }

    pub fn backward(
        &self,
        cols: &[f64],
        in_shape: &[usize],
        dy: &[f64],
        dw: &mut [f64],
        db: &mut [f64],
    ) -> Vec<f64> {
        let (n, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
        let k = self.kernel();
        let (ho, wo) = self.output_hw(h, w);
        let o = self.out_channels();
        let ck = c * k * k;
        let mut dx = vec![0.0; n * c * h * w];
        let mut dcol = vec![0.0; ck * ho * wo];
        for ni in 0..n {
            let g: Vec<f64> = dy[ni * o * ho * wo..(ni + 1) * o * ho * wo]
                .iter()
                .map(|v| v * self.out_scale)
                .collect();
            for (oc, plane) in g.chunks(ho * wo).enumerate() {
                db[oc] += plane.iter().sum::<f64>();
            }
            let col = &cols[ni * ck * ho * wo..(ni + 1) * ck * ho * wo];
            gemm_nt(&g, col, dw, o, ho * wo, ck);
            dcol.iter_mut().for_each(|v| *v = 0.0);
            gemm_tn(self.weight.data(), &g, &mut dcol, ck, o, ho * wo);
            self.col2im(&dcol, c, h, w, &mut dx[ni * c * h * w..(ni + 1) * c * h * w]);
        }
        dx
    }
}

/// Max pooling without padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
}

impl MaxPool2d {
    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        ((h - self.kernel) / self.stride + 1, (w - self.kernel) / self.stride + 1)
    }

    /// Returns the pooled output and, per output element, the flat index of
    /// the winning input element.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
        let s = x.shape();
        if s.len() != 4 || s[2] < self.kernel || s[3] < self.kernel {
            return Err(Error::shape("max pool input", &[0, 0, self.kernel, self.kernel], s));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (ho, wo) = self.output_hw(h, w);
        let xd = x.data();
        let mut y = Vec::with_capacity(n * c * ho * wo);
        let mut arg = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + oy * self.stride * w + ox * self.stride;
                    for ky in 0..self.kernel {
                        for kx in 0..self.kernel {
                            let i = base + (oy * self.stride + ky) * w + ox * self.stride + kx;
                            if xd[i] > xd[best] {
                                best = i;
                            }
                        }
                    }
                    y.push(xd[best]);
                    arg.push(best);
                }
            }
        }
        Ok((Tensor::from_vec(&[n, c, ho, wo], y)?, arg))
    }

    pub fn backward(argmax: &[usize], in_len: usize, dy: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; in_len];
        for (&i, &g) in argmax.iter().zip(dy) {
            dx[i] += g;
        }
        dx
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn relu_backward(x: &Tensor, dy: &[f64]) -> Vec<f64> {
    x.data()
        .iter()
        .zip(dy)
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_matches_direct_definition() {
        let mut conv = Conv2d::new(2, 3, 3, 2, 1, 2, 3);
        for (i, v) in conv.weight.data_mut().iter_mut().enumerate() {
            *v = ((i * 7 % 11) as f64 - 5.0) / 10.0;
        }
        conv.bias = Tensor::from_vec(&[3], vec![0.1, -0.2, 0.3]).unwrap();
        let x = Tensor::from_vec(&[1, 2, 5, 5], (0..50).map(|i| (i as f64 * 0.3).sin()).collect()).unwrap();
        let (y, _) = conv.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3, 3]);
        let w = conv.weight.data();
        for o in 0..3 {
            for oy in 0..3 {
                for ox in 0..3 {
                    let mut s = conv.bias.data()[o];
                    for c in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * 2 + ky) as isize - 1;
                                let ix = (ox * 2 + kx) as isize - 1;
                                if (0..5).contains(&iy) && (0..5).contains(&ix) {
                                    s += w[((o * 2 + c) * 3 + ky) * 3 + kx]
                                        * x.data()[(c * 5 + iy as usize) * 5 + ix as usize];
                                }
                            }
                        }
                    }
                    assert!((y.data()[(o * 3 + oy) * 3 + ox] - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn max_pool_routes_gradient_to_argmax() {
        let pool = MaxPool2d { kernel: 2, stride: 2 };
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![0.1, 0.9, 0.3, 0.2]).unwrap();
        let (y, arg) = pool.forward(&x).unwrap();
        assert_eq!(y.data(), &[0.9]);
        assert_eq!(MaxPool2d::backward(&arg, 4, &[2.0]), vec![0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn dense_rejects_wrong_width() {
        let d = Dense::new(3, 2, 3, 2);
        assert!(d.forward(&Tensor::zeros(&[1, 4])).is_err());
    }
}
