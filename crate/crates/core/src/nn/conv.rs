use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array4, ArrayView2, ArrayViewMut2};
use rand::Rng;
use rayon::prelude::*;

use super::{join, kaiming_normal, Module, Param};

/// 2-D convolution (square kernel) with stride, zero padding and dilation,
/// computed per sample as `W (Cout x Cin*k*k) . im2col(x)`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub weight: Param,
    pub bias: Option<Param>,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        rng: &mut R,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
        bias: bool,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            dilation,
            weight: kaiming_normal(rng, &[out_channels, fan_in], fan_in),
            bias: bias.then(|| Param::zeros(&[out_channels])),
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let span = self.dilation * (self.kernel - 1) + 1;
        let f = |x: usize| (x + 2 * self.padding).saturating_sub(span) / self.stride + 1;
        (f(h), f(w))
    }

    fn weight_view(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape(
            (self.out_channels, self.in_channels * self.kernel * self.kernel),
            &self.weight.value,
        )
        .expect("weight shape")
    }

    fn im2col(&self, x: &[f64], h: usize, w: usize, ho: usize, wo: usize) -> Array2<f64> {
        let k = self.kernel;
        let mut cols = Array2::zeros((self.in_channels * k * k, ho * wo));
        let out = cols.as_slice_mut().expect("contiguous");
        for c in 0..self.in_channels {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut out[row * ho * wo..(row + 1) * ho * wo];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ki * self.dilation) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kj * self.dilation) as isize
                                - self.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[oy * wo + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &Array2<f64>, dx: &mut [f64], h: usize, w: usize, ho: usize, wo: usize) {
        let k = self.kernel;
        let src = cols.as_slice().expect("contiguous");
        for c in 0..self.in_channels {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let s = &src[row * ho * wo..(row + 1) * ho * wo];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ki * self.dilation) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kj * self.dilation) as isize
                                - self.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                plane[iy as usize * w + ix as usize] += s[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    /// The input is the only thing the backward pass needs, so callers keep it.
    pub fn forward(&self, x: &Array4<f64>) -> Array4<f64> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "conv input channels");
        let (ho, wo) = self.output_size(h, w);
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("contiguous");
        let wv = self.weight_view();
        let per: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let cols = self.im2col(&xs[i * c * h * w..(i + 1) * c * h * w], h, w, ho, wo);
                let mut y = wv.dot(&cols);
                if let Some(b) = &self.bias {
                    for (mut row, bv) in y.outer_iter_mut().zip(&b.value) {
                        row += *bv;
                    }
                }
                y.into_raw_vec_and_offset().0
            })
            .collect();
        let flat: Vec<f64> = per.into_iter().flatten().collect();
        Array4::from_shape_vec((n, self.out_channels, ho, wo), flat).expect("output shape")
    }

    pub fn backward(&mut self, x: &Array4<f64>, dy: &Array4<f64>) -> Array4<f64> {
        let (n, c, h, w) = x.dim();
        let (_, co, ho, wo) = dy.dim();
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("contiguous");
        let dy = dy.as_standard_layout();
        let dys = dy.as_slice().expect("contiguous");
        let mut dx = vec![0.0; n * c * h * w];
        let kk = c * self.kernel * self.kernel;
        let mut dw = Array2::<f64>::zeros((co, kk));
        let wt = self.weight_view().t().to_owned();
        for i in 0..n {
            let cols = self.im2col(&xs[i * c * h * w..(i + 1) * c * h * w], h, w, ho, wo);
            let g = ArrayView2::from_shape((co, ho * wo), &dys[i * co * ho * wo..(i + 1) * co * ho * wo])
                .expect("grad shape");
            general_mat_mul(1.0, &g, &cols.t(), 1.0, &mut dw);
            if let Some(b) = &mut self.bias {
                for (o, row) in g.outer_iter().enumerate() {
                    b.grad[o] += row.sum();
                }
            }
            let dcols = wt.dot(&g);
            self.col2im(&dcols, &mut dx[i * c * h * w..(i + 1) * c * h * w], h, w, ho, wo);
        }
        let mut gw = ArrayViewMut2::from_shape((co, kk), &mut self.weight.grad).expect("grad shape");
        gw += &dw;
        Array4::from_shape_vec((n, c, h, w), dx).expect("input shape")
    }
}

impl Module for Conv2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}
