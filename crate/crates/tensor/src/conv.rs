//! Convolution and resampling on NCHW tensors.

use ndarray::{Array2, ArrayView2, Axis, IxDyn};

use crate::var::{Array, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn new(channels: usize, height: usize, width: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        assert!(stride >= 1, "stride must be positive");
        assert!(
            height + 2 * padding >= kernel && width + 2 * padding >= kernel,
            "kernel {kernel} larger than padded input {height}x{width}"
        );
        Self {
            channels,
            height,
            width,
            kernel,
            stride,
            padding,
            out_h: (height + 2 * padding - kernel) / stride + 1,
            out_w: (width + 2 * padding - kernel) / stride + 1,
        }
    }

    /// Input pixel feeding output `(oy, ox)` through kernel tap `(ky, kx)`.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let iy = (oy * self.stride + ky).checked_sub(self.padding)?;
        let ix = (ox * self.stride + kx).checked_sub(self.padding)?;
        (iy < self.height && ix < self.width).then_some((iy, ix))
    }
}

/// Unfolds one `C×H×W` image into a `(C·k·k) × (Ho·Wo)` patch matrix.
fn im2col(image: &[f64], geo: &Geometry) -> Array2<f64> {
    let k = geo.kernel;
    let cols = geo.out_h * geo.out_w;
    let mut out = Array2::zeros((geo.channels * k * k, cols));
    let buf = out.as_slice_mut().unwrap();
    for c in 0..geo.channels {
        let plane = &image[c * geo.height * geo.width..(c + 1) * geo.height * geo.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut buf[row * cols..(row + 1) * cols];
                for oy in 0..geo.out_h {
                    for ox in 0..geo.out_w {
                        if let Some((iy, ix)) = geo.source(oy, ox, ky, kx) {
                            dst[oy * geo.out_w + ox] = plane[iy * geo.width + ix];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the image.
fn col2im(cols: ArrayView2<f64>, geo: &Geometry, image: &mut [f64]) {
    let k = geo.kernel;
    let n_cols = geo.out_h * geo.out_w;
    let cols = cols.as_standard_layout();
    let buf = cols.as_slice().unwrap();
    for c in 0..geo.channels {
        let plane = &mut image[c * geo.height * geo.width..(c + 1) * geo.height * geo.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &buf[row * n_cols..(row + 1) * n_cols];
                for oy in 0..geo.out_h {
                    for ox in 0..geo.out_w {
                        if let Some((iy, ix)) = geo.source(oy, ox, ky, kx) {
                            plane[iy * geo.width + ix] += src[oy * geo.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

impl Var {
    /// 2D cross-correlation. `weight` is `[O, C, k, k]`, `bias` is `[O]`.
    pub fn conv2d(&self, weight: &Var, bias: Option<&Var>, stride: usize, padding: usize) -> Var {
        let xs = self.shape().to_vec();
        let ws = weight.shape().to_vec();
        assert_eq!(xs.len(), 4, "conv2d input must be NCHW, got {xs:?}");
        assert_eq!(ws.len(), 4, "conv2d weight must be OCkk, got {ws:?}");
        assert_eq!(ws[2], ws[3], "square kernels only");
        assert_eq!(
            xs[1], ws[1],
            "conv2d: input has {} channels, weight expects {}",
            xs[1], ws[1]
        );
        let (n, out_c) = (xs[0], ws[0]);
        let geo = Geometry::new(xs[1], xs[2], xs[3], ws[2], stride, padding);
        let patch = geo.channels * geo.kernel * geo.kernel;
        let positions = geo.out_h * geo.out_w;

        let x = self.value().as_standard_layout().into_owned();
        let x_buf = x.as_slice().unwrap();
        let w2: Array2<f64> = weight
            .value()
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((out_c, patch))
            .unwrap();

        let image_len = geo.channels * geo.height * geo.width;
        let mut out = Array::zeros(IxDyn(&[n, out_c, geo.out_h, geo.out_w]));
        let mut all_cols = Vec::with_capacity(n);
        for ni in 0..n {
            let cols = im2col(&x_buf[ni * image_len..(ni + 1) * image_len], &geo);
            let mut y = w2.dot(&cols);
            if let Some(b) = bias {
                for (mut row, &bv) in y.axis_iter_mut(Axis(0)).zip(b.value().iter()) {
                    row += bv;
                }
            }
            out.index_axis_mut(Axis(0), ni)
                .assign(&y.into_shape_with_order((out_c, geo.out_h, geo.out_w)).unwrap());
            all_cols.push(cols);
        }

        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        let w_shape = weight.value().raw_dim();
        Var::from_op(
            out,
            parents,
            Box::new(move |g, needs| {
                let g = g.as_standard_layout();
                let mut gx = needs[0].then(|| vec![0.0; n * image_len]);
                let mut gw = needs[1].then(|| Array2::<f64>::zeros((out_c, patch)));
                for ni in 0..n {
                    let gy = g
                        .index_axis(Axis(0), ni)
                        .into_shape_with_order((out_c, positions))
                        .unwrap();
                    if let Some(gw) = gw.as_mut() {
                        ndarray::linalg::general_mat_mul(1.0, &gy, &all_cols[ni].t(), 1.0, gw);
                    }
                    if let Some(gx) = gx.as_mut() {
                        let gcols = w2.t().dot(&gy);
                        col2im(gcols.view(), &geo, &mut gx[ni * image_len..(ni + 1) * image_len]);
                    }
                }
                let mut grads = vec![
                    gx.map(|v| Array::from_shape_vec(IxDyn(&xs), v).unwrap()),
                    gw.map(|m| m.into_shape_with_order(w_shape.clone()).unwrap()),
                ];
                if needs.len() > 2 {
                    grads.push(needs[2].then(|| {
                        let mut gb = Array::zeros(IxDyn(&[out_c]));
                        for (oc, lane) in g.axis_iter(Axis(1)).enumerate() {
                            gb[[oc]] = lane.sum();
                        }
                        gb
                    }));
                }
                grads
            }),
        )
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample_nearest(&self, factor: usize) -> Var {
        let s = self.shape().to_vec();
        assert_eq!(s.len(), 4, "upsample expects NCHW");
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let x = self.value();
        let out = Array::from_shape_fn(IxDyn(&[n, c, h * factor, w * factor]), |ix| {
            x[[ix[0], ix[1], ix[2] / factor, ix[3] / factor]]
        });
        Var::from_op(
            out,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = Array::zeros(IxDyn(&[n, c, h, w]));
                for ((ni, ci, y, x), &v) in g
                    .view()
                    .into_dimensionality::<ndarray::Ix4>()
                    .unwrap()
                    .indexed_iter()
                {
                    gx[[ni, ci, y / factor, x / factor]] += v;
                }
                vec![Some(gx)]
            }),
        )
    }
}
