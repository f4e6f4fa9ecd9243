//! Elementwise, broadcast, reduction and shape operations.

use ndarray::{concatenate, Axis, IxDyn, Slice, Zip};

use crate::var::{Array, Var};

fn assert_same_shape(a: &Var, b: &Var, op: &str) {
    assert_eq!(
        a.shape(),
        b.shape(),
        "{op}: shape mismatch {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
}

/// Shape `[1, C, 1, ...]` matching `x`'s rank, for per-channel broadcasting.
fn channel_view_shape(x: &Var, c: usize) -> Vec<usize> {
    assert!(x.shape().len() >= 2, "channel op needs rank >= 2");
    assert_eq!(x.shape()[1], c, "channel count mismatch");
    let mut shape = vec![1; x.shape().len()];
    shape[1] = c;
    shape
}

/// Sums every axis except axis 1.
fn reduce_to_channels(g: &Array) -> Array {
    let c = g.shape()[1];
    let mut out = Array::zeros(IxDyn(&[c]));
    for (ci, lane) in g.axis_iter(Axis(1)).enumerate() {
        out[[ci]] = lane.sum();
    }
    out
}

impl Var {
    fn unary(&self, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64 + 'static) -> Var {
        let x = self.value().clone();
        let y = x.mapv(&f);
        let y_saved = y.clone();
        Var::from_op(
            y,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = g.clone();
                Zip::from(&mut gx)
                    .and(&x)
                    .and(&y_saved)
                    .for_each(|gv, &xv, &yv| *gv *= df(xv, yv));
                vec![Some(gx)]
            }),
        )
    }

    pub fn add(&self, other: &Var) -> Var {
        assert_same_shape(self, other, "add");
        Var::from_op(
            self.value() + other.value(),
            vec![self.clone(), other.clone()],
            Box::new(|g, _| vec![Some(g.clone()), Some(g.clone())]),
        )
    }

    pub fn sub(&self, other: &Var) -> Var {
        assert_same_shape(self, other, "sub");
        Var::from_op(
            self.value() - other.value(),
            vec![self.clone(), other.clone()],
            Box::new(|g, _| vec![Some(g.clone()), Some(-g)]),
        )
    }

    pub fn mul(&self, other: &Var) -> Var {
        assert_same_shape(self, other, "mul");
        let a = self.value().clone();
        let b = other.value().clone();
        Var::from_op(
            &a * &b,
            vec![self.clone(), other.clone()],
            Box::new(move |g, needs| {
                vec![
                    needs[0].then(|| g * &b),
                    needs[1].then(|| g * &a),
                ]
            }),
        )
    }

    pub fn neg(&self) -> Var {
        self.scale(-1.0)
    }

    pub fn scale(&self, c: f64) -> Var {
        Var::from_op(
            self.value() * c,
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(g * c)]),
        )
    }

    pub fn add_scalar(&self, c: f64) -> Var {
        Var::from_op(
            self.value() + c,
            vec![self.clone()],
            Box::new(|g, _| vec![Some(g.clone())]),
        )
    }

    /// Multiplies every element by a single-element tensor `gate`.
    pub fn gate(&self, gate: &Var) -> Var {
        assert_eq!(gate.value().len(), 1, "gate must hold one element");
        let k = gate.item();
        let x = self.value().clone();
        let gate_shape = gate.value().raw_dim();
        Var::from_op(
            &x * k,
            vec![self.clone(), gate.clone()],
            Box::new(move |g, needs| {
                vec![
                    needs[0].then(|| g * k),
                    needs[1].then(|| Array::from_elem(gate_shape.clone(), (g * &x).sum())),
                ]
            }),
        )
    }

    /// `x + b` with `b` of shape `[C]` broadcast over axis 1.
    pub fn add_channel(&self, bias: &Var) -> Var {
        let c = bias.value().len();
        let view = channel_view_shape(self, c);
        let b = bias.value().clone().into_shape_with_order(IxDyn(&view)).unwrap();
        Var::from_op(
            self.value() + &b,
            vec![self.clone(), bias.clone()],
            Box::new(|g, needs| vec![needs[0].then(|| g.clone()), needs[1].then(|| reduce_to_channels(g))]),
        )
    }

    /// `x * w` with `w` of shape `[C]` broadcast over axis 1.
    pub fn mul_channel(&self, weight: &Var) -> Var {
        let c = weight.value().len();
        let view = channel_view_shape(self, c);
        let w = weight.value().clone().into_shape_with_order(IxDyn(&view)).unwrap();
        let x = self.value().clone();
        Var::from_op(
            &x * &w,
            vec![self.clone(), weight.clone()],
            Box::new(move |g, needs| {
                vec![
                    needs[0].then(|| g * &w),
                    needs[1].then(|| reduce_to_channels(&(g * &x))),
                ]
            }),
        )
    }

    pub fn relu(&self) -> Var {
        self.unary(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(&self, slope: f64) -> Var {
        self.unary(
            move |x| if x > 0.0 { x } else { slope * x },
            move |x, _| if x > 0.0 { 1.0 } else { slope },
        )
    }

    pub fn tanh(&self) -> Var {
        self.unary(f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&self) -> Var {
        self.unary(sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn exp(&self) -> Var {
        self.unary(f64::exp, |_, y| y)
    }

    pub fn ln(&self) -> Var {
        self.unary(f64::ln, |x, _| 1.0 / x)
    }

    pub fn abs(&self) -> Var {
        self.unary(f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn square(&self) -> Var {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var {
        self.unary(
            move |x| x.clamp(lo, hi),
            move |x, _| if (lo..=hi).contains(&x) { 1.0 } else { 0.0 },
        )
    }

    pub fn sum(&self) -> Var {
        let shape = self.value().raw_dim();
        Var::from_op(
            Array::from_elem(IxDyn(&[]), self.value().sum()),
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(Array::from_elem(shape.clone(), g.sum()))]),
        )
    }

    pub fn mean(&self) -> Var {
        let n = self.value().len().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Mean over the spatial axes of an NCHW tensor, giving `[N, C]`.
    pub fn spatial_mean(&self) -> Var {
        let shape = self.shape().to_vec();
        assert_eq!(shape.len(), 4, "spatial_mean expects NCHW");
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let area = (h * w) as f64;
        let value = self
            .value()
            .sum_axis(Axis(3))
            .sum_axis(Axis(2))
            .mapv(|v| v / area);
        Var::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = Array::zeros(IxDyn(&[n, c, h, w]));
                for ni in 0..n {
                    for ci in 0..c {
                        let v = g[[ni, ci]] / area;
                        gx.slice_each_axis_mut(|ax| match ax.axis.index() {
                            0 => Slice::from(ni..ni + 1),
                            1 => Slice::from(ci..ci + 1),
                            _ => Slice::from(..),
                        })
                        .fill(v);
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Var {
        let old = self.value().raw_dim();
        let value = self
            .value()
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(shape))
            .unwrap_or_else(|_| panic!("reshape {:?} -> {:?}", self.shape(), shape));
        Var::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, _| {
                vec![Some(
                    g.as_standard_layout()
                        .into_owned()
                        .into_shape_with_order(old.clone())
                        .unwrap(),
                )]
            }),
        )
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let views: Vec<_> = parts.iter().map(|p| p.value().view()).collect();
        let value = concatenate(Axis(axis), &views).expect("concat: incompatible shapes");
        let sizes: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        Var::from_op(
            value,
            parts.to_vec(),
            Box::new(move |g, needs| {
                let mut start = 0;
                sizes
                    .iter()
                    .zip(needs)
                    .map(|(&len, &need)| {
                        let piece = need.then(|| {
                            g.slice_axis(Axis(axis), Slice::from(start..start + len))
                                .to_owned()
                        });
                        start += len;
                        piece
                    })
                    .collect()
            }),
        )
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Var {
        let full = self.value().raw_dim();
        let value = self
            .value()
            .slice_axis(Axis(axis), Slice::from(start..start + len))
            .to_owned();
        Var::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = Array::zeros(full.clone());
                gx.slice_axis_mut(Axis(axis), Slice::from(start..start + len))
                    .assign(g);
                vec![Some(gx)]
            }),
        )
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
