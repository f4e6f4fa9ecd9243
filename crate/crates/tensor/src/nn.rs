//! Parameterized layers.

use ndarray::IxDyn;

use crate::norm::StatAxes;
use crate::params::{Binding, Init, ParamSpec};
use crate::var::{Array, Var};

/// Standard deviation of the zero-mean Gaussian used for convolution weights.
pub const WEIGHT_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub bias: bool,
}

impl Conv2d {
    /// `kernel`×`kernel` convolution with "same" padding for odd kernels.
    pub fn new(name: impl Into<String>, in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            name: name.into(),
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding: kernel / 2,
            bias: true,
        }
    }

    /// 1×1 projection.
    pub fn pointwise(name: impl Into<String>, in_channels: usize, out_channels: usize) -> Self {
        Self::new(name, in_channels, out_channels, 1)
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut specs = vec![ParamSpec::param(
            self.weight_name(),
            &[self.out_channels, self.in_channels, self.kernel, self.kernel],
            Init::Normal { std: WEIGHT_INIT_STD },
        )];
        if self.bias {
            specs.push(ParamSpec::param(self.bias_name(), &[self.out_channels], Init::Constant(0.0)));
        }
        specs
    }

    pub fn forward(&self, b: &Binding, x: &Var) -> Var {
        let w = b.param(&self.weight_name());
        let bias = self.bias.then(|| b.param(&self.bias_name()));
        x.conv2d(&w, bias.as_ref(), self.stride, self.padding)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    Batch,
    Instance,
}

/// Affine batch or instance normalization.
///
/// Batch normalization keeps running statistics (momentum 0.1, unbiased
/// variance) and uses them in inference mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Norm {
    pub name: String,
    pub channels: usize,
    pub kind: NormKind,
    pub eps: f64,
    pub momentum: f64,
}

impl Norm {
    pub fn new(name: impl Into<String>, channels: usize, kind: NormKind) -> Self {
        Self {
            name: name.into(),
            channels,
            kind,
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    fn key(&self, leaf: &str) -> String {
        format!("{}.{leaf}", self.name)
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let c = self.channels;
        let mut specs = vec![
            ParamSpec::param(self.key("weight"), &[c], Init::Constant(1.0)),
            ParamSpec::param(self.key("bias"), &[c], Init::Constant(0.0)),
        ];
        if self.kind == NormKind::Batch {
            specs.push(ParamSpec::buffer(self.key("running_mean"), &[c], Init::Constant(0.0)));
            specs.push(ParamSpec::buffer(self.key("running_var"), &[c], Init::Constant(1.0)));
        }
        specs
    }

    pub fn forward(&self, b: &Binding, x: &Var) -> Var {
        let normalized = match self.kind {
            NormKind::Instance => x.standardize(StatAxes::Instance, self.eps).0,
            NormKind::Batch if b.is_train() => {
                let (y, stats) = x.standardize(StatAxes::Batch, self.eps);
                let m = self.momentum;
                let unbias = if stats.count > 1 {
                    stats.count as f64 / (stats.count - 1) as f64
                } else {
                    1.0
                };
                let mut rm = b.buffer(&self.key("running_mean"));
                let mut rv = b.buffer(&self.key("running_var"));
                for c in 0..self.channels {
                    rm[[c]] = (1.0 - m) * rm[[c]] + m * stats.mean[c];
                    rv[[c]] = (1.0 - m) * rv[[c]] + m * stats.var[c] * unbias;
                }
                b.write_buffer(&self.key("running_mean"), rm);
                b.write_buffer(&self.key("running_var"), rv);
                y
            }
            NormKind::Batch => {
                let rm = b.buffer(&self.key("running_mean"));
                let rv = b.buffer(&self.key("running_var"));
                let scale = rv.mapv(|v| 1.0 / (v + self.eps).sqrt());
                let shift = Array::from_shape_fn(IxDyn(&[self.channels]), |i| -rm[[i[0]]] * scale[[i[0]]]);
                x.mul_channel(&Var::constant(scale))
                    .add_channel(&Var::constant(shift))
            }
        };
        normalized
            .mul_channel(&b.param(&self.key("weight")))
            .add_channel(&b.param(&self.key("bias")))
    }
}
