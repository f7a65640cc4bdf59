//! Parameterized layers shared by the network modules.

use crate::error::Result;
use crate::params::{Bound, ParamBuilder, ParamId};
use crate::scalar::Scalar;
use crate::tensor::ops::ConvGeometry;
use crate::tensor::Tensor;

pub const LN_EPS: f64 = 1e-5;
pub const IN_EPS: f64 = 1e-5;

/// Dense layer over the last axis, weight `(in, out)`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        let mut s = b.sub(name);
        let bound = 1.0 / (fan_in as f64).sqrt();
        Ok(Self {
            weight: s.uniform("weight", &[fan_in, fan_out], bound)?,
            bias: s.zeros("bias", &[fan_out])?,
        })
    }

    pub fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.linear(p.get(self.weight), Some(p.get(self.bias)))
    }
}

/// Layer normalization over the last axis.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, dim: usize) -> Result<Self> {
        let mut s = b.sub(name);
        Ok(Self {
            weight: s.constant("weight", &[dim], 1.0)?,
            bias: s.zeros("bias", &[dim])?,
        })
    }

    pub fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.layer_norm(p.get(self.weight), p.get(self.bias), T::of(LN_EPS))
    }

    /// Normalizes the channel axis of a channel-first `(N, C, H, W, D)` map.
    pub fn forward_channels_first<T: Scalar>(&self, p: &Bound<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward(p, &x.permute(&[0, 2, 3, 4, 1])?)?.permute(&[0, 4, 1, 2, 3])
    }
}

/// 3-D convolution, weight `(Cout, Cin, k, k, k)`.
#[derive(Clone, Debug)]
pub struct Conv3d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeometry,
}

impl Conv3d {
    pub fn new<T: Scalar>(
        b: &mut ParamBuilder<'_, T>,
        name: &str,
        cin: usize,
        cout: usize,
        geom: ConvGeometry,
        bias: bool,
    ) -> Result<Self> {
        let mut s = b.sub(name);
        let k = geom.kernel;
        let bound = 1.0 / ((cin * geom.kernel_volume()) as f64).sqrt();
        let weight = s.uniform("weight", &[cout, cin, k[0], k[1], k[2]], bound)?;
        let bias = if bias { Some(s.uniform("bias", &[cout], bound)?) } else { None };
        Ok(Self { weight, bias, geom })
    }

    pub fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.conv3d(p.get(self.weight), self.bias.map(|id| p.get(id)), self.geom)
    }
}

/// Transposed 3-D convolution, weight `(Cin, Cout, k, k, k)`.
#[derive(Clone, Debug)]
pub struct ConvTranspose3d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeometry,
}

impl ConvTranspose3d {
    pub fn new<T: Scalar>(
        b: &mut ParamBuilder<'_, T>,
        name: &str,
        cin: usize,
        cout: usize,
        geom: ConvGeometry,
        bias: bool,
    ) -> Result<Self> {
        let mut s = b.sub(name);
        let k = geom.kernel;
        let bound = 1.0 / ((cin * geom.kernel_volume()) as f64).sqrt();
        let weight = s.uniform("weight", &[cin, cout, k[0], k[1], k[2]], bound)?;
        let bias = if bias { Some(s.uniform("bias", &[cout], bound)?) } else { None };
        Ok(Self { weight, bias, geom })
    }

    /// Kernel equal to stride: exact upsampling by the stride.
    pub fn upsampling<T: Scalar>(
        b: &mut ParamBuilder<'_, T>,
        name: &str,
        cin: usize,
        cout: usize,
        stride: [usize; 3],
        bias: bool,
    ) -> Result<Self> {
        let geom = ConvGeometry { kernel: stride, stride, padding: [0; 3] };
        Self::new(b, name, cin, cout, geom, bias)
    }

    pub fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.conv_transpose3d(p.get(self.weight), self.bias.map(|id| p.get(id)), self.geom)
    }
}
