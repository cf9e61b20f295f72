//! Depthwise-separable convolutions and the attention gate built from two of
//! them: `M = sigmoid(B(relu(A(F))))`, `F' = M ⊙ F`.

use crate::tensors::{RealTensor, Rng};

use super::conv::{Conv2d, ConvGrad, DepthwiseConv, Init};
use super::NnError;

#[derive(Debug, Clone, PartialEq)]
pub struct DepthwiseSeparableConv {
    pub depthwise: DepthwiseConv,
    pub pointwise: Conv2d,
}

/// Intermediate kept for the backward pass.
#[derive(Debug, Clone)]
pub struct SeparableCache {
    spatial: RealTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparableGrad {
    pub depthwise: ConvGrad,
    pub pointwise: ConvGrad,
}

impl DepthwiseSeparableConv {
    pub fn init(
        kernel: usize,
        cin: usize,
        cout: usize,
        pointwise_init: Init,
        rng: &mut Rng,
    ) -> Self {
        Self {
            depthwise: DepthwiseConv::init(kernel, cin, Init::HeUniform, rng),
            pointwise: Conv2d::init(1, cin, cout, pointwise_init, rng),
        }
    }

    pub fn param_count(&self) -> usize {
        self.depthwise.param_count() + self.pointwise.param_count()
    }

    pub fn forward(&self, x: &RealTensor) -> Result<(RealTensor, SeparableCache), NnError> {
        let spatial = self.depthwise.forward(x)?;
        let y = self.pointwise.forward(&spatial)?;
        Ok((y, SeparableCache { spatial }))
    }

    pub fn backward(
        &self,
        x: &RealTensor,
        cache: &SeparableCache,
        dy: &RealTensor,
    ) -> Result<(RealTensor, SeparableGrad), NnError> {
        let (ds, pointwise) = self.pointwise.backward(&cache.spatial, dy, true)?;
        let (dx, depthwise) = self.depthwise.backward(x, &ds.expect("requested"), true)?;
        Ok((
            dx.expect("requested"),
            SeparableGrad {
                depthwise,
                pointwise,
            },
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGate {
    pub filter: usize,
    pub reduction: usize,
    pub conv_a: DepthwiseSeparableConv,
    pub conv_b: DepthwiseSeparableConv,
}

#[derive(Debug, Clone)]
pub struct GateCache {
    a_cache: SeparableCache,
    a_pre: RealTensor,
    a_act: RealTensor,
    b_cache: SeparableCache,
    /// Attention map `M`.
    pub mask: RealTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateGrad {
    pub conv_a: SeparableGrad,
    pub conv_b: SeparableGrad,
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl AttentionGate {
    pub fn init(channels: usize, filter: usize, reduction: usize, rng: &mut Rng) -> Self {
        assert!(reduction >= 1 && channels.is_multiple_of(reduction), "reduction must divide channels");
        let mid = channels / reduction;
        Self {
            filter,
            reduction,
            conv_a: DepthwiseSeparableConv::init(filter, channels, mid, Init::HeUniform, rng),
            conv_b: DepthwiseSeparableConv::init(filter, mid, channels, Init::GlorotUniform, rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.conv_a.depthwise.channels
    }

    pub fn param_count(&self) -> usize {
        self.conv_a.param_count() + self.conv_b.param_count()
    }

    /// Returns `(F', cache)`; `cache.mask` holds `M`.
    pub fn forward(&self, f: &RealTensor) -> Result<(RealTensor, GateCache), NnError> {
        let (a_pre, a_cache) = self.conv_a.forward(f)?;
        let mut a_act = a_pre.clone();
        a_act.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let (mut mask, b_cache) = self.conv_b.forward(&a_act)?;
        mask.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
        let mut out = f.clone();
        out.data_mut()
            .iter_mut()
            .zip(mask.data())
            .for_each(|(o, m)| *o *= m);
        Ok((
            out,
            GateCache {
                a_cache,
                a_pre,
                a_act,
                b_cache,
                mask,
            },
        ))
    }

    pub fn backward(
        &self,
        f: &RealTensor,
        cache: &GateCache,
        dout: &RealTensor,
    ) -> Result<(RealTensor, GateGrad), NnError> {
        let m = cache.mask.data();
        let mut direct = dout.clone();
        let mut dlogit = dout.clone();
        for (((d, l), &mv), &fv) in direct
            .data_mut()
            .iter_mut()
            .zip(dlogit.data_mut())
            .zip(m)
            .zip(f.data())
        {
            let g = *d;
            *d = g * mv;
            *l = g * fv * mv * (1.0 - mv);
        }
        let (mut dact, conv_b) = self.conv_b.backward(&cache.a_act, &cache.b_cache, &dlogit)?;
        dact.data_mut()
            .iter_mut()
            .zip(cache.a_pre.data())
            .for_each(|(d, &z)| {
                if z <= 0.0 {
                    *d = 0.0
                }
            });
        let (dgate, conv_a) = self.conv_a.backward(f, &cache.a_cache, &dact)?;
        direct
            .data_mut()
            .iter_mut()
            .zip(dgate.data())
            .for_each(|(d, g)| *d += g);
        Ok((direct, GateGrad { conv_a, conv_b }))
    }
}
