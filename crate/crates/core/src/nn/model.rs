//! Three-layer residual CNN with optional attention gates after the first two
//! layers.

use serde::{Deserialize, Serialize};

use crate::tensors::{RealTensor, Rng};

use super::conv::{Conv2d, ConvGrad, Init};
use super::gate::{AttentionGate, DepthwiseSeparableConv, GateCache, GateGrad, SeparableGrad};
use super::NnError;

/// Filter sizes accepted for attention gates.
pub const GATE_FILTERS: [usize; 3] = [1, 3, 5];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub kernels: [usize; 3],
    pub channels: [usize; 2],
    /// Gate filter sizes; `None` disables the gate.
    pub f1: Option<usize>,
    pub f2: Option<usize>,
    pub reduction: usize,
    pub residual: bool,
}

impl ModelConfig {
    /// Plain CNN(9-5-1) with 64/32 channels.
    pub fn cnn() -> Self {
        Self {
            in_channels: 2,
            kernels: [9, 5, 1],
            channels: [64, 32],
            f1: None,
            f2: None,
            reduction: 2,
            residual: true,
        }
    }

    pub fn agcnn(f1: usize, f2: usize) -> Self {
        Self {
            f1: Some(f1),
            f2: Some(f2),
            ..Self::cnn()
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        for f in [self.f1, self.f2].into_iter().flatten() {
            if !GATE_FILTERS.contains(&f) {
                return Err(NnError::Config(format!("gate filter {f} not in {{1,3,5}}")));
            }
        }
        if self.kernels.iter().any(|k| k % 2 == 0) {
            return Err(NnError::Config("kernel sizes must be odd".into()));
        }
        if self.reduction == 0
            || self.channels.iter().any(|c| *c == 0 || c % self.reduction != 0)
        {
            return Err(NnError::Config(format!(
                "reduction {} must divide channels {:?}",
                self.reduction, self.channels
            )));
        }
        if self.in_channels == 0 {
            return Err(NnError::Config("need at least one input channel".into()));
        }
        Ok(())
    }

    /// Closed-form trainable-parameter count.
    pub fn param_count(&self) -> usize {
        let [k1, k2, k3] = self.kernels;
        let [c1, c2] = self.channels;
        let cin = self.in_channels;
        let dense = |k: usize, a: usize, b: usize| k * k * a * b + b;
        let separable = |f: usize, a: usize, b: usize| f * f * a + a + a * b + b;
        let gate = |f: Option<usize>, c: usize| {
            f.map(|f| {
                let mid = c / self.reduction;
                separable(f, c, mid) + separable(f, mid, c)
            })
            .unwrap_or(0)
        };
        dense(k1, cin, c1)
            + gate(self.f1, c1)
            + dense(k2, c1, c2)
            + gate(self.f2, c2)
            + dense(k3, c2, cin)
    }

    /// Row label such as `AG-CNN` / `CNN(9-5-1)`.
    pub fn label(&self) -> String {
        if self.f1.is_none() && self.f2.is_none() {
            let [a, b, c] = self.kernels;
            format!("CNN({a}-{b}-{c})")
        } else {
            "AG-CNN".to_string()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgCnnModel {
    pub config: ModelConfig,
    pub layer1: Conv2d,
    pub ag1: Option<AttentionGate>,
    pub layer2: Conv2d,
    pub ag2: Option<AttentionGate>,
    pub layer3: Conv2d,
}

/// Activations retained by [`AgCnnModel::forward_train`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: RealTensor,
    z1: RealTensor,
    a1: RealTensor,
    g1: Option<GateCache>,
    h1: RealTensor,
    z2: RealTensor,
    a2: RealTensor,
    g2: Option<GateCache>,
    h2: RealTensor,
    pub output: RealTensor,
}

impl ForwardCache {
    /// Attention maps emitted by the enabled gates, in network order.
    pub fn masks(&self) -> Vec<&RealTensor> {
        [&self.g1, &self.g2]
            .into_iter()
            .flatten()
            .map(|g| &g.mask)
            .collect()
    }
}

/// Gradients in [`AgCnnModel::parameters`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn zeros_like(model: &AgCnnModel) -> Self {
        Self(model.parameters().iter().map(|(_, p)| vec![0.0; p.len()]).collect())
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().flatten().for_each(|v| *v *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }
}

fn relu(mut t: RealTensor) -> RealTensor {
    t.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    t
}

fn relu_back(dy: &mut RealTensor, pre: &RealTensor) {
    dy.data_mut()
        .iter_mut()
        .zip(pre.data())
        .for_each(|(d, &z)| {
            if z <= 0.0 {
                *d = 0.0
            }
        });
}

fn push_conv(out: &mut Vec<Vec<f64>>, g: ConvGrad) {
    out.push(g.weight);
    out.push(g.bias);
}

fn push_separable(out: &mut Vec<Vec<f64>>, g: SeparableGrad) {
    push_conv(out, g.depthwise);
    push_conv(out, g.pointwise);
}

fn push_gate(out: &mut Vec<Vec<f64>>, g: GateGrad) {
    push_separable(out, g.conv_a);
    push_separable(out, g.conv_b);
}

type Named<'a, T> = Vec<(String, T)>;

fn conv_params<'a>(out: &mut Named<'a, &'a Vec<f64>>, name: &str, c: &'a Conv2d) {
    out.push((format!("{name}.weight"), &c.weight));
    out.push((format!("{name}.bias"), &c.bias));
}

fn gate_params<'a>(out: &mut Named<'a, &'a Vec<f64>>, name: &str, g: &'a AttentionGate) {
    for (part, s) in [("a", &g.conv_a), ("b", &g.conv_b)] {
        out.push((format!("{name}.{part}.depthwise.weight"), &s.depthwise.weight));
        out.push((format!("{name}.{part}.depthwise.bias"), &s.depthwise.bias));
        conv_params(out, &format!("{name}.{part}.pointwise"), &s.pointwise);
    }
}

impl AgCnnModel {
    /// He-uniform init for ReLU-fed weights, Glorot-uniform for the gate's
    /// sigmoid pointwise conv and the linear output layer; zero biases.
    pub fn init(config: ModelConfig, rng: &mut Rng) -> Result<Self, NnError> {
        config.validate()?;
        let [k1, k2, k3] = config.kernels;
        let [c1, c2] = config.channels;
        let cin = config.in_channels;
        let r = config.reduction;
        let layer1 = Conv2d::init(k1, cin, c1, Init::HeUniform, rng);
        let ag1 = config.f1.map(|f| AttentionGate::init(c1, f, r, rng));
        let layer2 = Conv2d::init(k2, c1, c2, Init::HeUniform, rng);
        let ag2 = config.f2.map(|f| AttentionGate::init(c2, f, r, rng));
        let layer3 = Conv2d::init(k3, c2, cin, Init::GlorotUniform, rng);
        Ok(Self {
            config,
            layer1,
            ag1,
            layer2,
            ag2,
            layer3,
        })
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|(_, p)| p.len()).sum()
    }

    /// Named parameter tensors in a fixed order.
    pub fn parameters(&self) -> Vec<(String, &Vec<f64>)> {
        let mut out = Vec::new();
        conv_params(&mut out, "layer1", &self.layer1);
        if let Some(g) = &self.ag1 {
            gate_params(&mut out, "ag1", g);
        }
        conv_params(&mut out, "layer2", &self.layer2);
        if let Some(g) = &self.ag2 {
            gate_params(&mut out, "ag2", g);
        }
        conv_params(&mut out, "layer3", &self.layer3);
        out
    }

    /// Mutable views in [`Self::parameters`] order.
    pub fn parameters_mut(&mut self) -> Vec<&mut Vec<f64>> {
        fn gate<'a>(out: &mut Vec<&'a mut Vec<f64>>, g: &'a mut AttentionGate) {
            for s in [&mut g.conv_a, &mut g.conv_b] {
                let DepthwiseSeparableConv {
                    depthwise,
                    pointwise,
                } = s;
                out.push(&mut depthwise.weight);
                out.push(&mut depthwise.bias);
                out.push(&mut pointwise.weight);
                out.push(&mut pointwise.bias);
            }
        }
        let Self {
            layer1,
            ag1,
            layer2,
            ag2,
            layer3,
            ..
        } = self;
        let mut out: Vec<&mut Vec<f64>> = vec![&mut layer1.weight, &mut layer1.bias];
        if let Some(g) = ag1 {
            gate(&mut out, g);
        }
        out.push(&mut layer2.weight);
        out.push(&mut layer2.bias);
        if let Some(g) = ag2 {
            gate(&mut out, g);
        }
        out.push(&mut layer3.weight);
        out.push(&mut layer3.bias);
        out
    }

    /// Shape of every tensor in [`Self::parameters`] order.
    pub fn parameter_dims(&self) -> Vec<Vec<usize>> {
        let conv = |c: &Conv2d| {
            vec![
                vec![c.kernel, c.kernel, c.cin, c.cout],
                vec![c.cout],
            ]
        };
        let gate = |g: &AttentionGate| {
            let mut v = Vec::new();
            for s in [&g.conv_a, &g.conv_b] {
                let d = &s.depthwise;
                v.push(vec![d.kernel, d.kernel, d.channels]);
                v.push(vec![d.channels]);
                v.extend(conv(&s.pointwise));
            }
            v
        };
        let mut out = conv(&self.layer1);
        if let Some(g) = &self.ag1 {
            out.extend(gate(g));
        }
        out.extend(conv(&self.layer2));
        if let Some(g) = &self.ag2 {
            out.extend(gate(g));
        }
        out.extend(conv(&self.layer3));
        out
    }

    pub fn forward_train(&self, input: &RealTensor) -> Result<ForwardCache, NnError> {
        let z1 = self.layer1.forward(input)?;
        let a1 = relu(z1.clone());
        let (h1, g1) = match &self.ag1 {
            Some(g) => {
                let (h, c) = g.forward(&a1)?;
                (h, Some(c))
            }
            None => (a1.clone(), None),
        };
        let z2 = self.layer2.forward(&h1)?;
        let a2 = relu(z2.clone());
        let (h2, g2) = match &self.ag2 {
            Some(g) => {
                let (h, c) = g.forward(&a2)?;
                (h, Some(c))
            }
            None => (a2.clone(), None),
        };
        let mut output = self.layer3.forward(&h2)?;
        if self.config.residual {
            output
                .data_mut()
                .iter_mut()
                .zip(input.data())
                .for_each(|(o, x)| *o += x);
        }
        Ok(ForwardCache {
            input: input.clone(),
            z1,
            a1,
            g1,
            h1,
            z2,
            a2,
            g2,
            h2,
            output,
        })
    }

    pub fn forward(&self, input: &RealTensor) -> Result<RealTensor, NnError> {
        Ok(self.forward_train(input)?.output)
    }

    /// Parameter gradients for upstream gradient `dout` on the output.
    pub fn backward(&self, cache: &ForwardCache, dout: &RealTensor) -> Result<Gradients, NnError> {
        let (dh2, g3) = self.layer3.backward(&cache.h2, dout, true)?;
        let dh2 = dh2.expect("requested");
        let (mut da2, gag2) = match (&self.ag2, &cache.g2) {
            (Some(g), Some(c)) => {
                let (d, gr) = g.backward(&cache.a2, c, &dh2)?;
                (d, Some(gr))
            }
            _ => (dh2, None),
        };
        relu_back(&mut da2, &cache.z2);
        let (dh1, g2) = self.layer2.backward(&cache.h1, &da2, true)?;
        let dh1 = dh1.expect("requested");
        let (mut da1, gag1) = match (&self.ag1, &cache.g1) {
            (Some(g), Some(c)) => {
                let (d, gr) = g.backward(&cache.a1, c, &dh1)?;
                (d, Some(gr))
            }
            _ => (dh1, None),
        };
        relu_back(&mut da1, &cache.z1);
        let (_, g1) = self.layer1.backward(&cache.input, &da1, false)?;
        let mut out = Vec::new();
        push_conv(&mut out, g1);
        if let Some(g) = gag1 {
            push_gate(&mut out, g);
        }
        push_conv(&mut out, g2);
        if let Some(g) = gag2 {
            push_gate(&mut out, g);
        }
        push_conv(&mut out, g3);
        Ok(Gradients(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_matches_tensors() {
        for f1 in [None, Some(1), Some(3), Some(5)] {
            for f2 in [None, Some(1), Some(3), Some(5)] {
                let cfg = ModelConfig {
                    f1,
                    f2,
                    ..ModelConfig::cnn()
                };
                let m = AgCnnModel::init(cfg.clone(), &mut Rng::new(0)).unwrap();
                assert_eq!(m.param_count(), cfg.param_count());
                let dims = m.parameter_dims();
                let params = m.parameters();
                assert_eq!(dims.len(), params.len());
                for (d, (_, p)) in dims.iter().zip(&params) {
                    assert_eq!(d.iter().product::<usize>(), p.len());
                }
            }
        }
    }

    #[test]
    fn base_count() {
        assert_eq!(ModelConfig::cnn().param_count(), 61_730);
    }

    #[test]
    fn invalid_filter_rejected() {
        assert!(ModelConfig::agcnn(2, 3).validate().is_err());
        assert!(ModelConfig::agcnn(7, 3).validate().is_err());
    }

    #[test]
    fn zero_last_layer_is_identity() {
        let cfg = ModelConfig {
            channels: [8, 4],
            ..ModelConfig::agcnn(3, 3)
        };
        let mut m = AgCnnModel::init(cfg, &mut Rng::new(2)).unwrap();
        m.layer3.weight.fill(0.0);
        m.layer3.bias.fill(0.0);
        let mut rng = Rng::new(5);
        let x = RealTensor::from_vec(&[6, 6, 2], (0..72).map(|_| rng.normal()).collect()).unwrap();
        assert_eq!(m.forward(&x).unwrap(), x);
    }

    #[test]
    fn parameters_mut_order() {
        let mut m = AgCnnModel::init(ModelConfig::agcnn(3, 1), &mut Rng::new(1)).unwrap();
        let lens: Vec<usize> = m.parameters().iter().map(|(_, p)| p.len()).collect();
        let lens_mut: Vec<usize> = m.parameters_mut().iter().map(|p| p.len()).collect();
        assert_eq!(lens, lens_mut);
    }
}
