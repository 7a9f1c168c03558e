//! Shared helpers for the gradient-check and acceptance suites.
//!
//! The finite-difference oracle here is deliberately independent of the
//! reverse-mode path it checks: it only ever calls the forward loss.

#![allow(dead_code)]

use faciesmatch::geomodel::OneHotImage;
use faciesmatch::neuralgen::{Activation, DropoutMasks, Layer, LayerKind, Mode, VaeNetwork};

/// Relative error with a floor so that near-zero pairs compare absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central finite difference of `f` with respect to the `idx`-th scalar
/// parameter of `net` (indexing the flat concatenation of param tensors).
pub fn fd_param_grad<F>(net: &mut VaeNetwork, idx: usize, h: f64, mut f: F) -> f64
where
    F: FnMut(&VaeNetwork) -> f64,
{
    let read = |net: &VaeNetwork, idx: usize| -> f64 {
        let mut off = 0;
        for (_, t) in net.param_tensors() {
            if idx < off + t.len() {
                return t.data()[idx - off];
            }
            off += t.len();
        }
        panic!("parameter index {idx} out of range");
    };
    let write = |net: &mut VaeNetwork, idx: usize, v: f64| {
        let mut off = 0;
        for (_, t) in net.param_tensors_mut() {
            if idx < off + t.len() {
                t.data_mut()[idx - off] = v;
                return;
            }
            off += t.len();
        }
        panic!("parameter index {idx} out of range");
    };
    let orig = read(net, idx);
    write(net, idx, orig + h);
    let fp = f(net);
    write(net, idx, orig - h);
    let fm = f(net);
    write(net, idx, orig);
    (fp - fm) / (2.0 * h)
}

/// Total number of scalar parameters of `net`.
pub fn flat_param_count(net: &VaeNetwork) -> usize {
    net.param_tensors().iter().map(|(_, t)| t.len()).sum()
}

/// Smallest |pre-activation| across all ReLU units of the network for one
/// train-mode pass. Finite differences are only valid away from the ReLU
/// kink, so seeds with a small margin are skipped by the callers.
pub fn min_relu_margin(net: &VaeNetwork, x: &OneHotImage, eps: &[f64], masks: &DropoutMasks) -> f64 {
    let mut margin = f64::INFINITY;
    let mut scan = |layers: &[Layer], input: faciesmatch::neuralgen::Tensor, masks: &[Option<Vec<f64>>]| {
        let mut act = input;
        for (l, mask) in layers.iter().zip(masks) {
            if l.spec.activation == Activation::Relu {
                let mut linear = l.clone();
                linear.spec.activation = Activation::Linear;
                let pre = linear.forward(&act, Mode::Train, mask.as_deref()).unwrap();
                for &v in pre.data() {
                    margin = margin.min(v.abs());
                }
            }
            act = l.forward(&act, Mode::Train, mask.as_deref()).unwrap();
        }
        act
    };
    let [ny, nx, k] = net.input_shape();
    let input = faciesmatch::neuralgen::Tensor::new(vec![ny, nx, k], x.values().to_vec()).unwrap();
    let bottleneck = scan(net.encoder_layers(), input, &masks.encoder);
    let (head_mu, head_logvar) = net.latent_heads();
    let mu = head_mu.forward(&bottleneck, Mode::Train, None).unwrap();
    let logvar = head_logvar.forward(&bottleneck, Mode::Train, None).unwrap();
    let z = faciesmatch::neuralgen::reparameterize(mu.data(), logvar.data(), eps).unwrap();
    scan(
        net.decoder_layers(),
        faciesmatch::neuralgen::Tensor::from_vec(z),
        &masks.decoder,
    );
    margin
}

/// A single standalone layer plus a fixed linear readout, used to probe one
/// layer kind at a time. The loss is `sum(c * layer(x))`.
pub struct LayerProbe {
    pub layer: Layer,
    pub input: faciesmatch::neuralgen::Tensor,
    pub readout: Vec<f64>,
    pub mask: Option<Vec<f64>>,
}

impl LayerProbe {
    pub fn loss(&self) -> f64 {
        let out = self
            .layer
            .forward(&self.input, Mode::Train, self.mask.as_deref())
            .unwrap();
        out.data().iter().zip(&self.readout).map(|(a, b)| a * b).sum()
    }

    /// Minimum |pre-activation| when the layer is ReLU (infinity otherwise).
    pub fn relu_margin(&self) -> f64 {
        if self.layer.spec.activation != Activation::Relu {
            return f64::INFINITY;
        }
        let mut linear = self.layer.clone();
        linear.spec.activation = Activation::Linear;
        let pre = linear
            .forward(&self.input, Mode::Train, self.mask.as_deref())
            .unwrap();
        pre.data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }

    pub fn has_params(&self) -> bool {
        self.layer.params.is_some()
    }

    pub fn is_dropout(&self) -> bool {
        matches!(self.layer.spec.kind, LayerKind::Dropout { .. })
    }
}
