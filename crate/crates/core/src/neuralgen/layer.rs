//! Layer kinds, shape arithmetic, parameter initialization, and the
//! hand-written forward/backward pass for each kind.
//!
//! Feature maps are HWC row-major: `idx = (y * w + x) * channels + c`.
//! Convolutions use valid padding with output extent `(n - k)/s + 1`;
//! transposed convolutions produce `(n - 1)*s + k`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::{axpy, dot, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed through the post-activation value.
    #[inline]
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Conv2d {
        kernels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
    },
    TransposedConv2d {
        kernels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
    },
    Dense {
        units: usize,
    },
    Flatten,
    Reshape {
        shape: (usize, usize, usize),
    },
    Dropout {
        rate: f64,
    },
    BilinearUpsample {
        out_h: usize,
        out_w: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn conv2d(kernels: usize, kernel: (usize, usize), stride: (usize, usize), activation: Activation) -> Self {
        LayerSpec {
            kind: LayerKind::Conv2d { kernels, kernel, stride },
            activation,
        }
    }

    pub fn transposed_conv2d(
        kernels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        activation: Activation,
    ) -> Self {
        LayerSpec {
            kind: LayerKind::TransposedConv2d { kernels, kernel, stride },
            activation,
        }
    }

    pub fn dense(units: usize, activation: Activation) -> Self {
        LayerSpec {
            kind: LayerKind::Dense { units },
            activation,
        }
    }

    pub fn flatten() -> Self {
        LayerSpec {
            kind: LayerKind::Flatten,
            activation: Activation::Linear,
        }
    }

    pub fn reshape(h: usize, w: usize, c: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Reshape { shape: (h, w, c) },
            activation: Activation::Linear,
        }
    }

    pub fn dropout(rate: f64) -> Self {
        LayerSpec {
            kind: LayerKind::Dropout { rate },
            activation: Activation::Linear,
        }
    }

    pub fn bilinear_upsample(out_h: usize, out_w: usize) -> Self {
        LayerSpec {
            kind: LayerKind::BilinearUpsample { out_h, out_w },
            activation: Activation::Linear,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            LayerKind::Conv2d { kernels, kernel, stride }
            | LayerKind::TransposedConv2d { kernels, kernel, stride } => {
                if *kernels == 0 || kernel.0 == 0 || kernel.1 == 0 {
                    return Err(Error::validation("kernel count and size must be >= 1".to_string()));
                }
                if stride.0 == 0 || stride.1 == 0 {
                    return Err(Error::validation("strides must be >= 1".to_string()));
                }
            }
            LayerKind::Dense { units } => {
                if *units == 0 {
                    return Err(Error::validation("dense layer needs units >= 1".to_string()));
                }
            }
            LayerKind::Dropout { rate } => {
                if !(0.0..1.0).contains(rate) {
                    return Err(Error::validation(format!("dropout rate {rate} outside [0, 1)")));
                }
            }
            LayerKind::Flatten | LayerKind::Reshape { .. } | LayerKind::BilinearUpsample { .. } => {}
        }
        Ok(())
    }

    /// Output shape for a given input shape, or a shape error naming both.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match &self.kind {
            LayerKind::Conv2d { kernels, kernel, stride } => {
                let [h, w, _c] = expect_hwc(input, "conv2d")?;
                if h < kernel.0 || w < kernel.1 {
                    return Err(Error::shape(
                        "conv2d: input smaller than kernel",
                        &[kernel.0, kernel.1],
                        &[h, w],
                    ));
                }
                Ok(vec![
                    (h - kernel.0) / stride.0 + 1,
                    (w - kernel.1) / stride.1 + 1,
                    *kernels,
                ])
            }
            LayerKind::TransposedConv2d { kernels, kernel, stride } => {
                let [h, w, _c] = expect_hwc(input, "transposed_conv2d")?;
                Ok(vec![(h - 1) * stride.0 + kernel.0, (w - 1) * stride.1 + kernel.1, *kernels])
            }
            LayerKind::Dense { units } => {
                if input.len() != 1 {
                    return Err(Error::shape("dense expects a flat input", &[1], &[input.len()]));
                }
                Ok(vec![*units])
            }
            LayerKind::Flatten => Ok(vec![input.iter().product()]),
            LayerKind::Reshape { shape } => {
                let n: usize = input.iter().product();
                let m = shape.0 * shape.1 * shape.2;
                if n != m {
                    return Err(Error::shape("reshape volume", &[m], &[n]));
                }
                Ok(vec![shape.0, shape.1, shape.2])
            }
            LayerKind::Dropout { .. } => Ok(input.to_vec()),
            LayerKind::BilinearUpsample { out_h, out_w } => {
                let [_h, _w, c] = expect_hwc(input, "bilinear_upsample")?;
                Ok(vec![*out_h, *out_w, c])
            }
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::TransposedConv2d { .. } => "transposed_conv2d",
            LayerKind::Dense { .. } => "dense",
            LayerKind::Flatten => "flatten",
            LayerKind::Reshape { .. } => "reshape",
            LayerKind::Dropout { .. } => "dropout",
            LayerKind::BilinearUpsample { .. } => "bilinear_upsample",
        }
    }
}

fn expect_hwc(shape: &[usize], what: &str) -> Result<[usize; 3]> {
    match shape {
        [h, w, c] => Ok([*h, *w, *c]),
        other => Err(Error::shape(
            format!("{what} expects an h*w*c input"),
            &[3],
            &[other.len()],
        )),
    }
}

/// Weight and bias tensors of a parametric layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A spec bound to an input shape, with parameters when the kind has any.
#[derive(Debug, Clone)]
pub struct Layer {
    pub spec: LayerSpec,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    pub params: Option<LayerParams>,
}

fn uniform_init(rng: &mut ChaCha8Rng, n: usize, limit: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
}

impl Layer {
    /// Bind `spec` to `in_shape`, initializing parameters where applicable.
    ///
    /// He-uniform for ReLU layers, Glorot-uniform otherwise; biases zero.
    pub fn new(spec: LayerSpec, in_shape: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        let out_shape = spec.output_shape(in_shape)?;
        let params = match &spec.kind {
            LayerKind::Conv2d { kernels, kernel, .. } => {
                let in_c = in_shape[2];
                let fan_in = (kernel.0 * kernel.1 * in_c) as f64;
                let fan_out = (kernel.0 * kernel.1 * kernels) as f64;
                let limit = init_limit(spec.activation, fan_in, fan_out);
                let w = uniform_init(rng, kernels * kernel.0 * kernel.1 * in_c, limit);
                Some(LayerParams {
                    weight: Tensor::new(vec![*kernels, kernel.0, kernel.1, in_c], w)?,
                    bias: Tensor::zeros(vec![*kernels]),
                })
            }
            LayerKind::TransposedConv2d { kernels, kernel, .. } => {
                let in_c = in_shape[2];
                let fan_in = (kernel.0 * kernel.1 * in_c) as f64;
                let fan_out = (kernel.0 * kernel.1 * kernels) as f64;
                let limit = init_limit(spec.activation, fan_in, fan_out);
                let w = uniform_init(rng, in_c * kernel.0 * kernel.1 * kernels, limit);
                Some(LayerParams {
                    weight: Tensor::new(vec![in_c, kernel.0, kernel.1, *kernels], w)?,
                    bias: Tensor::zeros(vec![*kernels]),
                })
            }
            LayerKind::Dense { units } => {
                let n_in = in_shape[0];
                let limit = init_limit(spec.activation, n_in as f64, *units as f64);
                let w = uniform_init(rng, n_in * units, limit);
                Some(LayerParams {
                    weight: Tensor::new(vec![n_in, *units], w)?,
                    bias: Tensor::zeros(vec![*units]),
                })
            }
            _ => None,
        };
        Ok(Layer {
            spec,
            in_shape: in_shape.to_vec(),
            out_shape,
            params,
        })
    }

    /// Forward pass. `mask` must be `Some` exactly for dropout layers in
    /// train mode; entries are 0 or `1/(1-rate)` (inverted dropout).
    pub fn forward(&self, input: &Tensor, mode: Mode, mask: Option<&[f64]>) -> Result<Tensor> {
        if input.shape() != self.in_shape.as_slice() {
            return Err(Error::shape(
                format!("{} input", self.spec.kind_name()),
                &self.in_shape,
                input.shape(),
            ));
        }
        let mut out = match &self.spec.kind {
            LayerKind::Conv2d { .. } => self.conv_forward(input),
            LayerKind::TransposedConv2d { .. } => self.tconv_forward(input),
            LayerKind::Dense { .. } => self.dense_forward(input),
            LayerKind::Flatten => input.clone().reshaped(self.out_shape.clone())?,
            LayerKind::Reshape { .. } => input.clone().reshaped(self.out_shape.clone())?,
            LayerKind::Dropout { .. } => match (mode, mask) {
                (Mode::Eval, _) => input.clone(),
                (Mode::Train, Some(m)) => {
                    let mut t = input.clone();
                    for (v, &k) in t.data_mut().iter_mut().zip(m) {
                        *v *= k;
                    }
                    t
                }
                (Mode::Train, None) => {
                    return Err(Error::validation(
                        "dropout in train mode requires a mask".to_string(),
                    ))
                }
            },
            LayerKind::BilinearUpsample { .. } => self.bilinear_forward(input),
        };
        if self.spec.activation != Activation::Linear {
            for v in out.data_mut() {
                *v = self.spec.activation.apply(*v);
            }
        }
        Ok(out)
    }

    /// Reverse-mode step: given this layer's `input`, its post-activation
    /// `output` and the loss gradient `gout` w.r.t. that output, produce the
    /// gradient w.r.t. the input plus parameter gradients when applicable.
    pub fn backward(
        &self,
        input: &Tensor,
        output: &Tensor,
        gout: &Tensor,
        mask: Option<&[f64]>,
    ) -> (Tensor, Option<LayerGrads>) {
        // fold the activation derivative into a pre-activation gradient
        let gpre: Vec<f64> = if self.spec.activation == Activation::Linear {
            gout.data().to_vec()
        } else {
            gout.data()
                .iter()
                .zip(output.data())
                .map(|(&g, &y)| g * self.spec.activation.grad_from_output(y))
                .collect()
        };

        match &self.spec.kind {
            LayerKind::Conv2d { .. } => self.conv_backward(input, &gpre),
            LayerKind::TransposedConv2d { .. } => self.tconv_backward(input, &gpre),
            LayerKind::Dense { .. } => self.dense_backward(input, &gpre),
            LayerKind::Flatten | LayerKind::Reshape { .. } => (
                Tensor::new(self.in_shape.clone(), gpre).expect("reshape grad volume"),
                None,
            ),
            LayerKind::Dropout { .. } => {
                let mut g = gpre;
                if let Some(m) = mask {
                    for (v, &k) in g.iter_mut().zip(m) {
                        *v *= k;
                    }
                }
                (Tensor::new(self.in_shape.clone(), g).expect("dropout grad volume"), None)
            }
            LayerKind::BilinearUpsample { .. } => (self.bilinear_backward(&gpre), None),
        }
    }

    fn conv_forward(&self, input: &Tensor) -> Tensor {
        let LayerKind::Conv2d { kernels, kernel, stride } = self.spec.kind else {
            unreachable!()
        };
        let [_, w, in_c] = [self.in_shape[0], self.in_shape[1], self.in_shape[2]];
        let [oh, ow, oc] = [self.out_shape[0], self.out_shape[1], self.out_shape[2]];
        debug_assert_eq!(oc, kernels);
        let p = self.params.as_ref().expect("conv params");
        let wt = p.weight.data();
        let bias = p.bias.data();
        let x = input.data();
        let mut out = vec![0.0; oh * ow * oc];
        let ksz = kernel.0 * kernel.1 * in_c;
        for oy in 0..oh {
            for ox in 0..ow {
                let base_y = oy * stride.0;
                let base_x = ox * stride.1;
                let out_off = (oy * ow + ox) * oc;
                for k in 0..oc {
                    let wk = &wt[k * ksz..(k + 1) * ksz];
                    let mut acc = bias[k];
                    for dy in 0..kernel.0 {
                        let in_off = ((base_y + dy) * w + base_x) * in_c;
                        let row = &x[in_off..in_off + kernel.1 * in_c];
                        let wrow = &wk[dy * kernel.1 * in_c..(dy + 1) * kernel.1 * in_c];
                        acc += dot(row, wrow);
                    }
                    out[out_off + k] = acc;
                }
            }
        }
        Tensor::new(self.out_shape.clone(), out).expect("conv output volume")
    }

    fn conv_backward(&self, input: &Tensor, gpre: &[f64]) -> (Tensor, Option<LayerGrads>) {
        let LayerKind::Conv2d { kernel, stride, .. } = self.spec.kind else {
            unreachable!()
        };
        let [_, w, in_c] = [self.in_shape[0], self.in_shape[1], self.in_shape[2]];
        let [oh, ow, oc] = [self.out_shape[0], self.out_shape[1], self.out_shape[2]];
        let p = self.params.as_ref().expect("conv params");
        let wt = p.weight.data();
        let x = input.data();
        let mut gin = vec![0.0; x.len()];
        let mut gw = vec![0.0; wt.len()];
        let mut gb = vec![0.0; oc];
        let ksz = kernel.0 * kernel.1 * in_c;
        let seg = kernel.1 * in_c;
        for oy in 0..oh {
            for ox in 0..ow {
                let base_y = oy * stride.0;
                let base_x = ox * stride.1;
                let out_off = (oy * ow + ox) * oc;
                for k in 0..oc {
                    let g = gpre[out_off + k];
                    if g == 0.0 {
                        continue;
                    }
                    gb[k] += g;
                    let wk = &wt[k * ksz..(k + 1) * ksz];
                    let gwk = &mut gw[k * ksz..(k + 1) * ksz];
                    for dy in 0..kernel.0 {
                        let in_off = ((base_y + dy) * w + base_x) * in_c;
                        axpy(&mut gin[in_off..in_off + seg], g, &wk[dy * seg..(dy + 1) * seg]);
                        axpy(&mut gwk[dy * seg..(dy + 1) * seg], g, &x[in_off..in_off + seg]);
                    }
                }
            }
        }
        (
            Tensor::new(self.in_shape.clone(), gin).expect("conv gin volume"),
            Some(LayerGrads {
                weight: Tensor::new(p.weight.shape().to_vec(), gw).expect("conv gw volume"),
                bias: Tensor::from_vec(gb),
            }),
        )
    }

    fn tconv_forward(&self, input: &Tensor) -> Tensor {
        let LayerKind::TransposedConv2d { kernel, stride, .. } = self.spec.kind else {
            unreachable!()
        };
        let [h, w, in_c] = [self.in_shape[0], self.in_shape[1], self.in_shape[2]];
        let [_, ow, oc] = [self.out_shape[0], self.out_shape[1], self.out_shape[2]];
        let p = self.params.as_ref().expect("tconv params");
        let wt = p.weight.data();
        let bias = p.bias.data();
        let x = input.data();
        let mut out = vec![0.0; self.out_shape.iter().product()];
        for chunk in out.chunks_exact_mut(oc) {
            chunk.copy_from_slice(bias);
        }
        let ksz = kernel.0 * kernel.1 * oc;
        for y in 0..h {
            for xx in 0..w {
                let in_off = (y * w + xx) * in_c;
                for ic in 0..in_c {
                    let v = x[in_off + ic];
                    if v == 0.0 {
                        continue;
                    }
                    let wk = &wt[ic * ksz..(ic + 1) * ksz];
                    for dy in 0..kernel.0 {
                        let oy = y * stride.0 + dy;
                        for dx in 0..kernel.1 {
                            let ox = xx * stride.1 + dx;
                            let out_off = (oy * ow + ox) * oc;
                            let wrow = &wk[(dy * kernel.1 + dx) * oc..(dy * kernel.1 + dx + 1) * oc];
                            axpy(&mut out[out_off..out_off + oc], v, wrow);
                        }
                    }
                }
            }
        }
        Tensor::new(self.out_shape.clone(), out).expect("tconv output volume")
    }

    fn tconv_backward(&self, input: &Tensor, gpre: &[f64]) -> (Tensor, Option<LayerGrads>) {
        let LayerKind::TransposedConv2d { kernel, stride, .. } = self.spec.kind else {
            unreachable!()
        };
        let [h, w, in_c] = [self.in_shape[0], self.in_shape[1], self.in_shape[2]];
        let [_, ow, oc] = [self.out_shape[0], self.out_shape[1], self.out_shape[2]];
        let p = self.params.as_ref().expect("tconv params");
        let wt = p.weight.data();
        let x = input.data();
        let mut gin = vec![0.0; x.len()];
        let mut gw = vec![0.0; wt.len()];
        let mut gb = vec![0.0; oc];
        for chunk in gpre.chunks_exact(oc) {
            for (b, &g) in gb.iter_mut().zip(chunk) {
                *b += g;
            }
        }
        let ksz = kernel.0 * kernel.1 * oc;
        for y in 0..h {
            for xx in 0..w {
                let in_off = (y * w + xx) * in_c;
                for ic in 0..in_c {
                    let v = x[in_off + ic];
                    let wk = &wt[ic * ksz..(ic + 1) * ksz];
                    let gwk = &mut gw[ic * ksz..(ic + 1) * ksz];
                    let mut acc = 0.0;
                    for dy in 0..kernel.0 {
                        let oy = y * stride.0 + dy;
                        for dx in 0..kernel.1 {
                            let ox = xx * stride.1 + dx;
                            let out_off = (oy * ow + ox) * oc;
                            let gseg = &gpre[out_off..out_off + oc];
                            let koff = (dy * kernel.1 + dx) * oc;
                            acc += dot(gseg, &wk[koff..koff + oc]);
                            axpy(&mut gwk[koff..koff + oc], v, gseg);
                        }
                    }
                    gin[in_off + ic] = acc;
                }
            }
        }
        (
            Tensor::new(self.in_shape.clone(), gin).expect("tconv gin volume"),
            Some(LayerGrads {
                weight: Tensor::new(p.weight.shape().to_vec(), gw).expect("tconv gw volume"),
                bias: Tensor::from_vec(gb),
            }),
        )
    }

    fn dense_forward(&self, input: &Tensor) -> Tensor {
        let p = self.params.as_ref().expect("dense params");
        let n_in = self.in_shape[0];
        let n_out = self.out_shape[0];
        let wt = p.weight.data();
        let mut out = p.bias.data().to_vec();
        for (i, &v) in input.data().iter().enumerate() {
            if v != 0.0 {
                axpy(&mut out, v, &wt[i * n_out..(i + 1) * n_out]);
            }
        }
        debug_assert_eq!(n_in * n_out, wt.len());
        Tensor::from_vec(out)
    }

    fn dense_backward(&self, input: &Tensor, gpre: &[f64]) -> (Tensor, Option<LayerGrads>) {
        let p = self.params.as_ref().expect("dense params");
        let n_out = self.out_shape[0];
        let wt = p.weight.data();
        let x = input.data();
        let mut gin = vec![0.0; x.len()];
        let mut gw = vec![0.0; wt.len()];
        for (i, gi) in gin.iter_mut().enumerate() {
            let row = &wt[i * n_out..(i + 1) * n_out];
            *gi = dot(gpre, row);
            axpy(&mut gw[i * n_out..(i + 1) * n_out], x[i], gpre);
        }
        (
            Tensor::new(self.in_shape.clone(), gin).expect("dense gin volume"),
            Some(LayerGrads {
                weight: Tensor::new(p.weight.shape().to_vec(), gw).expect("dense gw volume"),
                bias: Tensor::from_vec(gpre.to_vec()),
            }),
        )
    }

    /// Bilinear interpolation weights along one axis (align-corners).
    fn lerp_axis(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|o| {
                if n_out == 1 || n_in == 1 {
                    return (0, 0, 0.0);
                }
                let f = o as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
                let i0 = f.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, f - i0 as f64)
            })
            .collect()
    }

    fn bilinear_forward(&self, input: &Tensor) -> Tensor {
        let [h, w, c] = [self.in_shape[0], self.in_shape[1], self.in_shape[2]];
        let [oh, ow, _] = [self.out_shape[0], self.out_shape[1], self.out_shape[2]];
        let ys = Self::lerp_axis(h, oh);
        let xs = Self::lerp_axis(w, ow);
        let x = input.data();
        let mut out = vec![0.0; oh * ow * c];
        for (oy, &(y0, y1, ty)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, tx)) in xs.iter().enumerate() {
                let o = (oy * ow + ox) * c;
                let p00 = (y0 * w + x0) * c;
                let p01 = (y0 * w + x1) * c;
                let p10 = (y1 * w + x0) * c;
                let p11 = (y1 * w + x1) * c;
                let w00 = (1.0 - ty) * (1.0 - tx);
                let w01 = (1.0 - ty) * tx;
                let w10 = ty * (1.0 - tx);
                let w11 = ty * tx;
                for ch in 0..c {
                    out[o + ch] = w00 * x[p00 + ch] + w01 * x[p01 + ch] + w10 * x[p10 + ch] + w11 * x[p11 + ch];
                }
            }
        }
        Tensor::new(self.out_shape.clone(), out).expect("bilinear output volume")
    }

    fn bilinear_backward(&self, gpre: &[f64]) -> Tensor {
        let [h, w, c] = [self.in_shape[0], self.in_shape[1], self.in_shape[2]];
        let [oh, ow, _] = [self.out_shape[0], self.out_shape[1], self.out_shape[2]];
        let ys = Self::lerp_axis(h, oh);
        let xs = Self::lerp_axis(w, ow);
        let mut gin = vec![0.0; h * w * c];
        for (oy, &(y0, y1, ty)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, tx)) in xs.iter().enumerate() {
                let o = (oy * ow + ox) * c;
                let p00 = (y0 * w + x0) * c;
                let p01 = (y0 * w + x1) * c;
                let p10 = (y1 * w + x0) * c;
                let p11 = (y1 * w + x1) * c;
                let w00 = (1.0 - ty) * (1.0 - tx);
                let w01 = (1.0 - ty) * tx;
                let w10 = ty * (1.0 - tx);
                let w11 = ty * tx;
                for ch in 0..c {
                    let g = gpre[o + ch];
                    gin[p00 + ch] += w00 * g;
                    gin[p01 + ch] += w01 * g;
                    gin[p10 + ch] += w10 * g;
                    gin[p11 + ch] += w11 * g;
                }
            }
        }
        Tensor::new(self.in_shape.clone(), gin).expect("bilinear gin volume")
    }
}

fn init_limit(activation: Activation, fan_in: f64, fan_out: f64) -> f64 {
    match activation {
        Activation::Relu => (6.0 / fan_in).sqrt(),
        Activation::Linear | Activation::Sigmoid => (6.0 / (fan_in + fan_out)).sqrt(),
    }
}
