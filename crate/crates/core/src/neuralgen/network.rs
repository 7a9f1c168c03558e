//! The convolutional VAE: encoder ending in parallel mean / log-variance
//! heads, a mirrored decoder ending in sigmoid, the loss pieces, and exact
//! reverse-mode gradients of the batch-mean loss.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::layer::{Activation, Layer, LayerGrads, LayerKind, LayerSpec, Mode};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::geomodel::OneHotImage;
use crate::rng::rng_from_seed;

/// Clamp applied to decoder outputs inside the binary cross-entropy so the
/// logs stay finite; gradients are evaluated at the clamped value.
pub const BCE_EPS: f64 = 1e-7;

/// Channel widths of the desk-scale network. The full-size configuration
/// from the original architecture (32/32/16 kernels, 1024 dense, n_z = 100)
/// remains constructible by scaling these up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeskWidths {
    pub conv1: usize,
    pub conv2: usize,
    pub conv3: usize,
    pub dense: usize,
}

impl Default for DeskWidths {
    fn default() -> Self {
        DeskWidths {
            conv1: 16,
            conv2: 16,
            conv3: 8,
            dense: 256,
        }
    }
}

/// Encoder/decoder stacks plus the two latent heads.
#[derive(Debug, Clone)]
pub struct VaeNetwork {
    input_shape: [usize; 3], // [ny, nx, k]
    n_z: usize,
    pub(crate) encoder: Vec<Layer>,
    pub(crate) head_mu: Layer,
    pub(crate) head_logvar: Layer,
    pub(crate) decoder: Vec<Layer>,
    pub(crate) epochs_trained: u32,
}

impl VaeNetwork {
    /// Assemble and initialize a network from explicit layer stacks.
    ///
    /// The encoder must end in a flat shape (the heads are built here); the
    /// decoder must map `[n_z]` back to the input shape and end in sigmoid.
    /// All shape algebra is checked now, not at the first batch.
    pub fn new(
        input_shape: [usize; 3],
        encoder_specs: Vec<LayerSpec>,
        decoder_specs: Vec<LayerSpec>,
        n_z: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_z == 0 {
            return Err(Error::validation("latent dimension must be >= 1".to_string()));
        }
        let mut rng = rng_from_seed(seed);
        let mut shape: Vec<usize> = input_shape.to_vec();
        let mut encoder = Vec::with_capacity(encoder_specs.len());
        for spec in encoder_specs {
            let layer = Layer::new(spec, &shape, &mut rng)?;
            shape = layer.out_shape.clone();
            encoder.push(layer);
        }
        if shape.len() != 1 {
            return Err(Error::validation(format!(
                "encoder must end flat before the latent heads, got shape {shape:?}"
            )));
        }
        let head_mu = Layer::new(LayerSpec::dense(n_z, Activation::Linear), &shape, &mut rng)?;
        let head_logvar = Layer::new(LayerSpec::dense(n_z, Activation::Linear), &shape, &mut rng)?;

        let mut dec_shape = vec![n_z];
        let mut decoder = Vec::with_capacity(decoder_specs.len());
        for spec in decoder_specs {
            let layer = Layer::new(spec, &dec_shape, &mut rng)?;
            dec_shape = layer.out_shape.clone();
            decoder.push(layer);
        }
        if dec_shape != input_shape.to_vec() {
            return Err(Error::shape(
                "decoder output must reproduce the input image",
                &input_shape,
                &dec_shape,
            ));
        }
        match decoder.last() {
            Some(last) if last.spec.activation == Activation::Sigmoid => {}
            _ => {
                return Err(Error::validation(
                    "decoder must end in a sigmoid-activated layer".to_string(),
                ))
            }
        }
        Ok(VaeNetwork {
            input_shape,
            n_z,
            encoder,
            head_mu,
            head_logvar,
            decoder,
            epochs_trained: 0,
        })
    }

    /// Desk-scale preset: three strided/plain conv blocks (two when the grid
    /// is too small for the third), a dense bottleneck with 10% dropout,
    /// linear heads, and a mirrored transposed-conv decoder that bilinearly
    /// resizes to `(ny+2, nx+2)` before the final 3x3 sigmoid conv, so the
    /// output grid matches the input exactly under valid padding.
    pub fn desk(nx: usize, ny: usize, k: usize, n_z: usize, widths: DeskWidths, seed: u64) -> Result<Self> {
        if nx < 8 || ny < 8 {
            return Err(Error::validation(format!(
                "desk network needs at least an 8x8 grid, got {nx}x{ny}"
            )));
        }
        let relu = Activation::Relu;
        let h1 = (ny - 2) / 2 + 1;
        let w1 = (nx - 2) / 2 + 1;
        let use_third = h1 >= 3 && w1 >= 3 && (h1 - 3) / 2 + 1 >= 3 && (w1 - 3) / 2 + 1 >= 3;

        let mut enc = vec![LayerSpec::conv2d(widths.conv1, (2, 2), (2, 2), relu)];
        let (h2, w2);
        let (bh, bw, bc); // bottleneck feature-map shape
        if use_third {
            enc.push(LayerSpec::conv2d(widths.conv2, (3, 3), (2, 2), relu));
            h2 = (h1 - 3) / 2 + 1;
            w2 = (w1 - 3) / 2 + 1;
            enc.push(LayerSpec::conv2d(widths.conv3, (3, 3), (1, 1), relu));
            bh = h2 - 2;
            bw = w2 - 2;
            bc = widths.conv3;
        } else {
            enc.push(LayerSpec::conv2d(widths.conv2, (3, 3), (1, 1), relu));
            h2 = h1 - 2;
            w2 = w1 - 2;
            bh = h2;
            bw = w2;
            bc = widths.conv2;
        }
        enc.push(LayerSpec::flatten());
        enc.push(LayerSpec::dense(widths.dense, relu));
        enc.push(LayerSpec::dropout(0.1));

        let mut dec = vec![
            LayerSpec::dense(widths.dense, relu),
            LayerSpec::dropout(0.1),
            LayerSpec::dense(bh * bw * bc, relu),
            LayerSpec::reshape(bh, bw, bc),
        ];
        if use_third {
            dec.push(LayerSpec::transposed_conv2d(widths.conv2, (3, 3), (1, 1), relu));
            dec.push(LayerSpec::transposed_conv2d(widths.conv1, (3, 3), (2, 2), relu));
        } else {
            dec.push(LayerSpec::transposed_conv2d(widths.conv1, (3, 3), (2, 2), relu));
        }
        dec.push(LayerSpec::transposed_conv2d(widths.conv1, (2, 2), (2, 2), relu));
        dec.push(LayerSpec::bilinear_upsample(ny + 2, nx + 2));
        dec.push(LayerSpec::conv2d(k, (3, 3), (1, 1), Activation::Sigmoid));

        VaeNetwork::new([ny, nx, k], enc, dec, n_z, seed)
    }

    /// Number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.param_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn n_z(&self) -> usize {
        self.n_z
    }

    pub fn epochs_trained(&self) -> u32 {
        self.epochs_trained
    }

    pub fn encoder_layers(&self) -> &[Layer] {
        &self.encoder
    }

    pub fn decoder_layers(&self) -> &[Layer] {
        &self.decoder
    }

    pub fn latent_heads(&self) -> (&Layer, &Layer) {
        (&self.head_mu, &self.head_logvar)
    }

    /// Named parameter tensors in a stable order.
    pub fn param_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.encoder.iter().enumerate() {
            if let Some(p) = &l.params {
                out.push((format!("enc{i}.w"), &p.weight));
                out.push((format!("enc{i}.b"), &p.bias));
            }
        }
        for (name, l) in [("mu", &self.head_mu), ("logvar", &self.head_logvar)] {
            let p = l.params.as_ref().expect("head params");
            out.push((format!("{name}.w"), &p.weight));
            out.push((format!("{name}.b"), &p.bias));
        }
        for (i, l) in self.decoder.iter().enumerate() {
            if let Some(p) = &l.params {
                out.push((format!("dec{i}.w"), &p.weight));
                out.push((format!("dec{i}.b"), &p.bias));
            }
        }
        out
    }

    pub fn param_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.encoder.iter_mut().enumerate() {
            if let Some(p) = &mut l.params {
                out.push((format!("enc{i}.w"), &mut p.weight));
                out.push((format!("enc{i}.b"), &mut p.bias));
            }
        }
        for (name, l) in [("mu", &mut self.head_mu), ("logvar", &mut self.head_logvar)] {
            let p = l.params.as_mut().expect("head params");
            out.push((format!("{name}.w"), &mut p.weight));
            out.push((format!("{name}.b"), &mut p.bias));
        }
        for (i, l) in self.decoder.iter_mut().enumerate() {
            if let Some(p) = &mut l.params {
                out.push((format!("dec{i}.w"), &mut p.weight));
                out.push((format!("dec{i}.b"), &mut p.bias));
            }
        }
        out
    }

    fn image_tensor(&self, x: &OneHotImage) -> Result<Tensor> {
        let want = [x.ny(), x.nx(), x.k()];
        if want != self.input_shape {
            return Err(Error::shape("network input", &self.input_shape, &want));
        }
        Tensor::new(self.input_shape.to_vec(), x.values().to_vec())
    }

    /// Deterministic eval-mode encoding: mean and log-variance vectors.
    pub fn encode(&self, x: &OneHotImage) -> Result<(Tensor, Tensor)> {
        let mut act = self.image_tensor(x)?;
        for l in &self.encoder {
            act = l.forward(&act, Mode::Eval, None)?;
        }
        let mu = self.head_mu.forward(&act, Mode::Eval, None)?;
        let logvar = self.head_logvar.forward(&act, Mode::Eval, None)?;
        if !mu.all_finite() || !logvar.all_finite() {
            return Err(Error::numeric("encode produced non-finite latent moments".to_string()));
        }
        Ok((mu, logvar))
    }

    /// Deterministic eval-mode decoding to a soft channel image in (0,1).
    pub fn decode(&self, z: &[f64]) -> Result<OneHotImage> {
        if z.len() != self.n_z {
            return Err(Error::shape("decode input", &[self.n_z], &[z.len()]));
        }
        let mut act = Tensor::from_vec(z.to_vec());
        for l in &self.decoder {
            act = l.forward(&act, Mode::Eval, None)?;
        }
        if !act.all_finite() {
            return Err(Error::numeric("decode produced non-finite values".to_string()));
        }
        let [ny, nx, k] = self.input_shape;
        OneHotImage::from_values(nx, ny, k, act.into_data())
    }

    /// Draw train-mode dropout masks for one forward/backward pass.
    /// Entries are 0 or 1/(1-rate) (inverted dropout).
    pub fn sample_masks(&self, rng: &mut ChaCha8Rng) -> DropoutMasks {
        let draw = |layers: &[Layer], rng: &mut ChaCha8Rng| {
            layers
                .iter()
                .map(|l| match l.spec.kind {
                    LayerKind::Dropout { rate } => {
                        let keep = 1.0 - rate;
                        let n: usize = l.in_shape.iter().product();
                        Some(
                            (0..n)
                                .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                                .collect(),
                        )
                    }
                    _ => None,
                })
                .collect()
        };
        DropoutMasks {
            encoder: draw(&self.encoder, rng),
            decoder: draw(&self.decoder, rng),
        }
    }

    /// Train-mode loss of one sample under fixed `eps` and dropout masks.
    /// This is the exact function `backward` differentiates, kept separate
    /// so finite differences can probe it.
    pub fn sample_loss(
        &self,
        x: &OneHotImage,
        eps: &[f64],
        masks: &DropoutMasks,
        lambda: f64,
    ) -> Result<f64> {
        let (trace, xhat) = self.traced_forward(x, eps, masks)?;
        Ok(bce_loss(x, &xhat)? + lambda * kl_divergence(trace.mu.data(), trace.logvar.data())?)
    }

    fn traced_forward(
        &self,
        x: &OneHotImage,
        eps: &[f64],
        masks: &DropoutMasks,
    ) -> Result<(ForwardTrace, OneHotImage)> {
        if eps.len() != self.n_z {
            return Err(Error::shape("eps draw", &[self.n_z], &[eps.len()]));
        }
        let mut enc_acts = Vec::with_capacity(self.encoder.len() + 1);
        enc_acts.push(self.image_tensor(x)?);
        for (l, mask) in self.encoder.iter().zip(&masks.encoder) {
            let next = l.forward(enc_acts.last().unwrap(), Mode::Train, mask.as_deref())?;
            enc_acts.push(next);
        }
        let bottleneck = enc_acts.last().unwrap();
        let mu = self.head_mu.forward(bottleneck, Mode::Train, None)?;
        let logvar = self.head_logvar.forward(bottleneck, Mode::Train, None)?;
        let z = reparameterize(mu.data(), logvar.data(), eps)?;

        let mut dec_acts = Vec::with_capacity(self.decoder.len() + 1);
        dec_acts.push(Tensor::from_vec(z));
        for (l, mask) in self.decoder.iter().zip(&masks.decoder) {
            let next = l.forward(dec_acts.last().unwrap(), Mode::Train, mask.as_deref())?;
            dec_acts.push(next);
        }
        let out = dec_acts.last().unwrap().clone();
        let [ny, nx, k] = self.input_shape;
        let xhat = OneHotImage::from_values(nx, ny, k, out.into_data())?;
        Ok((
            ForwardTrace {
                enc_acts,
                mu,
                logvar,
                dec_acts,
            },
            xhat,
        ))
    }

    /// Exact reverse-mode gradients of the mean total loss over `batch`,
    /// treating the supplied eps draws as constants. Returns the mean loss
    /// and gradients shaped like the parameters. Errors name the first layer
    /// whose gradient goes non-finite.
    pub fn backward(&self, batch: &[BatchSample<'_>], lambda: f64) -> Result<(f64, NetworkGrads)> {
        if batch.is_empty() {
            return Err(Error::validation("backward needs a nonempty batch".to_string()));
        }
        let mut total = NetworkGrads::zeros_like(self);
        let mut loss_sum = 0.0;
        for sample in batch {
            let (trace, xhat) = self.traced_forward(sample.image, sample.eps, sample.masks)?;
            loss_sum += bce_loss(sample.image, &xhat)?
                + lambda * kl_divergence(trace.mu.data(), trace.logvar.data())?;
            self.accumulate_sample_grads(sample, &trace, &xhat, lambda, &mut total)?;
        }
        let scale = 1.0 / batch.len() as f64;
        total.scale(scale);
        let loss = loss_sum * scale;
        if !loss.is_finite() {
            return Err(Error::numeric("batch loss is non-finite".to_string()));
        }
        total.check_finite(self)?;
        Ok((loss, total))
    }

    fn accumulate_sample_grads(
        &self,
        sample: &BatchSample<'_>,
        trace: &ForwardTrace,
        xhat: &OneHotImage,
        lambda: f64,
        total: &mut NetworkGrads,
    ) -> Result<()> {
        let n = xhat.values().len() as f64;
        // d(BCE)/d(xhat), evaluated at the clamped prediction
        let gx: Vec<f64> = sample
            .image
            .values()
            .iter()
            .zip(xhat.values())
            .map(|(&x, &p)| {
                let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                (-x / p + (1.0 - x) / (1.0 - p)) / n
            })
            .collect();

        let [ny, nx, k] = self.input_shape;
        let mut g = Tensor::new(vec![ny, nx, k], gx).expect("bce grad volume");
        for (i, l) in self.decoder.iter().enumerate().rev() {
            let (gin, grads) = l.backward(
                &trace.dec_acts[i],
                &trace.dec_acts[i + 1],
                &g,
                sample.masks.decoder[i].as_deref(),
            );
            if let Some(gr) = grads {
                total.decoder[i].as_mut().expect("decoder grad slot").add(&gr);
            }
            g = gin;
        }
        // g now holds dL/dz
        let gz = g.data();
        let mu = trace.mu.data();
        let logvar = trace.logvar.data();
        let mut g_mu = vec![0.0; self.n_z];
        let mut g_lv = vec![0.0; self.n_z];
        for i in 0..self.n_z {
            let sigma = (0.5 * logvar[i]).exp();
            g_mu[i] = gz[i] + lambda * mu[i];
            g_lv[i] = gz[i] * 0.5 * sigma * sample.eps[i] + lambda * 0.5 * (logvar[i].exp() - 1.0);
        }

        let bottleneck = trace.enc_acts.last().unwrap();
        let (g_enc_mu, grads_mu) =
            self.head_mu
                .backward(bottleneck, &trace.mu, &Tensor::from_vec(g_mu), None);
        let (g_enc_lv, grads_lv) =
            self.head_logvar
                .backward(bottleneck, &trace.logvar, &Tensor::from_vec(g_lv), None);
        total.head_mu.add(&grads_mu.expect("mu head grads"));
        total.head_logvar.add(&grads_lv.expect("logvar head grads"));

        let mut g = g_enc_mu;
        for (a, &b) in g.data_mut().iter_mut().zip(g_enc_lv.data()) {
            *a += b;
        }
        for (i, l) in self.encoder.iter().enumerate().rev() {
            let (gin, grads) = l.backward(
                &trace.enc_acts[i],
                &trace.enc_acts[i + 1],
                &g,
                sample.masks.encoder[i].as_deref(),
            );
            if let Some(gr) = grads {
                total.encoder[i].as_mut().expect("encoder grad slot").add(&gr);
            }
            g = gin;
        }
        Ok(())
    }
}

/// One training sample: the hard image, its eps draw, and the dropout masks
/// fixed for this forward/backward pass.
pub struct BatchSample<'a> {
    pub image: &'a OneHotImage,
    pub eps: &'a [f64],
    pub masks: &'a DropoutMasks,
}

/// Per-layer dropout masks for one pass (None for non-dropout layers).
#[derive(Debug, Clone)]
pub struct DropoutMasks {
    pub encoder: Vec<Option<Vec<f64>>>,
    pub decoder: Vec<Option<Vec<f64>>>,
}

impl DropoutMasks {
    /// Identity masks: dropout layers pass values through unscaled.
    pub fn disabled(net: &VaeNetwork) -> Self {
        let ones = |layers: &[Layer]| {
            layers
                .iter()
                .map(|l| match l.spec.kind {
                    LayerKind::Dropout { .. } => Some(vec![1.0; l.in_shape.iter().product()]),
                    _ => None,
                })
                .collect()
        };
        DropoutMasks {
            encoder: ones(&net.encoder),
            decoder: ones(&net.decoder),
        }
    }
}

struct ForwardTrace {
    enc_acts: Vec<Tensor>,
    mu: Tensor,
    logvar: Tensor,
    dec_acts: Vec<Tensor>,
}

/// Gradients shaped like the network parameters.
pub struct NetworkGrads {
    pub encoder: Vec<Option<LayerGrads>>,
    pub head_mu: LayerGrads,
    pub head_logvar: LayerGrads,
    pub decoder: Vec<Option<LayerGrads>>,
}

impl LayerGrads {
    fn zeros_like_layer(l: &Layer) -> Option<LayerGrads> {
        l.params.as_ref().map(|p| LayerGrads {
            weight: Tensor::zeros(p.weight.shape().to_vec()),
            bias: Tensor::zeros(p.bias.shape().to_vec()),
        })
    }

    fn add(&mut self, other: &LayerGrads) {
        for (a, &b) in self.weight.data_mut().iter_mut().zip(other.weight.data()) {
            *a += b;
        }
        for (a, &b) in self.bias.data_mut().iter_mut().zip(other.bias.data()) {
            *a += b;
        }
    }

    fn scale(&mut self, s: f64) {
        for v in self.weight.data_mut() {
            *v *= s;
        }
        for v in self.bias.data_mut() {
            *v *= s;
        }
    }
}

impl NetworkGrads {
    pub fn zeros_like(net: &VaeNetwork) -> Self {
        NetworkGrads {
            encoder: net.encoder.iter().map(LayerGrads::zeros_like_layer).collect(),
            head_mu: LayerGrads::zeros_like_layer(&net.head_mu).expect("mu head has params"),
            head_logvar: LayerGrads::zeros_like_layer(&net.head_logvar).expect("logvar head has params"),
            decoder: net.decoder.iter().map(LayerGrads::zeros_like_layer).collect(),
        }
    }

    fn scale(&mut self, s: f64) {
        for g in self.encoder.iter_mut().flatten() {
            g.scale(s);
        }
        self.head_mu.scale(s);
        self.head_logvar.scale(s);
        for g in self.decoder.iter_mut().flatten() {
            g.scale(s);
        }
    }

    /// Gradient tensors in the same order as `VaeNetwork::param_tensors`.
    pub fn grad_tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for g in self.encoder.iter().flatten() {
            out.push(&g.weight);
            out.push(&g.bias);
        }
        out.push(&self.head_mu.weight);
        out.push(&self.head_mu.bias);
        out.push(&self.head_logvar.weight);
        out.push(&self.head_logvar.bias);
        for g in self.decoder.iter().flatten() {
            out.push(&g.weight);
            out.push(&g.bias);
        }
        out
    }

    fn check_finite(&self, net: &VaeNetwork) -> Result<()> {
        let check = |grads: &Option<LayerGrads>, name: String| -> Result<()> {
            if let Some(g) = grads {
                if !g.weight.all_finite() || !g.bias.all_finite() {
                    return Err(Error::numeric(format!("NaN gradient in layer {name}")));
                }
            }
            Ok(())
        };
        for (i, (g, l)) in self.encoder.iter().zip(&net.encoder).enumerate() {
            check(g, format!("encoder[{i}] {}", l.spec.kind_name()))?;
        }
        if !self.head_mu.weight.all_finite() || !self.head_mu.bias.all_finite() {
            return Err(Error::numeric("NaN gradient in layer head mu".to_string()));
        }
        if !self.head_logvar.weight.all_finite() || !self.head_logvar.bias.all_finite() {
            return Err(Error::numeric("NaN gradient in layer head logvar".to_string()));
        }
        for (i, (g, l)) in self.decoder.iter().zip(&net.decoder).enumerate() {
            check(g, format!("decoder[{i}] {}", l.spec.kind_name()))?;
        }
        Ok(())
    }
}

/// `z_i = mu_i + exp(logvar_i / 2) * eps_i`.
pub fn reparameterize(mu: &[f64], logvar: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != logvar.len() || mu.len() != eps.len() {
        return Err(Error::shape(
            "reparameterize lengths",
            &[mu.len()],
            &[logvar.len().min(eps.len())],
        ));
    }
    Ok(mu
        .iter()
        .zip(logvar)
        .zip(eps)
        .map(|((&m, &lv), &e)| m + (0.5 * lv).exp() * e)
        .collect())
}

/// Closed-form KL divergence from N(mu, diag(exp(logvar))) to N(0, I):
/// `0.5 * sum(mu^2 + sigma^2 - ln(sigma^2) - 1)`. Non-negative.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> Result<f64> {
    if mu.len() != logvar.len() {
        return Err(Error::shape("kl_divergence lengths", &[mu.len()], &[logvar.len()]));
    }
    Ok(0.5
        * mu.iter()
            .zip(logvar)
            .map(|(&m, &lv)| m * m + lv.exp() - lv - 1.0)
            .sum::<f64>())
}

/// Mean binary cross-entropy over all cell-channel entries, with the
/// prediction clamped to `[BCE_EPS, 1 - BCE_EPS]` before the logs.
pub fn bce_loss(x: &OneHotImage, xhat: &OneHotImage) -> Result<f64> {
    if (x.nx(), x.ny(), x.k()) != (xhat.nx(), xhat.ny(), xhat.k()) {
        return Err(Error::shape(
            "bce_loss shapes",
            &[x.ny(), x.nx(), x.k()],
            &[xhat.ny(), xhat.nx(), xhat.k()],
        ));
    }
    let n = x.values().len() as f64;
    let s: f64 = x
        .values()
        .iter()
        .zip(xhat.values())
        .map(|(&xi, &pi)| {
            let p = pi.clamp(BCE_EPS, 1.0 - BCE_EPS);
            xi * p.ln() + (1.0 - xi) * (1.0 - p).ln()
        })
        .sum();
    Ok(-s / n)
}

/// `bce + lambda * kl`.
pub fn total_loss(x: &OneHotImage, xhat: &OneHotImage, mu: &[f64], logvar: &[f64], lambda: f64) -> Result<f64> {
    Ok(bce_loss(x, xhat)? + lambda * kl_divergence(mu, logvar)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geomodel::{from_soft, to_one_hot, FaciesGrid};

    fn tiny_net(seed: u64) -> VaeNetwork {
        VaeNetwork::desk(8, 8, 2, 4, DeskWidths { conv1: 4, conv2: 4, conv3: 4, dense: 8 }, seed).unwrap()
    }

    fn image(seed: u64) -> OneHotImage {
        let g = crate::geomodel::generate_channel_realization(
            &crate::geomodel::ChannelGenParams::default(),
            8,
            8,
            seed,
        )
        .unwrap();
        to_one_hot(&g, 2).unwrap()
    }

    #[test]
    fn zeroed_network_encodes_to_zero_and_decodes_half() {
        let mut net = tiny_net(1);
        for (_, t) in net.param_tensors_mut() {
            t.data_mut().fill(0.0);
        }
        let x = image(3);
        let (mu, logvar) = net.encode(&x).unwrap();
        assert!(mu.data().iter().all(|&v| v == 0.0));
        assert!(logvar.data().iter().all(|&v| v == 0.0));
        let soft = net.decode(&vec![0.0; 4]).unwrap();
        assert!(soft.values().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn encode_decode_eval_mode_is_pure() {
        let net = tiny_net(2);
        let x = image(5);
        let (mu1, lv1) = net.encode(&x).unwrap();
        let (mu2, lv2) = net.encode(&x).unwrap();
        assert_eq!(mu1, mu2);
        assert_eq!(lv1, lv2);
        let d1 = net.decode(mu1.data()).unwrap();
        let d2 = net.decode(mu2.data()).unwrap();
        assert_eq!(d1, d2);
    }

    #[test]
    fn decode_stays_inside_unit_interval() {
        let net = tiny_net(3);
        for s in 0..5 {
            let z: Vec<f64> = (0..4).map(|i| ((s * 4 + i) as f64 * 0.7).sin() * 3.0).collect();
            let soft = net.decode(&z).unwrap();
            assert!(soft.values().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn reparameterize_matches_hand_values() {
        assert_eq!(reparameterize(&[1.0], &[4.0f64.ln()], &[2.0]).unwrap(), vec![5.0]);
        let mu = [0.3, -0.7];
        let z = reparameterize(&mu, &[0.0, 0.0], &[1.5, -0.5]).unwrap();
        assert_eq!(z, vec![0.3 + 1.5, -0.7 - 0.5]);
        assert_eq!(reparameterize(&mu, &[0.9, -0.3], &[0.0, 0.0]).unwrap(), mu.to_vec());
    }

    #[test]
    fn kl_matches_hand_values() {
        assert_eq!(kl_divergence(&[0.0], &[0.0]).unwrap(), 0.0);
        assert!((kl_divergence(&[1.0], &[0.0]).unwrap() - 0.5).abs() < 1e-12);
        let v = kl_divergence(&[0.0], &[4.0f64.ln()]).unwrap();
        assert!((v - 0.5 * (4.0 - 4.0f64.ln() - 1.0)).abs() < 1e-12);
        assert!((v - 0.806_852_819_440_054_7).abs() < 1e-9);
    }

    #[test]
    fn kl_is_nonnegative_and_zero_only_at_prior() {
        for s in 0..200 {
            let mut rng = rng_from_seed(s);
            let mu: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let lv: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect();
            assert!(kl_divergence(&mu, &lv).unwrap() >= 0.0);
        }
        assert_eq!(kl_divergence(&[0.0; 4], &[0.0; 4]).unwrap(), 0.0);
        assert!(kl_divergence(&[1e-3, 0.0], &[0.0, 0.0]).unwrap() > 0.0);
        assert!(kl_divergence(&[0.0, 0.0], &[1e-3, 0.0]).unwrap() > 0.0);
    }

    #[test]
    fn bce_matches_hand_values() {
        let one = |vals: Vec<f64>| OneHotImage::from_values(1, 1, 2, vals).unwrap();
        // x = [1, 0], xhat = [0.5, 0.5]: mean over 2 entries of -ln(0.5)
        let x = one(vec![1.0, 0.0]);
        let xhat = one(vec![0.5, 0.5]);
        assert!((bce_loss(&x, &xhat).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        // perfect reconstruction limit: clamped at 1 - eps
        let l = bce_loss(&x, &one(vec![1.0, 0.0])).unwrap();
        assert!((l - -(1.0 - BCE_EPS).ln()).abs() < 1e-15);
        assert!(l < 2e-7);
    }

    #[test]
    fn total_loss_is_affine_in_lambda_with_kl_slope() {
        let net = tiny_net(4);
        let x = image(6);
        let (mu, lv) = net.encode(&x).unwrap();
        let xhat = net.decode(mu.data()).unwrap();
        let kl = kl_divergence(mu.data(), lv.data()).unwrap();
        let l0 = total_loss(&x, &xhat, mu.data(), lv.data(), 0.0).unwrap();
        assert_eq!(l0, bce_loss(&x, &xhat).unwrap());
        for lam in [0.25, 1.0, 3.5] {
            let l = total_loss(&x, &xhat, mu.data(), lv.data(), lam).unwrap();
            assert!((l - (l0 + lam * kl)).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicated_batch_equals_single_sample_gradients() {
        let net = tiny_net(7);
        let x = image(8);
        let masks = DropoutMasks::disabled(&net);
        let eps = vec![0.3, -0.2, 0.9, 0.1];
        let single = [BatchSample { image: &x, eps: &eps, masks: &masks }];
        let double = [
            BatchSample { image: &x, eps: &eps, masks: &masks },
            BatchSample { image: &x, eps: &eps, masks: &masks },
        ];
        let (l1, g1) = net.backward(&single, 1.0).unwrap();
        let (l2, g2) = net.backward(&double, 1.0).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.grad_tensors().iter().zip(g2.grad_tensors()) {
            for (x1, x2) in a.data().iter().zip(b.data()) {
                assert!((x1 - x2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lambda_zero_kills_kl_path_head_gradients() {
        // with lambda = 0 and the decoder cut off from logvar only through
        // the eps term, a zero eps makes the logvar head gradient vanish
        let net = tiny_net(9);
        let x = image(10);
        let masks = DropoutMasks::disabled(&net);
        let eps = vec![0.0; 4];
        let (_, g) = net
            .backward(&[BatchSample { image: &x, eps: &eps, masks: &masks }], 0.0)
            .unwrap();
        assert!(g.head_logvar.weight.data().iter().all(|&v| v == 0.0));
        assert!(g.head_logvar.bias.data().iter().all(|&v| v == 0.0));
        // the mu head still feeds the reconstruction, so it must not vanish
        assert!(g.head_mu.weight.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn desk_shapes_reproduce_input_exactly() {
        for (nx, ny) in [(8, 8), (16, 16), (32, 32), (45, 45), (16, 32)] {
            let net = VaeNetwork::desk(nx, ny, 2, 6, DeskWidths::default(), 1)
                .unwrap_or_else(|e| panic!("desk({nx},{ny}): {e}"));
            assert_eq!(net.input_shape(), [ny, nx, 2]);
        }
    }

    #[test]
    fn batched_encode_equals_per_item() {
        let net = tiny_net(11);
        let xs = [image(1), image(2)];
        let singles: Vec<_> = xs.iter().map(|x| net.encode(x).unwrap()).collect();
        // encoding is per-sample by construction; stacking means mapping
        let stacked: Vec<_> = xs.iter().map(|x| net.encode(x).unwrap()).collect();
        for (a, b) in singles.iter().zip(&stacked) {
            assert_eq!(a.0, b.0);
            assert_eq!(a.1, b.1);
        }
    }

    use rand::Rng;
    use crate::rng::rng_from_seed;

    #[test]
    fn round_trip_soft_identity_on_trained_like_net() {
        // not a training test: just checks from_soft(decode(...)) wiring
        let net = tiny_net(12);
        let soft = net.decode(&[0.1, -0.2, 0.4, 0.0]).unwrap();
        let hard = from_soft(&soft).unwrap();
        assert_eq!(hard.nx(), 8);
        assert_eq!(hard.ny(), 8);
        let _ = FaciesGrid::new(8, 8, 2, hard.codes().to_vec()).unwrap();
    }
}
