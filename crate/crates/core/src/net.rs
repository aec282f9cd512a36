//! Sequential MLPs built from plain and noisy linear layers.
//!
//! A [`Network`] is a shared trunk followed by one or more heads; its output
//! is the concatenation of the head outputs. Noise is always an explicit
//! [`NetNoise`] argument, so forward and backward passes never touch a random
//! stream. Gradients come from ordinary reverse-mode differentiation of the
//! sampled (deterministic) network: with `w = μ + σ ⊙ ε`,
//! `∂L/∂μ = ∂L/∂w` and `∂L/∂σ = ∂L/∂w ⊙ ε`.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::math::{matvec_transposed, softmax, Matrix};
use crate::noisy::{LayerNoise, LinearLayer, NoiseKind, NoisyLinear};
use crate::rng::{RngStream, StreamId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
    /// Only allowed on the final layer of a head.
    Softmax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Plain(LinearLayer),
    Noisy(NoisyLinear),
}

impl Layer {
    pub fn inputs(&self) -> usize {
        match self {
            Layer::Plain(l) => l.inputs(),
            Layer::Noisy(l) => l.inputs(),
        }
    }

    pub fn outputs(&self) -> usize {
        match self {
            Layer::Plain(l) => l.outputs(),
            Layer::Noisy(l) => l.outputs(),
        }
    }

    pub fn as_noisy(&self) -> Option<&NoisyLinear> {
        match self {
            Layer::Noisy(l) => Some(l),
            Layer::Plain(_) => None,
        }
    }

    fn num_parameters(&self) -> usize {
        let (q, p) = (self.outputs(), self.inputs());
        match self {
            Layer::Plain(_) => q * p + q,
            Layer::Noisy(_) => 2 * (q * p + q),
        }
    }

    /// Parameter blocks in canonical order: `w, b` or `μʷ, σʷ, μᵇ, σᵇ`.
    fn blocks(&self) -> Vec<&[f64]> {
        match self {
            Layer::Plain(l) => vec![l.w.as_slice(), &l.b],
            Layer::Noisy(l) => vec![l.mu_w.as_slice(), l.sigma_w.as_slice(), &l.mu_b, &l.sigma_b],
        }
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::Plain(l) => vec![l.w.as_mut_slice(), &mut l.b],
            Layer::Noisy(l) => vec![
                l.mu_w.as_mut_slice(),
                l.sigma_w.as_mut_slice(),
                &mut l.mu_b,
                &mut l.sigma_b,
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub layer: Layer,
    pub activation: Activation,
}

/// Output head description used by [`Network::build`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeadSpec {
    pub outputs: usize,
    pub activation: Activation,
}

impl HeadSpec {
    pub fn linear(outputs: usize) -> Self {
        Self {
            outputs,
            activation: Activation::Identity,
        }
    }

    pub fn softmax(outputs: usize) -> Self {
        Self {
            outputs,
            activation: Activation::Softmax,
        }
    }
}

/// Which layers get noisy parameters, and how they are initialised.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// σ₀ for factorised layers (ignored for independent noise).
    pub sigma0: f64,
    /// Noisify the trunk as well as the heads.
    pub all_layers: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub trunk: Vec<Dense>,
    pub heads: Vec<Vec<Dense>>,
}

/// Where a [`NetNoise`] came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NoiseOrigin {
    pub stream: StreamId,
    pub sub: u32,
    pub ticket: u64,
}

/// One frozen draw of every noise variable of a network.
#[derive(Clone, Debug, PartialEq)]
pub struct NetNoise {
    /// One entry per layer in canonical order; `None` for plain layers.
    pub layers: Vec<Option<LayerNoise>>,
    /// `None` for synthetic (e.g. all-zero) noise.
    pub origin: Option<NoiseOrigin>,
}

impl NetNoise {
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }
}

/// Per-layer partial derivatives, mirroring the parameter blocks.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerGrad {
    Plain {
        w: Matrix,
        b: Vec<f64>,
    },
    Noisy {
        mu_w: Matrix,
        sigma_w: Matrix,
        mu_b: Vec<f64>,
        sigma_b: Vec<f64>,
    },
}

impl LayerGrad {
    fn zeros_like(layer: &Layer) -> Self {
        let (q, p) = (layer.outputs(), layer.inputs());
        match layer {
            Layer::Plain(_) => LayerGrad::Plain {
                w: Matrix::zeros(q, p),
                b: vec![0.0; q],
            },
            Layer::Noisy(_) => LayerGrad::Noisy {
                mu_w: Matrix::zeros(q, p),
                sigma_w: Matrix::zeros(q, p),
                mu_b: vec![0.0; q],
                sigma_b: vec![0.0; q],
            },
        }
    }

    pub fn blocks(&self) -> Vec<&[f64]> {
        match self {
            LayerGrad::Plain { w, b } => vec![w.as_slice(), b],
            LayerGrad::Noisy {
                mu_w,
                sigma_w,
                mu_b,
                sigma_b,
            } => {
                vec![mu_w.as_slice(), sigma_w.as_slice(), mu_b, sigma_b]
            }
        }
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            LayerGrad::Plain { w, b } => vec![w.as_mut_slice(), b],
            LayerGrad::Noisy {
                mu_w,
                sigma_w,
                mu_b,
                sigma_b,
            } => {
                vec![mu_w.as_mut_slice(), sigma_w.as_mut_slice(), mu_b, sigma_b]
            }
        }
    }
}

/// Gradients for every parameter block of a network.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerGrad>,
}

impl GradientSet {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net
                .layers()
                .map(|d| LayerGrad::zeros_like(&d.layer))
                .collect(),
        }
    }

    fn check_compatible(&self, other: &GradientSet) -> Result<()> {
        let same = self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                let (ab, bb) = (a.blocks(), b.blocks());
                ab.len() == bb.len() && ab.iter().zip(&bb).all(|(x, y)| x.len() == y.len())
            });
        if same {
            Ok(())
        } else {
            shape_err("gradient sets have different layouts")
        }
    }

    pub fn add_assign(&mut self, other: &GradientSet) -> Result<()> {
        self.check_compatible(other)?;
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.blocks_mut().into_iter().zip(b.blocks()) {
                for (xi, yi) in x.iter_mut().zip(y) {
                    *xi += yi;
                }
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.layers {
            for block in g.blocks_mut() {
                block.iter_mut().for_each(|v| *v *= factor);
            }
        }
    }

    /// Sums gradient sets left to right, starting from zeros.
    pub fn sum<'a>(
        net: &Network,
        parts: impl IntoIterator<Item = &'a GradientSet>,
    ) -> Result<Self> {
        let mut total = Self::zeros_like(net);
        for part in parts {
            total.add_assign(part)?;
        }
        Ok(total)
    }

    pub fn global_norm(&self) -> f64 {
        self.to_flat().iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// Rescales so that the global L2 norm is at most `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: f64) {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
    }

    /// Zeroes every σ block.
    pub fn discard_sigma(&mut self) {
        for g in &mut self.layers {
            if let LayerGrad::Noisy {
                sigma_w, sigma_b, ..
            } = g
            {
                sigma_w.as_mut_slice().fill(0.0);
                sigma_b.fill(0.0);
            }
        }
    }

    /// Flattened in the same order as [`Network::parameters`].
    pub fn to_flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|g| g.blocks().concat())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|g| g.blocks().iter().all(|b| b.iter().all(|v| v.is_finite())))
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|g| g.blocks().iter().all(|b| b.iter().all(|&v| v == 0.0)))
    }
}

/// Intermediate values recorded by [`SampledNet::forward_trace`].
#[derive(Clone, Debug)]
pub struct Trace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl Trace {
    /// Head pre-activations (logits for a softmax head), concatenated.
    pub fn head_preactivations(&self, net: &Network) -> Vec<f64> {
        let mut out = Vec::new();
        let mut idx = net.trunk.len();
        for head in &net.heads {
            idx += head.len();
            out.extend_from_slice(&self.pre[idx - 1]);
        }
        if net.heads.is_empty() {
            out.extend_from_slice(&self.pre[idx - 1]);
        }
        out
    }
}

/// A network with its noise fixed: every layer reduced to `w x + b`.
pub struct SampledNet<'a> {
    net: &'a Network,
    noise: &'a NetNoise,
    effective: Vec<Cow<'a, LinearLayer>>,
}

impl Network {
    /// Builds an MLP with ReLU hidden layers and the given heads.
    ///
    /// Layers are initialised in order (trunk, then heads) from `rng`.
    /// With `noise = Some(spec)` the heads, and the trunk if
    /// `spec.all_layers`, are noisy.
    pub fn build(
        input: usize,
        hidden: &[usize],
        heads: &[HeadSpec],
        noise: Option<NoiseSpec>,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if input == 0 || hidden.contains(&0) || heads.iter().any(|h| h.outputs == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        let make = |p: usize, q: usize, noisy: bool, rng: &mut RngStream| match (noisy, noise) {
            (true, Some(spec)) => {
                Layer::Noisy(NoisyLinear::init(p, q, spec.kind, spec.sigma0, rng))
            }
            _ => Layer::Plain(LinearLayer::init(p, q, rng)),
        };
        let trunk_noisy = noise.is_some_and(|s| s.all_layers);
        let mut trunk = Vec::new();
        let mut width = input;
        for &h in hidden {
            trunk.push(Dense {
                layer: make(width, h, trunk_noisy, rng),
                activation: Activation::Relu,
            });
            width = h;
        }
        let heads = heads
            .iter()
            .map(|spec| {
                vec![Dense {
                    layer: make(width, spec.outputs, true, rng),
                    activation: spec.activation,
                }]
            })
            .collect();
        let net = Self { trunk, heads };
        net.validate()?;
        Ok(net)
    }

    /// Checks that layer shapes compose and that softmax only ends a head.
    pub fn validate(&self) -> Result<()> {
        if self.trunk.is_empty() && self.heads.is_empty() {
            return shape_err("network has no layers");
        }
        let check_chain = |layers: &[Dense], mut width: Option<usize>| -> Result<Option<usize>> {
            for d in layers {
                if let Layer::Noisy(n) = &d.layer {
                    n.check_shapes()?;
                }
                if let Some(w) = width {
                    if d.layer.inputs() != w {
                        return shape_err(format!(
                            "layer expects {} inputs, got {w}",
                            d.layer.inputs()
                        ));
                    }
                }
                width = Some(d.layer.outputs());
            }
            Ok(width)
        };
        let trunk_out = check_chain(&self.trunk, None)?;
        let mut head_in = None;
        for head in &self.heads {
            if head.is_empty() {
                return shape_err("empty head");
            }
            check_chain(head, trunk_out)?;
            let first_in = head[0].layer.inputs();
            if *head_in.get_or_insert(first_in) != first_in {
                return shape_err("heads disagree on input width");
            }
        }
        let softmax_ok = |layers: &[Dense], terminal: bool| {
            layers.iter().enumerate().all(|(i, d)| {
                d.activation != Activation::Softmax || (terminal && i + 1 == layers.len())
            })
        };
        if !softmax_ok(&self.trunk, self.heads.is_empty())
            || !self.heads.iter().all(|h| softmax_ok(h, true))
        {
            return shape_err("softmax is only allowed at the end of an output head");
        }
        let softmax_count = self
            .layers()
            .filter(|d| d.activation == Activation::Softmax)
            .count();
        if softmax_count > 1 {
            return shape_err("at most one softmax head is allowed");
        }
        Ok(())
    }

    /// All layers in canonical order: trunk, then each head.
    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.trunk.iter().chain(self.heads.iter().flatten())
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.trunk.iter_mut().chain(self.heads.iter_mut().flatten())
    }

    pub fn input_dim(&self) -> usize {
        self.layers().next().map_or(0, |d| d.layer.inputs())
    }

    /// Widths of each head's output (or of the trunk if there are no heads).
    pub fn head_dims(&self) -> Vec<usize> {
        if self.heads.is_empty() {
            vec![self.trunk.last().map_or(0, |d| d.layer.outputs())]
        } else {
            self.heads
                .iter()
                .map(|h| h.last().unwrap().layer.outputs())
                .collect()
        }
    }

    pub fn output_dim(&self) -> usize {
        self.head_dims().iter().sum()
    }

    pub fn is_noisy(&self) -> bool {
        self.layers().any(|d| matches!(d.layer, Layer::Noisy(_)))
    }

    pub fn noisy_layers(&self) -> impl Iterator<Item = &NoisyLinear> {
        self.layers().filter_map(|d| d.layer.as_noisy())
    }

    pub fn num_parameters(&self) -> usize {
        self.layers().map(|d| d.layer.num_parameters()).sum()
    }

    /// Flattened parameters, layer by layer in canonical block order.
    pub fn parameters(&self) -> Vec<f64> {
        self.layers()
            .flat_map(|d| d.layer.blocks().concat())
            .collect()
    }

    pub fn set_parameters(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_parameters() {
            return shape_err(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_parameters()
            ));
        }
        let mut offset = 0;
        for d in self.layers_mut() {
            for block in d.layer.blocks_mut() {
                block.copy_from_slice(&flat[offset..offset + block.len()]);
                offset += block.len();
            }
        }
        Ok(())
    }

    /// Sets every σ entry to zero.
    pub fn zero_sigma(&mut self) {
        for d in self.layers_mut() {
            if let Layer::Noisy(l) = &mut d.layer {
                l.zero_sigma();
            }
        }
    }

    /// Converts plain layers to noisy ones with `μ = w` and constant σ.
    ///
    /// Only heads are converted unless `all_layers` is set.
    pub fn noisified(&self, kind: NoiseKind, sigma: f64, all_layers: bool) -> Self {
        let convert = |d: &Dense| match &d.layer {
            Layer::Plain(l) => Dense {
                layer: Layer::Noisy(NoisyLinear::from_plain(l, kind, sigma)),
                activation: d.activation,
            },
            Layer::Noisy(_) => d.clone(),
        };
        Self {
            trunk: self
                .trunk
                .iter()
                .map(|d| if all_layers { convert(d) } else { d.clone() })
                .collect(),
            heads: self
                .heads
                .iter()
                .map(|h| h.iter().map(convert).collect())
                .collect(),
        }
    }

    /// Draws one noise sample for every noisy layer, in canonical order.
    pub fn sample_noise(&self, rng: &mut RngStream) -> NetNoise {
        let layers = self
            .layers()
            .map(|d| d.layer.as_noisy().map(|l| l.sample_noise(rng)))
            .collect();
        let origin = NoiseOrigin {
            stream: rng.id(),
            sub: rng.sub(),
            ticket: rng.next_ticket(),
        };
        NetNoise {
            layers,
            origin: Some(origin),
        }
    }

    /// All-zero noise: the network evaluated at its means.
    pub fn zero_noise(&self) -> NetNoise {
        let layers = self
            .layers()
            .map(|d| {
                d.layer
                    .as_noisy()
                    .map(|l| LayerNoise::zeros(l.outputs(), l.inputs()))
            })
            .collect();
        NetNoise {
            layers,
            origin: None,
        }
    }

    /// Fixes `noise`, producing a deterministic network view.
    pub fn sampled<'a>(&'a self, noise: &'a NetNoise) -> Result<SampledNet<'a>> {
        let count = self.layers().count();
        if noise.layers.len() != count {
            return shape_err(format!(
                "noise for {} layers, network has {count}",
                noise.layers.len()
            ));
        }
        let effective = self
            .layers()
            .zip(&noise.layers)
            .map(|(d, n)| match (&d.layer, n) {
                (Layer::Plain(l), None) => Ok(Cow::Borrowed(l)),
                (Layer::Noisy(l), Some(n)) => Ok(Cow::Owned(l.effective(n)?)),
                _ => shape_err("noise entries do not match noisy layers"),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SampledNet {
            net: self,
            noise,
            effective,
        })
    }

    pub fn forward(&self, noise: &NetNoise, x: &[f64]) -> Result<Vec<f64>> {
        self.sampled(noise)?.forward(x)
    }

    /// Gradient of `upstream · output` with respect to every parameter.
    pub fn backward(&self, noise: &NetNoise, x: &[f64], upstream: &[f64]) -> Result<GradientSet> {
        let sampled = self.sampled(noise)?;
        let trace = sampled.forward_trace(x)?;
        sampled.backward(&trace, upstream)
    }
}

fn activate(act: Activation, z: &[f64]) -> Vec<f64> {
    match act {
        Activation::Relu => z.iter().map(|&v| v.max(0.0)).collect(),
        Activation::Identity => z.to_vec(),
        Activation::Softmax => softmax(z),
    }
}

fn activation_backward(act: Activation, pre: &[f64], post: &[f64], upstream: &[f64]) -> Vec<f64> {
    match act {
        Activation::Relu => pre
            .iter()
            .zip(upstream)
            .map(|(&z, &u)| if z > 0.0 { u } else { 0.0 })
            .collect(),
        Activation::Identity => upstream.to_vec(),
        Activation::Softmax => {
            let pu: f64 = post.iter().zip(upstream).map(|(p, u)| p * u).sum();
            post.iter()
                .zip(upstream)
                .map(|(p, u)| p * (u - pu))
                .collect()
        }
    }
}

impl<'a> SampledNet<'a> {
    pub fn network(&self) -> &'a Network {
        self.net
    }

    pub fn noise(&self) -> &'a NetNoise {
        self.noise
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(x)?.output)
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace> {
        if x.len() != self.net.input_dim() {
            return shape_err(format!(
                "input of length {}, network expects {}",
                x.len(),
                self.net.input_dim()
            ));
        }
        let n = self.effective.len();
        let mut trace = Trace {
            inputs: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
            post: Vec::with_capacity(n),
            output: Vec::new(),
        };
        let step =
            |idx: usize, act: Activation, h: Vec<f64>, trace: &mut Trace| -> Result<Vec<f64>> {
                let z = self.effective[idx].forward(&h)?;
                let a = activate(act, &z);
                trace.inputs.push(h);
                trace.pre.push(z);
                trace.post.push(a.clone());
                Ok(a)
            };
        let mut h = x.to_vec();
        let mut idx = 0;
        for d in &self.net.trunk {
            h = step(idx, d.activation, h, &mut trace)?;
            idx += 1;
        }
        if self.net.heads.is_empty() {
            trace.output = h;
            return Ok(trace);
        }
        let mut output = Vec::with_capacity(self.net.output_dim());
        for head in &self.net.heads {
            let mut g = h.clone();
            for d in head {
                g = step(idx, d.activation, g, &mut trace)?;
                idx += 1;
            }
            output.extend(g);
        }
        trace.output = output;
        Ok(trace)
    }

    /// Reverse pass with `upstream = ∂L/∂output`.
    pub fn backward(&self, trace: &Trace, upstream: &[f64]) -> Result<GradientSet> {
        self.backward_impl(trace, upstream, false)
    }

    /// Reverse pass with `upstream = ∂L/∂(head pre-activations)`.
    ///
    /// For softmax heads this takes the gradient with respect to the logits
    /// and skips the softmax Jacobian.
    pub fn backward_preactivation(&self, trace: &Trace, upstream: &[f64]) -> Result<GradientSet> {
        self.backward_impl(trace, upstream, true)
    }

    fn layer_grad(&self, idx: usize, dz: &[f64], input: &[f64]) -> LayerGrad {
        let dw = Matrix::outer(dz, input);
        match self.noise.layers[idx].as_ref() {
            None => LayerGrad::Plain {
                w: dw,
                b: dz.to_vec(),
            },
            Some(n) => LayerGrad::Noisy {
                sigma_w: dw
                    .hadamard(&n.eps_w)
                    .expect("noise shape checked in sampled()"),
                mu_w: dw,
                sigma_b: dz.iter().zip(&n.eps_b).map(|(d, e)| d * e).collect(),
                mu_b: dz.to_vec(),
            },
        }
    }

    fn backward_impl(
        &self,
        trace: &Trace,
        upstream: &[f64],
        from_preactivation: bool,
    ) -> Result<GradientSet> {
        if upstream.len() != self.net.output_dim() {
            return shape_err(format!(
                "upstream of length {}, network output has {}",
                upstream.len(),
                self.net.output_dim()
            ));
        }
        if trace.pre.len() != self.effective.len() {
            return shape_err("trace does not belong to this network");
        }
        let mut grads: Vec<Option<LayerGrad>> = vec![None; self.effective.len()];

        // Walks `layers` (global indices starting at `first`) backwards from `u`.
        let mut run_chain = |layers: &[Dense],
                             first: usize,
                             mut u: Vec<f64>,
                             skip_last_act: bool|
         -> Result<Vec<f64>> {
            for (k, d) in layers.iter().enumerate().rev() {
                let idx = first + k;
                let dz = if skip_last_act && k + 1 == layers.len() {
                    u
                } else {
                    activation_backward(d.activation, &trace.pre[idx], &trace.post[idx], &u)
                };
                grads[idx] = Some(self.layer_grad(idx, &dz, &trace.inputs[idx]));
                u = matvec_transposed(&self.effective[idx].w, &dz)?;
            }
            Ok(u)
        };

        let trunk_len = self.net.trunk.len();
        if self.net.heads.is_empty() {
            run_chain(&self.net.trunk, 0, upstream.to_vec(), from_preactivation)?;
        } else {
            let trunk_width = self.net.heads[0][0].layer.inputs();
            let mut trunk_upstream = vec![0.0; trunk_width];
            let mut offset = 0;
            let mut first = trunk_len;
            for head in &self.net.heads {
                let dim = head.last().unwrap().layer.outputs();
                let u = upstream[offset..offset + dim].to_vec();
                let down = run_chain(head, first, u, from_preactivation)?;
                for (t, v) in trunk_upstream.iter_mut().zip(&down) {
                    *t += v;
                }
                offset += dim;
                first += head.len();
            }
            run_chain(&self.net.trunk, 0, trunk_upstream, false)?;
        }
        Ok(GradientSet {
            layers: grads
                .into_iter()
                .map(|g| g.expect("every layer visited"))
                .collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noisy::NoiseKind;

    fn scalar_net(mu: f64, sigma: f64) -> Network {
        Network {
            trunk: vec![],
            heads: vec![vec![Dense {
                layer: Layer::Noisy(NoisyLinear {
                    mu_w: Matrix::filled(1, 1, mu),
                    sigma_w: Matrix::filled(1, 1, sigma),
                    mu_b: vec![0.0],
                    sigma_b: vec![0.0],
                    kind: NoiseKind::Independent,
                }),
                activation: Activation::Identity,
            }]],
        }
    }

    fn scalar_noise(eps: f64) -> NetNoise {
        NetNoise {
            layers: vec![Some(LayerNoise {
                eps_w: Matrix::filled(1, 1, eps),
                eps_b: vec![0.0],
                factors: None,
            })],
            origin: None,
        }
    }

    #[test]
    fn scalar_chain_rule() {
        let net = scalar_net(1.0, 0.5);
        let g = net.backward(&scalar_noise(2.0), &[3.0], &[1.0]).unwrap();
        match &g.layers[0] {
            LayerGrad::Noisy { mu_w, sigma_w, .. } => {
                assert_eq!(mu_w.get(0, 0), 3.0);
                assert_eq!(sigma_w.get(0, 0), 6.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = RngStream::new(0, StreamId::Init);
        let spec = NoiseSpec {
            kind: NoiseKind::Factorised,
            sigma0: 0.5,
            all_layers: true,
        };
        let net = Network::build(3, &[5], &[HeadSpec::linear(2)], Some(spec), &mut rng).unwrap();
        let noise = net.sample_noise(&mut RngStream::new(1, StreamId::OnlineNoise));
        let g = net.backward(&noise, &[0.1, 0.2, 0.3], &[0.0, 0.0]).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn relu_clips() {
        let net = Network {
            trunk: vec![Dense {
                layer: Layer::Plain(LinearLayer::new(Matrix::identity(1), vec![-1.0]).unwrap()),
                activation: Activation::Relu,
            }],
            heads: vec![],
        };
        assert_eq!(net.forward(&net.zero_noise(), &[0.5]).unwrap(), vec![0.0]);
    }

    #[test]
    fn forward_is_deterministic_and_leaves_streams_alone() {
        let mut rng = RngStream::new(3, StreamId::Init);
        let spec = NoiseSpec {
            kind: NoiseKind::Independent,
            sigma0: 0.5,
            all_layers: true,
        };
        let net = Network::build(4, &[6, 6], &[HeadSpec::linear(3)], Some(spec), &mut rng).unwrap();
        let mut stream = RngStream::new(3, StreamId::OnlineNoise);
        let noise = net.sample_noise(&mut stream);
        let before = stream.clone();
        let x = [0.5, -0.5, 1.0, 2.0];
        let a = net.forward(&noise, &x).unwrap();
        let b = net.forward(&noise, &x).unwrap();
        net.backward(&noise, &x, &[1.0, 0.0, -1.0]).unwrap();
        assert_eq!(a, b);
        let mut s1 = stream;
        let mut s2 = before;
        assert_eq!(
            crate::math::gaussian(&mut s1, 4),
            crate::math::gaussian(&mut s2, 4)
        );
    }

    #[test]
    fn zero_sigma_reduces_to_mean_network() {
        let mut rng = RngStream::new(5, StreamId::Init);
        let spec = NoiseSpec {
            kind: NoiseKind::Factorised,
            sigma0: 0.5,
            all_layers: false,
        };
        let mut net =
            Network::build(2, &[4], &[HeadSpec::linear(2)], Some(spec), &mut rng).unwrap();
        net.zero_sigma();
        let noise = net.sample_noise(&mut RngStream::new(5, StreamId::OnlineNoise));
        let x = [0.25, -1.5];
        assert_eq!(
            net.forward(&noise, &x).unwrap(),
            net.forward(&net.zero_noise(), &x).unwrap()
        );
    }

    #[test]
    fn plain_and_noisified_agree_at_zero_sigma() {
        let plain = Network::build(
            3,
            &[4],
            &[HeadSpec::linear(2)],
            None,
            &mut RngStream::new(1, StreamId::Init),
        )
        .unwrap();
        let noisy = plain.noisified(NoiseKind::Factorised, 0.0, true);
        let noise = noisy.sample_noise(&mut RngStream::new(2, StreamId::OnlineNoise));
        let x = [1.0, 2.0, -3.0];
        assert_eq!(
            plain.forward(&plain.zero_noise(), &x).unwrap(),
            noisy.forward(&noise, &x).unwrap()
        );
    }

    #[test]
    fn parameters_round_trip() {
        let mut rng = RngStream::new(9, StreamId::Init);
        let spec = NoiseSpec {
            kind: NoiseKind::Independent,
            sigma0: 0.5,
            all_layers: false,
        };
        let net = Network::build(
            2,
            &[3],
            &[HeadSpec::linear(1), HeadSpec::linear(2)],
            Some(spec),
            &mut rng,
        )
        .unwrap();
        let flat = net.parameters();
        assert_eq!(flat.len(), net.num_parameters());
        let mut other = net.clone();
        let shifted: Vec<f64> = flat.iter().map(|v| v + 1.0).collect();
        other.set_parameters(&shifted).unwrap();
        assert_eq!(other.parameters(), shifted);
        assert!(other.set_parameters(&flat[1..]).is_err());
    }

    #[test]
    fn validate_rejects_misplaced_softmax() {
        let mut rng = RngStream::new(9, StreamId::Init);
        let mut net = Network::build(
            2,
            &[3],
            &[HeadSpec::softmax(2), HeadSpec::linear(1)],
            None,
            &mut rng,
        )
        .unwrap();
        assert!(net.validate().is_ok());
        net.trunk[0].activation = Activation::Softmax;
        assert!(net.validate().is_err());
        let two = Network::build(
            2,
            &[3],
            &[HeadSpec::softmax(2), HeadSpec::softmax(2)],
            None,
            &mut rng,
        );
        assert!(two.is_err());
    }

    #[test]
    fn shape_errors() {
        let mut rng = RngStream::new(9, StreamId::Init);
        let net = Network::build(2, &[3], &[HeadSpec::linear(2)], None, &mut rng).unwrap();
        assert!(net.forward(&net.zero_noise(), &[1.0]).is_err());
        assert!(net
            .backward(&net.zero_noise(), &[1.0, 2.0], &[1.0])
            .is_err());
        let bad = NetNoise {
            layers: vec![None],
            origin: None,
        };
        assert!(net.forward(&bad, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn gradient_set_arithmetic() {
        let mut rng = RngStream::new(9, StreamId::Init);
        let spec = NoiseSpec {
            kind: NoiseKind::Factorised,
            sigma0: 0.5,
            all_layers: false,
        };
        let net = Network::build(2, &[3], &[HeadSpec::linear(2)], Some(spec), &mut rng).unwrap();
        let noise = net.sample_noise(&mut RngStream::new(1, StreamId::OnlineNoise));
        let g = net.backward(&noise, &[1.0, -1.0], &[1.0, 2.0]).unwrap();
        let total = GradientSet::sum(&net, [&g, &g]).unwrap();
        let mut doubled = g.clone();
        doubled.scale(2.0);
        assert_eq!(total, doubled);
        let mut clipped = g.clone();
        clipped.clip_global_norm(1e-3);
        assert!((clipped.global_norm() - 1e-3).abs() < 1e-12);
        let mut no_sigma = g.clone();
        no_sigma.discard_sigma();
        assert!(
            matches!(&no_sigma.layers[1], LayerGrad::Noisy { sigma_w, .. } if sigma_w.as_slice().iter().all(|&v| v == 0.0))
        );
        assert_eq!(g.to_flat().len(), net.num_parameters());
    }
}
