use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::OutputLoss;
use crate::error::check_len;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
    Softmax,
}

impl Activation {
    fn apply(self, z: &mut [f64]) {
        match self {
            Activation::Tanh => z.iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Identity => {}
            Activation::Softmax => {
                let p = super::softmax(z);
                z.copy_from_slice(&p);
            }
        }
    }

    /// Maps dL/dy to dL/dz given the activation output `y`.
    fn chain(self, y: &[f64], dy: &[f64]) -> Vec<f64> {
        match self {
            Activation::Tanh => y.iter().zip(dy).map(|(y, d)| d * (1.0 - y * y)).collect(),
            Activation::Relu => y
                .iter()
                .zip(dy)
                .map(|(y, d)| if *y > 0.0 { *d } else { 0.0 })
                .collect(),
            Activation::Identity => dy.to_vec(),
            Activation::Softmax => {
                let inner = super::dot(y, dy);
                y.iter().zip(dy).map(|(y, d)| y * (d - inner)).collect()
            }
        }
    }
}

/// One affine map followed by an activation. Weights are row-major,
/// `output_dim` rows of `input_dim` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl Layer {
    pub fn new(
        input_dim: usize,
        output_dim: usize,
        activation: Activation,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        check_len("layer weights", input_dim * output_dim, weights.len())?;
        check_len("layer bias", output_dim, bias.len())?;
        Ok(Self {
            weights,
            bias,
            input_dim,
            output_dim,
            activation,
        })
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.bias.clone();
        for (o, zo) in z.iter_mut().enumerate() {
            let row = &self.weights[o * self.input_dim..(o + 1) * self.input_dim];
            *zo += super::dot(row, x);
        }
        z
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Shape of a single layer as stored in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

/// A feed-forward network of [`Layer`]s.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Per-parameter derivatives mirroring a [`DenseNet`], plus the loss value.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle {
    pub loss: f64,
    pub layers: Vec<LayerGrad>,
}

impl GradBundle {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            loss: 0.0,
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn accumulate(&mut self, other: &GradBundle) {
        self.loss += other.loss;
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights
                .iter_mut()
                .zip(&b.weights)
                .for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.loss *= factor;
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|x| *x *= factor);
            l.bias.iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// Gradient entries in the same order as [`DenseNet::params`].
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn l2_norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.loss.is_finite()
            && self
                .layers
                .iter()
                .all(|l| super::all_finite(&l.weights) && super::all_finite(&l.bias))
    }
}

impl DenseNet {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput(
                "network needs at least one layer".into(),
            ));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim != pair[1].input_dim {
                return Err(Error::InvalidInput(format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    pair[0].output_dim,
                    i + 1,
                    pair[1].input_dim
                )));
            }
        }
        let last = layers.len() - 1;
        for (i, layer) in layers.iter().enumerate() {
            check_len(
                "layer weights",
                layer.input_dim * layer.output_dim,
                layer.weights.len(),
            )?;
            check_len("layer bias", layer.output_dim, layer.bias.len())?;
            if layer.activation == Activation::Softmax && i != last {
                return Err(Error::InvalidInput(
                    "softmax is only allowed on the final layer".into(),
                ));
            }
            super::ensure_finite("network parameters", &layer.weights)?;
            super::ensure_finite("network parameters", &layer.bias)?;
        }
        Ok(Self { layers })
    }

    /// Glorot-uniform weights, zero biases. `sizes` lists every width from
    /// input to output; hidden layers use `hidden`, the last uses `output`.
    pub fn xavier<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidInput(format!("bad layer sizes {sizes:?}")));
        }
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for (i, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-limit..=limit))
                .collect();
            let activation = if i + 2 == sizes.len() { output } else { hidden };
            layers.push(Layer::new(
                fan_in,
                fan_out,
                activation,
                weights,
                vec![0.0; fan_out],
            )?);
        }
        Self::from_layers(layers)
    }

    /// Rebuilds a net from checkpoint shapes and a flat parameter array.
    pub fn from_shapes(shapes: &[LayerShape], params: &[f64]) -> Result<Self> {
        let expected: usize = shapes.iter().map(|s| s.input * s.output + s.output).sum();
        check_len("flat parameter array", expected, params.len())?;
        let mut offset = 0;
        let mut layers = Vec::with_capacity(shapes.len());
        for s in shapes {
            let nw = s.input * s.output;
            let weights = params[offset..offset + nw].to_vec();
            let bias = params[offset + nw..offset + nw + s.output].to_vec();
            offset += nw + s.output;
            layers.push(Layer::new(s.input, s.output, s.activation, weights, bias)?);
        }
        Self::from_layers(layers)
    }

    pub fn shapes(&self) -> Vec<LayerShape> {
        self.layers
            .iter()
            .map(|l| LayerShape {
                input: l.input_dim,
                output: l.output_dim,
                activation: l.activation,
            })
            .collect()
    }

    /// All parameters, layer by layer: row-major weights, then biases.
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_len("flat parameter array", self.param_count(), params.len())?;
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            l.weights
                .iter_mut()
                .chain(l.bias.iter_mut())
                .for_each(|p| *p = it.next().unwrap());
        }
        Ok(())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("network input", self.input_dim(), x.len())?;
        let mut a = x.to_vec();
        for layer in &self.layers {
            a = layer.affine(&a);
            layer.activation.apply(&mut a);
        }
        Ok(a)
    }

    /// Activations entering the output layer.
    pub fn hidden_forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("network input", self.input_dim(), x.len())?;
        let mut a = x.to_vec();
        for layer in &self.layers[..self.layers.len() - 1] {
            a = layer.affine(&a);
            layer.activation.apply(&mut a);
        }
        Ok(a)
    }

    /// Selected units of the output layer given its input `h`, computing
    /// only those rows. `None` when the output activation couples units.
    pub fn output_rows(&self, h: &[f64], rows: &[usize]) -> Option<Vec<f64>> {
        let last = self.layers.last().expect("nets have layers");
        if last.activation == Activation::Softmax {
            return None;
        }
        let mut z: Vec<f64> = rows
            .iter()
            .map(|&o| {
                let w = &last.weights[o * last.input_dim..(o + 1) * last.input_dim];
                last.bias[o] + super::dot(w, h)
            })
            .collect();
        last.activation.apply(&mut z);
        Some(z)
    }

    /// Activations entering each layer, followed by the final output.
    fn trace(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        check_len("network input", self.input_dim(), x.len())?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for layer in &self.layers {
            let mut z = layer.affine(acts.last().unwrap());
            layer.activation.apply(&mut z);
            acts.push(z);
        }
        Ok(acts)
    }

    /// Gradient of `loss(forward(x), target)` with respect to every parameter.
    pub fn backward(&self, loss: &dyn OutputLoss, x: &[f64], target: &[f64]) -> Result<GradBundle> {
        let acts = self.trace(x)?;
        let (value, mut upstream) = loss.evaluate(acts.last().unwrap(), target)?;
        check_len("loss gradient", self.output_dim(), upstream.len())?;
        let mut grads = GradBundle::zeros_like(self);
        grads.loss = value;
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let input = &acts[li];
            let dz = layer.activation.chain(&acts[li + 1], &upstream);
            let g = &mut grads.layers[li];
            for (o, dzo) in dz.iter().enumerate() {
                g.bias[o] = *dzo;
                let row = &mut g.weights[o * layer.input_dim..(o + 1) * layer.input_dim];
                row.iter_mut().zip(input).for_each(|(w, a)| *w = dzo * a);
            }
            if li > 0 {
                let mut down = vec![0.0; layer.input_dim];
                for (o, dzo) in dz.iter().enumerate() {
                    let row = &layer.weights[o * layer.input_dim..(o + 1) * layer.input_dim];
                    down.iter_mut().zip(row).for_each(|(d, w)| *d += dzo * w);
                }
                upstream = down;
            }
        }
        Ok(grads)
    }

    /// `params <- params - lr * grads`, with optional L2 clipping of the
    /// whole gradient first.
    pub fn sgd_step(&mut self, grads: &GradBundle, lr: f64, clip: Option<f64>) -> Result<()> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::InvalidInput(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::Shape {
                what: "gradient bundle layers",
                expected: self.layers.len(),
                got: grads.layers.len(),
            });
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
        let mut step = lr;
        if let Some(max_norm) = clip {
            let n = grads.l2_norm();
            if n > max_norm {
                step *= max_norm / n;
            }
        }
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            check_len("gradient weights", layer.weights.len(), g.weights.len())?;
            check_len("gradient bias", layer.bias.len(), g.bias.len())?;
            layer
                .weights
                .iter_mut()
                .zip(&g.weights)
                .for_each(|(w, d)| *w -= step * d);
            layer
                .bias
                .iter_mut()
                .zip(&g.bias)
                .for_each(|(b, d)| *b -= step * d);
        }
        Ok(())
    }

    /// One Adam update; `clip` rescales the raw gradient before the
    /// moment estimates see it.
    pub fn adam_step(
        &mut self,
        grads: &GradBundle,
        state: &mut AdamState,
        lr: f64,
        clip: Option<f64>,
    ) -> Result<()> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::InvalidInput(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        if grads.layers.len() != self.layers.len() || state.m.layers.len() != self.layers.len() {
            return Err(Error::Shape {
                what: "gradient bundle layers",
                expected: self.layers.len(),
                got: grads.layers.len(),
            });
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
        let mut factor = 1.0;
        if let Some(max_norm) = clip {
            let n = grads.l2_norm();
            if n > max_norm {
                factor = max_norm / n;
            }
        }
        state.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(state.t);
        let c2 = 1.0 - ADAM_BETA2.powi(state.t);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                let gi = factor * g[i];
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gi;
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gi * gi;
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
            }
        };
        for ((layer, g), (m, v)) in self
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(state.m.layers.iter_mut().zip(state.v.layers.iter_mut()))
        {
            check_len("gradient weights", layer.weights.len(), g.weights.len())?;
            check_len("gradient bias", layer.bias.len(), g.bias.len())?;
            check_len("adam moments", layer.weights.len(), m.weights.len())?;
            update(
                &mut layer.weights,
                &g.weights,
                &mut m.weights,
                &mut v.weights,
            );
            update(&mut layer.bias, &g.bias, &mut m.bias, &mut v.bias);
        }
        Ok(())
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Running moment estimates for [`DenseNet::adam_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: GradBundle,
    v: GradBundle,
    t: i32,
}

impl AdamState {
    pub fn new(net: &DenseNet) -> Self {
        Self {
            m: GradBundle::zeros_like(net),
            v: GradBundle::zeros_like(net),
            t: 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numcore::Mse;

    fn single(weights: Vec<f64>, bias: Vec<f64>, input: usize, output: usize) -> DenseNet {
        DenseNet::from_layers(vec![Layer::new(
            input,
            output,
            Activation::Identity,
            weights,
            bias,
        )
        .unwrap()])
        .unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = single(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], 2, 2);
        assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn row_sum_layer() {
        let net = single(vec![1.0, 1.0], vec![0.0], 2, 1);
        assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), vec![3.0]);
    }

    #[test]
    fn forward_rejects_wrong_input_length() {
        let net = single(vec![1.0, 1.0], vec![0.0], 2, 1);
        assert!(matches!(net.forward(&[1.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn two_layer_tanh_matches_desk_calculation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net =
            DenseNet::xavier(&[1, 1, 1], Activation::Tanh, Activation::Tanh, &mut rng).unwrap();
        net.layers_mut()[0].bias = vec![0.4];
        net.layers_mut()[1].bias = vec![-0.3];
        let w2 = net.layers()[1].weights[0];
        let expected = (-0.3 + w2 * 0.4f64.tanh()).tanh();
        assert_eq!(net.forward(&[0.0]).unwrap(), vec![expected]);
    }

    #[test]
    fn mse_gradient_of_single_weight() {
        let net = single(vec![1.0], vec![0.0], 1, 1);
        let g = net.backward(&Mse, &[1.0], &[0.0]).unwrap();
        assert_eq!(g.loss, 1.0);
        assert_eq!(g.layers[0].weights, vec![2.0]);
        assert_eq!(g.layers[0].bias, vec![2.0]);
    }

    #[test]
    fn gradients_vanish_at_the_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net =
            DenseNet::xavier(&[3, 5, 2], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let x = [0.2, -0.7, 1.1];
        let y = net.forward(&x).unwrap();
        let g = net.backward(&Mse, &x, &y).unwrap();
        assert_eq!(g.loss, 0.0);
        assert!(g.flat().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sgd_single_step_and_zero_gradient() {
        let mut net = single(vec![1.0], vec![0.0], 1, 1);
        let mut g = GradBundle::zeros_like(&net);
        let before = net.clone();
        net.sgd_step(&g, 0.1, None).unwrap();
        assert_eq!(net, before);
        g.layers[0].weights[0] = 2.0;
        net.sgd_step(&g, 0.1, None).unwrap();
        assert!((net.layers()[0].weights[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_rejects_non_finite_gradients_and_bad_rates() {
        let mut net = single(vec![1.0], vec![0.0], 1, 1);
        let mut g = GradBundle::zeros_like(&net);
        assert!(net.sgd_step(&g, 0.0, None).is_err());
        g.layers[0].bias[0] = f64::NAN;
        assert!(matches!(
            net.sgd_step(&g, 0.1, None),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn sgd_converges_on_convex_quadratic() {
        // minimize (w*1 + b - 3)^2 over w, b: every minimizer satisfies w + b = 3
        let mut net = single(vec![0.0], vec![0.0], 1, 1);
        for _ in 0..500 {
            let g = net.backward(&Mse, &[1.0], &[3.0]).unwrap();
            net.sgd_step(&g, 0.1, Some(5.0)).unwrap();
        }
        let out = net.forward(&[1.0]).unwrap()[0];
        assert!((out - 3.0).abs() < 1e-6);
    }

    #[test]
    fn clipping_bounds_the_step() {
        let mut net = single(vec![0.0], vec![0.0], 1, 1);
        let mut g = GradBundle::zeros_like(&net);
        g.layers[0].weights[0] = 30.0;
        g.layers[0].bias[0] = 40.0;
        net.sgd_step(&g, 1.0, Some(5.0)).unwrap();
        assert!((net.layers()[0].weights[0] + 3.0).abs() < 1e-12);
        assert!((net.layers()[0].bias[0] + 4.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_only_on_final_layer() {
        let l1 = Layer::new(1, 2, Activation::Softmax, vec![1.0, 1.0], vec![0.0, 0.0]).unwrap();
        let l2 = Layer::new(2, 1, Activation::Identity, vec![1.0, 1.0], vec![0.0]).unwrap();
        assert!(DenseNet::from_layers(vec![l1, l2]).is_err());
    }

    #[test]
    fn flat_params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net =
            DenseNet::xavier(&[2, 3, 4], Activation::Relu, Activation::Softmax, &mut rng).unwrap();
        let rebuilt = DenseNet::from_shapes(&net.shapes(), &net.params()).unwrap();
        assert_eq!(net, rebuilt);
    }
}
