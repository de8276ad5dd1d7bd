use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::matrix::{axpy, Matrix};
use super::{NnError, Parameters};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
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

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Affine map followed by an elementwise activation. `weight` is `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// A small fully connected network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Activations recorded by [`Mlp::forward`]: the input to each layer and the final output.
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn input(&self) -> &[f64] {
        &self.inputs[0]
    }
}

/// Gradients shaped like an [`Mlp`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrad {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGrad {
    pub fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            w.scale(s);
        }
        for b in &mut self.biases {
            b.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// `self += s * other`
    pub fn add_scaled(&mut self, s: f64, other: &MlpGrad) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.axpy(s, b);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            axpy(a, s, b);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| *v == 0.0))
    }
}

impl Parameters for MlpGrad {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.weights.len() * 2);
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.as_slice());
            out.push(b.as_slice());
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.weights.len() * 2);
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.as_mut_slice());
            out.push(b.as_mut_slice());
        }
        out
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases. `dims` lists every width from input to output.
    pub fn new<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        if dims.len() < 2 || dims.iter().any(|d| *d == 0) {
            return Err(NnError::Shape(format!("invalid layer widths {dims:?}")));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (dims[i], dims[i + 1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite bound");
                let data = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
                Layer {
                    weight: Matrix::from_vec(fan_out, fan_in, data).expect("sized"),
                    bias: vec![0.0; fan_out],
                    activation: if i + 1 == n { output } else { hidden },
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::Shape("an MLP needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(NnError::Shape(format!(
                    "layer {i}: bias length {} != output width {}",
                    l.bias.len(),
                    l.out_dim()
                )));
            }
            if i > 0 && layers[i - 1].out_dim() != l.in_dim() {
                return Err(NnError::Shape(format!(
                    "layer {i}: input width {} does not chain with previous output {}",
                    l.in_dim(),
                    layers[i - 1].out_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.in_dim()];
        d.extend(self.layers.iter().map(Layer::out_dim));
        d
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    pub fn zero_grad(&self) -> MlpGrad {
        MlpGrad {
            weights: self
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            biases: self.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect(),
        }
    }

    /// Sets every weight and bias to zero.
    pub fn zero_out(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    fn check_input(&self, input: &[f64]) -> Result<(), NnError> {
        if input.len() != self.in_dim() {
            return Err(NnError::Shape(format!(
                "input length {} != network input width {}",
                input.len(),
                self.in_dim()
            )));
        }
        Ok(())
    }

    /// Forward pass without recording activations.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        for layer in &self.layers {
            x = Self::layer_forward(layer, &x);
        }
        Ok(x)
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Tape), NnError> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        for layer in &self.layers {
            let y = Self::layer_forward(layer, &x);
            inputs.push(x);
            x = y;
        }
        let tape = Tape {
            inputs,
            output: x.clone(),
        };
        Ok((x, tape))
    }

    #[inline]
    fn layer_forward(layer: &Layer, x: &[f64]) -> Vec<f64> {
        let mut y = layer.weight.matvec(x);
        for (yi, bi) in y.iter_mut().zip(&layer.bias) {
            *yi = layer.activation.apply(*yi + bi);
        }
        y
    }

    /// Reverse pass for the scalar `upstream · output`. Returns parameter and input gradients.
    pub fn backward(&self, tape: &Tape, upstream: &[f64]) -> Result<(MlpGrad, Vec<f64>), NnError> {
        let mut grads = self.zero_grad();
        let input_grad = self.backward_into(tape, upstream, Some((&mut grads, 1.0)))?;
        Ok((grads, input_grad))
    }

    /// Reverse pass that accumulates `scale * ∂/∂θ` into `grads` when given and always returns
    /// the input gradient.
    pub fn backward_into(
        &self,
        tape: &Tape,
        upstream: &[f64],
        mut grads: Option<(&mut MlpGrad, f64)>,
    ) -> Result<Vec<f64>, NnError> {
        if upstream.len() != self.out_dim() {
            return Err(NnError::Shape(format!(
                "upstream gradient length {} != network output width {}",
                upstream.len(),
                self.out_dim()
            )));
        }
        if tape.inputs.len() != self.layers.len() {
            return Err(NnError::Shape("tape was recorded by a different network".into()));
        }
        let mut g = upstream.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let out = if i + 1 == self.layers.len() {
                &tape.output
            } else {
                &tape.inputs[i + 1]
            };
            // through the activation
            for (gi, yi) in g.iter_mut().zip(out) {
                *gi *= layer.activation.derivative_from_output(*yi);
            }
            if let Some((acc, s)) = grads.as_mut() {
                let s = *s;
                if s == 1.0 {
                    acc.weights[i].add_outer(&g, &tape.inputs[i]);
                    axpy(&mut acc.biases[i], 1.0, &g);
                } else {
                    let gs: Vec<f64> = g.iter().map(|v| v * s).collect();
                    acc.weights[i].add_outer(&gs, &tape.inputs[i]);
                    axpy(&mut acc.biases[i], 1.0, &gs);
                }
            }
            g = layer.weight.matvec_t(&g);
        }
        Ok(g)
    }
}

impl Parameters for Mlp {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &self.layers {
            out.push(l.weight.as_slice());
            out.push(l.bias.as_slice());
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &mut self.layers {
            out.push(l.weight.as_mut_slice());
            out.push(l.bias.as_mut_slice());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(weight: Matrix, bias: Vec<f64>, act: Activation) -> Mlp {
        Mlp::from_layers(vec![Layer {
            weight,
            bias,
            activation: act,
        }])
        .unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let m = single(Matrix::identity(2), vec![0.0; 2], Activation::Identity);
        assert_eq!(m.predict(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn relu_dead_zone_outputs_zero() {
        let m = single(Matrix::identity(3), vec![0.0; 3], Activation::Relu);
        assert_eq!(m.predict(&[-1.0, -0.5, -3.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn linear_input_gradient_is_w_transpose_g() {
        let w = Matrix::from_vec(2, 2, vec![2.0, 0.0, 0.0, 3.0]).unwrap();
        let m = single(w, vec![0.0; 2], Activation::Identity);
        let (_, tape) = m.forward(&[1.0, 1.0]).unwrap();
        let (_, gx) = m.backward(&tape, &[1.0, 1.0]).unwrap();
        assert_eq!(gx, vec![2.0, 3.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Mlp::new(&[4, 8, 3], Activation::Relu, Activation::Sigmoid, &mut rng).unwrap();
        let (_, tape) = m.forward(&[0.1, -0.2, 0.3, 0.9]).unwrap();
        let (g, gx) = m.backward(&tape, &[0.0; 3]).unwrap();
        assert!(g.is_zero());
        assert!(gx.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn shape_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Mlp::new(&[4, 8, 3], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        assert!(m.forward(&[1.0; 5]).is_err());
        let (_, tape) = m.forward(&[1.0; 4]).unwrap();
        assert!(m.backward(&tape, &[1.0; 2]).is_err());
        let bad = vec![
            Layer {
                weight: Matrix::zeros(3, 2),
                bias: vec![0.0; 3],
                activation: Activation::Relu,
            },
            Layer {
                weight: Matrix::zeros(1, 4),
                bias: vec![0.0; 1],
                activation: Activation::Identity,
            },
        ];
        assert!(Mlp::from_layers(bad).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let build = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            Mlp::new(&[6, 16, 16, 1], Activation::Relu, Activation::Identity, &mut rng).unwrap()
        };
        let x = [0.3, -0.1, 0.7, 0.0, 1.5, -2.0];
        let a = build().predict(&x).unwrap();
        let b = build().predict(&x).unwrap();
        assert_eq!(a[0].to_bits(), b[0].to_bits());
    }

    #[test]
    fn glorot_bounds_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Mlp::new(&[10, 30], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let limit = (6.0f64 / 40.0).sqrt();
        assert!(m.layers()[0].weight.as_slice().iter().all(|w| w.abs() <= limit));
        assert!(m.layers()[0].bias.iter().all(|b| *b == 0.0));
    }
}
