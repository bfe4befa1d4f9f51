use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nn::graph::{bind, Graph, Var};
use crate::nn::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Activation {
    Relu,
    LeakyRelu { slope: f64 },
    Tanh,
    None,
}

impl Activation {
    fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Relu => g.relu(x),
            Activation::LeakyRelu { slope } => g.leaky_relu(x, slope),
            Activation::Tanh => g.tanh(x),
            Activation::None => x,
        }
    }
}

/// How the last weight matrix is parameterized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalLayer {
    #[default]
    Free,
    /// Stored weights `V`, effective weights `W = −exp(V)`: every entry is
    /// strictly negative, so the marginal energy grows along rays.
    NegativeExp,
}

/// Layer sizes and activation choices for an MLP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub final_layer: FinalLayer,
    pub dropout: f64,
}

impl Architecture {
    pub fn mlp(input_dim: usize, hidden: &[usize], output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: hidden.to_vec(),
            output_dim,
            activation: Activation::Relu,
            final_layer: FinalLayer::Free,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(invalid("layer widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(invalid(format!("dropout rate {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `fan_in × fan_out`, applied as `x·W`.
    pub weight: Tensor,
    /// `1 × fan_out`.
    pub bias: Tensor,
    pub activation: Activation,
}

/// Serializable layout of a [`Network`] (everything except parameter values).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkLayout {
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub final_layer: FinalLayer,
    pub dropout: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    final_layer: FinalLayer,
    dropout: f64,
}

impl Network {
    /// Kaiming-uniform fan-in initialization.
    pub fn new<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let mut widths = vec![arch.input_dim];
        widths.extend(&arch.hidden);
        widths.push(arch.output_dim);
        let n = widths.len() - 1;
        let mut layers = Vec::with_capacity(n);
        for (i, w) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let last = i + 1 == n;
            let bound = (6.0 / fan_in as f64).sqrt();
            let wdist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            let weight: Vec<f64> = if last && arch.final_layer == FinalLayer::NegativeExp {
                // |W| ~ U(0.05·bound, bound) stored in log space
                let mdist = Uniform::new_inclusive(0.05 * bound, bound).expect("finite bound");
                (0..fan_in * fan_out).map(|_| mdist.sample(rng).ln()).collect()
            } else {
                (0..fan_in * fan_out).map(|_| wdist.sample(rng)).collect()
            };
            let bb = 1.0 / (fan_in as f64).sqrt();
            let bdist = Uniform::new_inclusive(-bb, bb).expect("finite bound");
            let bias: Vec<f64> = (0..fan_out).map(|_| bdist.sample(rng)).collect();
            layers.push(Layer {
                weight: Tensor::matrix(fan_in, fan_out, weight)?,
                bias: Tensor::matrix(1, fan_out, bias)?,
                activation: if last { Activation::None } else { arch.activation },
            });
        }
        Ok(Self { layers, final_layer: arch.final_layer, dropout: arch.dropout })
    }

    pub fn from_layers(layers: Vec<Layer>, final_layer: FinalLayer, dropout: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid("network needs at least one layer"));
        }
        for w in layers.windows(2) {
            if w[0].weight.cols() != w[1].weight.rows() {
                return Err(Error::Shape(format!(
                    "layer output width {} feeds input width {}",
                    w[0].weight.cols(),
                    w[1].weight.rows()
                )));
            }
        }
        for l in &layers {
            if l.bias.dims2() != (1, l.weight.cols()) {
                return Err(Error::Shape("bias width differs from layer width".into()));
            }
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(invalid(format!("dropout rate {dropout} outside [0, 1)")));
        }
        Ok(Self { layers, final_layer, dropout })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.cols())
    }

    /// Width of the last hidden layer, if there is one.
    pub fn penultimate_dim(&self) -> Option<usize> {
        (self.layers.len() > 1).then(|| self.layers[self.layers.len() - 2].weight.cols())
    }

    pub fn final_layer(&self) -> FinalLayer {
        self.final_layer
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn set_dropout(&mut self, rate: f64) -> Result<()> {
        if !(0.0..1.0).contains(&rate) {
            return Err(invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        self.dropout = rate;
        Ok(())
    }

    pub fn layout(&self) -> NetworkLayout {
        let mut widths = vec![self.input_dim()];
        widths.extend(self.layers.iter().map(|l| l.weight.cols()));
        NetworkLayout {
            widths,
            activations: self.layers.iter().map(|l| l.activation).collect(),
            final_layer: self.final_layer,
            dropout: self.dropout,
        }
    }

    /// Parameters in a fixed order: weight then bias for each layer.
    pub fn parameters(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    /// Final-layer weights as used in the forward pass.
    pub fn effective_final_weight(&self) -> Tensor {
        let w = &self.layers.last().expect("non-empty").weight;
        match self.final_layer {
            FinalLayer::Free => w.clone(),
            FinalLayer::NegativeExp => w.map(|v| -v.exp()),
        }
    }

    pub fn bind(&self, g: &mut Graph, requires_grad: bool) -> Vec<Var> {
        bind(g, &self.parameters(), requires_grad)
    }

    /// Records the forward pass on `g`. Dropout masks are drawn from
    /// `dropout_rng` when it is given and the rate is positive.
    pub fn forward_on(
        &self,
        g: &mut Graph,
        params: &[Var],
        x: Var,
        dropout_rng: Option<&mut dyn rand::RngCore>,
    ) -> Var {
        self.forward_until(g, params, x, dropout_rng, self.layers.len())
    }

    /// Output after the first `depth` layers (activation included).
    pub fn forward_until(
        &self,
        g: &mut Graph,
        params: &[Var],
        x: Var,
        mut dropout_rng: Option<&mut dyn rand::RngCore>,
        depth: usize,
    ) -> Var {
        assert_eq!(params.len(), 2 * self.layers.len(), "parameter list length");
        let n = self.layers.len();
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate().take(depth) {
            let mut w = params[2 * i];
            if i + 1 == n && self.final_layer == FinalLayer::NegativeExp {
                let e = g.exp(w);
                w = g.neg(e);
            }
            let z = g.matmul(h, w);
            let z = g.add_row(z, params[2 * i + 1]);
            h = layer.activation.apply(g, z);
            if i + 1 < n && self.dropout > 0.0 {
                if let Some(rng) = dropout_rng.as_deref_mut() {
                    h = apply_dropout(g, h, self.dropout, rng);
                }
            }
        }
        h
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        if batch.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch width {} but network input width {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Logits for each row of `batch`. Dropout is active only when
    /// `training` is set.
    pub fn forward<R: Rng>(&self, batch: &Tensor, training: bool, rng: &mut R) -> Result<Tensor> {
        self.check_batch(batch)?;
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let x = g.constant(batch.clone());
        let drop: Option<&mut dyn rand::RngCore> = if training { Some(rng) } else { None };
        let out = self.forward_on(&mut g, &p, x, drop);
        Ok(g.checked_value(out)?.clone())
    }

    /// Inference-mode logits.
    pub fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_batch(batch)?;
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let x = g.constant(batch.clone());
        let out = self.forward_on(&mut g, &p, x, None);
        Ok(g.checked_value(out)?.clone())
    }

    /// Activations of the last hidden layer.
    pub fn penultimate(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_batch(batch)?;
        if self.layers.len() < 2 {
            return Err(Error::Unsupported("network has no hidden layer".into()));
        }
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let x = g.constant(batch.clone());
        let out = self.forward_until(&mut g, &p, x, None, self.layers.len() - 1);
        Ok(g.checked_value(out)?.clone())
    }
}

/// Inverted dropout: zero with probability `rate`, scale survivors by `1/(1−rate)`.
pub(crate) fn apply_dropout(g: &mut Graph, h: Var, rate: f64, rng: &mut dyn rand::RngCore) -> Var {
    let (r, c) = g.value(h).dims2();
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..r * c)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let m = g.constant(Tensor::raw(r, c, mask));
    g.mul(h, m)
}
