//! ReLU multilayer perceptrons exposing logits and penultimate features.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::rng::{Purpose, RngKey};
use crate::tensor::{Real, Tensor};

/// Architecture of a ReLU MLP: `input_dim → hidden_dims… → num_classes`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
}

impl ModelSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden_dims,
            num_classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dims.is_empty() {
            return Err(Error::InvalidArgument(
                "model needs at least one hidden layer".into(),
            ));
        }
        if self.input_dim == 0 || self.num_classes == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "all layer widths must be ≥ 1: {self:?}"
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of each affine layer in order.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in self.hidden_dims.iter().chain(std::iter::once(&self.num_classes)) {
            dims.push((prev, h));
            prev = h;
        }
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    pub fn feature_dim(&self) -> usize {
        *self.hidden_dims.last().expect("validated")
    }

    /// 784→(256,128)→10.
    pub fn mnist_default() -> Self {
        Self::new(784, vec![256, 128], 10).expect("valid")
    }

    /// 2→(64,64)→2.
    pub fn blobs_default() -> Self {
        Self::new(2, vec![64, 64], 2).expect("valid")
    }
}

impl std::fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.input_dim)?;
        for h in &self.hidden_dims {
            write!(f, "-{h}")?;
        }
        write!(f, "-{}", self.num_classes)
    }
}

/// Per-layer weight (`fan_in × fan_out`) and bias (`fan_out`).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T: Real = f64> {
    spec: ModelSpec,
    tensors: Vec<Tensor<T>>,
    names: Vec<String>,
}

fn param_names(layers: usize) -> Vec<String> {
    (0..layers)
        .flat_map(|i| [format!("layer{i}.weight"), format!("layer{i}.bias")])
        .collect()
}

impl<T: Real> ModelParams<T> {
    pub fn zeros(spec: &ModelSpec) -> Self {
        let tensors = spec
            .layer_dims()
            .into_iter()
            .flat_map(|(i, o)| [Tensor::zeros(vec![i, o]), Tensor::zeros(vec![o])])
            .collect();
        Self {
            spec: spec.clone(),
            names: param_names(spec.layer_dims().len()),
            tensors,
        }
    }

    /// He-style uniform weights `U(−√(6/fan_in), √(6/fan_in))`, zero biases.
    pub fn init(spec: &ModelSpec, seed: u64) -> Self {
        let mut params = Self::zeros(spec);
        let key = RngKey::new(seed, Purpose::ParamInit);
        for (layer, (fan_in, _)) in spec.layer_dims().into_iter().enumerate() {
            let bound = (6.0 / fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            let mut rng = key.stream(&[layer as u64]);
            for w in params.tensors[2 * layer].data_mut() {
                *w = T::from_f64_lossy(dist.sample(&mut rng));
            }
        }
        params
    }

    /// Rebuilds parameters from their flat view (layer order, weight then bias).
    pub fn from_flat(spec: &ModelSpec, flat: &[T]) -> Result<Self> {
        if flat.len() != spec.param_count() {
            return Err(Error::SpecMismatch(format!(
                "flat parameter vector of length {} for spec {spec} ({} params)",
                flat.len(),
                spec.param_count()
            )));
        }
        let mut params = Self::zeros(spec);
        let mut offset = 0;
        for t in &mut params.tensors {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(params)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn total_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn weight(&self, layer: usize) -> &Tensor<T> {
        &self.tensors[2 * layer]
    }

    pub fn bias(&self, layer: usize) -> &Tensor<T> {
        &self.tensors[2 * layer + 1]
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut Tensor<T> {
        &mut self.tensors[2 * layer]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut Tensor<T> {
        &mut self.tensors[2 * layer + 1]
    }

    /// `(name, tensor)` pairs for binding into a graph built by [`declare_params`].
    pub fn bindings(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.total_count());
        for t in &self.tensors {
            out.extend_from_slice(t.data());
        }
        out
    }

    pub fn values(&self) -> impl Iterator<Item = &T> {
        self.tensors.iter().flat_map(|t| t.data().iter())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.tensors.iter_mut().flat_map(|t| t.data_mut().iter_mut())
    }

    pub fn ensure_same_spec(&self, other: &ModelParams<T>) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::SpecMismatch(format!(
                "{} vs {}",
                self.spec, other.spec
            )));
        }
        Ok(())
    }

    /// In place `self ← a·self + b·other`, elementwise.
    pub fn combine(&mut self, a: T, other: &ModelParams<T>, b: T) -> Result<()> {
        self.ensure_same_spec(other)?;
        for (s, &o) in self.values_mut().zip(other.values()) {
            *s = a * *s + b * o;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            spec: self.spec.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            names: self.names.clone(),
        }
    }
}

/// Declares one weight and bias input per layer on `graph`.
pub fn declare_params<T: Real>(graph: &mut Graph<T>, spec: &ModelSpec) -> Vec<(NodeId, NodeId)> {
    let names = param_names(spec.layer_dims().len());
    names
        .chunks(2)
        .map(|pair| (graph.input(&pair[0]), graph.input(&pair[1])))
        .collect()
}

/// Appends the MLP to `graph` on input node `x`; returns `(logits, features)`
/// where features are the post-ReLU activations of the last hidden layer.
pub fn build_mlp<T: Real>(
    graph: &mut Graph<T>,
    x: NodeId,
    layers: &[(NodeId, NodeId)],
) -> (NodeId, NodeId) {
    let mut h = x;
    let mut features = x;
    for (i, &(w, b)) in layers.iter().enumerate() {
        let z = graph.matmul(h, w);
        let z = graph.add_bias(z, b);
        if i + 1 == layers.len() {
            return (z, features);
        }
        h = graph.relu(z);
        features = h;
    }
    unreachable!("at least one layer")
}

/// Forward pass returning `(logits B×C, features B×H)`.
pub fn model_forward<T: Real>(
    params: &ModelParams<T>,
    batch: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let spec = params.spec();
    if batch.shape().len() != 2 || batch.cols() != spec.input_dim {
        return Err(Error::SpecMismatch(format!(
            "batch of shape {:?} for model input width {}",
            batch.shape(),
            spec.input_dim
        )));
    }
    let mut g = Graph::new();
    let x = g.input("x");
    let layers = declare_params(&mut g, spec);
    let (logits, features) = build_mlp(&mut g, x, &layers);
    g.output("logits", logits);
    g.output("features", features);
    let mut out = g.forward(params.bindings().chain([("x", batch)]))?;
    Ok((
        out.remove("logits").expect("output"),
        out.remove("features").expect("output"),
    ))
}

/// Predicted class of every row.
pub fn predict<T: Real>(params: &ModelParams<T>, batch: &Tensor<T>) -> Result<Vec<usize>> {
    Ok(model_forward(params, batch)?.0.argmax_rows())
}

/// Draws a random vector inside `[lo, hi]` for tests and oracles.
pub fn random_uniform<T: Real, R: Rng>(rng: &mut R, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<T> {
    let dist = Uniform::new_inclusive(lo, hi).expect("valid range");
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64_lossy(dist.sample(rng))).collect();
    Tensor::new(shape, data).expect("sized")
}
