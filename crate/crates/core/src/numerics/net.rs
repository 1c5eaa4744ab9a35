use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::init::orthogonal;
use crate::error::{ensure_dim, KirasError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the pre-activation `z`.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    z.exp()
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Linear => 1.0,
        }
    }
}

/// One affine layer. `weight` is stored `(out, in)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

/// Fully connected feed-forward network working in double precision.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

/// Intermediate values recorded by [`DenseNet::forward_cached`] and consumed
/// by [`DenseNet::backward`].
#[derive(Clone, Debug, Default)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, |x| x.nrows())
    }
}

/// Parameter gradients laid out exactly like the network parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            weights: net.layers.iter().map(|l| Array2::zeros(l.weight.raw_dim())).collect(),
            biases: net.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.weights.iter_mut().for_each(|w| *w *= factor);
        self.biases.iter_mut().for_each(|b| *b *= factor);
    }

    /// Slices in the same order as [`DenseNet::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.weights.len() * 2);
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.weights.len() * 2);
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.as_slice_mut().expect("standard layout"));
            out.push(b.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn is_zero(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|&x| x == 0.0))
            && self.biases.iter().all(|b| b.iter().all(|&x| x == 0.0))
    }
}

impl DenseNet {
    /// Orthogonally initialised network with zero biases. `output_gain`
    /// scales the last layer only.
    pub fn new<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        output_gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Self::check_dims(dims)?;
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let last = i + 1 == n;
                let gain = if last { output_gain } else { 1.0 };
                Layer {
                    weight: orthogonal(dims[i + 1], dims[i], gain, rng),
                    bias: Array1::zeros(dims[i + 1]),
                    activation: if last { output } else { hidden },
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn zeros(dims: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        Self::check_dims(dims)?;
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| Layer {
                weight: Array2::zeros((dims[i + 1], dims[i])),
                bias: Array1::zeros(dims[i + 1]),
                activation: if i + 1 == n { output } else { hidden },
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(KirasError::InvalidArgument("network needs at least one layer".into()));
        }
        for l in &layers {
            ensure_dim("layer bias", l.weight.nrows(), l.bias.len())?;
        }
        for pair in layers.windows(2) {
            ensure_dim("layer chain", pair[0].weight.nrows(), pair[1].weight.ncols())?;
        }
        Ok(Self { layers })
    }

    fn check_dims(dims: &[usize]) -> Result<()> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(KirasError::InvalidArgument(format!("bad layer dims {dims:?}")));
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
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.nrows()
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.weight.nrows()));
        dims
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|x| x.is_finite()))
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &mut self.layers {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &self.layers {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        out
    }

    /// All parameters in [`DenseNet::param_slices`] order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.param_slices().concat()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        ensure_dim("flat parameter vector", self.num_params(), flat.len())?;
        let mut offset = 0;
        for s in self.param_slices_mut() {
            let n = s.len();
            s.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn forward(&self, input: ArrayView1<f64>) -> Result<Array1<f64>> {
        let batch = input.insert_axis(Axis(0));
        let out = self.forward_batch(batch)?;
        Ok(out.row(0).to_owned())
    }

    /// Batched forward pass, one sample per row.
    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        ensure_dim("network input", self.input_dim(), input.ncols())?;
        let mut x = input.to_owned();
        for l in &self.layers {
            let mut z = x.dot(&l.weight.t());
            z += &l.bias;
            if l.activation != Activation::Linear {
                z.mapv_inplace(|v| l.activation.apply(v));
            }
            x = z;
        }
        Ok(x)
    }

    pub fn forward_cached(&self, input: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        ensure_dim("network input", self.input_dim(), input.ncols())?;
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre_activations: Vec::with_capacity(self.layers.len()),
        };
        let mut x = input.to_owned();
        for l in &self.layers {
            let mut z = x.dot(&l.weight.t());
            z += &l.bias;
            let a = z.mapv(|v| l.activation.apply(v));
            cache.inputs.push(x);
            cache.pre_activations.push(z);
            x = a;
        }
        Ok((x, cache))
    }

    /// Reverse-mode pass. Returns parameter gradients (summed over the batch)
    /// and the gradient with respect to the input rows.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: ArrayView2<f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        if cache.is_empty() {
            return Err(KirasError::NotCached("empty cache"));
        }
        if cache.inputs.len() != self.layers.len()
            || cache
                .inputs
                .iter()
                .zip(&self.layers)
                .any(|(x, l)| x.ncols() != l.weight.ncols())
        {
            return Err(KirasError::NotCached("cache was produced by a different network"));
        }
        ensure_dim("upstream batch", cache.batch_size(), upstream.nrows())?;
        ensure_dim("upstream width", self.output_dim(), upstream.ncols())?;

        let n = self.layers.len();
        let mut weights = Vec::with_capacity(n);
        let mut biases = Vec::with_capacity(n);
        let mut delta = upstream.to_owned();
        for i in (0..n).rev() {
            let l = &self.layers[i];
            if l.activation != Activation::Linear {
                let z = &cache.pre_activations[i];
                ndarray::Zip::from(&mut delta)
                    .and(z)
                    .for_each(|d, &zv| *d *= l.activation.derivative(zv));
            }
            weights.push(delta.t().dot(&cache.inputs[i]).as_standard_layout().into_owned());
            biases.push(delta.sum_axis(Axis(0)));
            delta = delta.dot(&l.weight);
        }
        weights.reverse();
        biases.reverse();
        Ok((Gradients { weights, biases }, delta))
    }

    /// Inserts zero-initialised input columns. `positions` index into the
    /// widened input and must be strictly increasing.
    pub fn insert_input_columns(&mut self, positions: &[usize]) -> Result<()> {
        let first = &mut self.layers[0];
        let old_in = first.weight.ncols();
        let new_in = old_in + positions.len();
        if positions.windows(2).any(|w| w[0] >= w[1]) || positions.iter().any(|&p| p >= new_in) {
            return Err(KirasError::InvalidArgument(format!(
                "bad insertion positions {positions:?} for width {old_in}"
            )));
        }
        let mut w = Array2::zeros((first.weight.nrows(), new_in));
        let mut src = 0;
        for dst in 0..new_in {
            if positions.binary_search(&dst).is_ok() {
                continue;
            }
            w.column_mut(dst).assign(&first.weight.column(src));
            src += 1;
        }
        first.weight = w;
        Ok(())
    }

    /// Inserts zero output rows into the last layer (weights and bias).
    pub fn insert_output_rows(&mut self, positions: &[usize]) -> Result<()> {
        let last = self.layers.last_mut().expect("non-empty");
        let old_out = last.weight.nrows();
        let new_out = old_out + positions.len();
        if positions.windows(2).any(|w| w[0] >= w[1]) || positions.iter().any(|&p| p >= new_out) {
            return Err(KirasError::InvalidArgument(format!(
                "bad insertion positions {positions:?} for width {old_out}"
            )));
        }
        let mut w = Array2::zeros((new_out, last.weight.ncols()));
        let mut b = Array1::zeros(new_out);
        let mut src = 0;
        for dst in 0..new_out {
            if positions.binary_search(&dst).is_ok() {
                continue;
            }
            w.row_mut(dst).assign(&last.weight.row(src));
            b[dst] = last.bias[src];
            src += 1;
        }
        last.weight = w;
        last.bias = b;
        Ok(())
    }

    /// Copy of the first layer restricted to a column range; used by tests
    /// that audit widened networks.
    pub fn first_layer_columns(&self, from: usize, to: usize) -> Array2<f64> {
        self.layers[0].weight.slice(s![.., from..to]).to_owned()
    }
}
