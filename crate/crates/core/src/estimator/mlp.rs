use nalgebra::{DMatrix, DMatrixView};
use rand::Rng;

use crate::error::{Error, Result};

/// A differentiable regressor usable as the estimator's backbone.
///
/// Batches are column-major: one column per sample. Parameters live in a
/// single flat buffer so optimizers and gradient checks can treat every
/// backbone alike.
pub trait Backbone: Clone {
    /// Intermediate values kept from a forward pass for the backward pass.
    type Trace;

    fn input_width(&self) -> usize;
    fn output_width(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    fn forward_trace(&self, inputs: &DMatrix<f64>) -> Result<(DMatrix<f64>, Self::Trace)>;

    /// Adds `∂L/∂θ` to `grads` given `∂L/∂outputs` for the traced batch.
    fn accumulate_gradients(
        &self,
        trace: &Self::Trace,
        grad_outputs: &DMatrix<f64>,
        grads: &mut [f64],
    ) -> Result<()>;

    fn forward(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.forward_trace(inputs)?.0)
    }
}

/// Fully connected network: rectifier hidden layers, logistic output.
///
/// Layer `k` stores its `out × in` weight matrix column-major followed by its
/// bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<f64>,
}

/// Per-layer inputs of a forward pass (the last entry is the network output).
#[derive(Debug, Clone)]
pub struct MlpTrace {
    activations: Vec<DMatrix<f64>>,
}

/// `W x + b` column by column, so each output column depends only on its
/// input column and batching never changes the arithmetic.
fn affine_columns(wdata: &[f64], bias: &[f64], x: &DMatrix<f64>) -> DMatrix<f64> {
    let (out, inw) = (bias.len(), x.nrows());
    let mut z = DMatrix::zeros(out, x.ncols());
    for (mut zc, xc) in z.column_iter_mut().zip(x.column_iter()) {
        let zc = zc.as_mut_slice();
        zc.copy_from_slice(bias);
        for i in 0..inw {
            let a = xc[i];
            for (zv, wv) in zc.iter_mut().zip(&wdata[i * out..(i + 1) * out]) {
                *zv += wv * a;
            }
        }
    }
    z
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Mlp {
    /// Zero-initialized network with layer widths `dims` (input first).
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::invalid(format!("invalid layer widths {dims:?}")));
        }
        let n = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self {
            dims: dims.to_vec(),
            params: vec![0.0; n],
        })
    }

    /// He-uniform hidden weights, Glorot-uniform output weights, zero biases.
    pub fn random<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        let mut mlp = Self::zeros(dims)?;
        let layers = mlp.num_layers();
        for k in 0..layers {
            let (fan_in, fan_out) = (dims[k], dims[k + 1]);
            let bound = if k + 1 == layers {
                (6.0 / (fan_in + fan_out) as f64).sqrt()
            } else {
                (6.0 / fan_in as f64).sqrt()
            };
            let (w, _) = mlp.layer_ranges(k);
            for p in &mut mlp.params[w] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(mlp)
    }

    /// Rebuilds a network from stored widths and parameters.
    pub fn from_parts(dims: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        let mlp = Self::zeros(&dims)?;
        if params.len() != mlp.params.len() {
            return Err(Error::shape(format!(
                "{} parameters for widths {dims:?} (expected {})",
                params.len(),
                mlp.params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numerical("non-finite network parameter".into()));
        }
        Ok(Self { dims, params })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    /// Parameter index ranges of layer `k`'s weights and biases.
    pub fn layer_ranges(&self, k: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let mut off = 0;
        for w in self.dims.windows(2).take(k) {
            off += w[0] * w[1] + w[1];
        }
        let (i, o) = (self.dims[k], self.dims[k + 1]);
        (off..off + i * o, off + i * o..off + i * o + o)
    }

    /// `out × in` weight matrix of layer `k`.
    pub fn weights(&self, k: usize) -> DMatrixView<'_, f64> {
        let (w, _) = self.layer_ranges(k);
        DMatrixView::from_slice(&self.params[w], self.dims[k + 1], self.dims[k])
    }

    pub fn bias(&self, k: usize) -> &[f64] {
        let (_, b) = self.layer_ranges(k);
        &self.params[b]
    }

    /// Folds an input affine normalization `x' = (x - shift) / scale` into the first layer.
    pub fn fold_input_normalization(&mut self, shift: &[f64], scale: &[f64]) -> Result<()> {
        let inw = self.dims[0];
        if shift.len() != inw || scale.len() != inw {
            return Err(Error::shape("normalization width must equal the input width"));
        }
        let out = self.dims[1];
        let (w, b) = self.layer_ranges(0);
        let (wslice, rest) = self.params.split_at_mut(w.end);
        let wslice = &mut wslice[w.start..];
        let bslice = &mut rest[..b.len()];
        for c in 0..inw {
            for r in 0..out {
                let v = wslice[c * out + r] / scale[c];
                wslice[c * out + r] = v;
                bslice[r] -= v * shift[c];
            }
        }
        Ok(())
    }
}

impl Backbone for Mlp {
    type Trace = MlpTrace;

    fn input_width(&self) -> usize {
        self.dims[0]
    }

    fn output_width(&self) -> usize {
        *self.dims.last().expect("at least two widths")
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward_trace(&self, inputs: &DMatrix<f64>) -> Result<(DMatrix<f64>, MlpTrace)> {
        if inputs.nrows() != self.dims[0] {
            return Err(Error::shape(format!(
                "feature width {} does not match model input width {}",
                inputs.nrows(),
                self.dims[0]
            )));
        }
        let layers = self.num_layers();
        let mut activations = Vec::with_capacity(layers + 1);
        activations.push(inputs.clone());
        for k in 0..layers {
            let mut z = affine_columns(&self.params[self.layer_ranges(k).0], self.bias(k), &activations[k]);
            let last = k + 1 == layers;
            z.apply(|v| *v = if last { logistic(*v) } else { v.max(0.0) });
            activations.push(z);
        }
        let out = activations.last().expect("output layer").clone();
        Ok((out, MlpTrace { activations }))
    }

    fn accumulate_gradients(&self, trace: &MlpTrace, grad_outputs: &DMatrix<f64>, grads: &mut [f64]) -> Result<()> {
        let layers = self.num_layers();
        let out = &trace.activations[layers];
        if grad_outputs.shape() != out.shape() {
            return Err(Error::shape("output gradient shape does not match the traced batch"));
        }
        if grads.len() != self.params.len() {
            return Err(Error::shape("gradient buffer must match parameter count"));
        }
        // through the logistic: σ' = σ(1 - σ)
        let mut delta = grad_outputs.zip_map(out, |g, y| g * y * (1.0 - y));
        for k in (0..layers).rev() {
            let input = &trace.activations[k];
            let (wr, br) = self.layer_ranges(k);
            let dw = &delta * input.transpose();
            for (g, d) in grads[wr].iter_mut().zip(dw.as_slice()) {
                *g += d;
            }
            for (r, g) in grads[br].iter_mut().enumerate() {
                *g += delta.row(r).sum();
            }
            if k > 0 {
                let mut back = self.weights(k).tr_mul(&delta);
                // rectifier derivative from the stored post-activation values
                back.zip_apply(input, |d, a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical("non-finite gradient".into()));
        }
        Ok(())
    }
}
