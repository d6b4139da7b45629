use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Dense layer `z = W a + b` with `W` of shape (out, in).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// Feed-forward network with tanh hidden layers and a linear output layer.
///
/// The same type doubles as the gradient container: a gradient is an `Mlp`
/// of identical shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Activations recorded by a batched forward pass (batch along columns).
#[derive(Debug, Clone)]
pub struct GradTape {
    activations: Vec<DMatrix<f64>>,
}

impl GradTape {
    pub fn input(&self) -> &DMatrix<f64> {
        &self.activations[0]
    }

    pub fn output(&self) -> &DMatrix<f64> {
        self.activations.last().expect("tape holds at least the input")
    }

    pub fn batch_size(&self) -> usize {
        self.activations[0].ncols()
    }
}

impl Mlp {
    /// Uniform `±1/√fan_in` initialization for weights and biases.
    pub fn new(sizes: &[usize], rng: &mut Rng) -> Result<Self> {
        Self::check_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .map(|s| {
                let bound = 1.0 / (s[0] as f64).sqrt();
                let mut draw = || rng.random_range(-bound..bound);
                let w = DMatrix::from_fn(s[1], s[0], |_, _| draw());
                let b = DVector::from_fn(s[1], |_, _| draw());
                Layer { w, b }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        Self::check_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .map(|s| Layer {
                w: DMatrix::zeros(s[1], s[0]),
                b: DVector::zeros(s[1]),
            })
            .collect();
        Ok(Self { layers })
    }

    fn check_sizes(sizes: &[usize]) -> Result<()> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "network needs at least two positive layer sizes, got {sizes:?}"
            )));
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    w: DMatrix::zeros(l.w.nrows(), l.w.ncols()),
                    b: DVector::zeros(l.b.len()),
                })
                .collect(),
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.w.nrows()));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").w.nrows()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }

    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut a = x.clone();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = &l.w * &a + &l.b;
            if i < last {
                z.apply(|v| *v = v.tanh());
            }
            a = z;
        }
        Ok(a)
    }

    /// Batched forward pass keeping the activations for `backward`.
    pub fn forward_tape(&self, x: &DMatrix<f64>) -> Result<GradTape> {
        if x.nrows() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: self.input_dim(),
                got: x.nrows(),
            });
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = &l.w * activations.last().expect("nonempty");
            for mut col in z.column_iter_mut() {
                col += &l.b;
            }
            if i < last {
                z.apply(|v| *v = v.tanh());
            }
            activations.push(z);
        }
        Ok(GradTape { activations })
    }

    /// Reverse pass: given `∂loss/∂output` for each batch column, returns
    /// parameter gradients summed over the batch and `∂loss/∂input`.
    pub fn backward(&self, tape: &GradTape, d_out: &DMatrix<f64>) -> (Mlp, DMatrix<f64>) {
        assert_eq!(d_out.shape(), tape.output().shape(), "output adjoint shape");
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = d_out.clone();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate().rev() {
            if i < last {
                let a = &tape.activations[i + 1];
                delta.zip_apply(a, |d, a| *d *= 1.0 - a * a);
            }
            let input = &tape.activations[i];
            let w = &delta * input.transpose();
            let b = delta.column_sum();
            let d_in = l.w.transpose() * &delta;
            grads.push(Layer { w, b });
            delta = d_in;
        }
        grads.reverse();
        (Mlp { layers: grads }, delta)
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, other: &Mlp, s: f64) {
        for (l, o) in self.layers.iter_mut().zip(&other.layers) {
            l.w.zip_apply(&o.w, |a, b| *a += s * b);
            l.b.zip_apply(&o.b, |a, b| *a += s * b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.w *= s;
            l.b *= s;
        }
    }

    /// `self ← τ self + (1-τ) source`.
    pub fn polyak(&mut self, source: &Mlp, tau: f64) {
        for (l, o) in self.layers.iter_mut().zip(&source.layers) {
            l.w.zip_apply(&o.w, |a, b| *a = tau * *a + (1.0 - tau) * b);
            l.b.zip_apply(&o.b, |a, b| *a = tau * *a + (1.0 - tau) * b);
        }
    }

    /// Parameters in layer order, each weight matrix column-major then its bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.w.as_slice());
            out.extend_from_slice(l.b.as_slice());
        }
        out
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::ShapeMismatch {
                expected: self.num_params(),
                got: values.len(),
            });
        }
        let mut k = 0;
        for l in &mut self.layers {
            let n = l.w.len();
            l.w.as_mut_slice().copy_from_slice(&values[k..k + n]);
            k += n;
            let n = l.b.len();
            l.b.as_mut_slice().copy_from_slice(&values[k..k + n]);
            k += n;
        }
        Ok(())
    }
}
