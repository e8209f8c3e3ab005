//! Modality projection networks: two tanh layers followed by l2
//! normalization, with hand-derived backpropagation.

mod checkpoint;
mod optim;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use optim::{DecaySchedule, Sgd, SgdConfig};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Projections with a smaller l2 norm than this are rejected.
pub const MIN_OUTPUT_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub d_image: usize,
    pub d_text: usize,
    pub hidden: usize,
    /// Dimensionality of the shared subspace.
    pub embed: usize,
}

/// One projection network: `normalize(tanh(W2 tanh(W1 x + b1) + b2))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<F> {
    /// hidden x input
    pub w1: Array2<F>,
    pub b1: Array1<F>,
    /// embed x hidden
    pub w2: Array2<F>,
    pub b2: Array1<F>,
}

/// Parameter gradients, shaped like [`Network`].
pub type NetworkGrads<F> = Network<F>;

/// Activations retained by a forward pass over a batch of row vectors.
#[derive(Debug, Clone)]
pub struct ForwardPass<F> {
    input: Array2<F>,
    hidden: Array2<F>,
    /// tanh output before normalization.
    raw: Array2<F>,
    norms: Array1<F>,
    output: Array2<F>,
}

impl<F: Scalar> ForwardPass<F> {
    /// Unit-norm projections, one row per input.
    pub fn output(&self) -> &Array2<F> {
        &self.output
    }

    pub fn into_output(self) -> Array2<F> {
        self.output
    }

    /// Pre-normalization norms.
    pub fn norms(&self) -> &Array1<F> {
        &self.norms
    }

    pub fn len(&self) -> usize {
        self.output.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.output.nrows() == 0
    }
}

fn glorot<F: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<F> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || {
        F::from_f64_lossy(rng.random_range(-limit..=limit))
    })
}

impl<F: Scalar> Network<F> {
    pub fn zeros(input: usize, hidden: usize, embed: usize) -> Self {
        Self {
            w1: Array2::zeros((hidden, input)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((embed, hidden)),
            b2: Array1::zeros(embed),
        }
    }

    /// Uniform Glorot weights, zero biases.
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, embed: usize, rng: &mut R) -> Self {
        Self {
            w1: glorot(hidden, input, rng),
            b1: Array1::zeros(hidden),
            w2: glorot(embed, hidden, rng),
            b2: Array1::zeros(embed),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.nrows()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.hidden_dim(), self.output_dim())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.w1.dim() == other.w1.dim()
            && self.b1.dim() == other.b1.dim()
            && self.w2.dim() == other.w2.dim()
            && self.b2.dim() == other.b2.dim()
    }

    /// Flat views of `w1, b1, w2, b2` in that order (row-major).
    pub fn tensors(&self) -> [&[F]; 4] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [F]; 4] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn add_assign(&mut self, other: &Self) {
        self.w1 += &other.w1;
        self.b1 += &other.b1;
        self.w2 += &other.w2;
        self.b2 += &other.b2;
    }

    /// Forward a batch of inputs (one per row).
    ///
    /// Fails with [`Error::DegenerateProjection`] naming the first row whose
    /// pre-normalization output has norm below [`MIN_OUTPUT_NORM`].
    pub fn forward_batch(&self, x: ArrayView2<F>) -> Result<ForwardPass<F>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                actual: x.ncols(),
                context: "network input",
            });
        }
        let mut hidden = x.dot(&self.w1.t());
        hidden += &self.b1;
        hidden.mapv_inplace(F::tanh);
        let mut raw = hidden.dot(&self.w2.t());
        raw += &self.b2;
        raw.mapv_inplace(F::tanh);
        let norms: Array1<F> = raw.map_axis(Axis(1), |r| r.dot(&r).sqrt());
        let floor = F::from_f64_lossy(MIN_OUTPUT_NORM);
        if let Some(row) = norms.iter().position(|&n| !(n >= floor)) {
            return Err(Error::DegenerateProjection {
                context: format!("row {row}"),
                norm: norms[row].to_f64_lossy(),
            });
        }
        let mut output = raw.clone();
        Zip::from(output.rows_mut())
            .and(&norms)
            .for_each(|mut r, &n| r.mapv_inplace(|v| v / n));
        Ok(ForwardPass {
            input: x.to_owned(),
            hidden,
            raw,
            norms,
            output,
        })
    }

    /// Forward a single input vector.
    pub fn forward(&self, x: &[F]) -> Result<ForwardPass<F>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        self.forward_batch(view)
    }

    /// Project a single vector, returning the unit-norm output.
    pub fn project(&self, x: &[F]) -> Result<Array1<F>> {
        Ok(self.forward(x)?.output.row(0).to_owned())
    }

    fn check_pass(&self, pass: &ForwardPass<F>, upstream: &ArrayView2<F>) -> Result<()> {
        if pass.input.ncols() != self.input_dim() || pass.hidden.ncols() != self.hidden_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                actual: pass.input.ncols(),
                context: "cached activations do not belong to this network",
            });
        }
        if upstream.dim() != pass.output.dim() {
            return Err(Error::Shape {
                expected: pass.output.len(),
                actual: upstream.len(),
                context: "upstream gradient",
            });
        }
        Ok(())
    }

    /// Gradient at the pre-activation of the first layer, plus parameter grads.
    fn backward_inner(
        &self,
        pass: &ForwardPass<F>,
        upstream: ArrayView2<F>,
    ) -> Result<(NetworkGrads<F>, Array2<F>)> {
        self.check_pass(pass, &upstream)?;
        let one = F::one();
        // Through y / |y|: (I - yhat yhat^T) g / |y|.
        let mut g = upstream.to_owned();
        Zip::from(g.rows_mut())
            .and(pass.output.rows())
            .and(&pass.norms)
            .for_each(|mut g_row, y_hat, &n| {
                let along = g_row.dot(&y_hat);
                Zip::from(&mut g_row).and(&y_hat).for_each(|gv, &yv| {
                    *gv = (*gv - along * yv) / n;
                });
            });
        // Through the output tanh.
        Zip::from(&mut g).and(&pass.raw).for_each(|gv, &y| *gv = *gv * (one - y * y));
        let dw2 = g.t().dot(&pass.hidden);
        let db2 = g.sum_axis(Axis(0));
        let mut gh = g.dot(&self.w2);
        Zip::from(&mut gh).and(&pass.hidden).for_each(|gv, &h| *gv = *gv * (one - h * h));
        let dw1 = gh.t().dot(&pass.input);
        let db1 = gh.sum_axis(Axis(0));
        Ok((
            Network {
                w1: dw1,
                b1: db1,
                w2: dw2,
                b2: db2,
            },
            gh,
        ))
    }

    /// Parameter gradients and input gradient for a batch, given the gradient
    /// of the loss with respect to the normalized outputs.
    pub fn backward(
        &self,
        pass: &ForwardPass<F>,
        upstream: ArrayView2<F>,
    ) -> Result<(NetworkGrads<F>, Array2<F>)> {
        let (grads, gh) = self.backward_inner(pass, upstream)?;
        let gx = gh.dot(&self.w1);
        Ok((grads, gx))
    }

    /// Like [`Network::backward`] without the input gradient.
    pub fn backward_params(
        &self,
        pass: &ForwardPass<F>,
        upstream: ArrayView2<F>,
    ) -> Result<NetworkGrads<F>> {
        Ok(self.backward_inner(pass, upstream)?.0)
    }

    /// Single-vector convenience around [`Network::backward`].
    pub fn backward_vec(
        &self,
        pass: &ForwardPass<F>,
        upstream: ArrayView1<F>,
    ) -> Result<(NetworkGrads<F>, Array1<F>)> {
        let up = upstream.insert_axis(Axis(0));
        let (g, gx) = self.backward(pass, up)?;
        Ok((g, gx.row(0).to_owned()))
    }
}

/// Which of the two networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    Image,
    Text,
}

impl Modality {
    pub fn other(self) -> Self {
        match self {
            Modality::Image => Modality::Text,
            Modality::Text => Modality::Image,
        }
    }
}

/// The image and text projection networks.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionModel<F> {
    pub image: Network<F>,
    pub text: Network<F>,
}

/// Gradients for both networks.
pub type ModelGrads<F> = ProjectionModel<F>;

impl<F: Scalar> ProjectionModel<F> {
    /// Seeded initialization; image weights are drawn before text weights.
    pub fn init<R: Rng + ?Sized>(dims: Dims, rng: &mut R) -> Self {
        let image = Network::init(dims.d_image, dims.hidden, dims.embed, rng);
        let text = Network::init(dims.d_text, dims.hidden, dims.embed, rng);
        Self { image, text }
    }

    pub fn zeros(dims: Dims) -> Self {
        Self {
            image: Network::zeros(dims.d_image, dims.hidden, dims.embed),
            text: Network::zeros(dims.d_text, dims.hidden, dims.embed),
        }
    }

    pub fn dims(&self) -> Dims {
        Dims {
            d_image: self.image.input_dim(),
            d_text: self.text.input_dim(),
            hidden: self.image.hidden_dim(),
            embed: self.image.output_dim(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims())
    }

    pub fn network(&self, modality: Modality) -> &Network<F> {
        match modality {
            Modality::Image => &self.image,
            Modality::Text => &self.text,
        }
    }

    pub fn network_mut(&mut self, modality: Modality) -> &mut Network<F> {
        match modality {
            Modality::Image => &mut self.image,
            Modality::Text => &mut self.text,
        }
    }

    /// All eight tensors: image `w1, b1, w2, b2`, then text.
    pub fn tensors(&self) -> Vec<&[F]> {
        self.image.tensors().into_iter().chain(self.text.tensors()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        let Self { image, text } = self;
        image.tensors_mut().into_iter().chain(text.tensors_mut()).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.image.all_finite() && self.text.all_finite()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.image.same_shape(&other.image) && self.text.same_shape(&other.text)
    }

    pub fn add_assign(&mut self, other: &Self) {
        self.image.add_assign(&other.image);
        self.text.add_assign(&other.text);
    }

    /// Convert to another scalar type.
    pub fn cast<G: Scalar>(&self) -> ProjectionModel<G> {
        fn net<F: Scalar, G: Scalar>(n: &Network<F>) -> Network<G> {
            let c = |v: &F| G::from_f64_lossy(v.to_f64_lossy());
            Network {
                w1: n.w1.map(c),
                b1: n.b1.map(c),
                w2: n.w2.map(c),
                b2: n.b2.map(c),
            }
        }
        ProjectionModel {
            image: net(&self.image),
            text: net(&self.text),
        }
    }
}
