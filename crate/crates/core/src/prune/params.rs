use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::PruneError;

/// Sizes of every tensor in the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub n_max: usize,
    /// Embedding width.
    pub d: usize,
    /// GCN latent width.
    pub h: usize,
    /// Mask-MLP hidden width.
    pub h_m: usize,
}

impl NetShape {
    pub const DEFAULT_HIDDEN: usize = 64;
    pub const DEFAULT_MLP_HIDDEN: usize = 32;

    pub fn new(n_max: usize, d: usize) -> Self {
        Self { n_max, d, h: Self::DEFAULT_HIDDEN, h_m: Self::DEFAULT_MLP_HIDDEN }
    }

    pub fn with_hidden(mut self, h: usize, h_m: usize) -> Self {
        self.h = h;
        self.h_m = h_m;
        self
    }
}

pub const TENSOR_NAMES: [&str; 9] = [
    "w_root1", "w_gcn1", "w_root2", "w_gcn2", "b_edge", "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2",
];

/// Biases are exempt from weight decay.
pub const TENSOR_DECAYS: [bool; 9] = [true, true, true, true, true, true, false, true, false];

/// All trainable tensors. The GCN layers carry a root (self) weight next to the
/// neighbourhood weight, and have no biases.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneNetParams {
    pub shape: NetShape,
    /// `d x h`
    pub w_root1: Array2<f64>,
    /// `d x h`
    pub w_gcn1: Array2<f64>,
    /// `h x h`
    pub w_root2: Array2<f64>,
    /// `h x h`
    pub w_gcn2: Array2<f64>,
    /// `h x h` bilinear form of the edge head.
    pub b_edge: Array2<f64>,
    /// `h x h_m`
    pub mlp_w1: Array2<f64>,
    pub mlp_b1: Array1<f64>,
    pub mlp_w2: Array1<f64>,
    pub mlp_b2: Array1<f64>,
}

fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

impl PruneNetParams {
    pub fn zeros(shape: NetShape) -> Self {
        let NetShape { d, h, h_m, .. } = shape;
        Self {
            shape,
            w_root1: Array2::zeros((d, h)),
            w_gcn1: Array2::zeros((d, h)),
            w_root2: Array2::zeros((h, h)),
            w_gcn2: Array2::zeros((h, h)),
            b_edge: Array2::zeros((h, h)),
            mlp_w1: Array2::zeros((h, h_m)),
            mlp_b1: Array1::zeros(h_m),
            mlp_w2: Array1::zeros(h_m),
            mlp_b2: Array1::zeros(1),
        }
    }

    /// Glorot-uniform matrices, zero biases.
    pub fn init<R: Rng + ?Sized>(shape: NetShape, rng: &mut R) -> Self {
        let NetShape { d, h, h_m, .. } = shape;
        let w2 = glorot(h_m, 1, rng);
        Self {
            shape,
            w_root1: glorot(d, h, rng),
            w_gcn1: glorot(d, h, rng),
            w_root2: glorot(h, h, rng),
            w_gcn2: glorot(h, h, rng),
            b_edge: glorot(h, h, rng),
            mlp_w1: glorot(h, h_m, rng),
            mlp_b1: Array1::zeros(h_m),
            mlp_w2: w2.column(0).to_owned(),
            mlp_b2: Array1::zeros(1),
        }
    }

    pub fn mlp_b2(&self) -> f64 {
        self.mlp_b2[0]
    }

    pub fn tensors(&self) -> [&[f64]; 9] {
        [
            self.w_root1.as_slice().expect("standard layout"),
            self.w_gcn1.as_slice().expect("standard layout"),
            self.w_root2.as_slice().expect("standard layout"),
            self.w_gcn2.as_slice().expect("standard layout"),
            self.b_edge.as_slice().expect("standard layout"),
            self.mlp_w1.as_slice().expect("standard layout"),
            self.mlp_b1.as_slice().expect("standard layout"),
            self.mlp_w2.as_slice().expect("standard layout"),
            self.mlp_b2.as_slice().expect("standard layout"),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 9] {
        [
            self.w_root1.as_slice_mut().expect("standard layout"),
            self.w_gcn1.as_slice_mut().expect("standard layout"),
            self.w_root2.as_slice_mut().expect("standard layout"),
            self.w_gcn2.as_slice_mut().expect("standard layout"),
            self.b_edge.as_slice_mut().expect("standard layout"),
            self.mlp_w1.as_slice_mut().expect("standard layout"),
            self.mlp_b1.as_slice_mut().expect("standard layout"),
            self.mlp_w2.as_slice_mut().expect("standard layout"),
            self.mlp_b2.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn tensor_shapes(&self) -> [Vec<usize>; 9] {
        [
            self.w_root1.shape().to_vec(),
            self.w_gcn1.shape().to_vec(),
            self.w_root2.shape().to_vec(),
            self.w_gcn2.shape().to_vec(),
            self.b_edge.shape().to_vec(),
            self.mlp_w1.shape().to_vec(),
            self.mlp_b1.shape().to_vec(),
            self.mlp_w2.shape().to_vec(),
            self.mlp_b2.shape().to_vec(),
        ]
    }

    pub fn expected_shapes(shape: NetShape) -> [Vec<usize>; 9] {
        PruneNetParams::zeros(shape).tensor_shapes()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn validate(&self) -> Result<(), PruneError> {
        for ((name, got), want) in
            TENSOR_NAMES.iter().zip(self.tensor_shapes()).zip(Self::expected_shapes(self.shape))
        {
            if got != want {
                return Err(PruneError::Shape(format!("{name}: shape {got:?}, expected {want:?}")));
            }
        }
        for (name, t) in TENSOR_NAMES.iter().zip(self.tensors()) {
            if t.iter().any(|v| !v.is_finite()) {
                return Err(PruneError::Shape(format!("{name} has non-finite entries")));
            }
        }
        Ok(())
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Self, alpha: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (a, b) in dst.iter_mut().zip(src) {
                *a += alpha * b;
            }
        }
    }
}
