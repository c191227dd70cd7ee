//! Dense linear algebra, a feed-forward network with manual reverse-mode
//! gradients, and the Adam optimizer.

mod adam;
pub mod gradcheck;
mod linalg;
mod matrix;
mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use linalg::{singular_values, sym_matrix_sqrt, symmetric_eigen, SymmetricEigen};
pub use matrix::{axpy, dot, norm, Matrix};
pub use mlp::{Activation, Layer, MlpGradient, MlpParams, Tape};

/// A set of trainable buffers exposed as flat slices in a fixed order.
pub trait Parameters {
    fn slices(&self) -> Vec<&[f64]>;
    fn slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn scale_all(&mut self, s: f64) {
        for slice in self.slices_mut() {
            for v in slice.iter_mut() {
                *v *= s;
            }
        }
    }

    fn fill_zero(&mut self) {
        for slice in self.slices_mut() {
            slice.fill(0.0);
        }
    }
}
