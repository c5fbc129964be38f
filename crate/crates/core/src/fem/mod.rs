//! Q1 finite elements on the multidomain mesh.

pub mod assemble;
pub mod eigen;
pub mod element;
pub mod norms;
pub mod solve;
pub mod space;
pub mod sparse;

pub use assemble::{assemble_form, assemble_load, assemble_vector_form, Integrand, VectorForm};
pub use norms::Field;
pub use solve::{solve_linear, solve_linear_mean_zero, LinearMethod, LinearOptions, LinearSolution};
pub use space::{BlockMap, Space};
pub use sparse::{CsrMatrix, Triplets};
