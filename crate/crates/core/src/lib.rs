//! Laboratory for scaling laws of transfer-based ensemble adversarial attacks.
//!
//! The crate builds a synthetic, fully differentiable model zoo, runs the
//! ensemble sign-gradient attacks (I-FGSM, MI-FGSM, MI-CWA, SSA-CWA and an
//! embedding-space variant) against it, fits `ASR = α ln T + C` across
//! ensemble sizes, and checks the asymptotic behaviour of ensemble minimizers
//! by Monte Carlo.

pub mod attacks;
pub mod cli;
pub mod dct;
pub mod error;
pub mod models;
pub mod rng;
pub mod scaling;
pub mod tensor;
pub mod theory;

pub use error::{Error, Result};
pub use tensor::{l1_normalize, project, sign, Budget, ImageTensor, Shape};
