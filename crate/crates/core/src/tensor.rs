//! Image-shaped tensors and the elementwise primitives shared by every attack.
//!
//! An [`ImageTensor`] stores `channels × height × width` doubles in row-major
//! order. Images live in `[0, 1]`; gradients and perturbations reuse the same
//! type with unconstrained values.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(contract(format!("degenerate shape ({channels},{height},{width})")));
        }
        Ok(Self {
            channels,
            height,
            width,
        })
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{})", self.channels, self.height, self.width)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTensor {
    shape: Shape,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(contract(format!(
                "data length {} does not match shape {shape}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Value at `(c, h, w)`.
    pub fn at(&self, c: usize, h: usize, w: usize) -> f64 {
        self.data[(c * self.shape.height + h) * self.shape.width + w]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(contract(format!("shape mismatch: {} vs {}", self.shape, other.shape)));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|v| v * k)
    }

    /// `self + k * other`.
    pub fn axpy(&self, k: f64, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + k * b)
    }

    pub(crate) fn axpy_in_place(&mut self, k: f64, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
    }

    pub fn norm_l1(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn norm_l2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn linf_distance(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn clamp01(&self) -> Self {
        self.map(|v| v.clamp(0.0, 1.0))
    }
}

/// ℓ∞ radius in normalized pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Budget(f64);

impl Budget {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(contract(format!("epsilon {epsilon} outside [0, 1]")));
        }
        Ok(Self(epsilon))
    }

    /// `n / 255`, the usual way budgets are quoted.
    pub fn from_255(n: f64) -> Result<Self> {
        Self::new(n / 255.0)
    }

    pub fn epsilon(self) -> f64 {
        self.0
    }
}

/// Projects `x` onto the intersection of the ℓ∞ ball around `x_nat` and `[0,1]`.
pub fn project(x: &ImageTensor, x_nat: &ImageTensor, budget: Budget) -> Result<ImageTensor> {
    let eps = budget.epsilon();
    x.zip_map(x_nat, |v, n| v.max(n - eps).max(0.0).min(n + eps).min(1.0))
}

pub(crate) fn project_in_place(x: &mut ImageTensor, x_nat: &ImageTensor, eps: f64) {
    debug_assert_eq!(x.shape, x_nat.shape);
    for (v, &n) in x.data.iter_mut().zip(&x_nat.data) {
        *v = v.max(n - eps).max(0.0).min(n + eps).min(1.0);
    }
}

fn sign_scalar(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Componentwise sign with `sign(0) = 0`.
pub fn sign(g: &ImageTensor) -> ImageTensor {
    g.map(sign_scalar)
}

/// `g / ‖g‖₁`; an all-zero tensor is reported as [`Error::ZeroGradient`].
pub fn l1_normalize(g: &ImageTensor) -> Result<ImageTensor> {
    let n = g.norm_l1();
    if n == 0.0 {
        return Err(Error::ZeroGradient);
    }
    if !n.is_finite() {
        return Err(Error::NonFinite("l1 norm of gradient".into()));
    }
    Ok(g.scale(1.0 / n))
}

/// `x ← project(x − step · sign(direction))`, the sign-descent update used by
/// all iterative attacks.
pub(crate) fn sign_step_in_place(
    x: &mut ImageTensor,
    direction: &ImageTensor,
    step: f64,
    x_nat: &ImageTensor,
    eps: f64,
) {
    for ((v, &d), &n) in x.data.iter_mut().zip(&direction.data).zip(&x_nat.data) {
        let moved = *v - step * sign_scalar(d);
        *v = moved.max(n - eps).max(0.0).min(n + eps).min(1.0);
    }
}
