//! Orthonormal 2-D DCT-II and its inverse, applied per channel.
//!
//! Direct separable evaluation: `X = B_h · x · B_wᵀ` with
//! `B[k][n] = s_k cos(π (2n + 1) k / 2N)`, `s_0 = √(1/N)`, `s_k = √(2/N)`.
//! The basis is orthogonal, so the inverse is `x = B_hᵀ · X · B_w`.

use crate::tensor::{ImageTensor, Shape};

fn basis(n: usize) -> Vec<f64> {
    let mut b = vec![0.0; n * n];
    let nf = n as f64;
    for k in 0..n {
        let s = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        for i in 0..n {
            b[k * n + i] = s * (std::f64::consts::PI * (2.0 * i as f64 + 1.0) * k as f64 / (2.0 * nf)).cos();
        }
    }
    b
}

/// Precomputed bases for one tensor shape.
#[derive(Debug, Clone)]
pub struct DctPlan {
    shape: Shape,
    rows: Vec<f64>,
    cols: Vec<f64>,
}

impl DctPlan {
    pub fn new(shape: Shape) -> Self {
        Self {
            shape,
            rows: basis(shape.height),
            cols: basis(shape.width),
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn forward(&self, x: &ImageTensor) -> ImageTensor {
        self.apply(x, false)
    }

    pub fn inverse(&self, x: &ImageTensor) -> ImageTensor {
        self.apply(x, true)
    }

    fn apply(&self, x: &ImageTensor, inverse: bool) -> ImageTensor {
        assert_eq!(x.shape(), self.shape, "DCT plan shape mismatch");
        let (h, w) = (self.shape.height, self.shape.width);
        let src = x.as_slice();
        let mut out = vec![0.0; src.len()];
        let mut tmp = vec![0.0; h * w];
        for c in 0..self.shape.channels {
            let plane = &src[c * h * w..(c + 1) * h * w];
            // along width: tmp[r][k] = Σ_n plane[r][n] · B(k, n)
            for r in 0..h {
                let row = &plane[r * w..(r + 1) * w];
                for k in 0..w {
                    let mut acc = 0.0;
                    for (n, &v) in row.iter().enumerate() {
                        let b = if inverse {
                            self.cols[n * w + k]
                        } else {
                            self.cols[k * w + n]
                        };
                        acc += v * b;
                    }
                    tmp[r * w + k] = acc;
                }
            }
            // along height
            let dst = &mut out[c * h * w..(c + 1) * h * w];
            for k in 0..h {
                for col in 0..w {
                    let mut acc = 0.0;
                    for n in 0..h {
                        let b = if inverse {
                            self.rows[n * h + k]
                        } else {
                            self.rows[k * h + n]
                        };
                        acc += tmp[n * w + col] * b;
                    }
                    dst[k * w + col] = acc;
                }
            }
        }
        ImageTensor::from_vec(self.shape, out).expect("shape preserved")
    }
}

pub fn dct2(x: &ImageTensor) -> ImageTensor {
    DctPlan::new(x.shape()).forward(x)
}

pub fn idct2(x: &ImageTensor) -> ImageTensor {
    DctPlan::new(x.shape()).inverse(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn random_tensor(shape: Shape, seed: u64) -> ImageTensor {
        let mut r = RngStream::root(seed).rng();
        ImageTensor::from_vec(shape, (0..shape.len()).map(|_| r.uniform()).collect()).unwrap()
    }

    #[test]
    fn constant_image_has_only_dc() {
        let s = Shape::new(1, 8, 8).unwrap();
        let out = dct2(&ImageTensor::filled(s, 1.0));
        assert!((out.as_slice()[0] - 8.0).abs() < 1e-12);
        for &v in &out.as_slice()[1..] {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn round_trip_and_parseval() {
        let s = Shape::new(3, 16, 16).unwrap();
        let x = random_tensor(s, 4);
        let y = dct2(&x);
        let back = idct2(&y);
        assert!(back.linf_distance(&x) < 1e-10);
        assert!((y.norm_l2() - x.norm_l2()).abs() / x.norm_l2() < 1e-10);
    }

    #[test]
    fn non_square_round_trip() {
        let s = Shape::new(2, 5, 7).unwrap();
        let x = random_tensor(s, 9);
        assert!(idct2(&dct2(&x)).linf_distance(&x) < 1e-12);
    }

    /// Quadruple-sum DCT-II straight from the definition.
    fn naive_dct(x: &ImageTensor) -> Vec<f64> {
        let s = x.shape();
        let (h, w) = (s.height, s.width);
        let pi = std::f64::consts::PI;
        let scale = |k: usize, n: usize| {
            if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            }
        };
        let mut out = Vec::with_capacity(x.len());
        for c in 0..s.channels {
            for u in 0..h {
                for v in 0..w {
                    let mut acc = 0.0;
                    for i in 0..h {
                        for j in 0..w {
                            acc += x.at(c, i, j)
                                * (pi * (2 * i + 1) as f64 * u as f64 / (2 * h) as f64).cos()
                                * (pi * (2 * j + 1) as f64 * v as f64 / (2 * w) as f64).cos();
                        }
                    }
                    out.push(scale(u, h) * scale(v, w) * acc);
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_definition() {
        let x = random_tensor(Shape::new(1, 4, 4).unwrap(), 17);
        let fast = dct2(&x);
        for (a, b) in fast.as_slice().iter().zip(naive_dct(&x)) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn output_is_not_clamped() {
        let s = Shape::new(1, 4, 4).unwrap();
        let out = dct2(&ImageTensor::filled(s, 1.0));
        assert!(out.as_slice()[0] > 1.0);
    }
}
