//! Output-space kernels and their positive-definiteness self-checks.
//!
//! Every family here is symmetric, vanishes when either argument is the zero
//! vector, and obeys an exact scale law `k(t y, t y') = t^degree k(y, y')`.
//! All of them factor through a finite feature map `phi` with
//! `k(y, y') = <phi(y), phi(y')>`; the estimator engine exploits that to turn
//! quadratic-cost pairwise averages into linear-cost feature means, while
//! [`kernel_eval`] stays the direct pairwise definition.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Kernel selection as it appears in config files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kernel")]
pub enum KernelSpec {
    #[serde(rename = "l1")]
    L1,
    #[serde(rename = "l2")]
    L2,
    #[serde(rename = "lp")]
    Lp { p: f64 },
    #[serde(rename = "quadratic")]
    Quadratic,
    #[serde(rename = "owen")]
    Owen { p: f64 },
}

impl KernelSpec {
    /// Build the evaluator for this selection.
    pub fn build(&self) -> Result<Box<dyn Kernel>> {
        match self {
            KernelSpec::L1 => Ok(Box::new(L1Kernel)),
            KernelSpec::L2 => Ok(Box::new(L2Kernel)),
            KernelSpec::Lp { p } => {
                if *p < 1.0 || !p.is_finite() {
                    return Err(Error::InvalidParameter(format!("lp kernel needs p >= 1, got {p}")));
                }
                Ok(Box::new(LpKernel { p: *p }))
            }
            KernelSpec::Quadratic => Ok(Box::new(QuadraticKernel)),
            KernelSpec::Owen { p } => {
                if *p < 1.0 || !p.is_finite() {
                    return Err(Error::InvalidParameter(format!("owen kernel needs p >= 1, got {p}")));
                }
                Ok(Box::new(OwenKernel { p: *p }))
            }
        }
    }

    /// Parse a registry name (with optional parameter) such as "l1",
    /// "quadratic", "lp:3", "owen:2".
    pub fn from_name(name: &str) -> Result<KernelSpec> {
        let (head, param) = match name.split_once(':') {
            Some((h, p)) => (h, Some(p)),
            None => (name, None),
        };
        let parse_p = |raw: Option<&str>, default: f64| -> Result<f64> {
            match raw {
                None => Ok(default),
                Some(s) => s
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad kernel parameter {s:?} in {name:?}"))),
            }
        };
        match head {
            "l1" => Ok(KernelSpec::L1),
            "l2" => Ok(KernelSpec::L2),
            "lp" => Ok(KernelSpec::Lp { p: parse_p(param, 2.0)? }),
            "quadratic" => Ok(KernelSpec::Quadratic),
            "owen" => Ok(KernelSpec::Owen { p: parse_p(param, 2.0)? }),
            _ => Err(Error::Config(format!(
                "unknown kernel {name:?}; registered kernels: {}",
                registered_kernels().join(", ")
            ))),
        }
    }

    /// Registry name of this kernel family.
    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::L1 => "l1",
            KernelSpec::L2 => "l2",
            KernelSpec::Lp { .. } => "lp",
            KernelSpec::Quadratic => "quadratic",
            KernelSpec::Owen { .. } => "owen",
        }
    }
}

/// Names accepted by [`KernelSpec::from_name`] and the CLI `--kernel` flag.
pub fn registered_kernels() -> Vec<&'static str> {
    vec!["l1", "l2", "lp", "quadratic", "owen"]
}

/// A symmetric positive-definite kernel on output vectors with k(y, 0) = 0.
pub trait Kernel: Send + Sync {
    fn name(&self) -> &'static str;

    /// Homogeneity degree: k(t y, t y') = t^degree k(y, y') for t > 0.
    fn scale_degree(&self) -> f64;

    /// Length of the feature vector for outputs of dimension `n_out`.
    fn feature_len(&self, n_out: usize) -> usize;

    /// Fill `out` (of length `feature_len(y.len())`) with the feature map,
    /// so that the kernel is the inner product of two feature vectors.
    fn feature_into(&self, y: &[f64], out: &mut [f64]);

    /// Whether the family is defined for outputs of this dimension.
    fn supports_dim(&self, n_out: usize) -> bool {
        n_out >= 1
    }

    /// Direct pairwise evaluation.
    fn eval(&self, y: &[f64], y2: &[f64]) -> Result<f64>;
}

fn check_dims(k: &dyn Kernel, y: &[f64], y2: &[f64]) -> Result<()> {
    if y.len() != y2.len() {
        return Err(Error::DimensionMismatch { expected: y.len(), got: y2.len() });
    }
    if y.is_empty() || !k.supports_dim(y.len()) {
        return Err(Error::InvalidParameter(format!(
            "kernel {} does not support output dimension {}",
            k.name(),
            y.len()
        )));
    }
    Ok(())
}

fn norm1(y: &[f64]) -> f64 {
    y.iter().map(|v| v.abs()).sum()
}

fn norm2_sq(y: &[f64]) -> f64 {
    y.iter().map(|v| v * v).sum()
}

fn norm_p_pow(y: &[f64], p: f64) -> f64 {
    y.iter().map(|v| v.abs().powf(p)).sum()
}

/// Product of 1-norms: k(y, y') = |y|_1 |y'|_1.
pub struct L1Kernel;

impl Kernel for L1Kernel {
    fn name(&self) -> &'static str {
        "l1"
    }
    fn scale_degree(&self) -> f64 {
        2.0
    }
    fn feature_len(&self, _n_out: usize) -> usize {
        1
    }
    fn feature_into(&self, y: &[f64], out: &mut [f64]) {
        out[0] = norm1(y);
    }
    fn eval(&self, y: &[f64], y2: &[f64]) -> Result<f64> {
        check_dims(self, y, y2)?;
        Ok(norm1(y) * norm1(y2))
    }
}

/// Product of squared 2-norms: k(y, y') = |y|_2^2 |y'|_2^2.
pub struct L2Kernel;

impl Kernel for L2Kernel {
    fn name(&self) -> &'static str {
        "l2"
    }
    fn scale_degree(&self) -> f64 {
        4.0
    }
    fn feature_len(&self, _n_out: usize) -> usize {
        1
    }
    fn feature_into(&self, y: &[f64], out: &mut [f64]) {
        out[0] = norm2_sq(y);
    }
    fn eval(&self, y: &[f64], y2: &[f64]) -> Result<f64> {
        check_dims(self, y, y2)?;
        Ok(norm2_sq(y) * norm2_sq(y2))
    }
}

/// Product of p-th powers of p-norms: k(y, y') = |y|_p^p |y'|_p^p.
pub struct LpKernel {
    pub p: f64,
}

impl Kernel for LpKernel {
    fn name(&self) -> &'static str {
        "lp"
    }
    fn scale_degree(&self) -> f64 {
        2.0 * self.p
    }
    fn feature_len(&self, _n_out: usize) -> usize {
        1
    }
    fn feature_into(&self, y: &[f64], out: &mut [f64]) {
        out[0] = norm_p_pow(y, self.p);
    }
    fn eval(&self, y: &[f64], y2: &[f64]) -> Result<f64> {
        check_dims(self, y, y2)?;
        Ok(norm_p_pow(y, self.p) * norm_p_pow(y2, self.p))
    }
}

/// Squared inner product: k(y, y') = <y, y'>^2.
pub struct QuadraticKernel;

impl Kernel for QuadraticKernel {
    fn name(&self) -> &'static str {
        "quadratic"
    }
    fn scale_degree(&self) -> f64 {
        4.0
    }
    fn feature_len(&self, n_out: usize) -> usize {
        n_out * n_out
    }
    fn feature_into(&self, y: &[f64], out: &mut [f64]) {
        // Flattened outer product; <vec(y y^T), vec(y' y'^T)> = <y, y'>^2.
        let n = y.len();
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = y[i] * y[j];
            }
        }
    }
    fn eval(&self, y: &[f64], y2: &[f64]) -> Result<f64> {
        check_dims(self, y, y2)?;
        let dot: f64 = y.iter().zip(y2).map(|(a, b)| a * b).sum();
        Ok(dot * dot)
    }
}

/// Scalar-output family k(y, y') = |y|^{2p} |y'|^{2p}.
pub struct OwenKernel {
    pub p: f64,
}

impl Kernel for OwenKernel {
    fn name(&self) -> &'static str {
        "owen"
    }
    fn scale_degree(&self) -> f64 {
        4.0 * self.p
    }
    fn feature_len(&self, _n_out: usize) -> usize {
        1
    }
    fn feature_into(&self, y: &[f64], out: &mut [f64]) {
        out[0] = y[0].abs().powf(2.0 * self.p);
    }
    fn supports_dim(&self, n_out: usize) -> bool {
        n_out == 1
    }
    fn eval(&self, y: &[f64], y2: &[f64]) -> Result<f64> {
        check_dims(self, y, y2)?;
        Ok(y[0].abs().powf(2.0 * self.p) * y2[0].abs().powf(2.0 * self.p))
    }
}

/// Smallest eigenvalue of the Gram matrix [k(y_i, y_j)] over 2..=200 points.
pub fn gram_psd_check(kernel: &dyn Kernel, points: &[Vec<f64>]) -> Result<f64> {
    if points.len() < 2 || points.len() > 200 {
        return Err(Error::InvalidParameter(format!(
            "gram check takes 2..=200 points, got {}",
            points.len()
        )));
    }
    let n = points.len();
    let mut gram = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = kernel.eval(&points[i], &points[j])?;
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    let eigen = gram.symmetric_eigenvalues();
    Ok(eigen.iter().fold(f64::INFINITY, |a, b| a.min(*b)))
}
