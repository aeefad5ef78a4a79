//! Time derivatives: exact propagation through the network and estimation
//! from sampled trajectories.
//!
//! The identification stages need high-order derivatives of the measured
//! nodes at the start of each experiment. Two routes produce them:
//!
//! * [`propagate`] expands every node's trajectory as a truncated Taylor
//!   series directly from the vector field. This is exact (up to rounding)
//!   and is used both for building regression designs and, in tests, as an
//!   oracle for the estimators.
//! * [`fit_start_derivatives`] estimates derivatives from noisy samples by
//!   least-squares fitting a polynomial over the first few samples — the
//!   boundary variant of Savitzky–Golay filtering.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dict::EdgeFunction;
use crate::graph::{NetworkSpec, NodeId};

/// Truncated Taylor expansion of every node trajectory around `t = 0`:
/// `x_i(t) = sum_k coeff(i, k) t^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    order: usize,
    node_count: usize,
    coeffs: Vec<f64>,
}

impl Jet {
    /// Highest Taylor order carried by the jet.
    pub fn order(&self) -> usize {
        self.order
    }

    /// Taylor coefficient `k` of the node's trajectory.
    pub fn coefficient(&self, node: NodeId, k: usize) -> f64 {
        assert!(k <= self.order, "jet carries orders 0..={}", self.order);
        self.coeffs[node.index() * (self.order + 1) + k]
    }

    /// `k`-th time derivative of the node at `t = 0` (`k!` times the
    /// Taylor coefficient).
    pub fn derivative(&self, node: NodeId, k: usize) -> f64 {
        let mut factorial = 1.0;
        for i in 1..=k {
            factorial *= i as f64;
        }
        factorial * self.coefficient(node, k)
    }

    /// All Taylor coefficients of one node, ascending order.
    pub fn series(&self, node: NodeId) -> &[f64] {
        let width = self.order + 1;
        &self.coeffs[node.index() * width..(node.index() + 1) * width]
    }
}

/// Expands the network flow as Taylor series.
///
/// `functions[e]` is the function used for edge `e` of `spec` — callers may
/// substitute probe functions that differ from the declared dictionaries,
/// as the identification stages do. `inputs` are constant excitations added
/// to each node's rate. Coefficients follow the textbook recurrence: the
/// order-`k + 1` coefficient of a node is the order-`k` coefficient of its
/// summed edge functions divided by `k + 1`.
pub fn propagate(
    spec: &NetworkSpec,
    functions: &[EdgeFunction],
    x0: &[f64],
    inputs: &[f64],
    order: usize,
) -> Jet {
    assert_eq!(
        functions.len(),
        spec.edges.len(),
        "one function per edge required"
    );
    assert_eq!(x0.len(), spec.node_count, "one initial value per node");
    assert_eq!(inputs.len(), spec.node_count, "one input per node");
    let n = spec.node_count;
    let width = order + 1;
    let mut coeffs = vec![0.0; n * width];
    for i in 0..n {
        coeffs[i * width] = x0[i];
    }
    let tails: Vec<usize> = spec.edges.iter().map(|e| e.tail.index()).collect();
    let heads: Vec<usize> = spec.edges.iter().map(|e| e.head.index()).collect();
    let taylors: Vec<Vec<f64>> = functions
        .iter()
        .zip(&tails)
        .map(|(f, &j)| f.taylor(x0[j], order))
        .collect();

    let mut deviation = Vec::new();
    for k in 0..order {
        let mut rhs = vec![0.0; n];
        if k == 0 {
            rhs.copy_from_slice(inputs);
        }
        for e in 0..spec.edges.len() {
            let j = tails[e];
            deviation.clear();
            deviation.push(0.0);
            deviation.extend((1..=k).map(|r| coeffs[j * width + r]));
            rhs[heads[e]] += compose_series(&taylors[e], &deviation, k + 1)[k];
        }
        for i in 0..n {
            coeffs[i * width + k + 1] = rhs[i] / (k + 1) as f64;
        }
    }
    Jet {
        order,
        node_count: n,
        coeffs,
    }
}

/// Coefficient-wise product of two series, truncated to `len` terms.
fn series_mul(a: &[f64], b: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (i, &ai) in a.iter().take(len).enumerate() {
        if ai == 0.0 {
            continue;
        }
        for (j, &bj) in b.iter().take(len - i).enumerate() {
            out[i + j] += ai * bj;
        }
    }
    out
}

/// Composes `sum_r taylor[r] d^r` with a series `d` having zero constant
/// term, truncated to `len` coefficients (Horner over series).
fn compose_series(taylor: &[f64], deviation: &[f64], len: usize) -> Vec<f64> {
    debug_assert!(deviation.first().map_or(true, |&d0| d0 == 0.0));
    let mut result = vec![0.0; len];
    let Some((&last, rest)) = taylor.split_last() else {
        return result;
    };
    result[0] = last;
    for &t in rest.iter().rev() {
        result = series_mul(&result, deviation, len);
        result[0] += t;
    }
    result
}

/// Window and polynomial degree of the start-point derivative fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FitConfig {
    /// Number of leading samples entering the fit.
    pub window: usize,
    /// Degree of the fitted polynomial.
    pub degree: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            window: 10,
            degree: 5,
        }
    }
}

/// Failure of the start-point derivative fit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DerivError {
    #[error(
        "window of {window} samples cannot support a degree-{degree} fit \
         (need at least degree + 1 samples and no fewer than 2)"
    )]
    WindowTooSmall { window: usize, degree: usize },
    #[error("derivative order {order} exceeds the fitted degree {degree}")]
    OrderTooHigh { order: usize, degree: usize },
    #[error("the fit needs {needed} samples but only {got} were provided")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("sample step must be positive, got {step}")]
    NonPositiveStep { step: f64 },
}

/// Estimates derivatives `0..=max_order` of a sampled signal at its first
/// sample by least-squares fitting a polynomial of `config.degree` to the
/// first `config.window` samples.
///
/// Times are normalized to `[0, 1]` inside the fit so the normal system
/// stays well conditioned regardless of the sampling step.
pub fn fit_start_derivatives(
    samples: &[f64],
    step: f64,
    config: FitConfig,
    max_order: usize,
) -> Result<Vec<f64>, DerivError> {
    let FitConfig { window, degree } = config;
    if !(step > 0.0) {
        return Err(DerivError::NonPositiveStep { step });
    }
    if window < degree + 1 || window < 2 {
        return Err(DerivError::WindowTooSmall { window, degree });
    }
    if max_order > degree {
        return Err(DerivError::OrderTooHigh {
            order: max_order,
            degree,
        });
    }
    if samples.len() < window {
        return Err(DerivError::InsufficientSamples {
            needed: window,
            got: samples.len(),
        });
    }
    let horizon = (window - 1) as f64 * step;
    let vandermonde = DMatrix::from_fn(window, degree + 1, |row, col| {
        (row as f64 / (window - 1) as f64).powi(col as i32)
    });
    let targets = DVector::from_fn(window, |row, _| samples[row]);
    let svd = vandermonde.svd(true, true);
    let poly = svd
        .solve(&targets, 1e-12)
        .expect("SVD with both factors can always solve");

    let mut derivatives = Vec::with_capacity(max_order + 1);
    let mut factorial = 1.0;
    for k in 0..=max_order {
        if k > 0 {
            factorial *= k as f64;
        }
        derivatives.push(factorial * poly[k] / horizon.powi(k as i32));
    }
    Ok(derivatives)
}
