//! Dictionary of scalar basis functions for edge dynamics.
//!
//! The catalog is closed: monomials, sines, hyperbolic tangents, and shifted
//! logistics. Every entry is analytic on the whole real line and vanishes at
//! the origin, so a network that starts at rest stays at rest. Each entry
//! knows its own derivatives to arbitrary order in closed form, which the
//! identification stages rely on — no finite differencing happens anywhere
//! in the recovery path.
//!
//! An [`EdgeFunction`] is a finite linear combination of basis entries with
//! real coefficients. Evaluation and differentiation are linear in the
//! coefficients, which is exactly what makes the staged recovery a linear
//! least-squares problem.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// A single entry of the basis catalog.
///
/// All entries vanish at the origin. The text forms accepted by
/// [`BasisFunction::from_str`] and produced by `Display` are `mono:p`,
/// `sin:w`, `tanh:a`, and `logi:a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BasisFunction {
    /// `x^p` with integer power `p >= 1`. `mono:1` is the identity.
    Monomial { power: u32 },
    /// `sin(w x)` with frequency `w > 0`.
    Sine { freq: f64 },
    /// `tanh(a x)` with slope gain `a > 0`.
    Tanh { gain: f64 },
    /// `a (1 / (1 + e^-x) - 1/2)`, a logistic shifted to vanish at the
    /// origin and scaled by `a > 0`.
    ScaledLogistic { gain: f64 },
}

/// Rejected basis token or invalid basis parameter.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid basis `{token}`: {reason}")]
pub struct BasisError {
    pub token: String,
    pub reason: String,
}

impl BasisError {
    fn new(token: impl Into<String>, reason: impl Into<String>) -> Self {
        BasisError {
            token: token.into(),
            reason: reason.into(),
        }
    }
}

impl BasisFunction {
    /// Checks the parameter constraints of the variant.
    pub fn validate(&self) -> Result<(), BasisError> {
        match *self {
            BasisFunction::Monomial { power } => {
                if power == 0 {
                    return Err(BasisError::new(self.to_string(), "power must be >= 1"));
                }
            }
            BasisFunction::Sine { freq } => {
                if !(freq > 0.0) || !freq.is_finite() {
                    return Err(BasisError::new(self.to_string(), "frequency must be > 0"));
                }
            }
            BasisFunction::Tanh { gain } | BasisFunction::ScaledLogistic { gain } => {
                if !(gain > 0.0) || !gain.is_finite() {
                    return Err(BasisError::new(self.to_string(), "gain must be > 0"));
                }
            }
        }
        Ok(())
    }

    /// True for entries that are not the identity monomial `mono:1`.
    ///
    /// A dictionary whose entries are all `mono:1` can only express linear
    /// edge functions, which is what makes merging paths indistinguishable;
    /// see `graph::linearity_hazard`.
    pub fn is_nonlinear(&self) -> bool {
        !matches!(self, BasisFunction::Monomial { power: 1 })
    }

    /// Value at `x`.
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            BasisFunction::Monomial { power } => x.powi(power as i32),
            BasisFunction::Sine { freq } => (freq * x).sin(),
            BasisFunction::Tanh { gain } => (gain * x).tanh(),
            BasisFunction::ScaledLogistic { gain } => gain * (sigmoid(x) - 0.5),
        }
    }

    /// `k`-th derivative at `x`; `k = 0` is the value itself.
    pub fn deriv_k(&self, x: f64, k: usize) -> f64 {
        match *self {
            BasisFunction::Monomial { power } => {
                let p = power as usize;
                if k > p {
                    return 0.0;
                }
                // Falling factorial p (p-1) ... (p-k+1) times x^(p-k).
                let mut c = 1.0;
                for j in 0..k {
                    c *= (p - j) as f64;
                }
                c * x.powi((p - k) as i32)
            }
            BasisFunction::Sine { freq } => {
                let phase = freq * x;
                let trig = match k % 4 {
                    0 => phase.sin(),
                    1 => phase.cos(),
                    2 => -phase.sin(),
                    _ => -phase.cos(),
                };
                freq.powi(k as i32) * trig
            }
            _ => {
                // tanh and the logistic differentiate through their own
                // first-order recursions; read the derivative off the
                // Taylor expansion at x.
                let coeffs = self.taylor(x, k);
                factorial(k) * coeffs[k]
            }
        }
    }

    /// Taylor coefficients `c_0 .. c_order` of the entry around `x0`, so
    /// that the entry equals `sum_k c_k (x - x0)^k` plus a remainder of
    /// order `order + 1`.
    pub fn taylor(&self, x0: f64, order: usize) -> Vec<f64> {
        match *self {
            BasisFunction::Monomial { power } => {
                let p = power as usize;
                let mut c = vec![0.0; order + 1];
                // Binomial expansion of (x0 + d)^p.
                let mut binom = 1.0;
                for (k, ck) in c.iter_mut().enumerate().take(p.min(order) + 1) {
                    *ck = binom * x0.powi((p - k) as i32);
                    binom *= (p - k) as f64 / (k + 1) as f64;
                }
                c
            }
            BasisFunction::Sine { freq } => {
                let phase = freq * x0;
                let (s, co) = (phase.sin(), phase.cos());
                let mut c = vec![0.0; order + 1];
                let mut scale = 1.0; // freq^k / k!
                for (k, ck) in c.iter_mut().enumerate() {
                    let trig = match k % 4 {
                        0 => s,
                        1 => co,
                        2 => -s,
                        _ => -co,
                    };
                    *ck = scale * trig;
                    scale *= freq / (k + 1) as f64;
                }
                c
            }
            BasisFunction::Tanh { gain } => {
                // y(d) = tanh(gain (x0 + d)) satisfies y' = gain (1 - y^2).
                let mut c = vec![0.0; order + 1];
                c[0] = (gain * x0).tanh();
                for k in 0..order {
                    let mut sq = 0.0;
                    for i in 0..=k {
                        sq += c[i] * c[k - i];
                    }
                    let rhs = if k == 0 { 1.0 - sq } else { -sq };
                    c[k + 1] = gain * rhs / (k + 1) as f64;
                }
                c
            }
            BasisFunction::ScaledLogistic { gain } => {
                // s(d) = sigmoid(x0 + d) satisfies s' = s - s^2; the basis
                // entry is gain (s - 1/2).
                let mut s = vec![0.0; order + 1];
                s[0] = sigmoid(x0);
                for k in 0..order {
                    let mut sq = 0.0;
                    for i in 0..=k {
                        sq += s[i] * s[k - i];
                    }
                    s[k + 1] = (s[k] - sq) / (k + 1) as f64;
                }
                let mut c = s;
                c[0] -= 0.5;
                for ck in c.iter_mut() {
                    *ck *= gain;
                }
                c
            }
        }
    }
}

impl fmt::Display for BasisFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            BasisFunction::Monomial { power } => write!(f, "mono:{power}"),
            BasisFunction::Sine { freq } => write!(f, "sin:{freq}"),
            BasisFunction::Tanh { gain } => write!(f, "tanh:{gain}"),
            BasisFunction::ScaledLogistic { gain } => write!(f, "logi:{gain}"),
        }
    }
}

impl FromStr for BasisFunction {
    type Err = BasisError;

    fn from_str(s: &str) -> Result<Self, BasisError> {
        let (kind, param) = s
            .split_once(':')
            .ok_or_else(|| BasisError::new(s, "expected kind:parameter"))?;
        let basis = match kind {
            "mono" => {
                let power: u32 = param
                    .parse()
                    .map_err(|_| BasisError::new(s, "power must be a positive integer"))?;
                BasisFunction::Monomial { power }
            }
            "sin" => BasisFunction::Sine {
                freq: parse_param(s, param)?,
            },
            "tanh" => BasisFunction::Tanh {
                gain: parse_param(s, param)?,
            },
            "logi" => BasisFunction::ScaledLogistic {
                gain: parse_param(s, param)?,
            },
            _ => {
                return Err(BasisError::new(
                    s,
                    "unknown kind (expected mono, sin, tanh, or logi)",
                ))
            }
        };
        basis.validate()?;
        Ok(basis)
    }
}

fn parse_param(token: &str, param: &str) -> Result<f64, BasisError> {
    param
        .parse()
        .map_err(|_| BasisError::new(token, "parameter must be a real number"))
}

/// Parses a comma-separated basis list such as `mono:1,mono:2,sin:10`.
pub fn parse_basis_list(s: &str) -> Result<Vec<BasisFunction>, BasisError> {
    s.split(',').map(|tok| tok.trim().parse()).collect()
}

/// A linear combination of basis entries: `f(x) = sum_l coeffs[l] *
/// basis[l](x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeFunction {
    basis: Vec<BasisFunction>,
    coeffs: Vec<f64>,
}

/// Basis and coefficient vectors of different lengths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("edge function has {basis_len} basis entries but {coeff_len} coefficients")]
pub struct LengthMismatch {
    pub basis_len: usize,
    pub coeff_len: usize,
}

impl EdgeFunction {
    pub fn new(basis: Vec<BasisFunction>, coeffs: Vec<f64>) -> Result<Self, LengthMismatch> {
        if basis.len() != coeffs.len() {
            return Err(LengthMismatch {
                basis_len: basis.len(),
                coeff_len: coeffs.len(),
            });
        }
        Ok(EdgeFunction { basis, coeffs })
    }

    /// The zero function over the given basis.
    pub fn zero(basis: Vec<BasisFunction>) -> Self {
        let coeffs = vec![0.0; basis.len()];
        EdgeFunction { basis, coeffs }
    }

    pub fn basis(&self) -> &[BasisFunction] {
        &self.basis
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.basis
            .iter()
            .zip(&self.coeffs)
            .map(|(b, a)| a * b.eval(x))
            .sum()
    }

    pub fn deriv_k(&self, x: f64, k: usize) -> f64 {
        self.basis
            .iter()
            .zip(&self.coeffs)
            .map(|(b, a)| a * b.deriv_k(x, k))
            .sum()
    }

    /// Taylor coefficients of the combination around `x0`.
    pub fn taylor(&self, x0: f64, order: usize) -> Vec<f64> {
        let mut c = vec![0.0; order + 1];
        for (b, a) in self.basis.iter().zip(&self.coeffs) {
            for (ck, bk) in c.iter_mut().zip(b.taylor(x0, order)) {
                *ck += a * bk;
            }
        }
        c
    }
}

impl fmt::Display for EdgeFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (b, a) in self.basis.iter().zip(&self.coeffs) {
            if !first {
                write!(f, " + ")?;
            }
            write!(f, "{a}*{b}")?;
            first = false;
        }
        if first {
            write!(f, "0")?;
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|j| j as f64).product()
}
