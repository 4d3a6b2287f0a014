//! Diagonal state-space models: zero-order-hold discretization, the two
//! equivalent evaluation modes (recurrence and causal convolution), and the
//! input-dependent selective scan.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
#[allow(unused_imports)]
use num_traits::Float;

/// Below this `|Δ·a|` the input term uses the series `Δ·B·(1 + Δa/2)`.
pub const ZOH_SERIES_THRESHOLD: f64 = 1e-8;

/// Continuous system `h' = A h + B x`, `y = C h + D x` with diagonal `A`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContinuousSsm<T> {
    /// Diagonal of `A`; every entry must be strictly negative.
    pub a: Vec<T>,
    pub b: Vec<T>,
    pub c: Vec<T>,
    /// Skip coefficient.
    pub d: T,
}

impl<T: Scalar> ContinuousSsm<T> {
    pub fn new(a: Vec<T>, b: Vec<T>, c: Vec<T>, d: T) -> Result<Self> {
        let s = Self { a, b, c, d };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.len();
        if n == 0 {
            return Err(Error::Contract("state size must be at least 1".into()));
        }
        if self.b.len() != n || self.c.len() != n {
            return Err(Error::Shape {
                op: "ContinuousSsm",
                lhs: vec![self.a.len(), self.b.len()],
                rhs: vec![self.c.len()],
            });
        }
        if let Some(bad) = self.a.iter().find(|&&v| !(v < T::zero())) {
            return Err(Error::Contract(alloc::format!(
                "diagonal of A must be strictly negative, found {bad}"
            )));
        }
        Ok(())
    }

    pub fn state_size(&self) -> usize {
        self.a.len()
    }
}

/// Discretized diagonal system `h_t = Ā h_{t-1} + B̄ x_t`, `y_t = C h_t + D x_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteSsm<T> {
    pub a_bar: Vec<T>,
    pub b_bar: Vec<T>,
    pub c: Vec<T>,
    pub d: T,
    pub delta: T,
}

impl<T: Scalar> DiscreteSsm<T> {
    pub fn state_size(&self) -> usize {
        self.a_bar.len()
    }

    /// Convolution kernel `K_j = Σ_n C_n Ā_n^j B̄_n`, `j = 0..len`.
    pub fn kernel(&self, len: usize) -> Vec<T> {
        let mut pow: Vec<T> = self.b_bar.clone();
        let mut k = Vec::with_capacity(len);
        for _ in 0..len {
            k.push(pow.iter().zip(&self.c).map(|(&p, &c)| p * c).sum());
            for (p, &a) in pow.iter_mut().zip(&self.a_bar) {
                *p *= a;
            }
        }
        k
    }
}

/// Zero-order hold: `Ā = exp(Δa)`, `B̄ = (exp(Δa) − 1)/a · B` per diagonal entry.
pub fn discretize_zoh<T: Scalar>(ssm: &ContinuousSsm<T>, delta: T) -> Result<DiscreteSsm<T>> {
    if !(delta > T::zero()) || !delta.is_finite() {
        return Err(Error::Domain(alloc::format!("step size must be positive, got {delta}")));
    }
    ssm.validate()?;
    let mut a_bar = Vec::with_capacity(ssm.a.len());
    let mut b_bar = Vec::with_capacity(ssm.a.len());
    for (&a, &b) in ssm.a.iter().zip(&ssm.b) {
        let da = delta * a;
        a_bar.push(da.exp());
        if da.abs().as_f64() < ZOH_SERIES_THRESHOLD {
            // (e^x − 1)/x = 1 + x/2 + O(x²)
            b_bar.push(delta * b * (T::one() + da / T::of_f64(2.0)));
        } else {
            b_bar.push(da.exp_m1() / a * b);
        }
    }
    Ok(DiscreteSsm {
        a_bar,
        b_bar,
        c: ssm.c.clone(),
        d: ssm.d,
        delta,
    })
}

/// Sequential evaluation with `h_0 = 0`.
pub fn scan_recurrent<T: Scalar>(ssm: &DiscreteSsm<T>, x: &[T]) -> Result<Vec<T>> {
    if x.is_empty() {
        return Err(Error::Domain("cannot scan an empty sequence".into()));
    }
    let mut h = vec![T::zero(); ssm.state_size()];
    Ok(x.iter()
        .map(|&xt| {
            let mut y = ssm.d * xt;
            for k in 0..h.len() {
                h[k] = ssm.a_bar[k] * h[k] + ssm.b_bar[k] * xt;
                y += ssm.c[k] * h[k];
            }
            y
        })
        .collect())
}

/// Causal convolution with the structured kernel, plus the skip term.
pub fn scan_convolutional<T: Scalar>(ssm: &DiscreteSsm<T>, x: &[T]) -> Result<Vec<T>> {
    if x.is_empty() {
        return Err(Error::Domain("cannot scan an empty sequence".into()));
    }
    let k = ssm.kernel(x.len());
    Ok((0..x.len())
        .map(|t| {
            let conv: T = (0..=t).map(|j| k[j] * x[t - j]).sum();
            conv + ssm.d * x[t]
        })
        .collect())
}

/// Learned maps producing the per-timestep `Δ_t`, `B_t`, `C_t` from the input.
///
/// `Δ_t = softplus(x_t W_down W_up + dt_bias)` is a rank-reduced map to one
/// step per channel; `B_t = x_t W_b + b_b`, `C_t = x_t W_c + c_b`.
#[derive(Clone, Copy, Debug)]
pub struct SelectiveProj {
    pub dt_down: Var,
    pub dt_up: Var,
    pub dt_bias: Var,
    pub b_w: Var,
    pub b_b: Var,
    pub c_w: Var,
    pub c_b: Var,
}

/// S6 selective scan over `x: [B, L, D]` with `a: [D, N]` (negative) and
/// skip `d_skip: [D]`.
///
/// The input term uses `B̄_t = Δ_t·B_t`.
pub fn selective_scan<T: Scalar>(tape: &mut Tape<T>, x: Var, proj: &SelectiveProj, a: Var, d_skip: Var) -> Result<Var> {
    let low = tape.matmul(x, proj.dt_down)?;
    let dt = tape.linear(low, proj.dt_up, Some(proj.dt_bias))?;
    let delta = tape.softplus(dt);
    let bm = tape.linear(x, proj.b_w, Some(proj.b_b))?;
    let cm = tape.linear(x, proj.c_w, Some(proj.c_b))?;
    tape.selective_scan_raw(x, delta, a, bm, cm, d_skip)
}

/// `Δ` bias whose softplus equals `delta` (inverse softplus).
pub fn inverse_softplus(delta: f64) -> f64 {
    delta + (-(-delta).exp_m1()).ln()
}
