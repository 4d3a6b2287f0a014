//! Central finite-difference gradient checking in 64-bit.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Per input: `max |analytic − numeric| / max(|analytic|_∞, |numeric|_∞)`.
    pub max_rel_error: Vec<f64>,
    pub tol: f64,
    pub passed: bool,
}

fn eval<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out)[0])
}

/// Compare the tape gradient of scalar-valued `f` against central differences
/// with step `h = 1e-4·max(1, |x|)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(Error::Contract("grad_check needs a scalar function".into()));
    }
    tape.backward(out)?;

    let mut max_rel_error = Vec::with_capacity(inputs.len());
    let mut probe = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic: Vec<f64> = match tape.grad(*v) {
            Some(g) => g.data().to_vec(),
            None => alloc::vec![0.0; inputs[i].len()],
        };
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        for j in 0..inputs[i].len() {
            let x0 = inputs[i][j];
            let h = 1e-4 * x0.abs().max(1.0);
            probe[i].data_mut()[j] = x0 + h;
            let fp = eval(&f, &probe)?;
            probe[i].data_mut()[j] = x0 - h;
            let fm = eval(&f, &probe)?;
            probe[i].data_mut()[j] = x0;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::NonFinite { input: i, element: j });
            }
            let numeric = (fp - fm) / (2.0 * h);
            worst = worst.max((analytic[j] - numeric).abs());
            scale = scale.max(analytic[j].abs()).max(numeric.abs());
        }
        max_rel_error.push(if scale > 0.0 { worst / scale } else { worst });
    }
    let passed = max_rel_error.iter().all(|&e| e <= tol);
    Ok(GradCheckReport {
        max_rel_error,
        tol,
        passed,
    })
}
