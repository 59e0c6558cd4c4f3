use super::tape::{Mode, NodeId, Tape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Outcome of a finite-difference gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Flat index of the coordinate with the largest error.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub pass: bool,
}

/// Compares the tape gradient of `f` at `input` with central differences.
///
/// `f` receives a fresh training tape and the node of the input variable and
/// must return a scalar node. The relative error per coordinate is
/// `|a - n| / max(1, |a|, |n|)`.
pub fn check_gradients<Fun>(f: Fun, input: &Tensor<f64>, h: f64, tol: f64) -> Result<GradCheckReport>
where
    Fun: Fn(&mut Tape<f64>, NodeId) -> Result<NodeId>,
{
    let eval = |x: &Tensor<f64>| -> Result<f64> {
        let mut tape = Tape::new(Mode::Train);
        let v = tape.variable(x.clone())?;
        let out = f(&mut tape, v)?;
        let val = tape.value(out);
        if !val.is_scalar() {
            return Err(Error::NonScalarLoss(val.shape().to_vec()));
        }
        Ok(val.item())
    };

    let mut tape = Tape::new(Mode::Train);
    let v = tape.variable(input.clone())?;
    let out = f(&mut tape, v)?;
    let base = tape.value(out).item();
    let grads = tape.backward(out)?;
    let analytic: Vec<f64> = grads
        .variable(v)
        .map(|g| g.data().to_vec())
        .unwrap_or_else(|| vec![0.0; input.len()]);

    let again = eval(input)?;
    if again.to_bits() != base.to_bits() {
        return Err(Error::NonDeterministic(format!(
            "two evaluations at the same input gave {base} and {again}"
        )));
    }

    let mut numeric = Vec::with_capacity(input.len());
    let mut probe = input.clone();
    for i in 0..input.len() {
        let x0 = probe.data()[i];
        probe.data_mut()[i] = x0 + h;
        let up = eval(&probe)?;
        probe.data_mut()[i] = x0 - h;
        let down = eval(&probe)?;
        probe.data_mut()[i] = x0;
        numeric.push((up - down) / (2.0 * h));
    }

    let (worst_index, max_relative_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| (a - n).abs() / 1f64.max(a.abs()).max(n.abs()))
        .enumerate()
        .fold((0, 0.0), |best, (i, e)| if e > best.1 || e.is_nan() { (i, e) } else { best });

    Ok(GradCheckReport {
        max_relative_error,
        worst_index,
        analytic,
        numeric,
        pass: max_relative_error < tol,
    })
}
