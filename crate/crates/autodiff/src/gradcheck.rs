use crate::error::{AutodiffError, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

fn eval_scalar<P>(program: &P, inputs: &[Tensor<f64>]) -> Result<f64>
where
    P: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = inputs
        .iter()
        .map(|t| g.constant(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = program(&mut g, &vars)?;
    g.value(out)
        .item()
        .ok_or_else(|| AutodiffError::NonScalarLoss(g.shape(out).to_vec()))
}

/// Central-difference gradient of a scalar program with respect to every
/// coordinate of every input, using the fourth-order five-point stencil.
pub fn numeric_gradient<P>(program: &P, inputs: &[Tensor<f64>], eps: f64) -> Result<Vec<Tensor<f64>>>
where
    P: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut grad = Tensor::zeros(inputs[i].shape());
        for j in 0..inputs[i].len() {
            let x = inputs[i].data()[j];
            let mut at = |dx: f64| {
                work[i].data_mut()[j] = x + dx;
                eval_scalar(program, &work)
            };
            let (p1, m1, p2, m2) = (at(eps)?, at(-eps)?, at(2.0 * eps)?, at(-2.0 * eps)?);
            work[i].data_mut()[j] = x;
            grad.data_mut()[j] = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * eps);
        }
        out.push(grad);
    }
    Ok(out)
}

/// Maximum relative error between reverse-mode and central-difference
/// gradients of `program` over all input coordinates.
pub fn grad_check<P>(program: P, inputs: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    P: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if inputs.iter().any(|t| !t.is_finite()) {
        return Err(AutodiffError::NonFinite { op: "grad_check" });
    }
    let mut g = Graph::new();
    let vars = inputs
        .iter()
        .map(|t| g.param(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = program(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let numeric = numeric_gradient(&program, inputs, eps)?;
    let mut worst: f64 = 0.0;
    for (v, num) in vars.iter().zip(&numeric) {
        let analytic = grads.get(*v).expect("leaf gradient");
        for (&a, &n) in analytic.data().iter().zip(num.data()) {
            worst = worst.max(relative_error(a, n));
        }
    }
    Ok(worst)
}
