use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.constant(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    let v = g.value(out);
    if v.numel() != 1 {
        return Err(Error::NotScalar(v.shape().to_vec()));
    }
    Ok(v.data()[0])
}

/// Compares reverse-mode gradients of the scalar function `f` against
/// central differences with step `h`, returning the largest
/// `|autodiff - numeric| / max(1, |numeric|)` over every parameter entry.
///
/// `f` must be deterministic: anything random inside it has to be seeded
/// afresh on every call.
pub fn grad_check<F>(f: F, params: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if h <= 0.0 {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| g.grad(v).expect("leaf parameter"))
        .collect();

    let mut worst = 0.0f64;
    let mut probe = params.to_vec();
    for (pi, grad) in analytic.iter().enumerate() {
        for k in 0..grad.numel() {
            let orig = params[pi].data()[k];
            probe[pi].data_mut()[k] = orig + h;
            let up = evaluate(&f, &probe)?;
            probe[pi].data_mut()[k] = orig - h;
            let down = evaluate(&f, &probe)?;
            probe[pi].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            if !numeric.is_finite() {
                return Err(Error::NonFinite { op: "grad_check" });
            }
            let err = (grad.data()[k] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
