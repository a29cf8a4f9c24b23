//! Central-difference driver.

/// Finite-difference step, applied in f64 to an f64 shadow evaluation.
pub const GRADCHECK_STEP: f64 = 1e-3;

/// Central differences of `eval` with respect to every element of every
/// parameter vector. `eval` must be a pure function of the parameter values.
pub fn central_diff(
    params: &[Vec<f64>],
    step: f64,
    eval: &mut dyn FnMut(&[Vec<f64>]) -> f64,
) -> Vec<Vec<f64>> {
    let mut work: Vec<Vec<f64>> = params.to_vec();
    let mut grads: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.len()]).collect();
    for t in 0..params.len() {
        for e in 0..params[t].len() {
            let original = work[t][e];
            work[t][e] = original + step;
            let plus = eval(&work);
            work[t][e] = original - step;
            let minus = eval(&work);
            work[t][e] = original;
            grads[t][e] = (plus - minus) / (2.0 * step);
        }
    }
    grads
}

/// Relative error with a small absolute floor so finite-difference
/// truncation noise on true-zero gradients does not read as failure.
pub fn grad_error(analytic: f64, reference: f64) -> f64 {
    (analytic - reference).abs() / (analytic.abs().max(reference.abs()) + 1e-3)
}
