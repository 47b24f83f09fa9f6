/// Outcome of comparing analytic gradients with central finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Parameter index with the largest relative error.
    pub worst_index: Option<usize>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Relative errors are taken against `max(|analytic|, |numeric|, FLOOR)` so
/// parameters with vanishing gradients do not divide by zero.
const FLOOR: f64 = 1e-6;

/// Checks every coordinate of the gradient returned by `loss_and_grad`
/// against a central difference with step `h`.
pub fn gradcheck<F>(params: Vec<f64>, h: f64, tolerance: f64, mut loss_and_grad: F) -> GradcheckReport
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = loss_and_grad(&params);
    assert_eq!(analytic.len(), params.len(), "gradient length must match parameters");
    let mut probe = params.clone();
    let mut max_rel_error = 0.0f64;
    let mut worst_index = None;
    for i in 0..params.len() {
        probe[i] = params[i] + h;
        let (up, _) = loss_and_grad(&probe);
        probe[i] = params[i] - h;
        let (down, _) = loss_and_grad(&probe);
        probe[i] = params[i];
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(FLOOR);
        let rel = (analytic[i] - numeric).abs() / denom;
        if rel > max_rel_error || worst_index.is_none() {
            max_rel_error = max_rel_error.max(rel);
            worst_index = Some(i);
        }
    }
    GradcheckReport {
        checked: params.len(),
        max_rel_error,
        worst_index,
        tolerance,
        passed: max_rel_error <= tolerance,
    }
}
