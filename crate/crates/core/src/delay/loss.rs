/// Huber loss of one residual `e = truth − pred`.
pub fn huber_loss(pred: f64, truth: f64, delta: f64) -> f64 {
    let e = truth - pred;
    if e.abs() <= delta {
        0.5 * e * e
    } else {
        delta * e.abs() - 0.5 * delta * delta
    }
}

/// Derivative of [`huber_loss`] with respect to `pred`.
pub fn huber_grad(pred: f64, truth: f64, delta: f64) -> f64 {
    (pred - truth).clamp(-delta, delta)
}
