//! Loss functions. Each returns the scalar loss (averaged) and the gradient
//! with respect to the prediction tensor.

use crate::layers::sigmoid;
use crate::tensor::Tensor;

/// Mean squared error over every element.
pub fn mse(pred: &Tensor, target: &Tensor) -> (f64, Tensor) {
    assert_eq!(pred.shape(), target.shape(), "mse shapes");
    let n = pred.len() as f64;
    let mut grad = Tensor::zeros(pred.shape());
    let mut total = 0.0f64;
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        total += (d as f64) * (d as f64);
        *g = (2.0 * d as f64 / n) as f32;
    }
    (total / n, grad)
}

/// Mean absolute error; metric only.
pub fn mae(pred: &[f32], target: &[f32]) -> f64 {
    assert_eq!(pred.len(), target.len());
    let total: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| (p as f64 - t as f64).abs())
        .sum();
    total / pred.len() as f64
}

/// Mean squared error; metric only.
pub fn mean_squared(pred: &[f32], target: &[f32]) -> f64 {
    assert_eq!(pred.len(), target.len());
    let total: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| (p as f64 - t as f64).powi(2))
        .sum();
    total / pred.len() as f64
}

/// Binary cross-entropy on logits, targets in [0, 1].
pub fn bce_with_logits(logits: &Tensor, target: &Tensor) -> (f64, Tensor) {
    assert_eq!(logits.shape(), target.shape(), "bce shapes");
    let n = logits.len() as f64;
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = 0.0f64;
    for ((g, &z), &t) in grad.data_mut().iter_mut().zip(logits.data()).zip(target.data()) {
        let (z, t) = (z as f64, t as f64);
        // max(z,0) - z t + log(1 + e^{-|z|})
        total += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
        *g = ((sigmoid(z as f32) as f64 - t) / n) as f32;
    }
    (total / n, grad)
}

/// Soft Dice loss `1 − 2Σpy / (Σp + Σy)` computed per sample on
/// `sigmoid(logits)` and averaged over the batch.
pub fn soft_dice_with_logits(logits: &Tensor, target: &Tensor) -> (f64, Tensor) {
    assert_eq!(logits.shape(), target.shape(), "dice shapes");
    const SMOOTH: f64 = 1.0;
    let n = logits.n();
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = 0.0;
    for i in 0..n {
        let z = logits.sample(i);
        let y = target.sample(i);
        let p: Vec<f64> = z.iter().map(|&v| sigmoid(v) as f64).collect();
        let inter: f64 = p.iter().zip(y).map(|(&a, &b)| a * b as f64).sum();
        let denom: f64 = p.iter().sum::<f64>() + y.iter().map(|&v| v as f64).sum::<f64>() + SMOOTH;
        let num = 2.0 * inter + SMOOTH;
        total += 1.0 - num / denom;
        let g = grad.sample_mut(i);
        for ((gv, &pv), &yv) in g.iter_mut().zip(&p).zip(y) {
            // d/dp of −num/denom, chained through the sigmoid.
            let d = -(2.0 * yv as f64 * denom - num) / (denom * denom);
            *gv = (d * pv * (1.0 - pv) / n as f64) as f32;
        }
    }
    (total / n as f64, grad)
}
