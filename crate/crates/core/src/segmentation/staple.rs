//! Binary STAPLE: expectation-maximization over per-rater sensitivity and
//! specificity with a fixed global foreground prior.

use serde::{Deserialize, Serialize};

use crate::segmentation::{BinaryMask, SegmentationError};

/// Sensitivity `p` and specificity `q` of one rater.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RaterPerformance {
    pub p: f64,
    pub q: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StapleConfig {
    /// Foreground prior; `None` uses the mean foreground fraction of the raters.
    pub prior: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    /// Starting value for every rater's `p` and `q`.
    pub init: f64,
}

impl Default for StapleConfig {
    fn default() -> Self {
        StapleConfig {
            prior: None,
            tol: 1e-7,
            max_iter: 100,
            init: 0.99,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StapleResult {
    /// Posterior foreground probability per pixel.
    pub probability: Vec<f64>,
    /// `probability >= 0.5`.
    pub consensus: BinaryMask,
    /// One entry per input mask, in input order.
    pub performance: Vec<RaterPerformance>,
    /// Marginal log-likelihood of the rater decisions after the
    /// initialization and after every M-step.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub prior: f64,
}

/// Per-pixel unnormalized posterior terms `(f·a, (1−f)·b)`.
fn pixel_terms(decisions: &[&[u8]], i: usize, perf: &[RaterPerformance], prior: f64) -> (f64, f64) {
    let (mut a, mut b) = (prior, 1.0 - prior);
    for (d, r) in decisions.iter().zip(perf) {
        if d[i] == 1 {
            a *= r.p;
            b *= 1.0 - r.q;
        } else {
            a *= 1.0 - r.p;
            b *= r.q;
        }
    }
    (a, b)
}

fn log_likelihood(decisions: &[&[u8]], perf: &[RaterPerformance], prior: f64, n: usize) -> f64 {
    (0..n)
        .map(|i| {
            let (a, b) = pixel_terms(decisions, i, perf, prior);
            (a + b).ln()
        })
        .sum()
}

/// Estimates a consensus segmentation and rater performance from ≥ 2 masks.
///
/// Raters are processed in a canonical order (sorted by mask content), so the
/// result does not depend on the order of `masks`.
pub fn staple_consensus(masks: &[BinaryMask], cfg: &StapleConfig) -> Result<StapleResult, SegmentationError> {
    if masks.len() < 2 {
        return Err(SegmentationError::TooFewRaters(masks.len()));
    }
    let dims = masks[0].dims();
    for m in masks {
        if m.dims() != dims {
            return Err(SegmentationError::DimensionMismatch {
                expected: dims,
                found: m.dims(),
            });
        }
    }
    let n = dims.0 * dims.1;

    let mut order: Vec<usize> = (0..masks.len()).collect();
    order.sort_by(|&x, &y| masks[x].values().cmp(masks[y].values()));
    let decisions: Vec<&[u8]> = order.iter().map(|&j| masks[j].values()).collect();

    let prior = cfg.prior.unwrap_or_else(|| {
        decisions.iter().map(|d| d.iter().map(|&v| v as f64).sum::<f64>() / n as f64).sum::<f64>()
            / decisions.len() as f64
    });
    let mut perf = vec![RaterPerformance { p: cfg.init, q: cfg.init }; decisions.len()];
    let mut weights = vec![prior; n];
    let mut ll = vec![log_likelihood(&decisions, &perf, prior, n)];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        iterations += 1;
        // E-step
        let mut max_change = 0.0f64;
        for (i, w) in weights.iter_mut().enumerate() {
            let (a, b) = pixel_terms(&decisions, i, &perf, prior);
            let next = if a + b > 0.0 { a / (a + b) } else { prior };
            max_change = max_change.max((next - *w).abs());
            *w = next;
        }
        if iterations > 1 && max_change < cfg.tol {
            converged = true;
            break;
        }
        // M-step
        let total_fg: f64 = weights.iter().sum();
        let total_bg: f64 = weights.iter().map(|w| 1.0 - w).sum();
        for (d, r) in decisions.iter().zip(perf.iter_mut()) {
            let (mut tp, mut tn) = (0.0, 0.0);
            for (&v, &w) in d.iter().zip(&weights) {
                if v == 1 {
                    tp += w;
                } else {
                    tn += 1.0 - w;
                }
            }
            if total_fg > 0.0 {
                r.p = tp / total_fg;
            }
            if total_bg > 0.0 {
                r.q = tn / total_bg;
            }
        }
        ll.push(log_likelihood(&decisions, &perf, prior, n));
    }

    let mut performance = vec![RaterPerformance { p: 0.0, q: 0.0 }; masks.len()];
    for (k, &j) in order.iter().enumerate() {
        performance[j] = perf[k];
    }
    let consensus = BinaryMask::new(dims.0, dims.1, weights.iter().map(|&w| (w >= 0.5) as u8).collect())?;
    Ok(StapleResult {
        probability: weights,
        consensus,
        performance,
        log_likelihood: ll,
        iterations,
        converged,
        prior,
    })
}
