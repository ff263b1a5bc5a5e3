use serde::{Deserialize, Serialize};

use crate::param::Param;

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Param>) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        assert_eq!(self.m.len(), params.len(), "optimizer parameter count changed");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = (self.lr * bc2.sqrt() / bc1) as f32;
        let (b1, b2, eps) = (self.beta1 as f32, self.beta2 as f32, self.eps as f32);
        for ((p, m), v) in params.into_iter().zip(&mut self.m).zip(&mut self.v) {
            for (((w, &g), mi), vi) in p.value.iter_mut().zip(&p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (1.0 - b1) * g;
                *vi = b2 * *vi + (1.0 - b2) * g * g;
                *w -= step * *mi / (vi.sqrt() + eps);
            }
        }
    }
}

/// Halves the learning rate when the monitored loss stops improving.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PlateauSchedule {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    #[serde(skip)]
    best: Option<f64>,
    #[serde(skip)]
    wait: usize,
}

impl PlateauSchedule {
    pub fn new(factor: f64, patience: usize, min_lr: f64) -> Self {
        PlateauSchedule {
            factor,
            patience,
            min_lr,
            best: None,
            wait: 0,
        }
    }

    /// Observes a loss (lower is better) and returns the learning rate to use next.
    pub fn observe(&mut self, loss: f64, lr: f64) -> f64 {
        match self.best {
            Some(b) if loss >= b * (1.0 - 1e-4) => {
                self.wait += 1;
                if self.wait > self.patience {
                    self.wait = 0;
                    return (lr * self.factor).max(self.min_lr);
                }
                lr
            }
            _ => {
                self.best = Some(loss);
                self.wait = 0;
                lr
            }
        }
    }
}

impl Default for PlateauSchedule {
    fn default() -> Self {
        PlateauSchedule::new(0.5, 3, 1e-5)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Progress {
    Improved,
    Waiting,
    Stop,
}

/// Stops training once the monitored loss has not improved for `patience`
/// consecutive epochs.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            best_epoch: 0,
            wait: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> Progress {
        match self.best {
            Some(b) if loss >= b => {
                self.wait += 1;
                if self.wait >= self.patience {
                    Progress::Stop
                } else {
                    Progress::Waiting
                }
            }
            _ => {
                self.best = Some(loss);
                self.best_epoch = epoch;
                self.wait = 0;
                Progress::Improved
            }
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut p = Param::new("x", vec![5.0, -3.0]);
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            p.grad = p.value.iter().map(|v| 2.0 * v).collect();
            opt.step(vec![&mut p]);
        }
        assert!(p.value.iter().all(|v| v.abs() < 1e-2), "{:?}", p.value);
    }

    #[test]
    fn early_stopping_waits_patience_epochs() {
        let mut es = EarlyStopping::new(10);
        assert_eq!(es.observe(0, 1.0), Progress::Improved);
        for e in 1..10 {
            assert_eq!(es.observe(e, 1.0), Progress::Waiting);
        }
        assert_eq!(es.observe(10, 1.5), Progress::Stop);
        assert_eq!(es.best_epoch(), 0);
    }

    #[test]
    fn plateau_halves_after_patience() {
        let mut s = PlateauSchedule::new(0.5, 2, 1e-4);
        let mut lr = 1e-3;
        lr = s.observe(1.0, lr);
        for _ in 0..3 {
            lr = s.observe(1.0, lr);
        }
        assert_eq!(lr, 5e-4);
        for _ in 0..100 {
            lr = s.observe(1.0, lr);
        }
        assert_eq!(lr, 1e-4);
    }
}
