use crate::error::{Error, Result};
use crate::layers::NamedParams;
use crate::tensor::{Scalar, Tensor};

/// One bias-corrected Adam update of `value` in place. `t` is the
/// timestep after incrementing (1 for the first step).
#[allow(clippy::too_many_arguments)]
pub fn adam_update<T: Scalar>(
    value: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) -> Result<()> {
    let n = value.len();
    if grad.len() != n || m.len() != n || v.len() != n {
        return Err(Error::Shape(format!(
            "adam update lengths differ: value {n}, grad {}, m {}, v {}",
            grad.len(),
            m.len(),
            v.len()
        )));
    }
    let (b1, b2) = (T::lit(betas.0), T::lit(betas.1));
    let c1 = T::lit(1.0 - betas.0.powi(t as i32));
    let c2 = T::lit(1.0 - betas.1.powi(t as i32));
    let (lr, eps) = (T::lit(lr), T::lit(eps));
    for i in 0..n {
        let g = grad[i];
        m[i] = b1 * m[i] + (T::one() - b1) * g;
        v[i] = b2 * v[i] + (T::one() - b2) * g * g;
        let mh = m[i] / c1;
        let vh = v[i] / c2;
        value[i] -= lr * mh / (vh.sqrt() + eps);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one named parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub name: String,
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

pub struct Adam<T: Scalar> {
    pub config: AdamConfig,
    t: u64,
    moments: Vec<Moments<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            moments: Vec::new(),
        }
    }

    pub fn timestep(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> &[Moments<T>] {
        &self.moments
    }

    /// Replaces the optimizer state, e.g. from a checkpoint.
    pub fn restore(&mut self, t: u64, moments: Vec<Moments<T>>) {
        self.t = t;
        self.moments = moments;
    }

    /// Updates every parameter from its accumulated gradient. Moments are
    /// created on the first step and matched by name afterwards.
    pub fn step(&mut self, params: NamedParams<'_, T>, lr: f64) -> Result<()> {
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|(name, p)| Moments {
                    name: name.clone(),
                    m: p.value.zeros_like(),
                    v: p.value.zeros_like(),
                })
                .collect();
        }
        if self.moments.len() != params.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} tensors, model has {}",
                self.moments.len(),
                params.len()
            )));
        }
        self.t += 1;
        let betas = (self.config.beta1, self.config.beta2);
        for ((name, p), st) in params.into_iter().zip(&mut self.moments) {
            if st.name != name || st.m.shape() != p.value.shape() {
                return Err(Error::Shape(format!(
                    "optimizer state `{}` {:?} does not match parameter `{name}` {:?}",
                    st.name,
                    st.m.shape(),
                    p.value.shape()
                )));
            }
            adam_update(
                p.value.data_mut(),
                p.grad.data(),
                st.m.data_mut(),
                st.v.data_mut(),
                self.t,
                lr,
                betas,
                self.config.eps,
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThresholdMode {
    /// Improvement means `loss < best - threshold`.
    Absolute,
    /// Improvement means `loss < best * (1 - threshold)`.
    Relative,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    pub threshold_mode: ThresholdMode,
    pub min_lr: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            factor: 0.1,
            patience: 10,
            threshold: 1e-4,
            threshold_mode: ThresholdMode::Absolute,
            min_lr: 1e-6,
        }
    }
}

/// Multiplies the learning rate by `factor` once the monitored loss has
/// failed to improve for more than `patience` consecutive epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauScheduler {
    pub config: PlateauConfig,
    pub lr: f64,
    pub best: f64,
    pub bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, config: PlateauConfig) -> Self {
        Self {
            config,
            lr,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    fn improves(&self, loss: f64) -> bool {
        if self.best.is_infinite() {
            return loss < self.best;
        }
        match self.config.threshold_mode {
            ThresholdMode::Absolute => loss < self.best - self.config.threshold,
            ThresholdMode::Relative => loss < self.best * (1.0 - self.config.threshold),
        }
    }

    /// Records one epoch's loss and returns the learning rate for the next.
    pub fn step(&mut self, loss: f64) -> f64 {
        if self.improves(loss) {
            self.best = loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        if self.bad_epochs > self.config.patience {
            let reduced = (self.lr * self.config.factor).max(self.config.min_lr);
            if reduced < self.lr {
                self.lr = reduced;
            }
            self.bad_epochs = 0;
        }
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_about_lr() {
        let (mut p, mut m, mut v) = ([0.5f64], [0.0], [0.0]);
        adam_update(&mut p, &[1.0], &mut m, &mut v, 1, 1e-3, (0.9, 0.999), 1e-8).unwrap();
        assert!((p[0] - (0.5 - 1e-3)).abs() < 1e-10);
    }

    #[test]
    fn zero_gradient_is_identity() {
        let (mut p, mut m, mut v) = ([0.5f64, -2.0], [0.0; 2], [0.0; 2]);
        for t in 1..=10 {
            adam_update(&mut p, &[0.0, 0.0], &mut m, &mut v, t, 1e-3, (0.9, 0.999), 1e-8)
                .unwrap();
        }
        assert_eq!(p, [0.5, -2.0]);
    }

    #[test]
    fn length_mismatch() {
        let (mut p, mut m, mut v) = ([0.0f64; 2], [0.0; 2], [0.0; 2]);
        assert!(adam_update(&mut p, &[1.0], &mut m, &mut v, 1, 1e-3, (0.9, 0.999), 1e-8).is_err());
    }

    #[test]
    fn decreasing_loss_never_reduces() {
        let mut s = PlateauScheduler::new(1e-3, PlateauConfig::default());
        for e in 0..100 {
            assert_eq!(s.step(10.0 - 0.01 * e as f64), 1e-3);
        }
    }

    #[test]
    fn constant_loss_reduces_after_eleven_stagnant_epochs() {
        let mut s = PlateauScheduler::new(1e-3, PlateauConfig::default());
        assert_eq!(s.step(1.0), 1e-3);
        for _ in 0..10 {
            assert_eq!(s.step(1.0), 1e-3);
        }
        assert!((s.step(1.0) - 1e-4).abs() < 1e-18);
        for _ in 0..11 {
            s.step(1.0);
        }
        assert!((s.lr - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn floor_is_respected() {
        let config = PlateauConfig {
            patience: 0,
            ..Default::default()
        };
        let mut s = PlateauScheduler::new(1e-5, config);
        s.step(1.0);
        for _ in 0..5 {
            s.step(1.0);
        }
        assert_eq!(s.lr, 1e-6);
    }
}
