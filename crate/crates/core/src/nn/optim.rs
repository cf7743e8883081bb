use super::params::ParamStore;
use super::tensor::{Scalar, Tensor};
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer state; one moment pair per store entry.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    config: AdamConfig,
    step: u64,
    first: Vec<Option<Vec<F>>>,
    second: Vec<Option<Vec<F>>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads` is aligned with the store (see [`super::Binding::gradients`]).
    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &[Option<Tensor<F>>]) -> Result<(), NnError> {
        if grads.len() != store.len() {
            return Err(NnError::Shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        for (g, p) in grads.iter().zip(store.params()) {
            if let Some(g) = g {
                if g.shape() != p.value.shape() {
                    return Err(NnError::Shape(format!("gradient shape for {}", p.name)));
                }
                if !g.is_finite() {
                    return Err(NnError::NonFiniteGradient(p.name.clone()));
                }
            }
        }
        if self.first.len() != store.len() {
            self.first = vec![None; store.len()];
            self.second = vec![None; store.len()];
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let lr = F::from_f64_lossy(c.learning_rate);
        let b1 = F::from_f64_lossy(c.beta1);
        let b2 = F::from_f64_lossy(c.beta2);
        let eps = F::from_f64_lossy(c.eps);
        let corr1 = F::one() - F::from_f64_lossy(c.beta1.powi(t));
        let corr2 = F::one() - F::from_f64_lossy(c.beta2.powi(t));
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let n = g.len();
            let m = self.first[i].get_or_insert_with(|| vec![F::zero(); n]);
            let v = self.second[i].get_or_insert_with(|| vec![F::zero(); n]);
            let w = store.value_mut(i).data_mut();
            for k in 0..n {
                let gk = g.data()[k];
                m[k] = b1 * m[k] + (F::one() - b1) * gk;
                v[k] = b2 * v[k] + (F::one() - b2) * gk * gk;
                let mhat = m[k] / corr1;
                let vhat = v[k] / corr2;
                w[k] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(v), true);
        s
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = store(1.5);
        let mut opt = Adam::new(AdamConfig::default());
        for _ in 0..10 {
            opt.step(&mut s, &[Some(Tensor::scalar(0.0))]).unwrap();
        }
        assert_eq!(s.get("w").unwrap().data()[0], 1.5);
    }

    #[test]
    fn constant_gradient_moves_against_its_sign() {
        let mut s = store(0.0);
        let mut opt = Adam::new(AdamConfig::default());
        for _ in 0..100 {
            opt.step(&mut s, &[Some(Tensor::scalar(2.0))]).unwrap();
        }
        assert!(s.get("w").unwrap().data()[0] < -0.05);
    }

    #[test]
    fn quadratic_converges() {
        // f(w) = (w - 3)^2
        let mut s = store(0.0);
        let mut opt = Adam::new(AdamConfig {
            learning_rate: 1e-2,
            ..AdamConfig::default()
        });
        let mut steps = 0;
        while steps < 5000 {
            let w = s.get("w").unwrap().data()[0];
            opt.step(&mut s, &[Some(Tensor::scalar(2.0 * (w - 3.0)))]).unwrap();
            steps += 1;
        }
        assert!((s.get("w").unwrap().data()[0] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn nan_gradient_names_the_layer() {
        let mut s = store(0.0);
        let mut opt = Adam::new(AdamConfig::default());
        let err = opt.step(&mut s, &[Some(Tensor::scalar(f64::NAN))]).unwrap_err();
        assert!(matches!(err, NnError::NonFiniteGradient(ref n) if n == "w"));
    }
}
