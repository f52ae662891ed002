use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Gradients, NetworkParams};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RmsPropConfig {
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        RmsPropConfig { rho: 0.999, epsilon: 1e-8 }
    }
}

/// One RMSProp update of a flat parameter slice:
/// `v = rho v + (1 - rho) g^2`, `theta -= lr g / (sqrt(v) + eps)`.
pub fn rmsprop_step<T: Real>(theta: &mut [T], grad: &[T], v: &mut [T], lr: f64, config: &RmsPropConfig) {
    let rho = T::lit(config.rho);
    let one_minus = T::lit(1.0 - config.rho);
    let eps = T::lit(config.epsilon);
    let lr = T::lit(lr);
    for ((t, &g), s) in theta.iter_mut().zip(grad).zip(v.iter_mut()) {
        *s = rho * *s + one_minus * g * g;
        *t -= lr * g / (s.sqrt() + eps);
    }
}

/// Squared-gradient averages for every parameter array of a network.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp<T> {
    pub config: RmsPropConfig,
    pub v: Vec<Vec<T>>,
    pub steps: u64,
}

impl<T: Real> RmsProp<T> {
    pub fn new(net: &NetworkParams<T>, config: RmsPropConfig) -> Self {
        RmsProp {
            config,
            v: net.params.iter().map(|p| vec![T::zero(); p.data.len()]).collect(),
            steps: 0,
        }
    }

    /// Adds `weight_decay * theta` to the gradient of decayed weights, then
    /// applies [`rmsprop_step`]. Nothing is modified when any gradient is
    /// non-finite.
    pub fn apply(&mut self, net: &mut NetworkParams<T>, grads: &Gradients<T>, lr: f64, weight_decay: f64) -> Result<()> {
        if grads.grads.len() != net.params.len() {
            return Err(Error::LengthMismatch {
                what: "gradient arrays",
                expected: net.params.len(),
                actual: grads.grads.len(),
            });
        }
        for (p, g) in net.params.iter().zip(&grads.grads) {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient(p.info.name.clone()));
            }
        }
        let wd = T::lit(weight_decay);
        let mut decayed = Vec::new();
        for ((p, g), v) in net.params.iter_mut().zip(&grads.grads).zip(&mut self.v) {
            let g = if weight_decay != 0.0 && p.info.kind.is_decayed() {
                decayed.clear();
                decayed.extend(g.iter().zip(&p.data).map(|(&g, &t)| g + wd * t));
                &decayed
            } else {
                g
            };
            rmsprop_step(&mut p.data, g, v, lr, &self.config);
        }
        self.steps += 1;
        Ok(())
    }
}
