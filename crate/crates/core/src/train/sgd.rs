use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::model::params::decays;
use crate::model::ModelParams;
use crate::tensor::{Element, Tensor};

/// SGD with momentum and decoupled-from-BN weight decay.
#[derive(Debug, Clone)]
pub struct OptimizerState<T: Element = f32> {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub velocity: IndexMap<String, Tensor<T>>,
}

impl<T: Element> OptimizerState<T> {
    pub fn new(params: &ModelParams<T>, lr: f64, momentum: f64, weight_decay: f64) -> Self {
        let velocity = params
            .iter()
            .filter(|(n, _)| !crate::model::params::is_running_stat(n))
            .map(|(n, t)| (n.to_string(), Tensor::zeros(t.shape())))
            .collect();
        OptimizerState { lr, momentum, weight_decay, velocity }
    }
}

/// `v <- m v + g + wd p` (wd only for conv weights and biases), then
/// `p <- p - lr v`.
pub fn sgd_step<T: Element>(
    params: &mut ModelParams<T>,
    grads: &IndexMap<String, Tensor<T>>,
    state: &mut OptimizerState<T>,
) -> Result<()> {
    if grads.len() != state.velocity.len() || grads.keys().any(|k| !state.velocity.contains_key(k)) {
        let missing: Vec<&String> = state.velocity.keys().filter(|k| !grads.contains_key(*k)).collect();
        let extra: Vec<&String> = grads.keys().filter(|k| !state.velocity.contains_key(*k)).collect();
        return Err(Error::KeyMismatch(format!("missing gradients {missing:?}, unexpected {extra:?}")));
    }
    let m = T::lit(state.momentum);
    let lr = T::lit(state.lr);
    for (name, v) in state.velocity.iter_mut() {
        let g = &grads[name];
        let p = params.get_mut(name)?;
        if g.shape() != p.shape() {
            return Err(Error::shape(format!("gradient of `{name}` is {:?}, parameter {:?}", g.shape(), p.shape())));
        }
        let wd = if decays(name) { T::lit(state.weight_decay) } else { T::zero() };
        for ((pv, vv), &gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vv = m * *vv + gv + wd * *pv;
            *pv = *pv - lr * *vv;
        }
    }
    Ok(())
}
