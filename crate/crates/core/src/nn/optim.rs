use super::params::{Gradients, ParamKind, ParamStore};
use crate::error::{contract_err, dim_err, Result};
use crate::tensor::Tensor;

/// SGD with classic (heavy-ball) momentum.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocities: Vec<Option<Tensor>>,
}

impl OptimizerState {
    pub fn new(store: &ParamStore, learning_rate: f64, momentum: f64, weight_decay: f64) -> Self {
        let velocities = store
            .entries()
            .iter()
            .map(|e| (e.kind == ParamKind::Trainable).then(|| Tensor::zeros(e.value.shape())))
            .collect();
        Self {
            learning_rate,
            momentum,
            weight_decay,
            velocities,
        }
    }

    pub fn velocity(&self, index: usize) -> Option<&Tensor> {
        self.velocities.get(index).and_then(|v| v.as_ref())
    }
}

/// `v ← μ·v + (g + λ·p)`, `p ← p − lr·v` for every trainable parameter.
///
/// Fails without touching any parameter if a trainable parameter has no
/// gradient or a gradient of the wrong shape.
pub fn sgd_step(store: &mut ParamStore, grads: &Gradients, state: &mut OptimizerState) -> Result<()> {
    if state.velocities.len() != store.len() {
        return contract_err("optimizer state was built for a different parameter set");
    }
    for (i, e) in store.entries().iter().enumerate() {
        if e.kind != ParamKind::Trainable {
            continue;
        }
        match grads.0.get(i).and_then(|g| g.as_ref()) {
            None => return contract_err(format!("missing gradient for `{}`", e.name)),
            Some(g) if g.shape() != e.value.shape() => {
                return dim_err(format!("gradient shape mismatch for `{}`", e.name))
            }
            Some(_) => {}
        }
    }
    let (lr, mu, wd) = (state.learning_rate, state.momentum, state.weight_decay);
    for (i, e) in store.entries_mut().iter_mut().enumerate() {
        let (Some(v), Some(g)) = (state.velocities[i].as_mut(), grads.0[i].as_ref()) else {
            continue;
        };
        let p = e.value.data_mut();
        for ((p, v), g) in p.iter_mut().zip(v.data_mut()).zip(g.data()) {
            *v = mu * *v + g + wd * *p;
            *p -= lr * *v;
        }
    }
    Ok(())
}
