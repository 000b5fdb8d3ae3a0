use serde::{Deserialize, Serialize};

use super::{Grads, ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
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

/// First and second moment accumulators, one pair per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl OptState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || {
            store
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape().to_vec()))
                .collect()
        };
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One bias-corrected Adam step. Parameters without a gradient entry see a
/// zero gradient (their moments still decay).
pub fn adam_update(
    store: &mut ParamStore,
    grads: &Grads,
    state: &mut OptState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if state.m.len() != store.len() || state.v.len() != store.len() {
        return Err(Error::shape(
            "adam_update",
            format!("{} params vs {} moment slots", store.len(), state.m.len()),
        ));
    }
    for (id, g) in grads.iter() {
        let p = store.get(id);
        if g.len() != p.numel() {
            return Err(Error::shape(
                "adam_update",
                format!("gradient for {} has {} entries, param {}", store.name(id), g.len(), p.numel()),
            ));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("gradient of {}", store.name(id))));
        }
    }
    for (i, p) in store.tensors().iter().enumerate() {
        if state.m[i].shape() != p.shape() || state.v[i].shape() != p.shape() {
            return Err(Error::shape("adam_update", format!("moment shape for param {i}")));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for id in store.ids().collect::<Vec<_>>() {
        let g = grads.get(id);
        let m = state.m[id.0].data_mut();
        let v = state.v[id.0].data_mut();
        let w = store.get_mut(id).data_mut();
        for j in 0..w.len() {
            let gj = g.map_or(0.0, |g| g[j]);
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            w[j] -= lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Graph;

    fn quadratic_grad(store: &ParamStore) -> (f64, Grads) {
        let id = store.ids().next().unwrap();
        let mut g = Graph::new();
        let w = g.param(store, id);
        let sq = g.mul(w, w).unwrap();
        let f = g.sum(sq);
        (g.value(f).item(), g.backward(f).unwrap())
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
        let before = store.clone();
        let mut state = OptState::new(&store);
        adam_update(&mut store, &Grads::default(), &mut state, 1e-2, &AdamConfig::default()).unwrap();
        assert_eq!(store, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn quadratic_decreases_every_step() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::scalar(1.0));
        let mut state = OptState::new(&store);
        let mut prev = f64::INFINITY;
        for _ in 0..100 {
            let (f, grads) = quadratic_grad(&store);
            assert!(f < prev, "f = {f} did not decrease from {prev}");
            prev = f;
            adam_update(&mut store, &grads, &mut state, 1e-2, &AdamConfig::default()).unwrap();
        }
        assert_eq!(state.step, 100);
    }

    #[test]
    fn first_step_is_bounded_by_lr() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::new(vec![2], vec![0.3, -0.7]).unwrap());
        let mut state = OptState::new(&store);
        let (_, grads) = quadratic_grad(&store);
        let before = store.get(id).clone();
        let lr = 1e-3;
        adam_update(&mut store, &grads, &mut state, lr, &AdamConfig::default()).unwrap();
        let g = grads.get(id).unwrap();
        for j in 0..2 {
            let dw = store.get(id).data()[j] - before.data()[j];
            assert!(dw * g[j] < 0.0, "step must oppose the gradient");
            assert!(dw.abs() <= lr * (1.0 + 1e-6));
        }
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::scalar(1.0));
        let mut state = OptState::new(&store);
        let mut g = Graph::new();
        let mut bad = ParamStore::new();
        let id = bad.add("w", Tensor::scalar(f64::INFINITY));
        let w = g.param(&bad, id);
        let s = g.scale(w, 0.0);
        // inf * 0 is NaN, so backward itself refuses
        let sum = g.sum(s);
        assert!(g.backward(sum).is_err());
        let mut grads = Grads::default();
        let mut inner = Graph::new();
        let p = inner.param(&store, id);
        let r = inner.sum(p);
        grads.accumulate(&inner.backward(r).unwrap());
        grads.scale(f64::NAN);
        assert!(adam_update(&mut store, &grads, &mut state, 1e-2, &AdamConfig::default()).is_err());
        assert_eq!(state.step, 0);
    }
}
