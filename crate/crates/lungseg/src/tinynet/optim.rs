//! Stochastic gradient descent with momentum.
//!
//! Per parameter: v <- momentum * v + grad; w <- w - lr * v. Velocity
//! buffers live in the same store as the weights under a `v.` prefix so
//! they persist through checkpointing.

use super::store::{StoreError, TensorStore};
use super::tensor::Tensor4;

/// Prefix of the velocity buffer for a parameter name.
pub fn velocity_name(param: &str) -> String {
    format!("v.{param}")
}

/// Apply one SGD-with-momentum step to every gradient in `grads`.
/// Gradient tensors must match their parameters' shapes exactly.
pub fn sgd_momentum_step(
    store: &mut TensorStore,
    grads: &TensorStore,
    lr: f64,
    momentum: f64,
) -> Result<(), StoreError> {
    // Validate shapes up front so a partial step can never be applied.
    for (name, g) in grads.iter() {
        let p = store.get(name)?;
        if p.shape() != g.shape() {
            return Err(StoreError::ShapeMismatch {
                name: name.clone(),
                expected: p.shape(),
                found: g.shape(),
            });
        }
    }
    for (name, g) in grads.iter() {
        let vname = velocity_name(name);
        if !store.contains(&vname) {
            let (n, c, h, w) = g.shape();
            store.insert(vname.clone(), Tensor4::zeros(n, c, h, w));
        }
        let v = store.get_mut(&vname)?;
        for (vi, gi) in v.data.iter_mut().zip(&g.data) {
            *vi = momentum * *vi + gi;
        }
        let v_snapshot = v.data.clone();
        let p = store.get_mut(name)?;
        for (pi, vi) in p.data.iter_mut().zip(&v_snapshot) {
            *pi -= lr * vi;
        }
    }
    Ok(())
}
