//! Minimal reverse-mode autodiff and the layers the agent, policy and mixer
//! networks are built from.

pub mod graph;
pub mod layers;
pub mod optim;
pub mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use layers::{
    gru_step, mlp_forward, softmax, softmax_values, validate_mask, Activation, Gru, GruSpec, GruVars, Linear,
    LinearVars, Mlp, MlpSpec, MlpVars,
};
pub use optim::{Direction, RmsProp};
pub use tensor::{Parameterized, Tensor};

/// Soft target update `target ← τ · source + (1 − τ) · target`, elementwise.
pub fn soft_update<P: Parameterized + ?Sized>(target: &mut P, source: &P, tau: f64) -> crate::Result<()> {
    let src = source.params();
    let mut dst = target.params_mut();
    if src.len() != dst.len() {
        return Err(crate::Error::Shape("soft update between differently shaped networks".into()));
    }
    for (d, s) in dst.iter_mut().zip(&src) {
        if d.shape() != s.shape() {
            return Err(crate::Error::Shape(format!(
                "soft update shape {:?} vs {:?}",
                d.shape(),
                s.shape()
            )));
        }
        ndarray::Zip::from(d.value_mut()).and(s.value()).for_each(|t, &e| *t = tau * e + (1.0 - tau) * *t);
    }
    Ok(())
}
