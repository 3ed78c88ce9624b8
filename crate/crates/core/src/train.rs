//! Shared optimizer plumbing for the training loops.

use crate::error::Result;
use crate::numerics::{clip_grad_norm, Adam, Gradients, Tape, Tensor, Var};

/// Gathers gradients for bound parameters, clips them by global norm and
/// applies one Adam step.
pub(crate) struct Updater {
    adam: Adam<f32>,
    clip_norm: Option<f32>,
    lr_scale: Option<Vec<f32>>,
}

impl Updater {
    pub(crate) fn new(adam: Adam<f32>, clip_norm: Option<f32>, lr_scale: Option<Vec<f32>>) -> Self {
        Self {
            adam,
            clip_norm,
            lr_scale,
        }
    }

    /// `params[i]` must be the tensor bound as `vars[i]`.
    pub(crate) fn step(
        &mut self,
        mut params: Vec<&mut Tensor<f32>>,
        tape: &Tape<f32>,
        grads: &Gradients<f32>,
        vars: &[Var],
    ) -> Result<f32> {
        let mut g: Vec<Tensor<f32>> = vars.iter().map(|&v| grads.wrt(tape, v)).collect();
        let norm = match self.clip_norm {
            Some(max) => clip_grad_norm(&mut g, max),
            None => g.iter().map(Tensor::sq_norm).sum::<f32>().sqrt(),
        };
        self.adam.step(&mut params, &g, self.lr_scale.as_deref())?;
        Ok(norm)
    }
}
