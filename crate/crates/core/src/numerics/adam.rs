use super::{NumericsError, Result, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
///
/// Moments are kept per parameter tensor, in the order the parameters are
/// passed to [`Adam::step`].
#[derive(Clone, Debug)]
pub struct Adam<F = f32> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor<F>>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape())))
            .unzip();
        Self { config, step: 0, m, v }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor<F>] {
        &self.m
    }

    /// Applies one update. `lr_scale[i]` multiplies the learning rate of
    /// parameter `i` (all ones when `None`).
    pub fn step(&mut self, params: &mut [&mut Tensor<F>], grads: &[Tensor<F>], lr_scale: Option<&[F]>) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NumericsError::Shape {
                op: "adam_step",
                lhs: vec![self.m.len()],
                rhs: vec![params.len(), grads.len()],
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.m[i].shape() || g.shape() != self.m[i].shape() {
                return Err(NumericsError::Shape {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        if let Some(s) = lr_scale {
            if s.len() != params.len() {
                return Err(NumericsError::Shape {
                    op: "adam_step",
                    lhs: vec![params.len()],
                    rhs: vec![s.len()],
                });
            }
        }

        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let (b1, b2) = (F::lit(c.beta1), F::lit(c.beta2));
        let correction1 = F::lit(1.0 - c.beta1.powi(t));
        let correction2 = F::lit(1.0 - c.beta2.powi(t));
        let eps = F::lit(c.eps);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let lr = F::lit(c.lr) * lr_scale.map_or(F::one(), |s| s[i]);
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = b1 * *mi + (F::one() - b1) * gi;
                *vi = b2 * *vi + (F::one() - b2) * gi * gi;
                let m_hat = *mi / correction1;
                let v_hat = *vi / correction2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<F: Scalar>(grads: &mut [Tensor<F>], max_norm: F) -> F {
    let norm = grads.iter().map(Tensor::sq_norm).sum::<F>().sqrt();
    if norm > max_norm && norm > F::zero() {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Tensor::vector(vec![1.0f32, -2.0]);
        let mut adam = Adam::new(AdamConfig::default(), [&p]);
        adam.step(&mut [&mut p], &[Tensor::zeros(&[2])], None).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
        assert_eq!(adam.steps_taken(), 1);
        adam.step(&mut [&mut p], &[Tensor::zeros(&[2])], None).unwrap();
        assert_eq!(adam.steps_taken(), 2);
    }

    #[test]
    fn scalar_recurrence() {
        // Oracle: m_t = 0.9 m + 0.1, v_t = 0.999 v + 0.001, bias-corrected ratio.
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut p = Tensor::scalar(0.0f64);
        let mut adam = Adam::new(cfg, [&p]);
        let (mut m, mut v, mut w) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=5 {
            adam.step(&mut [&mut p], &[Tensor::scalar(1.0)], None).unwrap();
            m = 0.9 * m + 0.1;
            v = 0.999 * v + 0.001;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= 0.1 * mh / (vh.sqrt() + 1e-8);
            assert!((p.item().unwrap() - w).abs() < 1e-12);
            if t == 1 {
                assert!((w + 0.1).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn identical_pairs_update_identically() {
        let mut a = Tensor::vector(vec![0.3f32, -0.7]);
        let mut b = a.clone();
        let g = Tensor::vector(vec![0.5f32, -1.5]);
        let mut adam = Adam::new(AdamConfig::default(), [&a, &b]);
        for _ in 0..3 {
            adam.step(&mut [&mut a, &mut b], &[g.clone(), g.clone()], None).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = Tensor::<f32>::zeros(&[2]);
        let mut adam = Adam::new(AdamConfig::default(), [&p]);
        assert!(adam.step(&mut [&mut p], &[Tensor::zeros(&[3])], None).is_err());
        assert_eq!(adam.steps_taken(), 0);
    }

    #[test]
    fn moments_match_parameter_shapes() {
        let p = Tensor::<f32>::zeros(&[3, 4]);
        let adam = Adam::new(AdamConfig::default(), [&p]);
        assert_eq!(adam.first_moments()[0].shape(), &[3, 4]);
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let mut g = vec![Tensor::vector(vec![3.0f32]), Tensor::vector(vec![4.0f32])];
        let before = clip_grad_norm(&mut g, 1.0);
        assert_eq!(before, 5.0);
        let after: f32 = g.iter().map(|t| t.sq_norm()).sum::<f32>().sqrt();
        assert!((after - 1.0).abs() < 1e-6);
    }
}
