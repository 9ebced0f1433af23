use super::{Float, Tensor};
use crate::{Error, Result};

/// Bias-corrected Adam moments for an ordered list of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Float> AdamState<T> {
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a [usize]>, beta1: T, beta2: T, eps: T) -> Self {
        let m: Vec<_> = shapes.into_iter().map(Tensor::zeros).collect();
        Self {
            v: m.clone(),
            m,
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }

    /// Moments with `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
    pub fn with_defaults<'a>(shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        Self::new(shapes, T::lit(0.9), T::lit(0.999), T::lit(1e-8))
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One Adam update of every `(name, parameter)` pair with its gradient.
    ///
    /// Nothing is modified when any gradient is non-finite.
    pub fn step(&mut self, params: &mut [(&str, &mut Tensor<T>)], grads: &[&Tensor<T>], lr: T) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "{} moments, {} parameters, {} gradients",
                    self.m.len(),
                    params.len(),
                    grads.len()
                ),
            ));
        }
        if !(lr > T::zero()) {
            return Err(Error::InvalidArgument(format!("learning rate {lr} must be positive")));
        }
        for (i, ((name, p), g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("{name}: parameter {:?}, gradient {:?}", p.shape(), g.shape()),
                ));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        for (i, ((_, p), g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *pv -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
