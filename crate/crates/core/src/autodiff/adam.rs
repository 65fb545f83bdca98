//! Adam optimizer with bias correction.

use ndarray::Array2;

use super::Real;

/// Per-parameter moment accumulators plus the step counter. One state
/// drives one parameter set; tensors are matched by position.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    alpha: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<Array2<T>>,
    v: Vec<Array2<T>>,
    step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(alpha: f64, shapes: &[(usize, usize)]) -> Self {
        Self {
            alpha,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            v: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// One bias-corrected update over all parameters in place.
    pub fn step(&mut self, params: &mut [&mut Array2<T>], grads: &[Array2<T>]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let t = self.step as f64;
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one = T::one();
        let corr1 = T::from_f64(1.0 - self.beta1.powf(t));
        let corr2 = T::from_f64(1.0 - self.beta2.powf(t));
        let alpha = T::from_f64(self.alpha);
        let eps = T::from_f64(self.eps);

        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            debug_assert_eq!(p.dim(), g.dim());
            azip_update(m, v, p, g, b1, b2, one, corr1, corr2, alpha, eps);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn azip_update<T: Real>(
    m: &mut Array2<T>,
    v: &mut Array2<T>,
    p: &mut Array2<T>,
    g: &Array2<T>,
    b1: T,
    b2: T,
    one: T,
    corr1: T,
    corr2: T,
    alpha: T,
    eps: T,
) {
    ndarray::Zip::from(m)
        .and(v)
        .and(&mut **p)
        .and(g)
        .for_each(|m, v, p, &g| {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / corr1;
            let v_hat = *v / corr2;
            *p = *p - alpha * m_hat / (v_hat.sqrt() + eps);
        });
}
