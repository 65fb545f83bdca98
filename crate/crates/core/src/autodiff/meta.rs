//! Gradient through a gradient step.
//!
//! Computes d(outer)/d(aux) where the outer loss is evaluated at
//! `primary⁺ = primary − α · ∇_primary inner(primary, aux)`. Because
//! `Tape::backward` emits differentiable gradient nodes, the mixed
//! second-order term arrives by simply differentiating the recorded
//! inner gradient; no approximation is involved.

use ndarray::Array2;

use super::{Real, Tape, Var};
use crate::error::Result;

/// Exact meta-gradient of `outer(primary⁺)` with respect to `aux`.
///
/// `inner` builds the inner scalar loss from (tape, primary leaves, aux
/// leaves). `outer` builds the outer scalar loss from (tape, updated
/// primary vars, aux leaves). The inner step is one plain gradient
/// descent update at rate `alpha`.
pub fn grad_through_update<T, FI, FO>(
    primary: &[Array2<T>],
    aux: &[Array2<T>],
    alpha: f64,
    inner: FI,
    outer: FO,
) -> Result<Vec<Array2<T>>>
where
    T: Real,
    FI: FnOnce(&Tape<T>, &[Var], &[Var]) -> Var,
    FO: FnOnce(&Tape<T>, &[Var], &[Var]) -> Var,
{
    let tape = Tape::<T>::new();
    let p_vars: Vec<Var> = primary.iter().map(|p| tape.param(p.clone())).collect();
    let a_vars: Vec<Var> = aux.iter().map(|a| tape.param(a.clone())).collect();

    let inner_loss = inner(&tape, &p_vars, &a_vars);
    let inner_grads = tape.backward(inner_loss, &p_vars)?;

    let updated: Vec<Var> = p_vars
        .iter()
        .zip(&inner_grads)
        .map(|(&p, &g)| tape.sub(p, tape.scale(g, alpha)))
        .collect();

    let outer_loss = outer(&tape, &updated, &a_vars);
    tape.backward_values(outer_loss, &a_vars)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::finite_diff_check;
    use ndarray::array;

    // inner L = (theta - eta)^2, outer L = (theta+)^2 with
    // theta+ = theta - alpha * 2(theta - eta).
    // Analytic meta-gradient: dL/deta = 2 theta+ * 2 alpha.
    fn scalar_toy(theta0: f64, eta0: f64, alpha: f64) -> (f64, f64) {
        let grads = grad_through_update(
            &[array![[theta0]]],
            &[array![[eta0]]],
            alpha,
            |tape, p, a| tape.sum_all(tape.square(tape.sub(p[0], a[0]))),
            |tape, p, _| tape.sum_all(tape.square(p[0])),
        )
        .unwrap();
        let theta_plus = theta0 - alpha * 2.0 * (theta0 - eta0);
        (grads[0][(0, 0)], 2.0 * theta_plus * 2.0 * alpha)
    }

    #[test]
    fn scalar_toy_matches_closed_form() {
        for (t, e, a) in [(1.5, 0.2, 0.1), (-0.7, 1.1, 0.01), (2.0, 2.0, 0.5)] {
            let (got, want) = scalar_toy(t, e, a);
            assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
        }
    }

    #[test]
    fn scalar_toy_matches_finite_differences() {
        let theta0 = 0.9;
        let alpha = 0.05;
        let eta = array![[0.3]];
        let meta = grad_through_update(
            &[array![[theta0]]],
            &[eta.clone()],
            alpha,
            |tape, p, a| tape.sum_all(tape.square(tape.sub(p[0], a[0]))),
            |tape, p, _| tape.sum_all(tape.square(p[0])),
        )
        .unwrap();

        let loss = |ps: &[Array2<f64>]| {
            let e = ps[0][(0, 0)];
            let theta_plus = theta0 - alpha * 2.0 * (theta0 - e);
            theta_plus * theta_plus
        };
        let report = finite_diff_check(loss, &[eta], &meta, 1e-6, 1e-6);
        assert!(report.passed(), "rel err {}", report.max_rel_error);
    }

    #[test]
    fn inner_loss_independent_of_aux_gives_zero() {
        let grads = grad_through_update(
            &[array![[2.0]]],
            &[array![[5.0]]],
            0.1,
            |tape, p, _| tape.sum_all(tape.square(p[0])),
            |tape, p, _| tape.sum_all(tape.square(p[0])),
        )
        .unwrap();
        assert_eq!(grads[0][(0, 0)], 0.0);
    }

    #[test]
    fn zero_alpha_gives_exactly_zero() {
        let grads = grad_through_update(
            &[array![[2.0]]],
            &[array![[5.0]]],
            0.0,
            |tape, p, a| tape.sum_all(tape.square(tape.sub(p[0], a[0]))),
            |tape, p, _| tape.sum_all(tape.square(p[0])),
        )
        .unwrap();
        assert_eq!(grads[0][(0, 0)], 0.0);
    }
}
