//! Central finite-difference gradient checking.
//!
//! The checker only ever calls the forward evaluation closure, so it stays
//! independent of the reverse-mode path it is used to validate.

use crate::tensor::Tensor;

/// Central finite differences of `f` at `params`, one tensor of partials per
/// parameter tensor.
pub fn finite_diff_grads(
    f: &mut dyn FnMut(&[Tensor]) -> f64,
    params: &[Tensor],
    step: f64,
) -> Vec<Tensor> {
    let mut work: Vec<Tensor> = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let mut g = Tensor::zeros(params[pi].shape());
        for j in 0..params[pi].len() {
            let orig = work[pi].data()[j];
            work[pi].data_mut()[j] = orig + step;
            let up = f(&work);
            work[pi].data_mut()[j] = orig - step;
            let down = f(&work);
            work[pi].data_mut()[j] = orig;
            g.data_mut()[j] = (up - down) / (2.0 * step);
        }
        out.push(g);
    }
    out
}

/// Worst relative disagreement between analytic and finite-difference
/// gradients. Each element is normalized by the larger of the two values and
/// the tensor's overall gradient scale, so near-zero components of an
/// otherwise O(1) gradient do not produce spurious blowups.
pub fn max_rel_error(analytic: &[Tensor], numeric: &[Tensor]) -> f64 {
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric) {
        assert_eq!(a.shape(), n.shape(), "gradient shape mismatch");
        let scale = a
            .data()
            .iter()
            .chain(n.data())
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1e-12);
        for (&x, &y) in a.data().iter().zip(n.data()) {
            let denom = x.abs().max(y.abs()).max(scale);
            worst = worst.max((x - y).abs() / denom);
        }
    }
    worst
}

/// Convenience: compare analytic gradients against central differences of
/// `f` and return the worst relative error.
pub fn check(
    f: &mut dyn FnMut(&[Tensor]) -> f64,
    params: &[Tensor],
    analytic: &[Tensor],
    step: f64,
) -> f64 {
    let numeric = finite_diff_grads(f, params, step);
    max_rel_error(analytic, &numeric)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;
    use crate::tensor;

    #[test]
    fn quadratic_gradient_checks_out() {
        let params = vec![Tensor::new(vec![3], vec![1.0, -0.5, 2.0]).unwrap()];
        let mut f = |p: &[Tensor]| p[0].data().iter().map(|v| v * v).sum::<f64>();
        let fd = finite_diff_grads(&mut f, &params, 1e-5);
        let expect = tensor::scale(&params[0], 2.0);
        assert!(max_rel_error(&[expect], &fd) < 1e-9);
    }

    #[test]
    fn tape_matmul_chain_passes_fd() {
        let a = Tensor::new(vec![2, 3], vec![0.3, -1.2, 0.7, 0.1, 0.9, -0.4]).unwrap();
        let b = Tensor::new(vec![3, 2], vec![1.0, 0.2, -0.3, 0.8, 0.5, -0.9]).unwrap();
        let params = vec![a, b];
        let mut f = |p: &[Tensor]| {
            let mut t = Tape::new();
            let va = t.param(p[0].clone());
            let vb = t.param(p[1].clone());
            let y = t.matmul(va, vb).unwrap();
            let sm = t.softmax_rows(y);
            let s = t.sum_all(sm);
            let sq = t.mul(s, s).unwrap();
            t.value(sq).item()
        };
        let mut t = Tape::new();
        let va = t.param(params[0].clone());
        let vb = t.param(params[1].clone());
        let y = t.matmul(va, vb).unwrap();
        let sm = t.softmax_rows(y);
        let s = t.sum_all(sm);
        let sq = t.mul(s, s).unwrap();
        let g = t.backward(sq).unwrap();
        let analytic = vec![g.get(va, &t), g.get(vb, &t)];
        assert!(check(&mut f, &params, &analytic, 1e-5) < 1e-7);
    }
}
