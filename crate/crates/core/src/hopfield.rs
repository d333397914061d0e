//! Modern Hopfield update, its energy function, and fixed-point iteration.
//!
//! Patterns are the columns of X (d x N); the update is
//! T(xi) = X softmax(beta X' xi), whose output is a convex combination of
//! the stored patterns.

use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::{self, Tensor};

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0) {
        return Err(Error::invalid_param("beta", format!("must be positive, got {beta}")));
    }
    Ok(())
}

fn check_shapes(x: &Tensor, xi: &Tensor) -> Result<()> {
    if x.rows() != xi.len() {
        return Err(Error::DimMismatch {
            op: "hopfield",
            left: x.shape().to_vec(),
            right: xi.shape().to_vec(),
        });
    }
    Ok(())
}

/// Softmax weights softmax(beta X' xi) over the stored patterns.
pub fn retrieval_weights(x: &Tensor, xi: &Tensor, beta: f64) -> Result<Tensor> {
    check_beta(beta)?;
    check_shapes(x, xi)?;
    let xi_col = Tensor::new(vec![xi.len(), 1], xi.data().to_vec())?;
    let scores = tensor::matmul(&x.transpose(), &xi_col)?; // N x 1
    let scaled = tensor::scale(&scores, beta);
    let flat = scaled.reshaped(&[x.cols()])?;
    Ok(tensor::softmax_rows(&flat))
}

/// One Hopfield update T(xi) = X softmax(beta X' xi).
pub fn hopfield_update(x: &Tensor, xi: &Tensor, beta: f64) -> Result<Tensor> {
    let w = retrieval_weights(x, xi, beta)?;
    let w_col = Tensor::new(vec![x.cols(), 1], w.into_data())?;
    let out = tensor::matmul(x, &w_col)?;
    out.reshaped(&[x.rows()])
}

/// Energy E(xi) = -(1/beta) log sum exp(beta X' xi) + 1/2 ||xi||^2
/// (constant term omitted). Satisfies T(xi) = xi - grad E(xi).
pub fn hopfield_energy(x: &Tensor, xi: &Tensor, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    check_shapes(x, xi)?;
    let xi_col = Tensor::new(vec![xi.len(), 1], xi.data().to_vec())?;
    let scores = tensor::matmul(&x.transpose(), &xi_col)?;
    let m = scores.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = beta * m
        + scores
            .data()
            .iter()
            .map(|&s| (beta * (s - m)).exp())
            .sum::<f64>()
            .ln();
    let sq: f64 = xi.data().iter().map(|v| v * v).sum();
    Ok(-lse / beta + 0.5 * sq)
}

/// Gradient of the energy with respect to xi, computed by reverse-mode
/// autodiff through the energy's primitive graph.
pub fn hopfield_energy_grad(x: &Tensor, xi: &Tensor, beta: f64) -> Result<Tensor> {
    check_beta(beta)?;
    check_shapes(x, xi)?;
    let mut tape = Tape::new();
    let xi_v = tape.param(Tensor::new(vec![xi.len(), 1], xi.data().to_vec())?);
    let xt = tape.constant(x.transpose());
    let scores = tape.matmul(xt, xi_v)?;
    let scaled = tape.scale(scores, beta);
    let lse = tape.logsumexp_all(scaled);
    let neg = tape.scale(lse, -1.0 / beta);
    let sq = tape.mul(xi_v, xi_v)?;
    let half = tape.sum_all(sq);
    let half = tape.scale(half, 0.5);
    let energy = tape.add(neg, half)?;
    let grads = tape.backward(energy)?;
    grads.get(xi_v, &tape).reshaped(&[xi.len()])
}

/// Iterate the update until successive iterates differ by at most `tol` in
/// l2 norm, or `max_steps` is reached. Non-convergence is reported through
/// the flag, never as an error.
pub fn hopfield_iterate(
    x: &Tensor,
    xi: &Tensor,
    beta: f64,
    max_steps: usize,
    tol: f64,
) -> Result<(Tensor, usize, bool)> {
    check_beta(beta)?;
    if max_steps < 1 {
        return Err(Error::invalid_param("max_steps", "must be at least 1"));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid_param("tol", "must be positive"));
    }
    let mut cur = xi.clone();
    for step in 1..=max_steps {
        let next = hopfield_update(x, &cur, beta)?;
        let delta = tensor::sub(&next, &cur)?.frobenius_norm();
        cur = next;
        if delta <= tol {
            return Ok((cur, step, true));
        }
    }
    Ok((cur, max_steps, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    #[test]
    fn single_pattern_always_retrieved() {
        let p = Tensor::new(vec![3, 1], vec![0.3, -0.7, 0.648]).unwrap();
        let xi = Tensor::new(vec![3], vec![10.0, -5.0, 0.0]).unwrap();
        let out = hopfield_update(&p, &xi, 2.0).unwrap();
        for (a, b) in out.data().iter().zip(p.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn high_beta_retrieves_nearest_stored_pattern() {
        let mut r = rng::stream(3, &[rng::tag::PROPERTY]);
        // well-separated unit patterns
        let mut x = Tensor::zeros(&[8, 3]);
        for j in 0..3 {
            x.set(2 * j, j, 1.0);
        }
        let xi: Vec<f64> = (0..8).map(|i| if i == 2 { 1.0 } else { 0.0 }).collect();
        let _ = &mut r;
        let xi = Tensor::new(vec![8], xi).unwrap();
        let out = hopfield_update(&x, &xi, 50.0).unwrap();
        for (i, v) in out.data().iter().enumerate() {
            let expect = if i == 2 { 1.0 } else { 0.0 };
            assert!((v - expect).abs() < 1e-6, "component {i}: {v}");
        }
    }

    #[test]
    fn beta_must_be_positive() {
        let x = Tensor::zeros(&[2, 2]);
        let xi = Tensor::zeros(&[2]);
        assert!(hopfield_update(&x, &xi, 0.0).is_err());
        assert!(hopfield_update(&x, &xi, -1.0).is_err());
    }

    #[test]
    fn energy_single_pattern_is_quadratic() {
        // N=1: E(xi) = -p'xi + 1/2||xi||^2, minimized at xi = p.
        let p = vec![0.6, -0.8];
        let x = Tensor::new(vec![2, 1], p.clone()).unwrap();
        for xi_data in [vec![0.0, 0.0], vec![1.0, 1.0], vec![0.6, -0.8]] {
            let xi = Tensor::new(vec![2], xi_data.clone()).unwrap();
            let e = hopfield_energy(&x, &xi, 3.0).unwrap();
            let dot: f64 = p.iter().zip(&xi_data).map(|(a, b)| a * b).sum();
            let sq: f64 = xi_data.iter().map(|v| v * v).sum();
            assert!((e - (-dot + 0.5 * sq)).abs() < 1e-12);
        }
        let at_min = hopfield_energy(&x, &Tensor::new(vec![2], p.clone()).unwrap(), 3.0).unwrap();
        let nearby = hopfield_energy(&x, &Tensor::new(vec![2], vec![0.7, -0.7]).unwrap(), 3.0).unwrap();
        assert!(at_min < nearby);
    }

    #[test]
    fn update_equals_xi_minus_energy_gradient() {
        let mut r = rng::stream(11, &[rng::tag::PROPERTY]);
        for _ in 0..20 {
            let x = Tensor::randn(&mut r, &[6, 4], 1.0);
            let xi = Tensor::randn(&mut r, &[6], 1.0);
            let beta = 0.5 + r.gen::<f64>() * 3.0;
            let t = hopfield_update(&x, &xi, beta).unwrap();
            let g = hopfield_energy_grad(&x, &xi, beta).unwrap();
            for i in 0..6 {
                let lhs = t.data()[i];
                let rhs = xi.data()[i] - g.data()[i];
                assert!((lhs - rhs).abs() < 1e-10, "component {i}: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn iterate_converges_from_stored_pattern() {
        let mut x = Tensor::zeros(&[6, 3]);
        x.set(0, 0, 1.0);
        x.set(2, 1, 1.0);
        x.set(4, 2, 1.0);
        let xi = Tensor::new(vec![6], vec![1.0, 0., 0., 0., 0., 0.]).unwrap();
        let (fixed, steps, converged) = hopfield_iterate(&x, &xi, 40.0, 50, 1e-10).unwrap();
        assert!(converged);
        assert!(steps <= 2, "took {steps} steps");
        assert!((fixed.data()[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn low_beta_collapses_all_starts_to_one_point() {
        let mut r = rng::stream(5, &[rng::tag::PROPERTY]);
        let x = Tensor::randn(&mut r, &[8, 5], 1.0);
        let mut fixed_points = Vec::new();
        for _ in 0..10 {
            let xi = Tensor::randn(&mut r, &[8], 2.0);
            let (fp, _, converged) = hopfield_iterate(&x, &xi, 0.05, 500, 1e-12).unwrap();
            assert!(converged);
            fixed_points.push(fp);
        }
        for fp in &fixed_points[1..] {
            let d = tensor::sub(fp, &fixed_points[0]).unwrap().frobenius_norm();
            assert!(d <= 1e-8, "fixed points differ by {d}");
        }
    }

    #[test]
    fn nonconvergence_reported_via_flag() {
        let mut r = rng::stream(6, &[rng::tag::PROPERTY]);
        let x = Tensor::randn(&mut r, &[4, 3], 1.0);
        let xi = Tensor::randn(&mut r, &[4], 1.0);
        let (_, steps, converged) = hopfield_iterate(&x, &xi, 1.0, 1, 1e-16).unwrap();
        assert_eq!(steps, 1);
        assert!(!converged);
    }
}
