//! Convex-hull distance as a simplex-constrained quadratic program.
//!
//! min_alpha ||o - V' alpha|| over the probability simplex, solved by
//! accelerated projected gradient (FISTA with function restart) with the
//! exact sort-based Euclidean projection onto the simplex, initialized at
//! the uniform distribution.

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};
use serde::Serialize;

/// Outcome of a hull-distance solve.
#[derive(Debug, Clone, Serialize)]
pub struct HullResult {
    /// Euclidean distance from the point to the hull.
    pub distance: f64,
    /// Simplex weights over the generating rows.
    pub weights: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Exact Euclidean projection onto {x : x_i >= 0, sum x = 1} (sort-based).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut css = 0.0;
    let mut rho = 0;
    let mut tau = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        css += ui;
        let t = (css - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            rho = i + 1;
            tau = t;
        }
    }
    debug_assert!(rho > 0);
    v.iter().map(|&x| (x - tau).max(0.0)).collect()
}

/// Distance from `o` (length d) to the convex hull of the rows of `v` (t x d).
///
/// Converges to a projected-gradient KKT residual below `tol`; if `max_iter`
/// is exhausted first the result carries `converged = false`.
pub fn hull_distance(o: &Tensor, v: &Tensor, tol: f64, max_iter: usize) -> Result<HullResult> {
    let t = v.rows();
    let d = v.cols();
    if o.len() != d {
        return Err(Error::DimMismatch {
            op: "hull_distance",
            left: o.shape().to_vec(),
            right: v.shape().to_vec(),
        });
    }
    if t == 0 {
        return Err(Error::invalid_param("v", "needs at least one generator row"));
    }

    // Gram matrix and linear term: grad(alpha) = G alpha - b.
    let g = tensor::matmul_tb(v, v)?;
    let o_row = Tensor::new(vec![1, d], o.data().to_vec())?;
    let b: Vec<f64> = tensor::matmul_tb(v, &o_row)?.into_data();

    let grad = |alpha: &[f64], out: &mut Vec<f64>| {
        out.clear();
        for i in 0..t {
            let gi: f64 = g.row(i).iter().zip(alpha).map(|(x, y)| x * y).sum();
            out.push(gi - b[i]);
        }
    };

    let dist_of = |alpha: &[f64]| -> f64 {
        let mut sq = 0.0;
        for j in 0..d {
            let mut r = o.data()[j];
            for (i, &a) in alpha.iter().enumerate() {
                r -= a * v.at(i, j);
            }
            sq += r * r;
        }
        sq.sqrt()
    };

    let obj = |alpha: &[f64]| -> f64 {
        let dd = dist_of(alpha);
        0.5 * dd * dd
    };

    if t == 1 {
        return Ok(HullResult {
            distance: dist_of(&[1.0]),
            weights: vec![1.0],
            iterations: 0,
            converged: true,
        });
    }

    // Gershgorin bound on the largest eigenvalue of G: always safe.
    let lip = (0..t)
        .map(|i| g.row(i).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0f64, f64::max)
        .max(1e-300);
    let step = 1.0 / lip;

    let mut alpha = vec![1.0 / t as f64; t];
    let mut y = alpha.clone();
    let mut tk = 1.0f64;
    let mut gbuf = Vec::with_capacity(t);
    let mut fx = obj(&alpha);
    let mut iterations = 0;
    let mut converged = false;

    for it in 0..max_iter {
        iterations = it + 1;
        grad(&y, &mut gbuf);
        let cand: Vec<f64> = y.iter().zip(&gbuf).map(|(a, g)| a - step * g).collect();
        let next = project_simplex(&cand);
        let f_next = obj(&next);

        // Function restart: drop momentum when the objective rises.
        if f_next > fx {
            y = alpha.clone();
            tk = 1.0;
            grad(&y, &mut gbuf);
            let cand: Vec<f64> = y.iter().zip(&gbuf).map(|(a, g)| a - step * g).collect();
            let next = project_simplex(&cand);
            let f_next = obj(&next);
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * tk * tk).sqrt());
            y = next.clone();
            alpha = next;
            fx = f_next;
            tk = t_next;
        } else {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * tk * tk).sqrt());
            let beta = (tk - 1.0) / t_next;
            y = next
                .iter()
                .zip(&alpha)
                .map(|(n, a)| n + beta * (n - a))
                .collect();
            alpha = next;
            fx = f_next;
            tk = t_next;
        }

        // KKT residual: fixed-point gap of the unit-step projected gradient.
        grad(&alpha, &mut gbuf);
        let fp: Vec<f64> = alpha.iter().zip(&gbuf).map(|(a, g)| a - g).collect();
        let proj = project_simplex(&fp);
        let res = alpha
            .iter()
            .zip(&proj)
            .map(|(a, p)| (a - p).abs())
            .fold(0.0f64, f64::max);
        if res <= tol {
            converged = true;
            break;
        }
    }

    Ok(HullResult {
        distance: dist_of(&alpha),
        weights: alpha,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_lands_on_simplex() {
        for v in [vec![0.5, 0.5], vec![2.0, -1.0, 0.4], vec![-3.0, -4.0, -5.0]] {
            let p = project_simplex(&v);
            let sum: f64 = p.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "{p:?}");
            assert!(p.iter().all(|&x| x >= 0.0));
        }
        // already on the simplex: unchanged
        let p = project_simplex(&[0.25, 0.75]);
        assert!((p[0] - 0.25).abs() < 1e-12 && (p[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn vertex_case_distance_zero() {
        let v = Tensor::new(vec![3, 2], vec![0., 0., 1., 0., 0., 1.]).unwrap();
        let o = Tensor::new(vec![2], vec![1.0, 0.0]).unwrap();
        let r = hull_distance(&o, &v, 1e-9, 10_000).unwrap();
        assert!(r.converged);
        assert!(r.distance <= 1e-8, "distance {}", r.distance);
    }

    #[test]
    fn segment_case_has_known_answer() {
        // hull of (0,0) and (1,0); o = (0.5, 1): nearest point (0.5, 0).
        let v = Tensor::new(vec![2, 2], vec![0., 0., 1., 0.]).unwrap();
        let o = Tensor::new(vec![2], vec![0.5, 1.0]).unwrap();
        let r = hull_distance(&o, &v, 1e-9, 10_000).unwrap();
        assert!(r.converged);
        assert!((r.distance - 1.0).abs() < 1e-8);
        assert!((r.weights[0] - 0.5).abs() < 1e-7 && (r.weights[1] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn single_generator() {
        let v = Tensor::new(vec![1, 3], vec![1., 2., 3.]).unwrap();
        let o = Tensor::new(vec![3], vec![1., 2., 7.]).unwrap();
        let r = hull_distance(&o, &v, 1e-9, 10).unwrap();
        assert!((r.distance - 4.0).abs() < 1e-12);
        assert_eq!(r.weights, vec![1.0]);
    }

    #[test]
    fn weights_reconstruct_distance() {
        let v = Tensor::new(vec![4, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1., 1., 1., 1.]).unwrap();
        let o = Tensor::new(vec![3], vec![2.0, -0.3, 0.1]).unwrap();
        let r = hull_distance(&o, &v, 1e-9, 10_000).unwrap();
        let sum: f64 = r.weights.iter().sum();
        assert!((sum - 1.0).abs() < 1e-10);
        assert!(r.weights.iter().all(|&w| w >= -1e-12));
        // recompute distance from the weights
        let mut sq = 0.0;
        for j in 0..3 {
            let mut x = o.data()[j];
            for i in 0..4 {
                x -= r.weights[i] * v.at(i, j);
            }
            sq += x * x;
        }
        assert!((sq.sqrt() - r.distance).abs() < 1e-8);
    }
}
