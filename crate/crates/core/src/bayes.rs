//! Closed-form Bayes-optimal denoiser for the Gaussian pattern-retrieval
//! task: the posterior mean over stored patterns, which equals softmax
//! attention with inverse temperature 1/sigma^2 and identity projections.

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

fn check(patterns: &Tensor, sigma: f64) -> Result<()> {
    if !(sigma > 0.0) {
        return Err(Error::invalid_param("sigma", format!("must be positive, got {sigma}")));
    }
    for i in 0..patterns.rows() {
        let n: f64 = patterns.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::Contract(format!("pattern row {i} has norm {n}, expected unit")));
        }
    }
    Ok(())
}

/// Posterior-mean denoiser for a single query.
pub fn bayes_optimal_denoiser(patterns: &Tensor, query: &Tensor, sigma: f64) -> Result<Tensor> {
    check(patterns, sigma)?;
    if query.len() != patterns.cols() {
        return Err(Error::DimMismatch {
            op: "bayes_optimal_denoiser",
            left: patterns.shape().to_vec(),
            right: query.shape().to_vec(),
        });
    }
    let q = Tensor::new(vec![1, query.len()], query.data().to_vec())?;
    let out = bayes_denoise_batch(patterns, &q, sigma)?;
    out.reshaped(&[patterns.cols()])
}

/// Posterior-mean denoiser for a batch of query rows.
pub fn bayes_denoise_batch(patterns: &Tensor, queries: &Tensor, sigma: f64) -> Result<Tensor> {
    check(patterns, sigma)?;
    let scores = tensor::matmul_tb(queries, patterns)?;
    let scaled = tensor::scale(&scores, 1.0 / (sigma * sigma));
    let weights = tensor::softmax_rows(&scaled);
    tensor::matmul(&weights, patterns)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pattern_returned_exactly() {
        let p = Tensor::new(vec![1, 2], vec![0.6, 0.8]).unwrap();
        let q = Tensor::new(vec![2], vec![5.0, -3.0]).unwrap();
        let out = bayes_optimal_denoiser(&p, &q, 0.5).unwrap();
        assert_eq!(out.data(), &[0.6, 0.8]);
    }

    #[test]
    fn low_noise_limit_snaps_to_nearest_pattern() {
        let s = 1.0 / (2.0f64).sqrt();
        let p = Tensor::new(vec![2, 2], vec![1.0, 0.0, s, s]).unwrap();
        let q = Tensor::new(vec![2], vec![0.95, 0.05]).unwrap();
        let out = bayes_optimal_denoiser(&p, &q, 0.05).unwrap();
        assert!((out.data()[0] - 1.0).abs() < 1e-6);
        assert!(out.data()[1].abs() < 1e-6);
    }

    #[test]
    fn sigma_must_be_positive() {
        let p = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        let q = Tensor::new(vec![2], vec![1.0, 0.0]).unwrap();
        assert!(bayes_optimal_denoiser(&p, &q, 0.0).is_err());
    }

    #[test]
    fn rejects_non_unit_patterns() {
        let p = Tensor::new(vec![1, 2], vec![2.0, 0.0]).unwrap();
        let q = Tensor::new(vec![2], vec![1.0, 0.0]).unwrap();
        assert!(bayes_optimal_denoiser(&p, &q, 0.5).is_err());
    }

    #[test]
    fn matches_hopfield_update_with_identity_projections() {
        use crate::hopfield::hopfield_update;
        let s = 1.0 / (2.0f64).sqrt();
        let p = Tensor::new(vec![3, 2], vec![1.0, 0.0, 0.0, 1.0, s, s]).unwrap();
        let q = Tensor::new(vec![2], vec![0.3, -0.8]).unwrap();
        let sigma = 0.7;
        let ours = bayes_optimal_denoiser(&p, &q, sigma).unwrap();
        // Hopfield form: patterns as columns, beta = 1/sigma^2.
        let x = p.transpose();
        let theirs = hopfield_update(&x, &q, 1.0 / (sigma * sigma)).unwrap();
        for (a, b) in ours.data().iter().zip(theirs.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
