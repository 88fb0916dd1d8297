use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gcca::{center_rows, solve_matrices, GccaSolution};

#[derive(Debug, Clone)]
pub struct LossAndGrad {
    pub loss: f64,
    /// d loss / d output for each view, same shape as the outputs.
    pub grads: Vec<DMatrix<f64>>,
    pub solution: GccaSolution,
}

/// GCCA loss `J r - sum(lambda)` of a batch of network outputs and its
/// gradient with respect to each (uncentered) output matrix.
///
/// The batch is centered and the linear GCCA subproblem is solved exactly.
/// With the ridge covariance `Y Y^T + eps I`, `2 (U_j U_j^T Y_j - U_j G)` is
/// the exact gradient of this loss; it is pulled back through the centering.
/// The loss exceeds the residual objective by `eps * sum_j ||U_j||_F^2`.
pub fn dgcca_loss_and_grad(outputs: &[DMatrix<f64>], r: usize, eps: f64) -> Result<LossAndGrad> {
    if let Some(b) = outputs.first().map(|y| y.ncols()) {
        if b < r + 1 {
            return Err(Error::RankTooLarge {
                rank: r,
                limit: b.saturating_sub(1),
            });
        }
    }
    if outputs.iter().any(|y| y.iter().any(|v| !v.is_finite())) {
        return Err(Error::Invalid("non-finite network outputs".into()));
    }
    let refs: Vec<&DMatrix<f64>> = outputs.iter().collect();
    let solution = solve_matrices(&refs, r, eps)?;
    let grads = outputs
        .iter()
        .zip(&solution.projections)
        .map(|(y, u)| {
            let (yc, _) = center_rows(y);
            let g = (u * (u.transpose() * yc) - u * &solution.g) * 2.0;
            center_rows(&g).0
        })
        .collect();
    Ok(LossAndGrad {
        loss: solution.eigen_objective(),
        grads,
        solution,
    })
}
