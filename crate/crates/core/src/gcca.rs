//! Closed-form linear generalized CCA.
//!
//! Given centered views `Y_j` (`d_j x N`), the shared representation `G`
//! (`r x N`, orthonormal rows) minimizing `sum_j ||G - U_j^T Y_j||_F^2` is
//! spanned by the top-`r` eigenvectors of
//! `M = sum_j Y_j^T (Y_j Y_j^T + eps I)^-1 Y_j`, and the per-view maps are
//! `U_j = (Y_j Y_j^T + eps I)^-1 Y_j G^T`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};
use crate::feature_io::DatasetViews;

/// Ridge added to every view covariance unless configured otherwise.
pub const DEFAULT_EPS: f64 = 1e-8;

/// Cholesky pivots below this ratio of the largest pivot count as singular
/// when no ridge is applied.
const SINGULAR_PIVOT_RATIO: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct GccaSolution {
    /// Shared representation, `r x N`, rows orthonormal.
    pub g: DMatrix<f64>,
    /// Per-view projections `U_j`, each `d_j x r`.
    pub projections: Vec<DMatrix<f64>>,
    /// Per-view column means removed before solving.
    pub means: Vec<DVector<f64>>,
    /// Top-`r` eigenvalues of `M`, descending.
    pub eigenvalues: Vec<f64>,
    /// `sum_j ||G - U_j^T Y_j||_F^2` on the centered training views.
    pub objective: f64,
    pub eps: f64,
}

impl GccaSolution {
    pub fn rank(&self) -> usize {
        self.g.nrows()
    }

    pub fn n_views(&self) -> usize {
        self.projections.len()
    }

    /// `J * r - sum(eigenvalues)`, which is exactly the ridge-penalized
    /// objective `objective + eps * sum_j ||U_j||_F^2`.
    pub fn eigen_objective(&self) -> f64 {
        (self.n_views() * self.rank()) as f64 - self.eigenvalues.iter().sum::<f64>()
    }

    /// `||G G^T - I||_F`.
    pub fn orthonormality_error(&self) -> f64 {
        let r = self.rank();
        (&self.g * self.g.transpose() - DMatrix::<f64>::identity(r, r)).norm()
    }
}

pub(crate) fn center_rows(y: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = y.ncols() as f64;
    let mean = y.column_sum() / n;
    let mut centered = y.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    (centered, mean)
}

/// Flips each row so that its largest-magnitude entry is positive.
fn fix_signs(g: &mut DMatrix<f64>) {
    for mut row in g.row_iter_mut() {
        let mut best = 0.0f64;
        for &v in row.iter() {
            if v.abs() > best.abs() {
                best = v;
            }
        }
        if best < 0.0 {
            row.neg_mut();
        }
    }
}

/// Indices of eigenvalues in descending order; stable for ties.
fn descending(eig: &SymmetricEigen<f64, Dyn>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    idx
}

/// Solves linear GCCA on raw (uncentered) `d_j x N` matrices.
pub fn solve_matrices(views: &[&DMatrix<f64>], r: usize, eps: f64) -> Result<GccaSolution> {
    if views.len() < 2 {
        return Err(Error::Invalid(format!("need at least 2 views, got {}", views.len())));
    }
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::InvalidConfig(format!("eps must be finite and >= 0, got {eps}")));
    }
    let n = views[0].ncols();
    for (j, y) in views.iter().enumerate() {
        if y.ncols() != n {
            return Err(Error::Shape(format!(
                "view {j} has {} columns, expected {n}",
                y.ncols()
            )));
        }
        if y.nrows() == 0 {
            return Err(Error::Shape(format!("view {j} has no rows")));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("view {j} has non-finite values")));
        }
    }
    let min_dim = views.iter().map(|y| y.nrows()).min().unwrap();
    let limit = min_dim.min(n.saturating_sub(1));
    if r == 0 || r > limit {
        return Err(Error::RankTooLarge { rank: r, limit });
    }

    let mut centered = Vec::with_capacity(views.len());
    let mut means = Vec::with_capacity(views.len());
    let mut factors = Vec::with_capacity(views.len());
    // whitened views: Z_j = L_j^-1 Y_j with L_j L_j^T = Y_j Y_j^T + eps I
    let mut whitened = Vec::with_capacity(views.len());
    for (j, y) in views.iter().enumerate() {
        let (yc, mean) = center_rows(y);
        let d = yc.nrows();
        let cov = &yc * yc.transpose() + DMatrix::<f64>::identity(d, d) * eps;
        let chol = Cholesky::new(cov).ok_or(Error::Singular(j))?;
        if eps == 0.0 {
            let diag = chol.l_dirty().diagonal();
            let (lo, hi) = (diag.min(), diag.max());
            if !(lo > SINGULAR_PIVOT_RATIO * hi) {
                return Err(Error::Singular(j));
            }
        }
        let z = chol
            .l_dirty()
            .solve_lower_triangular(&yc)
            .ok_or(Error::Singular(j))?;
        centered.push(yc);
        means.push(mean);
        factors.push(chol);
        whitened.push(z);
    }

    let total_dim: usize = whitened.iter().map(|z| z.nrows()).sum();
    let mut stacked = DMatrix::<f64>::zeros(total_dim, n);
    let mut offset = 0;
    for z in &whitened {
        stacked.rows_mut(offset, z.nrows()).copy_from(z);
        offset += z.nrows();
    }

    let (mut g, eigenvalues) = shared_basis(&stacked, r);
    fix_signs(&mut g);

    let j_max = views.len() as f64;
    let eigenvalues: Vec<f64> = eigenvalues.into_iter().map(|l| l.clamp(0.0, j_max)).collect();

    let gt = g.transpose();
    let projections: Vec<DMatrix<f64>> = factors
        .iter()
        .zip(&whitened)
        .map(|(chol, z)| {
            chol.l_dirty()
                .tr_solve_lower_triangular(&(z * &gt))
                .expect("triangular factor is nonsingular")
        })
        .collect();

    let projected: Vec<DMatrix<f64>> = projections
        .iter()
        .zip(&centered)
        .map(|(u, y)| u.transpose() * y)
        .collect();
    let objective = gcca_objective(&g, &projected)?;

    Ok(GccaSolution {
        g,
        projections,
        means,
        eigenvalues,
        objective,
        eps,
    })
}

/// Top-`r` eigenpairs of `Z^T Z` for stacked whitened views `Z`.
///
/// When `Z` has fewer rows than columns the eigenproblem is solved on the
/// smaller `Z Z^T` and lifted back; near-zero eigenvalues fall back to the
/// dense `N x N` problem.
fn shared_basis(z: &DMatrix<f64>, r: usize) -> (DMatrix<f64>, Vec<f64>) {
    let n = z.ncols();
    if z.nrows() < n {
        let gram = z * z.transpose();
        let eig = SymmetricEigen::new(gram);
        let order = descending(&eig);
        let top = eig.eigenvalues[order[0]].max(1.0);
        if eig.eigenvalues[order[r - 1]] > 1e-6 * top {
            let mut g = DMatrix::<f64>::zeros(r, n);
            let mut values = Vec::with_capacity(r);
            for (k, &i) in order.iter().take(r).enumerate() {
                let mu = eig.eigenvalues[i];
                let row = z.tr_mul(&eig.eigenvectors.column(i)) / mu.sqrt();
                g.row_mut(k).copy_from(&row.transpose());
                values.push(mu);
            }
            return (g, values);
        }
    }
    let m = z.tr_mul(z);
    let eig = SymmetricEigen::new(m);
    let order = descending(&eig);
    let mut g = DMatrix::<f64>::zeros(r, n);
    let mut values = Vec::with_capacity(r);
    for (k, &i) in order.iter().take(r).enumerate() {
        g.row_mut(k).copy_from(&eig.eigenvectors.column(i).transpose());
        values.push(eig.eigenvalues[i]);
    }
    (g, values)
}

/// Solves linear GCCA across all views of `views`.
pub fn solve_gcca(views: &DatasetViews, r: usize, eps: f64) -> Result<GccaSolution> {
    solve_matrices(&views.matrices(), r, eps)
}

/// `U_j^T (Y - mean_j)` for view `view_index`.
pub fn project(solution: &GccaSolution, view_index: usize, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let u = solution
        .projections
        .get(view_index)
        .ok_or_else(|| Error::Invalid(format!("no view {view_index} in solution")))?;
    if y.nrows() != u.nrows() {
        return Err(Error::Shape(format!(
            "view {view_index} expects {} rows, got {}",
            u.nrows(),
            y.nrows()
        )));
    }
    let mean = &solution.means[view_index];
    let mut centered = y.clone();
    for mut col in centered.column_iter_mut() {
        col -= mean;
    }
    Ok(u.transpose() * centered)
}

/// `sum_j ||G - P_j||_F^2`.
pub fn gcca_objective(g: &DMatrix<f64>, projected: &[DMatrix<f64>]) -> Result<f64> {
    let mut total = 0.0;
    for (j, p) in projected.iter().enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "projection {j} has shape {:?}, G has {:?}",
                p.shape(),
                g.shape()
            )));
        }
        total += (g - p).norm_squared();
    }
    Ok(total)
}
