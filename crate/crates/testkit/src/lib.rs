//! Slow, obviously-correct reference implementations. Nothing here shares
//! code with `psr-core`, so agreement between the two is evidence.

use nalgebra::DMatrix;

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues in descending order and the matching eigenvectors as columns.
pub fn jacobi_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "square input");
    let mut m = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        if off.sqrt() <= 1e-15 * m.norm().max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    (values, vectors)
}

/// Subtracts each row's mean.
pub fn center(y: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = y.clone();
    for mut row in out.row_iter_mut() {
        let mean = row.sum() / row.len() as f64;
        row.add_scalar_mut(-mean);
    }
    out
}

/// Reference GCCA: forms `M = sum_j Y_j^T (Y_j Y_j^T + eps I)^-1 Y_j` with
/// an explicit inverse and returns its top-`r` eigenvalues.
pub fn gcca_eigenvalues(views: &[DMatrix<f64>], r: usize, eps: f64) -> Vec<f64> {
    let n = views[0].ncols();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for y in views {
        let yc = center(y);
        let d = yc.nrows();
        let c = &yc * yc.transpose() + DMatrix::<f64>::identity(d, d) * eps;
        let inv = c.try_inverse().expect("invertible covariance");
        m += yc.transpose() * inv * &yc;
    }
    let m = (&m + m.transpose()) * 0.5;
    jacobi_eigen(&m).0.into_iter().take(r).collect()
}

/// Direct objective `sum_j ||G - U_j^T Y_j||_F^2` with ridge projections
/// `U_j = (Y_j Y_j^T + eps I)^-1 Y_j G^T` on centered views, for a given
/// `G` (`r x N`).
pub fn gcca_objective_for(views: &[DMatrix<f64>], g: &DMatrix<f64>, eps: f64) -> f64 {
    views
        .iter()
        .map(|y| {
            let yc = center(y);
            let d = yc.nrows();
            let c = &yc * yc.transpose() + DMatrix::<f64>::identity(d, d) * eps;
            let u = c.try_inverse().expect("invertible covariance") * &yc * g.transpose();
            (g - u.transpose() * &yc).norm_squared()
        })
        .sum()
}

/// Power spectrum of a real frame by the textbook O(n^2) DFT, bins `0..=n/2`.
pub fn dft_power(frame: &[f64]) -> Vec<f64> {
    let n = frame.len();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &x) in frame.iter().enumerate() {
                let ang = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                re += x * ang.cos();
                im += x * ang.sin();
            }
            re * re + im * im
        })
        .collect()
}

/// Levenshtein distance over chars via the full `(m+1) x (n+1)` table.
pub fn levenshtein_table(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in t.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        t[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = t[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            t[i][j] = sub.min(t[i - 1][j] + 1).min(t[i][j - 1] + 1);
        }
    }
    t[a.len()][b.len()]
}

/// Central finite-difference gradient of `f` at `x`.
pub fn central_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let plus = f(&probe);
            probe[i] = orig - h;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||, floor)`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_diff(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
