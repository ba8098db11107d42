//! Central finite differences for checking analytic gradients.

use crate::matrix::Matrix;

/// Numeric gradient of `f` with respect to `params[which]`, by central
/// differences with step `h`. `f` receives the perturbed parameter list.
pub fn numeric_gradient(
    f: impl Fn(&[Matrix]) -> f64,
    params: &[Matrix],
    which: usize,
    h: f64,
) -> Matrix {
    let mut work = params.to_vec();
    let (rows, cols) = params[which].shape();
    let mut g = Matrix::zeros(rows, cols);
    for i in 0..rows * cols {
        let x = params[which].as_slice()[i];
        work[which].as_mut_slice()[i] = x + h;
        let up = f(&work);
        work[which].as_mut_slice()[i] = x - h;
        let down = f(&work);
        work[which].as_mut_slice()[i] = x;
        g.as_mut_slice()[i] = (up - down) / (2.0 * h);
    }
    g
}

/// `‖a - b‖ / max(‖a‖, ‖b‖, floor)` in the Frobenius norm.
pub fn relative_error(a: &Matrix, b: &Matrix, floor: f64) -> f64 {
    let norm = |m: &Matrix| m.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff = a.zip_map(b, |x, y| x - y);
    norm(&diff) / norm(a).max(norm(b)).max(floor)
}
