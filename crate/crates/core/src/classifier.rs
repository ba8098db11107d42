//! Cosine-similarity node classifier with temperature.
//!
//! `ŷ = softmax((W_cᵀ e / ‖e‖) / T)`. The columns of `W_c` act as class
//! prototypes; there is no bias term. All logarithms are natural.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::encoders::glorot_uniform;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Epsilon of the embedding L2 normalization.
pub const NORM_EPS: f64 = 1e-12;
/// Floor applied inside every log of the losses.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams {
    /// `l x C`; column `j` is the prototype of class `j`.
    pub weights: Matrix,
    pub temperature: f64,
}

impl ClassifierParams {
    pub fn init(embed_dim: usize, num_classes: usize, temperature: f64, rng: &mut impl Rng) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::invalid(format!("temperature {temperature} must be > 0")));
        }
        if num_classes == 0 || embed_dim == 0 {
            return Err(Error::invalid("classifier needs C >= 1 and l >= 1"));
        }
        Ok(Self {
            weights: glorot_uniform(embed_dim, num_classes, rng),
            temperature,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.weights.cols()
    }
}

/// Class probabilities, one row per embedding row.
pub fn predict(e: &Var, w_c: &Var, temperature: f64) -> Result<Var> {
    let (l, _) = w_c.shape();
    if e.shape().1 != l {
        return Err(Error::shape(
            "predict",
            format!("embedding width {} vs classifier {:?}", e.shape().1, w_c.shape()),
        ));
    }
    Ok(e.l2_normalize_rows(NORM_EPS)
        .matmul(w_c)?
        .scalar_mul(1.0 / temperature)
        .softmax_rows())
}

/// Tape-free prediction for evaluation.
pub fn predict_values(embeddings: &Matrix, params: &ClassifierParams) -> Result<Matrix> {
    let tape = Tape::new();
    let e = tape.constant(embeddings.clone());
    let w = tape.constant(params.weights.clone());
    Ok(predict(&e, &w, params.temperature)?.value())
}

/// Mean negative log-likelihood of the given labels.
pub fn nll(probs: &Var, labels: &[Option<usize>]) -> Result<Var> {
    let (rows, classes) = probs.shape();
    if labels.len() != rows {
        return Err(Error::shape("nll", format!("{} labels for {rows} rows", labels.len())));
    }
    if rows == 0 {
        return Err(Error::invalid("cross-entropy over an empty set"));
    }
    let mut mask = Matrix::zeros(rows, classes);
    for (i, l) in labels.iter().enumerate() {
        match l {
            Some(c) if *c < classes => mask.set(i, *c, 1.0),
            Some(c) => return Err(Error::invalid(format!("class {c} >= C = {classes}"))),
            None => return Err(Error::invalid(format!("row {i} has no label"))),
        }
    }
    let mask = probs.tape().constant(mask);
    Ok(probs
        .log_clamped(LOG_FLOOR)
        .mul(&mask)?
        .sum()
        .scalar_mul(-1.0 / rows as f64))
}

/// Source-batch mean NLL plus labeled-target mean NLL. An empty target set
/// contributes nothing.
pub fn cross_entropy(
    source_probs: &Var,
    source_labels: &[Option<usize>],
    target: Option<(&Var, &[Option<usize>])>,
) -> Result<Var> {
    let src = nll(source_probs, source_labels)?;
    match target {
        Some((p, l)) if !l.is_empty() => src.add(&nll(p, l)?),
        _ => Ok(src),
    }
}

/// Mean Shannon entropy of the rows.
pub fn entropy_loss(probs: &Var) -> Result<Var> {
    let rows = probs.shape().0;
    if rows == 0 {
        return Err(Error::invalid("entropy of an empty batch"));
    }
    Ok(probs
        .mul(&probs.log_clamped(LOG_FLOOR))?
        .sum()
        .scalar_mul(-1.0 / rows as f64))
}

/// Per-row entropy of a probability matrix.
pub fn row_entropies(probs: &Matrix) -> Vec<f64> {
    (0..probs.rows())
        .map(|r| {
            -probs
                .row(r)
                .iter()
                .map(|&p| p * p.max(LOG_FLOOR).ln())
                .sum::<f64>()
        })
        .collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn orthonormal_prototypes() {
        let t = Tape::new();
        let w = t.constant(Matrix::identity(2));
        let e = t.constant(Matrix::row_vector(&[1.0, 0.0]));
        let p = predict(&e, &w, 1.0).unwrap().value();
        assert_abs_diff_eq!(p.get(0, 0), 0.731_058_578_630_004_9, epsilon = 1e-12);
        assert_abs_diff_eq!(p.get(0, 1), 0.268_941_421_369_995_1, epsilon = 1e-12);
    }

    #[test]
    fn scale_invariance_and_high_temperature() {
        let t = Tape::new();
        let w = t.constant(Matrix::from_rows(&[vec![0.3, -1.0, 2.0], vec![1.5, 0.2, 0.1]]).unwrap());
        let base = predict(&t.constant(Matrix::row_vector(&[0.4, -1.3])), &w, 2.0).unwrap().value();
        for c in [1e-3, 1.0, 1e3] {
            let p = predict(&t.constant(Matrix::row_vector(&[0.4 * c, -1.3 * c])), &w, 2.0)
                .unwrap()
                .value();
            assert!(p.max_abs_diff(&base) <= 1e-12);
        }
        let hot = predict(&t.constant(Matrix::row_vector(&[0.4, -1.3])), &w, 1e9).unwrap().value();
        for j in 0..3 {
            assert_abs_diff_eq!(hot.get(0, j), 1.0 / 3.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn nll_edge_values() {
        let t = Tape::new();
        let onehot = t.constant(Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap());
        assert_eq!(nll(&onehot, &[Some(1), Some(0)]).unwrap().item(), Some(0.0));
        let uni = t.constant(Matrix::filled(3, 5, 0.2));
        let l = nll(&uni, &[Some(0), Some(3), Some(4)]).unwrap().item().unwrap();
        assert_abs_diff_eq!(l, 5f64.ln(), epsilon = 1e-12);
        assert!(nll(&uni, &[Some(0), None, Some(1)]).is_err());
    }

    #[test]
    fn cross_entropy_with_and_without_target_terms() {
        let t = Tape::new();
        let uni = t.constant(Matrix::filled(2, 5, 0.2));
        let src_only = cross_entropy(&uni, &[Some(0), Some(1)], None).unwrap().item().unwrap();
        let empty: &[Option<usize>] = &[];
        let empty_tl = cross_entropy(&uni, &[Some(0), Some(1)], Some((&uni, empty)))
            .unwrap()
            .item()
            .unwrap();
        assert_eq!(src_only, empty_tl);
        let both = cross_entropy(&uni, &[Some(0), Some(1)], Some((&uni, &[Some(2), Some(3)])))
            .unwrap()
            .item()
            .unwrap();
        assert_abs_diff_eq!(both, 2.0 * 5f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn entropy_extremes() {
        let t = Tape::new();
        let uni = t.constant(Matrix::filled(4, 5, 0.2));
        assert_abs_diff_eq!(entropy_loss(&uni).unwrap().item().unwrap(), 5f64.ln(), epsilon = 1e-12);
        let onehot = t.constant(Matrix::from_rows(&[vec![0.0, 1.0, 0.0]]).unwrap());
        assert_eq!(entropy_loss(&onehot).unwrap().item(), Some(0.0));
    }

    #[test]
    fn argmax_ties_to_lowest() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }
}
