//! Local/global mutual-information objective.
//!
//! Each view's batch embeddings are summarized by a sigmoid of their mean.
//! A shared bilinear discriminator scores (node, summary-of-the-other-view)
//! pairs; positives use the real attributes and negatives a row-shuffled
//! copy of the attribute matrix fed through the same encoders.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Floor applied inside every log of the objective.
pub const LOG_FLOOR: f64 = 1e-12;

/// `sigmoid(mean of rows)`.
pub fn readout(embeddings: &Var) -> Result<Var> {
    if embeddings.shape().0 == 0 {
        return Err(Error::invalid("readout of an empty batch"));
    }
    Ok(embeddings.mean_rows()?.sigmoid())
}

/// Row permutation of the attribute matrix used as the negative view.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorruptedView {
    perm: Vec<usize>,
}

impl CorruptedView {
    /// Node `v` reads attribute row `perm()[v]`.
    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn materialize(&self, attrs: &Matrix) -> Matrix {
        attrs.select_rows(&self.perm)
    }
}

/// Uniform non-identity permutation of `num_nodes` rows, global over the graph.
pub fn corrupt(num_nodes: usize, seed: u64) -> Result<CorruptedView> {
    if num_nodes < 2 {
        return Err(Error::invalid(format!(
            "corruption needs at least 2 nodes, got {num_nodes}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..num_nodes).collect();
    loop {
        perm.shuffle(&mut rng);
        if perm.iter().enumerate().any(|(i, &p)| i != p) {
            return Ok(CorruptedView { perm });
        }
    }
}

/// `sigmoid(e_i · W_b · rᵀ)` for every row `e_i`; returns `n x 1`.
pub fn discriminate(e: &Var, w_b: &Var, r: &Var) -> Result<Var> {
    Ok(e.bilinear(w_b, r)?.sigmoid())
}

/// Positive and negative embeddings of one graph's batch plus the
/// discriminator weights. Summaries come from the positive embeddings only.
pub struct ContrastiveBatch {
    pub local: Var,
    pub global: Var,
    pub local_corrupt: Var,
    pub global_corrupt: Var,
    pub summary_local: Var,
    pub summary_global: Var,
    pub w_b: Var,
}

impl ContrastiveBatch {
    pub fn new(local: Var, global: Var, local_corrupt: Var, global_corrupt: Var, w_b: Var) -> Result<Self> {
        let rows = [&local, &global, &local_corrupt, &global_corrupt].map(|v| v.shape());
        if rows.iter().any(|s| *s != rows[0]) {
            return Err(Error::shape(
                "contrastive",
                format!("embedding blocks differ: {rows:?}"),
            ));
        }
        let summary_local = readout(&local)?;
        let summary_global = readout(&global)?;
        Ok(Self {
            local,
            global,
            local_corrupt,
            global_corrupt,
            summary_local,
            summary_global,
            w_b,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.local.shape().0
    }
}

/// Jensen-Shannon style objective of one graph:
/// `-1/(4|B|) Σ [log D(e^A, r_P) + log D(e^P, r_A) + log(1 - D(ẽ^A, r_P)) + log(1 - D(ẽ^P, r_A))]`.
pub fn contrastive_loss(batch: &ContrastiveBatch) -> Result<Var> {
    let b = batch.batch_size() as f64;
    let pos_a = discriminate(&batch.local, &batch.w_b, &batch.summary_global)?;
    let pos_p = discriminate(&batch.global, &batch.w_b, &batch.summary_local)?;
    let neg_a = discriminate(&batch.local_corrupt, &batch.w_b, &batch.summary_global)?;
    let neg_p = discriminate(&batch.global_corrupt, &batch.w_b, &batch.summary_local)?;
    let log_pos = |s: &Var| s.log_clamped(LOG_FLOOR).sum();
    let log_neg = |s: &Var| s.scalar_mul(-1.0).add_scalar(1.0).log_clamped(LOG_FLOOR).sum();
    let total = log_pos(&pos_a)
        .add(&log_pos(&pos_p))?
        .add(&log_neg(&neg_a))?
        .add(&log_neg(&neg_p))?;
    Ok(total.scalar_mul(-1.0 / (4.0 * b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use approx::assert_abs_diff_eq;

    #[test]
    fn readout_values() {
        let t = Tape::new();
        let z = t.constant(Matrix::zeros(3, 2));
        assert_eq!(readout(&z).unwrap().value().as_slice(), &[0.5, 0.5]);
        let one = t.constant(Matrix::row_vector(&[1.0, -2.0]));
        let r = readout(&one).unwrap().value();
        assert_abs_diff_eq!(r.get(0, 0), 1.0 / (1.0 + (-1.0f64).exp()), epsilon = 1e-15);
        let two = t.constant(Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 2.0]]).unwrap());
        let r = readout(&two).unwrap().value();
        assert_abs_diff_eq!(r.get(0, 0), r.get(0, 1));
        assert_abs_diff_eq!(r.get(0, 0), 0.731_058_578_630_004_9, epsilon = 1e-15);
        assert!(readout(&t.constant(Matrix::zeros(0, 2))).is_err());
    }

    #[test]
    fn corruption_properties() {
        assert_eq!(corrupt(2, 9).unwrap().perm(), &[1, 0]);
        assert!(corrupt(1, 0).is_err());
        let a = corrupt(50, 4).unwrap();
        assert_eq!(a, corrupt(50, 4).unwrap());
        let mut sorted = a.perm().to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        let attrs = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let c = corrupt(3, 1).unwrap().materialize(&attrs);
        let mut rows: Vec<f64> = c.as_slice().to_vec();
        rows.sort_by(f64::total_cmp);
        assert_eq!(rows, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn discriminator_values() {
        let t = Tape::new();
        let w = t.constant(Matrix::identity(2));
        let r = t.constant(Matrix::row_vector(&[1.0, 0.0]));
        let zero = t.constant(Matrix::zeros(1, 2));
        assert_eq!(discriminate(&zero, &w, &r).unwrap().item(), Some(0.5));
        let e = t.constant(Matrix::row_vector(&[1.0, 0.0]));
        assert_abs_diff_eq!(
            discriminate(&e, &w, &r).unwrap().item().unwrap(),
            0.731_058_578_630_004_9,
            epsilon = 1e-15
        );
        let big = t.constant(Matrix::row_vector(&[30.0, 0.0]));
        let s = discriminate(&big, &w, &r).unwrap().item().unwrap();
        assert!(s > 0.0 && s < 1.0);
    }

    fn batch(t: &Tape, pos: Matrix, neg: Matrix, w: Matrix) -> ContrastiveBatch {
        ContrastiveBatch::new(
            t.constant(pos.clone()),
            t.constant(pos),
            t.constant(neg.clone()),
            t.constant(neg),
            t.constant(w),
        )
        .unwrap()
    }

    #[test]
    fn uninformative_scores_give_ln2() {
        let t = Tape::new();
        let b = batch(&t, Matrix::zeros(4, 3), Matrix::zeros(4, 3), Matrix::identity(3));
        let l = contrastive_loss(&b).unwrap().item().unwrap();
        assert_abs_diff_eq!(l, std::f64::consts::LN_2, epsilon = 1e-15);
    }

    #[test]
    fn perfect_discrimination_drives_loss_to_zero() {
        let t = Tape::new();
        let pos = Matrix::filled(2, 2, 5.0);
        let neg = Matrix::filled(2, 2, -5.0);
        let l = contrastive_loss(&batch(&t, pos, neg, Matrix::identity(2).scale(10.0)))
            .unwrap()
            .item()
            .unwrap();
        assert!((0.0..1e-12).contains(&l), "{l}");
    }

    #[test]
    fn mismatched_blocks_rejected() {
        let t = Tape::new();
        let r = ContrastiveBatch::new(
            t.constant(Matrix::zeros(2, 2)),
            t.constant(Matrix::zeros(3, 2)),
            t.constant(Matrix::zeros(2, 2)),
            t.constant(Matrix::zeros(2, 2)),
            t.constant(Matrix::identity(2)),
        );
        assert!(r.is_err());
    }
}
