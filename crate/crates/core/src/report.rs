//! CSV outputs of a run.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::trainer::StepMetrics;

pub const LOSS_HEADER: &str = "epoch,iter,L_CE,L_CL,L_EN,overall,lr,lambda2";

pub fn loss_csv(steps: &[StepMetrics]) -> String {
    let mut s = String::from(LOSS_HEADER);
    s.push('\n');
    for m in steps {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            m.epoch, m.iter, m.ce, m.cl, m.en, m.overall, m.lr, m.lambda2
        )
        .unwrap();
    }
    s
}

pub fn write_loss_csv(steps: &[StepMetrics], path: &Path) -> Result<()> {
    fs::write(path, loss_csv(steps)).map_err(|e| Error::io(path.display().to_string(), e))
}

/// `node_id,v_1,...,v_l`, one row per node.
pub fn embeddings_csv(nodes: &[usize], embeddings: &Matrix) -> Result<String> {
    if nodes.len() != embeddings.rows() {
        return Err(Error::shape(
            "embeddings_csv",
            format!("{} node ids for {} rows", nodes.len(), embeddings.rows()),
        ));
    }
    let mut s = String::from("node_id");
    for j in 1..=embeddings.cols() {
        write!(s, ",v_{j}").unwrap();
    }
    s.push('\n');
    for (i, v) in nodes.iter().enumerate() {
        write!(s, "{v}").unwrap();
        for x in embeddings.row(i) {
            write!(s, ",{x}").unwrap();
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn write_embeddings_csv(nodes: &[usize], embeddings: &Matrix, path: &Path) -> Result<()> {
    fs::write(path, embeddings_csv(nodes, embeddings)?).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_header_and_rows() {
        let m = StepMetrics {
            epoch: 1,
            iter: 2,
            ce: 0.5,
            cl: 0.25,
            en: 1.0,
            overall: 0.625,
            lr: 0.01,
            lambda2: 0.0,
        };
        let csv = loss_csv(&[m]);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(LOSS_HEADER));
        assert_eq!(lines.next(), Some("1,2,0.5,0.25,1,0.625,0.01,0"));
    }

    #[test]
    fn embedding_columns() {
        let e = Matrix::from_rows(&[vec![0.5, 1.0], vec![2.0, 0.0]]).unwrap();
        let csv = embeddings_csv(&[4, 7], &e).unwrap();
        assert_eq!(csv, "node_id,v_1,v_2\n4,0.5,1\n7,2,0\n");
        assert!(embeddings_csv(&[1], &e).is_err());
    }
}
