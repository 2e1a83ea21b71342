//! Dense reference for the attention pipeline. Materializes the full
//! `N x N` score matrix in `f64`, masks it with the adjacency pattern and
//! applies a row softmax over the mask support. Shares no code with the
//! sparse kernels.

use crate::error::{Error, Result};
use crate::graph::GraphTopology;
use crate::kernels::kind::{SddmmKind, SddmmVariant};
use crate::kernels::sddmm::check_operands;
use crate::scalar::Scalar;
use crate::tensor::DenseMatrix;

pub const ORACLE_MAX_NODES: usize = 4096;

/// Dense results indexed `[dst][src]`: row `v` holds the attention of
/// destination `v` over every potential source.
#[derive(Debug, Clone)]
pub struct DenseOracle {
    pub scores: DenseMatrix<f64>,
    pub mask: Vec<bool>,
    pub probs: DenseMatrix<f64>,
    pub output: DenseMatrix<f64>,
}

impl DenseOracle {
    pub fn is_edge(&self, dst: usize, src: usize) -> bool {
        self.mask[dst * self.scores.cols() + src]
    }
}

pub fn dense_oracle_forward<T: Scalar>(
    g: &GraphTopology,
    q: &DenseMatrix<T>,
    k: &DenseMatrix<T>,
    v: &DenseMatrix<T>,
    kind: &SddmmKind,
) -> Result<DenseOracle> {
    let n = g.num_nodes();
    if n > ORACLE_MAX_NODES {
        return Err(Error::OracleTooLarge {
            n,
            limit: ORACLE_MAX_NODES,
        });
    }
    check_operands(g, q, k, v, kind)?;

    let mut mask = vec![false; n * n];
    for (u, w) in g.edges() {
        mask[w * n + u] = true;
    }

    let (q, k, v) = (q.cast::<f64>(), k.cast::<f64>(), v.cast::<f64>());
    let full = match kind.variant {
        SddmmVariant::Dot => {
            let (q, k) = if kind.l2_normalize_inputs {
                (unit_rows(&q, kind.eps), unit_rows(&k, kind.eps))
            } else {
                (q, k)
            };
            q.matmul_t(&k)?.scaled(kind.scale)
        }
        // el * 1^T + 1 * er^T, laid out [dst][src]
        SddmmVariant::Add => DenseMatrix::from_fn(n, n, |dst, src| {
            let x = k.get(src, 0) + q.get(dst, 0);
            if x >= 0.0 {
                x
            } else {
                kind.leaky_slope * x
            }
        }),
    };
    let scores = DenseMatrix::from_fn(n, n, |r, c| if mask[r * n + c] { full.get(r, c) } else { 0.0 });

    let mut probs = DenseMatrix::zeros(n, n);
    for r in 0..n {
        let support: Vec<usize> = (0..n).filter(|&c| mask[r * n + c]).collect();
        if support.is_empty() {
            continue;
        }
        let m = support
            .iter()
            .map(|&c| scores.get(r, c))
            .fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = support.iter().map(|&c| (scores.get(r, c) - m).exp()).sum();
        for &c in &support {
            probs.set(r, c, (scores.get(r, c) - m).exp() / z);
        }
    }
    let output = probs.matmul(&v)?;
    Ok(DenseOracle {
        scores,
        mask,
        probs,
        output,
    })
}

fn unit_rows(x: &DenseMatrix<f64>, eps: f64) -> DenseMatrix<f64> {
    DenseMatrix::from_fn(x.rows(), x.cols(), |r, c| {
        let norm = x.row(r).iter().map(|a| a * a).sum::<f64>().sqrt();
        x.get(r, c) / norm.max(eps)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_self_loop_returns_v() {
        let g = GraphTopology::from_coo(1, &[0], &[0]).unwrap();
        let x = DenseMatrix::<f64>::from_vec(1, 3, vec![1.0, -2.0, 0.5]).unwrap();
        let o = dense_oracle_forward(&g, &x, &x, &x, &SddmmKind::gt(3)).unwrap();
        assert_eq!(o.output, x);
    }

    #[test]
    fn empty_graph_gives_zero() {
        let g = GraphTopology::from_coo(4, &[], &[]).unwrap();
        let x = DenseMatrix::<f64>::from_fn(4, 2, |r, c| (r + c) as f64);
        let o = dense_oracle_forward(&g, &x, &x, &x, &SddmmKind::gt(2)).unwrap();
        assert_eq!(o.output.max_abs(), 0.0);
    }

    #[test]
    fn refuses_oversize() {
        let g = GraphTopology::from_coo(ORACLE_MAX_NODES + 1, &[], &[]).unwrap();
        let x = DenseMatrix::<f32>::zeros(ORACLE_MAX_NODES + 1, 1);
        assert!(matches!(
            dense_oracle_forward(&g, &x, &x, &x, &SddmmKind::gt(1)),
            Err(Error::OracleTooLarge { .. })
        ));
    }
}
