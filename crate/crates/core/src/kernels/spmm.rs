use crate::error::{shape_err, Result};
use crate::graph::GraphTopology;
use crate::scalar::Scalar;
use crate::tensor::{DenseMatrix, EdgeScalars};

/// `O[v,:] = sum over in-edges u -> v of p[e] * V[u,:]`. Rows without edges
/// are zero.
pub fn spmm<T: Scalar>(g: &GraphTopology, p: &EdgeScalars<T>, v: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    p.expect_len("spmm", g.num_edges())?;
    if v.rows() != g.num_nodes() {
        return Err(shape_err("spmm (V rows)", g.num_nodes(), v.rows()));
    }
    let mut out = DenseMatrix::zeros(g.num_nodes(), v.cols());
    for dst in 0..g.num_nodes() {
        let o = out.row_mut(dst);
        for e in g.row_edges(dst) {
            let w = p.values()[e];
            for (oc, &vc) in o.iter_mut().zip(v.row(g.csr_col_idx()[e])) {
                *oc += w * vc;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphTopology;

    #[test]
    fn self_loops_copy_v() {
        let g = GraphTopology::from_coo(3, &[0, 1, 2], &[0, 1, 2]).unwrap();
        let v = DenseMatrix::<f64>::from_fn(3, 2, |r, c| (r * 2 + c) as f64);
        let o = spmm(&g, &EdgeScalars::from_vec(vec![1.0; 3]), &v).unwrap();
        assert_eq!(o, v);
    }

    #[test]
    fn half_weights_average() {
        let g = GraphTopology::from_coo(3, &[0, 1], &[2, 2]).unwrap();
        let v = DenseMatrix::<f64>::from_vec(3, 2, vec![1.0, 2.0, 3.0, 6.0, 9.0, 9.0]).unwrap();
        let o = spmm(&g, &EdgeScalars::from_vec(vec![0.5, 0.5]), &v).unwrap();
        assert_eq!(o.row(2), &[2.0, 4.0]);
        assert_eq!(o.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_shapes() {
        let g = GraphTopology::from_coo(3, &[0, 1], &[2, 2]).unwrap();
        let v = DenseMatrix::<f64>::zeros(2, 2);
        assert!(spmm(&g, &EdgeScalars::from_vec(vec![0.5, 0.5]), &v).is_err());
        assert!(spmm(&g, &EdgeScalars::from_vec(vec![0.5]), &DenseMatrix::zeros(3, 2)).is_err());
    }
}
