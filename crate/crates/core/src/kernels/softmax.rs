use crate::error::Result;
use crate::graph::GraphTopology;
use crate::scalar::Scalar;
use crate::tensor::EdgeScalars;

/// Round one: row maximum, left to right. A NaN anywhere in the row wins so
/// that it propagates to every output of the row.
#[inline]
pub(crate) fn row_max<T: Scalar>(s: &[T]) -> T {
    let mut m = T::neg_infinity();
    for &x in s {
        if x > m || x.is_nan() {
            m = x;
            if x.is_nan() {
                break;
            }
        }
    }
    m
}

/// `f = exp(s - max)` into `f`, returning the left-to-right sum of `f`.
#[inline]
pub(crate) fn exp_shifted<T: Scalar>(s: &[T], max: T, f: &mut [T]) -> T {
    let mut sum = T::zero();
    for (fi, &si) in f.iter_mut().zip(s) {
        *fi = (si - max).exp();
        sum += *fi;
    }
    sum
}

/// Numerically stable softmax over the in-edges of every destination row.
/// Rows without edges produce nothing.
pub fn edge_softmax<T: Scalar>(g: &GraphTopology, s: &EdgeScalars<T>) -> Result<EdgeScalars<T>> {
    s.expect_len("edge_softmax", g.num_edges())?;
    let mut p = EdgeScalars::zeros(g.num_edges());
    for v in 0..g.num_nodes() {
        let range = g.row_edges(v);
        if range.is_empty() {
            continue;
        }
        let row = &s.values()[range.clone()];
        let out = &mut p.values_mut()[range];
        let max = row_max(row);
        let sum = exp_shifted(row, max, out);
        out.iter_mut().for_each(|x| *x /= sum);
    }
    Ok(p)
}
