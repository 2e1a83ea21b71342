use crate::error::{shape_err, Result};
use crate::graph::GraphTopology;
use crate::kernels::kind::{leaky_relu, SddmmKind, SddmmVariant};
use crate::scalar::Scalar;
use crate::tensor::{dot, DenseMatrix, EdgeScalars};

/// `s[e] = scale * <q[dst(e)], k[src(e)]>`.
pub fn sddmm_dot<T: Scalar>(
    g: &GraphTopology,
    q: &DenseMatrix<T>,
    k: &DenseMatrix<T>,
    scale: T,
) -> Result<EdgeScalars<T>> {
    let n = g.num_nodes();
    q.expect_shape("sddmm_dot (Q)", n, q.cols())?;
    k.expect_shape("sddmm_dot (K)", n, q.cols())?;
    let values = g.edges().map(|(u, v)| scale * dot(q.row(v), k.row(u))).collect();
    Ok(EdgeScalars::from_vec(values))
}

/// `s[e] = LeakyReLU(el[src(e)] + er[dst(e)])`.
pub fn sddmm_add<T: Scalar>(
    g: &GraphTopology,
    el: &DenseMatrix<T>,
    er: &DenseMatrix<T>,
    leaky_slope: T,
) -> Result<EdgeScalars<T>> {
    let n = g.num_nodes();
    el.expect_shape("sddmm_add (el)", n, 1)?;
    er.expect_shape("sddmm_add (er)", n, 1)?;
    let values = g
        .edges()
        .map(|(u, v)| leaky_relu(el.get(u, 0) + er.get(v, 0), leaky_slope))
        .collect();
    Ok(EdgeScalars::from_vec(values))
}

/// Divides each row by `max(||row||_2, eps)`.
pub fn l2_normalize_rows<T: Scalar>(x: &DenseMatrix<T>, eps: T) -> DenseMatrix<T> {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let norm = dot(row, row).sqrt().max(eps);
        row.iter_mut().for_each(|v| *v /= norm);
    }
    out
}

/// Dispatches on `kind` with the `(q = destination operand, k = source
/// operand)` convention, normalizing inputs first for AGNN.
pub fn sddmm<T: Scalar>(
    g: &GraphTopology,
    q: &DenseMatrix<T>,
    k: &DenseMatrix<T>,
    kind: &SddmmKind,
) -> Result<EdgeScalars<T>> {
    kind.validate()?;
    match kind.variant {
        SddmmVariant::Dot if kind.l2_normalize_inputs => {
            let eps = T::of(kind.eps);
            sddmm_dot(
                g,
                &l2_normalize_rows(q, eps),
                &l2_normalize_rows(k, eps),
                T::of(kind.scale),
            )
        }
        SddmmVariant::Dot => sddmm_dot(g, q, k, T::of(kind.scale)),
        SddmmVariant::Add => sddmm_add(g, k, q, T::of(kind.leaky_slope)),
    }
}

/// Checks the `(q, k)` operand shapes an engine run needs.
pub(crate) fn check_operands<T: Scalar>(
    g: &GraphTopology,
    q: &DenseMatrix<T>,
    k: &DenseMatrix<T>,
    v: &DenseMatrix<T>,
    kind: &SddmmKind,
) -> Result<()> {
    kind.validate()?;
    let n = g.num_nodes();
    let qk_cols = match kind.variant {
        SddmmVariant::Dot => q.cols(),
        SddmmVariant::Add => 1,
    };
    q.expect_shape("attention (Q)", n, qk_cols)?;
    k.expect_shape("attention (K)", n, qk_cols)?;
    if v.rows() != n {
        return Err(shape_err("attention (V rows)", n, v.rows()));
    }
    Ok(())
}
