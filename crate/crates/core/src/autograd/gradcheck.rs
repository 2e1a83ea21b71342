use super::fused_backward;
use crate::engine::execute;
use crate::error::{Error, Result};
use crate::graph::GraphTopology;
use crate::kernels::{reference_forward, SddmmKind};
use crate::schedule::{check_smmf_feasible, FusionPlan, Strategy};
use crate::tensor::DenseMatrix;

/// Denominator floor of the relative error, so entries whose true gradient
/// is close to zero are compared on an absolute scale.
pub const GRADCHECK_DENOM_FLOOR: f64 = 1e-3;

/// Scalar loss applied to the layer output.
#[derive(Debug, Clone, PartialEq)]
pub enum LossSpec {
    /// `sum(O)`.
    Sum,
    /// `sum(W . O)` for a weight matrix shaped like `O`.
    Weighted(DenseMatrix<f64>),
}

impl LossSpec {
    fn eval(&self, out: &DenseMatrix<f64>) -> f64 {
        match self {
            LossSpec::Sum => out.data().iter().sum(),
            LossSpec::Weighted(w) => w.data().iter().zip(out.data()).map(|(a, b)| a * b).sum(),
        }
    }

    fn grad(&self, rows: usize, cols: usize) -> Result<DenseMatrix<f64>> {
        match self {
            LossSpec::Sum => Ok(DenseMatrix::from_fn(rows, cols, |_, _| 1.0)),
            LossSpec::Weighted(w) => {
                w.expect_shape("loss weights", rows, cols)?;
                Ok(w.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Operand (`"q"`, `"k"` or `"v"`), row and column of the worst entry.
    pub worst: (&'static str, usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub entries_checked: usize,
}

/// Compares the fused backward pass against central differences with step
/// `h` on every entry of `q`, `k` and `v`. The relative error of an entry
/// is `|a - n| / max(|a|, |n|, GRADCHECK_DENOM_FLOOR)`.
pub fn finite_difference_check(
    g: &GraphTopology,
    q: &DenseMatrix<f64>,
    k: &DenseMatrix<f64>,
    v: &DenseMatrix<f64>,
    kind: &SddmmKind,
    loss: &LossSpec,
    h: f64,
) -> Result<GradCheckReport> {
    if !(1e-7..=1e-4).contains(&h) {
        return Err(Error::InvalidParameter(format!(
            "finite-difference step {h} outside [1e-7, 1e-4]"
        )));
    }
    let mut plan = FusionPlan::new(Strategy::Smmf, 8);
    plan.deterministic = true;
    if check_smmf_feasible(g, &plan, v.cols()).is_err() {
        plan.strategy = Strategy::Unfused;
    }
    let fwd = execute(g, q, k, v, kind, &plan)?;
    let base = loss.eval(&fwd.output);
    if !base.is_finite() {
        return Err(Error::NonFiniteLoss(base));
    }
    let d_out = loss.grad(fwd.output.rows(), fwd.output.cols())?;
    let grads = fused_backward(g, &fwd.ctx, &d_out, &plan)?.grads;

    let eval = |q: &DenseMatrix<f64>, k: &DenseMatrix<f64>, v: &DenseMatrix<f64>| -> Result<f64> {
        let l = loss.eval(&reference_forward(g, q, k, v, kind)?);
        if l.is_finite() {
            Ok(l)
        } else {
            Err(Error::NonFiniteLoss(l))
        }
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: ("q", 0, 0),
        analytic: 0.0,
        numeric: 0.0,
        entries_checked: 0,
    };
    let targets: [(&'static str, &DenseMatrix<f64>, &DenseMatrix<f64>); 3] =
        [("q", q, &grads.dq), ("k", k, &grads.dk), ("v", v, &grads.dv)];
    for (slot, (name, x, analytic)) in targets.into_iter().enumerate() {
        let mut xp = x.clone();
        for r in 0..x.rows() {
            for c in 0..x.cols() {
                let x0 = x.get(r, c);
                xp.set(r, c, x0 + h);
                let plus = with_operand(slot, &xp, q, k, v, &eval)?;
                xp.set(r, c, x0 - h);
                let minus = with_operand(slot, &xp, q, k, v, &eval)?;
                xp.set(r, c, x0);

                let numeric = (plus - minus) / (2.0 * h);
                let a = analytic.get(r, c);
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRADCHECK_DENOM_FLOOR);
                report.entries_checked += 1;
                if rel > report.max_rel_error || report.entries_checked == 1 {
                    report.max_rel_error = rel;
                    report.worst = (name, r, c);
                    report.analytic = a;
                    report.numeric = numeric;
                }
            }
        }
    }
    Ok(report)
}

fn with_operand<F>(
    slot: usize,
    x: &DenseMatrix<f64>,
    q: &DenseMatrix<f64>,
    k: &DenseMatrix<f64>,
    v: &DenseMatrix<f64>,
    eval: &F,
) -> Result<f64>
where
    F: Fn(&DenseMatrix<f64>, &DenseMatrix<f64>, &DenseMatrix<f64>) -> Result<f64>,
{
    match slot {
        0 => eval(x, k, v),
        1 => eval(q, x, v),
        _ => eval(q, k, x),
    }
}
