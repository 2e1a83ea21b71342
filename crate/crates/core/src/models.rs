//! Attention convolutions built from dense projections and the sparse
//! attention pipeline.
//!
//! * GT: `Q = X Wq`, `K = X Wk`, `V = X Wv`, scores scaled by `1/sqrt(d)`.
//! * AGNN: as GT with rows of `Q` and `K` normalized and scale `beta`.
//! * GAT: `H = X W`, `el = H a_src`, `er = H a_dst`, scores
//!   `LeakyReLU(el[src] + er[dst])`, values `H`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{fused_backward, GradBundle};
use crate::engine::{execute, ExecCounters, ForwardContext};
use crate::error::{Error, Result};
use crate::graph::GraphTopology;
use crate::kernels::{SddmmKind, DEFAULT_LEAKY_SLOPE};
use crate::scalar::Scalar;
use crate::schedule::{auto_strategy, AutoChoice, FusionPlan, Strategy};
use crate::tensor::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Gt,
    Agnn,
    Gat,
}

impl Model {
    pub const ALL: [Model; 3] = [Model::Gt, Model::Agnn, Model::Gat];

    pub fn name(self) -> &'static str {
        match self {
            Model::Gt => "gt",
            Model::Agnn => "agnn",
            Model::Gat => "gat",
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gt" => Ok(Model::Gt),
            "agnn" => Ok(Model::Agnn),
            "gat" => Ok(Model::Gat),
            other => Err(Error::Parse(format!("unknown model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub model: Model,
    pub dim: usize,
    /// Score scale: `1/sqrt(dim)` for GT, `beta` for AGNN; unused by GAT.
    pub scale: f64,
    pub leaky_slope: f64,
    pub strategy_override: Option<Strategy>,
}

impl ConvSpec {
    pub fn new(model: Model, dim: usize) -> Self {
        ConvSpec {
            model,
            dim,
            scale: match model {
                Model::Gt => 1.0 / (dim.max(1) as f64).sqrt(),
                _ => 1.0,
            },
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            strategy_override: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidParameter("conv dim must be at least 1".into()));
        }
        self.kind().validate()
    }

    pub fn kind(&self) -> SddmmKind {
        match self.model {
            Model::Gt => SddmmKind::dot(self.scale),
            Model::Agnn => SddmmKind::agnn(self.scale),
            Model::Gat => SddmmKind::gat(self.leaky_slope),
        }
    }
}

/// Projection weights. Attention models use three `d_in x d` matrices;
/// GAT uses one `d_in x d` matrix and two `d x 1` attention vectors.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvWeights<T> {
    Attention {
        w_q: DenseMatrix<T>,
        w_k: DenseMatrix<T>,
        w_v: DenseMatrix<T>,
    },
    Gat {
        w: DenseMatrix<T>,
        a_src: DenseMatrix<T>,
        a_dst: DenseMatrix<T>,
    },
}

impl<T: Scalar> ConvWeights<T> {
    /// Uniform weights scaled by `1/sqrt(d_in)`.
    pub fn random<R: Rng + ?Sized>(spec: &ConvSpec, d_in: usize, rng: &mut R) -> Self {
        let s = T::of(1.0 / (d_in.max(1) as f64).sqrt());
        let d = spec.dim;
        match spec.model {
            Model::Gat => ConvWeights::Gat {
                w: DenseMatrix::random(d_in, d, rng).scaled(s),
                a_src: DenseMatrix::random(d, 1, rng),
                a_dst: DenseMatrix::random(d, 1, rng),
            },
            _ => ConvWeights::Attention {
                w_q: DenseMatrix::random(d_in, d, rng).scaled(s),
                w_k: DenseMatrix::random(d_in, d, rng).scaled(s),
                w_v: DenseMatrix::random(d_in, d, rng).scaled(s),
            },
        }
    }

    /// Identity projections (`d_in = dim`); GAT attention vectors are ones.
    pub fn identity(spec: &ConvSpec) -> Self {
        let d = spec.dim;
        match spec.model {
            Model::Gat => ConvWeights::Gat {
                w: DenseMatrix::identity(d),
                a_src: DenseMatrix::from_fn(d, 1, |_, _| T::one()),
                a_dst: DenseMatrix::from_fn(d, 1, |_, _| T::one()),
            },
            _ => ConvWeights::Attention {
                w_q: DenseMatrix::identity(d),
                w_k: DenseMatrix::identity(d),
                w_v: DenseMatrix::identity(d),
            },
        }
    }

    fn check(&self, spec: &ConvSpec, d_in: usize) -> Result<()> {
        let d = spec.dim;
        match (self, spec.model) {
            (ConvWeights::Attention { w_q, w_k, w_v }, Model::Gt | Model::Agnn) => {
                w_q.expect_shape("conv (w_q)", d_in, d)?;
                w_k.expect_shape("conv (w_k)", d_in, d)?;
                w_v.expect_shape("conv (w_v)", d_in, d)
            }
            (ConvWeights::Gat { w, a_src, a_dst }, Model::Gat) => {
                w.expect_shape("conv (w)", d_in, d)?;
                a_src.expect_shape("conv (a_src)", d, 1)?;
                a_dst.expect_shape("conv (a_dst)", d, 1)
            }
            _ => Err(Error::InvalidParameter(format!(
                "weights do not match model {}",
                spec.model
            ))),
        }
    }
}

/// Everything [`conv_backward`] needs from the forward pass.
#[derive(Debug, Clone)]
pub struct ConvContext<T> {
    pub x: DenseMatrix<T>,
    pub weights: ConvWeights<T>,
    pub attention: ForwardContext<T>,
    pub choice: AutoChoice,
    pub counters: ExecCounters,
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub attention: GradBundle<T>,
    pub weights: ConvWeights<T>,
    pub dx: DenseMatrix<T>,
    pub counters: ExecCounters,
}

/// Forward pass with the default plan for `T`.
pub fn conv_forward<T: Scalar>(
    spec: &ConvSpec,
    g: &GraphTopology,
    x: &DenseMatrix<T>,
    weights: &ConvWeights<T>,
) -> Result<(DenseMatrix<T>, ConvContext<T>)> {
    conv_forward_with(spec, g, x, weights, &FusionPlan::new(Strategy::Smmf, T::BYTES))
}

/// Forward pass using `plan`'s geometry. The strategy is
/// `spec.strategy_override` if set, otherwise the automatic choice for `g`.
pub fn conv_forward_with<T: Scalar>(
    spec: &ConvSpec,
    g: &GraphTopology,
    x: &DenseMatrix<T>,
    weights: &ConvWeights<T>,
    plan: &FusionPlan,
) -> Result<(DenseMatrix<T>, ConvContext<T>)> {
    spec.validate()?;
    weights.check(spec, x.cols())?;
    let kind = spec.kind();
    let (q, k, v) = match weights {
        ConvWeights::Attention { w_q, w_k, w_v } => (x.matmul(w_q)?, x.matmul(w_k)?, x.matmul(w_v)?),
        ConvWeights::Gat { w, a_src, a_dst } => {
            let h = x.matmul(w)?;
            (h.matmul(a_dst)?, h.matmul(a_src)?, h)
        }
    };
    let choice = match spec.strategy_override {
        Some(s) => AutoChoice {
            selected: s,
            executed: s,
        },
        None => auto_strategy(g, &kind, plan, spec.dim)?,
    };
    let run = execute(g, &q, &k, &v, &kind, &plan.with_strategy(choice.executed))?;
    let ctx = ConvContext {
        x: x.clone(),
        weights: weights.clone(),
        attention: run.ctx,
        choice,
        counters: run.counters,
    };
    Ok((run.output, ctx))
}

/// Fused backward through the attention pipeline, then through the
/// projections.
pub fn conv_backward<T: Scalar>(
    g: &GraphTopology,
    ctx: &ConvContext<T>,
    d_out: &DenseMatrix<T>,
) -> Result<ConvGrads<T>> {
    let att = fused_backward(g, &ctx.attention, d_out, &ctx.attention.plan)?;
    let gb = &att.grads;
    let x = &ctx.x;
    let (weights, dx) = match &ctx.weights {
        ConvWeights::Attention { w_q, w_k, w_v } => {
            let dx = gb
                .dq
                .matmul_t(w_q)?
                .add(&gb.dk.matmul_t(w_k)?)?
                .add(&gb.dv.matmul_t(w_v)?)?;
            let grads = ConvWeights::Attention {
                w_q: x.t_matmul(&gb.dq)?,
                w_k: x.t_matmul(&gb.dk)?,
                w_v: x.t_matmul(&gb.dv)?,
            };
            (grads, dx)
        }
        ConvWeights::Gat { w, a_src, a_dst } => {
            // dq / dk hold the gradients of er / el
            let h = &ctx.attention.v;
            let dh = gb.dv.add(&gb.dq.matmul_t(a_dst)?)?.add(&gb.dk.matmul_t(a_src)?)?;
            let grads = ConvWeights::Gat {
                w: x.t_matmul(&dh)?,
                a_src: h.t_matmul(&gb.dk)?,
                a_dst: h.t_matmul(&gb.dq)?,
            };
            (grads, dh.matmul_t(w)?)
        }
    };
    Ok(ConvGrads {
        attention: att.grads,
        weights,
        dx,
        counters: att.counters,
    })
}

/// Achieved fraction of peak bandwidth, `bytes / (peak * elapsed)`. Not
/// clamped: modeled bytes over CPU time can exceed 1.
pub fn bandwidth_utilization(bytes: u64, elapsed_s: f64, peak_bw_bytes_per_s: f64) -> Result<f64> {
    if !elapsed_s.is_finite() || elapsed_s <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "elapsed time must be positive, got {elapsed_s}"
        )));
    }
    if !peak_bw_bytes_per_s.is_finite() || peak_bw_bytes_per_s <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "peak bandwidth must be positive, got {peak_bw_bytes_per_s}"
        )));
    }
    Ok(bytes as f64 / (peak_bw_bytes_per_s * elapsed_s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::{finite_difference_check, LossSpec};
    use crate::graph::{gen_random, gen_super_node};
    use crate::kernels::reference_forward;
    use crate::tensor::max_rel_diff;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn utilization_formula() {
        assert_eq!(bandwidth_utilization(100, 2.0, 100.0).unwrap(), 0.5);
        assert_eq!(bandwidth_utilization(0, 1.0, 1.0).unwrap(), 0.0);
        assert_eq!(bandwidth_utilization(1000, 1.0, 10.0).unwrap(), 100.0);
        assert!(bandwidth_utilization(1, 0.0, 1.0).is_err());
        assert!(bandwidth_utilization(1, 1.0, -1.0).is_err());
    }

    #[test]
    fn identity_gt_is_bare_pipeline() {
        let g = gen_random(30, 3.0, 1).unwrap();
        let spec = ConvSpec::new(Model::Gt, 6);
        let x = DenseMatrix::<f64>::random(30, 6, &mut ChaCha8Rng::seed_from_u64(1));
        let (o, ctx) = conv_forward(&spec, &g, &x, &ConvWeights::identity(&spec)).unwrap();
        let want = reference_forward(&g, &x, &x, &x, &spec.kind()).unwrap();
        assert!(max_rel_diff(&o, &want).0 < 1e-13);
        assert_eq!(ctx.choice.executed, Strategy::Smmf);

        let grads = conv_backward(&g, &ctx, &DenseMatrix::zeros(30, 6)).unwrap();
        assert_eq!(grads.dx.max_abs(), 0.0);
        if let ConvWeights::Attention { w_q, .. } = &grads.weights {
            assert_eq!(w_q.max_abs(), 0.0);
        }
    }

    #[test]
    fn agnn_normalizes_projections() {
        let g = gen_random(20, 3.0, 2).unwrap();
        let spec = ConvSpec::new(Model::Agnn, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = DenseMatrix::<f64>::random(20, 7, &mut rng);
        let (_, ctx) = conv_forward(&spec, &g, &x, &ConvWeights::random(&spec, 7, &mut rng)).unwrap();
        let (q, k) = ctx.attention.effective_qk();
        for r in 0..20 {
            for m in [q, k] {
                let n: f64 = m.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gat_matches_hand_written_layer() {
        let n = 8;
        let g = gen_random(n, 3.0, 3).unwrap();
        let spec = ConvSpec::new(Model::Gat, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DenseMatrix::<f64>::random(n, 4, &mut rng);
        let weights = ConvWeights::random(&spec, 4, &mut rng);
        let (o, _) = conv_forward(&spec, &g, &x, &weights).unwrap();
        let ConvWeights::Gat { w, a_src, a_dst } = &weights else {
            unreachable!()
        };
        let h = x.matmul(w).unwrap();
        for v in 0..n {
            let srcs: Vec<usize> = g.row_edges(v).map(|e| g.csr_col_idx()[e]).collect();
            let logits: Vec<f64> = srcs
                .iter()
                .map(|&u| {
                    let z: f64 = (0..3)
                        .map(|c| h.get(u, c) * a_src.get(c, 0) + h.get(v, c) * a_dst.get(c, 0))
                        .sum();
                    if z > 0.0 {
                        z
                    } else {
                        0.2 * z
                    }
                })
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
            for c in 0..3 {
                let want: f64 = srcs
                    .iter()
                    .zip(&logits)
                    .map(|(&u, l)| (l - m).exp() / z * h.get(u, c))
                    .sum();
                assert!((o.get(v, c) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_gradients_match_finite_differences() {
        let n = 10;
        let g = gen_random(n, 3.0, 4).unwrap();
        for model in Model::ALL {
            let spec = ConvSpec::new(model, 3);
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let x = DenseMatrix::<f64>::random(n, 4, &mut rng);
            let weights = ConvWeights::random(&spec, 4, &mut rng);
            let wl = DenseMatrix::<f64>::random(n, 3, &mut rng);
            let loss = |x: &DenseMatrix<f64>| -> f64 {
                let (o, _) = conv_forward(&spec, &g, x, &weights).unwrap();
                o.data().iter().zip(wl.data()).map(|(a, b)| a * b).sum()
            };
            let (_, ctx) = conv_forward(&spec, &g, &x, &weights).unwrap();
            let grads = conv_backward(&g, &ctx, &wl).unwrap();
            let h = 1e-5;
            let mut xp = x.clone();
            for r in 0..n {
                for c in 0..4 {
                    let x0 = x.get(r, c);
                    xp.set(r, c, x0 + h);
                    let plus = loss(&xp);
                    xp.set(r, c, x0 - h);
                    let minus = loss(&xp);
                    xp.set(r, c, x0);
                    let num = (plus - minus) / (2.0 * h);
                    let a = grads.dx.get(r, c);
                    assert!(
                        (a - num).abs() / a.abs().max(num.abs()).max(1e-3) < 1e-5,
                        "{model} {a} {num}"
                    );
                }
            }
        }
    }

    #[test]
    fn pipeline_gradcheck_per_model() {
        let g = gen_random(10, 2.0, 9).unwrap();
        for model in Model::ALL {
            let spec = ConvSpec::new(model, 4);
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let x = DenseMatrix::<f64>::random(10, 4, &mut rng);
            let (_, ctx) = conv_forward(&spec, &g, &x, &ConvWeights::random(&spec, 4, &mut rng)).unwrap();
            let a = &ctx.attention;
            let r = finite_difference_check(&g, &a.q, &a.k, &a.v, &spec.kind(), &LossSpec::Sum, 1e-5).unwrap();
            assert!(r.max_rel_error < 1e-5);
        }
    }

    #[test]
    fn auto_choice_on_hub_graph() {
        let g = gen_super_node(13000, 1.0, 12500, 5).unwrap();
        let x = DenseMatrix::<f32>::random(13000, 4, &mut ChaCha8Rng::seed_from_u64(5));
        let gt = ConvSpec::new(Model::Gt, 4);
        let (_, ctx) = conv_forward(&gt, &g, &x, &ConvWeights::identity(&gt)).unwrap();
        assert_eq!(ctx.choice.selected, Strategy::Pmf);
        let gat = ConvSpec::new(Model::Gat, 4);
        let (_, ctx) = conv_forward(&gat, &g, &x, &ConvWeights::identity(&gat)).unwrap();
        assert_eq!(ctx.choice.selected, Strategy::Smmf);
        assert_eq!(ctx.choice.executed, Strategy::Unfused);

        let mut forced = gt;
        forced.strategy_override = Some(Strategy::Smmf);
        let err = conv_forward(&forced, &g, &x, &ConvWeights::identity(&forced)).unwrap_err();
        assert!(matches!(err, Error::SharedMemoryExceeded { .. }));
    }

    #[test]
    fn mismatched_weights_rejected() {
        let g = gen_random(5, 1.0, 1).unwrap();
        let x = DenseMatrix::<f64>::zeros(5, 3);
        let gt = ConvSpec::new(Model::Gt, 3);
        let gat = ConvSpec::new(Model::Gat, 3);
        assert!(conv_forward(&gt, &g, &x, &ConvWeights::identity(&gat)).is_err());
        assert!(conv_forward(&gt, &g, &DenseMatrix::<f64>::zeros(5, 2), &ConvWeights::identity(&gt)).is_err());
        assert!(conv_forward(&ConvSpec::new(Model::Gt, 0), &g, &x, &ConvWeights::identity(&gt)).is_err());
    }
}
