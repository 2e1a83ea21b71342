use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Edge operator of the sampled dense-dense product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SddmmVariant {
    /// `scale * <q_v, k_u>` (GT, AGNN).
    Dot,
    /// `LeakyReLU(el_u + er_v)` (GAT).
    Add,
}

/// Which SDDMM an attention layer uses, with its parameters.
///
/// Operand convention for every kernel taking `(q, k)`: `q` is indexed by
/// the destination node of an edge and `k` by its source. For [`Add`]
/// `q` holds the per-node destination term `er` and `k` the source term
/// `el`, both `N x 1`.
///
/// [`Add`]: SddmmVariant::Add
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SddmmKind {
    pub variant: SddmmVariant,
    /// Multiplier on the dot product (ignored by `Add`).
    pub scale: f64,
    /// Negative-side slope of LeakyReLU (ignored by `Dot`).
    pub leaky_slope: f64,
    /// Normalize `q` and `k` rows to unit length before the dot (AGNN).
    pub l2_normalize_inputs: bool,
    pub eps: f64,
}

pub const DEFAULT_L2_EPS: f64 = 1e-12;
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

impl SddmmKind {
    pub fn dot(scale: f64) -> Self {
        Self {
            variant: SddmmVariant::Dot,
            scale,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            l2_normalize_inputs: false,
            eps: DEFAULT_L2_EPS,
        }
    }

    /// Graph-transformer attention with the `1/sqrt(d)` scale.
    pub fn gt(dim: usize) -> Self {
        Self::dot(1.0 / (dim.max(1) as f64).sqrt())
    }

    /// Cosine attention scaled by `beta`.
    pub fn agnn(beta: f64) -> Self {
        Self {
            l2_normalize_inputs: true,
            ..Self::dot(beta)
        }
    }

    pub fn gat(leaky_slope: f64) -> Self {
        Self {
            variant: SddmmVariant::Add,
            scale: 1.0,
            leaky_slope,
            l2_normalize_inputs: false,
            eps: DEFAULT_L2_EPS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.variant == SddmmVariant::Add && !(self.leaky_slope > 0.0 && self.leaky_slope <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "leaky slope must lie in (0, 1], got {}",
                self.leaky_slope
            )));
        }
        if !self.scale.is_finite() {
            return Err(Error::InvalidParameter("SDDMM scale must be finite".into()));
        }
        if self.l2_normalize_inputs && (self.eps.is_nan() || self.eps <= 0.0) {
            return Err(Error::InvalidParameter("L2 epsilon must be positive".into()));
        }
        Ok(())
    }

    /// Score of one edge from the destination operand row and the source
    /// operand row (inputs already normalized when the kind asks for it).
    #[inline]
    pub fn score<T: Scalar>(&self, q_dst: &[T], k_src: &[T]) -> T {
        match self.variant {
            SddmmVariant::Dot => T::of(self.scale) * crate::tensor::dot(q_dst, k_src),
            SddmmVariant::Add => leaky_relu(k_src[0] + q_dst[0], T::of(self.leaky_slope)),
        }
    }
}

#[inline]
pub fn leaky_relu<T: Scalar>(x: T, slope: T) -> T {
    if x >= T::zero() {
        x
    } else {
        slope * x
    }
}

/// Derivative of [`leaky_relu`]; at exactly zero the negative-side slope.
#[inline]
pub fn leaky_relu_grad<T: Scalar>(x: T, slope: T) -> T {
    if x > T::zero() {
        T::one()
    } else {
        slope
    }
}
