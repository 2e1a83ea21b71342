//! Floating-point element type shared by every kernel.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Element type of dense features and edge scalars.
///
/// Implemented for `f32` and `f64`. `BYTES` is the width charged by the
/// traffic model for every element moved.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    const BYTES: usize;
    const NAME: &'static str;

    /// Lossy conversion from `f64`; used for parameters and test data.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 always converts to a float type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float always converts to f64")
    }

    /// Raw little-endian bytes, used for output digests.
    fn le_bytes(self) -> Vec<u8>;
}

impl Scalar for f32 {
    const BYTES: usize = 4;
    const NAME: &'static str = "f32";

    fn le_bytes(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }
}

impl Scalar for f64 {
    const BYTES: usize = 8;
    const NAME: &'static str = "f64";

    fn le_bytes(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }
}

/// Runtime tag for the element type, as selected on the command line or in
/// a benchmark config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn bytes(self) -> usize {
        match self {
            DType::F32 => f32::BYTES,
            DType::F64 => f64::BYTES,
        }
    }
}

impl std::str::FromStr for DType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f32" => Ok(DType::F32),
            "f64" => Ok(DType::F64),
            other => Err(format!("unknown dtype `{other}` (expected f32 or f64)")),
        }
    }
}

impl Display for DType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        })
    }
}
