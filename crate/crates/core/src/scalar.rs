use num_traits::{Float, NumAssignOps};

/// Element type for tensors and numeric kernels.
///
/// Everything in the engine is generic over this so the same code path serves
/// two purposes: `f32` for training speed and `f64` for finite-difference
/// gradient verification, where single precision would drown the comparison
/// in rounding noise.
pub trait Scalar:
    Float
    + NumAssignOps
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// Scalar name used in file headers and debug output.
    const NAME: &'static str;
}

impl Scalar for f32 {
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }

    const NAME: &'static str = "f32";
}

impl Scalar for f64 {
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }

    const NAME: &'static str = "f64";
}
