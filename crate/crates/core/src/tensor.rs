use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major tensor.
///
/// Axis order for 6-D activation tensors is `(batch, channel, x, y, z, t)`
/// with `t` fastest-varying, so one spatial position's time samples are
/// contiguous and a `(z, t)` plane is one contiguous block. The convolution
/// kernels lean on that layout for their inner loops.
///
/// Lower-rank tensors (bias `[C]`, norm scale `[C]`) use the same container.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "tensor_new",
                format!("shape {:?} implies {} elements, got {}", shape, numel, data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![S::zero(); numel],
        }
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> S) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..numel).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Interpret the shape as the canonical 6-axis activation layout.
    pub fn dims6(&self) -> Result<Dims6> {
        if self.shape.len() != 6 {
            return Err(Error::shape(
                "dims6",
                format!("expected 6 axes (n,c,x,y,z,t), got shape {:?}", self.shape),
            ));
        }
        Ok(Dims6 {
            n: self.shape[0],
            c: self.shape[1],
            x: self.shape[2],
            y: self.shape[3],
            z: self.shape[4],
            t: self.shape[5],
        })
    }

    /// Row-major offset of a multi-index. Test/debug helper, not a hot path.
    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(Error::shape(
                "offset",
                format!("index rank {} vs shape rank {}", index.len(), self.shape.len()),
            ));
        }
        let mut off = 0usize;
        for (axis, (&i, &d)) in index.iter().zip(&self.shape).enumerate() {
            if i >= d {
                return Err(Error::shape(
                    "offset",
                    format!("index {} out of range on axis {} (extent {})", i, axis, d),
                ));
            }
            off = off * d + i;
        }
        Ok(off)
    }

    pub fn at(&self, index: &[usize]) -> Result<S> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: S) -> Result<()> {
        let off = self.offset(index)?;
        self.data[off] = value;
        Ok(())
    }

    /// True when every element is finite (no NaN/Inf).
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Convert to another scalar type through `f64`.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::from_f64(v.as_f64())).collect(),
        }
    }
}

/// Extents of a 6-D activation tensor `(n, c, x, y, z, t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims6 {
    pub n: usize,
    pub c: usize,
    pub x: usize,
    pub y: usize,
    pub z: usize,
    pub t: usize,
}

impl Dims6 {
    pub fn numel(&self) -> usize {
        self.n * self.c * self.x * self.y * self.z * self.t
    }

    /// Elements in one (x,y,z,t) block, i.e. the channel stride.
    pub fn spatial(&self) -> usize {
        self.x * self.y * self.z * self.t
    }

    /// Spatial extents as an array ordered (x, y, z, t).
    pub fn xyzt(&self) -> [usize; 4] {
        [self.x, self.y, self.z, self.t]
    }

    pub fn to_vec(&self) -> Vec<usize> {
        vec![self.n, self.c, self.x, self.y, self.z, self.t]
    }

    /// Offset of `(n, c, x, y, z, 0)`; the t axis is contiguous from there.
    #[inline(always)]
    pub fn row_offset(&self, n: usize, c: usize, x: usize, y: usize, z: usize) -> usize {
        ((((n * self.c + c) * self.x + x) * self.y + y) * self.z + z) * self.t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_length() {
        let r = Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]);
        assert!(matches!(r, Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn offset_is_row_major_t_fastest() {
        let t = Tensor::<f32>::zeros(&[1, 2, 3, 4, 5, 6]);
        // Stepping t by 1 moves the flat offset by 1.
        let a = t.offset(&[0, 1, 2, 3, 4, 0]).unwrap();
        let b = t.offset(&[0, 1, 2, 3, 4, 1]).unwrap();
        assert_eq!(b, a + 1);
        // Stepping z by 1 moves by the t extent.
        let c = t.offset(&[0, 1, 2, 3, 3, 0]).unwrap();
        assert_eq!(a, c + 6);
    }

    #[test]
    fn dims6_row_offset_matches_offset() {
        let t = Tensor::<f64>::zeros(&[2, 3, 4, 5, 6, 7]);
        let d = t.dims6().unwrap();
        for (n, c, x, y, z) in [(0, 0, 0, 0, 0), (1, 2, 3, 4, 5), (1, 0, 2, 1, 3)] {
            assert_eq!(
                d.row_offset(n, c, x, y, z),
                t.offset(&[n, c, x, y, z, 0]).unwrap()
            );
        }
    }

    #[test]
    fn out_of_range_index_rejected() {
        let t = Tensor::<f32>::zeros(&[2, 2]);
        assert!(t.offset(&[0, 2]).is_err());
        assert!(t.offset(&[0]).is_err());
    }
}
