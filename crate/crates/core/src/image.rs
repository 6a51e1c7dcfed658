use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense channel-major (C×H×W) image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<S> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<S>,
}

impl<S: Scalar> Image<S> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, S::zero())
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: S) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Input(format!(
                "buffer of {} values cannot hold a {channels}x{height}x{width} image",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Single-channel image from one scalar, handy for scalar-valued process checks.
    pub fn scalar(value: S) -> Self {
        Self::filled(1, 1, 1, value)
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> S {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: S) {
        let i = self.index(c, y, x);
        self.data[i] = v;
    }

    pub fn ensure_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                got: other.shape(),
            });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two same-shaped images.
    pub fn zip_map(&self, other: &Self, f: impl Fn(S, S) -> S) -> Result<Self> {
        self.ensure_same_shape(other)?;
        Ok(Self {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, k: S) -> Self {
        self.map(|v| v * k)
    }

    pub fn max_abs(&self) -> S {
        self.data.iter().fold(S::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn max(&self) -> S {
        self.data
            .iter()
            .fold(S::neg_infinity(), |m, &v| m.max(v))
    }

    pub fn min(&self) -> S {
        self.data.iter().fold(S::infinity(), |m, &v| m.min(v))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|v| !v.is_zero()).count()
    }

    pub fn mean(&self) -> S {
        let n = S::of(self.data.len() as f64);
        self.data.iter().copied().sum::<S>() / n
    }

    pub fn cast<T: Scalar>(&self) -> Image<T> {
        Image {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| T::of(v.as_f64())).collect(),
        }
    }
}

/// Elementwise mean of a nonempty batch.
pub fn mean_image<S: Scalar>(batch: &[Image<S>]) -> Result<Image<S>> {
    let first = batch
        .first()
        .ok_or_else(|| Error::Input("cannot average an empty batch".into()))?;
    let mut acc = vec![0.0f64; first.len()];
    for img in batch {
        first.ensure_same_shape(img)?;
        for (a, v) in acc.iter_mut().zip(img.data()) {
            *a += v.as_f64();
        }
    }
    let n = batch.len() as f64;
    let (c, h, w) = first.shape();
    Image::from_vec(c, h, w, acc.into_iter().map(|a| S::of(a / n)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_channel_major() {
        let mut img = Image::<f64>::zeros(2, 3, 4);
        img.set(1, 2, 3, 7.0);
        assert_eq!(img.data()[img.len() - 1], 7.0);
        assert_eq!(img.get(1, 2, 3), 7.0);
    }

    #[test]
    fn zip_map_rejects_mismatched_shapes() {
        let a = Image::<f32>::zeros(1, 2, 2);
        let b = Image::<f32>::zeros(1, 2, 3);
        assert!(matches!(
            a.zip_map(&b, |x, y| x + y),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn mean_of_image_and_negation_is_zero() {
        let a = Image::from_vec(1, 1, 3, vec![1.0, -2.0, 0.5]).unwrap();
        let b = a.scale(-1.0);
        let m = mean_image(&[a, b]).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0));
        assert!(mean_image::<f64>(&[]).is_err());
    }
}
