use crate::error::{Error, Result};

/// `(batch, channels, height, width)`.
pub type Shape = [usize; 4];

/// Dense rank-4 array of `f64` in row-major (NCHW) layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::shape(
                "Tensor::from_vec",
                format!("{shape:?} needs {expected} elements, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    /// A `(1, n, 1, 1)` tensor holding `values`.
    pub fn vector(values: &[f64]) -> Self {
        Tensor {
            shape: [1, values.len(), 1, 1],
            data: values.to_vec(),
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: [1, 1, 1, 1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + h) * self.shape[3] + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.index(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: f64) {
        let i = self.index(n, c, h, w);
        self.data[i] = v;
    }

    /// Contiguous `h * w` plane for `(n, c)`.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let hw = self.shape[2] * self.shape[3];
        let start = (n * self.shape[1] + c) * hw;
        &self.data[start..start + hw]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn add_scaled(&mut self, other: &Tensor, scale: f64) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Channels `[start, end)` as a new tensor.
    pub fn slice_channels(&self, start: usize, end: usize) -> Tensor {
        let [n, c, h, w] = self.shape;
        let hw = h * w;
        let width = end - start;
        let mut data = Vec::with_capacity(n * width * hw);
        for b in 0..n {
            let off = (b * c + start) * hw;
            data.extend_from_slice(&self.data[off..off + width * hw]);
        }
        Tensor {
            shape: [n, width, h, w],
            data,
        }
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let [n, _, h, w] = first.shape;
        for p in parts {
            if p.shape[0] != n || p.shape[2] != h || p.shape[3] != w {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} vs {:?}", first.shape, p.shape),
                ));
            }
        }
        let c: usize = parts.iter().map(|p| p.shape[1]).sum();
        let hw = h * w;
        let mut data = Vec::with_capacity(n * c * hw);
        for b in 0..n {
            for p in parts {
                let pc = p.shape[1];
                let off = b * pc * hw;
                data.extend_from_slice(&p.data[off..off + pc * hw]);
            }
        }
        Ok(Tensor {
            shape: [n, c, h, w],
            data,
        })
    }
}

/// Numerically stable softmax over a non-empty slice.
pub fn softmax_vec(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_closed_forms() {
        let s = softmax_vec(&[0.0, 0.0, 0.0]).unwrap();
        for v in s {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let s = softmax_vec(&[1f64.ln(), 2f64.ln(), 3f64.ln()]).unwrap();
        for (v, e) in s.iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((v - e).abs() < 1e-12);
        }
        assert_eq!(softmax_vec(&[7.5]).unwrap(), vec![1.0]);
        assert!(softmax_vec(&[]).is_err());
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Tensor::from_vec([1, 2, 2, 2], vec![0.0; 7]).is_err());
    }

    #[test]
    fn slice_then_concat_restores() {
        let t = Tensor::from_vec([2, 3, 2, 2], (0..24).map(f64::from).collect()).unwrap();
        let a = t.slice_channels(0, 1);
        let b = t.slice_channels(1, 3);
        assert_eq!(Tensor::concat_channels(&[&a, &b]).unwrap(), t);
    }

    proptest::proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            v in proptest::collection::vec(-50.0f64..50.0, 1..8),
            shift in -20.0f64..20.0,
        ) {
            let s = softmax_vec(&v).unwrap();
            proptest::prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            proptest::prop_assert!(s.iter().all(|&x| x > 0.0));
            let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
            let t = softmax_vec(&shifted).unwrap();
            for (a, b) in s.iter().zip(&t) {
                proptest::prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
