use serde::{Deserialize, Serialize};

use super::NumericsError;
use crate::scalar::Real;

/// Dense row-major array. Every value is finite and the shape has no zero extents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawArray<T>", bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct Array<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

#[derive(Deserialize)]
struct RawArray<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> TryFrom<RawArray<T>> for Array<T> {
    type Error = NumericsError;

    fn try_from(raw: RawArray<T>) -> Result<Self, Self::Error> {
        Array::new(raw.shape, raw.data)
    }
}

/// Neumaier's variant of Kahan summation.
pub(crate) fn compensated_sum<T: Real>(values: impl IntoIterator<Item = T>) -> T {
    let (mut sum, mut comp) = (T::zero(), T::zero());
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Real> Array<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, NumericsError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(NumericsError::InvalidArgument {
                op: "array",
                reason: format!("shape {shape:?} must be non-empty with positive extents"),
            });
        }
        if numel(&shape) != data.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "array",
                expected: shape,
                got: vec![data.len()],
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite {
                op: "array",
                index: Some(pos),
            });
        }
        Ok(Self { shape, data })
    }

    /// Builds an array without validation; callers guarantee the invariants.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        assert!(value.is_finite(), "fill value must be finite");
        assert!(!shape.is_empty() && shape.iter().all(|&d| d > 0));
        Self::from_parts(shape.to_vec(), vec![value; numel(shape)])
    }

    pub fn scalar(value: T) -> Self {
        Self::full(&[1], value)
    }

    /// Single-element array whose finiteness is checked later by the tape.
    pub(crate) fn raw_scalar(value: T) -> Self {
        Self::from_parts(vec![1], vec![value])
    }

    pub fn from_vec(data: Vec<T>) -> Result<Self, NumericsError> {
        let n = data.len();
        Self::new(vec![n], data)
    }

    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> T) -> Result<Self, NumericsError> {
        let data = (0..numel(shape)).map(f).collect();
        Self::new(shape.to_vec(), data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element array.
    pub fn item(&self) -> Option<T> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn get(&self, index: &[usize]) -> Option<T> {
        if index.len() != self.shape.len() {
            return None;
        }
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            if i >= d {
                return None;
            }
            flat = flat * d + i;
        }
        Some(self.data[flat])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self, NumericsError> {
        if numel(shape) != self.len() || shape.contains(&0) {
            return Err(NumericsError::ShapeMismatch {
                op: "reshape",
                expected: shape.to_vec(),
                got: self.shape.clone(),
            });
        }
        Ok(Self::from_parts(shape.to_vec(), self.data.clone()))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Result<Self, NumericsError> {
        Self::new(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self, NumericsError> {
        if self.shape != other.shape {
            return Err(NumericsError::ShapeMismatch {
                op: "zip_map",
                expected: self.shape.clone(),
                got: other.shape.clone(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::new(self.shape.clone(), data)
    }

    /// Compensated sum, so reductions over whole images stay accurate enough
    /// for finite-difference checks.
    pub fn sum(&self) -> T {
        compensated_sum(self.data.iter().copied())
    }

    pub fn dot(&self, other: &Self) -> T {
        compensated_sum(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b))
    }

    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn cast<U: Real>(&self) -> Array<U> {
        Array::from_parts(
            self.shape.clone(),
            self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_and_bad_shapes() {
        assert!(matches!(
            Array::new(vec![2], vec![1.0, f64::NAN]),
            Err(NumericsError::NonFinite { index: Some(1), .. })
        ));
        assert!(Array::new(vec![3], vec![1.0f64, 2.0]).is_err());
        assert!(Array::<f64>::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn json_round_trip_validates() {
        let a = Array::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = serde_json::to_string(&a).unwrap();
        assert_eq!(s, r#"{"shape":[2,2],"data":[1.0,2.0,3.0,4.0]}"#);
        let back: Array<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, a);
        assert!(serde_json::from_str::<Array<f64>>(r#"{"shape":[3],"data":[1.0]}"#).is_err());
    }

    #[test]
    fn indexing_is_row_major() {
        let a = Array::from_fn(&[2, 3], |i| i as f64).unwrap();
        assert_eq!(a.get(&[1, 2]), Some(5.0));
        assert_eq!(a.get(&[2, 0]), None);
    }
}
