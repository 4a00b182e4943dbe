//! Dense row-major tensors of rank 0, 1 or 2 and the kernels graph nodes
//! lower to.
//!
//! Every kernel is a pure function of its inputs and returns a fresh tensor.

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Concrete dimensions of a tensor. Rank is at most 2.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.len() > 2 {
            return Err(Error::InvalidShape(format!(
                "rank {} exceeds the supported maximum of 2",
                dims.len()
            )));
        }
        Ok(Shape(dims.to_vec()))
    }

    pub fn scalar() -> Self {
        Shape(Vec::new())
    }

    pub fn vector(len: usize) -> Self {
        Shape(vec![len])
    }

    pub fn matrix(rows: usize, cols: usize) -> Self {
        Shape(vec![rows, cols])
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    /// Number of elements; 1 for rank 0.
    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

/// Elementwise unary functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryKind {
    Sigmoid,
    Relu,
    /// Natural log of the argument clamped from below by the floor, if any.
    Log,
    Neg,
    /// Indicator `1[x > 0]`, the derivative of relu (0 at exactly 0).
    Step,
    /// `1 / x` with the same clamping as [`UnaryKind::Log`].
    Reciprocal,
}

/// Elementwise binary functions. Operands must share a shape, or one of
/// them must be rank 0 and is broadcast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

/// Overflow-free logistic function: only ever exponentiates a non-positive
/// argument.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    let one = T::one();
    if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(dims: &[usize], data: Vec<T>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return Err(Error::InvalidShape(format!(
                "shape {shape} needs {} values, got {}",
                shape.numel(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_shape(shape: Shape, data: Vec<T>) -> Result<Self> {
        Self::new(shape.dims(), data)
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: Shape::scalar(),
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<T>) -> Self {
        Tensor {
            shape: Shape::vector(data.len()),
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(&[rows, cols], data)
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidShape("ragged rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(&[rows.len(), cols], data)
    }

    pub fn filled(shape: &Shape, v: T) -> Self {
        Tensor {
            shape: shape.clone(),
            data: vec![v; shape.numel()],
        }
    }

    pub fn zeros(shape: &Shape) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn ones(shape: &Shape) -> Self {
        Self::filled(shape, T::one())
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![T::zero(); n * n];
        for i in 0..n {
            data[i * n + i] = T::one();
        }
        Tensor {
            shape: Shape::matrix(n, n),
            data,
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn rank(&self) -> usize {
        self.shape.rank()
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

    /// The value of a rank-0 tensor.
    pub fn as_scalar(&self) -> Option<T> {
        (self.rank() == 0).then(|| self.data[0])
    }

    /// Element `(i, j)` of a matrix.
    pub fn at(&self, i: usize, j: usize) -> T {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.dims()[1] + j]
    }

    /// Same elements under a different shape of equal size.
    pub fn reshape(&self, shape: &Shape) -> Result<Self> {
        if shape.numel() != self.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {} as {shape}", self.shape),
            ));
        }
        Ok(Tensor {
            shape: shape.clone(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest absolute elementwise difference, or `None` if shapes differ.
    pub fn max_abs_diff(&self, other: &Self) -> Option<T> {
        if self.shape != other.shape {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| (a - b).abs())
                .fold(T::zero(), T::max),
        )
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        let (m, k) = match *self.dims() {
            [m, k] => (m, k),
            _ => {
                return Err(Error::shape(
                    "matmul",
                    format!("lhs {} is not a matrix", self.shape),
                ))
            }
        };
        let (k2, n) = match *rhs.dims() {
            [k2, n] => (k2, n),
            _ => {
                return Err(Error::shape(
                    "matmul",
                    format!("rhs {} is not a matrix", rhs.shape),
                ))
            }
        };
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner dimensions differ: {} x {}", self.shape, rhs.shape),
            ));
        }
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &self.data[i * k..(i + 1) * k];
            let dst = &mut out[i * n..(i + 1) * n];
            for (p, &a) in row.iter().enumerate() {
                let src = &rhs.data[p * n..(p + 1) * n];
                for (d, &b) in dst.iter_mut().zip(src) {
                    *d = *d + a * b;
                }
            }
        }
        Ok(Tensor {
            shape: Shape::matrix(m, n),
            data: out,
        })
    }

    /// `out[i, j] = self[i, j] + bias[j]`.
    pub fn add_row_broadcast(&self, bias: &Self) -> Result<Self> {
        let cols = match *self.dims() {
            [_, c] => c,
            _ => {
                return Err(Error::shape(
                    "add_row_broadcast",
                    format!("lhs {} is not a matrix", self.shape),
                ))
            }
        };
        if bias.dims() != [cols] {
            return Err(Error::shape(
                "add_row_broadcast",
                format!("bias {} does not match {} columns", bias.shape, cols),
            ));
        }
        let data = if cols == 0 {
            Vec::new()
        } else {
            self.data
                .chunks(cols)
                .flat_map(|row| row.iter().zip(&bias.data).map(|(&a, &b)| a + b))
                .collect()
        };
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Applies `kind` elementwise. `floor` bounds the argument of `Log` and
    /// `Reciprocal` from below; with `None` a non-positive argument is a
    /// domain error.
    pub fn map_unary(&self, kind: UnaryKind, floor: Option<T>) -> Result<Self> {
        let clamp = |x: T| -> Result<T> {
            match floor {
                Some(lo) => Ok(x.max(lo)),
                None if x > T::zero() => Ok(x),
                None => Err(Error::DomainError(format!(
                    "{kind:?} of non-positive value {x}"
                ))),
            }
        };
        let data = match kind {
            UnaryKind::Sigmoid => self.data.iter().map(|&x| sigmoid(x)).collect(),
            UnaryKind::Relu => self.data.iter().map(|&x| x.max(T::zero())).collect(),
            UnaryKind::Neg => self.data.iter().map(|&x| -x).collect(),
            UnaryKind::Step => self
                .data
                .iter()
                .map(|&x| if x > T::zero() { T::one() } else { T::zero() })
                .collect(),
            UnaryKind::Log => self
                .data
                .iter()
                .map(|&x| clamp(x).map(T::ln))
                .collect::<Result<_>>()?,
            UnaryKind::Reciprocal => self
                .data
                .iter()
                .map(|&x| clamp(x).map(T::recip))
                .collect::<Result<_>>()?,
        };
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn binary(&self, kind: BinaryKind, rhs: &Self) -> Result<Self> {
        let f = |a: T, b: T| match kind {
            BinaryKind::Add => a + b,
            BinaryKind::Sub => a - b,
            BinaryKind::Mul => a * b,
        };
        if self.shape == rhs.shape {
            let data = self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| f(a, b))
                .collect();
            return Ok(Tensor {
                shape: self.shape.clone(),
                data,
            });
        }
        if let Some(a) = self.as_scalar() {
            return Ok(rhs.map(|b| f(a, b)));
        }
        if let Some(b) = rhs.as_scalar() {
            return Ok(self.map(|a| f(a, b)));
        }
        Err(Error::shape(
            "binary_elementwise",
            format!("{kind:?} of {} and {}", self.shape, rhs.shape),
        ))
    }

    pub fn reduce_sum(&self) -> Self {
        Tensor::scalar(self.data.iter().fold(T::zero(), |acc, &x| acc + x))
    }

    pub fn dot(&self, rhs: &Self) -> Result<Self> {
        if self.rank() != 1 || rhs.rank() != 1 || self.len() != rhs.len() {
            return Err(Error::shape(
                "dot",
                format!(
                    "needs equal-length vectors, got {} and {}",
                    self.shape, rhs.shape
                ),
            ));
        }
        let s = self
            .data
            .iter()
            .zip(&rhs.data)
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b);
        Ok(Tensor::scalar(s))
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = match *self.dims() {
            [r, c] => (r, c),
            _ => {
                return Err(Error::shape(
                    "transpose",
                    format!("{} is not a matrix", self.shape),
                ))
            }
        };
        let mut data = Vec::with_capacity(r * c);
        for j in 0..c {
            for i in 0..r {
                data.push(self.data[i * c + j]);
            }
        }
        Ok(Tensor {
            shape: Shape::matrix(c, r),
            data,
        })
    }

    /// Sums a matrix over its rows, giving one value per column.
    pub fn column_sum(&self) -> Result<Self> {
        let c = match *self.dims() {
            [_, c] => c,
            _ => {
                return Err(Error::shape(
                    "column_sum",
                    format!("{} is not a matrix", self.shape),
                ))
            }
        };
        let mut out = vec![T::zero(); c];
        if c > 0 {
            for row in self.data.chunks(c) {
                for (o, &v) in out.iter_mut().zip(row) {
                    *o = *o + v;
                }
            }
        }
        Ok(Tensor::vector(out))
    }
}

impl<T: Scalar> fmt::Display for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{} {:?}", self.shape, self.data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: usize, cols: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::matrix(rows, cols, v.to_vec()).unwrap()
    }

    fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i * k + p] * b[p * n + j];
                }
                out[i * n + j] = s;
            }
        }
        out
    }

    #[test]
    fn shape_rejects_rank_three() {
        assert!(Shape::new(&[1, 2, 3]).is_err());
        assert_eq!(Shape::scalar().numel(), 1);
        assert_eq!(Shape::vector(0).numel(), 0);
    }

    #[test]
    fn new_checks_length() {
        assert!(Tensor::<f64>::new(&[2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::<f64>::new(&[], vec![]).is_err());
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let a = m(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(a.matmul(&Tensor::identity(2)).unwrap(), a);
        let ones = m(2, 1, &[1.0, 1.0]);
        assert_eq!(a.matmul(&ones).unwrap(), m(2, 1, &[3.0, 7.0]));
    }

    #[test]
    fn matmul_random_matches_triple_loop() {
        let a: Vec<f64> = (0..12)
            .map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0)
            .collect();
        let b: Vec<f64> = (0..8).map(|i| ((i * 13 % 7) as f64 - 3.0) / 2.0).collect();
        let got = m(3, 4, &a).matmul(&m(4, 2, &b)).unwrap();
        let want = naive_matmul(&a, &b, 3, 4, 2);
        for (g, w) in got.data().iter().zip(&want) {
            assert!((g - w).abs() <= 1e-12);
        }
    }

    #[test]
    fn matmul_shape_errors() {
        let a = m(2, 2, &[1.0; 4]);
        assert!(matches!(
            a.matmul(&m(3, 1, &[1.0; 3])),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(a.matmul(&Tensor::vector(vec![1.0, 2.0])).is_err());
    }

    #[test]
    fn add_row_broadcast_cases() {
        let r = m(1, 2, &[0.0, 0.0])
            .add_row_broadcast(&Tensor::vector(vec![1.0, 2.0]))
            .unwrap();
        assert_eq!(r, m(1, 2, &[1.0, 2.0]));
        let z = Tensor::<f64>::zeros(&Shape::matrix(3, 1));
        assert_eq!(z.add_row_broadcast(&Tensor::vector(vec![0.0])).unwrap(), z);
        let r = m(3, 1, &[1.0, 2.0, 3.0])
            .add_row_broadcast(&Tensor::vector(vec![10.0]))
            .unwrap();
        assert_eq!(r, m(3, 1, &[11.0, 12.0, 13.0]));
        assert!(z
            .add_row_broadcast(&Tensor::vector(vec![1.0, 2.0]))
            .is_err());
    }

    #[test]
    fn unary_cases() {
        let s = Tensor::scalar(0.0)
            .map_unary(UnaryKind::Sigmoid, None)
            .unwrap();
        assert_eq!(s.as_scalar(), Some(0.5));
        let r = Tensor::vector(vec![-1.0, 0.0, 2.0])
            .map_unary(UnaryKind::Relu, None)
            .unwrap();
        assert_eq!(r.data(), &[0.0, 0.0, 2.0]);
        let st = Tensor::vector(vec![-1.0, 0.0, 2.0])
            .map_unary(UnaryKind::Step, None)
            .unwrap();
        assert_eq!(st.data(), &[0.0, 0.0, 1.0]);
        let l = Tensor::scalar(1.0).map_unary(UnaryKind::Log, None).unwrap();
        assert_eq!(l.as_scalar(), Some(0.0));
    }

    #[test]
    fn log_clamps_or_fails() {
        let z = Tensor::vector(vec![0.0, -3.0]);
        let l = z.map_unary(UnaryKind::Log, Some(1e-12)).unwrap();
        assert!(l.all_finite());
        assert_eq!(l.data()[0], (1e-12f64).ln());
        assert!(matches!(
            z.map_unary(UnaryKind::Log, None),
            Err(Error::DomainError(_))
        ));
        let r = z.map_unary(UnaryKind::Reciprocal, Some(1e-12)).unwrap();
        assert_eq!(r.data()[0], 1e12);
    }

    #[test]
    fn sigmoid_extremes_do_not_overflow() {
        let t = Tensor::vector(vec![-1000.0, 1000.0, -710.0, 710.0]);
        let s = t.map_unary(UnaryKind::Sigmoid, None).unwrap();
        assert!(s.all_finite());
        assert_eq!(s.data()[1], 1.0);
        assert!(s.data()[0] >= 0.0 && s.data()[0] < 1e-300);
    }

    #[test]
    fn binary_cases() {
        let a = Tensor::vector(vec![1.0, 1.0]);
        assert_eq!(a.binary(BinaryKind::Sub, &a).unwrap().data(), &[0.0, 0.0]);
        let v = Tensor::vector(vec![1.0, 2.0, 3.0]);
        let r = Tensor::scalar(2.0).binary(BinaryKind::Mul, &v).unwrap();
        assert_eq!(r.data(), &[2.0, 4.0, 6.0]);
        let r = v.binary(BinaryKind::Sub, &Tensor::scalar(1.0)).unwrap();
        assert_eq!(r.data(), &[0.0, 1.0, 2.0]);
        assert!(a.binary(BinaryKind::Mul, &v).is_err());
    }

    #[test]
    fn reduce_sum_cases() {
        assert_eq!(
            Tensor::<f64>::vector(vec![]).reduce_sum().as_scalar(),
            Some(0.0)
        );
        assert_eq!(
            Tensor::vector(vec![1.0, 2.0, 3.0]).reduce_sum().as_scalar(),
            Some(6.0)
        );
        let ones = Tensor::<f64>::ones(&Shape::matrix(4, 5));
        assert_eq!(ones.reduce_sum().as_scalar(), Some(20.0));
    }

    #[test]
    fn dot_cases() {
        let e1 = Tensor::vector(vec![1.0, 0.0]);
        let e2 = Tensor::vector(vec![0.0, 1.0]);
        assert_eq!(e1.dot(&e2).unwrap().as_scalar(), Some(0.0));
        let a = Tensor::vector(vec![1.0, 2.0]);
        assert_eq!(
            a.dot(&Tensor::vector(vec![3.0, 4.0])).unwrap().as_scalar(),
            Some(11.0)
        );
        assert!(a.dot(&Tensor::vector(vec![1.0])).is_err());
        assert!(a.dot(&m(2, 1, &[1.0, 1.0])).is_err());
    }

    #[test]
    fn transpose_and_column_sum() {
        let a = m(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let t = a.transpose().unwrap();
        assert_eq!(t, m(3, 2, &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]));
        assert_eq!(a.column_sum().unwrap().data(), &[5.0, 7.0, 9.0]);
    }

    #[test]
    fn works_for_f32() {
        let a = Tensor::<f32>::matrix(1, 2, vec![1.0, -2.0]).unwrap();
        let s = a.map_unary(UnaryKind::Sigmoid, None).unwrap();
        assert!((s.data()[0] - 0.731_058_6).abs() < 1e-6);
    }

    fn small_matrix() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
        (1usize..=8, 1usize..=8).prop_flat_map(|(r, c)| {
            (
                Just(r),
                Just(c),
                prop::collection::vec(-10.0f64..10.0, r * c),
            )
        })
    }

    proptest! {
        #[test]
        fn identity_is_exact((r, c, v) in small_matrix()) {
            let a = Tensor::matrix(r, c, v).unwrap();
            prop_assert_eq!(a.matmul(&Tensor::identity(c)).unwrap(), a.clone());
            prop_assert_eq!(Tensor::identity(r).matmul(&a).unwrap(), a);
        }

        #[test]
        fn sigmoid_monotone_in_open_interval(mut xs in prop::collection::vec(-30.0f64..30.0, 2..40)) {
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            xs.dedup();
            let s = Tensor::vector(xs).map_unary(UnaryKind::Sigmoid, None).unwrap();
            for w in s.data().windows(2) {
                prop_assert!(w[0] < w[1]);
            }
            prop_assert!(s.data().iter().all(|&y| y > 0.0 && y < 1.0));
        }

        #[test]
        fn sigmoid_symmetry(x in -50.0f64..50.0) {
            prop_assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn mul_then_sum_is_dot(pair in (1usize..=8).prop_flat_map(|n| (
            prop::collection::vec(-10.0f64..10.0, n),
            prop::collection::vec(-10.0f64..10.0, n),
        ))) {
            let a = Tensor::vector(pair.0);
            let b = Tensor::vector(pair.1);
            let via_mul = a.binary(BinaryKind::Mul, &b).unwrap().reduce_sum().as_scalar().unwrap();
            let d = a.dot(&b).unwrap().as_scalar().unwrap();
            prop_assert!((via_mul - d).abs() <= 1e-12);
            prop_assert!(a.dot(&a).unwrap().as_scalar().unwrap() >= 0.0);
        }
    }
}
