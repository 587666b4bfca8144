use serde::{Deserialize, Serialize};

use crate::{NnError, Scalar};

/// Batch × channels × height × width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one batch item.
    pub const fn item_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }
}

impl std::fmt::Display for Shape4 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.n, self.c, self.h, self.w)
    }
}

/// Dense NCHW tensor stored contiguously in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Shape4,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: Shape4) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.len()],
        }
    }

    pub fn filled(shape: Shape4, value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape4, data: Vec<T>) -> Result<Self, NnError> {
        if data.len() != shape.len() {
            return Err(NnError::ShapeMismatch {
                context: "tensor construction",
                expected: format!("{} elements for {shape}", shape.len()),
                got: format!("{} elements", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn item(&self, n: usize) -> &[T] {
        let len = self.shape.item_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [T] {
        let len = self.shape.item_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + y) * self.shape.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(n, c, y, x)]
    }

    /// Same data viewed under a different shape with equal element count.
    pub fn reshape(self, shape: Shape4) -> Result<Self, NnError> {
        if shape.len() != self.shape.len() {
            return Err(NnError::ShapeMismatch {
                context: "reshape",
                expected: format!("{} elements", self.shape.len()),
                got: format!("{shape}"),
            });
        }
        Ok(Self {
            shape,
            data: self.data,
        })
    }

    /// Stacks batch items along `n`; all items must share `c, h, w`.
    pub fn concat_batch(parts: &[&Tensor<T>]) -> Result<Self, NnError> {
        let first = parts.first().ok_or(NnError::EmptyBatch)?.shape;
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            if (p.shape.c, p.shape.h, p.shape.w) != (first.c, first.h, first.w) {
                return Err(NnError::ShapeMismatch {
                    context: "batch concatenation",
                    expected: format!("items of {first}"),
                    got: format!("{}", p.shape),
                });
            }
            data.extend_from_slice(&p.data);
            n += p.shape.n;
        }
        Ok(Self {
            shape: Shape4::new(n, first.c, first.h, first.w),
            data,
        })
    }

    /// Copies batch items `start..end`.
    pub fn slice_batch(&self, start: usize, end: usize) -> Self {
        let len = self.shape.item_len();
        Self {
            shape: Shape4::new(end - start, self.shape.c, self.shape.h, self.shape.w),
            data: self.data[start * len..end * len].to_vec(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: T) {
        for v in &mut self.data {
            *v *= k;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn sq_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.as_f64()))
                .collect(),
        }
    }
}
