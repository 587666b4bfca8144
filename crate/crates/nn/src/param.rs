use rand::Rng;

use crate::Scalar;

/// A trainable parameter tensor with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn zeros(name: impl Into<String>, dims: Vec<usize>) -> Self {
        let len = dims.iter().product();
        Self {
            name: name.into(),
            dims,
            value: vec![T::zero(); len],
            grad: vec![T::zero(); len],
        }
    }

    pub fn filled(name: impl Into<String>, dims: Vec<usize>, v: T) -> Self {
        let mut p = Self::zeros(name, dims);
        p.value.iter_mut().for_each(|x| *x = v);
        p
    }

    /// Uniform in `[-bound, bound]`. Values are drawn in `f64` so equal seeds
    /// give the same parameters for every element type.
    pub fn uniform(name: impl Into<String>, dims: Vec<usize>, bound: f64, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(name, dims);
        for v in &mut p.value {
            *v = T::from_f64_lossy(rng.random_range(-bound..=bound));
        }
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn grad_norm(&self) -> f64 {
        self.grad
            .iter()
            .map(|g| g.as_f64() * g.as_f64())
            .sum::<f64>()
            .sqrt()
    }
}
