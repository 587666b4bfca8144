use crate::{Mode, NnError, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
}

/// Element-wise activation. Caches the input (ReLU family) or the output (tanh).
#[derive(Clone, Debug)]
pub struct Pointwise<T> {
    pub act: Activation,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Pointwise<T> {
    pub fn new(act: Activation) -> Self {
        Self { act, cache: None }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let y = match self.act {
            Activation::Relu => x.map(|v| v.max(T::zero())),
            Activation::LeakyRelu(slope) => {
                let a = T::from_f64_lossy(slope);
                x.map(|v| if v > T::zero() { v } else { a * v })
            }
            Activation::Tanh => x.map(|v| v.tanh()),
        };
        self.cache = mode.is_train().then(|| match self.act {
            Activation::Tanh => y.clone(),
            _ => x.clone(),
        });
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let cached = self.cache.take().ok_or(NnError::NoForwardCache("activation"))?;
        let mut dx = dy.clone();
        match self.act {
            Activation::Relu => {
                for (g, &x) in dx.data_mut().iter_mut().zip(cached.data()) {
                    if x <= T::zero() {
                        *g = T::zero();
                    }
                }
            }
            Activation::LeakyRelu(slope) => {
                let a = T::from_f64_lossy(slope);
                for (g, &x) in dx.data_mut().iter_mut().zip(cached.data()) {
                    if x <= T::zero() {
                        *g *= a;
                    }
                }
            }
            Activation::Tanh => {
                for (g, &y) in dx.data_mut().iter_mut().zip(cached.data()) {
                    *g *= T::one() - y * y;
                }
            }
        }
        Ok(dx)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}
