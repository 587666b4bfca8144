use rand::Rng;

use crate::{Mode, NnError, Param, Scalar, Shape4, Tensor};

/// Fully connected layer over the flattened `(C, H, W)` item. Output shape `(N, out, 1, 1)`.
#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(name: &str, in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        Self {
            in_features,
            out_features,
            weight: Param::uniform(format!("{name}.weight"), vec![out_features, in_features], bound, rng),
            bias: Param::uniform(format!("{name}.bias"), vec![out_features], bound, rng),
            cache: None,
        }
    }

    pub fn output_shape(&self, s: Shape4) -> Result<Shape4, NnError> {
        if s.item_len() != self.in_features {
            return Err(NnError::ShapeMismatch {
                context: "linear input features",
                expected: format!("{}", self.in_features),
                got: format!("{} ({s})", s.item_len()),
            });
        }
        Ok(Shape4::new(s.n, self.out_features, 1, 1))
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let os = self.output_shape(x.shape())?;
        let n = x.shape().n;
        let mut y = Tensor::zeros(os);
        for (row, out) in y.data_mut().chunks_mut(self.out_features).enumerate() {
            debug_assert!(row < n);
            out.copy_from_slice(&self.bias.value);
        }
        // Y (n × out) += X (n × in) · Wᵀ (in × out)
        T::gemm(
            n,
            self.in_features,
            self.out_features,
            T::one(),
            x.data(),
            self.in_features as isize,
            1,
            &self.weight.value,
            1,
            self.in_features as isize,
            T::one(),
            y.data_mut(),
            self.out_features as isize,
            1,
        );
        self.cache = mode.is_train().then(|| x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>, need_dx: bool) -> Result<Option<Tensor<T>>, NnError> {
        let x = self.cache.take().ok_or(NnError::NoForwardCache("linear"))?;
        let n = x.shape().n;
        for row in dy.data().chunks(self.out_features) {
            for (g, &v) in self.bias.grad.iter_mut().zip(row) {
                *g += v;
            }
        }
        // dW (out × in) += dYᵀ (out × n) · X (n × in)
        T::gemm(
            self.out_features,
            n,
            self.in_features,
            T::one(),
            dy.data(),
            1,
            self.out_features as isize,
            x.data(),
            self.in_features as isize,
            1,
            T::one(),
            &mut self.weight.grad,
            self.in_features as isize,
            1,
        );
        if !need_dx {
            return Ok(None);
        }
        let mut dx = Tensor::zeros(x.shape());
        // dX (n × in) = dY (n × out) · W (out × in)
        T::gemm(
            n,
            self.out_features,
            self.in_features,
            T::one(),
            dy.data(),
            self.out_features as isize,
            1,
            &self.weight.value,
            self.in_features as isize,
            1,
            T::zero(),
            dx.data_mut(),
            self.in_features as isize,
            1,
        );
        Ok(Some(dx))
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}
