use crate::{
    Activation, BatchNorm2d, Conv2d, Linear, MaxPool2d, Mode, NnError, Param, PixelShuffle, Pointwise,
    Scalar, Shape4, Tensor,
};

#[derive(Clone, Debug)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    BatchNorm(BatchNorm2d<T>),
    Act(Pointwise<T>),
    MaxPool(MaxPool2d),
    Shuffle {
        op: PixelShuffle,
        in_shape: Option<Shape4>,
    },
    Linear(Linear<T>),
}

impl<T: Scalar> Layer<T> {
    pub fn act(a: Activation) -> Self {
        Layer::Act(Pointwise::new(a))
    }

    pub fn shuffle(factor: usize) -> Self {
        Layer::Shuffle {
            op: PixelShuffle { factor },
            in_shape: None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv2d",
            Layer::BatchNorm(_) => "batchnorm2d",
            Layer::Act(p) => match p.act {
                Activation::Relu => "relu",
                Activation::LeakyRelu(_) => "leaky_relu",
                Activation::Tanh => "tanh",
            },
            Layer::MaxPool(_) => "maxpool2d",
            Layer::Shuffle { .. } => "pixel_shuffle",
            Layer::Linear(_) => "linear",
        }
    }

    fn output_shape(&self, s: Shape4) -> Result<Shape4, NnError> {
        match self {
            Layer::Conv(c) => c.output_shape(s),
            Layer::BatchNorm(b) if b.channels != s.c => Err(NnError::ShapeMismatch {
                context: "batch-norm channels",
                expected: format!("{}", b.channels),
                got: format!("{}", s.c),
            }),
            Layer::BatchNorm(_) | Layer::Act(_) => Ok(s),
            Layer::MaxPool(p) => p.output_shape(s),
            Layer::Shuffle { op, .. } => op.output_shape(s),
            Layer::Linear(l) => l.output_shape(s),
        }
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        match self {
            Layer::Conv(c) => c.forward(x, mode),
            Layer::BatchNorm(b) => b.forward(x, mode),
            Layer::Act(a) => Ok(a.forward(x, mode)),
            Layer::MaxPool(p) => p.forward(x, mode),
            Layer::Shuffle { op, in_shape } => {
                *in_shape = mode.is_train().then_some(x.shape());
                op.forward(x)
            }
            Layer::Linear(l) => l.forward(x, mode),
        }
    }

    fn backward(&mut self, dy: &Tensor<T>, need_dx: bool) -> Result<Option<Tensor<T>>, NnError> {
        match self {
            Layer::Conv(c) => c.backward(dy, need_dx),
            Layer::BatchNorm(b) => b.backward(dy, need_dx),
            Layer::Act(a) => a.backward(dy).map(Some),
            Layer::MaxPool(p) => p.backward(dy).map(Some),
            Layer::Shuffle { op, in_shape } => {
                let s = in_shape.take().ok_or(NnError::NoForwardCache("pixel shuffle"))?;
                Ok(Some(op.backward(dy, s)))
            }
            Layer::Linear(l) => l.backward(dy, need_dx),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            Layer::Conv(c) => c.params_mut(),
            Layer::BatchNorm(b) => b.params_mut(),
            Layer::Linear(l) => l.params_mut(),
            _ => Vec::new(),
        }
    }

    fn params(&self) -> Vec<&Param<T>> {
        match self {
            Layer::Conv(c) => c.params(),
            Layer::BatchNorm(b) => b.params(),
            Layer::Linear(l) => l.params(),
            _ => Vec::new(),
        }
    }

    fn clear_cache(&mut self) {
        match self {
            Layer::Conv(c) => c.clear_cache(),
            Layer::BatchNorm(b) => b.clear_cache(),
            Layer::Act(a) => a.clear_cache(),
            Layer::MaxPool(p) => p.clear_cache(),
            Layer::Shuffle { in_shape, .. } => *in_shape = None,
            Layer::Linear(l) => l.clear_cache(),
        }
    }
}

/// Ordered layer stack with a reverse-mode backward pass.
#[derive(Clone, Debug, Default)]
pub struct Sequential<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Self { layers }
    }

    pub fn output_shape(&self, input: Shape4) -> Result<Shape4, NnError> {
        self.layers.iter().try_fold(input, |s, l| l.output_shape(s))
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let mut iter = self.layers.iter_mut();
        let Some(first) = iter.next() else {
            return Ok(x.clone());
        };
        let mut h = first.forward(x, mode)?;
        for layer in iter {
            h = layer.forward(&h, mode)?;
        }
        Ok(h)
    }

    /// Accumulates parameter gradients; returns the input gradient when `need_dx`.
    pub fn backward(&mut self, dy: &Tensor<T>, need_dx: bool) -> Result<Option<Tensor<T>>, NnError> {
        let count = self.layers.len();
        let mut g = dy.clone();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            let want = need_dx || i > 0;
            match layer.backward(&g, want)? {
                Some(next) => g = next,
                None => {
                    debug_assert!(i == 0 && !need_dx, "layer {i}/{count} dropped a required gradient");
                    return Ok(None);
                }
            }
        }
        Ok(Some(g))
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn clear_cache(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Every persistent vector (parameters, then batch-norm running statistics) in a fixed order.
    pub fn state(&self) -> Vec<(String, Vec<T>)> {
        let mut out: Vec<(String, Vec<T>)> = self
            .params()
            .into_iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect();
        for layer in &self.layers {
            if let Layer::BatchNorm(b) = layer {
                let base = b.gamma.name.trim_end_matches(".weight");
                out.push((format!("{base}.running_mean"), b.running_mean.clone()));
                out.push((format!("{base}.running_var"), b.running_var.clone()));
            }
        }
        out
    }

    pub fn load_state(&mut self, state: &[(String, Vec<T>)]) -> Result<(), NnError> {
        let expected = self.state();
        if expected.len() != state.len() {
            return Err(NnError::StateMismatch(format!(
                "expected {} tensors, got {}",
                expected.len(),
                state.len()
            )));
        }
        for ((en, ev), (gn, gv)) in expected.iter().zip(state) {
            if en != gn || ev.len() != gv.len() {
                return Err(NnError::StateMismatch(format!(
                    "tensor {en} ({} values) does not match {gn} ({} values)",
                    ev.len(),
                    gv.len()
                )));
            }
        }
        let mut it = state.iter();
        for p in self.params_mut() {
            p.value.clone_from(&it.next().expect("length checked").1);
        }
        for layer in &mut self.layers {
            if let Layer::BatchNorm(b) = layer {
                b.running_mean.clone_from(&it.next().expect("length checked").1);
                b.running_var.clone_from(&it.next().expect("length checked").1);
            }
        }
        Ok(())
    }
}
