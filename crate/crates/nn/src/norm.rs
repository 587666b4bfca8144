use crate::{Mode, NnError, Param, Scalar, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over (N, H, W).
///
/// Training mode normalizes with batch statistics and folds them into the
/// running estimates; evaluation mode uses the running estimates.
#[derive(Clone, Debug)]
pub struct BatchNorm2d<T> {
    pub channels: usize,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    cache: Option<BnCache<T>>,
}

#[derive(Clone, Debug)]
struct BnCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::filled(format!("{name}.weight"), vec![channels], T::one()),
            beta: Param::zeros(format!("{name}.bias"), vec![channels]),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            cache: None,
        }
    }

    #[allow(clippy::needless_range_loop)]
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let s = x.shape();
        if s.c != self.channels {
            return Err(NnError::ShapeMismatch {
                context: "batch-norm channels",
                expected: format!("{}", self.channels),
                got: format!("{}", s.c),
            });
        }
        let plane = s.plane();
        let count = s.n * plane;
        let eps = T::from_f64_lossy(BN_EPS);
        let mut y = Tensor::zeros(s);
        match mode {
            Mode::Eval => {
                for c in 0..s.c {
                    let inv = (self.running_var[c] + eps).sqrt().recip();
                    let (g, b, m) = (self.gamma.value[c], self.beta.value[c], self.running_mean[c]);
                    for n in 0..s.n {
                        let base = (n * s.c + c) * plane;
                        for i in base..base + plane {
                            y.data_mut()[i] = g * (x.data()[i] - m) * inv + b;
                        }
                    }
                }
                self.cache = None;
            }
            Mode::Train => {
                if count < 2 {
                    return Err(NnError::BatchTooSmall { count });
                }
                let mut xhat = Tensor::zeros(s);
                let mut inv_std = vec![T::zero(); s.c];
                let momentum = T::from_f64_lossy(BN_MOMENTUM);
                let count_t = T::from_usize(count).expect("count fits");
                for c in 0..s.c {
                    // Two-pass in f64 keeps f32 statistics stable on large planes.
                    let mut sum = 0.0f64;
                    for n in 0..s.n {
                        let base = (n * s.c + c) * plane;
                        sum += x.data()[base..base + plane].iter().map(|v| v.as_f64()).sum::<f64>();
                    }
                    let mean = sum / count as f64;
                    let mut sq = 0.0f64;
                    for n in 0..s.n {
                        let base = (n * s.c + c) * plane;
                        sq += x.data()[base..base + plane]
                            .iter()
                            .map(|v| (v.as_f64() - mean).powi(2))
                            .sum::<f64>();
                    }
                    let var = sq / count as f64;
                    let inv = T::from_f64_lossy(1.0 / (var + BN_EPS).sqrt());
                    let mean_t = T::from_f64_lossy(mean);
                    inv_std[c] = inv;
                    let (g, b) = (self.gamma.value[c], self.beta.value[c]);
                    for n in 0..s.n {
                        let base = (n * s.c + c) * plane;
                        for i in base..base + plane {
                            let h = (x.data()[i] - mean_t) * inv;
                            xhat.data_mut()[i] = h;
                            y.data_mut()[i] = g * h + b;
                        }
                    }
                    let unbiased = T::from_f64_lossy(var) * count_t / (count_t - T::one());
                    self.running_mean[c] = (T::one() - momentum) * self.running_mean[c] + momentum * mean_t;
                    self.running_var[c] = (T::one() - momentum) * self.running_var[c] + momentum * unbiased;
                }
                self.cache = Some(BnCache { xhat, inv_std });
            }
        }
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>, need_dx: bool) -> Result<Option<Tensor<T>>, NnError> {
        let cache = self.cache.take().ok_or(NnError::NoForwardCache("batch-norm"))?;
        let s = dy.shape();
        if s != cache.xhat.shape() {
            return Err(NnError::ShapeMismatch {
                context: "batch-norm backward",
                expected: format!("{}", cache.xhat.shape()),
                got: format!("{s}"),
            });
        }
        let plane = s.plane();
        let m = T::from_usize(s.n * plane).expect("count fits");
        let mut dx = need_dx.then(|| Tensor::zeros(s));
        for c in 0..s.c {
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for n in 0..s.n {
                let base = (n * s.c + c) * plane;
                for i in base..base + plane {
                    sum_dy += dy.data()[i];
                    sum_dy_xhat += dy.data()[i] * cache.xhat.data()[i];
                }
            }
            self.gamma.grad[c] += sum_dy_xhat;
            self.beta.grad[c] += sum_dy;
            if let Some(dx) = dx.as_mut() {
                let k = self.gamma.value[c] * cache.inv_std[c] / m;
                for n in 0..s.n {
                    let base = (n * s.c + c) * plane;
                    for i in base..base + plane {
                        dx.data_mut()[i] =
                            k * (m * dy.data()[i] - sum_dy - cache.xhat.data()[i] * sum_dy_xhat);
                    }
                }
            }
        }
        Ok(dx)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        vec![&self.gamma, &self.beta]
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}
