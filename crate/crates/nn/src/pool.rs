use crate::conv::conv_out_extent;
use crate::{Mode, NnError, Scalar, Shape4, Tensor};

/// Max pooling without padding. Ties resolve to the first maximum in scan order.
#[derive(Clone, Debug)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    cache: Option<(Shape4, Vec<usize>)>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize) -> Self {
        Self {
            kernel,
            stride,
            cache: None,
        }
    }

    pub fn output_shape(&self, s: Shape4) -> Result<Shape4, NnError> {
        match (
            conv_out_extent(s.h, self.kernel, self.stride, 0),
            conv_out_extent(s.w, self.kernel, self.stride, 0),
        ) {
            (Some(h), Some(w)) => Ok(Shape4::new(s.n, s.c, h, w)),
            _ => Err(NnError::InputTooSmall {
                layer: "maxpool2d".into(),
                extent: (s.h, s.w),
                kernel: self.kernel,
            }),
        }
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let s = x.shape();
        let os = self.output_shape(s)?;
        let mut y = Tensor::zeros(os);
        let mut arg = vec![0usize; os.len()];
        let mut o = 0;
        for n in 0..s.n {
            for c in 0..s.c {
                let base = (n * s.c + c) * s.plane();
                for oy in 0..os.h {
                    for ox in 0..os.w {
                        let mut best = base + oy * self.stride * s.w + ox * self.stride;
                        let mut best_v = x.data()[best];
                        for ky in 0..self.kernel {
                            let row = base + (oy * self.stride + ky) * s.w + ox * self.stride;
                            for kx in 0..self.kernel {
                                let v = x.data()[row + kx];
                                if v > best_v {
                                    best_v = v;
                                    best = row + kx;
                                }
                            }
                        }
                        y.data_mut()[o] = best_v;
                        arg[o] = best;
                        o += 1;
                    }
                }
            }
        }
        self.cache = mode.is_train().then_some((s, arg));
        Ok(y)
    }

    pub fn backward<T: Scalar>(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (s, arg) = self.cache.take().ok_or(NnError::NoForwardCache("maxpool2d"))?;
        let mut dx = Tensor::zeros(s);
        for (g, &i) in dy.data().iter().zip(&arg) {
            dx.data_mut()[i] += *g;
        }
        Ok(dx)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Sub-pixel rearrangement `(N, C·r², H, W) → (N, C, H·r, W·r)`.
#[derive(Clone, Copy, Debug)]
pub struct PixelShuffle {
    pub factor: usize,
}

impl PixelShuffle {
    pub fn output_shape(&self, s: Shape4) -> Result<Shape4, NnError> {
        let r2 = self.factor * self.factor;
        if !s.c.is_multiple_of(r2) {
            return Err(NnError::ShapeMismatch {
                context: "pixel shuffle channels",
                expected: format!("a multiple of {r2}"),
                got: format!("{}", s.c),
            });
        }
        Ok(Shape4::new(s.n, s.c / r2, s.h * self.factor, s.w * self.factor))
    }

    /// Calls `f(input_index, output_index)` for every element.
    fn for_each_pair(&self, s: Shape4, mut f: impl FnMut(usize, usize)) {
        let r = self.factor;
        let oc = s.c / (r * r);
        let (oh, ow) = (s.h * r, s.w * r);
        for n in 0..s.n {
            for c in 0..oc {
                for i in 0..r {
                    for j in 0..r {
                        let ic = c * r * r + i * r + j;
                        for y in 0..s.h {
                            let src = ((n * s.c + ic) * s.h + y) * s.w;
                            let dst = ((n * oc + c) * oh + y * r + i) * ow + j;
                            for x in 0..s.w {
                                f(src + x, dst + x * r);
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let os = self.output_shape(x.shape())?;
        let mut y = Tensor::zeros(os);
        let (src, dst) = (x.data(), y.data_mut());
        self.for_each_pair(x.shape(), |i, o| dst[o] = src[i]);
        Ok(y)
    }

    /// `in_shape` is the shape the forward pass received.
    pub fn backward<T: Scalar>(&self, dy: &Tensor<T>, in_shape: Shape4) -> Tensor<T> {
        let mut dx = Tensor::zeros(in_shape);
        let (src, dst) = (dy.data(), dx.data_mut());
        self.for_each_pair(in_shape, |i, o| dst[i] = src[o]);
        dx
    }
}
