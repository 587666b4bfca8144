use rand::Rng;

use crate::{Mode, NnError, Param, Scalar, Shape4, Tensor};

/// Square-kernel 2-D convolution, lowered to im2col + GEMM.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
    cache: Option<ConvCache<T>>,
}

#[derive(Clone, Debug)]
struct ConvCache<T> {
    input_shape: Shape4,
    cols: Vec<Vec<T>>,
}

/// Output extent along one axis, or `None` when the kernel does not fit.
pub fn conv_out_extent(n_in: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = n_in + 2 * padding;
    if padded < kernel || stride == 0 {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: Param::uniform(
                format!("{name}.weight"),
                vec![out_channels, in_channels, kernel, kernel],
                bound,
                rng,
            ),
            bias: Param::uniform(format!("{name}.bias"), vec![out_channels], bound, rng),
            cache: None,
        }
    }

    pub fn output_shape(&self, input: Shape4) -> Result<Shape4, NnError> {
        if input.c != self.in_channels {
            return Err(NnError::ShapeMismatch {
                context: "conv2d input channels",
                expected: format!("{}", self.in_channels),
                got: format!("{}", input.c),
            });
        }
        let oh = conv_out_extent(input.h, self.kernel, self.stride, self.padding);
        let ow = conv_out_extent(input.w, self.kernel, self.stride, self.padding);
        match (oh, ow) {
            (Some(oh), Some(ow)) => Ok(Shape4::new(input.n, self.out_channels, oh, ow)),
            _ => Err(NnError::InputTooSmall {
                layer: self.weight.name.clone(),
                extent: (input.h, input.w),
                kernel: self.kernel,
            }),
        }
    }

    fn im2col(&self, x: &[T], in_shape: Shape4, out_shape: Shape4, cols: &mut [T]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let (h, w) = (in_shape.h as isize, in_shape.w as isize);
        let (oh, ow) = (out_shape.h, out_shape.w);
        let plane = oh * ow;
        for ci in 0..self.in_channels {
            let xc = &x[ci * in_shape.plane()..(ci + 1) * in_shape.plane()];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as isize - p;
                        let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= h {
                            out_row.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let src = &xc[iy as usize * in_shape.w..(iy as usize + 1) * in_shape.w];
                        for (ox, v) in out_row.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            *v = if ix < 0 || ix >= w { T::zero() } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[T], in_shape: Shape4, out_shape: Shape4, dx: &mut [T]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let (h, w) = (in_shape.h as isize, in_shape.w as isize);
        let (oh, ow) = (out_shape.h, out_shape.w);
        let plane = oh * ow;
        for ci in 0..self.in_channels {
            let dxc = &mut dx[ci * in_shape.plane()..(ci + 1) * in_shape.plane()];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &cols[row * plane..(row + 1) * plane];
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        let dst = &mut dxc[iy as usize * in_shape.w..(iy as usize + 1) * in_shape.w];
                        for ox in 0..ow {
                            let ix = (ox * s + kx) as isize - p;
                            if ix >= 0 && ix < w {
                                dst[ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let in_shape = x.shape();
        let out_shape = self.output_shape(in_shape)?;
        let kdim = self.in_channels * self.kernel * self.kernel;
        let plane = out_shape.plane();
        let mut out = Tensor::zeros(out_shape);
        let mut cached = Vec::with_capacity(if mode.is_train() { in_shape.n } else { 0 });
        let mut cols = vec![T::zero(); kdim * plane];
        for n in 0..in_shape.n {
            self.im2col(x.item(n), in_shape, out_shape, &mut cols);
            let y = out.item_mut(n);
            for (co, row) in y.chunks_mut(plane).enumerate() {
                let b = self.bias.value[co];
                row.iter_mut().for_each(|v| *v = b);
            }
            T::gemm(
                self.out_channels,
                kdim,
                plane,
                T::one(),
                &self.weight.value,
                kdim as isize,
                1,
                &cols,
                plane as isize,
                1,
                T::one(),
                y,
                plane as isize,
                1,
            );
            if mode.is_train() {
                cached.push(cols.clone());
            }
        }
        self.cache = mode.is_train().then_some(ConvCache {
            input_shape: in_shape,
            cols: cached,
        });
        Ok(out)
    }

    pub fn backward(&mut self, dy: &Tensor<T>, need_dx: bool) -> Result<Option<Tensor<T>>, NnError> {
        let cache = self.cache.take().ok_or(NnError::NoForwardCache("conv2d"))?;
        let in_shape = cache.input_shape;
        let out_shape = self.output_shape(in_shape)?;
        if dy.shape() != out_shape {
            return Err(NnError::ShapeMismatch {
                context: "conv2d backward",
                expected: format!("{out_shape}"),
                got: format!("{}", dy.shape()),
            });
        }
        let kdim = self.in_channels * self.kernel * self.kernel;
        let plane = out_shape.plane();
        let mut dx = need_dx.then(|| Tensor::zeros(in_shape));
        let mut dcols = vec![T::zero(); kdim * plane];
        for (n, cols) in cache.cols.iter().enumerate() {
            let g = dy.item(n);
            for (co, row) in g.chunks(plane).enumerate() {
                self.bias.grad[co] += row.iter().copied().sum::<T>();
            }
            // dW += dY · colsᵀ
            T::gemm(
                self.out_channels,
                plane,
                kdim,
                T::one(),
                g,
                plane as isize,
                1,
                cols,
                1,
                plane as isize,
                T::one(),
                &mut self.weight.grad,
                kdim as isize,
                1,
            );
            if let Some(dx) = dx.as_mut() {
                // dcols = Wᵀ · dY
                T::gemm(
                    kdim,
                    self.out_channels,
                    plane,
                    T::one(),
                    &self.weight.value,
                    1,
                    kdim as isize,
                    g,
                    plane as isize,
                    1,
                    T::zero(),
                    &mut dcols,
                    plane as isize,
                    1,
                );
                self.col2im(&dcols, in_shape, out_shape, dx.item_mut(n));
            }
        }
        Ok(dx)
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
