use rand::Rng;

use crate::ops::{col2im, gemm, im2col, Window};
use crate::param::Param;
use crate::tensor::Tensor;

/// A differentiable layer.
///
/// `forward` is pure and used for inference. `forward_train` caches what
/// `backward` needs; `backward` must follow the matching `forward_train`.
pub trait Layer: Send + Sync {
    fn forward(&self, x: &Tensor) -> Tensor;
    fn forward_train(&mut self, x: &Tensor) -> Tensor;
    fn backward(&mut self, grad_out: &Tensor) -> Tensor;

    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }

    /// Output shape for a given input shape, without running the layer.
    fn output_shape(&self, input: [usize; 4]) -> [usize; 4];
}

fn kaiming_uniform(rng: &mut impl Rng, len: usize, fan_in: usize) -> Vec<f32> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt() as f32;
    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
}

/// 2D convolution with square kernels, zero padding and a per-channel bias.
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    /// `out_c × (in_c·k·k)`
    pub weight: Param,
    pub bias: Param,
    /// The first layer of a network never needs its input gradient.
    pub propagate_input_grad: bool,
    cols: Vec<f32>,
    in_shape: [usize; 4],
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_c * k * k;
        Conv2d {
            in_c,
            out_c,
            k,
            stride,
            pad,
            weight: Param::new(
                format!("{name}.weight"),
                kaiming_uniform(rng, out_c * fan_in, fan_in),
            ),
            bias: Param::zeros(format!("{name}.bias"), out_c),
            propagate_input_grad: true,
            cols: Vec::new(),
            in_shape: [0; 4],
        }
    }

    pub fn without_input_grad(mut self) -> Self {
        self.propagate_input_grad = false;
        self
    }

    fn window(&self, shape: [usize; 4]) -> Window {
        assert_eq!(shape[1], self.in_c, "conv input channels");
        Window {
            c: self.in_c,
            h: shape[2],
            w: shape[3],
            k: self.k,
            stride: self.stride,
            pad: self.pad,
        }
    }

    fn run(&self, x: &Tensor, cols: &mut Vec<f32>, keep: bool) -> Tensor {
        let g = self.window(x.shape());
        let (rows, plane) = (g.col_rows(), g.col_cols());
        let mut out = Tensor::zeros([x.n(), self.out_c, g.out_h(), g.out_w()]);
        let per = rows * plane;
        cols.resize(if keep { per * x.n() } else { per }, 0.0);
        for i in 0..x.n() {
            let col = if keep {
                &mut cols[i * per..(i + 1) * per]
            } else {
                &mut cols[..per]
            };
            im2col(x.sample(i), &g, col);
            let o = out.sample_mut(i);
            gemm(self.out_c, rows, plane, &self.weight.value, false, col, false, 0.0, o);
            for (oc, b) in self.bias.value.iter().enumerate() {
                for v in &mut o[oc * plane..(oc + 1) * plane] {
                    *v += b;
                }
            }
        }
        out
    }
}

impl Layer for Conv2d {
    fn forward(&self, x: &Tensor) -> Tensor {
        let mut scratch = Vec::new();
        self.run(x, &mut scratch, false)
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let mut cols = std::mem::take(&mut self.cols);
        let out = self.run(x, &mut cols, true);
        self.cols = cols;
        self.in_shape = x.shape();
        out
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let g = self.window(self.in_shape);
        let (rows, plane) = (g.col_rows(), g.col_cols());
        let per = rows * plane;
        let n = self.in_shape[0];
        assert_eq!(grad_out.shape(), [n, self.out_c, g.out_h(), g.out_w()]);
        let mut dx = Tensor::zeros(self.in_shape);
        let mut dcol = vec![0.0; if self.propagate_input_grad { per } else { 0 }];
        for i in 0..n {
            let dy = grad_out.sample(i);
            let col = &self.cols[i * per..(i + 1) * per];
            gemm(self.out_c, plane, rows, dy, false, col, true, 1.0, &mut self.weight.grad);
            for (oc, b) in self.bias.grad.iter_mut().enumerate() {
                *b += dy[oc * plane..(oc + 1) * plane].iter().sum::<f32>();
            }
            if self.propagate_input_grad {
                gemm(rows, self.out_c, plane, &self.weight.value, true, dy, false, 0.0, &mut dcol);
                col2im(&dcol, &g, dx.sample_mut(i));
            }
        }
        dx
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn output_shape(&self, input: [usize; 4]) -> [usize; 4] {
        let g = self.window(input);
        [input[0], self.out_c, g.out_h(), g.out_w()]
    }
}

/// Transposed 2D convolution: the adjoint of a [`Conv2d`] with the same
/// kernel, stride and padding, plus `output_padding` extra rows/columns.
pub struct ConvTranspose2d {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub output_pad: usize,
    /// `in_c × (out_c·k·k)`
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        output_pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(output_pad < stride, "output padding must be smaller than stride");
        // Each output pixel receives roughly in_c·k²/stride² contributions.
        let fan_in = (in_c * k * k / (stride * stride)).max(1);
        ConvTranspose2d {
            in_c,
            out_c,
            k,
            stride,
            pad,
            output_pad,
            weight: Param::new(
                format!("{name}.weight"),
                kaiming_uniform(rng, in_c * out_c * k * k, fan_in),
            ),
            bias: Param::zeros(format!("{name}.bias"), out_c),
            input: None,
        }
    }

    /// Geometry of the equivalent forward convolution over the output image.
    fn window(&self, shape: [usize; 4]) -> Window {
        assert_eq!(shape[1], self.in_c, "transposed conv input channels");
        let oh = (shape[2] - 1) * self.stride + self.k + self.output_pad - 2 * self.pad;
        let ow = (shape[3] - 1) * self.stride + self.k + self.output_pad - 2 * self.pad;
        let g = Window {
            c: self.out_c,
            h: oh,
            w: ow,
            k: self.k,
            stride: self.stride,
            pad: self.pad,
        };
        debug_assert_eq!((g.out_h(), g.out_w()), (shape[2], shape[3]));
        g
    }
}

impl Layer for ConvTranspose2d {
    fn forward(&self, x: &Tensor) -> Tensor {
        let g = self.window(x.shape());
        let (rows, plane) = (g.col_rows(), g.col_cols());
        let mut out = Tensor::zeros([x.n(), self.out_c, g.h, g.w]);
        let mut cols = vec![0.0; rows * plane];
        let hw = g.h * g.w;
        for i in 0..x.n() {
            gemm(rows, self.in_c, plane, &self.weight.value, true, x.sample(i), false, 0.0, &mut cols);
            let o = out.sample_mut(i);
            col2im(&cols, &g, o);
            for (oc, b) in self.bias.value.iter().enumerate() {
                for v in &mut o[oc * hw..(oc + 1) * hw] {
                    *v += b;
                }
            }
        }
        out
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        self.input = Some(x.clone());
        self.forward(x)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let x = self.input.as_ref().expect("backward before forward_train");
        let g = self.window(x.shape());
        let (rows, plane) = (g.col_rows(), g.col_cols());
        let hw = g.h * g.w;
        let mut dx = Tensor::zeros(x.shape());
        let mut dcols = vec![0.0; rows * plane];
        for i in 0..x.n() {
            let dy = grad_out.sample(i);
            for (oc, b) in self.bias.grad.iter_mut().enumerate() {
                *b += dy[oc * hw..(oc + 1) * hw].iter().sum::<f32>();
            }
            im2col(dy, &g, &mut dcols);
            gemm(self.in_c, plane, rows, x.sample(i), false, &dcols, true, 1.0, &mut self.weight.grad);
            gemm(self.in_c, rows, plane, &self.weight.value, false, &dcols, false, 0.0, dx.sample_mut(i));
        }
        dx
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn output_shape(&self, input: [usize; 4]) -> [usize; 4] {
        let g = self.window(input);
        [input[0], self.out_c, g.h, g.w]
    }
}

#[derive(Default)]
pub struct Relu {
    mask: Vec<bool>,
}

impl Layer for Relu {
    fn forward(&self, x: &Tensor) -> Tensor {
        x.map(|v| v.max(0.0))
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        self.mask = x.data().iter().map(|&v| v > 0.0).collect();
        self.forward(x)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let mut g = grad_out.clone();
        for (v, &keep) in g.data_mut().iter_mut().zip(&self.mask) {
            if !keep {
                *v = 0.0;
            }
        }
        g
    }

    fn output_shape(&self, input: [usize; 4]) -> [usize; 4] {
        input
    }
}

pub fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[derive(Default)]
pub struct Sigmoid {
    out: Option<Tensor>,
}

impl Layer for Sigmoid {
    fn forward(&self, x: &Tensor) -> Tensor {
        x.map(sigmoid)
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let y = self.forward(x);
        self.out = Some(y.clone());
        y
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let y = self.out.as_ref().expect("backward before forward_train");
        let mut g = grad_out.clone();
        for (d, &s) in g.data_mut().iter_mut().zip(y.data()) {
            *d *= s * (1.0 - s);
        }
        g
    }

    fn output_shape(&self, input: [usize; 4]) -> [usize; 4] {
        input
    }
}

/// 2×2 max pooling with stride 2. Odd trailing rows/columns are dropped.
#[derive(Default)]
pub struct MaxPool2 {
    argmax: Vec<usize>,
    in_shape: [usize; 4],
}

impl MaxPool2 {
    fn pool(x: &Tensor, mut argmax: Option<&mut Vec<usize>>) -> Tensor {
        let [n, c, h, w] = x.shape();
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor::zeros([n, c, oh, ow]);
        if let Some(a) = argmax.as_deref_mut() {
            a.clear();
        }
        let src = x.data();
        let dst = out.data_mut();
        let mut o = 0;
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    dst[o] = src[best];
                    if let Some(a) = argmax.as_deref_mut() {
                        a.push(best);
                    }
                    o += 1;
                }
            }
        }
        out
    }
}

impl Layer for MaxPool2 {
    fn forward(&self, x: &Tensor) -> Tensor {
        Self::pool(x, None)
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        self.in_shape = x.shape();
        let mut argmax = std::mem::take(&mut self.argmax);
        let out = Self::pool(x, Some(&mut argmax));
        self.argmax = argmax;
        out
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let mut dx = Tensor::zeros(self.in_shape);
        let d = dx.data_mut();
        for (&idx, &g) in self.argmax.iter().zip(grad_out.data()) {
            d[idx] += g;
        }
        dx
    }

    fn output_shape(&self, input: [usize; 4]) -> [usize; 4] {
        [input[0], input[1], input[2] / 2, input[3] / 2]
    }
}

/// 2×2 average pooling with stride 2.
#[derive(Default)]
pub struct AvgPool2 {
    in_shape: [usize; 4],
}

impl Layer for AvgPool2 {
    fn forward(&self, x: &Tensor) -> Tensor {
        let [n, c, h, w] = x.shape();
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor::zeros([n, c, oh, ow]);
        let src = x.data();
        let dst = out.data_mut();
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                let r0 = base + 2 * oy * w;
                let r1 = r0 + w;
                for ox in 0..ow {
                    dst[(plane * oh + oy) * ow + ox] = 0.25
                        * (src[r0 + 2 * ox] + src[r0 + 2 * ox + 1] + src[r1 + 2 * ox] + src[r1 + 2 * ox + 1]);
                }
            }
        }
        out
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        self.in_shape = x.shape();
        self.forward(x)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let [n, c, h, w] = self.in_shape;
        let (oh, ow) = (h / 2, w / 2);
        let mut dx = Tensor::zeros(self.in_shape);
        let d = dx.data_mut();
        let g = grad_out.data();
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let v = 0.25 * g[(plane * oh + oy) * ow + ox];
                    let r0 = base + 2 * oy * w + 2 * ox;
                    d[r0] += v;
                    d[r0 + 1] += v;
                    d[r0 + w] += v;
                    d[r0 + w + 1] += v;
                }
            }
        }
        dx
    }

    fn output_shape(&self, input: [usize; 4]) -> [usize; 4] {
        [input[0], input[1], input[2] / 2, input[3] / 2]
    }
}

/// Averages each channel over its spatial extent: `[n,c,h,w] → [n,c,1,1]`.
#[derive(Default)]
pub struct GlobalAvgPool {
    in_shape: [usize; 4],
}

impl Layer for GlobalAvgPool {
    fn forward(&self, x: &Tensor) -> Tensor {
        let [n, c, h, w] = x.shape();
        let hw = h * w;
        let data = x
            .data()
            .chunks(hw)
            .map(|p| p.iter().sum::<f32>() / hw as f32)
            .collect();
        Tensor::from_vec([n, c, 1, 1], data)
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        self.in_shape = x.shape();
        self.forward(x)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let hw = self.in_shape[2] * self.in_shape[3];
        let mut dx = Tensor::zeros(self.in_shape);
        for (plane, &g) in dx.data_mut().chunks_mut(hw).zip(grad_out.data()) {
            plane.fill(g / hw as f32);
        }
        dx
    }

    fn output_shape(&self, input: [usize; 4]) -> [usize; 4] {
        [input[0], input[1], 1, 1]
    }
}

/// Fully-connected layer over the flattened `c·h·w` features of each sample.
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    /// `out × in`
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Linear {
    pub fn new(name: &str, in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        // Plain uniform(±1/sqrt(fan_in)) for the output head.
        let bound = 1.0 / (in_features as f32).sqrt();
        Linear {
            in_features,
            out_features,
            weight: Param::new(
                format!("{name}.weight"),
                (0..in_features * out_features)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect(),
            ),
            bias: Param::zeros(format!("{name}.bias"), out_features),
            input: None,
        }
    }
}

impl Layer for Linear {
    fn forward(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.sample_len(), self.in_features, "linear input features");
        let n = x.n();
        let mut out = Tensor::zeros([n, self.out_features, 1, 1]);
        gemm(n, self.in_features, self.out_features, x.data(), false, &self.weight.value, true, 0.0, out.data_mut());
        for row in out.data_mut().chunks_mut(self.out_features) {
            for (v, b) in row.iter_mut().zip(&self.bias.value) {
                *v += b;
            }
        }
        out
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        self.input = Some(x.clone());
        self.forward(x)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let x = self.input.as_ref().expect("backward before forward_train");
        let n = x.n();
        gemm(self.out_features, n, self.in_features, grad_out.data(), true, x.data(), false, 1.0, &mut self.weight.grad);
        for row in grad_out.data().chunks(self.out_features) {
            for (b, g) in self.bias.grad.iter_mut().zip(row) {
                *b += g;
            }
        }
        let mut dx = Tensor::zeros(x.shape());
        gemm(n, self.out_features, self.in_features, grad_out.data(), false, &self.weight.value, false, 0.0, dx.data_mut());
        dx
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn output_shape(&self, input: [usize; 4]) -> [usize; 4] {
        [input[0], self.out_features, 1, 1]
    }
}
