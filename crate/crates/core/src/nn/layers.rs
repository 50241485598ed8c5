use super::{gemm, ParamId, ParamStore, Tensor};

/// Negative slope of every leaky ReLU.
pub const LRELU_SLOPE: f64 = 0.01;

pub fn lrelu_inplace(x: &mut Tensor) {
    for v in &mut x.data {
        if *v < 0.0 {
            *v *= LRELU_SLOPE;
        }
    }
}

/// Backpropagates through a leaky ReLU given its output (sign is preserved).
pub fn lrelu_backward(grad: &mut [f64], output: &[f64]) {
    for (g, &y) in grad.iter_mut().zip(output) {
        if y < 0.0 {
            *g *= LRELU_SLOPE;
        }
    }
}

/// 3x3 convolution, stride 1, zero padding 1, with bias.
#[derive(Clone, Debug)]
pub struct Conv3x3 {
    pub weight: ParamId,
    pub bias: ParamId,
    pub cin: usize,
    pub cout: usize,
}

pub struct ConvCache {
    cols: Vec<f64>,
    height: usize,
    width: usize,
}

impl Conv3x3 {
    pub fn register(params: &mut ParamStore, name: &str, cin: usize, cout: usize) -> Self {
        let weight = params.register(format!("{name}.weight"), &[cout, cin, 3, 3]);
        let bias = params.register(format!("{name}.bias"), &[cout]);
        Self { weight, bias, cin, cout }
    }

    pub fn fan_in(&self) -> usize {
        self.cin * 9
    }

    fn im2col(x: &Tensor) -> Vec<f64> {
        let (h, w) = (x.height, x.width);
        let p = h * w;
        let mut cols = vec![0.0; x.channels * 9 * p];
        for c in 0..x.channels {
            let src = x.channel(c);
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = &mut cols[((c * 9) + ky * 3 + kx) * p..][..p];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src_row = &src[sy as usize * w..][..w];
                        let dst = &mut row[y * w..][..w];
                        match kx {
                            0 => dst[1..].copy_from_slice(&src_row[..w - 1]),
                            1 => dst.copy_from_slice(src_row),
                            _ => dst[..w - 1].copy_from_slice(&src_row[1..]),
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(cols: &[f64], channels: usize, h: usize, w: usize) -> Tensor {
        let p = h * w;
        let mut out = Tensor::zeros(channels, h, w);
        for c in 0..channels {
            let dst = &mut out.data[c * p..(c + 1) * p];
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = &cols[((c * 9) + ky * 3 + kx) * p..][..p];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[sy as usize * w..][..w];
                        let src = &row[y * w..][..w];
                        match kx {
                            0 => dst_row[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, s)| *d += s),
                            1 => dst_row.iter_mut().zip(src).for_each(|(d, s)| *d += s),
                            _ => dst_row[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, s)| *d += s),
                        }
                    }
                }
            }
        }
        out
    }

    pub fn forward(&self, params: &ParamStore, x: &Tensor) -> (Tensor, ConvCache) {
        assert_eq!(x.channels, self.cin, "conv input channels");
        let p = x.plane();
        let cols = Self::im2col(x);
        let bias = params.get(self.bias);
        let mut out = Tensor::zeros(self.cout, x.height, x.width);
        for (c, b) in bias.iter().enumerate() {
            out.data[c * p..(c + 1) * p].fill(*b);
        }
        gemm(self.cout, self.cin * 9, p, params.get(self.weight), false, &cols, false, 1.0, &mut out.data);
        (
            out,
            ConvCache {
                cols,
                height: x.height,
                width: x.width,
            },
        )
    }

    /// Accumulates parameter gradients into `grads` and returns the input gradient.
    pub fn backward(&self, params: &ParamStore, cache: &ConvCache, grad_out: &Tensor, grads: &mut [f64]) -> Tensor {
        let p = cache.height * cache.width;
        let k = self.cin * 9;
        {
            let gw = params.slice_of_mut(self.weight, grads);
            gemm(self.cout, p, k, &grad_out.data, false, &cache.cols, true, 1.0, gw);
        }
        {
            let gb = params.slice_of_mut(self.bias, grads);
            for (c, g) in gb.iter_mut().enumerate() {
                *g += grad_out.data[c * p..(c + 1) * p].iter().sum::<f64>();
            }
        }
        let mut gcols = vec![0.0; k * p];
        gemm(k, self.cout, p, params.get(self.weight), true, &grad_out.data, false, 0.0, &mut gcols);
        Self::col2im(&gcols, self.cin, cache.height, cache.width)
    }
}

/// Pointwise convolution with an explicit `cout x cin` kernel and bias.
pub fn conv1x1_forward(x: &Tensor, weight: &[f64], bias: &[f64], cout: usize) -> Tensor {
    let p = x.plane();
    assert_eq!(weight.len(), cout * x.channels);
    assert_eq!(bias.len(), cout);
    let mut out = Tensor::zeros(cout, x.height, x.width);
    for (c, b) in bias.iter().enumerate() {
        out.data[c * p..(c + 1) * p].fill(*b);
    }
    gemm(cout, x.channels, p, weight, false, &x.data, false, 1.0, &mut out.data);
    out
}

/// Returns the input gradient; kernel and bias gradients are accumulated.
pub fn conv1x1_backward(x: &Tensor, weight: &[f64], grad_out: &Tensor, grad_w: &mut [f64], grad_b: &mut [f64]) -> Tensor {
    let p = x.plane();
    let (cout, cin) = (grad_out.channels, x.channels);
    gemm(cout, p, cin, &grad_out.data, false, &x.data, true, 1.0, grad_w);
    for (c, g) in grad_b.iter_mut().enumerate() {
        *g += grad_out.data[c * p..(c + 1) * p].iter().sum::<f64>();
    }
    let mut grad_in = Tensor::zeros(cin, x.height, x.width);
    gemm(cin, cout, p, weight, true, &grad_out.data, false, 0.0, &mut grad_in.data);
    grad_in
}

/// 2x2 max pooling; also returns the flat argmax index of every output.
pub fn maxpool2_forward(x: &Tensor) -> (Tensor, Vec<usize>) {
    assert!(x.height % 2 == 0 && x.width % 2 == 0, "pooling needs even sizes");
    let (h, w) = (x.height / 2, x.width / 2);
    let mut out = Tensor::zeros(x.channels, h, w);
    let mut arg = vec![0; x.channels * h * w];
    for c in 0..x.channels {
        let base = c * x.plane();
        for i in 0..h {
            for j in 0..w {
                let mut best = base + 2 * i * x.width + 2 * j;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * i + di) * x.width + 2 * j + dj;
                    if x.data[idx] > x.data[best] {
                        best = idx;
                    }
                }
                let o = c * h * w + i * w + j;
                out.data[o] = x.data[best];
                arg[o] = best;
            }
        }
    }
    (out, arg)
}

pub fn maxpool2_backward(grad_out: &Tensor, arg: &[usize], input_height: usize, input_width: usize) -> Tensor {
    let mut g = Tensor::zeros(grad_out.channels, input_height, input_width);
    for (o, &idx) in arg.iter().enumerate() {
        g.data[idx] += grad_out.data[o];
    }
    g
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2_forward(x: &Tensor) -> Tensor {
    let (h, w) = (x.height * 2, x.width * 2);
    let mut out = Tensor::zeros(x.channels, h, w);
    for c in 0..x.channels {
        let src = x.channel(c);
        let dst = &mut out.data[c * h * w..(c + 1) * h * w];
        for i in 0..h {
            for j in 0..w {
                dst[i * w + j] = src[(i / 2) * x.width + j / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward(grad_out: &Tensor) -> Tensor {
    let (h, w) = (grad_out.height / 2, grad_out.width / 2);
    let mut g = Tensor::zeros(grad_out.channels, h, w);
    for c in 0..grad_out.channels {
        let src = grad_out.channel(c);
        let dst = &mut g.data[c * h * w..(c + 1) * h * w];
        for i in 0..grad_out.height {
            for j in 0..grad_out.width {
                dst[(i / 2) * w + j / 2] += src[i * grad_out.width + j];
            }
        }
    }
    g
}

/// Fully connected layer on a vector.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

pub struct LinearCache {
    input: Vec<f64>,
}

impl Linear {
    pub fn register(params: &mut ParamStore, name: &str, inputs: usize, outputs: usize) -> Self {
        let weight = params.register(format!("{name}.weight"), &[outputs, inputs]);
        let bias = params.register(format!("{name}.bias"), &[outputs]);
        Self {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, params: &ParamStore, x: &[f64]) -> (Vec<f64>, LinearCache) {
        assert_eq!(x.len(), self.inputs);
        let mut out = params.get(self.bias).to_vec();
        gemm(self.outputs, self.inputs, 1, params.get(self.weight), false, x, false, 1.0, &mut out);
        (out, LinearCache { input: x.to_vec() })
    }

    pub fn backward(&self, params: &ParamStore, cache: &LinearCache, grad_out: &[f64], grads: &mut [f64]) -> Vec<f64> {
        {
            let gw = params.slice_of_mut(self.weight, grads);
            gemm(self.outputs, 1, self.inputs, grad_out, false, &cache.input, false, 1.0, gw);
        }
        {
            let gb = params.slice_of_mut(self.bias, grads);
            gb.iter_mut().zip(grad_out).for_each(|(g, d)| *g += d);
        }
        let mut grad_in = vec![0.0; self.inputs];
        gemm(self.inputs, self.outputs, 1, params.get(self.weight), true, grad_out, false, 0.0, &mut grad_in);
        grad_in
    }
}
