//! Sequential layers over a flat parameter vector, with exact backprop.
//!
//! Activations are `batch x width` matrices. Spatial layers flatten their
//! input channel-major (`[c][y][x]`).

use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    /// `y = x W + b` with `W` stored `input x output` row-major, then `b`.
    Dense { input: usize, output: usize },
    Relu,
    /// Valid square convolution, stride 1. Weights stored as a
    /// `(in_channels * kernel^2) x out_channels` matrix, then the bias.
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        height: usize,
        width: usize,
    },
    /// 2x2 max pooling, stride 2.
    MaxPool2 { channels: usize, height: usize, width: usize },
}

impl Layer {
    pub fn param_count(&self) -> usize {
        match *self {
            Layer::Dense { input, output } => input * output + output,
            Layer::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => in_channels * kernel * kernel * out_channels + out_channels,
            Layer::Relu | Layer::MaxPool2 { .. } => 0,
        }
    }

    pub fn input_width(&self) -> Option<usize> {
        match *self {
            Layer::Dense { input, .. } => Some(input),
            Layer::Conv {
                in_channels,
                height,
                width,
                ..
            } => Some(in_channels * height * width),
            Layer::MaxPool2 {
                channels,
                height,
                width,
            } => Some(channels * height * width),
            Layer::Relu => None,
        }
    }

    pub fn output_width(&self) -> Option<usize> {
        match *self {
            Layer::Dense { output, .. } => Some(output),
            Layer::Conv {
                out_channels,
                kernel,
                height,
                width,
                ..
            } => Some(out_channels * (height + 1 - kernel) * (width + 1 - kernel)),
            Layer::MaxPool2 {
                channels,
                height,
                width,
            } => Some(channels * (height / 2) * (width / 2)),
            Layer::Relu => None,
        }
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
    pub(crate) fn init(&self, params: &mut [f64], rng: &mut impl Rng) {
        let (fan_in, weights) = match *self {
            Layer::Dense { input, output } => (input, input * output),
            Layer::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => {
                let fan = in_channels * kernel * kernel;
                (fan, fan * out_channels)
            }
            _ => return,
        };
        let bound = 1.0 / (fan_in as f64).sqrt();
        for w in &mut params[..weights] {
            *w = rng.random_range(-bound..bound);
        }
        for b in &mut params[weights..] {
            *b = 0.0;
        }
    }

    pub(crate) fn forward(&self, params: &[f64], x: &Array2<f64>) -> (Array2<f64>, Option<Vec<usize>>) {
        match *self {
            Layer::Dense { input, output } => {
                let (w, b) = dense_views(params, input, output);
                let mut y = x.dot(&w);
                y += &b;
                (y, None)
            }
            Layer::Relu => (x.mapv(|v| v.max(0.0)), None),
            Layer::Conv { .. } => (self.conv_forward(params, x), None),
            Layer::MaxPool2 {
                channels,
                height,
                width,
            } => {
                let (y, arg) = maxpool_forward(x, channels, height, width);
                (y, Some(arg))
            }
        }
    }

    /// Returns the gradient with respect to the layer input, accumulating
    /// parameter gradients into `grad_params` when given.
    pub(crate) fn backward(
        &self,
        params: &[f64],
        input: &Array2<f64>,
        pool_arg: Option<&[usize]>,
        grad_out: &Array2<f64>,
        grad_params: Option<&mut [f64]>,
    ) -> Array2<f64> {
        match *self {
            Layer::Dense { input: n_in, output } => {
                let (w, _) = dense_views(params, n_in, output);
                if let Some(gp) = grad_params {
                    let gw = input.t().dot(grad_out);
                    let gb = grad_out.sum_axis(Axis(0));
                    for (d, s) in gp[..n_in * output].iter_mut().zip(gw.iter()) {
                        *d += s;
                    }
                    for (d, s) in gp[n_in * output..].iter_mut().zip(gb.iter()) {
                        *d += s;
                    }
                }
                grad_out.dot(&w.t())
            }
            Layer::Relu => {
                let mut g = grad_out.clone();
                g.zip_mut_with(input, |g, &x| {
                    if x <= 0.0 {
                        *g = 0.0
                    }
                });
                g
            }
            Layer::Conv { .. } => self.conv_backward(params, input, grad_out, grad_params),
            Layer::MaxPool2 {
                channels,
                height,
                width,
            } => {
                let arg = pool_arg.expect("pooling tape recorded");
                let mut g = Array2::zeros((input.nrows(), channels * height * width));
                let per = grad_out.ncols();
                for (r, (mut gi, go)) in g.outer_iter_mut().zip(grad_out.outer_iter()).enumerate() {
                    for (j, &v) in go.iter().enumerate() {
                        gi[arg[r * per + j]] += v;
                    }
                }
                g
            }
        }
    }

    fn conv_dims(&self) -> (usize, usize, usize, usize, usize, usize) {
        match *self {
            Layer::Conv {
                in_channels,
                out_channels,
                kernel,
                height,
                width,
            } => (in_channels, out_channels, kernel, height, width, 0),
            _ => unreachable!("not a conv layer"),
        }
    }

    fn conv_forward(&self, params: &[f64], x: &Array2<f64>) -> Array2<f64> {
        let (ic, oc, k, h, w, _) = self.conv_dims();
        let (oh, ow) = (h + 1 - k, w + 1 - k);
        let positions = oh * ow;
        let patch = ic * k * k;
        let weights = ArrayView2::from_shape((patch, oc), &params[..patch * oc]).unwrap();
        let bias = ArrayView1::from(&params[patch * oc..]);
        let cols = im2col(x, ic, h, w, k);
        let out = cols.dot(&weights); // (batch * positions) x oc
        let mut y = Array2::zeros((x.nrows(), oc * positions));
        for (b, mut row) in y.outer_iter_mut().enumerate() {
            let block = out.slice(s![b * positions..(b + 1) * positions, ..]);
            for c in 0..oc {
                let bc = bias[c];
                for p in 0..positions {
                    row[c * positions + p] = block[[p, c]] + bc;
                }
            }
        }
        y
    }

    fn conv_backward(
        &self,
        params: &[f64],
        x: &Array2<f64>,
        grad_out: &Array2<f64>,
        grad_params: Option<&mut [f64]>,
    ) -> Array2<f64> {
        let (ic, oc, k, h, w, _) = self.conv_dims();
        let (oh, ow) = (h + 1 - k, w + 1 - k);
        let positions = oh * ow;
        let patch = ic * k * k;
        let weights = ArrayView2::from_shape((patch, oc), &params[..patch * oc]).unwrap();
        let batch = x.nrows();
        let mut g_mat = Array2::zeros((batch * positions, oc));
        for b in 0..batch {
            for c in 0..oc {
                for p in 0..positions {
                    g_mat[[b * positions + p, c]] = grad_out[[b, c * positions + p]];
                }
            }
        }
        if let Some(gp) = grad_params {
            let cols = im2col(x, ic, h, w, k);
            let gw = cols.t().dot(&g_mat);
            for (d, s) in gp[..patch * oc].iter_mut().zip(gw.iter()) {
                *d += s;
            }
            let gb = g_mat.sum_axis(Axis(0));
            for (d, s) in gp[patch * oc..].iter_mut().zip(gb.iter()) {
                *d += s;
            }
        }
        let g_cols = g_mat.dot(&weights.t());
        col2im(&g_cols, batch, ic, h, w, k)
    }
}

fn dense_views(params: &[f64], input: usize, output: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
    let w = ArrayView2::from_shape((input, output), &params[..input * output]).unwrap();
    let b = ArrayView1::from(&params[input * output..input * output + output]);
    (w, b)
}

fn im2col(x: &Array2<f64>, ic: usize, h: usize, w: usize, k: usize) -> Array2<f64> {
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let positions = oh * ow;
    let patch = ic * k * k;
    let mut cols = Array2::zeros((x.nrows() * positions, patch));
    for (b, xb) in x.outer_iter().enumerate() {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut row = cols.row_mut(b * positions + oy * ow + ox);
                for c in 0..ic {
                    for ky in 0..k {
                        let src = c * h * w + (oy + ky) * w + ox;
                        let dst = c * k * k + ky * k;
                        for kx in 0..k {
                            row[dst + kx] = xb[src + kx];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &Array2<f64>, batch: usize, ic: usize, h: usize, w: usize, k: usize) -> Array2<f64> {
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let positions = oh * ow;
    let mut x = Array2::zeros((batch, ic * h * w));
    for (b, mut xb) in x.outer_iter_mut().enumerate() {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = cols.row(b * positions + oy * ow + ox);
                for c in 0..ic {
                    for ky in 0..k {
                        let dst = c * h * w + (oy + ky) * w + ox;
                        let src = c * k * k + ky * k;
                        for kx in 0..k {
                            xb[dst + kx] += row[src + kx];
                        }
                    }
                }
            }
        }
    }
    x
}

fn maxpool_forward(x: &Array2<f64>, channels: usize, h: usize, w: usize) -> (Array2<f64>, Vec<usize>) {
    let (ph, pw) = (h / 2, w / 2);
    let per = channels * ph * pw;
    let mut y = Array2::zeros((x.nrows(), per));
    let mut arg = vec![0usize; x.nrows() * per];
    for (b, (xb, mut yb)) in x.outer_iter().zip(y.outer_iter_mut()).enumerate() {
        for c in 0..channels {
            for py in 0..ph {
                for px in 0..pw {
                    let mut best = c * h * w + 2 * py * w + 2 * px;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = c * h * w + (2 * py + dy) * w + 2 * px + dx;
                        // first maximum wins on ties
                        if xb[i] > xb[best] {
                            best = i;
                        }
                    }
                    let o = c * ph * pw + py * pw + px;
                    yb[o] = xb[best];
                    arg[b * per + o] = best;
                }
            }
        }
    }
    (y, arg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_matches_direct_correlation() {
        let layer = Layer::Conv {
            in_channels: 2,
            out_channels: 3,
            kernel: 2,
            height: 3,
            width: 4,
        };
        let params: Vec<f64> = (0..layer.param_count()).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = Array2::from_shape_fn((2, 24), |(b, i)| ((b * 24 + i) as f64 * 0.11).cos());
        let (y, _) = layer.forward(&params, &x);
        assert_eq!(y.ncols(), 3 * 2 * 3);
        let patch = 2 * 2 * 2;
        for b in 0..2 {
            for o in 0..3 {
                for oy in 0..2 {
                    for ox in 0..3 {
                        let mut acc = params[patch * 3 + o];
                        for c in 0..2 {
                            for ky in 0..2 {
                                for kx in 0..2 {
                                    let wi = (c * 4 + ky * 2 + kx) * 3 + o;
                                    acc += params[wi] * x[[b, c * 12 + (oy + ky) * 4 + ox + kx]];
                                }
                            }
                        }
                        assert!((y[[b, o * 6 + oy * 3 + ox]] - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax() {
        let layer = Layer::MaxPool2 {
            channels: 1,
            height: 2,
            width: 2,
        };
        let x = Array2::from_shape_vec((1, 4), vec![0.1, 0.9, 0.3, 0.2]).unwrap();
        let (y, arg) = layer.forward(&[], &x);
        assert_eq!(y[[0, 0]], 0.9);
        let g = layer.backward(&[], &x, arg.as_deref(), &Array2::ones((1, 1)), None);
        assert_eq!(g.row(0).to_vec(), vec![0.0, 1.0, 0.0, 0.0]);
    }
}
