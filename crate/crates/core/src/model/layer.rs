use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dense_raw, dense_transpose, pool2d, ConvGeometry, PoolMode, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    Relu,
    Maxpool,
    Avgpool,
    Flatten,
    Dense,
    GlobalAvgpool,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LayerKind::Conv => "conv",
            LayerKind::Relu => "relu",
            LayerKind::Maxpool => "maxpool",
            LayerKind::Avgpool => "avgpool",
            LayerKind::Flatten => "flatten",
            LayerKind::Dense => "dense",
            LayerKind::GlobalAvgpool => "global_avgpool",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// `[F, C, kH, kW]`
    pub weights: Tensor,
    /// `[F]`
    pub bias: Tensor,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `[M, N]`
    pub weights: Tensor,
    /// `[M]`
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(ConvLayer),
    Relu,
    MaxPool { window: usize, stride: usize },
    AvgPool { window: usize, stride: usize },
    Flatten,
    Dense(DenseLayer),
    GlobalAvgPool,
}

impl Layer {
    pub fn conv(filters: usize, in_channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Layer::Conv(ConvLayer {
            weights: Tensor::zeros(&[filters, in_channels, kernel, kernel]),
            bias: Tensor::zeros(&[filters]),
            stride,
            pad,
        })
    }

    pub fn dense(outputs: usize, inputs: usize) -> Self {
        Layer::Dense(DenseLayer {
            weights: Tensor::zeros(&[outputs, inputs]),
            bias: Tensor::zeros(&[outputs]),
        })
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv(_) => LayerKind::Conv,
            Layer::Relu => LayerKind::Relu,
            Layer::MaxPool { .. } => LayerKind::Maxpool,
            Layer::AvgPool { .. } => LayerKind::Avgpool,
            Layer::Flatten => LayerKind::Flatten,
            Layer::Dense(_) => LayerKind::Dense,
            Layer::GlobalAvgPool => LayerKind::GlobalAvgpool,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, Layer::Conv(_) | Layer::Dense(_))
    }

    /// Weights then bias, in declaration order.
    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Conv(c) => vec![&c.weights, &c.bias],
            Layer::Dense(d) => vec![&d.weights, &d.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Conv(c) => vec![&mut c.weights, &mut c.bias],
            Layer::Dense(d) => vec![&mut d.weights, &mut d.bias],
            _ => Vec::new(),
        }
    }

    /// Number of inputs feeding each output unit.
    pub fn fan_in(&self) -> usize {
        match self {
            Layer::Conv(c) => c.weights.shape()[1..].iter().product(),
            Layer::Dense(d) => d.weights.shape()[1],
            _ => 0,
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Conv(c) => {
                let geo = ConvGeometry::new(input, c.weights.shape(), c.stride, c.pad)?;
                if c.bias.len() != geo.filters {
                    return Err(Error::ShapeMismatch(format!(
                        "conv bias {:?} for {} filters",
                        c.bias.shape(),
                        geo.filters
                    )));
                }
                Ok(geo.out_shape().to_vec())
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool { window, stride } | Layer::AvgPool { window, stride } => match *input {
                [c, h, w] if *window > 0 && *stride > 0 && *window <= h && *window <= w => {
                    Ok(vec![c, (h - window) / stride + 1, (w - window) / stride + 1])
                }
                _ => Err(Error::ShapeMismatch(format!(
                    "pool window {window} stride {stride} on {input:?}"
                ))),
            },
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::Dense(d) => {
                let (m, n) = d.weights.dims2()?;
                let len: usize = input.iter().product();
                if input.len() != 1 || len != n || d.bias.len() != m {
                    return Err(Error::ShapeMismatch(format!(
                        "dense {m}x{n} (bias {}) on input {input:?}",
                        d.bias.len()
                    )));
                }
                Ok(vec![m])
            }
            Layer::GlobalAvgPool => match *input {
                [c, _, _] => Ok(vec![c]),
                _ => Err(Error::ShapeMismatch(format!("global pool on {input:?}"))),
            },
        }
    }

    /// Output and, for max pooling, the flat input index of each winner.
    /// The input shape must already be validated by [`Layer::output_shape`].
    pub(crate) fn forward(&self, input: &Tensor) -> (Tensor, Option<Vec<usize>>) {
        match self {
            Layer::Conv(c) => {
                let geo = ConvGeometry::new(input.shape(), c.weights.shape(), c.stride, c.pad)
                    .expect("validated at construction");
                let out = geo.forward(input.data(), c.weights.data(), c.bias.data());
                (tensor(geo.out_shape().to_vec(), out), None)
            }
            Layer::Relu => (input.map(|v| v.max(0.0)), None),
            Layer::MaxPool { window, stride } => {
                let p = pool2d(input, PoolMode::Max, *window, *stride).expect("validated");
                (p.output, p.argmax)
            }
            Layer::AvgPool { window, stride } => {
                let p = pool2d(input, PoolMode::Avg, *window, *stride).expect("validated");
                (p.output, None)
            }
            Layer::Flatten => (tensor(vec![input.len()], input.data().to_vec()), None),
            Layer::Dense(d) => {
                let out = dense_raw(input.data(), d.weights.data(), d.bias.data());
                (tensor(vec![out.len()], out), None)
            }
            Layer::GlobalAvgPool => {
                let (c, h, w) = input.dims3().expect("validated");
                let plane = h * w;
                let out = (0..c)
                    .map(|ch| input.data()[ch * plane..(ch + 1) * plane].iter().sum::<f64>() / plane as f64)
                    .collect();
                (tensor(vec![c], out), None)
            }
        }
    }

    /// Gradient with respect to this layer's input.
    pub(crate) fn backward_input(
        &self,
        input: &Tensor,
        argmax: Option<&[usize]>,
        out_shape: &[usize],
        grad_out: &[f64],
    ) -> Vec<f64> {
        match self {
            Layer::Conv(c) => {
                let geo = ConvGeometry::new(input.shape(), c.weights.shape(), c.stride, c.pad)
                    .expect("validated");
                geo.backward_input(grad_out, c.weights.data())
            }
            Layer::Relu => input
                .data()
                .iter()
                .zip(grad_out)
                .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                .collect(),
            Layer::MaxPool { .. } => {
                let mut out = vec![0.0; input.len()];
                for (&idx, &g) in argmax.expect("max pool trace").iter().zip(grad_out) {
                    out[idx] += g;
                }
                out
            }
            Layer::AvgPool { window, stride } => {
                let (c, h, w) = input.dims3().expect("validated");
                let (oh, ow) = (out_shape[1], out_shape[2]);
                let norm = 1.0 / (window * window) as f64;
                let mut out = vec![0.0; input.len()];
                for ch in 0..c {
                    for i in 0..oh {
                        for j in 0..ow {
                            let g = grad_out[(ch * oh + i) * ow + j] * norm;
                            for di in 0..*window {
                                let row = (ch * h + i * stride + di) * w + j * stride;
                                for v in &mut out[row..row + window] {
                                    *v += g;
                                }
                            }
                        }
                    }
                }
                out
            }
            Layer::Flatten => grad_out.to_vec(),
            Layer::Dense(d) => dense_transpose(grad_out, d.weights.data(), input.len()),
            Layer::GlobalAvgPool => {
                let (_, h, w) = input.dims3().expect("validated");
                let plane = h * w;
                let norm = 1.0 / plane as f64;
                grad_out
                    .iter()
                    .flat_map(|&g| std::iter::repeat_n(g * norm, plane))
                    .collect()
            }
        }
    }

    /// Gradients with respect to (weights, bias); `None` for parameter-free layers.
    pub(crate) fn backward_params(&self, input: &Tensor, grad_out: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        match self {
            Layer::Conv(c) => {
                let geo = ConvGeometry::new(input.shape(), c.weights.shape(), c.stride, c.pad)
                    .expect("validated");
                Some(geo.backward_params(input.data(), grad_out))
            }
            Layer::Dense(_) => {
                let x = input.data();
                let mut dw = Vec::with_capacity(grad_out.len() * x.len());
                for &g in grad_out {
                    dw.extend(x.iter().map(|v| g * v));
                }
                Some((dw, grad_out.to_vec()))
            }
            _ => None,
        }
    }
}

fn tensor(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
    Tensor::new(shape, data).expect("layer output shape")
}
