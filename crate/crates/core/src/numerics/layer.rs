use crate::error::{Error, Result};

use super::{ParamSet, Scalar, Tensor};

/// The primitive layer vocabulary every operator is built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv2d,
    DepthwiseConv2d,
    Dense,
    Relu,
    GlobalAvgPool,
    Add,
}

/// Shape contract for one layer. Padding is fixed at `kernel / 2`, so a
/// stride-1 convolution preserves spatial size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel: usize,
    pub stride: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl LayerSpec {
    pub fn conv2d(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv2d,
            kernel,
            stride,
            in_channels,
            out_channels,
        }
    }

    pub fn depthwise(channels: usize, kernel: usize, stride: usize) -> Self {
        LayerSpec {
            kind: LayerKind::DepthwiseConv2d,
            kernel,
            stride,
            in_channels: channels,
            out_channels: channels,
        }
    }

    pub fn dense(in_features: usize, out_features: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Dense,
            kernel: 1,
            stride: 1,
            in_channels: in_features,
            out_channels: out_features,
        }
    }

    pub fn relu(channels: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Relu,
            kernel: 1,
            stride: 1,
            in_channels: channels,
            out_channels: channels,
        }
    }

    pub fn global_avg_pool(channels: usize) -> Self {
        LayerSpec {
            kind: LayerKind::GlobalAvgPool,
            kernel: 1,
            stride: 1,
            in_channels: channels,
            out_channels: channels,
        }
    }

    pub fn add(channels: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Add,
            kernel: 1,
            stride: 1,
            in_channels: channels,
            out_channels: channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::Shape {
                op: "layer_spec",
                detail: format!("kernel must be odd and >= 1, got {}", self.kernel),
            });
        }
        if self.stride != 1 && self.stride != 2 {
            return Err(Error::Shape {
                op: "layer_spec",
                detail: format!("stride must be 1 or 2, got {}", self.stride),
            });
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Shape {
                op: "layer_spec",
                detail: "channel counts must be positive".into(),
            });
        }
        if self.kind == LayerKind::DepthwiseConv2d && self.in_channels != self.out_channels {
            return Err(Error::Shape {
                op: "layer_spec",
                detail: format!(
                    "depthwise requires in == out channels, got {} vs {}",
                    self.in_channels, self.out_channels
                ),
            });
        }
        Ok(())
    }

    pub fn has_params(&self) -> bool {
        matches!(
            self.kind,
            LayerKind::Conv2d | LayerKind::DepthwiseConv2d | LayerKind::Dense
        )
    }

    /// Shape of the weight tensor, if the layer has one.
    pub fn weight_dims(&self) -> Option<Vec<usize>> {
        match self.kind {
            LayerKind::Conv2d => Some(vec![
                self.out_channels,
                self.in_channels,
                self.kernel,
                self.kernel,
            ]),
            LayerKind::DepthwiseConv2d => {
                Some(vec![self.out_channels, 1, self.kernel, self.kernel])
            }
            LayerKind::Dense => Some(vec![self.out_channels, self.in_channels]),
            _ => None,
        }
    }

    pub fn bias_dims(&self) -> Option<Vec<usize>> {
        self.has_params().then(|| vec![self.out_channels])
    }

    /// Fan-in used for weight initialization scaling.
    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv2d => self.in_channels * self.kernel * self.kernel,
            LayerKind::DepthwiseConv2d => self.kernel * self.kernel,
            LayerKind::Dense => self.in_channels,
            _ => 0,
        }
    }

    /// Spatial output size for a given input size.
    pub fn out_hw(&self, in_hw: (usize, usize)) -> (usize, usize) {
        match self.kind {
            LayerKind::Conv2d | LayerKind::DepthwiseConv2d => {
                let p = self.kernel / 2;
                let f = |x: usize| (x + 2 * p - self.kernel) / self.stride + 1;
                (f(in_hw.0), f(in_hw.1))
            }
            LayerKind::GlobalAvgPool => (1, 1),
            _ => in_hw,
        }
    }

    /// Multiply-add count on a given input spatial size. Bias adds and
    /// activations are not counted; skip/add/pool contribute zero.
    pub fn macs(&self, in_hw: (usize, usize)) -> u64 {
        match self.kind {
            LayerKind::Conv2d => {
                let (ho, wo) = self.out_hw(in_hw);
                (ho * wo * self.out_channels * self.in_channels * self.kernel * self.kernel) as u64
            }
            LayerKind::DepthwiseConv2d => {
                let (ho, wo) = self.out_hw(in_hw);
                (ho * wo * self.out_channels * self.kernel * self.kernel) as u64
            }
            LayerKind::Dense => (self.in_channels * self.out_channels) as u64,
            _ => 0,
        }
    }
}

/// Everything the backward pass needs from the forward pass.
#[derive(Clone, Debug)]
pub struct ActivationCache<E: Scalar> {
    pub input: Tensor<E>,
}

fn expect_dims(op: &'static str, t: &Tensor<impl Scalar>, rank: usize) -> Result<()> {
    if t.dims().len() != rank {
        return Err(Error::Shape {
            op,
            detail: format!("expected rank {}, got {:?}", rank, t.dims()),
        });
    }
    Ok(())
}

/// Forward pass taking explicit weight/bias tensors. The program executor
/// calls this with tensors borrowed from the shared weight store.
pub fn forward_with<E: Scalar>(
    layer: &LayerSpec,
    weight: Option<&Tensor<E>>,
    bias: Option<&Tensor<E>>,
    x: &Tensor<E>,
) -> Result<(Tensor<E>, ActivationCache<E>)> {
    layer.validate()?;
    x.check_finite("forward input")?;
    if let Some(w) = weight {
        w.check_finite("forward weight")?;
    }
    if let Some(b) = bias {
        b.check_finite("forward bias")?;
    }
    let y = match layer.kind {
        LayerKind::Conv2d | LayerKind::DepthwiseConv2d => {
            conv_forward(layer, required(weight)?, required(bias)?, x)?
        }
        LayerKind::Dense => dense_forward(layer, required(weight)?, required(bias)?, x)?,
        LayerKind::Relu => {
            let mut y = x.clone();
            for v in y.data_mut() {
                *v = v.max(E::ZERO);
            }
            y
        }
        LayerKind::GlobalAvgPool => gap_forward(layer, x)?,
        LayerKind::Add => add_forward(x)?,
    };
    y.check_finite("forward output")?;
    Ok((y, ActivationCache { input: x.clone() }))
}

/// Forward pass looking parameters up in a `ParamSet` under the ids
/// `"weight"` and `"bias"`.
pub fn forward<E: Scalar>(
    layer: &LayerSpec,
    params: &ParamSet<E>,
    x: &Tensor<E>,
) -> Result<(Tensor<E>, ActivationCache<E>)> {
    if layer.has_params() {
        forward_with(layer, Some(params.get("weight")?), Some(params.get("bias")?), x)
    } else {
        forward_with(layer, None, None, x)
    }
}

/// Backward pass returning the input gradient and, when the layer has
/// parameters, their gradients (ids `"weight"` and `"bias"`).
pub fn backward_with<E: Scalar>(
    layer: &LayerSpec,
    weight: Option<&Tensor<E>>,
    cache: &ActivationCache<E>,
    grad_y: &Tensor<E>,
) -> Result<(Tensor<E>, Option<(Tensor<E>, Tensor<E>)>)> {
    layer.validate()?;
    match layer.kind {
        LayerKind::Conv2d | LayerKind::DepthwiseConv2d => {
            let (gx, gw, gb) = conv_backward(layer, required(weight)?, &cache.input, grad_y)?;
            Ok((gx, Some((gw, gb))))
        }
        LayerKind::Dense => {
            let (gx, gw, gb) = dense_backward(layer, required(weight)?, &cache.input, grad_y)?;
            Ok((gx, Some((gw, gb))))
        }
        LayerKind::Relu => {
            if grad_y.dims() != cache.input.dims() {
                return Err(Error::Shape {
                    op: "relu_backward",
                    detail: format!("{:?} vs {:?}", grad_y.dims(), cache.input.dims()),
                });
            }
            let mut gx = grad_y.clone();
            // Subgradient convention: zero at x <= 0.
            for (g, &v) in gx.data_mut().iter_mut().zip(cache.input.data()) {
                if v <= E::ZERO {
                    *g = E::ZERO;
                }
            }
            Ok((gx, None))
        }
        LayerKind::GlobalAvgPool => {
            let gx = gap_backward(&cache.input, grad_y)?;
            Ok((gx, None))
        }
        LayerKind::Add => {
            let gx = Tensor::stack_pair(grad_y, grad_y)?;
            if gx.dims() != cache.input.dims() {
                return Err(Error::Shape {
                    op: "add_backward",
                    detail: format!("{:?} vs {:?}", gx.dims(), cache.input.dims()),
                });
            }
            Ok((gx, None))
        }
    }
}

/// Backward counterpart of [`forward`]; gradients come back as a `ParamSet`.
pub fn backward<E: Scalar>(
    layer: &LayerSpec,
    params: &ParamSet<E>,
    cache: &ActivationCache<E>,
    grad_y: &Tensor<E>,
) -> Result<(Tensor<E>, ParamSet<E>)> {
    let weight = if layer.has_params() {
        Some(params.get("weight")?)
    } else {
        None
    };
    let (gx, grads) = backward_with(layer, weight, cache, grad_y)?;
    let mut out = ParamSet::new();
    if let Some((gw, gb)) = grads {
        out.insert("weight", gw);
        out.insert("bias", gb);
    }
    Ok((gx, out))
}

fn required<T>(t: Option<T>) -> Result<T> {
    t.ok_or(Error::MissingParam {
        name: "weight/bias".into(),
    })
}

fn conv_forward<E: Scalar>(
    layer: &LayerSpec,
    w: &Tensor<E>,
    b: &Tensor<E>,
    x: &Tensor<E>,
) -> Result<Tensor<E>> {
    expect_dims("conv_forward", x, 4)?;
    let depthwise = layer.kind == LayerKind::DepthwiseConv2d;
    let (n, cin, h, win) = (x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]);
    if cin != layer.in_channels {
        return Err(Error::Shape {
            op: "conv_forward",
            detail: format!("input channels {} != spec {}", cin, layer.in_channels),
        });
    }
    let expected_w = layer.weight_dims().unwrap();
    if w.dims() != expected_w.as_slice() || b.dims() != [layer.out_channels] {
        return Err(Error::Shape {
            op: "conv_forward",
            detail: format!(
                "weight {:?} / bias {:?}, expected {:?} / [{}]",
                w.dims(),
                b.dims(),
                expected_w,
                layer.out_channels
            ),
        });
    }
    let k = layer.kernel;
    let s = layer.stride;
    let pad = k / 2;
    let (ho, wo) = layer.out_hw((h, win));
    let cout = layer.out_channels;
    let mut y = Tensor::zeros(vec![n, cout, ho, wo]);
    let xd = x.data();
    let wd = w.data();
    let bd = b.data();
    for ni in 0..n {
        for o in 0..cout {
            let bias = bd[o];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias;
                    let in_range = if depthwise { o..o + 1 } else { 0..cin };
                    for i in in_range {
                        let wbase = if depthwise {
                            (o * k) * k
                        } else {
                            ((o * cin + i) * k) * k
                        };
                        for p in 0..k {
                            let iy = (oy * s + p).wrapping_sub(pad);
                            if iy >= h {
                                continue;
                            }
                            for q in 0..k {
                                let ix = (ox * s + q).wrapping_sub(pad);
                                if ix >= win {
                                    continue;
                                }
                                acc += wd[wbase + p * k + q] * xd[x.at4(ni, i, iy, ix)];
                            }
                        }
                    }
                    y.data_mut()[((ni * cout + o) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    Ok(y)
}

fn conv_backward<E: Scalar>(
    layer: &LayerSpec,
    w: &Tensor<E>,
    x: &Tensor<E>,
    grad_y: &Tensor<E>,
) -> Result<(Tensor<E>, Tensor<E>, Tensor<E>)> {
    expect_dims("conv_backward", grad_y, 4)?;
    let depthwise = layer.kind == LayerKind::DepthwiseConv2d;
    let (n, cin, h, win) = (x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]);
    let k = layer.kernel;
    let s = layer.stride;
    let pad = k / 2;
    let (ho, wo) = layer.out_hw((h, win));
    let cout = layer.out_channels;
    if grad_y.dims() != [n, cout, ho, wo] {
        return Err(Error::Shape {
            op: "conv_backward",
            detail: format!("grad_y {:?}, expected {:?}", grad_y.dims(), [n, cout, ho, wo]),
        });
    }
    let mut gx = Tensor::zeros(x.dims().to_vec());
    let mut gw = Tensor::zeros(w.dims().to_vec());
    let mut gb = Tensor::zeros(vec![cout]);
    let xd = x.data();
    let wd = w.data();
    for ni in 0..n {
        for o in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let g = grad_y.data()[((ni * cout + o) * ho + oy) * wo + ox];
                    gb.data_mut()[o] += g;
                    let in_range = if depthwise { o..o + 1 } else { 0..cin };
                    for i in in_range {
                        let wbase = if depthwise {
                            (o * k) * k
                        } else {
                            ((o * cin + i) * k) * k
                        };
                        for p in 0..k {
                            let iy = (oy * s + p).wrapping_sub(pad);
                            if iy >= h {
                                continue;
                            }
                            for q in 0..k {
                                let ix = (ox * s + q).wrapping_sub(pad);
                                if ix >= win {
                                    continue;
                                }
                                let xoff = x.at4(ni, i, iy, ix);
                                gw.data_mut()[wbase + p * k + q] += g * xd[xoff];
                                gx.data_mut()[xoff] += g * wd[wbase + p * k + q];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((gx, gw, gb))
}

fn dense_forward<E: Scalar>(
    layer: &LayerSpec,
    w: &Tensor<E>,
    b: &Tensor<E>,
    x: &Tensor<E>,
) -> Result<Tensor<E>> {
    expect_dims("dense_forward", x, 2)?;
    let (n, cin) = (x.dims()[0], x.dims()[1]);
    if cin != layer.in_channels
        || w.dims() != [layer.out_channels, layer.in_channels]
        || b.dims() != [layer.out_channels]
    {
        return Err(Error::Shape {
            op: "dense_forward",
            detail: format!(
                "x {:?}, weight {:?}, bias {:?} vs spec {}->{}",
                x.dims(),
                w.dims(),
                b.dims(),
                layer.in_channels,
                layer.out_channels
            ),
        });
    }
    let cout = layer.out_channels;
    let mut y = Tensor::zeros(vec![n, cout]);
    for ni in 0..n {
        for o in 0..cout {
            let mut acc = b.data()[o];
            for i in 0..cin {
                acc += w.data()[o * cin + i] * x.data()[ni * cin + i];
            }
            y.data_mut()[ni * cout + o] = acc;
        }
    }
    Ok(y)
}

fn dense_backward<E: Scalar>(
    layer: &LayerSpec,
    w: &Tensor<E>,
    x: &Tensor<E>,
    grad_y: &Tensor<E>,
) -> Result<(Tensor<E>, Tensor<E>, Tensor<E>)> {
    let (n, cin) = (x.dims()[0], x.dims()[1]);
    let cout = layer.out_channels;
    if grad_y.dims() != [n, cout] {
        return Err(Error::Shape {
            op: "dense_backward",
            detail: format!("grad_y {:?}, expected {:?}", grad_y.dims(), [n, cout]),
        });
    }
    let mut gx = Tensor::zeros(vec![n, cin]);
    let mut gw = Tensor::zeros(vec![cout, cin]);
    let mut gb = Tensor::zeros(vec![cout]);
    for ni in 0..n {
        for o in 0..cout {
            let g = grad_y.data()[ni * cout + o];
            gb.data_mut()[o] += g;
            for i in 0..cin {
                gw.data_mut()[o * cin + i] += g * x.data()[ni * cin + i];
                gx.data_mut()[ni * cin + i] += g * w.data()[o * cin + i];
            }
        }
    }
    Ok((gx, gw, gb))
}

fn gap_forward<E: Scalar>(layer: &LayerSpec, x: &Tensor<E>) -> Result<Tensor<E>> {
    expect_dims("gap_forward", x, 4)?;
    let (n, c, h, w) = (x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]);
    if c != layer.in_channels {
        return Err(Error::Shape {
            op: "gap_forward",
            detail: format!("input channels {} != spec {}", c, layer.in_channels),
        });
    }
    let area = E::from_f64((h * w) as f64);
    let mut y = Tensor::zeros(vec![n, c]);
    for ni in 0..n {
        for ci in 0..c {
            let mut acc = E::ZERO;
            for hi in 0..h {
                for wi in 0..w {
                    acc += x.data()[x.at4(ni, ci, hi, wi)];
                }
            }
            y.data_mut()[ni * c + ci] = acc / area;
        }
    }
    Ok(y)
}

fn gap_backward<E: Scalar>(x: &Tensor<E>, grad_y: &Tensor<E>) -> Result<Tensor<E>> {
    let (n, c, h, w) = (x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]);
    if grad_y.dims() != [n, c] {
        return Err(Error::Shape {
            op: "gap_backward",
            detail: format!("grad_y {:?}, expected {:?}", grad_y.dims(), [n, c]),
        });
    }
    let area = E::from_f64((h * w) as f64);
    let mut gx = Tensor::zeros(x.dims().to_vec());
    for ni in 0..n {
        for ci in 0..c {
            let g = grad_y.data()[ni * c + ci] / area;
            for hi in 0..h {
                for wi in 0..w {
                    gx.data_mut()[x.at4(ni, ci, hi, wi)] = g;
                }
            }
        }
    }
    Ok(gx)
}

fn add_forward<E: Scalar>(x: &Tensor<E>) -> Result<Tensor<E>> {
    if x.dims().first() != Some(&2) {
        return Err(Error::Shape {
            op: "add_forward",
            detail: format!("expected leading axis of 2, got {:?}", x.dims()),
        });
    }
    let rest: Vec<usize> = x.dims()[1..].to_vec();
    let half = x.len() / 2;
    let data = (0..half).map(|i| x.data()[i] + x.data()[half + i]).collect();
    Tensor::new(rest, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_identity_passes_input_through() {
        let layer = LayerSpec::dense(2, 2);
        let mut params = ParamSet::new();
        params.insert(
            "weight",
            Tensor::new(vec![2, 2], vec![1.0f32, 0.0, 0.0, 1.0]).unwrap(),
        );
        params.insert("bias", Tensor::zeros(vec![2]));
        let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let (y, cache) = forward(&layer, &params, &x).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);

        // Identity Jacobian: grad_x == grad_y.
        let gy = Tensor::new(vec![1, 2], vec![0.3, -0.7]).unwrap();
        let (gx, _) = backward(&layer, &params, &cache, &gy).unwrap();
        assert_eq!(gx.data(), gy.data());
    }

    #[test]
    fn relu_forward_and_subgradient() {
        let layer = LayerSpec::relu(3);
        let params = ParamSet::new();
        let x = Tensor::new(vec![1, 3], vec![-1.0f32, 0.0, 3.0]).unwrap();
        let (y, cache) = forward(&layer, &params, &x).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 3.0]);

        let layer2 = LayerSpec::relu(2);
        let x2 = Tensor::new(vec![1, 2], vec![-1.0f32, 3.0]).unwrap();
        let (_, cache2) = forward(&layer2, &params, &x2).unwrap();
        let gy = Tensor::new(vec![1, 2], vec![1.0f32, 1.0]).unwrap();
        let (gx, _) = backward(&layer2, &params, &cache2, &gy).unwrap();
        assert_eq!(gx.data(), &[0.0, 1.0]);
        drop(cache);
    }

    #[test]
    fn one_by_one_conv_scales_map() {
        let layer = LayerSpec::conv2d(1, 1, 1, 1);
        let mut params = ParamSet::new();
        params.insert("weight", Tensor::new(vec![1, 1, 1, 1], vec![2.0f32]).unwrap());
        params.insert("bias", Tensor::zeros(vec![1]));
        let x = Tensor::filled(vec![1, 1, 2, 2], 1.0f32);
        let (y, _) = forward(&layer, &params, &x).unwrap();
        assert_eq!(y.dims(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn conv_stride2_halves_spatial_dims() {
        let layer = LayerSpec::conv2d(1, 1, 3, 2);
        assert_eq!(layer.out_hw((8, 8)), (4, 4));
        assert_eq!(layer.out_hw((7, 7)), (4, 4));
    }

    #[test]
    fn rejects_nonfinite_input() {
        let layer = LayerSpec::relu(1);
        let x = Tensor::new(vec![1, 1], vec![f32::NAN]).unwrap();
        assert!(forward(&layer, &ParamSet::new(), &x).is_err());
    }

    #[test]
    fn rejects_even_kernel_and_bad_stride() {
        assert!(LayerSpec::conv2d(1, 1, 2, 1).validate().is_err());
        assert!(LayerSpec::conv2d(1, 1, 3, 3).validate().is_err());
        assert!(LayerSpec::depthwise(2, 3, 1).validate().is_ok());
        let bad = LayerSpec {
            kind: LayerKind::DepthwiseConv2d,
            kernel: 3,
            stride: 1,
            in_channels: 2,
            out_channels: 4,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn add_combines_stacked_pair() {
        let layer = LayerSpec::add(1);
        let a = Tensor::new(vec![1, 1, 1, 2], vec![1.0f32, 2.0]).unwrap();
        let b = Tensor::new(vec![1, 1, 1, 2], vec![10.0f32, 20.0]).unwrap();
        let x = Tensor::stack_pair(&a, &b).unwrap();
        let (y, cache) = forward(&layer, &ParamSet::new(), &x).unwrap();
        assert_eq!(y.data(), &[11.0, 22.0]);
        let gy = Tensor::new(vec![1, 1, 1, 2], vec![0.5f32, 0.25]).unwrap();
        let (gx, _) = backward(&layer, &ParamSet::new(), &cache, &gy).unwrap();
        assert_eq!(gx.data(), &[0.5, 0.25, 0.5, 0.25]);
    }

    #[test]
    fn gap_averages_each_channel() {
        let layer = LayerSpec::global_avg_pool(2);
        let x = Tensor::new(
            vec![1, 2, 2, 2],
            vec![1.0f32, 2.0, 3.0, 4.0, 10.0, 10.0, 10.0, 10.0],
        )
        .unwrap();
        let (y, _) = forward(&layer, &ParamSet::new(), &x).unwrap();
        assert_eq!(y.data(), &[2.5, 10.0]);
    }

    #[test]
    fn macs_hand_counts() {
        // 1x1 conv, 4 -> 8 channels on an 8x8 map.
        let c = LayerSpec::conv2d(4, 8, 1, 1);
        assert_eq!(c.macs((8, 8)), 2048);
        // depthwise 3x3, 8 channels on an 8x8 map, stride 1.
        let d = LayerSpec::depthwise(8, 3, 1);
        assert_eq!(d.macs((8, 8)), 4608);
        // dense is in*out regardless of spatial input.
        let f = LayerSpec::dense(320, 1000);
        assert_eq!(f.macs((1, 1)), 320_000);
    }
}
