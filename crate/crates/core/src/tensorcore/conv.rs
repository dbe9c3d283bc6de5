use rand::Rng;

use super::{Mask, PaddingMode, Param, Tensor};
use crate::error::{Error, Result};

/// Gradients of a convolution with respect to its input and parameters.
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

struct Geometry {
    batch: usize,
    cin: usize,
    cout: usize,
    len: usize,
    kernel: usize,
    dilation: usize,
    left: usize,
}

fn geometry(input: &Tensor, weight: &Tensor, dilation: usize, padding: PaddingMode) -> Result<Geometry> {
    let (batch, cin, len) = input.dims3()?;
    let (cout, wcin, kernel) = weight.dims3()?;
    if wcin != cin {
        return Err(Error::shape("conv input channels", wcin, cin));
    }
    if dilation == 0 {
        return Err(Error::Validation("dilation must be at least 1".into()));
    }
    let (left, _) = padding.pads(kernel, dilation);
    Ok(Geometry {
        batch,
        cin,
        cout,
        len,
        kernel,
        dilation,
        left,
    })
}

/// Unfolds one batch row `[Cin, L]` into `[Cin * K, L]` with zero padding.
fn im2col(x: &[f64], g: &Geometry, col: &mut [f64]) {
    let l = g.len;
    for c in 0..g.cin {
        let src = &x[c * l..(c + 1) * l];
        for k in 0..g.kernel {
            let row = &mut col[(c * g.kernel + k) * l..(c * g.kernel + k + 1) * l];
            let shift = (k * g.dilation) as isize - g.left as isize;
            for (t, dst) in row.iter_mut().enumerate() {
                let s = t as isize + shift;
                *dst = if s >= 0 && (s as usize) < l { src[s as usize] } else { 0.0 };
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `[Cin * K, L]` back onto `[Cin, L]`.
fn col2im(col: &[f64], g: &Geometry, x: &mut [f64]) {
    let l = g.len;
    for c in 0..g.cin {
        let dst = &mut x[c * l..(c + 1) * l];
        for k in 0..g.kernel {
            let row = &col[(c * g.kernel + k) * l..(c * g.kernel + k + 1) * l];
            let shift = (k * g.dilation) as isize - g.left as isize;
            for (t, v) in row.iter().enumerate() {
                let s = t as isize + shift;
                if s >= 0 && (s as usize) < l {
                    dst[s as usize] += v;
                }
            }
        }
    }
}

/// `c[m×n] = alpha * a * b + beta * c`, all row-major unless strides say otherwise.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: slice lengths cover the m×k, k×n and m×n extents addressed by the strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Length-preserving dilated 1-D convolution.
///
/// `out[b,o,t] = bias[o] + sum_{c,k} w[o,c,k] * x_pad[b,c,t + k*dilation]`, where
/// `x_pad` carries the padding chosen by `padding`.
pub fn conv1d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    dilation: usize,
    padding: PaddingMode,
) -> Result<Tensor> {
    let g = geometry(input, weight, dilation, padding)?;
    if bias.len() != g.cout {
        return Err(Error::shape("conv bias length", g.cout, bias.len()));
    }
    let (l, ck) = (g.len, g.cin * g.kernel);
    let mut out = Tensor::zeros(&[g.batch, g.cout, l]);
    let mut col = vec![0.0; ck * l];
    for b in 0..g.batch {
        let x = &input.data()[b * g.cin * l..(b + 1) * g.cin * l];
        let y = &mut out.data_mut()[b * g.cout * l..(b + 1) * g.cout * l];
        for (o, row) in y.chunks_exact_mut(l).enumerate() {
            row.fill(bias.data()[o]);
        }
        let cols: &[f64] = if g.kernel == 1 {
            x
        } else {
            im2col(x, &g, &mut col);
            &col
        };
        gemm(g.cout, ck, l, weight.data(), (ck as isize, 1), cols, (l as isize, 1), 1.0, y);
    }
    Ok(out)
}

/// Exact adjoint of [`conv1d_forward`].
pub fn conv1d_backward(
    input: &Tensor,
    weight: &Tensor,
    dilation: usize,
    padding: PaddingMode,
    grad_out: &Tensor,
) -> Result<ConvGrads> {
    let g = geometry(input, weight, dilation, padding)?;
    if grad_out.shape() != [g.batch, g.cout, g.len] {
        return Err(Error::Validation(format!(
            "conv upstream gradient has shape {:?}, expected {:?}",
            grad_out.shape(),
            [g.batch, g.cout, g.len]
        )));
    }
    let (l, ck) = (g.len, g.cin * g.kernel);
    let mut grad_in = Tensor::zeros(input.shape());
    let mut grad_w = Tensor::zeros(weight.shape());
    let mut grad_b = Tensor::zeros(&[g.cout]);
    let mut col = vec![0.0; ck * l];
    let mut grad_col = vec![0.0; ck * l];
    for b in 0..g.batch {
        let x = &input.data()[b * g.cin * l..(b + 1) * g.cin * l];
        let dy = &grad_out.data()[b * g.cout * l..(b + 1) * g.cout * l];
        for (o, row) in dy.chunks_exact(l).enumerate() {
            grad_b.data_mut()[o] += row.iter().sum::<f64>();
        }
        let cols: &[f64] = if g.kernel == 1 {
            x
        } else {
            im2col(x, &g, &mut col);
            &col
        };
        // dW[o, ck] += dy[o, t] * col[ck, t]
        gemm(g.cout, l, ck, dy, (l as isize, 1), cols, (1, l as isize), 1.0, grad_w.data_mut());
        // dcol[ck, t] = W[o, ck] * dy[o, t]
        let dx = &mut grad_in.data_mut()[b * g.cin * l..(b + 1) * g.cin * l];
        if g.kernel == 1 {
            gemm(ck, g.cout, l, weight.data(), (1, ck as isize), dy, (l as isize, 1), 0.0, dx);
        } else {
            gemm(ck, g.cout, l, weight.data(), (1, ck as isize), dy, (l as isize, 1), 0.0, &mut grad_col);
            col2im(&grad_col, &g, dx);
        }
    }
    Ok(ConvGrads {
        input: grad_in,
        weight: grad_w,
        bias: grad_b,
    })
}

fn as_kernel(weight: &Tensor) -> Result<Tensor> {
    match weight.shape() {
        [cout, cin] => weight.clone().reshape(vec![*cout, *cin, 1]),
        other => Err(Error::shape("pointwise weight rank", 2, other.len())),
    }
}

/// `out[b,o,t] = bias[o] + sum_c w[o,c] * x[b,c,t]`: a 1×1 convolution.
pub fn pointwise_linear_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    conv1d_forward(input, &as_kernel(weight)?, bias, 1, PaddingMode::CausalLeft)
}

pub fn pointwise_linear_backward(input: &Tensor, weight: &Tensor, grad_out: &Tensor) -> Result<ConvGrads> {
    let mut grads = conv1d_backward(input, &as_kernel(weight)?, 1, PaddingMode::CausalLeft, grad_out)?;
    grads.weight = grads.weight.reshape(weight.shape().to_vec())?;
    Ok(grads)
}

/// Convolution layer with masked output. A kernel of 1 is a pointwise linear map.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv1d {
    pub weight: Param,
    pub bias: Param,
    pub dilation: usize,
    pub padding: PaddingMode,
}

impl Conv1d {
    /// Uniform init in `±sqrt(1 / fan_in)` for weights and bias.
    pub fn new<R: Rng>(
        cin: usize,
        cout: usize,
        kernel: usize,
        dilation: usize,
        padding: PaddingMode,
        rng: &mut R,
    ) -> Self {
        let bound = (1.0 / (cin * kernel) as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-bound..bound)).collect() };
        let w = draw(cout * cin * kernel);
        let b = draw(cout);
        Conv1d {
            weight: Param::new(Tensor::new(vec![cout, cin, kernel], w).expect("consistent shape")),
            bias: Param::new(Tensor::new(vec![cout], b).expect("consistent shape")),
            dilation,
            padding,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    pub fn forward(&self, x: &Tensor, mask: &Mask) -> Result<Tensor> {
        let mut y = conv1d_forward(x, &self.weight.value, &self.bias.value, self.dilation, self.padding)?;
        mask.apply(&mut y)?;
        Ok(y)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    /// `x` is the input seen by the matching forward call.
    pub fn backward(&mut self, x: &Tensor, grad: &Tensor, mask: &Mask) -> Result<Tensor> {
        let mut grad = grad.clone();
        mask.apply(&mut grad)?;
        let grads = conv1d_backward(x, &self.weight.value, self.dilation, self.padding, &grad)?;
        self.weight.grad.add_assign(&grads.weight)?;
        self.bias.grad.add_assign(&grads.bias)?;
        Ok(grads.input)
    }

    pub fn params_mut(&mut self) -> [(&'static str, &mut Param); 2] {
        [("weight", &mut self.weight), ("bias", &mut self.bias)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorcore::{grad_check, relative_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct-summation reference, independent of the im2col/gemm route.
    fn conv_reference(x: &Tensor, w: &Tensor, bias: &Tensor, d: usize, pad: PaddingMode) -> Tensor {
        let (bn, cin, l) = x.dims3().unwrap();
        let (cout, _, k) = w.dims3().unwrap();
        let (left, _) = pad.pads(k, d);
        let mut out = Tensor::zeros(&[bn, cout, l]);
        for b in 0..bn {
            for o in 0..cout {
                for t in 0..l {
                    let mut acc = bias.data()[o];
                    for c in 0..cin {
                        for kk in 0..k {
                            let s = t as isize + (kk * d) as isize - left as isize;
                            if s >= 0 && (s as usize) < l {
                                acc += w.data()[(o * cin + c) * k + kk] * x.data()[(b * cin + c) * l + s as usize];
                            }
                        }
                    }
                    out.data_mut()[(b * cout + o) * l + t] = acc;
                }
            }
        }
        out
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[2, 3, 5], &mut rng);
        let mut w = Tensor::zeros(&[3, 3, 1]);
        for o in 0..3 {
            w.data_mut()[o * 3 + o] = 1.0;
        }
        let y = conv1d_forward(&x, &w, &Tensor::zeros(&[3]), 1, PaddingMode::CausalLeft).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn hand_computed_dilated_causal() {
        let x = Tensor::new(vec![1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::new(vec![1, 1, 2], vec![1.0, 1.0]).unwrap();
        let y = conv1d_forward(&x, &w, &Tensor::zeros(&[1]), 2, PaddingMode::CausalLeft).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 4.0, 6.0]);
    }

    #[test]
    fn matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &(k, d, pad) in &[
            (3, 1, PaddingMode::CausalLeft),
            (3, 4, PaddingMode::CausalLeft),
            (3, 2, PaddingMode::Symmetric),
            (2, 3, PaddingMode::Symmetric),
            (5, 8, PaddingMode::CausalLeft),
            (1, 1, PaddingMode::Symmetric),
        ] {
            let x = random(&[2, 3, 11], &mut rng);
            let w = random(&[4, 3, k], &mut rng);
            let b = random(&[4], &mut rng);
            let fast = conv1d_forward(&x, &w, &b, d, pad).unwrap();
            let slow = conv_reference(&x, &w, &b, d, pad);
            for (a, r) in fast.data().iter().zip(slow.data()) {
                assert!((a - r).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_errors_name_dimension() {
        let x = Tensor::zeros(&[1, 3, 4]);
        let w = Tensor::zeros(&[2, 2, 3]);
        let err = conv1d_forward(&x, &w, &Tensor::zeros(&[2]), 1, PaddingMode::CausalLeft).unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");
        let w = Tensor::zeros(&[2, 3, 3]);
        let err = conv1d_forward(&x, &w, &Tensor::zeros(&[3]), 1, PaddingMode::CausalLeft).unwrap_err();
        assert!(err.to_string().contains("bias"), "{err}");
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[2, 3, 7], &mut rng);
        let w = random(&[2, 3, 3], &mut rng);
        let g = conv1d_backward(&x, &w, 2, PaddingMode::CausalLeft, &Tensor::zeros(&[2, 2, 7])).unwrap();
        assert!(g.weight.data().iter().chain(g.bias.data()).chain(g.input.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn bias_grad_is_upstream_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&[2, 3, 7], &mut rng);
        let w = random(&[4, 3, 3], &mut rng);
        let dy = random(&[2, 4, 7], &mut rng);
        let g = conv1d_backward(&x, &w, 2, PaddingMode::Symmetric, &dy).unwrap();
        for o in 0..4 {
            let expected: f64 = (0..2).flat_map(|b| (0..7).map(move |t| (b, t))).map(|(b, t)| dy.data()[(b * 4 + o) * 7 + t]).sum();
            assert!((g.bias.data()[o] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let pad = if seed % 2 == 0 { PaddingMode::CausalLeft } else { PaddingMode::Symmetric };
            let x = random(&[2, 3, 7], &mut rng);
            let w = random(&[3, 3, 3], &mut rng);
            let b = random(&[3], &mut rng);
            let r = random(&[2, 3, 7], &mut rng);
            let objective = |x: &Tensor, w: &Tensor, b: &Tensor| -> f64 {
                let y = conv_reference(x, w, b, 2, pad);
                y.data().iter().zip(r.data()).map(|(a, c)| a * c).sum()
            };
            let g = conv1d_backward(&x, &w, 2, pad, &r).unwrap();

            let err_x = grad_check(
                |v| objective(&Tensor::new(x.shape().to_vec(), v.to_vec()).unwrap(), &w, &b),
                x.data(),
                g.input.data(),
                1e-4,
            );
            let err_w = grad_check(
                |v| objective(&x, &Tensor::new(w.shape().to_vec(), v.to_vec()).unwrap(), &b),
                w.data(),
                g.weight.data(),
                1e-4,
            );
            let err_b = grad_check(
                |v| objective(&x, &w, &Tensor::new(vec![3], v.to_vec()).unwrap()),
                b.data(),
                g.bias.data(),
                1e-4,
            );
            assert!(err_x < 1e-4 && err_w < 1e-4 && err_b < 1e-4, "seed {seed}: {err_x} {err_w} {err_b}");
        }
    }

    #[test]
    fn pointwise_linear_counts_and_matches_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[2, 10, 4], &mut rng);
        let w = random(&[1, 10], &mut rng);
        let b = random(&[1], &mut rng);
        let y = pointwise_linear_forward(&x, &w, &b).unwrap();
        assert_eq!(y.shape(), &[2, 1, 4]);
        assert_eq!(w.len() + b.len(), 11);
        let dy = random(&[2, 1, 4], &mut rng);
        let g = pointwise_linear_backward(&x, &w, &dy).unwrap();
        assert_eq!(g.weight.shape(), &[1, 10]);
        let err = grad_check(
            |v| {
                let y = pointwise_linear_forward(&x, &Tensor::new(vec![1, 10], v.to_vec()).unwrap(), &b).unwrap();
                y.data().iter().zip(dy.data()).map(|(a, c)| a * c).sum()
            },
            w.data(),
            g.weight.data(),
            1e-3,
        );
        assert!(err < 1e-7, "{err}");
        assert!(relative_error(1.0, 1.0) == 0.0);
    }

    #[test]
    fn layer_masks_output_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut layer = Conv1d::new(2, 3, 3, 1, PaddingMode::Symmetric, &mut rng);
        let mask = Mask::from_lengths(&[3, 5], 5);
        let mut x = random(&[2, 2, 5], &mut rng);
        mask.apply(&mut x).unwrap();
        let y = layer.forward(&x, &mask).unwrap();
        for c in 0..3 {
            assert_eq!(y.data()[c * 5 + 3], 0.0);
            assert_eq!(y.data()[c * 5 + 4], 0.0);
        }
        let dx = layer.backward(&x, &Tensor::filled(&[2, 3, 5], 1.0), &mask).unwrap();
        assert_eq!(dx.shape(), x.shape());
        // bias gradient counts only the 8 valid positions
        assert!(layer.bias.grad.data().iter().all(|&v| v == 8.0));
    }
}
