//! Layer kernels and their backward passes. All tensors are NCHW row-major.
//!
//! The 3×3 convolution lowers groups of samples to an im2col matrix and runs
//! one GEMM per group. Group size depends only on the spatial size, and the
//! weight gradient walks the groups in order, so results do not depend on the
//! thread count.

use super::element::{gemm, Element};
use super::NnError;
use crate::numerics::Tensor;
use rayon::prelude::*;

fn shape_err(what: &str, detail: String) -> NnError {
    NnError::ShapeMismatch(format!("{what}: {detail}"))
}

fn dims4<T: Element>(t: &Tensor<T>, what: &str) -> Result<[usize; 4], NnError> {
    match *t.shape() {
        [n, c, h, w] => Ok([n, c, h, w]),
        ref s => Err(shape_err(what, format!("expected [N,C,H,W], got {s:?}"))),
    }
}

/// Lower one `[C, H, W]` sample into rows of 3×3 patches (zero padding 1):
/// row `ci*9 + ky*3 + kx` starts at `cols[row * ld + offset]` and holds `H*W`
/// values.
fn im2col<T: Element>(x: &[T], c: usize, h: usize, w: usize, cols: &mut [T], ld: usize, offset: usize) {
    let hw = h * w;
    let zero = T::zero();
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(ci * 9 + ky * 3 + kx) * ld + offset..][..hw];
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        dst.fill(zero);
                        continue;
                    }
                    let src = &plane[sy as usize * w..][..w];
                    match kx {
                        0 => {
                            dst[0] = zero;
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = zero;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add patch gradients back into `[C, H, W]`.
fn col2im<T: Element>(cols: &[T], c: usize, h: usize, w: usize, dx: &mut [T], ld: usize, offset: usize) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(ci * 9 + ky * 3 + kx) * ld + offset..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..][..w];
                    match kx {
                        0 => dst[..w - 1]
                            .iter_mut()
                            .zip(&src[1..])
                            .for_each(|(d, &s)| *d = *d + s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, &s)| *d = *d + s),
                        _ => dst[1..]
                            .iter_mut()
                            .zip(&src[..w - 1])
                            .for_each(|(d, &s)| *d = *d + s),
                    }
                }
            }
        }
    }
}

/// Samples lowered into one GEMM: enough to give it about 2048 columns.
fn conv_group(hw: usize) -> usize {
    (2048 / hw.max(1)).max(1)
}

fn check_conv<T: Element>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<([usize; 4], usize), NnError> {
    let [n, c, h, w] = dims4(input, "conv3x3 input")?;
    let k = match *weights.shape() {
        [k, wc, 3, 3] if wc == c => k,
        ref s => {
            return Err(shape_err(
                "conv3x3 weights",
                format!("expected [K,{c},3,3], got {s:?}"),
            ))
        }
    };
    if bias.shape() != [k] {
        return Err(shape_err(
            "conv3x3 bias",
            format!("expected [{k}], got {:?}", bias.shape()),
        ));
    }
    Ok(([n, c, h, w], k))
}

/// Same-size 3×3 convolution, stride 1, zero padding 1.
pub fn conv3x3<T: Element>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    let ([n, c, h, w], k) = check_conv(input, weights, bias)?;
    let hw = h * w;
    let mut out = Tensor::zeros(&[n, k, h, w]);
    if n == 0 || hw == 0 {
        return Ok(out);
    }
    let g = conv_group(hw).min(n);
    let wdata = weights.data();
    let bdata = bias.data();
    out.data_mut()
        .par_chunks_mut(g * k * hw)
        .zip(input.data().par_chunks(g * c * hw))
        .for_each_init(
            || (vec![T::zero(); c * 9 * g * hw], vec![T::zero(); k * g * hw]),
            |(cols, prod), (o, x)| {
                let gn = x.len() / (c * hw);
                let ld = gn * hw;
                for (si, sample) in x.chunks(c * hw).enumerate() {
                    im2col(sample, c, h, w, cols, ld, si * hw);
                }
                gemm(k, c * 9, ld, wdata, false, &cols[..c * 9 * ld], false, T::zero(), &mut prod[..k * ld]);
                for (si, sample) in o.chunks_mut(k * hw).enumerate() {
                    for (ki, plane) in sample.chunks_mut(hw).enumerate() {
                        let src = &prod[ki * ld + si * hw..][..hw];
                        for (d, &v) in plane.iter_mut().zip(src) {
                            *d = v + bdata[ki];
                        }
                    }
                }
            },
        );
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ParamGrads<T: Element = f32> {
    /// `None` when the caller did not ask for the input gradient.
    pub input: Option<Tensor<T>>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Gradients of a scalar loss through [`conv3x3`], given `∂L/∂out`.
pub fn conv3x3_backward<T: Element>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input_grad: bool,
) -> Result<ParamGrads<T>, NnError> {
    let [n, c, h, w] = dims4(input, "conv3x3 input")?;
    let k = weights.shape().first().copied().unwrap_or(0);
    if weights.shape() != [k, c, 3, 3] {
        return Err(shape_err("conv3x3 weights", format!("{:?}", weights.shape())));
    }
    if grad_out.shape() != [n, k, h, w] {
        return Err(shape_err(
            "conv3x3 grad_out",
            format!("expected {:?}, got {:?}", [n, k, h, w], grad_out.shape()),
        ));
    }
    let hw = h * w;
    let c9 = c * 9;
    let g = conv_group(hw).min(n.max(1));
    // dWᵀ = cols · dyᵀ keeps both GEMM operands row-major; a transposed
    // right-hand side is several times slower in matrixmultiply.
    let mut dwt = vec![T::zero(); c9 * k];
    let mut db = vec![T::zero(); k];
    let mut dx = need_input_grad.then(|| Tensor::zeros(&[n, c, h, w]));
    let mut cols = vec![T::zero(); c9 * g * hw];
    let mut dyg = vec![T::zero(); k * g * hw];
    let mut dyt = vec![T::zero(); g * hw * k];
    let mut dcols = if need_input_grad {
        vec![T::zero(); c9 * g * hw]
    } else {
        Vec::new()
    };
    for start in (0..n).step_by(g) {
        let gn = g.min(n - start);
        let ld = gn * hw;
        for si in 0..gn {
            let ni = start + si;
            im2col(&input.data()[ni * c * hw..][..c * hw], c, h, w, &mut cols, ld, si * hw);
            let dy = &grad_out.data()[ni * k * hw..][..k * hw];
            for (ki, plane) in dy.chunks(hw).enumerate() {
                dyg[ki * ld + si * hw..][..hw].copy_from_slice(plane);
                for (p, &v) in plane.iter().enumerate() {
                    dyt[(si * hw + p) * k + ki] = v;
                }
                db[ki] = db[ki] + plane.iter().copied().sum::<T>();
            }
        }
        gemm(c9, ld, k, &cols[..c9 * ld], false, &dyt[..ld * k], false, T::one(), &mut dwt);
        if let Some(dx) = dx.as_mut() {
            gemm(c9, k, ld, weights.data(), true, &dyg[..k * ld], false, T::zero(), &mut dcols[..c9 * ld]);
            for si in 0..gn {
                let ni = start + si;
                col2im(&dcols, c, h, w, &mut dx.data_mut()[ni * c * hw..][..c * hw], ld, si * hw);
            }
        }
    }
    let mut dw = Tensor::zeros(&[k, c, 3, 3]);
    for (j, row) in dwt.chunks(k).enumerate() {
        for (ki, &v) in row.iter().enumerate() {
            dw.data_mut()[ki * c9 + j] = v;
        }
    }
    Ok(ParamGrads {
        input: dx,
        weights: dw,
        bias: Tensor::from_vec(&[k], db).expect("bias length"),
    })
}

#[derive(Debug, Clone)]
pub struct PoolOutput<T: Element = f32> {
    pub output: Tensor<T>,
    /// Flat input index chosen for each output element.
    pub argmax: Vec<usize>,
}

/// 2×2 max pooling, stride 2. Odd trailing rows/columns are dropped; ties go
/// to the first element of the window in row-major order.
pub fn maxpool2x2<T: Element>(input: &Tensor<T>) -> Result<PoolOutput<T>, NnError> {
    let [n, c, h, w] = dims4(input, "maxpool2x2 input")?;
    if h < 2 || w < 2 {
        return Err(shape_err("maxpool2x2", format!("spatial {h}x{w} is smaller than 2x2")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let first = base + 2 * oy * w + 2 * ox;
                let mut best = first;
                for idx in [first + 1, first + w, first + w + 1] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok(PoolOutput {
        output: Tensor::from_vec(&[n, c, oh, ow], out).expect("pool size"),
        argmax,
    })
}

pub fn maxpool2x2_backward<T: Element>(
    grad_out: &Tensor<T>,
    argmax: &[usize],
    input_shape: &[usize],
) -> Result<Tensor<T>, NnError> {
    if grad_out.len() != argmax.len() {
        return Err(shape_err(
            "maxpool2x2 backward",
            format!("{} gradients for {} routes", grad_out.len(), argmax.len()),
        ));
    }
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&g, &idx) in grad_out.data().iter().zip(argmax) {
        d[idx] = d[idx] + g;
    }
    Ok(dx)
}

fn dims2<T: Element>(t: &Tensor<T>, what: &str) -> Result<[usize; 2], NnError> {
    match *t.shape() {
        [a, b] => Ok([a, b]),
        ref s => Err(shape_err(what, format!("expected 2-D, got {s:?}"))),
    }
}

/// `out = input · weightsᵀ + bias`.
pub fn dense<T: Element>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    let [n, fin] = dims2(input, "dense input")?;
    let [fout, wfin] = dims2(weights, "dense weights")?;
    if wfin != fin || bias.shape() != [fout] {
        return Err(shape_err(
            "dense",
            format!(
                "input {:?}, weights {:?}, bias {:?}",
                input.shape(),
                weights.shape(),
                bias.shape()
            ),
        ));
    }
    let mut out = Vec::with_capacity(n * fout);
    for _ in 0..n {
        out.extend_from_slice(bias.data());
    }
    gemm(n, fin, fout, input.data(), false, weights.data(), true, T::one(), &mut out);
    Ok(Tensor::from_vec(&[n, fout], out).expect("dense size"))
}

pub fn dense_backward<T: Element>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input_grad: bool,
) -> Result<ParamGrads<T>, NnError> {
    let [n, fin] = dims2(input, "dense input")?;
    let [fout, _] = dims2(weights, "dense weights")?;
    if grad_out.shape() != [n, fout] || weights.shape() != [fout, fin] {
        return Err(shape_err(
            "dense backward",
            format!("grad_out {:?}, weights {:?}", grad_out.shape(), weights.shape()),
        ));
    }
    let mut dw = vec![T::zero(); fout * fin];
    gemm(fout, n, fin, grad_out.data(), true, input.data(), false, T::zero(), &mut dw);
    let mut db = vec![T::zero(); fout];
    for row in grad_out.data().chunks(fout) {
        for (b, &g) in db.iter_mut().zip(row) {
            *b = *b + g;
        }
    }
    let dx = need_input_grad.then(|| {
        let mut dx = vec![T::zero(); n * fin];
        gemm(n, fout, fin, grad_out.data(), false, weights.data(), false, T::zero(), &mut dx);
        Tensor::from_vec(&[n, fin], dx).expect("dense dx size")
    });
    Ok(ParamGrads {
        input: dx,
        weights: Tensor::from_vec(&[fout, fin], dw).expect("dense dw size"),
        bias: Tensor::from_vec(&[fout], db).expect("dense db size"),
    })
}

pub fn relu<T: Element>(input: &Tensor<T>) -> Tensor<T> {
    let data = input.data().iter().map(|&v| v.max(T::zero())).collect();
    Tensor::from_vec(input.shape(), data).expect("same shape")
}

/// Masks `grad_out` where `input <= 0` (the subgradient at 0 is 0).
pub fn relu_backward<T: Element>(
    input: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    if input.shape() != grad_out.shape() {
        return Err(shape_err(
            "relu backward",
            format!("{:?} vs {:?}", input.shape(), grad_out.shape()),
        ));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Ok(Tensor::from_vec(input.shape(), data).expect("same shape"))
}

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Element>(logits: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let [_, k] = dims2(logits, "softmax logits")?;
    let mut probs = logits.clone();
    if k == 0 {
        return Ok(probs);
    }
    for row in probs.data_mut().chunks_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    Ok(probs)
}

#[derive(Debug, Clone)]
pub struct SoftmaxXent<T: Element = f32> {
    /// Batch-mean negative log-likelihood.
    pub loss: f64,
    pub probs: Tensor<T>,
    /// `(probs - onehot) / N`.
    pub grad_logits: Tensor<T>,
}

pub fn softmax_cross_entropy<T: Element>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<SoftmaxXent<T>, NnError> {
    let [n, k] = dims2(logits, "softmax logits")?;
    if labels.len() != n {
        return Err(shape_err(
            "softmax_cross_entropy",
            format!("{n} rows but {} labels", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(shape_err(
            "softmax_cross_entropy",
            format!("label {bad} out of range for {k} classes"),
        ));
    }
    let probs = softmax(logits)?;
    let mut loss = 0.0f64;
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
        let nll = max + sum.ln() - row[label];
        loss += nll.to_f64();
    }
    let inv_n = T::one() / T::from_f64(n as f64);
    let mut grad = probs.clone();
    for (row, &label) in grad.data_mut().chunks_mut(k).zip(labels) {
        row[label] = row[label] - T::one();
        for v in row.iter_mut() {
            *v = *v * inv_n;
        }
    }
    Ok(SoftmaxXent {
        loss: if n == 0 { 0.0 } else { loss / n as f64 },
        probs,
        grad_logits: grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Prng;
    use proptest::prelude::*;

    fn random_tensor(shape: &[usize], rng: &mut Prng) -> Tensor<f32> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.range_f64(-1.0, 1.0) as f32).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    /// Seven nested loops, straight from the definition.
    fn conv_oracle(x: &Tensor<f32>, w: &Tensor<f32>, b: &Tensor<f32>) -> Vec<f64> {
        let [n, c, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        let k = w.shape()[0];
        let mut out = vec![0.0f64; n * k * h * wd];
        for ni in 0..n {
            for ki in 0..k {
                for y in 0..h {
                    for xx in 0..wd {
                        let mut acc = f64::from(b.data()[ki]);
                        for ci in 0..c {
                            for dy in 0..3 {
                                for dx in 0..3 {
                                    let sy = y as isize + dy as isize - 1;
                                    let sx = xx as isize + dx as isize - 1;
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                        continue;
                                    }
                                    let xi = ((ni * c + ci) * h + sy as usize) * wd + sx as usize;
                                    let wi = ((ki * c + ci) * 3 + dy) * 3 + dx;
                                    acc += f64::from(x.data()[xi]) * f64::from(w.data()[wi]);
                                }
                            }
                        }
                        out[((ni * k + ki) * h + y) * wd + xx] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_all_ones_counts_overlap() {
        let x = Tensor::full(&[1, 1, 3, 3], 1.0f32);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0f32);
        let b = Tensor::zeros(&[1]);
        let out = conv3x3(&x, &w, &b).unwrap();
        assert_eq!(out.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn conv_delta_kernel_is_identity() {
        let mut rng = Prng::new(3);
        let x = random_tensor(&[2, 1, 5, 7], &mut rng);
        let mut w = Tensor::zeros(&[1, 1, 3, 3]);
        w.data_mut()[4] = 1.0;
        let out = conv3x3(&x, &w, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn conv_matches_oracle_2x3x8x8() {
        let mut rng = Prng::new(11);
        let x = random_tensor(&[2, 3, 8, 8], &mut rng);
        let w = random_tensor(&[4, 3, 3, 3], &mut rng);
        let b = random_tensor(&[4], &mut rng);
        let got = conv3x3(&x, &w, &b).unwrap();
        for (g, o) in got.data().iter().zip(conv_oracle(&x, &w, &b)) {
            assert!((f64::from(*g) - o).abs() < 1e-5);
        }
    }

    #[test]
    fn conv_shape_errors() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        assert!(conv3x3(&x, &Tensor::zeros(&[3, 1, 3, 3]), &Tensor::zeros(&[3])).is_err());
        assert!(conv3x3(&x, &Tensor::zeros(&[3, 2, 3, 3]), &Tensor::zeros(&[2])).is_err());
        assert!(conv3x3::<f32>(&Tensor::zeros(&[2, 4, 4]), &Tensor::zeros(&[3, 2, 3, 3]), &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn pool_basics() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(maxpool2x2(&x).unwrap().output.data(), &[4.0]);
        let five = Tensor::<f32>::zeros(&[1, 2, 5, 5]);
        assert_eq!(maxpool2x2(&five).unwrap().output.shape(), &[1, 2, 2, 2]);
        assert!(maxpool2x2(&Tensor::<f32>::zeros(&[1, 1, 1, 4])).is_err());
    }

    #[test]
    fn pool_tie_routes_to_first() {
        let x = Tensor::full(&[1, 1, 4, 4], 0.5f32);
        let p = maxpool2x2(&x).unwrap();
        assert!(p.output.data().iter().all(|&v| v == 0.5));
        let g = Tensor::full(&[1, 1, 2, 2], 1.0f32);
        let dx = maxpool2x2_backward(&g, &p.argmax, x.shape()).unwrap();
        let expect = [
            1.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 0.0, //
            1.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 0.0,
        ];
        assert_eq!(dx.data(), &expect);
    }

    #[test]
    fn dense_identity_and_bias() {
        let x = Tensor::from_vec(&[2, 3], vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 4] = 1.0;
        }
        assert_eq!(dense(&x, &eye, &Tensor::zeros(&[3])).unwrap().data(), x.data());
        let b = Tensor::from_vec(&[2], vec![7.0f32, -1.0]).unwrap();
        let out = dense(&x, &Tensor::zeros(&[2, 3]), &b).unwrap();
        assert_eq!(out.data(), &[7.0, -1.0, 7.0, -1.0]);
        assert!(dense(&x, &Tensor::zeros(&[2, 4]), &b).is_err());
    }

    #[test]
    fn dense_matches_double_loop() {
        let mut rng = Prng::new(5);
        let x = random_tensor(&[4, 10], &mut rng);
        let w = random_tensor(&[7, 10], &mut rng);
        let b = random_tensor(&[7], &mut rng);
        let out = dense(&x, &w, &b).unwrap();
        for i in 0..4 {
            for j in 0..7 {
                let mut acc = f64::from(b.data()[j]);
                for p in 0..10 {
                    acc += f64::from(x.data()[i * 10 + p]) * f64::from(w.data()[j * 10 + p]);
                }
                assert!((f64::from(out.data()[i * 7 + j]) - acc).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn relu_cases() {
        let x = Tensor::from_vec(&[3], vec![-1.0f32, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let pos = Tensor::from_vec(&[2], vec![0.5f32, 3.0]).unwrap();
        assert_eq!(relu(&pos), pos);
        let g = relu_backward(&x, &Tensor::full(&[3], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn uniform_softmax_loss() {
        let logits = Tensor::<f32>::zeros(&[2, 33]);
        let r = softmax_cross_entropy(&logits, &[0, 32]).unwrap();
        assert!((r.loss - 33f64.ln()).abs() < 1e-6);
        assert!((r.loss - 3.4965).abs() < 1e-4);
        assert!(r.probs.data().iter().all(|&p| (p - 1.0 / 33.0).abs() < 1e-7));
    }

    #[test]
    fn softmax_is_stable() {
        let mut data = vec![0.0f32; 33];
        data[4] = 1000.0;
        let logits = Tensor::from_vec(&[1, 33], data).unwrap();
        let r = softmax_cross_entropy(&logits, &[4]).unwrap();
        assert!(r.loss.is_finite() && r.loss.abs() < 1e-6);
        assert!(r.probs.all_finite() && r.grad_logits.all_finite());
        assert!(softmax_cross_entropy(&logits, &[33]).is_err());
    }

    #[test]
    fn softmax_loss_matches_f64_oracle() {
        let mut rng = Prng::new(21);
        let logits = random_tensor(&[5, 33], &mut rng);
        let labels = [0, 5, 32, 17, 5];
        let r = softmax_cross_entropy(&logits, &labels).unwrap();
        let mut want = 0.0f64;
        for (i, &l) in labels.iter().enumerate() {
            let row: Vec<f64> = logits.data()[i * 33..(i + 1) * 33].iter().map(|&v| f64::from(v)).collect();
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            want += -(row[l].exp() / z).ln();
        }
        want /= 5.0;
        assert!((r.loss - want).abs() < 1e-5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn conv_matches_oracle_random(n in 1usize..=3, c in 1usize..=4, k in 1usize..=5, h in 1usize..=12, w in 1usize..=12, seed in any::<u64>()) {
            let mut rng = Prng::new(seed);
            let x = random_tensor(&[n, c, h, w], &mut rng);
            let wt = random_tensor(&[k, c, 3, 3], &mut rng);
            let b = random_tensor(&[k], &mut rng);
            let got = conv3x3(&x, &wt, &b).unwrap();
            prop_assert_eq!(got.shape(), &[n, k, h, w]);
            for (g, o) in got.data().iter().zip(conv_oracle(&x, &wt, &b)) {
                prop_assert!((f64::from(*g) - o).abs() < 1e-5);
            }
        }

        #[test]
        fn softmax_rows_sum_to_one(seed in any::<u64>(), n in 1usize..6, k in 2usize..40) {
            let mut rng = Prng::new(seed);
            let data = (0..n * k).map(|_| rng.range_f64(-30.0, 30.0) as f32).collect();
            let logits = Tensor::from_vec(&[n, k], data).unwrap();
            let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
            let r = softmax_cross_entropy(&logits, &labels).unwrap();
            prop_assert!(r.loss >= 0.0);
            for row in r.probs.data().chunks(k) {
                let s: f32 = row.iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }
}
