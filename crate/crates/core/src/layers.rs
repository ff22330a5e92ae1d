//! Forward and backward passes for every layer type: convolution, max-pooling,
//! ELU, fully-connected, softmax cross-entropy and the grid detection loss.
//!
//! All functions are pure. Images are channel-first `[C,H,W]`.

use crate::detect::{iou, BBox, GridSpec};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{gemm, gemm_at, gemm_bt, Tensor};

/// Parameters of a 2-D convolution with zero padding on all sides.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T: Scalar> {
    /// `[out_channels, in_channels, kh, kw]`
    pub weights: Tensor<T>,
    /// `[out_channels]`
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> ConvParams<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>, stride: usize, padding: usize) -> Result<Self> {
        if weights.rank() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "conv weights must be [O,C,kh,kw], got {:?}",
                weights.shape()
            )));
        }
        if bias.shape() != [weights.shape()[0]] {
            return Err(Error::ShapeMismatch(format!(
                "conv bias {:?} does not match {} output channels",
                bias.shape(),
                weights.shape()[0]
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidGeometry("stride must be at least 1".into()));
        }
        Ok(Self {
            weights,
            bias,
            stride,
            padding,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weights.shape()[2], self.weights.shape()[3])
    }
}

/// Output extent of a sliding window, or `None` when the window does not fit.
pub fn window_output(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    if kernel == 0 || stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

fn chw<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::ShapeMismatch(format!("{what} must be [C,H,W], got {s:?}"))),
    }
}

struct ConvGeometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeometry {
    fn new<T: Scalar>(input: &Tensor<T>, p: &ConvParams<T>) -> Result<Self> {
        let (c, h, w) = chw(input, "conv input")?;
        if p.in_channels() != c {
            return Err(Error::ShapeMismatch(format!(
                "conv expects {} input channels, got {c}",
                p.in_channels()
            )));
        }
        let (kh, kw) = p.kernel();
        let (Some(oh), Some(ow)) = (
            window_output(h, kh, p.stride, p.padding),
            window_output(w, kw, p.stride, p.padding),
        ) else {
            return Err(Error::InvalidGeometry(format!(
                "kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * p.padding,
                w + 2 * p.padding
            )));
        };
        Ok(Self {
            c,
            h,
            w,
            kh,
            kw,
            oh,
            ow,
            stride: p.stride,
            pad: p.padding,
        })
    }

    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Source index in the unpadded input, or `None` for a padding position.
    #[inline]
    fn source(&self, ch: usize, u: usize, v: usize, i: usize, j: usize) -> Option<usize> {
        let y = (i * self.stride + u).checked_sub(self.pad)?;
        let x = (j * self.stride + v).checked_sub(self.pad)?;
        (y < self.h && x < self.w).then(|| (ch * self.h + y) * self.w + x)
    }

    fn im2col<T: Scalar>(&self, input: &[T]) -> Vec<T> {
        let cols = self.cols();
        let mut out = vec![T::ZERO; self.rows() * cols];
        for ch in 0..self.c {
            for u in 0..self.kh {
                for v in 0..self.kw {
                    let row = (ch * self.kh + u) * self.kw + v;
                    let dst = &mut out[row * cols..(row + 1) * cols];
                    for i in 0..self.oh {
                        for j in 0..self.ow {
                            if let Some(src) = self.source(ch, u, v, i, j) {
                                dst[i * self.ow + j] = input[src];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn col2im<T: Scalar>(&self, cols_data: &[T]) -> Vec<T> {
        let cols = self.cols();
        let mut out = vec![T::ZERO; self.c * self.h * self.w];
        for ch in 0..self.c {
            for u in 0..self.kh {
                for v in 0..self.kw {
                    let row = (ch * self.kh + u) * self.kw + v;
                    let src = &cols_data[row * cols..(row + 1) * cols];
                    for i in 0..self.oh {
                        for j in 0..self.ow {
                            if let Some(dst) = self.source(ch, u, v, i, j) {
                                out[dst] += src[i * self.ow + j];
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// `out[o][i][j] = bias[o] + Σ w[o][c][u][v] · in_padded[c][i·s+u][j·s+v]`.
pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(input, p)?;
    let o = p.out_channels();
    let cols = g.im2col(input.data());
    let n = g.cols();
    let mut out = Vec::with_capacity(o * n);
    for &b in p.bias.data() {
        out.extend(std::iter::repeat(b).take(n));
    }
    gemm(o, g.rows(), n, p.weights.data(), &cols, &mut out);
    Tensor::from_vec(&[o, g.oh, g.ow], out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    p: &ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let g = ConvGeometry::new(input, p)?;
    let o = p.out_channels();
    if grad_out.shape() != [o, g.oh, g.ow] {
        return Err(Error::ShapeMismatch(format!(
            "conv grad_out {:?} does not match output [{o}, {}, {}]",
            grad_out.shape(),
            g.oh,
            g.ow
        )));
    }
    let n = g.cols();
    let k = g.rows();
    let go = grad_out.data();

    let bias: Vec<T> = go.chunks(n).map(|row| row.iter().copied().sum()).collect();

    let cols = g.im2col(input.data());
    let mut gw = vec![T::ZERO; o * k];
    gemm_bt(o, n, k, go, &cols, &mut gw);

    let mut gcols = vec![T::ZERO; k * n];
    gemm_at(k, o, n, p.weights.data(), go, &mut gcols);
    let gin = g.col2im(&gcols);

    Ok(ConvGrads {
        input: Tensor::from_vec(input.shape(), gin)?,
        weights: Tensor::from_vec(p.weights.shape(), gw)?,
        bias: Tensor::from_vec(&[o], bias)?,
    })
}

/// Max-pool output together with the input position each value came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolRecord<T: Scalar> {
    pub output: Tensor<T>,
    /// Flat index into the input tensor, one per output element.
    pub argmax: Vec<usize>,
}

/// Ties resolve to the lowest flat input index.
pub fn maxpool2d_forward<T: Scalar>(input: &Tensor<T>, k: usize, stride: usize) -> Result<PoolRecord<T>> {
    let (c, h, w) = chw(input, "max-pool input")?;
    if stride == 0 {
        return Err(Error::InvalidGeometry("pool stride must be at least 1".into()));
    }
    let (Some(oh), Some(ow)) = (window_output(h, k, stride, 0), window_output(w, k, stride, 0)) else {
        return Err(Error::InvalidGeometry(format!(
            "pool window {k} larger than input {h}x{w}"
        )));
    };
    let data = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let mut best = (ch * h + i * stride) * w + j * stride;
                for u in 0..k {
                    let row = (ch * h + i * stride + u) * w + j * stride;
                    for idx in row..row + k {
                        if data[idx] > data[best] {
                            best = idx;
                        }
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok(PoolRecord {
        output: Tensor::from_vec(&[c, oh, ow], out)?,
        argmax,
    })
}

pub fn maxpool2d_backward<T: Scalar>(
    record: &PoolRecord<T>,
    grad_out: &Tensor<T>,
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    if grad_out.shape() != record.output.shape() {
        return Err(Error::ShapeMismatch(format!(
            "pool grad_out {:?} does not match output {:?}",
            grad_out.shape(),
            record.output.shape()
        )));
    }
    let mut grad = Tensor::zeros(input_shape)?;
    let g = grad.data_mut();
    for (&src, &v) in record.argmax.iter().zip(grad_out.data()) {
        let slot = g.get_mut(src).ok_or_else(|| {
            Error::ShapeMismatch(format!("pool argmax {src} outside input {input_shape:?}"))
        })?;
        *slot += v;
    }
    Ok(grad)
}

fn check_elu_a<T: Scalar>(a: T) -> Result<()> {
    if !(a >= T::ZERO) || !a.is_finite() {
        return Err(Error::InvalidHyperparameter(format!(
            "ELU a must be finite and >= 0, got {a}"
        )));
    }
    Ok(())
}

/// `f(x) = x` for `x >= 0`, `a·(exp(x) − 1)` otherwise.
#[inline]
pub fn elu_scalar<T: Scalar>(x: T, a: T) -> T {
    if x >= T::ZERO {
        x
    } else {
        a * (x.exp() - T::ONE)
    }
}

#[inline]
pub fn elu_slope<T: Scalar>(x: T, a: T) -> T {
    if x >= T::ZERO {
        T::ONE
    } else {
        a * x.exp()
    }
}

pub fn elu<T: Scalar>(x: &Tensor<T>, a: T) -> Result<Tensor<T>> {
    check_elu_a(a)?;
    Ok(x.map(|v| elu_scalar(v, a)))
}

pub fn elu_backward<T: Scalar>(x: &Tensor<T>, a: T, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    check_elu_a(a)?;
    if x.shape() != grad_out.shape() {
        return Err(Error::ShapeMismatch(format!(
            "ELU grad_out {:?} does not match input {:?}",
            grad_out.shape(),
            x.shape()
        )));
    }
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| g * elu_slope(v, a))
        .collect();
    Tensor::from_vec(x.shape(), data)
}

fn fc_dims<T: Scalar>(x: &Tensor<T>, weights: &Tensor<T>) -> Result<(usize, usize)> {
    let (m, n) = match *weights.shape() {
        [m, n] => (m, n),
        ref s => return Err(Error::ShapeMismatch(format!("fc weights must be [m,n], got {s:?}"))),
    };
    if x.shape() != [n] {
        return Err(Error::ShapeMismatch(format!(
            "fc input {:?} does not match weights [{m}, {n}]",
            x.shape()
        )));
    }
    Ok((m, n))
}

/// `W·x + b`.
pub fn fc_forward<T: Scalar>(x: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = fc_dims(x, weights)?;
    if bias.shape() != [m] {
        return Err(Error::ShapeMismatch(format!(
            "fc bias {:?} does not match {m} units",
            bias.shape()
        )));
    }
    let xs = x.data();
    let out = weights
        .data()
        .chunks(n)
        .zip(bias.data())
        .map(|(row, &b)| b + row.iter().zip(xs).map(|(&w, &v)| w * v).sum::<T>())
        .collect();
    Tensor::from_vec(&[m], out)
}

#[derive(Debug, Clone)]
pub struct FcGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn fc_backward<T: Scalar>(x: &Tensor<T>, weights: &Tensor<T>, grad_out: &Tensor<T>) -> Result<FcGrads<T>> {
    let (m, n) = fc_dims(x, weights)?;
    if grad_out.shape() != [m] {
        return Err(Error::ShapeMismatch(format!(
            "fc grad_out {:?} does not match {m} units",
            grad_out.shape()
        )));
    }
    let go = grad_out.data();
    let mut gx = vec![T::ZERO; n];
    gemm_at(n, m, 1, weights.data(), go, &mut gx);
    let mut gw = vec![T::ZERO; m * n];
    gemm(m, 1, n, go, x.data(), &mut gw);
    Ok(FcGrads {
        input: Tensor::from_vec(&[n], gx)?,
        weights: Tensor::from_vec(&[m, n], gw)?,
        bias: grad_out.clone(),
    })
}

/// Numerically stabilised softmax over a slice.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits
        .iter()
        .copied()
        .fold(logits[0], |m, v| if v > m { v } else { m });
    let exps: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone)]
pub struct SoftmaxCe<T: Scalar> {
    pub loss: T,
    pub probs: Tensor<T>,
    pub grad_logits: Tensor<T>,
}

pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, label: usize) -> Result<SoftmaxCe<T>> {
    if logits.rank() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "logits must be rank 1, got {:?}",
            logits.shape()
        )));
    }
    let m = logits.len();
    if label >= m {
        return Err(Error::InvalidLabel { label, classes: m });
    }
    let data = logits.data();
    let max = data.iter().copied().fold(data[0], |a, v| if v > a { v } else { a });
    let shifted: Vec<T> = data.iter().map(|&v| v - max).collect();
    let total: T = shifted.iter().map(|&v| v.exp()).sum();
    let log_total = total.ln();
    // −ln p[label], evaluated in log space.
    let loss = log_total - shifted[label];
    let probs: Vec<T> = shifted.iter().map(|&v| (v - log_total).exp()).collect();
    let mut grad = probs.clone();
    grad[label] -= T::ONE;
    Ok(SoftmaxCe {
        loss,
        probs: Tensor::from_vec(&[m], probs)?,
        grad_logits: Tensor::from_vec(&[m], grad)?,
    })
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::ONE / (T::ONE + (-x).exp())
}

/// Sum-squared-error loss of a `[S,S,B·5+C]` grid head against ground truth.
///
/// All terms are computed on activated values: logistic on box offsets, sizes
/// and confidences, softmax on the class slots. For each truth the responsible
/// predictor is the not-yet-assigned box in the truth's cell with the highest
/// IoU (ties to the lower box index). Responsible boxes regress
/// `(x, y, w, h)` towards the truth and confidence towards 1; every other box
/// has confidence target 0. Cells holding a truth regress class probabilities
/// towards the one-hot class of the first truth in that cell.
pub fn detection_loss<T: Scalar>(
    pred_grid: &Tensor<T>,
    spec: GridSpec,
    truths: &[(usize, BBox)],
) -> Result<(T, Tensor<T>)> {
    let GridSpec { s, boxes, classes } = spec;
    let depth = spec.depth();
    if pred_grid.shape() != [s, s, depth] {
        return Err(Error::ShapeMismatch(format!(
            "detection grid {:?} does not match [{s}, {s}, {depth}]",
            pred_grid.shape()
        )));
    }
    for (class, b) in truths {
        if *class >= classes {
            return Err(Error::InvalidAnnotation(format!(
                "class {class} out of range for {classes} classes"
            )));
        }
        if !b.is_normalized() {
            return Err(Error::InvalidAnnotation(format!(
                "truth box {b:?} has coordinates outside [0,1]"
            )));
        }
    }

    let raw = pred_grid.data();
    let two = T::from_f64(2.0);
    let sf = s as f64;
    let cell_of = |v: f64| ((v * sf).floor() as usize).min(s - 1);

    // responsible[cell * boxes + b] = index of the truth assigned to that box
    let mut responsible: Vec<Option<usize>> = vec![None; s * s * boxes];
    let mut cell_class: Vec<Option<usize>> = vec![None; s * s];
    for (t_idx, (class, tb)) in truths.iter().enumerate() {
        let (i, j) = (cell_of(tb.cy), cell_of(tb.cx));
        let cell = i * s + j;
        cell_class[cell].get_or_insert(*class);
        let base = cell * depth;
        let mut best: Option<(usize, f64)> = None;
        for b in 0..boxes {
            if responsible[cell * boxes + b].is_some() {
                continue;
            }
            let o = base + b * 5;
            let pb = BBox {
                cx: (j as f64 + sigmoid(raw[o]).to_f64()) / sf,
                cy: (i as f64 + sigmoid(raw[o + 1]).to_f64()) / sf,
                w: sigmoid(raw[o + 2]).to_f64(),
                h: sigmoid(raw[o + 3]).to_f64(),
            };
            let v = iou(&pb, tb);
            if best.map_or(true, |(_, bv)| v > bv) {
                best = Some((b, v));
            }
        }
        if let Some((b, _)) = best {
            responsible[cell * boxes + b] = Some(t_idx);
        }
    }

    let mut loss = T::ZERO;
    let mut grad = vec![T::ZERO; raw.len()];
    // d/dz (σ(z) − t)² = 2(σ − t)·σ(1 − σ)
    let sq = |idx: usize, target: T, loss: &mut T, grad: &mut [T]| {
        let a = sigmoid(raw[idx]);
        let d = a - target;
        *loss += d * d;
        grad[idx] = two * d * a * (T::ONE - a);
    };
    for cell in 0..s * s {
        let (i, j) = (cell / s, cell % s);
        let base = cell * depth;
        for b in 0..boxes {
            let o = base + b * 5;
            match responsible[cell * boxes + b] {
                Some(t_idx) => {
                    let tb = truths[t_idx].1;
                    let tx = T::from_f64(tb.cx * sf - j as f64);
                    let ty = T::from_f64(tb.cy * sf - i as f64);
                    sq(o, tx, &mut loss, &mut grad);
                    sq(o + 1, ty, &mut loss, &mut grad);
                    sq(o + 2, T::from_f64(tb.w), &mut loss, &mut grad);
                    sq(o + 3, T::from_f64(tb.h), &mut loss, &mut grad);
                    sq(o + 4, T::ONE, &mut loss, &mut grad);
                }
                None => sq(o + 4, T::ZERO, &mut loss, &mut grad),
            }
        }
        if let Some(class) = cell_class[cell] {
            let co = base + boxes * 5;
            let probs = softmax(&raw[co..co + classes]);
            let diffs: Vec<T> = probs
                .iter()
                .enumerate()
                .map(|(k, &p)| if k == class { p - T::ONE } else { p })
                .collect();
            loss += diffs.iter().map(|&d| d * d).sum::<T>();
            // dL/dz_k = Σ_m 2·d_m·p_m·(δ_mk − p_k) = 2·p_k·(d_k − Σ_m d_m·p_m)
            let dot: T = diffs.iter().zip(&probs).map(|(&d, &p)| d * p).sum();
            for k in 0..classes {
                grad[co + k] = two * probs[k] * (diffs[k] - dot);
            }
        }
    }
    Ok((loss, Tensor::from_vec(pred_grid.shape(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, data).unwrap()
    }

    fn conv(w: Tensor<f64>, b: Vec<f64>, stride: usize, pad: usize) -> ConvParams<f64> {
        let o = w.shape()[0];
        ConvParams::new(w, t(&[o], b), stride, pad).unwrap()
    }

    #[test]
    fn conv_identity_kernel() {
        let p = conv(t(&[1, 1, 1, 1], vec![1.0]), vec![0.0], 1, 0);
        let x = Tensor::new(&[1, 3, 3], 1.0).unwrap();
        assert_eq!(conv2d_forward(&x, &p).unwrap(), x);
    }

    #[test]
    fn conv_sum_kernel() {
        let p = conv(Tensor::new(&[1, 1, 3, 3], 1.0).unwrap(), vec![0.0], 1, 0);
        let x = t(&[1, 3, 3], (1..=9).map(f64::from).collect());
        let y = conv2d_forward(&x, &p).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[45.0]);
    }

    #[test]
    fn conv_strided_shape() {
        let p = conv(Tensor::new(&[1, 1, 2, 2], 1.0).unwrap(), vec![0.0], 2, 0);
        let x = Tensor::new(&[1, 4, 4], 1.0).unwrap();
        assert_eq!(conv2d_forward(&x, &p).unwrap().shape(), &[1, 2, 2]);
    }

    #[test]
    fn conv_errors() {
        let p = conv(Tensor::new(&[1, 2, 3, 3], 1.0).unwrap(), vec![0.0], 1, 0);
        let x = Tensor::new(&[1, 3, 3], 1.0).unwrap();
        assert!(matches!(conv2d_forward(&x, &p), Err(Error::ShapeMismatch(_))));
        let p = conv(Tensor::new(&[1, 1, 5, 5], 1.0).unwrap(), vec![0.0], 1, 0);
        assert!(matches!(conv2d_forward(&x, &p), Err(Error::InvalidGeometry(_))));
        let p = conv(Tensor::new(&[1, 1, 5, 5], 1.0).unwrap(), vec![0.0], 1, 1);
        assert_eq!(conv2d_forward(&x, &p).unwrap().shape(), &[1, 1, 1]);
    }

    #[test]
    fn conv_backward_scalar() {
        let p = conv(t(&[1, 1, 1, 1], vec![3.0]), vec![0.5], 1, 0);
        let x = t(&[1, 1, 1], vec![2.0]);
        let g = conv2d_backward(&x, &p, &t(&[1, 1, 1], vec![4.0])).unwrap();
        assert_eq!(g.input.data(), &[12.0]);
        assert_eq!(g.weights.data(), &[8.0]);
        assert_eq!(g.bias.data(), &[4.0]);

        let z = conv2d_backward(&x, &p, &t(&[1, 1, 1], vec![0.0])).unwrap();
        assert!(z.input.data().iter().chain(z.weights.data()).chain(z.bias.data()).all(|&v| v == 0.0));

        assert!(matches!(
            conv2d_backward(&x, &p, &t(&[1, 2, 1], vec![0.0, 0.0])),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn pool_examples() {
        let x = t(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let r = maxpool2d_forward(&x, 2, 2).unwrap();
        assert_eq!(r.output.data(), &[4.0]);
        assert_eq!(r.argmax, vec![3]);
        let g = maxpool2d_backward(&r, &t(&[1, 1, 1], vec![5.0]), x.shape()).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 0.0, 5.0]);

        let x = t(&[1, 4, 4], (1..=16).map(f64::from).collect());
        let r = maxpool2d_forward(&x, 2, 2).unwrap();
        assert_eq!(r.output.data(), &[6.0, 8.0, 14.0, 16.0]);

        let c = Tensor::new(&[2, 4, 4], 3.0).unwrap();
        let r = maxpool2d_forward(&c, 2, 2).unwrap();
        assert!(r.output.data().iter().all(|&v| v == 3.0));
        // ties go to the lowest flat index, i.e. the window's top-left
        assert_eq!(r.argmax[..4], [0, 2, 8, 10]);
        let g = maxpool2d_backward(&r, &Tensor::zeros(r.output.shape()).unwrap(), c.shape()).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));

        assert!(matches!(maxpool2d_forward(&x, 5, 1), Err(Error::InvalidGeometry(_))));
    }

    #[test]
    fn pool_overlapping_windows_accumulate() {
        let x = t(&[1, 2, 3], vec![0.0, 9.0, 1.0, 0.0, 0.0, 0.0]);
        let r = maxpool2d_forward(&x, 2, 1).unwrap();
        assert_eq!(r.argmax, vec![1, 1]);
        let g = maxpool2d_backward(&r, &t(&[1, 1, 2], vec![1.0, 2.0]), x.shape()).unwrap();
        assert_eq!(g.data(), &[0.0, 3.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn elu_examples() {
        let x = t(&[3], vec![0.0, 2.5, -1.0]);
        let y = elu(&x, 1.0).unwrap();
        assert_eq!(y.data()[0], 0.0);
        assert_eq!(y.data()[1], 2.5);
        assert!((y.data()[2] - (-0.632_120_558_828_557_7)).abs() < 1e-12);
        assert_eq!(elu(&t(&[1], vec![2.5]), 7.0).unwrap().data(), &[2.5]);
        assert!(matches!(elu(&x, -0.1), Err(Error::InvalidHyperparameter(_))));

        let g = elu_backward(&t(&[3], vec![3.0, 0.0, -2.0]), 1.0, &Tensor::new(&[3], 1.0).unwrap()).unwrap();
        assert_eq!(g.data()[0], 1.0);
        assert_eq!(g.data()[1], 1.0);
        assert!((g.data()[2] - 0.135_335_283_236_612_7).abs() < 1e-12);
        assert!(elu_backward(&x, -1.0, &x).is_err());
    }

    #[test]
    fn elu_zero_a_is_relu() {
        for k in -50..=50 {
            let v = k as f64 / 7.0;
            assert_eq!(elu_scalar(v, 0.0), v.max(0.0));
        }
    }

    #[test]
    fn fc_examples() {
        let eye = t(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let x = t(&[2], vec![2.0, 3.0]);
        assert_eq!(fc_forward(&x, &eye, &t(&[2], vec![0.0, 0.0])).unwrap(), x);
        let y = fc_forward(&x, &t(&[1, 2], vec![1.0, 1.0]), &t(&[1], vec![1.0])).unwrap();
        assert_eq!(y.data(), &[6.0]);
        let bad = fc_forward(&t(&[3], vec![0.0; 3]), &Tensor::zeros(&[2, 4]).unwrap(), &t(&[2], vec![0.0; 2]));
        assert!(matches!(bad, Err(Error::ShapeMismatch(_))));

        let g = fc_backward(&t(&[1], vec![2.0]), &t(&[1, 1], vec![3.0]), &t(&[1], vec![1.0])).unwrap();
        assert_eq!(g.input.data(), &[3.0]);
        assert_eq!(g.weights.data(), &[2.0]);
        assert_eq!(g.bias.data(), &[1.0]);
        let z = fc_backward(&x, &eye, &t(&[2], vec![0.0, 0.0])).unwrap();
        assert!(z.input.data().iter().chain(z.weights.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_examples() {
        let r = softmax_cross_entropy(&Tensor::<f64>::new(&[4], 0.3).unwrap(), 1).unwrap();
        assert!(r.probs.data().iter().all(|&p| (p - 0.25).abs() < 1e-12));
        assert!((r.loss - 4f64.ln()).abs() < 1e-12);

        let r = softmax_cross_entropy(&t(&[2], vec![1000.0, 0.0]), 0).unwrap();
        assert!(r.loss.abs() < 1e-12 && r.loss.is_finite());
        assert!(r.probs.is_finite());
        let r = softmax_cross_entropy(&t(&[2], vec![1000.0, 0.0]), 1).unwrap();
        assert!((r.loss - 1000.0).abs() < 1e-9);

        let r = softmax_cross_entropy(&t(&[3], vec![1.0, 2.0, 3.0]), 2).unwrap();
        assert!((r.loss - 0.407_605_964_444_380_9).abs() < 1e-12);
        let sum: f64 = r.grad_logits.data().iter().sum();
        assert!(sum.abs() < 1e-12);

        assert!(matches!(
            softmax_cross_entropy(&t(&[3], vec![0.0; 3]), 3),
            Err(Error::InvalidLabel { label: 3, classes: 3 })
        ));
    }

    fn spec() -> GridSpec {
        GridSpec { s: 2, boxes: 1, classes: 2 }
    }

    #[test]
    fn detection_loss_empty_truths_saturated_confidence() {
        let grid = Tensor::new(&[2, 2, 7], -1000.0).unwrap();
        let (loss, grad) = detection_loss(&grid, spec(), &[]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn detection_loss_perfect_fit() {
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let truth = BBox { cx: 0.75, cy: 0.25, w: 0.3, h: 0.4 };
        let mut grid = Tensor::new(&[2, 2, 7], -1000.0).unwrap();
        // truth lands in cell (row 0, col 1) at offset (0.5, 0.5)
        let o = 7;
        let d = grid.data_mut();
        d[o] = logit(0.5);
        d[o + 1] = logit(0.5);
        d[o + 2] = logit(0.3);
        d[o + 3] = logit(0.4);
        d[o + 4] = 1000.0;
        d[o + 5] = -1000.0;
        d[o + 6] = 1000.0;
        let (loss, _) = detection_loss(&grid, spec(), &[(1, truth)]).unwrap();
        assert!(loss < 1e-20, "loss {loss}");
    }

    #[test]
    fn detection_loss_rejects_bad_truth() {
        let grid = Tensor::<f64>::zeros(&[2, 2, 7]).unwrap();
        let bad = BBox { cx: 1.5, cy: 0.5, w: 0.1, h: 0.1 };
        assert!(matches!(
            detection_loss(&grid, spec(), &[(0, bad)]),
            Err(Error::InvalidAnnotation(_))
        ));
        let ok = BBox { cx: 0.5, cy: 0.5, w: 0.1, h: 0.1 };
        assert!(matches!(
            detection_loss(&grid, spec(), &[(2, ok)]),
            Err(Error::InvalidAnnotation(_))
        ));
        assert!(matches!(
            detection_loss(&Tensor::<f64>::zeros(&[2, 2, 8]).unwrap(), spec(), &[]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn detection_loss_picks_best_iou_box() {
        let spec = GridSpec { s: 1, boxes: 2, classes: 1 };
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let truth = BBox { cx: 0.5, cy: 0.5, w: 0.6, h: 0.6 };
        let mut grid = Tensor::new(&[1, 1, 11], 0.0).unwrap();
        let d = grid.data_mut();
        // box 0 is small, box 1 matches the truth exactly
        d[..4].copy_from_slice(&[0.0, 0.0, logit(0.1), logit(0.1)]);
        d[5..9].copy_from_slice(&[0.0, 0.0, logit(0.6), logit(0.6)]);
        let (_, grad) = detection_loss(&grid, spec, &[(0, truth)]).unwrap();
        // box 1 is responsible: its confidence is pulled up (negative gradient)
        assert!(grad.data()[9] < 0.0);
        assert!(grad.data()[4] > 0.0);
        assert_eq!(grad.data()[2], 0.0);
    }
}
