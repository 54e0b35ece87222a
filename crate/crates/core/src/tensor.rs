//! Dense row-major tensors and the numeric primitives the rest of the crate
//! is built on: matrix products, 2-D cross-correlation, average pooling and
//! pointwise arithmetic.
//!
//! Production code runs on `f32`. Every type is generic over [`Real`] so that
//! gradient checks can evaluate the exact same code paths in `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};
use rayon::prelude::*;

use crate::error::{Error, Result};

pub trait Real:
    Float
    + FromPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    /// Converts an `f64` literal, rounding to the target precision.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F = f32> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        if shape.contains(&0) && !data.is_empty() {
            return Err(Error::shape("tensor", format!("zero extent in {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "tensor",
                format!(
                    "shape {shape:?} holds {expected} values but {} were given",
                    data.len()
                ),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, F::zero())
    }

    pub fn full(shape: &[usize], value: F) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> F) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn scalar(value: F) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    /// Size of one item along the leading (batch) axis.
    pub fn item_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Collapses every axis after the first: `[B, ...] -> [B, prod(...)]`.
    pub fn flatten_batch(self) -> Self {
        let b = self.shape[0];
        let rest = self.item_len();
        Self {
            shape: vec![b, rest],
            data: self.data,
        }
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale_in_place(&mut self, factor: F) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    /// `self += other`, shapes must agree exactly.
    pub fn add_assign(&mut self, other: &Tensor<F>) -> Result<()> {
        self.expect_same_shape("add_assign", other)?;
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, &b)| *a += b);
        Ok(())
    }

    pub fn sum(&self) -> F {
        self.data.iter().copied().sum()
    }

    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|x| x.as_f64()).sum()
    }

    pub fn max_abs(&self) -> F {
        self.data
            .iter()
            .fold(F::zero(), |m, &x| if x.abs() > m { x.abs() } else { m })
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&x| x == F::zero() || x == F::one())
    }

    pub fn check_finite(&self, op: &'static str) -> Result<()> {
        if self.data.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { op })
        }
    }

    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| G::lit(x.as_f64())).collect(),
        }
    }

    fn expect_same_shape(&self, op: &'static str, other: &Tensor<F>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                op,
                format!("left is {:?}, right is {:?}", self.shape, other.shape),
            ));
        }
        Ok(())
    }

    fn expect_rank(&self, op: &'static str, rank: usize, name: &str) -> Result<()> {
        if self.rank() != rank {
            return Err(Error::shape(
                op,
                format!("{name} must have rank {rank}, got shape {:?}", self.shape),
            ));
        }
        Ok(())
    }
}

/// Concatenates `[B, F_k]` tensors along the feature axis in slice order.
pub fn concat_features<F: Real>(parts: &[Tensor<F>]) -> Result<Tensor<F>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
    let batch = first.dim(0);
    let mut widths = Vec::with_capacity(parts.len());
    for (k, p) in parts.iter().enumerate() {
        p.expect_rank("concat_features", 2, &format!("part {k}"))?;
        if p.dim(0) != batch {
            return Err(Error::shape(
                "concat_features",
                format!("part {k} has batch {} but part 0 has {batch}", p.dim(0)),
            ));
        }
        widths.push(p.dim(1));
    }
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(batch * total);
    for b in 0..batch {
        for (p, &w) in parts.iter().zip(&widths) {
            data.extend_from_slice(&p.data[b * w..(b + 1) * w]);
        }
    }
    Tensor::new(vec![batch, total], data)
}

/// Inverse of [`concat_features`]: slices `[B, sum(widths)]` at the given boundaries.
pub fn split_features<F: Real>(whole: &Tensor<F>, widths: &[usize]) -> Result<Vec<Tensor<F>>> {
    whole.expect_rank("split_features", 2, "input")?;
    let total: usize = widths.iter().sum();
    if total != whole.dim(1) {
        return Err(Error::shape(
            "split_features",
            format!(
                "widths sum to {total} but input has {} features",
                whole.dim(1)
            ),
        ));
    }
    let batch = whole.dim(0);
    let mut out: Vec<Vec<F>> = widths
        .iter()
        .map(|&w| Vec::with_capacity(batch * w))
        .collect();
    for b in 0..batch {
        let row = &whole.data[b * total..(b + 1) * total];
        let mut offset = 0;
        for (dst, &w) in out.iter_mut().zip(widths) {
            dst.extend_from_slice(&row[offset..offset + w]);
            offset += w;
        }
    }
    out.into_iter()
        .zip(widths)
        .map(|(d, &w)| Tensor::new(vec![batch, w], d))
        .collect()
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

/// `out[m, n] += a[m, k] * b[k, n]`. Zero entries of `a` are skipped, which
/// matters for binary spike operands.
fn gemm_nn<F: Real>(m: usize, k: usize, n: usize, a: &[F], b: &[F], out: &mut [F]) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m, n] += a[k, m]^T * b[k, n]`, skipping zero entries of `a`.
fn gemm_tn<F: Real>(k: usize, m: usize, n: usize, a: &[F], b: &[F], out: &mut [F]) {
    for p in 0..k {
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &av) in a[p * m..(p + 1) * m].iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m, n] += a[m, k] * b[n, k]^T`.
fn gemm_nt<F: Real>(m: usize, k: usize, n: usize, a: &[F], b: &[F], out: &mut [F]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = F::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            out[i * n + j] += acc;
        }
    }
}

pub fn matmul<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    a.expect_rank("matmul", 2, "left operand")?;
    b.expect_rank("matmul", 2, "right operand")?;
    let (m, k) = (a.dim(0), a.dim(1));
    let (k2, n) = (b.dim(0), b.dim(1));
    if k != k2 {
        return Err(Error::shape(
            "matmul",
            format!("inner dimensions differ: {:?} x {:?}", a.shape, b.shape),
        ));
    }
    let mut out = vec![F::zero(); m * n];
    gemm_nn(m, k, n, &a.data, &b.data, &mut out);
    let t = Tensor::new(vec![m, n], out)?;
    t.check_finite("matmul")?;
    Ok(t)
}

/// `a^T * b` for `a: [K, M]`, `b: [K, N]`.
pub fn matmul_tn<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    a.expect_rank("matmul_tn", 2, "left operand")?;
    b.expect_rank("matmul_tn", 2, "right operand")?;
    let (k, m) = (a.dim(0), a.dim(1));
    let (k2, n) = (b.dim(0), b.dim(1));
    if k != k2 {
        return Err(Error::shape(
            "matmul_tn",
            format!("leading dimensions differ: {:?} vs {:?}", a.shape, b.shape),
        ));
    }
    let mut out = vec![F::zero(); m * n];
    gemm_tn(k, m, n, &a.data, &b.data, &mut out);
    let t = Tensor::new(vec![m, n], out)?;
    t.check_finite("matmul_tn")?;
    Ok(t)
}

/// `a * b^T` for `a: [M, K]`, `b: [N, K]`.
pub fn matmul_nt<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    a.expect_rank("matmul_nt", 2, "left operand")?;
    b.expect_rank("matmul_nt", 2, "right operand")?;
    let (m, k) = (a.dim(0), a.dim(1));
    let (n, k2) = (b.dim(0), b.dim(1));
    if k != k2 {
        return Err(Error::shape(
            "matmul_nt",
            format!("trailing dimensions differ: {:?} vs {:?}", a.shape, b.shape),
        ));
    }
    let mut out = vec![F::zero(); m * n];
    gemm_nt(m, k, n, &a.data, &b.data, &mut out);
    let t = Tensor::new(vec![m, n], out)?;
    t.check_finite("matmul_nt")?;
    Ok(t)
}

pub fn transpose2d<F: Real>(a: &Tensor<F>) -> Result<Tensor<F>> {
    a.expect_rank("transpose2d", 2, "input")?;
    let (m, n) = (a.dim(0), a.dim(1));
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data[i * n + j];
        }
    }
    Tensor::new(vec![n, m], out)
}

// ---------------------------------------------------------------------------
// Pointwise arithmetic
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Div,
    /// `1.0` where `a > b`, else `0.0`.
    Greater,
    /// `1.0` where `a >= b`, else `0.0`.
    GreaterEqual,
    Less,
    Equal,
}

#[derive(Clone, Copy, Debug)]
pub enum Operand<'a, F> {
    Tensor(&'a Tensor<F>),
    Scalar(F),
}

impl<'a, F: Real> From<&'a Tensor<F>> for Operand<'a, F> {
    fn from(t: &'a Tensor<F>) -> Self {
        Operand::Tensor(t)
    }
}

fn indicator<F: Real>(cond: bool) -> F {
    if cond {
        F::one()
    } else {
        F::zero()
    }
}

pub fn elementwise<'a, F: Real>(
    op: ElementwiseOp,
    a: &Tensor<F>,
    b: impl Into<Operand<'a, F>>,
) -> Result<Tensor<F>> {
    let apply = |x: F, y: F| -> Result<F> {
        Ok(match op {
            ElementwiseOp::Add => x + y,
            ElementwiseOp::Sub => x - y,
            ElementwiseOp::Mul => x * y,
            ElementwiseOp::Div => {
                if y == F::zero() {
                    return Err(Error::DivisionByZero { op: "elementwise" });
                }
                x / y
            }
            ElementwiseOp::Greater => indicator(x > y),
            ElementwiseOp::GreaterEqual => indicator(x >= y),
            ElementwiseOp::Less => indicator(x < y),
            ElementwiseOp::Equal => indicator(x == y),
        })
    };
    let data = match b.into() {
        Operand::Scalar(s) => a
            .data
            .iter()
            .map(|&x| apply(x, s))
            .collect::<Result<Vec<F>>>()?,
        Operand::Tensor(t) => {
            a.expect_same_shape("elementwise", t)?;
            a.data
                .iter()
                .zip(&t.data)
                .map(|(&x, &y)| apply(x, y))
                .collect::<Result<Vec<F>>>()?
        }
    };
    let out = Tensor::new(a.shape.clone(), data)?;
    out.check_finite("elementwise")?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

/// Geometry of a square-kernel 2-D cross-correlation over a (possibly
/// rectangular) feature map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub padding: usize,
    pub stride: usize,
}

/// `floor((n - k + 2p) / s) + 1`, or `None` when the kernel does not fit.
pub fn conv_output_extent(n: usize, k: usize, padding: usize, stride: usize) -> Option<usize> {
    if stride == 0 || k == 0 || k > n + 2 * padding {
        return None;
    }
    Some((n + 2 * padding - k) / stride + 1)
}

impl ConvGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::invalid("conv stride must be at least 1"));
        }
        if self.out_h_checked().is_none() {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "kernel {} does not fit height {} with padding {}",
                    self.kernel, self.in_h, self.padding
                ),
            ));
        }
        if self.out_w_checked().is_none() {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "kernel {} does not fit width {} with padding {}",
                    self.kernel, self.in_w, self.padding
                ),
            ));
        }
        Ok(())
    }

    fn out_h_checked(&self) -> Option<usize> {
        conv_output_extent(self.in_h, self.kernel, self.padding, self.stride)
    }

    fn out_w_checked(&self) -> Option<usize> {
        conv_output_extent(self.in_w, self.kernel, self.padding, self.stride)
    }

    pub fn out_h(&self) -> usize {
        self.out_h_checked().expect("validated geometry")
    }

    pub fn out_w(&self) -> usize {
        self.out_w_checked().expect("validated geometry")
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }

    /// Unfolds one `[I, H, W]` sample into `[positions, I*k*k]` patch rows.
    fn im2col<F: Real>(&self, x: &[F]) -> Vec<F> {
        let (oh, ow, k) = (self.out_h(), self.out_w(), self.kernel);
        let plen = self.patch_len();
        let mut cols = vec![F::zero(); oh * ow * plen];
        for oy in 0..oh {
            for ox in 0..ow {
                let row = &mut cols[(oy * ow + ox) * plen..(oy * ow + ox + 1) * plen];
                for c in 0..self.in_channels {
                    for ky in 0..k {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= self.in_h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix < 0 || ix >= self.in_w as isize {
                                continue;
                            }
                            row[(c * k + ky) * k + kx] =
                                x[(c * self.in_h + iy as usize) * self.in_w + ix as usize];
                        }
                    }
                }
            }
        }
        cols
    }

    /// Scatter-adds patch-row gradients back onto a `[I, H, W]` sample.
    fn col2im<F: Real>(&self, cols: &[F], dx: &mut [F]) {
        let (oh, ow, k) = (self.out_h(), self.out_w(), self.kernel);
        let plen = self.patch_len();
        for oy in 0..oh {
            for ox in 0..ow {
                let row = &cols[(oy * ow + ox) * plen..(oy * ow + ox + 1) * plen];
                for c in 0..self.in_channels {
                    for ky in 0..k {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= self.in_h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix < 0 || ix >= self.in_w as isize {
                                continue;
                            }
                            dx[(c * self.in_h + iy as usize) * self.in_w + ix as usize] +=
                                row[(c * k + ky) * k + kx];
                        }
                    }
                }
            }
        }
    }
}

fn conv_geometry_of<F: Real>(
    input: &Tensor<F>,
    kernel: &Tensor<F>,
    padding: usize,
    stride: usize,
) -> Result<ConvGeometry> {
    input.expect_rank("conv2d", 4, "input")?;
    kernel.expect_rank("conv2d", 4, "kernel")?;
    let (i, h, w) = (input.dim(1), input.dim(2), input.dim(3));
    let (o, ki, kh, kw) = (kernel.dim(0), kernel.dim(1), kernel.dim(2), kernel.dim(3));
    if ki != i {
        return Err(Error::shape(
            "conv2d",
            format!("input channels: input has {i}, kernel expects {ki}"),
        ));
    }
    if kh != kw {
        return Err(Error::shape(
            "conv2d",
            format!("kernel width: only square kernels are supported, got {kh}x{kw}"),
        ));
    }
    let geom = ConvGeometry {
        in_channels: i,
        out_channels: o,
        in_h: h,
        in_w: w,
        kernel: kh,
        padding,
        stride,
    };
    geom.validate()?;
    Ok(geom)
}

/// Kernel `[O, I, k, k]` viewed as `[I*k*k, O]`.
fn kernel_columns<F: Real>(kernel: &Tensor<F>, geom: &ConvGeometry) -> Vec<F> {
    let (o, plen) = (geom.out_channels, geom.patch_len());
    let mut wt = vec![F::zero(); plen * o];
    for oc in 0..o {
        for p in 0..plen {
            wt[p * o + oc] = kernel.data[oc * plen + p];
        }
    }
    wt
}

/// Cross-correlation of `input: [B, I, H, W]` with `kernel: [O, I, k, k]`.
/// Output extents follow `floor((N - k + 2p) / s) + 1` on each axis.
pub fn conv2d<F: Real>(
    input: &Tensor<F>,
    kernel: &Tensor<F>,
    padding: usize,
    stride: usize,
) -> Result<Tensor<F>> {
    let geom = conv_geometry_of(input, kernel, padding, stride)?;
    let batch = input.dim(0);
    let (o, plen, npos) = (geom.out_channels, geom.patch_len(), geom.positions());
    let in_item = input.item_len();
    let wt = kernel_columns(kernel, &geom);
    let mut out = vec![F::zero(); batch * o * npos];
    out.par_chunks_mut(o * npos)
        .zip(input.data.par_chunks(in_item))
        .for_each(|(dst, x)| {
            let cols = geom.im2col(x);
            let mut pos_major = vec![F::zero(); npos * o];
            gemm_nn(npos, plen, o, &cols, &wt, &mut pos_major);
            for pos in 0..npos {
                for oc in 0..o {
                    dst[oc * npos + pos] = pos_major[pos * o + oc];
                }
            }
        });
    let t = Tensor::new(vec![batch, o, geom.out_h(), geom.out_w()], out)?;
    t.check_finite("conv2d")?;
    Ok(t)
}

/// Gradients of [`conv2d`] with respect to its kernel and (optionally) its input.
pub fn conv2d_backward<F: Real>(
    input: &Tensor<F>,
    kernel: &Tensor<F>,
    grad_out: &Tensor<F>,
    padding: usize,
    stride: usize,
    need_input_grad: bool,
) -> Result<(Option<Tensor<F>>, Tensor<F>)> {
    let geom = conv_geometry_of(input, kernel, padding, stride)?;
    let batch = input.dim(0);
    let expected = [batch, geom.out_channels, geom.out_h(), geom.out_w()];
    if grad_out.shape != expected {
        return Err(Error::shape(
            "conv2d_backward",
            format!("grad_out is {:?}, expected {expected:?}", grad_out.shape),
        ));
    }
    let (o, plen, npos) = (geom.out_channels, geom.patch_len(), geom.positions());
    let in_item = input.item_len();

    let per_sample: Vec<(Vec<F>, Option<Vec<F>>)> = input
        .data
        .par_chunks(in_item)
        .zip(grad_out.data.par_chunks(o * npos))
        .map(|(x, g)| {
            let cols = geom.im2col(x);
            let mut g_pos = vec![F::zero(); npos * o];
            for oc in 0..o {
                for pos in 0..npos {
                    g_pos[pos * o + oc] = g[oc * npos + pos];
                }
            }
            let mut dwt = vec![F::zero(); plen * o];
            gemm_tn(npos, plen, o, &cols, &g_pos, &mut dwt);
            let dx = need_input_grad.then(|| {
                let mut dcols = vec![F::zero(); npos * plen];
                gemm_nn(npos, o, plen, &g_pos, &kernel.data, &mut dcols);
                let mut dx = vec![F::zero(); in_item];
                geom.col2im(&dcols, &mut dx);
                dx
            });
            (dwt, dx)
        })
        .collect();

    let mut dwt = vec![F::zero(); plen * o];
    let mut dx_all = need_input_grad.then(|| Vec::with_capacity(input.len()));
    for (dw_b, dx_b) in per_sample {
        dwt.iter_mut().zip(&dw_b).for_each(|(a, &b)| *a += b);
        if let (Some(all), Some(dx)) = (dx_all.as_mut(), dx_b) {
            all.extend_from_slice(&dx);
        }
    }
    let mut dk = vec![F::zero(); o * plen];
    for oc in 0..o {
        for p in 0..plen {
            dk[oc * plen + p] = dwt[p * o + oc];
        }
    }
    let grad_kernel = Tensor::new(kernel.shape.clone(), dk)?;
    grad_kernel.check_finite("conv2d_backward")?;
    let grad_input = match dx_all {
        Some(d) => {
            let t = Tensor::new(input.shape.clone(), d)?;
            t.check_finite("conv2d_backward")?;
            Some(t)
        }
        None => None,
    };
    Ok((grad_input, grad_kernel))
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

pub fn avg_pool2d<F: Real>(input: &Tensor<F>, kernel: usize, stride: usize) -> Result<Tensor<F>> {
    input.expect_rank("avg_pool2d", 4, "input")?;
    let (b, c, h, w) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
    let oh = conv_output_extent(h, kernel, 0, stride)
        .ok_or_else(|| Error::shape("avg_pool2d", format!("window {kernel} exceeds height {h}")))?;
    let ow = conv_output_extent(w, kernel, 0, stride)
        .ok_or_else(|| Error::shape("avg_pool2d", format!("window {kernel} exceeds width {w}")))?;
    let norm = F::one() / F::lit((kernel * kernel) as f64);
    let mut out = vec![F::zero(); b * c * oh * ow];
    for plane in 0..b * c {
        let src = &input.data[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = F::zero();
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        acc += src[(oy * stride + ky) * w + ox * stride + kx];
                    }
                }
                dst[oy * ow + ox] = acc * norm;
            }
        }
    }
    Tensor::new(vec![b, c, oh, ow], out)
}

pub fn avg_pool2d_backward<F: Real>(
    input_shape: &[usize],
    grad_out: &Tensor<F>,
    kernel: usize,
    stride: usize,
) -> Result<Tensor<F>> {
    let (b, c, h, w) = (
        input_shape[0],
        input_shape[1],
        input_shape[2],
        input_shape[3],
    );
    let (oh, ow) = (grad_out.dim(2), grad_out.dim(3));
    if grad_out.shape[..2] != input_shape[..2] {
        return Err(Error::shape(
            "avg_pool2d_backward",
            format!("grad_out {:?} vs input {input_shape:?}", grad_out.shape),
        ));
    }
    let norm = F::one() / F::lit((kernel * kernel) as f64);
    let mut dx = vec![F::zero(); b * c * h * w];
    for plane in 0..b * c {
        let g = &grad_out.data[plane * oh * ow..(plane + 1) * oh * ow];
        let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let share = g[oy * ow + ox] * norm;
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        dst[(oy * stride + ky) * w + ox * stride + kx] += share;
                    }
                }
            }
        }
    }
    Tensor::new(input_shape.to_vec(), dx)
}
