//! Value-level implementations of every tape primitive.

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn dims2<F: Scalar>(op: &'static str, t: &Tensor<F>) -> Result<(usize, usize)> {
    match t.shape() {
        &[r, c] => Ok((r, c)),
        s => Err(Error::shape(op, &[s])),
    }
}

fn same_shape<F: Scalar>(op: &'static str, a: &Tensor<F>, b: &Tensor<F>) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::shape(op, &[a.shape(), b.shape()]))
    }
}

fn zip_with<F: Scalar>(
    op: &'static str,
    a: &Tensor<F>,
    b: &Tensor<F>,
    f: impl Fn(F, F) -> F,
) -> Result<Tensor<F>> {
    same_shape(op, a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Ok(Tensor::from_parts(a.shape().to_vec(), data))
}

/// `op(a) @ op(b)` where `op` transposes when the flag is set.
pub fn matmul<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>, ta: bool, tb: bool) -> Result<Tensor<F>> {
    let (ar, ac) = dims2("matmul", a)?;
    let (br, bc) = dims2("matmul", b)?;
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if tb { (bc, br) } else { (br, bc) };
    if k != k2 {
        return Err(Error::shape("matmul", &[a.shape(), b.shape()]));
    }
    let (rsa, csa) = if ta { (1, ac as isize) } else { (ac as isize, 1) };
    let (rsb, csb) = if tb { (1, bc as isize) } else { (bc as isize, 1) };
    let mut out = vec![F::zero(); m * n];
    // SAFETY: strides above describe the stored row-major buffers exactly and
    // `out` is a fresh allocation of m*n elements.
    unsafe {
        F::gemm(
            m,
            k,
            n,
            F::one(),
            a.data().as_ptr(),
            rsa,
            csa,
            b.data().as_ptr(),
            rsb,
            csb,
            F::zero(),
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

pub fn add<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    zip_with("add", a, b, |x, y| x + y)
}

pub fn sub<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    zip_with("sub", a, b, |x, y| x - y)
}

pub fn mul<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    zip_with("mul", a, b, |x, y| x * y)
}

pub fn div<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    zip_with("div", a, b, |x, y| x / y)
}

/// `a + 1 b` for an `m x n` matrix and a `1 x n` row.
pub fn add_bias<F: Scalar>(a: &Tensor<F>, bias: &Tensor<F>) -> Result<Tensor<F>> {
    let (m, n) = dims2("add_bias", a)?;
    if bias.shape() != [1, n] {
        return Err(Error::shape("add_bias", &[a.shape(), bias.shape()]));
    }
    let b = bias.data();
    let mut out = a.data().to_vec();
    for row in out.chunks_exact_mut(n) {
        for (o, &bv) in row.iter_mut().zip(b) {
            *o += bv;
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

pub fn sigmoid<F: Scalar>(a: &Tensor<F>) -> Tensor<F> {
    a.map(|x| {
        if x >= F::zero() {
            F::one() / (F::one() + (-x).exp())
        } else {
            let e = x.exp();
            e / (F::one() + e)
        }
    })
}

pub fn tanh<F: Scalar>(a: &Tensor<F>) -> Tensor<F> {
    a.map(|x| x.tanh())
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<F: Scalar>(a: &Tensor<F>) -> Result<Tensor<F>> {
    let (m, n) = dims2("softmax_rows", a)?;
    let mut out = a.data().to_vec();
    for row in out.chunks_exact_mut(n) {
        let mx = row.iter().fold(F::neg_infinity(), |m, &x| m.max(x));
        let mut s = F::zero();
        for x in row.iter_mut() {
            *x = (*x - mx).exp();
            s += *x;
        }
        for x in row.iter_mut() {
            *x /= s;
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

pub fn sum_all<F: Scalar>(a: &Tensor<F>) -> Tensor<F> {
    Tensor::scalar(a.data().iter().copied().sum())
}

pub fn mean<F: Scalar>(a: &Tensor<F>) -> Tensor<F> {
    let n = F::from_usize(a.numel()).unwrap();
    Tensor::scalar(a.data().iter().copied().sum::<F>() / n)
}

/// Broadcast a one-element tensor to `shape`.
pub fn expand<F: Scalar>(a: &Tensor<F>, shape: &[usize]) -> Result<Tensor<F>> {
    if !a.is_scalar() || shape.is_empty() || shape.contains(&0) {
        return Err(Error::shape("expand", &[a.shape(), shape]));
    }
    Ok(Tensor::filled(shape, a.item()))
}

/// Column sums: `m x n -> 1 x n`.
pub fn sum_rows<F: Scalar>(a: &Tensor<F>) -> Result<Tensor<F>> {
    let (_, n) = dims2("sum_rows", a)?;
    let mut out = vec![F::zero(); n];
    for row in a.data().chunks_exact(n) {
        for (o, &x) in out.iter_mut().zip(row) {
            *o += x;
        }
    }
    Ok(Tensor::from_parts(vec![1, n], out))
}

/// Repeat a `1 x n` row `m` times.
pub fn bcast_rows<F: Scalar>(a: &Tensor<F>, m: usize) -> Result<Tensor<F>> {
    let (r, n) = dims2("bcast_rows", a)?;
    if r != 1 || m == 0 {
        return Err(Error::shape("bcast_rows", &[a.shape(), &[m, n]]));
    }
    let mut out = Vec::with_capacity(m * n);
    for _ in 0..m {
        out.extend_from_slice(a.data());
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// Row sums: `m x n -> m x 1`.
pub fn sum_cols<F: Scalar>(a: &Tensor<F>) -> Result<Tensor<F>> {
    let (m, n) = dims2("sum_cols", a)?;
    let out = a.data().chunks_exact(n).map(|r| r.iter().copied().sum()).collect();
    Ok(Tensor::from_parts(vec![m, 1], out))
}

/// Repeat an `m x 1` column `n` times.
pub fn bcast_cols<F: Scalar>(a: &Tensor<F>, n: usize) -> Result<Tensor<F>> {
    let (m, c) = dims2("bcast_cols", a)?;
    if c != 1 || n == 0 {
        return Err(Error::shape("bcast_cols", &[a.shape(), &[m, n]]));
    }
    let mut out = Vec::with_capacity(m * n);
    for &x in a.data() {
        out.extend(std::iter::repeat_n(x, n));
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

pub fn square<F: Scalar>(a: &Tensor<F>) -> Tensor<F> {
    a.map(|x| x * x)
}

pub fn sqrt<F: Scalar>(a: &Tensor<F>) -> Tensor<F> {
    a.map(|x| x.sqrt())
}

pub fn scale<F: Scalar>(a: &Tensor<F>, c: F) -> Tensor<F> {
    a.map(|x| c * x)
}

pub fn add_scalar<F: Scalar>(a: &Tensor<F>, c: F) -> Tensor<F> {
    a.map(|x| x + c)
}

pub fn l2_norm<F: Scalar>(a: &Tensor<F>) -> Tensor<F> {
    Tensor::scalar(a.data().iter().map(|&x| x * x).sum::<F>().sqrt())
}

pub fn concat_cols<F: Scalar>(parts: &[&Tensor<F>]) -> Result<Tensor<F>> {
    let Some(first) = parts.first() else {
        return Err(Error::shape("concat_cols", &[]));
    };
    let m = first.rows();
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        let (r, c) = dims2("concat_cols", p)?;
        if r != m {
            let shapes: Vec<&[usize]> = parts.iter().map(|p| p.shape()).collect();
            return Err(Error::shape("concat_cols", &shapes));
        }
        widths.push(c);
    }
    let n: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(m * n);
    for r in 0..m {
        for (p, &w) in parts.iter().zip(&widths) {
            out.extend_from_slice(&p.data()[r * w..(r + 1) * w]);
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// Columns `start..end` of a matrix.
pub fn slice_cols<F: Scalar>(a: &Tensor<F>, start: usize, end: usize) -> Result<Tensor<F>> {
    let (m, n) = dims2("slice_cols", a)?;
    if start >= end || end > n {
        return Err(Error::shape("slice_cols", &[a.shape(), &[start, end]]));
    }
    let w = end - start;
    let mut out = Vec::with_capacity(m * w);
    for row in a.data().chunks_exact(n) {
        out.extend_from_slice(&row[start..end]);
    }
    Ok(Tensor::from_parts(vec![m, w], out))
}

// Fused vector-Jacobian products used by the value-level backward pass.

pub fn sigmoid_bwd<F: Scalar>(g: &Tensor<F>, y: &Tensor<F>) -> Result<Tensor<F>> {
    zip_with("sigmoid_bwd", g, y, |g, y| g * y * (F::one() - y))
}

pub fn tanh_bwd<F: Scalar>(g: &Tensor<F>, y: &Tensor<F>) -> Result<Tensor<F>> {
    zip_with("tanh_bwd", g, y, |g, y| g * (F::one() - y * y))
}

pub fn softmax_bwd<F: Scalar>(g: &Tensor<F>, y: &Tensor<F>) -> Result<Tensor<F>> {
    same_shape("softmax_bwd", g, y)?;
    let (m, n) = dims2("softmax_bwd", y)?;
    let mut out = vec![F::zero(); m * n];
    for ((o, gr), yr) in out.chunks_exact_mut(n).zip(g.data().chunks_exact(n)).zip(y.data().chunks_exact(n)) {
        let dot: F = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
        for ((o, &gv), &yv) in o.iter_mut().zip(gr).zip(yr) {
            *o = yv * (gv - dot);
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}
