//! Same-padded 2-D cross-correlation and its adjoints.
//!
//! Everything is lowered to `im2col` followed by a GEMM. The backward helpers
//! are what the pipeline's hand-written reverse pass is built from.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Geometry of one convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub h: usize,
    pub w: usize,
}

impl ConvGeometry {
    pub fn hw(&self) -> usize {
        self.h * self.w
    }

    /// Rows of the im2col matrix.
    pub fn patch(&self) -> usize {
        self.c_in * self.k * self.k
    }
}

/// `C = A·B (+ C if accumulate)`, with optional transposes, all row-major.
///
/// `a` is `m×k` (or `k×m` when `ta`), `b` is `k×n` (or `n×k` when `tb`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slice lengths were checked above against the strides used.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfold zero-padded `k×k` patches: output is `(c_in·k·k) × (h·w)`.
pub(crate) fn im2col(input: &[f64], g: &ConvGeometry, cols: &mut Vec<f64>) {
    let (h, w, k) = (g.h, g.w, g.k);
    let pad = (k / 2) as isize;
    cols.clear();
    cols.resize(g.patch() * g.hw(), 0.0);
    for c in 0..g.c_in {
        let plane = &input[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * h * w..(row + 1) * h * w];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let dst_row = &mut dst[y * w..(y + 1) * w];
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                    for x in x0..x1 {
                        dst_row[x] = src_row[(x as isize + dx) as usize];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back onto the input grid.
pub(crate) fn col2im(cols: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let (h, w, k) = (g.h, g.w, g.k);
    let pad = (k / 2) as isize;
    let mut out = vec![0.0; g.c_in * h * w];
    for c in 0..g.c_in {
        let plane = &mut out[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * h * w..(row + 1) * h * w];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                    for x in x0..x1 {
                        plane[sy as usize * w + (x as isize + dx) as usize] += src[y * w + x];
                    }
                }
            }
        }
    }
    out
}

/// Forward pass on raw slices. `cols` is left holding the unfolded input.
pub(crate) fn conv_forward_raw(
    input: &[f64],
    weights: &[f64],
    bias: Option<&[f64]>,
    g: &ConvGeometry,
    cols: &mut Vec<f64>,
) -> Vec<f64> {
    let hw = g.hw();
    let mut out = vec![0.0; g.c_out * hw];
    if let Some(b) = bias {
        for (co, chunk) in out.chunks_mut(hw).enumerate() {
            chunk.fill(b[co]);
        }
    }
    if g.k == 1 {
        gemm(
            g.c_out,
            g.c_in,
            hw,
            weights,
            false,
            input,
            false,
            &mut out,
            bias.is_some(),
        );
    } else {
        im2col(input, g, cols);
        gemm(
            g.c_out,
            g.patch(),
            hw,
            weights,
            false,
            cols,
            false,
            &mut out,
            bias.is_some(),
        );
    }
    out
}

/// Gradient of the input given the output gradient (transposed convolution).
pub(crate) fn conv_backward_input(grad_out: &[f64], weights: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let hw = g.hw();
    if g.k == 1 {
        let mut gin = vec![0.0; g.c_in * hw];
        gemm(g.c_in, g.c_out, hw, weights, true, grad_out, false, &mut gin, false);
        return gin;
    }
    let mut dcols = vec![0.0; g.patch() * hw];
    gemm(
        g.patch(),
        g.c_out,
        hw,
        weights,
        true,
        grad_out,
        false,
        &mut dcols,
        false,
    );
    col2im(&dcols, g)
}

/// Accumulate weight and bias gradients. `cols` is the unfolded forward input
/// (for `k == 1` the raw input itself).
pub(crate) fn conv_backward_params(
    cols: &[f64],
    grad_out: &[f64],
    g: &ConvGeometry,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) {
    let hw = g.hw();
    gemm(g.c_out, hw, g.patch(), grad_out, false, cols, true, grad_w, true);
    for (co, chunk) in grad_out.chunks(hw).enumerate() {
        grad_b[co] += chunk.iter().sum::<f64>();
    }
}

/// Same-padded cross-correlation of `input [C_in,H,W]` with
/// `kernels [C_out,C_in,k,k]`, plus a per-output-channel bias.
pub fn conv2d(input: &Tensor, kernels: &Tensor, bias: &[f64]) -> Result<Tensor> {
    let (c_in, h, w) = input.dims3()?;
    let &[c_out, kc_in, k, k2] = kernels.shape() else {
        return Err(Error::InvalidShape(kernels.shape().to_vec(), "kernels must be rank 4"));
    };
    if kc_in != c_in {
        return Err(Error::ShapeMismatch {
            expected: vec![c_out, c_in, k, k2],
            actual: kernels.shape().to_vec(),
        });
    }
    if k != k2 || k % 2 == 0 {
        return Err(Error::InvalidShape(
            kernels.shape().to_vec(),
            "kernel must be square with odd size",
        ));
    }
    if bias.len() != c_out {
        return Err(Error::ShapeMismatch {
            expected: vec![c_out],
            actual: vec![bias.len()],
        });
    }
    let g = ConvGeometry { c_in, c_out, k, h, w };
    let mut cols = Vec::new();
    let out = conv_forward_raw(input.data(), kernels.data(), Some(bias), &g, &mut cols);
    Tensor::new(vec![c_out, h, w], out)
}
