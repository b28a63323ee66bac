//! Dilated "same" 2D convolution via im2col and GEMM.
//!
//! Column rows are ordered `(in_channel, ky, kx)`, so every output sums its
//! taps channel-major. Output rows are split into fixed chunks for the worker
//! pool, which keeps the result independent of the thread count.

use crate::error::{shape_err, Result};
use crate::numerics::par::{self, ROW_CHUNK};
use crate::numerics::{Scalar, Tensor};

/// Geometry of one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub fn from_shapes(input: &[usize], weight: &[usize], dilation: usize) -> Result<Self> {
        let (&[c, h, w], &[o, ci, kh, kw]) = (input, weight) else {
            return Err(shape_err(
                "conv2d",
                format!("expected input [C,H,W] and weight [O,C,kh,kw], got {input:?} and {weight:?}"),
            ));
        };
        if c != ci {
            return Err(shape_err(
                "conv2d",
                format!("input has {c} channels but weight expects {ci}"),
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(shape_err("conv2d", format!("kernel {kh}x{kw} is not odd")));
        }
        if dilation == 0 {
            return Err(shape_err("conv2d", "dilation must be at least 1"));
        }
        Ok(Self {
            in_ch: c,
            out_ch: o,
            height: h,
            width: w,
            kh,
            kw,
            dilation,
        })
    }

    fn taps(&self) -> usize {
        self.kh * self.kw
    }

    fn patch_len(&self) -> usize {
        self.in_ch * self.taps()
    }

    fn plane(&self) -> usize {
        self.height * self.width
    }

    /// Signed offset of tap `k` in a kernel of extent `kext`.
    fn offset(&self, k: usize, kext: usize) -> isize {
        (k as isize - (kext / 2) as isize) * self.dilation as isize
    }

    /// Valid destination range `[lo, hi)` along an axis of length `n` for a
    /// source offset `off` (source index = dest + off).
    fn valid(n: usize, off: isize) -> (usize, usize) {
        let lo = (-off).clamp(0, n as isize) as usize;
        let hi = (n as isize - off).clamp(0, n as isize) as usize;
        (lo, hi.max(lo))
    }
}

pub(crate) fn im2col<T: Scalar>(g: &ConvGeom, input: &[T]) -> Vec<T> {
    let plane = g.plane();
    let mut cols = vec![T::zero(); g.patch_len() * plane];
    par::for_each_chunk_mut(&mut cols, g.taps() * plane, |c, block| {
        let src = &input[c * plane..(c + 1) * plane];
        for ky in 0..g.kh {
            let oy = g.offset(ky, g.kh);
            let (y_lo, y_hi) = ConvGeom::valid(g.height, oy);
            for kx in 0..g.kw {
                let ox = g.offset(kx, g.kw);
                let (x_lo, x_hi) = ConvGeom::valid(g.width, ox);
                let row = &mut block[(ky * g.kw + kx) * plane..][..plane];
                if x_lo >= x_hi {
                    continue;
                }
                for y in y_lo..y_hi {
                    let sy = (y as isize + oy) as usize;
                    let sx0 = (x_lo as isize + ox) as usize;
                    row[y * g.width + x_lo..y * g.width + x_hi]
                        .copy_from_slice(&src[sy * g.width + sx0..][..x_hi - x_lo]);
                }
            }
        }
    });
    cols
}

/// Adjoint of [`im2col`]: scatter-add column gradients back onto the input.
pub(crate) fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T]) -> Vec<T> {
    let plane = g.plane();
    let mut out = vec![T::zero(); g.in_ch * plane];
    par::for_each_chunk_mut(&mut out, plane, |c, dst| {
        let block = &cols[c * g.taps() * plane..(c + 1) * g.taps() * plane];
        for ky in 0..g.kh {
            let oy = g.offset(ky, g.kh);
            let (y_lo, y_hi) = ConvGeom::valid(g.height, oy);
            for kx in 0..g.kw {
                let ox = g.offset(kx, g.kw);
                let (x_lo, x_hi) = ConvGeom::valid(g.width, ox);
                if x_lo >= x_hi {
                    continue;
                }
                let row = &block[(ky * g.kw + kx) * plane..][..plane];
                for y in y_lo..y_hi {
                    let sy = (y as isize + oy) as usize;
                    let sx0 = (x_lo as isize + ox) as usize;
                    let d = &mut dst[sy * g.width + sx0..][..x_hi - x_lo];
                    for (a, &b) in d.iter_mut().zip(&row[y * g.width + x_lo..y * g.width + x_hi]) {
                        *a = *a + b;
                    }
                }
            }
        }
    });
    out
}

/// `c[m x n] = a * b + beta * c`, with `c` row-major and contiguous; the rows
/// of `c` are distributed over the worker pool in fixed chunks.
#[allow(clippy::too_many_arguments)]
pub(crate) fn chunked_gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_strides: (usize, usize),
    b: &[T],
    b_strides: (usize, usize),
    beta: T,
    c: &mut [T],
) {
    debug_assert_eq!(c.len(), m * n);
    par::for_each_chunk_mut(c, ROW_CHUNK * n, |i, c_rows| {
        let r0 = i * ROW_CHUNK;
        let rows = c_rows.len() / n;
        T::gemm(
            rows,
            k,
            n,
            T::one(),
            &a[r0 * a_strides.0..],
            a_strides,
            b,
            b_strides,
            beta,
            c_rows,
            (n, 1),
        );
    });
}

pub(crate) fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    dilation: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeom::from_shapes(input.shape(), weight.shape(), dilation)?;
    if let Some(b) = bias {
        if b.shape() != [g.out_ch] {
            return Err(shape_err(
                "conv2d",
                format!("bias shape {:?}, expected [{}]", b.shape(), g.out_ch),
            ));
        }
    }
    let plane = g.plane();
    let mut out = vec![T::zero(); g.out_ch * plane];
    if let Some(b) = bias {
        for (row, &bv) in out.chunks_mut(plane).zip(b.data()) {
            row.fill(bv);
        }
    }
    let cols = im2col(&g, input.data());
    let k = g.patch_len();
    chunked_gemm(
        g.out_ch,
        k,
        plane,
        weight.data(),
        (k, 1),
        &cols,
        (plane, 1),
        T::one(),
        &mut out,
    );
    Tensor::new([g.out_ch, g.height, g.width], out)
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub(crate) fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    dilation: usize,
    grad_out: &Tensor<T>,
    need: (bool, bool, bool),
) -> Result<ConvGrads<T>> {
    let g = ConvGeom::from_shapes(input.shape(), weight.shape(), dilation)?;
    let plane = g.plane();
    let k = g.patch_len();
    let go = grad_out.data();

    let bias = need.2.then(|| {
        let sums = go.chunks(plane).map(|row| row.iter().copied().sum()).collect();
        Tensor::new([g.out_ch], sums).expect("bias grad shape")
    });

    let weight_grad = if need.1 {
        let cols = im2col(&g, input.data());
        let mut gw = vec![T::zero(); g.out_ch * k];
        // gW[o, j] = sum_p gout[o, p] * cols[j, p]
        chunked_gemm(g.out_ch, plane, k, go, (plane, 1), &cols, (1, plane), T::zero(), &mut gw);
        Some(Tensor::new(weight.shape().to_vec(), gw)?)
    } else {
        None
    };

    let input_grad = if need.0 {
        let mut gcols = vec![T::zero(); k * plane];
        // gcols[j, p] = sum_o W[o, j] * gout[o, p]
        chunked_gemm(k, g.out_ch, plane, weight.data(), (1, k), go, (plane, 1), T::zero(), &mut gcols);
        Some(Tensor::new(input.shape().to_vec(), col2im(&g, &gcols))?)
    } else {
        None
    };

    Ok(ConvGrads {
        input: input_grad,
        weight: weight_grad,
        bias,
    })
}
