//! Raw compute kernels: im2col/col2im, GEMM wrappers, resampling tables.

/// Budget for one im2col buffer, in `f32` elements (~32 MiB).
const COL_BUDGET: usize = 8 << 20;

/// Geometry of a stride-1, same-padded square convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl ConvGeom {
    #[inline]
    pub fn pad(&self) -> usize {
        self.dilation * (self.kernel - 1) / 2
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    #[inline]
    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    /// Number of batch items processed per GEMM.
    pub fn chunk(&self, batch: usize) -> usize {
        let per_item = self.rows() * self.plane();
        (COL_BUDGET / per_item.max(1)).clamp(1, batch.max(1))
    }
}

/// Valid destination range `[lo, hi)` along an axis of length `len` for a
/// source offset `off` (`src = dst + off`).
#[inline]
fn valid_range(len: usize, off: isize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (len as isize - off).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

/// Unfold one `[c, h, w]` image into columns `[c*k*k, ld]` starting at column
/// `offset`.
pub(crate) fn im2col(src: &[f32], g: &ConvGeom, col: &mut [f32], ld: usize, offset: usize) {
    let (h, w, k) = (g.height, g.width, g.kernel);
    let pad = g.pad() as isize;
    for ci in 0..g.channels {
        let plane = &src[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            let oy = (ky * g.dilation) as isize - pad;
            let (ylo, yhi) = valid_range(h, oy);
            for kx in 0..k {
                let ox = (kx * g.dilation) as isize - pad;
                let (xlo, xhi) = valid_range(w, ox);
                let r = (ci * k + ky) * k + kx;
                let dst = &mut col[r * ld + offset..r * ld + offset + h * w];
                for y in 0..h {
                    let row = &mut dst[y * w..(y + 1) * w];
                    if y < ylo || y >= yhi || xlo >= xhi {
                        row.fill(0.0);
                        continue;
                    }
                    let sy = (y as isize + oy) as usize;
                    row[..xlo].fill(0.0);
                    row[xhi..].fill(0.0);
                    let s0 = (sy * w) as isize + xlo as isize + ox;
                    let s0 = s0 as usize;
                    row[xlo..xhi].copy_from_slice(&plane[s0..s0 + (xhi - xlo)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate columns back into `[c, h, w]`.
pub(crate) fn col2im(col: &[f32], g: &ConvGeom, ld: usize, offset: usize, dst: &mut [f32]) {
    let (h, w, k) = (g.height, g.width, g.kernel);
    let pad = g.pad() as isize;
    for ci in 0..g.channels {
        let plane = &mut dst[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            let oy = (ky * g.dilation) as isize - pad;
            let (ylo, yhi) = valid_range(h, oy);
            for kx in 0..k {
                let ox = (kx * g.dilation) as isize - pad;
                let (xlo, xhi) = valid_range(w, ox);
                if xlo >= xhi {
                    continue;
                }
                let r = (ci * k + ky) * k + kx;
                let src = &col[r * ld + offset..r * ld + offset + h * w];
                for y in ylo..yhi {
                    let sy = (y as isize + oy) as usize;
                    let s0 = ((sy * w) as isize + xlo as isize + ox) as usize;
                    let out = &mut plane[s0..s0 + (xhi - xlo)];
                    for (o, v) in out.iter_mut().zip(&src[y * w + xlo..y * w + xhi]) {
                        *o += *v;
                    }
                }
            }
        }
    }
}

/// `c = alpha * a * b + beta * c` for row-major `a: [m, k]`, `b: [k, n]`
/// given explicit strides.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(a.len() >= (m - 1) * rsa + (k.max(1) - 1) * csa + 1 || k == 0);
    debug_assert!(b.len() >= (k.max(1) - 1) * rsb + (n - 1) * csb + 1 || k == 0);
    debug_assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the asserted bounds above cover every index touched by the kernel.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Per-output-index source taps for half-pixel bilinear resampling:
/// `(i0, i1, w1)` with `value = (1 - w1) * src[i0] + w1 * src[i1]`.
pub fn bilinear_taps(src_len: usize, dst_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = src_len as f64 / dst_len as f64;
    (0..dst_len)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(src_len - 1);
            let i1 = (i0 + 1).min(src_len - 1);
            let w1 = if i1 == i0 { 0.0 } else { s - i0 as f64 };
            (i0, i1, w1)
        })
        .collect()
}
