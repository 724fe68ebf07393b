//! Raw numeric kernels behind the graph ops. Everything here works on flat
//! row-major slices; shape checking happens in the graph layer.

use alloc::vec;
use alloc::vec::Vec;

/// Strided matrix view: element `(i, j)` lives at `i * rs + j * cs`.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub rs: usize,
    pub cs: usize,
}

impl<'a> View<'a> {
    pub fn rows(data: &'a [f64], cols: usize) -> Self {
        View { data, rs: cols, cs: 1 }
    }

    /// Transposed view of a row-major `rows x cols` buffer.
    pub fn trans(data: &'a [f64], cols: usize) -> Self {
        View { data, rs: 1, cs: cols }
    }
}

/// `c = a * b + beta * c` for `a: m x k`, `b: k x n`, row-major `c: m x n`.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: View<'_>, b: View<'_>, beta: f64, c: &mut [f64]) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let last = |v: &View<'_>, r: usize, cc: usize| (r - 1) * v.rs + (cc - 1) * v.cs;
    assert!(last(&a, m, k) < a.data.len(), "gemm: lhs view out of bounds");
    assert!(last(&b, k, n) < b.data.len(), "gemm: rhs view out of bounds");
    // SAFETY: the asserts above keep every strided access of both operands
    // inside their slices and `c` holds at least m * n elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a 2-D convolution over a `cin x h x w` input.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub pad: usize,
    pub stride: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    pub fn out_len(&self) -> usize {
        self.ho * self.wo
    }
}

/// Unfolds the input into a `(cin*k*k) x (ho*wo)` matrix with zero padding.
pub(crate) fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let hw = g.out_len();
    let mut cols = vec![0.0; g.patch() * hw];
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[oy * g.wo + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
pub(crate) fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let hw = g.out_len();
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            plane[iy as usize * g.w + ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Index of the maximum over `idx`, first occurrence on ties.
#[inline]
pub(crate) fn argmax_over(x: &[f64], idx: impl Iterator<Item = usize>) -> usize {
    let mut best = usize::MAX;
    let mut best_v = f64::NEG_INFINITY;
    for i in idx {
        if best == usize::MAX || x[i] > best_v {
            best = i;
            best_v = x[i];
        }
    }
    best
}

/// Sliding-window max pool over a `c x h x w` input; returns source indices.
pub(crate) fn maxpool_sources(
    x: &[f64],
    (c, h, w): (usize, usize, usize),
    (wh, ww): (usize, usize),
    (sh, sw): (usize, usize),
) -> (usize, usize, Vec<usize>) {
    let ho = (h - wh) / sh + 1;
    let wo = (w - ww) / sw + 1;
    let mut src = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let (y0, x0) = (oy * sh, ox * sw);
                let it = (y0..y0 + wh).flat_map(|y| (x0..x0 + ww).map(move |xx| base + y * w + xx));
                src.push(argmax_over(x, it));
            }
        }
    }
    (ho, wo, src)
}

/// Half-open extent `[floor(i*n/m), ceil((i+1)*n/m))` of cell `i` out of `m`
/// cells partitioning an axis of length `n`.
#[inline]
pub fn cell_bounds(i: usize, n: usize, m: usize) -> (usize, usize) {
    (i * n / m, ((i + 1) * n).div_ceil(m))
}

/// Grid max pool with exactly `mh x mw` cells per channel; returns source
/// indices in channel-major, then row-major cell order.
pub(crate) fn grid_pool_sources(x: &[f64], (c, h, w): (usize, usize, usize), mh: usize, mw: usize) -> Vec<usize> {
    let mut src = Vec::with_capacity(c * mh * mw);
    for ch in 0..c {
        let base = ch * h * w;
        for cy in 0..mh {
            let (y0, y1) = cell_bounds(cy, h, mh);
            for cx in 0..mw {
                let (x0, x1) = cell_bounds(cx, w, mw);
                let it = (y0..y1).flat_map(|y| (x0..x1).map(move |xx| base + y * w + xx));
                src.push(argmax_over(x, it));
            }
        }
    }
    src
}

/// `out[i][j] = sum_{k,l} p[i][k] * u[k][l] * g[j][l]`.
///
/// Terms are combined as `(p*g)*u` and summed with the diagonal first and each
/// off-diagonal pair `(k,l),(l,k)` added together, so swapping the roles of
/// `p` and `g` while transposing `u` yields the transposed result bit for bit.
pub(crate) fn bilinear_symmetric(p: &[f64], u: &[f64], g: &[f64], tp: usize, tg: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; tp * tg];
    for i in 0..tp {
        let pi = &p[i * n..(i + 1) * n];
        for j in 0..tg {
            let gj = &g[j * n..(j + 1) * n];
            let mut acc = 0.0;
            for k in 0..n {
                acc += (pi[k] * gj[k]) * u[k * n + k];
                for l in k + 1..n {
                    let a = (pi[k] * gj[l]) * u[k * n + l];
                    let b = (pi[l] * gj[k]) * u[l * n + k];
                    acc += a + b;
                }
            }
            out[i * tg + j] = acc;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_partition_the_axis() {
        for n in 1..40 {
            for m in 1..=n {
                let mut covered = vec![false; n];
                let mut prev_start = 0;
                for i in 0..m {
                    let (a, b) = cell_bounds(i, n, m);
                    assert!(a < b && b <= n);
                    assert!(a >= prev_start);
                    prev_start = a;
                    covered[a..b].iter_mut().for_each(|c| *c = true);
                }
                assert!(covered.iter().all(|&c| c));
            }
        }
    }

    #[test]
    fn gemm_transposed_views() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, View::rows(&a, 2), View::trans(&b, 2), 0.0, &mut c);
        // a * b^T
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }
}
