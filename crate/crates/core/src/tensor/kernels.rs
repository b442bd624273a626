//! Patch-gather lowering and the matrix product every convolution uses.

use super::Scalar;

/// Strided read-only view of an `rows x cols` matrix.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, S> {
    pub data: &'a [S],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, S> MatRef<'a, S> {
    /// Row-major contiguous matrix.
    pub fn new(data: &'a [S], rows: usize, cols: usize) -> Self {
        MatRef {
            data,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        MatRef {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn in_bounds(&self) -> bool {
        if self.rows == 0 || self.cols == 0 {
            return true;
        }
        (self.rows - 1) * self.rs + (self.cols - 1) * self.cs < self.data.len()
    }
}

/// `out = a * b + (accumulate ? out : 0)`, with `out` row-major.
pub(crate) fn gemm<S: Scalar>(a: MatRef<'_, S>, b: MatRef<'_, S>, out: &mut [S], accumulate: bool) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    assert!(a.in_bounds() && b.in_bounds(), "gemm operand out of bounds");
    assert!(out.len() >= a.rows * b.cols, "gemm output too small");
    if a.rows == 0 || b.cols == 0 {
        return;
    }
    if a.cols == 0 {
        if !accumulate {
            out[..a.rows * b.cols].iter_mut().for_each(|v| *v = S::zero());
        }
        return;
    }
    let beta = if accumulate { S::one() } else { S::zero() };
    // SAFETY: every operand was bounds-checked against its stated extent above.
    unsafe {
        S::gemm_raw(
            a.rows,
            a.cols,
            b.cols,
            S::one(),
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            out.as_mut_ptr(),
            b.cols as isize,
            1,
        );
    }
}

/// Geometry of one convolution window sweep over a single batch item.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Window {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Window {
    pub fn rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    pub fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Input column touched by output column `ox` at kernel offset `kx`, if
    /// it falls inside the unpadded image.
    #[inline]
    fn src(&self, o: usize, kk: usize, extent: usize) -> Option<usize> {
        let p = o * self.stride + kk;
        if p < self.pad {
            return None;
        }
        let p = p - self.pad;
        (p < extent).then_some(p)
    }

    /// Range of output columns whose source column lies inside the image for
    /// kernel offset `kx`.
    fn valid_x(&self, kx: usize) -> (usize, usize) {
        let mut lo = 0;
        while lo < self.out_w && self.src(lo, kx, self.w).is_none() {
            lo += 1;
        }
        let mut hi = lo;
        while hi < self.out_w && self.src(hi, kx, self.w).is_some() {
            hi += 1;
        }
        (lo, hi)
    }
}

/// Gathers every receptive field of `img` (`channels x h x w`) into the
/// columns of `col` (`channels*k*k x out_h*out_w`). Padding reads as zero.
pub(crate) fn im2col<S: Scalar>(img: &[S], win: &Window, col: &mut [S]) {
    let plane = win.h * win.w;
    let ncols = win.cols();
    debug_assert!(img.len() >= win.channels * plane);
    debug_assert!(col.len() >= win.rows() * ncols);
    let mut row = 0;
    for c in 0..win.channels {
        let src_plane = &img[c * plane..(c + 1) * plane];
        for ky in 0..win.k {
            for kx in 0..win.k {
                let dst = &mut col[row * ncols..(row + 1) * ncols];
                let (lo, hi) = win.valid_x(kx);
                for oy in 0..win.out_h {
                    let drow = &mut dst[oy * win.out_w..(oy + 1) * win.out_w];
                    match win.src(oy, ky, win.h) {
                        None => drow.iter_mut().for_each(|v| *v = S::zero()),
                        Some(iy) => {
                            let srow = &src_plane[iy * win.w..(iy + 1) * win.w];
                            drow[..lo].iter_mut().for_each(|v| *v = S::zero());
                            drow[hi..].iter_mut().for_each(|v| *v = S::zero());
                            if lo < hi {
                                let ix0 = lo * win.stride + kx - win.pad;
                                if win.stride == 1 {
                                    drow[lo..hi].copy_from_slice(&srow[ix0..ix0 + (hi - lo)]);
                                } else {
                                    for (j, d) in drow[lo..hi].iter_mut().enumerate() {
                                        *d = srow[ix0 + j * win.stride];
                                    }
                                }
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds the columns back into `img`.
pub(crate) fn col2im_add<S: Scalar>(col: &[S], win: &Window, img: &mut [S]) {
    let plane = win.h * win.w;
    let ncols = win.cols();
    let mut row = 0;
    for c in 0..win.channels {
        let dst_plane = &mut img[c * plane..(c + 1) * plane];
        for ky in 0..win.k {
            for kx in 0..win.k {
                let src = &col[row * ncols..(row + 1) * ncols];
                let (lo, hi) = win.valid_x(kx);
                if lo < hi {
                    let ix0 = lo * win.stride + kx - win.pad;
                    for oy in 0..win.out_h {
                        if let Some(iy) = win.src(oy, ky, win.h) {
                            let srow = &src[oy * win.out_w + lo..oy * win.out_w + hi];
                            let drow = &mut dst_plane[iy * win.w..(iy + 1) * win.w];
                            if win.stride == 1 {
                                for (d, s) in drow[ix0..ix0 + (hi - lo)].iter_mut().zip(srow) {
                                    *d = *d + *s;
                                }
                            } else {
                                for (j, s) in srow.iter().enumerate() {
                                    let d = &mut drow[ix0 + j * win.stride];
                                    *d = *d + *s;
                                }
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
}
