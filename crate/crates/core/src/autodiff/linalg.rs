//! Dense kernels shared by the tape ops: GEMM and the im2col/col2im pair used
//! by the convolution layers.

/// `c = beta * c + op(a) * op(b)` with `op(a)` of shape `m x k` and `op(b)` of
/// shape `k x n`, all row-major. `trans_a`/`trans_b` read the stored matrices
/// transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above address exactly the m*k, k*n and m*n prefixes
    // whose lengths were asserted.
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

/// Geometry of a 2-D convolution from an `in_h x in_w` plane to `out_h x out_w`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    /// Forward-convolution geometry; `None` when the kernel does not fit.
    pub fn forward(
        channels: usize,
        in_h: usize,
        in_w: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Option<Self> {
        let ph = in_h + 2 * padding.0;
        let pw = in_w + 2 * padding.1;
        if ph < kernel.0 || pw < kernel.1 || stride.0 == 0 || stride.1 == 0 {
            return None;
        }
        Some(Self {
            channels,
            in_h,
            in_w,
            kernel,
            stride,
            padding,
            out_h: (ph - kernel.0) / stride.0 + 1,
            out_w: (pw - kernel.1) / stride.1 + 1,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel.0 * self.kernel.1
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Visits every (col row, col column, image offset) triple that lands
    /// inside the unpadded image.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = (self.padding.0 as isize, self.padding.1 as isize);
        let cols = self.col_cols();
        for c in 0..self.channels {
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = (c * kh + ki) * kw + kj;
                    for oy in 0..self.out_h {
                        let iy = (oy * sh + ki) as isize - ph;
                        if iy < 0 || iy >= self.in_h as isize {
                            continue;
                        }
                        let img_row = (c * self.in_h + iy as usize) * self.in_w;
                        for ox in 0..self.out_w {
                            let ix = (ox * sw + kj) as isize - pw;
                            if ix < 0 || ix >= self.in_w as isize {
                                continue;
                            }
                            f(row * cols + oy * self.out_w + ox, img_row + ix as usize);
                        }
                    }
                }
            }
        }
    }

    /// Unfolds one `channels x in_h x in_w` image into `cols`
    /// (`col_rows x col_cols`). Padded taps are zero.
    pub fn im2col(&self, image: &[f64], cols: &mut [f64]) {
        cols.iter_mut().for_each(|v| *v = 0.0);
        self.for_each_tap(|ci, ii| cols[ci] = image[ii]);
    }

    /// Adjoint of [`im2col`](Self::im2col): accumulates `cols` into `image`.
    pub fn col2im(&self, cols: &[f64], image: &mut [f64]) {
        self.for_each_tap(|ci, ii| image[ii] += cols[ci]);
    }
}
