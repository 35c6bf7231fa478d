//! Thin safe wrapper over `matrixmultiply::dgemm` for row-major operands.

/// Operand view: `data` holds an `rows x cols` matrix, optionally read
/// transposed.
#[derive(Clone, Copy)]
pub(crate) struct Op<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub trans: bool,
}

impl<'a> Op<'a> {
    pub fn n(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Op {
            data,
            rows,
            cols,
            trans: false,
        }
    }

    pub fn t(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Op {
            data,
            rows,
            cols,
            trans: true,
        }
    }

    fn shape(&self) -> (usize, usize) {
        if self.trans {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.trans {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `c = beta * c + op(a) * op(b)` with `c` row-major `m x n`.
pub(crate) fn gemm(a: Op<'_>, b: Op<'_>, c: &mut [f64], beta: f64) {
    let (m, k) = a.shape();
    let (k2, n) = b.shape();
    assert_eq!(k, k2, "inner dimensions");
    assert_eq!(a.data.len(), a.rows * a.cols);
    assert_eq!(b.data.len(), b.rows * b.cols);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: the asserts above pin every operand length to the extents
    // implied by (m, k, n) and the strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
