//! Floating-point element type for the model: `f32` for training and
//! inference, `f64` for gradient checking.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, NumAssign};

pub trait Scalar: Float + NumAssign + Sum + Default + Debug + Send + Sync + 'static {
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c ← alpha·a·b + beta·c` over strided row/column layouts.
    ///
    /// # Safety
    /// Every strided index must lie inside its slice; callers go through
    /// [`gemm`], which checks this.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
    fn of(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// A strided read-only matrix view.
#[derive(Clone, Copy)]
pub struct Mat<'a, F> {
    pub data: &'a [F],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, F> Mat<'a, F> {
    /// Dense row-major `rows × cols`.
    pub fn new(data: &'a [F], rows: usize, cols: usize) -> Self {
        Mat { data, rows, cols, rs: cols, cs: 1 }
    }

    /// Columns `[c0, c0+cols)` of a row-major matrix with row stride `stride`.
    pub fn cols_of(data: &'a [F], rows: usize, stride: usize, c0: usize, cols: usize) -> Self {
        Mat { data: &data[c0..], rows, cols, rs: stride, cs: 1 }
    }

    pub fn t(self) -> Self {
        Mat {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn max_index(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs
        }
    }
}

/// A strided mutable matrix view.
pub struct MatMut<'a, F> {
    pub data: &'a mut [F],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, F> MatMut<'a, F> {
    pub fn new(data: &'a mut [F], rows: usize, cols: usize) -> Self {
        MatMut { data, rows, cols, rs: cols, cs: 1 }
    }

    pub fn cols_of(data: &'a mut [F], rows: usize, stride: usize, c0: usize, cols: usize) -> Self {
        MatMut { data: &mut data[c0..], rows, cols, rs: stride, cs: 1 }
    }
}

/// `c ← alpha·a·b + beta·c`.
pub fn gemm<F: Scalar>(alpha: F, a: Mat<F>, b: Mat<F>, beta: F, c: MatMut<F>) {
    assert_eq!(a.cols, b.rows, "inner dimensions");
    assert_eq!((a.rows, b.cols), (c.rows, c.cols), "output dimensions");
    if c.rows == 0 || c.cols == 0 {
        return;
    }
    if a.cols == 0 {
        for i in 0..c.rows {
            for j in 0..c.cols {
                let v = &mut c.data[i * c.rs + j * c.cs];
                *v = beta * *v;
            }
        }
        return;
    }
    assert!(a.max_index() < a.data.len(), "lhs view out of bounds");
    assert!(b.max_index() < b.data.len(), "rhs view out of bounds");
    let cmax = (c.rows - 1) * c.rs + (c.cols - 1) * c.cs;
    assert!(cmax < c.data.len(), "output view out of bounds");
    // SAFETY: all three views were bounds-checked above.
    unsafe {
        F::gemm_raw(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr(),
            c.rs as isize,
            c.cs as isize,
        );
    }
}
