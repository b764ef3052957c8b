//! Row-major dense matrices over f32 or f64, with products routed through
//! a tuned gemm. Transposed operands are expressed through strides, so the
//! backward passes never materialize a transposed copy.

use std::fmt;
use std::ops::{Index, IndexMut};

/// Floating-point element type. f32 carries training and inference; f64
/// carries gradient checks through the identical code paths.
pub trait Scalar:
    Copy
    + PartialEq
    + PartialOrd
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn maximum(self, other: Self) -> Self;
    fn minimum(self, other: Self) -> Self;
    fn is_finite(self) -> bool;

    /// c <- alpha * a(m,k) * b(k,n) + beta * c(m,n), arbitrary strides.
    ///
    /// # Safety
    /// Pointers must cover the strided extents; matrices must not alias.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
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

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;

            fn from_f64(v: f64) -> Self {
                v as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn exp(self) -> Self {
                self.exp()
            }
            fn ln(self) -> Self {
                self.ln()
            }
            fn tanh(self) -> Self {
                self.tanh()
            }
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            fn abs(self) -> Self {
                self.abs()
            }
            fn powi(self, n: i32) -> Self {
                self.powi(n)
            }
            fn maximum(self, other: Self) -> Self {
                self.max(other)
            }
            fn minimum(self, other: Self) -> Self {
                self.min(other)
            }
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }

            unsafe fn gemm(
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
                $gemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

#[derive(Clone, PartialEq)]
pub struct Matrix<F: Scalar> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Scalar> fmt::Debug for Matrix<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{})[", self.rows, self.cols)?;
        for r in 0..self.rows.min(4) {
            write!(f, "{:?}", &self.row(r)[..self.cols.min(6)])?;
        }
        write!(f, "]")
    }
}

impl<F: Scalar> Matrix<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![F::ZERO; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        assert_eq!(data.len(), rows * cols, "data length must be rows*cols");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> F) -> Self {
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m[(r, c)] = f(r, c);
            }
        }
        m
    }

    pub fn filled(rows: usize, cols: usize, v: F) -> Self {
        Self::from_vec(rows, cols, vec![v; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false // dimensions are positive by construction
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// c <- alpha * op(a) * op(b) + beta * c with optional logical transposes.
    #[allow(clippy::too_many_arguments)]
    pub fn gemm_into(
        alpha: F,
        a: &Matrix<F>,
        transpose_a: bool,
        b: &Matrix<F>,
        transpose_b: bool,
        beta: F,
        c: &mut Matrix<F>,
    ) {
        let (am, ak, rsa, csa) = if transpose_a {
            (a.cols, a.rows, 1isize, a.cols as isize)
        } else {
            (a.rows, a.cols, a.cols as isize, 1isize)
        };
        let (bk, bn, rsb, csb) = if transpose_b {
            (b.cols, b.rows, 1isize, b.cols as isize)
        } else {
            (b.rows, b.cols, b.cols as isize, 1isize)
        };
        assert_eq!(ak, bk, "inner dimensions must agree");
        assert_eq!((c.rows, c.cols), (am, bn), "output shape must be (m, n)");
        unsafe {
            F::gemm(
                am,
                ak,
                bn,
                alpha,
                a.data.as_ptr(),
                rsa,
                csa,
                b.data.as_ptr(),
                rsb,
                csb,
                beta,
                c.data.as_mut_ptr(),
                c.cols as isize,
                1,
            );
        }
    }

    /// self * rhs
    pub fn matmul(&self, rhs: &Matrix<F>) -> Matrix<F> {
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        Self::gemm_into(F::ONE, self, false, rhs, false, F::ZERO, &mut out);
        out
    }

    /// selfᵀ * rhs, without materializing the transpose.
    pub fn t_matmul(&self, rhs: &Matrix<F>) -> Matrix<F> {
        let mut out = Matrix::zeros(self.cols, rhs.cols);
        Self::gemm_into(F::ONE, self, true, rhs, false, F::ZERO, &mut out);
        out
    }

    /// self * rhsᵀ, without materializing the transpose.
    pub fn matmul_t(&self, rhs: &Matrix<F>) -> Matrix<F> {
        let mut out = Matrix::zeros(self.rows, rhs.rows);
        Self::gemm_into(F::ONE, self, false, rhs, true, F::ZERO, &mut out);
        out
    }

    pub fn transpose(&self) -> Matrix<F> {
        Matrix::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Matrix<F> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Matrix<F>, f: impl Fn(F, F) -> F) -> Matrix<F> {
        assert_eq!(self.shape(), other.shape(), "zip_map shapes must agree");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn fill(&mut self, v: F) {
        self.data.fill(v);
    }

    /// self += alpha * other
    pub fn add_assign_scaled(&mut self, other: &Matrix<F>, alpha: F) {
        assert_eq!(self.shape(), other.shape(), "add shapes must agree");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    /// Add a 1-row matrix to every row.
    pub fn add_row_broadcast(&mut self, row: &Matrix<F>) {
        assert_eq!(row.rows, 1, "broadcast source must have one row");
        assert_eq!(row.cols, self.cols, "broadcast width must agree");
        for r in 0..self.rows {
            for (a, &b) in self.row_mut(r).iter_mut().zip(&row.data) {
                *a += b;
            }
        }
    }

    /// Sum over rows, yielding a 1 x cols matrix.
    pub fn col_sums(&self) -> Matrix<F> {
        let mut out = Matrix::zeros(1, self.cols);
        for r in 0..self.rows {
            for (o, &v) in out.data.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl<F: Scalar> Index<(usize, usize)> for Matrix<F> {
    type Output = F;
    fn index(&self, (r, c): (usize, usize)) -> &F {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl<F: Scalar> IndexMut<(usize, usize)> for Matrix<F> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut F {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_matmul(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a[(i, k)] * b[(k, j)];
                }
                out[(i, j)] = acc;
            }
        }
        out
    }

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-2.0..2.0))
    }

    #[test]
    fn matmul_identity() {
        let x = Matrix::from_vec(1, 2, vec![1.0f64, 2.0]);
        let eye = Matrix::from_fn(2, 2, |r, c| if r == c { 1.0 } else { 0.0 });
        assert_eq!(x.matmul(&eye).data(), &[1.0, 2.0]);
    }

    #[test]
    fn matmul_matches_naive_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(m, k, n) in &[(1, 1, 1), (3, 4, 5), (7, 2, 9), (16, 16, 16)] {
            let a = random_matrix(&mut rng, m, k);
            let b = random_matrix(&mut rng, k, n);
            let fast = a.matmul(&b);
            let slow = naive_matmul(&a, &b);
            for (x, y) in fast.data().iter().zip(slow.data()) {
                assert!((x - y).abs() < 1e-12, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn transposed_products_match_explicit_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_matrix(&mut rng, 4, 6);
        let b = random_matrix(&mut rng, 4, 3);
        let fast = a.t_matmul(&b);
        let slow = naive_matmul(&a.transpose(), &b);
        for (x, y) in fast.data().iter().zip(slow.data()) {
            assert!((x - y).abs() < 1e-12);
        }

        let c = random_matrix(&mut rng, 5, 6);
        let fast = a.matmul_t(&c);
        let slow = naive_matmul(&a, &c.transpose());
        for (x, y) in fast.data().iter().zip(slow.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gemm_accumulates_with_beta() {
        let a = Matrix::from_vec(2, 2, vec![1.0f64, 2.0, 3.0, 4.0]);
        let b = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let mut c = Matrix::filled(2, 2, 10.0);
        Matrix::gemm_into(1.0, &a, false, &b, false, 1.0, &mut c);
        assert_eq!(c.data(), &[11.0, 12.0, 13.0, 14.0]);
    }

    #[test]
    fn broadcast_and_col_sums() {
        let mut m = Matrix::from_vec(2, 3, vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let bias = Matrix::from_vec(1, 3, vec![10.0, 20.0, 30.0]);
        m.add_row_broadcast(&bias);
        assert_eq!(m.data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        assert_eq!(m.col_sums().data(), &[25.0, 47.0, 69.0]);
    }

    #[test]
    fn f32_products_agree_with_f64_within_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a64 = random_matrix(&mut rng, 8, 8);
        let b64 = random_matrix(&mut rng, 8, 8);
        let a32 = a64.map(|v| v); // same values
        let a32 = Matrix::<f32>::from_vec(8, 8, a32.data().iter().map(|&v| v as f32).collect());
        let b32 = Matrix::<f32>::from_vec(8, 8, b64.data().iter().map(|&v| v as f32).collect());
        let c64 = a64.matmul(&b64);
        let c32 = a32.matmul(&b32);
        for (x, y) in c32.data().iter().zip(c64.data()) {
            assert!((*x as f64 - y).abs() < 1e-4);
        }
    }
}
