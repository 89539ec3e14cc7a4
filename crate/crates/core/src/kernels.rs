//! Matrix-product kernels.
//!
//! Products are computed over fixed blocks of output rows. With the
//! `parallel` feature the blocks are distributed over the rayon pool;
//! without it they run in order on the calling thread. Block boundaries
//! do not depend on the thread count, so both paths produce bit-identical
//! results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Output rows per block.
pub const ROW_BLOCK: usize = 64;

/// Below this many multiply-adds a product is never split across threads.
pub const PAR_MIN_WORK: usize = 1 << 16;

/// Strided read-only view of a matrix operand.
#[derive(Clone, Copy, Debug)]
pub struct Operand<'a> {
    pub data: &'a [f64],
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> Operand<'a> {
    /// Row-major `rows x cols` matrix.
    pub fn normal(data: &'a [f64], cols: usize) -> Self {
        Operand {
            data,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// Transpose of a row-major matrix with `cols` columns.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        Operand {
            data,
            row_stride: 1,
            col_stride: cols,
        }
    }

    fn max_index(&self, rows: usize, cols: usize) -> usize {
        (rows - 1) * self.row_stride + (cols - 1) * self.col_stride
    }
}

fn block(m0: usize, mc: usize, k: usize, n: usize, a: Operand<'_>, b: Operand<'_>, c: &mut [f64]) {
    debug_assert_eq!(c.len(), mc * n);
    let a_ptr = a.data[m0 * a.row_stride..].as_ptr();
    // SAFETY: `gemm` checks that every strided index of both operands is in
    // bounds, and `c` is exactly `mc x n` contiguous row-major storage.
    unsafe {
        matrixmultiply::dgemm(
            mc,
            k,
            n,
            1.0,
            a_ptr,
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn check(m: usize, k: usize, n: usize, a: &Operand<'_>, b: &Operand<'_>, c: &[f64]) {
    assert!(m > 0 && k > 0 && n > 0, "empty product");
    assert!(a.max_index(m, k) < a.data.len(), "lhs operand out of bounds");
    assert!(b.max_index(k, n) < b.data.len(), "rhs operand out of bounds");
    assert_eq!(c.len(), m * n, "output buffer size");
}

/// `c = a * b` on the calling thread, where `a` is `m x k` and `b` is `k x n`.
pub fn gemm_seq(m: usize, k: usize, n: usize, a: Operand<'_>, b: Operand<'_>, c: &mut [f64]) {
    check(m, k, n, &a, &b, c);
    for (i, chunk) in c.chunks_mut(ROW_BLOCK * n).enumerate() {
        let m0 = i * ROW_BLOCK;
        block(m0, chunk.len() / n, k, n, a, b, chunk);
    }
}

/// `c = a * b` with row blocks spread over the rayon pool.
#[cfg(feature = "parallel")]
pub fn gemm_par(m: usize, k: usize, n: usize, a: Operand<'_>, b: Operand<'_>, c: &mut [f64]) {
    check(m, k, n, &a, &b, c);
    c.par_chunks_mut(ROW_BLOCK * n)
        .enumerate()
        .for_each(|(i, chunk)| {
            let m0 = i * ROW_BLOCK;
            block(m0, chunk.len() / n, k, n, a, b, chunk);
        });
}

/// `c = a * b`, choosing the parallel path for large enough products.
pub fn gemm(m: usize, k: usize, n: usize, a: Operand<'_>, b: Operand<'_>, c: &mut [f64]) {
    #[cfg(feature = "parallel")]
    {
        if m > ROW_BLOCK && m * k * n >= PAR_MIN_WORK && rayon::current_num_threads() > 1 {
            return gemm_par(m, k, n, a, b, c);
        }
    }
    gemm_seq(m, k, n, a, b, c)
}

/// Maps `f` over `items`, in parallel when the feature is enabled. Output
/// order always matches input order.
pub fn map_ordered<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}
