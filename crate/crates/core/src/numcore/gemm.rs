//! Dense `f64` matrix products on ndarray views, backed by the `gemm` crate.

use gemm::Parallelism;
use ndarray::{Array2, ArrayView2};

fn product(dst: &mut Array2<f64>, accumulate: bool, a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) {
    let (m, k) = a.dim();
    let n = b.ncols();
    assert_eq!(k, b.nrows(), "inner dimensions differ");
    assert_eq!(dst.dim(), (m, n), "output shape");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            dst.fill(0.0);
        }
        return;
    }
    let (ds, as_, bs) = (dst.strides().to_vec(), a.strides(), b.strides());
    // SAFETY: the pointers and strides come from live ndarray views whose
    // shapes were checked above, and `dst` does not alias `a` or `b`.
    unsafe {
        gemm::gemm(
            m,
            n,
            k,
            dst.as_mut_ptr(),
            ds[1],
            ds[0],
            accumulate,
            a.as_ptr(),
            as_[1],
            as_[0],
            b.as_ptr(),
            bs[1],
            bs[0],
            1.0,
            1.0,
            false,
            false,
            false,
            Parallelism::None,
        );
    }
}

/// `a · b`.
pub fn matmul(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.nrows(), b.ncols()));
    product(&mut out, false, a, b);
    out
}

/// `dst += a · b`.
pub fn matmul_add(dst: &mut Array2<f64>, a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) {
    product(dst, true, a, b);
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::s;

    fn naive(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
        Array2::from_shape_fn((a.nrows(), b.ncols()), |(i, j)| {
            (0..a.ncols()).map(|l| a[(i, l)] * b[(l, j)]).sum()
        })
    }

    #[test]
    fn matches_naive_product_for_transposed_and_sliced_views() {
        let a = Array2::from_shape_fn((37, 19), |(i, j)| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let b = Array2::from_shape_fn((23, 19), |(i, j)| ((i * 5 + j) % 13) as f64 * 0.25);
        let want = naive(a.view(), b.t());
        assert!((&matmul(a.view(), b.t()) - &want).iter().all(|v| v.abs() < 1e-12));
        let sub = a.slice(s![..;2, 3..]);
        let bt = b.t();
        let bsub = bt.slice(s![3.., ..]);
        let want = naive(sub, bsub);
        let mut acc = Array2::from_elem(want.dim(), 1.0);
        matmul_add(&mut acc, sub, bsub);
        assert!((&acc - &want).iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn empty_inner_dimension_gives_zeros() {
        let a = Array2::<f64>::zeros((3, 0));
        let b = Array2::<f64>::zeros((0, 4));
        assert_eq!(matmul(a.view(), b.view()), Array2::<f64>::zeros((3, 4)));
    }
}
