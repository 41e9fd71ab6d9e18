use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use qd::Quad;

/// Element type of a [`Tensor`](super::Tensor): `f64` for training and
/// tests, `f32` for fast inference, [`Quad`] (double-double) for reference
/// losses in gradient checks.
pub trait Real:
    Copy
    + PartialOrd
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
    + 'static
{
    /// `c = op(a) * op(b) (+ c when accumulate)`, where `a` is `m x k` and `b`
    /// is `k x n` after the optional transposes; all buffers are row-major.
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], a_t: bool, b: &[Self], b_t: bool, c: &mut [Self], accumulate: bool);

    /// Nearest representable value.
    fn lit(x: f64) -> Self;
    fn as_f64(self) -> f64;

    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;
    fn neg_infinity() -> Self;

    #[inline]
    fn zero() -> Self {
        Self::lit(0.0)
    }

    #[inline]
    fn one() -> Self {
        Self::lit(1.0)
    }

    #[inline]
    fn recip(self) -> Self {
        Self::one() / self
    }

    /// Larger of the two; `other` wins when `self` is NaN.
    #[inline]
    fn max(self, other: Self) -> Self {
        if self >= other {
            self
        } else {
            other
        }
    }

    fn sum_iter(values: impl Iterator<Item = Self>) -> Self {
        values.fold(Self::zero(), |acc, v| acc + v)
    }
}

struct Strides {
    rsa: isize,
    csa: isize,
    rsb: isize,
    csb: isize,
}

fn strides(m: usize, k: usize, n: usize, a_t: bool, b_t: bool) -> Strides {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    Strides { rsa, csa, rsb, csb }
}

fn check_lens(m: usize, k: usize, n: usize, a: usize, b: usize, c: usize) {
    assert!(a >= m * k && b >= k * n && c >= m * n, "gemm buffer too small");
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            #[inline]
            fn lit(x: f64) -> Self {
                x as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            #[inline]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }

            #[inline]
            fn ln(self) -> Self {
                <$t>::ln(self)
            }

            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }

            #[inline]
            fn tanh(self) -> Self {
                <$t>::tanh(self)
            }

            #[inline]
            fn abs(self) -> Self {
                <$t>::abs(self)
            }

            #[inline]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }

            #[inline]
            fn neg_infinity() -> Self {
                <$t>::NEG_INFINITY
            }

            #[inline]
            fn max(self, other: Self) -> Self {
                <$t>::max(self, other)
            }

            fn gemm(m: usize, k: usize, n: usize, a: &[$t], a_t: bool, b: &[$t], b_t: bool, c: &mut [$t], accumulate: bool) {
                if m == 0 || n == 0 {
                    return;
                }
                check_lens(m, k, n, a.len(), b.len(), c.len());
                if k == 0 {
                    if !accumulate {
                        c[..m * n].fill(0.0);
                    }
                    return;
                }
                let s = strides(m, k, n, a_t, b_t);
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: the lengths were checked above and the strides
                // describe dense row-major (or transposed) storage of those
                // exact dimensions, so every access stays in bounds.
                unsafe {
                    $gemm(
                        m, k, n, 1.0,
                        a.as_ptr(), s.rsa, s.csa,
                        b.as_ptr(), s.rsb, s.csb,
                        beta,
                        c.as_mut_ptr(), n as isize, 1,
                    );
                }
            }
        }
    };
}

impl_real!(f64, matrixmultiply::dgemm);
impl_real!(f32, matrixmultiply::sgemm);

/// Double-double arithmetic (about 106 significant bits). Only used to
/// evaluate reference losses, so the product is a plain triple loop.
impl Real for Quad {
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], a_t: bool, b: &[Self], b_t: bool, c: &mut [Self], accumulate: bool) {
        if m == 0 || n == 0 {
            return;
        }
        check_lens(m, k, n, a.len(), b.len(), c.len());
        let s = strides(m, k, n, a_t, b_t);
        for i in 0..m {
            for j in 0..n {
                let mut acc = if accumulate { c[i * n + j] } else { Quad::ZERO };
                for p in 0..k {
                    let av = a[(i as isize * s.rsa + p as isize * s.csa) as usize];
                    let bv = b[(p as isize * s.rsb + j as isize * s.csb) as usize];
                    acc += av * bv;
                }
                c[i * n + j] = acc;
            }
        }
    }

    #[inline]
    fn lit(x: f64) -> Self {
        Quad::from_f64(x)
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.0 + self.1
    }

    fn exp(self) -> Self {
        Quad::exp(self)
    }

    fn ln(self) -> Self {
        Quad::ln(self)
    }

    fn sqrt(self) -> Self {
        Quad::sqrt(self)
    }

    fn tanh(self) -> Self {
        // 1 - e^{-2|x|} cancels for tiny x, but only relative accuracy is
        // lost; the absolute error stays near 1e-32
        let e = Quad::exp(-(self.abs() + self.abs()));
        let t = (Quad::ONE - e) / (Quad::ONE + e);
        if self.0 < 0.0 {
            -t
        } else {
            t
        }
    }

    fn abs(self) -> Self {
        Quad::abs(self)
    }

    fn is_finite(self) -> bool {
        Quad::is_finite(self)
    }

    fn neg_infinity() -> Self {
        Quad::NEG_INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    let av = if a_t { a[p * m + i] } else { a[i * k + p] };
                    let bv = if b_t { b[j * k + p] } else { b[p * n + j] };
                    c[i * n + j] += av * bv;
                }
            }
        }
        c
    }

    #[test]
    fn gemm_all_transpose_combinations() {
        let (m, k, n) = (3, 5, 4);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.71).cos()).collect();
        for a_t in [false, true] {
            for b_t in [false, true] {
                let mut c = vec![1.0; m * n];
                f64::gemm(m, k, n, &a, a_t, &b, b_t, &mut c, false);
                let want = naive(m, k, n, &a, a_t, &b, b_t);
                for (x, y) in c.iter().zip(&want) {
                    assert!((x - y).abs() < 1e-12);
                }
                f64::gemm(m, k, n, &a, a_t, &b, b_t, &mut c, true);
                for (x, y) in c.iter().zip(&want) {
                    assert!((x - 2.0 * y).abs() < 1e-12);
                }
            }
        }
    }
}
