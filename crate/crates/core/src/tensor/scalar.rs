use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of the engine: `f32` for training, `f64` for
/// gradient checking.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    const NAME: &'static str;

    fn of(v: f64) -> Self;

    fn as_f64(self) -> f64;

    /// `exp` for the activation hot loops; implementations may trade the
    /// last ulp for speed.
    fn fast_exp(self) -> Self {
        self.exp()
    }

    fn fast_tanh(self) -> Self {
        self.tanh()
    }

    /// `c = alpha * a * b + beta * c` on strided row/column layouts.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-overlapping (for `c`)
    /// `m x k`, `k x n` and `m x n` matrices.
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
    const NAME: &'static str = "f32";

    fn of(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    #[inline]
    fn fast_exp(self) -> Self {
        exp_f32(self)
    }

    #[inline]
    fn fast_tanh(self) -> Self {
        let e = exp_f32(2.0 * self.clamp(-20.0, 20.0));
        1.0 - 2.0 / (e + 1.0)
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
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

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
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Branch-free `exp` that vectorizes: `2^n * p(r)` with
/// `x = n ln2 + r`, `|r| <= ln2 / 2`, and a degree-7 Taylor polynomial.
/// Relative error stays below 2e-7 over the clamped range.
#[inline]
fn exp_f32(x: f32) -> f32 {
    const LN2_HI: f32 = 0.693_145_75;
    const LN2_LO: f32 = 1.428_606_8e-6;
    let x = x.clamp(-87.0, 88.0);
    // round to nearest through the 1.5 * 2^23 shifter, whose low mantissa
    // bits then hold n; keeps the whole body in vector registers
    const SHIFTER: f32 = 12_582_912.0;
    let t = x * std::f32::consts::LOG2_E + SHIFTER;
    let n = t - SHIFTER;
    let ni = (t.to_bits() as i32).wrapping_sub(SHIFTER.to_bits() as i32);
    let r = x - n * LN2_HI - n * LN2_LO;
    let mut p = 1.0 / 5040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    let scale = f32::from_bits(((ni + 127) as u32) << 23);
    p * scale
}

/// Row-major `c (+)= op(a) * op(b)` where `op` optionally transposes.
/// `a` is stored as `m x k` (or `k x m` when `ta`), `b` as `k x n` (or `n x k`
/// when `tb`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    ta: bool,
    b: &[T],
    tb: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if m * k * n <= SMALL_GEMM {
        gemm_small(m, k, n, a, ta, b, tb, c, accumulate);
    } else {
        gemm_blocked(m, k, n, a, ta, b, tb, c, accumulate);
    }
}

#[allow(clippy::too_many_arguments)]
fn gemm_blocked<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    ta: bool,
    b: &[T],
    tb: bool,
    c: &mut [T],
    accumulate: bool,
) {
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: slice lengths were asserted above and `c` is uniquely borrowed.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
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
        )
    }
}

/// Below this many multiply-adds the packing in the blocked kernel costs
/// more than it saves.
const SMALL_GEMM: usize = 32 * 32 * 32;
const SMALL_GEMM_SCRATCH: usize = 1024;

#[allow(clippy::too_many_arguments)]
fn gemm_small<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    ta: bool,
    b: &[T],
    tb: bool,
    c: &mut [T],
    accumulate: bool,
) {
    if !accumulate {
        c.fill(T::zero());
    }
    let mut scratch = [T::zero(); SMALL_GEMM_SCRATCH];
    let b: &[T] = if tb && k * n <= SMALL_GEMM_SCRATCH {
        for p in 0..k {
            for j in 0..n {
                scratch[p * n + j] = b[j * k + p];
            }
        }
        &scratch[..k * n]
    } else if tb {
        return gemm_blocked(m, k, n, a, ta, b, tb, c, true);
    } else {
        b
    };
    let at = |i: usize, p: usize| if ta { a[p * m + i] } else { a[i * k + p] };
    for (i, crow) in c.chunks_exact_mut(n).enumerate() {
        for p in 0..k {
            let aip = at(i, p);
            if aip == T::zero() {
                continue;
            }
            for (cij, &bv) in crow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *cij += aip * bv;
            }
        }
    }
}
