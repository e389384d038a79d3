//! Dense kernels shared by the primitives: strided GEMM and real FFT pairs.

use rustfft::num_complex::Complex;

use super::Scalar;

/// `c = op(a) · op(b)`, or `c += ...` when `accumulate`. `a` is stored
/// row-major as `a_rows × a_cols`; `trans_a` selects its transpose.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    a: &[T],
    (a_rows, a_cols): (usize, usize),
    trans_a: bool,
    b: &[T],
    (b_rows, b_cols): (usize, usize),
    trans_b: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert_eq!(a.len(), a_rows * a_cols);
    assert_eq!(b.len(), b_rows * b_cols);
    let (m, k, rsa, csa) = if trans_a {
        (a_cols, a_rows, 1, a_cols as isize)
    } else {
        (a_rows, a_cols, a_cols as isize, 1)
    };
    let (kb, n, rsb, csb) = if trans_b {
        (b_cols, b_rows, 1, b_cols as isize)
    } else {
        (b_rows, b_cols, b_cols as isize, 1)
    };
    assert_eq!(k, kb, "gemm inner dimensions");
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(T::zero());
        }
        return;
    }
    // SAFETY: the asserts above pin every view inside its slice.
    unsafe {
        T::gemm_raw(m, k, n, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, c.as_mut_ptr(), n as isize, 1, accumulate);
    }
}

pub(crate) fn bins(n: usize) -> usize {
    n / 2 + 1
}

/// Forward real FFT of each length-`n` row; output rows hold `K` interleaved
/// `(re, im)` pairs.
pub(crate) fn rfft_rows<T: Scalar>(x: &[T], n: usize) -> Vec<T> {
    let k = bins(n);
    let rows = x.len() / n;
    let plan = T::fft_plan(n, false);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
    let mut out = Vec::with_capacity(rows * k * 2);
    for row in x.chunks_exact(n) {
        for (b, &v) in buf.iter_mut().zip(row) {
            *b = Complex::new(v, T::zero());
        }
        plan.process(&mut buf);
        for c in &buf[..k] {
            out.push(c.re);
            out.push(c.im);
        }
    }
    out
}

/// Inverse of [`rfft_rows`]: rebuilds the Hermitian spectrum and returns the
/// real part of the normalized inverse transform. Imaginary parts of the DC
/// and Nyquist bins do not influence the output.
pub(crate) fn irfft_rows<T: Scalar>(spec: &[T], n: usize) -> Vec<T> {
    let k = bins(n);
    let rows = spec.len() / (2 * k);
    let plan = T::fft_plan(n, true);
    let scale = T::one() / T::lit(n as f64);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
    let mut out = Vec::with_capacity(rows * n);
    for row in spec.chunks_exact(2 * k) {
        for j in 0..k {
            buf[j] = Complex::new(row[2 * j], row[2 * j + 1]);
        }
        buf[0].im = T::zero();
        if n % 2 == 0 {
            buf[n / 2].im = T::zero();
        }
        for j in k..n {
            buf[j] = buf[n - j].conj();
        }
        plan.process(&mut buf);
        out.extend(buf.iter().map(|c| c.re * scale));
    }
    out
}

/// Adjoint of [`rfft_rows`]: maps a spectrum-shaped cotangent back onto the
/// time axis, `dx_t = Re Σ_{k<K} g_k e^{+2πikt/n}`.
pub(crate) fn rfft_adjoint<T: Scalar>(g: &[T], n: usize) -> Vec<T> {
    let k = bins(n);
    let rows = g.len() / (2 * k);
    let plan = T::fft_plan(n, true);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
    let mut out = Vec::with_capacity(rows * n);
    for row in g.chunks_exact(2 * k) {
        for j in 0..k {
            buf[j] = Complex::new(row[2 * j], row[2 * j + 1]);
        }
        for b in &mut buf[k..] {
            *b = Complex::new(T::zero(), T::zero());
        }
        plan.process(&mut buf);
        out.extend(buf.iter().map(|c| c.re));
    }
    out
}

/// Adjoint of [`irfft_rows`]: bins shared with their mirror image get the
/// factor-2 weight; DC and Nyquist imaginary parts get zero gradient.
pub(crate) fn irfft_adjoint<T: Scalar>(g: &[T], n: usize) -> Vec<T> {
    let k = bins(n);
    let spectrum = rfft_rows(g, n);
    let inv_n = T::one() / T::lit(n as f64);
    let two = T::lit(2.0);
    let mut out = spectrum;
    for row in out.chunks_exact_mut(2 * k) {
        for j in 0..k {
            let nyquist = n % 2 == 0 && j == n / 2;
            if j == 0 || nyquist {
                row[2 * j] = row[2 * j] * inv_n;
                row[2 * j + 1] = T::zero();
            } else {
                row[2 * j] = row[2 * j] * two * inv_n;
                row[2 * j + 1] = row[2 * j + 1] * two * inv_n;
            }
        }
    }
    out
}
