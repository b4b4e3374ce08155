//! Branch-free `exp` for slices.
//!
//! The kernel is plain IEEE arithmetic (no fused multiply-add), so the scalar
//! build and the AVX2/AVX-512 builds picked at runtime return bit-identical
//! results.
//! Accuracy is within a few ulp of `f64::exp` over the whole range.

const LOG2E: f64 = std::f64::consts::LOG2_E;
const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
// Adding 1.5 * 2^52 rounds to an integer and leaves it in the low mantissa bits.
const SHIFT: f64 = 6_755_399_441_055_744.0;
const LO: f64 = -746.0;
const HI: f64 = 710.0;

// 1/k! for k = 13 down to 2.
const TAYLOR: [f64; 12] = [
    1.0 / 6_227_020_800.0,
    1.0 / 479_001_600.0,
    1.0 / 39_916_800.0,
    1.0 / 3_628_800.0,
    1.0 / 362_880.0,
    1.0 / 40_320.0,
    1.0 / 5_040.0,
    1.0 / 720.0,
    1.0 / 120.0,
    1.0 / 24.0,
    1.0 / 6.0,
    0.5,
];

/// 2^k for an integer-valued `k` with |k| < 1023.
#[inline(always)]
fn pow2(k: f64) -> f64 {
    let bits = (k + SHIFT).to_bits().wrapping_add(1023) << 52;
    f64::from_bits(bits)
}

#[inline(always)]
pub(crate) fn exp(x: f64) -> f64 {
    // Comparisons keep NaN as NaN.
    let x = if x < LO { LO } else if x > HI { HI } else { x };
    let k = (x * LOG2E + SHIFT) - SHIFT;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    let mut p = TAYLOR[0];
    for c in &TAYLOR[1..] {
        p = p * r + c;
    }
    p = (p * r + 1.0) * r + 1.0;
    // Split the scale so both halves stay normal near the ends of the range.
    let k1 = (k * 0.5 + SHIFT) - SHIFT;
    p * pow2(k1) * pow2(k - k1)
}

// Each kernel is written once as an `#[inline(always)]` body and stamped out
// per instruction set; the widest one the CPU supports is picked at runtime.
macro_rules! dispatch {
    ($generic:ident($($arg:expr),*)) => {{
        #[cfg(target_arch = "x86_64")]
        {
            #[target_feature(enable = "avx512f")]
            unsafe fn wide512<T>(f: impl FnOnce() -> T) -> T {
                f()
            }
            #[target_feature(enable = "avx2")]
            unsafe fn wide256<T>(f: impl FnOnce() -> T) -> T {
                f()
            }
            if std::arch::is_x86_feature_detected!("avx512f") {
                // SAFETY: the feature was detected on this CPU.
                return unsafe { wide512(|| $generic($($arg),*)) };
            }
            if std::arch::is_x86_feature_detected!("avx2") {
                // SAFETY: as above.
                return unsafe { wide256(|| $generic($($arg),*)) };
            }
        }
        $generic($($arg),*)
    }};
}

#[inline(always)]
fn map_generic<F: Fn(f64) -> f64>(xs: &mut [f64], f: F) {
    xs.iter_mut().for_each(|v| *v = f(*v));
}

/// Applies `f` elementwise with the widest vector unit available. `f` should
/// be branch-free arithmetic (typically built on [`exp`]) so it vectorizes.
#[inline(always)]
pub(crate) fn map_in_place<F: Fn(f64) -> f64>(xs: &mut [f64], f: F) {
    dispatch!(map_generic(xs, f))
}

#[inline(always)]
fn softmax_rows_generic(data: &mut [f64], n: usize) {
    for row in data.chunks_exact_mut(n) {
        // Four running lanes let both reductions vectorize; the order is
        // fixed, so every build agrees.
        let mut top = [f64::NEG_INFINITY; 4];
        let mut quads = row.chunks_exact(4);
        for q in &mut quads {
            for (m, &v) in top.iter_mut().zip(q) {
                *m = if v > *m { v } else { *m };
            }
        }
        let max = quads
            .remainder()
            .iter()
            .chain(&top)
            .fold(f64::NEG_INFINITY, |m, &v| if v > m { v } else { m });
        row.iter_mut().for_each(|v| *v = exp(*v - max));
        let mut acc = [0.0; 4];
        let mut quads = row.chunks_exact(4);
        for q in &mut quads {
            for (a, v) in acc.iter_mut().zip(q) {
                *a += v;
            }
        }
        let tail: f64 = quads.remainder().iter().sum();
        let inv = 1.0 / ((acc[0] + acc[1]) + (acc[2] + acc[3]) + tail);
        row.iter_mut().for_each(|v| *v *= inv);
    }
}

/// Numerically stable softmax over each consecutive run of `n` values.
pub(crate) fn softmax_rows(data: &mut [f64], n: usize) {
    if n == 0 {
        return;
    }
    dispatch!(softmax_rows_generic(data, n))
}

#[cfg(test)]
fn exp_in_place(xs: &mut [f64]) {
    map_in_place(xs, exp)
}

#[cfg(test)]
fn exp_generic(xs: &mut [f64]) {
    map_generic(xs, exp)
}
