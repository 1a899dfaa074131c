//! Globally adaptive 15-point Gauss-Kronrod quadrature.
//!
//! Same scheme as QUADPACK's QAG with the `qk15` rule: the interval with the
//! largest error estimate is bisected until the summed estimate falls below the
//! requested absolute tolerance.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_5,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_48,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224,
    0.063_092_092_629_978_56,
    0.104_790_010_322_250_19,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_42,
    0.204_432_940_075_298_89,
    0.209_482_141_084_727_82,
];

const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_64,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Maximum number of subintervals before giving up.
pub const DEFAULT_LIMIT: usize = 500;

#[derive(Debug, Clone, Copy)]
struct Segment {
    lo: f64,
    hi: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Segment {}

impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error
            .total_cmp(&other.error)
            .then_with(|| other.lo.total_cmp(&self.lo))
    }
}

/// One application of the 15-point Kronrod rule with its embedded 7-point
/// Gauss rule. Returns `(integral, error estimate)`.
pub fn gauss_kronrod_15<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> (f64, f64) {
    let centre = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let fc = f(centre);
    let mut res_g = fc * WG[3];
    let mut res_k = fc * WGK[7];
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..3 {
        let j2 = 2 * j + 1;
        let dx = half * XGK[j2];
        let f1 = f(centre - dx);
        let f2 = f(centre + dx);
        fv1[j2] = f1;
        fv2[j2] = f2;
        res_g += WG[j] * (f1 + f2);
        res_k += WGK[j2] * (f1 + f2);
        res_abs += WGK[j2] * (f1.abs() + f2.abs());
    }
    for j in 0..4 {
        let j1 = 2 * j;
        let dx = half * XGK[j1];
        let f1 = f(centre - dx);
        let f2 = f(centre + dx);
        fv1[j1] = f1;
        fv2[j1] = f2;
        res_k += WGK[j1] * (f1 + f2);
        res_abs += WGK[j1] * (f1.abs() + f2.abs());
    }
    let mean = 0.5 * res_k;
    let mut res_asc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let width = half.abs();
    let result = res_k * half;
    res_abs *= width;
    res_asc *= width;
    let mut err = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * (200.0 * err / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    (result, err)
}

/// Integrate `f` over `[lo, hi]` to absolute tolerance `tol`, starting from
/// the given interior breakpoints (e.g. the location of a sharp peak).
pub fn integrate_with_breaks<F: Fn(f64) -> f64>(
    f: F,
    lo: f64,
    hi: f64,
    breaks: &[f64],
    tol: f64,
    limit: usize,
) -> Result<f64> {
    let mut points = Vec::with_capacity(breaks.len() + 2);
    points.push(lo);
    points.extend(breaks.iter().copied().filter(|&b| b > lo && b < hi));
    points.push(hi);

    let mut heap = BinaryHeap::with_capacity(64);
    let mut total_err = 0.0;
    for w in points.windows(2) {
        let (value, error) = gauss_kronrod_15(&f, w[0], w[1]);
        total_err += error;
        heap.push(Segment {
            lo: w[0],
            hi: w[1],
            value,
            error,
        });
    }
    while total_err > tol || !total_err.is_finite() {
        if heap.len() >= limit || !total_err.is_finite() {
            return Err(Error::Quadrature {
                lo,
                hi,
                estimate: total_err,
            });
        }
        let worst = heap.pop().expect("heap holds at least one segment");
        let mid = 0.5 * (worst.lo + worst.hi);
        if mid <= worst.lo || mid >= worst.hi {
            // interval cannot be split further in floating point
            return Err(Error::Quadrature {
                lo,
                hi,
                estimate: total_err,
            });
        }
        let (v1, e1) = gauss_kronrod_15(&f, worst.lo, mid);
        let (v2, e2) = gauss_kronrod_15(&f, mid, worst.hi);
        total_err += e1 + e2 - worst.error;
        heap.push(Segment {
            lo: worst.lo,
            hi: mid,
            value: v1,
            error: e1,
        });
        heap.push(Segment {
            lo: mid,
            hi: worst.hi,
            value: v2,
            error: e2,
        });
    }
    // sum left to right so the result does not depend on heap layout
    let mut segments = heap.into_vec();
    segments.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    Ok(segments.iter().map(|s| s.value).sum())
}

pub fn integrate<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    integrate_with_breaks(f, lo, hi, &[], tol, DEFAULT_LIMIT)
}
