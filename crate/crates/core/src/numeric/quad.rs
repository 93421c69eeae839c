//! Globally adaptive Gauss–Kronrod (7/15) quadrature.

use std::collections::BinaryHeap;

use thiserror::Error;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_INTERVALS: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
}

#[derive(Debug, Clone, Copy, Error, PartialEq)]
#[error("quadrature did not converge: value {value}, achieved error {achieved:e} > tolerance {requested:e}")]
pub struct QuadError {
    pub value: f64,
    pub achieved: f64,
    pub requested: f64,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Segment {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut res_k = fc * WGK[7];
    let mut res_g = fc * WG[3];
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = res_k * 0.5;
    let mut res_asc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let value = res_k * half;
    res_asc *= half.abs();
    res_abs *= half.abs();
    let mut error = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && error != 0.0 {
        error = res_asc * (200.0 * error / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(50.0 * f64::EPSILON * res_abs);
    }
    Segment { a, b, value, error }
}

/// Integrates `f` over the finite interval `[a, b]` to
/// `max(abs_tol, rel_tol * |value|)`.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<QuadResult, QuadError> {
    if a == b {
        return Ok(QuadResult {
            value: 0.0,
            error: 0.0,
        });
    }
    let first = kronrod(&mut f, a, b);
    let mut total = first.value;
    let mut total_err = first.error;
    let mut heap = BinaryHeap::new();
    heap.push(first);
    loop {
        let tol = abs_tol.max(rel_tol * total.abs());
        if total_err <= tol {
            // The running sums cancel large early errors; confirm exactly.
            total = heap.iter().map(|s| s.value).sum();
            total_err = heap.iter().map(|s| s.error).sum();
            if total_err <= abs_tol.max(rel_tol * total.abs()) {
                return Ok(QuadResult {
                    value: total,
                    error: total_err,
                });
            }
            continue;
        }
        if heap.len() >= MAX_INTERVALS {
            return Err(QuadError {
                value: total,
                achieved: total_err,
                requested: tol,
            });
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a.min(worst.b) || mid >= worst.a.max(worst.b) {
            // Interval can no longer be split in floating point.
            return Err(QuadError {
                value: total,
                achieved: total_err,
                requested: tol,
            });
        }
        let left = kronrod(&mut f, worst.a, mid);
        let right = kronrod(&mut f, mid, worst.b);
        total += left.value + right.value - worst.value;
        total_err += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
        // Recompute occasionally to stop drift from the running updates.
        if heap.len() % 64 == 0 {
            total = heap.iter().map(|s| s.value).sum();
            total_err = heap.iter().map(|s| s.error).sum();
        }
    }
}

/// Integrates `f` over `[a, +inf)` through `x = a + L (e^v - 1)`,
/// `v = t/(1-t)`, `L = max(1, |a|)`. Power tails become exponential in `v`.
pub fn integrate_upper_tail<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<QuadResult, QuadError> {
    let scale = a.abs().max(1.0);
    integrate(
        |t| tail_map(&mut f, a, scale, t),
        0.0,
        1.0,
        abs_tol,
        rel_tol,
    )
}

/// Integrates `f` over `(-inf, b]`, mirrored from [`integrate_upper_tail`].
pub fn integrate_lower_tail<F: FnMut(f64) -> f64>(
    mut f: F,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<QuadResult, QuadError> {
    let scale = b.abs().max(1.0);
    integrate(
        |t| tail_map(&mut f, b, -scale, t),
        0.0,
        1.0,
        abs_tol,
        rel_tol,
    )
}

fn tail_map<F: FnMut(f64) -> f64>(f: &mut F, origin: f64, scale: f64, t: f64) -> f64 {
    let s = 1.0 - t;
    if s <= 0.0 {
        return 0.0;
    }
    let v = t / s;
    let ev = v.exp();
    let x = origin + scale * v.exp_m1();
    if !x.is_finite() || !ev.is_finite() {
        return 0.0;
    }
    let y = f(x);
    if y == 0.0 {
        0.0
    } else {
        y * scale.abs() * ev / (s * s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_high_degree_polynomials() {
        let r = integrate(
            |x| x.powi(20) - 3.0 * x.powi(7) + 1.0,
            -1.0,
            2.0,
            1e-12,
            1e-12,
        )
        .unwrap();
        let exact = (2f64.powi(21) + 1.0) / 21.0 - 3.0 * (2f64.powi(8) - 1.0) / 8.0 + 3.0;
        assert!((r.value - exact).abs() < 1e-9 * exact.abs());
    }

    #[test]
    fn endpoint_singularity() {
        let r = integrate(|x: f64| 1.0 / x.sqrt(), 0.0, 1.0, 1e-10, 1e-10).unwrap();
        assert!((r.value - 2.0).abs() < 1e-9);
    }

    #[test]
    fn gaussian_tails() {
        let r = integrate_upper_tail(|x: f64| (-x * x / 2.0).exp(), 0.0, 1e-13, 1e-13).unwrap();
        let half = (std::f64::consts::PI / 2.0).sqrt();
        assert!((r.value - half).abs() < 1e-11);
        let l = integrate_lower_tail(|x: f64| (-x * x / 2.0).exp(), 0.0, 1e-13, 1e-13).unwrap();
        assert!((l.value - half).abs() < 1e-11);
    }

    #[test]
    fn oscillatory() {
        let r = integrate(|x: f64| (50.0 * x).cos(), 0.0, 10.0, 1e-12, 1e-12).unwrap();
        assert!((r.value - (500.0f64).sin() / 50.0).abs() < 1e-10);
    }

    #[test]
    fn heavy_power_tails() {
        for &b in &[-1.0, -1e3, -1e9] {
            let r =
                integrate_lower_tail(|x: f64| 1.5 * x.abs().powf(-2.5) * (b - x), b, 1e-16, 1e-13)
                    .unwrap();
            let exact = 2.0 * b.abs().powf(-0.5);
            assert!(
                (r.value - exact).abs() < 1e-12 * exact,
                "b={b}: {} vs {exact}",
                r.value
            );
        }
        let r = integrate_upper_tail(|x: f64| (-x * x / 2.0).exp(), 0.0, 1e-15, 1e-13).unwrap();
        assert!((r.value - (std::f64::consts::PI / 2.0).sqrt()).abs() < 1e-13);
    }
}
