//! The spectrally negative alpha-stable law with characteristic function
//! `exp(-|t|^a G(1-a) (cos(pi a/2) + i sin(pi a/2) sgn t))`, `1 < a < 2`.
//!
//! In the `S1(alpha, beta, sigma, mu)` parameterization this is
//! `beta = -1`, `sigma^alpha = G(1-a) cos(pi a/2)`, `mu = 0`. The body of the
//! law is tabulated on a fixed grid by Gil–Pelaez inversion of the
//! characteristic function; far tails use the integral representation of
//! Nolan (1997), which is also the independent cross-check of the table.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::{Arc, Mutex, OnceLock};

use rand::Rng;

use crate::numeric::special::gamma_one_minus;
use crate::numeric::{brent, integrate, integrate_upper_tail};

use super::LimitError;

const X_LO: f64 = -40.0;
const X_HI: f64 = 20.0;
const STEP: f64 = 0.01;
const GP_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy)]
struct Params {
    alpha: f64,
    /// `sigma^alpha`, the coefficient of `|t|^alpha` in the log-CF.
    c: f64,
    tau: f64,
    sigma: f64,
}

impl Params {
    fn new(alpha: f64) -> Self {
        let c = gamma_one_minus(alpha) * (PI * alpha / 2.0).cos();
        Params {
            alpha,
            c,
            tau: (PI * alpha / 2.0).tan(),
            sigma: c.powf(1.0 / alpha),
        }
    }

    /// Upper end of the Gil–Pelaez range: `exp(-c T^alpha) = e^-40`.
    fn t_max(&self) -> f64 {
        (40.0 / self.c).powf(1.0 / self.alpha)
    }
}

/// `(F(x), f(x), f'(x))` by Gil–Pelaez inversion.
fn gil_pelaez(p: &Params, x: f64) -> Result<(f64, f64, f64), LimitError> {
    let (a, c, tau) = (p.alpha, p.c, p.tau);
    let phase = |t: f64| t * x + c * tau * t.powf(a);
    let damp = |t: f64| (-c * t.powf(a)).exp();
    // On [0, 1] substitute t = v^2 so the 1/t and t^(a-1) terms become smooth.
    let cdf_head = integrate(
        |v| {
            if v == 0.0 {
                return 0.0;
            }
            let t = v * v;
            2.0 * damp(t) * phase(t).sin() / v
        },
        0.0,
        1.0,
        GP_TOL,
        0.0,
    )?;
    let t_max = p.t_max().max(1.0);
    let cdf_tail = integrate(|t| damp(t) * phase(t).sin() / t, 1.0, t_max, GP_TOL, 0.0)?;
    let pdf = integrate(|t| damp(t) * phase(t).cos(), 0.0, t_max, GP_TOL, 0.0)?;
    let dpdf = integrate(|t| -t * damp(t) * phase(t).sin(), 0.0, t_max, GP_TOL, 0.0)?;
    Ok((
        0.5 + (cdf_head.value + cdf_tail.value) / PI,
        pdf.value / PI,
        dpdf.value / PI,
    ))
}

/// Standard `S1(alpha, beta, 1, 0)` with `beta = +-1`: returns
/// `(P(X > z), density at z)` for `z > 0`.
///
/// The integration variable is `s = pi/2 - theta`. For `beta = +-1` the
/// trigonometric factors have closed forms in `s` that stay accurate near
/// both endpoints.
fn nolan_upper(alpha: f64, beta: f64, z: f64) -> Result<(f64, f64), LimitError> {
    let spectrally_negative = beta < 0.0;
    let s_max = if spectrally_negative {
        PI / alpha
    } else {
        PI * (alpha - 1.0) / alpha
    };
    let k = alpha / (alpha - 1.0);
    let base = (-(PI * alpha / 2.0).cos()).ln() / (alpha - 1.0) + k * z.ln();
    let shift = PI * alpha - 1.5 * PI;
    // ln g(s), increasing in s.
    let ln_g = |s: f64| {
        let ln_sin_s = s.sin().ln();
        let (s1, c2) = if spectrally_negative {
            ((alpha * s).sin(), ((alpha - 1.0) * s).sin())
        } else {
            (
                (alpha * (s_max - s)).sin(),
                (shift - (alpha - 1.0) * s).cos(),
            )
        };
        base + k * (ln_sin_s - s1.ln()) + c2.ln() - ln_sin_s
    };
    let tail = |s: f64| {
        let lg = ln_g(s);
        if lg.is_nan() {
            0.0
        } else {
            (-lg.exp()).exp()
        }
    };
    let dens = |s: f64| {
        let lg = ln_g(s);
        if lg.is_nan() || lg > 7.0 {
            0.0
        } else {
            let g = lg.exp();
            g * (-g).exp()
        }
    };

    // Locate ln g = 0; the integrand transitions there.
    let tiny = s_max * 1e-300_f64.max(f64::MIN_POSITIVE);
    let s_star = if ln_g(tiny) >= 0.0 {
        0.0
    } else {
        let (mut lo, mut hi) = (0.0_f64, s_max);
        for _ in 0..1100 {
            let mid = if lo == 0.0 { hi * 0.5 } else { 0.5 * (lo + hi) };
            if mid <= lo || mid >= hi {
                break;
            }
            let v = ln_g(mid);
            if v.is_nan() || v > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
            if lo > 0.0 && hi - lo <= 1e-15 * hi {
                break;
            }
        }
        0.5 * (lo + hi)
    };

    let mut p_total = 0.0;
    let mut d_total = 0.0;
    let scale = if s_star > 0.0 { s_star } else { s_max };
    let abs_tol = 1e-14 * scale;

    // Left of s*: geometric pieces toward 0, where the tail integrand tends to 1.
    if s_star > 0.0 {
        let mut hi = s_star;
        loop {
            let lo = hi * 0.5;
            p_total += integrate(tail, lo, hi, abs_tol, 1e-13)?.value;
            d_total += integrate(dens, lo, hi, abs_tol, 1e-13)?.value;
            if ln_g(lo) < -40.0 || lo < f64::MIN_POSITIVE * 1e10 {
                // Below lo the tail integrand is 1 to double precision.
                p_total += lo;
                break;
            }
            hi = lo;
        }
    }

    // Right of s*: pieces growing geometrically away from s*.
    let width = s_max - s_star;
    let first = (0.25 * s_star).max(1e-300).min(width);
    let mut lo = s_star;
    let mut step = first;
    while lo < s_max {
        let hi = if lo + step >= s_max || s_max - (lo + step) < first {
            s_max
        } else {
            lo + step
        };
        if tail(lo) < 1e-30 && lo > s_star {
            break;
        }
        p_total += integrate(tail, lo, hi, abs_tol, 1e-13)?.value;
        d_total += integrate(dens, lo, hi, abs_tol, 1e-13)?.value;
        lo = hi;
        step *= 2.0;
    }

    Ok((p_total / PI, d_total * k / (PI * z)))
}

/// `F(x)` and `f(x)` from the integral representation. In `S1` coordinates
/// the split point of the representation is the origin.
fn nolan_cdf_pdf(p: &Params, x: f64) -> Result<(f64, f64), LimitError> {
    let y = x / p.sigma;
    if y > 0.0 {
        let (sf, d) = nolan_upper(p.alpha, -1.0, y)?;
        Ok((1.0 - sf, d / p.sigma))
    } else if y < 0.0 {
        // Reflection: X(beta) = -X(-beta).
        let (sf, d) = nolan_upper(p.alpha, 1.0, -y)?;
        Ok((sf, d / p.sigma))
    } else {
        let theta0 = (-(PI * p.alpha / 2.0).tan()).atan() / p.alpha;
        let (_, d) = nolan_upper(p.alpha, -1.0, 1e-12)?;
        Ok(((FRAC_PI_2 - theta0) / PI, d / p.sigma))
    }
}

#[derive(Debug)]
struct Table {
    cdf: Vec<f64>,
    pdf: Vec<f64>,
    dpdf: Vec<f64>,
    /// `cum[k] = integral of F from X_LO to node k`.
    cum: Vec<f64>,
    /// `integral of F over (-inf, X_LO]`.
    left_area: f64,
    /// `integral of 1 - F over [X_HI, inf)`.
    right_area: f64,
}

impl Table {
    fn build(p: &Params) -> Result<Table, LimitError> {
        let n = ((X_HI - X_LO) / STEP).round() as usize + 1;
        let mut cdf = Vec::with_capacity(n);
        let mut pdf = Vec::with_capacity(n);
        let mut dpdf = Vec::with_capacity(n);
        for k in 0..n {
            let x = X_LO + k as f64 * STEP;
            let (f, d, dd) = gil_pelaez(p, x)?;
            cdf.push(f.clamp(0.0, 1.0));
            pdf.push(d.max(0.0));
            dpdf.push(dd);
        }
        for k in 1..n {
            if cdf[k] < cdf[k - 1] {
                cdf[k] = cdf[k - 1];
            }
        }
        let mut cum = vec![0.0; n];
        for k in 1..n {
            let (f0, f1) = (cdf[k - 1], cdf[k]);
            let (d0, d1) = limited_slopes(f0, f1, pdf[k - 1], pdf[k]);
            cum[k] = cum[k - 1] + STEP * (0.5 * (f0 + f1) + STEP * (d0 - d1) / 12.0);
        }
        let left_area = nolan_left_area(p, X_LO)?;
        let right_area = integrate_upper_tail(
            |x| nolan_cdf_pdf(p, x).map(|(f, _)| 1.0 - f).unwrap_or(0.0),
            X_HI,
            1e-16,
            1e-10,
        )?
        .value;
        Ok(Table {
            cdf,
            pdf,
            dpdf,
            cum,
            left_area,
            right_area,
        })
    }

    fn locate(x: f64) -> (usize, f64) {
        let pos = (x - X_LO) / STEP;
        let k = (pos.floor() as usize).min(((X_HI - X_LO) / STEP).round() as usize - 1);
        (k, (pos - k as f64).clamp(0.0, 1.0))
    }

    fn cell(&self, k: usize) -> (f64, f64, f64, f64) {
        let (f0, f1) = (self.cdf[k], self.cdf[k + 1]);
        let (d0, d1) = limited_slopes(f0, f1, self.pdf[k], self.pdf[k + 1]);
        (f0, f1, d0, d1)
    }

    fn cdf_at(&self, x: f64) -> f64 {
        let (k, s) = Self::locate(x);
        let (f0, f1, d0, d1) = self.cell(k);
        hermite(f0, f1, STEP * d0, STEP * d1, s).clamp(f0, f1)
    }

    fn pdf_at(&self, x: f64) -> f64 {
        let (k, s) = Self::locate(x);
        hermite(
            self.pdf[k],
            self.pdf[k + 1],
            STEP * self.dpdf[k],
            STEP * self.dpdf[k + 1],
            s,
        )
        .max(0.0)
    }

    /// `integral of F from X_LO to x`.
    fn area_at(&self, x: f64) -> f64 {
        let (k, s) = Self::locate(x);
        let (f0, f1, d0, d1) = self.cell(k);
        let (s2, s3, s4) = (s * s, s * s * s, s * s * s * s);
        let i00 = s - s3 + 0.5 * s4;
        let i10 = 0.5 * s2 - 2.0 * s3 / 3.0 + 0.25 * s4;
        let i01 = s3 - 0.5 * s4;
        let i11 = -s3 / 3.0 + 0.25 * s4;
        self.cum[k] + STEP * (f0 * i00 + STEP * d0 * i10 + f1 * i01 + STEP * d1 * i11)
    }

    /// Inverts the interpolated CDF for `cdf[0] <= u <= cdf[last]`.
    fn quantile_at(&self, u: f64) -> f64 {
        let k = match self.cdf.partition_point(|&c| c < u) {
            0 => 0,
            i => (i - 1).min(self.cdf.len() - 2),
        };
        let (f0, f1, d0, d1) = self.cell(k);
        if f1 <= f0 {
            return X_LO + k as f64 * STEP;
        }
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        let mut s = ((u - f0) / (f1 - f0)).clamp(0.0, 1.0);
        for _ in 0..100 {
            let v = hermite(f0, f1, STEP * d0, STEP * d1, s) - u;
            if v > 0.0 {
                hi = s;
            } else {
                lo = s;
            }
            let dv = hermite_slope(f0, f1, STEP * d0, STEP * d1, s);
            let mut next = if dv > 0.0 { s - v / dv } else { f64::NAN };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - s).abs() < 1e-15 || hi - lo < 1e-15 {
                s = next;
                break;
            }
            s = next;
        }
        X_LO + (k as f64 + s) * STEP
    }
}

/// Cubic Hermite slopes with the Fritsch–Carlson limiter so each cell is monotone.
fn limited_slopes(f0: f64, f1: f64, d0: f64, d1: f64) -> (f64, f64) {
    let delta = (f1 - f0) / STEP;
    if delta <= 0.0 {
        return (0.0, 0.0);
    }
    let (a, b) = (d0 / delta, d1 / delta);
    let r = a * a + b * b;
    if r > 9.0 {
        let t = 3.0 / r.sqrt();
        (t * d0, t * d1)
    } else {
        (d0, d1)
    }
}

fn hermite(y0: f64, y1: f64, m0: f64, m1: f64, s: f64) -> f64 {
    let s2 = s * s;
    let s3 = s2 * s;
    y0 * (2.0 * s3 - 3.0 * s2 + 1.0)
        + m0 * (s3 - 2.0 * s2 + s)
        + y1 * (3.0 * s2 - 2.0 * s3)
        + m1 * (s3 - s2)
}

fn hermite_slope(y0: f64, y1: f64, m0: f64, m1: f64, s: f64) -> f64 {
    let s2 = s * s;
    y0 * (6.0 * s2 - 6.0 * s)
        + m0 * (3.0 * s2 - 4.0 * s + 1.0)
        + y1 * (6.0 * s - 6.0 * s2)
        + m1 * (3.0 * s2 - 2.0 * s)
}

/// `integral of F over (-inf, x]` for `x` in the left tail, via
/// `u = x w^-k` with `k = 2/(alpha-1)`, which makes the integrand smooth at `w = 0`.
fn nolan_left_area(p: &Params, x: f64) -> Result<f64, LimitError> {
    debug_assert!(x < 0.0);
    let k = 2.0 / (p.alpha - 1.0);
    let mut failure = None;
    let r = integrate(
        |w| {
            if w == 0.0 {
                return 0.0;
            }
            let u = x * w.powf(-k);
            match nolan_cdf_pdf(p, u) {
                Ok((f, _)) => f * x.abs() * k * w.powf(-k - 1.0),
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            }
        },
        0.0,
        1.0,
        1e-15,
        1e-11,
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok(r.value),
    }
}

type TableSlot = Arc<OnceLock<Result<Table, LimitError>>>;

fn tables() -> &'static Mutex<HashMap<u64, TableSlot>> {
    static TABLES: OnceLock<Mutex<HashMap<u64, TableSlot>>> = OnceLock::new();
    TABLES.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Handle on the stable law for one `alpha`; the shared table is built on first use.
#[derive(Debug, Clone)]
pub struct StableLaw {
    params: Params,
    cell: Arc<OnceLock<Result<Table, LimitError>>>,
}

impl StableLaw {
    pub fn new(alpha: f64) -> Result<Self, LimitError> {
        if !(alpha > 1.0 && alpha < 2.0) {
            return Err(LimitError::BadAlpha(alpha));
        }
        let cell = {
            let mut map = tables().lock().unwrap_or_else(|e| e.into_inner());
            map.entry(alpha.to_bits()).or_default().clone()
        };
        Ok(StableLaw {
            params: Params::new(alpha),
            cell,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.params.alpha
    }

    /// Scale `sigma` of the equivalent `S1(alpha, -1, sigma, 0)` law.
    pub fn sigma(&self) -> f64 {
        self.params.sigma
    }

    fn table(&self) -> Result<&Table, LimitError> {
        self.cell
            .get_or_init(|| Table::build(&self.params))
            .as_ref()
            .map_err(Clone::clone)
    }

    /// Characteristic function `(Re, Im)` at `t`.
    pub fn char_fn(&self, t: f64) -> (f64, f64) {
        let Params { alpha, c, tau, .. } = self.params;
        let m = t.abs().powf(alpha) * c;
        let (sin, cos) = (-m * tau * t.signum()).sin_cos();
        let r = (-m).exp();
        (r * cos, r * sin)
    }

    pub fn cdf(&self, x: f64) -> Result<f64, LimitError> {
        if x.is_nan() {
            return Err(LimitError::NotANumber);
        }
        if x == f64::NEG_INFINITY {
            return Ok(0.0);
        }
        if x == f64::INFINITY {
            return Ok(1.0);
        }
        if (X_LO..=X_HI).contains(&x) {
            Ok(self.table()?.cdf_at(x))
        } else {
            Ok(nolan_cdf_pdf(&self.params, x)?.0)
        }
    }

    pub fn pdf(&self, x: f64) -> Result<f64, LimitError> {
        if !x.is_finite() {
            return Ok(0.0);
        }
        if (X_LO..=X_HI).contains(&x) {
            Ok(self.table()?.pdf_at(x))
        } else {
            Ok(nolan_cdf_pdf(&self.params, x)?.1)
        }
    }

    /// CDF by direct Gil–Pelaez inversion, bypassing the table.
    pub fn cdf_direct(&self, x: f64) -> Result<f64, LimitError> {
        Ok(gil_pelaez(&self.params, x)?.0)
    }

    /// CDF from the integral representation, bypassing the table.
    pub fn cdf_integral_repr(&self, x: f64) -> Result<f64, LimitError> {
        Ok(nolan_cdf_pdf(&self.params, x)?.0)
    }

    pub fn quantile(&self, u: f64) -> Result<f64, LimitError> {
        if !(u > 0.0 && u < 1.0) {
            return Err(LimitError::LevelOutOfRange(u));
        }
        let t = self.table()?;
        let last = *t.cdf.last().expect("table is non-empty");
        if u >= t.cdf[0] && u <= last {
            return Ok(t.quantile_at(u));
        }
        let f = |x: f64| {
            nolan_cdf_pdf(&self.params, x)
                .map(|(c, _)| c - u)
                .unwrap_or(f64::NAN)
        };
        let (lo, hi) = if u < t.cdf[0] {
            let mut lo = -2.0 * u.powf(-1.0 / self.params.alpha) - 1.0;
            while f(lo) > 0.0 {
                lo *= 2.0;
            }
            (lo, X_LO)
        } else {
            let mut hi = X_HI + 1.0;
            while f(hi) < 0.0 {
                hi += 1.0;
            }
            (X_HI, hi)
        };
        let tol = 1e-13 * lo.abs().max(hi.abs());
        brent(f, lo, hi, tol).map_err(|e| LimitError::NoRoot(e.to_string()))
    }

    /// `E (x - X)^+ = integral of F over (-inf, x]`.
    pub fn lower_partial(&self, x: f64) -> Result<f64, LimitError> {
        if x < X_LO {
            return nolan_left_area(&self.params, x);
        }
        let t = self.table()?;
        if x <= X_HI {
            return Ok(t.left_area + t.area_at(x));
        }
        // Mean zero: E(x - X)^+ = x + E(X - x)^+.
        Ok(x + self.upper_partial(x)?)
    }

    /// `E (X - x)^+ = integral of 1 - F over [x, inf)`.
    pub fn upper_partial(&self, x: f64) -> Result<f64, LimitError> {
        if x > X_HI {
            let r = integrate_upper_tail(
                |y| {
                    nolan_cdf_pdf(&self.params, y)
                        .map(|(f, _)| 1.0 - f)
                        .unwrap_or(0.0)
                },
                x,
                1e-16,
                1e-10,
            )?;
            return Ok(r.value);
        }
        Ok(self.lower_partial(x)? - x)
    }

    /// Total `integral of 1 - F over [X_HI, inf)` stored with the table; exposed for diagnostics.
    pub fn table_tail_areas(&self) -> Result<(f64, f64), LimitError> {
        let t = self.table()?;
        Ok((t.left_area, t.right_area))
    }

    /// Chambers–Mallows–Stuck draw, independent of the tabulated CDF.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let Params {
            alpha, tau, sigma, ..
        } = self.params;
        let beta = -1.0_f64;
        let b = (beta * tau).atan() / alpha;
        let s = (1.0 + beta * beta * tau * tau).powf(1.0 / (2.0 * alpha));
        let v = PI * (rng.random::<f64>() - 0.5);
        let w = -(1.0 - rng.random::<f64>()).ln();
        let x = s * (alpha * (v + b)).sin() / v.cos().powf(1.0 / alpha)
            * ((v - alpha * (v + b)).cos() / w).powf((1.0 - alpha) / alpha);
        sigma * x
    }
}

/// `F(x)` for the stable law of index `alpha`.
pub fn stable_cdf(alpha: f64, x: f64) -> Result<f64, LimitError> {
    StableLaw::new(alpha)?.cdf(x)
}

/// Quantile of the stable law of index `alpha`.
pub fn stable_quantile(alpha: f64, u: f64) -> Result<f64, LimitError> {
    StableLaw::new(alpha)?.quantile(u)
}
