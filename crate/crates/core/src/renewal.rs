//! Renewal counting processes: the additive `N_n` (exact law), the
//! multiplicative `Lambda_t` and its stationary version (samplers).

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::absorb::{substream, AbsorbError, AbsorptionTable, SIM_TASK_SIZE};
use crate::dist::{DistError, LatticeDist};
use crate::models::{DecrementModel, EtaLaw, IntStep, ModelError};
use crate::numeric::special::beta_reg;
use crate::numeric::{brent, integrate, neumaier_sum, CompensatedSum, QuadError};

#[derive(Debug, Error)]
pub enum RenewalError {
    #[error(transparent)]
    Absorb(#[from] AbsorbError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error("level {0} is outside (0, 1)")]
    BadLevel(f64),
    #[error("stationary delay quantile did not converge at level {0}")]
    NoConvergence(f64),
}

/// Law of `N_n = #{k >= 0 : S_k < n}` through the absorption DP with
/// decrement `xi ∧ s`.
pub fn additive_count_law(xi: &IntStep, n: u64, budget: f64) -> Result<LatticeDist, RenewalError> {
    let model = DecrementModel::renewal(xi.clone())?;
    Ok(AbsorptionTable::build(&model, n, budget)?.lattice(n)?)
}

/// Same law by forward convolution: `P(N_n > k) = P(S_k < n)`. Iteration
/// stops once `P(S_k < n) <= budget`; that mass is reported as pruned.
pub fn additive_count_law_forward(
    xi: &IntStep,
    n: u64,
    budget: f64,
) -> Result<LatticeDist, RenewalError> {
    xi.validate()?;
    if n == 0 {
        return Ok(LatticeDist::point(0.0));
    }
    let len = n as usize;
    let step = xi.pmf_upto(n - 1);
    // defective law of S_k restricted to {0, ..., n-1}
    let mut v = vec![0.0; len];
    v[0] = 1.0;
    let mut below = 1.0;
    let mut pmf = vec![0.0];
    loop {
        let mut next = vec![0.0; len];
        for (x, &m) in v.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            for (j, &p) in step.iter().enumerate().take(len - x).skip(1) {
                next[x + j] += m * p;
            }
        }
        let now = neumaier_sum(next.iter().copied());
        pmf.push((below - now).max(0.0));
        below = now;
        v = next;
        if below <= budget || pmf.len() > len + 1 {
            break;
        }
    }
    let kept: f64 = pmf.iter().sum();
    Ok(LatticeDist::from_int_pmf(0, &pmf, (1.0 - kept).max(0.0))?)
}

impl IntStep {
    /// Wraps a finite law on positive integers.
    pub fn from_lattice(dist: &LatticeDist) -> Result<Self, ModelError> {
        let s = IntStep::Table { dist: dist.clone() };
        s.validate()?;
        Ok(s)
    }
}

/// `P(|log eta| > s)`.
fn log_sf(eta: &EtaLaw, s: f64) -> f64 {
    if s < 0.0 {
        return 1.0;
    }
    match *eta {
        EtaLaw::Beta { alpha, beta } => beta_reg(alpha, beta, (-s).exp()),
        EtaLaw::Point { w } => {
            if s < -w.ln() {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Knots of the stationary delay CDF.
pub const DELAY_KNOTS: usize = 10_000;
const DELAY_TAIL: f64 = 1e-16;

/// Law of the stationary delay `D = |log eta_0*|`,
/// `r(t) = P(D <= t) = (1/mu0) int_0^t P(|log eta| > s) ds`.
#[derive(Debug, Clone)]
pub struct StationaryDelay {
    eta: EtaLaw,
    mu0: f64,
    knots: Vec<f64>,
    cdf: Vec<f64>,
    density: Vec<f64>,
}

impl StationaryDelay {
    pub fn new(eta: &EtaLaw) -> Result<Self, RenewalError> {
        eta.validate()?;
        let mu0 = eta.mu0();
        if let EtaLaw::Point { .. } = eta {
            return Ok(StationaryDelay {
                eta: *eta,
                mu0,
                knots: vec![0.0, mu0],
                cdf: vec![0.0, 1.0],
                density: vec![1.0 / mu0; 2],
            });
        }
        let mut t_max = mu0.max(1.0);
        while log_sf(eta, t_max) > DELAY_TAIL * mu0 {
            t_max *= 2.0;
        }
        let k = DELAY_KNOTS as f64;
        let knots: Vec<f64> = (0..=DELAY_KNOTS)
            .map(|i| t_max * (i as f64 / k).powi(2))
            .collect();
        let mut cdf = Vec::with_capacity(knots.len());
        let mut acc = CompensatedSum::new();
        cdf.push(0.0);
        for w in knots.windows(2) {
            acc.add(integrate(|s| log_sf(eta, s), w[0], w[1], 1e-17, 1e-13)?.value / mu0);
            cdf.push(acc.value());
        }
        let density = knots.iter().map(|&t| log_sf(eta, t) / mu0).collect();
        Ok(StationaryDelay {
            eta: *eta,
            mu0,
            knots,
            cdf,
            density,
        })
    }

    pub fn mu0(&self) -> f64 {
        self.mu0
    }

    /// `r(t)` by quadrature from the nearest knot below.
    pub fn cdf(&self, t: f64) -> Result<f64, RenewalError> {
        if t <= 0.0 {
            return Ok(0.0);
        }
        if let EtaLaw::Point { .. } = self.eta {
            return Ok((t / self.mu0).min(1.0));
        }
        let last = self.knots.len() - 1;
        let i = (self.knots.partition_point(|&k| k <= t) - 1).min(last);
        let extra =
            integrate(|s| log_sf(&self.eta, s), self.knots[i], t, 1e-17, 1e-13)?.value / self.mu0;
        Ok((self.cdf[i] + extra).min(1.0))
    }

    /// `r^-1(u)`: bracket on the knot grid, then root-find on the exact `r`.
    pub fn quantile(&self, u: f64) -> Result<f64, RenewalError> {
        if !(u > 0.0 && u < 1.0) {
            return Err(RenewalError::BadLevel(u));
        }
        if let EtaLaw::Point { .. } = self.eta {
            return Ok(u * self.mu0);
        }
        let (lo, hi) = match self.cdf.partition_point(|&c| c <= u) {
            i if i < self.cdf.len() => (self.knots[i - 1], self.knots[i]),
            _ => {
                let mut hi = 2.0 * self.knots[self.knots.len() - 1];
                while self.cdf(hi)? <= u {
                    hi *= 2.0;
                    if !hi.is_finite() {
                        return Err(RenewalError::NoConvergence(u));
                    }
                }
                (self.knots[self.knots.len() - 1], hi)
            }
        };
        let mut err = None;
        let root = brent(
            |t| match self.cdf(t) {
                Ok(c) => c - u,
                Err(e) => {
                    err = Some(e);
                    0.0
                }
            },
            lo,
            hi,
            1e-14 * hi.max(1.0),
        );
        if let Some(e) = err {
            return Err(e);
        }
        root.map_err(|_| RenewalError::NoConvergence(u))
    }

    /// Fast inversion by cubic Hermite interpolation of `r` between knots.
    pub fn quantile_interpolated(&self, u: f64) -> f64 {
        if let EtaLaw::Point { .. } = self.eta {
            return u * self.mu0;
        }
        let i = self.cdf.partition_point(|&c| c <= u);
        if i == 0 {
            return 0.0;
        }
        if i >= self.cdf.len() {
            // beyond the grid the tail is below DELAY_TAIL; take the exact route
            return self.quantile(u).unwrap_or(self.knots[self.knots.len() - 1]);
        }
        let (t0, t1) = (self.knots[i - 1], self.knots[i]);
        let h = t1 - t0;
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let (d0, d1) = (self.density[i - 1] * h, self.density[i] * h);
        let herm = |x: f64| {
            let x2 = x * x;
            let x3 = x2 * x;
            (2.0 * x3 - 3.0 * x2 + 1.0) * c0
                + (x3 - 2.0 * x2 + x) * d0
                + (-2.0 * x3 + 3.0 * x2) * c1
                + (x3 - x2) * d1
        };
        let dherm = |x: f64| {
            let x2 = x * x;
            (6.0 * x2 - 6.0 * x) * c0
                + (3.0 * x2 - 4.0 * x + 1.0) * d0
                + (-6.0 * x2 + 6.0 * x) * c1
                + (3.0 * x2 - 2.0 * x) * d1
        };
        let (mut a, mut b) = (0.0, 1.0);
        let mut x = ((u - c0) / (c1 - c0)).clamp(0.0, 1.0);
        for _ in 0..60 {
            let f = herm(x) - u;
            if f > 0.0 {
                b = x;
            } else {
                a = x;
            }
            let df = dherm(x);
            let mut nx = if df > 0.0 { x - f / df } else { 0.5 * (a + b) };
            if !(nx > a && nx < b) {
                nx = 0.5 * (a + b);
            }
            if (nx - x).abs() < 1e-15 {
                x = nx;
                break;
            }
            x = nx;
        }
        t0 + x * h
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.quantile_interpolated(u.max(f64::MIN_POSITIVE))
    }
}

/// `r^-1(u)` for the factor law `eta`.
pub fn stationary_delay_quantile(u: f64, eta: &EtaLaw) -> Result<f64, RenewalError> {
    if !(u > 0.0 && u < 1.0) {
        return Err(RenewalError::BadLevel(u));
    }
    StationaryDelay::new(eta)?.quantile(u)
}

/// Counts of one walk `S_k = -log Pi_k` at level `s`: `Lambda_s` and
/// `Lambda*_s = Lambda_{s - delay}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CoupledCounts {
    pub plain: u64,
    pub stationary: u64,
}

/// `Lambda_s` and `Lambda_{s - delay}` from one path of the walk.
pub fn coupled_counts<R: Rng + ?Sized>(
    eta: &EtaLaw,
    s: f64,
    delay: f64,
    rng: &mut R,
) -> CoupledCounts {
    let shifted = s - delay;
    let mut walk = 0.0;
    let mut k = 0u64;
    let mut stationary = None;
    while walk <= s {
        if stationary.is_none() && walk > shifted {
            stationary = Some(k);
        }
        k += 1;
        walk += -eta.sample(rng).ln();
    }
    CoupledCounts {
        plain: k,
        stationary: stationary.unwrap_or(k),
    }
}

/// `L_t = Lambda_{log t}`, or `L*_t` when a stationary delay law is given.
pub fn mult_count_sample<R: Rng + ?Sized>(
    eta: &EtaLaw,
    t: f64,
    delay: Option<&StationaryDelay>,
    rng: &mut R,
) -> u64 {
    let s = t.ln();
    let d = delay.map(|d| d.sample(rng)).unwrap_or(0.0);
    let c = coupled_counts(eta, s, d, rng);
    if delay.is_some() {
        c.stationary
    } else {
        c.plain
    }
}

/// `m` coupled draws at level `s = log t`, deterministic in `seed`.
pub fn coupled_batch(
    eta: &EtaLaw,
    delay: &StationaryDelay,
    s: f64,
    m: usize,
    seed: u64,
) -> Vec<CoupledCounts> {
    let tasks = m.div_ceil(SIM_TASK_SIZE);
    let chunks: Vec<Vec<CoupledCounts>> = (0..tasks)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, i as u64);
            let len = SIM_TASK_SIZE.min(m - i * SIM_TASK_SIZE);
            (0..len)
                .map(|_| {
                    let d = delay.sample(&mut rng);
                    coupled_counts(eta, s, d, &mut rng)
                })
                .collect()
        })
        .collect();
    chunks.concat()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::absorb::default_budget;
    use crate::dist::StepLaw;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn assert_laws_close(a: &LatticeDist, b: &LatticeDist, tol: f64) {
        let lo = a.min_atom().min(b.min_atom()) as i64;
        let hi = a.max_atom().max(b.max_atom()) as i64;
        for k in lo..=hi {
            let (x, y) = (a.pmf_at(k as f64), b.pmf_at(k as f64));
            assert!((x - y).abs() <= tol, "k={k}: {x} vs {y}");
        }
    }

    #[test]
    fn unit_steps_count_n() {
        let xi = IntStep::uniform(1, 1);
        for n in [1, 7, 100] {
            assert_eq!(
                additive_count_law(&xi, n, 0.0).unwrap().atoms(),
                &[n as f64]
            );
            assert_eq!(
                additive_count_law_forward(&xi, n, 0.0).unwrap().atoms(),
                &[n as f64]
            );
        }
        assert_eq!(
            additive_count_law_forward(&xi, 0, 0.0).unwrap().atoms(),
            &[0.0]
        );
    }

    #[test]
    fn two_point_steps_by_enumeration() {
        let xi = IntStep::uniform(1, 2);
        for law in [
            additive_count_law(&xi, 2, 0.0).unwrap(),
            additive_count_law_forward(&xi, 2, 0.0).unwrap(),
        ] {
            assert_eq!(law.atoms(), &[1.0, 2.0]);
            assert!((law.masses()[0] - 0.5).abs() < 1e-15 && (law.masses()[1] - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn routes_agree() {
        let xi = IntStep::uniform(1, 3);
        for n in [1, 2, 10, 250, 1000] {
            let a = additive_count_law(&xi, n, 0.0).unwrap();
            let b = additive_count_law_forward(&xi, n, 0.0).unwrap();
            assert_laws_close(&a, &b, 1e-11);
        }
        let skew = IntStep::from_lattice(
            &LatticeDist::new(vec![1.0, 4.0, 9.0], vec![0.5, 0.3, 0.2]).unwrap(),
        )
        .unwrap();
        for n in [3, 57, 400] {
            assert_laws_close(
                &additive_count_law(&skew, n, 0.0).unwrap(),
                &additive_count_law_forward(&skew, n, 0.0).unwrap(),
                1e-11,
            );
        }
        let heavy = IntStep::pareto(1.5);
        for n in [5, 60, 300] {
            assert_laws_close(
                &additive_count_law(&heavy, n, 0.0).unwrap(),
                &additive_count_law_forward(&heavy, n, 0.0).unwrap(),
                1e-11,
            );
        }
    }

    #[test]
    fn elementary_renewal_trend() {
        let xi = IntStep::uniform(1, 3);
        let mu = 2.0;
        let mut errs = Vec::new();
        for n in [100u64, 1000, 10_000] {
            let m =
                crate::absorb::absorption_mean(&DecrementModel::renewal(xi.clone()).unwrap(), n)
                    .unwrap();
            errs.push((m * mu / n as f64 - 1.0).abs());
        }
        assert!(
            errs[0] < 0.02 && errs[2] < 0.002 && errs[1] > errs[2],
            "{errs:?}"
        );
    }

    #[test]
    fn mean_minus_linear_stays_bounded() {
        let model = DecrementModel::renewal(IntStep::uniform(1, 3)).unwrap();
        let t = AbsorptionTable::build(&model, 10_000, default_budget(10_000)).unwrap();
        let dev = |n: u64| (t.mean(n).unwrap() - n as f64 / 2.0).abs();
        let bound = (1..=10).map(dev).fold(0.0, f64::max);
        assert!((11..=10_000).all(|n| dev(n) <= bound + 1e-9));
    }

    #[test]
    fn zero_delayed_below_one_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in [0.1, 0.5, 0.999] {
            assert_eq!(mult_count_sample(&EtaLaw::uniform(), t, None, &mut rng), 0);
        }
    }

    #[test]
    fn point_factor_counts_floor_plus_one() {
        let eta = EtaLaw::Point { w: (-1.0f64).exp() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for s in [0.5, 1.5, 2.7, 7.2] {
            assert_eq!(
                mult_count_sample(&eta, f64::exp(s), None, &mut rng),
                s.floor() as u64 + 1
            );
        }
    }

    #[test]
    fn delay_quantiles() {
        let q = stationary_delay_quantile(0.5, &EtaLaw::uniform()).unwrap();
        assert!((q - 2f64.ln()).abs() < 1e-10, "{q}");
        let p = stationary_delay_quantile(0.5, &EtaLaw::Point { w: (-1.0f64).exp() }).unwrap();
        assert!((p - 0.5).abs() < 1e-12);
        let d = StationaryDelay::new(&EtaLaw::uniform()).unwrap();
        for i in 1..200 {
            let u = i as f64 / 200.0;
            assert!((d.quantile(u).unwrap() + (-u).ln_1p()).abs() < 1e-10);
            assert!((d.cdf(-(-u).ln_1p()).unwrap() - u).abs() < 1e-12);
        }
        assert!(stationary_delay_quantile(1.0, &EtaLaw::uniform()).is_err());
        assert!(stationary_delay_quantile(0.0, &EtaLaw::uniform()).is_err());
    }

    #[test]
    fn delay_quantile_monotone_and_interpolation_close() {
        for eta in [
            EtaLaw::Beta {
                alpha: 0.5,
                beta: 0.5,
            },
            EtaLaw::Beta {
                alpha: 2.0,
                beta: 0.7,
            },
        ] {
            let d = StationaryDelay::new(&eta).unwrap();
            let mut prev = 0.0;
            for i in 1..100 {
                let u = i as f64 / 100.0;
                let q = d.quantile(u).unwrap();
                assert!(q > prev);
                prev = q;
                assert!(
                    (d.quantile_interpolated(u) - q).abs() < 1e-8 * q.max(1.0),
                    "{eta:?} u={u}"
                );
            }
        }
    }

    #[test]
    fn delay_cdf_matches_integrated_tail() {
        // mu0 r(t) = E[min(|log eta|, t)]
        let eta = EtaLaw::Beta {
            alpha: 1.5,
            beta: 2.0,
        };
        let d = StationaryDelay::new(&eta).unwrap();
        let law = eta.log_law().unwrap();
        use crate::limits::ContinuousLaw;
        for t in [0.1, 0.7, 2.0, 6.0] {
            // E[min(|X|, t)] = t - int_{-t}^0 ... computed through the lower partial
            let want = (eta.mu0() - law.lower_partial(-t).unwrap()) / eta.mu0();
            assert!((d.cdf(t).unwrap() - want).abs() < 1e-10, "t={t}");
        }
    }

    #[test]
    fn stationary_mean_is_linear() {
        let eta = EtaLaw::uniform();
        let d = StationaryDelay::new(&eta).unwrap();
        let s = 10.0;
        let draws = coupled_batch(&eta, &d, s, 100_000, 17);
        let m = draws.len() as f64;
        let mean = draws.iter().map(|c| c.stationary as f64).sum::<f64>() / m;
        let var = draws
            .iter()
            .map(|c| (c.stationary as f64 - mean).powi(2))
            .sum::<f64>()
            / (m - 1.0);
        assert!((mean - s).abs() < 3.0 * (var / m).sqrt(), "{mean}");
        assert!(draws.iter().all(|c| c.stationary <= c.plain));
    }

    #[test]
    fn subadditive_in_distribution() {
        let eta = EtaLaw::Beta {
            alpha: 1.0,
            beta: 2.0,
        };
        let m = 20_000;
        for (u, v) in [(1.0, 2.0), (3.0, 1.5), (0.5, 4.0)] {
            let mut rng = ChaCha8Rng::seed_from_u64(23);
            let mut inc = vec![0u64; m];
            let mut single = vec![0u64; m];
            for i in 0..m {
                // one path gives both Lambda_u and Lambda_{u+v}
                let mut walk = 0.0;
                let (mut at_u, mut k) = (None, 0u64);
                loop {
                    if at_u.is_none() && walk > u {
                        at_u = Some(k);
                    }
                    if walk > u + v {
                        break;
                    }
                    k += 1;
                    walk += -eta.sample(&mut rng).ln();
                }
                inc[i] = k - at_u.unwrap();
                single[i] = coupled_counts(&eta, v, 0.0, &mut rng).plain;
            }
            let top = *inc.iter().chain(&single).max().unwrap();
            for x in 0..=top {
                let p_inc = inc.iter().filter(|&&c| c > x).count() as f64 / m as f64;
                let p_one = single.iter().filter(|&&c| c > x).count() as f64 / m as f64;
                let band = 3.0
                    * ((p_inc * (1.0 - p_inc) + p_one * (1.0 - p_one)) / m as f64).sqrt()
                    + 1e-12;
                assert!(
                    p_inc <= p_one + band,
                    "u={u} v={v} x={x}: {p_inc} > {p_one}"
                );
            }
        }
    }

    #[test]
    fn count_laws_carry_full_mass() {
        let law = additive_count_law_forward(&IntStep::uniform(2, 5), 100, 1e-13).unwrap();
        assert!((law.total_mass() - 1.0).abs() < 1e-12);
    }
}
