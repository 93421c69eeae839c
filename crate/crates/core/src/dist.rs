//! Finite discrete laws on the real line.
//!
//! A [`LatticeDist`] stores strictly increasing atoms with positive masses and
//! the total mass removed by pruning. Pruned mass is never redistributed: CDFs
//! sum retained mass only, which places the pruned mass beyond every retained
//! atom, and every consumer can read the exact amount that was dropped.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{neumaier_sum, CompensatedSum};

/// Atoms closer than this are merged into one.
pub const ATOM_MERGE_TOL: f64 = 1e-12;
/// Allowed deviation of `sum(masses) + pruned_mass` from one.
pub const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum DistError {
    #[error("law has no atoms")]
    Empty,
    #[error("atoms and masses differ in length ({atoms} vs {masses})")]
    LengthMismatch { atoms: usize, masses: usize },
    #[error("atoms must be finite and strictly increasing (index {index})")]
    UnsortedAtoms { index: usize },
    #[error("mass at index {index} is not a positive finite number: {mass}")]
    BadMass { index: usize, mass: f64 },
    #[error("retained plus pruned mass is {total}, expected 1")]
    NotNormalized { total: f64 },
    #[error("pruned mass must be nonnegative, got {0}")]
    BadPrunedMass(f64),
    #[error("probability level {0} is outside (0, 1)")]
    LevelOutOfRange(f64),
    #[error("scale must be positive and finite, got {0}")]
    BadScale(f64),
}

/// Read access shared by [`LatticeDist`] and [`AffineView`].
pub trait StepLaw {
    fn len(&self) -> usize;
    fn atom(&self, i: usize) -> f64;
    fn mass(&self, i: usize) -> f64;
    /// Retained mass of atoms `0..=i`.
    fn cum(&self, i: usize) -> f64;
    fn pruned_mass(&self) -> f64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn total_mass(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.cum(self.len() - 1)
        }
    }

    fn min_atom(&self) -> f64 {
        self.atom(0)
    }

    fn max_atom(&self) -> f64 {
        self.atom(self.len() - 1)
    }

    /// Right-continuous CDF over retained mass.
    fn cdf(&self, x: f64) -> f64 {
        let (mut lo, mut hi) = (0usize, self.len());
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.atom(mid) <= x {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        if lo == 0 {
            0.0
        } else {
            self.cum(lo - 1)
        }
    }

    /// Left-continuous generalized inverse `inf{y : F(y) >= u}`.
    ///
    /// Levels above the retained mass map to `+inf`, where pruned mass lives.
    fn quantile(&self, u: f64) -> Result<f64, DistError> {
        if !(u > 0.0 && u < 1.0) {
            return Err(DistError::LevelOutOfRange(u));
        }
        let (mut lo, mut hi) = (0usize, self.len());
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.cum(mid) >= u {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        Ok(if lo == self.len() {
            f64::INFINITY
        } else {
            self.atom(lo)
        })
    }

    /// Absolute moment `sum mass * |atom|^p` over retained atoms.
    fn moment(&self, p: f64) -> f64 {
        neumaier_sum((0..self.len()).map(|i| self.mass(i) * self.atom(i).abs().powf(p)))
    }

    fn mean(&self) -> f64 {
        neumaier_sum((0..self.len()).map(|i| self.mass(i) * self.atom(i)))
    }

    fn variance(&self) -> f64 {
        let m = self.mean();
        neumaier_sum((0..self.len()).map(|i| {
            let d = self.atom(i) - m;
            self.mass(i) * d * d
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLattice", into = "RawLattice")]
pub struct LatticeDist {
    atoms: Vec<f64>,
    masses: Vec<f64>,
    cum: Vec<f64>,
    pruned_mass: f64,
}

/// Wire form: `{"atoms": [...], "masses": [...], "pruned_mass": x}`.
#[derive(Serialize, Deserialize)]
struct RawLattice {
    atoms: Vec<f64>,
    masses: Vec<f64>,
    #[serde(default)]
    pruned_mass: f64,
}

impl TryFrom<RawLattice> for LatticeDist {
    type Error = DistError;
    fn try_from(raw: RawLattice) -> Result<Self, DistError> {
        LatticeDist::with_pruned(raw.atoms, raw.masses, raw.pruned_mass)
    }
}

impl From<LatticeDist> for RawLattice {
    fn from(d: LatticeDist) -> Self {
        RawLattice {
            atoms: d.atoms,
            masses: d.masses,
            pruned_mass: d.pruned_mass,
        }
    }
}

fn cumulative(masses: &[f64]) -> Vec<f64> {
    let mut acc = CompensatedSum::new();
    masses
        .iter()
        .map(|&m| {
            acc.add(m);
            acc.value()
        })
        .collect()
}

impl LatticeDist {
    pub fn new(atoms: Vec<f64>, masses: Vec<f64>) -> Result<Self, DistError> {
        Self::with_pruned(atoms, masses, 0.0)
    }

    pub fn with_pruned(
        atoms: Vec<f64>,
        masses: Vec<f64>,
        pruned_mass: f64,
    ) -> Result<Self, DistError> {
        if atoms.len() != masses.len() {
            return Err(DistError::LengthMismatch {
                atoms: atoms.len(),
                masses: masses.len(),
            });
        }
        if atoms.is_empty() {
            return Err(DistError::Empty);
        }
        if !(pruned_mass >= 0.0 && pruned_mass.is_finite()) {
            return Err(DistError::BadPrunedMass(pruned_mass));
        }
        for (i, w) in atoms.windows(2).enumerate() {
            if !(w[0] < w[1]) {
                return Err(DistError::UnsortedAtoms { index: i + 1 });
            }
        }
        if let Some(i) = atoms.iter().position(|a| !a.is_finite()) {
            return Err(DistError::UnsortedAtoms { index: i });
        }
        if let Some(i) = masses.iter().position(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(DistError::BadMass {
                index: i,
                mass: masses[i],
            });
        }
        let cum = cumulative(&masses);
        let total = cum[cum.len() - 1] + pruned_mass;
        if (total - 1.0).abs() > MASS_TOL {
            return Err(DistError::NotNormalized { total });
        }
        Ok(Self {
            atoms,
            masses,
            cum,
            pruned_mass,
        })
    }

    /// Builds a law from unsorted `(atom, mass)` pairs: sorts, merges atoms
    /// within [`ATOM_MERGE_TOL`] and drops zero masses.
    pub fn from_pairs<I: IntoIterator<Item = (f64, f64)>>(
        pairs: I,
        pruned_mass: f64,
    ) -> Result<Self, DistError> {
        let mut v: Vec<(f64, f64)> = pairs.into_iter().collect();
        if let Some(i) = v.iter().position(|&(_, m)| !(m >= 0.0 && m.is_finite())) {
            return Err(DistError::BadMass {
                index: i,
                mass: v[i].1,
            });
        }
        if let Some(i) = v.iter().position(|&(a, _)| !a.is_finite()) {
            return Err(DistError::UnsortedAtoms { index: i });
        }
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (atoms, masses) = merge_sorted(v);
        Self::with_pruned(atoms, masses, pruned_mass)
    }

    pub fn point(c: f64) -> Self {
        Self::new(vec![c], vec![1.0]).expect("finite point mass")
    }

    /// Uniform law on the integers `lo..=hi`.
    pub fn uniform_int(lo: i64, hi: i64) -> Self {
        assert!(lo <= hi, "empty integer range");
        let n = (hi - lo + 1) as f64;
        let atoms = (lo..=hi).map(|k| k as f64).collect::<Vec<_>>();
        let masses = vec![1.0 / n; atoms.len()];
        Self::new(atoms, masses).expect("uniform law is valid")
    }

    /// Law with `P(X = offset + i) = probs[i]`; zero entries are skipped.
    pub fn from_int_pmf(offset: i64, probs: &[f64], pruned_mass: f64) -> Result<Self, DistError> {
        let mut atoms = Vec::with_capacity(probs.len());
        let mut masses = Vec::with_capacity(probs.len());
        for (i, &p) in probs.iter().enumerate() {
            if p > 0.0 {
                atoms.push((offset + i as i64) as f64);
                masses.push(p);
            } else if !(p == 0.0) {
                return Err(DistError::BadMass { index: i, mass: p });
            }
        }
        Self::with_pruned(atoms, masses, pruned_mass)
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn is_integer_valued(&self) -> bool {
        self.atoms
            .iter()
            .all(|a| a.fract() == 0.0 && a.abs() < 9.0e15)
    }

    /// Law of `(X - shift) / scale` without copying atoms.
    pub fn affine(&self, shift: f64, scale: f64) -> Result<AffineView<'_>, DistError> {
        AffineView::new(self, shift, scale)
    }

    /// Law of `a X + b` as a new lattice law (`a` may be negative).
    pub fn map_affine(&self, a: f64, b: f64) -> LatticeDist {
        if a == 0.0 {
            return LatticeDist::with_pruned(vec![b], vec![self.total_mass()], self.pruned_mass)
                .expect("degenerate image keeps mass");
        }
        let pairs = self
            .atoms
            .iter()
            .zip(&self.masses)
            .map(|(&x, &m)| (a * x + b, m));
        LatticeDist::from_pairs(pairs, self.pruned_mass).expect("affine image keeps validity")
    }

    pub fn pmf_at(&self, x: f64) -> f64 {
        let i = self.atoms.partition_point(|&a| a < x - ATOM_MERGE_TOL);
        match self.atoms.get(i) {
            Some(&a) if (a - x).abs() <= ATOM_MERGE_TOL => self.masses[i],
            _ => 0.0,
        }
    }

    /// Conditional law given `X <= x` (retained atoms only).
    pub fn condition_at_most(&self, x: f64) -> Option<LatticeDist> {
        let k = self.atoms.partition_point(|&a| a <= x);
        if k == 0 {
            return None;
        }
        let total = self.cum[k - 1];
        let masses = self.masses[..k].iter().map(|m| m / total).collect();
        LatticeDist::new(self.atoms[..k].to_vec(), masses).ok()
    }
}

fn merge_sorted(v: Vec<(f64, f64)>) -> (Vec<f64>, Vec<f64>) {
    let mut atoms: Vec<f64> = Vec::with_capacity(v.len());
    let mut masses: Vec<f64> = Vec::with_capacity(v.len());
    for (a, m) in v {
        match atoms.last() {
            Some(&last) if a - last <= ATOM_MERGE_TOL => {
                *masses.last_mut().expect("parallel vectors") += m;
            }
            _ => {
                atoms.push(a);
                masses.push(m);
            }
        }
    }
    // Zero masses are dropped after merging so that they never create atoms.
    let keep: Vec<bool> = masses.iter().map(|&m| m > 0.0).collect();
    let atoms = atoms
        .into_iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(a, _)| a)
        .collect();
    let masses = masses.into_iter().filter(|&m| m > 0.0).collect();
    (atoms, masses)
}

impl StepLaw for LatticeDist {
    fn len(&self) -> usize {
        self.atoms.len()
    }
    fn atom(&self, i: usize) -> f64 {
        self.atoms[i]
    }
    fn mass(&self, i: usize) -> f64 {
        self.masses[i]
    }
    fn cum(&self, i: usize) -> f64 {
        self.cum[i]
    }
    fn pruned_mass(&self) -> f64 {
        self.pruned_mass
    }
}

/// The law of `(X - shift) / scale` for `X` distributed as `base`.
#[derive(Debug, Clone, Copy)]
pub struct AffineView<'a> {
    base: &'a LatticeDist,
    shift: f64,
    scale: f64,
}

impl<'a> AffineView<'a> {
    pub fn new(base: &'a LatticeDist, shift: f64, scale: f64) -> Result<Self, DistError> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(DistError::BadScale(scale));
        }
        Ok(Self { base, shift, scale })
    }

    pub fn base(&self) -> &LatticeDist {
        self.base
    }
    pub fn shift(&self) -> f64 {
        self.shift
    }
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Materializes the transformed atoms.
    pub fn to_lattice(&self) -> LatticeDist {
        self.base
            .map_affine(1.0 / self.scale, -self.shift / self.scale)
    }
}

impl StepLaw for AffineView<'_> {
    fn len(&self) -> usize {
        self.base.len()
    }
    fn atom(&self, i: usize) -> f64 {
        (self.base.atoms[i] - self.shift) / self.scale
    }
    fn mass(&self, i: usize) -> f64 {
        self.base.masses[i]
    }
    fn cum(&self, i: usize) -> f64 {
        self.base.cum[i]
    }
    fn pruned_mass(&self) -> f64 {
        self.base.pruned_mass
    }
}

/// Law of the independent sum. Atoms with mass below `prune` are dropped and
/// their mass is added to `pruned_mass`.
pub fn convolve(f: &LatticeDist, g: &LatticeDist, prune: f64) -> LatticeDist {
    let carried = f.pruned_mass + g.pruned_mass - f.pruned_mass * g.pruned_mass;
    let span = |d: &LatticeDist| d.max_atom() - d.min_atom();
    let (atoms, masses) =
        if f.is_integer_valued() && g.is_integer_valued() && span(f) + span(g) < 5.0e7 {
            convolve_dense(f, g)
        } else {
            let mut pairs = Vec::with_capacity(f.len() * g.len());
            for (&x, &p) in f.atoms.iter().zip(&f.masses) {
                for (&y, &q) in g.atoms.iter().zip(&g.masses) {
                    pairs.push((x + y, p * q));
                }
            }
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            merge_sorted(pairs)
        };
    // A threshold above every atom would empty the law; keep it unpruned then.
    let prune = if masses.iter().any(|&m| m >= prune) {
        prune
    } else {
        0.0
    };
    let mut removed = CompensatedSum::new();
    let mut kept_atoms = Vec::with_capacity(atoms.len());
    let mut kept_masses = Vec::with_capacity(atoms.len());
    for (a, m) in atoms.into_iter().zip(masses) {
        if m < prune {
            removed.add(m);
        } else {
            kept_atoms.push(a);
            kept_masses.push(m);
        }
    }
    let pruned = carried + removed.value();
    let cum = cumulative(&kept_masses);
    LatticeDist {
        atoms: kept_atoms,
        masses: kept_masses,
        cum,
        pruned_mass: pruned,
    }
}

fn convolve_dense(f: &LatticeDist, g: &LatticeDist) -> (Vec<f64>, Vec<f64>) {
    let f0 = f.min_atom() as i64;
    let g0 = g.min_atom() as i64;
    let nf = (f.max_atom() as i64 - f0 + 1) as usize;
    let ng = (g.max_atom() as i64 - g0 + 1) as usize;
    let mut out = vec![0.0; nf + ng - 1];
    for (&x, &p) in f.atoms.iter().zip(&f.masses) {
        let i = (x as i64 - f0) as usize;
        for (&y, &q) in g.atoms.iter().zip(&g.masses) {
            out[i + (y as i64 - g0) as usize] += p * q;
        }
    }
    let base = f0 + g0;
    let mut atoms = Vec::new();
    let mut masses = Vec::new();
    for (k, m) in out.into_iter().enumerate() {
        if m > 0.0 {
            atoms.push((base + k as i64) as f64);
            masses.push(m);
        }
    }
    (atoms, masses)
}

/// Law of `min(X, n)`: atoms above `n` are lumped onto `n`.
pub fn truncate_at(f: &LatticeDist, n: f64) -> LatticeDist {
    if f.max_atom() <= n {
        return f.clone();
    }
    let k = f.atoms.partition_point(|&a| a < n);
    let mut atoms = f.atoms[..k].to_vec();
    let mut masses = f.masses[..k].to_vec();
    let lumped = neumaier_sum(f.masses[k..].iter().copied());
    atoms.push(n);
    masses.push(lumped);
    let cum = cumulative(&masses);
    LatticeDist {
        atoms,
        masses,
        cum,
        pruned_mass: f.pruned_mass,
    }
}
