//! Euclidean discretizations of symbolic measures and sets: pushforwards,
//! products, projections, convolutions, sumsets and Bernoulli convolutions.
//!
//! The convolution/projection normalization is fixed as follows. With
//! `pi_s(x, y) = delta^s x + y`, the projection of `m1 x m2` is exactly
//! `convolve(scale(m1, delta^s), m2)`: the affine map is the identity
//! (`lambda = 1`, `c = 0`). An orthogonal projection onto the unit vector
//! `(delta^s, 1) / |(delta^s, 1)|` differs only by the factor
//! `1 / sqrt(delta^{2s} + 1)`, which does not change dimensions.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cascade::{cascade_measure, CylinderMeasure, KeyedRng, WeightLaw};
use crate::error::{Error, Result};
use crate::ifs::{indices_of, AffineIfs};
use crate::numeric::compensated_sum;
use crate::par;
use crate::symbolic::{Subshift, SymbolicMeasure, Word};

/// Default bound on atoms in a product or convolution before sampling kicks in.
pub const DEFAULT_ATOM_CAP: usize = 5_000_000;
/// Default bound on interval pairs in a sumset.
pub const DEFAULT_PAIR_CAP: u128 = 2_000_000_000;

const PRODUCT_TAG: u64 = 0x5052_4F44;
const SAMPLE_CHUNK: usize = 1 << 16;
/// Intervals closer than this (relative to their magnitude) are merged.
const MERGE_RTOL: f64 = 1e-12;

/// Ball queries shared by 1d and 2d atomic measures.
pub trait Atoms: Sync {
    type Point: Copy + Send + Sync;

    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn point(&self, i: usize) -> Self::Point;
    fn weight(&self, i: usize) -> f64;
    fn total_weight(&self) -> f64;
    /// Upper bound on the distance between an atom and the mass it stands for.
    fn resolution(&self) -> f64;
    /// Closed-ball mass without the resolution check.
    fn ball_mass_unchecked(&self, center: Self::Point, r: f64) -> f64;
    /// Index of the atom holding cumulative mass fraction `u` in `[0, 1)`.
    fn index_at(&self, u: f64) -> usize;

    fn ball_mass(&self, center: Self::Point, r: f64) -> Result<f64> {
        check_scale(r, self.resolution())?;
        Ok(self.ball_mass_unchecked(center, r))
    }
}

/// Scales within this relative distance of the floor are accepted, so that
/// `delta^n` computed two ways still counts as the finest admissible scale.
const SCALE_RTOL: f64 = 1e-9;

pub(crate) fn check_scale(r: f64, resolution: f64) -> Result<()> {
    if !(r >= resolution * (1.0 - SCALE_RTOL)) {
        return Err(Error::ScaleBelowResolution {
            scale: r,
            resolution,
        });
    }
    Ok(())
}

/// `sum of weights of atoms within the closed ball`, checked against the resolution floor.
pub fn ball_mass<M: Atoms>(m: &M, center: M::Point, r: f64) -> Result<f64> {
    m.ball_mass(center, r)
}

fn cumulative(weights: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(weights.len() + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for &w in weights {
        acc += w;
        out.push(acc);
    }
    out
}

fn index_in_cumulative(cum: &[f64], u: f64) -> usize {
    let n = cum.len() - 1;
    let target = u * cum[n];
    // first k with cum[k+1] > target
    let k = cum[1..].partition_point(|&c| c <= target);
    k.min(n.saturating_sub(1))
}

/// Weighted atoms on the line, sorted by position with coincident points merged.
#[derive(Clone, Debug, PartialEq)]
pub struct AtomicMeasure1d {
    points: Vec<f64>,
    weights: Vec<f64>,
    cum: Vec<f64>,
    resolution: f64,
    total: f64,
}

impl AtomicMeasure1d {
    /// Builds from `(point, weight)` pairs; zero weights are dropped.
    pub fn from_atoms(mut atoms: Vec<(f64, f64)>, resolution: f64) -> Result<Self> {
        if atoms.iter().any(|&(x, w)| !x.is_finite() || !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("atoms need finite points and weights >= 0".into()));
        }
        atoms.retain(|&(_, w)| w > 0.0);
        par::sort_by(&mut atoms, |a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let mut points: Vec<f64> = Vec::with_capacity(atoms.len());
        let mut weights: Vec<f64> = Vec::with_capacity(atoms.len());
        for (x, w) in atoms {
            if points.last() == Some(&x) {
                *weights.last_mut().expect("nonempty") += w;
            } else {
                points.push(x);
                weights.push(w);
            }
        }
        let cum = cumulative(&weights);
        let total = compensated_sum(weights.iter().copied());
        Ok(Self {
            points,
            weights,
            cum,
            resolution,
            total,
        })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// The measure divided by its total weight.
    pub fn normalized(&self) -> Result<Self> {
        if self.total <= 0.0 {
            return Err(Error::InvalidArgument("cannot normalize a zero measure".into()));
        }
        let weights: Vec<f64> = self.weights.iter().map(|w| w / self.total).collect();
        let cum = cumulative(&weights);
        let total = compensated_sum(weights.iter().copied());
        Ok(Self {
            points: self.points.clone(),
            weights,
            cum,
            resolution: self.resolution,
            total,
        })
    }

    /// Image under `x -> c x`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        let atoms = self
            .points
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| (c * x, w))
            .collect();
        Self::from_atoms(atoms, self.resolution * c.abs())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "x,weight")?;
        for (x, w) in self.points.iter().zip(&self.weights) {
            writeln!(out, "{x:.16e},{w:.16e}")?;
        }
        Ok(())
    }
}

impl Atoms for AtomicMeasure1d {
    type Point = f64;

    fn len(&self) -> usize {
        self.points.len()
    }

    fn point(&self, i: usize) -> f64 {
        self.points[i]
    }

    fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    fn total_weight(&self) -> f64 {
        self.total
    }

    fn resolution(&self) -> f64 {
        self.resolution
    }

    fn ball_mass_unchecked(&self, center: f64, r: f64) -> f64 {
        let lo = self.points.partition_point(|&x| x < center - r);
        let hi = self.points.partition_point(|&x| x <= center + r);
        if hi <= lo {
            return 0.0;
        }
        if hi - lo <= 64 {
            self.weights[lo..hi].iter().sum()
        } else {
            // Prefix differences lose relative precision for tiny balls, which
            // is why short runs are summed directly above.
            (self.cum[hi] - self.cum[lo]).max(0.0)
        }
    }

    fn index_at(&self, u: f64) -> usize {
        index_in_cumulative(&self.cum, u)
    }
}

/// Weighted atoms in the plane, bucketed into vertical strips of width `cell`
/// and sorted by `y` inside each strip.
#[derive(Clone, Debug)]
pub struct AtomicMeasure2d {
    xs: Vec<f64>,
    ys: Vec<f64>,
    weights: Vec<f64>,
    cum: Vec<f64>,
    /// (strip index, first atom) for each nonempty strip.
    strips: Vec<(i64, usize)>,
    origin: f64,
    cell: f64,
    resolution: f64,
    total: f64,
}

impl AtomicMeasure2d {
    pub fn from_atoms(mut atoms: Vec<(f64, f64, f64)>, resolution: f64) -> Result<Self> {
        if atoms
            .iter()
            .any(|&(x, y, w)| !x.is_finite() || !y.is_finite() || !(w >= 0.0) || !w.is_finite())
        {
            return Err(Error::InvalidArgument("atoms need finite coordinates and weights >= 0".into()));
        }
        atoms.retain(|&(_, _, w)| w > 0.0);
        let (xmin, xmax) = atoms
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), a| (lo.min(a.0), hi.max(a.0)));
        let n = atoms.len().max(1);
        let extent = if atoms.is_empty() { 1.0 } else { (xmax - xmin).max(0.0) };
        let cell = (extent / (n as f64).sqrt()).max(resolution).max(f64::MIN_POSITIVE);
        let origin = if atoms.is_empty() { 0.0 } else { xmin };
        let strip = |x: f64| ((x - origin) / cell).floor() as i64;
        par::sort_by(&mut atoms, |a, b| {
            strip(a.0)
                .cmp(&strip(b.0))
                .then(a.1.total_cmp(&b.1))
                .then(a.0.total_cmp(&b.0))
                .then(a.2.total_cmp(&b.2))
        });
        let mut strips = Vec::new();
        for (k, a) in atoms.iter().enumerate() {
            let s = strip(a.0);
            if strips.last().map(|&(t, _)| t) != Some(s) {
                strips.push((s, k));
            }
        }
        let xs: Vec<f64> = atoms.iter().map(|a| a.0).collect();
        let ys: Vec<f64> = atoms.iter().map(|a| a.1).collect();
        let weights: Vec<f64> = atoms.iter().map(|a| a.2).collect();
        let cum = cumulative(&weights);
        let total = compensated_sum(weights.iter().copied());
        Ok(Self {
            xs,
            ys,
            weights,
            cum,
            strips,
            origin,
            cell,
            resolution,
            total,
        })
    }

    pub fn atoms(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        (0..self.xs.len()).map(move |i| (self.xs[i], self.ys[i], self.weights[i]))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "x,y,weight")?;
        for (x, y, w) in self.atoms() {
            writeln!(out, "{x:.16e},{y:.16e},{w:.16e}")?;
        }
        Ok(())
    }
}

impl Atoms for AtomicMeasure2d {
    type Point = (f64, f64);

    fn len(&self) -> usize {
        self.xs.len()
    }

    fn point(&self, i: usize) -> (f64, f64) {
        (self.xs[i], self.ys[i])
    }

    fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    fn total_weight(&self) -> f64 {
        self.total
    }

    fn resolution(&self) -> f64 {
        self.resolution
    }

    fn ball_mass_unchecked(&self, (cx, cy): (f64, f64), r: f64) -> f64 {
        let lo_strip = ((cx - r - self.origin) / self.cell).floor() as i64;
        let hi_strip = ((cx + r - self.origin) / self.cell).floor() as i64;
        let first = self.strips.partition_point(|&(s, _)| s < lo_strip);
        let mut mass = 0.0;
        for k in first..self.strips.len() {
            let (s, start) = self.strips[k];
            if s > hi_strip {
                break;
            }
            let end = self.strips.get(k + 1).map_or(self.xs.len(), |&(_, e)| e);
            let ys = &self.ys[start..end];
            let a = start + ys.partition_point(|&y| y < cy - r);
            let b = start + ys.partition_point(|&y| y <= cy + r);
            for i in a..b {
                let dx = self.xs[i] - cx;
                let dy = self.ys[i] - cy;
                if dx * dx + dy * dy <= r * r {
                    mass += self.weights[i];
                }
            }
        }
        mass
    }

    fn index_at(&self, u: f64) -> usize {
        index_in_cumulative(&self.cum, u)
    }
}

/// A finite union of disjoint closed intervals, sorted and merged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalSet {
    intervals: Vec<(f64, f64)>,
    source_scale: f64,
}

fn merge_gap(a: f64, b: f64) -> f64 {
    MERGE_RTOL * a.abs().max(b.abs()).max(1.0)
}

/// Coalesces intervals already sorted by left endpoint.
fn coalesce_sorted(sorted: impl IntoIterator<Item = (f64, f64)>) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (lo, hi) in sorted {
        match out.last_mut() {
            Some(last) if lo <= last.1 + merge_gap(lo, last.1) => last.1 = last.1.max(hi),
            _ => out.push((lo, hi)),
        }
    }
    out
}

impl IntervalSet {
    pub fn empty() -> Self {
        Self {
            intervals: Vec::new(),
            source_scale: 0.0,
        }
    }

    pub fn from_intervals(mut intervals: Vec<(f64, f64)>, source_scale: f64) -> Result<Self> {
        if intervals
            .iter()
            .any(|&(lo, hi)| !lo.is_finite() || !hi.is_finite() || lo > hi)
        {
            return Err(Error::InvalidArgument("intervals need finite lo <= hi".into()));
        }
        par::sort_by(&mut intervals, |a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        Ok(Self {
            intervals: coalesce_sorted(intervals),
            source_scale,
        })
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// Length of the generating cylinder intervals.
    pub fn source_scale(&self) -> f64 {
        self.source_scale
    }

    pub fn lebesgue_measure(&self) -> f64 {
        compensated_sum(self.intervals.iter().map(|(lo, hi)| hi - lo))
    }

    /// Image under `x -> c x + d`.
    pub fn affine_image(&self, c: f64, d: f64) -> Result<Self> {
        let v = self
            .intervals
            .iter()
            .map(|&(lo, hi)| {
                let (a, b) = (c * lo + d, c * hi + d);
                (a.min(b), a.max(b))
            })
            .collect();
        Self::from_intervals(v, self.source_scale * c.abs())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "lo,hi")?;
        for (lo, hi) in &self.intervals {
            writeln!(out, "{lo:.16e},{hi:.16e}")?;
        }
        Ok(())
    }
}

fn check_alphabet(cm_alphabet: usize, ifs: &AffineIfs) -> Result<()> {
    if cm_alphabet != ifs.len() {
        return Err(Error::InvalidArgument(format!(
            "alphabet {cm_alphabet} does not match {} IFS maps",
            ifs.len()
        )));
    }
    Ok(())
}

/// Image measure: one atom per positive-mass word at its canonical point with tail letter 1.
pub fn pushforward(cm: &CylinderMeasure, ifs: &AffineIfs) -> Result<AtomicMeasure1d> {
    check_alphabet(cm.alphabet_size(), ifs)?;
    let tail = ifs.maps()[0].fixed_point();
    let entries = cm.entries();
    let chunks: Vec<&[crate::cascade::CylinderEntry]> = entries.chunks(SAMPLE_CHUNK).collect();
    let parts = par::map_slice(&chunks, |chunk| {
        let mut atoms = Vec::with_capacity(chunk.len());
        let mut res: f64 = 0.0;
        for e in chunk.iter().filter(|e| e.mass > 0.0) {
            let idx = indices_of(&e.word);
            atoms.push((ifs.compose_indices(&idx, tail), e.mass));
            res = res.max(ifs.contraction_indices(&idx));
        }
        (atoms, res)
    });
    let resolution = parts.iter().map(|p| p.1).fold(0.0, f64::max) * ifs.diameter();
    let atoms = parts.into_iter().flat_map(|p| p.0).collect();
    AtomicMeasure1d::from_atoms(atoms, resolution)
}

/// Union of the cylinder intervals of equal-length words.
pub fn set_image(words: &[Word], ifs: &AffineIfs) -> Result<IntervalSet> {
    let Some(first) = words.first() else {
        return Ok(IntervalSet::empty());
    };
    if words.iter().any(|w| w.len() != first.len()) {
        return Err(Error::InvalidArgument("set_image needs words of equal length".into()));
    }
    check_alphabet(first.alphabet_size(), ifs)?;
    let intervals = par::map_slice(words, |w| ifs.cylinder_interval_indices(&indices_of(w)));
    let scale = intervals.iter().map(|(lo, hi)| hi - lo).fold(0.0, f64::max);
    IntervalSet::from_intervals(intervals, scale)
}

/// Draws `count` index pairs proportionally to weights, in fixed-size chunks
/// with one keyed stream each so the output does not depend on the schedule.
fn sample_pairs<A: Atoms, B: Atoms>(m1: &A, m2: &B, count: usize, rng: &KeyedRng) -> Vec<(usize, usize)> {
    let chunks = count.div_ceil(SAMPLE_CHUNK);
    par::map_range(chunks, |c| {
        let mut stream = rng.derive(PRODUCT_TAG, c as u64).stream();
        let len = SAMPLE_CHUNK.min(count - c * SAMPLE_CHUNK);
        (0..len)
            .map(|_| {
                let u: f64 = stream.random();
                let v: f64 = stream.random();
                (m1.index_at(u), m2.index_at(v))
            })
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

/// Product measure: exact grid when it fits in `atom_cap`, otherwise
/// `atom_cap` i.i.d. pairs each carrying `total / atom_cap`.
pub fn product(
    m1: &AtomicMeasure1d,
    m2: &AtomicMeasure1d,
    atom_cap: usize,
    rng: &KeyedRng,
) -> Result<AtomicMeasure2d> {
    let resolution = m1.resolution().max(m2.resolution());
    let total = m1.total_weight() * m2.total_weight();
    let exact = (m1.len() as u128) * (m2.len() as u128) <= atom_cap as u128;
    let atoms = if exact {
        let rows = par::map_range(m1.len(), |i| {
            (0..m2.len())
                .map(|j| (m1.point(i), m2.point(j), m1.weight(i) * m2.weight(j)))
                .collect::<Vec<_>>()
        });
        rows.into_iter().flatten().collect()
    } else {
        if atom_cap == 0 || total <= 0.0 {
            return Err(Error::InvalidArgument("sampled product needs atom_cap > 0 and positive mass".into()));
        }
        let w = total / atom_cap as f64;
        sample_pairs(m1, m2, atom_cap, rng)
            .into_iter()
            .map(|(i, j)| (m1.point(i), m2.point(j), w))
            .collect()
    };
    AtomicMeasure2d::from_atoms(atoms, resolution)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// `pi_s^{+-}(x, y) = delta^s x +- y`.
pub fn project(m: &AtomicMeasure2d, s: f64, sign: Sign, delta: f64) -> Result<AtomicMeasure1d> {
    let k = delta.powf(s);
    let sg = sign.value();
    let atoms = m.atoms().map(|(x, y, w)| (k * x + sg * y, w)).collect();
    AtomicMeasure1d::from_atoms(atoms, m.resolution() * (k + 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
}

/// Coordinate projection `pi_1` (axis X) or `pi_2` (axis Y).
pub fn project_coordinate(m: &AtomicMeasure2d, axis: Axis) -> Result<AtomicMeasure1d> {
    let atoms = m
        .atoms()
        .map(|(x, y, w)| (if axis == Axis::X { x } else { y }, w))
        .collect();
    AtomicMeasure1d::from_atoms(atoms, m.resolution())
}

/// `m1 * m2`, the image of `m1 x m2` under `(x, y) -> x + y`, with the same
/// exact/sampled switch as [`product`].
pub fn convolve(
    m1: &AtomicMeasure1d,
    m2: &AtomicMeasure1d,
    atom_cap: usize,
    rng: &KeyedRng,
) -> Result<AtomicMeasure1d> {
    let resolution = m1.resolution() + m2.resolution();
    let total = m1.total_weight() * m2.total_weight();
    let exact = (m1.len() as u128) * (m2.len() as u128) <= atom_cap as u128;
    let atoms = if exact {
        par::map_range(m1.len(), |i| {
            (0..m2.len())
                .map(|j| (m1.point(i) + m2.point(j), m1.weight(i) * m2.weight(j)))
                .collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect()
    } else {
        if atom_cap == 0 || total <= 0.0 {
            return Err(Error::InvalidArgument("sampled convolution needs atom_cap > 0 and positive mass".into()));
        }
        let w = total / atom_cap as f64;
        sample_pairs(m1, m2, atom_cap, rng)
            .into_iter()
            .map(|(i, j)| (m1.point(i) + m2.point(j), w))
            .collect()
    };
    AtomicMeasure1d::from_atoms(atoms, resolution)
}

/// `s1 + s * s2`, merged. Errors when the pair count exceeds `pair_cap`.
pub fn sumset(s1: &IntervalSet, s2: &IntervalSet, s: f64, pair_cap: u128) -> Result<IntervalSet> {
    if s == 0.0 || !s.is_finite() {
        return Err(Error::InvalidArgument("sumset scale s must be finite and nonzero".into()));
    }
    let pairs = s1.len() as u128 * s2.len() as u128;
    if pairs > pair_cap {
        return Err(Error::CapExceeded {
            needed: pairs,
            cap: pair_cap,
        });
    }
    let source_scale = s1.source_scale + s.abs() * s2.source_scale;
    if pairs == 0 {
        return Ok(IntervalSet {
            intervals: Vec::new(),
            source_scale,
        });
    }
    let mut scaled: Vec<(f64, f64)> = s2
        .intervals
        .iter()
        .map(|&(c, d)| if s > 0.0 { (s * c, s * d) } else { (s * d, s * c) })
        .collect();
    if s < 0.0 {
        scaled.reverse();
    }
    let intervals = sumset_rec(&s1.intervals, &scaled);
    Ok(IntervalSet {
        intervals,
        source_scale,
    })
}

/// Divide and conquer over `a`: each leaf is `b` dilated by one interval of `a`
/// (already sorted), and siblings are merged linearly.
fn sumset_rec(a: &[(f64, f64)], b: &[(f64, f64)]) -> Vec<(f64, f64)> {
    if a.len() == 1 {
        let (lo, hi) = a[0];
        return coalesce_sorted(b.iter().map(|&(c, d)| (lo + c, hi + d)));
    }
    let (left, right) = a.split_at(a.len() / 2);
    let (l, r) = if a.len() * b.len() > 1 << 16 {
        par::join(|| sumset_rec(left, b), || sumset_rec(right, b))
    } else {
        (sumset_rec(left, b), sumset_rec(right, b))
    };
    union_sorted(&l, &r)
}

fn union_sorted(a: &[(f64, f64)], b: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut i = 0;
    let mut j = 0;
    let merged = std::iter::from_fn(|| {
        let next = match (a.get(i), b.get(j)) {
            (Some(x), Some(y)) if x.0 <= y.0 => {
                i += 1;
                *x
            }
            (Some(_), Some(y)) => {
                j += 1;
                *y
            }
            (Some(x), None) => {
                i += 1;
                *x
            }
            (None, Some(y)) => {
                j += 1;
                *y
            }
            (None, None) => return None,
        };
        Some(next)
    });
    coalesce_sorted(merged)
}

/// Pushforward of the (optionally cascaded) `(p, 1-p)`-Bernoulli measure
/// through `{beta x - 1, beta x + 1}`.
pub fn bernoulli_convolution(
    beta: f64,
    p: f64,
    depth: usize,
    law: &WeightLaw,
    rng: &KeyedRng,
) -> Result<AtomicMeasure1d> {
    let ifs = AffineIfs::bernoulli(beta)?;
    let base = SymbolicMeasure::bernoulli(vec![p, 1.0 - p])?;
    let x = Subshift::full(2)?;
    let cm = cascade_measure(&base, &x, law, depth, rng)?;
    pushforward(&cm, &ifs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_tiling(depth: usize) -> AtomicMeasure1d {
        let cm = CylinderMeasure::from_measure(
            &SymbolicMeasure::uniform(2).unwrap(),
            &Subshift::full(2).unwrap(),
            depth,
        )
        .unwrap();
        pushforward(&cm, &AffineIfs::tiling(2).unwrap()).unwrap()
    }

    #[test]
    fn pushforward_examples() {
        let m = uniform_tiling(1);
        assert_eq!(m.points(), &[0.0, 0.5]);
        assert_eq!(m.weights(), &[0.5, 0.5]);
        assert_eq!(m.resolution(), 0.5);

        let m10 = uniform_tiling(10);
        assert!((m10.total_weight() - 1.0).abs() < 1e-12);

        let x = Subshift::full(3).unwrap();
        let cm = CylinderMeasure::from_measure(&SymbolicMeasure::uniform(3).unwrap(), &x, 4).unwrap();
        let ex = pushforward(&cm, &AffineIfs::exact_overlap_example()).unwrap();
        // 81 words land on the 16 dyadic points; the point 0 collects all words over {1,2}
        assert_eq!(ex.len(), 16);
        assert!((ex.weights()[0] - 16.0 / 81.0).abs() < 1e-15);
        assert!((ex.total_weight() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn set_image_examples() {
        let t3 = AffineIfs::tiling(3).unwrap();
        let all = Subshift::full(3).unwrap().admissible_words(4).unwrap();
        let img = set_image(&all, &t3).unwrap();
        assert_eq!(img.len(), 1);
        assert!((img.intervals()[0].0).abs() < 1e-15 && (img.intervals()[0].1 - 1.0).abs() < 1e-12);
        assert!(set_image(&[], &t3).unwrap().is_empty());

        let golden = Subshift::golden_mean().admissible_words(4).unwrap();
        let img = set_image(&golden, &AffineIfs::tiling(2).unwrap()).unwrap();
        // oracle: 8 dyadic intervals of length 1/16 merged where consecutive
        let mut starts: Vec<u32> = golden
            .iter()
            .map(|w| w.letters().iter().fold(0u32, |acc, &l| 2 * acc + (l as u32 - 1)))
            .collect();
        starts.sort();
        let runs = 1 + starts.windows(2).filter(|p| p[1] != p[0] + 1).count();
        assert_eq!(img.len(), runs);
        assert!((img.lebesgue_measure() - 8.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn product_and_projection_examples() {
        let a = AtomicMeasure1d::from_atoms(vec![(0.3, 0.5)], 0.0).unwrap();
        let b = AtomicMeasure1d::from_atoms(vec![(-1.0, 0.25)], 0.0).unwrap();
        let p = product(&a, &b, 10, &KeyedRng::new(0)).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.weight(0), 0.125);
        let proj = project(&p, 2.0, Sign::Plus, 0.5).unwrap();
        assert_eq!(proj.points(), &[0.25 * 0.3 - 1.0]);
        assert_eq!(proj.weights(), &[0.125]);

        let origin = AtomicMeasure2d::from_atoms(vec![(0.0, 0.0, 0.7)], 0.0).unwrap();
        let at0 = project(&origin, 0.0, Sign::Plus, 0.5).unwrap();
        assert_eq!(at0.points(), &[0.0]);

        let m = uniform_tiling(4);
        let q = product(&m, &m, 1000, &KeyedRng::new(0)).unwrap();
        assert_eq!(q.len(), 256);
        assert!((q.total_weight() - 1.0).abs() < 1e-9);
        let pr = project(&q, 0.7, Sign::Minus, 0.5).unwrap();
        assert!((pr.total_weight() - q.total_weight()).abs() < 1e-12);
        assert_eq!(pr.resolution(), q.resolution() * (0.5f64.powf(0.7) + 1.0));
    }

    #[test]
    fn sampled_product_matches_exact_ball_masses() {
        let m1 = AtomicMeasure1d::from_atoms(
            (0..10).map(|k| (k as f64 / 10.0, (k + 1) as f64)).collect(),
            0.0,
        )
        .unwrap()
        .normalized()
        .unwrap();
        let m2 = AtomicMeasure1d::from_atoms(
            (0..10).map(|k| (k as f64 / 10.0, 1.0 + (k % 3) as f64)).collect(),
            0.0,
        )
        .unwrap()
        .normalized()
        .unwrap();
        let exact = product(&m1, &m2, 100, &KeyedRng::new(1)).unwrap();
        let cap = 200_000;
        let sampled = product(&m1, &m2, 99, &KeyedRng::new(1)).unwrap();
        assert_eq!(sampled.len(), 99);
        let sampled = product(&m1, &m2, cap, &KeyedRng::new(1)).unwrap();
        assert_eq!(exact.len(), 100);
        for i in 0..10 {
            for j in 0..10 {
                let c = (i as f64 / 10.0, j as f64 / 10.0);
                let p = exact.ball_mass(c, 0.15).unwrap();
                let q = sampled.ball_mass(c, 0.15).unwrap();
                let sigma = (p * (1.0 - p) / cap as f64).sqrt();
                assert!((p - q).abs() <= 4.0 * sigma + 1e-12, "{c:?}: {p} vs {q}");
            }
        }
    }

    #[test]
    fn convolution_examples() {
        let a = AtomicMeasure1d::from_atoms(vec![(0.25, 1.0)], 0.0).unwrap();
        let b = AtomicMeasure1d::from_atoms(vec![(1.5, 1.0)], 0.0).unwrap();
        let c = convolve(&a, &b, 10, &KeyedRng::new(0)).unwrap();
        assert_eq!(c.points(), &[1.75]);

        let m1 = uniform_tiling(3);
        let m2 = AtomicMeasure1d::from_atoms(vec![(0.0, 0.2), (0.3, 0.5), (0.9, 0.3)], 0.0).unwrap();
        let x = convolve(&m1, &m2, 1000, &KeyedRng::new(0)).unwrap();
        let y = convolve(&m2, &m1, 1000, &KeyedRng::new(0)).unwrap();
        for k in 0..40 {
            let c = -0.1 + k as f64 * 0.05;
            let r = 0.13;
            let (p, q) = (x.ball_mass(c, r).unwrap(), y.ball_mass(c, r).unwrap());
            assert!((p - q).abs() < 1e-12);
        }
        assert!((x.total_weight() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn self_convolution_of_dyadic_measure_is_binomial_profile() {
        let n = 6;
        let m = uniform_tiling(n);
        let c = convolve(&m, &m, 1 << 20, &KeyedRng::new(0)).unwrap();
        // direct discrete convolution oracle on the grid k / 2^n
        let size = 1usize << n;
        let mut oracle = vec![0.0f64; 2 * size - 1];
        for i in 0..size {
            for j in 0..size {
                oracle[i + j] += 1.0 / (size * size) as f64;
            }
        }
        assert_eq!(c.len(), oracle.len());
        for (k, (&x, &w)) in c.points().iter().zip(c.weights()).enumerate() {
            assert_eq!(x, k as f64 / size as f64);
            assert!((w - oracle[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn projection_matches_scaled_convolution() {
        let m1 = uniform_tiling(5);
        let m2 = AtomicMeasure1d::from_atoms(vec![(0.0, 0.2), (0.3, 0.5), (0.9, 0.3)], 0.0).unwrap();
        let (s, delta) = (1.3, 0.5);
        let proj = project(&product(&m1, &m2, 1 << 20, &KeyedRng::new(0)).unwrap(), s, Sign::Plus, delta).unwrap();
        let conv = convolve(&m1.scaled(delta.powf(s)).unwrap(), &m2, 1 << 20, &KeyedRng::new(0)).unwrap();
        for k in 0..50 {
            let c = -0.05 + k as f64 * 0.03;
            let r = 0.041;
            assert!((proj.ball_mass_unchecked(c, r) - conv.ball_mass_unchecked(c, r)).abs() < 1e-12);
        }
    }

    #[test]
    fn sumset_examples() {
        let unit = IntervalSet::from_intervals(vec![(0.0, 1.0)], 1.0).unwrap();
        let s = sumset(&unit, &unit, 1.0, 10).unwrap();
        assert_eq!(s.intervals(), &[(0.0, 2.0)]);

        let two = IntervalSet::from_intervals(vec![(0.0, 0.0), (1.0, 1.0)], 0.0).unwrap();
        let zero = IntervalSet::from_intervals(vec![(0.0, 0.0)], 0.0).unwrap();
        assert_eq!(sumset(&two, &zero, 3.7, 10).unwrap().intervals(), two.intervals());
        assert!(sumset(&two, &zero, 0.0, 10).is_err());
        assert!(matches!(sumset(&two, &two, 1.0, 3), Err(Error::CapExceeded { .. })));

        let neg = sumset(&unit, &unit, -2.0, 10).unwrap();
        assert_eq!(neg.intervals(), &[(-2.0, 1.0)]);
    }

    #[test]
    fn sumset_matches_brute_force_pairs() {
        let golden = Subshift::golden_mean().admissible_words(6).unwrap();
        let a = set_image(&golden, &AffineIfs::tiling(2).unwrap()).unwrap();
        let triadic = Subshift::full(2).unwrap().admissible_words(4).unwrap();
        let b = set_image(&triadic, &AffineIfs::middle_thirds()).unwrap();
        let s = 2f64.sqrt();
        let fast = sumset(&a, &b, s, DEFAULT_PAIR_CAP).unwrap();
        let mut pairs = Vec::new();
        for &(lo, hi) in a.intervals() {
            for &(c, d) in b.intervals() {
                pairs.push((lo + s * c, hi + s * d));
            }
        }
        let brute = IntervalSet::from_intervals(pairs, 0.0).unwrap();
        assert_eq!(fast.len(), brute.len());
        for (x, y) in fast.intervals().iter().zip(brute.intervals()) {
            assert!((x.0 - y.0).abs() < 1e-12 && (x.1 - y.1).abs() < 1e-12);
        }
    }

    #[test]
    fn bernoulli_convolution_examples() {
        let one = WeightLaw::percolation(1.0).unwrap();
        let half = bernoulli_convolution(0.5, 0.5, 6, &one, &KeyedRng::new(0)).unwrap();
        assert_eq!(half.len(), 64);
        assert!((half.total_weight() - 1.0).abs() < 1e-12);
        let gaps: Vec<f64> = half.points().windows(2).map(|p| p[1] - p[0]).collect();
        assert!(gaps.iter().all(|g| (g - gaps[0]).abs() < 1e-12));
        assert!(half.weights().iter().all(|&w| (w - 1.0 / 64.0).abs() < 1e-15));
    }

    #[test]
    fn bernoulli_convolution_third_matches_ternary_digits() {
        let one = WeightLaw::percolation(1.0).unwrap();
        let depth = 8;
        let m = bernoulli_convolution(1.0 / 3.0, 0.5, depth, &one, &KeyedRng::new(0)).unwrap();
        // Attractor of {x/3 - 1, x/3 + 1} is 3 C - 3/2 for the middle-thirds set C.
        // Ternary-digit oracle: the ball around the image of a level-k Cantor interval
        // holds exactly 2^-k of the mass.
        for k in 1..=5 {
            let width = 3f64.powi(-k);
            for code in 0..(1u32 << k) {
                let left: f64 = (0..k).map(|i| if code >> (k - 1 - i) & 1 == 1 { 2.0 * 3f64.powi(-(i + 1)) } else { 0.0 }).sum();
                let center_c = left + 0.5 * width;
                let center = 3.0 * center_c - 1.5;
                let r = 3.0 * 0.5 * width * 1.5;
                let got = m.ball_mass(center, r).unwrap();
                assert!((got - 0.5f64.powi(k)).abs() < 1e-12, "k={k} code={code}: {got}");
            }
        }
    }

    #[test]
    fn ball_mass_examples() {
        let m = uniform_tiling(10);
        assert!((m.ball_mass(0.5, 2.0).unwrap() - 1.0).abs() < 1e-12);
        let r = 0.5f64.powi(4);
        // atoms k/1024 with |k/1024 - 1/2| <= 1/16: 129 atoms
        let oracle = (0..1024).filter(|&k| ((k as f64) / 1024.0 - 0.5).abs() <= r).count() as f64 / 1024.0;
        let got = m.ball_mass(0.5, r).unwrap();
        assert_eq!(got, oracle);
        assert!((got - 2.0 * r).abs() <= 1.0 / 1024.0 + 1e-15);
        assert!(matches!(m.ball_mass(0.5, 1e-6), Err(Error::ScaleBelowResolution { .. })));
        let single = AtomicMeasure1d::from_atoms(vec![(0.2, 0.3)], 1e-9).unwrap();
        assert_eq!(single.ball_mass(0.2, 1e-9).unwrap(), 0.3);
    }

    #[test]
    fn ball_mass_in_the_plane() {
        let atoms: Vec<(f64, f64, f64)> = (0..400)
            .map(|k| ((k % 20) as f64 / 20.0, (k / 20) as f64 / 20.0, 1.0 / 400.0))
            .collect();
        let m = AtomicMeasure2d::from_atoms(atoms.clone(), 0.0).unwrap();
        for &(c, r) in &[((0.5, 0.5), 0.1), ((0.0, 0.0), 0.3), ((0.33, 0.71), 0.07), ((2.0, 2.0), 0.1)] {
            let brute: f64 = atoms
                .iter()
                .filter(|a| (a.0 - c.0).powi(2) + (a.1 - c.1).powi(2) <= r * r)
                .map(|a| a.2)
                .sum();
            assert!((m.ball_mass(c, r).unwrap() - brute).abs() < 1e-12);
        }
    }
}
