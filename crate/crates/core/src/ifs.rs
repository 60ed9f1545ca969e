//! Affine iterated function systems on the line, their canonical (coding) maps,
//! and the overlap counter `t_n` with its growth exponent.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::par;
use crate::symbolic::{Subshift, Word, DEFAULT_WORD_CAP};

/// One contraction `x -> ratio * x + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineMap {
    pub ratio: f64,
    pub translation: f64,
}

impl AffineMap {
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        self.ratio * x + self.translation
    }

    pub fn fixed_point(&self) -> f64 {
        self.translation / (1.0 - self.ratio)
    }
}

/// An IFS of orientation-preserving similarities with ratios in `(0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineIfs {
    maps: Vec<AffineMap>,
    equal_ratio: Option<f64>,
    hull: (f64, f64),
}

impl AffineIfs {
    pub fn new(maps: Vec<(f64, f64)>) -> Result<Self> {
        if maps.len() < 2 {
            return Err(Error::InvalidIfs("need at least two maps".into()));
        }
        let maps: Vec<AffineMap> = maps
            .into_iter()
            .map(|(ratio, translation)| AffineMap { ratio, translation })
            .collect();
        for m in &maps {
            if !(m.ratio > 0.0 && m.ratio < 1.0) || !m.translation.is_finite() {
                return Err(Error::InvalidIfs(format!(
                    "map {}x{:+} is not a contraction with ratio in (0,1)",
                    m.ratio, m.translation
                )));
            }
        }
        let r0 = maps[0].ratio;
        let equal_ratio = maps.iter().all(|m| m.ratio == r0).then_some(r0);
        // Each map sends [min fix, max fix] into itself and the attractor contains
        // every fixed point, so this interval is the convex hull of the attractor.
        let fixes = maps.iter().map(AffineMap::fixed_point);
        let lo = fixes.clone().fold(f64::INFINITY, f64::min);
        let hi = fixes.fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            maps,
            equal_ratio,
            hull: (lo, hi),
        })
    }

    /// `{x/a + k/a : k = 0..a-1}`, whose attractor is `[0, 1]`.
    pub fn tiling(a: usize) -> Result<Self> {
        let r = 1.0 / a as f64;
        Self::new((0..a).map(|k| (r, k as f64 / a as f64)).collect())
    }

    /// `{x/2, x/2, x/2 + 1/2}`: two exactly overlapping maps.
    pub fn exact_overlap_example() -> Self {
        Self::new(vec![(0.5, 0.0), (0.5, 0.0), (0.5, 0.5)]).expect("valid IFS")
    }

    /// `{beta x - 1, beta x + 1}`.
    pub fn bernoulli(beta: f64) -> Result<Self> {
        Self::new(vec![(beta, -1.0), (beta, 1.0)])
    }

    /// Middle-thirds Cantor IFS `{x/3, x/3 + 2/3}`.
    pub fn middle_thirds() -> Self {
        Self::new(vec![(1.0 / 3.0, 0.0), (1.0 / 3.0, 2.0 / 3.0)]).expect("valid IFS")
    }

    pub fn maps(&self) -> &[AffineMap] {
        &self.maps
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn equal_ratio(&self) -> Option<f64> {
        self.equal_ratio
    }

    /// Convex hull `[min A, max A]` of the attractor.
    pub fn hull(&self) -> (f64, f64) {
        self.hull
    }

    /// Attractor diameter `R_I`.
    pub fn diameter(&self) -> f64 {
        self.hull.1 - self.hull.0
    }

    /// Affine conjugate with translations `c * t_i + d`.
    pub fn transformed(&self, scale: f64, shift: f64) -> Result<Self> {
        Self::new(
            self.maps
                .iter()
                .map(|m| (m.ratio, scale * m.translation + shift))
                .collect(),
        )
    }

    /// `f_u(x) = f_{u_1}(f_{u_2}(...f_{u_n}(x)))`, for 0-based letter indices.
    #[inline]
    pub(crate) fn compose_indices(&self, indices: &[u8], x: f64) -> f64 {
        indices
            .iter()
            .rev()
            .fold(x, |acc, &i| self.maps[i as usize].apply(acc))
    }

    #[inline]
    pub(crate) fn contraction_indices(&self, indices: &[u8]) -> f64 {
        indices
            .iter()
            .fold(1.0, |acc, &i| acc * self.maps[i as usize].ratio)
    }

    fn check_word(&self, u: &Word) -> Result<()> {
        if let Some(&bad) = u.letters().iter().find(|&&l| l as usize > self.maps.len()) {
            return Err(Error::InvalidWord(format!(
                "letter {bad} has no map in a {}-map IFS",
                self.maps.len()
            )));
        }
        Ok(())
    }

    /// The coding-map image of `u` followed by `tail` repeated forever.
    pub fn canonical_point(&self, u: &Word, tail: u8) -> Result<f64> {
        self.check_word(u)?;
        if tail == 0 || tail as usize > self.maps.len() {
            return Err(Error::InvalidWord(format!("tail letter {tail} out of range")));
        }
        let fix = self.maps[tail as usize - 1].fixed_point();
        Ok(self.compose_indices(&indices_of(u), fix))
    }

    /// `f_u` applied to the attractor hull.
    pub fn cylinder_interval(&self, u: &Word) -> Result<(f64, f64)> {
        self.check_word(u)?;
        Ok(self.cylinder_interval_indices(&indices_of(u)))
    }

    pub(crate) fn cylinder_interval_indices(&self, indices: &[u8]) -> (f64, f64) {
        (
            self.compose_indices(indices, self.hull.0),
            self.compose_indices(indices, self.hull.1),
        )
    }

    /// Product of the ratios along `u`.
    pub fn contraction(&self, u: &Word) -> f64 {
        self.contraction_indices(&indices_of(u))
    }
}

pub(crate) fn indices_of(u: &Word) -> Vec<u8> {
    u.letters().iter().map(|&l| l - 1).collect()
}

/// Raw overlap counts `t_1..t_{n_max}` and the fitted growth exponent.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OverlapProfile {
    /// `counts[k]` is `t_{k+1}`.
    pub counts: Vec<u64>,
    pub gamma_estimate: f64,
    /// Inclusive range of `n` used in the fit.
    pub fit_window: (usize, usize),
    pub delta: f64,
}

/// `t_{X,I,n}`: the largest number of depth-`n` cylinder intervals met by one
/// closed ball of radius `delta^n`.
pub fn overlap_count(x: &Subshift, ifs: &AffineIfs, n: usize) -> Result<u64> {
    let delta = ifs.equal_ratio().ok_or(Error::MixedRatio)?;
    overlap_count_with_radius(x, ifs, n, delta.powi(n as i32), DEFAULT_WORD_CAP)
}

/// Overlap count for an explicit ball radius.
///
/// A ball `B(c, r)` meets `[lo, hi]` iff `c` lies in `[lo - r, hi + r]`, so the
/// count is the maximum depth of a family of closed intervals. It changes only
/// at their endpoints, and a sorted sweep with openings ahead of closings at
/// equal coordinates finds the exact supremum.
pub fn overlap_count_with_radius(
    x: &Subshift,
    ifs: &AffineIfs,
    n: usize,
    radius: f64,
    cap: u128,
) -> Result<u64> {
    if x.alphabet_size() != ifs.len() {
        return Err(Error::InvalidArgument(format!(
            "subshift alphabet {} does not match {} IFS maps",
            x.alphabet_size(),
            ifs.len()
        )));
    }
    let intervals = cylinder_intervals(x, ifs, n, cap)?;
    if intervals.is_empty() {
        return Ok(0);
    }
    // (coordinate, kind): kind 0 opens, 1 closes.
    let mut events: Vec<(f64, u8)> = Vec::with_capacity(2 * intervals.len());
    for &(lo, hi) in &intervals {
        events.push((lo - radius, 0));
        events.push((hi + radius, 1));
    }
    drop(intervals);
    par::sort_by(&mut events, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut depth: i64 = 0;
    let mut best: i64 = 0;
    for &(_, kind) in &events {
        if kind == 0 {
            depth += 1;
            best = best.max(depth);
        } else {
            depth -= 1;
        }
    }
    Ok(best as u64)
}

/// All depth-`n` cylinder intervals of `x` under `ifs`, in lexicographic word order.
pub(crate) fn cylinder_intervals(
    x: &Subshift,
    ifs: &AffineIfs,
    n: usize,
    cap: u128,
) -> Result<Vec<(f64, f64)>> {
    let needed = x.word_count(n);
    if needed > cap {
        return Err(Error::CapExceeded { needed, cap });
    }
    // Split by first letter so the subtrees can be generated independently.
    let roots: Vec<usize> = x.successors(None).collect();
    if n == 0 {
        return Ok(vec![ifs.hull()]);
    }
    let chunks = par::map_slice(&roots, |&first| {
        let mut out = Vec::new();
        let mut buf = vec![first as u8];
        collect_intervals(x, ifs, n, &mut buf, &mut out);
        out
    });
    Ok(chunks.into_iter().flatten().collect())
}

fn collect_intervals(
    x: &Subshift,
    ifs: &AffineIfs,
    n: usize,
    buf: &mut Vec<u8>,
    out: &mut Vec<(f64, f64)>,
) {
    if buf.len() == n {
        out.push(ifs.cylinder_interval_indices(buf));
        return;
    }
    let prev = buf.last().map(|&l| l as usize);
    for j in x.successors(prev) {
        buf.push(j as u8);
        collect_intervals(x, ifs, n, buf, out);
        buf.pop();
    }
}

/// Counts `t_1..t_{n_max}` and the least-squares slope of `log t_n` against
/// `n log(1/delta)` over `n` in `[ceil(n_max/2), n_max]`.
pub fn gamma_estimate(x: &Subshift, ifs: &AffineIfs, n_max: usize) -> Result<OverlapProfile> {
    if n_max < 4 {
        return Err(Error::InvalidArgument("gamma_estimate needs n_max >= 4".into()));
    }
    let delta = ifs.equal_ratio().ok_or(Error::MixedRatio)?;
    let counts = (1..=n_max)
        .map(|n| overlap_count(x, ifs, n))
        .collect::<Result<Vec<u64>>>()?;
    let lo = n_max.div_ceil(2);
    let xs: Vec<f64> = (lo..=n_max).map(|n| n as f64 * (1.0 / delta).ln()).collect();
    let ys: Vec<f64> = (lo..=n_max)
        .map(|n| (counts[n - 1].max(1) as f64).ln())
        .collect();
    let fit = crate::dimension::fit_loglog(&xs, &ys, 0..xs.len())?;
    Ok(OverlapProfile {
        counts,
        gamma_estimate: fit.slope.max(0.0),
        fit_window: (lo, n_max),
        delta,
    })
}
