//! Mandelbrot cascades and percolations on symbolic trees.
//!
//! The i.i.d. family of weights `{V_u}` is indexed by words. Instead of drawing
//! it from a sequential stream, the weight at `u` is a pure function of the
//! master seed and the byte encoding of `u` ([`KeyedRng`]). Pruned subtrees,
//! parallel schedules and deeper truncations of one realization therefore all
//! see the same weights.

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, xlogx};
use crate::par;
use crate::symbolic::{Subshift, SymbolicMeasure, Word, DEFAULT_WORD_CAP};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const WORD_DOMAIN: u64 = 0x243F_6A88_85A3_08D3;

/// SplitMix64 output function (Stafford variant 13).
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn absorb(h: u64, x: u64) -> u64 {
    mix64(h.wrapping_add(GOLDEN_GAMMA) ^ x)
}

/// Word-keyed deterministic randomness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KeyedRng {
    master_seed: u64,
}

impl KeyedRng {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// 64-bit key of a word given by 0-based letter indices. The encoding is the
    /// word length followed by one byte per (1-based) letter.
    #[inline]
    pub(crate) fn key_indices(&self, indices: &[u8]) -> u64 {
        let mut h = mix64(self.master_seed ^ WORD_DOMAIN);
        h = absorb(h, indices.len() as u64);
        for &i in indices {
            h = absorb(h, i as u64 + 1);
        }
        h
    }

    pub fn key(&self, u: &Word) -> u64 {
        let mut h = mix64(self.master_seed ^ WORD_DOMAIN);
        h = absorb(h, u.len() as u64);
        for &l in u.letters() {
            h = absorb(h, l as u64);
        }
        h
    }

    /// Uniform variate in `[0, 1)` keyed to `u`.
    pub fn uniform(&self, u: &Word) -> f64 {
        unit_from_bits(self.key(u))
    }

    /// Independent child stream, e.g. one per trial or per factor.
    pub fn derive(&self, tag: u64, index: u64) -> KeyedRng {
        KeyedRng::new(absorb(absorb(mix64(self.master_seed), tag), index))
    }

    /// A sequential generator seeded from this key, for sampling loops.
    pub fn stream(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix64(self.master_seed ^ GOLDEN_GAMMA))
    }
}

/// 53-bit mantissa extraction: a multiple of `2^-53` in `[0, 1)`.
#[inline]
fn unit_from_bits(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Like [`unit_from_bits`] but offset by half a step, so it lies in `(0, 1)`.
#[inline]
fn open_unit_from_bits(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Law of the mean-one cascade weight `V`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WeightLaw {
    /// `1/p` with probability `p`, else `0`.
    Percolation { p: f64 },
    Discrete { values: Vec<f64>, probs: Vec<f64> },
    /// `exp(sigma Z - sigma^2 / 2)` with `Z` standard normal.
    LogNormal { sigma: f64 },
}

impl WeightLaw {
    pub fn percolation(p: f64) -> Result<Self> {
        let law = WeightLaw::Percolation { p };
        law.validate()?;
        Ok(law)
    }

    pub fn log_normal(sigma: f64) -> Result<Self> {
        let law = WeightLaw::LogNormal { sigma };
        law.validate()?;
        Ok(law)
    }

    pub fn discrete(values: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        let law = WeightLaw::Discrete { values, probs };
        law.validate()?;
        Ok(law)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            WeightLaw::Percolation { p } => {
                if !(*p > 0.0 && *p <= 1.0) {
                    return Err(Error::InvalidLaw(format!("percolation p = {p} outside (0,1]")));
                }
            }
            WeightLaw::LogNormal { sigma } => {
                if !(*sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::InvalidLaw(format!("log-normal sigma = {sigma}")));
                }
            }
            WeightLaw::Discrete { values, probs } => {
                if values.len() != probs.len() || values.is_empty() {
                    return Err(Error::InvalidLaw("values/probs length mismatch".into()));
                }
                if values.iter().chain(probs).any(|&v| !(v >= 0.0 && v.is_finite())) {
                    return Err(Error::InvalidLaw("entries must be finite and >= 0".into()));
                }
                let total = compensated_sum(probs.iter().copied());
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidLaw(format!("probs sum to {total}")));
                }
                let mean = compensated_sum(values.iter().zip(probs).map(|(v, q)| v * q));
                if (mean - 1.0).abs() > 1e-10 {
                    return Err(Error::InvalidLaw(format!("E(V) = {mean}, expected 1")));
                }
            }
        }
        Ok(())
    }

    /// `h_V = E(V log V)` in nats.
    pub fn weight_entropy(&self) -> f64 {
        match self {
            WeightLaw::Percolation { p } => -p.ln(),
            WeightLaw::Discrete { values, probs } => {
                compensated_sum(values.iter().zip(probs).map(|(&v, &q)| q * xlogx(v)))
            }
            WeightLaw::LogNormal { sigma } => 0.5 * sigma * sigma,
        }
    }

    /// Variance of `V`, for statistical tolerances.
    pub fn variance(&self) -> f64 {
        match self {
            WeightLaw::Percolation { p } => 1.0 / p - 1.0,
            WeightLaw::Discrete { values, probs } => {
                compensated_sum(values.iter().zip(probs).map(|(v, q)| q * (v - 1.0) * (v - 1.0)))
            }
            WeightLaw::LogNormal { sigma } => (sigma * sigma).exp() - 1.0,
        }
    }

    /// Maps 64 random bits to one realization of `V`.
    #[inline]
    fn from_bits(&self, bits: u64) -> f64 {
        match self {
            WeightLaw::Percolation { p } => {
                if unit_from_bits(bits) < *p {
                    1.0 / p
                } else {
                    0.0
                }
            }
            WeightLaw::Discrete { values, probs } => {
                let u = unit_from_bits(bits);
                let mut acc = 0.0;
                for (v, q) in values.iter().zip(probs) {
                    acc += q;
                    if u < acc {
                        return *v;
                    }
                }
                // rounding left u above the last partial sum
                values[probs.iter().rposition(|&q| q > 0.0).unwrap_or(0)]
            }
            WeightLaw::LogNormal { sigma } => {
                let z = Normal::standard().inverse_cdf(open_unit_from_bits(bits));
                (sigma * z - 0.5 * sigma * sigma).exp()
            }
        }
    }

    #[inline]
    pub(crate) fn draw_indices(&self, rng: &KeyedRng, indices: &[u8]) -> f64 {
        self.from_bits(rng.key_indices(indices))
    }
}

/// One realization of `V_u`.
pub fn draw_weight(law: &WeightLaw, rng: &KeyedRng, u: &Word) -> f64 {
    law.from_bits(rng.key(u))
}

pub fn weight_entropy(law: &WeightLaw) -> f64 {
    law.weight_entropy()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CylinderEntry {
    pub word: Word,
    /// Cascade weight product `Q_u = V_{u|1} V_{u|2} ... V_u`.
    pub weight: f64,
    /// `Q_u * mu([u])`.
    pub mass: f64,
}

/// A depth-`n` discretization of a (possibly random) measure on a subshift.
#[derive(Clone, Debug, PartialEq)]
pub struct CylinderMeasure {
    depth: usize,
    alphabet_size: usize,
    entries: Vec<CylinderEntry>,
    total_mass: f64,
    degenerate: bool,
}

impl CylinderMeasure {
    pub fn from_entries(depth: usize, alphabet_size: usize, entries: Vec<CylinderEntry>) -> Self {
        let total_mass = compensated_sum(entries.iter().map(|e| e.mass));
        Self {
            depth,
            alphabet_size,
            entries,
            total_mass,
            degenerate: false,
        }
    }

    /// The deterministic measure `mu` itself (all cascade weights equal to one).
    pub fn from_measure(base: &SymbolicMeasure, x: &Subshift, depth: usize) -> Result<Self> {
        let mut entries = Vec::new();
        x.for_each_admissible(depth, DEFAULT_WORD_CAP, |idx| {
            let word = Word::from_indices(idx, x.alphabet_size());
            let mass = base.cylinder_mass_indices(idx.iter().map(|&i| i as usize));
            entries.push(CylinderEntry {
                word,
                weight: 1.0,
                mass,
            });
        })?;
        Ok(Self::from_entries(depth, x.alphabet_size(), entries))
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    /// Entries in lexicographic word order.
    pub fn entries(&self) -> &[CylinderEntry] {
        &self.entries
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// Set when the weight entropy is not below the base entropy.
    pub fn degenerate_warning(&self) -> bool {
        self.degenerate
    }

    pub fn is_extinct(&self) -> bool {
        self.total_mass == 0.0
    }

    pub fn mass_of(&self, u: &Word) -> f64 {
        self.entries
            .binary_search_by(|e| e.word.cmp(u))
            .map(|k| self.entries[k].mass)
            .unwrap_or(0.0)
    }

    /// Words carrying positive mass.
    pub fn support(&self) -> Vec<Word> {
        self.entries
            .iter()
            .filter(|e| e.mass > 0.0)
            .map(|e| e.word.clone())
            .collect()
    }

    /// Marginal on words one letter shorter.
    pub fn coarsen(&self) -> CylinderMeasure {
        let mut out: Vec<CylinderEntry> = Vec::new();
        for e in &self.entries {
            let parent = e.word.prefix(self.depth.saturating_sub(1));
            match out.last_mut() {
                Some(last) if last.word == parent => last.mass += e.mass,
                _ => out.push(CylinderEntry {
                    word: parent,
                    weight: f64::NAN,
                    mass: e.mass,
                }),
            }
        }
        CylinderMeasure::from_entries(self.depth.saturating_sub(1), self.alphabet_size, out)
    }

    /// CSV with header `word,mass`; masses carry 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "word,mass")?;
        for e in &self.entries {
            writeln!(out, "{},{:.16e}", e.word, e.mass)?;
        }
        Ok(())
    }

    /// Reads a dump written by [`write_csv`](Self::write_csv). Cascade weights
    /// are not part of the dump and come back as NaN.
    pub fn read_csv<R: BufRead>(input: R, alphabet_size: usize) -> Result<Self> {
        let mut entries = Vec::new();
        let mut depth = None;
        for (k, line) in input.lines().enumerate() {
            let line = line?;
            if k == 0 {
                if line.trim() != "word,mass" {
                    return Err(Error::Config(format!("unexpected CSV header {line:?}")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let (w, m) = line
                .split_once(',')
                .ok_or_else(|| Error::Config(format!("bad CSV row {line:?}")))?;
            let word = Word::parse(w, alphabet_size)?;
            let mass: f64 = m
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad mass {m:?}")))?;
            if *depth.get_or_insert(word.len()) != word.len() {
                return Err(Error::Config("words of unequal length".into()));
            }
            entries.push(CylinderEntry {
                word,
                weight: f64::NAN,
                mass,
            });
        }
        Ok(Self::from_entries(depth.unwrap_or(0), alphabet_size, entries))
    }
}

fn check_compatible(base: &SymbolicMeasure, x: &Subshift) -> Result<()> {
    if base.alphabet_size() != x.alphabet_size() {
        return Err(Error::InvalidArgument(format!(
            "measure alphabet {} does not match subshift alphabet {}",
            base.alphabet_size(),
            x.alphabet_size()
        )));
    }
    Ok(())
}

/// Depth-first growth of the weighted tree, pruning zero-weight nodes.
/// Calls `leaf` with every surviving depth-`depth` node and its weight product;
/// `level` (when given) receives `(k, Q_u)` for every surviving node of length `k >= 1`.
struct TreeWalk<'a> {
    x: &'a Subshift,
    law: &'a WeightLaw,
    rng: &'a KeyedRng,
    depth: usize,
}

impl TreeWalk<'_> {
    fn grow<F: FnMut(&[u8], f64) -> bool>(&self, buf: &mut Vec<u8>, q: f64, visit: &mut F) -> bool {
        if !visit(buf, q) {
            return false;
        }
        if buf.len() == self.depth {
            return true;
        }
        let prev = buf.last().map(|&l| l as usize);
        for j in self.x.successors(prev) {
            buf.push(j as u8);
            let v = self.law.draw_indices(self.rng, buf);
            let child = q * v;
            let keep_going = child == 0.0 || self.grow(buf, child, visit);
            buf.pop();
            if !keep_going {
                return false;
            }
        }
        true
    }

    /// Runs `visit` over every first-letter subtree, possibly in parallel,
    /// returning per-subtree results in letter order.
    fn per_subtree<R: Send, F>(&self, f: F) -> Vec<R>
    where
        F: Fn(&mut Vec<u8>, f64) -> R + Sync + Send,
    {
        let roots: Vec<usize> = self.x.successors(None).collect();
        par::map_slice(&roots, |&first| {
            let mut buf = vec![first as u8];
            let v = self.law.draw_indices(self.rng, &buf);
            f(&mut buf, v)
        })
    }
}

/// Finite-depth Mandelbrot cascade `Q_u * mu([u])` over admissible words,
/// with the default output cap.
pub fn cascade_measure(
    base: &SymbolicMeasure,
    x: &Subshift,
    law: &WeightLaw,
    depth: usize,
    rng: &KeyedRng,
) -> Result<CylinderMeasure> {
    cascade_measure_capped(base, x, law, depth, rng, DEFAULT_WORD_CAP)
}

pub fn cascade_measure_capped(
    base: &SymbolicMeasure,
    x: &Subshift,
    law: &WeightLaw,
    depth: usize,
    rng: &KeyedRng,
    cap: u128,
) -> Result<CylinderMeasure> {
    check_compatible(base, x)?;
    law.validate()?;
    let degenerate = law.weight_entropy() >= base.entropy();
    if degenerate {
        log::warn!(
            "weight entropy {} is not below base entropy {}; the cascade degenerates almost surely",
            law.weight_entropy(),
            base.entropy()
        );
    }
    let a = x.alphabet_size();
    if depth == 0 {
        let entries = vec![CylinderEntry {
            word: Word::empty(a),
            weight: 1.0,
            mass: 1.0,
        }];
        let mut m = CylinderMeasure::from_entries(0, a, entries);
        m.degenerate = degenerate;
        return Ok(m);
    }
    let walk = TreeWalk { x, law, rng, depth };
    let parts = walk.per_subtree(|buf, q| {
        let mut out = Vec::new();
        let mut overflow = false;
        if q != 0.0 {
            walk.grow(buf, q, &mut |idx: &[u8], q| {
                if idx.len() == depth {
                    if out.len() as u128 >= cap {
                        overflow = true;
                        return false;
                    }
                    let mass = q * base.cylinder_mass_indices(idx.iter().map(|&i| i as usize));
                    out.push(CylinderEntry {
                        word: Word::from_indices(idx, a),
                        weight: q,
                        mass,
                    });
                }
                true
            });
        }
        (out, overflow)
    });
    let needed: u128 = parts.iter().map(|(p, _)| p.len() as u128).sum();
    if parts.iter().any(|(_, o)| *o) || needed > cap {
        return Err(Error::CapExceeded {
            needed: needed.max(cap + 1),
            cap,
        });
    }
    let entries: Vec<CylinderEntry> = parts.into_iter().flat_map(|(p, _)| p).collect();
    let mut m = CylinderMeasure::from_entries(depth, a, entries);
    m.degenerate = degenerate;
    Ok(m)
}

/// Surviving depth-`n` words of the `p`-Mandelbrot percolation restricted to `x`.
pub fn percolation_set(x: &Subshift, p: f64, depth: usize, rng: &KeyedRng) -> Result<Vec<Word>> {
    let law = WeightLaw::percolation(p)?;
    let a = x.alphabet_size();
    if depth == 0 {
        return Ok(vec![Word::empty(a)]);
    }
    let walk = TreeWalk {
        x,
        law: &law,
        rng,
        depth,
    };
    let parts = walk.per_subtree(|buf, q| {
        let mut out = Vec::new();
        if q != 0.0 {
            walk.grow(buf, q, &mut |idx: &[u8], _| {
                if idx.len() == depth {
                    out.push(Word::from_indices(idx, a));
                }
                true
            });
        }
        out
    });
    Ok(parts.into_iter().flatten().collect())
}

/// Total masses `||lambda_k||` for `k = 1..=depth` of one realization.
pub fn cascade_mass_trace(
    base: &SymbolicMeasure,
    x: &Subshift,
    law: &WeightLaw,
    depth: usize,
    rng: &KeyedRng,
) -> Result<Vec<f64>> {
    check_compatible(base, x)?;
    law.validate()?;
    let walk = TreeWalk { x, law, rng, depth };
    let parts = walk.per_subtree(|buf, q| {
        let mut levels: Vec<Vec<f64>> = vec![Vec::new(); depth + 1];
        if q != 0.0 {
            walk.grow(buf, q, &mut |idx: &[u8], q| {
                let mass = q * base.cylinder_mass_indices(idx.iter().map(|&i| i as usize));
                levels[idx.len()].push(mass);
                true
            });
        }
        levels
            .into_iter()
            .map(compensated_sum)
            .collect::<Vec<f64>>()
    });
    Ok((1..=depth)
        .map(|k| compensated_sum(parts.iter().map(|p| p[k])))
        .collect())
}
