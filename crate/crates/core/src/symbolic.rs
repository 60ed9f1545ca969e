//! Symbolic spaces: words, subshifts of finite type, Bernoulli and Markov
//! measures, their entropies and fibre measures.
//!
//! Letters are 1-based in every public type (`Word` letters lie in `1..=a`).
//! Internally, indices into matrices and probability vectors are 0-based.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, xlogx};

/// Default bound on the number of words any enumeration may produce.
pub const DEFAULT_WORD_CAP: u128 = 20_000_000;

const PROB_TOL: f64 = 1e-12;
const STATIONARY_TOL: f64 = 1e-10;

/// A finite word over `{1, .., a}`; the empty word indexes the full cylinder.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Word {
    letters: Vec<u8>,
    alphabet: u8,
}

impl Word {
    pub fn new(letters: Vec<u8>, alphabet_size: usize) -> Result<Self> {
        if !(2..=255).contains(&alphabet_size) {
            return Err(Error::InvalidWord(format!(
                "alphabet size {alphabet_size} outside 2..=255"
            )));
        }
        if let Some(bad) = letters
            .iter()
            .find(|&&l| l == 0 || l as usize > alphabet_size)
        {
            return Err(Error::InvalidWord(format!(
                "letter {bad} outside 1..={alphabet_size}"
            )));
        }
        Ok(Self {
            letters,
            alphabet: alphabet_size as u8,
        })
    }

    pub fn empty(alphabet_size: usize) -> Self {
        Self {
            letters: Vec::new(),
            alphabet: alphabet_size as u8,
        }
    }

    /// Builds a word from 0-based letter indices already known to be valid.
    pub(crate) fn from_indices(indices: &[u8], alphabet_size: usize) -> Self {
        Self {
            letters: indices.iter().map(|&i| i + 1).collect(),
            alphabet: alphabet_size as u8,
        }
    }

    pub fn parse(s: &str, alphabet_size: usize) -> Result<Self> {
        let letters = if s.contains('.') {
            s.split('.')
                .map(|t| {
                    t.parse::<u8>()
                        .map_err(|_| Error::InvalidWord(format!("bad letter {t:?}")))
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            s.chars()
                .map(|c| {
                    c.to_digit(10)
                        .map(|d| d as u8)
                        .ok_or_else(|| Error::InvalidWord(format!("bad letter {c:?}")))
                })
                .collect::<Result<Vec<_>>>()?
        };
        Self::new(letters, alphabet_size)
    }

    pub fn letters(&self) -> &[u8] {
        &self.letters
    }

    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet as usize
    }

    pub fn concat(&self, other: &Word) -> Word {
        let mut letters = self.letters.clone();
        letters.extend_from_slice(&other.letters);
        Word {
            letters,
            alphabet: self.alphabet.max(other.alphabet),
        }
    }

    pub fn prefix(&self, n: usize) -> Word {
        Word {
            letters: self.letters[..n.min(self.len())].to_vec(),
            alphabet: self.alphabet,
        }
    }

    /// The word extended by one (1-based) letter.
    pub fn child(&self, letter: u8) -> Result<Word> {
        if letter == 0 || letter > self.alphabet {
            return Err(Error::InvalidWord(format!(
                "letter {letter} outside 1..={}",
                self.alphabet
            )));
        }
        let mut letters = self.letters.clone();
        letters.push(letter);
        Ok(Word {
            letters,
            alphabet: self.alphabet,
        })
    }
}

/// Letters print as digits for alphabets up to 9, dot-separated otherwise.
impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.alphabet <= 9 {
            for l in &self.letters {
                write!(f, "{l}")?;
            }
        } else {
            for (k, l) in self.letters.iter().enumerate() {
                if k > 0 {
                    f.write_str(".")?;
                }
                write!(f, "{l}")?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ShiftKind {
    Full,
    /// Row-major `a x a` 0/1 transition matrix.
    Finite { allowed: Vec<bool> },
}

/// The full shift or a subshift of finite type.
///
/// Letters with no infinite forward path ("dead" letters) are trimmed: a word
/// ending in one has an empty cylinder in the subshift, so it is not admissible.
#[derive(Clone, Debug, PartialEq)]
pub struct Subshift {
    alphabet: usize,
    kind: ShiftKind,
    live: Vec<bool>,
}

impl Subshift {
    pub fn full(alphabet_size: usize) -> Result<Self> {
        check_alphabet(alphabet_size)?;
        Ok(Self {
            alphabet: alphabet_size,
            kind: ShiftKind::Full,
            live: vec![true; alphabet_size],
        })
    }

    /// Subshift of finite type from a square 0/1 matrix (row = current letter).
    pub fn finite_type(matrix: &[Vec<u8>]) -> Result<Self> {
        let a = matrix.len();
        check_alphabet(a)?;
        let mut allowed = Vec::with_capacity(a * a);
        for row in matrix {
            if row.len() != a {
                return Err(Error::InvalidArgument(
                    "transition matrix must be square".into(),
                ));
            }
            for &e in row {
                match e {
                    0 => allowed.push(false),
                    1 => allowed.push(true),
                    _ => {
                        return Err(Error::InvalidArgument(
                            "transition matrix entries must be 0 or 1".into(),
                        ))
                    }
                }
            }
        }
        let live = live_letters(a, &allowed);
        if !live.iter().any(|&l| l) {
            return Err(Error::EmptySubshift);
        }
        Ok(Self {
            alphabet: a,
            kind: ShiftKind::Finite { allowed },
            live,
        })
    }

    /// The golden-mean shift on two letters, forbidding `22`.
    pub fn golden_mean() -> Self {
        Self::finite_type(&[vec![1, 1], vec![1, 0]]).expect("golden mean matrix is valid")
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet
    }

    pub fn kind(&self) -> &ShiftKind {
        &self.kind
    }

    pub fn is_full(&self) -> bool {
        matches!(self.kind, ShiftKind::Full)
    }

    /// Whether the 0-based transition `i -> j` is allowed.
    pub fn allows(&self, i: usize, j: usize) -> bool {
        match &self.kind {
            ShiftKind::Full => true,
            ShiftKind::Finite { allowed } => allowed[i * self.alphabet + j],
        }
    }

    /// Admissible 0-based letters following `prev` (`None` at the root).
    pub fn successors(&self, prev: Option<usize>) -> impl Iterator<Item = usize> + '_ {
        (0..self.alphabet).filter(move |&j| self.live[j] && prev.is_none_or(|i| self.allows(i, j)))
    }

    pub fn contains(&self, word: &Word) -> bool {
        let mut prev = None;
        for &l in word.letters() {
            let j = l as usize - 1;
            if j >= self.alphabet || !self.live[j] || prev.is_some_and(|i| !self.allows(i, j)) {
                return false;
            }
            prev = Some(j);
        }
        true
    }

    /// `|X_n|`, saturating at `u128::MAX`.
    pub fn word_count(&self, n: usize) -> u128 {
        if n == 0 {
            return 1;
        }
        if self.is_full() {
            return (self.alphabet as u128).saturating_pow(n as u32);
        }
        let mut counts: Vec<u128> = self.live.iter().map(|&l| l as u128).collect();
        for _ in 1..n {
            let mut next = vec![0u128; self.alphabet];
            for (i, &c) in counts.iter().enumerate() {
                if c == 0 {
                    continue;
                }
                for j in self.successors(Some(i)) {
                    next[j] = next[j].saturating_add(c);
                }
            }
            counts = next;
        }
        counts.iter().fold(0u128, |s, &c| s.saturating_add(c))
    }

    /// `X_n` in lexicographic order, with the default cap.
    pub fn admissible_words(&self, n: usize) -> Result<Vec<Word>> {
        self.admissible_words_capped(n, DEFAULT_WORD_CAP)
    }

    pub fn admissible_words_capped(&self, n: usize, cap: u128) -> Result<Vec<Word>> {
        let mut out = Vec::new();
        self.for_each_admissible(n, cap, |idx| {
            out.push(Word::from_indices(idx, self.alphabet))
        })?;
        Ok(out)
    }

    /// Visits every admissible word of length `n` (as 0-based letter indices)
    /// in lexicographic order.
    pub fn for_each_admissible<F: FnMut(&[u8])>(&self, n: usize, cap: u128, mut f: F) -> Result<()> {
        let needed = self.word_count(n);
        if needed > cap {
            return Err(Error::CapExceeded { needed, cap });
        }
        let mut buf = Vec::with_capacity(n);
        self.visit(n, &mut buf, &mut f);
        Ok(())
    }

    fn visit<F: FnMut(&[u8])>(&self, n: usize, buf: &mut Vec<u8>, f: &mut F) {
        if buf.len() == n {
            f(buf);
            return;
        }
        let prev = buf.last().map(|&l| l as usize);
        for j in self.successors(prev) {
            buf.push(j as u8);
            self.visit(n, buf, f);
            buf.pop();
        }
    }

    /// Transition matrix restricted to live letters, as `f64`, with the
    /// original index of each retained letter.
    fn live_matrix(&self) -> (Vec<usize>, Vec<f64>) {
        let idx: Vec<usize> = (0..self.alphabet).filter(|&i| self.live[i]).collect();
        let k = idx.len();
        let mut m = vec![0.0; k * k];
        for (r, &i) in idx.iter().enumerate() {
            for (c, &j) in idx.iter().enumerate() {
                if self.allows(i, j) {
                    m[r * k + c] = 1.0;
                }
            }
        }
        (idx, m)
    }

    pub fn is_irreducible(&self) -> bool {
        let (idx, m) = self.live_matrix();
        strongly_connected(idx.len(), &m)
    }

    /// Log of the spectral radius of the transition matrix, in nats.
    pub fn topological_entropy(&self) -> Result<f64> {
        if self.is_full() {
            return Ok((self.alphabet as f64).ln());
        }
        let (idx, m) = self.live_matrix();
        if !strongly_connected(idx.len(), &m) {
            return Err(Error::NotIrreducible);
        }
        let p = perron(idx.len(), &m);
        Ok(p.eigenvalue.ln())
    }

    /// The measure of maximal entropy (Parry measure).
    pub fn parry_measure(&self) -> Result<SymbolicMeasure> {
        let a = self.alphabet;
        if self.is_full() {
            return SymbolicMeasure::uniform(a);
        }
        let (idx, m) = self.live_matrix();
        let k = idx.len();
        if !strongly_connected(k, &m) {
            return Err(Error::NotIrreducible);
        }
        let p = perron(k, &m);
        let mut right = vec![0.0; a];
        let mut left = vec![0.0; a];
        for (r, &i) in idx.iter().enumerate() {
            right[i] = p.right[r];
            left[i] = p.left[r];
        }
        let mut transition = vec![vec![0.0; a]; a];
        for i in 0..a {
            if !self.live[i] {
                continue;
            }
            for j in 0..a {
                if self.live[j] && self.allows(i, j) {
                    transition[i][j] = right[j] / (p.eigenvalue * right[i]);
                }
            }
            let s: f64 = transition[i].iter().sum();
            for v in &mut transition[i] {
                *v /= s;
            }
        }
        let mut stationary: Vec<f64> = (0..a).map(|i| left[i] * right[i]).collect();
        let s: f64 = stationary.iter().sum();
        stationary.iter_mut().for_each(|v| *v /= s);
        // Dead letters carry no mass; any stochastic row keeps the matrix valid.
        for i in 0..a {
            if !self.live[i] {
                transition[i] = stationary.clone();
            }
        }
        Ok(SymbolicMeasure {
            kind: MeasureKind::Markov {
                initial: stationary.clone(),
                transition,
                stationary,
            },
        })
    }
}

fn check_alphabet(a: usize) -> Result<()> {
    if !(2..=255).contains(&a) {
        return Err(Error::InvalidArgument(format!(
            "alphabet size {a} outside 2..=255"
        )));
    }
    Ok(())
}

fn live_letters(a: usize, allowed: &[bool]) -> Vec<bool> {
    let mut live = vec![true; a];
    loop {
        let mut changed = false;
        for i in 0..a {
            if live[i] && !(0..a).any(|j| live[j] && allowed[i * a + j]) {
                live[i] = false;
                changed = true;
            }
        }
        if !changed {
            return live;
        }
    }
}

fn strongly_connected(k: usize, m: &[f64]) -> bool {
    if k == 0 {
        return false;
    }
    let reach = |forward: bool| {
        let mut seen = vec![false; k];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..k {
                let e = if forward { m[i * k + j] } else { m[j * k + i] };
                if e > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

pub(crate) struct Perron {
    pub eigenvalue: f64,
    pub right: Vec<f64>,
    pub left: Vec<f64>,
}

/// Perron eigenvalue and eigenvectors of an irreducible nonnegative matrix.
///
/// Iterates with `A + I`, which is primitive whenever `A` is irreducible, so
/// periodic matrices converge too.
pub(crate) fn perron(k: usize, m: &[f64]) -> Perron {
    let iterate = |transpose: bool| -> (f64, Vec<f64>) {
        let mut v = vec![1.0 / k as f64; k];
        let mut lambda = 0.0;
        for _ in 0..1_000_000 {
            let mut w = v.clone();
            for i in 0..k {
                for j in 0..k {
                    let e = if transpose { m[j * k + i] } else { m[i * k + j] };
                    w[i] += e * v[j];
                }
            }
            let norm: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= norm);
            let next = norm - 1.0;
            let dv = v
                .iter()
                .zip(&w)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let converged = (next - lambda).abs() <= 1e-12 * next.abs().max(1e-300) && dv <= 1e-14;
            lambda = next;
            v = w;
            if converged {
                break;
            }
        }
        (lambda, v)
    };
    let (eigenvalue, right) = iterate(false);
    let (_, left) = iterate(true);
    Perron {
        eigenvalue,
        right,
        left,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum MeasureKind {
    Bernoulli {
        probs: Vec<f64>,
    },
    /// `initial` is the law of the first letter; `stationary` is the invariant
    /// law of the chain. The two coincide for shift-invariant measures and
    /// differ for fibre measures.
    Markov {
        initial: Vec<f64>,
        transition: Vec<Vec<f64>>,
        stationary: Vec<f64>,
    },
}

/// A Bernoulli or Markov measure on the one-sided symbolic space.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolicMeasure {
    kind: MeasureKind,
}

impl SymbolicMeasure {
    pub fn bernoulli(probs: Vec<f64>) -> Result<Self> {
        check_alphabet(probs.len())?;
        check_probability_vector(&probs)?;
        Ok(Self {
            kind: MeasureKind::Bernoulli { probs },
        })
    }

    pub fn uniform(alphabet_size: usize) -> Result<Self> {
        Self::bernoulli(vec![1.0 / alphabet_size as f64; alphabet_size])
    }

    /// Shift-invariant Markov measure. A non-stationary `initial` is replaced
    /// by the stationary law of `transition`, with a warning.
    pub fn markov(initial: Vec<f64>, transition: Vec<Vec<f64>>) -> Result<Self> {
        check_chain(&initial, &transition)?;
        let stationary = if is_stationary(&initial, &transition) {
            initial
        } else {
            let pi = stationary_law(&transition);
            log::warn!("initial law is not stationary; replaced by {pi:?}");
            pi
        };
        Ok(Self {
            kind: MeasureKind::Markov {
                initial: stationary.clone(),
                transition,
                stationary,
            },
        })
    }

    /// Markov chain started from an arbitrary law; not shift-invariant in general.
    pub fn markov_chain(initial: Vec<f64>, transition: Vec<Vec<f64>>) -> Result<Self> {
        check_chain(&initial, &transition)?;
        let stationary = stationary_law(&transition);
        Ok(Self {
            kind: MeasureKind::Markov {
                initial,
                transition,
                stationary,
            },
        })
    }

    pub fn kind(&self) -> &MeasureKind {
        &self.kind
    }

    pub fn alphabet_size(&self) -> usize {
        match &self.kind {
            MeasureKind::Bernoulli { probs } => probs.len(),
            MeasureKind::Markov { initial, .. } => initial.len(),
        }
    }

    /// Entropy in nats.
    pub fn entropy(&self) -> f64 {
        match &self.kind {
            MeasureKind::Bernoulli { probs } => -compensated_sum(probs.iter().map(|&p| xlogx(p))),
            MeasureKind::Markov {
                transition,
                stationary,
                ..
            } => -compensated_sum(
                stationary
                    .iter()
                    .zip(transition)
                    .map(|(&pi, row)| pi * compensated_sum(row.iter().map(|&p| xlogx(p)))),
            ),
        }
    }

    /// Probability that the first letter is the 0-based `letter`.
    #[inline]
    pub fn first_prob(&self, letter: usize) -> f64 {
        match &self.kind {
            MeasureKind::Bernoulli { probs } => probs[letter],
            MeasureKind::Markov { initial, .. } => initial[letter],
        }
    }

    /// Conditional probability of 0-based `next` after `prev`.
    #[inline]
    pub fn step_prob(&self, prev: usize, next: usize) -> f64 {
        match &self.kind {
            MeasureKind::Bernoulli { probs } => probs[next],
            MeasureKind::Markov { transition, .. } => transition[prev][next],
        }
    }

    /// Mass of the cylinder `[u]`; letters outside the alphabet give 0.
    pub fn cylinder_mass(&self, word: &Word) -> f64 {
        self.cylinder_mass_indices(word.letters().iter().map(|&l| l as usize - 1))
    }

    pub(crate) fn cylinder_mass_indices<I: IntoIterator<Item = usize>>(&self, indices: I) -> f64 {
        let a = self.alphabet_size();
        let mut mass = 1.0;
        let mut prev: Option<usize> = None;
        for j in indices {
            if j >= a {
                return 0.0;
            }
            mass *= match prev {
                None => self.first_prob(j),
                Some(i) => self.step_prob(i, j),
            };
            prev = Some(j);
        }
        mass
    }

    /// Conditional measure on the future given the past ends in `last_past_letter`.
    ///
    /// A Bernoulli measure is its own fibre. For a Markov measure the fibre is the
    /// chain started from row `last_past_letter` of the transition matrix.
    pub fn fibre_measure(&self, last_past_letter: u8) -> Result<SymbolicMeasure> {
        let a = self.alphabet_size();
        if last_past_letter == 0 || last_past_letter as usize > a {
            return Err(Error::InvalidWord(format!(
                "letter {last_past_letter} outside 1..={a}"
            )));
        }
        match &self.kind {
            MeasureKind::Bernoulli { .. } => Ok(self.clone()),
            MeasureKind::Markov {
                transition,
                stationary,
                ..
            } => Ok(SymbolicMeasure {
                kind: MeasureKind::Markov {
                    initial: transition[last_past_letter as usize - 1].clone(),
                    transition: transition.clone(),
                    stationary: stationary.clone(),
                },
            }),
        }
    }

    /// Draws a word of length `n` distributed as the cylinder masses.
    pub fn sample_word<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Word {
        let a = self.alphabet_size();
        let mut idx = Vec::with_capacity(n);
        let mut prev: Option<usize> = None;
        for _ in 0..n {
            let u: f64 = rng.random();
            let pick = |p: &dyn Fn(usize) -> f64| {
                let mut acc = 0.0;
                let mut last_positive = 0;
                for j in 0..a {
                    let pj = p(j);
                    if pj > 0.0 {
                        last_positive = j;
                        acc += pj;
                        if u < acc {
                            return j;
                        }
                    }
                }
                last_positive
            };
            let j = match prev {
                None => pick(&|j| self.first_prob(j)),
                Some(i) => pick(&|j| self.step_prob(i, j)),
            };
            idx.push(j as u8);
            prev = Some(j);
        }
        Word::from_indices(&idx, a)
    }
}

fn check_probability_vector(p: &[f64]) -> Result<()> {
    if p.iter().any(|&x| !(x.is_finite() && x >= 0.0)) {
        return Err(Error::InvalidMeasure(format!("negative or non-finite entry in {p:?}")));
    }
    let s = compensated_sum(p.iter().copied());
    if (s - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidMeasure(format!("probabilities sum to {s}")));
    }
    Ok(())
}

fn check_chain(initial: &[f64], transition: &[Vec<f64>]) -> Result<()> {
    check_alphabet(initial.len())?;
    check_probability_vector(initial)?;
    if transition.len() != initial.len() {
        return Err(Error::InvalidMeasure("transition matrix size mismatch".into()));
    }
    for row in transition {
        if row.len() != initial.len() {
            return Err(Error::InvalidMeasure("transition matrix must be square".into()));
        }
        check_probability_vector(row)?;
    }
    Ok(())
}

fn is_stationary(pi: &[f64], p: &[Vec<f64>]) -> bool {
    (0..pi.len()).all(|j| {
        let s: f64 = (0..pi.len()).map(|i| pi[i] * p[i][j]).sum();
        (s - pi[j]).abs() <= STATIONARY_TOL
    })
}

/// Stationary law by iterating the lazy chain `(I + P) / 2`, which converges
/// for periodic chains as well.
fn stationary_law(p: &[Vec<f64>]) -> Vec<f64> {
    let a = p.len();
    let mut pi = vec![1.0 / a as f64; a];
    for _ in 0..1_000_000 {
        let mut next = vec![0.0; a];
        for i in 0..a {
            next[i] += 0.5 * pi[i];
            for j in 0..a {
                next[j] += 0.5 * pi[i] * p[i][j];
            }
        }
        let s: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= s);
        let d = pi
            .iter()
            .zip(&next)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        pi = next;
        if d < 1e-16 {
            break;
        }
    }
    pi
}

impl FromStr for Subshift {
    type Err = Error;

    /// `full:<a>`, `golden`, or a matrix such as `11/10` (rows separated by `/`).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "golden" || s == "golden-mean" {
            return Ok(Self::golden_mean());
        }
        if let Some(a) = s.strip_prefix("full:") {
            let a = a
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad alphabet size in {s:?}")))?;
            return Self::full(a);
        }
        let rows = s
            .split('/')
            .map(|row| {
                row.chars()
                    .map(|c| match c {
                        '0' => Ok(0u8),
                        '1' => Ok(1u8),
                        _ => Err(Error::Config(format!("bad matrix entry {c:?} in {s:?}"))),
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::finite_type(&rows)
    }
}
