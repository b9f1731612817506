//! Vocabulary, label sequences, per-frame lattices and the collapse map.
//!
//! The extended vocabulary `V'` is `V` plus a blank token. The blank sits at
//! index 0 of `V'` unless a vocabulary is built with an explicit blank index;
//! label sequences always index the blank-free vocabulary `V`.
//!
//! Text lattice format: a header line `T K` (frames, `|V'|`), followed by `T`
//! lines of `K` whitespace-separated decimal log-probabilities. Lines starting
//! with `#` are ignored.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logspace::log_sum_exp;
use crate::matrix::Matrix;

/// Row-sum tolerance for distribution lattices.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Largest frame count accepted by the enumeration oracles.
pub const ENUMERATION_MAX_FRAMES: usize = 8;
/// Largest `|V'|` accepted by the enumeration oracles.
pub const ENUMERATION_MAX_SYMBOLS: usize = 4;

/// Token inventory plus the position of the blank in the extended vocabulary.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    blank_index: usize,
}

impl Vocabulary {
    /// Vocabulary with the blank at extended index 0.
    pub fn new<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Result<Self> {
        Self::with_blank_index(tokens, 0)
    }

    pub fn with_blank_index<S: Into<String>>(
        tokens: impl IntoIterator<Item = S>,
        blank_index: usize,
    ) -> Result<Self> {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::invalid(format!("token {i} is empty or contains whitespace")));
            }
            if tokens[..i].contains(t) {
                return Err(Error::invalid(format!("duplicate token {t:?}")));
            }
        }
        if blank_index > tokens.len() {
            return Err(Error::invalid(format!(
                "blank index {blank_index} out of range for {} tokens",
                tokens.len()
            )));
        }
        Ok(Self { tokens, blank_index })
    }

    /// `n` tokens named `a`, `b`, ... (or `t0`, `t1`, ... beyond 26).
    pub fn synthetic(n: usize) -> Self {
        let tokens = (0..n)
            .map(|i| {
                if n <= 26 {
                    char::from(b'a' + i as u8).to_string()
                } else {
                    format!("t{i}")
                }
            })
            .collect();
        Self { tokens, blank_index: 0 }
    }

    /// `|V|`, not counting the blank.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// `|V'| = |V| + 1`.
    pub fn extended_len(&self) -> usize {
        self.tokens.len() + 1
    }

    pub fn blank(&self) -> usize {
        self.blank_index
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Maps a label in `V` to its index in `V'`.
    #[inline]
    pub fn extended_index(&self, label: usize) -> usize {
        if label >= self.blank_index {
            label + 1
        } else {
            label
        }
    }

    /// Maps an index in `V'` back to `V`; `None` for the blank.
    #[inline]
    pub fn label_of(&self, extended: usize) -> Option<usize> {
        use std::cmp::Ordering::*;
        match extended.cmp(&self.blank_index) {
            Less => Some(extended),
            Equal => None,
            Greater => Some(extended - 1),
        }
    }

    pub fn token_name(&self, label: usize) -> &str {
        &self.tokens[label]
    }

    /// Name of an extended symbol, `<blank>` for the blank.
    pub fn symbol_name(&self, extended: usize) -> &str {
        match self.label_of(extended) {
            Some(l) => &self.tokens[l],
            None => "<blank>",
        }
    }

    /// Parses whitespace-separated token names.
    pub fn parse_labels(&self, text: &str) -> Result<LabelSequence> {
        text.split_whitespace()
            .map(|w| {
                self.tokens
                    .iter()
                    .position(|t| t == w)
                    .ok_or_else(|| Error::invalid(format!("unknown token {w:?}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(LabelSequence)
    }

    pub fn render(&self, labels: &LabelSequence) -> String {
        labels
            .as_slice()
            .iter()
            .map(|&l| self.tokens.get(l).map_or("?", String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Target token sequence over `V` (never contains the blank).
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LabelSequence(pub Vec<usize>);

impl LabelSequence {
    pub fn new(labels: Vec<usize>) -> Self {
        Self(labels)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn check(&self, vocab: &Vocabulary) -> Result<()> {
        match self.0.iter().find(|&&l| l >= vocab.len()) {
            Some(l) => Err(Error::invalid(format!(
                "label {l} out of range for vocabulary of size {}",
                vocab.len()
            ))),
            None => Ok(()),
        }
    }

    /// Number of positions where a label equals its predecessor.
    pub fn adjacent_repeats(&self) -> usize {
        self.0.windows(2).filter(|w| w[0] == w[1]).count()
    }

    /// Fewest frames any alignment of this sequence needs.
    pub fn min_frames(&self) -> usize {
        self.len() + self.adjacent_repeats()
    }
}

/// A length-`T` path over `V'`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alignment(pub Vec<usize>);

impl Alignment {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

/// Unnormalized per-frame scores, `T × |V'|`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitLattice {
    values: Matrix,
}

impl LogitLattice {
    pub fn new(values: Matrix) -> Result<Self> {
        if values.rows() == 0 || values.cols() == 0 {
            return Err(Error::invalid("logit lattice must have at least one frame and symbol"));
        }
        if !values.is_finite() {
            return Err(Error::invalid("logit lattice contains non-finite values"));
        }
        Ok(Self { values })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows))
    }

    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    pub fn width(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn into_matrix(self) -> Matrix {
        self.values
    }
}

/// Per-frame probability distributions over `V'`, kept in both linear and log
/// form.
#[derive(Clone, Debug, PartialEq)]
pub struct DistributionLattice {
    probs: Matrix,
    log_probs: Matrix,
}

impl DistributionLattice {
    /// Builds from linear probabilities. Every entry must lie in `(0, 1]` and
    /// every row must sum to one within [`ROW_SUM_TOLERANCE`].
    pub fn from_probs(probs: Matrix) -> Result<Self> {
        check_shape(&probs)?;
        for (t, row) in probs.iter_rows().enumerate() {
            if row.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
                return Err(Error::invalid(format!("frame {t}: probabilities must lie in (0, 1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::invalid(format!("frame {t}: row sums to {s}")));
            }
        }
        let mut log_probs = probs.clone();
        log_probs.as_mut_slice().iter_mut().for_each(|p| *p = p.ln());
        Ok(Self { probs, log_probs })
    }

    /// Builds from log-probabilities, renormalizing each row exactly. Rows whose
    /// mass differs from one by more than `tolerance` are rejected.
    pub fn from_log_probs(log_probs: Matrix, tolerance: f64) -> Result<Self> {
        check_shape(&log_probs)?;
        if !log_probs.is_finite() {
            return Err(Error::invalid("log-probabilities must be finite"));
        }
        let mut log_probs = log_probs;
        for t in 0..log_probs.rows() {
            let row = log_probs.row_mut(t);
            let lse = log_sum_exp(row);
            if lse.exp_m1().abs() > tolerance {
                return Err(Error::invalid(format!(
                    "frame {t}: row mass {} is not 1",
                    lse.exp()
                )));
            }
            row.iter_mut().for_each(|v| *v -= lse);
        }
        Ok(Self::from_normalized_log_probs(log_probs))
    }

    fn from_normalized_log_probs(log_probs: Matrix) -> Self {
        let mut probs = log_probs.clone();
        probs.as_mut_slice().iter_mut().for_each(|v| *v = v.exp());
        Self { probs, log_probs }
    }

    pub fn frames(&self) -> usize {
        self.probs.rows()
    }

    /// `|V'|`.
    pub fn width(&self) -> usize {
        self.probs.cols()
    }

    #[inline]
    pub fn prob(&self, t: usize, k: usize) -> f64 {
        self.probs.get(t, k)
    }

    #[inline]
    pub fn log_prob(&self, t: usize, k: usize) -> f64 {
        self.log_probs.get(t, k)
    }

    pub fn probs(&self) -> &Matrix {
        &self.probs
    }

    pub fn log_probs(&self) -> &Matrix {
        &self.log_probs
    }

    /// Argmax symbol of frame `t`, ties toward the lowest index.
    pub fn argmax(&self, t: usize) -> usize {
        let row = self.probs.row(t);
        let mut best = 0;
        for (k, &p) in row.iter().enumerate().skip(1) {
            if p > row[best] {
                best = k;
            }
        }
        best
    }

    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        if self.width() != vocab.extended_len() {
            return Err(Error::invalid(format!(
                "lattice width {} does not match |V'| = {}",
                self.width(),
                vocab.extended_len()
            )));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.frames(), self.width());
        for row in self.log_probs.iter_rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    /// Parses the text lattice format. Rows are accepted when their mass is
    /// within 1e-6 of one and then renormalized.
    pub fn read_text<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty() && !s.starts_with('#')));

        let (hline, header) = lines
            .next()
            .ok_or(Error::Parse { line: 1, msg: "missing header".into() })?;
        let header = header?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse { line: hline, msg: format!("bad header: {e}") })?;
        let [frames, width] = dims[..] else {
            return Err(Error::Parse { line: hline, msg: "header must be `T K`".into() });
        };
        if frames == 0 || width == 0 {
            return Err(Error::Parse { line: hline, msg: "T and K must be positive".into() });
        }

        let mut data = Vec::with_capacity(frames * width);
        for _ in 0..frames {
            let (n, line) = lines
                .next()
                .ok_or(Error::Parse { line: hline, msg: format!("expected {frames} rows") })?;
            let line = line?;
            let row: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse { line: n, msg: format!("{e}") })?;
            if row.len() != width {
                return Err(Error::Parse {
                    line: n,
                    msg: format!("expected {width} values, found {}", row.len()),
                });
            }
            data.extend(row);
        }
        if let Some((n, _)) = lines.next() {
            return Err(Error::Parse { line: n, msg: "trailing data".into() });
        }
        Self::from_log_probs(Matrix::from_vec(frames, width, data), 1e-6)
    }
}

fn check_shape(m: &Matrix) -> Result<()> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::invalid("lattice must have at least one frame and symbol"));
    }
    Ok(())
}

/// Row-wise softmax, computed by subtracting each row's maximum first.
pub fn softmax_rows(logits: &LogitLattice) -> DistributionLattice {
    let mut log_probs = logits.values().clone();
    for t in 0..log_probs.rows() {
        let row = log_probs.row_mut(t);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|v| *v -= max);
        let lse = log_sum_exp(row);
        row.iter_mut().for_each(|v| *v -= lse);
    }
    DistributionLattice::from_normalized_log_probs(log_probs)
}

/// The collapse map: merge consecutive duplicates, then drop blanks.
pub fn collapse(path: &Alignment, vocab: &Vocabulary) -> Result<LabelSequence> {
    if let Some(&k) = path.0.iter().find(|&&k| k >= vocab.extended_len()) {
        return Err(Error::invalid(format!("path symbol {k} outside V'")));
    }
    Ok(collapse_unchecked(&path.0, vocab))
}

pub(crate) fn collapse_unchecked(path: &[usize], vocab: &Vocabulary) -> LabelSequence {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in path {
        if prev != Some(k) {
            if let Some(l) = vocab.label_of(k) {
                out.push(l);
            }
        }
        prev = Some(k);
    }
    LabelSequence(out)
}

pub(crate) fn check_enumeration_cap(frames: usize, symbols: usize) -> Result<()> {
    if frames > ENUMERATION_MAX_FRAMES || symbols > ENUMERATION_MAX_SYMBOLS {
        return Err(Error::Capacity(format!(
            "enumeration limited to T <= {ENUMERATION_MAX_FRAMES} and |V'| <= {ENUMERATION_MAX_SYMBOLS} \
             (got T = {frames}, |V'| = {symbols})"
        )));
    }
    Ok(())
}

/// Calls `f` on every path in `symbols^frames`, in lexicographic order.
pub(crate) fn for_each_path(frames: usize, symbols: usize, mut f: impl FnMut(&[usize])) {
    let mut path = vec![0usize; frames];
    loop {
        f(&path);
        let mut i = frames;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            path[i] += 1;
            if path[i] < symbols {
                break;
            }
            path[i] = 0;
        }
    }
}

/// Counts length-`frames` paths that collapse to `y`, by enumeration.
pub fn inverse_collapse_count(frames: usize, y: &LabelSequence, vocab: &Vocabulary) -> Result<u64> {
    y.check(vocab)?;
    check_enumeration_cap(frames, vocab.extended_len())?;
    let mut count = 0u64;
    for_each_path(frames, vocab.extended_len(), |p| {
        if collapse_unchecked(p, vocab) == *y {
            count += 1;
        }
    });
    Ok(count)
}
