use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::jet::Jet;

use super::VectorFieldFamily;

/// A bracket word `j₁ … j_ℓ`, letters numbered from 1, standing for the
/// right-nested commutator `[X_{j₁}, [X_{j₂}, … [X_{j_{ℓ−1}}, X_{j_ℓ}]]]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Word(Vec<usize>);

impl Word {
    pub fn new(letters: Vec<usize>) -> Result<Word> {
        if letters.is_empty() {
            return Err(Error::InvalidArgument("empty word".into()));
        }
        if letters.contains(&0) {
            return Err(Error::InvalidArgument("word letters are numbered from 1".into()));
        }
        Ok(Word(letters))
    }

    pub fn single(j: usize) -> Word {
        Word(vec![j])
    }

    pub fn letters(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tail(&self) -> Option<Word> {
        (self.0.len() > 1).then(|| Word(self.0[1..].to_vec()))
    }

    pub fn parse(src: &str) -> Result<Word> {
        let inner = src.trim();
        let inner = inner.strip_prefix('(').and_then(|t| t.strip_suffix(')')).unwrap_or(inner);
        let letters = inner
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidArgument(format!("bad word letter '{t}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        Word::new(letters)
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|l| l.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

fn check_word(family: &VectorFieldFamily, word: &Word) -> Result<()> {
    if word.len() > family.step() {
        return Err(Error::UnsupportedDepth { length: word.len(), step: family.step() });
    }
    if let Some(&bad) = word.letters().iter().find(|&&l| l > family.num_fields()) {
        return Err(Error::InvalidArgument(format!(
            "letter {bad} exceeds the number of fields {}",
            family.num_fields()
        )));
    }
    Ok(())
}

/// `Σ_i a^i ∂_i b`: the derivative of the jets `b` along the field `a`.
fn apply(a: &[Jet], b: &[Jet]) -> Vec<Jet> {
    b.iter()
        .map(|bk| {
            let mut acc: Option<Jet> = None;
            for (i, ai) in a.iter().enumerate() {
                let term = ai * &bk.partial(i);
                acc = Some(match acc {
                    None => term,
                    Some(s) => &s + &term,
                });
            }
            acc.expect("vector field of dimension zero")
        })
        .collect()
}

/// Coefficients of `[X, Y]` as jets: `X f_Y − Y f_X`.
fn bracket(fx: &[Jet], fy: &[Jet]) -> Vec<Jet> {
    apply(fx, fy).iter().zip(apply(fy, fx)).map(|(a, b)| a - &b).collect()
}

fn word_jets_from(base: &[Vec<Jet>], word: &Word) -> Vec<Jet> {
    let letters = word.letters();
    let mut acc = base[letters[letters.len() - 1] - 1].clone();
    for &k in letters[..letters.len() - 1].iter().rev() {
        acc = bracket(&base[k - 1], &acc);
    }
    acc
}

/// Jets of `f_w` at `x` truncated at `order`.
pub fn commutator_jets(
    family: &VectorFieldFamily,
    word: &Word,
    x: &[f64],
    order: usize,
) -> Result<Vec<Jet>> {
    check_word(family, word)?;
    family.check_outer(x)?;
    let base = family.base_jets(x, order + word.len() - 1)?;
    Ok(word_jets_from(&base, word))
}

/// `f_w(x)`, the coefficient vector of the commutator indexed by `word`.
pub fn eval_commutator(family: &VectorFieldFamily, word: &Word, x: &[f64]) -> Result<Vec<f64>> {
    if word.len() == 1 {
        check_word(family, word)?;
        family.check_outer(x)?;
        let mut out = vec![0.0; family.dim()];
        family.eval_field(word.letters()[0] - 1, x, &mut out);
        return Ok(out);
    }
    Ok(commutator_jets(family, word, x, 0)?.iter().map(Jet::value).collect())
}

/// `X_k f_w(x)` (k numbered from 1): the horizontal derivative of a
/// commutator coefficient. For `|w| = s` this is the quantity the `A_s`
/// class asks to be continuous.
pub fn horizontal_derivative(
    family: &VectorFieldFamily,
    k: usize,
    word: &Word,
    x: &[f64],
) -> Result<Vec<f64>> {
    check_word(family, word)?;
    family.check_outer(x)?;
    let base = family.base_jets(x, word.len())?;
    let fw = word_jets_from(&base, word);
    let fk: Vec<Jet> = base[k - 1].iter().map(|j| j.truncate(1)).collect();
    Ok(apply(&fk, &fw).iter().map(Jet::value).collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableEntry {
    pub word: Word,
}

impl TableEntry {
    pub fn length(&self) -> usize {
        self.word.len()
    }
}

/// The enumeration `Y₁ … Y_q` of commutators of length at most `s`.
#[derive(Debug, Clone)]
pub struct CommutatorTable {
    family: Arc<VectorFieldFamily>,
    entries: Vec<TableEntry>,
}

fn words_of_length(m: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|w| {
                (1..=m).map(move |j| {
                    let mut v = w.clone();
                    v.push(j);
                    v
                })
            })
            .collect();
    }
    out
}

fn enumerate(family: &VectorFieldFamily, reduced: bool) -> Vec<TableEntry> {
    let m = family.num_fields();
    let mut entries = Vec::new();
    for len in 1..=family.step() {
        for letters in words_of_length(m, len) {
            // [X_j, X_j] = 0 and [X_k, X_j] = −[X_j, X_k] in the innermost pair
            if reduced && len >= 2 && letters[len - 2] >= letters[len - 1] {
                continue;
            }
            entries.push(TableEntry { word: Word(letters) });
        }
    }
    entries
}

/// Right-nested words with the innermost pair strictly increasing, ordered by
/// length then lexicographically.
pub fn build_table(family: Arc<VectorFieldFamily>) -> CommutatorTable {
    let entries = enumerate(&family, true);
    CommutatorTable { family, entries }
}

/// Every word `{1..m}^ℓ`, `ℓ ≤ s`.
pub fn build_table_full(family: Arc<VectorFieldFamily>) -> CommutatorTable {
    let entries = enumerate(&family, false);
    CommutatorTable { family, entries }
}

impl CommutatorTable {
    pub fn family(&self) -> &Arc<VectorFieldFamily> {
        &self.family
    }

    pub fn entries(&self) -> &[TableEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn word(&self, i: usize) -> &Word {
        &self.entries[i].word
    }

    /// `ℓ_i`, the length of entry `i` (0-based).
    pub fn weight(&self, i: usize) -> usize {
        self.entries[i].word.len()
    }

    /// Position of `word` in the table.
    pub fn index_of(&self, word: &Word) -> Option<usize> {
        self.entries.iter().position(|e| &e.word == word)
    }

    pub fn eval(&self, i: usize, x: &[f64]) -> Result<Vec<f64>> {
        eval_commutator(&self.family, &self.entries[i].word, x)
    }

    /// `Y_1(x) … Y_q(x)`, sharing one set of base jets.
    pub fn eval_all(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.family.check_outer(x)?;
        let base = self.family.base_jets(x, self.family.step() - 1)?;
        Ok(self
            .entries
            .iter()
            .map(|e| word_jets_from(&base, &e.word).iter().map(Jet::value).collect())
            .collect())
    }

    /// Selected columns `Y_{i_1}(x) … Y_{i_k}(x)`.
    pub fn eval_many(&self, indices: &[usize], x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.family.check_outer(x)?;
        let max_len = indices.iter().map(|&i| self.weight(i)).max().unwrap_or(1);
        let base = self.family.base_jets(x, max_len - 1)?;
        Ok(indices
            .iter()
            .map(|&i| word_jets_from(&base, &self.entries[i].word).iter().map(Jet::value).collect())
            .collect())
    }
}
