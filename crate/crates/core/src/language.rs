//! Collapsed Dirichlet-Multinomial bag-of-words model.

use std::collections::BTreeMap;

use crate::event_stream::{WordCounts, WordId};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LanguageError {
    #[error("word {word} outside a vocabulary of {vocab}")]
    WordOutOfRange { word: WordId, vocab: usize },
    #[error("cannot release word {word}: count {have} < {want}")]
    Underflow { word: WordId, have: u64, want: u64 },
    #[error("theta0 must be positive, got {0}")]
    InvalidConcentration(f64),
}

/// Word counts of one cluster under a symmetric Dirichlet(theta0) prior.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterWordCounts {
    counts: BTreeMap<WordId, u64>,
    total: u64,
    vocab_size: usize,
    theta0: f64,
}

impl ClusterWordCounts {
    pub fn new(vocab_size: usize, theta0: f64) -> Result<Self, LanguageError> {
        if !(theta0 > 0.0 && theta0.is_finite()) {
            return Err(LanguageError::InvalidConcentration(theta0));
        }
        Ok(Self { counts: BTreeMap::new(), total: 0, vocab_size, theta0 })
    }

    pub fn count(&self, word: WordId) -> u64 {
        self.counts.get(&word).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn theta0(&self) -> f64 {
        self.theta0
    }

    fn check(&self, doc: &WordCounts) -> Result<(), LanguageError> {
        match doc.max_word() {
            Some(w) if w as usize >= self.vocab_size => {
                Err(LanguageError::WordOutOfRange { word: w, vocab: self.vocab_size })
            }
            _ => Ok(()),
        }
    }

    /// Log predictive probability of one ordered arrangement of `doc`:
    ///
    /// ```text
    /// prod_w prod_{r < v_w} (N_w + theta0 + r) / prod_{r < n} (N + V theta0 + r)
    /// ```
    ///
    /// The multinomial coefficient is left out; it is the same for every
    /// cluster the document is scored against.
    pub fn log_predictive(&self, doc: &WordCounts) -> Result<f64, LanguageError> {
        self.check(doc)?;
        let mut log_p = 0.0;
        for (w, v) in doc.iter() {
            let base = self.count(w) as f64 + self.theta0;
            for r in 0..v {
                log_p += (base + f64::from(r)).ln();
            }
        }
        let base = self.total as f64 + self.vocab_size as f64 * self.theta0;
        for r in 0..doc.total() {
            log_p -= (base + r as f64).ln();
        }
        Ok(log_p)
    }

    pub fn absorb(&mut self, doc: &WordCounts) -> Result<(), LanguageError> {
        self.check(doc)?;
        for (w, v) in doc.iter() {
            *self.counts.entry(w).or_insert(0) += u64::from(v);
        }
        self.total += doc.total();
        Ok(())
    }

    pub fn release(&mut self, doc: &WordCounts) -> Result<(), LanguageError> {
        self.check(doc)?;
        for (w, v) in doc.iter() {
            let have = self.count(w);
            if have < u64::from(v) {
                return Err(LanguageError::Underflow { word: w, have, want: u64::from(v) });
            }
        }
        for (w, v) in doc.iter() {
            let c = self.counts.get_mut(&w).expect("checked above");
            *c -= u64::from(v);
            if *c == 0 {
                self.counts.remove(&w);
            }
        }
        self.total -= doc.total();
        Ok(())
    }
}
