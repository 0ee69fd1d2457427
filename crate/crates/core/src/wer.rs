//! Word error rate via minimum edit distance over words, with an explicit
//! substitution/deletion/insertion breakdown.

use crate::error::{Error, Result};
use crate::textedit::Transcript;

/// Minimum-edit-distance alignment counts against a reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_len: usize,
}

impl EditCounts {
    pub fn total(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Minimum-cost word alignment with unit costs. Ties are broken preferring
/// substitution over deletion over insertion during backtrack, so the
/// breakdown is deterministic.
///
/// The hypothesis may be empty (all reference words count as deletions); an
/// empty reference is an error.
pub fn edit_distance(reference: &Transcript, hypothesis: &[String]) -> Result<EditCounts> {
    let r = reference.words();
    if r.is_empty() {
        return Err(Error::InvalidInput("reference must be non-empty".into()));
    }
    let h = hypothesis;
    let (n, m) = (r.len(), h.len());

    // d[i][j] = min edits aligning r[..i] with h[..j]
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(r[i - 1] != h[j - 1]);
            let del = d[i - 1][j] + 1;
            let ins = d[i][j - 1] + 1;
            d[i][j] = sub.min(del).min(ins);
        }
    }

    let mut counts = EditCounts {
        substitutions: 0,
        deletions: 0,
        insertions: 0,
        ref_len: n,
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + usize::from(r[i - 1] != h[j - 1]) {
            if r[i - 1] != h[j - 1] {
                counts.substitutions += 1;
            }
            i -= 1;
            j -= 1;
        } else if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            counts.deletions += 1;
            i -= 1;
        } else {
            counts.insertions += 1;
            j -= 1;
        }
    }
    debug_assert_eq!(counts.total(), d[n][m]);
    Ok(counts)
}

/// `(S + D + I) / |reference|`; may exceed 1 for long hypotheses.
pub fn wer(reference: &Transcript, hypothesis: &[String]) -> Result<f64> {
    let counts = edit_distance(reference, hypothesis)?;
    Ok(counts.total() as f64 / counts.ref_len as f64)
}
