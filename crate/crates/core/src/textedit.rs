//! Editing-prompt synthesis: rule-based word-level perturbations of plain
//! transcripts, and the exact LCS alignment that defines which words survive
//! an edit (the non-edited regions).

use rand::seq::SliceRandom;
use rand::Rng;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::Token;

/// A normalized word sequence: lowercase, punctuation-free, no empty words.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Transcript {
    words: Vec<String>,
}

impl Transcript {
    /// Build from pre-normalized words, validating the invariants.
    pub fn new(words: Vec<String>) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::InvalidInput("transcript must be non-empty".into()));
        }
        for w in &words {
            if w.is_empty() {
                return Err(Error::InvalidInput("empty word in transcript".into()));
            }
            if w.chars().any(|c| c.is_whitespace()) {
                return Err(Error::InvalidInput(format!("word {w:?} contains whitespace")));
            }
            if w.chars().any(|c| c.is_uppercase()) {
                return Err(Error::InvalidInput(format!("word {w:?} is not lowercase")));
            }
        }
        Ok(Self { words })
    }

    /// Normalize free text: lowercase, strip punctuation, split on whitespace.
    pub fn from_text(text: &str) -> Result<Self> {
        let words: Vec<String> = text
            .split_whitespace()
            .map(|w| {
                w.chars()
                    .filter(|c| c.is_alphanumeric() || *c == '\'')
                    .collect::<String>()
                    .to_lowercase()
            })
            .filter(|w| !w.is_empty())
            .collect();
        Self::new(words)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn joined(&self) -> String {
        self.words.join(" ")
    }
}

impl Serialize for Transcript {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.joined())
    }
}

impl<'de> Deserialize<'de> for Transcript {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        Transcript::from_text(&text).map_err(D::Error::custom)
    }
}

/// Inclusive index range `[start, end]` over word positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSpan {
    pub start: usize,
    pub end: usize,
}

impl IndexSpan {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// One applied edit. Positions refer to the transcript the operation was
/// applied to; inside a multi-edit each sub-op indexes the intermediate
/// transcript produced by the previous sub-ops.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EditOp {
    /// Insert `word` before position `pos` (`pos == len` appends).
    Insertion { pos: usize, word: String },
    Deletion { pos: usize },
    Substitution { pos: usize, word: String },
    /// Exchange the words at two distinct positions `a < b`.
    Swap { a: usize, b: usize },
    MultiEdit { ops: Vec<EditOp> },
}

/// Edit operation kinds, including the composite multi-edit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    Insertion,
    Deletion,
    Substitution,
    Swap,
    MultiEdit,
}

/// What to apply: a specific kind, or one sampled uniformly from the kinds
/// the transcript supports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpChoice {
    Kind(EditKind),
    Random,
}

impl EditOp {
    pub fn kind(&self) -> EditKind {
        match self {
            EditOp::Insertion { .. } => EditKind::Insertion,
            EditOp::Deletion { .. } => EditKind::Deletion,
            EditOp::Substitution { .. } => EditKind::Substitution,
            EditOp::Swap { .. } => EditKind::Swap,
            EditOp::MultiEdit { .. } => EditKind::MultiEdit,
        }
    }

    /// Apply the edit to a transcript, producing the target transcript.
    pub fn apply(&self, t: &Transcript) -> Result<Transcript> {
        let mut words = t.words().to_vec();
        match self {
            EditOp::Insertion { pos, word } => {
                if *pos > words.len() {
                    return Err(Error::InvalidInput(format!(
                        "insertion position {pos} out of range 0..={}",
                        words.len()
                    )));
                }
                words.insert(*pos, word.clone());
            }
            EditOp::Deletion { pos } => {
                if *pos >= words.len() {
                    return Err(Error::InvalidInput(format!("deletion position {pos} out of range")));
                }
                if words.len() == 1 {
                    return Err(Error::UnsupportedOp("deletion would empty the transcript".into()));
                }
                words.remove(*pos);
            }
            EditOp::Substitution { pos, word } => {
                if *pos >= words.len() {
                    return Err(Error::InvalidInput(format!(
                        "substitution position {pos} out of range"
                    )));
                }
                words[*pos] = word.clone();
            }
            EditOp::Swap { a, b } => {
                if *a >= words.len() || *b >= words.len() {
                    return Err(Error::InvalidInput(format!("swap positions {a},{b} out of range")));
                }
                if a == b {
                    return Err(Error::InvalidInput("swap positions must be distinct".into()));
                }
                words.swap(*a, *b);
            }
            EditOp::MultiEdit { ops } => {
                if ops.is_empty() {
                    return Err(Error::InvalidInput("multi-edit must contain ops".into()));
                }
                let mut cur = t.clone();
                for op in ops {
                    cur = op.apply(&cur)?;
                }
                return Ok(cur);
            }
        }
        Transcript::new(words)
    }
}

/// Word-level alignment between an original and a target transcript.
/// `kept_pairs` is a longest common subsequence; the edited spans are the
/// maximal contiguous runs of indices not covered by it, per side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditAlignment {
    pub kept_pairs: Vec<(usize, usize)>,
    pub edited_ori_spans: Vec<IndexSpan>,
    pub edited_tar_spans: Vec<IndexSpan>,
}

/// The GRPO conditioning unit: original text, target text, original speech
/// tokens, the applied edit, and the exact word alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditPrompt {
    pub x_ori: Transcript,
    pub x_tar: Transcript,
    pub tokens_ori: Vec<Token>,
    pub op: EditOp,
    pub alignment: EditAlignment,
    pub seed: u64,
    pub speaker_id: usize,
}

/// Upper bound on the number of basic edits for a transcript of
/// `word_count` words: `max(1, word_count / 2)`.
pub fn max_edit_count(word_count: usize) -> Result<usize> {
    if word_count == 0 {
        return Err(Error::InvalidInput("word_count must be >= 1".into()));
    }
    Ok((word_count / 2).max(1))
}

fn pick_word<'a, R: Rng>(lexicon: &'a [String], exclude: Option<&str>, rng: &mut R) -> Result<&'a String> {
    let candidates: Vec<&String> = match exclude {
        Some(x) => lexicon.iter().filter(|w| w.as_str() != x).collect(),
        None => lexicon.iter().collect(),
    };
    candidates
        .choose(rng)
        .copied()
        .ok_or_else(|| Error::InvalidInput("lexicon has no admissible word".into()))
}

/// Positions whose words differ, as swap candidates.
fn swap_pairs(words: &[String]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for a in 0..words.len() {
        for b in (a + 1)..words.len() {
            if words[a] != words[b] {
                pairs.push((a, b));
            }
        }
    }
    pairs
}

fn sample_basic_op<R: Rng>(
    t: &Transcript,
    kind: EditKind,
    lexicon: &[String],
    rng: &mut R,
) -> Result<EditOp> {
    let words = t.words();
    match kind {
        EditKind::Insertion => {
            let pos = rng.gen_range(0..=words.len());
            let word = pick_word(lexicon, None, rng)?.clone();
            Ok(EditOp::Insertion { pos, word })
        }
        EditKind::Deletion => {
            if words.len() < 2 {
                return Err(Error::UnsupportedOp(
                    "deletion on a single-word transcript".into(),
                ));
            }
            let pos = rng.gen_range(0..words.len());
            Ok(EditOp::Deletion { pos })
        }
        EditKind::Substitution => {
            let pos = rng.gen_range(0..words.len());
            // Payload must differ from the original word so the edit is
            // never a no-op.
            let word = pick_word(lexicon, Some(&words[pos]), rng)?.clone();
            Ok(EditOp::Substitution { pos, word })
        }
        EditKind::Swap => {
            let pairs = swap_pairs(words);
            let &(a, b) = pairs
                .choose(rng)
                .ok_or_else(|| Error::UnsupportedOp("no distinct-word pair to swap".into()))?;
            Ok(EditOp::Swap { a, b })
        }
        EditKind::MultiEdit => Err(Error::InvalidInput(
            "multi-edit is not a basic op".into(),
        )),
    }
}

/// Kinds applicable to `t` as a source of basic (non-composite) edits.
fn supported_basic_kinds(t: &Transcript) -> Vec<EditKind> {
    let mut kinds = vec![EditKind::Insertion, EditKind::Substitution];
    if t.len() >= 2 {
        kinds.push(EditKind::Deletion);
    }
    if !swap_pairs(t.words()).is_empty() {
        kinds.push(EditKind::Swap);
    }
    kinds
}

/// Apply one perturbation of the requested kind (or a supported kind chosen
/// uniformly for [`OpChoice::Random`]) and return the target transcript with
/// the applied op. Inserted and substituted words are drawn uniformly from
/// the lexicon.
pub fn perturb<R: Rng>(
    t: &Transcript,
    choice: OpChoice,
    rng: &mut R,
    lexicon: &[String],
) -> Result<(Transcript, EditOp)> {
    if lexicon.is_empty() {
        return Err(Error::InvalidInput("lexicon must be non-empty".into()));
    }
    let max_edits = max_edit_count(t.len())?;
    let kind = match choice {
        OpChoice::Kind(k) => k,
        OpChoice::Random => {
            let mut kinds = supported_basic_kinds(t);
            if max_edits >= 2 {
                kinds.push(EditKind::MultiEdit);
            }
            *kinds.choose(rng).expect("insertion is always supported")
        }
    };

    let op = if kind == EditKind::MultiEdit {
        if max_edits < 2 {
            return Err(Error::UnsupportedOp(format!(
                "multi-edit needs an edit budget of at least 2, transcript allows {max_edits}"
            )));
        }
        let n_ops = rng.gen_range(2..=max_edits);
        let mut ops = Vec::with_capacity(n_ops);
        let mut cur = t.clone();
        for _ in 0..n_ops {
            let kinds = supported_basic_kinds(&cur);
            let k = *kinds.choose(rng).expect("insertion is always supported");
            let op = sample_basic_op(&cur, k, lexicon, rng)?;
            cur = op.apply(&cur)?;
            ops.push(op);
        }
        EditOp::MultiEdit { ops }
    } else {
        sample_basic_op(t, kind, lexicon, rng)?
    };

    let target = op.apply(t)?;
    Ok((target, op))
}

/// Word-level alignment of two transcripts via longest common subsequence.
/// Ties are broken toward the earliest original indices, so the result is
/// deterministic. Identical transcripts keep every index.
pub fn align(x_ori: &Transcript, x_tar: &Transcript) -> EditAlignment {
    let x = x_ori.words();
    let y = x_tar.words();
    let (n, m) = (x.len(), y.len());

    // lcs[i][j] = LCS length of x[i..] vs y[j..]
    let mut lcs = vec![vec![0usize; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            lcs[i][j] = if x[i] == y[j] {
                lcs[i + 1][j + 1] + 1
            } else {
                lcs[i + 1][j].max(lcs[i][j + 1])
            };
        }
    }

    let mut kept_pairs = Vec::with_capacity(lcs[0][0]);
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        if x[i] == y[j] && lcs[i][j] == lcs[i + 1][j + 1] + 1 {
            kept_pairs.push((i, j));
            i += 1;
            j += 1;
        } else if lcs[i][j] == lcs[i][j + 1] {
            // Advancing the target keeps x[i] available for the earliest
            // possible match.
            j += 1;
        } else {
            i += 1;
        }
    }

    let kept_ori: Vec<usize> = kept_pairs.iter().map(|p| p.0).collect();
    let kept_tar: Vec<usize> = kept_pairs.iter().map(|p| p.1).collect();
    EditAlignment {
        kept_pairs,
        edited_ori_spans: complement_spans(&kept_ori, n),
        edited_tar_spans: complement_spans(&kept_tar, m),
    }
}

/// Chain two alignments sharing a middle transcript: the result keeps a word
/// pair (i, l) exactly when `first` keeps (i, j) and `second` keeps (j, l).
/// `len_a` and `len_c` are the outer transcript lengths, used to rebuild the
/// edited spans.
pub fn compose_alignments(
    first: &EditAlignment,
    second: &EditAlignment,
    len_a: usize,
    len_c: usize,
) -> EditAlignment {
    let mut mid_to_last = std::collections::HashMap::new();
    for &(j, l) in &second.kept_pairs {
        mid_to_last.insert(j, l);
    }
    let kept_pairs: Vec<(usize, usize)> = first
        .kept_pairs
        .iter()
        .filter_map(|&(i, j)| mid_to_last.get(&j).map(|&l| (i, l)))
        .collect();
    let kept_a: Vec<usize> = kept_pairs.iter().map(|p| p.0).collect();
    let kept_c: Vec<usize> = kept_pairs.iter().map(|p| p.1).collect();
    EditAlignment {
        kept_pairs,
        edited_ori_spans: complement_spans(&kept_a, len_a),
        edited_tar_spans: complement_spans(&kept_c, len_c),
    }
}

/// Maximal contiguous runs of `0..len` not present in the sorted `kept` list.
fn complement_spans(kept: &[usize], len: usize) -> Vec<IndexSpan> {
    let mut spans = Vec::new();
    let mut kept_iter = kept.iter().peekable();
    let mut run_start: Option<usize> = None;
    for idx in 0..len {
        let is_kept = kept_iter.peek() == Some(&&idx);
        if is_kept {
            kept_iter.next();
            if let Some(start) = run_start.take() {
                spans.push(IndexSpan { start, end: idx - 1 });
            }
        } else if run_start.is_none() {
            run_start = Some(idx);
        }
    }
    if let Some(start) = run_start {
        spans.push(IndexSpan { start, end: len - 1 });
    }
    spans
}

/// Build a complete editing prompt from a speech-text pair: perturb the
/// transcript with a randomly chosen supported op, align original and target,
/// and carry the original token sequence through. Deterministic per seed.
pub fn synth_prompt(
    transcript: &Transcript,
    tokens: &[Token],
    speaker_id: usize,
    seed: u64,
    lexicon: &[String],
) -> Result<EditPrompt> {
    let mut rng = rng_from_seed(seed);
    let (x_tar, op) = perturb(transcript, OpChoice::Random, &mut rng, lexicon)?;
    let alignment = align(transcript, &x_tar);
    Ok(EditPrompt {
        x_ori: transcript.clone(),
        x_tar,
        tokens_ori: tokens.to_vec(),
        op,
        alignment,
        seed,
        speaker_id,
    })
}
