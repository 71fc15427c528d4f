//! Levenshtein distance and character-level edit signatures.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Unit-cost edit distance over Unicode scalars.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditKind {
    Sub,
    Ins,
    Del,
}

/// One contiguous edit: `source` (in the standard form, starting at
/// `position`) becomes `target`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditOp {
    pub kind: EditKind,
    pub source: String,
    pub target: String,
    pub position: usize,
}

impl fmt::Display for EditOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            EditKind::Sub => write!(f, "{}->{}", self.source, self.target),
            EditKind::Ins => write!(f, "+{}", self.target),
            EditKind::Del => write!(f, "-{}", self.source),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditSignature {
    pub ops: Vec<EditOp>,
    /// Human-readable form, e.g. `er->ah` or `-g`; several edits are joined by `, `.
    pub merged: String,
}

impl EditSignature {
    /// Per-edit labels, as counted in frequency tables.
    pub fn labels(&self) -> impl Iterator<Item = String> + '_ {
        self.ops.iter().map(ToString::to_string)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Step {
    Keep,
    Sub,
    Ins,
    Del,
}

/// Edit signature from one minimal alignment of `standard` onto `observed`.
///
/// The backtrace runs from the end and prefers keep, then substitution, then
/// insertion, then deletion, which pushes gaps to the leftmost position among
/// equal-cost alignments. Runs of adjacent non-keep steps are merged into a
/// single op; a run with both sides nonempty is a substitution.
pub fn edit_signature(standard: &str, observed: &str) -> EditSignature {
    let a: Vec<char> = standard.chars().collect();
    let b: Vec<char> = observed.chars().collect();
    let (n, m) = (a.len(), b.len());
    let width = m + 1;
    let mut dp = vec![0usize; (n + 1) * width];
    for (j, cell) in dp.iter_mut().take(width).enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        dp[i * width] = i;
        for j in 1..=m {
            let sub = dp[(i - 1) * width + j - 1] + usize::from(a[i - 1] != b[j - 1]);
            let del = dp[(i - 1) * width + j] + 1;
            let ins = dp[i * width + j - 1] + 1;
            dp[i * width + j] = sub.min(del).min(ins);
        }
    }

    let mut steps = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dp[i * width + j];
        if i > 0 && j > 0 && a[i - 1] == b[j - 1] && dp[(i - 1) * width + j - 1] == here {
            steps.push(Step::Keep);
            i -= 1;
            j -= 1;
        } else if i > 0 && j > 0 && dp[(i - 1) * width + j - 1] + 1 == here {
            steps.push(Step::Sub);
            i -= 1;
            j -= 1;
        } else if j > 0 && dp[i * width + j - 1] + 1 == here {
            steps.push(Step::Ins);
            j -= 1;
        } else {
            steps.push(Step::Del);
            i -= 1;
        }
    }
    steps.reverse();

    let mut ops: Vec<EditOp> = Vec::new();
    let (mut i, mut j) = (0, 0);
    let mut open: Option<EditOp> = None;
    for step in steps {
        if step == Step::Keep {
            ops.extend(open.take());
            i += 1;
            j += 1;
            continue;
        }
        let op = open.get_or_insert_with(|| EditOp {
            kind: EditKind::Sub,
            source: String::new(),
            target: String::new(),
            position: i,
        });
        match step {
            Step::Sub => {
                op.source.push(a[i]);
                op.target.push(b[j]);
                i += 1;
                j += 1;
            }
            Step::Ins => {
                op.target.push(b[j]);
                j += 1;
            }
            Step::Del => {
                op.source.push(a[i]);
                i += 1;
            }
            Step::Keep => unreachable!(),
        }
    }
    ops.extend(open);
    for op in &mut ops {
        op.kind = match (op.source.is_empty(), op.target.is_empty()) {
            (true, _) => EditKind::Ins,
            (_, true) => EditKind::Del,
            _ => EditKind::Sub,
        };
    }
    let merged = ops.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ");
    EditSignature { ops, merged }
}

/// Replay `ops` over `standard`. Returns `None` if an op does not match.
pub fn apply_edits(standard: &str, ops: &[EditOp]) -> Option<String> {
    let chars: Vec<char> = standard.chars().collect();
    let mut out = String::with_capacity(standard.len());
    let mut cursor = 0;
    for op in ops {
        if op.position < cursor || op.position > chars.len() {
            return None;
        }
        out.extend(&chars[cursor..op.position]);
        let len = op.source.chars().count();
        let end = op.position + len;
        if end > chars.len() || chars[op.position..end].iter().copied().ne(op.source.chars()) {
            return None;
        }
        out.push_str(&op.target);
        cursor = end;
    }
    out.extend(&chars[cursor..]);
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn op(kind: EditKind, source: &str, target: &str, position: usize) -> EditOp {
        EditOp {
            kind,
            source: source.into(),
            target: target.into(),
            position,
        }
    }

    #[test]
    fn distance_examples() {
        assert_eq!(levenshtein("abc", "abc"), 0);
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(levenshtein("circus", "icrcus"), 2);
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("né", "ne"), 1);
    }

    #[test]
    fn signature_after_aftah() {
        let sig = edit_signature("after", "aftah");
        assert_eq!(sig.ops, vec![op(EditKind::Sub, "er", "ah", 3)]);
        assert_eq!(sig.merged, "er->ah");
    }

    #[test]
    fn signature_quarters() {
        let sig = edit_signature("quarters", "qua'ters");
        assert_eq!(sig.ops, vec![op(EditKind::Sub, "r", "'", 3)]);
        assert_eq!(sig.merged, "r->'");
    }

    #[test]
    fn signature_terminal_g() {
        let sig = edit_signature("blooming", "bloomin");
        assert_eq!(sig.ops, vec![op(EditKind::Del, "g", "", 7)]);
        assert_eq!(sig.merged, "-g");
    }

    #[test]
    fn signature_mixed_runs_merge() {
        assert_eq!(edit_signature("rather", "ratha").merged, "er->a");
        assert_eq!(edit_signature("hunters", "hoonters").merged, "u->oo");
        assert_eq!(edit_signature("falls", "valls").merged, "f->v");
        assert_eq!(edit_signature("poem", "boem").merged, "p->b");
    }

    #[test]
    fn signature_identity_and_inserts() {
        let sig = edit_signature("same", "same");
        assert!(sig.ops.is_empty());
        assert_eq!(sig.merged, "");
        let sig = edit_signature("em", "'em");
        assert_eq!(sig.ops, vec![op(EditKind::Ins, "", "'", 0)]);
        assert_eq!(sig.merged, "+'");
    }

    #[test]
    fn gaps_go_leftmost() {
        let sig = edit_signature("aab", "ab");
        assert_eq!(sig.ops, vec![op(EditKind::Del, "a", "", 0)]);
    }

    #[test]
    fn several_edits_are_listed() {
        let sig = edit_signature("going to", "gwine ta");
        assert_eq!(apply_edits("going to", &sig.ops).unwrap(), "gwine ta");
        assert!(sig.ops.len() > 1);
        assert!(sig.merged.contains(", "));
    }

    #[test]
    fn replay_rejects_mismatched_ops() {
        assert!(apply_edits("abc", &[op(EditKind::Sub, "x", "y", 0)]).is_none());
        assert!(apply_edits("abc", &[op(EditKind::Del, "c", "", 5)]).is_none());
    }
}
