//! Phonetic codes, edit distance and edit signatures.

mod edit;
mod metaphone;

pub use edit::{apply_edits, edit_signature, levenshtein, EditKind, EditOp, EditSignature};
pub use metaphone::{metaphone, Metaphone};

/// Levenshtein distance between the Metaphone codes of `a` and `b`.
pub fn mphone_distance(a: &str, b: &str) -> usize {
    levenshtein(&metaphone(a), &metaphone(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mphone_examples() {
        assert_eq!(mphone_distance("after", "after"), 0);
        // both encode to HNTRS
        assert_eq!(mphone_distance("hunters", "hoonters"), 0);
        assert_eq!(mphone_distance("falls", "valls"), 0);
        // AFTR vs AFT
        assert_eq!(mphone_distance("after", "aftah"), 1);
        assert_eq!(
            mphone_distance("circus", "sucric"),
            levenshtein(&metaphone("circus"), &metaphone("sucric"))
        );
    }

    proptest! {
        #[test]
        fn levenshtein_bounds(a in "[a-d]{0,10}", b in "[a-d]{0,10}") {
            let d = levenshtein(&a, &b);
            let (la, lb) = (a.chars().count(), b.chars().count());
            prop_assert!(la.abs_diff(lb) <= d);
            prop_assert!(d <= la.max(lb));
            prop_assert_eq!(d, levenshtein(&b, &a));
            prop_assert_eq!(d == 0, a == b);
        }

        #[test]
        fn levenshtein_triangle(a in "[a-c]{0,8}", b in "[a-c]{0,8}", c in "[a-c]{0,8}") {
            prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
        }

        #[test]
        fn signature_replays(a in "[a-e' ]{0,12}", b in "[a-e' ]{0,12}") {
            let sig = edit_signature(&a, &b);
            prop_assert_eq!(apply_edits(&a, &sig.ops), Some(b.clone()));
            // every unit edit touches at least one character of some op
            let touched: usize = sig.ops.iter()
                .map(|op| op.source.chars().count() + op.target.chars().count())
                .sum();
            prop_assert!(touched >= levenshtein(&a, &b));
        }

        #[test]
        fn signature_replays_unicode(a in "\\PC{0,8}", b in "\\PC{0,8}") {
            let sig = edit_signature(&a, &b);
            prop_assert_eq!(apply_edits(&a, &sig.ops), Some(b));
        }
    }
}
