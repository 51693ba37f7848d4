//! Composition and merge rules for alignment counters.
//!
//! Outgoing chunks add a processor's relative counters to the cumulative
//! counters of the merged input ([`compose`]). Merging several inputs takes
//! the component-wise maximum ([`merge_params`]): only the region in which
//! every input is valid stays valid. [`drop_counts`] derives how many columns
//! each input must lose at either end to line up with the merged result.

use thiserror::Error;

use crate::chunk::{AlignmentParams, MAX_COUNTER};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AlignmentError {
    #[error("alignment counter overflow composing {merged} with {feature}")]
    Overflow {
        merged: AlignmentParams,
        feature: AlignmentParams,
    },
    #[error("cannot merge an empty set of alignment parameters")]
    EmptyInput,
    #[error("merged parameters {merged} do not dominate chunk parameters {chunk}")]
    InconsistentParams {
        merged: AlignmentParams,
        chunk: AlignmentParams,
    },
}

/// Columns to drop when slicing one input into a merged chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DropCounts {
    /// Dropped at the end of the array: `merged.p - chunk.p`.
    pub high: usize,
    /// Extra columns dropped at the start of a discontinuous chunk:
    /// `merged.d - chunk.d`.
    pub low: usize,
    /// Columns dropped at the start of a continuous chunk merged into a
    /// discontinuous result: `merged.d + chunk.p`.
    pub low_irregular: usize,
}

/// Cumulative counters of an outgoing chunk: component-wise sum.
pub fn compose(
    merged: AlignmentParams,
    feature: AlignmentParams,
) -> Result<AlignmentParams, AlignmentError> {
    let m = merged.as_array();
    let f = feature.as_array();
    let mut out = [0u32; 4];
    for i in 0..4 {
        out[i] = m[i]
            .checked_add(f[i])
            .filter(|&v| v <= MAX_COUNTER)
            .ok_or(AlignmentError::Overflow { merged, feature })?;
    }
    Ok(AlignmentParams::from_array(out))
}

/// Counters of a merged chunk: component-wise maximum over the inputs.
pub fn merge_params<'a, I>(inputs: I) -> Result<AlignmentParams, AlignmentError>
where
    I: IntoIterator<Item = &'a AlignmentParams>,
{
    let mut iter = inputs.into_iter();
    let first = *iter.next().ok_or(AlignmentError::EmptyInput)?;
    Ok(iter.fold(first, |acc, x| {
        let a = acc.as_array();
        let b = x.as_array();
        AlignmentParams::from_array([
            a[0].max(b[0]),
            a[1].max(b[1]),
            a[2].max(b[2]),
            a[3].max(b[3]),
        ])
    }))
}

pub fn drop_counts(
    merged: AlignmentParams,
    chunk: AlignmentParams,
) -> Result<DropCounts, AlignmentError> {
    if merged.included_past < chunk.included_past
        || merged.dropped_after_discontinuity < chunk.dropped_after_discontinuity
    {
        return Err(AlignmentError::InconsistentParams { merged, chunk });
    }
    Ok(DropCounts {
        high: (merged.included_past - chunk.included_past) as usize,
        low: (merged.dropped_after_discontinuity - chunk.dropped_after_discontinuity) as usize,
        low_irregular: merged.dropped_after_discontinuity as usize + chunk.included_past as usize,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const fn ap(p: u32, d: u32, l: u32, s: u32) -> AlignmentParams {
        AlignmentParams::new(p, d, l, s)
    }

    #[test]
    fn compose_examples() {
        assert_eq!(compose(ap(0, 0, 0, 0), ap(7, 3, 2, 1)).unwrap(), ap(7, 3, 2, 1));
        assert_eq!(compose(ap(5, 100, 4, 4), ap(5, 0, 0, 0)).unwrap(), ap(10, 100, 4, 4));
    }

    #[test]
    fn compose_overflow_is_an_error() {
        let big = ap(MAX_COUNTER, 0, 0, 0);
        assert!(matches!(
            compose(big, ap(1, 0, 0, 0)),
            Err(AlignmentError::Overflow { .. })
        ));
        assert_eq!(compose(big, ap(0, 1, 0, 0)).unwrap(), ap(MAX_COUNTER, 1, 0, 0));
    }

    #[test]
    fn compose_is_associative_on_small_counters() {
        // Every tuple with counters in 0..4.
        let vals: Vec<AlignmentParams> = (0..256u32)
            .map(|i| ap(i % 4, (i / 4) % 4, (i / 16) % 4, i / 64))
            .collect();
        for a in &vals {
            for b in &vals {
                for c in &vals {
                    let left = compose(compose(*a, *b).unwrap(), *c).unwrap();
                    let right = compose(*a, compose(*b, *c).unwrap()).unwrap();
                    assert_eq!(left, right);
                }
            }
        }
    }

    #[test]
    fn merge_examples() {
        assert_eq!(
            merge_params(&[ap(3, 10, 2, 0), ap(5, 4, 0, 6)]).unwrap(),
            ap(5, 10, 2, 6)
        );
        assert_eq!(merge_params(&[ap(1, 2, 3, 4)]).unwrap(), ap(1, 2, 3, 4));
        assert_eq!(merge_params(&[]), Err(AlignmentError::EmptyInput));
    }

    #[test]
    fn drop_count_examples() {
        let d = drop_counts(ap(5, 10, 0, 0), ap(3, 10, 0, 0)).unwrap();
        assert_eq!(
            d,
            DropCounts {
                high: 2,
                low: 0,
                low_irregular: 13
            }
        );
        let c = ap(4, 9, 1, 1);
        let d = drop_counts(c, c).unwrap();
        assert_eq!((d.high, d.low, d.low_irregular), (0, 0, 13));
        assert!(matches!(
            drop_counts(ap(4, 6, 0, 0), ap(5, 6, 0, 0)),
            Err(AlignmentError::InconsistentParams { .. })
        ));
    }

    #[test]
    fn linear_pipeline_accumulates_path_sums() {
        let stages = [ap(0, 16, 0, 0), ap(0, 200, 0, 0), ap(25, 25, 3, 3), ap(0, 0, 0, 0)];
        let mut cumulative = AlignmentParams::ZERO;
        for (k, stage) in stages.iter().enumerate() {
            cumulative = compose(merge_params([&cumulative]).unwrap(), *stage).unwrap();
            let expected = stages[..=k].iter().fold([0u32; 4], |mut acc, s| {
                for (a, v) in acc.iter_mut().zip(s.as_array()) {
                    *a += v;
                }
                acc
            });
            assert_eq!(cumulative.as_array(), expected);
        }
    }

    fn small() -> impl Strategy<Value = AlignmentParams> {
        (0u32..8, 0u32..8, 0u32..8, 0u32..8).prop_map(|(p, d, l, s)| ap(p, d, l, s))
    }

    proptest! {
        #[test]
        fn merge_is_a_semilattice(a in small(), b in small(), c in small()) {
            let ab = merge_params(&[a, b]).unwrap();
            prop_assert_eq!(ab, merge_params(&[b, a]).unwrap());
            prop_assert_eq!(
                merge_params(&[ab, c]).unwrap(),
                merge_params(&[a, merge_params(&[b, c]).unwrap()]).unwrap()
            );
            prop_assert_eq!(merge_params(&[a, a]).unwrap(), a);
        }

        #[test]
        fn merged_dominates_and_drops_fit(inputs in prop::collection::vec(small(), 1..5), extra in 1u32..20) {
            let merged = merge_params(&inputs).unwrap();
            for x in &inputs {
                for (m, v) in merged.as_array().iter().zip(x.as_array()) {
                    prop_assert!(*m >= v);
                }
                let d = drop_counts(merged, *x).unwrap();
                // Input chunks of e > merged d + p steps: a continuous chunk
                // keeps [d_l, e - d_H), a discontinuous one (already trimmed
                // by its own d + p) keeps [d_L, e - d - p - d_H).
                let e = merged.time_extent() as usize + extra as usize;
                prop_assert!(d.low_irregular + d.high < e);
                let trimmed = e - x.time_extent() as usize;
                prop_assert!(d.low + d.high < trimmed);
            }
        }
    }
}
