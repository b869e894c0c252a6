//! Late fusion of per-segment class distributions into one clip decision.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mlp::argmax;

/// Floor added inside the log of the product rule.
pub const PRODUCT_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AggregationError {
    #[error("no segment predictions to aggregate")]
    Empty,
    #[error("segment {index} has {found} classes, expected {expected}")]
    Length {
        index: usize,
        found: usize,
        expected: usize,
    },
    #[error("unknown aggregation rule {0:?} (expected majority, sum, product or weighted)")]
    UnknownRule(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationRule {
    /// One vote per segment for its argmax class.
    Majority,
    /// Mean probability per class.
    Sum,
    /// Mean log probability per class.
    Product,
    /// Argmax votes weighted by the segment's top probability.
    Weighted,
}

impl AggregationRule {
    pub const ALL: [AggregationRule; 4] = [
        AggregationRule::Majority,
        AggregationRule::Sum,
        AggregationRule::Product,
        AggregationRule::Weighted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Majority => "majority",
            Self::Sum => "sum",
            Self::Product => "product",
            Self::Weighted => "weighted",
        }
    }

    /// Position in [`AggregationRule::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for AggregationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AggregationRule {
    type Err = AggregationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "majority" => Ok(Self::Majority),
            "sum" => Ok(Self::Sum),
            "product" | "prod" => Ok(Self::Product),
            "weighted" => Ok(Self::Weighted),
            _ => Err(AggregationError::UnknownRule(s.to_owned())),
        }
    }
}

/// A clip-level decision.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipPrediction {
    pub rule: AggregationRule,
    pub scores: Vec<f64>,
    pub predicted: usize,
}

/// Among the classes sharing the top score, pick the one with the larger
/// summed probability, then the lowest index.
fn vote_winner(scores: &[f64], prob_sums: &[f64]) -> usize {
    let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut best: Option<usize> = None;
    for (c, &s) in scores.iter().enumerate() {
        if s != top {
            continue;
        }
        best = match best {
            Some(b) if prob_sums[b] >= prob_sums[c] => Some(b),
            _ => Some(c),
        };
    }
    best.unwrap_or(0)
}

/// Fuses segment distributions of one clip under `rule`.
pub fn aggregate<P: AsRef<[f64]>>(
    predictions: &[P],
    rule: AggregationRule,
) -> Result<ClipPrediction, AggregationError> {
    let first = predictions.first().ok_or(AggregationError::Empty)?;
    let classes = first.as_ref().len();
    for (index, p) in predictions.iter().enumerate() {
        let found = p.as_ref().len();
        if found != classes || found == 0 {
            return Err(AggregationError::Length {
                index,
                found,
                expected: classes,
            });
        }
    }
    let segments = predictions.len() as f64;

    let mut prob_sums = vec![0.0; classes];
    for p in predictions {
        for (s, &v) in prob_sums.iter_mut().zip(p.as_ref()) {
            *s += v;
        }
    }

    let (scores, predicted) = match rule {
        AggregationRule::Sum => {
            let scores: Vec<f64> = prob_sums.iter().map(|s| s / segments).collect();
            let predicted = argmax(&scores);
            (scores, predicted)
        }
        AggregationRule::Product => {
            let mut scores = vec![0.0; classes];
            for p in predictions {
                for (s, &v) in scores.iter_mut().zip(p.as_ref()) {
                    *s += (v + PRODUCT_FLOOR).ln();
                }
            }
            scores.iter_mut().for_each(|s| *s /= segments);
            let predicted = argmax(&scores);
            (scores, predicted)
        }
        AggregationRule::Majority | AggregationRule::Weighted => {
            let mut scores = vec![0.0; classes];
            for p in predictions {
                let p = p.as_ref();
                let winner = argmax(p);
                scores[winner] += match rule {
                    AggregationRule::Majority => 1.0,
                    _ => p[winner],
                };
            }
            let predicted = vote_winner(&scores, &prob_sums);
            (scores, predicted)
        }
    };
    Ok(ClipPrediction {
        rule,
        scores,
        predicted,
    })
}

/// All four rules at once.
pub fn aggregate_all<P: AsRef<[f64]>>(
    predictions: &[P],
) -> Result<[ClipPrediction; 4], AggregationError> {
    Ok([
        aggregate(predictions, AggregationRule::Majority)?,
        aggregate(predictions, AggregationRule::Sum)?,
        aggregate(predictions, AggregationRule::Product)?,
        aggregate(predictions, AggregationRule::Weighted)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TWO: [[f64; 2]; 2] = [[0.6, 0.4], [0.3, 0.7]];

    #[test]
    fn sum_rule() {
        let c = aggregate(&TWO, AggregationRule::Sum).unwrap();
        assert!((c.scores[0] - 0.45).abs() < 1e-12 && (c.scores[1] - 0.55).abs() < 1e-12);
        assert_eq!(c.predicted, 1);
    }

    #[test]
    fn product_rule() {
        // Direct products: 0.6 * 0.3 = 0.18 and 0.4 * 0.7 = 0.28.
        let c = aggregate(&TWO, AggregationRule::Product).unwrap();
        assert_eq!(c.predicted, 1);
        assert!((c.scores[0] - (0.18f64).ln() / 2.0).abs() < 1e-9);
    }

    #[test]
    fn majority_tie_broken_by_probability_mass() {
        let c = aggregate(&TWO, AggregationRule::Majority).unwrap();
        assert_eq!(c.scores, vec![1.0, 1.0]);
        assert_eq!(c.predicted, 1);
    }

    #[test]
    fn weighted_votes() {
        let c = aggregate(&TWO, AggregationRule::Weighted).unwrap();
        assert_eq!(c.scores, vec![0.6, 0.7]);
        assert_eq!(c.predicted, 1);
    }

    #[test]
    fn full_tie_goes_to_lowest_index() {
        let p = [[0.5, 0.5], [0.5, 0.5]];
        for rule in AggregationRule::ALL {
            assert_eq!(aggregate(&p, rule).unwrap().predicted, 0);
        }
    }

    #[test]
    fn single_segment_is_its_argmax() {
        let p = [[0.1, 0.2, 0.6, 0.1]];
        for rule in AggregationRule::ALL {
            assert_eq!(aggregate(&p, rule).unwrap().predicted, 2);
        }
    }

    #[test]
    fn errors() {
        let empty: [[f64; 2]; 0] = [];
        assert_eq!(
            aggregate(&empty, AggregationRule::Sum).unwrap_err(),
            AggregationError::Empty
        );
        let ragged = vec![vec![0.5, 0.5], vec![1.0]];
        assert!(matches!(
            aggregate(&ragged, AggregationRule::Sum),
            Err(AggregationError::Length { index: 1, .. })
        ));
    }

    #[test]
    fn survives_long_clips() {
        // 1499 segments of small probabilities would underflow a raw product.
        let p = vec![vec![1e-3, 0.999 - 1e-3, 1e-3]; 1499];
        let c = aggregate(&p, AggregationRule::Product).unwrap();
        assert!(c.scores.iter().all(|s| s.is_finite()));
        assert_eq!(c.predicted, 1);
    }

    #[test]
    fn parse_names() {
        for rule in AggregationRule::ALL {
            assert_eq!(rule.name().parse::<AggregationRule>().unwrap(), rule);
            assert_eq!(AggregationRule::ALL[rule.index()], rule);
        }
        assert!("median".parse::<AggregationRule>().is_err());
    }

    fn simplexes() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (2usize..6, 1usize..20).prop_flat_map(|(c, s)| {
            proptest::collection::vec(
                proptest::collection::vec(0.01f64..1.0, c).prop_map(|v| {
                    let sum: f64 = v.iter().sum();
                    v.into_iter().map(|x| x / sum).collect::<Vec<_>>()
                }),
                s,
            )
        })
    }

    proptest! {
        #[test]
        fn permutation_invariant(preds in simplexes(), seed in any::<u64>()) {
            let mut shuffled = preds.clone();
            crate::rng::Xorshift64Star::new(seed).shuffle(&mut shuffled);
            for rule in AggregationRule::ALL {
                prop_assert_eq!(
                    aggregate(&preds, rule).unwrap().predicted,
                    aggregate(&shuffled, rule).unwrap().predicted
                );
            }
        }

        #[test]
        fn unanimous_segments_decide(preds in simplexes(), target in 0usize..5) {
            let c = preds[0].len();
            let target = target % c;
            // Push every segment's mass onto `target`.
            let skewed: Vec<Vec<f64>> = preds
                .iter()
                .map(|p| {
                    let mut q: Vec<f64> = p.iter().map(|v| v * 0.1).collect();
                    q[target] += 0.9;
                    q
                })
                .collect();
            for rule in AggregationRule::ALL {
                prop_assert_eq!(aggregate(&skewed, rule).unwrap().predicted, target);
            }
        }

        #[test]
        fn duplication_keeps_vote_and_sum_winners(preds in simplexes()) {
            let doubled: Vec<Vec<f64>> = preds.iter().chain(&preds).cloned().collect();
            for rule in [AggregationRule::Majority, AggregationRule::Sum, AggregationRule::Weighted] {
                prop_assert_eq!(
                    aggregate(&preds, rule).unwrap().predicted,
                    aggregate(&doubled, rule).unwrap().predicted
                );
            }
        }
    }
}
