//! ROC analysis of membership scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Scores `>= threshold` are called members; `+inf` for the origin.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub members: usize,
    pub nonmembers: usize,
}

impl RocCurve {
    /// Smallest non-zero false-positive rate the sample supports.
    pub fn fpr_resolution(&self) -> f64 {
        1.0 / self.nonmembers as f64
    }

    /// True when `target` is finer than the achievable FPR grid.
    pub fn below_resolution(&self, target: f64) -> bool {
        target < self.fpr_resolution()
    }
}

/// One point per distinct score, swept from high to low, plus `(0, 0)`.
pub fn roc(scores: &[f64], members: &[bool]) -> Result<RocCurve> {
    if scores.len() != members.len() {
        return Err(Error::invalid("one member bit per score required"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite { op: "roc" });
    }
    let positives = members.iter().filter(|&&m| m).count();
    let negatives = members.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::invalid("ROC needs both members and non-members"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let beta = scores[order[i]];
        while i < order.len() && scores[order[i]] == beta {
            if members[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: beta,
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
        });
    }
    Ok(RocCurve {
        points,
        members: positives,
        nonmembers: negatives,
    })
}

/// Trapezoidal area under the curve.
pub fn auc(curve: &RocCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Largest TPR among points whose FPR does not exceed `target`.
pub fn tpr_at_fpr(curve: &RocCurve, target: f64) -> f64 {
    // Compare counts, not rates, so 1/100 <= 0.01 holds exactly.
    let allowed = target * curve.nonmembers as f64 + 1e-9;
    curve
        .points
        .iter()
        .filter(|p| p.fpr * curve.nonmembers as f64 <= allowed)
        .map(|p| p.tpr)
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    /// `bins + 1` shared edges; the last bin is closed on the right.
    pub edges: Vec<f64>,
    pub member_counts: Vec<usize>,
    pub nonmember_counts: Vec<usize>,
}

impl Histogram {
    /// Number of samples that the smaller of the two classes puts in each
    /// bin, summed over bins.
    pub fn overlap(&self) -> usize {
        self.member_counts
            .iter()
            .zip(&self.nonmember_counts)
            .map(|(&a, &b)| a.min(b))
            .sum()
    }
}

pub fn histogram(scores: &[f64], members: &[bool], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    if scores.len() != members.len() {
        return Err(Error::invalid("one member bit per score required"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite { op: "histogram" });
    }
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if scores.is_empty() {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    };
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|k| if k == bins { hi } else { lo + width * k as f64 })
        .collect();
    let mut member_counts = vec![0; bins];
    let mut nonmember_counts = vec![0; bins];
    for (&s, &m) in scores.iter().zip(members) {
        // Edges are recomputed the same way, so a score equal to an edge
        // lands in the bin that starts there.
        let mut k = (((s - lo) / width) as usize).min(bins - 1);
        while k > 0 && s < edges[k] {
            k -= 1;
        }
        while k + 1 < bins && s >= edges[k + 1] {
            k += 1;
        }
        if m {
            member_counts[k] += 1;
        } else {
            nonmember_counts[k] += 1;
        }
    }
    Ok(Histogram {
        edges,
        member_counts,
        nonmember_counts,
    })
}

/// Headline numbers for one attack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub auc: f64,
    #[serde(rename = "tpr_at_0.1%_fpr")]
    pub tpr_at_01pct_fpr: f64,
    #[serde(rename = "tpr_at_1%_fpr")]
    pub tpr_at_1pct_fpr: f64,
    pub members: usize,
    pub nonmembers: usize,
    /// `1 / nonmembers`; targets below it cannot be resolved.
    pub fpr_resolution: f64,
    pub below_resolution: Vec<f64>,
}

pub const FPR_TARGETS: [f64; 2] = [0.001, 0.01];

impl AttackReport {
    pub fn from_curve(curve: &RocCurve) -> Self {
        Self {
            auc: auc(curve),
            tpr_at_01pct_fpr: tpr_at_fpr(curve, FPR_TARGETS[0]),
            tpr_at_1pct_fpr: tpr_at_fpr(curve, FPR_TARGETS[1]),
            members: curve.members,
            nonmembers: curve.nonmembers,
            fpr_resolution: curve.fpr_resolution(),
            below_resolution: FPR_TARGETS
                .iter()
                .copied()
                .filter(|&t| curve.below_resolution(t))
                .collect(),
        }
    }

    pub fn from_scores(scores: &[f64], members: &[bool]) -> Result<Self> {
        Ok(Self::from_curve(&roc(scores, members)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute force: evaluate every candidate threshold independently.
    fn sweep_oracle(scores: &[f64], members: &[bool]) -> Vec<(f64, f64)> {
        let mut betas: Vec<f64> = scores.to_vec();
        betas.sort_by(|a, b| b.total_cmp(a));
        betas.dedup();
        let p = members.iter().filter(|&&m| m).count() as f64;
        let n = members.len() as f64 - p;
        let mut out = vec![(0.0, 0.0)];
        for beta in betas {
            let tp = scores.iter().zip(members).filter(|(&s, &m)| m && s >= beta).count();
            let fp = scores.iter().zip(members).filter(|(&s, &m)| !m && s >= beta).count();
            out.push((fp as f64 / n, tp as f64 / p));
        }
        out
    }

    /// Mann-Whitney statistic with half credit for ties.
    fn rank_auc(scores: &[f64], members: &[bool]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if members[i] && !members[j] {
                    pairs += 1.0;
                    wins += if si > sj {
                        1.0
                    } else if si == sj {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn perfect_separation() {
        let curve = roc(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false]).unwrap();
        assert!(curve.points.iter().any(|p| p.fpr == 0.0 && p.tpr == 1.0));
        assert_eq!(auc(&curve), 1.0);
        assert_eq!(tpr_at_fpr(&curve, 0.001), 1.0);
        assert_eq!(tpr_at_fpr(&curve, 0.01), 1.0);
    }

    #[test]
    fn identical_scores_give_half() {
        let curve = roc(&[0.3; 6], &[true, false, true, false, true, false]).unwrap();
        assert_eq!(curve.points.len(), 2);
        assert_eq!(auc(&curve), 0.5);
    }

    #[test]
    fn six_mixed_scores_match_sweep() {
        let scores = [0.9, 0.4, 0.4, 0.7, 0.1, 0.6];
        let members = [true, false, true, false, false, true];
        let curve = roc(&scores, &members).unwrap();
        let got: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.fpr, p.tpr)).collect();
        assert_eq!(got, sweep_oracle(&scores, &members));
        assert_eq!(curve.points.last().map(|p| (p.fpr, p.tpr)), Some((1.0, 1.0)));
    }

    #[test]
    fn staircase_trapezoid() {
        // Points (0,0) (0,0.5) (0.5,0.5) (0.5,1) (1,1): area 0.75.
        let curve = roc(&[4.0, 3.0, 2.0, 1.0], &[true, false, true, false]).unwrap();
        assert_eq!(auc(&curve), 0.5 * 0.5 + 0.5 * 1.0);
        // Tied member/non-member pair contributes a sloped segment.
        let curve = roc(&[2.0, 1.0, 1.0, 0.0], &[true, true, false, false]).unwrap();
        assert_eq!(auc(&curve), 0.875);
    }

    #[test]
    fn diagonal_curve() {
        // Alternating scores: every threshold adds one member or one non-member.
        let scores: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let members: Vec<bool> = (0..20).map(|i| i % 2 == 1).collect();
        let curve = roc(&scores, &members).unwrap();
        assert!((auc(&curve) - 0.5).abs() < 0.06);
        assert_eq!(tpr_at_fpr(&curve, 0.001), 0.1);
        let rev: Vec<bool> = members.iter().map(|m| !m).collect();
        let curve = roc(&scores, &rev).unwrap();
        assert_eq!(tpr_at_fpr(&curve, 0.001), 0.0);
        assert!(curve.below_resolution(0.001));
        assert!(curve.below_resolution(0.01));
    }

    #[test]
    fn resolution_limited_low_fpr() {
        // 10 non-members: FPR moves in steps of 0.1, finer than both targets.
        let scores: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let members: Vec<bool> = (0..20).map(|i| i < 10).collect();
        let curve = roc(&scores, &members).unwrap();
        assert_eq!(tpr_at_fpr(&curve, 0.01), 0.0);
        let members: Vec<bool> = (0..20).map(|i| i >= 10).collect();
        let curve = roc(&scores, &members).unwrap();
        assert_eq!(tpr_at_fpr(&curve, 0.01), 1.0);
        let report = AttackReport::from_curve(&curve);
        assert_eq!(report.below_resolution, vec![0.001, 0.01]);
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(roc(&[0.1, 0.2], &[true, true]).is_err());
        assert!(roc(&[0.1, 0.2], &[false, false]).is_err());
        assert!(roc(&[f64::NAN, 0.2], &[true, false]).is_err());
    }

    #[test]
    fn histogram_fixture() {
        let scores = [0.0, 0.1, 0.25, 0.5, 0.75, 1.0];
        let members = [true, true, false, true, false, false];
        let h = histogram(&scores, &members, 4).unwrap();
        assert_eq!(h.edges, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(h.member_counts, vec![2, 0, 1, 0]);
        assert_eq!(h.nonmember_counts, vec![0, 1, 0, 2]);
        assert_eq!(h.overlap(), 0);
    }

    #[test]
    fn histogram_overlap_extremes() {
        let disjoint = histogram(&[0.0, 0.1, 0.9, 1.0], &[true, true, false, false], 2).unwrap();
        assert_eq!(disjoint.overlap(), 0);
        let scores: Vec<f64> = (0..50).flat_map(|i| [i as f64, i as f64]).collect();
        let members: Vec<bool> = (0..100).map(|i| i % 2 == 0).collect();
        let same = histogram(&scores, &members, 10).unwrap();
        assert_eq!(same.overlap(), 50);
        let flat = histogram(&[0.3, 0.3], &[true, false], 3).unwrap();
        assert_eq!(flat.member_counts.iter().sum::<usize>(), 1);
    }

    fn fixture() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..60).prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..12).prop_map(|v| v as f64 / 4.0), n),
                prop::collection::vec(any::<bool>(), n),
            )
                .prop_filter("both classes", |(_, m)| m.iter().any(|&b| b) && m.iter().any(|&b| !b))
        })
    }

    proptest! {
        #[test]
        fn matches_oracles((scores, members) in fixture()) {
            let curve = roc(&scores, &members).unwrap();
            let got: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.fpr, p.tpr)).collect();
            prop_assert_eq!(got, sweep_oracle(&scores, &members));
            prop_assert!((auc(&curve) - rank_auc(&scores, &members)).abs() < 1e-12);
        }

        #[test]
        fn curve_is_monotone((scores, members) in fixture()) {
            let curve = roc(&scores, &members).unwrap();
            for w in curve.points.windows(2) {
                prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
                prop_assert!(w[1].threshold < w[0].threshold);
            }
            let last = curve.points.last().unwrap();
            prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        }

        #[test]
        fn negated_scores_complement_auc((scores, members) in fixture()) {
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            let total = auc(&roc(&scores, &members).unwrap()) + auc(&roc(&neg, &members).unwrap());
            prop_assert!((total - 1.0).abs() < 1e-9);
        }

        #[test]
        fn increasing_transform_preserves_roc((scores, members) in fixture()) {
            let moved: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + 1.0).collect();
            let a = roc(&scores, &members).unwrap();
            let b = roc(&moved, &members).unwrap();
            let pts = |c: &RocCurve| c.points.iter().map(|p| (p.fpr, p.tpr)).collect::<Vec<_>>();
            prop_assert_eq!(pts(&a), pts(&b));
        }

        #[test]
        fn tpr_at_fpr_is_monotone((scores, members) in fixture(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let curve = roc(&scores, &members).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(tpr_at_fpr(&curve, lo) <= tpr_at_fpr(&curve, hi));
        }
    }
}
