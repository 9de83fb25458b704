//! Label-sequence decoding and edit-distance-matched grouping evaluation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::proto::Label;
use crate::{Error, Result};

/// Edit-distance thresholds reported by default.
pub const DEFAULT_THRESHOLDS: [usize; 5] = [0, 1, 2, 3, 4];

/// Threshold used for the tiny/overlapping strata.
pub const STRATA_THRESHOLD: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupSource {
    GroundTruth,
    Predicted,
}

/// Element uuids of one merged group, in sequence order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MergedGroup {
    pub members: Vec<String>,
    pub source: GroupSource,
}

impl MergedGroup {
    pub fn new<I, S>(members: I, source: GroupSource) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self { members: members.into_iter().map(Into::into).collect(), source }
    }

    pub fn predicted<I: IntoIterator<Item = S>, S: Into<String>>(members: I) -> Self {
        Self::new(members, GroupSource::Predicted)
    }

    pub fn ground_truth<I: IntoIterator<Item = S>, S: Into<String>>(members: I) -> Self {
        Self::new(members, GroupSource::GroundTruth)
    }
}

/// Index ranges of the groups encoded by a label sequence.
///
/// `start-merge` opens a group (closing any open one), `merge` extends the
/// open group, `non-merge` closes it and is dropped. A `merge` with no open
/// group starts a new group at that element.
pub fn decode_spans(labels: &[Label]) -> Vec<Range<usize>> {
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    for (i, &label) in labels.iter().enumerate() {
        match label {
            Label::StartMerge => {
                if let Some(s) = open.replace(i) {
                    spans.push(s..i);
                }
            }
            Label::Merge => {
                open.get_or_insert(i);
            }
            Label::NonMerge => {
                if let Some(s) = open.take() {
                    spans.push(s..i);
                }
            }
        }
    }
    if let Some(s) = open {
        spans.push(s..labels.len());
    }
    spans
}

pub fn decode_groups(labels: &[Label], uuids: &[String], source: GroupSource) -> Result<Vec<MergedGroup>> {
    if labels.len() != uuids.len() {
        return Err(Error::Alignment(format!("{} labels for {} elements", labels.len(), uuids.len())));
    }
    Ok(decode_spans(labels)
        .into_iter()
        .map(|r| MergedGroup::new(uuids[r].iter().cloned(), source))
        .collect())
}

/// Inverse of [`decode_groups`] for contiguous, disjoint groups.
pub fn encode_labels(groups: &[MergedGroup], uuids: &[String]) -> Result<Vec<Label>> {
    let position: HashMap<&str, usize> = uuids.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
    let mut labels = vec![Label::NonMerge; uuids.len()];
    let mut taken = vec![false; uuids.len()];
    for g in groups {
        let mut idx = g
            .members
            .iter()
            .map(|u| position.get(u.as_str()).copied().ok_or_else(|| Error::UnknownUuid(u.clone())))
            .collect::<Result<Vec<_>>>()?;
        idx.sort_unstable();
        if idx.is_empty() || idx.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(Error::Contiguity(format!("{:?}", g.members)));
        }
        for (k, &i) in idx.iter().enumerate() {
            if std::mem::replace(&mut taken[i], true) {
                return Err(Error::Validation(format!("groups overlap at `{}`", uuids[i])));
            }
            labels[i] = if k == 0 { Label::StartMerge } else { Label::Merge };
        }
    }
    Ok(labels)
}

/// Levenshtein distance with unit insert, delete and substitute costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Minimum-cost assignment on a rectangular cost matrix.
///
/// Returns, for each row, the assigned column. When there are more rows than
/// columns, the unassigned rows get `None`. Every column is used at most once
/// and the total cost is minimal over all such injections.
pub fn hungarian(cost: &[Vec<i64>]) -> Vec<Option<usize>> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    debug_assert!(cost.iter().all(|r| r.len() == cols));
    if rows > cols {
        let transposed: Vec<Vec<i64>> = (0..cols).map(|j| (0..rows).map(|i| cost[i][j]).collect()).collect();
        let mut out = vec![None; rows];
        for (j, i) in hungarian(&transposed).into_iter().enumerate() {
            if let Some(i) = i {
                out[i] = Some(j);
            }
        }
        return out;
    }

    // Shortest augmenting paths with row/column potentials; rows ≤ cols.
    let inf = i64::MAX / 4;
    let mut u = vec![0i64; rows + 1];
    let mut v = vec![0i64; cols + 1];
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let reduced = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; rows];
    for j in 1..=cols {
        if owner[j] > 0 {
            out[owner[j] - 1] = Some(j - 1);
        }
    }
    out
}

/// Result of matching ground-truth groups to predicted groups.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GroupMatching {
    /// `(gt index, pred index, edit distance)`
    pub pairs: Vec<(usize, usize, usize)>,
    pub unmatched_gt: Vec<usize>,
    pub unmatched_pred: Vec<usize>,
}

impl GroupMatching {
    pub fn total_cost(&self) -> usize {
        self.pairs.iter().map(|p| p.2).sum()
    }
}

/// One-to-one matching minimizing the summed edit distance between member
/// uuid sequences.
pub fn match_groups(gt: &[MergedGroup], pred: &[MergedGroup]) -> GroupMatching {
    let cost: Vec<Vec<i64>> = gt
        .iter()
        .map(|g| pred.iter().map(|p| edit_distance(&g.members, &p.members) as i64).collect())
        .collect();
    let assignment = hungarian(&cost);
    let mut m = GroupMatching::default();
    let mut pred_used = vec![false; pred.len()];
    for (i, a) in assignment.into_iter().enumerate() {
        match a {
            Some(j) => {
                pred_used[j] = true;
                m.pairs.push((i, j, cost[i][j] as usize));
            }
            None => m.unmatched_gt.push(i),
        }
    }
    m.unmatched_pred = (0..pred.len()).filter(|&j| !pred_used[j]).collect();
    m
}

/// True/false positive and false negative counts at one threshold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Counts {
    pub fn from_matching(m: &GroupMatching, threshold: usize) -> Self {
        let tp = m.pairs.iter().filter(|p| p.2 <= threshold).count() as u64;
        let over = m.pairs.len() as u64 - tp;
        Counts { tp, fp: over + m.unmatched_pred.len() as u64, fn_: over + m.unmatched_gt.len() as u64 }
    }

    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    /// Precision, recall and F1. With nothing to find and nothing predicted
    /// all three are 1; any other zero denominator gives 0.
    pub fn metrics(&self) -> GroupMetrics {
        let (tp, fp, fn_) = (self.tp as f64, self.fp as f64, self.fn_ as f64);
        let (precision, recall) = if self.tp + self.fp == 0 && self.tp + self.fn_ == 0 {
            (1.0, 1.0)
        } else {
            (ratio(tp, tp + fp), ratio(tp, tp + fn_))
        };
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        GroupMetrics { tp: self.tp, fp: self.fp, fn_: self.fn_, precision, recall, f1 }
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratumMetrics {
    pub threshold: usize,
    #[serde(flatten)]
    pub metrics: GroupMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrataReport {
    pub tiny: StratumMetrics,
    pub overlapping: StratumMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupingReport {
    /// Keyed by the threshold rendered as a string.
    pub thresholds: BTreeMap<String, GroupMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strata: Option<StrataReport>,
}

impl GroupingReport {
    pub fn at(&self, threshold: usize) -> Option<&GroupMetrics> {
        self.thresholds.get(&threshold.to_string())
    }
}

/// Per-prototype metrics at each threshold. The matching is computed once.
pub fn grouping_metrics(gt: &[MergedGroup], pred: &[MergedGroup], thresholds: &[usize]) -> GroupingReport {
    let mut tally = GroupingTally::new(thresholds);
    tally.add_prototype(gt, pred, None);
    tally.report()
}

/// Keeps the groups that contain at least one flagged element.
pub fn restrict_to_flagged(groups: &[MergedGroup], flagged: &HashSet<String>) -> Vec<MergedGroup> {
    groups.iter().filter(|g| g.members.iter().any(|u| flagged.contains(u))).cloned().collect()
}

/// Metrics restricted to groups touching a flagged element. Both sides are
/// restricted, so a stratum with no flagged elements is vacuously perfect.
pub fn stratified_metrics(
    gt: &[MergedGroup],
    pred: &[MergedGroup],
    flagged: &HashSet<String>,
    threshold: usize,
) -> StratumMetrics {
    let m = match_groups(&restrict_to_flagged(gt, flagged), &restrict_to_flagged(pred, flagged));
    StratumMetrics { threshold, metrics: Counts::from_matching(&m, threshold).metrics() }
}

/// Flags for the tiny/overlapping strata of one prototype, as uuid sets.
#[derive(Clone, Debug, Default)]
pub struct StrataFlags {
    pub tiny: HashSet<String>,
    pub overlapping: HashSet<String>,
}

/// Micro-averaging accumulator: counts are summed across prototypes before
/// computing precision and recall.
#[derive(Clone, Debug)]
pub struct GroupingTally {
    thresholds: Vec<usize>,
    counts: Vec<Counts>,
    strata_threshold: usize,
    tiny: Counts,
    overlapping: Counts,
    has_strata: bool,
}

impl GroupingTally {
    pub fn new(thresholds: &[usize]) -> Self {
        Self {
            thresholds: thresholds.to_vec(),
            counts: vec![Counts::default(); thresholds.len()],
            strata_threshold: STRATA_THRESHOLD,
            tiny: Counts::default(),
            overlapping: Counts::default(),
            has_strata: false,
        }
    }

    pub fn with_strata_threshold(mut self, t: usize) -> Self {
        self.strata_threshold = t;
        self
    }

    pub fn add_prototype(&mut self, gt: &[MergedGroup], pred: &[MergedGroup], strata: Option<&StrataFlags>) {
        let m = match_groups(gt, pred);
        for (c, &t) in self.counts.iter_mut().zip(&self.thresholds) {
            c.add(Counts::from_matching(&m, t));
        }
        if let Some(flags) = strata {
            self.has_strata = true;
            for (acc, set) in [(&mut self.tiny, &flags.tiny), (&mut self.overlapping, &flags.overlapping)] {
                let sm = match_groups(&restrict_to_flagged(gt, set), &restrict_to_flagged(pred, set));
                acc.add(Counts::from_matching(&sm, self.strata_threshold));
            }
        }
    }

    pub fn merge(&mut self, other: &GroupingTally) {
        debug_assert_eq!(self.thresholds, other.thresholds);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            a.add(*b);
        }
        self.tiny.add(other.tiny);
        self.overlapping.add(other.overlapping);
        self.has_strata |= other.has_strata;
    }

    pub fn report(&self) -> GroupingReport {
        let thresholds = self.thresholds.iter().zip(&self.counts).map(|(t, c)| (t.to_string(), c.metrics())).collect();
        let strata = self.has_strata.then(|| StrataReport {
            tiny: StratumMetrics { threshold: self.strata_threshold, metrics: self.tiny.metrics() },
            overlapping: StratumMetrics { threshold: self.strata_threshold, metrics: self.overlapping.metrics() },
        });
        GroupingReport { thresholds, strata }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Merge as M, NonMerge as N, StartMerge as S};

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("e{i}")).collect()
    }

    fn spans(labels: &[Label]) -> Vec<Vec<usize>> {
        decode_spans(labels).into_iter().map(|r| r.collect()).collect()
    }

    #[test]
    fn decoding_rules() {
        assert_eq!(spans(&[N, S, M, M, N]), vec![vec![1, 2, 3]]);
        assert_eq!(spans(&[S, S, M]), vec![vec![0], vec![1, 2]]);
        assert_eq!(spans(&[M, M, N]), vec![vec![0, 1]]);
        assert_eq!(spans(&[N, N]), Vec::<Vec<usize>>::new());
        assert!(decode_groups(&[S], &ids(2), GroupSource::Predicted).is_err());
    }

    #[test]
    fn encoding_adjacent_groups_starts_each_head() {
        let u = ids(5);
        let groups = vec![MergedGroup::ground_truth(["e0", "e1"]), MergedGroup::ground_truth(["e2", "e3"])];
        let labels = encode_labels(&groups, &u).unwrap();
        assert_eq!(labels, [S, M, S, M, N]);
        assert_eq!(decode_groups(&labels, &u, GroupSource::GroundTruth).unwrap(), groups);
        assert_eq!(encode_labels(&[], &u).unwrap(), vec![N; 5]);
        let overlapping = vec![MergedGroup::ground_truth(["e0", "e1"]), MergedGroup::ground_truth(["e1", "e2"])];
        assert!(matches!(encode_labels(&overlapping, &u), Err(Error::Validation(_))));
    }

    #[test]
    fn edit_distance_examples() {
        assert_eq!(edit_distance(&["A", "B", "C"], &["A", "B", "C"]), 0);
        assert_eq!(edit_distance(&["A", "B", "C"], &["A", "C"]), 1);
        assert_eq!(edit_distance::<&str>(&[], &["A", "B"]), 2);
        assert_eq!(edit_distance(&['k', 'i', 't', 't', 'e', 'n'], &['s', 'i', 't', 't', 'i', 'n', 'g']), 3);
    }

    #[test]
    fn hungarian_small_cases() {
        assert_eq!(hungarian(&[vec![0, 3], vec![3, 0]]), [Some(0), Some(1)]);
        assert_eq!(hungarian(&[vec![5, 1, 9]]), [Some(1)]);
        assert_eq!(hungarian(&[vec![4], vec![2], vec![7]]), [None, Some(0), None]);
        assert_eq!(hungarian(&[]), Vec::<Option<usize>>::new());
    }

    #[test]
    fn threshold_rules_by_hand() {
        // Two matched pairs at distances 1 and 5.
        let m = GroupMatching { pairs: vec![(0, 0, 1), (1, 1, 5)], ..Default::default() };
        let at = |t| Counts::from_matching(&m, t).metrics();
        assert_eq!((at(0).precision, at(0).recall), (0.0, 0.0));
        assert_eq!((at(1).precision, at(1).recall), (0.5, 0.5));
        assert_eq!((at(4).precision, at(4).recall), (0.5, 0.5));
        assert_eq!(at(4).tp + at(4).fn_, 2);
    }

    #[test]
    fn empty_sides() {
        let gt = vec![MergedGroup::ground_truth(["a", "b"]), MergedGroup::ground_truth(["c", "d"]), MergedGroup::ground_truth(["e", "f"])];
        let r = grouping_metrics(&gt, &[], &DEFAULT_THRESHOLDS);
        for m in r.thresholds.values() {
            assert_eq!((m.precision, m.recall, m.f1, m.fn_), (0.0, 0.0, 0.0, 3));
        }
        let r = grouping_metrics(&[], &[], &DEFAULT_THRESHOLDS);
        assert!(r.thresholds.values().all(|m| m.precision == 1.0 && m.recall == 1.0 && m.f1 == 1.0));
        let perfect = grouping_metrics(&gt, &gt, &DEFAULT_THRESHOLDS);
        assert!(perfect.thresholds.values().all(|m| m.f1 == 1.0));
    }

    #[test]
    fn strata_restrict_both_sides() {
        let gt = vec![MergedGroup::ground_truth(["a", "b"]), MergedGroup::ground_truth(["c", "d"])];
        let pred = vec![MergedGroup::predicted(["a", "b"]), MergedGroup::predicted(["x", "y"])];
        let none = stratified_metrics(&gt, &pred, &HashSet::new(), 1);
        assert_eq!((none.metrics.precision, none.metrics.recall, none.metrics.f1), (1.0, 1.0, 1.0));
        let flagged: HashSet<String> = ["c".to_string()].into();
        let s = stratified_metrics(&gt, &pred, &flagged, 1);
        assert_eq!((s.metrics.tp, s.metrics.fp, s.metrics.fn_), (0, 0, 1));
    }

    #[test]
    fn report_json_shape() {
        let mut tally = GroupingTally::new(&DEFAULT_THRESHOLDS);
        tally.add_prototype(&[MergedGroup::ground_truth(["a"])], &[], Some(&StrataFlags::default()));
        let v = serde_json::to_value(tally.report()).unwrap();
        for t in ["0", "1", "2", "3", "4"] {
            let m = &v["thresholds"][t];
            for k in ["tp", "fp", "fn", "precision", "recall", "f1"] {
                assert!(m.get(k).is_some(), "{t}.{k}");
            }
        }
        assert_eq!(v["strata"]["tiny"]["threshold"], 1);
        assert!(v["strata"]["overlapping"].get("f1").is_some());
    }
}
