//! Event reconstruction from window labels and event-based scoring with
//! onset/offset tolerance.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::{EventClass, EventLabel, NO_EVENT};

pub const N_EVENT_CLASSES: usize = 4;
pub const DEFAULT_TOLERANCE: f64 = 0.3;

/// Merge runs of identical non-no-event labels into events.
pub fn windows_to_events(labels: &[usize], starts: &[f64], window: f64) -> Vec<EventLabel> {
    let mut out = Vec::new();
    let mut i = 0;
    let n = labels.len().min(starts.len());
    while i < n {
        let c = labels[i];
        let mut j = i;
        while j + 1 < n && labels[j + 1] == c {
            j += 1;
        }
        if let Some(class) = EventClass::from_id(c).filter(|_| c != NO_EVENT) {
            out.push(EventLabel::new(class, starts[i], starts[j] + window));
        }
        i = j + 1;
    }
    out
}

/// Sliding majority filter of odd width `k` (ties keep the centre label).
pub fn mode_filter(labels: &[usize], k: usize) -> Vec<usize> {
    if k <= 1 {
        return labels.to_vec();
    }
    let r = k / 2;
    (0..labels.len())
        .map(|i| {
            let lo = i.saturating_sub(r);
            let hi = (i + r + 1).min(labels.len());
            let mut votes = [0usize; NO_EVENT + 1];
            for &l in &labels[lo..hi] {
                votes[l.min(NO_EVENT)] += 1;
            }
            let best = *votes.iter().max().unwrap_or(&0);
            if votes[labels[i].min(NO_EVENT)] == best {
                labels[i]
            } else {
                votes.iter().position(|&v| v == best).unwrap_or(labels[i])
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl AddAssign for Counts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

/// Additive counters; segments are scored separately and summed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub per_class: [Counts; N_EVENT_CLASSES],
    pub s: usize,
    pub d: usize,
    pub i: usize,
    pub n: usize,
}

impl AddAssign for EventCounts {
    fn add_assign(&mut self, o: Self) {
        for (a, b) in self.per_class.iter_mut().zip(o.per_class) {
            *a += b;
        }
        self.s += o.s;
        self.d += o.d;
        self.i += o.i;
        self.n += o.n;
    }
}

impl EventCounts {
    pub fn micro(&self) -> Counts {
        let mut c = Counts::default();
        for &k in &self.per_class {
            c += k;
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// (reference index, prediction index), class-correct.
    pub pairs: Vec<(usize, usize)>,
    /// Time-eligible, class-wrong leftovers.
    pub substitutions: Vec<(usize, usize)>,
    pub counts: EventCounts,
}

fn time_ok(r: &EventLabel, p: &EventLabel, tol: f64) -> bool {
    libm::fabs(r.onset - p.onset) <= tol && libm::fabs(r.offset - p.offset) <= tol
}

fn check_no_overlap(events: &[EventLabel]) -> Result<()> {
    for c in EventClass::ALL {
        let mut v: Vec<&EventLabel> = events.iter().filter(|e| e.class == c).collect();
        v.sort_by(|a, b| a.onset.total_cmp(&b.onset));
        for w in v.windows(2) {
            if w[1].onset < w[0].offset {
                return Err(Error::Label(format!(
                    "overlapping {} reference events at {:.3} and {:.3}",
                    c.name(),
                    w[0].onset,
                    w[1].onset
                )));
            }
        }
    }
    Ok(())
}

/// Maximum-cardinality matching of class-equal, time-eligible pairs, then
/// greedy substitution pairing of the leftovers by reference onset.
pub fn match_events(reference: &[EventLabel], predicted: &[EventLabel], tolerance: f64) -> Result<MatchResult> {
    check_no_overlap(reference)?;
    let adj: Vec<Vec<usize>> = reference
        .iter()
        .map(|r| (0..predicted.len()).filter(|&j| predicted[j].class == r.class && time_ok(r, &predicted[j], tolerance)).collect())
        .collect();
    // Kuhn's augmenting paths
    let mut owner: Vec<Option<usize>> = vec![None; predicted.len()];
    fn augment(i: usize, adj: &[Vec<usize>], owner: &mut [Option<usize>], seen: &mut [bool]) -> bool {
        for &j in &adj[i] {
            if seen[j] {
                continue;
            }
            seen[j] = true;
            if owner[j].is_none_or(|k| augment(k, adj, owner, seen)) {
                owner[j] = Some(i);
                return true;
            }
        }
        false
    }
    for i in 0..reference.len() {
        let mut seen = vec![false; predicted.len()];
        augment(i, &adj, &mut owner, &mut seen);
    }
    let mut pairs: Vec<(usize, usize)> = owner.iter().enumerate().filter_map(|(j, o)| o.map(|i| (i, j))).collect();
    pairs.sort_unstable();

    let mut ref_used = vec![false; reference.len()];
    let mut pred_used = vec![false; predicted.len()];
    for &(i, j) in &pairs {
        ref_used[i] = true;
        pred_used[j] = true;
    }
    let mut leftover: Vec<usize> = (0..reference.len()).filter(|&i| !ref_used[i]).collect();
    leftover.sort_by(|&a, &b| reference[a].onset.total_cmp(&reference[b].onset).then(a.cmp(&b)));
    let mut substitutions = Vec::new();
    for i in leftover {
        let r = &reference[i];
        let best = (0..predicted.len())
            .filter(|&j| !pred_used[j] && predicted[j].class != r.class && time_ok(r, &predicted[j], tolerance))
            .min_by(|&a, &b| predicted[a].onset.total_cmp(&predicted[b].onset).then(a.cmp(&b)));
        if let Some(j) = best {
            pred_used[j] = true;
            substitutions.push((i, j));
        }
    }

    let mut counts = EventCounts { n: reference.len(), s: substitutions.len(), ..EventCounts::default() };
    for r in reference {
        counts.per_class[r.class.id()].fn_ += 1;
    }
    for p in predicted {
        counts.per_class[p.class.id()].fp += 1;
    }
    for &(i, _) in &pairs {
        let c = &mut counts.per_class[reference[i].class.id()];
        c.tp += 1;
        c.fn_ -= 1;
        c.fp -= 1;
    }
    let m = counts.micro();
    counts.d = m.fn_ - counts.s;
    counts.i = m.fp - counts.s;
    Ok(MatchResult { pairs, substitutions, counts })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub error_rate: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Metrics whose denominator was empty (reported as 0).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Keyed by class name, in class-id order.
    pub per_class: Vec<(String, Scores)>,
    pub overall: Scores,
    pub counts: EventCounts,
}

impl MetricsReport {
    pub fn class(&self, c: EventClass) -> &Scores {
        &self.per_class[c.id()].1
    }
}

fn ratio(num: f64, den: f64, name: &str, undefined: &mut Vec<String>) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        undefined.push(name.into());
        0.0
    }
}

fn scores(c: Counts, er_num: usize, n: usize) -> Scores {
    let mut undefined = Vec::new();
    let (tp, fp, fn_) = (c.tp as f64, c.fp as f64, c.fn_ as f64);
    let precision = ratio(tp, tp + fp, "precision", &mut undefined);
    let recall = ratio(tp, tp + fn_, "recall", &mut undefined);
    let f1 = ratio(2.0 * precision * recall, precision + recall, "f1", &mut undefined);
    let error_rate = ratio(er_num as f64, n as f64, "error_rate", &mut undefined);
    Scores { precision, recall, f1, error_rate, tp: c.tp, fp: c.fp, fn_: c.fn_, undefined }
}

/// P, R, F1 per class and micro-averaged; ER = (S+D+I)/N overall and
/// (FN+FP)/N_c per class.
pub fn compute_metrics(counts: &EventCounts) -> MetricsReport {
    let per_class = EventClass::ALL
        .iter()
        .map(|c| {
            let k = counts.per_class[c.id()];
            (String::from(c.name()), scores(k, k.fn_ + k.fp, k.tp + k.fn_))
        })
        .collect();
    let overall = scores(counts.micro(), counts.s + counts.d + counts.i, counts.n);
    MetricsReport { per_class, overall, counts: *counts }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use EventClass::*;

    fn ev(c: EventClass, a: f64, b: f64) -> EventLabel {
        EventLabel::new(c, a, b)
    }

    #[test]
    fn window_runs() {
        let e = windows_to_events(&[4, 0, 0, 4], &[0.0, 0.15, 0.3, 0.45], 0.3);
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].class, Bite);
        assert!((e[0].onset - 0.15).abs() < 1e-12 && (e[0].offset - 0.6).abs() < 1e-12);
        let e = windows_to_events(&[2, 0], &[0.0, 0.15], 0.3);
        assert_eq!(e.iter().map(|e| e.class).collect::<Vec<_>>(), vec![GrazingChew, Bite]);
        assert!(windows_to_events(&[4, 4], &[0.0, 0.15], 0.3).is_empty());
    }

    fn rle(labels: &[usize]) -> Vec<(usize, usize, usize)> {
        let mut runs: Vec<(usize, usize, usize)> = Vec::new();
        for (i, &l) in labels.iter().enumerate() {
            match runs.last_mut() {
                Some(r) if r.0 == l => r.2 = i,
                _ => runs.push((l, i, i)),
            }
        }
        runs.into_iter().filter(|r| r.0 != NO_EVENT).collect()
    }

    proptest! {
        #[test]
        fn windows_match_rle(labels in prop::collection::vec(0usize..5, 0..60)) {
            let starts: Vec<f64> = (0..labels.len()).map(|i| i as f64 * 0.15).collect();
            let ev = windows_to_events(&labels, &starts, 0.3);
            let want = rle(&labels);
            prop_assert_eq!(ev.len(), want.len());
            for (e, (c, a, b)) in ev.iter().zip(want) {
                prop_assert_eq!(e.class.id(), c);
                prop_assert_eq!(e.onset, starts[a]);
                prop_assert_eq!(e.offset, starts[b] + 0.3);
            }
        }
    }

    #[test]
    fn mode_filter_smooths_isolated_flips() {
        assert_eq!(mode_filter(&[2, 2, 0, 2, 2], 3), vec![2, 2, 2, 2, 2]);
        assert_eq!(mode_filter(&[1, 2, 3], 1), vec![1, 2, 3]);
    }

    #[test]
    fn hand_examples() {
        let r = match_events(&[ev(Bite, 10.0, 10.35)], &[ev(Bite, 10.2, 10.5)], 0.3).unwrap();
        assert_eq!(r.counts.per_class[0].tp, 1);
        let r = match_events(&[ev(Bite, 10.0, 10.35)], &[ev(ChewBite, 10.05, 10.38)], 0.3).unwrap();
        assert_eq!((r.counts.s, r.counts.d, r.counts.i, r.counts.n), (1, 0, 0, 1));
        assert_eq!(compute_metrics(&r.counts).overall.error_rate, 1.0);
        let m = scores(Counts { tp: 8, fp: 2, fn_: 4 }, 0, 1);
        assert!((m.precision - 0.8).abs() < 1e-12);
        assert!((m.recall - 0.6666666666666666).abs() < 1e-12);
        assert!((m.f1 - 0.7272727272727273).abs() < 1e-12);
        let er = scores(Counts::default(), 1 + 2 + 1, 10);
        assert!((er.error_rate - 0.4).abs() < 1e-15);
        assert!(er.undefined.contains(&String::from("precision")));
        assert!(match_events(&[ev(Bite, 0.0, 1.0), ev(Bite, 0.5, 1.5)], &[], 0.3).is_err());
    }


    fn grid_events(raw: Vec<(usize, u32, u32)>) -> Vec<EventLabel> {
        // 1/64 s grid keeps arithmetic exact under shifts
        raw.into_iter()
            .map(|(c, a, d)| ev(EventClass::from_id(c).unwrap(), a as f64 / 64.0, (a + d) as f64 / 64.0))
            .collect()
    }

    fn non_overlapping(raw: Vec<(usize, u32, u32)>) -> Vec<EventLabel> {
        let mut t = 0;
        let mut v = Vec::new();
        for (c, gap, d) in raw {
            t += gap;
            v.push((c, t, d));
            t += d;
        }
        grid_events(v)
    }

    fn raw_events() -> impl Strategy<Value = Vec<(usize, u32, u32)>> {
        prop::collection::vec((0usize..4, 0u32..64, 1u32..48), 0..10)
    }

    proptest! {
        #[test]
        fn scoring_properties(r in raw_events(), p in raw_events(), shift in -8i32..8) {
            let r = non_overlapping(r);
            let p = grid_events(p.into_iter().map(|(c, a, d)| (c, a * 4, d)).collect());
            let m = match_events(&r, &p, 0.3).unwrap();
            for c in 0..N_EVENT_CLASSES {
                let k = m.counts.per_class[c];
                prop_assert_eq!(k.tp + k.fn_, r.iter().filter(|e| e.class.id() == c).count());
                prop_assert_eq!(k.tp + k.fp, p.iter().filter(|e| e.class.id() == c).count());
            }
            let dt = shift as f64 * 0.25;
            let sh = |v: &[EventLabel]| v.iter().map(|e| ev(e.class, e.onset + dt + 4.0, e.offset + dt + 4.0)).collect::<Vec<_>>();
            prop_assert_eq!(&match_events(&sh(&r), &sh(&p), 0.3).unwrap(), &m);
            let wide = match_events(&r, &p, 0.5).unwrap();
            prop_assert!(wide.pairs.len() >= m.pairs.len());
            let rep = compute_metrics(&m.counts);
            for (_, s) in rep.per_class.iter().chain([(String::new(), rep.overall.clone())].iter()) {
                prop_assert!((0.0..=1.0).contains(&s.precision) && (0.0..=1.0).contains(&s.recall));
                prop_assert!(s.error_rate >= 0.0);
                if s.precision + s.recall > 0.0 {
                    let h = 2.0 * s.precision * s.recall / (s.precision + s.recall);
                    prop_assert!((s.f1 - h).abs() < 1e-12);
                }
            }
            let pooled = m.counts.micro();
            prop_assert_eq!(rep.overall.tp, rep.per_class.iter().map(|c| c.1.tp).sum::<usize>());
            prop_assert_eq!(scores(pooled, 0, 1).f1, rep.overall.f1);
            let perfect = compute_metrics(&match_events(&r, &r, 0.3).unwrap().counts);
            if !r.is_empty() {
                prop_assert_eq!((perfect.overall.precision, perfect.overall.recall, perfect.overall.f1), (1.0, 1.0, 1.0));
            }
            prop_assert_eq!(perfect.overall.error_rate, 0.0);
        }
    }

    #[test]
    fn counts_aggregate_additively() {
        let a = match_events(&[ev(Bite, 0.0, 0.3)], &[ev(Bite, 0.1, 0.3)], 0.3).unwrap().counts;
        let b = match_events(&[ev(GrazingChew, 0.0, 0.3)], &[], 0.3).unwrap().counts;
        let mut t = a;
        t += b;
        assert_eq!(t.n, 2);
        assert_eq!(t.d, 1);
        let rep = compute_metrics(&t);
        assert_eq!(rep.overall.recall, 0.5);
        assert_eq!(rep.class(RuminationChew).undefined.len(), 4);
    }
}
