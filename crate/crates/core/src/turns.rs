//! Turns and pairwise turn-taking features.
//!
//! Same-floor talk alternates with short gaps, so one speaker's onsets land
//! near the other's offsets ("alignment"). Talk in different floors runs in
//! parallel and overlaps much more ("overlap_frac").

use std::collections::BTreeMap;

use crate::model::{ParticipantId, Turn, VadSegment};

pub type SegmentStreams = BTreeMap<ParticipantId, Vec<VadSegment>>;
pub type TurnStreams = BTreeMap<ParticipantId, Vec<Turn>>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub t0: f64,
    pub t1: f64,
}

impl Window {
    pub fn new(t0: f64, t1: f64) -> Self {
        Self { t0, t1 }
    }

    pub fn len(&self) -> f64 {
        self.t1 - self.t0
    }

    pub fn is_empty(&self) -> bool {
        self.t1 <= self.t0
    }

    pub fn contains(&self, t: f64) -> bool {
        self.t0 <= t && t < self.t1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairFeatures {
    pub a: ParticipantId,
    pub b: ParticipantId,
    pub window: Window,
    pub overlap_frac: f64,
    pub alignment: f64,
    pub cospeech_seconds: f64,
}

/// Groups a flat segment list per participant, each stream sorted by onset.
pub fn group_segments(segments: impl IntoIterator<Item = VadSegment>) -> SegmentStreams {
    let mut out: SegmentStreams = BTreeMap::new();
    for s in segments {
        out.entry(s.participant.clone()).or_default().push(s);
    }
    for v in out.values_mut() {
        v.sort_by(|a, b| a.t0.total_cmp(&b.t0));
    }
    out
}

/// True when some segment in the sorted stream satisfies `t0 <= t < t1`.
pub fn voiced_at(stream: &[VadSegment], t: f64) -> bool {
    let idx = stream.partition_point(|s| s.t0 <= t);
    idx > 0 && stream[idx - 1].t1 > t
}

/// Merges each participant's segments across gaps shorter than `turn_gap`
/// and returns all turns sorted by onset.
pub fn build_turns(streams: &SegmentStreams, turn_gap: f64) -> Vec<Turn> {
    let mut turns = Vec::new();
    for (p, segs) in streams {
        let mut cur: Vec<VadSegment> = Vec::new();
        for s in segs {
            if let Some(last) = cur.last() {
                if s.t0 - last.t1 >= turn_gap {
                    let done = std::mem::take(&mut cur);
                    turns.push(finish_turn(done, p, streams));
                }
            }
            cur.push(s.clone());
        }
        if !cur.is_empty() {
            turns.push(finish_turn(cur, p, streams));
        }
    }
    turns.sort_by(|a, b| a.t0.total_cmp(&b.t0).then_with(|| a.participant.cmp(&b.participant)));
    turns
}

fn finish_turn(segments: Vec<VadSegment>, who: &ParticipantId, streams: &SegmentStreams) -> Turn {
    let t0 = segments[0].t0;
    let clear = streams
        .iter()
        .filter(|(p, _)| *p != who)
        .all(|(_, s)| !voiced_at(s, t0));
    Turn::from_segments(segments, clear)
}

pub fn group_turns(turns: impl IntoIterator<Item = Turn>) -> TurnStreams {
    let mut out: TurnStreams = BTreeMap::new();
    for t in turns {
        out.entry(t.participant.clone()).or_default().push(t);
    }
    out
}

/// Total length of `stream ∩ window`.
pub fn voiced_in(stream: &[VadSegment], w: Window) -> f64 {
    stream
        .iter()
        .map(|s| (s.t1.min(w.t1) - s.t0.max(w.t0)).max(0.0))
        .sum()
}

/// Length of the intersection of two sorted voiced sets inside `w`.
pub fn cospeech(a: &[VadSegment], b: &[VadSegment], w: Window) -> f64 {
    let (mut i, mut j) = (0, 0);
    let mut total = 0.0;
    while i < a.len() && j < b.len() {
        let lo = a[i].t0.max(b[j].t0).max(w.t0);
        let hi = a[i].t1.min(b[j].t1).min(w.t1);
        if hi > lo {
            total += hi - lo;
        }
        if a[i].t1 < b[j].t1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    total
}

/// Overlap part of the pair features: `cospeech / min(voiced_a, voiced_b)`.
/// Alignment is left at zero.
pub fn pairwise_overlap_stats(a: &[VadSegment], b: &[VadSegment], w: Window) -> PairFeatures {
    let (pa, pb) = pair_ids(a, b);
    let co = cospeech(a, b, w);
    let denom = voiced_in(a, w).min(voiced_in(b, w));
    let frac = if denom > 0.0 { (co / denom).clamp(0.0, 1.0) } else { 0.0 };
    PairFeatures {
        a: pa,
        b: pb,
        window: w,
        overlap_frac: frac,
        alignment: 0.0,
        cospeech_seconds: co,
    }
}

fn pair_ids(a: &[VadSegment], b: &[VadSegment]) -> (ParticipantId, ParticipantId) {
    let unknown = || ParticipantId::new("?").expect("static id");
    (
        a.first().map_or_else(unknown, |s| s.participant.clone()),
        b.first().map_or_else(unknown, |s| s.participant.clone()),
    )
}

/// Share of one side's onsets in `w` that sit within `tol` of the other
/// side's offsets, averaged over the directions that have onsets.
pub fn alignment_score(turns_a: &[Turn], turns_b: &[Turn], w: Window, tol: f64) -> f64 {
    let fa = onset_alignment(turns_a, turns_b, w, tol);
    let fb = onset_alignment(turns_b, turns_a, w, tol);
    match (fa, fb) {
        (Some(x), Some(y)) => (x + y) / 2.0,
        (Some(x), None) | (None, Some(x)) => x,
        (None, None) => 0.0,
    }
}

fn onset_alignment(from: &[Turn], to: &[Turn], w: Window, tol: f64) -> Option<f64> {
    let mut offsets: Vec<f64> = to.iter().map(|t| t.t1).collect();
    offsets.sort_by(f64::total_cmp);
    let mut n = 0usize;
    let mut hits = 0usize;
    for t in from.iter().filter(|t| w.contains(t.t0)) {
        n += 1;
        let idx = offsets.partition_point(|&o| o < t.t0 - tol);
        if idx < offsets.len() && offsets[idx] <= t.t0 + tol {
            hits += 1;
        }
    }
    (n > 0).then(|| hits as f64 / n as f64)
}

/// Pair features for every unordered pair of participants in `segments`,
/// in participant-id order.
pub fn windowed_features(segments: &SegmentStreams, turns: &TurnStreams, w: Window, tol: f64) -> Vec<PairFeatures> {
    let ids: Vec<&ParticipantId> = segments.keys().chain(turns.keys()).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let empty_s: Vec<VadSegment> = Vec::new();
    let empty_t: Vec<Turn> = Vec::new();
    let mut out = Vec::with_capacity(ids.len() * ids.len().saturating_sub(1) / 2);
    for (i, a) in ids.iter().enumerate() {
        for b in &ids[i + 1..] {
            let sa = segments.get(*a).unwrap_or(&empty_s);
            let sb = segments.get(*b).unwrap_or(&empty_s);
            let mut f = pairwise_overlap_stats(sa, sb, w);
            f.a = (*a).clone();
            f.b = (*b).clone();
            f.alignment = alignment_score(
                turns.get(*a).unwrap_or(&empty_t),
                turns.get(*b).unwrap_or(&empty_t),
                w,
                tol,
            );
            out.push(f);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(p: &str, t0: f64, t1: f64) -> VadSegment {
        VadSegment {
            participant: ParticipantId::new(p).unwrap(),
            t0,
            t1,
            e_mean: -20.0,
            e_peak: -18.0,
        }
    }

    #[test]
    fn merges_short_gaps_only() {
        let s = group_segments([seg("a", 0.0, 1.0), seg("a", 1.2, 2.0)]);
        let t = build_turns(&s, 0.5);
        assert_eq!(t.len(), 1);
        assert_eq!((t[0].t0, t[0].t1), (0.0, 2.0));
        let s = group_segments([seg("a", 0.0, 1.0), seg("a", 1.8, 2.0)]);
        assert_eq!(build_turns(&s, 0.5).len(), 2);
    }

    #[test]
    fn onset_in_overlap_detected() {
        let s = group_segments([seg("a", 5.0, 7.0), seg("b", 4.0, 6.0), seg("b", 8.0, 9.0)]);
        let t = build_turns(&s, 0.5);
        let a = t.iter().find(|t| t.participant.as_str() == "a").unwrap();
        assert!(!a.onset_in_clear);
        let b_late = t.iter().find(|t| t.participant.as_str() == "b" && t.t0 == 8.0).unwrap();
        assert!(b_late.onset_in_clear);
    }

    #[test]
    fn overlap_extremes() {
        let a = vec![seg("a", 0.0, 1.0), seg("a", 2.0, 3.0)];
        let b: Vec<_> = a.iter().map(|s| VadSegment { participant: ParticipantId::new("b").unwrap(), ..s.clone() }).collect();
        let w = Window::new(0.0, 4.0);
        assert_eq!(pairwise_overlap_stats(&a, &b, w).overlap_frac, 1.0);
        let c = vec![seg("c", 1.0, 2.0), seg("c", 3.0, 4.0)];
        assert_eq!(pairwise_overlap_stats(&a, &c, w).overlap_frac, 0.0);
        assert_eq!(pairwise_overlap_stats(&a, &[], w).overlap_frac, 0.0);
    }

    #[test]
    fn alignment_extremes() {
        let turns = |p: &str, spans: &[(f64, f64)]| {
            spans.iter().map(|&(a, b)| Turn::from_segments(vec![seg(p, a, b)], true)).collect::<Vec<_>>()
        };
        let w = Window::new(0.0, 20.0);
        let b = turns("b", &[(0.0, 2.0), (6.0, 8.0)]);
        let a = turns("a", &[(2.0, 6.0), (8.0, 10.0)]);
        // a's onsets all follow b; b's first onset follows nobody
        assert_eq!(alignment_score(&a, &b, w, 0.5), 0.75);
        let b = turns("b", &[(2.0, 4.0), (6.0, 8.0)]);
        let a = turns("a", &[(0.0, 2.0), (4.0, 6.0)]);
        let a_tail = turns("a", &[(8.0, 9.0)]);
        let a: Vec<_> = a.into_iter().chain(a_tail).collect();
        // a's first onset has no preceding offset: (2/3 + 1) / 2
        assert!((alignment_score(&a, &b, w, 0.5) - 5.0 / 6.0).abs() < 1e-12);
        let b = turns("b", &[(0.0, 10.0)]);
        let a = turns("a", &[(4.0, 5.0), (6.0, 7.0)]);
        assert_eq!(alignment_score(&a, &b, w, 0.5), 0.0);
        assert_eq!(alignment_score(&[], &[], w, 0.5), 0.0);
    }

    #[test]
    fn pair_counts() {
        for n in [2usize, 10] {
            let s = group_segments((0..n).map(|i| seg(&format!("p{i}"), i as f64, i as f64 + 0.5)));
            let t = group_turns(build_turns(&s, 0.5));
            assert_eq!(windowed_features(&s, &t, Window::new(0.0, 20.0), 0.5).len(), n * (n - 1) / 2);
        }
    }
}
