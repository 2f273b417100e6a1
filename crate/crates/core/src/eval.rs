//! Scoring inferred floors against ground truth, and corpus statistics.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::cues::median;
use crate::engine::EngineEvent;
use crate::error::{Error, Result};
use crate::model::{AffiliationInterval, CueKind, FloorId, ParticipantId, SchismCue};
use crate::sim::{InjectedEvent, TrueKind};

pub const DEFAULT_FRAME: f64 = 0.1;
pub const DEFAULT_MATCH_WINDOW: f64 = 10.0;
/// Largest onset difference for a cue to match an injected event.
pub const CUE_MATCH_TOL: f64 = 1.0;

type Timeline = BTreeMap<ParticipantId, Vec<(f64, f64, FloorId)>>;

fn timeline(labels: &[AffiliationInterval]) -> Timeline {
    let mut out: Timeline = BTreeMap::new();
    for l in labels {
        out.entry(l.participant.clone()).or_default().push((l.t0, l.t1, l.floor));
    }
    for v in out.values_mut() {
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    out
}

/// Sequential floor lookup for increasing query times.
struct Cursor<'a> {
    ivs: &'a [(f64, f64, FloorId)],
    k: usize,
}

impl Cursor<'_> {
    fn at(&mut self, t: f64) -> Option<FloorId> {
        while self.k < self.ivs.len() && self.ivs[self.k].1 <= t {
            self.k += 1;
        }
        self.ivs.get(self.k).filter(|iv| iv.0 <= t).map(|iv| iv.2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Agreement {
    pub value: f64,
    pub scored: usize,
    pub agreed: usize,
}

/// Pairwise co-membership agreement sampled at frame midpoints over the
/// truth span. Only pairs affiliated in truth are scored; a participant
/// unaffiliated in `pred` counts as in a floor of their own.
pub fn frame_pairwise_agreement(truth: &[AffiliationInterval], pred: &[AffiliationInterval], frame: f64) -> Result<Agreement> {
    if !(frame.is_finite() && frame > 0.0) {
        return Err(Error::InvalidParams {
            name: "frame",
            reason: "must be positive".into(),
        });
    }
    let span = truth.iter().map(|l| l.t1).fold(0.0, f64::max);
    let tt = timeline(truth);
    let pt = timeline(pred);
    let ids: Vec<&ParticipantId> = tt.keys().collect();
    let empty = Vec::new();
    let mut tc: Vec<Cursor> = ids.iter().map(|p| Cursor { ivs: &tt[*p], k: 0 }).collect();
    let mut pc: Vec<Cursor> = ids
        .iter()
        .map(|p| Cursor {
            ivs: pt.get(*p).unwrap_or(&empty),
            k: 0,
        })
        .collect();
    let n = (span / frame).ceil() as usize;
    let (mut scored, mut agreed) = (0usize, 0usize);
    let mut tf = vec![None; ids.len()];
    let mut pf = vec![None; ids.len()];
    for k in 0..n {
        let t = (k as f64 + 0.5) * frame;
        for i in 0..ids.len() {
            tf[i] = tc[i].at(t);
            pf[i] = pc[i].at(t);
        }
        for i in 0..ids.len() {
            let Some(ti) = tf[i] else { continue };
            for j in i + 1..ids.len() {
                let Some(tj) = tf[j] else { continue };
                scored += 1;
                let same_truth = ti == tj;
                let same_pred = matches!((pf[i], pf[j]), (Some(a), Some(b)) if a == b);
                if same_truth == same_pred {
                    agreed += 1;
                }
            }
        }
    }
    if scored == 0 {
        return Err(Error::NoScorablePairs);
    }
    Ok(Agreement {
        value: agreed as f64 / scored as f64,
        scored,
        agreed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyMatch {
    /// Index into the schism list passed in.
    pub schism: usize,
    /// Index into the event list passed in, when matched.
    pub event: Option<usize>,
    pub latency: Option<f64>,
}

/// Matches each true schism, in response order, to the earliest unmatched
/// floor start within `[response - 1, response + match_window]` whose
/// members include the initiator or a responder.
pub fn detection_latency(schisms: &[InjectedEvent], events: &[EngineEvent], match_window: f64) -> Vec<LatencyMatch> {
    let mut order: Vec<usize> = (0..schisms.len()).collect();
    let resp = |s: &InjectedEvent| s.t_response.unwrap_or(s.t);
    order.sort_by(|&a, &b| resp(&schisms[a]).total_cmp(&resp(&schisms[b])).then(a.cmp(&b)));
    let mut used = vec![false; events.len()];
    let mut out: Vec<LatencyMatch> = Vec::with_capacity(schisms.len());
    for si in order {
        let s = &schisms[si];
        let r = resp(s);
        let pair: BTreeSet<&ParticipantId> = std::iter::once(&s.initiator).chain(&s.responders).collect();
        let best = events
            .iter()
            .enumerate()
            .filter(|(k, _)| !used[*k])
            .filter_map(|(k, e)| match e {
                EngineEvent::FloorStart { t, members, .. }
                    if *t >= r - 1.0 && *t <= r + match_window && members.iter().any(|m| pair.contains(m)) =>
                {
                    Some((k, *t))
                }
                _ => None,
            })
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        match best {
            Some((k, t)) => {
                used[k] = true;
                out.push(LatencyMatch {
                    schism: si,
                    event: Some(k),
                    latency: Some(t - s.t),
                });
            }
            None => out.push(LatencyMatch {
                schism: si,
                event: None,
                latency: None,
            }),
        }
    }
    out.sort_by_key(|m| m.schism);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub floors_count: usize,
    pub floors_per_hour: f64,
    pub duration_median: f64,
    pub duration_min: f64,
    pub duration_max: f64,
    pub time_weighted_concurrency: f64,
    pub max_concurrency: usize,
}

/// Per-floor first-start/last-end spans.
pub fn floor_spans(labels: &[AffiliationInterval]) -> BTreeMap<FloorId, (f64, f64)> {
    let mut spans: BTreeMap<FloorId, (f64, f64)> = BTreeMap::new();
    for l in labels {
        let e = spans.entry(l.floor).or_insert((l.t0, l.t1));
        e.0 = e.0.min(l.t0);
        e.1 = e.1.max(l.t1);
    }
    spans
}

pub fn corpus_stats(labels: &[AffiliationInterval], span: f64) -> CorpusStats {
    let spans = floor_spans(labels);
    let mut durations: Vec<f64> = spans.values().map(|(a, b)| b - a).collect();
    let duration_min = durations.iter().copied().fold(f64::INFINITY, f64::min);
    let duration_max = durations.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let duration_median = median(&mut durations);

    // union of member intervals per floor, then a sweep over all floors
    let mut per_floor: BTreeMap<FloorId, Vec<(f64, f64)>> = BTreeMap::new();
    for l in labels {
        per_floor.entry(l.floor).or_default().push((l.t0, l.t1));
    }
    let mut edges: Vec<(f64, i32)> = Vec::new();
    for ivs in per_floor.values_mut() {
        ivs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut cur: Option<(f64, f64)> = None;
        for &(a, b) in ivs.iter() {
            match &mut cur {
                Some(c) if a <= c.1 => c.1 = c.1.max(b),
                _ => {
                    if let Some(c) = cur.take() {
                        edges.push((c.0, 1));
                        edges.push((c.1, -1));
                    }
                    cur = Some((a, b));
                }
            }
        }
        if let Some(c) = cur {
            edges.push((c.0, 1));
            edges.push((c.1, -1));
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let (mut area, mut level, mut peak) = (0.0, 0i32, 0i32);
    let mut prev = 0.0;
    for (t, d) in edges {
        area += level as f64 * (t - prev);
        prev = t;
        level += d;
        peak = peak.max(level);
    }
    let hours = span / 3600.0;
    CorpusStats {
        floors_count: spans.len(),
        floors_per_hour: if hours > 0.0 { spans.len() as f64 / hours } else { 0.0 },
        duration_median,
        duration_min,
        duration_max,
        time_weighted_concurrency: if span > 0.0 { area / span } else { 0.0 },
        max_concurrency: peak.max(0) as usize,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prf {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// Emitted cues explained by a schism of another kind, left out of `fp`.
    pub explained: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Nothing was emitted, so precision is reported as 1 by convention.
    pub zero_support: bool,
}

/// The cue kind an injected event should produce and the time to match on.
pub fn expected_cue(ev: &InjectedEvent) -> (CueKind, f64) {
    match ev.kind {
        TrueKind::Sit => (CueKind::Sit, ev.t),
        TrueKind::Aside => (CueKind::Aside, ev.t),
        TrueKind::Coord => (CueKind::Coord, ev.t),
        TrueKind::TossOut | TrueKind::Retro => (CueKind::Confirm, ev.t_response.unwrap_or(ev.t)),
    }
}

/// One-to-one greedy matching by |dt| between injected events and emitted
/// cues of the same kind and initiator. TOSS_OUT and RETRO match CONFIRM on
/// their response onset. A CONFIRM that matches the response of a SIT or
/// ASIDE schism is counted as explained rather than false.
pub fn cue_prf(truth: &[InjectedEvent], emitted: &[SchismCue]) -> BTreeMap<CueKind, Prf> {
    let mut out = BTreeMap::new();
    for kind in CueKind::ALL {
        let ts: Vec<(f64, &ParticipantId)> = truth
            .iter()
            .filter_map(|ev| {
                let (k, t) = expected_cue(ev);
                (k == kind).then_some((t, &ev.initiator))
            })
            .collect();
        let es: Vec<&SchismCue> = emitted.iter().filter(|c| c.kind == kind).collect();
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for (i, (t, who)) in ts.iter().enumerate() {
            for (j, c) in es.iter().enumerate() {
                let dt = (c.t - t).abs();
                if dt <= CUE_MATCH_TOL && c.initiator == **who {
                    cands.push((dt, i, j));
                }
            }
        }
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut tu = vec![false; ts.len()];
        let mut eu = vec![false; es.len()];
        let mut tp = 0;
        for (_, i, j) in cands {
            if !tu[i] && !eu[j] {
                tu[i] = true;
                eu[j] = true;
                tp += 1;
            }
        }
        let mut explained = 0;
        let mut fp = 0;
        for (j, c) in es.iter().enumerate() {
            if eu[j] {
                continue;
            }
            let covered = kind == CueKind::Confirm
                && truth.iter().any(|ev| {
                    ev.schism
                        && matches!(ev.kind, TrueKind::Sit | TrueKind::Aside)
                        && ev.initiator == c.initiator
                        && ev.t_response.is_some_and(|r| (r - c.t).abs() <= CUE_MATCH_TOL)
                });
            if covered {
                explained += 1;
            } else {
                fp += 1;
            }
        }
        let fn_ = ts.len() - tp;
        let zero_support = tp + fp == 0;
        let precision = if zero_support { 1.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if ts.is_empty() { 1.0 } else { tp as f64 / ts.len() as f64 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        out.insert(
            kind,
            Prf {
                tp,
                fp,
                fn_,
                explained,
                precision,
                recall,
                f1,
                zero_support,
            },
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencySummary {
    pub schisms: usize,
    pub matched: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
}

pub fn summarize_latency(matches: &[LatencyMatch]) -> LatencySummary {
    let mut lat: Vec<f64> = matches.iter().filter_map(|m| m.latency).collect();
    let matched = lat.len();
    let mean = (matched > 0).then(|| lat.iter().sum::<f64>() / matched as f64);
    let med = (matched > 0).then(|| median(&mut lat));
    LatencySummary {
        schisms: matches.len(),
        matched,
        mean,
        median: med,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub pairwise_agreement: f64,
    pub scored_pairs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detection_latency: Option<LatencySummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cues: Option<BTreeMap<CueKind, Prf>>,
    pub truth_stats: CorpusStats,
    pub pred_stats: CorpusStats,
}

/// Optional inputs to [`evaluate`].
#[derive(Debug, Clone, Copy, Default)]
pub struct EvalExtras<'a> {
    pub events: Option<&'a [EngineEvent]>,
    pub cues: Option<&'a [SchismCue]>,
    pub injected: Option<&'a [InjectedEvent]>,
}

/// Agreement and corpus statistics, plus detection latency when events and
/// injected truth are given and cue scores when cues and injected truth are.
pub fn evaluate(
    truth: &[AffiliationInterval],
    pred: &[AffiliationInterval],
    span: f64,
    frame: f64,
    match_window: f64,
    extras: EvalExtras<'_>,
) -> Result<EvalReport> {
    let agreement = frame_pairwise_agreement(truth, pred, frame)?;
    let detection_latency = match (extras.events, extras.injected) {
        (Some(ev), Some(inj)) => {
            let schisms: Vec<InjectedEvent> = inj.iter().filter(|e| e.schism).cloned().collect();
            Some(summarize_latency(&detection_latency(&schisms, ev, match_window)))
        }
        _ => None,
    };
    let cues = match (extras.cues, extras.injected) {
        (Some(c), Some(inj)) => Some(cue_prf(inj, c)),
        _ => None,
    };
    Ok(EvalReport {
        pairwise_agreement: agreement.value,
        scored_pairs: agreement.scored,
        detection_latency,
        cues,
        truth_stats: corpus_stats(truth, span),
        pred_stats: corpus_stats(pred, span),
    })
}

impl EvalReport {
    /// Plain-text summary table.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("pairwise_agreement  {:.4}  ({} pair-frames)\n", self.pairwise_agreement, self.scored_pairs));
        if let Some(l) = &self.detection_latency {
            let f = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.2}"));
            s.push_str(&format!(
                "detection           {}/{} matched, latency mean {} median {}\n",
                l.matched,
                l.schisms,
                f(l.mean),
                f(l.median)
            ));
        }
        if let Some(c) = &self.cues {
            s.push_str("cue        P      R      F1     tp  fp  fn\n");
            for (k, p) in c {
                s.push_str(&format!(
                    "{:<8} {:.3}  {:.3}  {:.3}  {:>3} {:>3} {:>3}\n",
                    k.as_str(),
                    p.precision,
                    p.recall,
                    p.f1,
                    p.tp,
                    p.fp,
                    p.fn_
                ));
            }
        }
        for (name, st) in [("truth", &self.truth_stats), ("pred", &self.pred_stats)] {
            s.push_str(&format!(
                "{name:<6} floors {} ({:.1}/h), median {:.1} s, concurrency {:.3}, max {}\n",
                st.floors_count, st.floors_per_hour, st.duration_median, st.time_weighted_concurrency, st.max_concurrency
            ));
        }
        s
    }
}
