//! Detectors for the structurally visible schisming and affiliation cues.
//!
//! None of these decide anything about floors on their own; the floor engine
//! weighs the cues they emit.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::error::{Error, Result};
use crate::model::{CueKind, ParticipantId, SchismCue, TokenAnnotation, Turn, VadSegment};
use crate::turns::{voiced_at, SegmentStreams, Window};
use crate::vad::{EnergyFrame, SILENCE_DBFS};

/// Minimum prior speech before a speaker baseline is trusted, seconds.
pub const MIN_BASELINE_SPEECH: f64 = 5.0;
/// Cospeech with the ongoing floor needed to confirm a schism, seconds.
pub const CONFIRM_MIN_COSPEECH: f64 = 2.0;
/// How far past the response onset confirmation evidence is gathered, seconds.
pub const CONFIRM_HORIZON: f64 = 10.0;

const SIT_BASE: f64 = 0.6;
const SIT_REPEAT_BONUS: f64 = 0.2;
const SIT_CLEAR_BONUS: f64 = 0.2;
const CONFIRM_STRENGTH: f64 = 0.8;
/// Share of the required cospeech the pair itself may overlap.
pub const CONFIRM_MAX_PAIR_OVERLAP: f64 = 0.5;
/// Share of an initiating turn that may overlap the rest of its floor,
/// unless the turn itself raised an addressing or aside cue.
pub const CONFIRM_MAX_INITIATOR_OVERLAP: f64 = 0.5;
const ENVELOPE_HOP: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorParams {
    pub sit_initial_window: f64,
    pub aside_delta: f64,
    pub baseline_horizon: f64,
    pub coord_onset_tau: f64,
    pub coord_min_participants: usize,
    pub coord_max_burst: f64,
    pub coord_corr_min: f64,
    /// Silence a burst needs on both sides within its speaker's stream.
    pub coord_isolation: f64,
    pub confirm_max_gap: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            sit_initial_window: 2.0,
            aside_delta: 8.0,
            baseline_horizon: 120.0,
            coord_onset_tau: 0.3,
            coord_min_participants: 3,
            coord_max_burst: 3.0,
            coord_corr_min: 0.3,
            coord_isolation: 0.5,
            confirm_max_gap: 2.0,
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sit_initial_window", self.sit_initial_window),
            ("baseline_horizon", self.baseline_horizon),
            ("coord_onset_tau", self.coord_onset_tau),
            ("coord_max_burst", self.coord_max_burst),
            ("confirm_max_gap", self.confirm_max_gap),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParams {
                    name,
                    reason: format!("must be positive, got {v}"),
                });
            }
        }
        if !(self.coord_isolation.is_finite() && self.coord_isolation >= 0.0) {
            return Err(Error::InvalidParams {
                name: "coord_isolation",
                reason: format!("must be non-negative, got {}", self.coord_isolation),
            });
        }
        if self.coord_min_participants < 2 {
            return Err(Error::InvalidParams {
                name: "coord_min_participants",
                reason: "must be at least 2".into(),
            });
        }
        if !(-1.0..=1.0).contains(&self.coord_corr_min) {
            return Err(Error::InvalidParams {
                name: "coord_corr_min",
                reason: "must lie in [-1, 1]".into(),
            });
        }
        Ok(())
    }
}

/// Addressing cue: an address term near the start of a turn.
pub fn detect_sit_cue(turn: &Turn, tokens: &[TokenAnnotation], params: &DetectorParams) -> Option<SchismCue> {
    let window_end = turn.t0 + params.sit_initial_window;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for tok in tokens {
        if tok.participant != turn.participant || !tok.is_address {
            continue;
        }
        if tok.t0 >= turn.t0 - 1e-3 && tok.t0 <= window_end {
            *counts.entry(tok.text.to_lowercase()).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return None;
    }
    let repeated = counts.values().any(|&n| n >= 2);
    let mut strength = SIT_BASE;
    if repeated {
        strength += SIT_REPEAT_BONUS;
    }
    if turn.onset_in_clear {
        strength += SIT_CLEAR_BONUS;
    }
    Some(SchismCue::new(
        CueKind::Sit,
        turn.t0,
        turn.participant.clone(),
        BTreeSet::new(),
        strength,
    ))
}

/// Aside cue: a turn started in overlap and delivered well below the
/// speaker's usual level.
pub fn detect_aside_cue(turn: &Turn, speaker_baseline: f64, params: &DetectorParams) -> Option<SchismCue> {
    if turn.onset_in_clear || turn.e_mean > speaker_baseline - params.aside_delta {
        return None;
    }
    let strength = ((speaker_baseline - turn.e_mean - params.aside_delta) / 6.0 + 0.5).min(1.0);
    Some(SchismCue::new(
        CueKind::Aside,
        turn.t0,
        turn.participant.clone(),
        BTreeSet::new(),
        strength,
    ))
}

/// Running median of a speaker's recent turn energies.
#[derive(Debug, Clone, Default)]
pub struct SpeakerBaseline {
    history: VecDeque<(f64, f64, f64)>,
}

impl SpeakerBaseline {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a completed turn (its onset, voiced seconds and energy).
    pub fn record(&mut self, turn: &Turn) {
        self.history.push_back((turn.t0, turn.voiced(), turn.e_mean));
    }

    /// Baseline for a turn starting at `t`, using turns that began within
    /// `horizon` seconds before it.
    pub fn baseline(&mut self, who: &ParticipantId, t: f64, horizon: f64) -> Result<f64> {
        while self.history.front().is_some_and(|h| h.0 < t - horizon) {
            self.history.pop_front();
        }
        let prior: Vec<(f64, f64)> = self
            .history
            .iter()
            .filter(|h| h.0 < t)
            .map(|h| (h.1, h.2))
            .collect();
        let speech: f64 = prior.iter().map(|p| p.0).sum();
        if speech < MIN_BASELINE_SPEECH {
            return Err(Error::NoBaseline(who.to_string()));
        }
        let mut e: Vec<f64> = prior.iter().map(|p| p.1).collect();
        Ok(median(&mut e))
    }
}

pub(crate) fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Source of per-participant energy envelopes for burst correlation.
pub trait Envelope {
    fn energy(&self, who: &ParticipantId, t: f64) -> f64;
}

/// Rectangular envelope: segment `e_mean` while voiced, silence otherwise.
pub struct SegmentEnvelope<'a>(pub &'a SegmentStreams);

impl Envelope for SegmentEnvelope<'_> {
    fn energy(&self, who: &ParticipantId, t: f64) -> f64 {
        let Some(stream) = self.0.get(who) else {
            return SILENCE_DBFS;
        };
        let idx = stream.partition_point(|s| s.t0 <= t);
        if idx > 0 && stream[idx - 1].t1 > t {
            stream[idx - 1].e_mean
        } else {
            SILENCE_DBFS
        }
    }
}

/// Envelope backed by measured energy frames on a uniform hop.
pub struct FrameEnvelope<'a> {
    pub frames: &'a BTreeMap<ParticipantId, Vec<EnergyFrame>>,
    pub hop: f64,
}

impl Envelope for FrameEnvelope<'_> {
    fn energy(&self, who: &ParticipantId, t: f64) -> f64 {
        let Some(f) = self.frames.get(who) else {
            return SILENCE_DBFS;
        };
        let idx = f.partition_point(|fr| fr.t <= t);
        if idx > 0 && t - f[idx - 1].t < self.hop + 1e-9 {
            f[idx - 1].e
        } else {
            SILENCE_DBFS
        }
    }
}

/// Pearson correlation; zero when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n < 2 {
        return 0.0;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// A short voiced burst considered for coordinated action.
#[derive(Debug, Clone)]
struct Burst<'a> {
    seg: &'a VadSegment,
}

/// Coordinated-action cue: several participants start short bursts nearly
/// together with correlated energy. A burst is a segment no longer than
/// `coord_max_burst` with at least `coord_isolation` of silence on both
/// sides in its speaker's stream. Groups start at a burst whose onset lies
/// in `window` (later members may follow up to `coord_onset_tau` past its
/// end); the largest group, earliest on ties, is tested.
pub fn detect_coordinated_action(
    segments: &SegmentStreams,
    window: Window,
    envelope: &dyn Envelope,
    params: &DetectorParams,
) -> Option<SchismCue> {
    let mut bursts: Vec<Burst> = segments
        .values()
        .flatten()
        .filter(|s| {
            s.t0 >= window.t0
                && s.t0 < window.t1 + params.coord_onset_tau + 1e-9
                && s.duration() <= params.coord_max_burst + 1e-9
                && isolated(s, &segments[&s.participant], params.coord_isolation)
        })
        .map(|seg| Burst { seg })
        .collect();
    bursts.sort_by(|a, b| {
        a.seg
            .t0
            .total_cmp(&b.seg.t0)
            .then_with(|| a.seg.participant.cmp(&b.seg.participant))
    });

    let mut best: Option<Vec<&VadSegment>> = None;
    for i in 0..bursts.len() {
        let start = bursts[i].seg.t0;
        if !window.contains(start) {
            break;
        }
        let mut seen = BTreeSet::new();
        let mut group = Vec::new();
        for b in &bursts[i..] {
            if b.seg.t0 - start > params.coord_onset_tau + 1e-9 {
                break;
            }
            if seen.insert(&b.seg.participant) {
                group.push(b.seg);
            }
        }
        if best.as_ref().is_none_or(|g| group.len() > g.len()) {
            best = Some(group);
        }
    }
    let group = best?;
    if group.len() < params.coord_min_participants {
        return None;
    }
    let corr = group_correlation(&group, envelope, params.coord_onset_tau);
    if corr < params.coord_corr_min {
        return None;
    }
    let initiator = group[0].participant.clone();
    let responders = group[1..].iter().map(|s| s.participant.clone()).collect();
    Some(SchismCue::new(CueKind::Coord, group[0].t0, initiator, responders, corr.clamp(0.0, 1.0)))
}

fn isolated(seg: &VadSegment, stream: &[VadSegment], gap: f64) -> bool {
    stream.iter().all(|o| {
        std::ptr::eq(o, seg) || o.t1 <= seg.t0 - gap + 1e-9 || o.t0 >= seg.t1 + gap - 1e-9
    })
}

/// Mean pairwise envelope correlation over the group's common span, padded
/// on both sides so full-span bursts still vary.
pub(crate) fn group_correlation(group: &[&VadSegment], envelope: &dyn Envelope, pad: f64) -> f64 {
    let lo = group.iter().map(|s| s.t0).fold(f64::INFINITY, f64::min) - pad;
    let hi = group.iter().map(|s| s.t1).fold(f64::NEG_INFINITY, f64::max) + pad;
    let n = ((hi - lo) / ENVELOPE_HOP).ceil().max(2.0) as usize;
    let traces: Vec<Vec<f64>> = group
        .iter()
        .map(|s| {
            (0..n)
                .map(|k| envelope.energy(&s.participant, lo + (k as f64 + 0.5) * ENVELOPE_HOP))
                .collect()
        })
        .collect();
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..traces.len() {
        for j in i + 1..traces.len() {
            sum += pearson(&traces[i], &traces[j]);
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        sum / pairs as f64
    }
}

/// What the confirmation check knows about the floor the initiator was in.
pub struct OngoingFloor<'a> {
    /// Members of the initiator's floor other than the initiator.
    pub members: &'a BTreeSet<ParticipantId>,
    pub segments: &'a SegmentStreams,
}

/// Outcome of checking a candidate response.
#[derive(Debug, Clone, PartialEq)]
pub enum Confirmation {
    Confirmed { cue: SchismCue, at: f64 },
    /// Not enough evidence yet; more data could still confirm.
    Pending,
    Rejected,
}

/// Finds the turn by another floor member that starts closest to the end of
/// `initiating`, within `confirm_max_gap` of it.
pub fn find_response<'a>(
    initiating: &Turn,
    subsequent: &'a [Turn],
    members: &BTreeSet<ParticipantId>,
    params: &DetectorParams,
) -> Option<&'a Turn> {
    subsequent
        .iter()
        .filter(|t| {
            t.participant != initiating.participant
                && members.contains(&t.participant)
                && t.t0 > initiating.t0
                && (t.t0 - initiating.t1).abs() <= params.confirm_max_gap
        })
        .min_by(|a, b| {
            let da = (a.t0 - initiating.t1).abs();
            let db = (b.t0 - initiating.t1).abs();
            da.total_cmp(&db).then(a.t0.total_cmp(&b.t0))
        })
}

/// Confirms a schism when the initiator/responder pair talks over the rest
/// of their floor for [`CONFIRM_MIN_COSPEECH`] seconds within
/// [`CONFIRM_HORIZON`] of the response. Only spans where exactly one of the
/// pair and exactly one ongoing member are voiced count, so choral bursts do
/// not read as two parallel conversations. A pair that talks over each other
/// for more than [`CONFIRM_MAX_PAIR_OVERLAP`] of that time is rejected.
/// A pair whose cospeech has not begun within `max_gap` of the response
/// onset, or begins with the initiator rather than the responder, is
/// rejected as well.
/// `known_until` bounds the data seen so far; the confirmation time is when
/// the threshold was crossed.
pub fn check_confirmation(
    initiator: &ParticipantId,
    responder: &ParticipantId,
    response_t0: f64,
    ongoing: &OngoingFloor<'_>,
    max_gap: f64,
    known_until: f64,
) -> Confirmation {
    let pair = [initiator, responder];
    let horizon_end = response_t0 + CONFIRM_HORIZON;
    let end = horizon_end.min(known_until);
    if end <= response_t0 {
        return Confirmation::Pending;
    }

    // boundaries of every relevant segment inside [response_t0, end]
    let relevant: Vec<&VadSegment> = pair
        .iter()
        .copied()
        .chain(ongoing.members.iter().filter(|m| !pair.contains(m)))
        .filter_map(|p| ongoing.segments.get(p))
        .flatten()
        .filter(|s| s.t1 > response_t0 && s.t0 < end)
        .collect();
    let mut cuts: Vec<f64> = relevant
        .iter()
        .flat_map(|s| [s.t0.max(response_t0), s.t1.min(end)])
        .chain([response_t0, end])
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let count_voiced = |who: &mut dyn Iterator<Item = &ParticipantId>, t: f64| {
        who.filter(|p| ongoing.segments.get(*p).is_some_and(|s| voiced_at(s, t)))
            .count()
    };
    let mut acc = 0.0;
    let mut together = 0.0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let mid = (a + b) / 2.0;
        let pair_on = count_voiced(&mut pair.iter().copied(), mid);
        if pair_on == 2 {
            together += b - a;
            if together > CONFIRM_MAX_PAIR_OVERLAP * CONFIRM_MIN_COSPEECH {
                return Confirmation::Rejected;
            }
            continue;
        }
        let others_on = count_voiced(&mut ongoing.members.iter().filter(|m| !pair.contains(m)), mid);
        if acc == 0.0 && a >= response_t0 + max_gap {
            return Confirmation::Rejected;
        }
        if pair_on == 1 && others_on == 1 {
            // the response itself has to be what runs over the other floor
            if acc == 0.0 && !ongoing.segments.get(responder).is_some_and(|s| voiced_at(s, mid)) {
                return Confirmation::Rejected;
            }
            if acc + (b - a) >= CONFIRM_MIN_COSPEECH {
                let at = a + (CONFIRM_MIN_COSPEECH - acc);
                let cue = SchismCue::new(
                    CueKind::Confirm,
                    response_t0,
                    initiator.clone(),
                    BTreeSet::from([responder.clone()]),
                    CONFIRM_STRENGTH,
                );
                return Confirmation::Confirmed { cue, at };
            }
            acc += b - a;
        }
    }
    if known_until >= horizon_end || (acc == 0.0 && known_until >= response_t0 + max_gap) {
        Confirmation::Rejected
    } else {
        Confirmation::Pending
    }
}

/// Time in [t0, t1] during which someone in `a` and someone in `b` are
/// both voiced.
pub(crate) fn cospeech(a: &[&ParticipantId], b: &[&ParticipantId], segments: &SegmentStreams, t0: f64, t1: f64) -> f64 {
    let union = |who: &[&ParticipantId]| {
        let mut spans: Vec<(f64, f64)> = who
            .iter()
            .filter_map(|p| segments.get(*p))
            .flatten()
            .filter(|s| s.t1 > t0 && s.t0 < t1)
            .map(|s| (s.t0.max(t0), s.t1.min(t1)))
            .collect();
        spans.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for (s0, s1) in spans {
            match merged.last_mut() {
                Some(last) if s0 <= last.1 => last.1 = last.1.max(s1),
                _ => merged.push((s0, s1)),
            }
        }
        merged
    };
    let (ua, ub) = (union(a), union(b));
    let (mut i, mut j, mut total) = (0, 0, 0.0);
    while i < ua.len() && j < ub.len() {
        let lo = ua[i].0.max(ub[j].0);
        let hi = ua[i].1.min(ub[j].1);
        if hi > lo {
            total += hi - lo;
        }
        if ua[i].1 < ub[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    total
}

/// Offline convenience: confirmation check with all data known.
pub fn detect_schism_confirmation(
    initiating: &Turn,
    subsequent: &[Turn],
    ongoing: &OngoingFloor<'_>,
    params: &DetectorParams,
) -> Option<SchismCue> {
    let response = find_response(initiating, subsequent, ongoing.members, params)?;
    match check_confirmation(
        &initiating.participant,
        &response.participant,
        response.t0,
        ongoing,
        params.confirm_max_gap,
        f64::INFINITY,
    ) {
        Confirmation::Confirmed { cue, .. } => Some(cue),
        _ => None,
    }
}
