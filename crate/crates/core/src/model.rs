//! Domain types shared by every stage of the pipeline.
//!
//! Times are seconds as `f64`; energies are dBFS. Everything here is a plain
//! value type.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rounds a time to whole milliseconds, the resolution of every serialized time.
pub fn round_ms(t: f64) -> f64 {
    let r = (t * 1000.0).round() / 1000.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ParticipantId(String);

impl ParticipantId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        let ok = !id.is_empty()
            && id
                .chars()
                .all(|c| !c.is_whitespace() && !c.is_control() && c != ',' && c != '"');
        if ok {
            Ok(Self(id))
        } else {
            Err(Error::InvalidParticipant(id))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ParticipantId {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        Self::new(value)
    }
}

impl From<ParticipantId> for String {
    fn from(p: ParticipantId) -> Self {
        p.0
    }
}

impl fmt::Display for ParticipantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A contiguous voiced interval on one participant's channel.
#[derive(Debug, Clone, PartialEq)]
pub struct VadSegment {
    pub participant: ParticipantId,
    pub t0: f64,
    pub t1: f64,
    pub e_mean: f64,
    pub e_peak: f64,
}

impl VadSegment {
    pub fn duration(&self) -> f64 {
        self.t1 - self.t0
    }
}

/// Checks that a single participant's segments are well formed, sorted and disjoint.
pub fn check_stream(segments: &[VadSegment]) -> Result<()> {
    let mut prev: Option<&VadSegment> = None;
    for s in segments {
        if !(s.t0.is_finite() && s.t1.is_finite() && s.t1 > s.t0) {
            return Err(Error::InvalidSegments(format!(
                "{}: segment [{}, {}] is empty or non-finite",
                s.participant, s.t0, s.t1
            )));
        }
        if !(s.e_mean.is_finite() && s.e_peak.is_finite()) || s.e_peak < s.e_mean {
            return Err(Error::InvalidSegments(format!(
                "{}: segment at {} has e_peak {} < e_mean {}",
                s.participant, s.t0, s.e_peak, s.e_mean
            )));
        }
        if let Some(p) = prev {
            if p.participant != s.participant {
                return Err(Error::InvalidSegments(format!(
                    "mixed participants {} and {} in one stream",
                    p.participant, s.participant
                )));
            }
            if s.t0 < p.t1 {
                return Err(Error::InvalidSegments(format!(
                    "{}: segment at {} overlaps or precedes previous segment ending {}",
                    s.participant, s.t0, p.t1
                )));
            }
        }
        prev = Some(s);
    }
    Ok(())
}

/// A turn at talk: one participant's segments merged across short pauses.
#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    pub participant: ParticipantId,
    pub t0: f64,
    pub t1: f64,
    pub segments: Vec<VadSegment>,
    /// No other participant was voiced at `t0`.
    pub onset_in_clear: bool,
    /// Duration-weighted mean of the segment energies.
    pub e_mean: f64,
}

impl Turn {
    pub fn from_segments(segments: Vec<VadSegment>, onset_in_clear: bool) -> Self {
        assert!(!segments.is_empty(), "a turn needs at least one segment");
        let participant = segments[0].participant.clone();
        let t0 = segments[0].t0;
        let t1 = segments[segments.len() - 1].t1;
        let e_mean = weighted_energy(&segments);
        Self {
            participant,
            t0,
            t1,
            segments,
            onset_in_clear,
            e_mean,
        }
    }

    pub fn voiced(&self) -> f64 {
        self.segments.iter().map(VadSegment::duration).sum()
    }
}

pub(crate) fn weighted_energy(segments: &[VadSegment]) -> f64 {
    let total: f64 = segments.iter().map(VadSegment::duration).sum();
    if total <= 0.0 {
        return segments.first().map_or(f64::NEG_INFINITY, |s| s.e_mean);
    }
    segments.iter().map(|s| s.e_mean * s.duration()).sum::<f64>() / total
}

/// Floor ordinal, assigned in order of emergence starting at 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FloorId(pub u32);

impl fmt::Display for FloorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffiliationInterval {
    pub participant: ParticipantId,
    pub floor: FloorId,
    pub t0: f64,
    pub t1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CueKind {
    Sit,
    Aside,
    Coord,
    Confirm,
}

impl CueKind {
    pub const ALL: [CueKind; 4] = [CueKind::Sit, CueKind::Aside, CueKind::Coord, CueKind::Confirm];

    pub fn as_str(self) -> &'static str {
        match self {
            CueKind::Sit => "SIT",
            CueKind::Aside => "ASIDE",
            CueKind::Coord => "COORD",
            CueKind::Confirm => "CONFIRM",
        }
    }
}

impl fmt::Display for CueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchismCue {
    pub kind: CueKind,
    pub t: f64,
    pub initiator: ParticipantId,
    #[serde(default)]
    pub responders: BTreeSet<ParticipantId>,
    pub strength: f64,
}

impl SchismCue {
    pub fn new(
        kind: CueKind,
        t: f64,
        initiator: ParticipantId,
        responders: BTreeSet<ParticipantId>,
        strength: f64,
    ) -> Self {
        let mut responders = responders;
        responders.remove(&initiator);
        Self {
            kind,
            t,
            initiator,
            responders,
            strength: strength.clamp(0.0, 1.0),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.t.is_finite()
            && (0.0..=1.0).contains(&self.strength)
            && !self.responders.contains(&self.initiator)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenAnnotation {
    #[serde(rename = "p")]
    pub participant: ParticipantId,
    pub t0: f64,
    pub t1: f64,
    pub text: String,
    #[serde(default)]
    pub is_address: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ViolationReason {
    Overlap,
    OutOfSpan,
    Empty,
    BadOrder,
}

impl ViolationReason {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationReason::Overlap => "OVERLAP",
            ViolationReason::OutOfSpan => "OUT_OF_SPAN",
            ViolationReason::Empty => "EMPTY",
            ViolationReason::BadOrder => "BAD_ORDER",
        }
    }
}

/// One problem found by [`validate_label_set`]. `index` refers to the input
/// slice; overlaps also name the second interval and the shared span.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub reason: ViolationReason,
    pub participant: ParticipantId,
    pub index: usize,
    pub other: Option<usize>,
    pub span: (f64, f64),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} [{:.3}, {:.3}] (row {})",
            self.reason.as_str(),
            self.participant,
            self.span.0,
            self.span.1,
            self.index
        )
    }
}

/// Lists every label that breaks the affiliation-interval invariants within
/// `[0, span_end]`. An empty report means the set is valid. Each overlapping
/// pair of intervals for one participant is reported once.
pub fn validate_label_set(labels: &[AffiliationInterval], span_end: f64) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut usable: Vec<usize> = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        let reason = if !(l.t0.is_finite() && l.t1.is_finite()) || l.t1 < l.t0 {
            Some(ViolationReason::BadOrder)
        } else if l.t1 == l.t0 {
            Some(ViolationReason::Empty)
        } else {
            None
        };
        if let Some(reason) = reason {
            out.push(Violation {
                reason,
                participant: l.participant.clone(),
                index: i,
                other: None,
                span: (l.t0, l.t1),
            });
            continue;
        }
        if l.t0 < 0.0 || l.t1 > span_end {
            out.push(Violation {
                reason: ViolationReason::OutOfSpan,
                participant: l.participant.clone(),
                index: i,
                other: None,
                span: (l.t0, l.t1),
            });
        }
        usable.push(i);
    }

    // Sweep per participant in onset order; `active` holds intervals that
    // may still intersect later ones.
    usable.sort_by(|&a, &b| {
        let (la, lb) = (&labels[a], &labels[b]);
        la.participant
            .cmp(&lb.participant)
            .then(la.t0.total_cmp(&lb.t0))
            .then(a.cmp(&b))
    });
    let mut active: Vec<usize> = Vec::new();
    let mut current: Option<&ParticipantId> = None;
    for &i in &usable {
        let l = &labels[i];
        if current != Some(&l.participant) {
            active.clear();
            current = Some(&l.participant);
        }
        active.retain(|&j| labels[j].t1 > l.t0);
        for &j in &active {
            let (a, b) = (j.min(i), j.max(i));
            out.push(Violation {
                reason: ViolationReason::Overlap,
                participant: l.participant.clone(),
                index: a,
                other: Some(b),
                span: (l.t0.max(labels[j].t0), l.t1.min(labels[j].t1)),
            });
        }
        active.push(i);
    }
    out.sort_by(|a, b| {
        a.index
            .cmp(&b.index)
            .then(a.reason.cmp(&b.reason))
            .then(a.other.cmp(&b.other))
    });
    out
}
