//! Online floor inference.
//!
//! The engine consumes speech onsets, completed VAD segments and cues in
//! time order. Analysis segments close at every turn completion, or after
//! `window` seconds without one. Each close updates the pairwise affinity
//! from turn-taking features, re-clusters recently active participants and
//! commits partition changes that survive the hysteresis period. Turns stay
//! relabelable for `retro_horizon` seconds, after which their labels are
//! final.

pub mod affinity;
pub mod cluster;
pub(crate) mod labels;
pub mod pipeline;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{AffiliationInterval, CueKind, FloorId, ParticipantId, SchismCue, Turn, VadSegment};
use crate::turns::Window;
use affinity::decay_factor;

pub use affinity::{AffinityMatrix, PairScore, Weights};
use labels::LabelBuilder;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineParams {
    pub window: f64,
    pub decay_half_life: f64,
    pub w_align: f64,
    pub w_overlap: f64,
    pub w_coord: f64,
    pub split_threshold: f64,
    pub merge_threshold: f64,
    pub hysteresis: f64,
    pub retro_horizon: f64,
    pub stability_drop: f64,
    pub stability_window: f64,
    /// Silence that ends a turn.
    pub turn_gap: f64,
    /// Onset/offset tolerance for alignment.
    pub align_tol: f64,
    pub reorder_tolerance: f64,
}

impl Default for EngineParams {
    fn default() -> Self {
        Self {
            window: 5.0,
            decay_half_life: 8.0,
            w_align: 2.0,
            w_overlap: 1.0,
            w_coord: 1.5,
            split_threshold: 0.0,
            merge_threshold: 0.5,
            hysteresis: 3.0,
            retro_horizon: 30.0,
            stability_drop: 0.5,
            stability_window: 10.0,
            turn_gap: 0.5,
            align_tol: 0.5,
            reorder_tolerance: 0.5,
        }
    }
}

impl EngineParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, reason: &str| Error::InvalidParams {
            name,
            reason: reason.to_string(),
        };
        for (name, v) in [
            ("window", self.window),
            ("decay_half_life", self.decay_half_life),
            ("hysteresis", self.hysteresis),
            ("retro_horizon", self.retro_horizon),
            ("stability_window", self.stability_window),
            ("turn_gap", self.turn_gap),
            ("align_tol", self.align_tol),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(bad(name, "must be positive"));
            }
        }
        for (name, v) in [("w_align", self.w_align), ("w_overlap", self.w_overlap), ("w_coord", self.w_coord)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(bad(name, "must be non-negative"));
            }
        }
        if !(self.merge_threshold > self.split_threshold) {
            return Err(bad("merge_threshold", "must exceed split_threshold"));
        }
        if self.retro_horizon < self.window {
            return Err(bad("retro_horizon", "must be at least the window"));
        }
        if !(0.0..=1.0).contains(&self.stability_drop) {
            return Err(bad("stability_drop", "must lie in [0, 1]"));
        }
        if !(self.reorder_tolerance >= 0.0) {
            return Err(bad("reorder_tolerance", "must be non-negative"));
        }
        Ok(())
    }

    fn weights(&self) -> Weights {
        Weights {
            align: self.w_align,
            overlap: self.w_overlap,
            coord: self.w_coord,
        }
    }
}

/// Input accepted by [`FloorEngine::ingest`].
#[derive(Debug, Clone, PartialEq)]
pub enum Item {
    /// A participant became voiced at `t`; the matching segment follows.
    SpeechStart { participant: ParticipantId, t: f64 },
    Segment(VadSegment),
    Cue(SchismCue),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EngineEvent {
    FloorStart {
        t: f64,
        floor: FloorId,
        members: Vec<ParticipantId>,
        /// Back-dated start used for labels.
        label_start: f64,
    },
    FloorEnd {
        t: f64,
        floor: FloorId,
        merged_into: Option<FloorId>,
    },
    Affiliation {
        t: f64,
        participant: ParticipantId,
        from: Option<FloorId>,
        to: FloorId,
    },
}

impl EngineEvent {
    pub fn time(&self) -> f64 {
        match self {
            EngineEvent::FloorStart { t, .. }
            | EngineEvent::FloorEnd { t, .. }
            | EngineEvent::Affiliation { t, .. } => *t,
        }
    }
}

/// What one ingestion step produced.
#[derive(Debug, Default, Clone)]
pub struct Step {
    pub events: Vec<EngineEvent>,
    pub completed_turns: Vec<Turn>,
}

impl Step {
    fn extend(&mut self, other: Step) {
        self.events.extend(other.events);
        self.completed_turns.extend(other.completed_turns);
    }
}

#[derive(Debug, Clone)]
struct TurnRec {
    turn: Turn,
    floor: FloorId,
}

#[derive(Debug, Clone)]
struct Speaker {
    id: ParticipantId,
    /// Completed segments within the buffer horizon.
    segments: VecDeque<VadSegment>,
    /// Onset of the segment in progress.
    open_since: Option<f64>,
    /// Segments of the turn that has not completed yet.
    open_turn: Vec<VadSegment>,
    open_turn_start: Option<f64>,
    open_turn_clear: bool,
    /// Completed turns not yet finalized into labels.
    turns: VecDeque<TurnRec>,
    labels: LabelBuilder,
    /// Back-dated reassignment times, oldest first.
    moves: VecDeque<(f64, FloorId)>,
    /// Hysteresis is halved for this speaker until then.
    reduced_until: f64,
    pending: Option<Pending>,
}

impl Speaker {
    fn last_end(&self) -> Option<f64> {
        self.segments.back().map(|s| s.t1)
    }

    /// Voiced spans intersecting `w`, including the open one up to `now`.
    fn spans(&self, w: Window, now: f64) -> Vec<(f64, f64)> {
        let mut v: Vec<(f64, f64)> = self
            .segments
            .iter()
            .rev()
            .take_while(|s| s.t1 > w.t0)
            .filter(|s| s.t0 < w.t1)
            .map(|s| (s.t0.max(w.t0), s.t1.min(w.t1)))
            .collect();
        v.reverse();
        if let Some(t0) = self.open_since {
            let (a, b) = (t0.max(w.t0), now.min(w.t1));
            if b > a {
                v.push((a, b));
            }
        }
        v
    }

    fn active_since(&self, t: f64) -> bool {
        self.open_since.is_some() || self.last_end().is_some_and(|e| e > t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Target {
    Existing(FloorId),
    /// A floor yet to be created, keyed by its lowest-indexed proposed member.
    New(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Pending {
    target: Target,
    since: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloorState {
    pub created: f64,
    pub stability: f64,
    reduced_until: f64,
}

/// Live floor assignment for every participant.
pub type Partition = BTreeMap<ParticipantId, Option<FloorId>>;

/// Single-writer engine state.
#[derive(Debug, Clone)]
pub struct FloorEngine {
    params: EngineParams,
    speakers: Vec<Speaker>,
    index: BTreeMap<ParticipantId, usize>,
    affinity: AffinityMatrix,
    assign: Vec<FloorId>,
    floors: BTreeMap<FloorId, FloorState>,
    next_floor: u32,
    now: f64,
    segment_start: f64,
    coord_pairs: BTreeSet<(usize, usize)>,
    /// Recently closed analysis segments, oldest first.
    closed: VecDeque<Window>,
    finalized_before: f64,
    moved_to: BTreeMap<FloorId, FloorId>,
}

impl FloorEngine {
    /// Everyone starts in floor 1 at full stability.
    pub fn new(participants: &[ParticipantId], params: EngineParams) -> Result<Self> {
        params.validate()?;
        let unique: BTreeSet<&ParticipantId> = participants.iter().collect();
        if unique.len() < 2 {
            return Err(Error::TooFew(unique.len()));
        }
        let ids: Vec<ParticipantId> = unique.into_iter().cloned().collect();
        let index = ids.iter().cloned().enumerate().map(|(i, p)| (p, i)).collect();
        let speakers = ids
            .into_iter()
            .map(|id| Speaker {
                id,
                segments: VecDeque::new(),
                open_since: None,
                open_turn: Vec::new(),
                open_turn_start: None,
                open_turn_clear: true,
                turns: VecDeque::new(),
                labels: LabelBuilder::default(),
                moves: VecDeque::new(),
                reduced_until: f64::NEG_INFINITY,
                pending: None,
            })
            .collect::<Vec<_>>();
        let n = speakers.len();
        let mut floors = BTreeMap::new();
        floors.insert(
            FloorId(1),
            FloorState {
                created: 0.0,
                stability: 1.0,
                reduced_until: f64::NEG_INFINITY,
            },
        );
        Ok(Self {
            params,
            speakers,
            index,
            affinity: AffinityMatrix::new(n),
            assign: vec![FloorId(1); n],
            floors,
            next_floor: 2,
            now: 0.0,
            segment_start: 0.0,
            coord_pairs: BTreeSet::new(),
            closed: VecDeque::new(),
            finalized_before: f64::NEG_INFINITY,
            moved_to: BTreeMap::new(),
        })
    }

    pub fn params(&self) -> &EngineParams {
        &self.params
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn participants(&self) -> impl Iterator<Item = &ParticipantId> {
        self.speakers.iter().map(|s| &s.id)
    }

    pub fn partition(&self) -> Partition {
        self.speakers
            .iter()
            .zip(&self.assign)
            .map(|(s, f)| (s.id.clone(), Some(*f)))
            .collect()
    }

    pub fn floor_of(&self, p: &ParticipantId) -> Option<FloorId> {
        self.index.get(p).map(|&i| self.assign[i])
    }

    pub fn members(&self, floor: FloorId) -> BTreeSet<ParticipantId> {
        self.speakers
            .iter()
            .zip(&self.assign)
            .filter(|(_, f)| **f == floor)
            .map(|(s, _)| s.id.clone())
            .collect()
    }

    pub fn floors(&self) -> &BTreeMap<FloorId, FloorState> {
        &self.floors
    }

    pub fn affinity(&self) -> &AffinityMatrix {
        &self.affinity
    }

    pub fn affinity_between(&self, a: &ParticipantId, b: &ParticipantId) -> Option<f64> {
        let (i, j) = (*self.index.get(a)?, *self.index.get(b)?);
        (i != j).then(|| self.affinity.get(i, j))
    }

    /// Completed segments still buffered for `p`.
    pub fn buffered_segments(&self, p: &ParticipantId) -> impl Iterator<Item = &VadSegment> {
        self.index
            .get(p)
            .into_iter()
            .flat_map(move |&i| self.speakers[i].segments.iter())
    }

    /// Onset of `p`'s segment in progress.
    pub fn open_since(&self, p: &ParticipantId) -> Option<f64> {
        self.index.get(p).and_then(|&i| self.speakers[i].open_since)
    }

    /// Number of buffered segments and turns, for memory accounting.
    pub fn buffered_len(&self) -> usize {
        self.speakers.iter().map(|s| s.segments.len() + s.turns.len() + s.open_turn.len()).sum()
    }

    fn speaker_index(&self, p: &ParticipantId) -> Result<usize> {
        self.index
            .get(p)
            .copied()
            .ok_or_else(|| Error::InvalidSegments(format!("unknown participant {p}")))
    }

    fn check_clock(&self, now: f64) -> Result<()> {
        if !now.is_finite() || now < self.now - self.params.reorder_tolerance {
            return Err(Error::OutOfOrder { got: now, last: self.now });
        }
        Ok(())
    }

    /// Feeds one item observed at `now`.
    pub fn ingest(&mut self, item: Item, now: f64) -> Result<Step> {
        self.check_clock(now)?;
        let mut step = Step::default();
        match item {
            Item::SpeechStart { participant, t } => {
                let i = self.speaker_index(&participant)?;
                step.extend(self.advance_to(t.min(now).max(self.now)));
                self.start_speech(i, t);
            }
            Item::Segment(seg) => {
                let i = self.speaker_index(&seg.participant)?;
                if !(seg.t1 > seg.t0) || seg.t1 > now + self.params.reorder_tolerance {
                    return Err(Error::InvalidSegments(format!(
                        "segment [{}, {}] for {} not available at {now}",
                        seg.t0, seg.t1, seg.participant
                    )));
                }
                if let Some(last) = self.speakers[i].last_end() {
                    if seg.t0 < last - 1e-9 {
                        return Err(Error::InvalidSegments(format!(
                            "segment at {} for {} overlaps the previous one",
                            seg.t0, seg.participant
                        )));
                    }
                }
                if self.speakers[i].open_since.is_none() {
                    // no onset notice: the segment is first seen now
                    step.extend(self.advance_to(seg.t0.max(self.now)));
                    self.start_speech(i, seg.t0);
                }
                self.end_speech(i, seg);
            }
            Item::Cue(cue) => {
                step.extend(self.advance_to(now.max(self.now)));
                step.events.extend(self.apply_cue(&cue)?);
            }
        }
        step.extend(self.advance_to(now.max(self.now)));
        Ok(step)
    }

    fn start_speech(&mut self, i: usize, t: f64) {
        let turn_gap = self.params.turn_gap;
        let continues = self.speakers[i]
            .last_end()
            .is_some_and(|e| t - e < turn_gap && self.speakers[i].open_turn_start.is_some());
        if !continues {
            let clear = self
                .speakers
                .iter()
                .enumerate()
                .all(|(j, s)| j == i || !voiced_at_time(s, t));
            let sp = &mut self.speakers[i];
            sp.open_turn.clear();
            sp.open_turn_start = Some(t);
            sp.open_turn_clear = clear;
        }
        self.speakers[i].open_since = Some(t);
    }

    fn end_speech(&mut self, i: usize, seg: VadSegment) {
        let sp = &mut self.speakers[i];
        sp.open_since = None;
        sp.open_turn.push(seg.clone());
        let end = seg.t1;
        sp.segments.push_back(seg);
        self.prune(end);
    }

    /// Processes every boundary up to `t` and moves the clock there.
    pub fn advance_to(&mut self, t: f64) -> Step {
        let mut step = Step::default();
        loop {
            let cap = self.segment_start + self.params.window;
            let due_turn = self
                .speakers
                .iter()
                .enumerate()
                .filter(|(_, s)| s.open_since.is_none() && s.open_turn_start.is_some())
                .filter_map(|(i, s)| s.last_end().map(|e| (e + self.params.turn_gap, i)))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let boundary = match due_turn {
                Some((dt, _)) if dt <= cap => dt,
                _ => cap,
            };
            if boundary > t {
                break;
            }
            self.now = self.now.max(boundary);
            // complete every turn due at this instant
            let due: Vec<usize> = self
                .speakers
                .iter()
                .enumerate()
                .filter(|(_, s)| s.open_since.is_none() && s.open_turn_start.is_some())
                .filter(|(_, s)| s.last_end().is_some_and(|e| e + self.params.turn_gap <= boundary))
                .map(|(i, _)| i)
                .collect();
            for i in due {
                step.completed_turns.push(self.complete_turn(i));
            }
            step.events.extend(self.close_segment(boundary));
        }
        self.now = self.now.max(t);
        step
    }

    fn complete_turn(&mut self, i: usize) -> Turn {
        let floor = self.assign[i];
        let sp = &mut self.speakers[i];
        let segs = std::mem::take(&mut sp.open_turn);
        sp.open_turn_start = None;
        let turn = Turn::from_segments(segs, sp.open_turn_clear);
        sp.turns.push_back(TurnRec { turn: turn.clone(), floor });
        turn
    }

    /// Closes the analysis segment ending at `end`.
    fn close_segment(&mut self, end: f64) -> Vec<EngineEvent> {
        let w = Window::new(self.segment_start, end);
        let scores = self.pair_scores(w, end);
        self.affinity.update(w.len(), self.params.decay_half_life, &scores);
        self.coord_pairs.clear();
        self.segment_start = end;
        self.closed.push_back(w);
        while self.closed.front().is_some_and(|c| c.t1 < end - self.params.retro_horizon) {
            self.closed.pop_front();
        }

        for f in self.floors.values_mut() {
            if f.reduced_until <= end {
                f.stability = 1.0;
            }
        }
        let mut events = self.recluster(end);
        events.extend(self.dissolve_singletons(end));
        self.finalize(end - self.params.retro_horizon);
        self.prune(end);
        events
    }

    fn pair_scores(&self, w: Window, now: f64) -> Vec<PairScore> {
        let n = self.speakers.len();
        let weights = self.params.weights();
        let spans: Vec<Vec<(f64, f64)>> = self.speakers.iter().map(|s| s.spans(w, now)).collect();
        let voiced: Vec<f64> = spans.iter().map(|v| v.iter().map(|(a, b)| b - a).sum()).collect();
        let onsets: Vec<Vec<f64>> = self.speakers.iter().map(|s| self.turn_onsets(s, w)).collect();
        let offsets: Vec<Vec<f64>> = self.speakers.iter().map(|s| self.turn_offsets(s, w)).collect();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let coord = self.coord_pairs.contains(&(i, j));
                let overlap = {
                    let denom = voiced[i].min(voiced[j]);
                    if denom > 0.0 {
                        (span_intersection(&spans[i], &spans[j]) / denom).clamp(0.0, 1.0)
                    } else {
                        0.0
                    }
                };
                let fa = aligned_share(&onsets[i], &offsets[j], self.params.align_tol);
                let fb = aligned_share(&onsets[j], &offsets[i], self.params.align_tol);
                let alignment = match (fa, fb) {
                    (Some(x), Some(y)) => (x + y) / 2.0,
                    (Some(x), None) | (None, Some(x)) => x,
                    (None, None) => 0.0,
                };
                let value = weights.score(alignment, overlap, coord);
                if value != 0.0 {
                    out.push(PairScore { i, j, value });
                }
            }
        }
        out
    }

    fn turn_onsets(&self, s: &Speaker, w: Window) -> Vec<f64> {
        let mut v: Vec<f64> = s
            .turns
            .iter()
            .rev()
            .take_while(|t| t.turn.t1 > w.t0 - self.params.retro_horizon)
            .map(|t| t.turn.t0)
            .filter(|&t| w.contains(t))
            .collect();
        if let Some(t0) = s.open_turn_start {
            if w.contains(t0) {
                v.push(t0);
            }
        }
        v
    }

    /// Completed turn ends, plus the end of the last segment of an open turn
    /// that is currently silent.
    fn turn_offsets(&self, s: &Speaker, w: Window) -> Vec<f64> {
        let lo = w.t0 - self.params.align_tol;
        let mut v: Vec<f64> = s
            .turns
            .iter()
            .rev()
            .take_while(|t| t.turn.t1 >= lo)
            .map(|t| t.turn.t1)
            .collect();
        if s.open_since.is_none() && s.open_turn_start.is_some() {
            if let Some(e) = s.last_end() {
                v.push(e);
            }
        }
        v.sort_by(f64::total_cmp);
        v
    }

    fn threshold_for(&self, xs: &[usize], ys: &[usize]) -> f64 {
        let mut same = 0usize;
        for &x in xs {
            for &y in ys {
                if self.assign[x] == self.assign[y] {
                    same += 1;
                }
            }
        }
        if 2 * same >= xs.len() * ys.len() {
            self.params.split_threshold
        } else {
            self.params.merge_threshold
        }
    }

    /// Proposes a partition of recently active participants and commits
    /// changes that have persisted long enough.
    fn recluster(&mut self, now: f64) -> Vec<EngineEvent> {
        let win = self.params.window;
        let recent: Vec<usize> = (0..self.speakers.len())
            .filter(|&i| self.speakers[i].active_since(now - win))
            .collect();
        let mid: Vec<usize> = (0..self.speakers.len())
            .filter(|&i| !recent.contains(&i) && self.speakers[i].active_since(now - 2.0 * win))
            .collect();
        if recent.is_empty() {
            for sp in &mut self.speakers {
                sp.pending = None;
            }
            return Vec::new();
        }

        let (mut clusters, _) = cluster::agglomerate(&self.affinity, &recent, |x, y| self.threshold_for(x, y));
        for &m in &mid {
            let best = clusters
                .iter()
                .enumerate()
                .map(|(k, c)| (k, self.affinity.average(&[m], c)))
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            if let Some((k, _)) = best {
                clusters[k].push(m);
            }
        }

        let targets = self.map_clusters(&clusters);
        let mut desired: Vec<Option<Target>> = vec![None; self.speakers.len()];
        for (cluster, target) in clusters.iter().zip(&targets) {
            // a new floor needs a group that is itself engaged
            if matches!(target, Target::New(_)) && self.cohesion(cluster) < self.params.merge_threshold {
                continue;
            }
            for &m in cluster {
                desired[m] = Some(*target);
            }
        }

        // pending bookkeeping
        for (i, want) in desired.iter().enumerate() {
            let sp = &mut self.speakers[i];
            match want {
                Some(Target::Existing(f)) if *f == self.assign[i] => sp.pending = None,
                None => sp.pending = None,
                Some(t) => match sp.pending {
                    Some(p) if p.target == *t => {}
                    _ => {
                        sp.pending = Some(Pending {
                            target: *t,
                            since: now,
                        })
                    }
                },
            }
        }

        // ready participants grouped by target
        let mut ready: BTreeMap<TargetKey, Vec<(usize, f64)>> = BTreeMap::new();
        for (i, sp) in self.speakers.iter().enumerate() {
            let Some(p) = sp.pending else { continue };
            let hyst = if sp.reduced_until > now {
                self.params.hysteresis / 2.0
            } else {
                self.params.hysteresis
            };
            if now - p.since >= hyst - 1e-9 {
                ready.entry(TargetKey::from(p.target)).or_default().push((i, p.since));
            }
        }

        let mut events = Vec::new();
        for (key, group) in ready {
            match key {
                TargetKey::Existing(f) => {
                    if !self.floors.contains_key(&FloorId(f)) {
                        continue;
                    }
                    for (i, since) in group {
                        events.extend(self.move_speaker(i, FloorId(f), since, now));
                    }
                }
                TargetKey::New(_) => {
                    if group.len() < 2 {
                        continue;
                    }
                    let floor = self.create_floor(now);
                    let label_start = group
                        .iter()
                        .filter_map(|&(i, since)| self.first_turn_since(i, since))
                        .fold(now, f64::min);
                    let members = group.iter().map(|&(i, _)| self.speakers[i].id.clone()).collect();
                    events.push(EngineEvent::FloorStart {
                        t: now,
                        floor,
                        members,
                        label_start,
                    });
                    for (i, since) in group {
                        events.extend(self.move_speaker(i, floor, since, now));
                    }
                }
            }
        }
        events.extend(self.end_empty_floors(now));
        events
    }

    /// Matches proposed clusters to existing floors, oldest floor first and
    /// by shared membership within a floor.
    fn map_clusters(&self, clusters: &[Vec<usize>]) -> Vec<Target> {
        let mut cands: Vec<(FloorId, usize, usize)> = Vec::new();
        for (k, c) in clusters.iter().enumerate() {
            let mut counts: BTreeMap<FloorId, usize> = BTreeMap::new();
            for &m in c {
                *counts.entry(self.assign[m]).or_default() += 1;
            }
            for (f, n) in counts {
                cands.push((f, n, k));
            }
        }
        cands.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
        let mut out: Vec<Option<Target>> = vec![None; clusters.len()];
        let mut used: BTreeSet<FloorId> = BTreeSet::new();
        for (f, _, k) in cands {
            if out[k].is_none() && !used.contains(&f) {
                out[k] = Some(Target::Existing(f));
                used.insert(f);
            }
        }
        clusters
            .iter()
            .zip(out)
            .map(|(c, t)| match t {
                Some(t) => t,
                None if c.len() >= 2 => Target::New(c[0]),
                // a lone participant goes to the floor it is closest to
                None => Target::Existing(self.nearest_floor(c[0], None)),
            })
            .collect()
    }

    /// Average affinity over the pairs inside a group.
    fn cohesion(&self, group: &[usize]) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (a, &x) in group.iter().enumerate() {
            for &y in &group[a + 1..] {
                sum += self.affinity.get(x, y);
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    fn nearest_floor(&self, i: usize, exclude: Option<FloorId>) -> FloorId {
        let mut best: Option<(FloorId, f64)> = None;
        for &f in self.floors.keys() {
            if Some(f) == exclude {
                continue;
            }
            let members: Vec<usize> = (0..self.speakers.len())
                .filter(|&j| j != i && self.assign[j] == f)
                .collect();
            if members.is_empty() {
                continue;
            }
            let avg = self.affinity.average(&[i], &members);
            if best.is_none_or(|b| avg > b.1) {
                best = Some((f, avg));
            }
        }
        best.map_or(self.assign[i], |b| b.0)
    }

    fn create_floor(&mut self, now: f64) -> FloorId {
        let id = FloorId(self.next_floor);
        self.next_floor += 1;
        self.floors.insert(
            id,
            FloorState {
                created: now,
                stability: 1.0,
                reduced_until: f64::NEG_INFINITY,
            },
        );
        id
    }

    fn first_turn_since(&self, i: usize, since: f64) -> Option<f64> {
        let sp = &self.speakers[i];
        sp.turns
            .iter()
            .map(|t| t.turn.t0)
            .chain(sp.open_turn_start)
            .find(|&t0| t0 >= since && t0 >= self.finalized_before)
    }

    /// Moves a speaker and relabels its turns that began at or after `since`.
    fn move_speaker(&mut self, i: usize, to: FloorId, since: f64, now: f64) -> Vec<EngineEvent> {
        let from = self.assign[i];
        self.speakers[i].pending = None;
        if from == to {
            return Vec::new();
        }
        self.assign[i] = to;
        self.moved_to.insert(from, to);
        let since = since.max(self.finalized_before);
        self.speakers[i].moves.push_back((since, to));
        for rec in self.speakers[i].turns.iter_mut().rev() {
            if rec.turn.t0 < since {
                break;
            }
            rec.floor = to;
        }
        vec![EngineEvent::Affiliation {
            t: now,
            participant: self.speakers[i].id.clone(),
            from: Some(from),
            to,
        }]
    }

    fn end_empty_floors(&mut self, now: f64) -> Vec<EngineEvent> {
        let mut events = Vec::new();
        let empty: Vec<FloorId> = self
            .floors
            .keys()
            .copied()
            .filter(|f| !self.assign.contains(f))
            .collect();
        for f in empty {
            self.floors.remove(&f);
            events.push(EngineEvent::FloorEnd {
                t: now,
                floor: f,
                merged_into: None,
            });
        }
        for e in &mut events {
            if let EngineEvent::FloorEnd { floor, merged_into, .. } = e {
                *merged_into = self.moved_to.get(floor).copied().filter(|f| self.floors.contains_key(f));
            }
        }
        events
    }

    /// Floors left with one member past the grace period dissolve into the
    /// member's nearest floor.
    fn dissolve_singletons(&mut self, now: f64) -> Vec<EngineEvent> {
        let mut events = Vec::new();
        let singles: Vec<FloorId> = self
            .floors
            .iter()
            .filter(|(f, st)| {
                now - st.created >= self.params.hysteresis && self.assign.iter().filter(|a| *a == *f).count() == 1
            })
            .map(|(f, _)| *f)
            .collect();
        for f in singles {
            if self.floors.len() < 2 {
                break;
            }
            let Some(i) = self.assign.iter().position(|a| *a == f) else { continue };
            let to = self.nearest_floor(i, Some(f));
            if to == f {
                continue;
            }
            let since = self.speakers[i].pending.map_or(now, |p| p.since);
            events.extend(self.move_speaker(i, to, since, now));
        }
        events.extend(self.end_empty_floors(now));
        events
    }

    /// Applies a cue. CONFIRM commits its split immediately and back-dates
    /// the new floor to the initiating turn.
    pub fn apply_cue(&mut self, cue: &SchismCue) -> Result<Vec<EngineEvent>> {
        if !cue.is_valid() {
            return Err(Error::InvalidParams {
                name: "cue",
                reason: format!("invalid {} cue at {}", cue.kind, cue.t),
            });
        }
        let Some(&init) = self.index.get(&cue.initiator) else {
            return Ok(Vec::new());
        };
        let now = self.now;
        match cue.kind {
            CueKind::Sit | CueKind::Aside => {
                let until = now + self.params.stability_window;
                let f = self.assign[init];
                if let Some(st) = self.floors.get_mut(&f) {
                    st.stability = (1.0 - self.params.stability_drop).max(0.0);
                    st.reduced_until = until;
                }
                self.speakers[init].reduced_until = until;
                Ok(Vec::new())
            }
            CueKind::Coord => {
                let mut group: Vec<usize> = cue
                    .responders
                    .iter()
                    .filter_map(|p| self.index.get(p).copied())
                    .collect();
                group.push(init);
                // the bursts may already have been scored in closed segments
                let end = group
                    .iter()
                    .filter_map(|&x| {
                        self.speakers[x]
                            .segments
                            .iter()
                            .filter(|s| s.t0 >= cue.t - 1e-6)
                            .min_by(|a, b| a.t0.total_cmp(&b.t0))
                            .map(|s| s.t1)
                    })
                    .fold(cue.t, f64::max);
                let bonus: f64 = self
                    .closed
                    .iter()
                    .filter(|w| w.t1 > cue.t && w.t0 < end)
                    .map(|w| self.params.w_coord * decay_factor(now - w.t1, self.params.decay_half_life))
                    .sum();
                for (a, &x) in group.iter().enumerate() {
                    for &y in &group[a + 1..] {
                        if bonus > 0.0 {
                            let v = self.affinity.get(x, y) + bonus;
                            self.affinity.set(x, y, v);
                        }
                        if self.segment_start < end {
                            self.coord_pairs.insert((x.min(y), x.max(y)));
                        }
                    }
                }
                Ok(Vec::new())
            }
            CueKind::Confirm => {
                let initiating = self.speakers[init]
                    .turns
                    .iter()
                    .rev()
                    .find(|t| t.turn.t0 < cue.t)
                    .map(|t| t.turn.t0);
                let start = match initiating {
                    Some(t0) if t0 >= now - self.params.retro_horizon && t0 >= self.finalized_before => t0,
                    _ => now,
                };
                Ok(self.confirm_split(init, cue, start))
            }
        }
    }

    /// Back-dated split for a confirmed schism. Returns the STALE error when
    /// the initiating turn can no longer be relabeled.
    pub fn retro_relabel(&self, initiating_turn: &Turn) -> Result<f64> {
        if initiating_turn.t0 < self.now - self.params.retro_horizon || initiating_turn.t0 < self.finalized_before {
            return Err(Error::Stale {
                turn_t0: initiating_turn.t0,
                now: self.now,
            });
        }
        Ok(initiating_turn.t0)
    }

    fn confirm_split(&mut self, init: usize, cue: &SchismCue, start: f64) -> Vec<EngineEvent> {
        let now = self.now;
        let responders: Vec<usize> = cue
            .responders
            .iter()
            .filter_map(|p| self.index.get(p).copied())
            .filter(|&r| r != init)
            .collect();
        if responders.is_empty() {
            return Vec::new();
        }
        let group: Vec<usize> = std::iter::once(init).chain(responders.iter().copied()).collect();
        let old = self.assign[init];
        let already_alone = group.iter().all(|&g| self.assign[g] == old)
            && self.assign.iter().filter(|&&a| a == old).count() == group.len();
        if already_alone {
            return Vec::new();
        }
        let floor = self.create_floor(now);
        let mut events = vec![EngineEvent::FloorStart {
            t: now,
            floor,
            members: group.iter().map(|&g| self.speakers[g].id.clone()).collect(),
            label_start: start,
        }];
        events.extend(self.move_speaker(init, floor, start, now));
        let response_start = cue.t.max(start);
        for &r in &responders {
            events.extend(self.move_speaker(r, floor, response_start, now));
        }
        // the pair now talks over the others: keep the split from snapping back
        let others: Vec<usize> = (0..self.speakers.len()).filter(|&j| self.assign[j] == old).collect();
        for &g in &group {
            for &o in &others {
                let v = self.affinity.get(g, o).min(self.params.split_threshold);
                self.affinity.set(g, o, v);
            }
        }
        for (a, &x) in group.iter().enumerate() {
            for &y in &group[a + 1..] {
                let v = self.affinity.get(x, y).max(self.params.merge_threshold);
                self.affinity.set(x, y, v);
            }
        }
        events.extend(self.end_empty_floors(now));
        events
    }

    fn finalize(&mut self, before: f64) {
        if before <= self.finalized_before {
            return;
        }
        for sp in &mut self.speakers {
            while sp.turns.front().is_some_and(|t| t.turn.t1 <= before) {
                let rec = sp.turns.pop_front().expect("checked");
                let joined = sp
                    .moves
                    .iter()
                    .rev()
                    .find(|(t, f)| *f == rec.floor && *t <= rec.turn.t0)
                    .map_or(rec.turn.t0, |m| m.0);
                sp.labels.push(&sp.id, rec.floor, joined, rec.turn.t0, rec.turn.t1);
            }
            while sp.moves.len() > 1 && sp.moves[1].0 <= before {
                sp.moves.pop_front();
            }
        }
        self.finalized_before = before;
    }

    fn prune(&mut self, now: f64) {
        let keep = now - self.params.retro_horizon - 2.0 * self.params.window;
        for sp in &mut self.speakers {
            while sp.segments.len() > 1 && sp.segments.front().is_some_and(|s| s.t1 < keep) {
                sp.segments.pop_front();
            }
        }
    }

    /// Finalized intervals that can no longer change and end by `finalize_before`.
    pub fn emit_labels(&mut self, finalize_before: f64) -> Vec<AffiliationInterval> {
        let limit = finalize_before.min(self.now - self.params.retro_horizon);
        self.finalize(limit);
        self.speakers.iter_mut().flat_map(|s| s.labels.drain_closed()).collect()
    }

    /// Ends the session: completes open turns, finalizes everything and
    /// returns the remaining intervals.
    pub fn finish(&mut self) -> (Step, Vec<AffiliationInterval>) {
        let mut step = Step::default();
        for sp in &mut self.speakers {
            // an onset whose segment never arrived carries no interval
            sp.open_since = None;
        }
        for i in 0..self.speakers.len() {
            if self.speakers[i].open_turn_start.is_some() && !self.speakers[i].open_turn.is_empty() {
                step.completed_turns.push(self.complete_turn(i));
            } else {
                self.speakers[i].open_turn_start = None;
            }
        }
        self.finalize(f64::INFINITY);
        let labels = self
            .speakers
            .iter_mut()
            .flat_map(|s| {
                let mut v = s.labels.drain_closed();
                v.extend(s.labels.flush());
                v
            })
            .collect();
        (step, labels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum TargetKey {
    Existing(u32),
    New(usize),
}

impl From<Target> for TargetKey {
    fn from(t: Target) -> Self {
        match t {
            Target::Existing(f) => TargetKey::Existing(f.0),
            Target::New(k) => TargetKey::New(k),
        }
    }
}

fn voiced_at_time(s: &Speaker, t: f64) -> bool {
    if s.open_since.is_some_and(|t0| t0 <= t) {
        return true;
    }
    s.segments
        .iter()
        .rev()
        .take_while(|seg| seg.t1 > t)
        .any(|seg| seg.t0 <= t)
}

/// Total intersection length of two sorted, disjoint span lists.
fn span_intersection(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let (mut i, mut j, mut total) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        let lo = a[i].0.max(b[j].0);
        let hi = a[i].1.min(b[j].1);
        if hi > lo {
            total += hi - lo;
        }
        if a[i].1 < b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    total
}

fn aligned_share(onsets: &[f64], offsets: &[f64], tol: f64) -> Option<f64> {
    if onsets.is_empty() {
        return None;
    }
    let hits = onsets
        .iter()
        .filter(|&&t| {
            let k = offsets.partition_point(|&o| o < t - tol);
            k < offsets.len() && offsets[k] <= t + tol
        })
        .count();
    Some(hits as f64 / onsets.len() as f64)
}
