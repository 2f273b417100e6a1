//! Streaming driver: runs the cue detectors next to the floor engine.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::cues::{
    check_confirmation, cospeech, detect_aside_cue, detect_coordinated_action, detect_sit_cue, median, Confirmation,
    DetectorParams, OngoingFloor, SegmentEnvelope, SpeakerBaseline, CONFIRM_HORIZON, CONFIRM_MAX_INITIATOR_OVERLAP,
};
use crate::error::Result;
use crate::model::{AffiliationInterval, CueKind, ParticipantId, SchismCue, TokenAnnotation, Turn, VadSegment};
use crate::turns::{SegmentStreams, Window};

use super::{EngineEvent, EngineParams, FloorEngine, Item, Step};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PipelineParams {
    pub engine: EngineParams,
    pub detect: DetectorParams,
    /// Turn-taking features only when false.
    pub no_cues: bool,
}

impl PipelineParams {
    pub fn validate(&self) -> Result<()> {
        self.engine.validate()?;
        self.detect.validate()
    }
}

/// Everything a run produced.
#[derive(Debug, Clone, Default)]
pub struct InferOutput {
    pub events: Vec<EngineEvent>,
    pub cues: Vec<SchismCue>,
    pub labels: Vec<AffiliationInterval>,
}

#[derive(Debug, Clone)]
struct Candidate {
    initiator: ParticipantId,
    initiating_t0: f64,
    responder: ParticipantId,
    response_t0: f64,
    ongoing: BTreeSet<ParticipantId>,
    cued: bool,
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    engine: FloorEngine,
    detect: DetectorParams,
    no_cues: bool,
    tokens: VecDeque<TokenAnnotation>,
    baselines: BTreeMap<ParticipantId, SpeakerBaseline>,
    /// (onset, energy) of recent turns by anyone, for speakers without a baseline.
    session_energy: VecDeque<(f64, f64)>,
    last_end: BTreeMap<ParticipantId, f64>,
    /// Completions of recent turns.
    turn_ends: VecDeque<(f64, ParticipantId)>,
    onsets: VecDeque<(f64, ParticipantId)>,
    /// Completed turns waiting for their response window, flagged when the
    /// turn raised a SIT or ASIDE cue.
    awaiting: VecDeque<(Turn, bool)>,
    /// Response onsets already claimed by an initiating turn.
    claimed: BTreeSet<(u64, ParticipantId)>,
    candidates: Vec<Candidate>,
    coord_cursor: f64,
    out: InferOutput,
}

impl Pipeline {
    pub fn new(participants: &[ParticipantId], params: PipelineParams) -> Result<Self> {
        params.validate()?;
        let engine = FloorEngine::new(participants, params.engine)?;
        Ok(Self {
            engine,
            detect: params.detect,
            no_cues: params.no_cues,
            tokens: VecDeque::new(),
            baselines: BTreeMap::new(),
            session_energy: VecDeque::new(),
            last_end: BTreeMap::new(),
            turn_ends: VecDeque::new(),
            onsets: VecDeque::new(),
            awaiting: VecDeque::new(),
            claimed: BTreeSet::new(),
            candidates: Vec::new(),
            coord_cursor: 0.0,
            out: InferOutput::default(),
        })
    }

    pub fn engine(&self) -> &FloorEngine {
        &self.engine
    }

    /// Address-token annotations, fed in onset order ahead of the speech
    /// they belong to.
    pub fn push_token(&mut self, tok: TokenAnnotation) {
        self.tokens.push_back(tok);
    }

    pub fn speech_start(&mut self, participant: ParticipantId, t: f64) -> Result<()> {
        let gap = self.last_end.get(&participant).map_or(f64::INFINITY, |e| t - e);
        if gap >= self.engine.params().turn_gap {
            self.onsets.push_back((t, participant.clone()));
        }
        let step = self.engine.ingest(Item::SpeechStart { participant, t }, t)?;
        self.after(step)
    }

    pub fn segment(&mut self, seg: VadSegment) -> Result<()> {
        let now = seg.t1;
        if self.engine.open_since(&seg.participant).is_none() {
            let gap = self.last_end.get(&seg.participant).map_or(f64::INFINITY, |e| seg.t0 - e);
            if gap >= self.engine.params().turn_gap {
                self.onsets.push_back((seg.t0, seg.participant.clone()));
            }
        }
        self.last_end.insert(seg.participant.clone(), seg.t1);
        let step = self.engine.ingest(Item::Segment(seg), now)?;
        self.after(step)
    }

    /// An externally supplied cue, applied at time `now`.
    pub fn cue(&mut self, cue: SchismCue, now: f64) -> Result<()> {
        if self.no_cues {
            return self.advance(now);
        }
        self.out.cues.push(cue.clone());
        let step = self.engine.ingest(Item::Cue(cue), now)?;
        self.after(step)
    }

    pub fn advance(&mut self, now: f64) -> Result<()> {
        let step = self.engine.advance_to(now.max(self.engine.now()));
        self.after(step)
    }

    fn after(&mut self, step: Step) -> Result<()> {
        self.out.events.extend(step.events);
        if !self.no_cues {
            for turn in step.completed_turns {
                self.on_turn(turn)?;
            }
            self.scan_confirmations()?;
            self.scan_coordination()?;
        }
        self.prune();
        let before = self.engine.now() - self.engine.params().retro_horizon;
        let labels = self.engine.emit_labels(before);
        self.out.labels.extend(labels);
        Ok(())
    }

    fn on_turn(&mut self, turn: Turn) -> Result<()> {
        let horizon = self.detect.baseline_horizon;
        while self.tokens.front().is_some_and(|t| t.t0 < turn.t0 - horizon) {
            self.tokens.pop_front();
        }
        let tokens: Vec<TokenAnnotation> = self
            .tokens
            .iter()
            .filter(|t| t.t0 >= turn.t0 - 1.0 && t.t0 <= turn.t1)
            .cloned()
            .collect();
        let mut cued = false;
        if let Some(cue) = detect_sit_cue(&turn, &tokens, &self.detect) {
            cued = true;
            self.apply(cue)?;
        }

        let base = self.baselines.entry(turn.participant.clone()).or_default();
        let baseline = match base.baseline(&turn.participant, turn.t0, horizon) {
            Ok(b) => Some(b),
            Err(_) => {
                let mut recent: Vec<f64> = self
                    .session_energy
                    .iter()
                    .filter(|(t, _)| *t >= turn.t0 - horizon && *t < turn.t0)
                    .map(|(_, e)| *e)
                    .collect();
                (recent.len() >= 3).then(|| median(&mut recent))
            }
        };
        base.record(&turn);
        self.session_energy.push_back((turn.t0, turn.e_mean));
        while self.session_energy.front().is_some_and(|(t, _)| *t < turn.t0 - horizon) {
            self.session_energy.pop_front();
        }
        if let Some(b) = baseline {
            if let Some(cue) = detect_aside_cue(&turn, b, &self.detect) {
                cued = true;
                self.apply(cue)?;
            }
        }
        self.turn_ends.push_back((turn.t1, turn.participant.clone()));
        if cued {
            // an initiation in its own right, not a response
            self.claimed.insert((turn.t0.to_bits(), turn.participant.clone()));
        }
        self.awaiting.push_back((turn, cued));
        Ok(())
    }

    fn apply(&mut self, cue: SchismCue) -> Result<()> {
        self.out.cues.push(cue.clone());
        let now = self.engine.now();
        let step = self.engine.ingest(Item::Cue(cue), now)?;
        self.out.events.extend(step.events);
        for turn in step.completed_turns {
            self.awaiting.push_back((turn, false));
        }
        Ok(())
    }

    /// Picks responses for turns whose response window has passed and
    /// re-checks open candidates against the data seen so far.
    fn scan_confirmations(&mut self) -> Result<()> {
        let now = self.engine.now();
        let max_gap = self.detect.confirm_max_gap;
        while self.awaiting.front().is_some_and(|(t, _)| t.t1 + max_gap <= now) {
            let (init, cued) = self.awaiting.pop_front().expect("checked");
            let Some(floor) = self.engine.floor_of(&init.participant) else {
                continue;
            };
            // floor members the initiator is not already at odds with
            let split = self.engine.params().split_threshold;
            let members: BTreeSet<ParticipantId> = self
                .engine
                .members(floor)
                .into_iter()
                .filter(|p| {
                    *p == init.participant
                        || self.engine.affinity_between(&init.participant, p).is_some_and(|a| a >= split)
                })
                .collect();
            if !cued && self.talks_over(&init, &members) {
                continue;
            }
            // earliest fitting onset per other member; each competes as responder
            let mut responses: BTreeMap<ParticipantId, f64> = BTreeMap::new();
            for (t0, p) in &self.onsets {
                if *p != init.participant
                    && members.contains(p)
                    && !self.claimed.contains(&(t0.to_bits(), p.clone()))
                    && *t0 > init.t0
                    && (*t0 - init.t1).abs() <= max_gap
                    && !self
                        .turn_ends
                        .iter()
                        .any(|(e, q)| *e > init.t1 && *e < *t0 && q != p && *q != init.participant)
                {
                    responses.entry(p.clone()).or_insert(*t0);
                }
            }
            if members.len() < 3 {
                continue;
            }
            for (responder, response_t0) in responses {
                let ongoing: BTreeSet<ParticipantId> = members
                    .iter()
                    .filter(|p| **p != init.participant && **p != responder)
                    .cloned()
                    .collect();
                self.claimed.insert((response_t0.to_bits(), responder.clone()));
                self.candidates.push(Candidate {
                    initiator: init.participant.clone(),
                    initiating_t0: init.t0,
                    responder,
                    response_t0,
                    ongoing,
                    cued,
                });
            }
        }

        let mut results = Vec::with_capacity(self.candidates.len());
        for mut c in std::mem::take(&mut self.candidates) {
            // talk by another schism's participants is not the floor being left
            let busy = self.recent_cue_participants(&c);
            if !c.cued && (busy.contains(&c.initiator) || busy.contains(&c.responder)) {
                continue;
            }
            c.ongoing.retain(|p| !busy.contains(p));
            let streams = self.snapshot(&c, now);
            let ongoing = OngoingFloor {
                members: &c.ongoing,
                segments: &streams,
            };
            match check_confirmation(&c.initiator, &c.responder, c.response_t0, &ongoing, self.detect.confirm_max_gap, now) {
                Confirmation::Rejected => {}
                r => results.push((c, r)),
            }
        }
        // responders competing for one initiating turn: the one the initiator
        // is most affiliated with wins, once it has confirmed
        let score = |c: &Candidate| self.engine.affinity_between(&c.initiator, &c.responder).unwrap_or(0.0);
        let mut confirmed = Vec::new();
        let mut decided: BTreeSet<(ParticipantId, u64)> = BTreeSet::new();
        for (c, r) in &results {
            let Confirmation::Confirmed { cue, .. } = r else { continue };
            let key = (c.initiator.clone(), c.initiating_t0.to_bits());
            if decided.contains(&key) {
                continue;
            }
            let best = results
                .iter()
                .filter(|(o, _)| o.initiator == c.initiator && o.initiating_t0 == c.initiating_t0)
                .max_by(|a, b| score(&a.0).total_cmp(&score(&b.0)).then(b.0.response_t0.total_cmp(&a.0.response_t0)))
                .expect("contains c");
            if best.0.responder == c.responder {
                decided.insert(key);
                confirmed.push(cue.clone());
            }
        }
        self.candidates = results
            .into_iter()
            .map(|(c, _)| c)
            .filter(|c| !decided.contains(&(c.initiator.clone(), c.initiating_t0.to_bits())))
            .collect();
        for cue in confirmed {
            let involved: BTreeSet<&ParticipantId> =
                std::iter::once(&cue.initiator).chain(cue.responders.iter()).collect();
            // a confirmed pair settles every other open candidate it is part of
            self.candidates
                .retain(|c| !involved.contains(&c.initiator) && !involved.contains(&c.responder));
            self.apply(cue)?;
        }
        Ok(())
    }

    fn recent_cue_participants(&self, c: &Candidate) -> BTreeSet<ParticipantId> {
        let since = c.response_t0 - CONFIRM_HORIZON;
        let mut out = BTreeSet::new();
        for cue in self.out.cues.iter().rev().take_while(|q| q.t >= since - CONFIRM_HORIZON) {
            let own = c.cued && cue.initiator == c.initiator;
            if cue.t < since || own || cue.kind == CueKind::Coord {
                continue;
            }
            out.insert(cue.initiator.clone());
            out.extend(cue.responders.iter().cloned());
        }
        out
    }

    /// Whether the rest of the floor is voiced for more than the allowed
    /// share of the turn.
    fn talks_over(&self, turn: &Turn, members: &BTreeSet<ParticipantId>) -> bool {
        let mut streams = SegmentStreams::new();
        streams.insert(turn.participant.clone(), turn.segments.clone());
        let others: Vec<&ParticipantId> = members.iter().filter(|p| **p != turn.participant).collect();
        for p in &others {
            let v: Vec<VadSegment> = self
                .engine
                .buffered_segments(p)
                .filter(|s| s.t1 > turn.t0 && s.t0 < turn.t1)
                .cloned()
                .collect();
            streams.insert((*p).clone(), v);
        }
        let voiced: f64 = turn.segments.iter().map(|s| s.t1 - s.t0).sum();
        let over = cospeech(&[&turn.participant], &others, &streams, turn.t0, turn.t1);
        over > CONFIRM_MAX_INITIATOR_OVERLAP * voiced
    }

    /// Segments of the candidate's participants from one confirmation
    /// horizon before its response onset, with voicing in progress cut at
    /// `now`.
    fn snapshot(&self, c: &Candidate, now: f64) -> SegmentStreams {
        let mut out = SegmentStreams::new();
        for p in [&c.initiator, &c.responder].into_iter().chain(c.ongoing.iter()) {
            let mut v: Vec<VadSegment> = self
                .engine
                .buffered_segments(p)
                .filter(|s| s.t1 > c.response_t0 - CONFIRM_HORIZON)
                .cloned()
                .collect();
            if let Some(t0) = self.engine.open_since(p) {
                if now > t0 {
                    v.push(VadSegment {
                        participant: p.clone(),
                        t0,
                        t1: now,
                        e_mean: 0.0,
                        e_peak: 0.0,
                    });
                }
            }
            out.insert(p.clone(), v);
        }
        out
    }

    /// Scans for coordinated action up to the earliest group start whose
    /// members could still change: an onset within `coord_onset_tau` that is
    /// still open, or one whose trailing silence is not yet known.
    fn scan_coordination(&mut self) -> Result<()> {
        let now = self.engine.now();
        let tau = self.detect.coord_onset_tau;
        let iso = self.detect.coord_isolation;
        let reach = tau + self.detect.coord_max_burst + iso;
        let mut limit = now - tau;
        let mut streams = SegmentStreams::new();
        for p in self.engine.participants() {
            let mut v: Vec<VadSegment> = self
                .engine
                .buffered_segments(p)
                .filter(|s| s.t1 > self.coord_cursor - reach)
                .cloned()
                .collect();
            for s in &v {
                if s.t1 + iso > now {
                    limit = limit.min(s.t0 - tau);
                }
            }
            if let Some(since) = self.engine.open_since(p) {
                limit = limit.min(since - tau);
                if now > since {
                    // stands in for the open segment so bursts before it are not taken as isolated
                    v.push(VadSegment {
                        participant: p.clone(),
                        t0: since,
                        t1: now,
                        e_mean: 0.0,
                        e_peak: 0.0,
                    });
                }
            }
            if !v.is_empty() {
                streams.insert(p.clone(), v);
            }
        }
        while self.coord_cursor < limit {
            let w = Window::new(self.coord_cursor, limit);
            let env = SegmentEnvelope(&streams);
            match detect_coordinated_action(&streams, w, &env, &self.detect) {
                Some(cue) => {
                    let last_onset = streams
                        .iter()
                        .filter(|(p, _)| **p == cue.initiator || cue.responders.contains(*p))
                        .flat_map(|(_, v)| v.iter())
                        .filter(|s| s.t0 >= cue.t && s.t0 <= cue.t + tau + 1e-9)
                        .map(|s| s.t0)
                        .fold(cue.t, f64::max);
                    self.coord_cursor = last_onset + 1e-6;
                    self.apply(cue)?;
                }
                None => self.coord_cursor = limit,
            }
        }
        Ok(())
    }

    fn prune(&mut self) {
        let keep = self.engine.now() - CONFIRM_HORIZON - 2.0 * self.detect.confirm_max_gap;
        while self.onsets.front().is_some_and(|(t, _)| *t < keep) {
            self.onsets.pop_front();
        }
        self.claimed.retain(|(bits, _)| f64::from_bits(*bits) >= keep);
        while self.turn_ends.front().is_some_and(|(t, _)| *t < keep) {
            self.turn_ends.pop_front();
        }
    }

    /// Closes the session and returns everything produced.
    pub fn finish(mut self) -> Result<InferOutput> {
        let end = self.engine.now() + self.engine.params().turn_gap + self.detect.confirm_max_gap + CONFIRM_HORIZON;
        self.advance(end)?;
        let (step, labels) = self.engine.finish();
        self.out.events.extend(step.events);
        self.out.labels.extend(labels);
        Ok(self.out)
    }

    /// Drains the events and cues produced so far.
    pub fn take_output(&mut self) -> (Vec<EngineEvent>, Vec<SchismCue>, Vec<AffiliationInterval>) {
        (
            std::mem::take(&mut self.out.events),
            std::mem::take(&mut self.out.cues),
            std::mem::take(&mut self.out.labels),
        )
    }
}

/// Runs a whole recorded session through the pipeline. Segments become an
/// onset notice at `t0` and a completed segment at `t1`; external cues are
/// applied at their own time.
pub fn infer_session(
    participants: &[ParticipantId],
    segments: &[VadSegment],
    tokens: &[TokenAnnotation],
    cues: &[SchismCue],
    params: PipelineParams,
) -> Result<InferOutput> {
    #[derive(Clone, Copy)]
    enum Kind {
        End(usize),
        Cue(usize),
        Token(usize),
        Start(usize),
    }
    let mut items: Vec<(f64, u8, usize, Kind)> = Vec::with_capacity(2 * segments.len() + tokens.len() + cues.len());
    for (i, s) in segments.iter().enumerate() {
        items.push((s.t1, 0, i, Kind::End(i)));
        items.push((s.t0, 3, i, Kind::Start(i)));
    }
    for (i, c) in cues.iter().enumerate() {
        items.push((c.t, 1, i, Kind::Cue(i)));
    }
    for (i, t) in tokens.iter().enumerate() {
        items.push((t.t0, 2, i, Kind::Token(i)));
    }
    // ends before everything else at a tie, onsets last
    items.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut p = Pipeline::new(participants, params)?;
    for (t, _, _, kind) in items {
        match kind {
            Kind::End(i) => p.segment(segments[i].clone())?,
            Kind::Start(i) => p.speech_start(segments[i].participant.clone(), t)?,
            Kind::Cue(i) => p.cue(cues[i].clone(), t)?,
            Kind::Token(i) => p.push_token(tokens[i].clone()),
        }
    }
    p.finish()
}
