//! Synthetic multi-floor sessions with ground truth.
//!
//! A single chronological event loop drives both the floor-level process
//! (schisms, floor lifetimes, migrations) and the turn-level talk inside each
//! floor. Every floor runs its own turn rotation; floors overlap freely in
//! time, which is what makes them separable.

mod audio;
mod preset;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::engine::labels::LabelBuilder;
use crate::error::Result;
use crate::model::{round_ms, AffiliationInterval, FloorId, ParticipantId, TokenAnnotation, VadSegment};

pub use audio::{energy_frames, write_tone_wavs, NOISE_DBFS};
pub use preset::{preset, SimPreset};

/// Sessions shorter than this are not held to the preset floor-count range.
const REJECTION_MIN_SPAN: f64 = 1800.0;
const MAX_ATTEMPTS: usize = 200;
const MIN_SELF_PAUSE: f64 = 0.6;
const MIN_SEGMENT: f64 = 0.15;
const INITIATOR_SILENCE: f64 = 1.0;
/// Silence around each coordinated burst.
const COORD_QUIET: f64 = 0.6;

const NAMES: [&str; 12] = [
    "ann", "ben", "carl", "dana", "eve", "finn", "gus", "hana", "ivan", "jo", "kim", "lee",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TrueKind {
    Sit,
    TossOut,
    Aside,
    Retro,
    Coord,
}

impl TrueKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TrueKind::Sit => "SIT",
            TrueKind::TossOut => "TOSS_OUT",
            TrueKind::Aside => "ASIDE",
            TrueKind::Retro => "RETRO",
            TrueKind::Coord => "COORD",
        }
    }
}

/// An injected event with its true kind. `t` is the initiating onset;
/// schisms also carry the response onset and the floor they created.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectedEvent {
    pub kind: TrueKind,
    pub t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_response: Option<f64>,
    pub initiator: ParticipantId,
    pub responders: Vec<ParticipantId>,
    pub schism: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor: Option<FloorId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<FloorId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub labels: Vec<AffiliationInterval>,
    pub injected: Vec<InjectedEvent>,
    pub span: f64,
}

/// Tallies kept while generating, independent of the labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimCounters {
    pub floors: usize,
    pub schisms: usize,
    /// First turn onset and last turn end per floor.
    pub floor_spans: BTreeMap<FloorId, (f64, f64)>,
    pub deferred_attempts: usize,
    pub attempts: usize,
}

#[derive(Debug, Clone)]
pub struct SimSession {
    pub preset: SimPreset,
    pub seed: u64,
    pub participants: Vec<ParticipantId>,
    pub segments: Vec<VadSegment>,
    pub tokens: Vec<TokenAnnotation>,
    pub truth: GroundTruth,
    pub counters: SimCounters,
}

/// Generates a session. Realizations whose floor count falls outside the
/// preset range are redrawn from sub-seeds of `seed`.
pub fn simulate_session(preset: &SimPreset, duration: f64, seed: u64) -> Result<SimSession> {
    preset.validate()?;
    if !(duration.is_finite() && duration >= 0.0) {
        return Err(crate::Error::InvalidParams {
            name: "duration",
            reason: "must be a non-negative number of seconds".into(),
        });
    }
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let hours = duration / 3600.0;
    let (lo, hi) = preset.floors_per_hour;
    let mut best: Option<(f64, SimSession)> = None;
    for _ in 0..MAX_ATTEMPTS {
        let sub = master.next_u64();
        let mut s = Sim::new(preset, duration, sub).run();
        s.seed = seed;
        if duration < REJECTION_MIN_SPAN {
            return Ok(s);
        }
        let rate = s.counters.floors as f64 / hours;
        let miss = if rate < lo {
            lo - rate
        } else if rate > hi {
            rate - hi
        } else {
            0.0
        };
        if miss == 0.0 {
            return Ok(s);
        }
        if best.as_ref().is_none_or(|b| miss < b.0) {
            best = Some((miss, s));
        }
    }
    Ok(best.expect("at least one attempt").1)
}

pub fn participant_names(n: usize) -> Vec<ParticipantId> {
    (0..n)
        .map(|i| {
            let name = if n <= NAMES.len() {
                NAMES[i].to_string()
            } else {
                format!("p{:02}", i + 1)
            };
            ParticipantId::new(name).expect("static names are valid")
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ev {
    Turn(usize),
    Attempt,
    Retry,
    Death(usize),
    Migration,
    Coord,
    Aside,
    SitFire,
}

#[derive(Debug, Clone)]
struct Floor {
    id: FloorId,
    members: BTreeSet<usize>,
    parent: Option<usize>,
    alive: bool,
    last_speaker: Option<usize>,
    /// End of the latest turn produced in this floor.
    last_end: f64,
    pending: Option<Pending>,
    coord_due: bool,
    aside_due: bool,
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    kind: TrueKind,
    init: usize,
    resp: usize,
}

struct Sim<'a> {
    p: &'a SimPreset,
    span: f64,
    rng: ChaCha8Rng,
    names: Vec<ParticipantId>,
    level: Vec<f64>,
    busy: Vec<f64>,
    assign: Vec<usize>,
    floors: Vec<Floor>,
    queue: BTreeMap<(i64, u64), Ev>,
    seq: u64,
    /// Floor whose SIT is waiting for a clear moment; everyone else holds.
    hold: Option<usize>,
    held: Vec<usize>,
    deferred: usize,
    segments: Vec<VadSegment>,
    tokens: Vec<TokenAnnotation>,
    turns: Vec<(usize, FloorId, f64, f64)>,
    injected: Vec<InjectedEvent>,
    counters: SimCounters,
    turn_len: LogNormal<f64>,
    aside_len: LogNormal<f64>,
    spurt_len: LogNormal<f64>,
    lifetime: LogNormal<f64>,
    gap: Normal<f64>,
}

fn key(t: f64) -> i64 {
    (t * 1000.0).round() as i64
}

impl<'a> Sim<'a> {
    fn new(p: &'a SimPreset, span: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = p.participants;
        let level_dist = Normal::new(p.speech_level_mean, p.speech_level_sd).expect("validated sd");
        let level: Vec<f64> = (0..n).map(|_| level_dist.sample(&mut rng)).collect();
        let floors = vec![Floor {
            id: FloorId(1),
            members: (0..n).collect(),
            parent: None,
            alive: true,
            last_speaker: None,
            last_end: 0.0,
            pending: None,
            coord_due: false,
            aside_due: false,
        }];
        Self {
            p,
            span,
            names: participant_names(n),
            level,
            busy: vec![f64::NEG_INFINITY; n],
            assign: vec![0; n],
            floors,
            queue: BTreeMap::new(),
            seq: 0,
            hold: None,
            held: Vec::new(),
            deferred: 0,
            segments: Vec::new(),
            tokens: Vec::new(),
            turns: Vec::new(),
            injected: Vec::new(),
            counters: SimCounters {
                floors: 0,
                ..Default::default()
            },
            turn_len: LogNormal::new(p.turn_median.ln(), 0.5).expect("finite"),
            aside_len: LogNormal::new(1.5f64.ln(), 0.3).expect("finite"),
            spurt_len: LogNormal::new(0.0, 0.5).expect("finite"),
            lifetime: {
                let (med, sigma) = p.lifetime_params();
                LogNormal::new(med.ln(), sigma).expect("finite")
            },
            gap: Normal::new(p.gap_mean, p.gap_sd).expect("validated sd"),
            rng,
        }
    }

    fn push(&mut self, t: f64, ev: Ev) {
        if t < self.span {
            self.seq += 1;
            self.queue.insert((key(t), self.seq), ev);
        }
    }

    fn exp_after(&mut self, t: f64, per_minute: f64) -> Option<f64> {
        if per_minute <= 0.0 {
            return None;
        }
        let d = Exp::new(per_minute / 60.0).expect("positive rate").sample(&mut self.rng);
        Some(t + d)
    }

    fn run(mut self) -> SimSession {
        if self.span > 0.0 {
            let t0 = self.rng.random_range(0.2..1.0);
            self.push(t0, Ev::Turn(0));
            if self.p.participants >= 4 {
                let rate = self.p.birth_rate_per_hour() / 60.0;
                if let Some(t) = self.exp_after(0.0, rate) {
                    self.push(t, Ev::Attempt);
                }
            }
            for (ev, rate) in [
                (Ev::Migration, self.p.migration_rate),
                (Ev::Coord, self.p.coord_rate),
                (Ev::Aside, self.p.aside_rate),
            ] {
                if let Some(t) = self.exp_after(0.0, rate) {
                    self.push(t, ev);
                }
            }
        }
        while let Some(((k, _), ev)) = self.queue.pop_first() {
            let t = k as f64 / 1000.0;
            match ev {
                Ev::Turn(f) => self.on_turn(f, t),
                Ev::Attempt => {
                    self.on_attempt(t);
                    let rate = self.p.birth_rate_per_hour() / 60.0;
                    if let Some(next) = self.exp_after(t, rate) {
                        self.push(next, Ev::Attempt);
                    }
                }
                Ev::Retry => self.on_attempt(t),
                Ev::Death(f) => self.on_death(f, t),
                Ev::Migration => {
                    self.on_migration();
                    if let Some(next) = self.exp_after(t, self.p.migration_rate) {
                        self.push(next, Ev::Migration);
                    }
                }
                Ev::Coord => {
                    if let Some(f) = self.pick_floor(3) {
                        self.floors[f].coord_due = true;
                    }
                    if let Some(next) = self.exp_after(t, self.p.coord_rate) {
                        self.push(next, Ev::Coord);
                    }
                }
                Ev::Aside => {
                    if let Some(f) = self.pick_floor(3) {
                        self.floors[f].aside_due = true;
                    }
                    if let Some(next) = self.exp_after(t, self.p.aside_rate) {
                        self.push(next, Ev::Aside);
                    }
                }
                Ev::SitFire => self.on_sit_fire(t),
            }
        }
        self.finish()
    }

    /// Uniform alive floor without a pending schism and with enough members.
    fn pick_floor(&mut self, min_members: usize) -> Option<usize> {
        let cands: Vec<usize> = (0..self.floors.len())
            .filter(|&f| {
                let fl = &self.floors[f];
                fl.alive && fl.pending.is_none() && fl.members.len() >= min_members
            })
            .collect();
        if cands.is_empty() {
            None
        } else {
            Some(cands[self.rng.random_range(0..cands.len())])
        }
    }

    fn sample_gap(&mut self) -> f64 {
        loop {
            let g = self.gap.sample(&mut self.rng);
            if g >= -0.3 {
                return g;
            }
        }
    }

    fn free_at(&self, who: usize, t: f64) -> bool {
        self.busy[who] + 0.25 <= t
    }

    fn pending_pair(&self, f: usize) -> [Option<usize>; 2] {
        match self.floors[f].pending {
            Some(p) => [Some(p.init), Some(p.resp)],
            None => [None, None],
        }
    }

    /// Produces one turn as a run of talkspurts and returns its spurts.
    fn speak(&mut self, who: usize, floor: FloorId, t0: f64, length: f64, level_offset: f64) -> Vec<(f64, f64)> {
        let t0 = round_ms(t0);
        let end = round_ms((t0 + length.max(0.4)).min(self.span - 0.01));
        let mut spurts = Vec::new();
        if end - t0 < MIN_SEGMENT {
            return spurts;
        }
        let mut a = t0;
        loop {
            let d = self.spurt_len.sample(&mut self.rng).clamp(0.25, 4.0);
            let mut b = round_ms(a + d);
            if end - b < 0.7 {
                b = end;
            }
            spurts.push((a, b));
            if b >= end {
                break;
            }
            a = round_ms(b + self.rng.random_range(0.25..0.45));
        }
        let base = self.level[who] + level_offset;
        for &(a, b) in &spurts {
            let e_mean = base + self.rng.random_range(-1.0..1.0);
            let e_peak = e_mean + self.rng.random_range(3.0..6.0);
            self.segments.push(VadSegment {
                participant: self.names[who].clone(),
                t0: a,
                t1: b,
                e_mean,
                e_peak,
            });
        }
        let t1 = spurts.last().map_or(t0, |s| s.1);
        self.busy[who] = t1;
        self.turns.push((who, floor, t0, t1));
        let fi = self.floor_index(floor);
        self.floors[fi].last_end = self.floors[fi].last_end.max(t1);
        let span = self.counters.floor_spans.entry(floor).or_insert((t0, t1));
        span.0 = span.0.min(t0);
        span.1 = span.1.max(t1);
        spurts
    }

    fn floor_index(&self, id: FloorId) -> usize {
        (id.0 - 1) as usize
    }

    fn on_turn(&mut self, f: usize, t: f64) {
        if !self.floors[f].alive || t >= self.span - 0.5 {
            return;
        }
        if self.hold.is_some() {
            if !self.held.contains(&f) {
                self.held.push(f);
            }
            return;
        }

        if let Some(p) = self.floors[f].pending {
            if matches!(p.kind, TrueKind::TossOut | TrueKind::Retro)
                && self.busy[p.init] + INITIATOR_SILENCE <= t
                && self.busy[p.resp] <= t
            {
                self.initiate(f, p, t);
                return;
            }
        }

        if self.floors[f].coord_due && self.floors[f].pending.is_none() {
            let free: Vec<usize> = self.floors[f]
                .members
                .iter()
                .copied()
                .filter(|&m| self.busy[m] + COORD_QUIET <= t)
                .collect();
            if free.len() >= 3 {
                self.coord_burst(f, &free, t);
                return;
            }
        }

        let Some((who, start)) = self.pick_speaker(f, t) else {
            let wake = self.floors[f]
                .members
                .iter()
                .map(|&m| self.busy[m] + 0.3)
                .fold(f64::INFINITY, f64::min)
                .max(t + 0.1);
            self.push(wake, Ev::Turn(f));
            return;
        };
        let id = self.floors[f].id;
        let len = self.turn_len.sample(&mut self.rng).clamp(0.4, 12.0);
        let spurts = self.speak(who, id, start, len, 0.0);
        self.floors[f].last_speaker = Some(who);
        let Some(&(s0, s1)) = spurts.first() else { return };
        let end = spurts.last().map_or(start, |s| s.1);

        // an aside lands inside the current speaker's first spurt
        let aside_at = round_ms(s0 + (s1 - s0) * self.rng.random_range(0.2..0.6));
        let mut next = end + self.sample_gap();
        if let Some(p) = self.floors[f].pending {
            if p.kind == TrueKind::Aside
                && self.busy[p.init] + INITIATOR_SILENCE <= aside_at
                && self.busy[p.resp] <= aside_at
            {
                self.initiate(f, p, aside_at);
            }
        } else if self.floors[f].aside_due {
            let cands: Vec<usize> = self.floors[f]
                .members
                .iter()
                .copied()
                .filter(|&m| m != who && self.busy[m] + INITIATOR_SILENCE <= aside_at)
                .collect();
            if !cands.is_empty() {
                let y = cands[self.rng.random_range(0..cands.len())];
                let len = self.aside_len.sample(&mut self.rng).clamp(0.6, 3.0);
                let drop = self.p.aside_drop;
                let sp = self.speak(y, id, aside_at, len, -drop);
                if let Some(first) = sp.first() {
                    self.injected.push(InjectedEvent {
                        kind: TrueKind::Aside,
                        t: first.0,
                        t_response: None,
                        initiator: self.names[y].clone(),
                        responders: Vec::new(),
                        schism: false,
                        floor: None,
                        parent: Some(id),
                    });
                    next = next.max(sp.last().map_or(next, |s| s.1) + 0.1);
                }
                self.floors[f].aside_due = false;
            }
        }
        self.push(next.max(t + 0.05), Ev::Turn(f));
    }

    fn pick_speaker(&mut self, f: usize, t: f64) -> Option<(usize, f64)> {
        let excl = self.pending_pair(f);
        let last = self.floors[f].last_speaker;
        let avail: Vec<usize> = self.floors[f]
            .members
            .iter()
            .copied()
            .filter(|m| !excl.contains(&Some(*m)) && self.free_at(*m, t))
            .collect();
        if avail.is_empty() {
            return None;
        }
        let others: Vec<usize> = avail.iter().copied().filter(|m| Some(*m) != last).collect();
        let continue_self = last.is_some_and(|l| avail.contains(&l))
            && (others.is_empty() || self.rng.random::<f64>() < self.p.self_continuation);
        if continue_self {
            let l = last.expect("checked");
            let start = t.max(self.busy[l] + MIN_SELF_PAUSE + self.rng.random_range(0.0..0.6));
            Some((l, start))
        } else {
            Some((others[self.rng.random_range(0..others.len())], t))
        }
    }

    fn coord_burst(&mut self, f: usize, free: &[usize], t: f64) {
        let id = self.floors[f].id;
        let base: f64 = self.rng.random_range(1.0..2.5);
        let mut onsets: Vec<(f64, usize)> = free
            .iter()
            .map(|&m| (round_ms(t + self.rng.random_range(0.0..0.3)), m))
            .collect();
        onsets.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut end = t;
        for &(o, m) in &onsets {
            let d = (base * self.rng.random_range(0.8..1.2)).clamp(1.0, 2.9);
            let t0 = round_ms(o);
            let t1 = round_ms((t0 + d).min(self.span - 0.01));
            if t1 - t0 < MIN_SEGMENT {
                continue;
            }
            let e_mean = self.level[m] + self.rng.random_range(-1.0..1.0);
            self.segments.push(VadSegment {
                participant: self.names[m].clone(),
                t0,
                t1,
                e_mean,
                e_peak: e_mean + self.rng.random_range(3.0..6.0),
            });
            self.busy[m] = t1;
            self.turns.push((m, id, t0, t1));
            let span = self.counters.floor_spans.entry(id).or_insert((t0, t1));
            span.0 = span.0.min(t0);
            span.1 = span.1.max(t1);
            self.floors[f].last_end = self.floors[f].last_end.max(t1);
            end = end.max(t1);
        }
        let first = onsets[0];
        self.injected.push(InjectedEvent {
            kind: TrueKind::Coord,
            t: first.0,
            t_response: None,
            initiator: self.names[first.1].clone(),
            responders: onsets[1..].iter().map(|&(_, m)| self.names[m].clone()).collect(),
            schism: false,
            floor: None,
            parent: Some(id),
        });
        self.floors[f].coord_due = false;
        let gap = self.sample_gap().max(COORD_QUIET);
        self.push(end + gap, Ev::Turn(f));
    }

    /// Floors counted against the concurrency cap at `t`.
    fn occupied(&self, t: f64) -> usize {
        self.floors.iter().filter(|f| f.alive || f.last_end > t).count()
            + self.floors.iter().filter(|f| f.alive && f.pending.is_some()).count()
    }

    fn on_attempt(&mut self, t: f64) {
        self.counters.attempts += 1;
        let eligible: Vec<usize> = (0..self.floors.len())
            .filter(|&f| {
                let fl = &self.floors[f];
                fl.alive && fl.pending.is_none() && fl.members.len() >= 4
            })
            .collect();
        if eligible.is_empty() || self.occupied(t) >= self.p.max_concurrent_floors || self.hold.is_some() {
            self.deferred += 1;
            self.counters.deferred_attempts += 1;
            return;
        }
        let f = eligible[self.rng.random_range(0..eligible.len())];
        let kind = if self.rng.random::<f64>() < self.p.sit_fraction {
            TrueKind::Sit
        } else {
            [TrueKind::TossOut, TrueKind::Aside, TrueKind::Retro][self.rng.random_range(0..3)]
        };
        let members: Vec<usize> = self.floors[f].members.iter().copied().collect();
        let i = self.rng.random_range(0..members.len());
        let mut j = self.rng.random_range(0..members.len() - 1);
        if j >= i {
            j += 1;
        }
        let p = Pending {
            kind,
            init: members[i],
            resp: members[j],
        };
        self.floors[f].pending = Some(p);
        if kind == TrueKind::Sit {
            self.hold = Some(f);
            self.schedule_sit(t);
        }
    }

    fn schedule_sit(&mut self, t: f64) {
        let Some(f) = self.hold else { return };
        let Some(p) = self.floors[f].pending else { return };
        let quiet = self.busy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let at = t
            .max(quiet + self.rng.random_range(0.1..0.3))
            .max(self.busy[p.init] + INITIATOR_SILENCE);
        if at >= self.span - 1.0 {
            self.release_hold(t);
            self.floors[f].pending = None;
            return;
        }
        self.push(at, Ev::SitFire);
    }

    fn on_sit_fire(&mut self, t: f64) {
        let Some(f) = self.hold else { return };
        let Some(p) = self.floors[f].pending else {
            self.release_hold(t);
            return;
        };
        let quiet = self.busy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if quiet >= t || self.busy[p.init] + INITIATOR_SILENCE > t {
            self.schedule_sit(t);
            return;
        }
        self.initiate(f, p, t);
    }

    fn release_hold(&mut self, t: f64) {
        self.hold = None;
        let held = std::mem::take(&mut self.held);
        for f in held {
            let d = self.rng.random_range(0.3..1.0);
            self.push(t + d, Ev::Turn(f));
        }
    }

    /// Realizes a pending schism: the initiating turn at `t`, then the
    /// response, then a new floor of the pair.
    fn initiate(&mut self, f: usize, p: Pending, t: f64) {
        let parent_id = self.floors[f].id;
        let id = FloorId(self.floors.len() as u32 + 1);
        self.floors[f].members.remove(&p.init);
        self.floors[f].members.remove(&p.resp);
        self.floors[f].pending = None;
        self.floors.push(Floor {
            id,
            members: [p.init, p.resp].into_iter().collect(),
            parent: Some(f),
            alive: true,
            last_speaker: None,
            last_end: t,
            pending: None,
            coord_due: false,
            aside_due: false,
        });
        let nf = self.floors.len() - 1;
        self.assign[p.init] = nf;
        self.assign[p.resp] = nf;

        let (len, offset) = match p.kind {
            TrueKind::Aside => (self.aside_len.sample(&mut self.rng).clamp(0.6, 3.0), -self.p.aside_drop),
            _ => (self.turn_len.sample(&mut self.rng).clamp(0.6, 6.0), 0.0),
        };
        let init_spurts = self.speak(p.init, id, t, len, offset);
        let t_init = init_spurts.first().map_or(t, |s| s.0);
        let init_end = init_spurts.last().map_or(t, |s| s.1);
        if p.kind == TrueKind::Sit {
            let reps = self.rng.random_range(2..=3);
            for k in 0..reps {
                let a = round_ms(t_init + 0.05 + 0.35 * k as f64);
                self.tokens.push(TokenAnnotation {
                    participant: self.names[p.init].clone(),
                    t0: a,
                    t1: round_ms(a + 0.3),
                    text: self.names[p.resp].to_string(),
                    is_address: true,
                });
            }
        }
        let resp_gap = match p.kind {
            TrueKind::Retro => self.rng.random_range(0.3..0.8),
            _ => self.rng.random_range(0.1..0.6),
        };
        let len = self.turn_len.sample(&mut self.rng).clamp(0.6, 8.0);
        let resp_spurts = self.speak(p.resp, id, init_end + resp_gap, len, 0.0);
        let t_resp = resp_spurts.first().map_or(init_end, |s| s.0);
        let resp_end = resp_spurts.last().map_or(init_end, |s| s.1);
        self.floors[nf].last_speaker = Some(p.resp);
        self.counters.schisms += 1;

        self.injected.push(InjectedEvent {
            kind: p.kind,
            t: t_init,
            t_response: Some(t_resp),
            initiator: self.names[p.init].clone(),
            responders: vec![self.names[p.resp].clone()],
            schism: true,
            floor: Some(id),
            parent: Some(parent_id),
        });

        let life = self.lifetime.sample(&mut self.rng);
        self.push(t_init + life, Ev::Death(nf));
        let g = self.sample_gap().max(0.05);
        self.push(resp_end + g, Ev::Turn(nf));

        // the parent floor carries on over the new pair
        match p.kind {
            TrueKind::Sit => self.release_hold(t_init),
            TrueKind::Retro => {
                let g = self.rng.random_range(0.0..0.15);
                self.push(init_end + g, Ev::Turn(f));
            }
            TrueKind::TossOut => {
                let g = self.sample_gap().max(0.05);
                self.push(init_end + g, Ev::Turn(f));
            }
            TrueKind::Aside | TrueKind::Coord => {}
        }
    }

    fn on_death(&mut self, f: usize, t: f64) {
        if !self.floors[f].alive || f == 0 {
            return;
        }
        let target = match self.floors[f].parent {
            Some(p) if self.floors[p].alive => p,
            _ => (0..self.floors.len()).find(|&g| g != f && self.floors[g].alive).unwrap_or(0),
        };
        if self.hold == Some(f) {
            self.floors[f].pending = None;
            self.release_hold(t);
        }
        self.floors[f].pending = None;
        self.floors[f].alive = false;
        let members = std::mem::take(&mut self.floors[f].members);
        for m in members {
            self.assign[m] = target;
            self.floors[target].members.insert(m);
        }
        if self.deferred > 0 {
            self.deferred -= 1;
            let d = self.rng.random_range(1.0..5.0);
            self.push(t + d, Ev::Retry);
        }
    }

    fn on_migration(&mut self) {
        let alive: Vec<usize> = (0..self.floors.len()).filter(|&f| self.floors[f].alive).collect();
        if alive.len() < 2 {
            return;
        }
        let cands: Vec<usize> = (0..self.assign.len())
            .filter(|&m| {
                let f = self.assign[m];
                let fl = &self.floors[f];
                let reserved = if fl.pending.is_some() { 2 } else { 0 };
                !self.pending_pair(f).contains(&Some(m)) && fl.members.len() >= 3 + reserved
            })
            .collect();
        if cands.is_empty() {
            return;
        }
        let m = cands[self.rng.random_range(0..cands.len())];
        let from = self.assign[m];
        let dests: Vec<usize> = alive.into_iter().filter(|&f| f != from).collect();
        let to = dests[self.rng.random_range(0..dests.len())];
        self.floors[from].members.remove(&m);
        self.floors[to].members.insert(m);
        self.assign[m] = to;
    }

    fn finish(mut self) -> SimSession {
        self.counters.floors = self.counters.floor_spans.len();
        let mut per: BTreeMap<usize, Vec<(FloorId, f64, f64)>> = BTreeMap::new();
        for &(who, floor, t0, t1) in &self.turns {
            per.entry(who).or_default().push((floor, t0, t1));
        }
        let mut labels = Vec::new();
        for (who, mut turns) in per {
            turns.sort_by(|a, b| a.1.total_cmp(&b.1));
            let mut b = LabelBuilder::default();
            for (floor, t0, t1) in turns {
                b.push(&self.names[who], floor, t0, t0, t1);
            }
            labels.extend(b.drain_closed());
            labels.extend(b.flush());
        }
        labels.sort_by(|a, b| a.participant.cmp(&b.participant).then(a.t0.total_cmp(&b.t0)));
        self.segments
            .sort_by(|a, b| a.t0.total_cmp(&b.t0).then_with(|| a.participant.cmp(&b.participant)));
        self.tokens.sort_by(|a, b| a.t0.total_cmp(&b.t0).then_with(|| a.participant.cmp(&b.participant)));
        self.injected.sort_by(|a, b| a.t.total_cmp(&b.t).then_with(|| a.initiator.cmp(&b.initiator)));
        SimSession {
            preset: self.p.clone(),
            seed: 0,
            participants: self.names,
            segments: self.segments,
            tokens: self.tokens,
            truth: GroundTruth {
                labels,
                injected: self.injected,
                span: self.span,
            },
            counters: self.counters,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{check_stream, validate_label_set};
    use crate::turns::group_segments;

    #[test]
    fn zero_duration_is_empty() {
        let s = simulate_session(&preset("youth").unwrap(), 0.0, 1).unwrap();
        assert!(s.segments.is_empty() && s.truth.labels.is_empty() && s.truth.injected.is_empty());
    }

    #[test]
    fn dyad_has_one_floor() {
        let mut p = preset("pilot").unwrap();
        p.participants = 2;
        let s = simulate_session(&p, 600.0, 3).unwrap();
        let floors: BTreeSet<FloorId> = s.truth.labels.iter().map(|l| l.floor).collect();
        assert_eq!(floors.len(), 1);
        assert_eq!(s.truth.labels.len(), 2);
    }

    #[test]
    fn streams_and_labels_valid() {
        let s = simulate_session(&preset("youth").unwrap(), 900.0, 7).unwrap();
        for stream in group_segments(s.segments.clone()).values() {
            check_stream(stream).unwrap();
        }
        assert!(validate_label_set(&s.truth.labels, s.truth.span).is_empty());
        for ev in s.truth.injected.iter().filter(|e| e.kind == TrueKind::Sit) {
            assert!(s.tokens.iter().any(|t| t.participant == ev.initiator && (t.t0 - ev.t).abs() < 0.1));
        }
    }

    #[test]
    fn seed_determinism() {
        let p = preset("youth").unwrap();
        let a = simulate_session(&p, 600.0, 11).unwrap();
        let b = simulate_session(&p, 600.0, 11).unwrap();
        assert_eq!(a.segments, b.segments);
        assert_eq!(a.truth, b.truth);
    }
}
