//! Per-listener gain matrices from a floor partition.
//!
//! Listeners hear their own floor at full gain and everything else at
//! `cross_floor_gain`. A secondary participant's aside is routed at full
//! gain to the other secondary members of its floor only, until the aside
//! turn ends.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::engine::Partition;
use crate::error::{Error, Result};
use crate::model::{AffiliationInterval, CueKind, FloorId, ParticipantId, SchismCue, Turn, VadSegment};
use crate::turns::{voiced_in, Window};

pub const DEFAULT_CROSS_FLOOR_GAIN: f64 = 0.125;
pub const DEFAULT_ROLE_HORIZON: f64 = 60.0;
/// Share of the floor's top speaker's voiced time that makes a member primary.
pub const PRIMARY_SHARE: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixerParams {
    pub cross_floor_gain: f64,
    pub role_horizon: f64,
}

impl Default for MixerParams {
    fn default() -> Self {
        Self {
            cross_floor_gain: DEFAULT_CROSS_FLOOR_GAIN,
            role_horizon: DEFAULT_ROLE_HORIZON,
        }
    }
}

impl MixerParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.cross_floor_gain) {
            return Err(Error::InvalidParams {
                name: "cross_floor_gain",
                reason: format!("{} not in [0, 1)", self.cross_floor_gain),
            });
        }
        if !(self.role_horizon > 0.0 && self.role_horizon.is_finite()) {
            return Err(Error::InvalidParams {
                name: "role_horizon",
                reason: format!("{} must be positive", self.role_horizon),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    Primary,
    Secondary,
}

pub type RoleMap = BTreeMap<ParticipantId, Role>;

/// Listener-by-speaker gains over a fixed participant order.
#[derive(Debug, Clone, PartialEq)]
pub struct GainMatrix {
    participants: Vec<ParticipantId>,
    index: BTreeMap<ParticipantId, usize>,
    gains: Vec<f64>,
}

impl GainMatrix {
    fn filled(participants: Vec<ParticipantId>, value: f64) -> Self {
        let n = participants.len();
        let index = participants.iter().cloned().enumerate().map(|(i, p)| (p, i)).collect();
        let mut gains = vec![value; n * n];
        for i in 0..n {
            gains[i * n + i] = 0.0;
        }
        Self {
            participants,
            index,
            gains,
        }
    }

    pub fn participants(&self) -> &[ParticipantId] {
        &self.participants
    }

    /// Gain at which `listener` hears `speaker`; `None` for unknown ids.
    pub fn get(&self, listener: &ParticipantId, speaker: &ParticipantId) -> Option<f64> {
        let (&l, &s) = (self.index.get(listener)?, self.index.get(speaker)?);
        Some(self.gains[l * self.participants.len() + s])
    }

    fn set(&mut self, listener: usize, speaker: usize, g: f64) {
        let n = self.participants.len();
        if listener != speaker {
            self.gains[listener * n + speaker] = g;
        }
    }

    /// (listener, speaker, gain) in participant order, diagonal included.
    pub fn entries(&self) -> impl Iterator<Item = (&ParticipantId, &ParticipantId, f64)> {
        let n = self.participants.len();
        self.gains
            .iter()
            .enumerate()
            .map(move |(k, &g)| (&self.participants[k / n], &self.participants[k % n], g))
    }
}

/// Voiced seconds per participant within `[now - horizon, now]`.
pub fn recent_voiced(segments: &[VadSegment], now: f64, horizon: f64) -> BTreeMap<ParticipantId, f64> {
    let w = Window::new(now - horizon, now);
    let mut out: BTreeMap<ParticipantId, f64> = BTreeMap::new();
    for s in segments.iter().filter(|s| s.t1 > w.t0 && s.t0 < w.t1) {
        *out.entry(s.participant.clone()).or_default() += voiced_in(std::slice::from_ref(s), w);
    }
    out
}

/// Primary members are those with voiced time of at least [`PRIMARY_SHARE`]
/// of their floor's top speaker; silent members are always secondary.
pub fn classify_roles(partition: &Partition, voiced: &BTreeMap<ParticipantId, f64>) -> RoleMap {
    let time = |p: &ParticipantId| voiced.get(p).copied().unwrap_or(0.0);
    let mut top: BTreeMap<FloorId, f64> = BTreeMap::new();
    for (p, f) in partition {
        if let Some(f) = f {
            let t = top.entry(*f).or_default();
            *t = t.max(time(p));
        }
    }
    partition
        .iter()
        .filter_map(|(p, f)| {
            let top = top[&(*f)?];
            let v = time(p);
            let role = if v > 0.0 && v >= PRIMARY_SHARE * top {
                Role::Primary
            } else {
                Role::Secondary
            };
            Some((p.clone(), role))
        })
        .collect()
}

pub fn compute_gain_matrix(partition: &Partition, params: &MixerParams) -> Result<GainMatrix> {
    params.validate()?;
    let floors: Vec<Option<FloorId>> = partition.values().copied().collect();
    let mut m = GainMatrix::filled(partition.keys().cloned().collect(), params.cross_floor_gain);
    for (l, fl) in floors.iter().enumerate() {
        for (s, fs) in floors.iter().enumerate() {
            if fl.is_some() && fl == fs {
                m.set(l, s, 1.0);
            }
        }
    }
    Ok(m)
}

/// Applies an ASIDE override: a secondary initiator is heard at full gain by
/// the secondary members of its floor and at `cross_floor_gain` by the
/// primary ones. Anything else leaves the matrix unchanged.
pub fn route_aside(
    matrix: &GainMatrix,
    aside: &SchismCue,
    roles: &RoleMap,
    partition: &Partition,
    params: &MixerParams,
) -> GainMatrix {
    let mut out = matrix.clone();
    if aside.kind != CueKind::Aside || roles.get(&aside.initiator) != Some(&Role::Secondary) {
        return out;
    }
    let (Some(Some(floor)), Some(&s)) = (partition.get(&aside.initiator), matrix.index.get(&aside.initiator)) else {
        return out;
    };
    for (p, f) in partition {
        if f.as_ref() != Some(floor) || *p == aside.initiator {
            continue;
        }
        let Some(&l) = matrix.index.get(p) else { continue };
        let g = match roles.get(p) {
            Some(Role::Secondary) => 1.0,
            _ => params.cross_floor_gain,
        };
        out.set(l, s, g);
    }
    out
}

/// One gain-CSV row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainRow {
    pub listener: ParticipantId,
    pub speaker: ParticipantId,
    pub gain: f64,
    pub t_effective: f64,
}

/// An aside routed until `until`.
#[derive(Debug, Clone, PartialEq)]
pub struct AsideOverride {
    pub cue: SchismCue,
    pub until: f64,
}

/// Partition changes implied by labels: a participant joins a floor at the
/// start of each interval and stays there until the next one.
pub fn changes_from_labels(labels: &[AffiliationInterval]) -> Vec<(f64, ParticipantId, Option<FloorId>)> {
    let mut v: Vec<(f64, ParticipantId, Option<FloorId>)> =
        labels.iter().map(|l| (l.t0, l.participant.clone(), Some(l.floor))).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    v
}

/// Overrides for the ASIDE cues among `cues`, each lasting until the end of
/// the initiator's turn that contains the cue.
pub fn aside_overrides(cues: &[SchismCue], turns: &[Turn]) -> Vec<AsideOverride> {
    cues.iter()
        .filter(|c| c.kind == CueKind::Aside)
        .filter_map(|c| {
            let turn = turns
                .iter()
                .find(|t| t.participant == c.initiator && t.t0 <= c.t + 1e-9 && c.t < t.t1)?;
            Some(AsideOverride {
                cue: c.clone(),
                until: turn.t1,
            })
        })
        .collect()
}

/// Gain changes over a partition timeline. `changes` holds
/// (time, participant, floor) assignments in time order; roles are
/// re-evaluated at every change point. Rows are emitted for the full matrix
/// at the first point and for changed entries afterwards.
pub fn gain_timeline(
    participants: &[ParticipantId],
    changes: &[(f64, ParticipantId, Option<FloorId>)],
    segments: &[VadSegment],
    asides: &[AsideOverride],
    params: &MixerParams,
) -> Result<Vec<GainRow>> {
    params.validate()?;
    let mut partition: Partition = participants.iter().map(|p| (p.clone(), None)).collect();
    let mut points: Vec<f64> = changes.iter().map(|c| c.0).collect();
    points.extend(asides.iter().flat_map(|a| [a.cue.t, a.until]));
    points.push(0.0);
    points.sort_by(f64::total_cmp);
    points.dedup();

    let mut rows = Vec::new();
    let mut prev: Option<GainMatrix> = None;
    let mut k = 0;
    for t in points {
        while k < changes.len() && changes[k].0 <= t {
            let (_, p, f) = &changes[k];
            if let Some(slot) = partition.get_mut(p) {
                *slot = *f;
            }
            k += 1;
        }
        let roles = classify_roles(&partition, &recent_voiced(segments, t, params.role_horizon));
        let mut m = compute_gain_matrix(&partition, params)?;
        for a in asides.iter().filter(|a| a.cue.t <= t && t < a.until) {
            m = route_aside(&m, &a.cue, &roles, &partition, params);
        }
        for ((l, s, g), old) in m.entries().zip(
            prev.as_ref()
                .map(|p| p.entries().map(|e| Some(e.2)).collect::<Vec<_>>())
                .unwrap_or_else(|| vec![None; participants.len().pow(2)]),
        ) {
            if l != s && old != Some(g) {
                rows.push(GainRow {
                    listener: l.clone(),
                    speaker: s.clone(),
                    gain: g,
                    t_effective: t,
                });
            }
        }
        prev = Some(m);
    }
    Ok(rows)
}
