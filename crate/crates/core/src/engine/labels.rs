//! Per-participant label accumulation from finalized turns.

use crate::model::{AffiliationInterval, FloorId, ParticipantId};

/// Consecutive turns in one floor extend a single interval; a turn in a
/// different floor closes it at the previous turn's completion. The next
/// interval starts at `joined`, clamped to the closed interval's end.
#[derive(Debug, Clone, Default)]
pub(crate) struct LabelBuilder {
    open: Option<AffiliationInterval>,
    closed: Vec<AffiliationInterval>,
}

impl LabelBuilder {
    pub(crate) fn push(&mut self, who: &ParticipantId, floor: FloorId, joined: f64, t0: f64, t1: f64) {
        match &mut self.open {
            Some(iv) if iv.floor == floor => iv.t1 = iv.t1.max(t1),
            _ => {
                let mut t0 = joined.min(t0);
                if let Some(iv) = self.open.take() {
                    t0 = t0.max(iv.t1);
                    self.closed.push(iv);
                }
                self.open = Some(AffiliationInterval {
                    participant: who.clone(),
                    floor,
                    t0,
                    t1,
                });
            }
        }
    }

    pub(crate) fn drain_closed(&mut self) -> Vec<AffiliationInterval> {
        std::mem::take(&mut self.closed)
    }

    pub(crate) fn flush(&mut self) -> Option<AffiliationInterval> {
        self.open.take()
    }
}
