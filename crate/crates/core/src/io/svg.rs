//! VAD diagrams: one lane per participant, one bar per voiced segment,
//! colored by floor when labels are supplied.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::{AffiliationInterval, ParticipantId, VadSegment};

pub const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
pub const UNLABELED: &str = "#b0b0b0";
const UNCOLORED: &str = "#404040";
const PX_PER_S: f64 = 4.0;
const LANE: f64 = 20.0;
const LEFT: f64 = 80.0;
const TOP: f64 = 10.0;
const AXIS: f64 = 30.0;
const TICK: f64 = 10.0;

fn px(v: f64) -> String {
    format!("{v:.2}")
}

/// Renders `[0, span]`. Lanes follow participant id order; a segment takes
/// the color of the label covering its midpoint.
pub fn render_vad_diagram(
    participants: &[ParticipantId],
    segments: &[VadSegment],
    labels: Option<&[AffiliationInterval]>,
    span: f64,
) -> Result<String> {
    if !(span.is_finite() && span > 0.0) {
        return Err(Error::InvalidParams {
            name: "span",
            reason: format!("{span} must be positive"),
        });
    }
    let mut lanes: Vec<&ParticipantId> = participants.iter().collect();
    lanes.sort();
    lanes.dedup();
    let row: BTreeMap<&ParticipantId, usize> = lanes.iter().enumerate().map(|(i, p)| (*p, i)).collect();
    let mut by_who: BTreeMap<&ParticipantId, Vec<&AffiliationInterval>> = BTreeMap::new();
    for l in labels.unwrap_or(&[]) {
        by_who.entry(&l.participant).or_default().push(l);
    }

    let width = LEFT + span * PX_PER_S + 10.0;
    let plot_h = lanes.len() as f64 * LANE;
    let height = TOP + plot_h + AXIS;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">",
        px(width),
        px(height),
        px(width),
        px(height)
    );
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>");
    for (i, p) in lanes.iter().enumerate() {
        let y = TOP + i as f64 * LANE;
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"12\" text-anchor=\"end\">{}</text>",
            px(LEFT - 6.0),
            px(y + LANE * 0.7),
            escape(p.as_str())
        );
    }

    let mut segs: Vec<&VadSegment> = segments.iter().filter(|g| row.contains_key(&g.participant)).collect();
    segs.sort_by(|a, b| a.participant.cmp(&b.participant).then(a.t0.total_cmp(&b.t0)));
    for g in segs {
        let (t0, t1) = (g.t0.max(0.0), g.t1.min(span));
        if t1 <= t0 {
            continue;
        }
        let fill = match labels {
            None => UNCOLORED,
            Some(_) => {
                let mid = (g.t0 + g.t1) / 2.0;
                by_who
                    .get(&g.participant)
                    .and_then(|ls| ls.iter().find(|l| l.t0 <= mid && mid < l.t1))
                    .map_or(UNLABELED, |l| PALETTE[(l.floor.0.max(1) as usize - 1) % PALETTE.len()])
            }
        };
        let y = TOP + row[&g.participant] as f64 * LANE + 3.0;
        let _ = writeln!(
            s,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{fill}\"/>",
            px(LEFT + t0 * PX_PER_S),
            px(y),
            px((t1 - t0) * PX_PER_S),
            px(LANE - 6.0)
        );
    }

    let axis_y = TOP + plot_h;
    let _ = writeln!(
        s,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#000000\"/>",
        px(LEFT),
        px(axis_y),
        px(LEFT + span * PX_PER_S),
        px(axis_y)
    );
    let ticks = (span / TICK).floor() as usize;
    for k in 0..=ticks {
        let t = k as f64 * TICK;
        let x = LEFT + t * PX_PER_S;
        let _ = writeln!(
            s,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#000000\"/>",
            px(x),
            px(axis_y),
            px(x),
            px(axis_y + 5.0)
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"10\" text-anchor=\"middle\">{}</text>",
            px(x),
            px(axis_y + 17.0),
            t as u64
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
