//! On-disk formats: JSONL streams, label CSV and session bundles.
//!
//! Writers sort their input and print times with three decimals, so equal
//! data gives equal bytes. Readers report the line of the first malformed
//! record and validate what they return.

pub mod config;
pub mod svg;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::engine::EngineEvent;
use crate::error::{Error, Result};
use crate::model::{
    check_stream, validate_label_set, AffiliationInterval, FloorId, ParticipantId, SchismCue, TokenAnnotation,
    VadSegment,
};
use crate::sim::{InjectedEvent, SimSession};
use crate::turns::group_segments;

pub const SEGMENTS_FILE: &str = "segments.jsonl";
pub const TOKENS_FILE: &str = "tokens.jsonl";
pub const CUES_FILE: &str = "cues.jsonl";
pub const TRUTH_FILE: &str = "truth.csv";
pub const INJECTED_FILE: &str = "injected.jsonl";
pub const META_FILE: &str = "meta.json";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const LABELS_FILE: &str = "labels.csv";

/// Three-decimal fixed notation without a negative zero.
pub fn fx(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".to_string()
    } else {
        s
    }
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}

fn parse_lines<T: DeserializeOwned>(text: &str, path: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_string(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

fn read_text(path: &Path) -> Result<String> {
    Ok(fs::read_to_string(path)?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentRow {
    p: ParticipantId,
    t0: f64,
    t1: f64,
    e_mean: f64,
    e_peak: f64,
}

pub fn format_segments(segments: &[VadSegment]) -> String {
    let mut v: Vec<&VadSegment> = segments.iter().collect();
    v.sort_by(|a, b| a.t0.total_cmp(&b.t0).then_with(|| a.participant.cmp(&b.participant)));
    let mut out = String::new();
    for s in v {
        let _ = writeln!(
            out,
            "{{\"p\":{},\"t0\":{},\"t1\":{},\"e_mean\":{},\"e_peak\":{}}}",
            json_str(s.participant.as_str()),
            fx(s.t0),
            fx(s.t1),
            fx(s.e_mean),
            fx(s.e_peak)
        );
    }
    out
}

/// Parses segment JSONL and checks every participant's stream.
pub fn parse_segments(text: &str, path: &str) -> Result<Vec<VadSegment>> {
    let rows: Vec<SegmentRow> = parse_lines(text, path)?;
    let segments: Vec<VadSegment> = rows
        .into_iter()
        .map(|r| VadSegment {
            participant: r.p,
            t0: r.t0,
            t1: r.t1,
            e_mean: r.e_mean,
            e_peak: r.e_peak,
        })
        .collect();
    for stream in group_segments(segments.iter().cloned()).values() {
        check_stream(stream)?;
    }
    Ok(segments)
}

pub fn write_segments(path: &Path, segments: &[VadSegment]) -> Result<()> {
    Ok(fs::write(path, format_segments(segments))?)
}

pub fn read_segments(path: &Path) -> Result<Vec<VadSegment>> {
    parse_segments(&read_text(path)?, &path.display().to_string())
}

pub fn format_tokens(tokens: &[TokenAnnotation]) -> String {
    let mut v: Vec<&TokenAnnotation> = tokens.iter().collect();
    v.sort_by(|a, b| a.t0.total_cmp(&b.t0).then_with(|| a.participant.cmp(&b.participant)));
    let mut out = String::new();
    for t in v {
        let _ = writeln!(
            out,
            "{{\"p\":{},\"t0\":{},\"t1\":{},\"text\":{},\"is_address\":{}}}",
            json_str(t.participant.as_str()),
            fx(t.t0),
            fx(t.t1),
            json_str(&t.text),
            t.is_address
        );
    }
    out
}

pub fn parse_tokens(text: &str, path: &str) -> Result<Vec<TokenAnnotation>> {
    let tokens: Vec<TokenAnnotation> = parse_lines(text, path)?;
    if let Some(t) = tokens.iter().find(|t| !(t.t0.is_finite() && t.t1 > t.t0)) {
        return Err(Error::Parse {
            path: path.to_string(),
            line: 0,
            msg: format!("token {:?} at {} has an empty span", t.text, t.t0),
        });
    }
    Ok(tokens)
}

/// Marks tokens whose text is in `lexicon` (case-insensitive) as address
/// terms and clears the flag on the rest.
pub fn apply_lexicon(tokens: &mut [TokenAnnotation], lexicon: &BTreeSet<String>) {
    for t in tokens {
        t.is_address = lexicon.contains(&t.text.trim().to_lowercase());
    }
}

/// One name per line; blank lines and `#` comments are skipped.
pub fn parse_lexicon(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

pub fn format_cues(cues: &[SchismCue]) -> String {
    let mut v: Vec<&SchismCue> = cues.iter().collect();
    v.sort_by(|a, b| {
        a.t.total_cmp(&b.t)
            .then_with(|| a.kind.cmp(&b.kind))
            .then_with(|| a.initiator.cmp(&b.initiator))
    });
    let mut out = String::new();
    for c in v {
        let responders: Vec<String> = c.responders.iter().map(|r| json_str(r.as_str())).collect();
        let _ = writeln!(
            out,
            "{{\"kind\":\"{}\",\"t\":{},\"initiator\":{},\"responders\":[{}],\"strength\":{}}}",
            c.kind,
            fx(c.t),
            json_str(c.initiator.as_str()),
            responders.join(","),
            fx(c.strength)
        );
    }
    out
}

pub fn parse_cues(text: &str, path: &str) -> Result<Vec<SchismCue>> {
    let cues: Vec<SchismCue> = parse_lines(text, path)?;
    if let Some(c) = cues.iter().find(|c| !c.is_valid()) {
        return Err(Error::Parse {
            path: path.to_string(),
            line: 0,
            msg: format!("invalid {} cue at {}", c.kind, c.t),
        });
    }
    Ok(cues)
}

fn round_event(e: &EngineEvent) -> EngineEvent {
    let r = |t: f64| (t * 1000.0).round() / 1000.0 + 0.0;
    match e.clone() {
        EngineEvent::FloorStart {
            t,
            floor,
            members,
            label_start,
        } => EngineEvent::FloorStart {
            t: r(t),
            floor,
            members,
            label_start: r(label_start),
        },
        EngineEvent::FloorEnd { t, floor, merged_into } => EngineEvent::FloorEnd {
            t: r(t),
            floor,
            merged_into,
        },
        EngineEvent::Affiliation {
            t,
            participant,
            from,
            to,
        } => EngineEvent::Affiliation {
            t: r(t),
            participant,
            from,
            to,
        },
    }
}

/// Engine events in emission order, times rounded to milliseconds.
pub fn format_events(events: &[EngineEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(&round_event(e)).expect("events serialize"));
        out.push('\n');
    }
    out
}

/// Floor-start events only; the other kinds are skipped.
pub fn parse_floor_starts(text: &str, path: &str) -> Result<Vec<EngineEvent>> {
    #[derive(Deserialize)]
    #[serde(tag = "type", rename_all = "snake_case")]
    enum Row {
        FloorStart {
            t: f64,
            floor: FloorId,
            members: Vec<ParticipantId>,
            label_start: f64,
        },
        #[serde(other)]
        Other,
    }
    let rows: Vec<Row> = parse_lines(text, path)?;
    Ok(rows
        .into_iter()
        .filter_map(|r| match r {
            Row::FloorStart {
                t,
                floor,
                members,
                label_start,
            } => Some(EngineEvent::FloorStart {
                t,
                floor,
                members,
                label_start,
            }),
            Row::Other => None,
        })
        .collect())
}

pub fn format_injected(events: &[InjectedEvent]) -> String {
    let mut out = String::new();
    for e in events {
        let mut e = e.clone();
        e.t = (e.t * 1000.0).round() / 1000.0;
        e.t_response = e.t_response.map(|t| (t * 1000.0).round() / 1000.0);
        out.push_str(&serde_json::to_string(&e).expect("injected events serialize"));
        out.push('\n');
    }
    out
}

pub fn parse_injected(text: &str, path: &str) -> Result<Vec<InjectedEvent>> {
    parse_lines(text, path)
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    participant: ParticipantId,
    floor: u32,
    t0: f64,
    t1: f64,
}

/// Label CSV sorted by participant then start.
pub fn format_labels(labels: &[AffiliationInterval]) -> Result<String> {
    let mut v: Vec<&AffiliationInterval> = labels.iter().collect();
    v.sort_by(|a, b| a.participant.cmp(&b.participant).then(a.t0.total_cmp(&b.t0)));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["participant", "floor", "t0", "t1"]).map_err(csv_err)?;
    for l in v {
        w.write_record([l.participant.as_str(), &l.floor.0.to_string(), &fx(l.t0), &fx(l.t1)])
            .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Parses label CSV and checks the invariants within `[0, span_end]`.
pub fn parse_labels(text: &str, path: &str, span_end: f64) -> Result<Vec<AffiliationInterval>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = r.headers().map_err(|e| Error::Parse {
        path: path.to_string(),
        line: 1,
        msg: e.to_string(),
    })?;
    if headers != vec!["participant", "floor", "t0", "t1"] {
        return Err(Error::Parse {
            path: path.to_string(),
            line: 1,
            msg: "expected header participant,floor,t0,t1".into(),
        });
    }
    let mut labels = Vec::new();
    for row in r.deserialize::<LabelRow>() {
        let row = row.map_err(|e| Error::Parse {
            path: path.to_string(),
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        labels.push(AffiliationInterval {
            participant: row.participant,
            floor: FloorId(row.floor),
            t0: row.t0,
            t1: row.t1,
        });
    }
    let violations = validate_label_set(&labels, span_end);
    if let Some(v) = violations.first() {
        return Err(Error::InvalidLabels(format!("{v} and {} more", violations.len() - 1)));
    }
    labels.sort_by(|a, b| a.participant.cmp(&b.participant).then(a.t0.total_cmp(&b.t0)));
    Ok(labels)
}

pub fn write_labels(path: &Path, labels: &[AffiliationInterval]) -> Result<()> {
    Ok(fs::write(path, format_labels(labels)?)?)
}

pub fn read_labels(path: &Path, span_end: f64) -> Result<Vec<AffiliationInterval>> {
    parse_labels(&read_text(path)?, &path.display().to_string(), span_end)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub participants: Vec<ParticipantId>,
    /// Session span in seconds, starting at 0.
    pub span: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// A session directory in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionBundle {
    pub meta: Meta,
    pub segments: Vec<VadSegment>,
    pub tokens: Vec<TokenAnnotation>,
    pub cues: Vec<SchismCue>,
    pub truth: Option<Vec<AffiliationInterval>>,
    pub injected: Vec<InjectedEvent>,
}

impl SessionBundle {
    pub fn from_sim(s: &SimSession) -> Self {
        Self {
            meta: Meta {
                participants: s.participants.clone(),
                span: s.truth.span,
                preset: Some(s.preset.name.clone()),
                seed: Some(s.seed),
            },
            segments: s.segments.clone(),
            tokens: s.tokens.clone(),
            cues: Vec::new(),
            truth: Some(s.truth.labels.clone()),
            injected: s.truth.injected.clone(),
        }
    }

    /// Every participant named anywhere is listed in the meta and every
    /// time lies within the span.
    pub fn check(&self) -> Result<()> {
        let known: BTreeSet<&ParticipantId> = self.meta.participants.iter().collect();
        if known.len() != self.meta.participants.len() {
            return Err(Error::InvalidSegments("duplicate participant in meta.json".into()));
        }
        if !(self.meta.span.is_finite() && self.meta.span > 0.0) {
            return Err(Error::InvalidParams {
                name: "span",
                reason: format!("{} must be positive", self.meta.span),
            });
        }
        let named = self
            .segments
            .iter()
            .map(|s| (&s.participant, s.t1))
            .chain(self.tokens.iter().map(|t| (&t.participant, t.t1)))
            .chain(self.cues.iter().map(|c| (&c.initiator, c.t)))
            .chain(self.cues.iter().flat_map(|c| c.responders.iter().map(move |r| (r, c.t))))
            .chain(self.truth.iter().flatten().map(|l| (&l.participant, l.t1)));
        for (p, t) in named {
            if !known.contains(p) {
                return Err(Error::InvalidSegments(format!("participant {p} missing from meta.json")));
            }
            if t > self.meta.span + 1e-3 {
                return Err(Error::InvalidSegments(format!("time {t} beyond span {}", self.meta.span)));
            }
        }
        Ok(())
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        self.check()?;
        fs::create_dir_all(dir)?;
        let meta = serde_json::to_string_pretty(&self.meta).expect("meta serializes");
        fs::write(dir.join(META_FILE), meta + "\n")?;
        write_segments(&dir.join(SEGMENTS_FILE), &self.segments)?;
        if !self.tokens.is_empty() {
            fs::write(dir.join(TOKENS_FILE), format_tokens(&self.tokens))?;
        }
        if !self.cues.is_empty() {
            fs::write(dir.join(CUES_FILE), format_cues(&self.cues))?;
        }
        if let Some(truth) = &self.truth {
            write_labels(&dir.join(TRUTH_FILE), truth)?;
        }
        if !self.injected.is_empty() {
            fs::write(dir.join(INJECTED_FILE), format_injected(&self.injected))?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META_FILE);
        let meta: Meta = serde_json::from_str(&read_text(&meta_path)?).map_err(|e| Error::Parse {
            path: meta_path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        let optional = |name: &str| -> Result<Option<(String, String)>> {
            let p = dir.join(name);
            if p.exists() {
                Ok(Some((read_text(&p)?, p.display().to_string())))
            } else {
                Ok(None)
            }
        };
        let segments = read_segments(&dir.join(SEGMENTS_FILE))?;
        let tokens = match optional(TOKENS_FILE)? {
            Some((t, p)) => parse_tokens(&t, &p)?,
            None => Vec::new(),
        };
        let cues = match optional(CUES_FILE)? {
            Some((t, p)) => parse_cues(&t, &p)?,
            None => Vec::new(),
        };
        let truth = match optional(TRUTH_FILE)? {
            Some((t, p)) => Some(parse_labels(&t, &p, meta.span)?),
            None => None,
        };
        let injected = match optional(INJECTED_FILE)? {
            Some((t, p)) => parse_injected(&t, &p)?,
            None => Vec::new(),
        };
        let bundle = Self {
            meta,
            segments,
            tokens,
            cues,
            truth,
            injected,
        };
        bundle.check()?;
        Ok(bundle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CueKind;
    use proptest::prelude::*;

    fn pid(s: &str) -> ParticipantId {
        ParticipantId::new(s).unwrap()
    }

    fn seg(p: &str, t0: f64, t1: f64) -> VadSegment {
        VadSegment {
            participant: pid(p),
            t0,
            t1,
            e_mean: -20.0,
            e_peak: -14.5,
        }
    }

    #[test]
    fn empty_segments() {
        assert!(parse_segments("", "x").unwrap().is_empty());
        assert_eq!(format_segments(&[]), "");
    }

    #[test]
    fn segment_line_format() {
        let s = format_segments(&[seg("b", 1.0, 2.5), seg("a", 1.0, 1.25)]);
        assert_eq!(
            s,
            "{\"p\":\"a\",\"t0\":1.000,\"t1\":1.250,\"e_mean\":-20.000,\"e_peak\":-14.500}\n\
             {\"p\":\"b\",\"t0\":1.000,\"t1\":2.500,\"e_mean\":-20.000,\"e_peak\":-14.500}\n"
        );
    }

    #[test]
    fn overlapping_segments_rejected() {
        let text = format_segments(&[seg("a", 0.0, 2.0), seg("a", 1.0, 3.0)]);
        assert_eq!(parse_segments(&text, "x").unwrap_err().code(), "INVALID_SEGMENTS");
    }

    #[test]
    fn malformed_line_names_line() {
        let text = format!("{}{{\"p\":\"a\"\n", format_segments(&[seg("a", 0.0, 1.0)]));
        match parse_segments(&text, "f").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn labels_sorted_on_write() {
        let l = |p: &str, f: u32, t0: f64, t1: f64| AffiliationInterval {
            participant: pid(p),
            floor: FloorId(f),
            t0,
            t1,
        };
        let csv = format_labels(&[l("b", 1, 0.0, 1.0), l("a", 2, 5.0, 6.0), l("a", 1, 0.0, 1.0)]).unwrap();
        assert_eq!(
            csv,
            "participant,floor,t0,t1\na,1,0.000,1.000\na,2,5.000,6.000\nb,1,0.000,1.000\n"
        );
        let back = parse_labels(&csv, "x", 10.0).unwrap();
        assert_eq!(format_labels(&back).unwrap(), csv);
    }

    #[test]
    fn overlapping_labels_rejected() {
        let csv = "participant,floor,t0,t1\na,1,0,2\na,2,1,3\n";
        assert_eq!(parse_labels(csv, "x", 10.0).unwrap_err().code(), "INVALID_LABELS");
        assert_eq!(parse_labels("who,floor\n", "x", 10.0).unwrap_err().code(), "PARSE_ERROR");
    }

    #[test]
    fn lexicon_marks_tokens() {
        let lex = parse_lexicon("# names\nAnn\n\nben\n");
        let mut toks = vec![TokenAnnotation {
            participant: pid("c"),
            t0: 0.0,
            t1: 0.3,
            text: "ann".into(),
            is_address: false,
        }];
        apply_lexicon(&mut toks, &lex);
        assert!(toks[0].is_address);
        toks[0].text = "so".into();
        apply_lexicon(&mut toks, &lex);
        assert!(!toks[0].is_address);
    }

    #[test]
    fn cues_round_trip() {
        let c = SchismCue::new(CueKind::Confirm, 3.25, pid("a"), [pid("b")].into(), 0.8);
        let text = format_cues(std::slice::from_ref(&c));
        assert_eq!(parse_cues(&text, "x").unwrap(), vec![c]);
    }

    proptest! {
        #[test]
        fn segments_round_trip(gaps in proptest::collection::vec((1u32..3000, 1u32..3000, 0usize..3), 0..40)) {
            let names = ["a", "b", "c"];
            let mut ends = [0u32; 3];
            let mut segs = Vec::new();
            for (gap, len, who) in gaps {
                let t0 = ends[who] + gap;
                let t1 = t0 + len;
                ends[who] = t1;
                segs.push(VadSegment {
                    participant: pid(names[who]),
                    t0: t0 as f64 / 1000.0,
                    t1: t1 as f64 / 1000.0,
                    e_mean: -30.0 + (len % 7) as f64 * 0.125,
                    e_peak: -20.0,
                });
            }
            let text = format_segments(&segs);
            let back = parse_segments(&text, "x").unwrap();
            prop_assert_eq!(format_segments(&back), text);
            let mut sorted = segs.clone();
            sorted.sort_by(|a, b| a.t0.total_cmp(&b.t0).then_with(|| a.participant.cmp(&b.participant)));
            prop_assert_eq!(back, sorted);
        }
    }
}
