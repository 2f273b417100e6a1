//! Acceptance run: one PASS/FAIL line per criterion. Exits non-zero when any
//! criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::Instant;

use floorsight::engine::pipeline::{infer_session, InferOutput, Pipeline, PipelineParams};
use floorsight::engine::EngineEvent;
use floorsight::eval::{
    corpus_stats, cue_prf, detection_latency, floor_spans, frame_pairwise_agreement,
    CUE_MATCH_TOL, DEFAULT_FRAME, DEFAULT_MATCH_WINDOW,
};
use floorsight::io::svg::render_vad_diagram;
use floorsight::io::{format_cues, format_events, format_labels, SessionBundle};
use floorsight::mixer::{classify_roles, compute_gain_matrix, route_aside, MixerParams, Role};
use floorsight::sim::{preset, simulate_session, InjectedEvent, SimSession, TrueKind};
use floorsight::turns::{
    alignment_score, build_turns, group_segments, group_turns, pairwise_overlap_stats, voiced_in, Window,
};
use floorsight::{CueKind, FloorId, ParticipantId, SchismCue, VadSegment};

const HOUR: f64 = 3600.0;
const SEEDS: std::ops::RangeInclusive<u64> = 1..=10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn pid(s: &str) -> ParticipantId {
    ParticipantId::new(s).unwrap()
}

struct Run {
    sim: SimSession,
    out: InferOutput,
}

fn infer(s: &SimSession, no_cues: bool) -> InferOutput {
    let params = PipelineParams {
        no_cues,
        ..PipelineParams::default()
    };
    infer_session(&s.participants, &s.segments, &s.tokens, &[], params).unwrap()
}

fn c1_calibration() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for (name, rate, dur) in [("youth", (47.0, 77.0), 44.0), ("pilot", (9.0, 21.0), 91.0)] {
        let p = preset(name).unwrap();
        let (mut rates, mut durations, mut conc, mut max_c) = (Vec::new(), Vec::new(), Vec::new(), 0usize);
        let mut worst_secs: f64 = 0.0;
        for seed in SEEDS {
            let t = Instant::now();
            let s = simulate_session(&p, HOUR, seed).unwrap();
            worst_secs = worst_secs.max(t.elapsed().as_secs_f64());
            let st = corpus_stats(&s.truth.labels, s.truth.span);
            rates.push(st.floors_per_hour);
            durations.extend(floor_spans(&s.truth.labels).values().map(|(a, b)| b - a));
            conc.push(st.time_weighted_concurrency);
            max_c = max_c.max(st.max_concurrency);
        }
        let mean_rate = rates.iter().sum::<f64>() / rates.len() as f64;
        let med = median(&mut durations);
        let mean_conc = conc.iter().sum::<f64>() / conc.len() as f64;
        let ok = (rate.0..=rate.1).contains(&mean_rate)
            && (med - dur).abs() <= dur * 0.2 + 1e-9
            && (mean_conc - 1.79).abs() <= 0.30
            && max_c <= 4
            && worst_secs <= 5.0;
        pass &= ok;
        lines.push(format!(
            "{name}: floors/h {mean_rate:.1}, median {med:.1} s, concurrency {mean_conc:.3}, max {max_c}, {worst_secs:.3} s/h"
        ));
    }
    outcome(pass, lines.join("; "))
}

fn c2_sit_mix() -> Outcome {
    let p = preset("youth").unwrap();
    let mut schisms: Vec<TrueKind> = Vec::new();
    for seed in 1.. {
        let s = simulate_session(&p, HOUR, seed).unwrap();
        let mut evs: Vec<&InjectedEvent> = s.truth.injected.iter().filter(|e| e.schism).collect();
        evs.sort_by(|a, b| a.t.total_cmp(&b.t));
        schisms.extend(evs.into_iter().map(|e| e.kind));
        if schisms.len() >= 100 {
            break;
        }
    }
    schisms.truncate(100);
    let sit = schisms.iter().filter(|k| **k == TrueKind::Sit).count();
    let frac = sit as f64 / 100.0;
    outcome((frac - 0.176).abs() <= 0.08, format!("{sit}/100 SIT schisms ({frac:.3})"))
}

/// Maximal spans where exactly two truth floors are live.
fn two_floor_spans(s: &SimSession, min_len: f64) -> Vec<(Window, FloorId, FloorId)> {
    let spans = floor_spans(&s.truth.labels);
    let mut edges: Vec<f64> = spans.values().flat_map(|(a, b)| [*a, *b]).collect();
    edges.sort_by(f64::total_cmp);
    edges.dedup();
    let live = |t: f64| -> Vec<FloorId> { spans.iter().filter(|(_, (a, b))| *a <= t && t < *b).map(|(f, _)| *f).collect() };
    let mut out: Vec<(Window, FloorId, FloorId)> = Vec::new();
    for w in edges.windows(2) {
        let fl = live((w[0] + w[1]) / 2.0);
        if fl.len() != 2 {
            continue;
        }
        match out.last_mut() {
            Some((prev, a, b)) if prev.t1 == w[0] && *a == fl[0] && *b == fl[1] => prev.t1 = w[1],
            _ => out.push((Window::new(w[0], w[1]), fl[0], fl[1])),
        }
    }
    out.retain(|(w, _, _)| w.len() >= min_len);
    out
}

/// Pair means are pooled over a session's two-floor spans of at least 60 s;
/// the separation must hold in every session. Single spans are tallied too.
fn c3_p5_separation() -> Outcome {
    let p = preset("youth").unwrap();
    let (mut sessions, mut sessions_ok) = (0usize, 0usize);
    let (mut spans_n, mut spans_ok) = (0usize, 0usize);
    let mut failed = Vec::new();
    for seed in SEEDS {
        let s = simulate_session(&p, HOUR, seed).unwrap();
        let streams = group_segments(s.segments.iter().cloned());
        let turns = group_turns(build_turns(&streams, 0.5));
        let empty_s = Vec::new();
        let empty_t = Vec::new();
        // (overlap sum, alignment sum, pairs) for within- and cross-floor pairs
        let (mut sw, mut sx) = ((0.0, 0.0, 0usize), (0.0, 0.0, 0usize));
        for (w, fa, fb) in two_floor_spans(&s, 60.0) {
            // members affiliated with exactly one of the two floors during the span
            let mut member: BTreeMap<&ParticipantId, BTreeSet<FloorId>> = BTreeMap::new();
            for l in &s.truth.labels {
                if l.t1 > w.t0 && l.t0 < w.t1 {
                    member.entry(&l.participant).or_default().insert(l.floor);
                }
            }
            let side: Vec<(&ParticipantId, FloorId)> = member
                .into_iter()
                .filter(|(_, fs)| fs.len() == 1)
                .map(|(p, fs)| (p, *fs.iter().next().unwrap()))
                .filter(|(_, f)| *f == fa || *f == fb)
                .collect();
            let (mut within, mut cross) = ((0.0, 0.0, 0usize), (0.0, 0.0, 0usize));
            for (i, (a, f)) in side.iter().enumerate() {
                for (b, g) in &side[i + 1..] {
                    let sa = streams.get(*a).unwrap_or(&empty_s);
                    let sb = streams.get(*b).unwrap_or(&empty_s);
                    // overlap_frac is undefined unless both members speak in the span
                    if voiced_in(sa, w) == 0.0 || voiced_in(sb, w) == 0.0 {
                        continue;
                    }
                    let ov = pairwise_overlap_stats(sa, sb, w).overlap_frac;
                    let al = alignment_score(turns.get(*a).unwrap_or(&empty_t), turns.get(*b).unwrap_or(&empty_t), w, 0.5);
                    let acc = if f == g { &mut within } else { &mut cross };
                    acc.0 += ov;
                    acc.1 += al;
                    acc.2 += 1;
                }
            }
            if within.2 == 0 || cross.2 == 0 {
                continue;
            }
            spans_n += 1;
            if separated(within, cross) {
                spans_ok += 1;
            }
            sw = (sw.0 + within.0, sw.1 + within.1, sw.2 + within.2);
            sx = (sx.0 + cross.0, sx.1 + cross.1, sx.2 + cross.2);
        }
        if sw.2 == 0 || sx.2 == 0 {
            continue;
        }
        sessions += 1;
        if separated(sw, sx) {
            sessions_ok += 1;
        } else {
            failed.push(seed);
        }
    }
    outcome(
        sessions > 0 && sessions_ok == sessions,
        format!(
            "separated in {sessions_ok}/{sessions} sessions (failing seeds {failed:?}); single spans {spans_ok}/{spans_n}"
        ),
    )
}

fn separated(within: (f64, f64, usize), cross: (f64, f64, usize)) -> bool {
    let (wn, xn) = (within.2 as f64, cross.2 as f64);
    cross.0 / xn > within.0 / wn && within.1 / wn > cross.1 / xn
}

fn c4_recovery(runs: &[Run]) -> Outcome {
    let mut with = Vec::new();
    let mut ablation_ok = true;
    let mut lower = 0;
    let mut eligible = 0;
    for r in runs {
        let a = frame_pairwise_agreement(&r.sim.truth.labels, &r.out.labels, DEFAULT_FRAME).unwrap().value;
        with.push(a);
        let has_cue_events = r
            .sim
            .truth
            .injected
            .iter()
            .any(|e| matches!(e.kind, TrueKind::Sit | TrueKind::Aside));
        if has_cue_events {
            eligible += 1;
            let b = frame_pairwise_agreement(&r.sim.truth.labels, &infer(&r.sim, true).labels, DEFAULT_FRAME)
                .unwrap()
                .value;
            if b < a {
                lower += 1;
            } else {
                ablation_ok = false;
            }
        }
    }
    let lo = with.iter().copied().fold(f64::INFINITY, f64::min);
    let med = median(&mut with);
    outcome(
        med >= 0.85 && ablation_ok,
        format!("median agreement {med:.3} (min {lo:.3}); no-cues lower on {lower}/{eligible} sessions with SIT/ASIDE"),
    )
}

/// Greedy one-to-one match of emitted CONFIRMs to TOSS_OUT/RETRO responses.
fn confirm_matches<'a>(truth: &'a [InjectedEvent], cues: &'a [SchismCue]) -> Vec<(&'a InjectedEvent, &'a SchismCue)> {
    let ts: Vec<&InjectedEvent> = truth
        .iter()
        .filter(|e| matches!(e.kind, TrueKind::TossOut | TrueKind::Retro))
        .collect();
    let cs: Vec<&SchismCue> = cues.iter().filter(|c| c.kind == CueKind::Confirm).collect();
    let mut cands = Vec::new();
    for (i, e) in ts.iter().enumerate() {
        let r = e.t_response.unwrap_or(e.t);
        for (j, c) in cs.iter().enumerate() {
            let dt = (c.t - r).abs();
            if dt <= CUE_MATCH_TOL && c.initiator == e.initiator {
                cands.push((dt, i, j));
            }
        }
    }
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let (mut tu, mut cu) = (vec![false; ts.len()], vec![false; cs.len()]);
    let mut out = Vec::new();
    for (_, i, j) in cands {
        if !tu[i] && !cu[j] {
            tu[i] = true;
            cu[j] = true;
            out.push((ts[i], cs[j]));
        }
    }
    out
}

fn c5_backdating(runs: &[Run]) -> Outcome {
    let (mut confirmed, mut backdated) = (0usize, 0usize);
    let (mut matched, mut early) = (0usize, 0usize);
    let mut latencies = Vec::new();
    let mut schisms_total = 0;
    for r in runs {
        for (ev, cue) in confirm_matches(&r.sim.truth.injected, &r.out.cues) {
            confirmed += 1;
            let start = r.out.events.iter().find_map(|e| match e {
                EngineEvent::FloorStart {
                    t,
                    floor,
                    members,
                    label_start,
                } if *t >= cue.t - 1e-9 && members.contains(&cue.initiator) => Some((*floor, *label_start)),
                _ => None,
            });
            let labeled = start.is_some_and(|(floor, ls)| {
                (ls - ev.t).abs() <= 0.010
                    && r.out
                        .labels
                        .iter()
                        .any(|l| l.participant == cue.initiator && l.floor == floor && (l.t0 - ev.t).abs() <= 0.010)
            });
            if labeled {
                backdated += 1;
            }
        }
        let schisms: Vec<InjectedEvent> = r.sim.truth.injected.iter().filter(|e| e.schism).cloned().collect();
        schisms_total += schisms.len();
        for m in detection_latency(&schisms, &r.out.events, DEFAULT_MATCH_WINDOW) {
            let (Some(k), Some(lat)) = (m.event, m.latency) else { continue };
            matched += 1;
            let s = &schisms[m.schism];
            if r.out.events[k].time() < s.t_response.unwrap_or(s.t) - 1e-9 {
                early += 1;
            }
            latencies.push(lat);
        }
    }
    let med = median(&mut latencies);
    outcome(
        confirmed > 0 && backdated == confirmed && early == 0 && med <= 5.0,
        format!(
            "back-dated {backdated}/{confirmed} confirmed; {early} of {matched} matched starts before response (of {schisms_total} schisms); median latency {med:.2} s"
        ),
    )
}

fn c6_cues(runs: &[Run]) -> Outcome {
    let mut injected = Vec::new();
    let mut cues = Vec::new();
    let mut offset = 0.0;
    for r in runs {
        // concatenate sessions on one clock so matches cannot cross sessions
        injected.extend(r.sim.truth.injected.iter().cloned().map(|mut e| {
            e.t += offset;
            e.t_response = e.t_response.map(|t| t + offset);
            e
        }));
        cues.extend(r.out.cues.iter().cloned().map(|mut c| {
            c.t += offset;
            c
        }));
        offset += r.sim.truth.span + 100.0;
    }
    let prf = cue_prf(&injected, &cues);
    let mut pass = true;
    let mut parts = Vec::new();
    for kind in CueKind::ALL {
        let p = &prf[&kind];
        let ok = p.precision >= 0.9 && p.recall >= 0.8;
        pass &= ok;
        parts.push(format!(
            "{kind} P {:.3} R {:.3}{}",
            p.precision,
            p.recall,
            if ok { "" } else { " (below target)" }
        ));
    }
    outcome(pass, parts.join(", "))
}

fn c7_oracles() -> Outcome {
    let checks = [
        ("vad", common::vad_vs_frame_reference(1000)),
        ("overlap/alignment", common::overlap_alignment_vs_brute(1000)),
        ("agreement/concurrency", common::agreement_concurrency_vs_dense(200)),
        ("validator", common::validator_vs_quadratic(1000)),
    ];
    let pass = checks.iter().all(|(_, c)| c.is_ok());
    let detail = checks
        .iter()
        .map(|(name, c)| match c {
            Ok(s) => format!("{name}: {s}"),
            Err(e) => format!("{name}: MISMATCH {e}"),
        })
        .collect::<Vec<_>>()
        .join("; ");
    outcome(pass, detail)
}

fn c8_determinism() -> Outcome {
    let p = preset("youth").unwrap();
    let a = simulate_session(&p, 1200.0, 42).unwrap();
    let b = simulate_session(&p, 1200.0, 42).unwrap();
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    SessionBundle::from_sim(&a).write_dir(dir_a.path()).unwrap();
    SessionBundle::from_sim(&b).write_dir(dir_b.path()).unwrap();
    let mut same_files = true;
    for entry in std::fs::read_dir(dir_a.path()).unwrap() {
        let name = entry.unwrap().file_name();
        same_files &= std::fs::read(dir_a.path().join(&name)).unwrap() == std::fs::read(dir_b.path().join(&name)).unwrap();
    }
    let oa = infer(&a, false);
    let ob = infer(&b, false);
    let same_infer = format_labels(&oa.labels).unwrap() == format_labels(&ob.labels).unwrap()
        && format_events(&oa.events) == format_events(&ob.events)
        && format_cues(&oa.cues) == format_cues(&ob.cues);
    let same_svg = svg(&a, &oa) == svg(&b, &ob);
    outcome(
        same_files && same_infer && same_svg,
        format!("bundle identical {same_files}, infer identical {same_infer}, svg identical {same_svg}"),
    )
}

fn svg(s: &SimSession, o: &InferOutput) -> String {
    render_vad_diagram(&s.participants, &s.segments, Some(&o.labels), s.truth.span).unwrap()
}

fn drive<F: FnMut(&Pipeline)>(s: &SimSession, params: PipelineParams, mut each: F) -> Pipeline {
    let mut items: Vec<(f64, u8, usize)> = Vec::new();
    for (i, seg) in s.segments.iter().enumerate() {
        items.push((seg.t1, 0, i));
        items.push((seg.t0, 3, i));
    }
    for (i, t) in s.tokens.iter().enumerate() {
        items.push((t.t0, 2, i));
    }
    items.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut p = Pipeline::new(&s.participants, params).unwrap();
    for (t, kind, i) in items {
        match kind {
            0 => p.segment(s.segments[i].clone()).unwrap(),
            3 => p.speech_start(s.segments[i].participant.clone(), t).unwrap(),
            _ => p.push_token(s.tokens[i].clone()),
        }
        each(&p);
    }
    p
}

fn c9_performance() -> Outcome {
    let mut p10 = preset("youth").unwrap();
    p10.participants = 10;
    let s1 = simulate_session(&p10, HOUR, 7).unwrap();
    let t = Instant::now();
    let out = infer(&s1, false);
    let secs = t.elapsed().as_secs_f64();

    let ep = PipelineParams::default().engine;
    // pruning runs when a window closes, so now may lead by one window
    let keep = ep.retro_horizon + 3.0 * ep.window;
    let mut peak_1h = 0usize;
    let mut stale = 0usize;
    drive(&s1, PipelineParams::default(), |p| {
        let e = p.engine();
        peak_1h = peak_1h.max(e.buffered_len());
        let now = e.now();
        // the latest segment per speaker is always retained
        for who in &s1.participants {
            let segs: Vec<_> = e.buffered_segments(who).collect();
            stale += segs.iter().rev().skip(1).filter(|g| g.t1 < now - keep).count();
        }
    });
    let s2 = simulate_session(&p10, 2.0 * HOUR, 7).unwrap();
    let mut peak_2h = 0usize;
    drive(&s2, PipelineParams::default(), |p| peak_2h = peak_2h.max(p.engine().buffered_len()));
    let bounded = stale == 0 && (peak_2h as f64) <= 1.5 * peak_1h as f64;
    outcome(
        secs <= 10.0 && bounded && !out.labels.is_empty(),
        format!(
            "infer 1 h x 10 participants in {secs:.2} s ({} segments); peak buffer {peak_1h} items at 1 h, {peak_2h} at 2 h; {stale} stale buffered segments",
            s1.segments.len()
        ),
    )
}

fn c10_mixer() -> Outcome {
    let params = MixerParams::default();
    let s = simulate_session(&preset("youth").unwrap(), 1800.0, 3).unwrap();
    let (mut snapshots, mut violations) = (0usize, 0usize);
    drive(&s, PipelineParams::default(), |p| {
        let part = p.engine().partition();
        let m = compute_gain_matrix(&part, &params).unwrap();
        snapshots += 1;
        for (l, sp, g) in m.entries() {
            let want = if l == sp {
                0.0
            } else if part[l].is_some() && part[l] == part[sp] {
                1.0
            } else {
                params.cross_floor_gain
            };
            if g != want {
                violations += 1;
            }
        }
    });

    // four members laugh together but take no turns
    let floor = Some(FloorId(1));
    let names = ["K", "R", "A", "S", "T", "W"];
    let part: BTreeMap<ParticipantId, Option<FloorId>> = names.iter().map(|n| (pid(n), floor)).collect();
    let mut segs = Vec::new();
    let mut push = |who: &str, t0: f64, t1: f64| {
        segs.push(VadSegment {
            participant: pid(who),
            t0,
            t1,
            e_mean: -20.0,
            e_peak: -17.0,
        })
    };
    for k in 0..10 {
        let base = k as f64 * 6.0;
        push("K", base, base + 2.5);
        push("R", base + 2.7, base + 5.2);
        for who in ["A", "S", "T", "W"] {
            push(who, base + 5.3, base + 5.8);
        }
    }
    let voiced = floorsight::mixer::recent_voiced(&segs, 60.0, params.role_horizon);
    let roles = classify_roles(&part, &voiced);
    let laughers_secondary = ["A", "S", "T", "W"].iter().all(|n| roles[&pid(n)] == Role::Secondary)
        && ["K", "R"].iter().all(|n| roles[&pid(n)] == Role::Primary);

    // aside by a secondary member of {P1, P2 primary; S1, S2 secondary}
    let part: BTreeMap<ParticipantId, Option<FloorId>> = [("P1", 1), ("P2", 1), ("S1", 1), ("S2", 1), ("X", 2), ("Y", 2)]
        .iter()
        .map(|(n, f)| (pid(n), Some(FloorId(*f))))
        .collect();
    let roles: BTreeMap<ParticipantId, Role> = [
        ("P1", Role::Primary),
        ("P2", Role::Primary),
        ("S1", Role::Secondary),
        ("S2", Role::Secondary),
        ("X", Role::Primary),
        ("Y", Role::Primary),
    ]
    .iter()
    .map(|(n, r)| (pid(n), *r))
    .collect();
    let base = compute_gain_matrix(&part, &params).unwrap();
    let aside = SchismCue::new(CueKind::Aside, 10.0, pid("S1"), BTreeSet::new(), 1.0);
    let routed = route_aside(&base, &aside, &roles, &part, &params);
    let mut aside_ok = true;
    for (l, sp, g) in routed.entries() {
        let want = match (l.as_str(), sp.as_str()) {
            ("S2", "S1") => 1.0,
            ("P1", "S1") | ("P2", "S1") => 0.125,
            _ => base.get(l, sp).unwrap(),
        };
        aside_ok &= g == want;
    }
    outcome(
        violations == 0 && snapshots > 0 && laughers_secondary && aside_ok,
        format!(
            "{snapshots} snapshots, {violations} matrix violations; laughers secondary {laughers_secondary}; aside routing exact {aside_ok}"
        ),
    )
}

fn main() -> ExitCode {
    let youth = preset("youth").unwrap();
    let runs: Vec<Run> = SEEDS
        .map(|seed| {
            let sim = simulate_session(&youth, HOUR, seed).unwrap();
            let out = infer(&sim, false);
            Run { sim, out }
        })
        .collect();

    let results: Vec<(usize, &str, Outcome)> = vec![
        (1, "simulator calibration", c1_calibration()),
        (2, "SIT mix", c2_sit_mix()),
        (3, "P5 separation", c3_p5_separation()),
        (4, "engine recovery", c4_recovery(&runs)),
        (5, "retro back-dating and latency", c5_backdating(&runs)),
        (6, "cue detectors", c6_cues(&runs)),
        (7, "oracle suites", c7_oracles()),
        (8, "determinism", c8_determinism()),
        (9, "performance", c9_performance()),
        (10, "mixer properties", c10_mixer()),
    ];
    let mut failed = 0;
    for (n, name, o) in &results {
        println!("criterion {n:>2} {:<4} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed += 1;
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
