//! Independent reference implementations and the randomized comparisons
//! against the library. Each check returns a one-line summary or the first
//! mismatch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use floorsight::eval::{corpus_stats, frame_pairwise_agreement};
use floorsight::model::validate_label_set;
use floorsight::turns::{alignment_score, build_turns, group_segments, group_turns, pairwise_overlap_stats, Window};
use floorsight::vad::{compute_frame_energy, segment_channel, VadParams, SILENCE_DBFS};
use floorsight::{AffiliationInterval, FloorId, ParticipantId, Turn, VadSegment};

pub type Check = Result<String, String>;

fn pid(s: &str) -> ParticipantId {
    ParticipantId::new(s).unwrap()
}

fn ms(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo..hi) * 1000.0).round() / 1000.0
}

/// Synthetic channel: tone bursts over low noise at known times.
fn tone_case(rng: &mut ChaCha8Rng, params: &VadParams) -> (Vec<f64>, u32, Vec<(f64, f64)>) {
    let rate = [8000u32, 16000][rng.random_range(0..2)];
    let min_gap = params.hangover + params.frame_window + 0.1;
    let min_len = params.min_segment + params.frame_window + 0.05;
    let mut truth = Vec::new();
    let mut t = ms(rng, min_gap, 1.0);
    let end = ms(rng, 2.0, 4.0);
    while t < end {
        let len = ms(rng, min_len, 1.0);
        truth.push((t, t + len));
        t += len + ms(rng, min_gap, 1.0);
    }
    let total = t + 0.5;
    let n = (total * rate as f64) as usize;
    let mut samples: Vec<f64> = (0..n).map(|_| rng.random_range(-1e-3..1e-3)).collect();
    for &(a, b) in &truth {
        let amp = rng.random_range(0.05..0.5);
        let f = rng.random_range(100.0..400.0);
        let (i0, i1) = ((a * rate as f64).ceil() as usize, ((b * rate as f64).ceil() as usize).min(n));
        for (i, s) in samples.iter_mut().enumerate().take(i1).skip(i0) {
            *s += amp * (std::f64::consts::TAU * f * i as f64 / rate as f64).sin();
        }
    }
    (samples, rate, truth)
}

/// Frame energies recomputed sample by sample, and segment boundaries
/// against the known burst times, within one frame.
pub fn vad_vs_frame_reference(cases: usize) -> Check {
    let params = VadParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let who = pid("x");
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let (samples, rate, truth) = tone_case(&mut rng, &params);
        let frames = compute_frame_energy(&samples, rate, &params).map_err(|e| e.to_string())?;
        let win = (params.frame_window * rate as f64).round() as usize;
        let hop = (params.hop * rate as f64).round() as usize;
        for (k, f) in frames.iter().enumerate() {
            let chunk = &samples[k * hop..(k * hop + win).min(samples.len())];
            let rms = (chunk.iter().map(|s| s * s).sum::<f64>() / chunk.len() as f64).sqrt();
            let db = if rms > 0.0 { (20.0 * rms.log10()).max(SILENCE_DBFS) } else { SILENCE_DBFS };
            if (db - f.e).abs() > 1e-6 || (f.t - (k * hop) as f64 / rate as f64).abs() > 1e-12 {
                return Err(format!("case {case}: frame {k} energy {} vs reference {db}", f.e));
            }
        }
        let segs = segment_channel(&frames, &params, &who).map_err(|e| e.to_string())?;
        if segs.len() != truth.len() {
            return Err(format!("case {case}: {} segments vs {} bursts", segs.len(), truth.len()));
        }
        for (s, (a, b)) in segs.iter().zip(&truth) {
            let d = (s.t0 - a).abs().max((s.t1 - b).abs());
            worst = worst.max(d);
            if d > params.frame_window + 1e-9 {
                return Err(format!("case {case}: segment [{}, {}] vs burst [{a}, {b}]", s.t0, s.t1));
            }
        }
    }
    Ok(format!("{cases} cases, worst boundary error {:.1} ms", worst * 1000.0))
}

fn random_stream(rng: &mut ChaCha8Rng, who: &ParticipantId, span: f64) -> Vec<VadSegment> {
    let mut out = Vec::new();
    let mut t = ms(rng, 0.0, 2.0);
    while t < span {
        let len = ms(rng, 0.1, 3.0);
        out.push(VadSegment {
            participant: who.clone(),
            t0: t,
            t1: t + len,
            e_mean: -20.0,
            e_peak: -18.0,
        });
        t += len + ms(rng, 0.05, 3.0);
    }
    out
}

fn voiced_brute(s: &[VadSegment], t: f64) -> bool {
    s.iter().any(|g| g.t0 <= t && t < g.t1)
}

fn alignment_brute(a: &[Turn], b: &[Turn], w: Window, tol: f64) -> f64 {
    let dir = |from: &[Turn], to: &[Turn]| -> Option<f64> {
        let onsets: Vec<f64> = from.iter().map(|t| t.t0).filter(|&t| w.t0 <= t && t < w.t1).collect();
        if onsets.is_empty() {
            return None;
        }
        let hits = onsets
            .iter()
            .filter(|&&o| to.iter().any(|t| (t.t1 - o).abs() <= tol))
            .count();
        Some(hits as f64 / onsets.len() as f64)
    };
    match (dir(a, b), dir(b, a)) {
        (Some(x), Some(y)) => (x + y) / 2.0,
        (Some(x), None) | (None, Some(x)) => x,
        (None, None) => 0.0,
    }
}

/// Cospeech by 1 ms sampling (2 ms tolerance) and alignment by exhaustive
/// onset/offset scan (exact).
pub fn overlap_alignment_vs_brute(cases: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0002);
    let (a_id, b_id) = (pid("a"), pid("b"));
    let tol = 0.5005;
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let span = 30.0;
        let a = random_stream(&mut rng, &a_id, span);
        let b = random_stream(&mut rng, &b_id, span);
        let w0 = ms(&mut rng, 0.0, 10.0);
        let w = Window::new(w0, w0 + ms(&mut rng, 1.0, 20.0));
        let f = pairwise_overlap_stats(&a, &b, w);
        let steps = ((w.t1 - w.t0) * 1000.0).round() as usize;
        let (mut co, mut va, mut vb) = (0usize, 0usize, 0usize);
        for k in 0..steps {
            let t = w.t0 + (k as f64 + 0.5) / 1000.0;
            let (x, y) = (voiced_brute(&a, t), voiced_brute(&b, t));
            co += (x && y) as usize;
            va += x as usize;
            vb += y as usize;
        }
        let co_s = co as f64 / 1000.0;
        let denom = va.min(vb) as f64 / 1000.0;
        let frac = if denom > 0.0 { co_s / denom } else { 0.0 };
        let d = (f.cospeech_seconds - co_s).abs();
        worst = worst.max(d);
        if d > 0.002 || (denom > 0.0 && (f.overlap_frac - frac).abs() > 0.004 / denom) {
            return Err(format!("case {case}: cospeech {} vs {co_s}, frac {} vs {frac}", f.cospeech_seconds, f.overlap_frac));
        }

        let streams = group_segments(a.iter().chain(&b).cloned());
        let turns = group_turns(build_turns(&streams, 0.5));
        let empty = Vec::new();
        let ta = turns.get(&a_id).unwrap_or(&empty);
        let tb = turns.get(&b_id).unwrap_or(&empty);
        let got = alignment_score(ta, tb, w, tol);
        let want = alignment_brute(ta, tb, w, tol);
        if got != want {
            return Err(format!("case {case}: alignment {got} vs {want}"));
        }
    }
    Ok(format!("{cases} cases, worst cospeech error {:.3} ms, alignment exact", worst * 1000.0))
}

fn random_labels(rng: &mut ChaCha8Rng, n: usize, span: f64, floors: u32) -> Vec<AffiliationInterval> {
    let mut out = Vec::new();
    for i in 0..n {
        let who = pid(&format!("p{i}"));
        let mut t = ms(rng, 0.0, 5.0);
        while t < span - 1.0 {
            let len = ms(rng, 0.5, 30.0).min(span - t);
            if rng.random_bool(0.8) {
                out.push(AffiliationInterval {
                    participant: who.clone(),
                    floor: FloorId(rng.random_range(1..=floors)),
                    t0: t,
                    t1: t + len,
                });
            }
            t += len + if rng.random_bool(0.5) { 0.0 } else { ms(rng, 0.1, 5.0) };
        }
    }
    out
}

fn floor_at(labels: &[AffiliationInterval], who: &ParticipantId, t: f64) -> Option<FloorId> {
    labels
        .iter()
        .find(|l| &l.participant == who && l.t0 <= t && t < l.t1)
        .map(|l| l.floor)
}

/// Agreement by per-frame linear lookup (exact counts) and concurrency by
/// 1 ms sampling (1%).
pub fn agreement_concurrency_vs_dense(cases: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
    let frame = 0.1;
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let n = rng.random_range(2..7);
        let span = 120.0;
        let truth = random_labels(&mut rng, n, span, 3);
        let pred = random_labels(&mut rng, n, span, 4);
        let ids: Vec<ParticipantId> = (0..n).map(|i| pid(&format!("p{i}"))).collect();

        let end = truth.iter().map(|l| l.t1).fold(0.0, f64::max);
        let (mut scored, mut agreed) = (0usize, 0usize);
        let frames = (end / frame).ceil() as usize;
        for k in 0..frames {
            let t = (k as f64 + 0.5) * frame;
            let tf: Vec<_> = ids.iter().map(|p| floor_at(&truth, p, t)).collect();
            let pf: Vec<_> = ids.iter().map(|p| floor_at(&pred, p, t)).collect();
            for i in 0..n {
                for j in i + 1..n {
                    let (Some(x), Some(y)) = (tf[i], tf[j]) else { continue };
                    scored += 1;
                    let same_pred = pf[i].is_some() && pf[i] == pf[j];
                    agreed += ((x == y) == same_pred) as usize;
                }
            }
        }
        match frame_pairwise_agreement(&truth, &pred, frame) {
            Ok(a) if a.scored == scored && a.agreed == agreed => {}
            Ok(a) => {
                return Err(format!(
                    "case {case}: agreement {}/{} vs reference {agreed}/{scored}",
                    a.agreed, a.scored
                ))
            }
            Err(_) if scored == 0 => {}
            Err(e) => return Err(format!("case {case}: {e}")),
        }

        if case % 10 == 0 {
            let st = corpus_stats(&truth, span);
            let steps = (span * 1000.0) as usize;
            let mut area = 0usize;
            for k in 0..steps {
                let t = (k as f64 + 0.5) / 1000.0;
                let mut live: Vec<FloorId> = truth.iter().filter(|l| l.t0 <= t && t < l.t1).map(|l| l.floor).collect();
                live.sort();
                live.dedup();
                area += live.len();
            }
            let dense = area as f64 / steps as f64;
            let rel = (st.time_weighted_concurrency - dense).abs() / dense.max(1e-12);
            worst = worst.max(rel);
            if rel > 0.01 {
                return Err(format!("case {case}: concurrency {} vs dense {dense}", st.time_weighted_concurrency));
            }
        }
    }
    Ok(format!("{cases} cases, agreement counts exact, worst concurrency error {:.4}%", worst * 100.0))
}

/// The validator against an all-pairs checker, compared as exact report sets.
pub fn validator_vs_quadratic(cases: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0004);
    let mut total = 0usize;
    for case in 0..cases {
        let span = 50.0;
        let n = rng.random_range(0..25);
        let labels: Vec<AffiliationInterval> = (0..n)
            .map(|_| {
                let t0 = ms(&mut rng, -3.0, 52.0);
                let t1 = match rng.random_range(0..10) {
                    0 => t0,
                    1 => t0 - ms(&mut rng, 0.001, 2.0),
                    2 => f64::NAN,
                    _ => t0 + ms(&mut rng, 0.001, 10.0),
                };
                AffiliationInterval {
                    participant: pid(["a", "b", "c"][rng.random_range(0..3)]),
                    floor: FloorId(1),
                    t0,
                    t1,
                }
            })
            .collect();
        let mut want: Vec<(usize, &str, Option<usize>)> = Vec::new();
        let mut usable = vec![false; n];
        for (i, l) in labels.iter().enumerate() {
            if !(l.t0.is_finite() && l.t1.is_finite()) || l.t1 < l.t0 {
                want.push((i, "BAD_ORDER", None));
            } else if l.t1 == l.t0 {
                want.push((i, "EMPTY", None));
            } else {
                usable[i] = true;
                if l.t0 < 0.0 || l.t1 > span {
                    want.push((i, "OUT_OF_SPAN", None));
                }
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                let (a, b) = (&labels[i], &labels[j]);
                if usable[i] && usable[j] && a.participant == b.participant && a.t0.max(b.t0) < a.t1.min(b.t1) {
                    want.push((i, "OVERLAP", Some(j)));
                }
            }
        }
        want.sort();
        let mut got: Vec<(usize, &str, Option<usize>)> = validate_label_set(&labels, span)
            .iter()
            .map(|v| (v.index, v.reason.as_str(), v.other))
            .collect();
        got.sort();
        if got != want {
            return Err(format!("case {case}: validator {got:?} vs reference {want:?}"));
        }
        total += want.len();
    }
    Ok(format!("{cases} cases, {total} violations, reports identical"))
}
