//! Rendering generated speech as energy frames or tone-burst audio, for
//! exercising the VAD path end to end.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{ParticipantId, VadSegment};
use crate::turns::group_segments;
use crate::vad::{write_wav, EnergyFrame};

/// Level of the background between segments.
pub const NOISE_DBFS: f64 = -60.0;

/// Rectangular energy envelope on a uniform hop: segment `e_mean` while
/// voiced, the noise level otherwise.
pub fn energy_frames(
    segments: &[VadSegment],
    participants: &[ParticipantId],
    span: f64,
    hop: f64,
) -> BTreeMap<ParticipantId, Vec<EnergyFrame>> {
    let streams = group_segments(segments.iter().cloned());
    let n = (span / hop).floor().max(0.0) as usize;
    participants
        .iter()
        .map(|p| {
            let stream = streams.get(p).map(Vec::as_slice).unwrap_or(&[]);
            let mut k = 0;
            let frames = (0..n)
                .map(|i| {
                    let t = i as f64 * hop;
                    while k < stream.len() && stream[k].t1 <= t {
                        k += 1;
                    }
                    let e = if k < stream.len() && stream[k].t0 <= t { stream[k].e_mean } else { NOISE_DBFS };
                    EnergyFrame { t, e }
                })
                .collect();
            (p.clone(), frames)
        })
        .collect()
}

/// One WAV per participant: a sine tone at each segment's level over low
/// white noise. Files are named `<participant>.wav`.
pub fn write_tone_wavs(
    segments: &[VadSegment],
    participants: &[ParticipantId],
    span: f64,
    rate: u32,
    seed: u64,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let streams = group_segments(segments.iter().cloned());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise_amp = 10f64.powf(NOISE_DBFS / 20.0) * 3f64.sqrt();
    let n = (span * rate as f64).round() as usize;
    for (idx, p) in participants.iter().enumerate() {
        let stream = streams.get(p).map(Vec::as_slice).unwrap_or(&[]);
        let freq = 180.0 + 20.0 * idx as f64;
        let mut samples = Vec::with_capacity(n);
        let mut k = 0;
        for i in 0..n {
            let t = i as f64 / rate as f64;
            while k < stream.len() && stream[k].t1 <= t {
                k += 1;
            }
            let mut x = noise_amp * rng.random_range(-1.0..1.0);
            if k < stream.len() && stream[k].t0 <= t {
                let amp = 10f64.powf(stream[k].e_mean / 20.0) * 2f64.sqrt();
                x += amp * (2.0 * std::f64::consts::PI * freq * t).sin();
            }
            samples.push(x);
        }
        write_wav(&dir.join(format!("{p}.wav")), &samples, rate)?;
    }
    Ok(())
}
