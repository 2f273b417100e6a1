//! Energy-threshold voice activity detection.
//!
//! Frames are RMS energies in dBFS on a uniform hop grid. A frame is voiced
//! when it clears the channel noise floor by `threshold_offset`; voiced runs
//! closer than `hangover` are bridged and anything shorter than
//! `min_segment` is discarded.

use std::collections::VecDeque;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ParticipantId, VadSegment};

/// Energy reported for digital silence.
pub const SILENCE_DBFS: f64 = -120.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyFrame {
    /// Frame start, seconds.
    pub t: f64,
    /// RMS energy, dBFS.
    pub e: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VadParams {
    pub frame_window: f64,
    pub hop: f64,
    pub threshold_offset: f64,
    pub hangover: f64,
    pub min_segment: f64,
}

impl Default for VadParams {
    fn default() -> Self {
        Self {
            frame_window: 0.030,
            hop: 0.010,
            threshold_offset: 6.0,
            hangover: 0.200,
            min_segment: 0.100,
        }
    }
}

impl VadParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("frame_window", self.frame_window),
            ("hop", self.hop),
            ("threshold_offset", self.threshold_offset),
            ("hangover", self.hangover),
            ("min_segment", self.min_segment),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParams {
                    name,
                    reason: format!("must be positive, got {v}"),
                });
            }
        }
        if self.hangover < self.hop {
            return Err(Error::InvalidParams {
                name: "hangover",
                reason: "must be at least one hop".into(),
            });
        }
        Ok(())
    }

    fn hangover_frames(&self) -> usize {
        (self.hangover / self.hop).round() as usize
    }
}

fn to_db(rms: f64) -> f64 {
    if rms > 0.0 {
        (20.0 * rms.log10()).max(SILENCE_DBFS)
    } else {
        SILENCE_DBFS
    }
}

/// Frames a mono signal normalized to full scale 1.0. Frame `k` covers
/// samples `[k*hop, k*hop + window)`; a signal shorter than one window
/// yields a single partial frame.
pub fn compute_frame_energy(samples: &[f64], rate: u32, params: &VadParams) -> Result<Vec<EnergyFrame>> {
    params.validate()?;
    if rate == 0 {
        return Err(Error::InvalidParams {
            name: "rate",
            reason: "sample rate must be positive".into(),
        });
    }
    let win = (params.frame_window * rate as f64).round() as usize;
    let hop = (params.hop * rate as f64).round() as usize;
    if win == 0 || hop == 0 {
        return Err(Error::InvalidParams {
            name: "frame_window",
            reason: format!("window/hop shorter than one sample at {rate} Hz"),
        });
    }
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::SignalCorrupt);
    }

    // Running sum of squares over the sliding window.
    let mut prefix = Vec::with_capacity(samples.len() + 1);
    prefix.push(0.0f64);
    let mut acc = 0.0;
    for s in samples {
        acc += s * s;
        prefix.push(acc);
    }
    let n_frames = if samples.len() >= win {
        (samples.len() - win) / hop + 1
    } else {
        1
    };
    let frames = (0..n_frames)
        .map(|k| {
            let start = k * hop;
            let end = (start + win).min(samples.len());
            // Direct summation avoids prefix-sum cancellation on long signals.
            let energy = if end - start <= 64 {
                samples[start..end].iter().map(|s| s * s).sum::<f64>()
            } else {
                (prefix[end] - prefix[start]).max(0.0)
            };
            let rms = (energy / (end - start) as f64).sqrt();
            EnergyFrame {
                t: start as f64 / rate as f64,
                e: to_db(rms),
            }
        })
        .collect();
    Ok(frames)
}

/// Nearest-rank 10th percentile of the frame energies.
pub fn estimate_noise_floor(frames: &[EnergyFrame]) -> Result<f64> {
    if frames.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut e: Vec<f64> = frames.iter().map(|f| f.e).collect();
    let k = percentile_rank(e.len(), 0.10);
    let (_, v, _) = e.select_nth_unstable_by(k, f64::total_cmp);
    Ok(*v)
}

/// Zero-based nearest-rank index of quantile `q` in a sorted list of `n` values.
pub(crate) fn percentile_rank(n: usize, q: f64) -> usize {
    ((q * n as f64).ceil() as usize).clamp(1, n) - 1
}

/// Offline segmentation against the channel's own noise floor.
pub fn segment_channel(
    frames: &[EnergyFrame],
    params: &VadParams,
    participant: &ParticipantId,
) -> Result<Vec<VadSegment>> {
    if frames.is_empty() {
        return Ok(Vec::new());
    }
    let floor = estimate_noise_floor(frames)?;
    detect_segments(frames, floor, params, participant)
}

/// Labels frames against `noise_floor + threshold_offset` and turns the
/// voiced frames into segments.
pub fn detect_segments(
    frames: &[EnergyFrame],
    noise_floor: f64,
    params: &VadParams,
    participant: &ParticipantId,
) -> Result<Vec<VadSegment>> {
    params.validate()?;
    let threshold = noise_floor + params.threshold_offset;
    let voiced: Vec<bool> = frames.iter().map(|f| f.e >= threshold).collect();
    Ok(runs_to_segments(frames, &voiced, params, participant))
}

fn runs_to_segments(
    frames: &[EnergyFrame],
    voiced: &[bool],
    params: &VadParams,
    participant: &ParticipantId,
) -> Vec<VadSegment> {
    let max_gap = params.hangover_frames();
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < voiced.len() {
        if !voiced[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < voiced.len() && voiced[i] {
            i += 1;
        }
        match runs.last_mut() {
            // gap in frames between the previous run's end and this start
            Some(last) if start - last.1 < max_gap => last.1 = i,
            _ => runs.push((start, i)),
        }
    }

    runs.into_iter()
        .filter_map(|(a, b)| {
            let t0 = frames[a].t;
            let t1 = frames[b - 1].t + params.hop;
            if t1 - t0 < params.min_segment - 1e-9 {
                return None;
            }
            let energies = frames[a..b]
                .iter()
                .zip(&voiced[a..b])
                .filter(|(_, v)| **v)
                .map(|(f, _)| f.e);
            let (mut sum, mut n, mut peak) = (0.0, 0usize, f64::NEG_INFINITY);
            for e in energies {
                sum += e;
                n += 1;
                peak = peak.max(e);
            }
            let mean = sum / n as f64;
            Some(VadSegment {
                participant: participant.clone(),
                t0,
                t1,
                e_mean: mean,
                e_peak: peak.max(mean),
            })
        })
        .collect()
}

/// Streaming detector with a rolling noise-floor estimate. Frames are pushed
/// one at a time; segments are returned once the hangover after them has
/// elapsed.
#[derive(Debug, Clone)]
pub struct StreamingVad {
    params: VadParams,
    participant: ParticipantId,
    history: VecDeque<f64>,
    history_len: usize,
    refresh_every: usize,
    since_refresh: usize,
    floor: Option<f64>,
    run: Option<OpenRun>,
    silent_frames: usize,
}

#[derive(Debug, Clone)]
struct OpenRun {
    t0: f64,
    last_voiced_t: f64,
    sum: f64,
    n: usize,
    peak: f64,
}

impl StreamingVad {
    /// Noise floor is re-estimated once per second over the last `floor_window` seconds.
    pub fn new(participant: ParticipantId, params: VadParams, floor_window: f64) -> Result<Self> {
        params.validate()?;
        let history_len = ((floor_window / params.hop).round() as usize).max(1);
        Ok(Self {
            params,
            participant,
            history: VecDeque::with_capacity(history_len),
            history_len,
            refresh_every: ((1.0 / params.hop).round() as usize).max(1),
            since_refresh: usize::MAX,
            floor: None,
            run: None,
            silent_frames: 0,
        })
    }

    pub fn noise_floor(&self) -> Option<f64> {
        self.floor
    }

    pub fn push(&mut self, frame: EnergyFrame) -> Option<VadSegment> {
        if self.history.len() == self.history_len {
            self.history.pop_front();
        }
        self.history.push_back(frame.e);
        self.since_refresh = self.since_refresh.saturating_add(1);
        if self.since_refresh >= self.refresh_every {
            let mut e: Vec<f64> = self.history.iter().copied().collect();
            let k = percentile_rank(e.len(), 0.10);
            let (_, v, _) = e.select_nth_unstable_by(k, f64::total_cmp);
            self.floor = Some(*v);
            self.since_refresh = 0;
        }
        let threshold = self.floor.unwrap_or(f64::INFINITY) + self.params.threshold_offset;
        let voiced = frame.e >= threshold;

        if voiced {
            self.silent_frames = 0;
            let run = self.run.get_or_insert(OpenRun {
                t0: frame.t,
                last_voiced_t: frame.t,
                sum: 0.0,
                n: 0,
                peak: f64::NEG_INFINITY,
            });
            run.last_voiced_t = frame.t;
            run.sum += frame.e;
            run.n += 1;
            run.peak = run.peak.max(frame.e);
            None
        } else if self.run.is_some() {
            self.silent_frames += 1;
            if self.silent_frames >= self.params.hangover_frames() {
                self.close()
            } else {
                None
            }
        } else {
            None
        }
    }

    /// Flushes any open run at end of stream.
    pub fn finish(&mut self) -> Option<VadSegment> {
        self.close()
    }

    fn close(&mut self) -> Option<VadSegment> {
        self.silent_frames = 0;
        let run = self.run.take()?;
        let t1 = run.last_voiced_t + self.params.hop;
        if t1 - run.t0 < self.params.min_segment - 1e-9 {
            return None;
        }
        let mean = run.sum / run.n as f64;
        Some(VadSegment {
            participant: self.participant.clone(),
            t0: run.t0,
            t1,
            e_mean: mean,
            e_peak: run.peak.max(mean),
        })
    }
}

/// Reads a mono integer-PCM WAV file normalized to full scale 1.0.
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::InvalidParams {
            name: "wav",
            reason: format!("{} must be mono integer PCM", path.display()),
        });
    }
    let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
    let samples = reader
        .samples::<i32>()
        .map(|s| s.map(|v| v as f64 / scale))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(wav_err)?;
    Ok((samples, spec.sample_rate))
}

/// Writes 16-bit mono PCM.
pub fn write_wav(path: &Path, samples: &[f64], rate: u32) -> Result<()> {
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v).map_err(wav_err)?;
    }
    w.finalize().map_err(wav_err)?;
    Ok(())
}
