use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use floorsight::engine::pipeline::{infer_session, PipelineParams};
use floorsight::eval::{evaluate, EvalExtras};
use floorsight::io::config::Config;
use floorsight::io::svg::render_vad_diagram;
use floorsight::io::{self, SessionBundle};
use floorsight::mixer::{aside_overrides, changes_from_labels, gain_timeline};
use floorsight::sim::{preset, simulate_session, write_tone_wavs};
use floorsight::turns::{build_turns, group_segments};
use floorsight::vad::{compute_frame_energy, read_wav, segment_channel};
use floorsight::{Error, ParticipantId, Result};

const WAV_RATE: u32 = 8000;

#[derive(Parser)]
#[command(name = "floorsight", version, about = "Conversational floor tracking from voice activity")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic session with ground truth.
    Simulate {
        #[arg(long)]
        preset: String,
        #[arg(long, default_value_t = 3600.0)]
        duration: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write one tone-burst WAV per participant under <out>/wav.
        #[arg(long)]
        wav: bool,
    },
    /// Segment per-participant WAV files into voiced intervals.
    Vad {
        #[arg(long)]
        wav_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Infer floors for a session directory.
    Infer {
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        params: Option<PathBuf>,
        /// Turn-taking features only.
        #[arg(long)]
        no_cues: bool,
        /// Address terms, one per line; overrides token flags.
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
    /// Score predicted labels against truth.
    Eval {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        events: Option<PathBuf>,
        #[arg(long)]
        cues: Option<PathBuf>,
        #[arg(long)]
        injected: Option<PathBuf>,
        /// Session span in seconds; defaults to the latest label end.
        #[arg(long)]
        span: Option<f64>,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Draw a VAD diagram as SVG.
    Render {
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Per-listener gains for a labeled session.
    Mix {
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Cues whose ASIDEs are routed.
        #[arg(long)]
        cues: Option<PathBuf>,
        #[arg(long)]
        params: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.code());
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Simulate {
            preset: name,
            duration,
            seed,
            out,
            wav,
        } => {
            let p = preset(&name)?;
            let s = simulate_session(&p, duration, seed)?;
            SessionBundle::from_sim(&s).write_dir(&out)?;
            if wav {
                write_tone_wavs(&s.segments, &s.participants, s.truth.span, WAV_RATE, seed, &out.join("wav"))?;
            }
            Ok(())
        }
        Cmd::Vad { wav_dir, out, params } => {
            let cfg = Config::load(params.as_deref())?;
            let mut wavs: Vec<PathBuf> = fs::read_dir(&wav_dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
                .collect();
            wavs.sort();
            let mut segments = Vec::new();
            for path in wavs {
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
                let who = ParticipantId::new(stem)?;
                let (samples, rate) = read_wav(&path)?;
                let frames = compute_frame_energy(&samples, rate, &cfg.vad)?;
                segments.extend(segment_channel(&frames, &cfg.vad, &who)?);
            }
            io::write_segments(&out, &segments)
        }
        Cmd::Infer {
            session,
            out,
            params,
            no_cues,
            lexicon,
        } => {
            let cfg = Config::load(params.as_deref())?;
            let mut b = SessionBundle::read_dir(&session)?;
            if let Some(lex) = lexicon {
                io::apply_lexicon(&mut b.tokens, &io::parse_lexicon(&fs::read_to_string(lex)?));
            }
            let p = PipelineParams {
                engine: cfg.engine,
                detect: cfg.detect,
                no_cues,
            };
            let res = infer_session(&b.meta.participants, &b.segments, &b.tokens, &b.cues, p)?;
            fs::create_dir_all(&out)?;
            io::write_labels(&out.join(io::LABELS_FILE), &res.labels)?;
            fs::write(out.join(io::EVENTS_FILE), io::format_events(&res.events))?;
            fs::write(out.join(io::CUES_FILE), io::format_cues(&res.cues))?;
            Ok(())
        }
        Cmd::Eval {
            truth,
            pred,
            events,
            cues,
            injected,
            span,
            report,
            params,
        } => {
            let cfg = Config::load(params.as_deref())?;
            let truth = io::read_labels(&truth, f64::INFINITY)?;
            let pred = io::read_labels(&pred, f64::INFINITY)?;
            let span = span.unwrap_or_else(|| truth.iter().chain(&pred).map(|l| l.t1).fold(0.0, f64::max));
            let events = events.map(|p| read_with(&p, io::parse_floor_starts)).transpose()?;
            let cues = cues.map(|p| read_with(&p, io::parse_cues)).transpose()?;
            let injected = injected.map(|p| read_with(&p, io::parse_injected)).transpose()?;
            let r = evaluate(
                &truth,
                &pred,
                span,
                cfg.frame,
                cfg.match_window,
                EvalExtras {
                    events: events.as_deref(),
                    cues: cues.as_deref(),
                    injected: injected.as_deref(),
                },
            )?;
            fs::write(&report, serde_json::to_string_pretty(&r).expect("report serializes") + "\n")?;
            print!("{}", r.summary());
            Ok(())
        }
        Cmd::Render { session, out, labels } => {
            let b = SessionBundle::read_dir(&session)?;
            let labels = labels.map(|p| io::read_labels(&p, b.meta.span)).transpose()?;
            let svg = render_vad_diagram(&b.meta.participants, &b.segments, labels.as_deref(), b.meta.span)?;
            Ok(fs::write(out, svg)?)
        }
        Cmd::Mix {
            session,
            labels,
            out,
            cues,
            params,
        } => {
            let cfg = Config::load(params.as_deref())?;
            let b = SessionBundle::read_dir(&session)?;
            let labels = io::read_labels(&labels, b.meta.span)?;
            let cues = match cues {
                Some(p) => read_with(&p, io::parse_cues)?,
                None => b.cues.clone(),
            };
            let turns = build_turns(&group_segments(b.segments.iter().cloned()), cfg.engine.turn_gap);
            let asides = aside_overrides(&cues, &turns);
            let rows = gain_timeline(
                &b.meta.participants,
                &changes_from_labels(&labels),
                &b.segments,
                &asides,
                &cfg.mixer,
            )?;
            let mut w = csv::Writer::from_path(&out).map_err(csv_err)?;
            w.write_record(["listener", "speaker", "gain", "t_effective"]).map_err(csv_err)?;
            for r in rows {
                w.write_record([r.listener.as_str(), r.speaker.as_str(), &io::fx(r.gain), &io::fx(r.t_effective)])
                    .map_err(csv_err)?;
            }
            w.flush()?;
            Ok(())
        }
    }
}

fn read_with<T>(path: &Path, parse: impl Fn(&str, &str) -> Result<T>) -> Result<T> {
    parse(&fs::read_to_string(path)?, &path.display().to_string())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
