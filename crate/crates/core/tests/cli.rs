use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use floorsight::io::{read_labels, SessionBundle, LABELS_FILE};
use floorsight::model::validate_label_set;

fn floorsight(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_floorsight"))
        .args(args)
        .env_remove("FLOORSIGHT_CONFIG")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn simulate_infer_eval_render_mix() {
    let tmp = tempfile::tempdir().unwrap();
    let s1 = tmp.path().join("s1");
    let out = tmp.path().join("out");
    let o = floorsight(&["simulate", "--preset", "youth", "--duration", "3600", "--seed", "42", "--out", p(&s1)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["segments.jsonl", "tokens.jsonl", "truth.csv", "meta.json"] {
        assert!(s1.join(f).is_file(), "missing {f}");
    }
    let bundle = SessionBundle::read_dir(&s1).unwrap();
    let truth = bundle.truth.clone().unwrap();
    assert!(validate_label_set(&truth, bundle.meta.span).is_empty());

    let o = floorsight(&["infer", "--session", p(&s1), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let labels = read_labels(&out.join(LABELS_FILE), bundle.meta.span).unwrap();
    assert!(!labels.is_empty());

    let report = tmp.path().join("report.json");
    let o = floorsight(&[
        "eval",
        "--truth",
        p(&s1.join("truth.csv")),
        "--pred",
        p(&out.join(LABELS_FILE)),
        "--events",
        p(&out.join("events.jsonl")),
        "--injected",
        p(&s1.join("injected.jsonl")),
        "--report",
        p(&report),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let a = v["pairwise_agreement"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&a));
    assert!(v["detection_latency"].is_object());

    let svg = tmp.path().join("d.svg");
    let o = floorsight(&["render", "--session", p(&s1), "--labels", p(&out.join(LABELS_FILE)), "--out", p(&svg)]);
    assert!(o.status.success());
    let text = fs::read_to_string(&svg).unwrap();
    assert!(text.starts_with("<svg") && text.trim_end().ends_with("</svg>"));

    let gains = tmp.path().join("gains.csv");
    let o = floorsight(&["mix", "--session", p(&s1), "--labels", p(&out.join(LABELS_FILE)), "--out", p(&gains)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&gains).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("listener,speaker,gain,t_effective"));
    let n = bundle.meta.participants.len();
    let first: Vec<&str> = lines.clone().take_while(|l| l.ends_with(",0.000")).collect();
    assert_eq!(first.len(), n * (n - 1));
    for l in lines {
        let f: Vec<&str> = l.split(',').collect();
        assert_eq!(f.len(), 4);
        assert_ne!(f[0], f[1]);
        let g: f64 = f[2].parse().unwrap();
        assert!((0.0..=1.0).contains(&g));
    }
}

#[test]
fn wav_round_trip_through_vad() {
    let tmp = tempfile::tempdir().unwrap();
    let s = tmp.path().join("s");
    let o = floorsight(&["simulate", "--preset", "pilot", "--duration", "120", "--seed", "3", "--out", p(&s), "--wav"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let seg = tmp.path().join("segments.jsonl");
    let o = floorsight(&["vad", "--wav-dir", p(&s.join("wav")), "--out", p(&seg)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let got = floorsight::io::read_segments(&seg).unwrap();
    let want = floorsight::io::read_segments(&s.join("segments.jsonl")).unwrap();
    assert!(!got.is_empty());
    // every simulated segment is recovered by a segment of the same speaker
    let hit = want
        .iter()
        .filter(|w| {
            got.iter()
                .any(|g| g.participant == w.participant && g.t0 < w.t1 && w.t0 < g.t1)
        })
        .count();
    assert!(hit as f64 >= 0.95 * want.len() as f64, "{hit}/{}", want.len());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = floorsight(&["simulate", "--preset", "bogus", "--out", p(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("UNKNOWN_PRESET"));

    let o = floorsight(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));

    let o = floorsight(&["infer", "--session", p(tmp.path()), "--out", p(tmp.path()), "--bogus-flag"]);
    assert_eq!(o.status.code(), Some(2));

    let o = floorsight(&["infer", "--session", p(&tmp.path().join("missing")), "--out", p(tmp.path())]);
    assert_eq!(o.status.code(), Some(1));

    // malformed segments are a validation error
    let s = tmp.path().join("bad");
    fs::create_dir_all(&s).unwrap();
    fs::write(s.join("meta.json"), r#"{"participants":["a","b"],"span":10.0}"#).unwrap();
    fs::write(s.join("segments.jsonl"), "{\"p\":\"a\",\"t0\":1.0}\n").unwrap();
    let o = floorsight(&["infer", "--session", p(&s), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));

    let o = floorsight(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn config_file_and_env() {
    let tmp = tempfile::tempdir().unwrap();
    let s = tmp.path().join("s");
    assert!(floorsight(&["simulate", "--preset", "youth", "--duration", "300", "--seed", "9", "--out", p(&s)])
        .status
        .success());
    let bad = tmp.path().join("bad.conf");
    fs::write(&bad, "engine.no_such_key = 1\n").unwrap();
    let o = floorsight(&["infer", "--session", p(&s), "--out", p(&tmp.path().join("o")), "--params", p(&bad)]);
    assert_eq!(o.status.code(), Some(2));

    let quiet = tmp.path().join("quiet.conf");
    fs::write(&quiet, "# quieter cross-floor\nmixer.cross_floor_gain = 0.25\n").unwrap();
    let labels = tmp.path().join("o");
    assert!(floorsight(&["infer", "--session", p(&s), "--out", p(&labels)]).status.success());
    let gains = tmp.path().join("g.csv");
    let o = Command::new(env!("CARGO_BIN_EXE_floorsight"))
        .args(["mix", "--session", p(&s), "--labels", p(&labels.join(LABELS_FILE)), "--out", p(&gains)])
        .env("FLOORSIGHT_CONFIG", &quiet)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&gains).unwrap();
    assert!(text.lines().nth(1).unwrap().contains(",0.250,"));
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut digests = Vec::new();
    for run in ["a", "b"] {
        let s = tmp.path().join(run).join("s");
        let o = tmp.path().join(run).join("o");
        assert!(floorsight(&["simulate", "--preset", "youth", "--duration", "900", "--seed", "11", "--out", p(&s)])
            .status
            .success());
        assert!(floorsight(&["infer", "--session", p(&s), "--out", p(&o)]).status.success());
        let svg = tmp.path().join(run).join("d.svg");
        assert!(floorsight(&["render", "--session", p(&s), "--labels", p(&o.join(LABELS_FILE)), "--out", p(&svg)])
            .status
            .success());
        let mut files = Vec::new();
        for dir in [&s, &o] {
            let mut names: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
            names.sort();
            for f in names {
                files.push((f.file_name().unwrap().to_owned(), fs::read(&f).unwrap()));
            }
        }
        files.push(("d.svg".into(), fs::read(&svg).unwrap()));
        digests.push(files);
    }
    assert_eq!(digests[0], digests[1]);
}
