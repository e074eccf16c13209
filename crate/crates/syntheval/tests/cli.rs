mod common;

use std::process::Command;

use syntheval::cli::run_captured;
use syntheval::core::lexicon::validate_lexicon;
use syntheval::store::{load_records, read_json, RunManifest};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_syntheval"))
}

#[test]
fn no_arguments_prints_usage_and_exits_1() {
    let out = bin().output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("Usage"), "{text}");
}

#[test]
fn missing_run_dir_is_a_usage_error() {
    let out = bin().args(["expand", "--template", "negation1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--run-dir"));
}

#[test]
fn runtime_failures_exit_2() {
    let ws = common::workbench();
    let out = bin().arg("--run-dir").arg(ws.path()).args(["expand", "--template", "no_such_template"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_template"));
}

#[test]
fn expand_prints_the_case_count() {
    let ws = common::workbench();
    for (name, count) in [("negation1", "1411"), ("negation1_pos", "2988"), ("past_tense_rev_first_pos", "26892")] {
        let out = bin().arg("--run-dir").arg(ws.path()).args(["expand", "--template", name]).output().unwrap();
        assert_eq!(out.status.code(), Some(0));
        assert_eq!(String::from_utf8(out.stdout).unwrap(), format!("{count}\n"));
    }
    let out = bin()
        .arg("--run-dir")
        .arg(ws.path())
        .args(["expand", "--template", "templates/negation1.json", "--out", "cases.jsonl"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let cases: Vec<syntheval::core::template::ExpandedCase> = load_records(ws.path().join("cases.jsonl")).unwrap();
    assert_eq!(cases.len(), 1411);
    assert_eq!(cases[1410].case_index, 1410);
}

#[test]
fn perturb_writes_loadable_lexicons() {
    let ws = common::workbench();
    let root = ws.path().to_str().unwrap();
    let out = run_captured(common::args(["--run-dir", root, "--seed", "4", "perturb", "typo", "--term", "movie", "--name", "TYPO"])).unwrap();
    assert!(out.starts_with("50 entries"), "{out}");
    let text = std::fs::read_to_string(ws.path().join("lexicons/TYPO.lex")).unwrap();
    assert_eq!(validate_lexicon("TYPO", &text).unwrap().len(), 50);

    run_captured(common::args(["--run-dir", root, "perturb", "nonsense", "--count", "20", "--name", "JUNK"])).unwrap();
    let text = std::fs::read_to_string(ws.path().join("lexicons/JUNK.lex")).unwrap();
    let junk = validate_lexicon("JUNK", &text).unwrap();
    assert_eq!(junk.len(), 20);
    assert!(junk.entries().iter().all(|e| (60..=70).contains(&e.len()) && !e.chars().any(char::is_alphabetic)));
}

#[test]
fn end_to_end_report_matches_golden() {
    let ws = common::workbench();
    let root = ws.path().to_str().unwrap();
    let mocks = common::BackgroundMocks::start();
    for (model, url) in [("mock-blind", mocks.blind.base_url()), ("mock-aware", mocks.aware.base_url())] {
        for template in ["affirmative_pos", "negation1", "negation1_pos"] {
            let args = ["--run-dir", root, "--deterministic", "--backend-url", &url, "--model-id", model, "verify", "--template", template];
            let out = run_captured(common::args(args)).unwrap();
            assert!(out.starts_with(&format!("{template} / {model}: ")), "{out}");
        }
    }
    let report = run_captured(common::args(["--run-dir", root, "report"])).unwrap();
    let golden = std::fs::read_to_string(common::fixtures().join("e2e/report.golden.md")).unwrap();
    assert_eq!(report, golden);

    let csv = run_captured(common::args(["--run-dir", root, "report", "--format", "csv"])).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "template,test_type,gold_label,mock-aware,mock-blind");
    assert_eq!(csv.lines().nth(3).unwrap(), "negation1_pos,Negation,negative,100,0");

    let m: RunManifest = read_json(ws.path().join("runs/default/verify/manifests/negation1__mock-blind.json")).unwrap();
    assert_eq!((m.counts["cases"], m.counts["correct"]), (1411, 0));
    assert_eq!(m.started_at, "1970-01-01T00:00:00Z");
    assert_eq!(m.outputs[0].path, "runs/default/verify/negation1__mock-blind.json");
}
