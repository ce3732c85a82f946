//! End-to-end command tests over the demo corpus.

mod common;

use std::fs;
use std::path::{Path, PathBuf};

use defkit::cli::{exit, main_with_args, RunManifest, MANIFEST_FILE};
use defkit::scorer::stub::{StubMode, StubServer};
use serde_json::Value;

fn demo(rel: &str) -> String {
    common::demo_dir().join(rel).display().to_string()
}

fn run(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("defkit").chain(args.iter().copied()))
}

fn lines(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn out_dir(tmp: &tempfile::TempDir, name: &str) -> (PathBuf, String) {
    let p = tmp.path().join(name);
    let s = p.display().to_string();
    (p, s)
}

#[test]
fn ablate_all_specs() {
    let tmp = tempfile::tempdir().unwrap();
    let (out, out_s) = out_dir(&tmp, "abl");
    let code = run(&["ablate", "--tasks", &demo("tasks"), "--annotations", &demo("annotations.jsonl"), "--spec", "all", "--out", &out_s]);
    assert_eq!(code, exit::SUCCESS);
    let jsonl: Vec<_> = fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "jsonl"))
        .collect();
    assert_eq!(jsonl.len(), 8);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 8);
    assert!(summary.starts_with("spec,tasks,%C\n"));

    let rows = lines(&out.join("label_list.jsonl"));
    assert_eq!(rows.len(), 3);
    let task1580 = rows.iter().find(|r| r["task_id"] == "task1580").unwrap();
    assert_eq!(task1580["ratio"], 1.0);
    for r in &rows {
        assert_eq!(r.as_object().unwrap().keys().collect::<Vec<_>>(), ["task_id", "spec", "text", "ratio"]);
    }
    let m = RunManifest::load(&out.join(MANIFEST_FILE)).unwrap();
    assert!(m.input_digests.keys().any(|k| k.ends_with("annotations.jsonl")));
    assert!(m.stale_inputs().is_empty());
}

#[test]
fn ablate_baselines() {
    let tmp = tempfile::tempdir().unwrap();
    let (out, out_s) = out_dir(&tmp, "abl");
    let code = run(&[
        "ablate", "--tasks", &demo("tasks"), "--annotations", &demo("annotations.jsonl"), "--spec", "label_list",
        "--baselines", "--out", &out_s,
    ]);
    assert_eq!(code, exit::SUCCESS);
    let meta = lines(&out.join("metadata.jsonl"));
    assert!(meta.iter().any(|r| r["text"]
        == "Category: Negation Detection. Reasoning type: Commonsense. Domain: News. Label list: Yes, No"));
    assert!(lines(&out.join("no_def.jsonl")).iter().all(|r| r["text"] == ""));
}

#[test]
fn usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, out_s) = out_dir(&tmp, "abl");
    assert_eq!(run(&["ablate", "--tasks", &demo("tasks"), "--out", &out_s]), exit::USAGE);
    assert_eq!(
        run(&["ablate", "--tasks", &demo("tasks"), "--annotations", &demo("annotations.jsonl"), "--spec", "bogus", "--out", &out_s]),
        exit::USAGE
    );
    // second run into a populated directory needs --force
    let args = ["ablate", "--tasks", &demo("tasks"), "--annotations", &demo("annotations.jsonl"), "--out", &out_s];
    assert_eq!(run(&args), exit::SUCCESS);
    assert_eq!(run(&args), exit::USAGE);
    let mut forced = args.to_vec();
    forced.push("--force");
    assert_eq!(run(&forced), exit::SUCCESS);
}

#[test]
fn ablate_missing_inputs_is_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, out_s) = out_dir(&tmp, "abl");
    let missing = tmp.path().join("nope.jsonl").display().to_string();
    assert_eq!(run(&["ablate", "--tasks", &demo("tasks"), "--annotations", &missing, "--out", &out_s]), exit::IO);
}

#[test]
fn ablate_validation_failure_continues() {
    let tmp = tempfile::tempdir().unwrap();
    let anns = tmp.path().join("anns.jsonl");
    // drop the record for task1292 and corrupt task383's spans
    let text: String = fs::read_to_string(demo("annotations.jsonl"))
        .unwrap()
        .lines()
        .filter(|l| !l.contains("task1292"))
        .map(|l| l.replace("\"end\": 103", "\"end\": 400") + "\n")
        .collect();
    fs::write(&anns, text).unwrap();
    let (out, out_s) = out_dir(&tmp, "abl");
    let code = run(&["ablate", "--tasks", &demo("tasks"), "--annotations", anns.to_str().unwrap(), "--spec", "all_input", "--out", &out_s]);
    assert_eq!(code, exit::VALIDATION);
    let rows = lines(&out.join("all_input.jsonl"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["task_id"], "task1580");
    assert_eq!(RunManifest::load(&out.join(MANIFEST_FILE)).unwrap().failures.len(), 2);
}

#[test]
fn compress_manifest_records_mode_and_epsilon() {
    let tmp = tempfile::tempdir().unwrap();
    let (out, out_s) = out_dir(&tmp, "cmp");
    let code = run(&[
        "compress", "--tasks", &demo("tasks"), "--parses", &demo("parses.txt"), "--backend", "planted", "--phrase", "a",
        "--fit-n", "2", "--holdout-n", "4", "--mode", "paper", "--epsilon", "0.01", "--allow-empty", "--out", &out_s,
    ]);
    assert_eq!(code, exit::SUCCESS);
    let raw: Value = serde_json::from_str(&fs::read_to_string(out.join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(raw["mode"], "paper");
    assert_eq!(raw["epsilon"], 0.01);
    assert_eq!(raw["config"]["epsilon"], 0.01);
    assert!(["single_tree", "joined_sentences", "mixed"].contains(&raw["tree_form"].as_str().unwrap()));
    assert!(raw["backend_id"].as_str().unwrap().starts_with("planted"));
}

#[test]
fn compress_planted_is_monotone() {
    let tmp = tempfile::tempdir().unwrap();
    let (out, out_s) = out_dir(&tmp, "cmp");
    let code = run(&[
        "compress", "--tasks", &demo("tasks"), "--parses", &demo("parses.txt"), "--backend", "planted", "--phrase", "a",
        "--fit-n", "2", "--holdout-n", "4", "--out", &out_s, "--annotations", &demo("annotations.jsonl"),
    ]);
    assert_eq!(code, exit::SUCCESS);
    for id in ["task1292", "task1580", "task383"] {
        let v: Value = serde_json::from_str(&fs::read_to_string(out.join(format!("{id}.json"))).unwrap()).unwrap();
        let c = &v["compression"];
        assert!(c["fit_score_after"].as_f64().unwrap() >= c["fit_score_before"].as_f64().unwrap());
        assert!(v["retention"].is_object());
    }
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let row: Vec<f64> = summary.lines().nth(1).unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert!(row[2] <= row[3], "before {} after {}", row[2], row[3]);
    assert!(out.join("retention.csv").exists());
}

#[test]
fn compress_unreachable_backend_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let (out, out_s) = out_dir(&tmp, "cmp");
    // bind then drop to get a port nobody listens on
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let url = format!("http://127.0.0.1:{port}/");
    let code = run(&[
        "compress", "--tasks", &demo("tasks"), "--parses", &demo("parses.txt"), "--backend", "remote", "--endpoint", &url,
        "--fit-n", "2", "--holdout-n", "2", "--timeout-secs", "2", "--out", &out_s,
    ]);
    assert_eq!(code, exit::BACKEND);
    let m = RunManifest::load(&out.join(MANIFEST_FILE)).unwrap();
    assert_eq!(m.failures.len(), 3);
}

#[test]
fn compress_rejects_misaligned_parse_file() {
    let tmp = tempfile::tempdir().unwrap();
    let parses = tmp.path().join("parses.txt");
    let first = fs::read_to_string(demo("parses.txt")).unwrap().lines().next().unwrap().to_string();
    fs::write(&parses, first + "\n").unwrap();
    let (_, out_s) = out_dir(&tmp, "cmp");
    let code = run(&[
        "compress", "--tasks", &demo("tasks"), "--parses", parses.to_str().unwrap(), "--backend", "keyword", "--out", &out_s,
    ]);
    assert_eq!(code, exit::VALIDATION);

    // an explicit task list selects and orders the tasks
    let list = tmp.path().join("tasks.txt");
    fs::write(&list, "task1292\n").unwrap();
    let (out2, out2_s) = out_dir(&tmp, "cmp2");
    let code = run(&[
        "compress", "--tasks", &demo("tasks"), "--parses", parses.to_str().unwrap(), "--task-list", list.to_str().unwrap(),
        "--backend", "keyword", "--fit-n", "2", "--holdout-n", "2", "--allow-empty", "--out", &out2_s,
    ]);
    assert_eq!(code, exit::SUCCESS);
    assert!(out2.join("task1292.json").exists());
}

fn write_scores(dir: &Path, name: &str, rows: &[&str]) -> String {
    let p = dir.join(name);
    fs::write(&p, rows.iter().map(|r| format!("{r}\n")).collect::<String>()).unwrap();
    p.display().to_string()
}

#[test]
fn report_delta_column() {
    let tmp = tempfile::tempdir().unwrap();
    let a = write_scores(tmp.path(), "full.jsonl", &[r#"{"task_id":"t1","kind":"generation","score":0.5}"#]);
    let b = write_scores(tmp.path(), "pruned.jsonl", &[r#"{"task_id":"t1","kind":"generation","score":0.75}"#]);
    let (out, out_s) = out_dir(&tmp, "rep");
    assert_eq!(run(&["report", &a, &b, "--out", &out_s]), exit::SUCCESS);
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    let pruned = csv.lines().find(|l| l.starts_with("pruned,")).unwrap();
    let cols: Vec<&str> = pruned.split(',').collect();
    assert_eq!(cols[5], "+0.2500");
    assert_eq!(cols[3], "-", "no classification tasks");
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["conditions"][1]["report"]["gen"], 0.75);
    assert!(report["conditions"][1]["report"]["cls"].is_null());
}

#[test]
fn report_seen_grouping() {
    let tmp = tempfile::tempdir().unwrap();
    let train = tmp.path().join("train");
    fs::create_dir(&train).unwrap();
    let mut t = common::simple_task(
        "train1",
        "Say yes or no.",
        defkit::TaskKind::Classification,
        Some(vec!["no".into(), "YES".into()]),
        vec![defkit::Instance { id: "i".into(), input: "x".into(), references: vec!["yes".into()] }],
    );
    fs::write(train.join("train1.json"), t.to_json_string()).unwrap();
    t.id = "other".into();
    t.label_list = Some(vec!["True".into(), "False".into()]);
    fs::write(train.join("other.json"), t.to_json_string()).unwrap();

    let a = write_scores(tmp.path(), "full.jsonl", &[r#"{"task_id":"task383","score":0.9}"#]);
    let b = write_scores(tmp.path(), "no_labels.jsonl", &[r#"{"task_id":"task383","score":0.6}"#]);
    let (out, out_s) = out_dir(&tmp, "rep");
    let code = run(&["report", &a, &b, "--tasks", &demo("tasks"), "--train-tasks", train.to_str().unwrap(), "--out", &out_s]);
    assert_eq!(code, exit::SUCCESS);
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let groups = &report["conditions"][1]["groups"];
    assert_eq!(groups["seen_tasks"], 1);
    assert_eq!(groups["unseen_tasks"], 0);
    assert!(fs::read_to_string(out.join("verbalizers.csv")).unwrap().contains("seen,no_labels,1,0.6000,-0.3000"));
}

#[test]
fn report_rejects_empty_and_malformed_input() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = write_scores(tmp.path(), "empty.jsonl", &[]);
    assert_eq!(run(&["report", &empty]), exit::IO);
    let bad = write_scores(tmp.path(), "bad.jsonl", &["{not json"]);
    assert_eq!(run(&["report", &bad]), exit::IO);
    let kindless = write_scores(tmp.path(), "k.jsonl", &[r#"{"task_id":"t","score":0.1}"#]);
    assert_eq!(run(&["report", &kindless]), exit::IO);
}

#[test]
fn triplet_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let (out, out_s) = out_dir(&tmp, "tri");
    let args = ["triplet", "--tasks", &demo("tasks"), "--annotations", &demo("annotations.jsonl"), "--parses", &demo("parses.txt")];
    let mut a = args.to_vec();
    a.extend(["--out", &out_s]);
    assert_eq!(run(&a), exit::SUCCESS);
    let triplets = lines(&out.join("triplets.jsonl"));
    assert_eq!(triplets.len(), 3);
    let t6 = triplets.iter().find(|t| t["task_id"] == "task1580").unwrap();
    assert_eq!(t6["input"][0], "a statement");
    assert_eq!(t6["output"][0], "a question");
    assert_eq!(t6["needs_review"], false);
    let meta = lines(&out.join("meta_tuning.jsonl"));
    assert_eq!(meta.len(), 9);
    assert_eq!(meta[0].as_object().unwrap().keys().collect::<Vec<_>>(), ["tag", "source", "target"]);

    let (out2, out2_s) = out_dir(&tmp, "tri2");
    let mut a = args.to_vec();
    a.extend(["--out", &out2_s, "--split-output"]);
    assert_eq!(run(&a), exit::SUCCESS);
    // task383 has a label list entry plus one label definition
    assert_eq!(lines(&out2.join("meta_tuning.jsonl")).len(), 10);
}

#[test]
fn score_against_stub_forwards_decoding_fields() {
    let stub = StubServer::start(StubMode::Echo).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("scores/full.jsonl");
    let code = run(&[
        "score", "--tasks", &demo("tasks"), "--task", "task1292", "--backend", "remote", "--endpoint", &stub.url(),
        "--n", "5", "--seed", "42", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code, exit::SUCCESS);
    let rows = lines(&out);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["n_instances"], 5);
    assert_eq!(rows[0]["condition"], "full");
    let body = &stub.bodies()[0];
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["seed"], 42);
    assert_eq!(body["max_new_tokens"], 128);
    let m: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("scores/full.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["backend_calls"], 1);
}

#[test]
fn score_misaligned_stub_exits_3() {
    let stub = StubServer::start(StubMode::Misaligned).unwrap();
    let code = run(&["score", "--tasks", &demo("tasks"), "--task", "task383", "--backend", "remote", "--endpoint", &stub.url()]);
    assert_eq!(code, exit::BACKEND);
}

#[test]
fn score_variants_and_definitions_file() {
    let tmp = tempfile::tempdir().unwrap();
    let (abl, abl_s) = out_dir(&tmp, "abl");
    assert_eq!(
        run(&["ablate", "--tasks", &demo("tasks"), "--annotations", &demo("annotations.jsonl"), "--spec", "label_list", "--out", &abl_s]),
        exit::SUCCESS
    );
    let out = tmp.path().join("ll.jsonl");
    let code = run(&[
        "score", "--tasks", &demo("tasks"), "--backend", "keyword", "--definitions",
        abl.join("label_list.jsonl").to_str().unwrap(), "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code, exit::SUCCESS);
    let rows = lines(&out);
    assert_eq!(rows.len(), 3);
    let t383 = rows.iter().find(|r| r["task_id"] == "task383").unwrap();
    assert_eq!(t383["condition"], "label_list");
    assert_eq!(t383["score"], 0.0, "labels removed, keyword backend cannot answer");

    let nodef = tmp.path().join("nodef.jsonl");
    assert_eq!(
        run(&["score", "--tasks", &demo("tasks"), "--backend", "keyword", "--variant", "no-def", "--out", nodef.to_str().unwrap()]),
        exit::SUCCESS
    );
    assert!(lines(&nodef).iter().all(|r| r["condition"] == "no_def" && r["score"] == 0.0));
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(run(&["--help"]), exit::SUCCESS);
    assert_eq!(run(&["--version"]), exit::SUCCESS);
}
