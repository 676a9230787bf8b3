use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use lrk_cli::serve::{serve_lines, ScoreResponse, ServeContext};
use lrk_core::geometry::BBox;
use lrk_core::layout::{parse_document, serialize_document, Category, LayerRecord};
use lrk_core::render::RasterImage;
use lrk_core::reward::{vra_total, RewardWeights};
use lrk_core::LayoutDocument;
use proptest::prelude::*;
use serde_json::Value;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/world_cancer_day.json")
}

fn lrk(args: &[&str]) -> Output {
    lrk_env(args, &[])
}

fn lrk_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_lrk"));
    cmd.args(args)
        .env_remove("LRK_SEED")
        .env_remove("LRK_WEIGHTS")
        .env_remove("LRK_CONFIG");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn json_out(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout)
        .unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&o.stdout)))
}

fn small_doc() -> LayoutDocument {
    let layers = vec![
        LayerRecord::new("title", Category::Text, BBox::new(10.0, 10.0, 60.0, 20.0).unwrap(), 0)
            .with_asset("title.png"),
        LayerRecord::new("bg", Category::Background, BBox::new(0.0, 0.0, 80.0, 60.0).unwrap(), 1).with_asset("bg.png"),
    ];
    LayoutDocument::new(80.0, 60.0, layers).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn validate_reports_the_fixture() {
    let o = lrk(&["validate", fixture().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let v = json_out(&o);
    assert_eq!(v["layers"], 10);
    assert_eq!(v["canvas"], "1748x2480");
    assert_eq!(v["statistics"]["original_layers"], 17);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", "{\"canvas_size\": {\"width\": 10}}");
    let o = lrk(&["validate", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("height"));

    let o = lrk(&["validate", "--frobnicate", "x"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--frobnicate"));

    assert_eq!(lrk(&[]).status.code(), Some(2));
    assert_eq!(lrk(&["advantage", "--rewards", "1,x"]).status.code(), Some(2));
    assert_eq!(
        lrk(&["perturb", fixture().to_str().unwrap(), "--sigma", "-1"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(lrk(&["--help"]).status.code(), Some(0));
}

#[test]
fn reward_matches_the_library() {
    let f = fixture();
    let o = lrk(&["reward", "--pred", f.to_str().unwrap(), "--gt", f.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&f).unwrap();
    let lib = vra_total(&text, &parse_document(&text).unwrap(), &RewardWeights::default()).unwrap();
    assert_eq!(
        String::from_utf8(o.stdout).unwrap(),
        serde_json::to_string_pretty(&lib).unwrap() + "\n"
    );
    assert_eq!(lib.total, 30.0);
}

#[test]
fn reward_weights_and_rlaf() {
    let dir = tempfile::tempdir().unwrap();
    let doc = write(dir.path(), "sample-7.json", &serialize_document(&small_doc()));
    let d = doc.to_str().unwrap();
    let v = json_out(&lrk(&[
        "reward",
        "--pred",
        d,
        "--gt",
        d,
        "--weights",
        r#"{"lambda_size": 1.0}"#,
    ]));
    assert_eq!(v["total"], 34.0);
    let v = json_out(&lrk_env(
        &["reward", "--pred", d, "--gt", d],
        &[("LRK_WEIGHTS", r#"{"lambda_ar": 0.0}"#)],
    ));
    assert_eq!(v["total"], 26.0);

    let v = json_out(&lrk(&["reward", "--mode", "rlaf", "--pred", d, "--aes-score", "3.5"]));
    assert_eq!(v["total"], 17.0);
    let scores = write(dir.path(), "scores.json", r#"{"sample-7": 4.0}"#);
    let v = json_out(&lrk(&[
        "reward",
        "--mode",
        "rlaf",
        "--pred",
        d,
        "--scores",
        scores.to_str().unwrap(),
    ]));
    assert_eq!(v["aesthetic"], 4.0);
    assert_eq!(lrk(&["reward", "--mode", "rlaf", "--pred", d]).status.code(), Some(2));
}

#[test]
fn advantage_example() {
    let o = lrk(&["advantage", "--rewards", "1,3"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(json_out(&o), serde_json::json!([-1.0, 1.0]));
    assert_eq!(
        json_out(&lrk(&["advantage", "--rewards", "-2,2,6"])),
        serde_json::json!([-4.0, 0.0, 4.0])
    );
}

#[test]
fn perturb_is_seeded_and_layered() {
    let f = fixture();
    let f = f.to_str().unwrap();
    let a = lrk(&["perturb", f, "--n", "3", "--seed", "11"]);
    assert_eq!(a.status.code(), Some(0));
    let docs = json_out(&a);
    assert_eq!(docs.as_array().unwrap().len(), 3);
    for d in docs.as_array().unwrap() {
        parse_document(&d.to_string()).unwrap().validate().unwrap();
    }
    let meta: Value = serde_json::from_slice(a.stderr.trim_ascii()).unwrap();
    assert_eq!(meta["seed"], 11);
    assert!(meta["generator"].as_str().unwrap().contains("chacha20"));

    let env_seeded = lrk_env(&["perturb", f, "--n", "3"], &[("LRK_SEED", "11")]);
    assert_eq!(env_seeded.stdout, a.stdout);
    let flag_wins = lrk_env(&["perturb", f, "--n", "3", "--seed", "12"], &[("LRK_SEED", "11")]);
    assert_ne!(flag_wins.stdout, a.stdout);
}

#[test]
fn print_config_shows_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "lrk.toml",
        "seed = 1\n[perturb]\nsigma = 7.0\nn = 9\n[weights]\ncap = 4.0\n",
    );
    let o = lrk_env(
        &[
            "--config",
            cfg.to_str().unwrap(),
            "--print-config",
            "perturb",
            "x.json",
            "--sigma",
            "3",
        ],
        &[("LRK_SEED", "2")],
    );
    assert_eq!(o.status.code(), Some(0));
    let v = json_out(&o);
    let s = &v["settings"];
    assert_eq!(s["seed"], 2);
    assert_eq!(s["perturb"]["sigma"], 3.0);
    assert_eq!(s["perturb"]["n"], 9);
    assert_eq!(s["weights"]["cap"], 4.0);
    assert_eq!(s["weights"]["lambda_size"], 0.6);
    assert_eq!(v["sources"]["flags"], serde_json::json!(["perturb.sigma"]));

    let broken = write(dir.path(), "broken.toml", "seed = \"many\"\n");
    assert_eq!(
        lrk(&["--config", broken.to_str().unwrap(), "--print-config"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn metrics_over_directories() {
    let dir = tempfile::tempdir().unwrap();
    let (pred, gt) = (dir.path().join("pred"), dir.path().join("gt"));
    std::fs::create_dir_all(&pred).unwrap();
    std::fs::create_dir_all(&gt).unwrap();
    let doc = serialize_document(&small_doc());
    for name in ["a.json", "b.json"] {
        write(&gt, name, &doc);
    }
    write(&pred, "a.json", &doc);
    let mut shifted = small_doc();
    shifted.layers[0].bbox.x += 10.0;
    write(&pred, "b.json", &serialize_document(&shifted));

    let o = lrk(&[
        "metrics",
        "--pred",
        pred.to_str().unwrap(),
        "--gt",
        gt.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v = json_out(&o);
    assert_eq!(v["documents"][0]["report"]["mean_iou"], 1.0);
    assert!(v["documents"][1]["report"]["mean_iou"].as_f64().unwrap() < 1.0);
    assert_eq!(v["summary"]["documents"], 2);

    write(&pred, "b.json", "{ nope");
    let o = lrk(&[
        "metrics",
        "--pred",
        pred.to_str().unwrap(),
        "--gt",
        gt.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let v = json_out(&o);
    assert_eq!(v["failures"], 1);
    assert!(v["documents"][1]["error"].is_string());
}

#[test]
fn merge_command_emits_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let layers = r#"[
        {"src": "WORLD", "category": "type", "x": 100, "y": 100, "w": 80, "h": 30, "order": 2},
        {"src": "DAY", "category": "type", "x": 190, "y": 102, "w": 60, "h": 28, "order": 1},
        {"src": "bg", "category": "pixel", "x": 0, "y": 0, "w": 400, "h": 400, "order": 5},
        {"src": "offscreen", "category": "pixel", "x": 900, "y": 900, "w": 40, "h": 40, "order": 0}
    ]"#;
    let ocr = r#"[{"bbox": [95, 95, 255, 135], "category": "Title", "text": "WORLD DAY"}]"#;
    let l = write(dir.path(), "layers.json", layers);
    let r = write(dir.path(), "ocr.json", ocr);
    let o = lrk(&[
        "merge",
        "--layers",
        l.to_str().unwrap(),
        "--ocr",
        r.to_str().unwrap(),
        "--canvas",
        "400",
        "400",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let doc = parse_document(std::str::from_utf8(&o.stdout).unwrap()).unwrap();
    let s = doc.stats.unwrap();
    assert_eq!(
        (
            s.original_layers,
            s.valid_layers,
            s.merged_groups,
            s.out_of_bounds_layers
        ),
        (4, 3, 2, 1)
    );
    assert_eq!(doc.layers[0].merged_names, vec!["WORLD", "DAY"]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("pending_assets"));

    let policy = write(dir.path(), "policy.json", r#"{"contain_fraction": 1.5}"#);
    let o = lrk(&[
        "merge",
        "--layers",
        l.to_str().unwrap(),
        "--ocr",
        r.to_str().unwrap(),
        "--canvas",
        "400",
        "400",
        "--policy",
        policy.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn render_writes_a_png() {
    let dir = tempfile::tempdir().unwrap();
    let doc = small_doc();
    let path = write(dir.path(), "doc.json", &serialize_document(&doc));
    RasterImage::filled(60, 20, [200, 0, 0, 255])
        .save_png(&dir.path().join("title.png"))
        .unwrap();
    RasterImage::filled(8, 6, [0, 0, 200, 255])
        .save_png(&dir.path().join("bg.png"))
        .unwrap();
    let out = dir.path().join("poster.png");
    let o = lrk(&[
        "render",
        path.to_str().unwrap(),
        "--assets",
        dir.path().to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let img = RasterImage::load_png(&out).unwrap();
    assert_eq!((img.width, img.height), (80, 60));
    assert_eq!(img.pixel(15, 15), [200, 0, 0, 255]);
    assert_eq!(img.pixel(2, 50), [0, 0, 200, 255]);

    std::fs::remove_file(dir.path().join("bg.png")).unwrap();
    let o = lrk(&[
        "render",
        path.to_str().unwrap(),
        "--assets",
        dir.path().to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bg#1"));
}

#[test]
fn analyze_outputs_map_and_pgm() {
    let dir = tempfile::tempdir().unwrap();
    let pgm = dir.path().join("det.pgm");
    let o = lrk(&[
        "analyze",
        "--repr",
        "euclidean",
        "--domain",
        "12",
        "8",
        "--pgm",
        pgm.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v = json_out(&o);
    assert_eq!(v["values"].as_array().unwrap().len(), 96);
    assert_eq!(v["summary"]["mean"], 1.0);
    let bytes = std::fs::read(&pgm).unwrap();
    assert!(bytes.starts_with(b"P5\n12 8\n255\n"));

    let o = lrk(&[
        "analyze",
        "--repr",
        "token-avg",
        "--domain",
        "20",
        "20",
        "--window",
        "4",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn serve_over_tcp() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_lrk"))
        .args(["serve", "--port", "0", "--workers", "2"])
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut err = BufReader::new(child.stderr.take().unwrap());
    let mut line = String::new();
    err.read_line(&mut line).unwrap();
    let addr = line
        .trim()
        .strip_prefix("listening on ")
        .expect("address line")
        .to_string();

    let stream = std::net::TcpStream::connect(&addr).unwrap();
    let doc = serialize_document(&small_doc());
    let mut w = stream.try_clone().unwrap();
    writeln!(w, "{}", serde_json::json!({"id": "one", "pred": doc, "gt": doc})).unwrap();
    writeln!(w, "{{").unwrap();
    w.flush().unwrap();
    let mut r = BufReader::new(stream);
    let mut ids = HashSet::new();
    for _ in 0..2 {
        let mut l = String::new();
        r.read_line(&mut l).unwrap();
        let resp: ScoreResponse = serde_json::from_str(&l).unwrap();
        if resp.id == "one" {
            assert_eq!(resp.breakdown.unwrap().total, 30.0);
        }
        ids.insert(resp.id);
    }
    assert_eq!(ids, HashSet::from(["one".to_string(), "line:2".to_string()]));
    assert!(child.try_wait().unwrap().is_none());
    child.kill().unwrap();
    child.wait().unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_line_gets_one_response(lines in prop::collection::vec("[^\n\r]{0,40}", 0..20), workers in 1usize..5) {
        let input: String = lines.iter().map(|l| format!("{l}\n")).collect();
        let mut out = Vec::new();
        let stats = serve_lines(input.as_bytes(), &mut out, &ServeContext::default(), workers).unwrap();
        let expected = lines.iter().filter(|l| !l.chars().all(|c| c == ' ' || c == '\t')).count();
        prop_assert_eq!(stats.requests, expected);
        prop_assert_eq!(stats.responses, expected);
        let text = String::from_utf8(out).unwrap();
        let responses: Vec<ScoreResponse> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        prop_assert_eq!(responses.len(), expected);
        let ids: HashSet<&str> = responses.iter().map(|r| r.id.as_str()).collect();
        prop_assert_eq!(ids.len(), expected);
    }
}
