use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use robustlab::RasterImage;

const NAMES: [&str; 6] = ["noise", "lens_blur", "darkness", "compression", "graffiti", "shifting"];

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_robustlab"));
    for k in ["ROBUSTLAB_CONFIG", "ROBUSTLAB_SEED", "ROBUSTLAB_WORKERS"] {
        c.env_remove(k);
    }
    c.stdin(Stdio::null());
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout)
        .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

fn sha(path: &Path) -> String {
    format!("{:x}", Sha256::digest(fs::read(path).unwrap()))
}

fn image(k: u32) -> RasterImage {
    let (w, h) = (24u32, 24u32);
    let data = (0..w * h)
        .flat_map(|i| {
            let (x, y) = (i % w, i / w);
            [(x * 9 + k * 40) as u8, (y * 7 + k * 11) as u8, ((x ^ y) * 5) as u8]
        })
        .collect();
    RasterImage::new(w, h, data).unwrap()
}

fn write_image(dir: &Path) -> PathBuf {
    let p = dir.join("in.png");
    image(0).save_png(&p).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn degrade_at_zero_intensity_keeps_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_image(dir.path());
    let out = dir.path().join("out.png");
    let o = run(&["degrade", "-i", s(&input), "-o", s(&out), "--type", "noise", "--intensity", "0"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = stdout_json(&o);
    assert_eq!(summary["input_hash"], summary["output_hash"]);
    assert_eq!(summary["distortion_score"], 0.0);
    assert_eq!(RasterImage::load(&out).unwrap(), image(0));
    assert!(dir.path().join("out.recipe.json").exists());
}

#[test]
fn sampled_degradation_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_image(dir.path());
    let mut files = Vec::new();
    for name in ["a.png", "b.png"] {
        let out = dir.path().join(name);
        let o = run(&["--seed", "7", "degrade", "-i", s(&input), "-o", s(&out), "--sample"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        files.push((out.clone(), out.with_file_name(name.replace(".png", ".recipe.json"))));
    }
    assert_eq!(fs::read(&files[0].1).unwrap(), fs::read(&files[1].1).unwrap());
    assert_eq!(sha(&files[0].0), sha(&files[1].0));
    let other = dir.path().join("c.png");
    let o = run(&["--seed", "8", "degrade", "-i", s(&input), "-o", s(&other), "--sample"]);
    assert_eq!(code(&o), 0);
    assert_ne!(fs::read(&files[0].1).unwrap(), fs::read(dir.path().join("c.recipe.json")).unwrap());
}

#[test]
fn degrade_from_recipe_file_and_bad_recipes() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_image(dir.path());
    let out = dir.path().join("out.png");
    let recipe = dir.path().join("r.json");
    fs::write(&recipe, r#"{"specs":[{"type":"darkness","intensity":0.5}],"seed":3}"#).unwrap();
    let o = run(&["degrade", "-i", s(&input), "-o", s(&out), "--recipe", s(&recipe)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout_json(&o)["distortion_score"].as_f64().unwrap() > 0.0);

    for bad in [
        r#"{"specs":[{"type":"darkness","intensity":1.5}],"seed":3}"#,
        r#"{"specs":[{"type":"smudge","intensity":0.5}],"seed":3}"#,
        r#"{"specs":[],"seed":3}"#,
        "not json",
    ] {
        fs::write(&recipe, bad).unwrap();
        let o = run(&["degrade", "-i", s(&input), "-o", s(&out), "--recipe", s(&recipe)]);
        assert_eq!(code(&o), 2, "{bad}");
        assert!(!o.stderr.is_empty());
    }
    let o = run(&["degrade", "-i", s(&dir.path().join("missing.png")), "-o", s(&out), "--type", "noise", "--intensity", "0.2"]);
    assert_eq!(code(&o), 2);
    let o = run(&["degrade", "-i", s(&input), "-o", s(&out)]);
    assert_eq!(code(&o), 2);
}

fn chain_text(specs: &[(usize, f64)], words: [usize; 3]) -> String {
    let body: Vec<String> = specs.iter().map(|(t, v)| format!("{}: {v:.2}", NAMES[*t])).collect();
    let w = |n: usize| vec!["word"; n].join(" ");
    format!(
        "<TYPE>{}<TYPE_END><INFLUENCE>{}<INFLUENCE_END><REASONING>{}<REASONING_END><CONCLUSION>{}<CONCLUSION_END>",
        body.join("\n"),
        w(words[0]),
        w(words[1]),
        w(words[2].max(1)),
    )
}

fn chain_json(specs: &[(usize, f64)], words: [usize; 3]) -> Value {
    let w = |n: usize| vec!["word"; n].join(" ");
    json!({
        "degradations": specs.iter().map(|(t, v)| json!({"type": NAMES[*t], "intensity": v})).collect::<Vec<_>>(),
        "influence": w(words[0]),
        "reasoning": w(words[1]),
        "conclusion": w(words[2].max(1)),
    })
}

#[test]
fn score_identical_single_degradation() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dir.path().join("pairs.jsonl");
    let specs = [(0, 0.4)];
    let line = json!({"candidate": chain_text(&specs, [3, 5, 2]), "truth": chain_json(&specs, [3, 5, 2])});
    fs::write(&pairs, format!("{line}\n{line}\n")).unwrap();
    let out = dir.path().join("scores.jsonl");
    let o = run(&["score", s(&pairs), "-o", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = stdout_json(&o);
    assert_eq!(summary["mean_total"], 2.0);
    assert_eq!(summary["scored"], 2);
    for l in fs::read_to_string(&out).unwrap().lines() {
        let v: Value = serde_json::from_str(l).unwrap();
        assert_eq!((v["r_deg"].as_f64(), v["r_len"].as_f64()), (Some(1.0), Some(1.0)));
    }
}

#[test]
fn score_rejects_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "\n\n").unwrap();
    let o = run(&["score", s(&empty)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("EmptyInput"));
}

fn literal(pred: &[(usize, f64)], truth: &[(usize, f64)]) -> f64 {
    let mut total = 0.0;
    for p in pred {
        for t in truth {
            total += if p.0 == t.0 { 1.0 - (p.1 - t.1).abs() } else { -1.0 };
        }
    }
    total
}

#[test]
fn score_matches_oracle_on_random_fixture() {
    let mut rng = Xoshiro256StarStar::seed_from_u64(1000);
    let mut below = |n: u64| rng.next_u64() % n;
    let dir = tempfile::tempdir().unwrap();
    let mut lines = String::new();
    let mut expected = Vec::new();
    for _ in 0..1000 {
        let mut gen = |min: u64| -> Vec<(usize, f64)> {
            (0..min + below(5 - min)).map(|_| (below(6) as usize, below(101) as f64 / 100.0)).collect()
        };
        let pred = gen(0);
        let truth = gen(1);
        let cw = [below(20) as usize, below(60) as usize, 1 + below(10) as usize];
        let tw = [below(20) as usize, below(60) as usize, 1 + below(10) as usize];
        let line = json!({"candidate": chain_text(&pred, cw), "truth": chain_json(&truth, tw)});
        lines.push_str(&format!("{line}\n"));
        let (c, t) = (cw.iter().sum::<usize>() as f64, tw.iter().sum::<usize>() as f64);
        let r_len = 1.0 - (c - t).abs() / t;
        expected.push((literal(&pred, &truth), r_len));
    }
    let pairs = dir.path().join("pairs.jsonl");
    fs::write(&pairs, lines).unwrap();
    let o = run(&["score", s(&pairs), "--mode", "literal"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let got: Vec<Value> = String::from_utf8(o.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(got.len(), 1000);
    for (i, (g, (deg, len))) in got.iter().zip(&expected).enumerate() {
        let (gd, gl) = (g["r_deg"].as_f64().unwrap(), g["r_len"].as_f64().unwrap());
        assert!((gd - deg).abs() < 1e-9 && (gl - len).abs() < 1e-12, "line {i}: {g} vs {deg} {len}");
        assert!((g["total"].as_f64().unwrap() - (deg + len)).abs() < 1e-9);
    }
}

#[test]
fn score_with_separate_truth_file_and_bad_lines() {
    let dir = tempfile::tempdir().unwrap();
    let specs = [(2, 0.3), (4, 0.6)];
    let cands = dir.path().join("c.jsonl");
    let truths = dir.path().join("t.jsonl");
    let cand = Value::String(chain_text(&specs, [2, 2, 2]));
    fs::write(&cands, format!("{cand}\n{}\n{{oops\n", json!({"candidate": cand}))).unwrap();
    let t = chain_json(&specs, [2, 2, 2]);
    fs::write(&truths, format!("{t}\n{t}\n{t}\n")).unwrap();
    let o = run(&["score", s(&cands), "--truths", s(&truths), "--mode", "matched"]);
    assert_eq!(code(&o), 1);
    let lines: Vec<Value> = String::from_utf8(o.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    // Both specs pair with themselves: r_deg = 2, r_len = 1.
    assert_eq!(lines[0]["total"], 3.0);
    assert_eq!(lines[1]["total"], 3.0);
    assert_eq!(lines[2]["line"], 3);
    let summary: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!((summary["scored"].as_u64(), summary["errors"].as_u64()), (Some(2), Some(1)));

    fs::write(&truths, format!("{t}\n")).unwrap();
    assert_eq!(code(&run(&["score", s(&cands), "--truths", s(&truths)])), 2);
}

#[test]
fn advantage_inline_nested_and_file() {
    let o = run(&["advantage", "[1,2,3]"]);
    assert_eq!(code(&o), 0);
    let v: Vec<f64> = serde_json::from_slice(&o.stdout).unwrap();
    let z = (1.5f64).sqrt();
    assert!((v[0] + z).abs() < 1e-12 && v[1].abs() < 1e-12 && (v[2] - z).abs() < 1e-12, "{v:?}");

    let o = run(&["advantage", "[[4,4,4],[0,10]]"]);
    assert_eq!(stdout_json(&o), json!([[0.0, 0.0, 0.0], [-1.0, 1.0]]));

    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("r.json");
    fs::write(&f, "[2, 0]").unwrap();
    assert_eq!(stdout_json(&run(&["advantage", s(&f)])), json!([1.0, -1.0]));
    assert_eq!(code(&run(&["advantage", "[1]"])), 2);
    assert_eq!(code(&run(&["advantage", "[\"a\", 1]"])), 2);
}

#[test]
fn parse_canonical_and_malformed() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("c.txt");
    fs::write(&f, chain_text(&[(1, 0.25)], [1, 2, 3])).unwrap();
    let o = run(&["parse", s(&f)]);
    assert_eq!(code(&o), 0);
    let v = stdout_json(&o);
    assert_eq!(v["degradations"][0], json!({"type": "lens_blur", "intensity": 0.25}));
    assert_eq!(v["reasoning"], "word word");

    fs::write(&f, "<TYPE>blur??<TYPE_END><INFLUENCE>a<INFLUENCE_END><REASONING>b<REASONING_END><CONCLUSION>c<CONCLUSION_END>").unwrap();
    let o = run(&["parse", s(&f)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("MalformedTypeEntry"));
    let o = run(&["parse", s(&f), "--tolerant"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout_json(&o)["degradations"], json!([]));
}

fn write_sources(dir: &Path, n: u32) -> PathBuf {
    fs::create_dir_all(dir.join("img")).unwrap();
    let mut lines = String::new();
    for k in 0..n {
        image(k).save_png(&dir.join(format!("img/{k}.png"))).unwrap();
        let line = json!({"id": format!("s{k}"), "image_path": format!("img/{k}.png"), "question": "What is it?", "answer": format!("thing {k}")});
        lines.push_str(&format!("{line}\n"));
    }
    let p = dir.join("sources.jsonl");
    fs::write(&p, lines).unwrap();
    p
}

fn write_bench(dir: &Path, n: u32) -> PathBuf {
    fs::create_dir_all(dir.join("bench")).unwrap();
    let mut lines = String::new();
    for k in 0..n {
        image(k).save_png(&dir.join(format!("bench/{k}.png"))).unwrap();
        let line = if k % 2 == 0 {
            json!({"id": format!("b{k}"), "image_path": format!("bench/{k}.png"), "question": "Which?", "choices": ["yes", "no"], "answer": "no", "task": "MCQ"})
        } else {
            json!({"id": format!("b{k}"), "image_path": format!("bench/{k}.png"), "question": "What?", "answer": "a cat", "task": "VQA"})
        };
        lines.push_str(&format!("{line}\n"));
    }
    let p = dir.join("bench.jsonl");
    fs::write(&p, lines).unwrap();
    p
}

fn tree_hashes(root: &Path, dir: &Path) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(tree_hashes(root, &p));
        } else {
            out.push((p.strip_prefix(root).unwrap().display().to_string(), sha(&p)));
        }
    }
    out.sort();
    out
}

#[test]
fn build_writes_dataset_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_sources(dir.path(), 5);
    let mut hashes = Vec::new();
    for (name, workers) in [("a", "1"), ("b", "3")] {
        let out = dir.path().join(name);
        let o = run(&["--seed", "11", "--workers", workers, "build", s(&manifest), "-o", s(&out), "--records", "8"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let summary = stdout_json(&o);
        assert_eq!((summary["requested"].as_u64(), summary["succeeded"].as_u64()), (Some(8), Some(8)));
        let h = tree_hashes(&out, &out);
        assert!(h.iter().any(|(p, _)| p.ends_with(".jsonl")), "{h:?}");
        hashes.push(h);
    }
    assert_eq!(hashes[0], hashes[1]);
    assert_eq!(code(&run(&["build", s(&dir.path().join("none.jsonl")), "-o", s(&dir.path().join("c"))])), 2);
}

#[test]
fn eval_with_mock_model_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_bench(dir.path(), 6);
    let config = dir.path().join("config.json");
    fs::write(
        &config,
        r#"{"seed": 4, "eval": {"normalize_total": 1.0}, "model": {"kind": "threshold_mock", "threshold_mock": {"threshold": 0.6}}}"#,
    )
    .unwrap();
    let out = dir.path().join("report");
    let o = run(&["--config", s(&config), "eval", s(&manifest), "-o", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = String::from_utf8(o.stdout).unwrap();
    assert!(csv.starts_with("task,factor,accuracy,delta,type_misclass_rate,intensity_mae,mean_chain_len\n"));
    assert!(csv.contains("\nALL,1,0,1,"), "{csv}");
    for f in ["run.json", "report.json", "report.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert_eq!(fs::read_to_string(out.join("report.csv")).unwrap(), csv);

    let again = dir.path().join("again");
    let o = run(&["--config", s(&config), "--workers", "1", "eval", s(&manifest), "-o", s(&again)]);
    assert_eq!(code(&o), 0);
    for f in ["run.json", "report.json", "report.csv"] {
        assert_eq!(sha(&out.join(f)), sha(&again.join(f)), "{f}");
    }
}

fn sidecar_seed(args: &[&str], envs: &[(&str, &str)]) -> Value {
    let dir = tempfile::tempdir().unwrap();
    let input = write_image(dir.path());
    let out = dir.path().join("o.png");
    let mut c = bin();
    c.args(args).args(["degrade", "-i", s(&input), "-o", s(&out), "--type", "noise", "--intensity", "0.3"]);
    for (k, v) in envs {
        c.env(k, v);
    }
    let o = c.output().unwrap();
    if code(&o) != 0 {
        return json!({"exit": code(&o)});
    }
    let recipe: Value = serde_json::from_slice(&fs::read(dir.path().join("o.recipe.json")).unwrap()).unwrap();
    recipe["seed"].clone()
}

#[test]
fn config_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.json");
    fs::write(&config, r#"{"seed": 5}"#).unwrap();
    let cfg = s(&config);
    assert_eq!(sidecar_seed(&[], &[]), json!(0));
    assert_eq!(sidecar_seed(&["--config", cfg], &[]), json!(5));
    assert_eq!(sidecar_seed(&[], &[("ROBUSTLAB_CONFIG", cfg)]), json!(5));
    assert_eq!(sidecar_seed(&["--config", cfg], &[("ROBUSTLAB_SEED", "6")]), json!(6));
    assert_eq!(sidecar_seed(&["--config", cfg, "--seed", "7"], &[("ROBUSTLAB_SEED", "6")]), json!(7));
    assert_eq!(sidecar_seed(&[], &[("ROBUSTLAB_SEED", "six")]), json!({"exit": 2}));
    assert_eq!(sidecar_seed(&["--workers", "0"], &[]), json!({"exit": 2}));

    fs::write(&config, r#"{"seed": 5, "sede": 1}"#).unwrap();
    let o = run(&["--config", cfg, "advantage", "[1,2]"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("sede"));
    fs::write(&config, r#"{"parallelism": {"workers": 0}}"#).unwrap();
    assert_eq!(code(&run(&["--config", cfg, "advantage", "[1,2]"])), 2);
}

#[test]
fn help_and_version() {
    let o = run(&["--help"]);
    assert_eq!(code(&o), 0);
    let help = String::from_utf8(o.stdout).unwrap();
    for word in ["degrade", "score", "advantage", "build", "eval", "parse", "--config", "--seed", "--workers"] {
        assert!(help.contains(word), "{word}");
    }
    let o = run(&["--version"]);
    assert_eq!(String::from_utf8(o.stdout).unwrap().trim(), format!("robustlab {}", env!("CARGO_PKG_VERSION")));
    assert_eq!(code(&run(&["frobnicate"])), 2);
}
