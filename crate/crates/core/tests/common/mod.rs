#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use robustlab::RasterImage;

pub fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

pub fn fixture() -> RasterImage {
    RasterImage::load(&data("fixture64.png")).unwrap()
}

/// A 32x32 image whose colours depend on `k`, so sources differ.
pub fn varied_image(k: u32) -> RasterImage {
    let (w, h) = (32u32, 32u32);
    let mut data = Vec::with_capacity((w * h * 3) as usize);
    for y in 0..h {
        for x in 0..w {
            data.push(((x * 7 + k * 31) % 256) as u8);
            data.push(((y * 5 + k * 17) % 256) as u8);
            data.push((((x ^ y) * 3 + k * 13) % 256) as u8);
        }
    }
    RasterImage::new(w, h, data).unwrap()
}

/// Writes `n` source images plus a JSONL manifest with relative paths.
/// Every third source is multiple choice.
pub fn write_source_manifest(dir: &Path, n: u32) -> PathBuf {
    fs::create_dir_all(dir.join("img")).unwrap();
    let mut lines = String::new();
    for k in 0..n {
        varied_image(k).save_png(&dir.join(format!("img/s{k:02}.png"))).unwrap();
        let line = if k % 3 == 0 {
            serde_json::json!({
                "id": format!("s{k:02}"),
                "image_path": format!("img/s{k:02}.png"),
                "question": "Which colour dominates?",
                "answer": "red",
                "choices": ["red", "green", "blue"],
            })
        } else {
            serde_json::json!({
                "id": format!("s{k:02}"),
                "image_path": format!("img/s{k:02}.png"),
                "question": format!("What is object {k}?"),
                "answer": format!("object {k}"),
            })
        };
        lines.push_str(&line.to_string());
        lines.push('\n');
    }
    let path = dir.join("sources.jsonl");
    fs::write(&path, lines).unwrap();
    path
}

/// Writes `n` benchmark items (mixed tasks) with their images.
pub fn write_benchmark_manifest(dir: &Path, n: u32) -> PathBuf {
    fs::create_dir_all(dir.join("bench")).unwrap();
    let mut lines = String::new();
    for k in 0..n {
        varied_image(k).save_png(&dir.join(format!("bench/b{k:03}.png"))).unwrap();
        let line = match k % 3 {
            0 => serde_json::json!({
                "id": format!("b{k:03}"), "image_path": format!("bench/b{k:03}.png"),
                "question": "Which shape?", "choices": ["circle", "square", "triangle"],
                "answer": "square", "task": "MCQ",
            }),
            1 => serde_json::json!({
                "id": format!("b{k:03}"), "image_path": format!("bench/b{k:03}.png"),
                "question": "What is shown?", "answer": "a red bus", "task": "VQA",
            }),
            _ => serde_json::json!({
                "id": format!("b{k:03}"), "image_path": format!("bench/b{k:03}.png"),
                "question": "Describe the image.", "answer": "a quiet street", "task": "CAP",
            }),
        };
        lines.push_str(&line.to_string());
        lines.push('\n');
    }
    let path = dir.join("bench.jsonl");
    fs::write(&path, lines).unwrap();
    path
}

/// Kolmogorov-Smirnov statistic of `xs` against U[0, 1].
pub fn ks_uniform(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| ((i + 1) as f64 / n - x).max(x - i as f64 / n))
        .fold(0.0, f64::max)
}
